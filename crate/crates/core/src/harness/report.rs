use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::run::{ExperimentReport, RoundRecord};
use super::HarnessError;
use crate::config::ConfigDocument;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Header line, one line per round, then a summary line.
pub fn report_to_jsonl(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let header = json!({
        "kind": "header",
        "scenario": to_value(&report.scenario),
        "target_accuracy": report.target_accuracy,
        "initial_accuracy": report.initial_accuracy,
        "fixed_best": to_value(&report.fixed_best),
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for r in &report.rounds {
        let mut v = to_value(r);
        v["kind"] = json!("round");
        out.push_str(&v.to_string());
        out.push('\n');
    }
    let summary = json!({
        "kind": "summary",
        "convergence_round": report.convergence_round,
        "convergence_time": report.convergence_time,
        "total_energy_to_convergence": report.total_energy_to_convergence,
        "total_energy": report.total_energy,
        "ppw": report.ppw,
        "final_accuracy": report.final_accuracy,
        "table_converged_round": report.table_converged_round,
        "qtable_bytes": report.qtable_bytes,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

/// Inverse of [`report_to_jsonl`]; host-dependent fields come back empty.
pub fn read_report_jsonl(text: &str) -> Result<ExperimentReport, HarnessError> {
    let bad = |m: String| HarnessError::Report(m);
    let mut header = None;
    let mut summary = None;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let mut v: Value =
            serde_json::from_str(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        let kind = v
            .get("kind")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        match kind.as_str() {
            "header" => header = Some(v),
            "summary" => summary = Some(v),
            "round" => {
                v.as_object_mut().map(|o| o.remove("kind"));
                rounds.push(
                    serde_json::from_value(v).map_err(|e| bad(format!("line {}: {e}", i + 1)))?,
                );
            }
            other => {
                return Err(bad(format!(
                    "line {}: unknown record kind `{other}`",
                    i + 1
                )))
            }
        }
    }
    let header = header.ok_or_else(|| bad("missing header line".into()))?;
    let summary = summary.ok_or_else(|| bad("missing summary line".into()))?;
    let field = |v: &Value, k: &str| -> Result<Value, HarnessError> {
        v.get(k)
            .cloned()
            .ok_or_else(|| bad(format!("missing field `{k}`")))
    };
    Ok(ExperimentReport {
        scenario: parse(field(&header, "scenario")?, "scenario")?,
        target_accuracy: parse(field(&header, "target_accuracy")?, "target_accuracy")?,
        initial_accuracy: parse(field(&header, "initial_accuracy")?, "initial_accuracy")?,
        fixed_best: parse(
            header.get("fixed_best").cloned().unwrap_or(Value::Null),
            "fixed_best",
        )?,
        rounds,
        convergence_round: parse(field(&summary, "convergence_round")?, "convergence_round")?,
        convergence_time: parse(field(&summary, "convergence_time")?, "convergence_time")?,
        total_energy_to_convergence: parse(
            field(&summary, "total_energy_to_convergence")?,
            "total_energy_to_convergence",
        )?,
        total_energy: parse(field(&summary, "total_energy")?, "total_energy")?,
        ppw: parse(field(&summary, "ppw")?, "ppw")?,
        final_accuracy: parse(field(&summary, "final_accuracy")?, "final_accuracy")?,
        table_converged_round: parse(
            summary
                .get("table_converged_round")
                .cloned()
                .unwrap_or(Value::Null),
            "table_converged_round",
        )?,
        qtable_bytes: parse(
            summary.get("qtable_bytes").cloned().unwrap_or(Value::Null),
            "qtable_bytes",
        )?,
        controller_overhead: Vec::new(),
        tables: None,
    })
}

fn parse<T: serde::de::DeserializeOwned>(v: Value, k: &str) -> Result<T, HarnessError> {
    serde_json::from_value(v).map_err(|e| HarnessError::Report(format!("field `{k}`: {e}")))
}

pub fn rounds_to_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from(
        "round,t_round,e_global,accuracy,loss,k,b_mean,e_mean,b_min,b_max,e_min,e_max\n",
    );
    for r in rounds {
        let bs: Vec<u32> = r.actions().map(|(_, b, _)| b).collect();
        let es: Vec<u32> = r.actions().map(|(_, _, e)| e).collect();
        let lo_hi = |v: &[u32]| match (v.iter().min(), v.iter().max()) {
            (Some(a), Some(b)) => (a.to_string(), b.to_string()),
            _ => (String::new(), String::new()),
        };
        let (b_min, b_max) = lo_hi(&bs);
        let (e_min, e_max) = lo_hi(&es);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.t_round,
            r.e_global,
            r.accuracy,
            r.train_loss,
            r.k,
            r.mean_b(),
            r.mean_e(),
            b_min,
            b_max,
            e_min,
            e_max
        ));
    }
    out
}

/// Paths produced by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub report: PathBuf,
    pub rounds: PathBuf,
    pub config: PathBuf,
    pub overhead: PathBuf,
    pub tables: Option<PathBuf>,
}

/// Writes `report.jsonl`, `rounds.csv` and `resolved_config.toml` (a full
/// config document that reproduces the report), plus `overhead.csv` with wall-clock timings
/// and `qtables.txt` when the run kept controller tables.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<OutputFiles, HarnessError> {
    let files = OutputFiles {
        report: dir.join("report.jsonl"),
        rounds: dir.join("rounds.csv"),
        config: dir.join("resolved_config.toml"),
        overhead: dir.join("overhead.csv"),
        tables: report.tables.as_ref().map(|_| dir.join("qtables.txt")),
    };
    write_atomic(&files.report, report_to_jsonl(report).as_bytes())?;
    write_atomic(&files.rounds, rounds_to_csv(&report.rounds).as_bytes())?;
    let doc = ConfigDocument::from_scenario(&report.scenario);
    write_atomic(&files.config, doc.to_toml().as_bytes())?;
    let mut overhead = String::from("step,seconds\n");
    for (i, s) in report.controller_overhead.iter().enumerate() {
        overhead.push_str(&format!("{i},{s}\n"));
    }
    write_atomic(&files.overhead, overhead.as_bytes())?;
    if let (Some(path), Some(t)) = (&files.tables, &report.tables) {
        write_atomic(path, t.to_text().as_bytes())?;
    }
    Ok(files)
}
