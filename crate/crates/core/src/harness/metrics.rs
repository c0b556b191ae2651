use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, HarnessError};

/// First 1-based round at which accuracy is within `delta` of the target and
/// the relative loss change between consecutive rounds inside the trailing
/// `window` rounds stays below `loss_tol`.
pub fn detect_convergence(
    accuracy: &[f64],
    loss: &[f64],
    target_accuracy: f64,
    delta: f64,
    window: usize,
    loss_tol: f64,
) -> Option<usize> {
    let n = accuracy.len().min(loss.len());
    let window = window.max(1);
    (window..=n).find(|&r| {
        if accuracy[r - 1] < target_accuracy - delta {
            return false;
        }
        let tail = &loss[r - window..r];
        tail.windows(2).all(|w| {
            let base = w[0].abs().max(f64::MIN_POSITIVE);
            (w[1] - w[0]).abs() / base < loss_tol
        })
    })
}

/// Reciprocal of total fleet energy (joules) up to convergence.
pub fn compute_ppw(report: &ExperimentReport) -> Result<f64, HarnessError> {
    match report.total_energy_to_convergence {
        Some(e) if e > 0.0 => Ok(1.0 / e),
        _ => Err(HarnessError::NotConverged),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub ppw: Option<f64>,
    /// PPW divided by the anchor's PPW.
    pub ppw_ratio: Option<f64>,
    /// Simulated seconds to convergence.
    pub convergence_time: Option<f64>,
    /// Anchor convergence time divided by this strategy's.
    pub speedup: Option<f64>,
    pub final_accuracy: f64,
    pub accuracy_ratio: f64,
    pub convergence_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub anchor: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, strategy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from(
            "strategy,ppw,ppw_ratio,convergence_time,speedup,final_accuracy,accuracy_ratio,convergence_round\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.strategy,
                opt(r.ppw),
                opt(r.ppw_ratio),
                opt(r.convergence_time),
                opt(r.speedup),
                r.final_accuracy,
                r.accuracy_ratio,
                r.convergence_round.map_or(String::new(), |c| c.to_string()),
            ));
        }
        out
    }
}

/// Normalizes every report to `anchor`. All reports must share the scenario
/// apart from the strategy section.
pub fn compare(
    reports: &BTreeMap<String, ExperimentReport>,
    anchor: &str,
) -> Result<ComparisonTable, HarnessError> {
    let base = reports.get(anchor).ok_or_else(|| {
        HarnessError::ScenarioMismatch(format!("anchor strategy `{anchor}` has no report"))
    })?;
    let shared = base.scenario.shared_part();
    for (name, r) in reports {
        if r.scenario.shared_part() != shared {
            return Err(HarnessError::ScenarioMismatch(format!(
                "report `{name}` was produced on a different scenario than `{anchor}`"
            )));
        }
    }
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let rows = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            strategy: name.clone(),
            ppw: r.ppw,
            ppw_ratio: ratio(r.ppw, base.ppw),
            convergence_time: r.convergence_time,
            speedup: ratio(base.convergence_time, r.convergence_time),
            final_accuracy: r.final_accuracy,
            accuracy_ratio: if base.final_accuracy > 0.0 {
                r.final_accuracy / base.final_accuracy
            } else {
                1.0
            },
            convergence_round: r.convergence_round,
        })
        .collect();
    Ok(ComparisonTable {
        anchor: anchor.to_string(),
        rows,
    })
}
