//! `flsim`: run experiments, grid searches and strategy comparisons from a
//! TOML config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flsim_core::baselines::{fixed_best_sweep_with, BaselineError, PointSummary, SweepResult};
use flsim_core::config::ConfigDocument;
use flsim_core::harness::{
    compare, run_experiment, run_strategies, write_atomic, write_outputs, Scenario, StrategyName,
    StrategySpec,
};
use flsim_core::GlobalParams;

#[derive(Parser)]
#[command(name = "flsim", version, about = "Seeded federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report files.
    Run(Common),
    /// Grid-search fixed (B, E, K) tuples; re-running skips finished points.
    Sweep(Common),
    /// Run several strategies on one scenario and tabulate them.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `scenario.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `strategy.name`.
    #[arg(long, value_name = "NAME")]
    strategy: Option<StrategyName>,
    #[arg(long, value_name = "N")]
    max_rounds: Option<u32>,
}

impl Common {
    fn load(&self) -> Result<ConfigDocument> {
        let text = fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut doc = ConfigDocument::from_toml(&text)
            .with_context(|| format!("in {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            doc.scenario.seed = seed;
        }
        if let Some(out) = &self.out {
            doc.output.dir = out.clone();
        }
        if let Some(name) = self.strategy {
            doc.strategy.name = name;
        }
        if let Some(n) = self.max_rounds {
            doc.scenario.max_rounds = n;
        }
        Ok(doc)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Compare(c) => cmd_compare(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(c: &Common) -> Result<()> {
    let doc = c.load()?;
    let scenario = doc.validated_scenario()?;
    let report = run_experiment(&scenario)?;
    let files = write_outputs(&report, &doc.output.dir)?;
    match report.convergence_round {
        Some(r) => println!(
            "converged at round {r}, energy {:.3} J, final accuracy {:.2}%",
            report.total_energy_to_convergence.unwrap_or_default(),
            report.final_accuracy
        ),
        None => println!(
            "no convergence in {} rounds, final accuracy {:.2}%",
            report.rounds.len(),
            report.final_accuracy
        ),
    }
    println!("report: {}", files.report.display());
    Ok(())
}

fn point_file(dir: &Path, p: &GlobalParams) -> PathBuf {
    dir.join(format!("b{}_e{}_k{}.json", p.b, p.e, p.k))
}

fn load_points(dir: &Path) -> Result<BTreeMap<GlobalParams, PointSummary>> {
    let mut done = BTreeMap::new();
    if !dir.exists() {
        return Ok(done);
    }
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path)?;
            let p: PointSummary = serde_json::from_str(&text)
                .with_context(|| format!("corrupt point summary {}", path.display()))?;
            done.insert(p.params, p);
        }
    }
    Ok(done)
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(
        "b,e,k,convergence_round,total_energy,ppw,final_accuracy,first_round_energy\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for p in &result.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.params.b,
            p.params.e,
            p.params.k,
            p.convergence_round.map_or(String::new(), |r| r.to_string()),
            p.total_energy,
            opt(p.ppw),
            p.final_accuracy,
            p.first_round_energy
        ));
    }
    out
}

fn cmd_sweep(c: &Common) -> Result<()> {
    let doc = c.load()?;
    let Some(sweep) = doc.sweep.clone() else {
        bail!("config has no [sweep] section");
    };
    let mut scenario = doc.scenario();
    scenario.strategy.name = StrategyName::FixedBest;
    scenario.strategy.lattice = sweep.lattice.clone();
    scenario.validate()?;
    let budget = sweep.budget_rounds.unwrap_or(scenario.max_rounds);
    let dir = doc.output.dir.join("points");
    let done = load_points(&dir)?;
    let sink = |p: &PointSummary| -> Result<(), BaselineError> {
        let text =
            serde_json::to_string_pretty(p).map_err(|e| BaselineError::Sink(e.to_string()))?;
        write_atomic(&point_file(&dir, &p.params), text.as_bytes())
            .map_err(|e| BaselineError::Sink(e.to_string()))
    };
    let reused = done.len();
    let result = fixed_best_sweep_with(&scenario, budget, sweep.lattice.as_deref(), &done, &sink)?;
    write_atomic(
        &doc.output.dir.join("sweep.json"),
        serde_json::to_string_pretty(&result)?.as_bytes(),
    )?;
    write_atomic(
        &doc.output.dir.join("sweep.csv"),
        sweep_csv(&result).as_bytes(),
    )?;
    let w = result.winner;
    println!(
        "{} points ({} reused), winner B={} E={} K={}",
        result.points.len(),
        reused.min(result.points.len()),
        w.b,
        w.e,
        w.k
    );
    Ok(())
}

fn cmd_compare(c: &Common) -> Result<()> {
    let doc = c.load()?;
    let Some(cmp) = doc.compare.clone() else {
        bail!("config has no [compare] section");
    };
    if cmp.strategies.len() < 2 {
        bail!("compare.strategies: list at least two strategies");
    }
    if !cmp.strategies.contains(&cmp.anchor) {
        bail!(
            "compare.anchor: `{}` is not in compare.strategies",
            cmp.anchor
        );
    }
    let scenario: Scenario = doc.scenario();
    let specs = cmp
        .strategies
        .iter()
        .map(|&name| {
            let mut st = StrategySpec {
                name,
                ..doc.strategy.clone()
            };
            if name == StrategyName::Fixed {
                let p = cmp
                    .fixed
                    .context("compare.fixed: required when `fixed` is compared")?;
                st.b = Some(p.b);
                st.e = Some(p.e);
                st.k = Some(p.k);
            }
            Ok(st)
        })
        .collect::<Result<Vec<_>>>()?;
    for st in &specs {
        Scenario {
            strategy: st.clone(),
            ..scenario.clone()
        }
        .validate()?;
    }
    let reports = run_strategies(&scenario, &specs)?;
    for (name, r) in &reports {
        write_outputs(r, &doc.output.dir.join(name))?;
    }
    let table = compare(&reports, cmp.anchor.label())?;
    write_atomic(
        &doc.output.dir.join("comparison.csv"),
        table.to_csv().as_bytes(),
    )?;
    write_atomic(
        &doc.output.dir.join("comparison.json"),
        serde_json::to_string_pretty(&table)?.as_bytes(),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}
