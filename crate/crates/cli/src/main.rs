use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitflow::verifier::{CheckKind, ResidualReport, FLOOR_FACTOR};

mod config;
mod suites;

use config::{CaseKind, ConfigError, ExperimentConfig, ModelKind, PerturbationKind, Suite};
use suites::{run_all, stem, write_output, RunSummary};

const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "splitflow", version, about = "Residual experiments for orthogonal splittings along Ricci flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the suites listed in a configuration file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identity residuals across a grid ladder.
    Identities(Overrides),
    /// Evolves one metric and exports the snapshot directory.
    Flow(Overrides),
    /// Exact evolution residuals along backward series, `dt` halved per level.
    Evolution(Overrides),
    /// Invariant ledger along a forward flow.
    Preservation {
        #[arg(long, value_enum)]
        case: Option<CaseKind>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Hypotheses and bounds of the backward uniqueness argument.
    BackwardConsistency(Overrides),
    /// Independent halving of `dt` and `h` for the evolution residuals.
    Convergence(Overrides),
    /// Merges report or summary JSON files and re-emits the tables.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "splitflow-out")]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct Overrides {
    /// Base configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    perturb: Option<PerturbationKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// `product` or `factor:K`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    order: Option<u32>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, suite: Suite, case: Option<CaseKind>) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let m = &mut cfg.model;
        m.kind = self.model.unwrap_or(m.kind);
        m.m = self.m.unwrap_or(m.m);
        m.perturbation = self.perturb.or(m.perturbation);
        m.epsilon = self.epsilon.unwrap_or(m.epsilon);
        if let Some(s) = self.split {
            m.split = s;
        }
        if let Some(l) = self.ladder {
            cfg.grid.ladder = l;
        }
        cfg.grid.order = self.order.unwrap_or(cfg.grid.order);
        cfg.flow.t_final = self.t_final.unwrap_or(cfg.flow.t_final);
        cfg.flow.dt = self.dt.unwrap_or(cfg.flow.dt);
        cfg.flow.stride = self.stride.unwrap_or(cfg.flow.stride);
        cfg.preservation.case = case.unwrap_or(cfg.preservation.case);
        cfg.run.seed = self.seed.unwrap_or(cfg.run.seed);
        if let Some(o) = self.out {
            cfg.run.output = o;
        }
        cfg.run.suites = vec![suite];
        cfg.validate().map_err(|(key, message)| ConfigError {
            source: key.map(|k| format!("--{}", k.replace('_', "-"))).unwrap_or_else(|| "arguments".into()),
            line: None,
            message,
        })?;
        Ok(cfg)
    }
}

fn fmt_sci(v: f64) -> String {
    format!("{v:.2e}")
}

/// One line per check, then the notes.
fn print_summary(reports: &[ResidualReport]) {
    for r in reports {
        println!("== {} [{}]", r.experiment, if r.passed { "PASS" } else { "FAIL" });
        for e in &r.entries {
            let last = e.levels.last();
            let sup = last.map(|l| fmt_sci(l.sup)).unwrap_or_default();
            let thr = last.map(|l| fmt_sci(FLOOR_FACTOR * l.floor)).unwrap_or_default();
            let rates: Vec<String> = e.rates.iter().map(|x| format!("{x:.1}")).collect();
            let status = match (e.kind, e.passed) {
                (CheckKind::Info, _) => "info",
                (_, true) => "ok",
                (_, false) => "FAIL",
            };
            println!("  {:<28} {:<9} sup {:>9}  thr {:>9}  rates [{}]  {status}", e.name, format!("{:?}", e.kind), sup, thr, rates.join(", "));
        }
        for n in &r.notes {
            println!("  note: {n}");
        }
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    println!("{passed}/{} experiments passed", reports.len());
}

fn write_summary(summary: &RunSummary, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), summary.to_json())
}

fn run(cfg: ExperimentConfig) -> u8 {
    let dir = cfg.run.output.clone();
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return EXIT_USAGE;
    }
    let mut reports = vec![];
    let mut errored = false;
    for (suite, res) in run_all(&cfg) {
        match res {
            Ok(o) => {
                if let Err(e) = write_output(&cfg, suite, &o, &dir) {
                    eprintln!("error: writing {}: {e}", stem(&cfg, suite));
                    return EXIT_USAGE;
                }
                reports.push(o.report);
            }
            Err(e) => {
                eprintln!("error: suite {} failed to run: {e}", suite.name());
                errored = true;
            }
        }
    }
    let summary = RunSummary::new(cfg.run.seed, reports);
    if let Err(e) = write_summary(&summary, &dir) {
        eprintln!("error: writing summary: {e}");
        return EXIT_USAGE;
    }
    print_summary(&summary.reports);
    if summary.passed && !errored {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Accepts either a single report or a run summary.
fn read_reports(path: &Path) -> Result<Vec<ResidualReport>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Ok(s) = serde_json::from_str::<RunSummary>(&text) {
        return Ok(s.reports);
    }
    serde_json::from_str::<ResidualReport>(&text).map(|r| vec![r]).map_err(|e| format!("{}:{}: {e}", path.display(), e.line()))
}

fn report(inputs: &[PathBuf], out: &Path) -> u8 {
    let mut reports = vec![];
    for p in inputs {
        match read_reports(p) {
            Ok(r) => reports.extend(r),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
    }
    let write = || -> splitflow::Result<()> {
        for (j, r) in reports.iter().enumerate() {
            r.write(out, &format!("{j:02}-{}", r.experiment.replace(':', "-")))?;
        }
        write_summary(&RunSummary::new(0, reports.clone()), out)?;
        Ok(())
    };
    if let Err(e) = write() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    print_summary(&reports);
    if reports.iter().all(|r| r.passed) {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.command {
        Command::Run { config, out } => ExperimentConfig::load(&config).map(|mut c| {
            if let Some(o) = out {
                c.run.output = o;
            }
            c
        }),
        Command::Identities(o) => o.apply(Suite::Identities, None),
        Command::Flow(o) => o.apply(Suite::Flow, None),
        Command::Evolution(o) => o.apply(Suite::Evolution, None),
        Command::Preservation { case, o } => o.apply(Suite::Preservation, case),
        Command::BackwardConsistency(o) => o.apply(Suite::BackwardConsistency, None),
        Command::Convergence(o) => o.apply(Suite::Convergence, None),
        Command::Report { inputs, out } => return ExitCode::from(report(&inputs, &out)),
    };
    match cfg {
        Ok(c) => ExitCode::from(run(c)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
