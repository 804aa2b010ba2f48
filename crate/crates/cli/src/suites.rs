use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use splitflow::flow::{evolve_splitting, export_series, ricci_flow_evolve, to_backward_series, FlowConfig, FlowSeries};
use splitflow::models::{Perturbation, WarpedModelSpec};
use splitflow::verifier::*;
use splitflow::{Order, Result};

use crate::config::{CaseKind, ExperimentConfig, ModelKind, PerturbationKind, Suite};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Everything one invocation produced, in suite order.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub reports: Vec<ResidualReport>,
    pub passed: bool,
}

impl RunSummary {
    pub fn new(seed: u64, reports: Vec<ResidualReport>) -> Self {
        let passed = reports.iter().all(|r| r.passed);
        RunSummary { schema_version: SUMMARY_SCHEMA_VERSION, seed, reports, passed }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn order(cfg: &ExperimentConfig) -> Order {
    if cfg.grid.order == 2 {
        Order::Second
    } else {
        Order::Fourth
    }
}

fn spec(cfg: &ExperimentConfig) -> WarpedModelSpec {
    match cfg.model.kind {
        ModelKind::FlatCone => cone_spec(),
        ModelKind::Warped => WarpedModelSpec::standard_warped(cfg.model.m),
        ModelKind::DoublyWarped => WarpedModelSpec::doubly_warped(cfg.model.m, cfg.model.m2),
        ModelKind::Product => WarpedModelSpec::product(cfg.model.m),
    }
}

fn perturbations(cfg: &ExperimentConfig) -> Vec<(Perturbation, f64)> {
    let mode = match cfg.model.perturbation {
        None => return vec![],
        Some(PerturbationKind::Warp) => Perturbation::Warp,
        Some(PerturbationKind::FiberShape) => Perturbation::FiberShape,
        Some(PerturbationKind::OffBlock) => Perturbation::OffBlock,
    };
    vec![(mode, cfg.model.epsilon)]
}

pub fn identity_plan(cfg: &ExperimentConfig) -> IdentityPlan {
    let ladder = cfg.grid.ladder.clone();
    let mut plan = match cfg.model.kind {
        ModelKind::FlatCone => {
            let mut p = IdentityPlan::cone(ladder);
            p.perturbations = perturbations(cfg);
            p
        }
        _ => IdentityPlan::new(spec(cfg), ladder, perturbations(cfg)),
    };
    if let Some(f) = cfg.grid.fiber_points {
        let follows = plan.fiber_points.first().is_some_and(|p| p.is_none());
        for (k, p) in plan.fiber_points.iter_mut().enumerate() {
            if !(k == 0 && follows) {
                *p = Some(f);
            }
        }
    }
    plan.split = cfg.split().expect("validated split");
    plan.order = order(cfg);
    plan.commutators = cfg.grid.commutators;
    plan.seed = cfg.run.seed;
    plan
}

/// One backward series per ladder level, `Δτ` halved with each level.
fn ladder_series(cfg: &ExperimentConfig) -> Result<Vec<FlowSeries<f64>>> {
    let plan = identity_plan(cfg);
    let mut dt = cfg.flow.dt;
    let mut out = vec![];
    for &n in &cfg.grid.ladder {
        out.push(backward_series(&plan.metric(n)?, plan.split, cfg.flow.t_final, dt, cfg.flow.stride)?);
        dt /= 2.0;
    }
    Ok(out)
}

/// A suite's report plus the series to export, if any.
pub struct SuiteOutput {
    pub report: ResidualReport,
    pub series: Option<FlowSeries<f64>>,
}

fn flow_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let plan = identity_plan(cfg);
    let n = cfg.grid.ladder[0];
    let g = plan.metric(n)?;
    let fc = FlowConfig { t_final: cfg.flow.t_final, dt: Some(cfg.flow.dt), stride: Some(cfg.flow.stride), order: order(cfg), ..FlowConfig::default() };
    let mut series = ricci_flow_evolve(&g, &fc)?;
    if cfg.flow.backward {
        series = to_backward_series(&series, None)?;
        let v0 = plan.split.build(&series.metrics[0])?;
        evolve_splitting(&mut series, &v0, 1e-8)?;
    }
    let grid = GridParams { ladder: vec![n], fiber_points: plan.fiber_points.clone(), order: order(cfg).value(), dt: vec![series.dt] };
    let mut rep = ResidualReport::new("flow", spec(cfg).digest(), grid);
    rep.note(format!("{} snapshots exported to flow/", series.len()));
    rep.passed = series.truncated.is_none();
    if let Some(t) = &series.truncated {
        rep.note(format!("flow truncated: {t}"));
    }
    Ok(SuiteOutput { report: rep, series: Some(series) })
}

fn preservation_suite(cfg: &ExperimentConfig) -> Result<ResidualReport> {
    let case = match cfg.preservation.case {
        CaseKind::Einstein => PreservationCase::Einstein,
        CaseKind::NonEinstein => PreservationCase::NonEinstein,
        CaseKind::MultiplyWarped => PreservationCase::MultiplyWarped,
    };
    let mut plan = PreservationPlan::new(case);
    plan.points = cfg.preservation.points;
    plan.t_final = cfg.flow.t_final;
    plan.order = order(cfg);
    preservation_experiment(&plan)
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutput> {
    let digest = spec(cfg).digest();
    let report = match suite {
        Suite::Identities => run_identity_suite(&identity_plan(cfg)),
        Suite::Flow => return flow_suite(cfg),
        Suite::Evolution => run_evolution_suite(&ladder_series(cfg)?, &digest),
        Suite::Preservation => preservation_suite(cfg),
        Suite::BackwardConsistency => backward_uniqueness_consistency(&ladder_series(cfg)?, &digest),
        Suite::Convergence => evolution_convergence(&ConvergencePlan {
            spec: spec(cfg),
            perturbations: perturbations(cfg),
            split: cfg.split().expect("validated split"),
            points: cfg.grid.ladder[0],
            dt: cfg.flow.dt,
            t_final: cfg.flow.t_final,
            order: order(cfg),
        }),
    }?;
    Ok(SuiteOutput { report, series: None })
}

/// Writes a suite's report files, and its snapshots under `flow/`.
pub fn write_output(cfg: &ExperimentConfig, suite: Suite, o: &SuiteOutput, dir: &Path) -> Result<()> {
    o.report.write(dir, &stem(cfg, suite))?;
    if let Some(s) = &o.series {
        export_series(s, &dir.join("flow"))?;
    }
    Ok(())
}

/// File stem for a suite's report.
pub fn stem(cfg: &ExperimentConfig, suite: Suite) -> String {
    match suite {
        Suite::Preservation => format!("preservation-{}", serde_json::to_value(cfg.preservation.case).unwrap().as_str().unwrap()),
        s => s.name().to_string(),
    }
}

/// Runs the selected suites in parallel and returns the outputs in configuration order.
pub fn run_all(cfg: &ExperimentConfig) -> Vec<(Suite, Result<SuiteOutput>)> {
    thread::scope(|sc| {
        let handles: Vec<_> = cfg.run.suites.iter().map(|&s| (s, sc.spawn(move || run_suite(cfg, s)))).collect();
        handles.into_iter().map(|(s, h)| (s, h.join().expect("suite thread panicked"))).collect()
    })
}
