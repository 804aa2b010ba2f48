use splitflow::models::{Perturbation, WarpedModelSpec};
use splitflow::verifier::*;

fn perturbed(mode: Perturbation) -> ResidualReport {
    let mut plan = IdentityPlan::new(WarpedModelSpec::standard_warped(2), vec![12, 24], vec![(mode, 0.05)]);
    plan.split = SplitChoice::Product;
    run_identity_suite(&plan).unwrap()
}

#[test]
fn every_ledger_check_has_a_firing_perturbation() {
    let reports: Vec<_> = [Perturbation::OffBlock, Perturbation::Warp, Perturbation::FiberShape].into_iter().map(perturbed).collect();
    for (name, _) in LEDGER {
        let fired = reports.iter().any(|r| {
            let e = r.entry(name).unwrap();
            e.kind == CheckKind::Detector && e.passed && e.levels.iter().all(|l| l.sup > FLOOR_FACTOR * l.floor)
        });
        assert!(fired, "{name} is never driven above threshold");
    }
}

#[test]
fn unperturbed_ledger_is_not_a_detector() {
    let plan = IdentityPlan::new(WarpedModelSpec::standard_warped(2), vec![12, 24], vec![]);
    let r = run_identity_suite(&plan).unwrap();
    for (name, _) in LEDGER {
        let e = r.entry(name).unwrap();
        assert_eq!(e.kind, CheckKind::Vanishing, "{name}");
        assert!(e.passed, "{name}: {:?}", e.levels.iter().map(|l| l.sup).collect::<Vec<_>>());
    }
}
