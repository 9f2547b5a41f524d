use graphflow_core::gfl;
use graphflow_core::pilot::{self, ClinicProfile, PilotConfig, PilotError};
use graphflow_core::store::EventStore;

const PATHWAY: &str = include_str!("../../../corpus/cognitive_testing.gfl");

fn quota(name: &str, enrolled: usize, failures: usize) -> ClinicProfile {
    ClinicProfile { name: name.into(), enrolled, failures: Some(failures), failure_probability: None, active_months: 12, data_integrity_share: 0.0 }
}

fn run(cfg: &PilotConfig) -> pilot::Simulation {
    pilot::simulate(cfg, &gfl::parse_str(PATHWAY).unwrap()).unwrap()
}

#[test]
fn quota_mode_reproduces_the_table() {
    let cfg = PilotConfig::new(vec![quota("alpha", 6987, 73), quota("beta", 102, 0), quota("gamma", 1639, 182)]);
    let sim = run(&cfg);
    let r = &sim.report;
    let rows: Vec<(&str, usize, usize, &str)> = r.clinics.iter().map(|c| (c.name.as_str(), c.completed, c.errored, c.success_rate.as_str())).collect();
    assert_eq!(rows, vec![("alpha", 6914, 73, "98.96"), ("beta", 102, 0, "100.00"), ("gamma", 1457, 182, "88.90")]);
    assert_eq!((r.total.completed, r.total.errored, r.total.success_rate.as_str()), (8473, 255, "97.08"));
    assert_eq!(r.total.open, 0);
    assert_eq!(r.non_boundary_errors, 0);
    assert_eq!(r.failure_reasons.get(pilot::AUTHORIZATION), Some(&255));

    // Recomputed from nothing but the stores.
    let logs: Vec<(&str, &dyn EventStore)> = sim.clinics.iter().map(|c| (c.profile.name.as_str(), &*c.workspace.store as &dyn EventStore)).collect();
    assert_eq!(&pilot::report_from_logs(&logs).unwrap(), r);
}

#[test]
fn probability_mode_is_near_expectation() {
    let mut c = quota("all", 8728, 0);
    c.failures = None;
    c.failure_probability = Some(0.0292);
    let mut cfg = PilotConfig::new(vec![c]);
    cfg.seed = 2025;
    let r = run(&cfg).report;
    let errored = r.total.errored as i64;
    // 3 sigma of Binomial(8728, 0.0292) is about 47.
    assert!((errored - 255).abs() <= 47, "errored {errored}");
    assert_eq!(r.total.completed + r.total.errored, 8728);
    // frozen for this seed
    assert_eq!(errored, 250);
}

#[test]
fn clean_clinic_is_perfect() {
    let r = run(&PilotConfig::new(vec![quota("solo", 40, 0)])).report;
    assert_eq!(r.total.success_rate, "100.00");
    assert_eq!(r.total.completed, 40);
}

#[test]
fn quota_over_enrollment_is_a_config_error() {
    let cfg = PilotConfig::new(vec![quota("bad", 3, 4)]);
    assert!(matches!(pilot::simulate(&cfg, &gfl::parse_str(PATHWAY).unwrap()), Err(PilotError::Config(_))));
}
