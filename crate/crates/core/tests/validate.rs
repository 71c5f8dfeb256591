use flexagg::devices::FleetAdjustment;
use flexagg::drcc::{Feeder, FeederState};
use flexagg::ingest::{snapshot_at, FleetFile, PvErrors, SnapshotOptions};
use flexagg::region::{estimate_region, FlexPolygon};
use flexagg::synth;
use flexagg::uncertainty::{DayType, RiskConfig};
use flexagg::validate::monte_carlo_check;

fn state(fleet: &FleetFile, time: &str, pv_errors: PvErrors, load_std_frac: f64) -> FeederState {
    let net = synth::feeder_25();
    let prof = synth::profiles(&net, fleet, DayType::Cloudy, 900.0, 1);
    let opts = SnapshotOptions {
        pv_errors,
        load_std_frac,
        ..SnapshotOptions::default()
    };
    let snap = snapshot_at(&net, fleet, &prof, prof.row_of(time).unwrap(), &opts).unwrap();
    FeederState::build(Feeder::new(net).unwrap(), snap, RiskConfig::default()).unwrap()
}

fn noisy(time: &str) -> (FeederState, FlexPolygon) {
    let table = synth::reference_table();
    let st = state(&synth::fleet_25(), time, PvErrors::Table(&table, DayType::Cloudy), 0.01);
    let poly = estimate_region(&st, 16, 1).unwrap();
    (st, poly)
}

/// Vertex with the most binding voltage rows.
fn voltage_bound(poly: &FlexPolygon) -> &FleetAdjustment {
    poly.vertex_info
        .iter()
        .max_by_key(|v| v.binding.iter().filter(|b| b.starts_with("vmax:") || b.starts_with("vmin:")).count())
        .and_then(|v| v.decision.as_ref())
        .unwrap()
}

#[test]
fn same_seed_same_report() {
    let (st, poly) = noisy("12:00");
    let adj = poly.vertex_info[3].decision.as_ref().unwrap();
    let a = monte_carlo_check(&st, adj, 300, 9, 1).unwrap();
    let b = monte_carlo_check(&st, adj, 300, 9, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn certain_inputs_never_violate_at_vertices() {
    let st = state(&synth::fleet_25(), "12:00", PvErrors::None, 0.0);
    let poly = estimate_region(&st, 16, 1).unwrap();
    for v in &poly.vertex_info {
        let r = monte_carlo_check(&st, v.decision.as_ref().unwrap(), 20, 1, 1).unwrap();
        assert_eq!(r.max_voltage_rate, 0.0);
        assert_eq!(r.max_current_rate, 0.0);
        assert_eq!(r.max_pv_rate, 0.0);
        assert_eq!(r.nonconvergence, 0);
    }
}

#[test]
fn vertices_meet_the_voltage_risk() {
    let (st, poly) = noisy("19:00");
    for v in &poly.vertex_info {
        let r = monte_carlo_check(&st, v.decision.as_ref().unwrap(), 1000, 2, 1).unwrap();
        assert!(r.max_voltage_rate <= 0.05, "{:?}: {}", v.direction, r.max_voltage_rate);
        assert!(r.max_current_rate <= 0.05);
    }
}

#[test]
fn overscaled_decision_violates() {
    let (st, poly) = noisy("19:00");
    let adj = voltage_bound(&poly).scaled(1.5);
    let r = monte_carlo_check(&st, &adj, 500, 3, 1).unwrap();
    assert!(r.max_voltage_rate > 0.5, "{}", r.max_voltage_rate);
}

#[test]
fn disjoint_seeds_agree_on_rates() {
    let (st, poly) = noisy("19:00");
    let adj = voltage_bound(&poly).scaled(1.05);
    let a = monte_carlo_check(&st, &adj, 2000, 10, 1).unwrap();
    let b = monte_carlo_check(&st, &adj, 2000, 11, 1).unwrap();
    // binomial standard error at p = 0.5 and n = 2000 is about 0.011
    assert!((a.max_voltage_rate - b.max_voltage_rate).abs() < 0.05);
}

#[test]
fn loss_audit_at_peak() {
    let (st, poly) = noisy("19:00");
    let base = monte_carlo_check(&st, &FleetAdjustment::zeros(&st.fleet), 500, 4, 1).unwrap();
    assert!(base.head_p_error.mean_abs < 0.01 * base.head_p_error.base_load);
    let mut mean = 0.0;
    for v in &poly.vertex_info {
        let r = monte_carlo_check(&st, v.decision.as_ref().unwrap(), 200, 4, 1).unwrap();
        mean += r.head_p_error.mean_abs / r.head_p_error.base_load;
    }
    mean /= poly.vertex_info.len() as f64;
    assert!(mean < 0.01, "{mean}");
}
