use flexagg::drcc::{Feeder, FeederState};
use flexagg::ingest::{snapshot_at, SnapshotOptions};
use flexagg::netmodel::{build_admittance_pu, validate_network, DiagnosticKind, NetworkModel};
use flexagg::powerflow::{linearize, magnitude_affine, predict_current, predict_voltage, InjectionVector, PowerFlowSystem};
use flexagg::synth;
use flexagg::uncertainty::{DayType, RiskConfig};
use nalgebra::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noon_state() -> FeederState {
    let net = synth::feeder_25();
    let fleet = synth::fleet_25();
    let prof = synth::profiles(&net, &fleet, DayType::Cloudy, 900.0, 1);
    let snap = snapshot_at(&net, &fleet, &prof, prof.row_of("12:00").unwrap(), &SnapshotOptions::default()).unwrap();
    FeederState::build(Feeder::new(net).unwrap(), snap, RiskConfig::default()).unwrap()
}

#[test]
fn bundled_feeders_are_valid() {
    assert!(validate_network(&synth::feeder_25()).is_empty());
    assert!(validate_network(&synth::feeder_123_scale()).is_empty());
}

#[test]
fn feeder_json_round_trip() {
    let net = synth::feeder_25();
    let text = serde_json::to_string(&net).unwrap();
    assert_eq!(NetworkModel::from_json(&text).unwrap(), net);
}

#[test]
fn dangling_line_is_reported() {
    let mut net = synth::feeder_25();
    net.lines[3].to_bus = "nowhere".into();
    let diags = validate_network(&net);
    assert!(diags.iter().any(|d| d.kind == DiagnosticKind::MissingBus), "{diags:?}");
}

#[test]
fn two_slack_buses_are_reported() {
    let mut net = synth::feeder_25();
    net.buses[5].is_slack = true;
    let diags = validate_network(&net);
    assert!(diags.iter().any(|d| d.kind == DiagnosticKind::MultipleSlack), "{diags:?}");
}

#[test]
fn admittance_is_symmetric() {
    let y = build_admittance_pu(&synth::feeder_25()).unwrap();
    assert!((&y - y.transpose()).norm() < 1e-9 * y.norm());
}

#[test]
fn linearization_is_exact_at_base_and_at_no_load() {
    let st = noon_state();
    let sys = &st.feeder.sys;
    let v = sys.solve(&st.base_injection).unwrap().v;
    let at_base = predict_voltage(&st.model, &st.base_injection).unwrap();
    assert!((&at_base - &v).camax() < 1e-7);
    let i = predict_current(&st.model, &st.base_injection).unwrap();
    assert!((&i - sys.line_currents(&v)).camax() < 1e-7);
    let at_zero = predict_voltage(&st.model, &sys.zero_injection()).unwrap();
    assert!((&at_zero - sys.no_load_voltage()).camax() < 1e-12);
}

#[test]
fn finite_differences_match_at_no_load() {
    let sys = PowerFlowSystem::new(&synth::feeder_25()).unwrap();
    let zero = sys.zero_injection();
    let m = linearize(&sys, &zero).unwrap().voltage_matrix();
    let v0 = sys.no_load_voltage();
    let h = 1e-7;
    for j in 0..m.ncols() {
        let mut x = zero.stacked();
        x[j] = h;
        let v = sys.solve(&InjectionVector::from_stacked(&x, sys.n_y())).unwrap().v;
        let fd = (&v - &v0) / Complex::new(h, 0.0);
        let err = (&fd - m.column(j)).norm() / m.column(j).norm();
        assert!(err < 1e-4, "column {j}: {err:e}");
    }
}

#[test]
fn magnitude_model_tracks_small_perturbations() {
    let st = noon_state();
    let sys = &st.feeder.sys;
    let mag = magnitude_affine(&st.model);
    let x0 = st.base_injection.stacked();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let x = x0.map(|v| v * (1.0 + rng.random_range(-0.1..0.1)));
        let v = predict_voltage(&st.model, &InjectionVector::from_stacked(&x, sys.n_y())).unwrap();
        let lin = mag.voltage.eval(&x);
        for t in 0..v.len() {
            assert!((lin[t] - v[t].norm()).abs() < 5e-4, "terminal {t}");
        }
    }
}

#[test]
fn head_power_covers_load_and_losses() {
    let st = noon_state();
    let sys = &st.feeder.sys;
    let v = sys.solve(&st.base_injection).unwrap().v;
    let s = sys.head_power(&v);
    let drawn = -st.base_injection.x_y.rows(0, sys.n_y() / 2).sum() - st.base_injection.x_delta.rows(0, sys.n_delta() / 2).sum();
    let loss = s.re - drawn;
    assert!(loss > 0.0 && loss < 0.05 * drawn.abs().max(1e-3), "loss {loss}, drawn {drawn}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn light_uniform_load_lowers_every_voltage(scale in 0.01f64..0.2) {
        let sys = PowerFlowSystem::new(&synth::feeder_25()).unwrap();
        let mut inj = sys.zero_injection();
        let n = sys.n_y() / 2;
        for j in 0..n {
            inj.x_y[j] = -scale / n as f64;
        }
        let v = sys.solve(&inj).unwrap().v;
        let v0 = sys.no_load_voltage();
        for &t in sys.load_terminals() {
            prop_assert!(v[t].norm() < v0[t].norm() + 1e-12);
        }
    }
}
