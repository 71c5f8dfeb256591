use std::sync::Arc;

use flexagg::devices::{cl_bounds, FleetAdjustment};
use flexagg::drcc::{direction_set, Feeder, FeederState};
use flexagg::ingest::{snapshot_at, FleetFile, Profiles, SnapshotOptions};
use flexagg::netmodel::NetworkModel;
use flexagg::region::{estimate_region, polygons_svg, shoelace_area, sweep_time_series, FlexPolygon};
use flexagg::synth;
use flexagg::uncertainty::{DayType, RiskConfig};
use proptest::prelude::*;

struct Case {
    net: NetworkModel,
    feeder: Arc<Feeder>,
    fleet: FleetFile,
    profiles: Profiles,
}

impl Case {
    fn new(fleet: FleetFile) -> Self {
        let net = synth::feeder_25();
        let profiles = synth::profiles(&net, &fleet, DayType::Cloudy, 900.0, 1);
        Case {
            feeder: Feeder::new(net.clone()).unwrap(),
            net,
            fleet,
            profiles,
        }
    }

    fn state(&self, time: &str, risk: RiskConfig) -> FeederState {
        let row = self.profiles.row_of(time).unwrap();
        let snap = snapshot_at(&self.net, &self.fleet, &self.profiles, row, &SnapshotOptions::default()).unwrap();
        FeederState::build(self.feeder.clone(), snap, risk).unwrap()
    }
}

fn inside(poly: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -tol
    })
}

#[test]
fn too_few_directions() {
    assert!(direction_set(2).is_err());
    assert_eq!(direction_set(3).unwrap().len(), 3);
}

#[test]
fn axis_directions_are_exact() {
    let d = direction_set(8).unwrap();
    assert_eq!((d[0].lambda_p, d[0].lambda_q), (1.0, 0.0));
    assert_eq!((d[2].lambda_p, d[2].lambda_q), (0.0, 1.0));
    assert_eq!((d[4].lambda_p, d[4].lambda_q), (-1.0, 0.0));
    assert_eq!((d[6].lambda_p, d[6].lambda_q), (0.0, -1.0));
}

#[test]
fn shoelace_known_shapes() {
    let square = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
    assert_eq!(shoelace_area(&square), 4.0);
    let mut rev = square;
    rev.reverse();
    assert_eq!(shoelace_area(&rev), 4.0);
    assert_eq!(shoelace_area(&square[..2]), 0.0);
    let tri = [[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
    assert_eq!(shoelace_area(&tri), 6.0);
}

#[test]
fn noon_region_contains_base_and_grows_with_k() {
    let case = Case::new(synth::fleet_25_pv_bess());
    let st = case.state("12:00", RiskConfig::default());
    let polys: Vec<FlexPolygon> = [8, 16, 32].iter().map(|&k| estimate_region(&st, k, 1).unwrap()).collect();
    for p in &polys {
        assert!(!p.degenerate);
        assert!(inside(&p.vertices, p.base, 1e-6), "{}: base outside", p.k_total);
        assert!((shoelace_area(&p.vertices) - p.area).abs() < 1e-9 * p.area);
    }
    assert!(polys[1].area >= polys[0].area * (1.0 - 1e-9));
    assert!(polys[2].area >= polys[1].area * (1.0 - 1e-9));
    assert!(polys[2].area / polys[1].area - 1.0 < 0.02);
}

#[test]
fn vertex_decisions_respect_device_limits() {
    let case = Case::new(synth::fleet_25());
    let st = case.state("19:00", RiskConfig::default());
    let poly = estimate_region(&st, 16, 1).unwrap();
    for v in &poly.vertex_info {
        let adj: &FleetAdjustment = v.decision.as_ref().unwrap();
        adj.check(&st.fleet).unwrap();
        for (load, d) in st.fleet.controllable_loads.iter().zip(&adj.cl) {
            let b = cl_bounds(load);
            let p = load.p_sched + d;
            assert!(p >= b.p_min - 1e-7 && p <= b.p_max + 1e-7, "{}: {p} outside [{}, {}]", load.id, b.p_min, b.p_max);
        }
        for (b, d) in st.fleet.bess.iter().zip(&adj.bess) {
            let s = (b.p_sched - d[0]).hypot(b.q_sched - d[1]);
            assert!(s <= b.s_rating * (1.0 + 1e-6), "{}: {s} over {}", b.id, b.s_rating);
        }
    }
}

#[test]
fn tighter_voltage_risk_never_enlarges_any_direction() {
    let case = Case::new(synth::fleet_25_pv_bess());
    let obj = |eps_v: f64| -> Vec<f64> {
        let st = case.state("12:00", RiskConfig::new(0.5, eps_v, 0.05).unwrap());
        estimate_region(&st, 16, 1).unwrap().vertex_info.iter().map(|v| v.objective.unwrap()).collect()
    };
    let (tight, loose) = (obj(0.01), obj(0.2));
    for (a, b) in tight.iter().zip(&loose) {
        assert!(a <= &(b + 1e-6), "{a} > {b}");
    }
}

#[test]
fn parallel_solve_is_identical() {
    let case = Case::new(synth::fleet_25_pv_bess());
    let st = case.state("12:00", RiskConfig::default());
    let a = estimate_region(&st, 16, 1).unwrap();
    let b = estimate_region(&st, 16, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn polygon_json_round_trip_and_svg() {
    let case = Case::new(synth::fleet_25_pv_bess());
    let st = case.state("12:00", RiskConfig::default());
    let poly = estimate_region(&st, 8, 1).unwrap();
    let text = serde_json::to_string(&poly).unwrap();
    let back: FlexPolygon = serde_json::from_str(&text).unwrap();
    assert_eq!(back, poly);
    let svg = polygons_svg(&[("noon", &poly)]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn sweep_keeps_snapshot_order() {
    let case = Case::new(synth::fleet_25_pv_bess());
    let states: Vec<FeederState> = ["06:00", "12:00", "18:00"].iter().map(|t| case.state(t, RiskConfig::default())).collect();
    let out = sweep_time_series(&states, 8, 2);
    let times: Vec<String> = out.into_iter().map(|r| r.unwrap().time).collect();
    assert_eq!(times, ["06:00", "12:00", "18:00"]);
}

proptest! {
    #[test]
    fn direction_sets_are_nested(base in 3usize..12, factor in 1usize..5) {
        let coarse = direction_set(base).unwrap();
        let fine = direction_set(base * factor).unwrap();
        for (m, d) in coarse.iter().enumerate() {
            let f = &fine[m * factor];
            prop_assert!((f.lambda_p - d.lambda_p).abs() < 1e-15 && (f.lambda_q - d.lambda_q).abs() < 1e-15);
        }
    }

    #[test]
    fn directions_are_unit_and_ordered(k in 3usize..64) {
        let d = direction_set(k).unwrap();
        for (m, s) in d.iter().enumerate() {
            prop_assert_eq!(s.index, m);
            prop_assert!((s.lambda_p.hypot(s.lambda_q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn regular_polygon_area(n in 3usize..40, r in 0.1f64..100.0, phase in 0.0f64..6.3, shift in -50.0f64..50.0) {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = phase + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [shift + r * a.cos(), r * a.sin()]
            })
            .collect();
        let exact = 0.5 * n as f64 * r * r * (2.0 * std::f64::consts::PI / n as f64).sin();
        prop_assert!((shoelace_area(&pts) - exact).abs() < 1e-9 * exact.max(1.0));
        let mut rotated = pts.clone();
        rotated.rotate_left(n / 2);
        prop_assert!((shoelace_area(&rotated) - shoelace_area(&pts)).abs() < 1e-9 * exact.max(1.0));
    }
}
