//! Synthetic test feeders, fleets, daily profiles and forecast-error
//! histories.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::devices::QMode;
use crate::ingest::{BessSpec, ClSpec, FleetFile, Profiles, PvSpec};
use crate::netmodel::{Base, Bus, Line, NetworkModel, Phase};
use crate::uncertainty::{DayType, ErrorHistory, ErrorScenarioTable, Gmm, PowerBin};

const MILE_3PH: [[(f64, f64); 3]; 3] = [
    [(0.4576, 1.0780), (0.1560, 0.5017), (0.1535, 0.3849)],
    [(0.1560, 0.5017), (0.4666, 1.0482), (0.1580, 0.4236)],
    [(0.1535, 0.3849), (0.1580, 0.4236), (0.4615, 1.0651)],
];
const MILE_1PH: (f64, f64) = (1.3292, 1.3475);

/// Load power factor used for the synthetic load profiles.
pub const LOAD_PF: f64 = 0.95;

fn impedance(phases: &[Phase], miles: f64) -> DMatrix<Complex64> {
    if phases.len() == 1 {
        return DMatrix::from_element(1, 1, Complex64::new(MILE_1PH.0, MILE_1PH.1) * miles);
    }
    let idx: Vec<usize> = phases.iter().map(|p| *p as usize).collect();
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
        let (re, im) = MILE_3PH[idx[r]][idx[c]];
        Complex64::new(re, im) * miles
    })
}

struct Builder {
    net: NetworkModel,
}

impl Builder {
    fn new(base_kv: f64, base_kva: f64) -> Self {
        Builder {
            net: NetworkModel {
                base: Base { base_kv, base_kva },
                buses: vec![Bus::new("0", &Phase::ALL).slack()],
                lines: Vec::new(),
            },
        }
    }

    fn add(&mut self, from: usize, phases: &[Phase], miles: f64, i_max: f64) -> usize {
        let id = self.net.buses.len();
        self.net.buses.push(Bus::new(id.to_string(), phases));
        self.net.lines.push(Line::new(
            format!("L{id}"),
            from.to_string(),
            id.to_string(),
            &impedance(phases, miles),
            i_max,
        ));
        id
    }
}

/// The bundled 25-bus unbalanced test feeder (4.16 kV, 3 MVA base).
///
/// Buses 1..=12 form a three-phase trunk; single-phase laterals hang off
/// buses 3, 5, 7, 11 and 12 and a three-phase lateral off bus 9.
pub fn feeder_25() -> NetworkModel {
    use Phase::*;
    let mut b = Builder::new(4.16, 3000.0);
    let mut prev = 0;
    for k in 1..=12 {
        let (miles, amps) = match k {
            1 => (0.08, 400.0),
            2..=6 => (0.05, 400.0),
            _ => (0.05, 300.0),
        };
        prev = b.add(prev, &Phase::ALL, miles, amps);
    }
    let lat = |b: &mut Builder, from: usize, ph: &[Phase], n: usize, miles: f64| {
        let mut at = from;
        for _ in 0..n {
            at = b.add(at, ph, miles, 200.0);
        }
    };
    lat(&mut b, 3, &[A], 2, 0.06);
    lat(&mut b, 5, &[B], 2, 0.06);
    lat(&mut b, 7, &[C], 2, 0.06);
    lat(&mut b, 9, &Phase::ALL, 3, 0.06);
    lat(&mut b, 11, &[A], 1, 0.06);
    lat(&mut b, 12, &[B], 1, 0.9);
    lat(&mut b, 12, &[C], 1, 0.7);
    b.net
}

/// A 125-bus, 375 bus-phase three-phase feeder of the same voltage class,
/// sized for runtime checks.
pub fn feeder_123_scale() -> NetworkModel {
    let mut b = Builder::new(4.16, 5000.0);
    let mut trunk = vec![0];
    for k in 0..44 {
        let amps = if k < 20 { 600.0 } else { 400.0 };
        let at = b.add(*trunk.last().unwrap(), &Phase::ALL, 0.03, amps);
        trunk.push(at);
    }
    for j in 0..10 {
        let mut at = trunk[4 * j + 4];
        for _ in 0..8 {
            at = b.add(at, &Phase::ALL, 0.03, 250.0);
        }
    }
    b.net
}

fn cl(id: &str, bus: &str, phases: &[Phase]) -> ClSpec {
    ClSpec {
        id: id.into(),
        bus: bus.into(),
        phases: phases.to_vec(),
        low: 0.8,
        high: 1.2,
        tan_theta: None,
    }
}

fn pv(id: &str, bus: &str, phases: &[Phase], kw: f64) -> PvSpec {
    PvSpec {
        id: id.into(),
        bus: bus.into(),
        phases: phases.to_vec(),
        capacity_kw: kw,
        inverter_kva: kw,
        q_mode: QMode::Full,
        pf_limit: None,
    }
}

fn bess(id: &str, bus: &str, kva: f64) -> BessSpec {
    BessSpec {
        id: id.into(),
        bus: bus.into(),
        phases: Phase::ALL.to_vec(),
        inverter_kva: kva,
        p_kw: 0.0,
        q_kvar: 0.0,
        energy_bounds_kw: None,
    }
}

/// Every load bus of [`feeder_25`] as a controllable load, five PV plants
/// and one battery.
pub fn fleet_25() -> FleetFile {
    use Phase::*;
    FleetFile {
        controllable_loads: feeder_25()
            .buses
            .iter()
            .filter(|b| !b.is_slack)
            .map(|b| cl(&format!("load{}", b.id), &b.id, &b.phases))
            .collect(),
        pv: vec![
            pv("pv1", "6", &Phase::ALL, 150.0),
            pv("pv2", "10", &Phase::ALL, 100.0),
            pv("pv3", "13", &[A], 40.0),
            pv("pv4", "20", &Phase::ALL, 60.0),
            pv("pv5", "23", &[B], 120.0),
        ],
        bess: vec![bess("bess1", "12", 100.0)],
        ncl: Vec::new(),
    }
}

/// [`fleet_25`] without controllable loads.
pub fn fleet_25_pv_bess() -> FleetFile {
    fleet_25().without_controllable_loads()
}

/// Fleet for [`feeder_123_scale`].
pub fn fleet_123_scale() -> FleetFile {
    let mut f = FleetFile::default();
    for j in 0..10 {
        let bus = (45 + 8 * j + 3).to_string();
        f.controllable_loads.push(cl(&format!("hvac{bus}"), &bus, &Phase::ALL));
    }
    for j in 0..15 {
        let bus = (3 + 8 * j).to_string();
        f.pv.push(pv(&format!("pv{}", j + 1), &bus, &Phase::ALL, 150.0 + 10.0 * (j % 5) as f64));
    }
    f.bess.push(bess("bess1", "30", 400.0));
    f.bess.push(bess("bess2", "100", 300.0));
    f
}

/// Per-day time of day in hours for 5-minute steps.
fn hours() -> impl Iterator<Item = f64> {
    (0..288).map(|k| k as f64 * 5.0 / 60.0)
}

/// Residential load shape, peak 1 near 19:00.
pub fn load_shape(h: f64) -> f64 {
    let bump = |c: f64, w: f64| (-0.5 * ((h - c) / w).powi(2)).exp();
    (0.42 + 0.22 * bump(7.5, 1.3) + 0.18 * bump(13.0, 3.0) + 0.58 * bump(19.3, 2.2)).min(1.0)
}

/// Clear-sky PV output share of capacity.
pub fn clear_sky(h: f64) -> f64 {
    if (6.0..=18.0).contains(&h) {
        (std::f64::consts::PI * (h - 6.0) / 12.0).sin().powf(1.3)
    } else {
        0.0
    }
}

/// Weather multiplier on clear-sky output for a day type.
fn weather(day: DayType, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(288);
    let mut state = 0.0_f64;
    for h in hours() {
        let z: f64 = StandardNormal.sample(rng);
        let m = match day {
            DayType::Sunny => 0.97 + 0.01 * z,
            DayType::Cloudy => {
                state = 0.85 * state + 0.3 * z;
                (0.68 + 0.3 * state.tanh() + 0.05 * (h * 1.7).sin()).clamp(0.2, 1.0)
            }
            DayType::Overcast => {
                state = 0.95 * state + 0.05 * z;
                (0.33 + 0.1 * state).clamp(0.2, 0.45)
            }
        };
        out.push(m);
    }
    out
}

/// Five-minute load and PV profiles for one day. Every non-slack
/// bus-phase carries load; per-terminal peaks are random around
/// `peak_kw` / n with a deterministic seed.
pub fn profiles(net: &NetworkModel, fleet: &FleetFile, day: DayType, peak_kw: f64, seed: u64) -> Profiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(String, Phase)> = net
        .buses
        .iter()
        .filter(|b| !b.is_slack)
        .flat_map(|b| b.phases.iter().map(move |&p| (b.id.clone(), p)))
        .collect();
    let weights: Vec<f64> = terms.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let tan = (1.0 / (LOAD_PF * LOAD_PF) - 1.0).sqrt();
    let mut loads = BTreeMap::new();
    for (t, w) in terms.into_iter().zip(&weights) {
        let peak = peak_kw * w / total;
        let shift = rng.random_range(-0.5..0.5);
        let p: Vec<f64> = hours()
            .map(|h| {
                let z: f64 = StandardNormal.sample(&mut rng);
                peak * load_shape(h + shift) * (1.0 + 0.02 * z)
            })
            .collect();
        let q = p.iter().map(|v| v * tan).collect();
        loads.insert(t, (p, q));
    }
    let wx = weather(day, &mut rng);
    let mut pvs = BTreeMap::new();
    for spec in &fleet.pv {
        let site = rng.random_range(0.95..1.0);
        let s = hours()
            .zip(&wx)
            .map(|(h, m)| (spec.capacity_kw * clear_sky(h) * m * site).max(0.0))
            .collect();
        pvs.insert(spec.id.clone(), s);
    }
    Profiles {
        times: hours()
            .map(|h| {
                let m = (h * 60.0).round() as u32;
                format!("{:02}:{:02}", m / 60, m % 60)
            })
            .collect(),
        loads,
        pv: pvs,
    }
}

/// The three-component cloudy-day mixture for outputs between 0.5 and 0.75
/// of capacity.
pub fn cloudy_mid_mixture() -> Gmm {
    Gmm::new(
        vec![0.4024, 0.1080, 0.4896],
        vec![0.0024, 0.0688, 0.0168],
        vec![6.4572e-5, 0.0172, 9.4331e-4],
    )
    .expect("valid mixture")
}

/// Error mixture (forecast minus actual, share of capacity) used to
/// generate the synthetic history. Overcast days never reach the top bin.
pub fn error_model(day: DayType, bin: PowerBin) -> Option<Gmm> {
    let b = bin.index() as f64;
    let g = match (day, bin.index()) {
        (DayType::Cloudy, 2) => Ok(cloudy_mid_mixture()),
        (DayType::Sunny, _) => Gmm::new(
            vec![0.8, 0.2],
            vec![0.001, 0.01 + 0.005 * b],
            vec![(0.004 + 0.002 * b).powi(2), (0.012 + 0.004 * b).powi(2)],
        ),
        (DayType::Cloudy, _) => Gmm::new(
            vec![0.6, 0.3, 0.1],
            vec![0.002, 0.015 + 0.005 * b, 0.05],
            vec![1e-4, (0.03 + 0.005 * b).powi(2), 0.01],
        ),
        (DayType::Overcast, 3) => return None,
        (DayType::Overcast, _) => Gmm::new(
            vec![0.7, 0.3],
            vec![0.005, 0.03 + 0.01 * b],
            vec![(0.02 + 0.005 * b).powi(2), 0.0025],
        ),
    }
    .expect("valid mixture");
    Some(g)
}

/// Table of the generating mixtures, without fitting.
pub fn reference_table() -> ErrorScenarioTable {
    let mut t = ErrorScenarioTable::default();
    for day in DayType::ALL {
        for bin in PowerBin::all() {
            if let Some(g) = error_model(day, bin) {
                t.insert(day, bin, g);
            }
        }
    }
    t
}

/// Error history with `n_per_bin` samples per populated (day type, bin).
pub fn error_history(n_per_bin: usize, seed: u64) -> ErrorHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for day in DayType::ALL {
        for bin in PowerBin::all() {
            let Some(g) = error_model(day, bin) else { continue };
            let (lo, hi) = bin.bounds();
            for _ in 0..n_per_bin {
                let p = rng.random_range(lo..hi);
                rows.push((day, p, g.draw(&mut rng)));
            }
        }
    }
    ErrorHistory { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::validate_network;

    #[test]
    fn feeders_are_valid() {
        let f = feeder_25();
        assert_eq!(f.buses.len(), 25);
        assert!(validate_network(&f).is_empty());
        let g = feeder_123_scale();
        let terms: usize = g.buses.iter().map(|b| b.phases.len()).sum();
        assert_eq!(terms, 375);
        assert!(validate_network(&g).is_empty());
    }

    #[test]
    fn profiles_are_deterministic() {
        let net = feeder_25();
        let fleet = fleet_25();
        let a = profiles(&net, &fleet, DayType::Cloudy, 900.0, 7);
        let b = profiles(&net, &fleet, DayType::Cloudy, 900.0, 7);
        assert_eq!(a, b);
        assert_eq!(a.times.len(), 288);
        assert_eq!(a.rows_every(30).len(), 48);
        let night = a.row_of("02:00").unwrap();
        assert!(a.pv.values().all(|s| s[night] == 0.0));
    }

    #[test]
    fn overcast_stays_below_top_bin() {
        let net = feeder_25();
        let fleet = fleet_25();
        let p = profiles(&net, &fleet, DayType::Overcast, 900.0, 1);
        for spec in &fleet.pv {
            let max = p.pv[&spec.id].iter().copied().fold(0.0, f64::max);
            assert!(max / spec.capacity_kw < 0.75);
        }
    }
}
