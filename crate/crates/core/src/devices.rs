//! Device-level flexibility sets for controllable loads, PV inverters and
//! battery inverters.
//!
//! All powers are per unit of the per-phase base. Device outputs follow each
//! device's own convention (load: consumption, PV/BESS: generation). The
//! adjustments handed to [`fleet_delta_aggregate`] are expressed as the change
//! in power drawn from the feeder, which is the convention of the feeder-head
//! balance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::Phase;

/// Reactive-power share of the inverter rating under IEEE 1547-2018.
pub const IEEE1547_Q_SHARE: f64 = 0.44;

const MEMBER_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("expected {expected} adjustments for {kind}, got {got}")]
    AdjustmentCount {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("device {id}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub bus: String,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllableLoad {
    pub id: String,
    pub at: Attachment,
    pub p_sched: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub tan_theta: f64,
}

impl ControllableLoad {
    /// Load whose bounds are multiples of its schedule (0.8 / 1.2 in the usual setup).
    pub fn from_multipliers(id: impl Into<String>, at: Attachment, p_sched: f64, low: f64, high: f64, tan_theta: f64) -> Self {
        ControllableLoad {
            id: id.into(),
            at,
            p_sched,
            p_low: p_sched * low,
            p_high: p_sched * high,
            tan_theta,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.p_low <= self.p_sched && self.p_sched <= self.p_high) {
            return Err(self.invalid("require p_low <= p_sched <= p_high"));
        }
        if !self.tan_theta.is_finite() {
            return Err(self.invalid("tan_theta must be finite"));
        }
        Ok(())
    }

    fn invalid(&self, reason: &str) -> DeviceError {
        DeviceError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    #[default]
    #[serde(alias = "full_circle", alias = "full-circle")]
    Full,
    Ieee1547,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub id: String,
    pub at: Attachment,
    pub s_rating: f64,
    pub forecast_mu: f64,
    pub forecast_sigma: f64,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default)]
    pub pf_limit: Option<f64>,
}

impl PvUnit {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |reason: &str| DeviceError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        };
        if !(self.s_rating > 0.0) {
            return Err(bad("s_rating must be positive"));
        }
        if !(self.forecast_mu >= 0.0) {
            return Err(bad("forecast_mu must be non-negative"));
        }
        if !(self.forecast_sigma >= 0.0) {
            return Err(bad("forecast_sigma must be non-negative"));
        }
        if let Some(t) = self.pf_limit {
            if !(t >= 0.0) {
                return Err(bad("pf_limit must be a non-negative tangent"));
            }
        }
        Ok(())
    }

    /// Scheduled output at the base point: the expected availability, capped
    /// at the inverter rating.
    pub fn p_sched(&self) -> f64 {
        self.forecast_mu.min(self.s_rating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessUnit {
    pub id: String,
    pub at: Attachment,
    pub s_rating: f64,
    #[serde(default)]
    pub p_sched: f64,
    #[serde(default)]
    pub q_sched: f64,
    /// Optional `[min, max]` real-power output from energy headroom over the
    /// snapshot. Off unless set.
    #[serde(default)]
    pub p_energy_bounds: Option<[f64; 2]>,
}

impl BessUnit {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.s_rating > 0.0) || self.p_sched.hypot(self.q_sched) > self.s_rating * (1.0 + MEMBER_TOL) {
            return Err(DeviceError::Invalid {
                id: self.id.clone(),
                reason: "scheduled output exceeds the inverter rating".into(),
            });
        }
        Ok(())
    }
}

/// Fixed (non-controllable) load at one bus-phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLoad {
    pub bus: String,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DerFleet {
    #[serde(default)]
    pub controllable_loads: Vec<ControllableLoad>,
    #[serde(default)]
    pub pv: Vec<PvUnit>,
    #[serde(default)]
    pub bess: Vec<BessUnit>,
    #[serde(default)]
    pub ncl: Vec<FixedLoad>,
}

impl DerFleet {
    pub fn n_cl(&self) -> usize {
        self.controllable_loads.len()
    }

    pub fn n_pv(&self) -> usize {
        self.pv.len()
    }

    pub fn n_bess(&self) -> usize {
        self.bess.len()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.controllable_loads.iter().try_for_each(|d| d.validate())?;
        self.pv.iter().try_for_each(|d| d.validate())?;
        self.bess.iter().try_for_each(|d| d.validate())
    }
}

/// Real-power box of a controllable load with Q locked to `P tan(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClRegion {
    pub p_min: f64,
    pub p_max: f64,
    pub tan_theta: f64,
}

impl ClRegion {
    pub fn q_of(&self, p: f64) -> f64 {
        p * self.tan_theta
    }

    pub fn contains(&self, p: f64, q: f64) -> bool {
        p >= self.p_min - MEMBER_TOL
            && p <= self.p_max + MEMBER_TOL
            && (q - self.q_of(p)).abs() <= MEMBER_TOL * (1.0 + p.abs())
    }
}

pub fn cl_bounds(load: &ControllableLoad) -> ClRegion {
    ClRegion {
        p_min: load.p_low,
        p_max: load.p_high,
        tan_theta: load.tan_theta,
    }
}

/// Chance-tightened PV operating region in the inverter's output convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvRegion {
    pub p_up: f64,
    pub s_rating: f64,
    pub q_cap: Option<f64>,
    pub pf_tan: Option<f64>,
}

impl PvRegion {
    pub fn contains(&self, p: f64, q: f64) -> bool {
        let tol = MEMBER_TOL * (1.0 + self.s_rating);
        p >= -tol
            && p <= self.p_up + tol
            && p.hypot(q) <= self.s_rating + tol
            && self.q_cap.is_none_or(|c| q.abs() <= c + tol)
            && self.pf_tan.is_none_or(|t| q.abs() <= t * p.abs() + tol)
    }
}

/// `0 <= P <= max(0, mu - K sigma)` (clipped at the rating), inside the
/// rating disk, plus optional reactive caps.
pub fn pv_tightened_region(pv: &PvUnit, k_eps_p: f64) -> PvRegion {
    let p_up = (pv.forecast_mu - k_eps_p * pv.forecast_sigma).max(0.0).min(pv.s_rating);
    PvRegion {
        p_up,
        s_rating: pv.s_rating,
        q_cap: (pv.q_mode == QMode::Ieee1547).then(|| IEEE1547_Q_SHARE * pv.s_rating),
        pf_tan: pv.pf_limit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskRegion {
    pub s_rating: f64,
}

impl DiskRegion {
    pub fn contains(&self, p: f64, q: f64) -> bool {
        p.hypot(q) <= self.s_rating * (1.0 + MEMBER_TOL)
    }
}

pub fn bess_region(b: &BessUnit) -> DiskRegion {
    DiskRegion { s_rating: b.s_rating }
}

/// Per-device adjustments, each the change in power drawn from the feeder
/// (p.u.). Controllable loads carry only a real-power change.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FleetAdjustment {
    pub cl: Vec<f64>,
    pub pv: Vec<[f64; 2]>,
    pub bess: Vec<[f64; 2]>,
}

impl FleetAdjustment {
    pub fn zeros(fleet: &DerFleet) -> Self {
        FleetAdjustment {
            cl: vec![0.0; fleet.n_cl()],
            pv: vec![[0.0; 2]; fleet.n_pv()],
            bess: vec![[0.0; 2]; fleet.n_bess()],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FleetAdjustment {
            cl: self.cl.iter().map(|v| v * factor).collect(),
            pv: self.pv.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
            bess: self.bess.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
        }
    }

    pub fn check(&self, fleet: &DerFleet) -> Result<(), DeviceError> {
        for (kind, expected, got) in [
            ("controllable loads", fleet.n_cl(), self.cl.len()),
            ("pv", fleet.n_pv(), self.pv.len()),
            ("bess", fleet.n_bess(), self.bess.len()),
        ] {
            if expected != got {
                return Err(DeviceError::AdjustmentCount { kind, expected, got });
            }
        }
        Ok(())
    }
}

/// Feeder-level adjustment `(dP_F, dQ_F)` as the plain sum of device
/// adjustments, with controllable-load Q following their power factor.
pub fn fleet_delta_aggregate(fleet: &DerFleet, adj: &FleetAdjustment) -> Result<(f64, f64), DeviceError> {
    adj.check(fleet)?;
    let mut dp = 0.0;
    let mut dq = 0.0;
    for (load, d) in fleet.controllable_loads.iter().zip(&adj.cl) {
        dp += d;
        dq += d * load.tan_theta;
    }
    for d in adj.pv.iter().chain(&adj.bess) {
        dp += d[0];
        dq += d[1];
    }
    Ok((dp, dq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::k_epsilon;
    use proptest::prelude::*;

    fn at() -> Attachment {
        Attachment {
            bus: "1".into(),
            phases: vec![Phase::A],
        }
    }

    fn pv(mu: f64, sigma: f64, s: f64) -> PvUnit {
        PvUnit {
            id: "pv".into(),
            at: at(),
            s_rating: s,
            forecast_mu: mu,
            forecast_sigma: sigma,
            q_mode: QMode::Full,
            pf_limit: None,
        }
    }

    #[test]
    fn cl_multiplier_range() {
        let l = ControllableLoad::from_multipliers("l", at(), 10.0, 0.8, 1.2, 0.3);
        let r = cl_bounds(&l);
        assert!((r.p_min - 8.0).abs() < 1e-12 && (r.p_max - 12.0).abs() < 1e-12);
        assert!(r.contains(9.0, 9.0 * 0.3));
        assert!(!r.contains(9.0, 0.1 + 9.0 * 0.3));
        let unity = cl_bounds(&ControllableLoad::from_multipliers("u", at(), 10.0, 0.8, 1.2, 0.0));
        assert_eq!(unity.q_of(11.0), 0.0);
    }

    #[test]
    fn pv_limits() {
        assert_eq!(pv_tightened_region(&pv(100.0, 0.0, 120.0), 3.0).p_up, 100.0);
        let r = pv_tightened_region(&pv(100.0, 10.0, 120.0), k_epsilon(0.5).unwrap());
        assert!((r.p_up - 90.0).abs() < 1e-12);
        // fully curtailed, still a valid region
        assert_eq!(pv_tightened_region(&pv(10.0, 10.0, 120.0), 4.0).p_up, 0.0);
        let mut u = pv(100.0, 0.0, 100.0);
        u.q_mode = QMode::Ieee1547;
        let r = pv_tightened_region(&u, 1.0);
        assert!((r.q_cap.unwrap() - 44.0).abs() < 1e-12);
        assert!(r.contains(0.0, 44.0) && !r.contains(0.0, 44.5));
    }

    #[test]
    fn bess_membership() {
        let b = BessUnit {
            id: "b".into(),
            at: at(),
            s_rating: 100.0,
            p_sched: 0.0,
            q_sched: 0.0,
            p_energy_bounds: None,
        };
        let d = bess_region(&b);
        assert!(d.contains(0.0, 0.0));
        assert!(!d.contains(80.0, 80.0));
        assert!(d.contains(100.0, 0.0));
    }

    #[test]
    fn aggregate_simple_cases() {
        let fleet = DerFleet {
            pv: vec![pv(1.0, 0.0, 1.0)],
            ..Default::default()
        };
        let mut adj = FleetAdjustment::zeros(&fleet);
        assert_eq!(fleet_delta_aggregate(&fleet, &adj).unwrap(), (0.0, 0.0));
        adj.pv[0] = [5.0, -3.0];
        assert_eq!(fleet_delta_aggregate(&fleet, &adj).unwrap(), (5.0, -3.0));
        adj.bess.push([1.0, 1.0]);
        assert!(matches!(
            fleet_delta_aggregate(&fleet, &adj),
            Err(DeviceError::AdjustmentCount { kind: "bess", .. })
        ));
    }

    #[test]
    fn pv_region_monotone_in_k() {
        let u = pv(0.7, 0.1, 1.0);
        let ks = [0.0, 0.5, 1.0, 2.0, 4.0];
        for w in ks.windows(2) {
            let loose = pv_tightened_region(&u, w[0]);
            let tight = pv_tightened_region(&u, w[1]);
            for i in 0..=40 {
                for j in -40..=40 {
                    let (p, q) = (i as f64 / 40.0, j as f64 / 40.0);
                    if tight.contains(p, q) {
                        assert!(loose.contains(p, q), "({p},{q}) k={}", w[1]);
                    }
                }
            }
        }
    }

    #[test]
    fn ieee1547_inside_full_circle() {
        let full = pv(0.8, 0.0, 1.0);
        let mut capped = full.clone();
        capped.q_mode = QMode::Ieee1547;
        let (f, c) = (pv_tightened_region(&full, 1.0), pv_tightened_region(&capped, 1.0));
        for i in 0..=50 {
            for j in -50..=50 {
                let (p, q) = (i as f64 / 50.0, j as f64 / 50.0);
                if c.contains(p, q) {
                    assert!(f.contains(p, q));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn regions_are_convex(
            a in (0.0f64..1.0, -1.0f64..1.0),
            b in (0.0f64..1.0, -1.0f64..1.0),
            mu in 0.0f64..1.2,
            sigma in 0.0f64..0.3,
            k in 0.0f64..4.0,
        ) {
            let mut u = pv(mu, sigma, 1.0);
            u.pf_limit = Some(0.9);
            let pvr = pv_tightened_region(&u, k);
            let disk = DiskRegion { s_rating: 1.0 };
            let cl = ClRegion { p_min: 0.2, p_max: 0.9, tan_theta: 0.4 };
            let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
            if pvr.contains(a.0, a.1) && pvr.contains(b.0, b.1) {
                prop_assert!(pvr.contains(mid.0, mid.1));
            }
            if disk.contains(a.0, a.1) && disk.contains(b.0, b.1) {
                prop_assert!(disk.contains(mid.0, mid.1));
            }
            let (ca, cb) = ((a.0, cl.q_of(a.0)), (b.0, cl.q_of(b.0)));
            if cl.contains(ca.0, ca.1) && cl.contains(cb.0, cb.1) {
                prop_assert!(cl.contains((ca.0 + cb.0) / 2.0, (ca.1 + cb.1) / 2.0));
            }
        }
    }
}
