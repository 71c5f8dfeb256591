//! Per-direction boundary problems with moment-based chance constraints.
//!
//! Decision variables are, in order: one real-power change per controllable
//! load, `(dP, dQ)` per PV inverter, `(dP, dQ)` per battery inverter, and the
//! feeder-head changes `(dP_F, dQ_F)`. Every change is the change in power
//! drawn from the feeder, so `dP_F` is the plain sum of the device changes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{pv_tightened_region, DerFleet, DeviceError, FleetAdjustment};
use crate::netmodel::{Connection, NetworkModel, Phase};
use crate::powerflow::{
    linearize, magnitude_affine, InjectionVector, MagnitudeModel, PowerFlowError, PowerFlowSystem, SensitivityModel,
};
use crate::socp::{ConicProblem, LinearRow, SocBlock, Solution};
use crate::uncertainty::propagate::{radial_std, row_std};
use crate::uncertainty::{propagate, Gmm, Propagation, RiskConfig, SourceTag, UncertainInjection};

/// Default load forecast-error standard deviation, as a share of scheduled power.
pub const DEFAULT_LOAD_STD_FRAC: f64 = 0.01;

const BASE_FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DrccError {
    #[error("need at least 3 search directions, got {0}")]
    TooFewDirections(usize),
    #[error("base point outside chance-feasible set: {constraint} violated by {violation:.3e}")]
    BaseInfeasible { constraint: String, violation: f64 },
    #[error("device {device}: {reason}")]
    Attachment { device: String, reason: String },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchDirection {
    pub index: usize,
    pub lambda_p: f64,
    pub lambda_q: f64,
}

/// Unit directions at angles `2 pi m / k_total`, starting at `(1, 0)`.
pub fn direction_set(k_total: usize) -> Result<Vec<SearchDirection>, DrccError> {
    if k_total < 3 {
        return Err(DrccError::TooFewDirections(k_total));
    }
    Ok((0..k_total)
        .map(|m| {
            let (lambda_q, lambda_p) = match (4 * m) % k_total {
                // exact axes when the angle is a multiple of pi/2
                0 => {
                    let quarter = 4 * m / k_total;
                    [(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)][quarter]
                }
                _ => (2.0 * std::f64::consts::PI * m as f64 / k_total as f64).sin_cos(),
            };
            SearchDirection {
                index: m,
                lambda_p,
                lambda_q,
            }
        })
        .collect())
}

/// Limits in per unit: one voltage band per terminal, one ampacity per branch-current row.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingLimits {
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub i_max: Vec<f64>,
}

impl OperatingLimits {
    pub fn from_network(net: &NetworkModel, sys: &PowerFlowSystem) -> Self {
        let terms = sys.terminals.terminals();
        OperatingLimits {
            v_min: terms.iter().map(|t| net.buses[t.bus].v_min).collect(),
            v_max: terms.iter().map(|t| net.buses[t.bus].v_max).collect(),
            i_max: sys.line_rows().iter().map(|&(l, _)| net.lines[l].i_max / sys.base.i_amp).collect(),
        }
    }
}

/// Network, factored power-flow system and limits shared by every snapshot.
#[derive(Debug, Clone)]
pub struct Feeder {
    pub net: NetworkModel,
    pub sys: PowerFlowSystem,
    pub limits: OperatingLimits,
}

impl Feeder {
    pub fn new(net: NetworkModel) -> Result<Arc<Self>, PowerFlowError> {
        let sys = PowerFlowSystem::new(&net)?;
        let limits = OperatingLimits::from_network(&net, &sys);
        Ok(Arc::new(Feeder { net, sys, limits }))
    }

    pub fn terminal_label(&self, t: usize) -> String {
        self.sys.terminals.label(&self.net, t)
    }

    pub fn line_row_label(&self, r: usize) -> String {
        let (l, p) = self.sys.line_rows()[r];
        format!("{}.{}", self.net.lines[l].id, p)
    }
}

/// PV availability `A = offset - scale * e` with `e` drawn from `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvAvailability {
    pub offset: f64,
    pub scale: f64,
    pub error: Gmm,
}

impl PvAvailability {
    /// Gaussian availability with the given moments.
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        PvAvailability {
            offset: mu,
            scale: sigma,
            error: Gmm::gaussian(0.0, 1.0).expect("unit gaussian"),
        }
    }

    pub fn mean(&self) -> f64 {
        self.offset - self.scale * self.error.mean()
    }

    pub fn std_dev(&self) -> f64 {
        self.scale.abs() * self.error.std_dev()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvCorrelation {
    #[default]
    Independent,
    /// All PV errors move together (same irradiance shape).
    Full,
}

/// Everything that varies between snapshots.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: String,
    pub fleet: DerFleet,
    /// One entry per PV; `None` takes Gaussian moments from the PV records.
    pub pv_availability: Option<Vec<PvAvailability>>,
    pub load_std_frac: f64,
    pub pv_correlation: PvCorrelation,
}

impl Snapshot {
    pub fn new(time: impl Into<String>, fleet: DerFleet) -> Self {
        Snapshot {
            time: time.into(),
            fleet,
            pv_availability: None,
            load_std_frac: DEFAULT_LOAD_STD_FRAC,
            pv_correlation: PvCorrelation::Independent,
        }
    }
}

/// Entries of the stacked injection vector fed by one device, with the
/// share of the device power on each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Port {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub share: f64,
}

/// Linearized operating state for one snapshot.
#[derive(Debug, Clone)]
pub struct FeederState {
    pub feeder: Arc<Feeder>,
    pub time: String,
    pub fleet: DerFleet,
    pub pv_availability: Vec<PvAvailability>,
    pub base_injection: InjectionVector,
    /// Scheduled power drawn at the feeder head `(P, Q)` in per unit.
    pub head: (f64, f64),
    pub losses: (f64, f64),
    pub model: SensitivityModel,
    pub magnitude: MagnitudeModel,
    pub uncertainty: UncertainInjection,
    pub risk: RiskConfig,
    pub limits: OperatingLimits,
    pub cl_ports: Vec<Port>,
    pub pv_ports: Vec<Port>,
    pub bess_ports: Vec<Port>,
    pub load_ports: Vec<Port>,
    pub load_std_frac: f64,
    pub pv_correlation: PvCorrelation,
}

fn port(feeder: &Feeder, device: &str, bus_id: &str, phases: &[Phase], is_load: bool) -> Result<Port, DrccError> {
    let fail = |reason: String| DrccError::Attachment {
        device: device.to_string(),
        reason,
    };
    let sys = &feeder.sys;
    let b = feeder
        .net
        .bus_index(bus_id)
        .ok_or_else(|| fail(format!("unknown bus {bus_id}")))?;
    let bus = &feeder.net.buses[b];
    if bus.is_slack {
        return Err(fail(format!("bus {bus_id} is the feeder head")));
    }
    if phases.is_empty() {
        return Err(fail("no phases".into()));
    }
    let nl = sys.n_y() / 2;
    let nd = sys.n_delta() / 2;
    let mut p = Vec::new();
    let mut q = Vec::new();
    for &ph in phases {
        if is_load && bus.connection == Connection::Delta {
            let d = sys
                .delta_position(b, ph)
                .ok_or_else(|| fail(format!("no delta branch at {bus_id}.{ph}")))?;
            p.push(sys.n_y() + d);
            q.push(sys.n_y() + nd + d);
        } else {
            let t = sys
                .terminals
                .get(b, ph)
                .ok_or_else(|| fail(format!("bus {bus_id} has no phase {ph}")))?;
            let k = sys.load_position(t).expect("non-slack terminal");
            p.push(k);
            q.push(nl + k);
        }
    }
    Ok(Port {
        p,
        q,
        share: 1.0 / phases.len() as f64,
    })
}

impl FeederState {
    pub fn build(feeder: Arc<Feeder>, snap: Snapshot, risk: RiskConfig) -> Result<Self, DrccError> {
        let fleet = snap.fleet;
        fleet.validate()?;
        let sys = &feeder.sys;
        let n_x = sys.n_x();

        let cl_ports = fleet
            .controllable_loads
            .iter()
            .map(|d| port(&feeder, &d.id, &d.at.bus, &d.at.phases, true))
            .collect::<Result<Vec<_>, _>>()?;
        let pv_ports = fleet
            .pv
            .iter()
            .map(|d| port(&feeder, &d.id, &d.at.bus, &d.at.phases, false))
            .collect::<Result<Vec<_>, _>>()?;
        let bess_ports = fleet
            .bess
            .iter()
            .map(|d| port(&feeder, &d.id, &d.at.bus, &d.at.phases, false))
            .collect::<Result<Vec<_>, _>>()?;
        let load_ports = fleet
            .ncl
            .iter()
            .map(|l| port(&feeder, &format!("load@{}.{}", l.bus, l.phase), &l.bus, &[l.phase], true))
            .collect::<Result<Vec<_>, _>>()?;

        let pv_availability = match snap.pv_availability {
            Some(v) => {
                if v.len() != fleet.n_pv() {
                    return Err(DeviceError::AdjustmentCount {
                        kind: "pv availability",
                        expected: fleet.n_pv(),
                        got: v.len(),
                    }
                    .into());
                }
                v
            }
            None => fleet
                .pv
                .iter()
                .map(|pv| PvAvailability::gaussian(pv.forecast_mu, pv.forecast_sigma))
                .collect(),
        };

        let mut x = DVector::zeros(n_x);
        let mut unc = UncertainInjection::certain(n_x);
        let add = |x: &mut DVector<f64>, pt: &Port, dp: f64, dq: f64| {
            for k in 0..pt.p.len() {
                x[pt.p[k]] += dp * pt.share;
                x[pt.q[k]] += dq * pt.share;
            }
        };
        let load_std = |unc: &mut UncertainInjection, pt: &Port, p: f64, tan: f64| {
            let sd = snap.load_std_frac * p.abs() * pt.share;
            if sd > 0.0 {
                for k in 0..pt.p.len() {
                    unc.add_shared(&[pt.p[k], pt.q[k]], &[1.0, tan], 0.0, sd * sd, SourceTag::LoadGaussian);
                }
            }
        };
        for (l, pt) in fleet.ncl.iter().zip(&load_ports) {
            add(&mut x, pt, -l.p, -l.q);
            let tan = if l.p != 0.0 { l.q / l.p } else { 0.0 };
            load_std(&mut unc, pt, l.p, tan);
        }
        for (d, pt) in fleet.controllable_loads.iter().zip(&cl_ports) {
            add(&mut x, pt, -d.p_sched, -d.p_sched * d.tan_theta);
            load_std(&mut unc, pt, d.p_sched, d.tan_theta);
        }
        for (pv, pt) in fleet.pv.iter().zip(&pv_ports) {
            add(&mut x, pt, pv.p_sched(), 0.0);
        }
        for (b, pt) in fleet.bess.iter().zip(&bess_ports) {
            add(&mut x, pt, b.p_sched, b.q_sched);
        }
        match snap.pv_correlation {
            PvCorrelation::Independent => {
                for (av, pt) in pv_availability.iter().zip(&pv_ports) {
                    let sd = av.std_dev();
                    if sd > 0.0 {
                        unc.add_shared(&pt.p, &vec![pt.share; pt.p.len()], 0.0, sd * sd, SourceTag::PvGmm);
                    }
                }
            }
            PvCorrelation::Full => {
                let mut idx = Vec::new();
                let mut w = Vec::new();
                for (av, pt) in pv_availability.iter().zip(&pv_ports) {
                    for &i in &pt.p {
                        idx.push(i);
                        w.push(av.std_dev() * pt.share);
                    }
                }
                if w.iter().any(|&v| v > 0.0) {
                    unc.add_shared(&idx, &w, 0.0, 1.0, SourceTag::PvGmm);
                }
            }
        }

        let base_injection = InjectionVector::from_stacked(&x, sys.n_y());
        let sol = sys.solve(&base_injection)?;
        let s_head = sys.head_power(&sol.v);
        let net_load_p: f64 = -x.rows(0, sys.n_y() / 2).sum() - x.rows(sys.n_y(), sys.n_delta() / 2).sum();
        let net_load_q: f64 =
            -x.rows(sys.n_y() / 2, sys.n_y() / 2).sum() - x.rows(sys.n_y() + sys.n_delta() / 2, sys.n_delta() / 2).sum();
        let model = linearize(sys, &base_injection)?;
        let magnitude = magnitude_affine(&model);

        Ok(FeederState {
            limits: feeder.limits.clone(),
            feeder,
            time: snap.time,
            fleet,
            pv_availability,
            base_injection,
            head: (s_head.re, s_head.im),
            losses: (s_head.re - net_load_p, s_head.im - net_load_q),
            model,
            magnitude,
            uncertainty: unc,
            risk,
            cl_ports,
            pv_ports,
            bess_ports,
            load_ports,
            load_std_frac: snap.load_std_frac,
            pv_correlation: snap.pv_correlation,
        })
    }

    pub fn n_decision(&self) -> usize {
        self.fleet.n_cl() + 2 * self.fleet.n_pv() + 2 * self.fleet.n_bess() + 2
    }

    /// Index of `dP_F`; `dQ_F` follows it.
    pub fn head_var(&self) -> usize {
        self.n_decision() - 2
    }

    /// Map from decision variables to the change of the stacked injection vector.
    pub fn decision_map(&self) -> DMatrix<f64> {
        let n_x = self.feeder.sys.n_x();
        let mut b = DMatrix::zeros(n_x, self.n_decision());
        let mut col = 0;
        for (d, pt) in self.fleet.controllable_loads.iter().zip(&self.cl_ports) {
            for k in 0..pt.p.len() {
                b[(pt.p[k], col)] -= pt.share;
                b[(pt.q[k], col)] -= pt.share * d.tan_theta;
            }
            col += 1;
        }
        for pt in self.pv_ports.iter().chain(&self.bess_ports) {
            for k in 0..pt.p.len() {
                b[(pt.p[k], col)] -= pt.share;
                b[(pt.q[k], col + 1)] -= pt.share;
            }
            col += 2;
        }
        b
    }

    /// Decision vector of a fleet adjustment, with the head changes filled in.
    pub fn decision_vector(&self, adj: &FleetAdjustment) -> Result<DVector<f64>, DrccError> {
        adj.check(&self.fleet)?;
        let mut u = DVector::zeros(self.n_decision());
        let mut col = 0;
        for &d in &adj.cl {
            u[col] = d;
            col += 1;
        }
        for d in adj.pv.iter().chain(&adj.bess) {
            u[col] = d[0];
            u[col + 1] = d[1];
            col += 2;
        }
        let (dp, dq) = crate::devices::fleet_delta_aggregate(&self.fleet, adj)?;
        u[col] = dp;
        u[col + 1] = dq;
        Ok(u)
    }

    pub fn adjustment_from(&self, u: &[f64]) -> FleetAdjustment {
        let mut col = 0;
        let mut adj = FleetAdjustment::zeros(&self.fleet);
        for v in adj.cl.iter_mut() {
            *v = u[col];
            col += 1;
        }
        for v in adj.pv.iter_mut().chain(adj.bess.iter_mut()) {
            *v = [u[col], u[col + 1]];
            col += 2;
        }
        adj
    }

    /// PV curtailed to its chance-tightened ceiling, everything else unchanged.
    pub fn reference_adjustment(&self) -> FleetAdjustment {
        let mut adj = FleetAdjustment::zeros(&self.fleet);
        let k = self.risk.k_p();
        for (a, (pv, av)) in adj.pv.iter_mut().zip(self.fleet.pv.iter().zip(&self.pv_availability)) {
            let p_up = pv_up(pv, av, k);
            *a = [pv.p_sched() - p_up, 0.0];
        }
        adj
    }

    /// Moments of every voltage and current magnitude at the scheduled point.
    pub fn propagation(&self) -> Propagation {
        propagate(&self.magnitude, &self.base_injection.stacked(), &self.uncertainty)
    }

    pub fn base_feeder_point(&self) -> (f64, f64) {
        self.head
    }
}

fn pv_up(pv: &crate::devices::PvUnit, av: &PvAvailability, k: f64) -> f64 {
    let mut unit = pv.clone();
    unit.forecast_mu = av.mean();
    unit.forecast_sigma = av.std_dev();
    pv_tightened_region(&unit, k).p_up
}

/// Direction-independent constraint set for one snapshot (zero objective).
pub fn constraints(state: &FeederState) -> Result<ConicProblem, DrccError> {
    build_constraints(state, true)
}

/// Same constraints with every uncertainty term dropped.
pub fn constraints_deterministic(state: &FeederState) -> Result<ConicProblem, DrccError> {
    build_constraints(state, false)
}

pub fn assemble(state: &FeederState, dir: &SearchDirection) -> Result<ConicProblem, DrccError> {
    let mut p = constraints(state)?;
    set_direction(state, &mut p, dir);
    Ok(p)
}

pub fn set_direction(state: &FeederState, p: &mut ConicProblem, dir: &SearchDirection) {
    p.c.iter_mut().for_each(|c| *c = 0.0);
    let h = state.head_var();
    p.c[h] = dir.lambda_p;
    p.c[h + 1] = dir.lambda_q;
}

fn build_constraints(state: &FeederState, with_uncertainty: bool) -> Result<ConicProblem, DrccError> {
    let fleet = &state.fleet;
    let feeder = &state.feeder;
    let n = state.n_decision();
    let mut p = ConicProblem::new(vec![0.0; n]);
    let zeros = || vec![0.0; n];
    let (k_p, k_v, k_i) = if with_uncertainty {
        (state.risk.k_p(), state.risk.k_v(), state.risk.k_i())
    } else {
        (0.0, 0.0, 0.0)
    };

    // device sets
    let mut col = 0;
    for d in &fleet.controllable_loads {
        p.lower[col] = Some(d.p_low - d.p_sched);
        p.upper[col] = Some(d.p_high - d.p_sched);
        col += 1;
    }
    for (pv, av) in fleet.pv.iter().zip(&state.pv_availability) {
        let p_bar = pv.p_sched();
        let region = if with_uncertainty {
            let mut unit = pv.clone();
            unit.forecast_mu = av.mean();
            unit.forecast_sigma = av.std_dev();
            pv_tightened_region(&unit, k_p)
        } else {
            let mut unit = pv.clone();
            unit.forecast_mu = av.mean();
            unit.forecast_sigma = 0.0;
            pv_tightened_region(&unit, 0.0)
        };
        // output P = p_bar - dp in [0, p_up]
        p.lower[col] = Some(p_bar - region.p_up);
        p.upper[col] = Some(p_bar);
        let mut f0 = zeros();
        f0[col] = -1.0;
        let mut f1 = zeros();
        f1[col + 1] = -1.0;
        p.soc.push(SocBlock {
            f: vec![f0, f1],
            g: vec![p_bar, 0.0],
            d: zeros(),
            h: region.s_rating,
            label: format!("pv:{}:rating", pv.id),
        });
        if let Some(cap) = region.q_cap {
            p.lower[col + 1] = Some(-cap);
            p.upper[col + 1] = Some(cap);
        }
        if let Some(t) = region.pf_tan {
            // |dq| <= t (p_bar - dp)
            for sgn in [1.0, -1.0] {
                let mut r = zeros();
                r[col + 1] = sgn;
                r[col] = t;
                p.ineq.push(LinearRow::new(r, t * p_bar, format!("pv:{}:pf", pv.id)));
            }
        }
        col += 2;
    }
    for b in &fleet.bess {
        let mut f0 = zeros();
        f0[col] = -1.0;
        let mut f1 = zeros();
        f1[col + 1] = -1.0;
        p.soc.push(SocBlock {
            f: vec![f0, f1],
            g: vec![b.p_sched, b.q_sched],
            d: zeros(),
            h: b.s_rating,
            label: format!("bess:{}:rating", b.id),
        });
        if let Some([lo, hi]) = b.p_energy_bounds {
            // output P = p_sched - dp in [lo, hi]
            p.lower[col] = Some(b.p_sched - hi);
            p.upper[col] = Some(b.p_sched - lo);
        }
        col += 2;
    }

    // feeder-head balance
    let h = state.head_var();
    let mut bal_p = zeros();
    let mut bal_q = zeros();
    let mut c = 0;
    for d in &fleet.controllable_loads {
        bal_p[c] = 1.0;
        bal_q[c] = d.tan_theta;
        c += 1;
    }
    while c < h {
        bal_p[c] = 1.0;
        bal_q[c + 1] = 1.0;
        c += 2;
    }
    bal_p[h] = -1.0;
    bal_q[h + 1] = -1.0;
    p.eq.push(LinearRow::new(bal_p, 0.0, "balance:p"));
    p.eq.push(LinearRow::new(bal_q, 0.0, "balance:q"));

    // network limits, tightened by the propagated spread
    let b_map = state.decision_map();
    let x0 = state.base_injection.stacked();
    let mu = &state.uncertainty.mu;
    let shifted = &x0 + mu;
    let support = state.uncertainty.support();
    let cov = &state.uncertainty.cov;
    let sys = &feeder.sys;
    let lim = &state.limits;

    let mv = &state.magnitude.voltage;
    let v_mean = mv.eval(&shifted);
    let v_coef = &mv.coeff * &b_map;
    let v_std = if with_uncertainty {
        row_std(&mv.coeff, cov, &support)
    } else {
        DVector::zeros(mv.len())
    };
    for &t in sys.load_terminals() {
        let label = feeder.terminal_label(t);
        let row: Vec<f64> = v_coef.row(t).iter().copied().collect();
        let spread = k_v * v_std[t];
        p.ineq.push(LinearRow::new(row.clone(), lim.v_max[t] - spread - v_mean[t], format!("vmax:{label}")));
        p.ineq.push(LinearRow::new(
            row.iter().map(|v| -v).collect(),
            v_mean[t] - spread - lim.v_min[t],
            format!("vmin:{label}"),
        ));
    }

    let mi = &state.magnitude.current;
    let i_mean = mi.eval(&shifted);
    let i_coef = &mi.coeff * &b_map;
    let i_std = if with_uncertainty {
        row_std(&mi.coeff, cov, &support)
    } else {
        DVector::zeros(mi.len())
    };
    let n_cplx = state.model.current_matrix();
    for r in 0..mi.len() {
        let label = format!("imax:{}", feeder.line_row_label(r));
        if !state.magnitude.low_current[r] {
            let row: Vec<f64> = i_coef.row(r).iter().copied().collect();
            p.ineq.push(LinearRow::new(row, lim.i_max[r] - k_i * i_std[r] - i_mean[r], label));
            continue;
        }
        let re = DMatrix::from_fn(1, n_cplx.ncols(), |_, j| n_cplx[(r, j)].re);
        let im = DMatrix::from_fn(1, n_cplx.ncols(), |_, j| n_cplx[(r, j)].im);
        let sigma_rad = if with_uncertainty { radial_std(&re, &im, cov) } else { 0.0 };
        let beta = state.model.beta[r];
        let g_re = beta.re + (&re * &shifted)[(0, 0)];
        let g_im = beta.im + (&im * &shifted)[(0, 0)];
        let f_re = (&re * &b_map).row(0).iter().copied().collect();
        let f_im = (&im * &b_map).row(0).iter().copied().collect();
        p.soc.push(SocBlock {
            f: vec![f_re, f_im],
            g: vec![g_re, g_im],
            d: zeros(),
            h: lim.i_max[r] - k_i * sigma_rad,
            label,
        });
    }

    let u_ref = state.decision_vector(&state.reference_adjustment())?;
    check_reference(&p, u_ref.as_slice())?;
    Ok(p)
}

/// Shifts the network rows of a problem so the affine magnitudes match a
/// nonlinear power flow at a given decision, keeping the sensitivities.
#[derive(Debug, Clone)]
pub struct NetworkCorrection {
    template: ConicProblem,
    voltage: Vec<(usize, usize, usize)>,
    current: Vec<(usize, usize)>,
    current_soc: Vec<(usize, usize)>,
}

impl NetworkCorrection {
    pub fn new(state: &FeederState, template: &ConicProblem) -> Self {
        let feeder = &state.feeder;
        let ineq: std::collections::HashMap<&str, usize> =
            template.ineq.iter().enumerate().map(|(i, r)| (r.label.as_str(), i)).collect();
        let soc: std::collections::HashMap<&str, usize> =
            template.soc.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
        let mut voltage = Vec::new();
        for &t in feeder.sys.load_terminals() {
            let label = feeder.terminal_label(t);
            if let (Some(&hi), Some(&lo)) = (ineq.get(format!("vmax:{label}").as_str()), ineq.get(format!("vmin:{label}").as_str())) {
                voltage.push((t, hi, lo));
            }
        }
        let mut current = Vec::new();
        let mut current_soc = Vec::new();
        for r in 0..state.limits.i_max.len() {
            let label = format!("imax:{}", feeder.line_row_label(r));
            if let Some(&i) = ineq.get(label.as_str()) {
                current.push((r, i));
            } else if let Some(&i) = soc.get(label.as_str()) {
                current_soc.push((r, i));
            }
        }
        NetworkCorrection {
            template: template.clone(),
            voltage,
            current,
            current_soc,
        }
    }

    /// Copy of the template corrected at decision `u`, and the largest
    /// magnitude mismatch found there.
    pub fn at(&self, state: &FeederState, u: &DVector<f64>) -> Result<(ConicProblem, f64), DrccError> {
        let sys = &state.feeder.sys;
        let x = state.base_injection.stacked() + &state.uncertainty.mu + state.decision_map() * u;
        let sol = sys.solve(&InjectionVector::from_stacked(&x, sys.n_y()))?;
        let v_lin = state.magnitude.voltage.eval(&x);
        let i_lin = state.magnitude.current.eval(&x);
        let cur = sys.line_currents(&sol.v);
        let mut p = self.template.clone();
        let mut worst = 0.0_f64;
        for &(t, hi, lo) in &self.voltage {
            let d = sol.v[t].norm() - v_lin[t];
            p.ineq[hi].rhs -= d;
            p.ineq[lo].rhs += d;
            worst = worst.max(d.abs());
        }
        for &(r, i) in &self.current {
            let d = cur[r].norm() - i_lin[r];
            p.ineq[i].rhs -= d;
            worst = worst.max(d.abs());
        }
        if !self.current_soc.is_empty() {
            let n = state.model.current_matrix();
            for &(r, i) in &self.current_soc {
                let lin = state.model.beta[r] + (0..x.len()).map(|j| n[(r, j)] * x[j]).sum::<num_complex::Complex64>();
                let d = cur[r] - lin;
                p.soc[i].g[0] += d.re;
                p.soc[i].g[1] += d.im;
                worst = worst.max(d.norm());
            }
        }
        p.c.clone_from(&self.template.c);
        Ok((p, worst))
    }
}

fn check_reference(p: &ConicProblem, u: &[f64]) -> Result<(), DrccError> {
    let mut worst: Option<(String, f64)> = None;
    let mut note = |label: &str, v: f64| {
        if v > BASE_FEAS_TOL && worst.as_ref().is_none_or(|w| v > w.1) {
            worst = Some((label.to_string(), v));
        }
    };
    for r in &p.ineq {
        note(&r.label, r.eval(u) - r.rhs);
    }
    for b in &p.soc {
        note(&b.label, -b.margin(u));
    }
    for (j, &v) in u.iter().enumerate() {
        if let Some(l) = p.lower[j] {
            note(&format!("bound:{j}"), l - v);
        }
        if let Some(h) = p.upper[j] {
            note(&format!("bound:{j}"), v - h);
        }
    }
    match worst {
        Some((constraint, violation)) => Err(DrccError::BaseInfeasible { constraint, violation }),
        None => Ok(()),
    }
}

/// Labels of constraints active at the solution.
pub fn binding_constraints(state: &FeederState, p: &ConicProblem, sol: &Solution) -> Vec<String> {
    let tol = 1e-6;
    let x = &sol.x;
    if x.is_empty() {
        return Vec::new();
    }
    let mut tags = Vec::new();
    for r in &p.ineq {
        if r.rhs - r.eval(x) <= tol * (1.0 + r.rhs.abs()) {
            tags.push(r.label.clone());
        }
    }
    for b in &p.soc {
        if b.margin(x) <= tol * (1.0 + b.h.abs()) {
            tags.push(b.label.clone());
        }
    }
    let names = variable_names(state);
    for (j, &v) in x.iter().enumerate() {
        let lo = p.lower[j];
        let hi = p.upper[j];
        if lo == hi {
            continue;
        }
        if lo.is_some_and(|l| v - l <= tol * (1.0 + l.abs())) {
            tags.push(format!("{}:min", names[j]));
        }
        if hi.is_some_and(|h| h - v <= tol * (1.0 + h.abs())) {
            tags.push(format!("{}:max", names[j]));
        }
    }
    tags.sort();
    tags.dedup();
    tags
}

/// Human-readable name of every decision variable.
pub fn variable_names(state: &FeederState) -> Vec<String> {
    let f = &state.fleet;
    let mut v: Vec<String> = f.controllable_loads.iter().map(|d| format!("cl:{}:p", d.id)).collect();
    for d in &f.pv {
        v.push(format!("pv:{}:p", d.id));
        v.push(format!("pv:{}:q", d.id));
    }
    for d in &f.bess {
        v.push(format!("bess:{}:p", d.id));
        v.push(format!("bess:{}:q", d.id));
    }
    v.push("head:p".into());
    v.push("head:q".into());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_directions() {
        let d = direction_set(4).unwrap();
        let got: Vec<(f64, f64)> = d.iter().map(|d| (d.lambda_p, d.lambda_q)).collect();
        assert_eq!(got, vec![(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]);
    }

    #[test]
    fn thirty_two_directions_unit_and_distinct() {
        let d = direction_set(32).unwrap();
        for (i, a) in d.iter().enumerate() {
            assert!((a.lambda_p.hypot(a.lambda_q) - 1.0).abs() < 1e-12);
            for b in &d[i + 1..] {
                assert!((a.lambda_p - b.lambda_p).abs() + (a.lambda_q - b.lambda_q).abs() > 1e-3);
            }
        }
        assert_eq!((d[0].lambda_p, d[0].lambda_q), (1.0, 0.0));
    }

    #[test]
    fn too_few_directions() {
        assert!(matches!(direction_set(2), Err(DrccError::TooFewDirections(2))));
    }

    #[test]
    fn nested_direction_sets_share_directions() {
        let d8 = direction_set(8).unwrap();
        let d16 = direction_set(16).unwrap();
        for (m, a) in d8.iter().enumerate() {
            let b = d16[2 * m];
            assert_eq!((a.lambda_p, a.lambda_q), (b.lambda_p, b.lambda_q));
        }
    }
}
