//! Fixed-point three-phase power flow and its fixed-point linearization.
//!
//! Terminals are split into the slack (feeder head) terminals, whose voltage
//! is held at nominal, and the remaining "load" terminals. With `Z = Y_LL^-1`
//! and the no-load voltage `w = -Z Y_L0 V_0`, the iteration is
//!
//! ```text
//! V <- w + Z * ( conj(s_Y / V) + H' conj(s_D / (H V)) )
//! ```
//!
//! where `H` maps terminal voltages to delta branch voltages. Evaluating the
//! right-hand side with the base solution frozen in the denominators gives
//! an affine model in the injections that is exact both at the base point
//! and at zero load.
//!
//! Injection vectors use a compact layout: `x_Y = [p; q]` over the non-slack
//! terminals and `x_D = [p; q]` over the delta branches. Positive values are
//! generation; loads enter as negative injections.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{
    validate_network, Connection, NetError, NetworkModel, PerUnitBase, Phase, ResolvedLine,
    TerminalIndex,
};

type C = Complex64;

const J: C = C::new(0.0, 1.0);

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Branch currents below this magnitude (p.u.) have no usable phase
/// reference for the magnitude projection.
pub const LOW_CURRENT_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (last mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("injection vector has dimension ({got_y}, {got_delta}); expected ({want_y}, {want_delta})")]
    Dimension {
        got_y: usize,
        got_delta: usize,
        want_y: usize,
        want_delta: usize,
    },
    #[error("invalid network: {0}")]
    Network(#[from] NetError),
}

/// Nodal injections of Y- and delta-connected sources (p.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    pub x_y: DVector<f64>,
    pub x_delta: DVector<f64>,
}

impl InjectionVector {
    pub fn zeros(n_y: usize, n_delta: usize) -> Self {
        InjectionVector {
            x_y: DVector::zeros(n_y),
            x_delta: DVector::zeros(n_delta),
        }
    }

    /// `[x_Y; x_D]` as one vector; the layout every affine model uses.
    pub fn stacked(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x_y.len() + self.x_delta.len());
        v.rows_mut(0, self.x_y.len()).copy_from(&self.x_y);
        v.rows_mut(self.x_y.len(), self.x_delta.len())
            .copy_from(&self.x_delta);
        v
    }

    pub fn from_stacked(v: &DVector<f64>, n_y: usize) -> Self {
        InjectionVector {
            x_y: v.rows(0, n_y).into_owned(),
            x_delta: v.rows(n_y, v.len() - n_y).into_owned(),
        }
    }
}

impl std::ops::Add for &InjectionVector {
    type Output = InjectionVector;
    fn add(self, rhs: &InjectionVector) -> InjectionVector {
        InjectionVector {
            x_y: &self.x_y + &rhs.x_y,
            x_delta: &self.x_delta + &rhs.x_delta,
        }
    }
}

/// A delta branch spanning terminal `from` (phase p) to `to` (phase p+1).
#[derive(Debug, Clone, Copy)]
pub struct DeltaBranch {
    pub bus: usize,
    pub phase: Phase,
    pub from: usize,
    pub to: usize,
}

/// Factored network ready for repeated power flows. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct PowerFlowSystem {
    pub terminals: TerminalIndex,
    pub base: PerUnitBase,
    slack_terms: Vec<usize>,
    load_terms: Vec<usize>,
    load_pos: Vec<Option<usize>>,
    v_slack: DVector<C>,
    y_ll: DMatrix<C>,
    y_l0: DMatrix<C>,
    y_0l: DMatrix<C>,
    y_00: DMatrix<C>,
    z_ll: DMatrix<C>,
    w: DVector<C>,
    lines: Vec<ResolvedLine>,
    line_rows: Vec<(usize, Phase)>,
    delta: Vec<DeltaBranch>,
}

#[derive(Debug, Clone)]
pub struct PfSolution {
    /// Complex voltage at every terminal (p.u.), slack included.
    pub v: DVector<C>,
    pub iterations: usize,
    pub mismatch: f64,
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSystem {
    pub fn new(net: &NetworkModel) -> Result<Self, PowerFlowError> {
        let diags = validate_network(net);
        if !diags.is_empty() {
            return Err(NetError::Invalid(diags).into());
        }
        let terminals = TerminalIndex::new(net);
        let base = net.per_unit();
        let mut lines = net.resolve_lines(&terminals)?;
        for rl in &mut lines {
            rl.y_series *= C::new(base.z_ohm, 0.0);
        }
        let y = crate::netmodel::stamp(terminals.len(), net, &lines);

        let slack = net.slack_bus().expect("validated network has a slack bus");
        let mut slack_terms = Vec::new();
        let mut load_terms = Vec::new();
        let mut load_pos = vec![None; terminals.len()];
        for (t, term) in terminals.terminals().iter().enumerate() {
            if term.bus == slack {
                slack_terms.push(t);
            } else {
                load_pos[t] = Some(load_terms.len());
                load_terms.push(t);
            }
        }
        let v_slack = DVector::from_iterator(
            slack_terms.len(),
            slack_terms
                .iter()
                .map(|&t| C::from_polar(1.0, terminals.terminals()[t].phase.nominal_angle())),
        );
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[(rows[r], cols[c])])
        };
        let y_ll = pick(&load_terms, &load_terms);
        let y_l0 = pick(&load_terms, &slack_terms);
        let y_0l = pick(&slack_terms, &load_terms);
        let y_00 = pick(&slack_terms, &slack_terms);
        let z_ll = y_ll
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| PowerFlowError::Network(NetError::Invalid(Vec::new())))?;
        let w = -(&z_ll * (&y_l0 * &v_slack));

        let mut delta = Vec::new();
        for (b, bus) in net.buses.iter().enumerate() {
            if b == slack || bus.connection != Connection::Delta {
                continue;
            }
            for &phase in &Phase::ALL {
                let from = load_pos[terminals.get(b, phase).unwrap()].unwrap();
                let to = load_pos[terminals.get(b, phase.next()).unwrap()].unwrap();
                delta.push(DeltaBranch { bus: b, phase, from, to });
            }
        }

        let line_rows = lines
            .iter()
            .flat_map(|rl| rl.phases.iter().map(move |&p| (rl.line, p)))
            .collect();

        Ok(PowerFlowSystem {
            terminals,
            base,
            slack_terms,
            load_terms,
            load_pos,
            v_slack,
            y_ll,
            y_l0,
            y_0l,
            y_00,
            z_ll,
            w,
            lines,
            line_rows,
            delta,
        })
    }

    pub fn n_terminals(&self) -> usize {
        self.terminals.len()
    }

    /// Length of `x_Y` (twice the number of non-slack terminals).
    pub fn n_y(&self) -> usize {
        2 * self.load_terms.len()
    }

    /// Length of `x_D` (twice the number of delta branches).
    pub fn n_delta(&self) -> usize {
        2 * self.delta.len()
    }

    pub fn n_x(&self) -> usize {
        self.n_y() + self.n_delta()
    }

    pub fn slack_terminals(&self) -> &[usize] {
        &self.slack_terms
    }

    pub fn load_terminals(&self) -> &[usize] {
        &self.load_terms
    }

    /// Position of terminal `t` among the non-slack terminals.
    pub fn load_position(&self, t: usize) -> Option<usize> {
        self.load_pos[t]
    }

    pub fn delta_branches(&self) -> &[DeltaBranch] {
        &self.delta
    }

    /// Index into `x_D` of the delta branch at (bus, phase), if any.
    pub fn delta_position(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.delta.iter().position(|d| d.bus == bus && d.phase == phase)
    }

    /// `(line index, phase)` for each row of a branch-current vector.
    pub fn line_rows(&self) -> &[(usize, Phase)] {
        &self.line_rows
    }

    pub fn zero_injection(&self) -> InjectionVector {
        InjectionVector::zeros(self.n_y(), self.n_delta())
    }

    fn check_dims(&self, inj: &InjectionVector) -> Result<(), PowerFlowError> {
        if inj.x_y.len() != self.n_y() || inj.x_delta.len() != self.n_delta() {
            return Err(PowerFlowError::Dimension {
                got_y: inj.x_y.len(),
                got_delta: inj.x_delta.len(),
                want_y: self.n_y(),
                want_delta: self.n_delta(),
            });
        }
        Ok(())
    }

    fn complex_injections(&self, inj: &InjectionVector) -> (DVector<C>, DVector<C>) {
        let nl = self.load_terms.len();
        let nd = self.delta.len();
        let s_y = DVector::from_fn(nl, |i, _| C::new(inj.x_y[i], inj.x_y[nl + i]));
        let s_d = DVector::from_fn(nd, |i, _| C::new(inj.x_delta[i], inj.x_delta[nd + i]));
        (s_y, s_d)
    }

    /// Source current injected at each non-slack terminal for voltages `v_l`.
    fn source_current(&self, v_l: &DVector<C>, s_y: &DVector<C>, s_d: &DVector<C>) -> DVector<C> {
        let mut i = DVector::from_fn(v_l.len(), |k, _| (s_y[k] / v_l[k]).conj());
        for (b, br) in self.delta.iter().enumerate() {
            let ib = (s_d[b] / (v_l[br.from] - v_l[br.to])).conj();
            i[br.from] += ib;
            i[br.to] -= ib;
        }
        i
    }

    fn full_voltage(&self, v_l: &DVector<C>) -> DVector<C> {
        let mut v = DVector::zeros(self.n_terminals());
        for (k, &t) in self.slack_terms.iter().enumerate() {
            v[t] = self.v_slack[k];
        }
        for (k, &t) in self.load_terms.iter().enumerate() {
            v[t] = v_l[k];
        }
        v
    }

    fn load_part(&self, v: &DVector<C>) -> DVector<C> {
        DVector::from_iterator(self.load_terms.len(), self.load_terms.iter().map(|&t| v[t]))
    }

    /// Largest power mismatch |V_k| * |I_net,k - I_src,k| over non-slack terminals.
    fn mismatch(&self, v_l: &DVector<C>, s_y: &DVector<C>, s_d: &DVector<C>) -> f64 {
        let i_net = &self.y_ll * v_l + &self.y_l0 * &self.v_slack;
        let i_src = self.source_current(v_l, s_y, s_d);
        (0..v_l.len())
            .map(|k| v_l[k].norm() * (i_net[k] - i_src[k]).norm())
            .fold(0.0, f64::max)
    }

    /// Voltages at zero injection everywhere.
    pub fn no_load_voltage(&self) -> DVector<C> {
        self.full_voltage(&self.w)
    }

    /// Branch currents (p.u., from-end, one row per line phase).
    pub fn line_currents(&self, v: &DVector<C>) -> DVector<C> {
        let mut out = DVector::zeros(self.line_rows.len());
        let mut row = 0;
        for rl in &self.lines {
            let k = rl.phases.len();
            let dv = DVector::from_fn(k, |i, _| v[rl.from_terms[i]] - v[rl.to_terms[i]]);
            let i = &rl.y_series * dv;
            out.rows_mut(row, k).copy_from(&i);
            row += k;
        }
        out
    }

    /// Complex power drawn from the grid at the feeder head (p.u., summed over phases).
    pub fn head_power(&self, v: &DVector<C>) -> C {
        let v_l = self.load_part(v);
        let i0 = &self.y_0l * v_l + &self.y_00 * &self.v_slack;
        (0..self.slack_terms.len())
            .map(|k| self.v_slack[k] * i0[k].conj())
            .sum()
    }

    pub fn solve(&self, inj: &InjectionVector) -> Result<PfSolution, PowerFlowError> {
        solve_fixed_point(self, inj, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

/// Runs the fixed-point iteration from the no-load voltage until the power
/// mismatch at every non-slack terminal is below `tol`.
pub fn solve_fixed_point(
    sys: &PowerFlowSystem,
    inj: &InjectionVector,
    tol: f64,
    max_iter: usize,
) -> Result<PfSolution, PowerFlowError> {
    sys.check_dims(inj)?;
    let (s_y, s_d) = sys.complex_injections(inj);
    let mut v_l = sys.w.clone();
    let mut history = Vec::new();
    let mut mismatch = sys.mismatch(&v_l, &s_y, &s_d);
    let mut iterations = 0;
    while !(mismatch < tol) {
        if iterations >= max_iter || !mismatch.is_finite() {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch,
            });
        }
        let i_src = sys.source_current(&v_l, &s_y, &s_d);
        v_l = &sys.w + &sys.z_ll * i_src;
        iterations += 1;
        mismatch = sys.mismatch(&v_l, &s_y, &s_d);
        history.push(mismatch);
        // a collapsed voltage means the loading is beyond what the feeder can carry
        if v_l.iter().any(|v| !(v.norm() > 1e-3)) {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: if mismatch.is_finite() { mismatch } else { f64::INFINITY },
            });
        }
    }
    Ok(PfSolution {
        v: sys.full_voltage(&v_l),
        iterations,
        mismatch,
        mismatch_history: history,
    })
}

/// Affine voltage and branch-current model
/// `V(x) = M_Y x_Y + M_D x_D + alpha`, `I(x) = N_Y x_Y + N_D x_D + beta`.
#[derive(Debug, Clone)]
pub struct SensitivityModel {
    pub m_y: DMatrix<C>,
    pub m_delta: DMatrix<C>,
    pub alpha: DVector<C>,
    pub n_y: DMatrix<C>,
    pub n_delta: DMatrix<C>,
    pub beta: DVector<C>,
    pub base_point: InjectionVector,
    pub base_v: DVector<C>,
    pub base_i: DVector<C>,
}

impl SensitivityModel {
    pub fn n_x(&self) -> usize {
        self.m_y.ncols() + self.m_delta.ncols()
    }

    fn check(&self, x: &InjectionVector) -> Result<(), PowerFlowError> {
        if x.x_y.len() != self.m_y.ncols() || x.x_delta.len() != self.m_delta.ncols() {
            return Err(PowerFlowError::Dimension {
                got_y: x.x_y.len(),
                got_delta: x.x_delta.len(),
                want_y: self.m_y.ncols(),
                want_delta: self.m_delta.ncols(),
            });
        }
        Ok(())
    }

    /// `[M_Y | M_D]`, the voltage sensitivity over the stacked injection vector.
    pub fn voltage_matrix(&self) -> DMatrix<C> {
        hstack(&self.m_y, &self.m_delta)
    }

    pub fn current_matrix(&self) -> DMatrix<C> {
        hstack(&self.n_y, &self.n_delta)
    }
}

fn hstack(a: &DMatrix<C>, b: &DMatrix<C>) -> DMatrix<C> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

fn to_complex(x: &DVector<f64>) -> DVector<C> {
    x.map(|v| C::new(v, 0.0))
}

pub fn predict_voltage(model: &SensitivityModel, x: &InjectionVector) -> Result<DVector<C>, PowerFlowError> {
    model.check(x)?;
    Ok(&model.m_y * to_complex(&x.x_y) + &model.m_delta * to_complex(&x.x_delta) + &model.alpha)
}

pub fn predict_current(model: &SensitivityModel, x: &InjectionVector) -> Result<DVector<C>, PowerFlowError> {
    model.check(x)?;
    Ok(&model.n_y * to_complex(&x.x_y) + &model.n_delta * to_complex(&x.x_delta) + &model.beta)
}

/// Builds the fixed-point linearization around the solution at `base`.
pub fn linearize(sys: &PowerFlowSystem, base: &InjectionVector) -> Result<SensitivityModel, PowerFlowError> {
    let sol = solve_fixed_point(sys, base, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let v_hat = sol.v;
    let nt = sys.n_terminals();
    let nl = sys.load_terms.len();
    let nd = sys.delta.len();

    let mut m_y = DMatrix::<C>::zeros(nt, 2 * nl);
    for j in 0..nl {
        let inv = C::new(1.0, 0.0) / v_hat[sys.load_terms[j]].conj();
        for (r, &t) in sys.load_terms.iter().enumerate() {
            let col = sys.z_ll[(r, j)] * inv;
            m_y[(t, j)] = col;
            m_y[(t, nl + j)] = -J * col;
        }
    }
    let mut m_delta = DMatrix::<C>::zeros(nt, 2 * nd);
    for (b, br) in sys.delta.iter().enumerate() {
        let vb = v_hat[sys.load_terms[br.from]] - v_hat[sys.load_terms[br.to]];
        let inv = C::new(1.0, 0.0) / vb.conj();
        for (r, &t) in sys.load_terms.iter().enumerate() {
            let col = (sys.z_ll[(r, br.from)] - sys.z_ll[(r, br.to)]) * inv;
            m_delta[(t, b)] = col;
            m_delta[(t, nd + b)] = -J * col;
        }
    }
    let alpha = sys.no_load_voltage();

    let n_y = branch_map(sys, &m_y);
    let n_delta = branch_map(sys, &m_delta);
    let beta = sys.line_currents(&alpha);
    let base_i = sys.line_currents(&v_hat);

    Ok(SensitivityModel {
        m_y,
        m_delta,
        alpha,
        n_y,
        n_delta,
        beta,
        base_point: base.clone(),
        base_v: v_hat,
        base_i,
    })
}

/// Applies the branch current map `I = Y_series (V_from - V_to)` row-wise to a
/// voltage sensitivity matrix.
fn branch_map(sys: &PowerFlowSystem, m: &DMatrix<C>) -> DMatrix<C> {
    let mut out = DMatrix::zeros(sys.line_rows.len(), m.ncols());
    let mut row = 0;
    for rl in &sys.lines {
        let k = rl.phases.len();
        let dv = DMatrix::from_fn(k, m.ncols(), |i, c| m[(rl.from_terms[i], c)] - m[(rl.to_terms[i], c)]);
        out.rows_mut(row, k).copy_from(&(&rl.y_series * dv));
        row += k;
    }
    out
}

/// Real affine functionals `f(x) = offset + coeff * x` over the stacked
/// injection vector.
#[derive(Debug, Clone)]
pub struct AffineRows {
    pub offset: DVector<f64>,
    pub coeff: DMatrix<f64>,
}

impl AffineRows {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.coeff * x
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }
}

/// Magnitude projections of the complex model onto the base-point phasors.
#[derive(Debug, Clone)]
pub struct MagnitudeModel {
    pub voltage: AffineRows,
    pub current: AffineRows,
    /// Branch-current rows whose base current is below [`LOW_CURRENT_FLOOR`].
    pub low_current: Vec<bool>,
}

/// `|V_n|(x) ~ Re(conj(u_n) V_n(x))` with `u_n = V0_n / |V0_n|`, and the same
/// construction for branch currents.
pub fn magnitude_affine(model: &SensitivityModel) -> MagnitudeModel {
    let (voltage, _) = project(&model.voltage_matrix(), &model.alpha, &model.base_v, 0.0);
    let (current, low_current) = project(&model.current_matrix(), &model.beta, &model.base_i, LOW_CURRENT_FLOOR);
    MagnitudeModel {
        voltage,
        current,
        low_current,
    }
}

fn project(m: &DMatrix<C>, offset: &DVector<C>, base: &DVector<C>, floor: f64) -> (AffineRows, Vec<bool>) {
    let rows = m.nrows();
    let mut low = vec![false; rows];
    let mut coeff = DMatrix::zeros(rows, m.ncols());
    let mut off = DVector::zeros(rows);
    for r in 0..rows {
        let mag = base[r].norm();
        let u = if mag > 0.0 { base[r] / mag } else { C::new(1.0, 0.0) };
        if mag <= floor {
            low[r] = true;
        }
        let uc = u.conj();
        off[r] = (uc * offset[r]).re;
        for c in 0..m.ncols() {
            coeff[(r, c)] = (uc * m[(r, c)]).re;
        }
    }
    (AffineRows { offset: off, coeff }, low)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Base, Bus, Line};

    /// Single-phase two-bus network with z = `z_pu` p.u.
    fn two_bus(z_pu: C) -> NetworkModel {
        let base = Base {
            base_kv: 3f64.sqrt(),
            base_kva: 3000.0,
        };
        let z_base = PerUnitBase::from(base).z_ohm;
        NetworkModel {
            base,
            buses: vec![Bus::new("s", &[Phase::A]).slack(), Bus::new("l", &[Phase::A])],
            lines: vec![Line::new("L", "s", "l", &DMatrix::from_element(1, 1, z_pu * z_base), 100.0)],
        }
    }

    #[test]
    fn zero_injection_is_no_load() {
        let sys = PowerFlowSystem::new(&two_bus(C::new(0.01, 0.0))).unwrap();
        let sol = sys.solve(&sys.zero_injection()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!((&sol.v - sys.no_load_voltage()).norm() < 1e-15);
    }

    #[test]
    fn two_bus_matches_quadratic() {
        // V (1 - V) / z = P  for a purely resistive line with real load P.
        let z = 0.01;
        let p = 0.1;
        let sys = PowerFlowSystem::new(&two_bus(C::new(z, 0.0))).unwrap();
        let mut inj = sys.zero_injection();
        inj.x_y[0] = -p;
        let sol = solve_fixed_point(&sys, &inj, 1e-12, 200).unwrap();
        let exact = (1.0 + (1.0 - 4.0 * z * p).sqrt()) / 2.0;
        assert!((sol.v[1].re - exact).abs() < 1e-9);
        assert!(sol.v[1].im.abs() < 1e-9);
    }

    #[test]
    fn overload_does_not_converge() {
        // maximum loadability of the resistive two-bus case is 1 / (4 z)
        let sys = PowerFlowSystem::new(&two_bus(C::new(0.01, 0.0))).unwrap();
        let mut inj = sys.zero_injection();
        inj.x_y[0] = -30.0;
        match sys.solve(&inj) {
            Err(PowerFlowError::NonConvergence { mismatch, .. }) => assert!(mismatch > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let sys = PowerFlowSystem::new(&two_bus(C::new(0.01, 0.0))).unwrap();
        let model = linearize(&sys, &sys.zero_injection()).unwrap();
        let bad = InjectionVector::zeros(5, 0);
        assert!(matches!(predict_voltage(&model, &bad), Err(PowerFlowError::Dimension { .. })));
        assert!(matches!(
            solve_fixed_point(&sys, &bad, 1e-8, 10),
            Err(PowerFlowError::Dimension { .. })
        ));
    }

    #[test]
    fn linear_model_at_zero_load_is_no_load() {
        let sys = PowerFlowSystem::new(&two_bus(C::new(0.02, 0.01))).unwrap();
        let model = linearize(&sys, &sys.zero_injection()).unwrap();
        assert_eq!(model.alpha, sys.no_load_voltage());
        let v0 = predict_voltage(&model, &sys.zero_injection()).unwrap();
        assert_eq!(v0, model.alpha);
    }

    #[test]
    fn magnitude_with_real_base_reduces_to_real_part() {
        let sys = PowerFlowSystem::new(&two_bus(C::new(0.01, 0.0))).unwrap();
        let mut base = sys.zero_injection();
        base.x_y[0] = -0.1;
        let model = linearize(&sys, &base).unwrap();
        let mag = magnitude_affine(&model);
        let mut x = base.clone();
        x.x_y[0] = -0.1003;
        let v = predict_voltage(&model, &x).unwrap();
        let f = mag.voltage.eval(&x.stacked());
        // base voltage has zero angle on a resistive line with real load
        assert!(model.base_v[1].im.abs() < 1e-12);
        assert!((f[1] - v[1].re).abs() < 1e-12);
    }
}
