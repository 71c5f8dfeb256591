use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::cone::{Cones, Scaling};
use super::{ConicProblem, SocpError, Solution, Status};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Looser tolerance accepted when progress stalls before the tight
    /// tolerances are met.
    pub reduced_tol: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            feastol: 1e-8,
            abstol: 1e-8,
            reltol: 1e-8,
            reduced_tol: 1e-6,
            max_iter: 100,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterInfo {
    pub iter: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

/// Solves with all three tolerances set to `tol`.
pub fn solve(p: &ConicProblem, tol: f64, max_iter: usize) -> Result<Solution, SocpError> {
    solve_with(
        p,
        &Settings {
            feastol: tol,
            abstol: tol,
            reltol: tol,
            reduced_tol: tol.sqrt().min(1e-6).max(tol),
            max_iter,
            record_history: false,
        },
    )
}

enum RowKind {
    Ineq(usize),
    Bound,
}

/// The problem after presolve, in minimization form.
struct Standard {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    cones: Cones,
    vars: Vec<usize>,
    fixed: Vec<Option<f64>>,
    eq_rows: Vec<(usize, f64)>,
    lin_rows: Vec<(RowKind, f64)>,
    soc_rows: Vec<(usize, usize, f64)>,
}

enum Presolved {
    Ready(Standard),
    Infeasible,
    Trivial(Vec<f64>),
}

fn presolve(p: &ConicProblem) -> Presolved {
    let n = p.n_vars();
    let mut fixed = vec![None; n];
    for j in 0..n {
        if let (Some(l), Some(u)) = (p.lower[j], p.upper[j]) {
            if l > u {
                return Presolved::Infeasible;
            }
            if l == u {
                fixed[j] = Some(l);
            }
        }
    }
    let vars: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let x_fixed: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    if vars.is_empty() {
        return if p.max_violation(&x_fixed) <= 1e-9 {
            Presolved::Trivial(x_fixed)
        } else {
            Presolved::Infeasible
        };
    }
    let nv = vars.len();
    let reduce = |coef: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let shift: f64 = coef.iter().zip(&x_fixed).map(|(a, b)| a * b).sum();
        (vars.iter().map(|&j| coef[j]).collect(), rhs - shift)
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let zero_tol = 1e-9;
    // rows whose coefficients are round-off are treated as constant
    let tiny = 1e-10;

    let mut a_rows = Vec::new();
    let mut eq_rows = Vec::new();
    for (i, r) in p.eq.iter().enumerate() {
        let (coef, rhs) = reduce(&r.coef, r.rhs);
        let nu = norm(&coef);
        if nu <= tiny {
            if rhs.abs() > zero_tol {
                return Presolved::Infeasible;
            }
            continue;
        }
        a_rows.push((coef.iter().map(|v| v / nu).collect::<Vec<_>>(), rhs / nu));
        eq_rows.push((i, nu));
    }

    let mut g_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut lin_rows = Vec::new();
    for (i, r) in p.ineq.iter().enumerate() {
        let (coef, rhs) = reduce(&r.coef, r.rhs);
        let nu = norm(&coef);
        if nu <= tiny {
            if rhs < -zero_tol {
                return Presolved::Infeasible;
            }
            continue;
        }
        g_rows.push((coef.iter().map(|v| v / nu).collect(), rhs / nu));
        lin_rows.push((RowKind::Ineq(i), nu));
    }
    for (k, &j) in vars.iter().enumerate() {
        if let Some(u) = p.upper[j].filter(|u| u.is_finite()) {
            let mut row = vec![0.0; nv];
            row[k] = 1.0;
            g_rows.push((row, u));
            lin_rows.push((RowKind::Bound, 1.0));
        }
        if let Some(l) = p.lower[j].filter(|l| l.is_finite()) {
            let mut row = vec![0.0; nv];
            row[k] = -1.0;
            g_rows.push((row, -l));
            lin_rows.push((RowKind::Bound, 1.0));
        }
    }
    let l = g_rows.len();

    let mut q = Vec::new();
    let mut soc_rows = Vec::new();
    for (i, blk) in p.soc.iter().enumerate() {
        let (d, h0) = reduce(&blk.d, blk.h);
        let fr: Vec<(Vec<f64>, f64)> = blk.f.iter().zip(&blk.g).map(|(r, &g)| reduce(r, -g)).collect();
        let scale = d
            .iter()
            .chain(fr.iter().flat_map(|(r, _)| r.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if scale <= tiny {
            let gn = fr.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
            if h0 < gn - zero_tol {
                return Presolved::Infeasible;
            }
            continue;
        }
        soc_rows.push((i, l + q.iter().sum::<usize>(), scale));
        // s = (d.x + h, F x + g) enters as  -[d; F] x + s = [h; g]
        g_rows.push((d.iter().map(|v| -v / scale).collect(), h0 / scale));
        for (r, neg_g) in fr {
            g_rows.push((r.iter().map(|v| -v / scale).collect(), -neg_g / scale));
        }
        q.push(1 + blk.f.len());
    }

    let mk = |rows: &[(Vec<f64>, f64)]| {
        let a = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        (a, b)
    };
    let (a, b) = mk(&a_rows);
    let (g, h) = mk(&g_rows);
    Presolved::Ready(Standard {
        c: DVector::from_iterator(nv, vars.iter().map(|&j| -p.c[j])),
        a,
        b,
        g,
        h,
        cones: Cones { l, q },
        vars,
        fixed,
        eq_rows,
        lin_rows,
        soc_rows,
    })
}

struct Kkt<'a> {
    st: &'a Standard,
    w: &'a Scaling,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dense: DMatrix<f64>,
}

impl<'a> Kkt<'a> {
    fn new(st: &'a Standard, w: &'a Scaling) -> Self {
        let n = st.c.len();
        let p = st.a.nrows();
        let gram = w.gram_inv_sq(&st.cones, &st.g);
        let delta = 1e-11 * (1.0 + gram.amax());
        let mut m = DMatrix::zeros(n + p, n + p);
        m.view_mut((0, 0), (n, n)).copy_from(&gram);
        m.view_mut((0, n), (n, p)).copy_from(&st.a.transpose());
        m.view_mut((n, 0), (p, n)).copy_from(&st.a);
        let dense = m.clone();
        for i in 0..n {
            m[(i, i)] += delta;
        }
        for i in n..n + p {
            m[(i, i)] -= delta;
        }
        Kkt {
            st,
            w,
            lu: m.lu(),
            dense,
        }
    }

    fn reduced(&self, rx: &DVector<f64>, ry: &DVector<f64>, rz: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = rx.len();
        let p = ry.len();
        let cones = &self.st.cones;
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(rx + self.st.g.transpose() * self.w.inv_sq(cones, rz)));
        rhs.rows_mut(n, p).copy_from(ry);
        let mut sol = self.lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + p));
        for _ in 0..3 {
            let res = &rhs - &self.dense * &sol;
            if res.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            if let Some(corr) = self.lu.solve(&res) {
                sol += corr;
            }
        }
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, p).into_owned();
        let dz = self.w.inv_sq(cones, &(&self.st.g * &dx - rz));
        (dx, dy, dz)
    }

    /// Solves `[0 A' G'; A 0 0; G 0 -W^2] d = r` with refinement on the full system.
    fn solve(&self, rx: &DVector<f64>, ry: &DVector<f64>, rz: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy, mut dz) = self.reduced(rx, ry, rz);
        let st = self.st;
        let cones = &st.cones;
        for _ in 0..2 {
            let ex = rx - (st.a.transpose() * &dy + st.g.transpose() * &dz);
            let ey = ry - &st.a * &dx;
            let w2dz = self.w.apply(cones, &self.w.apply(cones, &dz, false), false);
            let ez = rz - (&st.g * &dx - w2dz);
            let scale = 1.0 + rx.amax().max(ry.amax()).max(rz.amax());
            if ex.amax().max(ey.amax()).max(ez.amax()) <= 1e-14 * scale {
                break;
            }
            let (cx, cy, cz) = self.reduced(&ex, &ey, &ez);
            dx += cx;
            dy += cy;
            dz += cz;
        }
        (dx, dy, dz)
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Stats {
    pcost: f64,
    dcost: f64,
    gap: f64,
    pres: f64,
    dres: f64,
    relgap: f64,
}

fn stats(st: &Standard, it: &Iterate) -> Stats {
    let t = it.tau;
    let xh = &it.x / t;
    let zh = &it.z / t;
    let yh = &it.y / t;
    let sh = &it.s / t;
    let pres_eq = if st.a.nrows() > 0 { (&st.a * &xh - &st.b).norm() } else { 0.0 };
    let pres_in = if st.g.nrows() > 0 { (&st.g * &xh + &sh - &st.h).norm() } else { 0.0 };
    let pres = pres_eq.max(pres_in) / (1.0 + st.b.norm().max(st.h.norm()));
    let dres = (st.a.transpose() * &yh + st.g.transpose() * &zh + &st.c).norm() / (1.0 + st.c.norm());
    let pcost = st.c.dot(&xh);
    let dcost = -(st.b.dot(&yh) + st.h.dot(&zh));
    let gap = sh.dot(&zh);
    let relgap = gap / pcost.abs().max(dcost.abs()).max(1.0);
    Stats {
        pcost,
        dcost,
        gap,
        pres,
        dres,
        relgap,
    }
}

pub fn solve_with(p: &ConicProblem, settings: &Settings) -> Result<Solution, SocpError> {
    p.validate()?;
    let st = match presolve(p) {
        Presolved::Ready(st) => st,
        Presolved::Infeasible => return Ok(empty(p, Status::Infeasible)),
        Presolved::Trivial(x) => {
            let mut sol = empty(p, Status::Optimal);
            sol.objective = p.objective(&x);
            sol.x = x;
            return Ok(sol);
        }
    };
    let cones = &st.cones;
    let m = cones.dim();
    let degree = cones.degree() as f64;
    let e = cones.identity();

    let mut it = {
        let ident = Scaling::new(cones, &e, &e);
        let kkt = Kkt::new(&st, &ident);
        let (x, _, z) = kkt.solve(&DVector::zeros(st.c.len()), &st.b, &st.h);
        let s = cones.shift_inside(&(-z));
        let (_, y, z) = kkt.solve(&(-&st.c), &DVector::zeros(st.b.len()), &DVector::zeros(m));
        let z = cones.shift_inside(&z);
        Iterate {
            x,
            y,
            z,
            s,
            tau: 1.0,
            kappa: 1.0,
        }
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, Iterate, Stats)> = None;
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut final_iter: Option<(Iterate, Stats)> = None;
    let mut since_best = 0;
    let meets = |s: &Stats, tol: f64| s.pres < tol && s.dres < tol && (s.gap < tol || s.relgap < tol);

    for k in 0..=settings.max_iter {
        iterations = k;
        let r1 = st.a.transpose() * &it.y + st.g.transpose() * &it.z + &st.c * it.tau;
        let r2 = &st.a * &it.x - &st.b * it.tau;
        let r3 = &it.s + &st.g * &it.x - &st.h * it.tau;
        let r4 = it.kappa + st.c.dot(&it.x) + st.b.dot(&it.y) + st.h.dot(&it.z);
        let sts = stats(&st, &it);
        if settings.record_history {
            history.push(IterInfo {
                iter: k,
                pcost: -sts.pcost,
                dcost: -sts.dcost,
                gap: sts.gap,
                pres: sts.pres,
                dres: sts.dres,
                tau: it.tau,
                kappa: it.kappa,
                step: 0.0,
            });
        }
        if !(sts.pres.is_finite() && sts.dres.is_finite() && sts.gap.is_finite()) {
            break;
        }
        let merit = sts.pres.max(sts.dres).max(sts.relgap.min(sts.gap));
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, clone_it(&it), stats(&st, &it)));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if sts.pres < settings.feastol
            && sts.dres < settings.feastol
            && (sts.gap < settings.abstol || sts.relgap < settings.reltol)
        {
            status = Status::Optimal;
            final_iter = Some((it, sts));
            break;
        }
        if since_best >= 5 && best.as_ref().is_some_and(|b| meets(&b.2, settings.reduced_tol)) {
            break;
        }
        let hz_by = st.h.dot(&it.z) + st.b.dot(&it.y);
        if hz_by < 0.0 {
            let ray = (st.a.transpose() * &it.y + st.g.transpose() * &it.z).norm();
            if ray <= settings.feastol * -hz_by && it.kappa > it.tau * 1e-3 {
                status = Status::Infeasible;
                break;
            }
        }
        let cx = st.c.dot(&it.x);
        if cx < 0.0 {
            let pr = (&st.a * &it.x).norm().max((&st.g * &it.x + &it.s).norm());
            if pr <= settings.feastol * -cx && it.kappa > it.tau * 1e-3 {
                status = Status::Unbounded;
                break;
            }
        }
        if k == settings.max_iter {
            break;
        }

        let w = Scaling::new(cones, &it.s, &it.z);
        let lambda = w.lambda.clone();
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (degree + 1.0);
        let kkt = Kkt::new(&st, &w);
        let (x1, y1, z1) = kkt.solve(&(-&st.c), &st.b, &st.h);
        let denom_base = st.c.dot(&x1) + st.b.dot(&y1) + st.h.dot(&z1) - it.kappa / it.tau;

        let direction = |eta: f64, ds_c: &DVector<f64>, dk_c: f64| {
            let u = -cones.jordan_div(&lambda, ds_c);
            let wu = w.apply(cones, &u, false);
            let (x0, y0, z0) = kkt.solve(&(-&r1 * eta), &(-&r2 * eta), &(-&r3 * eta - &wu));
            let num = -eta * r4 + dk_c / it.tau - (st.c.dot(&x0) + st.b.dot(&y0) + st.h.dot(&z0));
            let dtau = num / denom_base;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let dz = z0 + &z1 * dtau;
            let ds = w.apply(cones, &(&u - w.apply(cones, &dz, false)), false);
            let dkappa = -(dk_c + it.kappa * dtau) / it.tau;
            (dx, dy, dz, ds, dtau, dkappa)
        };
        let step_len = |dz: &DVector<f64>, ds: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = cones.max_step(&it.s, ds, 1.0).min(cones.max_step(&it.z, dz, 1.0));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        let ll = cones.jordan_product(&lambda, &lambda);
        let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(1.0, &ll, it.tau * it.kappa);
        let alpha_a = step_len(&dz_a, &ds_a, dtau_a, dkappa_a);
        let sigma = (1.0 - alpha_a).clamp(0.0, 1.0).powi(3);

        let corr = cones.jordan_product(&w.apply(cones, &ds_a, true), &w.apply(cones, &dz_a, false));
        let ds_c = ll + corr - &e * (sigma * mu);
        let dk_c = it.tau * it.kappa + dtau_a * dkappa_a - sigma * mu;
        let (dx, dy, dz, ds, dtau, dkappa) = direction(1.0 - sigma, &ds_c, dk_c);
        let alpha = (0.99 * step_len(&dz, &ds, dtau, dkappa)).min(1.0);
        if let Some(h) = history.last_mut() {
            h.step = alpha;
        }
        if !(alpha > 1e-12) || !alpha.is_finite() {
            break;
        }
        it.x += dx * alpha;
        it.y += dy * alpha;
        it.z += dz * alpha;
        it.s += ds * alpha;
        it.tau += dtau * alpha;
        it.kappa += dkappa * alpha;
    }

    if status == Status::MaxIter && best.as_ref().is_some_and(|b| meets(&b.2, settings.reduced_tol)) {
        status = Status::Optimal;
    }
    let (it, sts) = match (status, final_iter, best) {
        (Status::Optimal, Some(f), _) => f,
        (Status::MaxIter | Status::Optimal, _, Some((_, b, s))) => (b, s),
        (_, _, _) => {
            let mut sol = empty(p, status);
            sol.iterations = iterations;
            sol.history = history;
            return Ok(sol);
        }
    };
    Ok(recover(p, &st, &it, &sts, status, iterations, history))
}

fn clone_it(it: &Iterate) -> Iterate {
    Iterate {
        x: it.x.clone(),
        y: it.y.clone(),
        z: it.z.clone(),
        s: it.s.clone(),
        tau: it.tau,
        kappa: it.kappa,
    }
}

fn empty(p: &ConicProblem, status: Status) -> Solution {
    Solution {
        status,
        x: Vec::new(),
        objective: match status {
            Status::Infeasible => f64::NEG_INFINITY,
            Status::Unbounded => f64::INFINITY,
            _ => f64::NAN,
        },
        primal_residual: 0.0,
        dual_residual: 0.0,
        gap: 0.0,
        iterations: 0,
        dual_eq: vec![0.0; p.eq.len()],
        dual_ineq: vec![0.0; p.ineq.len()],
        dual_soc: vec![0.0; p.soc.len()],
        history: Vec::new(),
    }
}

fn recover(
    p: &ConicProblem,
    st: &Standard,
    it: &Iterate,
    sts: &Stats,
    status: Status,
    iterations: usize,
    history: Vec<IterInfo>,
) -> Solution {
    let mut x: Vec<f64> = st.fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    for (k, &j) in st.vars.iter().enumerate() {
        x[j] = it.x[k] / it.tau;
    }
    let mut sol = empty(p, status);
    for (r, &(i, nu)) in st.eq_rows.iter().enumerate() {
        sol.dual_eq[i] = it.y[r] / it.tau / nu;
    }
    for (r, (kind, nu)) in st.lin_rows.iter().enumerate() {
        if let RowKind::Ineq(i) = kind {
            sol.dual_ineq[*i] = it.z[r] / it.tau / nu;
        }
    }
    for &(i, off, scale) in &st.soc_rows {
        sol.dual_soc[i] = it.z[off] / it.tau / scale;
    }
    sol.objective = p.objective(&x);
    sol.x = x;
    sol.primal_residual = sts.pres;
    sol.dual_residual = sts.dres;
    sol.gap = sts.gap;
    sol.iterations = iterations;
    sol.history = history;
    sol
}
