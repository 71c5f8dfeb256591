use nalgebra::{DMatrix, DVector};

/// Product cone: `l` nonnegative coordinates followed by Lorentz cones.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cones {
    pub l: usize,
    pub q: Vec<usize>,
}

impl Cones {
    pub fn dim(&self) -> usize {
        self.l + self.q.iter().sum::<usize>()
    }

    pub fn degree(&self) -> usize {
        self.l + self.q.len()
    }

    /// `(offset, size)` of each Lorentz block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.q.iter().scan(self.l, |off, &m| {
            let o = *off;
            *off += m;
            Some((o, m))
        })
    }

    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        e.rows_mut(0, self.l).fill(1.0);
        for (o, _) in self.blocks() {
            e[o] = 1.0;
        }
        e
    }

    /// Smallest `a` such that `v + a e` lies in the closed cone.
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        let mut a = f64::NEG_INFINITY;
        for i in 0..self.l {
            a = a.max(-v[i]);
        }
        for (o, m) in self.blocks() {
            a = a.max(v.rows(o + 1, m - 1).norm() - v[o]);
        }
        a
    }

    /// Moves `v` strictly inside the cone.
    pub fn shift_inside(&self, v: &DVector<f64>) -> DVector<f64> {
        let a = self.violation(v);
        if a < 0.0 {
            v.clone()
        } else {
            v + self.identity() * (1.0 + a)
        }
    }

    pub fn jordan_product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for i in 0..self.l {
            out[i] = u[i] * v[i];
        }
        for (o, m) in self.blocks() {
            let u1 = u.rows(o + 1, m - 1);
            let v1 = v.rows(o + 1, m - 1);
            out[o] = u.rows(o, m).dot(&v.rows(o, m));
            out.rows_mut(o + 1, m - 1).copy_from(&(v1 * u[o] + u1 * v[o]));
        }
        out
    }

    /// Solves `lambda o x = r` for `x`.
    pub fn jordan_div(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(r.len());
        for i in 0..self.l {
            out[i] = r[i] / lambda[i];
        }
        for (o, m) in self.blocks() {
            let l0 = lambda[o];
            let l1 = lambda.rows(o + 1, m - 1);
            let r1 = r.rows(o + 1, m - 1);
            let det = l0 * l0 - l1.norm_squared();
            let x0 = (l0 * r[o] - l1.dot(&r1)) / det;
            out[o] = x0;
            out.rows_mut(o + 1, m - 1).copy_from(&((r1 - l1 * x0) / l0));
        }
        out
    }

    /// Largest step `a` (capped at `cap`) keeping `v + a dv` in the cone.
    pub fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>, cap: f64) -> f64 {
        let mut a = cap;
        for i in 0..self.l {
            if dv[i] < 0.0 {
                a = a.min(-v[i] / dv[i]);
            }
        }
        for (o, m) in self.blocks() {
            let x1 = v.rows(o + 1, m - 1);
            let d1 = dv.rows(o + 1, m - 1);
            let qa = dv[o] * dv[o] - d1.norm_squared();
            let qb = v[o] * dv[o] - x1.dot(&d1);
            let qc = (v[o] * v[o] - x1.norm_squared()).max(0.0);
            if let Some(r) = smallest_positive_root(qa, qb, qc) {
                a = a.min(r);
            }
            if dv[o] < 0.0 {
                a = a.min(-v[o] / dv[o]);
            }
        }
        a.max(0.0)
    }
}

/// Smallest positive root of `qa t^2 + 2 qb t + qc`, given `qc >= 0`.
fn smallest_positive_root(qa: f64, qb: f64, qc: f64) -> Option<f64> {
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if scale == 0.0 {
        return None;
    }
    if qa.abs() <= 1e-14 * scale {
        return (qb < 0.0).then(|| -qc / (2.0 * qb));
    }
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let q = -(qb + qb.signum() * sq);
    let mut best: Option<f64> = None;
    for r in [q / qa, if q != 0.0 { qc / q } else { f64::NAN }] {
        if r.is_finite() && r > 0.0 {
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
    }
    best
}

#[derive(Debug, Clone)]
struct SocScaling {
    eta: f64,
    w: DVector<f64>,
}

/// Nesterov-Todd scaling `W` with `W z = W^{-1} s = lambda`.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    lp: DVector<f64>,
    soc: Vec<SocScaling>,
    pub lambda: DVector<f64>,
}

impl Scaling {
    pub fn new(cones: &Cones, s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let lp = DVector::from_fn(cones.l, |i, _| (s[i] / z[i]).sqrt());
        let mut soc = Vec::with_capacity(cones.q.len());
        for (o, m) in cones.blocks() {
            let sb = s.rows(o, m);
            let zb = z.rows(o, m);
            let sjs = (sb[0] * sb[0] - sb.rows(1, m - 1).norm_squared()).max(f64::MIN_POSITIVE);
            let zjz = (zb[0] * zb[0] - zb.rows(1, m - 1).norm_squared()).max(f64::MIN_POSITIVE);
            let sn = sb / sjs.sqrt();
            let zn = zb / zjz.sqrt();
            let gamma = ((1.0 + sn.dot(&zn)) / 2.0).sqrt();
            let mut w = DVector::zeros(m);
            w[0] = (sn[0] + zn[0]) / (2.0 * gamma);
            for k in 1..m {
                w[k] = (sn[k] - zn[k]) / (2.0 * gamma);
            }
            soc.push(SocScaling {
                eta: (sjs / zjz).powf(0.25),
                w,
            });
        }
        let mut sc = Scaling {
            lp,
            soc,
            lambda: DVector::zeros(0),
        };
        sc.lambda = sc.apply(cones, z, false);
        sc
    }

    /// `W v`, or `W^{-1} v` when `inverse`.
    pub fn apply(&self, cones: &Cones, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for i in 0..cones.l {
            out[i] = if inverse { v[i] / self.lp[i] } else { v[i] * self.lp[i] };
        }
        for ((o, m), sc) in cones.blocks().zip(&self.soc) {
            let w0 = sc.w[0];
            let w1 = sc.w.rows(1, m - 1);
            let v0 = v[o];
            let v1 = v.rows(o + 1, m - 1);
            let d = w1.dot(&v1);
            let (sign, f) = if inverse { (-1.0, 1.0 / sc.eta) } else { (1.0, sc.eta) };
            out[o] = f * (w0 * v0 + sign * d);
            let coef = sign * v0 + d / (1.0 + w0);
            out.rows_mut(o + 1, m - 1).copy_from(&((v1 + w1 * coef) * f));
        }
        out
    }

    /// Accumulates `G' W^{-2} G` and returns it.
    pub fn gram_inv_sq(&self, cones: &Cones, g: &DMatrix<f64>) -> DMatrix<f64> {
        let n = g.ncols();
        let mut out = DMatrix::zeros(n, n);
        if cones.l > 0 {
            let gl = g.rows(0, cones.l);
            let scaled = DMatrix::from_fn(cones.l, n, |i, j| gl[(i, j)] / self.lp[i]);
            out += scaled.transpose() * &scaled;
        }
        for ((o, m), _) in cones.blocks().zip(&self.soc) {
            // W^{-1} G_block, column by column
            let gb = g.rows(o, m).into_owned();
            let mut wg = DMatrix::zeros(m, n);
            for j in 0..n {
                let mut col = DVector::zeros(cones.dim());
                col.rows_mut(o, m).copy_from(&gb.column(j));
                let c = self.apply(cones, &col, true);
                wg.column_mut(j).copy_from(&c.rows(o, m));
            }
            out += wg.transpose() * &wg;
        }
        out
    }

    /// `W^{-2} v`.
    pub fn inv_sq(&self, cones: &Cones, v: &DVector<f64>) -> DVector<f64> {
        let t = self.apply(cones, v, true);
        self.apply(cones, &t, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cones() -> Cones {
        Cones { l: 2, q: vec![3, 2] }
    }

    fn interior_pair() -> (DVector<f64>, DVector<f64>) {
        let s = DVector::from_vec(vec![0.5, 2.0, 3.0, 1.0, -2.0, 1.5, 0.4]);
        let z = DVector::from_vec(vec![1.5, 0.1, 2.0, -0.3, 1.2, 0.7, -0.6]);
        (s, z)
    }

    #[test]
    fn nt_scaling_maps_both_to_lambda() {
        let k = cones();
        let (s, z) = interior_pair();
        let w = Scaling::new(&k, &s, &z);
        let from_s = w.apply(&k, &s, true);
        assert!((&from_s - &w.lambda).amax() < 1e-12);
        let round = w.apply(&k, &w.apply(&k, &z, false), true);
        assert!((&round - &z).amax() < 1e-12);
    }

    #[test]
    fn jordan_division_inverts_product() {
        let k = cones();
        let (s, z) = interior_pair();
        let p = k.jordan_product(&s, &z);
        let back = k.jordan_div(&s, &p);
        assert!((&back - &z).amax() < 1e-12);
    }

    #[test]
    fn step_to_boundary() {
        let k = Cones { l: 0, q: vec![2] };
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let dv = DVector::from_vec(vec![0.0, 1.0]);
        assert!((k.max_step(&v, &dv, 10.0) - 1.0).abs() < 1e-12);
        let up = DVector::from_vec(vec![1.0, 0.5]);
        assert_eq!(k.max_step(&v, &up, 10.0), 10.0);
    }

    #[test]
    fn shift_makes_interior() {
        let k = cones();
        let v = DVector::from_vec(vec![-1.0, 0.0, 0.0, 3.0, 0.0, 1.0, 1.0]);
        let s = k.shift_inside(&v);
        assert!(k.violation(&s) < 0.0);
    }
}
