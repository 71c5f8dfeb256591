//! Monte-Carlo estimate of constraint-violation frequencies at a decision,
//! using full nonlinear power flows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::FleetAdjustment;
use crate::drcc::{DrccError, FeederState, PvCorrelation};
use crate::powerflow::InjectionVector;

pub const DEFAULT_SAMPLES: usize = 10_000;

const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub label: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadError {
    /// Mean of |realized head P - (scheduled head P + dP_F)|, per unit.
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Same, after removing the realized injection deviation, so only the
    /// loss change remains.
    pub mean_abs_losses: f64,
    /// Scheduled total load (per unit) used as the reference for `mean_abs`.
    pub base_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n_samples: usize,
    pub seed: u64,
    pub voltage: Vec<Frequency>,
    pub current: Vec<Frequency>,
    pub pv: Vec<Frequency>,
    pub max_voltage_rate: f64,
    pub max_current_rate: f64,
    pub max_pv_rate: f64,
    pub nonconvergence: usize,
    pub head_p_error: HeadError,
}

struct Sample {
    converged: bool,
    v_bad: Vec<bool>,
    i_bad: Vec<bool>,
    pv_bad: Vec<bool>,
    head_err: f64,
    head_err_losses: f64,
}

/// Runs `n` sampled power flows at the adjustment `adj`. Sample `i` draws
/// from its own stream of the seed, so reports do not depend on `jobs`.
pub fn monte_carlo_check(
    state: &FeederState,
    adj: &FleetAdjustment,
    n: usize,
    seed: u64,
    jobs: usize,
) -> Result<ViolationReport, DrccError> {
    let u = state.decision_vector(adj)?;
    let sys = &state.feeder.sys;
    let b_map = state.decision_map();
    let h = state.head_var();
    let x_dec = state.base_injection.stacked() + &b_map * &u;
    let predicted_head = state.head.0 + u[h];
    let fleet = &state.fleet;
    let n_y = sys.n_y();

    // PV setpoints and the injection entries they feed
    let pv_set: Vec<f64> = fleet.pv.iter().zip(&adj.pv).map(|(pv, d)| pv.p_sched() - d[0]).collect();

    // load error entries: (p index, q index, std, tan)
    let mut load_terms = Vec::new();
    for (l, pt) in fleet.ncl.iter().zip(&state.load_ports) {
        let tan = if l.p != 0.0 { l.q / l.p } else { 0.0 };
        for k in 0..pt.p.len() {
            load_terms.push((pt.p[k], pt.q[k], state.load_std_frac * l.p.abs() * pt.share, tan));
        }
    }
    for (d, pt) in fleet.controllable_loads.iter().zip(&state.cl_ports) {
        for k in 0..pt.p.len() {
            load_terms.push((pt.p[k], pt.q[k], state.load_std_frac * d.p_sched.abs() * pt.share, d.tan_theta));
        }
    }

    let one = |i: usize| -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut x = x_dec.clone();
        let mut deviation = 0.0;
        for &(ip, iq, sd, tan) in &load_terms {
            if sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let e = sd * z;
                x[ip] -= e;
                x[iq] -= e * tan;
                deviation += e;
            }
        }
        let shared = match state.pv_correlation {
            PvCorrelation::Full => Some(rng_draw_unit(&mut rng)),
            PvCorrelation::Independent => None,
        };
        let mut pv_bad = vec![false; fleet.n_pv()];
        for (j, (av, pt)) in state.pv_availability.iter().zip(&state.pv_ports).enumerate() {
            let avail = match shared {
                Some(q) => av.offset - av.scale * av.error.quantile(q),
                None => av.offset - av.scale * av.error.draw(&mut rng),
            };
            let avail = avail.max(0.0);
            let set = pv_set[j];
            if avail < set - LIMIT_TOL * (1.0 + set.abs()) {
                pv_bad[j] = true;
                let short = set - avail;
                for &k in &pt.p {
                    x[k] -= short * pt.share;
                }
                deviation += short;
            }
        }
        let inj = InjectionVector::from_stacked(&x, n_y);
        match sys.solve(&inj) {
            Ok(sol) => {
                let v_bad = sys
                    .load_terminals()
                    .iter()
                    .map(|&t| {
                        let m = sol.v[t].norm();
                        m > state.limits.v_max[t] + LIMIT_TOL || m < state.limits.v_min[t] - LIMIT_TOL
                    })
                    .collect();
                let cur = sys.line_currents(&sol.v);
                let i_bad = cur
                    .iter()
                    .zip(&state.limits.i_max)
                    .map(|(c, &lim)| c.norm() > lim + LIMIT_TOL)
                    .collect();
                let head = sys.head_power(&sol.v).re;
                Sample {
                    converged: true,
                    v_bad,
                    i_bad,
                    pv_bad,
                    head_err: (head - predicted_head).abs(),
                    head_err_losses: (head - predicted_head - deviation).abs(),
                }
            }
            Err(_) => Sample {
                converged: false,
                v_bad: vec![true; sys.load_terminals().len()],
                i_bad: vec![true; state.limits.i_max.len()],
                pv_bad,
                head_err: f64::NAN,
                head_err_losses: f64::NAN,
            },
        }
    };

    let samples: Vec<Sample> = if jobs <= 1 {
        (0..n).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build();
        match pool {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(one).collect()),
            Err(_) => (0..n).map(one).collect(),
        }
    };

    let nf = n.max(1) as f64;
    let count = |f: &dyn Fn(&Sample) -> &Vec<bool>, len: usize| -> Vec<f64> {
        let mut c = vec![0usize; len];
        for s in &samples {
            for (k, &b) in f(s).iter().enumerate() {
                c[k] += b as usize;
            }
        }
        c.into_iter().map(|v| v as f64 / nf).collect()
    };
    let v_rate = count(&|s| &s.v_bad, sys.load_terminals().len());
    let i_rate = count(&|s| &s.i_bad, state.limits.i_max.len());
    let pv_rate = count(&|s| &s.pv_bad, fleet.n_pv());
    let feeder = &state.feeder;
    let voltage: Vec<Frequency> = sys
        .load_terminals()
        .iter()
        .zip(&v_rate)
        .map(|(&t, &rate)| Frequency {
            label: feeder.terminal_label(t),
            rate,
        })
        .collect();
    let current: Vec<Frequency> = i_rate
        .iter()
        .enumerate()
        .map(|(r, &rate)| Frequency {
            label: feeder.line_row_label(r),
            rate,
        })
        .collect();
    let pv: Vec<Frequency> = fleet
        .pv
        .iter()
        .zip(&pv_rate)
        .map(|(d, &rate)| Frequency {
            label: d.id.clone(),
            rate,
        })
        .collect();
    let ok: Vec<&Sample> = samples.iter().filter(|s| s.converged).collect();
    let nk = ok.len().max(1) as f64;
    let base_load: f64 = fleet.ncl.iter().map(|l| l.p).sum::<f64>() + fleet.controllable_loads.iter().map(|d| d.p_sched).sum::<f64>();
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(ViolationReport {
        n_samples: n,
        seed,
        max_voltage_rate: max(&v_rate),
        max_current_rate: max(&i_rate),
        max_pv_rate: max(&pv_rate),
        voltage,
        current,
        pv,
        nonconvergence: samples.len() - ok.len(),
        head_p_error: HeadError {
            mean_abs: ok.iter().map(|s| s.head_err).sum::<f64>() / nk,
            max_abs: ok.iter().map(|s| s.head_err).fold(0.0, f64::max),
            mean_abs_losses: ok.iter().map(|s| s.head_err_losses).sum::<f64>() / nk,
            base_load,
        },
    })
}

fn rng_draw_unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}
