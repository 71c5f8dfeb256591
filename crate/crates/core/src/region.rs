//! Multi-directional boundary search producing the feeder-head flexibility
//! polygon.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::FleetAdjustment;
use crate::drcc::{
    binding_constraints, constraints, direction_set, set_direction, DrccError, FeederState, NetworkCorrection, SearchDirection,
};
use crate::socp::{self, Status};

#[derive(Debug, Error)]
pub enum RegionError {
    #[error(transparent)]
    Drcc(#[from] DrccError),
    #[error(transparent)]
    Solver(#[from] socp::SocpError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilons {
    pub eps_p: f64,
    pub eps_v: f64,
    pub eps_i: f64,
}

/// Result of one direction solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexInfo {
    pub direction: [f64; 2],
    pub status: Status,
    /// `None` when the solve produced no usable point.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub binding: Vec<String>,
    /// Nonlinear re-solves used to correct the network rows.
    pub corrections: usize,
    /// Largest |affine - nonlinear| magnitude left at the vertex (per unit).
    pub model_mismatch: Option<f64>,
    /// Device adjustments at the vertex (per unit, feeder-draw convention).
    pub decision: Option<FleetAdjustment>,
}

/// Aggregated flexibility polygon of one snapshot. Positive P and Q are
/// power drawn from the grid at the feeder head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexPolygon {
    pub time: String,
    pub k_total: usize,
    pub epsilons: Epsilons,
    /// Scheduled head point `(P, Q)` in kW / kvar.
    pub base: [f64; 2],
    pub base_pu: [f64; 2],
    /// Vertices in direction order, kW / kvar.
    pub vertices: Vec<[f64; 2]>,
    pub vertices_pu: Vec<[f64; 2]>,
    /// Area in kW x kvar.
    pub area: f64,
    pub area_pu: f64,
    pub degenerate: bool,
    pub diagnostics: Vec<String>,
    pub binding: Vec<Vec<String>>,
    pub vertex_info: Vec<VertexInfo>,
    /// kVA per per-unit power.
    pub s_base_kva: f64,
}

impl FlexPolygon {
    pub fn p_range(&self) -> (f64, f64) {
        range(self.vertices.iter().map(|v| v[0]))
    }

    pub fn q_range(&self) -> (f64, f64) {
        range(self.vertices.iter().map(|v| v[1]))
    }

    pub fn statuses(&self) -> Vec<Status> {
        self.vertex_info.iter().map(|v| v.status).collect()
    }
}

fn range(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Absolute area of a simple polygon with ordered vertices.
pub fn shoelace_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, RegionError> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| RegionError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Solves every direction and joins the vertices in direction order.
/// Knobs for [`estimate_region_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    pub k_total: usize,
    pub jobs: usize,
    /// Maximum number of network-row corrections per direction; 0 keeps the
    /// single linearization at the base point.
    pub max_corrections: usize,
    /// Corrections stop once the vertex moves less than this (per unit).
    pub correction_tol: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions {
            k_total: 32,
            jobs: 1,
            max_corrections: 8,
            correction_tol: 1e-9,
        }
    }
}

pub fn estimate_region(state: &FeederState, k_total: usize, jobs: usize) -> Result<FlexPolygon, RegionError> {
    estimate_region_with(
        state,
        &RegionOptions {
            k_total,
            jobs,
            ..RegionOptions::default()
        },
    )
}

pub fn estimate_region_with(state: &FeederState, opts: &RegionOptions) -> Result<FlexPolygon, RegionError> {
    let (k_total, jobs) = (opts.k_total, opts.jobs);
    let dirs = direction_set(k_total)?;
    let template = constraints(state)?;
    let correction = (opts.max_corrections > 0).then(|| NetworkCorrection::new(state, &template));
    let h = state.head_var();
    let usable = |sol: &socp::Solution| matches!(sol.status, Status::Optimal | Status::MaxIter) && !sol.x.is_empty();
    let solve_one = |dir: &SearchDirection| -> Result<(VertexInfo, Option<[f64; 2]>), RegionError> {
        let mut p = template.clone();
        set_direction(state, &mut p, dir);
        let mut sol = socp::solve(&p, 1e-8, 100)?;
        let mut corrections = 0;
        let mut mismatch = None;
        if let Some(corr) = &correction {
            while usable(&sol) {
                let u = nalgebra::DVector::from_column_slice(&sol.x);
                let (mut q, worst) = corr.at(state, &u)?;
                mismatch = Some(worst);
                if corrections == opts.max_corrections {
                    break;
                }
                set_direction(state, &mut q, dir);
                let next = socp::solve(&q, 1e-8, 100)?;
                corrections += 1;
                if !usable(&next) {
                    sol = next;
                    p = q;
                    break;
                }
                let moved = (next.x[h] - sol.x[h]).hypot(next.x[h + 1] - sol.x[h + 1]);
                sol = next;
                p = q;
                if moved <= opts.correction_tol {
                    let u = nalgebra::DVector::from_column_slice(&sol.x);
                    mismatch = Some(corr.at(state, &u)?.1);
                    break;
                }
            }
        }
        let ok = usable(&sol);
        let point = ok.then(|| [state.head.0 + sol.x[h], state.head.1 + sol.x[h + 1]]);
        Ok((
            VertexInfo {
                direction: [dir.lambda_p, dir.lambda_q],
                status: sol.status,
                objective: ok.then(|| dir.lambda_p * (state.head.0 + sol.x[h]) + dir.lambda_q * (state.head.1 + sol.x[h + 1])),
                iterations: sol.iterations,
                binding: binding_constraints(state, &p, &sol),
                corrections,
                model_mismatch: mismatch,
                decision: ok.then(|| state.adjustment_from(&sol.x)),
            },
            point,
        ))
    };
    let results: Vec<_> = with_pool(jobs, || {
        if jobs <= 1 {
            dirs.iter().map(solve_one).collect::<Vec<_>>()
        } else {
            dirs.par_iter().map(solve_one).collect::<Vec<_>>()
        }
    })?
    .into_iter()
    .collect::<Result<_, _>>()?;

    let s_base = state.feeder.sys.base.s_phase_kva;
    let base_pu = [state.head.0, state.head.1];
    let mut diagnostics = Vec::new();
    let mut vertices_pu = Vec::with_capacity(k_total);
    let mut infos = Vec::with_capacity(k_total);
    let mut failed = false;
    for (info, point) in results {
        match (info.status, point) {
            (Status::Optimal, Some(v)) => vertices_pu.push(v),
            (Status::MaxIter, Some(v)) => {
                diagnostics.push(format!(
                    "direction ({:.4}, {:.4}) hit the iteration limit; best iterate kept",
                    info.direction[0], info.direction[1]
                ));
                vertices_pu.push(v);
            }
            (status, _) => {
                failed = true;
                diagnostics.push(format!(
                    "direction ({:.4}, {:.4}) is {status:?}",
                    info.direction[0], info.direction[1]
                ));
            }
        }
        infos.push(info);
    }
    if failed {
        vertices_pu = vec![base_pu; k_total];
    }
    let area_pu = shoelace_area(&vertices_pu);
    let spread = vertices_pu
        .iter()
        .map(|v| (v[0] - base_pu[0]).hypot(v[1] - base_pu[1]))
        .fold(0.0, f64::max);
    let degenerate = failed || spread <= 1e-9;
    if degenerate && !failed {
        diagnostics.push("all vertices coincide with the base point".into());
    }
    let si = |v: [f64; 2]| [v[0] * s_base, v[1] * s_base];
    Ok(FlexPolygon {
        time: state.time.clone(),
        k_total,
        epsilons: Epsilons {
            eps_p: state.risk.eps_p(),
            eps_v: state.risk.eps_v(),
            eps_i: state.risk.eps_i(),
        },
        base: si(base_pu),
        base_pu,
        vertices: vertices_pu.iter().map(|&v| si(v)).collect(),
        area: if degenerate { 0.0 } else { area_pu * s_base * s_base },
        area_pu: if degenerate { 0.0 } else { area_pu },
        vertices_pu,
        degenerate,
        diagnostics,
        binding: infos.iter().map(|i| i.binding.clone()).collect(),
        vertex_info: infos,
        s_base_kva: s_base,
    })
}

/// One polygon per snapshot, in input order.
pub fn sweep_time_series(states: &[FeederState], k_total: usize, jobs: usize) -> Vec<Result<FlexPolygon, RegionError>> {
    let run = |s: &FeederState| estimate_region(s, k_total, 1);
    match with_pool(jobs, || {
        if jobs <= 1 {
            states.iter().map(run).collect::<Vec<_>>()
        } else {
            states.par_iter().map(run).collect::<Vec<_>>()
        }
    }) {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            states.iter().map(|_| Err(RegionError::Pool(msg.clone()))).collect()
        }
    }
}

/// Side-by-side SVG panels, one per polygon, sharing axis scales.
pub fn polygons_svg(panels: &[(&str, &FlexPolygon)]) -> String {
    let (w, h, pad) = (360.0, 320.0, 48.0);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (_, poly) in panels {
        for v in poly.vertices.iter().chain(std::iter::once(&poly.base)) {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
    }
    for k in 0..2 {
        let span = (hi[k] - lo[k]).max(1e-6);
        lo[k] -= 0.08 * span;
        hi[k] += 0.08 * span;
    }
    let sx = |p: f64, i: usize| i as f64 * w + pad + (p - lo[0]) / (hi[0] - lo[0]) * (w - 2.0 * pad);
    let sy = |q: f64| h - pad - (q - lo[1]) / (hi[1] - lo[1]) * (h - 2.0 * pad);
    let mut out = String::new();
    let total_w = w * panels.len().max(1) as f64;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{h}" viewBox="0 0 {total_w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{total_w}" height="{h}" fill="white"/>"#);
    for (i, (title, poly)) in panels.iter().enumerate() {
        let x0 = sx(lo[0], i);
        let x1 = sx(hi[0], i);
        let (y0, y1) = (sy(lo[1]), sy(hi[1]));
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, pad / 2.0, escape(title));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">P (kW)</text>"#, (x0 + x1) / 2.0, h - 10.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" transform="rotate(-90 {:.2} {:.2})" text-anchor="middle">Q (kvar)</text>"#,
            x0 - 30.0,
            (y0 + y1) / 2.0,
            x0 - 30.0,
            (y0 + y1) / 2.0
        );
        for (val, anchor_x, anchor_y, is_p) in [(lo[0], x0, y0 + 14.0, true), (hi[0], x1, y0 + 14.0, true), (lo[1], x0 - 4.0, y0, false), (hi[1], x0 - 4.0, y1 + 8.0, false)] {
            let anchor = if is_p { "middle" } else { "end" };
            let _ = writeln!(out, r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="{anchor}">{val:.0}</text>"#);
        }
        if !poly.vertices.is_empty() {
            let pts: Vec<String> = poly.vertices.iter().map(|v| format!("{:.2},{:.2}", sx(v[0], i), sy(v[1]))).collect();
            let _ = writeln!(
                out,
                r##"<polygon points="{}" fill="#4a90d9" fill-opacity="0.25" stroke="#1f5fa8" stroke-width="1.5"/>"##,
                pts.join(" ")
            );
        }
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#d0021b"/>"##,
            sx(poly.base[0], i),
            sy(poly.base[1])
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
