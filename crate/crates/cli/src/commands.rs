use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flexagg::devices::FleetAdjustment;
use flexagg::drcc::{Feeder, FeederState};
use flexagg::ingest::{snapshot_at, FleetFile, Profiles, PvErrors, SnapshotOptions};
use flexagg::netmodel::{validate_network, NetworkModel};
use flexagg::region::{polygons_svg, sweep_time_series, FlexPolygon};
use flexagg::socp::Status;
use flexagg::uncertainty::{read_error_history, EmOptions, ErrorHistory, ErrorScenarioTable, RiskConfig};
use flexagg::validate::{monte_carlo_check, ViolationReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, &text, &e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn require<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Config(format!("--{name} is required")))
}

pub fn load_feeder(path: &Path) -> Result<NetworkModel, CliError> {
    let net: NetworkModel = parse_json(path)?;
    let diags = validate_network(&net);
    if !diags.is_empty() {
        return Err(CliError::Network {
            path: path.to_path_buf(),
            diagnostics: diags.iter().map(|d| d.to_string()).collect(),
        });
    }
    Ok(net)
}

pub fn load_profiles(path: &Path) -> Result<Profiles, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Profiles::read_csv(file).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
        byte_offset: match &e {
            flexagg::ingest::IngestError::Csv(c) => c.position().map(|p| p.byte() as usize),
            _ => None,
        },
    })
}

fn load_history(path: &Path) -> Result<ErrorHistory, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_error_history(file).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
        byte_offset: None,
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn em_options(seed: u64) -> EmOptions {
    EmOptions {
        seed,
        ..EmOptions::default()
    }
}

const K_MAX: usize = 5;

fn load_errors(path: &Path, seed: u64) -> Result<ErrorScenarioTable, CliError> {
    if is_csv(path) {
        let fit = load_history(path)?
            .fit_table(K_MAX, &em_options(seed))
            .map_err(|e| CliError::Compute(e.to_string()))?;
        for w in &fit.warnings {
            warn(w);
        }
        Ok(fit.table)
    } else {
        parse_json(path)
    }
}

fn warn(msg: &str) {
    eprintln!("{}", serde_json::json!({ "warning": msg }));
}

/// Inputs shared by `region` and `validate`.
struct Inputs {
    net: NetworkModel,
    fleet: FleetFile,
    profiles: Profiles,
    errors: Option<ErrorScenarioTable>,
    feeder: Arc<Feeder>,
}

impl Inputs {
    fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let feeder_path = require(&cfg.feeder, "feeder")?;
        let net = load_feeder(feeder_path)?;
        let fleet: FleetFile = parse_json(require(&cfg.fleet, "fleet")?)?;
        let profiles = load_profiles(require(&cfg.profiles, "profiles")?)?;
        let errors = cfg.errors.as_deref().map(|p| load_errors(p, cfg.seed)).transpose()?;
        if errors.is_none() {
            warn("no --errors given; PV forecasts are treated as exact");
        }
        let feeder = Feeder::new(net.clone()).map_err(|e| CliError::Input(format!("{}: {e}", feeder_path.display())))?;
        Ok(Inputs {
            net,
            fleet,
            profiles,
            errors,
            feeder,
        })
    }

    fn rows(&self, times: &Option<Vec<String>>) -> Result<Vec<usize>, CliError> {
        match times {
            None => Ok(self.profiles.rows_every(30)),
            Some(ts) => ts
                .iter()
                .map(|t| {
                    self.profiles
                        .row_of(t.trim())
                        .ok_or_else(|| CliError::Input(format!("no profile row at time {t:?}")))
                })
                .collect(),
        }
    }

    fn state(&self, cfg: &RunConfig, row: usize, risk: RiskConfig) -> Result<FeederState, CliError> {
        let opts = SnapshotOptions {
            pv_errors: match &self.errors {
                Some(t) => PvErrors::Table(t, cfg.day_type),
                None => PvErrors::None,
            },
            load_std_frac: cfg.load_std,
            ..SnapshotOptions::default()
        };
        let snap = snapshot_at(&self.net, &self.fleet, &self.profiles, row, &opts).map_err(|e| CliError::Input(e.to_string()))?;
        FeederState::build(self.feeder.clone(), snap, risk).map_err(|e| CliError::Compute(format!("{}: {e}", self.profiles.times[row])))
    }
}

fn stem(time: &str) -> String {
    time.chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn region(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = Inputs::load(cfg)?;
    let rows = inputs.rows(&cfg.times)?;
    create_out(&cfg.out)?;

    let mut failures = Vec::new();
    let mut states = Vec::new();
    for &row in &rows {
        match inputs.state(cfg, row, cfg.risk) {
            Ok(s) => states.push(s),
            Err(e) => failures.push(e),
        }
    }
    let polys = sweep_time_series(&states, cfg.k_total, cfg.jobs);

    let mut summary = String::from("time,area_kw_kvar,p_min_kw,p_max_kw,q_min_kvar,q_max_kvar,base_p_kw,base_q_kvar,degenerate,non_optimal\n");
    for (state, poly) in states.iter().zip(polys) {
        let poly = match poly {
            Ok(p) => p,
            Err(e) => {
                failures.push(CliError::Compute(format!("{}: {e}", state.time)));
                continue;
            }
        };
        let name = stem(&poly.time);
        write(&cfg.out.join(format!("region_{name}.json")), &to_json(&poly))?;
        write(&cfg.out.join(format!("region_{name}.svg")), &polygons_svg(&[(&poly.time, &poly)]))?;
        let (p_lo, p_hi) = poly.p_range();
        let (q_lo, q_hi) = poly.q_range();
        let non_optimal = poly.vertex_info.iter().filter(|v| v.status != Status::Optimal).count();
        let _ = writeln!(
            summary,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            poly.time, poly.area, p_lo, p_hi, q_lo, q_hi, poly.base[0], poly.base[1], poly.degenerate, non_optimal
        );
    }
    write(&cfg.out.join("summary.csv"), &summary)?;
    for f in &failures {
        eprintln!("{}", f.to_json());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Snapshots {
            failed: failures.len(),
            total: rows.len(),
        })
    }
}

pub fn fit_errors(cfg: &RunConfig, k_max: usize) -> Result<(), CliError> {
    let path = require(&cfg.errors, "errors")?;
    if !is_csv(path) {
        return Err(CliError::Config(format!("{}: fit-errors expects an error history CSV", path.display())));
    }
    if k_max == 0 {
        return Err(CliError::Config("k-max must be at least 1".into()));
    }
    let fit = load_history(path)?
        .fit_table(k_max, &em_options(cfg.seed))
        .map_err(|e| CliError::Compute(e.to_string()))?;
    for w in &fit.warnings {
        warn(w);
    }
    create_out(&cfg.out)?;
    write(&cfg.out.join("error_table.json"), &to_json(&fit.table))?;
    let mut csv = String::from("day_type,bin,n_samples,pooled,k,log_likelihood,aic,bic,selected\n");
    for b in &fit.bins {
        let chosen = fit
            .table
            .iter()
            .find(|(d, bin, _)| *d == b.day && *bin == b.bin)
            .map(|(_, _, g)| g.n_components());
        for s in &b.scores {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                b.day,
                b.bin.index(),
                b.n_samples,
                b.pooled,
                s.k,
                s.log_likelihood,
                s.aic,
                s.bic,
                chosen == Some(s.k)
            );
        }
    }
    write(&cfg.out.join("error_scores.csv"), &csv)?;
    for (d, b, g) in fit.table.iter() {
        println!("{d} {b}: {} component(s)", g.n_components());
    }
    Ok(())
}

#[derive(Serialize)]
struct VertexReport {
    index: usize,
    direction: [f64; 2],
    report: ViolationReport,
}

#[derive(Serialize)]
struct ValidationOutput {
    time: String,
    n_samples: usize,
    seed: u64,
    base: ViolationReport,
    vertices: Vec<VertexReport>,
}

pub fn validate(cfg: &RunConfig, region_path: &Path, samples: usize) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::Config("samples must be at least 1".into()));
    }
    let poly: FlexPolygon = parse_json(region_path)?;
    let missing: Vec<usize> = poly
        .vertex_info
        .iter()
        .enumerate()
        .filter(|(_, v)| v.decision.is_none())
        .map(|(i, _)| i)
        .collect();
    if !missing.is_empty() || poly.vertex_info.is_empty() {
        return Err(CliError::Input(format!(
            "{}: vertices {missing:?} carry no decision vector",
            region_path.display()
        )));
    }
    let inputs = Inputs::load(cfg)?;
    let row = inputs
        .profiles
        .row_of(&poly.time)
        .ok_or_else(|| CliError::Input(format!("no profile row at time {:?}", poly.time)))?;
    let e = poly.epsilons;
    let risk = RiskConfig::new(e.eps_p, e.eps_v, e.eps_i).map_err(|e| CliError::Input(e.to_string()))?;
    let state = inputs.state(cfg, row, risk)?;
    let check = |adj: &FleetAdjustment| {
        monte_carlo_check(&state, adj, samples, cfg.seed, cfg.jobs).map_err(|e| CliError::Compute(e.to_string()))
    };
    let base = check(&state.reference_adjustment())?;
    let mut vertices = Vec::with_capacity(poly.vertex_info.len());
    for (index, v) in poly.vertex_info.iter().enumerate() {
        let report = check(v.decision.as_ref().expect("checked above"))?;
        vertices.push(VertexReport {
            index,
            direction: v.direction,
            report,
        });
    }
    let worst_v = vertices.iter().map(|v| v.report.max_voltage_rate).fold(0.0, f64::max);
    let worst_i = vertices.iter().map(|v| v.report.max_current_rate).fold(0.0, f64::max);
    let out = ValidationOutput {
        time: poly.time.clone(),
        n_samples: samples,
        seed: cfg.seed,
        base,
        vertices,
    };
    create_out(&cfg.out)?;
    write(&cfg.out.join(format!("validation_{}.json", stem(&poly.time))), &to_json(&out))?;
    println!(
        "{}: worst voltage violation rate {worst_v:.4} (eps_v {}), worst current violation rate {worst_i:.4} (eps_i {})",
        poly.time, e.eps_v, e.eps_i
    );
    Ok(())
}

#[derive(Serialize)]
struct FeederSummary {
    buses: usize,
    lines: usize,
    bus_phases: usize,
    base_kv: f64,
    base_kva: f64,
    diagnostics: Vec<String>,
}

#[derive(Serialize)]
struct FleetSummary {
    controllable_loads: usize,
    pv: usize,
    pv_capacity_kw: f64,
    bess: usize,
    bess_kva: f64,
}

#[derive(Serialize)]
struct ProfileSummary {
    rows: usize,
    first: Option<String>,
    last: Option<String>,
    load_columns: usize,
    pv_columns: usize,
}

#[derive(Serialize)]
struct ErrorSummary {
    day_type: String,
    bin: u8,
    components: usize,
    mean: f64,
    std_dev: f64,
}

#[derive(Serialize, Default)]
struct Inspection {
    #[serde(skip_serializing_if = "Option::is_none")]
    feeder: Option<FeederSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fleet: Option<FleetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    profiles: Option<ProfileSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    errors: Option<Vec<ErrorSummary>>,
}

pub fn inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Inspection::default();
    if let Some(path) = &cfg.feeder {
        let net: NetworkModel = parse_json(path)?;
        out.feeder = Some(FeederSummary {
            buses: net.buses.len(),
            lines: net.lines.len(),
            bus_phases: net.buses.iter().map(|b| b.phases.len()).sum(),
            base_kv: net.base.base_kv,
            base_kva: net.base.base_kva,
            diagnostics: validate_network(&net).iter().map(|d| d.to_string()).collect(),
        });
    }
    if let Some(path) = &cfg.fleet {
        let f: FleetFile = parse_json(path)?;
        out.fleet = Some(FleetSummary {
            controllable_loads: f.controllable_loads.len(),
            pv: f.pv.len(),
            pv_capacity_kw: f.pv.iter().map(|p| p.capacity_kw).sum(),
            bess: f.bess.len(),
            bess_kva: f.bess.iter().map(|b| b.inverter_kva).sum(),
        });
    }
    if let Some(path) = &cfg.profiles {
        let p = load_profiles(path)?;
        out.profiles = Some(ProfileSummary {
            rows: p.times.len(),
            first: p.times.first().cloned(),
            last: p.times.last().cloned(),
            load_columns: p.loads.len(),
            pv_columns: p.pv.len(),
        });
    }
    if let Some(path) = &cfg.errors {
        let t = load_errors(path, cfg.seed)?;
        out.errors = Some(
            t.iter()
                .map(|(d, b, g)| ErrorSummary {
                    day_type: d.to_string(),
                    bin: b.index(),
                    components: g.n_components(),
                    mean: g.mean(),
                    std_dev: g.std_dev(),
                })
                .collect(),
        );
    }
    print!("{}", to_json(&out));
    Ok(())
}
