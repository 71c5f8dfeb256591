//! Fleet and profile files in engineering units, and their conversion into
//! per-unit snapshots.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{Attachment, BessUnit, ControllableLoad, DerFleet, FixedLoad, PvUnit, QMode};
use crate::drcc::{PvAvailability, PvCorrelation, Snapshot, DEFAULT_LOAD_STD_FRAC};
use crate::netmodel::{NetworkModel, Phase, PerUnitBase};
use crate::uncertainty::{DayType, ErrorScenarioTable, Gmm};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("profiles: {0}")]
    Csv(#[from] csv::Error),
    #[error("profiles: {0}")]
    Profile(String),
    #[error("fleet: {0}")]
    Fleet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClSpec {
    pub id: String,
    pub bus: String,
    pub phases: Vec<Phase>,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
    /// Reactive-to-real ratio; taken from the profile when absent.
    #[serde(default)]
    pub tan_theta: Option<f64>,
}

fn default_low() -> f64 {
    0.8
}

fn default_high() -> f64 {
    1.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvSpec {
    pub id: String,
    pub bus: String,
    pub phases: Vec<Phase>,
    pub capacity_kw: f64,
    pub inverter_kva: f64,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default)]
    pub pf_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessSpec {
    pub id: String,
    pub bus: String,
    pub phases: Vec<Phase>,
    pub inverter_kva: f64,
    #[serde(default)]
    pub p_kw: f64,
    #[serde(default)]
    pub q_kvar: f64,
    #[serde(default)]
    pub energy_bounds_kw: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NclSpec {
    pub bus: String,
    pub phase: Phase,
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Fleet description in kW / kVA.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetFile {
    #[serde(default)]
    pub controllable_loads: Vec<ClSpec>,
    #[serde(default)]
    pub pv: Vec<PvSpec>,
    #[serde(default)]
    pub bess: Vec<BessSpec>,
    /// Constant loads added on top of the profile loads.
    #[serde(default)]
    pub ncl: Vec<NclSpec>,
}

impl FleetFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn without_controllable_loads(&self) -> Self {
        FleetFile {
            controllable_loads: Vec::new(),
            ..self.clone()
        }
    }

    pub fn with_q_mode(&self, mode: QMode) -> Self {
        let mut f = self.clone();
        f.pv.iter_mut().for_each(|p| p.q_mode = mode);
        f
    }
}

/// Time series of loads (kW, kvar per bus-phase) and PV forecasts (kW).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profiles {
    pub times: Vec<String>,
    /// `(bus, phase) -> (P series, Q series)`
    pub loads: BTreeMap<(String, Phase), (Vec<f64>, Vec<f64>)>,
    pub pv: BTreeMap<String, Vec<f64>>,
}

fn parse_phase(s: &str) -> Option<Phase> {
    match s {
        "a" | "A" => Some(Phase::A),
        "b" | "B" => Some(Phase::B),
        "c" | "C" => Some(Phase::C),
        _ => None,
    }
}

fn split_bus_phase(s: &str) -> Option<(String, Phase)> {
    let (bus, ph) = s.rsplit_once('.')?;
    Some((bus.to_string(), parse_phase(ph)?))
}

impl Profiles {
    /// Columns: `time`, `p:<bus>.<phase>`, `q:<bus>.<phase>`, `pv:<id>`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("time") {
            return Err(IngestError::Profile("first column must be `time`".into()));
        }
        enum Col {
            P(String, Phase),
            Q(String, Phase),
            Pv(String),
        }
        let mut cols = Vec::new();
        for h in headers.iter().skip(1) {
            let col = if let Some(rest) = h.strip_prefix("p:") {
                split_bus_phase(rest).map(|(b, p)| Col::P(b, p))
            } else if let Some(rest) = h.strip_prefix("q:") {
                split_bus_phase(rest).map(|(b, p)| Col::Q(b, p))
            } else {
                h.strip_prefix("pv:").map(|id| Col::Pv(id.to_string()))
            };
            cols.push(col.ok_or_else(|| IngestError::Profile(format!("unrecognized column {h:?}")))?);
        }
        let mut out = Profiles::default();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            out.times.push(rec.get(0).unwrap_or_default().to_string());
            for (k, col) in cols.iter().enumerate() {
                let raw = rec.get(k + 1).unwrap_or_default();
                let v: f64 = raw
                    .parse()
                    .map_err(|_| IngestError::Profile(format!("line {line}: bad number {raw:?}")))?;
                if !v.is_finite() {
                    return Err(IngestError::Profile(format!("line {line}: non-finite value")));
                }
                match col {
                    Col::P(b, p) => out.loads.entry((b.clone(), *p)).or_default().0.push(v),
                    Col::Q(b, p) => out.loads.entry((b.clone(), *p)).or_default().1.push(v),
                    Col::Pv(id) => out.pv.entry(id.clone()).or_default().push(v),
                }
            }
        }
        let n = out.times.len();
        if n == 0 {
            return Err(IngestError::Profile("no rows".into()));
        }
        for ((b, p), (ps, qs)) in &out.loads {
            if ps.len() != n || qs.len() != n {
                return Err(IngestError::Profile(format!("load {b}.{p} needs both p: and q: columns")));
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self) -> String {
        let mut header = vec!["time".to_string()];
        for (b, p) in self.loads.keys() {
            header.push(format!("p:{b}.{p}"));
            header.push(format!("q:{b}.{p}"));
        }
        for id in self.pv.keys() {
            header.push(format!("pv:{id}"));
        }
        let mut out = header.join(",");
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![t.clone()];
            for (ps, qs) in self.loads.values() {
                row.push(fmt_num(ps[i]));
                row.push(fmt_num(qs[i]));
            }
            for s in self.pv.values() {
                row.push(fmt_num(s[i]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Row indices whose minute-of-day is a multiple of `step_min`.
    pub fn rows_every(&self, step_min: u32) -> Vec<usize> {
        self.times
            .iter()
            .enumerate()
            .filter(|(_, t)| minute_of_day(t).is_some_and(|m| m % step_min == 0))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn row_of(&self, time: &str) -> Option<usize> {
        let want = minute_of_day(time)?;
        self.times.iter().position(|t| minute_of_day(t) == Some(want))
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Minutes since midnight of an `HH:MM` label.
pub fn minute_of_day(t: &str) -> Option<u32> {
    let (h, m) = t.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

/// How PV forecast errors are described for a snapshot.
#[derive(Debug, Clone, Copy)]
pub enum PvErrors<'a> {
    /// Mixture per day type and normalized power level.
    Table(&'a ErrorScenarioTable, DayType),
    /// Zero-mean Gaussian with this standard deviation (share of capacity).
    Gaussian(f64),
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct SnapshotOptions<'a> {
    pub pv_errors: PvErrors<'a>,
    pub load_std_frac: f64,
    pub pv_correlation: PvCorrelation,
}

impl Default for SnapshotOptions<'_> {
    fn default() -> Self {
        SnapshotOptions {
            pv_errors: PvErrors::None,
            load_std_frac: DEFAULT_LOAD_STD_FRAC,
            pv_correlation: PvCorrelation::Independent,
        }
    }
}

/// Builds the per-unit snapshot for profile row `row`.
pub fn snapshot_at(
    net: &NetworkModel,
    fleet: &FleetFile,
    profiles: &Profiles,
    row: usize,
    opts: &SnapshotOptions,
) -> Result<Snapshot, IngestError> {
    let base: PerUnitBase = net.per_unit();
    let pu = |kw: f64| base.kw_to_pu(kw);
    let time = profiles
        .times
        .get(row)
        .ok_or_else(|| IngestError::Profile(format!("row {row} out of range")))?
        .clone();

    let mut owner: BTreeMap<(String, Phase), usize> = BTreeMap::new();
    for (i, cl) in fleet.controllable_loads.iter().enumerate() {
        for &p in &cl.phases {
            if owner.insert((cl.bus.clone(), p), i).is_some() {
                return Err(IngestError::Fleet(format!("bus-phase {}.{p} has two controllable loads", cl.bus)));
            }
        }
    }
    let mut cl_p = vec![0.0; fleet.controllable_loads.len()];
    let mut cl_q = vec![0.0; fleet.controllable_loads.len()];
    let mut ncl = Vec::new();
    for ((bus, ph), (ps, qs)) in &profiles.loads {
        let (p, q) = (pu(ps[row]), pu(qs[row]));
        match owner.get(&(bus.clone(), *ph)) {
            Some(&i) => {
                cl_p[i] += p;
                cl_q[i] += q;
            }
            None => ncl.push(FixedLoad {
                bus: bus.clone(),
                phase: *ph,
                p,
                q,
            }),
        }
    }
    for n in &fleet.ncl {
        ncl.push(FixedLoad {
            bus: n.bus.clone(),
            phase: n.phase,
            p: pu(n.p_kw),
            q: pu(n.q_kvar),
        });
    }
    let controllable_loads = fleet
        .controllable_loads
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let tan = c
                .tan_theta
                .unwrap_or(if cl_p[i] != 0.0 { cl_q[i] / cl_p[i] } else { 0.0 });
            ControllableLoad::from_multipliers(
                c.id.clone(),
                Attachment {
                    bus: c.bus.clone(),
                    phases: c.phases.clone(),
                },
                cl_p[i],
                c.low,
                c.high,
                tan,
            )
        })
        .collect();

    let mut pv = Vec::new();
    let mut avail = Vec::new();
    for spec in &fleet.pv {
        let series = profiles
            .pv
            .get(&spec.id)
            .ok_or_else(|| IngestError::Profile(format!("no pv:{} column", spec.id)))?;
        let forecast = pu(series[row].max(0.0));
        let cap = pu(spec.capacity_kw);
        let av = if forecast <= 0.0 {
            PvAvailability {
                offset: 0.0,
                scale: 0.0,
                error: Gmm::gaussian(0.0, 1.0).expect("unit gaussian"),
            }
        } else {
            match opts.pv_errors {
                PvErrors::Table(table, day) => {
                    let g = table
                        .get(day, forecast / cap)
                        .ok_or_else(|| IngestError::Profile(format!("error table has no {day} entries")))?;
                    PvAvailability {
                        offset: forecast,
                        scale: cap,
                        error: g.clone(),
                    }
                }
                PvErrors::Gaussian(sd) => PvAvailability::gaussian(forecast, sd * cap),
                PvErrors::None => PvAvailability::gaussian(forecast, 0.0),
            }
        };
        pv.push(PvUnit {
            id: spec.id.clone(),
            at: Attachment {
                bus: spec.bus.clone(),
                phases: spec.phases.clone(),
            },
            s_rating: pu(spec.inverter_kva),
            forecast_mu: av.mean().max(0.0),
            forecast_sigma: av.std_dev(),
            q_mode: spec.q_mode,
            pf_limit: spec.pf_limit,
        });
        avail.push(av);
    }
    let bess = fleet
        .bess
        .iter()
        .map(|b| BessUnit {
            id: b.id.clone(),
            at: Attachment {
                bus: b.bus.clone(),
                phases: b.phases.clone(),
            },
            s_rating: pu(b.inverter_kva),
            p_sched: pu(b.p_kw),
            q_sched: pu(b.q_kvar),
            p_energy_bounds: b.energy_bounds_kw.map(|[lo, hi]| [pu(lo), pu(hi)]),
        })
        .collect();

    Ok(Snapshot {
        time,
        fleet: DerFleet {
            controllable_loads,
            pv,
            bess,
            ncl,
        },
        pv_availability: Some(avail),
        load_std_frac: opts.load_std_frac,
        pv_correlation: opts.pv_correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minute_labels() {
        assert_eq!(minute_of_day("00:00"), Some(0));
        assert_eq!(minute_of_day("12:30"), Some(750));
        assert_eq!(minute_of_day("24:00"), None);
        assert_eq!(minute_of_day("noon"), None);
    }

    #[test]
    fn profiles_round_trip() {
        let text = "time,p:7.a,q:7.a,pv:pv1\n00:00,10,2,0\n00:05,11.5,2.25,0.5\n";
        let p = Profiles::read_csv(text.as_bytes()).unwrap();
        assert_eq!(p.times, vec!["00:00", "00:05"]);
        assert_eq!(p.loads[&("7".to_string(), Phase::A)].0, vec![10.0, 11.5]);
        let again = Profiles::read_csv(p.write_csv().as_bytes()).unwrap();
        assert_eq!(again, p);
        assert_eq!(p.rows_every(30), vec![0]);
    }

    #[test]
    fn profile_errors() {
        assert!(Profiles::read_csv("t,p:1.a\n".as_bytes()).is_err());
        assert!(Profiles::read_csv("time,p:1.a\n00:00,1\n".as_bytes()).is_err());
        assert!(Profiles::read_csv("time,x\n00:00,1\n".as_bytes()).is_err());
        assert!(Profiles::read_csv("time,pv:a\n00:00,abc\n".as_bytes()).is_err());
    }
}
