use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gmm::{fit_gmm, ComponentScore, EmOptions, Gmm, GmmError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no samples")]
    NoSamples,
    #[error("error history line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("error history: {0}")]
    Csv(#[from] csv::Error),
    #[error("fit failed for {day}/{bin}: {source}")]
    Fit {
        day: DayType,
        bin: PowerBin,
        source: GmmError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Sunny,
    Cloudy,
    Overcast,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Sunny, DayType::Cloudy, DayType::Overcast];
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DayType::Sunny => "sunny",
            DayType::Cloudy => "cloudy",
            DayType::Overcast => "overcast",
        })
    }
}

impl FromStr for DayType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sunny" => Ok(DayType::Sunny),
            "cloudy" => Ok(DayType::Cloudy),
            "overcast" => Ok(DayType::Overcast),
            other => Err(format!("unknown day type {other:?}")),
        }
    }
}

/// Normalized PV output level: [0, .25), [.25, .5), [.5, .75), [.75, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PowerBin(u8);

impl PowerBin {
    pub const COUNT: u8 = 4;

    pub fn new(index: u8) -> Option<Self> {
        (index < Self::COUNT).then_some(PowerBin(index))
    }

    pub fn of(power_pu: f64) -> Self {
        let i = (power_pu.clamp(0.0, 1.0) * 4.0).floor() as u8;
        PowerBin(i.min(Self::COUNT - 1))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn bounds(self) -> (f64, f64) {
        (self.0 as f64 * 0.25, (self.0 + 1) as f64 * 0.25)
    }

    pub fn all() -> impl Iterator<Item = PowerBin> {
        (0..Self::COUNT).map(PowerBin)
    }
}

impl fmt::Display for PowerBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.bounds();
        let close = if self.0 == Self::COUNT - 1 { ']' } else { ')' };
        write!(f, "[{lo:.2},{hi:.2}{close}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub day_type: DayType,
    pub bin: u8,
    #[serde(flatten)]
    pub gmm: Gmm,
    #[serde(default)]
    pub pooled: bool,
}

/// Fitted error mixtures per (day type, power bin).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<ScenarioEntry>", into = "Vec<ScenarioEntry>")]
pub struct ErrorScenarioTable {
    entries: BTreeMap<(DayType, PowerBin), (Gmm, bool)>,
}

impl From<Vec<ScenarioEntry>> for ErrorScenarioTable {
    fn from(v: Vec<ScenarioEntry>) -> Self {
        let mut t = ErrorScenarioTable::default();
        for e in v {
            if let Some(bin) = PowerBin::new(e.bin) {
                t.entries.insert((e.day_type, bin), (e.gmm, e.pooled));
            }
        }
        t
    }
}

impl From<ErrorScenarioTable> for Vec<ScenarioEntry> {
    fn from(t: ErrorScenarioTable) -> Self {
        t.entries
            .into_iter()
            .map(|((day_type, bin), (gmm, pooled))| ScenarioEntry {
                day_type,
                bin: bin.index(),
                gmm,
                pooled,
            })
            .collect()
    }
}

impl ErrorScenarioTable {
    pub fn insert(&mut self, day: DayType, bin: PowerBin, gmm: Gmm) {
        self.entries.insert((day, bin), (gmm, false));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DayType, PowerBin, &Gmm)> {
        self.entries.iter().map(|((d, b), (g, _))| (*d, *b, g))
    }

    /// Mixture for a normalized power level. A missing bin falls back to the
    /// nearest lower bin, then to the nearest higher one.
    pub fn get(&self, day: DayType, power_pu: f64) -> Option<&Gmm> {
        let want = PowerBin::of(power_pu).index();
        (0..=want)
            .rev()
            .chain(want + 1..PowerBin::COUNT)
            .find_map(|i| self.entries.get(&(day, PowerBin(i))).map(|(g, _)| g))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Rows of `day_type, power_pu, error_pu`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorHistory {
    pub rows: Vec<(DayType, f64, f64)>,
}

#[derive(Deserialize)]
struct HistoryRow {
    day_type: String,
    power_pu: f64,
    error_pu: f64,
}

pub fn read_error_history<R: Read>(reader: R) -> Result<ErrorHistory, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<HistoryRow>() {
        let row = rec?;
        let day = row.day_type.parse().map_err(|msg| ScenarioError::Row {
            line: rows.len() as u64 + 2,
            msg,
        })?;
        if !row.power_pu.is_finite() || !row.error_pu.is_finite() {
            return Err(ScenarioError::Row {
                line: rows.len() as u64 + 2,
                msg: "non-finite value".into(),
            });
        }
        rows.push((day, row.power_pu, row.error_pu));
    }
    if rows.is_empty() {
        return Err(ScenarioError::NoSamples);
    }
    Ok(ErrorHistory { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinFit {
    pub day: DayType,
    pub bin: PowerBin,
    pub n_samples: usize,
    pub pooled: bool,
    pub scores: Vec<ComponentScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableFit {
    pub table: ErrorScenarioTable,
    pub bins: Vec<BinFit>,
    pub warnings: Vec<String>,
}

impl ErrorHistory {
    pub fn write_csv(&self) -> String {
        let mut out = String::from("day_type,power_pu,error_pu\n");
        for (d, p, e) in &self.rows {
            out.push_str(&format!("{d},{p},{e}\n"));
        }
        out
    }

    fn samples(&self, day: DayType, bin: Option<PowerBin>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|(d, p, _)| *d == day && bin.is_none_or(|b| PowerBin::of(*p) == b))
            .map(|r| r.2)
            .collect()
    }

    /// One mixture per populated (day type, bin). Bins with fewer than
    /// `10 * k_max` samples are fitted on the pooled samples of their day
    /// type and flagged with a warning.
    pub fn fit_table(&self, k_max: usize, opts: &EmOptions) -> Result<TableFit, ScenarioError> {
        if self.rows.is_empty() {
            return Err(ScenarioError::NoSamples);
        }
        let mut table = ErrorScenarioTable::default();
        let mut bins = Vec::new();
        let mut warnings = Vec::new();
        let mut pooled_cache: BTreeMap<DayType, Gmm> = BTreeMap::new();
        for day in DayType::ALL {
            for bin in PowerBin::all() {
                let x = self.samples(day, Some(bin));
                if x.is_empty() {
                    continue;
                }
                let (gmm, pooled, scores) = if x.len() >= 10 * k_max {
                    let sel = fit_gmm(&x, k_max, opts).map_err(|source| ScenarioError::Fit { day, bin, source })?;
                    (sel.selected, false, sel.scores)
                } else {
                    warnings.push(format!(
                        "{day} {bin}: {} samples < {}; using the pooled {day} fit",
                        x.len(),
                        10 * k_max
                    ));
                    let g = match pooled_cache.get(&day) {
                        Some(g) => g.clone(),
                        None => {
                            let mut all = self.samples(day, None);
                            if all.len() < 10 * k_max {
                                all = self.rows.iter().map(|r| r.2).collect();
                            }
                            let sel = fit_gmm(&all, k_max, opts).map_err(|source| ScenarioError::Fit { day, bin, source })?;
                            pooled_cache.insert(day, sel.selected.clone());
                            sel.selected
                        }
                    };
                    (g, true, Vec::new())
                };
                table.entries.insert((day, bin), (gmm, pooled));
                bins.push(BinFit {
                    day,
                    bin,
                    n_samples: x.len(),
                    pooled,
                    scores,
                });
            }
        }
        Ok(TableFit { table, bins, warnings })
    }
}
