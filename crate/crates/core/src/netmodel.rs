//! Multi-phase unbalanced feeder model and bus admittance assembly.
//!
//! Line impedances are stored in ohm as read from the feeder file; the
//! per-unit conversion happens through [`PerUnitBase`]. Missing phases are
//! simply absent: a single-phase lateral contributes one terminal per bus,
//! never a zero-padded 3x3 block.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Nominal angle of the phase voltage in radians (positive sequence).
    pub fn nominal_angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    /// The phase following this one in the a-b-c-a cycle. A delta branch
    /// attached at phase `p` spans `p` to `p.next()`.
    pub fn next(self) -> Phase {
        match self {
            Phase::A => Phase::B,
            Phase::B => Phase::C,
            Phase::C => Phase::A,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connection {
    #[default]
    Y,
    #[serde(rename = "Delta", alias = "D")]
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub connection: Connection,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default)]
    pub is_slack: bool,
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

impl Bus {
    pub fn new(id: impl Into<String>, phases: &[Phase]) -> Self {
        let mut phases = phases.to_vec();
        phases.sort();
        phases.dedup();
        Bus {
            id: id.into(),
            phases,
            connection: Connection::Y,
            v_min: default_v_min(),
            v_max: default_v_max(),
            is_slack: false,
        }
    }

    pub fn slack(mut self) -> Self {
        self.is_slack = true;
        self
    }

    pub fn has_phase(&self, p: Phase) -> bool {
        self.phases.contains(&p)
    }
}

/// Series branch between two buses. `z` is the phase impedance matrix in
/// ohm over the phases shared by both end buses, as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub z: Vec<Vec<[f64; 2]>>,
    pub i_max: f64,
}

impl Line {
    pub fn new(
        id: impl Into<String>,
        from_bus: impl Into<String>,
        to_bus: impl Into<String>,
        z_ohm: &DMatrix<Complex64>,
        i_max: f64,
    ) -> Self {
        let z = (0..z_ohm.nrows())
            .map(|r| (0..z_ohm.ncols()).map(|c| [z_ohm[(r, c)].re, z_ohm[(r, c)].im]).collect())
            .collect();
        Line {
            id: id.into(),
            from_bus: from_bus.into(),
            to_bus: to_bus.into(),
            z,
            i_max,
        }
    }

    pub fn z_ohm(&self) -> DMatrix<Complex64> {
        let n = self.z.len();
        DMatrix::from_fn(n, n, |r, c| {
            let e = self.z[r].get(c).copied().unwrap_or([f64::NAN, f64::NAN]);
            Complex64::new(e[0], e[1])
        })
    }

    fn is_square(&self) -> bool {
        self.z.iter().all(|row| row.len() == self.z.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base {
    /// Line-to-line voltage base in kV.
    pub base_kv: f64,
    /// Three-phase power base in kVA.
    pub base_kva: f64,
}

/// Per-phase per-unit system derived from the three-phase bases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    pub s_phase_kva: f64,
    pub v_ln_kv: f64,
    pub z_ohm: f64,
    pub i_amp: f64,
}

impl From<Base> for PerUnitBase {
    fn from(b: Base) -> Self {
        let s_phase_kva = b.base_kva / 3.0;
        let v_ln_kv = b.base_kv / 3f64.sqrt();
        PerUnitBase {
            s_phase_kva,
            v_ln_kv,
            z_ohm: v_ln_kv * v_ln_kv * 1000.0 / s_phase_kva,
            i_amp: s_phase_kva / v_ln_kv,
        }
    }
}

impl PerUnitBase {
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_phase_kva
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_phase_kva
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub base: Base,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("line {line}: per-phase impedance matrix is singular")]
    SingularImpedance { line: String },
    #[error("line {line}: impedance matrix is {got}x{got} but the end buses share {expected} phases")]
    PhaseMismatch { line: String, expected: usize, got: usize },
    #[error("line {line} references missing bus {bus}")]
    UnknownBus { line: String, bus: String },
    #[error("invalid network: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("feeder file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    EmptyPhases,
    VoltageLimits,
    DuplicateBus,
    DuplicateLine,
    NoSlack,
    MultipleSlack,
    MissingBus,
    NoSharedPhases,
    PhaseMismatch,
    AsymmetricImpedance,
    Ampacity,
    Disconnected,
    DeltaPhasing,
    BadBase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Diagnostic {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// One bus-phase pair; the unit of every voltage and injection vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Terminal {
    pub bus: usize,
    pub phase: Phase,
}

/// Dense numbering of all bus-phase terminals in bus order, then phase order.
#[derive(Debug, Clone)]
pub struct TerminalIndex {
    terminals: Vec<Terminal>,
    lookup: HashMap<(usize, Phase), usize>,
    bus_lookup: HashMap<String, usize>,
}

impl TerminalIndex {
    pub fn new(net: &NetworkModel) -> Self {
        let mut terminals = Vec::new();
        let mut lookup = HashMap::new();
        let mut bus_lookup = HashMap::new();
        for (b, bus) in net.buses.iter().enumerate() {
            bus_lookup.entry(bus.id.clone()).or_insert(b);
            for &phase in &bus.phases {
                lookup.insert((b, phase), terminals.len());
                terminals.push(Terminal { bus: b, phase });
            }
        }
        TerminalIndex {
            terminals,
            lookup,
            bus_lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    pub fn terminals(&self) -> &[Terminal] {
        &self.terminals
    }

    pub fn get(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.lookup.get(&(bus, phase)).copied()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_lookup.get(id).copied()
    }

    pub fn label(&self, net: &NetworkModel, t: usize) -> String {
        let term = self.terminals[t];
        format!("{}.{}", net.buses[term.bus].id, term.phase)
    }
}

/// A line resolved against the terminal numbering.
#[derive(Debug, Clone)]
pub struct ResolvedLine {
    pub line: usize,
    pub phases: Vec<Phase>,
    pub from_terms: Vec<usize>,
    pub to_terms: Vec<usize>,
    /// Series admittance over the shared phases, in siemens.
    pub y_series: DMatrix<Complex64>,
}

fn shared_phases(a: &Bus, b: &Bus) -> Vec<Phase> {
    a.phases.iter().copied().filter(|p| b.has_phase(*p)).collect()
}

impl NetworkModel {
    pub fn from_json(text: &str) -> Result<Self, NetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn per_unit(&self) -> PerUnitBase {
        self.base.into()
    }

    pub fn slack_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_slack)
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Resolves every line to terminal indices and inverts its impedance.
    /// Lines are returned in input order.
    pub fn resolve_lines(&self, index: &TerminalIndex) -> Result<Vec<ResolvedLine>, NetError> {
        self.lines
            .iter()
            .enumerate()
            .map(|(l, line)| {
                let fb = index.bus_index(&line.from_bus).ok_or_else(|| NetError::UnknownBus {
                    line: line.id.clone(),
                    bus: line.from_bus.clone(),
                })?;
                let tb = index.bus_index(&line.to_bus).ok_or_else(|| NetError::UnknownBus {
                    line: line.id.clone(),
                    bus: line.to_bus.clone(),
                })?;
                let phases = shared_phases(&self.buses[fb], &self.buses[tb]);
                if !line.is_square() || line.z.len() != phases.len() {
                    return Err(NetError::PhaseMismatch {
                        line: line.id.clone(),
                        expected: phases.len(),
                        got: line.z.len(),
                    });
                }
                let z = line.z_ohm();
                let y_series = invert_impedance(&z).ok_or_else(|| NetError::SingularImpedance {
                    line: line.id.clone(),
                })?;
                let from_terms = phases.iter().map(|&p| index.get(fb, p).unwrap()).collect();
                let to_terms = phases.iter().map(|&p| index.get(tb, p).unwrap()).collect();
                Ok(ResolvedLine {
                    line: l,
                    phases,
                    from_terms,
                    to_terms,
                    y_series,
                })
            })
            .collect()
    }
}

fn invert_impedance(z: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    if z.is_empty() || z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    let scale = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let lu = z.clone().lu();
    // Reject numerically singular blocks, not only exactly singular ones.
    let det = lu.determinant().norm();
    if det <= scale.powi(z.nrows() as i32) * 1e-12 {
        return None;
    }
    lu.try_inverse()
}

/// Structural and electrical sanity checks. Never fails; an empty list means
/// the network is connected, has a single slack bus and consistent phasing.
pub fn validate_network(net: &NetworkModel) -> Vec<Diagnostic> {
    use DiagnosticKind as K;
    let mut out = Vec::new();

    if !(net.base.base_kv > 0.0 && net.base.base_kva > 0.0) {
        out.push(Diagnostic::new(K::BadBase, "base_kv and base_kva must be positive"));
    }

    let mut ids: HashMap<&str, usize> = HashMap::new();
    for (i, bus) in net.buses.iter().enumerate() {
        if ids.insert(bus.id.as_str(), i).is_some() {
            out.push(Diagnostic::new(K::DuplicateBus, format!("duplicate bus id {}", bus.id)));
        }
        if bus.phases.is_empty() {
            out.push(Diagnostic::new(K::EmptyPhases, format!("bus {} has no phases", bus.id)));
        }
        if !(bus.v_min < bus.v_max) {
            out.push(Diagnostic::new(
                K::VoltageLimits,
                format!("bus {}: v_min must be below v_max", bus.id),
            ));
        }
        if bus.connection == Connection::Delta && bus.phases.len() != 3 {
            out.push(Diagnostic::new(
                K::DeltaPhasing,
                format!("bus {}: delta connection requires all three phases", bus.id),
            ));
        }
    }

    match net.buses.iter().filter(|b| b.is_slack).count() {
        0 => out.push(Diagnostic::new(K::NoSlack, "no slack bus")),
        1 => {}
        _ => out.push(Diagnostic::new(K::MultipleSlack, "multiple slack buses")),
    }

    let mut line_ids = HashSet::new();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); net.buses.len()];
    for line in &net.lines {
        if !line_ids.insert(line.id.as_str()) {
            out.push(Diagnostic::new(K::DuplicateLine, format!("duplicate line id {}", line.id)));
        }
        if !(line.i_max > 0.0) {
            out.push(Diagnostic::new(
                K::Ampacity,
                format!("line {}: i_max must be positive", line.id),
            ));
        }
        let ends = [&line.from_bus, &line.to_bus].map(|id| ids.get(id.as_str()).copied());
        for (end, id) in ends.iter().zip([&line.from_bus, &line.to_bus]) {
            if end.is_none() {
                out.push(Diagnostic::new(
                    K::MissingBus,
                    format!("line {} references missing bus {}", line.id, id),
                ));
            }
        }
        let [Some(fb), Some(tb)] = ends else { continue };
        adjacency[fb].push(tb);
        adjacency[tb].push(fb);
        let shared = shared_phases(&net.buses[fb], &net.buses[tb]);
        if shared.is_empty() {
            out.push(Diagnostic::new(
                K::NoSharedPhases,
                format!("line {}: end buses share no phase", line.id),
            ));
            continue;
        }
        if !line.is_square() || line.z.len() != shared.len() {
            out.push(Diagnostic::new(
                K::PhaseMismatch,
                format!(
                    "line {}: impedance matrix does not match the {} shared phases",
                    line.id,
                    shared.len()
                ),
            ));
            continue;
        }
        let z = line.z_ohm();
        let asym = (0..z.nrows())
            .flat_map(|r| (0..r).map(move |c| (r, c)))
            .any(|(r, c)| (z[(r, c)] - z[(c, r)]).norm() > 1e-12 * (1.0 + z[(r, c)].norm()));
        if asym {
            out.push(Diagnostic::new(
                K::AsymmetricImpedance,
                format!("line {}: impedance matrix is not symmetric", line.id),
            ));
        }
    }

    if !net.buses.is_empty() {
        let mut seen = vec![false; net.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for &n in &adjacency[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        let islanded: Vec<&str> = net
            .buses
            .iter()
            .zip(&seen)
            .filter(|(_, s)| !**s)
            .map(|(b, _)| b.id.as_str())
            .collect();
        if !islanded.is_empty() {
            out.push(Diagnostic::new(
                K::Disconnected,
                format!("network is not connected; unreachable buses: {}", islanded.join(", ")),
            ));
        }
    }

    out
}

/// Assembles the bus admittance matrix over all terminals, in siemens.
///
/// Lines are stamped in order of their id so that the result does not depend
/// on the order of `net.lines`.
pub fn build_admittance(net: &NetworkModel) -> Result<DMatrix<Complex64>, NetError> {
    let index = TerminalIndex::new(net);
    let resolved = net.resolve_lines(&index)?;
    Ok(stamp(index.len(), net, &resolved))
}

/// Admittance in per unit of the network's own base.
pub fn build_admittance_pu(net: &NetworkModel) -> Result<DMatrix<Complex64>, NetError> {
    let z_base = net.per_unit().z_ohm;
    Ok(build_admittance(net)? * Complex64::new(z_base, 0.0))
}

pub(crate) fn stamp(n: usize, net: &NetworkModel, lines: &[ResolvedLine]) -> DMatrix<Complex64> {
    let order: BTreeMap<&str, usize> = lines
        .iter()
        .enumerate()
        .map(|(i, rl)| (net.lines[rl.line].id.as_str(), i))
        .collect();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for &i in order.values() {
        let rl = &lines[i];
        let k = rl.phases.len();
        for r in 0..k {
            for c in 0..k {
                let v = rl.y_series[(r, c)];
                let (fr, fc) = (rl.from_terms[r], rl.from_terms[c]);
                let (tr, tc) = (rl.to_terms[r], rl.to_terms[c]);
                y[(fr, fc)] += v;
                y[(tr, tc)] += v;
                y[(fr, tc)] -= v;
                y[(tr, fc)] -= v;
            }
        }
    }
    y
}
