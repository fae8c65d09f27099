//! CSV output with `#` metadata headers, and a reader for trajectory files.
//!
//! Numbers are written in Rust's shortest round-trip form, so a file read
//! back reproduces the in-memory values bit for bit and repeated runs give
//! byte-identical files.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::classical::ClassicalOrbit;
use crate::error::{QhjError, Result};
use crate::quantum::{
    AngularTrajectory, EventKind, Termination, Trajectory, TrajectoryEvent, TrajectoryState,
};
use crate::units::{QuantityKind, UnitSystem};

pub const TRAJECTORY_COLUMNS: [&str; 8] =
    ["t", "r", "theta", "phi", "x", "y", "z", "eq46_residual"];
pub const WRAPPED_COLUMN: &str = "phi_wrapped";

/// Shortest round-trip text for `v`, switching to exponent form outside
/// [1e-4, 1e15) so tiny residuals and SI lengths stay readable.
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

pub fn tool_version() -> String {
    format!("qhj {}", env!("CARGO_PKG_VERSION"))
}

/// Header lines (without the leading `# `) plus layout choices.
#[derive(Debug, Clone, Default)]
pub struct FileMeta {
    pub lines: Vec<String>,
    pub wrapped_phi: bool,
}

impl FileMeta {
    pub fn new(kind: &str) -> Self {
        Self {
            lines: vec![tool_version(), format!("file: {kind}")],
            wrapped_phi: false,
        }
    }

    pub fn line(mut self, l: impl Into<String>) -> Self {
        self.lines.push(l.into());
        self
    }

    pub fn units(self, u: &UnitSystem) -> Self {
        let l = format!(
            "units: {} length={} time={} angles=rad",
            u.mode,
            u.unit_label(QuantityKind::Length),
            u.unit_label(QuantityKind::Time)
        );
        self.line(l)
    }
}

fn termination_name(t: &Termination) -> String {
    match t {
        Termination::EndTime => "end-time".into(),
        Termination::Ejected => "ejected".into(),
        Termination::TurnLimit => "turn-limit".into(),
        Termination::Failed(e) => format!("failed kind={} message=\"{e}\"", e.kind()),
    }
}

fn event_line(e: &TrajectoryEvent, u: &UnitSystem) -> String {
    format!(
        "event: kind={} t={} r={} theta={} phi={}",
        e.kind,
        Num(u.output(e.t, QuantityKind::Time)),
        Num(u.output(e.r, QuantityKind::Length)),
        Num(e.theta),
        Num(e.phi)
    )
}

fn wrap(phi: f64) -> f64 {
    let w = phi.rem_euclid(std::f64::consts::TAU);
    // rem_euclid can round up to exactly 2π
    if w >= std::f64::consts::TAU {
        0.0
    } else {
        w
    }
}

fn push_row(out: &mut String, s: &TrajectoryState, residual: f64, u: &UnitSystem, wrapped: bool) {
    let [x, y, z] = s.cartesian();
    let l = |v: f64| u.output(v, QuantityKind::Length);
    let _ = write!(
        out,
        "{},{},{},{},{},{},{},{}",
        Num(u.output(s.t, QuantityKind::Time)),
        Num(l(s.r)),
        Num(s.theta),
        Num(s.phi),
        Num(l(x)),
        Num(l(y)),
        Num(l(z)),
        Num(residual)
    );
    if wrapped {
        let _ = write!(out, ",{}", Num(wrap(s.phi)));
    }
    out.push('\n');
}

fn header(out: &mut String, meta: &FileMeta) {
    for l in &meta.lines {
        out.push_str("# ");
        out.push_str(l);
        out.push('\n');
    }
    out.push_str(&TRAJECTORY_COLUMNS.join(","));
    if meta.wrapped_phi {
        out.push(',');
        out.push_str(WRAPPED_COLUMN);
    }
    out.push('\n');
}

/// A quantum trajectory with its events and termination in the header.
pub fn trajectory_csv(tr: &Trajectory, u: &UnitSystem, meta: FileMeta) -> String {
    let mut meta = meta
        .line(format!(
            "state: {} n={} l={} m_l={} energy={}",
            tr.state,
            tr.state.n,
            tr.state.l,
            tr.state.m_l,
            Num(u.output(tr.state.energy, QuantityKind::Energy))
        ))
        .line(format!("hidden: {}", tr.hidden))
        .units(u)
        .line(format!(
            "termination: {}",
            termination_name(&tr.termination)
        ))
        .line(format!("max_eq46_residual: {}", Num(tr.max_eq46())));
    // continuing through the nucleus is a modelling choice, so say so
    if let Some(e) = tr
        .events
        .iter()
        .find(|e| e.kind == EventKind::OriginApproach)
    {
        meta = meta.line(format!(
            "origin: radial direction reversed at r={}, angles kept",
            Num(u.output(e.r, QuantityKind::Length))
        ));
    }
    for e in &tr.events {
        meta = meta.line(event_line(e, u));
    }
    let mut out = String::with_capacity(96 * (tr.samples.len() + 16));
    header(&mut out, &meta);
    for (s, res) in tr.samples.iter().zip(&tr.eq46) {
        push_row(&mut out, s, *res, u, meta.wrapped_phi);
    }
    out
}

/// A classical orbit in the trajectory layout; the residual column holds
/// the relative energy error, since the quantum law does not apply.
pub fn classical_csv(o: &ClassicalOrbit, u: &UnitSystem, meta: FileMeta) -> String {
    let p = &o.params;
    let mut meta = meta
        .line(format!(
            "classical: energy={} alpha={} beta={} signs={},{},{}",
            Num(u.output(p.energy, QuantityKind::Energy)),
            p.alpha,
            p.beta,
            p.signs[0],
            p.signs[1],
            p.signs[2]
        ))
        .units(u)
        .line("residual column: relative energy error")
        .line(format!("termination: {}", termination_name(&o.termination)));
    for e in &o.events {
        meta = meta.line(event_line(e, u));
    }
    let mut out = String::new();
    header(&mut out, &meta);
    for (s, res) in o.samples.iter().zip(&o.energy_residual) {
        push_row(&mut out, s, *res, u, meta.wrapped_phi);
    }
    out
}

/// ϑ(φ) curve: columns tau,phi,theta,phi_wrapped.
pub fn angular_csv(a: &AngularTrajectory, meta: FileMeta) -> String {
    let mut out = String::new();
    for l in &meta.lines {
        let _ = writeln!(out, "# {l}");
    }
    for e in &a.events {
        let _ = writeln!(
            out,
            "# event: kind={} tau={} theta={} phi={}",
            e.kind,
            Num(e.t),
            Num(e.theta),
            Num(e.phi)
        );
    }
    out.push_str("tau,phi,theta,phi_wrapped\n");
    for (tau, (phi, theta)) in a.tau.iter().zip(&a.points) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            Num(*tau),
            Num(*phi),
            Num(*theta),
            Num(wrap(*phi))
        );
    }
    out
}

/// Event recorded in a file header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeaderEvent {
    pub kind: EventKind,
    pub t: f64,
    pub r: f64,
}

/// A trajectory file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: Vec<String>,
    pub events: Vec<HeaderEvent>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryFile {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Value of a `key: value` header line.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.header.iter().find_map(|l| {
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .map(str::trim)
        })
    }
}

fn field<T: FromStr>(line: &str, key: &str) -> Option<T> {
    line.split_whitespace()
        .find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .and_then(|v| v.parse().ok())
}

impl FromStr for TrajectoryFile {
    type Err = QhjError;

    fn from_str(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut events = Vec::new();
        let mut columns = None;
        let mut rows = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim().to_string();
                if let Some(ev) = h.strip_prefix("event:") {
                    let kind = field::<String>(ev, "kind").and_then(|k| EventKind::parse(&k));
                    let t = field(ev, "t").or_else(|| field(ev, "tau"));
                    let r = field(ev, "r").unwrap_or(f64::NAN);
                    match (kind, t) {
                        (Some(kind), Some(t)) => events.push(HeaderEvent { kind, t, r }),
                        _ => {
                            return Err(QhjError::Config(format!(
                                "line {}: bad event line",
                                no + 1
                            )))
                        }
                    }
                }
                header.push(h);
            } else if line.trim().is_empty() {
                continue;
            } else if columns.is_none() {
                columns = Some(
                    line.split(',')
                        .map(|c| c.trim().to_string())
                        .collect::<Vec<_>>(),
                );
            } else {
                let row: Vec<f64> = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| QhjError::Config(format!("line {}: non-numeric field", no + 1)))?;
                if row.len() != columns.as_ref().map_or(0, Vec::len) {
                    return Err(QhjError::Config(format!(
                        "line {}: wrong number of fields",
                        no + 1
                    )));
                }
                rows.push(row);
            }
        }
        Ok(TrajectoryFile {
            header,
            events,
            columns: columns.ok_or_else(|| QhjError::Config("no column header line".into()))?,
            rows,
        })
    }
}
