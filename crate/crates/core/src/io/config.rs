//! Run configuration.
//!
//! Flags and config files both reduce to a `key = value` map; file entries
//! override flags. [`RunConfig::from_map`] validates everything before any
//! computation starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::trap_zone;
use crate::basis::BoundState;
use crate::error::{QhjError, Result};
use crate::momenta::HiddenVariables;
use crate::quantum::IntegratorConfig;
use crate::units::{QuantityKind, UnitMode, UnitSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Orbit,
    RadialTime,
    Angular,
    Classical,
    Trap,
    Nodes,
    Eject,
    Verify,
    StateInfo,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Orbit,
        Command::RadialTime,
        Command::Angular,
        Command::Classical,
        Command::Trap,
        Command::Nodes,
        Command::Eject,
        Command::Verify,
        Command::StateInfo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Orbit => "orbit",
            Command::RadialTime => "radial-time",
            Command::Angular => "angular",
            Command::Classical => "classical",
            Command::Trap => "trap",
            Command::Nodes => "nodes",
            Command::Eject => "eject",
            Command::Verify => "verify",
            Command::StateInfo => "state-info",
        }
    }

    fn needs_hidden(self) -> bool {
        matches!(
            self,
            Command::Orbit
                | Command::RadialTime
                | Command::Angular
                | Command::Nodes
                | Command::Eject
                | Command::Verify
        )
    }

    fn needs_state(self) -> bool {
        self != Command::Classical
    }
}

impl FromStr for Command {
    type Err = QhjError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| QhjError::Config(format!("unknown command '{s}'")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Time-domain integration or the r-parameterized spatial system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrbitMode {
    #[default]
    Time,
    Spatial,
}

/// E, α, β for the classical command, internal units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalInput {
    pub energy: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub state: Option<BoundState>,
    /// First entry of the ensemble.
    pub hidden: Option<HiddenVariables>,
    /// Every hidden-variable set given (at least the primary one).
    pub ensemble: Vec<HiddenVariables>,
    /// (r0, ϑ0, φ0), internal units.
    pub init: Option<(f64, f64, f64)>,
    pub integrator: IntegratorConfig,
    pub output_path: Option<PathBuf>,
    pub units: UnitSystem,
    pub mode: OrbitMode,
    pub classical: Option<ClassicalInput>,
    pub wrapped_phi: bool,
}

/// Keys understood in flag maps and config files.
pub const KEYS: [&str; 20] = [
    "state",
    "hidden",
    "r0",
    "theta0",
    "phi0",
    "t_end",
    "rel_tol",
    "abs_tol",
    "max_step",
    "max_radial_turns",
    "sample_dt",
    "ejection_radius",
    "output",
    "units",
    "mode",
    "energy",
    "alpha",
    "beta",
    "wrapped_phi",
    "turn_offset",
];

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped. A repeated `hidden` key accumulates sets separated by `;`.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            QhjError::Config(format!(
                "line {}: expected key = value, got '{raw}'",
                no + 1
            ))
        })?;
        let (k, v) = (k.trim().replace('-', "_"), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(QhjError::Config(format!(
                "line {}: unknown key '{k}'",
                no + 1
            )));
        }
        merge(&mut map, &k, v);
    }
    Ok(map)
}

fn merge(map: &mut BTreeMap<String, String>, k: &str, v: String) {
    match map.get_mut(k) {
        Some(old) if k == "hidden" => {
            old.push(';');
            old.push_str(&v);
        }
        _ => {
            map.insert(k.to_string(), v);
        }
    }
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| QhjError::Io(format!("{}: {e}", path.display())))?;
    parse_key_values(&text)
}

/// `n,l,m` or `(n,l,m)`.
pub fn parse_state(s: &str) -> Result<BoundState> {
    let t = s.trim().trim_start_matches('(').trim_end_matches(')');
    let parts: Vec<&str> = t.split(',').map(str::trim).collect();
    let bad = || QhjError::Config(format!("state must be n,l,m, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: u32 = parts[0].parse().map_err(|_| bad())?;
    let l: u32 = parts[1].parse().map_err(|_| bad())?;
    let m: i32 = parts[2].parse().map_err(|_| bad())?;
    BoundState::new(n, l, m).map_err(|e| QhjError::Config(e.to_string()))
}

fn number(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| QhjError::Config(format!("{key}: '{v}' is not a number")))
        })
        .transpose()
}

fn flag(map: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match map.get(key).map(|s| s.as_str()) {
        None => Ok(false),
        Some("true" | "1" | "yes" | "") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        Some(v) => Err(QhjError::Config(format!("{key}: '{v}' is not a boolean"))),
    }
}

/// Unit system from `QHJ_UNITS` (default internal).
pub fn units_from_env() -> Result<UnitMode> {
    match std::env::var("QHJ_UNITS") {
        Ok(v) if !v.trim().is_empty() => v.parse(),
        _ => Ok(UnitMode::Internal),
    }
}

impl RunConfig {
    /// Builds and validates a configuration. Lengths, times and energies in
    /// the map are read in the selected unit system; `default_units` applies
    /// when the map has no `units` key.
    pub fn from_map(
        command: Command,
        map: &BTreeMap<String, String>,
        default_units: UnitMode,
    ) -> Result<Self> {
        for k in map.keys() {
            if !KEYS.contains(&k.as_str()) {
                return Err(QhjError::Config(format!("unknown key '{k}'")));
            }
        }
        let mode_units = match map.get("units") {
            Some(u) => u.parse()?,
            None => default_units,
        };
        let units = UnitSystem::new(mode_units);
        let length = |v: f64| units.input(v, QuantityKind::Length);
        let time = |v: f64| units.input(v, QuantityKind::Time);

        let state = map.get("state").map(|s| parse_state(s)).transpose()?;
        if command.needs_state() && state.is_none() {
            return Err(QhjError::Config(format!("{command} needs --state n,l,m")));
        }
        let ensemble: Vec<HiddenVariables> = match map.get("hidden") {
            Some(v) => v
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        if command.needs_hidden() && ensemble.is_empty() {
            return Err(QhjError::Config(format!(
                "{command} needs --hidden a_r,b_r,a_theta,b_theta,a_phi,b_phi"
            )));
        }

        let mut integrator = IntegratorConfig::default();
        if let Some(v) = number(map, "t_end")? {
            integrator.t_end = time(v);
        }
        if let Some(v) = number(map, "rel_tol")? {
            integrator.rel_tol = v;
        }
        if let Some(v) = number(map, "abs_tol")? {
            integrator.abs_tol = v;
        }
        if let Some(v) = number(map, "max_step")? {
            integrator.max_step = time(v);
        }
        if let Some(v) = number(map, "turn_offset")? {
            integrator.turn_offset = length(v);
        }
        if let Some(v) = number(map, "ejection_radius")? {
            integrator.ejection_radius = length(v);
        }
        if let Some(v) = number(map, "sample_dt")? {
            integrator.sample_dt = Some(time(v));
        }
        if let Some(v) = map.get("max_radial_turns") {
            integrator.max_radial_turns = Some(v.parse().map_err(|_| {
                QhjError::Config(format!("max_radial_turns: '{v}' is not a count"))
            })?);
        }
        integrator.validate()?;

        let r0 = number(map, "r0")?.map(length);
        let theta0 = number(map, "theta0")?;
        let phi0 = number(map, "phi0")?;
        let init = match (r0, &state) {
            (Some(r), _) => Some((
                r,
                theta0.unwrap_or(std::f64::consts::FRAC_PI_2),
                phi0.unwrap_or(0.0),
            )),
            (None, Some(st)) if command != Command::Trap && command != Command::StateInfo => {
                Some((
                    default_r0(st)?,
                    theta0.unwrap_or(std::f64::consts::FRAC_PI_2),
                    phi0.unwrap_or(0.0),
                ))
            }
            _ => None,
        };
        if let Some((r, th, ph)) = init {
            if !(r > 0.0) || !r.is_finite() {
                return Err(QhjError::Config(format!("r0 must be positive, got {r}")));
            }
            if !(th > 0.0 && th < std::f64::consts::PI) || !ph.is_finite() {
                return Err(QhjError::Config(format!(
                    "initial angles out of range: theta0 = {th}, phi0 = {ph}"
                )));
            }
        }

        let mode = match map.get("mode").map(|s| s.as_str()) {
            None | Some("time") => OrbitMode::Time,
            Some("spatial") => OrbitMode::Spatial,
            Some(m) => {
                return Err(QhjError::Config(format!(
                    "mode must be time or spatial, got '{m}'"
                )))
            }
        };

        let classical = if command == Command::Classical {
            let e = number(map, "energy")?;
            let a = number(map, "alpha")?;
            let b = number(map, "beta")?;
            let energy = match (e, &state) {
                (Some(e), _) => units.input(e, QuantityKind::Energy),
                (None, Some(st)) => st.energy,
                (None, None) => {
                    return Err(QhjError::Config("classical needs --E or --state".into()))
                }
            };
            let (alpha, beta) = match (a, b, &state) {
                (Some(a), Some(b), _) => (a, b),
                (None, None, Some(st)) => {
                    let p = crate::classical::ClassicalParams::from_quantum(
                        st,
                        [crate::momenta::Sign::Plus; 3],
                    )?;
                    (p.alpha, p.beta)
                }
                _ => {
                    return Err(QhjError::Config(
                        "classical needs both --alpha and --beta".into(),
                    ))
                }
            };
            crate::classical::ClassicalParams::new(energy, alpha, beta)?;
            Some(ClassicalInput {
                energy,
                alpha,
                beta,
            })
        } else {
            None
        };

        Ok(RunConfig {
            command,
            state,
            hidden: ensemble.first().copied(),
            ensemble,
            init,
            integrator,
            output_path: map.get("output").map(PathBuf::from),
            units,
            mode,
            classical,
            wrapped_phi: flag(map, "wrapped_phi")?,
        })
    }
}

/// Default start: the middle of the trapping zone.
pub fn default_r0(state: &BoundState) -> Result<f64> {
    let z = trap_zone(state)?;
    Ok(0.5 * (z.r1 + z.r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn key_value_files() {
        let m = parse_key_values(
            "# run\nstate = 2,1,1\nhidden=1,0,1,0,1,0 # first\nhidden = 2,0,1,0,1,0\n\nt-end=10\n",
        )
        .unwrap();
        assert_eq!(m["state"], "2,1,1");
        assert_eq!(m["hidden"], "1,0,1,0,1,0;2,0,1,0,1,0");
        assert_eq!(m["t_end"], "10");
        assert!(parse_key_values("bogus = 1").is_err());
        assert!(parse_key_values("no equals sign").is_err());
    }

    #[test]
    fn validation_happens_up_front() {
        let ok = RunConfig::from_map(
            Command::Orbit,
            &map(&[("state", "2,1,1"), ("hidden", "3.1,-0.4,0.6,-0.2,1,0")]),
            UnitMode::Internal,
        )
        .unwrap();
        assert_eq!(ok.ensemble.len(), 1);
        assert!((ok.init.unwrap().0 - 4.0).abs() < 1e-12);
        let bad = [
            vec![("state", "2,1,1"), ("hidden", "0,1,1,0,1,0")],
            vec![("state", "2,2,0"), ("hidden", "1,0,1,0,1,0")],
            vec![("state", "1,0,0")],
            vec![("state", "1,0,0"), ("hidden", "1,0,1,0,1,0"), ("r0", "-1")],
            vec![
                ("state", "1,0,0"),
                ("hidden", "1,0,1,0,1,0"),
                ("rel_tol", "0"),
            ],
            vec![
                ("state", "1,0,0"),
                ("hidden", "1,0,1,0,1,0"),
                ("mode", "sideways"),
            ],
        ];
        for b in bad {
            let e = RunConfig::from_map(Command::Orbit, &map(&b), UnitMode::Internal).unwrap_err();
            assert_eq!(e.kind(), "config", "{b:?}: {e}");
        }
    }

    #[test]
    fn si_inputs_are_converted() {
        let c = RunConfig::from_map(
            Command::Orbit,
            &map(&[
                ("state", "1,0,0"),
                ("hidden", "1,0,1,0,1,0"),
                ("r0", "1.05834e-10"),
                ("units", "si"),
            ]),
            UnitMode::Internal,
        )
        .unwrap();
        assert!((c.init.unwrap().0 - 2.0).abs() < 1e-4);
    }

    #[test]
    fn classical_inputs() {
        let c = RunConfig::from_map(
            Command::Classical,
            &map(&[("energy", "-0.125"), ("alpha", "2"), ("beta", "0.8660254")]),
            UnitMode::Internal,
        )
        .unwrap();
        assert_eq!(c.classical.unwrap().alpha, 2.0);
        let e = RunConfig::from_map(
            Command::Classical,
            &map(&[("state", "1,0,0")]),
            UnitMode::Internal,
        )
        .unwrap_err();
        assert_eq!(e.kind(), "purely-quantum");
    }
}
