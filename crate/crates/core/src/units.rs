//! Unit system and physical constants.
//!
//! All computation runs in internal units with ħ = m₀ = a₀ = 1, which forces
//! k·e² = 1 and E_n = −1/(2n²). SI values only appear at I/O boundaries.

use std::fmt;
use std::str::FromStr;

use crate::error::{QhjError, Result};

/// SI constants used for conversion.
///
/// k and a₀ are the printed values (9·10⁹ and 0.52917·10⁻¹⁰ m); the electron
/// mass is derived from ħ, e, k and a₀ so that a₀ = ħ²/(m₀ k e²) holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub m0: f64,
    pub k_e: f64,
    pub e_charge: f64,
    pub a0: f64,
    /// k e² / a₀, the energy unit of the internal system (J).
    pub e_hartree_like: f64,
}

pub const HBAR_SI: f64 = 1.054_571_817e-34;
pub const E_CHARGE_SI: f64 = 1.602_176_634e-19;
pub const K_E_SI: f64 = 9.0e9;
pub const A0_SI: f64 = 0.52917e-10;

impl PhysicalConstants {
    pub fn hydrogen() -> Self {
        let hbar = HBAR_SI;
        let e_charge = E_CHARGE_SI;
        let k_e = K_E_SI;
        let a0 = A0_SI;
        let m0 = hbar * hbar / (a0 * k_e * e_charge * e_charge);
        let e_hartree_like = k_e * e_charge * e_charge / a0;
        Self {
            hbar,
            m0,
            k_e,
            e_charge,
            a0,
            e_hartree_like,
        }
    }

    pub fn bohr_radius_from_constants(&self) -> f64 {
        self.hbar * self.hbar / (self.m0 * self.k_e * self.e_charge * self.e_charge)
    }

    /// Time unit m₀a₀²/ħ in seconds.
    pub fn time_unit(&self) -> f64 {
        self.m0 * self.a0 * self.a0 / self.hbar
    }

    /// Energy unit ħ²/(m₀a₀²) in joules. Equal to `e_hartree_like`.
    pub fn energy_unit(&self) -> f64 {
        self.hbar * self.hbar / (self.m0 * self.a0 * self.a0)
    }

    pub fn joule_to_ev(&self, joule: f64) -> f64 {
        joule / self.e_charge
    }

    pub fn ev_to_joule(&self, ev: f64) -> f64 {
        ev * self.e_charge
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::hydrogen()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantityKind {
    Length,
    Time,
    Energy,
}

impl FromStr for QuantityKind {
    type Err = QhjError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "length" => Ok(QuantityKind::Length),
            "time" => Ok(QuantityKind::Time),
            "energy" => Ok(QuantityKind::Energy),
            other => Err(QhjError::Domain(format!("unknown quantity kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum UnitMode {
    #[default]
    Internal,
    Si,
}

impl FromStr for UnitMode {
    type Err = QhjError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "internal" => Ok(UnitMode::Internal),
            "si" => Ok(UnitMode::Si),
            other => Err(QhjError::Config(format!(
                "unknown unit system '{other}' (expected internal or si)"
            ))),
        }
    }
}

impl fmt::Display for UnitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitMode::Internal => write!(f, "internal"),
            UnitMode::Si => write!(f, "si"),
        }
    }
}

/// Converts between internal and SI quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    pub mode: UnitMode,
    pub constants: PhysicalConstants,
    length_scale: f64,
    time_scale: f64,
    energy_scale: f64,
}

impl UnitSystem {
    pub fn new(mode: UnitMode) -> Self {
        let constants = PhysicalConstants::hydrogen();
        Self {
            mode,
            constants,
            length_scale: constants.a0,
            time_scale: constants.time_unit(),
            energy_scale: constants.energy_unit(),
        }
    }

    pub fn internal() -> Self {
        Self::new(UnitMode::Internal)
    }

    pub fn si() -> Self {
        Self::new(UnitMode::Si)
    }

    pub fn scale(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Length => self.length_scale,
            QuantityKind::Time => self.time_scale,
            QuantityKind::Energy => self.energy_scale,
        }
    }

    /// SI value → dimensionless internal value.
    pub fn to_internal(&self, q: f64, kind: QuantityKind) -> f64 {
        q / self.scale(kind)
    }

    /// Internal value → SI value.
    pub fn from_internal(&self, q: f64, kind: QuantityKind) -> f64 {
        q * self.scale(kind)
    }

    /// Internal value expressed in this system's output unit.
    pub fn output(&self, q: f64, kind: QuantityKind) -> f64 {
        match self.mode {
            UnitMode::Internal => q,
            UnitMode::Si => self.from_internal(q, kind),
        }
    }

    /// Value given in this system's unit → internal value.
    pub fn input(&self, q: f64, kind: QuantityKind) -> f64 {
        match self.mode {
            UnitMode::Internal => q,
            UnitMode::Si => self.to_internal(q, kind),
        }
    }

    pub fn unit_label(&self, kind: QuantityKind) -> &'static str {
        match (self.mode, kind) {
            (UnitMode::Internal, QuantityKind::Length) => "a0",
            (UnitMode::Internal, QuantityKind::Time) => "m0*a0^2/hbar",
            (UnitMode::Internal, QuantityKind::Energy) => "hbar^2/(m0*a0^2)",
            (UnitMode::Si, QuantityKind::Length) => "m",
            (UnitMode::Si, QuantityKind::Time) => "s",
            (UnitMode::Si, QuantityKind::Energy) => "J",
        }
    }

    pub fn energy_to_ev(&self, internal_energy: f64) -> f64 {
        self.constants
            .joule_to_ev(self.from_internal(internal_energy, QuantityKind::Energy))
    }

    pub fn energy_from_ev(&self, ev: f64) -> f64 {
        self.to_internal(self.constants.ev_to_joule(ev), QuantityKind::Energy)
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::internal()
    }
}

/// Parses a quantity kind name and converts an SI value to internal units.
pub fn to_internal(q: f64, kind: &str) -> Result<f64> {
    let kind: QuantityKind = kind.parse()?;
    Ok(UnitSystem::internal().to_internal(q, kind))
}

/// Bound-state energy E_n = −k e²/(2n²a₀), i.e. −1/(2n²) internally.
pub fn energy_of_state(n: u32) -> Result<f64> {
    if n == 0 {
        return Err(QhjError::Domain(
            "principal quantum number must be >= 1".into(),
        ));
    }
    let n = f64::from(n);
    Ok(-0.5 / (n * n))
}
