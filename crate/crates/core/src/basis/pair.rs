use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use super::table::{LinearOdeTable, PolarRegularized, RadialRegularized, RegularizedEquation};
use super::{azimuthal_f, polar_t, radial_chi, AzimuthalF, BoundState, PolarT, RadialChi};
use crate::error::{QhjError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coordinate {
    Radial,
    Polar,
    Azimuthal,
}

impl Coordinate {
    pub const ALL: [Coordinate; 3] = [Coordinate::Radial, Coordinate::Polar, Coordinate::Azimuthal];

    pub fn name(&self) -> &'static str {
        match self {
            Coordinate::Radial => "radial",
            Coordinate::Polar => "polar",
            Coordinate::Azimuthal => "azimuthal",
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the companion solution is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondKind {
    ClosedForm,
    Tabulated,
}

/// Values and first two derivatives of both solutions at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairValue {
    pub s1: f64,
    pub ds1: f64,
    pub dds1: f64,
    pub s2: f64,
    pub ds2: f64,
    pub dds2: f64,
}

impl PairValue {
    pub fn wronskian(&self) -> f64 {
        self.s1 * self.ds2 - self.s2 * self.ds1
    }
}

#[derive(Debug, Clone)]
enum First {
    Radial(RadialChi),
    Polar(PolarT),
    Azimuthal(AzimuthalF),
}

#[derive(Debug, Clone)]
enum Second {
    AzimuthalLinear,
    AzimuthalCos(f64),
    Polar00,
    Polar10,
    Polar11,
    Radial(Arc<LinearOdeTable<RadialRegularized>>),
    Polar(Arc<LinearOdeTable<PolarRegularized>>),
}

/// A solution s1 of s'' = Q(q) s together with a companion s2 such that
/// s1 s2' − s2 s1' = 1 (times `s2_scale`, which is 1 except in negative controls).
#[derive(Debug, Clone)]
pub struct SolutionPair {
    coordinate: Coordinate,
    state: BoundState,
    first: First,
    second: Second,
    anchor: f64,
    zeros: Vec<f64>,
    s2_scale: f64,
}

const RADIAL_R_MIN: f64 = 1e-7;
const POLAR_EDGE: f64 = 1e-7;

impl SolutionPair {
    /// Closed-form companion where one is catalogued, tabulated otherwise.
    pub fn for_state(state: &BoundState, coordinate: Coordinate) -> Result<Self> {
        Self::build(state, coordinate, false)
    }

    /// Always uses the tabulated companion for radial and polar coordinates.
    pub fn numeric(state: &BoundState, coordinate: Coordinate) -> Result<Self> {
        Self::build(state, coordinate, true)
    }

    fn build(state: &BoundState, coordinate: Coordinate, force_numeric: bool) -> Result<Self> {
        let m_abs = state.m_l.unsigned_abs();
        let (first, second, anchor, zeros) = match coordinate {
            Coordinate::Azimuthal => {
                let f = azimuthal_f(state.m_l);
                if m_abs == 0 {
                    (
                        First::Azimuthal(f),
                        Second::AzimuthalLinear,
                        0.0,
                        Vec::new(),
                    )
                } else {
                    let m = f64::from(m_abs);
                    (
                        First::Azimuthal(f),
                        Second::AzimuthalCos(m),
                        FRAC_PI_2 / m,
                        Vec::new(),
                    )
                }
            }
            Coordinate::Polar => {
                let t = polar_t(state.l, state.m_l)?;
                let zeros = t.interior_zeros();
                let closed = match (state.l, m_abs) {
                    _ if force_numeric => None,
                    (0, 0) => Some((Second::Polar00, FRAC_PI_2)),
                    (1, 0) => Some((Second::Polar10, polar10_anchor())),
                    (1, 1) => Some((Second::Polar11, FRAC_PI_2)),
                    _ => None,
                };
                match closed {
                    Some((s, a)) => (First::Polar(t), s, a, zeros),
                    None => {
                        let (table, anchor) = polar_table(state, &t)?;
                        (
                            First::Polar(t),
                            Second::Polar(Arc::new(table)),
                            anchor,
                            zeros,
                        )
                    }
                }
            }
            Coordinate::Radial => {
                let chi = radial_chi(state)?;
                let zeros = chi.positive_zeros();
                let (table, anchor) = radial_table(state, &chi)?;
                (
                    First::Radial(chi),
                    Second::Radial(Arc::new(table)),
                    anchor,
                    zeros,
                )
            }
        };
        Ok(Self {
            coordinate,
            state: *state,
            first,
            second,
            anchor,
            zeros,
            s2_scale: 1.0,
        })
    }

    /// Multiplies s2 by `scale`, so the wronskian becomes `scale`.
    pub fn with_s2_scale(mut self, scale: f64) -> Self {
        self.s2_scale = scale;
        self
    }

    pub fn coordinate(&self) -> Coordinate {
        self.coordinate
    }

    pub fn state(&self) -> &BoundState {
        &self.state
    }

    pub fn kind(&self) -> SecondKind {
        match self.second {
            Second::Radial(_) | Second::Polar(_) => SecondKind::Tabulated,
            _ => SecondKind::ClosedForm,
        }
    }

    /// Nominal wronskian s1 s2' − s2 s1'.
    pub fn wronskian(&self) -> f64 {
        self.s2_scale
    }

    /// Regular reference point used for branch counting.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Zeros of s1 inside the domain (empty for the azimuthal coordinate,
    /// whose zeros are kπ/|m|).
    pub fn zeros(&self) -> &[f64] {
        &self.zeros
    }

    /// Open interval where the pair may be evaluated.
    pub fn domain(&self) -> (f64, f64) {
        match &self.second {
            Second::Radial(t) => t.q_range(),
            Second::Polar(t) => t.q_range(),
            Second::Polar00 | Second::Polar10 | Second::Polar11 => (0.0, PI),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Coefficient Q(q) of s'' = Q s.
    pub fn q_coefficient(&self, q: f64) -> f64 {
        let st = &self.state;
        match self.coordinate {
            Coordinate::Radial => -2.0 / q + st.lambda / (q * q) - 2.0 * st.energy,
            Coordinate::Polar => {
                let s = q.sin();
                -(st.lambda + 0.25) + st.m_term() / (s * s)
            }
            Coordinate::Azimuthal => -f64::from(st.m_l * st.m_l),
        }
    }

    fn check_domain(&self, q: f64) -> Result<()> {
        if !q.is_finite() {
            return Err(QhjError::Domain(format!(
                "non-finite {} coordinate",
                self.coordinate
            )));
        }
        let (lo, hi) = self.domain();
        let ok = match self.coordinate {
            Coordinate::Azimuthal => true,
            _ => q > lo.max(0.0) && q < hi && (self.coordinate != Coordinate::Polar || q < PI),
        };
        if ok {
            Ok(())
        } else {
            Err(QhjError::Domain(format!(
                "{} coordinate {q} outside ({lo}, {hi})",
                self.coordinate
            )))
        }
    }

    /// s1 and its first two derivatives.
    pub fn s1_jet(&self, q: f64) -> (f64, f64, f64) {
        match &self.first {
            First::Radial(c) => c.eval3(q),
            First::Polar(t) => t.eval3(q),
            First::Azimuthal(f) => f.eval3(q),
        }
    }

    /// Evaluates both solutions and their derivatives up to second order.
    pub fn eval(&self, q: f64) -> Result<PairValue> {
        self.check_domain(q)?;
        let (s1, ds1, dds1) = self.s1_jet(q);
        let (s2, ds2) = match &self.second {
            Second::AzimuthalLinear => (q, 1.0),
            Second::AzimuthalCos(m) => (-(m * q).cos() / m, (m * q).sin()),
            Second::Polar00 => {
                let s = q.sin();
                let l = (0.5 * q).tan().ln();
                let sq = s.sqrt();
                (sq * l, 0.5 * q.cos() / sq * l + 1.0 / sq)
            }
            Second::Polar10 => {
                let (s, c) = q.sin_cos();
                let l = (0.5 * q).tan().ln();
                let a = s.sqrt();
                let da = 0.5 * c / a;
                let b = 1.0 + c + c * l;
                let db = -s - s * l + c / s;
                (a * b, da * b + a * db)
            }
            Second::Polar11 => {
                let (s, c) = q.sin_cos();
                let l = (0.5 * q).tan().ln();
                let sq = s.sqrt();
                let v = -0.5 * c / sq + 0.5 * s * sq * l;
                let d = sq + 0.25 * c * c / (s * sq) + 0.75 * sq * c * l;
                (v, d)
            }
            Second::Radial(t) => t.eval(q)?,
            Second::Polar(t) => t.eval(q)?,
        };
        let qc = self.q_coefficient(q);
        let k = self.s2_scale;
        Ok(PairValue {
            s1,
            ds1,
            dds1,
            s2: k * s2,
            ds2: k * ds2,
            dds2: k * qc * s2,
        })
    }

    /// (s1, s1').
    pub fn s1(&self, q: f64) -> Result<(f64, f64)> {
        self.check_domain(q)?;
        let (v, d, _) = self.s1_jet(q);
        Ok((v, d))
    }

    /// (s2, s2').
    pub fn s2(&self, q: f64) -> Result<(f64, f64)> {
        let p = self.eval(q)?;
        Ok((p.s2, p.ds2))
    }

    /// Signed number of zeros of s1 in (anchor, q]: positive when q lies
    /// above the anchor, negative below.
    pub fn zeros_crossed(&self, q: f64) -> i64 {
        if let Coordinate::Azimuthal = self.coordinate {
            let m = f64::from(self.state.m_l.unsigned_abs());
            if m == 0.0 {
                return 0;
            }
            // zeros at kπ/m; anchor π/(2m) sits in cell k = 0
            return (q * m / PI).floor() as i64;
        }
        let a = self.anchor;
        if q >= a {
            self.zeros.iter().filter(|&&z| z > a && z <= q).count() as i64
        } else {
            -(self.zeros.iter().filter(|&&z| z > q && z <= a).count() as i64)
        }
    }
}

/// Zero of the (1,0) companion 1 + cosϑ + cosϑ·ln tan(ϑ/2) in (0, π/2).
fn polar10_anchor() -> f64 {
    let b = |th: f64| 1.0 + th.cos() * (1.0 + (0.5 * th).tan().ln());
    let (mut lo, mut hi) = (1e-3, FRAC_PI_2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if b(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Picks the anchor node: `preferred` unless s1 is small there, else the
/// node where |s1| is largest.
fn pick_anchor<E: RegularizedEquation>(
    eq: &E,
    xs: &[f64],
    preferred: f64,
    s1: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let (mut best_x, mut best_v) = (preferred, 0.0f64);
    for &x in xs {
        let v = s1(eq.q_of_x(x));
        if v.is_finite() && v.abs() > best_v.abs() {
            best_x = x;
            best_v = v;
        }
    }
    if best_v == 0.0 {
        return Err(QhjError::DegenerateSolution(
            "s1 vanishes on the whole window".into(),
        ));
    }
    let v_pref = s1(eq.q_of_x(preferred));
    if v_pref.abs() >= 0.05 * best_v.abs() {
        Ok((preferred, v_pref))
    } else {
        Ok((best_x, best_v))
    }
}

fn radial_table(
    state: &BoundState,
    chi: &RadialChi,
) -> Result<(LinearOdeTable<RadialRegularized>, f64)> {
    let n = f64::from(state.n);
    let r_max = (10.0 * n * n).max(160.0);
    let mut xs: Vec<f64> = Vec::new();
    let x_min = RADIAL_R_MIN.ln();
    let k_min = (x_min / 0.02).floor() as i64;
    for k in k_min..0 {
        xs.push(k as f64 * 0.02);
    }
    let steps = ((r_max - 1.0) / 0.02).ceil() as i64;
    for k in 0..=steps {
        xs.push((1.0 + 0.02 * k as f64).ln());
    }
    let eq = RadialRegularized {
        lambda: state.lambda,
        energy: state.energy,
    };
    let (xa, s1a) = pick_anchor(&eq, &xs, 0.0, |r| chi.value(r))?;
    let z2 = eq.dq_dx(xa) / s1a;
    let table = LinearOdeTable::build(eq, xs, xa, [0.0, z2])?;
    Ok((table, xa.exp()))
}

fn polar_table(state: &BoundState, t: &PolarT) -> Result<(LinearOdeTable<PolarRegularized>, f64)> {
    let eq = PolarRegularized {
        lambda: state.lambda,
        m_sq: f64::from(state.m_l * state.m_l),
    };
    let x_edge = eq.x_of_q(POLAR_EDGE).abs();
    let k = (x_edge / 0.01).ceil() as i64;
    let xs: Vec<f64> = (-k..=k).map(|i| i as f64 * 0.01).collect();
    let (xa, s1a) = pick_anchor(&eq, &xs, 0.0, |th| t.value(th))?;
    let z2 = eq.dq_dx(xa) / s1a;
    let table = LinearOdeTable::build(eq, xs, xa, [0.0, z2])?;
    Ok((table, eq.q_of_x(xa)))
}
