//! Hydrogen basis functions and wronskian-normalized solution pairs.

mod pair;
pub mod poly;
pub mod table;

use std::fmt;

use num_rational::Ratio;

use crate::error::{QhjError, Result};
use crate::units::energy_of_state;
pub use pair::{Coordinate, PairValue, SecondKind, SolutionPair};
use poly::{horner, horner_deriv, legendre_rodrigues_core, PolyExp, Rational};

/// Quantum numbers of a bound state, with its energy in internal units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundState {
    pub n: u32,
    pub l: u32,
    pub m_l: i32,
    pub energy: f64,
    pub lambda: f64,
}

impl BoundState {
    pub fn new(n: u32, l: u32, m_l: i32) -> Result<Self> {
        if n == 0 {
            return Err(QhjError::Domain("n must be >= 1".into()));
        }
        if l >= n {
            return Err(QhjError::Domain(format!("l = {l} must be < n = {n}")));
        }
        if m_l.unsigned_abs() > l {
            return Err(QhjError::Domain(format!(
                "|m_l| = {} exceeds l = {l}",
                m_l.abs()
            )));
        }
        Ok(Self {
            n,
            l,
            m_l,
            energy: energy_of_state(n)?,
            lambda: f64::from(l * (l + 1)),
        })
    }

    /// The four states treated explicitly: (1,0,0), (2,0,0), (2,1,0), (2,1,1).
    pub fn catalog() -> [BoundState; 4] {
        [(1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 1, 1)]
            .map(|(n, l, m)| BoundState::new(n, l, m).expect("catalog state"))
    }

    /// m_l² − ¼, the coefficient of the angular fictitious potential.
    pub fn m_term(&self) -> f64 {
        let m = f64::from(self.m_l);
        m * m - 0.25
    }

    /// Coulomb potential V(r) = −1/r.
    pub fn potential(&self, r: f64) -> f64 {
        -1.0 / r
    }

    /// E − V(r) − l(l+1)/2r², whose sign decides radial motion.
    pub fn radial_bracket(&self, r: f64) -> f64 {
        self.energy + 1.0 / r - 0.5 * self.lambda / (r * r)
    }

    /// l(l+1) − (m_l² − ¼)/sin²ϑ, whose sign decides polar motion.
    pub fn polar_bracket(&self, theta: f64) -> f64 {
        let s = theta.sin();
        self.lambda - self.m_term() / (s * s)
    }
}

impl fmt::Display for BoundState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.n, self.l, self.m_l)
    }
}

/// Radial function 𝒳₁^(nl)(r) = e^{r/n} r^{−l} dᵏ/drᵏ [r^{n+l} e^{−2r/n}], k = n−l−1,
/// built by exact differentiation (internal units, constants kept as produced).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialChi {
    pub n: u32,
    pub l: u32,
    form: PolyExp,
}

pub fn radial_chi(state: &BoundState) -> Result<RadialChi> {
    let (n, l) = (state.n, state.l);
    if l >= n {
        return Err(QhjError::Domain(format!("l = {l} must be < n = {n}")));
    }
    let n_i = i128::from(n);
    let mut f = PolyExp::monomial((n + l) as usize, Ratio::new(2, n_i));
    for _ in 0..(n - l - 1) {
        f = f.derivative();
    }
    let f = f.times_exp(Ratio::new(1, n_i));
    let form = f
        .divide_by_power(l as usize)
        .ok_or_else(|| QhjError::Consistency("radial polynomial not divisible by r^l".into()))?;
    Ok(RadialChi { n, l, form })
}

impl RadialChi {
    pub fn form(&self) -> &PolyExp {
        &self.form
    }

    pub fn value(&self, r: f64) -> f64 {
        self.form.value(r)
    }

    /// (value, first, second derivative).
    pub fn eval3(&self, r: f64) -> (f64, f64, f64) {
        self.form.eval3(r)
    }

    /// Zeros in (0, ∞), found by sign scan and bisection.
    pub fn positive_zeros(&self) -> Vec<f64> {
        let c = self.form.float_coeffs();
        let n = f64::from(self.n);
        let r_max = 4.0 * n * (n + f64::from(self.l) + 2.0) + 10.0;
        scan_zeros(|r| horner(c, r), 1e-9, r_max, 40_000)
    }
}

impl fmt::Display for RadialChi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .form
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| *c.numer() != 0)
            .map(|(k, c)| format!("({c})*r^{k}"))
            .collect();
        write!(f, "[{}]*exp(-{}*r)", terms.join(" + "), self.form.decay())
    }
}

/// Polar function 𝒯₁^(l m)(ϑ) = sin^{|m|+½}ϑ · P(cosϑ) with
/// P = d^{l+|m|}/du^{l+|m|} (1−u²)^l scaled to unit leading coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarT {
    pub l: u32,
    pub m_abs: u32,
    /// Exponent of sinϑ.
    pub sin_power: f64,
    coeffs: Vec<f64>,
    raw: Vec<i128>,
}

pub fn polar_t(l: u32, m_l: i32) -> Result<PolarT> {
    let m_abs = m_l.unsigned_abs();
    if m_abs > l {
        return Err(QhjError::Domain(format!("|m_l| = {m_abs} exceeds l = {l}")));
    }
    let raw = legendre_rodrigues_core(l, l + m_abs);
    let lead = raw
        .iter()
        .rev()
        .find(|&&c| c != 0)
        .copied()
        .ok_or_else(|| QhjError::Consistency("vanishing Rodrigues polynomial".into()))?;
    let coeffs = raw.iter().map(|&c| c as f64 / lead as f64).collect();
    Ok(PolarT {
        l,
        m_abs,
        sin_power: f64::from(m_abs) + 0.5,
        coeffs,
        raw,
    })
}

impl PolarT {
    /// Integer Rodrigues coefficients before normalization.
    pub fn raw_coeffs(&self) -> &[i128] {
        &self.raw
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self, theta: f64) -> f64 {
        theta.sin().powf(self.sin_power) * horner(&self.coeffs, theta.cos())
    }

    /// (value, first, second derivative) in ϑ, from exact differentiation.
    pub fn eval3(&self, theta: f64) -> (f64, f64, f64) {
        let s = theta.sin();
        let c = theta.cos();
        let mu = self.sin_power;
        let p = horner(&self.coeffs, c);
        let dp = horner_deriv(&self.coeffs, c, 1);
        let ddp = horner_deriv(&self.coeffs, c, 2);
        let sm = s.powf(mu - 2.0);
        let v = sm * s * s * p;
        // T' = s^{μ-1} G, G = μ c P − s² P'
        let g = mu * c * p - s * s * dp;
        let d1 = sm * s * g;
        // G' = −μ s P − (μ+2) s c P' + s³ P''
        let dg = -mu * s * p - (mu + 2.0) * s * c * dp + s * s * s * ddp;
        let d2 = (mu - 1.0) * sm * c * g + sm * s * dg;
        (v, d1, d2)
    }

    /// Zeros in (0, π).
    pub fn interior_zeros(&self) -> Vec<f64> {
        let c = &self.coeffs;
        scan_zeros(
            |th| horner(c, th.cos()),
            1e-9,
            std::f64::consts::PI - 1e-9,
            20_000,
        )
    }
}

/// Azimuthal function F₁(φ) = sin(|m|φ), or 1 when m = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthalF {
    pub m_abs: u32,
}

pub fn azimuthal_f(m_l: i32) -> AzimuthalF {
    AzimuthalF {
        m_abs: m_l.unsigned_abs(),
    }
}

impl AzimuthalF {
    pub fn value(&self, phi: f64) -> f64 {
        self.eval3(phi).0
    }

    pub fn eval3(&self, phi: f64) -> (f64, f64, f64) {
        if self.m_abs == 0 {
            return (1.0, 0.0, 0.0);
        }
        let m = f64::from(self.m_abs);
        let (s, c) = (m * phi).sin_cos();
        (s, m * c, -m * m * s)
    }
}

fn scan_zeros<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let dx = (hi - lo) / n as f64;
    let mut a = lo;
    let mut fa = f(a);
    for k in 1..=n {
        let b = lo + dx * k as f64;
        let fb = f(b);
        if fa == 0.0 {
            out.push(a);
        } else if fa * fb < 0.0 {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (x0 + x1);
                let fm = f(mid);
                if fm == 0.0 {
                    x0 = mid;
                    x1 = mid;
                    break;
                }
                if fm * f0 < 0.0 {
                    x1 = mid;
                } else {
                    x0 = mid;
                    f0 = fm;
                }
                if x1 - x0 <= 4.0 * f64::EPSILON * mid.abs() {
                    break;
                }
            }
            out.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    out
}

/// Builds the solution pair for one coordinate of `state`.
pub fn second_solution(state: &BoundState, coordinate: Coordinate) -> Result<SolutionPair> {
    SolutionPair::for_state(state, coordinate)
}

/// Radial rational helper used by tests: (n, d) → Rational.
pub fn rational(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}
