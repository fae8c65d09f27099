//! Conjugate momenta dZ/dr, dL/dϑ, dM/dφ and the reduced actions Z, L, M.
//!
//! With u = a·s2 + b·s1 and v = s1 the momentum is p = σ·a/(u² + v²) and the
//! reduced action σ·arctan(u/v), continued across the zeros of s1.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::basis::{BoundState, Coordinate, PairValue, SolutionPair};
use crate::error::{QhjError, Result};

/// Direction sign ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn of(v: f64) -> Self {
        if v < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

impl FromStr for Sign {
    type Err = QhjError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "+1" | "1" | "plus" => Ok(Sign::Plus),
            "-" | "-1" | "minus" => Ok(Sign::Minus),
            other => Err(QhjError::Config(format!("bad sign '{other}'"))),
        }
    }
}

/// The six integration constants selecting one trajectory, plus the three
/// direction signs of the momenta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenVariables {
    pub a_r: f64,
    pub b_r: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub sign_r: Sign,
    pub sign_theta: Sign,
    pub sign_phi: Sign,
}

impl HiddenVariables {
    /// All signs positive.
    pub fn new(
        a_r: f64,
        b_r: f64,
        a_theta: f64,
        b_theta: f64,
        a_phi: f64,
        b_phi: f64,
    ) -> Result<Self> {
        let h = Self {
            a_r,
            b_r,
            a_theta,
            b_theta,
            a_phi,
            b_phi,
            sign_r: Sign::Plus,
            sign_theta: Sign::Plus,
            sign_phi: Sign::Plus,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn with_signs(mut self, r: Sign, theta: Sign, phi: Sign) -> Self {
        self.sign_r = r;
        self.sign_theta = theta;
        self.sign_phi = phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.a_r,
            self.b_r,
            self.a_theta,
            self.b_theta,
            self.a_phi,
            self.b_phi,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(QhjError::Config("hidden variables must be finite".into()));
        }
        for (name, a) in [
            ("a_r", self.a_r),
            ("a_theta", self.a_theta),
            ("a_phi", self.a_phi),
        ] {
            if a == 0.0 {
                return Err(QhjError::Config(format!("{name} must be nonzero")));
            }
        }
        Ok(())
    }

    /// (a, b, sign) for one coordinate.
    pub fn component(&self, c: Coordinate) -> (f64, f64, Sign) {
        match c {
            Coordinate::Radial => (self.a_r, self.b_r, self.sign_r),
            Coordinate::Polar => (self.a_theta, self.b_theta, self.sign_theta),
            Coordinate::Azimuthal => (self.a_phi, self.b_phi, self.sign_phi),
        }
    }

    pub fn signs(&self) -> [Sign; 3] {
        [self.sign_r, self.sign_theta, self.sign_phi]
    }
}

impl FromStr for HiddenVariables {
    type Err = QhjError;

    /// Six comma-separated numbers `a_r,b_r,a_theta,b_theta,a_phi,b_phi`,
    /// optionally followed by three signs.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 6 && parts.len() != 9 {
            return Err(QhjError::Config(format!(
                "hidden variables need 6 numbers (optionally + 3 signs), got '{s}'"
            )));
        }
        let mut v = [0.0; 6];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| QhjError::Config(format!("bad hidden-variable value '{p}'")))?;
        }
        let mut h = HiddenVariables::new(v[0], v[1], v[2], v[3], v[4], v[5])?;
        if parts.len() == 9 {
            h = h.with_signs(parts[6].parse()?, parts[7].parse()?, parts[8].parse()?);
        }
        Ok(h)
    }
}

impl fmt::Display for HiddenVariables {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            self.a_r,
            self.b_r,
            self.a_theta,
            self.b_theta,
            self.a_phi,
            self.b_phi,
            self.sign_r,
            self.sign_theta,
            self.sign_phi
        )
    }
}

/// Momentum, its first two derivatives and the Schwarzian of the action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumJet {
    pub p: f64,
    pub dp: f64,
    pub ddp: f64,
    pub schwarzian: f64,
    pub denominator: f64,
}

#[derive(Debug, Clone)]
pub struct MomentumComponent {
    pub pair: SolutionPair,
    pub a: f64,
    pub b: f64,
    pub sign: Sign,
}

impl MomentumComponent {
    pub fn new(pair: SolutionPair, a: f64, b: f64, sign: Sign) -> Result<Self> {
        if a == 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(QhjError::Config(format!(
                "{} momentum needs finite a != 0 (a = {a}, b = {b})",
                pair.coordinate()
            )));
        }
        Ok(Self { pair, a, b, sign })
    }

    pub fn for_state(state: &BoundState, hidden: &HiddenVariables, c: Coordinate) -> Result<Self> {
        let (a, b, sign) = hidden.component(c);
        Self::new(SolutionPair::for_state(state, c)?, a, b, sign)
    }

    pub fn coordinate(&self) -> Coordinate {
        self.pair.coordinate()
    }

    fn uv(&self, v: &PairValue) -> [f64; 6] {
        let (a, b) = (self.a, self.b);
        [
            a * v.s2 + b * v.s1,
            a * v.ds2 + b * v.ds1,
            a * v.dds2 + b * v.dds1,
            v.s1,
            v.ds1,
            v.dds1,
        ]
    }

    fn denominator(&self, v: &PairValue) -> Result<f64> {
        let [u, _, _, s, _, _] = self.uv(v);
        let d = u * u + s * s;
        if !(d > 0.0) || !d.is_finite() {
            return Err(QhjError::Consistency(format!(
                "momentum denominator {d} (s1 = {}, s2 = {})",
                v.s1, v.s2
            )));
        }
        Ok(d)
    }

    /// σ·a/((a s2 + b s1)² + s1²).
    pub fn momentum(&self, q: f64) -> Result<f64> {
        let v = self.pair.eval(q)?;
        let d = self.denominator(&v)?;
        let p = self.sign.value() * self.a / d;
        if p == 0.0 || !p.is_finite() {
            return Err(QhjError::Consistency(format!("momentum {p} at q = {q}")));
        }
        Ok(p)
    }

    /// Analytic derivatives of the momentum and the Schwarzian {Z, q}.
    pub fn jet(&self, q: f64) -> Result<MomentumJet> {
        let v = self.pair.eval(q)?;
        let d = self.denominator(&v)?;
        let [u, du, ddu, s, ds, dds] = self.uv(&v);
        let d1 = 2.0 * (u * du + s * ds);
        let d2 = 2.0 * (du * du + ds * ds + u * ddu + s * dds);
        let p = self.sign.value() * self.a / d;
        let r1 = d1 / d;
        let r2 = d2 / d;
        // p'/p = −D'/D, p''/p = −D''/D + 2(D'/D)²
        Ok(MomentumJet {
            p,
            dp: -p * r1,
            ddp: p * (2.0 * r1 * r1 - r2),
            schwarzian: -r2 + 0.5 * r1 * r1,
            denominator: d,
        })
    }

    /// σ·arctan(u/v) plus π per zero of s1 between the anchor and q, so that
    /// the derivative equals the momentum everywhere.
    pub fn reduced_action(&self, q: f64) -> Result<f64> {
        let v = self.pair.eval(q)?;
        self.denominator(&v)?;
        let u = self.a * v.s2 + self.b * v.s1;
        let dir = (self.a * self.pair.wronskian()).signum();
        let mut n = self.pair.zeros_crossed(q) as f64;
        let base = if v.s1 == 0.0 {
            // left limit at an exact zero
            n -= 1.0;
            dir * 0.5 * PI
        } else {
            (u / v.s1).atan()
        };
        Ok(self.sign.value() * (base + dir * PI * n))
    }

    /// Left side minus right side of the component QSHJE, using the
    /// analytic Schwarzian. Points within 1e-4 of a singular edge are refused.
    pub fn qshje_residual(&self, q: f64) -> Result<f64> {
        self.qshje_residual_with(q, true)
    }

    /// `quantum = false` drops the ħ² terms (classical limit).
    pub fn qshje_residual_with(&self, q: f64, quantum: bool) -> Result<f64> {
        guard(self.coordinate(), q)?;
        let j = self.jet(q)?;
        let st = self.pair.state();
        let h2 = if quantum { 1.0 } else { 0.0 };
        Ok(component_residual(
            st,
            self.coordinate(),
            q,
            j.p,
            j.schwarzian,
            h2,
        ))
    }

    /// Schwarzian from 5-point finite differences of the momentum.
    pub fn schwarzian_fd(&self, q: f64, h: f64) -> Result<f64> {
        guard(self.coordinate(), q)?;
        if h <= 0.0 || q - 2.0 * h <= 0.0 && self.coordinate() != Coordinate::Azimuthal {
            return Err(QhjError::Evaluation(format!(
                "finite-difference step {h} at q = {q}"
            )));
        }
        let f = |x: f64| self.momentum(x);
        let (m2, m1, p0, p1, p2) = (
            f(q - 2.0 * h)?,
            f(q - h)?,
            f(q)?,
            f(q + h)?,
            f(q + 2.0 * h)?,
        );
        let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let d2 = (-m2 + 16.0 * m1 - 30.0 * p0 + 16.0 * p1 - p2) / (12.0 * h * h);
        Ok(d2 / p0 - 1.5 * (d1 / p0) * (d1 / p0))
    }
}

const EDGE_EPS: f64 = 1e-4;

fn guard(c: Coordinate, q: f64) -> Result<()> {
    let ok = match c {
        Coordinate::Radial => q >= EDGE_EPS,
        Coordinate::Polar => q >= EDGE_EPS && q <= PI - EDGE_EPS,
        Coordinate::Azimuthal => q.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(QhjError::Evaluation(format!(
            "{c} coordinate {q} within the edge guard"
        )))
    }
}

/// Residual of one component equation given momentum p and Schwarzian S.
/// `h2` multiplies every ħ² term (1 normally, 0 in the classical limit).
pub fn component_residual(st: &BoundState, c: Coordinate, q: f64, p: f64, s: f64, h2: f64) -> f64 {
    match c {
        Coordinate::Radial => {
            0.5 * p * p + 0.25 * h2 * s + st.potential(q) + 0.5 * h2 * st.lambda / (q * q)
                - st.energy
        }
        Coordinate::Polar => {
            let sn = q.sin();
            p * p + 0.5 * h2 * s + h2 * st.m_term() / (sn * sn) - h2 * (st.lambda + 0.25)
        }
        Coordinate::Azimuthal => p * p + 0.5 * h2 * s - h2 * f64::from(st.m_l * st.m_l),
    }
}

/// Free-function form of [`MomentumComponent::momentum`].
pub fn momentum(component: &MomentumComponent, q: f64) -> Result<f64> {
    component.momentum(q)
}

/// Free-function form of [`MomentumComponent::reduced_action`].
pub fn reduced_action(component: &MomentumComponent, q: f64) -> Result<f64> {
    component.reduced_action(q)
}

/// Free-function form of [`MomentumComponent::qshje_residual`].
pub fn qshje_residual(component: &MomentumComponent, q: f64) -> Result<f64> {
    component.qshje_residual(q)
}

/// The three momentum components of one state.
#[derive(Debug, Clone)]
pub struct StateMomenta {
    pub state: BoundState,
    pub radial: MomentumComponent,
    pub polar: MomentumComponent,
    pub azimuthal: MomentumComponent,
}

impl StateMomenta {
    pub fn new(state: &BoundState, hidden: &HiddenVariables) -> Result<Self> {
        hidden.validate()?;
        Ok(Self {
            state: *state,
            radial: MomentumComponent::for_state(state, hidden, Coordinate::Radial)?,
            polar: MomentumComponent::for_state(state, hidden, Coordinate::Polar)?,
            azimuthal: MomentumComponent::for_state(state, hidden, Coordinate::Azimuthal)?,
        })
    }

    pub fn get(&self, c: Coordinate) -> &MomentumComponent {
        match c {
            Coordinate::Radial => &self.radial,
            Coordinate::Polar => &self.polar,
            Coordinate::Azimuthal => &self.azimuthal,
        }
    }

    /// Momenta with the given signs (the stored signs are ignored).
    pub fn momenta(&self, r: f64, theta: f64, phi: f64, signs: [Sign; 3]) -> Result<[f64; 3]> {
        let mags = [
            self.radial.momentum(r)? * self.radial.sign.value(),
            self.polar.momentum(theta)? * self.polar.sign.value(),
            self.azimuthal.momentum(phi)? * self.azimuthal.sign.value(),
        ];
        Ok([
            mags[0] * signs[0].value(),
            mags[1] * signs[1].value(),
            mags[2] * signs[2].value(),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn st(n: u32, l: u32, m: i32) -> BoundState {
        BoundState::new(n, l, m).unwrap()
    }

    fn comp(s: &BoundState, c: Coordinate, a: f64, b: f64) -> MomentumComponent {
        MomentumComponent::new(SolutionPair::for_state(s, c).unwrap(), a, b, Sign::Plus).unwrap()
    }

    #[test]
    fn hidden_variable_validation_and_parsing() {
        assert!(HiddenVariables::new(0.0, 1.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(HiddenVariables::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
        let h: HiddenVariables = "3.1,-0.4,0.6,-0.2,1,0".parse().unwrap();
        assert_eq!(h.a_r, 3.1);
        assert_eq!(h.sign_phi, Sign::Plus);
        let h: HiddenVariables = "1,0,1,0,1,0,-,+,-1".parse().unwrap();
        assert_eq!(h.signs(), [Sign::Minus, Sign::Plus, Sign::Minus]);
        let back: HiddenVariables = h.to_string().parse().unwrap();
        assert_eq!(back, h);
        assert!("1,2,3".parse::<HiddenVariables>().is_err());
    }

    #[test]
    fn azimuthal_examples() {
        let c = comp(&st(1, 0, 0), Coordinate::Azimuthal, 1.0, 0.0);
        assert_eq!(c.momentum(0.0).unwrap(), 1.0);
        for phi in [-2.0, 0.3, 5.0] {
            assert!((c.reduced_action(phi).unwrap() - f64::atan(phi)).abs() < 1e-15);
        }
        let c = comp(&st(2, 1, 1), Coordinate::Azimuthal, 1.0, 0.0);
        assert!((c.momentum(std::f64::consts::FRAC_PI_2).unwrap() - 1.0).abs() < 1e-15);
        // closed form 1/((a sinφ... ) against the expanded denominator
        let (a, b) = (0.7, -0.3);
        let c = comp(&st(2, 1, 1), Coordinate::Azimuthal, a, b);
        for phi in [0.2, 1.1, 2.9] {
            let s: f64 = f64::sin(phi);
            let co = phi.cos();
            let printed = a / ((a * co - b * s).powi(2) + s * s);
            assert!((c.momentum(phi).unwrap() - printed).abs() < 1e-13);
        }
    }

    #[test]
    fn action_is_zero_at_anchor() {
        for s in BoundState::catalog() {
            for c in Coordinate::ALL {
                let m = comp(&s, c, 1.3, 0.0);
                let q = m.pair.anchor();
                assert!(m.reduced_action(q).unwrap().abs() < 1e-12, "{s} {c}");
            }
        }
    }

    /// Oracle: quadrature of 1/(r² e^{−2r}) from r = 1 gives the second
    /// solution for the ground state, independent of the tabulated path.
    #[test]
    fn ground_state_radial_momentum_matches_quadrature() {
        let s = st(1, 0, 0);
        let (a, b) = (0.36, 0.52);
        let m = comp(&s, Coordinate::Radial, a, b);
        for r in [0.3, 0.8, 1.5, 2.0, 3.5] {
            let n = 20_000;
            let h = (r - 1.0) / n as f64;
            let f = |x: f64| (2.0 * x).exp() / (x * x);
            let mut acc = f(1.0) + f(r);
            for k in 1..n {
                let x = 1.0 + h * k as f64;
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            let integral = acc * h / 3.0;
            let s1 = r * (-r).exp();
            let s2 = s1 * integral;
            let expect = a / ((a * s2 + b * s1).powi(2) + s1 * s1);
            let got = m.momentum(r).unwrap();
            assert!(
                (got - expect).abs() < 1e-8 * expect.abs(),
                "{r}: {got} {expect}"
            );
        }
    }

    #[test]
    fn action_derivative_matches_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in BoundState::catalog() {
            for c in Coordinate::ALL {
                let a = rng.gen_range(0.3..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let b = rng.gen_range(-1.0..1.0);
                let m = comp(&s, c, a, b);
                for _ in 0..250 {
                    let q = match c {
                        Coordinate::Radial => rng.gen_range(0.05..12.0),
                        Coordinate::Polar => rng.gen_range(0.05..(PI - 0.05)),
                        Coordinate::Azimuthal => rng.gen_range(-10.0..10.0),
                    };
                    let h = 1e-6;
                    let fd = (m.reduced_action(q + h).unwrap() - m.reduced_action(q - h).unwrap())
                        / (2.0 * h);
                    let p = m.momentum(q).unwrap();
                    assert!(
                        (fd - p).abs() < 1e-6 * (1.0 + p.abs()),
                        "{s} {c} q={q}: {fd} {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn momentum_continuous_through_radial_node() {
        let m = comp(&st(2, 0, 0), Coordinate::Radial, 1.2, 0.4);
        let mut prev = m.momentum(1.9).unwrap();
        for k in 1..=2000 {
            let r = 1.9 + 0.2 * k as f64 / 2000.0;
            let p = m.momentum(r).unwrap();
            assert!(((p - prev) / 1e-4).abs() < 100.0);
            prev = p;
        }
        let z0 = m.reduced_action(2.0 - 1e-9).unwrap();
        let z1 = m.reduced_action(2.0 + 1e-9).unwrap();
        assert!((z1 - z0).abs() < 1e-6);
    }

    #[test]
    fn residuals_vanish_on_catalog_states() {
        for s in BoundState::catalog() {
            for c in Coordinate::ALL {
                let m = comp(&s, c, 0.9, -0.35);
                for k in 1..40 {
                    let q = match c {
                        Coordinate::Radial => 0.2 * k as f64,
                        Coordinate::Polar => PI * k as f64 / 40.0,
                        Coordinate::Azimuthal => 0.3 * k as f64 - 6.0,
                    };
                    let r = m.qshje_residual(q).unwrap();
                    assert!(r.abs() < 1e-6, "{s} {c} q={q}: {r}");
                }
            }
        }
        let m = comp(&st(1, 0, 0), Coordinate::Radial, 1.0, 0.0);
        assert!(m.qshje_residual(1.0).unwrap().abs() < 1e-6);
        let m = comp(&st(1, 0, 0), Coordinate::Polar, 1.0, 0.0);
        assert!(m.qshje_residual(PI / 2.0).unwrap().abs() < 1e-6);
        let m = comp(&st(1, 0, 0), Coordinate::Azimuthal, 1.0, 0.0);
        assert!(m.qshje_residual(0.4).unwrap().abs() < 1e-8);
    }

    /// {arctan φ, φ} = −2/(1+φ²)² by hand.
    #[test]
    fn azimuthal_schwarzian_closed_form() {
        let m = comp(&st(1, 0, 0), Coordinate::Azimuthal, 1.0, 0.0);
        for phi in [-1.5, 0.0, 0.7] {
            let j = m.jet(phi).unwrap();
            let exact = -2.0 / (1.0 + phi * phi).powi(2);
            assert!((j.schwarzian - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_schwarzian_matches_finite_differences() {
        for s in BoundState::catalog() {
            for c in [Coordinate::Radial, Coordinate::Polar] {
                let m = comp(&s, c, 1.1, 0.25);
                for q in [0.7, 1.3, 2.1] {
                    let a = m.jet(q).unwrap().schwarzian;
                    let f = m.schwarzian_fd(q, 1e-3).unwrap();
                    assert!(
                        (a - f).abs() < 1e-5 * (1.0 + a.abs()),
                        "{s} {c} {q}: {a} {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn classical_limit_drops_quantum_terms() {
        let m = comp(&st(1, 0, 0), Coordinate::Azimuthal, 1.0, 0.0);
        let r = m.qshje_residual_with(0.0, false).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_guard() {
        let m = comp(&st(1, 0, 0), Coordinate::Radial, 1.0, 0.0);
        assert!(matches!(
            m.qshje_residual(1e-5),
            Err(QhjError::Evaluation(_))
        ));
        let m = comp(&st(1, 0, 0), Coordinate::Polar, 1.0, 0.0);
        assert!(m.qshje_residual(PI - 1e-5).is_err());
    }

    #[test]
    fn positivity_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = BoundState::catalog()
            .iter()
            .flat_map(|s| Coordinate::ALL.map(|c| SolutionPair::for_state(s, c).unwrap()))
            .collect();
        for pair in &pairs {
            for _ in 0..2_000 {
                let a = rng.gen_range(-5.0..5.0);
                if a == 0.0 {
                    continue;
                }
                let b = rng.gen_range(-5.0..5.0);
                let m = MomentumComponent::new(pair.clone(), a, b, Sign::Plus).unwrap();
                let q = match pair.coordinate() {
                    Coordinate::Radial => rng.gen_range(1e-4..60.0),
                    Coordinate::Polar => rng.gen_range(1e-4..(PI - 1e-4)),
                    Coordinate::Azimuthal => rng.gen_range(-50.0..50.0),
                };
                let p = m.momentum(q).unwrap();
                assert!(p.is_finite() && p != 0.0 && p.signum() == a.signum());
            }
        }
    }
}
