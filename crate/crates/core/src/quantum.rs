//! Quantum trajectories: the time-domain system, the r-parameterized
//! spatial orbits and the r-independent angular curves.
//!
//! Velocities follow from p·q̇ = bracket for each coordinate:
//! ṙ = 2B/p_r with B = E + 1/r − λ/2r², ϑ̇ = C/(r² p_ϑ) with
//! C = λ − (m²−¼)/sin²ϑ, and φ̇ = (m²−¼)/(r² sin²ϑ p_φ).
//!
//! The azimuth is carried through its reduced action ψ = arctan(u/v) (+ branch),
//! whose rate σ_φ(m²−¼)/(r² sin²ϑ) is regular; for m_l = 0 the azimuth itself
//! runs off to infinity in finite time, which ψ passes through smoothly.
//!
//! Turning points are approached only asymptotically (q̇ vanishes linearly at
//! a simple root of the bracket), so the direction sign is flipped on shells
//! placed `turn_offset` inside each root.
//!
//! Near the polar axis ϑ̇ ~ 1/sinϑ and ψ̇ ~ 1/sin²ϑ, and near the origin
//! ṙ ~ 1/r. The time-domain system is therefore advanced in s with
//! dt = r² sin²ϑ ds, which keeps every rate bounded.
//!
//! Coordinates are stored in charts. Far from roots r and ϑ are kept as is
//! (ϑ measured from the nearer pole, switching at the equator). Within a thin
//! layer around a turning root q* the coordinate becomes u = ln|q − q*|, so
//! that the exponential approach to the shell keeps full relative precision.
//!
//! The spatial mode marches in r and hands over to the time system inside
//! radial layers and near the axis, where r stops being a good parameter.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use crate::analysis::{trap_zone, TrapZone};
use crate::basis::{BoundState, Coordinate};
use crate::error::{QhjError, Result};
use crate::momenta::{HiddenVariables, Sign, StateMomenta};
use crate::ode::{
    integrate, Control, EventSide, EventSystem, OdeSystem, SampleKind, SolverOptions, Tolerances,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub r: f64,
    pub theta: f64,
    /// Unwrapped azimuth.
    pub phi: f64,
    pub sign_r: Sign,
    pub sign_theta: Sign,
    pub sign_phi: Sign,
}

impl TrajectoryState {
    /// Start at radius `r0` with the default angles ϑ = π/2, φ = 0 and the
    /// signs carried by `hidden`.
    pub fn at(r0: f64, hidden: &HiddenVariables) -> Self {
        Self {
            t: 0.0,
            r: r0,
            theta: FRAC_PI_2,
            phi: 0.0,
            sign_r: hidden.sign_r,
            sign_theta: hidden.sign_theta,
            sign_phi: hidden.sign_phi,
        }
    }

    pub fn with_angles(mut self, theta: f64, phi: f64) -> Self {
        self.theta = theta;
        self.phi = phi;
        self
    }

    pub fn signs(&self) -> [Sign; 3] {
        [self.sign_r, self.sign_theta, self.sign_phi]
    }

    pub fn cartesian(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [self.r * st * cp, self.r * st * sp, self.r * ct]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    RadialTurn,
    PolarTurn,
    /// s1 of one coordinate changes sign (node of the basis function).
    SignFlip,
    PolePass,
    OriginApproach,
    Ejection,
    /// m_l = 0 only: the azimuth passes through ±∞.
    AzimuthWrap,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RadialTurn => "RadialTurn",
            EventKind::PolarTurn => "PolarTurn",
            EventKind::SignFlip => "SignFlip",
            EventKind::PolePass => "PolePass",
            EventKind::OriginApproach => "OriginApproach",
            EventKind::Ejection => "Ejection",
            EventKind::AzimuthWrap => "AzimuthWrap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::RadialTurn,
            EventKind::PolarTurn,
            EventKind::SignFlip,
            EventKind::PolePass,
            EventKind::OriginApproach,
            EventKind::Ejection,
            EventKind::AzimuthWrap,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEvent {
    pub t: f64,
    pub kind: EventKind,
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub coordinate: Option<Coordinate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    EndTime,
    Ejected,
    TurnLimit,
    Failed(QhjError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state: BoundState,
    pub hidden: HiddenVariables,
    pub samples: Vec<TrajectoryState>,
    /// Azimuthal reduced action (unsigned branch) at each sample.
    pub azimuthal_action: Vec<f64>,
    /// Relative residual of ṙp_r + ϑ̇p_ϑ + φ̇p_φ = 2(E − V) at each sample.
    pub eq46: Vec<f64>,
    pub events: Vec<TrajectoryEvent>,
    pub termination: Termination,
    /// One sample index per requested time, in order. An index may point at an
    /// event sample lying within the event tolerance of the requested time.
    pub requested: Vec<usize>,
}

impl Trajectory {
    pub fn empty(state: BoundState, hidden: HiddenVariables) -> Self {
        Self {
            state,
            hidden,
            samples: Vec::new(),
            azimuthal_action: Vec::new(),
            eq46: Vec::new(),
            events: Vec::new(),
            termination: Termination::EndTime,
            requested: Vec::new(),
        }
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn max_eq46(&self) -> f64 {
        self.eq46.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn r_range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.r), hi.max(s.r))
            })
    }

    /// Radial turning events (turns and origin reflections).
    pub fn radial_extrema(&self) -> Vec<&TrajectoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::RadialTurn | EventKind::OriginApproach))
            .collect()
    }

    fn push(&mut self, s: TrajectoryState, psi: f64, eq46: f64) {
        if let Some(last) = self.samples.last() {
            if s.t <= last.t {
                // same instant as the previous sample: keep the newer state
                self.samples.pop();
                self.azimuthal_action.pop();
                self.eq46.pop();
            }
        }
        self.samples.push(s);
        self.azimuthal_action.push(psi);
        self.eq46.push(eq46);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_end: f64,
    pub event_refine_tol: f64,
    pub r_min_guard: f64,
    pub ejection_radius: f64,
    /// Distance of the turning shells from the roots.
    pub turn_offset: f64,
    /// Polar guard ε_ϑ: the axis is crossed at ϑ = ε_ϑ or π − ε_ϑ.
    pub pole_guard: f64,
    pub max_steps: usize,
    /// Stop after this many radial turning events.
    pub max_radial_turns: Option<usize>,
    /// Report samples on this uniform time grid instead of every step.
    pub sample_dt: Option<f64>,
    /// Report samples exactly at these (increasing) times.
    pub sample_times: Option<Vec<f64>>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            t_end: 50.0,
            event_refine_tol: 1e-10,
            r_min_guard: 1e-6,
            ejection_radius: 100.0,
            turn_offset: 5e-11,
            pole_guard: 1e-6,
            max_steps: 2_000_000,
            max_radial_turns: None,
            sample_dt: None,
            sample_times: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("event_refine_tol", self.event_refine_tol),
            ("r_min_guard", self.r_min_guard),
            ("ejection_radius", self.ejection_radius),
            ("turn_offset", self.turn_offset),
            ("pole_guard", self.pole_guard),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(QhjError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !self.t_end.is_finite() {
            return Err(QhjError::Config("t_end must be finite".into()));
        }
        if let Some(dt) = self.sample_dt {
            if !(dt > 0.0) {
                return Err(QhjError::Config("sample_dt must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: Tolerances {
                rtol: self.rel_tol,
                atol: self.abs_tol,
            },
            max_step: self.max_step,
            initial_step: None,
            max_steps: self.max_steps,
            event_x_tol: self.event_refine_tol,
            // turning shells sit a few 1e-11 from a fixed point of the flow, so
            // the crossing is refined in value down to rounding
            event_g_tol: 0.0,
        }
    }
}

/// Maps between the azimuth and its unsigned reduced action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthalMap {
    m: f64,
    a: f64,
    b: f64,
}

impl AzimuthalMap {
    pub fn new(m_l: i32, a: f64, b: f64) -> Self {
        Self {
            m: f64::from(m_l.unsigned_abs()),
            a,
            b,
        }
    }

    /// arctan((a s2 + b s1)/s1) continued across the zeros of s1.
    pub fn action(&self, phi: f64) -> f64 {
        let (m, a, b) = (self.m, self.a, self.b);
        if m == 0.0 {
            return (a * phi + b).atan();
        }
        let x = m * phi;
        let n = (x / PI).floor();
        let s = x.sin();
        let dir = a.signum();
        if s == 0.0 {
            return dir * (n * PI - FRAC_PI_2);
        }
        let ratio = b - (a / m) * x.cos() / s;
        ratio.atan() + dir * PI * n
    }

    /// Inverse of [`AzimuthalMap::action`].
    pub fn phi(&self, psi: f64) -> f64 {
        let (m, a, b) = (self.m, self.a, self.b);
        if m == 0.0 {
            return (psi.tan() - b) / a;
        }
        let dir = a.signum();
        let k = ((dir * psi + FRAC_PI_2) / PI).floor();
        let c = m * (b - psi.tan()) / a;
        (k * PI + FRAC_PI_2 - c.atan()) / m
    }
}

/// How a coordinate is stored in the state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Chart {
    /// r itself, or ϑ for the northern hemisphere.
    Plain,
    /// π − ϑ, the polar distance from the south pole.
    South,
    /// u = ln δ inside layer `k`, the coordinate being root + side·δ.
    Log(usize),
}

/// Band of width `width` on one side of a turning root. The coordinate is
/// carried there as the logarithm of its distance to the root: that distance
/// decays exponentially towards the fixed point while its logarithm moves at
/// a finite rate, so the turning shell is resolved to rounding of ln δ.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    root: f64,
    side: f64,
    width: f64,
    /// Other root of the radial bracket; unused for polar layers.
    other: f64,
}

impl Layer {
    fn coord(&self, u: f64) -> f64 {
        self.root + self.side * u.exp()
    }

    fn distance(&self, q: f64) -> f64 {
        self.side * (q - self.root)
    }

    /// Plain value just outside the band.
    fn outside(&self) -> f64 {
        self.root + self.side * self.width * (1.0 + NUDGE)
    }

    /// Log value just inside the band.
    fn inside(&self) -> f64 {
        self.width.ln() - NUDGE
    }
}

/// Relative width of radial layers (times max(root, 1)).
const RADIAL_LAYER: f64 = 1e-3;
/// Width of polar layers in radians.
const POLAR_LAYER: f64 = 1e-3;
/// The r-marched mode hands over to the regularized system where sinϑ is
/// below this value.
const POLAR_CAP: f64 = 0.05;
/// Chart switches place the state this far (relatively) past the boundary so
/// that the switching function starts off zero.
const NUDGE: f64 = 1e-12;
/// Upper bound of the regularized parameter; runs end through events.
const S_END: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Spec {
    Origin(f64),
    Eject(f64),
    RadialLayer(usize),
    RadialShell(usize),
    PolarLayer(usize),
    PolarShell(usize),
    Pole(f64),
    RadialZero(f64),
    PolarZero(f64),
    AzimuthCross,
    /// Hemisphere change of the plain polar chart.
    Equator,
    TimeLimit(f64),
    Sample,
    /// r-marched mode: sinϑ drops below the cap value.
    CapEnter(f64),
    /// Regularized bridge: sinϑ rises above the cap value.
    CapLeave(f64),
}

/// A state and hidden-variable set, with everything needed to move.
#[derive(Debug, Clone)]
pub struct QuantumModel {
    pub state: BoundState,
    pub hidden: HiddenVariables,
    pub momenta: StateMomenta,
    pub zone: TrapZone,
    polar_roots: Vec<f64>,
    radial_layers: Vec<Layer>,
    polar_layers: Vec<Layer>,
    pub azimuth: AzimuthalMap,
}

impl QuantumModel {
    pub fn new(state: &BoundState, hidden: &HiddenVariables) -> Result<Self> {
        hidden.validate()?;
        let momenta = StateMomenta::new(state, hidden)?;
        let zone = trap_zone(state)?;
        let mt = state.m_term();
        let polar_roots = if state.m_l != 0 && state.lambda > 0.0 {
            let s = (mt / state.lambda).sqrt().asin();
            vec![s, PI - s]
        } else {
            Vec::new()
        };
        let mut radial_roots = vec![(zone.r2, zone.r1)];
        if !zone.contains_origin {
            radial_roots.push((zone.r1, zone.r2));
        }
        let mut radial_layers = Vec::new();
        for (root, other) in radial_roots {
            for side in [-1.0, 1.0] {
                radial_layers.push(Layer {
                    root,
                    side,
                    width: RADIAL_LAYER * root.max(1.0),
                    other,
                });
            }
        }
        let mut polar_layers = Vec::new();
        for &root in &polar_roots {
            for side in [-1.0, 1.0] {
                polar_layers.push(Layer {
                    root,
                    side,
                    width: POLAR_LAYER,
                    other: f64::NAN,
                });
            }
        }
        Ok(Self {
            state: *state,
            hidden: *hidden,
            momenta,
            zone,
            polar_roots,
            radial_layers,
            polar_layers,
            azimuth: AzimuthalMap::new(state.m_l, hidden.a_phi, hidden.b_phi),
        })
    }

    /// Zeros of the polar bracket C(ϑ) in (0, π).
    pub fn polar_turning_angles(&self) -> &[f64] {
        &self.polar_roots
    }

    fn unsigned_p(&self, c: Coordinate, q: f64) -> Result<f64> {
        let comp = self.momenta.get(c);
        Ok(comp.momentum(q)? * comp.sign.value())
    }

    /// Momenta (p_r, p_ϑ, p_φ) with the given direction signs.
    pub fn momenta_at(&self, r: f64, theta: f64, phi: f64, signs: [Sign; 3]) -> Result<[f64; 3]> {
        Ok([
            signs[0].value() * self.unsigned_p(Coordinate::Radial, r)?,
            signs[1].value() * self.unsigned_p(Coordinate::Polar, theta)?,
            signs[2].value() * self.unsigned_p(Coordinate::Azimuthal, phi)?,
        ])
    }

    /// (ṙ, ϑ̇, φ̇).
    pub fn velocities(&self, r: f64, theta: f64, phi: f64, signs: [Sign; 3]) -> Result<[f64; 3]> {
        let [pr, pt, pp] = self.momenta_at(r, theta, phi, signs)?;
        let s = theta.sin();
        let st = &self.state;
        Ok([
            2.0 * st.radial_bracket(r) / pr,
            st.polar_bracket(theta) / (r * r * pt),
            st.m_term() / (r * r * s * s * pp),
        ])
    }

    /// (ṙ, ϑ̇, ψ̇) with ψ the azimuthal action.
    fn rates(&self, r: f64, theta: f64, signs: [Sign; 3]) -> Result<[f64; 3]> {
        let st = &self.state;
        let pr = signs[0].value() * self.unsigned_p(Coordinate::Radial, r)?;
        let pt = signs[1].value() * self.unsigned_p(Coordinate::Polar, theta)?;
        let s = theta.sin();
        Ok([
            2.0 * st.radial_bracket(r) / pr,
            st.polar_bracket(theta) / (r * r * pt),
            signs[2].value() * st.m_term() / (r * r * s * s),
        ])
    }

    /// C(ϑ)/(ϑ − root) at a zero of C, from
    /// λ sin²ϑ − (m²−¼) = λ sin(ϑ − root) sin(ϑ + root).
    fn polar_bracket_over(&self, theta: f64, root: f64) -> f64 {
        let d = theta - root;
        let sinc = if d.abs() < 1e-4 {
            1.0 - d * d / 6.0
        } else {
            d.sin() / d
        };
        let s = theta.sin();
        self.state.lambda * sinc * (theta + root).sin() / (s * s)
    }

    /// Relative residual of ṙp_r + ϑ̇p_ϑ + φ̇p_φ = 2(E − V), scaled by the
    /// magnitude of the individual terms.
    pub fn eq46_residual(&self, r: f64, theta: f64, phi: f64, signs: [Sign; 3]) -> Result<f64> {
        let p = self.momenta_at(r, theta, phi, signs)?;
        let v = self.velocities(r, theta, phi, signs)?;
        let terms = [v[0] * p[0], v[1] * p[1], v[2] * p[2]];
        let rhs = 2.0 * (self.state.energy - self.state.potential(r));
        let scale = terms.iter().map(|t| t.abs()).sum::<f64>() + rhs.abs();
        Ok((terms.iter().sum::<f64>() - rhs) / scale)
    }

    fn radial_specs(&self, cfg: &IntegratorConfig) -> Vec<Spec> {
        let mut specs = vec![
            Spec::Origin(cfg.r_min_guard),
            Spec::Eject(cfg.ejection_radius),
        ];
        for k in 0..self.radial_layers.len() {
            specs.push(Spec::RadialLayer(k));
            specs.push(Spec::RadialShell(k));
        }
        for &z in self.momenta.radial.pair.zeros() {
            specs.push(Spec::RadialZero(z));
        }
        specs
    }

    fn angular_specs(&self, cfg: &IntegratorConfig) -> Vec<Spec> {
        let mut specs = vec![
            Spec::Pole(cfg.pole_guard),
            Spec::Pole(PI - cfg.pole_guard),
            Spec::AzimuthCross,
            Spec::Equator,
        ];
        for k in 0..self.polar_layers.len() {
            specs.push(Spec::PolarLayer(k));
            specs.push(Spec::PolarShell(k));
        }
        for &z in self.momenta.polar.pair.zeros() {
            specs.push(Spec::PolarZero(z));
        }
        specs
    }

    /// Moves a start point lying on (or within two offsets of) a turning
    /// root inside the zone, with the direction sign pointing inwards.
    fn snap_start(
        &self,
        init: &TrajectoryState,
        cfg: &IntegratorConfig,
    ) -> Result<TrajectoryState> {
        let mut s = *init;
        if !(s.r > cfg.r_min_guard) || !s.r.is_finite() {
            return Err(QhjError::Domain(format!(
                "r0 = {} must exceed the origin guard",
                s.r
            )));
        }
        if !(s.theta > cfg.pole_guard && s.theta < PI - cfg.pole_guard) {
            return Err(QhjError::Domain(format!(
                "theta0 = {} outside the polar guard",
                s.theta
            )));
        }
        if !s.phi.is_finite() || !s.t.is_finite() {
            return Err(QhjError::Domain("non-finite initial phi or t".into()));
        }
        let d = cfg.turn_offset;
        let mut roots = vec![(self.zone.r2, -1.0)];
        if !self.zone.contains_origin {
            roots.push((self.zone.r1, 1.0));
        }
        for (root, inward) in roots {
            if (s.r - root).abs() <= 2.0 * d.max(cfg.event_refine_tol) {
                s.r = root + inward * 2.0 * d;
                let v = self.rates(s.r, s.theta, s.signs())?;
                if v[0] * inward < 0.0 {
                    s.sign_r = s.sign_r.flipped();
                }
            }
        }
        for (i, &root) in self.polar_roots.iter().enumerate() {
            let inward = if i == 0 { 1.0 } else { -1.0 };
            if (s.theta - root).abs() <= 2.0 * d.max(cfg.event_refine_tol) {
                s.theta = root + inward * 2.0 * d;
                let v = self.rates(s.r, s.theta, s.signs())?;
                if v[1] * inward < 0.0 {
                    s.sign_theta = s.sign_theta.flipped();
                }
            }
        }
        Ok(s)
    }

    fn sample(&self, p: &Point, signs: [Sign; 3]) -> (TrajectoryState, f64) {
        let phi = self.azimuth.phi(p.psi);
        let s = TrajectoryState {
            t: p.t,
            r: p.r,
            theta: p.theta,
            phi,
            sign_r: signs[0],
            sign_theta: signs[1],
            sign_phi: signs[2],
        };
        let res = self
            .eq46_residual(p.r, p.theta, phi, signs)
            .unwrap_or(f64::NAN);
        (s, res)
    }

    /// Chart and stored value for a coordinate, preferring a layer that
    /// contains `q` (boundary included).
    fn chart_for(layers: &[Layer], q: f64, plain: (Chart, f64)) -> (Chart, f64) {
        for (k, l) in layers.iter().enumerate() {
            let d = l.distance(q);
            if d > 0.0 && d <= l.width {
                return (Chart::Log(k), d.ln().min(l.inside()));
            }
        }
        plain
    }

    fn polar_chart(&self, theta: f64) -> (Chart, f64) {
        Self::chart_for(&self.polar_layers, theta, hemisphere(theta))
    }

    /// Integrates the time-domain system; on failure returns the error.
    pub fn integrate_time(
        &self,
        init: &TrajectoryState,
        cfg: &IntegratorConfig,
    ) -> Result<Trajectory> {
        let (tr, err) = self.integrate_time_partial(init, cfg)?;
        match err {
            Some(e) => Err(e),
            None => Ok(tr),
        }
    }

    /// Like [`QuantumModel::integrate_time`] but keeps the partial trajectory
    /// when integration fails midway.
    pub fn integrate_time_partial(
        &self,
        init: &TrajectoryState,
        cfg: &IntegratorConfig,
    ) -> Result<(Trajectory, Option<QhjError>)> {
        cfg.validate()?;
        let s0 = self.snap_start(init, cfg)?;
        let mut specs = self.radial_specs(cfg);
        specs.extend(self.angular_specs(cfg));
        specs.push(Spec::TimeLimit(cfg.t_end));
        let grid: Option<Vec<f64>> = match (&cfg.sample_times, cfg.sample_dt) {
            (Some(ts), _) => {
                if ts.windows(2).any(|w| w[1] < w[0])
                    || ts.iter().any(|&t| !(t >= s0.t && t <= cfg.t_end))
                {
                    return Err(QhjError::Config(format!(
                        "sample times must be sorted and lie in [{}, {}]",
                        s0.t, cfg.t_end
                    )));
                }
                Some(
                    ts.iter()
                        .copied()
                        .filter(|&t| t > s0.t && t < cfg.t_end)
                        .collect(),
                )
            }
            (None, Some(dt)) => {
                let n = ((cfg.t_end - s0.t) / dt).ceil().max(0.0) as usize;
                Some(
                    (1..n)
                        .map(|k| s0.t + dt * k as f64)
                        .filter(|&t| t < cfg.t_end)
                        .collect(),
                )
            }
            _ => None,
        };
        let sparse = grid.is_some();
        let mut core = Core::new(self, specs, s0.signs(), cfg);
        core.max_turns = cfg.max_radial_turns;
        if let Some(g) = grid {
            core.grid = g;
            core.specs.push(Spec::Sample);
        }
        let (chart_r, ur) = Self::chart_for(&self.radial_layers, s0.r, (Chart::Plain, s0.r));
        let (chart_th, uth) = self.polar_chart(s0.theta);
        core.chart_r = chart_r;
        core.chart_th = chart_th;
        let mut sys = TimeSystem { core };
        let psi0 = self.azimuth.action(s0.phi);
        let y0 = [ur, uth, psi0, s0.t];
        let mut tr = Trajectory::empty(self.state, self.hidden);
        let p0 = sys.core.point(ur, uth, psi0, s0.t);
        let (st, res) = self.sample(&p0, s0.signs());
        tr.push(st, psi0, res);
        let at_start = cfg
            .sample_times
            .as_ref()
            .map_or(0, |ts| ts.iter().filter(|&&t| t == s0.t).count());
        tr.requested.extend(std::iter::repeat(0).take(at_start));

        let run = integrate(
            &mut sys,
            0.0,
            y0,
            S_END,
            &cfg.solver(),
            if sparse { Some(&[]) } else { None },
            |sys, kind, _s, y| {
                if let SampleKind::EventBefore(_) = kind {
                    return;
                }
                let p = sys.core.point(y[0], y[1], y[2], y[3]);
                let (st, res) = self.sample(&p, sys.core.signs);
                tr.push(st, p.psi, res);
                if let SampleKind::EventAfter(_) = kind {
                    for _ in 0..sys.core.hits {
                        tr.requested.push(tr.samples.len() - 1);
                    }
                }
            },
        );
        tr.events = std::mem::take(&mut sys.core.events);
        if run.is_ok() && sys.core.stop == Some(Termination::EndTime) {
            let at_end = cfg
                .sample_times
                .as_ref()
                .map_or(0, |ts| ts.iter().filter(|&&t| t == cfg.t_end).count());
            tr.requested
                .extend(std::iter::repeat(tr.samples.len() - 1).take(at_end));
        }
        match run {
            Ok(end) => {
                tr.termination = sys.core.stop.take().unwrap_or(if end.stopped_by_event {
                    Termination::TurnLimit
                } else {
                    Termination::EndTime
                });
                Ok((tr, None))
            }
            Err(e) => {
                tr.termination = Termination::Failed(e.clone());
                Ok((tr, Some(e)))
            }
        }
    }

    /// Marches in r between radial barriers, integrating the polar angle, the
    /// azimuthal action and t, while the redundant third relation is
    /// monitored. Where r stops being a usable parameter (the layers around
    /// radial turning shells) or the polar chart degenerates (close to the
    /// axis) the march hands over to the regularized time-domain system.
    pub fn integrate_spatial(
        &self,
        init: &TrajectoryState,
        cfg: &IntegratorConfig,
    ) -> Result<SpatialOrbit> {
        cfg.validate()?;
        let s0 = self.snap_start(init, cfg)?;
        let mut specs = self.angular_specs(cfg);
        for &z in self.momenta.radial.pair.zeros() {
            specs.push(Spec::RadialZero(z));
        }
        specs.push(Spec::TimeLimit(cfg.t_end));
        specs.push(Spec::CapEnter(POLAR_CAP));
        let mut sys = SpatialSystem {
            core: Core::new(self, specs, s0.signs(), cfg),
        };
        let (chart_th, uth) = self.polar_chart(s0.theta);
        sys.core.chart_th = chart_th;
        let mut tr = Trajectory::empty(self.state, self.hidden);
        let mut closure: Vec<f64> = Vec::new();
        let mut r = s0.r;
        let mut y = [uth, self.azimuth.action(s0.phi), s0.t];
        let p0 = sys.core.point(r, y[0], y[1], y[2]);
        let closure_res = self
            .third_equation_residual(r, p0.theta, p0.psi, s0.signs())
            .unwrap_or(f64::NAN);
        record(
            &mut tr,
            &mut closure,
            self.sample(&p0, s0.signs()),
            p0.psi,
            closure_res,
        );
        let opts = cfg.solver();
        let strictly_inside = self
            .radial_layers
            .iter()
            .any(|l| l.distance(r) > 0.0 && l.distance(r) < l.width);
        let mut need_bridge = strictly_inside || s0.theta.sin() < POLAR_CAP;
        loop {
            if cfg.max_radial_turns.is_some_and(|m| sys.core.turns >= m) {
                tr.termination = Termination::TurnLimit;
                break;
            }
            if need_bridge {
                need_bridge = false;
                match self.bridge(&mut sys.core, r, y, cfg, &mut tr, &mut closure)? {
                    BridgeEnd::Left(r_out, y_out) => {
                        r = r_out;
                        y = y_out;
                        continue;
                    }
                    BridgeEnd::Stopped(term) => {
                        tr.termination = term;
                        break;
                    }
                }
            }
            let p = sys.core.point(r, y[0], y[1], y[2]);
            let v = self.rates(r, p.theta, sys.core.signs)?;
            let dir = if v[0] > 0.0 {
                1.0
            } else if v[0] < 0.0 {
                -1.0
            } else {
                return Err(QhjError::Consistency(format!(
                    "radial velocity vanishes at r = {r}"
                )));
            };
            #[derive(Clone, Copy)]
            enum Target {
                Origin,
                Eject,
                Layer,
            }
            let mut targets = vec![
                (cfg.r_min_guard, Target::Origin),
                (cfg.ejection_radius, Target::Eject),
            ];
            targets.extend(
                self.radial_layers
                    .iter()
                    .map(|l| (l.root + l.side * l.width, Target::Layer)),
            );
            let (x_end, target) = targets
                .into_iter()
                .filter(|(b, _)| (b - r) * dir > 0.0)
                .min_by(|a, b| ((a.0 - r) * dir).total_cmp(&((b.0 - r) * dir)))
                .ok_or_else(|| QhjError::Consistency("no radial barrier ahead".into()))?;
            let mut failure = None;
            let run = integrate(&mut sys, r, y, x_end, &opts, None, |sys, kind, x, yy| {
                if let SampleKind::EventBefore(_) = kind {
                    return;
                }
                let p = sys.core.point(x, yy[0], yy[1], yy[2]);
                let closure_res = self
                    .third_equation_residual(x, p.theta, p.psi, sys.core.signs)
                    .unwrap_or(f64::NAN);
                record(
                    &mut tr,
                    &mut closure,
                    self.sample(&p, sys.core.signs),
                    p.psi,
                    closure_res,
                );
                if !(closure_res.abs() <= 1e-4) && failure.is_none() {
                    failure = Some((x, closure_res));
                }
            });
            let end = match run {
                Ok(end) => end,
                Err(e) => {
                    tr.events = std::mem::take(&mut sys.core.events);
                    return Err(e);
                }
            };
            if let Some((x, closure_res)) = failure {
                return Err(QhjError::Consistency(format!(
                    "third-equation residual {closure_res} at r = {x}"
                )));
            }
            r = end.x;
            y = end.y;
            if end.stopped_by_event {
                if std::mem::take(&mut sys.core.cap_hit) {
                    need_bridge = true;
                    continue;
                }
                tr.termination = sys.core.stop.take().unwrap_or(Termination::EndTime);
                break;
            }
            let p = sys.core.point(r, y[0], y[1], y[2]);
            let event = |kind| TrajectoryEvent {
                t: p.t,
                kind,
                r,
                theta: p.theta,
                phi: self.azimuth.phi(p.psi),
                coordinate: Some(Coordinate::Radial),
            };
            match target {
                Target::Eject => {
                    sys.core.events.push(event(EventKind::Ejection));
                    tr.termination = Termination::Ejected;
                    break;
                }
                Target::Origin => {
                    sys.core.events.push(event(EventKind::OriginApproach));
                    sys.core.signs[0] = sys.core.signs[0].flipped();
                    sys.core.turns += 1;
                }
                Target::Layer => need_bridge = true,
            }
        }
        tr.events = std::mem::take(&mut sys.core.events);
        Ok(finish_spatial(tr, closure))
    }

    /// Runs the regularized system from an r-marched state until the state
    /// is outside every radial layer and the polar cap again.
    fn bridge(
        &self,
        outer: &mut Core,
        r: f64,
        y: [f64; 3],
        cfg: &IntegratorConfig,
        tr: &mut Trajectory,
        closure: &mut Vec<f64>,
    ) -> Result<BridgeEnd> {
        let mut specs = self.radial_specs(cfg);
        specs.extend(self.angular_specs(cfg));
        specs.push(Spec::TimeLimit(cfg.t_end));
        specs.push(Spec::CapLeave(POLAR_CAP));
        let mut core = Core::new(self, specs, outer.signs, cfg);
        core.bridge = Some(POLAR_CAP);
        core.chart_th = outer.chart_th;
        // a layer boundary reached by the march counts as inside
        let mut chart_r = (Chart::Plain, r);
        for (k, l) in self.radial_layers.iter().enumerate() {
            let d = l.distance(r);
            if d > 0.0 && d <= l.width * (1.0 + 1e-9) {
                chart_r = (Chart::Log(k), l.inside().min(d.ln()));
            }
        }
        core.chart_r = chart_r.0;
        let mut sys = TimeSystem { core };
        let mut failure = None;
        let run = integrate(
            &mut sys,
            0.0,
            [chart_r.1, y[0], y[1], y[2]],
            S_END,
            &cfg.solver(),
            None,
            |sys, kind, _s, yy| {
                if let SampleKind::EventBefore(_) = kind {
                    return;
                }
                let p = sys.core.point(yy[0], yy[1], yy[2], yy[3]);
                let closure_res = self
                    .third_equation_residual(p.r, p.theta, p.psi, sys.core.signs)
                    .unwrap_or(f64::NAN);
                record(
                    tr,
                    closure,
                    self.sample(&p, sys.core.signs),
                    p.psi,
                    closure_res,
                );
                if !(closure_res.abs() <= 1e-4) && failure.is_none() {
                    failure = Some((p.r, closure_res));
                }
            },
        );
        outer.events.append(&mut sys.core.events);
        outer.signs = sys.core.signs;
        outer.chart_th = sys.core.chart_th;
        outer.turns += sys.core.turns;
        let end = run?;
        if let Some((x, closure_res)) = failure {
            return Err(QhjError::Consistency(format!(
                "third-equation residual {closure_res} at r = {x}"
            )));
        }
        if sys.core.left {
            let p = sys.core.point(end.y[0], end.y[1], end.y[2], end.y[3]);
            return Ok(BridgeEnd::Left(p.r, [end.y[1], end.y[2], end.y[3]]));
        }
        match sys.core.stop.take() {
            Some(term) => Ok(BridgeEnd::Stopped(term)),
            None => Err(QhjError::Consistency(
                "regularized bridge ended without leaving".into(),
            )),
        }
    }

    /// Residual of p_φ φ'·[λ sin²ϑ/(m²−¼) − 1] = p_ϑ ϑ' along an r-marched
    /// orbit (primes are d/dr), relative to the size of the terms.
    pub fn third_equation_residual(
        &self,
        r: f64,
        theta: f64,
        psi: f64,
        signs: [Sign; 3],
    ) -> Result<f64> {
        let phi = self.azimuth.phi(psi);
        let p = self.momenta_at(r, theta, phi, signs)?;
        let v = self.velocities(r, theta, phi, signs)?;
        let s2 = theta.sin().powi(2);
        let mt = self.state.m_term();
        let lhs = p[2] * (v[2] / v[0]) * (self.state.lambda * s2 / mt - 1.0);
        let rhs = p[1] * (v[1] / v[0]);
        Ok((lhs - rhs) / (lhs.abs() + rhs.abs() + f64::MIN_POSITIVE))
    }

    /// ϑ(φ) curves from the r-independent angular equations, integrated in
    /// τ (dτ = dt/r²) up to τ = `cfg.t_end`.
    pub fn integrate_angular(
        &self,
        theta0: f64,
        phi0: f64,
        cfg: &IntegratorConfig,
    ) -> Result<AngularTrajectory> {
        cfg.validate()?;
        let init =
            TrajectoryState::at(self.zone.r2.min(1.0), &self.hidden).with_angles(theta0, phi0);
        let s0 = self.snap_start(&init, cfg)?;
        let mut specs = self.angular_specs(cfg);
        specs.push(Spec::TimeLimit(cfg.t_end));
        let mut sys = AngularSystem {
            core: Core::new(self, specs, s0.signs(), cfg),
        };
        let (chart_th, uth) = self.polar_chart(s0.theta);
        sys.core.chart_th = chart_th;
        let mut out = AngularTrajectory::default();
        let psi0 = self.azimuth.action(s0.phi);
        out.push(0.0, s0.phi, s0.theta, psi0);
        let run = integrate(
            &mut sys,
            0.0,
            [uth, psi0, 0.0],
            S_END,
            &cfg.solver(),
            None,
            |sys, kind, _x, y| {
                if let SampleKind::EventBefore(_) = kind {
                    return;
                }
                let p = sys.core.point(f64::NAN, y[0], y[1], y[2]);
                out.push(p.t, self.azimuth.phi(p.psi), p.theta, p.psi);
            },
        );
        out.events = std::mem::take(&mut sys.core.events);
        run?;
        Ok(out)
    }
}

enum BridgeEnd {
    Left(f64, [f64; 3]),
    Stopped(Termination),
}

/// Plain polar chart for ϑ: the distance to the nearer pole.
fn hemisphere(theta: f64) -> (Chart, f64) {
    if theta <= FRAC_PI_2 {
        (Chart::Plain, theta)
    } else {
        (Chart::South, PI - theta)
    }
}

fn finish_spatial(trajectory: Trajectory, closure: Vec<f64>) -> SpatialOrbit {
    let third_equation_max = closure.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    SpatialOrbit {
        trajectory,
        closure,
        third_equation_max,
    }
}

fn record(
    tr: &mut Trajectory,
    closure: &mut Vec<f64>,
    (st, res): (TrajectoryState, f64),
    psi: f64,
    closure_res: f64,
) {
    let before = tr.samples.len();
    tr.push(st, psi, res);
    if tr.samples.len() == before {
        closure.pop();
    }
    closure.push(closure_res);
}

/// Result of the r-parameterized integration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOrbit {
    pub trajectory: Trajectory,
    pub closure: Vec<f64>,
    pub third_equation_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AngularTrajectory {
    pub tau: Vec<f64>,
    /// (φ, ϑ) pairs.
    pub points: Vec<(f64, f64)>,
    pub azimuthal_action: Vec<f64>,
    pub events: Vec<TrajectoryEvent>,
}

impl AngularTrajectory {
    fn push(&mut self, tau: f64, phi: f64, theta: f64, psi: f64) {
        if self.tau.last().is_some_and(|&t| tau <= t) {
            self.tau.pop();
            self.points.pop();
            self.azimuthal_action.pop();
        }
        self.tau.push(tau);
        self.points.push((phi, theta));
        self.azimuthal_action.push(psi);
    }
}

/// Physical coordinates next to the raw chart values they came from.
#[derive(Debug, Clone, Copy)]
struct Point {
    r: f64,
    theta: f64,
    sin: f64,
    ur: f64,
    uth: f64,
    psi: f64,
    t: f64,
}

/// Replacement values for the raw state after an event.
#[derive(Debug, Clone, Copy, Default)]
struct Update {
    ur: Option<f64>,
    uth: Option<f64>,
    psi: Option<f64>,
}

struct Core<'a> {
    model: &'a QuantumModel,
    specs: Vec<Spec>,
    signs: [Sign; 3],
    chart_r: Chart,
    chart_th: Chart,
    ln_offset: f64,
    events: Vec<TrajectoryEvent>,
    turns: usize,
    max_turns: Option<usize>,
    stop: Option<Termination>,
    grid: Vec<f64>,
    cursor: usize,
    /// Requested instants consumed by the last handled event.
    hits: usize,
    /// Cap value when running as a bridge for the r-marched mode.
    bridge: Option<f64>,
    left: bool,
    cap_hit: bool,
}

impl<'a> Core<'a> {
    fn new(
        model: &'a QuantumModel,
        specs: Vec<Spec>,
        signs: [Sign; 3],
        cfg: &IntegratorConfig,
    ) -> Self {
        Self {
            model,
            specs,
            signs,
            chart_r: Chart::Plain,
            chart_th: Chart::Plain,
            ln_offset: cfg.turn_offset.ln(),
            events: Vec::new(),
            turns: 0,
            max_turns: None,
            stop: None,
            grid: Vec::new(),
            cursor: 0,
            hits: 0,
            bridge: None,
            left: false,
            cap_hit: false,
        }
    }

    fn point(&self, ur: f64, uth: f64, psi: f64, t: f64) -> Point {
        let r = match self.chart_r {
            Chart::Plain | Chart::South => ur,
            Chart::Log(k) => self.model.radial_layers[k].coord(ur),
        };
        let (theta, sin) = match self.chart_th {
            Chart::Plain => (uth, uth.sin()),
            Chart::South => (PI - uth, uth.sin()),
            Chart::Log(k) => {
                let th = self.model.polar_layers[k].coord(uth);
                (th, th.sin())
            }
        };
        Point {
            r,
            theta,
            sin,
            ur,
            uth,
            psi,
            t,
        }
    }

    /// Rate of the stored polar variable per unit of τ = ∫dt/r².
    fn polar_rate(&self, p: &Point) -> Result<f64> {
        let m = self.model;
        let pt = self.signs[1].value() * m.unsigned_p(Coordinate::Polar, p.theta)?;
        Ok(match self.chart_th {
            Chart::Plain => m.state.polar_bracket(p.theta) / pt,
            Chart::South => -m.state.polar_bracket(p.theta) / pt,
            Chart::Log(k) => m.polar_bracket_over(p.theta, m.polar_layers[k].root) / pt,
        })
    }

    /// Time rate of the stored radial variable.
    fn radial_rate(&self, p: &Point) -> Result<f64> {
        let m = self.model;
        let pr = self.signs[0].value() * m.unsigned_p(Coordinate::Radial, p.r)?;
        Ok(match self.chart_r {
            Chart::Plain | Chart::South => 2.0 * m.state.radial_bracket(p.r) / pr,
            // B = E (r − r1)(r − r2)/r²
            Chart::Log(k) => {
                2.0 * m.state.energy * (p.r - m.radial_layers[k].other) / (p.r * p.r * pr)
            }
        })
    }

    fn psi_rate_scaled(&self) -> f64 {
        self.signs[2].value() * self.model.state.m_term()
    }

    fn value(&self, i: usize, p: &Point) -> f64 {
        let m = self.model;
        match self.specs[i] {
            Spec::Origin(rho) | Spec::Eject(rho) => p.r - rho,
            Spec::RadialLayer(k) => {
                let l = &m.radial_layers[k];
                if self.chart_r == Chart::Log(k) {
                    p.ur - l.width.ln()
                } else {
                    l.distance(p.r) - l.width
                }
            }
            Spec::RadialShell(k) => {
                if self.chart_r == Chart::Log(k) {
                    p.ur - self.ln_offset
                } else {
                    1.0
                }
            }
            Spec::PolarLayer(k) => {
                let l = &m.polar_layers[k];
                if self.chart_th == Chart::Log(k) {
                    p.uth - l.width.ln()
                } else {
                    l.distance(p.theta) - l.width
                }
            }
            Spec::PolarShell(k) => {
                if self.chart_th == Chart::Log(k) {
                    p.uth - self.ln_offset
                } else {
                    1.0
                }
            }
            Spec::Pole(g) => {
                if g < FRAC_PI_2 {
                    p.theta - g
                } else {
                    g - p.theta
                }
            }
            Spec::RadialZero(z) => p.r - z,
            Spec::PolarZero(z) => p.theta - z,
            Spec::AzimuthCross => p.psi.cos(),
            Spec::Equator => p.theta - FRAC_PI_2,
            Spec::TimeLimit(te) => p.t - te,
            Spec::Sample => match self.grid.get(self.cursor) {
                Some(&ts) => p.t - ts,
                None => -1.0,
            },
            Spec::CapEnter(c) | Spec::CapLeave(c) => p.sin - c,
        }
    }

    fn side(&self, i: usize) -> EventSide {
        match self.specs[i] {
            Spec::Origin(_)
            | Spec::Eject(_)
            | Spec::RadialShell(_)
            | Spec::PolarShell(_)
            | Spec::Pole(_)
            | Spec::TimeLimit(_) => EventSide::Before,
            _ => EventSide::After,
        }
    }

    /// Time the state should be moved to before handling event `i`, if any.
    fn exact_time(&self, i: usize) -> Option<f64> {
        match self.specs[i] {
            Spec::TimeLimit(te) => Some(te),
            Spec::Sample => self.grid.get(self.cursor).copied(),
            _ => None,
        }
    }

    fn log(&mut self, p: &Point, kind: EventKind, coordinate: Coordinate) {
        self.events.push(TrajectoryEvent {
            t: p.t,
            kind,
            r: p.r,
            theta: p.theta,
            phi: self.model.azimuth.phi(p.psi),
            coordinate: Some(coordinate),
        });
    }

    fn count_turn(&mut self) -> Control {
        self.turns += 1;
        if self.max_turns.is_some_and(|m| self.turns >= m) {
            self.stop = Some(Termination::TurnLimit);
            return Control::Stop;
        }
        Control::Continue
    }

    /// Applies event `i`. Turning, pole and origin events also put the state
    /// exactly on their surface.
    fn handle(&mut self, i: usize, p: &Point) -> (Control, Update) {
        let m = self.model;
        let mut up = Update::default();
        let control = match self.specs[i] {
            Spec::Origin(rho) => {
                self.log(p, EventKind::OriginApproach, Coordinate::Radial);
                self.signs[0] = self.signs[0].flipped();
                up.ur = Some(rho);
                self.count_turn()
            }
            Spec::Eject(_) => {
                self.log(p, EventKind::Ejection, Coordinate::Radial);
                self.stop = Some(Termination::Ejected);
                Control::Stop
            }
            Spec::RadialLayer(k) => {
                let l = m.radial_layers[k];
                if self.chart_r == Chart::Log(k) {
                    self.chart_r = Chart::Plain;
                    up.ur = Some(l.outside());
                    if self.bridge.is_some_and(|c| p.sin >= c) {
                        self.left = true;
                        return (Control::Stop, up);
                    }
                } else if self.chart_r == Chart::Plain {
                    self.chart_r = Chart::Log(k);
                    up.ur = Some(l.inside());
                }
                Control::Continue
            }
            Spec::RadialShell(_) => {
                self.log(p, EventKind::RadialTurn, Coordinate::Radial);
                self.signs[0] = self.signs[0].flipped();
                up.ur = Some(self.ln_offset);
                self.count_turn()
            }
            Spec::PolarLayer(k) => {
                let l = m.polar_layers[k];
                if self.chart_th == Chart::Log(k) {
                    let (chart, v) = hemisphere(l.outside());
                    self.chart_th = chart;
                    up.uth = Some(v);
                } else if !matches!(self.chart_th, Chart::Log(_)) {
                    self.chart_th = Chart::Log(k);
                    up.uth = Some(l.inside());
                }
                Control::Continue
            }
            Spec::PolarShell(_) => {
                self.log(p, EventKind::PolarTurn, Coordinate::Polar);
                self.signs[1] = self.signs[1].flipped();
                up.uth = Some(self.ln_offset);
                Control::Continue
            }
            Spec::Pole(g) => {
                self.log(p, EventKind::PolePass, Coordinate::Polar);
                self.signs[1] = self.signs[1].flipped();
                match self.chart_th {
                    Chart::Plain if g < FRAC_PI_2 => up.uth = Some(g),
                    Chart::South if g > FRAC_PI_2 => up.uth = Some(PI - g),
                    _ => {}
                }
                let phi = m.azimuth.phi(p.psi);
                let next = m.azimuth.action(phi + PI);
                // for m = 0 the action is only defined modulo π; keep the branch
                up.psi = Some(if m.state.m_l == 0 {
                    next + PI * ((p.psi - next) / PI).round()
                } else {
                    next
                });
                Control::Continue
            }
            Spec::RadialZero(_) => {
                self.log(p, EventKind::SignFlip, Coordinate::Radial);
                Control::Continue
            }
            Spec::PolarZero(_) => {
                self.log(p, EventKind::SignFlip, Coordinate::Polar);
                Control::Continue
            }
            Spec::AzimuthCross => {
                let kind = if m.state.m_l == 0 {
                    EventKind::AzimuthWrap
                } else {
                    EventKind::SignFlip
                };
                self.log(p, kind, Coordinate::Azimuthal);
                Control::Continue
            }
            Spec::Equator => {
                if !matches!(self.chart_th, Chart::Log(_)) {
                    let (chart, v) = hemisphere(p.theta);
                    self.chart_th = chart;
                    up.uth = Some(v);
                }
                Control::Continue
            }
            Spec::TimeLimit(_) => {
                self.stop = Some(Termination::EndTime);
                Control::Stop
            }
            Spec::Sample => {
                self.cursor += 1;
                Control::Continue
            }
            Spec::CapEnter(c) => {
                if p.sin < c {
                    self.cap_hit = true;
                    Control::Stop
                } else {
                    Control::Continue
                }
            }
            Spec::CapLeave(c) => {
                if p.sin > c && self.chart_r == Chart::Plain {
                    self.left = true;
                    Control::Stop
                } else {
                    Control::Continue
                }
            }
        };
        (control, up)
    }
}

/// y = [r-variable, ϑ-variable, ψ, t] against s, dt = r² sin²ϑ ds.
struct TimeSystem<'a> {
    core: Core<'a>,
}

impl OdeSystem<4> for TimeSystem<'_> {
    fn rhs(&self, _s: f64, y: &[f64; 4]) -> Result<[f64; 4]> {
        let p = self.core.point(y[0], y[1], y[2], y[3]);
        let dr = self.core.radial_rate(&p)?;
        // beyond the zone r runs off to infinity in finite time; slowing the
        // clock by 1 + ṙ² keeps s steps finite while t saturates
        let f = if self.core.chart_r == Chart::Plain && p.r > self.core.model.zone.r2 {
            1.0 / (1.0 + dr * dr)
        } else {
            1.0
        };
        let s2 = p.sin * p.sin * f;
        let g = p.r * p.r * s2;
        let dth = self.core.polar_rate(&p)?;
        Ok([dr * g, dth * s2, self.core.psi_rate_scaled() * f, g])
    }
}

impl EventSystem<4> for TimeSystem<'_> {
    fn event_count(&self) -> usize {
        self.core.specs.len()
    }
    fn event_value(&self, i: usize, _s: f64, y: &[f64; 4]) -> f64 {
        self.core.value(i, &self.core.point(y[0], y[1], y[2], y[3]))
    }
    fn event_side(&self, i: usize) -> EventSide {
        self.core.side(i)
    }
    fn handle_event(&mut self, i: usize, s: f64, y: &mut [f64; 4]) -> Result<Control> {
        if let Some(te) = self.core.exact_time(i) {
            // first-order move onto the requested instant (|Δt| ≤ event tolerance)
            let f = self.rhs(s, y)?;
            if f[3] > 0.0 {
                let ds = (te - y[3]) / f[3];
                for k in 0..3 {
                    y[k] += f[k] * ds;
                }
                y[3] = te;
            }
        }
        let p = self.core.point(y[0], y[1], y[2], y[3]);
        let (control, up) = self.core.handle(i, &p);
        let [ur, uth, psi, _] = y;
        apply(&up, Some(ur), uth, psi);
        // grid instants already passed (an event landed within tolerance
        // beyond them) are attributed to this sample
        self.core.hits = usize::from(self.core.specs[i] == Spec::Sample);
        while self
            .core
            .grid
            .get(self.core.cursor)
            .is_some_and(|&ts| ts <= y[3])
        {
            self.core.cursor += 1;
            self.core.hits += 1;
        }
        Ok(control)
    }
}

fn apply(up: &Update, ur: Option<&mut f64>, uth: &mut f64, psi: &mut f64) {
    if let (Some(v), Some(slot)) = (up.ur, ur) {
        *slot = v;
    }
    if let Some(v) = up.uth {
        *uth = v;
    }
    if let Some(v) = up.psi {
        *psi = v;
    }
}

/// y = [ϑ-variable, ψ, t] against r.
struct SpatialSystem<'a> {
    core: Core<'a>,
}

impl OdeSystem<3> for SpatialSystem<'_> {
    fn rhs(&self, r: f64, y: &[f64; 3]) -> Result<[f64; 3]> {
        let p = self.core.point(r, y[0], y[1], y[2]);
        let rdot = self.core.radial_rate(&p)?;
        if rdot == 0.0 {
            return Err(QhjError::Evaluation(format!(
                "radial velocity vanishes at r = {r}"
            )));
        }
        let r2 = r * r;
        let dth = self.core.polar_rate(&p)? / r2;
        let dpsi = self.core.psi_rate_scaled() / (r2 * p.sin * p.sin);
        Ok([dth / rdot, dpsi / rdot, 1.0 / rdot])
    }
}

impl EventSystem<3> for SpatialSystem<'_> {
    fn event_count(&self) -> usize {
        self.core.specs.len()
    }
    fn event_value(&self, i: usize, r: f64, y: &[f64; 3]) -> f64 {
        self.core.value(i, &self.core.point(r, y[0], y[1], y[2]))
    }
    fn event_side(&self, i: usize) -> EventSide {
        self.core.side(i)
    }
    fn handle_event(&mut self, i: usize, r: f64, y: &mut [f64; 3]) -> Result<Control> {
        let p = self.core.point(r, y[0], y[1], y[2]);
        let (control, up) = self.core.handle(i, &p);
        let [uth, psi, _] = y;
        apply(&up, None, uth, psi);
        Ok(control)
    }
}

/// y = [ϑ-variable, ψ, τ] against σ, dτ = sin²ϑ dσ.
struct AngularSystem<'a> {
    core: Core<'a>,
}

impl OdeSystem<3> for AngularSystem<'_> {
    fn rhs(&self, _x: f64, y: &[f64; 3]) -> Result<[f64; 3]> {
        let p = self.core.point(f64::NAN, y[0], y[1], y[2]);
        let g = p.sin * p.sin;
        Ok([
            self.core.polar_rate(&p)? * g,
            self.core.psi_rate_scaled(),
            g,
        ])
    }
}

impl EventSystem<3> for AngularSystem<'_> {
    fn event_count(&self) -> usize {
        self.core.specs.len()
    }
    fn event_value(&self, i: usize, _x: f64, y: &[f64; 3]) -> f64 {
        self.core
            .value(i, &self.core.point(f64::NAN, y[0], y[1], y[2]))
    }
    fn event_side(&self, i: usize) -> EventSide {
        self.core.side(i)
    }
    fn handle_event(&mut self, i: usize, _x: f64, y: &mut [f64; 3]) -> Result<Control> {
        let p = self.core.point(f64::NAN, y[0], y[1], y[2]);
        let (control, up) = self.core.handle(i, &p);
        let [uth, psi, _] = y;
        apply(&up, None, uth, psi);
        Ok(control)
    }
}

/// (ṙ, ϑ̇, φ̇) at `x` for the state and hidden variables (signs from `x`).
pub fn velocity_field(
    state: &BoundState,
    hidden: &HiddenVariables,
    x: &TrajectoryState,
) -> Result<(f64, f64, f64)> {
    let m = QuantumModel::new(state, hidden)?;
    let v = m.velocities(x.r, x.theta, x.phi, x.signs())?;
    Ok((v[0], v[1], v[2]))
}

pub fn integrate_time_trajectory(
    state: &BoundState,
    hidden: &HiddenVariables,
    init: &TrajectoryState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    QuantumModel::new(state, hidden)?.integrate_time(init, cfg)
}

pub fn integrate_spatial_orbit(
    state: &BoundState,
    hidden: &HiddenVariables,
    init: &TrajectoryState,
    cfg: &IntegratorConfig,
) -> Result<SpatialOrbit> {
    QuantumModel::new(state, hidden)?.integrate_spatial(init, cfg)
}

pub fn angular_trajectory(
    state: &BoundState,
    hidden: &HiddenVariables,
    theta_0: f64,
    phi_0: f64,
    cfg: &IntegratorConfig,
) -> Result<AngularTrajectory> {
    QuantumModel::new(state, hidden)?.integrate_angular(theta_0, phi_0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(n: u32, l: u32, m: i32) -> BoundState {
        BoundState::new(n, l, m).unwrap()
    }

    fn hv(v: [f64; 6]) -> HiddenVariables {
        HiddenVariables::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    }

    const FIG8: [f64; 6] = [3.1, -0.4, 0.6, -0.2, 1.0, 0.0];

    #[test]
    fn radial_velocity_vanishes_on_the_roots() {
        let h = hv([0.36, 0.52, 1.0, 0.0, 1.0, 0.0]);
        let x = TrajectoryState::at(2.0, &h);
        let (rd, _, _) = velocity_field(&st(1, 0, 0), &h, &x).unwrap();
        assert_eq!(rd, 0.0);
        let h = hv(FIG8);
        for r in [4.0 - 8f64.sqrt(), 4.0 + 8f64.sqrt()] {
            for s in [st(2, 1, 0), st(2, 1, 1)] {
                let (rd, _, _) = velocity_field(&s, &h, &TrajectoryState::at(r, &h)).unwrap();
                assert!(rd.abs() < 1e-14, "{s} r={r} rd={rd}");
            }
        }
    }

    #[test]
    fn azimuthal_rate_is_negative_for_m_zero() {
        let h = hv([1.0, 0.2, 0.7, 0.1, 1.3, 0.4]);
        for s in [st(1, 0, 0), st(2, 1, 0)] {
            for (r, th, ph) in [(0.5, 0.3, 0.0), (1.5, 2.0, 4.0), (3.0, 1.2, -7.0)] {
                let x = TrajectoryState::at(r, &h).with_angles(th, ph);
                let (_, _, pd) = velocity_field(&s, &h, &x).unwrap();
                let m = QuantumModel::new(&s, &h).unwrap();
                let p = m.momenta_at(r, th, ph, x.signs()).unwrap();
                assert!(p[2] > 0.0);
                assert!(pd < 0.0);
            }
        }
    }

    /// Independent root-finder for the polar bracket.
    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn polar_turning_angles() {
        let m = QuantumModel::new(&st(2, 1, 1), &hv(FIG8)).unwrap();
        let roots = m.polar_turning_angles();
        assert_eq!(roots.len(), 2);
        let s = st(2, 1, 1);
        let oracle = bisect(|t| s.polar_bracket(t), 0.1, 1.5);
        assert!((roots[0] - oracle).abs() < 1e-12);
        assert!((roots[0].sin().powi(2) - 3.0 / 8.0).abs() < 1e-14);
        assert!((roots[1] - (PI - oracle)).abs() < 1e-12);

        let s = st(2, 1, 0);
        assert!(QuantumModel::new(&s, &hv(FIG8))
            .unwrap()
            .polar_turning_angles()
            .is_empty());
        let min = (1..10_000)
            .map(|k| s.polar_bracket(PI * k as f64 / 10_000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(min > 2.0);
    }

    #[test]
    fn azimuthal_map_round_trip() {
        for (m, a, b) in [
            (0, 1.0, 0.0),
            (0, -1.7, 0.4),
            (1, 1.0, 0.0),
            (1, -0.6, 0.3),
            (2, 1.2, -0.5),
        ] {
            let map = AzimuthalMap::new(m, a, b);
            for k in -40..40 {
                let phi = 0.173 * k as f64 + 0.01;
                let back = map.phi(map.action(phi));
                assert!(
                    (back - phi).abs() < 1e-9 * (1.0 + phi.abs()),
                    "m={m} phi={phi} back={back}"
                );
            }
        }
        // the action is the antiderivative of the unsigned momentum
        let h = hv([1.0, 0.0, 1.0, 0.0, 0.8, 0.3]);
        let s = st(2, 1, 1);
        let model = QuantumModel::new(&s, &h).unwrap();
        let step = 1e-6;
        for k in 1..30 {
            let phi = 0.21 * k as f64;
            let d = (model.azimuth.action(phi + step) - model.azimuth.action(phi - step))
                / (2.0 * step);
            let p = model.momenta_at(1.0, 1.0, phi, [Sign::Plus; 3]).unwrap()[2];
            assert!((d - p).abs() < 1e-6 * p.abs().max(1.0), "phi={phi}");
        }
    }

    fn catalog_runs() -> Vec<(BoundState, HiddenVariables, f64)> {
        vec![
            (st(1, 0, 0), hv([0.36, 0.52, 1.0, 0.0, 1.0, 0.0]), 1.0),
            (st(2, 0, 0), hv([1.0, 0.3, 1.0, 0.0, 1.0, 0.0]), 3.0),
            (st(2, 1, 0), hv([1.2, 0.1, 0.7, 0.2, 1.0, 0.5]), 3.0),
            (st(2, 1, 1), hv(FIG8), 4.0),
        ]
    }

    #[test]
    fn confined_and_law_of_motion_holds() {
        for (s, h, r0) in catalog_runs() {
            let m = QuantumModel::new(&s, &h).unwrap();
            let cfg = IntegratorConfig {
                t_end: 2000.0,
                max_radial_turns: Some(4),
                ..Default::default()
            };
            let tr = m
                .integrate_time(&TrajectoryState::at(r0, &h), &cfg)
                .unwrap();
            let (lo, hi) = tr.r_range();
            assert!(
                hi <= m.zone.r2 + 1e-6 && lo >= m.zone.r1 - 1e-6,
                "{s}: [{lo}, {hi}]"
            );
            assert!(tr.max_eq46() < 1e-6, "{s}: {}", tr.max_eq46());
            assert_eq!(tr.termination, Termination::TurnLimit);
            assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
            for e in tr.events_of(EventKind::RadialTurn) {
                let d = (e.r - m.zone.r2).abs().min((e.r - m.zone.r1).abs());
                assert!(d < 1e-9, "{s}: turn at {}", e.r);
            }
        }
    }

    #[test]
    fn requested_times_are_hit_exactly() {
        let (s, h, r0) = catalog_runs().remove(0);
        let m = QuantumModel::new(&s, &h).unwrap();
        let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        let cfg = IntegratorConfig {
            t_end: 20.0,
            sample_times: Some(times.clone()),
            ..Default::default()
        };
        let tr = m
            .integrate_time(&TrajectoryState::at(r0, &h), &cfg)
            .unwrap();
        assert_eq!(tr.requested.len(), times.len());
        for (k, &i) in tr.requested.iter().enumerate() {
            assert!(
                (tr.samples[i].t - times[k]).abs() < 1e-9,
                "{} vs {}",
                tr.samples[i].t,
                times[k]
            );
        }
        let bad = IntegratorConfig {
            sample_times: Some(vec![1.0, 0.5]),
            ..cfg
        };
        assert!(matches!(
            m.integrate_time(&TrajectoryState::at(r0, &h), &bad),
            Err(QhjError::Config(_))
        ));
    }

    #[test]
    fn time_reversal_retraces() {
        let s = st(2, 1, 1);
        let h = hv(FIG8);
        let m = QuantumModel::new(&s, &h).unwrap();
        let t_end = 130.0;
        let times: Vec<f64> = (0..=260).map(|k| 0.5 * k as f64).collect();
        let cfg = IntegratorConfig {
            t_end,
            sample_times: Some(times.clone()),
            ..Default::default()
        };
        let fwd = m
            .integrate_time(&TrajectoryState::at(4.0, &h), &cfg)
            .unwrap();
        assert!(fwd.events_of(EventKind::RadialTurn).count() >= 2);
        let end = fwd.samples[*fwd.requested.last().unwrap()];
        let back_init = TrajectoryState {
            t: 0.0,
            sign_r: end.sign_r.flipped(),
            sign_theta: end.sign_theta.flipped(),
            sign_phi: end.sign_phi.flipped(),
            ..end
        };
        let back = m.integrate_time(&back_init, &cfg).unwrap();
        for k in 0..times.len() {
            let a = fwd.samples[fwd.requested[k]].cartesian();
            let b = back.samples[back.requested[times.len() - 1 - k]].cartesian();
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!(d < 1e-5, "t = {}: {d}", times[k]);
        }
    }

    #[test]
    fn spatial_orbit_follows_the_time_oracle() {
        let s = st(2, 1, 1);
        let h = hv(FIG8);
        let m = QuantumModel::new(&s, &h).unwrap();
        let cfg = IntegratorConfig {
            t_end: 60.0,
            ..Default::default()
        };
        let init = TrajectoryState::at(4.0, &h);
        let orbit = m.integrate_spatial(&init, &cfg).unwrap();
        assert!(orbit.third_equation_max < 1e-5);
        let tr = &orbit.trajectory;
        let (lo, hi) = tr.r_range();
        assert!(lo >= m.zone.r1 - 1e-6 && hi <= m.zone.r2 + 1e-6);
        let times: Vec<f64> = tr.samples.iter().map(|s| s.t).collect();
        let oracle = m
            .integrate_time(
                &init,
                &IntegratorConfig {
                    sample_times: Some(times),
                    ..cfg
                },
            )
            .unwrap();
        assert_eq!(oracle.requested.len(), tr.samples.len());
        for (j, &k) in oracle.requested.iter().enumerate() {
            let (a, b) = (tr.samples[j].cartesian(), oracle.samples[k].cartesian());
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!(d < 1e-5, "t = {}: {d}", tr.samples[j].t);
        }
    }

    #[test]
    fn angular_curves() {
        let cfg = IntegratorConfig {
            t_end: 20.0,
            ..Default::default()
        };
        // l = 1, m = 1 turns where sin²ϑ = 3/8
        let m = QuantumModel::new(&st(2, 1, 1), &hv(FIG8)).unwrap();
        let a = m.integrate_angular(FRAC_PI_2, 0.0, &cfg).unwrap();
        let turns: Vec<_> = a
            .events
            .iter()
            .filter(|e| e.kind == EventKind::PolarTurn)
            .collect();
        assert!(!turns.is_empty());
        for e in turns {
            assert!((e.theta.sin().powi(2) - 0.375).abs() < 1e-8);
        }
        let lo = a.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(lo >= m.polar_turning_angles()[0] - 1e-9);

        // l = 0: p_φ dφ = −p_ϑ dϑ along the curve, i.e. ψ + L(ϑ) is constant
        // away from the axis passes
        let h = hv([1.0, 0.0, 0.9, 0.3, 1.1, 0.2]);
        let m = QuantumModel::new(&st(1, 0, 0), &h).unwrap();
        let a = m
            .integrate_angular(1.0, 0.0, &IntegratorConfig { t_end: 0.3, ..cfg })
            .unwrap();
        assert!(a.events.is_empty(), "{:?}", a.events);
        let polar = m.momenta.get(Coordinate::Polar);
        let inv: Vec<f64> = a
            .points
            .iter()
            .zip(&a.azimuthal_action)
            .map(|(&(_, th), &psi)| psi + polar.reduced_action(th).unwrap() * polar.sign.value())
            .collect();
        for v in &inv {
            assert!((v - inv[0]).abs() < 1e-7, "{v} vs {}", inv[0]);
        }
    }

    #[test]
    fn rejects_bad_starts() {
        let h = hv(FIG8);
        let m = QuantumModel::new(&st(2, 1, 1), &h).unwrap();
        let cfg = IntegratorConfig::default();
        assert!(m
            .integrate_time(&TrajectoryState::at(0.0, &h), &cfg)
            .is_err());
        assert!(m
            .integrate_time(&TrajectoryState::at(2.0, &h).with_angles(0.0, 0.0), &cfg)
            .is_err());
        let bad = IntegratorConfig {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            m.integrate_time(&TrajectoryState::at(2.0, &h), &bad),
            Err(QhjError::Config(_))
        ));
    }
}
