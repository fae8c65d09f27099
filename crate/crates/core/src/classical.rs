//! Classical Hamilton-Jacobi motion in a central potential.
//!
//! The separated equations give the speeds as square roots, which vanish
//! like √(t − t*) at the turning points. The orbit is integrated in
//! Hamiltonian form instead, with the conjugate momenta as state, so turns
//! are ordinary zero crossings of p_r and p_ϑ. The direction signs of the
//! radical form are read off as the signs of the momenta.

use std::f64::consts::PI;

use crate::basis::BoundState;
use crate::error::{QhjError, Result};
use crate::momenta::Sign;
use crate::ode::{integrate, Control, EventSide, EventSystem, OdeSystem, SampleKind};
use crate::quantum::{EventKind, IntegratorConfig, Termination, TrajectoryEvent, TrajectoryState};

/// Energy, angular constant α (units ħ²) and azimuthal constant β ≥ 0
/// (units ħ); directions live in `signs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalParams {
    pub energy: f64,
    pub alpha: f64,
    pub beta: f64,
    pub signs: [Sign; 3],
}

impl ClassicalParams {
    pub fn new(energy: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            energy,
            alpha,
            beta,
            signs: [Sign::Plus; 3],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_signs(mut self, signs: [Sign; 3]) -> Self {
        self.signs = signs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy.is_finite() && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(QhjError::Config(
                "classical parameters must be finite".into(),
            ));
        }
        if !(self.alpha > 0.0) {
            return Err(QhjError::Config(format!(
                "alpha = {} must be positive",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(QhjError::Config(format!(
                "beta = {} must be non-negative (direction goes in sign_phi)",
                self.beta
            )));
        }
        if self.alpha < self.beta * self.beta {
            return Err(QhjError::Config(format!(
                "alpha = {} < beta^2 = {}: no polar motion possible",
                self.alpha,
                self.beta * self.beta
            )));
        }
        Ok(())
    }

    /// α = l(l+1), β = √(m_l² − ¼). Refused for m_l = 0, where β² < 0.
    pub fn from_quantum(state: &BoundState, signs: [Sign; 3]) -> Result<Self> {
        let beta_sq = state.m_term();
        if beta_sq < 0.0 {
            return Err(QhjError::PurelyQuantum {
                m_l: state.m_l,
                beta_sq,
            });
        }
        Ok(Self::new(state.energy, state.lambda, beta_sq.sqrt())?.with_signs(signs))
    }
}

/// V(r) and dV/dr.
pub type Potential<'a> = &'a dyn Fn(f64) -> (f64, f64);

pub fn coulomb(r: f64) -> (f64, f64) {
    (-1.0 / r, 1.0 / (r * r))
}

/// Clamps a radicand that is negative only by rounding.
fn radicand(v: f64, scale: f64, what: &str, at: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-12 * scale {
        Ok(0.0)
    } else {
        Err(QhjError::ForbiddenRegion(format!(
            "{what} radicand {v} < 0 at {at}"
        )))
    }
}

fn radial_radicand(p: &ClassicalParams, v: Potential, r: f64) -> Result<f64> {
    let (vr, _) = v(r);
    let a = 2.0 * (p.energy - vr);
    let b = p.alpha / (r * r);
    radicand(a - b, a.abs() + b, "radial", r)
}

fn polar_radicand(p: &ClassicalParams, theta: f64) -> Result<f64> {
    let s = theta.sin();
    let b = p.beta * p.beta / (s * s);
    radicand(p.alpha - b, p.alpha + b, "polar", theta)
}

/// (ṙ, ϑ̇, φ̇) from the radical form with the signs carried by `x`.
pub fn classical_velocity_field(
    p: &ClassicalParams,
    x: &TrajectoryState,
) -> Result<(f64, f64, f64)> {
    classical_velocity_field_in(p, x, &coulomb)
}

pub fn classical_velocity_field_in(
    p: &ClassicalParams,
    x: &TrajectoryState,
    v: Potential,
) -> Result<(f64, f64, f64)> {
    p.validate()?;
    let (r, th) = (x.r, x.theta);
    let s = th.sin();
    Ok((
        x.sign_r.value() * radial_radicand(p, v, r)?.sqrt(),
        x.sign_theta.value() * polar_radicand(p, th)?.sqrt() / (r * r),
        x.sign_phi.value() * p.beta / (r * r * s * s),
    ))
}

/// Angular momentum r × v at a state.
pub fn angular_momentum(p: &ClassicalParams, x: &TrajectoryState) -> Result<[f64; 3]> {
    let (_, td, pd) = classical_velocity_field(p, x)?;
    let (st, ct) = x.theta.sin_cos();
    let (sp, cp) = x.phi.sin_cos();
    let e_theta = [ct * cp, ct * sp, -st];
    let e_phi = [-sp, cp, 0.0];
    let (a, b) = (x.r * x.r * td, x.r * x.r * st * pd);
    Ok([0, 1, 2].map(|k| a * e_phi[k] - b * e_theta[k]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalOrbit {
    pub params: ClassicalParams,
    pub samples: Vec<TrajectoryState>,
    /// Relative energy residual at each sample.
    pub energy_residual: Vec<f64>,
    pub events: Vec<TrajectoryEvent>,
    pub termination: Termination,
}

impl ClassicalOrbit {
    pub fn radial_turns(&self) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::RadialTurn)
    }

    pub fn max_energy_residual(&self) -> f64 {
        self.energy_residual.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// y = [r, p_r, ϑ, p_ϑ, φ] against t.
struct Hamilton<'a> {
    p: ClassicalParams,
    v: Potential<'a>,
    guard: f64,
    eject: f64,
    pole: f64,
    events: Vec<TrajectoryEvent>,
    turns: usize,
    max_turns: Option<usize>,
    stop: Option<Termination>,
    sign_phi: f64,
}

const EV_RTURN: usize = 0;
const EV_PTURN: usize = 1;
const EV_ORIGIN: usize = 2;
const EV_EJECT: usize = 3;
const EV_NORTH: usize = 4;

impl OdeSystem<5> for Hamilton<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 5]) -> Result<[f64; 5]> {
        let [r, pr, th, pt, _] = *y;
        let (s, c) = th.sin_cos();
        let b2 = self.p.beta * self.p.beta;
        let (_, dv) = (self.v)(r);
        let r2 = r * r;
        Ok([
            pr,
            (pt * pt + b2 / (s * s)) / (r2 * r) - dv,
            pt / r2,
            b2 * c / (r2 * s * s * s),
            self.sign_phi * self.p.beta / (r2 * s * s),
        ])
    }
}

impl EventSystem<5> for Hamilton<'_> {
    fn event_count(&self) -> usize {
        6
    }
    fn event_value(&self, i: usize, _t: f64, y: &[f64; 5]) -> f64 {
        match i {
            EV_RTURN => y[1],
            EV_PTURN => y[3],
            EV_ORIGIN => y[0] - self.guard,
            EV_EJECT => y[0] - self.eject,
            EV_NORTH => y[2] - self.pole,
            // south pole
            _ => PI - self.pole - y[2],
        }
    }
    fn event_side(&self, i: usize) -> EventSide {
        match i {
            EV_ORIGIN | EV_EJECT => EventSide::Before,
            _ => EventSide::After,
        }
    }
    fn handle_event(&mut self, i: usize, t: f64, y: &mut [f64; 5]) -> Result<Control> {
        let mut ev = |kind| {
            self.events.push(TrajectoryEvent {
                t,
                kind,
                r: y[0],
                theta: y[2],
                phi: y[4],
                coordinate: None,
            })
        };
        match i {
            EV_RTURN => {
                ev(EventKind::RadialTurn);
                self.turns += 1;
                if self.max_turns.is_some_and(|m| self.turns >= m) {
                    self.stop = Some(Termination::TurnLimit);
                    return Ok(Control::Stop);
                }
            }
            EV_PTURN => ev(EventKind::PolarTurn),
            EV_ORIGIN => {
                ev(EventKind::OriginApproach);
                self.stop = Some(Termination::Failed(QhjError::Domain(format!(
                    "classical orbit reached the origin guard at t = {t}"
                ))));
                return Ok(Control::Stop);
            }
            EV_EJECT => {
                ev(EventKind::Ejection);
                self.stop = Some(Termination::Ejected);
                return Ok(Control::Stop);
            }
            _ => {
                // only reachable with β = 0: cross the axis
                ev(EventKind::PolePass);
                y[2] = if i == EV_NORTH {
                    self.pole
                } else {
                    PI - self.pole
                };
                y[3] = -y[3];
                y[4] += PI;
            }
        }
        Ok(Control::Continue)
    }
}

/// Coulomb orbit from `init`; the momenta start with the signs of `init`.
pub fn classical_orbit(
    p: &ClassicalParams,
    init: &TrajectoryState,
    cfg: &IntegratorConfig,
) -> Result<ClassicalOrbit> {
    classical_orbit_in(p, init, cfg, &coulomb)
}

pub fn classical_orbit_in(
    p: &ClassicalParams,
    init: &TrajectoryState,
    cfg: &IntegratorConfig,
    v: Potential,
) -> Result<ClassicalOrbit> {
    p.validate()?;
    cfg.validate()?;
    if !(init.r > cfg.r_min_guard
        && init.theta > cfg.pole_guard
        && init.theta < PI - cfg.pole_guard)
    {
        return Err(QhjError::Domain(format!(
            "initial point r = {}, theta = {} outside the open domain",
            init.r, init.theta
        )));
    }
    let pr = init.sign_r.value() * radial_radicand(p, v, init.r)?.sqrt();
    let pt = init.sign_theta.value() * polar_radicand(p, init.theta)?.sqrt();
    let mut sys = Hamilton {
        p: *p,
        v,
        guard: cfg.r_min_guard,
        eject: cfg.ejection_radius,
        pole: cfg.pole_guard,
        events: Vec::new(),
        turns: 0,
        max_turns: cfg.max_radial_turns,
        stop: None,
        sign_phi: init.sign_phi.value(),
    };
    let mut out = ClassicalOrbit {
        params: *p,
        samples: Vec::new(),
        energy_residual: Vec::new(),
        events: Vec::new(),
        termination: Termination::EndTime,
    };
    let y0 = [init.r, pr, init.theta, pt, init.phi];
    let mut signs = [init.sign_r, init.sign_theta, init.sign_phi];
    let mut record = |sys: &Hamilton, t: f64, y: &[f64; 5], out: &mut ClassicalOrbit| {
        let [r, pr, th, pt, phi] = *y;
        for (k, v) in [(0, pr), (1, pt)] {
            if v != 0.0 {
                signs[k] = Sign::of(v);
            }
        }
        let s = th.sin();
        let b2 = sys.p.beta * sys.p.beta;
        let (vr, _) = (sys.v)(r);
        let kin = 0.5 * (pr * pr + (pt * pt + b2 / (s * s)) / (r * r));
        let res = (kin + vr - sys.p.energy) / (kin.abs() + vr.abs());
        if out.samples.last().is_some_and(|l| t <= l.t) {
            out.samples.pop();
            out.energy_residual.pop();
        }
        out.samples.push(TrajectoryState {
            t,
            r,
            theta: th,
            phi,
            sign_r: signs[0],
            sign_theta: signs[1],
            sign_phi: signs[2],
        });
        out.energy_residual.push(res);
    };
    record(&sys, init.t, &y0, &mut out);
    let sample_points: Option<Vec<f64>> = cfg.sample_dt.map(|dt| {
        let n = ((cfg.t_end - init.t) / dt).ceil().max(0.0) as usize;
        (1..=n)
            .map(|k| (init.t + dt * k as f64).min(cfg.t_end))
            .collect()
    });
    let run = integrate(
        &mut sys,
        init.t,
        y0,
        cfg.t_end,
        &cfg.solver(),
        sample_points.as_deref(),
        |sys, kind, t, y| {
            if let SampleKind::EventBefore(_) = kind {
                return;
            }
            record(sys, t, y, &mut out);
        },
    );
    out.events = std::mem::take(&mut sys.events);
    match run {
        Ok(_) => {
            out.termination = sys.stop.take().unwrap_or(Termination::EndTime);
            if let Termination::Failed(e) = &out.termination {
                return Err(e.clone());
            }
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::UnitSystem;

    fn fig1() -> ClassicalParams {
        ClassicalParams::new(-0.125, 2.0, 3f64.sqrt() / 2.0).unwrap()
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn fig1_energy_from_electron_volts() {
        let e = UnitSystem::si().energy_from_ev(-13.6 / 4.0);
        assert!((e + 0.125).abs() < 2e-3);
    }

    #[test]
    fn turning_radii_and_polar_turn() {
        let p = fig1();
        let s = 8f64.sqrt();
        for r in [4.0 - s, 4.0 + s] {
            let x = TrajectoryState {
                t: 0.0,
                r,
                theta: 1.0,
                phi: 0.0,
                sign_r: Sign::Plus,
                sign_theta: Sign::Plus,
                sign_phi: Sign::Plus,
            };
            assert!(classical_velocity_field(&p, &x).unwrap().0.abs() < 1e-7);
        }
        // ϑ̇ = 0 where sin²ϑ = β²/α = 3/8
        let th = (0.375f64).sqrt().asin();
        let x = TrajectoryState {
            t: 0.0,
            r: 3.0,
            theta: th,
            phi: 0.0,
            sign_r: Sign::Plus,
            sign_theta: Sign::Plus,
            sign_phi: Sign::Plus,
        };
        assert!(classical_velocity_field(&p, &x).unwrap().1.abs() < 1e-7);
        let x = TrajectoryState {
            theta: th * 0.9,
            ..x
        };
        assert!(matches!(
            classical_velocity_field(&p, &x),
            Err(QhjError::ForbiddenRegion(_))
        ));
        let x = TrajectoryState {
            r: 10.0,
            theta: 1.2,
            ..x
        };
        assert!(matches!(
            classical_velocity_field(&p, &x),
            Err(QhjError::ForbiddenRegion(_))
        ));
    }

    #[test]
    fn circular_orbit() {
        // E = −1/(2α) makes r = α a double root of the radial radicand
        let p = ClassicalParams::new(-0.25, 2.0, 1.0).unwrap();
        let init = TrajectoryState {
            t: 0.0,
            r: 2.0,
            theta: std::f64::consts::FRAC_PI_2,
            phi: 0.0,
            sign_r: Sign::Plus,
            sign_theta: Sign::Plus,
            sign_phi: Sign::Plus,
        };
        assert!(classical_velocity_field(&p, &init).unwrap().0.abs() < 1e-7);
        let cfg = IntegratorConfig {
            t_end: 50.0,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let o = classical_orbit(&p, &init, &cfg).unwrap();
        for s in &o.samples {
            assert!((s.r - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fig1_ellipse_closes_in_a_plane() {
        let p = fig1();
        let s8 = 8f64.sqrt();
        let init = TrajectoryState {
            t: 0.0,
            r: 5.0,
            theta: std::f64::consts::FRAC_PI_2,
            phi: 0.0,
            sign_r: Sign::Plus,
            sign_theta: Sign::Plus,
            sign_phi: Sign::Plus,
        };
        let cfg = IntegratorConfig {
            t_end: 400.0,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_radial_turns: Some(5),
            ..Default::default()
        };
        let o = classical_orbit(&p, &init, &cfg).unwrap();
        assert!(o.max_energy_residual() < 1e-10);
        let turns: Vec<_> = o.radial_turns().collect();
        assert!(turns.len() >= 4);
        let (peri, apo): (Vec<&TrajectoryEvent>, Vec<&TrajectoryEvent>) =
            turns.iter().copied().partition(|e| e.r < 4.0);
        for e in &peri {
            assert!((e.r - (4.0 - s8)).abs() < 1e-8, "{}", e.r);
        }
        for e in &apo {
            assert!((e.r - (4.0 + s8)).abs() < 1e-8, "{}", e.r);
        }
        // Kepler period 2π a^{3/2} with a = −1/2E = 4
        let period = peri[1].t - peri[0].t;
        assert!((period - 2.0 * PI * 8.0).abs() < 1e-6);
        let pos = |e: &TrajectoryEvent| {
            TrajectoryState {
                r: e.r,
                theta: e.theta,
                phi: e.phi,
                ..init
            }
            .cartesian()
        };
        assert!(dist(pos(peri[0]), pos(peri[1])) < 1e-6);
        let l = angular_momentum(&p, &init).unwrap();
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        assert!((n * n - p.alpha).abs() < 1e-12);
        assert!((l[2] - p.beta).abs() < 1e-12);
        for s in &o.samples {
            let x = s.cartesian();
            assert!(((x[0] * l[0] + x[1] * l[1] + x[2] * l[2]) / n).abs() < 1e-8);
        }
    }

    #[test]
    fn from_quantum_refuses_m_zero() {
        for (n, l, m) in [(1, 0, 0), (2, 0, 0), (2, 1, 0)] {
            let s = BoundState::new(n, l, m).unwrap();
            match ClassicalParams::from_quantum(&s, [Sign::Plus; 3]) {
                Err(QhjError::PurelyQuantum { m_l, beta_sq }) => {
                    assert_eq!(m_l, 0);
                    assert_eq!(beta_sq, -0.25);
                }
                other => panic!("{other:?}"),
            }
        }
        let p = ClassicalParams::from_quantum(&BoundState::new(2, 1, 1).unwrap(), [Sign::Plus; 3])
            .unwrap();
        assert_eq!(p.alpha, 2.0);
        assert!((p.beta - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_validation() {
        assert!(ClassicalParams::new(-0.1, 0.0, 0.0).is_err());
        assert!(ClassicalParams::new(-0.1, 1.0, 1.5).is_err());
        assert!(ClassicalParams::new(-0.1, 1.0, -0.5).is_err());
        assert!(ClassicalParams::new(-0.1, 1.0, 1.0).is_ok());
    }

    #[test]
    fn custom_potential_conserves_energy() {
        // softened Coulomb: orbit precesses but energy is still conserved
        let v = |r: f64| (-1.0 / (r * r + 0.5).sqrt(), r / (r * r + 0.5).powf(1.5));
        let p = ClassicalParams::new(-0.2, 1.0, 0.6).unwrap();
        let init = TrajectoryState {
            t: 0.0,
            r: 2.0,
            theta: 1.3,
            phi: 0.0,
            sign_r: Sign::Plus,
            sign_theta: Sign::Minus,
            sign_phi: Sign::Plus,
        };
        let cfg = IntegratorConfig {
            t_end: 100.0,
            ..Default::default()
        };
        let o = classical_orbit_in(&p, &init, &cfg, &v).unwrap();
        assert!(o.max_energy_residual() < 1e-7);
        assert!(o.radial_turns().count() > 2);
    }
}
