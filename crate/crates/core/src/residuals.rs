//! Numerical checks of the quantum stationary Hamilton-Jacobi identities.
//!
//! Every check returns a [`ResidualReport`]; `pass` is exactly
//! `max_abs <= tolerance`. Checks are deterministic functions of their
//! inputs (no random sampling), so repeated runs give identical reports.

use std::fmt;

use rayon::prelude::*;

use crate::analysis::trap_zone;
use crate::basis::{BoundState, Coordinate, SolutionPair};
use crate::classical::{classical_velocity_field, ClassicalOrbit};
use crate::error::{QhjError, Result};
use crate::momenta::{component_residual, HiddenVariables, MomentumComponent, MomentumJet};
use crate::quantum::{EventKind, QuantumModel, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub check_id: String,
    pub grid: String,
    pub max_abs: f64,
    pub rms: f64,
    pub pass: bool,
    pub tolerance: f64,
    /// Points left out (turning points, non-finite values).
    pub excluded: usize,
}

impl ResidualReport {
    fn from_values(
        check_id: impl Into<String>,
        grid: impl Into<String>,
        vals: &[f64],
        tolerance: f64,
        excluded: usize,
    ) -> Self {
        let max_abs = vals.iter().fold(0.0f64, |m, v| {
            if v.is_nan() {
                f64::INFINITY
            } else {
                m.max(v.abs())
            }
        });
        let rms = if vals.is_empty() {
            0.0
        } else {
            (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt()
        };
        Self {
            check_id: check_id.into(),
            grid: grid.into(),
            max_abs,
            rms,
            pass: max_abs <= tolerance,
            tolerance,
            excluded,
        }
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {} max_abs={:.3e} rms={:.3e} tol={:.1e} excluded={} [{}]",
            self.check_id,
            if self.pass { "PASS" } else { "FAIL" },
            self.max_abs,
            self.rms,
            self.tolerance,
            self.excluded,
            self.grid
        )
    }
}

/// Sampling of (r, ϑ, φ): log-spaced radii over (r_lo, r_hi_factor·r2),
/// uniform angles kept `eps` away from the polar axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nr: usize,
    pub ntheta: usize,
    pub nphi: usize,
    pub r_lo: f64,
    pub r_hi_factor: f64,
    pub eps: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            nr: 64,
            ntheta: 32,
            nphi: 16,
            r_lo: 0.05,
            r_hi_factor: 4.0,
            eps: 1e-4,
        }
    }
}

impl Grid {
    pub fn radii(&self, state: &BoundState) -> Result<Vec<f64>> {
        let hi = self.r_hi_factor * trap_zone(state)?.r2;
        let (a, b) = (self.r_lo.ln(), hi.ln());
        Ok((0..self.nr)
            .map(|k| (a + (b - a) * k as f64 / (self.nr - 1).max(1) as f64).exp())
            .collect())
    }

    pub fn thetas(&self) -> Vec<f64> {
        let span = std::f64::consts::PI - 2.0 * self.eps;
        (0..self.ntheta)
            .map(|k| self.eps + span * k as f64 / (self.ntheta - 1).max(1) as f64)
            .collect()
    }

    pub fn phis(&self) -> Vec<f64> {
        (0..self.nphi)
            .map(|k| std::f64::consts::TAU * k as f64 / self.nphi as f64)
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "{}x{}x{} r=log[{},{}*r2] eps={}",
            self.nr, self.ntheta, self.nphi, self.r_lo, self.r_hi_factor, self.eps
        )
    }
}

/// Knobs shared by the grid checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub grid: Grid,
    /// Multiplies every ħ² term; 0 is the classical limit.
    pub hbar2: f64,
    /// Wronskian imposed on each (radial, polar, azimuthal) pair; 1 is exact.
    /// Anything else is a deliberately corrupted second solution.
    pub wronskian: [f64; 3],
    pub component_tol: f64,
    pub full_tol: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            hbar2: 1.0,
            wronskian: [1.0; 3],
            component_tol: 1e-6,
            full_tol: 1e-5,
        }
    }
}

const COORDS: [Coordinate; 3] = [Coordinate::Radial, Coordinate::Polar, Coordinate::Azimuthal];

fn components(
    state: &BoundState,
    hidden: &HiddenVariables,
    wronskian: [f64; 3],
) -> Result<[MomentumComponent; 3]> {
    hidden.validate()?;
    let make = |k: usize| -> Result<MomentumComponent> {
        let c = COORDS[k];
        let (a, b, sign) = hidden.component(c);
        let mut pair = SolutionPair::for_state(state, c)?;
        if wronskian[k] != 1.0 {
            pair = pair.with_s2_scale(wronskian[k]);
        }
        MomentumComponent::new(pair, a, b, sign)
    };
    Ok([make(0)?, make(1)?, make(2)?])
}

/// Residuals of the three component equations on 1D grids.
pub fn verify_component_qshje(
    state: &BoundState,
    hidden: &HiddenVariables,
) -> Result<[ResidualReport; 3]> {
    verify_component_qshje_with(state, hidden, &ResidualOptions::default())
}

pub fn verify_component_qshje_with(
    state: &BoundState,
    hidden: &HiddenVariables,
    opts: &ResidualOptions,
) -> Result<[ResidualReport; 3]> {
    let comps = components(state, hidden, opts.wronskian)?;
    let g = &opts.grid;
    let grids = [g.radii(state)?, g.thetas(), g.phis()];
    let mut out = Vec::with_capacity(3);
    for k in 0..3 {
        let comp = &comps[k];
        let vals: Vec<f64> = grids[k]
            .iter()
            .map(|&q| {
                let j = comp.jet(q)?;
                Ok(component_residual(
                    state,
                    COORDS[k],
                    q,
                    j.p,
                    j.schwarzian,
                    opts.hbar2,
                ))
            })
            .collect::<Result<_>>()?;
        out.push(ResidualReport::from_values(
            format!("qshje-{}", COORDS[k]),
            format!("{} points", grids[k].len()),
            &vals,
            opts.component_tol,
            0,
        ));
    }
    Ok(out.try_into().expect("three reports"))
}

/// The two fictitious-potential corrections −ħ²/8r² and −ħ²/8r²sin²ϑ of the
/// combined equation (ħ = 1).
pub fn correction_terms(r: f64, theta: f64) -> (f64, f64) {
    let s = theta.sin();
    (-1.0 / (8.0 * r * r), -1.0 / (8.0 * r * r * s * s))
}

/// Left minus right side of the combined equation at one point, with the
/// kinetic, Schwarzian and correction terms built from the summed action.
fn full_residual(
    state: &BoundState,
    jets: [&MomentumJet; 3],
    r: f64,
    theta: f64,
    hbar2: f64,
) -> f64 {
    let s2 = theta.sin().powi(2);
    let r2 = r * r;
    let [jr, jt, jp] = jets;
    let kinetic = 0.5 * (jr.p * jr.p + jt.p * jt.p / r2 + jp.p * jp.p / (r2 * s2));
    let quantum = 0.25 * (jr.schwarzian + jt.schwarzian / r2 + jp.schwarzian / (r2 * s2));
    let (c1, c2) = correction_terms(r, theta);
    kinetic + hbar2 * (quantum + c1 + c2) + state.potential(r) - state.energy
}

/// The combined three-dimensional equation for S₀ = Z + L + M on the full
/// (r, ϑ, φ) grid. Residuals are divided by the largest term at each point,
/// because the kinetic and correction terms grow like 1/(r² sin²ϑ).
pub fn verify_full_qshje(state: &BoundState, hidden: &HiddenVariables) -> Result<ResidualReport> {
    verify_full_qshje_with(state, hidden, &ResidualOptions::default())
}

pub fn verify_full_qshje_with(
    state: &BoundState,
    hidden: &HiddenVariables,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let comps = components(state, hidden, opts.wronskian)?;
    let g = &opts.grid;
    let (rs, ts, ps) = (g.radii(state)?, g.thetas(), g.phis());
    let jr: Vec<MomentumJet> = rs.iter().map(|&r| comps[0].jet(r)).collect::<Result<_>>()?;
    let jt: Vec<MomentumJet> = ts.iter().map(|&t| comps[1].jet(t)).collect::<Result<_>>()?;
    let jp: Vec<MomentumJet> = ps.iter().map(|&p| comps[2].jet(p)).collect::<Result<_>>()?;
    let vals: Vec<f64> = (0..rs.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (rs, ts, jr, jt, jp) = (&rs, &ts, &jr, &jt, &jp);
            (0..ts.len()).flat_map(move |j| {
                (0..jp.len()).map(move |k| {
                    let (r, th) = (rs[i], ts[j]);
                    let res = full_residual(state, [&jr[i], &jt[j], &jp[k]], r, th, opts.hbar2);
                    res / full_scale(state, [&jr[i], &jt[j], &jp[k]], r, th)
                })
            })
        })
        .collect();
    Ok(ResidualReport::from_values(
        "qshje-full",
        g.describe(),
        &vals,
        opts.full_tol,
        0,
    ))
}

fn full_scale(state: &BoundState, jets: [&MomentumJet; 3], r: f64, theta: f64) -> f64 {
    let s2 = theta.sin().powi(2);
    let r2 = r * r;
    let [jr, jt, jp] = jets;
    [
        0.5 * jr.p * jr.p,
        0.5 * jt.p * jt.p / r2,
        0.5 * jp.p * jp.p / (r2 * s2),
        0.25 * jr.schwarzian,
        0.25 * jt.schwarzian / r2,
        0.25 * jp.schwarzian / (r2 * s2),
        1.0 / (8.0 * r2 * s2),
        state.potential(r),
        state.energy,
    ]
    .iter()
    .map(|v| v.abs())
    .fold(0.0, f64::max)
}

/// Metric components of the deformed space from the momenta alone:
/// 1/a_qq = 1 + (ħ²/2)(S_q − c_q)/p_q², with c = 0 radially and ½ for the
/// angles.
pub fn metric_from_actions(jets: [&MomentumJet; 3], hbar2: f64) -> [f64; 3] {
    let c = [0.0, 0.5, 0.5];
    [0, 1, 2]
        .map(|k| 1.0 / (1.0 + 0.5 * hbar2 * (jets[k].schwarzian - c[k]) / (jets[k].p * jets[k].p)))
}

/// Along a quantum trajectory: the metric from the velocities (p/(m q̇)
/// with the r² and r² sin²ϑ factors) must equal the one built from the
/// actions, and the Lagrangian energy must equal E. Samples taken at
/// turning events, or where a velocity component vanishes, are excluded.
pub fn verify_metric_identities(
    trajectory: &Trajectory,
    state: &BoundState,
    hidden: &HiddenVariables,
) -> Result<ResidualReport> {
    let model = QuantumModel::new(state, hidden)?;
    let mut vals = Vec::with_capacity(trajectory.samples.len());
    let mut excluded = 0usize;
    let turns: Vec<f64> = trajectory
        .events
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::RadialTurn | EventKind::PolarTurn | EventKind::OriginApproach
            )
        })
        .map(|e| e.t)
        .collect();
    for s in &trajectory.samples {
        if turns.contains(&s.t) {
            excluded += 1;
            continue;
        }
        let signs = s.signs();
        let point = || -> Result<Option<f64>> {
            let p = model.momenta_at(s.r, s.theta, s.phi, signs)?;
            let v = model.velocities(s.r, s.theta, s.phi, signs)?;
            let r2 = s.r * s.r;
            let s2 = s.theta.sin().powi(2);
            let geo = [1.0, r2, r2 * s2];
            // |p q̇| is the size of each bracket; near a turning point it
            // vanishes and the velocity form of the metric is 0/0
            let scale = 2.0 * (state.energy - state.potential(s.r)).abs();
            if (0..3).any(|k| (p[k] * v[k]).abs() < 1e-12 * scale) {
                return Ok(None);
            }
            let from_velocity = [0, 1, 2].map(|k| p[k] / (geo[k] * v[k]));
            let jets = [
                model.momenta.radial.jet(s.r)?,
                model.momenta.polar.jet(s.theta)?,
                model.momenta.azimuthal.jet(s.phi)?,
            ];
            let from_action = metric_from_actions([&jets[0], &jets[1], &jets[2]], 1.0);
            // compare p²/a from both sides; the ratio form itself is 0/0 near
            // turns, while p²/a = p q̇ (geometric factor) stays well conditioned
            let mut worst = 0.0f64;
            for k in 0..3 {
                let lhs = p[k] * p[k] / from_velocity[k];
                let rhs = p[k] * p[k] / from_action[k];
                let size = (p[k] * p[k]).max(0.5 * jets[k].schwarzian.abs()).max(1.0);
                worst = worst.max((lhs - rhs).abs() / size);
            }
            // Lagrangian energy with the velocity-form metric
            let terms = [0, 1, 2].map(|k| 0.5 * from_velocity[k] * geo[k] * v[k] * v[k]);
            let lhs: f64 = terms.iter().sum::<f64>() + state.potential(s.r);
            let e_scale = terms.iter().map(|t| t.abs()).sum::<f64>() + state.potential(s.r).abs();
            worst = worst.max((lhs - state.energy).abs() / e_scale);
            Ok(Some(worst))
        };
        match point() {
            Ok(Some(w)) if w.is_finite() => vals.push(w),
            Ok(_) | Err(_) => excluded += 1,
        }
    }
    if vals.is_empty() {
        return Err(QhjError::Domain(
            "no usable trajectory samples for the metric check".into(),
        ));
    }
    Ok(ResidualReport::from_values(
        "metric-identities",
        format!("{} samples", trajectory.samples.len()),
        &vals,
        1e-6,
        excluded,
    ))
}

/// Classical counterpart: with p = m q̇ every metric component is 1, so the
/// check reports max |a_qq − 1| along the orbit.
pub fn verify_classical_metric(orbit: &ClassicalOrbit) -> Result<ResidualReport> {
    let p = &orbit.params;
    let mut vals = Vec::new();
    let mut excluded = 0;
    for s in &orbit.samples {
        let Ok((rd, td, pd)) = classical_velocity_field(p, s) else {
            excluded += 1;
            continue;
        };
        let r2 = s.r * s.r;
        let s2 = s.theta.sin().powi(2);
        // momenta from the separated equations, signed like the velocities
        let pr = (2.0 * (p.energy - crate::classical::coulomb(s.r).0) - p.alpha / r2)
            .max(0.0)
            .sqrt();
        let pt = (p.alpha - p.beta * p.beta / s2).max(0.0).sqrt();
        let pp = p.beta;
        let mut w = 0.0f64;
        let mut used = false;
        for (pm, v, geo) in [
            (pr, rd.abs(), 1.0),
            (pt, td.abs(), r2),
            (pp, pd.abs(), r2 * s2),
        ] {
            if v * geo > 1e-6 * pm.max(1e-300) && pm > 1e-6 {
                w = w.max((pm / (geo * v) - 1.0).abs());
                used = true;
            }
        }
        if used {
            vals.push(w);
        } else {
            excluded += 1;
        }
    }
    Ok(ResidualReport::from_values(
        "classical-metric",
        format!("{} samples", orbit.samples.len()),
        &vals,
        1e-10,
        excluded,
    ))
}

/// Everything the `verify` command prints for one state.
pub fn verify_all(state: &BoundState, hidden: &HiddenVariables) -> Result<Vec<ResidualReport>> {
    let mut out: Vec<ResidualReport> = verify_component_qshje(state, hidden)?.into();
    out.push(verify_full_qshje(state, hidden)?);
    let mut neg = ResidualOptions::default();
    neg.wronskian[0] = 1.01;
    let mut control = verify_component_qshje_with(state, hidden, &neg)?[0].clone();
    control.check_id = "negative-control-radial".into();
    // the control passes when the corrupted pair is caught
    control.pass = !control.pass;
    out.push(control);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momenta::Sign;
    use crate::quantum::{IntegratorConfig, TrajectoryState};

    fn hv(v: [f64; 6]) -> HiddenVariables {
        HiddenVariables::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    }

    const DRAWS: [[f64; 6]; 3] = [
        [0.36, 0.52, 1.0, 0.0, 1.0, 0.0],
        [3.1, -0.4, 0.6, -0.2, 1.0, 0.0],
        [-1.3, 0.8, 2.0, 0.5, 0.7, -0.3],
    ];

    #[test]
    fn components_and_full_equation_hold() {
        for st in BoundState::catalog() {
            for d in DRAWS {
                let h = hv(d);
                for rep in verify_component_qshje(&st, &h).unwrap() {
                    assert!(rep.pass, "{st} {rep}");
                }
                let full = verify_full_qshje(&st, &h).unwrap();
                assert!(full.pass, "{st} {full}");
            }
        }
    }

    #[test]
    fn corrupted_wronskian_is_caught() {
        let st = BoundState::new(1, 0, 0).unwrap();
        let mut opts = ResidualOptions::default();
        opts.wronskian[0] = 1.01;
        let reps = verify_component_qshje_with(&st, &hv(DRAWS[0]), &opts).unwrap();
        assert!(!reps[0].pass, "{}", reps[0]);
        assert!(reps[1].pass && reps[2].pass);
        assert!(
            !verify_full_qshje_with(&st, &hv(DRAWS[0]), &opts)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn corrections_agree_on_the_equator() {
        let (a, b) = correction_terms(1.7, std::f64::consts::FRAC_PI_2);
        assert_eq!(a, b);
    }

    #[test]
    fn classical_limit_leaves_the_classical_equation() {
        // with the ħ² terms off, the residual is ½|∇S₀|² + V − E computed
        // directly from the momenta
        let st = BoundState::new(2, 1, 1).unwrap();
        let h = hv(DRAWS[1]);
        let comps = components(&st, &h, [1.0; 3]).unwrap();
        let (r, th, ph) = (1.3, 0.9, 0.4);
        let jets = [
            comps[0].jet(r).unwrap(),
            comps[1].jet(th).unwrap(),
            comps[2].jet(ph).unwrap(),
        ];
        let got = full_residual(&st, [&jets[0], &jets[1], &jets[2]], r, th, 0.0);
        let p = [
            comps[0].momentum(r).unwrap(),
            comps[1].momentum(th).unwrap(),
            comps[2].momentum(ph).unwrap(),
        ];
        let s2 = th.sin().powi(2);
        let want = 0.5 * (p[0] * p[0] + p[1] * p[1] / (r * r) + p[2] * p[2] / (r * r * s2))
            - 1.0 / r
            - st.energy;
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        assert_eq!(
            metric_from_actions([&jets[0], &jets[1], &jets[2]], 0.0),
            [1.0; 3]
        );
    }

    #[test]
    fn metric_identities_along_fig8_orbit() {
        let st = BoundState::new(2, 1, 1).unwrap();
        let h = hv(DRAWS[1]);
        let m = QuantumModel::new(&st, &h).unwrap();
        let cfg = IntegratorConfig {
            t_end: 150.0,
            max_radial_turns: Some(2),
            ..Default::default()
        };
        let tr = m
            .integrate_time(&TrajectoryState::at(4.0, &h), &cfg)
            .unwrap();
        let rep = verify_metric_identities(&tr, &st, &h).unwrap();
        assert!(rep.pass, "{rep}");
        assert!(rep.excluded > 0);
    }

    #[test]
    fn classical_metric_is_flat() {
        use crate::classical::{classical_orbit, ClassicalParams};
        let p = ClassicalParams::from_quantum(&BoundState::new(2, 1, 1).unwrap(), [Sign::Plus; 3])
            .unwrap();
        let init = TrajectoryState::at(3.0, &hv(DRAWS[0]));
        let cfg = IntegratorConfig {
            t_end: 60.0,
            ..Default::default()
        };
        let o = classical_orbit(&p, &init, &cfg).unwrap();
        let rep = verify_classical_metric(&o).unwrap();
        assert!(rep.pass, "{rep}");
    }
}
