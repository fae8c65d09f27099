//! Data bundles for the twelve figures: CSV files plus a gnuplot script.
//!
//! Defaults live in `data/figures.toml`, compiled into the binary. Ensemble
//! members are integrated in parallel and written in input order, so the
//! bundle is byte-identical from run to run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::analysis::trap_zone;
use crate::classical::{classical_orbit, ClassicalParams};
use crate::error::{QhjError, Result};
use crate::io::config::parse_state;
use crate::io::csv::{angular_csv, classical_csv, trajectory_csv, FileMeta};
use crate::momenta::{HiddenVariables, Sign};
use crate::quantum::{IntegratorConfig, QuantumModel, Trajectory, TrajectoryState};
use crate::units::UnitSystem;

pub const DEFAULTS_TOML: &str = include_str!("../../data/figures.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct FigureDefaults {
    pub version: u32,
    pub figure: Vec<FigureSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureKind {
    Classical,
    RadialTime,
    Spatial,
    Compare,
    Projections,
    Ejection,
    Angular,
}

/// A start radius, or `"r1"` / `"r2"` for a trapping root.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Start {
    Radius(f64),
    Root(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureSpec {
    pub id: u32,
    pub kind: FigureKind,
    pub title: String,
    pub state: Option<String>,
    pub states: Option<Vec<String>>,
    pub r0: Option<Start>,
    pub r0_trapped: Option<f64>,
    pub t_end: Option<f64>,
    pub tau_end: Option<f64>,
    /// Minimum time between written samples; events are always kept.
    pub min_dt: Option<f64>,
    pub theta0: Option<f64>,
    pub max_radial_turns: Option<usize>,
    #[serde(default)]
    pub hidden: Vec<String>,
    /// Internal units.
    pub energy: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl FigureDefaults {
    pub fn builtin() -> Result<Self> {
        Self::parse(DEFAULTS_TOML)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QhjError::Config(format!("figure defaults: {e}")))
    }

    pub fn get(&self, id: u32) -> Result<&FigureSpec> {
        self.figure
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| QhjError::Config(format!("no figure {id} (expected 1..12)")))
    }
}

fn missing(id: u32, what: &str) -> QhjError {
    QhjError::Config(format!("figure {id}: missing {what}"))
}

impl FigureSpec {
    fn hidden_sets(&self) -> Result<Vec<HiddenVariables>> {
        self.hidden.iter().map(|h| h.parse()).collect()
    }

    fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            t_end: self.t_end.unwrap_or(50.0),
            max_radial_turns: self.max_radial_turns,
            ..Default::default()
        }
    }

    fn start(&self, state: &crate::basis::BoundState) -> Result<f64> {
        let z = trap_zone(state)?;
        match self.r0.as_ref().ok_or_else(|| missing(self.id, "r0"))? {
            Start::Radius(r) => Ok(*r),
            Start::Root(s) if s == "r1" => Ok(z.r1),
            Start::Root(s) if s == "r2" => Ok(z.r2),
            Start::Root(s) => Err(QhjError::Config(format!(
                "figure {}: bad r0 '{s}'",
                self.id
            ))),
        }
    }
}

struct Bundle<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Bundle<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| QhjError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

fn quantum_runs(spec: &FigureSpec, r0: f64) -> Result<Vec<Trajectory>> {
    let state = parse_state(
        spec.state
            .as_deref()
            .ok_or_else(|| missing(spec.id, "state"))?,
    )?;
    let cfg = spec.integrator();
    spec.hidden_sets()?
        .par_iter()
        .map(|h| {
            let m = QuantumModel::new(&state, h)?;
            let tr = m.integrate_time(&TrajectoryState::at(r0, h), &cfg)?;
            Ok(match spec.min_dt {
                Some(dt) => thin(&tr, dt),
                None => tr,
            })
        })
        .collect()
}

/// Drops samples closer than `min_dt` to the previous kept one, keeping
/// the first and last samples and every event instant.
pub fn thin(tr: &Trajectory, min_dt: f64) -> Trajectory {
    let mut out = Trajectory::empty(tr.state, tr.hidden);
    out.events = tr.events.clone();
    out.termination = tr.termination.clone();
    let n = tr.samples.len();
    let mut ev = tr.events.iter().map(|e| e.t).peekable();
    let mut last = f64::NEG_INFINITY;
    for (i, s) in tr.samples.iter().enumerate() {
        while ev.next_if(|&t| t < s.t).is_some() {}
        let at_event = ev.peek() == Some(&s.t);
        if i == 0 || i + 1 == n || at_event || s.t - last >= min_dt {
            out.samples.push(*s);
            out.azimuthal_action.push(tr.azimuthal_action[i]);
            out.eq46.push(tr.eq46[i]);
            last = s.t;
        }
    }
    out
}

fn meta(spec: &FigureSpec, what: &str) -> FileMeta {
    FileMeta::new(what)
        .line(format!("figure: {}", spec.id))
        .line(format!("title: {}", spec.title))
}

fn quoted_list(files: &[String], using: &str, style: &str) -> String {
    files
        .iter()
        .map(|f| format!("'{f}' using {using} with {style} title '{f}'"))
        .collect::<Vec<_>>()
        .join(", \\\n     ")
}

/// Writes figure `id`'s data files and `figNN.gp` into `dir` (created if
/// needed). Returns the paths written, in a fixed order.
pub fn emit_figure_bundle(id: u32, dir: &Path) -> Result<Vec<PathBuf>> {
    emit_figure_bundle_with(&FigureDefaults::builtin()?, id, dir)
}

pub fn emit_figure_bundle_with(
    defaults: &FigureDefaults,
    id: u32,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let spec = defaults.get(id)?;
    fs::create_dir_all(dir).map_err(|e| QhjError::Io(format!("{}: {e}", dir.display())))?;
    let mut b = Bundle {
        dir,
        files: Vec::new(),
    };
    let u = UnitSystem::internal();
    let tag = format!("fig{id:02}");
    let mut gp = format!(
        "# {}\n# generated by {}\nset datafile separator ','\n",
        spec.title,
        crate::io::csv::tool_version()
    );

    match spec.kind {
        FigureKind::Classical => {
            let e = spec.energy.ok_or_else(|| missing(id, "energy"))?;
            let p = ClassicalParams::new(
                e,
                spec.alpha.ok_or_else(|| missing(id, "alpha"))?,
                spec.beta.ok_or_else(|| missing(id, "beta"))?,
            )?;
            let r0 = match spec.r0 {
                Some(Start::Radius(r)) => r,
                _ => return Err(missing(id, "numeric r0")),
            };
            let h = HiddenVariables::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0)?;
            let o = classical_orbit(&p, &TrajectoryState::at(r0, &h), &spec.integrator())?;
            let name = format!("{tag}_classical.csv");
            b.write(&name, &classical_csv(&o, &u, meta(spec, "classical orbit")))?;
            let _ = write!(
                gp,
                "set view equal xyz\nsplot {}\n",
                quoted_list(&[name], "5:6:7", "lines")
            );
        }
        FigureKind::RadialTime | FigureKind::Spatial => {
            let state = parse_state(spec.state.as_deref().ok_or_else(|| missing(id, "state"))?)?;
            let runs = quantum_runs(spec, spec.start(&state)?)?;
            let mut names = Vec::new();
            for (k, tr) in runs.iter().enumerate() {
                let name = format!("{tag}_traj_{k}.csv");
                let mut m = meta(spec, "trajectory");
                m.wrapped_phi = true;
                b.write(&name, &trajectory_csv(tr, &u, m))?;
                names.push(name);
            }
            if spec.kind == FigureKind::RadialTime {
                let _ = write!(
                    gp,
                    "set xlabel 't'\nset ylabel 'r'\nplot {}\n",
                    quoted_list(&names, "1:2", "lines")
                );
            } else {
                let _ = write!(
                    gp,
                    "set view equal xyz\nsplot {}\n",
                    quoted_list(&names, "5:6:7", "lines")
                );
            }
        }
        FigureKind::Compare | FigureKind::Projections => {
            let state = parse_state(spec.state.as_deref().ok_or_else(|| missing(id, "state"))?)?;
            let r0 = spec.start(&state)?;
            let runs = quantum_runs(spec, r0)?;
            let tr = &runs[0];
            let p = ClassicalParams::from_quantum(&state, [Sign::Plus; 3])?;
            let o = classical_orbit(&p, &TrajectoryState::at(r0, &tr.hidden), &spec.integrator())?;
            let q = format!("{tag}_quantum.csv");
            let c = format!("{tag}_classical.csv");
            b.write(&q, &trajectory_csv(tr, &u, meta(spec, "trajectory")))?;
            b.write(&c, &classical_csv(&o, &u, meta(spec, "classical orbit")))?;
            let both = [q, c];
            if spec.kind == FigureKind::Compare {
                let _ = write!(
                    gp,
                    "set view equal xyz\nsplot {}\n",
                    quoted_list(&both, "5:6:7", "lines")
                );
            } else {
                let _ = write!(
                    gp,
                    "set multiplot layout 1,2\nset size ratio -1\nset xlabel 'y'\nset ylabel 'z'\nplot {}\nset xlabel 'x'\nplot {}\nunset multiplot\n",
                    quoted_list(&both, "6:7", "lines"),
                    quoted_list(&both, "5:7", "lines")
                );
            }
        }
        FigureKind::Ejection => {
            let state = parse_state(spec.state.as_deref().ok_or_else(|| missing(id, "state"))?)?;
            let h = *spec
                .hidden_sets()?
                .first()
                .ok_or_else(|| missing(id, "hidden"))?;
            let m = QuantumModel::new(&state, &h)?;
            let cfg = spec.integrator();
            let starts = [
                ("escape", spec.start(&state)?),
                (
                    "trapped",
                    spec.r0_trapped.ok_or_else(|| missing(id, "r0_trapped"))?,
                ),
            ];
            let runs: Vec<Trajectory> = starts
                .par_iter()
                .map(|(_, r0)| {
                    let tr = m.integrate_time(&TrajectoryState::at(*r0, &h), &cfg)?;
                    Ok(match spec.min_dt {
                        Some(dt) => thin(&tr, dt),
                        None => tr,
                    })
                })
                .collect::<Result<_>>()?;
            let mut names = Vec::new();
            for ((label, _), tr) in starts.iter().zip(&runs) {
                let name = format!("{tag}_{label}.csv");
                b.write(&name, &trajectory_csv(tr, &u, meta(spec, "trajectory")))?;
                names.push(name);
            }
            let _ = write!(
                gp,
                "set logscale y\nset xlabel 't'\nset ylabel 'r'\nplot {}\n",
                quoted_list(&names, "1:2", "lines")
            );
        }
        FigureKind::Angular => {
            let states = spec.states.as_ref().ok_or_else(|| missing(id, "states"))?;
            let hidden = spec.hidden_sets()?;
            let theta0 = spec.theta0.unwrap_or(std::f64::consts::FRAC_PI_2);
            let cfg = IntegratorConfig {
                t_end: spec.tau_end.unwrap_or(5.0),
                ..Default::default()
            };
            let jobs: Vec<(usize, usize)> = (0..states.len())
                .flat_map(|i| (0..hidden.len()).map(move |k| (i, k)))
                .collect();
            let curves: Vec<_> = jobs
                .par_iter()
                .map(|&(i, k)| {
                    let st = parse_state(&states[i])?;
                    QuantumModel::new(&st, &hidden[k])?.integrate_angular(theta0, 0.0, &cfg)
                })
                .collect::<Result<_>>()?;
            let panels = ['a', 'b', 'c', 'd', 'e'];
            let _ = write!(gp, "set multiplot layout 1,{}\n", states.len());
            for (i, st) in states.iter().enumerate() {
                let mut names = Vec::new();
                for k in 0..hidden.len() {
                    let name = format!("{tag}{}_curve_{k}.csv", panels[i % panels.len()]);
                    let m = meta(spec, "angular curve")
                        .line(format!("state: ({st})"))
                        .line(format!("hidden: {}", hidden[k]));
                    b.write(&name, &angular_csv(&curves[i * hidden.len() + k], m))?;
                    names.push(name);
                }
                let _ = write!(
                    gp,
                    "set title '({st})'\nset xlabel 'phi'\nset ylabel 'theta'\nplot {}\n",
                    quoted_list(&names, "4:3", "points pt 7 ps 0.2")
                );
            }
            gp.push_str("unset multiplot\n");
        }
    }
    b.write(&format!("{tag}.gp"), &gp)?;
    Ok(b.files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_all_figures() {
        let d = FigureDefaults::builtin().unwrap();
        for id in 1..=12 {
            let f = d.get(id).unwrap();
            let sets = f.hidden_sets().unwrap();
            if matches!(
                f.kind,
                FigureKind::RadialTime | FigureKind::Spatial | FigureKind::Angular
            ) {
                assert_eq!(sets.len(), 5, "figure {id}");
            }
        }
        assert!(d.get(13).is_err());
        let f2 = d.get(2).unwrap();
        assert_eq!(f2.hidden[0], "0.36,0.52,1,0,1,0");
        assert_eq!(f2.r0, Some(Start::Radius(2.0)));
        let f11 = d.get(11).unwrap().hidden_sets().unwrap()[0];
        assert_eq!((f11.a_r, f11.b_r), (1.5, -0.5));
    }

    #[test]
    fn thinning_keeps_events_and_ends() {
        let st = crate::basis::BoundState::new(1, 0, 0).unwrap();
        let h: HiddenVariables = "0.36,0.52,1,0,1,0".parse().unwrap();
        let cfg = IntegratorConfig {
            t_end: 30.0,
            ..Default::default()
        };
        let tr = QuantumModel::new(&st, &h)
            .unwrap()
            .integrate_time(&TrajectoryState::at(2.0, &h), &cfg)
            .unwrap();
        let th = thin(&tr, 0.5);
        assert!(th.samples.len() < tr.samples.len());
        assert_eq!(th.samples.first(), tr.samples.first());
        assert_eq!(th.samples.last(), tr.samples.last());
        for e in &tr.events {
            assert!(
                th.samples.iter().any(|s| s.t == e.t),
                "event at {} dropped",
                e.t
            );
        }
        assert_eq!(th.samples.len(), th.eq46.len());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad =
            "version = 1\n[[figure]]\nid = 1\nkind = \"classical\"\ntitle = \"x\"\ncolour = 3\n";
        assert!(FigureDefaults::parse(bad).is_err());
    }
}
