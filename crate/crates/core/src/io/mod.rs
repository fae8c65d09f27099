//! Command dispatch, configuration and file output for the `qhj` binary.

pub mod config;
pub mod csv;
pub mod figures;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{classify_ejection, detect_nodes, trap_zone, EjectionClass, NodeOptions};
use crate::basis::BoundState;
use crate::classical::{classical_orbit, ClassicalParams};
use crate::error::{QhjError, Result};
use crate::momenta::HiddenVariables;
use crate::quantum::{IntegratorConfig, QuantumModel, Trajectory, TrajectoryState};
use crate::residuals::{verify_all, verify_metric_identities};
use crate::units::{QuantityKind, UnitMode, UnitSystem};

pub use config::{Command, OrbitMode, RunConfig};
pub use csv::{TrajectoryFile, TRAJECTORY_COLUMNS};
pub use figures::{emit_figure_bundle, FigureDefaults};

/// What a command produced: text for stdout and the files it wrote.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: String,
    pub files: Vec<PathBuf>,
}

/// A failed run: the error plus whatever was written before it occurred.
#[derive(Debug)]
pub struct RunError {
    pub error: QhjError,
    pub partial: RunOutput,
}

impl From<QhjError> for RunError {
    fn from(error: QhjError) -> Self {
        Self {
            error,
            partial: RunOutput::default(),
        }
    }
}

/// The machine-readable line printed on failure.
pub fn error_line(e: &QhjError) -> String {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
    format!("error: kind={} message=\"{msg}\"", e.kind())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| QhjError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| QhjError::Io(format!("{}: {e}", path.display())))
}

/// `out.csv` for a single member, `out_0.csv`, `out_1.csv`, ... otherwise.
fn member_path(base: &Path, k: usize, total: usize) -> PathBuf {
    if total == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{k}.{ext}"))
}

/// Writes `text` to the member's file, or appends it to stdout when no
/// output path was given.
fn emit(cfg: &RunConfig, out: &mut RunOutput, k: usize, total: usize, text: &str) -> Result<()> {
    match &cfg.output_path {
        Some(base) => {
            let p = member_path(base, k, total);
            write_file(&p, text)?;
            out.files.push(p);
        }
        None => out.stdout.push_str(text),
    }
    Ok(())
}

fn state(cfg: &RunConfig) -> Result<BoundState> {
    cfg.state
        .ok_or_else(|| QhjError::Config(format!("{} needs a state", cfg.command)))
}

fn start(cfg: &RunConfig, h: &HiddenVariables) -> TrajectoryState {
    let (r0, th, ph) = cfg.init.unwrap_or((1.0, std::f64::consts::FRAC_PI_2, 0.0));
    TrajectoryState::at(r0, h).with_angles(th, ph)
}

fn trajectory_meta(cfg: &RunConfig) -> csv::FileMeta {
    let mut m = csv::FileMeta::new("trajectory").line(format!("command: {}", cfg.command));
    if let Some((r0, th, ph)) = cfg.init {
        m = m.line(format!(
            "init: r0={} theta0={} phi0={}",
            csv::Num(cfg.units.output(r0, QuantityKind::Length)),
            th,
            ph
        ));
    }
    m.wrapped_phi = cfg.wrapped_phi;
    m
}

/// One quantum run per hidden set; a failing member still yields the part
/// integrated before the failure.
fn quantum_ensemble(
    cfg: &RunConfig,
    st: &BoundState,
) -> Result<Vec<(Trajectory, Option<QhjError>)>> {
    cfg.ensemble
        .par_iter()
        .map(|h| {
            let m = QuantumModel::new(st, h)?;
            let init = start(cfg, h);
            match cfg.mode {
                OrbitMode::Time => m.integrate_time_partial(&init, &cfg.integrator),
                OrbitMode::Spatial => m
                    .integrate_spatial(&init, &cfg.integrator)
                    .map(|o| (o.trajectory, None)),
            }
        })
        .collect()
}

fn run_orbits(cfg: &RunConfig) -> std::result::Result<RunOutput, RunError> {
    let st = state(cfg)?;
    let runs = quantum_ensemble(cfg, &st)?;
    let mut out = RunOutput::default();
    let mut first_err = None;
    let n = runs.len();
    for (k, (tr, err)) in runs.into_iter().enumerate() {
        emit(
            cfg,
            &mut out,
            k,
            n,
            &csv::trajectory_csv(&tr, &cfg.units, trajectory_meta(cfg)),
        )?;
        if first_err.is_none() {
            first_err = err;
        }
    }
    match first_err {
        Some(error) => Err(RunError {
            error,
            partial: out,
        }),
        None => Ok(out),
    }
}

fn run_angular(cfg: &RunConfig) -> Result<RunOutput> {
    let st = state(cfg)?;
    let (_, th, ph) = cfg.init.unwrap_or((1.0, std::f64::consts::FRAC_PI_2, 0.0));
    let mut out = RunOutput::default();
    let n = cfg.ensemble.len();
    let curves: Vec<_> = cfg
        .ensemble
        .par_iter()
        .map(|h| QuantumModel::new(&st, h)?.integrate_angular(th, ph, &cfg.integrator))
        .collect::<Result<_>>()?;
    for (k, (a, h)) in curves.iter().zip(&cfg.ensemble).enumerate() {
        let meta = csv::FileMeta::new("angular curve")
            .line(format!("state: {st}"))
            .line(format!("hidden: {h}"));
        emit(cfg, &mut out, k, n, &csv::angular_csv(a, meta))?;
    }
    Ok(out)
}

fn run_classical(cfg: &RunConfig) -> Result<RunOutput> {
    let c = cfg
        .classical
        .ok_or_else(|| QhjError::Config("classical needs E, alpha and beta".into()))?;
    let signs = cfg
        .hidden
        .map(|h| h.signs())
        .unwrap_or([crate::momenta::Sign::Plus; 3]);
    let p = ClassicalParams::new(c.energy, c.alpha, c.beta)?.with_signs(signs);
    let h = cfg
        .hidden
        .unwrap_or(HiddenVariables::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0)?);
    let r0 = match cfg.init {
        Some((r, _, _)) => r,
        // the midpoint of the classical turning radii
        None => -0.5 / c.energy,
    };
    let (th, ph) = cfg
        .init
        .map(|(_, t, p)| (t, p))
        .unwrap_or((std::f64::consts::FRAC_PI_2, 0.0));
    let init = TrajectoryState::at(r0, &h).with_angles(th, ph);
    let o = classical_orbit(&p, &init, &cfg.integrator)?;
    let mut meta = csv::FileMeta::new("classical orbit").line("command: classical");
    meta.wrapped_phi = cfg.wrapped_phi;
    let mut out = RunOutput::default();
    emit(
        cfg,
        &mut out,
        0,
        1,
        &csv::classical_csv(&o, &cfg.units, meta),
    )?;
    Ok(out)
}

fn run_trap(cfg: &RunConfig) -> Result<RunOutput> {
    let st = state(cfg)?;
    let z = trap_zone(&st)?;
    let si = UnitSystem::si();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "state {st}: E = {} (internal) = {} eV",
        st.energy,
        si.energy_to_ev(st.energy)
    );
    for (name, r) in [("r1", z.r1), ("r2", z.r2)] {
        let _ = writeln!(
            s,
            "{name} = {r} a0 = {} m",
            csv::Num(si.from_internal(r, QuantityKind::Length))
        );
    }
    if z.contains_origin {
        let _ = writeln!(s, "the trapping zone reaches the origin");
    }
    Ok(RunOutput {
        stdout: s,
        files: vec![],
    })
}

fn run_nodes(cfg: &RunConfig) -> Result<RunOutput> {
    let st = state(cfg)?;
    let mut icfg = cfg.integrator.clone();
    // nodes come from the turns, so the turn limit rather than the clock
    // ends these runs
    icfg.max_radial_turns.get_or_insert(4);
    icfg.t_end = icfg.t_end.max(2000.0);
    let c = RunConfig {
        integrator: icfg,
        ..cfg.clone()
    };
    let runs: Vec<Trajectory> = quantum_ensemble(&c, &st)?
        .into_iter()
        .map(|(t, e)| match e {
            Some(e) => Err(e),
            None => Ok(t),
        })
        .collect::<Result<_>>()?;
    let cat = detect_nodes(&runs, &NodeOptions::radial())?;
    let mut s = format!(
        "state {st}: {} radial node(s) over {} trajectories\n",
        cat.nodes.len(),
        runs.len()
    );
    for n in &cat.nodes {
        let _ = writeln!(
            s,
            "node r = {} {} support={}",
            csv::Num(cfg.units.output(n.position.radius(), QuantityKind::Length)),
            cfg.units.unit_label(QuantityKind::Length),
            n.support
        );
    }
    Ok(RunOutput {
        stdout: s,
        files: vec![],
    })
}

fn run_eject(cfg: &RunConfig) -> Result<RunOutput> {
    let st = state(cfg)?;
    let mut icfg = cfg.integrator.clone();
    icfg.t_end = icfg.t_end.max(1e4);
    let mut s = String::new();
    for h in &cfg.ensemble {
        let init = start(cfg, h);
        let class = classify_ejection(&st, h, init.r, &icfg)?;
        match class {
            EjectionClass::Trapped => {
                let _ = writeln!(s, "hidden {h}: r0 = {} trapped", init.r);
            }
            EjectionClass::Ejected(t) => {
                let _ = writeln!(
                    s,
                    "hidden {h}: r0 = {} ejected past r = {} at t = {}",
                    init.r,
                    icfg.ejection_radius,
                    csv::Num(cfg.units.output(t, QuantityKind::Time))
                );
            }
        }
    }
    Ok(RunOutput {
        stdout: s,
        files: vec![],
    })
}

fn run_verify(cfg: &RunConfig) -> std::result::Result<RunOutput, RunError> {
    let st = state(cfg)?;
    let mut s = String::new();
    let mut failed = Vec::new();
    for h in &cfg.ensemble {
        let mut reports = verify_all(&st, h)?;
        let m = QuantumModel::new(&st, h)?;
        let icfg = IntegratorConfig {
            max_radial_turns: Some(cfg.integrator.max_radial_turns.unwrap_or(2)),
            t_end: cfg.integrator.t_end.max(1000.0),
            ..cfg.integrator.clone()
        };
        let tr = m.integrate_time(&start(cfg, h), &icfg)?;
        reports.push(verify_metric_identities(&tr, &st, h)?);
        let _ = writeln!(s, "state {st} hidden {h}");
        for r in &reports {
            let _ = writeln!(s, "  {r}");
            if !r.pass {
                failed.push(r.check_id.clone());
            }
        }
    }
    if failed.is_empty() {
        Ok(RunOutput {
            stdout: s,
            files: vec![],
        })
    } else {
        Err(RunError {
            error: QhjError::Consistency(format!("failed checks: {}", failed.join(","))),
            partial: RunOutput {
                stdout: s,
                files: vec![],
            },
        })
    }
}

fn run_state_info(cfg: &RunConfig) -> Result<RunOutput> {
    let st = state(cfg)?;
    let si = UnitSystem::si();
    let z = trap_zone(&st)?;
    let mut s = String::new();
    let _ = writeln!(s, "state {st}");
    let _ = writeln!(
        s,
        "energy = {} internal = {} eV",
        st.energy,
        si.energy_to_ev(st.energy)
    );
    let _ = writeln!(s, "l(l+1) = {}", st.lambda);
    let _ = writeln!(s, "m_l^2 - 1/4 = {}", st.m_term());
    let _ = writeln!(s, "trapping zone = [{}, {}] a0", z.r1, z.r2);
    match ClassicalParams::from_quantum(&st, [crate::momenta::Sign::Plus; 3]) {
        Ok(p) => {
            let _ = writeln!(
                s,
                "classical correspondence: alpha = {} beta = {}",
                p.alpha, p.beta
            );
        }
        Err(e) => {
            let _ = writeln!(s, "classical correspondence: none ({e})");
        }
    }
    if let Some(h) = cfg.hidden {
        let m = QuantumModel::new(&st, &h)?;
        let roots: Vec<String> = m
            .polar_turning_angles()
            .iter()
            .map(|r| r.to_string())
            .collect();
        let _ = writeln!(s, "polar turning angles = [{}]", roots.join(", "));
    }
    Ok(RunOutput {
        stdout: s,
        files: vec![],
    })
}

/// Runs a validated configuration.
pub fn run(cfg: &RunConfig) -> std::result::Result<RunOutput, RunError> {
    match cfg.command {
        Command::Orbit | Command::RadialTime => run_orbits(cfg),
        Command::Angular => Ok(run_angular(cfg)?),
        Command::Classical => Ok(run_classical(cfg)?),
        Command::Trap => Ok(run_trap(cfg)?),
        Command::Nodes => Ok(run_nodes(cfg)?),
        Command::Eject => Ok(run_eject(cfg)?),
        Command::Verify => run_verify(cfg),
        Command::StateInfo => Ok(run_state_info(cfg)?),
    }
}

/// Writes figure bundles for `ids` below `dir`, one after another.
pub fn emit_figures(ids: &[u32], dir: &Path) -> Result<Vec<PathBuf>> {
    let defaults = FigureDefaults::builtin()?;
    let mut files = Vec::new();
    for &id in ids {
        files.extend(figures::emit_figure_bundle_with(&defaults, id, dir)?);
    }
    Ok(files)
}

/// Unit mode from the environment, for callers that do not set one.
pub fn default_units() -> Result<UnitMode> {
    config::units_from_env()
}
