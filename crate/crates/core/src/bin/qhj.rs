use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qhj::io::config::read_config_file;
use qhj::io::{default_units, emit_figures, error_line, run, Command, RunConfig, RunOutput};
use qhj::QhjError;

/// Quantum Hamilton-Jacobi trajectories of the hydrogen electron.
#[derive(Parser)]
#[command(name = "qhj", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Time-domain (or spatial) 3D trajectory as CSV.
    Orbit(RunArgs),
    /// Radial time curves r(t) for one or more hidden-variable sets.
    RadialTime(RunArgs),
    /// theta(phi) curves from the angular equations.
    Angular(RunArgs),
    /// Classical Kepler orbit from E, alpha, beta.
    Classical(RunArgs),
    /// Trapping radii in internal and SI units.
    Trap(RunArgs),
    /// Radial nodes shared by an ensemble of trajectories.
    Nodes(RunArgs),
    /// Ejected or trapped, for a start radius.
    Eject(RunArgs),
    /// Residual checks of the quantum Hamilton-Jacobi identities.
    Verify(RunArgs),
    /// Energy, quantum numbers and derived constants of a state.
    StateInfo(RunArgs),
    /// Data files and a gnuplot script for a figure.
    Figure(FigureArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// n,l,m_l
    #[arg(long)]
    state: Option<String>,
    /// a_r,b_r,a_theta,b_theta,a_phi,b_phi[,sign_r,sign_theta,sign_phi]; repeat for an ensemble
    #[arg(long, allow_hyphen_values = true)]
    hidden: Vec<String>,
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    phi0: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long)]
    max_radial_turns: Option<usize>,
    #[arg(long)]
    sample_dt: Option<f64>,
    #[arg(long)]
    ejection_radius: Option<f64>,
    #[arg(long)]
    turn_offset: Option<f64>,
    /// time or spatial
    #[arg(long)]
    mode: Option<String>,
    /// Classical energy
    #[arg(long = "E", alias = "energy", allow_hyphen_values = true)]
    energy: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Add a phi column wrapped to [0, 2pi)
    #[arg(long)]
    wrapped_phi: bool,
    /// internal or si (default: $QHJ_UNITS, else internal)
    #[arg(long)]
    units: Option<String>,
    /// Output CSV path (stdout if absent)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// key = value file; its entries override flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FigureArgs {
    /// Figure number 1..12
    #[arg(required_unless_present = "all")]
    id: Option<u32>,
    /// Emit all twelve figures
    #[arg(long)]
    all: bool,
    #[arg(short, long, default_value = "figures")]
    output: PathBuf,
}

impl RunArgs {
    fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let num = |v: Option<f64>| v.map(|x| x.to_string());
        put("state", self.state.clone());
        put(
            "hidden",
            (!self.hidden.is_empty()).then(|| self.hidden.join(";")),
        );
        put("r0", num(self.r0));
        put("theta0", num(self.theta0));
        put("phi0", num(self.phi0));
        put("t_end", num(self.t_end));
        put("rel_tol", num(self.rel_tol));
        put("abs_tol", num(self.abs_tol));
        put("max_step", num(self.max_step));
        put(
            "max_radial_turns",
            self.max_radial_turns.map(|v| v.to_string()),
        );
        put("sample_dt", num(self.sample_dt));
        put("ejection_radius", num(self.ejection_radius));
        put("turn_offset", num(self.turn_offset));
        put("mode", self.mode.clone());
        put("energy", num(self.energy));
        put("alpha", num(self.alpha));
        put("beta", num(self.beta));
        put("wrapped_phi", self.wrapped_phi.then(|| "true".to_string()));
        put("units", self.units.clone());
        put(
            "output",
            self.output.as_ref().map(|p| p.display().to_string()),
        );
        m
    }
}

fn config(command: Command, args: &RunArgs) -> Result<RunConfig, QhjError> {
    let mut map = args.to_map();
    if let Some(path) = &args.config {
        map.extend(read_config_file(path)?);
    }
    RunConfig::from_map(command, &map, default_units()?)
}

fn fail(e: &QhjError) -> ExitCode {
    eprintln!("{}", error_line(e));
    ExitCode::from(if e.kind() == "config" { 2 } else { 1 })
}

fn print(out: &RunOutput) {
    let mut so = std::io::stdout().lock();
    let _ = so.write_all(out.stdout.as_bytes());
    for f in &out.files {
        eprintln!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.cmd {
        Cmd::Figure(f) => {
            let ids: Vec<u32> = if f.all {
                (1..=12).collect()
            } else {
                f.id.into_iter().collect()
            };
            if let Some(bad) = ids.iter().find(|&&i| !(1..=12).contains(&i)) {
                return fail(&QhjError::Config(format!("figure id {bad} outside 1..12")));
            }
            return match emit_figures(&ids, &f.output) {
                Ok(files) => {
                    for p in files {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            };
        }
        Cmd::Orbit(a) => (Command::Orbit, a),
        Cmd::RadialTime(a) => (Command::RadialTime, a),
        Cmd::Angular(a) => (Command::Angular, a),
        Cmd::Classical(a) => (Command::Classical, a),
        Cmd::Trap(a) => (Command::Trap, a),
        Cmd::Nodes(a) => (Command::Nodes, a),
        Cmd::Eject(a) => (Command::Eject, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::StateInfo(a) => (Command::StateInfo, a),
    };
    let cfg = match config(command, &args) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run(&cfg) {
        Ok(out) => {
            print(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            print(&e.partial);
            fail(&e.error)
        }
    }
}
