use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vmkdv::config::{IcConfig, RunConfig, IC_KINDS};
use vmkdv::experiment::{self, SweepMode};
use vmkdv::output;
use vmkdv::stepper::InitMode;
use vmkdv::Error;

/// Conservative Galerkin solver for the vectorial modified KdV equation.
#[derive(Parser, Debug)]
#[command(name = "vmkdv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// March one configuration and write its output directory.
    Run(RunArgs),
    /// Refine the mesh over a range of levels and tabulate the EOC.
    Converge(ConvergeArgs),
    /// Check the conservation laws symbolically.
    VerifyClaws {
        /// Component counts to check.
        #[arg(long = "d", value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        dims: Vec<usize>,
    },
    /// List the available initial data.
    ListIcs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Run to T = 100 instead of the configured final time.
    #[arg(long)]
    long: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Spatial,
    Temporal,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    min_level: u32,
    #[arg(long, default_value_t = 3)]
    max_level: u32,
    #[arg(long, value_enum, default_value_t = Mode::Spatial)]
    mode: Mode,
    /// `τ = coupling · h` in temporal mode.
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
}

/// Configuration file plus per-key overrides; flags win over the file.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    ic: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    quad_points: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    final_time: Option<f64>,
    #[arg(long, value_enum)]
    init_mode: Option<InitModeArg>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Track errors against the exact solution.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    damping: bool,
    /// Reuse the factorised Jacobian while Newton contracts fast enough.
    #[arg(long)]
    reuse_jacobian: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitModeArg {
    Project,
    Interpolate,
}

impl ConfigArgs {
    fn resolve(&self) -> vmkdv::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(kind) = &self.ic {
            cfg.ic = IcConfig::from_kind(kind)?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(d, length, cells, degree, quad_points, tau, final_time, snapshot_every, output_dir);
        if let Some(m) = self.init_mode {
            cfg.init_mode = match m {
                InitModeArg::Project => InitMode::Project,
                InitModeArg::Interpolate => InitMode::Interpolate,
            };
        }
        cfg.compare_exact |= self.exact;
        if let Some(t) = self.tolerance {
            cfg.newton.tolerance = t;
        }
        if let Some(n) = self.max_iterations {
            cfg.newton.max_iterations = n;
        }
        cfg.newton.damping |= self.damping;
        cfg.newton.reuse_jacobian |= self.reuse_jacobian;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Usage(_) => 3,
        Error::NewtonFailure { .. } | Error::Singular { .. } => 2,
        Error::NotATotalDerivative(_) | Error::OrderBound { .. } | Error::Io(_) => 1,
    }
}

fn cmd_run(args: &RunArgs) -> vmkdv::Result<()> {
    let mut cfg = args.common.resolve()?;
    if args.long {
        cfg.final_time = 100.0;
        cfg.validate()?;
    }
    let s = experiment::run_to_disk(&cfg)?;
    println!("wrote {}", s.output_dir.display());
    println!(
        "steps {}  max|dF4| {:.3e}  max|dF2| {:.3e}  max|constraint| {:.3e}  max|P| {:.3e}  {:.1} s",
        s.steps_completed,
        s.max_f4_deviation,
        s.max_f2_deviation,
        s.max_abs_constraint,
        s.max_abs_multiplier,
        s.wall_seconds
    );
    if let Some(e) = &s.linf_l2_errors {
        println!("max_t L2 error per component: {}", fmt_list(e));
    }
    Ok(())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn cmd_converge(args: &ConvergeArgs) -> vmkdv::Result<()> {
    let base = args.common.resolve()?;
    let mode = match args.mode {
        Mode::Spatial => SweepMode::Spatial,
        Mode::Temporal => SweepMode::Temporal {
            coupling: args.coupling,
        },
    };
    let root = base.resolved_output_dir();
    let table = experiment::convergence_sweep(&base, args.min_level..=args.max_level, mode, |cfg, out| {
        let dir = root.join(cfg.output_dir.file_name().expect("level directory"));
        output::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
        match out {
            Ok(o) => {
                output::write_atomic(&dir.join("invariants.csv"), &output::invariants_csv(o.invariants.rows(), None)?)?;
                if let Some(e) = &o.errors {
                    output::write_atomic(&dir.join("errors.csv"), &output::errors_csv(e, cfg.dim())?)?;
                }
                eprintln!("level {} (h = {}, tau = {}) done", dir.display(), cfg.mesh_size(), cfg.tau);
            }
            Err(e) => eprintln!("level {} failed: {e}", dir.display()),
        }
        Ok(())
    })?;
    output::write_atomic(&root.join("eoc.csv"), &table.to_csv()?)?;
    let rates = table.rates();
    println!("level  h            errors / eoc");
    for (l, r) in table.levels.iter().zip(&rates) {
        let errs = match &l.errors {
            Ok(e) => fmt_list(e),
            Err(msg) => format!("failed ({msg})"),
        };
        let eocs: Vec<String> = r
            .iter()
            .map(|v| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()))
            .collect();
        println!("{:>5}  {:<11.5e}  {errs}  /  {}", l.level, l.h, eocs.join(", "));
    }
    println!("wrote {}", root.join("eoc.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Converge(a) => cmd_converge(a),
        Command::VerifyClaws { dims } => experiment::claws_report(dims).map(|(_, text)| print!("{text}")),
        Command::ListIcs => {
            for (kind, about) in IC_KINDS {
                println!("{kind:<14} {about}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
