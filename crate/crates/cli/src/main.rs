use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vhsim::diagnostics::ViolationPolicy;
use vhsim::grid::Mask;
use vhsim::output::{emit_plots, write_snapshot};
use vhsim::scenario::{load_config, preset, run_scenario, ScenarioConfig, PRESET_NAMES};
use vhsim::solver::Solver;
use vhsim::spectral::{persistence_criterion, principal_eigenvalue};
use vhsim::{Error, Result};

/// Overrides the output root of `run`.
const OUTPUT_ROOT_ENV: &str = "VHSIM_OUTPUT_ROOT";
const EIGENFUNCTION_FILE: &str = "eigenfunction.csv";

#[derive(Parser)]
#[command(name = "vhsim", version, about = "Spatial vector-host epidemic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write diagnostics, snapshots and a report.
    Run {
        /// Config file, or the name of a bundled preset.
        config: String,
        /// Directory that receives `<name>/`; overrides the config and
        /// VHSIM_OUTPUT_ROOT.
        #[arg(long)]
        output_root: Option<PathBuf>,
        /// Record invariant violations and keep going instead of aborting.
        #[arg(long)]
        warn: bool,
        /// Also render plots into `<run-dir>/plots`.
        #[arg(long)]
        plots: bool,
    },
    /// Principal eigenvalue of the vector operator on the whole domain and
    /// the persistence criterion. The eigenfunction is written to
    /// `<root>/<name>/eigenfunction.csv` in the snapshot format.
    Eig {
        config: String,
        /// Solve on a coarser or finer grid than the config's.
        #[arg(long)]
        cell_size_km: Option<f64>,
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Validate a config and print it with all defaults filled in.
    Check { config: String },
    /// Render plots for an existing run directory.
    Plot { run_dir: PathBuf },
}

fn resolve(config: &str) -> Result<ScenarioConfig> {
    let path = Path::new(config);
    if path.exists() || !PRESET_NAMES.contains(&config) {
        load_config(path)
    } else {
        preset(config)
    }
}

fn output_root_for(cfg: &ScenarioConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone())
}

fn create_dir(dir: &Path) -> Result<()> {
    match std::fs::create_dir(dir) {
        Err(e) if e.kind() != std::io::ErrorKind::AlreadyExists => Err(Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn run(config: &str, output_root: Option<PathBuf>, warn: bool, plots: bool) -> Result<()> {
    let mut cfg = resolve(config)?;
    if warn {
        cfg.diagnostics.violation_policy = ViolationPolicy::Warn;
    }
    let scenario = cfg.build()?;
    let run_dir = output_root_for(&cfg, output_root).join(&cfg.name);
    let out = run_scenario(&scenario, &run_dir)?;
    let r = &out.report;
    println!("run directory: {}", out.run_dir.display());
    println!(
        "grid {}x{} (h = {} km), dt = {:.6e} months, {} steps to t = {}",
        r.grid_cells[0], r.grid_cells[1], r.cell_size_km, r.dt_months, r.steps, r.t_end_months
    );
    for e in &r.outbreaks {
        println!("outbreak at {}: onset {:.3} months", e.site, e.onset_months);
    }
    for s in &r.summary.sites {
        println!(
            "{}: S* = {:.4}, final E = {:.3e}, final I = {:.3e}",
            s.site, s.s_star, s.e_final, s.i_final
        );
    }
    println!("violations: {}", r.violations.len());
    if plots {
        let files = emit_plots(&out.run_dir)?;
        println!("plots: {}", files.len());
    }
    Ok(())
}

fn eig(config: &str, cell_size_km: Option<f64>, output_root: Option<PathBuf>) -> Result<()> {
    let mut cfg = resolve(config)?;
    if let Some(h) = cell_size_km {
        cfg = cfg.with_cell_size(h);
    }
    let sc = cfg.build()?;
    let grid = &sc.model.grid;
    let p = &sc.model.params;
    let r = principal_eigenvalue(grid, &p.diffusivity, &p.birth_rate, &Mask::full(grid), &cfg.spectral)?;
    let pc = persistence_criterion(&p.birth_rate, p.diffusivity.max())?;
    println!("lambda1 = {:.10}", r.lambda1);
    println!("iterations = {}", r.iterations);
    println!("residual = {:.3e}", r.residual);
    println!("persistence_lhs = {}", pc.lhs);
    println!("persistence_rhs = {}", pc.rhs);
    println!("persistent = {}", pc.satisfied);
    let dir = output_root_for(&cfg, output_root).join(&cfg.name);
    create_dir(&dir)?;
    let path = dir.join(EIGENFUNCTION_FILE);
    write_snapshot(&path, grid, &r.eigenfunction, 0.0)?;
    println!("eigenfunction = {}", path.display());
    Ok(())
}

fn check(config: &str) -> Result<()> {
    let cfg = resolve(config)?;
    let sc = cfg.build()?;
    let solver = Solver::new(&sc.model, &sc.initial, cfg.solver.clone())?;
    let l = solver.limits();
    print!("{}", cfg.to_toml_string()?);
    println!(
        "# ok: {}x{} cells, {} sites, dt = {:.6e} months (limits: advection {:.3e}, diffusion {:.3e}, reaction {:.3e})",
        sc.model.grid.nx(),
        sc.model.grid.ny(),
        sc.model.sites.len(),
        solver.dt(),
        l.advection,
        l.diffusion,
        l.reaction
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            output_root,
            warn,
            plots,
        } => run(&config, output_root, warn, plots),
        Command::Eig {
            config,
            cell_size_km,
            output_root,
        } => eig(&config, cell_size_km, output_root),
        Command::Check { config } => check(&config),
        Command::Plot { run_dir } => emit_plots(&run_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
