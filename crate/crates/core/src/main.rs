use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sector_ks::config::{parse_config, preset, SimConfig};
use sector_ks::experiments::{
    critical_mass_bisect, monitor_extensibility, restriction_experiment, tm_family_sweep, Family,
    RestrictionSpec, SweepSpec,
};
use sector_ks::fields::{write_snapshot, Field};
use sector_ks::geometry::{DomainSpec, SectorMesh};
use sector_ks::initial::InitialData;
use sector_ks::radial1d::RadialMesh;
use sector_ks::solver2d::{self, snapshot_times, trajectory_csv, OutcomeKind, RunError};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "sector-ks", version, about = "Keller-Segel simulations on circular sectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run(ConfigArgs),
    /// Bracket the critical mass by bisection over the configured family.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 12)]
        budget: usize,
        /// Seeds and target width as multiples of 4 theta.
        #[arg(long, default_value_t = 0.5)]
        lower: f64,
        #[arg(long, default_value_t = 1.5)]
        upper: f64,
        #[arg(long, default_value_t = 0.4)]
        width: f64,
    },
    /// Compare a sector run on restricted radial data with the radial solver.
    CompareRadial {
        #[command(flatten)]
        config: ConfigArgs,
        /// Disc mass; defaults to (2 pi / theta) times the configured mass.
        #[arg(long)]
        disc_mass: Option<f64>,
        /// Radial cells of the oracle; defaults to the sector's rings.
        #[arg(long)]
        radial_nr: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        radial_grading: f64,
        /// Comparison times (comma separated); defaults to the snapshot grid.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Evaluate the Trudinger-Moser gap over vertex-centred bubbles.
    TmSweep {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long, default_value_t = 20)]
        members: usize,
        #[arg(long, default_value_t = 3.0)]
        eps_max: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps_min: f64,
        /// Angle in the gap constant; defaults to the smallest interior angle.
        #[arg(long)]
        theta_eff: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a mesh summary.
    MeshInfo {
        #[command(flatten)]
        mesh: MeshArgs,
        /// Also list every cell.
        #[arg(long)]
        cells: bool,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file, or the name of a bundled preset.
    #[arg(long)]
    config: String,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    radius: f64,
    #[arg(long)]
    nr: usize,
    #[arg(long)]
    nphi: usize,
    #[arg(long, default_value_t = 1.0)]
    grading: f64,
}

enum Failure {
    Config(String),
    Solver(String),
    Other(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// Appends timestamped lines to `run.log` in the output directory.
struct Log {
    file: fs::File,
    start: Instant,
}

impl Log {
    fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let file = fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        Ok(Self { file, start: Instant::now() })
    }

    fn line(&mut self, msg: &str) {
        let _ = writeln!(self.file, "[{:>10.3}s] {msg}", self.start.elapsed().as_secs_f64());
    }
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, Failure> {
    let text = match preset(&args.config) {
        Some(text) => text.to_string(),
        None => fs::read_to_string(&args.config)
            .map_err(|e| Failure::Config(format!("cannot read config `{}`: {e}", args.config)))?,
    };
    let mut config = parse_config(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn cmd_run(args: &ConfigArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    // Build everything that can fail on bad input before touching the disk.
    let mesh = config.mesh().map_err(|e| Failure::Config(e.to_string()))?;
    config.initial_fields(mesh).map_err(|e| Failure::Config(e.to_string()))?;
    config.scheme.validate().map_err(|e| Failure::Config(e.to_string()))?;

    let dir = config.output.dir.clone();
    let mut log = Log::open(&dir)?;
    log.line(&format!("run: {} cells, kind {}, mass {:.16e}", config.nr * config.nphi, config.init.kind(), config.mass));
    fs::write(dir.join("config.toml"), config.to_toml())?;
    let (mesh, outcome) = solver2d::run(&config).map_err(|e| match e {
        RunError::Scheme(e) => Failure::Config(e.to_string()),
        other => Failure::Other(other.to_string()),
    })?;

    fs::write(dir.join("diagnostics.csv"), trajectory_csv(&outcome.trajectory))?;
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    for (k, (t, u, v)) in outcome.snapshots.iter().enumerate() {
        let text = snapshot_text(&mesh, u, v, *t)?;
        fs::write(snap_dir.join(format!("snap_{k:04}.txt")), text)?;
    }
    fs::write(dir.join("final.txt"), snapshot_text(&mesh, &outcome.final_u, &outcome.final_v, outcome.t_final)?)?;

    let ext = monitor_extensibility(&outcome);
    let mut summary = String::new();
    let _ = writeln!(summary, "outcome {}", outcome.kind);
    let _ = writeln!(summary, "t_final {:.16e}", outcome.t_final);
    let _ = writeln!(summary, "steps {} rejected {}", outcome.steps, outcome.rejected_steps);
    if let Some(p) = outcome.blowup_location {
        let _ = writeln!(summary, "blowup_location r {:.16e} phi {:.16e}", p.r, p.phi);
    }
    let _ = writeln!(summary, "max_mass_drift {:.16e}", outcome.max_mass_drift());
    let _ = writeln!(summary, "ext_initial {:.16e} ext_final {:.16e} flag {:?}", ext.initial, ext.final_value, ext.flag);
    if let Some(f) = &outcome.failure {
        let _ = writeln!(summary, "failure {f}");
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    for line in summary.lines() {
        log.line(line);
    }
    if outcome.kind == OutcomeKind::SolverFailure {
        return Err(Failure::Solver(outcome.failure.unwrap_or_else(|| "solver failure".into())));
    }
    Ok(())
}

fn snapshot_text(mesh: &Arc<SectorMesh>, u: &[f64], v: &[f64], t: f64) -> Result<String, Failure> {
    let uf = Field::new(mesh.clone(), u.to_vec()).map_err(|e| Failure::Other(e.to_string()))?;
    let vf = Field::new(mesh.clone(), v.to_vec()).map_err(|e| Failure::Other(e.to_string()))?;
    write_snapshot(&uf, &vf, t).map_err(|e| Failure::Other(e.to_string()))
}

fn cmd_sweep(args: &ConfigArgs, budget: usize, lower: f64, upper: f64, width: f64) -> Result<(), Failure> {
    let config = load_config(args)?;
    let mesh = config.mesh().map_err(|e| Failure::Config(e.to_string()))?;
    if !(0.0 < lower && lower < upper && width > 0.0) {
        return Err(Failure::Config(format!("need 0 < lower < upper and width > 0 (got {lower}, {upper}, {width})")));
    }
    let m = 4.0 * config.domain.theta();
    let spec = SweepSpec {
        mesh,
        family: Family { data: config.init, signal: config.signal },
        scheme: config.scheme.clone(),
        budget,
        seed_lower: lower * m,
        seed_upper: upper * m,
        target_width: width * m,
        record_every: config.output.csv_every,
    };
    let dir = config.output.dir.clone();
    let mut log = Log::open(&dir)?;
    log.line(&format!("sweep: budget {budget}, seeds {:.6} {:.6}", spec.seed_lower, spec.seed_upper));
    let result = critical_mass_bisect(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let csv = result.csv();
    fs::write(dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    for run in &result.runs {
        log.line(&format!("mass {:.16e} -> {} at t {:.6e}", run.mass, run.kind(), run.outcome.t_final));
    }
    if result.runs.iter().any(|r| r.kind() == OutcomeKind::SolverFailure) {
        return Err(Failure::Solver(result.note.unwrap_or_else(|| "solver failure".into())));
    }
    Ok(())
}

fn cmd_compare(
    args: &ConfigArgs,
    disc_mass: Option<f64>,
    radial_nr: Option<usize>,
    radial_grading: f64,
    times: &[f64],
) -> Result<(), Failure> {
    let config = load_config(args)?;
    let mesh = config.mesh().map_err(|e| Failure::Config(e.to_string()))?;
    let theta = config.domain.theta();
    let radial = match radial_nr {
        Some(nr) => RadialMesh::new(config.domain.radius(), nr, radial_grading),
        None => Ok(RadialMesh::matching(&mesh)),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    let concentration = match config.init {
        InitialData::RestrictedRadial { concentration } => concentration,
        _ => return Err(Failure::Config("compare-radial needs initial.kind = \"restricted_radial\"".into())),
    };
    let output_times = if times.is_empty() {
        snapshot_times(config.output.snapshot_interval, config.scheme.t_end)
    } else {
        times.to_vec()
    };
    let spec = RestrictionSpec {
        sector: mesh.clone(),
        radial: Arc::new(radial),
        disc_mass: disc_mass.unwrap_or(2.0 * PI / theta * config.mass),
        concentration,
        scheme: config.scheme.clone(),
        output_times,
    };
    let dir = config.output.dir.clone();
    let mut log = Log::open(&dir)?;
    log.line(&format!("compare-radial: disc mass {:.16e}", spec.disc_mass));
    let report = restriction_experiment(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let mut out = String::from("t,linf,relative\n");
    for d in &report.diffs {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", d.t, d.linf, d.relative);
    }
    let _ = writeln!(out, "# sector {} at t {:.16e}", report.sector.kind, report.sector.t_final);
    let _ = writeln!(out, "# radial {} at t {:.16e}", report.radial.kind, report.radial.t_final);
    let _ = writeln!(out, "# sector mass {:.16e}", report.sector_mass);
    let _ = writeln!(out, "# same outcome {}", report.same_kind());
    fs::write(dir.join("compare.csv"), &out)?;
    print!("{out}");
    for line in out.lines().filter(|l| l.starts_with('#')) {
        log.line(line.trim_start_matches("# "));
    }
    if report.sector.kind == OutcomeKind::SolverFailure || report.radial.kind == OutcomeKind::SolverFailure {
        return Err(Failure::Solver("solver failure in comparison".into()));
    }
    Ok(())
}

fn build_mesh(m: &MeshArgs) -> Result<SectorMesh, Failure> {
    let domain = DomainSpec::new(m.theta, m.radius).map_err(|e| Failure::Config(e.to_string()))?;
    SectorMesh::new(domain, m.nr, m.nphi, m.grading).map_err(|e| Failure::Config(e.to_string()))
}

fn cmd_tm(m: &MeshArgs, members: usize, eps_max: f64, eps_min: f64, theta_eff: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let mesh = Arc::new(build_mesh(m)?);
    if !(eps_max > 0.0 && eps_min > 0.0 && members >= 1) {
        return Err(Failure::Config("need positive widths and at least one member".into()));
    }
    let theta_eff = theta_eff.unwrap_or_else(|| mesh.domain().min_interior_angle());
    let sweep = tm_family_sweep(mesh, members, eps_max, eps_min, theta_eff).map_err(|e| Failure::Config(e.to_string()))?;
    let csv = sweep.csv();
    if let Some(dir) = out {
        let mut log = Log::open(dir)?;
        fs::write(dir.join("tm_sweep.csv"), &csv)?;
        log.line(&format!("tm-sweep: {members} members, theta_eff {theta_eff:.16e}"));
    }
    print!("{csv}");
    Ok(())
}

fn cmd_mesh_info(m: &MeshArgs, cells: bool) -> Result<(), Failure> {
    let mesh = build_mesh(m)?;
    let summary = mesh.summary();
    if cells {
        print!("{summary}");
    } else {
        for line in summary.lines().take(3) {
            println!("{line}");
        }
    }
    println!("area {:.16e}", mesh.total_area());
    println!("cells {}", mesh.n_cells());
    println!("min_interior_angle {:.16e}", mesh.domain().min_interior_angle());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { config, budget, lower, upper, width } => cmd_sweep(config, *budget, *lower, *upper, *width),
        Command::CompareRadial { config, disc_mass, radial_nr, radial_grading, times } => {
            cmd_compare(config, *disc_mass, *radial_nr, *radial_grading, times)
        }
        Command::TmSweep { mesh, members, eps_max, eps_min, theta_eff, out } => {
            cmd_tm(mesh, *members, *eps_max, *eps_min, *theta_eff, out.as_deref())
        }
        Command::MeshInfo { mesh, cells } => cmd_mesh_info(mesh, *cells),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
