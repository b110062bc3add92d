use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exitbound::bench::{self, BenchConfig, Case, Method};
use exitbound::conic::SolverSettings;
use exitbound::escape::{self, baseline_bound, build_escape_in, build_escape_out, GSpec};
use exitbound::conic::ClarabelBackend;
use exitbound::geometry::{reduce_affine, EnclosureMode, OriginClass};
use exitbound::io::SystemFile;
use exitbound::linalg::stability_margin;
use exitbound::oracle::{self, escape_time, EscapeOutcome, Trajectory, DEFAULT_GRID, DEFAULT_TOL};
use exitbound::switched::{self, prepare, simulate, DEFAULT_EVENT_CAP};
use exitbound::Error;

/// Certified upper bounds on exit times of stable affine systems.
#[derive(Parser)]
#[command(name = "exitbound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exit-time model for a system and report the bounds.
    Bound(BoundArgs),
    /// Ground-truth exit time of the trajectory from x0.
    Oracle(OracleArgs),
    /// Simulate a switched affine system.
    Simulate(SimulateArgs),
    /// Random-matrix comparison of all methods on the two box fixtures.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    In,
    Out,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum GArg {
    One,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnclosureArg {
    Ball,
    Vertices,
}

impl From<EnclosureArg> for EnclosureMode {
    fn from(e: EnclosureArg) -> Self {
        match e {
            EnclosureArg::Ball => EnclosureMode::Ball,
            EnclosureArg::Vertices => EnclosureMode::Vertices,
        }
    }
}

fn g_spec(g: GArg, gamma: Option<f64>) -> GSpec {
    match g {
        GArg::One => GSpec::One,
        GArg::Log => GSpec::Log(gamma),
    }
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "one")]
    g: GArg,
    /// Decay rate for `--g log`; defaults to σ(A)/2.
    #[arg(long)]
    gamma: Option<f64>,
    /// Overrides the enclosure of box regions.
    #[arg(long, value_enum)]
    enclosure: Option<EnclosureArg>,
    /// Start point (comma separated); defaults to `x0` of the system file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Also compute the Lyapunov-equation baseline.
    #[arg(long)]
    baseline: bool,
    /// Write the certificate as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Dump (t, x, φ) samples as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    trace_samples: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
    event_cap: usize,
    #[arg(long, value_enum, default_value = "log")]
    g: GArg,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    enclosure: Option<EnclosureArg>,
    /// Trajectory CSV (t, x…, mode).
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
    /// Events CSV (k, t_k, from_mode, to_mode).
    #[arg(long, default_value = "events.csv")]
    events: PathBuf,
    #[arg(long, default_value_t = 50)]
    samples_per_segment: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subset of in_one,in_log,out_one,out_log,baseline.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "ball")]
    enclosure: EnclosureArg,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; wall-clock columns are left empty above 1.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write scatter plots as SVG.
    #[arg(long)]
    svg: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) | Error::InvalidCertificate(_) | Error::Numerical(_) => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

fn load(path: &Path, enclosure: Option<EnclosureArg>) -> exitbound::Result<SystemFile> {
    let mut f = SystemFile::load(path)?;
    if let Some(e) = enclosure {
        f.override_enclosure(e.into());
    }
    Ok(f)
}

fn start_point(file: &SystemFile, cli: Option<Vec<f64>>) -> exitbound::Result<Option<Vec<f64>>> {
    match cli {
        Some(x) if x.len() != file.n => {
            Err(Error::Config(format!("--x0 has {} entries, system has dimension {}", x.len(), file.n)))
        }
        Some(x) => Ok(Some(x)),
        None => file.x0(),
    }
}

fn create(path: &Path) -> exitbound::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn run_bound(args: BoundArgs) -> exitbound::Result<()> {
    let file = load(&args.system, args.enclosure)?;
    let sys = file.affine()?;
    let x0 = start_point(&file, args.x0)?;
    let (a, region, x_bar) = reduce_affine(&sys.a, &sys.b, &sys.region)?;
    let origin = region.classify_origin();
    let g = g_spec(args.g, args.gamma).resolve(&a)?;
    let problem = match (args.model, origin) {
        (_, OriginClass::Boundary) => {
            return Err(Error::Precondition("the equilibrium lies on the region boundary".into()))
        }
        (ModelArg::In, _) | (ModelArg::Auto, OriginClass::Interior) => build_escape_in(&a, &region, g)?,
        (ModelArg::Out, _) | (ModelArg::Auto, OriginClass::Exterior) => build_escape_out(&a, &region, g)?,
    };
    println!("sigma(A)        {}", stability_margin(&a)?);
    println!("origin          {origin:?}");
    println!("model           {:?}", problem.kind);
    println!("G               {:?}", g);
    let settings = SolverSettings::default();
    let cert = escape::solve_problem(&problem, &settings, &ClarabelBackend)
        .map_err(|f| Error::Solver(f.to_string()))?;
    let worst_residual = cert.residuals.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    println!("status          {:?}", cert.solver_status);
    println!("r               {}", cert.r);
    println!("min residual    {worst_residual:e}");
    println!("solve time [s]  {}", cert.solve_time);
    println!("bound (all x0)  {}", cert.bound_worst_case());
    let z0: Option<Vec<f64>> = x0.as_ref().map(|x| x.iter().zip(&x_bar).map(|(a, b)| a - b).collect());
    if let Some(z) = &z0 {
        if !region.contains(z, oracle::START_TOL)? {
            return Err(Error::Config("x0 lies outside the region".into()));
        }
        println!("bound (x0)      {}", cert.bound_at(z)?);
    }
    if args.baseline {
        let b = baseline_bound(&a, &region, &settings)?;
        println!("baseline (all)  {}", b.worst_case);
        if let Some(z) = &z0 {
            println!("baseline (x0)   {}", b.at(z));
        }
    }
    if let Some(path) = args.out {
        std::fs::write(&path, cert.to_json()?)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_oracle(args: OracleArgs) -> exitbound::Result<()> {
    let file = SystemFile::load(&args.system)?;
    let sys = file.affine()?;
    let x0 = start_point(&file, args.x0)?.ok_or_else(|| Error::Config("no x0 given".into()))?;
    let (a, region, x_bar) = reduce_affine(&sys.a, &sys.b, &sys.region)?;
    let z0: Vec<f64> = x0.iter().zip(&x_bar).map(|(a, b)| a - b).collect();
    let tr = Trajectory::new(a, z0)?;
    let outcome = escape_time(&tr, &region, args.horizon, args.grid, DEFAULT_TOL)?;
    match outcome {
        EscapeOutcome::ExitsAt { t, crossing_index } => println!("exits at t = {t} through ellipsoid {crossing_index}"),
        EscapeOutcome::NeverExits { .. } => println!("no exit within horizon {}", args.horizon),
    }
    if let Some(path) = args.trace {
        let mut points = oracle::sample_trace(&tr, &region, args.horizon, args.trace_samples)?;
        for p in &mut points {
            for (x, b) in p.x.iter_mut().zip(&x_bar) {
                *x += b;
            }
        }
        oracle::write_trace_csv(&points, create(&path)?)?;
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> exitbound::Result<()> {
    let file = load(&args.system, args.enclosure)?;
    let sys = file.switched()?;
    let x0 = start_point(&file, args.x0)?.ok_or_else(|| Error::Config("no x0 given".into()))?;
    let prepared = prepare(&sys, g_spec(args.g, args.gamma), &SolverSettings::default())?;
    let trace = simulate(&prepared, &x0, args.horizon, args.event_cap)?;
    println!("status    {:?}", trace.status);
    println!("events    {}", trace.events.len());
    println!("segments  {}", trace.segments.len());
    switched::write_trace_csv(&prepared, &trace, args.samples_per_segment, create(&args.trace)?)?;
    switched::write_events_csv(&trace, create(&args.events)?)?;
    Ok(())
}

fn run_bench(args: BenchArgs) -> exitbound::Result<()> {
    let mut cfg = BenchConfig::new(args.count, args.dim, args.seed);
    if let Some(names) = args.methods {
        cfg.methods = names.iter().map(|s| s.parse()).collect::<exitbound::Result<BTreeSet<Method>>>()?;
    }
    cfg.enclosure = args.enclosure.into();
    cfg.jobs = args.jobs.max(1);
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let records = bench::run_benchmark(&cfg)?;
    let rows = bench::summarize(&records);
    let dir = &args.out_dir;
    bench::write_records_csv(&records, create(&dir.join("records.csv"))?)?;
    bench::write_summary_csv(&rows, create(&dir.join("summary.csv"))?)?;
    bench::write_scatter_csv(&records, Case::I, create(&dir.join("scatter_caseI.csv"))?)?;
    bench::write_scatter_csv(&records, Case::II, create(&dir.join("scatter_caseII.csv"))?)?;
    if args.svg {
        for (case, name) in [(Case::I, "scatter_caseI.svg"), (Case::II, "scatter_caseII.svg")] {
            let path = dir.join(name);
            std::fs::write(&path, bench::scatter_svg(&records, case))
                .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    for r in &rows {
        println!(
            "case {:<2} {:<8} records {:>3} failed {:>2} median rho {} median time {}",
            r.case.to_string(),
            r.method.name(),
            r.records,
            r.failed,
            r.rho_median.map_or("-".into(), |v| format!("{v:.3e}")),
            r.time_median.map_or("-".into(), |v| format!("{v:.3e}")),
        );
    }
    let violations: usize = rows.iter().map(|r| r.soundness_violations).sum();
    if violations > 0 {
        return Err(Error::Invariant(format!("{violations} bounds fell below the oracle exit time")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bound(a) => run_bound(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
