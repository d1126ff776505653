use std::io::{Read as _, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fracperc::addressing::KadicMode;
use fracperc::bounds::{constants_report, ConstantsQuery};
use fracperc::density::{density_of, direct_density_sum, fiber_value, support, PiecewiseDensity};
use fracperc::experiments::{feasibility, run_suite, write_outputs, ExperimentConfig, RunOptions};
use fracperc::geometry::Direction;
use fracperc::percolation::{count_cells, generate, z_estimate, PercolationParams, PercolationTree};
use fracperc::rng::Stream;
use fracperc::{treefile, Error};

/// Fractal percolation: simulate realizations, compute projected densities,
/// evaluate the constants of the regularity bounds, and run the Monte Carlo
/// experiment suite.
///
/// Exit status: 0 on success, 1 when a check or gate fails, 2 on usage
/// errors, infeasible requests, or unreadable inputs.
#[derive(Parser)]
#[command(name = "fracperc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a realization and write it as a tree file.
    Generate(GenerateArgs),
    /// Projected density of a tree at some level.
    Density(DensityArgs),
    /// Print the constants of the regularity bounds as JSON.
    Constants(ConstantsArgs),
    /// Structural invariants and oracle cross-checks on a tree.
    Verify(VerifyArgs),
    /// Run the experiment suite described by a TOML config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ParamArgs {
    /// Subdivision factor (k >= 2).
    #[arg(long)]
    k: u32,
    /// Retention probability, strictly between 0 and 1.
    #[arg(long)]
    p: f64,
}

#[derive(Args)]
struct TreeSource {
    /// Read the tree from this file (`-` for stdin) instead of generating it.
    #[arg(long, conflicts_with_all = ["k", "p", "depth", "seed"])]
    tree: Option<PathBuf>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse to generate when (k^2 p)^depth exceeds this.
    #[arg(long, default_value_t = 5e7)]
    max_cells: f64,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    seed: u64,
    /// Tree file to write; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Refuse when (k^2 p)^depth exceeds this.
    #[arg(long, default_value_t = 5e7)]
    max_cells: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strict,
    LeftClosed,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    source: TreeSource,
    /// Level n of the density (defaults to the tree depth).
    #[arg(long)]
    level: Option<u32>,
    /// Direction: `horizontal`, `vertical`, radians, or `pi/4`-style.
    #[arg(long, allow_hyphen_values = true)]
    theta: Direction,
    /// Evaluate at this point and print the value.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    /// How axial densities treat k-adic points.
    #[arg(long, value_enum, default_value = "strict")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Number of evenly spaced CSV sample points.
    #[arg(long, default_value_t = 1001)]
    points: usize,
    /// Density (or CSV) file to write; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ConstantsArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Angle margin delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Level n for thresholds and grid mesh.
    #[arg(long, default_value_t = 6)]
    n: u32,
    /// Length-scale exponent N.
    #[arg(long = "big-n", default_value_t = 20)]
    big_n: u32,
    #[arg(long, default_value_t = 1e-12)]
    epsilon: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: TreeSource,
    /// Random oracle cross-checks; 0 runs the structural checks only.
    #[arg(long, default_value_t = 200)]
    samples: u32,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Print the feasibility estimate and stop.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (0: all cores). Reports do not depend on this.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory, overriding the config.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Failure of a command: exit status plus message.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(2, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn params(k: u32, p: f64) -> Result<PercolationParams, Failure> {
    let params = PercolationParams::new(k, p)?;
    if !params.projection_regime() {
        eprintln!("warning: pk = {} <= 1 (no absolutely continuous projections expected)", params.pk());
    }
    if !params.supercritical_branching() {
        eprintln!("warning: k^2 p = {} <= 1 (the limit set is almost surely empty)", params.mean_offspring());
    }
    Ok(params)
}

fn generate_checked(params: PercolationParams, seed: u64, depth: u32, max_cells: f64) -> Result<PercolationTree, Failure> {
    let expected = params.mean_offspring().powi(depth as i32);
    if expected > max_cells {
        return Err(Failure(2, format!("infeasible: about {expected:.3e} squares at depth {depth} exceed --max-cells {max_cells:.3e}")));
    }
    Ok(generate(params, seed, depth)?)
}

fn read_input(path: &PathBuf) -> Result<String, Failure> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| Failure(2, e.to_string()))?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).map_err(|e| Failure(2, format!("{}: {e}", path.display())))
    }
}

fn obtain_tree(source: &TreeSource) -> Result<PercolationTree, Failure> {
    if let Some(path) = &source.tree {
        return Ok(treefile::from_str(&read_input(path)?)?);
    }
    match (source.k, source.p, source.depth, source.seed) {
        (Some(k), Some(p), Some(depth), Some(seed)) => generate_checked(params(k, p)?, seed, depth, source.max_cells),
        _ => Err(Failure(2, "give either --tree FILE or all of --k, --p, --depth, --seed".into())),
    }
}

fn emit(output: &Option<PathBuf>, body: &str) -> CmdResult {
    match output {
        Some(path) => std::fs::write(path, body).map_err(|e| Failure(2, format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(|e| Failure(2, e.to_string())),
    }
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    let params = params(args.params.k, args.params.p)?;
    let tree = generate_checked(params, args.seed, args.depth, args.max_cells)?;
    emit(&args.output, &treefile::to_string(&tree))?;
    // Summary goes to stderr when the tree itself is on stdout.
    let mut summary = String::from("level\tcells\tz_estimate\n");
    for m in 0..=tree.max_depth() {
        summary.push_str(&format!("{m}\t{}\t{}\n", count_cells(&tree, m)?, z_estimate(&tree, m)?));
    }
    if args.output.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn cmd_density(args: DensityArgs) -> CmdResult {
    let tree = obtain_tree(&args.source)?;
    let n = args.level.unwrap_or(tree.max_depth());
    let dens = density_of(&tree, n, args.theta)?;
    let params = tree.params();
    let cells = count_cells(&tree, n)? as f64;
    let expected = cells / (params.p().powi(n as i32) * (params.k() as f64).powi(2 * n as i32));
    let info = |line: String| {
        if args.output.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    };
    info(format!("mass {}", dens.mass()));
    info(format!("p^-n k^-2n #E_n {expected}"));
    if let Some(x) = args.x {
        let mode = match args.mode {
            Mode::Strict => KadicMode::Strict,
            Mode::LeftClosed => KadicMode::LeftClosed,
        };
        let value = dens.evaluate_with(x, mode)?;
        info(format!("value {value}"));
    }
    let body = match args.format {
        Format::Json => {
            let mut s = dens.to_json();
            s.push('\n');
            s
        }
        Format::Csv => {
            let (lo, hi) = support(args.theta);
            let m = args.points.max(2);
            let xs: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
            dens.to_csv(&xs, Some(tree.seeds().master()))
        }
    };
    emit(&args.output, &body)
}

fn cmd_constants(args: ConstantsArgs) -> CmdResult {
    let params = params(args.params.k, args.params.p)?;
    let query = ConstantsQuery {
        delta: args.delta,
        n: args.n,
        big_n: args.big_n,
        epsilon: args.epsilon,
    };
    let report = constants_report(&params, &query)?;
    emit(&None, &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")))
}

struct Checks {
    failed: usize,
}

impl Checks {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {name}{}", if ok { "PASS" } else { "FAIL" }, if detail.is_empty() { detail } else { format!(": {detail}") });
    }
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let mut checks = Checks { failed: 0 };
    let tree = match &args.source.tree {
        Some(path) => match treefile::from_str(&read_input(path)?) {
            Ok(tree) => tree,
            // A structurally broken file is a failed check, not a usage error.
            Err(e @ (Error::Orphan { .. } | Error::InvalidAddress(_))) => {
                checks.record("structure", false, e.to_string());
                return Err(Failure(1, "1 check failed".into()));
            }
            Err(e) => return Err(e.into()),
        },
        None => obtain_tree(&args.source)?,
    };
    checks.record("structure", true, format!("{} levels, parents present, canonical order", tree.max_depth() + 1));

    let params = tree.params();
    let regenerated = fracperc::percolation::generate_from(tree.realization().clone(), tree.max_depth())?;
    let same = regenerated == tree;
    checks.record("draws", same, if same { String::new() } else { "cells differ from the seed's draws".into() });

    let counts_ok = (1..=tree.max_depth()).all(|m| {
        let parents = tree.level(m - 1).unwrap();
        (0..parents.len()).map(|i| tree.children(m - 1, i).len()).sum::<usize>() == tree.level(m).unwrap().len()
    });
    checks.record("children", counts_ok, String::new());

    if args.samples > 0 {
        let mut stream = Stream::new(tree.seeds().master(), &[0x7665_7269_6679]);
        let (mut worst_direct, mut worst_lazy, mut worst_mass) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..args.samples {
            let n = stream.index(tree.max_depth() as usize + 1) as u32;
            let direction = match stream.index(4) {
                0 => "horizontal".parse().unwrap(),
                1 => "vertical".parse().unwrap(),
                _ => Direction::oblique(stream.range(1e-3, std::f64::consts::FRAC_PI_2 - 1e-3))?,
            };
            let (lo, hi) = support(direction);
            let x = stream.range(lo, hi);
            let dens: PiecewiseDensity = density_of(&tree, n, direction)?;
            let value = match dens.evaluate(x) {
                Ok(v) => v,
                Err(Error::KadicPoint { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let direct = direct_density_sum(&tree, n, direction, x)?;
            let lazy = fiber_value(tree.realization(), direction, x, n, KadicMode::Strict)?;
            let scale = value.abs().max(1.0);
            worst_direct = worst_direct.max((value - direct).abs() / scale);
            worst_lazy = worst_lazy.max((value - lazy).abs() / scale);
            let expected = count_cells(&tree, n)? as f64 / (params.p().powi(n as i32) * (params.k() as f64).powi(2 * n as i32));
            worst_mass = worst_mass.max((dens.mass() - expected).abs() / expected.max(1.0));
        }
        checks.record("density vs direct chord sum", worst_direct < 1e-9, format!("max relative error {worst_direct:.2e}"));
        checks.record("density vs lazy fiber", worst_lazy < 1e-9, format!("max relative error {worst_lazy:.2e}"));
        checks.record("mass", worst_mass < 1e-9, format!("max relative error {worst_mass:.2e}"));
    }
    if checks.failed > 0 {
        return Err(Failure(1, format!("{} check(s) failed", checks.failed)));
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(&args.config)?;
    if !config.params.projection_regime() || !config.params.supercritical_branching() {
        eprintln!("warning: pk = {}, k^2 p = {}", config.params.pk(), config.params.mean_offspring());
    }
    if args.dry_run {
        let f = feasibility(&config);
        println!("{}", serde_json::to_string_pretty(&f).expect("feasibility serializes"));
        return if f.feasible { Ok(()) } else { Err(Failure(2, "infeasible config".into())) };
    }
    if let Some(dir) = args.output {
        config.output_dir = Some(dir);
    }
    let started = std::time::Instant::now();
    let report = run_suite(&config, RunOptions { workers: args.workers })?;
    let elapsed = started.elapsed().as_secs_f64();
    match &config.output_dir {
        Some(dir) => {
            for path in write_outputs(&report, dir)? {
                eprintln!("wrote {}", path.display());
            }
            let timing = serde_json::json!({ "seconds": elapsed, "workers": args.workers });
            std::fs::write(dir.join("timing.json"), format!("{timing}\n")).map_err(|e| Failure(2, e.to_string()))?;
        }
        None => print!("{}", report.to_json()),
    }
    for gate in &report.gates {
        eprintln!(
            "{} [{}] {}: {} {} {}",
            if gate.passed { "PASS" } else { "FAIL" },
            gate.section,
            gate.name,
            gate.observed,
            gate.comparison,
            gate.threshold
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure(1, "gate failure".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Density(a) => cmd_density(a),
        Command::Constants(a) => cmd_constants(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
