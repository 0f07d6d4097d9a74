//! Command-line interface.
//!
//! Exit codes: 0 feasible (or success), 2 infeasible, 1 runtime error,
//! 64 bad usage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::assignment::cluster_capacity;
use crate::bench::{records_jsonl, run_benchmark, summary_table, ClassifyConfig, ReferenceTable};
use crate::clustering::{cluster_instance, select_cluster_count, ElbowPoint, MembershipMatrix};
use crate::instance::{load_dir, load_instance, Instance, Point};
use crate::pipeline::{
    clustered, default_candidates, fcm_config, make_problem, run, PipelineConfig, PipelineError,
    PipelineReport, Strategy, WeightScheme,
};
use crate::plot::render_svg;
use crate::routing_qubo::build_qubo;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Directory searched for instance files given by bare name.
pub const DATA_DIR_ENV: &str = "HCVRP_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "hcvrp", version, about = "Cluster-first hybrid CVRP solver with QUBO routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance and write the pipeline report as JSON.
    Solve(SolveArgs),
    /// Cluster the customers and print memberships and the hard assignment.
    Cluster(ClusterArgs),
    /// Write a routing QUBO in text form.
    QuboDump(DumpArgs),
    /// Draw the routes of a saved report as SVG.
    Plot(PlotArgs),
    /// Run strategies and seeds over several instances and report gaps.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    H2s,
    H3s,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::H2s => Strategy::H2s,
            StrategyArg::H3s => Strategy::H3s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightArg {
    Uniform,
    Balanced,
}

/// Settings shared by every command that runs a pipeline. Unset flags fall
/// back to the `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Args)]
struct RunOptions {
    /// key=value file (keys: strategy, seed, reads, sweeps, trucks, repair,
    /// weights, candidates, depot_return, data_dir).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Annealing reads per sub-problem.
    #[arg(long)]
    reads: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    /// Override the fleet size from the instance file.
    #[arg(long)]
    trucks: Option<usize>,
    /// Repair infeasible samples greedily (reported as repaired).
    #[arg(long)]
    repair: bool,
    #[arg(long, value_enum)]
    weights: Option<WeightArg>,
    /// Comma-separated H3S cluster counts, e.g. 5,10,15,20.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<usize>>,
    /// Drop the explicit return-to-depot penalty.
    #[arg(long)]
    no_depot_return: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    path: PathBuf,
    #[command(flatten)]
    run: RunOptions,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG route map.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    path: PathBuf,
    #[command(flatten)]
    run: RunOptions,
    /// Fixed cluster count; defaults to the truck count for h2s and the elbow
    /// choice for h3s.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Level {
    Cvrp,
    Tsp,
}

#[derive(Debug, Args)]
struct DumpArgs {
    path: PathBuf,
    #[command(flatten)]
    run: RunOptions,
    /// `cvrp`: the centroid-level CVRP of h3s; `tsp`: the TSP of one cluster.
    #[arg(long, value_enum, default_value = "tsp")]
    level: Level,
    /// Cluster whose TSP to dump.
    #[arg(long, default_value_t = 0)]
    cluster: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    report: PathBuf,
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Instance files or directories; defaults to the data directory.
    paths: Vec<PathBuf>,
    #[command(flatten)]
    run: RunOptions,
    /// Reference costs, `name cost optimal_flag` per line.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "h2s,h3s")]
    strategies: Vec<StrategyArg>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Write records as JSON lines here.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Write the full benchmark output (records, summary) as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolved {
    config: PipelineConfig,
    trucks: Option<usize>,
    data_dir: Option<PathBuf>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("config key '{key}': cannot parse '{value}'"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("config key '{key}': expected a boolean, got '{value}'"),
    }
}

fn resolve(opts: &RunOptions, default_strategy: Strategy) -> Result<Resolved> {
    let file = match &opts.config {
        Some(path) => parse_config_file(
            &std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?,
        )?,
        None => BTreeMap::new(),
    };
    let mut config = PipelineConfig {
        strategy: default_strategy,
        ..PipelineConfig::default()
    };
    let mut trucks = None;
    let mut data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    for (key, value) in &file {
        match key.as_str() {
            "strategy" => config.strategy = value.parse().map_err(|e: String| anyhow!(e))?,
            "seed" => config.seed = parse_value(key, value)?,
            "reads" => config.sampler.num_reads = parse_value(key, value)?,
            "sweeps" => config.sampler.sweeps_per_read = parse_value(key, value)?,
            "trucks" => trucks = Some(parse_value(key, value)?),
            "repair" => config.repair_enabled = parse_bool(key, value)?,
            "depot_return" => config.depot_return_penalty = parse_bool(key, value)?,
            "weights" => {
                config.weight_scheme = match value.as_str() {
                    "uniform" => WeightScheme::Uniform,
                    "balanced" => WeightScheme::Balanced,
                    _ => bail!("config key 'weights': expected uniform or balanced"),
                }
            }
            "candidates" => {
                config.cluster_candidates = Some(
                    value
                        .split(',')
                        .map(|c| parse_value(key, c.trim()))
                        .collect::<Result<_>>()?,
                )
            }
            "data_dir" => data_dir = Some(PathBuf::from(value)),
            other => bail!("unknown config key '{other}'"),
        }
    }
    if let Some(s) = opts.strategy {
        config.strategy = s.into();
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if let Some(r) = opts.reads {
        config.sampler.num_reads = r;
    }
    if let Some(s) = opts.sweeps {
        config.sampler.sweeps_per_read = s;
    }
    if opts.trucks.is_some() {
        trucks = opts.trucks;
    }
    if opts.repair {
        config.repair_enabled = true;
    }
    if opts.no_depot_return {
        config.depot_return_penalty = false;
    }
    if let Some(w) = opts.weights {
        config.weight_scheme = match w {
            WeightArg::Uniform => WeightScheme::Uniform,
            WeightArg::Balanced => WeightScheme::Balanced,
        };
    }
    if let Some(c) = &opts.candidates {
        config.cluster_candidates = Some(c.clone());
    }
    config.sampler.validate().map_err(|e| anyhow!(e))?;
    Ok(Resolved {
        config,
        trucks,
        data_dir,
    })
}

/// Uses `path` if it exists, else looks for it inside the data directory.
fn locate(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match data_dir {
        Some(dir) if dir.join(path).exists() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn load(path: &Path, resolved: &Resolved) -> Result<Instance> {
    let path = locate(path, resolved.data_dir.as_deref());
    let instance = load_instance(&path).with_context(|| format!("loading {}", path.display()))?;
    match resolved.trucks {
        Some(p) => Ok(instance.with_truck_count(p)?),
        None => Ok(instance),
    }
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => stdout.write_all(text.as_bytes()).context("writing to standard output"),
    }
}

fn report_json(report: &PipelineReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn cmd_solve(args: &SolveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let resolved = resolve(&args.run, Strategy::H2s)?;
    let instance = load(&args.path, &resolved)?;
    let (report, code) = match run(&instance, &resolved.config) {
        Ok(report) => (report, EXIT_OK),
        Err(PipelineError::Infeasible { stage, report, .. }) => {
            let _ = writeln!(stderr, "infeasible: {stage}");
            (*report, EXIT_INFEASIBLE)
        }
        Err(e) => return Err(e.into()),
    };
    emit(args.out.as_deref(), &report_json(&report), stdout)?;
    if let Some(plot) = &args.plot {
        let title = format!("{} ({})", instance.name, report.strategy.name().to_uppercase());
        let svg = render_svg(&instance, &report.solution.routes, &title)?;
        std::fs::write(plot, svg).with_context(|| format!("writing {}", plot.display()))?;
    }
    Ok(code)
}

fn cmd_cluster(args: &ClusterArgs, stdout: &mut dyn Write) -> Result<i32> {
    let resolved = resolve(&args.run, Strategy::H2s)?;
    let instance = load(&args.path, &resolved)?;
    let config = &resolved.config;
    let (fcm, curve) = match args.clusters {
        Some(c) => (cluster_instance(&instance, c, &fcm_config(config))?, None),
        None => {
            let (fcm, curve) = stage_clustering(&instance, config)?;
            (fcm, curve)
        }
    };
    let c = fcm.clusters();
    let assignment = clustered(&instance, &fcm, cluster_capacity(instance.truck_capacity, c, instance.truck_count)?)?;
    let doc = serde_json::json!({
        "instance": instance.name,
        "clusters": c,
        "memberships": fcm.to_json(),
        "elbow_curve": curve,
        "assignment": assignment,
    });
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"), stdout)?;
    Ok(EXIT_OK)
}

/// Clustering as the configured strategy does it: `p` clusters for h2s, the
/// elbow choice for h3s.
fn stage_clustering(instance: &Instance, config: &PipelineConfig) -> Result<(MembershipMatrix, Option<Vec<ElbowPoint>>)> {
    match config.strategy {
        Strategy::H2s => Ok((cluster_instance(instance, instance.truck_count, &fcm_config(config))?, None)),
        Strategy::H3s => {
            let candidates = config
                .cluster_candidates
                .clone()
                .unwrap_or_else(|| default_candidates(instance));
            let sel = select_cluster_count(instance, &candidates, &fcm_config(config))?;
            Ok((sel.memberships, Some(sel.curve)))
        }
    }
}

fn cmd_qubo_dump(args: &DumpArgs, stdout: &mut dyn Write) -> Result<i32> {
    let resolved = resolve(&args.run, Strategy::H2s)?;
    let instance = load(&args.path, &resolved)?;
    let mut config = resolved.config.clone();
    if args.level == Level::Cvrp {
        config.strategy = Strategy::H3s;
    }
    let p = instance.truck_count;
    let (fcm, _) = stage_clustering(&instance, &config)?;
    let c = fcm.clusters();
    let assignment = clustered(&instance, &fcm, cluster_capacity(instance.truck_capacity, c, p)?)?;
    let problem = match args.level {
        Level::Tsp => {
            let cluster = assignment
                .clusters
                .get(args.cluster)
                .ok_or_else(|| anyhow!("cluster {} out of range (0..{c})", args.cluster))?;
            if cluster.members.is_empty() {
                bail!("cluster {} has no customers", args.cluster);
            }
            let mut points = vec![instance.depot().point()];
            points.extend(cluster.members.iter().map(|&v| instance.nodes[v].point()));
            make_problem(&config, points, Vec::new(), 1, None)?
        }
        Level::Cvrp => {
            let mut points: Vec<Point> = vec![instance.depot().point()];
            points.extend(assignment.clusters.iter().map(|cl| cl.centroid));
            let mut demands = vec![0u32];
            demands.extend(assignment.clusters.iter().map(|cl| cl.aggregate_demand as u32));
            make_problem(&config, points, demands, p, Some(instance.truck_capacity))?
        }
    };
    let qubo = build_qubo(&problem, config.variable_budget)?;
    emit(args.out.as_deref(), &qubo.model().to_dump(), stdout)?;
    Ok(EXIT_OK)
}

fn cmd_plot(args: &PlotArgs, stdout: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text).context("parsing report JSON")?;
    let routes_value = report
        .pointer("/solution/routes")
        .or_else(|| report.get("routes"))
        .ok_or_else(|| anyhow!("report has no routes"))?;
    let routes: Vec<Vec<usize>> = serde_json::from_value(routes_value.clone()).context("reading routes")?;
    let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    let path = locate(&args.instance, data_dir.as_deref());
    let instance = load_instance(&path).with_context(|| format!("loading {}", path.display()))?;
    let strategy = report.get("strategy").and_then(|s| s.as_str()).unwrap_or("");
    let title = format!("{} {}", instance.name, strategy.to_uppercase()).trim().to_string();
    let svg = render_svg(&instance, &routes, &title)?;
    emit(args.out.as_deref(), &svg, stdout)?;
    Ok(EXIT_OK)
}

fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let resolved = resolve(&args.run, Strategy::H2s)?;
    let mut paths = args.paths.clone();
    if paths.is_empty() {
        paths.push(
            resolved
                .data_dir
                .clone()
                .ok_or_else(|| anyhow!("no instances given and {DATA_DIR_ENV} is unset"))?,
        );
    }
    let mut instances = Vec::new();
    for path in &paths {
        let path = locate(path, resolved.data_dir.as_deref());
        if path.is_dir() {
            instances.extend(load_dir(&path).with_context(|| format!("scanning {}", path.display()))?);
        } else {
            instances.push(load_instance(&path).with_context(|| format!("loading {}", path.display()))?);
        }
    }
    if let Some(p) = resolved.trucks {
        instances = instances
            .into_iter()
            .map(|i| i.with_truck_count(p))
            .collect::<Result<_, _>>()?;
    }
    let reference_path = match &args.reference {
        Some(p) => Some(p.clone()),
        None => resolved
            .data_dir
            .as_ref()
            .map(|d| d.join("best_known.txt"))
            .filter(|p| p.exists()),
    };
    let refs = match reference_path {
        Some(p) => ReferenceTable::load(&p)?,
        None => ReferenceTable::default(),
    };
    let strategies: Vec<Strategy> = args.strategies.iter().map(|&s| s.into()).collect();
    let output = run_benchmark(
        &instances,
        &strategies,
        &args.seeds,
        &resolved.config,
        &refs,
        &ClassifyConfig::default(),
    );
    for w in &output.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    if let Some(path) = &args.jsonl {
        std::fs::write(path, records_jsonl(&output.records)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&output)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    stdout.write_all(summary_table(&output.summary).as_bytes())?;
    let all_feasible = output.summary.iter().all(|r| r.results.iter().all(|s| s.best_cost.is_some()));
    Ok(if all_feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Runs the CLI on explicit arguments (including the program name) and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(rendered.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(rendered.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, stdout, stderr),
        Command::Cluster(a) => cmd_cluster(a, stdout),
        Command::QuboDump(a) => cmd_qubo_dump(a, stdout),
        Command::Plot(a) => cmd_plot(a, stdout),
        Command::Bench(a) => cmd_bench(a, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

