use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use weightfix::bgp_prefs::{derive_med_preferences, parse_preferences, parse_routes, routes_to_csv, MandatedPreferences};
use weightfix::error::Error;
use weightfix::netmodel::{parse_demands, parse_instance, DemandMatrix, NetworkInstance};
use weightfix::scenario::{inject_med_conflicts, planted_preferences, scaled_demands, MED_HOP_BOUND};
use weightfix::search::write_progress;
use weightfix::te::TeCostModel;

use crate::bench::{self, PLANTED_HOPS};
use crate::config::FileConfig;
use crate::pipeline::{self, InputDigest, Mode, Options, Problem, RunReport};
use crate::study;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNSAFE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

const DEFAULT_HOP_BOUND: usize = 3;

#[derive(Debug, Parser)]
#[command(name = "weightfix", version, about = "Repairs IGP link weights so MED preferences cannot oscillate")]
pub struct Cli {
    /// TOML file with defaults; falls back to $WEIGHTFIX_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report whether the current weights are safe (exit 0) or not (exit 2).
    Check(CheckArgs),
    /// Compute new weights and print a JSON run report.
    Repair(RepairArgs),
    /// Time the equal-split pipeline on Waxman instances (CSV).
    Bench(BenchArgs),
    /// Write a random Waxman instance with demands and preferences.
    Generate(GenerateArgs),
    /// Sample weight states of the two-prefix MED instance (CSV).
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Topology JSON.
    #[arg(long)]
    pub topology: PathBuf,
    /// External routes CSV: prefix,egress,neighbor_as,med.
    #[arg(long, conflicts_with = "prefs", required_unless_present = "prefs")]
    pub routes: Option<PathBuf>,
    /// Mandated preferences CSV: prefix,p_nodes,q_nodes.
    #[arg(long)]
    pub prefs: Option<PathBuf>,
    /// Hop bound of candidate paths derived from routes.
    #[arg(long)]
    pub hop_bound: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Demand CSV: src,dst,mbps. Required by the unequal and equal modes.
    #[arg(long)]
    pub demands: Option<PathBuf>,
    /// exact, unequal or equal.
    #[arg(long, default_value = "equal")]
    pub mode: Mode,
    /// Allowed TE cost increase in percent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Local-search starts in equal mode.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Node budget of the exact search.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Wall-clock budget of the exact search in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Return the first search that reaches the tolerance.
    #[arg(long)]
    pub first_wins: bool,
    /// Smallest weight a repair may assign.
    #[arg(long)]
    pub min_weight: Option<u32>,
    /// CSV cost table: from_utilization,slope.
    #[arg(long)]
    pub cost_model: Option<PathBuf>,
    /// Include per-stage wall times in the report.
    #[arg(long)]
    pub timings: bool,
    /// Write the search progress as JSON lines.
    #[arg(long)]
    pub progress: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated node counts; may be empty.
    #[arg(long, default_value = "20,30,40,60,70")]
    pub sizes: String,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Planted preference pairs per instance.
    #[arg(long, default_value_t = 40)]
    pub preferences: usize,
    /// Comma-separated preference counts for a sweep at --sweep-size.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long, default_value_t = 40)]
    pub sweep_size: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// MED patterns to inject; written as routes.csv.
    #[arg(long, default_value_t = 3)]
    pub med: usize,
    /// Planted preference pairs; written as preferences.csv when positive.
    #[arg(long, default_value_t = 0)]
    pub planted: usize,
    #[arg(long, default_value_t = bench::DEMAND_DENSITY)]
    pub density: f64,
    /// Peak utilization of the generated demands under the initial weights.
    #[arg(long, default_value_t = bench::PEAK_UTILIZATION)]
    pub peak: f64,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub min_weight: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible { conflict } => Failure {
                code: EXIT_INFEASIBLE,
                message: format!("mandated preferences are infeasible; conflicting constraints:\n  {}", conflict.join("\n  ")),
            },
            other => Failure { code: EXIT_ERROR, message: other.to_string() },
        }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Failure { code: EXIT_ERROR, message }
    }
}

type CmdResult = Result<i32, Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::from(format!("cannot read {}: {e}", path.display())))
}

fn text(bytes: &[u8], path: &Path) -> Result<String, Failure> {
    String::from_utf8(bytes.to_vec()).map_err(|_| Failure::from(format!("{} is not UTF-8", path.display())))
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| Failure::from(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Failure::from(format!("cannot write output: {e}"))),
    }
}

struct Loaded {
    inst: NetworkInstance,
    prefs: MandatedPreferences,
    hop_bound: Option<usize>,
    files: BTreeMap<String, Vec<u8>>,
}

fn load_inputs(input: &InputArgs, cfg: &FileConfig) -> Result<Loaded, Failure> {
    let mut files = BTreeMap::new();
    let topo = read(&input.topology)?;
    let inst = parse_instance(&text(&topo, &input.topology)?)?;
    files.insert("topology".to_string(), topo);
    let (prefs, hop_bound) = match (&input.routes, &input.prefs) {
        (Some(r), _) => {
            let bytes = read(r)?;
            let routes = parse_routes(&inst, &text(&bytes, r)?)?;
            files.insert("routes".to_string(), bytes);
            let h = input.hop_bound.or(cfg.hop_bound).unwrap_or(DEFAULT_HOP_BOUND);
            (derive_med_preferences(&inst, &routes, h)?, Some(h))
        }
        (None, Some(p)) => {
            let bytes = read(p)?;
            let prefs = parse_preferences(&inst, &text(&bytes, p)?)?;
            files.insert("preferences".to_string(), bytes);
            (prefs, None)
        }
        (None, None) => return Err(Failure::from("either --routes or --prefs is required".to_string())),
    };
    prefs.validate(&inst)?;
    Ok(Loaded { inst, prefs, hop_bound, files })
}

fn cmd_check(args: &CheckArgs, cfg: &FileConfig) -> CmdResult {
    let l = load_inputs(&args.input, cfg)?;
    let known = l.inst.known_weights().ok();
    let verdicts = pipeline::safety_verdicts(&l.inst, &l.prefs, known.as_deref(), l.hop_bound)?;
    let safe = verdicts.iter().all(|v| v.safe);
    let doc = serde_json::json!({ "safe": safe, "prefixes": verdicts });
    emit(None, &format!("{}\n", serde_json::to_string_pretty(&doc).expect("verdict serializes")))?;
    Ok(if safe { EXIT_OK } else { EXIT_UNSAFE })
}

fn options(args: &RepairArgs, cfg: &FileConfig) -> Result<Options, Failure> {
    let d = Options::default();
    let model_path = args.cost_model.clone().or(cfg.cost_model.clone());
    let model = match model_path {
        Some(p) => TeCostModel::load(&p)?,
        None => TeCostModel::default(),
    };
    let time_budget = args.time_budget.or(cfg.time_budget_secs);
    if let Some(t) = time_budget {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::from("time budget must be positive".to_string()));
        }
    }
    Ok(Options {
        mode: args.mode,
        gamma: args.gamma.or(cfg.gamma).unwrap_or(d.gamma),
        starts: args.starts.or(cfg.starts).unwrap_or(d.starts),
        seed: args.seed.or(cfg.seed).unwrap_or(d.seed),
        node_budget: args.budget.or(cfg.budget).unwrap_or(d.node_budget),
        time_budget: time_budget.map(Duration::from_secs_f64),
        threads: args.threads.or(cfg.threads).unwrap_or(d.threads).max(1),
        first_wins: args.first_wins,
        min_weight: args.min_weight.or(cfg.min_weight).unwrap_or(d.min_weight),
        m_prime: cfg.m_prime.unwrap_or(d.m_prime),
        max_iterations: cfg.max_iterations.unwrap_or(d.max_iterations),
        model,
        record_progress: args.progress.is_some(),
    })
}

fn cmd_repair(args: &RepairArgs, cfg: &FileConfig) -> CmdResult {
    let mut l = load_inputs(&args.input, cfg)?;
    let opts = options(args, cfg)?;
    let demands: Option<DemandMatrix> = match &args.demands {
        Some(p) => {
            let bytes = read(p)?;
            let d = parse_demands(&l.inst, &text(&bytes, p)?)?;
            l.files.insert("demands".to_string(), bytes);
            Some(d)
        }
        None => None,
    };
    if let Some(p) = args.cost_model.as_ref().or(cfg.cost_model.as_ref()) {
        l.files.insert("cost_model".to_string(), read(p)?);
    }
    let problem = Problem { inst: &l.inst, demands: demands.as_ref(), prefs: &l.prefs, hop_bound: l.hop_bound };
    let outcome = pipeline::run(&problem, &opts)?;
    if let Some(p) = &args.progress {
        let mut buf = Vec::new();
        write_progress(&mut buf, &outcome.progress).map_err(|e| Failure::from(e.to_string()))?;
        fs::write(p, buf).map_err(|e| Failure::from(format!("cannot write {}: {e}", p.display())))?;
    }
    let report = RunReport::new(InputDigest::new(&l.files, &opts), &outcome, args.timings);
    emit(args.out.as_deref(), &format!("{}\n", report.to_json()))?;
    Ok(EXIT_OK)
}

/// Parses a comma-separated list; blank input is the empty list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| format!("bad list entry `{x}`")))
        .collect()
}

fn cmd_bench(args: &BenchArgs, cfg: &FileConfig) -> CmdResult {
    let sizes: Vec<usize> = parse_list(&args.sizes)?;
    let seeds: Vec<u64> = parse_list(&args.seeds)?;
    let d = Options::default();
    let opts = Options {
        threads: args.threads.or(cfg.threads).unwrap_or(d.threads).max(1),
        gamma: cfg.gamma.unwrap_or(d.gamma),
        ..d
    };
    let mut rows = bench::size_series(&sizes, &seeds, args.preferences, &opts)?;
    if let Some(sweep) = &args.sweep {
        let counts: Vec<usize> = parse_list(sweep)?;
        rows.extend(bench::preference_sweep(args.sweep_size, &counts, &seeds, &opts)?);
    }
    emit(args.out.as_deref(), &bench::to_csv(&rows))?;
    Ok(EXIT_OK)
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let inst = bench::bench_instance(args.nodes, args.seed)?;
    let demands = scaled_demands(&inst, args.density, args.peak, args.seed)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::from(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let write = |name: &str, content: String| {
        let p = args.out_dir.join(name);
        fs::write(&p, content).map_err(|e| Failure::from(format!("cannot write {}: {e}", p.display())))
    };
    write("topology.json", inst.to_json())?;
    write("demands.csv", demands.to_csv(&inst))?;
    if args.med > 0 {
        let (routes, _) = inject_med_conflicts(&inst, args.med, args.seed)?;
        write("routes.csv", routes_to_csv(&inst, &routes))?;
    }
    if args.planted > 0 {
        write("preferences.csv", planted_preferences(&inst, args.planted, PLANTED_HOPS, args.seed).to_csv(&inst))?;
    }
    if args.med > 0 {
        eprintln!("routes use hop bound {MED_HOP_BOUND}; pass --hop-bound {MED_HOP_BOUND} to check and repair");
    }
    Ok(EXIT_OK)
}

fn cmd_study(args: &StudyArgs) -> CmdResult {
    let rows = study::run_study(args.samples, args.seed, args.min_weight)?;
    emit(args.out.as_deref(), &study::to_csv(&rows))?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = FileConfig::resolve(cli.config.as_deref())
        .map_err(Failure::from)
        .and_then(|cfg| match &cli.command {
            Command::Check(a) => cmd_check(a, &cfg),
            Command::Repair(a) => cmd_repair(a, &cfg),
            Command::Bench(a) => cmd_bench(a, &cfg),
            Command::Generate(a) => cmd_generate(a),
            Command::Study(a) => cmd_study(a),
        });
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_allow_blanks() {
        assert_eq!(parse_list::<usize>("").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_list::<usize>("20, 30,").unwrap(), vec![20, 30]);
        assert!(parse_list::<usize>("20,x").is_err());
    }

    #[test]
    fn infeasibility_maps_to_exit_three() {
        let f = Failure::from(Error::Infeasible { conflict: vec!["a".into(), "b".into()] });
        assert_eq!(f.code, EXIT_INFEASIBLE);
        assert!(f.message.contains("a") && f.message.contains("b"));
        assert_eq!(Failure::from(Error::Cyclic).code, EXIT_ERROR);
    }

    #[test]
    fn routes_and_prefs_are_exclusive() {
        let r = Cli::try_parse_from(["weightfix", "check", "--topology", "t", "--routes", "r", "--prefs", "p"]);
        assert!(r.is_err());
        let r = Cli::try_parse_from(["weightfix", "check", "--topology", "t"]);
        assert!(r.is_err());
    }
}
