//! Timing runs on Waxman instances with planted preferences.

use std::time::Instant;

use serde::Serialize;
use weightfix::error::{Error, Result};
use weightfix::netmodel::{generate_waxman, NetworkInstance, WaxmanParams};
use weightfix::repair::build_system;
use weightfix::scenario::{planted_preferences, scaled_demands};
use weightfix::search::{parallel_search, starts_from_pool, SearchProblem, StartMode};
use weightfix::te::{JointContext, TeCostModel};

use crate::pipeline::Options;

/// Longest random walk used for planted preference paths.
pub const PLANTED_HOPS: usize = 6;
/// Share of ordered node pairs with a demand.
pub const DEMAND_DENSITY: f64 = 0.3;
/// Peak link utilization the demands are scaled to.
pub const PEAK_UTILIZATION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// `size` for the size series, `sweep` for the preference sweep.
    pub kind: &'static str,
    pub n: usize,
    pub seed: u64,
    pub links: usize,
    pub preferences: usize,
    pub constraints: usize,
    /// Joint relaxation solve, including its budgeted exact member.
    pub solver_ms: f64,
    /// Until the first search reaches the tolerance or gives up.
    pub first_search_ms: f64,
    pub pipeline_ms: f64,
    pub normalized: f64,
}

pub const BENCH_HEADER: &str =
    "kind,n,seed,links,preferences,constraints,solver_ms,first_search_ms,pipeline_ms,normalized";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.6}",
            self.kind,
            self.n,
            self.seed,
            self.links,
            self.preferences,
            self.constraints,
            self.solver_ms,
            self.first_search_ms,
            self.pipeline_ms,
            self.normalized
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// The benchmark instance for `(n, seed)`.
pub fn bench_instance(n: usize, seed: u64) -> Result<NetworkInstance> {
    generate_waxman(&WaxmanParams::standard(n, seed))
}

/// Runs the equal-split pipeline once with first-wins search.
pub fn bench_one(kind: &'static str, n: usize, seed: u64, preferences: usize, opts: &Options) -> Result<BenchRow> {
    let inst = bench_instance(n, seed)?;
    let demands = scaled_demands(&inst, DEMAND_DENSITY, PEAK_UTILIZATION, seed)?;
    let prefs = planted_preferences(&inst, preferences, PLANTED_HOPS, seed);
    let sys = build_system(&inst, &prefs)?;
    let w_e = inst.known_weights()?;
    let cfg = opts.repair_config(&inst);
    let model: &TeCostModel = &opts.model;
    let start = Instant::now();
    let ctx = JointContext::new(&inst, &demands, &prefs, &w_e, &cfg, &opts.joint_config())?;
    let pool = ctx.candidates(None)?;
    let solver_ms = start.elapsed().as_secs_f64() * 1000.0;
    let starts = starts_from_pool(&ctx, pool, opts.starts.max(1), seed)?;
    let problem = SearchProblem::new(&inst, &demands, &prefs, model, &cfg)?;
    let t = Instant::now();
    let out = parallel_search(&problem, &starts, &opts.search_config(), StartMode::FirstWins)?;
    let first_search_ms = t.elapsed().as_secs_f64() * 1000.0;
    Ok(BenchRow {
        kind,
        n,
        seed,
        links: inst.link_count(),
        preferences: prefs.pair_count(),
        constraints: sys.constraint_count(),
        solver_ms,
        first_search_ms,
        pipeline_ms: start.elapsed().as_secs_f64() * 1000.0,
        normalized: out.normalized(),
    })
}

/// One row per `(size, seed)` with `preferences` planted pairs.
pub fn size_series(sizes: &[usize], seeds: &[u64], preferences: usize, opts: &Options) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        if n < 2 {
            return Err(Error::Validation(format!("size {n} is too small")));
        }
        for &seed in seeds {
            rows.push(bench_one("size", n, seed, preferences, opts)?);
        }
    }
    Ok(rows)
}

/// One row per `(preference count, seed)` at a fixed size.
pub fn preference_sweep(n: usize, counts: &[usize], seeds: &[u64], opts: &Options) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &k in counts {
        for &seed in seeds {
            rows.push(bench_one("sweep", n, seed, k, opts)?);
        }
    }
    Ok(rows)
}
