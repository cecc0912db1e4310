//! The repair pipelines behind `weightfix repair`, and the run report.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use weightfix::bgp_prefs::MandatedPreferences;
use weightfix::error::{Error, Result};
use weightfix::netmodel::{DemandMatrix, NetworkInstance};
use weightfix::pspp::{build_path_digraph, is_safe, weight_restricted, PsppInstance, Safety};
use weightfix::repair::{build_system, solve_min_change, RepairConfig, RepairSolution, Stage};
use weightfix::search::{ecmp_cost, parallel_search, starts_from_pool, ProgressRecord, SearchConfig, SearchProblem, StartMode};
use weightfix::sim::weights_to_pspp;
use weightfix::te::{best_of, optimal_split_flow, te_cost, JointConfig, JointContext, TeCostModel};

pub const REPORT_SCHEMA: &str = "weightfix.report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Minimal-change repair only.
    Exact,
    /// Joint repair for unequal splitting.
    Unequal,
    /// Joint repair, start generation and local search for equal splitting.
    Equal,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(Mode::Exact),
            "unequal" => Ok(Mode::Unequal),
            "equal" => Ok(Mode::Equal),
            other => Err(format!("unknown mode `{other}` (expected exact, unequal or equal)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Unequal => "unequal",
            Mode::Equal => "equal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub mode: Mode,
    pub gamma: f64,
    pub starts: usize,
    pub seed: u64,
    pub node_budget: u64,
    pub time_budget: Option<Duration>,
    pub threads: usize,
    pub first_wins: bool,
    pub min_weight: u32,
    pub m_prime: f64,
    pub max_iterations: usize,
    pub model: TeCostModel,
    pub record_progress: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            mode: Mode::Equal,
            gamma: 10.0,
            starts: 4,
            seed: 0,
            node_budget: 2_000_000,
            time_budget: None,
            threads: 4,
            first_wins: false,
            min_weight: 1,
            m_prime: 1000.0,
            max_iterations: 200,
            model: TeCostModel::default(),
            record_progress: false,
        }
    }
}

impl Options {
    pub fn repair_config(&self, inst: &NetworkInstance) -> RepairConfig {
        let mut cfg = RepairConfig::for_instance(inst);
        cfg.min_weight = self.min_weight;
        cfg.node_budget = self.node_budget;
        cfg.time_budget = self.time_budget;
        cfg
    }

    pub fn joint_config(&self) -> JointConfig {
        JointConfig {
            gamma: self.gamma,
            m_prime: self.m_prime,
            exact_node_budget: self.node_budget.min(JointConfig::default().exact_node_budget),
            model: self.model.clone(),
            ..JointConfig::default()
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            gamma: self.gamma,
            max_iterations: self.max_iterations,
            seed: self.seed,
            threads: self.threads.max(1),
            record_progress: self.record_progress,
            ..SearchConfig::default()
        }
    }
}

/// Inputs of one run. `hop_bound` is set when the preferences come from
/// external routes; safety is then judged on all candidate paths.
pub struct Problem<'a> {
    pub inst: &'a NetworkInstance,
    pub demands: Option<&'a DemandMatrix>,
    pub prefs: &'a MandatedPreferences,
    pub hop_bound: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixVerdict {
    pub prefix: String,
    pub safe: bool,
    /// Rank per path when safe.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<BTreeMap<String, u64>>,
    /// Arcs of a preference cycle when unsafe.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<String>>,
}

fn verdict(inst: &NetworkInstance, prefix: &str, pspp: &PsppInstance) -> PrefixVerdict {
    let dg = build_path_digraph(pspp);
    match is_safe(&dg) {
        Safety::Safe { ranks } => PrefixVerdict {
            prefix: prefix.into(),
            safe: true,
            ranks: Some(dg.paths.iter().zip(ranks).map(|(p, r)| (p.display(inst), r)).collect()),
            cycle: None,
        },
        Safety::Unsafe { cycle } => PrefixVerdict {
            prefix: prefix.into(),
            safe: false,
            ranks: None,
            cycle: Some(
                cycle
                    .iter()
                    .map(|a| format!("{} -> {} ({:?})", dg.paths[a.from].display(inst), dg.paths[a.to].display(inst), a.kind))
                    .collect(),
            ),
        },
    }
}

/// Safety per prefix. With known weights and a hop bound every candidate
/// path is ranked; with known weights only the closure paths are; without
/// weights only the mandated pairs count.
pub fn safety_verdicts(
    inst: &NetworkInstance,
    prefs: &MandatedPreferences,
    weights: Option<&[u32]>,
    hop_bound: Option<usize>,
) -> Result<Vec<PrefixVerdict>> {
    let mut out = Vec::new();
    for name in prefs.prefixes.keys() {
        let pspp = match (weights, hop_bound) {
            (Some(w), Some(h)) => weights_to_pspp(inst, prefs, w, name, h)?.to_pspp(inst)?,
            (Some(w), None) => weight_restricted(inst, prefs, name, w)?,
            (None, _) => PsppInstance::restricted(inst, prefs, name)?,
        };
        out.push(verdict(inst, name, &pspp));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageReport {
    Check {
        safe: bool,
        unsafe_prefixes: Vec<String>,
    },
    Exact {
        objective: u64,
        changes: usize,
        proven_optimal: bool,
    },
    Joint {
        objective: f64,
        change_cost: u64,
        changes: usize,
        normalized_unequal: f64,
        candidates: usize,
        source: String,
    },
    Starts {
        count: usize,
        normalized_equal: Vec<f64>,
    },
    Search {
        policy: String,
        iterations: usize,
        evaluations: usize,
        reached_target: bool,
        normalized_equal: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeReport {
    pub baseline_equal: f64,
    pub baseline_unequal: f64,
    /// Always 1: costs are reported relative to the baseline.
    pub before: f64,
    pub after_equal: f64,
    pub after_unequal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeRecord {
    pub link: String,
    pub old: Option<u32>,
    pub new: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSummary {
    pub pairs: usize,
    pub violations: usize,
    pub suffix_monotone: bool,
    pub ok: bool,
}

/// Everything a pipeline produced; `timings` is kept apart so the report can
/// leave it out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub solution: RepairSolution,
    pub stages: Vec<StageReport>,
    pub timings: BTreeMap<String, f64>,
    pub te: Option<TeReport>,
    pub safety_after: Vec<PrefixVerdict>,
    pub progress: Vec<ProgressRecord>,
    /// Search outcome of the equal pipeline: whether it stopped at the
    /// tolerance.
    pub reached_target: Option<bool>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn need_demands<'a>(p: &Problem<'a>) -> Result<&'a DemandMatrix> {
    p.demands
        .ok_or_else(|| Error::Validation("this mode needs a demand matrix".into()))
}

/// Normalized TE costs of `w` against the instance weights.
pub fn te_report(inst: &NetworkInstance, demands: &DemandMatrix, w: &[u32], model: &TeCostModel) -> Result<TeReport> {
    let w_e = inst.known_weights()?;
    let iterations = JointConfig::default().flow_iterations;
    let unequal = |w: &[u32]| -> Result<f64> { Ok(te_cost(&optimal_split_flow(inst, demands, w, model, iterations)?, model)) };
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };
    let (be, bu) = (ecmp_cost(inst, demands, &w_e, model)?, unequal(&w_e)?);
    Ok(TeReport {
        baseline_equal: be,
        baseline_unequal: bu,
        before: 1.0,
        after_equal: ratio(ecmp_cost(inst, demands, w, model)?, be),
        after_unequal: ratio(unequal(w)?, bu),
    })
}

/// Runs the pipeline selected by `opts.mode`.
pub fn run(problem: &Problem, opts: &Options) -> Result<Outcome> {
    let inst = problem.inst;
    let prefs = problem.prefs;
    let cfg = opts.repair_config(inst);
    let mut stages = Vec::new();
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let known = inst.known_weights().ok();
    let before = safety_verdicts(inst, prefs, known.as_deref(), problem.hop_bound)?;
    stages.push(StageReport::Check {
        safe: before.iter().all(|v| v.safe),
        unsafe_prefixes: before.iter().filter(|v| !v.safe).map(|v| v.prefix.clone()).collect(),
    });
    timings.insert("check".into(), ms(start));
    let mut progress = Vec::new();
    let mut reached_target = None;
    let solution = match opts.mode {
        Mode::Exact => {
            let t = Instant::now();
            let sys = build_system(inst, &prefs.close_suffixes())?;
            let sol = solve_min_change(&sys, &inst.initial_weights(), &cfg)?;
            timings.insert("exact".into(), ms(t));
            stages.push(StageReport::Exact {
                objective: sol.objective,
                changes: sol.changed_links(),
                proven_optimal: sol.proven_optimal,
            });
            sol
        }
        Mode::Unequal | Mode::Equal => {
            let demands = need_demands(problem)?;
            let w_e = inst.known_weights()?;
            let t = Instant::now();
            let ctx = JointContext::new(inst, demands, prefs, &w_e, &cfg, &opts.joint_config())?;
            let pool = ctx.candidates(None)?;
            let best = best_of(&pool).cloned().ok_or_else(|| Error::Budget("no verified candidate found".into()))?;
            timings.insert("joint".into(), ms(t));
            stages.push(StageReport::Joint {
                objective: best.objective,
                change_cost: best.change_cost,
                changes: best.changes,
                normalized_unequal: ctx.normalized(best.te),
                candidates: pool.len(),
                source: best.stage.as_str().into(),
            });
            if opts.mode == Mode::Unequal {
                ctx.into_solution(&best)?
            } else {
                let t = Instant::now();
                let exact = pool.iter().find(|c| c.stage == Stage::Exact).map(|c| c.weights.clone());
                let mut starts = starts_from_pool(&ctx, pool, opts.starts.max(1), opts.seed)?;
                // the minimal-change point always competes
                if let Some(w) = exact {
                    if !starts.contains(&w) {
                        starts.push(w);
                    }
                }
                let model = &opts.model;
                let normalized: Vec<f64> = starts
                    .iter()
                    .map(|s| ecmp_cost(inst, demands, s, model))
                    .collect::<Result<Vec<_>>>()?;
                let sp = SearchProblem::new(inst, demands, prefs, model, &cfg)?;
                stages.push(StageReport::Starts {
                    count: starts.len(),
                    normalized_equal: normalized.iter().map(|c| if sp.baseline > 0.0 { c / sp.baseline } else { 1.0 }).collect(),
                });
                timings.insert("starts".into(), ms(t));
                let t = Instant::now();
                let policy = if opts.first_wins { StartMode::FirstWins } else { StartMode::BestOf };
                let out = parallel_search(&sp, &starts, &opts.search_config(), policy)?;
                timings.insert("search".into(), ms(t));
                stages.push(StageReport::Search {
                    policy: if opts.first_wins { "first_wins" } else { "best_of" }.into(),
                    iterations: out.iterations,
                    evaluations: out.evaluations,
                    reached_target: out.reached_target,
                    normalized_equal: out.normalized(),
                });
                reached_target = Some(out.reached_target);
                progress = out.progress;
                out.solution
            }
        }
    };
    let t = Instant::now();
    let te = match (problem.demands, &known) {
        (Some(d), Some(_)) => Some(te_report(inst, d, &solution.weights, &opts.model)?),
        _ => None,
    };
    let safety_after = safety_verdicts(inst, prefs, Some(&solution.weights), problem.hop_bound)?;
    timings.insert("evaluate".into(), ms(t));
    timings.insert("total".into(), ms(start));
    Ok(Outcome { solution, stages, timings, te, safety_after, progress, reached_target })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    /// SHA-256 over the input files and the canonical options.
    pub digest: String,
    pub files: BTreeMap<String, String>,
    pub mode: Mode,
    pub gamma: f64,
    pub starts: usize,
    pub seed: u64,
    pub budget: u64,
    pub min_weight: u32,
    pub first_wins: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl InputDigest {
    /// `files` maps a role (`topology`, `demands`, ...) to file contents.
    pub fn new(files: &BTreeMap<String, Vec<u8>>, opts: &Options) -> Self {
        let files: BTreeMap<String, String> = files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
        let mut d = InputDigest {
            digest: String::new(),
            files,
            mode: opts.mode,
            gamma: opts.gamma,
            starts: opts.starts,
            seed: opts.seed,
            budget: opts.node_budget,
            min_weight: opts.min_weight,
            first_wins: opts.first_wins,
        };
        let canonical = serde_json::to_string(&(&d.files, d.mode, d.gamma, d.starts, d.seed, d.budget, d.min_weight, d.first_wins, opts.model.to_csv()))
            .expect("digest fields serialize");
        d.digest = sha256_hex(canonical.as_bytes());
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub inputs: InputDigest,
    pub stages: Vec<StageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    pub stage: &'static str,
    pub changes: Vec<ChangeRecord>,
    pub weights: Vec<u32>,
    pub verification: VerificationSummary,
    pub safety_after: Vec<PrefixVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub te: Option<TeReport>,
}

impl RunReport {
    pub fn new(inputs: InputDigest, outcome: &Outcome, with_timings: bool) -> Self {
        let sol = &outcome.solution;
        let violations = sol.realized.violations().count();
        RunReport {
            schema: REPORT_SCHEMA,
            inputs,
            stages: outcome.stages.clone(),
            timings_ms: with_timings.then(|| outcome.timings.clone()),
            stage: sol.stage.as_str(),
            changes: sol
                .changes
                .iter()
                .map(|c| ChangeRecord { link: c.label.clone(), old: c.old, new: c.new })
                .collect(),
            weights: sol.weights.clone(),
            verification: VerificationSummary {
                pairs: sol.realized.pairs.len(),
                violations,
                suffix_monotone: sol.realized.suffix_monotone,
                ok: sol.realized.all_ok(),
            },
            safety_after: outcome.safety_after.clone(),
            te: outcome.te.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use weightfix::scenario::{diamond, med_gadget};

    #[test]
    fn exact_mode_on_the_gadget_ends_safe() {
        let sc = med_gadget();
        let prefs = sc.preferences().unwrap();
        let problem = Problem { inst: &sc.inst, demands: None, prefs: &prefs, hop_bound: Some(sc.hop_bound) };
        let opts = Options { mode: Mode::Exact, ..Options::default() };
        let out = run(&problem, &opts).unwrap();
        assert!(matches!(out.stages[0], StageReport::Check { safe: false, .. }));
        assert!(out.safety_after.iter().all(|v| v.safe));
        assert!(out.solution.realized.all_ok());
        assert!(out.te.is_none());
    }

    #[test]
    fn joint_modes_need_demands() {
        let (inst, prefs) = diamond();
        let problem = Problem { inst: &inst, demands: None, prefs: &prefs, hop_bound: None };
        let opts = Options { mode: Mode::Unequal, ..Options::default() };
        assert!(matches!(run(&problem, &opts), Err(Error::Validation(_))));
    }

    #[test]
    fn digest_changes_with_the_seed() {
        let files: BTreeMap<String, Vec<u8>> = [("topology".to_string(), b"{}".to_vec())].into_iter().collect();
        let a = InputDigest::new(&files, &Options::default());
        let b = InputDigest::new(&files, &Options { seed: 1, ..Options::default() });
        assert_ne!(a.digest, b.digest);
        assert_eq!(a.digest, InputDigest::new(&files, &Options::default()).digest);
        assert_eq!(sha256_hex(b"").len(), 64);
    }

    #[test]
    fn mode_parses_and_prints() {
        for m in [Mode::Exact, Mode::Unequal, Mode::Equal] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
