//! Sampling study on the two-prefix MED instance: safety, oscillation and
//! repair distance of random weight states, as plot data.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use weightfix::error::Result;
use weightfix::netmodel::NetworkInstance;
use weightfix::pspp::{build_path_digraph, find_cycle};
use weightfix::repair::{build_system, solve_min_change, RepairConfig};
use weightfix::scenario::two_prefix_med;
use weightfix::sim::{find_fair_oscillation, weights_to_pspp};

/// States explored per prefix when searching for a fair oscillation.
pub const OSCILLATION_STATES: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub sample: usize,
    pub weights: String,
    pub safe: bool,
    /// Unsafe states only: whether some fair schedule oscillates.
    pub oscillating: Option<bool>,
    pub changes: usize,
    pub repair_cost: u64,
}

pub const STUDY_HEADER: &str = "sample,weights,safe,oscillating,changes,repair_cost";

impl StudyRow {
    pub fn csv_line(&self) -> String {
        let osc = match self.oscillating {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        format!("{},{},{},{},{},{}", self.sample, self.weights, self.safe, osc, self.changes, self.repair_cost)
    }
}

pub fn to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from(STUDY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// `samples` uniform weight vectors in `[1, w_max]` on the two-prefix
/// instance; each is classified and repaired with weights at least
/// `min_weight`.
pub fn run_study(samples: usize, seed: u64, min_weight: u32) -> Result<Vec<StudyRow>> {
    let sc = two_prefix_med();
    let prefs = sc.preferences()?;
    let sys = build_system(&sc.inst, &prefs)?;
    let mut cfg = RepairConfig::for_instance(&sc.inst);
    cfg.min_weight = min_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(samples);
    for sample in 0..samples {
        let w: Vec<u32> = (0..sc.inst.link_count()).map(|_| rng.random_range(1..=sc.inst.w_max())).collect();
        let mut safe = true;
        let mut oscillating = false;
        for name in prefs.prefixes.keys() {
            let ranked = weights_to_pspp(&sc.inst, &prefs, &w, name, sc.hop_bound)?;
            if find_cycle(&build_path_digraph(&ranked.to_pspp(&sc.inst)?)).is_some() {
                safe = false;
                oscillating |= matches!(find_fair_oscillation(&ranked, OSCILLATION_STATES), Ok(Some(_)));
            }
        }
        let initial: Vec<Option<u32>> = w.iter().map(|&x| Some(x)).collect();
        let sol = solve_min_change(&sys, &initial, &cfg)?;
        rows.push(StudyRow {
            sample,
            weights: weights_label(&sc.inst, &w),
            safe,
            oscillating: (!safe).then_some(oscillating),
            changes: sol.changed_links(),
            repair_cost: sol.objective,
        });
    }
    Ok(rows)
}

fn weights_label(inst: &NetworkInstance, w: &[u32]) -> String {
    debug_assert_eq!(inst.link_count(), w.len());
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}
