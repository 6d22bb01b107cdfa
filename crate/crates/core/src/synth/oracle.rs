// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference selection: a literal, unoptimised walk through the
//! while/for structure with ordered sets. Written separately from
//! `crate::selection` and shares none of its logic.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::extract::FeatureSet;
use crate::selection::{
    DataRecord, Mode, ReportEntry, SelectConfig, SelectionReport, SelectionState,
};

pub fn oracle_select(
    records: &[DataRecord],
    features: &HashMap<u64, FeatureSet>,
    cfg: &SelectConfig,
) -> Result<SelectionState> {
    if cfg.target_n < 1 {
        return Err(Error::InvalidArgument("target_n must be at least 1".into()));
    }
    if cfg.sim_threshold.is_nan() || cfg.sim_threshold < 0.0 {
        return Err(Error::InvalidArgument(
            "sim_threshold must be nonnegative".into(),
        ));
    }
    let mut ids_seen = BTreeSet::new();
    let mut dataset: Vec<(u64, BTreeSet<u32>)> = Vec::new();
    for r in records {
        if !ids_seen.insert(r.id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate record id {}",
                r.id
            )));
        }
        match features.get(&r.id) {
            Some(fs) => dataset.push((r.id, fs.indices.iter().copied().collect())),
            None => return Err(Error::MissingFeatures(r.id)),
        }
    }

    let n = cfg.target_n;
    let mut chosen: Vec<u64> = Vec::new();
    let mut chosen_pass: Vec<usize> = Vec::new();
    let mut passes = 0;
    let mut t_s: BTreeSet<u32> = BTreeSet::new();
    while chosen.len() < n {
        passes += 1;
        t_s = BTreeSet::new();
        let mut took_any = false;
        let mut i = 0;
        while i < dataset.len() {
            let t_q = &dataset[i].1;
            let take = match cfg.mode {
                Mode::Greedy => t_s.union(t_q).count() > t_s.len(),
                Mode::SimScale => {
                    if t_s.is_empty() {
                        true
                    } else {
                        let inter = t_s.intersection(t_q).count() as f64;
                        inter / (t_s.len() as f64) < cfg.sim_threshold
                    }
                }
            };
            if take {
                let (id, t_q) = dataset.remove(i);
                chosen.push(id);
                chosen_pass.push(passes);
                t_s = t_s.union(&t_q).copied().collect();
                took_any = true;
                if chosen.len() == n {
                    break;
                }
            } else {
                i += 1;
            }
        }
        if !took_any {
            break;
        }
    }
    let shortfall = n - chosen.len();
    Ok(SelectionState {
        selected_ids: chosen,
        accept_pass: chosen_pass,
        accumulated: t_s.into_iter().collect(),
        pass_count: passes,
        shortfall,
    })
}

/// Reference report for a selection trace.
pub fn oracle_report(
    state: &SelectionState,
    features: &HashMap<u64, FeatureSet>,
) -> Result<SelectionReport> {
    let mut entries = Vec::new();
    let mut everything: BTreeSet<u32> = BTreeSet::new();
    let mut per_pass: BTreeSet<u32> = BTreeSet::new();
    let mut last_pass = None;
    for k in 0..state.selected_ids.len() {
        let id = state.selected_ids[k];
        let pass = state.accept_pass[k];
        if last_pass != Some(pass) {
            per_pass = BTreeSet::new();
            last_pass = Some(pass);
        }
        let t_q: BTreeSet<u32> = match features.get(&id) {
            Some(fs) => fs.indices.iter().copied().collect(),
            None => return Err(Error::MissingFeatures(id)),
        };
        let fresh = t_q.difference(&per_pass).count();
        let fresh_global = t_q.difference(&everything).count();
        per_pass.extend(t_q.iter().copied());
        everything.extend(t_q.iter().copied());
        entries.push(ReportEntry {
            rank: k + 1,
            id,
            pass,
            new_features: fresh,
            accumulator_size: per_pass.len(),
            global_new_features: fresh_global,
        });
    }
    Ok(SelectionReport {
        entries,
        total_union: everything.len(),
    })
}
