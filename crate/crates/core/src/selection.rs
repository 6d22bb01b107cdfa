// SPDX-License-Identifier: MIT OR Apache-2.0

//! Diversity-driven subset selection over SAE feature sets.
//!
//! Records are scanned longest-instruction first. Each pass starts from an
//! empty accumulated feature set and accepts a record when
//!
//! * greedy: its features add at least one index to the accumulator, or
//! * simscale: `|acc ∩ T| / |acc| < sim_threshold` (an empty accumulator
//!   accepts unconditionally).
//!
//! Accepted records leave the candidate pool. Passes repeat until the target
//! size is reached or a pass accepts nothing, in which case the shortfall is
//! reported.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::FeatureSet;

/// One instruction/response pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRecord {
    pub id: u64,
    pub instruction: String,
    pub response: String,
    instruction_length: usize,
}

impl DataRecord {
    pub fn new(id: u64, instruction: impl Into<String>, response: impl Into<String>) -> Self {
        let instruction = instruction.into();
        let instruction_length = instruction.chars().count();
        Self {
            id,
            instruction,
            response: response.into(),
            instruction_length,
        }
    }

    /// Character count of the instruction.
    pub fn instruction_length(&self) -> usize {
        self.instruction_length
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    instruction: String,
    response: String,
}

/// How text length is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthMetric {
    #[default]
    Chars,
    /// Whitespace-separated tokens.
    Tokens,
}

impl LengthMetric {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthMetric::Chars => text.chars().count(),
            LengthMetric::Tokens => text.split_whitespace().count(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LengthMetric::Chars => "chars",
            LengthMetric::Tokens => "tokens",
        }
    }
}

impl FromStr for LengthMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(LengthMetric::Chars),
            "tokens" => Ok(LengthMetric::Tokens),
            other => Err(Error::InvalidArgument(format!(
                "length metric must be chars or tokens, got {other:?}"
            ))),
        }
    }
}

/// Stable sort by instruction character length, longest first.
pub fn sort_records(records: Vec<DataRecord>) -> Vec<DataRecord> {
    sort_records_by(records, LengthMetric::Chars)
}

pub fn sort_records_by(mut records: Vec<DataRecord>, metric: LengthMetric) -> Vec<DataRecord> {
    records.sort_by_cached_key(|r| std::cmp::Reverse(metric.measure(&r.instruction)));
    records
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Greedy,
    SimScale,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Mode::Greedy),
            "simscale" => Ok(Mode::SimScale),
            other => Err(Error::InvalidArgument(format!(
                "mode must be greedy or simscale, got {other:?}"
            ))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Greedy => "greedy",
            Mode::SimScale => "simscale",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    pub mode: Mode,
    pub target_n: usize,
    pub sim_threshold: f64,
    pub jump_threshold: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Greedy,
            target_n: 1000,
            sim_threshold: 0.8,
            jump_threshold: 10.0,
        }
    }
}

/// Result of a selection run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionState {
    /// Accepted record ids in acceptance order.
    pub selected_ids: Vec<u64>,
    /// 1-based pass in which each record was accepted.
    pub accept_pass: Vec<usize>,
    /// Accumulated feature set of the last pass, sorted.
    pub accumulated: Vec<u32>,
    pub pass_count: usize,
    /// `target_n - selected` when the target could not be reached.
    pub shortfall: usize,
}

/// Membership bitset that can be cleared in time proportional to its size.
struct Accumulator {
    bits: Vec<u64>,
    members: Vec<u32>,
}

impl Accumulator {
    fn new(max_index: u32) -> Self {
        Self {
            bits: vec![0; max_index as usize / 64 + 1],
            members: Vec::new(),
        }
    }

    fn contains(&self, i: u32) -> bool {
        self.bits[i as usize / 64] >> (i % 64) & 1 == 1
    }

    fn insert(&mut self, i: u32) {
        if !self.contains(i) {
            self.bits[i as usize / 64] |= 1 << (i % 64);
            self.members.push(i);
        }
    }

    fn clear(&mut self) {
        for &i in &self.members {
            self.bits[i as usize / 64] = 0;
        }
        self.members.clear();
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    fn overlap(&self, fs: &[u32]) -> usize {
        fs.iter().filter(|&&i| self.contains(i)).count()
    }
}

fn accepts(mode: Mode, sim_threshold: f64, acc: &Accumulator, fs: &[u32]) -> bool {
    let overlap = acc.overlap(fs);
    match mode {
        Mode::Greedy => overlap < fs.len(),
        Mode::SimScale => acc.len() == 0 || (overlap as f64) / (acc.len() as f64) < sim_threshold,
    }
}

/// Runs the multi-pass selection over pre-sorted `records`.
pub fn select(
    records: &[DataRecord],
    features: &HashMap<u64, FeatureSet>,
    cfg: &SelectConfig,
) -> Result<SelectionState> {
    if cfg.target_n == 0 {
        return Err(Error::InvalidArgument("target_n must be at least 1".into()));
    }
    if cfg.sim_threshold.is_nan() || cfg.sim_threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sim_threshold must be nonnegative, got {}",
            cfg.sim_threshold
        )));
    }
    let mut seen = HashSet::with_capacity(records.len());
    let mut sets: Vec<&[u32]> = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate record id {}",
                r.id
            )));
        }
        let fs = features.get(&r.id).ok_or(Error::MissingFeatures(r.id))?;
        sets.push(&fs.indices);
    }
    let max_index = sets
        .iter()
        .flat_map(|s| s.iter().copied())
        .max()
        .unwrap_or(0);
    let mut acc = Accumulator::new(max_index);

    let mut state = SelectionState::default();
    let mut pool: Vec<usize> = (0..records.len()).collect();
    while state.selected_ids.len() < cfg.target_n {
        state.pass_count += 1;
        acc.clear();
        let before = state.selected_ids.len();
        let mut rest = Vec::with_capacity(pool.len());
        for (pos, &cand) in pool.iter().enumerate() {
            if accepts(cfg.mode, cfg.sim_threshold, &acc, sets[cand]) {
                state.selected_ids.push(records[cand].id);
                state.accept_pass.push(state.pass_count);
                sets[cand].iter().for_each(|&i| acc.insert(i));
                if state.selected_ids.len() == cfg.target_n {
                    rest.extend_from_slice(&pool[pos + 1..]);
                    break;
                }
            } else {
                rest.push(cand);
            }
        }
        pool = rest;
        if state.selected_ids.len() == before {
            break;
        }
    }
    state.shortfall = cfg.target_n - state.selected_ids.len();
    let mut accumulated = acc.members.clone();
    accumulated.sort_unstable();
    state.accumulated = accumulated;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEntry {
    /// 1-based acceptance rank.
    pub rank: usize,
    pub id: u64,
    pub pass: usize,
    /// Indices new to the pass accumulator at acceptance.
    pub new_features: usize,
    /// Pass accumulator size after acceptance.
    pub accumulator_size: usize,
    /// Indices new to the union of everything selected before.
    pub global_new_features: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionReport {
    pub entries: Vec<ReportEntry>,
    pub total_union: usize,
}

/// Replays a selection against the feature sets.
pub fn selection_report(
    state: &SelectionState,
    features: &HashMap<u64, FeatureSet>,
) -> Result<SelectionReport> {
    let mut pass_acc: HashSet<u32> = HashSet::new();
    let mut global: HashSet<u32> = HashSet::new();
    let mut current_pass = 0;
    let mut entries = Vec::with_capacity(state.selected_ids.len());
    for (i, (&id, &pass)) in state
        .selected_ids
        .iter()
        .zip(&state.accept_pass)
        .enumerate()
    {
        if pass != current_pass {
            pass_acc.clear();
            current_pass = pass;
        }
        let fs = features.get(&id).ok_or(Error::MissingFeatures(id))?;
        let new_features = fs.indices.iter().filter(|&&j| pass_acc.insert(j)).count();
        let global_new_features = fs.indices.iter().filter(|&&j| global.insert(j)).count();
        entries.push(ReportEntry {
            rank: i + 1,
            id,
            pass,
            new_features,
            accumulator_size: pass_acc.len(),
            global_new_features,
        });
    }
    Ok(SelectionReport {
        entries,
        total_union: global.len(),
    })
}

pub const REPORT_HEADER: &str = "rank,id,pass,new_features,accumulator_size,global_new_features";

pub fn report_to_csv(report: &SelectionReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.rank, e.id, e.pass, e.new_features, e.accumulator_size, e.global_new_features
        );
    }
    out
}

/// Parses [`report_to_csv`] output. `total_union` is the sum of global-new counts.
pub fn report_from_csv(text: &str) -> Result<SelectionReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {REPORT_HEADER:?}"),
            })
        }
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<u64>()
                .map_err(|_| err(format!("bad number {:?}", fields[i])))
        };
        entries.push(ReportEntry {
            rank: num(0)? as usize,
            id: num(1)?,
            pass: num(2)? as usize,
            new_features: num(3)? as usize,
            accumulator_size: num(4)? as usize,
            global_new_features: num(5)? as usize,
        });
    }
    let total_union = entries.iter().map(|e| e.global_new_features).sum();
    Ok(SelectionReport {
        entries,
        total_union,
    })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DataRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.push(DataRecord::new(rec.id, rec.instruction, rec.response));
    }
    Ok(out)
}

pub fn records_to_jsonl(records: &[DataRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id,
            instruction: r.instruction.clone(),
            response: r.response.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: impl AsRef<Path>, records: &[DataRecord]) -> Result<()> {
    fs::write(path, records_to_jsonl(records))?;
    Ok(())
}

/// Indexes feature sets by sample id.
pub fn feature_map(sets: impl IntoIterator<Item = FeatureSet>) -> HashMap<u64, FeatureSet> {
    sets.into_iter().map(|fs| (fs.sample_id, fs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, len: usize) -> DataRecord {
        DataRecord::new(id, "x".repeat(len), "")
    }

    fn fmap(sets: &[(u64, &[u32])]) -> HashMap<u64, FeatureSet> {
        feature_map(sets.iter().map(|(id, s)| FeatureSet::new(*id, s.to_vec())))
    }

    fn cfg(mode: Mode, n: usize) -> SelectConfig {
        SelectConfig {
            mode,
            target_n: n,
            ..SelectConfig::default()
        }
    }

    #[test]
    fn sort_is_descending_and_stable() {
        let sorted = sort_records(vec![rec(0, 3), rec(1, 7), rec(2, 5)]);
        let ids: Vec<u64> = sorted.iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 2, 0]);
        let sorted = sort_records(vec![rec(0, 4), rec(1, 4), rec(2, 4)]);
        assert_eq!(
            sorted.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn token_metric_orders_by_words() {
        let a = DataRecord::new(0, "aaaaaaaaaaaa", "");
        let b = DataRecord::new(1, "a b c", "");
        let sorted = sort_records_by(vec![a, b], LengthMetric::Tokens);
        assert_eq!(sorted[0].id, 1);
    }

    #[test]
    fn greedy_hand_trace() {
        let records = vec![rec(0, 30), rec(1, 20), rec(2, 10)];
        let f = fmap(&[(0, &[1, 2]), (1, &[1, 2]), (2, &[3])]);
        let s = select(&records, &f, &cfg(Mode::Greedy, 2)).unwrap();
        assert_eq!(s.selected_ids, vec![0, 2]);
        assert_eq!(s.pass_count, 1);
        assert_eq!(s.shortfall, 0);
        assert_eq!(s.accumulated, vec![1, 2, 3]);
        let report = selection_report(&s, &f).unwrap();
        let counts: Vec<usize> = report.entries.iter().map(|e| e.new_features).collect();
        assert_eq!(counts, vec![2, 1]);
        assert_eq!(report.total_union, 3);
    }

    #[test]
    fn greedy_multi_pass_shortfall() {
        let records = vec![rec(0, 3), rec(1, 2), rec(2, 1)];
        let f = fmap(&[(0, &[1]), (1, &[2]), (2, &[3])]);
        let s = select(&records, &f, &cfg(Mode::Greedy, 5)).unwrap();
        assert_eq!(s.selected_ids, vec![0, 1, 2]);
        assert_eq!(s.pass_count, 2);
        assert_eq!(s.shortfall, 2);
    }

    #[test]
    fn greedy_second_pass_picks_up_rejects() {
        let records = vec![rec(0, 3), rec(1, 2), rec(2, 1)];
        let f = fmap(&[(0, &[1, 2]), (1, &[1, 2]), (2, &[3])]);
        let s = select(&records, &f, &cfg(Mode::Greedy, 3)).unwrap();
        assert_eq!(s.selected_ids, vec![0, 2, 1]);
        assert_eq!(s.accept_pass, vec![1, 1, 2]);
        assert_eq!(s.accumulated, vec![1, 2]);
    }

    #[test]
    fn simscale_first_candidate_and_empty_sets() {
        let records = vec![rec(0, 3), rec(1, 2), rec(2, 1)];
        let f = fmap(&[(0, &[]), (1, &[]), (2, &[4, 5])]);
        let s = select(&records, &f, &cfg(Mode::SimScale, 3)).unwrap();
        assert_eq!(s.selected_ids, vec![0, 1, 2]);
        // greedy never takes an empty set
        let g = select(&records, &f, &cfg(Mode::Greedy, 3)).unwrap();
        assert_eq!(g.selected_ids, vec![2]);
        assert_eq!(g.shortfall, 2);
    }

    #[test]
    fn simscale_ratio_is_strict() {
        // acc = {1,2,3,4,5}; candidate overlaps 4/5 = 0.8, not < 0.8
        let records = vec![rec(0, 3), rec(1, 2), rec(2, 1)];
        let f = fmap(&[
            (0, &[1, 2, 3, 4, 5]),
            (1, &[1, 2, 3, 4, 9]),
            (2, &[1, 2, 3, 7]),
        ]);
        let s = select(&records, &f, &cfg(Mode::SimScale, 2)).unwrap();
        assert_eq!(s.selected_ids, vec![0, 2]);
    }

    #[test]
    fn threshold_above_one_accepts_everything() {
        let records: Vec<DataRecord> = (0..5).map(|i| rec(i, 10)).collect();
        let f = fmap(&[(0, &[1]), (1, &[1]), (2, &[1]), (3, &[1]), (4, &[1])]);
        let c = SelectConfig {
            sim_threshold: 1.01,
            ..cfg(Mode::SimScale, 4)
        };
        let s = select(&records, &f, &c).unwrap();
        assert_eq!(s.selected_ids, vec![0, 1, 2, 3]);
        assert_eq!(s.pass_count, 1);
    }

    #[test]
    fn errors() {
        let records = vec![rec(0, 3), rec(1, 2)];
        let f = fmap(&[(0, &[1])]);
        assert!(matches!(
            select(&records, &f, &cfg(Mode::Greedy, 1)),
            Err(Error::MissingFeatures(1))
        ));
        assert!(select(&records, &f, &cfg(Mode::Greedy, 0)).is_err());
        let dup = vec![rec(0, 3), rec(0, 2)];
        assert!(select(&dup, &f, &cfg(Mode::Greedy, 1)).is_err());
    }

    #[test]
    fn empty_report() {
        let r = selection_report(&SelectionState::default(), &HashMap::new()).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.total_union, 0);
        assert_eq!(report_from_csv(&report_to_csv(&r)).unwrap(), r);
    }

    #[test]
    fn records_jsonl_round_trip() {
        let recs = vec![
            DataRecord::new(3, "Explain \"quotes\"\nplease", "ok"),
            DataRecord::new(9, "héllo", ""),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_records(&p, &recs).unwrap();
        let back = read_records(&p).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[1].instruction_length(), 5);
    }
}
