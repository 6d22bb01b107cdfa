// SPDX-License-Identifier: MIT OR Apache-2.0

//! Length/feature-count correlation, coverage curves and threshold sweeps.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{activation_count, extract_features, FeatureSet, Scope};
use crate::sae::SaeParams;
use crate::selection::{DataRecord, LengthMetric, SelectionReport};
use crate::store::ActivationShard;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub n_points: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Pearson correlation plus the least-squares line `y = slope * x + intercept`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson inputs",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let slope = sxy / sxx;
    Ok(CorrelationReport {
        r,
        n_points: xs.len(),
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthRow {
    pub id: u64,
    pub length: usize,
    pub count: usize,
}

/// Text length of a record under `scope`.
pub fn record_length(record: &DataRecord, metric: LengthMetric, scope: Scope) -> usize {
    let inst = metric.measure(&record.instruction);
    match scope {
        Scope::Instruction => inst,
        Scope::Both => inst + metric.measure(&record.response),
    }
}

/// Correlates text length with activated-feature count across records.
pub fn length_activation_report(
    records: &[DataRecord],
    features: &HashMap<u64, FeatureSet>,
    metric: LengthMetric,
    scope: Scope,
) -> Result<(CorrelationReport, Vec<LengthRow>)> {
    let rows = records
        .iter()
        .map(|r| {
            let fs = features.get(&r.id).ok_or(Error::MissingFeatures(r.id))?;
            Ok(LengthRow {
                id: r.id,
                length: record_length(r, metric, scope),
                count: activation_count(fs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    Ok((pearson(&xs, &ys)?, rows))
}

pub fn length_table_csv(rows: &[LengthRow]) -> String {
    let mut out = String::from("id,length,count\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.id, r.length, r.count);
    }
    out
}

/// Correlation summary as a small JSON object.
pub fn correlation_summary(
    report: &CorrelationReport,
    metric: LengthMetric,
    scope: Scope,
) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        #[serde(flatten)]
        report: &'a CorrelationReport,
        length_metric: &'static str,
        scope: &'static str,
    }
    let mut s = serde_json::to_string_pretty(&Summary {
        report,
        length_metric: metric.name(),
        scope: scope.name(),
    })
    .expect("plain struct serializes");
    s.push('\n');
    s
}

/// `(rank, cumulative union size)` in acceptance order.
pub fn coverage_curve(report: &SelectionReport) -> Vec<(usize, usize)> {
    report
        .entries
        .iter()
        .scan(0usize, |total, e| {
            *total += e.global_new_features;
            Some((e.rank, *total))
        })
        .collect()
}

pub fn coverage_csv(curve: &[(usize, usize)]) -> String {
    let mut out = String::from("rank,cumulative_union\n");
    for (rank, size) in curve {
        let _ = writeln!(out, "{rank},{size}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub mean_count: f64,
    pub empty_samples: usize,
    pub union_size: usize,
}

/// Feature statistics for each threshold, plus the feature sets themselves.
pub fn threshold_sweep(
    params: &SaeParams,
    shard: &ActivationShard,
    thetas: &[f64],
    scope: Scope,
) -> Result<Vec<(SweepRow, Vec<FeatureSet>)>> {
    thetas
        .iter()
        .map(|&theta| {
            let sets = extract_features(params, shard, theta, scope)?;
            let union: BTreeSet<u32> = sets
                .iter()
                .flat_map(|s| s.indices.iter().copied())
                .collect();
            let total: usize = sets.iter().map(activation_count).sum();
            let row = SweepRow {
                theta,
                mean_count: if sets.is_empty() {
                    0.0
                } else {
                    total as f64 / sets.len() as f64
                },
                empty_samples: sets.iter().filter(|s| s.is_empty()).count(),
                union_size: union.len(),
            };
            Ok((row, sets))
        })
        .collect()
}
