// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-sample activated-feature sets.
//!
//! Each token row is TopK-encoded, JumpReLU-thresholded, and a sample's
//! feature set is the union of surviving latent ids over its rows.
//!
//! Two optional shard metadata keys tie samples to records:
//! `sample_ids` (comma-separated record id per sample, default: the sample
//! index) and `instruction_rows` (comma-separated count of leading
//! instruction rows per sample, needed for [`Scope::Instruction`]).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::sae::{encode_topk, jump_relu, SaeParams, Variant};
use crate::store::ActivationShard;

pub const META_SAMPLE_IDS: &str = "sample_ids";
pub const META_INSTRUCTION_ROWS: &str = "instruction_rows";

/// Sorted, de-duplicated latent ids activated by one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet {
    pub sample_id: u64,
    pub indices: Vec<u32>,
}

impl FeatureSet {
    /// Sorts and de-duplicates `indices`.
    pub fn new(sample_id: u64, mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { sample_id, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn activation_count(fs: &FeatureSet) -> usize {
    fs.indices.len()
}

/// Which token rows of a sample contribute to its feature set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scope {
    Instruction,
    #[default]
    Both,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instruction" => Ok(Scope::Instruction),
            "both" => Ok(Scope::Both),
            other => Err(Error::InvalidArgument(format!(
                "scope must be instruction or both, got {other:?}"
            ))),
        }
    }
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Instruction => "instruction",
            Scope::Both => "both",
        }
    }
}

fn parse_list<T: FromStr>(shard: &ActivationShard, key: &str) -> Result<Option<Vec<T>>> {
    let Some(raw) = shard.meta().get(key) else {
        return Ok(None);
    };
    let items = if raw.is_empty() {
        Vec::new()
    } else {
        raw.split(',')
            .map(|s| {
                s.trim().parse::<T>().map_err(|_| {
                    Error::InvalidArgument(format!("shard meta {key}: bad entry {s:?}"))
                })
            })
            .collect::<Result<Vec<T>>>()?
    };
    check_dim("shard meta list", shard.num_samples(), items.len())?;
    Ok(Some(items))
}

/// Record id of every sample in the shard.
pub fn sample_ids(shard: &ActivationShard) -> Result<Vec<u64>> {
    Ok(parse_list(shard, META_SAMPLE_IDS)?
        .unwrap_or_else(|| (0..shard.num_samples() as u64).collect()))
}

/// Feature sets for every sample of `shard`, in sample order.
pub fn extract_features(
    params: &SaeParams,
    shard: &ActivationShard,
    theta: f64,
    scope: Scope,
) -> Result<Vec<FeatureSet>> {
    if params.variant != Variant::TopK {
        return Err(Error::WrongVariant { expected: "topk" });
    }
    check_dim("shard d vs checkpoint d", params.d, shard.d())?;
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be nonnegative, got {theta}"
        )));
    }
    let ids = sample_ids(shard)?;
    let limits: Option<Vec<usize>> = match scope {
        Scope::Both => None,
        Scope::Instruction => Some(parse_list(shard, META_INSTRUCTION_ROWS)?.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "instruction scope needs shard meta key {META_INSTRUCTION_ROWS}"
            ))
        })?),
    };
    (0..shard.num_samples())
        .into_par_iter()
        .map(|i| {
            let range = shard.sample_range(i);
            let end = match &limits {
                Some(l) => range.start + l[i].min(range.len()),
                None => range.end,
            };
            let mut active = BTreeSet::new();
            let mut x = vec![0.0; shard.d()];
            for r in range.start..end {
                for (xi, &v) in x.iter_mut().zip(shard.row(r)) {
                    *xi = f64::from(v);
                }
                let z = jump_relu(&encode_topk(params, &x)?, theta);
                active.extend(z.indices.iter().map(|&j| j as u32));
            }
            Ok(FeatureSet {
                sample_id: ids[i],
                indices: active.into_iter().collect(),
            })
        })
        .collect()
}

/// Text form: optional `#` header lines, then `sample_id<TAB>i,j,k` per sample.
pub fn format_feature_sets(sets: &[FeatureSet], header: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    for fs in sets {
        let _ = write!(out, "{}\t", fs.sample_id);
        for (i, idx) in fs.indices.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{idx}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_feature_sets(text: &str) -> Result<Vec<FeatureSet>> {
    let mut sets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let (id, list) = line
            .split_once('\t')
            .ok_or_else(|| err("expected sample_id<TAB>indices".into()))?;
        let sample_id = id
            .parse::<u64>()
            .map_err(|_| err(format!("bad sample id {id:?}")))?;
        let indices = if list.is_empty() {
            Vec::new()
        } else {
            list.split(',')
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|_| err(format!("bad index {s:?}")))
                })
                .collect::<Result<Vec<u32>>>()?
        };
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(err("indices must be strictly increasing".into()));
        }
        sets.push(FeatureSet { sample_id, indices });
    }
    Ok(sets)
}

pub fn write_feature_sets(
    path: impl AsRef<Path>,
    sets: &[FeatureSet],
    header: &[(&str, String)],
) -> Result<()> {
    fs::write(path, format_feature_sets(sets, header))?;
    Ok(())
}

pub fn read_feature_sets(path: impl AsRef<Path>) -> Result<Vec<FeatureSet>> {
    parse_feature_sets(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn identity(n: usize, k: usize) -> SaeParams {
        let mut p = SaeParams::zeros_topk(n, n, k).unwrap();
        for i in 0..n {
            p.w_enc[i * n + i] = 1.0;
            p.w_dec[i * n + i] = 1.0;
        }
        p
    }

    fn shard(rows: Vec<Vec<f32>>, offsets: Vec<usize>) -> ActivationShard {
        let d = rows[0].len();
        ActivationShard::new(d, rows.concat(), offsets, BTreeMap::new()).unwrap()
    }

    fn one_hot(n: usize, hot: &[usize]) -> Vec<f32> {
        let mut v = vec![0.0; n];
        for &h in hot {
            v[h] = 1.0;
        }
        v
    }

    #[test]
    fn single_token_top2() {
        let p = identity(4, 2);
        let s = shard(vec![vec![0.1, 0.9, 0.5, 0.2]], vec![0, 1]);
        let fs = extract_features(&p, &s, 0.0, Scope::Both).unwrap();
        assert_eq!(fs, vec![FeatureSet::new(0, vec![1, 2])]);
    }

    #[test]
    fn union_over_tokens() {
        let p = identity(10, 2);
        let s = shard(
            vec![one_hot(10, &[1, 5]), one_hot(10, &[5, 9]), vec![0.0; 10]],
            vec![0, 3],
        );
        let fs = extract_features(&p, &s, 0.0, Scope::Both).unwrap();
        assert_eq!(fs[0].indices, vec![1, 5, 9]);
        assert_eq!(activation_count(&fs[0]), 3);
    }

    #[test]
    fn huge_threshold_empties_everything() {
        let p = identity(4, 2);
        let s = shard(vec![vec![1.0, 2.0, 3.0, 4.0]; 3], vec![0, 1, 3]);
        let fs = extract_features(&p, &s, 1e9, Scope::Both).unwrap();
        assert_eq!(fs.len(), 2);
        assert!(fs.iter().all(FeatureSet::is_empty));
    }

    #[test]
    fn instruction_scope_uses_leading_rows() {
        let p = identity(6, 1);
        let mut s = shard(
            vec![one_hot(6, &[0]), one_hot(6, &[3]), one_hot(6, &[5])],
            vec![0, 3],
        );
        assert!(extract_features(&p, &s, 0.0, Scope::Instruction).is_err());
        s.meta_mut()
            .insert(META_INSTRUCTION_ROWS.into(), "2".into());
        s.meta_mut().insert(META_SAMPLE_IDS.into(), "42".into());
        let fs = extract_features(&p, &s, 0.0, Scope::Instruction).unwrap();
        assert_eq!(fs, vec![FeatureSet::new(42, vec![0, 3])]);
        let fs = extract_features(&p, &s, 0.0, Scope::Both).unwrap();
        assert_eq!(fs[0].indices, vec![0, 3, 5]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = identity(4, 2);
        let s = shard(vec![vec![1.0, 2.0]], vec![0, 1]);
        assert!(matches!(
            extract_features(&p, &s, 0.0, Scope::Both),
            Err(Error::DimensionMismatch {
                expected: 4,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn text_format() {
        let sets = vec![
            FeatureSet::new(0, vec![9, 1, 5]),
            FeatureSet::new(7, vec![]),
        ];
        let text = format_feature_sets(&sets, &[("threshold", "10".into())]);
        assert_eq!(text, "# threshold=10\n0\t1,5,9\n7\t\n");
        assert_eq!(parse_feature_sets(&text).unwrap(), sets);
        assert!(parse_feature_sets("0\t5,1\n").is_err());
        assert!(parse_feature_sets("x\t1\n").is_err());
    }
}
