// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic ground truth: superposition data from a known dictionary,
//! record corpora with length-driven feature sets, dictionary-recovery
//! scoring and a reference selection implementation.

mod oracle;

pub use oracle::{oracle_report, oracle_select};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::extract::{FeatureSet, META_INSTRUCTION_ROWS, META_SAMPLE_IDS};
use crate::sae::{dot, SaeParams};
use crate::selection::DataRecord;
use crate::store::ActivationShard;

/// Attempts per atom before giving up on finding a non-duplicate direction.
const RESAMPLE_BUDGET: usize = 10_000;
const MAX_ABS_COS: f64 = 0.95;

/// `m` unit-norm atoms in `d` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDictionary {
    pub m: usize,
    pub d: usize,
    pub atoms: Vec<f64>,
}

impl GroundTruthDictionary {
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.d..(i + 1) * self.d]
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("finite nonnegative sigma")
}

/// Random unit atoms; any atom within |cos| >= 0.95 of an earlier one is redrawn.
pub fn gen_dictionary(m: usize, d: usize, seed: u64) -> Result<GroundTruthDictionary> {
    if m == 0 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "dictionary needs m >= 1 and d >= 2 (m={m}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = normal(1.0);
    let mut atoms: Vec<f64> = Vec::with_capacity(m * d);
    let mut v = vec![0.0; d];
    for i in 0..m {
        let mut placed = false;
        for _ in 0..RESAMPLE_BUDGET {
            v.iter_mut().for_each(|x| *x = gauss.sample(&mut rng));
            let norm = dot(&v, &v).sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let clash = atoms
                .chunks_exact(d)
                .any(|a| dot(a, &v).abs() >= MAX_ABS_COS);
            if !clash {
                atoms.extend_from_slice(&v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!(
                "could not place atom {i} of {m} in d={d}: m too large for d"
            )));
        }
    }
    Ok(GroundTruthDictionary { m, d, atoms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub k_active: usize,
    pub num_samples: usize,
    /// Inclusive token-count range per sample.
    pub tokens_per_sample: (usize, usize),
    pub noise_sigma: f64,
    /// Inclusive coefficient range.
    pub coef_range: (f64, f64),
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            k_active: 3,
            num_samples: 100,
            tokens_per_sample: (1, 20),
            noise_sigma: 0.01,
            coef_range: (0.5, 1.5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSamples {
    pub shard: ActivationShard,
    /// Union of atom ids used by each sample.
    pub true_supports: Vec<Vec<u32>>,
    /// Atom ids of every token row.
    pub token_atoms: Vec<Vec<u32>>,
}

/// Each token row is a sum of `k_active` distinct atoms with uniform
/// coefficients plus Gaussian noise.
pub fn gen_samples(
    dict: &GroundTruthDictionary,
    spec: &SampleSpec,
    seed: u64,
) -> Result<SynthSamples> {
    let (lo, hi) = spec.tokens_per_sample;
    if spec.k_active == 0 || spec.k_active > dict.m {
        return Err(Error::InvalidArgument(format!(
            "k_active={} must be in 1..={}",
            spec.k_active, dict.m
        )));
    }
    if lo == 0 || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "bad token range {lo}..={hi}"
        )));
    }
    let (c_lo, c_hi) = spec.coef_range;
    let coef = Uniform::new_inclusive(c_lo, c_hi)
        .map_err(|e| Error::InvalidArgument(format!("coefficient range: {e}")))?;
    if spec.noise_sigma.is_nan() || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(
            "noise_sigma must be nonnegative".into(),
        ));
    }
    let noise = normal(spec.noise_sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let d = dict.d;
    let mut rows: Vec<f32> = Vec::new();
    let mut offsets = vec![0usize];
    let mut supports = Vec::with_capacity(spec.num_samples);
    let mut token_atoms = Vec::new();
    let mut x = vec![0.0f64; d];
    for _ in 0..spec.num_samples {
        let tokens = rng.random_range(lo..=hi);
        let mut support = BTreeSet::new();
        for _ in 0..tokens {
            let mut chosen: Vec<u32> = sample(&mut rng, dict.m, spec.k_active)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            chosen.sort_unstable();
            x.iter_mut().for_each(|v| *v = 0.0);
            for &a in &chosen {
                let c = coef.sample(&mut rng);
                for (xi, ai) in x.iter_mut().zip(dict.atom(a as usize)) {
                    *xi += c * ai;
                }
            }
            if spec.noise_sigma > 0.0 {
                x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            rows.extend(x.iter().map(|&v| v as f32));
            support.extend(chosen.iter().copied());
            token_atoms.push(chosen);
        }
        offsets.push(offsets.last().copied().unwrap_or(0) + tokens);
        supports.push(support.into_iter().collect());
    }
    let mut meta = BTreeMap::new();
    meta.insert("source".to_string(), "synth".to_string());
    meta.insert("seed".to_string(), seed.to_string());
    let shard = ActivationShard::new(d, rows, offsets, meta)?;
    Ok(SynthSamples {
        shard,
        true_supports: supports,
        token_atoms,
    })
}

/// Mean over atoms of the best |cosine| against any nonzero decoder column.
///
/// `w_dec` is the `(d, n)` decoder, row-major.
pub fn mmcs(w_dec: &[f64], n: usize, dict: &GroundTruthDictionary) -> Result<f64> {
    let d = dict.d;
    if w_dec.len() != d * n {
        return Err(Error::DimensionMismatch {
            context: "mmcs decoder",
            expected: d * n,
            actual: w_dec.len(),
        });
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let col: Vec<f64> = (0..d).map(|r| w_dec[r * n + j]).collect();
        let norm = dot(&col, &col).sqrt();
        if norm > 0.0 {
            columns.push(col.into_iter().map(|v| v / norm).collect());
        }
    }
    if columns.is_empty() {
        return Err(Error::DegenerateInput(
            "decoder has no nonzero column".into(),
        ));
    }
    let total: f64 = (0..dict.m)
        .map(|i| {
            let atom = dict.atom(i);
            let an = dot(atom, atom).sqrt();
            columns
                .iter()
                .map(|c| (dot(c, atom) / an).abs())
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / dict.m as f64)
}

pub fn mmcs_params(params: &SaeParams, dict: &GroundTruthDictionary) -> Result<f64> {
    mmcs(&params.decoder_matrix(), params.n, dict)
}

/// Shape of the synthetic record vocabulary used by [`gen_records`].
const VOCAB: usize = 3000;
const LATENTS: u32 = 8192;
const FEATURES_PER_WORD: usize = 2;

/// Synthetic records whose feature sets are the union of per-word features,
/// so larger texts activate more features with diminishing returns.
pub fn gen_records(num: usize, seed: u64) -> Result<(Vec<DataRecord>, HashMap<u64, FeatureSet>)> {
    if num == 0 {
        return Err(Error::InvalidArgument("num must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_features: Vec<[u32; FEATURES_PER_WORD]> = (0..VOCAB)
        .map(|_| std::array::from_fn(|_| rng.random_range(0..LATENTS)))
        .collect();
    // squared uniform skews toward frequent (low-id) words
    let draw_word = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        ((u * u) * VOCAB as f64) as usize
    };
    let mut records = Vec::with_capacity(num);
    let mut features = HashMap::with_capacity(num);
    for id in 0..num as u64 {
        let inst_words = rng.random_range(3..=120);
        let resp_words = rng.random_range(1..=20);
        let mut idx = BTreeSet::new();
        let mut text = |count: usize, rng: &mut ChaCha8Rng| {
            let mut s = String::new();
            for i in 0..count {
                let w = draw_word(rng);
                idx.extend(word_features[w]);
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "w{w}");
            }
            s
        };
        let instruction = text(inst_words, &mut rng);
        let response = text(resp_words, &mut rng);
        records.push(DataRecord::new(id, instruction, response));
        features.insert(id, FeatureSet::new(id, idx.into_iter().collect()));
    }
    Ok((records, features))
}

/// Aligned shard, records and ledger for an end-to-end pipeline run.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dictionary: GroundTruthDictionary,
    pub samples: SynthSamples,
    pub records: Vec<DataRecord>,
    pub instruction_rows: Vec<usize>,
}

/// Generates superposition samples and one record per sample. Every token
/// row becomes one whitespace word naming its atoms; the leading
/// `instruction_rows[i]` rows of sample `i` form the instruction.
pub fn gen_corpus(m: usize, d: usize, spec: &SampleSpec, seed: u64) -> Result<SynthCorpus> {
    let dictionary = gen_dictionary(m, d, seed)?;
    let mut samples = gen_samples(&dictionary, spec, seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let shard = &samples.shard;
    let mut records = Vec::with_capacity(shard.num_samples());
    let mut instruction_rows = Vec::with_capacity(shard.num_samples());
    for i in 0..shard.num_samples() {
        let range = shard.sample_range(i);
        let inst = rng.random_range(1..=range.len());
        let word = |r: usize| {
            let atoms: Vec<String> = samples.token_atoms[r].iter().map(u32::to_string).collect();
            format!("a{}", atoms.join("_"))
        };
        let instruction: Vec<String> = (range.start..range.start + inst).map(word).collect();
        let response: Vec<String> = (range.start + inst..range.end).map(word).collect();
        records.push(DataRecord::new(
            i as u64,
            instruction.join(" "),
            response.join(" "),
        ));
        instruction_rows.push(inst);
    }
    let join = |v: Vec<String>| v.join(",");
    let meta = samples.shard.meta_mut();
    meta.insert(
        META_SAMPLE_IDS.into(),
        join(records.iter().map(|r| r.id.to_string()).collect()),
    );
    meta.insert(
        META_INSTRUCTION_ROWS.into(),
        join(instruction_rows.iter().map(usize::to_string).collect()),
    );
    meta.insert("atoms".into(), m.to_string());
    Ok(SynthCorpus {
        dictionary,
        samples,
        records,
        instruction_rows,
    })
}

/// Ground-truth ledger CSV: one line per sample.
pub fn ledger_csv(corpus: &SynthCorpus) -> String {
    let mut out = String::from("sample_id,tokens,instruction_rows,support_size,support\n");
    let shard = &corpus.samples.shard;
    for (i, support) in corpus.samples.true_supports.iter().enumerate() {
        let ids: Vec<String> = support.iter().map(u32::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            corpus.records[i].id,
            shard.sample_range(i).len(),
            corpus.instruction_rows[i],
            support.len(),
            ids.join(";")
        );
    }
    out
}
