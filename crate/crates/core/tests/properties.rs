// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use saesel_core::extract::{extract_features, FeatureSet, Scope};
use saesel_core::metrics::{coverage_curve, pearson};
use saesel_core::sae::{decode, encode_relu, encode_topk, jump_relu, SaeParams, SparseLatents};
use saesel_core::selection::{
    feature_map, select, selection_report, DataRecord, Mode, SelectConfig,
};
use saesel_core::store::{chunk_tokens, decode_shard, encode_shard, ActivationShard};
use saesel_core::synth::{mmcs, oracle_report, oracle_select, GroundTruthDictionary};

fn shard_strategy() -> impl Strategy<Value = ActivationShard> {
    (1usize..6, prop::collection::vec(1usize..5, 0..6)).prop_flat_map(|(d, lens)| {
        let rows: usize = lens.iter().sum();
        let floats = prop::collection::vec(
            any::<f32>().prop_filter("finite", |v| v.is_finite()),
            rows * d,
        );
        let meta = prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,10}", 0..3);
        (floats, meta).prop_map(move |(data, meta)| {
            let mut offsets = vec![0];
            for l in &lens {
                offsets.push(offsets.last().unwrap() + l);
            }
            ActivationShard::new(d, data, offsets, meta).unwrap()
        })
    })
}

fn params_strategy(n: usize, d: usize, k: usize) -> impl Strategy<Value = SaeParams> {
    (
        prop::collection::vec(-1.0f64..1.0, n * d),
        prop::collection::vec(-1.0f64..1.0, n * d),
        prop::collection::vec(-0.5f64..0.5, d),
    )
        .prop_map(move |(we, wd, b)| {
            let mut p = SaeParams::zeros_topk(n, d, k).unwrap();
            p.w_enc = we;
            p.w_dec = wd;
            p.b_pre = b;
            p
        })
}

fn sparse_strategy(n: usize) -> impl Strategy<Value = SparseLatents> {
    prop::collection::vec(-20.0f64..20.0, n).prop_map(|v| SparseLatents::from_dense(&v))
}

proptest! {
    #[test]
    fn shard_round_trip_is_bitwise(s in shard_strategy()) {
        let bytes = encode_shard(&s).unwrap();
        let back = decode_shard(&bytes).unwrap();
        prop_assert_eq!(back.rows().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        s.rows().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, s);
    }

    #[test]
    fn chunk_count(tokens in prop::collection::vec(0u32..5, 0..200), seq_len in 1usize..12) {
        let bos = 0;
        let kept = tokens.iter().filter(|&&t| t != bos).count();
        let b = chunk_tokens(&tokens, seq_len, Some(bos));
        prop_assert_eq!(b.len(), kept / seq_len);
        prop_assert!(b.sequences.iter().all(|s| s.len() == seq_len && !s.contains(&bos)));
    }

    #[test]
    fn normalize_unit_and_idempotent(s in shard_strategy()) {
        let once = s.normalize_rows();
        for r in 0..once.num_rows() {
            let norm: f64 = once.row(r).iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            let orig: f64 = s.row(r).iter().map(|&v| f64::from(v).powi(2)).sum::<f64>();
            if orig == 0.0 {
                prop_assert_eq!(once.row(r), s.row(r));
            } else if orig.is_finite() && orig > 1e-30 {
                prop_assert!((norm - 1.0).abs() <= 1e-6, "norm {}", norm);
            }
        }
        let twice = once.normalize_rows();
        for (a, b) in once.rows().iter().zip(twice.rows()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn topk_has_exactly_k_nonzeros(p in params_strategy(12, 5, 4), x in prop::collection::vec(-2.0f64..2.0, 5)) {
        let z = encode_topk(&p, &x).unwrap();
        prop_assert_eq!(z.len(), 4);
        prop_assert!(z.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn relu_is_nonnegative(p in params_strategy(8, 3, 1), b in prop::collection::vec(-1.0f64..1.0, 8), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let mut r = SaeParams::zeros_relu(8, 3).unwrap();
        r.w_enc = p.w_enc;
        r.b_enc = Some(b);
        prop_assert!(encode_relu(&r, &x).unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn jump_relu_shrinks_monotonically(z in sparse_strategy(30), t1 in 0.0f64..15.0, dt in 0.0f64..10.0) {
        let lo: BTreeSet<usize> = jump_relu(&z, t1).indices.into_iter().collect();
        let hi: BTreeSet<usize> = jump_relu(&z, t1 + dt).indices.into_iter().collect();
        prop_assert!(hi.is_subset(&lo));
    }

    #[test]
    fn reconstruction_invariant_under_latent_permutation(
        p in params_strategy(10, 4, 3),
        x in prop::collection::vec(-2.0f64..2.0, 4),
        perm in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            q.w_enc[new * 4..(new + 1) * 4].copy_from_slice(p.encoder_row(old));
            q.w_dec[new * 4..(new + 1) * 4].copy_from_slice(p.decoder_column(old));
        }
        let a = decode(&p, &encode_topk(&p, &x).unwrap()).unwrap();
        let b = decode(&q, &encode_topk(&q, &x).unwrap()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_symmetric_and_affine_invariant(
        pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in 0.1f64..10.0, shift in -50.0f64..50.0,
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!(r.r.abs() <= 1.0);
            let swapped = pearson(&ys, &xs).unwrap();
            prop_assert!((r.r - swapped.r).abs() < 1e-9);
            let xt: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let moved = pearson(&xt, &ys).unwrap();
            prop_assert!((r.r - moved.r).abs() < 1e-9);
        }
    }

    #[test]
    fn mmcs_ignores_column_order_and_sign(
        cols in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
        flips in prop::collection::vec(any::<bool>(), 8),
    ) {
        let dict = GroundTruthDictionary { m: 2, d: 4, atoms: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8, 0.0] };
        let n = cols.len();
        let to_matrix = |cs: &[Vec<f64>]| {
            let mut w = vec![0.0; 4 * n];
            for (j, c) in cs.iter().enumerate() {
                for r in 0..4 { w[r * n + j] = c[r]; }
            }
            w
        };
        let Ok(base) = mmcs(&to_matrix(&cols), n, &dict) else { return Ok(()); };
        let mut changed: Vec<Vec<f64>> = cols.iter().rev().cloned().collect();
        for (c, &f) in changed.iter_mut().zip(&flips) {
            if f { c.iter_mut().for_each(|v| *v = -*v); }
        }
        prop_assert!((mmcs(&to_matrix(&changed), n, &dict).unwrap() - base).abs() < 1e-12);
    }
}

fn records_and_features() -> impl Strategy<Value = (Vec<DataRecord>, HashMap<u64, FeatureSet>)> {
    prop::collection::vec(
        (0usize..8, prop::collection::btree_set(0u32..12, 0..5)),
        1..25,
    )
    .prop_map(|items| {
        let records = items
            .iter()
            .enumerate()
            .map(|(i, (len, _))| DataRecord::new(i as u64, "a".repeat(*len), ""))
            .collect::<Vec<_>>();
        let records = saesel_core::sort_records(records);
        let fm = feature_map(
            items
                .into_iter()
                .enumerate()
                .map(|(i, (_, s))| FeatureSet::new(i as u64, s.into_iter().collect())),
        );
        (records, fm)
    })
}

proptest! {
    #[test]
    fn select_agrees_with_oracle(
        (records, features) in records_and_features(),
        simscale in any::<bool>(), n in 1usize..30, theta in 0.0f64..1.2,
    ) {
        let cfg = SelectConfig {
            mode: if simscale { Mode::SimScale } else { Mode::Greedy },
            target_n: n,
            sim_threshold: theta,
            ..SelectConfig::default()
        };
        let fast = select(&records, &features, &cfg).unwrap();
        let slow = oracle_select(&records, &features, &cfg).unwrap();
        prop_assert_eq!(&fast, &slow);
        prop_assert!(fast.selected_ids.len() <= n);
        prop_assert_eq!(fast.selected_ids.len() + fast.shortfall, n);
        let unique: BTreeSet<u64> = fast.selected_ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), fast.selected_ids.len());
        let rep = selection_report(&fast, &features).unwrap();
        prop_assert_eq!(&rep, &oracle_report(&fast, &features).unwrap());
        let curve = coverage_curve(&rep);
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert_eq!(curve.last().map(|c| c.1).unwrap_or(0), rep.total_union);
    }

    #[test]
    fn extraction_is_monotone_and_unions_tokens(
        p in params_strategy(12, 4, 3),
        rows in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 4), 1..10),
        t1 in 0.0f64..1.0, dt in 0.0f64..1.0,
    ) {
        let n_rows = rows.len();
        let shard = ActivationShard::new(4, rows.concat(), vec![0, n_rows], BTreeMap::new()).unwrap();
        let lo = &extract_features(&p, &shard, t1, Scope::Both).unwrap()[0];
        let hi = &extract_features(&p, &shard, t1 + dt, Scope::Both).unwrap()[0];
        prop_assert!(hi.indices.iter().all(|i| lo.indices.contains(i)));
        // per-token samples, unioned by hand
        let per_token = ActivationShard::new(4, rows.concat(), (0..=n_rows).collect(), BTreeMap::new()).unwrap();
        let singles = extract_features(&p, &per_token, t1, Scope::Both).unwrap();
        let union: BTreeSet<u32> = singles.iter().flat_map(|s| s.indices.iter().copied()).collect();
        prop_assert_eq!(union.into_iter().collect::<Vec<_>>(), lo.indices.clone());
        // appending a token never removes features
        let prefix = ActivationShard::new(4, rows[..n_rows - 1].concat(), if n_rows > 1 { vec![0, n_rows - 1] } else { vec![0] }, BTreeMap::new()).unwrap();
        if let Some(pre) = extract_features(&p, &prefix, t1, Scope::Both).unwrap().first() {
            prop_assert!(pre.len() <= lo.len());
        }
    }
}
