// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK-SAE training.
//!
//! Each optimizer step minimises
//!
//! ```text
//! L = mean_i ( ||x_i - x_hat_i||^2 + aux_coef * ||e_i - e_hat_i||^2 )
//! ```
//!
//! where `e_i = x_i - x_hat_i` and `e_hat_i` decodes the `k_aux` largest
//! pre-activations among dead latents (no `b_pre`). The gradient flows
//! through `e_i` as well, so the analytic gradient is exactly that of `L`.
//!
//! Decoder columns are kept at unit norm: the gradient component parallel to
//! each column is removed before the Adam update and columns are rescaled
//! after it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::optim::{AdamConfig, Moments};
use crate::sae::{dot, topk_indices, topk_mask, SaeParams, Variant};
use crate::store::ActivationShard;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Rows per gradient-accumulation slice.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub aux_coef: f64,
    /// A latent is dead once it has gone more than this many tokens without firing.
    pub dead_token_threshold: u64,
    pub k_aux: usize,
    pub seed: u64,
    /// Slices of `batch_size` rows accumulated into one optimizer step.
    pub grad_acc_steps: usize,
    /// Sequential sub-slices inside each accumulation slice.
    pub micro_acc_steps: usize,
    /// Exact number of optimizer steps; overrides `epochs` when set.
    pub max_steps: Option<usize>,
    /// Learn the `b_pre` offset. When false it stays at zero.
    pub learn_pre_bias: bool,
    /// Scale every input row to unit norm before training.
    pub normalize_inputs: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            d: 64,
            k: 128,
            batch_size: 4096,
            lr: 7e-5,
            warmup_ratio: 0.5,
            epochs: 4,
            aux_coef: 1.0 / 32.0,
            dead_token_threshold: 10_000_000,
            k_aux: 256,
            seed: 0,
            grad_acc_steps: 1,
            micro_acc_steps: 1,
            max_steps: None,
            learn_pre_bias: true,
            normalize_inputs: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.d == 0 {
            return bad(format!(
                "n and d must be positive (n={}, d={})",
                self.n, self.d
            ));
        }
        if self.k == 0 || self.k > self.n {
            return bad(format!("k={} must be in 1..={}", self.k, self.n));
        }
        if self.k_aux == 0 || self.k_aux > self.n {
            return bad(format!("k_aux={} must be in 1..={}", self.k_aux, self.n));
        }
        if self.batch_size == 0 || self.grad_acc_steps == 0 || self.micro_acc_steps == 0 {
            return bad("batch_size, grad_acc_steps and micro_acc_steps must be positive".into());
        }
        if self.epochs == 0 || self.max_steps == Some(0) {
            return bad("training needs at least one step".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio));
        }
        if !(self.aux_coef >= 0.0 && self.aux_coef.is_finite()) {
            return bad(format!(
                "aux_coef must be nonnegative, got {}",
                self.aux_coef
            ));
        }
        if self.dead_token_threshold == 0 {
            return bad("dead_token_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn rows_per_step(&self) -> usize {
        self.batch_size * self.grad_acc_steps
    }
}

/// Tokens elapsed since each latent last entered a TopK set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLatentTracker {
    pub tokens_since_fire: Vec<u64>,
}

impl DeadLatentTracker {
    pub fn new(n: usize) -> Self {
        Self {
            tokens_since_fire: vec![0; n],
        }
    }

    pub fn dead_mask(&self, threshold: u64) -> Vec<bool> {
        self.tokens_since_fire
            .iter()
            .map(|&c| c > threshold)
            .collect()
    }

    pub fn num_dead(&self, threshold: u64) -> usize {
        self.tokens_since_fire
            .iter()
            .filter(|&&c| c > threshold)
            .count()
    }

    /// Resets fired latents, advances the rest by `tokens`.
    pub fn update(&mut self, fired: &[bool], tokens: u64) {
        for (c, &f) in self.tokens_since_fire.iter_mut().zip(fired) {
            *c = if f { 0 } else { c.saturating_add(tokens) };
        }
    }
}

/// Per-tensor gradients (or any tensor-shaped buffer) matching [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_pre: Vec<f64>,
}

impl Grads {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            w_enc: vec![0.0; n * d],
            w_dec: vec![0.0; n * d],
            b_pre: vec![0.0; d],
        }
    }

    fn add(&mut self, other: &Grads) {
        for (a, b) in [
            (&mut self.w_enc, &other.w_enc),
            (&mut self.w_dec, &other.w_dec),
            (&mut self.b_pre, &other.b_pre),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        self.w_enc
            .iter_mut()
            .chain(self.w_dec.iter_mut())
            .chain(self.b_pre.iter_mut())
            .for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub w_enc: Moments,
    pub w_dec: Moments,
    pub b_pre: Moments,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &SaeParams) -> Self {
        Self {
            w_enc: Moments::zeros(params.w_enc.len()),
            w_dec: Moments::zeros(params.w_dec.len()),
            b_pre: Moments::zeros(params.b_pre.len()),
            step: 0,
        }
    }
}

/// Statistics for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    /// Total loss: mean reconstruction plus `aux_coef` times mean auxiliary loss.
    pub loss: f64,
    pub recon: f64,
    pub aux: f64,
    pub lr: f64,
}

/// Tied-transpose initialisation: `W_enc ~ N(0, 1/d)`, `W_dec = W_enc^T`
/// with unit columns, `b_pre = 0`.
pub fn init_params(cfg: &TrainConfig) -> Result<SaeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_params_with(cfg, &mut rng)
}

fn init_params_with(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<SaeParams> {
    cfg.validate()?;
    let mut p = SaeParams::zeros_topk(cfg.n, cfg.d, cfg.k)?;
    let normal = Normal::new(0.0, 1.0 / (cfg.d as f64).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for v in p.w_enc.iter_mut() {
        *v = normal.sample(rng);
    }
    // decoder column j is encoder row j, stored contiguously
    p.w_dec.copy_from_slice(&p.w_enc);
    p.normalize_decoder();
    Ok(p)
}

/// Linear warmup over the first `warmup_ratio * total_steps` steps, then constant.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument(
            "total_steps must be positive".into(),
        ));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let warmup = cfg.warmup_ratio * total_steps as f64;
    if warmup <= 0.0 || step as f64 >= warmup {
        Ok(cfg.lr)
    } else {
        Ok(cfg.lr * step as f64 / warmup)
    }
}

/// Auxiliary loss for one row: residual `x - x_hat` reconstructed by the
/// top `k_aux` dead latents (ranked by pre-activation).
pub fn aux_loss(
    params: &SaeParams,
    x: &[f64],
    x_hat: &[f64],
    tracker: &DeadLatentTracker,
    cfg: &TrainConfig,
) -> Result<f64> {
    check_dim("aux input", params.d, x.len())?;
    check_dim("aux reconstruction", params.d, x_hat.len())?;
    check_dim("dead tracker", params.n, tracker.tokens_since_fire.len())?;
    let dead = tracker.dead_mask(cfg.dead_token_threshold);
    let mut pre = vec![0.0; params.n];
    params.pre_activations(x, &mut pre)?;
    let residual: Vec<f64> = x.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let chosen = dead_topk(&pre, &dead, cfg.k_aux);
    if chosen.is_empty() {
        return Ok(0.0);
    }
    let mut r = residual;
    for &j in &chosen {
        for (ri, w) in r.iter_mut().zip(params.decoder_column(j)) {
            *ri -= w * pre[j];
        }
    }
    Ok(dot(&r, &r))
}

/// Top `k_aux` dead latents by pre-activation, ascending index order.
fn dead_topk(pre: &[f64], dead: &[bool], k_aux: usize) -> Vec<usize> {
    let dead_ids: Vec<usize> = (0..pre.len()).filter(|&j| dead[j]).collect();
    if dead_ids.is_empty() {
        return dead_ids;
    }
    let vals: Vec<f64> = dead_ids.iter().map(|&j| pre[j]).collect();
    let take = k_aux.min(dead_ids.len());
    topk_indices(&vals, take)
        .into_iter()
        .map(|i| dead_ids[i])
        .collect()
}

/// Sums of losses, unscaled gradient sums, and the fired mask for a slice of rows.
struct Partial {
    recon: f64,
    aux: f64,
    grads: Grads,
    fired: Vec<bool>,
}

fn row_grads(
    params: &SaeParams,
    rows: &[f64],
    dead: &[bool],
    any_dead: bool,
    cfg: &TrainConfig,
) -> Partial {
    let (n, d) = (params.n, params.d);
    let mut out = Partial {
        recon: 0.0,
        aux: 0.0,
        grads: Grads::zeros(n, d),
        fired: vec![false; n],
    };
    let mut pre = vec![0.0; n];
    let mut xc = vec![0.0; d];
    let mut e = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut gh = vec![0.0; d];
    let mut gaux = vec![0.0; d];
    for x in rows.chunks_exact(d) {
        for ((c, xi), b) in xc.iter_mut().zip(x).zip(&params.b_pre) {
            *c = xi - b;
        }
        for (j, p) in pre.iter_mut().enumerate() {
            *p = dot(params.encoder_row(j), &xc);
        }
        let z = topk_mask(&pre, params.k).expect("k validated");
        e.copy_from_slice(&xc);
        for (j, v) in z.iter() {
            out.fired[j] = true;
            for (ei, w) in e.iter_mut().zip(params.decoder_column(j)) {
                *ei -= w * v;
            }
        }
        out.recon += dot(&e, &e);

        let aux_set = if any_dead {
            dead_topk(&pre, dead, cfg.k_aux)
        } else {
            Vec::new()
        };
        for i in 0..d {
            gh[i] = -2.0 * e[i];
        }
        if !aux_set.is_empty() {
            r.copy_from_slice(&e);
            for &j in &aux_set {
                for (ri, w) in r.iter_mut().zip(params.decoder_column(j)) {
                    *ri -= w * pre[j];
                }
            }
            out.aux += dot(&r, &r);
            for i in 0..d {
                gaux[i] = -2.0 * cfg.aux_coef * r[i];
                gh[i] += gaux[i];
            }
        }

        // dL/dxc accumulates W_enc^T g_pre; b_pre sees gh - that.
        let gb = &mut out.grads.b_pre;
        gb.iter_mut().zip(&gh).for_each(|(g, h)| *g += h);
        let backprop = |j: usize, value: f64, upstream: &[f64], grads: &mut Grads| {
            let col = params.decoder_column(j);
            let g_pre = dot(col, upstream);
            let gd = &mut grads.w_dec[j * d..(j + 1) * d];
            gd.iter_mut()
                .zip(upstream)
                .for_each(|(g, u)| *g += value * u);
            let ge = &mut grads.w_enc[j * d..(j + 1) * d];
            ge.iter_mut().zip(&xc).for_each(|(g, c)| *g += g_pre * c);
            let row = params.encoder_row(j);
            grads
                .b_pre
                .iter_mut()
                .zip(row)
                .for_each(|(g, w)| *g -= g_pre * w);
        };
        for (j, v) in z.iter() {
            backprop(j, v, &gh, &mut out.grads);
        }
        for &j in &aux_set {
            backprop(j, pre[j], &gaux, &mut out.grads);
        }
    }
    out
}

/// Rows handled by one parallel task; depends only on the slice length so the
/// reduction order is fixed.
fn task_rows(num_rows: usize) -> usize {
    num_rows.div_ceil(16).max(32)
}

/// Mean losses and the exact gradient of the total loss over `rows`, plus the
/// latents that fired. Decoder-gradient projection is not applied.
pub fn compute_gradients(
    params: &SaeParams,
    rows: &[f64],
    tracker: &DeadLatentTracker,
    cfg: &TrainConfig,
) -> Result<(f64, f64, Grads, Vec<bool>)> {
    let (recon, aux, grads, fired, count) = accumulate(params, rows, tracker, cfg, 1, 1)?;
    let inv = 1.0 / count as f64;
    Ok((recon * inv, aux * inv, grads, fired))
}

fn accumulate(
    params: &SaeParams,
    rows: &[f64],
    tracker: &DeadLatentTracker,
    cfg: &TrainConfig,
    grad_acc_steps: usize,
    micro_acc_steps: usize,
) -> Result<(f64, f64, Grads, Vec<bool>, usize)> {
    if params.variant != Variant::TopK {
        return Err(Error::WrongVariant { expected: "topk" });
    }
    check_dim("dead tracker", params.n, tracker.tokens_since_fire.len())?;
    let d = params.d;
    if rows.is_empty() || !rows.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            context: "batch",
            expected: d,
            actual: rows.len(),
        });
    }
    let num_rows = rows.len() / d;
    let dead = tracker.dead_mask(cfg.dead_token_threshold);
    let any_dead = dead.iter().any(|&b| b);

    let mut total = Partial {
        recon: 0.0,
        aux: 0.0,
        grads: Grads::zeros(params.n, d),
        fired: vec![false; params.n],
    };
    let acc_rows = num_rows.div_ceil(grad_acc_steps);
    for acc in rows.chunks(acc_rows * d) {
        let acc_n = acc.len() / d;
        let micro_rows = acc_n.div_ceil(micro_acc_steps);
        for micro in acc.chunks(micro_rows * d) {
            let per_task = task_rows(micro.len() / d) * d;
            let parts: Vec<Partial> = micro
                .par_chunks(per_task)
                .map(|chunk| row_grads(params, chunk, &dead, any_dead, cfg))
                .collect();
            for p in parts {
                total.recon += p.recon;
                total.aux += p.aux;
                total.grads.add(&p.grads);
                total
                    .fired
                    .iter_mut()
                    .zip(&p.fired)
                    .for_each(|(a, &b)| *a |= b);
            }
        }
    }
    let inv = 1.0 / num_rows as f64;
    total.grads.scale(inv);
    Ok((total.recon, total.aux, total.grads, total.fired, num_rows))
}

/// Mean reconstruction loss of `params` over flat `rows`.
pub fn evaluate(params: &SaeParams, rows: &[f64]) -> Result<f64> {
    let d = params.d;
    if rows.is_empty() || !rows.len().is_multiple_of(d) {
        return Err(Error::EmptyDataset);
    }
    let per_task = task_rows(rows.len() / d) * d;
    let sums: Vec<Result<f64>> = rows
        .par_chunks(per_task)
        .map(|chunk| {
            let mut s = 0.0;
            for x in chunk.chunks_exact(d) {
                let z = crate::sae::encode_topk(params, x)?;
                let xh = crate::sae::decode(params, &z)?;
                s += crate::sae::recon_loss(x, &xh)?;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / (rows.len() / d) as f64)
}

/// One optimizer step over `batch` (flat rows). `step` is the 1-based step
/// index used for the learning-rate schedule.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut SaeParams,
    opt: &mut OptState,
    batch: &[f64],
    tracker: &mut DeadLatentTracker,
    cfg: &TrainConfig,
    step: usize,
    total_steps: usize,
) -> Result<StepStats> {
    let lr = lr_at(step, total_steps, cfg)?;
    let (recon_sum, aux_sum, mut grads, fired, count) = accumulate(
        params,
        batch,
        tracker,
        cfg,
        cfg.grad_acc_steps,
        cfg.micro_acc_steps,
    )?;
    let recon = recon_sum / count as f64;
    let aux = aux_sum / count as f64;
    let loss = recon + cfg.aux_coef * aux;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss, aux });
    }

    let d = params.d;
    for (g, w) in grads
        .w_dec
        .chunks_exact_mut(d)
        .zip(params.w_dec.chunks_exact(d))
    {
        let along = dot(g, w);
        g.iter_mut().zip(w).for_each(|(gi, wi)| *gi -= along * wi);
    }
    if !cfg.learn_pre_bias {
        grads.b_pre.iter_mut().for_each(|g| *g = 0.0);
    }

    opt.step += 1;
    let t = opt.step;
    opt.w_enc
        .update(&mut params.w_enc, &grads.w_enc, lr, t, &cfg.adam);
    opt.w_dec
        .update(&mut params.w_dec, &grads.w_dec, lr, t, &cfg.adam);
    opt.b_pre
        .update(&mut params.b_pre, &grads.b_pre, lr, t, &cfg.adam);
    params.normalize_decoder();
    tracker.update(&fired, count as u64);

    Ok(StepStats {
        step,
        loss,
        recon,
        aux,
        lr,
    })
}

/// Flattens shard rows to `f64`, optionally unit-normalising each row.
pub fn collect_rows(shards: &[ActivationShard], d: usize, normalize: bool) -> Result<Vec<f64>> {
    let mut rows = Vec::new();
    for shard in shards {
        check_dim("shard d", d, shard.d())?;
        let shard = if normalize {
            shard.normalize_rows()
        } else {
            shard.clone()
        };
        rows.extend(shard.rows().iter().map(|&v| f64::from(v)));
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SaeParams,
    pub history: Vec<StepStats>,
    pub tracker: DeadLatentTracker,
}

/// Number of optimizer steps `train` will run for `num_rows` input rows.
pub fn total_steps(num_rows: usize, cfg: &TrainConfig) -> usize {
    let per_epoch = num_rows.div_ceil(cfg.rows_per_step()).max(1);
    cfg.max_steps.unwrap_or(per_epoch * cfg.epochs)
}

/// Trains a TopK SAE from scratch. Deterministic for a fixed `cfg.seed`.
pub fn train(shards: &[ActivationShard], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(shards, cfg, |_| {})
}

pub fn train_with_progress(
    shards: &[ActivationShard],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&StepStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rows = collect_rows(shards, cfg.d, cfg.normalize_inputs)?;
    let num_rows = rows.len() / cfg.d;
    if num_rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params_with(cfg, &mut rng)?;
    let mut opt = OptState::new(&params);
    let mut tracker = DeadLatentTracker::new(cfg.n);
    let total = total_steps(num_rows, cfg);
    let rps = cfg.rows_per_step();

    let mut order: Vec<usize> = (0..num_rows).collect();
    let mut cursor = num_rows;
    let mut batch = Vec::with_capacity(rps.min(num_rows) * cfg.d);
    let mut history = Vec::with_capacity(total);
    for step in 1..=total {
        if cursor >= num_rows {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + rps).min(num_rows);
        batch.clear();
        for &r in &order[cursor..end] {
            batch.extend_from_slice(&rows[r * cfg.d..(r + 1) * cfg.d]);
        }
        cursor = end;
        let stats = train_step(
            &mut params,
            &mut opt,
            &batch,
            &mut tracker,
            cfg,
            step,
            total,
        )?;
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        history,
        tracker,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            n: 8,
            d: 4,
            k: 2,
            k_aux: 4,
            batch_size: 16,
            lr: 1e-3,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_tied() {
        let cfg = small_cfg();
        let a = init_params(&cfg).unwrap();
        assert_eq!(a, init_params(&cfg).unwrap());
        for j in 0..cfg.n {
            let col = a.decoder_column(j);
            assert!((dot(col, col).sqrt() - 1.0).abs() < 1e-6);
            let row = a.encoder_row(j);
            let norm = dot(row, row).sqrt();
            for i in 0..cfg.d {
                assert!((col[i] - row[i] / norm).abs() < 1e-12);
            }
        }
        assert!(a.b_pre.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            lr: 2.0,
            warmup_ratio: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, 100, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(25, 100, &cfg).unwrap(), 1.0);
        assert_eq!(lr_at(50, 100, &cfg).unwrap(), 2.0);
        assert_eq!(lr_at(100, 100, &cfg).unwrap(), 2.0);
        assert!(lr_at(0, 0, &cfg).is_err());
        let flat = TrainConfig {
            warmup_ratio: 0.0,
            ..cfg
        };
        assert_eq!(lr_at(0, 10, &flat).unwrap(), 2.0);
    }

    #[test]
    fn tracker_counts_tokens() {
        let mut t = DeadLatentTracker::new(3);
        t.update(&[true, false, false], 10);
        t.update(&[false, false, true], 5);
        assert_eq!(t.tokens_since_fire, vec![5, 15, 0]);
        assert_eq!(t.dead_mask(9), vec![false, true, false]);
    }

    #[test]
    fn aux_loss_zero_cases() {
        let cfg = small_cfg();
        let p = init_params(&cfg).unwrap();
        let x = [0.3, -0.1, 0.7, 0.2];
        let xh = [0.1, 0.1, 0.1, 0.1];
        let alive = DeadLatentTracker::new(cfg.n);
        assert_eq!(aux_loss(&p, &x, &xh, &alive, &cfg).unwrap(), 0.0);
        let mut dead = DeadLatentTracker::new(cfg.n);
        dead.tokens_since_fire = vec![u64::MAX; cfg.n];
        // e = 0 and no dead reconstruction can only add error
        let zero_res = aux_loss(&p, &x, &x, &dead, &cfg).unwrap();
        assert!(zero_res >= 0.0);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let cfg = TrainConfig {
            n: 4,
            d: 4,
            k: 4,
            k_aux: 4,
            ..small_cfg()
        };
        let mut p = init_params(&cfg).unwrap();
        p.b_pre = vec![0.5, -0.25, 1.0, 2.0];
        let before = p.clone();
        let batch: Vec<f64> = (0..8).flat_map(|_| p.b_pre.clone()).collect();
        let mut opt = OptState::new(&p);
        let mut tr = DeadLatentTracker::new(cfg.n);
        let s = train_step(&mut p, &mut opt, &batch, &mut tr, &cfg, 5, 10).unwrap();
        assert_eq!(s.loss, 0.0);
        for (a, b) in p.w_enc.iter().zip(&before.w_enc) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.b_pre.iter().zip(&before.b_pre) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let cfg = small_cfg();
        assert!(matches!(train(&[], &cfg), Err(Error::EmptyDataset)));
        let wrong = ActivationShard::empty(3);
        assert!(matches!(
            train(&[wrong], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_loss_names_step() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg).unwrap();
        let mut opt = OptState::new(&p);
        let mut tr = DeadLatentTracker::new(cfg.n);
        let batch = vec![f64::MAX; 8];
        let err = train_step(&mut p, &mut opt, &batch, &mut tr, &cfg, 7, 10).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 7, .. }), "{err}");
    }
}
