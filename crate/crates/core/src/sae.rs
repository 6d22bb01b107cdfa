// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoder forward math.
//!
//! ```text
//! ReLU:  z = ReLU(W_enc (x - b_pre) + b_enc)
//! TopK:  z = TopK(W_enc (x - b_pre))
//! both:  x_hat = W_dec z + b_pre
//! ```
//!
//! Parameters are held in `f64`; shards and checkpoints store `f32`.

use std::cmp::Ordering;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Relu,
    TopK,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Relu => "relu",
            Variant::TopK => "topk",
        }
    }
}

/// SAE weights.
///
/// `w_enc` is `(n, d)` row-major. The decoder is logically `(d, n)`; it is
/// stored column-contiguous so that latent `j`'s dictionary direction is
/// `w_dec[j * d..(j + 1) * d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    /// TopK sparsity. Zero for the ReLU variant.
    pub k: usize,
    pub w_enc: Vec<f64>,
    pub b_enc: Option<Vec<f64>>,
    pub w_dec: Vec<f64>,
    pub b_pre: Vec<f64>,
}

impl SaeParams {
    /// All-zero TopK parameters.
    pub fn zeros_topk(n: usize, d: usize, k: usize) -> Result<Self> {
        let p = Self {
            variant: Variant::TopK,
            n,
            d,
            k,
            w_enc: vec![0.0; n * d],
            b_enc: None,
            w_dec: vec![0.0; n * d],
            b_pre: vec![0.0; d],
        };
        p.validate()?;
        Ok(p)
    }

    /// All-zero ReLU parameters (with encoder bias).
    pub fn zeros_relu(n: usize, d: usize) -> Result<Self> {
        let p = Self {
            variant: Variant::Relu,
            n,
            d,
            k: 0,
            w_enc: vec![0.0; n * d],
            b_enc: Some(vec![0.0; n]),
            w_dec: vec![0.0; n * d],
            b_pre: vec![0.0; d],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(format!(
                "n and d must be positive (n={}, d={})",
                self.n, self.d
            )));
        }
        check_dim("w_enc", self.n * self.d, self.w_enc.len())?;
        check_dim("w_dec", self.n * self.d, self.w_dec.len())?;
        check_dim("b_pre", self.d, self.b_pre.len())?;
        match (self.variant, &self.b_enc) {
            (Variant::Relu, Some(b)) => check_dim("b_enc", self.n, b.len())?,
            (Variant::Relu, None) => {
                return Err(Error::InvalidArgument("relu variant needs b_enc".into()))
            }
            (Variant::TopK, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "topk variant carries no b_enc".into(),
                ))
            }
            (Variant::TopK, None) => {
                if self.k == 0 || self.k > self.n {
                    return Err(Error::InvalidArgument(format!(
                        "k must be in 1..={} (got {})",
                        self.n, self.k
                    )));
                }
            }
        }
        let all = self
            .w_enc
            .iter()
            .chain(&self.w_dec)
            .chain(&self.b_pre)
            .chain(self.b_enc.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn encoder_row(&self, j: usize) -> &[f64] {
        &self.w_enc[j * self.d..(j + 1) * self.d]
    }

    /// Dictionary direction of latent `j` (column `j` of the decoder).
    pub fn decoder_column(&self, j: usize) -> &[f64] {
        &self.w_dec[j * self.d..(j + 1) * self.d]
    }

    /// Decoder as a `(d, n)` row-major matrix.
    pub fn decoder_matrix(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.n];
        for j in 0..self.n {
            for (r, &v) in self.decoder_column(j).iter().enumerate() {
                out[r * self.n + j] = v;
            }
        }
        out
    }

    /// Rescales every nonzero decoder column to unit L2 norm.
    pub fn normalize_decoder(&mut self) {
        for col in self.w_dec.chunks_exact_mut(self.d) {
            let norm = dot(col, col).sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    /// `W_enc (x - b_pre)` (plus `b_enc` for ReLU) written into `out`.
    pub fn pre_activations(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("input", self.d, x.len())?;
        check_dim("pre-activation buffer", self.n, out.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.b_pre).map(|(a, b)| a - b).collect();
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.encoder_row(j), &centered);
        }
        if let Some(b) = &self.b_enc {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        Ok(())
    }
}

/// Sparse latent code: strictly increasing `indices` with nonzero `values`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseLatents {
    pub n: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseLatents {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from a dense vector, keeping nonzero entries.
    pub fn from_dense(v: &[f64]) -> Self {
        let (indices, values) = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i, x))
            .unzip();
        Self {
            n: v.len(),
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orders by value descending, then index ascending.
fn rank_cmp(v: &[f64], a: usize, b: usize) -> Ordering {
    v[b].total_cmp(&v[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest entries of `v` (ties toward the lower index),
/// returned in ascending index order. Zeros are kept.
pub(crate) fn topk_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, |&a, &b| rank_cmp(v, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Keeps the `k` algebraically largest entries of `v`; negative values are
/// eligible. Retained exact zeros are not stored.
pub fn topk_mask(v: &[f64], k: usize) -> Result<SparseLatents> {
    if k == 0 || k > v.len() {
        return Err(Error::InvalidArgument(format!(
            "topk k={k} outside 1..={}",
            v.len()
        )));
    }
    let (indices, values) = topk_indices(v, k)
        .into_iter()
        .filter(|&i| v[i] != 0.0)
        .map(|i| (i, v[i]))
        .unzip();
    Ok(SparseLatents {
        n: v.len(),
        indices,
        values,
    })
}

pub fn encode_relu(params: &SaeParams, x: &[f64]) -> Result<Vec<f64>> {
    if params.variant != Variant::Relu {
        return Err(Error::WrongVariant { expected: "relu" });
    }
    let mut pre = vec![0.0; params.n];
    params.pre_activations(x, &mut pre)?;
    pre.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(pre)
}

pub fn encode_topk(params: &SaeParams, x: &[f64]) -> Result<SparseLatents> {
    if params.variant != Variant::TopK {
        return Err(Error::WrongVariant { expected: "topk" });
    }
    let mut pre = vec![0.0; params.n];
    params.pre_activations(x, &mut pre)?;
    topk_mask(&pre, params.k)
}

/// `W_dec z + b_pre`, touching only the active columns.
pub fn decode(params: &SaeParams, z: &SparseLatents) -> Result<Vec<f64>> {
    check_dim("latent code", params.n, z.n)?;
    let mut out = params.b_pre.clone();
    for (j, v) in z.iter() {
        if j >= params.n {
            return Err(Error::DimensionMismatch {
                context: "latent index",
                expected: params.n,
                actual: j,
            });
        }
        for (o, w) in out.iter_mut().zip(params.decoder_column(j)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Keeps entries strictly greater than `theta`.
pub fn jump_relu(z: &SparseLatents, theta: f64) -> SparseLatents {
    let (indices, values) = z.iter().filter(|&(_, v)| v > theta).unzip();
    SparseLatents {
        n: z.n,
        indices,
        values,
    }
}

/// Squared L2 distance.
pub fn recon_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_dim("reconstruction", x.len(), x_hat.len())?;
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_topk(n: usize, k: usize) -> SaeParams {
        let mut p = SaeParams::zeros_topk(n, n, k).unwrap();
        for i in 0..n {
            p.w_enc[i * n + i] = 1.0;
            p.w_dec[i * n + i] = 1.0;
        }
        p
    }

    #[test]
    fn relu_identity_and_bias() {
        let mut p = SaeParams::zeros_relu(2, 2).unwrap();
        p.w_enc = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(encode_relu(&p, &[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
        p.b_enc = Some(vec![-2.0, -2.0]);
        assert_eq!(encode_relu(&p, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn topk_mask_examples() {
        let z = topk_mask(&[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(z.indices, vec![0, 2]);
        assert_eq!(z.values, vec![3.0, 2.0]);
        assert_eq!(topk_mask(&[5.0, 5.0, 5.0], 2).unwrap().indices, vec![0, 1]);
        let z = topk_mask(&[-1.0, -2.0, -3.0], 1).unwrap();
        assert_eq!((z.indices, z.values), (vec![0], vec![-1.0]));
        assert!(topk_mask(&[1.0], 0).is_err());
        assert!(topk_mask(&[1.0], 2).is_err());
    }

    #[test]
    fn topk_drops_retained_zeros() {
        let z = topk_mask(&[0.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(z.indices, vec![2]);
    }

    #[test]
    fn encode_topk_identity() {
        let p = identity_topk(4, 2);
        let z = encode_topk(&p, &[0.1, 0.9, 0.5, 0.2]).unwrap();
        assert_eq!(z.indices, vec![1, 2]);
        let full = identity_topk(4, 4);
        let z = encode_topk(&full, &[0.1, 0.0, -0.5, 0.2]).unwrap();
        assert_eq!(z.indices, vec![0, 2, 3]);
        assert_eq!(z.values, vec![0.1, -0.5, 0.2]);
    }

    #[test]
    fn wrong_variant_and_dims() {
        let p = identity_topk(4, 2);
        assert!(matches!(
            encode_relu(&p, &[0.0; 4]),
            Err(Error::WrongVariant { .. })
        ));
        assert!(matches!(
            encode_topk(&p, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(decode(&p, &SparseLatents::empty(5)).is_err());
        assert!(recon_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut p = identity_topk(3, 1);
        p.b_pre = vec![0.5, -1.0, 2.0];
        assert_eq!(decode(&p, &SparseLatents::empty(3)).unwrap(), p.b_pre);
        p.b_pre = vec![0.0; 3];
        let z = SparseLatents {
            n: 3,
            indices: vec![1],
            values: vec![2.0],
        };
        assert_eq!(decode(&p, &z).unwrap(), vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn jump_relu_is_strict() {
        let z = SparseLatents {
            n: 4,
            indices: vec![0, 3],
            values: vec![10.0, 10.1],
        };
        assert_eq!(jump_relu(&z, 10.0).indices, vec![3]);
        assert_eq!(jump_relu(&z, 0.0), z);
        assert!(jump_relu(&SparseLatents::empty(4), 1.0).is_empty());
    }

    #[test]
    fn recon_loss_examples() {
        assert_eq!(recon_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(recon_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn validate_rejects_bad_k() {
        assert!(SaeParams::zeros_topk(4, 2, 0).is_err());
        assert!(SaeParams::zeros_topk(4, 2, 5).is_err());
    }
}
