// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation shards and token-stream preprocessing.
//!
//! Shard file layout (little-endian throughout):
//!
//! ```text
//! 0..4    magic "SAES"
//! 4..8    version u32 = 1
//! 8..12   dtype   u32 = 1 (f32)
//! 12..16  d       u32
//! 16..24  num_rows    u64
//! 24..32  num_samples u64
//! 32..40  meta_len    u64
//! ...     meta_len bytes of UTF-8 `key=value` lines
//! ...     num_rows * d f32, row-major
//! ...     (num_samples + 1) u64 sample offsets
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::FormatError;

pub const SHARD_MAGIC: [u8; 4] = *b"SAES";
pub const SHARD_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
/// Fixed header size before the metadata block.
pub const SHARD_HEADER_LEN: usize = 40;

/// A dense matrix of activation rows grouped into samples.
///
/// Sample `i` spans rows `sample_offsets[i]..sample_offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    d: usize,
    rows: Vec<f32>,
    sample_offsets: Vec<usize>,
    meta: BTreeMap<String, String>,
}

impl ActivationShard {
    /// Builds a shard, checking every invariant.
    pub fn new(
        d: usize,
        rows: Vec<f32>,
        sample_offsets: Vec<usize>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, FormatError> {
        let shard = Self {
            d,
            rows,
            sample_offsets,
            meta,
        };
        shard.validate()?;
        Ok(shard)
    }

    /// Empty shard with a single offset `[0]`.
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            rows: Vec::new(),
            sample_offsets: vec![0],
            meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.d == 0 || self.d > u32::MAX as usize {
            return Err(FormatError::BadDimension {
                field: "d",
                value: self.d as u64,
            });
        }
        if !self.rows.len().is_multiple_of(self.d) {
            return Err(FormatError::BadDimension {
                field: "rows",
                value: self.rows.len() as u64,
            });
        }
        if let Some(index) = self.rows.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                field: "rows",
                index,
            });
        }
        check_offsets(&self.sample_offsets, self.num_rows())?;
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(FormatError::BadMeta(format!("unrepresentable entry {k:?}")));
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len() / self.d
    }

    pub fn num_samples(&self) -> usize {
        self.sample_offsets.len() - 1
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.rows[r * self.d..(r + 1) * self.d]
    }

    pub fn sample_offsets(&self) -> &[usize] {
        &self.sample_offsets
    }

    /// Row range of sample `i`.
    pub fn sample_range(&self, i: usize) -> std::ops::Range<usize> {
        self.sample_offsets[i]..self.sample_offsets[i + 1]
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    /// Divides every nonzero row by its L2 norm. Zero rows are kept as-is.
    pub fn normalize_rows(&self) -> ActivationShard {
        let mut out = self.clone();
        for row in out.rows.chunks_exact_mut(self.d) {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        out
    }
}

/// Free-function form of [`ActivationShard::normalize_rows`].
pub fn normalize_rows(shard: &ActivationShard) -> ActivationShard {
    shard.normalize_rows()
}

fn check_offsets(offsets: &[usize], num_rows: usize) -> Result<(), FormatError> {
    let (first, last) = match (offsets.first(), offsets.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(FormatError::OffsetBounds {
                first: 0,
                last: 0,
                num_rows: num_rows as u64,
            })
        }
    };
    if let Some(position) = offsets.windows(2).position(|w| w[1] <= w[0]) {
        return Err(FormatError::NonMonotoneOffsets {
            position: position + 1,
        });
    }
    if first != 0 || last != num_rows {
        return Err(FormatError::OffsetBounds {
            first: first as u64,
            last: last as u64,
            num_rows: num_rows as u64,
        });
    }
    Ok(())
}

/// Serializes a shard into its on-disk byte layout.
pub fn encode_shard(shard: &ActivationShard) -> Result<Vec<u8>, FormatError> {
    shard.validate()?;
    let meta: String = shard
        .meta
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    let mut buf = Vec::with_capacity(
        SHARD_HEADER_LEN + meta.len() + shard.rows.len() * 4 + shard.sample_offsets.len() * 8,
    );
    buf.extend_from_slice(&SHARD_MAGIC);
    buf.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    buf.extend_from_slice(&(shard.d as u32).to_le_bytes());
    buf.extend_from_slice(&(shard.num_rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(shard.num_samples() as u64).to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    for v in &shard.rows {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &o in &shard.sample_offsets {
        buf.extend_from_slice(&(o as u64).to_le_bytes());
    }
    Ok(buf)
}

/// Writes `shard` to `path`. Invariants are checked before the file is created.
pub fn write_shard(path: impl AsRef<Path>, shard: &ActivationShard) -> Result<(), FormatError> {
    let bytes = encode_shard(shard)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<ActivationShard, FormatError> {
    decode_shard(&fs::read(path)?)
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(
        &mut self,
        len: usize,
        field: &'static str,
    ) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or(FormatError::Truncated { field })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        let found = [got[0], got[1], got[2], got[3]];
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self, field: &'static str) -> Result<u64, FormatError> {
        let b = self.take(8, field)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub(crate) fn f32s(
        &mut self,
        count: u64,
        field: &'static str,
    ) -> Result<Vec<f32>, FormatError> {
        let len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(4))
            .ok_or(FormatError::Truncated { field })?;
        let bytes = self.take(len, field)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_shard(bytes: &[u8]) -> Result<ActivationShard, FormatError> {
    let mut cur = Cursor::new(bytes);
    cur.magic(SHARD_MAGIC)?;
    let version = cur.u32("version")?;
    if version != SHARD_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(dtype));
    }
    let d = cur.u32("d")?;
    if d == 0 {
        return Err(FormatError::BadDimension {
            field: "d",
            value: 0,
        });
    }
    let num_rows = cur.u64("num_rows")?;
    let num_samples = cur.u64("num_samples")?;
    let meta_len = cur.u64("meta_len")?;

    let meta_len =
        usize::try_from(meta_len).map_err(|_| FormatError::Truncated { field: "meta" })?;
    let meta_bytes = cur.take(meta_len, "meta")?;
    let meta_text = std::str::from_utf8(meta_bytes)
        .map_err(|e| FormatError::BadMeta(format!("not UTF-8: {e}")))?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::BadMeta(format!("line without '=': {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let count = num_rows
        .checked_mul(u64::from(d))
        .ok_or(FormatError::Truncated { field: "rows" })?;
    let rows = cur.f32s(count, "rows")?;

    let n_offsets = num_samples
        .checked_add(1)
        .filter(|&n| n.saturating_mul(8) <= cur.remaining() as u64)
        .ok_or(FormatError::Truncated { field: "offsets" })?;
    let mut offsets = Vec::with_capacity(n_offsets as usize);
    for _ in 0..n_offsets {
        offsets.push(cur.u64("offsets")?);
    }
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining() as u64));
    }
    if let Some(position) = offsets.windows(2).position(|w| w[1] <= w[0]) {
        return Err(FormatError::NonMonotoneOffsets {
            position: position + 1,
        });
    }
    let (first, last) = (offsets[0], *offsets.last().unwrap_or(&0));
    if first != 0 || last != num_rows {
        return Err(FormatError::OffsetBounds {
            first,
            last,
            num_rows,
        });
    }
    let sample_offsets = offsets.into_iter().map(|o| o as usize).collect();
    ActivationShard::new(d as usize, rows, sample_offsets, meta)
}

/// Fixed-length token sequences produced by [`chunk_tokens`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequenceBatch {
    pub seq_len: usize,
    pub sequences: Vec<Vec<u32>>,
}

impl TokenSequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Drops every `bos_id`, then cuts the remaining stream into `seq_len` chunks.
/// A trailing partial chunk is discarded.
pub fn chunk_tokens(token_ids: &[u32], seq_len: usize, bos_id: Option<u32>) -> TokenSequenceBatch {
    assert!(seq_len >= 1, "seq_len must be positive");
    let stream: Vec<u32> = token_ids
        .iter()
        .copied()
        .filter(|&t| Some(t) != bos_id)
        .collect();
    TokenSequenceBatch {
        seq_len,
        sequences: stream.chunks_exact(seq_len).map(<[u32]>::to_vec).collect(),
    }
}
