// SPDX-License-Identifier: MIT OR Apache-2.0

//! SAE checkpoint files.
//!
//! ```text
//! 0..4    magic "SAEP"
//! 4..8    version u32 = 1
//! 8..12   variant u32 (0 = relu, 1 = topk)
//! 12..16  n u32
//! 16..20  d u32
//! 20..24  k u32 (0 for relu)
//! ...     w_enc  n*d f32, row-major (n, d)
//! ...     b_enc  n f32 for relu, absent for topk
//! ...     w_dec  d*n f32, row-major (d, n)
//! ...     b_pre  d f32
//! ```
//!
//! Values are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use crate::error::FormatError;
use crate::sae::{SaeParams, Variant};
use crate::store::Cursor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SAEP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn variant_tag(v: Variant) -> u32 {
    match v {
        Variant::Relu => 0,
        Variant::TopK => 1,
    }
}

fn put_f32s(buf: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &SaeParams) -> Result<Vec<u8>, FormatError> {
    params
        .validate()
        .map_err(|e| FormatError::BadMeta(e.to_string()))?;
    let (n, d) = (params.n, params.d);
    let mut buf = Vec::with_capacity(24 + 4 * (2 * n * d + n + d));
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&variant_tag(params.variant).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(params.k as u32).to_le_bytes());
    put_f32s(&mut buf, params.w_enc.iter().copied());
    if let Some(b) = &params.b_enc {
        put_f32s(&mut buf, b.iter().copied());
    }
    put_f32s(&mut buf, params.decoder_matrix());
    put_f32s(&mut buf, params.b_pre.iter().copied());
    Ok(buf)
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &SaeParams) -> Result<(), FormatError> {
    let bytes = encode_checkpoint(params)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SaeParams, FormatError> {
    let mut cur = Cursor::new(bytes);
    cur.magic(CHECKPOINT_MAGIC)?;
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let variant = match cur.u32("variant")? {
        0 => Variant::Relu,
        1 => Variant::TopK,
        other => return Err(FormatError::UnsupportedVariant(other)),
    };
    let n = cur.u32("n")? as usize;
    let d = cur.u32("d")? as usize;
    let k = cur.u32("k")? as usize;
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let nd = (n as u64) * (d as u64);
    let w_enc = widen(cur.f32s(nd, "w_enc")?);
    let b_enc = match variant {
        Variant::Relu => Some(widen(cur.f32s(n as u64, "b_enc")?)),
        Variant::TopK => None,
    };
    let dec_rows = widen(cur.f32s(nd, "w_dec")?);
    let b_pre = widen(cur.f32s(d as u64, "b_pre")?);
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining() as u64));
    }
    let mut w_dec = vec![0.0; n * d];
    for r in 0..d {
        for j in 0..n {
            w_dec[j * d + r] = dec_rows[r * n + j];
        }
    }
    let params = SaeParams {
        variant,
        n,
        d,
        k,
        w_enc,
        b_enc,
        w_dec,
        b_pre,
    };
    params
        .validate()
        .map_err(|e| FormatError::BadMeta(e.to_string()))?;
    Ok(params)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<SaeParams, FormatError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(variant: Variant) -> SaeParams {
        let (n, d) = (3, 2);
        let mut p = match variant {
            Variant::Relu => SaeParams::zeros_relu(n, d).unwrap(),
            Variant::TopK => SaeParams::zeros_topk(n, d, 2).unwrap(),
        };
        for (i, v) in p.w_enc.iter_mut().enumerate() {
            *v = i as f64 * 0.25;
        }
        for (i, v) in p.w_dec.iter_mut().enumerate() {
            *v = -(i as f64) * 0.5;
        }
        p.b_pre = vec![1.5, -2.0];
        if let Some(b) = &mut p.b_enc {
            *b = vec![0.125, 0.0, -1.0];
        }
        p
    }

    #[test]
    fn round_trip_both_variants() {
        for variant in [Variant::Relu, Variant::TopK] {
            let p = sample(variant);
            let back = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn header_and_decoder_layout() {
        let p = sample(Variant::TopK);
        let b = encode_checkpoint(&p).unwrap();
        assert_eq!(&b[..4], b"SAEP");
        assert_eq!(b.len(), 24 + 4 * (6 + 6 + 2));
        // first stored decoder value is row 0, column 1 after row 0, column 0
        let dec = &b[24 + 24..];
        let first = f32::from_le_bytes(dec[0..4].try_into().unwrap());
        let second = f32::from_le_bytes(dec[4..8].try_into().unwrap());
        assert_eq!(f64::from(first), p.decoder_column(0)[0]);
        assert_eq!(f64::from(second), p.decoder_column(1)[0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = encode_checkpoint(&sample(Variant::Relu)).unwrap();
        assert!(matches!(
            decode_checkpoint(&b[..b.len() - 1]),
            Err(FormatError::Truncated { field: "b_pre" })
        ));
        b[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&b),
            Err(FormatError::BadMagic { .. })
        ));
    }
}
