//! Error-bounded truncation of element spectra and the `NKCZ` archive format.
//!
//! Archive layout, all integers little-endian:
//!
//! ```text
//! "NKCZ" | u32 version=1 | u32 p | u64 element_count | f64 epsilon
//!        | u16 name_len | name bytes | u8 codec_id | u64 coded_len | coded bytes
//! ```
//!
//! The coded bytes are the codec applied to the inner stream, which holds one
//! record per element:
//!
//! ```text
//! u64 element_id | u32 kept_count | ceil((p+1)^3 / 8) bitmap bytes | kept_count f64
//! ```
//!
//! Bitmap bit `b` lives in byte `b / 8` at bit position `b % 8` (LSB first).

use std::io::{Read, Write};

use flate2::{read::DeflateDecoder, write::DeflateEncoder, Compression};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::spectral::{dlt_inverse, Basis1D, ElementField, SpectralBlock};

pub const MAGIC: &[u8; 4] = b"NKCZ";
pub const VERSION: u32 = 1;

/// Maximum allowed weighted RMSE per element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub epsilon: f64,
}

impl TruncationSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::config(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

/// Discards the lowest-energy coefficients while the spectral-space RMSE
/// estimate stays within `spec.epsilon`. The mean mode is always kept.
pub fn truncate(block: &SpectralBlock, basis: &Basis1D, spec: TruncationSpec) -> SpectralBlock {
    let volume: f64 = basis.weights().iter().sum::<f64>().powi(3);
    let budget = spec.epsilon * spec.epsilon * volume;

    let mut order: Vec<(f64, usize)> = block
        .coeffs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(idx, _)| block.kept_mask[*idx])
        .map(|(idx, c)| (c * c * basis.gamma3(idx), idx))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = block.clone();
    let mut discarded = 0.0;
    for (energy, idx) in order {
        let next = discarded + energy;
        if next > budget {
            break;
        }
        discarded = next;
        out.kept_mask[idx] = false;
        out.coeffs[idx] = 0.0;
    }
    out
}

/// Spectral-space RMSE estimate of the modes a truncated block dropped,
/// relative to the untruncated block.
pub fn estimated_rmse(original: &SpectralBlock, truncated: &SpectralBlock, basis: &Basis1D) -> f64 {
    let volume: f64 = basis.weights().iter().sum::<f64>().powi(3);
    let lost: f64 = original
        .coeffs
        .iter()
        .zip(&truncated.kept_mask)
        .enumerate()
        .filter(|(_, (_, &kept))| !kept)
        .map(|(idx, (c, _))| c * c * basis.gamma3(idx))
        .sum();
    (lost / volume).sqrt()
}

/// GLL-quadrature-weighted RMSE over the reference element.
pub fn weighted_rmse(
    original: &ElementField,
    reconstructed: &ElementField,
    basis: &Basis1D,
) -> Result<f64> {
    if original.order != basis.order() || reconstructed.order != basis.order() {
        return Err(Error::dimension(format!(
            "orders {} / {} vs basis {}",
            original.order,
            reconstructed.order,
            basis.order()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, (a, b)) in original.values.iter().zip(&reconstructed.values).enumerate() {
        let w = basis.weight3(idx);
        num += w * (a - b) * (a - b);
        den += w;
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Raw,
    #[default]
    Deflate,
}

impl Codec {
    pub fn id(self) -> u8 {
        match self {
            Codec::Raw => 0,
            Codec::Deflate => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, FormatError> {
        match id {
            0 => Ok(Codec::Raw),
            1 => Ok(Codec::Deflate),
            other => Err(FormatError::UnknownCodec(other)),
        }
    }
}

/// Kept coefficients of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedElement {
    pub element_id: u64,
    pub kept_count: u32,
    pub bitmap: Vec<u8>,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveMeta {
    pub order: usize,
    pub epsilon: f64,
    pub field_name: String,
}

/// A parsed or freshly encoded archive together with its exact byte image.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedArchive {
    pub meta: ArchiveMeta,
    pub codec: Codec,
    pub elements: Vec<CompressedElement>,
    bytes: Vec<u8>,
}

impl CompressedArchive {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Parses and validates an archive byte image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        parse_archive(bytes)
    }
}

fn bitmap_len(order: usize) -> usize {
    (order + 1).pow(3).div_ceil(8)
}

/// Packs truncated blocks into an archive. Records are written in the order
/// given, which callers keep as element-id order.
pub fn encode(blocks: &[SpectralBlock], meta: &ArchiveMeta, codec: Codec) -> Result<CompressedArchive> {
    let n3 = (meta.order + 1).pow(3);
    if meta.field_name.len() > u16::MAX as usize {
        return Err(FormatError::FieldNameTooLong.into());
    }
    let mut elements = Vec::with_capacity(blocks.len());
    for block in blocks {
        if block.order != meta.order || block.coeffs.len() != n3 || block.kept_mask.len() != n3 {
            return Err(FormatError::OrderMismatch {
                expected: meta.order,
                found: block.order,
                element_id: block.element_id,
            }
            .into());
        }
        let mut bitmap = vec![0u8; bitmap_len(meta.order)];
        let mut payload = Vec::new();
        for (idx, (&c, &kept)) in block.coeffs.iter().zip(&block.kept_mask).enumerate() {
            if kept {
                if !c.is_finite() {
                    return Err(FormatError::NonFinite {
                        element_index: block.element_id,
                    }
                    .into());
                }
                bitmap[idx / 8] |= 1 << (idx % 8);
                payload.push(c);
            } else if c != 0.0 {
                return Err(FormatError::MaskInconsistent {
                    element_id: block.element_id,
                }
                .into());
            }
        }
        elements.push(CompressedElement {
            element_id: block.element_id,
            kept_count: payload.len() as u32,
            bitmap,
            payload,
        });
    }

    let mut inner = Vec::new();
    for e in &elements {
        inner.extend_from_slice(&e.element_id.to_le_bytes());
        inner.extend_from_slice(&e.kept_count.to_le_bytes());
        inner.extend_from_slice(&e.bitmap);
        for v in &e.payload {
            inner.extend_from_slice(&v.to_le_bytes());
        }
    }
    let coded = match codec {
        Codec::Raw => inner,
        Codec::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(6));
            enc.write_all(&inner)
                .and_then(|_| enc.finish())
                .map_err(|e| Error::Other(format!("deflate: {e}")))?
        }
    };

    let name = meta.field_name.as_bytes();
    let mut bytes = Vec::with_capacity(43 + name.len() + coded.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta.order as u32).to_le_bytes());
    bytes.extend_from_slice(&(elements.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta.epsilon.to_le_bytes());
    bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
    bytes.extend_from_slice(name);
    bytes.push(codec.id());
    bytes.extend_from_slice(&(coded.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&coded);

    Ok(CompressedArchive {
        meta: meta.clone(),
        codec,
        elements,
        bytes,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn parse_archive(bytes: &[u8]) -> Result<CompressedArchive, FormatError> {
    use FormatError::*;
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match cur.array() {
        Some(m) => m,
        None => {
            let mut found = [0u8; 4];
            found[..bytes.len()].copy_from_slice(bytes);
            if bytes != &MAGIC[..bytes.len()] {
                return Err(BadMagic { found });
            }
            return Err(TruncatedHeader("magic"));
        }
    };
    if &magic != MAGIC {
        return Err(BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(cur.array().ok_or(TruncatedHeader("version"))?);
    if version != VERSION {
        return Err(UnsupportedVersion(version));
    }
    let order = u32::from_le_bytes(cur.array().ok_or(TruncatedHeader("order"))?) as usize;
    if !(1..=crate::spectral::MAX_ORDER).contains(&order) {
        return Err(CorruptPayload(format!("order {order} out of range")));
    }
    let element_count = u64::from_le_bytes(cur.array().ok_or(TruncatedHeader("element_count"))?);
    let epsilon = f64::from_le_bytes(cur.array().ok_or(TruncatedHeader("epsilon"))?);
    let name_len = u16::from_le_bytes(cur.array().ok_or(TruncatedHeader("name_len"))?) as usize;
    let name = cur.take(name_len).ok_or(TruncatedHeader("field name"))?;
    let field_name = std::str::from_utf8(name).map_err(|_| BadFieldName)?.to_owned();
    let codec = Codec::from_id(cur.array::<1>().ok_or(TruncatedHeader("codec_id"))?[0])?;
    let coded_len = u64::from_le_bytes(cur.array().ok_or(TruncatedHeader("coded_len"))?);

    let available = cur.remaining() as u64;
    let truncated_outer = available < coded_len;
    let coded = if truncated_outer {
        &bytes[cur.pos..]
    } else {
        let extra = (available - coded_len) as usize;
        if extra > 0 {
            return Err(TrailingBytes(extra));
        }
        &bytes[cur.pos..]
    };

    let inner = match codec {
        Codec::Raw => coded.to_vec(),
        Codec::Deflate => {
            let mut out = Vec::new();
            let res = DeflateDecoder::new(coded).read_to_end(&mut out);
            match res {
                Ok(_) => out,
                // A cut deflate stream still yields the prefix it could decode;
                // parse that to name the element where data ran out.
                Err(_) if truncated_outer => out,
                Err(e) => return Err(CorruptPayload(e.to_string())),
            }
        }
    };

    let elements = parse_elements(&inner, order, element_count)?;
    if truncated_outer {
        // The coded stream was cut but every record parsed; the loss is in
        // the tail of the last record's encoding.
        return Err(TruncatedElement {
            element_index: element_count.saturating_sub(1),
        });
    }
    Ok(CompressedArchive {
        meta: ArchiveMeta {
            order,
            epsilon,
            field_name,
        },
        codec,
        elements,
        bytes: bytes.to_vec(),
    })
}

fn parse_elements(
    inner: &[u8],
    order: usize,
    element_count: u64,
) -> Result<Vec<CompressedElement>, FormatError> {
    use FormatError::*;
    let n3 = (order + 1).pow(3);
    let bm_len = bitmap_len(order);
    let mut cur = Cursor { buf: inner, pos: 0 };
    // element_count comes from untrusted input; cap the preallocation.
    let mut elements = Vec::with_capacity(element_count.min(1 << 16) as usize);
    for element_index in 0..element_count {
        let truncated = TruncatedElement { element_index };
        let element_id = u64::from_le_bytes(cur.array().ok_or(truncated.clone())?);
        let kept_count = u32::from_le_bytes(cur.array().ok_or(truncated.clone())?);
        let bitmap = cur.take(bm_len).ok_or(truncated.clone())?.to_vec();
        let bits: u32 = bitmap.iter().map(|b| b.count_ones()).sum();
        let stray = (n3..bm_len * 8).any(|b| bitmap[b / 8] & (1 << (b % 8)) != 0);
        if bits != kept_count || stray {
            return Err(BitmapMismatch {
                element_index,
                bitmap_bits: bits,
                kept_count,
            });
        }
        let raw = cur
            .take(kept_count as usize * 8)
            .ok_or(truncated.clone())?;
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(NonFinite { element_index });
        }
        elements.push(CompressedElement {
            element_id,
            kept_count,
            bitmap,
            payload,
        });
    }
    if cur.remaining() > 0 {
        return Err(TrailingBytes(cur.remaining()));
    }
    Ok(elements)
}

/// Expands archive records back into masked coefficient blocks.
pub fn decode(archive: &CompressedArchive) -> Vec<SpectralBlock> {
    let order = archive.meta.order;
    let n3 = (order + 1).pow(3);
    archive
        .elements
        .iter()
        .map(|e| {
            let mut coeffs = vec![0.0; n3];
            let mut kept_mask = vec![false; n3];
            let mut values = e.payload.iter();
            for idx in 0..n3 {
                if e.bitmap[idx / 8] & (1 << (idx % 8)) != 0 {
                    kept_mask[idx] = true;
                    coeffs[idx] = *values.next().expect("bitmap popcount validated");
                }
            }
            SpectralBlock {
                order,
                element_id: e.element_id,
                coeffs,
                kept_mask,
            }
        })
        .collect()
}

/// Parses archive bytes and reconstructs nodal element fields.
pub fn reconstruct(bytes: &[u8], basis: &Basis1D) -> Result<(ArchiveMeta, Vec<ElementField>)> {
    let archive = CompressedArchive::from_bytes(bytes)?;
    if archive.meta.order != basis.order() {
        return Err(Error::dimension(format!(
            "archive order {} vs basis order {}",
            archive.meta.order,
            basis.order()
        )));
    }
    let fields = decode(&archive)
        .iter()
        .map(|b| dlt_inverse(b, basis))
        .collect::<Result<Vec<_>>>()?;
    Ok((archive.meta, fields))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    /// Uncompressed f64 bytes over archive bytes; 0 for an empty archive.
    pub ratio: f64,
    pub discarded_fraction: f64,
    pub per_element_rmse: Vec<f64>,
    pub max_rmse: f64,
    pub archive_bytes: usize,
    pub uncompressed_bytes: usize,
}

/// Report built from per-element spectral-space RMSE estimates, which equal
/// the physical-space errors up to rounding.
pub fn report_from_estimates(
    archive: &CompressedArchive,
    per_element_rmse: Vec<f64>,
) -> CompressionReport {
    let n3 = (archive.meta.order + 1).pow(3);
    let count = archive.element_count();
    let uncompressed_bytes = count * n3 * 8;
    let kept: u64 = archive.elements.iter().map(|e| e.kept_count as u64).sum();
    let total = (count * n3) as f64;
    let max_rmse = per_element_rmse.iter().copied().fold(0.0, f64::max);
    CompressionReport {
        ratio: uncompressed_bytes as f64 / archive.byte_len() as f64,
        discarded_fraction: if total > 0.0 { 1.0 - kept as f64 / total } else { 0.0 },
        per_element_rmse,
        max_rmse,
        archive_bytes: archive.byte_len(),
        uncompressed_bytes,
    }
}

pub fn compression_report(
    originals: &[ElementField],
    archive: &CompressedArchive,
    basis: &Basis1D,
) -> Result<CompressionReport> {
    if originals.len() != archive.element_count() {
        return Err(Error::dimension(format!(
            "{} originals vs {} archive elements",
            originals.len(),
            archive.element_count()
        )));
    }
    let n3 = basis.element_len();
    let uncompressed_bytes = originals.len() * n3 * 8;
    let kept: u64 = archive.elements.iter().map(|e| e.kept_count as u64).sum();
    let total = (originals.len() * n3) as f64;
    let discarded_fraction = if total > 0.0 {
        1.0 - kept as f64 / total
    } else {
        0.0
    };
    let per_element_rmse = decode(archive)
        .iter()
        .zip(originals)
        .map(|(block, orig)| {
            let recon = dlt_inverse(block, basis)?;
            weighted_rmse(orig, &recon, basis)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rmse = per_element_rmse.iter().copied().fold(0.0, f64::max);
    Ok(CompressionReport {
        ratio: uncompressed_bytes as f64 / archive.byte_len() as f64,
        discarded_fraction,
        per_element_rmse,
        max_rmse,
        archive_bytes: archive.byte_len(),
        uncompressed_bytes,
    })
}

/// Forward transform, truncate and encode a set of element fields.
pub fn compress_fields(
    fields: &[ElementField],
    basis: &Basis1D,
    spec: TruncationSpec,
    field_name: &str,
    codec: Codec,
) -> Result<CompressedArchive> {
    let blocks = fields
        .iter()
        .map(|f| Ok(truncate(&crate::spectral::dlt_forward(f, basis)?, basis, spec)))
        .collect::<Result<Vec<_>>>()?;
    encode(
        &blocks,
        &ArchiveMeta {
            order: basis.order(),
            epsilon: spec.epsilon,
            field_name: field_name.to_owned(),
        },
        codec,
    )
}
