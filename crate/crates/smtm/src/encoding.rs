//! Semantic vectors: gap encoding, cosine matching, and the single-layer
//! separability diagnostic.

use crate::error::{Error, Result};
use crate::memory::{FastMemory, GlobalMemory};
use crate::tensor::FeatureMap;
use crate::ClassId;

/// Channel-mean encoding of a feature map at one exit point. The values
/// vector has the exit point's channel count regardless of spatial size,
/// which is what makes it cheap to cache and look up.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    /// 1-based exit index this vector was taken at.
    pub layer: u32,
    pub values: Vec<f32>,
}

/// Per-channel spatial mean. Sums run in f64 so the result tracks the exact
/// mean to well below 1e-6 even for large planes; a 1x1 spatial map encodes
/// to itself.
pub fn encode_gap(fm: &FeatureMap, exit_index: u32) -> SemanticVector {
    let plane = (fm.height() * fm.width()) as f64;
    let values = (0..fm.channels())
        .map(|c| (fm.channel(c).iter().map(|&v| v as f64).sum::<f64>() / plane) as f32)
        .collect();
    SemanticVector {
        layer: exit_index,
        values,
    }
}

/// Cosine similarity in [-1, 1]. Vectors whose norm falls below 1e-12 have
/// no usable direction; their similarity is defined as 0 rather than an
/// error because an all-zero post-relu map is reachable.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("vector of length {}", a.len()),
            actual: format!("vector of length {}", b.len()),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-12 || nb < 1e-12 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)) as f32)
}

/// Similarities of one semantic vector against every cached class at one
/// exit point. Entries are keyed by class id, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub layer: u32,
    pub entries: Vec<(ClassId, f32)>,
}

impl SimilarityRow {
    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    /// Highest and second-highest similarity values.
    pub fn top_two(&self) -> Option<(f32, f32)> {
        if self.entries.len() < 2 {
            return None;
        }
        let mut best = f32::NEG_INFINITY;
        let mut second = f32::NEG_INFINITY;
        for &(_, s) in &self.entries {
            if s > best {
                second = best;
                best = s;
            } else if s > second {
                second = s;
            }
        }
        Some((best, second))
    }
}

/// Look up a semantic vector against the fast-memory subset. Only cached
/// classes are consulted; the complete global set is never scanned here.
pub fn match_layer(
    sv: &SemanticVector,
    fast: &FastMemory,
    global: &GlobalMemory,
) -> Result<SimilarityRow> {
    let layer0 = (sv.layer - 1) as usize;
    let mut entries = Vec::with_capacity(fast.len());
    for &class in fast.classes() {
        let center = global.center(class, layer0)?;
        if center.updates == 0 {
            return Err(Error::Integrity(format!(
                "cached class {class} has no center at exit {}",
                sv.layer
            )));
        }
        entries.push((class, cosine_similarity(&sv.values, &center.values)?));
    }
    Ok(SimilarityRow {
        layer: sv.layer,
        entries,
    })
}

/// Single-layer separability (s_H - s_SH) / s_SH. Exported as a diagnostic
/// only; the runtime exit decision goes through the accumulated-confidence
/// score instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separability {
    Defined {
        value: f32,
        /// A negative second-highest similarity flips the ratio's sign
        /// meaning; flagged so downstream consumers can filter.
        negative_denominator: bool,
    },
    /// Second-highest similarity is exactly zero.
    Undefined,
}

pub fn single_layer_separability(row: &SimilarityRow) -> Result<Separability> {
    let (best, second) = row.top_two().ok_or(Error::Arity {
        needed: 2,
        got: row.entries.len(),
    })?;
    if second == 0.0 {
        return Ok(Separability::Undefined);
    }
    Ok(Separability::Defined {
        value: (best - second) / second,
        negative_denominator: second < 0.0,
    })
}
