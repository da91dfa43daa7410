//! Early-exit controller: cross-layer cumulative similarity with exponential
//! weights and the accumulated-confidence score.
//!
//! The literal cumulative sum weights layer l0 by 2^(l0-1), which overflows
//! on deep models. The controller keeps the normalized form `N = s + N/2`
//! instead, so `N` at layer l equals the literal sum divided by 2^(l-1). The
//! confidence score is a ratio of two accumulators, so the common scaling
//! cancels and both forms decide identically; with |s| <= 1 the normalized
//! accumulators stay within [-2, 2] at any depth.

use crate::encoding::SimilarityRow;
use crate::error::{Error, Result};
use crate::ClassId;

/// Accumulated-confidence score: (SA_H - SA_SH) / SA_SH over the top-two
/// cumulative accumulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcScore {
    Finite(f64),
    /// SA_SH <= 0 < SA_H: the runner-up is anti-correlated, so separation is
    /// maximal; exits at any finite threshold.
    Infinite,
    /// SA_H <= 0: no candidate carries positive evidence; never exits.
    NoConfidence,
}

impl AcScore {
    /// Whether the score clears the exit threshold. An infinite threshold
    /// disables exits entirely, including against the infinite marker.
    pub fn clears(&self, tau: f32) -> bool {
        if tau.is_infinite() {
            return false;
        }
        match *self {
            AcScore::Finite(v) => v >= tau as f64,
            AcScore::Infinite => true,
            AcScore::NoConfidence => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Exit { class: ClassId, exit_index: u32 },
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitDecision {
    pub verdict: Verdict,
    pub ac: AcScore,
}

/// Per-frame cumulative matching state. The candidate set is fixed at frame
/// start (the fast-memory snapshot) and every accumulated row must carry
/// exactly that set.
#[derive(Debug, Clone)]
pub struct CumulativeState {
    candidates: Vec<ClassId>,
    accum: Vec<f64>,
    layers_seen: u32,
}

impl CumulativeState {
    /// All accumulators start at zero (the empty-sum initial condition).
    pub fn new(candidates: &[ClassId]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Arity { needed: 1, got: 0 });
        }
        Ok(CumulativeState {
            candidates: candidates.to_vec(),
            accum: vec![0.0; candidates.len()],
            layers_seen: 0,
        })
    }

    pub fn candidates(&self) -> &[ClassId] {
        &self.candidates
    }

    pub fn layers_seen(&self) -> u32 {
        self.layers_seen
    }

    /// Normalized accumulators, aligned with `candidates()`.
    pub fn accumulators(&self) -> &[f64] {
        &self.accum
    }

    /// Fold one similarity row into the running accumulators.
    pub fn accumulate(&mut self, row: &SimilarityRow) -> Result<()> {
        if row.entries.len() != self.candidates.len()
            || !row.classes().zip(&self.candidates).all(|(a, &b)| a == b)
        {
            return Err(Error::Integrity(
                "similarity row class set does not match the frame's candidate set".into(),
            ));
        }
        for (acc, &(_, s)) in self.accum.iter_mut().zip(&row.entries) {
            *acc = s as f64 + *acc / 2.0;
        }
        self.layers_seen += 1;
        Ok(())
    }

    /// Index of the best accumulator; ties resolve to the lowest class id
    /// (candidates are kept in ascending order by the pipeline).
    fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.accum.len() {
            if self.accum[i] > self.accum[best] {
                best = i;
            }
        }
        best
    }

    /// Accumulated-confidence score over the current accumulators.
    pub fn accumulated_confidence(&self) -> Result<AcScore> {
        if self.candidates.len() < 2 {
            return Err(Error::Arity {
                needed: 2,
                got: self.candidates.len(),
            });
        }
        if self.layers_seen == 0 {
            return Err(Error::State("no similarity rows accumulated yet".into()));
        }
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &v in &self.accum {
            if v > best {
                second = best;
                best = v;
            } else if v > second {
                second = v;
            }
        }
        if best <= 0.0 {
            return Ok(AcScore::NoConfidence);
        }
        if second <= 0.0 {
            return Ok(AcScore::Infinite);
        }
        Ok(AcScore::Finite((best - second) / second))
    }

    /// Exit decision at the current layer. Exits require at least one
    /// accumulated row, at least two candidates, and a score clearing tau
    /// (>= comparison); otherwise the frame continues.
    pub fn decide(&self, tau: f32) -> ExitDecision {
        if self.candidates.len() < 2 || self.layers_seen == 0 {
            return ExitDecision {
                verdict: Verdict::Continue,
                ac: AcScore::NoConfidence,
            };
        }
        let ac = self
            .accumulated_confidence()
            .expect("candidate/layer preconditions checked above");
        let verdict = if ac.clears(tau) {
            Verdict::Exit {
                class: self.candidates[self.argmax()],
                exit_index: self.layers_seen,
            }
        } else {
            Verdict::Continue
        };
        ExitDecision { verdict, ac }
    }
}
