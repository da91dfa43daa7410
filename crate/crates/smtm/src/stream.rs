//! Deterministic synthetic stream generation: per-class template tensors
//! plus a bursty long-tail class sequence, standing in for real video
//! traces so benchmark runs are reproducible offline.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::trace::TraceFile;

/// Marginal class distribution of the generated stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    /// p_i proportional to 1 / (i+1)^exponent.
    Zipf { exponent: f64 },
    /// Explicit per-class probabilities; must sum to 1.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub num_classes: usize,
    pub marginal: Marginal,
    /// Mean run length of same-class bursts; 1 means i.i.d. sampling.
    pub burstiness: f64,
    pub frames: usize,
    /// Uniform per-element noise amplitude added to the class template.
    pub noise: f32,
    pub seed: u64,
}

impl StreamSpec {
    fn weights(&self) -> Result<Vec<f64>> {
        match &self.marginal {
            Marginal::Zipf { exponent } => Ok((0..self.num_classes)
                .map(|i| 1.0 / ((i + 1) as f64).powf(*exponent))
                .collect()),
            Marginal::Explicit(freqs) => {
                if freqs.len() != self.num_classes {
                    return Err(Error::Config(format!(
                        "{} frequencies for {} classes",
                        freqs.len(),
                        self.num_classes
                    )));
                }
                if freqs.iter().any(|&f| f < 0.0) {
                    return Err(Error::Config("frequencies must be non-negative".into()));
                }
                let total: f64 = freqs.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "frequencies must sum to 1, got {total}"
                    )));
                }
                Ok(freqs.clone())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if self.burstiness < 1.0 {
            return Err(Error::Config("mean run length must be >= 1".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config("noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Deterministic per-class template tensors. Each class gets a distinct
/// channel profile: a shared base level, a strong boost on its own channel
/// (near-orthogonal class directions), a small random per-channel tint, and
/// per-element texture. The profile survives spatial averaging, which is
/// what separates classes after encoding; pure element noise would wash
/// out, while fully random profiles make some class pairs collide.
pub fn class_templates(
    num_classes: usize,
    dims: (usize, usize, usize),
    seed: u64,
) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = dims;
    (0..num_classes)
        .map(|class| {
            let mut data = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                let mut base: f32 = 0.15 + rng.random_range(-0.03f32..0.03);
                if ch == class % c {
                    base += 1.0;
                }
                // Wrapped classes get a second boosted channel so they stay
                // distinguishable when there are more classes than channels.
                if class >= c && ch == (class / c + class) % c {
                    base += 0.6;
                }
                for _ in 0..h * w {
                    data.push(base + rng.random_range(-0.15f32..0.15));
                }
            }
            FeatureMap::new(c, h, w, data).expect("template dims are positive")
        })
        .collect()
}

/// Shift every template by a seeded perturbation of the given amplitude,
/// modeling distribution drift between warm-up and deployment. The drift
/// moves each class's per-channel profile (the part of the template that
/// defines its identity after spatial averaging) plus a little texture.
pub fn perturb_templates(templates: &[FeatureMap], drift: f32, seed: u64) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    templates
        .iter()
        .map(|t| {
            let (c, h, w) = t.shape();
            let mut data = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                let offset = drift * rng.random_range(-1.0f32..1.0);
                for &v in t.channel(ch) {
                    data.push(v + offset + 0.1 * drift * rng.random_range(-1.0f32..1.0));
                }
            }
            FeatureMap::new(c, h, w, data).expect("perturbed template stays finite")
        })
        .collect()
}

fn burst_length(rng: &mut ChaCha8Rng, burstiness: f64) -> usize {
    if burstiness <= 1.0 {
        return 1;
    }
    // Geometric with mean `burstiness`, support >= 1.
    let p = 1.0 / burstiness;
    let u: f64 = rng.random_range(0.0..1.0);
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor().max(0.0) as usize
}

/// Generate a labeled trace: sample a class sequence with the configured
/// marginal and burst structure, then emit each frame as its class template
/// plus uniform element-wise noise. Bit-identical for identical spec and
/// templates.
pub fn generate_longtail_trace(spec: &StreamSpec, templates: &[FeatureMap]) -> Result<TraceFile> {
    spec.validate()?;
    if templates.len() != spec.num_classes {
        return Err(Error::Config(format!(
            "{} templates for {} classes",
            templates.len(),
            spec.num_classes
        )));
    }
    let dims = templates[0].shape();
    if templates.iter().any(|t| t.shape() != dims) {
        return Err(Error::Config("templates must share one shape".into()));
    }
    let weights = spec.weights()?;
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("invalid class weights: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trace = TraceFile::new(dims.0, dims.1, dims.2, true);
    let mut current = 0usize;
    let mut run_left = 0usize;
    let mut buf = vec![0f32; templates[0].len()];
    for _ in 0..spec.frames {
        if run_left == 0 {
            current = dist.sample(&mut rng);
            run_left = burst_length(&mut rng, spec.burstiness);
        }
        run_left -= 1;
        let template = templates[current].data();
        if spec.noise == 0.0 {
            buf.copy_from_slice(template);
        } else {
            for (out, &t) in buf.iter_mut().zip(template) {
                *out = t + spec.noise * rng.random_range(-1.0f32..1.0);
            }
        }
        trace.push_frame(Some(current as u32), &buf)?;
    }
    Ok(trace)
}

/// Labeled warm-up trace cycling through the classes in order, so every
/// class is covered the same number of times.
pub fn generate_round_robin_trace(
    templates: &[FeatureMap],
    per_class: usize,
    noise: f32,
    seed: u64,
) -> Result<TraceFile> {
    if templates.is_empty() {
        return Err(Error::Config("need at least one class".into()));
    }
    let dims = templates[0].shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = TraceFile::new(dims.0, dims.1, dims.2, true);
    let mut buf = vec![0f32; templates[0].len()];
    for _ in 0..per_class {
        for (class, template) in templates.iter().enumerate() {
            if noise == 0.0 {
                buf.copy_from_slice(template.data());
            } else {
                for (out, &t) in buf.iter_mut().zip(template.data()) {
                    *out = t + noise * rng.random_range(-1.0f32..1.0);
                }
            }
            trace.push_frame(Some(class as u32), &buf)?;
        }
    }
    Ok(trace)
}
