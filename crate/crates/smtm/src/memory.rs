//! Hierarchical priming memory: per-class semantic centers, frequency and
//! time-stamp tables, the forgetting mechanism, adaptive cache sizing, and
//! fast-memory replacement.

use std::fs;
use std::path::Path;

use crate::encoding::{encode_gap, SemanticVector};
use crate::error::{Error, Result};
use crate::forward::full_forward;
use crate::model::ModelGraph;
use crate::trace::TraceFile;
use crate::ClassId;

pub const CENTER_STORE_MAGIC: &[u8; 8] = b"SMTMCTR1";

/// Running-average semantic vector for one (class, exit layer) slot.
/// `updates == 0` marks an uninitialized center; those never enter fast
/// memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCenter {
    pub values: Vec<f32>,
    pub updates: u32,
}

/// Complete per-class center store: one slot per (class, exit layer).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMemory {
    num_classes: u32,
    exit_channels: Vec<usize>,
    /// Class-major: slot (class, layer) lives at class * L + layer.
    centers: Vec<SemanticCenter>,
}

impl GlobalMemory {
    pub fn new(num_classes: u32, exit_channels: Vec<usize>) -> Self {
        let slots = num_classes as usize * exit_channels.len();
        let centers = (0..slots)
            .map(|i| SemanticCenter {
                values: vec![0.0; exit_channels[i % exit_channels.len()]],
                updates: 0,
            })
            .collect();
        GlobalMemory {
            num_classes,
            exit_channels,
            centers,
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn num_exit_points(&self) -> usize {
        self.exit_channels.len()
    }

    pub fn exit_channels(&self) -> &[usize] {
        &self.exit_channels
    }

    fn slot(&self, class: ClassId, layer0: usize) -> Result<usize> {
        if class >= self.num_classes {
            return Err(Error::ClassRange {
                class,
                num_classes: self.num_classes,
            });
        }
        if layer0 >= self.exit_channels.len() {
            return Err(Error::State(format!(
                "exit layer {} out of range ({} exit points)",
                layer0 + 1,
                self.exit_channels.len()
            )));
        }
        Ok(class as usize * self.exit_channels.len() + layer0)
    }

    /// Center for `class` at 0-based exit position `layer0`.
    pub fn center(&self, class: ClassId, layer0: usize) -> Result<&SemanticCenter> {
        Ok(&self.centers[self.slot(class, layer0)?])
    }

    pub fn set_center(
        &mut self,
        class: ClassId,
        layer0: usize,
        values: Vec<f32>,
        updates: u32,
    ) -> Result<()> {
        let idx = self.slot(class, layer0)?;
        if values.len() != self.exit_channels[layer0] {
            return Err(Error::Shape {
                expected: format!("{} channels", self.exit_channels[layer0]),
                actual: format!("{} channels", values.len()),
            });
        }
        self.centers[idx] = SemanticCenter { values, updates };
        Ok(())
    }

    /// True when the class has an initialized center at every exit layer.
    pub fn class_initialized(&self, class: ClassId) -> bool {
        let l = self.exit_channels.len();
        let base = class as usize * l;
        self.centers[base..base + l].iter().all(|c| c.updates > 0)
    }

    /// Classes with no initialized center at any layer (zero warm-up
    /// samples).
    pub fn uninitialized_classes(&self) -> Vec<ClassId> {
        (0..self.num_classes)
            .filter(|&c| !self.class_initialized(c))
            .collect()
    }

    /// Serialize to the binary center store: magic, n, L, per-layer channel
    /// counts, then per-(class, layer) update count and values, all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CENTER_STORE_MAGIC);
        out.extend_from_slice(&self.num_classes.to_le_bytes());
        out.extend_from_slice(&(self.exit_channels.len() as u32).to_le_bytes());
        for &c in &self.exit_channels {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for center in &self.centers {
            out.extend_from_slice(&center.updates.to_le_bytes());
            for v in &center.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::CenterFormat(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != CENTER_STORE_MAGIC {
            return Err(bad("missing SMTMCTR1 magic"));
        }
        let read_u32 = |off: usize| -> u32 {
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
        };
        let n = read_u32(8);
        let l = read_u32(12) as usize;
        let mut off = 16;
        if bytes.len() < off + 4 * l {
            return Err(bad("truncated channel-count table"));
        }
        let mut exit_channels = Vec::with_capacity(l);
        for _ in 0..l {
            exit_channels.push(read_u32(off) as usize);
            off += 4;
        }
        let per_class: usize = exit_channels.iter().map(|c| 4 + 4 * c).sum();
        let expected = off + n as usize * per_class;
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut mem = GlobalMemory::new(n, exit_channels.clone());
        for class in 0..n {
            for (layer0, &c) in exit_channels.iter().enumerate() {
                let updates = read_u32(off);
                off += 4;
                let mut values = Vec::with_capacity(c);
                for _ in 0..c {
                    values.push(f32::from_le_bytes([
                        bytes[off],
                        bytes[off + 1],
                        bytes[off + 2],
                        bytes[off + 3],
                    ]));
                    off += 4;
                }
                mem.set_center(class, layer0, values, updates)?;
            }
        }
        Ok(mem)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hot subset of classes consulted during inference. Kept as an ascending
/// ordered set; every member must have initialized centers at all layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FastMemory {
    classes: Vec<ClassId>,
}

impl FastMemory {
    pub fn empty() -> Self {
        FastMemory::default()
    }

    pub fn from_classes(mut classes: Vec<ClassId>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        FastMemory { classes }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

/// Per-class occurrence counts. Real-valued because the forgetting
/// mechanism multiplies by fractional decay factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: Vec<f64>,
}

impl FrequencyTable {
    pub fn new(num_classes: u32) -> Self {
        FrequencyTable {
            counts: vec![0.0; num_classes as usize],
        }
    }

    pub fn from_counts(counts: Vec<f64>) -> Self {
        FrequencyTable { counts }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Per-class consecutive-absence counters plus the observation window W.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStampTable {
    absent: Vec<u64>,
    window: u32,
}

impl TimeStampTable {
    pub fn new(num_classes: u32, window: u32) -> Self {
        TimeStampTable {
            absent: vec![0; num_classes as usize],
            window,
        }
    }

    pub fn from_counters(absent: Vec<u64>, window: u32) -> Self {
        TimeStampTable { absent, window }
    }

    pub fn counters(&self) -> &[u64] {
        &self.absent
    }

    pub fn window(&self) -> u32 {
        self.window
    }
}

/// Record one prediction: bump its frequency, reset its absence counter,
/// age everything else.
pub fn record_observation(
    ft: &mut FrequencyTable,
    ts: &mut TimeStampTable,
    predicted: ClassId,
) -> Result<()> {
    let n = ft.counts.len();
    if predicted as usize >= n || ts.absent.len() != n {
        return Err(Error::ClassRange {
            class: predicted,
            num_classes: n as u32,
        });
    }
    ft.counts[predicted as usize] += 1.0;
    for (i, t) in ts.absent.iter_mut().enumerate() {
        if i == predicted as usize {
            *t = 0;
        } else {
            *t += 1;
        }
    }
    Ok(())
}

fn decay_factor(absent: u64, window: u32, decay_base: f64) -> f64 {
    let exponent = (absent / window as u64).min(i32::MAX as u64) as i32;
    decay_base.powi(exponent)
}

/// Persistent forgetting: fold the current absence decay into the stored
/// frequencies. Intended to be invoked once every W frames when enabled.
pub fn apply_forgetting(ft: &mut FrequencyTable, ts: &TimeStampTable, decay_base: f64) {
    for (count, &absent) in ft.counts.iter_mut().zip(&ts.absent) {
        *count *= decay_factor(absent, ts.window, decay_base);
    }
}

/// Replacement score: frequency scaled by the absence decay.
pub fn class_score(ft_i: f64, ts_i: u64, window: u32, decay_base: f64) -> f64 {
    ft_i * decay_factor(ts_i, window, decay_base)
}

/// Scores for all classes; this transient decay is applied on every scoring
/// pass regardless of whether persistent forgetting is enabled.
pub fn replacement_scores(ft: &FrequencyTable, ts: &TimeStampTable, decay_base: f64) -> Vec<f64> {
    ft.counts
        .iter()
        .zip(&ts.absent)
        .map(|(&f, &t)| class_score(f, t, ts.window, decay_base))
        .collect()
}

/// Smallest k whose top-k score mass reaches the confidence level, clamped
/// to [k_min, k_max]. A zero total falls back to k_min.
pub fn adaptive_cache_size(scores: &[f64], cl: f64, k_min: usize, k_max: usize) -> usize {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return k_min;
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut mass = 0.0;
    let mut k = sorted.len();
    for (i, s) in sorted.iter().enumerate() {
        mass += s;
        if mass / total >= cl {
            k = i + 1;
            break;
        }
    }
    k.clamp(k_min, k_max)
}

/// Top-k selection for the fast memory: highest score first, ties broken by
/// ascending class id. Classes with zero score or uninitialized centers
/// never qualify, so the result may be smaller than k.
pub fn select_fast_memory(global: &GlobalMemory, scores: &[f64], k: usize) -> FastMemory {
    let mut ranked: Vec<(ClassId, f64)> = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > 0.0 && global.class_initialized(i as ClassId))
        .map(|(i, &s)| (i as ClassId, s))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    FastMemory::from_classes(ranked.into_iter().map(|(c, _)| c).collect())
}

/// Incremental center update for a predicted class: for each layer the
/// frame actually reached, fold the new semantic vector into the running
/// average and bump the update count. Layers beyond the exit stay untouched.
pub fn update_centers(
    global: &mut GlobalMemory,
    class: ClassId,
    vectors: &[SemanticVector],
) -> Result<()> {
    for sv in vectors {
        let layer0 = (sv.layer - 1) as usize;
        let expected = *global
            .exit_channels()
            .get(layer0)
            .ok_or_else(|| Error::State(format!("exit layer {} out of range", sv.layer)))?;
        if sv.values.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} channels"),
                actual: format!("{} channels", sv.values.len()),
            });
        }
        let idx = global.slot(class, layer0)?;
        let center = &mut global.centers[idx];
        let m = center.updates as f32;
        for (c, &v) in center.values.iter_mut().zip(&sv.values) {
            *c = (*c * m + v) / (m + 1.0);
        }
        center.updates += 1;
    }
    Ok(())
}

/// Warm-up statistics alongside the built memory.
#[derive(Debug, Clone)]
pub struct WarmupReport {
    pub samples: u64,
    pub uninitialized_classes: Vec<ClassId>,
}

/// Build the global memory from a labeled trace: each center becomes the
/// mean of its class's semantic vectors at that layer, with the update
/// count set to the (optionally capped) sample count.
pub fn warm_up(
    model: &ModelGraph,
    trace: &TraceFile,
    num_classes: u32,
    m_cap: Option<u32>,
) -> Result<(GlobalMemory, WarmupReport)> {
    if !trace.has_labels() {
        return Err(Error::State("warm-up requires a labeled trace".into()));
    }
    let l = model.num_exit_points();
    let channels = model.exit_channels().to_vec();
    // f64 accumulation so the stored centers match an exact per-class mean.
    let mut sums: Vec<Vec<f64>> = (0..num_classes as usize * l)
        .map(|i| vec![0.0; channels[i % l]])
        .collect();
    let mut counts = vec![0u64; num_classes as usize];

    for i in 0..trace.num_frames() {
        let label = trace.label(i).expect("labeled trace");
        if label >= num_classes {
            return Err(Error::ClassRange {
                class: label,
                num_classes,
            });
        }
        let frame = trace.frame(i)?;
        let (exit_maps, final_out) =
            full_forward(model, frame).map_err(|e| Error::at_frame(i, e))?;
        counts[label as usize] += 1;
        for (pos, fm) in exit_maps.iter().enumerate() {
            let sv = encode_gap(fm, pos as u32 + 1);
            for (acc, &v) in sums[label as usize * l + pos].iter_mut().zip(&sv.values) {
                *acc += v as f64;
            }
        }
        // Without a trained head the final output is the last gap map.
        if !model.has_head() {
            let sv = encode_gap(&final_out, l as u32);
            for (acc, &v) in sums[label as usize * l + (l - 1)]
                .iter_mut()
                .zip(&sv.values)
            {
                *acc += v as f64;
            }
        } else {
            // Head present: the last exit map in exit_maps already covers
            // layer L, nothing extra to fold in.
        }
    }

    let mut memory = GlobalMemory::new(num_classes, channels);
    for class in 0..num_classes {
        let count = counts[class as usize];
        if count == 0 {
            continue;
        }
        let m = match m_cap {
            Some(cap) => count.min(cap as u64) as u32,
            None => count.min(u32::MAX as u64) as u32,
        };
        for layer0 in 0..l {
            let values: Vec<f32> = sums[class as usize * l + layer0]
                .iter()
                .map(|&s| (s / count as f64) as f32)
                .collect();
            memory.set_center(class, layer0, values, m)?;
        }
    }
    let report = WarmupReport {
        samples: trace.num_frames() as u64,
        uninitialized_classes: memory.uninitialized_classes(),
    };
    Ok((memory, report))
}
