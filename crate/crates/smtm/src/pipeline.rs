//! Per-frame orchestration: stepwise inference, semantic matching, exit
//! decisions, and post-frame memory maintenance, plus the no-memory
//! baseline runner and metrics aggregation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoding::{encode_gap, match_layer, SemanticVector, SimilarityRow};
use crate::error::{Error, Result};
use crate::exit::{AcScore, CumulativeState, Verdict};
use crate::forward::StepOutcome;
use crate::memory::{
    adaptive_cache_size, apply_forgetting, record_observation, replacement_scores,
    select_fast_memory, update_centers, FastMemory, FrequencyTable, GlobalMemory, TimeStampTable,
};
use crate::model::ModelGraph;
use crate::tensor::FeatureMap;
use crate::trace::TraceFile;
use crate::ClassId;

/// How the fast-memory capacity is chosen at each replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CacheSizeMode {
    Constant { k: usize },
    Adaptive,
}

mod tau_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(tau: &f32, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_infinite() {
            "inf".serialize(s)
        } else {
            tau.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t == "inf" => Ok(f32::INFINITY),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// All pipeline tunables. `tau = inf` disables early exit entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Global exit threshold; exits fire when the confidence score is >= tau.
    #[serde(with = "tau_serde")]
    pub tau: f32,
    /// Observation window W for the forgetting mechanism.
    pub window: u32,
    /// Confidence level for adaptive cache sizing.
    pub cl: f64,
    pub k_min: usize,
    /// Upper cache bound; clamped to the class count at engine build.
    pub k_max: usize,
    pub cache_size_mode: CacheSizeMode,
    /// Update semantic centers online from predicted labels.
    pub adaptive_centers: bool,
    /// Fold absence decay into the frequency table every W frames.
    pub persistent_decay: bool,
    /// Recompute scores and fast memory every this many frames.
    pub replacement_period: u32,
    pub decay_base: f64,
    /// Restrict center updates to full-inference frames.
    pub adapt_full_frames_only: bool,
    /// Include the exit layer itself in the update range (the matched
    /// evidence); disable to update strictly earlier layers only.
    pub update_exit_layer: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tau: 1.0,
            window: 30,
            cl: 0.95,
            k_min: 1,
            k_max: usize::MAX,
            cache_size_mode: CacheSizeMode::Constant { k: 5 },
            adaptive_centers: false,
            persistent_decay: true,
            replacement_period: 1,
            decay_base: 0.25,
            adapt_full_frames_only: false,
            update_exit_layer: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.tau.is_nan() || self.tau < 0.0 {
            return bad("tau must be >= 0 or inf");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !(self.cl > 0.0 && self.cl < 1.0) {
            return bad("cl must lie in (0, 1)");
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad("need 1 <= k_min <= k_max");
        }
        if self.replacement_period == 0 {
            return bad("replacement_period must be positive");
        }
        if !(self.decay_base > 0.0 && self.decay_base < 1.0) {
            return bad("decay_base must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Where a frame's prediction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitLayer {
    /// Early exit at this 1-based exit index.
    At(u32),
    /// Full inference through the final head.
    Full,
}

impl ExitLayer {
    pub fn is_early(&self) -> bool {
        matches!(self, ExitLayer::At(_))
    }

    pub fn csv_cell(&self) -> String {
        match self {
            ExitLayer::At(l) => l.to_string(),
            ExitLayer::Full => "full".to_string(),
        }
    }
}

pub fn ac_csv_cell(ac: &Option<AcScore>) -> String {
    match ac {
        None => String::new(),
        Some(AcScore::Finite(v)) => format!("{v}"),
        Some(AcScore::Infinite) => "inf".to_string(),
        Some(AcScore::NoConfidence) => "none".to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame_id: u64,
    pub predicted: ClassId,
    pub exit: ExitLayer,
    /// Confidence score at the exit decision; None when no decision was
    /// taken (full inference without an exit attempt).
    pub ac_at_exit: Option<AcScore>,
    pub executed_flops: u64,
    pub ground_truth: Option<ClassId>,
    /// Fast-memory contents when the frame arrived.
    pub fast_snapshot: Vec<ClassId>,
}

/// One row of the table dump emitted at each replacement event.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDumpRow {
    pub frame_id: u64,
    pub class: ClassId,
    pub frequency: f64,
    pub absence: u64,
    pub score: f64,
}

/// Aggregated run metrics. Wall-clock is informational and excluded from
/// serialized reports so repeated runs stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub frames: u64,
    pub labeled_frames: u64,
    pub correct_frames: u64,
    pub top1_accuracy: Option<f64>,
    /// Early-exit counts per exit index 1..=L.
    pub exit_histogram: Vec<u64>,
    pub full_count: u64,
    pub early_exit_ratio: f64,
    pub hit_frames: Option<u64>,
    pub hit_ratio: Option<f64>,
    pub mean_flops_fraction: f64,
    pub latency_reduction: f64,
    pub total_model_flops: u64,
    pub center_memory_bytes: u64,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub frames: Vec<FrameResult>,
}

/// Exact memory footprint of the cached state: global center values,
/// fast-memory class index, and the two per-class tables (8 bytes each).
pub fn center_memory_bytes(global: &GlobalMemory, fast_len: usize) -> u64 {
    let per_class_center: u64 = global.exit_channels().iter().map(|&c| c as u64 * 4).sum();
    global.num_classes() as u64 * per_class_center
        + fast_len as u64 * 4
        + 2 * global.num_classes() as u64 * 8
}

/// Nearest-centroid prediction over all classes at the final exit layer.
/// Ties break to the lowest class id; classes without an initialized final
/// center are skipped.
pub fn predict_full(global: &GlobalMemory, final_sv: &SemanticVector) -> Result<ClassId> {
    let layer0 = global.num_exit_points() - 1;
    let mut best: Option<(ClassId, f32)> = None;
    for class in 0..global.num_classes() {
        let center = global.center(class, layer0)?;
        if center.updates == 0 {
            continue;
        }
        let s = crate::encoding::cosine_similarity(&final_sv.values, &center.values)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((class, s));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::State("no initialized final-layer centers".into()))
}

/// Stateful per-stream pipeline. Frames must be processed in order; the
/// memory state at frame t depends on frame t-1.
#[derive(Debug)]
pub struct Engine<'m> {
    model: &'m ModelGraph,
    config: EngineConfig,
    global: GlobalMemory,
    fast: FastMemory,
    ft: FrequencyTable,
    ts: TimeStampTable,
    frames_processed: u64,
    effective_k_max: usize,
    log_tables: bool,
    table_log: Vec<TableDumpRow>,
    log_similarities: bool,
    similarity_log: Vec<(u64, SimilarityRow)>,
}

impl<'m> Engine<'m> {
    /// Build an engine over a warmed global memory. The initial fast memory
    /// comes from an immediate replacement pass, so fresh tables leave it
    /// empty (cold start) and restored tables repopulate it.
    pub fn new(model: &'m ModelGraph, global: GlobalMemory, config: EngineConfig) -> Result<Self> {
        let n = global.num_classes();
        Self::with_tables(
            model,
            global,
            config.clone(),
            FrequencyTable::new(n),
            TimeStampTable::new(n, config.window),
        )
    }

    pub fn with_tables(
        model: &'m ModelGraph,
        global: GlobalMemory,
        config: EngineConfig,
        ft: FrequencyTable,
        ts: TimeStampTable,
    ) -> Result<Self> {
        config.validate()?;
        if global.num_exit_points() != model.num_exit_points()
            || global.exit_channels() != model.exit_channels()
        {
            return Err(Error::State(
                "global memory layout does not match the model's exit points".into(),
            ));
        }
        if global.num_classes() == 0 {
            return Err(Error::State("global memory holds no classes".into()));
        }
        if global.uninitialized_classes().len() == global.num_classes() as usize {
            return Err(Error::State(
                "engine requires a warmed global memory (no initialized centers)".into(),
            ));
        }
        if model.has_head() && model.final_output_len() != global.num_classes() as usize {
            return Err(Error::State(format!(
                "model head outputs {} classes but memory holds {}",
                model.final_output_len(),
                global.num_classes()
            )));
        }
        let n = global.num_classes() as usize;
        if ft.counts().len() != n || ts.counters().len() != n {
            return Err(Error::State(
                "table sizes do not match the class count".into(),
            ));
        }
        let effective_k_max = config.k_max.min(n);
        if config.k_min > effective_k_max {
            return Err(Error::Config(format!(
                "k_min {} exceeds the class count {}",
                config.k_min, n
            )));
        }
        let mut engine = Engine {
            model,
            config,
            global,
            fast: FastMemory::empty(),
            ft,
            ts,
            frames_processed: 0,
            effective_k_max,
            log_tables: false,
            table_log: Vec::new(),
            log_similarities: false,
            similarity_log: Vec::new(),
        };
        engine.replace_fast_memory();
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn global_memory(&self) -> &GlobalMemory {
        &self.global
    }

    pub fn fast_memory(&self) -> &FastMemory {
        &self.fast
    }

    pub fn frequency_table(&self) -> &FrequencyTable {
        &self.ft
    }

    pub fn time_stamp_table(&self) -> &TimeStampTable {
        &self.ts
    }

    pub fn set_table_logging(&mut self, enabled: bool) {
        self.log_tables = enabled;
    }

    pub fn take_table_log(&mut self) -> Vec<TableDumpRow> {
        std::mem::take(&mut self.table_log)
    }

    /// Capture every similarity row computed during matching, keyed by
    /// frame id, for the diagnostic CSV export.
    pub fn set_similarity_logging(&mut self, enabled: bool) {
        self.log_similarities = enabled;
    }

    pub fn take_similarity_log(&mut self) -> Vec<(u64, SimilarityRow)> {
        std::mem::take(&mut self.similarity_log)
    }

    fn choose_k(&self, scores: &[f64]) -> usize {
        match self.config.cache_size_mode {
            CacheSizeMode::Constant { k } => k.min(self.effective_k_max),
            CacheSizeMode::Adaptive => adaptive_cache_size(
                scores,
                self.config.cl,
                self.config.k_min,
                self.effective_k_max,
            ),
        }
    }

    fn replace_fast_memory(&mut self) {
        let scores = replacement_scores(&self.ft, &self.ts, self.config.decay_base);
        let k = self.choose_k(&scores);
        self.fast = select_fast_memory(&self.global, &scores, k);
        if self.log_tables {
            for (class, &score) in scores.iter().enumerate() {
                self.table_log.push(TableDumpRow {
                    frame_id: self.frames_processed,
                    class: class as ClassId,
                    frequency: self.ft.counts()[class],
                    absence: self.ts.counters()[class],
                    score,
                });
            }
        }
    }

    /// Full-inference prediction from the final output: argmax of the head
    /// when the model carries one, nearest centroid otherwise. Returns the
    /// final-layer semantic vector when one was encoded.
    fn predict_from_final(
        &self,
        final_out: &FeatureMap,
    ) -> Result<(ClassId, Option<SemanticVector>)> {
        if self.model.has_head() {
            let data = final_out.data();
            let mut best = 0usize;
            for i in 1..data.len() {
                if data[i] > data[best] {
                    best = i;
                }
            }
            Ok((best as ClassId, None))
        } else {
            let sv = encode_gap(final_out, self.model.num_exit_points() as u32);
            let class = predict_full(&self.global, &sv)?;
            Ok((class, Some(sv)))
        }
    }

    /// Run one frame through the pipeline and update the memory state.
    pub fn process_frame(
        &mut self,
        frame: FeatureMap,
        ground_truth: Option<ClassId>,
    ) -> Result<FrameResult> {
        let snapshot = self.fast.classes().to_vec();
        let matching_enabled = snapshot.len() >= 2;
        let mut state = if matching_enabled {
            Some(CumulativeState::new(&snapshot)?)
        } else {
            None
        };

        let mut session = self.model.begin_forward(frame)?;
        let mut vectors: Vec<SemanticVector> = Vec::with_capacity(self.model.num_exit_points());
        let predicted;
        let exit;
        let mut ac_at_exit = None;
        loop {
            match session.advance_to_next_exit()? {
                StepOutcome::Exit {
                    exit_index,
                    feature_map,
                } => {
                    let sv = encode_gap(&feature_map, exit_index);
                    if let Some(state) = state.as_mut() {
                        let row = match_layer(&sv, &self.fast, &self.global)?;
                        state.accumulate(&row)?;
                        if self.log_similarities {
                            self.similarity_log.push((self.frames_processed, row));
                        }
                        vectors.push(sv);
                        let decision = state.decide(self.config.tau);
                        if let Verdict::Exit { class, .. } = decision.verdict {
                            predicted = class;
                            exit = ExitLayer::At(exit_index);
                            ac_at_exit = Some(decision.ac);
                            break;
                        }
                    } else {
                        vectors.push(sv);
                    }
                }
                StepOutcome::Final(final_out) => {
                    let (class, final_sv) = self.predict_from_final(&final_out)?;
                    predicted = class;
                    if let Some(sv) = final_sv {
                        vectors.push(sv);
                    }
                    exit = ExitLayer::Full;
                    // Report the last confidence seen, if matching ran.
                    if let Some(state) = &state {
                        ac_at_exit = state.accumulated_confidence().ok();
                    }
                    break;
                }
            }
        }

        record_observation(&mut self.ft, &mut self.ts, predicted)?;

        let update_allowed = match exit {
            ExitLayer::At(_) => !self.config.adapt_full_frames_only,
            ExitLayer::Full => true,
        };
        if self.config.adaptive_centers && update_allowed {
            let upto = match exit {
                ExitLayer::At(l) if !self.config.update_exit_layer => (l - 1) as usize,
                _ => vectors.len(),
            };
            update_centers(&mut self.global, predicted, &vectors[..upto])?;
        }

        self.frames_processed += 1;
        if self.config.persistent_decay
            && self
                .frames_processed
                .is_multiple_of(self.config.window as u64)
        {
            apply_forgetting(&mut self.ft, &self.ts, self.config.decay_base);
        }
        if self
            .frames_processed
            .is_multiple_of(self.config.replacement_period as u64)
        {
            self.replace_fast_memory();
        }

        Ok(FrameResult {
            frame_id: self.frames_processed - 1,
            predicted,
            exit,
            ac_at_exit,
            executed_flops: session.executed_flops(),
            ground_truth,
            fast_snapshot: snapshot,
        })
    }
}

fn build_metrics(
    frames: &[FrameResult],
    model: &ModelGraph,
    center_bytes: u64,
    wall_clock_seconds: f64,
) -> RunMetrics {
    let total = frames.len() as u64;
    let mut exit_histogram = vec![0u64; model.num_exit_points()];
    let mut full_count = 0u64;
    let mut labeled = 0u64;
    let mut correct = 0u64;
    let mut hits = 0u64;
    let mut flops_fraction_sum = 0.0f64;
    let model_flops = model.total_flops();
    for fr in frames {
        match fr.exit {
            ExitLayer::At(l) => exit_histogram[(l - 1) as usize] += 1,
            ExitLayer::Full => full_count += 1,
        }
        if let Some(gt) = fr.ground_truth {
            labeled += 1;
            if gt == fr.predicted {
                correct += 1;
            }
            if fr.fast_snapshot.contains(&gt) {
                hits += 1;
            }
        }
        flops_fraction_sum += fr.executed_flops as f64 / model_flops as f64;
    }
    let early = total - full_count;
    let mean_flops_fraction = if total == 0 {
        1.0
    } else {
        flops_fraction_sum / total as f64
    };
    RunMetrics {
        frames: total,
        labeled_frames: labeled,
        correct_frames: correct,
        top1_accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        exit_histogram,
        full_count,
        early_exit_ratio: if total == 0 {
            0.0
        } else {
            early as f64 / total as f64
        },
        hit_frames: (labeled > 0).then_some(hits),
        hit_ratio: (labeled > 0).then(|| hits as f64 / labeled as f64),
        mean_flops_fraction,
        latency_reduction: 1.0 - mean_flops_fraction,
        total_model_flops: model_flops,
        center_memory_bytes: center_bytes,
        wall_clock_seconds,
    }
}

/// Run the full pipeline over a trace. The global memory is cloned, so a
/// sweep over configurations always starts from the same warmed state;
/// results are a pure function of (config, model, trace).
pub fn run_stream(
    model: &ModelGraph,
    global: &GlobalMemory,
    config: &EngineConfig,
    trace: &TraceFile,
) -> Result<RunOutput> {
    run_stream_with_capture(model, global, config, trace, &mut RunCapture::default())
}

/// Optional diagnostic captures for a run. Enable a capture by setting the
/// field to `Some(Vec::new())` before the run.
#[derive(Debug, Default)]
pub struct RunCapture {
    /// Frequency/time-stamp table rows at each replacement event.
    pub tables: Option<Vec<TableDumpRow>>,
    /// Every similarity row computed during matching, keyed by frame id.
    pub similarities: Option<Vec<(u64, SimilarityRow)>>,
}

/// As [`run_stream`], filling any enabled diagnostic captures.
pub fn run_stream_with_capture(
    model: &ModelGraph,
    global: &GlobalMemory,
    config: &EngineConfig,
    trace: &TraceFile,
    capture: &mut RunCapture,
) -> Result<RunOutput> {
    if trace.num_frames() == 0 {
        return Err(Error::State("trace holds no frames".into()));
    }
    let start = Instant::now();
    let mut engine = Engine::new(model, global.clone(), config.clone())?;
    engine.set_table_logging(capture.tables.is_some());
    engine.set_similarity_logging(capture.similarities.is_some());
    let mut frames = Vec::with_capacity(trace.num_frames());
    for i in 0..trace.num_frames() {
        let frame = trace.frame(i).map_err(|e| Error::at_frame(i, e))?;
        let result = engine
            .process_frame(frame, trace.label(i))
            .map_err(|e| Error::at_frame(i, e))?;
        frames.push(result);
    }
    let center_bytes = center_memory_bytes(engine.global_memory(), engine.fast_memory().len());
    let metrics = build_metrics(&frames, model, center_bytes, start.elapsed().as_secs_f64());
    if let Some(sink) = &mut capture.tables {
        *sink = engine.take_table_log();
    }
    if let Some(sink) = &mut capture.similarities {
        *sink = engine.take_similarity_log();
    }
    Ok(RunOutput { metrics, frames })
}

/// Full inference on every frame with no memory evolution: the reference
/// the pipeline is measured against. Hit ratio is not applicable.
pub fn baseline_run(
    model: &ModelGraph,
    global: &GlobalMemory,
    trace: &TraceFile,
) -> Result<RunOutput> {
    if trace.num_frames() == 0 {
        return Err(Error::State("trace holds no frames".into()));
    }
    let start = Instant::now();
    // A throwaway engine reuses the full-prediction path; tau = inf plus
    // default tables means no exits and no adaptation, and we never call
    // its post-frame maintenance.
    let probe = Engine::new(
        model,
        global.clone(),
        EngineConfig {
            tau: f32::INFINITY,
            ..EngineConfig::default()
        },
    )?;
    let mut frames = Vec::with_capacity(trace.num_frames());
    for i in 0..trace.num_frames() {
        let frame = trace.frame(i).map_err(|e| Error::at_frame(i, e))?;
        let (exits, final_out) =
            crate::forward::full_forward(model, frame).map_err(|e| Error::at_frame(i, e))?;
        let _ = exits;
        let (predicted, _) = probe.predict_from_final(&final_out)?;
        frames.push(FrameResult {
            frame_id: i as u64,
            predicted,
            exit: ExitLayer::Full,
            ac_at_exit: None,
            executed_flops: model.total_flops(),
            ground_truth: trace.label(i),
            fast_snapshot: Vec::new(),
        });
    }
    let center_bytes = center_memory_bytes(global, 0);
    let mut metrics = build_metrics(&frames, model, center_bytes, start.elapsed().as_secs_f64());
    // No cache: the in-fast-memory hit ratio is not applicable.
    metrics.hit_frames = None;
    metrics.hit_ratio = None;
    Ok(RunOutput { metrics, frames })
}
