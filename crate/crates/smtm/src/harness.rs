//! Benchmark harness: threshold sweeps, ablation grids, and report
//! emission. Reports are CSV + JSON with deterministic contents so a rerun
//! with the same inputs reproduces them byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::memory::GlobalMemory;
use crate::model::ModelGraph;
use crate::pipeline::{
    ac_csv_cell, baseline_run, run_stream, CacheSizeMode, EngineConfig, FrameResult, RunMetrics,
    RunOutput, TableDumpRow,
};
use crate::trace::TraceFile;

fn fmt_tau(tau: f32) -> String {
    if tau.is_infinite() {
        "inf".to_string()
    } else {
        format!("{tau}")
    }
}

fn opt_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub tau: String,
    pub accuracy: Option<f64>,
    /// Baseline accuracy minus this run's accuracy (positive = worse).
    pub accuracy_drop: Option<f64>,
    pub latency_reduction: f64,
    pub exit_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub baseline_accuracy: Option<f64>,
    pub rows: Vec<SweepRow>,
}

/// One pipeline run per threshold, each starting from the same warmed
/// memory, reported against a single baseline pass over the same trace.
pub fn sweep_tau(
    model: &ModelGraph,
    global: &GlobalMemory,
    config: &EngineConfig,
    trace: &TraceFile,
    taus: &[f32],
) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::Config("tau list must not be empty".into()));
    }
    let baseline = baseline_run(model, global, trace)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let cfg = EngineConfig {
            tau,
            ..config.clone()
        };
        let run = run_stream(model, global, &cfg, trace)?;
        rows.push(SweepRow {
            tau: fmt_tau(tau),
            accuracy: run.metrics.top1_accuracy,
            accuracy_drop: match (baseline.metrics.top1_accuracy, run.metrics.top1_accuracy) {
                (Some(b), Some(r)) => Some(b - r),
                _ => None,
            },
            latency_reduction: run.metrics.latency_reduction,
            exit_ratio: run.metrics.early_exit_ratio,
        });
    }
    Ok(SweepReport {
        baseline_accuracy: baseline.metrics.top1_accuracy,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub adaptive_size: bool,
    pub adaptive_centers: bool,
    pub hit_ratio: Option<f64>,
    pub accuracy: Option<f64>,
    pub latency_reduction: f64,
    pub exit_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

/// Four runs over the identical trace bytes: {constant-k, adaptive-k} x
/// {frozen centers, adaptive centers}. The base config supplies everything
/// else, including the constant k.
pub fn ablation_run(
    model: &ModelGraph,
    global: &GlobalMemory,
    config: &EngineConfig,
    trace: &TraceFile,
) -> Result<AblationReport> {
    let constant_k = match config.cache_size_mode {
        CacheSizeMode::Constant { k } => k,
        CacheSizeMode::Adaptive => 5,
    };
    let mut cells = Vec::with_capacity(4);
    for (adaptive_size, adaptive_centers) in
        [(false, false), (false, true), (true, false), (true, true)]
    {
        let cfg = EngineConfig {
            cache_size_mode: if adaptive_size {
                CacheSizeMode::Adaptive
            } else {
                CacheSizeMode::Constant { k: constant_k }
            },
            adaptive_centers,
            ..config.clone()
        };
        let run = run_stream(model, global, &cfg, trace)?;
        cells.push(AblationCell {
            adaptive_size,
            adaptive_centers,
            hit_ratio: run.metrics.hit_ratio,
            accuracy: run.metrics.top1_accuracy,
            latency_reduction: run.metrics.latency_reduction,
            exit_ratio: run.metrics.early_exit_ratio,
        });
    }
    Ok(AblationReport { cells })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::State(format!("report serialization failed: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_metrics_json(path: &Path, metrics: &RunMetrics) -> Result<()> {
    write_json(path, metrics)
}

/// Per-frame log: one row per frame with the fast-memory snapshot encoded
/// as semicolon-joined class ids.
pub fn write_frames_csv(path: &Path, frames: &[FrameResult]) -> Result<()> {
    let mut out = String::from("frame_id,ground_truth,predicted,exit_layer,ac,flops,fast_mem\n");
    for fr in frames {
        let fast = fr
            .fast_snapshot
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fr.frame_id,
            opt_cell(&fr.ground_truth),
            fr.predicted,
            fr.exit.csv_cell(),
            ac_csv_cell(&fr.ac_at_exit),
            fr.executed_flops,
            fast
        );
    }
    write_file(path, out.as_bytes())
}

pub fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut out = String::from("tau,accuracy,accuracy_drop,latency_reduction,exit_ratio\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.tau,
            opt_cell(&row.accuracy),
            opt_cell(&row.accuracy_drop),
            row.latency_reduction,
            row.exit_ratio
        );
    }
    write_file(path, out.as_bytes())
}

pub fn write_ablation_csv(path: &Path, report: &AblationReport) -> Result<()> {
    let mut out = String::from(
        "adaptive_size,adaptive_centers,hit_ratio,accuracy,latency_reduction,exit_ratio\n",
    );
    for cell in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            cell.adaptive_size,
            cell.adaptive_centers,
            opt_cell(&cell.hit_ratio),
            opt_cell(&cell.accuracy),
            cell.latency_reduction,
            cell.exit_ratio
        );
    }
    write_file(path, out.as_bytes())
}

/// Table dump written at each replacement event.
pub fn write_tables_csv(path: &Path, rows: &[TableDumpRow]) -> Result<()> {
    let mut out = String::from("frame_id,class_id,ft,ts,score\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.frame_id, row.class, row.frequency, row.absence, row.score
        );
    }
    write_file(path, out.as_bytes())
}

/// Per-frame, per-layer similarity diagnostics for offline analysis.
pub fn write_similarity_csv(
    path: &Path,
    rows: &[(u64, crate::encoding::SimilarityRow)],
) -> Result<()> {
    let mut out = String::from("frame_id,layer_id,class_id,similarity\n");
    for (frame, row) in rows {
        for &(class, s) in &row.entries {
            let _ = writeln!(out, "{},{},{},{}", frame, row.layer, class, s);
        }
    }
    write_file(path, out.as_bytes())
}

/// Single-layer separability of each captured similarity row. Rows where
/// the second-highest similarity is exactly zero report an empty value.
pub fn write_separability_csv(
    path: &Path,
    rows: &[(u64, crate::encoding::SimilarityRow)],
) -> Result<()> {
    use crate::encoding::{single_layer_separability, Separability};
    let mut out = String::from("frame_id,layer_id,separability,negative_denominator\n");
    for (frame, row) in rows {
        match single_layer_separability(row)? {
            Separability::Defined {
                value,
                negative_denominator,
            } => {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    frame, row.layer, value, negative_denominator
                );
            }
            Separability::Undefined => {
                let _ = writeln!(out, "{},{},,", frame, row.layer);
            }
        }
    }
    write_file(path, out.as_bytes())
}

/// Convenience bundle for emitting a run's full report set.
pub fn write_run_reports(
    dir: &Path,
    output: &RunOutput,
    tables: Option<&[TableDumpRow]>,
) -> Result<()> {
    write_metrics_json(&dir.join("metrics.json"), &output.metrics)?;
    write_frames_csv(&dir.join("frames.csv"), &output.frames)?;
    if let Some(rows) = tables {
        write_tables_csv(&dir.join("tables.csv"), rows)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::warm_up;
    use crate::model::{InputShape, LayerKind, LayerSpec, ModelManifest};
    use crate::stream::{
        class_templates, generate_longtail_trace, generate_round_robin_trace, Marginal, StreamSpec,
    };

    fn fixture() -> (ModelGraph, GlobalMemory, TraceFile) {
        let mut specs = Vec::new();
        let mut c = 2;
        for out_c in [4, 6, 8] {
            specs.push(LayerSpec {
                kind: LayerKind::Conv2d {
                    in_channels: c,
                    out_channels: out_c,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    groups: 1,
                },
                is_exit_point: false,
            });
            specs.push(LayerSpec {
                kind: LayerKind::Relu,
                is_exit_point: out_c != 8,
            });
            c = out_c;
        }
        specs.push(LayerSpec {
            kind: LayerKind::Gap,
            is_exit_point: true,
        });
        let manifest = ModelManifest::from_specs(
            "sweep-fixture",
            InputShape {
                channels: 2,
                height: 8,
                width: 8,
            },
            &specs,
        );
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let total: usize = specs.iter().map(|s| s.kind.param_count()).sum();
        let weights: Vec<f32> = (0..total).map(|_| rng.random_range(-0.3..0.3)).collect();
        let model = ModelGraph::from_manifest_and_weights(&manifest, weights).unwrap();

        let templates = class_templates(4, (2, 8, 8), 8);
        let warm = generate_round_robin_trace(&templates, 4, 0.02, 2).unwrap();
        let (global, _) = warm_up(&model, &warm, 4, None).unwrap();
        let spec = StreamSpec {
            num_classes: 4,
            marginal: Marginal::Zipf { exponent: 1.1 },
            burstiness: 5.0,
            frames: 80,
            noise: 0.05,
            seed: 6,
        };
        let trace = generate_longtail_trace(&spec, &templates).unwrap();
        (model, global, trace)
    }

    #[test]
    fn sweep_with_only_inf_matches_baseline() {
        let (model, global, trace) = fixture();
        let report = sweep_tau(
            &model,
            &global,
            &EngineConfig::default(),
            &trace,
            &[f32::INFINITY],
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].accuracy_drop, Some(0.0));
        assert_eq!(report.rows[0].latency_reduction, 0.0);
        assert_eq!(report.rows[0].exit_ratio, 0.0);
    }

    #[test]
    fn sweep_exit_ratio_is_weakly_decreasing_in_tau() {
        let (model, global, trace) = fixture();
        let taus = [0.01f32, 0.05, 0.2, 1.0, f32::INFINITY];
        let report = sweep_tau(&model, &global, &EngineConfig::default(), &trace, &taus).unwrap();
        for pair in report.rows.windows(2) {
            assert!(
                pair[1].exit_ratio <= pair[0].exit_ratio + 1e-12,
                "exit ratio rose from {} to {}",
                pair[0].exit_ratio,
                pair[1].exit_ratio
            );
        }
    }

    #[test]
    fn empty_tau_list_is_a_config_error() {
        let (model, global, trace) = fixture();
        assert!(matches!(
            sweep_tau(&model, &global, &EngineConfig::default(), &trace, &[]).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn ablation_produces_four_cells_in_fixed_order() {
        let (model, global, trace) = fixture();
        let report = ablation_run(&model, &global, &EngineConfig::default(), &trace).unwrap();
        assert_eq!(report.cells.len(), 4);
        let flags: Vec<(bool, bool)> = report
            .cells
            .iter()
            .map(|c| (c.adaptive_size, c.adaptive_centers))
            .collect();
        assert_eq!(
            flags,
            vec![(false, false), (false, true), (true, false), (true, true)]
        );
    }

    #[test]
    fn reports_are_byte_stable() {
        use crate::pipeline::RunCapture;
        use tempfile::tempdir;
        let (model, global, trace) = fixture();
        let cfg = EngineConfig {
            tau: 0.05,
            ..EngineConfig::default()
        };
        let dir = tempdir().unwrap();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        for d in [&a_dir, &b_dir] {
            let mut capture = RunCapture {
                tables: Some(Vec::new()),
                similarities: Some(Vec::new()),
            };
            let out = crate::pipeline::run_stream_with_capture(
                &model,
                &global,
                &cfg,
                &trace,
                &mut capture,
            )
            .unwrap();
            write_run_reports(d, &out, capture.tables.as_deref()).unwrap();
            let sims = capture.similarities.unwrap();
            write_similarity_csv(&d.join("similarities.csv"), &sims).unwrap();
            write_separability_csv(&d.join("separabilities.csv"), &sims).unwrap();
        }
        for name in [
            "metrics.json",
            "frames.csv",
            "tables.csv",
            "similarities.csv",
            "separabilities.csv",
        ] {
            let a = std::fs::read(a_dir.join(name)).unwrap();
            let b = std::fs::read(b_dir.join(name)).unwrap();
            assert_eq!(a, b, "report {name} differs between identical runs");
        }
    }

    #[test]
    fn similarity_capture_matches_offline_recomputation() {
        use crate::encoding::{cosine_similarity, encode_gap};
        use crate::pipeline::RunCapture;
        let (model, global, trace) = fixture();
        let cfg = EngineConfig {
            tau: f32::INFINITY,
            adaptive_centers: false,
            ..EngineConfig::default()
        };
        let mut capture = RunCapture {
            similarities: Some(Vec::new()),
            ..RunCapture::default()
        };
        let out =
            crate::pipeline::run_stream_with_capture(&model, &global, &cfg, &trace, &mut capture)
                .unwrap();
        let sims = capture.similarities.unwrap();
        assert!(!sims.is_empty());
        // With exits disabled and frozen centers, every captured row must
        // equal a direct recomputation against the warmed centers, using
        // the fast-memory snapshot recorded for that frame.
        for (frame_id, row) in sims.iter().take(40) {
            let fr = &out.frames[*frame_id as usize];
            let frame = trace.frame(*frame_id as usize).unwrap();
            let (exits, _) = crate::forward::full_forward(&model, frame).unwrap();
            let sv = encode_gap(&exits[(row.layer - 1) as usize], row.layer);
            let classes: Vec<_> = row.classes().collect();
            assert_eq!(classes, fr.fast_snapshot);
            for &(class, got) in &row.entries {
                let center = global.center(class, (row.layer - 1) as usize).unwrap();
                let want = cosine_similarity(&sv.values, &center.values).unwrap();
                assert_eq!(got.to_bits(), want.to_bits());
            }
        }
    }
}
