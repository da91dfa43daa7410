//! Command execution: each function consumes resolved parameters, performs
//! the work, and writes its reports plus `manifest.json` into the output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use smtm::harness::{
    ablation_run, sweep_tau, write_ablation_csv, write_json, write_run_reports,
    write_separability_csv, write_similarity_csv, write_sweep_csv,
};
use smtm::memory::{warm_up, GlobalMemory};
use smtm::model::ModelGraph;
use smtm::modelgen::{self, Preset};
use smtm::pipeline::{baseline_run, run_stream_with_capture, RunCapture, RunOutput};
use smtm::stream::{
    class_templates, generate_longtail_trace, generate_round_robin_trace, perturb_templates,
    Marginal, StreamSpec,
};
use smtm::trace::TraceFile;

use crate::params::*;

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {out:?}"))
}

fn write_manifest(out: &Path, params: &Params) -> Result<()> {
    let path = out.join("manifest.json");
    fs::write(&path, params.to_json()).with_context(|| format!("writing {path:?}"))?;
    Ok(())
}

fn load_model(manifest: &str, weights: &str) -> Result<ModelGraph> {
    ModelGraph::load(Path::new(manifest), Path::new(weights))
        .with_context(|| format!("loading model from {manifest} + {weights}"))
}

fn load_centers(path: &str) -> Result<GlobalMemory> {
    GlobalMemory::load(Path::new(path)).with_context(|| format!("loading center store {path}"))
}

fn load_trace(path: &str) -> Result<TraceFile> {
    TraceFile::load(Path::new(path)).with_context(|| format!("loading trace {path}"))
}

fn print_run_summary(label: &str, output: &RunOutput) {
    let m = &output.metrics;
    let acc = m
        .top1_accuracy
        .map(|a| format!("{:.4}", a))
        .unwrap_or_else(|| "n/a".into());
    let hit = m
        .hit_ratio
        .map(|h| format!("{:.4}", h))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{label}: {} frames, top1 {}, early-exit {:.4}, hit {}, flops-fraction {:.4}, \
         latency-reduction {:.4}, centers {} bytes, wall-clock {:.3}s",
        m.frames,
        acc,
        m.early_exit_ratio,
        hit,
        m.mean_flops_fraction,
        m.latency_reduction,
        m.center_memory_bytes,
        m.wall_clock_seconds
    );
}

pub fn gen_trace(params: &GenTraceParams, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let dims = (params.channels, params.height, params.width);
    let mut templates = class_templates(params.classes as usize, dims, params.template_seed);
    if params.template_drift != 0.0 {
        templates = perturb_templates(
            &templates,
            params.template_drift,
            params.template_seed ^ 0x5eed,
        );
    }
    let trace = if params.round_robin {
        if !params.frames.is_multiple_of(params.classes as usize) {
            bail!(
                "round-robin traces need frames ({}) divisible by classes ({})",
                params.frames,
                params.classes
            );
        }
        generate_round_robin_trace(
            &templates,
            params.frames / params.classes as usize,
            params.noise,
            params.seed,
        )?
    } else {
        let marginal = match (&params.freqs, params.zipf) {
            (Some(freqs), _) => Marginal::Explicit(freqs.clone()),
            (None, Some(exponent)) => Marginal::Zipf { exponent },
            (None, None) => Marginal::Zipf { exponent: 1.2 },
        };
        let spec = StreamSpec {
            num_classes: params.classes as usize,
            marginal,
            burstiness: params.burstiness,
            frames: params.frames,
            noise: params.noise,
            seed: params.seed,
        };
        generate_longtail_trace(&spec, &templates)?
    };
    let path = out.join("trace.bin");
    trace.save(&path)?;
    write_manifest(out, &Params::GenTrace(params.clone()))?;
    println!(
        "wrote {} frames ({}x{}x{}, labeled) to {}",
        trace.num_frames(),
        params.channels,
        params.height,
        params.width,
        path.display()
    );
    Ok(path)
}

pub fn gen_model(params: &GenModelParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let preset = Preset::parse(&params.preset, params.head_classes).with_context(|| {
        format!(
            "unknown preset {:?} (head presets need --head-classes)",
            params.preset
        )
    })?;
    let manifest = modelgen::manifest(preset, &params.name);
    let weights = modelgen::generate_weights(&manifest, params.seed)?;
    let manifest_path = out.join("model.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text)?;
    let blob: Vec<u8> = weights.iter().flat_map(|v| v.to_le_bytes()).collect();
    let weights_path = out.join("weights.bin");
    fs::write(&weights_path, blob)?;
    write_manifest(out, &Params::GenModel(params.clone()))?;

    let model = ModelGraph::from_manifest_and_weights(&manifest, weights)?;
    println!(
        "wrote {} ({} layers, {} exit points, {} params, {} flops) to {}",
        params.name,
        model.layers().len(),
        model.num_exit_points(),
        model.param_count(),
        model.total_flops(),
        out.display()
    );
    Ok(())
}

pub fn warmup(params: &WarmupParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = load_model(&params.model, &params.weights)?;
    let trace = load_trace(&params.trace)?;
    let classes = match params.classes {
        Some(n) => n,
        None => {
            let labels = trace.labels().context("warm-up requires a labeled trace")?;
            labels.iter().copied().max().map_or(0, |m| m + 1)
        }
    };
    let (memory, report) = warm_up(&model, &trace, classes, params.m_cap)?;
    let path = out.join("centers.bin");
    memory.save(&path)?;
    write_manifest(out, &Params::Warmup(params.clone()))?;
    println!(
        "warmed {} classes x {} exit points from {} samples -> {}",
        classes,
        model.num_exit_points(),
        report.samples,
        path.display()
    );
    if !report.uninitialized_classes.is_empty() {
        println!(
            "warning: classes {:?} had no samples; their centers stay uninitialized",
            report.uninitialized_classes
        );
    }
    Ok(())
}

pub fn inspect_model(manifest: &str, weights: &str) -> Result<()> {
    let model = load_model(manifest, weights)?;
    println!(
        "model {} ({}x{}x{} input)",
        model.name(),
        model.input_shape().0,
        model.input_shape().1,
        model.input_shape().2
    );
    println!(
        "{:<5} {:<14} {:>12} {:>12} {:>14} {:>5}",
        "layer", "kind", "out shape", "params", "flops", "exit"
    );
    for (i, layer) in model.layers().iter().enumerate() {
        let (c, h, w) = layer.out_shape;
        println!(
            "{:<5} {:<14} {:>12} {:>12} {:>14} {:>5}",
            i,
            layer.spec.kind.name(),
            format!("{c}x{h}x{w}"),
            layer.spec.kind.param_count(),
            layer.flops,
            if layer.spec.is_exit_point { "yes" } else { "" }
        );
    }
    println!(
        "total: {} params, {} flops, {} exit points at layers {:?}",
        model.param_count(),
        model.total_flops(),
        model.num_exit_points(),
        model.exit_layers()
    );
    let center_floats: usize = model.exit_channels().iter().sum();
    let map_floats: usize = model.exit_shapes().iter().map(|&(c, h, w)| c * h * w).sum();
    println!(
        "per class, semantic centers take {} bytes; caching raw exit feature maps would take {} bytes per frame ({}x more)",
        center_floats * 4,
        map_floats * 4,
        map_floats / center_floats.max(1)
    );
    Ok(())
}

pub fn run(params: &RunParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = load_model(&params.model, &params.weights)?;
    let centers = load_centers(&params.centers)?;
    let trace = load_trace(&params.trace)?;
    let mut capture = RunCapture {
        tables: params.dump_tables.then(Vec::new),
        similarities: params.dump_similarities.then(Vec::new),
    };
    let output = run_stream_with_capture(&model, &centers, &params.engine, &trace, &mut capture)?;
    write_run_reports(out, &output, capture.tables.as_deref())?;
    if let Some(sims) = &capture.similarities {
        write_similarity_csv(&out.join("similarities.csv"), sims)?;
        write_separability_csv(&out.join("separabilities.csv"), sims)?;
    }
    write_manifest(out, &Params::Run(params.clone()))?;
    print_run_summary("run", &output);
    Ok(())
}

pub fn baseline(params: &BaselineParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = load_model(&params.model, &params.weights)?;
    let centers = load_centers(&params.centers)?;
    let trace = load_trace(&params.trace)?;
    let output = baseline_run(&model, &centers, &trace)?;
    write_run_reports(out, &output, None)?;
    write_manifest(out, &Params::Baseline(params.clone()))?;
    print_run_summary("baseline", &output);
    Ok(())
}

pub fn sweep(params: &SweepParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = load_model(&params.model, &params.weights)?;
    let centers = load_centers(&params.centers)?;
    let trace = load_trace(&params.trace)?;
    let report = sweep_tau(&model, &centers, &params.engine, &trace, &params.taus)?;
    write_sweep_csv(&out.join("sweep.csv"), &report)?;
    write_json(&out.join("sweep.json"), &report)?;
    write_manifest(out, &Params::Sweep(params.clone()))?;
    println!(
        "baseline top1 {}",
        report
            .baseline_accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    for row in &report.rows {
        println!(
            "tau {:>6}: top1 {} drop {} exit {:.4} latency-reduction {:.4}",
            row.tau,
            row.accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            row.accuracy_drop
                .map(|d| format!("{d:+.4}"))
                .unwrap_or_else(|| "n/a".into()),
            row.exit_ratio,
            row.latency_reduction
        );
    }
    Ok(())
}

pub fn ablate(params: &AblateParams, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = load_model(&params.model, &params.weights)?;
    let centers = load_centers(&params.centers)?;
    let trace = load_trace(&params.trace)?;
    let report = ablation_run(&model, &centers, &params.engine, &trace)?;
    write_ablation_csv(&out.join("ablation.csv"), &report)?;
    write_json(&out.join("ablation.json"), &report)?;
    write_manifest(out, &Params::Ablate(params.clone()))?;
    for cell in &report.cells {
        println!(
            "size {:<8} centers {:<8}: hit {} top1 {} exit {:.4} latency-reduction {:.4}",
            if cell.adaptive_size {
                "adaptive"
            } else {
                "constant"
            },
            if cell.adaptive_centers {
                "adaptive"
            } else {
                "frozen"
            },
            cell.hit_ratio
                .map(|h| format!("{h:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            cell.accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            cell.exit_ratio,
            cell.latency_reduction
        );
    }
    Ok(())
}

/// Dispatch a manifest's command into the given output directory.
pub fn execute(params: &Params, out: &Path) -> Result<()> {
    match params {
        Params::GenTrace(p) => gen_trace(p, out).map(|_| ()),
        Params::GenModel(p) => gen_model(p, out),
        Params::Warmup(p) => warmup(p, out),
        Params::Run(p) => run(p, out),
        Params::Baseline(p) => baseline(p, out),
        Params::Sweep(p) => sweep(p, out),
        Params::Ablate(p) => ablate(p, out),
    }
}
