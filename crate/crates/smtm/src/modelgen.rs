//! Deterministic demo-model generation: fixed architectures with seeded
//! fan-in-scaled random weights. Backs the `gen-model` CLI command and the
//! benchmark fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{InputShape, LayerKind, LayerSpec, ModelGraph, ModelManifest};

/// Built-in architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Six conv blocks on 16x24x24 input with an exit after each block and a
    /// final gap exit; nearest-centroid head.
    SixExit,
    /// Three small blocks on 16x16x16 input; fast to execute.
    Tiny,
    /// The six-exit backbone plus a dense+softmax head with the given class
    /// count.
    SixExitHead { classes: usize },
}

impl Preset {
    pub fn parse(name: &str, head_classes: Option<usize>) -> Option<Preset> {
        match name {
            "six-exit" => Some(Preset::SixExit),
            "tiny" => Some(Preset::Tiny),
            "six-exit-head" => Some(Preset::SixExitHead {
                classes: head_classes?,
            }),
            _ => None,
        }
    }
}

fn conv(in_c: usize, out_c: usize) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv2d {
            in_channels: in_c,
            out_channels: out_c,
            kernel: 3,
            stride: 1,
            padding: 1,
            groups: 1,
        },
        is_exit_point: false,
    }
}

fn plain(kind: LayerKind, is_exit_point: bool) -> LayerSpec {
    LayerSpec {
        kind,
        is_exit_point,
    }
}

fn six_exit_specs() -> (InputShape, Vec<LayerSpec>) {
    let input = InputShape {
        channels: 16,
        height: 24,
        width: 24,
    };
    let mut specs = Vec::new();
    let mut c = 16;
    // Wide blocks keep the per-exit class geometry well conditioned; pool
    // the first four blocks down to 1x1, then keep spatial size.
    for (out_c, pool) in [
        (64usize, true),
        (64, true),
        (64, true),
        (64, true),
        (64, false),
        (64, false),
    ] {
        specs.push(conv(c, out_c));
        specs.push(plain(LayerKind::Relu, !pool));
        if pool {
            specs.push(plain(
                LayerKind::Maxpool {
                    kernel: 2,
                    stride: 2,
                },
                true,
            ));
        }
        c = out_c;
    }
    // The sixth block's relu exit is superseded by the final gap exit.
    specs.last_mut().unwrap().is_exit_point = false;
    specs.push(plain(LayerKind::Gap, true));
    (input, specs)
}

fn tiny_specs() -> (InputShape, Vec<LayerSpec>) {
    let input = InputShape {
        channels: 16,
        height: 16,
        width: 16,
    };
    let mut specs = Vec::new();
    let mut c = 16;
    for (out_c, pool) in [(32usize, true), (32, true), (32, false)] {
        specs.push(conv(c, out_c));
        specs.push(plain(LayerKind::Relu, !pool));
        if pool {
            specs.push(plain(
                LayerKind::Maxpool {
                    kernel: 2,
                    stride: 2,
                },
                true,
            ));
        }
        c = out_c;
    }
    specs.last_mut().unwrap().is_exit_point = false;
    specs.push(plain(LayerKind::Gap, true));
    (input, specs)
}

/// Manifest for a preset; weights come from [`generate_weights`].
pub fn manifest(preset: Preset, name: &str) -> ModelManifest {
    let (input, specs) = match preset {
        Preset::SixExit => six_exit_specs(),
        Preset::Tiny => tiny_specs(),
        Preset::SixExitHead { classes } => {
            let (input, mut specs) = six_exit_specs();
            specs.push(plain(
                LayerKind::Dense {
                    in_features: 64,
                    out_features: classes,
                },
                false,
            ));
            specs.push(plain(LayerKind::Softmax, false));
            (input, specs)
        }
    };
    ModelManifest::from_specs(name, input, &specs)
}

/// Seeded fan-in-scaled uniform weights for a manifest, in declaration
/// order (kernel then bias per layer).
pub fn generate_weights(manifest: &ModelManifest, seed: u64) -> Result<Vec<f32>> {
    let specs = manifest.parse_layers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for spec in &specs {
        match spec.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                groups,
                ..
            } => {
                let fan_in = (in_channels / groups) * kernel * kernel;
                let bound = (3.0 / fan_in as f32).sqrt();
                let n = out_channels * (in_channels / groups) * kernel * kernel;
                out.extend((0..n).map(|_| rng.random_range(-bound..bound)));
                out.extend(std::iter::repeat_n(0.0f32, out_channels));
            }
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let bound = (3.0 / in_features as f32).sqrt();
                out.extend(
                    (0..in_features * out_features).map(|_| rng.random_range(-bound..bound)),
                );
                out.extend(std::iter::repeat_n(0.0f32, out_features));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Build a ready-to-run preset model.
pub fn build(preset: Preset, name: &str, seed: u64) -> Result<ModelGraph> {
    let manifest = manifest(preset, name);
    let weights = generate_weights(&manifest, seed)?;
    ModelGraph::from_manifest_and_weights(&manifest, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_exit_preset_has_six_exits_ending_in_gap() {
        let model = build(Preset::SixExit, "m", 1).unwrap();
        assert_eq!(model.num_exit_points(), 6);
        assert_eq!(model.exit_channels(), &[64; 6]);
        assert!(!model.has_head());
        assert_eq!(model.input_shape(), (16, 24, 24));
    }

    #[test]
    fn tiny_preset_has_three_exits() {
        let model = build(Preset::Tiny, "m", 1).unwrap();
        assert_eq!(model.num_exit_points(), 3);
        assert!(!model.has_head());
    }

    #[test]
    fn head_preset_appends_dense_softmax() {
        let model = build(Preset::SixExitHead { classes: 10 }, "m", 1).unwrap();
        assert_eq!(model.num_exit_points(), 6);
        assert!(model.has_head());
        assert_eq!(model.final_output_len(), 10);
    }

    #[test]
    fn weights_are_seed_deterministic() {
        let m = manifest(Preset::Tiny, "m");
        let a = generate_weights(&m, 9).unwrap();
        let b = generate_weights(&m, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_weights(&m, 10).unwrap();
        assert_ne!(a, c);
    }
}
