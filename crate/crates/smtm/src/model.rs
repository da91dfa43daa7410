//! Model manifest parsing, graph validation, and per-layer FLOPs accounting.
//!
//! A model is described by a JSON manifest (layer list in execution order)
//! plus a flat little-endian f32 weight blob. Weights appear in manifest
//! declaration order; within a layer the kernel is laid out as
//! (out-channel, in-channel, kernel-row, kernel-col) with biases after
//! kernels.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::shape_str;

fn default_groups() -> usize {
    1
}

/// Layer kind plus its shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_groups")]
        groups: usize,
    },
    Relu,
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    Avgpool {
        kernel: usize,
        stride: usize,
    },
    Gap,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    #[serde(rename = "residual-add")]
    ResidualAdd {
        /// 0-based index of the earlier layer whose output is added.
        source: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Avgpool { .. } => "avgpool",
            LayerKind::Gap => "gap",
            LayerKind::Dense { .. } => "dense",
            LayerKind::ResidualAdd { .. } => "residual-add",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Number of f32 parameters (kernel + bias) this layer consumes.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                groups,
                ..
            } => out_channels * (in_channels / groups) * kernel * kernel + out_channels,
            LayerKind::Dense {
                in_features,
                out_features,
            } => out_features * in_features + out_features,
            _ => 0,
        }
    }
}

/// One manifest entry: a layer kind plus its exit-point marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_exit_point: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    #[serde(default)]
    pub name: String,
    pub input: InputShape,
    pub layers: Vec<serde_json::Value>,
}

impl ModelManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Parse each layer entry, reporting the failing layer's index.
    pub fn parse_layers(&self) -> Result<Vec<LayerSpec>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value(v.clone()).map_err(|e| Error::ManifestLayer {
                    layer: i,
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    pub fn from_specs(name: &str, input: InputShape, specs: &[LayerSpec]) -> Self {
        ModelManifest {
            name: name.to_string(),
            input,
            layers: specs
                .iter()
                .map(|s| serde_json::to_value(s).expect("layer spec serializes"))
                .collect(),
        }
    }
}

/// Per-layer parameters split out of the flat weight blob.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

/// A validated layer: spec, resolved shapes, parameters, FLOPs.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
    pub flops: u64,
    pub params: LayerParams,
}

/// FLOPs for one layer application.
///
/// conv2d: 2 * k^2 * (Cin/groups) * Cout * Hout * Wout; dense: 2 * in * out;
/// everything else counts its input elements.
pub fn layer_flops(
    kind: &LayerKind,
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
) -> u64 {
    let in_elems = (in_shape.0 * in_shape.1 * in_shape.2) as u64;
    match *kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            groups,
            ..
        } => {
            2 * (kernel * kernel) as u64
                * (in_channels / groups) as u64
                * out_channels as u64
                * (out_shape.1 * out_shape.2) as u64
        }
        LayerKind::Dense {
            in_features,
            out_features,
        } => 2 * in_features as u64 * out_features as u64,
        _ => in_elems,
    }
}

fn pooled_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Validated model: ordered layers, exit points, shapes, weights.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    name: String,
    input_shape: (usize, usize, usize),
    layers: Vec<Layer>,
    /// 0-based layer indices of the exit points, strictly increasing.
    exit_layers: Vec<usize>,
    /// Output channel count at each exit point.
    exit_channels: Vec<usize>,
    /// Full output shape at each exit point.
    exit_shapes: Vec<(usize, usize, usize)>,
    /// Layers whose outputs are residual-add sources.
    skip_sources: BTreeSet<usize>,
    total_flops: u64,
}

impl ModelGraph {
    /// Read a manifest + weight blob from disk and validate them.
    pub fn load(manifest_path: &Path, weights_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest = ModelManifest::from_json(&text)?;
        let blob = fs::read(weights_path).map_err(|e| Error::io(weights_path, e))?;
        Self::from_manifest_and_blob(&manifest, &blob)
    }

    /// Build from a parsed manifest and the raw weight bytes.
    pub fn from_manifest_and_blob(manifest: &ModelManifest, blob: &[u8]) -> Result<Self> {
        let specs = manifest.parse_layers()?;
        let expected_params: usize = specs.iter().map(|s| s.kind.param_count()).sum();
        let expected_bytes = expected_params as u64 * 4;
        if blob.len() as u64 != expected_bytes {
            return Err(Error::WeightSize {
                expected: expected_bytes,
                actual: blob.len() as u64,
            });
        }
        let weights: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_parts(manifest, specs, weights)
    }

    /// Build from already-parsed specs and an f32 parameter vector.
    pub fn from_manifest_and_weights(manifest: &ModelManifest, weights: Vec<f32>) -> Result<Self> {
        let specs = manifest.parse_layers()?;
        let expected: usize = specs.iter().map(|s| s.kind.param_count()).sum();
        if weights.len() != expected {
            return Err(Error::WeightSize {
                expected: expected as u64 * 4,
                actual: weights.len() as u64 * 4,
            });
        }
        Self::from_parts(manifest, specs, weights)
    }

    fn from_parts(
        manifest: &ModelManifest,
        specs: Vec<LayerSpec>,
        weights: Vec<f32>,
    ) -> Result<Self> {
        let input_shape = (
            manifest.input.channels,
            manifest.input.height,
            manifest.input.width,
        );
        if input_shape.0 == 0 || input_shape.1 == 0 || input_shape.2 == 0 {
            return Err(Error::Manifest("input dimensions must be positive".into()));
        }

        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        let mut cursor = 0usize;
        let mut skip_sources = BTreeSet::new();

        for (i, spec) in specs.into_iter().enumerate() {
            let in_shape = shape;
            let out_shape = Self::infer_out_shape(i, &spec.kind, in_shape, &layers)?;
            if let LayerKind::ResidualAdd { source } = spec.kind {
                skip_sources.insert(source);
            }
            let flops = layer_flops(&spec.kind, in_shape, out_shape);
            let n = spec.kind.param_count();
            let slice = &weights[cursor..cursor + n];
            cursor += n;
            let params = match spec.kind {
                LayerKind::Conv2d { out_channels, .. } => LayerParams {
                    kernel: slice[..n - out_channels].to_vec(),
                    bias: slice[n - out_channels..].to_vec(),
                },
                LayerKind::Dense { out_features, .. } => LayerParams {
                    kernel: slice[..n - out_features].to_vec(),
                    bias: slice[n - out_features..].to_vec(),
                },
                _ => LayerParams::default(),
            };
            layers.push(Layer {
                spec,
                in_shape,
                out_shape,
                flops,
                params,
            });
            shape = out_shape;
        }

        let exit_layers: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.is_exit_point)
            .map(|(i, _)| i)
            .collect();
        if exit_layers.is_empty() {
            return Err(Error::NoExitPoint);
        }
        let last_exit = *exit_layers.last().unwrap();
        if !matches!(layers[last_exit].spec.kind, LayerKind::Gap) {
            return Err(Error::ManifestLayer {
                layer: last_exit,
                msg: "last exit point must be a gap layer".into(),
            });
        }
        if let Some(late_gap) = layers
            .iter()
            .rposition(|l| matches!(l.spec.kind, LayerKind::Gap))
        {
            if late_gap != last_exit {
                return Err(Error::ManifestLayer {
                    layer: late_gap,
                    msg: "final gap layer must be the last exit point".into(),
                });
            }
        }

        let exit_channels = exit_layers.iter().map(|&i| layers[i].out_shape.0).collect();
        let exit_shapes = exit_layers.iter().map(|&i| layers[i].out_shape).collect();
        let total_flops = layers.iter().map(|l| l.flops).sum();

        Ok(ModelGraph {
            name: manifest.name.clone(),
            input_shape,
            layers,
            exit_layers,
            exit_channels,
            exit_shapes,
            skip_sources,
            total_flops,
        })
    }

    fn infer_out_shape(
        index: usize,
        kind: &LayerKind,
        in_shape: (usize, usize, usize),
        previous: &[Layer],
    ) -> Result<(usize, usize, usize)> {
        let bad = |msg: String| Error::ManifestLayer { layer: index, msg };
        match *kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                groups,
            } => {
                if in_channels != in_shape.0 {
                    return Err(bad(format!(
                        "declared in_channels {in_channels} but incoming shape is {}",
                        shape_str(in_shape)
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(bad(
                        "kernel, stride and out_channels must be positive".into()
                    ));
                }
                if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                    return Err(bad(format!(
                        "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
                    )));
                }
                let h = pooled_dim(in_shape.1, kernel, stride, padding);
                let w = pooled_dim(in_shape.2, kernel, stride, padding);
                match (h, w) {
                    (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok((out_channels, h, w)),
                    _ => Err(bad(format!(
                        "conv output collapses below 1x1 for input {}",
                        shape_str(in_shape)
                    ))),
                }
            }
            LayerKind::Relu | LayerKind::Softmax => Ok(in_shape),
            LayerKind::Maxpool { kernel, stride } | LayerKind::Avgpool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err(bad("pool kernel and stride must be positive".into()));
                }
                let h = pooled_dim(in_shape.1, kernel, stride, 0);
                let w = pooled_dim(in_shape.2, kernel, stride, 0);
                match (h, w) {
                    (Some(h), Some(w)) => Ok((in_shape.0, h, w)),
                    _ => Err(bad(format!(
                        "pool window {kernel} does not fit input {}",
                        shape_str(in_shape)
                    ))),
                }
            }
            LayerKind::Gap => Ok((in_shape.0, 1, 1)),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let flat = in_shape.0 * in_shape.1 * in_shape.2;
                if in_features != flat {
                    return Err(bad(format!(
                        "dense in_features {in_features} does not match flattened input {flat}"
                    )));
                }
                if out_features == 0 {
                    return Err(bad("dense out_features must be positive".into()));
                }
                Ok((out_features, 1, 1))
            }
            LayerKind::ResidualAdd { source } => {
                if source >= index {
                    return Err(bad(format!(
                        "residual source {source} must reference an earlier layer"
                    )));
                }
                let src_shape = previous[source].out_shape;
                if src_shape != in_shape {
                    return Err(bad(format!(
                        "residual source shape {} does not match input {}",
                        shape_str(src_shape),
                        shape_str(in_shape)
                    )));
                }
                Ok(in_shape)
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// 0-based layer indices of the exit points.
    pub fn exit_layers(&self) -> &[usize] {
        &self.exit_layers
    }

    /// Number of exit points L; exit indices run 1..=L.
    pub fn num_exit_points(&self) -> usize {
        self.exit_layers.len()
    }

    /// Channel count at each exit point, in exit order.
    pub fn exit_channels(&self) -> &[usize] {
        &self.exit_channels
    }

    /// Full activation shape at each exit point, in exit order.
    pub fn exit_shapes(&self) -> &[(usize, usize, usize)] {
        &self.exit_shapes
    }

    pub(crate) fn skip_sources(&self) -> &BTreeSet<usize> {
        &self.skip_sources
    }

    pub fn total_flops(&self) -> u64 {
        self.total_flops
    }

    /// True when layers follow the final exit point (a trained head); the
    /// final output is then the head's output rather than the gap vector.
    pub fn has_head(&self) -> bool {
        *self.exit_layers.last().unwrap() + 1 < self.layers.len()
    }

    /// Output length of the final layer (head classes, or gap channels).
    pub fn final_output_len(&self) -> usize {
        let s = self.layers.last().unwrap().out_shape;
        s.0 * s.1 * s.2
    }

    /// Total parameter count across all layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.kind.param_count()).sum()
    }
}
