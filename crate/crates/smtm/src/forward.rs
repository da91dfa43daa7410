//! Layer application and the stepwise forward session.
//!
//! All layer math is 32-bit with a fixed accumulation order (channel-major,
//! then kernel row, then kernel column), so identical model + input produce
//! bit-identical outputs across runs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Layer, LayerKind, ModelGraph};
use crate::tensor::{shape_str, FeatureMap};

/// Apply one layer to its input. `skip` must carry the source activation for
/// residual-add layers and is ignored otherwise.
pub fn apply_layer(
    layer: &Layer,
    input: &FeatureMap,
    skip: Option<&FeatureMap>,
) -> Result<FeatureMap> {
    if input.shape() != layer.in_shape {
        return Err(Error::Shape {
            expected: shape_str(layer.in_shape),
            actual: shape_str(input.shape()),
        });
    }
    let (oc, oh, ow) = layer.out_shape;
    let data = match layer.spec.kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        } => conv2d(
            input,
            &layer.params.kernel,
            &layer.params.bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            oh,
            ow,
        ),
        LayerKind::Relu => input.data().iter().map(|&v| v.max(0.0)).collect(),
        LayerKind::Maxpool { kernel, stride } => pool(input, kernel, stride, oh, ow, PoolOp::Max),
        LayerKind::Avgpool { kernel, stride } => pool(input, kernel, stride, oh, ow, PoolOp::Avg),
        LayerKind::Gap => gap(input),
        LayerKind::Dense {
            in_features,
            out_features,
        } => dense(
            input.data(),
            &layer.params.kernel,
            &layer.params.bias,
            in_features,
            out_features,
        ),
        LayerKind::ResidualAdd { source } => {
            let skip = skip.ok_or_else(|| {
                Error::State(format!("residual-add needs the output of layer {source}"))
            })?;
            if skip.shape() != input.shape() {
                return Err(Error::Shape {
                    expected: shape_str(input.shape()),
                    actual: shape_str(skip.shape()),
                });
            }
            input
                .data()
                .iter()
                .zip(skip.data())
                .map(|(&a, &b)| a + b)
                .collect()
        }
        LayerKind::Softmax => softmax(input.data()),
    };
    FeatureMap::new(oc, oh, ow, data)
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    input: &FeatureMap,
    kernel: &[f32],
    bias: &[f32],
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let group_in = in_c / groups;
    let group_out = out_c / groups;
    let (_, in_h, in_w) = input.shape();

    // Zero-padded copy of the input so the inner loops run branch-free.
    // Accumulation order is unchanged: in-channel, kernel row, kernel col.
    let ph = in_h + 2 * padding;
    let pw = in_w + 2 * padding;
    let mut padded = vec![0.0f32; in_c * ph * pw];
    for ic in 0..in_c {
        let src = input.channel(ic);
        for y in 0..in_h {
            let dst = (ic * ph + y + padding) * pw + padding;
            padded[dst..dst + in_w].copy_from_slice(&src[y * in_w..(y + 1) * in_w]);
        }
    }

    // Shift-and-accumulate over whole output rows. Every output element
    // still sums its terms in (in-channel, kernel-row, kernel-col) order,
    // so results are bit-identical to the scalar triple loop.
    let mut out = vec![0.0f32; out_c * out_h * out_w];
    let mut row_buf = vec![0.0f32; out_w];
    for oc in 0..out_c {
        let g = oc / group_out;
        let k_base = oc * group_in * k * k;
        for oy in 0..out_h {
            let y0 = oy * stride;
            row_buf.fill(bias[oc]);
            for ic_local in 0..group_in {
                let ic = g * group_in + ic_local;
                let plane = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                let k_ch = k_base + ic_local * k * k;
                for ky in 0..k {
                    let in_row = &plane[(y0 + ky) * pw..(y0 + ky) * pw + pw];
                    for kx in 0..k {
                        let w = kernel[k_ch + ky * k + kx];
                        if stride == 1 {
                            let src = &in_row[kx..kx + out_w];
                            for (acc, x) in row_buf.iter_mut().zip(src) {
                                *acc += w * x;
                            }
                        } else {
                            for (ox, acc) in row_buf.iter_mut().enumerate() {
                                *acc += w * in_row[ox * stride + kx];
                            }
                        }
                    }
                }
            }
            out[(oc * out_h + oy) * out_w..(oc * out_h + oy) * out_w + out_w]
                .copy_from_slice(&row_buf);
        }
    }
    out
}

enum PoolOp {
    Max,
    Avg,
}

fn pool(
    input: &FeatureMap,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    op: PoolOp,
) -> Vec<f32> {
    let (c, _, _) = input.shape();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let y0 = oy * stride;
                let x0 = ox * stride;
                match op {
                    PoolOp::Max => {
                        let mut best = f32::NEG_INFINITY;
                        for ky in 0..k {
                            for kx in 0..k {
                                best = best.max(input.at(ch, y0 + ky, x0 + kx));
                            }
                        }
                        out.push(best);
                    }
                    PoolOp::Avg => {
                        let mut sum = 0.0f32;
                        for ky in 0..k {
                            for kx in 0..k {
                                sum += input.at(ch, y0 + ky, x0 + kx);
                            }
                        }
                        out.push(sum / (k * k) as f32);
                    }
                }
            }
        }
    }
    out
}

fn gap(input: &FeatureMap) -> Vec<f32> {
    let plane = (input.height() * input.width()) as f32;
    (0..input.channels())
        .map(|c| input.channel(c).iter().sum::<f32>() / plane)
        .collect()
}

fn dense(input: &[f32], kernel: &[f32], bias: &[f32], in_n: usize, out_n: usize) -> Vec<f32> {
    (0..out_n)
        .map(|o| {
            let row = &kernel[o * in_n..(o + 1) * in_n];
            let mut acc = bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            acc
        })
        .collect()
}

fn softmax(input: &[f32]) -> Vec<f32> {
    let max = input.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = input.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Result of one [`ForwardSession::advance_to_next_exit`] step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    /// Reached an exit point with further computation after it. The exit
    /// index is 1-based (the paper-facing `l`).
    Exit {
        exit_index: u32,
        feature_map: FeatureMap,
    },
    /// Ran the network to completion; the session is finished. For models
    /// without a trained head this is the final gap output.
    Final(FeatureMap),
}

/// Stepwise execution of one frame through the model, stopping at each exit
/// point so the caller can decide whether to abandon the rest.
#[derive(Debug)]
pub struct ForwardSession<'m> {
    model: &'m ModelGraph,
    current: FeatureMap,
    cursor: usize,
    next_exit_pos: usize,
    executed_flops: u64,
    finished: bool,
    saved: HashMap<usize, FeatureMap>,
}

impl ModelGraph {
    /// Start a session. The input must match the declared input shape;
    /// all-zero inputs are legal activations.
    pub fn begin_forward(&self, input: FeatureMap) -> Result<ForwardSession<'_>> {
        if input.shape() != self.input_shape() {
            return Err(Error::Shape {
                expected: shape_str(self.input_shape()),
                actual: shape_str(input.shape()),
            });
        }
        Ok(ForwardSession {
            model: self,
            current: input,
            cursor: 0,
            next_exit_pos: 0,
            executed_flops: 0,
            finished: false,
            saved: HashMap::new(),
        })
    }
}

impl<'m> ForwardSession<'m> {
    /// Execute layers up to and including the next exit point and return its
    /// output; when the remaining layers contain no further decision point,
    /// run them all and return [`StepOutcome::Final`].
    pub fn advance_to_next_exit(&mut self) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::SessionFinished);
        }
        loop {
            let index = self.cursor;
            let layer = &self.model.layers()[index];
            let skip = match layer.spec.kind {
                LayerKind::ResidualAdd { source } => {
                    Some(self.saved.get(&source).ok_or_else(|| {
                        Error::State(format!("residual source {source} was not retained"))
                    })?)
                }
                _ => None,
            };
            let output = apply_layer(layer, &self.current, skip).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFinite { layer: index },
                other => other,
            })?;
            self.current = output;
            self.executed_flops += layer.flops;
            if self.model.skip_sources().contains(&index) {
                self.saved.insert(index, self.current.clone());
            }
            self.cursor += 1;
            if self.cursor == self.model.layers().len() {
                self.finished = true;
                return Ok(StepOutcome::Final(self.current.clone()));
            }
            if layer.spec.is_exit_point {
                self.next_exit_pos += 1;
                return Ok(StepOutcome::Exit {
                    exit_index: self.next_exit_pos as u32,
                    feature_map: self.current.clone(),
                });
            }
        }
    }

    /// FLOPs executed so far; equals the sum of `layer_flops` over the layers
    /// actually run, and the model total after a full traversal.
    pub fn executed_flops(&self) -> u64 {
        self.executed_flops
    }

    /// 1-based index of the next exit point this session will produce.
    pub fn next_exit_index(&self) -> u32 {
        self.next_exit_pos as u32 + 1
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Run a frame through the whole model, returning the output at every exit
/// point plus the final output.
pub fn full_forward(
    model: &ModelGraph,
    input: FeatureMap,
) -> Result<(Vec<FeatureMap>, FeatureMap)> {
    let mut session = model.begin_forward(input)?;
    let mut exits = Vec::with_capacity(model.num_exit_points());
    loop {
        match session.advance_to_next_exit()? {
            StepOutcome::Exit { feature_map, .. } => exits.push(feature_map),
            StepOutcome::Final(out) => return Ok((exits, out)),
        }
    }
}
