//! Dense rank-3 activation tensors.

use crate::error::{Error, Result};

pub(crate) fn shape_str(shape: (usize, usize, usize)) -> String {
    format!("{}x{}x{}", shape.0, shape.1, shape.2)
}

/// Activation tensor in channel-major row-major layout: index `(c, y, x)`
/// maps to `(c * height + y) * width + x`.
///
/// All stored values are finite; constructors reject NaN/Inf so a violation
/// is caught at the layer that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape {
                expected: "positive dimensions".into(),
                actual: shape_str((channels, height, width)),
            });
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape {
                expected: format!(
                    "{expected} values for {}",
                    shape_str((channels, height, width))
                ),
                actual: format!("{} values", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: usize::MAX });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
        .expect("zero tensor is always valid")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel as a contiguous `height * width` slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}
