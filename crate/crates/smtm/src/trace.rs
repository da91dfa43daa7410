//! Binary frame-trace format: a fixed header followed by optionally labeled
//! raw f32 tensors.
//!
//! Layout (little-endian): magic `SMTMTRC1`, u32 channels, u32 height,
//! u32 width, u32 frame count, u8 has_labels, then per frame an optional
//! u32 label followed by channels*height*width f32 values. The byte length
//! must match the header exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::ClassId;

pub const TRACE_MAGIC: &[u8; 8] = b"SMTMTRC1";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    channels: usize,
    height: usize,
    width: usize,
    labels: Option<Vec<ClassId>>,
    /// Frame-major flat tensor data.
    data: Vec<f32>,
}

impl TraceFile {
    pub fn new(channels: usize, height: usize, width: usize, labeled: bool) -> Self {
        TraceFile {
            channels,
            height,
            width,
            labels: if labeled { Some(Vec::new()) } else { None },
            data: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn num_frames(&self) -> usize {
        if self.frame_len() == 0 {
            0
        } else {
            self.data.len() / self.frame_len()
        }
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn label(&self, frame: usize) -> Option<ClassId> {
        self.labels.as_ref().map(|l| l[frame])
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn frame(&self, index: usize) -> Result<FeatureMap> {
        let n = self.frame_len();
        let slice = &self.data[index * n..(index + 1) * n];
        FeatureMap::new(self.channels, self.height, self.width, slice.to_vec())
    }

    pub fn push_frame(&mut self, label: Option<ClassId>, values: &[f32]) -> Result<()> {
        if values.len() != self.frame_len() {
            return Err(Error::Shape {
                expected: format!("{} values", self.frame_len()),
                actual: format!("{} values", values.len()),
            });
        }
        match (&mut self.labels, label) {
            (Some(labels), Some(l)) => labels.push(l),
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::TraceFormat(
                    "labeled trace requires a label for every frame".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::TraceFormat(
                    "unlabeled trace cannot carry labels".into(),
                ))
            }
        }
        self.data.extend_from_slice(values);
        Ok(())
    }

    /// Append all frames of `other`; dimensions and labeling must agree.
    pub fn append(&mut self, other: &TraceFile) -> Result<()> {
        if other.dims() != self.dims() || other.has_labels() != self.has_labels() {
            return Err(Error::TraceFormat(
                "appended trace must match dimensions and labeling".into(),
            ));
        }
        if let (Some(mine), Some(theirs)) = (&mut self.labels, &other.labels) {
            mine.extend_from_slice(theirs);
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_frames();
        let frame_len = self.frame_len();
        let mut out = Vec::with_capacity(29 + n * (frame_len * 4 + 4));
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.push(self.has_labels() as u8);
        for i in 0..n {
            if let Some(labels) = &self.labels {
                out.extend_from_slice(&labels[i].to_le_bytes());
            }
            for v in &self.data[i * frame_len..(i + 1) * frame_len] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::TraceFormat(msg.to_string());
        if bytes.len() < 25 || &bytes[..8] != TRACE_MAGIC {
            return Err(bad("missing SMTMTRC1 magic"));
        }
        let read_u32 = |off: usize| -> u32 {
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
        };
        let channels = read_u32(8) as usize;
        let height = read_u32(12) as usize;
        let width = read_u32(16) as usize;
        let frames = read_u32(20) as usize;
        let has_labels = match bytes[24] {
            0 => false,
            1 => true,
            other => return Err(bad(&format!("invalid has_labels byte {other}"))),
        };
        if channels == 0 || height == 0 || width == 0 {
            return Err(bad("frame dimensions must be positive"));
        }
        let frame_len = channels * height * width;
        let record = frame_len * 4 + if has_labels { 4 } else { 0 };
        let expected = 25 + frames * record;
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes for {frames} frames, got {}",
                bytes.len()
            )));
        }
        let mut labels = has_labels.then(|| Vec::with_capacity(frames));
        let mut data = Vec::with_capacity(frames * frame_len);
        let mut off = 25;
        for _ in 0..frames {
            if let Some(labels) = &mut labels {
                labels.push(read_u32(off));
                off += 4;
            }
            for _ in 0..frame_len {
                data.push(f32::from_le_bytes([
                    bytes[off],
                    bytes[off + 1],
                    bytes[off + 2],
                    bytes[off + 3],
                ]));
                off += 4;
            }
        }
        Ok(TraceFile {
            channels,
            height,
            width,
            labels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
