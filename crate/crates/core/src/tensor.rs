//! Image and trajectory data model.
//!
//! Pixel data is stored channel-major then row-major in a flat `Vec<f64>`.
//! Arithmetic never clips; values may leave the nominal `[0, 1]` range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corruption::HoldoutMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Pixels per channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!(
                "all dimensions must be positive, got {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A C×H×W block of real intensities with a nominal peak value.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
    peak: f64,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match {} ({} values)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Self { shape, data, peak: 1.0 })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.len()])
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    /// Builds a tensor from `f(channel, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for col in 0..shape.width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(shape, data)
    }

    /// Stacks single-channel planes of equal size.
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let shape = Shape::new(planes.len(), height, width);
        let data: Vec<f64> = planes.into_iter().flatten().collect();
        Self::new(shape, data)
    }

    pub fn with_peak(mut self, peak: f64) -> Result<Self> {
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Domain(format!("peak must be positive and finite, got {peak}")));
        }
        self.peak = peak;
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.shape.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.shape.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.shape.plane_len())
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.shape.height + row) * self.shape.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let idx = (channel * self.shape.height + row) * self.shape.width + col;
        self.data[idx] = value;
    }

    /// Copies a contiguous channel range into a new tensor.
    pub fn select_channels(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.channels() {
            return Err(Error::Shape(format!(
                "channel range {:?} out of bounds for {} channels",
                range,
                self.channels()
            )));
        }
        let n = self.shape.plane_len();
        let data = self.data[range.start * n..range.end * n].to_vec();
        let shape = Shape::new(range.len(), self.height(), self.width());
        Ok(Self { shape, data, peak: self.peak })
    }

    pub fn channel(&self, channel: usize) -> Result<Self> {
        self.select_channels(channel..channel + 1)
    }

    /// Channel-wise concatenation `[self; other]`.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::Shape(format!(
                "cannot concatenate {} with {}",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        let shape = Shape::new(self.channels() + other.channels(), self.height(), self.width());
        Ok(Self { shape, data, peak: self.peak })
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape, data, peak: self.peak })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            peak: self.peak,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Rounds every value through `f32`, the bundle storage precision.
    pub fn quantize_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }
}

/// How a trajectory was produced. Criteria that depend on the training
/// protocol (the held-out mask criterion, the augmented-channel criteria)
/// check this before evaluating.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Plain,
    Masked(HoldoutMask),
    /// 2C-channel outputs: channels `0..C` fit `y`, `C..2C` fit the
    /// auxiliary copy.
    Augmented,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Plain => "plain",
            Provenance::Masked(_) => "masked",
            Provenance::Augmented => "augmented",
        }
    }
}

/// Checkpointed reconstructions along one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<ImageTensor>,
    iterations: Vec<u64>,
    divergence: Option<Vec<f64>>,
    provenance: Provenance,
}

impl Trajectory {
    pub fn new(
        frames: Vec<ImageTensor>,
        iterations: Vec<u64>,
        divergence: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("trajectory needs at least one frame".into()))?;
        let shape = first.shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
            return Err(Error::Shape(format!(
                "frames must share a shape: {} vs {}",
                shape,
                bad.shape()
            )));
        }
        if iterations.len() != frames.len() {
            return Err(Error::Shape(format!(
                "{} iterations for {} frames",
                iterations.len(),
                frames.len()
            )));
        }
        if iterations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("iterations must be strictly increasing".into()));
        }
        if let Some(div) = &divergence {
            if div.len() != frames.len() {
                return Err(Error::Shape(format!(
                    "{} divergence values for {} frames",
                    div.len(),
                    frames.len()
                )));
            }
        }
        match &provenance {
            Provenance::Augmented if shape.channels % 2 != 0 => {
                return Err(Error::Channel(format!(
                    "augmented trajectory needs an even channel count, got {}",
                    shape.channels
                )));
            }
            Provenance::Masked(mask) if (mask.height(), mask.width()) != (shape.height, shape.width) => {
                return Err(Error::Shape(format!(
                    "mask is {}x{}, frames are {}",
                    mask.height(),
                    mask.width(),
                    shape
                )));
            }
            _ => {}
        }
        Ok(Self { frames, iterations, divergence, provenance })
    }

    pub fn frames(&self) -> &[ImageTensor] {
        &self.frames
    }

    pub fn iterations(&self) -> &[u64] {
        &self.iterations
    }

    pub fn divergence(&self) -> Option<&[f64]> {
        self.divergence.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.frames[0].shape()
    }

    /// Number of channels of the primary reconstruction (half the frame
    /// channels for augmented runs).
    pub fn primary_channels(&self) -> usize {
        match self.provenance {
            Provenance::Augmented => self.shape().channels / 2,
            _ => self.shape().channels,
        }
    }

    /// The primary reconstruction at frame `index`.
    pub fn primary(&self, index: usize) -> ImageTensor {
        let frame = &self.frames[index];
        match self.provenance {
            Provenance::Augmented => frame
                .select_channels(0..self.primary_channels())
                .expect("augmented frames have an even channel count"),
            _ => frame.clone(),
        }
    }

    /// Frame index holding `iteration`.
    pub fn index_of(&self, iteration: u64) -> Option<usize> {
        self.iterations.binary_search(&iteration).ok()
    }

    pub fn quantize_f32(&self) -> Self {
        Self {
            frames: self.frames.iter().map(ImageTensor::quantize_f32).collect(),
            iterations: self.iterations.clone(),
            divergence: self.divergence.clone(),
            provenance: self.provenance.clone(),
        }
    }
}
