//! In-memory image types shared by the whole pipeline.
//!
//! Samples are stored row-major as `f64`. Pixel `(x, y)` has its centre at
//! image coordinates `(x, y)`: origin at the centre of the top-left pixel,
//! x rightward, y downward.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// A luminance-like intensity map of returned signal strength.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl AmplitudeImage {
    /// All samples must be finite and non-negative.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SampleCount {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ImageError::BadAmplitude { index: pos });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("generator produced invalid samples")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel range in metres along the line of sight. Invalid readings are
/// carried as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    /// Valid samples must be positive; non-finite input samples are stored
    /// as the invalid marker.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SampleCount {
                expected: width * height,
                got: data.len(),
            });
        }
        let data = data
            .into_iter()
            .map(|v| if v.is_finite() && v > 0.0 { v } else { f64::NAN })
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `None` where the reading is invalid.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.data[y * self.width + x];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Amplitude image with a null marker on discarded pixels (carried as NaN).
#[derive(Clone, Debug)]
pub struct MaskedImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PartialEq for MaskedImage {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a.is_nan() && b.is_nan()) || a == b)
    }
}

impl MaskedImage {
    pub fn new_null(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f64::NAN; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let mut img = Self::new_null(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some(v) = f(x, y) {
                    img.set(x, y, Some(v));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.data[y * self.width + x];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        !self.data[y * self.width + x].is_nan()
    }

    pub fn set(&mut self, x: usize, y: usize, v: Option<f64>) {
        self.data[y * self.width + x] = v.unwrap_or(f64::NAN);
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let width = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .map(move |(k, &v)| (k % width, k / width, v))
    }
}

/// Checks that a paired amplitude/depth input is dimensionally consistent,
/// before any pipeline stage runs.
pub fn check_pair(a: &AmplitudeImage, d: &DepthImage) -> Result<(), ImageError> {
    if a.width() != d.width() || a.height() != d.height() {
        return Err(ImageError::PairMismatch {
            amplitude: (a.width(), a.height()),
            depth: (d.width(), d.height()),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageError {
    SampleCount { expected: usize, got: usize },
    BadAmplitude { index: usize },
    PairMismatch { amplitude: (usize, usize), depth: (usize, usize) },
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::SampleCount { expected, got } => {
                write!(f, "expected {expected} samples, got {got}")
            }
            ImageError::BadAmplitude { index } => {
                write!(f, "amplitude sample {index} is negative or not finite")
            }
            ImageError::PairMismatch { amplitude, depth } => write!(
                f,
                "amplitude is {}x{} but depth is {}x{}",
                amplitude.0, amplitude.1, depth.0, depth.1
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ImageError {}
