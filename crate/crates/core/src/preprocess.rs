//! Depth-based segmentation, perimeter erosion, and gradient computation.
//!
//! The background is discarded with a coarse depth band, the mask perimeter
//! is eroded so the physical board edge cannot contribute gradients, and the
//! gradient is taken with the plain central-difference kernel
//! `(-1/2, 0, 1/2)`. No pre-smoothing is applied: at these resolutions a
//! blur costs more edge localization than it buys in noise suppression.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::{AmplitudeImage, DepthImage, MaskedImage};
use crate::math;

/// Per-pixel gradient components `(gx, gy)`, in intensity units per pixel.
///
/// Both components are zero wherever the source pixel or any neighbour
/// touched by the kernel was null, so a zero magnitude doubles as the
/// "no gradient" marker.
#[derive(Clone, Debug)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn from_components(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Self {
        assert_eq!(gx.len(), width * height);
        assert_eq!(gy.len(), width * height);
        Self { width, height, gx, gy }
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gx: vec![0.0; width * height],
            gy: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let k = y * self.width + x;
        (self.gx[k], self.gy[k])
    }

    pub fn set(&mut self, x: usize, y: usize, g: (f64, f64)) {
        let k = y * self.width + x;
        self.gx[k] = g.0;
        self.gy[k] = g.1;
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = self.get(x, y);
        math::hypot(gx, gy)
    }

    /// Orientation of the gradient at a pixel, in radians.
    pub fn angle(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = self.get(x, y);
        math::atan2(gy, gx)
    }

    /// Bilinear sample of both components at a fractional position.
    /// Positions outside the pixel-centre lattice clamp to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (math::floor(xc) as usize).min(self.width - 1);
        let y0 = (math::floor(yc) as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let blend = |q00: f64, q10: f64, q01: f64, q11: f64| {
            q00 * (1.0 - fx) * (1.0 - fy)
                + q10 * fx * (1.0 - fy)
                + q01 * (1.0 - fx) * fy
                + q11 * fx * fy
        };
        let at = |x: usize, y: usize| y * self.width + x;
        (
            blend(self.gx[at(x0, y0)], self.gx[at(x1, y0)], self.gx[at(x0, y1)], self.gx[at(x1, y1)]),
            blend(self.gy[at(x0, y0)], self.gy[at(x1, y0)], self.gy[at(x0, y1)], self.gy[at(x1, y1)]),
        )
    }

    /// Nearest-pixel sample, for exact-reproduction experiments.
    pub fn sample_nearest(&self, x: f64, y: f64) -> (f64, f64) {
        let xi = (math::round(x) as isize).clamp(0, self.width as isize - 1) as usize;
        let yi = (math::round(y) as isize).clamp(0, self.height as isize - 1) as usize;
        self.get(xi, yi)
    }

    /// Pixels with magnitude above the dead-band used throughout the crate.
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let width = self.width;
        self.gx
            .iter()
            .zip(self.gy.iter())
            .enumerate()
            .filter(|(_, (gx, gy))| math::hypot(**gx, **gy) > MIN_GRADIENT)
            .map(move |(k, (&gx, &gy))| (k % width, k / width, gx, gy))
    }
}

/// Magnitudes at or below this are treated as "no gradient".
pub const MIN_GRADIENT: f64 = 1e-12;

/// Keeps amplitude only where the paired range reading falls strictly
/// inside `(near, far)`; pixels with invalid depth become null. Without a
/// depth image the whole amplitude is kept.
pub fn segment_depth(
    amplitude: &AmplitudeImage,
    depth: Option<&DepthImage>,
    near: f64,
    far: f64,
) -> Result<MaskedImage, PreprocessError> {
    if !(near < far) {
        return Err(PreprocessError::BadDepthBand { near, far });
    }
    let (w, h) = (amplitude.width(), amplitude.height());
    if let Some(d) = depth {
        crate::image::check_pair(amplitude, d).map_err(PreprocessError::Pair)?;
    }
    Ok(MaskedImage::from_fn(w, h, |x, y| match depth {
        None => Some(amplitude.get(x, y)),
        Some(d) => match d.get(x, y) {
            Some(range) if near < range && range < far => Some(amplitude.get(x, y)),
            _ => None,
        },
    }))
}

/// Morphological erosion with a square (Chebyshev) structuring element of
/// the given radius: a pixel survives iff every pixel within Chebyshev
/// distance `radius` was non-null. Positions outside the image count as
/// null, so the image border is eroded too.
pub fn erode_mask(mask: &MaskedImage, radius: usize) -> MaskedImage {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let r = radius as isize;

    // Separable: horizontal nullity window, then vertical.
    let mut row_ok = vec![false; w * h];
    for y in 0..h {
        for x in 0..w as isize {
            let mut ok = x - r >= 0 && x + r < w as isize;
            if ok {
                for dx in -r..=r {
                    if !mask.is_valid((x + dx) as usize, y) {
                        ok = false;
                        break;
                    }
                }
            }
            row_ok[y * w + x as usize] = ok;
        }
    }
    MaskedImage::from_fn(w, h, |x, y| {
        let y = y as isize;
        if y - r < 0 || y + r >= h as isize {
            return None;
        }
        for dy in -r..=r {
            if !row_ok[(y + dy) as usize * w + x] {
                return None;
            }
        }
        mask.get(x, y as usize)
    })
}

/// Central-difference gradient of a masked image.
///
/// `gx(x, y) = (B(x+1, y) - B(x-1, y)) / 2`, positive where intensity
/// increases with x, and likewise for `gy` in y. If the pixel itself or any
/// kernel-touched neighbour is null or out of bounds, both components are
/// zero; the eroded perimeter therefore produces no spurious gradients.
pub fn gradient(mask: &MaskedImage) -> GradientField {
    let (w, h) = (mask.width(), mask.height());
    let mut field = GradientField::zero(w, h);
    if w < 3 || h < 3 {
        return field;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !mask.is_valid(x, y) {
                continue;
            }
            let operands = (
                mask.get(x + 1, y),
                mask.get(x - 1, y),
                mask.get(x, y + 1),
                mask.get(x, y - 1),
            );
            if let (Some(xp), Some(xm), Some(yp), Some(ym)) = operands {
                field.set(x, y, ((xp - xm) / 2.0, (yp - ym) / 2.0));
            }
        }
    }
    field
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PreprocessError {
    BadDepthBand { near: f64, far: f64 },
    Pair(crate::image::ImageError),
}

impl fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessError::BadDepthBand { near, far } => {
                write!(f, "depth band requires near < far, got [{near}, {far}]")
            }
            PreprocessError::Pair(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PreprocessError {}
