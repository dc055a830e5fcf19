//! Board-centred, board-aligned local coordinates.
//!
//! The Hough parameterization needs every line slope bounded below 45
//! degrees, which holds once the image is expressed in a frame centred on
//! the board and rotated so one edge family is axis-aligned. The black
//! squares are the most reliable signature of the board inside the masked
//! image, so the centre is a darkness-weighted centroid.

use core::fmt;

use crate::cluster::{double_angle, ClusterModel, Family, LabelMap};
use crate::geometry::HomLine;
use crate::image::MaskedImage;
use crate::linalg::Mat3;
use crate::math;
use crate::preprocess::GradientField;

/// Euclidean transform into local coordinates: rotation by `-angle` about
/// `center`, so `to_local(center) = (0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub center: (f64, f64),
    /// Board angle in radians, taken mod pi.
    pub angle: f64,
}

impl LocalFrame {
    pub fn new(center: (f64, f64), angle: f64) -> Self {
        assert!(angle.is_finite(), "frame angle must be finite");
        Self { center, angle }
    }

    pub fn identity() -> Self {
        Self { center: (0.0, 0.0), angle: 0.0 }
    }

    pub fn to_local(&self, p: (f64, f64)) -> (f64, f64) {
        let (c, s) = (math::cos(self.angle), math::sin(self.angle));
        let dx = p.0 - self.center.0;
        let dy = p.1 - self.center.1;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_image(&self, p: (f64, f64)) -> (f64, f64) {
        let (c, s) = (math::cos(self.angle), math::sin(self.angle));
        (
            c * p.0 - s * p.1 + self.center.0,
            s * p.0 + c * p.1 + self.center.1,
        )
    }

    /// The 3x3 matrix mapping homogeneous image points to local points.
    pub fn matrix(&self) -> Mat3 {
        let (c, s) = (math::cos(self.angle), math::sin(self.angle));
        let tx = -(c * self.center.0 + s * self.center.1);
        let ty = s * self.center.0 - c * self.center.1;
        Mat3([[c, s, tx], [-s, c, ty], [0.0, 0.0, 1.0]])
    }

    /// Transports a line given in local coordinates back to image
    /// coordinates (lines compose with the forward point transform).
    pub fn line_to_image(&self, line: &HomLine) -> HomLine {
        let v = self.matrix().apply_left([line.a, line.b, line.c]);
        HomLine::new(v[0], v[1], v[2])
    }
}

/// Darkness-weighted centroid of the masked image.
///
/// Valid samples are normalized to [0, 1] by their min/max, and each pixel
/// votes with weight `1 - normalized`, so the black squares dominate.
pub fn board_centroid(mask: &MaskedImage) -> Result<(f64, f64), FrameError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for (_, _, v) in mask.iter_valid() {
        lo = lo.min(v);
        hi = hi.max(v);
        any = true;
    }
    if !any {
        return Err(FrameError::EmptyMask);
    }
    let span = hi - lo;
    let (mut wx, mut wy, mut total) = (0.0, 0.0, 0.0);
    for (x, y, v) in mask.iter_valid() {
        let normalized = if span > 0.0 { (v - lo) / span } else { 1.0 };
        let w = 1.0 - normalized;
        wx += w * x as f64;
        wy += w * y as f64;
        total += w;
    }
    if total < 1e-9 {
        return Err(FrameError::NoDarkPixels);
    }
    Ok((wx / total, wy / total))
}

/// Board angle implied by a cluster model.
///
/// The principal-component axis is twice the board angle, so it is halved.
/// The RANSAC model carries no angle, so one is recovered as half the angle
/// of the magnitude-weighted mean double-angle vector over the `X`-labelled
/// pixels, which is polarity-safe and reuses quantities already computed.
pub fn frame_angle(
    model: &ClusterModel,
    grads: &GradientField,
    labels: &LabelMap,
) -> Result<f64, FrameError> {
    match model {
        ClusterModel::Pca { axis_angle, .. } => Ok(axis_angle / 2.0),
        ClusterModel::Ransac { .. } => {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (x, y, family) in labels.iter_labelled() {
                if family != Family::X {
                    continue;
                }
                let (gx, gy) = grads.get(x, y);
                let p = double_angle(gx, gy);
                sx += p.x;
                sy += p.y;
            }
            if math::hypot(sx, sy) < 1e-12 {
                return Err(FrameError::NoAngle);
            }
            Ok(math::atan2(sy, sx) / 2.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameError {
    EmptyMask,
    NoDarkPixels,
    NoAngle,
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::EmptyMask => write!(f, "mask has no valid pixels; no board to centre on"),
            FrameError::NoDarkPixels => {
                write!(f, "total darkness weight below 1e-9; no board to centre on")
            }
            FrameError::NoAngle => {
                write!(f, "no X-labelled gradients to recover a frame angle from")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FrameError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SeededRng;
    use approx::assert_relative_eq;

    #[test]
    fn centroid_of_single_dark_pixel() {
        let mask = MaskedImage::from_fn(7, 7, |x, y| {
            Some(if (x, y) == (4, 2) { 0.0 } else { 1.0 })
        });
        let c = board_centroid(&mask).unwrap();
        assert_relative_eq!(c.0, 4.0);
        assert_relative_eq!(c.1, 2.0);
    }

    #[test]
    fn centroid_of_two_dark_pixels_is_midpoint() {
        let mask = MaskedImage::from_fn(11, 3, |x, y| {
            Some(if y == 0 && (x == 0 || x == 10) { 0.0 } else { 1.0 })
        });
        let c = board_centroid(&mask).unwrap();
        assert_relative_eq!(c.0, 5.0);
        assert_relative_eq!(c.1, 0.0);
    }

    #[test]
    fn centroid_errors_on_empty_or_flat_mask() {
        let empty = MaskedImage::new_null(4, 4);
        assert_eq!(board_centroid(&empty), Err(FrameError::EmptyMask));
        // A perfectly flat mask has no dark pixels to weight.
        let flat = MaskedImage::from_fn(4, 4, |_, _| Some(2.0));
        assert_eq!(board_centroid(&flat), Err(FrameError::NoDarkPixels));
    }

    #[test]
    fn frame_maps_center_to_origin() {
        let f = LocalFrame::new((5.0, 5.0), 0.0);
        assert_eq!(f.to_local((5.0, 5.0)), (0.0, 0.0));
    }

    #[test]
    fn frame_pure_rotation() {
        let f = LocalFrame::new((0.0, 0.0), math::PI / 2.0);
        let p = f.to_local((1.0, 0.0));
        assert_relative_eq!(p.0, 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.1, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_roundtrip_identity() {
        let mut rng = SeededRng::new(17);
        for _ in 0..200 {
            let f = LocalFrame::new(
                (rng.uniform_in(-50.0, 50.0), rng.uniform_in(-50.0, 50.0)),
                rng.uniform_in(-math::PI, math::PI),
            );
            let p = (rng.uniform_in(-100.0, 100.0), rng.uniform_in(-100.0, 100.0));
            let q = f.to_image(f.to_local(p));
            assert_relative_eq!(q.0, p.0, epsilon = 1e-12);
            assert_relative_eq!(q.1, p.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn frame_matrix_agrees_with_to_local() {
        let f = LocalFrame::new((3.0, -2.0), 0.6);
        let p = (7.5, 4.25);
        let v = f.matrix().apply([p.0, p.1, 1.0]);
        let q = f.to_local(p);
        assert_relative_eq!(v[0] / v[2], q.0, epsilon = 1e-12);
        assert_relative_eq!(v[1] / v[2], q.1, epsilon = 1e-12);
    }

    #[test]
    fn frame_matrix_is_isometry() {
        let f = LocalFrame::new((3.0, -2.0), 0.6);
        let m = f.matrix();
        let lin_det = m.0[0][0] * m.0[1][1] - m.0[0][1] * m.0[1][0];
        assert_relative_eq!(lin_det, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn line_transport_preserves_incidence() {
        let f = LocalFrame::new((4.0, 1.0), -0.8);
        // The local line x = 3 (vertical), transported to the image, must
        // contain the image of every local point with x = 3.
        let local_line = HomLine::new(-1.0, 0.0, 3.0);
        let image_line = f.line_to_image(&local_line);
        for t in [-10.0, 0.0, 2.5, 8.0] {
            let img = f.to_image((3.0, t));
            assert!(image_line.pixel_residual(img.0, img.1).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_angle_is_half_axis() {
        let model = ClusterModel::Pca { axis_angle: 0.8, threshold: 0.1 };
        let grads = GradientField::zero(1, 1);
        let labels = LabelMap::new_empty(1, 1);
        assert_relative_eq!(frame_angle(&model, &grads, &labels).unwrap(), 0.4);
    }

    #[test]
    fn ransac_angle_from_labelled_gradients() {
        // X-labelled gradients at angle 0.3 (both polarities).
        let mut grads = GradientField::zero(4, 1);
        let mut labels = LabelMap::new_empty(4, 1);
        let a = 0.3f64;
        for (x, m) in [(0usize, 1.0), (1, -2.0), (2, 1.5), (3, -0.5)] {
            grads.set(x, 0, (m * math::cos(a), m * math::sin(a)));
            labels.set(x, 0, Some(Family::X));
        }
        let model = ClusterModel::Ransac {
            normal_x: (0.0, 1.0),
            normal_y: (1.0, 0.0),
            threshold: 0.1,
        };
        let phi = frame_angle(&model, &grads, &labels).unwrap();
        assert_relative_eq!(phi, a, epsilon = 1e-12);
    }
}
