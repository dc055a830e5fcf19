//! Gradient-orientation clustering.
//!
//! A chequerboard produces gradients along two roughly orthogonal
//! orientations, each with both polarities, so the raw gradient
//! distribution is cruciform and awkward to split. The double-angle map
//! folds opposite polarities together, turning the cross into a single
//! elongated cluster whose two ends are the two edge families. Pixels are
//! then labelled by projecting onto the dominant axis (principal-component
//! method) or by sampling two origin lines directly in gradient space
//! (RANSAC method).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::MaskedImage;
use crate::math::{self, SeededRng};
use crate::preprocess::{GradientField, MIN_GRADIENT};

/// Which labelling method the detector runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Double-angle principal-component projection; parameter-free and
    /// exactly repeatable.
    Pca,
    /// Sampled origin-line pairs with slab classification; more robust to
    /// extreme perspective, repeatable only through the seed.
    Ransac,
}

/// The two edge-orientation families.
///
/// `X` collects gradients aligned with the local x-axis (near-vertical
/// edges), `Y` the rest. Which family corresponds to which pencil of the
/// grid is not decided here; the sweep stage resolves that from peak
/// counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    X,
    Y,
}

impl Family {
    pub fn other(self) -> Family {
        match self {
            Family::X => Family::Y,
            Family::Y => Family::X,
        }
    }
}

/// A gradient vector mapped to the double-angle plane: direction doubled,
/// magnitude preserved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleAngle {
    pub x: f64,
    pub y: f64,
}

/// Double-angle map `(gx, gy) -> ((gx^2 - gy^2)/m, 2 gx gy / m)` with
/// `m = |(gx, gy)|`.
///
/// The magnitude of the result equals `m` exactly, and opposite gradient
/// polarities map to the same point. The caller must pre-filter zero
/// gradients; magnitudes at machine precision are a contract violation.
pub fn double_angle(gx: f64, gy: f64) -> DoubleAngle {
    let m = math::hypot(gx, gy);
    debug_assert!(m > MIN_GRADIENT, "double_angle requires a nonzero gradient");
    DoubleAngle {
        x: (gx * gx - gy * gy) / m,
        y: 2.0 * gx * gy / m,
    }
}

/// Minimum dominant/minor eigenvalue ratio below which the double-angle
/// distribution is considered isotropic and no axis is defined.
pub const MIN_EIGENVALUE_RATIO: f64 = 1.05;

/// Direction of the dominant axis of a double-angle point set, as the angle
/// of the unit eigenvector of the uncentred second-moment matrix.
///
/// The moment matrix is taken about the origin, not the centroid, because
/// the later projection test is also uncentred. The eigenvector sign is
/// fixed so its first component is non-negative (ties: second component
/// non-negative).
pub fn principal_axis(points: &[DoubleAngle]) -> Result<f64, ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints(points.len()));
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
    }
    // Closed-form eigen-decomposition of the symmetric 2x2 moment matrix.
    let half_trace = (sxx + syy) / 2.0;
    let half_gap = math::hypot((sxx - syy) / 2.0, sxy);
    let dominant = half_trace + half_gap;
    let minor = half_trace - half_gap;
    if !(dominant.is_finite() && minor.is_finite()) || dominant <= 0.0 {
        return Err(ClusterError::Isotropic { ratio: f64::NAN });
    }
    let ratio = dominant / minor.max(0.0);
    if ratio < MIN_EIGENVALUE_RATIO {
        return Err(ClusterError::Isotropic { ratio });
    }
    // Eigenvector of the dominant eigenvalue.
    let (mut ex, mut ey) = if sxy.abs() > 1e-300 {
        (sxy, dominant - sxx)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    if ex < 0.0 || (ex == 0.0 && ey < 0.0) {
        ex = -ex;
        ey = -ey;
    }
    Ok(math::atan2(ey, ex))
}

/// Classifier state, carried into the local-frame stage and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClusterModel {
    Pca {
        /// Angle of the dominant double-angle axis (twice the image-space
        /// board angle).
        axis_angle: f64,
        threshold: f64,
    },
    Ransac {
        /// Unit normals of the two sampled origin lines in gradient space.
        normal_x: (f64, f64),
        normal_y: (f64, f64),
        threshold: f64,
    },
}

impl ClusterModel {
    pub fn threshold(&self) -> f64 {
        match self {
            ClusterModel::Pca { threshold, .. } => *threshold,
            ClusterModel::Ransac { threshold, .. } => *threshold,
        }
    }
}

/// Per-pixel family labels; `None` marks pixels that belong to neither
/// family, including every pixel with a vanishing gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<Option<Family>>,
}

impl LabelMap {
    pub fn new_empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![None; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Family> {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: Option<Family>) {
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, family: Family) -> usize {
        self.labels.iter().filter(|l| **l == Some(family)).count()
    }

    pub fn count_labelled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn iter_labelled(&self) -> impl Iterator<Item = (usize, usize, Family)> + '_ {
        let width = self.width;
        self.labels
            .iter()
            .enumerate()
            .filter_map(move |(k, l)| l.map(|fam| (k % width, k / width, fam)))
    }
}

/// Principal-component labelling: each nonzero gradient is projected onto
/// the double-angle axis and labelled `X` when the projection is at least
/// `threshold`, `Y` when at most `-threshold`, and discarded otherwise.
pub fn classify_pca(grads: &GradientField, axis_angle: f64, threshold: f64) -> LabelMap {
    let axis = (math::cos(axis_angle), math::sin(axis_angle));
    let mut labels = LabelMap::new_empty(grads.width(), grads.height());
    for (x, y, gx, gy) in grads.iter_nonzero() {
        let p = double_angle(gx, gy);
        let proj = p.x * axis.0 + p.y * axis.1;
        let label = if proj >= threshold {
            Some(Family::X)
        } else if proj <= -threshold {
            Some(Family::Y)
        } else {
            None
        };
        labels.set(x, y, label);
    }
    labels
}

/// Slab labelling used by the RANSAC method: a gradient belongs to a family
/// when it lies within the slab of half-thickness `threshold` around that
/// family's origin line, and outside the other family's slab. Points inside
/// both slabs (near the lines' intersection) stay unlabelled, so weaker
/// gradients are excluded automatically as the two lines close up.
pub fn classify_slabs(
    grads: &GradientField,
    normal_x: (f64, f64),
    normal_y: (f64, f64),
    threshold: f64,
) -> LabelMap {
    let mut labels = LabelMap::new_empty(grads.width(), grads.height());
    for (x, y, gx, gy) in grads.iter_nonzero() {
        let px = normal_x.0 * gx + normal_x.1 * gy;
        let py = normal_y.0 * gx + normal_y.1 * gy;
        let in_x = px.abs() <= threshold;
        let in_y = py.abs() <= threshold;
        let label = match (in_x, in_y) {
            (true, false) => Some(Family::X),
            (false, true) => Some(Family::Y),
            _ => None,
        };
        labels.set(x, y, label);
    }
    labels
}

/// Pairs of sampled directions closer than this (mod pi) are degenerate.
const MIN_PAIR_ANGLE: f64 = 1.0 * math::PI / 180.0;
/// Resampling budget per candidate before it counts as degenerate.
const RESAMPLE_LIMIT: usize = 100;

/// RANSAC labelling: draws `iterations` pairs of gradient samples, each
/// defining two candidate origin lines, and keeps the slab labelling with
/// the most labelled pixels. Deterministic for a given seed.
pub fn classify_ransac(
    grads: &GradientField,
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<(LabelMap, ClusterModel), ClusterError> {
    assert!(iterations >= 1, "ransac needs at least one iteration");
    let pixels: Vec<(f64, f64)> = grads
        .iter_nonzero()
        .map(|(_, _, gx, gy)| (gx, gy))
        .collect();
    if pixels.len() < 2 {
        return Err(ClusterError::TooFewPoints(pixels.len()));
    }

    let mut rng = SeededRng::new(seed);
    let mut best: Option<(usize, LabelMap, ClusterModel)> = None;
    for _ in 0..iterations {
        let mut pair = None;
        for _ in 0..RESAMPLE_LIMIT {
            let a = pixels[rng.index(pixels.len())];
            let b = pixels[rng.index(pixels.len())];
            let (ma, mb) = (math::hypot(a.0, a.1), math::hypot(b.0, b.1));
            let cross = (a.0 * b.1 - a.1 * b.0) / (ma * mb);
            if cross.abs() >= math::sin(MIN_PAIR_ANGLE) {
                pair = Some((
                    (-a.1 / ma, a.0 / ma),
                    (-b.1 / mb, b.0 / mb),
                ));
                break;
            }
        }
        let Some((normal_x, normal_y)) = pair else {
            continue;
        };
        let labels = classify_slabs(grads, normal_x, normal_y, threshold);
        let quality = labels.count_labelled();
        if best.as_ref().is_none_or(|(q, _, _)| quality > *q) {
            let model = ClusterModel::Ransac { normal_x, normal_y, threshold };
            best = Some((quality, labels, model));
        }
    }
    match best {
        Some((_, labels, model)) => Ok((labels, model)),
        None => Err(ClusterError::NoCluster),
    }
}

/// Default projection-threshold policy: a fraction of a high percentile of
/// the gradient magnitudes over the non-null mask pixels.
///
/// The threshold has intensity units, so it must scale with image contrast;
/// the percentile makes it robust to hot pixels. Returns `None` when the
/// mask is empty.
pub fn projection_threshold(
    grads: &GradientField,
    mask: &MaskedImage,
    fraction: f64,
    percentile: f64,
) -> Option<f64> {
    let mut magnitudes: Vec<f64> = mask
        .iter_valid()
        .map(|(x, y, _)| grads.magnitude(x, y))
        .collect();
    if magnitudes.is_empty() {
        return None;
    }
    Some(fraction * math::percentile(&mut magnitudes, percentile))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClusterError {
    TooFewPoints(usize),
    Isotropic { ratio: f64 },
    NoCluster,
}

impl fmt::Display for ClusterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterError::TooFewPoints(n) => {
                write!(f, "need at least 2 nonzero gradients, got {n}")
            }
            ClusterError::Isotropic { ratio } => write!(
                f,
                "double-angle distribution is isotropic (eigenvalue ratio {ratio:.3}); \
                 no dominant axis"
            ),
            ClusterError::NoCluster => write!(f, "every sampled candidate pair was degenerate"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ClusterError {}
