//! Ground-truthed synthetic scenes and the slant-robustness experiment.
//!
//! The renderer warps a supersampled chequer pattern through an arbitrary
//! homography, so the geometric effects of foreshortening are exact and
//! every internal vertex position is known in closed form. Slant poses are
//! produced from rotation homographies `K R K^-1`, and the labelling
//! robustness experiment transports base-image gradients through those
//! homographies and measures how many labels survive reclassification.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cluster::{
    classify_pca, classify_ransac, double_angle, principal_axis, projection_threshold, Family,
    LabelMap, Method,
};
use crate::geometry::{ideal_grid, GridSpec, VertexGrid};
use crate::image::{AmplitudeImage, DepthImage};
use crate::linalg::Mat3;
use crate::math::{self, SeededRng};
use crate::metrics::Homography;
use crate::preprocess::{erode_mask, gradient, segment_depth, GradientField};

/// Pinhole intrinsics used to build rotation homographies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Focal length equal to the image width, principal point at the image
    /// centre: moderate, realistic perspective for small sensors.
    pub fn for_image(width: usize, height: usize) -> Self {
        Self {
            focal: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    fn matrix(&self) -> Mat3 {
        Mat3([
            [self.focal, 0.0, self.cx],
            [0.0, self.focal, self.cy],
            [0.0, 0.0, 1.0],
        ])
    }

    fn inverse_matrix(&self) -> Mat3 {
        Mat3([
            [1.0 / self.focal, 0.0, -self.cx / self.focal],
            [0.0, 1.0 / self.focal, -self.cy / self.focal],
            [0.0, 0.0, 1.0],
        ])
    }
}

/// Rodrigues rotation about a unit axis.
fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let (c, s) = (math::cos(angle), math::sin(angle));
    let t = 1.0 - c;
    let [x, y, z] = axis;
    Mat3([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])
}

/// Homography of a pure camera-frame rotation: slant by `slant` about the
/// in-plane axis at direction `tilt`, composed with a cyclo-rotation by
/// `cyclo` about the optical axis, conjugated by the intrinsics.
///
/// Zero slant and zero cyclo-rotation return the exact identity.
pub fn rotation_homography(slant: f64, tilt: f64, cyclo: f64, k: &Intrinsics) -> Homography {
    let axis = [math::cos(tilt), math::sin(tilt), 0.0];
    let r = axis_angle(axis, slant).mul(&axis_angle([0.0, 0.0, 1.0], cyclo));
    if r == Mat3::IDENTITY {
        return Homography::identity();
    }
    Homography::from_mat3(k.matrix().mul(&r).mul(&k.inverse_matrix()))
        .expect("rotation homography is always invertible")
}

/// Covariant transport of a gradient row-vector through a homography:
/// `(gx', gy', 1) = (gx, gy, 1) H^-1`, renormalized to third component one.
/// A vanishing third component marks the gradient null.
pub fn transport_gradient(g: (f64, f64), h_inverse: &Mat3) -> Option<(f64, f64)> {
    let v = h_inverse.apply_left([g.0, g.1, 1.0]);
    let scale = math::hypot(v[0], v[1]);
    if v[2].abs() <= 1e-12 * scale.max(1.0) {
        return None;
    }
    Some((v[0] / v[2], v[1] / v[2]))
}

/// Transports every gradient of a field; pixel positions are unchanged, so
/// transported pixels stay in correspondence with the source pixels.
pub fn transport_gradients(grads: &GradientField, h: &Homography) -> GradientField {
    let h_inverse = *h.inverse().expect("homography is invertible").mat3();
    let mut out = GradientField::zero(grads.width(), grads.height());
    for (x, y, gx, gy) in grads.iter_nonzero() {
        if let Some(g) = transport_gradient((gx, gy), &h_inverse) {
            out.set(x, y, g);
        }
    }
    out
}

/// Fraction of base edge pixels whose label survived, comparing a
/// transported labelling against the base labelling. `None` when the base
/// has no labelled pixels at all (the 90-degree slant case).
pub fn consistency(transported: &LabelMap, base: &LabelMap) -> Option<f64> {
    assert_eq!(
        (transported.width(), transported.height()),
        (base.width(), base.height()),
        "label maps must share dimensions"
    );
    let mut edges = 0usize;
    let mut kept = 0usize;
    for (x, y, label) in base.iter_labelled() {
        edges += 1;
        if transported.get(x, y) == Some(label) {
            kept += 1;
        }
    }
    if edges == 0 {
        return None;
    }
    Some(kept as f64 / edges as f64)
}

/// Reflectance levels of the rendered board, in grey levels.
pub const BLACK_LEVEL: f64 = 20.0;
pub const WHITE_LEVEL: f64 = 220.0;
pub const BACKGROUND_LEVEL: f64 = 110.0;
/// White margin around the pattern, in squares.
const BORDER_SQUARES: f64 = 1.0;
/// Supersampling factor per axis for the box-filtered render.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    Plain,
    /// Seeded random rectangles and an intensity ramp, for false-positive
    /// testing.
    Clutter,
}

/// Constant scene ranges for the optional paired range map, in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthBand {
    pub board: f64,
    pub background: f64,
}

impl Default for DepthBand {
    fn default() -> Self {
        Self { board: 1.5, background: 4.0 }
    }
}

#[derive(Clone, Debug)]
pub struct RenderParams {
    pub spec: GridSpec,
    /// Board model plane (unit squares, centred) to image pixels.
    pub homography: Homography,
    pub width: usize,
    pub height: usize,
    /// Additive Gaussian noise, in grey levels.
    pub noise_sigma: f64,
    pub seed: u64,
    pub background: Background,
    pub depth: Option<DepthBand>,
    /// Required clearance between the board outline and the image edge.
    pub margin: f64,
}

impl RenderParams {
    pub fn new(spec: GridSpec, homography: Homography, width: usize, height: usize) -> Self {
        Self {
            spec,
            homography,
            width,
            height,
            noise_sigma: 0.0,
            seed: 0,
            background: Background::Plain,
            depth: None,
            margin: 2.0,
        }
    }
}

/// A rendered scene with its exact ground truth.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub spec: GridSpec,
    pub truth_homography: Homography,
    pub amplitude: AmplitudeImage,
    pub depth: Option<DepthImage>,
    pub truth: VertexGrid,
    pub noise_sigma: f64,
}

/// Board pattern value at a model-plane point, or `None` outside the board.
fn board_value(spec: &GridSpec, x: f64, y: f64) -> Option<f64> {
    let half_cols = (spec.cols() as f64 + 1.0) / 2.0;
    let half_rows = (spec.rows() as f64 + 1.0) / 2.0;
    if x.abs() <= half_cols && y.abs() <= half_rows {
        let a = (math::floor(x + half_cols) as usize).min(spec.cols());
        let b = (math::floor(y + half_rows) as usize).min(spec.rows());
        return Some(if (a + b) % 2 == 0 { BLACK_LEVEL } else { WHITE_LEVEL });
    }
    if x.abs() <= half_cols + BORDER_SQUARES && y.abs() <= half_rows + BORDER_SQUARES {
        return Some(WHITE_LEVEL);
    }
    None
}

/// Whether a model point lies on the physical board (pattern plus border).
fn on_board(spec: &GridSpec, x: f64, y: f64) -> bool {
    let half_cols = (spec.cols() as f64 + 1.0) / 2.0 + BORDER_SQUARES;
    let half_rows = (spec.rows() as f64 + 1.0) / 2.0 + BORDER_SQUARES;
    x.abs() <= half_cols && y.abs() <= half_rows
}

/// Clutter backdrop: a base level with an intensity ramp and a handful of
/// rotated rectangles at 20-80% intensity.
fn clutter_field(width: usize, height: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut field = vec![BACKGROUND_LEVEL; width * height];
    let ramp = (rng.uniform_in(-0.3, 0.3), rng.uniform_in(-0.3, 0.3));
    for y in 0..height {
        for x in 0..width {
            field[y * width + x] += ramp.0 * x as f64 + ramp.1 * y as f64;
        }
    }
    let count = 6 + rng.index(7);
    for _ in 0..count {
        let level = rng.uniform_in(0.2 * 255.0, 0.8 * 255.0);
        let centre = (
            rng.uniform_in(0.0, width as f64),
            rng.uniform_in(0.0, height as f64),
        );
        let half = (rng.uniform_in(5.0, 40.0), rng.uniform_in(3.0, 25.0));
        let angle = rng.uniform_in(0.0, math::PI);
        let (c, s) = (math::cos(angle), math::sin(angle));
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - centre.0;
                let dy = y as f64 - centre.1;
                let local = (c * dx + s * dy, -s * dx + c * dy);
                if local.0.abs() <= half.0 && local.1.abs() <= half.1 {
                    field[y * width + x] = level;
                }
            }
        }
    }
    field
}

/// Renders the chequer pattern warped by the given homography, with a 4x
/// supersampled box filter and seeded additive Gaussian noise.
///
/// Fails when the board outline does not fit inside the requested margin;
/// the caller is expected to resample the pose.
pub fn render_board(params: &RenderParams) -> Result<SynthScene, SynthError> {
    let spec = params.spec;
    let h = params.homography;
    let h_inv = h.inverse().map_err(|_| SynthError::BadHomography)?;
    let (width, height) = (params.width, params.height);

    // The whole board outline must project inside the margin, on one side
    // of the horizon.
    let half_cols = (spec.cols() as f64 + 1.0) / 2.0 + BORDER_SQUARES;
    let half_rows = (spec.rows() as f64 + 1.0) / 2.0 + BORDER_SQUARES;
    let mut outline_sign = 0.0f64;
    for (mx, my) in [
        (-half_cols, -half_rows),
        (half_cols, -half_rows),
        (half_cols, half_rows),
        (-half_cols, half_rows),
        (0.0, -half_rows),
        (0.0, half_rows),
        (-half_cols, 0.0),
        (half_cols, 0.0),
    ] {
        let v = h.mat3().apply([mx, my, 1.0]);
        if v[2].abs() < 1e-9 {
            return Err(SynthError::BoardOutsideImage);
        }
        if outline_sign == 0.0 {
            outline_sign = v[2].signum();
        } else if v[2].signum() != outline_sign {
            return Err(SynthError::BoardOutsideImage);
        }
        let (x, y) = (v[0] / v[2], v[1] / v[2]);
        if x < params.margin
            || y < params.margin
            || x > width as f64 - 1.0 - params.margin
            || y > height as f64 - 1.0 - params.margin
        {
            return Err(SynthError::BoardOutsideImage);
        }
    }

    let truth = h
        .project_grid(&ideal_grid(&spec))
        .ok_or(SynthError::BoardOutsideImage)?;

    let mut clutter_rng = SeededRng::child(params.seed, 1);
    let backdrop = match params.background {
        Background::Plain => None,
        Background::Clutter => Some(clutter_field(width, height, &mut clutter_rng)),
    };
    let background_at = |x: f64, y: f64| -> f64 {
        match &backdrop {
            None => BACKGROUND_LEVEL,
            Some(field) => {
                let xi = (math::round(x) as isize).clamp(0, width as isize - 1) as usize;
                let yi = (math::round(y) as isize).clamp(0, height as isize - 1) as usize;
                field[yi * width + xi]
            }
        }
    };

    let mut data = Vec::with_capacity(width * height);
    let inv = h_inv.mat3();
    for py in 0..height {
        for px in 0..width {
            let mut sum = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let v = inv.apply([x, y, 1.0]);
                    let value = if v[2].abs() > 1e-12 {
                        board_value(&spec, v[0] / v[2], v[1] / v[2])
                    } else {
                        None
                    };
                    sum += value.unwrap_or_else(|| background_at(x, y));
                }
            }
            data.push(sum / (SUPERSAMPLE * SUPERSAMPLE) as f64);
        }
    }

    if params.noise_sigma > 0.0 {
        let mut noise_rng = SeededRng::child(params.seed, 2);
        for v in &mut data {
            *v = (*v + params.noise_sigma * noise_rng.gaussian()).max(0.0);
        }
    }

    let depth = params.depth.map(|band| {
        let mut ranges = Vec::with_capacity(width * height);
        for py in 0..height {
            for px in 0..width {
                let v = inv.apply([px as f64, py as f64, 1.0]);
                let board = v[2].abs() > 1e-12 && on_board(&spec, v[0] / v[2], v[1] / v[2]);
                ranges.push(if board { band.board } else { band.background });
            }
        }
        DepthImage::new(width, height, ranges).expect("constant ranges are valid")
    });

    Ok(SynthScene {
        spec,
        truth_homography: h,
        amplitude: AmplitudeImage::new(width, height, data)
            .expect("render produces finite non-negative samples"),
        depth,
        truth,
        noise_sigma: params.noise_sigma,
    })
}

/// A board-free scene: clutter backdrop plus noise, with an optional flat
/// out-of-band range map.
pub fn render_clutter(
    width: usize,
    height: usize,
    seed: u64,
    noise_sigma: f64,
) -> AmplitudeImage {
    let mut rng = SeededRng::child(seed, 1);
    let mut data = clutter_field(width, height, &mut rng);
    if noise_sigma > 0.0 {
        let mut noise_rng = SeededRng::child(seed, 2);
        for v in &mut data {
            *v = (*v + noise_sigma * noise_rng.gaussian()).max(0.0);
        }
    }
    AmplitudeImage::new(width, height, data).expect("clutter samples are valid")
}

/// Pose distribution for sampled scenes.
#[derive(Clone, Debug)]
pub struct PoseRange {
    /// Slant sampled uniformly from [0, slant_max] radians.
    pub slant_max: f64,
    /// Square size in pixels, sampled uniformly.
    pub square_px: (f64, f64),
    /// Board-centre offset from the image centre, per axis, in pixels.
    pub offset_px: f64,
}

impl Default for PoseRange {
    fn default() -> Self {
        Self {
            slant_max: 60.0f64.to_radians(),
            square_px: (9.0, 13.0),
            offset_px: 12.0,
        }
    }
}

/// Samples a board pose at a fixed slant: scale and offset first, then a
/// rotation homography about the principal point.
pub fn sample_pose_at_slant(
    width: usize,
    height: usize,
    slant: f64,
    range: &PoseRange,
    rng: &mut SeededRng,
) -> Homography {
    let k = Intrinsics::for_image(width, height);
    let square = rng.uniform_in(range.square_px.0, range.square_px.1);
    let place = Mat3([
        [square, 0.0, k.cx + rng.uniform_in(-range.offset_px, range.offset_px)],
        [0.0, square, k.cy + rng.uniform_in(-range.offset_px, range.offset_px)],
        [0.0, 0.0, 1.0],
    ]);
    let tilt = rng.uniform_in(0.0, 2.0 * math::PI);
    let cyclo = rng.uniform_in(0.0, 2.0 * math::PI);
    let warp = rotation_homography(slant, tilt, cyclo, &k);
    Homography::from_mat3(warp.mat3().mul(&place)).expect("pose homography is invertible")
}

/// Renders a scene at a slant drawn uniformly from the pose range.
///
/// The slant is drawn once; when a pose does not fit the image, only tilt,
/// cyclo-rotation, scale, and offset are resampled, so a batch of scenes
/// keeps its slant distribution uniform.
pub fn sample_scene(
    spec: GridSpec,
    width: usize,
    height: usize,
    range: &PoseRange,
    background: Background,
    depth: Option<DepthBand>,
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthScene, SynthError> {
    let mut rng = SeededRng::child(seed, 3);
    let slant = rng.uniform_in(0.0, range.slant_max.max(1e-12));
    sample_scene_at_slant(
        spec,
        width,
        height,
        slant,
        range,
        background,
        depth,
        noise_sigma,
        seed,
    )
}

/// Renders a scene at the given slant, resampling the remaining pose
/// parameters until the board fits inside the image.
#[allow(clippy::too_many_arguments)]
pub fn sample_scene_at_slant(
    spec: GridSpec,
    width: usize,
    height: usize,
    slant: f64,
    range: &PoseRange,
    background: Background,
    depth: Option<DepthBand>,
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthScene, SynthError> {
    let mut rng = SeededRng::child(seed, 4);
    for attempt in 0..1000 {
        let mut params = RenderParams::new(
            spec,
            sample_pose_at_slant(width, height, slant, range, &mut rng),
            width,
            height,
        );
        params.noise_sigma = noise_sigma;
        params.seed = seed.wrapping_add(attempt);
        params.background = background;
        params.depth = depth;
        match render_board(&params) {
            Ok(scene) => return Ok(scene),
            Err(SynthError::BoardOutsideImage) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SynthError::PoseSamplingExhausted)
}

/// Parameters of the slant-robustness experiment.
#[derive(Clone, Debug)]
pub struct SlantParams {
    pub spec: GridSpec,
    pub width: usize,
    pub height: usize,
    pub square_px: f64,
    pub noise_sigma: f64,
    pub erosion_radius: usize,
    pub method: Method,
    pub ransac_iterations: usize,
    pub threshold_fraction: f64,
    pub threshold_percentile: f64,
    /// Gradient vectors sampled per trial for the statistic.
    pub sample_size: usize,
    pub trials_per_slant: usize,
    pub slants_deg: Vec<f64>,
    pub seed: u64,
}

impl Default for SlantParams {
    fn default() -> Self {
        Self {
            spec: GridSpec::new(4, 5).expect("4x5 is valid"),
            width: 176,
            height: 144,
            square_px: 12.0,
            noise_sigma: 2.0,
            erosion_radius: 2,
            method: Method::Pca,
            ransac_iterations: 100,
            threshold_fraction: 0.2,
            threshold_percentile: 95.0,
            sample_size: 5000,
            trials_per_slant: 100,
            slants_deg: (0..=8).map(|k| 10.0 * k as f64).collect(),
            seed: 0,
        }
    }
}

/// Everything fixed across slant trials: the fronto-parallel base scene,
/// its gradients, labels, and classifier state.
pub struct SlantBase {
    params: SlantParams,
    grads: GradientField,
    mask: crate::image::MaskedImage,
    labels: LabelMap,
    /// Base double-angle axis (PCA) used for identity alignment.
    axis: f64,
    edge_pixels: Vec<(usize, usize)>,
    intrinsics: Intrinsics,
}

impl SlantBase {
    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn gradients(&self) -> &GradientField {
        &self.grads
    }
}

/// Renders and labels the fronto-parallel base scene.
pub fn prepare_slant_base(params: &SlantParams) -> Result<SlantBase, SynthError> {
    let k = Intrinsics::for_image(params.width, params.height);
    let place = Mat3([
        [params.square_px, 0.0, k.cx],
        [0.0, params.square_px, k.cy],
        [0.0, 0.0, 1.0],
    ]);
    let mut render = RenderParams::new(
        params.spec,
        Homography::from_mat3(place).expect("placement is invertible"),
        params.width,
        params.height,
    );
    render.noise_sigma = params.noise_sigma;
    render.seed = params.seed;
    let scene = render_board(&render)?;

    let mask = erode_mask(
        &segment_depth(&scene.amplitude, None, 0.1, 10.0).expect("valid band"),
        params.erosion_radius,
    );
    let grads = gradient(&mask);
    let threshold =
        projection_threshold(&grads, &mask, params.threshold_fraction, params.threshold_percentile)
            .ok_or(SynthError::EmptyBase)?;
    let points: Vec<_> = grads
        .iter_nonzero()
        .map(|(_, _, gx, gy)| double_angle(gx, gy))
        .collect();
    let axis = principal_axis(&points).map_err(|_| SynthError::EmptyBase)?;
    let labels = match params.method {
        Method::Pca => classify_pca(&grads, axis, threshold),
        Method::Ransac => {
            let (labels, _) =
                classify_ransac(&grads, threshold, params.ransac_iterations, params.seed)
                    .map_err(|_| SynthError::EmptyBase)?;
            align_labels(labels, &grads, axis)
        }
    };
    let edge_pixels: Vec<_> = grads.iter_nonzero().map(|(x, y, _, _)| (x, y)).collect();
    if labels.count_labelled() == 0 || edge_pixels.is_empty() {
        return Err(SynthError::EmptyBase);
    }
    // Gradient transport works in centred coordinates (principal point at
    // the origin): only there does a pure cyclo-rotation carry gradients
    // to rotated gradients with their magnitudes intact. Pixel positions
    // are untouched by the transport, so this choice affects nothing else.
    let transport_k = Intrinsics { focal: k.focal, cx: 0.0, cy: 0.0 };
    Ok(SlantBase {
        params: params.clone(),
        grads,
        mask,
        labels,
        axis,
        edge_pixels,
        intrinsics: transport_k,
    })
}

/// Flips family names so the mean double-angle vector of `X` aligns with
/// the expected axis direction; label identities stay comparable across a
/// rotation.
fn align_labels(labels: LabelMap, grads: &GradientField, expected_axis: f64) -> LabelMap {
    let expect = (math::cos(expected_axis), math::sin(expected_axis));
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y, family) in labels.iter_labelled() {
        if family == Family::X {
            let (gx, gy) = grads.get(x, y);
            let p = double_angle(gx, gy);
            sx += p.x;
            sy += p.y;
        }
    }
    if sx * expect.0 + sy * expect.1 >= 0.0 {
        return labels;
    }
    let mut flipped = LabelMap::new_empty(labels.width(), labels.height());
    for (x, y, family) in labels.iter_labelled() {
        flipped.set(x, y, Some(family.other()));
    }
    flipped
}

/// One slant trial: transport the base gradients through the rotation
/// homography, reclassify with the same method and threshold policy, and
/// measure label consistency over a seeded gradient subsample.
///
/// `None` when the transported distribution no longer defines a classifier
/// (the slant-90 "edge-on" case).
pub fn slant_trial(
    base: &SlantBase,
    slant: f64,
    tilt: f64,
    cyclo: f64,
    rng: &mut SeededRng,
) -> Option<f64> {
    let h = rotation_homography(slant, tilt, cyclo, &base.intrinsics);
    let transported = transport_gradients(&base.grads, &h);
    let threshold = projection_threshold(
        &transported,
        &base.mask,
        base.params.threshold_fraction,
        base.params.threshold_percentile,
    )?;

    // Identity alignment: the recomputed axis keeps the sign that follows
    // the transported base axis, so a pure cyclo-rotation does not swap
    // family names.
    let h_inverse = *h.inverse().ok()?.mat3();
    let base_dir = (math::cos(base.axis / 2.0), math::sin(base.axis / 2.0));
    let transported_dir = transport_gradient(base_dir, &h_inverse)?;
    if math::hypot(transported_dir.0, transported_dir.1) < 1e-12 {
        return None;
    }
    let expected = double_angle(transported_dir.0, transported_dir.1);
    let expected_axis = math::atan2(expected.y, expected.x);

    let labels = match base.params.method {
        Method::Pca => {
            let points: Vec<_> = transported
                .iter_nonzero()
                .map(|(_, _, gx, gy)| double_angle(gx, gy))
                .collect();
            let mut axis = principal_axis(&points).ok()?;
            let dot = math::cos(axis) * math::cos(expected_axis)
                + math::sin(axis) * math::sin(expected_axis);
            if dot < 0.0 {
                axis += math::PI;
            }
            classify_pca(&transported, axis, threshold)
        }
        Method::Ransac => {
            let seed = rng.next_u64();
            let (labels, _) =
                classify_ransac(&transported, threshold, base.params.ransac_iterations, seed)
                    .ok()?;
            align_labels(labels, &transported, expected_axis)
        }
    };

    // Seeded subsample of the gradient pixels; the statistic counts only
    // those that were edges (labelled) in the base image.
    let total = base.edge_pixels.len();
    let take = base.params.sample_size.min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..take {
        let j = i + rng.index(total - i);
        indices.swap(i, j);
    }
    let mut edges = 0usize;
    let mut kept = 0usize;
    for &idx in &indices[..take] {
        let (x, y) = base.edge_pixels[idx];
        if let Some(label) = base.labels.get(x, y) {
            edges += 1;
            if labels.get(x, y) == Some(label) {
                kept += 1;
            }
        }
    }
    if edges == 0 {
        return None;
    }
    Some(kept as f64 / edges as f64)
}

/// One point of the slant-robustness curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlantPoint {
    pub slant_deg: f64,
    pub mean: f64,
    pub stddev: f64,
    pub trials: usize,
}

/// Runs the full experiment: at each slant, `trials_per_slant` random
/// tilt/cyclo draws, aggregated to mean and sample standard deviation.
/// Deterministic for a given seed.
pub fn slant_experiment(params: &SlantParams) -> Result<Vec<SlantPoint>, SynthError> {
    let base = prepare_slant_base(params)?;
    let mut curve = Vec::with_capacity(params.slants_deg.len());
    for (si, &slant_deg) in params.slants_deg.iter().enumerate() {
        let slant = slant_deg.to_radians();
        let mut values = Vec::with_capacity(params.trials_per_slant);
        for trial in 0..params.trials_per_slant {
            let mut rng =
                SeededRng::child(params.seed, 0x5147 + (si * params.trials_per_slant + trial) as u64);
            let tilt = rng.uniform_in(0.0, 2.0 * math::PI);
            let cyclo = rng.uniform_in(0.0, 2.0 * math::PI);
            if let Some(c) = slant_trial(&base, slant, tilt, cyclo, &mut rng) {
                values.push(c);
            }
        }
        if values.is_empty() {
            return Err(SynthError::UndefinedConsistency { slant_deg });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        curve.push(SlantPoint {
            slant_deg,
            mean,
            stddev: math::sqrt(variance),
            trials: values.len(),
        });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthError {
    BadHomography,
    BoardOutsideImage,
    PoseSamplingExhausted,
    EmptyBase,
    UndefinedConsistency { slant_deg: f64 },
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::BadHomography => write!(f, "homography is not invertible"),
            SynthError::BoardOutsideImage => {
                write!(f, "projected board does not fit inside the image margin")
            }
            SynthError::PoseSamplingExhausted => {
                write!(f, "no sampled pose kept the board inside the image")
            }
            SynthError::EmptyBase => {
                write!(f, "base scene produced no usable gradients")
            }
            SynthError::UndefinedConsistency { slant_deg } => {
                write!(f, "consistency undefined at slant {slant_deg} degrees")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> GridSpec {
        GridSpec::new(4, 5).unwrap()
    }

    fn centred_scale(square: f64, k: &Intrinsics) -> Homography {
        Homography::from_mat3(Mat3([
            [square, 0.0, k.cx],
            [0.0, square, k.cy],
            [0.0, 0.0, 1.0],
        ]))
        .unwrap()
    }

    #[test]
    fn rotation_homography_identity_cases() {
        let k = Intrinsics::for_image(176, 144);
        let h = rotation_homography(0.0, 1.234, 0.0, &k);
        assert_eq!(h, Homography::identity());
    }

    #[test]
    fn rotation_homography_pure_cyclo() {
        let k = Intrinsics::for_image(176, 144);
        let h = rotation_homography(0.0, 0.0, math::PI / 2.0, &k);
        // The principal point is fixed.
        let pp = h.project((k.cx, k.cy)).unwrap();
        assert_relative_eq!(pp.0, k.cx, epsilon = 1e-9);
        assert_relative_eq!(pp.1, k.cy, epsilon = 1e-9);
        // A point right of the principal point moves to above/below it by
        // the same distance.
        let p = h.project((k.cx + 10.0, k.cy)).unwrap();
        assert_relative_eq!(p.0, k.cx, epsilon = 1e-9);
        assert_relative_eq!(p.1.abs() - k.cy.abs(), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_homography_inverse_composition() {
        let k = Intrinsics::for_image(176, 144);
        for (slant, tilt) in [(0.3, 0.7), (0.9, 4.0), (1.2, 2.2)] {
            let forward = rotation_homography(slant, tilt, 0.0, &k);
            let backward = rotation_homography(-slant, tilt, 0.0, &k);
            let composed = forward.compose(&backward).unwrap();
            let id = Homography::identity();
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(
                        composed.matrix()[i][j],
                        id.matrix()[i][j],
                        epsilon = 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn transport_identity_is_noop() {
        let mut grads = GradientField::zero(4, 1);
        grads.set(0, 0, (3.0, -2.0));
        grads.set(2, 0, (-1.0, 0.5));
        let out = transport_gradients(&grads, &Homography::identity());
        assert_eq!(out.get(0, 0), (3.0, -2.0));
        assert_eq!(out.get(2, 0), (-1.0, 0.5));
        assert_eq!(out.get(1, 0), (0.0, 0.0));
    }

    #[test]
    fn transport_through_plane_rotation_rotates_gradients() {
        // H is a plane rotation by omega about the origin; the transported
        // gradient direction rotates with the image.
        let omega = 0.6f64;
        let (c, s) = (math::cos(omega), math::sin(omega));
        let h = Homography::new([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let h_inv = *h.inverse().unwrap().mat3();
        let g = transport_gradient((2.0, 0.0), &h_inv).unwrap();
        assert_relative_eq!(g.0, 2.0 * c, epsilon = 1e-12);
        assert_relative_eq!(g.1, 2.0 * s, epsilon = 1e-12);
    }

    #[test]
    fn transport_under_isotropic_scale_keeps_direction() {
        let h = Homography::new([[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let h_inv = *h.inverse().unwrap().mat3();
        let g = transport_gradient((1.0, 2.0), &h_inv).unwrap();
        let angle_in = math::atan2(2.0, 1.0);
        let angle_out = math::atan2(g.1, g.0);
        assert_relative_eq!(angle_in, angle_out, epsilon = 1e-12);
    }

    #[test]
    fn transport_composition() {
        let k = Intrinsics::for_image(176, 144);
        let h1 = rotation_homography(0.4, 1.0, 0.3, &k);
        let h2 = rotation_homography(0.2, 4.0, 5.0, &k);
        let mut grads = GradientField::zero(3, 1);
        grads.set(0, 0, (40.0, -25.0));
        grads.set(1, 0, (-8.0, 12.0));
        grads.set(2, 0, (100.0, 3.0));
        let composed = transport_gradients(&grads, &h1.compose(&h2).unwrap());
        let chained = transport_gradients(&transport_gradients(&grads, &h2), &h1);
        for x in 0..3 {
            let a = composed.get(x, 0);
            let b = chained.get(x, 0);
            assert_relative_eq!(a.0, b.0, epsilon = 1e-9);
            assert_relative_eq!(a.1, b.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn render_truth_matches_projected_lattice() {
        let k = Intrinsics::for_image(176, 144);
        let h = centred_scale(12.0, &k);
        let scene = render_board(&RenderParams::new(spec(), h, 176, 144)).unwrap();
        let expected = h.project_grid(&ideal_grid(&spec())).unwrap();
        assert_eq!(scene.truth, expected);
        // Fronto-parallel: vertex (0, 0) of the ideal grid is at
        // (-2, -1.5) units, i.e. centre + 12 * (-2, -1.5).
        let v = scene.truth.get(0, 0);
        assert_relative_eq!(v.0, k.cx - 24.0);
        assert_relative_eq!(v.1, k.cy - 18.0);
    }

    #[test]
    fn render_translation_moves_vertices() {
        let k = Intrinsics::for_image(176, 144);
        let base = centred_scale(11.0, &k);
        let shifted = Homography::new([
            [11.0, 0.0, k.cx + 5.0],
            [0.0, 11.0, k.cy - 3.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let a = render_board(&RenderParams::new(spec(), base, 176, 144)).unwrap();
        let b = render_board(&RenderParams::new(spec(), shifted, 176, 144)).unwrap();
        for (pa, pb) in a.truth.points().iter().zip(b.truth.points()) {
            assert_relative_eq!(pb.0 - pa.0, 5.0, epsilon = 1e-9);
            assert_relative_eq!(pb.1 - pa.1, -3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn render_rejects_offscreen_board() {
        let k = Intrinsics::for_image(176, 144);
        let h = Homography::new([
            [12.0, 0.0, 170.0],
            [0.0, 12.0, k.cy],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(
            render_board(&RenderParams::new(spec(), h, 176, 144)).unwrap_err(),
            SynthError::BoardOutsideImage
        );
    }

    #[test]
    fn render_noise_mean_absolute_difference() {
        let k = Intrinsics::for_image(176, 144);
        let h = centred_scale(12.0, &k);
        let clean = render_board(&RenderParams::new(spec(), h, 176, 144)).unwrap();
        let mut noisy_params = RenderParams::new(spec(), h, 176, 144);
        noisy_params.noise_sigma = 2.0;
        noisy_params.seed = 99;
        let noisy = render_board(&noisy_params).unwrap();
        let n = (176 * 144) as f64;
        let mad: f64 = clean
            .amplitude
            .data()
            .iter()
            .zip(noisy.amplitude.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        // Folded Gaussian mean: sigma * sqrt(2/pi) = 1.5958 for sigma 2.
        let expected = 2.0 * math::sqrt(2.0 / math::PI);
        assert!((mad - expected).abs() < 0.05, "mad {mad} vs {expected}");
    }

    #[test]
    fn render_depth_band() {
        let k = Intrinsics::for_image(176, 144);
        let mut params = RenderParams::new(spec(), centred_scale(12.0, &k), 176, 144);
        params.depth = Some(DepthBand::default());
        let scene = render_board(&params).unwrap();
        let depth = scene.depth.unwrap();
        assert_eq!(depth.get(0, 0), Some(4.0));
        assert_eq!(depth.get(88, 72), Some(1.5));
    }

    #[test]
    fn render_deterministic_bytes() {
        let k = Intrinsics::for_image(176, 144);
        let mut params = RenderParams::new(spec(), centred_scale(12.0, &k), 176, 144);
        params.noise_sigma = 2.0;
        params.seed = 7;
        params.background = Background::Clutter;
        let a = render_board(&params).unwrap();
        let b = render_board(&params).unwrap();
        assert_eq!(a.amplitude.data(), b.amplitude.data());
    }

    #[test]
    fn clutter_differs_by_seed() {
        let a = render_clutter(64, 48, 1, 2.0);
        let b = render_clutter(64, 48, 2, 2.0);
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn consistency_trivial_cases() {
        let mut base = LabelMap::new_empty(4, 1);
        base.set(0, 0, Some(Family::X));
        base.set(1, 0, Some(Family::Y));
        base.set(2, 0, Some(Family::X));
        let same = base.clone();
        assert_eq!(consistency(&same, &base), Some(1.0));

        let mut swapped = LabelMap::new_empty(4, 1);
        swapped.set(0, 0, Some(Family::Y));
        swapped.set(1, 0, Some(Family::X));
        swapped.set(2, 0, Some(Family::Y));
        assert_eq!(consistency(&swapped, &base), Some(0.0));

        // Half preserved over four edges: flip the two X labels.
        let mut base4 = base.clone();
        base4.set(3, 0, Some(Family::Y));
        let mut half4 = base4.clone();
        half4.set(0, 0, Some(Family::Y));
        half4.set(2, 0, Some(Family::Y));
        assert_eq!(consistency(&half4, &base4), Some(0.5));

        let empty = LabelMap::new_empty(4, 1);
        assert_eq!(consistency(&base, &empty), None);
    }

    #[test]
    fn slant_trial_exact_identity_at_zero_pose() {
        let params = SlantParams {
            trials_per_slant: 1,
            sample_size: 2000,
            ..SlantParams::default()
        };
        let base = prepare_slant_base(&params).unwrap();
        let mut rng = SeededRng::new(5);
        let c = slant_trial(&base, 0.0, 1.1, 0.0, &mut rng).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn slant_trial_high_consistency_under_cyclo_rotation() {
        let params = SlantParams {
            sample_size: 3000,
            ..SlantParams::default()
        };
        let base = prepare_slant_base(&params).unwrap();
        for cyclo in [0.4, 1.3, 2.5, 4.4] {
            let mut rng = SeededRng::new(6);
            let c = slant_trial(&base, 0.0, 0.0, cyclo, &mut rng).unwrap();
            assert!(c > 0.9, "consistency {c} at cyclo {cyclo}");
        }
    }

    #[test]
    fn slant_curve_deterministic() {
        let params = SlantParams {
            trials_per_slant: 4,
            sample_size: 800,
            slants_deg: vec![0.0, 30.0, 60.0],
            ..SlantParams::default()
        };
        let a = slant_experiment(&params).unwrap();
        let b = slant_experiment(&params).unwrap();
        assert_eq!(a, b);
    }
}
