//! End-to-end detection: preprocess, cluster, local frame, Hough
//! transform, sweep, verification, subpixel refinement, and error metrics,
//! with per-stage diagnostics. Every stage failure becomes a structured
//! rejection; nothing escapes as an error.

use alloc::vec::Vec;
use core::fmt;

use crate::cluster::{
    classify_pca, classify_ransac, double_angle, principal_axis, projection_threshold,
    ClusterModel, Family, LabelMap, Method,
};
use crate::frame::{board_centroid, frame_angle, LocalFrame};
use crate::geometry::{ideal_grid, GridSpec, VertexGrid};
use crate::hough::{accumulate, HoughArray, HoughGeometry};
use crate::image::{AmplitudeImage, DepthImage};
use crate::metrics::{geometric_error, photometric_error};
use crate::preprocess::{erode_mask, gradient, segment_depth};
use crate::sweep::{
    best_sweep_pair, grid_vertices, pencil_lines, resolve_pencils, Correspondence, SweepScore,
};
use crate::verify::{subpixel_refine, verdict, GradientSampling, VerdictReason};

/// All tunables of the detector, with defaults chosen for low-resolution
/// amplitude/range cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Depth acceptance band (near, far) in metres; `None` disables depth
    /// gating (amplitude-only mode). There is no sensible universal
    /// default, so depth use always carries an explicit band.
    pub depth_band: Option<(f64, f64)>,
    pub erosion_radius: usize,
    pub method: Method,
    /// Projection threshold = fraction * percentile of gradient magnitude.
    pub threshold_fraction: f64,
    pub threshold_percentile: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
    /// Accumulator side = round(scale * (width + height) / 2).
    pub hough_scale: f64,
    /// Sweep run threshold as a fraction of the sweep maximum.
    pub run_threshold_fraction: f64,
    /// Interval-ratio acceptance threshold (corrupted test).
    pub interval_threshold: f64,
    /// Transition-ratio acceptance threshold (displaced test).
    pub transition_threshold: f64,
    pub subpixel_half_width: usize,
    pub subpixel_max_iter: usize,
    pub subpixel_tolerance: f64,
    pub gradient_sampling: GradientSampling,
    /// Keep both accumulators in the diagnostics (for debug dumps).
    pub keep_hough: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            depth_band: None,
            erosion_radius: 2,
            method: Method::Pca,
            threshold_fraction: 0.2,
            threshold_percentile: 95.0,
            ransac_iterations: 100,
            seed: 0,
            hough_scale: 1.5,
            run_threshold_fraction: 0.05,
            interval_threshold: 0.25,
            transition_threshold: 0.5,
            subpixel_half_width: 2,
            subpixel_max_iter: 20,
            subpixel_tolerance: 0.01,
            gradient_sampling: GradientSampling::Bilinear,
            keep_hough: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some((near, far)) = self.depth_band {
            if !(near < far) || !near.is_finite() || !far.is_finite() {
                return Err(ConfigError::new("depth band requires near < far"));
            }
        }
        let positive = [
            (self.threshold_fraction, "threshold_fraction"),
            (self.hough_scale, "hough_scale"),
            (self.interval_threshold, "interval_threshold"),
            (self.transition_threshold, "transition_threshold"),
            (self.subpixel_tolerance, "subpixel_tolerance"),
        ];
        for (value, name) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::new2(name, "must be positive"));
            }
        }
        if !(self.run_threshold_fraction >= 0.0) || self.run_threshold_fraction >= 1.0 {
            return Err(ConfigError::new("run_threshold_fraction must be in [0, 1)"));
        }
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile <= 100.0) {
            return Err(ConfigError::new("threshold_percentile must be in (0, 100]"));
        }
        if self.ransac_iterations == 0 {
            return Err(ConfigError::new("ransac_iterations must be at least 1"));
        }
        if self.subpixel_half_width < 2 {
            return Err(ConfigError::new("subpixel_half_width must be at least 2"));
        }
        if self.subpixel_max_iter == 0 {
            return Err(ConfigError::new("subpixel_max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    field: &'static str,
    message: &'static str,
}

impl ConfigError {
    fn new(message: &'static str) -> Self {
        Self { field: "", message }
    }

    fn new2(field: &'static str, message: &'static str) -> Self {
        Self { field, message }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ConfigError {}

/// Why a detection was rejected, by failing stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// Depth gating and erosion left no usable pixels, or no board-like
    /// dark mass was found.
    NoBoardMask,
    /// The gradient distribution did not split into two clusters.
    DegenerateCluster,
    /// No sweep produced the required number of peaks.
    NoPencil,
    /// The pencils did not intersect in a plausible lattice.
    GeometricFailure,
    /// Failed the interval-ratio test.
    Corrupted,
    /// Failed the transition-ratio test.
    Displaced,
}

impl RejectReason {
    pub fn name(&self) -> &'static str {
        match self {
            RejectReason::NoBoardMask => "no_board_mask",
            RejectReason::DegenerateCluster => "degenerate_cluster",
            RejectReason::NoPencil => "no_pencil",
            RejectReason::GeometricFailure => "geometric_failure",
            RejectReason::Corrupted => "corrupted",
            RejectReason::Displaced => "displaced",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Sweep totals for every (pencil, family) pairing.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepScores {
    pub rows_from_x: f64,
    pub cols_from_x: f64,
    pub rows_from_y: f64,
    pub cols_from_y: f64,
}

/// Per-stage observations collected along the way, kept also for rejected
/// results so batch runs can account for failures.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub mask_pixels: usize,
    pub labels_x: usize,
    pub labels_y: usize,
    pub frame: Option<LocalFrame>,
    pub sweep_scores: Option<SweepScores>,
    pub correspondence: Option<Correspondence>,
    pub worst_interval_deviation: Option<f64>,
    pub worst_transition_deviation: Option<f64>,
    /// How many vertices the subpixel step actually moved.
    pub refined_vertices: usize,
    /// `(stage name, seconds)`; zeros when built without `std`.
    pub stage_timings: Vec<(&'static str, f64)>,
    /// Both accumulators, when `keep_hough` was set.
    pub hough: Option<(HoughArray, HoughArray)>,
}

/// Outcome of a detection run.
#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub reject_reason: Option<RejectReason>,
    /// Subpixel-refined vertex lattice; present exactly when accepted.
    pub vertices: Option<VertexGrid>,
    pub method: Method,
    pub rows: usize,
    pub cols: usize,
    /// RMS distance to the optimal homography projection of the ideal
    /// grid, in pixels; accepted results only.
    pub geometric_error: Option<f64>,
    /// Contrast-normalized RMS gradient residual around the vertices.
    pub photometric_error: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl DetectionResult {
    pub fn accepted(&self) -> bool {
        self.reject_reason.is_none()
    }

    fn rejected(reason: RejectReason, spec: &GridSpec, method: Method, diag: Diagnostics) -> Self {
        Self {
            reject_reason: Some(reason),
            vertices: None,
            method,
            rows: spec.rows(),
            cols: spec.cols(),
            geometric_error: None,
            photometric_error: None,
            diagnostics: diag,
        }
    }
}

#[cfg(feature = "std")]
struct Stopwatch(std::time::Instant);

#[cfg(feature = "std")]
impl Stopwatch {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }

    fn lap(&mut self) -> f64 {
        let now = std::time::Instant::now();
        let dt = now.duration_since(self.0).as_secs_f64();
        self.0 = now;
        dt
    }
}

#[cfg(not(feature = "std"))]
struct Stopwatch;

#[cfg(not(feature = "std"))]
impl Stopwatch {
    fn start() -> Self {
        Self
    }

    fn lap(&mut self) -> f64 {
        0.0
    }
}

/// Runs the whole detection chain on one image (with optional paired
/// range map).
///
/// Never fails: every stage failure is reported as a structured rejection
/// with the failing stage named. Deterministic for identical inputs,
/// configuration, and seed.
///
/// Panics if the configuration is invalid or the image pair dimensions
/// disagree; validate inputs first when they come from outside.
pub fn detect(
    amplitude: &AmplitudeImage,
    depth: Option<&DepthImage>,
    spec: &GridSpec,
    config: &DetectorConfig,
) -> DetectionResult {
    config.validate().expect("invalid detector configuration");
    if let Some(d) = depth {
        crate::image::check_pair(amplitude, d).expect("amplitude/depth dimension mismatch");
    }
    let mut diag = Diagnostics::default();
    let mut clock = Stopwatch::start();
    let method = config.method;
    let size = (amplitude.width(), amplitude.height());

    // Preprocess: depth gating, perimeter erosion, gradients.
    let (near, far) = config.depth_band.unwrap_or((0.0, f64::INFINITY));
    let depth = if config.depth_band.is_some() { depth } else { None };
    let mask = segment_depth(amplitude, depth, near, far).expect("validated band");
    let mask = erode_mask(&mask, config.erosion_radius);
    diag.mask_pixels = mask.count_valid();
    let grads = gradient(&mask);
    diag.stage_timings.push(("preprocess", clock.lap()));
    if diag.mask_pixels == 0 {
        return DetectionResult::rejected(RejectReason::NoBoardMask, spec, method, diag);
    }

    // Board centre from the darkness-weighted centroid.
    let centroid = match board_centroid(&mask) {
        Ok(c) => c,
        Err(_) => {
            return DetectionResult::rejected(RejectReason::NoBoardMask, spec, method, diag)
        }
    };

    // Cluster the gradient orientations.
    let threshold = match projection_threshold(
        &grads,
        &mask,
        config.threshold_fraction,
        config.threshold_percentile,
    ) {
        Some(t) => t,
        None => return DetectionResult::rejected(RejectReason::NoBoardMask, spec, method, diag),
    };
    let (labels, model): (LabelMap, ClusterModel) = match method {
        Method::Pca => {
            let points: Vec<_> = grads
                .iter_nonzero()
                .map(|(_, _, gx, gy)| double_angle(gx, gy))
                .collect();
            match principal_axis(&points) {
                Ok(axis_angle) => (
                    classify_pca(&grads, axis_angle, threshold),
                    ClusterModel::Pca { axis_angle, threshold },
                ),
                Err(_) => {
                    return DetectionResult::rejected(
                        RejectReason::DegenerateCluster,
                        spec,
                        method,
                        diag,
                    )
                }
            }
        }
        Method::Ransac => {
            match classify_ransac(&grads, threshold, config.ransac_iterations, config.seed) {
                Ok(pair) => pair,
                Err(_) => {
                    return DetectionResult::rejected(
                        RejectReason::DegenerateCluster,
                        spec,
                        method,
                        diag,
                    )
                }
            }
        }
    };
    diag.labels_x = labels.count(Family::X);
    diag.labels_y = labels.count(Family::Y);
    diag.stage_timings.push(("cluster", clock.lap()));

    // Local frame.
    let angle = match frame_angle(&model, &grads, &labels) {
        Ok(a) => a,
        Err(_) => {
            return DetectionResult::rejected(RejectReason::DegenerateCluster, spec, method, diag)
        }
    };
    let frame = LocalFrame::new(centroid, angle);
    diag.frame = Some(frame);
    diag.stage_timings.push(("frame", clock.lap()));

    // Hough accumulation over labelled local points.
    let geom = HoughGeometry::for_image(size.0, size.1, config.hough_scale);
    let local_points = labels.iter_labelled().map(|(x, y, family)| {
        let p = frame.to_local((x as f64, y as f64));
        (p.0, p.1, family)
    });
    let (hough_x, hough_y) = accumulate(local_points, geom);
    diag.stage_timings.push(("hough", clock.lap()));

    // Sweep both accumulators for both peak counts.
    let (rows_x, cols_x) =
        best_sweep_pair(&hough_x, spec.rows(), spec.cols(), config.run_threshold_fraction);
    let (rows_y, cols_y) =
        best_sweep_pair(&hough_y, spec.rows(), spec.cols(), config.run_threshold_fraction);
    let score = |r: &Result<SweepScore, _>| r.as_ref().map(|s| s.total).unwrap_or(0.0);
    diag.sweep_scores = Some(SweepScores {
        rows_from_x: score(&rows_x),
        cols_from_x: score(&cols_x),
        rows_from_y: score(&rows_y),
        cols_from_y: score(&cols_y),
    });
    let scores = diag.sweep_scores.unwrap();
    let correspondence = match resolve_pencils(
        scores.rows_from_x,
        scores.cols_from_y,
        scores.rows_from_y,
        scores.cols_from_x,
    ) {
        Ok(c) => c,
        Err(_) => {
            diag.stage_timings.push(("sweep", clock.lap()));
            if config.keep_hough {
                diag.hough = Some((hough_x, hough_y));
            }
            return DetectionResult::rejected(RejectReason::NoPencil, spec, method, diag);
        }
    };
    diag.correspondence = Some(correspondence);
    let (row_choice, col_choice, row_family) = match correspondence {
        Correspondence::RowsFromX => (rows_x, cols_y, Family::X),
        Correspondence::RowsFromY => (rows_y, cols_x, Family::Y),
    };
    diag.stage_timings.push(("sweep", clock.lap()));
    if config.keep_hough {
        diag.hough = Some((hough_x, hough_y));
    }
    let (Ok(row_choice), Ok(col_choice)) = (row_choice, col_choice) else {
        return DetectionResult::rejected(RejectReason::NoPencil, spec, method, diag);
    };

    // Pencils and the vertex lattice.
    let row_pencil = match pencil_lines(&row_choice, &geom, row_family, &frame) {
        Ok(p) => p,
        Err(_) => {
            return DetectionResult::rejected(RejectReason::GeometricFailure, spec, method, diag)
        }
    };
    let col_pencil = match pencil_lines(&col_choice, &geom, row_family.other(), &frame) {
        Ok(p) => p,
        Err(_) => {
            return DetectionResult::rejected(RejectReason::GeometricFailure, spec, method, diag)
        }
    };
    let grid = match grid_vertices(&row_pencil, &col_pencil, size) {
        Ok(g) => g,
        Err(_) => {
            return DetectionResult::rejected(RejectReason::GeometricFailure, spec, method, diag)
        }
    };

    // Acceptance tests on the raw lattice.
    let v = verdict(
        &grid,
        &row_pencil.lines,
        &col_pencil.lines,
        &grads,
        config.interval_threshold,
        config.transition_threshold,
        config.gradient_sampling,
    );
    diag.worst_interval_deviation = Some(v.worst_interval_deviation);
    diag.worst_transition_deviation = Some(v.worst_transition_deviation);
    diag.stage_timings.push(("verify", clock.lap()));
    if !v.accepted {
        let reason = match v.reason {
            VerdictReason::Corrupted => RejectReason::Corrupted,
            _ => RejectReason::Displaced,
        };
        return DetectionResult::rejected(reason, spec, method, diag);
    }

    // Subpixel refinement, in the original image frame.
    let mut refined = grid.clone();
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let r = subpixel_refine(
                grid.get(i, j),
                &grads,
                config.subpixel_half_width,
                config.subpixel_max_iter,
                config.subpixel_tolerance,
            );
            if r.refined {
                diag.refined_vertices += 1;
                refined.set(i, j, r.position);
            }
        }
    }
    diag.stage_timings.push(("refine", clock.lap()));

    // Error metrics against the ideal grid.
    let geometric = geometric_error(&ideal_grid(spec), &refined).ok();
    let window = 2 * config.subpixel_half_width + 1;
    let photometric = Some(photometric_error(refined.points(), &grads, window));
    diag.stage_timings.push(("metrics", clock.lap()));

    DetectionResult {
        reject_reason: None,
        vertices: Some(refined),
        method,
        rows: spec.rows(),
        cols: spec.cols(),
        geometric_error: geometric,
        photometric_error: photometric,
        diagnostics: diag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::synth::{
        render_clutter, sample_scene_at_slant, Background, DepthBand, PoseRange, SynthScene,
    };

    fn spec() -> GridSpec {
        GridSpec::new(4, 5).unwrap()
    }

    fn scene(slant_deg: f64, seed: u64) -> SynthScene {
        sample_scene_at_slant(
            spec(),
            176,
            144,
            slant_deg.to_radians(),
            &PoseRange::default(),
            Background::Plain,
            Some(DepthBand::default()),
            2.0,
            seed,
        )
        .unwrap()
    }

    fn config_with_depth() -> DetectorConfig {
        DetectorConfig {
            depth_band: Some((1.0, 2.0)),
            ..DetectorConfig::default()
        }
    }

    /// Worst distance between detected and true vertices, minimized over
    /// the four index orientations the detector cannot distinguish.
    fn worst_vertex_error(detected: &VertexGrid, truth: &VertexGrid) -> f64 {
        let mut best = f64::INFINITY;
        for flip_i in [false, true] {
            for flip_j in [false, true] {
                let mut worst: f64 = 0.0;
                for i in 0..truth.rows() {
                    for j in 0..truth.cols() {
                        let si = if flip_i { truth.rows() - 1 - i } else { i };
                        let sj = if flip_j { truth.cols() - 1 - j } else { j };
                        let d = detected.get(si, sj);
                        let t = truth.get(i, j);
                        worst = worst.max(math::hypot(d.0 - t.0, d.1 - t.1));
                    }
                }
                best = best.min(worst);
            }
        }
        best
    }

    #[test]
    fn detects_moderate_slant_board() {
        let scene = scene(30.0, 42);
        let result = detect(
            &scene.amplitude,
            scene.depth.as_ref(),
            &spec(),
            &config_with_depth(),
        );
        assert!(result.accepted(), "rejected: {:?}", result.reject_reason);
        let grid = result.vertices.as_ref().unwrap();
        assert_eq!(grid.rows(), 4);
        assert_eq!(grid.cols(), 5);
        let err = worst_vertex_error(grid, &scene.truth);
        assert!(err < 0.3, "worst vertex error {err}");
        assert!(result.geometric_error.unwrap() < 0.25);
    }

    #[test]
    fn detection_is_deterministic() {
        let scene = scene(25.0, 7);
        let cfg = config_with_depth();
        let a = detect(&scene.amplitude, scene.depth.as_ref(), &spec(), &cfg);
        let b = detect(&scene.amplitude, scene.depth.as_ref(), &spec(), &cfg);
        assert_eq!(a.accepted(), b.accepted());
        assert_eq!(
            a.vertices.as_ref().unwrap().points(),
            b.vertices.as_ref().unwrap().points()
        );
        assert_eq!(a.geometric_error, b.geometric_error);
    }

    #[test]
    fn clutter_only_is_never_accepted() {
        for seed in 0..5 {
            let amplitude = render_clutter(176, 144, seed, 2.0);
            let result = detect(&amplitude, None, &spec(), &DetectorConfig::default());
            assert!(
                !result.accepted(),
                "clutter seed {seed} accepted with reason None"
            );
        }
    }

    #[test]
    fn amplitude_scaling_leaves_vertices_in_place() {
        let scene = scene(20.0, 3);
        let cfg = config_with_depth();
        let base = detect(&scene.amplitude, scene.depth.as_ref(), &spec(), &cfg);
        assert!(base.accepted());
        let base_grid = base.vertices.unwrap();
        for factor in [0.5, 1.37, 2.0] {
            let scaled = AmplitudeImage::new(
                scene.amplitude.width(),
                scene.amplitude.height(),
                scene.amplitude.data().iter().map(|v| v * factor).collect(),
            )
            .unwrap();
            let result = detect(&scaled, scene.depth.as_ref(), &spec(), &cfg);
            assert!(result.accepted(), "factor {factor} rejected");
            let grid = result.vertices.unwrap();
            for (a, b) in grid.points().iter().zip(base_grid.points()) {
                assert!(
                    math::hypot(a.0 - b.0, a.1 - b.1) < 0.1,
                    "vertex moved under amplitude scaling {factor}"
                );
            }
        }
    }

    #[test]
    fn accepted_grid_is_monotone() {
        let scene = scene(35.0, 11);
        let result = detect(
            &scene.amplitude,
            scene.depth.as_ref(),
            &spec(),
            &config_with_depth(),
        );
        assert!(result.accepted());
        let grid = result.vertices.unwrap();
        assert_eq!(grid.points().len(), 20);
        // Row direction and column direction are each consistent.
        for i in 0..grid.rows() {
            for j in 1..grid.cols() {
                let a = grid.get(i, j - 1);
                let b = grid.get(i, j);
                let first = grid.get(i, 1);
                let origin = grid.get(i, 0);
                let dir = (first.0 - origin.0, first.1 - origin.1);
                let step = (b.0 - a.0, b.1 - a.1);
                assert!(dir.0 * step.0 + dir.1 * step.1 > 0.0, "row {i} not monotone");
            }
        }
    }

    #[test]
    fn amplitude_only_mode_detects_too() {
        let scene = scene(15.0, 19);
        let result = detect(&scene.amplitude, None, &spec(), &DetectorConfig::default());
        assert!(result.accepted(), "rejected: {:?}", result.reject_reason);
    }

    #[test]
    fn ransac_method_also_detects() {
        let scene = scene(30.0, 23);
        let cfg = DetectorConfig {
            method: Method::Ransac,
            ..config_with_depth()
        };
        let result = detect(&scene.amplitude, scene.depth.as_ref(), &spec(), &cfg);
        assert!(result.accepted(), "rejected: {:?}", result.reject_reason);
        let err = worst_vertex_error(result.vertices.as_ref().unwrap(), &scene.truth);
        assert!(err < 0.5, "worst vertex error {err}");
    }

    #[test]
    fn flat_image_rejects_cleanly() {
        let flat = AmplitudeImage::from_fn(64, 48, |_, _| 100.0);
        let result = detect(&flat, None, &spec(), &DetectorConfig::default());
        assert!(!result.accepted());
    }

    #[test]
    #[should_panic(expected = "invalid detector configuration")]
    fn invalid_config_panics() {
        let flat = AmplitudeImage::from_fn(8, 8, |_, _| 1.0);
        let cfg = DetectorConfig { interval_threshold: 0.0, ..DetectorConfig::default() };
        let _ = detect(&flat, None, &spec(), &cfg);
    }
}
