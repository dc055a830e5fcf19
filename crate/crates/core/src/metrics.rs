//! Accuracy metrics: the optimal homography between the ideal grid and a
//! detected vertex set (normalized DLT initialization, Levenberg-Marquardt
//! refinement), the resulting RMS geometric error, and the RMS
//! gradient-orthogonality (photometric) residual around each vertex.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geometry::VertexGrid;
use crate::linalg::{self, Mat3};
use crate::math;
use crate::preprocess::GradientField;

/// A plane projective transform, Frobenius-normalized with a positive
/// bottom-right entry whenever that entry is nonzero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Mat3);

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self, FitError> {
        let mat = Mat3(m);
        if mat.det().abs() < 1e-300 || !mat.0.iter().flatten().all(|v| v.is_finite()) {
            return Err(FitError::Singular);
        }
        Ok(Self::normalized(mat))
    }

    pub fn identity() -> Self {
        Self::normalized(Mat3::IDENTITY)
    }

    fn normalized(m: Mat3) -> Self {
        let norm = m.frobenius_norm();
        let mut scaled = m.scale(1.0 / norm);
        let pivot = scaled.0[2][2];
        if pivot < 0.0 || (pivot == 0.0 && first_nonzero(&scaled) < 0.0) {
            scaled = scaled.scale(-1.0);
        }
        Self(scaled)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.0 .0
    }

    pub fn from_mat3(m: Mat3) -> Result<Self, FitError> {
        Self::new(m.0)
    }

    pub(crate) fn mat3(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Result<Homography, FitError> {
        let inv = self.0.inverse().ok_or(FitError::Singular)?;
        Ok(Self::normalized(inv))
    }

    pub fn compose(&self, inner: &Homography) -> Result<Homography, FitError> {
        Homography::from_mat3(self.0.mul(&inner.0))
    }

    /// Projects an inhomogeneous point; `None` when it maps to infinity.
    pub fn project(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let v = self.0.apply([p.0, p.1, 1.0]);
        if v[2].abs() <= 1e-15 * math::hypot(v[0], v[1]).max(1e-300) {
            return None;
        }
        Some((v[0] / v[2], v[1] / v[2]))
    }

    /// Projects a whole grid, preserving indexing.
    pub fn project_grid(&self, grid: &VertexGrid) -> Option<VertexGrid> {
        let mut points = Vec::with_capacity(grid.points().len());
        for &p in grid.points() {
            points.push(self.project(p)?);
        }
        Some(VertexGrid::from_points(grid.rows(), grid.cols(), points))
    }
}

fn first_nonzero(m: &Mat3) -> f64 {
    m.0.iter()
        .flatten()
        .copied()
        .find(|v| *v != 0.0)
        .unwrap_or(0.0)
}

/// Similarity that translates a point set's centroid to the origin and
/// scales its mean radius to sqrt(2); the standard DLT conditioning step.
fn normalizing_similarity(points: &[(f64, f64)]) -> Result<Mat3, FitError> {
    let n = points.len() as f64;
    let (cx, cy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.0, sy + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean_radius =
        points.iter().map(|p| math::hypot(p.0 - cx, p.1 - cy)).sum::<f64>() / n;
    if mean_radius <= 1e-12 {
        return Err(FitError::Degenerate);
    }
    let s = core::f64::consts::SQRT_2 / mean_radius;
    Ok(Mat3([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]]))
}

/// Direct linear transform estimate of the homography mapping `model`
/// points onto `observed` points.
///
/// Both sets are normalized isotropically, the stacked 2n x 9 system is
/// solved through the eigenvector of the smallest eigenvalue of its normal
/// matrix, and the result is denormalized. Needs four non-collinear
/// correspondences.
pub fn fit_dlt(model: &VertexGrid, observed: &VertexGrid) -> Result<Homography, FitError> {
    if model.rows() != observed.rows() || model.cols() != observed.cols() {
        return Err(FitError::ShapeMismatch);
    }
    if model.points().len() < 4 {
        return Err(FitError::Degenerate);
    }
    let t_model = normalizing_similarity(model.points())?;
    let t_obs = normalizing_similarity(observed.points())?;

    // Normal matrix A^T A of the stacked DLT constraints.
    let mut ata = [0.0f64; 81];
    for (&mp, &op) in model.points().iter().zip(observed.points()) {
        let m = t_model.apply([mp.0, mp.1, 1.0]);
        let o = t_obs.apply([op.0, op.1, 1.0]);
        let rows: [[f64; 9]; 2] = [
            [
                0.0, 0.0, 0.0,
                -o[2] * m[0], -o[2] * m[1], -o[2] * m[2],
                o[1] * m[0], o[1] * m[1], o[1] * m[2],
            ],
            [
                o[2] * m[0], o[2] * m[1], o[2] * m[2],
                0.0, 0.0, 0.0,
                -o[0] * m[0], -o[0] * m[1], -o[0] * m[2],
            ],
        ];
        for row in rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[i * 9 + j] += row[i] * row[j];
                }
            }
        }
    }

    let (values, vectors) = linalg::symmetric_eigen(&ata, 9);
    // Two vanishing eigenvalues mean the correspondences do not pin down a
    // homography (e.g. collinear points).
    let scale = values[0].max(1e-300);
    if values[7] <= 1e-12 * scale {
        return Err(FitError::Degenerate);
    }
    let h = &vectors[8];
    let normalized = Mat3([
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], h[8]],
    ]);
    let denorm = t_obs
        .inverse()
        .ok_or(FitError::Singular)?
        .mul(&normalized)
        .mul(&t_model);
    Homography::from_mat3(denorm)
}

/// Outcome of the Levenberg-Marquardt refinement.
#[derive(Clone, Debug)]
pub struct LmResult {
    pub homography: Homography,
    /// Final sum of squared reprojection residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Set when a non-finite cost forced an early return of the best
    /// iterate seen so far.
    pub diverged: bool,
}

const LM_MAX_ITER: usize = 100;
const LM_TOL: f64 = 1e-12;

fn reprojection_cost(h: &Homography, model: &VertexGrid, observed: &VertexGrid) -> f64 {
    let mut cost = 0.0;
    for (&mp, &op) in model.points().iter().zip(observed.points()) {
        match h.project(mp) {
            Some(p) => {
                let (dx, dy) = (op.0 - p.0, op.1 - p.1);
                cost += dx * dx + dy * dy;
            }
            None => return f64::INFINITY,
        }
    }
    cost
}

/// Levenberg-Marquardt refinement of a homography over all vertex
/// correspondences, minimizing the summed squared reprojection error.
///
/// The homography is parameterized by its nine entries and re-normalized
/// after every accepted step to remove the gauge freedom. The cost is
/// non-increasing: a step is only taken when it lowers the cost, so the
/// result is never worse than the input.
pub fn refine_lm(initial: &Homography, model: &VertexGrid, observed: &VertexGrid) -> LmResult {
    let mut h = *initial;
    let mut cost = reprojection_cost(&h, model, observed);
    if !cost.is_finite() {
        return LmResult { homography: h, cost, iterations: 0, diverged: true };
    }
    let mut damping = 1e-3;
    let mut iterations = 0;

    for _ in 0..LM_MAX_ITER {
        iterations += 1;
        // Accumulate J^T J and J^T r for the 9-entry parameterization.
        let mut jtj = [0.0f64; 81];
        let mut jtr = [0.0f64; 9];
        let m = h.matrix();
        for (&mp, &op) in model.points().iter().zip(observed.points()) {
            let den = m[2][0] * mp.0 + m[2][1] * mp.1 + m[2][2];
            if den.abs() < 1e-15 {
                continue;
            }
            let px = (m[0][0] * mp.0 + m[0][1] * mp.1 + m[0][2]) / den;
            let py = (m[1][0] * mp.0 + m[1][1] * mp.1 + m[1][2]) / den;
            let (rx, ry) = (op.0 - px, op.1 - py);
            let basis = [mp.0, mp.1, 1.0];
            // d(px)/dh and d(py)/dh.
            let mut jx = [0.0f64; 9];
            let mut jy = [0.0f64; 9];
            for k in 0..3 {
                jx[k] = basis[k] / den;
                jy[3 + k] = basis[k] / den;
                jx[6 + k] = -px * basis[k] / den;
                jy[6 + k] = -py * basis[k] / den;
            }
            for i in 0..9 {
                for j in 0..9 {
                    jtj[i * 9 + j] += jx[i] * jx[j] + jy[i] * jy[j];
                }
                jtr[i] += jx[i] * rx + jy[i] * ry;
            }
        }

        let mut improved = false;
        for _attempt in 0..8 {
            let mut damped = jtj;
            for k in 0..9 {
                damped[k * 9 + k] += damping * (1.0 + jtj[k * 9 + k]);
            }
            let Some(step) = linalg::solve(&damped, &jtr, 9) else {
                damping *= 10.0;
                continue;
            };
            let mut entries = [[0.0f64; 3]; 3];
            for (k, e) in step.iter().enumerate() {
                entries[k / 3][k % 3] = m[k / 3][k % 3] + e;
            }
            let Ok(candidate) = Homography::new(entries) else {
                damping *= 10.0;
                continue;
            };
            let candidate_cost = reprojection_cost(&candidate, model, observed);
            if !candidate_cost.is_finite() {
                damping *= 10.0;
                continue;
            }
            if candidate_cost < cost {
                let step_norm = math::sqrt(step.iter().map(|s| s * s).sum());
                let relative_drop = (cost - candidate_cost) / cost.max(1e-300);
                h = candidate;
                cost = candidate_cost;
                damping = (damping * 0.1).max(1e-12);
                improved = true;
                if relative_drop < LM_TOL || step_norm < LM_TOL {
                    return LmResult { homography: h, cost, iterations, diverged: false };
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    LmResult { homography: h, cost, iterations, diverged: false }
}

/// DLT followed by LM: the optimal homography from model to observation.
pub fn fit_homography(model: &VertexGrid, observed: &VertexGrid) -> Result<LmResult, FitError> {
    let initial = fit_dlt(model, observed)?;
    Ok(refine_lm(&initial, model, observed))
}

/// RMS distance in pixels between the observed vertices and the optimal
/// homography projection of the model grid; the primary accuracy measure,
/// directly comparable with downstream calibration requirements.
pub fn geometric_error(model: &VertexGrid, observed: &VertexGrid) -> Result<f64, FitError> {
    let fit = fit_homography(model, observed)?;
    let n = model.points().len() as f64;
    Ok(math::sqrt(fit.cost / n))
}

/// RMS gradient-orthogonality residual over square windows centred on the
/// vertices (`window` must be odd).
///
/// For every pixel `p` in a window around vertex `v`, a strong gradient
/// means `p` lies on an edge through `v`, so `g . (p - v)` should vanish.
/// Gradients are normalized per window by their mean magnitude to make the
/// statistic contrast-invariant; windows without gradient contribute zero.
pub fn photometric_error(
    vertices: &[(f64, f64)],
    grads: &GradientField,
    window: usize,
) -> f64 {
    assert!(window % 2 == 1, "window must be odd");
    let hw = (window / 2) as isize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(vx, vy) in vertices {
        let cx = math::round(vx) as isize;
        let cy = math::round(vy) as isize;
        let mut mean_mag = 0.0;
        let mut values = vec![0.0f64; 0];
        for dy in -hw..=hw {
            for dx in -hw..=hw {
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || py < 0 || px >= grads.width() as isize || py >= grads.height() as isize
                {
                    continue;
                }
                let (gx, gy) = grads.get(px as usize, py as usize);
                mean_mag += math::hypot(gx, gy);
                values.push(gx * (px as f64 - vx) + gy * (py as f64 - vy));
            }
        }
        if values.is_empty() {
            continue;
        }
        mean_mag /= values.len() as f64;
        count += values.len();
        if mean_mag > 0.0 {
            sum += values.iter().map(|r| (r / mean_mag) * (r / mean_mag)).sum::<f64>();
        }
    }
    if count == 0 {
        return 0.0;
    }
    math::sqrt(sum / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitError {
    ShapeMismatch,
    Degenerate,
    Singular,
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::ShapeMismatch => write!(f, "model and observed grids differ in shape"),
            FitError::Degenerate => {
                write!(f, "correspondences do not determine a homography")
            }
            FitError::Singular => write!(f, "homography matrix is singular"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FitError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ideal_grid, GridSpec};
    use crate::math::SeededRng;
    use approx::assert_relative_eq;

    fn grid_4x5() -> VertexGrid {
        ideal_grid(&GridSpec::new(4, 5).unwrap())
    }

    /// Random homography with bounded perspective, guaranteed to keep the
    /// ideal grid finite and well-conditioned.
    pub(crate) fn random_homography(rng: &mut SeededRng) -> Homography {
        loop {
            let angle = rng.uniform_in(0.0, 2.0 * math::PI);
            let scale = rng.uniform_in(5.0, 20.0);
            let (c, s) = (math::cos(angle) * scale, math::sin(angle) * scale);
            let h = Homography::new([
                [c, -s, rng.uniform_in(40.0, 140.0)],
                [s, c, rng.uniform_in(40.0, 100.0)],
                [rng.uniform_in(-0.002, 0.002), rng.uniform_in(-0.002, 0.002), 1.0],
            ]);
            if let Ok(h) = h {
                return h;
            }
        }
    }

    fn relative_gap(a: &Homography, b: &Homography) -> f64 {
        // Both are Frobenius-normalized with fixed sign, so compare entries.
        let mut gap: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                gap = gap.max((a.matrix()[i][j] - b.matrix()[i][j]).abs());
            }
        }
        gap
    }

    #[test]
    fn dlt_identity_on_equal_grids() {
        let g = grid_4x5();
        let h = fit_dlt(&g, &g).unwrap();
        assert!(relative_gap(&h, &Homography::identity()) < 1e-10);
    }

    #[test]
    fn dlt_recovers_known_homography() {
        let mut rng = SeededRng::new(2);
        for _ in 0..50 {
            let truth = random_homography(&mut rng);
            let model = grid_4x5();
            let observed = truth.project_grid(&model).unwrap();
            let fitted = fit_dlt(&model, &observed).unwrap();
            assert!(
                relative_gap(&fitted, &truth) < 1e-8,
                "gap {}",
                relative_gap(&fitted, &truth)
            );
        }
    }

    #[test]
    fn dlt_rejects_collinear_points() {
        let model = VertexGrid::from_points(
            2,
            2,
            alloc::vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)],
        );
        let observed = VertexGrid::from_points(
            2,
            2,
            alloc::vec![(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0)],
        );
        assert!(matches!(fit_dlt(&model, &observed), Err(FitError::Degenerate)));
    }

    #[test]
    fn lm_keeps_exact_solution() {
        let mut rng = SeededRng::new(6);
        let truth = random_homography(&mut rng);
        let model = grid_4x5();
        let observed = truth.project_grid(&model).unwrap();
        let res = refine_lm(&truth, &model, &observed);
        assert!(res.cost < 1e-18);
        assert!(relative_gap(&res.homography, &truth) < 1e-9);
    }

    #[test]
    fn lm_never_exceeds_initial_cost() {
        let mut rng = SeededRng::new(13);
        for _ in 0..1000 {
            let truth = random_homography(&mut rng);
            let model = grid_4x5();
            let mut observed = truth.project_grid(&model).unwrap();
            for i in 0..observed.rows() {
                for j in 0..observed.cols() {
                    let p = observed.get(i, j);
                    observed.set(
                        i,
                        j,
                        (p.0 + rng.gaussian() * 0.3, p.1 + rng.gaussian() * 0.3),
                    );
                }
            }
            let initial = fit_dlt(&model, &observed).unwrap();
            let initial_cost = reprojection_cost(&initial, &model, &observed);
            let refined = refine_lm(&initial, &model, &observed);
            assert!(refined.cost <= initial_cost + 1e-12);
        }
    }

    #[test]
    fn noisy_fit_rms_matches_dof_corrected_noise() {
        // 20 vertices perturbed by 0.1 px RMS point displacement (so each
        // component gets 0.1/sqrt(2)): the fitted RMS absorbs 8 of the 40
        // residual dof, 0.1 * sqrt(1 - 8/40) = 0.0894 px.
        let sigma = 0.1 / core::f64::consts::SQRT_2;
        let mut rng = SeededRng::new(77);
        let model = grid_4x5();
        let truth = random_homography(&mut rng);
        let clean = truth.project_grid(&model).unwrap();
        let mut rms_sum = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let mut observed = clean.clone();
            for i in 0..observed.rows() {
                for j in 0..observed.cols() {
                    let p = observed.get(i, j);
                    observed.set(
                        i,
                        j,
                        (p.0 + rng.gaussian() * sigma, p.1 + rng.gaussian() * sigma),
                    );
                }
            }
            let rms = geometric_error(&model, &observed).unwrap();
            assert!(rms <= 0.11, "single-trial RMS {rms} above 0.11");
            rms_sum += rms;
        }
        let mean_rms = rms_sum / trials as f64;
        assert!(
            (0.07..=0.12).contains(&mean_rms),
            "mean RMS {mean_rms} outside [0.07, 0.12]"
        );
    }

    #[test]
    fn geometric_error_zero_on_projective_lattice() {
        let mut rng = SeededRng::new(91);
        for _ in 0..20 {
            let truth = random_homography(&mut rng);
            let model = grid_4x5();
            let observed = truth.project_grid(&model).unwrap();
            let err = geometric_error(&model, &observed).unwrap();
            assert!(err < 1e-9, "error {err}");
        }
    }

    #[test]
    fn geometric_error_similarity_invariant() {
        let mut rng = SeededRng::new(15);
        let model = grid_4x5();
        let truth = random_homography(&mut rng);
        let mut observed = truth.project_grid(&model).unwrap();
        // Perturb so the error is nonzero.
        for i in 0..observed.rows() {
            for j in 0..observed.cols() {
                let p = observed.get(i, j);
                observed.set(i, j, (p.0 + rng.gaussian() * 0.2, p.1 + rng.gaussian() * 0.2));
            }
        }
        let base = geometric_error(&model, &observed).unwrap();
        for _ in 0..10 {
            let angle = rng.uniform_in(0.0, 2.0 * math::PI);
            let scale = rng.uniform_in(0.5, 2.0);
            let (c, s) = (math::cos(angle) * scale, math::sin(angle) * scale);
            let t = (rng.uniform_in(-30.0, 30.0), rng.uniform_in(-30.0, 30.0));
            let transformed = VertexGrid::from_points(
                observed.rows(),
                observed.cols(),
                observed
                    .points()
                    .iter()
                    .map(|&(x, y)| (c * x - s * y + t.0, s * x + c * y + t.1))
                    .collect(),
            );
            let err = geometric_error(&model, &transformed).unwrap();
            // The optimal homography absorbs the similarity, but the
            // residual itself scales with it.
            assert_relative_eq!(err, base * scale, max_relative = 1e-5);
        }
    }

    #[test]
    fn photometric_error_zero_gradients() {
        let grads = GradientField::zero(20, 20);
        assert_eq!(photometric_error(&[(10.0, 10.0)], &grads, 5), 0.0);
    }

    #[test]
    fn photometric_error_translation_invariant() {
        let mut grads = GradientField::zero(30, 30);
        let mut rng = SeededRng::new(3);
        for y in 0..30 {
            for x in 0..30 {
                grads.set(x, y, (rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)));
            }
        }
        let base = photometric_error(&[(10.2, 11.7)], &grads, 5);
        // Shift the field and the vertex by the same whole-pixel offset.
        let mut shifted = GradientField::zero(30, 30);
        for y in 0..25 {
            for x in 0..25 {
                let g = grads.get(x, y);
                shifted.set(x + 5, y + 5, g);
            }
        }
        let moved = photometric_error(&[(15.2, 16.7)], &shifted, 5);
        assert_relative_eq!(base, moved, epsilon = 1e-9);
    }
}
