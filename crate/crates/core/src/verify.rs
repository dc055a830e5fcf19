//! Geometric acceptance tests and subpixel refinement.
//!
//! The sweep returns a best-effort solution even when no board is visible,
//! so candidate grids are vetted with two tests that use constraints *not*
//! consumed by the estimation itself: adjacent line spacing must be near
//! uniform in ratio (a corrupted solution has at least one line off the
//! pattern), and walking along each line must cross black/white and
//! white/black transitions in balance (a displaced solution runs along the
//! pattern perimeter, where the black squares sit on one side only).

use core::fmt;

use crate::geometry::{HomLine, VertexGrid};
use crate::math;
use crate::preprocess::GradientField;

/// How gradients are sampled at fractional positions during the
/// transition-ratio walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientSampling {
    Bilinear,
    /// Nearest-pixel lookup, for exact-reproduction experiments.
    Nearest,
}

impl GradientSampling {
    fn sample(self, grads: &GradientField, x: f64, y: f64) -> (f64, f64) {
        match self {
            GradientSampling::Bilinear => grads.sample_bilinear(x, y),
            GradientSampling::Nearest => grads.sample_nearest(x, y),
        }
    }
}

/// Outcome of the acceptance tests on one candidate grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    /// Largest `|1 - F|` seen across the interval-ratio tests.
    pub worst_interval_deviation: f64,
    /// Largest `|1 - G|` seen across the transition-ratio tests.
    pub worst_transition_deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictReason {
    Ok,
    Corrupted,
    Displaced,
}

impl fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerdictReason::Ok => write!(f, "ok"),
            VerdictReason::Corrupted => write!(f, "corrupted"),
            VerdictReason::Displaced => write!(f, "displaced"),
        }
    }
}

/// Ratio of the vertex intervals starting at positions `j` and `k` along
/// row `i` (all zero-based). `None` marks a zero-length denominator, which
/// immediately condemns the grid as corrupted.
pub fn interval_ratio(grid: &VertexGrid, i: usize, j: usize, k: usize) -> Option<f64> {
    debug_assert!(j < grid.cols() - 1 && k < grid.cols() - 1 && j != k);
    let seg = |a: (f64, f64), b: (f64, f64)| math::hypot(b.0 - a.0, b.1 - a.1);
    let num = seg(grid.get(i, j), grid.get(i, j + 1));
    let den = seg(grid.get(i, k), grid.get(i, k + 1));
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

/// Interval-ratio test: `|1 - F| <= threshold` for every ordered pair of
/// intervals along the first and last line of each pencil.
///
/// Ratios of collinear segment lengths are affine-invariant, so a
/// projectively imaged regular grid passes with a small threshold unless
/// the board is so foreshortened that it could not be resolved anyway.
pub fn corrupted_test(grid: &VertexGrid, threshold: f64) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    let mut check = |ratio: Option<f64>| -> bool {
        match ratio {
            None => {
                worst = f64::INFINITY;
                false
            }
            Some(f) => {
                worst = worst.max((1.0 - f).abs());
                (1.0 - f).abs() <= threshold
            }
        }
    };

    let mut pass = true;
    // Rows: intervals indexed 0..cols-1 along the first and last row.
    for i in [0, grid.rows() - 1] {
        for j in 0..grid.cols() - 1 {
            for k in 0..grid.cols() - 1 {
                if j != k {
                    pass &= check(interval_ratio(grid, i, j, k));
                }
            }
        }
    }
    // Columns: the transposed view of the same test.
    let seg = |a: (f64, f64), b: (f64, f64)| math::hypot(b.0 - a.0, b.1 - a.1);
    for j in [0, grid.cols() - 1] {
        for a in 0..grid.rows() - 1 {
            for b in 0..grid.rows() - 1 {
                if a != b {
                    let num = seg(grid.get(a, j), grid.get(a + 1, j));
                    let den = seg(grid.get(b, j), grid.get(b + 1, j));
                    pass &= check(if den == 0.0 { None } else { Some(num / den) });
                }
            }
        }
    }
    (pass, worst)
}

/// Ratio of summed positive to summed negative gradient projections along
/// the segment from `a` to `b`, against the unit normal of `line`.
///
/// Walks `floor(d) + 1` evenly spaced positions (`d` the segment length).
/// Returns infinity when the negative sum vanishes, e.g. along the pattern
/// perimeter where one transition polarity is missing; that sentinel always
/// fails the displaced test.
pub fn transition_ratio(
    line: &HomLine,
    a: (f64, f64),
    b: (f64, f64),
    grads: &GradientField,
    sampling: GradientSampling,
) -> f64 {
    let line = line.normalized();
    let d = math::hypot(b.0 - a.0, b.1 - a.1);
    let count = math::floor(d) as usize + 1;
    let (mut pos, mut neg) = (0.0, 0.0);
    for k in 0..count {
        let frac = if d > 0.0 { k as f64 / d } else { 0.0 };
        let x = a.0 + frac * (b.0 - a.0);
        let y = a.1 + frac * (b.1 - a.1);
        let (gx, gy) = sampling.sample(grads, x, y);
        let p = line.a * gx + line.b * gy;
        if p > 0.0 {
            pos += p;
        } else {
            neg += -p;
        }
    }
    if neg == 0.0 {
        return f64::INFINITY;
    }
    pos / neg
}

/// Transition-ratio test over every row segment (between the first and
/// last vertex of each row line) and every column segment.
pub fn displaced_test(
    grid: &VertexGrid,
    row_lines: &[HomLine],
    col_lines: &[HomLine],
    grads: &GradientField,
    threshold: f64,
    sampling: GradientSampling,
) -> (bool, f64) {
    debug_assert_eq!(row_lines.len(), grid.rows());
    debug_assert_eq!(col_lines.len(), grid.cols());
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut check = |ratio: f64| {
        let deviation = if ratio.is_finite() {
            (1.0 - ratio).abs()
        } else {
            f64::INFINITY
        };
        worst = worst.max(deviation);
        pass &= deviation <= threshold;
    };
    for (i, line) in row_lines.iter().enumerate() {
        check(transition_ratio(
            line,
            grid.get(i, 0),
            grid.get(i, grid.cols() - 1),
            grads,
            sampling,
        ));
    }
    for (j, line) in col_lines.iter().enumerate() {
        check(transition_ratio(
            line,
            grid.get(0, j),
            grid.get(grid.rows() - 1, j),
            grads,
            sampling,
        ));
    }
    (pass, worst)
}

/// Runs both acceptance tests and folds the outcomes into a verdict.
pub fn verdict(
    grid: &VertexGrid,
    row_lines: &[HomLine],
    col_lines: &[HomLine],
    grads: &GradientField,
    interval_threshold: f64,
    transition_threshold: f64,
    sampling: GradientSampling,
) -> Verdict {
    let (interval_ok, worst_interval) = corrupted_test(grid, interval_threshold);
    if !interval_ok {
        return Verdict {
            accepted: false,
            reason: VerdictReason::Corrupted,
            worst_interval_deviation: worst_interval,
            worst_transition_deviation: 0.0,
        };
    }
    let (transition_ok, worst_transition) =
        displaced_test(grid, row_lines, col_lines, grads, transition_threshold, sampling);
    Verdict {
        accepted: transition_ok,
        reason: if transition_ok {
            VerdictReason::Ok
        } else {
            VerdictReason::Displaced
        },
        worst_interval_deviation: worst_interval,
        worst_transition_deviation: worst_transition,
    }
}

/// Result of one subpixel refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    pub position: (f64, f64),
    /// False when the normal matrix was too ill-conditioned (or the window
    /// left the image) and the input was returned unchanged.
    pub refined: bool,
    /// True when the last update was smaller than the tolerance.
    pub converged: bool,
}

/// Condition-number limit for the 2x2 normal matrix.
const MAX_CONDITION: f64 = 1e8;

/// Iterative gradient-orthogonality refinement of a vertex.
///
/// Every strong gradient near a chequer corner lies on an edge through the
/// corner, so the displacement from the true corner is orthogonal to it.
/// Each step solves the weighted least-squares system
/// `sum(g g^T) x = sum(g g^T p)` over the integer pixels within Chebyshev
/// distance `half_width` of the current estimate, and stops once the update
/// drops below `tolerance` or the iteration budget is spent.
pub fn subpixel_refine(
    vertex: (f64, f64),
    grads: &GradientField,
    half_width: usize,
    max_iter: usize,
    tolerance: f64,
) -> Refined {
    assert!(half_width >= 2, "refinement window must span the corner");
    let hw = half_width as f64;
    let mut current = vertex;
    for iteration in 0..max_iter {
        let x_lo = math::ceil(current.0 - hw);
        let y_lo = math::ceil(current.1 - hw);
        let x_hi = math::floor(current.0 + hw);
        let y_hi = math::floor(current.1 + hw);
        if x_lo < 0.0
            || y_lo < 0.0
            || x_hi >= grads.width() as f64
            || y_hi >= grads.height() as f64
        {
            return Refined { position: vertex, refined: false, converged: false };
        }
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        let (mut bx, mut by) = (0.0, 0.0);
        let mut y = y_lo;
        while y <= y_hi {
            let mut x = x_lo;
            while x <= x_hi {
                let (gx, gy) = grads.get(x as usize, y as usize);
                sxx += gx * gx;
                sxy += gx * gy;
                syy += gy * gy;
                bx += (gx * gx) * x + (gx * gy) * y;
                by += (gx * gy) * x + (gy * gy) * y;
                x += 1.0;
            }
            y += 1.0;
        }
        // Closed-form condition number of the symmetric 2x2 system.
        let half_trace = (sxx + syy) / 2.0;
        let half_gap = math::hypot((sxx - syy) / 2.0, sxy);
        let (lo, hi) = (half_trace - half_gap, half_trace + half_gap);
        if !(hi > 0.0) || lo <= 0.0 || hi / lo > MAX_CONDITION {
            return Refined { position: vertex, refined: false, converged: false };
        }
        let det = sxx * syy - sxy * sxy;
        let next = (
            (syy * bx - sxy * by) / det,
            (sxx * by - sxy * bx) / det,
        );
        let step = math::hypot(next.0 - current.0, next.1 - current.1);
        current = next;
        if step < tolerance {
            return Refined { position: current, refined: true, converged: true };
        }
        let _ = iteration;
    }
    Refined { position: current, refined: true, converged: false }
}
