//! Sweep-line analysis of the Hough accumulators.
//!
//! A pencil of image lines appears in its accumulator as a collinear set of
//! peaks, so the whole pencil is found at once by sweeping a line with
//! integer endpoints `(0, s)` and `(u_max, t)` across the array and scoring
//! the runs of above-threshold samples along it. The endpoint grid samples
//! slope most densely near zero, exactly where the local frame puts the
//! peaks, so no sub-bin endpoint refinement is needed.

use alloc::vec::Vec;
use core::fmt;

use crate::cluster::Family;
use crate::frame::LocalFrame;
use crate::geometry::{line_intersect, GeometryError, Pencil, VertexGrid};
use crate::hough::{line_from_hough_bins, HoughArray, HoughGeometry};
use crate::math;

/// A 1-D slice through the accumulator between `(0, s)` and `(u_max, t)`,
/// sampled bilinearly at unit arc-length spacing.
#[derive(Clone, Debug)]
pub struct SweepHistogram {
    pub s: usize,
    pub t: usize,
    /// Euclidean length of the sweep segment.
    pub length: f64,
    pub samples: Vec<f64>,
}

pub fn sweep_histogram(array: &HoughArray, s: usize, t: usize) -> SweepHistogram {
    let v_max = array.geometry().v_max();
    assert!(s <= v_max && t <= v_max, "sweep endpoint outside the array");
    let mut samples = Vec::new();
    let length = sample_sweep_into(array, s, t, &mut samples);
    SweepHistogram { s, t, length, samples }
}

/// Fast path reusing the sample buffer; returns the sweep length.
fn sample_sweep_into(array: &HoughArray, s: usize, t: usize, out: &mut Vec<f64>) -> f64 {
    let geom = array.geometry();
    let u_max = geom.u_max() as f64;
    let rise = t as f64 - s as f64;
    let length = math::hypot(u_max, rise);
    let count = math::floor(length) as usize + 1;
    out.clear();
    out.reserve(count);
    let (du, dv) = (u_max / length, rise / length);
    for w in 0..count {
        let w = w as f64;
        out.push(array.sample(w * du, s as f64 + w * dv));
    }
    length
}

/// A maximal run of above-threshold sweep samples: one candidate line.
///
/// `score` is the mean sample value over the run and `centroid` the
/// mass-weighted fractional index, measured from the start of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterRun {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub centroid: f64,
}

pub fn find_runs(samples: &[f64], threshold: f64) -> Vec<ClusterRun> {
    let mut runs = Vec::new();
    find_runs_into(samples, threshold, &mut runs);
    runs
}

fn find_runs_into(samples: &[f64], threshold: f64, out: &mut Vec<ClusterRun>) {
    out.clear();
    let mut w = 0;
    while w < samples.len() {
        if samples[w] <= threshold {
            w += 1;
            continue;
        }
        let start = w;
        let mut mass = 0.0;
        let mut first_moment = 0.0;
        while w < samples.len() && samples[w] > threshold {
            mass += samples[w];
            first_moment += samples[w] * (w - start) as f64;
            w += 1;
        }
        let end = w - 1;
        out.push(ClusterRun {
            start,
            end,
            score: mass / (1 + end - start) as f64,
            centroid: start as f64 + first_moment / mass,
        });
    }
}

/// Sum of the `n` highest run scores, or zero when fewer than `n` runs
/// exist (such a sweep cannot be a solution).
pub fn total_score(runs: &[ClusterRun], n: usize) -> f64 {
    assert!(n >= 1);
    if runs.len() < n {
        return 0.0;
    }
    let mut scores: Vec<f64> = runs.iter().map(|r| r.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).expect("non-finite score"));
    scores[..n].iter().sum()
}

/// The winning sweep for one accumulator and one peak count.
#[derive(Clone, Debug)]
pub struct SweepScore {
    pub s: usize,
    pub t: usize,
    pub total: f64,
    /// The `n` retained runs, sorted by centroid so downstream line
    /// indexing is monotone along the sweep.
    pub runs: Vec<ClusterRun>,
    /// Sweep length, kept for centroid-to-position interpolation.
    pub length: f64,
}

impl SweepScore {
    /// Accumulator positions `(u, v)` (bin coordinates) of the retained
    /// run centroids, interpolated along the sweep segment.
    pub fn hough_points(&self, geom: &HoughGeometry) -> Vec<(f64, f64)> {
        let u_max = geom.u_max() as f64;
        let rise = self.t as f64 - self.s as f64;
        self.runs
            .iter()
            .map(|r| {
                let frac = r.centroid / self.length;
                (u_max * frac, self.s as f64 + rise * frac)
            })
            .collect()
    }
}

/// Exhaustively searches integer endpoints `(s, t)` for the sweep whose
/// `n` best runs have the highest total score.
///
/// The run threshold is `threshold_fraction * max(h)` per sweep; bilinear
/// splatting leaves a low smear that would otherwise bridge true gaps.
/// Ties prefer central, then lexicographically smaller endpoints.
pub fn best_sweep(
    array: &HoughArray,
    n: usize,
    threshold_fraction: f64,
) -> Result<SweepScore, SweepError> {
    let (result, _) = best_sweep_pair(array, n, n, threshold_fraction);
    result
}

/// Runs the exhaustive endpoint search once while scoring two peak counts,
/// sharing the per-sweep sampling and run-finding between them.
pub fn best_sweep_pair(
    array: &HoughArray,
    n_first: usize,
    n_second: usize,
    threshold_fraction: f64,
) -> (Result<SweepScore, SweepError>, Result<SweepScore, SweepError>) {
    assert!(n_first >= 1 && n_second >= 1);
    let v_max = array.geometry().v_max();
    let mut samples = Vec::new();
    let mut runs = Vec::new();
    let mut best: [Option<SweepScore>; 2] = [None, None];

    for s in 0..=v_max {
        for t in 0..=v_max {
            let length = sample_sweep_into(array, s, t, &mut samples);
            let peak = samples.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                continue;
            }
            find_runs_into(&samples, threshold_fraction * peak, &mut runs);
            for (slot, &n) in [n_first, n_second].iter().enumerate() {
                let total = total_score(&runs, n);
                if total <= 0.0 {
                    continue;
                }
                let incumbent = &best[slot];
                let improves = match incumbent {
                    None => true,
                    Some(b) => {
                        total > b.total
                            || (total == b.total && tie_key(s, t, v_max) < tie_key(b.s, b.t, v_max))
                    }
                };
                if improves {
                    best[slot] = Some(SweepScore {
                        s,
                        t,
                        total,
                        runs: retain_top_runs(&runs, n),
                        length,
                    });
                }
            }
        }
    }

    let [first, second] = best;
    (
        first.ok_or(SweepError::NoPencil),
        second.ok_or(SweepError::NoPencil),
    )
}

/// Central-first tie key: distance of both endpoints from the midline,
/// then the endpoints themselves.
fn tie_key(s: usize, t: usize, v_max: usize) -> (usize, usize, usize) {
    let d = |e: usize| (2 * e).abs_diff(v_max);
    (d(s) + d(t), s, t)
}

/// The `n` highest-scoring runs, re-sorted by centroid.
fn retain_top_runs(runs: &[ClusterRun], n: usize) -> Vec<ClusterRun> {
    debug_assert!(runs.len() >= n);
    let mut by_score: Vec<&ClusterRun> = runs.iter().collect();
    by_score.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("non-finite score")
            .then(a.start.cmp(&b.start))
    });
    let mut retained: Vec<ClusterRun> = by_score[..n].iter().map(|r| **r).collect();
    retained.sort_by(|a, b| a.centroid.partial_cmp(&b.centroid).expect("non-finite centroid"));
    retained
}

/// Which accumulator family holds the smaller (`rows`) pencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correspondence {
    RowsFromX,
    RowsFromY,
}

/// Resolves the pencil/family correspondence from the four sweep totals by
/// picking the pairing with the higher combined score. A tie falls to
/// `RowsFromY`, and two zero sums mean no pencil was found at all.
pub fn resolve_pencils(
    rows_from_x: f64,
    cols_from_y: f64,
    rows_from_y: f64,
    cols_from_x: f64,
) -> Result<Correspondence, SweepError> {
    let straight = rows_from_x + cols_from_y;
    let swapped = rows_from_y + cols_from_x;
    if straight <= 0.0 && swapped <= 0.0 {
        return Err(SweepError::NoPencil);
    }
    if straight > swapped {
        Ok(Correspondence::RowsFromX)
    } else {
        Ok(Correspondence::RowsFromY)
    }
}

/// Maps the retained runs of a winning sweep to image-space lines, ordered
/// by centroid so the grid indexing is automatically consistent.
pub fn pencil_lines(
    choice: &SweepScore,
    geom: &HoughGeometry,
    family: Family,
    frame: &LocalFrame,
) -> Result<Pencil, SweepError> {
    let lines: Vec<_> = choice
        .hough_points(geom)
        .into_iter()
        .map(|(u, v)| frame.line_to_image(&line_from_hough_bins(geom, family, u, v)))
        .collect();
    Pencil::from_lines(lines).map_err(SweepError::Geometry)
}

/// Intersects every row line with every column line and dehomogenizes.
///
/// Vertices at infinity, or outside twice the image bounding box (the
/// image box scaled by two about its centre), indicate a geometrically
/// inconsistent solution and fail the construction.
pub fn grid_vertices(
    rows: &Pencil,
    cols: &Pencil,
    image_size: (usize, usize),
) -> Result<VertexGrid, SweepError> {
    let (width, height) = (image_size.0 as f64, image_size.1 as f64);
    let (x_lo, x_hi) = (-width / 2.0, 1.5 * width);
    let (y_lo, y_hi) = (-height / 2.0, 1.5 * height);
    let mut points = Vec::with_capacity(rows.len() * cols.len());
    for row_line in &rows.lines {
        for col_line in &cols.lines {
            let p = line_intersect(row_line, col_line).map_err(SweepError::Geometry)?;
            let (x, y) = p.dehomogenize().ok_or(SweepError::VertexAtInfinity)?;
            if !(x_lo..=x_hi).contains(&x) || !(y_lo..=y_hi).contains(&y) {
                return Err(SweepError::VertexOutOfBounds { x, y });
            }
            points.push((x, y));
        }
    }
    Ok(VertexGrid::from_points(rows.len(), cols.len(), points))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepError {
    NoPencil,
    VertexAtInfinity,
    VertexOutOfBounds { x: f64, y: f64 },
    Geometry(GeometryError),
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepError::NoPencil => write!(f, "no sweep with the required peak count"),
            SweepError::VertexAtInfinity => write!(f, "grid vertex at infinity"),
            SweepError::VertexOutOfBounds { x, y } => {
                write!(f, "grid vertex ({x:.1}, {y:.1}) far outside the image")
            }
            SweepError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SweepError {}
