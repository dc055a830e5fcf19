//! Homogeneous image geometry: points, lines, line pencils, and the vertex
//! lattice of the calibration grid.

use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Shape of the calibration pattern, counted in internal grid lines.
///
/// A board of `(rows+1) x (cols+1)` squares has `rows` lines in the smaller
/// pencil and `cols` in the larger, meeting at `rows * cols` internal
/// vertices. `rows < cols` is required: the pencil/label correspondence is
/// resolved by peak counts, which is ambiguous for square grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self, GeometryError> {
        if rows < 2 || cols < 2 || rows >= cols {
            return Err(GeometryError::BadGridSpec { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vertex_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Homogeneous image point `(x, y, w)`; the pixel position is `(x/w, y/w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomPoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl HomPoint {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Self { x, y, w }
    }

    pub fn from_pixel(x: f64, y: f64) -> Self {
        Self { x, y, w: 1.0 }
    }

    /// `None` for points at (or numerically indistinguishable from) infinity.
    pub fn dehomogenize(&self) -> Option<(f64, f64)> {
        let scale = math::hypot(math::hypot(self.x, self.y), self.w);
        if self.w.abs() <= 1e-12 * scale {
            return None;
        }
        Some((self.x / self.w, self.y / self.w))
    }

    pub fn is_at_infinity(&self) -> bool {
        self.dehomogenize().is_none()
    }
}

/// Homogeneous line `(a, b, c)`: a point `p` lies on the line iff the dot
/// product of the coefficients with `(x, y, w)` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HomLine {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn dot(&self, p: &HomPoint) -> f64 {
        self.a * p.x + self.b * p.y + self.c * p.w
    }

    /// Signed distance residual for an inhomogeneous pixel point, after
    /// scaling the line so the normal `(a, b)` is unit length.
    pub fn pixel_residual(&self, x: f64, y: f64) -> f64 {
        let norm = math::hypot(self.a, self.b);
        (self.a * x + self.b * y + self.c) / norm
    }

    /// Scales the coefficients so `a^2 + b^2 = 1` with a deterministic sign
    /// (first nonzero of `(a, b)` positive).
    pub fn normalized(&self) -> HomLine {
        let norm = math::hypot(self.a, self.b);
        let sign = if self.a != 0.0 {
            self.a.signum()
        } else {
            self.b.signum()
        };
        let k = sign / norm;
        HomLine::new(self.a * k, self.b * k, self.c * k)
    }
}

/// Intersection of two lines via the cross product of their coefficients.
///
/// The `w` component of the result is zero exactly when the lines are
/// parallel. Lines identical up to scale have no unique intersection and
/// yield an error.
pub fn line_intersect(first: &HomLine, second: &HomLine) -> Result<HomPoint, GeometryError> {
    let p = HomPoint::new(
        first.b * second.c - first.c * second.b,
        first.c * second.a - first.a * second.c,
        first.a * second.b - first.b * second.a,
    );
    let scale = math::hypot(first.a, math::hypot(first.b, first.c))
        * math::hypot(second.a, math::hypot(second.b, second.c));
    if math::hypot(p.x, math::hypot(p.y, p.w)) <= 1e-12 * scale {
        return Err(GeometryError::IdenticalLines);
    }
    Ok(p)
}

/// An ordered set of lines through a common apex (the vanishing point of a
/// family of parallel scene lines, possibly at infinity in the image).
#[derive(Clone, Debug)]
pub struct Pencil {
    pub lines: Vec<HomLine>,
    pub apex: HomPoint,
}

impl Pencil {
    /// Builds a pencil from ordered lines, taking the apex from the first
    /// and last members.
    pub fn from_lines(lines: Vec<HomLine>) -> Result<Self, GeometryError> {
        if lines.len() < 2 {
            return Err(GeometryError::TooFewLines(lines.len()));
        }
        let apex = line_intersect(&lines[0], &lines[lines.len() - 1])?;
        Ok(Self { lines, apex })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Largest apex incidence residual over all member lines, with each
    /// line unit-normalized; a concurrency check for tests.
    pub fn max_apex_residual(&self) -> f64 {
        match self.apex.dehomogenize() {
            Some((x, y)) => self
                .lines
                .iter()
                .map(|l| l.pixel_residual(x, y).abs())
                .fold(0.0, f64::max),
            // Apex at infinity: all lines must share the direction.
            None => self
                .lines
                .iter()
                .map(|l| {
                    let n = math::hypot(l.a, l.b);
                    ((l.a * self.apex.x + l.b * self.apex.y)
                        / (n * math::hypot(self.apex.x, self.apex.y)))
                    .abs()
                })
                .fold(0.0, f64::max),
        }
    }
}

/// Complete `rows x cols` lattice of inhomogeneous vertex positions, in
/// pixels, indexed `(i, j)` from zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexGrid {
    rows: usize,
    cols: usize,
    points: Vec<(f64, f64)>,
}

impl VertexGrid {
    pub fn from_points(rows: usize, cols: usize, points: Vec<(f64, f64)>) -> Self {
        assert_eq!(points.len(), rows * cols, "incomplete vertex lattice");
        Self { rows, cols, points }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        self.points[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: (f64, f64)) {
        self.points[i * self.cols + j] = p;
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, (f64, f64))> + '_ {
        let cols = self.cols;
        self.points
            .iter()
            .enumerate()
            .map(move |(k, &p)| (k / cols, k % cols, p))
    }

    pub fn row_points(&self, i: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.cols).map(move |j| self.get(i, j))
    }

    pub fn col_points(&self, j: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.rows).map(move |i| self.get(i, j))
    }

    /// Worst perpendicular deviation of any vertex from the straight line
    /// through the end points of its row or column.
    pub fn max_collinearity_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut lines = Vec::new();
        for i in 0..self.rows {
            lines.push((self.get(i, 0), self.get(i, self.cols - 1), true, i));
        }
        for j in 0..self.cols {
            lines.push((self.get(0, j), self.get(self.rows - 1, j), false, j));
        }
        for (a, b, is_row, idx) in lines {
            let len = math::hypot(b.0 - a.0, b.1 - a.1);
            if len == 0.0 {
                continue;
            }
            let n = ((b.1 - a.1) / len, -(b.0 - a.0) / len);
            let count = if is_row { self.cols } else { self.rows };
            for k in 0..count {
                let p = if is_row { self.get(idx, k) } else { self.get(k, idx) };
                worst = worst.max(((p.0 - a.0) * n.0 + (p.1 - a.1) * n.1).abs());
            }
        }
        worst
    }
}

/// Canonical model lattice: unit-spaced, centred at the origin, so that the
/// vertex `(i, j)` (zero-based) sits at
/// `(j + 1 - (cols+1)/2, i + 1 - (rows+1)/2)`.
///
/// Physical square size is irrelevant because geometric error is always
/// measured after a homography fit.
pub fn ideal_grid(spec: &GridSpec) -> VertexGrid {
    let rows = spec.rows();
    let cols = spec.cols();
    let cx = (cols as f64 + 1.0) / 2.0;
    let cy = (rows as f64 + 1.0) / 2.0;
    let mut points = Vec::with_capacity(rows * cols);
    for i in 1..=rows {
        for j in 1..=cols {
            points.push((j as f64 - cx, i as f64 - cy));
        }
    }
    VertexGrid::from_points(rows, cols, points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryError {
    BadGridSpec { rows: usize, cols: usize },
    IdenticalLines,
    TooFewLines(usize),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::BadGridSpec { rows, cols } => write!(
                f,
                "invalid grid spec {rows}x{cols}: need rows >= 2, cols >= 2, rows < cols \
                 (square grids make the pencil correspondence ambiguous)"
            ),
            GeometryError::IdenticalLines => {
                write!(f, "lines are identical up to scale; no unique intersection")
            }
            GeometryError::TooFewLines(n) => write!(f, "a pencil needs >= 2 lines, got {n}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}
