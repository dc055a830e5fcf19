//! Dual Cartesian Hough transform.
//!
//! Each labelled local-coordinate point maps to a line in an
//! intercept/slope accumulator: family `X` points vote for near-vertical
//! image lines `x = intercept + slope * y`, family `Y` for near-horizontal
//! ones with the coordinates swapped. Because the local frame bounds every
//! slope below 1 in magnitude, the whole transform fits a dense array, and
//! a pencil of image lines appears as a collinear set of peaks.
//!
//! Coordinates: `u` is horizontal, unit-spaced in intercept pixels, with
//! `u = u0 + intercept`. The vertical axis stores slope at a resolution of
//! `2 / v_max` per bin, so bin row `b` means slope `(b - v0) * 2 / v_max`
//! and the full height spans slopes in (-1, 1). Formulas written in "slope
//! coordinates" take `v` with `v - v0` equal to the slope itself.

use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::Family;
use crate::geometry::HomLine;
use crate::math;

/// Accumulator extents and the bin/slope mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HoughGeometry {
    u_max: usize,
    v_max: usize,
}

impl HoughGeometry {
    pub fn new(u_max: usize, v_max: usize) -> Self {
        assert!(u_max >= 2 && v_max >= 2, "degenerate accumulator size");
        Self { u_max, v_max }
    }

    /// Square geometry sized from the image: `round(scale * (w + h) / 2)`.
    pub fn for_image(width: usize, height: usize, scale: f64) -> Self {
        let side = math::round(scale * (width + height) as f64 / 2.0) as usize;
        Self::new(side, side)
    }

    pub fn u_max(&self) -> usize {
        self.u_max
    }

    pub fn v_max(&self) -> usize {
        self.v_max
    }

    pub fn u0(&self) -> f64 {
        self.u_max as f64 / 2.0
    }

    pub fn v0(&self) -> f64 {
        self.v_max as f64 / 2.0
    }

    /// Slope represented by one bin of v.
    pub fn slope_unit(&self) -> f64 {
        2.0 / self.v_max as f64
    }

    pub fn slope_of_bin(&self, bin: f64) -> f64 {
        (bin - self.v0()) * self.slope_unit()
    }

    pub fn bin_of_slope(&self, slope: f64) -> f64 {
        self.v0() + slope / self.slope_unit()
    }

    /// Slope-coordinate value of a bin row (`v0 + slope`).
    pub fn slope_coord_of_bin(&self, bin: f64) -> f64 {
        self.v0() + self.slope_of_bin(bin)
    }
}

/// The u-coordinate of the Hough line of local image point `(x, y)`, with
/// the sweep parameter `v` in slope coordinates (`v - v0` is the slope).
///
/// Family `Y` swaps the roles of x and y, so both transforms share one
/// formula and one characteristic structure.
pub fn hough_u(geom: &HoughGeometry, x: f64, y: f64, v: f64, family: Family) -> f64 {
    let (x, y) = match family {
        Family::X => (x, y),
        Family::Y => (y, x),
    };
    geom.u0() + x - y * (v - geom.v0())
}

/// Reconstructs a local-coordinate line from a Hough peak, with `v_star` in
/// slope coordinates.
///
/// A family-`X` peak maps to `x = intercept + slope * y`, written
/// homogeneously as `(-1, slope, intercept)`; family `Y` swaps to
/// `(slope, -1, intercept)`.
pub fn line_from_hough(geom: &HoughGeometry, family: Family, u_star: f64, v_star: f64) -> HomLine {
    let intercept = u_star - geom.u0();
    let slope = v_star - geom.v0();
    match family {
        Family::X => HomLine::new(-1.0, slope, intercept),
        Family::Y => HomLine::new(slope, -1.0, intercept),
    }
}

/// Same reconstruction, with the peak position given in bin coordinates as
/// recovered from a sweep.
pub fn line_from_hough_bins(
    geom: &HoughGeometry,
    family: Family,
    u_star: f64,
    v_star_bin: f64,
) -> HomLine {
    line_from_hough(geom, family, u_star, geom.slope_coord_of_bin(v_star_bin))
}

/// One accumulator; bins are `(u_max + 1) x (v_max + 1)`.
#[derive(Clone, Debug)]
pub struct HoughArray {
    geom: HoughGeometry,
    bins: Vec<f64>,
}

impl HoughArray {
    pub fn new(geom: HoughGeometry) -> Self {
        Self {
            geom,
            bins: vec![0.0; (geom.u_max + 1) * (geom.v_max + 1)],
        }
    }

    pub fn geometry(&self) -> &HoughGeometry {
        &self.geom
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.bins[v * (self.geom.u_max + 1) + u]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn scaled(&self, k: f64) -> HoughArray {
        HoughArray {
            geom: self.geom,
            bins: self.bins.iter().map(|b| b * k).collect(),
        }
    }

    /// Deposits unit mass at a fractional position over the four nearest
    /// bins (weights sum to one). Returns false, depositing nothing, when
    /// the position falls outside the array.
    pub fn splat(&mut self, u: f64, v: f64) -> bool {
        let (u_max, v_max) = (self.geom.u_max as f64, self.geom.v_max as f64);
        if !(0.0..=u_max).contains(&u) || !(0.0..=v_max).contains(&v) {
            return false;
        }
        let (i, fu) = split_index(u, self.geom.u_max);
        let (j, fv) = split_index(v, self.geom.v_max);
        let stride = self.geom.u_max + 1;
        self.bins[j * stride + i] += (1.0 - fu) * (1.0 - fv);
        self.bins[j * stride + i + 1] += fu * (1.0 - fv);
        self.bins[(j + 1) * stride + i] += (1.0 - fu) * fv;
        self.bins[(j + 1) * stride + i + 1] += fu * fv;
        true
    }

    /// Bilinear sample at a fractional position; zero outside the array.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let (u_max, v_max) = (self.geom.u_max as f64, self.geom.v_max as f64);
        if !(0.0..=u_max).contains(&u) || !(0.0..=v_max).contains(&v) {
            return 0.0;
        }
        let (i, fu) = split_index(u, self.geom.u_max);
        let (j, fv) = split_index(v, self.geom.v_max);
        let stride = self.geom.u_max + 1;
        self.bins[j * stride + i] * (1.0 - fu) * (1.0 - fv)
            + self.bins[j * stride + i + 1] * fu * (1.0 - fv)
            + self.bins[(j + 1) * stride + i] * (1.0 - fu) * fv
            + self.bins[(j + 1) * stride + i + 1] * fu * fv
    }
}

/// Splits a coordinate into base index and fraction, folding the exact
/// upper edge onto the previous cell so indexing stays in range.
fn split_index(x: f64, max: usize) -> (usize, f64) {
    let mut i = math::floor(x) as usize;
    let mut f = x - i as f64;
    if i >= max {
        i = max - 1;
        f = 1.0;
    }
    (i, f)
}

/// Builds both accumulators from labelled local-coordinate points.
///
/// Each point's Hough line crosses the array from `(s, 0)` to `(t, v_max)`
/// with `s` and `t` given by the transform at the extreme slopes; the
/// segment is sampled at unit spacing (`floor(len) + 1` samples) and every
/// in-bounds sample is splat bilinearly into the family's array.
pub fn accumulate(
    points: impl IntoIterator<Item = (f64, f64, Family)>,
    geom: HoughGeometry,
) -> (HoughArray, HoughArray) {
    let mut array_x = HoughArray::new(geom);
    let mut array_y = HoughArray::new(geom);
    let v_max = geom.v_max as f64;
    for (x, y, family) in points {
        let array = match family {
            Family::X => &mut array_x,
            Family::Y => &mut array_y,
        };
        // Transform evaluated at the slope extremes -1 and +1.
        let s = hough_u(&geom, x, y, geom.v0() - 1.0, family);
        let t = hough_u(&geom, x, y, geom.v0() + 1.0, family);
        let len = math::hypot(t - s, v_max);
        let count = math::floor(len) as usize + 1;
        for w in 0..count {
            let frac = w as f64 / len;
            array.splat(s + frac * (t - s), frac * v_max);
        }
    }
    (array_x, array_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom() -> HoughGeometry {
        HoughGeometry::new(120, 120)
    }

    #[test]
    fn size_rule_from_image() {
        let g = HoughGeometry::for_image(176, 144, 1.5);
        assert_eq!(g.u_max(), 240);
        assert_eq!(g.v_max(), 240);
        assert_eq!(g.u0(), 120.0);
    }

    #[test]
    fn hough_u_at_origin_is_constant() {
        let g = geom();
        for v in [0.0, 13.0, g.v0(), 111.0] {
            assert_eq!(hough_u(&g, 0.0, 0.0, v, Family::X), g.u0());
            assert_eq!(hough_u(&g, 0.0, 0.0, v, Family::Y), g.u0());
        }
    }

    #[test]
    fn hough_u_zero_y_kills_slope_term() {
        let g = geom();
        for v in [0.0, 42.0, 97.5] {
            assert_eq!(hough_u(&g, 10.0, 0.0, v, Family::X), g.u0() + 10.0);
        }
    }

    #[test]
    fn hough_u_slope_substitution() {
        let g = geom();
        // Point (0, 5) at unit slope above the midline.
        assert_eq!(hough_u(&g, 0.0, 5.0, g.v0() + 1.0, Family::X), g.u0() - 5.0);
        // The family swap exchanges the roles of x and y.
        assert_eq!(hough_u(&g, 0.0, 5.0, g.v0() + 1.0, Family::Y), g.u0() + 5.0);
    }

    #[test]
    fn line_from_vertical_peak() {
        let g = geom();
        let line = line_from_hough(&g, Family::X, g.u0() + 3.0, g.v0());
        assert_eq!(line, HomLine::new(-1.0, 0.0, 3.0));
    }

    #[test]
    fn line_from_sloped_peak_other_family() {
        let g = geom();
        let line = line_from_hough(&g, Family::Y, g.u0(), g.v0() + 0.1);
        assert_relative_eq!(line.a, 0.1, epsilon = 1e-12);
        assert_eq!(line.b, -1.0);
        assert_eq!(line.c, 0.0);
        // y = 0.1 x passes through (10, 1).
        assert!(line.pixel_residual(10.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn origin_point_fills_centre_column() {
        let (hx, _) = accumulate([(0.0, 0.0, Family::X)], geom());
        let g = geom();
        let u0 = g.u0() as usize;
        for v in 0..=g.v_max() {
            for u in 0..=g.u_max() {
                if u == u0 {
                    assert!(hx.get(u, v) > 0.0, "expected mass at ({u}, {v})");
                } else {
                    assert_eq!(hx.get(u, v), 0.0, "unexpected mass at ({u}, {v})");
                }
            }
        }
    }

    #[test]
    fn empty_input_gives_zero_arrays() {
        let (hx, hy) = accumulate([], geom());
        assert_eq!(hx.total_mass(), 0.0);
        assert_eq!(hy.total_mass(), 0.0);
    }

    #[test]
    fn mass_equals_in_bounds_sample_count() {
        let g = geom();
        // Points at varied positions, a few of which splat partially
        // outside and must drop those samples entirely.
        let points = [
            (0.0, 0.0, Family::X),
            (10.0, 25.0, Family::X),
            (-30.0, 12.0, Family::Y),
            (55.0, -40.0, Family::X),
            (59.0, 3.0, Family::Y),
        ];
        // Count in-bounds samples with the same traversal.
        let mut expected = 0usize;
        for &(x, y, family) in &points {
            let s = hough_u(&g, x, y, g.v0() - 1.0, family);
            let t = hough_u(&g, x, y, g.v0() + 1.0, family);
            let len = math::hypot(t - s, g.v_max() as f64);
            let count = math::floor(len) as usize + 1;
            for w in 0..count {
                let frac = w as f64 / len;
                let u = s + frac * (t - s);
                if (0.0..=g.u_max() as f64).contains(&u) {
                    expected += 1;
                }
            }
        }
        let (hx, hy) = accumulate(points, g);
        let total = hx.total_mass() + hy.total_mass();
        assert_relative_eq!(total, expected as f64, max_relative = 1e-12);
    }

    #[test]
    fn peaks_land_on_predicted_bins() {
        let g = geom();
        // Three family-X lines x = intercept + slope * y.
        let lines = [(-20.0, -0.15), (5.0, 0.0), (24.0, 0.2)];
        let mut points = Vec::new();
        for &(intercept, slope) in &lines {
            let mut y = -45.0;
            while y <= 45.0 {
                points.push((intercept + slope * y, y, Family::X));
                y += 0.5;
            }
        }
        let (hx, _) = accumulate(points, g);

        // Local maxima of the accumulator, strongest first.
        let mut maxima = Vec::new();
        for v in 1..g.v_max() {
            for u in 1..g.u_max() {
                let c = hx.get(u, v);
                let neighbours = [
                    hx.get(u - 1, v - 1), hx.get(u, v - 1), hx.get(u + 1, v - 1),
                    hx.get(u - 1, v),                        hx.get(u + 1, v),
                    hx.get(u - 1, v + 1), hx.get(u, v + 1), hx.get(u + 1, v + 1),
                ];
                if c > 0.0 && neighbours.iter().all(|&n| n <= c) {
                    maxima.push((c, u, v));
                }
            }
        }
        maxima.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        for &(intercept, slope) in &lines {
            let pu = g.u0() + intercept;
            let pv = g.bin_of_slope(slope);
            let hit = maxima.iter().take(12).any(|&(_, u, v)| {
                (u as f64 - pu).abs() <= 1.0 && (v as f64 - pv).abs() <= 1.0
            });
            assert!(hit, "no strong maximum within 1 bin of ({pu:.1}, {pv:.1})");
        }
    }

    #[test]
    fn splat_and_sample_agree_at_centres() {
        let mut h = HoughArray::new(geom());
        assert!(h.splat(30.25, 40.75));
        // Sampling at the splat position reads back the sum of squared
        // weights: (0.75^2 + 0.25^2)^2 = 0.390625.
        assert_relative_eq!(h.sample(30.25, 40.75), 0.390625, max_relative = 1e-12);
        // A sample exactly on a deposited integer position.
        let mut h2 = HoughArray::new(geom());
        assert!(h2.splat(50.0, 60.0));
        assert_eq!(h2.get(50, 60), 1.0);
        assert_eq!(h2.sample(50.0, 60.0), 1.0);
    }

    #[test]
    fn splat_out_of_bounds_is_dropped() {
        let mut h = HoughArray::new(geom());
        assert!(!h.splat(-0.001, 10.0));
        assert!(!h.splat(10.0, 120.001));
        assert!(h.splat(120.0, 120.0)); // exact corner stays in bounds
        assert_relative_eq!(h.total_mass(), 1.0, max_relative = 1e-12);
    }
}
