//! Projective geometry on the pixel grid.
//!
//! Coordinates follow one global convention: origin at the centre of the
//! top-left pixel, `u` = column, `v` = row. A frame of `height x width`
//! pixels has its corners at `(0,0)`, `(W-1,0)`, `(0,H-1)`, `(W-1,H-1)`.
//! A [`Homography`] maps source coordinates to target coordinates, and a
//! [`CornerDisplacement`] moves each source corner to its target position.

mod dlt;
mod warp;

pub use dlt::{corners_to_homography, homography_from_points};
pub use warp::{homography_flow, warp_bilinear};

use crate::error::{Error, Result};
use nalgebra::Matrix3;

/// Smallest projective denominator accepted when mapping a point.
pub const DENOM_EPS: f64 = 1e-9;
/// Smallest determinant magnitude of a valid homography.
pub const DET_EPS: f64 = 1e-12;

/// Image frame size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Frame { height, width }
    }

    pub fn square(side: usize) -> Self {
        Frame::new(side, side)
    }

    /// Corner positions indexed `[row][col]` (row 0 = top, col 0 = left).
    pub fn corners(&self) -> [[[f64; 2]; 2]; 2] {
        let r = (self.width - 1) as f64;
        let b = (self.height - 1) as f64;
        [[[0.0, 0.0], [r, 0.0]], [[0.0, b], [r, b]]]
    }

    pub fn scaled(&self, num: usize, den: usize) -> Frame {
        Frame::new(self.height * num / den, self.width * num / den)
    }
}

/// A 3x3 projective transform normalized so that `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn scaling(s: f64) -> Self {
        Homography {
            m: Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Normalizes by `m[2][2]` and validates invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let s = m[(2, 2)];
        if !s.is_finite() || s.abs() < DET_EPS {
            return Err(Error::ProjectiveBlowup {
                row: 2,
                col: 2,
                denominator: s,
            });
        }
        let m = if s == 1.0 { m } else { m / s };
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(Error::Singular(det.abs()));
        }
        Ok(Homography { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// Maps one point; fails when it lands near the plane at infinity.
    #[inline]
    pub fn apply(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let m = &self.m;
        let den = m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)];
        if den.abs() < DENOM_EPS || !den.is_finite() {
            return Err(Error::ProjectiveBlowup {
                row: v.round().max(0.0) as usize,
                col: u.round().max(0.0) as usize,
                denominator: den,
            });
        }
        let x = (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)]) / den;
        let y = (m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)]) / den;
        Ok((x, y))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Singular(self.m.determinant().abs()))?;
        Self::from_matrix(inv)
    }

    /// Largest absolute entry difference to `other`.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.m - other.m).abs().max()
    }
}

/// Displacements of the four frame corners, indexed `[row][col][axis]`
/// with axis 0 = du, 1 = dv; units are pixels of the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CornerDisplacement {
    pub d: [[[f64; 2]; 2]; 2],
}

impl CornerDisplacement {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// The same `(du, dv)` at all four corners.
    pub fn uniform(du: f64, dv: f64) -> Self {
        CornerDisplacement {
            d: [[[du, dv]; 2]; 2],
        }
    }

    /// Flattened in `[row][col][axis]` order.
    pub fn to_flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, v) in self.d.iter().flatten().flatten().enumerate() {
            out[i] = *v;
        }
        out
    }

    pub fn from_flat(f: &[f64]) -> Self {
        assert_eq!(f.len(), 8);
        let mut d = [[[0.0; 2]; 2]; 2];
        for (i, v) in f.iter().enumerate() {
            d[i / 4][(i / 2) % 2][i % 2] = *v;
        }
        CornerDisplacement { d }
    }

    /// Reads a `[2 (axis), 2 (row), 2 (col)]` cube as produced by the
    /// aggregator's projection head.
    pub fn from_axis_major(c: &[f64]) -> Self {
        assert_eq!(c.len(), 8);
        let mut d = [[[0.0; 2]; 2]; 2];
        for axis in 0..2 {
            for r in 0..2 {
                for col in 0..2 {
                    d[r][col][axis] = c[axis * 4 + r * 2 + col];
                }
            }
        }
        CornerDisplacement { d }
    }

    /// Inverse of [`CornerDisplacement::from_axis_major`].
    pub fn to_axis_major(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for axis in 0..2 {
            for r in 0..2 {
                for col in 0..2 {
                    out[axis * 4 + r * 2 + col] = self.d[r][col][axis];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CornerDisplacement) -> Self {
        let mut out = *self;
        for (o, b) in out.d.iter_mut().flatten().flatten().zip(other.d.iter().flatten().flatten()) {
            *o += *b;
        }
        out
    }

    pub fn sub(&self, other: &CornerDisplacement) -> Self {
        let mut out = *self;
        for (o, b) in out.d.iter_mut().flatten().flatten().zip(other.d.iter().flatten().flatten()) {
            *o -= *b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.d.iter_mut().flatten().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.d.iter().flatten().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.d.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// Target positions of the frame corners.
    pub fn displaced_corners(&self, frame: Frame) -> [[[f64; 2]; 2]; 2] {
        let mut c = frame.corners();
        for r in 0..2 {
            for col in 0..2 {
                c[r][col][0] += self.d[r][col][0];
                c[r][col][1] += self.d[r][col][1];
            }
        }
        c
    }
}

/// Per-cell `(u, v)` coordinates over an `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl CoordGrid {
    /// Cell `(i, j)` holds `(u = j, v = i)`.
    pub fn meshgrid(height: usize, width: usize) -> Self {
        let n = height * width;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..height {
            for j in 0..width {
                u.push(j as f64);
                v.push(i as f64);
            }
        }
        CoordGrid {
            height,
            width,
            u,
            v,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        CoordGrid {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|x| x * s).collect(),
            v: self.v.iter().map(|x| x * s).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

pub fn homography_to_corners(h: &Homography, frame: Frame) -> Result<CornerDisplacement> {
    let corners = frame.corners();
    let mut d = [[[0.0; 2]; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let [u, v] = corners[r][c];
            let (x, y) = h.apply(u, v)?;
            d[r][c] = [x - u, y - v];
        }
    }
    Ok(CornerDisplacement { d })
}

/// Projects every grid cell through `h`.
pub fn project_grid(h: &Homography, x: &CoordGrid) -> Result<CoordGrid> {
    let m = h.matrix();
    let (h11, h12, h13) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (h21, h22, h23) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (h31, h32) = (m[(2, 0)], m[(2, 1)]);
    let mut u = Vec::with_capacity(x.len());
    let mut v = Vec::with_capacity(x.len());
    for (idx, (&a, &b)) in x.u.iter().zip(&x.v).enumerate() {
        let den = h31 * a + h32 * b + 1.0;
        if den.abs() < DENOM_EPS || !den.is_finite() {
            return Err(Error::ProjectiveBlowup {
                row: idx / x.width.max(1),
                col: idx % x.width.max(1),
                denominator: den,
            });
        }
        u.push((h11 * a + h12 * b + h13) / den);
        v.push((h21 * a + h22 * b + h23) / den);
    }
    Ok(CoordGrid {
        height: x.height,
        width: x.width,
        u,
        v,
    })
}

/// `outer . inner`: projecting through the result equals projecting through
/// `inner` and then `outer`.
pub fn compose(outer: &Homography, inner: &Homography) -> Result<Homography> {
    Homography::from_matrix(outer.m * inner.m)
}

/// `S H S^-1` with `S = diag(s, s, 1)`: the same mapping expressed on a grid
/// whose coordinates are multiplied by `s`.
pub fn rescale_homography(h: &Homography, s: f64) -> Homography {
    assert!(s > 0.0, "scale must be positive");
    let m = &h.m;
    Homography {
        m: Matrix3::new(
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)] * s,
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)] * s,
            m[(2, 0)] / s,
            m[(2, 1)] / s,
            m[(2, 2)],
        ),
    }
}

/// Mean Euclidean corner error in pixels.
pub fn average_corner_error(est: &CornerDisplacement, gt: &CornerDisplacement) -> f64 {
    let mut total = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let du = est.d[r][c][0] - gt.d[r][c][0];
            let dv = est.d[r][c][1] - gt.d[r][c][1];
            total += du.hypot(dv);
        }
    }
    total / 4.0
}
