//! Normalized direct linear transform for four-point correspondences.

use super::{CornerDisplacement, Frame, Homography};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, SMatrix};

/// Relative singular-value floor below which the DLT system counts as rank
/// deficient.
const RANK_TOL: f64 = 1e-10;
/// Relative triangle-area floor for the collinearity test.
const COLLINEAR_TOL: f64 = 1e-9;

/// Isotropic normalization: centroid to origin, mean distance sqrt(2).
fn hartley(points: &[[f64; 2]; 4]) -> Result<Matrix3<f64>> {
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let mean_dist = points
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .sum::<f64>()
        / 4.0;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateCorners);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn any_three_collinear(points: &[[f64; 2]; 4]) -> bool {
    let scale = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    let triples = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    triples.iter().any(|&(i, j, k)| {
        let (a, b, c) = (points[i], points[j], points[k]);
        let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        cross.abs() < COLLINEAR_TOL * scale * scale
    })
}

/// Homography mapping each `src[i]` onto `dst[i]` (exactly determined by
/// four correspondences in general position).
pub fn homography_from_points(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
    if any_three_collinear(src) || any_three_collinear(dst) {
        return Err(Error::DegenerateCorners);
    }
    let ts = hartley(src)?;
    let td = hartley(dst)?;
    let norm = |t: &Matrix3<f64>, p: [f64; 2]| {
        (
            t[(0, 0)] * p[0] + t[(0, 2)],
            t[(1, 1)] * p[1] + t[(1, 2)],
        )
    };
    // 8 equations padded with a zero row so the SVD exposes the full
    // right-singular basis.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let (x, y) = norm(&ts, src[i]);
        let (u, v) = norm(&td, dst[i]);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateCorners)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest < RANK_TOL * largest {
        return Err(Error::DegenerateCorners);
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::DegenerateCorners)?;
    let m = td_inv * hn * ts;
    Homography::from_matrix(m).map_err(|_| Error::DegenerateCorners)
}

/// Homography taking each frame corner to `corner + d`.
pub fn corners_to_homography(d: &CornerDisplacement, frame: Frame) -> Result<Homography> {
    let c = frame.corners();
    let moved = d.displaced_corners(frame);
    let src = [c[0][0], c[0][1], c[1][0], c[1][1]];
    let dst = [moved[0][0], moved[0][1], moved[1][0], moved[1][1]];
    if !d.is_finite() {
        return Err(Error::DegenerateCorners);
    }
    homography_from_points(&src, &dst)
}
