//! Closed-form eigendecomposition of symmetric 3x3 matrices.
//!
//! The terrain analysis fits a plane to a small neighborhood by taking the
//! eigenvector of the smallest eigenvalue of a 3x3 covariance. The matrices
//! are tiny and the call sits in a per-cell hot loop, so this is the direct
//! trigonometric solution instead of an iterative solver: eigenvalues from
//! the characteristic cubic, eigenvectors from cross products of rows of
//! `A - lambda I`.

use crate::real::Real;

pub type Vec3<R> = [R; 3];
pub type Mat3<R> = [[R; 3]; 3];

/// Eigenpairs of a symmetric 3x3 matrix, eigenvalues descending.
///
/// `vectors[k]` is a unit eigenvector for `values[k]`; the sign convention
/// makes the largest-magnitude component non-negative.
#[derive(Clone, Copy, Debug)]
pub struct SymEigen3<R> {
    pub values: [R; 3],
    pub vectors: [Vec3<R>; 3],
}

pub fn dot<R: Real>(a: &Vec3<R>, b: &Vec3<R>) -> R {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<R: Real>(a: &Vec3<R>, b: &Vec3<R>) -> Vec3<R> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<R: Real>(a: &Vec3<R>) -> R {
    dot(a, a).sqrt()
}

pub fn normalized<R: Real>(a: &Vec3<R>) -> Vec3<R> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn fix_sign<R: Real>(v: Vec3<R>) -> Vec3<R> {
    let mut dominant = 0;
    for k in 1..3 {
        if v[k].abs() > v[dominant].abs() {
            dominant = k;
        }
    }
    if v[dominant] < R::zero() {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// Unit eigenvector of `m` for eigenvalue `lambda`, by the largest cross
/// product of two rows of `m - lambda I`. Degenerate (repeated) eigenvalues
/// leave the cross products near zero; callers that may face repeats must
/// handle that case themselves (see the slope tie-break in the terrain
/// analysis). Returns `None` when every cross product underflows.
pub fn eigenvector_for<R: Real>(m: &Mat3<R>, lambda: R) -> Option<Vec3<R>> {
    let r = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let candidates = [cross(&r[0], &r[1]), cross(&r[0], &r[2]), cross(&r[1], &r[2])];
    let mut best: Option<(R, Vec3<R>)> = None;
    for c in candidates {
        let n = norm(&c);
        if n.is_finite() && n > R::zero() {
            match best {
                Some((bn, _)) if bn >= n => {}
                _ => best = Some((n, c)),
            }
        }
    }
    best.map(|(n, c)| fix_sign([c[0] / n, c[1] / n, c[2] / n]))
}

/// Full eigendecomposition, eigenvalues sorted descending.
pub fn sym_eigen3<R: Real>(m: &Mat3<R>) -> SymEigen3<R> {
    let one_third = R::c(1.0 / 3.0);
    let q = (m[0][0] + m[1][1] + m[2][2]) * one_third;
    let d = [m[0][0] - q, m[1][1] - q, m[2][2] - q];
    let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let p2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + R::c(2.0) * off) * R::c(1.0 / 6.0);
    let p = p2.sqrt();

    if !(p > R::zero()) {
        // Scalar multiple of the identity.
        return SymEigen3 {
            values: [q, q, q],
            vectors: [
                [R::one(), R::zero(), R::zero()],
                [R::zero(), R::one(), R::zero()],
                [R::zero(), R::zero(), R::one()],
            ],
        };
    }

    let b = [
        [d[0] / p, m[0][1] / p, m[0][2] / p],
        [m[0][1] / p, d[1] / p, m[1][2] / p],
        [m[0][2] / p, m[1][2] / p, d[2] / p],
    ];
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b * R::c(0.5)).clamp_to(-R::one(), R::one());
    let phi = r.acos() * one_third;

    let two = R::c(2.0);
    let lam_hi = q + two * p * phi.cos();
    let lam_lo = q + two * p * (phi + R::c(2.0 * std::f64::consts::PI / 3.0)).cos();
    let lam_mid = q * R::c(3.0) - lam_hi - lam_lo;
    let values = [lam_hi, lam_mid, lam_lo];

    let v_hi = eigenvector_for(m, lam_hi);
    let v_lo = eigenvector_for(m, lam_lo);
    let (v_hi, v_lo) = match (v_hi, v_lo) {
        (Some(a), Some(b)) => (a, b),
        // Repeated eigenvalues: anchor on whichever end is simple.
        (Some(a), None) => {
            let other = orthogonal_complement_axis(&a);
            (a, other)
        }
        (None, Some(b)) => {
            let other = orthogonal_complement_axis(&b);
            (other, b)
        }
        (None, None) => (
            [R::one(), R::zero(), R::zero()],
            [R::zero(), R::zero(), R::one()],
        ),
    };
    let v_mid = fix_sign(normalized(&cross(&v_lo, &v_hi)));

    SymEigen3 { values, vectors: [v_hi, v_mid, v_lo] }
}

/// Any unit vector orthogonal to `v`.
fn orthogonal_complement_axis<R: Real>(v: &Vec3<R>) -> Vec3<R> {
    let trial = if v[0].abs() < R::c(0.9) {
        [R::one(), R::zero(), R::zero()]
    } else {
        [R::zero(), R::one(), R::zero()]
    };
    fix_sign(normalized(&cross(v, &trial)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation_from_axis_angle(axis: [f64; 3], angle: f64) -> Mat3<f64> {
        let a = normalized(&axis);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [c + a[0] * a[0] * t, a[0] * a[1] * t - a[2] * s, a[0] * a[2] * t + a[1] * s],
            [a[1] * a[0] * t + a[2] * s, c + a[1] * a[1] * t, a[1] * a[2] * t - a[0] * s],
            [a[2] * a[0] * t - a[1] * s, a[2] * a[1] * t + a[0] * s, c + a[2] * a[2] * t],
        ]
    }

    fn recompose(rot: &Mat3<f64>, diag: [f64; 3]) -> Mat3<f64> {
        // R * D * R^T with D diagonal.
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += rot[i][k] * diag[k] * rot[j][k];
                }
                out[i][j] = acc;
            }
        }
        // Symmetrize to kill round-off drift in the input.
        for i in 0..3 {
            for j in (i + 1)..3 {
                let m = 0.5 * (out[i][j] + out[j][i]);
                out[i][j] = m;
                out[j][i] = m;
            }
        }
        out
    }

    #[test]
    fn diagonal_matrix_decomposes_exactly() {
        let e = sym_eigen3::<f64>(&[[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_relative_eq!(e.values[0], 3.0, max_relative = 1e-12);
        assert_relative_eq!(e.values[1], 2.0, max_relative = 1e-12);
        assert_relative_eq!(e.values[2], 1.0, max_relative = 1e-12);
        assert_relative_eq!(e.vectors[2][2].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_multiple_returns_axis_basis() {
        let e = sym_eigen3::<f64>(&[[2.5, 0.0, 0.0], [0.0, 2.5, 0.0], [0.0, 0.0, 2.5]]);
        assert_eq!(e.values, [2.5, 2.5, 2.5]);
        assert_eq!(e.vectors[0], [1.0, 0.0, 0.0]);
        assert_eq!(e.vectors[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn random_spectra_recovered_against_construction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let axis = [
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(0.1..1.0f64),
            ];
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = rotation_from_axis_angle(axis, angle);
            // Well-separated spectrum so every eigenvector is simple.
            let mut diag = [
                rng.gen_range(5.0..9.0f64),
                rng.gen_range(2.0..4.0f64),
                rng.gen_range(0.0..1.0f64),
            ];
            diag.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let m = recompose(&rot, diag);
            let e = sym_eigen3(&m);
            for k in 0..3 {
                assert_relative_eq!(e.values[k], diag[k], max_relative = 1e-9, epsilon = 1e-9);
                let expected = [rot[0][k], rot[1][k], rot[2][k]];
                let align = dot(&e.vectors[k], &expected).abs();
                assert_relative_eq!(align, 1.0, epsilon = 1e-7);
            }
            // Pairwise orthogonality of the returned frame.
            assert!(dot(&e.vectors[0], &e.vectors[1]).abs() < 1e-7);
            assert!(dot(&e.vectors[1], &e.vectors[2]).abs() < 1e-7);
            assert!(dot(&e.vectors[0], &e.vectors[2]).abs() < 1e-7);
        }
    }

    #[test]
    fn rank_deficient_planar_covariance_has_exact_null_vector() {
        // Covariance of points confined to the plane z = 0.4 x: the normal
        // direction carries exactly zero variance.
        let g = 0.4f64;
        let sxx = 2.0;
        let syy = 1.5;
        let m = [
            [sxx, 0.0, g * sxx],
            [0.0, syy, 0.0],
            [g * sxx, 0.0, g * g * sxx],
        ];
        let e = sym_eigen3(&m);
        assert!(e.values[2].abs() < 1e-12);
        let expected = normalized(&[-g, 0.0, 1.0]);
        let align = dot(&e.vectors[2], &expected).abs();
        assert_relative_eq!(align, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn works_in_f32_too() {
        let m: Mat3<f32> = [[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]];
        let e = sym_eigen3(&m);
        assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2]);
        let n = norm(&e.vectors[2]);
        assert!((n - 1.0).abs() < 1e-5);
    }
}
