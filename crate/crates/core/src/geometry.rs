//! Yaw-only rigid transforms and the small fixed matrices used by the
//! linear estimation step.
//!
//! The relative pose between the two odometry frames has four degrees of
//! freedom: a 3-D translation and a rotation about the gravity-aligned
//! z-axis. Everything here is exact small-matrix arithmetic: building
//! R(θ), applying transforms, projecting a 2×2 matrix onto SO(2) via SVD,
//! and the constant selector/derivative matrices that let the linear step
//! treat [sin θ, cos θ] as free unknowns.

use nalgebra::{DMatrix, DVector, Dim, Matrix, Matrix2, Matrix3, RawStorage, SMatrix, SVector, Vector2, Vector3};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Singular values below this count as zero when deciding whether an
/// SO(2) projection is well defined.
pub const PROJECTION_DEGENERACY_THRESHOLD: f64 = 1e-12;

/// A heading angle stored normalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawAngle(f64);

impl YawAngle {
    /// Wraps an arbitrary angle in radians into `[0, 2π)`.
    pub fn new(radians: f64) -> Self {
        YawAngle(radians.rem_euclid(TAU))
    }

    pub fn from_degrees(degrees: f64) -> Self {
        YawAngle::new(degrees.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Smallest absolute angular distance to `other`, accounting for wrap.
    pub fn distance_to(self, other: YawAngle) -> f64 {
        let d = (self.0 - other.0).rem_euclid(TAU);
        d.min(TAU - d)
    }
}

/// A rotation about the z-axis, stored as its full 3×3 matrix.
///
/// Constructed only through [`yaw_rotation`], so orthogonality, unit
/// determinant and the fixed third row/column hold by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationZ {
    matrix: Matrix3<f64>,
}

impl RotationZ {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// The top-left 2×2 planar block.
    pub fn block(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Recovers the yaw angle from the matrix entries.
    pub fn angle(&self) -> YawAngle {
        YawAngle::new(self.matrix[(1, 0)].atan2(self.matrix[(0, 0)]))
    }
}

/// Builds the z-axis rotation
/// `[[cos θ, −sin θ, 0], [sin θ, cos θ, 0], [0, 0, 1]]`.
pub fn yaw_rotation(theta: YawAngle) -> RotationZ {
    let (s, c) = theta.radians().sin_cos();
    RotationZ {
        matrix: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Embeds a 2×2 planar block as a z-axis rotation matrix. The block is
/// not required to be orthogonal; callers use this to assemble the
/// unconstrained linear-step solution before projection.
pub fn embed_planar_block(block: &Matrix2<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::identity();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(block);
    m
}

/// The rigid map taking coordinates in the target robot's odometry frame
/// into the host robot's odometry frame: `p ↦ R(θ)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub rotation: RotationZ,
    pub translation: Vector3<f64>,
}

impl FrameTransform {
    pub fn new(yaw: YawAngle, translation: Vector3<f64>) -> Self {
        FrameTransform {
            rotation: yaw_rotation(yaw),
            translation,
        }
    }

    pub fn yaw(&self) -> YawAngle {
        self.rotation.angle()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }
}

/// Applies `R·p + t`.
pub fn apply_transform(tf: &FrameTransform, p: &Vector3<f64>) -> Vector3<f64> {
    tf.apply(p)
}

/// Orthogonal projection of a 2×2 matrix onto SO(2): the rotation nearest
/// in Frobenius norm, computed as `U·diag(1, det(UVᵀ))·Vᵀ` from the SVD
/// `m = UΣVᵀ`.
///
/// Fails when every singular value is below
/// [`PROJECTION_DEGENERACY_THRESHOLD`]; the nearest rotation is then not
/// determined by the input.
pub fn project_to_so2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let svd = m.svd(true, true);
    if svd.singular_values.iter().all(|&s| s < PROJECTION_DEGENERACY_THRESHOLD) {
        return Err(Error::DegenerateProjection);
    }
    let u = svd.u.expect("SVD requested with U");
    let v_t = svd.v_t.expect("SVD requested with Vᵀ");
    let d = (u * v_t).determinant().signum();
    Ok(u * Matrix2::new(1.0, 0.0, 0.0, d) * v_t)
}

/// Stacks the columns of a matrix top to bottom.
pub fn vec_column_major<R, C, S>(m: &Matrix<f64, R, C, S>) -> DVector<f64>
where
    R: Dim,
    C: Dim,
    S: RawStorage<f64, R, C>,
{
    DVector::from_iterator(m.nrows() * m.ncols(), m.iter().copied())
}

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// The fixed matrices of the linear estimation step.
///
/// * `selector` maps `[sin θ, cos θ]ᵀ` to the column-major vectorization
///   of the planar rotation embedded in 3-D, so the rotation unknowns
///   enter the stacked system linearly.
/// * `plane_embedding` and `vertical_axis` split R³ into the rotating
///   xy-plane and the invariant z-axis.
/// * `vec_rotation_rate` is `d/dθ vec(R(θ))` at `θ = 0` (column-major).
#[derive(Debug, Clone)]
pub struct EstimatorConstants {
    pub selector: SMatrix<f64, 9, 2>,
    pub plane_embedding: SMatrix<f64, 3, 2>,
    pub vertical_axis: Vector3<f64>,
    pub vec_rotation_rate: SVector<f64, 9>,
}

impl EstimatorConstants {
    pub fn new() -> Self {
        #[rustfmt::skip]
        let selector = SMatrix::<f64, 9, 2>::from_row_slice(&[
            // sin   cos        (row = entry of vec(R), column-major)
            0.0, 1.0,  // R11
            1.0, 0.0,  // R21
            0.0, 0.0,  // R31
            -1.0, 0.0, // R12
            0.0, 1.0,  // R22
            0.0, 0.0,  // R32
            0.0, 0.0,  // R13
            0.0, 0.0,  // R23
            0.0, 0.0,  // R33 (the planar embedding has a zero corner)
        ]);
        let plane_embedding =
            SMatrix::<f64, 3, 2>::from_row_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let vertical_axis = Vector3::z();
        // Derivative of the column-major vec of R(θ) at θ = 0. The ninth
        // entry is 0: R33 ≡ 1 does not vary with yaw.
        let vec_rotation_rate =
            SVector::<f64, 9>::from_row_slice(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        EstimatorConstants {
            selector,
            plane_embedding,
            vertical_axis,
            vec_rotation_rate,
        }
    }

    /// `d/dθ R(θ)` at `θ = 0` as a 3×3 matrix (the vec above, reshaped
    /// column-major).
    pub fn rotation_rate_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_column_slice(self.vec_rotation_rate.as_slice())
    }

    /// Applies the selector to `[sin θ, cos θ]` and reshapes to the 2×2
    /// planar block.
    pub fn planar_block_from_sin_cos(&self, sin_cos: &Vector2<f64>) -> Matrix2<f64> {
        let v = self.selector * sin_cos;
        let full = Matrix3::from_column_slice(v.as_slice());
        full.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

impl Default for EstimatorConstants {
    fn default() -> Self {
        EstimatorConstants::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn frobenius(m: &Matrix2<f64>) -> f64 {
        m.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn yaw_angle_normalizes() {
        assert_abs_diff_eq!(YawAngle::new(-0.5).radians(), TAU - 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(YawAngle::new(TAU + 1.0).radians(), 1.0, epsilon = 1e-15);
        assert_eq!(YawAngle::new(0.0).radians(), 0.0);
    }

    #[test]
    fn yaw_rotation_identity() {
        let r = yaw_rotation(YawAngle::new(0.0));
        assert_eq!(r.matrix(), &Matrix3::identity());
    }

    #[test]
    fn yaw_rotation_quarter_turn() {
        let r = yaw_rotation(YawAngle::new(std::f64::consts::FRAC_PI_2));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(r.matrix(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn yaw_rotation_sixty_degrees() {
        let r = yaw_rotation(YawAngle::from_degrees(60.0));
        let half_sqrt3 = 3.0_f64.sqrt() / 2.0;
        let expected = Matrix2::new(0.5, -half_sqrt3, half_sqrt3, 0.5);
        assert_abs_diff_eq!(r.block(), expected, epsilon = 1e-15);
    }

    #[test]
    fn yaw_rotation_is_orthogonal_with_unit_det() {
        for i in 0..360 {
            let r = yaw_rotation(YawAngle::from_degrees(i as f64));
            let m = r.matrix();
            assert_abs_diff_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-12);
            assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-12);
            // z-axis row and column fixed
            assert_eq!(m.column(2).into_owned(), Vector3::z());
            assert_eq!(m[(2, 0)], 0.0);
            assert_eq!(m[(2, 1)], 0.0);
        }
    }

    #[test]
    fn apply_transform_identity() {
        let tf = FrameTransform::new(YawAngle::new(0.0), Vector3::zeros());
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(apply_transform(&tf, &p), p);
    }

    #[test]
    fn apply_transform_quarter_turn() {
        let tf = FrameTransform::new(YawAngle::new(std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let out = apply_transform(&tf, &Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(out, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn apply_transform_z_point_invariant_under_yaw() {
        let tf = FrameTransform::new(YawAngle::from_degrees(60.0), Vector3::new(20.0, 20.0, 20.0));
        let out = apply_transform(&tf, &Vector3::new(0.0, 0.0, 10.0));
        assert_abs_diff_eq!(out, Vector3::new(20.0, 20.0, 30.0), epsilon = 1e-12);
    }

    #[test]
    fn projection_is_identity_on_rotations() {
        for i in 0..36 {
            let block = yaw_rotation(YawAngle::from_degrees(10.0 * i as f64)).block();
            let projected = project_to_so2(&block).unwrap();
            assert_abs_diff_eq!(projected, block, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_of_scaled_identity() {
        let projected = project_to_so2(&(Matrix2::identity() * 2.0)).unwrap();
        assert_abs_diff_eq!(projected, Matrix2::identity(), epsilon = 1e-12);
    }

    #[test]
    fn projection_rejects_degenerate_input() {
        let err = project_to_so2(&Matrix2::zeros()).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjection));
    }

    /// Brute-force reference: scan rotation angles and keep the closest in
    /// Frobenius norm. Independent of the SVD path.
    fn nearest_rotation_by_grid(m: &Matrix2<f64>, step: f64) -> (f64, f64) {
        let mut best_phi = 0.0;
        let mut best_dist = f64::INFINITY;
        let mut phi = 0.0;
        while phi < TAU {
            let (s, c) = phi.sin_cos();
            let r = Matrix2::new(c, -s, s, c);
            let d = frobenius(&(m - r));
            if d < best_dist {
                best_dist = d;
                best_phi = phi;
            }
            phi += step;
        }
        (best_phi, best_dist)
    }

    #[test]
    fn projection_matches_grid_oracle_on_perturbed_rotation() {
        let perturbation = Matrix2::new(1.0, -0.3, 0.4, -1.0);
        let m = yaw_rotation(YawAngle::from_degrees(30.0)).block() + 0.05 * perturbation;
        let projected = project_to_so2(&m).unwrap();
        let theta = projected[(1, 0)].atan2(projected[(0, 0)]);
        let (best_phi, _) = nearest_rotation_by_grid(&m, 1e-6);
        assert_abs_diff_eq!(theta, best_phi, epsilon = 2e-6);
    }

    #[test]
    fn projection_minimizes_frobenius_distance_over_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = Matrix2::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let Ok(projected) = project_to_so2(&m) else {
                continue;
            };
            let proj_dist = frobenius(&(m - projected));
            let (_, grid_dist) = nearest_rotation_by_grid(&m, 1e-4);
            assert!(
                proj_dist <= grid_dist + 1e-6,
                "grid found a closer rotation: {grid_dist} < {proj_dist}"
            );
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let m = Matrix2::new(1.3, 0.2, -0.8, 0.9);
        let once = project_to_so2(&m).unwrap();
        let twice = project_to_so2(&once).unwrap();
        assert_abs_diff_eq!(once, twice, epsilon = 1e-12);
    }

    #[test]
    fn vec_column_major_definition() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec_column_major(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(vec_column_major(&eye).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn vec_of_triple_product_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng| {
                DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))
            };
            let (a, b, c) = (rand_mat(&mut rng), rand_mat(&mut rng), rand_mat(&mut rng));
            let lhs = vec_column_major(&(&a * &b * &c));
            let rhs = kronecker(&c.transpose(), &a) * vec_column_major(&b);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn kronecker_examples() {
        let eye2 = DMatrix::<f64>::identity(2, 2);
        let scalar = DMatrix::from_row_slice(1, 1, &[5.0]);
        assert_eq!(kronecker(&eye2, &scalar), DMatrix::from_diagonal_element(2, 2, 5.0));

        let col = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let stacked = kronecker(&col, &eye2);
        let expected =
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]);
        assert_eq!(stacked, expected);
    }

    #[test]
    fn kronecker_mixed_product_property() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng| {
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))
        };
        for _ in 0..20 {
            let (a, b, c, d) =
                (rand_mat(&mut rng), rand_mat(&mut rng), rand_mat(&mut rng), rand_mat(&mut rng));
            let lhs = kronecker(&a, &b) * kronecker(&c, &d);
            let rhs = kronecker(&(&a * &c), &(&b * &d));
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn selector_reproduces_embedded_rotation_vec() {
        let constants = EstimatorConstants::new();
        for i in 0..720 {
            let theta = YawAngle::from_degrees(0.5 * i as f64);
            let (s, c) = theta.radians().sin_cos();
            let lhs = constants.selector * Vector2::new(s, c);
            let embedded = constants.plane_embedding
                * yaw_rotation(theta).block()
                * constants.plane_embedding.transpose();
            let rhs = vec_column_major(&embedded);
            for k in 0..9 {
                assert_abs_diff_eq!(lhs[k], rhs[k], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rotation_rate_matches_finite_difference() {
        let constants = EstimatorConstants::new();
        let h = 1e-5;
        let plus = yaw_rotation(YawAngle::new(h));
        let minus = yaw_rotation(YawAngle::new(-h));
        let fd = (vec_column_major(plus.matrix()) - vec_column_major(minus.matrix())) / (2.0 * h);
        for k in 0..9 {
            assert_abs_diff_eq!(constants.vec_rotation_rate[k], fd[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn planar_block_assembly_round_trip() {
        let constants = EstimatorConstants::new();
        let block = constants.planar_block_from_sin_cos(&Vector2::new(0.6, 0.8));
        assert_abs_diff_eq!(block, Matrix2::new(0.8, -0.6, 0.6, 0.8), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn prop_yaw_rotation_orthogonal(theta in -20.0..20.0f64) {
            let r = yaw_rotation(YawAngle::new(theta));
            let m = r.matrix();
            let gram = m.transpose() * m;
            prop_assert!((gram - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prop_projection_idempotent(
            a in -3.0..3.0f64, b in -3.0..3.0f64,
            c in -3.0..3.0f64, d in -3.0..3.0f64,
        ) {
            let m = Matrix2::new(a, b, c, d);
            if let Ok(once) = project_to_so2(&m) {
                let twice = project_to_so2(&once).unwrap();
                prop_assert!((once - twice).norm() < 1e-12);
                prop_assert!((once.transpose() * once - Matrix2::identity()).norm() < 1e-12);
                prop_assert!((once.determinant() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn prop_angle_round_trip(theta in 0.0..TAU) {
            let r = yaw_rotation(YawAngle::new(theta));
            prop_assert!(r.angle().distance_to(YawAngle::new(theta)) < 1e-12);
        }
    }
}
