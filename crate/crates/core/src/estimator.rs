//! The two-step estimator and its verification oracles.
//!
//! Step one linearizes the range model: squaring each range, subtracting
//! the known noise variance (so the induced noise stays zero-mean) and
//! the known anchor norms, then block-centering with `P = I − 11ᵀ/(N·N1)`
//! to cancel the unknown quadratic term. What remains is linear in
//! `y = [sin θ, cos θ, t]`:
//!
//! ```text
//!   d = H·y + e,   H = [ −2(p2ᵀ ⊗ p̄1ᵀ)·S | −2(1 ⊗ p̄1ᵀ) ]
//! ```
//!
//! with `p̄1` the centered anchor matrix and `S` the selector that embeds
//! `[sin θ, cos θ]` as a vectorized planar rotation. The unconstrained
//! least-squares solution is projected onto SO(2) to recover the yaw.
//!
//! Step two runs exactly one Gauss-Newton iteration of the weighted
//! maximum-likelihood cost, linearized at the step-one estimate. Because
//! step one is √n-consistent, the single step is asymptotically as good
//! as iterating to convergence; the iterated solver is kept here as an
//! oracle to verify that claim, alongside a brute-force grid search.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector3, Vector4};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{
    project_to_so2, yaw_rotation, EstimatorConstants, FrameTransform, YawAngle,
};
use crate::measurement::MeasurementSet;
use crate::scenario::RANK_THRESHOLD;

/// Residual direction vectors shorter than this mean an anchor sits on a
/// predicted tag position; the range gradient is undefined there.
pub const RESIDUAL_NORM_FLOOR: f64 = 1e-9;

/// Relative condition floor for the Gauss-Newton normal matrix.
pub const NORMAL_MATRIX_CONDITION_FLOOR: f64 = 1e-12;

/// The stacked linear system of the first step.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// n×5 design matrix; columns 0–1 carry `[sin θ, cos θ]`, columns
    /// 2–4 carry the translation.
    pub h: DMatrix<f64>,
    /// Projected, bias-corrected right-hand side.
    pub rhs: DVector<f64>,
    /// Measurement count `n = N·N1·N2`.
    pub n: usize,
    /// Column rank of `h` at the relative singular-value threshold.
    pub rank_h: usize,
}

/// Output of the closed-form first step.
#[derive(Debug, Clone)]
pub struct FirstStepEstimate {
    /// Unconstrained `[sin θ, cos θ]` estimate before projection.
    pub x_hat: Vector2<f64>,
    /// The 2×2 block assembled from `x_hat` (a scaled rotation).
    pub r_tilde_hat: Matrix2<f64>,
    /// Yaw after SO(2) projection.
    pub theta_hat: YawAngle,
    /// Translation estimate.
    pub t_hat: Vector3<f64>,
}

impl FirstStepEstimate {
    pub fn transform(&self) -> FrameTransform {
        FrameTransform::new(self.theta_hat, self.t_hat)
    }
}

/// A refined estimate with cost and timing diagnostics.
#[derive(Debug, Clone)]
pub struct RefinedEstimate {
    pub transform: FrameTransform,
    /// Total yaw increment applied on top of the initial estimate.
    pub delta_theta: f64,
    /// Weighted cost at the initial estimate.
    pub cost_before: f64,
    /// Weighted cost at the refined estimate.
    pub cost_after: f64,
    /// Seconds spent in the producing call.
    pub wall_time: f64,
    /// Gauss-Newton iterations executed (1 for the one-step refiner).
    pub iterations: usize,
    /// Whether the iteration terminated by increment tolerance.
    pub converged: bool,
    /// Measurement rows skipped because the residual direction was
    /// shorter than [`RESIDUAL_NORM_FLOOR`].
    pub dropped_measurements: usize,
}

/// Per-pair weights `1/σ²` of the maximum-likelihood cost.
#[derive(Debug, Clone)]
pub struct CostSpec {
    weights: Vec<f64>,
    n1: usize,
}

impl CostSpec {
    pub fn from_measurements(m: &MeasurementSet) -> Result<Self> {
        let n1 = m.anchor_count();
        let mut weights = Vec::with_capacity(n1 * m.tag_count());
        for l2 in 0..m.tag_count() {
            for l1 in 0..n1 {
                let s = m.sigma(l1, l2);
                let w = 1.0 / (s * s);
                if !w.is_finite() || w <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "non-finite weight for pair ({l1},{l2})"
                    )));
                }
                weights.push(w);
            }
        }
        Ok(CostSpec { weights, n1 })
    }

    pub fn weight(&self, l1: usize, l2: usize) -> f64 {
        self.weights[l2 * self.n1 + l1]
    }
}

/// Centered anchor positions: each position minus the track mean. With
/// balanced repetitions the block-centering projector reduces to exactly
/// this per-anchor centering.
fn centered_anchors(m: &MeasurementSet) -> Vec<Vector3<f64>> {
    let mean: Vector3<f64> =
        m.anchor_positions().iter().sum::<Vector3<f64>>() / m.anchor_count() as f64;
    m.anchor_positions().iter().map(|p| p - mean).collect()
}

/// The per-tag-block right-hand side before the vertical-axis correction:
/// `d² − σ² − ‖p1‖²`, centered within each `N·N1` block.
fn centered_blocks(m: &MeasurementSet) -> DVector<f64> {
    let n1 = m.anchor_count();
    let n_rep = m.repetitions();
    let block_len = n_rep * n1;
    let mut rhs = DVector::zeros(m.len());
    for l2 in 0..m.tag_count() {
        let base = l2 * block_len;
        let mut block_sum = 0.0;
        for l1 in 0..n1 {
            let anchor_norm2 = m.anchor_position(l1).norm_squared();
            let sigma = m.sigma(l1, l2);
            for i in 0..n_rep {
                let d = m.range(l1, l2, i);
                let value = d * d - sigma * sigma - anchor_norm2;
                rhs[base + l1 * n_rep + i] = value;
                block_sum += value;
            }
        }
        let mean = block_sum / block_len as f64;
        for row in 0..block_len {
            rhs[base + row] -= mean;
        }
    }
    rhs
}

/// Assembles the full right-hand side: centered, bias-corrected squared
/// ranges plus the known vertical-axis term `2·p̄1_z·p2_z`.
pub fn build_rhs(m: &MeasurementSet) -> DVector<f64> {
    let mut rhs = centered_blocks(m);
    let centered = centered_anchors(m);
    let n1 = m.anchor_count();
    let n_rep = m.repetitions();
    for l2 in 0..m.tag_count() {
        let tag_z = m.tag_position(l2).z;
        for (l1, anchor) in centered.iter().enumerate() {
            let correction = 2.0 * anchor.z * tag_z;
            let base = (l2 * n1 + l1) * n_rep;
            for i in 0..n_rep {
                rhs[base + i] += correction;
            }
        }
    }
    rhs
}

/// Builds the design matrix for given anchor/tag tracks and repetition
/// count, returning it with its column rank. Row order matches the
/// canonical measurement order.
pub fn design_matrix_from_positions(
    anchors: &[Vector3<f64>],
    tags: &[Vector3<f64>],
    n_rep: usize,
) -> (DMatrix<f64>, usize) {
    let mean: Vector3<f64> = anchors.iter().sum::<Vector3<f64>>() / anchors.len() as f64;
    let centered: Vec<Vector3<f64>> = anchors.iter().map(|p| p - mean).collect();
    let n = n_rep * anchors.len() * tags.len();
    let mut h = DMatrix::zeros(n, 5);
    let mut row = 0;
    for tag in tags {
        for anchor in &centered {
            let sin_coeff = 2.0 * (anchor.x * tag.y - anchor.y * tag.x);
            let cos_coeff = -2.0 * (anchor.x * tag.x + anchor.y * tag.y);
            for _ in 0..n_rep {
                h[(row, 0)] = sin_coeff;
                h[(row, 1)] = cos_coeff;
                h[(row, 2)] = -2.0 * anchor.x;
                h[(row, 3)] = -2.0 * anchor.y;
                h[(row, 4)] = -2.0 * anchor.z;
                row += 1;
            }
        }
    }
    let svs = h.clone().svd(false, false).singular_values;
    let max = svs.max();
    let rank = if max == 0.0 {
        0
    } else {
        svs.iter().filter(|&&s| s > RANK_THRESHOLD * max).count()
    };
    (h, rank)
}

/// Assembles the stacked linear system (design matrix, right-hand side
/// and rank) from a measurement set.
pub fn build_design_matrix(m: &MeasurementSet) -> LinearSystem {
    let (h, rank_h) =
        design_matrix_from_positions(m.anchor_positions(), m.tag_positions(), m.repetitions());
    let rhs = build_rhs(m);
    LinearSystem {
        n: m.len(),
        h,
        rhs,
        rank_h,
    }
}

/// Solves the unconstrained least squares by orthogonal factorization and
/// projects the rotation block onto SO(2).
///
/// Requires the design matrix to be full column rank; otherwise the
/// estimate does not exist and the violated path condition must be fixed.
pub fn solve_linear_step(sys: &LinearSystem) -> Result<FirstStepEstimate> {
    if sys.rank_h < 5 {
        return Err(Error::DegenerateGeometry(format!(
            "design matrix rank {} < 5: the anchor track must be non-coplanar and the tag \
             track non-coplanar with the target's odometry origin",
            sys.rank_h
        )));
    }
    let svd = sys.h.clone().svd(true, true);
    let eps = RANK_THRESHOLD * svd.singular_values.max();
    let y = svd
        .solve(&sys.rhs, eps)
        .map_err(|e| Error::DegenerateGeometry(format!("least-squares solve failed: {e}")))?;
    let x_hat = Vector2::new(y[0], y[1]);
    let t_hat = Vector3::new(y[2], y[3], y[4]);
    let constants = EstimatorConstants::new();
    let r_tilde_hat = constants.planar_block_from_sin_cos(&x_hat);
    let projected = project_to_so2(&r_tilde_hat)?;
    let theta_hat = YawAngle::new(projected[(1, 0)].atan2(projected[(0, 0)]));
    Ok(FirstStepEstimate {
        x_hat,
        r_tilde_hat,
        theta_hat,
        t_hat,
    })
}

/// The weighted maximum-likelihood cost
/// `Σ (d − ‖p1 − R·p2 − t‖)² / σ²` over all measurements.
pub fn cost(m: &MeasurementSet, tf: &FrameTransform) -> f64 {
    let mut total = 0.0;
    for l2 in 0..m.tag_count() {
        let mapped_tag = tf.apply(m.tag_position(l2));
        for l1 in 0..m.anchor_count() {
            let predicted = (m.anchor_position(l1) - mapped_tag).norm();
            let sigma = m.sigma(l1, l2);
            let w = 1.0 / (sigma * sigma);
            for i in 0..m.repetitions() {
                let r = m.range(l1, l2, i) - predicted;
                total += w * r * r;
            }
        }
    }
    total
}

/// Per-pair Jacobian/residual data at a linearization point.
struct PairLinearization {
    /// ∂(predicted range)/∂(θ, t)
    jac: Vector4<f64>,
    predicted: f64,
    weight: f64,
}

/// Linearizes every pair at `(theta, t)`; pairs whose residual direction
/// falls below [`RESIDUAL_NORM_FLOOR`] come back as `None`.
fn linearize_pairs(
    m: &MeasurementSet,
    theta: YawAngle,
    t: &Vector3<f64>,
) -> Vec<Option<PairLinearization>> {
    let rotation = yaw_rotation(theta);
    let constants = EstimatorConstants::new();
    // d/dθ R(θ̂ + θ) at θ = 0 equals R(θ̂)·(dR/dθ at 0)
    let rotation_rate = rotation.matrix() * constants.rotation_rate_matrix();
    let mut out = Vec::with_capacity(m.anchor_count() * m.tag_count());
    for l2 in 0..m.tag_count() {
        let tag = m.tag_position(l2);
        let mapped_tag = rotation.matrix() * tag + t;
        let turned_tag = rotation_rate * tag;
        for l1 in 0..m.anchor_count() {
            let f = m.anchor_position(l1) - mapped_tag;
            let norm = f.norm();
            if norm < RESIDUAL_NORM_FLOOR {
                out.push(None);
                continue;
            }
            let unit = f / norm;
            let sigma = m.sigma(l1, l2);
            out.push(Some(PairLinearization {
                jac: Vector4::new(-unit.dot(&turned_tag), -unit.x, -unit.y, -unit.z),
                predicted: norm,
                weight: 1.0 / (sigma * sigma),
            }));
        }
    }
    out
}

/// The n×4 Jacobian of predicted ranges with respect to `(θ, t)`,
/// evaluated at yaw `theta_hat` (increment zero) and translation `t_hat`.
///
/// Row `(l1, l2, i)` is `[−fᵀ·R(θ̂)·G·p2/‖f‖, −fᵀ/‖f‖]` with
/// `f = p1 − R(θ̂)·p2 − t̂` and `G` the yaw generator. Errors out if any
/// anchor coincides with a predicted tag position.
pub fn gn_jacobian(
    m: &MeasurementSet,
    theta_hat: YawAngle,
    t_hat: &Vector3<f64>,
) -> Result<DMatrix<f64>> {
    let pairs = linearize_pairs(m, theta_hat, t_hat);
    let mut jac = DMatrix::zeros(m.len(), 4);
    for (pair_idx, pair) in pairs.iter().enumerate() {
        let lin = pair.as_ref().ok_or_else(|| {
            Error::DegenerateGeometry(format!(
                "anchor coincides with a predicted tag position (pair index {pair_idx}); \
                 the range gradient is undefined"
            ))
        })?;
        let base = pair_idx * m.repetitions();
        for i in 0..m.repetitions() {
            for c in 0..4 {
                jac[(base + i, c)] = lin.jac[c];
            }
        }
    }
    Ok(jac)
}

/// Accumulated weighted normal equations over the kept pairs.
struct NormalSystem {
    normal: Matrix4<f64>,
    rhs: Vector4<f64>,
    dropped: usize,
}

fn accumulate_normal_equations(
    m: &MeasurementSet,
    theta: YawAngle,
    t: &Vector3<f64>,
) -> NormalSystem {
    let pairs = linearize_pairs(m, theta, t);
    let mut normal = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    let mut dropped = 0;
    for (pair_idx, pair) in pairs.iter().enumerate() {
        let Some(lin) = pair else {
            dropped += m.repetitions();
            continue;
        };
        let base = pair_idx * m.repetitions();
        // identical Jacobian rows across repetitions: accumulate the
        // residual sum once
        let mut residual_sum = 0.0;
        for i in 0..m.repetitions() {
            residual_sum += m.ranges()[base + i] - lin.predicted;
        }
        normal += lin.jac * lin.jac.transpose() * (lin.weight * m.repetitions() as f64);
        rhs += lin.jac * (lin.weight * residual_sum);
    }
    NormalSystem {
        normal,
        rhs,
        dropped,
    }
}

/// Solves the 4×4 weighted normal equations, enforcing the condition
/// floor on the normal matrix.
fn solve_normal(system: &NormalSystem) -> Result<Vector4<f64>> {
    let svd = system.normal.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(max > 0.0) || min < NORMAL_MATRIX_CONDITION_FLOOR * max {
        return Err(Error::DegenerateGeometry(format!(
            "Gauss-Newton normal matrix is numerically singular \
             (singular values {min:.3e}..{max:.3e})"
        )));
    }
    svd.solve(&system.rhs, 0.0)
        .map_err(|e| Error::DegenerateGeometry(format!("normal solve failed: {e}")))
}

/// One Gauss-Newton step of the weighted maximum-likelihood cost from the
/// first-step estimate. The raw increment is applied as-is — no step
/// control — and the refined yaw is `θ̂ + Δθ`.
pub fn gn_one_step(m: &MeasurementSet, first: &FirstStepEstimate) -> Result<RefinedEstimate> {
    let start = Instant::now();
    let system = accumulate_normal_equations(m, first.theta_hat, &first.t_hat);
    let delta = solve_normal(&system)?;
    let theta = YawAngle::new(first.theta_hat.radians() + delta[0]);
    let t = first.t_hat + Vector3::new(delta[1], delta[2], delta[3]);
    let transform = FrameTransform::new(theta, t);
    let cost_before = cost(m, &first.transform());
    let cost_after = cost(m, &transform);
    Ok(RefinedEstimate {
        transform,
        delta_theta: delta[0],
        cost_before,
        cost_after,
        wall_time: start.elapsed().as_secs_f64(),
        iterations: 1,
        converged: true,
        dropped_measurements: system.dropped,
    })
}

/// Runs the full two-step pipeline, returning each stage.
pub fn two_step_pipeline(
    m: &MeasurementSet,
) -> Result<(LinearSystem, FirstStepEstimate, RefinedEstimate)> {
    let start = Instant::now();
    let sys = build_design_matrix(m);
    let first = solve_linear_step(&sys)?;
    let mut refined = gn_one_step(m, &first)?;
    refined.wall_time = start.elapsed().as_secs_f64();
    Ok((sys, first, refined))
}

/// Closed-form first step followed by one Gauss-Newton refinement;
/// `wall_time` covers the whole pipeline.
pub fn two_step_estimate(m: &MeasurementSet) -> Result<RefinedEstimate> {
    two_step_pipeline(m).map(|(_, _, refined)| refined)
}

/// Iterated Gauss-Newton reference: repeats the refinement step with
/// step-halving acceptance until the increment norm drops below `tol` or
/// `max_iter` is reached. Non-convergence is reported in the result, not
/// as an error.
pub fn ml_oracle_full_gn(
    m: &MeasurementSet,
    init: &FrameTransform,
    tol: f64,
    max_iter: usize,
) -> Result<RefinedEstimate> {
    const MAX_HALVINGS: usize = 30;
    let start = Instant::now();
    let cost_init = cost(m, init);
    let mut theta = init.yaw();
    let mut t = init.translation;
    let mut current_cost = cost_init;
    let mut delta_total = 0.0;
    let mut converged = false;
    let mut dropped = 0;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let system = accumulate_normal_equations(m, theta, &t);
        dropped = system.dropped;
        let delta = solve_normal(&system)?;

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand_theta = YawAngle::new(theta.radians() + alpha * delta[0]);
            let cand_t = t + alpha * Vector3::new(delta[1], delta[2], delta[3]);
            let cand_cost = cost(m, &FrameTransform::new(cand_theta, cand_t));
            if cand_cost <= current_cost {
                theta = cand_theta;
                t = cand_t;
                current_cost = cand_cost;
                delta_total += alpha * delta[0];
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no descent direction at this resolution: treat as converged
            converged = true;
            break;
        }
        if delta.norm() < tol {
            converged = true;
            break;
        }
    }

    Ok(RefinedEstimate {
        transform: FrameTransform::new(theta, t),
        delta_theta: delta_total,
        cost_before: cost_init,
        cost_after: current_cost,
        wall_time: start.elapsed().as_secs_f64(),
        iterations,
        converged,
        dropped_measurements: dropped,
    })
}

/// Result of the brute-force maximum-likelihood grid search.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub transform: FrameTransform,
    pub cost: f64,
    /// The coarse argmin landed on the translation box boundary — the
    /// optimum may lie outside the box.
    pub boundary_hit: bool,
}

/// Exhaustive minimization of the maximum-likelihood cost over a yaw grid
/// and a translation lattice, refined to 1e-6 resolution by a halving
/// coordinate descent. Small instances only.
pub fn grid_search_oracle(
    m: &MeasurementSet,
    theta_steps: usize,
    t_box: (Vector3<f64>, Vector3<f64>),
    t_steps: usize,
) -> Result<GridSearchResult> {
    const MAX_GRID_POINTS: usize = 100_000_000;
    if theta_steps < 4 || t_steps < 2 {
        return Err(Error::InvalidConfig(
            "grid search needs at least 4 yaw steps and 2 lattice steps per axis".into(),
        ));
    }
    let (lo, hi) = t_box;
    if (0..3).any(|k| hi[k] <= lo[k]) {
        return Err(Error::InvalidConfig("translation box must have positive extent".into()));
    }
    let points = theta_steps
        .checked_mul(t_steps.pow(3))
        .filter(|&p| p <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "grid of {theta_steps}·{t_steps}³ points exceeds the evaluation budget"
            ))
        })?;
    let _ = points;

    let spacing: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]) / (t_steps - 1) as f64).collect();
    let mut best_cost = f64::INFINITY;
    let mut best = FrameTransform::new(YawAngle::new(0.0), lo);
    let mut best_idx = [0usize; 3];
    for it in 0..theta_steps {
        let theta = YawAngle::new(std::f64::consts::TAU * it as f64 / theta_steps as f64);
        for ix in 0..t_steps {
            for iy in 0..t_steps {
                for iz in 0..t_steps {
                    let t = Vector3::new(
                        lo.x + spacing[0] * ix as f64,
                        lo.y + spacing[1] * iy as f64,
                        lo.z + spacing[2] * iz as f64,
                    );
                    let tf = FrameTransform::new(theta, t);
                    let c = cost(m, &tf);
                    if c < best_cost {
                        best_cost = c;
                        best = tf;
                        best_idx = [ix, iy, iz];
                    }
                }
            }
        }
    }
    let boundary_hit = best_idx.iter().any(|&i| i == 0 || i == t_steps - 1);

    // halving coordinate descent down to 1e-6 resolution
    let mut theta = best.yaw().radians();
    let mut t = best.translation;
    let mut theta_step = std::f64::consts::TAU / theta_steps as f64 / 2.0;
    let mut t_step = spacing.iter().cloned().fold(0.0, f64::max) / 2.0;
    while theta_step > 1e-6 || t_step > 1e-6 {
        let mut improved = true;
        while improved {
            improved = false;
            for (delta_theta, delta_t) in [
                (theta_step, Vector3::zeros()),
                (-theta_step, Vector3::zeros()),
                (0.0, Vector3::new(t_step, 0.0, 0.0)),
                (0.0, Vector3::new(-t_step, 0.0, 0.0)),
                (0.0, Vector3::new(0.0, t_step, 0.0)),
                (0.0, Vector3::new(0.0, -t_step, 0.0)),
                (0.0, Vector3::new(0.0, 0.0, t_step)),
                (0.0, Vector3::new(0.0, 0.0, -t_step)),
            ] {
                let cand = FrameTransform::new(YawAngle::new(theta + delta_theta), t + delta_t);
                let c = cost(m, &cand);
                if c < best_cost {
                    best_cost = c;
                    theta += delta_theta;
                    t += delta_t;
                    improved = true;
                }
            }
        }
        theta_step = (theta_step / 2.0).max(5e-7);
        t_step = (t_step / 2.0).max(5e-7);
        if theta_step <= 5e-7 && t_step <= 5e-7 {
            break;
        }
    }

    Ok(GridSearchResult {
        transform: FrameTransform::new(YawAngle::new(theta), t),
        cost: best_cost,
        boundary_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{kronecker, vec_column_major};
    use crate::measurement::synthesize_ranges;
    use crate::scenario::ScenarioConfig;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    /// Direct construction of a noise-free measurement set from known
    /// tracks and a known transform; independent of the scenario
    /// synthesis path.
    fn noise_free_set(
        anchors: Vec<Vector3<f64>>,
        tags: Vec<Vector3<f64>>,
        truth: &FrameTransform,
        sigma: f64,
        n_rep: usize,
    ) -> MeasurementSet {
        let mut ranges = Vec::new();
        for tag in &tags {
            let mapped = truth.apply(tag);
            for anchor in &anchors {
                let d = (anchor - mapped).norm();
                for _ in 0..n_rep {
                    ranges.push(d);
                }
            }
        }
        let sigmas = vec![sigma; anchors.len() * tags.len()];
        MeasurementSet::new(anchors, tags, ranges, sigmas, n_rep).unwrap()
    }

    fn toy_tracks() -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let anchors = vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(4.0, -1.0, 2.0),
            Vector3::new(-2.0, 5.0, 6.0),
            Vector3::new(3.0, 2.0, -4.0),
        ];
        let tags = vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(6.0, 1.0, 3.0),
            Vector3::new(-1.0, 7.0, 5.0),
        ];
        (anchors, tags)
    }

    fn toy_truth() -> FrameTransform {
        FrameTransform::new(YawAngle::from_degrees(60.0), Vector3::new(20.0, 20.0, 20.0))
    }

    #[test]
    fn centered_blocks_sum_to_zero() {
        let config = ScenarioConfig::generate_default(2, 2, 10.0, 50).unwrap();
        let m = synthesize_ranges(&config).unwrap();
        let blocks = centered_blocks(&m);
        let block_len = m.repetitions() * m.anchor_count();
        for l2 in 0..m.tag_count() {
            let sum: f64 = (0..block_len).map(|r| blocks[l2 * block_len + r]).sum();
            assert!(
                sum.abs() < 1e-9 * m.len() as f64,
                "block {l2} sum {sum}"
            );
        }
    }

    #[test]
    fn noise_free_rhs_matches_design_times_truth() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1e-12, 1);
        let sys = build_design_matrix(&m);
        let (s, c) = truth.yaw().radians().sin_cos();
        let y_true = DVector::from_column_slice(&[
            s,
            c,
            truth.translation.x,
            truth.translation.y,
            truth.translation.z,
        ]);
        let reconstructed = &sys.h * &y_true;
        assert!(
            (&sys.rhs - &reconstructed).amax() < 1e-9 * sys.rhs.amax().max(1.0),
            "max deviation {:.3e}",
            (&sys.rhs - &reconstructed).amax()
        );
    }

    #[test]
    fn block_constant_shift_is_annihilated() {
        let config = ScenarioConfig::generate_default(1, 2, 10.0, 51).unwrap();
        let m = synthesize_ranges(&config).unwrap();
        let rhs = build_rhs(&m);

        // add a constant to all squared ranges of tag block 1
        let c = 37.5;
        let shifted_ranges: Vec<f64> = m
            .iter_rows()
            .map(|(_, l2, _, d, _)| if l2 == 1 { (d * d + c).sqrt() } else { d })
            .collect();
        let sigmas: Vec<f64> = (0..m.tag_count())
            .flat_map(|l2| (0..m.anchor_count()).map(move |l1| (l1, l2)))
            .map(|(l1, l2)| m.sigma(l1, l2))
            .collect();
        let shifted = MeasurementSet::new(
            m.anchor_positions().to_vec(),
            m.tag_positions().to_vec(),
            shifted_ranges,
            sigmas,
            m.repetitions(),
        )
        .unwrap();
        let rhs_shifted = build_rhs(&shifted);
        assert!((rhs - rhs_shifted).amax() < 1e-9);
    }

    #[test]
    fn design_matrix_dimensions_at_default_scale() {
        let config = ScenarioConfig::generate_default(1, 1, 10.0, 52).unwrap();
        let m = synthesize_ranges(&config).unwrap();
        let sys = build_design_matrix(&m);
        assert_eq!(sys.h.nrows(), 1200);
        assert_eq!(sys.h.ncols(), 5);
        assert_eq!(sys.n, 1200);
        assert_eq!(sys.rank_h, 5);
    }

    #[test]
    fn coplanar_anchor_track_loses_rank() {
        let anchors = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let tags = vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(6.0, 1.0, 3.0),
            Vector3::new(-1.0, 7.0, 5.0),
        ];
        let (_, rank) = design_matrix_from_positions(&anchors, &tags, 1);
        assert!(rank <= 4, "rank {rank}");
    }

    #[test]
    fn design_matrix_matches_kronecker_construction() {
        let (anchors, tags) = toy_tracks();
        let n_rep = 2;
        let m = noise_free_set(anchors.clone(), tags.clone(), &toy_truth(), 1.0, n_rep);
        let sys = build_design_matrix(&m);

        // reference assembly straight from the stacked definition
        let nn1 = n_rep * anchors.len();
        let mean: Vector3<f64> = anchors.iter().sum::<Vector3<f64>>() / anchors.len() as f64;
        let mut p1_bar = DMatrix::zeros(3, nn1);
        for (l1, a) in anchors.iter().enumerate() {
            for i in 0..n_rep {
                p1_bar.set_column(l1 * n_rep + i, &(a - mean));
            }
        }
        let p2 = DMatrix::from_fn(3, tags.len(), |r, c| tags[c][r]);
        let constants = EstimatorConstants::new();
        let selector = DMatrix::from_fn(9, 2, |r, c| constants.selector[(r, c)]);
        let ones = DMatrix::from_element(tags.len(), 1, 1.0);
        let h1 = kronecker(&p2.transpose(), &p1_bar.transpose()) * selector * -2.0;
        let h2 = kronecker(&ones, &p1_bar.transpose()) * -2.0;
        for r in 0..sys.h.nrows() {
            for c in 0..5 {
                let expected = if c < 2 { h1[(r, c)] } else { h2[(r, c - 2)] };
                assert_abs_diff_eq!(sys.h[(r, c)], expected, epsilon = 1e-12);
            }
        }
        // the vertical-axis correction in the rhs matches its vectorized form
        let gamma2 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let correction = kronecker(&p2.transpose(), &p1_bar.transpose())
            * vec_column_major(&(&gamma2 * gamma2.transpose()))
            * 2.0;
        let uncorrected = centered_blocks(&m);
        let rhs_ref = uncorrected + correction;
        assert!((&sys.rhs - &rhs_ref).amax() < 1e-9);
    }

    #[test]
    fn first_step_recovers_truth_without_noise() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1e-12, 1);
        let sys = build_design_matrix(&m);
        let first = solve_linear_step(&sys).unwrap();
        assert!(first.theta_hat.distance_to(truth.yaw()) < 1e-6);
        assert!((first.t_hat - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn first_step_translation_equivariance() {
        let mut config = ScenarioConfig::generate_default(1, 1, 10.0, 53).unwrap();
        config.set_uniform_sigma(1.0);
        let m = synthesize_ranges(&config).unwrap();
        let first = solve_linear_step(&build_design_matrix(&m)).unwrap();

        let delta = Vector3::new(5.0, -3.0, 2.0);
        let shifted_anchors: Vec<Vector3<f64>> =
            m.anchor_positions().iter().map(|a| a + delta).collect();
        let sigmas: Vec<f64> = (0..m.tag_count())
            .flat_map(|l2| (0..m.anchor_count()).map(move |l1| (l1, l2)))
            .map(|(l1, l2)| m.sigma(l1, l2))
            .collect();
        let shifted = MeasurementSet::new(
            shifted_anchors,
            m.tag_positions().to_vec(),
            m.ranges().to_vec(),
            sigmas,
            m.repetitions(),
        )
        .unwrap();
        let first_shifted = solve_linear_step(&build_design_matrix(&shifted)).unwrap();

        assert!((first_shifted.t_hat - (first.t_hat + delta)).norm() < 1e-9);
        assert!((first_shifted.x_hat - first.x_hat).norm() < 1e-9);
    }

    #[test]
    fn rank_deficient_system_is_rejected() {
        let anchors = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let tags = vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(6.0, 1.0, 3.0),
            Vector3::new(-1.0, 7.0, 5.0),
        ];
        let m = noise_free_set(anchors, tags, &toy_truth(), 1.0, 1);
        let sys = build_design_matrix(&m);
        assert!(matches!(
            solve_linear_step(&sys),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn cost_examples() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors.clone(), tags.clone(), &truth, 1.0, 1);
        assert_abs_diff_eq!(cost(&m, &truth), 0.0, epsilon = 1e-18);

        // single measurement, offset by exactly 1, unit sigma
        let anchor = vec![anchors[0]];
        let tag = vec![tags[0]];
        let d_true = (anchors[0] - truth.apply(&tags[0])).norm();
        let single =
            MeasurementSet::new(anchor, tag, vec![d_true + 1.0], vec![1.0], 1).unwrap();
        assert_abs_diff_eq!(cost(&single, &truth), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_at_truth_has_chi_square_mean() {
        let mut config = ScenarioConfig::generate_default(1, 1, 10.0, 54).unwrap();
        config.repetitions = 5; // n = 60 per trial
        let trials = 400;
        let mut total = 0.0;
        let mut n = 0usize;
        for seed in 0..trials {
            config.seed = 1000 + seed;
            let m = synthesize_ranges(&config).unwrap();
            total += cost(&m, &config.ground_truth);
            n = m.len();
        }
        let mean = total / trials as f64;
        assert!(
            (mean - n as f64).abs() < 0.05 * n as f64,
            "mean cost {mean} vs n {n}"
        );
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let config = ScenarioConfig::generate_default(2, 1, 10.0, 55).unwrap();
        let m = synthesize_ranges(&config).unwrap();
        let theta = YawAngle::from_degrees(58.0);
        let t = Vector3::new(19.5, 20.5, 20.0);
        let jac = gn_jacobian(&m, theta, &t).unwrap();

        let h = 1e-6;
        let predicted = |dtheta: f64, dt: Vector3<f64>| -> Vec<f64> {
            let tf = FrameTransform::new(YawAngle::new(theta.radians() + dtheta), t + dt);
            let mut out = Vec::with_capacity(m.len());
            for l2 in 0..m.tag_count() {
                for l1 in 0..m.anchor_count() {
                    let p = m.predicted_range(l1, l2, &tf);
                    for _ in 0..m.repetitions() {
                        out.push(p);
                    }
                }
            }
            out
        };
        let columns = [
            (predicted(h, Vector3::zeros()), predicted(-h, Vector3::zeros())),
            (
                predicted(0.0, Vector3::new(h, 0.0, 0.0)),
                predicted(0.0, Vector3::new(-h, 0.0, 0.0)),
            ),
            (
                predicted(0.0, Vector3::new(0.0, h, 0.0)),
                predicted(0.0, Vector3::new(0.0, -h, 0.0)),
            ),
            (
                predicted(0.0, Vector3::new(0.0, 0.0, h)),
                predicted(0.0, Vector3::new(0.0, 0.0, -h)),
            ),
        ];
        for (c, (plus, minus)) in columns.iter().enumerate() {
            for r in 0..m.len() {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                let rel = (jac[(r, c)] - fd).abs() / jac[(r, c)].abs().max(1e-6);
                assert!(rel < 1e-5, "row {r} col {c}: analytic {} fd {fd}", jac[(r, c)]);
            }
        }
    }

    #[test]
    fn yaw_column_vanishes_for_axial_tags() {
        let (anchors, _) = toy_tracks();
        let tags = vec![Vector3::new(0.0, 0.0, 10.0), Vector3::new(0.0, 0.0, -4.0)];
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1.0, 1);
        let jac = gn_jacobian(&m, truth.yaw(), &truth.translation).unwrap();
        for r in 0..m.len() {
            assert_abs_diff_eq!(jac[(r, 0)], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_rows_are_negative_unit_vectors() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1.0, 1);
        let jac = gn_jacobian(&m, YawAngle::from_degrees(55.0), &Vector3::new(19.0, 21.0, 20.0))
            .unwrap();
        for r in 0..m.len() {
            let t_part = Vector3::new(jac[(r, 1)], jac[(r, 2)], jac[(r, 3)]);
            assert_abs_diff_eq!(t_part.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_rejects_coincident_geometry() {
        let anchors = vec![Vector3::new(20.0, 20.0, 30.0), Vector3::new(1.0, 2.0, 3.0)];
        let tags = vec![Vector3::new(0.0, 0.0, 10.0)];
        let truth = toy_truth(); // maps the tag exactly onto anchor 0
        let m = MeasurementSet::new(anchors, tags, vec![0.0, 1.0], vec![1.0, 1.0], 1).unwrap();
        assert!(matches!(
            gn_jacobian(&m, truth.yaw(), &truth.translation),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn gn_step_is_a_fixed_point_on_noise_free_data() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1e-12, 1);
        let (_, first, refined) = two_step_pipeline(&m).unwrap();
        assert!(refined.delta_theta.abs() < 1e-9);
        assert!((refined.transform.translation - first.t_hat).norm() < 1e-9);
    }

    #[test]
    fn gn_step_does_not_increase_cost_on_seeded_noisy_instance() {
        let mut config = ScenarioConfig::generate_default(1, 1, 10.0, 56).unwrap();
        config.set_uniform_sigma(1.0);
        let m = synthesize_ranges(&config).unwrap();
        let refined = two_step_estimate(&m).unwrap();
        assert!(
            refined.cost_after <= refined.cost_before,
            "cost went from {} to {}",
            refined.cost_before,
            refined.cost_after
        );
    }

    #[test]
    fn two_step_recovers_truth_in_noiseless_limit() {
        let mut config = ScenarioConfig::generate_default(1, 1, 10.0, 57).unwrap();
        config.set_uniform_sigma(1e-12);
        let m = synthesize_ranges(&config).unwrap();
        let refined = two_step_estimate(&m).unwrap();
        let truth = config.ground_truth;
        assert!(refined.transform.yaw().distance_to(truth.yaw()) < 1e-6);
        assert!((refined.transform.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn full_gn_converges_immediately_at_truth_on_noise_free_data() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1.0, 1);
        let refined = ml_oracle_full_gn(&m, &truth, 1e-12, 100).unwrap();
        assert!(refined.converged);
        assert!(refined.iterations <= 1);
        assert!((refined.transform.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn full_gn_cost_never_exceeds_one_step_cost() {
        let mut config = ScenarioConfig::generate_default(1, 1, 10.0, 58).unwrap();
        config.set_uniform_sigma(1.0);
        let m = synthesize_ranges(&config).unwrap();
        let (_, first, one_step) = two_step_pipeline(&m).unwrap();
        let full = ml_oracle_full_gn(&m, &first.transform(), 1e-12, 100).unwrap();
        assert!(full.cost_after <= one_step.cost_after + 1e-9);
    }

    #[test]
    fn grid_search_recovers_truth_on_small_noise_free_instance() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1.0, 1);
        let lo = truth.translation - Vector3::new(3.0, 3.0, 3.0);
        let hi = truth.translation + Vector3::new(3.5, 3.5, 3.5);
        let result = grid_search_oracle(&m, 60, (lo, hi), 9).unwrap();
        assert!(!result.boundary_hit);
        assert!(result.transform.yaw().distance_to(truth.yaw()) < 1e-4);
        assert!((result.transform.translation - truth.translation).norm() < 1e-4);
    }

    #[test]
    fn grid_search_flags_box_excluding_optimum() {
        let (anchors, tags) = toy_tracks();
        let truth = toy_truth();
        let m = noise_free_set(anchors, tags, &truth, 1.0, 1);
        let lo = Vector3::new(0.0, 0.0, 0.0);
        let hi = Vector3::new(5.0, 5.0, 5.0);
        let result = grid_search_oracle(&m, 24, (lo, hi), 6).unwrap();
        assert!(result.boundary_hit);
    }

    #[test]
    fn grid_search_rejects_oversized_grids() {
        let (anchors, tags) = toy_tracks();
        let m = noise_free_set(anchors, tags, &toy_truth(), 1.0, 1);
        let box_ = (Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0));
        assert!(matches!(
            grid_search_oracle(&m, 1000, box_, 1000),
            Err(Error::InvalidConfig(_))
        ));
    }
}
