//! Estimate reports and their JSON serialization.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimator::{ml_oracle_full_gn, two_step_pipeline};
use crate::measurement::MeasurementSet;

/// Everything a single estimation run produces, in file-ready form.
/// Angles are radians, lengths meters, times seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    /// First-step yaw estimate (after SO(2) projection).
    pub theta_hat_rad: f64,
    /// Gauss-Newton yaw increment.
    pub delta_theta_rad: f64,
    /// Refined yaw: `theta_hat + delta_theta`, wrapped to `[0, 2π)`.
    pub theta_refined_rad: f64,
    /// First-step translation estimate.
    pub t_first_m: [f64; 3],
    /// Refined translation estimate.
    pub t_hat_m: [f64; 3],
    /// Cost of the first-step estimate under the weighted ML objective.
    pub cost_first: f64,
    /// Cost of the refined estimate.
    pub cost_refined: f64,
    pub rank_h: usize,
    pub n: usize,
    pub wall_time_s: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
}

/// Iterated Gauss-Newton reference run, for `--with-oracle` reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub theta_rad: f64,
    pub t_m: [f64; 3],
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `cost_refined − oracle cost`: how much the single step gave up
    /// against iterating to convergence.
    pub cost_gap: f64,
    pub wall_time_s: f64,
}

/// Runs the two-step pipeline (and optionally the iterated oracle on the
/// same data) and assembles the report.
pub fn estimate_with_report(
    m: &MeasurementSet,
    seed: u64,
    with_oracle: bool,
) -> Result<EstimateReport> {
    let (sys, first, refined) = two_step_pipeline(m)?;
    let oracle = if with_oracle {
        let start = Instant::now();
        let run = ml_oracle_full_gn(m, &first.transform(), 1e-12, 100)?;
        let t = run.transform.translation;
        Some(OracleReport {
            theta_rad: run.transform.yaw().radians(),
            t_m: [t.x, t.y, t.z],
            cost: run.cost_after,
            iterations: run.iterations,
            converged: run.converged,
            cost_gap: refined.cost_after - run.cost_after,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    } else {
        None
    };
    let t_refined = refined.transform.translation;
    Ok(EstimateReport {
        theta_hat_rad: first.theta_hat.radians(),
        delta_theta_rad: refined.delta_theta,
        theta_refined_rad: refined.transform.yaw().radians(),
        t_first_m: [first.t_hat.x, first.t_hat.y, first.t_hat.z],
        t_hat_m: [t_refined.x, t_refined.y, t_refined.z],
        cost_first: refined.cost_before,
        cost_refined: refined.cost_after,
        rank_h: sys.rank_h,
        n: sys.n,
        wall_time_s: refined.wall_time,
        seed,
        oracle,
    })
}

impl EstimateReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
