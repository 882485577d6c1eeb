//! Monte Carlo sweep harness: RMSE aggregation over randomized trials,
//! timing tables and CSV export.
//!
//! Each trial draws a fresh random trajectory, synthesizes one
//! measurement set and runs every requested method on that same set.
//! Trial seeds depend only on the trial index, not on the sweep value, so
//! sweep points share random numbers and trend comparisons are sharp.
//! Trials run on a worker pool but results are merged in seed order;
//! parallel and serial runs produce identical summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimator::{build_design_matrix, ml_oracle_full_gn, solve_linear_step, two_step_estimate};
use crate::geometry::FrameTransform;
use crate::measurement::{apply_speed_distortion, default_request_times, synthesize_ranges, MeasurementSet};
use crate::scenario::{generate_schedule, ScenarioConfig, ScenarioFile};
use crate::streams;

/// Estimation routines the harness can benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoStep,
    FirstStepOnly,
    FullGnOracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::TwoStep => "two_step",
            Method::FirstStepOnly => "first_step_only",
            Method::FullGnOracle => "full_gn_oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two_step" => Ok(Method::TwoStep),
            "first_step_only" => Ok(Method::FirstStepOnly),
            "full_gn_oracle" => Ok(Method::FullGnOracle),
            other => Err(Error::Format(format!("unknown method {other:?}"))),
        }
    }

    /// Runs the method on a measurement set, timing only the estimation.
    fn run(&self, m: &MeasurementSet) -> Result<(FrameTransform, f64)> {
        let start = Instant::now();
        let transform = match self {
            Method::TwoStep => two_step_estimate(m)?.transform,
            Method::FirstStepOnly => {
                let sys = build_design_matrix(m);
                solve_linear_step(&sys)?.transform()
            }
            Method::FullGnOracle => {
                let sys = build_design_matrix(m);
                let first = solve_linear_step(&sys)?;
                ml_oracle_full_gn(m, &first.transform(), 1e-12, 100)?.transform
            }
        };
        Ok((transform, start.elapsed().as_secs_f64()))
    }
}

/// The quantity varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "r_max")]
    RMax,
    #[serde(rename = "t_norm")]
    TranslationNorm,
    #[serde(rename = "speed")]
    Speed,
    #[serde(rename = "n_repetitions")]
    Repetitions,
}

/// A Monte Carlo experiment: a base scenario, one swept variable, and
/// the methods to compare at each sweep point.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Template scenario; its schedule is resampled per trial and its
    /// seed is the base of all trial seeds.
    pub base: ScenarioConfig,
    pub sweep_variable: SweepVariable,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::InvalidConfig("sweep_values must be nonempty".into()));
        }
        if self.sweep_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "sweep_values must be strictly increasing".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method required".into()));
        }
        if self.sweep_variable == SweepVariable::TranslationNorm
            && self.base.ground_truth.translation.norm() < 1e-12
        {
            return Err(Error::InvalidConfig(
                "t_norm sweep needs a nonzero base translation direction".into(),
            ));
        }
        Ok(())
    }
}

/// One method run on one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub sweep_value: f64,
    pub method: Method,
    pub truth: FrameTransform,
    pub estimate: Option<FrameTransform>,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn success(&self) -> bool {
        self.error.is_none()
    }
}

/// Aggregates for one (sweep value, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sweep_value: f64,
    pub method: Method,
    pub rmse_t: f64,
    pub rmse_r: f64,
    pub mean_time: f64,
    pub failures: usize,
    pub trials: usize,
}

/// Full sweep output: one point per (sweep value, method), value-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    pub seed_base: u64,
}

/// Root mean square translation error `√(Σ‖t̂−t_o‖²/L)`.
pub fn rmse_translation(estimates: &[FrameTransform], truths: &[FrameTransform]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::InvalidConfig(format!(
            "rmse needs equal-length nonempty lists, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e.translation - t.translation).norm_squared())
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Root mean square rotation error `√(Σ‖R̂−R_o‖_F²/L)`.
pub fn rmse_rotation(estimates: &[FrameTransform], truths: &[FrameTransform]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::InvalidConfig(format!(
            "rmse needs equal-length nonempty lists, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e.rotation.matrix() - t.rotation.matrix()).norm_squared())
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Applies one sweep value to a copy of the base scenario.
fn configure_trial(
    base: &ScenarioConfig,
    variable: SweepVariable,
    value: f64,
    trial_seed: u64,
) -> Result<ScenarioConfig> {
    let mut config = base.clone();
    config.seed = trial_seed;
    match variable {
        SweepVariable::Sigma => config.set_uniform_sigma(value),
        SweepVariable::RMax => config.r_max = value,
        SweepVariable::TranslationNorm => {
            let direction = base.ground_truth.translation.normalize();
            config.ground_truth =
                FrameTransform::new(base.ground_truth.yaw(), direction * value);
        }
        SweepVariable::Speed => config.speed = value,
        SweepVariable::Repetitions => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "repetition sweep values must be positive integers, got {value}"
                )));
            }
            config.repetitions = value as usize;
        }
    }
    config.schedule = generate_schedule(
        &config.layout,
        config.r_max,
        &mut streams::rng(trial_seed, streams::TRAJECTORY),
    )?;
    Ok(config)
}

/// Synthesizes the trial's measurement set, through the distortion path
/// when the scenario is in motion.
fn synthesize_trial(config: &ScenarioConfig) -> Result<MeasurementSet> {
    if config.speed > 0.0 && config.latency > 0.0 {
        let times = default_request_times(config.schedule.params().k);
        apply_speed_distortion(config, &times)
    } else {
        synthesize_ranges(config)
    }
}

fn run_trial(
    spec: &ExperimentSpec,
    value: f64,
    trial: usize,
) -> Vec<TrialResult> {
    let trial_seed = streams::derive(spec.base.seed, streams::TRIAL.wrapping_add(trial as u64));
    let prepared = configure_trial(&spec.base, spec.sweep_variable, value, trial_seed)
        .and_then(|config| synthesize_trial(&config).map(|m| (config, m)));
    match prepared {
        Ok((config, m)) => spec
            .methods
            .iter()
            .map(|&method| match method.run(&m) {
                Ok((estimate, wall_time)) => TrialResult {
                    seed: trial_seed,
                    sweep_value: value,
                    method,
                    truth: config.ground_truth,
                    estimate: Some(estimate),
                    wall_time,
                    error: None,
                },
                Err(e) => TrialResult {
                    seed: trial_seed,
                    sweep_value: value,
                    method,
                    truth: config.ground_truth,
                    estimate: None,
                    wall_time: 0.0,
                    error: Some(e.to_string()),
                },
            })
            .collect(),
        Err(e) => spec
            .methods
            .iter()
            .map(|&method| TrialResult {
                seed: trial_seed,
                sweep_value: value,
                method,
                truth: spec.base.ground_truth,
                estimate: None,
                wall_time: 0.0,
                error: Some(e.to_string()),
            })
            .collect(),
    }
}

/// Runs the full sweep: `trials` independent seeded trials per sweep
/// value, every requested method on the same per-trial measurement set.
/// Per-trial failures are counted, never fatal.
pub fn run_monte_carlo(spec: &ExperimentSpec) -> Result<(SweepSummary, Vec<TrialResult>)> {
    spec.validate()?;
    let mut all_trials = Vec::new();
    let mut points = Vec::new();
    for &value in &spec.sweep_values {
        let trial_results: Vec<Vec<TrialResult>> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| run_trial(spec, value, trial))
            .collect();
        for &method in &spec.methods {
            let mut estimates = Vec::new();
            let mut truths = Vec::new();
            let mut times = Vec::new();
            let mut failures = 0usize;
            for per_trial in &trial_results {
                for r in per_trial.iter().filter(|r| r.method == method) {
                    match &r.estimate {
                        Some(e) => {
                            estimates.push(*e);
                            truths.push(r.truth);
                            times.push(r.wall_time);
                        }
                        None => failures += 1,
                    }
                }
            }
            let (rmse_t, rmse_r) = if estimates.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    rmse_translation(&estimates, &truths)?,
                    rmse_rotation(&estimates, &truths)?,
                )
            };
            let mean_time = if times.is_empty() {
                f64::NAN
            } else {
                times.iter().sum::<f64>() / times.len() as f64
            };
            points.push(SweepPoint {
                sweep_value: value,
                method,
                rmse_t,
                rmse_r,
                mean_time,
                failures,
                trials: spec.trials,
            });
        }
        all_trials.extend(trial_results.into_iter().flatten());
    }
    Ok((
        SweepSummary {
            points,
            seed_base: spec.base.seed,
        },
        all_trials,
    ))
}

/// Mean wall time per estimate for each method, over `runs` timed runs
/// after `warmups` discarded ones. Runs serially; measurement synthesis
/// is excluded from the timers.
pub fn timing_report(
    base: &ScenarioConfig,
    methods: &[Method],
    runs: usize,
    warmups: usize,
) -> Result<Vec<(Method, f64)>> {
    if runs == 0 {
        return Err(Error::InvalidConfig("timing needs at least one run".into()));
    }
    let mut totals = vec![0.0f64; methods.len()];
    for run in 0..warmups + runs {
        let trial_seed = streams::derive(base.seed, streams::TRIAL.wrapping_add(run as u64));
        let mut config = base.clone();
        config.seed = trial_seed;
        config.schedule = generate_schedule(
            &config.layout,
            config.r_max,
            &mut streams::rng(trial_seed, streams::TRAJECTORY),
        )?;
        let m = synthesize_trial(&config)?;
        for (idx, method) in methods.iter().enumerate() {
            let (_, elapsed) = method.run(&m)?;
            if run >= warmups {
                totals[idx] += elapsed;
            }
        }
    }
    Ok(methods
        .iter()
        .zip(totals)
        .map(|(&m, total)| (m, total / runs as f64))
        .collect())
}

// --- experiment files ("rte-experiment/1") --------------------------------

pub const EXPERIMENT_SCHEMA: &str = "rte-experiment/1";

/// On-disk experiment document. The embedded scenario provides the
/// layout, noise, truth and seed base; any schedule it carries is ignored
/// because every trial samples a fresh one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub schema: String,
    pub base: ScenarioFile,
    pub sweep_variable: SweepVariable,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
}

impl ExperimentFile {
    pub fn from_spec(spec: &ExperimentSpec) -> Self {
        ExperimentFile {
            schema: EXPERIMENT_SCHEMA.to_string(),
            base: ScenarioFile::from_config(&spec.base),
            sweep_variable: spec.sweep_variable,
            sweep_values: spec.sweep_values.clone(),
            trials: spec.trials,
            methods: spec.methods.clone(),
        }
    }

    pub fn into_spec(mut self) -> Result<ExperimentSpec> {
        if self.schema != EXPERIMENT_SCHEMA {
            return Err(Error::Format(format!(
                "expected schema {EXPERIMENT_SCHEMA:?}, got {:?}",
                self.schema
            )));
        }
        // the per-trial schedules are resampled; a missing one is fine
        self.base.schedule = None;
        let spec = ExperimentSpec {
            base: self.base.into_config()?,
            sweep_variable: self.sweep_variable,
            sweep_values: self.sweep_values,
            trials: self.trials,
            methods: self.methods,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("experiment serialization failed: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

// --- results CSV ------------------------------------------------------------

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

pub const RESULTS_HEADER: &str =
    "sweep_value,method,rmse_t_m,rmse_r,mean_time_s,failures,trials,seed_base";

/// Writes the sweep summary as plot-ready CSV with deterministic byte
/// output (floats at 9 significant digits).
pub fn export_results(summary: &SweepSummary, path: &Path) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for p in &summary.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_float(p.sweep_value),
            p.method.name(),
            fmt_float(p.rmse_t),
            fmt_float(p.rmse_r),
            fmt_float(p.mean_time),
            p.failures,
            p.trials,
            summary.seed_base
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a results CSV written by [`export_results`].
pub fn import_results(path: &Path) -> Result<SweepSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => return Err(Error::Format(format!("bad results header: {other:?}"))),
    }
    let mut points = Vec::new();
    let mut seed_base = 0u64;
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "results line {}: expected 8 fields, got {}",
                line_no + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Format(format!("results line {}: {e}", line_no + 2)))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::Format(format!("results line {}: {e}", line_no + 2)))
        };
        seed_base = fields[7]
            .parse()
            .map_err(|e| Error::Format(format!("results line {}: {e}", line_no + 2)))?;
        points.push(SweepPoint {
            sweep_value: parse_f(fields[0])?,
            method: Method::parse(fields[1])?,
            rmse_t: parse_f(fields[2])?,
            rmse_r: parse_f(fields[3])?,
            mean_time: parse_f(fields[4])?,
            failures: parse_u(fields[5])?,
            trials: parse_u(fields[6])?,
        });
    }
    Ok(SweepSummary { points, seed_base })
}

/// Raw per-trial results as JSON lines.
pub fn export_trials_jsonl(trials: &[TrialResult], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        seed: u64,
        sweep_value: f64,
        method: &'a str,
        yaw_rad: Option<f64>,
        t_m: Option<[f64; 3]>,
        wall_time_s: f64,
        error: &'a Option<String>,
    }
    let mut out = String::new();
    for t in trials {
        let line = Line {
            seed: t.seed,
            sweep_value: t.sweep_value,
            method: t.method.name(),
            yaw_rad: t.estimate.map(|e| e.yaw().radians()),
            t_m: t
                .estimate
                .map(|e| [e.translation.x, e.translation.y, e.translation.z]),
            wall_time_s: t.wall_time,
            error: &t.error,
        };
        out.push_str(
            &serde_json::to_string(&line)
                .map_err(|e| Error::Format(format!("trial serialization failed: {e}")))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
