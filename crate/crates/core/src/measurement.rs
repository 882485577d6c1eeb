//! Range measurement sets: synthesis from a scenario, the speed/latency
//! distortion model, and CSV/JSON import/export.
//!
//! A campaign pairs every anchor track position `l1` with every tag track
//! position `l2` and takes `N` repeated ranges per pair. Rows are stored
//! in a fixed canonical order — `l2` outermost, then `l1`, then the
//! repetition index — which is also the stacking order of the linear
//! system assembled from them.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FrameTransform;
use crate::scenario::{Pose, ScenarioConfig};
use crate::streams;

/// All ranges of one campaign with the paired odometry positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `N1` anchor positions in robot 1's odometry frame.
    anchor_positions: Vec<Vector3<f64>>,
    /// `N2` tag positions in robot 2's odometry frame.
    tag_positions: Vec<Vector3<f64>>,
    /// `N·N1·N2` ranges in canonical row order.
    ranges: Vec<f64>,
    /// Per-pair noise standard deviation, indexed `l1 + l2·N1`.
    sigmas: Vec<f64>,
    /// Repetitions N per pair.
    repetitions: usize,
}

impl MeasurementSet {
    pub fn new(
        anchor_positions: Vec<Vector3<f64>>,
        tag_positions: Vec<Vector3<f64>>,
        ranges: Vec<f64>,
        sigmas: Vec<f64>,
        repetitions: usize,
    ) -> Result<Self> {
        let n1 = anchor_positions.len();
        let n2 = tag_positions.len();
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidConfig("empty anchor or tag track".into()));
        }
        if repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if ranges.len() != repetitions * n1 * n2 {
            return Err(Error::InvalidConfig(format!(
                "expected {} ranges, got {}",
                repetitions * n1 * n2,
                ranges.len()
            )));
        }
        if sigmas.len() != n1 * n2 {
            return Err(Error::InvalidConfig(format!(
                "expected {} per-pair sigmas, got {}",
                n1 * n2,
                sigmas.len()
            )));
        }
        if sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "all noise standard deviations must be positive and finite".into(),
            ));
        }
        Ok(MeasurementSet {
            anchor_positions,
            tag_positions,
            ranges,
            sigmas,
            repetitions,
        })
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_positions.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tag_positions.len()
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions
    }

    /// Total measurement count `n = N·N1·N2`.
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Canonical row index of `(l1, l2, i)` (all 0-based).
    pub fn row_index(&self, l1: usize, l2: usize, i: usize) -> usize {
        (l2 * self.anchor_count() + l1) * self.repetitions + i
    }

    pub fn range(&self, l1: usize, l2: usize, i: usize) -> f64 {
        self.ranges[self.row_index(l1, l2, i)]
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn sigma(&self, l1: usize, l2: usize) -> f64 {
        self.sigmas[l2 * self.anchor_count() + l1]
    }

    pub fn anchor_position(&self, l1: usize) -> &Vector3<f64> {
        &self.anchor_positions[l1]
    }

    pub fn tag_position(&self, l2: usize) -> &Vector3<f64> {
        &self.tag_positions[l2]
    }

    pub fn anchor_positions(&self) -> &[Vector3<f64>] {
        &self.anchor_positions
    }

    pub fn tag_positions(&self) -> &[Vector3<f64>] {
        &self.tag_positions
    }

    /// Iterates `(l1, l2, i, range, sigma)` in canonical row order.
    pub fn iter_rows(&self) -> impl Iterator<Item = (usize, usize, usize, f64, f64)> + '_ {
        let n1 = self.anchor_count();
        let n2 = self.tag_count();
        let n_rep = self.repetitions;
        (0..n2).flat_map(move |l2| {
            (0..n1).flat_map(move |l1| {
                (0..n_rep).map(move |i| {
                    (l1, l2, i, self.range(l1, l2, i), self.sigma(l1, l2))
                })
            })
        })
    }

    /// The noise-free range for a pair under a candidate transform.
    pub fn predicted_range(&self, l1: usize, l2: usize, tf: &FrameTransform) -> f64 {
        (self.anchor_positions[l1] - tf.apply(&self.tag_positions[l2])).norm()
    }
}

/// Body displacement between the odometry snapshot at each epoch and the
/// UWB sample `latency` seconds later, assuming departure toward the next
/// waypoint at the epoch and straight-line motion at `speed`.
fn motion_offsets(poses: &[Pose], speed: f64, latency: f64) -> Vec<Vector3<f64>> {
    let travel = speed * latency;
    (0..poses.len())
        .map(|k| {
            if travel == 0.0 || k + 1 >= poses.len() {
                return Vector3::zeros();
            }
            let segment = poses[k + 1].position - poses[k].position;
            let length = segment.norm();
            if length < 1e-12 {
                Vector3::zeros()
            } else {
                segment * (travel.min(length) / length)
            }
        })
        .collect()
}

fn synthesize_with_motion(
    config: &ScenarioConfig,
    distort: bool,
) -> Result<MeasurementSet> {
    config.validate()?;
    let params = config.schedule.params();
    let j1 = config.layout.anchor_count();
    let j2 = config.layout.tag_count();
    let anchors = config.schedule.anchor_positions(&config.layout);
    let tags = config.schedule.tag_positions(&config.layout);
    let n1 = anchors.len();
    let n2 = tags.len();

    let (off1, off2) = if distort {
        (
            motion_offsets(config.schedule.robot1_poses(), config.speed, config.latency),
            motion_offsets(config.schedule.robot2_poses(), config.speed, config.latency),
        )
    } else {
        (
            vec![Vector3::zeros(); params.k],
            vec![Vector3::zeros(); params.k],
        )
    };

    let sigmas: Vec<f64> = (0..n2)
        .flat_map(|l2| (0..n1).map(move |l1| config.sigma[(l1 % j1, l2 % j2)]))
        .collect();

    let truth = &config.ground_truth;
    let mut rng = streams::rng(config.seed, streams::NOISE);
    let mut ranges = Vec::with_capacity(config.repetitions * n1 * n2);
    for l2 in 0..n2 {
        let block = l2 / j2;
        for l1 in 0..n1 {
            let block_step = l1 / j1;
            // the epoch at which this anchor/tag pair is in view
            let epoch = block * params.m1 + block_step;
            let anchor_true = anchors[l1] + off1[epoch];
            let tag_true = tags[l2] + off2[epoch];
            let true_range = (anchor_true - truth.apply(&tag_true)).norm();
            let sigma = sigmas[l2 * n1 + l1];
            for _ in 0..config.repetitions {
                let z: f64 = rng.sample(StandardNormal);
                ranges.push(true_range + sigma * z);
            }
        }
    }

    MeasurementSet::new(anchors, tags, ranges, sigmas, config.repetitions)
}

/// Synthesizes ranges with both robots at rest at each waypoint: the
/// logged odometry positions and the positions the UWB ranges are taken
/// from coincide.
pub fn synthesize_ranges(config: &ScenarioConfig) -> Result<MeasurementSet> {
    synthesize_with_motion(config, false)
}

/// Evenly spaced measurement request times, one per schedule epoch.
pub fn default_request_times(k: usize) -> Vec<f64> {
    (0..k).map(|i| i as f64).collect()
}

/// Synthesizes ranges with the speed/latency distortion: odometry is
/// logged at each request time with the robot at its waypoint, but the
/// UWB sample happens `latency` seconds into the departure toward the
/// next waypoint, so the true range is taken from a position displaced by
/// up to `speed·latency` along the motion direction. Zero speed or zero
/// latency reproduces [`synthesize_ranges`] exactly.
pub fn apply_speed_distortion(
    config: &ScenarioConfig,
    request_times: &[f64],
) -> Result<MeasurementSet> {
    let k = config.schedule.params().k;
    if request_times.len() != k {
        return Err(Error::InvalidConfig(format!(
            "expected {k} measurement request times, got {}",
            request_times.len()
        )));
    }
    if request_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "measurement request times must be strictly increasing".into(),
        ));
    }
    synthesize_with_motion(config, true)
}

// --- measurement files ----------------------------------------------------

pub const MEASUREMENT_SCHEMA: &str = "rte-measurements/1";

/// Sidecar JSON carrying the positions and counts that the range CSV
/// does not.
#[derive(Debug, Serialize, Deserialize)]
struct PositionSidecar {
    schema: String,
    anchor_positions_m: Vec<[f64; 3]>,
    tag_positions_m: Vec<[f64; 3]>,
    repetitions: usize,
}

fn fmt_float(x: f64) -> String {
    // 17 significant digits: parses back to the identical f64
    format!("{x:.16e}")
}

/// Writes ranges as CSV (`l1,l2,i,range_m,sigma_m`, 1-based indices,
/// canonical order) plus a JSON sidecar with positions.
pub fn write_measurements(
    m: &MeasurementSet,
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<()> {
    let mut out = String::from("l1,l2,i,range_m,sigma_m\n");
    for (l1, l2, i, range, sigma) in m.iter_rows() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l1 + 1,
            l2 + 1,
            i + 1,
            fmt_float(range),
            fmt_float(sigma)
        ));
    }
    std::fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;

    let sidecar = PositionSidecar {
        schema: MEASUREMENT_SCHEMA.to_string(),
        anchor_positions_m: m.anchor_positions().iter().map(|v| [v.x, v.y, v.z]).collect(),
        tag_positions_m: m.tag_positions().iter().map(|v| [v.x, v.y, v.z]).collect(),
        repetitions: m.repetitions(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(sidecar_path, json + "\n").map_err(|e| Error::io(sidecar_path, e))
}

/// Reads a measurement set written by [`write_measurements`].
pub fn read_measurements(csv_path: &Path, sidecar_path: &Path) -> Result<MeasurementSet> {
    let sidecar_text =
        std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: PositionSidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| Error::Format(format!("{}: {e}", sidecar_path.display())))?;
    if sidecar.schema != MEASUREMENT_SCHEMA {
        return Err(Error::Format(format!(
            "expected schema {MEASUREMENT_SCHEMA:?}, got {:?}",
            sidecar.schema
        )));
    }
    let anchors: Vec<Vector3<f64>> =
        sidecar.anchor_positions_m.iter().map(|&a| Vector3::from(a)).collect();
    let tags: Vec<Vector3<f64>> =
        sidecar.tag_positions_m.iter().map(|&t| Vector3::from(t)).collect();
    let (n1, n2, n_rep) = (anchors.len(), tags.len(), sidecar.repetitions);
    let n = n_rep * n1 * n2;

    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("l1,l2,i,range_m,sigma_m") => {}
        other => {
            return Err(Error::Format(format!(
                "bad measurement CSV header: {other:?}"
            )))
        }
    }
    let mut ranges = vec![f64::NAN; n];
    let mut sigmas = vec![f64::NAN; n1 * n2];
    let mut rows = 0usize;
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "measurement CSV line {}: expected 5 fields, got {}",
                line_no + 2,
                fields.len()
            )));
        }
        let parse_idx = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .and_then(|v| v.checked_sub(1))
                .ok_or_else(|| {
                    Error::Format(format!(
                        "measurement CSV line {}: bad {what} index {s:?}",
                        line_no + 2
                    ))
                })
        };
        let l1 = parse_idx(fields[0], "l1")?;
        let l2 = parse_idx(fields[1], "l2")?;
        let i = parse_idx(fields[2], "i")?;
        if l1 >= n1 || l2 >= n2 || i >= n_rep {
            return Err(Error::Format(format!(
                "measurement CSV line {}: index ({},{},{}) out of bounds",
                line_no + 2,
                l1 + 1,
                l2 + 1,
                i + 1
            )));
        }
        let range: f64 = fields[3]
            .parse()
            .map_err(|e| Error::Format(format!("line {}: bad range: {e}", line_no + 2)))?;
        let sigma: f64 = fields[4]
            .parse()
            .map_err(|e| Error::Format(format!("line {}: bad sigma: {e}", line_no + 2)))?;
        ranges[(l2 * n1 + l1) * n_rep + i] = range;
        let pair = l2 * n1 + l1;
        if sigmas[pair].is_nan() {
            sigmas[pair] = sigma;
        } else if sigmas[pair] != sigma {
            return Err(Error::Format(format!(
                "inconsistent sigma for pair ({},{})",
                l1 + 1,
                l2 + 1
            )));
        }
        rows += 1;
    }
    if rows != n || ranges.iter().any(|r| r.is_nan()) {
        return Err(Error::Format(format!(
            "measurement CSV incomplete: expected {n} rows, got {rows}"
        )));
    }
    MeasurementSet::new(anchors, tags, ranges, sigmas, n_rep)
}
