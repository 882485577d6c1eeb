//! UWB layouts, waypoint schedules and scenario configuration.
//!
//! The estimator needs the host robot's anchors to trace out four
//! non-coplanar positions and the target robot's tags to trace out three
//! positions non-coplanar with its odometry origin. With `J1` anchors and
//! `J2` tags this takes `M1 = ⌈4/J1⌉` robot-1 waypoints and `M2 = ⌈3/J2⌉`
//! robot-2 poses, for a minimum schedule of `K = M1·M2` time steps: robot
//! 1 repeats its `M1`-waypoint block `M2` times while robot 2 holds each
//! of its poses for one full block and moves only between blocks. A fully
//! equipped pair (`J1 = 4`, `J2 = 3`) needs no motion at all.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{yaw_rotation, FrameTransform, YawAngle};
use crate::streams;

/// Waypoint resampling budget before `generate_schedule` gives up.
const MAX_SAMPLING_ATTEMPTS: usize = 1000;

/// Relative singular-value threshold for all rank decisions.
pub const RANK_THRESHOLD: f64 = 1e-9;

/// Conditioning floor for randomly sampled paths, as a fraction of the
/// operating radius. Plain non-coplanarity admits nearly singular
/// geometry; sampled paths are rejected until their position spread
/// clears this floor.
pub const CONDITIONING_FLOOR: f64 = 0.05;

/// Tetrahedron-volume floor for the non-coplanarity checks on fixed UWB
/// mounting offsets.
const COPLANARITY_VOLUME_FLOOR: f64 = 1e-9;

/// Minimum waypoint counts and schedule length for given UWB counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignParams {
    /// Robot-1 waypoints per block: `⌈4/J1⌉`.
    pub m1: usize,
    /// Robot-2 poses (= number of blocks): `⌈3/J2⌉`.
    pub m2: usize,
    /// Schedule length `K = M1·M2`.
    pub k: usize,
}

/// `M1 = ⌈4/J1⌉`, `M2 = ⌈3/J2⌉`, `K = M1·M2` for `1 ≤ J1 ≤ 4`,
/// `1 ≤ J2 ≤ 3`.
pub fn design_params(j1: usize, j2: usize) -> Result<DesignParams> {
    if !(1..=4).contains(&j1) {
        return Err(Error::InvalidConfig(format!(
            "anchor count J1 must be in 1..=4, got {j1}"
        )));
    }
    if !(1..=3).contains(&j2) {
        return Err(Error::InvalidConfig(format!(
            "tag count J2 must be in 1..=3, got {j2}"
        )));
    }
    let m1 = 4usize.div_ceil(j1);
    let m2 = 3usize.div_ceil(j2);
    Ok(DesignParams { m1, m2, k: m1 * m2 })
}

/// A robot body pose in its own odometry frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub yaw: YawAngle,
}

impl Pose {
    /// The pose at the first time step: by construction the odometry
    /// frame coincides with the body frame there.
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            yaw: YawAngle::new(0.0),
        }
    }
}

/// The UWB position in the robot's odometry frame:
/// `pose.position + R(pose.yaw)·offset_body`.
pub fn uwb_position_in_odom(pose: &Pose, offset_body: &Vector3<f64>) -> Vector3<f64> {
    pose.position + yaw_rotation(pose.yaw).matrix() * offset_body
}

/// Body-frame mounting offsets of the UWB units on both robots.
#[derive(Debug, Clone, PartialEq)]
pub struct UwbLayout {
    anchors_body: Vec<Vector3<f64>>,
    tags_body: Vec<Vector3<f64>>,
}

impl UwbLayout {
    /// Validates counts and, for fully equipped robots, the fixed-offset
    /// non-coplanarity rules: four anchors must span a tetrahedron, three
    /// tags must span one together with the body origin.
    pub fn new(anchors_body: Vec<Vector3<f64>>, tags_body: Vec<Vector3<f64>>) -> Result<Self> {
        if !(1..=4).contains(&anchors_body.len()) {
            return Err(Error::InvalidConfig(format!(
                "anchor count J1 must be in 1..=4, got {}",
                anchors_body.len()
            )));
        }
        if !(1..=3).contains(&tags_body.len()) {
            return Err(Error::InvalidConfig(format!(
                "tag count J2 must be in 1..=3, got {}",
                tags_body.len()
            )));
        }
        if anchors_body.len() == 4 {
            let v = tetrahedron_volume(
                &anchors_body[0],
                &anchors_body[1],
                &anchors_body[2],
                &anchors_body[3],
            );
            if v <= COPLANARITY_VOLUME_FLOOR {
                return Err(Error::InvalidConfig(
                    "four anchors must be mounted non-coplanarly".into(),
                ));
            }
        }
        if tags_body.len() == 3 {
            let origin = Vector3::zeros();
            let v = tetrahedron_volume(&origin, &tags_body[0], &tags_body[1], &tags_body[2]);
            if v <= COPLANARITY_VOLUME_FLOOR {
                return Err(Error::InvalidConfig(
                    "three tags must be mounted non-coplanarly with the body origin".into(),
                ));
            }
        }
        Ok(UwbLayout {
            anchors_body,
            tags_body,
        })
    }

    /// Stock mounting offsets for the given counts: single units sit at
    /// `[0,0,10]`; a full anchor set adds the body origin and the two
    /// 10 m axis points, a full tag set uses the three 10 m axis points.
    pub fn default_for_counts(j1: usize, j2: usize) -> Result<Self> {
        let anchors = match j1 {
            4 => vec![
                Vector3::zeros(),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
                Vector3::new(0.0, 0.0, 10.0),
            ],
            1..=3 => [
                Vector3::new(0.0, 0.0, 10.0),
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
            ][..j1]
                .to_vec(),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "anchor count J1 must be in 1..=4, got {j1}"
                )))
            }
        };
        let tags = match j2 {
            3 => vec![
                Vector3::new(10.0, 0.0, 0.0),
                Vector3::new(0.0, 10.0, 0.0),
                Vector3::new(0.0, 0.0, 10.0),
            ],
            1..=2 => [Vector3::new(0.0, 0.0, 10.0), Vector3::new(10.0, 0.0, 0.0)][..j2].to_vec(),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "tag count J2 must be in 1..=3, got {j2}"
                )))
            }
        };
        UwbLayout::new(anchors, tags)
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors_body.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tags_body.len()
    }

    pub fn anchors_body(&self) -> &[Vector3<f64>] {
        &self.anchors_body
    }

    pub fn tags_body(&self) -> &[Vector3<f64>] {
        &self.tags_body
    }

    pub fn design_params(&self) -> DesignParams {
        design_params(self.anchor_count(), self.tag_count())
            .expect("layout counts validated at construction")
    }
}

fn tetrahedron_volume(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    d: &Vector3<f64>,
) -> f64 {
    let m = nalgebra::Matrix3::from_columns(&[b - a, c - a, d - a]);
    m.determinant().abs() / 6.0
}

/// The robots' pose sequences over the `K = M1·M2` time steps.
///
/// Robot 1 repeats its `M1`-waypoint block `M2` times; robot 2 is
/// constant within each block of `M1` consecutive steps and moves only
/// between blocks. Both sequences start at the identity pose, which pins
/// each odometry frame to the body frame at the first time step.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSchedule {
    robot1: Vec<Pose>,
    robot2: Vec<Pose>,
    params: DesignParams,
}

impl WaypointSchedule {
    /// Validates the block structure of full-length pose sequences.
    pub fn new(robot1: Vec<Pose>, robot2: Vec<Pose>, params: DesignParams) -> Result<Self> {
        if params.k != params.m1 * params.m2 {
            return Err(Error::InvalidConfig(format!(
                "schedule length K={} must equal M1·M2={}",
                params.k,
                params.m1 * params.m2
            )));
        }
        if robot1.len() != params.k || robot2.len() != params.k {
            return Err(Error::InvalidConfig(format!(
                "pose sequences must have K={} entries, got {} and {}",
                params.k,
                robot1.len(),
                robot2.len()
            )));
        }
        for (k, pose) in robot1.iter().enumerate() {
            if *pose != robot1[k % params.m1] {
                return Err(Error::InvalidConfig(format!(
                    "robot 1 block must repeat identically; step {k} deviates"
                )));
            }
        }
        for (k, pose) in robot2.iter().enumerate() {
            if *pose != robot2[(k / params.m1) * params.m1] {
                return Err(Error::InvalidConfig(format!(
                    "robot 2 must hold its pose within each block; step {k} deviates"
                )));
            }
        }
        Ok(WaypointSchedule {
            robot1,
            robot2,
            params,
        })
    }

    /// Builds the full sequences from one robot-1 block (`M1` poses) and
    /// the distinct robot-2 poses (`M2` of them).
    pub fn from_blocks(robot1_block: Vec<Pose>, robot2_poses: Vec<Pose>) -> Result<Self> {
        let m1 = robot1_block.len();
        let m2 = robot2_poses.len();
        if m1 == 0 || m2 == 0 {
            return Err(Error::InvalidConfig("empty waypoint block".into()));
        }
        let mut robot1 = Vec::with_capacity(m1 * m2);
        let mut robot2 = Vec::with_capacity(m1 * m2);
        for pose2 in &robot2_poses {
            for pose1 in &robot1_block {
                robot1.push(*pose1);
                robot2.push(*pose2);
            }
        }
        WaypointSchedule::new(
            robot1,
            robot2,
            DesignParams {
                m1,
                m2,
                k: m1 * m2,
            },
        )
    }

    pub fn params(&self) -> DesignParams {
        self.params
    }

    pub fn robot1_poses(&self) -> &[Pose] {
        &self.robot1
    }

    pub fn robot2_poses(&self) -> &[Pose] {
        &self.robot2
    }

    /// The `M1` distinct robot-1 waypoints (the first block).
    pub fn robot1_block(&self) -> &[Pose] {
        &self.robot1[..self.params.m1]
    }

    /// The `M2` distinct robot-2 poses (one per block).
    pub fn robot2_distinct(&self) -> Vec<Pose> {
        (0..self.params.m2)
            .map(|b| self.robot2[b * self.params.m1])
            .collect()
    }

    pub fn max_position_norm(&self) -> f64 {
        self.robot1
            .iter()
            .chain(self.robot2.iter())
            .map(|p| p.position.norm())
            .fold(0.0, f64::max)
    }

    /// Anchor positions `p1^{l1}` in robot 1's odometry frame, flattened
    /// as `l1 = J1·(block step) + unit index`.
    pub fn anchor_positions(&self, layout: &UwbLayout) -> Vec<Vector3<f64>> {
        self.robot1_block()
            .iter()
            .flat_map(|pose| {
                layout
                    .anchors_body()
                    .iter()
                    .map(move |offset| uwb_position_in_odom(pose, offset))
            })
            .collect()
    }

    /// Tag positions `p2^{l2}` in robot 2's odometry frame, flattened as
    /// `l2 = J2·(block index) + unit index`.
    pub fn tag_positions(&self, layout: &UwbLayout) -> Vec<Vector3<f64>> {
        self.robot2_distinct()
            .iter()
            .flat_map(|pose| {
                layout
                    .tags_body()
                    .iter()
                    .map(|offset| uwb_position_in_odom(pose, offset))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Singular values of the 3×N matrix of positions, optionally centered
/// by the column mean, sorted descending.
fn position_singular_values(points: &[Vector3<f64>], center: bool) -> Vec<f64> {
    let mut m = DMatrix::from_fn(3, points.len(), |r, c| points[c][r]);
    if center {
        let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        for mut col in m.column_iter_mut() {
            col -= mean;
        }
    }
    let mut svs: Vec<f64> = m.singular_values().iter().copied().collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    svs
}

/// Rank by the relative threshold `sv > RANK_THRESHOLD · sv_max`.
pub(crate) fn rank_from_singular_values(svs: &[f64]) -> usize {
    let max = svs.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    svs.iter().filter(|&&s| s > RANK_THRESHOLD * max).count()
}

fn sample_in_ball(rng: &mut impl Rng, radius: f64) -> Vector3<f64> {
    // Rejection-sampled in the unit cube, then scaled: keeps positions
    // exactly proportional to the radius for a fixed RNG stream.
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

fn sample_pose(rng: &mut impl Rng, radius: f64) -> Pose {
    // Draw order fixed: position first, then yaw.
    let position = sample_in_ball(rng, radius);
    let yaw = YawAngle::new(rng.random_range(0.0..TAU));
    Pose { position, yaw }
}

/// Samples a schedule meeting the full-rank path conditions for this
/// layout: the anchor track must be non-coplanar (affinely rank 3) and
/// the tag track non-coplanar with robot 2's odometry origin (linearly
/// rank 3).
///
/// The first pose of each robot is the identity. Randomly placed
/// waypoints are resampled until the relevant position matrices clear a
/// conditioning floor of [`CONDITIONING_FLOOR`]`·r_max`; static robots
/// (`M = 1`) contribute their fixed mounting geometry, which is checked
/// at rank threshold only.
pub fn generate_schedule(
    layout: &UwbLayout,
    r_max: f64,
    rng: &mut impl Rng,
) -> Result<WaypointSchedule> {
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "operating radius must be positive and finite, got {r_max}"
        )));
    }
    let params = layout.design_params();
    let floor = CONDITIONING_FLOOR * r_max;

    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut robot1_block = vec![Pose::identity()];
        for _ in 1..params.m1 {
            robot1_block.push(sample_pose(rng, r_max));
        }
        let mut robot2_poses = vec![Pose::identity()];
        for _ in 1..params.m2 {
            robot2_poses.push(sample_pose(rng, r_max));
        }
        let schedule = WaypointSchedule::from_blocks(robot1_block, robot2_poses)?;

        let anchor_svs = position_singular_values(&schedule.anchor_positions(layout), true);
        let tag_svs = position_singular_values(&schedule.tag_positions(layout), false);
        let anchor_ok = if params.m1 == 1 {
            rank_from_singular_values(&anchor_svs) == 3
        } else {
            anchor_svs[2] > floor
        };
        let tag_ok = if params.m2 == 1 {
            rank_from_singular_values(&tag_svs) == 3
        } else {
            tag_svs[2] > floor
        };
        if anchor_ok && tag_ok {
            return Ok(schedule);
        }
        if params.m1 == 1 && params.m2 == 1 {
            // Nothing to resample; the fixed layout is degenerate.
            break;
        }
    }
    Err(Error::ScheduleSampling(format!(
        "no valid path within {MAX_SAMPLING_ATTEMPTS} attempts (r_max = {r_max}); \
         the mounting layout may be degenerate or r_max too small"
    )))
}

/// Diagnostics from [`check_path_validity`].
#[derive(Debug, Clone)]
pub struct PathReport {
    /// Both non-coplanarity conditions hold.
    pub valid: bool,
    /// Rank of the centered 3×N1 anchor position matrix (needs 3).
    pub anchor_centered_rank: usize,
    /// Rank of the raw 3×N2 tag position matrix (needs 3).
    pub tag_rank: usize,
    /// Column rank of the assembled design matrix (5 when valid).
    pub rank_h: usize,
    /// Smallest singular value of the centered anchor matrix.
    pub anchor_sv_min: f64,
    /// Smallest singular value of the raw tag matrix.
    pub tag_sv_min: f64,
    /// Human-readable names of the violated conditions, empty when valid.
    pub failures: Vec<String>,
}

/// Checks the two rank conditions that make the linear step solvable and
/// reports the resulting design-matrix rank.
pub fn check_path_validity(layout: &UwbLayout, schedule: &WaypointSchedule) -> PathReport {
    let anchors = schedule.anchor_positions(layout);
    let tags = schedule.tag_positions(layout);
    let anchor_svs = position_singular_values(&anchors, true);
    let tag_svs = position_singular_values(&tags, false);
    let anchor_centered_rank = rank_from_singular_values(&anchor_svs);
    let tag_rank = rank_from_singular_values(&tag_svs);

    let (_, rank_h) = crate::estimator::design_matrix_from_positions(&anchors, &tags, 1);

    let mut failures = Vec::new();
    if anchor_centered_rank < 3 {
        failures.push(format!(
            "anchor positions are coplanar (centered rank {anchor_centered_rank} < 3)"
        ));
    }
    if tag_rank < 3 {
        failures.push(format!(
            "tag positions are coplanar with the odometry origin (rank {tag_rank} < 3)"
        ));
    }
    PathReport {
        valid: failures.is_empty(),
        anchor_centered_rank,
        tag_rank,
        rank_h,
        anchor_sv_min: anchor_svs.last().copied().unwrap_or(0.0),
        tag_sv_min: tag_svs.last().copied().unwrap_or(0.0),
        failures,
    }
}

/// Everything needed to synthesize one measurement campaign.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub layout: UwbLayout,
    pub schedule: WaypointSchedule,
    /// Per-pair noise standard deviations, J1×J2, meters.
    pub sigma: DMatrix<f64>,
    /// Repeated measurements N per anchor/tag pair per time step.
    pub repetitions: usize,
    /// The transform to recover: robot 2's odometry frame in robot 1's.
    pub ground_truth: FrameTransform,
    /// Operating radius bound on waypoint positions, meters.
    pub r_max: f64,
    /// Robot speed along path segments, m/s (0 = measurements taken at
    /// rest).
    pub speed: f64,
    /// UWB sampling latency behind the odometry snapshot, seconds.
    pub latency: f64,
    /// Master seed for all stochastic draws.
    pub seed: u64,
}

impl ScenarioConfig {
    /// A ready-to-run scenario for the given UWB counts: stock mounting
    /// offsets, a sampled schedule, σ = 1 m on every pair, N = 100
    /// repetitions and ground truth (θ = 60°, t = [20, 20, 20]).
    pub fn generate_default(j1: usize, j2: usize, r_max: f64, seed: u64) -> Result<Self> {
        let layout = UwbLayout::default_for_counts(j1, j2)?;
        let schedule =
            generate_schedule(&layout, r_max, &mut streams::rng(seed, streams::TRAJECTORY))?;
        Ok(ScenarioConfig {
            sigma: DMatrix::from_element(j1, j2, 1.0),
            layout,
            schedule,
            repetitions: 100,
            ground_truth: FrameTransform::new(
                YawAngle::from_degrees(60.0),
                Vector3::new(20.0, 20.0, 20.0),
            ),
            r_max,
            speed: 0.0,
            latency: 0.01,
            seed,
        })
    }

    /// Uniform per-pair noise level.
    pub fn set_uniform_sigma(&mut self, sigma: f64) {
        self.sigma =
            DMatrix::from_element(self.layout.anchor_count(), self.layout.tag_count(), sigma);
    }

    pub fn validate(&self) -> Result<()> {
        let j1 = self.layout.anchor_count();
        let j2 = self.layout.tag_count();
        if self.sigma.nrows() != j1 || self.sigma.ncols() != j2 {
            return Err(Error::InvalidConfig(format!(
                "sigma must be {}×{} for this layout, got {}×{}",
                j1,
                j2,
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "all noise standard deviations must be positive and finite".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.schedule.params() != self.layout.design_params() {
            return Err(Error::InvalidConfig(format!(
                "schedule designed for (M1={}, M2={}) does not match layout ({:?})",
                self.schedule.params().m1,
                self.schedule.params().m2,
                self.layout.design_params()
            )));
        }
        if self.schedule.max_position_norm() > self.r_max + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "waypoint at distance {:.3} exceeds operating radius {}",
                self.schedule.max_position_norm(),
                self.r_max
            )));
        }
        if self.speed < 0.0 || self.latency < 0.0 {
            return Err(Error::InvalidConfig(
                "speed and latency must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

// --- scenario files ("rte-scenario/1") -----------------------------------

pub const SCENARIO_SCHEMA: &str = "rte-scenario/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseFile {
    position_m: [f64; 3],
    yaw_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleFile {
    robot1: Vec<PoseFile>,
    robot2: Vec<PoseFile>,
}

/// Per-pair noise: a single value for every pair, or a full J1×J2 table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Uniform(f64),
    PerPair(Vec<Vec<f64>>),
}

/// On-disk scenario document. Units are meters, radians and seconds.
/// When `schedule` is absent, one is sampled deterministically from the
/// seed at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema: String,
    pub anchors_body_m: Vec<[f64; 3]>,
    pub tags_body_m: Vec<[f64; 3]>,
    pub sigma_m: SigmaSpec,
    pub repetitions: usize,
    pub truth_yaw_rad: f64,
    pub truth_translation_m: [f64; 3],
    pub r_max_m: f64,
    pub speed_mps: f64,
    pub latency_s: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleFileOpaque>,
}

/// Wrapper keeping the schedule layout private to this module while the
/// containing document stays constructible elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleFileOpaque(ScheduleFile);

fn pose_to_file(p: &Pose) -> PoseFile {
    PoseFile {
        position_m: [p.position.x, p.position.y, p.position.z],
        yaw_rad: p.yaw.radians(),
    }
}

fn pose_from_file(p: &PoseFile) -> Pose {
    Pose {
        position: Vector3::from(p.position_m),
        yaw: YawAngle::new(p.yaw_rad),
    }
}

impl ScenarioFile {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let sigma_m = if config.sigma.iter().all(|&s| s == config.sigma[(0, 0)]) {
            SigmaSpec::Uniform(config.sigma[(0, 0)])
        } else {
            SigmaSpec::PerPair(
                (0..config.sigma.nrows())
                    .map(|r| config.sigma.row(r).iter().copied().collect())
                    .collect(),
            )
        };
        ScenarioFile {
            schema: SCENARIO_SCHEMA.to_string(),
            anchors_body_m: config
                .layout
                .anchors_body()
                .iter()
                .map(|v| [v.x, v.y, v.z])
                .collect(),
            tags_body_m: config
                .layout
                .tags_body()
                .iter()
                .map(|v| [v.x, v.y, v.z])
                .collect(),
            sigma_m,
            repetitions: config.repetitions,
            truth_yaw_rad: config.ground_truth.yaw().radians(),
            truth_translation_m: {
                let t = config.ground_truth.translation;
                [t.x, t.y, t.z]
            },
            r_max_m: config.r_max,
            speed_mps: config.speed,
            latency_s: config.latency,
            seed: config.seed,
            schedule: Some(ScheduleFileOpaque(ScheduleFile {
                robot1: config.schedule.robot1_poses().iter().map(pose_to_file).collect(),
                robot2: config.schedule.robot2_poses().iter().map(pose_to_file).collect(),
            })),
        }
    }

    pub fn into_config(self) -> Result<ScenarioConfig> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Format(format!(
                "expected schema {SCENARIO_SCHEMA:?}, got {:?}",
                self.schema
            )));
        }
        let layout = UwbLayout::new(
            self.anchors_body_m.iter().map(|&a| Vector3::from(a)).collect(),
            self.tags_body_m.iter().map(|&t| Vector3::from(t)).collect(),
        )?;
        let sigma = match self.sigma_m {
            SigmaSpec::Uniform(s) => {
                DMatrix::from_element(layout.anchor_count(), layout.tag_count(), s)
            }
            SigmaSpec::PerPair(rows) => {
                if rows.len() != layout.anchor_count()
                    || rows.iter().any(|r| r.len() != layout.tag_count())
                {
                    return Err(Error::Format("sigma table shape does not match layout".into()));
                }
                DMatrix::from_fn(layout.anchor_count(), layout.tag_count(), |r, c| rows[r][c])
            }
        };
        let params = layout.design_params();
        let schedule = match self.schedule {
            Some(ScheduleFileOpaque(s)) => WaypointSchedule::new(
                s.robot1.iter().map(pose_from_file).collect(),
                s.robot2.iter().map(pose_from_file).collect(),
                params,
            )?,
            None => generate_schedule(
                &layout,
                self.r_max_m,
                &mut streams::rng(self.seed, streams::TRAJECTORY),
            )?,
        };
        let config = ScenarioConfig {
            layout,
            schedule,
            sigma,
            repetitions: self.repetitions,
            ground_truth: FrameTransform::new(
                YawAngle::new(self.truth_yaw_rad),
                Vector3::from(self.truth_translation_m),
            ),
            r_max: self.r_max_m,
            speed: self.speed_mps,
            latency: self.latency_s,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("scenario serialization failed: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
