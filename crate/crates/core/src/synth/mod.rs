//! Deterministic synthetic scene generator.
//!
//! Scenes are scripted in world coordinates (x east, y north, z up, meters):
//! a camera wearer walks a piecewise speed/yaw-rate profile while scripted
//! pedestrians follow piecewise velocity profiles. A pinhole camera at fixed
//! height with its optical axis parallel to the ground projects a fixed
//! 18-part body template into the image; the result is emitted as tracklets
//! in the ingestion format together with a ground-truth sidecar from which
//! every keypoint can be re-projected bit for bit.
//!
//! No pixels are rendered — the pipeline consumes keypoint geometry only.

mod suites;

pub use suites::{
    curved_ego_suite, interactive_suite, linear_suite, standard_suites, GeneratedSuite,
    DEFAULT_SCENES_PER_SUITE,
};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Sample, Tracklet};
use crate::features::EgoObservation;
use crate::features::{
    kp, snap_coord, EgoFrame, FrameObservation, Keypoint, RotationAccumulation, NUM_KEYPOINTS,
};
use crate::geom::{mat_identity, mat_mul, mat_transpose, mat_vec, Mat3, Vec3};

/// Frame rate of all generated scenes.
pub const DEFAULT_FPS: f64 = 10.0;
/// Points closer than this to the image plane (meters) do not project.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene script: {0}")]
    Script(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("ground-truth file: {0}")]
    Truth(String),
}

/// Pinhole camera worn at chest height, optical axis parallel to the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub image_width: f64,
    pub image_height: f64,
    pub focal_px: f64,
    pub height_m: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            image_width: 1280.0,
            image_height: 960.0,
            focal_px: 1000.0,
            height_m: 1.4,
        }
    }
}

/// One piece of a piecewise-constant scalar profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub frames: usize,
    pub value: f64,
}

/// One piece of a piecewise-constant planar velocity profile (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySegment {
    pub frames: usize,
    pub vx: f64,
    pub vy: f64,
}

/// The camera wearer's walk: explicit Euler integration of a speed profile
/// along a heading driven by a yaw-rate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WearerScript {
    /// Ground position at frame 0 (meters).
    pub start: [f64; 2],
    /// Heading at frame 0; 0 looks along +y (north), positive turns toward +x.
    pub start_yaw: f64,
    pub speed: Vec<ProfileSegment>,
    pub yaw_rate: Vec<ProfileSegment>,
}

/// One scripted pedestrian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianScript {
    pub start: [f64; 2],
    pub velocity: Vec<VelocitySegment>,
    pub height_m: f64,
    /// Gait cycles per second; sways limbs only.
    pub gait_frequency_hz: f64,
    /// Fixed facing angle (same convention as wearer yaw). When absent the
    /// pedestrian faces its walking direction, holding the last heading
    /// while stationary.
    pub facing: Option<f64>,
}

/// A complete scene description; generation is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub id: String,
    /// Seeds the gait phases of the pedestrians.
    pub seed: u64,
    pub duration_frames: usize,
    pub fps: f64,
    pub camera: CameraRig,
    pub wearer: WearerScript,
    pub pedestrians: Vec<PedestrianScript>,
}

/// Wearer ground position and heading at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearerPose {
    pub position: [f64; 2],
    pub yaw: f64,
}

/// World-space keypoint positions of one pedestrian, per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTruth {
    /// `[frame][keypoint] -> [x, y, z]` meters.
    pub keypoints_world: Vec<Vec<[f64; 3]>>,
}

/// Everything needed to re-project the generated tracklets exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub id: String,
    pub fps: f64,
    pub camera: CameraRig,
    pub wearer: Vec<WearerPose>,
    pub pedestrians: Vec<PedestrianTruth>,
}

/// Camera-to-world rotation for a wearer heading. Camera axes: x right,
/// y down, z forward (optical axis, horizontal).
pub fn camera_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    // Columns are the camera axes expressed in world coordinates:
    // right (c, -s, 0), down (0, 0, -1), forward (s, c, 0).
    [[c, 0.0, s], [-s, 0.0, c], [0.0, -1.0, 0.0]]
}

/// Project a world point through the wearer's camera. Returns a missing
/// keypoint when the point is behind the camera or outside the frame;
/// otherwise pixel coordinates snapped to the 1/1024 px ingestion grid.
pub fn project_keypoint(camera: &CameraRig, pose: &WearerPose, world: Vec3) -> Keypoint {
    let q = camera_rotation(pose.yaw);
    let c = [pose.position[0], pose.position[1], camera.height_m];
    let rel = [world[0] - c[0], world[1] - c[1], world[2] - c[2]];
    let cam = mat_vec(&mat_transpose(&q), &rel);
    if cam[2] < MIN_DEPTH {
        return Keypoint::missing();
    }
    let u = camera.image_width / 2.0 + camera.focal_px * cam[0] / cam[2];
    let v = camera.image_height / 2.0 + camera.focal_px * cam[1] / cam[2];
    if !(0.0..=camera.image_width).contains(&u) || !(0.0..=camera.image_height).contains(&v) {
        return Keypoint::missing();
    }
    Keypoint::new(snap_coord(u), snap_coord(v))
}

/// Body template: per keypoint, height above ground and lateral offset
/// toward the pedestrian's right, both as fractions of body height, plus
/// the amplitude (fraction of height) and phase offset of the sinusoidal
/// gait sway applied along the facing direction. Torso and head carry no
/// sway so the body center moves exactly as scripted.
const BODY_TEMPLATE: [(usize, f64, f64, f64, f64); NUM_KEYPOINTS] = [
    (kp::NOSE, 0.93, 0.0, 0.0, 0.0),
    (kp::NECK, 0.88, 0.0, 0.0, 0.0),
    (kp::R_SHOULDER, 0.82, 0.12, 0.0, 0.0),
    (kp::R_ELBOW, 0.70, 0.13, 0.03, 0.0),
    (kp::R_WRIST, 0.58, 0.14, 0.06, 0.0),
    (kp::L_SHOULDER, 0.82, -0.12, 0.0, 0.0),
    (kp::L_ELBOW, 0.70, -0.13, 0.03, std::f64::consts::PI),
    (kp::L_WRIST, 0.58, -0.14, 0.06, std::f64::consts::PI),
    (kp::R_HIP, 0.53, 0.10, 0.0, 0.0),
    (kp::R_KNEE, 0.28, 0.06, 0.03, std::f64::consts::PI),
    (kp::R_ANKLE, 0.04, 0.07, 0.06, std::f64::consts::PI),
    (kp::L_HIP, 0.53, -0.10, 0.0, 0.0),
    (kp::L_KNEE, 0.28, -0.06, 0.03, 0.0),
    (kp::L_ANKLE, 0.04, -0.07, 0.06, 0.0),
    (kp::R_EYE, 0.95, 0.03, 0.0, 0.0),
    (kp::L_EYE, 0.95, -0.03, 0.0, 0.0),
    (kp::R_EAR, 0.94, 0.05, 0.0, 0.0),
    (kp::L_EAR, 0.94, -0.05, 0.0, 0.0),
];

/// World positions of the 18 body keypoints for a pedestrian standing at
/// `center` facing `facing`, with the gait cycle at angle `gait_angle`.
pub fn body_keypoints(
    center: [f64; 2],
    facing: f64,
    height: f64,
    gait_angle: f64,
) -> Vec<[f64; 3]> {
    let (sf, cf) = facing.sin_cos();
    // Unit vectors: forward = (sf, cf), pedestrian's right = (cf, -sf).
    let mut out = vec![[0.0; 3]; NUM_KEYPOINTS];
    for &(idx, h_frac, lat_frac, sway_frac, phase) in &BODY_TEMPLATE {
        let lateral = lat_frac * height;
        let forward = sway_frac * height * (gait_angle + phase).sin();
        out[idx] = [
            center[0] + lateral * cf + forward * sf,
            center[1] - lateral * sf + forward * cf,
            h_frac * height,
        ];
    }
    out
}

fn profile_value(segments: &[ProfileSegment], frame: usize) -> f64 {
    let mut acc = 0;
    for s in segments {
        acc += s.frames;
        if frame < acc {
            return s.value;
        }
    }
    segments.last().map(|s| s.value).unwrap_or(0.0)
}

fn velocity_value(segments: &[VelocitySegment], frame: usize) -> (f64, f64) {
    let mut acc = 0;
    for s in segments {
        acc += s.frames;
        if frame < acc {
            return (s.vx, s.vy);
        }
    }
    segments.last().map(|s| (s.vx, s.vy)).unwrap_or((0.0, 0.0))
}

fn validate_script(script: &SceneScript) -> Result<(), SynthError> {
    if script.id.is_empty() {
        return Err(SynthError::Script("scene id must not be empty".to_string()));
    }
    if script.duration_frames < 2 {
        return Err(SynthError::Script(
            "a scene needs at least two frames".to_string(),
        ));
    }
    if !(script.fps > 0.0) {
        return Err(SynthError::Script("fps must be positive".to_string()));
    }
    let cam = &script.camera;
    if !(cam.image_width > 0.0 && cam.image_height > 0.0 && cam.focal_px > 0.0) {
        return Err(SynthError::Script(
            "camera intrinsics must be positive".to_string(),
        ));
    }
    if script.pedestrians.is_empty() {
        return Err(SynthError::Script(
            "a scene needs at least one pedestrian".to_string(),
        ));
    }
    if script.wearer.speed.is_empty() || script.wearer.yaw_rate.is_empty() {
        return Err(SynthError::Script(
            "wearer speed and yaw-rate profiles must be non-empty".to_string(),
        ));
    }
    for (i, p) in script.pedestrians.iter().enumerate() {
        if p.velocity.is_empty() {
            return Err(SynthError::Script(format!(
                "pedestrian {i} has an empty velocity profile"
            )));
        }
        if !(p.height_m > 0.0) {
            return Err(SynthError::Script(format!(
                "pedestrian {i} height must be positive"
            )));
        }
        if !(p.gait_frequency_hz >= 0.0) {
            return Err(SynthError::Script(format!(
                "pedestrian {i} gait frequency must be non-negative"
            )));
        }
    }
    Ok(())
}

/// Integrate a script into ground truth plus one tracklet per pedestrian.
///
/// Wearer and pedestrians advance by explicit Euler steps of 1/fps using
/// the profile values at the step's source frame. Tracklets start at scene
/// frame 1 so the per-frame ego transition into every tracklet frame is
/// well defined; frames where a pedestrian does not project carry missing
/// keypoints (downstream windowing skips them).
pub fn generate_scene(
    script: &SceneScript,
) -> Result<(GroundTruthScene, Vec<Tracklet>), SynthError> {
    validate_script(script)?;
    let n = script.duration_frames;
    let dt = 1.0 / script.fps;

    // Wearer trajectory.
    let mut wearer = Vec::with_capacity(n);
    let mut pos = script.wearer.start;
    let mut yaw = script.wearer.start_yaw;
    wearer.push(WearerPose { position: pos, yaw });
    for k in 1..n {
        let speed = profile_value(&script.wearer.speed, k - 1);
        let rate = profile_value(&script.wearer.yaw_rate, k - 1);
        if speed != 0.0 {
            let (s, c) = yaw.sin_cos();
            pos = [pos[0] + speed * dt * s, pos[1] + speed * dt * c];
        }
        if rate != 0.0 {
            yaw += rate * dt;
        }
        wearer.push(WearerPose { position: pos, yaw });
    }

    // Pedestrian keypoint world tracks. Each pedestrian draws its gait
    // phase from its own RNG stream so scripts can be edited without
    // shifting the phases of unrelated pedestrians.
    let mut pedestrians = Vec::with_capacity(script.pedestrians.len());
    for (pi, ped) in script.pedestrians.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
        rng.set_stream(pi as u64);
        let gait_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut center = ped.start;
        let mut facing = ped.facing.unwrap_or_else(|| {
            ped.velocity
                .iter()
                .find(|v| v.vx != 0.0 || v.vy != 0.0)
                .map(|v| f64::atan2(v.vx, v.vy))
                .unwrap_or(0.0)
        });
        let mut frames = Vec::with_capacity(n);
        for k in 0..n {
            if k > 0 {
                let (vx, vy) = velocity_value(&ped.velocity, k - 1);
                center = [center[0] + vx * dt, center[1] + vy * dt];
                if ped.facing.is_none() && (vx != 0.0 || vy != 0.0) {
                    facing = f64::atan2(vx, vy);
                }
            }
            let gait_angle =
                std::f64::consts::TAU * ped.gait_frequency_hz * (k as f64 * dt) + gait_phase;
            frames.push(body_keypoints(center, facing, ped.height_m, gait_angle));
        }
        pedestrians.push(PedestrianTruth {
            keypoints_world: frames,
        });
    }

    let truth = GroundTruthScene {
        id: script.id.clone(),
        fps: script.fps,
        camera: script.camera,
        wearer,
        pedestrians,
    };
    let tracklets = project_truth(&truth)?;
    Ok((truth, tracklets))
}

/// Per-frame camera motion between consecutive wearer poses: the rotation
/// and translation mapping the earlier camera frame into the later one.
/// Bitwise-identical poses short-circuit to an exact identity/zero so a
/// motionless camera reports exactly no motion.
/// Relative camera motion from pose `a` to pose `b`: the rotation and
/// translation that re-express frame-`a` camera coordinates in frame `b`.
/// Bitwise-identical poses short-circuit to an exact identity motion.
pub fn ego_between(camera: &CameraRig, a: &WearerPose, b: &WearerPose) -> EgoFrame {
    if a.position == b.position && a.yaw == b.yaw {
        return EgoFrame {
            rotation: mat_identity(),
            translation: [0.0; 3],
        };
    }
    let qa = camera_rotation(a.yaw);
    let qb = camera_rotation(b.yaw);
    let qb_t = mat_transpose(&qb);
    let rotation = mat_mul(&qb_t, &qa);
    let ca = [a.position[0], a.position[1], camera.height_m];
    let cb = [b.position[0], b.position[1], camera.height_m];
    let delta = [cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]];
    let translation = mat_vec(&qb_t, &delta);
    EgoFrame {
        rotation,
        translation,
    }
}

/// Project a ground-truth scene into one tracklet per pedestrian. This is
/// the exact projection path used by `generate_scene`, exposed so the
/// sidecar can be verified to reproduce the tracklets bit for bit.
pub fn project_truth(truth: &GroundTruthScene) -> Result<Vec<Tracklet>, SynthError> {
    let n = truth.wearer.len();
    if n < 2 {
        return Err(SynthError::Truth(
            "ground truth needs at least two frames".to_string(),
        ));
    }
    let width = snap_coord(truth.camera.image_width);
    let height = snap_coord(truth.camera.image_height);

    let ego: Vec<EgoObservation> = (1..n)
        .map(|k| {
            EgoObservation::RotationTranslation(ego_between(
                &truth.camera,
                &truth.wearer[k - 1],
                &truth.wearer[k],
            ))
        })
        .collect();

    let mut tracklets = Vec::with_capacity(truth.pedestrians.len());
    for (pi, ped) in truth.pedestrians.iter().enumerate() {
        if ped.keypoints_world.len() != n {
            return Err(SynthError::Truth(format!(
                "pedestrian {pi} has {} frames, scene has {n}",
                ped.keypoints_world.len()
            )));
        }
        let mut frames = Vec::with_capacity(n - 1);
        for k in 1..n {
            let mut keypoints = [Keypoint::missing(); NUM_KEYPOINTS];
            for (ki, world) in ped.keypoints_world[k].iter().enumerate() {
                keypoints[ki] = project_keypoint(&truth.camera, &truth.wearer[k], *world);
            }
            frames.push(FrameObservation {
                frame_index: k as i64,
                frame_width: width,
                frame_height: height,
                keypoints,
            });
        }
        tracklets.push(Tracklet {
            video_id: format!("{}-p{pi}", truth.id),
            fps: truth.fps,
            start_frame: 1,
            frames,
            ego: ego.clone(),
        });
    }
    Ok(tracklets)
}

/// Longest run of consecutive frames in which the tracklet yields a valid
/// location-scale observation.
pub fn visible_run_length(tracklet: &Tracklet) -> usize {
    let mut best = 0;
    let mut run = 0;
    for f in &tracklet.frames {
        if crate::features::location_scale_from_keypoints(f).is_ok() {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Slide windows over every tracklet of a suite and pool the samples.
pub fn suite_to_samples(
    suite: &GeneratedSuite,
    t_prev: usize,
    t_future: usize,
    stride: usize,
    accumulation: RotationAccumulation,
) -> Result<Vec<Sample>, DataError> {
    let mut out = Vec::new();
    for t in &suite.tracklets {
        out.extend(crate::data::sliding_window(
            t,
            t_prev,
            t_future,
            stride,
            accumulation,
        )?);
    }
    Ok(out)
}

/// Write a suite as `<name>.jsonl` (tracklets, ingestion format) plus
/// `<name>.gt.jsonl` (one ground-truth scene per line). Returns both paths.
pub fn write_suite(suite: &GeneratedSuite, dir: &Path) -> Result<(PathBuf, PathBuf), SynthError> {
    let tracklet_path = dir.join(format!("{}.jsonl", suite.name));
    let truth_path = dir.join(format!("{}.gt.jsonl", suite.name));
    crate::data::io::write_tracklets(&tracklet_path, &suite.tracklets)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&truth_path)?);
    for t in &suite.truths {
        serde_json::to_writer(&mut w, t)
            .map_err(|e| SynthError::Truth(format!("serializing ground truth: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok((tracklet_path, truth_path))
}

/// Read a ground-truth sidecar written by [`write_suite`].
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthScene>, SynthError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: GroundTruthScene = serde_json::from_str(&line)
            .map_err(|e| SynthError::Truth(format!("line {}: {e}", i + 1)))?;
        out.push(scene);
    }
    Ok(out)
}
