//! Canned scene suites covering the regimes the forecaster must handle:
//! `linear` (static camera, constant-velocity pedestrians — the regime a
//! constant-velocity extrapolator solves exactly), `curved_ego` (a walking
//! wearer whose camera scans back and forth — the ego-motion stress set),
//! and `interactive` (pedestrians that swerve to avoid the approaching
//! wearer).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    generate_scene, CameraRig, GroundTruthScene, PedestrianScript, ProfileSegment, SceneScript,
    SynthError, VelocitySegment, WearerScript, DEFAULT_FPS,
};
use crate::data::Tracklet;

/// A generated suite: the scripts plus everything they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSuite {
    pub name: String,
    pub scripts: Vec<SceneScript>,
    pub truths: Vec<GroundTruthScene>,
    pub tracklets: Vec<Tracklet>,
}

/// Number of scenes per suite used by [`standard_suites`].
pub const DEFAULT_SCENES_PER_SUITE: usize = 10;

// Each suite derives its per-scene RNGs from a disjoint stream range so
// the suites stay independent under a shared seed.
const LINEAR_STREAM: u64 = 0;
const CURVED_STREAM: u64 = 1_000;
const INTERACTIVE_STREAM: u64 = 2_000;

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn build(name: &str, scripts: Vec<SceneScript>) -> Result<GeneratedSuite, SynthError> {
    let mut truths = Vec::with_capacity(scripts.len());
    let mut tracklets = Vec::new();
    for script in &scripts {
        let (truth, mut ts) = generate_scene(script)?;
        truths.push(truth);
        tracklets.append(&mut ts);
    }
    Ok(GeneratedSuite {
        name: name.to_string(),
        scripts,
        truths,
        tracklets,
    })
}

fn still(frames: usize) -> Vec<ProfileSegment> {
    vec![ProfileSegment { frames, value: 0.0 }]
}

fn constant_velocity(frames: usize, vx: f64, vy: f64) -> Vec<VelocitySegment> {
    vec![VelocitySegment { frames, vx, vy }]
}

/// Static camera, constant-velocity or stationary pedestrians. All motion
/// is parallel to the image plane, so image trajectories are linear and a
/// constant-velocity extrapolator is exact up to coordinate rounding.
pub fn linear_suite(seed: u64, scenes: usize) -> Result<GeneratedSuite, SynthError> {
    let mut scripts = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let mut rng = scene_rng(seed, LINEAR_STREAM + i as u64);
        let duration = 120;
        let mut pedestrians = Vec::new();
        // Two brisk crossers at different depths, opposite directions.
        for dir in [1.0, -1.0] {
            let depth = rng.gen_range(5.5..9.0);
            let speed = rng.gen_range(0.9..1.4);
            pedestrians.push(PedestrianScript {
                start: [-dir * rng.gen_range(3.5..4.5), depth],
                velocity: constant_velocity(duration, dir * speed, 0.0),
                height_m: rng.gen_range(1.6..1.85),
                gait_frequency_hz: rng.gen_range(1.4..1.9),
                facing: None,
            });
        }
        // A slow crosser that stays visible the whole scene.
        let slow_dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        pedestrians.push(PedestrianScript {
            start: [-slow_dir * 2.5, rng.gen_range(6.5..8.5)],
            velocity: constant_velocity(duration, slow_dir * rng.gen_range(0.35..0.45), 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        // A stationary pedestrian facing the camera or away from it.
        let toward = rng.gen_bool(0.5);
        pedestrians.push(PedestrianScript {
            start: [rng.gen_range(-1.5..1.5), rng.gen_range(4.5..7.5)],
            velocity: constant_velocity(duration, 0.0, 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: 0.0,
            facing: Some(if toward { std::f64::consts::PI } else { 0.0 }),
        });
        scripts.push(SceneScript {
            id: format!("linear-{i:02}"),
            seed: rng.gen(),
            duration_frames: duration,
            fps: DEFAULT_FPS,
            camera: CameraRig::default(),
            wearer: WearerScript {
                start: [0.0, 0.0],
                start_yaw: 0.0,
                speed: still(duration),
                yaw_rate: still(duration),
            },
            pedestrians,
        });
    }
    build("linear", scripts)
}

/// Walking, turning camera wearer over mixed pedestrians — the regime in
/// which image trajectories are dominated by camera motion. The first
/// wearer transition of every scene is rotation-free so accumulated ego
/// features are expressed exactly in each tracklet's base frame.
pub fn curved_ego_suite(seed: u64, scenes: usize) -> Result<GeneratedSuite, SynthError> {
    let mut scripts = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let mut rng = scene_rng(seed, CURVED_STREAM + i as u64);
        let duration = 200;
        // The wearer scans: yaw rate follows a slow sinusoid (plus a small
        // constant drift), so the camera sweeps back and forth while
        // walking. The rotation a window has just seen then genuinely
        // predicts the rotation about to happen — and the reversals break
        // straight-line extrapolation of image tracks. Amplitudes stay a
        // few degrees so pedestrians survive in frame across sweeps.
        let amplitude_rad = rng.gen_range(0.07..0.14);
        let period = rng.gen_range(30.0..45.0f64);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let drift = rng.gen_range(0.005..0.02) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        // Peak rate in rad/s for a yaw excursion of `amplitude_rad`:
        // yaw(t) = A·sin(2πt/P + φ) ⇒ rate peaks at 2πA/P frames⁻¹.
        let peak_rate = std::f64::consts::TAU * amplitude_rad / period * DEFAULT_FPS;
        let mut yaw_rate = vec![ProfileSegment {
            frames: 5,
            value: 0.0,
        }];
        for t in 5..duration {
            let arg = std::f64::consts::TAU * ((t - 5) as f64) / period + phase;
            yaw_rate.push(ProfileSegment {
                frames: 1,
                value: drift + peak_rate * arg.sin(),
            });
        }
        let wearer = WearerScript {
            start: [0.0, 0.0],
            start_yaw: 0.0,
            speed: vec![ProfileSegment {
                frames: duration,
                value: rng.gen_range(0.8..1.25),
            }],
            yaw_rate,
        };
        // Pedestrians spread over both sides of the scan so every sweep
        // phase keeps several of them in view at varied bearings.
        fn side(rng: &mut ChaCha8Rng) -> f64 {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
        let mut pedestrians = Vec::new();
        // A crosser and an approacher ahead.
        pedestrians.push(PedestrianScript {
            start: [rng.gen_range(-3.0..-1.5), rng.gen_range(7.0..10.0)],
            velocity: constant_velocity(duration, rng.gen_range(0.7..1.1), 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        pedestrians.push(PedestrianScript {
            start: [rng.gen_range(-1.0..1.0), rng.gen_range(11.0..14.0)],
            velocity: constant_velocity(duration, 0.0, -rng.gen_range(0.9..1.3)),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        // A departing walker and a bystander off to one side each.
        let s3 = side(&mut rng);
        pedestrians.push(PedestrianScript {
            start: [s3 * rng.gen_range(1.0..2.5), rng.gen_range(8.0..11.0)],
            velocity: constant_velocity(duration, 0.0, rng.gen_range(0.7..1.1)),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        let s4 = side(&mut rng);
        pedestrians.push(PedestrianScript {
            start: [s4 * rng.gen_range(2.0..3.5), rng.gen_range(9.0..12.0)],
            velocity: constant_velocity(duration, 0.0, 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: 0.0,
            facing: Some(if rng.gen_bool(0.5) {
                std::f64::consts::PI
            } else {
                0.0
            }),
        });
        // A far crosser heading back toward the camera axis.
        let s5 = side(&mut rng);
        pedestrians.push(PedestrianScript {
            start: [s5 * rng.gen_range(1.0..3.0), rng.gen_range(12.0..16.0)],
            velocity: constant_velocity(duration, -s5 * rng.gen_range(0.5..0.9), 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        // A mid-depth walker drifting sideways while receding.
        let s6 = side(&mut rng);
        pedestrians.push(PedestrianScript {
            start: [s6 * rng.gen_range(1.0..2.5), rng.gen_range(6.5..9.0)],
            velocity: constant_velocity(
                duration,
                s6 * rng.gen_range(0.3..0.6),
                rng.gen_range(0.5..0.9),
            ),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        scripts.push(SceneScript {
            id: format!("curved-{i:02}"),
            seed: rng.gen(),
            duration_frames: duration,
            fps: DEFAULT_FPS,
            camera: CameraRig::default(),
            wearer,
            pedestrians,
        });
    }
    build("curved_ego", scripts)
}

/// Straight-walking wearer with oncoming pedestrians that swerve aside as
/// the gap closes, then resume their course.
pub fn interactive_suite(seed: u64, scenes: usize) -> Result<GeneratedSuite, SynthError> {
    let mut scripts = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let mut rng = scene_rng(seed, INTERACTIVE_STREAM + i as u64);
        let duration = 140;
        let wearer_speed = rng.gen_range(0.9..1.2);
        let wearer = WearerScript {
            start: [0.0, 0.0],
            start_yaw: 0.0,
            speed: vec![ProfileSegment {
                frames: duration,
                value: wearer_speed,
            }],
            yaw_rate: still(duration),
        };
        let mut pedestrians = Vec::new();
        // Two head-on walkers who curve away once the gap closes to a few
        // meters, one to each side.
        for side in [1.0, -1.0] {
            let start_y = rng.gen_range(12.0..16.0);
            let approach = rng.gen_range(1.0..1.3);
            // Frames until the mutual gap shrinks to ~5.5 m.
            let closing = wearer_speed + approach;
            let swerve_at = (((start_y - 5.5) / closing) * DEFAULT_FPS).floor().max(1.0) as usize;
            pedestrians.push(PedestrianScript {
                start: [side * rng.gen_range(0.1..0.5), start_y],
                velocity: vec![
                    VelocitySegment {
                        frames: swerve_at,
                        vx: 0.0,
                        vy: -approach,
                    },
                    VelocitySegment {
                        frames: 15,
                        vx: side * rng.gen_range(0.7..1.0),
                        vy: -approach * 0.75,
                    },
                    VelocitySegment {
                        frames: duration,
                        vx: 0.0,
                        vy: -approach,
                    },
                ],
                height_m: rng.gen_range(1.6..1.85),
                gait_frequency_hz: rng.gen_range(1.4..1.9),
                facing: None,
            });
        }
        // A lead walker the wearer slowly gains on; visible essentially
        // all scene long.
        pedestrians.push(PedestrianScript {
            start: [rng.gen_range(-0.6..0.6), rng.gen_range(6.0..8.0)],
            velocity: constant_velocity(duration, 0.0, wearer_speed - rng.gen_range(0.1..0.3)),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        // A crosser and a bystander for variety.
        let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        pedestrians.push(PedestrianScript {
            start: [-dir * rng.gen_range(3.0..4.0), rng.gen_range(8.0..11.0)],
            velocity: constant_velocity(duration, dir * rng.gen_range(0.7..1.0), 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: rng.gen_range(1.4..1.9),
            facing: None,
        });
        pedestrians.push(PedestrianScript {
            start: [rng.gen_range(1.5..2.5), rng.gen_range(9.0..12.0)],
            velocity: constant_velocity(duration, 0.0, 0.0),
            height_m: rng.gen_range(1.6..1.85),
            gait_frequency_hz: 0.0,
            facing: Some(std::f64::consts::PI),
        });
        scripts.push(SceneScript {
            id: format!("interactive-{i:02}"),
            seed: rng.gen(),
            duration_frames: duration,
            fps: DEFAULT_FPS,
            camera: CameraRig::default(),
            wearer,
            pedestrians,
        });
    }
    build("interactive", scripts)
}

/// The three default suites at their default sizes.
pub fn standard_suites(seed: u64) -> Result<Vec<GeneratedSuite>, SynthError> {
    Ok(vec![
        linear_suite(seed, DEFAULT_SCENES_PER_SUITE)?,
        curved_ego_suite(seed, DEFAULT_SCENES_PER_SUITE)?,
        interactive_suite(seed, DEFAULT_SCENES_PER_SUITE)?,
    ])
}
