//! Per-frame observation features: pedestrian location-scale, normalized
//! body pose, and camera ego-motion cues.
//!
//! # Conventions
//!
//! * Image coordinates: `x` grows rightward, `y` grows downward, in pixels.
//! * Camera frame: `x` right, `y` down, `z` forward (optical axis).
//! * A per-frame ego rotation `R_t` maps vectors expressed in camera frame
//!   `t−1` into camera frame `t`; the translation `v_t` is the camera
//!   displacement from `t−1` to `t` expressed in frame `t`.
//! * Euler angles follow the intrinsic yaw→pitch→roll convention about the
//!   camera's vertical (`y`), lateral (`x`) and optical (`z`) axes:
//!   `R = Ry(yaw) · Rx(pitch) · Rz(roll)`. Angles live in `(−π, π]`.
//!
//! Keypoint coordinates are snapped to a 1/1024-pixel grid at ingestion
//! (see [`snap_coord`]) so that the horizontal mirror `x → W − x` used for
//! augmentation is bitwise exact and involutive.

use crate::geom::{
    mat_identity, mat_mul, mat_transpose, mat_vec, rotation_deviation, vec_add, Mat3, Vec3,
};
use thiserror::Error;

/// Number of body keypoints per observation (18-part layout).
pub const NUM_KEYPOINTS: usize = 18;

/// Dimension of the per-frame pose feature: an `(x, y)` pair per keypoint.
pub const POSE_DIM: usize = 2 * NUM_KEYPOINTS;

/// Dimension of an accumulated rotation/translation ego feature.
pub const EGO_DIM_ROTATION: usize = 6;

/// Dimension of a grid-pooled optical-flow ego feature.
pub const EGO_DIM_FLOW: usize = 24;

/// Flow pooling grid: 4 columns × 3 rows.
pub const FLOW_GRID_COLS: usize = 4;
/// Flow pooling grid: 4 columns × 3 rows.
pub const FLOW_GRID_ROWS: usize = 3;

/// Keypoint indices of the 18-part body layout.
pub mod kp {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
}

/// Anatomically symmetric (right, left) keypoint index pairs.
pub const LEFT_RIGHT_PAIRS: [(usize, usize); 8] = [
    (kp::R_SHOULDER, kp::L_SHOULDER),
    (kp::R_ELBOW, kp::L_ELBOW),
    (kp::R_WRIST, kp::L_WRIST),
    (kp::R_HIP, kp::L_HIP),
    (kp::R_KNEE, kp::L_KNEE),
    (kp::R_ANKLE, kp::L_ANKLE),
    (kp::R_EYE, kp::L_EYE),
    (kp::R_EAR, kp::L_EAR),
];

/// For each keypoint index, the index it maps to under a horizontal mirror
/// (left/right swapped; nose and neck map to themselves).
pub const MIRROR_INDEX: [usize; NUM_KEYPOINTS] =
    [0, 1, 5, 6, 7, 2, 3, 4, 11, 12, 13, 8, 9, 10, 15, 14, 17, 16];

/// Snap an image coordinate to the 1/1024-pixel grid.
///
/// All keypoint coordinates and frame sizes pass through this at ingestion.
/// On the grid, every derived absolute coordinate (hip midpoints, anchors)
/// has at most 22 significant bits below 2^11, so the horizontal mirror
/// `x → W − x` is exact in f64 and applying it twice restores the original
/// bit pattern. The 1/1024 px quantization is far below any detector noise.
pub fn snap_coord(x: f64) -> f64 {
    (x * 1024.0).round() / 1024.0
}

/// Errors raised while deriving features from observations.
#[derive(Debug, Error)]
pub enum FeatureError {
    /// A frame lacks the keypoints needed for a valid observation.
    #[error("frame {frame_index}: {what}")]
    InvalidObservation { frame_index: i64, what: String },
    /// An ego rotation is not orthonormal with determinant one.
    #[error("ego frame {index}: rotation deviates from orthonormal by {deviation:.3e}")]
    InvalidRotation { index: usize, deviation: f64 },
    /// A sample window violates a structural precondition.
    #[error("invalid sample window: {0}")]
    InvalidWindow(String),
    /// A flow field cannot be pooled onto the grid.
    #[error("invalid flow field: {0}")]
    InvalidFlow(String),
}

/// One detected body keypoint in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Whether the detector produced a confident estimate for this joint.
    pub valid: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Keypoint { x, y, valid: true }
    }

    pub fn missing() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            valid: false,
        }
    }
}

/// All keypoints of one person in one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    /// Frame index within the source video.
    pub frame_index: i64,
    /// Frame width in pixels.
    pub frame_width: f64,
    /// Frame height in pixels.
    pub frame_height: f64,
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

/// A person's image-plane state: center location and body scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationScale {
    /// Mid-hip x in pixels.
    pub x: f64,
    /// Mid-hip y in pixels.
    pub y: f64,
    /// Torso extent in pixels: distance from the neck to the mid-hip point.
    pub s: f64,
}

/// Derive the location-scale state from a frame's keypoints.
///
/// The location is the midpoint of the two hips; the scale is the Euclidean
/// distance from the neck to that midpoint. Both hips and the neck must be
/// valid and the scale strictly positive.
pub fn location_scale_from_keypoints(
    frame: &FrameObservation,
) -> Result<LocationScale, FeatureError> {
    let neck = frame.keypoints[kp::NECK];
    let lhip = frame.keypoints[kp::L_HIP];
    let rhip = frame.keypoints[kp::R_HIP];
    if !(neck.valid && lhip.valid && rhip.valid) {
        return Err(FeatureError::InvalidObservation {
            frame_index: frame.frame_index,
            what: "neck or hip keypoints missing".to_string(),
        });
    }
    let x = 0.5 * (lhip.x + rhip.x);
    let y = 0.5 * (lhip.y + rhip.y);
    let s = ((neck.x - x).powi(2) + (neck.y - y).powi(2)).sqrt();
    if !(s > 0.0) {
        return Err(FeatureError::InvalidObservation {
            frame_index: frame.frame_index,
            what: "zero torso extent (neck coincides with mid-hip)".to_string(),
        });
    }
    Ok(LocationScale { x, y, s })
}

/// Compute the normalized pose feature for one frame.
///
/// Each keypoint is re-expressed relative to the location-scale state:
/// `(k − l) / s`. Invalid keypoints take the last valid normalized value
/// seen earlier in the window (tracked in `carry`), or `(0, 0)` if the
/// joint has not been seen yet. `carry` must start as all-`None` at the
/// beginning of each window and be threaded through successive frames.
pub fn pose_from_keypoints(
    frame: &FrameObservation,
    ls: &LocationScale,
    carry: &mut [Option<[f64; 2]>; NUM_KEYPOINTS],
) -> [f64; POSE_DIM] {
    let mut out = [0.0; POSE_DIM];
    for i in 0..NUM_KEYPOINTS {
        let k = frame.keypoints[i];
        let v = if k.valid {
            let v = [(k.x - ls.x) / ls.s, (k.y - ls.y) / ls.s];
            carry[i] = Some(v);
            v
        } else {
            carry[i].unwrap_or([0.0, 0.0])
        };
        out[2 * i] = v[0];
        out[2 * i + 1] = v[1];
    }
    out
}

/// Wrap an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Orientation as intrinsic yaw→pitch→roll about the camera's vertical,
/// lateral and optical axes: `R = Ry(yaw) · Rx(pitch) · Rz(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl EulerAngles {
    pub fn zero() -> Self {
        EulerAngles {
            yaw: 0.0,
            roll: 0.0,
            pitch: 0.0,
        }
    }
}

/// Build the rotation matrix for the given Euler angles.
pub fn rotation_from_euler(e: &EulerAngles) -> Mat3 {
    use crate::geom::{rot_x, rot_y, rot_z};
    mat_mul(&rot_y(e.yaw), &mat_mul(&rot_x(e.pitch), &rot_z(e.roll)))
}

/// Extract Euler angles from a rotation matrix.
///
/// Away from gimbal lock this inverts [`rotation_from_euler`] to within
/// 1e-9. At gimbal lock (`|pitch| = π/2`) yaw and roll share an axis; the
/// shared angle is reported entirely as yaw and roll is forced to zero,
/// which still reproduces the input matrix exactly.
pub fn euler_from_rotation(r: &Mat3) -> EulerAngles {
    let sp = (-r[1][2]).clamp(-1.0, 1.0);
    if 1.0 - sp.abs() < 1e-12 {
        let sign = if sp > 0.0 { 1.0 } else { -1.0 };
        EulerAngles {
            yaw: wrap_angle(f64::atan2(sign * r[0][1], r[0][0])),
            roll: 0.0,
            pitch: sign * std::f64::consts::FRAC_PI_2,
        }
    } else {
        EulerAngles {
            yaw: wrap_angle(f64::atan2(r[0][2], r[2][2])),
            roll: wrap_angle(f64::atan2(r[1][0], r[1][1])),
            pitch: sp.asin(),
        }
    }
}

/// Camera motion between two consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFrame {
    /// Maps vectors from the previous camera frame into the current one.
    pub rotation: Mat3,
    /// Camera displacement since the previous frame, in the current frame.
    pub translation: Vec3,
}

impl EgoFrame {
    /// The zero-motion transition.
    pub fn identity() -> Self {
        EgoFrame {
            rotation: mat_identity(),
            translation: [0.0; 3],
        }
    }
}

/// Which side accumulated rotations compose on.
///
/// With per-frame rotations mapping frame `t−1` coordinates into frame `t`,
/// `PreMultiply` (`R'_t = R_t · R'_{t−1}`) telescopes to the map from the
/// window's base frame into frame `t`, so the accumulated translation is the
/// exact displacement expressed in the base frame. `PostMultiply`
/// (`R'_t = R'_{t−1} · R_t`) is the alternative composition order; the two
/// coincide whenever all rotations share an axis (e.g. pure yaw).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationAccumulation {
    #[default]
    PreMultiply,
    PostMultiply,
}

/// Accumulated ego-motion state at one frame of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFeature {
    pub angles: EulerAngles,
    pub translation: Vec3,
}

impl EgoFeature {
    /// Feature layout fed to the network: `[yaw, roll, pitch, tx, ty, tz]`.
    pub fn as_array(&self) -> [f64; EGO_DIM_ROTATION] {
        [
            self.angles.yaw,
            self.angles.roll,
            self.angles.pitch,
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }
}

/// Accumulate per-frame camera motions over a window.
///
/// The first step is taken literally: `R'_first = R_first` and
/// `v'_first = v_first`. Later steps compose rotations per `order` and sum
/// translations re-expressed through the accumulated rotation:
/// `v'_t = R'^{-1}_t · v_t + v'_{t−1}`. Every rotation must be orthonormal
/// with determinant one (tolerance 1e-6).
pub fn accumulate_ego(
    frames: &[EgoFrame],
    order: RotationAccumulation,
) -> Result<Vec<EgoFeature>, FeatureError> {
    const ROT_TOL: f64 = 1e-6;
    let mut out = Vec::with_capacity(frames.len());
    let mut acc_r = mat_identity();
    let mut acc_v: Vec3 = [0.0; 3];
    for (i, f) in frames.iter().enumerate() {
        let deviation = rotation_deviation(&f.rotation);
        if deviation > ROT_TOL {
            return Err(FeatureError::InvalidRotation {
                index: i,
                deviation,
            });
        }
        if i == 0 {
            acc_r = f.rotation;
            acc_v = f.translation;
        } else {
            acc_r = match order {
                RotationAccumulation::PreMultiply => mat_mul(&f.rotation, &acc_r),
                RotationAccumulation::PostMultiply => mat_mul(&acc_r, &f.rotation),
            };
            acc_v = vec_add(&mat_vec(&mat_transpose(&acc_r), &f.translation), &acc_v);
        }
        out.push(EgoFeature {
            angles: euler_from_rotation(&acc_r),
            translation: acc_v,
        });
    }
    Ok(out)
}

/// Pool a dense flow field onto a 4×3 grid of mean-flow cells.
///
/// `flow` is row-major `[height][width][2]` with `(u, v)` per pixel. Cell
/// boundaries are the integer partition of width/height with remainder
/// pixels assigned to the last column/row. Output layout is row-major over
/// cells: `[u_00, v_00, u_01, v_01, …]` (row `r`, column `c` at index
/// `2·(r·4 + c)`).
pub fn flow_grid_feature(
    flow: &[f64],
    width: usize,
    height: usize,
) -> Result<[f64; EGO_DIM_FLOW], FeatureError> {
    if width == 0 || height == 0 {
        return Err(FeatureError::InvalidFlow("empty field".to_string()));
    }
    if flow.len() != width * height * 2 {
        return Err(FeatureError::InvalidFlow(format!(
            "field of {}x{} pixels needs {} values, got {}",
            width,
            height,
            width * height * 2,
            flow.len()
        )));
    }
    if width < FLOW_GRID_COLS || height < FLOW_GRID_ROWS {
        return Err(FeatureError::InvalidFlow(format!(
            "field of {}x{} pixels is smaller than the {}x{} pooling grid",
            width, height, FLOW_GRID_COLS, FLOW_GRID_ROWS
        )));
    }
    let col_w = width / FLOW_GRID_COLS;
    let row_h = height / FLOW_GRID_ROWS;
    let mut out = [0.0; EGO_DIM_FLOW];
    for r in 0..FLOW_GRID_ROWS {
        let y0 = r * row_h;
        let y1 = if r + 1 == FLOW_GRID_ROWS {
            height
        } else {
            (r + 1) * row_h
        };
        for c in 0..FLOW_GRID_COLS {
            let x0 = c * col_w;
            let x1 = if c + 1 == FLOW_GRID_COLS {
                width
            } else {
                (c + 1) * col_w
            };
            let mut su = 0.0;
            let mut sv = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let base = 2 * (y * width + x);
                    su += flow[base];
                    sv += flow[base + 1];
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out[2 * (r * FLOW_GRID_COLS + c)] = su / count;
            out[2 * (r * FLOW_GRID_COLS + c) + 1] = sv / count;
        }
    }
    Ok(out)
}

/// Per-frame ego-motion evidence attached to a tracklet.
#[derive(Debug, Clone, PartialEq)]
pub enum EgoObservation {
    /// Frame-to-frame rotation and translation (e.g. from visual odometry).
    RotationTranslation(EgoFrame),
    /// Grid-pooled optical flow, already reduced to 24 values.
    FlowGrid([f64; EGO_DIM_FLOW]),
}

impl EgoObservation {
    /// Channel count this observation kind contributes per frame.
    pub fn feature_dim(&self) -> usize {
        match self {
            EgoObservation::RotationTranslation(_) => EGO_DIM_ROTATION,
            EgoObservation::FlowGrid(_) => EGO_DIM_FLOW,
        }
    }
}

/// Assemble one training/evaluation sample from a window of observations.
///
/// `frames` and `ego` must both hold exactly `t_prev + t_future` entries;
/// every frame must yield a valid location-scale state. The sample's input
/// channels cover the first `t_prev` frames; targets are location-scale
/// offsets of the remaining `t_future` frames relative to the last input
/// frame (the anchor).
pub fn build_sample(
    video_id: &str,
    frames: &[FrameObservation],
    ego: &[EgoObservation],
    t_prev: usize,
    t_future: usize,
    accumulation: RotationAccumulation,
) -> Result<crate::data::Sample, FeatureError> {
    if t_prev == 0 || t_future == 0 {
        return Err(FeatureError::InvalidWindow(
            "both the input and future interval must be non-empty".to_string(),
        ));
    }
    let total = t_prev + t_future;
    if frames.len() != total {
        return Err(FeatureError::InvalidWindow(format!(
            "window holds {} frames but t_prev + t_future = {}",
            frames.len(),
            total
        )));
    }
    if ego.len() != frames.len() {
        return Err(FeatureError::InvalidWindow(format!(
            "{} ego entries for {} frames",
            ego.len(),
            frames.len()
        )));
    }

    let states: Vec<LocationScale> = frames
        .iter()
        .map(location_scale_from_keypoints)
        .collect::<Result<_, _>>()?;

    let mut x_in = vec![0.0; 3 * t_prev];
    for t in 0..t_prev {
        x_in[t] = states[t].x;
        x_in[t_prev + t] = states[t].y;
        x_in[2 * t_prev + t] = states[t].s;
    }

    let anchor = states[t_prev - 1];
    let mut x_out = vec![0.0; 3 * t_future];
    for k in 0..t_future {
        let fut = states[t_prev + k];
        x_out[k] = fut.x - anchor.x;
        x_out[t_future + k] = fut.y - anchor.y;
        x_out[2 * t_future + k] = fut.s - anchor.s;
    }

    let ego_dim = ego[0].feature_dim();
    let mut e_in = vec![0.0; ego_dim * t_prev];
    match ego[0] {
        EgoObservation::RotationTranslation(_) => {
            let mut motion = Vec::with_capacity(t_prev);
            for (t, obs) in ego.iter().take(t_prev).enumerate() {
                match obs {
                    EgoObservation::RotationTranslation(f) => motion.push(*f),
                    EgoObservation::FlowGrid(_) => {
                        return Err(FeatureError::InvalidWindow(format!(
                            "mixed ego observation kinds at offset {t}"
                        )))
                    }
                }
            }
            let acc = accumulate_ego(&motion, accumulation)?;
            for (t, feat) in acc.iter().enumerate() {
                for (c, v) in feat.as_array().iter().enumerate() {
                    e_in[c * t_prev + t] = *v;
                }
            }
        }
        EgoObservation::FlowGrid(_) => {
            for (t, obs) in ego.iter().take(t_prev).enumerate() {
                match obs {
                    EgoObservation::FlowGrid(cells) => {
                        for (c, v) in cells.iter().enumerate() {
                            e_in[c * t_prev + t] = *v;
                        }
                    }
                    EgoObservation::RotationTranslation(_) => {
                        return Err(FeatureError::InvalidWindow(format!(
                            "mixed ego observation kinds at offset {t}"
                        )))
                    }
                }
            }
        }
    }

    let mut p_in = vec![0.0; POSE_DIM * t_prev];
    let mut carry = [None; NUM_KEYPOINTS];
    for t in 0..t_prev {
        let pose = pose_from_keypoints(&frames[t], &states[t], &mut carry);
        for (c, v) in pose.iter().enumerate() {
            p_in[c * t_prev + t] = *v;
        }
    }

    let direction = crate::data::categorize_direction(frames)?;
    let anchor_frame = &frames[t_prev - 1];

    Ok(crate::data::Sample {
        video_id: video_id.to_string(),
        t0: anchor_frame.frame_index,
        frame_width: anchor_frame.frame_width,
        frame_height: anchor_frame.frame_height,
        x_in,
        e_in,
        p_in,
        x_out,
        anchor,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rot_x, rot_y, rot_z};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_with(keypoints: [Keypoint; NUM_KEYPOINTS]) -> FrameObservation {
        FrameObservation {
            frame_index: 0,
            frame_width: 1280.0,
            frame_height: 960.0,
            keypoints,
        }
    }

    /// A minimal valid frame: hips straddling (cx, cy), neck `s` above.
    fn simple_frame(idx: i64, cx: f64, cy: f64, s: f64) -> FrameObservation {
        let mut kps = [Keypoint::new(0.0, 0.0); NUM_KEYPOINTS];
        kps[kp::L_HIP] = Keypoint::new(cx + 10.0, cy);
        kps[kp::R_HIP] = Keypoint::new(cx - 10.0, cy);
        kps[kp::NECK] = Keypoint::new(cx, cy - s);
        kps[kp::NOSE] = Keypoint::new(cx, cy - s - 10.0);
        FrameObservation {
            frame_index: idx,
            frame_width: 1280.0,
            frame_height: 960.0,
            keypoints: kps,
        }
    }

    #[test]
    fn mirror_index_matches_pair_table() {
        let mut expect = [0usize; NUM_KEYPOINTS];
        for (i, slot) in expect.iter_mut().enumerate() {
            *slot = i;
        }
        for &(r, l) in &LEFT_RIGHT_PAIRS {
            expect[r] = l;
            expect[l] = r;
        }
        assert_eq!(expect, MIRROR_INDEX);
        for (i, &j) in MIRROR_INDEX.iter().enumerate() {
            assert_eq!(MIRROR_INDEX[j], i, "mirror must be an involution");
        }
    }

    #[test]
    fn snap_coord_makes_mirror_exact() {
        assert_eq!(snap_coord(0.1), 102.0 / 1024.0);
        assert_eq!(snap_coord(640.25), 640.25);
        let w = 1280.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = snap_coord(rng.gen_range(0.0..w));
            let flipped = w - x;
            assert_eq!(
                w - flipped,
                x,
                "mirror must round-trip bitwise for snapped coords"
            );
        }
    }

    #[test]
    fn location_scale_hand_example() {
        let mut kps = [Keypoint::missing(); NUM_KEYPOINTS];
        kps[kp::L_HIP] = Keypoint::new(100.0, 200.0);
        kps[kp::R_HIP] = Keypoint::new(140.0, 200.0);
        kps[kp::NECK] = Keypoint::new(120.0, 140.0);
        let ls = location_scale_from_keypoints(&frame_with(kps)).unwrap();
        assert_eq!(ls.x, 120.0);
        assert_eq!(ls.y, 200.0);
        assert_eq!(ls.s, 60.0);
    }

    #[test]
    fn location_scale_rejects_missing_and_degenerate() {
        let mut kps = [Keypoint::missing(); NUM_KEYPOINTS];
        kps[kp::L_HIP] = Keypoint::new(100.0, 200.0);
        kps[kp::R_HIP] = Keypoint::new(140.0, 200.0);
        // Neck missing.
        assert!(matches!(
            location_scale_from_keypoints(&frame_with(kps)),
            Err(FeatureError::InvalidObservation { .. })
        ));
        // Neck coincides with the hip midpoint: zero scale.
        kps[kp::NECK] = Keypoint::new(120.0, 200.0);
        assert!(matches!(
            location_scale_from_keypoints(&frame_with(kps)),
            Err(FeatureError::InvalidObservation { .. })
        ));
    }

    #[test]
    fn location_scale_mirrors_cleanly() {
        let w = 640.0;
        let mut kps = [Keypoint::missing(); NUM_KEYPOINTS];
        kps[kp::L_HIP] = Keypoint::new(100.0, 200.0);
        kps[kp::R_HIP] = Keypoint::new(140.0, 200.0);
        kps[kp::NECK] = Keypoint::new(120.0, 140.0);
        let ls = location_scale_from_keypoints(&frame_with(kps)).unwrap();
        let mut flipped = kps;
        for k in flipped.iter_mut() {
            k.x = w - k.x;
        }
        let fls = location_scale_from_keypoints(&frame_with(flipped)).unwrap();
        assert_eq!(fls.x, w - ls.x);
        assert_eq!(fls.y, ls.y);
        assert_eq!(fls.s, ls.s);
    }

    #[test]
    fn pose_normalization_and_unit_neck() {
        let mut kps = [Keypoint::missing(); NUM_KEYPOINTS];
        kps[kp::L_HIP] = Keypoint::new(100.0, 200.0);
        kps[kp::R_HIP] = Keypoint::new(140.0, 200.0);
        kps[kp::NECK] = Keypoint::new(120.0, 140.0);
        kps[kp::NOSE] = Keypoint::new(120.0, 200.0); // exactly at l
        let frame = frame_with(kps);
        let ls = location_scale_from_keypoints(&frame).unwrap();
        let mut carry = [None; NUM_KEYPOINTS];
        let pose = pose_from_keypoints(&frame, &ls, &mut carry);
        assert_eq!(pose[2 * kp::NOSE], 0.0);
        assert_eq!(pose[2 * kp::NOSE + 1], 0.0);
        // Axis-aligned neck normalizes to exactly unit length.
        assert_eq!(pose[2 * kp::NECK], 0.0);
        assert_eq!(pose[2 * kp::NECK + 1], -1.0);
    }

    #[test]
    fn pose_scale_invariance_is_exact_for_power_of_two() {
        let frame = simple_frame(0, 300.0, 400.0, 57.0);
        let ls = location_scale_from_keypoints(&frame).unwrap();
        let mut carry = [None; NUM_KEYPOINTS];
        let pose = pose_from_keypoints(&frame, &ls, &mut carry);

        let mut scaled = frame.clone();
        for k in scaled.keypoints.iter_mut() {
            k.x = ls.x + 2.0 * (k.x - ls.x);
            k.y = ls.y + 2.0 * (k.y - ls.y);
        }
        let ls2 = location_scale_from_keypoints(&scaled).unwrap();
        assert_eq!(ls2.s, 2.0 * ls.s);
        let mut carry2 = [None; NUM_KEYPOINTS];
        let pose2 = pose_from_keypoints(&scaled, &ls2, &mut carry2);
        assert_eq!(pose, pose2);
    }

    #[test]
    fn pose_imputation_carries_last_valid_value() {
        let f0 = simple_frame(0, 300.0, 400.0, 60.0);
        let mut f1 = simple_frame(1, 310.0, 402.0, 61.0);
        f1.keypoints[kp::R_WRIST] = Keypoint::missing();
        let mut f2 = simple_frame(2, 320.0, 404.0, 62.0);
        f2.keypoints[kp::R_WRIST] = Keypoint::missing();

        let mut carry = [None; NUM_KEYPOINTS];
        let ls0 = location_scale_from_keypoints(&f0).unwrap();
        let p0 = pose_from_keypoints(&f0, &ls0, &mut carry);
        let ls1 = location_scale_from_keypoints(&f1).unwrap();
        let p1 = pose_from_keypoints(&f1, &ls1, &mut carry);
        let ls2 = location_scale_from_keypoints(&f2).unwrap();
        let p2 = pose_from_keypoints(&f2, &ls2, &mut carry);

        // Frames 1 and 2 reuse frame 0's normalized wrist.
        assert_eq!(p1[2 * kp::R_WRIST], p0[2 * kp::R_WRIST]);
        assert_eq!(p2[2 * kp::R_WRIST], p0[2 * kp::R_WRIST]);
        assert_eq!(p1[2 * kp::R_WRIST + 1], p0[2 * kp::R_WRIST + 1]);
    }

    #[test]
    fn pose_leading_gap_imputes_zero() {
        let mut f0 = simple_frame(0, 300.0, 400.0, 60.0);
        f0.keypoints[kp::L_EAR] = Keypoint::missing();
        let ls0 = location_scale_from_keypoints(&f0).unwrap();
        let mut carry = [None; NUM_KEYPOINTS];
        let p0 = pose_from_keypoints(&f0, &ls0, &mut carry);
        assert_eq!(p0[2 * kp::L_EAR], 0.0);
        assert_eq!(p0[2 * kp::L_EAR + 1], 0.0);
    }

    #[test]
    fn euler_identity_and_single_axis() {
        let e = euler_from_rotation(&mat_identity());
        assert_eq!((e.yaw, e.roll, e.pitch), (0.0, 0.0, 0.0));
        // +0.3 rad about the camera's vertical axis is pure yaw.
        let e = euler_from_rotation(&rot_y(0.3));
        assert_abs_diff_eq!(e.yaw, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e.roll, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.pitch, 0.0, epsilon = 1e-15);
        let e = euler_from_rotation(&rot_z(-0.4));
        assert_abs_diff_eq!(e.roll, -0.4, epsilon = 1e-15);
        let e = euler_from_rotation(&rot_x(0.2));
        assert_abs_diff_eq!(e.pitch, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip_over_seeded_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let a = EulerAngles {
                yaw: rng.gen_range(-3.1..3.1),
                roll: rng.gen_range(-3.1..3.1),
                pitch: rng.gen_range(-1.5..1.5),
            };
            let r = rotation_from_euler(&a);
            let b = euler_from_rotation(&r);
            assert_abs_diff_eq!(a.yaw, b.yaw, epsilon = 1e-9);
            assert_abs_diff_eq!(a.roll, b.roll, epsilon = 1e-9);
            assert_abs_diff_eq!(a.pitch, b.pitch, epsilon = 1e-9);
        }
    }

    #[test]
    fn euler_gimbal_lock_reproduces_matrix() {
        use std::f64::consts::FRAC_PI_2;
        // pitch = +π/2 with both yaw and roll present: only yaw − roll is
        // observable; the convention reports it as pure yaw.
        let original = rotation_from_euler(&EulerAngles {
            yaw: 0.7,
            roll: 0.2,
            pitch: FRAC_PI_2,
        });
        let e = euler_from_rotation(&original);
        assert_eq!(e.roll, 0.0);
        assert_abs_diff_eq!(e.pitch, FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(e.yaw, 0.5, epsilon = 1e-12);
        let rebuilt = rotation_from_euler(&e);
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(rebuilt[r][c], original[r][c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_pure_forward_motion() {
        let frames: Vec<EgoFrame> = (0..5)
            .map(|_| EgoFrame {
                rotation: mat_identity(),
                translation: [0.0, 0.0, 1.0],
            })
            .collect();
        let acc = accumulate_ego(&frames, RotationAccumulation::PreMultiply).unwrap();
        for (i, f) in acc.iter().enumerate() {
            assert_eq!(f.translation, [0.0, 0.0, (i + 1) as f64]);
            assert_eq!(f.angles, EulerAngles::zero());
        }
    }

    #[test]
    fn accumulate_zero_motion_is_exactly_zero() {
        let frames = vec![EgoFrame::identity(); 10];
        let acc = accumulate_ego(&frames, RotationAccumulation::default()).unwrap();
        for f in acc {
            assert_eq!(f.as_array(), [0.0; EGO_DIM_ROTATION]);
        }
    }

    #[test]
    fn accumulate_constant_yaw_wraps() {
        let delta = 0.37;
        let frames: Vec<EgoFrame> = (0..30)
            .map(|_| EgoFrame {
                rotation: rot_y(delta),
                translation: [0.0; 3],
            })
            .collect();
        let acc = accumulate_ego(&frames, RotationAccumulation::PreMultiply).unwrap();
        for (i, f) in acc.iter().enumerate() {
            let expect = wrap_angle((i + 1) as f64 * delta);
            assert_abs_diff_eq!(f.angles.yaw, expect, epsilon = 1e-9);
            assert_abs_diff_eq!(f.angles.roll, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.angles.pitch, 0.0, epsilon = 1e-12);
            assert_eq!(f.translation, [0.0; 3]);
        }
    }

    #[test]
    fn accumulate_rejects_non_orthonormal() {
        let mut bad = mat_identity();
        bad[0][0] = 1.001;
        let frames = vec![EgoFrame {
            rotation: bad,
            translation: [0.0; 3],
        }];
        assert!(matches!(
            accumulate_ego(&frames, RotationAccumulation::default()),
            Err(FeatureError::InvalidRotation { index: 0, .. })
        ));
    }

    /// Closed loop: build per-frame motions from a known absolute camera
    /// trajectory and check that accumulation recovers the base-frame pose.
    #[test]
    fn accumulate_recovers_absolute_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        // Absolute orientations Q_t (camera→reference) and positions c_t.
        let mut qs: Vec<Mat3> = vec![mat_identity()];
        let mut cs: Vec<Vec3> = vec![[0.0; 3]];
        for t in 1..=n {
            // The first transition is rotation-free so the literal first
            // translation matches the base-frame convention.
            let q = if t == 1 {
                qs[0]
            } else {
                rotation_from_euler(&EulerAngles {
                    yaw: rng.gen_range(-0.5..0.5),
                    roll: rng.gen_range(-0.2..0.2),
                    pitch: rng.gen_range(-0.3..0.3),
                })
            };
            qs.push(q);
            cs.push([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
        }
        let frames: Vec<EgoFrame> = (1..=n)
            .map(|t| {
                let qt_inv = mat_transpose(&qs[t]);
                EgoFrame {
                    rotation: mat_mul(&qt_inv, &qs[t - 1]),
                    translation: mat_vec(&qt_inv, &crate::geom::vec_sub(&cs[t], &cs[t - 1])),
                }
            })
            .collect();
        let acc = accumulate_ego(&frames, RotationAccumulation::PreMultiply).unwrap();
        for (i, f) in acc.iter().enumerate() {
            let t = i + 1;
            // Accumulated rotation should map base-frame coords to frame t.
            let expect_r = mat_transpose(&qs[t]); // Q_t^T · Q_0 with Q_0 = I
            let got_r = rotation_from_euler(&f.angles);
            for r in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(got_r[r][c], expect_r[r][c], epsilon = 1e-9);
                }
            }
            // Accumulated translation is displacement in the base frame.
            let expect_v = crate::geom::vec_sub(&cs[t], &cs[0]);
            for d in 0..3 {
                assert_abs_diff_eq!(f.translation[d], expect_v[d], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn accumulation_orders_differ_for_non_commuting_motion() {
        let frames = vec![
            EgoFrame {
                rotation: rot_y(0.8),
                translation: [0.0; 3],
            },
            EgoFrame {
                rotation: rot_x(0.6),
                translation: [1.0, 0.0, 0.0],
            },
            EgoFrame {
                rotation: rot_z(-0.5),
                translation: [0.0, 1.0, 0.0],
            },
        ];
        let pre = accumulate_ego(&frames, RotationAccumulation::PreMultiply).unwrap();
        let post = accumulate_ego(&frames, RotationAccumulation::PostMultiply).unwrap();
        let d = (pre[2].angles.yaw - post[2].angles.yaw).abs()
            + (pre[2].translation[0] - post[2].translation[0]).abs();
        assert!(
            d > 1e-3,
            "orders should disagree on non-commuting input, got {d}"
        );
    }

    #[test]
    fn flow_grid_uniform_and_zero() {
        let (w, h) = (5usize, 7usize);
        let mut flow = vec![0.0; w * h * 2];
        for p in 0..w * h {
            flow[2 * p] = 0.3;
            flow[2 * p + 1] = -0.7;
        }
        let f = flow_grid_feature(&flow, w, h).unwrap();
        for cell in 0..12 {
            assert_abs_diff_eq!(f[2 * cell], 0.3, epsilon = 1e-15);
            assert_abs_diff_eq!(f[2 * cell + 1], -0.7, epsilon = 1e-15);
        }
        let zero = flow_grid_feature(&vec![0.0; w * h * 2], w, h).unwrap();
        assert_eq!(zero, [0.0; EGO_DIM_FLOW]);
    }

    #[test]
    fn flow_grid_half_split_oracle() {
        // u = +1 in the left half, −1 in the right half; v = 0. With width 8
        // each grid column covers 2 pixels, so columns 0–1 average +1 and
        // columns 2–3 average −1.
        let (w, h) = (8usize, 3usize);
        let mut flow = vec![0.0; w * h * 2];
        for y in 0..h {
            for x in 0..w {
                flow[2 * (y * w + x)] = if x < w / 2 { 1.0 } else { -1.0 };
            }
        }
        let f = flow_grid_feature(&flow, w, h).unwrap();
        let expect_u = [1.0, 1.0, -1.0, -1.0];
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(f[2 * (r * 4 + c)], expect_u[c]);
                assert_eq!(f[2 * (r * 4 + c) + 1], 0.0);
            }
        }
    }

    #[test]
    fn flow_grid_remainder_goes_to_last_row_and_column() {
        // Width 6 → column pixel ranges [0,1), [1,2), [2,3), [3,6).
        // Height 4 → row pixel ranges [0,1), [1,2), [2,4).
        let (w, h) = (6usize, 4usize);
        let mut flow = vec![0.0; w * h * 2];
        for y in 0..h {
            for x in 0..w {
                flow[2 * (y * w + x)] = if x < 3 { 1.0 } else { -1.0 };
                flow[2 * (y * w + x) + 1] = y as f64;
            }
        }
        let f = flow_grid_feature(&flow, w, h).unwrap();
        let expect_u = [1.0, 1.0, 1.0, -1.0];
        let expect_v = [0.0, 1.0, 2.5];
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(f[2 * (r * 4 + c)], expect_u[c]);
                assert_eq!(f[2 * (r * 4 + c) + 1], expect_v[r]);
            }
        }
    }

    #[test]
    fn flow_grid_rejects_empty_and_undersized_fields() {
        assert!(matches!(
            flow_grid_feature(&[], 0, 0),
            Err(FeatureError::InvalidFlow(_))
        ));
        assert!(matches!(
            flow_grid_feature(&[0.0; 3 * 3 * 2], 3, 3),
            Err(FeatureError::InvalidFlow(_))
        ));
        assert!(matches!(
            flow_grid_feature(&[0.0; 10], 4, 3),
            Err(FeatureError::InvalidFlow(_))
        ));
    }

    fn identity_ego(n: usize) -> Vec<EgoObservation> {
        (0..n)
            .map(|_| EgoObservation::RotationTranslation(EgoFrame::identity()))
            .collect()
    }

    #[test]
    fn build_sample_stationary_gives_zero_targets() {
        let frames: Vec<FrameObservation> = (0..5)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        let s = build_sample(
            "vid",
            &frames,
            &identity_ego(5),
            2,
            3,
            RotationAccumulation::default(),
        )
        .unwrap();
        assert_eq!(s.x_out, vec![0.0; 9]);
        assert_eq!(s.t0, 1);
        assert_eq!(s.anchor.x, 300.0);
        assert_eq!(s.t_prev(), 2);
        assert_eq!(s.t_future(), 3);
        assert_eq!(s.ego_dim(), EGO_DIM_ROTATION);
    }

    #[test]
    fn build_sample_linear_motion_targets() {
        let frames: Vec<FrameObservation> = (0..5)
            .map(|i| simple_frame(i, 100.0 + 5.0 * i as f64, 400.0, 60.0))
            .collect();
        let s = build_sample(
            "vid",
            &frames,
            &identity_ego(5),
            2,
            3,
            RotationAccumulation::default(),
        )
        .unwrap();
        // Anchor at frame 1 (x = 105); futures at x = 110, 115, 120.
        assert_eq!(&s.x_out[0..3], &[5.0, 10.0, 15.0]);
        assert_eq!(&s.x_out[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(&s.x_out[6..9], &[0.0, 0.0, 0.0]);
        // X_in holds absolute states: x row then y row then s row.
        assert_eq!(&s.x_in[0..2], &[100.0, 105.0]);
        assert_eq!(&s.x_in[2..4], &[400.0, 400.0]);
        assert_eq!(&s.x_in[4..6], &[60.0, 60.0]);
    }

    #[test]
    fn build_sample_rejects_short_window() {
        let frames: Vec<FrameObservation> = (0..4)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        assert!(matches!(
            build_sample(
                "vid",
                &frames,
                &identity_ego(4),
                2,
                3,
                RotationAccumulation::default()
            ),
            Err(FeatureError::InvalidWindow(_))
        ));
    }

    #[test]
    fn build_sample_forward_ego_rows() {
        let frames: Vec<FrameObservation> = (0..4)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        let ego: Vec<EgoObservation> = (0..4)
            .map(|_| {
                EgoObservation::RotationTranslation(EgoFrame {
                    rotation: mat_identity(),
                    translation: [0.0, 0.0, 1.0],
                })
            })
            .collect();
        let s = build_sample("vid", &frames, &ego, 2, 2, RotationAccumulation::default()).unwrap();
        assert_eq!(s.ego_dim(), 6);
        // Rows: yaw, roll, pitch all zero; tz accumulates 1, 2.
        assert_eq!(&s.e_in[0..6], &[0.0; 6]);
        assert_eq!(&s.e_in[6..10], &[0.0; 4]);
        assert_eq!(&s.e_in[10..12], &[1.0, 2.0]);
    }

    #[test]
    fn build_sample_flow_ego_rows() {
        let frames: Vec<FrameObservation> = (0..4)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        let mut cells = [0.0; EGO_DIM_FLOW];
        for (i, c) in cells.iter_mut().enumerate() {
            *c = i as f64;
        }
        let ego: Vec<EgoObservation> = (0..4).map(|_| EgoObservation::FlowGrid(cells)).collect();
        let s = build_sample("vid", &frames, &ego, 2, 2, RotationAccumulation::default()).unwrap();
        assert_eq!(s.ego_dim(), 24);
        for c in 0..24 {
            assert_eq!(s.e_in[2 * c], c as f64);
            assert_eq!(s.e_in[2 * c + 1], c as f64);
        }
    }

    #[test]
    fn build_sample_rejects_mixed_ego_kinds() {
        let frames: Vec<FrameObservation> = (0..4)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        let ego = vec![
            EgoObservation::RotationTranslation(EgoFrame::identity()),
            EgoObservation::FlowGrid([0.0; EGO_DIM_FLOW]),
            EgoObservation::RotationTranslation(EgoFrame::identity()),
            EgoObservation::RotationTranslation(EgoFrame::identity()),
        ];
        assert!(matches!(
            build_sample("vid", &frames, &ego, 2, 2, RotationAccumulation::default()),
            Err(FeatureError::InvalidWindow(_))
        ));
    }

    #[test]
    fn build_sample_pose_rows_follow_layout() {
        let frames: Vec<FrameObservation> = (0..3)
            .map(|i| simple_frame(i, 300.0, 400.0, 60.0))
            .collect();
        let s = build_sample(
            "vid",
            &frames,
            &identity_ego(3),
            2,
            1,
            RotationAccumulation::default(),
        )
        .unwrap();
        let tp = 2;
        // Neck normalizes to (0, −1) in every frame.
        assert_eq!(s.p_in[(2 * kp::NECK) * tp], 0.0);
        assert_eq!(s.p_in[(2 * kp::NECK + 1) * tp], -1.0);
        assert_eq!(s.p_in[(2 * kp::NECK + 1) * tp + 1], -1.0);
        // Left hip normalizes to (10/60, 0).
        assert_abs_diff_eq!(s.p_in[(2 * kp::L_HIP) * tp], 10.0 / 60.0, epsilon = 1e-15);
        assert_eq!(s.p_in[(2 * kp::L_HIP + 1) * tp], 0.0);
    }
}
