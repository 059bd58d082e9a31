//! Dataset plumbing: tracklets, sliding-window samples, normalization,
//! horizontal-mirror augmentation, walking-direction categories, and
//! video-level cross-validation folds.

pub mod io;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    self, location_scale_from_keypoints, wrap_angle, EgoObservation, FeatureError,
    FrameObservation, LocationScale, RotationAccumulation, EGO_DIM_FLOW, EGO_DIM_ROTATION,
    FLOW_GRID_COLS, MIRROR_INDEX,
};

/// Errors raised by dataset handling.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Walking direction of a pedestrian clip relative to the camera wearer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Toward,
    Away,
    Across,
    Other,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Toward,
        Direction::Away,
        Direction::Across,
        Direction::Other,
    ];

    /// Label of the mirrored clip: a horizontal mirror exchanges the
    /// toward/away reading of the hip rule while across/other are symmetric.
    pub fn mirrored(self) -> Direction {
        match self {
            Direction::Toward => Direction::Away,
            Direction::Away => Direction::Toward,
            d => d,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::Toward => "Toward",
            Direction::Away => "Away",
            Direction::Across => "Across",
            Direction::Other => "Other",
        };
        f.write_str(s)
    }
}

/// One supervised forecasting sample.
///
/// All channel blocks are row-major `[channel][time]`: `x_in` is
/// `3 × t_prev` (absolute x, y, s), `e_in` is `D_e × t_prev`
/// (6 accumulated ego channels or 24 flow channels), `p_in` is
/// `36 × t_prev` normalized pose, and `x_out` is `3 × t_future` offsets of
/// the future location-scale states relative to `anchor` (the state at the
/// last input frame `t0`). Channels are stored unnormalized; training
/// applies [`NormStats`] on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    /// Frame index of the last input frame.
    pub t0: i64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub x_in: Vec<f64>,
    pub e_in: Vec<f64>,
    pub p_in: Vec<f64>,
    pub x_out: Vec<f64>,
    pub anchor: LocationScale,
    pub direction: Direction,
}

impl Sample {
    /// Number of input frames.
    pub fn t_prev(&self) -> usize {
        self.x_in.len() / 3
    }

    /// Number of predicted frames.
    pub fn t_future(&self) -> usize {
        self.x_out.len() / 3
    }

    /// Ego channels per frame (6 for rotation/translation, 24 for flow).
    pub fn ego_dim(&self) -> usize {
        self.e_in.len() / self.t_prev()
    }

    /// Absolute future location-scale states: anchor plus stored offsets.
    pub fn future_absolute(&self) -> Vec<LocationScale> {
        let tf = self.t_future();
        (0..tf)
            .map(|k| LocationScale {
                x: self.anchor.x + self.x_out[k],
                y: self.anchor.y + self.x_out[tf + k],
                s: self.anchor.s + self.x_out[2 * tf + k],
            })
            .collect()
    }
}

/// Classify the walking direction of a keypoint window.
///
/// Per frame with valid hips and neck, the hip separation is measured in
/// torso-scale units: `|left hip − right hip| / s`. If the mean separation
/// is below 0.25 the clip is `Across`. Otherwise each frame votes `Toward`
/// iff the left hip projects right of the right hip; a clip with more than
/// 75% toward-votes is `Toward`, below 25% `Away`, and `Other` in between.
pub fn categorize_direction(frames: &[FrameObservation]) -> Result<Direction, FeatureError> {
    let mut counted = 0usize;
    let mut toward = 0usize;
    let mut dist_sum = 0.0;
    for f in frames {
        let Ok(ls) = location_scale_from_keypoints(f) else {
            continue;
        };
        let lhip = f.keypoints[features::kp::L_HIP];
        let rhip = f.keypoints[features::kp::R_HIP];
        let d = ((lhip.x - rhip.x).powi(2) + (lhip.y - rhip.y).powi(2)).sqrt() / ls.s;
        dist_sum += d;
        counted += 1;
        if lhip.x > rhip.x {
            toward += 1;
        }
    }
    if counted == 0 {
        return Err(FeatureError::InvalidWindow(
            "no frames with valid hips and neck to categorize".to_string(),
        ));
    }
    if dist_sum / (counted as f64) < 0.25 {
        return Ok(Direction::Across);
    }
    let frac = toward as f64 / counted as f64;
    Ok(if frac > 0.75 {
        Direction::Toward
    } else if frac < 0.25 {
        Direction::Away
    } else {
        Direction::Other
    })
}

/// Mirror a sample about the vertical axis of a `frame_width`-pixel image.
///
/// Absolute x-coordinates map to `W − x`, x-offsets and pose/ego
/// x-components negate, pose channels swap left/right keypoints, ego yaw
/// and roll negate (flow cells additionally reverse column order), and the
/// direction label swaps toward/away. Because ingested coordinates sit on
/// the 1/1024-pixel grid, applying this twice restores the original sample
/// bit for bit.
pub fn hflip(sample: &Sample, frame_width: f64) -> Sample {
    let tp = sample.t_prev();
    let tf = sample.t_future();
    let w = frame_width;

    let mut x_in = sample.x_in.clone();
    for t in 0..tp {
        x_in[t] = w - x_in[t];
    }
    let mut x_out = sample.x_out.clone();
    for k in 0..tf {
        x_out[k] = -x_out[k];
    }

    let mut p_in = vec![0.0; sample.p_in.len()];
    for (i, &j) in MIRROR_INDEX.iter().enumerate() {
        for t in 0..tp {
            p_in[(2 * j) * tp + t] = -sample.p_in[(2 * i) * tp + t];
            p_in[(2 * j + 1) * tp + t] = sample.p_in[(2 * i + 1) * tp + t];
        }
    }

    let ego_dim = sample.ego_dim();
    let mut e_in = vec![0.0; sample.e_in.len()];
    if ego_dim == EGO_DIM_ROTATION {
        for t in 0..tp {
            // Rows: yaw, roll, pitch, tx, ty, tz.
            e_in[t] = wrap_angle(-sample.e_in[t]);
            e_in[tp + t] = wrap_angle(-sample.e_in[tp + t]);
            e_in[2 * tp + t] = sample.e_in[2 * tp + t];
            e_in[3 * tp + t] = -sample.e_in[3 * tp + t];
            e_in[4 * tp + t] = sample.e_in[4 * tp + t];
            e_in[5 * tp + t] = sample.e_in[5 * tp + t];
        }
    } else {
        // Flow cells: horizontal component negates and columns reverse.
        debug_assert_eq!(ego_dim, EGO_DIM_FLOW);
        let rows = ego_dim / (2 * FLOW_GRID_COLS);
        for r in 0..rows {
            for c in 0..FLOW_GRID_COLS {
                let src = 2 * (r * FLOW_GRID_COLS + c);
                let dst = 2 * (r * FLOW_GRID_COLS + (FLOW_GRID_COLS - 1 - c));
                for t in 0..tp {
                    e_in[dst * tp + t] = -sample.e_in[src * tp + t];
                    e_in[(dst + 1) * tp + t] = sample.e_in[(src + 1) * tp + t];
                }
            }
        }
    }

    Sample {
        video_id: sample.video_id.clone(),
        t0: sample.t0,
        frame_width: sample.frame_width,
        frame_height: sample.frame_height,
        x_in,
        e_in,
        p_in,
        x_out,
        anchor: LocationScale {
            x: w - sample.anchor.x,
            y: sample.anchor.y,
            s: sample.anchor.s,
        },
        direction: sample.direction.mirrored(),
    }
}

/// One person's observation track through a video, with aligned ego-motion.
///
/// `ego[i]` describes the camera motion *into* frame `i` (from the frame
/// preceding it), so every frame of the tracklet carries a usable motion
/// cue, including the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub video_id: String,
    /// Source-video frames per second.
    pub fps: f64,
    /// Video frame index of `frames[0]`.
    pub start_frame: i64,
    pub frames: Vec<FrameObservation>,
    pub ego: Vec<EgoObservation>,
}

impl Tracklet {
    /// Check structural invariants: aligned ego, consecutive frame indices,
    /// positive fps and frame sizes, uniform ego kind.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames.is_empty() {
            return Err(DataError::Invalid(format!(
                "tracklet '{}' has no frames",
                self.video_id
            )));
        }
        if self.ego.len() != self.frames.len() {
            return Err(DataError::Invalid(format!(
                "tracklet '{}': {} ego entries for {} frames",
                self.video_id,
                self.ego.len(),
                self.frames.len()
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(DataError::Invalid(format!(
                "tracklet '{}': fps must be positive, got {}",
                self.video_id, self.fps
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != self.start_frame + i as i64 {
                return Err(DataError::Invalid(format!(
                    "tracklet '{}': frame {} has index {}, expected {}",
                    self.video_id,
                    i,
                    f.frame_index,
                    self.start_frame + i as i64
                )));
            }
            if !(f.frame_width > 0.0 && f.frame_height > 0.0) {
                return Err(DataError::Invalid(format!(
                    "tracklet '{}': frame {} has non-positive size",
                    self.video_id, i
                )));
            }
        }
        let first_dim = self.ego[0].feature_dim();
        if self.ego.iter().any(|e| e.feature_dim() != first_dim) {
            return Err(DataError::Invalid(format!(
                "tracklet '{}': mixed ego observation kinds",
                self.video_id
            )));
        }
        Ok(())
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cut a tracklet into fixed-length samples with a sliding window.
///
/// Each window of `t_prev + t_future` consecutive frames yields one sample;
/// windows containing a frame without a valid location-scale state are
/// skipped. Window starts advance by `stride` frames.
pub fn sliding_window(
    tracklet: &Tracklet,
    t_prev: usize,
    t_future: usize,
    stride: usize,
    accumulation: RotationAccumulation,
) -> Result<Vec<Sample>, DataError> {
    if stride == 0 {
        return Err(DataError::Invalid("stride must be at least 1".to_string()));
    }
    if t_prev == 0 || t_future == 0 {
        return Err(DataError::Invalid(
            "t_prev and t_future must be at least 1".to_string(),
        ));
    }
    tracklet.validate()?;
    let total = t_prev + t_future;
    let mut out = Vec::new();
    let n = tracklet.frames.len();
    let mut start = 0usize;
    while start + total <= n {
        let window = &tracklet.frames[start..start + total];
        let ego = &tracklet.ego[start..start + total];
        match features::build_sample(
            &tracklet.video_id,
            window,
            ego,
            t_prev,
            t_future,
            accumulation,
        ) {
            Ok(s) => out.push(s),
            Err(FeatureError::InvalidObservation { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        start += stride;
    }
    Ok(out)
}

/// Channel-wise normalization statistics for location-scale channels.
///
/// One mean/std triple per channel (x, y, s), pooled jointly over the
/// absolute input states and the future offsets of the samples it was
/// computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    /// Identity statistics: mean 0, std 1.
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Normalize a `[3][T]` channel block in place.
    pub fn normalize(&self, channels: &mut [f64]) {
        let t = channels.len() / 3;
        for c in 0..3 {
            for v in &mut channels[c * t..(c + 1) * t] {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    /// Invert [`Self::normalize`] on a `[3][T]` channel block in place.
    pub fn denormalize(&self, channels: &mut [f64]) {
        let t = channels.len() / 3;
        for c in 0..3 {
            for v in &mut channels[c * t..(c + 1) * t] {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
    }
}

/// Compute pooled normalization statistics from training samples.
///
/// Pools every time step of `x_in` and `x_out` per channel, over all
/// samples; the standard deviation is the population one. Fails on fewer
/// than two samples or a channel with zero variance.
pub fn compute_norm_stats(samples: &[Sample]) -> Result<NormStats, DataError> {
    if samples.len() < 2 {
        return Err(DataError::Invalid(format!(
            "need at least 2 samples to compute statistics, got {}",
            samples.len()
        )));
    }
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for s in samples {
        let tp = s.t_prev();
        let tf = s.t_future();
        for c in 0..3 {
            for t in 0..tp {
                sums[c] += s.x_in[c * tp + t];
            }
            for k in 0..tf {
                sums[c] += s.x_out[c * tf + k];
            }
            counts[c] += tp + tf;
        }
    }
    let mut mean = [0.0; 3];
    for c in 0..3 {
        mean[c] = sums[c] / counts[c] as f64;
    }
    let mut sq = [0.0f64; 3];
    for s in samples {
        let tp = s.t_prev();
        let tf = s.t_future();
        for c in 0..3 {
            for t in 0..tp {
                sq[c] += (s.x_in[c * tp + t] - mean[c]).powi(2);
            }
            for k in 0..tf {
                sq[c] += (s.x_out[c * tf + k] - mean[c]).powi(2);
            }
        }
    }
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (sq[c] / counts[c] as f64).sqrt();
        if !(std[c] > 0.0 && std[c].is_finite()) {
            return Err(DataError::Degenerate(format!(
                "channel {c} has zero variance; cannot normalize"
            )));
        }
    }
    Ok(NormStats { mean, std })
}

/// Assignment of videos to cross-validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub k: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, video_id: &str) -> Option<usize> {
        self.assignment.get(video_id).copied()
    }

    /// Videos whose samples are held out when testing fold `fold`.
    pub fn test_videos(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(v, _)| v.as_str())
            .collect()
    }

    /// Videos available for training when testing fold `fold`.
    pub fn train_videos(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(v, _)| v.as_str())
            .collect()
    }

    pub fn all_videos(&self) -> Vec<&str> {
        self.assignment.keys().map(|v| v.as_str()).collect()
    }
}

/// Split videos into `k` folds, balancing per-fold sample counts.
///
/// Videos are shuffled with the seeded generator, ordered by descending
/// sample count (shuffle breaks ties), and greedily assigned to the
/// currently lightest fold. All samples of one video always share a fold.
pub fn kfold_split(
    videos: &[(String, usize)],
    k: usize,
    seed: u64,
) -> Result<FoldSplit, DataError> {
    if k == 0 {
        return Err(DataError::Invalid(
            "fold count must be at least 1".to_string(),
        ));
    }
    if videos.len() < k {
        return Err(DataError::Invalid(format!(
            "cannot split {} videos into {} folds",
            videos.len(),
            k
        )));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for (v, _) in videos {
            if !seen.insert(v.as_str()) {
                return Err(DataError::Invalid(format!("duplicate video id '{v}'")));
            }
        }
    }
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // Stable sort keeps the shuffled order among equal counts.
    order.sort_by(|&a, &b| videos[b].1.cmp(&videos[a].1));

    let mut totals = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for idx in order {
        let fold = (0..k).min_by_key(|&f| (totals[f], f)).unwrap();
        totals[fold] += videos[idx].1;
        assignment.insert(videos[idx].0.clone(), fold);
    }
    Ok(FoldSplit { k, assignment })
}
