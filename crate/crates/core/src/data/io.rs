//! On-disk formats: tracklets as JSON Lines, prepared samples as a compact
//! binary cache.
//!
//! # Tracklet JSONL
//!
//! One JSON object per line:
//!
//! ```json
//! {"video_id":"v1","fps":10.0,"start_frame":1,
//!  "frames":[{"idx":1,"w":1280.0,"h":960.0,"kp":[[x,y,valid], ... 18 triples]}],
//!  "ego":[{"r":[9 row-major rotation entries],"v":[3 translation entries]}]}
//! ```
//!
//! An ego entry may instead be `{"flow24":[24 values]}` for grid-pooled
//! optical flow; a tracklet must use one kind throughout. `ego[i]` is the
//! camera motion into frame `i`. Keypoint validity is encoded as 0.0/1.0.
//! Coordinates and frame sizes are snapped to the 1/1024-pixel grid at
//! parse time (see [`crate::features::snap_coord`]).
//!
//! # Sample cache
//!
//! Little-endian binary: magic `EGS1`, version u32, sample count u64, then
//! the shared dimensions (t_prev, t_future, ego_dim as u32). Each sample
//! stores video id (u32 length + UTF-8), t0 (i64), frame size (2×f64),
//! direction tag (u8), anchor (3×f64), then the x_in/e_in/p_in/x_out
//! blocks as raw f64. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Direction, Sample, Tracklet};
use crate::features::{
    snap_coord, EgoFrame, EgoObservation, FrameObservation, Keypoint, LocationScale, EGO_DIM_FLOW,
    NUM_KEYPOINTS, POSE_DIM,
};
use crate::geom::Mat3;

const SAMPLE_MAGIC: &[u8; 4] = b"EGS1";
const SAMPLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FrameRec {
    idx: i64,
    w: f64,
    h: f64,
    kp: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EgoRec {
    RotTrans { r: [f64; 9], v: [f64; 3] },
    Flow { flow24: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct TrackletRec {
    video_id: String,
    fps: f64,
    start_frame: i64,
    frames: Vec<FrameRec>,
    ego: Vec<EgoRec>,
}

fn frame_from_rec(rec: &FrameRec) -> Result<FrameObservation, String> {
    if rec.kp.len() != NUM_KEYPOINTS {
        return Err(format!(
            "frame {} has {} keypoints, expected {}",
            rec.idx,
            rec.kp.len(),
            NUM_KEYPOINTS
        ));
    }
    let mut keypoints = [Keypoint::missing(); NUM_KEYPOINTS];
    for (i, triple) in rec.kp.iter().enumerate() {
        keypoints[i] = Keypoint {
            x: snap_coord(triple[0]),
            y: snap_coord(triple[1]),
            valid: triple[2] != 0.0,
        };
    }
    Ok(FrameObservation {
        frame_index: rec.idx,
        frame_width: snap_coord(rec.w),
        frame_height: snap_coord(rec.h),
        keypoints,
    })
}

fn ego_from_rec(rec: &EgoRec) -> Result<EgoObservation, String> {
    match rec {
        EgoRec::RotTrans { r, v } => {
            let rotation: Mat3 = [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
            Ok(EgoObservation::RotationTranslation(EgoFrame {
                rotation,
                translation: *v,
            }))
        }
        EgoRec::Flow { flow24 } => {
            if flow24.len() != EGO_DIM_FLOW {
                return Err(format!(
                    "flow entry has {} values, expected {}",
                    flow24.len(),
                    EGO_DIM_FLOW
                ));
            }
            let mut cells = [0.0; EGO_DIM_FLOW];
            cells.copy_from_slice(flow24);
            Ok(EgoObservation::FlowGrid(cells))
        }
    }
}

fn rec_from_tracklet(t: &Tracklet) -> TrackletRec {
    TrackletRec {
        video_id: t.video_id.clone(),
        fps: t.fps,
        start_frame: t.start_frame,
        frames: t
            .frames
            .iter()
            .map(|f| FrameRec {
                idx: f.frame_index,
                w: f.frame_width,
                h: f.frame_height,
                kp: f
                    .keypoints
                    .iter()
                    .map(|k| [k.x, k.y, if k.valid { 1.0 } else { 0.0 }])
                    .collect(),
            })
            .collect(),
        ego: t
            .ego
            .iter()
            .map(|e| match e {
                EgoObservation::RotationTranslation(f) => EgoRec::RotTrans {
                    r: [
                        f.rotation[0][0],
                        f.rotation[0][1],
                        f.rotation[0][2],
                        f.rotation[1][0],
                        f.rotation[1][1],
                        f.rotation[1][2],
                        f.rotation[2][0],
                        f.rotation[2][1],
                        f.rotation[2][2],
                    ],
                    v: f.translation,
                },
                EgoObservation::FlowGrid(cells) => EgoRec::Flow {
                    flow24: cells.to_vec(),
                },
            })
            .collect(),
    }
}

/// Read tracklets from a JSON Lines file. Blank lines are ignored; parse
/// and validation failures report the 1-based line number.
pub fn read_tracklets(path: &Path) -> Result<Vec<Tracklet>, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackletRec = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_num,
            msg: e.to_string(),
        })?;
        let frames = rec
            .frames
            .iter()
            .map(frame_from_rec)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|msg| DataError::Parse {
                line: line_num,
                msg,
            })?;
        let ego = rec
            .ego
            .iter()
            .map(ego_from_rec)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|msg| DataError::Parse {
                line: line_num,
                msg,
            })?;
        let tracklet = Tracklet {
            video_id: rec.video_id,
            fps: rec.fps,
            start_frame: rec.start_frame,
            frames,
            ego,
        };
        tracklet.validate().map_err(|e| DataError::Parse {
            line: line_num,
            msg: e.to_string(),
        })?;
        out.push(tracklet);
    }
    Ok(out)
}

/// Write tracklets as JSON Lines (one object per line, stable field order).
pub fn write_tracklets(path: &Path, tracklets: &[Tracklet]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tracklets {
        let rec = rec_from_tracklet(t);
        let json = serde_json::to_string(&rec)
            .map_err(|e| DataError::Format(format!("serializing tracklet: {e}")))?;
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn direction_tag(d: Direction) -> u8 {
    match d {
        Direction::Toward => 0,
        Direction::Away => 1,
        Direction::Across => 2,
        Direction::Other => 3,
    }
}

fn direction_from_tag(tag: u8) -> Result<Direction, DataError> {
    Ok(match tag {
        0 => Direction::Toward,
        1 => Direction::Away,
        2 => Direction::Across,
        3 => Direction::Other,
        _ => {
            return Err(DataError::Format(format!(
                "unknown direction tag {tag} in sample cache"
            )))
        }
    })
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<(), DataError> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Format("truncated sample cache".to_string())
        } else {
            DataError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, DataError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read) -> Result<i64, DataError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, DataError> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact_or_truncated(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Write samples to a binary cache file. All samples must share the same
/// t_prev/t_future/ego dimensions; round-trips through [`read_samples`]
/// are bit-exact.
pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), DataError> {
    let (t_prev, t_future, ego_dim) = match samples.first() {
        Some(s) => (s.t_prev(), s.t_future(), s.ego_dim()),
        None => (0, 0, 0),
    };
    for (i, s) in samples.iter().enumerate() {
        if s.t_prev() != t_prev || s.t_future() != t_future || s.ego_dim() != ego_dim {
            return Err(DataError::Invalid(format!(
                "sample {i} has dimensions ({}, {}, {}), cache requires ({}, {}, {})",
                s.t_prev(),
                s.t_future(),
                s.ego_dim(),
                t_prev,
                t_future,
                ego_dim
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SAMPLE_MAGIC)?;
    w.write_all(&SAMPLE_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    w.write_all(&(t_prev as u32).to_le_bytes())?;
    w.write_all(&(t_future as u32).to_le_bytes())?;
    w.write_all(&(ego_dim as u32).to_le_bytes())?;
    for s in samples {
        let id = s.video_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&s.t0.to_le_bytes())?;
        write_f64s(&mut w, &[s.frame_width, s.frame_height])?;
        w.write_all(&[direction_tag(s.direction)])?;
        write_f64s(&mut w, &[s.anchor.x, s.anchor.y, s.anchor.s])?;
        write_f64s(&mut w, &s.x_in)?;
        write_f64s(&mut w, &s.e_in)?;
        write_f64s(&mut w, &s.p_in)?;
        write_f64s(&mut w, &s.x_out)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a binary sample cache written by [`write_samples`].
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, DataError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != SAMPLE_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {magic:?}, not a sample cache"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != SAMPLE_VERSION {
        return Err(DataError::Format(format!(
            "unsupported sample cache version {version}"
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let t_prev = read_u32(&mut r)? as usize;
    let t_future = read_u32(&mut r)? as usize;
    let ego_dim = read_u32(&mut r)? as usize;
    if count > 0 && (t_prev == 0 || t_future == 0 || ego_dim == 0) {
        return Err(DataError::Format(
            "sample cache header has zero dimensions".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        if id_len > 1 << 20 {
            return Err(DataError::Format(format!(
                "implausible video id length {id_len}"
            )));
        }
        let mut id = vec![0u8; id_len];
        read_exact_or_truncated(&mut r, &mut id)?;
        let video_id = String::from_utf8(id)
            .map_err(|_| DataError::Format("video id is not UTF-8".to_string()))?;
        let t0 = read_i64(&mut r)?;
        let wh = read_f64s(&mut r, 2)?;
        let mut tag = [0u8; 1];
        read_exact_or_truncated(&mut r, &mut tag)?;
        let direction = direction_from_tag(tag[0])?;
        let a = read_f64s(&mut r, 3)?;
        let x_in = read_f64s(&mut r, 3 * t_prev)?;
        let e_in = read_f64s(&mut r, ego_dim * t_prev)?;
        let p_in = read_f64s(&mut r, POSE_DIM * t_prev)?;
        let x_out = read_f64s(&mut r, 3 * t_future)?;
        out.push(Sample {
            video_id,
            t0,
            frame_width: wh[0],
            frame_height: wh[1],
            x_in,
            e_in,
            p_in,
            x_out,
            anchor: LocationScale {
                x: a[0],
                y: a[1],
                s: a[2],
            },
            direction,
        });
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok(out),
        _ => Err(DataError::Format(
            "trailing bytes after last sample".to_string(),
        )),
    }
}
