//! Predictors and evaluation.
//!
//! Two classical baselines (constant-velocity extrapolation and
//! nearest-neighbor retrieval), batched network prediction, the
//! final-displacement error metric in pixels, scale-normalized physical
//! error in centimeters, and report generation with per-direction means,
//! an error histogram, and JSON/CSV/SVG renderings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Direction, NormStats, Sample};
use crate::model::{batch_inputs, ModelError, Network};
use crate::tensor::{BnMode, Graph};

/// Errors from predictors and report generation.
#[derive(Debug, Error)]
pub enum EvalError {
    /// Caller misuse: bad arguments or mismatched inputs.
    #[error("usage: {0}")]
    Usage(String),
    /// Failure inside the network forward pass.
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Default neighbor count for [`nneighbor`].
pub const DEFAULT_NEIGHBORS: usize = 16;

/// Histogram bucket lower edges in pixels; each bucket is half-open
/// `[edge, next)` and the last bucket is open-ended.
pub const HISTOGRAM_EDGES_PX: [f64; 7] = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0];

/// A predicted future for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Predicted location at the final future frame, absolute pixels.
    pub final_location: [f64; 2],
    /// Optional full predicted track relative to the anchor: one
    /// `[dx, dy, ds]` triple per future frame.
    pub offsets: Option<Vec<[f64; 3]>>,
}

/// One histogram bucket of final-displacement errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower edge in pixels.
    pub lo_px: f64,
    /// Exclusive upper edge in pixels; `None` for the open-ended last
    /// bucket.
    pub hi_px: Option<f64>,
    /// Number of samples landing in the bucket.
    pub count: usize,
}

/// Aggregate evaluation results over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Number of evaluated samples.
    pub count: usize,
    /// Mean final-displacement error in pixels for samples walking toward
    /// the camera; `None` when the category is empty.
    pub toward_fde_px: Option<f64>,
    /// Mean error for samples walking away from the camera.
    pub away_fde_px: Option<f64>,
    /// Mean error for samples crossing the view.
    pub across_fde_px: Option<f64>,
    /// Mean error for samples with mixed or unclear heading.
    pub other_fde_px: Option<f64>,
    /// Mean error over all samples (sample-count weighted).
    pub average_fde_px: f64,
    /// Error histogram over [`HISTOGRAM_EDGES_PX`].
    pub histogram: Vec<HistogramBucket>,
    /// Fraction of samples with error strictly below 100 px.
    pub fraction_below_100px: f64,
    /// Fraction of samples with error strictly above 300 px.
    pub fraction_above_300px: f64,
    /// Mean scale-normalized physical error in centimeters.
    pub mean_physical_error_cm: f64,
}

/// The ground-truth final absolute location of a sample.
///
/// The sample must have at least one future frame.
pub fn truth_final(sample: &Sample) -> [f64; 2] {
    let tf = sample.t_future();
    [
        sample.anchor.x + sample.x_out[tf - 1],
        sample.anchor.y + sample.x_out[2 * tf - 1],
    ]
}

/// Extrapolate the observed track at its mean per-frame displacement.
///
/// The mean of the `T_prev − 1` consecutive location-scale displacements
/// is applied from the anchor for each future frame; the final predicted
/// location is `anchor + T_future · mean`.
pub fn const_vel(sample: &Sample) -> Result<Prediction, EvalError> {
    let tp = sample.t_prev();
    if tp < 2 {
        return Err(EvalError::Usage(format!(
            "constant-velocity extrapolation needs at least 2 observed frames, got {tp}"
        )));
    }
    let tf = sample.t_future();
    let mut mean = [0.0f64; 3];
    for (c, m) in mean.iter_mut().enumerate() {
        let row = &sample.x_in[c * tp..(c + 1) * tp];
        let sum: f64 = row.windows(2).map(|w| w[1] - w[0]).sum();
        *m = sum / (tp - 1) as f64;
    }
    let offsets: Vec<[f64; 3]> = (1..=tf)
        .map(|k| [mean[0] * k as f64, mean[1] * k as f64, mean[2] * k as f64])
        .collect();
    Ok(Prediction {
        final_location: [
            sample.anchor.x + mean[0] * tf as f64,
            sample.anchor.y + mean[1] * tf as f64,
        ],
        offsets: Some(offsets),
    })
}

/// Frame of reference for nearest-neighbor sequence matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFrame {
    /// Compare location sequences after subtracting each track's own
    /// anchor location, making retrieval location-invariant. The default
    /// reading.
    Relative,
    /// Compare raw pixel location sequences.
    Absolute,
}

fn location_sequence(sample: &Sample, frame: MatchFrame) -> Vec<f64> {
    let tp = sample.t_prev();
    let (ax, ay) = match frame {
        MatchFrame::Relative => (sample.anchor.x, sample.anchor.y),
        MatchFrame::Absolute => (0.0, 0.0),
    };
    let mut seq = Vec::with_capacity(2 * tp);
    for t in 0..tp {
        seq.push(sample.x_in[t] - ax);
        seq.push(sample.x_in[tp + t] - ay);
    }
    seq
}

/// Predict by averaging the futures of the `k` index tracks whose
/// observed location sequences are closest in L2 distance.
///
/// Ties break toward the earlier index entry and `k` is truncated to the
/// index size. The predicted final location is the query anchor plus the
/// mean of the neighbors' ground-truth final offsets; the full offset
/// track is included when all selected neighbors share a future length.
pub fn nneighbor(
    sample: &Sample,
    index: &[Sample],
    k: usize,
    frame: MatchFrame,
) -> Result<Prediction, EvalError> {
    if index.is_empty() {
        return Err(EvalError::Usage(
            "nearest-neighbor index is empty".to_string(),
        ));
    }
    if k == 0 {
        return Err(EvalError::Usage(
            "neighbor count k must be at least 1".to_string(),
        ));
    }
    let k = k.min(index.len());
    let query = location_sequence(sample, frame);
    let mut scored = Vec::with_capacity(index.len());
    for (i, cand) in index.iter().enumerate() {
        if cand.t_prev() != sample.t_prev() {
            return Err(EvalError::Usage(format!(
                "index sample {i} has {} observed frames, query has {}",
                cand.t_prev(),
                sample.t_prev()
            )));
        }
        if cand.t_future() == 0 {
            return Err(EvalError::Usage(format!(
                "index sample {i} has no future frames"
            )));
        }
        let seq = location_sequence(cand, frame);
        let d2: f64 = query.iter().zip(&seq).map(|(a, b)| (a - b) * (a - b)).sum();
        scored.push((d2.sqrt(), i));
    }
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let chosen = &scored[..k];

    let mut mean_final = [0.0f64; 2];
    for &(_, i) in chosen {
        let n = &index[i];
        let tf = n.t_future();
        mean_final[0] += n.x_out[tf - 1];
        mean_final[1] += n.x_out[2 * tf - 1];
    }
    mean_final[0] /= k as f64;
    mean_final[1] /= k as f64;

    let tf0 = index[chosen[0].1].t_future();
    let offsets = if chosen.iter().all(|&(_, i)| index[i].t_future() == tf0) {
        let mut acc = vec![[0.0f64; 3]; tf0];
        for &(_, i) in chosen {
            let n = &index[i];
            for (f, a) in acc.iter_mut().enumerate() {
                a[0] += n.x_out[f];
                a[1] += n.x_out[tf0 + f];
                a[2] += n.x_out[2 * tf0 + f];
            }
        }
        for a in &mut acc {
            for v in a.iter_mut() {
                *v /= k as f64;
            }
        }
        Some(acc)
    } else {
        None
    };

    Ok(Prediction {
        final_location: [
            sample.anchor.x + mean_final[0],
            sample.anchor.y + mean_final[1],
        ],
        offsets,
    })
}

/// Final-displacement error: Euclidean distance in pixels between two
/// image points.
pub fn fde(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Convert a pixel error into centimeters of physical displacement by
/// treating the anchor torso scale (hip-to-neck span in pixels) as 60 cm.
pub fn scale_normalized_error(fde_px: f64, anchor_scale: f64) -> Result<f64, EvalError> {
    if !(anchor_scale > 0.0) {
        return Err(EvalError::Usage(format!(
            "anchor scale must be positive, got {anchor_scale}"
        )));
    }
    Ok(fde_px / anchor_scale * 60.0)
}

/// Score one prediction per sample and aggregate into an [`EvalReport`].
pub fn evaluate(predictions: &[Prediction], samples: &[Sample]) -> Result<EvalReport, EvalError> {
    if predictions.len() != samples.len() {
        return Err(EvalError::Usage(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    if samples.is_empty() {
        return Err(EvalError::Usage("nothing to evaluate".to_string()));
    }

    // Per-direction (sum, count): toward, away, across, other.
    let mut sums = [(0.0f64, 0usize); 4];
    let mut hist = vec![0usize; HISTOGRAM_EDGES_PX.len()];
    let (mut below, mut above) = (0usize, 0usize);
    let mut total = 0.0;
    let mut physical = 0.0;
    for (pred, sample) in predictions.iter().zip(samples) {
        if sample.t_future() == 0 {
            return Err(EvalError::Usage("sample has no future frames".to_string()));
        }
        if !pred.final_location.iter().all(|v| v.is_finite()) {
            return Err(EvalError::Usage(
                "non-finite predicted location".to_string(),
            ));
        }
        let err = fde(pred.final_location, truth_final(sample));
        total += err;
        physical += scale_normalized_error(err, sample.anchor.s)?;
        let slot = match sample.direction {
            Direction::Toward => 0,
            Direction::Away => 1,
            Direction::Across => 2,
            Direction::Other => 3,
        };
        sums[slot].0 += err;
        sums[slot].1 += 1;
        let bucket = HISTOGRAM_EDGES_PX
            .iter()
            .rposition(|&edge| err >= edge)
            .unwrap_or(0);
        hist[bucket] += 1;
        if err < 100.0 {
            below += 1;
        }
        if err > 300.0 {
            above += 1;
        }
    }

    let n = samples.len() as f64;
    let mean = |(sum, count): (f64, usize)| {
        if count == 0 {
            None
        } else {
            Some(sum / count as f64)
        }
    };
    Ok(EvalReport {
        count: samples.len(),
        toward_fde_px: mean(sums[0]),
        away_fde_px: mean(sums[1]),
        across_fde_px: mean(sums[2]),
        other_fde_px: mean(sums[3]),
        average_fde_px: total / n,
        histogram: hist
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBucket {
                lo_px: HISTOGRAM_EDGES_PX[i],
                hi_px: HISTOGRAM_EDGES_PX.get(i + 1).copied(),
                count,
            })
            .collect(),
        fraction_below_100px: below as f64 / n,
        fraction_above_300px: above as f64 / n,
        mean_physical_error_cm: physical / n,
    })
}

/// Run the network over `samples` in evaluation mode.
///
/// Inputs are normalized with `stats`, forwarded in batches of
/// `batch_size`, and the outputs de-normalized back into pixel offsets
/// anchored at each sample's anchor location.
pub fn network_predictions(
    net: &mut Network,
    samples: &[Sample],
    stats: &NormStats,
    batch_size: usize,
) -> Result<Vec<Prediction>, EvalError> {
    if batch_size == 0 {
        return Err(EvalError::Usage(
            "batch size must be at least 1".to_string(),
        ));
    }
    net.set_mode(BnMode::Eval);
    let tf = net.config().t_future;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let mut g = Graph::new();
        let (x, e, p) = batch_inputs(&refs, stats, net.config())?;
        let pass = net.forward(&mut g, &x, e.as_ref(), p.as_ref())?;
        let y = g.value(pass.output);
        for (i, s) in chunk.iter().enumerate() {
            let mut block = y.data()[i * 3 * tf..(i + 1) * 3 * tf].to_vec();
            stats.denormalize(&mut block);
            let offsets: Vec<[f64; 3]> = (0..tf)
                .map(|f| [block[f], block[tf + f], block[2 * tf + f]])
                .collect();
            out.push(Prediction {
                final_location: [s.anchor.x + block[tf - 1], s.anchor.y + block[2 * tf - 1]],
                offsets: Some(offsets),
            });
        }
    }
    Ok(out)
}

/// Render a report as pretty-printed JSON, newline-terminated.
pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Render the per-direction means as a two-line CSV table with columns
/// `toward,away,across,average`; empty categories render as empty cells.
pub fn report_csv(report: &EvalReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "toward,away,across,average\n{},{},{},{}\n",
        cell(report.toward_fde_px),
        cell(report.away_fde_px),
        cell(report.across_fde_px),
        report.average_fde_px,
    )
}

fn svg_polyline(points: &[[f64; 2]], stroke: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|p| format!("{},{}", p[0], p[1]))
        .collect();
    format!(
        "  <polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"3\" points=\"{}\" />\n",
        pts.join(" ")
    )
}

/// Render one sample as an SVG overlay in frame coordinates: observed
/// track (blue), ground-truth future (green), predicted future (red),
/// with a dot on each final location.
pub fn overlay_svg(sample: &Sample, prediction: &Prediction) -> String {
    let tp = sample.t_prev();
    let anchor = [sample.anchor.x, sample.anchor.y];
    let past: Vec<[f64; 2]> = (0..tp)
        .map(|t| [sample.x_in[t], sample.x_in[tp + t]])
        .collect();
    let mut truth = vec![anchor];
    truth.extend(sample.future_absolute().iter().map(|l| [l.x, l.y]));
    let mut predicted = vec![anchor];
    match &prediction.offsets {
        Some(offs) => predicted.extend(
            offs.iter()
                .map(|o| [sample.anchor.x + o[0], sample.anchor.y + o[1]]),
        ),
        None => predicted.push(prediction.final_location),
    }

    let (w, h) = (sample.frame_width, sample.frame_height);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\">\n"
    );
    svg.push_str(&format!(
        "  <rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\" />\n"
    ));
    svg.push_str(&svg_polyline(&past, "#1f77b4"));
    svg.push_str(&svg_polyline(&truth, "#2ca02c"));
    svg.push_str(&svg_polyline(&predicted, "#d62728"));
    let t = truth.last().expect("nonempty");
    svg.push_str(&format!(
        "  <circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#2ca02c\" />\n",
        t[0], t[1]
    ));
    svg.push_str(&format!(
        "  <circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#d62728\" />\n",
        prediction.final_location[0], prediction.final_location[1]
    ));
    svg.push_str("</svg>\n");
    svg
}
