//! Randomized invariants: shape algebra and linearity of the tensor ops,
//! composition laws of the ego-motion accumulator, mirror/scale symmetries
//! of the feature pipeline, and structural guarantees of sampling,
//! cross-validation splitting, baselines, and reports.

#![allow(clippy::needless_range_loop)] // index loops are clearer for 3-vectors

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use egoforecast::data::{
    categorize_direction, hflip, kfold_split, sliding_window, Direction, Sample, Tracklet,
};
use egoforecast::eval::{const_vel, evaluate, fde, nneighbor, truth_final, MatchFrame, Prediction};
use egoforecast::features::{
    accumulate_ego, build_sample, euler_from_rotation, flow_grid_feature, kp,
    location_scale_from_keypoints, pose_from_keypoints, rotation_from_euler, snap_coord, EgoFrame,
    EgoObservation, FrameObservation, Keypoint, LocationScale, RotationAccumulation, EGO_DIM_FLOW,
    MIRROR_INDEX, NUM_KEYPOINTS,
};
use egoforecast::geom::{
    mat_mul, mat_transpose, mat_vec, rot_x, rot_y, rot_z, rotation_deviation, Mat3,
};
use egoforecast::tensor::{BatchNormState, BnMode, Graph, Tensor};

const FRAME_W: f64 = 2048.0;
const FRAME_H: f64 = 2048.0;

/// Relative closeness against the larger magnitude, floored at 1.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn rand_vec(n: usize, rng: &mut StdRng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(shape: &[usize], rng: &mut StdRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(n, rng)).unwrap()
}

/// A value on the 1/1024-pixel grid, the precision every ingested
/// coordinate is snapped to.
fn dyadic(units: i64) -> f64 {
    units as f64 / 1024.0
}

/// All 18 keypoints of a person standing at mid-hip (lx, ly) with torso
/// scale s and hip half-width hip_half; every coordinate lands on the
/// snap grid when the inputs do.
fn person_frame(index: i64, lx: f64, ly: f64, s: f64, hip_half: f64) -> FrameObservation {
    let mut keypoints = [Keypoint::new(lx, ly - s); NUM_KEYPOINTS];
    keypoints[kp::NOSE] = Keypoint::new(lx, ly - s - s / 4.0);
    keypoints[kp::NECK] = Keypoint::new(lx, ly - s);
    keypoints[kp::L_HIP] = Keypoint::new(lx + hip_half, ly);
    keypoints[kp::R_HIP] = Keypoint::new(lx - hip_half, ly);
    keypoints[kp::L_SHOULDER] = Keypoint::new(lx + hip_half, ly - s);
    keypoints[kp::R_SHOULDER] = Keypoint::new(lx - hip_half, ly - s);
    keypoints[kp::L_KNEE] = Keypoint::new(lx + hip_half, ly + s / 2.0);
    keypoints[kp::R_KNEE] = Keypoint::new(lx - hip_half, ly + s / 2.0);
    keypoints[kp::L_ANKLE] = Keypoint::new(lx + hip_half, ly + s);
    keypoints[kp::R_ANKLE] = Keypoint::new(lx - hip_half, ly + s);
    FrameObservation {
        frame_index: index,
        frame_width: FRAME_W,
        frame_height: FRAME_H,
        keypoints,
    }
}

/// Identity ego transitions, one per frame.
fn identity_ego(n: usize) -> Vec<EgoObservation> {
    vec![EgoObservation::RotationTranslation(EgoFrame::identity()); n]
}

/// A straight-or-wobbly walking tracklet on the snap grid. `wobble` adds
/// per-frame grid-valued jitter on top of the constant velocity.
fn grid_tracklet(
    frames: usize,
    start: (i64, i64, i64),
    vel: (i64, i64, i64),
    wobble: i64,
    seed: u64,
) -> Tracklet {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(frames);
    for t in 0..frames as i64 {
        let jitter = |rng: &mut StdRng| {
            if wobble > 0 {
                rng.gen_range(-wobble..=wobble)
            } else {
                0
            }
        };
        let lx = dyadic(start.0 + t * vel.0 + jitter(&mut rng));
        let ly = dyadic(start.1 + t * vel.1 + jitter(&mut rng));
        let s = dyadic(start.2 + t * vel.2 + jitter(&mut rng));
        obs.push(person_frame(1 + t, lx, ly, s, 16.0));
    }
    Tracklet {
        video_id: format!("vid-{seed}"),
        fps: 10.0,
        start_frame: 1,
        ego: identity_ego(obs.len()),
        frames: obs,
    }
}

/// A constant-velocity sample built directly in the sample representation:
/// absolute grid-valued past states, anchor at the last past frame, and
/// grid-valued future offsets (not necessarily linear).
fn direct_sample(
    t_prev: usize,
    t_future: usize,
    start: (i64, i64, i64),
    vel: (i64, i64, i64),
    future_offsets: &[(i64, i64, i64)],
) -> Sample {
    assert_eq!(future_offsets.len(), t_future);
    let state = |t: i64| {
        (
            dyadic(start.0 + t * vel.0),
            dyadic(start.1 + t * vel.1),
            dyadic(start.2 + t * vel.2),
        )
    };
    let mut x_in = vec![0.0; 3 * t_prev];
    for t in 0..t_prev {
        let (x, y, s) = state(t as i64);
        x_in[t] = x;
        x_in[t_prev + t] = y;
        x_in[2 * t_prev + t] = s;
    }
    let (ax, ay, a_s) = state(t_prev as i64 - 1);
    let mut x_out = vec![0.0; 3 * t_future];
    for (j, &(dx, dy, ds)) in future_offsets.iter().enumerate() {
        x_out[j] = dyadic(dx);
        x_out[t_future + j] = dyadic(dy);
        x_out[2 * t_future + j] = dyadic(ds);
    }
    Sample {
        video_id: "direct".to_string(),
        t0: t_prev as i64,
        frame_width: FRAME_W,
        frame_height: FRAME_H,
        x_in,
        e_in: vec![0.0; 6 * t_prev],
        p_in: vec![0.0; 36 * t_prev],
        x_out,
        anchor: LocationScale {
            x: ax,
            y: ay,
            s: a_s,
        },
        direction: Direction::Other,
    }
}

/// A small random rotation composed from per-axis angles.
fn small_rotation(rng: &mut StdRng, max_angle: f64) -> Mat3 {
    let z = rot_z(rng.gen_range(-max_angle..max_angle));
    let y = rot_y(rng.gen_range(-max_angle..max_angle));
    let x = rot_x(rng.gen_range(-max_angle..max_angle));
    mat_mul(&mat_mul(&z, &y), &x)
}

// ---------------------------------------------------------------------------
// Tensor engine
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// conv1d output length is L + 2P − K + 1; deconv1d output length is
    /// L + K − 1.
    #[test]
    fn conv_and_deconv_lengths_follow_the_shape_algebra(
        n in 1usize..3,
        c_in in 1usize..4,
        c_out in 1usize..4,
        k in 1usize..6,
        p in 0usize..3,
        extra in 0usize..5,
        seed in any::<u64>(),
    ) {
        let l = k + extra; // guarantees the kernel fits
        let mut rng = StdRng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.leaf_owned(rand_tensor(&[n, c_in, l], &mut rng));
        let w = g.leaf_owned(rand_tensor(&[c_out, c_in, k], &mut rng));
        let b = g.leaf_owned(Tensor::zeros([c_out]));
        let y = g.conv1d(x, w, b, p).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[n, c_out, l + 2 * p - k + 1]);

        let wd = g.leaf_owned(rand_tensor(&[c_in, c_out, k], &mut rng));
        let yd = g.deconv1d(x, wd, b).unwrap();
        prop_assert_eq!(g.value(yd).shape(), &[n, c_out, l + k - 1]);
    }

    /// With zero bias, convolution is linear in its input.
    #[test]
    fn conv1d_is_linear_for_zero_bias(
        a in -2.0f64..2.0,
        bscale in -2.0f64..2.0,
        c_in in 1usize..4,
        c_out in 1usize..4,
        l in 3usize..9,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let x = rand_tensor(&[1, c_in, l], &mut rng);
        let y = rand_tensor(&[1, c_in, l], &mut rng);
        let combined: Vec<f64> = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(xv, yv)| a * xv + bscale * yv)
            .collect();
        let z = Tensor::new(vec![1, c_in, l], combined).unwrap();
        let w = rand_tensor(&[c_out, c_in, 3], &mut rng);

        let mut g = Graph::new();
        let bias = g.leaf_owned(Tensor::zeros([c_out]));
        let wn = g.leaf_owned(w);
        let (xn, yn, zn) = (g.leaf_owned(x), g.leaf_owned(y), g.leaf_owned(z));
        let cx = g.conv1d(xn, wn, bias, 1).unwrap();
        let cy = g.conv1d(yn, wn, bias, 1).unwrap();
        let cz = g.conv1d(zn, wn, bias, 1).unwrap();
        let (cx, cy, cz) = (g.value(cx).data(), g.value(cy).data(), g.value(cz).data());
        for i in 0..cz.len() {
            prop_assert!(
                close(cz[i], a * cx[i] + bscale * cy[i], 1e-9),
                "element {i}: {} vs {}", cz[i], a * cx[i] + bscale * cy[i]
            );
        }
    }

    /// Train-mode batch norm standardizes every channel: |mean| < 1e-6 and
    /// |variance − 1| < 1e-5 with gamma 1, beta 0.
    #[test]
    fn batchnorm_train_standardizes_each_channel(
        n in 1usize..3,
        c in 1usize..5,
        l in 2usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        // A strong ramp keeps every channel's batch variance far above the
        // normalizer's epsilon, which the variance bound presumes.
        let mut data = vec![0.0; n * c * l];
        for b in 0..n {
            for ch in 0..c {
                for t in 0..l {
                    data[(b * c + ch) * l + t] =
                        8.0 * (b * l + t) as f64 + rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut g = Graph::new();
        let x = g.leaf_owned(Tensor::new(vec![n, c, l], data).unwrap());
        let mut state = BatchNormState::new("bn", c);
        state.mode = BnMode::Train;
        let bn = g.batchnorm1d(x, &mut state).unwrap();
        let out = g.value(bn.out).data();
        let m = (n * l) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for b in 0..n {
                for t in 0..l {
                    let v = out[(b * c + ch) * l + t];
                    sum += v;
                    sumsq += v * v;
                }
            }
            let mean = sum / m;
            let var = sumsq / m - mean * mean;
            prop_assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-5, "channel {ch} variance {var}");
        }
    }
}

// ---------------------------------------------------------------------------
// Ego-motion accumulation and Euler angles
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Accumulating a concatenated motion A then B equals accumulating the
    /// halves separately and composing, re-expressed in A's start frame:
    /// R = R_B · R_A and v = v_A + R_Aᵀ · v_B.
    #[test]
    fn ego_accumulation_composes_across_concatenation(
        len_a in 1usize..5,
        len_b in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let frame = |rng: &mut StdRng| EgoFrame {
            rotation: small_rotation(rng, 0.05),
            translation: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
        };
        let a: Vec<EgoFrame> = (0..len_a).map(|_| frame(&mut rng)).collect();
        // The accumulator takes its first step literally (v'_1 = v_1, not
        // R_1ᵀ·v_1), so a window's translation lives in its base frame only
        // when the window opens rotation-free; give B that property, as the
        // generated windows have it.
        let mut b: Vec<EgoFrame> = (0..len_b).map(|_| frame(&mut rng)).collect();
        b[0].rotation = egoforecast::geom::mat_identity();
        let mut full = a.clone();
        full.extend(b.iter().copied());

        let acc_full = accumulate_ego(&full, RotationAccumulation::PreMultiply).unwrap();
        let acc_a = accumulate_ego(&a, RotationAccumulation::PreMultiply).unwrap();
        let acc_b = accumulate_ego(&b, RotationAccumulation::PreMultiply).unwrap();
        let end_full = acc_full.last().unwrap();
        let end_a = acc_a.last().unwrap();
        let end_b = acc_b.last().unwrap();

        let r_full = rotation_from_euler(&end_full.angles);
        let r_a = rotation_from_euler(&end_a.angles);
        let r_b = rotation_from_euler(&end_b.angles);
        let r_composed = mat_mul(&r_b, &r_a);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(
                    (r_full[i][j] - r_composed[i][j]).abs() < 1e-9,
                    "rotation [{i}][{j}]: {} vs {}", r_full[i][j], r_composed[i][j]
                );
            }
        }
        let v_b_in_a = mat_vec(&mat_transpose(&r_a), &end_b.translation);
        for d in 0..3 {
            let composed = end_a.translation[d] + v_b_in_a[d];
            prop_assert!(
                (end_full.translation[d] - composed).abs() < 1e-9,
                "translation [{d}]: {} vs {}", end_full.translation[d], composed
            );
        }
    }

    /// Rotation → Euler angles → rotation round-trips to 1e-12 away from
    /// gimbal lock.
    #[test]
    fn euler_angles_roundtrip_through_the_rotation(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let r = small_rotation(&mut rng, 1.2);
        prop_assert!(rotation_deviation(&r) < 1e-12);
        let back = rotation_from_euler(&euler_from_rotation(&r));
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(
                    (r[i][j] - back[i][j]).abs() < 1e-12,
                    "[{i}][{j}]: {} vs {}", r[i][j], back[i][j]
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Feature extraction symmetries
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Pose features are invariant to uniformly scaling the person about
    /// their mid-hip point (the normalization by scale cancels).
    #[test]
    fn pose_features_ignore_uniform_scale_about_the_person(
        lx in 300_000i64..1_700_000,
        ly in 300_000i64..1_700_000,
        s in 20_480i64..204_800,
        lambda in 0.25f64..4.0,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (lx, ly, s) = (dyadic(lx), dyadic(ly), dyadic(s));
        let mut frame = person_frame(1, lx, ly, s, 16.0);
        // Scatter the limbs so the pose vector is non-trivial.
        for i in 0..NUM_KEYPOINTS {
            if i != kp::L_HIP && i != kp::R_HIP && i != kp::NECK {
                frame.keypoints[i].x += rng.gen_range(-100.0..100.0);
                frame.keypoints[i].y += rng.gen_range(-100.0..100.0);
            }
        }
        let ls = location_scale_from_keypoints(&frame).unwrap();

        let mut scaled = frame.clone();
        for k in &mut scaled.keypoints {
            k.x = ls.x + lambda * (k.x - ls.x);
            k.y = ls.y + lambda * (k.y - ls.y);
        }
        let ls2 = location_scale_from_keypoints(&scaled).unwrap();
        prop_assert!(close(ls2.s, lambda * ls.s, 1e-12));

        let mut carry_a = [None; NUM_KEYPOINTS];
        let mut carry_b = [None; NUM_KEYPOINTS];
        let pose_a = pose_from_keypoints(&frame, &ls, &mut carry_a);
        let pose_b = pose_from_keypoints(&scaled, &ls2, &mut carry_b);
        for i in 0..pose_a.len() {
            prop_assert!(
                close(pose_a[i], pose_b[i], 1e-9),
                "pose[{i}]: {} vs {}", pose_a[i], pose_b[i]
            );
        }
    }

    /// Mirroring every keypoint across the vertical centerline negates the
    /// x components and swaps left/right joints, exactly, on grid-valued
    /// coordinates.
    #[test]
    fn pose_features_mirror_exactly(
        lx in 300_000i64..1_700_000,
        ly in 300_000i64..1_700_000,
        s in 20_480i64..204_800,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut frame = person_frame(1, dyadic(lx), dyadic(ly), dyadic(s), 16.0);
        for i in 0..NUM_KEYPOINTS {
            if i != kp::L_HIP && i != kp::R_HIP && i != kp::NECK {
                frame.keypoints[i].x = snap_coord(frame.keypoints[i].x + rng.gen_range(-100.0..100.0));
                frame.keypoints[i].y = snap_coord(frame.keypoints[i].y + rng.gen_range(-100.0..100.0));
            }
        }
        let mut mirrored = frame.clone();
        for i in 0..NUM_KEYPOINTS {
            let src = frame.keypoints[MIRROR_INDEX[i]];
            mirrored.keypoints[i] = Keypoint { x: FRAME_W - src.x, y: src.y, valid: src.valid };
        }
        let ls = location_scale_from_keypoints(&frame).unwrap();
        let ls_m = location_scale_from_keypoints(&mirrored).unwrap();
        prop_assert_eq!(ls_m.x, FRAME_W - ls.x);
        prop_assert_eq!(ls_m.y, ls.y);
        prop_assert_eq!(ls_m.s, ls.s);

        let mut carry_a = [None; NUM_KEYPOINTS];
        let mut carry_b = [None; NUM_KEYPOINTS];
        let pose = pose_from_keypoints(&frame, &ls, &mut carry_a);
        let pose_m = pose_from_keypoints(&mirrored, &ls_m, &mut carry_b);
        for i in 0..NUM_KEYPOINTS {
            let j = MIRROR_INDEX[i];
            prop_assert_eq!(pose_m[2 * i], -pose[2 * j], "x of joint {}", i);
            prop_assert_eq!(pose_m[2 * i + 1], pose[2 * j + 1], "y of joint {}", i);
        }
    }

    /// For linear motion, reversing the window in time negates the future
    /// offsets.
    #[test]
    fn time_reversed_linear_window_negates_future_offsets(
        t_half in 2usize..6,
        lx in 400_000i64..1_600_000,
        ly in 400_000i64..1_600_000,
        s in 51_200i64..102_400,
        vx in -3_000i64..3_000,
        vy in -3_000i64..3_000,
        vs in -2_000i64..2_000,
    ) {
        let total = 2 * t_half;
        let frames: Vec<FrameObservation> = (0..total as i64)
            .map(|t| {
                person_frame(
                    1 + t,
                    dyadic(lx + t * vx),
                    dyadic(ly + t * vy),
                    dyadic(s + t * vs),
                    16.0,
                )
            })
            .collect();
        let ego = identity_ego(total);
        let forward = build_sample(
            "fwd", &frames, &ego, t_half, t_half, RotationAccumulation::PreMultiply,
        )
        .unwrap();
        let mut reversed_frames: Vec<FrameObservation> = frames.into_iter().rev().collect();
        for (t, f) in reversed_frames.iter_mut().enumerate() {
            f.frame_index = 1 + t as i64;
        }
        let reversed = build_sample(
            "rev", &reversed_frames, &ego, t_half, t_half, RotationAccumulation::PreMultiply,
        )
        .unwrap();
        for i in 0..forward.x_out.len() {
            prop_assert!(
                (reversed.x_out[i] + forward.x_out[i]).abs() <= 1e-12,
                "offset {i}: {} vs {}", reversed.x_out[i], forward.x_out[i]
            );
        }
    }

    /// Grid pooling of a flow field is linear in the field.
    #[test]
    fn flow_grid_pooling_is_linear(
        w in 4usize..12,
        h in 3usize..9,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let f = rand_vec(w * h * 2, &mut rng);
        let g = rand_vec(w * h * 2, &mut rng);
        let combined: Vec<f64> =
            f.iter().zip(&g).map(|(fv, gv)| a * fv + b * gv).collect();
        let pf = flow_grid_feature(&f, w, h).unwrap();
        let pg = flow_grid_feature(&g, w, h).unwrap();
        let pc = flow_grid_feature(&combined, w, h).unwrap();
        for i in 0..EGO_DIM_FLOW {
            prop_assert!(
                close(pc[i], a * pf[i] + b * pg[i], 1e-12),
                "cell {i}: {} vs {}", pc[i], a * pf[i] + b * pg[i]
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling, flips, folds
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Windows cut from a tracklet reproduce the absolute past states and
    /// reconstruct the absolute future states exactly from anchor + offsets.
    #[test]
    fn windows_reconstruct_their_absolute_states_exactly(
        extra in 0usize..6,
        lx in 400_000i64..1_600_000,
        ly in 400_000i64..1_600_000,
        s in 51_200i64..102_400,
        vx in -2_000i64..2_000,
        vy in -2_000i64..2_000,
        seed in any::<u64>(),
    ) {
        let (t_prev, t_future) = (4usize, 4usize);
        let frames = t_prev + t_future + extra;
        let tracklet = grid_tracklet(frames, (lx, ly, s), (vx, vy, 0), 1_000, seed);
        let states: Vec<LocationScale> = tracklet
            .frames
            .iter()
            .map(|f| location_scale_from_keypoints(f).unwrap())
            .collect();
        let samples =
            sliding_window(&tracklet, t_prev, t_future, 1, RotationAccumulation::PreMultiply)
                .unwrap();
        prop_assert_eq!(samples.len(), extra + 1);
        for (w, sample) in samples.iter().enumerate() {
            let anchor_state = states[w + t_prev - 1];
            prop_assert_eq!(sample.anchor.x, anchor_state.x);
            prop_assert_eq!(sample.anchor.y, anchor_state.y);
            prop_assert_eq!(sample.anchor.s, anchor_state.s);
            for t in 0..t_prev {
                prop_assert_eq!(sample.x_in[t], states[w + t].x);
                prop_assert_eq!(sample.x_in[t_prev + t], states[w + t].y);
                prop_assert_eq!(sample.x_in[2 * t_prev + t], states[w + t].s);
            }
            for (j, reconstructed) in sample.future_absolute().iter().enumerate() {
                let truth = states[w + t_prev + j];
                prop_assert_eq!(reconstructed.x, truth.x);
                prop_assert_eq!(reconstructed.y, truth.y);
                prop_assert_eq!(reconstructed.s, truth.s);
            }
        }
    }

    /// Zooming the whole image by a power of two leaves the walking-direction
    /// category exactly unchanged (the scale normalization cancels).
    #[test]
    fn direction_category_survives_power_of_two_zoom(
        t in 4usize..10,
        lx in 400_000i64..1_600_000,
        ly in 400_000i64..1_600_000,
        s in 51_200i64..102_400,
        hip_units in 1_024i64..40_960,
        vx in -2_000i64..2_000,
        zoom_pow in -2i32..3,
        seed in any::<u64>(),
    ) {
        let zoom = (2.0f64).powi(zoom_pow);
        let tracklet = grid_tracklet(t, (lx, ly, s), (vx, 0, 0), 2_000, seed);
        let mut frames = tracklet.frames;
        let hip_half = dyadic(hip_units);
        for f in &mut frames {
            let mid = location_scale_from_keypoints(f).unwrap();
            f.keypoints[kp::L_HIP] = Keypoint::new(mid.x + hip_half, mid.y);
            f.keypoints[kp::R_HIP] = Keypoint::new(mid.x - hip_half, mid.y);
        }
        let zoomed: Vec<FrameObservation> = frames
            .iter()
            .map(|f| {
                let mut z = f.clone();
                z.frame_width *= zoom;
                z.frame_height *= zoom;
                for k in &mut z.keypoints {
                    k.x *= zoom;
                    k.y *= zoom;
                }
                z
            })
            .collect();
        let original = categorize_direction(&frames).unwrap();
        let scaled = categorize_direction(&zoomed).unwrap();
        prop_assert_eq!(original, scaled);
    }

    /// The horizontal flip is an exact involution on samples.
    #[test]
    fn hflip_is_an_exact_involution(
        lx in 400_000i64..1_600_000,
        ly in 400_000i64..1_600_000,
        s in 51_200i64..102_400,
        vx in -2_000i64..2_000,
        vy in -2_000i64..2_000,
        seed in any::<u64>(),
    ) {
        let tracklet = grid_tracklet(20, (lx, ly, s), (vx, vy, 0), 2_000, seed);
        let samples =
            sliding_window(&tracklet, 10, 10, 3, RotationAccumulation::PreMultiply).unwrap();
        for sample in &samples {
            let twice = hflip(&hflip(sample, FRAME_W), FRAME_W);
            prop_assert_eq!(&twice, sample);
        }
    }

    /// Mirroring a sample leaves the constant-velocity baseline's error
    /// unchanged: exactly for linear pasts, to rounding for wobbly ones.
    #[test]
    fn hflip_preserves_constvel_error(
        lx in 400_000i64..1_600_000,
        ly in 400_000i64..1_600_000,
        s in 51_200i64..102_400,
        vx in -2_000i64..2_000,
        vy in -2_000i64..2_000,
        seed in any::<u64>(),
    ) {
        // Exactly linear past: every quantity the baseline derives stays on
        // the grid, so mirroring commutes with prediction bit for bit.
        let mut rng = StdRng::seed_from_u64(seed);
        let offsets: Vec<(i64, i64, i64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(-100_000..100_000),
                    rng.gen_range(-100_000..100_000),
                    rng.gen_range(-10_000..10_000),
                )
            })
            .collect();
        let sample = direct_sample(6, 6, (lx, ly, s), (vx, vy, 0), &offsets);
        let flipped = hflip(&sample, FRAME_W);
        let err = fde(const_vel(&sample).unwrap().final_location, truth_final(&sample));
        let err_flipped =
            fde(const_vel(&flipped).unwrap().final_location, truth_final(&flipped));
        prop_assert_eq!(err, err_flipped);

        // Wobbly past: the per-step mean is no longer grid-valued, so the
        // final additions round in different binades on the two sides of the
        // mirror; equality holds to relative 1e-9.
        let tracklet = grid_tracklet(20, (lx, ly, s), (vx, vy, 0), 2_000, seed);
        let samples =
            sliding_window(&tracklet, 10, 10, 5, RotationAccumulation::PreMultiply).unwrap();
        for sample in &samples {
            let flipped = hflip(sample, FRAME_W);
            let err = fde(const_vel(sample).unwrap().final_location, truth_final(sample));
            let err_flipped =
                fde(const_vel(&flipped).unwrap().final_location, truth_final(&flipped));
            prop_assert!(close(err, err_flipped, 1e-9), "{err} vs {err_flipped}");
        }
    }

    /// Every video lands in exactly one test fold, and the union of test
    /// folds is the whole video set.
    #[test]
    fn folds_partition_the_videos(
        n_videos in 2usize..40,
        k in 2usize..6,
        seed in any::<u64>(),
        count_seed in any::<u64>(),
    ) {
        prop_assume!(n_videos >= k);
        let mut rng = StdRng::seed_from_u64(count_seed);
        let videos: Vec<(String, usize)> = (0..n_videos)
            .map(|i| (format!("video-{i}"), rng.gen_range(1usize..50)))
            .collect();
        let split = kfold_split(&videos, k, seed).unwrap();
        let mut seen = std::collections::BTreeMap::new();
        for fold in 0..k {
            for video in split.test_videos(fold) {
                *seen.entry(video.to_string()).or_insert(0usize) += 1;
            }
            // Train and test sets of one fold are disjoint and cover all.
            let train = split.train_videos(fold);
            let test = split.test_videos(fold);
            prop_assert_eq!(train.len() + test.len(), n_videos);
            for video in &train {
                prop_assert!(!test.contains(video));
            }
        }
        prop_assert_eq!(seen.len(), n_videos, "every video appears");
        for (video, appearances) in seen {
            prop_assert_eq!(appearances, 1, "video {} in exactly one fold", video);
        }
    }
}

// ---------------------------------------------------------------------------
// Baselines and reports
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With k = 1, querying the neighbor baseline with a sample that is in
    /// the index returns that sample's own future exactly.
    #[test]
    fn nearest_neighbor_returns_in_index_truth(
        m in 2usize..12,
        q in 0usize..12,
        base_vx in -1_500i64..1_500,
        seed in any::<u64>(),
    ) {
        prop_assume!(q < m);
        let mut rng = StdRng::seed_from_u64(seed);
        let index: Vec<Sample> = (0..m)
            .map(|i| {
                let offsets: Vec<(i64, i64, i64)> = (0..5)
                    .map(|_| {
                        (
                            rng.gen_range(-50_000..50_000),
                            rng.gen_range(-50_000..50_000),
                            rng.gen_range(-5_000..5_000),
                        )
                    })
                    .collect();
                // Distinct velocities make the query's own past the unique
                // zero-distance match.
                direct_sample(
                    5,
                    5,
                    (600_000, 600_000, 60_000),
                    (base_vx + 700 * i as i64, 300, 0),
                    &offsets,
                )
            })
            .collect();
        let query = index[q].clone();
        let prediction = nneighbor(&query, &index, 1, MatchFrame::Relative).unwrap();
        prop_assert_eq!(prediction.final_location, truth_final(&query));
        prop_assert_eq!(fde(prediction.final_location, truth_final(&query)), 0.0);
        let offsets = prediction.offsets.unwrap();
        let tf = query.t_future();
        for (j, row) in offsets.iter().enumerate() {
            prop_assert_eq!(row[0], query.x_out[j]);
            prop_assert_eq!(row[1], query.x_out[tf + j]);
            prop_assert_eq!(row[2], query.x_out[2 * tf + j]);
        }
    }

    /// The report's average is the plain mean of per-sample displacement
    /// errors, its histogram counts every sample once, and the threshold
    /// fractions agree with the histogram.
    #[test]
    fn report_average_is_the_per_sample_mean(
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        let mut predictions = Vec::with_capacity(n);
        let mut errors = Vec::with_capacity(n);
        for _ in 0..n {
            let sample = direct_sample(
                4,
                4,
                (rng.gen_range(500_000..1_500_000), 600_000, 60_000),
                (0, 0, 0),
                &[(0, 0, 0); 4],
            );
            let dx = rng.gen_range(-400.0..400.0);
            let dy = rng.gen_range(-400.0..400.0);
            let truth = truth_final(&sample);
            let final_location = [truth[0] + dx, truth[1] + dy];
            errors.push(fde(final_location, truth));
            predictions.push(Prediction { final_location, offsets: None });
            samples.push(sample);
        }
        let report = evaluate(&predictions, &samples).unwrap();
        prop_assert_eq!(report.count, n);
        let mean: f64 = errors.iter().sum::<f64>() / n as f64;
        prop_assert!(
            close(report.average_fde_px, mean, 1e-12),
            "{} vs {}", report.average_fde_px, mean
        );
        let histogram_total: usize = report.histogram.iter().map(|b| b.count).sum();
        prop_assert_eq!(histogram_total, n);
        let below: usize = errors.iter().filter(|e| **e < 100.0).count();
        let above: usize = errors.iter().filter(|e| **e > 300.0).count();
        prop_assert!(close(report.fraction_below_100px, below as f64 / n as f64, 1e-12));
        prop_assert!(close(report.fraction_above_300px, above as f64 / n as f64, 1e-12));
    }

    /// Shifting an entire trajectory (inputs and truth alike) by a constant
    /// pixel offset leaves the constant-velocity baseline's error unchanged.
    #[test]
    fn constvel_error_is_translation_invariant(
        lx in 600_000i64..900_000,
        ly in 600_000i64..900_000,
        s in 51_200i64..102_400,
        vx in -2_000i64..2_000,
        vy in -2_000i64..2_000,
        shift_x in -50_000i64..50_000,
        shift_y in -50_000i64..50_000,
        seed in any::<u64>(),
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let offsets: Vec<(i64, i64, i64)> = (0..5)
            .map(|_| {
                (
                    rng.gen_range(-20_000..20_000),
                    rng.gen_range(-20_000..20_000),
                    rng.gen_range(-5_000..5_000),
                )
            })
            .collect();
        // Exactly linear past: translation invariance is bitwise for any
        // grid-valued shift.
        let sample = direct_sample(6, 5, (lx, ly, s), (vx, vy, 0), &offsets);
        let shifted = translate_sample(&sample, dyadic(shift_x), dyadic(shift_y));
        let err = fde(const_vel(&sample).unwrap().final_location, truth_final(&sample));
        let err_shifted =
            fde(const_vel(&shifted).unwrap().final_location, truth_final(&shifted));
        prop_assert_eq!(err, err_shifted);

        // Wobbly past, coordinates confined to one binade [512, 1024): the
        // rounding grid is then shared, so the shift still commutes bitwise.
        let tracklet = grid_tracklet(16, (lx, ly, s), (vx, vy, 0), 1_000, seed);
        let samples =
            sliding_window(&tracklet, 8, 8, 7, RotationAccumulation::PreMultiply).unwrap();
        let small_shift = dyadic(shift_x.clamp(-30_000, 30_000));
        for sample in &samples {
            let shifted = translate_sample(sample, small_shift, small_shift);
            let err = fde(const_vel(sample).unwrap().final_location, truth_final(sample));
            let err_shifted =
                fde(const_vel(&shifted).unwrap().final_location, truth_final(&shifted));
            prop_assert_eq!(err, err_shifted);
        }
    }
}

/// Shift a sample's absolute quantities (past states and anchor) by a
/// constant image-plane offset, leaving the relative targets untouched.
fn translate_sample(sample: &Sample, dx: f64, dy: f64) -> Sample {
    let mut out = sample.clone();
    let tp = sample.t_prev();
    for t in 0..tp {
        out.x_in[t] += dx;
        out.x_in[tp + t] += dy;
    }
    out.anchor.x += dx;
    out.anchor.y += dy;
    out
}

/// The parameter budget is a pure function of the configuration, not the
/// initialization seed.
#[test]
fn parameter_count_depends_only_on_the_config() {
    use egoforecast::model::{NetConfig, Network, StreamKind};
    let config = NetConfig::standard(
        &[
            StreamKind::LocationScale,
            StreamKind::EgoMotion,
            StreamKind::Pose,
        ],
        6,
    );
    let reference = Network::build(config.clone(), 1).unwrap();
    for seed in [42u64, 7] {
        let net = Network::build(config.clone(), seed).unwrap();
        assert_eq!(net.parameter_count(), reference.parameter_count());
        assert_eq!(net.parameter_names(), reference.parameter_names());
    }
}
