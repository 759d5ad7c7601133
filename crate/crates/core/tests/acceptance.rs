//! Acceptance criteria 1-12. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured numbers, then asserts.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Vector3};
use posedepth::datagen::{
    backproject_observations, generate_dataset, generate_motion, render_stick_figure, simulate_stage1, MotionGenConfig,
    RenderStyle, Stage1NoiseModel,
};
use posedepth::metrics::{mpjpe, p_mpjpe, procrustes_align, sum_sq_residual, SimilarityTransform};
use posedepth::nn::Mode;
use posedepth::stage1::{
    decode_loss_grad, normalize_heatmap, soft_argmax, stage1_forward, train_stage1, Heatmap3D, HeatmapGrid, LossMode,
    Stage1Config, Stage1Model, Stage1Sample, Stage1TrainConfig,
};
use posedepth::stage2::{model_gradient_check, receptive_field, InputMode, PaddingMode, TemporalModel, TemporalModelConfig};
use posedepth::training::{evaluate_model, train_second_stage, AugmentationConfig, TrainConfig};
use posedepth::{
    read_sequence, write_sequence, CameraIntrinsics, Error, NormalizationSpec, Pose3D, PoseSequence, SkeletonSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) {
    let within = elapsed <= budget;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {verdict} | {name} | {detail} | {:.1}s (budget {:.0}s)",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(within, "criterion {n} exceeded its runtime budget");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Benchmark {
    cam: CameraIntrinsics,
    train: Vec<PoseSequence>,
    val: Vec<PoseSequence>,
    test: Vec<PoseSequence>,
}

/// 20 train / 5 test sequences of 600 frames plus 2 validation sequences
/// drawn like the training data. `gap` widens the test noise.
fn benchmark(gap: f64) -> Benchmark {
    let sk = SkeletonSpec::h36m17();
    let cam = CameraIntrinsics::benchmark();
    let base = Stage1NoiseModel::default();
    let wide = base.widened(gap, &cam, &NormalizationSpec::default());
    let make = |seed: u64, n: usize, nm: &Stage1NoiseModel| -> Vec<PoseSequence> {
        generate_dataset(&sk, &MotionGenConfig { seed, ..Default::default() }, n)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, s)| simulate_stage1(s, &cam, &nm.with_seed(seed * 1000 + i as u64)).unwrap())
            .collect()
    };
    Benchmark {
        cam,
        train: make(1, 20, &base),
        val: make(2, 2, &base),
        test: make(3, 5, &wide),
    }
}

fn observation_mpjpe(seqs: &[PoseSequence], cam: &CameraIntrinsics) -> f64 {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for s in seqs {
        pred.extend(backproject_observations(s, cam).unwrap());
        gt.extend(s.gt_poses().unwrap().into_iter().cloned());
    }
    mpjpe(&pred, &gt).unwrap()
}

fn desk_model(w: usize, b: usize, mode: InputMode) -> TemporalModelConfig {
    TemporalModelConfig {
        kernel_width: w,
        blocks: b,
        channels: 64,
        dropout: 0.0,
        input_mode: mode,
        ..TemporalModelConfig::default()
    }
}

fn desk_train(m: &TemporalModelConfig, epochs: usize, seed: u64, sigma: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        window_length: receptive_field(m) + 31,
        seed,
        augmentation: AugmentationConfig::gaussian(sigma),
        ..TrainConfig::for_model(m)
    }
}

fn random_heatmap(rng: &mut ChaCha8Rng, j: usize, d: usize, h: usize, w: usize) -> Heatmap3D {
    let logits: Vec<f64> = (0..j * d * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
    normalize_heatmap(&Heatmap3D::new(j, d, h, w, logits).unwrap()).unwrap()
}

#[test]
fn criterion_01_soft_argmax_oracle() {
    let start = Instant::now();
    let grid = HeatmapGrid::new(8, 8, 4, 1500.0, 64, 64).unwrap();
    let (j, d, h, w) = (2, 4, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let hm = random_heatmap(&mut rng, j, d, h, w);
        let obs = soft_argmax(&hm, &grid).unwrap();
        for jj in 0..j {
            let mut acc = [0.0f64; 3];
            for k in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let p = hm.values[((jj * d + k) * h + y) * w + x];
                        acc[0] += p * ((x as f64 + 0.5) * 64.0 / w as f64);
                        acc[1] += p * ((y as f64 + 0.5) * 64.0 / h as f64);
                        acc[2] += p * (-750.0 + (k as f64 + 0.5) * 1500.0 / d as f64);
                    }
                }
            }
            let got = [obs.uv[jj][0], obs.uv[jj][1], obs.depth_mm[jj]];
            for c in 0..3 {
                worst = worst.max((got[c] - acc[c]).abs());
            }
        }
    }
    let mut exact = true;
    for (k, y, x) in [(0, 0, 0), (3, 7, 7), (2, 5, 1)] {
        let mut v = vec![0.0; j * d * h * w];
        for jj in 0..j {
            v[((jj * d + k) * h + y) * w + x] = 1.0;
        }
        let obs = soft_argmax(&Heatmap3D::new(j, d, h, w, v).unwrap(), &grid).unwrap();
        exact &= obs.uv[1] == [grid.x_center(x), grid.y_center(y)] && obs.depth_mm[1] == grid.z_center(k);
    }
    let uniform = Heatmap3D::new(j, d, h, w, vec![1.0 / (d * h * w) as f64; j * d * h * w]).unwrap();
    let obs = soft_argmax(&uniform, &grid).unwrap();
    exact &= obs.uv[0] == [32.0, 32.0] && obs.depth_mm[0] == 0.0;
    report(
        1,
        "soft-argmax vs triple-loop expectation",
        worst <= 1e-9 && exact,
        format!("max abs deviation {worst:.2e} over 100 heatmaps; one-hot/uniform exact: {exact}"),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_02_receptive_field_exactness() {
    let start = Instant::now();
    let mut measured = Vec::new();
    let mut outside_clean = true;
    for (w, b) in [(1, 2), (3, 2), (3, 3), (3, 4)] {
        let cfg = TemporalModelConfig {
            channels: 32,
            padding: PaddingMode::Valid,
            joints: 17,
            ..TemporalModelConfig::with_wb(w, b)
        };
        let rf = receptive_field(&cfg);
        let model = TemporalModel::new(cfg.clone(), 3).unwrap();
        let cin = cfg.in_channels();
        let t_in = rf + 20;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..t_in * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = model.infer(&x, t_in).unwrap();
        let out_t = 10;
        let j3 = cfg.out_channels();
        let frame_out = |y: &[f64]| y[out_t * j3..(out_t + 1) * j3].iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let reference = frame_out(&base);
        let mut footprint = Vec::new();
        for i in 0..t_in {
            let mut xp = x.clone();
            xp[i * cin..(i + 1) * cin].iter_mut().for_each(|v| *v += 0.5);
            let changed = frame_out(&model.infer(&xp, t_in).unwrap()) != reference;
            if changed {
                footprint.push(i);
            }
            let inside = (out_t..out_t + rf).contains(&i);
            if !inside && changed {
                outside_clean = false;
            }
        }
        let contiguous = footprint.first() == Some(&out_t) && footprint.last() == Some(&(out_t + rf - 1));
        measured.push((rf, footprint.len(), contiguous));
    }
    let pass = outside_clean && measured.iter().map(|m| m.1).eq([1, 27, 81, 243]) && measured.iter().all(|m| m.0 == m.1 && m.2);
    report(
        2,
        "receptive-field footprint",
        pass,
        format!("(formula, measured, contiguous) = {measured:?}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_03_gradient_checks() {
    let start = Instant::now();
    let grid = HeatmapGrid::new(8, 8, 4, 1500.0, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = Heatmap3D::new(2, 4, 8, 8, (0..512).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let target = posedepth::PoseObservation {
        uv: vec![[10.0, 50.0], [40.0, 20.0]],
        depth_mm: vec![0.0, 300.0],
    };
    let scale = [grid.x_bin_px(), grid.y_bin_px(), grid.z_bin_mm()];
    let loss_at = |v: &[f64]| {
        let hm = Heatmap3D::new(2, 4, 8, 8, v.to_vec()).unwrap();
        decode_loss_grad(&hm, &grid, 0, &target, LossMode::Full3d, scale).unwrap().0
    };
    let (_, analytic, _) = decode_loss_grad(&logits, &grid, 0, &target, LossMode::Full3d, scale).unwrap();
    let gmax = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s1_worst: f64 = 0.0;
    for i in 0..logits.values.len() {
        let (mut a, mut b) = (logits.values.clone(), logits.values.clone());
        a[i] += 1e-6;
        b[i] -= 1e-6;
        let num = (loss_at(&a) - loss_at(&b)) / 2e-6;
        s1_worst = s1_worst.max((num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6 * gmax));
    }
    let small = TemporalModelConfig {
        kernel_width: 3,
        blocks: 2,
        channels: 8,
        joints: 3,
        dropout: 0.25,
        padding: PaddingMode::Valid,
        ..TemporalModelConfig::default()
    };
    let s2_worst = model_gradient_check(&small, 11, 24).unwrap();
    report(
        3,
        "analytic vs central finite-difference gradients",
        s1_worst <= 1e-4 && s2_worst <= 1e-4,
        format!("stage-1 worst rel err {s1_worst:.2e}; stage-2 worst rel err {s2_worst:.2e}"),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..17)
        .map(|_| [rng.random_range(-400.0..400.0), rng.random_range(-900.0..900.0), rng.random_range(-300.0..300.0)])
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Matrix3<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    *Rotation3::new(axis * rng.random_range(0.0..max_angle)).matrix()
}

#[test]
fn criterion_04_procrustes_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_a: f64 = 0.0;
    for _ in 0..100 {
        let g = random_points(&mut rng);
        let tf = SimilarityTransform {
            scale: rng.random_range(0.2..5.0),
            rotation: random_rotation(&mut rng, std::f64::consts::PI),
            translation: Vector3::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)),
        };
        let p = tf.apply_all(&g);
        worst_a = worst_a.max(p_mpjpe(&[Pose3D { coords_mm: p }], &[Pose3D { coords_mm: g }]).unwrap());
    }
    let mut beaten = 0;
    for _ in 0..100 {
        let g = random_points(&mut rng);
        let p: Vec<[f64; 3]> = random_points(&mut rng)
            .iter()
            .zip(&g)
            .map(|(n, q)| [0.8 * q[2] + 0.2 * n[0], q[1] + 0.3 * n[1], -0.8 * q[0] + 0.2 * n[2]])
            .collect();
        let (best, aligned) = procrustes_align(&p, &g).unwrap();
        let optimum = sum_sq_residual(&aligned, &g);
        for c in 0..1000 {
            let spread = [1e-3, 1e-2, 0.1, 1.0][c % 4];
            let cand = SimilarityTransform {
                scale: best.scale * (1.0 + spread * rng.random_range(-0.5..0.5)),
                rotation: random_rotation(&mut rng, spread) * best.rotation,
                translation: best.translation
                    + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 100.0 * spread,
            };
            if sum_sq_residual(&cand.apply_all(&p), &g) < optimum {
                beaten += 1;
            }
        }
    }
    let coincident = vec![[5.0, 5.0, 5.0]; 17];
    let degenerate = matches!(procrustes_align(&random_points(&mut rng), &coincident), Err(Error::Degenerate(_)));
    report(
        4,
        "Procrustes alignment",
        worst_a <= 1e-6 && beaten == 0 && degenerate,
        format!("(a) max P-MPJPE {worst_a:.2e} mm; (b) candidates beating closed form: {beaten}/100000; (c) degenerate error: {degenerate}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_05_mpjpe_forced_values() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gt = vec![Pose3D::from_absolute(&random_points(&mut rng), 0)];
    let zero = mpjpe(&gt, &gt).unwrap();
    let mut off = gt.clone();
    off[0].coords_mm[4][0] += 3.0;
    off[0].coords_mm[4][2] += 4.0;
    let single = mpjpe(&off, &gt).unwrap();
    let z = vec![Pose3D::zeros(17)];
    let mut zo = z.clone();
    zo[0].coords_mm[4] = [3.0, 0.0, 4.0];
    let exact = mpjpe(&zo, &z).unwrap();
    report(
        5,
        "MPJPE forced values",
        zero == 0.0 && exact == 5.0 / 17.0 && (single - 5.0 / 17.0).abs() < 1e-12,
        format!("identical -> {zero}; 3-4-5 case -> {exact} (5/17 = {})", 5.0 / 17.0),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

fn sample_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn criterion_06_simulator_calibration() {
    let start = Instant::now();
    let sk = SkeletonSpec::h36m17();
    let cam = CameraIntrinsics::benchmark();
    let seqs = generate_dataset(&sk, &MotionGenConfig { seed: 1, ..Default::default() }, 25).unwrap();
    let nm = Stage1NoiseModel::default();
    let sims: Vec<PoseSequence> = seqs.iter().enumerate().map(|(i, s)| simulate_stage1(s, &cam, &nm.with_seed(i as u64)).unwrap()).collect();
    let obs_mm = observation_mpjpe(&sims, &cam);

    // injected-noise statistics on ~10^5 non-root joint-frames
    let long = generate_motion(&sk, &MotionGenConfig { frames: 6250, seed: 2, ..Default::default() }).unwrap();
    let exact = simulate_stage1(&long, &cam, &Stage1NoiseModel::noiseless()).unwrap();
    let injected = |nm: &Stage1NoiseModel| -> (f64, f64) {
        let s = simulate_stage1(&long, &cam, nm).unwrap();
        let (mut du, mut dz) = (Vec::new(), Vec::new());
        for (a, b) in s.frames.iter().zip(&exact.frames) {
            let (a, b) = (a.obs.as_ref().unwrap(), b.obs.as_ref().unwrap());
            for j in 1..17 {
                du.push(a.uv[j][0] - b.uv[j][0]);
                dz.push(a.depth_mm[j] - b.depth_mm[j]);
            }
        }
        (sample_std(&du), sample_std(&dz))
    };
    let plain = Stage1NoiseModel { sigma_uv_px: 4.0, sigma_depth_mm: 40.0, outlier_rate: 0.0, outlier_scale: 1.0, rho: 0.0, seed: 3 };
    let (su, sz) = injected(&plain);
    let (_, sz_ar) = injected(&Stage1NoiseModel { rho: 0.5, ..plain.clone() });
    let (su_d, sz_d) = injected(&nm.with_seed(4));
    let expect_d = nm.sigma_depth_mm * (1.0 - nm.outlier_rate + nm.outlier_rate * nm.outlier_scale.powi(2)).sqrt();
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let stds_ok = rel(su, 4.0) <= 0.02 && rel(sz, 40.0) <= 0.02 && rel(sz_ar, 40.0) <= 0.02 && rel(su_d, 4.0) <= 0.02 && rel(sz_d, expect_d) <= 0.02;
    report(
        6,
        "simulator calibration",
        (obs_mm - 48.9).abs() <= 2.0 && stds_ok,
        format!(
            "observation MPJPE {obs_mm:.2} mm (target 48.9 +- 2); stds uv {su:.3}/4, depth {sz:.2}/40, AR(0.5) depth {sz_ar:.2}/40, default uv {su_d:.3}/4, default depth {sz_d:.2}/{expect_d:.2}"
        ),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_07_refinement_beats_observations() {
    let start = Instant::now();
    let b = benchmark(0.0);
    let input_mm = observation_mpjpe(&b.test, &b.cam);
    let m = desk_model(3, 2, InputMode::Pose2dDepth);
    let ck = train_second_stage(&b.train, &b.val, &b.cam, &m, &desk_train(&m, 80, 0, 0.0)).unwrap();
    let refined = evaluate_model(&ck, &b.test).unwrap();
    let reduction = 1.0 - refined.protocol1_mm / input_mm;
    report(
        7,
        "RF-27 refinement vs input observations",
        reduction >= 0.10,
        format!(
            "input {input_mm:.2} mm -> refined {:.2} mm (p2 {:.2} mm), reduction {:.1}% (need >= 10%)",
            refined.protocol1_mm,
            refined.protocol2_mm,
            100.0 * reduction
        ),
        start.elapsed(),
        Duration::from_secs(15 * 60),
    );
}

const GAP: f64 = 0.05;

#[test]
fn criterion_08_depth_input_ablation() {
    let start = Instant::now();
    let b = benchmark(GAP);
    let mut results = [Vec::new(), Vec::new()];
    for seed in 0..3 {
        for (k, mode) in [InputMode::Pose2d, InputMode::Pose2dDepth].into_iter().enumerate() {
            let m = desk_model(3, 2, mode);
            let ck = train_second_stage(&b.train, &b.val, &b.cam, &m, &desk_train(&m, 40, seed, GAP)).unwrap();
            results[k].push(evaluate_model(&ck, &b.test).unwrap().protocol1_mm);
        }
    }
    let (m2d, m3d) = (median(results[0].clone()), median(results[1].clone()));
    report(
        8,
        "2d+depth vs 2d at RF 27",
        m3d < m2d,
        format!("median test MPJPE 2d {m2d:.2} mm {:?}, 2d+depth {m3d:.2} mm {:?}", results[0], results[1]),
        start.elapsed(),
        Duration::from_secs(30 * 60),
    );
}

#[test]
fn criterion_09_augmentation_ablation() {
    let start = Instant::now();
    let b = benchmark(GAP);
    let mut results = [Vec::new(), Vec::new()];
    for seed in 0..3 {
        for (k, sigma) in [0.0, GAP].into_iter().enumerate() {
            let m = desk_model(1, 2, InputMode::Pose2dDepth);
            let ck = train_second_stage(&b.train, &b.val, &b.cam, &m, &desk_train(&m, 40, seed, sigma)).unwrap();
            results[k].push(evaluate_model(&ck, &b.test).unwrap().protocol1_mm);
        }
    }
    let (plain, aug) = (median(results[0].clone()), median(results[1].clone()));
    report(
        9,
        "sigma-matched augmentation at RF 1",
        aug < plain,
        format!("median test MPJPE no-aug {plain:.2} mm {:?}, sigma={GAP} {aug:.2} mm {:?}", results[0], results[1]),
        start.elapsed(),
        Duration::from_secs(15 * 60),
    );
}

fn overfit_run() -> (posedepth::training::Checkpoint, PoseSequence) {
    let cam = CameraIntrinsics::benchmark();
    let s = generate_motion(&SkeletonSpec::h36m17(), &MotionGenConfig { frames: 300, seed: 0, ..Default::default() }).unwrap();
    let s = simulate_stage1(&s, &cam, &Stage1NoiseModel::noiseless()).unwrap();
    let m = desk_model(3, 2, InputMode::Pose2dDepth);
    let t = TrainConfig {
        epochs: 200,
        batch_size: 8,
        window_length: 27 + 1,
        learning_rate: 3e-3,
        lr_decay: 0.98,
        ..TrainConfig::for_model(&m)
    };
    (train_second_stage(std::slice::from_ref(&s), &[], &cam, &m, &t).unwrap(), s)
}

#[test]
fn criterion_10_overfit_contract() {
    let start = Instant::now();
    let (ck, s) = overfit_run();
    let train_mm = evaluate_model(&ck, std::slice::from_ref(&s)).unwrap().protocol1_mm;
    let ma: Vec<f64> = ck.loss_curve.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let rises: Vec<usize> = ma.windows(2).enumerate().filter(|(_, w)| w[1] > w[0]).map(|(i, _)| i + 1).collect();
    report(
        10,
        "overfit a single noiseless sequence",
        train_mm < 5.0 && rises.is_empty(),
        format!(
            "train MPJPE {train_mm:.2} mm (need < 5); final loss {:.2} mm; 20-epoch moving-average increases at {rises:?}",
            ck.loss_curve.last().unwrap()
        ),
        start.elapsed(),
        Duration::from_secs(5 * 60),
    );
}

#[test]
fn criterion_11_determinism_and_round_trips() {
    let start = Instant::now();
    let cam = CameraIntrinsics::benchmark();
    let sk = SkeletonSpec::h36m17();
    let data: Vec<PoseSequence> = generate_dataset(&sk, &MotionGenConfig { frames: 200, seed: 9, ..Default::default() }, 3)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| simulate_stage1(s, &cam, &Stage1NoiseModel::default().with_seed(i as u64)).unwrap())
        .collect();
    let m = TemporalModelConfig { dropout: 0.25, ..desk_model(3, 2, InputMode::Pose2dDepth) };
    let t = desk_train(&m, 10, 42, 0.1);
    let a = train_second_stage(&data[..2], &data[2..], &cam, &m, &t).unwrap();
    let b = train_second_stage(&data[..2], &data[2..], &cam, &m, &t).unwrap();
    let curve_dev = a.loss_curve.iter().zip(&b.loss_curve).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("model.bin");
    a.save(&ckpt_path).unwrap();
    let loaded = posedepth::training::Checkpoint::load(&ckpt_path).unwrap();
    let before = evaluate_model(&a, &data).unwrap();
    let after = evaluate_model(&loaded, &data).unwrap();
    let x: Vec<f64> = (0..100 * 51).map(|i| (i as f64 * 0.013).sin()).collect();
    let out_a = a.model.infer(&x, 100).unwrap();
    let out_b = loaded.model.infer(&x, 100).unwrap();
    let ckpt_bits = out_a.iter().zip(&out_b).all(|(p, q)| p.to_bits() == q.to_bits())
        && before.protocol1_mm.to_bits() == after.protocol1_mm.to_bits()
        && loaded == a;

    let big = generate_motion(&sk, &MotionGenConfig { frames: 10_000, seed: 10, ..Default::default() }).unwrap();
    let big = simulate_stage1(&big, &cam, &Stage1NoiseModel::default()).unwrap();
    let seq_path = dir.path().join("big.poseseq");
    write_sequence(&big, &seq_path).unwrap();
    let back = read_sequence(&seq_path).unwrap();
    let bits = |s: &PoseSequence| -> Vec<u64> {
        s.frames
            .iter()
            .flat_map(|f| {
                let mut v: Vec<u64> = f.root_abs_mm.unwrap().iter().map(|x| x.to_bits()).collect();
                v.extend(f.gt.as_ref().unwrap().coords_mm.iter().flatten().map(|x| x.to_bits()));
                let o = f.obs.as_ref().unwrap();
                v.extend(o.uv.iter().flatten().chain(&o.depth_mm).map(|x| x.to_bits()));
                v
            })
            .collect()
    };
    let seq_bits = back == big && bits(&back) == bits(&big);
    report(
        11,
        "determinism and bit-exact round-trips",
        curve_dev <= 1e-10 && ckpt_bits && seq_bits,
        format!("loss-curve max deviation {curve_dev:.1e}; checkpoint bit-exact {ckpt_bits}; 10,000-frame poseseq bit-exact {seq_bits}"),
        start.elapsed(),
        Duration::from_secs(5 * 60),
    );
}

#[test]
fn criterion_12_stage1_desk_overfit() {
    let start = Instant::now();
    let sk = SkeletonSpec::h36m17();
    let cam = CameraIntrinsics { fx: 120.0, fy: 120.0, cx: 32.0, cy: 32.0, image_w: 64, image_h: 64 };
    let seq = generate_motion(&sk, &MotionGenConfig { frames: 500, seed: 5, ..Default::default() }).unwrap();
    let samples: Vec<Stage1Sample> = seq
        .frames
        .iter()
        .step_by(10)
        .map(|f| {
            let abs = f.absolute_gt().unwrap();
            Stage1Sample {
                image: render_stick_figure(&cam, &sk, &abs, 64, 64, RenderStyle::for_width(64)).unwrap(),
                target: cam.project(&abs, 0).unwrap(),
                mode: LossMode::Full3d,
            }
        })
        .collect();
    let cfg = Stage1Config::default();
    let mut model = Stage1Model::new(cfg.clone(), 0).unwrap();
    let tc = Stage1TrainConfig { epochs: 100, batch_size: 10, learning_rate: 1e-3, lr_decay: 0.99, seed: 0 };
    train_stage1(&mut model, &samples, &tc).unwrap();
    let (mut uv_bins, mut z_bins) = (0.0, 0.0);
    for s in &samples {
        let (_, obs) = stage1_forward(&model, &s.image).unwrap();
        for j in 0..17 {
            let du = (obs.uv[j][0] - s.target.uv[j][0]) / cfg.grid.x_bin_px();
            let dv = (obs.uv[j][1] - s.target.uv[j][1]) / cfg.grid.y_bin_px();
            uv_bins += du.hypot(dv);
            z_bins += (obs.depth_mm[j] - s.target.depth_mm[j]).abs() / cfg.grid.z_bin_mm();
        }
    }
    let n = (samples.len() * 17) as f64;
    let (uv_bins, z_bins) = (uv_bins / n, z_bins / n);
    report(
        12,
        "stage-1 overfit on 50 rendered frames",
        samples.len() == 50 && uv_bins < 2.0 && z_bins < 2.0,
        format!("mean uv error {uv_bins:.3} bins, mean depth error {z_bins:.3} z-bins (need < 2 each)"),
        start.elapsed(),
        Duration::from_secs(15 * 60),
    );
}

#[test]
fn infer_mode_forward_is_pure() {
    let m = TemporalModel::new(desk_model(3, 2, InputMode::Pose2d), 1).unwrap();
    let x: Vec<f64> = (0..40 * 34).map(|i| (i as f64 * 0.1).cos()).collect();
    let mut a = m.clone();
    let (y1, _) = a.forward(&x, 1, 40, Mode::Infer, None).unwrap();
    let (y2, _) = a.forward(&x, 1, 40, Mode::Infer, None).unwrap();
    assert_eq!(y1, y2);
    assert_eq!(a, m);
}
