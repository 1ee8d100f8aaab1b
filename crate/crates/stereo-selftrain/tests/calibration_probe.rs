// Development probe for sizing the desk-scale experiment configs.
// Run explicitly: cargo test --test calibration_probe -- --ignored --nocapture

use std::time::Instant;

use stereo_selftrain::io::metrics_log::MetricsLog;
use stereo_selftrain::model::{init_parameters, ModelConfig};
use stereo_selftrain::selftrain::{
    evaluate_model, pretrain, run_selftraining, SelfTrainConfig, WeightingMode,
};
use stereo_selftrain::synth::{domain_a, domain_b, generate_set};

fn probe_model() -> ModelConfig {
    ModelConfig {
        feature_channels: 16,
        hidden_channels: 24,
        downsample_factor: 4,
        n_iters: 6,
        max_disparity: 16.0,
    }
}

#[test]
#[ignore]
fn pretrain_learnability() {
    let model = probe_model();
    let (w, h) = (48, 32);
    let train = generate_set(&domain_a(w, h, 8.0, 1), 0, 40).unwrap();
    let val_a = generate_set(&domain_a(w, h, 8.0, 1), 1000, 12).unwrap();
    let val_b = generate_set(&domain_b(w, h, 10.0, 2), 2000, 12).unwrap();

    let cfg = SelfTrainConfig {
        steps_pretrain: 2000,
        batch_size: 1,
        seed: 0,
        ..SelfTrainConfig::default()
    };
    let init = init_parameters(&model, cfg.seed);
    let init_a = evaluate_model(&init, &val_a).unwrap();
    println!("init  EPE(A) = {:.3}", init_a.epe);

    let t = Instant::now();
    let mut log = MetricsLog::in_memory();
    let params = pretrain(&train, &model, &cfg, &mut log).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!(
        "pretrain 2000 steps took {:.1}s ({:.1} ms/step)",
        dt,
        dt / 2000.0 * 1000.0
    );

    let report_a = evaluate_model(&params, &val_a).unwrap();
    let report_b = evaluate_model(&params, &val_b).unwrap();
    println!(
        "after pretrain: EPE(A held-out) = {:.3}  D1(A) = {:.2}",
        report_a.epe, report_a.d1
    );
    println!(
        "baseline on B:  EPE(B held-out) = {:.3}  D1(B) = {:.2}",
        report_b.epe, report_b.d1
    );
    let tail: Vec<&String> = log.lines().iter().rev().take(3).collect();
    println!("last loss lines: {:?}", tail);
}

fn cached_pretrain(
    train_a: &[stereo_selftrain::types::StereoSample],
    model: &ModelConfig,
    cfg: &SelfTrainConfig,
    tag: &str,
) -> stereo_selftrain::model::ModelParameters {
    use stereo_selftrain::io::checkpoint::{read_model_checkpoint, write_model_checkpoint};
    let path = std::env::temp_dir().join(format!("probe_init_{tag}.ckpt"));
    if let Ok(params) = read_model_checkpoint(&path) {
        if params.config() == model {
            println!("(pretrain loaded from cache {})", path.display());
            return params;
        }
    }
    let t = Instant::now();
    let mut log = MetricsLog::in_memory();
    let params = pretrain(train_a, model, cfg, &mut log).unwrap();
    println!("pretrain: {:.1}s", t.elapsed().as_secs_f64());
    write_model_checkpoint(&path, &params).unwrap();
    params
}

#[test]
#[ignore]
fn stronger_model_probe() {
    use stereo_selftrain::filters::compute_filter_outputs;
    use stereo_selftrain::metrics::consistency_error_correlation;
    use stereo_selftrain::model::infer;
    use stereo_selftrain::resize::resize_image;
    use stereo_selftrain::types::{MultiScalePredictions, StereoSample};

    let model = ModelConfig {
        feature_channels: 24,
        hidden_channels: 32,
        downsample_factor: 4,
        n_iters: 6,
        max_disparity: 16.0,
    };
    let (w, h) = (48, 32);
    let train_a = generate_set(&domain_a(w, h, 8.0, 1), 0, 40).unwrap();
    let val_a = generate_set(&domain_a(w, h, 8.0, 1), 1000, 12).unwrap();
    let val_b = generate_set(&domain_b(w, h, 10.0, 2), 2000, 12).unwrap();
    let steps: u64 = std::env::var("PROBE_STEPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(6000);
    let base = SelfTrainConfig {
        steps_pretrain: steps,
        batch_size: 1,
        seed: 0,
        pretrain_scale_jitter: true,
        ..SelfTrainConfig::default()
    };
    let init = cached_pretrain(&train_a, &model, &base, &format!("jit{steps}"));
    let ra = evaluate_model(&init, &val_a).unwrap();
    let rb = evaluate_model(&init, &val_b).unwrap();
    println!("EPE(A) = {:.3}  EPE(B) = {:.3}", ra.epe, rb.epe);

    for teacher_iters in [6usize, 12, 16] {
        let mut rho_sigma = Vec::new();
        let mut rho_delta = Vec::new();
        let mut plain = Vec::new();
        let mut weighted = Vec::new();
        let mut buckets = [[0.0f64; 4]; 3];
        for s in &val_b {
            let scaled = |factor: f64| -> StereoSample {
                if factor == 1.0 {
                    s.clone()
                } else {
                    StereoSample::new(
                        resize_image(&s.left, factor).unwrap(),
                        resize_image(&s.right, factor).unwrap(),
                        "scaled",
                    )
                    .unwrap()
                }
            };
            let t_high = infer(&init, &scaled(2.0), teacher_iters).unwrap();
            let t_orig = infer(&init, s, teacher_iters).unwrap();
            let t_low = infer(&init, &scaled(0.5), teacher_iters).unwrap();
            let ms = MultiScalePredictions {
                p_high: t_high.last().clone(),
                p_orig: t_orig.last().clone(),
                p_low: t_low.last().clone(),
                scale_high: 2.0,
                scale_low: 0.5,
            };
            let out = compute_filter_outputs(&ms, &t_orig, &base.csf).unwrap();
            let gt = s.gt_disparity().unwrap();
            let valid = s.validity().unwrap();
            let mut err = stereo_selftrain::types::Grid::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    err.set(x, y, (ms.p_orig.get(x, y) - gt.get(x, y)).abs());
                }
            }
            rho_sigma.push(consistency_error_correlation(&out.sigma, &err, valid).unwrap());
            rho_delta.push(consistency_error_correlation(&out.delta, &err, valid).unwrap());
            let (mut se, mut n, mut swe, mut sw) = (0.0, 0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    if valid.get(x, y) {
                        let e = err.get(x, y);
                        se += e;
                        n += 1.0;
                        swe += out.w_soft.get(x, y) * e;
                        sw += out.w_soft.get(x, y);
                        let b = if e < 1.0 {
                            0
                        } else if e < 2.5 {
                            1
                        } else {
                            2
                        };
                        buckets[b][0] += 1.0;
                        buckets[b][1] += out.sigma.get(x, y);
                        buckets[b][2] += out.delta.get(x, y);
                        buckets[b][3] += out.w_soft.get(x, y);
                    }
                }
            }
            plain.push(se / n);
            weighted.push(swe / sw);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("--- teacher_iters = {teacher_iters}");
        println!(
            "  plain EPE {:.3} weighted {:.3} rho_sigma {:.3} rho_delta {:.3}",
            mean(&plain),
            mean(&weighted),
            mean(&rho_sigma),
            mean(&rho_delta)
        );
        for (name, b) in [("err<1", buckets[0]), ("1..2.5", buckets[1]), (">2.5", buckets[2])] {
            println!(
                "  {name:>7}: n={:>6.0} sigma={:.3} delta={:.4} w={:.3}",
                b[0],
                b[1] / b[0].max(1.0),
                b[2] / b[0].max(1.0),
                b[3] / b[0].max(1.0)
            );
        }
    }
}

#[test]
#[ignore]
fn filter_mechanism_probe() {
    use stereo_selftrain::filters::compute_filter_outputs;
    use stereo_selftrain::metrics::consistency_error_correlation;
    use stereo_selftrain::selftrain::teacher_predict;

    let model = probe_model();
    let (w, h) = (48, 32);
    let train_a = generate_set(&domain_a(w, h, 8.0, 1), 0, 40).unwrap();
    let val_b = generate_set(&domain_b(w, h, 10.0, 2), 2000, 20).unwrap();
    let base = SelfTrainConfig {
        steps_pretrain: 2000,
        batch_size: 1,
        seed: 0,
        ..SelfTrainConfig::default()
    };
    let init = cached_pretrain(&train_a, &model, &base, "s1");

    let mut rho_sigma = Vec::new();
    let mut rho_delta = Vec::new();
    let mut plain_epe = Vec::new();
    let mut weighted_epe = Vec::new();
    for s in &val_b {
        let (ms, trace) = teacher_predict(&init, s, 2.0, 0.5, 6).unwrap();
        let out = compute_filter_outputs(&ms, &trace, &base.csf).unwrap();
        let gt = s.gt_disparity().unwrap();
        let valid = s.validity().unwrap();
        let mut err = stereo_selftrain::types::Grid::new(w, h);
        for y in 0..h {
            for x in 0..w {
                err.set(x, y, (ms.p_orig.get(x, y) - gt.get(x, y)).abs());
            }
        }
        rho_sigma.push(consistency_error_correlation(&out.sigma, &err, valid).unwrap());
        rho_delta.push(consistency_error_correlation(&out.delta, &err, valid).unwrap());
        let (mut se, mut n, mut swe, mut sw) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if valid.get(x, y) {
                    se += err.get(x, y);
                    n += 1.0;
                    swe += out.w_soft.get(x, y) * err.get(x, y);
                    sw += out.w_soft.get(x, y);
                }
            }
        }
        plain_epe.push(se / n);
        weighted_epe.push(swe / sw);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("teacher on B:  plain EPE = {:.3}", mean(&plain_epe));
    println!("soft-weighted EPE (supervision quality) = {:.3}", mean(&weighted_epe));
    println!("mean Spearman(sigma, err) = {:.3}", mean(&rho_sigma));
    println!("mean Spearman(delta, err) = {:.3}", mean(&rho_delta));

    // Bucket fluctuation statistics by error magnitude, over a few samples.
    let mut buckets = [[0.0f64; 4]; 3]; // [n, sigma_sum, delta_sum, w_sum]
    let mut occl = [0.0f64; 4];
    for s in val_b.iter().take(8) {
        let (ms, trace) = teacher_predict(&init, s, 2.0, 0.5, 6).unwrap();
        let out = compute_filter_outputs(&ms, &trace, &base.csf).unwrap();
        let gt = s.gt_disparity().unwrap();
        let valid = s.validity().unwrap();
        for y in 0..h {
            for x in 0..w {
                let err = (ms.p_orig.get(x, y) - gt.get(x, y)).abs();
                let sig = out.sigma.get(x, y);
                let del = out.delta.get(x, y);
                let wgt = out.w_soft.get(x, y);
                if !valid.get(x, y) {
                    occl[0] += 1.0;
                    occl[1] += sig;
                    occl[2] += del;
                    occl[3] += wgt;
                    continue;
                }
                let b = if err < 1.0 {
                    0
                } else if err < 2.5 {
                    1
                } else {
                    2
                };
                buckets[b][0] += 1.0;
                buckets[b][1] += sig;
                buckets[b][2] += del;
                buckets[b][3] += wgt;
            }
        }
    }
    for (name, b) in [("err<1", buckets[0]), ("1..2.5", buckets[1]), (">2.5", buckets[2]), ("occluded", occl)] {
        println!(
            "{name:>9}: n={:>6.0}  mean sigma={:.4}  mean delta={:.4}  mean w={:.3}",
            b[0],
            b[1] / b[0].max(1.0),
            b[2] / b[0].max(1.0),
            b[3] / b[0].max(1.0)
        );
    }
}

#[test]
#[ignore]
fn selftrain_variants_probe() {
    let model = ModelConfig {
        feature_channels: 24,
        hidden_channels: 32,
        downsample_factor: 4,
        n_iters: 6,
        max_disparity: 16.0,
    };
    let (w, h) = (48, 32);
    let train_a = generate_set(&domain_a(w, h, 8.0, 1), 0, 40).unwrap();
    let unlabeled_b = generate_set(&domain_b(w, h, 10.0, 2), 0, 40).unwrap();
    let val_b = generate_set(&domain_b(w, h, 10.0, 2), 2000, 12).unwrap();

    let lr_selftrain: f64 = std::env::var("PROBE_LR")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3e-4);
    let ema_lambda: f64 = std::env::var("PROBE_LAMBDA")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.99);
    let augment = stereo_selftrain::augment::AugmentConfig {
        prob_saturation: 1.0,
        prob_brightness: 1.0,
        prob_occlusion: 1.0,
        prob_noise: 1.0,
        prob_blur: 1.0,
        occlusion_count_range: (1, 3),
        gaussian_noise_std_range: (0.0, 0.05),
        gaussian_blur_sigma_range: (0.0, 1.5),
        ..Default::default()
    };
    let mut csf = stereo_selftrain::filters::FilterConfig::default();
    csf.iteration.epsilon = 25.0;
    csf.iteration.tau = 0.12;
    let base = SelfTrainConfig {
        steps_pretrain: 6000,
        steps_selftrain: 1000,
        batch_size: 1,
        lr_selftrain,
        ema_lambda,
        augment,
        pretrain_scale_jitter: true,
        teacher_iters: Some(12),
        csf,
        seed: 0,
        ..SelfTrainConfig::default()
    };
    let valid_frac: f64 = unlabeled_b
        .iter()
        .map(|s| s.validity().unwrap().count_valid() as f64 / (w * h) as f64)
        .sum::<f64>()
        / unlabeled_b.len() as f64;
    println!("domain B mean valid fraction = {:.3}", valid_frac);
    let init = cached_pretrain(&train_a, &model, &base, "vjit6000");
    let baseline = evaluate_model(&init, &val_b).unwrap();
    println!("lr_selftrain = {lr_selftrain:.1e}");
    println!("baseline EPE(B) = {:.3}", baseline.epe);

    for (name, weighting) in [
        ("unfiltered", WeightingMode::Unfiltered),
        ("hard", WeightingMode::Hard { threshold: 0.5 }),
        ("soft", WeightingMode::Soft),
    ] {
        let cfg = SelfTrainConfig {
            weighting,
            ..base.clone()
        };
        let mut log = MetricsLog::in_memory();
        let t = Instant::now();
        let out =
            run_selftraining(&unlabeled_b, Some(&val_b), init.clone(), &cfg, &mut log, None)
                .unwrap();
        let dt = t.elapsed().as_secs_f64();
        let report = out.final_eval.unwrap();
        println!(
            "variant={name} epe={:.3} d1={:.2} secs={:.0} ms_per_step={:.0}",
            report.epe,
            report.d1,
            dt,
            dt / 1000.0 * 1000.0
        );
        if let Some(line) = log.lines().iter().rev().find(|l| l.starts_with("step=")) {
            println!("variant={name} last: {line}");
        }
    }
}
