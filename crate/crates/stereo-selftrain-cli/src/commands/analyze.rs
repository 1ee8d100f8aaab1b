//! `analyze`: per-sample consistency/error visualization and correlation.
//!
//! For every sample with ground truth: runs the teacher at three scales,
//! computes the variance and delta statistics plus the combined weights,
//! writes an image / error-map / consistency-map PNG triptych and the raw
//! statistic maps as PFM, and records the Spearman correlation of each
//! statistic against the absolute error. Samples without ground truth are
//! skipped with a warning.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde::Serialize;
use stereo_selftrain::io::checkpoint::read_model_checkpoint;
use stereo_selftrain::io::heatmap::{write_heatmap_png, write_heatmap_png_normalized};
use stereo_selftrain::io::manifest::{load_labeled, load_manifest, load_unlabeled};
use stereo_selftrain::io::pfm::write_pfm;
use stereo_selftrain::io::png_image::write_image_png;
use stereo_selftrain::filters::{compute_filter_outputs, FilterConfig};
use stereo_selftrain::metrics::consistency_error_correlation;
use stereo_selftrain::model::infer;
use stereo_selftrain::resize::resize_image;
use stereo_selftrain::types::{Grid, Image, MultiScalePredictions, StereoSample};

#[derive(Debug, Serialize)]
struct CorrelationRecord {
    id: String,
    rho_sigma: f64,
    rho_delta: f64,
    epe: f64,
}

#[derive(Debug, Serialize)]
struct AnalysisReport {
    records: Vec<CorrelationRecord>,
    mean_rho_sigma: Option<f64>,
    mean_rho_delta: Option<f64>,
    skipped_without_gt: usize,
}

pub fn run(
    checkpoint: PathBuf,
    manifest_path: PathBuf,
    out: PathBuf,
    iters: Option<usize>,
) -> Result<ExitCode> {
    let params = read_model_checkpoint(&checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let manifest = load_manifest(&manifest_path)?;
    let mut samples = load_labeled(&manifest)?;
    samples.extend(load_unlabeled(&manifest)?);
    std::fs::create_dir_all(&out)?;

    let n_iters = iters.unwrap_or(params.config().n_iters);
    let filter_cfg = FilterConfig::default();
    let mut records = Vec::new();
    let mut skipped = 0usize;

    for sample in &samples {
        let Some(gt) = sample.gt_disparity() else {
            eprintln!("warning: sample {} has no ground truth, skipped", sample.id);
            skipped += 1;
            continue;
        };
        let valid = sample.validity().expect("gt implies validity");

        let scaled = |factor: f64| -> Result<StereoSample> {
            Ok(StereoSample::new(
                resize_image(&sample.left, factor)?,
                resize_image(&sample.right, factor)?,
                format!("{}@{}", sample.id, factor),
            )?)
        };
        let trace_high = infer(&params, &scaled(2.0)?, n_iters)?;
        let trace_orig = infer(&params, sample, n_iters)?;
        let trace_low = infer(&params, &scaled(0.5)?, n_iters)?;
        let ms = MultiScalePredictions {
            p_high: trace_high.last().clone(),
            p_orig: trace_orig.last().clone(),
            p_low: trace_low.last().clone(),
            scale_high: 2.0,
            scale_low: 0.5,
        };
        let outputs = compute_filter_outputs(&ms, &trace_orig, &filter_cfg)?;

        let mut error = Grid::new(gt.width(), gt.height());
        let mut err_sum = 0.0;
        let mut err_n = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let e = (ms.p_orig.get(x, y) - gt.get(x, y)).abs();
                error.set(x, y, e);
                if valid.get(x, y) {
                    err_sum += e;
                    err_n += 1;
                }
            }
        }
        let rho_sigma = consistency_error_correlation(&outputs.sigma, &error, valid)?;
        let rho_delta = consistency_error_correlation(&outputs.delta, &error, valid)?;

        // Triptych: reference image, error map, consistency map.
        let stem = sample.id.replace(['/', ' '], "_");
        write_image_png(&grayscale(&sample.left), &out.join(format!("{stem}_image.png")))?;
        write_heatmap_png_normalized(&error, &out.join(format!("{stem}_error.png")))?;
        write_heatmap_png(
            outputs.w_soft.grid(),
            &out.join(format!("{stem}_consistency.png")),
        )?;
        // Raw statistics as PFM for downstream tooling.
        write_pfm(&outputs.sigma, None, &out.join(format!("{stem}_sigma.pfm")))?;
        write_pfm(&outputs.delta, None, &out.join(format!("{stem}_delta.pfm")))?;
        write_pfm(
            outputs.w_soft.grid(),
            None,
            &out.join(format!("{stem}_wsoft.pfm")),
        )?;

        records.push(CorrelationRecord {
            id: sample.id.clone(),
            rho_sigma,
            rho_delta,
            epe: err_sum / err_n.max(1) as f64,
        });
    }

    let mean = |f: fn(&CorrelationRecord) -> f64| -> Option<f64> {
        if records.is_empty() {
            None
        } else {
            Some(records.iter().map(f).sum::<f64>() / records.len() as f64)
        }
    };
    let report = AnalysisReport {
        mean_rho_sigma: mean(|r| r.rho_sigma),
        mean_rho_delta: mean(|r| r.rho_delta),
        skipped_without_gt: skipped,
        records,
    };

    println!("{:<24} {:>10} {:>10} {:>8}", "sample", "rho_sigma", "rho_delta", "epe");
    for r in &report.records {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>8.3}",
            r.id, r.rho_sigma, r.rho_delta, r.epe
        );
    }
    if let (Some(ms), Some(md)) = (report.mean_rho_sigma, report.mean_rho_delta) {
        println!("{:<24} {:>10.4} {:>10.4}", "mean", ms, md);
    }
    if skipped > 0 {
        eprintln!("warning: {skipped} sample(s) skipped for missing ground truth");
    }
    std::fs::write(
        out.join("correlations.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn grayscale(img: &Image) -> Image {
    let mut out = Image::new(1, img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut v = 0.0;
            for c in 0..img.channels() {
                v += img.get(c, x, y);
            }
            out.set(0, x, y, v / img.channels() as f64);
        }
    }
    out
}
