//! `pretrain`: supervised training on the labeled manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use stereo_selftrain::io::checkpoint::write_model_checkpoint;
use stereo_selftrain::io::manifest::{load_labeled, load_manifest};
use stereo_selftrain::io::metrics_log::MetricsLog;
use stereo_selftrain::selftrain::{evaluate_model, pretrain};

use crate::config::RunConfig;

pub fn run(config_path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.apply_overrides(seed, out);
    cfg.validate()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    cfg.echo_into(&out_dir)?;

    let Some(labeled_path) = &cfg.data.labeled else {
        bail!("config has no data.labeled manifest");
    };
    let manifest = load_manifest(labeled_path)?;
    let samples = load_labeled(&manifest).context("loading labeled samples")?;

    let mut log = MetricsLog::with_file(&out_dir.join("pretrain_metrics.log"))?;
    let params = pretrain(&samples, &cfg.model, &cfg.train, &mut log)?;
    log.flush()?;

    let ckpt = out_dir.join("pretrain.ckpt");
    write_model_checkpoint(&ckpt, &params)?;
    println!("checkpoint: {}", ckpt.display());

    if let Some(eval_path) = &cfg.data.eval {
        let eval_manifest = load_manifest(eval_path)?;
        let eval_samples = load_labeled(&eval_manifest)?;
        let report = evaluate_model(&params, &eval_samples)?;
        std::fs::write(
            out_dir.join("pretrain_eval.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        println!(
            "eval: epe={:.4} d1={:.4} n_valid={}",
            report.epe, report.d1, report.n_valid
        );
    }
    Ok(ExitCode::SUCCESS)
}
