//! `selftrain`: the teacher-student loop from a pretrained checkpoint.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use stereo_selftrain::io::checkpoint::{read_model_checkpoint, write_model_checkpoint};
use stereo_selftrain::io::manifest::{load_labeled, load_manifest, load_unlabeled};
use stereo_selftrain::io::metrics_log::MetricsLog;
use stereo_selftrain::selftrain::run_selftraining;

use crate::config::RunConfig;

pub fn run(
    config_path: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: PathBuf,
) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.apply_overrides(seed, out);
    cfg.validate()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    cfg.echo_into(&out_dir)?;

    let init = read_model_checkpoint(&checkpoint)
        .with_context(|| format!("loading init checkpoint {}", checkpoint.display()))?;

    let Some(unlabeled_path) = &cfg.data.unlabeled else {
        bail!("config has no data.unlabeled manifest");
    };
    let manifest = load_manifest(unlabeled_path)?;
    let unlabeled = load_unlabeled(&manifest).context("loading unlabeled samples")?;

    let eval_samples = match &cfg.data.eval {
        Some(path) => Some(load_labeled(&load_manifest(path)?)?),
        None => None,
    };

    let mut log = MetricsLog::with_file(&out_dir.join("selftrain_metrics.log"))?;
    let outcome = run_selftraining(
        &unlabeled,
        eval_samples.as_deref(),
        init,
        &cfg.train,
        &mut log,
        Some(&out_dir.join("diagnostics")),
    )?;
    log.flush()?;

    let student_ckpt = out_dir.join("student.ckpt");
    write_model_checkpoint(&student_ckpt, &outcome.student)?;
    let teacher_ckpt = out_dir.join("teacher.ckpt");
    write_model_checkpoint(&teacher_ckpt, &outcome.teacher)?;
    println!("student checkpoint: {}", student_ckpt.display());

    if let Some(report) = outcome.final_eval {
        std::fs::write(
            out_dir.join("selftrain_eval.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        println!(
            "eval: epe={:.4} d1={:.4} n_valid={}",
            report.epe, report.d1, report.n_valid
        );
    }
    Ok(ExitCode::SUCCESS)
}
