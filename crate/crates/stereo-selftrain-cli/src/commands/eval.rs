//! `eval`: score a checkpoint on a labeled manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use stereo_selftrain::io::checkpoint::read_model_checkpoint;
use stereo_selftrain::io::manifest::{load_labeled, load_manifest};
use stereo_selftrain::metrics::{ablation_report, pooled_report};
use stereo_selftrain::selftrain::evaluate_model;

pub fn run(
    checkpoint: PathBuf,
    manifest_path: PathBuf,
    out: Option<PathBuf>,
    use_gt: bool,
) -> Result<ExitCode> {
    let manifest = load_manifest(&manifest_path)?;
    let samples = load_labeled(&manifest).context("loading eval samples")?;

    let report = if use_gt {
        // Debug path: score ground truth against itself. Exercises the
        // whole metric pipeline; EPE must come out exactly 0.
        let items: Vec<_> = samples
            .iter()
            .map(|s| {
                (
                    s.gt_disparity().unwrap().clone(),
                    s.gt_disparity().unwrap().clone(),
                    s.validity().unwrap().clone(),
                )
            })
            .collect();
        pooled_report(&items)?
    } else {
        let params = read_model_checkpoint(&checkpoint)
            .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
        evaluate_model(&params, &samples)?
    };

    let name = if use_gt {
        "ground-truth".to_string()
    } else {
        checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    };
    let table = ablation_report(&[(name, report.clone())])?;
    print!("{}", table.to_text());

    let out_dir = out.unwrap_or_else(|| {
        manifest_path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(ExitCode::SUCCESS)
}
