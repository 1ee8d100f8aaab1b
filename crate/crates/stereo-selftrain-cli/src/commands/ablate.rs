//! `ablate`: the full variant grid over shared seeds.
//!
//! For every seed: pretrain once on the labeled manifest, then run each
//! configured cell (a named weighting / filter / EMA variant) from that
//! same initialization on the unlabeled manifest, evaluating on the eval
//! manifest. Cells share the seed-derived data order, so comparisons are
//! paired. Per-cell medians over seeds go into the final table. A failed
//! sub-run is recorded; the command fails only if every cell fails.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use stereo_selftrain::io::checkpoint::{read_model_checkpoint, write_model_checkpoint};
use stereo_selftrain::io::manifest::{load_labeled, load_manifest, load_unlabeled};
use stereo_selftrain::io::metrics_log::MetricsLog;
use stereo_selftrain::metrics::{ablation_report, EvalReport};
use stereo_selftrain::selftrain::{evaluate_model, pretrain, run_selftraining};

use crate::config::{cell_config, RunConfig};

pub fn run(config_path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.apply_overrides(seed, out);
    cfg.validate()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    cfg.echo_into(&out_dir)?;

    if cfg.ablate.cells.is_empty() {
        bail!("config has no ablation cells ([[ablate.cells]])");
    }
    let seeds = if cfg.ablate.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.ablate.seeds.clone()
    };

    let labeled = {
        let Some(path) = &cfg.data.labeled else {
            bail!("config has no data.labeled manifest");
        };
        load_labeled(&load_manifest(path)?).context("loading labeled samples")?
    };
    let unlabeled = {
        let Some(path) = &cfg.data.unlabeled else {
            bail!("config has no data.unlabeled manifest");
        };
        load_unlabeled(&load_manifest(path)?).context("loading unlabeled samples")?
    };
    let eval_samples = {
        let Some(path) = &cfg.data.eval else {
            bail!("config has no data.eval manifest");
        };
        load_labeled(&load_manifest(path)?).context("loading eval samples")?
    };

    // Per-cell EPEs across seeds; None marks a failed sub-run.
    let mut cell_results: Vec<Vec<Option<EvalReport>>> =
        vec![Vec::new(); cfg.ablate.cells.len()];

    for &run_seed in &seeds {
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = run_seed;
        let ckpt_path = out_dir.join(format!("pretrain_seed{run_seed}.ckpt"));
        let init = if ckpt_path.is_file() {
            read_model_checkpoint(&ckpt_path)?
        } else {
            let mut log =
                MetricsLog::with_file(&out_dir.join(format!("pretrain_seed{run_seed}.log")))?;
            let params = pretrain(&labeled, &cfg.model, &train_cfg, &mut log)?;
            log.flush()?;
            write_model_checkpoint(&ckpt_path, &params)?;
            params
        };
        println!("seed {run_seed}: pretrained");

        for (ci, cell) in cfg.ablate.cells.iter().enumerate() {
            let result = (|| -> Result<EvalReport> {
                let cell_cfg = {
                    let mut c = cell_config(&train_cfg, cell)?;
                    c.seed = run_seed;
                    Ok::<_, anyhow::Error>(c)
                }?;
                let mut log = MetricsLog::with_file(
                    &out_dir.join(format!("cell_{}_seed{run_seed}.log", cell.name)),
                )?;
                let outcome = if cell_cfg.steps_selftrain == 0 {
                    // Baseline: evaluate the pretrained weights directly.
                    None
                } else {
                    Some(run_selftraining(
                        &unlabeled,
                        None,
                        init.clone(),
                        &cell_cfg,
                        &mut log,
                        None,
                    )?)
                };
                log.flush()?;
                let model = outcome.map(|o| o.student).unwrap_or_else(|| init.clone());
                Ok(evaluate_model(&model, &eval_samples)?)
            })();
            match result {
                Ok(report) => {
                    println!(
                        "seed {run_seed} cell {:>12}: epe={:.4} d1={:.4}",
                        cell.name, report.epe, report.d1
                    );
                    cell_results[ci].push(Some(report));
                }
                Err(err) => {
                    eprintln!("seed {run_seed} cell {} FAILED: {err:#}", cell.name);
                    cell_results[ci].push(None);
                }
            }
        }
    }

    // Median-epe representative per cell.
    let mut rows = Vec::new();
    let mut any_ok = false;
    for (cell, results) in cfg.ablate.cells.iter().zip(&cell_results) {
        let mut ok: Vec<&EvalReport> = results.iter().flatten().collect();
        if ok.is_empty() {
            rows.push((format!("{} (all runs failed)", cell.name), empty_report()));
            continue;
        }
        any_ok = true;
        ok.sort_by(|a, b| a.epe.partial_cmp(&b.epe).unwrap());
        let median = ok[ok.len() / 2].clone();
        rows.push((cell.name.clone(), median));
    }
    let table = ablation_report(&rows)?;
    print!("{}", table.to_text());
    std::fs::write(out_dir.join("ablation.json"), table.to_json())?;
    std::fs::write(out_dir.join("ablation.txt"), table.to_text())?;

    if any_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("every ablation cell failed");
    }
}

fn empty_report() -> EvalReport {
    EvalReport {
        epe: f64::NAN,
        d1: f64::NAN,
        bad: vec![(1.0, f64::NAN), (2.0, f64::NAN), (4.0, f64::NAN)],
        avgerr: f64::NAN,
        n_valid: 0,
    }
}
