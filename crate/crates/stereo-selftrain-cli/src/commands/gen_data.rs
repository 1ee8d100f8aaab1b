//! `gen-data`: write a synthetic dataset and its manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use stereo_selftrain::io::manifest::{DatasetManifest, GtFormat, ManifestEntry};
use stereo_selftrain::io::pfm::write_pfm;
use stereo_selftrain::io::png_image::write_image_png;
use stereo_selftrain::synth::{domain_a, domain_b, generate_synthetic, SyntheticConfig};

use crate::config::RunConfig;

pub fn run(config_path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.apply_overrides(seed, out);
    cfg.validate()?;
    let out_dir = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    cfg.echo_into(&out_dir)?;

    let synth_cfg = resolve_preset(&cfg)?;
    let mut manifest = DatasetManifest::new_in(&out_dir);
    manifest.kind = Some(cfg.gen.preset.clone());

    let total = cfg.gen.labeled + cfg.gen.unlabeled;
    for i in 0..total {
        let sample_seed = cfg.gen.first_seed + i as u64;
        let sample = generate_synthetic(&synth_cfg, sample_seed)
            .with_context(|| format!("generating sample {i}"))?;
        let left = format!("left_{i:04}.png");
        let right = format!("right_{i:04}.png");
        write_image_png(&sample.left, &out_dir.join(&left))?;
        write_image_png(&sample.right, &out_dir.join(&right))?;
        if i < cfg.gen.labeled {
            let gt = format!("gt_{i:04}.pfm");
            write_pfm(
                sample.gt_disparity().expect("synthetic has gt").grid(),
                Some(sample.validity().expect("synthetic has validity")),
                &out_dir.join(&gt),
            )?;
            manifest.labeled.push(ManifestEntry {
                left,
                right,
                gt: Some(gt),
                gt_format: Some(GtFormat::Pfm),
            });
        } else {
            manifest.unlabeled.push(ManifestEntry {
                left,
                right,
                gt: None,
                gt_format: None,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.toml");
    std::fs::write(
        &manifest_path,
        stereo_selftrain::io::manifest::manifest_to_toml(&manifest),
    )?;
    println!(
        "wrote {} labeled + {} unlabeled samples to {}",
        cfg.gen.labeled,
        cfg.gen.unlabeled,
        out_dir.display()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_preset(cfg: &RunConfig) -> Result<SyntheticConfig> {
    let s = &cfg.synthetic;
    let max_disp = s.disparity_range.1;
    Ok(match cfg.gen.preset.as_str() {
        "custom" => *s,
        "domain-a" => SyntheticConfig {
            disparity_range: s.disparity_range,
            seed: s.seed,
            ..domain_a(s.width, s.height, max_disp, s.seed)
        },
        "domain-b" => SyntheticConfig {
            disparity_range: s.disparity_range,
            seed: s.seed,
            ..domain_b(s.width, s.height, max_disp, s.seed)
        },
        other => bail!("unknown preset {other:?} (expected custom, domain-a or domain-b)"),
    })
}
