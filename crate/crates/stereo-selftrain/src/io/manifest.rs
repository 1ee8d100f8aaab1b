//! Dataset manifests: a TOML file listing sample file paths.
//!
//! ```toml
//! kind = "synthetic-a"            # optional dataset tag
//!
//! [[labeled]]
//! left = "a/left_000.png"
//! right = "a/right_000.png"
//! gt = "a/gt_000.pfm"
//! gt_format = "pfm"               # or "kitti-png"
//!
//! [[unlabeled]]
//! left = "b/left_000.png"
//! right = "b/right_000.png"
//! ```
//!
//! Paths are resolved relative to the manifest's directory. Labeled
//! entries must carry ground truth; unlabeled entries must not.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::StereoSample;

use super::kitti_png::read_kitti_png;
use super::pfm::read_pfm;
use super::png_image::read_image_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtFormat {
    Pfm,
    KittiPng,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub left: String,
    pub right: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_format: Option<GtFormat>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: Option<String>,
    pub labeled: Vec<ManifestEntry>,
    pub unlabeled: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// An in-memory manifest whose paths resolve relative to `base_dir`.
    pub fn new_in(base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            base_dir: base_dir.into(),
            ..Default::default()
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }
}

/// Parses and validates a manifest; missing files are reported with the
/// entry index that references them.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("manifest not found: {}: {}", path.display(), e))
    })?;
    let mut manifest: DatasetManifest = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("manifest {} malformed: {e}", path.display())))?;
    manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    for (i, e) in manifest.labeled.iter().enumerate() {
        if e.gt.is_none() || e.gt_format.is_none() {
            return Err(Error::Config(format!(
                "labeled entry {} is missing gt / gt_format",
                i
            )));
        }
        for rel in [&e.left, &e.right, e.gt.as_ref().unwrap()] {
            let p = manifest.resolve(rel);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "labeled entry {}: file not found: {}",
                    i,
                    p.display()
                )));
            }
        }
    }
    for (i, e) in manifest.unlabeled.iter().enumerate() {
        if e.gt.is_some() || e.gt_format.is_some() {
            return Err(Error::Config(format!(
                "unlabeled entry {} must not carry ground truth",
                i
            )));
        }
        for rel in [&e.left, &e.right] {
            let p = manifest.resolve(rel);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "unlabeled entry {}: file not found: {}",
                    i,
                    p.display()
                )));
            }
        }
    }
    Ok(manifest)
}

fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, id: String) -> Result<StereoSample> {
    let left = read_image_png(&manifest.resolve(&entry.left))?;
    let right = read_image_png(&manifest.resolve(&entry.right))?;
    let mut sample = StereoSample::new(left, right, id)?;
    if let (Some(gt_rel), Some(format)) = (&entry.gt, entry.gt_format) {
        let gt_path = manifest.resolve(gt_rel);
        let (gt, valid) = match format {
            GtFormat::Pfm => read_pfm(&gt_path)?,
            GtFormat::KittiPng => read_kitti_png(&gt_path)?,
        };
        if gt.width() != sample.width() || gt.height() != sample.height() {
            return Err(Error::shape(
                format!("{}x{}", sample.height(), sample.width()),
                format!("{}x{} in {}", gt.height(), gt.width(), gt_path.display()),
            ));
        }
        sample = sample.with_ground_truth(gt, valid)?;
    }
    Ok(sample)
}

/// Loads every labeled sample, in manifest order.
pub fn load_labeled(manifest: &DatasetManifest) -> Result<Vec<StereoSample>> {
    manifest
        .labeled
        .iter()
        .enumerate()
        .map(|(i, e)| load_entry(manifest, e, format!("labeled-{:04}", i)))
        .collect()
}

/// Loads every unlabeled sample, in manifest order.
pub fn load_unlabeled(manifest: &DatasetManifest) -> Result<Vec<StereoSample>> {
    manifest
        .unlabeled
        .iter()
        .enumerate()
        .map(|(i, e)| load_entry(manifest, e, format!("unlabeled-{:04}", i)))
        .collect()
}

/// Serializes a manifest back to TOML (paths stay as written).
pub fn manifest_to_toml(manifest: &DatasetManifest) -> String {
    toml::to_string_pretty(manifest).expect("manifest serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pfm::write_pfm;
    use crate::io::png_image::write_image_png;
    use crate::synth::{domain_a, generate_synthetic};
    use crate::types::Mask;
    use tempfile::tempdir;

    fn write_pair(dir: &Path, stem: &str, with_gt: bool) -> (String, String, Option<String>) {
        let s = generate_synthetic(&domain_a(24, 16, 4.0, 3), 0).unwrap();
        let left = format!("{stem}_l.png");
        let right = format!("{stem}_r.png");
        write_image_png(&s.left, &dir.join(&left)).unwrap();
        write_image_png(&s.right, &dir.join(&right)).unwrap();
        if with_gt {
            let gt = format!("{stem}_gt.pfm");
            write_pfm(
                s.gt_disparity().unwrap().grid(),
                Some(s.validity().unwrap()),
                &dir.join(&gt),
            )
            .unwrap();
            (left, right, Some(gt))
        } else {
            (left, right, None)
        }
    }

    #[test]
    fn loads_entries_in_order_and_validates_dims() {
        let dir = tempdir().unwrap();
        let (l0, r0, g0) = write_pair(dir.path(), "a0", true);
        let (l1, r1, _) = write_pair(dir.path(), "b0", false);
        let toml_text = format!(
            "kind = \"test\"\n\n[[labeled]]\nleft = \"{l0}\"\nright = \"{r0}\"\ngt = \"{}\"\ngt_format = \"pfm\"\n\n[[unlabeled]]\nleft = \"{l1}\"\nright = \"{r1}\"\n",
            g0.unwrap()
        );
        let mpath = dir.path().join("manifest.toml");
        std::fs::write(&mpath, toml_text).unwrap();
        let m = load_manifest(&mpath).unwrap();
        assert_eq!(m.kind.as_deref(), Some("test"));
        let labeled = load_labeled(&m).unwrap();
        assert_eq!(labeled.len(), 1);
        assert!(labeled[0].has_ground_truth());
        let unlabeled = load_unlabeled(&m).unwrap();
        assert_eq!(unlabeled.len(), 1);
        assert!(!unlabeled[0].has_ground_truth());
    }

    #[test]
    fn missing_file_reports_entry_index() {
        let dir = tempdir().unwrap();
        let toml_text = "[[unlabeled]]\nleft = \"nope_l.png\"\nright = \"nope_r.png\"\n";
        let mpath = dir.path().join("manifest.toml");
        std::fs::write(&mpath, toml_text).unwrap();
        match load_manifest(&mpath) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("entry 0"), "message was: {msg}");
            }
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn unlabeled_with_gt_is_rejected() {
        let dir = tempdir().unwrap();
        let (l, r, g) = write_pair(dir.path(), "x", true);
        let toml_text = format!(
            "[[unlabeled]]\nleft = \"{l}\"\nright = \"{r}\"\ngt = \"{}\"\ngt_format = \"pfm\"\n",
            g.unwrap()
        );
        let mpath = dir.path().join("manifest.toml");
        std::fs::write(&mpath, toml_text).unwrap();
        assert!(load_manifest(&mpath).is_err());
    }

    #[test]
    fn kitti_tagged_gt_loads_sparse_validity() {
        use crate::io::kitti_png::write_kitti_png;
        let dir = tempdir().unwrap();
        let s = generate_synthetic(&domain_a(24, 16, 4.0, 3), 1).unwrap();
        write_image_png(&s.left, &dir.path().join("l.png")).unwrap();
        write_image_png(&s.right, &dir.path().join("r.png")).unwrap();
        let mut sparse = Mask::filled(24, 16, true);
        sparse.set(0, 0, false);
        sparse.set(5, 5, false);
        write_kitti_png(
            s.gt_disparity().unwrap(),
            &sparse,
            &dir.path().join("gt.png"),
        )
        .unwrap();
        let toml_text = "[[labeled]]\nleft = \"l.png\"\nright = \"r.png\"\ngt = \"gt.png\"\ngt_format = \"kitti-png\"\n";
        let mpath = dir.path().join("manifest.toml");
        std::fs::write(&mpath, toml_text).unwrap();
        let m = load_manifest(&mpath).unwrap();
        let samples = load_labeled(&m).unwrap();
        let v = samples[0].validity().unwrap();
        assert!(!v.get(0, 0));
        assert!(!v.get(5, 5));
        assert!(v.count_valid() < 24 * 16);
    }
}
