//! Sparse disparity ground truth as 16-bit grayscale PNG.
//!
//! Encoding: `stored = round(disparity * 256)`; a stored value of 0 marks
//! an invalid pixel, so valid encodings live in `1..=65535`. Round-trips
//! are exact for disparities quantized to 1/256.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DisparityMap, Mask};

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: message.into(),
    }
}

pub fn write_kitti_png(map: &DisparityMap, valid: &Mask, path: &Path) -> Result<()> {
    if valid.width() != map.width() || valid.height() != map.height() {
        return Err(Error::shape(
            map.grid().shape_str(),
            format!("{}x{}", valid.height(), valid.width()),
        ));
    }
    let (w, h) = (map.width(), map.height());
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let stored = if valid.get(x, y) {
                ((map.get(x, y) * 256.0).round() as i64).clamp(1, 65535) as u16
            } else {
                0
            };
            img.put_pixel(x as u32, y as u32, image::Luma([stored]));
        }
    }
    img.save(path)
        .map_err(|e| format_err(path, format!("png encode failed: {e}")))?;
    Ok(())
}

pub fn read_kitti_png(path: &Path) -> Result<(DisparityMap, Mask)> {
    let dynimg = image::open(path)
        .map_err(|e| format_err(path, format!("png decode failed: {e}")))?;
    let img = match dynimg {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(format_err(
                path,
                format!(
                    "expected 16-bit single-channel PNG, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut map = DisparityMap::new(w, h);
    let mut mask = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let stored = img.get_pixel(x as u32, y as u32)[0];
            if stored > 0 {
                map.set(x, y, stored as f64 / 256.0);
                mask.set(x, y, true);
            }
        }
    }
    Ok((map, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn encoding_definition() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut map = DisparityMap::new(2, 1);
        map.set(0, 0, 1.0); // stored 256
        let mut valid = Mask::filled(2, 1, true);
        valid.set(1, 0, false); // stored 0
        write_kitti_png(&map, &valid, &path).unwrap();
        let (got, mask) = read_kitti_png(&path).unwrap();
        assert_eq!(got.get(0, 0), 1.0);
        assert!(mask.get(0, 0));
        assert!(!mask.get(1, 0));
    }

    #[test]
    fn roundtrip_exact_at_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.png");
        let (w, h) = (13, 7);
        let mut map = DisparityMap::new(w, h);
        let mut valid = Mask::filled(w, h, true);
        let mut state = 3u64;
        for y in 0..h {
            for x in 0..w {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let q = (state >> 40) as u16;
                if q == 0 {
                    valid.set(x, y, false);
                } else {
                    map.set(x, y, q as f64 / 256.0);
                }
            }
        }
        write_kitti_png(&map, &valid, &path).unwrap();
        let (got, got_valid) = read_kitti_png(&path).unwrap();
        assert_eq!(got_valid.values(), valid.values());
        for (a, b) in map.grid().values().iter().zip(got.grid().values()) {
            assert_eq!(a, b);
        }
        // Payload pixels survive a second write byte-for-byte.
        let path2 = dir.path().join("r2.png");
        write_kitti_png(&got, &got_valid, &path2).unwrap();
        let (again, again_valid) = read_kitti_png(&path2).unwrap();
        assert_eq!(again.grid().values(), got.grid().values());
        assert_eq!(again_valid.values(), got_valid.values());
    }

    #[test]
    fn wrong_bit_depth_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.png");
        let img = image::ImageBuffer::<image::Luma<u8>, Vec<u8>>::new(4, 4);
        img.save(&path).unwrap();
        assert!(matches!(read_kitti_png(&path), Err(Error::Format { .. })));
    }
}
