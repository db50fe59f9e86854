use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Dims;

use super::Dataset;

/// How single-channel images are brought to a common size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmonizeMode {
    #[default]
    Resize,
    Pad,
}

/// Bilinear interpolation with pixel centres at half-integer coordinates,
/// clamped at the border.
pub fn resize_bilinear(img: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = img[y0 * w + x0] * (1.0 - tx) + img[y0 * w + x1] * tx;
            let bottom = img[y1 * w + x0] * (1.0 - tx) + img[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn pad_center(img: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (top, left) = ((out_h - h) / 2, (out_w - w) / 2);
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..h {
        out[(top + y) * out_w + left..(top + y) * out_w + left + w].copy_from_slice(&img[y * w..(y + 1) * w]);
    }
    out
}

/// Brings every image of a single-channel dataset to `target` dims.
pub fn harmonize(ds: Dataset, target: Dims, mode: HarmonizeMode) -> Result<Dataset> {
    if ds.dims == target {
        return Ok(ds);
    }
    let [c, h, w] = ds.dims;
    let [tc, th, tw] = target;
    if c != 1 || tc != 1 {
        return Err(Error::InvalidInput("only single-channel images can be harmonized".into()));
    }
    if mode == HarmonizeMode::Pad && (h > th || w > tw) {
        return Err(Error::InvalidInput(format!("cannot pad {h}x{w} into {th}x{tw}")));
    }
    let mut ds = ds;
    for s in &mut ds.samples {
        s.features = match mode {
            HarmonizeMode::Resize => resize_bilinear(&s.features, h, w, th, tw),
            HarmonizeMode::Pad => pad_center(&s.features, h, w, th, tw),
        };
    }
    ds.dims = target;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = vec![0.4; 16 * 16];
        let out = resize_bilinear(&img, 16, 16, 28, 28);
        assert_eq!(out.len(), 784);
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn same_size_is_identity() {
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(resize_bilinear(&img, 3, 4, 3, 4), img);
    }

    #[test]
    fn upsampling_stays_in_range() {
        let img: Vec<f64> = (0..256).map(|v| (v % 17) as f64 / 16.0).collect();
        let out = resize_bilinear(&img, 16, 16, 28, 28);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pad_centres() {
        let out = pad_center(&[1.0; 4], 2, 2, 4, 4);
        assert_eq!(out.iter().sum::<f64>(), 4.0);
        assert_eq!(out[5], 1.0);
        assert_eq!(out[0], 0.0);
    }
}
