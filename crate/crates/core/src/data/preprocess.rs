//! Sample preprocessing: the resize-only standard pipeline and the
//! binarize / median-denoise / square-pad calligraphy pipeline.

use super::{DataError, GlyphSample};
use crate::tensor::{Shape, Tensor};

/// Binarization policy for scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Fixed(u8),
    /// Otsu's method over the sample's own histogram.
    Otsu,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(128)
    }
}

/// Center-aligned bilinear resample of a single plane.
pub fn bilinear_resize(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    assert!(dw > 0 && dh > 0);
    let mut out = vec![0.0f32; dw * dh];
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for dy in 0..dh {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = (fy - y0 as f64) as f32;
        for dx in 0..dw {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = (fx - x0 as f64) as f32;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[dy * dw + dx] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

fn to_tensor(plane: Vec<f32>, size: usize) -> Tensor {
    // Map byte intensities to [-1, 1] with ink at the -1 end.
    let values: Vec<f32> = plane.iter().map(|v| v / 255.0 * 2.0 - 1.0).collect();
    Tensor::from_vec(Shape::new(1, 1, size, size), values).expect("sized by construction")
}

/// Resize-only pipeline: bilinear to `out_size`, then map into [-1, 1].
pub fn preprocess_standard(sample: &GlyphSample, out_size: usize) -> Result<Tensor, DataError> {
    if out_size == 0 {
        return Err(DataError::DegenerateImage {
            width: out_size,
            height: out_size,
        });
    }
    let (w, h) = (sample.width as usize, sample.height as usize);
    let plane: Vec<f32> = sample.pixels.iter().map(|&b| b as f32).collect();
    let resized = bilinear_resize(&plane, w, h, out_size, out_size);
    Ok(to_tensor(resized, out_size))
}

/// Otsu's threshold: maximizes inter-class variance of the histogram.
pub fn otsu_threshold(pixels: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    let total = pixels.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let mut sum_b = 0.0;
    let mut weight_b = 0.0;
    let mut best = (0.0f64, 128u8);
    for t in 0..256 {
        weight_b += hist[t] as f64;
        if weight_b == 0.0 {
            continue;
        }
        let weight_f = total - weight_b;
        if weight_f == 0.0 {
            break;
        }
        sum_b += t as f64 * hist[t] as f64;
        let mean_b = sum_b / weight_b;
        let mean_f = (sum_all - sum_b) / weight_f;
        let between = weight_b * weight_f * (mean_b - mean_f) * (mean_b - mean_f);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    best.1
}

/// Median filter with edge replication over a (2r+1)^2 window.
pub fn median_filter(pixels: &[u8], w: usize, h: usize, radius: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), w * h);
    if radius == 0 {
        return pixels.to_vec();
    }
    let r = radius as isize;
    let mut out = vec![0u8; pixels.len()];
    let mut window = Vec::with_capacity((2 * radius + 1) * (2 * radius + 1));
    for y in 0..h as isize {
        for x in 0..w as isize {
            window.clear();
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    window.push(pixels[yy * w + xx]);
                }
            }
            window.sort_unstable();
            out[(y as usize) * w + x as usize] = window[window.len() / 2];
        }
    }
    out
}

/// Calligraphy-scan pipeline: binarize, median-denoise, pad to a square
/// with the ink bounding box centered, resize, map to [-1, 1]. Returns
/// `None` for samples that are all background after binarization (flagged
/// for exclusion).
pub fn preprocess_calligraphy(
    sample: &GlyphSample,
    out_size: usize,
    threshold: Threshold,
    median_radius: usize,
) -> Result<Option<Tensor>, DataError> {
    if out_size == 0 {
        return Err(DataError::DegenerateImage {
            width: out_size,
            height: out_size,
        });
    }
    let (w, h) = (sample.width as usize, sample.height as usize);
    let thr = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Otsu => otsu_threshold(&sample.pixels),
    };
    let binary: Vec<u8> = sample
        .pixels
        .iter()
        .map(|&p| if p < thr { 0 } else { 255 })
        .collect();
    let denoised = median_filter(&binary, w, h, median_radius);

    // Ink bounding box.
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if denoised[y * w + x] == 0 {
                let b = bbox.get_or_insert((x, y, x, y));
                b.0 = b.0.min(x);
                b.1 = b.1.min(y);
                b.2 = b.2.max(x);
                b.3 = b.3.max(y);
            }
        }
    }
    let Some((x0, y0, x1, y1)) = bbox else {
        return Ok(None);
    };

    // Square canvas, glyph bounding box centered.
    let side = w.max(h);
    let bbox_cx = (x0 + x1) as isize / 2;
    let bbox_cy = (y0 + y1) as isize / 2;
    let ox = (side as isize / 2 - bbox_cx).clamp(0, (side - w) as isize) as usize;
    let oy = (side as isize / 2 - bbox_cy).clamp(0, (side - h) as isize) as usize;
    let mut canvas = vec![255u8; side * side];
    for y in 0..h {
        let dst = (y + oy) * side + ox;
        canvas[dst..dst + w].copy_from_slice(&denoised[y * w..(y + 1) * w]);
    }

    let plane: Vec<f32> = canvas.iter().map(|&b| b as f32).collect();
    let resized = bilinear_resize(&plane, side, side, out_size, out_size);
    Ok(Some(to_tensor(resized, out_size)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: u16, h: u16, pixels: Vec<u8>) -> GlyphSample {
        GlyphSample::new([0, 0], w, h, pixels, "test").unwrap()
    }

    #[test]
    fn constant_background_maps_to_plus_one() {
        let s = sample(3, 3, vec![255; 9]);
        let t = preprocess_standard(&s, 3).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkerboard_survives_identity_resize() {
        let s = sample(2, 2, vec![0, 255, 255, 0]);
        let t = preprocess_standard(&s, 2).unwrap();
        assert_eq!(t.values(), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn downsample_matches_block_average() {
        // 4x4 -> 2x2 center-aligned bilinear equals the 2x2 block means.
        let pixels: Vec<u8> = (0..16).map(|i| (i * 16) as u8).collect();
        let s = sample(4, 4, pixels.clone());
        let t = preprocess_standard(&s, 2).unwrap();
        let avg = |ids: [usize; 4]| -> f32 {
            let m: f32 = ids.iter().map(|&i| pixels[i] as f32).sum::<f32>() / 4.0;
            m / 255.0 * 2.0 - 1.0
        };
        let expect = [
            avg([0, 1, 4, 5]),
            avg([2, 3, 6, 7]),
            avg([8, 9, 12, 13]),
            avg([10, 11, 14, 15]),
        ];
        for (got, want) in t.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn range_is_contained_and_background_majority_positive() {
        let mut pixels = vec![255u8; 64];
        pixels[20] = 0;
        pixels[21] = 10;
        let s = sample(8, 8, pixels);
        let t = preprocess_standard(&s, 8).unwrap();
        assert!(t.values().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let mean: f32 = t.values().iter().sum::<f32>() / 64.0;
        assert!(mean > 0.0);
    }

    #[test]
    fn median_keeps_constants_and_removes_salt() {
        let constant = vec![255u8; 25];
        assert_eq!(median_filter(&constant, 5, 5, 1), constant);
        // One isolated ink pixel in background disappears.
        let mut salt = vec![255u8; 25];
        salt[12] = 0;
        assert_eq!(median_filter(&salt, 5, 5, 1), vec![255u8; 25]);
        // Isolated at a corner disappears too (replicated edges).
        let mut corner = vec![255u8; 25];
        corner[0] = 0;
        assert_eq!(median_filter(&corner, 5, 5, 1), vec![255u8; 25]);
    }

    #[test]
    fn calligraphy_centers_the_bbox() {
        // 3x5 all-ink glyph -> 5x5 canvas with the box centered within
        // one pixel; identity resize keeps it checkable.
        let s = sample(3, 5, vec![0; 15]);
        let t = preprocess_calligraphy(&s, 5, Threshold::Fixed(128), 0)
            .unwrap()
            .unwrap();
        let v = t.values();
        let mut ink_xs = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                if v[y * 5 + x] < 0.0 {
                    ink_xs.push(x as isize);
                }
            }
        }
        assert!(!ink_xs.is_empty());
        let min = *ink_xs.iter().min().unwrap();
        let max = *ink_xs.iter().max().unwrap();
        let center = (min + max) / 2;
        assert!((center - 2).abs() <= 1, "bbox center {center}");
    }

    #[test]
    fn blank_scan_is_flagged_for_exclusion() {
        let s = sample(4, 4, vec![255; 16]);
        let out = preprocess_calligraphy(&s, 4, Threshold::Fixed(128), 1).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn otsu_separates_bimodal_histogram() {
        let mut pixels = vec![10u8; 50];
        pixels.extend(vec![200u8; 50]);
        let t = otsu_threshold(&pixels);
        assert!(t > 10 && t <= 200, "{t}");
    }
}
