//! Synthetic two-style glyph sets.
//!
//! Glyphs are stroke lattices: a few segments drawn between points of a
//! 4x4 grid, with the segment choice fixed per glyph id. Style A ("brush",
//! the target style) renders thick strokes with per-variant endpoint
//! jitter; style B ("print", the source style) renders thin clean strokes
//! with at most a one-pixel variant offset. Everything is a pure function
//! of the seed.

use super::GlyphSample;
use crate::rng::SplitMix64;

pub const STYLE_A_TAG: &str = "toy-brush";
pub const STYLE_B_TAG: &str = "toy-print";

/// First label codepoint; glyph `i` is `BASE_CODEPOINT + i`.
pub const BASE_CODEPOINT: u32 = 0x4E00;

#[derive(Clone, Copy)]
struct Stroke {
    from: (i32, i32),
    to: (i32, i32),
}

/// Fixed stroke layout of one glyph, on the unit lattice 0..4.
fn glyph_strokes(seed: u64, glyph: usize) -> Vec<Stroke> {
    let mut rng = SplitMix64::new(seed ^ ((glyph as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)));
    let n_strokes = 3 + rng.next_below(3) as usize;
    let mut strokes = Vec::with_capacity(n_strokes);
    for _ in 0..n_strokes {
        let from = (rng.next_below(4) as i32, rng.next_below(4) as i32);
        let mut to = from;
        while to == from {
            // Bias toward axis-aligned and diagonal moves of length >= 2.
            let pick = rng.next_below(3);
            to = match pick {
                0 => ((from.0 + 2 + rng.next_below(2) as i32).min(3), from.1),
                1 => (from.0, (from.1 + 2 + rng.next_below(2) as i32).min(3)),
                _ => (3 - from.0, 3 - from.1),
            };
        }
        strokes.push(Stroke { from, to });
    }
    strokes
}

fn draw_stroke(pixels: &mut [u8], size: usize, x0: f64, y0: f64, x1: f64, y1: f64, thick: f64) {
    let steps = (((x1 - x0).abs().max((y1 - y0).abs()) * 2.0).ceil() as usize).max(1);
    let r = thick / 2.0;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let cx = x0 + (x1 - x0) * t;
        let cy = y0 + (y1 - y0) * t;
        let lo_x = ((cx - r).floor() as isize).max(0);
        let hi_x = ((cx + r).ceil() as isize).min(size as isize - 1);
        let lo_y = ((cy - r).floor() as isize).max(0);
        let hi_y = ((cy + r).ceil() as isize).min(size as isize - 1);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    pixels[y as usize * size + x as usize] = 0;
                }
            }
        }
    }
}

fn render(
    strokes: &[Stroke],
    size: usize,
    thick: f64,
    jitter: f64,
    offset: (f64, f64),
    rng: &mut SplitMix64,
) -> Vec<u8> {
    let mut pixels = vec![255u8; size * size];
    let margin = size as f64 * 0.18;
    let span = size as f64 - 2.0 * margin;
    let at = |p: i32| margin + span * p as f64 / 3.0;
    for s in strokes {
        let jx0 = (rng.next_f64() * 2.0 - 1.0) * jitter;
        let jy0 = (rng.next_f64() * 2.0 - 1.0) * jitter;
        let jx1 = (rng.next_f64() * 2.0 - 1.0) * jitter;
        let jy1 = (rng.next_f64() * 2.0 - 1.0) * jitter;
        draw_stroke(
            &mut pixels,
            size,
            at(s.from.0) + jx0 + offset.0,
            at(s.from.1) + jy0 + offset.1,
            at(s.to.0) + jx1 + offset.0,
            at(s.to.1) + jy1 + offset.1,
            thick,
        );
    }
    pixels
}

fn make_sample(glyph: usize, size: usize, pixels: Vec<u8>, style_tag: &str) -> GlyphSample {
    let code = BASE_CODEPOINT + glyph as u32;
    let tag = (code as u16).to_be_bytes();
    let mut sample = GlyphSample::new(tag, size as u16, size as u16, pixels, style_tag)
        .expect("square canvas is valid");
    // Toy labels are assigned directly rather than decoded from the tag.
    sample.codepoint = char::from_u32(code);
    sample
}

/// Two unpaired style sets over the same `n_glyphs` labels, `variants`
/// renderings per glyph per style. Identical seeds give identical bytes.
pub fn make_toy_fonts_variants(
    n_glyphs: usize,
    variants: usize,
    size: usize,
    seed: u64,
) -> (Vec<GlyphSample>, Vec<GlyphSample>) {
    assert!(n_glyphs >= 2, "need at least two glyphs");
    assert!(variants >= 1 && size >= 8);
    let thick_a = (size as f64 / 9.0).max(2.0);
    let thick_b = (size as f64 / 28.0).max(1.0);
    let jitter_a = size as f64 / 14.0;
    let mut set_a = Vec::with_capacity(n_glyphs * variants);
    let mut set_b = Vec::with_capacity(n_glyphs * variants);
    for glyph in 0..n_glyphs {
        let strokes = glyph_strokes(seed, glyph);
        for variant in 0..variants {
            let salt = (glyph as u64) << 20 | variant as u64;
            let mut rng_a = SplitMix64::new(seed ^ 0xA5A5_0000 ^ salt);
            let mut rng_b = SplitMix64::new(seed ^ 0x5A5A_0000 ^ salt);
            let pix_a = render(&strokes, size, thick_a, jitter_a, (0.0, 0.0), &mut rng_a);
            let off = (
                rng_b.next_below(3) as f64 - 1.0,
                rng_b.next_below(3) as f64 - 1.0,
            );
            let pix_b = render(&strokes, size, thick_b, 0.0, off, &mut rng_b);
            set_a.push(make_sample(glyph, size, pix_a, STYLE_A_TAG));
            set_b.push(make_sample(glyph, size, pix_b, STYLE_B_TAG));
        }
    }
    (set_a, set_b)
}

/// One rendering per glyph per style.
pub fn make_toy_fonts(
    n_glyphs: usize,
    size: usize,
    seed: u64,
) -> (Vec<GlyphSample>, Vec<GlyphSample>) {
    make_toy_fonts_variants(n_glyphs, 1, size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::preprocess::preprocess_standard;

    #[test]
    fn both_styles_carry_all_labels() {
        let (a, b) = make_toy_fonts(8, 32, 7);
        assert_eq!(a.len(), 8);
        assert_eq!(b.len(), 8);
        let labels = |set: &[GlyphSample]| {
            let mut l: Vec<u32> = set.iter().map(|s| s.label_key()).collect();
            l.sort_unstable();
            l
        };
        assert_eq!(labels(&a), labels(&b));
        assert_eq!(a[0].codepoint, char::from_u32(BASE_CODEPOINT));
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let (a1, b1) = make_toy_fonts_variants(4, 3, 32, 99);
        let (a2, b2) = make_toy_fonts_variants(4, 3, 32, 99);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn styles_differ_in_mean_image() {
        let (a, b) = make_toy_fonts(8, 32, 5);
        let mean_image = |set: &[GlyphSample]| -> Vec<f64> {
            let mut acc = vec![0.0f64; 32 * 32];
            for s in set {
                let t = preprocess_standard(s, 32).unwrap();
                for (m, v) in acc.iter_mut().zip(t.values()) {
                    *m += *v as f64;
                }
            }
            acc.iter_mut().for_each(|m| *m /= set.len() as f64);
            acc
        };
        let ma = mean_image(&a);
        let mb = mean_image(&b);
        let diff: f64 =
            ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ma.len() as f64;
        assert!(diff > 0.05, "styles too similar: {diff}");
    }

    #[test]
    fn glyphs_have_ink() {
        let (a, b) = make_toy_fonts(6, 24, 11);
        for s in a.iter().chain(&b) {
            assert!(s.pixels.iter().any(|&p| p == 0), "blank glyph");
        }
    }
}
