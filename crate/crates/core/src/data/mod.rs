//! Dataset ingestion: GNT and PGM codecs, preprocessing, synthetic toy
//! glyphs, and split protocol.
//!
//! Intensity convention everywhere: ink is dark (byte 0, tensor -1),
//! background is light (byte 255, tensor +1).

pub mod gnt;
pub mod pgm;
pub mod preprocess;
pub mod toy;

use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("split ratio {0} outside (0, 1]")]
    BadRatio(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate image extent {width}x{height}")]
    DegenerateImage { width: usize, height: usize },
    #[error("montage columns disagree: {0}")]
    MontageMismatch(String),
    #[error(transparent)]
    Tensor(#[from] crate::error::TensorError),
}

/// A plain 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(DataError::DegenerateImage { width, height });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }
}

/// One character image with its label and style provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphSample {
    /// Raw two-byte tag code, preserved verbatim from GNT files.
    pub tag: [u8; 2],
    /// Best-effort decoded codepoint; `None` when the tag does not map.
    pub codepoint: Option<char>,
    pub width: u16,
    pub height: u16,
    /// Row-major grayscale, 0 = ink, 255 = background.
    pub pixels: Vec<u8>,
    pub style_tag: String,
}

impl GlyphSample {
    pub fn new(
        tag: [u8; 2],
        width: u16,
        height: u16,
        pixels: Vec<u8>,
        style_tag: impl Into<String>,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(DataError::DegenerateImage {
                width: width as usize,
                height: height as usize,
            });
        }
        Ok(GlyphSample {
            tag,
            codepoint: gnt::decode_tag(tag),
            width,
            height,
            pixels,
            style_tag: style_tag.into(),
        })
    }

    /// Stable numeric label: the codepoint when decodable, otherwise the
    /// tag bytes with a high bit marking them undecoded.
    pub fn label_key(&self) -> u32 {
        match self.codepoint {
            Some(c) => c as u32,
            None => 0x8000_0000 | u16::from_be_bytes(self.tag) as u32,
        }
    }

    /// Hex label used in `labels.tsv` and filenames: the codepoint in
    /// lowercase hex, or `x` plus the raw tag bytes when undecodable.
    pub fn label_hex(&self) -> String {
        match self.codepoint {
            Some(c) => format!("{:04x}", c as u32),
            None => format!("x{:02x}{:02x}", self.tag[0], self.tag[1]),
        }
    }

    pub fn image(&self) -> GrayImage {
        GrayImage {
            width: self.width as usize,
            height: self.height as usize,
            pixels: self.pixels.clone(),
        }
    }
}

/// Split ratios of the two styles plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Training fraction of style A (the target style).
    pub r_a: f64,
    /// Training fraction of style B (the source style).
    pub r_b: f64,
    pub seed: u64,
}

/// Seeded uniform shuffle, then the first round(ratio * n) items train and
/// the rest validate. Rounding is half-up.
pub fn split_dataset<T>(
    items: Vec<T>,
    ratio: f64,
    rng: &mut SplitMix64,
) -> Result<(Vec<T>, Vec<T>), DataError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    if items.is_empty() {
        return Err(DataError::Empty("split_dataset"));
    }
    let n = items.len();
    let take = ((ratio * n as f64 + 0.5).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let train = order[..take]
        .iter()
        .map(|&i| slots[i].take().expect("index visited once"))
        .collect();
    let validation = order[take..]
        .iter()
        .map(|&i| slots[i].take().expect("index visited once"))
        .collect();
    Ok((train, validation))
}

/// Splits both styles with one seed: style A first, then style B.
#[allow(clippy::type_complexity)]
pub fn split_pair<T>(
    style_a: Vec<T>,
    style_b: Vec<T>,
    spec: &SplitSpec,
) -> Result<((Vec<T>, Vec<T>), (Vec<T>, Vec<T>)), DataError> {
    let mut rng = SplitMix64::new(spec.seed);
    let a = split_dataset(style_a, spec.r_a, &mut rng)?;
    let b = split_dataset(style_b, spec.r_b, &mut rng)?;
    Ok((a, b))
}

/// Tiles equally sized images into `columns.len()` columns with gray
/// separator lines.
pub fn montage(columns: &[Vec<GrayImage>], separator: usize) -> Result<GrayImage, DataError> {
    const SEP_VALUE: u8 = 128;
    if columns.is_empty() || columns[0].is_empty() {
        return Err(DataError::Empty("montage"));
    }
    let rows = columns[0].len();
    for (i, col) in columns.iter().enumerate() {
        if col.len() != rows {
            return Err(DataError::MontageMismatch(format!(
                "column 0 has {} images, column {} has {}",
                rows,
                i,
                col.len()
            )));
        }
    }
    let (w, h) = (columns[0][0].width, columns[0][0].height);
    for (ci, col) in columns.iter().enumerate() {
        for (ri, img) in col.iter().enumerate() {
            if img.width != w || img.height != h {
                return Err(DataError::MontageMismatch(format!(
                    "image at column {} row {} is {}x{}, expected {}x{}",
                    ci, ri, img.width, img.height, w, h
                )));
            }
        }
    }
    let cols = columns.len();
    let out_w = cols * w + (cols - 1) * separator;
    let out_h = rows * h + (rows - 1) * separator;
    let mut out = GrayImage::filled(out_w, out_h, SEP_VALUE);
    for (ci, col) in columns.iter().enumerate() {
        for (ri, img) in col.iter().enumerate() {
            let ox = ci * (w + separator);
            let oy = ri * (h + separator);
            for y in 0..h {
                let src = &img.pixels[y * w..(y + 1) * w];
                let dst = (oy + y) * out_w + ox;
                out.pixels[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_round_half_up() {
        let mut rng = SplitMix64::new(1);
        for (r, expect) in [(0.05, 150), (0.10, 300), (0.15, 450), (0.30, 900)] {
            let items: Vec<u32> = (0..3000).collect();
            let (train, val) = split_dataset(items, r, &mut rng).unwrap();
            assert_eq!(train.len(), expect);
            assert_eq!(val.len(), 3000 - expect);
        }
    }

    #[test]
    fn split_is_disjoint_exhaustive() {
        let mut rng = SplitMix64::new(2);
        let items: Vec<u32> = (0..101).collect();
        let (train, val) = split_dataset(items, 0.33, &mut rng).unwrap();
        let mut all: Vec<u32> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn full_ratio_empties_validation() {
        let mut rng = SplitMix64::new(3);
        let (train, val) = split_dataset(vec![1, 2, 3], 1.0, &mut rng).unwrap();
        assert_eq!(train.len(), 3);
        assert!(val.is_empty());
    }

    #[test]
    fn same_seed_same_partition() {
        let split = || {
            let mut rng = SplitMix64::new(9);
            split_dataset((0..50).collect::<Vec<u32>>(), 0.4, &mut rng).unwrap()
        };
        assert_eq!(split(), split());
    }

    #[test]
    fn bad_ratio_and_empty_input_rejected() {
        let mut rng = SplitMix64::new(4);
        assert!(split_dataset(vec![1], 0.0, &mut rng).is_err());
        assert!(split_dataset(vec![1], 1.2, &mut rng).is_err());
        assert!(split_dataset(Vec::<u32>::new(), 0.5, &mut rng).is_err());
    }

    #[test]
    fn montage_arithmetic() {
        // 4 columns x 4 rows of 64x64 with 2 px separators:
        // width = 4*64 + 3*2.
        let img = GrayImage::filled(64, 64, 200);
        let cols = vec![vec![img; 4]; 4];
        let m = montage(&cols, 2).unwrap();
        assert_eq!(m.width, 4 * 64 + 3 * 2);
        assert_eq!(m.height, 4 * 64 + 3 * 2);
    }

    #[test]
    fn single_column_is_a_vertical_strip() {
        let img = GrayImage::filled(8, 8, 10);
        let m = montage(&[vec![img; 3]], 2).unwrap();
        assert_eq!(m.width, 8);
        assert_eq!(m.height, 3 * 8 + 2 * 2);
    }

    #[test]
    fn montage_count_mismatch_names_columns() {
        let img = GrayImage::filled(4, 4, 0);
        let err = montage(&[vec![img.clone(); 2], vec![img; 3]], 2).unwrap_err();
        assert!(err.to_string().contains("column 1"));
    }
}
