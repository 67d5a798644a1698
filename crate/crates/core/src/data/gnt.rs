//! GNT container: the de-facto binary format for isolated handwritten
//! character samples.
//!
//! One record is `u32 LE sample_size`, a two-byte tag code, `u16 LE width`,
//! `u16 LE height`, then `width * height` grayscale bytes, with
//! `sample_size == 10 + width * height`. Records repeat until EOF. Tag
//! bytes are preserved verbatim; GB-coded tags are decoded to a codepoint
//! on a best-effort basis only.

use super::GlyphSample;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GntError {
    #[error("record {record} at offset {offset}: size field says {declared}, header implies {expected}")]
    SizeFieldMismatch {
        record: usize,
        offset: usize,
        declared: u32,
        expected: u32,
    },
    #[error("record {record}: truncated at offset {offset}, needed {needed} bytes, {available} available")]
    Truncated {
        record: usize,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("trailing garbage at offset {offset}: {remaining} bytes, too short for a record header")]
    TrailingGarbage { offset: usize, remaining: usize },
    #[error("record {record}: width {width} x height {height} is degenerate")]
    Degenerate {
        record: usize,
        width: u16,
        height: u16,
    },
    #[error("sample {index} too large to encode: {width}x{height}")]
    EncodeOverflow {
        index: usize,
        width: u16,
        height: u16,
    },
    #[error("io error at offset {offset}: {source}")]
    Io {
        offset: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Best-effort tag decoding: ASCII when the second byte is zero, GB18030
/// (a superset of GB2312) otherwise. Returns `None` for unmapped codes.
pub fn decode_tag(tag: [u8; 2]) -> Option<char> {
    if tag[1] == 0 && tag[0].is_ascii() {
        return Some(tag[0] as char);
    }
    let (decoded, _, had_errors) = encoding_rs::GB18030.decode(&tag);
    if had_errors {
        return None;
    }
    let mut chars = decoded.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c != char::REPLACEMENT_CHARACTER => Some(c),
        _ => None,
    }
}

/// Streaming record reader: holds at most one record's bitmap at a time.
pub struct GntReader<R: Read> {
    inner: R,
    offset: usize,
    record: usize,
    style_tag: String,
    done: bool,
}

impl<R: Read> GntReader<R> {
    pub fn new(inner: R, style_tag: impl Into<String>) -> Self {
        GntReader {
            inner,
            offset: 0,
            record: 0,
            style_tag: style_tag.into(),
            done: false,
        }
    }

    /// Reads up to `buf.len()` bytes, returning how many arrived before EOF.
    fn fill(&mut self, buf: &mut [u8]) -> Result<usize, GntError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    return Err(GntError::Io {
                        offset: self.offset + got,
                        source: e,
                    })
                }
            }
        }
        Ok(got)
    }

    fn next_record(&mut self) -> Result<Option<GlyphSample>, GntError> {
        let record_start = self.offset;
        let mut header = [0u8; 10];
        let got = self.fill(&mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < header.len() {
            return Err(GntError::TrailingGarbage {
                offset: record_start,
                remaining: got,
            });
        }
        self.offset += header.len();
        let declared = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let tag = [header[4], header[5]];
        let width = u16::from_le_bytes(header[6..8].try_into().unwrap());
        let height = u16::from_le_bytes(header[8..10].try_into().unwrap());
        if width == 0 || height == 0 {
            return Err(GntError::Degenerate {
                record: self.record,
                width,
                height,
            });
        }
        let bitmap_len = width as usize * height as usize;
        let expected = 10u64 + bitmap_len as u64;
        if declared as u64 != expected {
            return Err(GntError::SizeFieldMismatch {
                record: self.record,
                offset: record_start,
                declared,
                expected: expected.min(u32::MAX as u64) as u32,
            });
        }
        let mut pixels = vec![0u8; bitmap_len];
        let got = self.fill(&mut pixels)?;
        if got < bitmap_len {
            return Err(GntError::Truncated {
                record: self.record,
                offset: self.offset,
                needed: bitmap_len,
                available: got,
            });
        }
        self.offset += bitmap_len;
        self.record += 1;
        Ok(Some(
            GlyphSample::new(tag, width, height, pixels, self.style_tag.clone())
                .expect("extents validated above"),
        ))
    }
}

impl<R: Read> Iterator for GntReader<R> {
    type Item = Result<GlyphSample, GntError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(s)) => Some(Ok(s)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Parses a whole in-memory GNT file.
pub fn parse_gnt(bytes: &[u8]) -> Result<Vec<GlyphSample>, GntError> {
    GntReader::new(bytes, "").collect()
}

/// Serializes samples back to GNT bytes. Round-trips [`parse_gnt`] bitwise.
pub fn write_gnt(samples: &[GlyphSample]) -> Result<Vec<u8>, GntError> {
    let mut out = Vec::new();
    for (index, s) in samples.iter().enumerate() {
        let bitmap_len = s.width as u64 * s.height as u64;
        let size = 10u64 + bitmap_len;
        if size > u32::MAX as u64 {
            return Err(GntError::EncodeOverflow {
                index,
                width: s.width,
                height: s.height,
            });
        }
        out.extend_from_slice(&(size as u32).to_le_bytes());
        out.extend_from_slice(&s.tag);
        out.extend_from_slice(&s.width.to_le_bytes());
        out.extend_from_slice(&s.height.to_le_bytes());
        out.extend_from_slice(&s.pixels);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: [u8; 14] = [
        0x0E, 0x00, 0x00, 0x00, // sample_size = 14
        0xB0, 0xA1, // tag
        0x02, 0x00, // width 2
        0x02, 0x00, // height 2
        0x10, 0x20, 0x30, 0x40,
    ];

    #[test]
    fn golden_record_parses_exactly() {
        let samples = parse_gnt(&GOLDEN).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.tag, [0xB0, 0xA1]);
        assert_eq!((s.width, s.height), (2, 2));
        assert_eq!(s.pixels, vec![0x10, 0x20, 0x30, 0x40]);
        // 0xB0A1 is GB2312 for U+554A.
        assert_eq!(s.codepoint, Some('\u{554a}'));
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_gnt(&[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_bitmap_reports_offset_10() {
        let err = parse_gnt(&GOLDEN[..12]).unwrap_err();
        match err {
            GntError::Truncated {
                record,
                offset,
                needed,
                available,
            } => {
                assert_eq!(record, 0);
                assert_eq!(offset, 10);
                assert_eq!(needed, 4);
                assert_eq!(available, 2);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn size_field_mismatch_reports_record_start() {
        let mut bytes = GOLDEN;
        bytes[0] = 0x0F; // claims 15, header implies 14
        let err = parse_gnt(&bytes).unwrap_err();
        match err {
            GntError::SizeFieldMismatch {
                record,
                offset,
                declared,
                expected,
            } => {
                assert_eq!((record, offset), (0, 0));
                assert_eq!((declared, expected), (15, 14));
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn trailing_partial_header_is_garbage() {
        let mut bytes = GOLDEN.to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        let err = parse_gnt(&bytes).unwrap_err();
        match err {
            GntError::TrailingGarbage { offset, remaining } => {
                assert_eq!(offset, 14);
                assert_eq!(remaining, 3);
            }
            other => panic!("expected trailing garbage, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_opaque_tags() {
        let samples = vec![
            GlyphSample::new([0xFF, 0xFE], 1, 1, vec![7], "").unwrap(),
            GlyphSample::new([0x41, 0x00], 3, 2, vec![0, 1, 2, 3, 4, 5], "").unwrap(),
        ];
        let bytes = write_gnt(&samples).unwrap();
        let parsed = parse_gnt(&bytes).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].tag, [0xFF, 0xFE]);
        assert_eq!(parsed[0].codepoint, None);
        assert_eq!(parsed[1].codepoint, Some('A'));
        assert_eq!(write_gnt(&parsed).unwrap(), bytes);
    }

    #[test]
    fn single_1x1_sample_is_11_bytes() {
        let s = GlyphSample::new([0x01, 0x02], 1, 1, vec![0], "").unwrap();
        assert_eq!(write_gnt(&[s]).unwrap().len(), 11);
    }
}
