//! Netpbm greymap (PGM) reading and writing, plus numbered sequence
//! directories (`frame_0000.pgm`, `frame_0001.pgm`, ...).
//!
//! Both the plain (`P2`) and raw (`P5`) variants are read. Samples wider than
//! a byte are big-endian, as Netpbm specifies. Writing always produces `P5`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::{Error, Result};
use crate::image::{FrameSequence, Image};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported magic number {found:?} at byte {offset} (expected P2 or P5)")]
    UnsupportedMagic { offset: usize, found: String },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload at byte {offset}: expected {expected} samples, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("bad sample at byte {offset}: {reason}")]
    BadSample { offset: usize, reason: String },
}

/// Sample width used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let c = self.buf[self.pos];
            if c == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Reads an unsigned decimal header field.
    fn header_uint(&mut self, what: &str) -> Result<u32, PgmError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader {
                offset: start,
                reason: if start >= self.buf.len() {
                    format!("missing {what}")
                } else {
                    format!("expected {what}, found byte 0x{:02x}", self.buf[start])
                },
            });
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| PgmError::MalformedHeader {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Decodes an in-memory PGM file. Intensities are divided by maxval.
pub fn decode_pgm(buf: &[u8]) -> Result<Image, PgmError> {
    if buf.len() < 2 {
        return Err(PgmError::MalformedHeader {
            offset: 0,
            reason: "file shorter than magic number".into(),
        });
    }
    let raw = match &buf[..2] {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(PgmError::UnsupportedMagic {
                offset: 0,
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    let mut cur = Cursor { buf, pos: 2 };
    if cur.pos < buf.len() && !buf[cur.pos].is_ascii_whitespace() && buf[cur.pos] != b'#' {
        return Err(PgmError::MalformedHeader {
            offset: 2,
            reason: "missing whitespace after magic number".into(),
        });
    }
    cur.skip_ws_and_comments();
    let width_at = cur.pos;
    let width = cur.header_uint("width")? as usize;
    let height = cur.header_uint("height")? as usize;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader {
            offset: width_at,
            reason: format!("zero dimension {width}x{height}"),
        });
    }
    cur.skip_ws_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.header_uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader {
            offset: maxval_at,
            reason: format!("maxval {maxval} not in 1..=65535"),
        });
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::MalformedHeader {
            offset: width_at,
            reason: "dimensions overflow".into(),
        })?;
    let maxval_f = maxval as f64;

    let data = if raw {
        // Exactly one whitespace byte separates maxval from the raster.
        if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
            return Err(PgmError::MalformedHeader {
                offset: cur.pos,
                reason: "missing whitespace after maxval".into(),
            });
        }
        cur.pos += 1;
        let bps = if maxval > 255 { 2 } else { 1 };
        let payload = &buf[cur.pos..];
        let available = payload.len() / bps;
        if available < n {
            return Err(PgmError::Truncated {
                offset: cur.pos + available * bps,
                expected: n,
                found: available,
            });
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = if bps == 2 {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
            } else {
                payload[i] as u32
            };
            if v > maxval {
                return Err(PgmError::BadSample {
                    offset: cur.pos + i * bps,
                    reason: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            out.push(v as f64 / maxval_f);
        }
        out
    } else {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            cur.skip_ws_and_comments();
            if cur.pos >= buf.len() {
                return Err(PgmError::Truncated {
                    offset: cur.pos,
                    expected: n,
                    found: i,
                });
            }
            let at = cur.pos;
            let v = cur.header_uint("sample").map_err(|_| PgmError::BadSample {
                offset: at,
                reason: "expected decimal sample".into(),
            })?;
            if v > maxval {
                return Err(PgmError::BadSample {
                    offset: at,
                    reason: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            out.push(v as f64 / maxval_f);
        }
        out
    };
    Ok(Image::from_raw(width, height, data))
}

/// Quantizes to `round(clamp(v, 0, 1) * maxval)` and emits a `P5` file.
pub fn encode_pgm(img: &Image, depth: BitDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let header = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval);
    let bps = if depth == BitDepth::Sixteen { 2 } else { 1 };
    let mut out = Vec::with_capacity(header.len() + img.len() * bps);
    out.extend_from_slice(header.as_bytes());
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&buf).map_err(|source| Error::PgmFile {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_pgm(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img, depth)).map_err(|e| Error::io(path, e))
}

/// File name of frame `i` inside a sequence directory.
pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.pgm")
}

/// Lists the `.pgm` files of a directory in lexical order.
pub fn list_pgm_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every `.pgm` in `dir` (lexical order) as one sequence. A frame whose
/// size differs from the first is reported by path.
pub fn load_sequence_dir(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let paths = list_pgm_files(dir)?;
    if paths.is_empty() {
        return Err(Error::BadFile {
            path: dir.to_path_buf(),
            reason: "no .pgm frames found".into(),
        });
    }
    let mut frames: Vec<Image> = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = load_pgm(p)?;
        if let Some(first) = frames.first() {
            if first.dims() != img.dims() {
                return Err(Error::BadFile {
                    path: p.clone(),
                    reason: format!(
                        "frame is {}x{} but {} is {}x{}",
                        img.width(),
                        img.height(),
                        paths[0].display(),
                        first.width(),
                        first.height()
                    ),
                });
            }
        }
        frames.push(img);
    }
    FrameSequence::new(frames)
}

/// Writes `frame_0000.pgm, frame_0001.pgm, ...` into `dir` (created if needed).
pub fn save_sequence_dir(seq: &FrameSequence, dir: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.iter().enumerate() {
        save_pgm(f, dir.join(frame_file_name(i)), depth)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_8bit() {
        let mut buf = b"P5\n2 2\n255\n".to_vec();
        buf.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode_pgm(&buf).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn p2_with_comments() {
        let img = decode_pgm(b"P2\n# a comment\n1 1 # trailing\n255\n255\n").unwrap();
        assert_eq!(img.data(), &[1.0]);
        let img = decode_pgm(b"P2 3 1 10 0 5 10").unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn p5_16bit_big_endian() {
        let mut buf = b"P5 2 1 65535\n".to_vec();
        buf.extend_from_slice(&[0x01, 0x00, 0xff, 0xff]);
        let img = decode_pgm(&buf).unwrap();
        assert_eq!(img.data(), &[256.0 / 65535.0, 1.0]);
    }

    #[test]
    fn truncated_payloads() {
        let mut buf = b"P5\n4 4\n255\n".to_vec();
        buf.extend_from_slice(&[7; 15]);
        match decode_pgm(&buf) {
            Err(PgmError::Truncated {
                expected, found, offset,
            }) => {
                assert_eq!((expected, found), (16, 15));
                assert_eq!(offset, buf.len());
            }
            other => panic!("{other:?}"),
        }
        let ascii = format!("P2 4 4 255 {}", vec!["1"; 15].join(" "));
        assert!(matches!(
            decode_pgm(ascii.as_bytes()),
            Err(PgmError::Truncated { expected: 16, found: 15, .. })
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(
            decode_pgm(b"P6\n1 1\n255\n\0\0\0"),
            Err(PgmError::UnsupportedMagic { offset: 0, .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5\nx 1\n255\n\0"),
            Err(PgmError::MalformedHeader { offset: 3, .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n70000\n\0"),
            Err(PgmError::MalformedHeader { offset: 7, .. })
        ));
        assert!(matches!(
            decode_pgm(b"P2 1 1 10 11"),
            Err(PgmError::BadSample { offset: 10, .. })
        ));
        assert!(matches!(decode_pgm(b"P"), Err(PgmError::MalformedHeader { .. })));
    }

    #[test]
    fn encode_rounding_and_clamp() {
        let img = Image::from_vec(3, 1, vec![0.5, 1.7, -0.2]).unwrap();
        let bytes = encode_pgm(&img, BitDepth::Eight);
        let header = b"P5\n3 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[128, 255, 0]);
    }

    #[test]
    fn sixteen_bit_round_trip_exhaustive_levels() {
        // Every 16-bit level survives decode -> encode unchanged.
        let levels: Vec<f64> = (0..=65535u32).map(|v| v as f64 / 65535.0).collect();
        let img = Image::from_vec(256, 256, levels).unwrap();
        let bytes = encode_pgm(&img, BitDepth::Sixteen);
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_pgm(&back, BitDepth::Sixteen), bytes);
    }
}
