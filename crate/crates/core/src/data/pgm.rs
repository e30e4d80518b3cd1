//! Binary PGM (`P5`) reading and writing.
//!
//! Header grammar: magic `P5`, whitespace, width, whitespace, height,
//! whitespace, maxval, then exactly one whitespace byte before the raster.
//! `#` starts a comment running to the end of the line and may appear
//! wherever header whitespace is allowed. Samples are one byte when
//! `maxval < 256`, otherwise two bytes big-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, PgmError, Result};
use crate::nn::Tensor;

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    raster_offset: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => pos += 1,
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' && bytes[pos] != b'\r' {
                    pos += 1;
                }
            }
            _ => break,
        }
    }
    pos
}

fn read_number(bytes: &[u8], pos: usize, what: &str) -> Result<(u64, usize), PgmError> {
    let start = skip_space_and_comments(bytes, pos);
    if start == pos {
        return Err(PgmError::MalformedHeader {
            offset: pos,
            reason: format!("expected whitespace before {what}"),
        });
    }
    let mut end = start;
    let mut value: u64 = 0;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(bytes[end] - b'0')))
            .ok_or_else(|| PgmError::MalformedHeader {
                offset: start,
                reason: format!("{what} overflows"),
            })?;
        end += 1;
    }
    if end == start {
        return Err(PgmError::MalformedHeader {
            offset: start,
            reason: format!("expected decimal {what}"),
        });
    }
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header, PgmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PgmError::BadMagic);
    }
    if bytes[1] != b'5' {
        return Err(if bytes[1].is_ascii_digit() {
            PgmError::UnsupportedFormat {
                found: String::from_utf8_lossy(&bytes[..2]).into_owned(),
            }
        } else {
            PgmError::BadMagic
        });
    }
    let (width, pos) = read_number(bytes, 2, "width")?;
    let (height, pos) = read_number(bytes, pos, "height")?;
    let (maxval, pos) = read_number(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader {
            offset: 2,
            reason: format!("zero image extent {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader {
            offset: pos,
            reason: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => {
            return Err(PgmError::MalformedHeader {
                offset: pos,
                reason: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        raster_offset: pos + 1,
    })
}

/// Decodes a P5 image into a `[1, H, W]` tensor scaled into `[0, 1]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor, PgmError> {
    let h = parse_header(bytes)?;
    let bytes_per = if h.maxval < 256 { 1 } else { 2 };
    let n = h.width * h.height;
    let expected = n * bytes_per;
    let raster = &bytes[h.raster_offset..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            offset: h.raster_offset + raster.len(),
            expected,
            found: raster.len(),
        });
    }
    let maxval = f64::from(h.maxval);
    let data = if bytes_per == 1 {
        raster[..n].iter().map(|&b| f64::from(b) / maxval).collect()
    } else {
        raster[..expected]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / maxval)
            .collect()
    };
    Ok(Tensor::new(vec![1, h.height, h.width], data).expect("extent checked"))
}

pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|source| Error::Pgm {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes a `[1, H, W]` (or `[H, W]`) image with values in `[0, 1]`;
/// out-of-range values are clamped and rounded to the nearest level.
pub fn encode_pgm(image: &Tensor, maxval: u16) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [1, h, w] | [h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("PGM needs a single-channel image, got {s:?}"))),
    };
    if maxval == 0 {
        return Err(Error::Config("PGM maxval must be >= 1".into()));
    }
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let scale = f64::from(maxval);
    for &v in image.data() {
        let level = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(level as u8);
        } else {
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn save_pgm(path: &Path, image: &Tensor, maxval: u16) -> Result<()> {
    let bytes = encode_pgm(image, maxval)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
