//! Binary netpbm rasters: P5 (gray) and P6 (rgb), maxval up to 255.

use std::fs;
use std::path::Path;

use super::ClassMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn to_tensor(&self) -> Tensor<f32> {
        let scale = 1.0 / self.maxval as f32;
        let data = self.data.iter().map(|&v| v as f32 * scale).collect();
        Tensor::new(&[self.height, self.width, self.channels], data).expect("raster size")
    }

    /// Any nonzero sample marks the pixel positive.
    pub fn to_mask(&self) -> ClassMask {
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().any(|&v| v > 0) as u8)
            .collect();
        ClassMask::new(self.height, self.width, data).expect("raster size")
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, format!("{what} out of range")))
    }
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some([b'P', d]) if (b'1'..=b'7').contains(d) => {
            return Err(Error::Unsupported(format!(
                "netpbm variant P{}; only binary P5 and P6 are read",
                *d as char
            )))
        }
        _ => return Err(Error::format(0, "not a netpbm raster (expected P5 or P6)")),
    };
    let mut hdr = Header { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval_at = hdr.pos;
    let maxval = hdr.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(2, format!("empty {width}x{height} raster")));
    }
    if maxval == 0 {
        return Err(Error::format(maxval_at as u64, "maxval is zero"));
    }
    if maxval > 255 {
        return Err(Error::Unsupported(format!("maxval {maxval}; only 8-bit rasters are read")));
    }
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(Error::format(hdr.pos as u64, "expected one whitespace byte after maxval")),
    }
    let expected = width * height * channels;
    let payload = &bytes[hdr.pos..];
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    if let Some(&bad) = payload[..expected].iter().find(|&&v| v as usize > maxval) {
        return Err(Error::format(hdr.pos as u64, format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(Raster {
        height,
        width,
        channels,
        maxval: maxval as u16,
        data: payload[..expected].to_vec(),
    })
}

fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

/// Loads a P5/P6 raster as an H×W×C tensor scaled to [0, 1].
pub fn load_raster(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(read(path.as_ref())?.to_tensor())
}

/// Loads a label raster; any nonzero pixel is a pothole.
pub fn load_label_raster(path: impl AsRef<Path>) -> Result<ClassMask> {
    Ok(read(path.as_ref())?.to_mask())
}

pub fn encode_pgm(height: usize, width: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_ppm(height: usize, width: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), height * width * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn save_pgm(path: impl AsRef<Path>, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(height, width, data)).map_err(|e| Error::io(path, e))
}
