//! Binary PPM (P6) and PGM (P5) encoding and decoding, 8-bit only.
//!
//! Images travel as `csn_core` tensors: PPM maps to `3 x H x W` in [0, 1]
//! with byte value `round(255 * v)`, PGM to a raw `u8` grid.

use std::fs;
use std::path::Path;

use csn_core::tensor::Tensor;
use csn_core::math;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("only maxval 255 is supported, got {0}")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("tensor shape {0:?} is not an image")]
    NotAnImage(Vec<usize>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn quantize(v: f64) -> u8 {
    math::round(255.0 * v).clamp(0.0, 255.0) as u8
}

/// Encode a `3 x H x W` tensor with values in [0, 1] as binary PPM.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>, PnmError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(PnmError::NotAnImage(shape.to_vec()));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push(quantize(image.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Encode an 8-bit grayscale grid as binary PGM.
pub fn encode_pgm(pixels: &[u8], w: usize, h: usize) -> Result<Vec<u8>, PnmError> {
    if pixels.len() != w * h || w == 0 || h == 0 {
        return Err(PnmError::BadHeader(format!(
            "{} pixels for a {w}x{h} grid",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a [u8], PnmError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::BadHeader("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<u32, PnmError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::BadHeader(format!("expected a number, got {tok:?}")))
    }
}

fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &'static str,
) -> Result<(usize, usize, usize), PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::BadMagic { expected: magic });
    }
    let mut reader = HeaderReader { bytes, pos: 2 };
    let w = reader.number()? as usize;
    let h = reader.number()? as usize;
    let maxval = reader.number()?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if w == 0 || h == 0 {
        return Err(PnmError::BadHeader(format!("degenerate size {w}x{h}")));
    }
    // exactly one whitespace byte separates header and pixel data
    Ok((w, h, reader.pos + 1))
}

/// Decode binary PPM into a `3 x H x W` tensor with values in [0, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PnmError> {
    let (w, h, data_start) = parse_header(bytes, "P6")?;
    let expected = 3 * w * h;
    let pixels = bytes
        .get(data_start..data_start + expected)
        .ok_or(PnmError::Truncated {
            expected,
            found: bytes.len().saturating_sub(data_start),
        })?;
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            data[ch * plane + p] = pixels[3 * p + ch] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(vec![3, h, w], data).expect("shape consistent"))
}

/// Decode binary PGM into raw bytes plus dimensions.
pub fn decode_pgm(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize), PnmError> {
    let (w, h, data_start) = parse_header(bytes, "P5")?;
    let expected = w * h;
    let pixels = bytes
        .get(data_start..data_start + expected)
        .ok_or(PnmError::Truncated {
            expected,
            found: bytes.len().saturating_sub(data_start),
        })?;
    Ok((pixels.to_vec(), w, h))
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<(), PnmError> {
    Ok(fs::write(path, encode_ppm(image)?)?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor, PnmError> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_pgm(pixels: &[u8], w: usize, h: usize, path: &Path) -> Result<(), PnmError> {
    Ok(fs::write(path, encode_pgm(pixels, w, h)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_quantized_values() {
        let data: Vec<f64> = (0..2 * 2 * 3).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = Tensor::from_vec(vec![3, 2, 2], data).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        let back = decode_ppm(&bytes).unwrap();
        assert!(img.bits_eq(&back));
    }

    #[test]
    fn quantization_rounds() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128); // round(127.5) = 128 away from zero
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\xaa\xbb";
        let (pixels, w, h) = decode_pgm(bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(pixels, vec![0xaa, 0xbb]);
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\x00"),
            Err(PnmError::BadMagic { expected: "P6" })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n65535\n"),
            Err(PnmError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\nxx"),
            Err(PnmError::Truncated { expected: 12, .. })
        ));
    }
}
