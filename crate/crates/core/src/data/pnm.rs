//! Minimal binary PPM (P6) and PGM (P5) support, 8-bit samples only.

use std::fs;
use std::path::Path;

use super::{DataError, LesionMask, RasterImage};

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, DataError> {
    let bad = |m: &str| DataError::InvalidImage(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad("wrong magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage, DataError> {
    let h = parse_header(bytes, b"P6")?;
    let n = h.width * h.height;
    let data = bytes
        .get(h.data_start..h.data_start + 3 * n)
        .ok_or_else(|| DataError::InvalidImage("truncated pixel data".into()))?;
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    RasterImage::new(h.width, h.height, pixels)
}

/// Any nonzero sample marks a lesion pixel.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<LesionMask, DataError> {
    let h = parse_header(bytes, b"P5")?;
    let n = h.width * h.height;
    let data = bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| DataError::InvalidImage("truncated pixel data".into()))?;
    LesionMask::new(h.width, h.height, data.iter().map(|&v| v != 0).collect())
}

pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().flatten());
    out
}

pub fn encode_pgm_mask(mask: &LesionMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.flags.iter().map(|&f| if f { 255u8 } else { 0 }));
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RasterImage, DataError> {
    decode_ppm(&fs::read(path)?)
}

pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<LesionMask, DataError> {
    decode_pgm_mask(&fs::read(path)?)
}
