//! Binary PGM (`P5`) grayscale images, 8 or 16 bits per sample.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("pgm: truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Format(format!("pgm: bad {what} {:?}", String::from_utf8_lossy(tok))))
}

/// Decodes a `P5` image to `(1, H, W)` with values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::Format("pgm: missing P5 magic".into()));
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval > 65535 {
        return Err(Error::Format(format!("pgm: maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = w * h * depth;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("pgm: truncated payload, need {need} bytes")))?;
    let scale = maxval as f32;
    let data = if depth == 1 {
        raster.iter().map(|&v| (v as f32 / scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / scale).min(1.0))
            .collect()
    };
    Tensor::new(&[1, h, w], data)
}

/// Encodes `(1, H, W)` or `(H, W)` values in `[0, 1]` at the given depth.
pub fn encode_pgm(image: &Tensor<f32>, sixteen_bit: bool) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(Error::shape(format!("pgm: expected (1,H,W), got {s:?}"))),
    };
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f32).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Writes an 8-bit image.
pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_pgm(image, false)?).map_err(|e| Error::io(path, e))
}

/// Truncates to the 8-bit grid, as a save/load round trip would.
pub fn quantize8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}
