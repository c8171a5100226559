//! Single-channel PFM disparity maps.
//!
//! Layout: the ASCII header `Pf`, the extents `width height`, and a scale
//! factor whose sign encodes the payload's endianness (negative means
//! little-endian), each terminated by a single whitespace byte, followed by
//! `width * height` raw 32-bit floats stored bottom row first.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pulls the next whitespace-delimited ASCII token out of `bytes`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format(format!("missing {what} in header")));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format(format!("non-ASCII {what}")))
}

/// Reads a `Pf` map into a `[1, 1, h, w]` tensor, top row first, along with
/// the file's scale factor (sign already consumed as endianness).
pub fn read_pfm(path: &Path) -> Result<(Tensor<f32>, f32)> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let magic = token(&bytes, &mut pos, "magic")?;
    if magic != "Pf" {
        return Err(Error::Format(format!("expected single-channel magic Pf, got {magic:?}")));
    }
    let w: usize = token(&bytes, &mut pos, "width")?.parse().map_err(|_| Error::Format("bad width".into()))?;
    let h: usize = token(&bytes, &mut pos, "height")?.parse().map_err(|_| Error::Format("bad height".into()))?;
    let scale: f32 = token(&bytes, &mut pos, "scale")?.parse().map_err(|_| Error::Format("bad scale".into()))?;
    if scale == 0.0 {
        return Err(Error::Format("scale must be nonzero".into()));
    }
    pos += 1; // the single whitespace byte after the scale token
    let need = w * h * 4;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(Error::Format(format!(
            "payload holds {} bytes, extents {w}x{h} need {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let little = scale < 0.0;
    let mut t = Tensor::zeros([1, 1, h, w]);
    for y in 0..h {
        let src_row = h - 1 - y;
        for x in 0..w {
            let o = pos + (src_row * w + x) * 4;
            let raw: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
            t.data_mut()[y * w + x] = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    Ok((t, scale.abs()))
}

/// Writes a `[1, 1, h, w]` map as little-endian `Pf` with scale -1.
pub fn write_pfm(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let [b, c, h, w] = map.shape();
    if b != 1 || c != 1 {
        return Err(Error::Shape(format!("pfm wants a [1, 1, h, w] map, got [{b}, {c}, {h}, {w}]")));
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&map.data()[y * w + x].to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}
