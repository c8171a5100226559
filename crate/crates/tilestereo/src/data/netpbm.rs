//! Binary netpbm images: grayscale `P5` and RGB `P6` with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Next ASCII header token, skipping whitespace and `#` comment lines.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
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
        return Err(Error::Format(format!("missing {what} in header")));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format(format!("non-ASCII {what}")))
}

/// Reads `P5` into `[1, 1, h, w]` or `P6` into `[1, 3, h, w]`, mapping the
/// 8-bit payload to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let channels = match token(&bytes, &mut pos, "magic")? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported magic {other:?}"))),
    };
    let w: usize = token(&bytes, &mut pos, "width")?.parse().map_err(|_| Error::Format("bad width".into()))?;
    let h: usize = token(&bytes, &mut pos, "height")?.parse().map_err(|_| Error::Format("bad height".into()))?;
    let maxval: usize = token(&bytes, &mut pos, "maxval")?.parse().map_err(|_| Error::Format("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    pos += 1; // the single whitespace byte after maxval
    let need = w * h * channels;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(Error::Format(format!(
            "payload holds {} bytes, extents {w}x{h}x{channels} need {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut t = Tensor::zeros([1, channels, h, w]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = bytes[pos + (y * w + x) * channels + c];
                t.data_mut()[(c * h + y) * w + x] = v as f32 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Writes a `[1, 1|3, h, w]` tensor in `[0, 1]` as `P5` or `P6`.
pub fn write_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let [b, c, h, w] = img.shape();
    if b != 1 || !(c == 1 || c == 3) {
        return Err(Error::Shape(format!("netpbm wants [1, 1|3, h, w], got [{b}, {c}, {h}, {w}]")));
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.data()[(ch * h + y) * w + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
