use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::RenderOutput;

pub const CONTRIB_MAGIC: [u8; 4] = *b"GCTB";
const CONTRIB_VERSION: u32 = 1;

/// Writes per-Gaussian contribution maxima as a 16-byte header
/// (`magic`, `u32` version, `u64` count) followed by little-endian f32s.
pub fn write_contributions<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    w.write_all(&CONTRIB_MAGIC)?;
    w.write_all(&CONTRIB_VERSION.to_le_bytes())?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_contributions<R: Read>(r: &mut R) -> Result<Vec<f32>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("contributions", "truncated header"))?;
    if header[..4] != CONTRIB_MAGIC {
        return Err(Error::format("contributions", "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CONTRIB_VERSION {
        return Err(Error::format(
            "contributions",
            format!("unsupported version {version}"),
        ));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 4 * count {
        return Err(Error::format(
            "contributions",
            format!("expected {} body bytes, found {}", 4 * count, body.len()),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Writes the rendered image as an 8-bit sRGB-agnostic PNG.
pub fn save_png(out: &RenderOutput, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, out.width, out.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("png", e.to_string()))?;
    let bytes: Vec<u8> = out
        .image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format("png", e.to_string()))?;
    Ok(())
}
