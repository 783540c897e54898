//! PFM and PNG codecs and atomic file writes.
//!
//! PFM files are written little-endian (scale `-1.0`) with rows stored
//! bottom-up. PNGs are 8-bit RGB; values in `[0, 1]` map linearly to code
//! values `0..=255`.

use std::fs;
use std::io::Write;
use std::path::Path;

use photogeo_core::geometry::NormalMap;
use photogeo_core::linalg::Vec3;
use photogeo_core::{DepthMap, Grid, Image, Mask};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Missing(path.to_path_buf())),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// A decoded PFM: rows top-down, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode_pfm(pfm: &Pfm) -> Vec<u8> {
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row = pfm.width * pfm.channels;
    out.reserve(4 * pfm.data.len());
    for i in (0..pfm.height).rev() {
        for v in &pfm.data[i * row..(i + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<Pfm, String> {
    // Header: three whitespace-separated tokens after the magic, then exactly
    // one whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "PFM header is not ASCII")?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(format!("bad PFM magic {m:?}")),
    };
    let parse = |t: &str| t.parse::<usize>().map_err(|_| format!("bad PFM size {t:?}"));
    let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
    let scale: f32 = tokens[3].parse().map_err(|_| format!("bad PFM scale {:?}", tokens[3]))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("PFM scale must be non-zero".into());
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != 4 * count {
        return Err(format!("PFM raster has {} bytes, expected {}", raster.len(), 4 * count));
    }
    let row = width * channels;
    let mut data = vec![0f32; count];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (k / row, k % row);
        data[(height - 1 - r) * row + c] = v;
    }
    Ok(Pfm { width, height, channels, data })
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    decode_pfm(&read_file(path)?).map_err(|m| Error::decode(path, m))
}

pub fn write_depth(path: &Path, d: &DepthMap) -> Result<()> {
    let data = d.values.as_slice().iter().map(|&v| v as f32).collect();
    write_atomic(path, &encode_pfm(&Pfm { width: d.width(), height: d.height(), channels: 1, data }))
}

/// Reads a single-channel PFM as depth. Values need only be positive.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let p = read_pfm(path)?;
    if p.channels != 1 {
        return Err(Error::decode(path, "depth PFM must have one channel"));
    }
    let g = Grid::from_vec(p.width, p.height, p.data.iter().map(|&v| v as f64).collect())?;
    DepthMap::new(g).map_err(|e| Error::decode(path, e))
}

pub fn write_normals(path: &Path, n: &NormalMap) -> Result<()> {
    let data = n.as_slice().iter().flat_map(|v| v.0.map(|c| c as f32)).collect();
    write_atomic(path, &encode_pfm(&Pfm { width: n.width(), height: n.height(), channels: 3, data }))
}

pub fn read_normals(path: &Path) -> Result<NormalMap> {
    let p = read_pfm(path)?;
    if p.channels != 3 {
        return Err(Error::decode(path, "normal PFM must have three channels"));
    }
    let v = p.data.chunks_exact(3).map(|c| Vec3([c[0] as f64, c[1] as f64, c[2] as f64])).collect();
    Ok(Grid::from_vec(p.width, p.height, v)?)
}

/// Lossless float copy of an image.
pub fn write_image_pfm(path: &Path, img: &Image) -> Result<()> {
    let data = img.as_flat().iter().map(|&v| v as f32).collect();
    write_atomic(path, &encode_pfm(&Pfm { width: img.width(), height: img.height(), channels: 3, data }))
}

pub fn read_image_pfm(path: &Path) -> Result<Image> {
    let p = read_pfm(path)?;
    if p.channels != 3 {
        return Err(Error::decode(path, "image PFM must have three channels"));
    }
    let v = p.data.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    Ok(Grid::from_vec(p.width, p.height, v)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: image::ExtendedColorType, raw: &[u8]) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| Error::Config(format!("PNG encoding failed: {e}")))?;
    Ok(out)
}

pub fn encode_image_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.as_flat().iter().map(|&v| quantize(v)).collect();
    encode_png(img.width(), img.height(), image::ExtendedColorType::Rgb8, &raw)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_image_png(img)?)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::decode(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Ok(Grid::from_vec(w, h, px)?)
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let raw: Vec<u8> = m.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_atomic(path, &encode_png(m.width(), m.height(), image::ExtendedColorType::L8, &raw)?)
}

/// Any PNG; a pixel is inside when its luma exceeds half range.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::decode(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Grid::from_vec(w, h, img.pixels().map(|p| p.0[0] > 127).collect())?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}
