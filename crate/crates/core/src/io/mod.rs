//! Dataset readers and writers.
//!
//! Native layout, one directory per sample:
//!
//! ```text
//! <root>/<id>/img_000.png …   8-bit RGB observations
//! <root>/<id>/lights.txt      one "lx ly lz" line per image
//! <root>/<id>/normal.png      16-bit RGB, v = round((n + 1) / 2 · 65535)
//! <root>/<id>/mask.png        8-bit gray, nonzero = foreground
//! ```
//!
//! DiLiGenT-style directories are read by [`load_diligent_dir`].

mod diligent;

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::{normalize, norm, Image, LightSet, NormalMap, Sample, Vec3, LIGHT_NORM_TOL};
use crate::render::quantize_u8;

pub use diligent::{load_diligent_dir, write_diligent_dir};

pub const LIGHTS_FILE: &str = "lights.txt";
pub const NORMAL_FILE: &str = "normal.png";
pub const MASK_FILE: &str = "mask.png";

pub fn image_file_name(index: usize) -> String {
    format!("img_{index:03}.png")
}

fn png_bytes<P, C>(buf: ImageBuffer<P, C>) -> Vec<u8>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("bad PNG: {e}")))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// 8-bit RGB PNG after `round(clamp(v, 0, 1) · 255)`.
pub fn encode_image_png(img: &Image) -> Vec<u8> {
    let p = img.plane_len();
    let buf = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        Rgb([
            quantize_u8(img.data[i]),
            quantize_u8(img.data[p + i]),
            quantize_u8(img.data[2 * p + i]),
        ])
    });
    png_bytes(buf)
}

/// Decodes an 8- or 16-bit PNG (gray or color) to [0, 1] floats.
pub fn decode_image_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let dynamic = decode_png(bytes, path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let mut img = Image::zeros(h, w);
    let p = h * w;
    let sixteen = matches!(
        dynamic,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    if sixteen {
        for (i, px) in dynamic.to_rgb16().pixels().enumerate() {
            for c in 0..3 {
                img.data[c * p + i] = px[c] as f32 / 65535.0;
            }
        }
    } else {
        for (i, px) in dynamic.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                img.data[c * p + i] = px[c] as f32 / 255.0;
            }
        }
    }
    Ok(img)
}

pub fn encode_mask_png(mask: &[bool], height: usize, width: usize) -> Vec<u8> {
    let buf = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] { 255u8 } else { 0 }])
    });
    png_bytes(buf)
}

/// Any nonzero channel counts as foreground.
pub fn decode_mask_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let dynamic = decode_png(bytes, path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let mask = dynamic.to_rgb16().pixels().map(|px| px.0.iter().any(|&v| v > 0)).collect();
    Ok((h, w, mask))
}

fn encode_component(v: f32) -> u16 {
    ((v.clamp(-1.0, 1.0) as f64 + 1.0) / 2.0 * 65535.0).round() as u16
}

/// 16-bit RGB PNG; background pixels are (0, 0, 0).
pub fn encode_normal_png(normals: &NormalMap) -> Vec<u8> {
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_fn(normals.width as u32, normals.height as u32, |x, y| {
            let i = y as usize * normals.width + x as usize;
            if normals.mask[i] {
                Rgb(normals.normals[i].map(encode_component))
            } else {
                Rgb([0, 0, 0])
            }
        });
    png_bytes(buf)
}

/// Inverts [`encode_normal_png`] and renormalizes. Pixels encoded as
/// (0, 0, 0) are background.
pub fn decode_normal_png(bytes: &[u8], path: &Path) -> Result<NormalMap> {
    let dynamic = decode_png(bytes, path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let rgb = dynamic.to_rgb16();
    let mut normals = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for px in rgb.pixels() {
        if px.0 == [0, 0, 0] {
            normals.push([0.0; 3]);
            mask.push(false);
        } else {
            let n = px.0.map(|v| (2.0 * v as f64 / 65535.0 - 1.0) as f32);
            normals.push(normalize(n));
            mask.push(true);
        }
    }
    NormalMap::new(h, w, normals, mask)
}

pub fn format_lights(directions: &[Vec3]) -> String {
    directions
        .iter()
        .map(|d| format!("{:.6} {:.6} {:.6}\n", d[0], d[1], d[2]))
        .collect()
}

/// Parses whitespace-separated rows of exactly `cols` numbers. Blank lines
/// are skipped; CRLF is accepted.
pub(crate) fn parse_rows(text: &str, cols: &[usize], path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if !cols.contains(&values.len()) {
            return Err(Error::format(
                path,
                format!("line {}: expected {cols:?} values, got {}", lineno + 1, values.len()),
            ));
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Unit-normalizes parsed light rows, warning when a row was noticeably off.
pub(crate) fn lights_from_rows(rows: &[Vec<f32>], path: &Path) -> Result<Vec<Vec3>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let d = [r[0], r[1], r[2]];
            let n = norm(d);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::format(path, format!("light {i} has zero length")));
            }
            if (n - 1.0).abs() > LIGHT_NORM_TOL {
                log::warn!("{}: light {i} has norm {n}; normalizing", path.display());
            }
            Ok(normalize(d))
        })
        .collect()
}

/// Writes `sample` under `root/<id>`; returns the sample directory.
pub fn write_native_sample(sample: &Sample, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&sample.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, img) in sample.images.iter().enumerate() {
        write_bytes(&dir.join(image_file_name(i)), &encode_image_png(img))?;
    }
    write_bytes(&dir.join(LIGHTS_FILE), format_lights(&sample.lights.directions).as_bytes())?;
    write_bytes(
        &dir.join(MASK_FILE),
        &encode_mask_png(&sample.mask, sample.height(), sample.width()),
    )?;
    if let Some(n) = &sample.normals {
        write_bytes(&dir.join(NORMAL_FILE), &encode_normal_png(n))?;
    }
    Ok(dir)
}

/// Image files `img_NNN.png` in `dir`, sorted by index.
fn native_image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("img_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.push((idx, entry.path()));
        }
    }
    found.sort();
    for (expected, (idx, _)) in found.iter().enumerate() {
        if *idx != expected {
            return Err(Error::format(dir, format!("missing {}", image_file_name(expected))));
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn sample_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Reads one native sample directory.
pub fn load_native_sample(dir: &Path) -> Result<Sample> {
    let id = sample_id(dir);
    let paths = native_image_paths(dir)?;
    let lights_path = dir.join(LIGHTS_FILE);
    let rows = parse_rows(&read_text(&lights_path)?, &[3], &lights_path)?;
    if rows.len() != paths.len() {
        return Err(Error::format(
            &lights_path,
            format!("{} lights for {} images", rows.len(), paths.len()),
        ));
    }
    let lights = LightSet::new(lights_from_rows(&rows, &lights_path)?)
        .map_err(|e| Error::format(&lights_path, e.to_string()))?;
    let images = paths
        .iter()
        .map(|p| decode_image_png(&read_bytes(p)?, p))
        .collect::<Result<Vec<_>>>()?;
    let mask_path = dir.join(MASK_FILE);
    let (mh, mw, mask) = decode_mask_png(&read_bytes(&mask_path)?, &mask_path)?;
    let normal_path = dir.join(NORMAL_FILE);
    let normals = if normal_path.exists() {
        let mut n = decode_normal_png(&read_bytes(&normal_path)?, &normal_path)?;
        if n.height == mh && n.width == mw {
            // The mask file is authoritative for the foreground.
            for (i, m) in mask.iter().enumerate() {
                if !m {
                    n.normals[i] = [0.0; 3];
                }
            }
            n.mask = mask.clone();
        }
        Some(n)
    } else {
        None
    };
    Sample::new(id, images, lights, mask, normals).map_err(|e| Error::format(dir, e.to_string()))
}

/// Sample directories directly under `root`, sorted by name. A directory
/// counts if it holds a `lights.txt`.
pub fn list_native_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(LIGHTS_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every sample under `root`, in name order.
pub fn load_native_dataset(root: &Path) -> Result<Vec<Sample>> {
    list_native_samples(root)?
        .iter()
        .map(|d| {
            load_native_sample(d).map_err(|e| Error::Sample {
                sample: sample_id(d),
                source: Box::new(e),
            })
        })
        .collect()
}
