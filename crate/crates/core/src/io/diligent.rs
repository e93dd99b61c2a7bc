use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{LightSet, Sample, Vec3};

use super::{
    decode_image_png, decode_mask_png, decode_normal_png, encode_image_png, encode_mask_png,
    encode_normal_png, format_lights, lights_from_rows, parse_rows, read_bytes, read_text,
    sample_id, write_bytes, MASK_FILE, NORMAL_FILE,
};

pub const FILENAMES_FILE: &str = "filenames.txt";
pub const DIRECTIONS_FILE: &str = "light_directions.txt";
pub const INTENSITIES_FILE: &str = "light_intensities.txt";

/// Loads a DiLiGenT-style object directory. Each image is divided
/// per channel by its light intensity; scalar intensities broadcast.
/// `normal.png`, when present, must use the 16-bit native encoding.
pub fn load_diligent_dir(dir: &Path) -> Result<Sample> {
    let required = [FILENAMES_FILE, DIRECTIONS_FILE, INTENSITIES_FILE, MASK_FILE];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(dir, format!("missing {}", missing.join(", "))));
    }

    let names_path = dir.join(FILENAMES_FILE);
    let names: Vec<String> = read_text(&names_path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let dir_path = dir.join(DIRECTIONS_FILE);
    let dir_rows = parse_rows(&read_text(&dir_path)?, &[3], &dir_path)?;
    let int_path = dir.join(INTENSITIES_FILE);
    let int_rows = parse_rows(&read_text(&int_path)?, &[1, 3], &int_path)?;
    if dir_rows.len() != names.len() || int_rows.len() != names.len() {
        return Err(Error::format(
            dir,
            format!(
                "{} images, {} light directions, {} intensities",
                names.len(),
                dir_rows.len(),
                int_rows.len()
            ),
        ));
    }
    let intensities: Vec<Vec3> = int_rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = if r.len() == 1 { [r[0]; 3] } else { [r[0], r[1], r[2]] };
            if v.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::format(&int_path, format!("intensity {i} is not positive: {v:?}")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let lights = LightSet::new(lights_from_rows(&dir_rows, &dir_path)?)
        .map_err(|e| Error::format(&dir_path, e.to_string()))?
        .with_intensities(intensities.clone())?;

    let images = names
        .iter()
        .zip(&intensities)
        .map(|(name, e)| {
            let path = dir.join(name);
            let mut img = decode_image_png(&read_bytes(&path)?, &path)?;
            let p = img.plane_len();
            for c in 0..3 {
                for v in &mut img.data[c * p..(c + 1) * p] {
                    *v /= e[c];
                }
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;

    let mask_path = dir.join(MASK_FILE);
    let (_, _, mask) = decode_mask_png(&read_bytes(&mask_path)?, &mask_path)?;
    let normal_path = dir.join(NORMAL_FILE);
    let normals = if normal_path.is_file() {
        let mut n = decode_normal_png(&read_bytes(&normal_path)?, &normal_path)?;
        if n.mask.len() == mask.len() {
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
    Sample::new(sample_id(dir), images, lights, mask, normals)
        .map_err(|e| Error::format(dir, e.to_string()))
}

/// Writes `sample` under `root/<id>` in the DiLiGenT layout, with unit
/// intensities unless the sample carries its own. Images are stored as
/// given, so they should already include the intensity factor.
pub fn write_diligent_dir(sample: &Sample, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&sample.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut names = String::new();
    for (i, img) in sample.images.iter().enumerate() {
        let name = format!("{:03}.png", i + 1);
        write_bytes(&dir.join(&name), &encode_image_png(img))?;
        names.push_str(&name);
        names.push('\n');
    }
    write_bytes(&dir.join(FILENAMES_FILE), names.as_bytes())?;
    write_bytes(
        &dir.join(DIRECTIONS_FILE),
        format_lights(&sample.lights.directions).as_bytes(),
    )?;
    let ones = vec![[1.0f32; 3]; sample.len()];
    let intensities = sample.lights.intensities.as_deref().unwrap_or(&ones);
    write_bytes(&dir.join(INTENSITIES_FILE), format_lights(intensities).as_bytes())?;
    write_bytes(
        &dir.join(MASK_FILE),
        &encode_mask_png(&sample.mask, sample.height(), sample.width()),
    )?;
    if let Some(n) = &sample.normals {
        write_bytes(&dir.join(NORMAL_FILE), &encode_normal_png(n))?;
    }
    Ok(dir)
}
