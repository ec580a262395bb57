//! Synthetic images: the disks-vs-blanks toy corpus and demo cell images.

use std::path::Path;

use crate::dataset::{INFECTED_DIR, UNINFECTED_DIR};
use crate::error::{Error, Result};
use crate::image::{encode_png, RgbImage};
use crate::rng::Rng;

const FIELD: [u8; 3] = [226, 204, 214];
const DISK: [u8; 3] = [52, 24, 78];
const NOISE: u64 = 6;

fn jitter(rng: &mut Rng, base: [u8; 3]) -> [u8; 3] {
    base.map(|c| {
        let d = rng.below(2 * NOISE + 1) as i32 - NOISE as i32;
        (c as i32 + d).clamp(0, 255) as u8
    })
}

/// Light field with mild per-pixel noise.
pub fn blank_field(size: usize, rng: &mut Rng) -> Result<RgbImage> {
    let mut img = RgbImage::filled(size, size, FIELD)?;
    for y in 0..size {
        for x in 0..size {
            let px = jitter(rng, FIELD);
            img.put(x, y, px);
        }
    }
    Ok(img)
}

/// Noisy light field with one solid dark disk at a random position and radius.
pub fn disk_image(size: usize, rng: &mut Rng) -> Result<RgbImage> {
    if size < 16 {
        return Err(Error::param(format!("disk images need size >= 16, got {size}")));
    }
    let mut img = blank_field(size, rng)?;
    let s = size as f64;
    let radius = s * rng.uniform(0.26, 0.36);
    let cx = rng.uniform(radius + 1.0, s - radius - 1.0);
    let cy = rng.uniform(radius + 1.0, s - radius - 1.0);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= radius * radius {
                let px = jitter(rng, DISK);
                img.put(x, y, px);
            }
        }
    }
    Ok(img)
}

/// Black field with a centered white square covering half the side length.
pub fn white_square(size: usize) -> Result<RgbImage> {
    let mut img = RgbImage::filled(size, size, [0, 0, 0])?;
    let (lo, hi) = (size / 4, size - size / 4);
    for y in lo..hi {
        for x in lo..hi {
            img.put(x, y, [255, 255, 255]);
        }
    }
    Ok(img)
}

/// Stained-cell lookalike: a pink cell body on a pale background, plus a dark
/// ring-form inclusion when `infected`.
pub fn synth_cell(size: usize, seed: u64, infected: bool) -> Result<RgbImage> {
    let mut rng = Rng::new(seed);
    let mut img = RgbImage::filled(size, size, [0, 0, 0])?;
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + rng.uniform(-0.04, 0.04) * s, s / 2.0 + rng.uniform(-0.04, 0.04) * s);
    let (rx, ry) = (s * rng.uniform(0.36, 0.44), s * rng.uniform(0.36, 0.44));
    let inclusion = (
        cx + rng.uniform(-0.15, 0.15) * s,
        cy + rng.uniform(-0.15, 0.15) * s,
        s * rng.uniform(0.06, 0.1),
    );
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let e = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
            if e > 1.0 {
                continue;
            }
            let shade = (1.0 - 0.25 * e) * rng.uniform(0.94, 1.0);
            let mut rgb = [222.0 * shade, 150.0 * shade, 170.0 * shade];
            if infected {
                let d = ((px - inclusion.0).powi(2) + (py - inclusion.1).powi(2)).sqrt();
                if d <= inclusion.2 {
                    rgb = [96.0, 40.0, 120.0];
                }
            }
            img.put(x, y, rgb.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(img)
}

/// Write `per_class` disk images under `Parasitized/` and `per_class` blank
/// fields under `Uninfected/`, all `size`x`size` RGB PNGs.
pub fn write_toy_dataset(root: impl AsRef<Path>, per_class: usize, size: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    let base = Rng::new(seed);
    for (stream, dir, make) in [
        (0u64, INFECTED_DIR, disk_image as fn(usize, &mut Rng) -> Result<RgbImage>),
        (1, UNINFECTED_DIR, blank_field),
    ] {
        let class_dir = root.join(dir);
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut rng = base.fork(stream);
        for i in 0..per_class {
            let path = class_dir.join(format!("{:04}.png", i));
            let img = make(size, &mut rng)?;
            std::fs::write(&path, encode_png(&img)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
