//! Browser bindings: Canny stage viewer, synthetic cell generator and the
//! raw vs edge-map PNG size comparison.
//!
//! Images cross the boundary as RGBA bytes, the layout of `ImageData.data`.

use cellscan::canny::{
    gaussian_blur, hysteresis, nonmax_suppression, sobel_gradients, CannyParams, Field,
};
use cellscan::image::{encode_png, to_grayscale, GrayImage, RgbImage};
use cellscan::synth;
use wasm_bindgen::prelude::*;

/// Pipeline stages in processing order.
pub const STAGES: [&str; 5] = ["gray", "blur", "gradient", "thinned", "edges"];

fn rgb_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<RgbImage, String> {
    if rgba.len() != width * height * 4 {
        return Err(format!(
            "expected {} RGBA bytes for {width}x{height}, got {}",
            width * height * 4,
            rgba.len()
        ));
    }
    let rgb = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    RgbImage::new(width, height, rgb).map_err(|e| e.to_string())
}

fn gray_to_rgba(img: &GrayImage) -> Vec<u8> {
    img.pixels().iter().flat_map(|&v| [v, v, v, 255]).collect()
}

fn rgb_to_rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn params(sigma: f32, low: f32, high: f32) -> Result<CannyParams, String> {
    let p = CannyParams {
        sigma,
        low_threshold: low,
        high_threshold: high,
    };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

pub fn stage_rgba(
    rgba: &[u8],
    width: usize,
    height: usize,
    p: &CannyParams,
    stage: &str,
) -> Result<Vec<u8>, String> {
    let gray = to_grayscale(&rgb_from_rgba(rgba, width, height)?);
    if stage == "gray" {
        return Ok(gray_to_rgba(&gray));
    }
    let blurred = gaussian_blur(&gray, p.sigma).map_err(|e| e.to_string())?;
    if stage == "blur" {
        return Ok(gray_to_rgba(&blurred.to_gray_normalized()));
    }
    let gradients = sobel_gradients(&blurred).map_err(|e| e.to_string())?;
    if stage == "gradient" {
        let magnitude = Field {
            width,
            height,
            data: gradients.magnitude.clone(),
        };
        return Ok(gray_to_rgba(&magnitude.to_gray_normalized()));
    }
    let thinned = nonmax_suppression(&gradients);
    if stage == "thinned" {
        return Ok(gray_to_rgba(&thinned.to_gray_normalized()));
    }
    if stage == "edges" {
        let edges = hysteresis(&thinned, p.low_threshold, p.high_threshold).map_err(|e| e.to_string())?;
        return Ok(gray_to_rgba(&edges));
    }
    Err(format!("unknown stage {stage:?}, expected one of {STAGES:?}"))
}

/// One stage of the edge pipeline as a displayable RGBA image.
#[wasm_bindgen(js_name = cannyStage)]
pub fn canny_stage(
    rgba: &[u8],
    width: usize,
    height: usize,
    sigma: f32,
    low: f32,
    high: f32,
    stage: &str,
) -> Result<Vec<u8>, JsError> {
    params(sigma, low, high)
        .and_then(|p| stage_rgba(rgba, width, height, &p, stage))
        .map_err(|e| JsError::new(&e))
}

pub fn synth_cell_image(size: usize, seed: u32, infected: bool) -> Result<Vec<u8>, String> {
    synth::synth_cell(size, seed as u64, infected)
        .map(|img| rgb_to_rgba(&img))
        .map_err(|e| e.to_string())
}

/// A synthetic stained cell, square RGBA of side `size`.
#[wasm_bindgen(js_name = synthCell)]
pub fn synth_cell(size: usize, seed: u32, infected: bool) -> Result<Vec<u8>, JsError> {
    synth_cell_image(size, seed, infected).map_err(|e| JsError::new(&e))
}

/// PNG sizes of an image and of its edge map.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeReport {
    pub raw_png_bytes: usize,
    pub edge_png_bytes: usize,
    pub edge_pixels: usize,
    pub pixels: usize,
}

#[wasm_bindgen]
impl SizeReport {
    pub fn ratio(&self) -> f64 {
        self.edge_png_bytes as f64 / self.raw_png_bytes as f64
    }
}

pub fn size_report(rgba: &[u8], width: usize, height: usize, p: &CannyParams) -> Result<SizeReport, String> {
    let rgb = rgb_from_rgba(rgba, width, height)?;
    let edges = cellscan::canny::canny_pipeline(&rgb, p).map_err(|e| e.to_string())?;
    Ok(SizeReport {
        raw_png_bytes: encode_png(&rgb).len(),
        edge_png_bytes: encode_png(&edges).len(),
        edge_pixels: edges.pixels().iter().filter(|&&v| v != 0).count(),
        pixels: width * height,
    })
}

#[wasm_bindgen(js_name = compareSizes)]
pub fn compare_sizes(
    rgba: &[u8],
    width: usize,
    height: usize,
    sigma: f32,
    low: f32,
    high: f32,
) -> Result<SizeReport, JsError> {
    params(sigma, low, high)
        .and_then(|p| size_report(rgba, width, height, &p))
        .map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellscan::canny::canny_pipeline;

    fn cell(infected: bool) -> Vec<u8> {
        synth_cell_image(48, 3, infected).unwrap()
    }

    #[test]
    fn synth_cell_is_opaque_rgba() {
        let px = cell(true);
        assert_eq!(px.len(), 48 * 48 * 4);
        assert!(px.chunks_exact(4).all(|p| p[3] == 255));
        assert_ne!(px, cell(false));
        assert!(synth_cell_image(0, 1, true).is_err());
    }

    #[test]
    fn edges_stage_matches_library_pipeline() {
        let px = cell(true);
        let p = CannyParams::default();
        let got = stage_rgba(&px, 48, 48, &p, "edges").unwrap();
        let want = canny_pipeline(&rgb_from_rgba(&px, 48, 48).unwrap(), &p).unwrap();
        assert_eq!(got, gray_to_rgba(&want));
    }

    #[test]
    fn every_stage_renders_gray_rgba() {
        let px = cell(true);
        for stage in STAGES {
            let out = stage_rgba(&px, 48, 48, &CannyParams::default(), stage).unwrap();
            assert_eq!(out.len(), px.len(), "{stage}");
            assert!(out.chunks_exact(4).all(|p| p[0] == p[1] && p[1] == p[2] && p[3] == 255), "{stage}");
        }
        assert!(stage_rgba(&px, 48, 48, &CannyParams::default(), "bogus").is_err());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(rgb_from_rgba(&[0; 15], 2, 2).is_err());
        assert!(params(1.4, 100.0, 50.0).is_err());
        assert!(params(0.0, 50.0, 100.0).is_err());
    }

    #[test]
    fn size_report_counts_edges() {
        let px = cell(true);
        let r = size_report(&px, 48, 48, &CannyParams::default()).unwrap();
        assert_eq!(r.pixels, 48 * 48);
        assert!(r.edge_pixels > 0 && r.edge_pixels < r.pixels);
        assert!(r.ratio() > 0.0 && r.ratio() < 1.0);
    }
}
