//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and hysteresis thresholding.
//!
//! Conventions:
//! * `x` grows to the right and `y` grows downward; `Gx` is right minus left,
//!   `Gy` is bottom minus top.
//! * Blur and Sobel sample outside the image by clamping to the nearest edge pixel.
//! * Orientation `atan2(Gy, Gx)` is folded into `[0, 180)` degrees and binned to
//!   the nearest of 0/45/90/135; a value exactly halfway goes to the lower bin
//!   (157.5 maps to 135).
//! * Non-maximum suppression compares against the two neighbours along the
//!   binned gradient axis: 0 is left/right, 90 is up/down, 45 is
//!   up-left/down-right, 135 is up-right/down-left. A pixel keeps its magnitude
//!   when it is >= both. Pixels with a neighbour outside the image are zeroed.
//! * Hysteresis: magnitude >= high seeds an edge; a nonzero magnitude >= low is
//!   kept when 8-connected to a seed through other kept pixels.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{to_grayscale, GrayImage, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CannyParams {
    pub sigma: f32,
    pub low_threshold: f32,
    pub high_threshold: f32,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            low_threshold: 50.0,
            high_threshold: 100.0,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        let (lo, hi) = (self.low_threshold, self.high_threshold);
        if !(0.0 <= lo && lo < hi && hi <= 255.0) {
            return Err(Error::param(format!(
                "thresholds must satisfy 0 <= low < high <= 255, got low={lo} high={hi}"
            )));
        }
        Ok(())
    }
}

/// Single-channel real-valued image.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Field {
    pub fn from_gray(img: &GrayImage) -> Field {
        Field {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn clamped(&self, x: isize, y: isize) -> f32 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Rescales to 0..=255 by the maximum value, for display.
    pub fn to_gray_normalized(&self) -> GrayImage {
        let max = self.data.iter().cloned().fold(0.0f32, f32::max);
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let px = self.data.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
        GrayImage::new(self.width, self.height, px).expect("field dims are valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DirectionBin {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl DirectionBin {
    pub fn degrees(self) -> u32 {
        self as u32 * 45
    }

    pub fn from_gradient(gx: f32, gy: f32) -> DirectionBin {
        let mut deg = (gy as f64).atan2(gx as f64).to_degrees();
        if deg < 0.0 {
            deg += 180.0;
        }
        if deg >= 180.0 {
            deg -= 180.0;
        }
        if deg <= 22.5 {
            DirectionBin::Deg0
        } else if deg <= 67.5 {
            DirectionBin::Deg45
        } else if deg <= 112.5 {
            DirectionBin::Deg90
        } else if deg <= 157.5 {
            DirectionBin::Deg135
        } else {
            DirectionBin::Deg0
        }
    }

    /// Offsets of the two neighbours along the gradient axis.
    pub fn neighbours(self) -> [(isize, isize); 2] {
        match self {
            DirectionBin::Deg0 => [(-1, 0), (1, 0)],
            DirectionBin::Deg45 => [(-1, -1), (1, 1)],
            DirectionBin::Deg90 => [(0, -1), (0, 1)],
            DirectionBin::Deg135 => [(1, -1), (-1, 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f32>,
    pub direction: Vec<DirectionBin>,
}

/// Normalized 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f32>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be > 0, got {sigma}")));
    }
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|v| (v / total) as f32).collect())
}

pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> Result<Field> {
    gaussian_blur_field(&Field::from_gray(img), sigma)
}

/// Separable Gaussian blur with edge-clamped borders.
pub fn gaussian_blur_field(src: &Field, sigma: f32) -> Result<Field> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut horiz = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * src.clamped(x as isize + k as isize - radius, y as isize))
                .sum();
        }
    }
    let horiz = Field {
        width: w,
        height: h,
        data: horiz,
    };
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * horiz.clamped(x as isize, y as isize + k as isize - radius))
                .sum();
        }
    }
    Ok(Field {
        width: w,
        height: h,
        data: out,
    })
}

pub fn sobel_gradients(img: &Field) -> Result<GradientField> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::param(format!(
            "sobel needs at least a 3x3 image, got {w}x{h}"
        )));
    }
    let mut magnitude = Vec::with_capacity(w * h);
    let mut direction = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            magnitude.push((gx * gx + gy * gy).sqrt());
            direction.push(DirectionBin::from_gradient(gx, gy));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        direction,
    })
}

pub fn nonmax_suppression(g: &GradientField) -> Field {
    let (w, h) = (g.width as isize, g.height as isize);
    let mut out = vec![0.0f32; g.magnitude.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let m = g.magnitude[i];
            let keep = g.direction[i].neighbours().iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && m >= g.magnitude[(ny * w + nx) as usize]
            });
            if keep {
                out[i] = m;
            }
        }
    }
    Field {
        width: g.width,
        height: g.height,
        data: out,
    }
}

pub fn hysteresis(thinned: &Field, low: f32, high: f32) -> Result<GrayImage> {
    if !(0.0 <= low && low < high) {
        return Err(Error::param(format!(
            "hysteresis needs 0 <= low < high, got low={low} high={high}"
        )));
    }
    let (w, h) = (thinned.width, thinned.height);
    let mut out = vec![0u8; w * h];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thinned.data.iter().enumerate() {
        if m >= high {
            out[i] = 255;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let m = thinned.data[j];
                if out[j] == 0 && m > 0.0 && m >= low {
                    out[j] = 255;
                    queue.push_back(j);
                }
            }
        }
    }
    GrayImage::new(w, h, out)
}

pub fn canny_gray(img: &GrayImage, params: &CannyParams) -> Result<GrayImage> {
    params.validate()?;
    let blurred = gaussian_blur(img, params.sigma)?;
    let gradients = sobel_gradients(&blurred)?;
    let thinned = nonmax_suppression(&gradients);
    hysteresis(&thinned, params.low_threshold, params.high_threshold)
}

/// Full pipeline at native resolution; the result holds only 0 and 255.
pub fn canny_pipeline(img: &RgbImage, params: &CannyParams) -> Result<GrayImage> {
    canny_gray(&to_grayscale(img), params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> Field {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Field {
            width: w,
            height: h,
            data,
        }
    }

    fn gradient(w: usize, h: usize, dir: DirectionBin, f: impl Fn(usize, usize) -> f32) -> GradientField {
        let m = field(w, h, f);
        GradientField {
            width: w,
            height: h,
            magnitude: m.data,
            direction: vec![dir; w * h],
        }
    }

    #[test]
    fn params_validation() {
        assert!(CannyParams::default().validate().is_ok());
        let bad = CannyParams {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CannyParams {
            low_threshold: 100.0,
            high_threshold: 100.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blur_constant_and_kernel_sum() {
        let k = gaussian_kernel(1.4).unwrap();
        assert_eq!(k.len(), 2 * 5 + 1);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let img = GrayImage::filled(12, 9, 100).unwrap();
        let b = gaussian_blur(&img, 1.4).unwrap();
        assert!(b.data.iter().all(|&v| (v - 100.0).abs() < 1e-3));
        assert!(matches!(gaussian_blur(&img, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_blur(&img, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn blur_impulse_is_kernel_outer_product() {
        let sigma = 1.0;
        let k = gaussian_kernel(sigma).unwrap();
        let r = k.len() / 2;
        let n = 2 * r + 5;
        let mut px = vec![0u8; n * n];
        px[(n / 2) * n + n / 2] = 255;
        let img = GrayImage::new(n, n, px).unwrap();
        let b = gaussian_blur(&img, sigma).unwrap();
        for dy in 0..k.len() {
            for dx in 0..k.len() {
                let got = b.get(n / 2 - r + dx, n / 2 - r + dy);
                let want = 255.0 * k[dx] * k[dy];
                assert!((got - want).abs() < 1e-3, "({dx},{dy}) {got} vs {want}");
            }
        }
    }

    #[test]
    fn blur_preserves_mean_of_noise() {
        let mut rng = crate::rng::Rng::new(21);
        let (w, h) = (48, 48);
        let px: Vec<u8> = (0..w * h).map(|_| rng.below(256) as u8).collect();
        let img = GrayImage::new(w, h, px.clone()).unwrap();
        let b = gaussian_blur(&img, 1.4).unwrap();
        let mean_in = px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
        let mean_out = b.data.iter().map(|&v| v as f64).sum::<f64>() / b.data.len() as f64;
        assert!((mean_in - mean_out).abs() < 0.5, "{mean_in} vs {mean_out}");
    }

    #[test]
    fn sobel_constant_is_zero() {
        let f = field(5, 5, |_, _| 42.0);
        let g = sobel_gradients(&f).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
        assert!(matches!(sobel_gradients(&field(2, 5, |_, _| 0.0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn sobel_vertical_and_horizontal_steps() {
        let v = field(8, 6, |x, _| if x < 4 { 0.0 } else { 255.0 });
        let g = sobel_gradients(&v).unwrap();
        // Columns 3 and 4 straddle the step; each sees 1 + 2 + 1 = 4 times the jump.
        for y in 0..6 {
            for x in 0..8 {
                let m = g.magnitude[y * 8 + x];
                if x == 3 || x == 4 {
                    assert_eq!(m, 4.0 * 255.0);
                    assert_eq!(g.direction[y * 8 + x], DirectionBin::Deg0);
                } else {
                    assert_eq!(m, 0.0);
                }
            }
        }
        let t = field(6, 8, |_, y| if y < 4 { 0.0 } else { 255.0 });
        let gt = sobel_gradients(&t).unwrap();
        for y in 0..8 {
            for x in 0..6 {
                assert_eq!(gt.magnitude[y * 6 + x], g.magnitude[x * 8 + y]);
                if y == 3 || y == 4 {
                    assert_eq!(gt.direction[y * 6 + x], DirectionBin::Deg90);
                }
            }
        }
    }

    #[test]
    fn direction_bins_and_ties() {
        assert_eq!(DirectionBin::from_gradient(1.0, 0.0), DirectionBin::Deg0);
        assert_eq!(DirectionBin::from_gradient(-1.0, 0.0), DirectionBin::Deg0);
        assert_eq!(DirectionBin::from_gradient(1.0, 1.0), DirectionBin::Deg45);
        assert_eq!(DirectionBin::from_gradient(0.0, -3.0), DirectionBin::Deg90);
        assert_eq!(DirectionBin::from_gradient(-1.0, 1.0), DirectionBin::Deg135);
        let half = 22.5f64.to_radians();
        let (gx, gy) = (half.cos() as f32, half.sin() as f32);
        let bin = DirectionBin::from_gradient(gx, gy);
        assert!(bin == DirectionBin::Deg0 || bin == DirectionBin::Deg45);
    }

    #[test]
    fn nms_ridge_survives() {
        let g = gradient(5, 5, DirectionBin::Deg0, |x, _| if x == 2 { 10.0 } else { 0.0 });
        let t = nonmax_suppression(&g);
        for y in 0..5 {
            assert_eq!(t.get(2, y), 10.0);
            assert_eq!(t.get(1, y), 0.0);
        }
    }

    #[test]
    fn nms_ramp_keeps_only_top() {
        // Nondecreasing ramp along x peaking at column 3: brute force over the
        // 5x5 grid says only column 3 is >= both horizontal neighbours and has
        // both neighbours inside the image.
        let ramp = [0.0, 1.0, 2.0, 3.0, 3.0];
        let g = gradient(5, 5, DirectionBin::Deg0, |x, _| ramp[x]);
        let t = nonmax_suppression(&g);
        let mut expected = vec![0.0f32; 25];
        for y in 0..5 {
            for x in 1..4 {
                if ramp[x] >= ramp[x - 1] && ramp[x] >= ramp[x + 1] {
                    expected[y * 5 + x] = ramp[x];
                }
            }
        }
        assert_eq!(t.data, expected);
        assert!((0..5).all(|y| t.get(3, y) == 3.0));
    }

    #[test]
    fn nms_constant_keeps_interior() {
        let g = gradient(5, 5, DirectionBin::Deg90, |_, _| 7.0);
        let t = nonmax_suppression(&g);
        for y in 0..5 {
            for x in 0..5 {
                let want = if y == 0 || y == 4 { 0.0 } else { 7.0 };
                assert_eq!(t.get(x, y), want);
            }
        }
    }

    #[test]
    fn hysteresis_examples() {
        let lone_strong = field(5, 5, |x, y| if (x, y) == (2, 2) { 200.0 } else { 0.0 });
        let e = hysteresis(&lone_strong, 50.0, 150.0).unwrap();
        assert_eq!(e.get(2, 2), 255);
        assert_eq!(e.pixels().iter().filter(|&&v| v == 255).count(), 1);

        let lone_weak = field(5, 5, |x, y| if (x, y) == (2, 2) { 100.0 } else { 0.0 });
        let e = hysteresis(&lone_weak, 50.0, 150.0).unwrap();
        assert!(e.pixels().iter().all(|&v| v == 0));

        // Seed at (0,0); weak chain (1,1), (2,2) diagonally; isolated weak at (4,0).
        let chain = field(5, 5, |x, y| match (x, y) {
            (0, 0) => 200.0,
            (1, 1) | (2, 2) => 100.0,
            (4, 0) => 100.0,
            _ => 0.0,
        });
        let e = hysteresis(&chain, 50.0, 150.0).unwrap();
        let mut reach = [false; 25];
        reach[0] = true;
        // brute-force fixpoint over 8-neighbourhoods
        loop {
            let mut changed = false;
            for i in 0..25 {
                if reach[i] || chain.data[i] < 50.0 {
                    continue;
                }
                let (x, y) = ((i % 5) as isize, (i / 5) as isize);
                let near = (0..25).any(|j| {
                    let (a, b) = ((j % 5) as isize, (j / 5) as isize);
                    reach[j] && (a - x).abs() <= 1 && (b - y).abs() <= 1
                });
                if near {
                    reach[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for i in 0..25 {
            assert_eq!(e.pixels()[i] == 255, reach[i], "pixel {i}");
        }
        assert!(reach[6] && reach[12] && !reach[4]);

        assert!(matches!(hysteresis(&chain, 150.0, 50.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn black_image_has_no_edges() {
        let img = RgbImage::filled(20, 20, [0, 0, 0]).unwrap();
        let e = canny_pipeline(&img, &CannyParams::default()).unwrap();
        assert!(e.pixels().iter().all(|&v| v == 0));
    }
}
