//! 8-bit raster images, PNG codec, luma conversion and bilinear resampling.

use std::io::Cursor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Row-major interleaved 8-bit raster with a fixed channel count.
pub trait Raster: Sized {
    const CHANNELS: usize;

    fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self>;
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[u8];
}

fn check_dims(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height * channels != len {
        return Err(Error::param(format!(
            "{width}x{height}x{channels} image needs {} bytes, got {len}",
            width * height * channels
        )));
    }
    Ok(())
}

macro_rules! raster_impl {
    ($ty:ident, $channels:expr) => {
        impl Raster for $ty {
            const CHANNELS: usize = $channels;

            fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
                check_dims(width, height, $channels, pixels.len())?;
                Ok($ty {
                    width,
                    height,
                    pixels,
                })
            }

            fn width(&self) -> usize {
                self.width
            }

            fn height(&self) -> usize {
                self.height
            }

            fn pixels(&self) -> &[u8] {
                &self.pixels
            }
        }

        impl $ty {
            pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
                <Self as Raster>::from_raw(width, height, pixels)
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn pixels(&self) -> &[u8] {
                &self.pixels
            }

            pub fn into_pixels(self) -> Vec<u8> {
                self.pixels
            }
        }
    };
}

raster_impl!(RgbImage, 3);
raster_impl!(GrayImage, 1);

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// A decoded PNG in its natural channel layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodedImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl DecodedImage {
    pub fn into_rgb(self) -> RgbImage {
        match self {
            DecodedImage::Rgb(img) => img,
            DecodedImage::Gray(g) => {
                let pixels = g.pixels.iter().flat_map(|&v| [v, v, v]).collect();
                RgbImage {
                    width: g.width,
                    height: g.height,
                    pixels,
                }
            }
        }
    }

    pub fn into_gray(self) -> GrayImage {
        match self {
            DecodedImage::Gray(g) => g,
            DecodedImage::Rgb(img) => to_grayscale(&img),
        }
    }
}

enum RawDecodeError {
    Png(png::DecodingError),
    Unsupported(String),
}

impl From<png::DecodingError> for RawDecodeError {
    fn from(e: png::DecodingError) -> Self {
        RawDecodeError::Png(e)
    }
}

fn read_frame(cursor: &mut Cursor<&[u8]>) -> Result<(png::OutputInfo, Vec<u8>), RawDecodeError> {
    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(RawDecodeError::Unsupported(
            "16-bit PNG images are not supported".into(),
        ));
    }
    let buf_len = reader
        .output_buffer_size()
        .ok_or_else(|| RawDecodeError::Unsupported("PNG image too large".into()))?;
    let mut buf = vec![0u8; buf_len];
    let frame = reader.next_frame(&mut buf)?;
    Ok((frame, buf))
}

/// Decode an 8-bit PNG, keeping grayscale images single-channel.
///
/// Palette and low-bit-depth images are expanded to 8 bits; alpha channels are
/// dropped. 16-bit images are rejected.
pub fn decode_png_any(bytes: &[u8]) -> Result<DecodedImage> {
    let mut cursor = Cursor::new(bytes);
    let (frame, buf) = match read_frame(&mut cursor) {
        Ok(f) => f,
        Err(RawDecodeError::Unsupported(msg)) => return Err(Error::UnsupportedFormat(msg)),
        Err(RawDecodeError::Png(e)) => {
            return Err(Error::Decode {
                offset: cursor.position() as usize,
                message: e.to_string(),
            })
        }
    };
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "bit depth {:?} after expansion",
            frame.bit_depth
        )));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    let row = |y: usize| &buf[y * stride..y * stride + stride];
    use png::ColorType::*;
    let img = match frame.color_type {
        Grayscale => {
            let pixels = (0..h).flat_map(|y| row(y)[..w].to_vec()).collect();
            DecodedImage::Gray(GrayImage::new(w, h, pixels)?)
        }
        GrayscaleAlpha => {
            let pixels = (0..h)
                .flat_map(|y| row(y).chunks_exact(2).map(|p| p[0]).collect::<Vec<_>>())
                .collect();
            DecodedImage::Gray(GrayImage::new(w, h, pixels)?)
        }
        Rgb => {
            let pixels = (0..h).flat_map(|y| row(y)[..w * 3].to_vec()).collect();
            DecodedImage::Rgb(RgbImage::new(w, h, pixels)?)
        }
        Rgba => {
            let pixels = (0..h)
                .flat_map(|y| {
                    row(y)
                        .chunks_exact(4)
                        .flat_map(|p| [p[0], p[1], p[2]])
                        .collect::<Vec<_>>()
                })
                .collect();
            DecodedImage::Rgb(RgbImage::new(w, h, pixels)?)
        }
        Indexed => {
            return Err(Error::UnsupportedFormat(
                "palette image was not expanded".into(),
            ))
        }
    };
    Ok(img)
}

/// Decode an 8-bit PNG to RGB; grayscale images are replicated across channels.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    decode_png_any(bytes).map(DecodedImage::into_rgb)
}

fn encode_raw(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer
            .write_image_data(pixels)
            .expect("in-memory PNG data matches dimensions");
    }
    out
}

pub trait PngEncode {
    fn encode_png(&self) -> Vec<u8>;
}

impl PngEncode for RgbImage {
    fn encode_png(&self) -> Vec<u8> {
        encode_raw(self.width, self.height, png::ColorType::Rgb, &self.pixels)
    }
}

impl PngEncode for GrayImage {
    fn encode_png(&self) -> Vec<u8> {
        encode_raw(self.width, self.height, png::ColorType::Grayscale, &self.pixels)
    }
}

pub fn encode_png(img: &impl PngEncode) -> Vec<u8> {
    img.encode_png()
}

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)`, computed in exact integer arithmetic.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Sample positions and weights for one output axis: source coordinate is
/// `(i + 0.5) * in / out - 0.5`, clamped to the valid pixel range.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge-clamped sampling.
pub fn resize_bilinear<I: Raster>(img: &I, out_w: usize, out_h: usize) -> Result<I> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::param(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    let (w, h, c) = (img.width(), img.height(), I::CHANNELS);
    if (w, h) == (out_w, out_h) {
        return I::from_raw(w, h, img.pixels().to_vec());
    }
    let src = img.pixels();
    let xs = axis_taps(w, out_w);
    let ys = axis_taps(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |x: usize, y: usize| src[(y * w + x) * c + ch] as f32;
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                let v = top + (bottom - top) * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    I::from_raw(out_w, out_h, out)
}
