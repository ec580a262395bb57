//! 3x3 convolution, stride 1, zero "same" padding, via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, MatRef, Real, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
/// Output-channel rows per task when accumulating weight gradients.
const WGRAD_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_ch, in_ch, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    input_shape: [usize; 4],
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        let weight = Tensor::glorot_uniform(
            rng,
            &[out_ch, in_ch, KERNEL, KERNEL],
            in_ch * TAPS,
            out_ch * TAPS,
        )?;
        let bias = Tensor::zeros(&[out_ch])?;
        Ok(Conv2d { weight, bias })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL || bias.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv weight {:?} / bias {:?} are not [o, i, 3, 3] / [o]",
                ws,
                bias.shape()
            )));
        }
        Ok(Conv2d { weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        match *x.shape() {
            [b, c, h, w] if c == self.in_channels() => Ok([b, c, h, w]),
            _ => Err(Error::shape(format!(
                "conv expects [batch, {}, H, W], got {:?}",
                self.in_channels(),
                x.shape()
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, keep_cache: bool) -> Result<(Tensor<T>, Option<ConvCache<T>>)> {
        let [b, c, h, w] = self.check_input(x)?;
        let o = self.out_channels();
        let (hw, k) = (h * w, c * TAPS);
        let mut cols = vec![T::zero(); b * k * hw];
        let mut out = vec![T::zero(); b * o * hw];
        let weight = MatRef::new(self.weight.data(), o, k);
        let bias = self.bias.data();
        out.par_chunks_mut(o * hw)
            .zip(cols.par_chunks_mut(k * hw))
            .zip(x.data().par_chunks(c * hw))
            .for_each(|((y, col), img)| {
                im2col(img, c, h, w, col);
                gemm(T::one(), weight, MatRef::new(col, k, hw), T::zero(), y);
                for (plane, &bo) in y.chunks_mut(hw).zip(bias) {
                    plane.iter_mut().for_each(|v| *v = *v + bo);
                }
            });
        let cache = keep_cache.then_some(ConvCache {
            cols,
            input_shape: [b, c, h, w],
        });
        Ok((Tensor::from_parts(vec![b, o, h, w], out), cache))
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
        let [b, c, h, w] = cache.input_shape;
        let o = self.out_channels();
        if dy.shape() != [b, o, h, w] {
            return Err(Error::shape(format!(
                "conv upstream gradient {:?} does not match output [{b}, {o}, {h}, {w}]",
                dy.shape()
            )));
        }
        let (hw, k) = (h * w, c * TAPS);
        let dyd = dy.data();

        let mut dbias = vec![T::zero(); o];
        for sample in dyd.chunks(o * hw) {
            for (acc, plane) in dbias.iter_mut().zip(sample.chunks(hw)) {
                *acc = plane.iter().fold(*acc, |s, &v| s + v);
            }
        }

        // dW[rows] = sum_b dY_b[rows] * cols_b^T, accumulated in sample order.
        let mut dweight = vec![T::zero(); o * k];
        dweight
            .par_chunks_mut(WGRAD_ROWS * k)
            .enumerate()
            .for_each(|(chunk, dw)| {
                let r0 = chunk * WGRAD_ROWS;
                let rows = dw.len() / k;
                for s in 0..b {
                    let start = s * o * hw + r0 * hw;
                    let dys = MatRef::new(&dyd[start..start + rows * hw], rows, hw);
                    let col = MatRef::new(&cache.cols[s * k * hw..(s + 1) * k * hw], k, hw).t();
                    let beta = if s == 0 { T::zero() } else { T::one() };
                    gemm(T::one(), dys, col, beta, dw);
                }
            });

        let dx = need_dx.then(|| {
            let mut dx = vec![T::zero(); b * c * hw];
            let wt = MatRef::new(self.weight.data(), o, k).t();
            dx.par_chunks_mut(c * hw)
                .zip(dyd.par_chunks(o * hw))
                .for_each(|(dxs, dys)| {
                    let mut dcol = vec![T::zero(); k * hw];
                    gemm(T::one(), wt, MatRef::new(dys, o, hw), T::zero(), &mut dcol);
                    col2im(&dcol, c, h, w, dxs);
                });
            Tensor::from_parts(vec![b, c, h, w], dx)
        });

        Ok((
            dx,
            Tensor::from_parts(self.weight.shape().to_vec(), dweight),
            Tensor::from_parts(vec![o], dbias),
        ))
    }
}

pub fn conv2d_forward<T: Real>(layer: &Conv2d<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(x, false).map(|(y, _)| y)
}

/// Unfold one `[c, h, w]` image into `[c * 9, h * w]` patch columns.
fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    img.fill(T::zero());
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d = *d + s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d = *d + s),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_kernel_is_identity() {
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let layer = Conv2d::from_parts(
            Tensor::new(&[1, 1, 3, 3], w).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(&[1, 1, 3, 4], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(conv2d_forward(&layer, &x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_center_sum() {
        let layer = Conv2d::from_parts(
            Tensor::full(&[1, 1, 3, 3], 1.0f32).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let y = conv2d_forward(&layer, &x).unwrap();
        assert_eq!(y.data()[4], 45.0);
        // corner (0,0) sees 1 + 2 + 4 + 5
        assert_eq!(y.data()[0], 12.0);
    }

    #[test]
    fn shape_and_channel_errors() {
        let layer = Conv2d::<f32>::new(3, 32, &mut Rng::new(0)).unwrap();
        let x = Tensor::zeros(&[1, 3, 64, 64]).unwrap();
        assert_eq!(conv2d_forward(&layer, &x).unwrap().shape(), &[1, 32, 64, 64]);
        let bad = Tensor::zeros(&[1, 1, 64, 64]).unwrap();
        assert!(matches!(conv2d_forward(&layer, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = Rng::new(8);
        let (c, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut cols = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut cols);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
