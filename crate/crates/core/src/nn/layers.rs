//! Dense, dropout, activation and loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Phase;
use crate::rng::Rng;
use crate::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `[in_features, out_features]`
    pub weight: Tensor<T>,
    /// `[out_features]`
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Dense {
            weight: Tensor::glorot_uniform(
                rng,
                &[in_features, out_features],
                in_features,
                out_features,
            )?,
            bias: Tensor::zeros(&[out_features])?,
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape(format!(
                "dense weight {:?} / bias {:?} are not [in, out] / [out]",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (fin, fout) = (self.in_features(), self.out_features());
        let b = match *x.shape() {
            [b, f] if f == fin => b,
            _ => {
                return Err(Error::shape(format!(
                    "dense expects [batch, {fin}], got {:?}",
                    x.shape()
                )))
            }
        };
        let mut out: Vec<T> = self.bias.data().repeat(b);
        gemm(
            T::one(),
            MatRef::new(x.data(), b, fin),
            MatRef::new(self.weight.data(), fin, fout),
            T::one(),
            &mut out,
        );
        Ok(Tensor::from_parts(vec![b, fout], out))
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
        let (fin, fout) = (self.in_features(), self.out_features());
        let b = x.shape()[0];
        if dy.shape() != [b, fout] {
            return Err(Error::shape(format!(
                "dense upstream gradient {:?}, expected [{b}, {fout}]",
                dy.shape()
            )));
        }
        let xm = MatRef::new(x.data(), b, fin);
        let dym = MatRef::new(dy.data(), b, fout);
        let mut dw = vec![T::zero(); fin * fout];
        gemm(T::one(), xm.t(), dym, T::zero(), &mut dw);
        let mut db = vec![T::zero(); fout];
        for row in dy.data().chunks(fout) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc = *acc + g;
            }
        }
        let dx = need_dx.then(|| {
            let mut dx = vec![T::zero(); b * fin];
            gemm(
                T::one(),
                dym,
                MatRef::new(self.weight.data(), fin, fout).t(),
                T::zero(),
                &mut dx,
            );
            Tensor::from_parts(vec![b, fin], dx)
        });
        Ok((
            dx,
            Tensor::from_parts(vec![fin, fout], dw),
            Tensor::from_parts(vec![fout], db),
        ))
    }
}

pub fn dense_forward<T: Real>(layer: &Dense<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(x)
}

/// Inverted dropout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// In training, returns the output and the per-element scale mask
    /// (0 or `1 / (1 - rate)`). Evaluation is the identity and draws nothing
    /// from `rng`.
    pub fn forward<T: Real>(
        &self,
        x: &Tensor<T>,
        phase: Phase,
        rng: &mut Rng,
    ) -> (Tensor<T>, Option<Tensor<T>>) {
        if phase == Phase::Eval {
            return (x.clone(), None);
        }
        if self.rate == 0.0 {
            return (x.clone(), Some(x.map(|_| T::one())));
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.next_f64() < self.rate { T::zero() } else { keep })
            .collect();
        let mask = Tensor::from_parts(x.shape().to_vec(), mask);
        let out = x
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| v * m)
            .collect();
        (Tensor::from_parts(x.shape().to_vec(), out), Some(mask))
    }
}

pub fn dropout_forward<T: Real>(
    layer: &Dropout,
    x: &Tensor<T>,
    phase: Phase,
    rng: &mut Rng,
) -> (Tensor<T>, Option<Tensor<T>>) {
    layer.forward(x, phase, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    /// Sigmoid outputs are kept inside the open interval (0, 1) even where the
    /// floating-point result would round to 0 or 1.
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Sigmoid => {
                let y = T::one() / (T::one() + (-v).exp());
                let top = T::one() - T::epsilon() / (T::one() + T::one());
                y.max(T::min_positive_value()).min(top)
            }
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn backward<T: Real>(self, output: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if output.shape() != dy.shape() {
            return Err(Error::shape(format!(
                "activation upstream gradient {:?} vs output {:?}",
                dy.shape(),
                output.shape()
            )));
        }
        let data = output
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&y, &g)| g * self.derivative_from_output(y))
            .collect();
        Ok(Tensor::from_parts(output.shape().to_vec(), data))
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `p`.
///
/// For two classes this equals categorical cross-entropy over a softmax pair
/// whose logit difference is the sigmoid's input.
pub fn bce_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if p.shape() != y.shape() {
        return Err(Error::shape(format!(
            "loss predictions {:?} vs targets {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pi, &yi)| {
            let pc = pi.as_f64().clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            let yv = yi.as_f64();
            loss -= yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
            T::from_f64_lossy(-(yv / pc - (1.0 - yv) / (1.0 - pc)) / n)
        })
        .collect();
    Ok((loss / n, Tensor::from_parts(p.shape().to_vec(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_stays_open_interval() {
        for v in [-1e4f32, -200.0, -30.0, 30.0, 200.0, 1e4] {
            let y = Activation::Sigmoid.apply(v);
            assert!(y > 0.0 && y < 1.0, "{v} -> {y}");
        }
        let y = Activation::Sigmoid.apply(1e4f64);
        assert!(y < 1.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
    }

    #[test]
    fn dense_identity_and_bias() {
        let layer = Dense::from_parts(
            Tensor::new(&[2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(&[1, 2], vec![3.0f32, -4.0]).unwrap();
        assert_eq!(dense_forward(&layer, &x).unwrap(), x);

        let layer = Dense::from_parts(
            Tensor::new(&[2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::new(&[2], vec![3.0f32, 4.0]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(&[1, 2], vec![1.0f32, 2.0]).unwrap();
        assert_eq!(dense_forward(&layer, &x).unwrap().data(), &[4.0, 6.0]);
        let bad = Tensor::zeros(&[1, 3]).unwrap();
        assert!(matches!(dense_forward(&layer, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_hidden_width() {
        let layer = Dense::<f32>::new(4096, 512, &mut Rng::new(0)).unwrap();
        let x = Tensor::zeros(&[2, 4096]).unwrap();
        assert_eq!(dense_forward(&layer, &x).unwrap().shape(), &[2, 512]);
    }

    #[test]
    fn dropout_degenerate_rates() {
        let x = Tensor::glorot_uniform(&mut Rng::new(1), &[3, 4], 1, 1).unwrap();
        let mut rng = Rng::new(5);
        let (y, mask) = Dropout::new(0.0).unwrap().forward::<f32>(&x, Phase::Train, &mut rng);
        assert_eq!(y, x);
        assert!(mask.unwrap().data().iter().all(|&m| m == 1.0));

        let before = rng.clone().next_u64();
        let (y, mask) = Dropout::new(0.7).unwrap().forward::<f32>(&x, Phase::Eval, &mut rng);
        assert_eq!(y, x);
        assert!(mask.is_none());
        assert_eq!(rng.next_u64(), before);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::full(&[100_000], 1.0f32).unwrap();
        let (y, _) = Dropout::new(0.5).unwrap().forward(&x, Phase::Train, &mut Rng::new(17));
        let mean = y.sum() / y.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_masks_reproducible() {
        let x = Tensor::full(&[64], 1.0f32).unwrap();
        let d = Dropout::new(0.3).unwrap();
        let (_, a) = d.forward(&x, Phase::Train, &mut Rng::new(4));
        let (_, b) = d.forward(&x, Phase::Train, &mut Rng::new(4));
        assert_eq!(a, b);
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Relu.apply(-3.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(3.0f64), 3.0);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        let h = 1e-5;
        let s = |v: f64| Activation::Sigmoid.apply(v);
        let fd = (s(1.0 + h) - s(1.0 - h)) / (2.0 * h);
        let analytic = Activation::Sigmoid.derivative_from_output(s(1.0));
        assert!((fd - analytic).abs() < 1e-6);
    }

    #[test]
    fn bce_values() {
        let p = Tensor::new(&[1], vec![1.0 - 1e-7f64]).unwrap();
        let y = Tensor::new(&[1], vec![1.0f64]).unwrap();
        assert!(bce_loss(&p, &y).unwrap().0 < 1e-6);

        let p = Tensor::new(&[2], vec![0.5f64, 0.5]).unwrap();
        let y = Tensor::new(&[2], vec![1.0f64, 0.0]).unwrap();
        assert!((bce_loss(&p, &y).unwrap().0 - std::f64::consts::LN_2).abs() < 1e-12);

        let bad = Tensor::new(&[3], vec![0.5f64; 3]).unwrap();
        assert!(matches!(bce_loss(&bad, &y), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_gradient_matches_central_difference() {
        let mut rng = Rng::new(33);
        let p: Vec<f64> = (0..8).map(|_| rng.uniform(0.05, 0.95)).collect();
        let y: Vec<f64> = (0..8).map(|_| (rng.below(2)) as f64).collect();
        let yt = Tensor::new(&[8], y).unwrap();
        let (_, grad) = bce_loss(&Tensor::new(&[8], p.clone()).unwrap(), &yt).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            let mut plus = p.clone();
            plus[i] += h;
            let mut minus = p.clone();
            minus[i] -= h;
            let lp = bce_loss(&Tensor::new(&[8], plus).unwrap(), &yt).unwrap().0;
            let lm = bce_loss(&Tensor::new(&[8], minus).unwrap(), &yt).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.data()[i];
            assert!((fd - g).abs() / g.abs().max(fd.abs()) <= 1e-6, "{fd} vs {g}");
        }
    }
}
