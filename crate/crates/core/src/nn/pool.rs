use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Flat input offset of each output element's winning position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub input_shape: [usize; 4],
    pub positions: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling. Ties go to the first element in row-major order.
pub fn maxpool2d_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxMap)> {
    let [b, c, h, w] = match *x.shape() {
        [b, c, h, w] => [b, c, h, w],
        _ => {
            return Err(Error::shape(format!(
                "max pool expects [batch, ch, H, W], got {:?}",
                x.shape()
            )))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "max pool needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut positions = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                positions.push(best);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![b, c, oh, ow], out),
        ArgmaxMap {
            input_shape: [b, c, h, w],
            positions,
        },
    ))
}

/// Routes each upstream gradient to its window's recorded argmax.
pub fn maxpool2d_backward<T: Real>(map: &ArgmaxMap, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != map.positions.len() {
        return Err(Error::shape(format!(
            "max pool upstream gradient has {} values, expected {}",
            dy.len(),
            map.positions.len()
        )));
    }
    let mut dx = vec![T::zero(); map.input_shape.iter().product()];
    for (&pos, &g) in map.positions.iter().zip(dy.data()) {
        dx[pos] = dx[pos] + g;
    }
    Ok(Tensor::from_parts(map.input_shape.to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max_and_ties() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 3.0, 2.0, 4.0]).unwrap();
        let (y, map) = maxpool2d_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(map.positions, vec![3]);

        let c = Tensor::full(&[1, 1, 2, 2], 5.0f32).unwrap();
        let (y, map) = maxpool2d_forward(&c).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(map.positions, vec![0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]).unwrap();
        assert!(matches!(maxpool2d_forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_routes_to_argmax_and_conserves_sum() {
        let mut rng = crate::rng::Rng::new(2);
        let x = Tensor::<f64>::glorot_uniform(&mut rng, &[2, 3, 4, 6], 1, 1).unwrap();
        let (_, map) = maxpool2d_forward(&x).unwrap();
        let dy = Tensor::<f64>::glorot_uniform(&mut rng, &[2, 3, 2, 3], 1, 1).unwrap();
        let dx = maxpool2d_backward(&map, &dy).unwrap();
        assert!((dx.sum() - dy.sum()).abs() < 1e-12);
        let nonzero = dx.data().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, dy.len());
        for (&p, &g) in map.positions.iter().zip(dy.data()) {
            assert_eq!(dx.data()[p], g);
        }
    }
}
