use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    weight.expect_rank(2, "linear weight")?;
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != n_in {
        return Err(Error::ShapeMismatch(format!(
            "linear layer expects {n_in} inputs, got {}",
            input.len()
        )));
    }
    Ok((n_out, n_in))
}

/// Affine map `W·x + b`; `weight` is `n_out×n_in`. The input is used as a
/// flat vector whatever its shape.
pub fn fully_connected<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_out, n_in) = check(input, weight)?;
    bias.expect_shape(&[n_out], "linear bias")?;
    let x = input.data();
    let w = weight.data();
    let out = (0..n_out)
        .map(|o| {
            w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .fold(bias.data()[o], |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Tensor::from_vec(&[n_out], out)
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n_out, n_in) = check(input, weight)?;
    if grad_out.len() != n_out {
        return Err(Error::ShapeMismatch("linear grad_out".into()));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); n_in];
    let mut gw = vec![T::zero(); n_out * n_in];
    for o in 0..n_out {
        let go = g[o];
        let row = &w[o * n_in..(o + 1) * n_in];
        for (d, &wv) in gx.iter_mut().zip(row) {
            *d += go * wv;
        }
        for (d, &xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *d = go * xv;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: Tensor::from_vec(&[n_out], g.to_vec())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{check_gradient, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(&[3], vec![1.0f32, -2.0, 0.5]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(fully_connected(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn scalar_arithmetic() {
        let x = Tensor::from_vec(&[1], vec![2.0f64]).unwrap();
        let w = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert_eq!(fully_connected(&x, &w, &b).unwrap().data(), &[7.0]);
    }

    #[test]
    fn mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[4]);
        assert!(fully_connected(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
        assert!(fully_connected(&x, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Tensor<f64> = Tensor::uniform(&[7], 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 7], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let probe = Tensor::uniform(&[4], 1.0, &mut rng);
        let g = fully_connected_backward(&x, &w, &probe).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| fully_connected(x, w, b).unwrap().dot(&probe);
        check_gradient(&x, &g.input, |t| f(t, &w, &b), DEFAULT_STEP, 1e-4).unwrap();
        check_gradient(&w, &g.weight, |t| f(&x, t, &b), DEFAULT_STEP, 1e-4).unwrap();
        check_gradient(&b, &g.bias, |t| f(&x, &w, t), DEFAULT_STEP, 1e-4).unwrap();
    }
}
