use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A reparameterized latent sample together with the noise that produced it.
#[derive(Clone, Debug)]
pub struct LatentSample<T> {
    pub z: Tensor<T>,
    pub noise: Tensor<T>,
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(len: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(&[len], data).expect("non-empty latent")
}

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    rng: &mut R,
) -> Result<LatentSample<T>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::ShapeMismatch("mu and logvar differ in shape".into()));
    }
    let noise = standard_normal::<T, R>(mu.len(), rng).reshape(mu.shape())?;
    Ok(LatentSample {
        z: shift_scale(mu, logvar, &noise),
        noise,
    })
}

/// Deterministic part of [`reparameterize`] for a given noise vector.
pub fn shift_scale<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, noise: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64_lossy(0.5);
    let mut z = mu.clone();
    for ((zv, &lv), &e) in z.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
        *zv += (lv * half).exp() * e;
    }
    z
}

/// Pull `dL/dz` back to `(dL/dmu, dL/dlogvar)`.
pub fn reparameterize_backward<T: Scalar>(
    logvar: &Tensor<T>,
    noise: &Tensor<T>,
    grad_z: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let half = T::from_f64_lossy(0.5);
    let mut gl = grad_z.clone();
    for ((g, &lv), &e) in gl.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
        *g *= half * (lv * half).exp() * e;
    }
    (grad_z.clone(), gl)
}
