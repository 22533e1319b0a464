use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, LevelGrid, BOARD_HEIGHT, BOARD_WIDTH, CELL_CLASSES, CELL_COUNT};

/// Per-cell softmax over the class axis of a `3×11×9` logit map.
pub fn softmax_cells<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_shape(&[CELL_CLASSES, BOARD_HEIGHT, BOARD_WIDTH], "softmax logits")?;
    let l = logits.data();
    let mut out = Tensor::zeros(logits.shape());
    let p = out.data_mut();
    for cell in 0..CELL_COUNT {
        let m = (0..CELL_CLASSES)
            .map(|k| l[k * CELL_COUNT + cell])
            .fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for k in 0..CELL_CLASSES {
            let e = (l[k * CELL_COUNT + cell] - m).exp();
            p[k * CELL_COUNT + cell] = e;
            z += e;
        }
        for k in 0..CELL_CLASSES {
            p[k * CELL_COUNT + cell] /= z;
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood of the target classes over cells where the
/// mask is 1. Masked-out cells contribute neither loss nor gradient.
pub fn masked_softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: &LevelGrid,
    mask: &BinaryMask,
) -> Result<(T, Tensor<T>)> {
    let kept = mask.count_ones();
    if kept == 0 {
        return Err(Error::EmptyMask);
    }
    let probs = softmax_cells(logits)?;
    let l = logits.data();
    let p = probs.data();
    let norm = T::from_usize(kept).expect("cell count");
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    let g = grad.data_mut();
    for (pos, kind) in target.iter() {
        if !mask.get(pos) {
            continue;
        }
        let cell = pos.y * BOARD_WIDTH + pos.x;
        let t = kind.code() as usize;
        // log-softmax via log-sum-exp for accuracy when probabilities saturate
        let m = (0..CELL_CLASSES)
            .map(|k| l[k * CELL_COUNT + cell])
            .fold(T::neg_infinity(), T::max);
        let lse = m + (0..CELL_CLASSES)
            .map(|k| (l[k * CELL_COUNT + cell] - m).exp())
            .sum::<T>()
            .ln();
        loss += lse - l[t * CELL_COUNT + cell];
        for k in 0..CELL_CLASSES {
            let idx = k * CELL_COUNT + cell;
            let onehot = if k == t { T::one() } else { T::zero() };
            g[idx] = (p[idx] - onehot) / norm;
        }
    }
    Ok((loss / norm, grad))
}

#[derive(Clone, Debug)]
pub struct KlOutput<T> {
    pub loss: T,
    pub grad_mu: Tensor<T>,
    pub grad_logvar: Tensor<T>,
}

/// `KL(N(mu, exp(logvar)) ‖ N(0, I)) = −½ Σ (1 + logvar − mu² − exp(logvar))`.
pub fn kl_standard_normal<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<KlOutput<T>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::ShapeMismatch("mu and logvar differ in shape".into()));
    }
    let half = T::from_f64_lossy(0.5);
    let mut loss = T::zero();
    let mut gm = Tensor::zeros(mu.shape());
    let mut gl = Tensor::zeros(mu.shape());
    for (i, (&m, &lv)) in mu.data().iter().zip(logvar.data()).enumerate() {
        let e = lv.exp();
        loss -= half * (T::one() + lv - m * m - e);
        gm.data_mut()[i] = m;
        gl.data_mut()[i] = half * (e - T::one());
    }
    Ok(KlOutput {
        loss,
        grad_mu: gm,
        grad_logvar: gl,
    })
}
