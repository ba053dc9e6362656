use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Probability clipping constant in the BCE logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

fn check<T: Scalar>(probabilities: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if probabilities.shape() != targets.shape() {
        return Err(Error::arg(format!(
            "probabilities {:?} and targets {:?} differ in shape",
            probabilities.shape(),
            targets.shape()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::arg("empty loss input"));
    }
    if targets.data().iter().any(|&t| t != T::zero() && t != T::one()) {
        return Err(Error::arg("targets must be 0 or 1"));
    }
    Ok(())
}

pub(crate) fn clipped_bce(p: f64, t: f64) -> f64 {
    -(t * (p + BCE_EPSILON).ln() + (1.0 - t) * (1.0 - p + BCE_EPSILON).ln())
}

/// Mean clipped binary cross-entropy over every element, with its exact
/// gradient with respect to the probabilities.
pub fn bce_loss<T: Scalar>(probabilities: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(probabilities, targets)?;
    let n = probabilities.len() as f64;
    let eps = T::from_f64(BCE_EPSILON);
    let inv_n = T::from_f64(1.0 / n);
    let mut total = 0.0;
    let grad = probabilities
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            total += clipped_bce(p.as_f64(), t.as_f64());
            (-t / (p + eps) + (T::one() - t) / (T::one() - p + eps)) * inv_n
        })
        .collect();
    Ok((total / n, Tensor::from_vec(probabilities.shape(), grad)?))
}

/// Loss as in [`bce_loss`], but the gradient is taken with respect to the
/// logits feeding the sigmoid: `(p − t) / n`, the unclipped derivative. It
/// stays informative when `p` saturates in 32-bit arithmetic.
pub fn bce_loss_logit_grad<T: Scalar>(probabilities: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(probabilities, targets)?;
    let n = probabilities.len() as f64;
    let inv_n = T::from_f64(1.0 / n);
    let mut total = 0.0;
    let grad = probabilities
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            total += clipped_bce(p.as_f64(), t.as_f64());
            (p - t) * inv_n
        })
        .collect();
    Ok((total / n, Tensor::from_vec(probabilities.shape(), grad)?))
}
