use crate::error::{Error, Result};

use super::{Scalar, Tensor};

fn check_targets<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    logits.check_same_shape(target, "bce_pixelwise")?;
    if let Some(bad) = target
        .data()
        .iter()
        .find(|&&t| !(t >= T::zero() && t <= T::one()))
    {
        return Err(Error::InvalidArgument(format!(
            "BCE target {bad:?} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Summed binary cross-entropy between `sigmoid(logits)` and `target`,
/// evaluated as `max(l, 0) - l t + ln(1 + e^{-|l|})`.
pub fn bce_pixelwise<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_targets(logits, target)?;
    Ok(logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &t)| l.max(T::zero()) - l * t + (-l.abs()).exp().ln_1p())
        .sum())
}

/// Gradient of [`bce_pixelwise`] w.r.t. the logits: `sigmoid(l) - t`.
pub fn bce_pixelwise_grad<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_targets(logits, target)?;
    let data = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &t)| sigmoid(l) - t)
        .collect();
    Tensor::new(logits.shape().to_vec(), data)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// KL divergence of `N(mu, exp(logvar))` from the unit Gaussian, summed.
pub fn gaussian_kl<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<T> {
    mu.check_same_shape(logvar, "gaussian_kl")?;
    let half = T::lit(0.5);
    Ok(mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum())
}

/// Gradients of [`gaussian_kl`]: `(d/dmu, d/dlogvar)`.
pub fn gaussian_kl_grad<T: Scalar>(
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    mu.check_same_shape(logvar, "gaussian_kl_grad")?;
    let half = T::lit(0.5);
    Ok((mu.clone(), logvar.map(|lv| half * (lv.exp() - T::one()))))
}
