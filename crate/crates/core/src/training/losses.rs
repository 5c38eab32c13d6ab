//! Non-saturating logistic GAN losses and the R1 penalty.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::discriminator::StyleDiscriminator;
use crate::generator::StyleGenerator;
use crate::nn::ops::{sigmoid, softplus};
use crate::{Error, Result, Scalar};

/// Probe step of the R1 Hessian-vector product, as a root-mean-square pixel
/// displacement: the square root of the scalar's machine epsilon.
fn r1_probe<T: Scalar>() -> f64 {
    T::epsilon().as_f64().sqrt()
}

fn check_finite<T: Scalar>(logits: ArrayView2<T>, what: &str) -> Result<()> {
    if let Some((i, v)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::numeric(format!("{what} logit {i} is {v}")));
    }
    Ok(())
}

/// `mean softplus(−real) + mean softplus(fake)` and its gradients with respect
/// to both logit columns.
pub fn discriminator_loss<T: Scalar>(
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
) -> Result<(f64, Array2<T>, Array2<T>)> {
    check_finite(real, "real")?;
    check_finite(fake, "fake")?;
    if real.is_empty() || fake.is_empty() {
        return Err(Error::input("loss over an empty batch"));
    }
    let (nr, nf) = (T::of(real.len() as f64), T::of(fake.len() as f64));
    let loss = real.iter().map(|&r| softplus(-r).as_f64()).sum::<f64>() / real.len() as f64
        + fake.iter().map(|&f| softplus(f).as_f64()).sum::<f64>() / fake.len() as f64;
    let d_real = real.mapv(|r| -sigmoid(-r) / nr);
    let d_fake = fake.mapv(|f| sigmoid(f) / nf);
    Ok((loss, d_real, d_fake))
}

/// `mean softplus(−fake)` and its gradient.
pub fn generator_loss<T: Scalar>(fake: ArrayView2<T>) -> Result<(f64, Array2<T>)> {
    check_finite(fake, "fake")?;
    if fake.is_empty() {
        return Err(Error::input("loss over an empty batch"));
    }
    let n = T::of(fake.len() as f64);
    let loss = fake.iter().map(|&f| softplus(-f).as_f64()).sum::<f64>() / fake.len() as f64;
    Ok((loss, fake.mapv(|f| -sigmoid(-f) / n)))
}

/// Evaluates `(L_D, L_G)` for a real batch and fake inputs without touching
/// gradients.
pub fn adversarial_losses<T: Scalar>(
    generator: &StyleGenerator<T>,
    discriminator: &StyleDiscriminator<T>,
    real: ArrayView4<T>,
    real_styles: Option<ArrayView2<T>>,
    z: ArrayView2<T>,
    fake_styles: Option<ArrayView2<T>>,
) -> Result<(f64, f64)> {
    let fake = generator.synthesize(z, fake_styles)?;
    let (real_logits, _) = discriminator.forward(real, real_styles)?;
    let (fake_logits, _) = discriminator.forward(fake.view(), fake_styles)?;
    let (ld, _, _) = discriminator_loss(real_logits.view(), fake_logits.view())?;
    let (lg, _) = generator_loss(fake_logits.view())?;
    Ok((ld, lg))
}

/// Adds `∂L_D/∂θ_D` for one real and one fake batch to the discriminator's
/// gradients and returns `L_D`.
pub fn accumulate_discriminator_loss<T: Scalar>(
    discriminator: &mut StyleDiscriminator<T>,
    real: ArrayView4<T>,
    real_styles: Option<ArrayView2<T>>,
    fake: ArrayView4<T>,
    fake_styles: Option<ArrayView2<T>>,
) -> Result<f64> {
    let (real_logits, real_trace) = discriminator.forward(real, real_styles)?;
    let (fake_logits, fake_trace) = discriminator.forward(fake, fake_styles)?;
    let (loss, d_real, d_fake) = discriminator_loss(real_logits.view(), fake_logits.view())?;
    discriminator.backward(&real_trace, d_real.view(), true);
    discriminator.backward(&fake_trace, d_fake.view(), true);
    Ok(loss)
}

/// Adds `∂L_G/∂θ_G` to the generator's gradients, leaving the
/// discriminator's untouched, and returns `L_G`.
pub fn accumulate_generator_loss<T: Scalar>(
    generator: &mut StyleGenerator<T>,
    discriminator: &mut StyleDiscriminator<T>,
    z: ArrayView2<T>,
    styles: Option<ArrayView2<T>>,
) -> Result<f64> {
    let (fake, g_trace) = generator.forward(z, styles)?;
    let (logits, d_trace) = discriminator.forward(fake.view(), styles)?;
    let (loss, d_logits) = generator_loss(logits.view())?;
    let d_image = discriminator.backward(&d_trace, d_logits.view(), false).x;
    generator.backward(&g_trace, d_image.view());
    Ok(loss)
}

/// Per-image squared norms of `∇ₓ D(x, v)`.
pub fn input_gradient_norms<T: Scalar>(
    discriminator: &mut StyleDiscriminator<T>,
    x: ArrayView4<T>,
    v: Option<ArrayView2<T>>,
) -> Result<(Array4<T>, Vec<f64>)> {
    let (logits, trace) = discriminator.forward(x, v)?;
    let grads = discriminator.backward(&trace, Array2::ones(logits.raw_dim()).view(), false);
    let norms = grads
        .x
        .outer_iter()
        .map(|g| g.iter().map(|&e| e.as_f64() * e.as_f64()).sum())
        .collect();
    Ok((grads.x, norms))
}

/// Value of `(γ / 2) · mean ‖∇ₓ D(x, v)‖²`.
pub fn r1_value<T: Scalar>(
    discriminator: &mut StyleDiscriminator<T>,
    x: ArrayView4<T>,
    v: Option<ArrayView2<T>>,
    gamma: f64,
) -> Result<f64> {
    let (_, norms) = input_gradient_norms(discriminator, x, v)?;
    Ok(0.5 * gamma * norms.iter().sum::<f64>() / norms.len() as f64)
}

/// Adds the gradient of the R1 penalty to the discriminator's parameter
/// gradients and returns the penalty value.
///
/// The parameter gradient `γ/B · Σᵢ ∂²D/∂θ∂x · gᵢ` is a Hessian-vector
/// product, evaluated as a central difference of `∇_θ D` along `g`.
pub fn accumulate_r1<T: Scalar>(
    discriminator: &mut StyleDiscriminator<T>,
    x: ArrayView4<T>,
    v: Option<ArrayView2<T>>,
    gamma: f64,
) -> Result<f64> {
    let (g, norms) = input_gradient_norms(discriminator, x, v)?;
    let batch = norms.len() as f64;
    let penalty = 0.5 * gamma * norms.iter().sum::<f64>() / batch;
    if !penalty.is_finite() {
        return Err(Error::numeric(format!("R1 penalty is {penalty}")));
    }
    let rms = (norms.iter().sum::<f64>() / g.len() as f64).sqrt();
    if rms == 0.0 || gamma == 0.0 {
        return Ok(penalty);
    }
    let eps = r1_probe::<T>() / rms;
    let step = g.mapv(|e| e * T::of(eps));
    let scale = gamma / (2.0 * eps * batch);
    for (sign, probe) in [(1.0, &x + &step), (-1.0, &x - &step)] {
        let (logits, trace) = discriminator.forward(probe.view(), v)?;
        let seed = Array2::from_elem(logits.raw_dim(), T::of(sign * scale));
        discriminator.backward(&trace, seed.view(), true);
    }
    Ok(penalty)
}
