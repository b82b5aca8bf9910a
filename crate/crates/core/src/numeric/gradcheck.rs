//! Central finite-difference gradient checking.

use super::{MlpGrads, MlpParams};
use crate::error::{shape_err, Error, Result};

/// Largest relative discrepancy between `analytic` and central differences of
/// `loss` at `params`, using `|a - fd| / max(1, |a|, |fd|)`.
pub fn grad_check(
    params: &MlpParams,
    analytic: &MlpGrads,
    eps: f64,
    loss: impl Fn(&MlpParams) -> f64,
) -> Result<f64> {
    if !analytic.matches(params) {
        return Err(shape_err("grad_check", "gradient shaped like params", "mismatch"));
    }
    let x0 = params.flat();
    let mut probe = params.clone();
    grad_check_flat(&x0, &analytic.flat(), eps, |x| {
        probe.set_flat(x).expect("length preserved");
        loss(&probe)
    })
}

/// Same check over a flat parameter vector.
pub fn grad_check_flat(
    x0: &[f64],
    analytic: &[f64],
    eps: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step {eps}")));
    }
    if x0.len() != analytic.len() {
        return Err(shape_err("grad_check", x0.len(), analytic.len()));
    }
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = loss(&x);
        x[i] = orig - eps;
        let down = loss(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is not finite near parameter {i}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{HiddenActivation, OutputActivation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> MlpParams {
        MlpParams::init(
            &[3, 4, 2],
            HiddenActivation::Tanh,
            OutputActivation::Linear,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap()
    }

    fn grads_from(p: &MlpParams, values: Vec<f64>) -> MlpGrads {
        let mut g = p.clone();
        g.set_flat(&values).unwrap();
        MlpGrads {
            layers: g.layers().to_vec(),
        }
    }

    #[test]
    fn linear_loss_is_exact() {
        let p = params();
        let ones = grads_from(&p, vec![1.0; p.num_params()]);
        let err = grad_check(&p, &ones, 1e-5, |q| q.flat().iter().sum()).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn half_squared_norm_has_params_as_gradient() {
        let p = params();
        let g = grads_from(&p, p.flat());
        let err = grad_check(&p, &g, 1e-5, |q| {
            0.5 * q.flat().iter().map(|v| v * v).sum::<f64>()
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = params();
        let g = grads_from(&p, vec![0.0; p.num_params()]);
        let err = grad_check(&p, &g, 1e-5, |q| q.flat().iter().sum()).unwrap();
        assert!((err - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = params();
        let g = MlpGrads::zeros_like(&p);
        assert!(matches!(
            grad_check(&p, &g, 1e-5, |_| f64::NAN),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            grad_check(&p, &g, 0.0, |_| 0.0),
            Err(Error::Config(_))
        ));
    }
}
