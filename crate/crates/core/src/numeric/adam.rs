//! Bias-corrected Adam over [`MlpParams`].

use super::{MlpGrads, MlpParams};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: MlpGrads,
    v: MlpGrads,
    step_count: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step_count: 0,
            hyper,
        })
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &MlpGrads {
        &self.m
    }

    pub fn second_moment(&self) -> &MlpGrads {
        &self.v
    }

    /// One descent step at the configured learning rate.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        self.step_with_lr(params, grads, self.hyper.lr)
    }

    /// One descent step with an explicit learning rate (for schedules).
    pub fn step_with_lr(&mut self, params: &mut MlpParams, grads: &MlpGrads, lr: f64) -> Result<()> {
        if !grads.matches(params) || !self.m.matches(params) {
            return Err(shape_err(
                "adam_step",
                "gradients and moments shaped like params",
                "mismatched layout",
            ));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr}")));
        }
        let AdamHyper {
            beta1, beta2, eps, ..
        } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let pairs = [
                (&mut p.weight, &g.weight, &mut m.weight, &mut v.weight),
                (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias),
            ];
            for (pm, gm, mm, vm) in pairs {
                for (((x, &gi), mi), vi) in pm
                    .data_mut()
                    .iter_mut()
                    .zip(gm.data())
                    .zip(mm.data_mut())
                    .zip(vm.data_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *x -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{HiddenActivation, Layer, Mat, OutputActivation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(w: f64) -> MlpParams {
        MlpParams::new(
            vec![Layer {
                weight: Mat::from_vec(1, 1, vec![w]).unwrap(),
                bias: Mat::zeros(1, 1),
            }],
            HiddenActivation::Tanh,
            OutputActivation::Linear,
        )
        .unwrap()
    }

    fn scalar_grads(g: f64) -> MlpGrads {
        MlpGrads {
            layers: vec![Layer {
                weight: Mat::from_vec(1, 1, vec![g]).unwrap(),
                bias: Mat::zeros(1, 1),
            }],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = MlpParams::init(
            &[3, 4, 2],
            HiddenActivation::Tanh,
            OutputActivation::Linear,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamHyper::default()).unwrap();
        let zeros = MlpGrads::zeros_like(&p);
        for _ in 0..3 {
            st.step(&mut p, &zeros).unwrap();
        }
        assert_eq!(p, before);
        assert!(st.first_moment().is_zero() && st.second_moment().is_zero());
        assert_eq!(st.step_count(), 3);
    }

    #[test]
    fn first_step_matches_hand_evaluated_recurrence() {
        let hyper = AdamHyper::default();
        for g in [0.3, -2.5, 1e-6] {
            let mut p = scalar_params(1.0);
            let mut st = AdamState::new(&p, hyper).unwrap();
            st.step(&mut p, &scalar_grads(g)).unwrap();
            // t = 1: m = (1-b1) g, v = (1-b2) g^2; bias correction restores g and g^2.
            let m = (1.0 - hyper.beta1) * g;
            let v = (1.0 - hyper.beta2) * g * g;
            let m_hat = m / (1.0 - hyper.beta1);
            let v_hat = v / (1.0 - hyper.beta2);
            let expect = 1.0 - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            let got = p.layers()[0].weight.get(0, 0);
            assert!((got - expect).abs() < 1e-15, "g={g}");
            if g.abs() > 1e-3 {
                assert!((got - (1.0 - hyper.lr * g.signum())).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = scalar_params(0.7);
            let mut st = AdamState::new(&p, AdamHyper::default()).unwrap();
            for i in 0..50 {
                st.step(&mut p, &scalar_grads((i as f64 * 0.37).sin())).unwrap();
            }
            (p, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(sa, sb);
    }

    #[test]
    fn rejects_bad_hyper_and_shapes() {
        let p = scalar_params(1.0);
        for h in [
            AdamHyper::default().with_lr(0.0),
            AdamHyper {
                beta1: 1.0,
                ..AdamHyper::default()
            },
            AdamHyper {
                eps: 0.0,
                ..AdamHyper::default()
            },
        ] {
            assert!(AdamState::new(&p, h).is_err());
        }
        let mut p2 = p.clone();
        let mut st = AdamState::new(&p, AdamHyper::default()).unwrap();
        let wrong = MlpGrads { layers: vec![] };
        assert!(matches!(
            st.step(&mut p2, &wrong),
            Err(Error::Shape { .. })
        ));
    }
}
