use super::TrainConfig;
use crate::encoder::ModelParameters;
use crate::tensor::{Real, Tensor};

/// Anything that exposes its tensors in a fixed order.
pub trait ParamSet<T: Real> {
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Real> ParamSet<T> for ModelParameters<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        ModelParameters::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        ModelParameters::tensors_mut(self)
    }
}

impl<T: Real> ParamSet<T> for Vec<Tensor<T>> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.iter_mut().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<P: ParamSet<T>>(params: &P) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are rescaled to `clip_norm` when their global L2 norm exceeds it,
/// and the learning rate ramps linearly as `lr · min(1, t / warmup)`.
/// `warmup_steps = None` is treated as no warmup here; the loops resolve the
/// default before calling.
pub fn adam_step<T: Real, P: ParamSet<T>>(params: &mut P, grads: &P, state: &mut OptimizerState<T>, config: &TrainConfig) {
    let grads = grads.tensors();
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt();
    let clip = match config.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as f64;
    let warmup = config.warmup_steps.unwrap_or(0);
    let lr = if warmup > 0 {
        config.learning_rate * (t / warmup as f64).min(1.0)
    } else {
        config.learning_rate
    };
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);

    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = gi.as_f64() * clip;
            let m_new = b1 * mi.as_f64() + (1.0 - b1) * g;
            let v_new = b2 * vi.as_f64() + (1.0 - b2) * g * g;
            *mi = T::of(m_new);
            *vi = T::of(v_new);
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + config.epsilon);
            *pi = T::of(pi.as_f64() - update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(x)]
    }

    fn no_clip(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            warmup_steps: Some(0),
            clip_norm: None,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0])];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut s = OptimizerState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, &TrainConfig::default());
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &scalar(1.0), &mut s, &no_clip(1e-3));
        // m̂ = 1, v̂ = 1 → Δ = -lr / (1 + ε).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-18);
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn quadratic_trace_matches_reference() {
        // θ ← Adam on f(θ) = θ², g = 2θ, lr = 0.1, no clip or warmup.
        // Reference values evaluated with 50-digit arithmetic.
        let reference = [
            0.900_000_000_499_999_997_5,
            0.800_412_228_691_792_145,
            0.701_586_272_946_029_545,
            0.603_939_060_573_744_839,
            0.507_963_659_264_340_677,
            0.414_236_455_993_660_609,
            0.323_420_704_939_100_507,
            0.236_263_724_521_040_580,
            0.153_584_560_070_362_536,
            0.076_249_155_606_911_103,
        ];
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        for want in reference {
            let g = scalar(2.0 * p[0].data()[0]);
            adam_step(&mut p, &g, &mut s, &no_clip(0.1));
            let got = p[0].data()[0];
            assert!((got - want).abs() < 1e-10, "step {}: {got} vs {want}", s.step);
        }
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: Some(0),
            clip_norm: Some(1.0),
            ..Default::default()
        };
        let mut p: Vec<Tensor<f64>> = vec![Tensor::from_vec(&[2], vec![0.0, 0.0])];
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &vec![Tensor::from_vec(&[2], vec![30.0, 40.0])], &mut s, &cfg);
        // First moment holds the clipped gradient (0.6, 0.8) scaled by 1 - β1.
        assert!((s.first[0].data()[0] - 0.06).abs() < 1e-12);
        assert!((s.first[0].data()[1] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn warmup_scales_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            warmup_steps: Some(4),
            clip_norm: None,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &scalar(1.0), &mut s, &cfg);
        assert!((p[0].data()[0] + 0.25e-3).abs() < 1e-10);
    }
}
