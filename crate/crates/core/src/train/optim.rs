use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::nn::ParamRef;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { betas: (0.9, 0.999), epsilon: 1e-8, weight_decay: 5e-4 }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Real> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ - lr·wd·θ - lr·m̂/(√v̂ + ε)`. Fails without touching anything if a
/// gradient is non-finite.
pub fn adamw_step<T: Real>(params: &mut [ParamRef<'_, T>], state: &mut AdamState<T>, cfg: &AdamWConfig, lr: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.value.dims())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(arg_err!("optimizer holds {} moments for {} parameters", state.m.len(), params.len()));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    let t = |x: f64| T::from_f64_lossy(x);
    let (b1t, b2t, eps) = (t(b1), t(b2), t(cfg.epsilon));
    let (step_size, c2s) = (t(lr / c1), t(c2.sqrt()));
    let decay = t(1.0 - lr * cfg.weight_decay);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.dims() != p.value.dims() {
            return Err(arg_err!("moment shape mismatch for {}", p.name));
        }
        let it = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &g), (mi, vi)) in it {
            *mi = b1t * *mi + (T::one() - b1t) * g;
            *vi = b2t * *vi + (T::one() - b2t) * g * g;
            *w = *w * decay - step_size * *mi / (vi.sqrt() / c2s + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(theta: f64, g: f64, lr: f64, wd: f64, steps: usize) -> f64 {
        let mut value = Tensor::scalar(theta);
        let mut grad = Tensor::scalar(g);
        let mut state = AdamState::default();
        let cfg = AdamWConfig { weight_decay: wd, ..Default::default() };
        for _ in 0..steps {
            let mut ps = vec![ParamRef::new("p".into(), &mut value, &mut grad)];
            adamw_step(&mut ps, &mut state, &cfg, lr).unwrap();
        }
        value.data()[0]
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        assert_eq!(run(1.5, 0.0, 0.1, 0.0, 3), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = v̂ = 1 after bias correction
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((run(1.0, 1.0, 0.1, 0.0, 1) - want).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_is_geometric() {
        assert!((run(1.0, 0.0, 1.0, 0.1, 1) - 0.9).abs() < 1e-15);
        assert!((run(1.0, 0.0, 1.0, 0.1, 3) - 0.729).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut value = Tensor::scalar(1.0f32);
        let mut grad = Tensor::scalar(f32::NAN);
        let mut ps = vec![ParamRef::new("enc.conv1_1.weight".into(), &mut value, &mut grad)];
        let e = adamw_step(&mut ps, &mut AdamState::default(), &AdamWConfig::default(), 0.1).unwrap_err();
        assert!(matches!(&e, Error::Numeric(m) if m.contains("enc.conv1_1.weight")));
        assert_eq!(value.data()[0], 1.0);
    }
}
