use super::conv::split_dims;
use super::Param;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// How batch normalization picks its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics updated when `update_running` is set.
    Train { update_running: bool },
    /// Running statistics.
    Eval,
}

impl NormMode {
    pub const TRAIN: NormMode = NormMode::Train { update_running: true };
    /// Batch statistics without touching the running averages; used when a
    /// layer is re-run during recomputation.
    pub const RECOMPUTE: NormMode = NormMode::Train { update_running: false };
}

/// Per-channel batch normalization over batch × spatial positions.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Statistics needed to differentiate a normalization call.
#[derive(Clone, Debug)]
pub struct NormCache<T: Real> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.numel()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, NormCache<T>)> {
        let (n, c, s) = split_dims(x.dims())?;
        if c != self.channels() {
            return Err(shape_err!("batch norm over {} channels got input {:?}", self.channels(), x.dims()));
        }
        let vol: usize = s.iter().product();
        let population = n * vol;
        let eps = T::from_f64_lossy(self.epsilon);
        let (mean, inv_std, batch_stats) = match mode {
            NormMode::Train { update_running } => {
                if population < 2 {
                    return Err(Error::State(format!(
                        "batch norm in training mode needs at least 2 values per channel, got {population}"
                    )));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for b in 0..n {
                        sum += x.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol]
                            .iter()
                            .map(|v| v.to_f64_lossy())
                            .sum::<f64>();
                    }
                    let m = sum / population as f64;
                    let mut sq = 0.0f64;
                    for b in 0..n {
                        sq += x.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol]
                            .iter()
                            .map(|v| (v.to_f64_lossy() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::from_f64_lossy(m);
                    var[ch] = T::from_f64_lossy(sq / population as f64);
                }
                if update_running {
                    let mo = T::from_f64_lossy(self.momentum);
                    let unbias = T::from_f64_lossy(population as f64 / (population - 1) as f64);
                    for ch in 0..c {
                        let rm = &mut self.running_mean.data_mut()[ch];
                        *rm = (T::one() - mo) * *rm + mo * mean[ch];
                        let rv = &mut self.running_var.data_mut()[ch];
                        *rv = (T::one() - mo) * *rv + mo * var[ch] * unbias;
                    }
                }
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv, true)
            }
            NormMode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
                false,
            ),
        };
        let mut y = x.clone();
        let (g, bt) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                let (m, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                y.data_mut()[(b * c + ch) * vol..(b * c + ch + 1) * vol]
                    .iter_mut()
                    .for_each(|v| *v = (*v - m) * is * gg + bb);
            }
        }
        Ok((y, NormCache { mean, inv_std, batch_stats }))
    }

    /// Backward pass given the forward input; accumulates gamma/beta gradients.
    pub fn backward(&mut self, grad_out: &Tensor<T>, input: &Tensor<T>, cache: &NormCache<T>) -> Result<Tensor<T>> {
        input.expect_same_shape(grad_out)?;
        let (n, c, s) = split_dims(input.dims())?;
        let vol: usize = s.iter().product();
        let m = T::from_usize(n * vol).unwrap();
        let mut gx = Tensor::zeros(input.dims());
        for ch in 0..c {
            let (mu, is) = (cache.mean[ch], cache.inv_std[ch]);
            let gamma = self.gamma.value.data()[ch];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..n {
                let r = (b * c + ch) * vol..(b * c + ch + 1) * vol;
                for (&g, &x) in grad_out.data()[r.clone()].iter().zip(&input.data()[r]) {
                    sum_g += g;
                    sum_gx += g * (x - mu) * is;
                }
            }
            self.beta.grad.data_mut()[ch] += sum_g;
            self.gamma.grad.data_mut()[ch] += sum_gx;
            for b in 0..n {
                let r = (b * c + ch) * vol..(b * c + ch + 1) * vol;
                let out = &mut gx.data_mut()[r.clone()];
                let (gs, xs) = (&grad_out.data()[r.clone()], &input.data()[r]);
                if cache.batch_stats {
                    let k = gamma * is / m;
                    for ((o, &g), &x) in out.iter_mut().zip(gs).zip(xs) {
                        let xh = (x - mu) * is;
                        *o = k * (m * g - sum_g - xh * sum_gx);
                    }
                } else {
                    for (o, &g) in out.iter_mut().zip(gs) {
                        *o = g * gamma * is;
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, Rng};

    #[test]
    fn standardized_input_passes_through() {
        let mut rng = Rng::new(4);
        let mut x = randn::<f64>(&mut rng, &[4, 2, 3, 3, 3], 0.0, 1.0).unwrap();
        // standardize each channel exactly
        let vol = 27;
        for ch in 0..2 {
            let idx: Vec<usize> = (0..4).flat_map(|b| ((b * 2 + ch) * vol)..((b * 2 + ch + 1) * vol)).collect();
            let m = idx.iter().map(|&i| x.data()[i]).sum::<f64>() / idx.len() as f64;
            let v = idx.iter().map(|&i| (x.data()[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
            for &i in &idx {
                x.data_mut()[i] = (x.data()[i] - m) / v.sqrt();
            }
        }
        let mut bn = BatchNorm::new(2);
        let (y, _) = bn.forward(&x, NormMode::TRAIN).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-3);
    }

    #[test]
    fn constant_channel_yields_beta() {
        let mut bn = BatchNorm::<f32>::new(1);
        bn.beta.value.data_mut()[0] = 0.7;
        let (y, _) = bn.forward(&Tensor::full(&[2, 1, 2, 2, 2], 3.0), NormMode::TRAIN).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn population_of_one_is_a_state_error() {
        let mut bn = BatchNorm::<f32>::new(1);
        assert!(matches!(bn.forward(&Tensor::zeros(&[1, 1, 1, 1, 1]), NormMode::TRAIN), Err(Error::State(_))));
        assert!(bn.forward(&Tensor::zeros(&[1, 1, 1, 1, 1]), NormMode::Eval).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(&[1, 1, 2, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, NormMode::TRAIN).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
        bn.forward(&x, NormMode::RECOMPUTE).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
    }
}
