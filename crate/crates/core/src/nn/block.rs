use super::batchnorm::{BatchNorm, NormCache, NormMode};
use super::conv::{conv_any, conv_any_backward, split_dims, ConvParams};
use super::ops::Activation;
use super::spec::ConvSpec;
use super::ParamRef;
use crate::error::Result;
use crate::tensor::{randn, Real, Rng, Tensor};

/// Convolution (or transposed convolution) followed by optional batch
/// normalization and an activation: one "layer" of the network table.
#[derive(Clone, Debug)]
pub struct ConvBlock<T: Real> {
    pub spec: ConvSpec,
    pub params: ConvParams<T>,
    pub grads: ConvParams<T>,
    pub norm: Option<BatchNorm<T>>,
    pub act: Activation,
}

/// What a block retains between its training forward and backward passes:
/// the block input and the pre-normalization convolution output.
#[derive(Clone, Debug)]
pub struct BlockCache<T: Real> {
    pub input: Tensor<T>,
    pub pre_norm: Tensor<T>,
    pub norm: Option<NormCache<T>>,
}

impl<T: Real> BlockCache<T> {
    pub fn stored_elements(&self) -> usize {
        self.input.numel() + self.pre_norm.numel()
    }
}

impl<T: Real> ConvBlock<T> {
    /// Weights drawn from `N(0, 2 / fan_in)`, zero bias, unit gamma, zero beta.
    pub fn new(spec: ConvSpec, norm: bool, act: Activation, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        let weight = randn(rng, &spec.weight_dims(), 0.0, std)?;
        Ok(Self::with_params(
            spec,
            ConvParams { weight, bias: spec.bias.then(|| Tensor::zeros(&[spec.out_channels])) },
            norm,
            act,
        ))
    }

    pub fn with_params(spec: ConvSpec, params: ConvParams<T>, norm: bool, act: Activation) -> Self {
        Self {
            spec,
            grads: ConvParams::zeros(&spec),
            params,
            norm: norm.then(|| BatchNorm::new(spec.out_channels)),
            act,
        }
    }

    /// Forward without retaining anything.
    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x, mode)?.0)
    }

    pub fn forward_cached(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, BlockCache<T>)> {
        let z = conv_any(x, &self.spec, &self.params)?;
        let (a, norm) = match &mut self.norm {
            Some(bn) => {
                let (a, c) = bn.forward(&z, mode)?;
                (a, Some(c))
            }
            None => (z.clone(), None),
        };
        let y = self.act.apply(&a);
        Ok((y, BlockCache { input: x.clone(), pre_norm: z, norm }))
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients, and
    /// returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &BlockCache<T>) -> Result<Tensor<T>> {
        let a = match (&self.norm, &cache.norm) {
            (Some(bn), Some(nc)) => normalize_with(bn, &cache.pre_norm, nc),
            _ => cache.pre_norm.clone(),
        };
        let y = self.act.apply(&a);
        let ga = self.act.backward(grad_out, &y)?;
        let gz = match (&mut self.norm, &cache.norm) {
            (Some(bn), Some(nc)) => bn.backward(&ga, &cache.pre_norm, nc)?,
            _ => ga,
        };
        let g = conv_any_backward(&gz, &cache.input, &self.spec, &self.params)?;
        self.grads.weight.add_assign(&g.weight)?;
        if let (Some(acc), Some(gb)) = (&mut self.grads.bias, &g.bias) {
            acc.add_assign(gb)?;
        }
        Ok(g.input)
    }

    pub fn zero_grad(&mut self) {
        self.grads.weight.fill(T::zero());
        if let Some(b) = &mut self.grads.bias {
            b.fill(T::zero());
        }
        if let Some(bn) = &mut self.norm {
            bn.gamma.zero_grad();
            bn.beta.zero_grad();
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef::new(format!("{prefix}.weight"), &mut self.params.weight, &mut self.grads.weight));
        if let (Some(b), Some(g)) = (&mut self.params.bias, &mut self.grads.bias) {
            out.push(ParamRef::new(format!("{prefix}.bias"), b, g));
        }
        if let Some(bn) = &mut self.norm {
            out.push(ParamRef::new(format!("{prefix}.bn.gamma"), &mut bn.gamma.value, &mut bn.gamma.grad));
            out.push(ParamRef::new(format!("{prefix}.bn.beta"), &mut bn.beta.value, &mut bn.beta.grad));
        }
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        if let Some(bn) = &mut self.norm {
            out.push((format!("{prefix}.bn.running_mean"), &mut bn.running_mean));
            out.push((format!("{prefix}.bn.running_var"), &mut bn.running_var));
        }
    }
}

fn normalize_with<T: Real>(bn: &BatchNorm<T>, z: &Tensor<T>, nc: &NormCache<T>) -> Tensor<T> {
    let c = bn.channels();
    let (_, _, s) = split_dims(z.dims()).expect("activation");
    let vol: usize = s.iter().product();
    let mut a = z.clone();
    let (g, b) = (bn.gamma.value.data(), bn.beta.value.data());
    for (i, chunk) in a.data_mut().chunks_exact_mut(vol).enumerate() {
        let ch = i % c;
        let (m, is, gg, bb) = (nc.mean[ch], nc.inv_std[ch], g[ch], b[ch]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) * is * gg + bb);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cached_backward_replays_forward() {
        let mut rng = Rng::new(21);
        let spec = ConvSpec::conv(2, 4, [3, 3, 3], [1, 2, 1]);
        let mut block = ConvBlock::<f64>::new(spec, true, Activation::leaky(), &mut rng).unwrap();
        let x = randn(&mut rng, &[2, 2, 3, 4, 3], 0.0, 1.0).unwrap();
        let (y, cache) = block.forward_cached(&x, NormMode::TRAIN).unwrap();
        assert_eq!(y.dims(), &[2, 4, 3, 2, 3]);
        assert_eq!(cache.stored_elements(), x.numel() + y.numel());
        let a = normalize_with(block.norm.as_ref().unwrap(), &cache.pre_norm, cache.norm.as_ref().unwrap());
        assert!(block.act.apply(&a).max_abs_diff(&y).unwrap() < 1e-12);
    }

    #[test]
    fn he_init_scale() {
        let mut rng = Rng::new(2);
        let spec = ConvSpec::conv(64, 64, [3, 3, 3], [1, 1, 1]);
        let block = ConvBlock::<f64>::new(spec, true, Activation::leaky(), &mut rng).unwrap();
        let w = &block.params.weight;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
        let want = 2.0 / (64.0 * 27.0);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }
}
