//! Additive coupling layers and invertible modules.
//!
//! A coupling layer splits its input into equal channel halves and computes
//!
//! ```text
//! y1 = x1 + f(x2)        x2 = y2 - g(y1)
//! y2 = x2 + g(y1)        x1 = y1 - f(x2)
//! ```
//!
//! where `f` and `g` are stride-1, shape-preserving conv → BN → LeakyReLU
//! blocks. Because the input is recoverable from the output, an
//! [`InvertibleModule`] retains nothing during its training forward pass;
//! its backward pass walks the layers in reverse, reconstructing each layer's
//! input and recomputing `f`/`g` just long enough to differentiate them.
//!
//! Batch normalization inside `f`/`g` uses batch statistics both in the
//! forward pass and in the recomputation; running averages are only updated
//! by the original forward pass.

use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, BlockCache, ConvBlock, ConvSpec, NormMode, ParamRef};
use crate::tensor::{channel_concat, channel_split, Real, Rng, Tensor};

#[derive(Clone, Debug)]
pub struct CouplingLayer<T: Real> {
    channels: usize,
    pub f: ConvBlock<T>,
    pub g: ConvBlock<T>,
}

/// Activations of one coupling layer kept by the stored-activation path.
#[derive(Clone, Debug)]
pub struct CouplingCache<T: Real> {
    f: BlockCache<T>,
    g: BlockCache<T>,
}

impl<T: Real> CouplingCache<T> {
    pub fn stored_elements(&self) -> usize {
        self.f.stored_elements() + self.g.stored_elements()
    }
}

/// Spec of the `f`/`g` sub-layers for a coupling over `channels` channels.
pub fn coupling_sub_spec(channels: usize, groups: usize, bias: bool) -> ConvSpec {
    ConvSpec::conv(channels / 2, channels / 2, [3, 3, 3], [1, 1, 1])
        .with_groups(groups)
        .with_bias(bias)
}

impl<T: Real> CouplingLayer<T> {
    /// Randomly initialised coupling over `channels` channels whose `f` and
    /// `g` are group convolutions with `groups` groups.
    pub fn new(channels: usize, groups: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        if channels % 2 != 0 || channels == 0 {
            return Err(Error::Spec(format!("coupling needs an even channel count, got {channels}")));
        }
        let spec = coupling_sub_spec(channels, groups, bias);
        let f = ConvBlock::new(spec, true, Activation::leaky(), rng)?;
        let g = ConvBlock::new(spec, true, Activation::leaky(), rng)?;
        Self::from_blocks(f, g)
    }

    pub fn from_blocks(f: ConvBlock<T>, g: ConvBlock<T>) -> Result<Self> {
        for (name, b) in [("f", &f), ("g", &g)] {
            b.spec.validate()?;
            if !b.spec.is_shape_preserving() {
                return Err(Error::Structural(format!(
                    "coupling sub-layer {name} must be a stride-1 shape-preserving convolution, got {:?}",
                    b.spec
                )));
            }
        }
        if f.spec.in_channels != g.spec.in_channels {
            return Err(Error::Structural("f and g must act on the same channel count".into()));
        }
        Ok(Self { channels: 2 * f.spec.in_channels, f, g })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn split(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = x.dims().get(crate::tensor::channel_axis(x.rank())).copied().unwrap_or(0);
        if c % 2 != 0 {
            return Err(Error::Spec(format!("coupling input must have an even channel count, got {c}")));
        }
        if c != self.channels {
            return Err(shape_err!("coupling over {} channels got input {:?}", self.channels, x.dims()));
        }
        channel_split(x, c / 2)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (x1, x2) = self.split(x)?;
        let y1 = x1.add(&self.f.forward(&x2, mode)?)?;
        let y2 = x2.add(&self.g.forward(&y1, mode)?)?;
        channel_concat(&y1, &y2)
    }

    pub fn inverse(&mut self, y: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (y1, y2) = self.split(y)?;
        let x2 = y2.sub(&self.g.forward(&y1, mode)?)?;
        let x1 = y1.sub(&self.f.forward(&x2, mode)?)?;
        channel_concat(&x1, &x2)
    }

    /// Forward pass that keeps every internal activation.
    pub fn forward_stored(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, CouplingCache<T>)> {
        let (x1, x2) = self.split(x)?;
        let (fx, f) = self.f.forward_cached(&x2, mode)?;
        let y1 = x1.add(&fx)?;
        let (gy, g) = self.g.forward_cached(&y1, mode)?;
        let y2 = x2.add(&gy)?;
        Ok((channel_concat(&y1, &y2)?, CouplingCache { f, g }))
    }

    /// Backward pass from stored activations.
    pub fn backward_stored(&mut self, grad_out: &Tensor<T>, cache: &CouplingCache<T>) -> Result<Tensor<T>> {
        let (gy1, gy2) = self.split(grad_out)?;
        let gy1 = gy1.add(&self.g.backward(&gy2, &cache.g)?)?;
        let gx2 = gy2.add(&self.f.backward(&gy1, &cache.f)?)?;
        channel_concat(&gy1, &gx2)
    }

    /// Backward pass from the layer output alone: reconstructs the input,
    /// recomputes `g(y1)` and `f(x2)` with caching, then differentiates.
    /// Returns `(grad_input, reconstructed_input)`.
    pub fn backward_recompute(&mut self, grad_out: &Tensor<T>, y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        y.expect_same_shape(grad_out)?;
        let (y1, y2) = self.split(y)?;
        let (gy, g_cache) = self.g.forward_cached(&y1, NormMode::RECOMPUTE)?;
        let x2 = y2.sub(&gy)?;
        drop(gy);
        let (fx, f_cache) = self.f.forward_cached(&x2, NormMode::RECOMPUTE)?;
        let x1 = y1.sub(&fx)?;
        drop(fx);
        let (gy1, gy2) = channel_split(grad_out, self.channels / 2)?;
        let gy1 = gy1.add(&self.g.backward(&gy2, &g_cache)?)?;
        drop(g_cache);
        let gx2 = gy2.add(&self.f.backward(&gy1, &f_cache)?)?;
        Ok((channel_concat(&gy1, &gx2)?, channel_concat(&x1, &x2)?))
    }

    pub fn zero_grad(&mut self) {
        self.f.zero_grad();
        self.g.zero_grad();
    }
}

/// `y = [x1 + f(x2), x2 + g(x1 + f(x2))]`.
pub fn coupling_forward<T: Real>(x: &Tensor<T>, layer: &mut CouplingLayer<T>, mode: NormMode) -> Result<Tensor<T>> {
    layer.forward(x, mode)
}

/// Exact algebraic inverse of [`coupling_forward`].
pub fn coupling_inverse<T: Real>(y: &Tensor<T>, layer: &mut CouplingLayer<T>, mode: NormMode) -> Result<Tensor<T>> {
    layer.inverse(y, mode)
}

/// A stack of shape-preserving coupling layers.
#[derive(Clone, Debug)]
pub struct InvertibleModule<T: Real> {
    pub layers: Vec<CouplingLayer<T>>,
}

impl<T: Real> InvertibleModule<T> {
    pub fn new(channels: usize, n_layers: usize, groups: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Spec("an invertible module needs at least one layer".into()));
        }
        let layers = (0..n_layers)
            .map(|_| CouplingLayer::new(channels, groups, bias, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn channels(&self) -> usize {
        self.layers[0].channels()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Forward pass; retains nothing.
    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn inverse(&mut self, y: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut h = y.clone();
        for layer in self.layers.iter_mut().rev() {
            h = layer.inverse(&h, mode)?;
        }
        Ok(h)
    }

    /// Recompute-based backward. Only `y_out` (the module output) is needed;
    /// at most one layer's internals are live at any time. Parameter
    /// gradients are accumulated into the layers.
    pub fn backward(&mut self, grad_out: &Tensor<T>, y_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.dims() != y_out.dims() {
            return Err(shape_err!(
                "gradient {:?} does not match module output {:?}",
                grad_out.dims(),
                y_out.dims()
            ));
        }
        let mut grad = grad_out.clone();
        let mut y = y_out.clone();
        for layer in self.layers.iter_mut().rev() {
            let (g, x) = layer.backward_recompute(&grad, &y)?;
            grad = g;
            y = x;
        }
        Ok(grad)
    }

    /// Forward pass of the conventional path: every layer's activations are
    /// retained.
    pub fn forward_stored(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, Vec<CouplingCache<T>>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, c) = layer.forward_stored(&h, mode)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward_stored(&mut self, grad_out: &Tensor<T>, caches: &[CouplingCache<T>]) -> Result<Tensor<T>> {
        if caches.len() != self.layers.len() {
            return Err(shape_err!("{} caches for {} layers", caches.len(), self.layers.len()));
        }
        let mut grad = grad_out.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            grad = layer.backward_stored(&grad, cache)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(CouplingLayer::zero_grad);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.f.params_mut(&format!("{prefix}.{i}.f"), out);
            layer.g.params_mut(&format!("{prefix}.{i}.g"), out);
        }
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.f.buffers_mut(&format!("{prefix}.{i}.f"), out);
            layer.g.buffers_mut(&format!("{prefix}.{i}.g"), out);
        }
    }

    /// Snapshot of every accumulated parameter gradient, in parameter order.
    pub fn param_grads(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut refs = Vec::new();
        self.params_mut("module", &mut refs);
        refs.into_iter().map(|p| (p.name, p.grad.clone())).collect()
    }
}

/// Recompute-based backward of a whole module: returns the input gradient and
/// the accumulated parameter gradients.
pub fn invertible_module_backward<T: Real>(
    grad_out: &Tensor<T>,
    y_out: &Tensor<T>,
    module: &mut InvertibleModule<T>,
) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
    let grad_in = module.backward(grad_out, y_out)?;
    Ok((grad_in, module.param_grads()))
}
