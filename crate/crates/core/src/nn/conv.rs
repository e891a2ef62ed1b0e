//! Grouped strided 3D convolution and its transpose.
//!
//! Both layers are expressed through one correlation geometry between a
//! "big" volume and a "small" volume related by
//! `big_index = small_index * stride + kernel_offset - pad`. A convolution
//! gathers big (input) into small (output); a transposed convolution scatters
//! small (input) into big (output). Their backward passes swap the roles.

use std::ops::Range;

use super::spec::ConvSpec;
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Weights (and optional bias) of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            weight: Tensor::zeros(&spec.weight_dims()),
            bias: spec.bias.then(|| Tensor::zeros(&[spec.out_channels])),
        }
    }

    fn check(&self, spec: &ConvSpec) -> Result<()> {
        if self.weight.dims() != spec.weight_dims() {
            return Err(shape_err!(
                "weight dims {:?} do not match spec {:?}",
                self.weight.dims(),
                spec.weight_dims()
            ));
        }
        match (&self.bias, spec.bias) {
            (Some(b), true) if b.dims() == [spec.out_channels] => Ok(()),
            (None, false) => Ok(()),
            _ => Err(shape_err!("bias presence/shape does not match spec {spec:?}")),
        }
    }
}

/// Gradients produced by a convolution backward pass.
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Batch, channels and spatial dims of a rank-4 (`C×T×H×W`) or rank-5
/// (`N×C×T×H×W`) activation.
pub(crate) fn split_dims(dims: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    match *dims {
        [c, t, h, w] => Ok((1, c, [t, h, w])),
        [n, c, t, h, w] => Ok((n, c, [t, h, w])),
        _ => Err(shape_err!("expected C×T×H×W or N×C×T×H×W activation, got {dims:?}")),
    }
}

pub(crate) fn join_dims(rank: usize, n: usize, c: usize, s: [usize; 3]) -> Vec<usize> {
    if rank == 4 {
        vec![c, s[0], s[1], s[2]]
    } else {
        vec![n, c, s[0], s[1], s[2]]
    }
}

struct Geometry {
    batch: usize,
    big: [usize; 3],
    small: [usize; 3],
    big_channels: usize,
    small_channels: usize,
    groups: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

/// Small-side indices `o` with `0 <= o * s + k - p < big_len`.
#[inline]
fn valid(small_len: usize, k: usize, s: usize, p: usize, big_len: usize) -> Range<usize> {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    if big_len + p <= k {
        return 0..0;
    }
    let hi = ((big_len - 1 + p - k) / s + 1).min(small_len);
    lo..hi.max(lo)
}

impl Geometry {
    fn for_spec(spec: &ConvSpec, batch: usize, input: [usize; 3]) -> Result<Self> {
        let output = spec.output_dims(input)?;
        let (big, small, big_channels, small_channels) = if spec.transposed {
            (output, input, spec.out_channels, spec.in_channels)
        } else {
            (input, output, spec.in_channels, spec.out_channels)
        };
        Ok(Self {
            batch,
            big,
            small,
            big_channels,
            small_channels,
            groups: spec.groups,
            kernel: spec.kernel,
            stride: spec.stride,
            pad: spec.padding(),
        })
    }

    fn big_vol(&self) -> usize {
        self.big.iter().product()
    }

    fn small_vol(&self) -> usize {
        self.small.iter().product()
    }

    /// Visits every (small channel, big channel, kernel offset) triple with the
    /// flat weight index, big and small channel base offsets.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, [usize; 3])) {
        let sg = self.small_channels / self.groups;
        let bg = self.big_channels / self.groups;
        let kvol: usize = self.kernel.iter().product();
        for n in 0..self.batch {
            for sc in 0..self.small_channels {
                let group = sc / sg;
                for bl in 0..bg {
                    let bc = group * bg + bl;
                    let small_base = (n * self.small_channels + sc) * self.small_vol();
                    let big_base = (n * self.big_channels + bc) * self.big_vol();
                    let w_base = (sc * bg + bl) * kvol;
                    let mut wi = w_base;
                    for kt in 0..self.kernel[0] {
                        for kh in 0..self.kernel[1] {
                            for kw in 0..self.kernel[2] {
                                f(wi, big_base, small_base, [kt, kh, kw]);
                                wi += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Calls `row(big_offset, small_offset, range)` for every contiguous run
    /// of small-side `w` positions touched by kernel offset `k`.
    #[inline]
    fn rows(&self, k: [usize; 3], mut row: impl FnMut(usize, usize, Range<usize>)) {
        let [bt, bh, bw] = self.big;
        let [st, sh, sw] = self.small;
        let rt = valid(st, k[0], self.stride[0], self.pad[0], bt);
        let rh = valid(sh, k[1], self.stride[1], self.pad[1], bh);
        let rw = valid(sw, k[2], self.stride[2], self.pad[2], bw);
        if rw.is_empty() {
            return;
        }
        for ot in rt {
            let it = ot * self.stride[0] + k[0] - self.pad[0];
            for oh in rh.clone() {
                let ih = oh * self.stride[1] + k[1] - self.pad[1];
                row((it * bh + ih) * bw, (ot * sh + oh) * sw, rw.clone());
            }
        }
    }

    /// `small += W ⋆ big`.
    fn gather<T: Real>(&self, big: &[T], weight: &[T], small: &mut [T]) {
        let (sw, pw) = (self.stride[2], self.pad[2]);
        self.for_each_tap(|wi, bb, sb, k| {
            let wv = weight[wi];
            if wv == T::zero() {
                return;
            }
            self.rows(k, |bo, so, r| {
                let out = &mut small[sb + so..];
                let inp = &big[bb + bo..];
                if sw == 1 {
                    let shift = r.start + k[2] - pw;
                    let len = r.len();
                    for (o, &i) in out[r].iter_mut().zip(&inp[shift..shift + len]) {
                        *o += wv * i;
                    }
                } else {
                    for ow in r {
                        out[ow] += wv * inp[ow * sw + k[2] - pw];
                    }
                }
            });
        });
    }

    /// `big += Wᵀ ⋆ small`.
    fn scatter<T: Real>(&self, small: &[T], weight: &[T], big: &mut [T]) {
        let (sw, pw) = (self.stride[2], self.pad[2]);
        self.for_each_tap(|wi, bb, sb, k| {
            let wv = weight[wi];
            if wv == T::zero() {
                return;
            }
            self.rows(k, |bo, so, r| {
                let inp = &small[sb + so..];
                let out = &mut big[bb + bo..];
                if sw == 1 {
                    let shift = r.start + k[2] - pw;
                    let len = r.len();
                    for (o, &i) in out[shift..shift + len].iter_mut().zip(&inp[r]) {
                        *o += wv * i;
                    }
                } else {
                    for ow in r {
                        out[ow * sw + k[2] - pw] += wv * inp[ow];
                    }
                }
            });
        });
    }

    /// `grad_w += Σ small ⊙ shifted big`.
    fn weight_grad<T: Real>(&self, big: &[T], small: &[T], grad_w: &mut [T]) {
        let (sw, pw) = (self.stride[2], self.pad[2]);
        self.for_each_tap(|wi, bb, sb, k| {
            let mut acc = T::zero();
            self.rows(k, |bo, so, r| {
                let s = &small[sb + so..];
                let b = &big[bb + bo..];
                if sw == 1 {
                    let shift = r.start + k[2] - pw;
                    let len = r.len();
                    acc += s[r].iter().zip(&b[shift..shift + len]).map(|(&x, &y)| x * y).sum::<T>();
                } else {
                    for ow in r {
                        acc += s[ow] * b[ow * sw + k[2] - pw];
                    }
                }
            });
            grad_w[wi] += acc;
        });
    }
}

fn add_bias<T: Real>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let (n, c, s) = split_dims(out.dims()).expect("activation");
    let vol: usize = s.iter().product();
    let data = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let bv = bias.data()[ch];
            data[(b * c + ch) * vol..(b * c + ch + 1) * vol].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, s) = split_dims(grad_out.dims()).expect("activation");
    let vol: usize = s.iter().product();
    let mut g = Tensor::zeros(&[c]);
    for b in 0..n {
        for ch in 0..c {
            let sum: T = grad_out.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol].iter().copied().sum();
            g.data_mut()[ch] += sum;
        }
    }
    g
}

fn prepare<T: Real>(x: &Tensor<T>, spec: &ConvSpec, params: &ConvParams<T>) -> Result<(usize, [usize; 3])> {
    spec.validate()?;
    params.check(spec)?;
    let (n, c, s) = split_dims(x.dims())?;
    if c != spec.in_channels {
        return Err(shape_err!(
            "input has {c} channels, layer expects {} (input dims {:?})",
            spec.in_channels,
            x.dims()
        ));
    }
    Ok((n, s))
}

/// Forward grouped convolution with `(k - 1) / 2` symmetric zero padding.
pub fn conv3d<T: Real>(x: &Tensor<T>, spec: &ConvSpec, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(crate::error::spec_err!("conv3d called with a transposed spec"));
    }
    let (n, s) = prepare(x, spec, params)?;
    let geo = Geometry::for_spec(spec, n, s)?;
    let mut out = Tensor::zeros(&join_dims(x.rank(), n, spec.out_channels, geo.small));
    geo.gather(x.data(), params.weight.data(), out.data_mut());
    if let Some(b) = &params.bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub fn conv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &ConvSpec,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    let (n, s) = prepare(saved_input, spec, params)?;
    let geo = Geometry::for_spec(spec, n, s)?;
    let expected = join_dims(saved_input.rank(), n, spec.out_channels, geo.small);
    if grad_out.dims() != expected {
        return Err(shape_err!("grad_out dims {:?}, forward produced {expected:?}", grad_out.dims()));
    }
    let mut gx = Tensor::zeros(saved_input.dims());
    geo.scatter(grad_out.data(), params.weight.data(), gx.data_mut());
    let mut gw = Tensor::zeros(params.weight.dims());
    geo.weight_grad(saved_input.data(), grad_out.data(), gw.data_mut());
    Ok(ConvGrads { input: gx, weight: gw, bias: spec.bias.then(|| bias_grad(grad_out)) })
}

/// Transposed convolution: output dim = input dim × stride.
pub fn deconv3d<T: Real>(x: &Tensor<T>, spec: &ConvSpec, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(crate::error::spec_err!("deconv3d called with a non-transposed spec"));
    }
    let (n, s) = prepare(x, spec, params)?;
    let geo = Geometry::for_spec(spec, n, s)?;
    let mut out = Tensor::zeros(&join_dims(x.rank(), n, spec.out_channels, geo.big));
    geo.scatter(x.data(), params.weight.data(), out.data_mut());
    if let Some(b) = &params.bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub fn deconv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &ConvSpec,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    let (n, s) = prepare(saved_input, spec, params)?;
    let geo = Geometry::for_spec(spec, n, s)?;
    let expected = join_dims(saved_input.rank(), n, spec.out_channels, geo.big);
    if grad_out.dims() != expected {
        return Err(shape_err!("grad_out dims {:?}, forward produced {expected:?}", grad_out.dims()));
    }
    let mut gx = Tensor::zeros(saved_input.dims());
    geo.gather(grad_out.data(), params.weight.data(), gx.data_mut());
    let mut gw = Tensor::zeros(params.weight.dims());
    geo.weight_grad(grad_out.data(), saved_input.data(), gw.data_mut());
    Ok(ConvGrads { input: gx, weight: gw, bias: spec.bias.then(|| bias_grad(grad_out)) })
}

/// Dispatches to [`conv3d`] or [`deconv3d`].
pub fn conv_any<T: Real>(x: &Tensor<T>, spec: &ConvSpec, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if spec.transposed {
        deconv3d(x, spec, params)
    } else {
        conv3d(x, spec, params)
    }
}

pub fn conv_any_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &ConvSpec,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    if spec.transposed {
        deconv3d_backward(grad_out, saved_input, spec, params)
    } else {
        conv3d_backward(grad_out, saved_input, spec, params)
    }
}
