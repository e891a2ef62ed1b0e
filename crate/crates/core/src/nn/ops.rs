//! Parameter-free layers: activations, global average pooling, channel
//! shuffle and center crop.

use serde::{Deserialize, Serialize};

use super::conv::{join_dims, split_dims};
use crate::error::{shape_err, spec_err, Result};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::LeakyRelu(s) => leaky_relu(x, s),
            Activation::Tanh => tanh_act(x),
            Activation::Identity => x.clone(),
        }
    }

    /// Gradient given the activation *output*.
    pub fn backward<T: Real>(self, grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::LeakyRelu(s) => {
                let s = T::from_f64_lossy(s);
                grad_out.zip_map(output, |g, y| if y >= T::zero() { g } else { g * s })
            }
            Activation::Tanh => grad_out.zip_map(output, |g, y| g * (T::one() - y * y)),
            Activation::Identity => Ok(grad_out.clone()),
        }
    }
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, negative_slope: f64) -> Tensor<T> {
    let s = T::from_f64_lossy(negative_slope);
    x.map(|v| if v >= T::zero() { v } else { v * s })
}

pub fn tanh_act<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Mean over every spatial position of each channel: `C×T×H×W → C×1×1×1`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, s) = split_dims(x.dims())?;
    let vol: usize = s.iter().product();
    let inv = T::one() / T::from_usize(vol).unwrap();
    let data = x.data().chunks_exact(vol).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
    Ok(Tensor::from_parts(join_dims(x.rank(), n, c, [1, 1, 1]), data))
}

pub fn global_avg_pool_backward<T: Real>(grad_out: &Tensor<T>, input_dims: &[usize]) -> Result<Tensor<T>> {
    let (n, c, s) = split_dims(input_dims)?;
    if grad_out.numel() != n * c {
        return Err(shape_err!("pool gradient {:?} does not match input {input_dims:?}", grad_out.dims()));
    }
    let vol: usize = s.iter().product();
    let inv = T::one() / T::from_usize(vol).unwrap();
    let mut gx = Vec::with_capacity(n * c * vol);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat(g * inv).take(vol));
    }
    Ok(Tensor::from_parts(input_dims.to_vec(), gx))
}

/// Source channel of output channel `j` after shuffling `c` channels in
/// `groups` groups: view C as `groups × (C / groups)`, transpose, flatten.
pub fn shuffle_source(j: usize, channels: usize, groups: usize) -> usize {
    (j % groups) * (channels / groups) + j / groups
}

pub fn channel_shuffle<T: Real>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, s) = split_dims(x.dims())?;
    if groups == 0 || c % groups != 0 {
        return Err(spec_err!("channel shuffle: {c} channels not divisible by {groups} groups"));
    }
    let vol: usize = s.iter().product();
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..n {
        for j in 0..c {
            let src = (b * c + shuffle_source(j, c, groups)) * vol;
            out.extend_from_slice(&x.data()[src..src + vol]);
        }
    }
    Ok(Tensor::from_parts(x.dims().to_vec(), out))
}

/// Inverse permutation of [`channel_shuffle`].
pub fn channel_shuffle_backward<T: Real>(grad_out: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (_, c, _) = split_dims(grad_out.dims())?;
    if groups == 0 || c % groups != 0 {
        return Err(spec_err!("channel shuffle: {c} channels not divisible by {groups} groups"));
    }
    channel_shuffle(grad_out, c / groups)
}

/// Leading offsets for cropping `input` down to `target`; any odd remainder
/// is dropped from the trailing side.
fn crop_offsets(input: [usize; 3], target: [usize; 3]) -> Result<[usize; 3]> {
    for d in 0..3 {
        if target[d] == 0 || target[d] > input[d] {
            return Err(shape_err!("cannot crop {input:?} to {target:?}"));
        }
    }
    Ok(std::array::from_fn(|d| (input[d] - target[d]) / 2))
}

pub fn center_crop<T: Real>(x: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let (n, c, s) = split_dims(x.dims())?;
    let off = crop_offsets(s, target)?;
    let mut out = Vec::with_capacity(n * c * target.iter().product::<usize>());
    for nc in 0..n * c {
        for t in 0..target[0] {
            for h in 0..target[1] {
                let start = ((nc * s[0] + t + off[0]) * s[1] + h + off[1]) * s[2] + off[2];
                out.extend_from_slice(&x.data()[start..start + target[2]]);
            }
        }
    }
    Ok(Tensor::from_parts(join_dims(x.rank(), n, c, target), out))
}

pub fn center_crop_backward<T: Real>(grad_out: &Tensor<T>, input_dims: &[usize]) -> Result<Tensor<T>> {
    let (n, c, s) = split_dims(input_dims)?;
    let (_, _, target) = split_dims(grad_out.dims())?;
    let off = crop_offsets(s, target)?;
    let mut gx = Tensor::zeros(input_dims);
    let mut src = 0;
    for nc in 0..n * c {
        for t in 0..target[0] {
            for h in 0..target[1] {
                let start = ((nc * s[0] + t + off[0]) * s[1] + h + off[1]) * s[2] + off[2];
                gx.data_mut()[start..start + target[2]].copy_from_slice(&grad_out.data()[src..src + target[2]]);
                src += target[2];
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, Rng};

    #[test]
    fn activation_values() {
        let x = Tensor::new(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).data(), &[-0.1, 0.0, 2.0]);
        assert_eq!(tanh_act(&x).data()[1], 0.0);
        let big = Tensor::new(&[2], vec![-50.0f32, 50.0]).unwrap();
        assert!(tanh_act(&big).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn gap_means() {
        let x = Tensor::full(&[2, 3, 4, 5], 1.5f64);
        assert!(global_avg_pool(&x).unwrap().data().iter().all(|&v| v == 1.5));
        let x = Tensor::new(&[1, 4, 1, 1], vec![1.0f64, 2.0, 3.0, 6.0]).unwrap();
        let p = global_avg_pool(&x).unwrap();
        assert_eq!(p.dims(), &[1, 1, 1, 1]);
        assert_eq!(p.data(), &[3.0]);
        let g = global_avg_pool_backward(&Tensor::full(&[1, 1, 1, 1], 2.0), x.dims()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shuffle_eight_by_four() {
        let x = Tensor::from_fn(&[8, 1, 1, 1], |i| i as f64);
        let y = channel_shuffle(&x, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 4.0, 6.0, 1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn shuffle_identities() {
        let x = randn::<f32>(&mut Rng::new(1), &[2, 6, 2, 1, 3], 0.0, 1.0).unwrap();
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(channel_shuffle(&x, 6).unwrap(), x);
        for g in [2, 3] {
            let y = channel_shuffle(&x, g).unwrap();
            assert_eq!(channel_shuffle(&y, 6 / g).unwrap(), x);
            assert_eq!(channel_shuffle_backward(&y, g).unwrap(), x);
        }
        assert!(channel_shuffle(&x, 4).is_err());
    }

    #[test]
    fn shuffle_is_a_bijection() {
        let x = Tensor::from_fn(&[12, 2, 1, 1], |i| i as f64);
        let y = channel_shuffle(&x, 3).unwrap();
        let mut slices: Vec<Vec<u64>> = y.data().chunks(2).map(|c| c.iter().map(|v| v.to_bits()).collect()).collect();
        slices.sort();
        let mut orig: Vec<Vec<u64>> = x.data().chunks(2).map(|c| c.iter().map(|v| v.to_bits()).collect()).collect();
        orig.sort();
        assert_eq!(slices, orig);
    }

    #[test]
    fn crop_depth_360_to_350() {
        let x = Tensor::from_fn(&[1, 360, 1, 1], |i| i as f32);
        let y = center_crop(&x, [350, 1, 1]).unwrap();
        assert_eq!(y.data()[0], 5.0);
        assert_eq!(*y.data().last().unwrap(), 354.0);
        assert_eq!(center_crop(&x, [360, 1, 1]).unwrap(), x);
        assert!(center_crop(&x, [361, 1, 1]).is_err());
    }

    #[test]
    fn crop_removes_sentinel_border() {
        let (d, h, w) = (9, 8, 7);
        let mut x = Tensor::full(&[2, d, h, w], -999.0f64);
        for c in 0..2 {
            for t in 2..7 {
                for i in 1..7 {
                    for j in 1..6 {
                        x.data_mut()[((c * d + t) * h + i) * w + j] = (t + i + j) as f64;
                    }
                }
            }
        }
        let y = center_crop(&x, [5, 6, 5]).unwrap();
        assert!(y.data().iter().all(|&v| v != -999.0));
        let g = center_crop_backward(&y, x.dims()).unwrap();
        assert_eq!(g.numel(), x.numel());
        assert_eq!(g.sum(), y.sum());
    }
}
