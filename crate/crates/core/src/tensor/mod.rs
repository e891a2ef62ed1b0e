//! Dense row-major tensors, channel split/concat, seeded randomness and the
//! `RVT1` binary format.

mod io;
mod rng;

pub use io::{decode_tensor, encode_tensor, read_tensor, write_tensor, DType};
pub use rng::{randn, Rng};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Error, Result};

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense N-D array, outermost dimension first.
///
/// `data.len()` always equals the product of `dims`, and every dim is at
/// least one.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data[..8]", &preview)
            .finish()
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(shape_err!("tensor must have at least one dimension"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(shape_err!("dimension {pos} of {dims:?} is zero"));
    }
    Ok(dims.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_dims(dims)?;
        if n != data.len() {
            return Err(shape_err!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    /// Panics on an invalid shape; for internal use where the shape is
    /// known to be valid.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = check_dims(dims).expect("valid dims");
        Self { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = check_dims(dims).expect("valid dims");
        Self { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(value: T) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.dims.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).unwrap()
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.dims.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        )
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err!("shape mismatch: {:?} vs {:?}", self.dims, other.dims));
        }
        Ok(())
    }

    /// Splits along `axis`: the first part holds indices `[0, at)`.
    pub fn split_axis(&self, axis: usize, at: usize) -> Result<(Self, Self)> {
        let name = axis_name(self.rank(), axis);
        let len = *self.dims.get(axis).ok_or_else(|| Error::Range {
            axis: name,
            msg: format!("axis {axis} out of rank {}", self.rank()),
        })?;
        if at == 0 || at >= len {
            return Err(Error::Range {
                axis: name,
                msg: format!("split point {at} must lie in [1, {len})"),
            });
        }
        let outer: usize = self.dims[..axis].iter().product();
        let inner: usize = self.dims[axis + 1..].iter().product();
        let mut a = Vec::with_capacity(outer * at * inner);
        let mut b = Vec::with_capacity(outer * (len - at) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            a.extend_from_slice(&self.data[base..base + at * inner]);
            b.extend_from_slice(&self.data[base + at * inner..base + len * inner]);
        }
        let mut da = self.dims.clone();
        da[axis] = at;
        let mut db = self.dims.clone();
        db[axis] = len - at;
        Ok((Self::from_parts(da, a), Self::from_parts(db, b)))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat_axis(a: &Self, b: &Self, axis: usize) -> Result<Self> {
        let compatible = a.rank() == b.rank()
            && axis < a.rank()
            && a.dims.iter().zip(&b.dims).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(shape_err!(
                "cannot concatenate {:?} and {:?} along axis {axis}",
                a.dims,
                b.dims
            ));
        }
        let outer: usize = a.dims[..axis].iter().product();
        let inner: usize = a.dims[axis + 1..].iter().product();
        let (la, lb) = (a.dims[axis] * inner, b.dims[axis] * inner);
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for o in 0..outer {
            data.extend_from_slice(&a.data[o * la..(o + 1) * la]);
            data.extend_from_slice(&b.data[o * lb..(o + 1) * lb]);
        }
        let mut dims = a.dims.clone();
        dims[axis] += b.dims[axis];
        Ok(Self::from_parts(dims, data))
    }
}

fn axis_name(rank: usize, axis: usize) -> &'static str {
    if axis == channel_axis(rank) {
        "channel"
    } else if axis == 0 {
        "batch"
    } else {
        "spatial"
    }
}

/// Channel axis convention: rank-5 tensors are batched activations
/// `N×C×T×H×W`, everything else is channel-first.
pub fn channel_axis(rank: usize) -> usize {
    if rank == 5 {
        1
    } else {
        0
    }
}

/// Splits `x` into channels `[0, at)` and `[at, C)`.
pub fn channel_split<T: Real>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    x.split_axis(channel_axis(x.rank()), at)
}

/// Stacks the channels of `b` after those of `a`.
pub fn channel_concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::concat_axis(a, b, channel_axis(a.rank()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(dims: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(dims, |i| i as f64)
    }

    #[test]
    fn split_rows_in_order() {
        let x = iota(&[4, 2]);
        let (a, b) = channel_split(&x, 2).unwrap();
        assert_eq!(a.dims(), &[2, 2]);
        assert_eq!(a.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.data(), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn split_minimal() {
        let x = iota(&[2, 1]);
        let (a, b) = channel_split(&x, 1).unwrap();
        assert_eq!((a.dims(), b.dims()), (&[1usize, 1][..], &[1usize, 1][..]));
    }

    #[test]
    fn split_out_of_range_names_axis() {
        let x = iota(&[3, 2]);
        for at in [0, 3, 7] {
            match channel_split(&x, at) {
                Err(Error::Range { axis, .. }) => assert_eq!(axis, "channel"),
                other => panic!("expected range error, got {other:?}"),
            }
        }
    }

    #[test]
    fn concat_shapes() {
        let a = iota(&[1, 2]);
        let c = channel_concat(&a, &a).unwrap();
        assert_eq!(c.dims(), &[2, 2]);
        let a = Tensor::<f32>::zeros(&[3, 4, 2, 2]);
        let b = Tensor::<f32>::zeros(&[5, 4, 2, 2]);
        assert_eq!(channel_concat(&a, &b).unwrap().dims(), &[8, 4, 2, 2]);
    }

    #[test]
    fn concat_mismatch_lists_both_shapes() {
        let a = Tensor::<f32>::zeros(&[3, 4]);
        let b = Tensor::<f32>::zeros(&[3, 5]);
        let msg = channel_concat(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[3, 5]"), "{msg}");
    }

    #[test]
    fn batched_split_uses_axis_one() {
        let x = iota(&[2, 4, 1, 1, 3]);
        let (a, b) = channel_split(&x, 1).unwrap();
        assert_eq!(a.dims(), &[2, 1, 1, 1, 3]);
        assert_eq!(b.dims(), &[2, 3, 1, 1, 3]);
        assert_eq!(a.data(), &[0.0, 1.0, 2.0, 12.0, 13.0, 14.0]);
        assert_eq!(channel_concat(&a, &b).unwrap(), x);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(Tensor::<f32>::new(&[], vec![]).is_err());
        assert!(Tensor::<f32>::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn random_split_concat_round_trip() {
        let mut rng = Rng::new(3);
        let x = randn::<f32>(&mut rng, &[8, 3, 3, 3], 0.0, 1.0).unwrap();
        let (a, b) = channel_split(&x, 4).unwrap();
        let y = channel_concat(&a, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    mod props {
        use super::*;
        use crate::tensor::Rng;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_concat_bit_exact(
                dims in proptest::collection::vec(1usize..5, 1..5),
                extra in 2usize..6,
                at_frac in 0.0f64..1.0,
                seed in any::<u64>(),
            ) {
                let mut dims = dims;
                let ax = channel_axis(dims.len());
                dims[ax] = extra;
                let at = 1 + ((extra - 1) as f64 * at_frac) as usize;
                let at = at.min(extra - 1);
                let mut rng = Rng::new(seed);
                let x = randn::<f32>(&mut rng, &dims, 0.0, 1.0).unwrap();
                let (a, b) = channel_split(&x, at).unwrap();
                prop_assert_eq!(a.numel() + b.numel(), x.numel());
                prop_assert_eq!(a.data().len(), a.dims().iter().product::<usize>());
                let y = channel_concat(&a, &b).unwrap();
                prop_assert_eq!(y.dims(), x.dims());
                prop_assert!(y.data().iter().zip(x.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }
}
