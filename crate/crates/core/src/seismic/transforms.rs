use super::simulate::SeismicCube;
use crate::error::{arg_err, Error, Result};
use crate::tensor::{Real, Rng, Tensor};

/// Frame indices `round(i·(T-1)/(T_target-1))`; both endpoints always kept.
pub fn subsample_indices(t: usize, t_target: usize) -> Result<Vec<usize>> {
    if t_target == 0 || t_target > t {
        return Err(arg_err!("cannot subsample {t} frames to {t_target}"));
    }
    if t_target == 1 {
        return Ok(vec![0]);
    }
    Ok((0..t_target).map(|i| ((i * (t - 1)) as f64 / (t_target - 1) as f64).round() as usize).collect())
}

pub fn temporal_subsample(cube: &SeismicCube, t_target: usize) -> Result<SeismicCube> {
    let d = cube.data.dims();
    let (c, t, plane) = (d[0], d[1], d[2] * d[3]);
    let idx = subsample_indices(t, t_target)?;
    let mut out = Vec::with_capacity(c * t_target * plane);
    for ch in 0..c {
        for &i in &idx {
            let start = (ch * t + i) * plane;
            out.extend_from_slice(&cube.data.data()[start..start + plane]);
        }
    }
    let dt = if t_target > 1 { cube.dt * (t - 1) as f64 / (t_target - 1) as f64 } else { cube.dt };
    Ok(SeismicCube { data: Tensor::new(&[c, t_target, d[2], d[3]], out)?, dt, sources: cube.sources.clone() })
}

/// Channels `indices`, in that order.
pub fn select_sources(cube: &SeismicCube, indices: &[usize]) -> Result<SeismicCube> {
    let c = cube.channels();
    if indices.is_empty() {
        return Err(arg_err!("no source selected"));
    }
    for (k, &i) in indices.iter().enumerate() {
        if i >= c {
            return Err(arg_err!("source index {i} out of range for {c} sources"));
        }
        if indices[..k].contains(&i) {
            return Err(arg_err!("duplicate source index {i}"));
        }
    }
    let d = cube.data.dims();
    let per = cube.data.numel() / c;
    let mut out = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        out.extend_from_slice(&cube.data.data()[i * per..(i + 1) * per]);
    }
    Ok(SeismicCube {
        data: Tensor::new(&[indices.len(), d[1], d[2], d[3]], out)?,
        dt: cube.dt,
        sources: indices.iter().map(|&i| cube.sources[i]).collect(),
    })
}

/// Maps `[lo, hi]` onto `[-1, 1]`.
pub fn normalize_with<T: Real>(x: &Tensor<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    if !(hi > lo) {
        return Err(Error::DegenerateRange(format!("range [{lo}, {hi}] is empty")));
    }
    let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
    let two = T::from_f64_lossy(2.0);
    Ok(x.map(|v| two * (v - lo) / (hi - lo) - T::one()))
}

/// Returns the normalized tensor plus the min and max it was scaled by.
pub fn minmax_normalize<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, f64, f64)> {
    let (lo, hi) = x.min_max();
    let (lo, hi) = (lo.to_f64_lossy(), hi.to_f64_lossy());
    if !(hi > lo) {
        return Err(Error::DegenerateRange(format!("constant input {lo}")));
    }
    Ok((normalize_with(x, lo, hi)?.map(|v| v.max(-T::one()).min(T::one())), lo, hi))
}

pub fn denormalize<T: Real>(x: &Tensor<T>, lo: f64, hi: f64) -> Tensor<T> {
    let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
    let half = T::from_f64_lossy(0.5);
    x.map(|v| (v + T::one()) * half * (hi - lo) + lo)
}

/// Target signal-to-noise ratio in dB; `None` leaves the cube untouched.
pub fn add_gaussian_noise(cube: &SeismicCube, rng: &mut Rng, snr_db: Option<f64>) -> Result<SeismicCube> {
    let Some(snr) = snr_db else {
        return Ok(cube.clone());
    };
    if !snr.is_finite() {
        return Err(arg_err!("SNR must be finite, got {snr}"));
    }
    let power = cube.data.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / cube.data.numel() as f64;
    if power == 0.0 {
        return Err(Error::DegenerateSignal("cannot set an SNR on an all-zero signal".into()));
    }
    let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
    let mut data = cube.data.clone();
    for v in data.data_mut() {
        *v = (*v as f64 + sigma * rng.normal()) as f32;
    }
    Ok(SeismicCube { data, ..cube.clone() })
}

/// Second-order Butterworth high-pass section designed by the bilinear
/// transform with prewarping, in direct form II transposed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn butterworth_highpass(cutoff_hz: f64, dt: f64) -> Result<Self> {
        let nyquist = 0.5 / dt;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(arg_err!("cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"));
        }
        let k = (std::f64::consts::PI * cutoff_hz * dt).tan();
        let r2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + r2 * k + k * k);
        Ok(Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - r2 * k + k * k) * norm],
        })
    }

    /// Filters `x` in place, starting from rest.
    pub fn apply(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + s1;
            s1 = self.b[1] * *v - self.a[0] * y + s2;
            s2 = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

/// High-passes every trace along the time axis.
pub fn highpass_filter(cube: &SeismicCube, cutoff_hz: f64) -> Result<SeismicCube> {
    let filter = Biquad::butterworth_highpass(cutoff_hz, cube.dt)?;
    let d = cube.data.dims();
    let (c, t, plane) = (d[0], d[1], d[2] * d[3]);
    let mut out = cube.data.clone();
    let mut trace = vec![0f64; t];
    for ch in 0..c {
        for r in 0..plane {
            for (k, v) in trace.iter_mut().enumerate() {
                *v = cube.data.data()[(ch * t + k) * plane + r] as f64;
            }
            filter.apply(&mut trace);
            for (k, v) in trace.iter().enumerate() {
                out.data_mut()[(ch * t + k) * plane + r] = *v as f32;
            }
        }
    }
    Ok(SeismicCube { data: out, ..cube.clone() })
}
