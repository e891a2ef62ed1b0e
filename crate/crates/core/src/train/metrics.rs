use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Mean absolute difference and its gradient `sign(pred - target) / N`
/// (zero at ties).
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.expect_same_shape(target)?;
    let n = pred.numel() as f64;
    let loss = pred.data().iter().zip(target.data()).map(|(p, t)| (*p - *t).abs().to_f64_lossy()).sum::<f64>() / n;
    let inv = T::from_f64_lossy(1.0 / n);
    let grad = pred.zip_map(target, |p, t| {
        if p > t {
            inv
        } else if p < t {
            -inv
        } else {
            T::zero()
        }
    })?;
    Ok((loss, grad))
}

pub fn mae<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target)?;
    Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p.to_f64_lossy() - t.to_f64_lossy()).abs()).sum::<f64>()
        / pred.numel() as f64)
}

pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target)?;
    Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p.to_f64_lossy() - t.to_f64_lossy()).powi(2)).sum::<f64>()
        / pred.numel() as f64)
}

pub fn rmse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(mse(pred, target)?.sqrt())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of data normalized to `[-1, 1]`.
pub const SSIM_RANGE: f64 = 2.0;

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over every fully contained window position.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h×w` images.
pub fn ssim_2d(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(shape_err!("images of {} and {} values are not {h}×{w}", a.len(), b.len()));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("{h}×{w} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"));
    }
    let k = gaussian_1d();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean over depth slices of the 2-D SSIM of each `H×W` slice. Accepts
/// `D×H×W` or `1×D×H×W` volumes normalized to `[-1, 1]`.
pub fn ssim_volume<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let d = pred.dims();
    let (depth, h, w) = match *d {
        [depth, h, w] | [1, depth, h, w] => (depth, h, w),
        _ => return Err(shape_err!("expected a D×H×W volume, got {d:?}")),
    };
    let plane = h * w;
    let a: Vec<f64> = pred.data().iter().map(|v| v.to_f64_lossy()).collect();
    let b: Vec<f64> = target.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut sum = 0.0;
    for z in 0..depth {
        sum += ssim_2d(&a[z * plane..(z + 1) * plane], &b[z * plane..(z + 1) * plane], h, w)?;
    }
    Ok(sum / depth as f64)
}
