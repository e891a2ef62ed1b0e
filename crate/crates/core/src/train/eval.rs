use serde::{Deserialize, Serialize};

use super::metrics::{mae, mse, ssim_volume};
use super::trainer::{check_geometry, stack_batch};
use crate::arch::Model;
use crate::error::{arg_err, Result};
use crate::nn::NormMode;
use crate::seismic::{add_gaussian_noise, denormalize, highpass_filter, normalize_with, Dataset, Sample};
use crate::tensor::{Rng, Tensor};

/// Input perturbations applied before inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTransform {
    pub snr_db: Option<f64>,
    pub cutoff_hz: Option<f64>,
    /// Noise realizations depend only on this seed and the sample index, so
    /// an SNR sweep scales one fixed noise field.
    pub noise_seed: u64,
}

impl EvalTransform {
    pub fn is_identity(&self) -> bool {
        self.snr_db.is_none() && self.cutoff_hz.is_none()
    }

    /// The sample's input after the transform, renormalized with the
    /// sample's stored range.
    pub fn apply(&self, sample: &Sample) -> Result<Tensor<f32>> {
        if self.is_identity() {
            return Ok(sample.input.clone());
        }
        let mut cube = sample.raw_cube();
        if let Some(c) = self.cutoff_hz {
            cube = highpass_filter(&cube, c)?;
        }
        if self.snr_db.is_some() {
            let mut rng = Rng::for_sample(self.noise_seed, sample.record.index as u64, 1);
            cube = add_gaussian_noise(&cube, &mut rng, self.snr_db)?;
        }
        normalize_with(&cube.data, sample.record.input_min, sample.record.input_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub mae: f64,
    pub rmse: f64,
    pub ssim: f64,
}

/// MAE and RMSE in velocity units over all voxels; SSIM on the normalized
/// scale, averaged over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub transform: EvalTransform,
    pub samples: Vec<SampleMetrics>,
}

pub fn evaluate(model: &mut Model<f32>, data: &Dataset, transform: &EvalTransform, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(arg_err!("nothing to evaluate"));
    }
    check_geometry(model, data)?;
    let mut per = Vec::with_capacity(data.len());
    let (mut abs_sum, mut sq_sum, mut ssim_sum) = (0.0, 0.0, 0.0);
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let inputs: Vec<Sample> = chunk
            .iter()
            .map(|s| Ok(Sample { input: transform.apply(s)?, ..s.clone() }))
            .collect::<Result<_>>()?;
        let refs: Vec<&Sample> = inputs.iter().collect();
        let (x, _) = stack_batch(&refs)?;
        let pred = model.forward(&x, NormMode::Eval)?;
        let per_sample = pred.numel() / chunk.len();
        for (k, s) in chunk.iter().enumerate() {
            let p = Tensor::new(s.target.dims(), pred.data()[k * per_sample..(k + 1) * per_sample].to_vec())?;
            let (lo, hi) = (s.record.velocity_min, s.record.velocity_max);
            let (pv, tv) = (denormalize(&p, lo, hi), denormalize(&s.target, lo, hi));
            let (m, q) = (mae(&pv, &tv)?, mse(&pv, &tv)?);
            let ssim = ssim_volume(&p, &s.target)?;
            abs_sum += m;
            sq_sum += q;
            ssim_sum += ssim;
            per.push(SampleMetrics { index: s.record.index, mae: m, rmse: q.sqrt(), ssim });
        }
    }
    let n = data.len() as f64;
    Ok(EvalReport { mae: abs_sum / n, rmse: (sq_sum / n).sqrt(), ssim: ssim_sum / n, transform: *transform, samples: per })
}
