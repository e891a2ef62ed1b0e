//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use invnet3d::arch::{desk_profile, ArchProfile, InputGeometry};
use invnet3d::seismic::{generate_dataset, Dataset, DatasetConfig};
use invnet3d::tensor::{Rng, Tensor};

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the analytic gradient of
/// `loss` at `x` and central differences, over `samples` random coordinates
/// (all of them when there are fewer). Coordinates where `skip` holds are
/// left out, e.g. points too close to a kink.
pub fn fd_rel_error(
    loss: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    samples: usize,
    rng: &mut Rng,
    skip: &dyn Fn(usize) -> bool,
) -> f64 {
    fd_rel_error_step(1e-6, loss, x, analytic, samples, rng, skip)
}

/// [`fd_rel_error`] with an explicit step; deep stacks have enough
/// curvature that the default step's truncation error dominates.
pub fn fd_rel_error_step(
    h: f64,
    loss: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    samples: usize,
    rng: &mut Rng,
    skip: &dyn Fn(usize) -> bool,
) -> f64 {
    let n = x.numel();
    let mut idx: Vec<usize> = (0..n).filter(|&i| !skip(i)).collect();
    rng.shuffle(&mut idx);
    idx.truncate(samples);
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut probe = x.clone();
    for &i in &idx {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = loss(&probe);
        probe.data_mut()[i] = v - h;
        let down = loss(&probe);
        probe.data_mut()[i] = v;
        let num = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        diff += (a - num).powi(2);
        na += a * a;
        nn += num * num;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}

/// Dataset and profile used by the desk-scale training runs.
pub struct DeskSetup {
    pub train: Dataset,
    pub val: Dataset,
    pub profile: ArchProfile,
}

pub const DESK_SAMPLES: usize = 64;
pub const DESK_VAL: usize = 8;
pub const DESK_TIME: usize = 64;

pub fn desk_setup(seed: u64) -> DeskSetup {
    let cfg = DatasetConfig { samples: DESK_SAMPLES, seed, time_samples: DESK_TIME, ..Default::default() };
    let mut train = generate_dataset(&cfg).expect("dataset");
    let val = train.split_off(DESK_VAL).expect("split");
    let d = train.samples[0].input.dims().to_vec();
    let v = cfg.velocity.dims;
    let profile = desk_profile(8, InputGeometry { channels: d[0], dims: [d[1], d[2], d[3]] }, v).expect("profile");
    DeskSetup { train, val, profile }
}
