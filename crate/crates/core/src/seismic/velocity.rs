use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::tensor::{Rng, Tensor};

/// Grid of wave speeds in m/s, laid out depth × height × width.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityVolume {
    pub values: Tensor<f32>,
    /// Meters per cell along every axis.
    pub spacing: f64,
}

impl VelocityVolume {
    pub fn homogeneous(dims: [usize; 3], v: f32, spacing: f64) -> Self {
        Self { values: Tensor::full(&dims, v), spacing }
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.values.dims();
        [d[0], d[1], d[2]]
    }

    pub fn max(&self) -> f64 {
        self.values.min_max().1 as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocityConfig {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub n_layers: usize,
    /// Interface depths (cells); drawn at random when empty.
    pub boundaries: Vec<usize>,
    /// Chance that a sample carries a low-velocity lens.
    pub lens_probability: f64,
    /// Relative velocity reduction inside the lens.
    pub lens_fraction: f64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            dims: [24, 24, 24],
            spacing: 10.0,
            v_min: 1500.0,
            v_max: 4500.0,
            n_layers: 4,
            boundaries: Vec::new(),
            lens_probability: 0.5,
            lens_fraction: 0.2,
        }
    }
}

impl VelocityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(arg_err!("velocity range [{}, {}] is invalid", self.v_min, self.v_max));
        }
        if self.n_layers < 2 {
            return Err(arg_err!("need at least 2 layers, got {}", self.n_layers));
        }
        if self.dims.contains(&0) || self.n_layers > self.dims[0] {
            return Err(arg_err!("{} layers do not fit in dims {:?}", self.n_layers, self.dims));
        }
        if !(self.spacing > 0.0) {
            return Err(arg_err!("spacing must be positive"));
        }
        if !self.boundaries.is_empty() {
            let ok = self.boundaries.len() == self.n_layers - 1
                && self.boundaries.windows(2).all(|w| w[0] < w[1])
                && self.boundaries[0] > 0
                && *self.boundaries.last().unwrap() < self.dims[0];
            if !ok {
                return Err(arg_err!("boundaries {:?} must be {} increasing depths inside the volume", self.boundaries, self.n_layers - 1));
            }
        }
        if !(0.0..=1.0).contains(&self.lens_probability) || !(0.0..1.0).contains(&self.lens_fraction) {
            return Err(arg_err!("lens probability and fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Horizontally layered volume whose velocities increase with depth, with an
/// optional ellipsoidal lens slower than every layer.
pub fn gen_layered_velocity(rng: &mut Rng, cfg: &VelocityConfig) -> Result<VelocityVolume> {
    cfg.validate()?;
    let [d, h, w] = cfg.dims;
    let boundaries = if cfg.boundaries.is_empty() {
        let mut depths: Vec<usize> = (1..d).collect();
        rng.shuffle(&mut depths);
        let mut b = depths[..cfg.n_layers - 1].to_vec();
        b.sort_unstable();
        b
    } else {
        cfg.boundaries.clone()
    };
    let mut speeds: Vec<f64> = (0..cfg.n_layers).map(|_| rng.uniform_range(cfg.v_min, cfg.v_max)).collect();
    speeds.sort_by(f64::total_cmp);
    let layer_of = |z: usize| boundaries.iter().take_while(|&&b| b <= z).count();
    let mut values = Tensor::from_fn(&cfg.dims, |i| speeds[layer_of(i / (h * w))] as f32);

    if rng.uniform() < cfg.lens_probability {
        let slow = (speeds[0] * (1.0 - cfg.lens_fraction)).max(cfg.v_min) as f32;
        let center = [rng.uniform() * d as f64, rng.uniform() * h as f64, rng.uniform() * w as f64];
        let radius = [
            rng.uniform_range(1.5, (d as f64 / 4.0).max(2.0)),
            rng.uniform_range(2.0, (h as f64 / 3.0).max(2.5)),
            rng.uniform_range(2.0, (w as f64 / 3.0).max(2.5)),
        ];
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            let p = [(i / (h * w)) as f64 + 0.5, (i / w % h) as f64 + 0.5, (i % w) as f64 + 0.5];
            let r2: f64 = (0..3).map(|k| ((p[k] - center[k]) / radius[k]).powi(2)).sum();
            if r2 <= 1.0 {
                *v = slow;
            }
        }
    }
    Ok(VelocityVolume { values, spacing: cfg.spacing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> VelocityConfig {
        VelocityConfig { dims: [12, 6, 6], ..Default::default() }
    }

    #[test]
    fn two_layers_split_at_boundary() {
        let c = VelocityConfig { n_layers: 2, boundaries: vec![5], lens_probability: 0.0, ..cfg() };
        let v = gen_layered_velocity(&mut Rng::new(1), &c).unwrap();
        let top = v.values.data()[0];
        let bottom = *v.values.data().last().unwrap();
        assert!(top < bottom);
        for (i, &x) in v.values.data().iter().enumerate() {
            assert_eq!(x, if i / 36 < 5 { top } else { bottom });
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let c = cfg();
        let a = gen_layered_velocity(&mut Rng::new(9), &c).unwrap();
        assert_eq!(a, gen_layered_velocity(&mut Rng::new(9), &c).unwrap());
        let (lo, hi) = a.values.min_max();
        assert!(lo as f64 >= c.v_min && hi as f64 <= c.v_max);
    }

    #[test]
    fn lens_is_slowest() {
        let c = VelocityConfig { lens_probability: 1.0, ..cfg() };
        for seed in 0..10 {
            let v = gen_layered_velocity(&mut Rng::new(seed), &VelocityConfig { lens_probability: 0.0, ..c.clone() })
                .unwrap();
            let background_min = v.values.min_max().0;
            let with_lens = gen_layered_velocity(&mut Rng::new(seed), &c).unwrap();
            assert!(with_lens.values.min_max().0 < background_min, "seed {seed}");
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            VelocityConfig { v_min: 0.0, ..cfg() },
            VelocityConfig { v_min: 3000.0, v_max: 2000.0, ..cfg() },
            VelocityConfig { n_layers: 1, ..cfg() },
            VelocityConfig { n_layers: 3, boundaries: vec![4, 2], ..cfg() },
        ];
        for c in bad {
            assert!(gen_layered_velocity(&mut Rng::new(0), &c).is_err(), "{c:?}");
        }
    }
}
