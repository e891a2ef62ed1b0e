//! Synthetic dataset generation and the on-disk dataset directory:
//! `manifest.jsonl` with one record per sample, plus one RVT1 tensor file
//! for each sample's input and target.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate::{fd_simulate, AcquisitionConfig, SeismicCube};
use super::transforms::{minmax_normalize, normalize_with, select_sources, temporal_subsample};
use super::velocity::{gen_layered_velocity, VelocityConfig};
use crate::error::{arg_err, Error, Result};
use crate::tensor::{read_tensor, write_tensor, Rng, Tensor};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub samples: usize,
    pub seed: u64,
    pub velocity: VelocityConfig,
    pub acquisition: AcquisitionConfig,
    /// Frames kept after uniform subsampling.
    pub time_samples: usize,
    /// Sources kept, in order; all when empty.
    pub source_indices: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            seed: 0,
            velocity: VelocityConfig::default(),
            acquisition: AcquisitionConfig::default(),
            time_samples: 64,
            source_indices: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub input: String,
    pub target: String,
    pub input_dims: Vec<usize>,
    pub target_dims: Vec<usize>,
    /// Range the seismic input was normalized from.
    pub input_min: f64,
    pub input_max: f64,
    /// Range the velocity target was normalized from, in m/s.
    pub velocity_min: f64,
    pub velocity_max: f64,
    /// Time step of the subsampled input, in seconds.
    pub dt: f64,
    pub sources: Vec<usize>,
}

/// Normalized input (`C×T×H×W`) and target (`1×D×H×W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub record: SampleRecord,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl Sample {
    /// Input back in simulation units.
    pub fn raw_cube(&self) -> SeismicCube {
        let r = &self.record;
        SeismicCube {
            data: super::transforms::denormalize(&self.input, r.input_min, r.input_max),
            dt: r.dt,
            sources: r.sources.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

/// Simulates and preprocesses sample `index`; independent of every other
/// sample.
pub fn generate_sample(cfg: &DatasetConfig, index: usize) -> Result<Sample> {
    let vcfg = &cfg.velocity;
    let mut rng = Rng::for_sample(cfg.seed, index as u64, 0);
    let vel = gen_layered_velocity(&mut rng, vcfg)?;
    let geom = cfg.acquisition.geometry([vcfg.dims[1], vcfg.dims[2]], vcfg.spacing, vcfg.v_max)?;
    let mut cube = fd_simulate(&vel, &geom)?;
    if !cfg.source_indices.is_empty() {
        cube = select_sources(&cube, &cfg.source_indices)?;
    }
    cube = temporal_subsample(&cube, cfg.time_samples)?;
    let (input, lo, hi) = minmax_normalize(&cube.data)?;
    let d = vcfg.dims;
    let target = normalize_with(&vel.values, vcfg.v_min, vcfg.v_max)?.reshape(&[1, d[0], d[1], d[2]])?;
    let record = SampleRecord {
        index,
        seed: cfg.seed,
        input: format!("sample_{index:05}_input.rvt"),
        target: format!("sample_{index:05}_target.rvt"),
        input_dims: input.dims().to_vec(),
        target_dims: target.dims().to_vec(),
        input_min: lo,
        input_max: hi,
        velocity_min: vcfg.v_min,
        velocity_max: vcfg.v_max,
        dt: cube.dt,
        sources: cube.sources,
    };
    Ok(Sample { record, input, target })
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.samples == 0 {
        return Err(arg_err!("dataset needs at least one sample"));
    }
    let samples = (0..cfg.samples).into_par_iter().map(|i| generate_sample(cfg, i)).collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Moves the last `n` samples into a second dataset.
    pub fn split_off(&mut self, n: usize) -> Result<Dataset> {
        if n >= self.samples.len() {
            return Err(arg_err!("cannot hold out {n} of {} samples", self.samples.len()));
        }
        let at = self.samples.len() - n;
        Ok(Dataset { samples: self.samples.split_off(at) })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST);
        let mut manifest = Vec::new();
        for s in &self.samples {
            write_tensor(&dir.join(&s.record.input), &s.input)?;
            write_tensor(&dir.join(&s.record.target), &s.target)?;
            serde_json::to_writer(&mut manifest, &s.record)?;
            manifest.push(b'\n');
        }
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path: PathBuf = dir.join(MANIFEST);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut samples = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)?;
            let input: Tensor<f32> = read_tensor(&dir.join(&record.input))?;
            let target: Tensor<f32> = read_tensor(&dir.join(&record.target))?;
            if input.dims() != record.input_dims || target.dims() != record.target_dims {
                return Err(Error::Format(format!("sample {} does not match its manifest record", record.index)));
            }
            samples.push(Sample { record, input, target });
        }
        if samples.is_empty() {
            return Err(Error::Format(format!("{} lists no samples", path.display())));
        }
        Ok(Self { samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            samples: 3,
            seed: 5,
            velocity: VelocityConfig { dims: [8, 8, 8], ..Default::default() },
            acquisition: AcquisitionConfig { receiver_grid: [4, 4], nt: 48, sponge_width: 4, ..Default::default() },
            time_samples: 16,
            source_indices: vec![3, 0],
        }
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let cfg = tiny();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let s = &a.samples[1];
        assert_eq!(s.input.dims(), &[2, 16, 4, 4]);
        assert_eq!(s.target.dims(), &[1, 8, 8, 8]);
        assert_eq!(s.record.sources, vec![3, 0]);
        let (lo, hi) = s.input.min_max();
        assert_eq!((lo, hi), (-1.0, 1.0));
        let (lo, hi) = s.target.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
        assert_ne!(a.samples[0].target, a.samples[1].target);
        assert_eq!(generate_sample(&cfg, 1).unwrap(), a.samples[1]);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&tiny()).unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
        let raw = ds.samples[0].raw_cube();
        assert!((raw.data.min_max().1 as f64 - ds.samples[0].record.input_max).abs() < 1e-6 * ds.samples[0].record.input_max.abs().max(1e-30));
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(generate_dataset(&DatasetConfig { samples: 0, ..tiny() }).is_err());
    }
}
