use serde::{Deserialize, Serialize};

use super::velocity::VelocityVolume;
use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

/// Ricker wavelet `(1 - 2π²f²τ²)·exp(-π²f²τ²)` with `τ = t - t0`, sampled at
/// `t = i·dt`.
pub fn ricker(f0: f64, dt: f64, nt: usize, t0: f64) -> Vec<f64> {
    let a = (std::f64::consts::PI * f0).powi(2);
    (0..nt)
        .map(|i| {
            let tau2 = (i as f64 * dt - t0).powi(2);
            (1.0 - 2.0 * a * tau2) * (-a * tau2).exp()
        })
        .collect()
}

/// Largest stable time step of the 7-point scheme: `h / (v_max·√3)`.
pub fn cfl_limit(spacing: f64, v_max: f64) -> f64 {
    spacing / (v_max * 3f64.sqrt())
}

/// Surface sources and receivers plus time sampling. Positions are
/// `(height, width)` cells of the velocity grid; both sit one cell below the
/// free surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub sources: Vec<[usize; 2]>,
    pub receiver_grid: [usize; 2],
    pub receivers: Vec<[usize; 2]>,
    pub dt: f64,
    pub nt: usize,
    pub f0: f64,
    /// Wavelet delay in seconds.
    pub t0: f64,
    pub sponge_width: usize,
    /// Damping exponent at the outer edge of the sponge.
    pub sponge_strength: f64,
}

/// `n` cell indices spread evenly over `extent` cells.
pub fn spread(n: usize, extent: usize) -> Vec<usize> {
    (0..n).map(|i| (2 * i + 1) * extent / (2 * n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub n_sources: usize,
    pub receiver_grid: [usize; 2],
    pub nt: usize,
    pub f0: f64,
    /// Fraction of the stability limit used as time step.
    pub cfl_safety: f64,
    pub sponge_width: usize,
    pub sponge_strength: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_sources: 4,
            receiver_grid: [12, 12],
            nt: 512,
            f0: 15.0,
            cfl_safety: 0.8,
            sponge_width: 8,
            sponge_strength: 0.35,
        }
    }
}

impl AcquisitionConfig {
    /// Sources on the smallest near-square grid holding `n_sources`, filled
    /// row by row; receivers on a regular grid; `dt` from the stability
    /// limit at `v_max`.
    pub fn geometry(&self, surface: [usize; 2], spacing: f64, v_max: f64) -> Result<AcquisitionGeometry> {
        if self.n_sources == 0 || self.receiver_grid.contains(&0) || self.nt < 2 {
            return Err(arg_err!("acquisition needs sources, receivers and at least 2 time steps"));
        }
        if self.receiver_grid[0] > surface[0] || self.receiver_grid[1] > surface[1] {
            return Err(arg_err!("receiver grid {:?} exceeds surface {surface:?}", self.receiver_grid));
        }
        if !(self.f0 > 0.0) || !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(arg_err!("wavelet frequency and CFL safety factor must be positive"));
        }
        let sx = (self.n_sources as f64).sqrt().ceil() as usize;
        let sy = self.n_sources.div_ceil(sx);
        if sx > surface[0] || sy > surface[1] {
            return Err(arg_err!("{} sources do not fit on surface {surface:?}", self.n_sources));
        }
        let (rows, cols) = (spread(sx, surface[0]), spread(sy, surface[1]));
        let sources = rows.iter().flat_map(|&r| cols.iter().map(move |&c| [r, c])).take(self.n_sources).collect();
        let (rr, rc) = (spread(self.receiver_grid[0], surface[0]), spread(self.receiver_grid[1], surface[1]));
        let receivers = rr.iter().flat_map(|&r| rc.iter().map(move |&c| [r, c])).collect();
        Ok(AcquisitionGeometry {
            sources,
            receiver_grid: self.receiver_grid,
            receivers,
            dt: self.cfl_safety * cfl_limit(spacing, v_max),
            nt: self.nt,
            f0: self.f0,
            t0: 1.5 / self.f0,
            sponge_width: self.sponge_width,
            sponge_strength: self.sponge_strength,
        })
    }
}

/// Multi-source seismogram, laid out source × time × receiver rows ×
/// receiver columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SeismicCube {
    pub data: Tensor<f32>,
    pub dt: f64,
    /// Original source index of each channel.
    pub sources: Vec<usize>,
}

impl SeismicCube {
    pub fn channels(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn nt(&self) -> usize {
        self.data.dims()[1]
    }
}

/// Padded simulation grid: the velocity volume plus a sponge of
/// `sponge_width` cells below and on all four sides. Row 0 is the free
/// surface.
struct Grid {
    dims: [usize; 3],
    pad: usize,
    courant2: Vec<f32>,
    damping: Vec<f32>,
}

impl Grid {
    fn new(vel: &VelocityVolume, geom: &AcquisitionGeometry) -> Self {
        let [d, h, w] = vel.dims();
        let pad = geom.sponge_width;
        let dims = [d + pad, h + 2 * pad, w + 2 * pad];
        let n = dims.iter().product();
        let mut courant2 = vec![0f32; n];
        let mut damping = vec![1f32; n];
        let k = (geom.dt / vel.spacing).powi(2);
        let v = vel.values.data();
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let (vz, vy, vx) = (z.min(d - 1), y.saturating_sub(pad).min(h - 1), x.saturating_sub(pad).min(w - 1));
                    let i = (z * dims[1] + y) * dims[2] + x;
                    courant2[i] = (k * (v[(vz * h + vy) * w + vx] as f64).powi(2)) as f32;
                    let depth_in = (z + 1).saturating_sub(d);
                    let side_y = pad.saturating_sub(y).max((y + 1).saturating_sub(h + pad));
                    let side_x = pad.saturating_sub(x).max((x + 1).saturating_sub(w + pad));
                    let into = depth_in.max(side_y).max(side_x);
                    if into > 0 {
                        let r = geom.sponge_strength * into as f64 / pad as f64;
                        damping[i] = (-r * r).exp() as f32;
                    }
                }
            }
        }
        Self { dims, pad, courant2, damping }
    }

    fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y + self.pad) * self.dims[2] + x + self.pad
    }
}

fn check_geometry(vel: &VelocityVolume, geom: &AcquisitionGeometry) -> Result<()> {
    let limit = cfl_limit(vel.spacing, vel.max());
    if !(geom.dt > 0.0) || geom.dt > limit {
        return Err(Error::Stability(format!(
            "time step {} s exceeds the stability limit {limit} s for v_max {} m/s",
            geom.dt,
            vel.max()
        )));
    }
    let [d, h, w] = vel.dims();
    if d < 2 {
        return Err(arg_err!("velocity volume needs at least 2 depth cells"));
    }
    for p in geom.sources.iter().chain(&geom.receivers) {
        if p[0] >= h || p[1] >= w {
            return Err(arg_err!("surface position {p:?} lies outside {h}×{w}"));
        }
    }
    if geom.receivers.len() != geom.receiver_grid[0] * geom.receiver_grid[1] {
        return Err(arg_err!("receiver list does not match grid {:?}", geom.receiver_grid));
    }
    if geom.sponge_width == 0 {
        return Err(arg_err!("sponge width must be positive"));
    }
    Ok(())
}

/// Pressure recorded at every receiver for one source injecting `wavelet`
/// at surface cell `source`; returns `nt × receivers` samples.
pub fn simulate_shot(vel: &VelocityVolume, geom: &AcquisitionGeometry, source: [usize; 2], wavelet: &[f64]) -> Result<Vec<f32>> {
    check_geometry(vel, geom)?;
    let grid = Grid::new(vel, geom);
    let [nz, ny, nx] = grid.dims;
    let plane = ny * nx;
    let n = nz * plane;
    let (mut prev, mut cur, mut next) = (vec![0f32; n], vec![0f32; n], vec![0f32; n]);
    let src = grid.index(1, source[0], source[1]);
    let rec: Vec<usize> = geom.receivers.iter().map(|r| grid.index(1, r[0], r[1])).collect();
    let mut out = Vec::with_capacity(geom.nt * rec.len());
    for step in 0..geom.nt {
        out.extend(rec.iter().map(|&i| cur[i]));
        for z in 1..nz - 1 {
            for y in 1..ny - 1 {
                let row = z * plane + y * nx;
                for i in row + 1..row + nx - 1 {
                    let lap = cur[i - 1] + cur[i + 1] + cur[i - nx] + cur[i + nx] + cur[i - plane] + cur[i + plane]
                        - 6.0 * cur[i];
                    next[i] = 2.0 * cur[i] - prev[i] + grid.courant2[i] * lap;
                }
            }
        }
        next[src] += grid.courant2[src] * wavelet.get(step).copied().unwrap_or(0.0) as f32;
        for ((nv, cv), &dmp) in next.iter_mut().zip(cur.iter_mut()).zip(&grid.damping) {
            *nv *= dmp;
            *cv *= dmp;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("wavefield became non-finite".into()));
    }
    Ok(out)
}

/// One independent run per source; channel `c` holds source `c`.
pub fn fd_simulate(vel: &VelocityVolume, geom: &AcquisitionGeometry) -> Result<SeismicCube> {
    check_geometry(vel, geom)?;
    if geom.sources.is_empty() {
        return Err(arg_err!("no sources"));
    }
    let wavelet = ricker(geom.f0, geom.dt, geom.nt, geom.t0);
    let mut data = Vec::with_capacity(geom.sources.len() * geom.nt * geom.receivers.len());
    for &s in &geom.sources {
        data.extend(simulate_shot(vel, geom, s, &wavelet)?);
    }
    let dims = [geom.sources.len(), geom.nt, geom.receiver_grid[0], geom.receiver_grid[1]];
    Ok(SeismicCube { data: Tensor::new(&dims, data)?, dt: geom.dt, sources: (0..geom.sources.len()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_shape() {
        let (f0, dt) = (15.0, 1e-4);
        let t0 = 0.1;
        let w = ricker(f0, dt, 2001, t0);
        assert!((w[1000] - 1.0).abs() < 1e-12);
        let tz = 1.0 / (std::f64::consts::PI * f0 * 2f64.sqrt());
        let z = ricker(f0, dt, 1, tz)[0];
        assert!(z.abs() < 1e-9);
        assert!(w.iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn ricker_spectrum_peak() {
        // discrete Fourier oracle
        let (f0, dt, nt) = (15.0, 1e-3, 2048);
        assert!(nt as f64 * dt >= 16.0 / f0);
        let w = ricker(f0, dt, nt, 0.5);
        let df = 1.0 / (nt as f64 * dt);
        let mag = |k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in w.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / nt as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re.hypot(im)
        };
        let peak = (1..nt / 8).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        assert!((peak as f64 * df - f0).abs() <= df, "{}", peak as f64 * df);
    }

    #[test]
    fn spread_positions() {
        assert_eq!(spread(2, 24), vec![6, 18]);
        assert_eq!(spread(12, 24), (0..12).map(|i| 2 * i + 1).collect::<Vec<_>>());
    }

    #[test]
    fn config_geometry() {
        let g = AcquisitionConfig::default().geometry([24, 24], 10.0, 4500.0).unwrap();
        assert_eq!(g.sources, vec![[6, 6], [6, 18], [18, 6], [18, 18]]);
        assert_eq!(g.receivers.len(), 144);
        assert!((g.dt - 0.8 * 10.0 / (4500.0 * 3f64.sqrt())).abs() < 1e-15);
        let nine = AcquisitionConfig { n_sources: 9, ..Default::default() };
        assert_eq!(nine.geometry([24, 24], 10.0, 4500.0).unwrap().sources.len(), 9);
    }

    fn small() -> (VelocityVolume, AcquisitionGeometry) {
        let vel = VelocityVolume::homogeneous([10, 10, 10], 2000.0, 10.0);
        let cfg = AcquisitionConfig { n_sources: 1, receiver_grid: [5, 5], nt: 64, sponge_width: 4, ..Default::default() };
        let geom = cfg.geometry([10, 10], 10.0, 2000.0).unwrap();
        (vel, geom)
    }

    #[test]
    fn zero_source_records_nothing() {
        let (vel, geom) = small();
        let out = simulate_shot(&vel, &geom, geom.sources[0], &vec![0.0; geom.nt]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfl_violation_rejected() {
        let (vel, mut geom) = small();
        geom.dt = 1.01 * cfl_limit(10.0, 2000.0);
        assert!(matches!(fd_simulate(&vel, &geom), Err(Error::Stability(_))));
    }

    #[test]
    fn cube_layout() {
        let (vel, geom) = small();
        let cube = fd_simulate(&vel, &geom).unwrap();
        assert_eq!(cube.data.dims(), &[1, 64, 5, 5]);
        assert!(cube.data.max_abs() > 0.0);
    }
}
