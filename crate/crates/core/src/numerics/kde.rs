//! Gaussian kernel density estimation on the unit interval.
//!
//! Mass that a plain kernel would push outside [0, 1] is folded back by
//! reflecting every sample about both boundaries. The bandwidth follows
//! Silverman's rule of thumb.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MIN_KDE_SAMPLES: usize = 10;

/// A density tabulated on an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityEstimate {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() != density.len() || grid.len() < 2 {
            return Err(Error::validation(
                "density grid and values must match and have >= 2 points",
            ));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "density grid must be strictly increasing",
            ));
        }
        if density.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::validation("density values must be non-negative"));
        }
        Ok(Self { grid, density })
    }

    /// Piecewise-linear interpolation, zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let idx = g.partition_point(|&v| v <= x);
        if idx == 0 {
            return self.density[0];
        }
        if idx >= g.len() {
            return self.density[g.len() - 1];
        }
        let (x0, x1) = (g[idx - 1], g[idx]);
        let t = (x - x0) / (x1 - x0);
        self.density[idx - 1] * (1.0 - t) + self.density[idx] * t
    }

    /// Re-tabulates on a new grid.
    pub fn resample(&self, grid: &[f64]) -> DensityEstimate {
        DensityEstimate {
            grid: grid.to_vec(),
            density: grid.iter().map(|&x| self.value_at(x)).collect(),
        }
    }
}

/// Trapezoidal integral of a tabulated density.
pub fn trapezoid_integral(f: &DensityEstimate) -> f64 {
    f.grid
        .windows(2)
        .zip(f.density.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

pub fn unit_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Silverman's rule: 0.9 · min(sd, IQR/1.34) · n^{-1/5}.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Reflected Gaussian KDE of `samples` (all in [0, 1]) on a uniform grid of `grid_size` points.
pub fn kde_unit_interval(samples: &[f64], grid_size: usize) -> Result<DensityEstimate> {
    if samples.len() < MIN_KDE_SAMPLES {
        return Err(Error::Estimation(format!(
            "kernel density needs at least {MIN_KDE_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::domain(
            "kde_unit_interval samples must lie in [0, 1]",
        ));
    }
    if grid_size < 2 {
        return Err(Error::config("kde grid needs at least 2 points"));
    }
    let h = silverman_bandwidth(samples);
    if !(h > 0.0) {
        return Err(Error::Estimation(
            "degenerate sample: zero spread, bandwidth is 0".into(),
        ));
    }
    let grid = unit_grid(grid_size);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel = |u: f64| (-0.5 * u * u).exp();
    let cutoff = 8.0 * h;
    let density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let mut acc = 0.0;
                    for centre in [s, -s, 2.0 - s] {
                        let d = x - centre;
                        if d.abs() < cutoff {
                            acc += kernel(d / h);
                        }
                    }
                    acc
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let mut est = DensityEstimate { grid, density };
    // The reflected kernel is a density on [0, 1] up to trapezoid error; remove that residue.
    let mass = trapezoid_integral(&est);
    if mass > 0.0 {
        est.density.iter_mut().for_each(|d| *d /= mass);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;
    use rand::Rng;
    use rand_distr::{Beta, Distribution};

    #[test]
    fn trapezoid_examples() {
        let one = DensityEstimate::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!((trapezoid_integral(&one) - 1.0).abs() < 1e-15);
        let two = DensityEstimate::new(vec![0.0, 0.5], vec![2.0, 2.0]).unwrap();
        assert!((trapezoid_integral(&two) - 1.0).abs() < 1e-15);
        let grid = unit_grid(1001);
        let lin =
            DensityEstimate::new(grid.clone(), grid.iter().map(|x| 2.0 * x).collect()).unwrap();
        assert!((trapezoid_integral(&lin) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_estimate_rejects_bad_grid() {
        assert!(DensityEstimate::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DensityEstimate::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn uniform_samples_flat_density() {
        let mut rng = RngStream::new(2024, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let est = kde_unit_interval(&xs, 401).unwrap();
        assert!((trapezoid_integral(&est) - 1.0).abs() < 1e-3);
        for (x, d) in est.grid.iter().zip(&est.density) {
            if (0.1..=0.9).contains(x) {
                assert!((d - 1.0).abs() < 0.05, "density {d} at {x}");
            }
        }
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let xs = vec![0.5; 50];
        assert!(matches!(
            kde_unit_interval(&xs, 101),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        assert!(kde_unit_interval(&[0.1, 0.2, 0.3], 101).is_err());
    }

    #[test]
    fn beta22_mode_near_half() {
        let mut rng = RngStream::new(11, 3);
        let beta = Beta::new(2.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| beta.sample(&mut rng)).collect();
        let est = kde_unit_interval(&xs, 501).unwrap();
        let (imax, _) = est
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((est.grid[imax] - 0.5).abs() < 0.05);
    }
}
