//! Sample-based forecast distributions shared by every forecaster.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-location, per-horizon sample cloud.
///
/// `samples` is laid out `[draw][location][horizon]` (row-major, horizon
/// fastest). Summaries are pointwise: sample mean and type-7 2.5%/97.5%
/// quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution {
    pub samples: Vec<f64>,
    pub n_draws: usize,
    pub n_locations: usize,
    /// Response time index of each horizon column.
    pub times: Vec<usize>,
    pub lead: usize,
    pub mean: DMatrix<f64>,
    pub lower2_5: DMatrix<f64>,
    pub upper97_5: DMatrix<f64>,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ForecastDistribution {
    /// Builds the distribution and its summaries from raw samples.
    pub fn from_samples(
        samples: Vec<f64>,
        n_draws: usize,
        n_locations: usize,
        times: Vec<usize>,
        lead: usize,
    ) -> Result<Self> {
        let n_h = times.len();
        if samples.len() != n_draws * n_locations * n_h {
            return Err(Error::dims(
                "forecast samples",
                n_draws * n_locations * n_h,
                samples.len(),
            ));
        }
        if n_draws == 0 {
            return Err(Error::EmptySamples);
        }
        let mut fd = ForecastDistribution {
            samples,
            n_draws,
            n_locations,
            times,
            lead,
            mean: DMatrix::zeros(n_locations, n_h),
            lower2_5: DMatrix::zeros(n_locations, n_h),
            upper97_5: DMatrix::zeros(n_locations, n_h),
        };
        fd.summarize();
        Ok(fd)
    }

    pub fn n_horizons(&self) -> usize {
        self.times.len()
    }

    #[inline]
    fn index(&self, draw: usize, loc: usize, hor: usize) -> usize {
        (draw * self.n_locations + loc) * self.times.len() + hor
    }

    pub fn sample(&self, draw: usize, loc: usize, hor: usize) -> f64 {
        self.samples[self.index(draw, loc, hor)]
    }

    /// All draws for one cell.
    pub fn cell(&self, loc: usize, hor: usize) -> Vec<f64> {
        (0..self.n_draws)
            .map(|d| self.samples[self.index(d, loc, hor)])
            .collect()
    }

    fn summarize(&mut self) {
        for loc in 0..self.n_locations {
            for hor in 0..self.n_horizons() {
                let mut cell = self.cell(loc, hor);
                let mean = cell.iter().sum::<f64>() / cell.len() as f64;
                cell.sort_by(f64::total_cmp);
                self.mean[(loc, hor)] = mean;
                self.lower2_5[(loc, hor)] = quantile_sorted(&cell, 0.025);
                self.upper97_5[(loc, hor)] = quantile_sorted(&cell, 0.975);
            }
        }
    }

    /// Quantile interval at an arbitrary central level.
    pub fn interval(&self, level: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let lo_p = (1.0 - level) / 2.0;
        let mut lo = DMatrix::zeros(self.n_locations, self.n_horizons());
        let mut hi = lo.clone();
        for loc in 0..self.n_locations {
            for hor in 0..self.n_horizons() {
                let mut cell = self.cell(loc, hor);
                cell.sort_by(f64::total_cmp);
                lo[(loc, hor)] = quantile_sorted(&cell, lo_p);
                hi[(loc, hor)] = quantile_sorted(&cell, 1.0 - lo_p);
            }
        }
        (lo, hi)
    }

    /// Applies a per-location affine map `v -> v * scale[loc] + shift[loc]`
    /// to every sample (used to undo standardization).
    pub fn affine_per_location(&self, scale: &[f64], shift: &[f64]) -> Result<Self> {
        if scale.len() != self.n_locations || shift.len() != self.n_locations {
            return Err(Error::dims("affine_per_location", self.n_locations, scale.len()));
        }
        let mut samples = self.samples.clone();
        let nh = self.n_horizons();
        for (i, v) in samples.iter_mut().enumerate() {
            let loc = (i / nh) % self.n_locations;
            *v = *v * scale[loc] + shift[loc];
        }
        ForecastDistribution::from_samples(
            samples,
            self.n_draws,
            self.n_locations,
            self.times.clone(),
            self.lead,
        )
    }
}
