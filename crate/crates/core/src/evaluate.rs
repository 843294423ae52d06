//! Forecast verification: MSPE, empirical CRPS, interval coverage and
//! regional averages.
//!
//! Forecast and truth matrices are `locations × horizons`. CRPS totals are
//! sums over cells; divide by the cell count (or use [`MetricsReport::crps_mean`])
//! for the per-cell value.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::forecast::ForecastDistribution;
use crate::par::{map_indexed, Execution};

fn same_shape(ctx: &'static str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(ctx, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// Mean squared prediction error over every cell.
pub fn mspe(means: &DMatrix<f64>, truths: &DMatrix<f64>) -> Result<f64> {
    same_shape("mspe", means, truths)?;
    if means.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok((means - truths).norm_squared() / means.len() as f64)
}

/// CRPS of an empirical sample distribution against one observation:
/// `E|X − y| − ½ E|X − X′|` with both expectations over the samples.
pub fn crps_empirical(samples: &[f64], truth: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.iter().any(|v| !v.is_finite()) || !truth.is_finite() {
        return Err(Error::NonFinite("crps samples"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    Ok(crps_sorted(&x, truth))
}

fn crps_sorted(x: &[f64], truth: f64) -> f64 {
    let n = x.len() as f64;
    let mut abs_dev = 0.0;
    let mut spread = 0.0;
    for (i, &v) in x.iter().enumerate() {
        abs_dev += (v - truth).abs();
        // Σ_{i,j} |x_i − x_j| = 2 Σ_i (2i − n + 1) x_(i) over sorted x
        spread += (2.0 * i as f64 - n + 1.0) * v;
    }
    abs_dev / n - spread / (n * n)
}

/// Per-cell CRPS.
pub fn crps_cells(fc: &ForecastDistribution, truths: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
    same_shape("crps", &fc.mean, truths)?;
    if truths.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("crps truths"));
    }
    let (nl, nh) = truths.shape();
    let vals = map_indexed(exec, nl * nh, |c| {
        let (loc, hor) = (c % nl, c / nl);
        let mut cell = fc.cell(loc, hor);
        cell.sort_by(f64::total_cmp);
        crps_sorted(&cell, truths[(loc, hor)])
    });
    Ok(DMatrix::from_vec(nl, nh, vals))
}

/// Sum of CRPS over all cells.
pub fn crps_total(fc: &ForecastDistribution, truths: &DMatrix<f64>, exec: Execution) -> Result<f64> {
    Ok(crps_cells(fc, truths, exec)?.iter().sum())
}

/// Fraction of truths inside the central `level` quantile interval.
pub fn coverage(fc: &ForecastDistribution, truths: &DMatrix<f64>, level: f64) -> Result<f64> {
    same_shape("coverage", &fc.mean, truths)?;
    let (lo, hi) = if (level - 0.95).abs() < 1e-12 {
        (fc.lower2_5.clone(), fc.upper97_5.clone())
    } else {
        fc.interval(level)
    };
    interval_coverage(&lo, &hi, truths)
}

/// Fraction of `truths` with `lower <= truth <= upper`.
pub fn interval_coverage(lower: &DMatrix<f64>, upper: &DMatrix<f64>, truths: &DMatrix<f64>) -> Result<f64> {
    same_shape("coverage", lower, truths)?;
    same_shape("coverage", upper, truths)?;
    if truths.is_empty() {
        return Err(Error::EmptySamples);
    }
    let inside = truths
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(inside as f64 / truths.len() as f64)
}

/// Per-time mean of `fields` (`n_z × T`) over the locations where `mask`
/// is set.
pub fn region_index(fields: &DMatrix<f64>, mask: &[bool]) -> Result<Vec<f64>> {
    if mask.len() != fields.nrows() {
        return Err(Error::dims("region mask", fields.nrows(), mask.len()));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(fields
        .column_iter()
        .map(|c| c.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMetrics {
    pub location: usize,
    pub mspe: f64,
    pub crps: f64,
    pub coverage95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub name: String,
    pub mspe: f64,
    pub crps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub mspe: f64,
    pub crps_total: f64,
    pub coverage95: f64,
    pub n_cells: usize,
    pub per_location: Vec<LocationMetrics>,
    pub region: Option<RegionMetrics>,
}

impl MetricsReport {
    pub fn crps_mean(&self) -> f64 {
        self.crps_total / self.n_cells as f64
    }

    /// Scores a forecast against truths; `region` optionally adds metrics for
    /// the regional mean of the named mask.
    pub fn compute(
        model: &str,
        fc: &ForecastDistribution,
        truths: &DMatrix<f64>,
        region: Option<(&str, &[bool])>,
        exec: Execution,
    ) -> Result<Self> {
        let cells = crps_cells(fc, truths, exec)?;
        let (lo, hi) = (&fc.lower2_5, &fc.upper97_5);
        let per_location = (0..truths.nrows())
            .map(|l| {
                let row = |m: &DMatrix<f64>| m.rows(l, 1).into_owned();
                Ok(LocationMetrics {
                    location: l,
                    mspe: mspe(&row(&fc.mean), &row(truths))?,
                    crps: cells.row(l).sum(),
                    coverage95: interval_coverage(&row(lo), &row(hi), &row(truths))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let region = match region {
            Some((name, mask)) => Some(region_metrics(name, mask, fc, truths)?),
            None => None,
        };
        Ok(MetricsReport {
            model: model.to_string(),
            mspe: mspe(&fc.mean, truths)?,
            crps_total: cells.iter().sum(),
            coverage95: interval_coverage(lo, hi, truths)?,
            n_cells: truths.len(),
            per_location,
            region,
        })
    }

    /// CSV with one `all` row, one row per location and an optional region row.
    pub fn write_csv<W: Write>(&self, w: &mut W, average: bool) -> std::io::Result<()> {
        write_header(w, average)?;
        self.write_rows(w, average)
    }

    fn write_rows<W: Write>(&self, w: &mut W, average: bool) -> std::io::Result<()> {
        let crps = if average { self.crps_mean() } else { self.crps_total };
        writeln!(w, "{},all,{},{},{}", self.model, self.mspe, crps, self.coverage95)?;
        let per_loc_cells = (self.n_cells / self.per_location.len().max(1)).max(1) as f64;
        for l in &self.per_location {
            let c = if average { l.crps / per_loc_cells } else { l.crps };
            writeln!(w, "{},location_{},{},{},{}", self.model, l.location, l.mspe, c, l.coverage95)?;
        }
        if let Some(r) = &self.region {
            let c = if average { r.crps / (self.n_cells / self.per_location.len().max(1)).max(1) as f64 } else { r.crps };
            writeln!(w, "{},region_{},{},{},", self.model, r.name, r.mspe, c)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comments: &[String], average: bool) -> Result<()> {
        save_reports(path, std::slice::from_ref(self), comments, average)
    }
}

fn write_header<W: Write>(w: &mut W, average: bool) -> std::io::Result<()> {
    let crps_label = if average { "crps_mean" } else { "crps_total" };
    writeln!(w, "model,scope,mspe,{crps_label},coverage95")
}

/// Writes several reports into one CSV under a single header.
pub fn save_reports(path: &Path, reports: &[MetricsReport], comments: &[String], average: bool) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    (|| {
        for c in comments {
            writeln!(f, "# {c}")?;
        }
        write_header(&mut f, average)?;
        for r in reports {
            r.write_rows(&mut f, average)?;
        }
        f.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

fn region_metrics(name: &str, mask: &[bool], fc: &ForecastDistribution, truths: &DMatrix<f64>) -> Result<RegionMetrics> {
    let truth_idx = region_index(truths, mask)?;
    let mean_idx = region_index(&fc.mean, mask)?;
    let n = truth_idx.len();
    let mut se = 0.0;
    let mut crps = 0.0;
    for h in 0..n {
        se += (mean_idx[h] - truth_idx[h]).powi(2);
        let draws: Vec<f64> = (0..fc.n_draws)
            .map(|d| {
                let (s, c) = mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .fold((0.0, 0usize), |(s, c), (l, _)| (s + fc.sample(d, l, h), c + 1));
                s / c as f64
            })
            .collect();
        crps += crps_empirical(&draws, truth_idx[h])?;
    }
    Ok(RegionMetrics {
        name: name.to_string(),
        mspe: se / n as f64,
        crps,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>12} {:>12} {:>12} {:>10}", "model", "MSPE", "CRPS(sum)", "CRPS(mean)", "cov95")?;
        writeln!(
            f,
            "{:<12} {:>12.4} {:>12.4} {:>12.4} {:>10.3}",
            self.model,
            self.mspe,
            self.crps_total,
            self.crps_mean(),
            self.coverage95
        )?;
        if let Some(r) = &self.region {
            writeln!(f, "  region {}: MSPE {:.4}, CRPS {:.4}", r.name, r.mspe, r.crps)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn degenerate(values: &DMatrix<f64>, n_draws: usize) -> ForecastDistribution {
        let (nl, nh) = values.shape();
        let mut s = Vec::new();
        for _ in 0..n_draws {
            for l in 0..nl {
                for h in 0..nh {
                    s.push(values[(l, h)]);
                }
            }
        }
        ForecastDistribution::from_samples(s, n_draws, nl, (0..nh).collect(), 1).unwrap()
    }

    #[test]
    fn mspe_cases() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mspe(&t, &t).unwrap(), 0.0);
        assert_abs_diff_eq!(mspe(&t.add_scalar(0.5), &t).unwrap(), 0.25, epsilon = 1e-15);
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 5.0, 1.0]);
        // (1 + 0 + 4 + 9) / 4
        assert_abs_diff_eq!(mspe(&f, &t).unwrap(), 3.5, epsilon = 1e-15);
        assert!(mspe(&f, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn crps_cases() {
        assert_eq!(crps_empirical(&[0.0, 1.0], 0.5).unwrap(), 0.25);
        assert_eq!(crps_empirical(&[2.0], 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(crps_empirical(&[2.0], 5.0).unwrap(), 3.0, epsilon = 1e-15);
        assert!(matches!(crps_empirical(&[], 0.0), Err(Error::EmptySamples)));
    }

    #[test]
    fn perfect_forecasts_score_zero() {
        let t = DMatrix::from_fn(3, 4, |i, j| (i * 7 + j) as f64);
        let fc = degenerate(&t, 5);
        let r = MetricsReport::compute("m", &fc, &t, None, Execution::Sequential).unwrap();
        assert_eq!(r.mspe, 0.0);
        assert_eq!(r.crps_total, 0.0);
        assert_eq!(r.coverage95, 1.0);
    }

    #[test]
    fn crps_total_adds_over_locations() {
        let fc = ForecastDistribution::from_samples(vec![0.0, 1.0, 3.0, -1.0], 2, 1, vec![0, 1], 1).unwrap();
        let t = DMatrix::from_row_slice(1, 2, &[0.5, 0.0]);
        let one = crps_total(&fc, &t, Execution::Sequential).unwrap();
        let fc2 = ForecastDistribution::from_samples(
            vec![0.0, 1.0, 0.0, 1.0, 3.0, -1.0, 3.0, -1.0],
            2,
            2,
            vec![0, 1],
            1,
        )
        .unwrap();
        let t2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 0.0]);
        assert_abs_diff_eq!(crps_total(&fc2, &t2, Execution::Sequential).unwrap(), 2.0 * one, epsilon = 1e-14);
    }

    #[test]
    fn coverage_extremes() {
        let t = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let inf = DMatrix::from_element(1, 3, f64::INFINITY);
        assert_eq!(interval_coverage(&(-&inf), &inf, &t).unwrap(), 1.0);
        let wrong = t.add_scalar(1.0);
        assert_eq!(interval_coverage(&wrong, &wrong, &t).unwrap(), 0.0);
    }

    #[test]
    fn region_cases() {
        let f = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 3.0, 6.0, 9.0]);
        assert_eq!(region_index(&f, &[true, false]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(region_index(&f, &[true, true]).unwrap(), vec![2.0, 4.0, 6.0]);
        assert_eq!(region_index(&DMatrix::from_element(4, 2, 7.5), &[true; 4]).unwrap(), vec![7.5, 7.5]);
        assert!(matches!(region_index(&f, &[false, false]), Err(Error::EmptyRegion)));
    }

    proptest! {
        #[test]
        fn crps_permutation_invariant(mut xs in prop::collection::vec(-10.0f64..10.0, 1..40), y in -10.0f64..10.0) {
            let a = crps_empirical(&xs, y).unwrap();
            xs.reverse();
            let b = crps_empirical(&xs, y).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn crps_matches_pairwise_definition(xs in prop::collection::vec(-5.0f64..5.0, 1..25), y in -5.0f64..5.0) {
            let n = xs.len() as f64;
            let t1: f64 = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
            let t2: f64 = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).sum::<f64>() / (n * n);
            prop_assert!((crps_empirical(&xs, y).unwrap() - (t1 - 0.5 * t2)).abs() < 1e-10);
        }

        #[test]
        fn mspe_relabel_invariant(v in prop::collection::vec(-3.0f64..3.0, 6), w in prop::collection::vec(-3.0f64..3.0, 6)) {
            let a = DMatrix::from_vec(3, 2, v.clone());
            let b = DMatrix::from_vec(3, 2, w.clone());
            let perm = |m: &DMatrix<f64>| DMatrix::from_fn(3, 2, |i, j| m[((i + 1) % 3, j)]);
            prop_assert!((mspe(&a, &b).unwrap() - mspe(&perm(&a), &perm(&b)).unwrap()).abs() < 1e-12);
        }
    }
}
