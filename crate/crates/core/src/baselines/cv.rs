//! Choice of the embedding lag `τ` and depth `m` by held-out E-QESN error.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::evaluate::mspe;
use crate::model::build_embedding;
use crate::par::{map_indexed, Execution};
use crate::sampler::SamplerData;

use super::esn::{fit_eqesn, EsnConfig};

/// Share of the training span held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Validation MSPE of every grid point; `None` where the point does not fit
/// in the training span.
#[derive(Debug, Clone, PartialEq)]
pub struct CvScores {
    pub grid: Vec<(usize, usize)>,
    pub mspe: Vec<Option<f64>>,
    /// Selected `(τ, m)`.
    pub best: (usize, usize),
}

/// Scores each `(τ, m)` in `grid` on the last 20% of response times below
/// `train_end` after fitting on the pairs before them, and returns the
/// minimizer. Ties go to the smaller `(m, τ)`.
pub fn cv_embedding(
    raw_inputs: &DMatrix<f64>,
    raw_responses: &DMatrix<f64>,
    lead: usize,
    grid: &[(usize, usize)],
    train_end: usize,
    esn: &EsnConfig,
    exec: Execution,
) -> Result<CvScores> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty embedding grid".into()));
    }
    if train_end > raw_responses.ncols() || raw_inputs.ncols() != raw_responses.ncols() {
        return Err(Error::dims("cv series", raw_responses.ncols(), train_end));
    }
    let n_val = ((train_end as f64) * VALIDATION_FRACTION).ceil() as usize;
    let val_start = train_end.saturating_sub(n_val);
    let scores = map_indexed(exec, grid.len(), |g| {
        let (tau, m) = grid[g];
        score_point(raw_inputs, raw_responses, lead, tau, m, val_start, train_end, esn).ok()
    });
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by_key(|&g| (grid[g].1, grid[g].0));
    let mut best: Option<(usize, f64)> = None;
    for g in order {
        if let Some(s) = scores[g] {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((g, s));
            }
        }
    }
    let (g, _) = best.ok_or(Error::GridInfeasible { len: train_end })?;
    Ok(CvScores {
        grid: grid.to_vec(),
        mspe: scores,
        best: grid[g],
    })
}

#[allow(clippy::too_many_arguments)]
fn score_point(
    raw_x: &DMatrix<f64>,
    raw_y: &DMatrix<f64>,
    lead: usize,
    tau: usize,
    m: usize,
    val_start: usize,
    train_end: usize,
    esn: &EsnConfig,
) -> Result<f64> {
    let fit_data = SamplerData::paired(raw_x, raw_y, tau, m, lead, val_start)?;
    if fit_data.len() < 2 {
        return Err(Error::SeriesTooShort { len: fit_data.len(), span: 2 });
    }
    let model = fit_eqesn(&fit_data, esn, Execution::Sequential)?;
    let inputs = build_embedding(&raw_x.columns(0, train_end - lead).into_owned(), tau, m)?;
    let path = model.mean_path(&inputs, Execution::Sequential)?;
    let first_col = (val_start - lead)
        .checked_sub(inputs.t0)
        .ok_or(Error::InsufficientHistory { needed: inputs.t0, available: val_start - lead })?;
    let n = train_end - val_start;
    let pred = path.columns(first_col, n).into_owned();
    let truth = raw_y.columns(val_start, n).into_owned();
    mspe(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series() -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        DMatrix::from_fn(2, 120, |_, _| StandardNormal.sample(&mut rng))
    }

    fn small_esn() -> EsnConfig {
        EsnConfig { ensemble_size: 2, n_h: 6, ..EsnConfig::default() }
    }

    #[test]
    fn single_point_grid() {
        let y = series();
        let s = cv_embedding(&y, &y, 1, &[(0, 0)], 100, &small_esn(), Execution::Sequential).unwrap();
        assert_eq!(s.best, (0, 0));
    }

    #[test]
    fn deterministic_and_infeasible() {
        let y = series();
        let grid = [(1, 1), (2, 1), (1, 2)];
        let a = cv_embedding(&y, &y, 1, &grid, 100, &small_esn(), Execution::Sequential).unwrap();
        let b = cv_embedding(&y, &y, 1, &grid, 100, &small_esn(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let err = cv_embedding(&y, &y, 1, &[(50, 3)], 100, &small_esn(), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::GridInfeasible { .. }));
    }

    #[test]
    fn ties_prefer_smaller_m_then_tau() {
        // identical inputs make every grid point score the same on constant data
        let y = DMatrix::from_element(1, 60, 1.0);
        let mut x = DMatrix::zeros(1, 60);
        x.fill(0.5);
        let cfg = EsnConfig { ensemble_size: 1, n_h: 3, ridge_penalty: 1e9, ..EsnConfig::default() };
        let s = cv_embedding(&x, &y, 1, &[(2, 1), (1, 1), (1, 0)], 50, &cfg, Execution::Sequential).unwrap();
        assert_eq!(s.best, (1, 0));
    }
}
