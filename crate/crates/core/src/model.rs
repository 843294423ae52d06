//! Deterministic core of the recurrent model: delay embedding of the inputs,
//! the scaled tanh hidden-state recursion and the quadratic data-stage mean.
//!
//! Nothing here draws random numbers. Inputs and responses are assumed to be
//! standardized already (see [`crate::pipeline`]).

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use crate::error::{Error, Result};

/// Largest `n_h` for which the dominant eigenvalue comes from a dense
/// eigen-decomposition; larger matrices use power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 64;

/// Lagged input matrix with an intercept row.
///
/// Column `j` belongs to raw time `t0 + j` and stacks
/// `[1, X_t, X_{t-tau}, ..., X_{t-m*tau}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSeries {
    pub values: DMatrix<f64>,
    pub tau: usize,
    pub m: usize,
    pub t0: usize,
    pub n_x: usize,
}

impl EmbeddedSeries {
    /// Number of usable time columns.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Input dimension including the intercept, `(m+1)·n_x + 1`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Column index for a raw time index, if that time is embedded.
    pub fn column_of(&self, raw_time: usize) -> Option<usize> {
        raw_time
            .checked_sub(self.t0)
            .filter(|&j| j < self.len())
    }

    /// Keeps columns `start..end` (column indices, not raw times).
    pub fn slice(&self, start: usize, end: usize) -> EmbeddedSeries {
        EmbeddedSeries {
            values: self.values.columns(start, end - start).into_owned(),
            tau: self.tau,
            m: self.m,
            t0: self.t0 + start,
            n_x: self.n_x,
        }
    }
}

/// Every sampled parameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnWeights {
    /// Recurrent weights, `n_h × n_h`.
    pub w: DMatrix<f64>,
    /// Input weights, `n_h × ((m+1)·n_x + 1)`.
    pub u: DMatrix<f64>,
    /// Linear output weights, `n_y × n_h`.
    pub v1: DMatrix<f64>,
    /// Quadratic output weights, `n_y × n_h`.
    pub v2: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub delta: f64,
    pub sigma2_eps: f64,
}

impl RnnWeights {
    /// All-zero weights with `delta = 0.5`, `sigma2_eps = 1`.
    pub fn zeros(n_h: usize, n_in: usize, n_y: usize) -> Self {
        RnnWeights {
            w: DMatrix::zeros(n_h, n_h),
            u: DMatrix::zeros(n_h, n_in),
            v1: DMatrix::zeros(n_y, n_h),
            v2: DMatrix::zeros(n_y, n_h),
            mu: DVector::zeros(n_y),
            delta: 0.5,
            sigma2_eps: 1.0,
        }
    }

    pub fn n_h(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.v1.nrows()
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let n_h = self.n_h();
        if self.w.ncols() != n_h || self.u.nrows() != n_h {
            return Err(Error::dims(
                "weights",
                format!("W {n_h}x{n_h}, U {n_h}x*"),
                format!("W {:?}, U {:?}", self.w.shape(), self.u.shape()),
            ));
        }
        let n_y = self.n_y();
        if self.v1.ncols() != n_h || self.v2.shape() != (n_y, n_h) || self.mu.len() != n_y {
            return Err(Error::dims(
                "weights",
                format!("V1, V2 {n_y}x{n_h}, mu {n_y}"),
                format!(
                    "V1 {:?}, V2 {:?}, mu {}",
                    self.v1.shape(),
                    self.v2.shape(),
                    self.mu.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Hidden states `h_1..h_T` as columns; `h_0` is the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateSequence {
    pub h: DMatrix<f64>,
    pub h0: DVector<f64>,
}

impl HiddenStateSequence {
    pub fn len(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.h.ncols() == 0
    }
}

/// Builds the delay embedding of `raw` (`n_x × T_raw`, columns are times).
pub fn build_embedding(raw: &DMatrix<f64>, tau: usize, m: usize) -> Result<EmbeddedSeries> {
    let (n_x, t_raw) = raw.shape();
    if n_x == 0 {
        return Err(Error::dims("build_embedding", "n_x >= 1", 0));
    }
    let span = m * tau;
    if t_raw <= span {
        return Err(Error::SeriesTooShort { len: t_raw, span });
    }
    let t = t_raw - span;
    let dim = (m + 1) * n_x + 1;
    let mut values = DMatrix::zeros(dim, t);
    for j in 0..t {
        let raw_t = span + j;
        let mut col = values.column_mut(j);
        col[0] = 1.0;
        for lag in 0..=m {
            let src = raw.column(raw_t - lag * tau);
            let off = 1 + lag * n_x;
            col.rows_mut(off, n_x).copy_from(&src);
        }
    }
    Ok(EmbeddedSeries {
        values,
        tau,
        m,
        t0: span,
        n_x,
    })
}

/// Radii below this fraction of `‖W‖_F` are reported as exactly zero.
pub const NILPOTENT_TOL: f64 = 1e-6;

/// Magnitude of the dominant eigenvalue of a square matrix.
///
/// Nilpotent matrices come back from the eigen solvers with round-off radii
/// (up to `ε^{1/k}` for a `k`-block), which would blow up `δ/ρ`; anything
/// below `NILPOTENT_TOL·‖W‖_F` is returned as 0.
pub fn spectral_radius(w: &DMatrix<f64>) -> Result<f64> {
    let rho = raw_spectral_radius(w)?;
    Ok(if rho <= NILPOTENT_TOL * w.norm() { 0.0 } else { rho })
}

fn raw_spectral_radius(w: &DMatrix<f64>) -> Result<f64> {
    if !w.is_square() {
        return Err(Error::dims("spectral_radius", "square matrix", format!("{:?}", w.shape())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral_radius"));
    }
    let n = w.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(w[(0, 0)].abs());
    }
    if n <= DENSE_EIGEN_LIMIT {
        // Schur can stall on exact rotation blocks; fall back to iteration
        match nalgebra::linalg::Schur::try_new(w.clone(), f64::EPSILON, 10_000) {
            Some(schur) => Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)),
            None => Ok(power_iteration_radius(w, 1e-12, 100_000)),
        }
    } else {
        Ok(power_iteration_radius(w, 1e-10, 10_000))
    }
}

/// Power iteration that also resolves a dominant complex-conjugate pair.
///
/// For a real dominant eigenvalue `x_{k+1} ≈ λ x_k`; for a pair `re^{±iθ}`
/// the iterates satisfy `x_{k+2} ≈ c1 x_{k+1} + c0 x_k` with `r² = -c0`.
/// Both fits are tried and the one with the smaller residual is used.
pub(crate) fn power_iteration_radius(w: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = w.nrows();
    // deterministic, non-degenerate start
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    let norm = x.norm();
    x /= norm;
    let mut prev = f64::NAN;
    let mut est = 0.0;
    for _ in 0..max_iter {
        let x1 = w * &x;
        let s1 = x1.norm();
        if s1 == 0.0 {
            return 0.0;
        }
        let x2 = w * &x1;
        // real fit
        let lam = x.dot(&x1);
        let res_real = (&x1 - &x * lam).norm() / s1.max(f64::MIN_POSITIVE);
        // complex-pair fit: least squares of x2 on [x1, x]
        let a11 = x1.dot(&x1);
        let a12 = x1.dot(&x);
        let a22 = x.dot(&x);
        let b1 = x1.dot(&x2);
        let b2 = x.dot(&x2);
        let det = a11 * a22 - a12 * a12;
        let mut pair = None;
        if det.abs() > 1e-14 * a11 * a22 {
            let c1 = (b1 * a22 - b2 * a12) / det;
            let c0 = (a11 * b2 - a12 * b1) / det;
            let fit = &x1 * c1 + &x * c0;
            let res = (&x2 - fit).norm() / x2.norm().max(f64::MIN_POSITIVE);
            // complex roots only when the discriminant is negative
            if c1 * c1 + 4.0 * c0 < 0.0 {
                pair = Some(((-c0).sqrt(), res));
            }
        }
        est = match pair {
            Some((r, res)) if res < res_real => r,
            _ => lam.abs(),
        };
        if (est - prev).abs() <= tol * est.max(1.0) {
            break;
        }
        prev = est;
        x = x1 / s1;
    }
    est
}

/// The factor `delta / |λ_w|` applied to `W`; zero when `W` has no
/// non-zero eigenvalue (including the all-zero matrix).
pub fn recurrence_scale(w: &DMatrix<f64>, delta: f64) -> Result<f64> {
    let rho = spectral_radius(w)?;
    Ok(if rho > 0.0 { delta / rho } else { 0.0 })
}

const TANH_SERIES: [f64; 11] = [
    1.0,
    -0.3333333333333333,
    0.13333333333333333,
    -0.05396825396825397,
    0.021869488536155203,
    -0.008863235529902197,
    0.003592128036572481,
    -0.0014558343870513183,
    0.000590027440945586,
    -0.00023912911424355248,
    9.691537956929451e-05,
];

/// `tanh` via one `exp`, with the Taylor series near zero where `1 − e^{-2|x|}`
/// would cancel. Agrees with `f64::tanh` to a few ulps.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.25 {
        let x2 = x * x;
        let mut p = TANH_SERIES[10];
        for c in TANH_SERIES[..10].iter().rev() {
            p = p * x2 + c;
        }
        x * p
    } else if a > 20.0 {
        1.0f64.copysign(x)
    } else {
        let e = (-2.0 * a).exp();
        ((1.0 - e) / (1.0 + e)).copysign(x)
    }
}

/// Runs `h_t = tanh(scale·W h_{t-1} + drive_t)` from `h_0 = 0` into `out`.
///
/// `w` is column-major `n_h × n_h`, `drive` and `out` are column-major
/// `n_h × T`.
pub(crate) fn recur_into(scale: f64, w: &[f64], drive: &[f64], n_h: usize, out: &mut [f64]) {
    let t_len = drive.len() / n_h;
    debug_assert_eq!(out.len(), drive.len());
    if n_h == 0 {
        return;
    }
    let (first, _) = out.split_at_mut(n_h);
    for (o, d) in first.iter_mut().zip(&drive[..n_h]) {
        *o = tanh(*d);
    }
    for t in 1..t_len {
        let (done, rest) = out.split_at_mut(t * n_h);
        let prev = &done[(t - 1) * n_h..];
        let cur = &mut rest[..n_h];
        cur.copy_from_slice(&drive[t * n_h..(t + 1) * n_h]);
        if scale != 0.0 {
            for (l, &hl) in prev.iter().enumerate() {
                let c = scale * hl;
                if c != 0.0 {
                    let wcol = &w[l * n_h..(l + 1) * n_h];
                    for (ci, wi) in cur.iter_mut().zip(wcol) {
                        *ci += c * wi;
                    }
                }
            }
        }
        for v in cur.iter_mut() {
            *v = tanh(*v);
        }
    }
}

/// Sum of squared residuals `Σ_t ‖y_t − μ − V1 h_t − V2 h_t²‖²`.
///
/// `scratch` needs `(n_y + n_h)·T` entries.
pub(crate) fn residual_ss(
    mu: &[f64],
    v1: &[f64],
    v2: &[f64],
    h: &[f64],
    y: &[f64],
    n_h: usize,
    n_y: usize,
    scratch: &mut [f64],
) -> f64 {
    let t_len = y.len() / n_y;
    let (r, h2) = scratch.split_at_mut(n_y * t_len);
    let h2 = &mut h2[..n_h * t_len];
    for (a, b) in h2.iter_mut().zip(h) {
        *a = b * b;
    }
    for (rt, yt) in r.chunks_exact_mut(n_y).zip(y.chunks_exact(n_y)) {
        for ((a, b), m) in rt.iter_mut().zip(yt).zip(mu) {
            *a = b - m;
        }
    }
    let mut rm = DMatrixViewMut::from_slice(r, n_y, t_len);
    rm.gemm(-1.0, &DMatrixView::from_slice(v1, n_y, n_h), &DMatrixView::from_slice(h, n_h, t_len), 1.0);
    rm.gemm(-1.0, &DMatrixView::from_slice(v2, n_y, n_h), &DMatrixView::from_slice(h2, n_h, t_len), 1.0);
    r.iter().map(|v| v * v).sum()
}

/// Hidden-state recursion for the given weights over the embedded inputs.
pub fn hidden_states(weights: &RnnWeights, inputs: &EmbeddedSeries) -> Result<HiddenStateSequence> {
    weights.check_shapes()?;
    if weights.n_in() != inputs.dim() {
        return Err(Error::dims("hidden_states", weights.n_in(), inputs.dim()));
    }
    let scale = recurrence_scale(&weights.w, weights.delta)?;
    let drive = &weights.u * &inputs.values;
    Ok(run_recursion(scale, &weights.w, &drive))
}

pub(crate) fn run_recursion(scale: f64, w: &DMatrix<f64>, drive: &DMatrix<f64>) -> HiddenStateSequence {
    let n_h = w.nrows();
    let mut h = DMatrix::zeros(n_h, drive.ncols());
    recur_into(scale, w.as_slice(), drive.as_slice(), n_h, h.as_mut_slice());
    HiddenStateSequence {
        h,
        h0: DVector::zeros(n_h),
    }
}

/// Data-stage mean `g_t = μ + V1 h_t + V2 (h_t ∘ h_t)` for every column.
pub fn data_stage_mean(weights: &RnnWeights, states: &HiddenStateSequence) -> Result<DMatrix<f64>> {
    weights.check_shapes()?;
    if states.h.nrows() != weights.n_h() {
        return Err(Error::dims("data_stage_mean", weights.n_h(), states.h.nrows()));
    }
    let h2 = states.h.map(|v| v * v);
    let mut g = &weights.v1 * &states.h + &weights.v2 * h2;
    for mut col in g.column_iter_mut() {
        col += &weights.mu;
    }
    Ok(g)
}

/// Impulse response of the hidden layer: `first_input` at `t = 1`, then the
/// whole input vector (intercept included) held at zero.
pub fn memory_probe(
    weights: &RnnWeights,
    first_input: &DVector<f64>,
    horizon: usize,
) -> Result<HiddenStateSequence> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("memory_probe horizon must be >= 1".into()));
    }
    if first_input.len() != weights.n_in() {
        return Err(Error::dims("memory_probe", weights.n_in(), first_input.len()));
    }
    let mut x = DMatrix::zeros(weights.n_in(), horizon);
    x.column_mut(0).copy_from(first_input);
    let inputs = EmbeddedSeries {
        n_x: weights.n_in().saturating_sub(1),
        values: x,
        tau: 0,
        m: 0,
        t0: 0,
    };
    hidden_states(weights, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small_weights() -> RnnWeights {
        let mut w = RnnWeights::zeros(2, 2, 2);
        w.w = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
        w.u = DMatrix::from_row_slice(2, 2, &[0.1, 0.5, -0.2, 0.3]);
        w.delta = 0.8;
        w
    }

    #[test]
    fn identity_embedding() {
        let raw = DMatrix::from_fn(3, 10, |i, j| (i * 10 + j) as f64);
        let e = build_embedding(&raw, 0, 0).unwrap();
        assert_eq!(e.values.shape(), (4, 10));
        assert!(e.values.row(0).iter().all(|&v| v == 1.0));
        assert_eq!(e.values.rows(1, 3), raw.columns(0, 10));
    }

    #[test]
    fn lorenz_embedding_shape() {
        let raw = DMatrix::zeros(18, 400);
        let e = build_embedding(&raw, 2, 4).unwrap();
        assert_eq!(e.values.shape(), (18 * 5 + 1, 392));
        assert_eq!(e.t0, 8);
    }

    #[test]
    fn hand_unrolled_lags() {
        let raw = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let e = build_embedding(&raw, 1, 1).unwrap();
        assert_eq!(e.values, DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 1.0, 1.0, 3.0, 2.0]));
    }

    #[test]
    fn too_short_series() {
        let raw = DMatrix::zeros(2, 8);
        assert!(matches!(
            build_embedding(&raw, 2, 4),
            Err(Error::SeriesTooShort { len: 8, span: 8 })
        ));
    }

    #[test]
    fn radius_cases() {
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.25]);
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-12);
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(spectral_radius(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn power_iteration_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [5usize, 30, 80] {
            let w = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let dense = w.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let power = power_iteration_radius(&w, 1e-12, 200_000);
            assert!((dense - power).abs() / dense < 1e-6, "n={n}: {dense} vs {power}");
        }
        // rotation: dominant complex pair
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert_abs_diff_eq!(power_iteration_radius(&rot, 1e-12, 1000), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_input_weights_give_zero_states() {
        let mut w = small_weights();
        w.u.fill(0.0);
        let raw = DMatrix::from_fn(1, 6, |_, j| j as f64);
        let e = build_embedding(&raw, 0, 0).unwrap();
        let h = hidden_states(&w, &e).unwrap();
        assert!(h.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_recurrence_is_memoryless() {
        let mut w = small_weights();
        w.w.fill(0.0);
        let raw = DMatrix::from_fn(1, 5, |_, j| 0.3 * j as f64 - 0.4);
        let e = build_embedding(&raw, 0, 0).unwrap();
        let h = hidden_states(&w, &e).unwrap();
        let expect = (&w.u * &e.values).map(f64::tanh);
        assert_abs_diff_eq!(h.h, expect, epsilon = 1e-15);
    }

    #[test]
    fn recursion_matches_scalar_unrolling() {
        let w = small_weights();
        let raw = DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]);
        let e = build_embedding(&raw, 0, 0).unwrap();
        let h = hidden_states(&w, &e).unwrap();
        // eigenvalues of [[.3,-.2],[.1,.4]]: 0.35 ± sqrt(0.0025 - 0.02) -> complex, |λ|² = det = 0.14
        let rho = 0.14f64.sqrt();
        let s = 0.8 / rho;
        let (w11, w12, w21, w22) = (0.3, -0.2, 0.1, 0.4);
        let (u11, u12, u21, u22) = (0.1, 0.5, -0.2, 0.3);
        let mut h1 = 0.0f64;
        let mut h2 = 0.0f64;
        for (t, x) in [0.5, -1.0, 2.0].iter().enumerate() {
            let a = (s * (w11 * h1 + w12 * h2) + u11 + u12 * x).tanh();
            let b = (s * (w21 * h1 + w22 * h2) + u21 + u22 * x).tanh();
            h1 = a;
            h2 = b;
            assert_abs_diff_eq!(h.h[(0, t)], h1, epsilon = 1e-14);
            assert_abs_diff_eq!(h.h[(1, t)], h2, epsilon = 1e-14);
        }
    }

    #[test]
    fn data_stage_square_is_elementwise() {
        let mut w = RnnWeights::zeros(2, 1, 2);
        w.mu = DVector::from_vec(vec![1.0, -1.0]);
        w.v1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        w.v2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 1.0]);
        let states = HiddenStateSequence {
            h: DMatrix::from_column_slice(2, 1, &[0.5, -0.5]),
            h0: DVector::zeros(2),
        };
        let g = data_stage_mean(&w, &states).unwrap();
        // row 0: 1 + (0.5 - 1.0) + 0.25 = 0.75 ; row 1: -1 + (-0.5) + (0.75 + 0.25) = -0.5
        assert_abs_diff_eq!(g[(0, 0)], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn data_stage_reduces_to_intercept() {
        let mut w = RnnWeights::zeros(3, 2, 2);
        w.mu = DVector::from_vec(vec![0.7, -0.1]);
        let states = HiddenStateSequence {
            h: DMatrix::from_fn(3, 4, |i, j| 0.1 * (i + j) as f64),
            h0: DVector::zeros(3),
        };
        let g = data_stage_mean(&w, &states).unwrap();
        for col in g.column_iter() {
            assert_eq!(col, w.mu.column(0));
        }
        w.v1.fill(1.0);
        let zero = HiddenStateSequence { h: DMatrix::zeros(3, 2), h0: DVector::zeros(3) };
        let g = data_stage_mean(&w, &zero).unwrap();
        assert_eq!(g.column(1), w.mu.column(0));
    }

    #[test]
    fn residual_kernel_matches_matrix_form() {
        let mut w = small_weights();
        w.mu = DVector::from_vec(vec![0.1, 0.2]);
        w.v1 = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]);
        w.v2 = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, -1.0, 0.4]);
        let raw = DMatrix::from_fn(1, 7, |_, j| (j as f64 * 0.7).sin());
        let e = build_embedding(&raw, 0, 0).unwrap();
        let h = hidden_states(&w, &e).unwrap();
        let g = data_stage_mean(&w, &h).unwrap();
        let y = DMatrix::from_fn(2, 7, |i, j| (i as f64 + j as f64 * 0.3).cos());
        let direct = (&y - &g).norm_squared();
        let mut scratch = vec![0.0; 4 * 7];
        let fast = residual_ss(
            w.mu.as_slice(),
            w.v1.as_slice(),
            w.v2.as_slice(),
            h.h.as_slice(),
            y.as_slice(),
            2,
            2,
            &mut scratch,
        );
        assert_abs_diff_eq!(direct, fast, epsilon = 1e-12);
    }

    #[test]
    fn memory_probe_zero_input() {
        let w = small_weights();
        let p = memory_probe(&w, &DVector::zeros(2), 20).unwrap();
        assert!(p.h.iter().all(|&v| v == 0.0));
        assert!(memory_probe(&w, &DVector::zeros(2), 0).is_err());
    }

    #[test]
    fn tanh_saturates_and_is_odd() {
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(40.0), 1.0);
        assert_eq!(tanh(-40.0), -1.0);
        assert_eq!(tanh(f64::INFINITY), 1.0);
        assert_eq!(tanh(-0.3), -tanh(0.3));
    }

    proptest! {
        #[test]
        fn tanh_matches_std(x in -25.0f64..25.0) {
            let (a, b) = (tanh(x), x.tanh());
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn tanh_matches_std_near_zero(x in -0.3f64..0.3) {
            let (a, b) = (tanh(x), x.tanh());
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }

        #[test]
        fn recurrence_scale_invariance(c in 0.01f64..50.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut w = RnnWeights::zeros(4, 3, 1);
            w.w = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.2..0.2));
            w.u = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-0.5..0.5));
            w.delta = rng.random_range(0.05..0.95);
            let raw = DMatrix::from_fn(2, 30, |_, _| rng.random_range(-2.0..2.0));
            let e = build_embedding(&raw, 0, 0).unwrap();
            let h1 = hidden_states(&w, &e).unwrap();
            let mut w2 = w.clone();
            w2.w *= c;
            let h2 = hidden_states(&w2, &e).unwrap();
            for (a, b) in h1.h.iter().zip(h2.h.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!(a.abs() < 1.0);
            }
            let s = recurrence_scale(&w.w, w.delta).unwrap();
            let eff = spectral_radius(&(&w.w * s)).unwrap();
            prop_assert!((eff - w.delta).abs() < 1e-10);
        }

        #[test]
        fn embedding_recovers_raw(tau in 0usize..4, m in 0usize..4, n_x in 1usize..4) {
            let t_raw = m * tau + 5;
            let raw = DMatrix::from_fn(n_x, t_raw, |i, j| (i * 100 + j) as f64);
            let e = build_embedding(&raw, tau, m).unwrap();
            prop_assert_eq!(e.len(), t_raw - m * tau);
            for j in 0..e.len() {
                for lag in 0..=m {
                    let src = raw.column(e.t0 + j - lag * tau);
                    let got = e.values.column(j).rows(1 + lag * n_x, n_x).into_owned();
                    prop_assert_eq!(got, src.into_owned());
                }
            }
        }

        #[test]
        fn data_stage_superposition(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let states = HiddenStateSequence {
                h: DMatrix::from_fn(2, 3, |i, j| 0.2 * i as f64 - 0.1 * j as f64),
                h0: DVector::zeros(2),
            };
            let mut p = RnnWeights::zeros(2, 1, 2);
            p.mu = DVector::from_vec(vec![a, b]);
            p.v1 = DMatrix::from_fn(2, 2, |i, j| a * (i + 1) as f64 - j as f64);
            let mut q = RnnWeights::zeros(2, 1, 2);
            q.v2 = DMatrix::from_fn(2, 2, |i, j| b * (j + 1) as f64 + i as f64);
            let mut sum = p.clone();
            sum.mu += &q.mu;
            sum.v1 += &q.v1;
            sum.v2 += &q.v2;
            let lhs = data_stage_mean(&sum, &states).unwrap();
            let rhs = data_stage_mean(&p, &states).unwrap() + data_stage_mean(&q, &states).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
