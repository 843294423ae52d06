//! Empirical orthogonal functions: a linear basis for high-dimensional
//! fields, `Z_t ≈ mean + Φ Y_t`.
//!
//! Fields are `n_z × T` (one column per time). The basis is the leading left
//! singular vectors of the training fields after removing their time mean.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular-value ratio below which the fit logs a rank-deficiency warning.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EofBasis {
    /// `n_z × n_b`, orthonormal columns.
    pub phi: DMatrix<f64>,
    pub mean_field: DVector<f64>,
    /// Share of total centered variance per retained EOF, descending.
    pub variance_fraction: DVector<f64>,
    /// Per-location variance of the truncation residual over the training
    /// fields. Reported only; the sampler never sees it.
    pub residual_variance: Option<DVector<f64>>,
}

impl EofBasis {
    pub fn n_b(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.phi.nrows()
    }

    pub fn captured_variance(&self) -> f64 {
        self.variance_fraction.sum()
    }
}

fn center(fields: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = fields.clone();
    for mut col in c.column_iter_mut() {
        col -= mean;
    }
    c
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(phi: &mut DMatrix<f64>) {
    for mut col in phi.column_iter_mut() {
        let (mut best, mut at) = (0.0f64, 0);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                at = i;
            }
        }
        if col[at] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Fits the leading `n_b` EOFs of `fields` (`n_z × T`).
pub fn fit_eof(fields: &DMatrix<f64>, n_b: usize) -> Result<EofBasis> {
    let (n_z, t) = fields.shape();
    if t < 2 {
        return Err(Error::SeriesTooShort { len: t, span: 2 });
    }
    if n_b == 0 || n_b > n_z.min(t) {
        return Err(Error::InvalidConfig(format!(
            "n_b = {n_b} must be in 1..={}",
            n_z.min(t)
        )));
    }
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eof fields"));
    }
    let mean = fields.column_mean();
    let zc = center(fields, &mean);
    let svd = zc.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical {
        iteration: 0,
        reason: "SVD did not return left singular vectors".into(),
    })?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let total: f64 = s.iter().map(|v| v * v).sum();
    let top = s[order[0]];
    if top > 0.0 && s[order[n_b - 1]] / top < RANK_TOL {
        log::warn!("EOF basis is rank deficient: singular value ratio below {RANK_TOL:e}");
    }
    let mut phi = DMatrix::zeros(n_z, n_b);
    let mut frac = DVector::zeros(n_b);
    for (j, &o) in order.iter().take(n_b).enumerate() {
        phi.set_column(j, &u.column(o));
        frac[j] = if total > 0.0 { s[o] * s[o] / total } else { 0.0 };
    }
    fix_signs(&mut phi);
    let resid = &zc - &phi * (phi.transpose() * &zc);
    let residual_variance = DVector::from_fn(n_z, |i, _| {
        resid.row(i).iter().map(|v| v * v).sum::<f64>() / (t - 1) as f64
    });
    Ok(EofBasis {
        phi,
        mean_field: mean,
        variance_fraction: frac,
        residual_variance: Some(residual_variance),
    })
}

/// Coefficients `Y_t = Φ′(Z_t − mean)`, `n_b × T`.
pub fn project(basis: &EofBasis, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if fields.nrows() != basis.n_z() {
        return Err(Error::dims("eof project", basis.n_z(), fields.nrows()));
    }
    Ok(basis.phi.transpose() * center(fields, &basis.mean_field))
}

/// Fields `mean + Φ Y_t`, `n_z × T`.
pub fn reconstruct(basis: &EofBasis, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if coeffs.nrows() != basis.n_b() {
        return Err(Error::dims("eof reconstruct", basis.n_b(), coeffs.nrows()));
    }
    let mut z = &basis.phi * coeffs;
    for mut col in z.column_iter_mut() {
        col += &basis.mean_field;
    }
    Ok(z)
}

/// Writes the basis as two CSV files: `phi_path` (one row per location, one
/// column per EOF) and `meta_path` (`kind,index,value` rows for the mean
/// field, variance fractions and residual variances).
pub fn save_basis(basis: &EofBasis, phi_path: &Path, meta_path: &Path, comments: &[String]) -> Result<()> {
    let write = |path: &Path, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        (|| {
            for c in comments {
                writeln!(w, "# {c}")?;
            }
            body(&mut w)?;
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    };
    write(phi_path, &|w| {
        let head: Vec<String> = (1..=basis.n_b()).map(|j| format!("eof{j}")).collect();
        writeln!(w, "location,{}", head.join(","))?;
        for i in 0..basis.n_z() {
            let row: Vec<String> = basis.phi.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{i},{}", row.join(","))?;
        }
        Ok(())
    })?;
    write(meta_path, &|w| {
        writeln!(w, "kind,index,value")?;
        for (i, v) in basis.mean_field.iter().enumerate() {
            writeln!(w, "mean,{i},{v:?}")?;
        }
        for (i, v) in basis.variance_fraction.iter().enumerate() {
            writeln!(w, "variance_fraction,{i},{v:?}")?;
        }
        if let Some(r) = &basis.residual_variance {
            for (i, v) in r.iter().enumerate() {
                writeln!(w, "residual_variance,{i},{v:?}")?;
            }
        }
        Ok(())
    })
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn parse_cell(path: &Path, row: usize, column: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        reason: format!("not a number: {s:?}"),
    })
}

/// Reads a basis written by [`save_basis`].
pub fn load_basis(phi_path: &Path, meta_path: &Path) -> Result<EofBasis> {
    let lines = data_lines(phi_path)?;
    let Some(((_, _), body)) = lines.split_first() else {
        return Err(Error::Format {
            path: phi_path.to_path_buf(),
            reason: "empty basis file".into(),
        });
    };
    let mut rows = Vec::new();
    for (row, line) in body {
        let cells: Vec<&str> = line.split(',').skip(1).collect();
        let vals = cells
            .iter()
            .enumerate()
            .map(|(c, s)| parse_cell(phi_path, *row, c + 2, s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    let n_b = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_b) || n_b == 0 {
        return Err(Error::Format {
            path: phi_path.to_path_buf(),
            reason: "ragged or empty basis rows".into(),
        });
    }
    let phi = DMatrix::from_fn(rows.len(), n_b, |i, j| rows[i][j]);
    let (mut mean, mut frac, mut resid) = (Vec::new(), Vec::new(), Vec::new());
    for (row, line) in data_lines(meta_path)?.into_iter().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(Error::Parse {
                path: meta_path.to_path_buf(),
                row,
                column: cells.len(),
                reason: "expected kind,index,value".into(),
            });
        }
        let v = parse_cell(meta_path, row, 3, cells[2])?;
        match cells[0] {
            "mean" => mean.push(v),
            "variance_fraction" => frac.push(v),
            "residual_variance" => resid.push(v),
            other => {
                return Err(Error::Parse {
                    path: meta_path.to_path_buf(),
                    row,
                    column: 1,
                    reason: format!("unknown kind {other:?}"),
                })
            }
        }
    }
    if mean.len() != phi.nrows() || frac.len() != n_b {
        return Err(Error::Format {
            path: meta_path.to_path_buf(),
            reason: "metadata does not match basis dimensions".into(),
        });
    }
    Ok(EofBasis {
        phi,
        mean_field: DVector::from_vec(mean),
        variance_fraction: DVector::from_vec(frac),
        residual_variance: (!resid.is_empty()).then(|| DVector::from_vec(resid)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fields(n_z: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n_z, t, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn rank_one_field() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let b = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.0, 1.5]);
        let z = &a * b.transpose();
        let basis = fit_eof(&z, 1).unwrap();
        assert_abs_diff_eq!(basis.variance_fraction[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sign_convention_and_orthonormality() {
        let z = random_fields(12, 30, 1);
        let basis = fit_eof(&z, 5).unwrap();
        let gram = basis.phi.transpose() * &basis.phi;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        for col in basis.phi.column_iter() {
            let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
        for w in basis.variance_fraction.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn parseval_residual() {
        let z = random_fields(8, 25, 2);
        let basis = fit_eof(&z, 3).unwrap();
        let zc = center(&z, &basis.mean_field);
        let y = project(&basis, &z).unwrap();
        let back = reconstruct(&basis, &y).unwrap();
        let resid = (&z - back).norm_squared() / zc.norm_squared();
        assert_abs_diff_eq!(resid, 1.0 - basis.captured_variance(), epsilon = 1e-6);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let z = random_fields(6, 20, 3);
        let basis = fit_eof(&z, 6).unwrap();
        let back = reconstruct(&basis, &project(&basis, &z).unwrap()).unwrap();
        assert!((back - &z).amax() < 1e-8);
        assert_abs_diff_eq!(basis.captured_variance(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn projecting_a_basis_column_gives_unit_vector() {
        let z = random_fields(7, 15, 4);
        let basis = fit_eof(&z, 4).unwrap();
        let mut field = basis.phi.column(2).into_owned();
        field += &basis.mean_field;
        let y = project(&basis, &DMatrix::from_columns(&[field])).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(y[j], if j == 2 { 1.0 } else { 0.0 }, epsilon = 1e-10);
        }
        let zero = reconstruct(&basis, &DMatrix::zeros(4, 3)).unwrap();
        for c in zero.column_iter() {
            assert_eq!(c, basis.mean_field.column(0));
        }
    }

    #[test]
    fn bad_sizes() {
        let z = random_fields(4, 10, 5);
        assert!(fit_eof(&z, 5).is_err());
        assert!(fit_eof(&z.columns(0, 1).into_owned(), 1).is_err());
        let basis = fit_eof(&z, 2).unwrap();
        assert!(matches!(project(&basis, &DMatrix::zeros(3, 2)), Err(Error::DimensionMismatch { .. })));
        assert!(reconstruct(&basis, &DMatrix::zeros(3, 2)).is_err());
    }
}
