//! Persistence of posterior draws (compact binary) and the trace (CSV).
//!
//! Binary layout, little endian: magic `BASTRNN1`, `u32` version, `u32`
//! reserved, `u64` seed, then `u64` `n_h`, `n_in`, `n_y`, `n_draws`. Each draw
//! is `u64` chain, `u64` iteration, the `f64` entries of `W`, `U`, `V1`, `V2`
//! (column major), `μ`, `δ`, `σ²_ε`, followed by one byte per indicator of
//! `γ^w`, `γ^u`, `γ^{v1}`, `γ^{v2}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::RnnWeights;
use crate::priors::IndicatorMasks;

use super::chain::{Draw, PosteriorDraws, TraceRow};

const MAGIC: &[u8; 8] = b"BASTRNN1";
const VERSION: u32 = 1;

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_mask<W: Write>(w: &mut W, m: &DMatrix<bool>) -> std::io::Result<()> {
    let bytes: Vec<u8> = m.iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)
}

/// Writes draws to `path`. Every draw must have the same dimensions.
pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let dims = draws.dims().ok_or(Error::EmptySamples)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&0u32.to_le_bytes()).map_err(io)?;
    for v in [
        draws.seed,
        dims.n_h as u64,
        dims.n_in as u64,
        dims.n_y as u64,
        draws.draws.len() as u64,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for d in &draws.draws {
        let p = &d.weights;
        if p.n_h() != dims.n_h || p.n_in() != dims.n_in || p.n_y() != dims.n_y {
            return Err(Error::dims("write_draws", "uniform draw shapes", "mixed shapes"));
        }
        w.write_all(&(d.chain as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&d.iteration.to_le_bytes()).map_err(io)?;
        put_f64s(&mut w, p.w.as_slice()).map_err(io)?;
        put_f64s(&mut w, p.u.as_slice()).map_err(io)?;
        put_f64s(&mut w, p.v1.as_slice()).map_err(io)?;
        put_f64s(&mut w, p.v2.as_slice()).map_err(io)?;
        put_f64s(&mut w, p.mu.as_slice()).map_err(io)?;
        put_f64s(&mut w, &[p.delta, p.sigma2_eps]).map_err(io)?;
        for m in [&d.masks.gamma_w, &d.masks.gamma_u, &d.masks.gamma_v1, &d.masks.gamma_v2] {
            put_mask(&mut w, m).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Reader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| Error::Format {
            path: self.path.to_path_buf(),
            reason: format!("truncated draw file: {e}"),
        })?;
        Ok(b)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }

    fn matrix(&mut self, r: usize, c: usize) -> Result<DMatrix<f64>> {
        let v = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, v))
    }

    fn mask(&mut self, r: usize, c: usize) -> Result<DMatrix<bool>> {
        let mut b = vec![0u8; r * c];
        self.inner.read_exact(&mut b).map_err(|e| Error::Format {
            path: self.path.to_path_buf(),
            reason: format!("truncated draw file: {e}"),
        })?;
        Ok(DMatrix::from_vec(r, c, b.into_iter().map(|x| x != 0).collect()))
    }
}

/// Reads a draw file written by [`write_draws`]. Acceptance stats and the
/// trace are not stored in it and come back empty.
pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(fmt("not a draw file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes::<4>()?);
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    r.bytes::<4>()?;
    let seed = r.u64()?;
    let n_h = r.u64()? as usize;
    let n_in = r.u64()? as usize;
    let n_y = r.u64()? as usize;
    let n = r.u64()? as usize;
    let mut draws = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let chain = r.u64()? as usize;
        let iteration = r.u64()?;
        let weights = RnnWeights {
            w: r.matrix(n_h, n_h)?,
            u: r.matrix(n_h, n_in)?,
            v1: r.matrix(n_y, n_h)?,
            v2: r.matrix(n_y, n_h)?,
            mu: DVector::from_vec((0..n_y).map(|_| r.f64()).collect::<Result<_>>()?),
            delta: r.f64()?,
            sigma2_eps: r.f64()?,
        };
        let masks = IndicatorMasks {
            gamma_w: r.mask(n_h, n_h)?,
            gamma_u: r.mask(n_h, n_in)?,
            gamma_v1: r.mask(n_y, n_h)?,
            gamma_v2: r.mask(n_y, n_h)?,
        };
        draws.push(Draw {
            chain,
            iteration,
            weights,
            masks,
        });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(fmt("trailing bytes after last draw".into()));
    }
    Ok(PosteriorDraws {
        draws,
        trace: Vec::new(),
        stats: Vec::new(),
        seed,
    })
}

pub const TRACE_HEADER: &str = "chain,draw,iteration,delta,sigma2_eps,log_lik,acc_w,acc_alpha,acc_u,acc_delta,included_w,included_u";

/// Writes the trace as CSV, preceded by `# `-prefixed header lines.
pub fn write_trace(path: &Path, rows: &[TraceRow], comments: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for c in comments {
        writeln!(w, "# {c}").map_err(io)?;
    }
    writeln!(w, "{TRACE_HEADER}").map_err(io)?;
    for t in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            t.chain,
            t.draw,
            t.iteration,
            t.delta,
            t.sigma2_eps,
            t.log_lik,
            t.acc_w,
            t.acc_alpha,
            t.acc_u,
            t.acc_delta,
            t.included_w,
            t.included_u
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
