//! Pipeline stages. Each stage reads its inputs from the configuration and
//! earlier artifacts in the output directory and returns the files it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::baselines::{cv_embedding, fit_eqesn, fit_gqn, fit_linear_dstm, mc_forecast, Baseline};
use crate::dimred::{fit_eof, project, save_basis};
use crate::error::{Error, Result};
use crate::evaluate::{save_reports, MetricsReport};
use crate::forecast::ForecastDistribution;
use crate::lorenz96::simulate;
use crate::model::build_embedding;
use crate::par::Execution;
use crate::sampler::{forecast, read_draws, run_chains, write_draws, write_trace, Init, PosteriorDraws, SamplerData};

use super::config::RunConfig;
use super::table::{load_csv, save_csv, GridSeries, Scaling};

pub const BASTRNN: &str = "bastrnn";
pub const BASELINES: [&str; 3] = ["linear_dstm", "gqn", "e_qesn"];

/// A configured run: the effective configuration, where artifacts go and how
/// the data-parallel loops execute.
#[derive(Debug, Clone)]
pub struct Session {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub exec: Execution,
    hash: String,
}

impl Session {
    /// `out_dir` overrides the configured output directory.
    pub fn new(cfg: RunConfig, out_dir: Option<PathBuf>, exec: Execution) -> Result<Self> {
        let out_dir = out_dir.unwrap_or_else(|| cfg.resolve(&cfg.output.dir));
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let hash = cfg.hash()?;
        Ok(Session { cfg, out_dir, exec, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn header(&self, what: &str) -> Vec<String> {
        vec![what.to_string(), format!("config_hash: {}", self.hash)]
    }

    /// Writes the effective configuration next to the artifacts.
    pub fn save_config(&self) -> Result<PathBuf> {
        let p = self.path("config.toml");
        let body = format!("# config_hash: {}\n{}", self.hash, self.cfg.to_toml()?);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

/// Simulated two-scale series: observed and noise-free large-scale states and
/// the small-scale states, rows are times.
pub fn simulate_lorenz(s: &Session) -> Result<Vec<PathBuf>> {
    let out = simulate(&s.cfg.lorenz).map_err(|e| e.in_module("lorenz96"))?;
    let mut written = Vec::new();
    for (name, m, prefix, what) in [
        ("lorenz_observed.csv", &out.observed, "x", "large-scale states with observation noise"),
        ("lorenz_truth.csv", &out.latent_large, "x", "noise-free large-scale states"),
        ("lorenz_small_scale.csv", &out.small_scale, "y", "small-scale states, location k*j + i"),
    ] {
        let p = s.path(name);
        save_csv(&p, &GridSeries::from_values(m.transpose(), prefix), &s.header(what))?;
        written.push(p);
    }
    Ok(written)
}

/// EOF basis of the configured fields and the coefficient series of every
/// period.
pub fn eof(s: &Session) -> Result<Vec<PathBuf>> {
    let path = s.cfg.required(&s.cfg.eof.fields, "eof.fields")?;
    let fields = load_csv(&path)?;
    let z = fields.by_time();
    let train = s.cfg.eof.train_len.unwrap_or(fields.len());
    if train == 0 || train > fields.len() {
        return Err(Error::InvalidConfig(format!(
            "eof.train_len {train} outside 1..={}",
            fields.len()
        )));
    }
    let basis = fit_eof(&z.columns(0, train).into_owned(), s.cfg.eof.n_b).map_err(|e| e.in_module("dimred"))?;
    let coeffs = project(&basis, &z)?;
    let (phi, meta, coef) = (s.path("eof_phi.csv"), s.path("eof_meta.csv"), s.path("eof_coefficients.csv"));
    let header = s.header(&format!("eof basis of {}", path.display()));
    save_basis(&basis, &phi, &meta, &header)?;
    let series = GridSeries {
        times: fields.times.clone(),
        locations: (1..=basis.n_b()).map(|i| format!("eof{i}")).collect(),
        values: coeffs.transpose(),
    };
    save_csv(&coef, &series, &s.header("eof coefficients"))?;
    Ok(vec![phi, meta, coef])
}

/// Raw and standardized series for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: GridSeries,
    pub responses: GridSeries,
    pub truth: Option<GridSeries>,
    /// `n_x × T`, standardized on the training span.
    pub inputs_z: DMatrix<f64>,
    /// `n_y × T`, standardized on the training span.
    pub responses_z: DMatrix<f64>,
    pub input_scaling: Scaling,
    pub response_scaling: Scaling,
    /// First held-out period.
    pub train_end: usize,
}

impl Prepared {
    pub fn test_times(&self) -> Vec<usize> {
        (self.train_end..self.responses.len()).collect()
    }

    /// Training pairs for an embedding.
    pub fn training_data(&self, tau: usize, m: usize, lead: usize) -> Result<SamplerData> {
        SamplerData::paired(&self.inputs_z, &self.responses_z, tau, m, lead, self.train_end)
    }

    /// Observed held-out responses on the original scale, `n_y × n_test`.
    pub fn test_responses(&self) -> DMatrix<f64> {
        held_out(&self.responses, self.train_end)
    }

    pub fn test_truth(&self) -> Option<DMatrix<f64>> {
        self.truth.as_ref().map(|t| held_out(t, self.train_end))
    }
}

fn held_out(g: &GridSeries, train_end: usize) -> DMatrix<f64> {
    g.values.rows(train_end, g.len() - train_end).transpose()
}

pub fn prepare(s: &Session) -> Result<Prepared> {
    let d = &s.cfg.data;
    let inputs = load_csv(&s.cfg.required(&d.inputs, "data.inputs")?)?;
    let responses = match &d.responses {
        Some(_) => load_csv(&s.cfg.required(&d.responses, "data.responses")?)?,
        None => inputs.clone(),
    };
    if responses.len() != inputs.len() {
        return Err(Error::dims("responses vs inputs periods", inputs.len(), responses.len()));
    }
    if responses.times != inputs.times {
        return Err(Error::InvalidConfig("inputs and responses have different time labels".into()));
    }
    let truth = match &d.truth {
        Some(_) => {
            let t = load_csv(&s.cfg.required(&d.truth, "data.truth")?)?;
            if t.values.shape() != responses.values.shape() {
                return Err(Error::dims(
                    "truth vs responses",
                    format!("{:?}", responses.values.shape()),
                    format!("{:?}", t.values.shape()),
                ));
            }
            Some(t)
        }
        None => None,
    };
    let train_end = inputs
        .len()
        .checked_sub(d.test_len)
        .filter(|&e| e > 0)
        .ok_or(Error::InvalidSplit { test_len: d.test_len, total: inputs.len() })?;
    let (input_scaling, response_scaling) = if d.standardize {
        (Scaling::fit(&inputs, train_end)?, Scaling::fit(&responses, train_end)?)
    } else {
        (Scaling::identity(inputs.locations.len()), Scaling::identity(responses.locations.len()))
    };
    let inputs_z = input_scaling.apply(&inputs)?.by_time();
    let responses_z = response_scaling.apply(&responses)?.by_time();
    Ok(Prepared {
        inputs,
        responses,
        truth,
        inputs_z,
        responses_z,
        input_scaling,
        response_scaling,
        train_end,
    })
}

/// Validation MSPE of the E-QESN over the `(τ, m)` grid.
pub fn cv_embed(s: &Session) -> Result<Vec<PathBuf>> {
    let p = prepare(s)?;
    let grid = s.cfg.cv.grid();
    let scores = cv_embedding(
        &p.inputs_z,
        &p.responses_z,
        s.cfg.data.lead,
        &grid,
        p.train_end,
        &s.cfg.esn,
        s.exec,
    )
    .map_err(|e| e.in_module("baselines"))?;
    log::info!("selected tau = {}, m = {}", scores.best.0, scores.best.1);
    let path = s.path("cv_scores.csv");
    write_lines(&path, &s.header("validation mspe per embedding"), |w| {
        writeln!(w, "tau,m,mspe,selected")?;
        for (g, &(tau, m)) in scores.grid.iter().enumerate() {
            let mspe = scores.mspe[g].map_or("NA".to_string(), |v| v.to_string());
            writeln!(w, "{tau},{m},{mspe},{}", u8::from((tau, m) == scores.best))?;
        }
        Ok(())
    })?;
    Ok(vec![path])
}

/// Posterior sampling on the training span.
pub fn fit(s: &Session) -> Result<Vec<PathBuf>> {
    let p = prepare(s)?;
    let draws = fit_draws(s, &p)?;
    write_draws(&s.path("draws.bin"), &draws)?;
    write_trace(&s.path("trace.csv"), &draws.trace, &s.header("mcmc trace"))?;
    let scaling = s.path("scaling.csv");
    write_lines(&scaling, &s.header("training-span standardization"), |w| {
        writeln!(w, "series,location,mean,sd")?;
        for (name, g, sc) in [
            ("input", &p.inputs, &p.input_scaling),
            ("response", &p.responses, &p.response_scaling),
        ] {
            for (l, loc) in g.locations.iter().enumerate() {
                writeln!(w, "{name},{loc},{},{}", sc.mean[l], sc.sd[l])?;
            }
        }
        Ok(())
    })?;
    Ok(vec![s.path("draws.bin"), s.path("trace.csv"), scaling])
}

fn fit_draws(s: &Session, p: &Prepared) -> Result<PosteriorDraws> {
    let e = s.cfg.embedding;
    let data = p.training_data(e.tau, e.m, s.cfg.data.lead)?;
    let hp = s.cfg.priors.resolve(p.inputs.locations.len(), e.m)?;
    log::info!(
        "sampling {} chain(s) of {} iterations on {} training pairs",
        s.cfg.mcmc.chains,
        s.cfg.mcmc.iterations,
        data.len()
    );
    run_chains(&data, &hp, &s.cfg.mcmc, &Init::Prior, s.exec).map_err(|e| e.in_module("px_mcmc"))
}

/// Forecast distribution of `model` at the held-out times on the original
/// response scale. The Bayesian model reads its draws from `draws.bin`;
/// baselines are refitted on the training span.
pub fn model_forecast(s: &Session, p: &Prepared, model: &str) -> Result<ForecastDistribution> {
    let e = s.cfg.embedding;
    let lead = s.cfg.data.lead;
    let inputs = build_embedding(&p.inputs_z, e.tau, e.m)?;
    let times = p.test_times();
    let seed = s.cfg.forecast.seed;
    let fd = if model == BASTRNN {
        let draws = read_draws(&s.path("draws.bin"))?;
        if let Some(d) = draws.dims() {
            if d.n_in != inputs.dim() || d.n_y != p.responses.locations.len() {
                return Err(Error::InvalidConfig(
                    "draws.bin does not match the configured embedding; rerun fit".into(),
                ));
            }
        }
        forecast(&draws.draws, &inputs, &times, lead, seed, s.exec).map_err(|e| e.in_module("px_mcmc"))?
    } else {
        let b = fit_baseline(s, p, model)?;
        mc_forecast(&b, &inputs, &times, lead, s.cfg.forecast.n_samples, seed, s.exec)
            .map_err(|e| e.in_module("baselines"))?
    };
    fd.affine_per_location(&p.response_scaling.sd, &p.response_scaling.mean)
}

pub fn fit_baseline(s: &Session, p: &Prepared, model: &str) -> Result<Baseline> {
    let e = s.cfg.embedding;
    let data = p.training_data(e.tau, e.m, s.cfg.data.lead)?;
    let b = match model {
        "linear_dstm" => fit_linear_dstm(&data).map(Baseline::Linear),
        "gqn" => fit_gqn(&data, true).map(Baseline::Gqn),
        "e_qesn" => fit_eqesn(&data, &s.cfg.esn, s.exec).map(Baseline::Eqesn),
        other => return Err(Error::InvalidConfig(format!("unknown model {other:?}"))),
    };
    b.map_err(|e| e.in_module("baselines"))
}

/// Held-out forecast of the Bayesian model from the saved draws.
pub fn forecast_bastrnn(s: &Session) -> Result<Vec<PathBuf>> {
    let p = prepare(s)?;
    let fd = model_forecast(s, &p, BASTRNN)?;
    write_forecast(s, &p, BASTRNN, &fd)
}

/// Fits and forecasts every baseline.
pub fn baseline(s: &Session) -> Result<Vec<PathBuf>> {
    let p = prepare(s)?;
    let mut written = Vec::new();
    for model in BASELINES {
        let fd = model_forecast(s, &p, model)?;
        written.extend(write_forecast(s, &p, model, &fd)?);
    }
    Ok(written)
}

/// Scores the configured models against the observed held-out responses
/// (`metrics.csv`) and, when a truth series is configured, against it
/// (`metrics_truth.csv`).
pub fn evaluate(s: &Session) -> Result<Vec<PathBuf>> {
    let p = prepare(s)?;
    let observed = p.test_responses();
    let truth = p.test_truth();
    let n_y = p.responses.locations.len();
    let mask = region_mask(&s.cfg.evaluate.region, n_y)?;
    let region = mask.as_deref().map(|m| (s.cfg.evaluate.region_name.as_str(), m));
    let mut reports = Vec::new();
    let mut truth_reports = Vec::new();
    for model in &s.cfg.evaluate.models {
        let fd = model_forecast(s, &p, model)?;
        let r = MetricsReport::compute(model, &fd, &observed, region, s.exec)?;
        log::info!("\n{r}");
        reports.push(r);
        if let Some(t) = &truth {
            truth_reports.push(MetricsReport::compute(model, &fd, t, region, s.exec)?);
        }
    }
    let avg = s.cfg.evaluate.average;
    let mut written = vec![s.path("metrics.csv")];
    save_reports(&written[0], &reports, &s.header("scored against observed responses"), avg)?;
    if truth.is_some() {
        written.push(s.path("metrics_truth.csv"));
        save_reports(&written[1], &truth_reports, &s.header("scored against noise-free truth"), avg)?;
    }
    Ok(written)
}

fn region_mask(region: &[usize], n: usize) -> Result<Option<Vec<bool>>> {
    if region.is_empty() {
        return Ok(None);
    }
    let mut mask = vec![false; n];
    for &i in region {
        *mask
            .get_mut(i)
            .ok_or_else(|| Error::InvalidConfig(format!("evaluate.region index {i} >= {n}")))? = true;
    }
    Ok(Some(mask))
}

/// `forecast_<model>.csv` (long format summaries) and `plot_<model>.csv`
/// (summaries next to the observed and true values).
fn write_forecast(s: &Session, p: &Prepared, model: &str, fd: &ForecastDistribution) -> Result<Vec<PathBuf>> {
    let observed = p.test_responses();
    let truth = p.test_truth();
    let fc_path = s.path(&format!("forecast_{model}.csv"));
    let plot_path = s.path(&format!("plot_{model}.csv"));
    let header = s.header(&format!("{model} forecasts, lead {}, 95% intervals", fd.lead));
    let rows = |w: &mut BufWriter<File>, plot: bool| -> std::io::Result<()> {
        if plot {
            writeln!(w, "time,location,observed,truth,mean,lower,upper")?;
        } else {
            writeln!(w, "time,location,mean,lower,upper")?;
        }
        for (h, &t) in fd.times.iter().enumerate() {
            for (l, loc) in p.responses.locations.iter().enumerate() {
                write!(w, "{},{loc}", p.responses.times[t])?;
                if plot {
                    let tr = truth.as_ref().map_or("NA".to_string(), |m| m[(l, h)].to_string());
                    write!(w, ",{},{tr}", observed[(l, h)])?;
                }
                writeln!(w, ",{},{},{}", fd.mean[(l, h)], fd.lower2_5[(l, h)], fd.upper97_5[(l, h)])?;
            }
        }
        Ok(())
    };
    write_lines(&fc_path, &header, |w| rows(w, false))?;
    write_lines(&plot_path, &header, |w| rows(w, true))?;
    Ok(vec![fc_path, plot_path])
}

fn write_lines(
    path: &Path,
    comments: &[String],
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
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
}
