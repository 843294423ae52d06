mod common;

use std::path::Path;

use bastrnn::lorenz96::LorenzConfig;
use bastrnn::par::Execution;
use bastrnn::pipeline::{self, load_csv, save_csv, GridSeries, RunConfig, Session};
use bastrnn::sampler::SamplerConfig;
use common::wavy_series;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
        [data]
        inputs = "series.csv"
        lead = 2
        test_len = 15

        [embedding]
        tau = 1
        m = 1

        [evaluate]
        models = ["bastrnn", "linear_dstm", "gqn", "e_qesn"]
        region = [0, 2]

        [esn]
        ensemble_size = 3
        n_h = 8

        [forecast]
        n_samples = 100

        [cv]
        taus = [1, 2]
        ms = [0, 1]
        "#,
    )
    .unwrap();
    cfg.mcmc = SamplerConfig {
        n_h: 4,
        iterations: 200,
        burn_in: 100,
        thin: 2,
        ..SamplerConfig::default()
    };
    cfg
}

fn write_series(dir: &Path, name: &str, series: &GridSeries) {
    save_csv(&dir.join(name), series, &["test data".into()]).unwrap();
}

fn session(cfg: &RunConfig, data: &Path, out: &Path) -> Session {
    let mut cfg = cfg.clone();
    cfg.base_dir = data.to_path_buf();
    Session::new(cfg, Some(out.to_path_buf()), Execution::Sequential).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let series = GridSeries::from_values(wavy_series(4, 90, 3).transpose() * 3.0, "loc");
    write_series(dir.path(), "series.csv", &series);
    let s = session(&small_config(), dir.path(), dir.path());
    let mut files = vec![s.save_config().unwrap()];
    files.extend(pipeline::cv_embed(&s).unwrap());
    files.extend(pipeline::fit(&s).unwrap());
    files.extend(pipeline::forecast_bastrnn(&s).unwrap());
    files.extend(pipeline::baseline(&s).unwrap());
    files.extend(pipeline::evaluate(&s).unwrap());
    for f in &files {
        assert!(f.is_file(), "{}", f.display());
    }
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for expect in ["cv_scores.csv", "draws.bin", "trace.csv", "scaling.csv", "forecast_bastrnn.csv", "plot_gqn.csv", "metrics.csv"] {
        assert!(names.iter().any(|n| n == expect), "{expect} missing");
    }
    // no truth configured, so no truth metrics
    assert!(!dir.path().join("metrics_truth.csv").exists());

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(&format!("# scored against observed responses\n# config_hash: {}\n", s.config_hash())));
    for m in ["bastrnn", "linear_dstm", "gqn", "e_qesn"] {
        assert!(metrics.contains(&format!("{m},all,")));
        assert!(metrics.contains(&format!("{m},region_index,")));
    }
    let forecast = std::fs::read_to_string(dir.path().join("forecast_bastrnn.csv")).unwrap();
    let rows: Vec<&str> = forecast.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "time,location,mean,lower,upper");
    assert_eq!(rows.len(), 1 + 15 * 4);
    assert!(rows[1].starts_with("75,loc0,"));
}

#[test]
fn held_out_values_do_not_leak_into_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let base = wavy_series(3, 70, 8).transpose();
    let mut changed = base.clone();
    for t in 55..70 {
        for c in 0..3 {
            changed[(t, c)] = 1e3 * (t + c) as f64;
        }
    }
    let cfg = small_config();
    let mut outputs = Vec::new();
    for (i, values) in [base, changed].into_iter().enumerate() {
        let data = dir.path().join(format!("data{i}"));
        std::fs::create_dir(&data).unwrap();
        write_series(&data, "series.csv", &GridSeries::from_values(values, "x"));
        let s = session(&cfg, &data, &data);
        pipeline::fit(&s).unwrap();
        outputs.push((
            std::fs::read(data.join("draws.bin")).unwrap(),
            std::fs::read_to_string(data.join("scaling.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn lorenz_then_eof_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.lorenz = LorenzConfig {
        k: 6,
        j: 4,
        t_out: 50,
        burn_in_steps: 50,
        ..LorenzConfig::default()
    };
    cfg.eof.fields = Some("lorenz_small_scale.csv".into());
    cfg.eof.n_b = 5;
    cfg.eof.train_len = Some(40);
    let s = session(&cfg, dir.path(), dir.path());
    pipeline::simulate_lorenz(&s).unwrap();
    let obs = load_csv(&dir.path().join("lorenz_observed.csv")).unwrap();
    let truth = load_csv(&dir.path().join("lorenz_truth.csv")).unwrap();
    assert_eq!(obs.values.shape(), (50, 6));
    let noise = &obs.values - &truth.values;
    let var = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    assert!((var - 6.25).abs() < 1.5, "observation noise variance {var}");

    pipeline::eof(&s).unwrap();
    let coef = load_csv(&dir.path().join("eof_coefficients.csv")).unwrap();
    assert_eq!(coef.values.shape(), (50, 5));
    assert_eq!(coef.locations[0], "eof1");
    // coefficients of the training span are centred
    let first = coef.values.column(0).rows(0, 40).sum() / 40.0;
    assert!(first.abs() < 1e-9);
}

#[test]
fn configuration_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let s = session(&cfg, dir.path(), dir.path());
    // the input file does not exist
    let e = pipeline::fit(&s).unwrap_err().to_string();
    assert!(e.contains("data.inputs"), "{e}");

    let series = GridSeries::from_values(wavy_series(3, 30, 1).transpose(), "x");
    write_series(dir.path(), "series.csv", &series);
    let mut bad = cfg.clone();
    bad.data.test_len = 30;
    assert!(pipeline::fit(&session(&bad, dir.path(), dir.path())).is_err());
    let mut bad = cfg;
    bad.evaluate.models = vec!["nope".into()];
    let e = pipeline::evaluate(&session(&bad, dir.path(), dir.path())).unwrap_err().to_string();
    assert!(e.contains("nope"), "{e}");
}
