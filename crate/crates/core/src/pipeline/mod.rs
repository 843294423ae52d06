//! Configuration-driven workflow: simulate or load data, reduce dimension,
//! select an embedding, fit, forecast, and score against baselines.

mod commands;
mod config;
mod table;

pub use commands::{
    baseline, cv_embed, eof, evaluate, fit, fit_baseline, forecast_bastrnn, model_forecast, prepare, simulate_lorenz,
    Prepared, Session, BASELINES, BASTRNN,
};
pub use config::{
    CvSection, DataSection, EmbeddingSection, EofSection, EvaluateSection, ForecastSection, OutputSection,
    PriorSection, RunConfig,
};
pub use table::{load_csv, save_csv, standardize, GridSeries, Scaling};
