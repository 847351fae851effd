//! Browser bindings for a few model operations. Every export takes plain
//! numbers or JSON and returns a JSON string.

use conflict_intensity::data::{ActorClass, EventTuple, YearMonth};
use conflict_intensity::dists::{beta_logpdf, zig_logpmf, BetaModeConc, ZeroInflGeom};
use conflict_intensity::infer::{sample_posterior, score_events, SamplerConfig};
use conflict_intensity::model::{generate, responsibilities, separated_truth, Hyperparams, ModelData, SiteMask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Model(#[from] conflict_intensity::Error),
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DemoError>;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Curves {
    pub grid: Vec<f64>,
    pub beta_pdf: Vec<f64>,
    pub counts: Vec<u64>,
    pub zig_pmf: Vec<f64>,
}

/// Beta density on an interior grid and the zero-inflated geometric mass
/// for counts `0..=max_count`.
pub fn density_curves(
    mode: f64,
    concentration: f64,
    gate: f64,
    success: f64,
    points: usize,
    max_count: u64,
) -> Result<Curves> {
    if points < 2 {
        return Err(DemoError::Input("need at least two grid points".into()));
    }
    let beta = BetaModeConc::new(mode, concentration)?;
    let zig = ZeroInflGeom::new(gate, success)?;
    let grid: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64).collect();
    let beta_pdf = grid
        .iter()
        .map(|&p| beta_logpdf(p, &beta).map(f64::exp))
        .collect::<std::result::Result<_, _>>()?;
    let counts: Vec<u64> = (0..=max_count).collect();
    let zig_pmf = counts
        .iter()
        .map(|&q| zig_logpmf(q as i64, &zig).map(f64::exp))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Curves {
        grid,
        beta_pdf,
        counts,
        zig_pmf,
    })
}

#[derive(Debug, Deserialize)]
pub struct EventInput {
    pub subject: String,
    pub predicate: f64,
    pub quantifier: u64,
    pub object: String,
}

/// Class probabilities of one event under the separated parameters with
/// `classes` classes.
pub fn event_responsibilities(classes: usize, event: &EventInput) -> Result<Vec<f64>> {
    if classes == 0 || classes > 9 {
        return Err(DemoError::Input("classes must lie in 1..=9".into()));
    }
    if !(event.predicate > 0.0 && event.predicate < 1.0) {
        return Err(DemoError::Input("predicate must lie in (0, 1)".into()));
    }
    let tuple = EventTuple {
        subject: event.subject.parse::<ActorClass>()?,
        predicate: event.predicate,
        quantifier: event.quantifier,
        object: event.object.parse::<ActorClass>()?,
        location: "demo".into(),
        month: YearMonth::new(2000, 1)?,
    };
    Ok(responsibilities(&separated_truth(classes), &tuple, SiteMask::ALL)?)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub classes: usize,
    pub events: usize,
    pub true_modes: Vec<f64>,
    pub fitted_modes: Vec<f64>,
    pub accuracy: f64,
    pub divergences: usize,
}

/// Simulates events from the separated parameters, fits one short chain and
/// compares the recovered predicate modes and class labels with the truth.
pub fn simulate_and_fit(classes: usize, events: usize, draws: usize, seed: u64) -> Result<FitReport> {
    if !(2..=5).contains(&classes) || !(50..=5000).contains(&events) || !(10..=2000).contains(&draws) {
        return Err(DemoError::Input(
            "need 2-5 classes, 50-5000 events and 10-2000 draws".into(),
        ));
    }
    let truth = separated_truth(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tuples, labels) = generate(&truth, events, &mut rng)?;
    let config = SamplerConfig {
        draws,
        warmup: draws,
        chains: 1,
        seed,
        workers: Some(1),
        ..SamplerConfig::default()
    };
    let samples = sample_posterior(&ModelData::new(&tuples)?, &Hyperparams::new(classes)?, &config)?;
    let scores = score_events(&samples, &tuples, SiteMask::ALL);
    let hits = scores.iter().zip(&labels).filter(|(s, &z)| s.mode == z).count();
    Ok(FitReport {
        classes,
        events,
        true_modes: truth.predicate_mode,
        fitted_modes: samples.mean().predicate_mode,
        accuracy: hits as f64 / events as f64,
        divergences: samples.divergences(),
    })
}

fn js_result<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = densityCurves)]
pub fn density_curves_js(
    mode: f64,
    concentration: f64,
    gate: f64,
    success: f64,
) -> std::result::Result<String, JsError> {
    js_result(density_curves(mode, concentration, gate, success, 200, 15))
}

#[wasm_bindgen(js_name = eventResponsibilities)]
pub fn event_responsibilities_js(classes: usize, event_json: &str) -> std::result::Result<String, JsError> {
    js_result(
        serde_json::from_str(event_json)
            .map_err(DemoError::from)
            .and_then(|e| event_responsibilities(classes, &e)),
    )
}

#[wasm_bindgen(js_name = simulateAndFit)]
pub fn simulate_and_fit_js(
    classes: usize,
    events: usize,
    draws: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js_result(simulate_and_fit(classes, events, draws, seed as u64))
}
