//! Held-out evaluation: scaled pointwise predictive density, single-site
//! imputation and the naive, prior and linear-regression baselines.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActorClass, EventTuple};
use crate::error::{Error, Result};
use crate::infer::{sample_posterior, SamplerConfig};
use crate::model::{sample_prior, ClassTables, Hyperparams, ModelData, ParamsConstrained, Site, SiteMask};

/// Scaled pointwise predictive density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sppd {
    pub value: f64,
    /// Events whose predictive density was zero under every draw.
    pub zero_density_events: usize,
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// `exp(mean_n ln(mean_t p[n][t]))` from densities (rows are events, columns draws).
pub fn sppd(densities: &[Vec<f64>]) -> Result<Sppd> {
    let logs: Vec<Vec<f64>> = densities
        .iter()
        .map(|row| {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Domain("densities must be finite and non-negative".into()));
            }
            Ok(row.iter().map(|p| p.ln()).collect())
        })
        .collect::<Result<_>>()?;
    sppd_from_log(&logs)
}

/// As [`sppd`], from log densities.
pub fn sppd_from_log(log_densities: &[Vec<f64>]) -> Result<Sppd> {
    if log_densities.is_empty() || log_densities.iter().any(Vec::is_empty) {
        return Err(Error::InsufficientData(
            "SPPD needs at least one event and one draw".into(),
        ));
    }
    let per_event: Vec<f64> = log_densities.iter().map(|row| log_mean_exp(row)).collect();
    let zero = per_event.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    let mean = per_event.iter().sum::<f64>() / per_event.len() as f64;
    Ok(Sppd {
        value: if zero > 0 { 0.0 } else { mean.exp() },
        zero_density_events: zero,
    })
}

/// Support-weighted mean of per-class F1 scores.
pub fn weighted_f1(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::Domain("label vectors must be non-empty and equal length".into()));
    }
    let k = truth.iter().chain(predicted).max().copied().unwrap_or(0) + 1;
    let (mut tp, mut fp, mut fn_, mut support) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (&t, &p) in truth.iter().zip(predicted) {
        support[t] += 1.0;
        if t == p {
            tp[t] += 1.0;
        } else {
            fp[p] += 1.0;
            fn_[t] += 1.0;
        }
    }
    let n = truth.len() as f64;
    Ok((0..k)
        .filter(|&c| support[c] > 0.0)
        .map(|c| {
            let denom = 2.0 * tp[c] + fp[c] + fn_[c];
            let f1 = if denom > 0.0 { 2.0 * tp[c] / denom } else { 0.0 };
            f1 * support[c] / n
        })
        .sum())
}

pub fn mse(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::Domain("value vectors must be non-empty and equal length".into()));
    }
    Ok(truth.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64)
}

fn observed_value(t: &EventTuple, site: Site) -> f64 {
    match site {
        Site::Subject => t.subject.index() as f64,
        Site::Object => t.object.index() as f64,
        Site::Predicate => t.predicate,
        Site::Quantifier => t.quantifier as f64,
    }
}

fn observed_class(t: &EventTuple, site: Site) -> usize {
    match site {
        Site::Subject => t.subject.index(),
        Site::Object => t.object.index(),
        _ => unreachable!("not a categorical site"),
    }
}

/// Point prediction for one held-out site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    /// Draw-averaged probabilities over the categories.
    Categorical(Vec<f64>),
    Real(f64),
}

impl Prediction {
    pub fn point(&self) -> f64 {
        match self {
            Prediction::Categorical(p) => argmax(p) as f64,
            Prediction::Real(v) => *v,
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Model,
    Naive,
    Prior,
    Lr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Naive => "naive",
            Method::Prior => "prior",
            Method::Lr => "lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub site: Site,
    pub method: Method,
    /// Absent for the linear baseline, which has no density.
    pub sppd: Option<Sppd>,
    /// `"weighted_f1"` for subject and object, `"mse"` otherwise.
    pub metric: String,
    pub error: f64,
    pub predictions: Vec<Prediction>,
}

fn metric_name(site: Site) -> &'static str {
    if site.is_categorical() {
        "weighted_f1"
    } else {
        "mse"
    }
}

fn score_predictions(tuples: &[EventTuple], site: Site, predictions: &[Prediction]) -> Result<f64> {
    if site.is_categorical() {
        let truth: Vec<usize> = tuples.iter().map(|t| observed_class(t, site)).collect();
        let pred: Vec<usize> = predictions.iter().map(|p| p.point() as usize).collect();
        weighted_f1(&truth, &pred)
    } else {
        let truth: Vec<f64> = tuples.iter().map(|t| observed_value(t, site)).collect();
        let pred: Vec<f64> = predictions.iter().map(Prediction::point).collect();
        mse(&truth, &pred)
    }
}

/// Predictive log density of the site's observed value and the predictive
/// expectation (or category probabilities), under one draw.
fn site_predictive(
    table: &ClassTables,
    theta: &ParamsConstrained,
    t: &EventTuple,
    site: Site,
    observed: SiteMask,
) -> (f64, Prediction) {
    let c = table.classes();
    let mut lw = vec![0.0; c];
    table.log_weights(t, observed, &mut lw);
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = lw.iter().map(|v| (v - m).exp()).sum();
    let resp: Vec<f64> = lw.iter().map(|v| (v - m).exp() / s).collect();
    let log_resp: Vec<f64> = lw.iter().map(|v| v - m - s.ln()).collect();

    let terms: Vec<f64> = (0..c).map(|k| log_resp[k] + table.site(t, site, k)).collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_density = if mx == f64::NEG_INFINITY {
        mx
    } else {
        mx + terms.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
    };

    let prediction = match site {
        Site::Subject | Site::Object => {
            let rows = if site == Site::Subject {
                &theta.subject_probs
            } else {
                &theta.object_probs
            };
            let mut probs = vec![0.0; rows[0].len()];
            for (k, r) in resp.iter().enumerate() {
                for (p, v) in probs.iter_mut().zip(&rows[k]) {
                    *p += r * v;
                }
            }
            Prediction::Categorical(probs)
        }
        Site::Predicate => Prediction::Real(
            resp.iter()
                .enumerate()
                .map(|(k, r)| r * theta.beta(k).map(|b| b.mean()).unwrap_or(f64::NAN))
                .sum(),
        ),
        Site::Quantifier => Prediction::Real(
            resp.iter()
                .enumerate()
                .map(|(k, r)| {
                    let (d, b) = (theta.quantifier_gate[k], theta.quantifier_success[k]);
                    r * (1.0 - d) * (1.0 - b) / b
                })
                .sum(),
        ),
    };
    (log_density, prediction)
}

/// Imputes `site` for each held-out tuple conditioning on the sites in
/// `observed`, averaging over `thetas`.
pub fn impute_with_mask(
    thetas: &[ParamsConstrained],
    held_out: &[EventTuple],
    site: Site,
    observed: SiteMask,
    method: Method,
) -> Result<ImputationResult> {
    if thetas.is_empty() || held_out.is_empty() {
        return Err(Error::InsufficientData(
            "imputation needs draws and held-out events".into(),
        ));
    }
    let observed = observed.without(site);
    let tables: Vec<ClassTables> = thetas.iter().map(ClassTables::new).collect();
    let per_event: Vec<(Vec<f64>, Prediction)> = held_out
        .par_iter()
        .map(|t| {
            let mut logs = Vec::with_capacity(thetas.len());
            let mut acc: Option<Prediction> = None;
            for (table, theta) in tables.iter().zip(thetas) {
                let (ld, pred) = site_predictive(table, theta, t, site, observed);
                logs.push(ld);
                acc = Some(match (acc, pred) {
                    (None, p) => p,
                    (Some(Prediction::Categorical(mut a)), Prediction::Categorical(b)) => {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        Prediction::Categorical(a)
                    }
                    (Some(Prediction::Real(a)), Prediction::Real(b)) => Prediction::Real(a + b),
                    _ => unreachable!("prediction kind is fixed by the site"),
                });
            }
            let n = thetas.len() as f64;
            let pred = match acc.expect("at least one draw") {
                Prediction::Categorical(mut p) => {
                    p.iter_mut().for_each(|v| *v /= n);
                    Prediction::Categorical(p)
                }
                Prediction::Real(v) => Prediction::Real(v / n),
            };
            (logs, pred)
        })
        .collect();
    let (logs, predictions): (Vec<_>, Vec<_>) = per_event.into_iter().unzip();
    let error = score_predictions(held_out, site, &predictions)?;
    Ok(ImputationResult {
        site,
        method,
        sppd: Some(sppd_from_log(&logs)?),
        metric: metric_name(site).to_string(),
        error,
        predictions,
    })
}

/// Removes `site` from each held-out tuple and predicts it from the others.
pub fn impute(thetas: &[ParamsConstrained], held_out: &[EventTuple], site: Site) -> Result<ImputationResult> {
    impute_with_mask(thetas, held_out, site, SiteMask::ALL, Method::Model)
}

/// Fits the model to `site` alone. Predictions from it ignore the other sites.
pub fn baseline_naive(
    train: &[EventTuple],
    site: Site,
    hyper: &Hyperparams,
    config: &SamplerConfig,
) -> Result<Vec<ParamsConstrained>> {
    let data = ModelData::with_mask(train, SiteMask::only(site))?;
    Ok(sample_posterior(&data, hyper, config)?.thetas().cloned().collect())
}

/// Evaluates draws from [`baseline_naive`] on held-out data.
pub fn impute_naive(thetas: &[ParamsConstrained], held_out: &[EventTuple], site: Site) -> Result<ImputationResult> {
    impute_with_mask(thetas, held_out, site, SiteMask::NONE, Method::Naive)
}

/// `draws` parameter packs from the prior.
pub fn baseline_prior(hyper: &Hyperparams, draws: usize, seed: u64) -> Result<Vec<ParamsConstrained>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws).map(|_| sample_prior(hyper, &mut rng)).collect()
}

/// Least-squares predictor of one site from the others.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    site: Site,
    /// One coefficient column per output (one per category for categorical sites).
    coefficients: DMatrix<f64>,
    pub ridge_used: bool,
}

fn features(t: &EventTuple, site: Site) -> Vec<f64> {
    let mut x = vec![1.0];
    for other in Site::ALL.into_iter().filter(|&s| s != site) {
        match other {
            Site::Subject | Site::Object => {
                let k = observed_class(t, other);
                x.extend((1..ActorClass::ALL.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
            }
            _ => x.push(observed_value(t, other)),
        }
    }
    x
}

/// Solves least squares via the normal equations, falling back to a small
/// ridge penalty when the design is singular.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, bool) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let well_conditioned = {
        let svd = xtx.clone().svd(false, false);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        max > 0.0 && min > max * 1e-12
    };
    if well_conditioned {
        if let Some(ch) = xtx.clone().cholesky() {
            return (ch.solve(&xty), false);
        }
    }
    log::warn!("singular least-squares design; using ridge penalty {ridge:e}");
    let n = xtx.nrows();
    let reg = xtx + DMatrix::identity(n, n) * ridge;
    let sol = reg
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&xty))
        .unwrap_or_else(|| reg.svd(true, true).solve(&xty, 1e-14).expect("SVD solve"));
    (sol, true)
}

pub fn baseline_lr(train: &[EventTuple], site: Site) -> Result<LinearBaseline> {
    if train.is_empty() {
        return Err(Error::InsufficientData("linear baseline needs training events".into()));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|t| features(t, site)).collect();
    let p = rows[0].len();
    let x = DMatrix::from_fn(train.len(), p, |i, j| rows[i][j]);
    let y = if site.is_categorical() {
        let k = ActorClass::ALL.len();
        DMatrix::from_fn(train.len(), k, |i, j| {
            if observed_class(&train[i], site) == j {
                1.0
            } else {
                0.0
            }
        })
    } else {
        DMatrix::from_fn(train.len(), 1, |i, _| observed_value(&train[i], site))
    };
    let (coefficients, ridge_used) = least_squares(&x, &y, 1e-6);
    Ok(LinearBaseline {
        site,
        coefficients,
        ridge_used,
    })
}

impl LinearBaseline {
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn predict(&self, t: &EventTuple) -> Prediction {
        let x = DVector::from_vec(features(t, self.site));
        let out = self.coefficients.transpose() * x;
        if self.site.is_categorical() {
            Prediction::Categorical(out.iter().copied().collect())
        } else {
            Prediction::Real(out[0])
        }
    }

    pub fn evaluate(&self, held_out: &[EventTuple]) -> Result<ImputationResult> {
        let predictions: Vec<Prediction> = held_out.iter().map(|t| self.predict(t)).collect();
        Ok(ImputationResult {
            site: self.site,
            method: Method::Lr,
            sppd: None,
            metric: metric_name(self.site).to_string(),
            error: score_predictions(held_out, self.site, &predictions)?,
            predictions,
        })
    }
}

/// SPPD of complete held-out tuples under the full four-site likelihood.
pub fn joint_sppd(thetas: &[ParamsConstrained], held_out: &[EventTuple]) -> Result<Sppd> {
    if thetas.is_empty() {
        return Err(Error::InsufficientData("no draws".into()));
    }
    let tables: Vec<ClassTables> = thetas.iter().map(ClassTables::new).collect();
    let logs: Vec<Vec<f64>> = held_out
        .par_iter()
        .map(|t| {
            let mut lw = vec![0.0; tables[0].classes()];
            tables
                .iter()
                .map(|table| {
                    table.log_weights(t, SiteMask::ALL, &mut lw);
                    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + lw.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                })
                .collect()
        })
        .collect();
    sppd_from_log(&logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub classes: usize,
    pub mean: f64,
    pub sd: f64,
    /// Held-out SPPD per seed; `None` where the fit failed.
    pub per_seed: Vec<Option<f64>>,
}

/// Fits each class count with each seed and reports held-out joint SPPD.
/// Failed fits are logged and skipped.
pub fn select_c(
    train: &[EventTuple],
    held_out: &[EventTuple],
    hyper: &Hyperparams,
    classes: &[usize],
    seeds: &[u64],
    config: &SamplerConfig,
) -> Result<Vec<SelectionRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("select_c needs at least one seed".into()));
    }
    let data = ModelData::new(train)?;
    classes
        .iter()
        .map(|&c| {
            let h = hyper.with_classes(c)?;
            let per_seed: Vec<Option<f64>> = seeds
                .iter()
                .map(|&seed| {
                    let cfg = SamplerConfig { seed, ..config.clone() };
                    let fit = sample_posterior(&data, &h, &cfg).and_then(|s| {
                        let thetas: Vec<_> = s.thetas().cloned().collect();
                        joint_sppd(&thetas, held_out)
                    });
                    match fit {
                        Ok(s) => Some(s.value),
                        Err(e) => {
                            log::warn!("C={c}, seed {seed}: {e}");
                            None
                        }
                    }
                })
                .collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let mean = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            let sd = if ok.len() > 1 {
                (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(SelectionRow {
                classes: c,
                mean,
                sd,
                per_seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::YearMonth;
    use crate::model::{constrain, responsibilities};

    fn tuple(s: usize, p: f64, q: u64, o: usize) -> EventTuple {
        EventTuple {
            subject: ActorClass::from_index(s).unwrap(),
            predicate: p,
            quantifier: q,
            object: ActorClass::from_index(o).unwrap(),
            location: "x".into(),
            month: YearMonth::new(2002, 3).unwrap(),
        }
    }

    #[test]
    fn sppd_examples() {
        assert!((sppd(&[vec![0.25; 3], vec![0.25; 3]]).unwrap().value - 0.25).abs() < 1e-15);
        assert!((sppd(&[vec![0.2, 0.4]]).unwrap().value - 0.3).abs() < 1e-15);
        assert!((sppd(&[vec![0.1], vec![0.4]]).unwrap().value - 0.2).abs() < 1e-15);
        let z = sppd(&[vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!((z.value, z.zero_density_events), (0.0, 1));
    }

    #[test]
    fn sppd_is_permutation_invariant() {
        let a = vec![vec![0.1, 0.7, 0.3], vec![0.5, 0.2, 0.9]];
        let b = vec![vec![0.9, 0.5, 0.2], vec![0.3, 0.1, 0.7]];
        assert!((sppd(&a).unwrap().value - sppd(&b).unwrap().value).abs() < 1e-15);
    }

    #[test]
    fn weighted_f1_hand_computed() {
        assert_eq!(weighted_f1(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        // Confusion (rows truth): class0 [2,1,0], class1 [0,1,1], class2 [1,0,2].
        let truth = [0, 0, 0, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 1, 2, 0, 2, 2];
        let f0 = 2.0 * 2.0 / (4.0 + 1.0 + 1.0);
        let f1 = 2.0 * 1.0 / (2.0 + 1.0 + 1.0);
        let f2 = 2.0 * 2.0 / (4.0 + 1.0 + 1.0);
        let expected = (3.0 * f0 + 2.0 * f1 + 3.0 * f2) / 8.0;
        assert!((weighted_f1(&truth, &pred).unwrap() - expected).abs() < 1e-12);
    }

    fn deterministic_theta() -> ParamsConstrained {
        let h = Hyperparams::new(2).unwrap();
        let mut theta = constrain(&vec![0.0; h.layout().dim()], &h).unwrap();
        theta.class_weights = vec![1.0 - 1e-12, 1e-12];
        theta.subject_probs[0] = vec![1e-12, 1e-12, 1.0 - 3e-12, 1e-12];
        theta
    }

    #[test]
    fn impute_one_hot_subject() {
        let theta = deterministic_theta();
        let held = vec![tuple(2, 0.4, 0, 1), tuple(2, 0.7, 3, 0)];
        let r = impute(&[theta], &held, Site::Subject).unwrap();
        assert_eq!(r.error, 1.0);
        assert!(r.predictions.iter().all(|p| p.point() == 2.0));
    }

    #[test]
    fn quantifier_expectation_single_class() {
        let h = Hyperparams::new(1).unwrap();
        let mut theta = constrain(&vec![0.0; h.layout().dim()], &h).unwrap();
        theta.quantifier_gate = vec![0.3];
        theta.quantifier_success = vec![0.25];
        let r = impute(&[theta], &[tuple(0, 0.5, 2, 0)], Site::Quantifier).unwrap();
        assert!((r.predictions[0].point() - 0.7 * 0.75 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn impute_matches_responsibilities() {
        let h = Hyperparams::new(3).unwrap();
        let x: Vec<f64> = (0..h.layout().dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let theta = constrain(&x, &h).unwrap();
        let t = tuple(1, 0.35, 4, 3);
        let r = impute(std::slice::from_ref(&theta), std::slice::from_ref(&t), Site::Predicate).unwrap();
        let resp = responsibilities(&theta, &t, SiteMask::ALL.without(Site::Predicate)).unwrap();
        let expected: f64 = (0..3).map(|c| resp[c] * theta.beta(c).unwrap().mean()).sum();
        assert!((r.predictions[0].point() - expected).abs() < 1e-12);
    }

    #[test]
    fn naive_predictions_ignore_other_sites() {
        let h = Hyperparams::new(3).unwrap();
        let x: Vec<f64> = (0..h.layout().dim()).map(|i| (i as f64 * 0.71).cos()).collect();
        let theta = constrain(&x, &h).unwrap();
        let held = vec![tuple(0, 0.1, 0, 0), tuple(3, 0.9, 40, 2)];
        let r = impute_naive(&[theta], &held, Site::Predicate).unwrap();
        assert_eq!(r.predictions[0], r.predictions[1]);
    }

    #[test]
    fn prior_baseline_is_deterministic() {
        let h = Hyperparams::new(4).unwrap();
        let a = baseline_prior(&h, 10, 7).unwrap();
        assert_eq!(a, baseline_prior(&h, 10, 7).unwrap());
        assert!(a.iter().all(|t| t.is_ordered()));
    }

    #[test]
    fn lr_copy_task_is_exact() {
        // Quantifier equals 10 * predicate exactly.
        let train: Vec<EventTuple> = (0..40)
            .map(|i| {
                let p = 0.1 + 0.02 * i as f64;
                let mut t = tuple(i % 4, p, 0, (i / 4) % 4);
                t.quantifier = (10.0 * p).round() as u64;
                t.predicate = t.quantifier as f64 / 10.0 + 1e-9;
                t
            })
            .collect();
        let lr = baseline_lr(&train, Site::Quantifier).unwrap();
        let r = lr.evaluate(&train).unwrap();
        assert!(r.error < 1e-10, "{}", r.error);
    }

    #[test]
    fn lr_constant_target() {
        let train: Vec<EventTuple> = (0..32)
            .map(|i| tuple(i % 4, 0.1 + 0.02 * i as f64, 5, (i / 4) % 4))
            .collect();
        let lr = baseline_lr(&train, Site::Quantifier).unwrap();
        assert!(!lr.ridge_used);
        let r = lr.evaluate(&train).unwrap();
        assert!(r.error < 1e-20, "{}", r.error);
    }

    #[test]
    fn least_squares_three_points() {
        // y = 1 + 2x through (0,1), (1,3), (2,6): normal equations give
        // slope 5/2 and intercept 5/6.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 3.0, 6.0]);
        let (b, ridge) = least_squares(&x, &y, 1e-6);
        assert!(!ridge);
        assert!((b[0] - 5.0 / 6.0).abs() < 1e-12 && (b[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn singular_design_uses_ridge() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let (b, ridge) = least_squares(&x, &y, 1e-6);
        assert!(ridge);
        assert!((b[0] + b[1] - 2.0).abs() < 1e-5);
    }
}
