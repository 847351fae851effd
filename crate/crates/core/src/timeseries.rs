//! Monthly intensity series and the forecasting analyses run on them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::{EventTuple, YearMonth};
use crate::error::{Error, Result};
use crate::infer::{sample_posterior, score_events, SamplerConfig};
use crate::model::{Hyperparams, ModelData, SiteMask};

/// What a series measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    /// Rescaled posterior mean class.
    Latent,
    Predicate,
    Quantifier,
    External,
}

/// One value per month over a contiguous range of months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySeries {
    pub location: String,
    pub start: YearMonth,
    pub values: Vec<f64>,
    pub kind: SeriesKind,
}

impl IntensitySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn months(&self) -> Vec<YearMonth> {
        let s = self.start.ordinal();
        (0..self.values.len() as i64)
            .map(|i| YearMonth::from_ordinal(s + i))
            .collect()
    }

    pub fn end(&self) -> YearMonth {
        YearMonth::from_ordinal(self.start.ordinal() + self.values.len() as i64 - 1)
    }

    /// The part of the series covering `[from, to]`.
    pub fn window(&self, from: YearMonth, to: YearMonth) -> Result<IntensitySeries> {
        let (a, b) = (
            from.ordinal() - self.start.ordinal(),
            to.ordinal() - self.start.ordinal(),
        );
        if a < 0 || b >= self.values.len() as i64 || a > b {
            return Err(Error::InsufficientData(format!(
                "series for {} does not cover {from}..{to}",
                self.location
            )));
        }
        Ok(IntensitySeries {
            location: self.location.clone(),
            start: from,
            values: self.values[a as usize..=b as usize].to_vec(),
            kind: self.kind,
        })
    }
}

/// Min-max rescaling onto `[0, 1]`; a constant input maps to zeros.
pub fn min_max_rescale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Mean value per month for events at `location`, without filling gaps.
pub fn monthly_means(tuples: &[EventTuple], values: &[f64], location: &str) -> Result<BTreeMap<YearMonth, f64>> {
    if tuples.len() != values.len() {
        return Err(Error::Domain("one value per event is required".into()));
    }
    let mut sums: BTreeMap<YearMonth, (f64, usize)> = BTreeMap::new();
    for (t, &v) in tuples.iter().zip(values) {
        if t.location == location {
            let e = sums.entry(t.month).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(Error::InsufficientData(format!("no events for location {location:?}")));
    }
    Ok(sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect())
}

/// Fills a sparse monthly map into a contiguous series: interior gaps are
/// interpolated linearly, and months outside the observed range (if `span`
/// extends past it) take the nearest observed value.
pub fn fill_months(
    means: &BTreeMap<YearMonth, f64>,
    span: Option<(YearMonth, YearMonth)>,
) -> Result<(YearMonth, Vec<f64>)> {
    let (&first, _) = means
        .iter()
        .next()
        .ok_or_else(|| Error::InsufficientData("no observed months".into()))?;
    let (&last, _) = means.iter().next_back().expect("non-empty");
    let (start, end) = span.unwrap_or((first, last));
    if end < start {
        return Err(Error::Domain("empty month span".into()));
    }
    let points: Vec<(i64, f64)> = means.iter().map(|(m, v)| (m.ordinal(), *v)).collect();
    let mut out = Vec::with_capacity((end.ordinal() - start.ordinal() + 1) as usize);
    let mut j = 0;
    for o in start.ordinal()..=end.ordinal() {
        while j + 1 < points.len() && points[j + 1].0 <= o {
            j += 1;
        }
        let v = if o <= points[0].0 {
            points[0].1
        } else if o >= points[points.len() - 1].0 {
            points[points.len() - 1].1
        } else if points[j].0 == o {
            points[j].1
        } else {
            let (a, b) = (points[j], points[j + 1]);
            a.1 + (b.1 - a.1) * (o - a.0) as f64 / (b.0 - a.0) as f64
        };
        out.push(v);
    }
    Ok((start, out))
}

/// Monthly mean of a per-event quantity at one location. Latent inputs are
/// min-max rescaled over all events first.
pub fn aggregate_monthly(
    tuples: &[EventTuple],
    values: &[f64],
    location: &str,
    kind: SeriesKind,
) -> Result<IntensitySeries> {
    let rescaled;
    let values = if kind == SeriesKind::Latent {
        rescaled = min_max_rescale(values);
        &rescaled
    } else {
        values
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series values must be finite".into()));
    }
    let means = monthly_means(tuples, values, location)?;
    let (start, values) = fill_months(&means, None)?;
    Ok(IntensitySeries {
        location: location.to_string(),
        start,
        values,
        kind,
    })
}

/// First differences.
pub fn difference(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InsufficientData("differencing needs at least two values".into()));
    }
    Ok(values.windows(2).map(|w| w[1] - w[0]).collect())
}

struct Ols {
    beta: DMatrix<f64>,
    residuals: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    ridge_used: bool,
}

fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Ols {
    let xtx = x.transpose() * x;
    let n = xtx.nrows();
    let svd = xtx.clone().svd(false, false);
    let (max, min) = (svd.singular_values.max(), svd.singular_values.min());
    let singular = !(max > 0.0 && min > max * 1e-12);
    let mut ridge_used = false;
    let inv = if singular {
        None
    } else {
        xtx.clone().cholesky().map(|c| c.inverse())
    };
    let xtx_inv = inv.unwrap_or_else(|| {
        ridge_used = true;
        log::warn!("singular regression; using ridge penalty 1e-8");
        let reg = &xtx + DMatrix::identity(n, n) * 1e-8;
        reg.clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| reg.pseudo_inverse(1e-14).ok())
            .unwrap_or_else(|| DMatrix::zeros(n, n))
    });
    let beta = &xtx_inv * (x.transpose() * y);
    let residuals = y - x * &beta;
    Ols {
        beta,
        residuals,
        xtx_inv,
        ridge_used,
    }
}

fn ssr(r: &DMatrix<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Augmented Dickey-Fuller test outcome (constant, no trend).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub critical_value_5pct: f64,
    pub lag: usize,
    pub n_obs: usize,
    /// Unit root rejected at 5%, i.e. the series looks stationary.
    pub stationary: bool,
    /// Zero-variance input; no test was performed.
    pub degenerate: bool,
}

/// 5% critical value of the constant-only ADF statistic for `n` observations.
pub fn adf_critical_value_5pct(n: usize) -> f64 {
    let t = n as f64;
    -2.86154 - 2.8903 / t - 4.234 / (t * t) - 40.040 / (t * t * t)
}

fn adf_design(y: &[f64], dy: &[f64], lag: usize, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    // Row for Δy[t] with t in first..dy.len(): [1, y[t], Δy[t-1], .., Δy[t-lag]].
    let rows = dy.len() - first;
    let x = DMatrix::from_fn(rows, 2 + lag, |i, j| {
        let t = first + i;
        match j {
            0 => 1.0,
            1 => y[t],
            _ => dy[t - (j - 1)],
        }
    });
    let yy = DMatrix::from_fn(rows, 1, |i, _| dy[first + i]);
    (x, yy)
}

/// ADF test with the lag order chosen by BIC up to `floor((L-1)^(1/3))` on a
/// common sample, then refit on all usable observations.
pub fn adf_test(series: &[f64]) -> Result<AdfResult> {
    if series.len() < 20 {
        return Err(Error::InsufficientData("ADF needs at least 20 observations".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series values must be finite".into()));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    if series.iter().all(|v| (v - mean).abs() <= 1e-12 * mean.abs().max(1.0)) {
        return Ok(AdfResult {
            statistic: f64::NAN,
            critical_value_5pct: f64::NAN,
            lag: 0,
            n_obs: 0,
            stationary: false,
            degenerate: true,
        });
    }
    let dy = difference(series)?;
    let max_lag = ((series.len() - 1) as f64).cbrt().floor() as usize;
    let mut best = (f64::INFINITY, 0);
    for lag in 0..=max_lag {
        let (x, y) = adf_design(series, &dy, lag, max_lag);
        let fit = ols(&x, &y);
        let n = x.nrows() as f64;
        let bic = n * (ssr(&fit.residuals) / n).ln() + x.ncols() as f64 * n.ln();
        if bic < best.0 {
            best = (bic, lag);
        }
    }
    let lag = best.1;
    let (x, y) = adf_design(series, &dy, lag, lag);
    let fit = ols(&x, &y);
    let n = x.nrows();
    let sigma2 = ssr(&fit.residuals) / (n - x.ncols()) as f64;
    let se = (sigma2 * fit.xtx_inv[(1, 1)]).sqrt();
    let statistic = fit.beta[(1, 0)] / se;
    let crit = adf_critical_value_5pct(n);
    Ok(AdfResult {
        statistic,
        critical_value_5pct: crit,
        lag,
        n_obs: n,
        stationary: statistic < crit,
        degenerate: false,
    })
}

/// Least-squares vector autoregression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarFit {
    pub variables: usize,
    pub lag: usize,
    pub intercept: Vec<f64>,
    /// `coefficients[i][(r, c)]` is the effect of variable `c` at lag `i + 1` on variable `r`.
    pub coefficients: Vec<DMatrix<f64>>,
    pub residual_cov: DMatrix<f64>,
    pub bic: f64,
    pub n_obs: usize,
}

fn check_series_set(series: &[&[f64]]) -> Result<usize> {
    let m = series.len();
    if !(1..=2).contains(&m) {
        return Err(Error::Domain("VAR supports one or two series".into()));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Domain("series must have equal lengths".into()));
    }
    if series.iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("series values must be finite".into()));
    }
    Ok(len)
}

fn var_design(series: &[&[f64]], lag: usize, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = series.len();
    let rows = series[0].len() - first;
    let x = DMatrix::from_fn(rows, 1 + m * lag, |i, j| {
        if j == 0 {
            return 1.0;
        }
        let (l, v) = ((j - 1) / m + 1, (j - 1) % m);
        series[v][first + i - l]
    });
    let y = DMatrix::from_fn(rows, m, |i, v| series[v][first + i]);
    (x, y)
}

fn fit_var_lag(series: &[&[f64]], lag: usize, first: usize) -> VarFit {
    let m = series.len();
    let (x, y) = var_design(series, lag, first);
    let fit = ols(&x, &y);
    let n = x.nrows();
    let cov = fit.residuals.transpose() * &fit.residuals / n as f64;
    let k = (m * (m * lag + 1)) as f64;
    let bic = n as f64 * cov.determinant().ln() + k * (n as f64).ln();
    VarFit {
        variables: m,
        lag,
        intercept: (0..m).map(|v| fit.beta[(0, v)]).collect(),
        coefficients: (0..lag)
            .map(|l| DMatrix::from_fn(m, m, |r, c| fit.beta[(1 + l * m + c, r)]))
            .collect(),
        residual_cov: cov,
        bic,
        n_obs: n,
    }
}

/// Fits VARs with lags `1..=max_lag` on a common sample, picks the lowest BIC,
/// and refits that lag on all usable observations.
pub fn fit_var(series: &[&[f64]], max_lag: usize) -> Result<VarFit> {
    let len = check_series_set(series)?;
    if max_lag < 1 {
        return Err(Error::Config("max_lag must be at least 1".into()));
    }
    if len < max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "need at least {} observations for max lag {max_lag}",
            max_lag + 10
        )));
    }
    let mut best: Option<VarFit> = None;
    for lag in 1..=max_lag {
        let fit = fit_var_lag(series, lag, max_lag);
        let better = match &best {
            None => true,
            Some(b) => fit.bic < b.bic || (b.bic.is_nan() && !fit.bic.is_nan()),
        };
        if better {
            best = Some(fit);
        }
    }
    let lag = best.expect("at least one lag").lag;
    Ok(fit_var_lag(series, lag, lag))
}

/// Univariate autoregression with BIC lag selection.
pub fn fit_ar(series: &[f64], max_lag: usize) -> Result<VarFit> {
    fit_var(&[series], max_lag)
}

impl VarFit {
    /// One-step-ahead forecast after the last observation of `history`.
    pub fn forecast_one(&self, history: &[&[f64]]) -> Result<Vec<f64>> {
        if history.len() != self.variables || history.iter().any(|h| h.len() < self.lag) {
            return Err(Error::InsufficientData("history shorter than the model lag".into()));
        }
        let mut out = self.intercept.clone();
        for (l, a) in self.coefficients.iter().enumerate() {
            for (r, o) in out.iter_mut().enumerate() {
                for (c, h) in history.iter().enumerate() {
                    *o += a[(r, c)] * h[h.len() - 1 - l];
                }
            }
        }
        Ok(out)
    }
}

/// Mean squared one-step error of `series[target]` over an expanding window:
/// fold `j` fits on the first `L - folds + j - 1` points and predicts the next.
pub fn forecast_cv(series: &[&[f64]], target: usize, folds: usize, max_lag: usize) -> Result<f64> {
    let len = check_series_set(series)?;
    if target >= series.len() {
        return Err(Error::Config("target index out of range".into()));
    }
    if folds < 1 || len < folds + max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "series of length {len} too short for {folds} folds with max lag {max_lag}"
        )));
    }
    let mut total = 0.0;
    for j in 1..=folds {
        let train = len - folds + j - 1;
        let hist: Vec<&[f64]> = series.iter().map(|s| &s[..train]).collect();
        let fit = fit_var(&hist, max_lag)?;
        let pred = fit.forecast_one(&hist)?[target];
        total += (pred - series[target][train]).powi(2);
    }
    Ok(total / folds as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f_statistic: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
    /// The cause adds nothing estimable (e.g. it duplicates the effect).
    pub degenerate: bool,
}

/// F-test of whether `lag` lags of `cause` improve a least-squares
/// autoregression of `effect`.
pub fn granger_test(cause: &[f64], effect: &[f64], lag: usize) -> Result<GrangerResult> {
    let len = check_series_set(&[cause, effect])?;
    if lag < 1 {
        return Err(Error::Config("lag must be at least 1".into()));
    }
    let n = len.saturating_sub(lag);
    if n <= 2 * lag + 1 {
        return Err(Error::InsufficientData("series too short for the Granger lag".into()));
    }
    let (xu, y) = var_design(&[effect, cause], lag, lag);
    let y = y.columns(0, 1).into_owned();
    // Restricted design keeps the intercept and the effect's own lags.
    let own: Vec<usize> = std::iter::once(0).chain((0..lag).map(|l| 1 + 2 * l)).collect();
    let xr = DMatrix::from_fn(xu.nrows(), own.len(), |i, j| xu[(i, own[j])]);
    let (ru, rr) = (ols(&xu, &y), ols(&xr, &y));
    let (ssr_u, ssr_r) = (ssr(&ru.residuals), ssr(&rr.residuals));
    let df_num = lag;
    let df_den = n - 2 * lag - 1;
    let gain = ssr_r - ssr_u;
    if ru.ridge_used || !(ssr_u > 0.0) || gain <= 1e-12 * ssr_r.max(f64::MIN_POSITIVE) {
        return Ok(GrangerResult {
            f_statistic: 0.0,
            p_value: 1.0,
            df_num,
            df_den,
            degenerate: true,
        });
    }
    let f = (gain / df_num as f64) / (ssr_u / df_den as f64);
    let dist = FisherSnedecor::new(df_num as f64, df_den as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(GrangerResult {
        f_statistic: f,
        p_value: dist.sf(f),
        df_num,
        df_den,
        degenerate: false,
    })
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InsufficientData(
            "Pearson needs two equal-length series of at least 3".into(),
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Domain(
            "Pearson correlation undefined for a zero-variance series".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Latent series of one location from a fit that never saw its events.
#[derive(Debug, Clone)]
pub struct LeakageSafeSeries {
    pub series: IntensitySeries,
    /// Location means per month with events, before gap filling.
    pub observed_months: BTreeMap<YearMonth, f64>,
    pub training_events: usize,
}

/// Fits on all events outside `location`, scores every event with that
/// posterior, and aggregates the location's rescaled mean class.
pub fn leakage_safe_z(
    tuples: &[EventTuple],
    location: &str,
    hyper: &Hyperparams,
    config: &SamplerConfig,
) -> Result<LeakageSafeSeries> {
    if !tuples.iter().any(|t| t.location == location) {
        return Err(Error::InsufficientData(format!("no events for location {location:?}")));
    }
    let train: Vec<EventTuple> = tuples.iter().filter(|t| t.location != location).cloned().collect();
    let samples = sample_posterior(&ModelData::new(&train)?, hyper, config)?;
    let z: Vec<f64> = score_events(&samples, tuples, SiteMask::ALL)
        .iter()
        .map(|e| e.mean)
        .collect();
    let rescaled = min_max_rescale(&z);
    let observed_months = monthly_means(tuples, &rescaled, location)?;
    let (start, values) = fill_months(&observed_months, None)?;
    Ok(LeakageSafeSeries {
        series: IntensitySeries {
            location: location.to_string(),
            start,
            values,
            kind: SeriesKind::Latent,
        },
        observed_months,
        training_events: train.len(),
    })
}

/// Writes a `month,value` CSV.
pub fn write_series<W: Write>(out: W, series: &IntensitySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "value"])?;
    for (m, v) in series.months().iter().zip(&series.values) {
        w.write_record([m.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `month,value` CSV (lines starting with `#` are skipped). Missing
/// months are interpolated.
pub fn read_series<R: Read>(source: R, location: &str, kind: SeriesKind) -> Result<IntensitySeries> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut means = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidTuple {
            index: i,
            reason: format!("bad {what} in series row"),
        };
        let month: YearMonth = rec
            .get(0)
            .ok_or_else(|| bad("month"))?
            .parse()
            .map_err(|_| bad("month"))?;
        let value: f64 = rec
            .get(1)
            .ok_or_else(|| bad("value"))?
            .parse()
            .map_err(|_| bad("value"))?;
        if !value.is_finite() {
            return Err(bad("value"));
        }
        means.insert(month, value);
    }
    let (start, values) = fill_months(&means, None)?;
    Ok(IntensitySeries {
        location: location.to_string(),
        start,
        values,
        kind,
    })
}
