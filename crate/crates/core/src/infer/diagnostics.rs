//! Convergence diagnostics: split R-hat and bulk effective sample size on
//! rank-normalized draws.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// R-hat above this is flagged.
pub const RHAT_FLAG: f64 = 1.05;
/// Bulk ESS below this is flagged.
pub const ESS_FLAG: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// `None` when undefined (single chain or no variance).
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub step_size: f64,
    pub mean_accept_stat: f64,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub mean_tree_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub coordinates: Vec<CoordinateSummary>,
    pub chains: Vec<ChainSummary>,
    pub total_divergences: usize,
    pub divergence_rate: f64,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub notices: Vec<String>,
}

impl DiagnosticsReport {
    pub fn flagged(&self) -> impl Iterator<Item = &CoordinateSummary> {
        self.coordinates.iter().filter(|c| c.flagged)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for ch in chains {
        let half = ch.len() / 2;
        out.push(ch[..half].to_vec());
        out.push(ch[ch.len() - half..].to_vec());
    }
    out
}

fn is_degenerate(chains: &[Vec<f64>]) -> bool {
    let n = chains.first().map_or(0, Vec::len);
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return true;
    }
    let first = chains[0][0];
    chains.iter().flatten().all(|&v| v == first) || chains.iter().flatten().any(|v| !v.is_finite())
}

/// Replaces each value by the normal score of its pooled rank (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| ch.iter().enumerate().map(move |(i, &v)| (v, c, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = idx.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && idx[end].0 == idx[start].0 {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        let z = normal.inverse_cdf((rank - 0.375) / (total + 0.25));
        for &(_, c, i) in &idx[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len() as f64;
    if m < 2 {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    if !(w > 0.0) {
        return None;
    }
    Some((((n - 1.0) / n * w + b / n) / w).sqrt())
}

/// Split R-hat: the larger of the rank-normalized and folded rank-normalized
/// statistics. `None` for fewer than two chains or constant draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || is_degenerate(chains) {
        return None;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split))?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - median).abs()).collect())
        .collect();
    let tail = if is_degenerate(&folded) {
        None
    } else {
        rhat_basic(&rank_normalize(&folded))
    };
    Some(tail.map_or(bulk, |t| bulk.max(t)))
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size with Geyer's initial monotone sequence estimator,
/// pooling autocorrelations over chains.
pub fn ess(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.first()?.len();
    if n < 4 || is_degenerate(chains) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t < n - 4 && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    Some(total / tau)
}

/// Bulk ESS: [`ess`] on rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Option<f64> {
    if is_degenerate(chains) {
        return None;
    }
    ess(&rank_normalize(&split_chains(chains)))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarizes one coordinate given its per-chain draws.
pub fn summarize(name: &str, chains: &[Vec<f64>]) -> CoordinateSummary {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mu = mean(&pooled);
    let sd = if pooled.len() > 1 {
        sample_var(&pooled).sqrt()
    } else {
        0.0
    };
    pooled.sort_by(f64::total_cmp);
    let rhat = split_rhat(chains);
    let ess_bulk = ess_bulk(chains);
    let flagged = (chains.len() > 1 && rhat.is_none_or(|r| r > RHAT_FLAG)) || ess_bulk.is_none_or(|e| e < ESS_FLAG);
    CoordinateSummary {
        name: name.to_string(),
        mean: mu,
        sd,
        q05: quantile(&pooled, 0.05),
        q50: quantile(&pooled, 0.5),
        q95: quantile(&pooled, 0.95),
        rhat,
        ess_bulk,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn constant_chains_are_flagged() {
        let chains = vec![vec![1.0; 100]; 4];
        assert_eq!(split_rhat(&chains), None);
        assert_eq!(ess_bulk(&chains), None);
        assert!(summarize("x", &chains).flagged);
    }

    #[test]
    fn iid_chains_look_converged() {
        let chains = iid(4, 2000, 1);
        let r = split_rhat(&chains).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
        let e = ess_bulk(&chains).unwrap();
        assert!(e > 5000.0 && e < 11000.0, "{e}");
        assert!(!summarize("x", &chains).flagged);
    }

    #[test]
    fn trending_chain_is_flagged() {
        let mut chains = iid(4, 500, 2);
        for (i, v) in chains[1].iter_mut().enumerate() {
            *v += i as f64 * 0.02;
        }
        let r = split_rhat(&chains).unwrap();
        assert!(r > 1.1, "{r}");
        assert!(summarize("x", &chains).flagged);
    }

    #[test]
    fn single_chain_has_no_rhat() {
        let chains = iid(1, 400, 3);
        assert_eq!(split_rhat(&chains), None);
        assert!(ess_bulk(&chains).is_some());
    }

    #[test]
    fn autocorrelated_chain_has_lower_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = 0.9 * x + e;
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.9: ESS/N is about (1 - 0.9) / (1 + 0.9).
        let e = ess(&chains).unwrap();
        let expected = 8000.0 * 0.1 / 1.9;
        assert!((e / expected - 1.0).abs() < 0.3, "{e} vs {expected}");
    }
}
