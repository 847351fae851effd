//! Posterior sampling, diagnostics and latent intensity extraction.

pub mod diagnostics;
mod nuts;

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::DiagnosticsReport;
pub use nuts::{TransitionStats, MAX_DELTA_H};

use crate::data::EventTuple;
use crate::error::{Error, Result};
use crate::model::{self, ClassTables, Hyperparams, LogDensity, LogJoint, ModelData, ParamsConstrained, SiteMask};
use crate::ordered::{self, Direction};
use diagnostics::{summarize, ChainSummary};
use nuts::{DualAveraging, Nuts, Point, Welford, WindowSchedule};

/// Divergence rate above which a warning is raised.
pub const DIVERGENCE_WARNING_RATE: f64 = 0.10;

/// Standard deviation of the per-chain noise added to the initial point.
const INIT_JITTER: f64 = 0.3;

fn default_draws() -> usize {
    1000
}
fn default_warmup() -> usize {
    200
}
fn default_chains() -> usize {
    4
}
fn default_target_accept() -> f64 {
    0.8
}
fn default_max_tree_depth() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_tree_depth")]
    pub max_tree_depth: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for running chains; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            warmup: default_warmup(),
            chains: default_chains(),
            target_accept: default_target_accept(),
            max_tree_depth: default_max_tree_depth(),
            seed: 0,
            workers: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.draws < 1 {
            return fail("draws must be at least 1");
        }
        if self.chains < 1 {
            return fail("chains must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)");
        }
        if self.max_tree_depth < 1 {
            return fail("max_tree_depth must be at least 1");
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1");
        }
        Ok(())
    }
}

/// Output of one chain: unconstrained draws with per-draw statistics.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<TransitionStats>,
    pub log_density: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn run_chain<T, F>(target: &T, config: &SamplerConfig, chain: usize, init: &F) -> Result<ChainOutput>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    let mut rng = chain_rng(config.seed, chain);
    let mut z = None;
    for _ in 0..100 {
        let cand = Point::new(target, init(&mut rng));
        if cand.log_density.is_finite() {
            z = Some(cand);
            break;
        }
    }
    let mut z = z.ok_or_else(|| Error::Sampler(format!("chain {chain}: no finite initial point in 100 attempts")))?;

    let mut sampler = Nuts::new(target, config.max_tree_depth);
    sampler.init_step_size(&mut z, &mut rng)?;
    let mut step = DualAveraging::new(config.target_accept, sampler.step_size);
    let windows = WindowSchedule::new(config.warmup);
    let mut var = Welford::new(target.dim());

    for it in 0..config.warmup {
        let stats = sampler.transition(&mut z, &mut rng);
        sampler.step_size = step.learn(stats.accept_stat);
        if windows.in_window(it) {
            var.add(&z.q);
        }
        if windows.ends_window(it) {
            sampler.inv_metric = var.regularized_variance();
            var.reset();
            sampler.init_step_size(&mut z, &mut rng)?;
            step.restart(sampler.step_size);
        }
    }
    if config.warmup > 0 {
        sampler.step_size = step.final_step_size();
    }

    let mut out = ChainOutput {
        draws: Vec::with_capacity(config.draws),
        stats: Vec::with_capacity(config.draws),
        log_density: Vec::with_capacity(config.draws),
        step_size: sampler.step_size,
        inv_metric: Vec::new(),
    };
    for _ in 0..config.draws {
        let stats = sampler.transition(&mut z, &mut rng);
        if let Some(i) = z.bad_coordinate() {
            return Err(Error::Sampler(format!(
                "chain {chain}: non-finite gradient at coordinate {i}"
            )));
        }
        out.draws.push(z.q.clone());
        out.stats.push(stats);
        out.log_density.push(z.log_density);
    }
    out.inv_metric = sampler.inv_metric;
    Ok(out)
}

/// Runs `config.chains` independent NUTS chains on `target`. `init` draws an
/// initial point from the chain's own random stream.
pub fn run_chains<T, F>(target: &T, config: &SamplerConfig, init: F) -> Result<Vec<ChainOutput>>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    config.validate()?;
    let work = || -> Result<Vec<ChainOutput>> {
        (0..config.chains)
            .into_par_iter()
            .map(|c| run_chain(target, config, c, &init))
            .collect()
    };
    match config.workers {
        Some(1) => (0..config.chains)
            .map(|c| run_chain(target, config, c, &init))
            .collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Sampler(e.to_string()))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub chain: usize,
    pub iteration: usize,
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
    pub log_density: f64,
    pub theta: ParamsConstrained,
}

/// Retained constrained draws from all chains, in chain order.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub hyper: Hyperparams,
    pub config: SamplerConfig,
    pub draws: Vec<PosteriorDraw>,
    pub step_sizes: Vec<f64>,
    pub diagnostics: DiagnosticsReport,
}

impl PosteriorSamples {
    pub fn from_draws(
        hyper: Hyperparams,
        config: SamplerConfig,
        draws: Vec<PosteriorDraw>,
        step_sizes: Vec<f64>,
    ) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Sampler("no posterior draws".into()));
        }
        for d in &draws {
            d.theta.check_invariants().map_err(|e| {
                Error::Sampler(format!(
                    "draw {} of chain {} violates constraints: {e}",
                    d.iteration, d.chain
                ))
            })?;
        }
        let diagnostics = diagnose(&draws, &step_sizes, config.max_tree_depth);
        Ok(Self {
            hyper,
            config,
            draws,
            step_sizes,
            diagnostics,
        })
    }

    pub fn thetas(&self) -> impl Iterator<Item = &ParamsConstrained> {
        self.draws.iter().map(|d| &d.theta)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn chains(&self) -> usize {
        self.draws.iter().map(|d| d.chain + 1).max().unwrap_or(0)
    }

    /// Posterior mean of every constrained scalar.
    pub fn mean(&self) -> ParamsConstrained {
        let n = self.draws.len() as f64;
        let mut acc = self.draws[0].theta.clone();
        let avg = |f: &dyn Fn(&ParamsConstrained) -> &Vec<f64>| -> Vec<f64> {
            let len = f(&self.draws[0].theta).len();
            (0..len)
                .map(|i| self.thetas().map(|t| f(t)[i]).sum::<f64>() / n)
                .collect()
        };
        acc.class_weights = avg(&|t| &t.class_weights);
        acc.predicate_mode = avg(&|t| &t.predicate_mode);
        acc.predicate_concentration = avg(&|t| &t.predicate_concentration);
        acc.quantifier_gate = avg(&|t| &t.quantifier_gate);
        acc.quantifier_success = avg(&|t| &t.quantifier_success);
        for c in 0..acc.classes() {
            acc.subject_probs[c] = avg(&|t| &t.subject_probs[c]);
            acc.object_probs[c] = avg(&|t| &t.object_probs[c]);
        }
        acc
    }

    pub fn divergences(&self) -> usize {
        self.draws.iter().filter(|d| d.divergent).count()
    }
}

fn diagnose(draws: &[PosteriorDraw], step_sizes: &[f64], max_depth: usize) -> DiagnosticsReport {
    let chains = draws.iter().map(|d| d.chain + 1).max().unwrap_or(0);
    let names = draws[0].theta.scalar_names();
    let mut per_chain: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); chains]; names.len()];
    for d in draws {
        for (i, v) in d.theta.flatten().into_iter().enumerate() {
            per_chain[i][d.chain].push(v);
        }
    }
    let coordinates: Vec<_> = names
        .iter()
        .zip(&per_chain)
        .map(|(name, chains)| summarize(name, chains))
        .collect();

    let chain_summaries: Vec<ChainSummary> = (0..chains)
        .map(|c| {
            let own: Vec<&PosteriorDraw> = draws.iter().filter(|d| d.chain == c).collect();
            let n = own.len().max(1) as f64;
            ChainSummary {
                chain: c,
                step_size: step_sizes.get(c).copied().unwrap_or(f64::NAN),
                mean_accept_stat: own.iter().map(|d| d.accept_stat).sum::<f64>() / n,
                divergences: own.iter().filter(|d| d.divergent).count(),
                max_depth_hits: own.iter().filter(|d| d.tree_depth >= max_depth).count(),
                mean_tree_depth: own.iter().map(|d| d.tree_depth as f64).sum::<f64>() / n,
            }
        })
        .collect();

    let total_divergences = chain_summaries.iter().map(|c| c.divergences).sum();
    let divergence_rate = total_divergences as f64 / draws.len() as f64;
    let mut notices = Vec::new();
    if chains < 2 {
        notices.push("single chain: R-hat omitted".to_string());
    }
    if divergence_rate > DIVERGENCE_WARNING_RATE {
        notices.push(format!(
            "{total_divergences} divergent transitions ({:.1}% of draws)",
            100.0 * divergence_rate
        ));
    }
    let flagged = coordinates.iter().filter(|c| c.flagged).count();
    if flagged > 0 {
        notices.push(format!("{flagged} coordinates flagged for R-hat or ESS"));
    }
    let max_rhat = coordinates.iter().filter_map(|c| c.rhat).reduce(f64::max);
    let min_ess_bulk = coordinates.iter().filter_map(|c| c.ess_bulk).reduce(f64::min);
    DiagnosticsReport {
        coordinates,
        chains: chain_summaries,
        total_divergences,
        divergence_rate,
        max_rhat,
        min_ess_bulk,
        notices,
    }
}

/// Initial point spread over the data. Class `k` of `C` starts with its
/// predicate mode at the `(k + 1/2)/C` quantile of the observed predicates
/// and with gates and success probabilities falling evenly from 0.9 to 0.1.
/// Concentrations start at `max(C^2 - 1, 3)`, which puts a Beta standard
/// deviation of about `1/(2C)` around each mode, and simplexes start flat.
/// Every coordinate is then jittered so that chains start apart.
pub fn initial_point<R: rand::Rng + ?Sized>(data: &ModelData, hyper: &Hyperparams, rng: &mut R) -> Vec<f64> {
    let layout = hyper.layout();
    let c = hyper.classes;
    let u: Vec<f64> = (0..c).map(|k| (k as f64 + 0.5) / c as f64).collect();
    let modes = data.predicate_quantiles(&u).unwrap_or_else(|| u.clone());
    let mut lambda: Vec<f64> = Vec::with_capacity(c);
    for m in modes {
        let l = ordered::logit(m.clamp(0.02, 0.98));
        lambda.push(match lambda.last() {
            Some(&prev) if l < prev + 0.1 => prev + 0.1,
            _ => l,
        });
    }
    let falling: Vec<f64> = u.iter().map(|v| 0.9 - 0.8 * v).collect();
    let falling = ordered::sigmoid_ord_inverse(&falling, Direction::Decreasing).expect("decreasing by construction");

    let mut x = vec![0.0; layout.dim()];
    x[layout.predicate_mode()].copy_from_slice(&ordered::ord_inverse(&lambda).expect("increasing by construction"));
    x[layout.quantifier_gate()].copy_from_slice(&falling);
    x[layout.quantifier_success()].copy_from_slice(&falling);
    let kappa = ((c * c) as f64 - 1.0).max(3.0);
    x[layout.predicate_concentration()].fill((kappa - 2.0).ln());
    let jitter = Normal::new(0.0, INIT_JITTER).expect("positive scale");
    x.iter_mut().for_each(|v| *v += jitter.sample(rng));
    x
}

/// Draws from the posterior of the mixture given `data`.
pub fn sample_posterior(data: &ModelData, hyper: &Hyperparams, config: &SamplerConfig) -> Result<PosteriorSamples> {
    if data.n_events() == 0 {
        return Err(Error::InsufficientData("cannot fit without events".into()));
    }
    let target = LogJoint::new(data, hyper)?;
    let chains = run_chains(&target, config, |rng| initial_point(data, hyper, rng))?;
    collect_samples(chains, hyper, config)
}

fn collect_samples(chains: Vec<ChainOutput>, hyper: &Hyperparams, config: &SamplerConfig) -> Result<PosteriorSamples> {
    let mut draws = Vec::with_capacity(config.draws * config.chains);
    let step_sizes = chains.iter().map(|c| c.step_size).collect();
    for (chain, out) in chains.into_iter().enumerate() {
        for (iteration, ((q, st), lp)) in out.draws.iter().zip(&out.stats).zip(&out.log_density).enumerate() {
            draws.push(PosteriorDraw {
                chain,
                iteration,
                accept_stat: st.accept_stat,
                tree_depth: st.tree_depth,
                n_leapfrog: st.n_leapfrog,
                divergent: st.divergent,
                energy: st.energy,
                log_density: *lp,
                theta: model::constrain(q, hyper)?,
            });
        }
    }
    let samples = PosteriorSamples::from_draws(hyper.clone(), config.clone(), draws, step_sizes)?;
    if samples.diagnostics.divergence_rate > DIVERGENCE_WARNING_RATE {
        log::warn!(
            "{} divergent transitions after warmup ({:.1}%)",
            samples.diagnostics.total_divergences,
            100.0 * samples.diagnostics.divergence_rate
        );
    }
    Ok(samples)
}

/// Point estimates of one event's latent intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    /// Posterior mean class, in `[1, C]`.
    pub mean: f64,
    /// Most probable class (1-based; ties go to the lower class).
    pub mode: usize,
    /// Posterior class probabilities averaged over draws.
    pub mass: Vec<f64>,
}

impl IntensityEstimate {
    pub fn from_mass(mass: Vec<f64>) -> Self {
        let mean = mass.iter().enumerate().map(|(c, m)| (c + 1) as f64 * m).sum();
        let mut mode = 0;
        for (c, &m) in mass.iter().enumerate() {
            if m > mass[mode] {
                mode = c;
            }
        }
        Self {
            mean,
            mode: mode + 1,
            mass,
        }
    }
}

/// Draw-averaged class responsibilities of each event over `thetas`.
pub fn average_responsibilities(thetas: &[ParamsConstrained], tuples: &[EventTuple], mask: SiteMask) -> Vec<Vec<f64>> {
    let tables: Vec<ClassTables> = thetas.iter().map(ClassTables::new).collect();
    let classes = tables.first().map_or(0, |t| t.classes());
    tuples
        .par_iter()
        .map(|t| {
            let mut mass = vec![0.0; classes];
            let mut lw = vec![0.0; classes];
            for table in &tables {
                table.log_weights(t, mask, &mut lw);
                let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = lw.iter().map(|v| (v - m).exp()).sum();
                for (acc, v) in mass.iter_mut().zip(&lw) {
                    *acc += (v - m).exp() / s;
                }
            }
            let n = tables.len() as f64;
            mass.iter_mut().for_each(|v| *v /= n);
            mass
        })
        .collect()
}

/// Posterior intensity of each event, averaging responsibilities over draws.
pub fn score_events(samples: &PosteriorSamples, tuples: &[EventTuple], mask: SiteMask) -> Vec<IntensityEstimate> {
    let thetas: Vec<ParamsConstrained> = samples.thetas().cloned().collect();
    score_with_thetas(&thetas, tuples, mask)
}

pub fn score_with_thetas(
    thetas: &[ParamsConstrained],
    tuples: &[EventTuple],
    mask: SiteMask,
) -> Vec<IntensityEstimate> {
    average_responsibilities(thetas, tuples, mask)
        .into_iter()
        .map(IntensityEstimate::from_mass)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorHeader {
    version: u32,
    hyper: Hyperparams,
    config: SamplerConfig,
    step_sizes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Writes a header line followed by one JSON object per draw.
pub fn write_posterior<W: Write>(
    mut out: W,
    samples: &PosteriorSamples,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    let header = PosteriorHeader {
        version: model::PARAMS_VERSION,
        hyper: samples.hyper.clone(),
        config: samples.config.clone(),
        step_sizes: samples.step_sizes.clone(),
        provenance,
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&serde_json::json!({ "header": header }))?
    )?;
    for d in &samples.draws {
        writeln!(out, "{}", serde_json::to_string(d)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_posterior`]; diagnostics are recomputed.
pub fn read_posterior<R: BufRead>(source: R) -> Result<PosteriorSamples> {
    let mut lines = source.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Config("posterior file is empty".into()))??;
    let mut value: serde_json::Value = serde_json::from_str(&first)?;
    let header: PosteriorHeader = serde_json::from_value(
        value
            .get_mut("header")
            .map(serde_json::Value::take)
            .ok_or_else(|| Error::Config("posterior file has no header line".into()))?,
    )?;
    if header.version != model::PARAMS_VERSION {
        return Err(Error::Config(format!(
            "unsupported posterior version {}",
            header.version
        )));
    }
    header.hyper.validate()?;
    let mut draws = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        draws.push(serde_json::from_str::<PosteriorDraw>(&line)?);
    }
    PosteriorSamples::from_draws(header.hyper, header.config, draws, header.step_sizes)
}

/// Reads just the provenance block of a posterior file header, if present.
pub fn read_posterior_provenance<R: BufRead>(source: R) -> Result<Option<serde_json::Value>> {
    let first = source
        .lines()
        .next()
        .ok_or_else(|| Error::Config("posterior file is empty".into()))??;
    let value: serde_json::Value = serde_json::from_str(&first)?;
    Ok(value.get("header").and_then(|h| h.get("provenance")).cloned())
}
