//! The ordinal mixture over event tuples.
//!
//! Each event has a latent class `z ∈ {1..C}`. Given the class, subject and
//! object are Categorical, the predicate is Beta (mode/concentration) and the
//! casualty count is zero-inflated Geometric. Beta modes increase with the
//! class while the Geometric gate and success probabilities decrease, so
//! higher classes mean more conflictual predicates and more casualties.
//!
//! The class is summed out of the likelihood; the sampler works on a flat
//! unconstrained vector (see [`ParamLayout`]).

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::data::{ActorClass, EventTuple, YearMonth, PREDICATE_CEIL, PREDICATE_FLOOR};
use crate::dists::{self, BetaModeConc, ZeroInflGeom};
use crate::error::{ensure_finite, Error, Result};
use crate::ordered::{self, Direction};
use crate::simplex::{self, log_sigmoid};

pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub classes: usize,
    /// Location and scale of the Ordered Normal priors.
    pub mu: f64,
    pub sigma: f64,
    /// Shape and rate of the Gamma prior on `kappa - 2`.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Dirichlet concentration on the class weights.
    pub alpha_z: Vec<f64>,
    pub subject_classes: usize,
    pub object_classes: usize,
}

impl Hyperparams {
    pub fn new(classes: usize) -> Result<Self> {
        let h = Self {
            classes,
            mu: -1.0,
            sigma: 1.0,
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            alpha_z: vec![1.0; classes],
            subject_classes: ActorClass::ALL.len(),
            object_classes: ActorClass::ALL.len(),
        };
        h.validate()?;
        Ok(h)
    }

    /// Same priors with a different class count.
    pub fn with_classes(&self, classes: usize) -> Result<Self> {
        let mut h = self.clone();
        h.classes = classes;
        h.alpha_z = if self.alpha_z.iter().all(|&a| a == self.alpha_z[0]) && !self.alpha_z.is_empty() {
            vec![self.alpha_z[0]; classes]
        } else {
            vec![1.0; classes]
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 1 {
            return fail("class count must be at least 1".into());
        }
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return fail(format!("invalid Ordered Normal prior ({}, {})", self.mu, self.sigma));
        }
        if !(self.gamma_shape > 0.0 && self.gamma_rate > 0.0) {
            return fail("Gamma shape and rate must be positive".into());
        }
        if self.alpha_z.len() != self.classes || self.alpha_z.iter().any(|&a| !(a > 0.0)) {
            return fail("alpha_z needs one positive entry per class".into());
        }
        if self.subject_classes < 2 || self.object_classes < 2 {
            return fail("subject and object need at least two classes".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            classes: self.classes,
            subjects: self.subject_classes,
            objects: self.object_classes,
        }
    }
}

/// Positions of each parameter block inside the unconstrained vector.
///
/// Order: class-weight sticks (C−1), subject rows (C·(S−1)), object rows
/// (C·(O−1)), then C each of pre-ordering mode, log-shifted concentration,
/// pre-ordering gate and pre-ordering success coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub classes: usize,
    pub subjects: usize,
    pub objects: usize,
}

impl ParamLayout {
    pub fn class_weights(&self) -> Range<usize> {
        0..self.classes - 1
    }

    pub fn subject_row(&self, c: usize) -> Range<usize> {
        let start = self.classes - 1 + c * (self.subjects - 1);
        start..start + self.subjects - 1
    }

    pub fn subject_rows(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.classes).map(|c| self.subject_row(c))
    }

    pub fn object_row(&self, c: usize) -> Range<usize> {
        let start = self.classes - 1 + self.classes * (self.subjects - 1) + c * (self.objects - 1);
        start..start + self.objects - 1
    }

    pub fn object_rows(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.classes).map(|c| self.object_row(c))
    }

    fn scalar_block(&self, k: usize) -> Range<usize> {
        let start = self.classes - 1 + self.classes * (self.subjects - 1 + self.objects - 1) + k * self.classes;
        start..start + self.classes
    }

    pub fn predicate_mode(&self) -> Range<usize> {
        self.scalar_block(0)
    }

    pub fn predicate_concentration(&self) -> Range<usize> {
        self.scalar_block(1)
    }

    pub fn quantifier_gate(&self) -> Range<usize> {
        self.scalar_block(2)
    }

    pub fn quantifier_success(&self) -> Range<usize> {
        self.scalar_block(3)
    }

    pub fn dim(&self) -> usize {
        self.quantifier_success().end
    }

    /// Number of scalars in the constrained parameter pack.
    pub fn constrained_len(&self) -> usize {
        self.classes * (1 + self.subjects + self.objects + 4)
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.extend(self.class_weights().map(|i| format!("class_weight_stick[{i}]")));
        for c in 0..self.classes {
            names.extend((0..self.subjects - 1).map(|j| format!("subject_stick[{c},{j}]")));
        }
        for c in 0..self.classes {
            names.extend((0..self.objects - 1).map(|j| format!("object_stick[{c},{j}]")));
        }
        for block in ["mode_raw", "log_concentration_shift", "gate_raw", "success_raw"] {
            names.extend((0..self.classes).map(|c| format!("{block}[{c}]")));
        }
        names
    }
}

/// The constrained parameter pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsConstrained {
    pub class_weights: Vec<f64>,
    pub subject_probs: Vec<Vec<f64>>,
    pub object_probs: Vec<Vec<f64>>,
    /// Beta modes, strictly increasing over classes.
    pub predicate_mode: Vec<f64>,
    /// Beta concentrations, each above 2.
    pub predicate_concentration: Vec<f64>,
    /// Zero-inflation gates, strictly decreasing over classes.
    pub quantifier_gate: Vec<f64>,
    /// Geometric success probabilities, strictly decreasing over classes.
    pub quantifier_success: Vec<f64>,
}

impl ParamsConstrained {
    pub fn classes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn scalar_count(&self) -> usize {
        self.class_weights.len()
            + self.subject_probs.iter().map(Vec::len).sum::<usize>()
            + self.object_probs.iter().map(Vec::len).sum::<usize>()
            + self.predicate_mode.len()
            + self.predicate_concentration.len()
            + self.quantifier_gate.len()
            + self.quantifier_success.len()
    }

    pub fn beta(&self, c: usize) -> Result<BetaModeConc> {
        BetaModeConc::new(self.predicate_mode[c], self.predicate_concentration[c])
    }

    pub fn zig(&self, c: usize) -> Result<ZeroInflGeom> {
        ZeroInflGeom::new(self.quantifier_gate[c], self.quantifier_success[c])
    }

    /// Checks simplex, ordering and range constraints.
    pub fn check_invariants(&self) -> Result<()> {
        let c = self.classes();
        if c == 0 {
            return Err(Error::Domain("parameter pack has no classes".into()));
        }
        let sized = [
            self.subject_probs.len(),
            self.object_probs.len(),
            self.predicate_mode.len(),
            self.predicate_concentration.len(),
            self.quantifier_gate.len(),
            self.quantifier_success.len(),
        ];
        if sized.iter().any(|&n| n != c) {
            return Err(Error::Domain("parameter blocks disagree on the class count".into()));
        }
        dists::check_simplex(&self.class_weights)?;
        for row in self.subject_probs.iter().chain(&self.object_probs) {
            dists::check_simplex(row)?;
        }
        let unit = |v: &[f64], what: &str| -> Result<()> {
            match v.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
                Some(i) => Err(Error::Domain(format!("{what}[{i}] outside (0, 1)"))),
                None => Ok(()),
            }
        };
        unit(&self.predicate_mode, "predicate_mode")?;
        unit(&self.quantifier_gate, "quantifier_gate")?;
        unit(&self.quantifier_success, "quantifier_success")?;
        check_unit_order(&self.predicate_mode, Direction::Increasing)?;
        check_unit_order(&self.quantifier_gate, Direction::Decreasing)?;
        check_unit_order(&self.quantifier_success, Direction::Decreasing)?;
        if let Some(i) = self
            .predicate_concentration
            .iter()
            .position(|&k| !(k > 2.0) || !k.is_finite())
        {
            return Err(Error::Domain(format!("predicate_concentration[{i}] must exceed 2")));
        }
        Ok(())
    }

    /// All scalars in a fixed order matching [`ParamsConstrained::scalar_names`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.scalar_count());
        v.extend(&self.class_weights);
        self.subject_probs.iter().for_each(|r| v.extend(r));
        self.object_probs.iter().for_each(|r| v.extend(r));
        v.extend(&self.predicate_mode);
        v.extend(&self.predicate_concentration);
        v.extend(&self.quantifier_gate);
        v.extend(&self.quantifier_success);
        v
    }

    pub fn scalar_names(&self) -> Vec<String> {
        let c = self.classes();
        let mut names: Vec<String> = (0..c).map(|k| format!("class_weight[{}]", k + 1)).collect();
        for (label, rows) in [
            ("subject_prob", &self.subject_probs),
            ("object_prob", &self.object_probs),
        ] {
            for (k, row) in rows.iter().enumerate() {
                names.extend(
                    row.iter()
                        .enumerate()
                        .map(|(j, _)| format!("{label}[{},{}]", k + 1, j + 1)),
                );
            }
        }
        for label in [
            "predicate_mode",
            "predicate_concentration",
            "quantifier_gate",
            "quantifier_success",
        ] {
            names.extend((0..c).map(|k| format!("{label}[{}]", k + 1)));
        }
        names
    }

    /// Whether the ordering constraints hold (modes up, gates and successes down).
    pub fn is_ordered(&self) -> bool {
        check_unit_order(&self.predicate_mode, Direction::Increasing).is_ok()
            && check_unit_order(&self.quantifier_gate, Direction::Decreasing).is_ok()
            && check_unit_order(&self.quantifier_success, Direction::Decreasing).is_ok()
    }
}

/// Versioned on-disk form of a parameter pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPack {
    pub version: u32,
    pub hyper: Hyperparams,
    pub params: ParamsConstrained,
}

impl ParamPack {
    pub fn new(hyper: Hyperparams, params: ParamsConstrained) -> Self {
        Self {
            version: PARAMS_VERSION,
            hyper,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let pack: ParamPack = serde_json::from_str(s)?;
        if pack.version != PARAMS_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter pack version {}",
                pack.version
            )));
        }
        pack.hyper.validate()?;
        pack.params.check_invariants()?;
        Ok(pack)
    }
}

fn check_dim(x: &[f64], layout: &ParamLayout) -> Result<()> {
    if x.len() != layout.dim() {
        return Err(Error::Domain(format!(
            "expected {} unconstrained coordinates, got {}",
            layout.dim(),
            x.len()
        )));
    }
    ensure_finite(x)
}

/// Closest doubles to 0 and 1 that a sigmoid output is stored as. Beyond
/// about |x| = 37 the sigmoid rounds to the boundary itself.
pub const UNIT_FLOOR: f64 = f64::MIN_POSITIVE;
pub const UNIT_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

fn clamp_unit(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.clamp(UNIT_FLOOR, UNIT_CEIL));
    v
}

/// Strict ordering, except that values clamped to the same boundary tie.
fn check_unit_order(v: &[f64], direction: Direction) -> Result<()> {
    ensure_finite(v)?;
    for (i, w) in v.windows(2).enumerate() {
        let strict = match direction {
            Direction::Increasing => w[1] > w[0],
            Direction::Decreasing => w[1] < w[0],
        };
        let pinned = w[0] == w[1] && (w[0] == UNIT_FLOOR || w[0] == UNIT_CEIL);
        if !(strict || pinned) {
            return Err(Error::NotOrdered(i + 1));
        }
    }
    Ok(())
}

/// Maps an unconstrained vector onto the constrained parameter pack.
pub fn constrain(x: &[f64], hyper: &Hyperparams) -> Result<ParamsConstrained> {
    let layout = hyper.layout();
    check_dim(x, &layout)?;
    let kappa = x[layout.predicate_concentration()]
        .iter()
        .map(|u| 2.0 + u.exp())
        .collect();
    Ok(ParamsConstrained {
        class_weights: simplex::stick_breaking(&x[layout.class_weights()]),
        subject_probs: layout.subject_rows().map(|r| simplex::stick_breaking(&x[r])).collect(),
        object_probs: layout.object_rows().map(|r| simplex::stick_breaking(&x[r])).collect(),
        predicate_mode: clamp_unit(ordered::sigmoid_ord(
            &x[layout.predicate_mode()],
            Direction::Increasing,
        )?),
        predicate_concentration: kappa,
        quantifier_gate: clamp_unit(ordered::sigmoid_ord(
            &x[layout.quantifier_gate()],
            Direction::Decreasing,
        )?),
        quantifier_success: clamp_unit(ordered::sigmoid_ord(
            &x[layout.quantifier_success()],
            Direction::Decreasing,
        )?),
    })
}

/// Inverse of [`constrain`].
pub fn unconstrain(theta: &ParamsConstrained, hyper: &Hyperparams) -> Result<Vec<f64>> {
    theta.check_invariants()?;
    let layout = hyper.layout();
    if theta.classes() != layout.classes
        || theta.subject_probs.iter().any(|r| r.len() != layout.subjects)
        || theta.object_probs.iter().any(|r| r.len() != layout.objects)
    {
        return Err(Error::Domain(
            "parameter pack does not match the hyperparameters".into(),
        ));
    }
    let mut x = Vec::with_capacity(layout.dim());
    x.extend(simplex::stick_breaking_inverse(&theta.class_weights)?);
    for row in theta.subject_probs.iter().chain(&theta.object_probs) {
        x.extend(simplex::stick_breaking_inverse(row)?);
    }
    x.extend(ordered::sigmoid_ord_inverse(
        &theta.predicate_mode,
        Direction::Increasing,
    )?);
    x.extend(theta.predicate_concentration.iter().map(|k| (k - 2.0).ln()));
    x.extend(ordered::sigmoid_ord_inverse(
        &theta.quantifier_gate,
        Direction::Decreasing,
    )?);
    x.extend(ordered::sigmoid_ord_inverse(
        &theta.quantifier_success,
        Direction::Decreasing,
    )?);
    Ok(x)
}

/// One of the four observed positions of an event tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Subject,
    Predicate,
    Quantifier,
    Object,
}

impl Site {
    pub const ALL: [Site; 4] = [Site::Subject, Site::Predicate, Site::Quantifier, Site::Object];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Subject => "subject",
            Site::Predicate => "predicate",
            Site::Quantifier => "quantifier",
            Site::Object => "object",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, Site::Subject | Site::Object)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| site.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown site {s:?}")))
    }
}

/// The set of sites that are treated as observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteMask(u8);

impl SiteMask {
    pub const ALL: SiteMask = SiteMask(0b1111);
    pub const NONE: SiteMask = SiteMask(0);

    pub fn only(site: Site) -> Self {
        SiteMask(site.bit())
    }

    pub fn without(self, site: Site) -> Self {
        SiteMask(self.0 & !site.bit())
    }

    pub fn with(self, site: Site) -> Self {
        SiteMask(self.0 | site.bit())
    }

    pub fn contains(self, site: Site) -> bool {
        self.0 & site.bit() != 0
    }

    pub fn sites(self) -> impl Iterator<Item = Site> {
        Site::ALL.into_iter().filter(move |&s| self.contains(s))
    }
}

impl Default for SiteMask {
    fn default() -> Self {
        SiteMask::ALL
    }
}

#[derive(Debug, Clone, Copy)]
struct Row {
    pattern: usize,
    log_p: f64,
    log_1mp: f64,
    weight: f64,
}

/// A distinct combination of the discrete sites (masked-out sites are zeroed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Pattern {
    subject: usize,
    object: usize,
    quantifier: u64,
}

/// Event tuples prepared for likelihood evaluation: validated, with
/// duplicates collapsed into weighted rows.
#[derive(Debug, Clone)]
pub struct ModelData {
    rows: Vec<Row>,
    patterns: Vec<Pattern>,
    n_events: usize,
    mask: SiteMask,
}

fn validate_tuple(i: usize, t: &EventTuple) -> Result<()> {
    if !(t.predicate > 0.0 && t.predicate < 1.0) {
        return Err(Error::InvalidTuple {
            index: i,
            reason: format!("predicate {} outside (0, 1)", t.predicate),
        });
    }
    Ok(())
}

impl ModelData {
    pub fn new(tuples: &[EventTuple]) -> Result<Self> {
        Self::with_mask(tuples, SiteMask::ALL)
    }

    /// Only the sites in `mask` enter the likelihood.
    pub fn with_mask(tuples: &[EventTuple], mask: SiteMask) -> Result<Self> {
        let mut pattern_index: HashMap<Pattern, usize> = HashMap::new();
        let mut patterns: Vec<Pattern> = Vec::new();
        let mut index: HashMap<(usize, u64), usize> = HashMap::new();
        let mut rows: Vec<Row> = Vec::new();
        let use_p = mask.contains(Site::Predicate);
        for (i, t) in tuples.iter().enumerate() {
            validate_tuple(i, t)?;
            let pat = Pattern {
                subject: if mask.contains(Site::Subject) {
                    t.subject.index()
                } else {
                    0
                },
                object: if mask.contains(Site::Object) {
                    t.object.index()
                } else {
                    0
                },
                quantifier: if mask.contains(Site::Quantifier) {
                    t.quantifier
                } else {
                    0
                },
            };
            let pid = *pattern_index.entry(pat).or_insert_with(|| {
                patterns.push(pat);
                patterns.len() - 1
            });
            let key = (pid, if use_p { t.predicate.to_bits() } else { 0 });
            match index.get(&key) {
                Some(&r) => rows[r].weight += 1.0,
                None => {
                    index.insert(key, rows.len());
                    rows.push(Row {
                        pattern: pid,
                        log_p: if use_p { t.predicate.ln() } else { 0.0 },
                        log_1mp: if use_p { (-t.predicate).ln_1p() } else { 0.0 },
                        weight: 1.0,
                    });
                }
            }
        }
        Ok(Self {
            rows,
            patterns,
            n_events: tuples.len(),
            mask,
        })
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Number of distinct rows after collapsing duplicates.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn mask(&self) -> SiteMask {
        self.mask
    }

    /// Quantiles of the observed predicates at each of `probs`; `None` when
    /// the predicate site is masked out or there are no events.
    pub fn predicate_quantiles(&self, probs: &[f64]) -> Option<Vec<f64>> {
        if !self.mask.contains(Site::Predicate) || self.rows.is_empty() {
            return None;
        }
        let mut v: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.log_p.exp(), r.weight)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = v.iter().map(|r| r.1).sum();
        Some(
            probs
                .iter()
                .map(|&u| {
                    let mut acc = 0.0;
                    for &(p, w) in &v {
                        acc += w;
                        if acc >= u * total {
                            return p;
                        }
                    }
                    v[v.len() - 1].0
                })
                .collect(),
        )
    }
}

/// Per-class quantities derived from an unconstrained vector, in log space.
struct Unpacked {
    log_pi: Vec<f64>,
    log_subject: Vec<f64>,
    log_object: Vec<f64>,
    mode: Vec<f64>,
    kappa: Vec<f64>,
    // Beta shapes minus one and log normalizer.
    a1: Vec<f64>,
    b1: Vec<f64>,
    log_beta_fn: Vec<f64>,
    gate: Vec<f64>,
    success: Vec<f64>,
    log_zero: Vec<f64>,
    log_pos: Vec<f64>,
    log_fail: Vec<f64>,
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn unpack(x: &[f64], l: &ParamLayout) -> Unpacked {
    let c = l.classes;
    let mut log_pi = vec![0.0; c];
    simplex::log_stick_breaking(&x[l.class_weights()], &mut log_pi);
    let mut log_subject = vec![0.0; c * l.subjects];
    for (k, r) in l.subject_rows().enumerate() {
        simplex::log_stick_breaking(&x[r], &mut log_subject[k * l.subjects..(k + 1) * l.subjects]);
    }
    let mut log_object = vec![0.0; c * l.objects];
    for (k, r) in l.object_rows().enumerate() {
        simplex::log_stick_breaking(&x[r], &mut log_object[k * l.objects..(k + 1) * l.objects]);
    }

    let mut lam = vec![0.0; c];
    ordered::ord_into(&x[l.predicate_mode()], &mut lam);
    let mode: Vec<f64> = lam.iter().map(|&t| ordered::sigmoid(t)).collect();
    let kappa: Vec<f64> = x[l.predicate_concentration()].iter().map(|u| 2.0 + u.exp()).collect();
    let a1: Vec<f64> = (0..c).map(|k| mode[k] * (kappa[k] - 2.0)).collect();
    let b1: Vec<f64> = (0..c).map(|k| (1.0 - mode[k]) * (kappa[k] - 2.0)).collect();
    let log_beta_fn = (0..c).map(|k| ln_beta(a1[k] + 1.0, b1[k] + 1.0)).collect();

    // Decreasing blocks: class k uses the (C-1-k)-th increasing logit.
    let mut lam_gate = vec![0.0; c];
    ordered::ord_into(&x[l.quantifier_gate()], &mut lam_gate);
    let mut lam_succ = vec![0.0; c];
    ordered::ord_into(&x[l.quantifier_success()], &mut lam_succ);
    let mut gate = vec![0.0; c];
    let mut success = vec![0.0; c];
    let mut log_zero = vec![0.0; c];
    let mut log_pos = vec![0.0; c];
    let mut log_fail = vec![0.0; c];
    for k in 0..c {
        let (tg, ts) = (lam_gate[c - 1 - k], lam_succ[c - 1 - k]);
        gate[k] = ordered::sigmoid(tg);
        success[k] = ordered::sigmoid(ts);
        let (ld, l1md) = (log_sigmoid(tg), log_sigmoid(-tg));
        let (lb, l1mb) = (log_sigmoid(ts), log_sigmoid(-ts));
        log_zero[k] = logsumexp2(ld, l1md + lb);
        log_pos[k] = l1md + lb;
        log_fail[k] = l1mb;
    }
    Unpacked {
        log_pi,
        log_subject,
        log_object,
        mode,
        kappa,
        a1,
        b1,
        log_beta_fn,
        gate,
        success,
        log_zero,
        log_pos,
        log_fail,
    }
}

/// Responsibility-weighted sufficient statistics gathered during the data pass.
struct Accum {
    total: Vec<f64>,
    subject: Vec<f64>,
    object: Vec<f64>,
    sum_log_p: Vec<f64>,
    sum_log_1mp: Vec<f64>,
    zero: Vec<f64>,
    pos: Vec<f64>,
    pos_count: Vec<f64>,
}

impl Accum {
    fn new(l: &ParamLayout) -> Self {
        let c = l.classes;
        Self {
            total: vec![0.0; c],
            subject: vec![0.0; c * l.subjects],
            object: vec![0.0; c * l.objects],
            sum_log_p: vec![0.0; c],
            sum_log_1mp: vec![0.0; c],
            zero: vec![0.0; c],
            pos: vec![0.0; c],
            pos_count: vec![0.0; c],
        }
    }
}

fn log_likelihood_pass(u: &Unpacked, data: &ModelData, l: &ParamLayout, acc: &mut Accum) -> f64 {
    let c = l.classes;
    let mask = data.mask;
    let (use_s, use_o) = (mask.contains(Site::Subject), mask.contains(Site::Object));
    let (use_p, use_q) = (mask.contains(Site::Predicate), mask.contains(Site::Quantifier));

    // Everything but the predicate's data-dependent part, per pattern and class.
    let mut base = vec![0.0; data.patterns.len() * c];
    for (pid, pat) in data.patterns.iter().enumerate() {
        for k in 0..c {
            let mut v = u.log_pi[k];
            if use_s {
                v += u.log_subject[k * l.subjects + pat.subject];
            }
            if use_o {
                v += u.log_object[k * l.objects + pat.object];
            }
            if use_p {
                v -= u.log_beta_fn[k];
            }
            if use_q {
                v += if pat.quantifier == 0 {
                    u.log_zero[k]
                } else {
                    u.log_pos[k] + pat.quantifier as f64 * u.log_fail[k]
                };
            }
            base[pid * c + k] = v;
        }
    }

    let mut pattern_acc = vec![0.0; data.patterns.len() * c];
    let mut lw = vec![0.0; c];
    let mut total = 0.0;
    for row in &data.rows {
        let b = &base[row.pattern * c..(row.pattern + 1) * c];
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            let v = b[k] + u.a1[k] * row.log_p + u.b1[k] * row.log_1mp;
            lw[k] = v;
            m = m.max(v);
        }
        let mut s = 0.0;
        for v in lw.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        total += row.weight * (m + s.ln());
        let scale = row.weight / s;
        let pa = &mut pattern_acc[row.pattern * c..(row.pattern + 1) * c];
        for k in 0..c {
            let wr = lw[k] * scale;
            pa[k] += wr;
            acc.sum_log_p[k] += wr * row.log_p;
            acc.sum_log_1mp[k] += wr * row.log_1mp;
        }
    }

    for (pid, pat) in data.patterns.iter().enumerate() {
        for k in 0..c {
            let wr = pattern_acc[pid * c + k];
            acc.total[k] += wr;
            acc.subject[k * l.subjects + pat.subject] += wr;
            acc.object[k * l.objects + pat.object] += wr;
            if pat.quantifier == 0 {
                acc.zero[k] += wr;
            } else {
                acc.pos[k] += wr;
                acc.pos_count[k] += wr * pat.quantifier as f64;
            }
        }
    }
    total
}

fn likelihood_backprop(x: &[f64], u: &Unpacked, acc: &Accum, mask: SiteMask, l: &ParamLayout, grad: &mut [f64]) {
    let c = l.classes;
    simplex::log_stick_breaking_backprop(&x[l.class_weights()], &acc.total, false, &mut grad[l.class_weights()]);
    if mask.contains(Site::Subject) {
        for (k, r) in l.subject_rows().enumerate() {
            let adj = &acc.subject[k * l.subjects..(k + 1) * l.subjects];
            simplex::log_stick_breaking_backprop(&x[r.clone()], adj, false, &mut grad[r]);
        }
    }
    if mask.contains(Site::Object) {
        for (k, r) in l.object_rows().enumerate() {
            let adj = &acc.object[k * l.objects..(k + 1) * l.objects];
            simplex::log_stick_breaking_backprop(&x[r.clone()], adj, false, &mut grad[r]);
        }
    }
    if mask.contains(Site::Predicate) {
        let mut adj_lambda = vec![0.0; c];
        for k in 0..c {
            let (a, b) = (u.a1[k] + 1.0, u.b1[k] + 1.0);
            let dab = digamma(a + b);
            let ga = acc.sum_log_p[k] - acc.total[k] * (digamma(a) - dab);
            let gb = acc.sum_log_1mp[k] - acc.total[k] * (digamma(b) - dab);
            let w = u.mode[k];
            adj_lambda[k] = (u.kappa[k] - 2.0) * w * (1.0 - w) * (ga - gb);
            let g_kappa = w * ga + (1.0 - w) * gb;
            let i = l.predicate_concentration().start + k;
            grad[i] += g_kappa * (u.kappa[k] - 2.0);
        }
        ordered::ord_backprop(&x[l.predicate_mode()], &adj_lambda, &mut grad[l.predicate_mode()]);
    }
    if mask.contains(Site::Quantifier) {
        let mut adj_gate = vec![0.0; c];
        let mut adj_succ = vec![0.0; c];
        for k in 0..c {
            let (d, b) = (u.gate[k], u.success[k]);
            let m = u.log_zero[k].exp();
            // d ln m0 / d logit(d) = (1-b)(1-d) d/m0, d ln m0 / d logit(b) = (1-b) (1-d) b/m0.
            let zero_d = (1.0 - b) * (1.0 - d) * (d / m);
            let zero_b = (1.0 - b) * ((1.0 - d) * b / m);
            let idx = c - 1 - k;
            adj_gate[idx] = acc.zero[k] * zero_d - acc.pos[k] * d;
            adj_succ[idx] = acc.zero[k] * zero_b + acc.pos[k] * (1.0 - b) - acc.pos_count[k] * b;
        }
        ordered::ord_backprop(&x[l.quantifier_gate()], &adj_gate, &mut grad[l.quantifier_gate()]);
        ordered::ord_backprop(&x[l.quantifier_success()], &adj_succ, &mut grad[l.quantifier_success()]);
    }
}

/// A log density with gradient over a flat real vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `x` and overwrites `grad` with its gradient.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Unnormalized log posterior of the unconstrained parameters.
#[derive(Debug, Clone)]
pub struct LogJoint<'a> {
    data: &'a ModelData,
    hyper: &'a Hyperparams,
    layout: ParamLayout,
}

impl<'a> LogJoint<'a> {
    pub fn new(data: &'a ModelData, hyper: &'a Hyperparams) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            data,
            hyper,
            layout: hyper.layout(),
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        self.hyper
    }
}

impl LogDensity for LogJoint<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(x, &self.layout)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let prior = dists::prior_logdensity_grad(x, self.hyper, grad)?;
        let u = unpack(x, &self.layout);
        let mut acc = Accum::new(&self.layout);
        let ll = log_likelihood_pass(&u, self.data, &self.layout, &mut acc);
        likelihood_backprop(x, &u, &acc, self.data.mask, &self.layout, grad);
        Ok(prior + ll)
    }
}

/// Log posterior (up to the evidence) and its gradient at `x`.
pub fn log_joint(x: &[f64], data: &ModelData, hyper: &Hyperparams) -> Result<(f64, Vec<f64>)> {
    if data.n_events() == 0 {
        return Err(Error::InsufficientData("no events to condition on".into()));
    }
    let target = LogJoint::new(data, hyper)?;
    let mut grad = vec![0.0; target.dim()];
    let v = target.log_density_grad(x, &mut grad)?;
    Ok((v, grad))
}

/// Per-class log-probability tables for one parameter pack, for fast
/// repeated evaluation over many events.
#[derive(Debug, Clone)]
pub struct ClassTables {
    classes: usize,
    subjects: usize,
    objects: usize,
    log_pi: Vec<f64>,
    log_subject: Vec<f64>,
    log_object: Vec<f64>,
    a1: Vec<f64>,
    b1: Vec<f64>,
    log_beta_fn: Vec<f64>,
    log_zero: Vec<f64>,
    log_pos: Vec<f64>,
    log_fail: Vec<f64>,
}

impl ClassTables {
    pub fn new(theta: &ParamsConstrained) -> Self {
        let c = theta.classes();
        let flat_ln = |rows: &[Vec<f64>]| rows.iter().flatten().map(|p| p.ln()).collect::<Vec<_>>();
        let mut t = Self {
            classes: c,
            subjects: theta.subject_probs.first().map_or(0, Vec::len),
            objects: theta.object_probs.first().map_or(0, Vec::len),
            log_pi: theta.class_weights.iter().map(|p| p.ln()).collect(),
            log_subject: flat_ln(&theta.subject_probs),
            log_object: flat_ln(&theta.object_probs),
            a1: vec![0.0; c],
            b1: vec![0.0; c],
            log_beta_fn: vec![0.0; c],
            log_zero: vec![0.0; c],
            log_pos: vec![0.0; c],
            log_fail: vec![0.0; c],
        };
        for k in 0..c {
            let w = theta.predicate_mode[k];
            let kk = theta.predicate_concentration[k] - 2.0;
            t.a1[k] = w * kk;
            t.b1[k] = (1.0 - w) * kk;
            t.log_beta_fn[k] = ln_beta(t.a1[k] + 1.0, t.b1[k] + 1.0);
            let (d, b) = (theta.quantifier_gate[k], theta.quantifier_success[k]);
            t.log_zero[k] = (d + (1.0 - d) * b).ln();
            t.log_pos[k] = (-d).ln_1p() + b.ln();
            t.log_fail[k] = (-b).ln_1p();
        }
        t
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn log_class_weight(&self, c: usize) -> f64 {
        self.log_pi[c]
    }

    pub fn site(&self, tuple: &EventTuple, site: Site, c: usize) -> f64 {
        match site {
            Site::Subject => self.log_subject[c * self.subjects + tuple.subject.index()],
            Site::Object => self.log_object[c * self.objects + tuple.object.index()],
            Site::Predicate => {
                let p = tuple.predicate;
                self.a1[c] * p.ln() + self.b1[c] * (-p).ln_1p() - self.log_beta_fn[c]
            }
            Site::Quantifier => self.quantifier(tuple.quantifier, c),
        }
    }

    pub fn quantifier(&self, q: u64, c: usize) -> f64 {
        if q == 0 {
            self.log_zero[c]
        } else {
            self.log_pos[c] + q as f64 * self.log_fail[c]
        }
    }

    pub fn subject(&self, k: usize, c: usize) -> f64 {
        self.log_subject[c * self.subjects + k]
    }

    pub fn object(&self, k: usize, c: usize) -> f64 {
        self.log_object[c * self.objects + k]
    }

    /// Writes `ln π_c + Σ_{masked-in sites} ln p(site | c)` into `out`.
    pub fn log_weights(&self, tuple: &EventTuple, mask: SiteMask, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.classes) {
            *o = self.log_pi[c] + mask.sites().map(|s| self.site(tuple, s, c)).sum::<f64>();
        }
    }
}

/// Log-likelihood of one site of `tuple` under class `c`.
pub fn site_log_likelihood(theta: &ParamsConstrained, tuple: &EventTuple, site: Site, c: usize) -> f64 {
    match site {
        Site::Subject => theta.subject_probs[c][tuple.subject.index()].ln(),
        Site::Object => theta.object_probs[c][tuple.object.index()].ln(),
        Site::Predicate => {
            let k = theta.predicate_concentration[c] - 2.0;
            let w = theta.predicate_mode[c];
            let (a, b) = (w * k + 1.0, (1.0 - w) * k + 1.0);
            (a - 1.0) * tuple.predicate.ln() + (b - 1.0) * (-tuple.predicate).ln_1p() - ln_beta(a, b)
        }
        Site::Quantifier => {
            let (d, b) = (theta.quantifier_gate[c], theta.quantifier_success[c]);
            if tuple.quantifier == 0 {
                (d + (1.0 - d) * b).ln()
            } else {
                (-d).ln_1p() + tuple.quantifier as f64 * (-b).ln_1p() + b.ln()
            }
        }
    }
}

/// `ln π_c + Σ_{observed sites} ln p(site | c)` for each class.
pub fn class_log_weights(theta: &ParamsConstrained, tuple: &EventTuple, mask: SiteMask) -> Vec<f64> {
    (0..theta.classes())
        .map(|c| {
            theta.class_weights[c].ln()
                + mask
                    .sites()
                    .map(|s| site_log_likelihood(theta, tuple, s, c))
                    .sum::<f64>()
        })
        .collect()
}

pub(crate) fn normalize_log_weights(mut lw: Vec<f64>) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in lw.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    lw.iter_mut().for_each(|v| *v /= s);
    lw
}

/// Posterior class probabilities of one event given the masked-in sites.
pub fn responsibilities(theta: &ParamsConstrained, tuple: &EventTuple, mask: SiteMask) -> Result<Vec<f64>> {
    validate_tuple(0, tuple)?;
    Ok(normalize_log_weights(class_log_weights(theta, tuple, mask)))
}

/// Draws `n` events from the generative model. Returns the tuples and their
/// 1-based latent classes.
///
/// Events are tagged with location `"synthetic"` and months cycling through
/// 2000-01..2009-12; predicates are clamped to the same range ingestion uses.
pub fn generate<R: Rng + ?Sized>(
    theta: &ParamsConstrained,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<EventTuple>, Vec<usize>)> {
    theta.check_invariants()?;
    let classes = theta.classes();
    let betas = (0..classes)
        .map(|c| {
            let (a, b) = theta.beta(c)?.shapes();
            rand_distr::Beta::new(a, b).map_err(|e| Error::Domain(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let zigs = (0..classes).map(|c| theta.zig(c)).collect::<Result<Vec<_>>>()?;
    let start = YearMonth::new(2000, 1)?.ordinal();
    let mut tuples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z = dists::sample_categorical(&theta.class_weights, rng);
        let s = dists::sample_categorical(&theta.subject_probs[z], rng);
        let p: f64 = betas[z].sample(rng);
        let q = dists::sample_zig(&zigs[z], rng)?;
        let o = dists::sample_categorical(&theta.object_probs[z], rng);
        tuples.push(EventTuple {
            subject: ActorClass::from_index(s).ok_or_else(|| Error::Domain("subject class out of range".into()))?,
            predicate: p.clamp(PREDICATE_FLOOR, PREDICATE_CEIL),
            quantifier: q,
            object: ActorClass::from_index(o).ok_or_else(|| Error::Domain("object class out of range".into()))?,
            location: "synthetic".into(),
            month: YearMonth::from_ordinal(start + (i % 120) as i64),
        });
        labels.push(z + 1);
    }
    Ok((tuples, labels))
}

/// Evenly spread, well-separated parameters: modes rise from 0.1 to 0.9,
/// gates and success probabilities fall from 0.9 to 0.1, and each class
/// favours a different actor category.
pub fn separated_truth(classes: usize) -> ParamsConstrained {
    let frac = |k: usize| {
        if classes == 1 {
            0.5
        } else {
            k as f64 / (classes - 1) as f64
        }
    };
    let row = |hot: usize| -> Vec<f64> { (0..4).map(|j| if j == hot { 0.55 } else { 0.15 }).collect() };
    ParamsConstrained {
        class_weights: vec![1.0 / classes as f64; classes],
        subject_probs: (0..classes).map(|k| row(k % 4)).collect(),
        object_probs: (0..classes).map(|k| row(3 - k % 4)).collect(),
        predicate_mode: (0..classes).map(|k| 0.1 + 0.8 * frac(k)).collect(),
        predicate_concentration: vec![30.0; classes],
        quantifier_gate: (0..classes).map(|k| 0.9 - 0.8 * frac(k)).collect(),
        quantifier_success: (0..classes).map(|k| 0.9 - 0.8 * frac(k)).collect(),
    }
}

/// Draws a parameter pack from the prior.
pub fn sample_prior<R: Rng + ?Sized>(hyper: &Hyperparams, rng: &mut R) -> Result<ParamsConstrained> {
    hyper.validate()?;
    let c = hyper.classes;
    let normal = rand_distr::Normal::new(hyper.mu, hyper.sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let gamma =
        rand_distr::Gamma::new(hyper.gamma_shape, 1.0 / hyper.gamma_rate).map_err(|e| Error::Domain(e.to_string()))?;
    let class_weights = dists::sample_dirichlet(&hyper.alpha_z, rng)?;
    let subject_probs = (0..c)
        .map(|_| dists::sample_dirichlet(&vec![1.0; hyper.subject_classes], rng))
        .collect::<Result<Vec<_>>>()?;
    let object_probs = (0..c)
        .map(|_| dists::sample_dirichlet(&vec![1.0; hyper.object_classes], rng))
        .collect::<Result<Vec<_>>>()?;
    let raw = |rng: &mut R| -> Vec<f64> { (0..c).map(|_| normal.sample(rng)).collect() };
    let mode_raw = raw(rng);
    let kappa = (0..c).map(|_| 2.0 + gamma.sample(rng)).collect();
    let gate_raw = raw(rng);
    let succ_raw = raw(rng);
    Ok(ParamsConstrained {
        class_weights,
        subject_probs,
        object_probs,
        predicate_mode: ordered::sigmoid_ord(&mode_raw, Direction::Increasing)?,
        predicate_concentration: kappa,
        quantifier_gate: ordered::sigmoid_ord(&gate_raw, Direction::Decreasing)?,
        quantifier_success: ordered::sigmoid_ord(&succ_raw, Direction::Decreasing)?,
    })
}
