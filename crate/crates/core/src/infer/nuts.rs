//! Multinomial No-U-Turn sampler with a diagonal metric.
//!
//! Trajectories double in a random direction until the generalized U-turn
//! criterion fails on the whole tree or on either of the two subtrees
//! extended by one state across their junction. States are drawn from each
//! new subtree in proportion to `exp(-H)`, with a biased progressive step at
//! the top level.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::LogDensity;

/// Energy error above which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl Point {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let n = q.len();
        let mut z = Self {
            q,
            p: vec![0.0; n],
            grad: vec![0.0; n],
            log_density: 0.0,
        };
        z.evaluate(target);
        z
    }

    fn evaluate<T: LogDensity + ?Sized>(&mut self, target: &T) {
        self.log_density = match target.log_density_grad(&self.q, &mut self.grad) {
            Ok(v) if v.is_finite() && self.grad.iter().all(|g| g.is_finite()) => v,
            _ => f64::NAN,
        };
    }

    /// First non-finite gradient coordinate, if any.
    pub fn bad_coordinate(&self) -> Option<usize> {
        self.grad.iter().position(|g| !g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

struct TreeState {
    divergent: bool,
    n_leapfrog: usize,
    sum_metro_prob: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

pub(crate) struct Nuts<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    pub fn new(target: &'a T, max_depth: usize) -> Self {
        Self {
            target,
            inv_metric: vec![1.0; target.dim()],
            step_size: 1.0,
            max_depth,
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let kinetic: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>() * 0.5;
        let h = kinetic - z.log_density;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let e: f64 = StandardNormal.sample(rng);
            *p = e / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.evaluate(self.target);
        if z.log_density.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    pub fn init_step_size<R: Rng + ?Sized>(&mut self, z: &mut Point, rng: &mut R) -> Result<()> {
        let init = z.clone();
        let threshold = 0.8f64.ln();
        let first = self.trial_step(&init, z, rng);
        let direction = if first > threshold { 1 } else { -1 };
        loop {
            let delta = self.trial_step(&init, z, rng);
            if (direction == 1 && !(delta > threshold)) || (direction == -1 && !(delta < threshold)) {
                break;
            }
            self.step_size *= if direction == 1 { 2.0 } else { 0.5 };
            if self.step_size > 1e7 {
                return Err(Error::Sampler("posterior is improper: step size diverged".into()));
            }
            if self.step_size == 0.0 {
                return Err(Error::Sampler("no acceptably small step size".into()));
            }
        }
        *z = init;
        Ok(())
    }

    fn trial_step<R: Rng + ?Sized>(&self, init: &Point, z: &mut Point, rng: &mut R) -> f64 {
        z.clone_from(init);
        self.sample_momentum(z, rng);
        let h0 = self.hamiltonian(z);
        self.leapfrog(z, self.step_size);
        h0 - self.hamiltonian(z)
    }

    pub fn transition<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) -> TransitionStats {
        self.sample_momentum(z, rng);
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p0 = z.p.clone();
        let s0 = self.velocity(&z.p);
        let (mut p_fwd_fwd, mut p_sharp_fwd_fwd) = (p0.clone(), s0.clone());
        let (mut p_fwd_bck, mut p_sharp_fwd_bck) = (p0.clone(), s0.clone());
        let (mut p_bck_fwd, mut p_sharp_bck_fwd) = (p0.clone(), s0.clone());
        let (mut p_bck_bck, mut p_sharp_bck_bck) = (p0.clone(), s0);
        let mut rho = p0;

        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(z);
        let mut st = TreeState {
            divergent: false,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
        };
        let dim = z.q.len();
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                    &mut st,
                    rng,
                )
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                    &mut st,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = sum(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &sum(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &sum(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }

        *z = z_sample;
        TransitionStats {
            accept_stat: if st.n_leapfrog > 0 {
                st.sum_metro_prob / st.n_leapfrog as f64
            } else {
                0.0
            },
            tree_depth: depth,
            n_leapfrog: st.n_leapfrog,
            divergent: st.divergent,
            energy: self.hamiltonian(z),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        st: &mut TreeState,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            st.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                st.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            st.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.velocity(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            add_into(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !st.divergent;
        }

        let dim = z.q.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut lsw_init,
            st,
            rng,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut lsw_final,
            st,
            rng,
        );
        if !valid_final {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &sum(&rho_init, &p_final_beg));
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &sum(&rho_final, &p_init_end));
        persist
    }
}

/// Dual-averaging step size adaptation.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(target: f64, step_size: f64) -> Self {
        Self {
            target,
            mu: (10.0 * step_size).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Restarts the averaging around a fresh step size.
    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the last acceptance statistic.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Metric adaptation windows: an initial buffer of 15% of warmup, doubling
/// windows over the next 75%, and a final 10% where only the step size adapts.
#[derive(Debug, Clone)]
pub(crate) struct WindowSchedule {
    windows: Vec<(usize, usize)>,
}

impl WindowSchedule {
    pub const BASE_WINDOW: usize = 25;

    pub fn new(warmup: usize) -> Self {
        let init = (0.15 * warmup as f64) as usize;
        let term = (0.10 * warmup as f64) as usize;
        let middle = warmup.saturating_sub(init + term);
        let mut windows = Vec::new();
        if middle >= 5 {
            let last = init + middle - 1;
            let mut start = init;
            let mut size = Self::BASE_WINDOW.min(middle);
            loop {
                let mut end = start + size - 1;
                if end + 1 + 2 * size > last + 1 || end >= last {
                    end = last;
                }
                windows.push((start, end));
                if end == last {
                    break;
                }
                start = end + 1;
                size *= 2;
            }
        }
        Self { windows }
    }

    pub fn in_window(&self, iteration: usize) -> bool {
        self.windows.iter().any(|&(a, b)| (a..=b).contains(&iteration))
    }

    pub fn ends_window(&self, iteration: usize) -> bool {
        self.windows.iter().any(|&(_, b)| b == iteration)
    }

    #[cfg(test)]
    pub fn windows(&self) -> &[(usize, usize)] {
        &self.windows
    }
}

/// Streaming variance for the diagonal metric.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk towards 1e-3.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = if n > 1.0 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        let dim = self.mean.len();
        *self = Self::new(dim);
    }
}
