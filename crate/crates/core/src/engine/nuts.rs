//! Multinomial No-U-Turn sampler with a diagonal metric.
//!
//! Warmup follows the usual three-phase schedule: a fast initial buffer, a series
//! of doubling slow windows that estimate the metric, and a terminal fast buffer.
//! Step size is tuned by dual averaging throughout warmup.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Per-iteration sampler statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct IterStats {
    pub accept_stat: f64,
    pub divergent: bool,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub step_size: f64,
    pub energy: f64,
}

pub(crate) struct Nuts<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    max_depth: usize,
}

struct TreeState {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    h0: f64,
}

impl<'a, D: LogDensity + ?Sized> Nuts<'a, D> {
    pub fn new(target: &'a D, max_depth: usize) -> Self {
        let d = target.dim();
        Self {
            target,
            inv_metric: vec![1.0; d],
            step_size: 1.0,
            max_depth,
        }
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let kinetic: f64 =
            z.p.iter()
                .zip(&self.inv_metric)
                .map(|(p, m)| p * p * m)
                .sum::<f64>()
                * 0.5;
        -z.logp + kinetic
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density(&z.q, &mut z.grad);
        if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn sample_momentum(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let u: f64 = rng.sample(StandardNormal);
            *p = u / m.sqrt();
        }
    }

    /// Stan's heuristic: double or halve the step until the one-step acceptance crosses 0.8.
    pub fn init_step_size(&mut self, q: &[f64], rng: &mut ChaCha8Rng) {
        let mut z0 = self.point_at(q);
        if !z0.logp.is_finite() {
            return;
        }
        self.sample_momentum(&mut z0, rng);
        let h0 = self.hamiltonian(&z0);
        let mut z = z0.clone();
        self.leapfrog(&mut z, self.step_size);
        let h = self.hamiltonian(&z);
        let delta = if h.is_nan() {
            f64::NEG_INFINITY
        } else {
            h0 - h
        };
        let direction = if delta > 0.8f64.ln() { 1.0 } else { -1.0 };
        for _ in 0..100 {
            let mut z = z0.clone();
            self.sample_momentum(&mut z, rng);
            let h0 = self.hamiltonian(&z);
            self.leapfrog(&mut z, self.step_size);
            let h = self.hamiltonian(&z);
            let delta = if h.is_nan() {
                f64::NEG_INFINITY
            } else {
                h0 - h
            };
            if direction > 0.0 && !(delta > 0.8f64.ln()) {
                break;
            }
            if direction < 0.0 && !(delta < 0.8f64.ln()) {
                break;
            }
            self.step_size = if direction > 0.0 {
                2.0 * self.step_size
            } else {
                0.5 * self.step_size
            };
            if self.step_size > 1e7 || self.step_size < 1e-10 {
                break;
            }
        }
    }

    fn point_at(&self, q: &[f64]) -> Point {
        let mut grad = vec![0.0; q.len()];
        let logp = self.target.log_density(q, &mut grad);
        Point {
            q: q.to_vec(),
            p: vec![0.0; q.len()],
            grad,
            logp,
        }
    }

    fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
        dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
    }

    /// One NUTS transition from `q`.
    pub fn transition(&self, q: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, IterStats) {
        let d = q.len();
        let mut z = self.point_at(q);
        self.sample_momentum(&mut z, rng);
        let h0 = self.hamiltonian(&z);
        let mut st = TreeState {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
            h0,
        };

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();

        let ps0 = self.p_sharp(&z.p);
        let (mut p_fwd_fwd, mut p_fwd_bck, mut p_bck_fwd, mut p_bck_bck) =
            (z.p.clone(), z.p.clone(), z.p.clone(), z.p.clone());
        let (mut ps_fwd_fwd, mut ps_fwd_bck, mut ps_bck_fwd, mut ps_bck_bck) =
            (ps0.clone(), ps0.clone(), ps0.clone(), ps0);
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; d];
            let mut rho_bck = vec![0.0; d];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid;
            let mut z_propose;
            if rng.random::<f64>() > 0.5 {
                // Old trajectory becomes the backward subtree.
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.clone_from(&p_fwd_fwd);
                ps_bck_fwd.clone_from(&ps_fwd_fwd);
                let mut zc = z_fwd.clone();
                z_propose = zc.clone();
                valid = self.build_tree(
                    depth,
                    &mut zc,
                    &mut z_propose,
                    &mut ps_fwd_bck,
                    &mut ps_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    1.0,
                    &mut log_sum_weight_subtree,
                    &mut st,
                    rng,
                );
                z_fwd = zc;
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.clone_from(&p_bck_bck);
                ps_fwd_bck.clone_from(&ps_bck_bck);
                let mut zc = z_bck.clone();
                z_propose = zc.clone();
                valid = self.build_tree(
                    depth,
                    &mut zc,
                    &mut z_propose,
                    &mut ps_bck_fwd,
                    &mut ps_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    -1.0,
                    &mut log_sum_weight_subtree,
                    &mut st,
                    rng,
                );
                z_bck = zc;
            }
            if !valid {
                break;
            }
            depth += 1;

            // Biased progressive sampling favours the new subtree.
            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose;
            } else {
                let accept = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample = z_propose;
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            for i in 0..d {
                rho[i] = rho_bck[i] + rho_fwd[i];
            }
            let mut persist = Self::criterion(&ps_bck_bck, &ps_fwd_fwd, &rho);
            let ext: Vec<f64> = rho_bck.iter().zip(&p_fwd_bck).map(|(a, b)| a + b).collect();
            persist &= Self::criterion(&ps_bck_bck, &ps_fwd_bck, &ext);
            let ext: Vec<f64> = rho_fwd.iter().zip(&p_bck_fwd).map(|(a, b)| a + b).collect();
            persist &= Self::criterion(&ps_bck_fwd, &ps_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }

        let n_leapfrog = st.n_leapfrog.max(1);
        let stats = IterStats {
            accept_stat: st.sum_metro_prob / n_leapfrog as f64,
            divergent: st.divergent,
            tree_depth: depth,
            n_leapfrog: st.n_leapfrog,
            step_size: self.step_size,
            energy: self.hamiltonian(&z_sample),
        };
        (z_sample.q, stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        log_sum_weight: &mut f64,
        st: &mut TreeState,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            st.n_leapfrog += 1;
            let mut h = self.hamiltonian(z);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - st.h0 > MAX_DELTA_H {
                st.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, st.h0 - h);
            st.sum_metro_prob += if st.h0 - h > 0.0 {
                1.0
            } else {
                (st.h0 - h).exp()
            };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !st.divergent;
        }

        let d = rho.len();
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; d];
        let mut ps_init_end = vec![0.0; d];
        let mut rho_init = vec![0.0; d];
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut ps_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut log_sum_weight_init,
            st,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; d];
        let mut ps_final_beg = vec![0.0; d];
        let mut rho_final = vec![0.0; d];
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut ps_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut log_sum_weight_final,
            st,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree: Vec<f64> = rho_init
            .iter()
            .zip(&rho_final)
            .map(|(a, b)| a + b)
            .collect();
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = Self::criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let ext: Vec<f64> = rho_init
            .iter()
            .zip(&p_final_beg)
            .map(|(a, b)| a + b)
            .collect();
        persist &= Self::criterion(p_sharp_beg, &ps_final_beg, &ext);
        let ext: Vec<f64> = rho_final
            .iter()
            .zip(&p_init_end)
            .map(|(a, b)| a + b)
            .collect();
        persist &= Self::criterion(&ps_init_end, p_sharp_end, &ext);
        persist
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    delta: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(delta: f64, step_size: f64) -> Self {
        let mut da = Self {
            delta,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(step_size);
        da
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let stat = if accept_stat.is_nan() {
            0.0
        } else {
            accept_stat.min(1.0)
        };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Slow (metric-estimating) windows as half-open iteration ranges.
pub(crate) fn adaptation_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    if n_warmup < 20 {
        return Vec::new();
    }
    let (init, term, base) = if n_warmup >= 150 {
        (75, 50, 25)
    } else {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup - init - term)
    };
    let last = n_warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

/// Welford accumulator for the regularized diagonal metric.
#[derive(Debug, Clone)]
pub(crate) struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Variance shrunk towards 1e-3 as in Stan.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = if n > 1.0 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Finds an initial point with finite density and gradient.
pub(crate) fn initialize<D: LogDensity + ?Sized>(
    target: &D,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    let mut r = radius;
    for attempt in 0..200 {
        if attempt > 0 && attempt % 25 == 0 {
            r *= 0.5;
        }
        let q: Vec<f64> = (0..d)
            .map(|_| {
                if r > 0.0 {
                    rng.random_range(-r..r)
                } else {
                    0.0
                }
            })
            .collect();
        let lp = target.log_density(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(Error::Numerical(
        "could not find an initial point with finite log density".into(),
    ))
}
