//! Gaussian-process surrogate (Matérn 5/2 with one length-scale per input),
//! expected improvement, and the Bayesian optimization loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{evaluate_trial, Objective};
use crate::rng;
use crate::space::{Configuration, ParamKind, SearchSpace, Value};
use crate::trial::Trial;

const JITTERS: [f64; 7] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-4];

/// Hyperparameters in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl GpHyper {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        GpHyper { log_lengthscales: v[..d].to_vec(), log_signal_var: v[d], log_noise_var: v[d + 1] }
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub max_evals_per_start: usize,
    pub min_step: f64,
    pub lengthscale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions {
            n_starts: 8,
            seed: 0,
            max_evals_per_start: 400,
            min_step: 1e-3,
            lengthscale_bounds: (1e-2, 20.0),
            signal_bounds: (1e-2, 1e2),
            noise_bounds: (1e-10, 10.0),
        }
    }
}

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_dist(a: &[f64], b: &[f64], inv_ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(inv_ls).map(|((x, y), s)| ((x - y) * s).powi(2)).sum::<f64>().sqrt()
}

/// In-place lower Cholesky factor of a row-major n×n matrix.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

fn forward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn backward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    ys: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    pub hyper: GpHyper,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    /// Final step at which every axis neighbour of the hyperparameters had
    /// lower likelihood, when the search ended on such a poll.
    pub witness_step: Option<f64>,
}

struct Factored {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

fn factor(x: &[Vec<f64>], y: &[f64], h: &GpHyper) -> Option<Factored> {
    let n = x.len();
    let inv_ls: Vec<f64> = h.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let sf2 = h.log_signal_var.exp();
    let sn2 = h.log_noise_var.exp();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = sf2 * matern52(scaled_dist(&x[i], &x[j], &inv_ls));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    for jitter in JITTERS {
        let mut a = k.clone();
        for i in 0..n {
            a[i * n + i] += sn2 + jitter;
        }
        if cholesky(&mut a, n) {
            let alpha = backward(&a, n, &forward(&a, n, y));
            let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let logdet: f64 = (0..n).map(|i| a[i * n + i].ln()).sum();
            let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if lml.is_finite() {
                return Some(Factored { chol: a, alpha, jitter, lml });
            }
        }
    }
    None
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: x.iter().map(|r| r.len()).find(|l| *l != d).unwrap_or(d) });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data".into()));
    }
    Ok(d)
}

/// Coordinate pattern search maximizing `f` inside a box. Returns the point,
/// its value, and the last unsuccessful poll step if the search ended on one.
pub(crate) fn compass<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    step0: f64,
    min_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, Option<f64>) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = step0;
    let mut witness = None;
    while step >= min_step && evals < max_evals {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut c = x.clone();
                c[d] = (x[d] + dir * step).clamp(lo[d], hi[d]);
                if c[d] == x[d] {
                    continue;
                }
                let fc = f(&c);
                evals += 1;
                if fc > fx {
                    x = c;
                    fx = fc;
                    improved = true;
                    break;
                }
            }
        }
        if improved {
            witness = None;
        } else {
            witness = Some(step);
            step *= 0.5;
        }
    }
    (x, fx, witness)
}

impl GpModel {
    /// Model at fixed hyperparameters.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<Self> {
        let d = check_data(x, y)?;
        if hyper.log_lengthscales.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: hyper.log_lengthscales.len() });
        }
        let (ys, mean, scale) = standardize(y);
        let f = factor(x, &ys, &hyper).ok_or(Error::Singular(JITTERS[JITTERS.len() - 1]))?;
        Ok(GpModel {
            x: x.to_vec(),
            ys,
            y_mean: mean,
            y_scale: scale,
            hyper,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
            log_marginal_likelihood: f.lml,
            witness_step: None,
        })
    }

    /// Log marginal likelihood of the standardized targets under `hyper`.
    pub fn lml_at(&self, hyper: &GpHyper) -> f64 {
        factor(&self.x, &self.ys, hyper).map_or(f64::NEG_INFINITY, |f| f.lml)
    }

    /// Posterior mean and variance of the latent function, in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let inv_ls: Vec<f64> = self.hyper.log_lengthscales.iter().map(|l| (-l).exp()).collect();
        let sf2 = self.hyper.log_signal_var.exp();
        let ks: Vec<f64> = self.x.iter().map(|xi| sf2 * matern52(scaled_dist(xi, x, &inv_ls))).collect();
        let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward(&self.chol, n, &ks);
        let var = (sf2 - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        (mean * self.y_scale + self.y_mean, var * self.y_scale * self.y_scale)
    }

    pub fn signal_var(&self) -> f64 {
        self.hyper.log_signal_var.exp() * self.y_scale * self.y_scale
    }

    pub fn dim(&self) -> usize {
        self.hyper.log_lengthscales.len()
    }
}

/// Fit hyperparameters by maximizing the log marginal likelihood from
/// several deterministic starts.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], opts: &GpFitOptions) -> Result<GpModel> {
    let d = check_data(x, y)?;
    let (ys, mean, scale) = standardize(y);
    let mut lo = vec![opts.lengthscale_bounds.0.ln(); d];
    let mut hi = vec![opts.lengthscale_bounds.1.ln(); d];
    lo.push(opts.signal_bounds.0.ln());
    hi.push(opts.signal_bounds.1.ln());
    lo.push(opts.noise_bounds.0.ln());
    hi.push(opts.noise_bounds.1.ln());
    let lml = |v: &[f64]| factor(x, &ys, &GpHyper::from_vec(v)).map_or(f64::NEG_INFINITY, |f| f.lml);
    let mut best: Option<(Vec<f64>, f64, Option<f64>)> = None;
    for s in 0..opts.n_starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            let mut v = vec![0.3f64.ln().clamp(lo[0], hi[0]); d];
            v.push(0.0f64.clamp(lo[d], hi[d]));
            v.push(1e-3f64.ln().clamp(lo[d + 1], hi[d + 1]));
            v
        } else {
            let mut r = rng::stream(rng::derive(opts.seed, &[s as u64]));
            lo.iter().zip(&hi).map(|(a, b)| r.gen_range(*a..*b)).collect()
        };
        let (p, v, w) = compass(lml, &start, &lo, &hi, 1.0, opts.min_step, opts.max_evals_per_start);
        if best.as_ref().map_or(true, |(_, bv, _)| v > *bv) {
            best = Some((p, v, w));
        }
    }
    let (p, v, w) = best.expect("at least one start");
    if !v.is_finite() {
        return Err(Error::Singular(JITTERS[JITTERS.len() - 1]));
    }
    let hyper = GpHyper::from_vec(&p);
    let f = factor(x, &ys, &hyper).ok_or(Error::Singular(JITTERS[JITTERS.len() - 1]))?;
    Ok(GpModel {
        x: x.to_vec(),
        ys,
        y_mean: mean,
        y_scale: scale,
        hyper,
        chol: f.chol,
        alpha: f.alpha,
        jitter: f.jitter,
        log_marginal_likelihood: f.lml,
        witness_step: w,
    })
}

pub fn gp_predict(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    Ok(model.predict(x))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// gamma * Phi(gamma) + phi(gamma), kept accurate in the far left tail.
fn ei_factor(g: f64) -> f64 {
    if g < -8.0 {
        let g2 = g * g;
        normal_pdf(g) / g2 * (1.0 - 3.0 / g2 + 15.0 / (g2 * g2) - 105.0 / (g2 * g2 * g2))
    } else {
        (g * normal_cdf(g) + normal_pdf(g)).max(0.0)
    }
}

/// Expected improvement below `best` for a Gaussian prediction (minimization).
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if !(sigma > 0.0) {
        return (best - mu).max(0.0);
    }
    sigma * ei_factor((best - mu) / sigma)
}

/// Maps configurations of the free parameters to the unit cube: ordered
/// parameters by rank, booleans as 0/1, categoricals one-hot. Inactive
/// children encode as zeros.
#[derive(Debug, Clone)]
pub struct Encoding {
    space: SearchSpace,
    fixed: Configuration,
    blocks: Vec<(String, usize, usize)>,
    dim: usize,
}

impl Encoding {
    pub fn new(space: &SearchSpace, fixed: &Configuration) -> Result<Self> {
        for (k, v) in &fixed.0 {
            let p = space.param(k).ok_or_else(|| Error::ConfigMismatch(format!("unknown fixed parameter `{k}`")))?;
            p.canonical(v)?;
        }
        let mut blocks = Vec::new();
        let mut dim = 0;
        for p in space.params() {
            if fixed.get(&p.name).is_some() {
                continue;
            }
            if let Some(r) = space.rule_for(&p.name) {
                if fixed.get(&r.parent).is_some_and(|v| !r.activating.contains(v)) {
                    continue;
                }
            }
            let width = match &p.kind {
                ParamKind::Categorical { levels, .. } => levels.len(),
                _ => 1,
            };
            blocks.push((p.name.clone(), dim, width));
            dim += width;
        }
        Ok(Encoding { space: space.clone(), fixed: fixed.clone(), blocks, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn free_params(&self) -> Vec<&str> {
        self.blocks.iter().map(|(n, _, _)| n.as_str()).collect()
    }

    pub fn encode(&self, config: &Configuration) -> Result<Vec<f64>> {
        let mut u = vec![0.0; self.dim];
        for (name, off, width) in &self.blocks {
            let Some(v) = config.get(name) else { continue };
            let p = self.space.param(name).expect("block param");
            match &p.kind {
                ParamKind::Categorical { .. } => u[off + p.level_index(v)?] = 1.0,
                ParamKind::Boolean { .. } => u[*off] = if p.level_index(v)? == 1 { 1.0 } else { 0.0 },
                _ => u[*off] = p.midpoint_rank(v)?,
            }
            debug_assert!(*width >= 1);
        }
        Ok(u)
    }

    pub fn decode(&self, u: &[f64]) -> Configuration {
        let mut c = Configuration::new();
        let value_of = |name: &str| -> Option<Value> {
            let (_, off, width) = self.blocks.iter().find(|(n, _, _)| n == name)?;
            let p = self.space.param(name).expect("block param");
            Some(match &p.kind {
                ParamKind::Categorical { levels, .. } => {
                    let mut best = 0;
                    for k in 1..*width {
                        if u[off + k] > u[off + best] {
                            best = k;
                        }
                    }
                    Value::Str(levels[best].clone())
                }
                ParamKind::Boolean { .. } => Value::Bool(u[*off] >= 0.5),
                _ => p.from_rank(u[*off]),
            })
        };
        for p in self.space.main_params() {
            let v = self.fixed.get(&p.name).cloned().or_else(|| value_of(&p.name));
            if let Some(v) = v {
                c.insert(&p.name, v);
            }
        }
        for r in self.space.rules() {
            if self.space.is_active(&r.child, &c) {
                if let Some(v) = self.fixed.get(&r.child).cloned().or_else(|| value_of(&r.child)) {
                    c.insert(&r.child, v);
                }
            }
        }
        c
    }

    /// Round a point to the encoding of the configuration it decodes to.
    pub fn snap(&self, u: &[f64]) -> Vec<f64> {
        self.encode(&self.decode(u)).expect("decoded configurations encode")
    }
}

const PRIMES: [u64; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113,
    127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
    257, 263, 269, 271, 277, 281, 283, 293, 307, 311,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Randomly shifted Halton points; dimensions past the prime table fall back
/// to plain uniform draws.
pub fn halton(n: usize, dim: usize, start: u64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed);
    let shift: Vec<f64> = (0..dim).map(|_| r.gen::<f64>()).collect();
    (0..n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    if d < PRIMES.len() {
                        (radical_inverse(start + i + 1, PRIMES[d]) + shift[d]).fract()
                    } else {
                        r.gen::<f64>()
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpboOptions {
    pub n_init: usize,
    pub n_iter: usize,
    pub n_candidates: usize,
    pub n_polish: usize,
    pub seed: u64,
    pub fit: GpFitOptions,
}

impl Default for GpboOptions {
    fn default() -> Self {
        GpboOptions { n_init: 10, n_iter: 40, n_candidates: 2048, n_polish: 5, seed: 0, fit: GpFitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpboResult {
    pub history: Vec<Trial>,
    /// Index into `history` of the best successful trial.
    pub best: Option<usize>,
    /// Best error seen after each evaluation (infinite before any success).
    pub incumbent: Vec<f64>,
}

impl GpboResult {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.history[i])
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best_trial().and_then(|t| t.score)
    }
}

/// An initial design point: a configuration and optionally the seed to
/// evaluate it with.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeded {
    pub config: Configuration,
    pub seed: Option<u64>,
}

fn surrogate_targets(history: &[Trial]) -> Vec<f64> {
    let ok: Vec<f64> = history.iter().filter_map(|t| t.score).collect();
    let use_log = !ok.is_empty() && ok.iter().all(|s| *s > 0.0);
    let tr = |s: f64| if use_log { s.ln() } else { s };
    let vals: Vec<f64> = ok.iter().map(|s| tr(*s)).collect();
    let worst = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (worst, spread) = if vals.is_empty() {
        (0.0, 1.0)
    } else {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        (worst, if sd > 0.0 { sd } else { 1.0 })
    };
    history.iter().map(|t| t.score.map_or(worst + 3.0 * spread, tr)).collect()
}

/// Bayesian optimization over the parameters not in `fixed`.
pub fn gpbo(objective: &dyn Objective, space: &SearchSpace, fixed: &Configuration, opts: &GpboOptions) -> Result<GpboResult> {
    gpbo_with_initial(objective, space, fixed, &[], opts)
}

/// As `gpbo`, with the first design points given explicitly; the rest of the
/// `n_init` initial points are quasi-random.
pub fn gpbo_with_initial(
    objective: &dyn Objective,
    space: &SearchSpace,
    fixed: &Configuration,
    initial: &[Seeded],
    opts: &GpboOptions,
) -> Result<GpboResult> {
    if opts.n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be at least 1".into()));
    }
    let enc = Encoding::new(space, fixed)?;
    let mut history: Vec<Trial> = Vec::new();
    let eval_seed = |i: usize| rng::derive_named(opts.seed, "eval", &[i as u64]);
    let run = |history: &mut Vec<Trial>, config: Configuration, seed: Option<u64>| -> Result<()> {
        let i = history.len();
        let config = space.validate(&config)?;
        history.push(evaluate_trial(objective, &config, i as u64, seed.unwrap_or_else(|| eval_seed(i))));
        Ok(())
    };
    for s in initial.iter().take(opts.n_init) {
        let mut c = s.config.clone();
        for (k, v) in &fixed.0 {
            c.0.insert(k.clone(), v.clone());
        }
        complete(space, &mut c, opts.seed);
        run(&mut history, c, s.seed)?;
    }
    let n_fill = opts.n_init.saturating_sub(history.len());
    for u in halton(n_fill, enc.dim(), 0, rng::derive_named(opts.seed, "init", &[])) {
        run(&mut history, enc.decode(&u), None)?;
    }
    for it in 0..opts.n_iter {
        let next = propose(&enc, &history, opts, it)?;
        run(&mut history, next, None)?;
    }
    let mut incumbent = Vec::with_capacity(history.len());
    let mut best: Option<usize> = None;
    for (i, t) in history.iter().enumerate() {
        if let Some(s) = t.score {
            if best.map_or(true, |b| s < history[b].score.expect("ok")) {
                best = Some(i);
            }
        }
        incumbent.push(best.map_or(f64::INFINITY, |b| history[b].score.expect("ok")));
    }
    Ok(GpboResult { history, best, incumbent })
}

/// Fill in children activated by fixed parents, drop deactivated ones.
fn complete(space: &SearchSpace, c: &mut Configuration, seed: u64) {
    space.prune_inactive(c);
    let mut r = rng::stream(rng::derive_named(seed, "complete", &[]));
    for rule in space.rules() {
        if space.is_active(&rule.child, c) && c.get(&rule.child).is_none() {
            let v = space.param(&rule.child).expect("rule child").sample(&mut r);
            c.insert(&rule.child, v);
        }
    }
}

fn propose(enc: &Encoding, history: &[Trial], opts: &GpboOptions, it: usize) -> Result<Configuration> {
    let cand_seed = rng::derive_named(opts.seed, "candidates", &[it as u64]);
    if enc.dim() == 0 {
        return Ok(enc.decode(&[]));
    }
    if history.iter().all(|t| t.score.is_none()) {
        let u = halton(1, enc.dim(), history.len() as u64, cand_seed).remove(0);
        return Ok(enc.decode(&u));
    }
    let x: Vec<Vec<f64>> = history.iter().map(|t| enc.encode(&t.config)).collect::<Result<_>>()?;
    let y = surrogate_targets(history);
    let fit = GpFitOptions { seed: rng::derive_named(opts.seed, "fit", &[it as u64]), ..opts.fit.clone() };
    let model = gp_fit(&x, &y, &fit)?;
    let best = history.iter().zip(&y).filter(|(t, _)| t.is_ok()).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let ei = |u: &[f64]| {
        let (m, v) = model.predict(u);
        expected_improvement(m, v.sqrt(), best)
    };
    let mut cands: Vec<(Vec<f64>, f64)> = halton(opts.n_candidates, enc.dim(), 0, cand_seed)
        .into_iter()
        .map(|u| {
            let s = enc.snap(&u);
            let e = ei(&s);
            (s, e)
        })
        .collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].1.total_cmp(&cands[a].1).then(a.cmp(&b)));
    let lo = vec![0.0; enc.dim()];
    let hi = vec![1.0; enc.dim()];
    for &k in order.iter().take(opts.n_polish) {
        let (p, v, _) = compass(|u| ei(&enc.snap(u)), &cands[k].0, &lo, &hi, 0.1, 0.005, 60 * enc.dim().max(1));
        if v > cands[k].1 {
            cands[k] = (enc.snap(&p), v);
        }
    }
    let pick = (0..cands.len()).fold(0, |b, k| if cands[k].1 > cands[b].1 { k } else { b });
    Ok(enc.decode(&cands[pick].0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_examples() {
        assert!((expected_improvement(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.3);
        let mut prev = 0.0;
        for i in 1..200 {
            let e = expected_improvement(3.0, i as f64 * 0.05, 0.0);
            assert!(e >= prev);
            prev = e;
        }
        assert!(expected_improvement(100.0, 1.0, 0.0) >= 0.0);
    }

    #[test]
    fn interpolates_noise_free_data() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.25]).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v[0] + 1.0).collect();
        let m = gp_fit(&x, &y, &GpFitOptions::default()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, _) = m.predict(xi);
            assert!((mu - yi).abs() < 1e-6, "{mu} vs {yi}");
        }
    }

    #[test]
    fn conflicting_duplicates_need_noise() {
        let x = vec![vec![0.5], vec![0.5], vec![0.1], vec![0.9]];
        let y = vec![0.0, 1.0, 0.3, 0.7];
        let m = gp_fit(&x, &y, &GpFitOptions::default()).unwrap();
        assert!(m.hyper.noise_var() > 1e-4);
    }

    #[test]
    fn prediction_examples() {
        let x = vec![vec![0.2], vec![0.6]];
        let y = vec![1.0, -1.0];
        let h = GpHyper { log_lengthscales: vec![0.1f64.ln()], log_signal_var: 0.0, log_noise_var: 1e-10f64.ln() };
        let m = GpModel::with_hyper(&x, &y, h).unwrap();
        let (mu, _) = m.predict(&[0.2]);
        assert!((mu - 1.0).abs() < 1e-5);
        let (_, var) = m.predict(&[5.0]);
        assert!(var >= 0.9 * m.signal_var());
        assert!(gp_predict(&m, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn likelihood_is_locally_maximal() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin() + v[1] * v[1]).collect();
        let m = gp_fit(&x, &y, &GpFitOptions::default()).unwrap();
        let step = m.witness_step.expect("search ended on a failed poll");
        let base = m.hyper.to_vec();
        let opts = GpFitOptions::default();
        let (lo, hi) = (
            [opts.lengthscale_bounds.0.ln(), opts.lengthscale_bounds.0.ln(), opts.signal_bounds.0.ln(), opts.noise_bounds.0.ln()],
            [opts.lengthscale_bounds.1.ln(), opts.lengthscale_bounds.1.ln(), opts.signal_bounds.1.ln(), opts.noise_bounds.1.ln()],
        );
        for d in 0..base.len() {
            for dir in [1.0, -1.0] {
                let mut v = base.clone();
                v[d] = (v[d] + dir * step).clamp(lo[d], hi[d]);
                assert!(m.lml_at(&GpHyper::from_vec(&v)) <= m.log_marginal_likelihood + 1e-9);
            }
        }
    }

    #[test]
    fn encoding_round_trips() {
        use crate::space::ParameterSpec;
        let space = SearchSpace::new(
            vec![
                ParameterSpec::integer("n", 1, 5),
                ParameterSpec::categorical("act", &["a", "b", "c"]),
                ParameterSpec::log_continuous("lr", 1e-4, 1e-1),
                ParameterSpec::boolean("flag"),
            ],
            vec![],
        )
        .unwrap();
        let enc = Encoding::new(&space, &Configuration::new()).unwrap();
        assert_eq!(enc.dim(), 6);
        let mut r = rng::stream(2);
        for _ in 0..200 {
            let c = space.sample(&mut r);
            let back = enc.decode(&enc.encode(&c).unwrap());
            assert_eq!(back.get("n"), c.get("n"));
            assert_eq!(back.get("act"), c.get("act"));
            assert_eq!(back.get("flag"), c.get("flag"));
            assert!((back.f64("lr").unwrap() / c.f64("lr").unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
