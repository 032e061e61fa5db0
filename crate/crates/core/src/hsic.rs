//! Goal-oriented HSIC estimation.
//!
//! For a rank column `u` and goal flags `z` the score is the V-statistic
//!
//! ```text
//! S = (m/n)^2 [ (1/m^2) sum_goal k + (1/n^2) sum_all k - (2/(n m)) sum_all sum_goal k ]
//! ```
//!
//! with an RBF kernel whose bandwidth maximises the same V-statistic over a
//! log-spaced grid scaled by the median pairwise distance. Up to
//! `exact_limit` rows the double sums are computed pair by pair on sorted
//! data; one-dimensional samples beyond that are linearly binned and
//! convolved by FFT.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Product RBF kernel with one bandwidth per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kernel {
    pub bandwidths: Vec<f64>,
}

impl Kernel {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidArgument("bandwidths must be positive and finite".into()));
        }
        Ok(Kernel { bandwidths })
    }

    pub fn isotropic(h: f64, dim: usize) -> Result<Self> {
        Self::new(vec![h; dim])
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }
}

pub fn rbf_kernel(u: &[f64], v: &[f64], kernel: &Kernel) -> Result<f64> {
    if u.len() != kernel.dim() || v.len() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: u.len().max(v.len()) });
    }
    let mut d2 = 0.0;
    for ((a, b), h) in u.iter().zip(v).zip(&kernel.bandwidths) {
        let t = (a - b) / h;
        d2 += t * t;
    }
    Ok((-0.5 * d2).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicOptions {
    pub grid_size: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub n_boot: usize,
    pub seed: u64,
    /// Largest sample evaluated pair by pair; bigger 1-D samples are binned.
    pub exact_limit: usize,
    pub bins: usize,
    /// Points used for the median pairwise distance.
    pub median_cap: usize,
}

impl Default for HsicOptions {
    fn default() -> Self {
        HsicOptions {
            grid_size: 40,
            grid_lo: 1e-2,
            grid_hi: 1e1,
            n_boot: 100,
            seed: 0,
            exact_limit: 4000,
            bins: 8192,
            median_cap: 1000,
        }
    }
}

impl HsicOptions {
    pub fn with_seed(&self, seed: u64) -> Self {
        HsicOptions { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicScore {
    pub value: f64,
    pub std_error: f64,
    pub n_total: usize,
    pub n_goal: usize,
    pub bandwidth: Kernel,
    /// Set when every sample is identical and no bandwidth is informative.
    pub degenerate: bool,
}

impl HsicScore {
    /// Whether this score exceeds `floor` by more than `sigmas` combined
    /// standard errors.
    pub fn exceeds(&self, floor: &HsicScore, sigmas: f64) -> bool {
        self.value > floor.value + sigmas * combined_se(self.std_error, floor.std_error)
    }
}

pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthChoice {
    pub kernel: Kernel,
    pub mmd2: f64,
    pub degenerate: bool,
}

/// exp(x) for x <= 0, accurate to a few ulp and written so the compiler can
/// vectorise it.
#[inline(always)]
fn exp_neg(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-700.0);
    let kf = (x * std::f64::consts::LOG2_E + SHIFT) - SHIFT;
    let r = x - kf * LN2_HI - kf * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits((kf + 1023.0 + SHIFT).to_bits() << 52);
    p * scale
}

/// Pairs further apart than this many bandwidths contribute below 1e-18.
const WINDOW: f64 = 9.1;

fn check_points(pts: &[Vec<f64>], what: &str) -> Result<usize> {
    let dim = pts.first().ok_or(Error::EmptySample)?.len();
    for p in pts {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what.into()));
        }
    }
    Ok(dim)
}

fn cross_sum(a: &[Vec<f64>], b: &[Vec<f64>], inv_h: &[f64]) -> f64 {
    let mut total = 0.0;
    for x in a {
        let mut row = 0.0;
        for y in b {
            let mut d2 = 0.0;
            for ((p, q), s) in x.iter().zip(y).zip(inv_h) {
                let t = (p - q) * s;
                d2 += t * t;
            }
            row += exp_neg(-0.5 * d2);
        }
        total += row;
    }
    total
}

/// Biased (V-statistic) squared maximum mean discrepancy.
pub fn mmd2(xs: &[Vec<f64>], ys: &[Vec<f64>], kernel: &Kernel) -> Result<f64> {
    let dx = check_points(xs, "xs")?;
    let dy = check_points(ys, "ys")?;
    if dx != kernel.dim() || dy != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: if dx != kernel.dim() { dx } else { dy } });
    }
    let inv: Vec<f64> = kernel.bandwidths.iter().map(|h| 1.0 / h).collect();
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let v = cross_sum(xs, xs, &inv) / (n * n) + cross_sum(ys, ys, &inv) / (m * m) - 2.0 * cross_sum(xs, ys, &inv) / (n * m);
    Ok(v)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Median pairwise Euclidean distance, computed on a strided subsample of
/// the sorted points so the result does not depend on input order.
fn median_distance(pooled: &[Vec<f64>], cap: usize) -> f64 {
    let mut sorted: Vec<&Vec<f64>> = pooled.iter().collect();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    let n = sorted.len();
    let take = n.min(cap.max(2));
    let sub: Vec<&Vec<f64>> = (0..take).map(|k| sorted[k * n / take]).collect();
    let mut d = Vec::with_capacity(take * (take - 1) / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            let s: f64 = sub[i].iter().zip(sub[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, med, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let med = *med;
    if med > 0.0 {
        med
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Bandwidth grid for a pooled sample and whether the sample is degenerate
/// (all points identical).
pub fn bandwidth_grid(pooled: &[Vec<f64>], opts: &HsicOptions) -> (Vec<f64>, bool) {
    let med = median_distance(pooled, opts.median_cap);
    let (scale, degenerate) = if med > 0.0 { (med, false) } else { (1.0, true) };
    let g = opts.grid_size.max(1);
    let ratio = opts.grid_hi / opts.grid_lo;
    let grid = (0..g)
        .map(|i| {
            let t = if g == 1 { 0.0 } else { i as f64 / (g - 1) as f64 };
            scale * opts.grid_lo * ratio.powf(t)
        })
        .collect();
    (grid, degenerate)
}

/// Grid bandwidth maximising `mmd2(xs, ys)`. Ties go to the smaller
/// bandwidth.
pub fn select_bandwidth(xs: &[Vec<f64>], ys: &[Vec<f64>], opts: &HsicOptions) -> Result<BandwidthChoice> {
    let dim = check_points(xs, "xs")?;
    let dy = check_points(ys, "ys")?;
    if dy != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: dy });
    }
    let pooled: Vec<Vec<f64>> = xs.iter().chain(ys).cloned().collect();
    let (grid, degenerate) = bandwidth_grid(&pooled, opts);
    if degenerate {
        log::warn!("all samples identical; bandwidth selection is uninformative");
    }
    let mut best: Option<(f64, f64)> = None;
    for h in grid {
        let v = mmd2(xs, ys, &Kernel::isotropic(h, dim)?)?;
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((h, v));
        }
    }
    let (h, v) = best.expect("non-empty grid");
    Ok(BandwidthChoice { kernel: Kernel::isotropic(h, dim)?, mmd2: v, degenerate })
}

/// The three double sums of the goal statistic.
#[derive(Debug, Clone, Copy)]
struct Sums {
    all: f64,
    cross: f64,
    goal: f64,
}

fn statistic(s: Sums, n: f64, m: f64) -> f64 {
    if m <= 0.0 || n <= 0.0 {
        return 0.0;
    }
    (m / n) * (m / n) * (s.goal / (m * m) + s.all / (n * n) - 2.0 * s.cross / (n * m))
}

/// Pairwise engine over rows sorted by their first coordinate.
struct Exact {
    coords: Vec<Vec<f64>>,
    goal: Vec<f64>,
}

const LANES: usize = 4;

impl Exact {
    fn new(cols: &[Vec<f64>], z: &[bool]) -> Self {
        let n = z.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            for c in cols {
                match c[a].total_cmp(&c[b]) {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            z[a].cmp(&z[b])
        });
        Exact {
            coords: cols.iter().map(|c| order.iter().map(|&i| c[i]).collect()).collect(),
            goal: order.iter().map(|&i| if z[i] { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn n(&self) -> usize {
        self.goal.len()
    }

    fn window_ends(&self, h0: f64) -> Vec<usize> {
        let x = &self.coords[0];
        let cut = WINDOW * h0;
        let mut ends = Vec::with_capacity(x.len());
        let mut e = 0;
        for i in 0..x.len() {
            e = e.max(i + 1);
            while e < x.len() && x[e] - x[i] <= cut {
                e += 1;
            }
            ends.push(e);
        }
        ends
    }

    /// Kernel values of row `i` against rows `i+1..end`.
    #[inline(always)]
    fn kernel_row(&self, i: usize, end: usize, inv: &[f64], out: &mut [f64]) {
        let len = end - i - 1;
        match self.coords.len() {
            1 => {
                let x = &self.coords[0];
                let (xi, s) = (x[i], inv[0]);
                for (o, xj) in out[..len].iter_mut().zip(&x[i + 1..end]) {
                    let t = (xj - xi) * s;
                    *o = exp_neg(-0.5 * t * t);
                }
            }
            _ => {
                out[..len].fill(0.0);
                for (c, s) in self.coords.iter().zip(inv) {
                    let ci = c[i];
                    for (o, cj) in out[..len].iter_mut().zip(&c[i + 1..end]) {
                        let t = (cj - ci) * s;
                        *o += t * t;
                    }
                }
                for o in out[..len].iter_mut() {
                    *o = exp_neg(-0.5 * *o);
                }
            }
        }
    }

    fn sums(&self, kernel: &Kernel) -> Sums {
        let inv: Vec<f64> = kernel.bandwidths.iter().map(|h| 1.0 / h).collect();
        let ends = self.window_ends(kernel.bandwidths[0]);
        let n = self.n();
        let mut buf = vec![0.0; n];
        let (mut all, mut cross, mut goal) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let len = ends[i] - i - 1;
            self.kernel_row(i, ends[i], &inv, &mut buf);
            let (a, b) = dot2(&buf[..len], &self.goal[i + 1..ends[i]]);
            let gi = self.goal[i];
            all += a;
            cross += gi * a + b;
            goal += gi * b;
        }
        let m: f64 = self.goal.iter().sum();
        Sums { all: n as f64 + 2.0 * all, cross: m + cross, goal: m + 2.0 * goal }
    }

    fn cache(&self, kernel: &Kernel) -> (Vec<usize>, Vec<f64>) {
        let inv: Vec<f64> = kernel.bandwidths.iter().map(|h| 1.0 / h).collect();
        let ends = self.window_ends(kernel.bandwidths[0]);
        let total: usize = ends.iter().enumerate().map(|(i, e)| e - i - 1).sum();
        let mut k = vec![0.0; total];
        let mut off = 0;
        for i in 0..self.n() {
            let len = ends[i] - i - 1;
            self.kernel_row(i, ends[i], &inv, &mut k[off..off + len]);
            off += len;
        }
        (ends, k)
    }

    /// Sums under multiplicity weights `w` (a bootstrap resample).
    fn weighted_sums(&self, ends: &[usize], k: &[f64], w: &[f64]) -> (Sums, f64, f64) {
        let n = self.n();
        let wg: Vec<f64> = w.iter().zip(&self.goal).map(|(a, g)| a * g).collect();
        let (mut all, mut cross, mut goal) = (0.0, 0.0, 0.0);
        let (mut d_all, mut d_goal) = (0.0, 0.0);
        let mut off = 0;
        for i in 0..n {
            let len = ends[i] - i - 1;
            let (a, b) = dot2w(&k[off..off + len], &w[i + 1..ends[i]], &wg[i + 1..ends[i]]);
            off += len;
            all += w[i] * a;
            cross += w[i] * b + wg[i] * a;
            goal += wg[i] * b;
            d_all += w[i] * w[i];
            d_goal += w[i] * wg[i];
        }
        let nb: f64 = w.iter().sum();
        let mb: f64 = wg.iter().sum();
        (Sums { all: d_all + 2.0 * all, cross: d_goal + cross, goal: d_goal + 2.0 * goal }, nb, mb)
    }
}

/// (sum k, sum k*g) with a fixed lane layout so the order of additions is
/// deterministic.
#[inline(always)]
fn dot2(k: &[f64], g: &[f64]) -> (f64, f64) {
    let mut a = [0.0; LANES];
    let mut b = [0.0; LANES];
    let chunks = k.len() / LANES;
    for c in 0..chunks {
        for l in 0..LANES {
            let v = k[c * LANES + l];
            a[l] += v;
            b[l] += v * g[c * LANES + l];
        }
    }
    let (mut sa, mut sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    for j in chunks * LANES..k.len() {
        sa += k[j];
        sb += k[j] * g[j];
    }
    (sa, sb)
}

#[inline(always)]
fn dot2w(k: &[f64], w: &[f64], wg: &[f64]) -> (f64, f64) {
    let mut a = [0.0; LANES];
    let mut b = [0.0; LANES];
    let chunks = k.len() / LANES;
    for c in 0..chunks {
        for l in 0..LANES {
            let j = c * LANES + l;
            a[l] += k[j] * w[j];
            b[l] += k[j] * wg[j];
        }
    }
    let (mut sa, mut sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    for j in chunks * LANES..k.len() {
        sa += k[j] * w[j];
        sb += k[j] * wg[j];
    }
    (sa, sb)
}

/// One-dimensional engine on a regular grid: sums become dot products with a
/// Gaussian convolution evaluated by FFT.
struct Binned {
    x: Vec<f64>,
    goal: Vec<bool>,
    lo: f64,
    step: f64,
    bins: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Binned {
    fn new(x: Vec<f64>, goal: Vec<bool>, bins: usize) -> Self {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let step = if hi > lo { (hi - lo) / (bins - 1) as f64 } else { 1.0 };
        let mut planner = FftPlanner::new();
        Binned {
            x,
            goal,
            lo,
            step,
            bins,
            fft: planner.plan_fft_forward(2 * bins),
            ifft: planner.plan_fft_inverse(2 * bins),
        }
    }

    fn bin(&self, w: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.bins];
        let mut g = vec![0.0; self.bins];
        for (i, (&x, &z)) in self.x.iter().zip(&self.goal).enumerate() {
            let wi = w.map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            let t = ((x - self.lo) / self.step).clamp(0.0, (self.bins - 1) as f64);
            let j = (t.floor() as usize).min(self.bins - 2);
            let f = t - j as f64;
            a[j] += wi * (1.0 - f);
            a[j + 1] += wi * f;
            if z {
                g[j] += wi * (1.0 - f);
                g[j + 1] += wi * f;
            }
        }
        (a, g)
    }

    fn spectrum(&self, v: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|x| Complex::new(*x, 0.0)).collect();
        buf.resize(2 * self.bins, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf
    }

    fn kernel_spectrum(&self, h: f64) -> Vec<Complex<f64>> {
        let l = 2 * self.bins;
        let mut k = vec![0.0; l];
        let s = self.step / h;
        for t in 0..self.bins {
            let v = (-0.5 * (t as f64 * s).powi(2)).exp();
            k[t] = v;
            if t > 0 {
                k[l - t] = v;
            }
        }
        self.spectrum(&k[..]).into_iter().collect::<Vec<_>>()
    }

    fn convolve(&self, spec: &[Complex<f64>], kspec: &[Complex<f64>]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = spec.iter().zip(kspec).map(|(a, b)| a * b).collect();
        self.ifft.process(&mut buf);
        let norm = 1.0 / (2 * self.bins) as f64;
        buf[..self.bins].iter().map(|c| c.re * norm).collect()
    }

    fn sums_from(&self, a: &[f64], g: &[f64], kspec: &[Complex<f64>]) -> Sums {
        let ka = self.convolve(&self.spectrum(a), kspec);
        let kg = self.convolve(&self.spectrum(g), kspec);
        Sums {
            all: a.iter().zip(&ka).map(|(x, y)| x * y).sum(),
            cross: g.iter().zip(&ka).map(|(x, y)| x * y).sum(),
            goal: g.iter().zip(&kg).map(|(x, y)| x * y).sum(),
        }
    }
}

enum Engine {
    Exact(Exact),
    Binned(Binned),
}

impl Engine {
    fn n(&self) -> usize {
        match self {
            Engine::Exact(e) => e.n(),
            Engine::Binned(b) => b.x.len(),
        }
    }
}

/// Rows kept after masking, as per-dimension columns plus goal flags.
struct Prepared {
    cols: Vec<Vec<f64>>,
    z: Vec<bool>,
}

fn prepare(cols: &[&[f64]], z: &[bool], mask: Option<&[bool]>) -> Result<Prepared> {
    let n = z.len();
    for c in cols {
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.len() });
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| mask.map_or(true, |m| m[i])).collect();
    let out = Prepared {
        cols: cols.iter().map(|c| keep.iter().map(|&i| c[i]).collect::<Vec<f64>>()).collect(),
        z: keep.iter().map(|&i| z[i]).collect(),
    };
    if out.cols.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rank column".into()));
    }
    if out.z.len() < 2 {
        return Err(Error::TooFewTrials { got: out.z.len(), need: 2 });
    }
    let m = out.z.iter().filter(|b| **b).count();
    if m < 2 {
        return Err(Error::GoalTooSmall { got: m, need: 2 });
    }
    Ok(out)
}

fn build_engine(p: &Prepared, opts: &HsicOptions) -> Engine {
    if p.cols.len() == 1 && p.z.len() > opts.exact_limit {
        Engine::Binned(Binned::new(p.cols[0].clone(), p.z.clone(), opts.bins.max(16)))
    } else {
        Engine::Exact(Exact::new(&p.cols, &p.z))
    }
}

fn pooled_points(p: &Prepared) -> Vec<Vec<f64>> {
    let n = p.z.len();
    let row = |i: usize| p.cols.iter().map(|c| c[i]).collect::<Vec<f64>>();
    (0..n).map(row).chain((0..n).filter(|&i| p.z[i]).map(row)).collect()
}

struct Selected {
    kernel: Kernel,
    value: f64,
    degenerate: bool,
}

fn select_goal_bandwidth(engine: &Engine, p: &Prepared, opts: &HsicOptions) -> Result<Selected> {
    let dim = p.cols.len();
    let (grid, mut degenerate) = bandwidth_grid(&pooled_points(p), opts);
    degenerate |= p.cols.iter().all(|c| c.iter().all(|x| *x == c[0]));
    if degenerate {
        log::warn!("all samples identical; bandwidth selection is uninformative");
    }
    let n = p.z.len() as f64;
    let m = p.z.iter().filter(|b| **b).count() as f64;
    let mut best: Option<(f64, f64)> = None;
    match engine {
        Engine::Exact(e) => {
            for &h in &grid {
                let v = statistic(e.sums(&Kernel::isotropic(h, dim)?), n, m);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((h, v));
                }
            }
        }
        Engine::Binned(b) => {
            let (a, g) = b.bin(None);
            let (sa, sg) = (b.spectrum(&a), b.spectrum(&g));
            for &h in &grid {
                let ks = b.kernel_spectrum(h);
                let ka = b.convolve(&sa, &ks);
                let kg = b.convolve(&sg, &ks);
                let s = Sums {
                    all: a.iter().zip(&ka).map(|(x, y)| x * y).sum(),
                    cross: g.iter().zip(&ka).map(|(x, y)| x * y).sum(),
                    goal: g.iter().zip(&kg).map(|(x, y)| x * y).sum(),
                };
                let v = statistic(s, n, m);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((h, v));
                }
            }
        }
    }
    let (h, v) = best.expect("non-empty grid");
    Ok(Selected { kernel: Kernel::isotropic(h, dim)?, value: v, degenerate })
}

fn bootstrap(engine: &Engine, kernel: &Kernel, n_boot: usize, seed: u64) -> f64 {
    let n = engine.n();
    let mut rng = rng::stream(seed);
    let mut reps = Vec::with_capacity(n_boot);
    let mut w = vec![0.0; n];
    let draw = |w: &mut Vec<f64>, rng: &mut rng::Stream| {
        w.fill(0.0);
        for _ in 0..n {
            w[rng.gen_range(0..n)] += 1.0;
        }
    };
    match engine {
        Engine::Exact(e) => {
            let (ends, k) = e.cache(kernel);
            for _ in 0..n_boot {
                draw(&mut w, &mut rng);
                let (s, nb, mb) = e.weighted_sums(&ends, &k, &w);
                if mb > 0.0 {
                    reps.push(statistic(s, nb, mb));
                }
            }
        }
        Engine::Binned(b) => {
            let ks = b.kernel_spectrum(kernel.bandwidths[0]);
            for _ in 0..n_boot {
                draw(&mut w, &mut rng);
                let mb: f64 = w.iter().zip(&b.goal).filter(|(_, z)| **z).map(|(x, _)| x).sum();
                if mb > 0.0 {
                    let (a, g) = b.bin(Some(&w));
                    reps.push(statistic(b.sums_from(&a, &g, &ks), n as f64, mb));
                }
            }
        }
    }
    std_dev(&reps)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
    var.sqrt()
}

fn score(cols: &[&[f64]], z: &[bool], mask: Option<&[bool]>, opts: &HsicOptions, with_se: bool) -> Result<HsicScore> {
    let p = prepare(cols, z, mask)?;
    let engine = build_engine(&p, opts);
    let sel = select_goal_bandwidth(&engine, &p, opts)?;
    let std_error = if with_se { bootstrap(&engine, &sel.kernel, opts.n_boot, opts.seed) } else { 0.0 };
    Ok(HsicScore {
        value: sel.value,
        std_error,
        n_total: p.z.len(),
        n_goal: p.z.iter().filter(|b| **b).count(),
        bandwidth: sel.kernel,
        degenerate: sel.degenerate,
    })
}

/// Goal-oriented HSIC of one rank column with bootstrap standard error.
/// Rows where `mask` is false are discarded.
pub fn hsic_goal(u: &[f64], z: &[bool], mask: Option<&[bool]>, opts: &HsicOptions) -> Result<HsicScore> {
    score(&[u], z, mask, opts, true)
}

/// Same as `hsic_goal` without the bootstrap; `std_error` is zero.
pub fn hsic_goal_value(u: &[f64], z: &[bool], mask: Option<&[bool]>, opts: &HsicOptions) -> Result<HsicScore> {
    score(&[u], z, mask, opts, false)
}

/// Joint score of two rank columns under the product kernel.
pub fn hsic_pair(ui: &[f64], uj: &[f64], z: &[bool], mask: Option<&[bool]>, opts: &HsicOptions) -> Result<HsicScore> {
    score(&[ui, uj], z, mask, opts, true)
}

/// Goal statistic at a fixed kernel, for any number of columns.
pub fn hsic_goal_at(cols: &[&[f64]], z: &[bool], mask: Option<&[bool]>, kernel: &Kernel, opts: &HsicOptions) -> Result<f64> {
    let p = prepare(cols, z, mask)?;
    if kernel.dim() != p.cols.len() {
        return Err(Error::DimensionMismatch { expected: p.cols.len(), got: kernel.dim() });
    }
    let n = p.z.len() as f64;
    let m = p.z.iter().filter(|b| **b).count() as f64;
    Ok(match build_engine(&p, opts) {
        Engine::Exact(e) => statistic(e.sums(kernel), n, m),
        Engine::Binned(b) => {
            let (a, g) = b.bin(None);
            statistic(b.sums_from(&a, &g, &b.kernel_spectrum(kernel.bandwidths[0])), n, m)
        }
    })
}

/// Standard deviation of the goal statistic over `n_boot` resamples of the
/// rows with replacement, at a fixed kernel.
pub fn bootstrap_se(cols: &[&[f64]], z: &[bool], mask: Option<&[bool]>, kernel: &Kernel, opts: &HsicOptions) -> Result<f64> {
    if opts.n_boot < 2 {
        return Err(Error::InvalidArgument("n_boot must be at least 2".into()));
    }
    let p = prepare(cols, z, mask)?;
    if kernel.dim() != p.cols.len() {
        return Err(Error::DimensionMismatch { expected: p.cols.len(), got: kernel.dim() });
    }
    Ok(bootstrap(&build_engine(&p, opts), kernel, opts.n_boot, opts.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = -(i as f64) * 0.0035;
            let rel = ((exp_neg(x) - x.exp()) / x.exp()).abs();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-14, "{worst}");
        assert_eq!(exp_neg(0.0), 1.0);
    }

    #[test]
    fn kernel_examples() {
        let k = Kernel::isotropic(1.0, 1).unwrap();
        assert_eq!(rbf_kernel(&[0.0], &[0.0], &k).unwrap(), 1.0);
        assert!((rbf_kernel(&[0.0], &[1.0], &k).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        let k2 = Kernel::isotropic(1.0, 2).unwrap();
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], &k2).is_err());
        assert!(Kernel::new(vec![0.0]).is_err());
    }

    #[test]
    fn mmd_examples() {
        let k = Kernel::isotropic(1.0, 1).unwrap();
        let xs = pts(&[0.1, 0.4, 0.9]);
        assert_eq!(mmd2(&xs, &xs, &k).unwrap(), 0.0);
        let v = mmd2(&pts(&[0.0]), &pts(&[1.0]), &k).unwrap();
        assert!((v - 0.786_938_680_574_733_2).abs() < 1e-12);
        assert!(matches!(mmd2(&[], &xs, &k), Err(Error::EmptySample)));
    }

    #[test]
    fn identical_samples_pick_the_smallest_bandwidth() {
        let xs = pts(&[0.1, 0.3, 0.7, 0.8]);
        let opts = HsicOptions::default();
        let c = select_bandwidth(&xs, &xs, &opts).unwrap();
        let (grid, _) = bandwidth_grid(&xs.iter().chain(&xs).cloned().collect::<Vec<_>>(), &opts);
        assert_eq!(c.kernel.bandwidths[0], grid[0]);
        assert!(!c.degenerate);
        let same = pts(&[0.5; 6]);
        let d = select_bandwidth(&same, &same, &opts).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.kernel.bandwidths[0], opts.grid_lo);
    }

    #[test]
    fn point_masses_select_the_largest_criterion() {
        let xs = pts(&[0.0, 0.0, 0.0]);
        let ys = pts(&[1.0, 1.0]);
        let opts = HsicOptions::default();
        let c = select_bandwidth(&xs, &ys, &opts).unwrap();
        // mmd2 = 2 (1 - exp(-1/(2h^2))) is increasing as h shrinks, so the
        // smallest grid value wins.
        let (grid, _) = bandwidth_grid(&[xs.clone(), ys.clone()].concat(), &opts);
        assert_eq!(c.kernel.bandwidths[0], grid[0]);
        let h = grid[0];
        assert!((c.mmd2 - 2.0 * (1.0 - (-0.5 / (h * h)).exp())).abs() < 1e-12);
    }

    #[test]
    fn goal_equal_to_population_scores_zero() {
        let u: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let z = vec![true; 50];
        let s = hsic_goal(&u, &z, None, &HsicOptions::default()).unwrap();
        assert!(s.value.abs() < 1e-12, "{}", s.value);
    }

    #[test]
    fn separated_goal_scores_high() {
        let u: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let z: Vec<bool> = u.iter().map(|x| *x < 0.5).collect();
        let s = hsic_goal(&u, &z, None, &HsicOptions::default()).unwrap();
        assert!(s.value > 0.05, "{}", s.value);
        let zr: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let r = hsic_goal(&u, &zr, None, &HsicOptions::default()).unwrap();
        assert!(s.value > 10.0 * r.value);
    }

    #[test]
    fn too_few_goal_rows_is_an_error() {
        let u = vec![0.1, 0.2, 0.3];
        let z = vec![true, false, false];
        assert!(matches!(hsic_goal(&u, &z, None, &HsicOptions::default()), Err(Error::GoalTooSmall { .. })));
        let nan = vec![0.1, f64::NAN, 0.3];
        assert!(matches!(hsic_goal(&nan, &[true, true, false], None, &HsicOptions::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn mask_discards_rows() {
        let u = vec![0.1, 0.2, 0.3, 0.9, 0.95];
        let z = vec![true, true, false, false, true];
        let mask = vec![true, true, true, true, false];
        let a = hsic_goal(&u, &z, Some(&mask), &HsicOptions::default()).unwrap();
        let b = hsic_goal(&u[..4], &z[..4], None, &HsicOptions::default()).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.n_total, 4);
    }

    #[test]
    fn constant_column_has_zero_spread() {
        let u = vec![0.5; 40];
        let z: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let s = hsic_goal(&u, &z, None, &HsicOptions::default()).unwrap();
        assert!(s.value.abs() < 1e-15);
        assert_eq!(s.std_error, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn binned_engine_tracks_the_exact_one() {
        let mut r = rng::stream(5);
        let u: Vec<f64> = (0..3000).map(|_| r.gen::<f64>()).collect();
        let z: Vec<bool> = u.iter().map(|x| *x < 0.3 || r.gen::<f64>() < 0.1).collect();
        let exact = HsicOptions { n_boot: 10, ..HsicOptions::default() };
        let binned = HsicOptions { exact_limit: 100, ..exact.clone() };
        let k = Kernel::isotropic(0.1, 1).unwrap();
        let a = hsic_goal_at(&[&u], &z, None, &k, &exact).unwrap();
        let b = hsic_goal_at(&[&u], &z, None, &k, &binned).unwrap();
        assert!((a - b).abs() < 1e-4 * a, "{a} {b}");
        let sa = hsic_goal(&u, &z, None, &exact).unwrap();
        let sb = hsic_goal(&u, &z, None, &binned).unwrap();
        assert!((sa.value - sb.value).abs() < 0.02 * sa.value, "{} {}", sa.value, sb.value);
    }
}
