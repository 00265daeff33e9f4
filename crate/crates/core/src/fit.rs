//! Two-component models of a 1-D score sample.
//!
//! Three estimators are provided:
//!
//! - [`fit_kmeans2`]: Lloyd iteration for two centroids, no spreads.
//! - [`fit_gmm2`]: EM for a two-component Gaussian mixture, seeded by Kmeans.
//! - [`fit_ude`]: unilateral density estimation. A single Gaussian fitted to
//!   known-IND validation scores splits the test sample at its lower
//!   `tau`-crossing; each side then gets its own Gaussian.
//!
//! Every fit is normalized so the IND component is the one with the larger
//! mean. Collapsed fits (identical components, empty subsets) carry a
//! `degenerate` flag and produce a separability of zero downstream.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::score::{Label, ScoreSet};

/// Lower bound on every fitted standard deviation, in score units.
pub const SIGMA_FLOOR: f64 = 1e-6;

pub const KMEANS_MAX_ITER: usize = 300;
pub const EM_DEFAULT_TOL: f64 = 1e-8;
pub const EM_DEFAULT_MAX_ITER: usize = 200;

/// Suggested number of validation samples for [`fit_val_gaussian`].
pub const DEFAULT_VAL_SIZE: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    /// Floors `sigma` at [`SIGMA_FLOOR`].
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid Gaussian parameters mu={mu} sigma={sigma}"
            )));
        }
        Ok(Self {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
        })
    }

    /// Sample mean and (n-1) standard deviation, floored.
    fn estimate(xs: &[f64]) -> Self {
        let mu = mean(xs);
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mu,
            sigma: sd.max(SIGMA_FLOOR),
        }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    Kmeans,
    Gmm,
    Ude,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Kmeans => "kmeans",
            FitMethod::Gmm => "gmm",
            FitMethod::Ude => "ude",
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(FitMethod::Kmeans),
            "gmm" => Ok(FitMethod::Gmm),
            "ude" => Ok(FitMethod::Ude),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// One side of a fit. Kmeans centroids have no spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mu: f64,
    pub sigma: Option<f64>,
}

impl From<GaussianParams> for Component {
    fn from(g: GaussianParams) -> Self {
        Component {
            mu: g.mu,
            sigma: Some(g.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoComponentFit {
    pub method: FitMethod,
    pub ind: Component,
    pub ood: Component,
    pub weight_ind: f64,
    pub degenerate: bool,
    /// Set when a hard split left one side without samples.
    pub empty_subset: Option<Label>,
}

impl TwoComponentFit {
    fn normalized(mut self) -> Self {
        if self.ind.mu < self.ood.mu {
            std::mem::swap(&mut self.ind, &mut self.ood);
            self.weight_ind = 1.0 - self.weight_ind;
        }
        self
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolated percentile of sorted data, `q` in [0,1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Within-cluster sum of squares for a two-centroid assignment.
pub fn kmeans_sse(scores: &[f64], lo: f64, hi: f64) -> f64 {
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for &x in scores {
        if (x - hi).abs() < (x - lo).abs() {
            b.push(x)
        } else {
            a.push(x)
        }
    }
    segment_sse(&a) + segment_sse(&b)
}

fn segment_sse(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Lloyd's algorithm with SSE recorded after every centroid update.
#[derive(Debug, Clone)]
pub struct KmeansTrace {
    pub fit: TwoComponentFit,
    pub sse: Vec<f64>,
    pub iterations: usize,
}

fn initial_centroids(sorted: &[f64], seed: u64) -> (f64, f64) {
    let lo = percentile(sorted, 0.1);
    let hi = percentile(sorted, 0.9);
    if lo < hi {
        return (lo, hi);
    }
    // Heavily tied data: the upper centroid goes to a random distinct value.
    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    distinct.retain(|&v| v != lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let other = distinct[rng.random_range(0..distinct.len())];
    (lo.min(other), lo.max(other))
}

/// Exact 1-D two-means optimum via a scan over contiguous sorted splits.
fn best_sorted_split(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let shift = sorted[n / 2];
    let mut prefix = Vec::with_capacity(n + 1);
    let mut prefix_sq = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    prefix_sq.push(0.0);
    for &x in sorted {
        let y = x - shift;
        prefix.push(prefix.last().unwrap() + y);
        prefix_sq.push(prefix_sq.last().unwrap() + y * y);
    }
    let seg = |a: usize, b: usize| {
        let s = prefix[b] - prefix[a];
        prefix_sq[b] - prefix_sq[a] - s * s / (b - a) as f64
    };
    let k = (1..n)
        .min_by(|&i, &j| (seg(0, i) + seg(i, n)).total_cmp(&(seg(0, j) + seg(j, n))))
        .expect("n >= 2");
    (mean(&sorted[..k]), mean(&sorted[k..]))
}

pub fn fit_kmeans2_traced(scores: &[f64], seed: u64) -> Result<KmeansTrace> {
    if scores.len() < 2 {
        return Err(Error::InvalidInput(
            "kmeans needs at least 2 samples".into(),
        ));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        let c = sorted[0];
        return Ok(KmeansTrace {
            fit: TwoComponentFit {
                method: FitMethod::Kmeans,
                ind: Component { mu: c, sigma: None },
                ood: Component { mu: c, sigma: None },
                weight_ind: 0.5,
                degenerate: true,
                empty_subset: None,
            },
            sse: vec![0.0],
            iterations: 0,
        });
    }

    let (mut lo, mut hi) = initial_centroids(&sorted, seed);
    // The split point between clusters is the midpoint; points at the
    // midpoint go to the lower centroid. With sorted data the assignment is
    // fully described by the count of points in the lower cluster.
    let count_lower =
        |lo: f64, hi: f64| sorted.partition_point(|&x| (x - hi).abs() >= (x - lo).abs());
    let mut split = count_lower(lo, hi);
    let mut sse = Vec::new();
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        lo = mean(&sorted[..split]);
        hi = mean(&sorted[split..]);
        sse.push(segment_sse(&sorted[..split]) + segment_sse(&sorted[split..]));
        let next = count_lower(lo, hi);
        if next == split {
            break;
        }
        split = next;
    }

    // Lloyd can stall in a local optimum; the contiguous-split scan cannot.
    let (opt_lo, opt_hi) = best_sorted_split(&sorted);
    let opt_sse = kmeans_sse(&sorted, opt_lo, opt_hi);
    if opt_sse < *sse.last().unwrap() {
        lo = opt_lo;
        hi = opt_hi;
        sse.push(opt_sse);
    }

    let n_hi = sorted
        .iter()
        .filter(|&&x| (x - hi).abs() < (x - lo).abs())
        .count();
    Ok(KmeansTrace {
        fit: TwoComponentFit {
            method: FitMethod::Kmeans,
            ind: Component {
                mu: hi,
                sigma: None,
            },
            ood: Component {
                mu: lo,
                sigma: None,
            },
            weight_ind: n_hi as f64 / sorted.len() as f64,
            degenerate: false,
            empty_subset: None,
        }
        .normalized(),
        sse,
        iterations,
    })
}

/// Two centroids by Lloyd iteration, initialized at the 10th and 90th
/// percentiles. `seed` only matters when those percentiles coincide.
pub fn fit_kmeans2(scores: &ScoreSet, seed: u64) -> Result<TwoComponentFit> {
    fit_kmeans2_traced(scores.scores(), seed).map(|t| t.fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Stop once the relative log-likelihood gain drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: EM_DEFAULT_TOL,
            max_iter: EM_DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmTrace {
    pub fit: TwoComponentFit,
    /// Log-likelihood of the initial parameters, then after each M-step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Mixture {
    w: [f64; 2],
    comp: [GaussianParams; 2],
}

impl Mixture {
    /// Log-likelihood and per-sample responsibility of component 1.
    fn e_step(&self, xs: &[f64], resp: &mut [f64]) -> f64 {
        let lw = [self.w[0].ln(), self.w[1].ln()];
        let mut ll = 0.0;
        for (x, r) in xs.iter().zip(resp.iter_mut()) {
            let a = lw[0] + self.comp[0].ln_pdf(*x);
            let b = lw[1] + self.comp[1].ln_pdf(*x);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            ll += lse;
            *r = (b - lse).exp();
        }
        ll
    }

    fn m_step(&self, xs: &[f64], resp: &[f64]) -> Mixture {
        let n = xs.len() as f64;
        let mut next = *self;
        for k in 0..2 {
            let weight = |r: f64| if k == 1 { r } else { 1.0 - r };
            let nk: f64 = resp.iter().map(|&r| weight(r)).sum();
            next.w[k] = nk / n;
            if nk <= 0.0 {
                continue;
            }
            let mu = xs
                .iter()
                .zip(resp)
                .map(|(x, &r)| weight(r) * x)
                .sum::<f64>()
                / nk;
            let var = xs
                .iter()
                .zip(resp)
                .map(|(x, &r)| weight(r) * (x - mu) * (x - mu))
                .sum::<f64>()
                / nk;
            next.comp[k] = GaussianParams {
                mu,
                sigma: var.max(SIGMA_FLOOR * SIGMA_FLOOR).sqrt(),
            };
        }
        next
    }

    fn to_fit(self) -> TwoComponentFit {
        let collapsed = self.w[0] <= 0.0
            || self.w[1] <= 0.0
            || (self.comp[0].mu == self.comp[1].mu && self.comp[0].sigma == self.comp[1].sigma);
        TwoComponentFit {
            method: FitMethod::Gmm,
            ind: self.comp[1].into(),
            ood: self.comp[0].into(),
            weight_ind: self.w[1],
            degenerate: collapsed,
            empty_subset: None,
        }
        .normalized()
    }
}

fn kmeans_seeded_mixture(xs: &[f64], seed: u64) -> Result<(Mixture, bool)> {
    let km = fit_kmeans2_traced(xs, seed)?.fit;
    let (lo, hi) = (km.ood.mu, km.ind.mu);
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for &x in xs {
        if (x - hi).abs() < (x - lo).abs() {
            b.push(x)
        } else {
            a.push(x)
        }
    }
    let pop_sd = |v: &[f64]| {
        if v.is_empty() {
            return SIGMA_FLOOR;
        }
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
            .sqrt()
            .max(SIGMA_FLOOR)
    };
    let n = xs.len() as f64;
    let mix = Mixture {
        w: if km.degenerate {
            [0.5, 0.5]
        } else {
            [a.len() as f64 / n, b.len() as f64 / n]
        },
        comp: [
            GaussianParams {
                mu: lo,
                sigma: pop_sd(&a),
            },
            GaussianParams {
                mu: hi,
                sigma: pop_sd(&b),
            },
        ],
    };
    Ok((mix, km.degenerate))
}

pub fn fit_gmm2_traced(scores: &[f64], seed: u64, opts: EmOptions) -> Result<EmTrace> {
    if scores.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "gmm needs at least 4 samples, got {}",
            scores.len()
        )));
    }
    let (mut mix, degenerate) = kmeans_seeded_mixture(scores, seed)?;
    if degenerate {
        let mut fit = mix.to_fit();
        fit.degenerate = true;
        return Ok(EmTrace {
            fit,
            log_likelihood: Vec::new(),
        });
    }
    let mut resp = vec![0.0; scores.len()];
    let mut ll = mix.e_step(scores, &mut resp);
    let mut trace = vec![ll];
    for _ in 0..opts.max_iter {
        let next = mix.m_step(scores, &resp);
        let ll_next = next.e_step(scores, &mut resp);
        trace.push(ll_next);
        mix = next;
        let gain = if ll != 0.0 {
            (ll_next - ll) / ll.abs()
        } else {
            ll_next - ll
        };
        if gain < opts.tol {
            break;
        }
        ll = ll_next;
    }
    Ok(EmTrace {
        fit: mix.to_fit(),
        log_likelihood: trace,
    })
}

/// EM for a two-component 1-D Gaussian mixture.
pub fn fit_gmm2(
    scores: &ScoreSet,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<TwoComponentFit> {
    fit_gmm2_traced(scores.scores(), seed, EmOptions { tol, max_iter }).map(|t| t.fit)
}

/// Fits both sides of a hard split with their own Gaussians.
fn split_fit(
    method: FitMethod,
    scores: &[f64],
    is_ind: &[bool],
    ind_fallback: GaussianParams,
) -> TwoComponentFit {
    let mut ind = Vec::new();
    let mut ood = Vec::new();
    for (&x, &flag) in scores.iter().zip(is_ind) {
        if flag {
            ind.push(x)
        } else {
            ood.push(x)
        }
    }
    let weight_ind = ind.len() as f64 / scores.len() as f64;
    let (ind_p, ood_p, empty) = match (ind.is_empty(), ood.is_empty()) {
        (false, false) => (
            GaussianParams::estimate(&ind),
            GaussianParams::estimate(&ood),
            None,
        ),
        (true, _) => (
            ind_fallback,
            GaussianParams::estimate(scores),
            Some(Label::Ind),
        ),
        (false, true) => (
            GaussianParams::estimate(&ind),
            GaussianParams::estimate(scores),
            Some(Label::Ood),
        ),
    };
    TwoComponentFit {
        method,
        ind: ind_p.into(),
        ood: ood_p.into(),
        weight_ind,
        degenerate: empty.is_some(),
        empty_subset: empty,
    }
}

/// GMM followed by a hard split on the IND-component posterior: samples with
/// responsibility at least `tau` form the IND subset.
pub fn fit_gmm2_split(
    scores: &ScoreSet,
    seed: u64,
    tau: f64,
    opts: EmOptions,
) -> Result<TwoComponentFit> {
    check_tau(tau)?;
    let gmm = fit_gmm2_traced(scores.scores(), seed, opts)?.fit;
    gmm_split(scores.scores(), &gmm, tau)
}

/// Hard split of `scores` under an already fitted mixture.
pub fn gmm_split(scores: &[f64], gmm: &TwoComponentFit, tau: f64) -> Result<TwoComponentFit> {
    check_tau(tau)?;
    if gmm.degenerate {
        return Ok(gmm.clone());
    }
    let (Some(s_ind), Some(s_ood)) = (gmm.ind.sigma, gmm.ood.sigma) else {
        return Err(Error::InvalidInput(
            "gmm split needs a fit with spreads".into(),
        ));
    };
    let mix = Mixture {
        w: [1.0 - gmm.weight_ind, gmm.weight_ind],
        comp: [
            GaussianParams {
                mu: gmm.ood.mu,
                sigma: s_ood,
            },
            GaussianParams {
                mu: gmm.ind.mu,
                sigma: s_ind,
            },
        ],
    };
    let mut resp = vec![0.0; scores.len()];
    mix.e_step(scores, &mut resp);
    let flags: Vec<bool> = resp.iter().map(|&r| r >= tau).collect();
    let fit = split_fit(FitMethod::Gmm, scores, &flags, mix.comp[1]);
    Ok(if fit.degenerate {
        fit
    } else {
        fit.normalized()
    })
}

/// Single Gaussian over validation IND scores.
pub fn fit_val_gaussian(val_scores: &ScoreSet) -> Result<GaussianParams> {
    if val_scores.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "validation set needs at least 2 samples, got {}",
            val_scores.len()
        )));
    }
    Ok(GaussianParams::estimate(val_scores.scores()))
}

/// Unnormalized validation density, `exp(-(x - mu)^2 / (2 sigma^2))`.
pub fn ude_membership(x: f64, val: &GaussianParams) -> f64 {
    let d = x - val.mu;
    (-(d * d) / (2.0 * val.sigma * val.sigma)).exp()
}

/// Score below which no sample is assigned to the IND subset.
pub fn ude_lower_bound(val: &GaussianParams, tau: f64) -> f64 {
    val.mu - val.sigma * (2.0 * (1.0 / tau).ln()).sqrt()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "tau must be in (0,1), got {tau}"
        )))
    }
}

/// Splits the sample at the lower `tau`-crossing of the validation density:
/// everything at or above the validation mean, and everything below it with
/// membership at least `tau`, is IND.
pub fn fit_ude(scores: &ScoreSet, val: &GaussianParams, tau: f64) -> Result<TwoComponentFit> {
    check_tau(tau)?;
    let flags: Vec<bool> = scores
        .scores()
        .iter()
        .map(|&x| x >= val.mu || ude_membership(x, val) >= tau)
        .collect();
    let fit = split_fit(FitMethod::Ude, scores.scores(), &flags, *val);
    Ok(if fit.degenerate {
        fit
    } else {
        fit.normalized()
    })
}
