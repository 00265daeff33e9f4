//! Synthetic meta-suites with known ground truth.
//!
//! Each synthetic set has a fixed IND component (shared by the whole suite,
//! like a detector's training distribution) and an OOD component whose gap
//! to IND is chosen so that the set's AUROC lands near a target. For
//! Gaussian components with spreads `s_i`, `s_o` and mean gap `g`,
//! `AUROC = Phi(g / sqrt(s_i^2 + s_o^2))`, so the gap for a target `a` is
//! `Phi^-1(a) * sqrt(s_i^2 + s_o^2)`. The logistic squashing of the
//! `LogitNormal` family is monotone and leaves AUROC unchanged.
//!
//! Per-set seeds come from the suite seed through [`derive_seed`], so the
//! suite is a pure function of its [`SuiteSpec`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::regress::MetaSuite;
use crate::score::{Label, ScoreSet};

/// Gap, in units of the combined spread, used for a target AUROC of exactly 1.
pub const MAX_SEPARATION_Z: f64 = 9.0;
/// Targets below 1 are capped here.
pub const MAX_TARGET_AUROC: f64 = 0.999;

const STREAM_PLAN: u64 = 0x5eed_0001;
const STREAM_VAL: u64 = 0x5eed_0002;
const STREAM_SAMPLE: u64 = 0x5eed_0003;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream`: `splitmix64(splitmix64(base ^ stream) ^ index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ stream) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    /// Gaussian draws passed through the logistic function; scores in (0,1).
    LogitNormal,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::LogitNormal => "logit_normal",
        }
    }

    fn transform(self, x: f64) -> f64 {
        match self {
            Family::Gaussian => x,
            Family::LogitNormal => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "logit_normal" | "logit-normal" => Ok(Family::LogitNormal),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Generative parameters of one labeled set. For `LogitNormal` the means
/// and spreads are in pre-squash (logit) units.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub id: String,
    pub family: Family,
    pub mu_ind: f64,
    pub sigma_ind: f64,
    pub mu_ood: f64,
    pub sigma_ood: f64,
    pub n_ind: usize,
    pub n_ood: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_ind, self.sigma_ind, self.mu_ood, self.sigma_ood]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.sigma_ind <= 0.0 || self.sigma_ood <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "spec '{}': means must be finite and sigmas positive",
                self.id
            )));
        }
        if self.n_ind == 0 || self.n_ood == 0 {
            return Err(Error::InvalidInput(format!(
                "spec '{}': counts must be at least 1",
                self.id
            )));
        }
        Ok(())
    }

    /// Closed-form AUROC of the two generating components.
    pub fn analytic_auroc(&self) -> f64 {
        let z = (self.mu_ind - self.mu_ood) / self.sigma_ind.hypot(self.sigma_ood);
        std_normal().cdf(z)
    }
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("valid")
}

fn draws(rng: &mut ChaCha8Rng, family: Family, mu: f64, sigma: f64, n: usize) -> Vec<f64> {
    let d = Normal::new(mu, sigma).expect("validated");
    (0..n).map(|_| family.transform(d.sample(rng))).collect()
}

/// Draws `n_ind` IND then `n_ood` OOD samples.
pub fn gen_score_set(spec: &SynthSpec) -> Result<ScoreSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ind = draws(
        &mut rng,
        spec.family,
        spec.mu_ind,
        spec.sigma_ind,
        spec.n_ind,
    );
    let ood = draws(
        &mut rng,
        spec.family,
        spec.mu_ood,
        spec.sigma_ood,
        spec.n_ood,
    );
    ScoreSet::from_parts(spec.id.clone(), &ind, &ood)
}

/// How per-set sample counts are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeMode {
    /// `n_ind = n_ood`, uniform in `[size_min, size_max]`.
    Balanced,
    /// `n_ind` and `n_ood` independently uniform in `[size_min, size_max]`.
    Independent,
}

/// Parameters of a whole train/test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub seed: u64,
    pub family: Family,
    pub n_train: usize,
    pub n_test: usize,
    /// Target AUROC interval, within (0.5, 1].
    pub auroc_span: (f64, f64),
    pub mu_ind: f64,
    pub sigma_ind: f64,
    /// OOD spreads are drawn uniformly from this range.
    pub sigma_ood_range: (f64, f64),
    pub size_mode: SizeMode,
    pub size_range: (usize, usize),
    pub val_size: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            family: Family::LogitNormal,
            n_train: 150,
            n_test: 50,
            auroc_span: (0.55, 1.0),
            mu_ind: 0.5,
            sigma_ind: 1.5,
            sigma_ood_range: (1.2, 1.8),
            size_mode: SizeMode::Balanced,
            size_range: (800, 1200),
            val_size: crate::fit::DEFAULT_VAL_SIZE,
        }
    }
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.auroc_span;
        if !(lo > 0.5 && lo <= hi && hi <= 1.0) {
            return Err(Error::Generation(format!(
                "AUROC span [{lo}, {hi}] must satisfy 0.5 < lo <= hi <= 1"
            )));
        }
        let (smin, smax) = self.sigma_ood_range;
        if !(smin > 0.0 && smin <= smax && smax.is_finite()) {
            return Err(Error::Generation(format!(
                "bad OOD sigma range [{smin}, {smax}]"
            )));
        }
        if !(self.sigma_ind > 0.0 && self.mu_ind.is_finite() && self.sigma_ind.is_finite()) {
            return Err(Error::Generation("bad IND component".into()));
        }
        let (nmin, nmax) = self.size_range;
        if nmin == 0 || nmin > nmax {
            return Err(Error::Generation(format!(
                "bad size range [{nmin}, {nmax}]"
            )));
        }
        if self.n_train == 0 {
            return Err(Error::Generation("need at least one training set".into()));
        }
        if self.val_size < 2 {
            return Err(Error::Generation(
                "validation size must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Per-set specs in order: all training sets, then all test sets.
    pub fn plan(&self) -> Result<Vec<(SynthSpec, Split)>> {
        self.validate()?;
        let (lo, hi) = self.auroc_span;
        let phi = std_normal();
        let mut out = Vec::with_capacity(self.n_train + self.n_test);
        let splits = [(Split::Train, self.n_train), (Split::Test, self.n_test)];
        let mut global = 0u64;
        for (split, count) in splits {
            for i in 0..count {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_PLAN, global));
                // Stratified targets: one per equal-width bin of the span.
                let target = lo + (hi - lo) * (i as f64 + rng.random::<f64>()) / count as f64;
                let z = if target >= 1.0 {
                    MAX_SEPARATION_Z
                } else {
                    phi.inverse_cdf(target.min(MAX_TARGET_AUROC))
                };
                let sigma_ood = rng.random_range(self.sigma_ood_range.0..=self.sigma_ood_range.1);
                let gap = z * self.sigma_ind.hypot(sigma_ood);
                let (nmin, nmax) = self.size_range;
                let (n_ind, n_ood) = match self.size_mode {
                    SizeMode::Balanced => {
                        let n = rng.random_range(nmin..=nmax);
                        (n, n)
                    }
                    SizeMode::Independent => {
                        (rng.random_range(nmin..=nmax), rng.random_range(nmin..=nmax))
                    }
                };
                out.push((
                    SynthSpec {
                        id: format!("{}-{:04}", split.as_str(), i),
                        family: self.family,
                        mu_ind: self.mu_ind,
                        sigma_ind: self.sigma_ind,
                        mu_ood: self.mu_ind - gap,
                        sigma_ood,
                        n_ind,
                        n_ood,
                        seed: derive_seed(self.seed, STREAM_SAMPLE, global),
                    },
                    split,
                ));
                global += 1;
            }
        }
        Ok(out)
    }

    /// Known-IND validation scores drawn from the shared IND component.
    pub fn gen_val(&self) -> Result<ScoreSet> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_VAL, 0));
        let xs = draws(
            &mut rng,
            self.family,
            self.mu_ind,
            self.sigma_ind,
            self.val_size,
        );
        ScoreSet::from_parts("val", &xs, &[])
    }
}

/// Realizes a plan into (train, test) suites.
pub fn gen_suite_from_plan(plan: &[(SynthSpec, Split)]) -> Result<(MetaSuite, MetaSuite)> {
    use rayon::prelude::*;
    let sets: Vec<(ScoreSet, Split)> = plan
        .par_iter()
        .map(|(spec, split)| gen_score_set(spec).map(|s| (s, *split)))
        .collect::<Result<_>>()?;
    let (train, test): (Vec<_>, Vec<_>) = sets.into_iter().partition(|(_, s)| *s == Split::Train);
    Ok((
        MetaSuite::new(train.into_iter().map(|p| p.0).collect())?,
        MetaSuite::new(test.into_iter().map(|p| p.0).collect())?,
    ))
}

pub fn gen_suite(spec: &SuiteSpec) -> Result<(MetaSuite, MetaSuite)> {
    gen_suite_from_plan(&spec.plan()?)
}

/// IND:OOD ratio such as 1:100.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub ind: u32,
    pub ood: u32,
}

impl Ratio {
    pub fn new(ind: u32, ood: u32) -> Result<Self> {
        if ind == 0 || ood == 0 {
            return Err(Error::InvalidInput(format!(
                "ratio {ind}:{ood} must be positive"
            )));
        }
        Ok(Self { ind, ood })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ind, self.ood)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("ratio must look like 1:10, got '{s}'"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Ratio::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }
}

fn pick(rng: &mut ChaCha8Rng, from: &[usize], k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = sample(rng, from.len(), k)
        .into_iter()
        .map(|i| from[i])
        .collect();
    chosen.sort_unstable();
    chosen
}

fn class_indices(set: &ScoreSet) -> Result<(Vec<usize>, Vec<usize>)> {
    let labels = set
        .labels()
        .ok_or_else(|| Error::InvalidInput(format!("set '{}' is unlabeled", set.id())))?;
    let ind = (0..labels.len())
        .filter(|&i| labels[i] == Label::Ind)
        .collect();
    let ood = (0..labels.len())
        .filter(|&i| labels[i] == Label::Ood)
        .collect();
    Ok((ind, ood))
}

fn keep(set: &ScoreSet, rng: &mut ChaCha8Rng, n_ind: usize, n_ood: usize) -> Result<ScoreSet> {
    let (ind, ood) = class_indices(set)?;
    if n_ind > ind.len() || n_ood > ood.len() {
        return Err(Error::InvalidInput(format!(
            "set '{}' has {}/{} samples, asked for {n_ind}/{n_ood}",
            set.id(),
            ind.len(),
            ood.len()
        )));
    }
    let mut idx = pick(rng, &ind, n_ind);
    idx.extend(pick(rng, &ood, n_ood));
    idx.sort_unstable();
    set.select(&idx)
}

/// Down-samples the majority side to reach `ratio`; the minority side keeps
/// every sample. Each side keeps at least one sample.
pub fn downsample_ratio(set: &ScoreSet, ratio: Ratio, seed: u64) -> Result<ScoreSet> {
    let (ind, ood) = class_indices(set)?;
    let (a, b) = (ratio.ind as f64, ratio.ood as f64);
    let (ni, no) = (ind.len() as f64, ood.len() as f64);
    let (n_ind, n_ood) = if ni * b >= no * a {
        (((no * a / b).round() as usize).max(1), ood.len())
    } else {
        (ind.len(), ((ni * b / a).round() as usize).max(1))
    };
    keep(set, &mut ChaCha8Rng::seed_from_u64(seed), n_ind, n_ood)
}

/// Keeps `size / 2` samples of each class.
pub fn downsample_size(set: &ScoreSet, size: usize, seed: u64) -> Result<ScoreSet> {
    let per_side = size / 2;
    if per_side < 2 {
        return Err(Error::InvalidInput(format!(
            "size {size} leaves fewer than 2 samples per side"
        )));
    }
    keep(
        set,
        &mut ChaCha8Rng::seed_from_u64(seed),
        per_side,
        per_side,
    )
}

/// Independent per-class sizes, each uniform in `[min(100, N), N]` for the
/// class's available count `N`.
pub fn downsample_independent(set: &ScoreSet, seed: u64) -> Result<ScoreSet> {
    let (ind, ood) = class_indices(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| rng.random_range(n.min(100)..=n);
    let (n_ind, n_ood) = (draw(ind.len()), draw(ood.len()));
    keep(set, &mut rng, n_ind, n_ood)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Ratio(Ratio),
    /// Total samples per set at 1:1.
    Size(usize),
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepAxis::Ratio(r) => write!(f, "ratio={r}"),
            SweepAxis::Size(n) => write!(f, "size={n}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub suite: MetaSuite,
}

fn map_suite(
    base: &MetaSuite,
    f: impl Fn(&ScoreSet, u64) -> Result<ScoreSet> + Sync,
    seed: u64,
) -> Result<MetaSuite> {
    use rayon::prelude::*;
    let sets = base
        .sets()
        .par_iter()
        .enumerate()
        .map(|(i, s)| f(s, derive_seed(seed, STREAM_SAMPLE, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    MetaSuite::new(sets)
}

/// One suite per ratio, then one per size, all derived from `base`.
pub fn ratio_size_sweep(
    base: &MetaSuite,
    ratios: &[Ratio],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(ratios.len() + sizes.len());
    for (k, &r) in ratios.iter().enumerate() {
        let cell_seed = derive_seed(seed, 0x7a71_0000, k as u64);
        cells.push(SweepCell {
            axis: SweepAxis::Ratio(r),
            suite: map_suite(base, |s, sd| downsample_ratio(s, r, sd), cell_seed)?,
        });
    }
    for (k, &n) in sizes.iter().enumerate() {
        let cell_seed = derive_seed(seed, 0x512e_0000, k as u64);
        cells.push(SweepCell {
            axis: SweepAxis::Size(n),
            suite: map_suite(base, |s, sd| downsample_size(s, n, sd), cell_seed)?,
        });
    }
    Ok(cells)
}

/// Independent-size variant of a suite (varied ratios and sizes per set).
pub fn varied_size_suite(base: &MetaSuite, seed: u64) -> Result<MetaSuite> {
    map_suite(base, downsample_independent, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;

    fn spec(gap: f64, sigma: f64, n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            id: "s".into(),
            family: Family::Gaussian,
            mu_ind: 0.0,
            sigma_ind: sigma,
            mu_ood: -gap,
            sigma_ood: sigma,
            n_ind: n,
            n_ood: n,
            seed,
        }
    }

    #[test]
    fn seeds_are_reproducible_and_spread() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
    }

    #[test]
    fn same_seed_same_set() {
        let a = gen_score_set(&spec(1.0, 1.0, 100, 9)).unwrap();
        let b = gen_score_set(&spec(1.0, 1.0, 100, 9)).unwrap();
        assert_eq!(a, b);
        let c = gen_score_set(&spec(1.0, 1.0, 100, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_gap_is_chance() {
        let s = gen_score_set(&spec(0.0, 1.0, 5000, 1)).unwrap();
        assert!((auroc(&s).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn gaussian_auroc_matches_closed_form() {
        for (gap, sigma) in [(0.5, 1.0), (1.0, 0.5), (0.1, 0.05)] {
            let sp = spec(gap, sigma, 10_000, 2);
            let s = gen_score_set(&sp).unwrap();
            let expected = std_normal().cdf(gap / (sigma * 2f64.sqrt()));
            assert!((sp.analytic_auroc() - expected).abs() < 1e-12);
            assert!((auroc(&s).unwrap() - expected).abs() < 0.01, "gap {gap}");
        }
    }

    #[test]
    fn logit_normal_in_unit_interval() {
        let mut sp = spec(2.0, 1.0, 500, 4);
        sp.family = Family::LogitNormal;
        let s = gen_score_set(&sp).unwrap();
        assert!(s.scores().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(gen_score_set(&spec(1.0, 0.0, 10, 0)).is_err());
        assert!(gen_score_set(&spec(1.0, 1.0, 0, 0)).is_err());
    }

    #[test]
    fn unsatisfiable_span() {
        for span in [(0.4, 0.9), (0.9, 0.8), (0.6, 1.1)] {
            let s = SuiteSpec {
                auroc_span: span,
                ..SuiteSpec::default()
            };
            assert_eq!(s.plan().unwrap_err().code(), "E_GENERATION");
        }
    }

    #[test]
    fn perfect_span_gives_separated_sets() {
        let spec = SuiteSpec {
            auroc_span: (1.0, 1.0),
            n_train: 10,
            n_test: 5,
            ..SuiteSpec::default()
        };
        let (train, test) = gen_suite(&spec).unwrap();
        for s in train.sets().iter().chain(test.sets()) {
            assert_eq!(auroc(s).unwrap(), 1.0);
        }
    }

    #[test]
    fn ratio_down_sampling_counts() {
        let s = gen_score_set(&spec(1.0, 1.0, 5000, 3)).unwrap();
        let r = downsample_ratio(&s, "100:1".parse().unwrap(), 0).unwrap();
        assert_eq!(r.class_counts(), Some((5000, 50)));
        let r = downsample_ratio(&s, "1:10".parse().unwrap(), 0).unwrap();
        assert_eq!(r.class_counts(), Some((500, 5000)));
        assert_eq!(
            downsample_ratio(&s, Ratio::new(1, 1).unwrap(), 0).unwrap(),
            s
        );
        assert_eq!(downsample_size(&s, 10_000, 0).unwrap(), s);
    }

    #[test]
    fn down_sampling_preserves_pairs() {
        let s = gen_score_set(&spec(1.0, 1.0, 300, 3)).unwrap();
        let d = downsample_size(&s, 50, 7).unwrap();
        assert_eq!(d.class_counts(), Some((25, 25)));
        let pairs: Vec<(u64, Label)> = s
            .scores()
            .iter()
            .zip(s.labels().unwrap())
            .map(|(x, l)| (x.to_bits(), *l))
            .collect();
        for (x, l) in d.scores().iter().zip(d.labels().unwrap()) {
            assert!(pairs.contains(&(x.to_bits(), *l)));
        }
        assert!(downsample_size(&s, 3, 0).is_err());
    }

    #[test]
    fn independent_sizes_in_range() {
        let s = gen_score_set(&spec(1.0, 1.0, 1000, 3)).unwrap();
        for seed in 0..20 {
            let d = downsample_independent(&s, seed).unwrap();
            let (a, b) = d.class_counts().unwrap();
            assert!((100..=1000).contains(&a) && (100..=1000).contains(&b));
            assert_eq!(d, downsample_independent(&s, seed).unwrap());
        }
    }
}
