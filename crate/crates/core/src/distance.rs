//! Gscore: the separability of the two fitted score components.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fit::{
    fit_gmm2, fit_gmm2_split, fit_kmeans2, fit_ude, EmOptions, FitMethod, GaussianParams,
    TwoComponentFit,
};
use crate::score::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distance {
    L2,
    /// KL with (mu1, sigma1) taken from the IND component.
    KlIndOod,
    /// KL with (mu1, sigma1) taken from the OOD component.
    KlOodInd,
    /// Squared 2-Wasserstein between the two Gaussians.
    Wasserstein,
}

impl Distance {
    pub fn as_str(self) -> &'static str {
        match self {
            Distance::L2 => "l2",
            Distance::KlIndOod => "kl",
            Distance::KlOodInd => "kl-rev",
            Distance::Wasserstein => "wasserstein",
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Distance::L2),
            "kl" | "kl-ind-ood" => Ok(Distance::KlIndOod),
            "kl-rev" | "kl-ood-ind" => Ok(Distance::KlOodInd),
            "wasserstein" | "w2" => Ok(Distance::Wasserstein),
            other => Err(Error::Config(format!("unknown distance '{other}'"))),
        }
    }
}

/// Which direction of the (asymmetric) KL divergence to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    IndOod,
    OodInd,
}

pub fn l2_distance(fit: &TwoComponentFit) -> f64 {
    (fit.ind.mu - fit.ood.mu).abs()
}

fn sigmas(fit: &TwoComponentFit, what: &str) -> Result<(f64, f64)> {
    match (fit.ind.sigma, fit.ood.sigma) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::UnsupportedDistance(format!(
            "{what} needs component spreads; {} fits have none",
            fit.method
        ))),
    }
}

/// `ln(s1/s2) + (s2^2 + (m1-m2)^2) / (2 s1^2) - 1/2`.
pub fn kl_gaussian(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    let d = mu1 - mu2;
    (sigma1 / sigma2).ln() + (sigma2 * sigma2 + d * d) / (2.0 * sigma1 * sigma1) - 0.5
}

pub fn kl_distance(fit: &TwoComponentFit, direction: KlDirection) -> Result<f64> {
    let (s_ind, s_ood) = sigmas(fit, "KL divergence")?;
    let (m_ind, m_ood) = (fit.ind.mu, fit.ood.mu);
    Ok(match direction {
        KlDirection::IndOod => kl_gaussian(m_ind, s_ind, m_ood, s_ood),
        KlDirection::OodInd => kl_gaussian(m_ood, s_ood, m_ind, s_ind),
    })
}

/// `(mu_ind - mu_ood)^2 + (sigma_ind - sigma_ood)^2`.
pub fn wasserstein_distance(fit: &TwoComponentFit) -> Result<f64> {
    let (s_ind, s_ood) = sigmas(fit, "Wasserstein distance")?;
    let dm = fit.ind.mu - fit.ood.mu;
    let ds = s_ind - s_ood;
    Ok(dm * dm + ds * ds)
}

pub fn distance(fit: &TwoComponentFit, which: Distance) -> Result<f64> {
    match which {
        Distance::L2 => Ok(l2_distance(fit)),
        Distance::KlIndOod => kl_distance(fit, KlDirection::IndOod),
        Distance::KlOodInd => kl_distance(fit, KlDirection::OodInd),
        Distance::Wasserstein => wasserstein_distance(fit),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GscoreConfig {
    pub method: FitMethod,
    pub distance: Distance,
    /// UDE: membership threshold (required). GMM: optional posterior
    /// threshold for a hard split; `None` uses the EM parameters directly.
    /// Kmeans: ignored.
    pub tau: Option<f64>,
    pub seed: u64,
}

impl GscoreConfig {
    pub fn new(method: FitMethod, distance: Distance) -> Self {
        Self {
            method,
            distance,
            tau: None,
            seed: 0,
        }
    }

    pub fn with_tau(mut self, tau: Option<f64>) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == FitMethod::Kmeans && self.distance != Distance::L2 {
            return Err(Error::Config(format!(
                "kmeans only supports l2 (got {})",
                self.distance
            )));
        }
        if self.method == FitMethod::Ude && self.tau.is_none() {
            return Err(Error::Config("ude needs a tau".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("tau must be in (0,1), got {t}")));
            }
        }
        Ok(())
    }

    pub fn needs_val(&self) -> bool {
        self.method == FitMethod::Ude
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gscore {
    pub value: f64,
    pub degenerate: bool,
    pub fit: TwoComponentFit,
}

/// Fits the configured model.
pub fn fit_two_components(
    scores: &ScoreSet,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
) -> Result<TwoComponentFit> {
    cfg.validate()?;
    let em = EmOptions::default();
    match cfg.method {
        FitMethod::Kmeans => fit_kmeans2(scores, cfg.seed),
        FitMethod::Gmm => match cfg.tau {
            Some(tau) => fit_gmm2_split(scores, cfg.seed, tau, em),
            None => fit_gmm2(scores, cfg.seed, em.tol, em.max_iter),
        },
        FitMethod::Ude => {
            let val = val
                .ok_or_else(|| Error::Config("ude needs validation Gaussian parameters".into()))?;
            fit_ude(scores, val, cfg.tau.expect("validated"))
        }
    }
}

/// Score sample to Gscore. Degenerate fits score 0.
pub fn compute_gscore(
    scores: &ScoreSet,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
) -> Result<Gscore> {
    gscore_from_fit(fit_two_components(scores, val, cfg)?, cfg.distance)
}

pub fn gscore_from_fit(fit: TwoComponentFit, which: Distance) -> Result<Gscore> {
    let value = if fit.degenerate {
        0.0
    } else {
        distance(&fit, which)?
    };
    Ok(Gscore {
        value,
        degenerate: fit.degenerate,
        fit,
    })
}
