//! Predicting OOD-detector performance on unlabeled score sets.
//!
//! A score set is fitted with a two-component model (Kmeans, GMM or UDE),
//! the separation between the components is measured (the Gscore), and a
//! linear map learned on labeled meta-training sets turns the Gscore into a
//! predicted FPR@TPR, AUROC, detection error or AUPR.
//!
//! ```
//! use gscore_core::{auroc, ScoreSet};
//!
//! let set = ScoreSet::from_parts("demo", &[0.9, 0.8], &[0.1, 0.85]).unwrap();
//! assert_eq!(auroc(&set).unwrap(), 0.75);
//! ```

pub mod detector;
pub mod distance;
pub mod error;
pub mod fit;
pub mod formats;
pub mod metrics;
pub mod regress;
pub mod score;
pub mod stats;
pub mod synth;

pub use detector::{detector_score, Detector, DEFAULT_ODIN_TEMPERATURE};
pub use distance::{compute_gscore, Distance, Gscore, GscoreConfig};
pub use error::{Error, Result};
pub use fit::{FitMethod, GaussianParams, TwoComponentFit, SIGMA_FLOOR};
pub use metrics::{aupr, auroc, detection_error, fpr_at_tpr, TargetMetric};
pub use regress::{
    evaluate_suite, predict, train, tune_tau, MetaSuite, MetricReport, Prediction, RegressionModel,
    TuneResult,
};
pub use score::{Label, LogitRow, ScoreSet};
pub use stats::{pearson, rmse, spearman};
pub use synth::{gen_suite, SuiteSpec, SynthSpec};
