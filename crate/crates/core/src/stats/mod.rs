//! Statistical tests used by the estimation and evaluation steps.

pub mod agreement;
pub mod contingency;
pub mod reml;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use agreement::{kendall_tau_b, krippendorff_alpha, median_aggregate, KendallTau, RatingsMatrix};
pub use contingency::{
    bin_label, breslow_day, fisher_exact_p, odds_ratio_fisher, quantile_bins, stratified_or_report, table_of,
    BreslowDay, Observation, OddsRatio, Significance, StratumOr, Table2x2,
};
pub use reml::{reml_random_intercept, restricted_log_likelihood, Coefficient, Design, MixedModelFit};

/// One test result as written to the report, with a hash of its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test: String,
    pub statistic: f64,
    pub p: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub inputs_hash: String,
}

impl TestRecord {
    pub fn new(test: &str, statistic: f64, p: Option<f64>, ci: Option<(f64, f64)>, inputs: &impl Serialize) -> Self {
        let bytes = serde_json::to_vec(inputs).unwrap_or_default();
        TestRecord {
            test: test.to_string(),
            statistic,
            p,
            ci_low: ci.map(|c| c.0),
            ci_high: ci.map(|c| c.1),
            inputs_hash: hex::encode(Sha256::digest(&bytes)),
        }
    }
}
