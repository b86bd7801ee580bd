//! Shadow-model likelihood-ratio attacks and their agreement with leverage
//! scores.

mod audit;
mod lira;
mod metrics;
mod shadows;
mod simulator;
mod synthetic;

pub use audit::{run_audit, AuditConfig, AuditReport, AuditSample, REPORTED_FPRS};
pub use lira::{
    likelihood_ratio, lira_scores, lira_scores_excluding, score_sample, GaussianFit, ObservationScale, SampleScore,
    MIN_SIDE, SIGMA_FLOOR,
};
pub use metrics::{average_ranks, permutation_pvalue, spearman, tpr_at_fpr, tradeoff_from_scores, MIN_PERMUTATIONS};
pub use shadows::{membership_masks, train_shadows, ModelTemplate, ShadowEnsemble, MIN_SHADOWS};
pub use simulator::{simulator_attack, SimulatorAttack};
pub use synthetic::{planted_outliers, PlantedOutlierConfig, PlantedOutliers};
