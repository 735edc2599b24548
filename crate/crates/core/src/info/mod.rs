//! Finite-distribution information theory: exact table utilities, numeric
//! checks of standard inequalities, and Monte Carlo leakage estimators.

pub mod checks;
pub mod dist;
pub mod joint;
pub mod leakage;

pub use checks::{check_inequalities, fact_names, FactResult, InequalityReport};
pub use dist::{entropy, kl_divergence, statistical_distance, DiscreteDistribution, DistributionError, LogBase};
pub use joint::{
    conditional_entropy, conditional_mutual_information, conditional_mutual_information_by_entropies, joint_entropy,
    mutual_information, JointError, JointTable,
};
pub use leakage::{
    estimate_index_leakage, estimate_index_leakage_at, estimate_psi_distance, FirstRound, FirstRoundInput,
    LeakageEstimate, ProtocolFirstRound, PsiEstimate,
};
