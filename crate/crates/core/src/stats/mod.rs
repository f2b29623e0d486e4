//! Statistical primitives with no external numerical dependencies.

pub mod auc;
pub mod hypothesis;
pub mod logistic;
pub mod special;

pub use auc::{auc_mann_whitney, hanley_mcneil_se};
pub use hypothesis::{
    chi_square_independence, cmh_conditional_independence, two_proportion_one_sided,
    welch_t_one_sided, ContingencyTable, Stratum, TestResult, Tail,
};
pub use logistic::{fit_logistic_irls, LogisticFit};
pub use special::{distribution_tail, normal_cdf, normal_quantile, TailKind};
