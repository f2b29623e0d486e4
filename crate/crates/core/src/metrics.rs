//! Data-equity metrics over a cohort, and the full audit that strings them
//! together.
//!
//! Every metric returns a [`MetricResult`]. Inputs a metric cannot be
//! evaluated on (empty strata, single-class groups, separated logistic fits)
//! produce a result with [`MetricStatus::Untestable`]; metrics that need the
//! gold-standard saturation are [`MetricStatus::Skipped`] on gold-free cohorts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{has_gold_standard, PatientRecord};
use crate::error::{Error, Result};
use crate::stats::auc::{auc_mann_whitney, hanley_mcneil_se};
use crate::stats::hypothesis::{
    chi_square_independence, cmh_conditional_independence, two_proportion_one_sided,
    welch_t_one_sided, ContingencyTable, Stratum, Tail, TestResult,
};
use crate::stats::logistic::{fit_logistic_irls, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::stats::special::{normal_quantile, normal_sf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub alpha: f64,
    /// Target power 1 − β.
    pub power: f64,
    /// Smallest error contrast worth detecting, percentage points.
    pub delta: f64,
    pub flag_level: f64,
    pub w_hypox: f64,
    pub w_treat: f64,
    /// P(A = 1) in the target population, for participation-to-prevalence ratios.
    pub target_prevalence: Option<f64>,
    pub wstar_bin_width: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            power: 0.80,
            delta: 1.0,
            flag_level: 0.01,
            w_hypox: 88.0,
            w_treat: 92.0,
            target_prevalence: None,
            wstar_bin_width: 1.0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("power", self.power)?;
        unit("flag_level", self.flag_level)?;
        if let Some(p) = self.target_prevalence {
            unit("target_prevalence", p)?;
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.wstar_bin_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "wstar_bin_width must be positive, got {}",
                self.wstar_bin_width
            )));
        }
        if !(self.w_hypox.is_finite() && self.w_treat.is_finite()) {
            return Err(Error::InvalidConfig("thresholds must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Representativeness,
    InformationBias,
    TreatmentDisparity,
    EqualityOfOpportunity,
    TreatmentGap,
    OutcomeDecomposition,
    ObservedOutcomeGap,
    SystemicLogistic,
    SystemicCmh,
    GroupAuc,
}

impl MetricKind {
    /// Report order.
    pub const ALL: [MetricKind; 10] = [
        MetricKind::Representativeness,
        MetricKind::InformationBias,
        MetricKind::TreatmentDisparity,
        MetricKind::EqualityOfOpportunity,
        MetricKind::TreatmentGap,
        MetricKind::OutcomeDecomposition,
        MetricKind::ObservedOutcomeGap,
        MetricKind::SystemicLogistic,
        MetricKind::SystemicCmh,
        MetricKind::GroupAuc,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MetricKind::Representativeness => "representativeness",
            MetricKind::InformationBias => "information_bias",
            MetricKind::TreatmentDisparity => "treatment_disparity",
            MetricKind::EqualityOfOpportunity => "equality_of_opportunity",
            MetricKind::TreatmentGap => "treatment_gap",
            MetricKind::OutcomeDecomposition => "outcome_decomposition",
            MetricKind::ObservedOutcomeGap => "observed_outcome_gap",
            MetricKind::SystemicLogistic => "systemic_logistic",
            MetricKind::SystemicCmh => "systemic_cmh",
            MetricKind::GroupAuc => "group_auc",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricKind::Representativeness => "Representativeness: I_a = n_a / s_a^2 >= I*",
            MetricKind::InformationBias => "Information bias: E[eps|A=1] > E[eps|A=0] > 0",
            MetricKind::TreatmentDisparity => "Treatment disparity: P(Z=1 | W<w_hypox, A=a)",
            MetricKind::EqualityOfOpportunity => "Equality of opportunity: deviation from marginal rate",
            MetricKind::TreatmentGap => "Treatment gap: P(Z=1|A=0) - P(Z=1|A=1)",
            MetricKind::OutcomeDecomposition => "Outcome decomposition: tau x treatment gap",
            MetricKind::ObservedOutcomeGap => "Observed outcome gap: P(Y=1|A=1) - P(Y=1|A=0)",
            MetricKind::SystemicLogistic => "Systemic bias: logistic Z ~ W* + A",
            MetricKind::SystemicCmh => "Systemic bias: CMH Z vs A stratified by W*",
            MetricKind::GroupAuc => "Group AUC: W* detecting W < w_hypox",
        }
    }

    pub fn interpretation(self) -> &'static str {
        match self {
            MetricKind::Representativeness => {
                "Flagged if some group's Fisher information falls below the detection threshold."
            }
            MetricKind::InformationBias => {
                "Flagged if the measurement error is significantly larger for A=1."
            }
            MetricKind::TreatmentDisparity => {
                "Flagged if truly hypoxemic A=1 patients are treated significantly less often."
            }
            MetricKind::EqualityOfOpportunity => {
                "Flagged if treatment depends on group among the truly hypoxemic."
            }
            MetricKind::TreatmentGap => "Flagged if overall treatment rates differ between groups.",
            MetricKind::OutcomeDecomposition => {
                "Excess adverse-outcome risk for A=1 implied by the treatment gap; flag follows the treatment-gap test."
            }
            MetricKind::ObservedOutcomeGap => {
                "Flagged if adverse-outcome rates differ between groups."
            }
            MetricKind::SystemicLogistic => {
                "Flagged if treatment depends on group after adjusting for W*."
            }
            MetricKind::SystemicCmh => {
                "Flagged if treatment and group stay associated within W* strata."
            }
            MetricKind::GroupAuc => {
                "Flagged if W* discriminates true hypoxemia differently across groups."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum MetricStatus {
    Computed,
    Skipped(String),
    Untestable(String),
}

pub const SKIPPED_NO_GOLD: &str = "skipped: no gold standard";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricKind,
    pub status: MetricStatus,
    /// Keyed by group (0 or 1).
    pub group_values: BTreeMap<u8, f64>,
    pub contrast: Option<f64>,
    pub test: Option<TestResult>,
    pub flagged: bool,
    /// Auxiliary quantities (thresholds, marginal rates, τ, counts).
    pub details: BTreeMap<String, f64>,
    pub interpretation: String,
}

impl MetricResult {
    fn new(metric: MetricKind, status: MetricStatus) -> Self {
        Self {
            metric,
            status,
            group_values: BTreeMap::new(),
            contrast: None,
            test: None,
            flagged: false,
            details: BTreeMap::new(),
            interpretation: metric.interpretation().to_string(),
        }
    }

    fn computed(metric: MetricKind) -> Self {
        Self::new(metric, MetricStatus::Computed)
    }

    pub fn skipped(metric: MetricKind, reason: impl Into<String>) -> Self {
        Self::new(metric, MetricStatus::Skipped(reason.into()))
    }

    pub fn untestable(metric: MetricKind, reason: impl Into<String>) -> Self {
        Self::new(metric, MetricStatus::Untestable(reason.into()))
    }

    fn with_test(mut self, test: TestResult, flag_level: f64) -> Self {
        self.flagged = test.p_value < flag_level;
        self.test = Some(test);
        self
    }

    fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    fn groups(mut self, g0: f64, g1: f64) -> Self {
        self.group_values.insert(0, g0);
        self.group_values.insert(1, g1);
        self
    }

    pub fn is_computed(&self) -> bool {
        self.status == MetricStatus::Computed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_group: [usize; 2],
    pub treated_rate: [f64; 2],
    pub outcome_rate: [f64; 2],
    /// P(W < w_hypox | A = a); absent without gold standard.
    pub hypoxemia_prevalence: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityReport {
    pub scenario_label: String,
    pub metrics: Vec<MetricResult>,
    pub cohort_summary: CohortSummary,
}

impl EquityReport {
    pub fn metric(&self, kind: MetricKind) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.metric == kind)
    }

    pub fn flagged(&self, kind: MetricKind) -> bool {
        self.metric(kind).is_some_and(|m| m.flagged)
    }
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

fn require_gold(cohort: &[PatientRecord]) -> Result<()> {
    if has_gold_standard(cohort) {
        Ok(())
    } else {
        Err(Error::NoGoldStandard)
    }
}

fn w_true(r: &PatientRecord) -> f64 {
    r.w_true.expect("gold standard checked")
}

fn epsilon(r: &PatientRecord) -> f64 {
    r.epsilon.expect("gold standard checked")
}

fn by_group(cohort: &[PatientRecord]) -> [Vec<&PatientRecord>; 2] {
    let mut groups: [Vec<&PatientRecord>; 2] = [Vec::new(), Vec::new()];
    for r in cohort {
        groups[usize::from(r.group_a.min(1))].push(r);
    }
    groups
}

fn require_both_groups(cohort: &[PatientRecord]) -> Result<[Vec<&PatientRecord>; 2]> {
    let groups = by_group(cohort);
    if let Some(a) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Untestable(format!("group A={a} is empty")));
    }
    Ok(groups)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Per-group information required to detect an error contrast of `delta`:
/// I* = (z_{α/2} + z_β)² / δ².
pub fn detection_threshold(config: &AuditConfig) -> Result<f64> {
    config.validate()?;
    let z_alpha = normal_quantile(1.0 - config.alpha / 2.0)?;
    let z_beta = normal_quantile(config.power)?;
    Ok((z_alpha + z_beta).powi(2) / (config.delta * config.delta))
}

/// Fisher information about a group's mean error: n / s².
pub fn fisher_information(n: usize, variance: f64) -> f64 {
    n as f64 / variance
}

pub fn representativeness_check(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    require_gold(cohort)?;
    let threshold = detection_threshold(config)?;
    let groups = by_group(cohort);
    let mut info = [0.0; 2];
    let mut result = MetricResult::computed(MetricKind::Representativeness).detail("threshold", threshold);
    for (a, members) in groups.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Untestable(format!(
                "group A={a} has {} gold-standard observations; need 2",
                members.len()
            )));
        }
        let eps: Vec<f64> = members.iter().map(|r| epsilon(r)).collect();
        let var = sample_variance(&eps);
        if !(var > 0.0) {
            return Err(Error::Untestable(format!("group A={a} has zero error variance")));
        }
        info[a] = fisher_information(members.len(), var);
        result = result
            .detail(&format!("n_{a}"), members.len() as f64)
            .detail(&format!("variance_{a}"), var);
    }
    if let Some(target) = config.target_prevalence {
        let n = cohort.len() as f64;
        let share1 = groups[1].len() as f64 / n;
        result = result
            .detail("ppr_0", (1.0 - share1) / (1.0 - target))
            .detail("ppr_1", share1 / target);
    }
    result = result.groups(info[0], info[1]);
    result.contrast = Some(info[0].min(info[1]) - threshold);
    result.flagged = info.iter().any(|&i| !(i >= threshold));
    Ok(result)
}

/// Welch test that A=1 has the larger mean measurement error.
pub fn information_bias_test(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    require_gold(cohort)?;
    let groups = by_group(cohort);
    let eps: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|r| epsilon(r)).collect())
        .collect();
    let test = welch_t_one_sided(&eps[1], &eps[0])?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (m0, m1) = (mean(&eps[0]), mean(&eps[1]));
    let mut result = MetricResult::computed(MetricKind::InformationBias)
        .groups(m0, m1)
        .detail("both_means_positive", f64::from(u8::from(m0 > 0.0 && m1 > 0.0)))
        .with_test(test, config.flag_level);
    result.contrast = Some(m1 - m0);
    Ok(result)
}

struct HypoxemicStratum {
    n: [usize; 2],
    treated: [usize; 2],
}

fn hypoxemic_stratum(cohort: &[PatientRecord], config: &AuditConfig) -> HypoxemicStratum {
    let mut s = HypoxemicStratum { n: [0; 2], treated: [0; 2] };
    for r in cohort.iter().filter(|r| w_true(r) < config.w_hypox) {
        let a = usize::from(r.group_a.min(1));
        s.n[a] += 1;
        s.treated[a] += usize::from(r.treated);
    }
    s
}

/// One-sided two-proportion test that hypoxemic A=1 patients are treated less.
pub fn treatment_disparity_test(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    require_gold(cohort)?;
    let kind = MetricKind::TreatmentDisparity;
    let s = hypoxemic_stratum(cohort, config);
    if let Some(a) = s.n.iter().position(|&n| n == 0) {
        return Ok(MetricResult::untestable(kind, format!("no truly hypoxemic patients in group A={a}")));
    }
    let (r0, r1) = (rate(s.treated[0], s.n[0]), rate(s.treated[1], s.n[1]));
    let test = two_proportion_one_sided(s.treated[1] as u64, s.n[1] as u64, s.treated[0] as u64, s.n[0] as u64)?;
    let mut result = MetricResult::computed(kind)
        .groups(r0, r1)
        .detail("n_0", s.n[0] as f64)
        .detail("n_1", s.n[1] as f64)
        .with_test(test, config.flag_level);
    result.contrast = Some(r1 - r0);
    Ok(result)
}

/// Among the truly hypoxemic: each group's deviation from the marginal
/// treatment rate, with a Pearson χ² test of Z ⟂ A.
pub fn equality_of_opportunity_test(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    require_gold(cohort)?;
    let kind = MetricKind::EqualityOfOpportunity;
    let s = hypoxemic_stratum(cohort, config);
    if let Some(a) = s.n.iter().position(|&n| n == 0) {
        return Ok(MetricResult::untestable(kind, format!("no truly hypoxemic patients in group A={a}")));
    }
    let marginal = rate(s.treated[0] + s.treated[1], s.n[0] + s.n[1]);
    let (r0, r1) = (rate(s.treated[0], s.n[0]), rate(s.treated[1], s.n[1]));
    let table = ContingencyTable::from_2x2([
        [s.treated[0] as u64, (s.n[0] - s.treated[0]) as u64],
        [s.treated[1] as u64, (s.n[1] - s.treated[1]) as u64],
    ]);
    let mut result = MetricResult::computed(kind)
        .groups(r0 - marginal, r1 - marginal)
        .detail("marginal", marginal)
        .detail("n_0", s.n[0] as f64)
        .detail("n_1", s.n[1] as f64);
    result.contrast = Some(r1 - r0);
    match chi_square_independence(&table) {
        Ok(test) => Ok(result.with_test(test, config.flag_level)),
        Err(Error::EmptyMargin { .. }) if r0 == r1 => {
            // every hypoxemic patient shares one treatment status
            Ok(result.with_test(
                TestResult { statistic: 0.0, df: Some(1.0), p_value: 1.0, direction: Tail::TwoSided, degenerate: true },
                config.flag_level,
            ))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub tau: f64,
    /// Binomial standard error of the difference of two proportions.
    pub standard_error: f64,
    pub n_untreated: usize,
    pub n_treated: usize,
}

/// τ̂ = P̂(Y=1 | Z=0, W<w_hypox) − P̂(Y=1 | Z=1, W<w_hypox), an unadjusted
/// contrast within the hypoxemic stratum.
pub fn estimate_tau(cohort: &[PatientRecord], config: &AuditConfig) -> Result<TauEstimate> {
    require_gold(cohort)?;
    let mut n = [0usize; 2];
    let mut events = [0usize; 2];
    for r in cohort.iter().filter(|r| w_true(r) < config.w_hypox) {
        let z = usize::from(r.treated.min(1));
        n[z] += 1;
        events[z] += usize::from(r.outcome);
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::Untestable(format!(
            "hypoxemic stratum has {} untreated and {} treated patients; need both",
            n[0], n[1]
        )));
    }
    let (p0, p1) = (rate(events[0], n[0]), rate(events[1], n[1]));
    Ok(TauEstimate {
        tau: p0 - p1,
        standard_error: (p0 * (1.0 - p0) / n[0] as f64 + p1 * (1.0 - p1) / n[1] as f64).sqrt(),
        n_untreated: n[0],
        n_treated: n[1],
    })
}

fn binary_by_group(groups: &[Vec<&PatientRecord>; 2], pick: impl Fn(&PatientRecord) -> u8) -> ([usize; 2], [usize; 2]) {
    let n = [groups[0].len(), groups[1].len()];
    let hits = [
        groups[0].iter().filter(|r| pick(r) == 1).count(),
        groups[1].iter().filter(|r| pick(r) == 1).count(),
    ];
    (n, hits)
}

fn marginal_chi_square(n: [usize; 2], hits: [usize; 2]) -> Result<TestResult> {
    let table = ContingencyTable::from_2x2([
        [hits[0] as u64, (n[0] - hits[0]) as u64],
        [hits[1] as u64, (n[1] - hits[1]) as u64],
    ]);
    match chi_square_independence(&table) {
        Err(Error::EmptyMargin { axis: "column", .. }) => Ok(TestResult {
            statistic: 0.0,
            df: Some(1.0),
            p_value: 1.0,
            direction: Tail::TwoSided,
            degenerate: true,
        }),
        other => other,
    }
}

/// The marginal treatment gap and the outcome disparity Δ = τ·gap it implies.
/// The decomposition carries the gap's test and flag.
pub fn treatment_gap_and_outcome_decomposition(
    cohort: &[PatientRecord],
    config: &AuditConfig,
    tau: f64,
) -> Result<(MetricResult, MetricResult)> {
    let groups = require_both_groups(cohort)?;
    let gap = treatment_gap(&groups, config)?;
    Ok((gap.clone(), decomposition_from_gap(&gap, tau)))
}

fn treatment_gap(groups: &[Vec<&PatientRecord>; 2], config: &AuditConfig) -> Result<MetricResult> {
    let (n, treated) = binary_by_group(groups, |r| r.treated);
    let (r0, r1) = (rate(treated[0], n[0]), rate(treated[1], n[1]));
    let test = marginal_chi_square(n, treated)?;
    let mut gap = MetricResult::computed(MetricKind::TreatmentGap)
        .groups(r0, r1)
        .with_test(test, config.flag_level);
    gap.contrast = Some(r0 - r1);
    Ok(gap)
}

fn decomposition_from_gap(gap: &MetricResult, tau: f64) -> MetricResult {
    let gap_value = gap.contrast.unwrap_or(0.0);
    let mut d = MetricResult::computed(MetricKind::OutcomeDecomposition)
        .detail("tau", tau)
        .detail("treatment_gap", gap_value);
    d.contrast = Some(tau * gap_value);
    d.test = gap.test;
    d.flagged = gap.flagged;
    d
}

/// P̂(Y=1|A=1) − P̂(Y=1|A=0) with a Pearson χ² test on the Y×A table.
pub fn observed_outcome_gap(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    let groups = require_both_groups(cohort)?;
    let (n, events) = binary_by_group(&groups, |r| r.outcome);
    let (r0, r1) = (rate(events[0], n[0]), rate(events[1], n[1]));
    let test = marginal_chi_square(n, events)?;
    let mut result = MetricResult::computed(MetricKind::ObservedOutcomeGap)
        .groups(r0, r1)
        .with_test(test, config.flag_level);
    result.contrast = Some(r1 - r0);
    Ok(result)
}

/// Integer bin key for a W* value; bins are centred on multiples of `width`.
pub fn wstar_bin(w_star: f64, width: f64) -> i64 {
    (w_star / width).round() as i64
}

/// Tests of Z ⟂ A | W*: a logistic fit Z ~ W* + A (Wald test on A) and a CMH
/// test over binned W*. A separated or singular logistic fit is reported as
/// untestable and leaves the CMH result standing on its own.
pub fn systemic_bias_tests(cohort: &[PatientRecord], config: &AuditConfig) -> Result<(MetricResult, MetricResult)> {
    config.validate()?;
    require_both_groups(cohort)?;
    let first = cohort[0].w_star;
    if cohort.iter().all(|r| r.w_star == first) {
        return Err(Error::Untestable("W* takes a single value".into()));
    }

    let rows: Vec<[f64; 2]> = cohort.iter().map(|r| [r.w_star, f64::from(r.group_a)]).collect();
    let z: Vec<u8> = cohort.iter().map(|r| r.treated).collect();
    let logistic = match fit_logistic_irls(&rows, &z, DEFAULT_MAX_ITER, DEFAULT_TOL) {
        Ok(fit) if fit.converged => {
            let test = TestResult {
                statistic: fit.wald_z[2],
                df: None,
                p_value: fit.p_values[2],
                direction: Tail::TwoSided,
                degenerate: false,
            };
            let mut m = MetricResult::computed(MetricKind::SystemicLogistic)
                .detail("intercept", fit.coefficients[0])
                .detail("beta_wstar", fit.coefficients[1])
                .detail("beta_a", fit.coefficients[2])
                .detail("se_a", fit.standard_errors[2])
                .detail("iterations", fit.iterations as f64)
                .with_test(test, config.flag_level);
            m.contrast = Some(fit.coefficients[2]);
            m
        }
        Ok(fit) => MetricResult::untestable(
            MetricKind::SystemicLogistic,
            format!(
                "logistic fit did not converge after {} iterations (separation: {}, max |score| {:.3e}); see CMH",
                fit.iterations, fit.separation, fit.max_abs_score
            ),
        ),
        Err(e @ Error::Singular { .. }) => {
            MetricResult::untestable(MetricKind::SystemicLogistic, format!("{e}; see CMH"))
        }
        Err(e) => return Err(e),
    };

    let mut strata: BTreeMap<i64, Stratum> = BTreeMap::new();
    for r in cohort {
        let cell = &mut strata.entry(wstar_bin(r.w_star, config.wstar_bin_width)).or_default().0;
        // rows: A=1, A=0; columns: treated, untreated
        cell[usize::from(r.group_a == 0)][usize::from(r.treated == 0)] += 1;
    }
    let strata: Vec<Stratum> = strata.into_values().collect();
    let informative = strata.iter().filter(|s| s.moments().is_some()).count();
    let cmh = match cmh_conditional_independence(&strata) {
        Ok(test) => MetricResult::computed(MetricKind::SystemicCmh)
            .detail("strata", strata.len() as f64)
            .detail("informative_strata", informative as f64)
            .with_test(test, config.flag_level),
        Err(Error::Untestable(reason)) => MetricResult::untestable(MetricKind::SystemicCmh, reason),
        Err(e) => return Err(e),
    };
    Ok((logistic, cmh))
}

/// Per-group AUC of the score 100 − W* for detecting W < w_hypox, with a
/// two-sided test of AUC_0 = AUC_1 using Hanley–McNeil standard errors.
pub fn group_auc_comparison(cohort: &[PatientRecord], config: &AuditConfig) -> Result<MetricResult> {
    require_gold(cohort)?;
    let kind = MetricKind::GroupAuc;
    let groups = by_group(cohort);
    let mut auc = [0.0; 2];
    let mut se = [0.0; 2];
    for (a, members) in groups.iter().enumerate() {
        let scores: Vec<f64> = members.iter().map(|r| 100.0 - r.w_star).collect();
        let labels: Vec<u8> = members.iter().map(|r| u8::from(w_true(r) < config.w_hypox)).collect();
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let n_neg = labels.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Ok(MetricResult::untestable(
                kind,
                format!("group A={a} has {n_pos} hypoxemic and {n_neg} non-hypoxemic patients; need both"),
            ));
        }
        auc[a] = auc_mann_whitney(&scores, &labels)?;
        se[a] = hanley_mcneil_se(auc[a], n_pos, n_neg);
    }
    let diff = auc[0] - auc[1];
    let pooled_se = (se[0] * se[0] + se[1] * se[1]).sqrt();
    let mut result = MetricResult::computed(kind)
        .groups(auc[0], auc[1])
        .detail("se_0", se[0])
        .detail("se_1", se[1]);
    result.contrast = Some(diff);
    if !(pooled_se > 0.0) {
        if diff == 0.0 {
            let test = TestResult { statistic: 0.0, df: None, p_value: 1.0, direction: Tail::TwoSided, degenerate: true };
            return Ok(result.with_test(test, config.flag_level));
        }
        return Ok(MetricResult::untestable(kind, "both AUCs have zero standard error"));
    }
    let z = diff / pooled_se;
    let test = TestResult {
        statistic: z,
        df: None,
        p_value: (2.0 * normal_sf(z.abs())).min(1.0),
        direction: Tail::TwoSided,
        degenerate: false,
    };
    Ok(result.with_test(test, config.flag_level))
}

pub fn cohort_summary(cohort: &[PatientRecord], config: &AuditConfig) -> CohortSummary {
    let groups = by_group(cohort);
    let frac = |a: usize, f: &dyn Fn(&PatientRecord) -> bool| {
        let n = groups[a].len();
        if n == 0 {
            0.0
        } else {
            groups[a].iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let hypox = has_gold_standard(cohort).then(|| {
        let h = |r: &PatientRecord| w_true(r) < config.w_hypox;
        [frac(0, &h), frac(1, &h)]
    });
    CohortSummary {
        n_group: [groups[0].len(), groups[1].len()],
        treated_rate: [frac(0, &|r| r.treated == 1), frac(1, &|r| r.treated == 1)],
        outcome_rate: [frac(0, &|r| r.outcome == 1), frac(1, &|r| r.outcome == 1)],
        hypoxemia_prevalence: hypox,
    }
}

/// Converts "cannot evaluate on this input" errors into an untestable metric.
fn or_untestable(kind: MetricKind, result: Result<MetricResult>) -> Result<MetricResult> {
    match result {
        Ok(m) => Ok(m),
        Err(Error::Untestable(reason)) => Ok(MetricResult::untestable(kind, reason)),
        Err(e @ (Error::EmptyMargin { .. } | Error::Singular { .. })) => {
            Ok(MetricResult::untestable(kind, e.to_string()))
        }
        Err(e) => Err(e),
    }
}

/// Runs every metric, working backwards from the outcome: observed outcome
/// gap, then the systemic-bias tests and treatment gap, then (only with a gold
/// standard) information bias, representativeness, AUC and the forward
/// treatment metrics. Metrics are returned in [`MetricKind::ALL`] order.
pub fn run_full_audit(cohort: &[PatientRecord], config: &AuditConfig, scenario_label: &str) -> Result<EquityReport> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("cannot audit an empty cohort".into()));
    }
    if let Some(r) = cohort.iter().find(|r| r.group_a > 1 || r.treated > 1 || r.outcome > 1) {
        return Err(Error::Schema {
            row: r.patient_id as usize,
            column: "group_a/treated/outcome".into(),
            message: "binary column outside {0, 1}".into(),
        });
    }
    let mut found: BTreeMap<MetricKind, MetricResult> = BTreeMap::new();
    let mut put = |m: MetricResult| {
        found.insert(m.metric, m);
    };

    put(or_untestable(MetricKind::ObservedOutcomeGap, observed_outcome_gap(cohort, config))?);
    match systemic_bias_tests(cohort, config) {
        Ok((logistic, cmh)) => {
            put(logistic);
            put(cmh);
        }
        Err(Error::Untestable(reason)) => {
            put(MetricResult::untestable(MetricKind::SystemicLogistic, reason.clone()));
            put(MetricResult::untestable(MetricKind::SystemicCmh, reason));
        }
        Err(e) => return Err(e),
    }
    let gap = match require_both_groups(cohort) {
        Ok(groups) => or_untestable(MetricKind::TreatmentGap, treatment_gap(&groups, config))?,
        Err(Error::Untestable(reason)) => MetricResult::untestable(MetricKind::TreatmentGap, reason),
        Err(e) => return Err(e),
    };

    if has_gold_standard(cohort) {
        put(or_untestable(MetricKind::InformationBias, information_bias_test(cohort, config))?);
        put(or_untestable(MetricKind::Representativeness, representativeness_check(cohort, config))?);
        put(or_untestable(MetricKind::GroupAuc, group_auc_comparison(cohort, config))?);
        put(or_untestable(MetricKind::TreatmentDisparity, treatment_disparity_test(cohort, config))?);
        put(or_untestable(MetricKind::EqualityOfOpportunity, equality_of_opportunity_test(cohort, config))?);
        let decomposition = match (estimate_tau(cohort, config), gap.is_computed()) {
            (Ok(tau), true) => decomposition_from_gap(&gap, tau.tau)
                .detail("tau_se", tau.standard_error),
            (Ok(_), false) => MetricResult::untestable(MetricKind::OutcomeDecomposition, "treatment gap untestable"),
            (Err(Error::Untestable(reason)), _) => MetricResult::untestable(MetricKind::OutcomeDecomposition, reason),
            (Err(e), _) => return Err(e),
        };
        put(decomposition);
    } else {
        for kind in [
            MetricKind::InformationBias,
            MetricKind::Representativeness,
            MetricKind::GroupAuc,
            MetricKind::TreatmentDisparity,
            MetricKind::EqualityOfOpportunity,
            MetricKind::OutcomeDecomposition,
        ] {
            put(MetricResult::skipped(kind, SKIPPED_NO_GOLD));
        }
    }
    put(gap);

    let metrics = MetricKind::ALL
        .iter()
        .map(|k| found.remove(k).expect("every metric is produced"))
        .collect();
    Ok(EquityReport {
        scenario_label: scenario_label.to_string(),
        metrics,
        cohort_summary: cohort_summary(cohort, config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, a: u8, w: f64, w_star: f64, z: u8, y: u8) -> PatientRecord {
        PatientRecord {
            patient_id: id,
            group_a: a,
            w_true: Some(w),
            w_star,
            epsilon: Some(w_star - w),
            treated: z,
            outcome: y,
            clamped: false,
        }
    }

    #[test]
    fn detection_threshold_values() {
        let base = AuditConfig::default();
        let t = detection_threshold(&base).unwrap();
        assert!((t - 7.849).abs() < 0.01);
        let t2 = detection_threshold(&AuditConfig { delta: 2.0, ..base }).unwrap();
        assert!((t2 - t / 4.0).abs() < 1e-12);
        assert!((t2 - 1.962).abs() < 1e-3);
        let half = detection_threshold(&AuditConfig { power: 0.5, ..base }).unwrap();
        assert!((half - 3.841).abs() < 1e-3);
        assert!(detection_threshold(&AuditConfig { alpha: 0.0, ..base }).is_err());
        assert!(detection_threshold(&AuditConfig { delta: -1.0, ..base }).is_err());
    }

    #[test]
    fn detection_threshold_monotone() {
        let base = AuditConfig::default();
        let mut prev = f64::INFINITY;
        for d in [0.5, 1.0, 1.5, 3.0] {
            let t = detection_threshold(&AuditConfig { delta: d, ..base }).unwrap();
            assert!(t < prev);
            prev = t;
        }
        let mut prev = 0.0;
        for p in [0.5, 0.7, 0.8, 0.9, 0.99] {
            let t = detection_threshold(&AuditConfig { power: p, ..base }).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn fisher_information_from_table_values() {
        assert!((fisher_information(500, 6.14) - 81.4).abs() < 0.05);
        assert!((fisher_information(4, 100.0) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn tiny_group_fails_representativeness() {
        let mut cohort = Vec::new();
        for i in 0..200 {
            cohort.push(rec(i, 0, 90.0, 91.0 + (i % 3) as f64, 1, 0));
        }
        // four A=1 patients with error variance 100
        for (k, e) in [-10.0, 10.0, -10.0, 10.0].iter().enumerate() {
            cohort.push(rec(1000 + k as u64, 1, 80.0, 80.0 + e * (3.0f64 / 4.0).sqrt(), 1, 0));
        }
        let m = representativeness_check(&cohort, &AuditConfig::default()).unwrap();
        assert!((m.group_values[&1] - 0.04).abs() < 1e-9);
        assert!(m.flagged);
    }

    #[test]
    fn ppr_proportional_sampling() {
        let cohort: Vec<PatientRecord> = (0..100)
            .map(|i| rec(i, u8::from(i < 20), 90.0, 90.0 + (i % 7) as f64 * 0.3, 1, 0))
            .collect();
        let cfg = AuditConfig { target_prevalence: Some(0.2), ..AuditConfig::default() };
        let m = representativeness_check(&cohort, &cfg).unwrap();
        assert!((m.details["ppr_1"] - 1.0).abs() < 1e-12);
        assert!((m.details["ppr_0"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_error_samples_are_not_flagged() {
        let cohort: Vec<PatientRecord> = (0..40)
            .map(|i| rec(i, (i % 2) as u8, 90.0, 90.0 + ((i / 2) % 5) as f64, 1, 0))
            .collect();
        let m = information_bias_test(&cohort, &AuditConfig::default()).unwrap();
        assert!((m.test.unwrap().p_value - 0.5).abs() < 1e-12);
        assert!(!m.flagged);
    }

    #[test]
    fn gold_free_measurement_metrics_error() {
        let cohort: Vec<PatientRecord> = (0..10)
            .map(|i| PatientRecord { w_true: None, epsilon: None, ..rec(i, (i % 2) as u8, 90.0, 91.0, 1, 0) })
            .collect();
        let cfg = AuditConfig::default();
        assert!(matches!(information_bias_test(&cohort, &cfg), Err(Error::NoGoldStandard)));
        assert!(matches!(representativeness_check(&cohort, &cfg), Err(Error::NoGoldStandard)));
        assert!(matches!(group_auc_comparison(&cohort, &cfg), Err(Error::NoGoldStandard)));
    }

    #[test]
    fn equal_treatment_rates_not_flagged() {
        let mut cohort = Vec::new();
        for i in 0..40u64 {
            cohort.push(rec(i, (i % 2) as u8, 85.0, 86.0, u8::from(i % 4 < 2), 0));
        }
        let cfg = AuditConfig::default();
        let td = treatment_disparity_test(&cohort, &cfg).unwrap();
        assert_eq!(td.test.unwrap().p_value, 0.5);
        assert!(!td.flagged);
        let eo = equality_of_opportunity_test(&cohort, &cfg).unwrap();
        assert_eq!(eo.group_values[&0], 0.0);
        assert_eq!(eo.group_values[&1], 0.0);
        assert_eq!(eo.test.unwrap().statistic, 0.0);
        assert_eq!(eo.test.unwrap().p_value, 1.0);
    }

    #[test]
    fn empty_hypoxemic_stratum_is_untestable() {
        let cohort: Vec<PatientRecord> = (0..20)
            .map(|i| rec(i, (i % 2) as u8, if i % 2 == 0 { 85.0 } else { 95.0 }, 93.0, 0, 0))
            .collect();
        let m = treatment_disparity_test(&cohort, &AuditConfig::default()).unwrap();
        assert!(matches!(m.status, MetricStatus::Untestable(_)));
        assert!(!m.flagged);
    }

    #[test]
    fn deviations_weighted_sum_zero() {
        let mut cohort = Vec::new();
        for i in 0..37u64 {
            cohort.push(rec(i, 0, 84.0, 85.0, u8::from(i % 5 != 0), 0));
        }
        for i in 0..11u64 {
            cohort.push(rec(100 + i, 1, 84.0, 88.0, u8::from(i % 3 == 0), 0));
        }
        let m = equality_of_opportunity_test(&cohort, &AuditConfig::default()).unwrap();
        let sum = m.details["n_0"] * m.group_values[&0] + m.details["n_1"] * m.group_values[&1];
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn tau_and_decomposition() {
        // outcome independent of treatment
        let cohort: Vec<PatientRecord> = (0..80)
            .map(|i| rec(i, (i % 2) as u8, 85.0, 86.0, u8::from(i % 4 < 2), u8::from(i % 8 == 0 || i % 8 == 3)))
            .collect();
        let cfg = AuditConfig::default();
        let tau = estimate_tau(&cohort, &cfg).unwrap();
        assert!(tau.tau.abs() < 1e-12);
        let (gap, d) = treatment_gap_and_outcome_decomposition(&cohort, &cfg, 0.0).unwrap();
        assert_eq!(d.contrast, Some(0.0));
        assert_eq!(d.flagged, gap.flagged);
        let (gap, d) = treatment_gap_and_outcome_decomposition(&cohort, &cfg, 0.03).unwrap();
        assert!((d.contrast.unwrap() - 0.03 * gap.contrast.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tau_needs_both_treatment_arms() {
        let cohort: Vec<PatientRecord> = (0..10).map(|i| rec(i, (i % 2) as u8, 85.0, 86.0, 1, 0)).collect();
        assert!(matches!(estimate_tau(&cohort, &AuditConfig::default()), Err(Error::Untestable(_))));
    }

    #[test]
    fn identical_outcome_rates() {
        let cohort: Vec<PatientRecord> = (0..40).map(|i| rec(i, (i % 2) as u8, 90.0, 91.0, 1, u8::from(i % 4 < 2))).collect();
        let m = observed_outcome_gap(&cohort, &AuditConfig::default()).unwrap();
        assert_eq!(m.contrast, Some(0.0));
        assert_eq!(m.test.unwrap().p_value, 1.0);
    }

    #[test]
    fn systemic_needs_variation_in_wstar() {
        let cohort: Vec<PatientRecord> = (0..10).map(|i| rec(i, (i % 2) as u8, 90.0, 91.0, (i % 3 == 0) as u8, 0)).collect();
        assert!(matches!(systemic_bias_tests(&cohort, &AuditConfig::default()), Err(Error::Untestable(_))));
    }

    #[test]
    fn separated_logistic_falls_back_to_cmh() {
        // Z perfectly determined by W*: logistic separates, CMH strata are single-column
        let mut cohort = Vec::new();
        for i in 0..60u64 {
            let w_star = 85.0 + (i % 12) as f64;
            cohort.push(rec(i, (i % 2) as u8, 88.0, w_star, u8::from(w_star < 92.0), 0));
        }
        let (logistic, cmh) = systemic_bias_tests(&cohort, &AuditConfig::default()).unwrap();
        assert!(matches!(logistic.status, MetricStatus::Untestable(_)));
        assert!(!logistic.flagged);
        // every stratum has an empty treatment column
        assert!(matches!(cmh.status, MetricStatus::Untestable(_)));
    }

    #[test]
    fn auc_equal_when_measurement_is_exact() {
        let cohort: Vec<PatientRecord> = (0..200)
            .map(|i| {
                let w = 80.0 + (i / 2) as f64 * 0.15;
                rec(i, (i % 2) as u8, w, w, 1, 0)
            })
            .collect();
        let m = group_auc_comparison(&cohort, &AuditConfig::default()).unwrap();
        assert_eq!(m.group_values[&0], 1.0);
        assert_eq!(m.group_values[&1], 1.0);
        assert_eq!(m.contrast, Some(0.0));
        assert!(!m.flagged);
    }

    #[test]
    fn auc_single_class_group_untestable() {
        let cohort: Vec<PatientRecord> = (0..20)
            .map(|i| rec(i, (i % 2) as u8, if i % 2 == 1 { 80.0 } else { 80.0 + i as f64 }, 90.0, 1, 0))
            .collect();
        let m = group_auc_comparison(&cohort, &AuditConfig::default()).unwrap();
        assert!(matches!(m.status, MetricStatus::Untestable(_)));
    }

    #[test]
    fn audit_rejects_empty_and_bad_config() {
        assert!(run_full_audit(&[], &AuditConfig::default(), "x").is_err());
        let cohort = vec![rec(0, 0, 90.0, 91.0, 1, 0), rec(1, 1, 90.0, 92.0, 0, 0)];
        let bad = AuditConfig { flag_level: 1.5, ..AuditConfig::default() };
        assert!(run_full_audit(&cohort, &bad, "x").is_err());
    }
}
