//! Synthetic inpatient cohorts.
//!
//! Generative order per patient: group A, true saturation W, measurement
//! error ε (so W* = W + ε), treatment Z from W*, and outcome Y from (W, Z).
//! Differential measurement error and systemic bias in treatment are
//! independent switches; neither changes which random draws a patient gets.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{bits_to_open_unit, Channel, PatientStream};
use crate::stats::special::{normal_cdf, normal_quantile};

pub const W_MIN: f64 = 70.0;
pub const W_MAX: f64 = 100.0;

/// Key for the replicate streams used by [`oracle_tau`].
const ORACLE_SEED: u64 = 0x7a75_5f6f_7261_636c;

/// Generative parameters. Percent units for saturations, percentage points for
/// errors, logit scale for the treatment and outcome coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpParams {
    pub saturation_mean: f64,
    pub saturation_sd: f64,
    /// Overread shared by every patient.
    pub err_base: f64,
    pub err_noise_sd: f64,
    /// Extra overread for A = 1 when measurement bias is on.
    pub err_group_shift: f64,
    /// Extra overread per point of (err_pivot - W)+ for A = 1 when measurement bias is on.
    pub err_group_slope: f64,
    pub err_pivot: f64,
    pub treat_intercept: f64,
    pub treat_slope: f64,
    /// Logit shift for A = 1 when systemic bias is on (negative = less treatment).
    pub treat_group_penalty: f64,
    /// Protocol threshold on W*.
    pub w_treat: f64,
    /// True-hypoxemia threshold on W.
    pub w_hypox: f64,
    pub out_intercept: f64,
    pub out_severity: f64,
    pub out_benefit: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            saturation_mean: 92.0,
            saturation_sd: 6.0,
            err_base: 1.4,
            err_noise_sd: 1.9,
            err_group_shift: 0.1,
            err_group_slope: 0.42,
            err_pivot: 95.0,
            treat_intercept: 1.45,
            treat_slope: 0.03,
            treat_group_penalty: -0.85,
            w_treat: 92.0,
            w_hypox: 88.0,
            out_intercept: -2.0,
            out_severity: 0.6,
            out_benefit: 3.5,
        }
    }
}

impl DgpParams {
    /// Defaults with every group-dependent term removed, so no channel can
    /// produce a disparity regardless of the scenario toggles.
    pub fn structurally_unbiased() -> Self {
        Self {
            err_group_shift: 0.0,
            err_group_slope: 0.0,
            treat_group_penalty: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let all = [
            self.saturation_mean,
            self.saturation_sd,
            self.err_base,
            self.err_noise_sd,
            self.err_group_shift,
            self.err_group_slope,
            self.err_pivot,
            self.treat_intercept,
            self.treat_slope,
            self.treat_group_penalty,
            self.w_treat,
            self.w_hypox,
            self.out_intercept,
            self.out_severity,
            self.out_benefit,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        for (name, v) in [
            ("w_treat", self.w_treat),
            ("w_hypox", self.w_hypox),
            ("err_pivot", self.err_pivot),
        ] {
            if !(v > W_MIN && v < W_MAX) {
                return bad(format!("{name} = {v} must lie in ({W_MIN}, {W_MAX})"));
            }
        }
        if self.w_hypox > self.w_treat {
            return bad(format!(
                "w_hypox ({}) must not exceed w_treat ({})",
                self.w_hypox, self.w_treat
            ));
        }
        if !(self.err_noise_sd > 0.0) {
            return bad("err_noise_sd must be positive".into());
        }
        if self.saturation_sd < 0.0 {
            return bad("saturation_sd must be non-negative".into());
        }
        Ok(())
    }

    /// Parses a flat `key = value` document; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: Self = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentMode {
    /// Bernoulli draw from a logistic model in W* (and A when systemic bias is on).
    Stochastic,
    /// Z = 1(W* < w_treat).
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_total: usize,
    pub p_group1: f64,
    pub seed: u64,
    pub measurement_bias_on: bool,
    pub systemic_bias_on: bool,
    pub treatment_mode: TreatmentMode,
    pub dgp: DgpParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_total: 2500,
            p_group1: 0.2,
            seed: 20_240_601,
            measurement_bias_on: true,
            systemic_bias_on: true,
            treatment_mode: TreatmentMode::Stochastic,
            dgp: DgpParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_total < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_total must be at least 2, got {}",
                self.n_total
            )));
        }
        if !(self.p_group1 > 0.0 && self.p_group1 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_group1 must lie in (0, 1), got {}",
                self.p_group1
            )));
        }
        self.dgp.validate()
    }
}

/// One patient. `w_true` and `epsilon` are `None` for ingested cohorts
/// without a gold-standard arterial measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub group_a: u8,
    pub w_true: Option<f64>,
    pub w_star: f64,
    pub epsilon: Option<f64>,
    pub treated: u8,
    pub outcome: u8,
    /// W + ε fell outside [0, 100] and W* was clamped.
    #[serde(default)]
    pub clamped: bool,
}

pub fn has_gold_standard(cohort: &[PatientRecord]) -> bool {
    cohort.iter().all(|r| r.w_true.is_some() && r.epsilon.is_some())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// True saturation from a normal(saturation_mean, saturation_sd) law
/// truncated to [70, 100], by inverse CDF of one uniform draw.
pub fn sample_true_saturation(uniform_draw: f64, params: &DgpParams) -> f64 {
    let (mu, sd) = (params.saturation_mean, params.saturation_sd);
    if !(sd > 0.0) {
        return mu.clamp(W_MIN, W_MAX);
    }
    let lo = normal_cdf((W_MIN - mu) / sd);
    let hi = normal_cdf((W_MAX - mu) / sd);
    let p = (lo + uniform_draw.clamp(0.0, 1.0) * (hi - lo)).clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
    match normal_quantile(p) {
        Ok(z) => (mu + sd * z).clamp(W_MIN, W_MAX),
        Err(_) => mu.clamp(W_MIN, W_MAX),
    }
}

/// ε = b0 + [bias on, A = 1]·(b1 + s·(w_ref − W)+) + σ·noise.
pub fn measurement_error(
    w_true: f64,
    group_a: u8,
    measurement_bias_on: bool,
    noise_draw: f64,
    params: &DgpParams,
) -> f64 {
    let differential = if measurement_bias_on && group_a == 1 {
        params.err_group_shift + params.err_group_slope * (params.err_pivot - w_true).max(0.0)
    } else {
        0.0
    };
    params.err_base + differential + params.err_noise_sd * noise_draw
}

/// P(Z = 1) under the stochastic regime.
pub fn treatment_probability(w_star: f64, group_a: u8, systemic_bias_on: bool, params: &DgpParams) -> f64 {
    let penalty = if systemic_bias_on && group_a == 1 {
        params.treat_group_penalty
    } else {
        0.0
    };
    sigmoid(params.treat_intercept + params.treat_slope * (params.w_treat - w_star) + penalty)
}

pub fn treatment_assignment(
    w_star: f64,
    group_a: u8,
    systemic_bias_on: bool,
    mode: TreatmentMode,
    uniform_draw: f64,
    params: &DgpParams,
) -> u8 {
    match mode {
        TreatmentMode::Deterministic => u8::from(w_star < params.w_treat),
        TreatmentMode::Stochastic => {
            u8::from(uniform_draw < treatment_probability(w_star, group_a, systemic_bias_on, params))
        }
    }
}

/// P(Y = 1 | W, Z) = sigmoid(λ0 + λ1·(w_hypox − W)+ − λ2·Z).
pub fn outcome_risk(w_true: f64, treated: u8, params: &DgpParams) -> f64 {
    let severity = (params.w_hypox - w_true).max(0.0);
    sigmoid(params.out_intercept + params.out_severity * severity - params.out_benefit * f64::from(treated))
}

pub fn outcome_assignment(w_true: f64, treated: u8, uniform_draw: f64, params: &DgpParams) -> u8 {
    u8::from(uniform_draw < outcome_risk(w_true, treated, params))
}

fn generate_patient(config: &ScenarioConfig, patient_id: u64) -> PatientRecord {
    let p = &config.dgp;
    let stream = PatientStream::new(config.seed, patient_id);
    let group_a = u8::from(stream.uniform(Channel::Group) < config.p_group1);
    let w_true = sample_true_saturation(stream.uniform(Channel::Saturation), p);
    let epsilon = measurement_error(
        w_true,
        group_a,
        config.measurement_bias_on,
        stream.normal(Channel::Noise),
        p,
    );
    let raw = w_true + epsilon;
    let w_star = raw.clamp(0.0, 100.0);
    let treated = treatment_assignment(
        w_star,
        group_a,
        config.systemic_bias_on,
        config.treatment_mode,
        stream.uniform(Channel::Treat),
        p,
    );
    let outcome = outcome_assignment(w_true, treated, stream.uniform(Channel::Outcome), p);
    PatientRecord {
        patient_id,
        group_a,
        w_true: Some(w_true),
        w_star,
        epsilon: Some(epsilon),
        treated,
        outcome,
        clamped: raw != w_star,
    }
}

/// Generates `n_total` patients. Bit-identical for identical configs and
/// independent of thread scheduling.
pub fn generate_cohort(config: &ScenarioConfig) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    Ok((0..config.n_total as u64)
        .into_par_iter()
        .map(|id| generate_patient(config, id))
        .collect())
}

/// Monte Carlo estimate of E[Y(0)] − E[Y(1)] over the cohort's true
/// saturations, straight from the outcome model. Both potential outcomes of a
/// replicate share one uniform draw.
pub fn oracle_tau(params: &DgpParams, cohort: &[PatientRecord], replicate_count: usize) -> Result<f64> {
    if replicate_count == 0 {
        return Err(Error::InvalidArgument("replicate_count must be at least 1".into()));
    }
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    let total: i64 = cohort
        .par_iter()
        .map(|r| {
            let w = r.w_true.ok_or(Error::NoGoldStandard)?;
            let (risk0, risk1) = (outcome_risk(w, 0, params), outcome_risk(w, 1, params));
            let mut rng = PatientStream::new(ORACLE_SEED, r.patient_id).channel_rng(Channel::Oracle);
            let mut diff = 0i64;
            for _ in 0..replicate_count {
                let u = bits_to_open_unit(rand_core::RngCore::next_u64(&mut rng));
                diff += i64::from(u < risk0) - i64::from(u < risk1);
            }
            Ok(diff)
        })
        .collect::<Result<Vec<i64>>>()?
        .into_iter()
        .sum();
    Ok(total as f64 / (cohort.len() * replicate_count) as f64)
}
