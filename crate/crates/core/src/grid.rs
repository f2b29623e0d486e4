//! The four-scenario bias grid and the threshold-rule summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, outcome_assignment, PatientRecord, ScenarioConfig, TreatmentMode};
use crate::error::Result;
use crate::io::save_cohort_csv;
use crate::metrics::{run_full_audit, AuditConfig, EquityReport};
use crate::report::{write_report, ReportFormat};
use crate::rng::{Channel, PatientStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Both,
    MeasurementOnly,
    SystemicOnly,
    None,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Both, Scenario::MeasurementOnly, Scenario::SystemicOnly, Scenario::None];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Both => "both",
            Scenario::MeasurementOnly => "measurement_only",
            Scenario::SystemicOnly => "systemic_only",
            Scenario::None => "none",
        }
    }

    /// (measurement bias, systemic bias)
    pub fn toggles(self) -> (bool, bool) {
        match self {
            Scenario::Both => (true, true),
            Scenario::MeasurementOnly => (true, false),
            Scenario::SystemicOnly => (false, true),
            Scenario::None => (false, false),
        }
    }
}

/// Four scenarios sharing every setting of `base` except the two bias toggles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGridSpec {
    pub base: ScenarioConfig,
}

impl ScenarioGridSpec {
    pub fn new(base: ScenarioConfig) -> Self {
        Self { base }
    }

    pub fn config(&self, scenario: Scenario) -> ScenarioConfig {
        let (measurement_bias_on, systemic_bias_on) = scenario.toggles();
        ScenarioConfig { measurement_bias_on, systemic_bias_on, ..self.base }
    }
}

/// Threshold-rule regime on the both-biases cohort with Z = 1(W* < w_treat).
/// Arrays are indexed by group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Summary {
    pub n_group: [usize; 2],
    pub hypoxemic: [usize; 2],
    /// P(Z = 0 | W < w_hypox, A): hypoxemic patients the rule misses.
    pub untreated_hypoxemia: [f64; 2],
    /// P(W < w_hypox, Z = 0 | A).
    pub untreated_hypoxemia_joint: [f64; 2],
    /// P(Y = 1 | A) with treatment driven by the oximeter reading.
    pub ventilation_wstar: [f64; 2],
    /// P(Y = 1 | A) had treatment been driven by true saturation.
    pub ventilation_w: [f64; 2],
}

pub fn table1_summary(spec: &ScenarioGridSpec) -> Result<Table1Summary> {
    let config = ScenarioConfig {
        treatment_mode: TreatmentMode::Deterministic,
        ..spec.config(Scenario::Both)
    };
    let cohort = generate_cohort(&config)?;
    let p = &config.dgp;
    let mut n = [0usize; 2];
    let mut hypoxemic = [0usize; 2];
    let mut missed = [0usize; 2];
    let mut vent_wstar = [0usize; 2];
    let mut vent_w = [0usize; 2];
    for r in &cohort {
        let a = usize::from(r.group_a);
        let w = r.w_true.expect("generated cohorts carry the gold standard");
        n[a] += 1;
        if w < p.w_hypox {
            hypoxemic[a] += 1;
            missed[a] += usize::from(r.treated == 0);
        }
        vent_wstar[a] += usize::from(r.outcome);
        let u = PatientStream::new(config.seed, r.patient_id).uniform(Channel::Outcome);
        let z_w = u8::from(w < p.w_treat);
        vent_w[a] += usize::from(outcome_assignment(w, z_w, u, p));
    }
    let frac = |num: [usize; 2], den: [usize; 2]| {
        [0, 1].map(|a| if den[a] == 0 { 0.0 } else { num[a] as f64 / den[a] as f64 })
    };
    Ok(Table1Summary {
        n_group: n,
        hypoxemic,
        untreated_hypoxemia: frac(missed, hypoxemic),
        untreated_hypoxemia_joint: frac(missed, n),
        ventilation_wstar: frac(vent_wstar, n),
        ventilation_w: frac(vent_w, n),
    })
}

pub fn render_table1_markdown(t: &Table1Summary) -> String {
    let pct = |x: f64| format!("{:.4}%", 100.0 * x);
    let mut out = String::from("# Threshold rule Z = 1(W* < w_treat), both biases on\n\n");
    out.push_str("| Quantity | A=1 | A=0 |\n|---|---|---|\n");
    let mut row = |name: &str, v: [f64; 2]| {
        let _ = writeln!(out, "| {name} | {} | {} |", pct(v[1]), pct(v[0]));
    };
    row("Untreated hypoxemia among the hypoxemic", t.untreated_hypoxemia);
    row("Untreated hypoxemia, all patients", t.untreated_hypoxemia_joint);
    row("Ventilation, treatment from W*", t.ventilation_wstar);
    row("Ventilation, treatment from W", t.ventilation_w);
    let _ = writeln!(
        out,
        "\nPatients: A=1 {} ({} hypoxemic), A=0 {} ({} hypoxemic).",
        t.n_group[1], t.hypoxemic[1], t.n_group[0], t.hypoxemic[0]
    );
    out
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub cohorts: Vec<(Scenario, Vec<PatientRecord>)>,
    pub reports: Vec<EquityReport>,
    pub table1: Table1Summary,
}

/// Generates and audits the four scenarios under common random numbers.
/// Output order follows [`Scenario::ALL`].
pub fn run_scenario_grid(spec: &ScenarioGridSpec, audit: &AuditConfig) -> Result<GridOutput> {
    spec.base.validate()?;
    audit.validate()?;
    let results: Vec<(Scenario, Vec<PatientRecord>, EquityReport)> = Scenario::ALL
        .par_iter()
        .map(|&s| {
            let cohort = generate_cohort(&spec.config(s))?;
            let report = run_full_audit(&cohort, audit, s.label())?;
            Ok((s, cohort, report))
        })
        .collect::<Result<_>>()?;
    let table1 = table1_summary(spec)?;
    let (cohorts, reports) = results.into_iter().map(|(s, c, r)| ((s, c), r)).unzip();
    Ok(GridOutput { cohorts, reports, table1 })
}

/// Writes table1.md, table2.{md,csv,json} and cohort_<scenario>.csv.
pub fn write_grid_outputs(output: &GridOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("table1.md"), render_table1_markdown(&output.table1))?;
    for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        write_report(&output.reports, format, dir.join(format!("table2.{}", format.extension())))?;
    }
    for (scenario, cohort) in &output.cohorts {
        save_cohort_csv(cohort, dir.join(format!("cohort_{}.csv", scenario.label())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;

    fn spec(n: usize) -> ScenarioGridSpec {
        ScenarioGridSpec::new(ScenarioConfig { n_total: n, ..ScenarioConfig::default() })
    }

    #[test]
    fn scenarios_differ_only_in_toggles() {
        let s = spec(100);
        for sc in Scenario::ALL {
            let c = s.config(sc);
            assert_eq!((c.measurement_bias_on, c.systemic_bias_on), sc.toggles());
            assert_eq!(c.seed, s.base.seed);
            assert_eq!(c.n_total, s.base.n_total);
            assert_eq!(c.dgp, s.base.dgp);
        }
    }

    #[test]
    fn grid_shares_draws_and_fisher_rows() {
        let out = run_scenario_grid(&spec(1500), &AuditConfig::default()).unwrap();
        let labels: Vec<&str> = out.reports.iter().map(|r| r.scenario_label.as_str()).collect();
        assert_eq!(labels, ["both", "measurement_only", "systemic_only", "none"]);
        let w = |i: usize| out.cohorts[i].1.iter().map(|r| r.w_true).collect::<Vec<_>>();
        let e = |i: usize| out.cohorts[i].1.iter().map(|r| r.epsilon).collect::<Vec<_>>();
        assert!((1..4).all(|i| w(i) == w(0)));
        assert_eq!(e(0), e(1));
        assert_eq!(e(2), e(3));
        let fisher = |i: usize| out.reports[i].metric(MetricKind::Representativeness).unwrap().group_values.clone();
        assert_eq!(fisher(0), fisher(1));
        assert_eq!(fisher(2), fisher(3));
    }

    #[test]
    fn table1_w_driven_rates_ignore_group_under_deterministic_rule() {
        let t = table1_summary(&spec(4000)).unwrap();
        for a in 0..2 {
            assert!(t.untreated_hypoxemia_joint[a] <= t.untreated_hypoxemia[a]);
        }
        assert!(t.untreated_hypoxemia[1] > t.untreated_hypoxemia[0]);
        assert!(t.ventilation_wstar[1] > t.ventilation_w[1]);
        let md = render_table1_markdown(&t);
        assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 5);
    }

    #[test]
    fn writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario_grid(&spec(300), &AuditConfig::default()).unwrap();
        write_grid_outputs(&out, dir.path()).unwrap();
        for name in [
            "table1.md",
            "table2.md",
            "table2.csv",
            "table2.json",
            "cohort_both.csv",
            "cohort_measurement_only.csv",
            "cohort_systemic_only.csv",
            "cohort_none.csv",
        ] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
    }
}
