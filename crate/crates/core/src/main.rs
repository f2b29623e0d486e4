use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use equity_audit::cohort::{generate_cohort, DgpParams, ScenarioConfig, TreatmentMode};
use equity_audit::figure::figure_summary;
use equity_audit::grid::{run_scenario_grid, write_grid_outputs, ScenarioGridSpec};
use equity_audit::io::{read_cohort_csv, write_cohort_csv};
use equity_audit::metrics::{run_full_audit, AuditConfig, MetricKind, MetricStatus};
use equity_audit::report::{render_report, ReportFormat};
use equity_audit::{Error, Result};

/// Simulate pulse-oximetry cohorts and audit them for data-equity problems.
#[derive(Debug, Parser)]
#[command(name = "equity-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic cohort as CSV.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a cohort CSV. Files without w_true/epsilon get the
    /// outcome and systemic-bias metrics only.
    Audit {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        audit: AuditArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
        /// Scenario label used in the report.
        #[arg(long, default_value = "cohort")]
        label: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and audit the four bias scenarios; writes table1.md,
    /// table2.{md,csv,json} and cohort_<scenario>.csv.
    Grid {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        audit: AuditArgs,
        #[arg(long, default_value = "grid_out")]
        out: PathBuf,
    },
    /// Five-number summaries of W within each W* bin, per group, as CSV.
    Figure {
        /// Cohort CSV with a gold standard; a cohort is simulated when omitted.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        /// Reference line (hypoxemia threshold).
        #[arg(long, default_value_t = 88.0)]
        w_hypox: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    p_group1: f64,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    measurement_bias: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    systemic_bias: bool,
    #[arg(long, value_enum, default_value_t = TreatmentMode::Stochastic)]
    treatment_mode: TreatmentMode,
    /// TOML file overriding generative parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ScenarioArgs {
    fn dgp(&self) -> Result<DgpParams> {
        match &self.params {
            Some(path) => DgpParams::load(path),
            None => Ok(DgpParams::default()),
        }
    }

    fn config(&self) -> Result<ScenarioConfig> {
        let config = ScenarioConfig {
            n_total: self.n,
            p_group1: self.p_group1,
            seed: self.seed,
            measurement_bias_on: self.measurement_bias,
            systemic_bias_on: self.systemic_bias,
            treatment_mode: self.treatment_mode,
            dgp: self.dgp()?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Smallest error contrast worth detecting, percentage points.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    flag_level: f64,
    #[arg(long)]
    w_hypox: Option<f64>,
    #[arg(long)]
    w_treat: Option<f64>,
    /// W* stratum width for the CMH test.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Population share of A=1, for participation-to-prevalence ratios.
    #[arg(long)]
    target_prevalence: Option<f64>,
}

impl AuditArgs {
    /// Thresholds default to the generative parameters when given.
    fn config(&self, dgp: Option<&DgpParams>) -> Result<AuditConfig> {
        let base = AuditConfig::default();
        let config = AuditConfig {
            alpha: self.alpha,
            power: self.power,
            delta: self.delta,
            flag_level: self.flag_level,
            w_hypox: self.w_hypox.or(dgp.map(|p| p.w_hypox)).unwrap_or(base.w_hypox),
            w_treat: self.w_treat.or(dgp.map(|p| p.w_treat)).unwrap_or(base.w_treat),
            target_prevalence: self.target_prevalence,
            wstar_bin_width: self.bin_width,
        };
        config.validate()?;
        Ok(config)
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let cohort = generate_cohort(&scenario.config()?)?;
            let mut buf = Vec::new();
            write_cohort_csv(&cohort, &mut buf)?;
            emit(&String::from_utf8(buf).expect("csv output is UTF-8"), out.as_ref())
        }
        Command::Audit { input, audit, format, label, out } => {
            let config = audit.config(None)?;
            let cohort = read_cohort_csv(&input, false)?;
            let report = run_full_audit(&cohort, &config, &label)?;
            emit(&render_report(std::slice::from_ref(&report), format)?, out.as_ref())?;
            let untestable = |k| matches!(report.metric(k).map(|m| &m.status), Some(MetricStatus::Untestable(_)));
            if untestable(MetricKind::SystemicLogistic) && untestable(MetricKind::SystemicCmh) {
                return Err(Error::Untestable(
                    "neither the logistic nor the CMH systemic-bias test could be computed".into(),
                ));
            }
            Ok(())
        }
        Command::Grid { scenario, audit, out } => {
            let base = scenario.config()?;
            let config = audit.config(scenario.params.is_some().then_some(&base.dgp))?;
            let output = run_scenario_grid(&ScenarioGridSpec::new(base), &config)?;
            write_grid_outputs(&output, &out)?;
            eprintln!("wrote grid outputs to {}", out.display());
            Ok(())
        }
        Command::Figure { input, scenario, bin_width, w_hypox, out } => {
            let cohort = match input {
                Some(path) => read_cohort_csv(path, true)?,
                None => generate_cohort(&scenario.config()?)?,
            };
            let fig = figure_summary(&cohort, bin_width, (0.0, 100.0), w_hypox)?;
            emit(&fig.to_csv()?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
