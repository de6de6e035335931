//! Command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::counterfactuals::{cf_manipulate_payoff, cf_provide_type, cf_redistribute, welfare_curve, PolicyOutcome};
use crate::diagnostics::{
    calibration_bins, delta_auc_with_choice, fit_moments, moment_ks_tests, unbiasedness_test, DeltaAuc, KsTest,
    MomentPair, PoissonBinomialTest, MOMENT_FAMILIES,
};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_fitted, fit_prepared, group_by_physician, prepare_physician};
use crate::io::{
    hash_json, params_by_physician, parse_patients_csv, read_estimates_csv, read_json, write_estimates_csv, write_json,
    write_metadata, write_patients_csv, write_welfare_csv, EstimateRow, RunConfig, RunMetadata,
};
use crate::model::PatientCase;
use crate::simulator::{sensitivity_sweep, simulate_population, PopulationSpec};

#[derive(Debug, Parser)]
#[command(name = "dxchoice", version, about = "Simulate, estimate and evaluate physician treatment choice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic patients file from a population spec.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the true physician parameters as an estimates file.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit every physician by simulated maximum likelihood.
    Estimate {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit every physician and add bootstrap intervals.
    Bootstrap {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Unbiasedness tests, AUC gains and calibration bins.
    Diagnose {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        bin_size: usize,
    },
    /// Evaluate the three policies.
    Counterfactual {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target change in total prescribing for the payoff policy, in
        /// percent; defaults to the change under the type-information policy.
        #[arg(long, allow_hyphen_values = true)]
        target: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Planner welfare over preference weights for the three policies.
    Welfare {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        step: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Change in decisions per unit of type-signal noise, per physician.
    Sensitivity {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Observed against simulated decision rates.
    FitMoments {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_patients(path: &Path) -> Result<Vec<PatientCase>> {
    let parsed = parse_patients_csv(path)?;
    if parsed.clamped > 0 {
        eprintln!("warning: {}: {} risks clamped into range", path.display(), parsed.clamped);
    }
    Ok(parsed.cases)
}

fn meta(command: &str, cfg: &RunConfig) -> RunMetadata {
    RunMetadata::new(command, cfg.seed, cfg.hash())
}

fn estimate(cases: &[PatientCase], cfg: &RunConfig, reps: Option<usize>) -> Result<(Vec<EstimateRow>, Vec<String>)> {
    let ecfg = cfg.estimator();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (id, group) in group_by_physician(cases) {
        let (_, data) = match prepare_physician(&group, &ecfg, cfg.seed) {
            Ok(v) => v,
            Err(e @ Error::TooFewObservations { .. }) => {
                eprintln!("warning: {e}");
                skipped.push(id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut fit = fit_prepared(&id, &data, &ecfg, cfg.seed);
        if let Some(n) = reps {
            fit.bootstrap = Some(bootstrap_fitted(&data, &fit, &ecfg, n, cfg.seed)?);
        }
        rows.push(EstimateRow::from(&fit));
    }
    Ok((rows, skipped))
}

#[derive(Serialize)]
struct PhysicianDiagnostics {
    physician_id: String,
    unbiasedness: PoissonBinomialTest,
    auc_gain: Option<DeltaAuc>,
}

#[derive(Serialize)]
struct MomentReport {
    pairs: Vec<MomentPair>,
    ks: BTreeMap<String, KsTest>,
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { config, out, seed, truth } => {
            let mut spec: PopulationSpec = read_json(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let pop = simulate_population(&spec)?;
            write_patients_csv(&out, &pop.cases)?;
            let hash = hash_json(&spec);
            write_metadata(&out, &RunMetadata::new("simulate", spec.seed, hash.clone()))?;
            if let Some(t) = truth {
                let rows: Vec<EstimateRow> = pop
                    .physicians
                    .iter()
                    .map(|(id, p)| EstimateRow {
                        physician_id: id.clone(),
                        n: spec.patients_per_physician,
                        params: *p,
                        loglik: f64::NAN,
                        converged: true,
                        intervals: None,
                    })
                    .collect();
                write_estimates_csv(&t, &rows)?;
                write_metadata(&t, &RunMetadata::new("simulate", spec.seed, hash))?;
            }
            Ok(format!("simulated {} patients for {} physicians -> {}", pop.cases.len(), pop.physicians.len(), out.display()))
        }
        Command::Estimate { patients, out, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let (rows, skipped) = estimate(&cases, &cfg, None)?;
            write_estimates_csv(&out, &rows)?;
            let converged = rows.iter().filter(|r| r.converged).count();
            write_metadata(&out, &meta("estimate", &cfg).note("skipped", skipped.join(" ")))?;
            Ok(format!(
                "estimated {} physicians ({} converged, {} skipped) -> {}",
                rows.len(),
                converged,
                skipped.len(),
                out.display()
            ))
        }
        Command::Bootstrap { patients, out, reps, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let n = reps.unwrap_or(cfg.bootstrap_reps);
            let (rows, skipped) = estimate(&cases, &cfg, Some(n))?;
            write_estimates_csv(&out, &rows)?;
            write_metadata(
                &out,
                &meta("bootstrap", &cfg).note("reps", n.to_string()).note("skipped", skipped.join(" ")),
            )?;
            Ok(format!("bootstrapped {} physicians with {n} replications -> {}", rows.len(), out.display()))
        }
        Command::Diagnose { patients, out, bin_size } => {
            let cases = load_patients(&patients)?;
            let mut per = Vec::new();
            let mut rejected = 0;
            for (id, group) in group_by_physician(&cases) {
                let unbiasedness = unbiasedness_test(&group)?;
                rejected += usize::from(unbiasedness.reject_at_5pct);
                let auc_gain = match delta_auc_with_choice(&group) {
                    Ok(v) => Some(v),
                    Err(Error::Degenerate(_) | Error::Domain(_)) => None,
                    Err(e) => return Err(e),
                };
                per.push(PhysicianDiagnostics { physician_id: id, unbiasedness, auc_gain });
            }
            let scores: Vec<f64> = cases.iter().map(|c| c.risk()).collect();
            let labels: Vec<bool> = cases.iter().map(|c| c.y).collect();
            let bins = calibration_bins(&scores, &labels, bin_size)?;
            #[derive(Serialize)]
            struct Report {
                physicians: Vec<PhysicianDiagnostics>,
                calibration: Vec<crate::diagnostics::CalibrationPoint>,
            }
            let n = per.len();
            write_json(&out, &Report { physicians: per, calibration: bins })?;
            let cfg = RunConfig::default();
            write_metadata(&out, &meta("diagnose", &cfg).note("bin_size", bin_size.to_string()))?;
            Ok(format!("{rejected} of {n} physicians reject unbiased predictions at 5% -> {}", out.display()))
        }
        Command::Counterfactual { patients, estimates, out, target, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let est = params_by_physician(&read_estimates_csv(&estimates)?);
            let (p1, _) = cf_provide_type(&cases, &est, cfg.decision_mode, cfg.seed)?;
            let target = target.unwrap_or(p1.delta_total_pct);
            let (p2, _) = cf_manipulate_payoff(&cases, &est, target, cfg.decision_mode, cfg.seed)?;
            let (p3, _) = cf_redistribute(&cases, &est, cfg.pooling)?;
            let outcomes: Vec<PolicyOutcome> = vec![p1, p2, p3];
            write_json(&out, &outcomes)?;
            write_metadata(&out, &meta("counterfactual", &cfg).note("kappa_target_pct", target.to_string()))?;
            Ok(format!(
                "total prescribing change: {:.2}% / {:.2}% / {:.2}% (kappa {:.4}) -> {}",
                outcomes[0].delta_total_pct,
                outcomes[1].delta_total_pct,
                outcomes[2].delta_total_pct,
                outcomes[1].kappa.unwrap_or(f64::NAN),
                out.display()
            ))
        }
        Command::Welfare { patients, estimates, out, step, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let est = params_by_physician(&read_estimates_csv(&estimates)?);
            let (p1, d1) = cf_provide_type(&cases, &est, cfg.decision_mode, cfg.seed)?;
            let (_, d2) = cf_manipulate_payoff(&cases, &est, p1.delta_total_pct, cfg.decision_mode, cfg.seed)?;
            let (_, d3) = cf_redistribute(&cases, &est, cfg.pooling)?;
            let curve = welfare_curve(&cases, &[d1, d2, d3], step.unwrap_or(cfg.welfare_grid_step))?;
            write_welfare_csv(&out, &curve)?;
            write_metadata(&out, &meta("welfare", &cfg))?;
            let crossing = curve.crossing(0, 2).map_or("none".to_string(), |x| format!("{x:.3}"));
            Ok(format!("welfare curve at {} points, policy 1 overtakes policy 3 at {crossing} -> {}", curve.grid.len(), out.display()))
        }
        Command::Sensitivity { patients, estimates, out, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let est = params_by_physician(&read_estimates_csv(&estimates)?);
            let mut w = csv::Writer::from_writer(File::create(&out)?);
            w.write_record(["physician_id", "sigma_xi", "percent_change"])?;
            let groups = group_by_physician(&cases);
            for (id, group) in &groups {
                let base = est.get(id).ok_or_else(|| Error::MissingEstimate(id.clone()))?;
                let seed = crate::sampling::keyed_seed(cfg.seed, id);
                for p in sensitivity_sweep(base, group, &cfg.sensitivity_grid, cfg.sensitivity_step, &cfg.smoothing, seed)? {
                    w.write_record([id.clone(), p.sigma_xi.to_string(), p.percent_change.to_string()])?;
                }
            }
            w.flush()?;
            write_metadata(&out, &meta("sensitivity", &cfg).note("measure", "mean absolute change in expected prescription probability, percentage points per step"))?;
            Ok(format!("sensitivity sweep for {} physicians -> {}", groups.len(), out.display()))
        }
        Command::FitMoments { patients, estimates, out, common } => {
            let cfg = load_config(&common)?;
            let cases = load_patients(&patients)?;
            let est = params_by_physician(&read_estimates_csv(&estimates)?);
            let fitted: Vec<PatientCase> = cases.into_iter().filter(|c| est.contains_key(&c.physician_id)).collect();
            let pairs = fit_moments(&fitted, &est, cfg.moment_mode, cfg.seed)?;
            let ks = moment_ks_tests(&pairs)?;
            let not_rejected = ks.iter().filter(|t| t.p_value > 0.05).count();
            let report = MomentReport {
                pairs,
                ks: MOMENT_FAMILIES.iter().map(|s| s.to_string()).zip(ks).collect(),
            };
            write_json(&out, &report)?;
            write_metadata(&out, &meta("fit-moments", &cfg))?;
            Ok(format!("{not_rejected} of 3 moment families not rejected by KS at 5% -> {}", out.display()))
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
