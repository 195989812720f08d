//! `feame` — fixed-effects dynamic logit panels from the command line.
//!
//! Subcommands cover the full pipeline: `simulate` panels, `split` long
//! histories into fixed windows, `estimate` slopes by conditional maximum
//! likelihood, compute causal parameters (`ame`, `decompose`, `weights`),
//! benchmark against full-likelihood estimators (`re-mle`, `true-ame`),
//! compare estimates (`hausman`), and run Monte Carlo studies (`mc`).
//!
//! Output is canonical JSON on stdout (stable field order, 17 significant
//! digits — identical inputs give byte-identical bytes), or a human table
//! with `--pretty`, or a file with `--out`. Exit codes: 0 success, 1 usage
//! error (bad flags or arguments), 2 data/estimation/identification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use feame::ame::{
    ame1_binary, ame1_by_covariate, ame_duration, ame_n, ame_xt, ate_jj, avg_transition_jj,
    diagonal_habit_matrix, log_odds_ratio, persistence_decomposition, AmeEstimate, AmeKind,
    DurationMargin,
};
use feame::inference::{bootstrap_se, hausman, HausmanKind};
use feame::jsonio::to_canonical_string;
use feame::likelihood::{cml_estimate, CmlOptions, ThetaEstimate};
use feame::mc::{csv_table, pvalue_cdf, run_experiment, DgpSpec, ExperimentConfig, HausmanTest};
use feame::model::{ModelKind, ModelSpec, Theta};
use feame::panel::{
    history_frequencies, load_panel_path, windows, write_panel_csv, CsvSchema, Individual,
    Panel, WindowMode,
};
use feame::remle::{
    mle_finite_mixture, mle_nouh, true_ame, HeterogeneityDist, MixtureOptions, TruthKind,
};
use feame::weights::{closed_form_weights, solve_weights, WeightTable};
use feame::{Error, Result};

#[derive(Parser)]
#[command(
    name = "feame",
    version,
    about = "Fixed-effects dynamic logit panels: estimation, marginal effects, simulation"
)]
struct Cli {
    /// Write the primary output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print a human-readable table instead of JSON (where applicable).
    #[arg(long, global = true)]
    pretty: bool,

    /// Worker threads for parallel sections (default: all cores; the
    /// FEAME_THREADS environment variable is the fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a binary panel from a named or custom DGP; emits CSV.
    Simulate {
        /// Named DGP (one of NoUH+1, NoUH-1, FinMix+1, FinMix-1, MixNor+1,
        /// MixNor-1). Alternatively give --beta and --het.
        #[arg(long, conflicts_with_all = ["beta", "het"])]
        dgp: Option<String>,
        /// Custom slope (with --het).
        #[arg(long, requires = "het")]
        beta: Option<f64>,
        /// Custom heterogeneity distribution: inline JSON or a path to a
        /// JSON file (e.g. {"kind":"degenerate","value":0}).
        #[arg(long, requires = "beta")]
        het: Option<String>,
        /// Individuals.
        #[arg(long = "N")]
        n: usize,
        /// Periods per individual.
        #[arg(long = "T")]
        t: usize,
        /// RNG seed.
        #[arg(long)]
        seed: u64,
    },

    /// Split histories into fixed-length windows; emits CSV.
    Split {
        /// Input panel CSV.
        #[arg(long)]
        panel: PathBuf,
        /// Window length.
        #[arg(long = "T")]
        t: usize,
        /// Which windows: "all" contiguous, or "first" only.
        #[arg(long, default_value = "all")]
        mode: String,
    },

    /// Fit the conditional-likelihood estimator; emits a slope-estimate
    /// JSON document.
    Estimate {
        /// Input panel CSV.
        #[arg(long)]
        panel: PathBuf,
        /// Model: bc-ar1, bc-ar1-x, bc-dur, or mnl-diaghabit.
        #[arg(long, default_value = "bc-ar1")]
        model: String,
        /// Split histories into windows of this length first (histories of
        /// unequal length require it).
        #[arg(long = "T")]
        t: Option<usize>,
        /// Which windows when splitting: "all" or "first".
        #[arg(long, default_value = "all")]
        mode: String,
        /// Duration cap for bc-dur.
        #[arg(long, default_value_t = 2)]
        d_max: usize,
        /// Number of alternatives (default: inferred from the data).
        #[arg(long)]
        alternatives: Option<usize>,
    },

    /// Plug-in causal parameters from a fitted model; emits an
    /// effect-estimate JSON document.
    Ame {
        /// Input panel CSV (the same panel the model was fit on).
        #[arg(long)]
        panel: PathBuf,
        /// Slope-estimate JSON from `estimate`.
        #[arg(long)]
        theta: PathBuf,
        /// Which parameter: AME1, PI_JJ, ATE_JJ, LOG_ODDS_JJ, AME1_X_CONST,
        /// AME_N, AME_XT, AME_DUR_01, AME_DUR_12, or AME_DUR_02.
        #[arg(long)]
        kind: String,
        /// Alternative j (PI_JJ, ATE_JJ, LOG_ODDS_JJ; default 1).
        #[arg(long)]
        j: Option<u8>,
        /// Horizon n (AME_N).
        #[arg(long)]
        n: Option<usize>,
        /// Calendar period t, 1-based (AME_XT, ATE_JJ).
        #[arg(long = "t")]
        period: Option<usize>,
        /// Which windows for history frequencies: "all" or "first".
        #[arg(long, default_value = "all")]
        mode: String,
        /// Attach a bootstrap standard error from this many replicates.
        #[arg(long = "bootstrap-B")]
        bootstrap_b: Option<usize>,
        /// Re-estimate the slope on windows of this length inside each
        /// bootstrap replicate (default: hold the slope fixed and bootstrap
        /// the history frequencies only).
        #[arg(long = "refit-T")]
        refit_t: Option<usize>,
        /// Bootstrap seed.
        #[arg(long, default_value_t = 1729)]
        seed: u64,
    },

    /// Identification weights for the one-period effect; emits a
    /// weight-table JSON document.
    Weights {
        /// Window length.
        #[arg(long = "T")]
        t: usize,
        /// Slope at which to evaluate the weights.
        #[arg(long)]
        beta: f64,
        /// Use the hand-derived closed forms (window lengths 3–7) instead
        /// of the linear-system solver.
        #[arg(long)]
        closed_form: bool,
    },

    /// Population value of a causal parameter under a heterogeneity
    /// distribution.
    TrueAme {
        /// Named DGP supplying both slope and heterogeneity.
        #[arg(long, conflicts_with_all = ["beta", "het"])]
        dgp: Option<String>,
        /// Slope (with --het).
        #[arg(long, requires = "het")]
        beta: Option<f64>,
        /// Heterogeneity distribution: inline JSON or a path.
        #[arg(long, requires = "beta")]
        het: Option<String>,
        /// Which parameter: AME1, AME_N, PI_11, or PI_01.
        #[arg(long, default_value = "AME1")]
        kind: String,
        /// Horizon n for AME_N.
        #[arg(long)]
        n: Option<usize>,
    },

    /// Full-likelihood benchmark estimators; emits a fit JSON document.
    ReMle {
        /// Input panel CSV (binary).
        #[arg(long)]
        panel: PathBuf,
        /// 1 = common intercept (no heterogeneity); 2 = two-point mixture.
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Random multistarts for the mixture fit.
        #[arg(long, default_value_t = 5)]
        multistarts: usize,
    },

    /// Hausman comparison of two estimate JSON files; emits a test JSON
    /// document.
    Hausman {
        /// Estimate that stays consistent under misspecification (e.g. the
        /// conditional-likelihood fit).
        #[arg(long)]
        consistent: PathBuf,
        /// Estimate that is efficient under the null (e.g. a
        /// full-likelihood fit).
        #[arg(long)]
        efficient: PathBuf,
        /// Which quantity is compared: BETA or AME.
        #[arg(long)]
        kind: String,
    },

    /// Run a Monte Carlo experiment from a JSON config; emits a result
    /// JSON document.
    Mc {
        /// Experiment configuration JSON
        /// {dgp, N, T, R, estimators, tests, seed, bootstrap_B, null}.
        #[arg(long)]
        config: PathBuf,
        /// Also write the per-estimator summary table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Raise the replication count to 1000 (full-scale run).
        #[arg(long)]
        full: bool,
        /// Also write sorted (p, CDF) pairs per test as CSV to this path.
        #[arg(long)]
        pvalues: Option<PathBuf>,
    },

    /// Persistence decomposition: state dependence vs heterogeneity; emits
    /// a table JSON document.
    Decompose {
        /// Input panel CSV.
        #[arg(long)]
        panel: PathBuf,
        /// Slope-estimate JSON from `estimate`.
        #[arg(long)]
        theta: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error (exit 1, not clap's default 2).
            let is_usage_error = e.use_stderr();
            let _ = e.print();
            return if is_usage_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => std::env::var("FEAME_THREADS")
            .ok()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("FEAME_THREADS must be an integer, got '{s}'")))
            })
            .transpose()?,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::invalid("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::computation(format!("thread pool setup failed: {e}")))?;
    }
    Ok(())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut owned = text.to_string();
            if !owned.ends_with('\n') {
                owned.push('\n');
            }
            std::fs::write(path, owned)?;
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{}", text.trim_end_matches('\n')) {
                if e.kind() == std::io::ErrorKind::BrokenPipe {
                    // Reader went away (e.g. piping into `head`); not an error.
                    std::process::exit(0);
                }
                return Err(e.into());
            }
        }
    }
    Ok(())
}

fn parse_window_mode(mode: &str) -> Result<WindowMode> {
    match mode {
        "all" => Ok(WindowMode::AllContiguous),
        "first" => Ok(WindowMode::FirstOnly),
        other => Err(Error::invalid(format!(
            "unknown window mode '{other}' (expected all or first)"
        ))),
    }
}

/// Parse a heterogeneity distribution from inline JSON or a file path.
fn parse_het(source: &str) -> Result<HeterogeneityDist> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        std::fs::read_to_string(source)?
    };
    let het: HeterogeneityDist = serde_json::from_str(&text)?;
    het.validate()?;
    Ok(het)
}

fn resolve_dgp(dgp: &Option<String>, beta: Option<f64>, het: &Option<String>) -> Result<DgpSpec> {
    match (dgp, beta, het) {
        (Some(label), None, None) => DgpSpec::from_label(label),
        (None, Some(beta), Some(het)) => DgpSpec::custom("custom", beta, parse_het(het)?),
        _ => Err(Error::invalid(
            "give either --dgp LABEL or both --beta and --het".into(),
        )),
    }
}

fn load_panel_csv(path: &PathBuf, alternatives: Option<usize>) -> Result<Panel> {
    let schema = CsvSchema {
        num_alternatives: alternatives,
        ..CsvSchema::default()
    };
    load_panel_path(path, &schema)
}

fn read_theta(path: &PathBuf) -> Result<ThetaEstimate> {
    let text = std::fs::read_to_string(path)?;
    let est: ThetaEstimate = serde_json::from_str(&text)?;
    est.model.validate()?;
    Ok(est)
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate {
            dgp,
            beta,
            het,
            n,
            t,
            seed,
        } => {
            let spec = resolve_dgp(dgp, *beta, het)?;
            let panel = feame::mc::simulate_panel(&spec, *n, *t, *seed)?;
            emit(&cli.out, &write_panel_csv(&panel))
        }

        Command::Split { panel, t, mode } => {
            let mode = parse_window_mode(mode)?;
            let input = load_panel_csv(panel, None)?;
            let split = windows(&input, *t, mode)?;
            if split.is_empty() {
                return Err(Error::data(format!(
                    "no history is at least {t} periods long"
                )));
            }
            emit(&cli.out, &write_panel_csv(&split))
        }

        Command::Estimate {
            panel,
            model,
            t,
            mode,
            d_max,
            alternatives,
        } => {
            let mode = parse_window_mode(mode)?;
            let input = load_panel_csv(panel, *alternatives)?;
            let spec = model_spec_for(model, &input, *d_max)?;
            let working = match t {
                Some(t) => windows(&input, *t, mode)?,
                None => input,
            };
            let est = cml_estimate(&working, &spec, &CmlOptions::default())?;
            if cli.pretty {
                emit(&cli.out, &pretty_theta(&est))
            } else {
                emit(&cli.out, &to_canonical_string(&est)?)
            }
        }

        Command::Ame {
            panel,
            theta,
            kind,
            j,
            n,
            period,
            mode,
            bootstrap_b,
            refit_t,
            seed,
        } => {
            let input = load_panel_csv(panel, None)?;
            let est = read_theta(theta)?;
            let kind = AmeKind::from_token(kind)?;
            let mode = parse_window_mode(mode)?;
            let request = AmeRequest {
                kind,
                j: *j,
                n: *n,
                period: *period,
                mode,
            };
            let output = compute_ame(&input, &est, &request)?;
            let output = match (bootstrap_b, &output) {
                (Some(b), AmeOutput::Single(point)) => {
                    let request = &request;
                    let est = &est;
                    let summary = bootstrap_se(
                        &input,
                        move |p: &Panel| {
                            let fitted = match refit_t {
                                Some(t) => cml_estimate(
                                    &windows(p, *t, mode)?,
                                    &est.model,
                                    &CmlOptions {
                                        init: Some(est.theta.clone()),
                                        ..CmlOptions::default()
                                    },
                                )?,
                                None => est.clone(),
                            };
                            match compute_ame(p, &fitted, request)? {
                                AmeOutput::Single(e) => Ok(e.value),
                                _ => Err(Error::invalid(
                                    "bootstrap needs a scalar effect".into(),
                                )),
                            }
                        },
                        *b,
                        *seed,
                    )?;
                    let mut with_se = point.clone().with_se(summary.se);
                    if summary.n_failures > 0 {
                        with_se.warnings.push(format!(
                            "{} of {} bootstrap replicates failed",
                            summary.n_failures, b
                        ));
                    }
                    AmeOutput::Single(with_se)
                }
                (Some(_), _) => {
                    return Err(Error::invalid(
                        "bootstrap standard errors apply to scalar effects only".into(),
                    ))
                }
                (None, _) => output,
            };
            let text = match &output {
                AmeOutput::Single(e) => {
                    if cli.pretty {
                        pretty_ame(e)
                    } else {
                        to_canonical_string(e)?
                    }
                }
                AmeOutput::PerCovariate(list) => {
                    let rows: Vec<Value> = list
                        .iter()
                        .map(|(x, e)| {
                            Ok(serde_json::json!({
                                "x": x,
                                "estimate": serde_json::to_value(e)?,
                            }))
                        })
                        .collect::<Result<_>>()?;
                    to_canonical_string(&rows)?
                }
                AmeOutput::Scalar {
                    kind,
                    value,
                    alternative,
                } => to_canonical_string(&serde_json::json!({
                    "kind": kind.token(),
                    "value": value,
                    "alternative": alternative,
                }))?,
            };
            emit(&cli.out, &text)
        }

        Command::Weights {
            t,
            beta,
            closed_form,
        } => {
            let table = if *closed_form {
                closed_form_weights(*t, *beta)?
            } else {
                solve_weights(*t, *beta)?
            };
            if cli.pretty {
                emit(&cli.out, &pretty_weights(&table))
            } else {
                emit(&cli.out, &to_canonical_string(&table)?)
            }
        }

        Command::TrueAme {
            dgp,
            beta,
            het,
            kind,
            n,
        } => {
            let (beta, het) = match (dgp, beta, het) {
                (Some(label), None, None) => {
                    let spec = DgpSpec::from_label(label)?;
                    (spec.beta, spec.het)
                }
                (None, Some(beta), Some(het)) => (*beta, parse_het(het)?),
                _ => {
                    return Err(Error::invalid(
                        "give either --dgp LABEL or both --beta and --het".into(),
                    ))
                }
            };
            let truth_kind = match kind.to_ascii_uppercase().as_str() {
                "AME1" => TruthKind::Ame1,
                "AME_N" => TruthKind::AmeN(n.ok_or_else(|| {
                    Error::invalid("AME_N needs --n".into())
                })?),
                "PI_11" => TruthKind::Pi11,
                "PI_01" => TruthKind::Pi01,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown kind '{other}' (expected AME1, AME_N, PI_11, or PI_01)"
                    )))
                }
            };
            let value = true_ame(beta, &het, truth_kind)?;
            let mut doc = serde_json::json!({
                "kind": kind.to_ascii_uppercase(),
                "beta": beta,
                "value": value,
                "het": serde_json::to_value(&het)?,
            });
            if let TruthKind::AmeN(n) = truth_kind {
                doc["horizon"] = Value::from(n);
            }
            emit(&cli.out, &to_canonical_string(&doc)?)
        }

        Command::ReMle {
            panel,
            components,
            multistarts,
        } => {
            let input = load_panel_csv(panel, None)?;
            let est = match components {
                1 => mle_nouh(&input)?,
                2 => mle_finite_mixture(
                    &input,
                    2,
                    &MixtureOptions {
                        multistarts: *multistarts,
                        ..MixtureOptions::default()
                    },
                )?,
                other => {
                    return Err(Error::invalid(format!(
                        "--components must be 1 or 2, got {other}"
                    )))
                }
            };
            if cli.pretty {
                emit(&cli.out, &pretty_re(&est))
            } else {
                emit(&cli.out, &to_canonical_string(&est)?)
            }
        }

        Command::Hausman {
            consistent,
            efficient,
            kind,
        } => {
            let kind = HausmanKind::from_token(&kind.to_ascii_uppercase())?;
            let consistent = read_estimate_pair(consistent)?;
            let efficient = read_estimate_pair(efficient)?;
            let result = hausman(consistent, efficient, kind)?;
            if cli.pretty {
                emit(&cli.out, &pretty_hausman(&result))
            } else {
                emit(&cli.out, &to_canonical_string(&result)?)
            }
        }

        Command::Mc {
            config,
            csv,
            full,
            pvalues,
        } => {
            let text = std::fs::read_to_string(config)?;
            let mut config: ExperimentConfig = serde_json::from_str(&text)?;
            if *full {
                config.r = config.r.max(1000);
            }
            let result = run_experiment(&config)?;
            if let Some(path) = csv {
                std::fs::write(path, csv_table(&result))?;
            }
            if let Some(path) = pvalues {
                let mut out = String::from("test,p,cdf\n");
                for test in [HausmanTest::Beta, HausmanTest::Ame] {
                    if result.tests.iter().any(|s| s.test == test) {
                        for (p, cdf) in pvalue_cdf(&result, test)? {
                            out.push_str(&format!("{},{p:.6},{cdf:.6}\n", test.token()));
                        }
                    }
                }
                std::fs::write(path, out)?;
            }
            if cli.pretty {
                emit(&cli.out, &csv_table(&result))
            } else {
                emit(&cli.out, &to_canonical_string(&result)?)
            }
        }

        Command::Decompose { panel, theta } => {
            let input = load_panel_csv(panel, None)?;
            let est = read_theta(theta)?;
            let table = persistence_decomposition(&input, &est.theta_struct()?, &est.model)?;
            if cli.pretty {
                emit(&cli.out, &pretty_decomposition(&table))
            } else {
                emit(&cli.out, &to_canonical_string(&table)?)
            }
        }
    }
}

fn model_spec_for(id: &str, panel: &Panel, d_max: usize) -> Result<ModelSpec> {
    let kind = ModelKind::from_id(id)?;
    let spec = match kind {
        ModelKind::BinaryLag => ModelSpec::binary_lag(),
        ModelKind::BinaryLagExog => {
            let k = panel.num_covariates().ok_or_else(|| {
                Error::data("bc-ar1-x needs covariate columns (x1, x2, …)".into())
            })?;
            ModelSpec::binary_lag_exog(k)
        }
        ModelKind::BinaryDuration => ModelSpec::binary_duration(d_max),
        ModelKind::MultinomialHabit => ModelSpec::multinomial_habit(panel.num_alternatives()),
    };
    spec.validate()?;
    Ok(spec)
}

/// What an `ame` invocation asked for.
struct AmeRequest {
    kind: AmeKind,
    j: Option<u8>,
    n: Option<usize>,
    period: Option<usize>,
    mode: WindowMode,
}

/// The three output shapes of the `ame` subcommand.
enum AmeOutput {
    Single(AmeEstimate),
    PerCovariate(Vec<(Vec<Vec<f64>>, AmeEstimate)>),
    Scalar {
        kind: AmeKind,
        value: f64,
        alternative: Option<u8>,
    },
}

/// 4-period windows that start at a spell boundary (zero periods already
/// spent in the first choice), for the duration effects. Windows whose
/// pre-sample duration is unknown are kept and flagged.
fn boundary_windows(panel: &Panel, mode: WindowMode) -> Result<(Panel, Vec<String>)> {
    let all = windows(panel, 4, mode)?;
    let mut keep: Vec<Individual> = Vec::new();
    let mut unknown = 0usize;
    for ind in all.individuals() {
        match ind.d1 {
            Some(0) => keep.push(ind.clone()),
            Some(_) => {}
            None => {
                unknown += 1;
                keep.push(Individual {
                    d1: Some(0),
                    ..ind.clone()
                });
            }
        }
    }
    if keep.is_empty() {
        return Err(Error::data(
            "no 4-period window starts at a spell boundary".into(),
        ));
    }
    let mut warnings = Vec::new();
    if unknown > 0 {
        warnings.push(format!(
            "{unknown} window(s) with unknown pre-sample duration were \
             treated as spell boundaries"
        ));
    }
    Ok((Panel::new(keep, panel.num_alternatives())?, warnings))
}

fn require_kind(est: &ThetaEstimate, wanted: &[ModelKind], what: &str) -> Result<()> {
    if !wanted.contains(&est.model.kind) {
        return Err(Error::invalid(format!(
            "{what} applies to {:?} models, but the estimate is for '{}'",
            wanted
                .iter()
                .map(|k| k.id())
                .collect::<Vec<_>>()
                .join("/"),
            est.model.kind.id()
        )));
    }
    Ok(())
}

fn compute_ame(panel: &Panel, est: &ThetaEstimate, request: &AmeRequest) -> Result<AmeOutput> {
    let theta = est.theta_struct()?;
    let freq3 = |condition_on_x: bool| -> Result<_> {
        let w3 = windows(panel, 3, request.mode)?;
        history_frequencies(&w3, 3, condition_on_x)
    };
    match request.kind {
        AmeKind::Ame1 => {
            require_kind(est, &[ModelKind::BinaryLag], "AME1")?;
            Ok(AmeOutput::Single(ame1_binary(&freq3(false)?, theta.state[0])?))
        }
        AmeKind::PiJj => {
            let pi = compute_pi_jj(panel, est, &theta, request.j.unwrap_or(1), request.mode)?;
            Ok(AmeOutput::Single(pi))
        }
        AmeKind::AteJj => {
            let t = request.period.ok_or_else(|| {
                Error::invalid("ATE_JJ needs --t (the 1-based period)".into())
            })?;
            let pi = compute_pi_jj(panel, est, &theta, request.j.unwrap_or(1), request.mode)?;
            Ok(AmeOutput::Single(ate_jj(&pi, panel, t)?))
        }
        AmeKind::LogOddsJj => {
            let j = request.j.unwrap_or(1);
            if j == 0 {
                return Err(Error::invalid(
                    "LOG_ODDS_JJ compares alternative j against 0; give --j ≥ 1".into(),
                ));
            }
            let pi_j = compute_pi_jj(panel, est, &theta, j, request.mode)?;
            let pi_0 = compute_pi_jj(panel, est, &theta, 0, request.mode)?;
            Ok(AmeOutput::Scalar {
                kind: AmeKind::LogOddsJj,
                value: log_odds_ratio(pi_j.value, pi_0.value)?,
                alternative: Some(j),
            })
        }
        AmeKind::Ame1XConst => {
            require_kind(est, &[ModelKind::BinaryLagExog], "AME1_X_CONST")?;
            Ok(AmeOutput::PerCovariate(ame1_by_covariate(
                &freq3(true)?,
                theta.state[0],
            )?))
        }
        AmeKind::AmeN => {
            require_kind(est, &[ModelKind::BinaryLag], "AME_N")?;
            let n = request.n.ok_or_else(|| {
                Error::invalid("AME_N needs --n (the horizon)".into())
            })?;
            let w = windows(panel, 2 * n + 1, request.mode)?;
            let freq = history_frequencies(&w, 2 * n + 1, false)?;
            Ok(AmeOutput::Single(ame_n(&freq, theta.state[0], n)?))
        }
        AmeKind::AmeXt => {
            require_kind(est, &[ModelKind::BinaryLagExog], "AME_XT")?;
            let t = request.period.ok_or_else(|| {
                Error::invalid("AME_XT needs --t (the 1-based period, ≥ 3)".into())
            })?;
            Ok(AmeOutput::Single(ame_xt(panel, &theta, t)?))
        }
        AmeKind::AmeDur01 | AmeKind::AmeDur12 | AmeKind::AmeDur02 => {
            require_kind(est, &[ModelKind::BinaryDuration], "duration effects")?;
            if est.model.max_duration != 2 {
                return Err(Error::invalid(format!(
                    "duration effects are derived for a duration cap of 2, \
                     but the model caps at {}",
                    est.model.max_duration
                )));
            }
            let margin = match request.kind {
                AmeKind::AmeDur01 => DurationMargin::ZeroToOne,
                AmeKind::AmeDur12 => DurationMargin::OneToTwo,
                _ => DurationMargin::ZeroToTwo,
            };
            let (boundary, warnings) = boundary_windows(panel, request.mode)?;
            let freq4 = history_frequencies(&boundary, 4, false)?;
            let mut out = ame_duration(&freq4, theta.state[0], theta.state[1], margin)?;
            out.warnings.extend(warnings);
            Ok(AmeOutput::Single(out))
        }
    }
}

fn compute_pi_jj(
    panel: &Panel,
    est: &ThetaEstimate,
    theta: &Theta,
    j: u8,
    mode: WindowMode,
) -> Result<AmeEstimate> {
    require_kind(
        est,
        &[ModelKind::BinaryLag, ModelKind::MultinomialHabit],
        "average transition probabilities",
    )?;
    let w3 = windows(panel, 3, mode)?;
    let freq3 = history_frequencies(&w3, 3, false)?;
    let freq2 = freq3.marginalize_to(2)?;
    let habit = diagonal_habit_matrix(&theta.state);
    avg_transition_jj(&freq2, &freq3, &habit, j)
}

/// Read `(value, variance)` out of any estimate JSON this tool produces:
/// slope estimates (`theta` + `covariance`), full-likelihood fits (`beta` +
/// `covariance`), effect estimates (`value` + `se`), or a plain
/// `{value, variance}` object.
fn read_estimate_pair(path: &PathBuf) -> Result<(f64, f64)> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    let obj = v.as_object().ok_or_else(|| {
        Error::invalid(format!("{} is not a JSON object", path.display()))
    })?;
    let num = |v: &Value, what: &str| -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| Error::invalid(format!("{what} is not a number in {}", path.display())))
    };
    let cov00 = |cov: &Value| -> Result<f64> {
        cov.get(0)
            .and_then(|row| row.get(0))
            .and_then(Value::as_f64)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "covariance[0][0] missing in {}",
                    path.display()
                ))
            })
    };
    if let (Some(theta), Some(cov)) = (obj.get("theta"), obj.get("covariance")) {
        let first = theta.get(0).ok_or_else(|| {
            Error::invalid(format!("empty parameter vector in {}", path.display()))
        })?;
        return Ok((num(first, "theta[0]")?, cov00(cov)?));
    }
    if let (Some(beta), Some(cov)) = (obj.get("beta"), obj.get("covariance")) {
        return Ok((num(beta, "beta")?, cov00(cov)?));
    }
    if let Some(value) = obj.get("value") {
        if let Some(se) = obj.get("se") {
            let se = num(se, "se")?;
            return Ok((num(value, "value")?, se * se));
        }
        if let Some(variance) = obj.get("variance") {
            return Ok((num(value, "value")?, num(variance, "variance")?));
        }
        return Err(Error::invalid(format!(
            "{} has a value but neither se nor variance; rerun `ame` with \
             --bootstrap-B to attach a standard error",
            path.display()
        )));
    }
    Err(Error::invalid(format!(
        "unrecognized estimate shape in {}; expected a slope estimate, a \
         full-likelihood fit, an effect estimate with se, or {{value, variance}}",
        path.display()
    )))
}

// ---- pretty printers ------------------------------------------------------

fn pretty_theta(est: &ThetaEstimate) -> String {
    let mut out = String::new();
    out.push_str(&format!("model: {}\n", est.model.kind.id()));
    out.push_str(&format!(
        "{:<12} {:>14} {:>14}\n",
        "parameter", "estimate", "std.err"
    ));
    for (i, name) in est.param_names.iter().enumerate() {
        out.push_str(&format!(
            "{:<12} {:>14.6} {:>14.6}\n",
            name, est.theta[i], est.std_errors[i]
        ));
    }
    out.push_str(&format!(
        "log-likelihood {:.6}   individuals {}   informative classes {}\n",
        est.log_likelihood, est.n_individuals, est.n_classes_informative
    ));
    for w in &est.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn pretty_ame(est: &AmeEstimate) -> String {
    let mut out = format!("{:<14} {:>14.6}", est.kind.token(), est.value);
    if let Some(se) = est.se {
        out.push_str(&format!("  (se {se:.6})"));
    }
    out.push('\n');
    for w in &est.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn pretty_weights(table: &WeightTable) -> String {
    let mut out = format!(
        "window length {}   slope {:.6}\n{:<8} {:<6} {:<6} {:>16}\n",
        table.window_length, table.beta, "first", "last", "ones", "weight"
    );
    for e in &table.entries {
        // Avoid "-0.0000000000" for solver noise below display precision.
        let weight = if e.weight.abs() < 5e-11 { 0.0 } else { e.weight };
        out.push_str(&format!(
            "{:<8} {:<6} {:<6} {:>16.10}\n",
            e.first, e.last, e.ones, weight
        ));
    }
    for w in &table.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn pretty_re(est: &feame::remle::ReEstimate) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>14} {:>14}\n",
        "parameter", "estimate", "std.err"
    ));
    let values: Vec<f64> = match est.param_names.len() {
        2 => vec![est.beta, match &est.het {
            HeterogeneityDist::Degenerate { value } => *value,
            _ => f64::NAN,
        }],
        _ => {
            let mut v = vec![est.beta];
            if let HeterogeneityDist::FiniteMixture { points, probs } = &est.het {
                v.extend_from_slice(points);
                v.push(probs[0]);
                v.extend_from_slice(&est.initial_probs);
            }
            v
        }
    };
    for (i, name) in est.param_names.iter().enumerate() {
        let se = est.covariance[i][i].max(0.0).sqrt();
        out.push_str(&format!(
            "{:<12} {:>14.6} {:>14.6}\n",
            name,
            values.get(i).copied().unwrap_or(f64::NAN),
            se
        ));
    }
    out.push_str(&format!(
        "implied one-period effect {:.6}   log-likelihood {:.6}\n",
        est.ame1, est.log_likelihood
    ));
    for w in &est.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn pretty_hausman(result: &feame::inference::HausmanResult) -> String {
    match (result.valid, result.statistic, result.p_value) {
        (true, Some(s), Some(p)) => format!(
            "HS_{}: statistic {:.6}   p-value {:.6}\n",
            result.kind.token().to_ascii_lowercase(),
            s,
            p
        ),
        _ => format!(
            "HS_{}: invalid (variance difference {:.6} ≤ 0; finite-sample \
             failure of the variance ordering)\n",
            result.kind.token().to_ascii_lowercase(),
            result.denominator
        ),
    }
}

fn pretty_decomposition(table: &feame::ame::DecompositionTable) -> String {
    let mut out = format!(
        "{:<5} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "alt", "share", "pers", "atp", "ate", "uhet"
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{:<5} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}\n",
            row.alternative,
            row.share,
            row.persistence,
            row.avg_transition,
            row.treatment_effect,
            row.heterogeneity
        ));
    }
    for w in &table.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
