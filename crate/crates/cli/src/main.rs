//! `mddspls` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical or
//! convergence failure (only raised under `--strict`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use mddspls::classify::{classify_fit, classify_predict, ClassifierFit};
use mddspls::evaluate::{
    benchmark_scaling, default_lambda_grid, loo_cv, BenchBase, CvOptions, Mode, Pipeline, SweepParam,
    DEFAULT_GRID_SIZE,
};
use mddspls::io::{
    block_csv, load_labels, load_model, load_multiblock, model_kind, parse_config, parse_grid, save_model,
    save_multiblock, write_atomic, Provenance,
};
use mddspls::simulate::{simulate, SimConfig};
use mddspls::{reunification_predict, tribe_impute, DatasetF64, Error, KohLantaFitF64, MddsplsModelF64, TribeOptions};
use ndarray::Array2;
use sha2::{Digest, Sha256};

const TOOL: &str = "mddspls";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "mddspls", version, about = "Multi-block sparse PLS with missing block-row imputation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each may also come from `--config`;
/// values given on the command line win.
#[derive(Args, Debug)]
struct Common {
    /// key=value file providing defaults for the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Covariate block CSV files, in block order.
    #[arg(long, global = true, num_args = 1.., value_delimiter = ',')]
    blocks: Vec<PathBuf>,
    /// Response CSV file.
    #[arg(long, global = true)]
    response: Option<PathBuf>,
    /// Class label CSV file (`id,label`).
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Inclusive evenly spaced grid `start:end:count`.
    #[arg(long = "lambda-grid", global = true)]
    lambda_grid: Option<String>,
    #[arg(long, global = true)]
    ncomp: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 4 when the imputation loop does not converge.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model, imputing missing training block-rows.
    Fit,
    /// Predict responses or classes for new individuals.
    Predict {
        #[arg(long)]
        model: PathBuf,
    },
    /// Complete missing training block-rows and write the completed blocks.
    Impute,
    /// Fit the discriminant classifier.
    Classify,
    /// Leave-one-out cross-validation over a lambda grid.
    Cv {
        /// koh-lanta, mean, or low-rank
        #[arg(long, default_value = "koh-lanta")]
        pipeline: String,
        /// Rank of the low-rank baseline.
        #[arg(long, default_value_t = 1)]
        rank: usize,
    },
    /// Generate a synthetic multi-block dataset.
    Simulate {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long = "n-blocks", default_value_t = 10)]
        n_blocks: usize,
        #[arg(long = "n-groups", default_value_t = 4)]
        n_groups: usize,
        #[arg(long = "group-size", default_value_t = 40)]
        group_size: usize,
        #[arg(long = "rho-t", default_value_t = 0.9)]
        rho_t: f64,
        #[arg(long = "rho-d", default_value_t = 0.9)]
        rho_d: f64,
        #[arg(long = "linked-blocks", default_value_t = 5)]
        linked_blocks: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        /// Candidate informative-set sizes; defaults to 4, 8, .., 40 capped at the group size.
        #[arg(long, value_delimiter = ',')]
        theta: Vec<usize>,
        /// Proportion of (block, individual) rows removed.
        #[arg(long, default_value_t = 0.3)]
        missing: f64,
    },
    /// Time complete-data fits while one dimension varies.
    Bench {
        /// n, T, p or q
        #[arg(long)]
        param: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long = "n-blocks", default_value_t = 4)]
        n_blocks: usize,
        #[arg(long, default_value_t = 100)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        q: usize,
    },
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    NotConverged(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::NotConverged(m) => write!(f, "not converged: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => 2,
            Failure::NotConverged(_) => 4,
        };
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_) | Error::InfeasibleCorrelation { .. } | Error::InfeasibleMask(_)) => 2,
        _ => 3,
    }
}

/// Flags after merging the config file.
#[derive(Debug)]
struct Settings {
    blocks: Vec<PathBuf>,
    response: Option<PathBuf>,
    labels: Option<PathBuf>,
    lambda: Option<f64>,
    grid: Option<Vec<f64>>,
    ncomp: usize,
    tribe: TribeOptions,
    seed: Option<u64>,
    out: PathBuf,
    strict: bool,
    config_hash: String,
}

impl Settings {
    fn resolve(common: &Common, command: &Command) -> anyhow::Result<Self> {
        let file = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let known = [
            "blocks", "response", "labels", "lambda", "lambda_grid", "ncomp", "tol", "max_iter", "seed", "out",
            "strict",
        ];
        if let Some(k) = file.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(usage(format!("unknown config key {k:?}")));
        }
        fn from_file<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> anyhow::Result<Option<T>> {
            file.get(key)
                .map(|v| v.parse::<T>().map_err(|_| usage(format!("config {key}: cannot parse {v:?}"))))
                .transpose()
        }
        let blocks = if common.blocks.is_empty() {
            file.get("blocks")
                .map(|v| v.split(',').map(|s| PathBuf::from(s.trim())).collect())
                .unwrap_or_default()
        } else {
            common.blocks.clone()
        };
        let grid_spec = common.lambda_grid.clone().or_else(|| file.get("lambda_grid").cloned());
        let grid = grid_spec.map(|g| parse_grid(&g).map_err(|e| usage(e.to_string()))).transpose()?;
        let defaults = TribeOptions::default();
        let settings = Self {
            blocks,
            response: common.response.clone().or(from_file(&file, "response")?),
            labels: common.labels.clone().or(from_file(&file, "labels")?),
            lambda: common.lambda.or(from_file(&file, "lambda")?),
            grid,
            ncomp: common.ncomp.or(from_file(&file, "ncomp")?).unwrap_or(1),
            tribe: TribeOptions {
                tol: common.tol.or(from_file(&file, "tol")?).unwrap_or(defaults.tol),
                max_iter: common.max_iter.or(from_file(&file, "max_iter")?).unwrap_or(defaults.max_iter),
            },
            seed: common.seed.or(from_file(&file, "seed")?),
            out: common.out.clone().or(from_file(&file, "out")?).unwrap_or_else(|| PathBuf::from(".")),
            strict: common.strict || from_file::<bool>(&file, "strict")?.unwrap_or(false),
            config_hash: String::new(),
        };
        if settings.lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            return Err(usage("--lambda must be a finite nonnegative number"));
        }
        if settings.ncomp == 0 {
            return Err(usage("--ncomp must be at least 1"));
        }
        let digest = Sha256::digest(format!("{settings:?}|{command:?}").as_bytes());
        let config_hash = hex::encode(&digest[..8]);
        Ok(Self { config_hash, ..settings })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            tool: TOOL.into(),
            version: VERSION.into(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }

    fn lambda(&self) -> anyhow::Result<f64> {
        self.lambda.ok_or_else(|| usage("--lambda is required"))
    }

    fn dataset(&self, with_response: bool) -> anyhow::Result<DatasetF64> {
        if self.blocks.is_empty() {
            return Err(usage("--blocks is required"));
        }
        let response = match (&self.response, with_response) {
            (Some(r), true) => Some(r.as_path()),
            (None, true) => return Err(usage("--response is required")),
            (_, false) => None,
        };
        Ok(load_multiblock::<f64>(&self.blocks, response)?)
    }

    fn out_path(&self, name: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn check_converged(&self, fit: &KohLantaFitF64) -> anyhow::Result<()> {
        if self.strict && !fit.converged {
            let last = fit.criterion_history.last().copied().unwrap_or(f64::NAN);
            return Err(Failure::NotConverged(format!(
                "{} fits, last relative change {last:e} (tol {:e})",
                fit.iterations, self.tribe.tol
            ))
            .into());
        }
        Ok(())
    }
}

/// Writes a CSV report preceded by the provenance comment.
fn write_report(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    let mut text = prov.comment().into_bytes();
    text.push(b'\n');
    text.extend(wtr.into_inner().map_err(|e| anyhow!(e.to_string()))?);
    write_atomic(path, &text)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn selection_rows(data: &DatasetF64, model: &MddsplsModelF64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (t, set) in model.selected_covariates().iter().enumerate() {
        for &j in set {
            rows.push(vec![data.block_names[t].clone(), data.variable_names[t][j].clone()]);
        }
    }
    rows
}

fn run_fit(s: &Settings) -> anyhow::Result<()> {
    let data = s.dataset(true)?;
    let fit = tribe_impute(&data, s.lambda()?, s.ncomp, s.tribe)?;
    save_model(&s.out_path("model.json")?, "koh_lanta", &fit)?;
    write_report(
        &s.out_path("selected.csv")?,
        &s.provenance(),
        &["block", "variable"],
        &selection_rows(&data, &fit.model),
    )?;
    println!(
        "fitted {} blocks, {} selected covariates, {} fits, converged {}",
        data.n_blocks(),
        fit.selected_vars.iter().map(|v| v.len()).sum::<usize>(),
        fit.iterations,
        fit.converged
    );
    s.check_converged(&fit)
}

fn run_impute(s: &Settings) -> anyhow::Result<()> {
    let data = s.dataset(true)?;
    let fit = tribe_impute(&data, s.lambda()?, s.ncomp, s.tribe)?;
    let prov = s.provenance();
    save_multiblock(&s.out_path("completed")?, &fit.completed_train, Some(&prov))?;
    let rows: Vec<Vec<String>> = fit
        .criterion_history
        .iter()
        .enumerate()
        .map(|(k, c)| vec![(k + 2).to_string(), num(*c)])
        .collect();
    write_report(&s.out_path("convergence.csv")?, &prov, &["fit", "relative_change"], &rows)?;
    println!(
        "completed {} block-rows, {} fits, converged {}",
        data.n_missing_block_rows(),
        fit.iterations,
        fit.converged
    );
    s.check_converged(&fit)
}

fn run_classify(s: &Settings) -> anyhow::Result<()> {
    let data = s.dataset(false)?;
    let path = s.labels.as_ref().ok_or_else(|| usage("--labels is required"))?;
    let labels = load_labels(path, &data.ids)?;
    let clf = classify_fit(&data, &labels, s.lambda()?, s.ncomp, s.tribe)?;
    save_model(&s.out_path("model.json")?, "classifier", &clf)?;
    write_report(
        &s.out_path("selected.csv")?,
        &s.provenance(),
        &["block", "variable"],
        &selection_rows(&data, &clf.fit.model),
    )?;
    println!(
        "fitted {} classes, {} selected covariates",
        labels.n_classes(),
        clf.fit.selected_vars.iter().map(|v| v.len()).sum::<usize>()
    );
    s.check_converged(&clf.fit)
}

fn run_predict(s: &Settings, model_path: &Path) -> anyhow::Result<()> {
    let test = s.dataset(false)?;
    let prov = s.provenance();
    let out = s.out_path("predictions.csv")?;
    let kind = model_kind(model_path)?;
    let expect_blocks = |m: &MddsplsModelF64| {
        if m.n_blocks() != test.n_blocks() {
            return Err(usage(format!(
                "model has {} blocks, {} block files given",
                m.n_blocks(),
                test.n_blocks()
            )));
        }
        Ok(())
    };
    match kind.as_str() {
        "classifier" => {
            let clf: ClassifierFit<f64> = load_model(model_path, "classifier")?;
            expect_blocks(&clf.fit.model)?;
            let pred = classify_predict(&clf, &test)?;
            let mut header = vec!["id".to_string(), "label".to_string()];
            header.extend(clf.lda.classes.iter().map(|c| format!("p_{c}")));
            let rows: Vec<Vec<String>> = test
                .ids
                .iter()
                .zip(&pred.labels)
                .zip(pred.probabilities.outer_iter())
                .map(|((id, label), p)| {
                    let mut row = vec![id.clone(), label.clone()];
                    row.extend(p.iter().map(|&v| num(v)));
                    row
                })
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_report(&out, &prov, &header, &rows)?;
        }
        "koh_lanta" | "mdd_spls" => {
            let (model, predicted): (MddsplsModelF64, Array2<f64>) = if kind == "koh_lanta" {
                let fit: KohLantaFitF64 = load_model(model_path, "koh_lanta")?;
                expect_blocks(&fit.model)?;
                let pred = if test.has_missing() {
                    reunification_predict(&fit, &test, fit.model.lambda, fit.model.ncomp)?.predicted
                } else {
                    fit.model.predict(&test.block_views())?
                };
                (fit.model, pred)
            } else {
                let model: MddsplsModelF64 = load_model(model_path, "mdd_spls")?;
                expect_blocks(&model)?;
                if test.has_missing() {
                    return Err(Error::UnsupportedPattern(
                        "a plain multi-block model cannot predict rows with missing blocks".into(),
                    )
                    .into());
                }
                let pred = model.predict(&test.block_views())?;
                (model, pred)
            };
            let names = response_names(&model, model_path)?;
            let text = block_csv(&test.ids, &names, &predicted, &Default::default(), Some(&prov))?;
            write_atomic(&out, text.as_bytes())?;
        }
        other => return Err(Error::Parse(format!("unknown model kind {other:?}")).into()),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn response_names(model: &MddsplsModelF64, path: &Path) -> anyhow::Result<Vec<String>> {
    let q = model.n_responses();
    // names are recorded only on the completed training set of Koh-Lanta fits
    if let Ok(fit) = load_model::<KohLantaFitF64>(path, "koh_lanta") {
        if fit.completed_train.response_names.len() == q {
            return Ok(fit.completed_train.response_names);
        }
    }
    Ok((1..=q).map(|k| format!("y{k}")).collect())
}

fn run_cv(s: &Settings, pipeline: &str, rank: usize) -> anyhow::Result<()> {
    let classification = s.labels.is_some();
    let data = s.dataset(!classification)?;
    let pipeline = match pipeline {
        "koh-lanta" => Pipeline::KohLanta,
        "mean" => Pipeline::MeanImputation,
        "low-rank" => Pipeline::LowRank { rank },
        other => return Err(usage(format!("unknown pipeline {other:?} (koh-lanta, mean, low-rank)"))),
    };
    let labels = s.labels.as_ref().map(|p| load_labels(p, &data.ids)).transpose()?;
    let lambda_grid = match (&s.grid, s.lambda) {
        (Some(g), _) => g.clone(),
        (None, Some(l)) => vec![l],
        (None, None) if classification => {
            let y = mddspls::classify::dummy_code::<f64>(labels.as_ref().expect("labels loaded"))?;
            let top = mddspls::mdd_spls::max_abs_correlation(&data.block_views(), y.view())?;
            (0..DEFAULT_GRID_SIZE).map(|k| top * k as f64 / DEFAULT_GRID_SIZE as f64).collect()
        }
        (None, None) => default_lambda_grid(&data, DEFAULT_GRID_SIZE)?,
    };
    let opts = CvOptions {
        lambda_grid,
        ncomp: s.ncomp,
        mode: if classification { Mode::Classification } else { Mode::Regression },
        pipeline,
        tribe: s.tribe,
        labels,
    };
    let report = loo_cv(&data, &opts)?;
    let mut rows = Vec::new();
    for r in &report.per_lambda {
        let tail = [
            r.folds_run.to_string(),
            r.folds_skipped.to_string(),
            num(r.convergence_rate),
            num(r.mean_iterations),
        ];
        if let Some(rate) = r.misassignment_rate {
            let mut row = vec![num(r.lambda), "class".into(), num(rate), String::new()];
            row.extend(tail.iter().cloned());
            rows.push(row);
        } else {
            for (k, (&e, &c)) in r.rmsep.iter().zip(&r.selection_counts).enumerate() {
                let mut row = vec![num(r.lambda), data.response_names[k].clone(), num(e), c.to_string()];
                row.extend(tail.iter().cloned());
                rows.push(row);
            }
        }
    }
    let metric = if classification { "misassignment" } else { "rmsep" };
    write_report(
        &s.out_path("cv.csv")?,
        &s.provenance(),
        &[
            "lambda",
            "response",
            metric,
            "selected_folds",
            "folds_run",
            "folds_skipped",
            "convergence_rate",
            "mean_iterations",
        ],
        &rows,
    )?;
    let best = report.best();
    println!(
        "best lambda {} ({metric} {:.4}, {} folds run, {} skipped)",
        report.best_lambda,
        best.misassignment_rate.unwrap_or(best.mean_rmsep),
        best.folds_run,
        best.folds_skipped
    );
    if s.strict && best.convergence_rate < 1.0 {
        return Err(Failure::NotConverged(format!(
            "imputation converged in {:.1}% of folds at the selected lambda",
            100.0 * best.convergence_rate
        ))
        .into());
    }
    Ok(())
}

fn run_simulate(s: &Settings, cfg: SimConfig) -> anyhow::Result<()> {
    let (data, truth) = simulate::<f64>(&cfg)?;
    let prov = s.provenance();
    let written = save_multiblock(&s.out, &data, Some(&prov))?;
    save_model(&s.out.join("truth.json"), "sim_truth", &truth)?;
    println!(
        "wrote {} files and truth.json ({} missing block-rows)",
        written.len(),
        data.n_missing_block_rows()
    );
    Ok(())
}

fn run_bench(s: &Settings, param: &str, values: &[usize], repeats: usize, base: BenchBase) -> anyhow::Result<()> {
    let param: SweepParam = param.parse().map_err(|e: Error| usage(e.to_string()))?;
    let report = benchmark_scaling(&base, param, values, repeats)?;
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                param.to_string(),
                p.value.to_string(),
                num(p.median_secs),
                num(p.mean_secs),
                num(p.sd_secs),
                p.seconds.len().to_string(),
            ]
        })
        .collect();
    write_report(
        &s.out_path("bench.csv")?,
        &s.provenance(),
        &["param", "value", "median_secs", "mean_secs", "sd_secs", "repeats"],
        &rows,
    )?;
    println!("log-log slope in {param}: {:.3}", report.slope);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut s = Settings::resolve(&cli.common, &cli.command)?;
    if matches!(cli.command, Command::Simulate { .. } | Command::Bench { .. }) {
        s.seed.get_or_insert(0);
    }
    match cli.command {
        Command::Fit => run_fit(&s),
        Command::Predict { model } => run_predict(&s, &model),
        Command::Impute => run_impute(&s),
        Command::Classify => run_classify(&s),
        Command::Cv { pipeline, rank } => run_cv(&s, &pipeline, rank),
        Command::Simulate {
            n,
            n_blocks,
            n_groups,
            group_size,
            rho_t,
            rho_d,
            linked_blocks,
            q,
            theta,
            missing,
        } => run_simulate(
            &s,
            SimConfig {
                n,
                n_blocks,
                n_groups,
                group_size,
                rho_t,
                rho_d,
                linked_blocks,
                theta_choices: if theta.is_empty() {
                    let fits: Vec<usize> = SimConfig::default()
                        .theta_choices
                        .into_iter()
                        .filter(|&k| k <= group_size)
                        .collect();
                    if fits.is_empty() {
                        vec![group_size]
                    } else {
                        fits
                    }
                } else {
                    theta
                },
                missing_prop: missing,
                seed: s.seed.unwrap_or(0),
                q,
            },
        ),
        Command::Bench {
            param,
            values,
            repeats,
            n,
            n_blocks,
            p,
            q,
        } => run_bench(
            &s,
            &param,
            &values,
            repeats,
            BenchBase {
                n,
                n_blocks,
                p,
                q,
                ncomp: s.ncomp,
                lambda: s.lambda.unwrap_or(0.0),
                seed: s.seed.unwrap_or(0),
            },
        ),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors itself and exits with status 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
