//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use latent_ensemble::bench::{run_benchmark, Scenario, METHODS};
use latent_ensemble::dawid_skene::{ds_predict, fit_ci_with, EmOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use latent_ensemble::stats::accuracy_mse;
use latent_ensemble::structure::{estimate_structure_with, ResidualReport, StructureOptions};
use latent_ensemble::synthetic::{generate, sample_model, GeneratorConfig};
use latent_ensemble::{balanced_accuracy, balanced_error, latent, score_matrix, sample_covariance, AccuracyPair};
use serde::Serialize;

use crate::io::{input_error, read_labels, read_predictions, write_output, write_predictions, CsvLayout};
use crate::model_file::{ModelBody, ModelFile};

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator configuration (TOML: m, group_sizes, b, latent_range,
    /// child_range, n, seed).
    pub config: PathBuf,
    /// Output predictions CSV (-1/1, one row per classifier).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output true labels CSV (`id,label`).
    #[arg(long)]
    pub labels: PathBuf,
    /// Output ground-truth model file.
    #[arg(long)]
    pub model: PathBuf,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg: GeneratorConfig = read_toml(&args.config)?;
    cfg.validate()?;
    let model = sample_model(&cfg)?;
    // the data stream is seeded separately from the parameter draws
    let (z, y) = generate(&model, cfg.n, cfg.seed.wrapping_add(1))?;
    write_output(Some(&args.predictions), |w| write_predictions(w, &z))?;
    write_output(Some(&args.labels), |w| {
        writeln!(w, "id,label")?;
        for (j, v) in y.as_slice().iter().enumerate() {
            writeln!(w, "{j},{v}")?;
        }
        Ok(())
    })?;
    let json = ModelFile::latent(model).to_json()?;
    write_output(Some(&args.model), |w| w.write_all(json.as_bytes()))?;
    println!("simulated m = {}, n = {}", z.m(), z.n());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Latent,
    Ci,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Predictions CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub layout: CsvLayout,
    /// Model family to fit.
    #[arg(long, value_enum, default_value = "latent")]
    pub model: ModelKind,
    /// Largest number of groups to consider [default: m - 1].
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Seed of the clustering restarts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// EM stops when no parameter moves by more than this.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// EM iteration limit.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Output model file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output fit report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    kind: &'static str,
    m: usize,
    n: usize,
    classifier_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    structure: Option<ResidualReport>,
    group_sizes: Vec<usize>,
    assignment: Vec<usize>,
    em_iterations: Vec<usize>,
    latent_non_identifiable: bool,
    warnings: Vec<String>,
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let data = read_predictions(&args.data, args.layout)?;
    let z = &data.z;
    let em = EmOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let (file, report) = match args.model {
        ModelKind::Latent => {
            if z.m() < 5 {
                return Err(input_error(format!(
                    "the latent model needs at least 5 classifiers (got {}); use --model ci",
                    z.m()
                )));
            }
            let opts = StructureOptions {
                k_max: args.kmax,
                seed: args.seed,
                ..StructureOptions::default()
            };
            let (structure, residuals) = estimate_structure_with(z, &opts)?;
            let fit = latent::fit_with_options(z, &structure, &em)?;
            let report = FitReport {
                kind: "latent",
                m: z.m(),
                n: z.n(),
                classifier_ids: data.classifier_ids.clone(),
                structure: Some(residuals),
                group_sizes: structure.group_sizes(),
                assignment: structure.assignment().to_vec(),
                em_iterations: fit.em_traces.iter().map(|t| t.len() - 1).collect(),
                latent_non_identifiable: fit.latent_non_identifiable,
                warnings: fit.warnings,
            };
            (ModelFile::latent(fit.model), report)
        }
        ModelKind::Ci => {
            if z.m() < 3 {
                return Err(input_error(format!("the CI model needs at least 3 classifiers, got {}", z.m())));
            }
            let fit = fit_ci_with(z, &em)?;
            let report = FitReport {
                kind: "ci",
                m: z.m(),
                n: z.n(),
                classifier_ids: data.classifier_ids.clone(),
                structure: None,
                group_sizes: vec![1; z.m()],
                assignment: (0..z.m()).collect(),
                em_iterations: vec![fit.iterations],
                latent_non_identifiable: false,
                warnings: if fit.converged {
                    Vec::new()
                } else {
                    vec![format!("EM stopped after {} iterations without converging", fit.iterations)]
                },
            };
            (ModelFile::ci(fit.params), report)
        }
    };
    let json = file.to_json()?;
    write_output(args.out.as_ref(), |w| w.write_all(json.as_bytes()))?;
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report).context("serialising report")?;
        text.push('\n');
        write_output(Some(path), |w| w.write_all(text.as_bytes()))?;
    }
    if args.out.is_some() {
        println!("fitted {} model: {} groups, sizes {:?}", report.kind, report.group_sizes.len(), report.group_sizes);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Predictions CSV.
    pub data: PathBuf,
    /// Model file written by `fit` or `simulate`.
    pub model: PathBuf,
    #[command(flatten)]
    pub layout: CsvLayout,
    /// Output CSV `id,label,posterior` [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let data = read_predictions(&args.data, args.layout)?;
    let file = ModelFile::read(&args.model)?;
    if file.m() != data.z.m() {
        return Err(input_error(format!(
            "model has {} classifiers but the data has {}",
            file.m(),
            data.z.m()
        )));
    }
    let (labels, post) = match &file.body {
        ModelBody::Latent { model } => latent::predict(&data.z, model)?,
        ModelBody::Ci { params } => ds_predict(&data.z, params)?,
    };
    write_output(args.out.as_ref(), |w| {
        writeln!(w, "id,label,posterior")?;
        for ((id, y), p) in data.instance_ids.iter().zip(labels.as_slice()).zip(post.as_slice()) {
            writeln!(w, "{id},{y},{p}")?;
        }
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Predictions CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub layout: CsvLayout,
    /// Output m x m score matrix CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let data = read_predictions(&args.data, args.layout)?;
    let s = score_matrix(&sample_covariance(&data.z)?)?;
    write_output(args.out.as_ref(), |w| {
        for i in 0..s.dim() {
            let row: Vec<String> = (0..s.dim()).map(|j| s.get(i, j).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels (CSV with a `label` column, e.g. `predict` output).
    pub predictions: PathBuf,
    /// True labels (CSV with a `label` column).
    pub truth: PathBuf,
    /// Estimated model file.
    #[arg(long, requires = "true_model")]
    pub model: Option<PathBuf>,
    /// Ground-truth model file.
    #[arg(long, requires = "model")]
    pub true_model: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (_, pred) = read_labels(&args.predictions)?;
    let (_, truth) = read_labels(&args.truth)?;
    if pred.len() != truth.len() {
        return Err(input_error(format!(
            "{} predictions for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let err = balanced_error(&pred, &truth)?;
    println!("balanced_error: {err}");
    println!("balanced_accuracy: {}", 1.0 - err);
    if let (Some(est), Some(tru)) = (&args.model, &args.true_model) {
        let est = ModelFile::read(est)?.as_latent()?;
        let tru = ModelFile::read(tru)?.as_latent()?;
        if est.m() != tru.m() {
            return Err(input_error(format!(
                "models have {} and {} classifiers",
                est.m(),
                tru.m()
            )));
        }
        let acc_mse = accuracy_mse(&est.composed_accuracies(), &tru.composed_accuracies())?;
        println!("accuracy_mse: {acc_mse}");
        if est.structure.same_partition(&tru.structure) {
            let params = |m: &latent_ensemble::LatentModel| -> Vec<AccuracyPair> {
                m.child_acc.iter().chain(&m.latent_acc).copied().collect()
            };
            println!("parameter_mse: {}", accuracy_mse(&params(&est), &params(&tru))?);
        } else {
            println!("parameter_mse: n/a (structures differ)");
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Model file.
    pub model: PathBuf,
    /// Number of classifiers to select (at most the number of groups).
    pub count: usize,
    /// Output CSV `classifier,group,balanced_accuracy` [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let model = ModelFile::read(&args.model)?.as_latent()?;
    if args.count > model.k() {
        return Err(input_error(format!(
            "cannot select M = {} classifiers from K = {} groups: M <= K is required",
            args.count,
            model.k()
        )));
    }
    let chosen = latent::select_classifiers(&model, args.count)?;
    let acc = model.composed_accuracies();
    write_output(args.out.as_ref(), |w| {
        writeln!(w, "classifier,group,balanced_accuracy")?;
        for &i in &chosen {
            writeln!(w, "{i},{},{}", model.structure.group_of(i), balanced_accuracy(acc[i]))?;
        }
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Scenario file (TOML: m, n, b, latent_range, child_range, group_sizes,
    /// trials, seed); the built-in sweep when omitted.
    pub scenario: Option<PathBuf>,
    /// Output CSV, one row per group size [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional per-trial CSV.
    #[arg(long)]
    pub trials_out: Option<PathBuf>,
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let scenario: Scenario = match &args.scenario {
        Some(path) => read_toml(path)?,
        None => Scenario::default(),
    };
    scenario.validate()?;
    let points = run_benchmark(&scenario)?;
    write_output(args.out.as_ref(), |w| {
        let mut header = vec!["g1".to_string()];
        for m in METHODS {
            for stat in ["mean", "q10", "median", "q90"] {
                header.push(format!("{m}_{stat}"));
            }
        }
        header.extend(["recovery_probability", "mse_sml_em", "mse_l_sml"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for p in &points {
            let mut row = vec![p.g1.to_string()];
            for s in &p.methods {
                row.extend([s.mean, s.q10, s.median, s.q90].map(|v| v.to_string()));
            }
            row.extend([p.recovery_probability, p.mse_sml_em, p.mse_l_sml].map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    if let Some(path) = &args.trials_out {
        write_output(Some(path), |w| {
            let methods: Vec<String> = METHODS.iter().map(|m| format!("{m}_bacc")).collect();
            writeln!(w, "g1,trial,{},recovered,estimated_k,mse_sml_em,mse_l_sml", methods.join(","))?;
            for p in &points {
                for t in &p.trials {
                    let bacc: Vec<String> = t.balanced_accuracy.iter().map(|v| v.to_string()).collect();
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        t.g1,
                        t.trial,
                        bacc.join(","),
                        t.recovered,
                        t.estimated_k,
                        t.mse_sml_em,
                        t.mse_l_sml
                    )?;
                }
            }
            Ok(())
        })?;
    }
    let summary: BTreeMap<usize, f64> = points.iter().map(|p| (p.g1, p.recovery_probability)).collect();
    eprintln!("structure recovery by group size: {summary:?}");
    Ok(())
}
