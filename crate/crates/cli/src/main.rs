//! `gflup`: simulate data, fit and apply gfBLUP models, and run benchmarks.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gfblup::benchmark::{run_benchmark_to, BenchmarkConfig};
use gfblup::io::{
    read_markers, read_phenotypes, read_truth_focal, write_factor_bundle, write_markers,
    write_phenotypes, write_predictions, write_truth,
};
use gfblup::pipeline::Method;
use gfblup::prediction::Scenario;
use gfblup::simulation::split_train_test;
use gfblup::{
    accuracy, fit, predict_scenario, simulate_dataset, simulate_markers, vanraden_kinship,
    FittedPipeline, PipelineConfig, SimConfig,
};
use nalgebra::DVector;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

const MODEL_FILE: &str = "model.json";

#[derive(Parser)]
#[command(name = "gflup", version, about = "Genetic latent factor BLUP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate markers, plot phenotypes and the generative truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit gfBLUP on training phenotypes. Marker genotypes absent from the
    /// phenotype file become the prediction targets.
    Fit {
        #[arg(long)]
        pheno: PathBuf,
        #[arg(long)]
        markers: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the focal trait of the test genotypes of a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "cv2")]
        scenario: Scenario,
        /// Plot-level secondary phenotypes of the test genotypes (CV2 only).
        #[arg(long)]
        test_pheno: Option<PathBuf>,
        /// Truth table; when given, the accuracy is printed.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the replicated simulation benchmark over a grid of settings.
    Benchmark {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// `simulate` configuration: the generative cell plus the train/test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    n_train: Option<usize>,
    split_seed: u64,
    marker_seed: u64,
    simulation: SimConfig,
}

impl Default for SimulateFile {
    fn default() -> Self {
        Self {
            n_train: None,
            split_seed: 2,
            marker_seed: 3,
            simulation: SimConfig::default(),
        }
    }
}

/// `benchmark` configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GridFile {
    methods: Vec<Method>,
    scenarios: Vec<Scenario>,
    replicates: usize,
    n_train: usize,
    seed: u64,
    pipeline: PipelineConfig,
    cell: Vec<SimConfig>,
}

impl Default for GridFile {
    fn default() -> Self {
        Self {
            methods: vec![
                Method::Univariate,
                Method::Gfblup,
                Method::Siblup,
                Method::Oracle,
            ],
            scenarios: vec![Scenario::Cv1, Scenario::Cv2],
            replicates: 20,
            n_train: 200,
            seed: 1,
            pipeline: PipelineConfig::default(),
            cell: Vec::new(),
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn simulate(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SimulateFile = read_config(config)?;
    let sim = &cfg.simulation;
    let n_train = cfg.n_train.unwrap_or(sim.n_g * 2 / 3);
    fs::create_dir_all(out)?;
    let markers = simulate_markers(sim.n_g, sim.n_snp, cfg.marker_seed)?;
    let (data, truth) = simulate_dataset::<f64>(sim, &markers)?;
    let split = split_train_test(sim.n_g, n_train, cfg.split_seed)?;
    write_markers(&markers, &out.join("markers.tsv"))?;
    write_phenotypes(&data, &out.join("pheno.tsv"))?;
    write_phenotypes(&data.subset_genotypes(&split.train), &out.join("train.tsv"))?;
    write_phenotypes(&data.subset_genotypes(&split.test), &out.join("test.tsv"))?;
    write_truth(&truth, &out.join("truth.tsv"))?;
    fs::write(out.join("simulate.toml"), toml::to_string(&cfg)?)?;
    println!(
        "simulated {} genotypes x {} replicates, {} features; {} train, {} test",
        sim.n_g,
        sim.r,
        sim.n_features(),
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

fn fit_model(pheno: &Path, markers: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: PipelineConfig = read_config(config)?;
    let train = read_phenotypes(pheno).with_context(|| format!("reading {}", pheno.display()))?;
    let markers =
        read_markers(markers).with_context(|| format!("reading {}", markers.display()))?;
    let train_ids: Vec<String> = train.genotype_ids().to_vec();
    let in_train: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_ids: Vec<String> = markers
        .genotype_ids()
        .iter()
        .filter(|g| !in_train.contains(g.as_str()))
        .cloned()
        .collect();
    let kinship = vanraden_kinship::<f64>(&markers)?.with_partition_ids(&train_ids, &test_ids)?;
    let fitted = fit(&train, &kinship, &cfg)?;

    fs::create_dir_all(out)?;
    fs::write(out.join(MODEL_FILE), serde_json::to_string(&fitted)?)?;
    if let Some(factors) = &fitted.factors {
        write_factor_bundle(
            &factors.model,
            &fitted.kept_features(),
            &out.join("factors"),
        )?;
    }
    println!(
        "fitted {} training genotypes, {} test genotypes: kept {} of {} features, theta_g {:.4}, theta_e {:.4}, m~ {}, selected {}{}",
        train_ids.len(),
        test_ids.len(),
        fitted.filter.kept.len(),
        fitted.feature_names.len(),
        fitted.penalty_genetic.theta,
        fitted.penalty_residual.theta,
        fitted.m_tilde,
        fitted.n_selected(),
        if fitted.univariate_fallback() { " (univariate fallback)" } else { "" }
    );
    Ok(())
}

fn predict_model(
    model: &Path,
    scenario: Scenario,
    test_pheno: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let path = if model.is_dir() {
        model.join(MODEL_FILE)
    } else {
        model.to_path_buf()
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let fitted: FittedPipeline<f64> = serde_json::from_str(&text).context("parsing model")?;
    let test = test_pheno.map(read_phenotypes).transpose()?;
    if scenario == Scenario::Cv2 && test.is_none() && !fitted.univariate_fallback() {
        bail!("scenario cv2 needs --test-pheno");
    }
    let result = predict_scenario(&fitted, scenario, test.as_ref())?;
    write_predictions(&result, out)?;
    println!("wrote {} predictions ({scenario})", result.test_ids.len());
    if let Some(truth) = truth {
        let table = read_truth_focal(truth)?;
        let values = result
            .test_ids
            .iter()
            .map(|g| {
                table
                    .iter()
                    .find(|(id, _)| id == g)
                    .map(|&(_, v)| v)
                    .with_context(|| format!("genotype {g} missing from truth"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let acc = accuracy(&result.test_predictions, &DVector::from_vec(values))?;
        println!("accuracy {acc:.4}");
    }
    Ok(())
}

fn benchmark(grid: &Path, replicates: Option<usize>, out: &Path) -> Result<()> {
    let file: GridFile = read_config(Some(grid))?;
    if file.cell.is_empty() {
        bail!("grid file defines no [[cell]]");
    }
    let cfg = BenchmarkConfig {
        grid: file.cell,
        methods: file.methods,
        scenarios: file.scenarios,
        replicates: replicates.unwrap_or(file.replicates),
        n_train: file.n_train,
        pipeline: file.pipeline,
        seed: file.seed,
    };
    let report = run_benchmark_to(&cfg, out)?;
    print!("{}", report.to_tsv());
    if !report.failures.is_empty() {
        eprintln!(
            "{} replicate failures written to {}.errors",
            report.failures.len(),
            out.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out } => simulate(config.as_deref(), &out),
        Command::Fit {
            pheno,
            markers,
            config,
            out,
        } => fit_model(&pheno, &markers, config.as_deref(), &out),
        Command::Predict {
            model,
            scenario,
            test_pheno,
            truth,
            out,
        } => predict_model(
            &model,
            scenario,
            test_pheno.as_deref(),
            truth.as_deref(),
            &out,
        ),
        Command::Benchmark {
            grid,
            replicates,
            out,
        } => benchmark(&grid, replicates, &out),
    }
}
