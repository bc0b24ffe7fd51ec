//! Replicated simulation benchmark over a grid of generative settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{vanraden_kinship, Kinship, PlotData};
use crate::error::{Error, Result};
use crate::pipeline::{fit, fit_siblup, fit_univariate, predict_scenario, Method, PipelineConfig};
use crate::prediction::{accuracy, PredictionResult, Scenario};
use crate::simulation::{
    benchmark_oracle, derive_seed, simulate_dataset, simulate_markers, split_train_test, SimConfig,
    SimTruth,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub grid: Vec<SimConfig>,
    pub methods: Vec<Method>,
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    pub n_train: usize,
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

/// Accuracy of one method in one scenario on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateAccuracy {
    pub cell: usize,
    pub replicate: usize,
    pub method: Method,
    pub scenario: Scenario,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: usize,
    pub replicate: usize,
    pub method: Option<Method>,
    pub message: String,
}

/// Mean and sd of accuracy for one cell × method × scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub h2_s: f64,
    pub h2_y: f64,
    pub communality: f64,
    pub method: Method,
    pub scenario: Scenario,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub n_reps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub replicates: Vec<ReplicateAccuracy>,
    pub failures: Vec<CellFailure>,
}

impl BenchmarkReport {
    pub fn row(&self, cell: &SimConfig, method: Method, scenario: Scenario) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.h2_s == cell.h2_s
                && r.h2_y == cell.h2_y
                && r.communality == cell.communality
                && r.method == method
                && r.scenario == scenario
        })
    }

    /// Per-replicate accuracies of a cell, method and scenario, ordered by replicate.
    pub fn accuracies(&self, cell: usize, method: Method, scenario: Scenario) -> Vec<f64> {
        let mut v: Vec<_> = self
            .replicates
            .iter()
            .filter(|r| r.cell == cell && r.method == method && r.scenario == scenario)
            .map(|r| (r.replicate, r.accuracy))
            .collect();
        v.sort_by_key(|&(rep, _)| rep);
        v.into_iter().map(|(_, a)| a).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("h2_s\th2_y\tcommunality\tmethod\tscenario\tmean_acc\tsd_acc\tn_reps\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
                r.h2_s, r.h2_y, r.communality, r.method, r.scenario, r.mean_acc, r.sd_acc, r.n_reps
            );
        }
        out
    }

    pub fn failures_tsv(&self) -> String {
        let mut out = String::from("cell\treplicate\tmethod\terror\n");
        for f in &self.failures {
            let method = f.method.map_or_else(|| "-".to_string(), |m| m.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                f.cell,
                f.replicate,
                method,
                f.message.replace(['\t', '\n'], " ")
            );
        }
        out
    }

    /// Writes the report and, if any replicate failed, a `.errors` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        if !self.failures.is_empty() {
            let mut side = path.as_os_str().to_owned();
            side.push(".errors");
            std::fs::write(side, self.failures_tsv())?;
        }
        Ok(())
    }
}

/// One simulated replicate ready for fitting.
pub struct Replicate {
    pub train: PlotData<f64>,
    pub test: PlotData<f64>,
    /// Raw data for all genotypes (the oracle needs it).
    pub all: PlotData<f64>,
    pub kinship: Kinship<f64>,
    pub truth: SimTruth,
}

impl Replicate {
    /// True focal genetic values of the test genotypes, in kinship test order.
    pub fn test_truth(&self) -> DVector<f64> {
        let idx = self.kinship.test();
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.truth.genetic_focal[i]))
    }
}

/// Simulates markers, data, kinship and a train/test split for one replicate.
pub fn simulate_replicate(cell: &SimConfig, n_train: usize, seed: u64) -> Result<Replicate> {
    let cfg = SimConfig {
        seed: derive_seed(seed, &[1]),
        ..cell.clone()
    };
    let markers = simulate_markers(cfg.n_g, cfg.n_snp, derive_seed(seed, &[0]))?;
    let (all, truth) = simulate_dataset::<f64>(&cfg, &markers)?;
    let split = split_train_test(cfg.n_g, n_train, derive_seed(seed, &[2]))?;
    let kinship = vanraden_kinship::<f64>(&markers)?
        .with_partition(split.train.clone(), split.test.clone())?;
    Ok(Replicate {
        train: all.subset_genotypes(&split.train),
        test: all.subset_genotypes(&split.test),
        all,
        kinship,
        truth,
    })
}

type MethodOutcome = (Method, Result<Vec<(Scenario, PredictionResult<f64>)>>);

/// Cell, replicate, per-method outcomes and the test-set truth.
type ReplicateOutcome = (usize, usize, Result<Vec<MethodOutcome>>, Option<DVector<f64>>);

fn run_methods(
    rep: &Replicate,
    methods: &[Method],
    scenarios: &[Scenario],
    pipeline: &PipelineConfig,
) -> Vec<MethodOutcome> {
    methods
        .iter()
        .map(|&method| {
            let out: Result<Vec<_>> = (|| {
                Ok(match method {
                    Method::Univariate => {
                        let res = fit_univariate(&rep.train, &rep.kinship)?.predict()?;
                        scenarios.iter().map(|&s| (s, res.clone())).collect()
                    }
                    Method::Gfblup => {
                        let fitted = fit(&rep.train, &rep.kinship, pipeline)?;
                        scenarios
                            .iter()
                            .map(|&s| Ok((s, predict_scenario(&fitted, s, Some(&rep.test))?)))
                            .collect::<Result<_>>()?
                    }
                    Method::Siblup => {
                        let model = fit_siblup(&rep.train, &rep.kinship, pipeline)?;
                        scenarios
                            .iter()
                            .map(|&s| Ok((s, model.predict(s, Some(&rep.test))?)))
                            .collect::<Result<_>>()?
                    }
                    Method::Oracle => scenarios
                        .iter()
                        .map(|&s| Ok((s, benchmark_oracle(&rep.truth, &rep.all, &rep.kinship, s)?)))
                        .collect::<Result<_>>()?,
                })
            })();
            (method, out)
        })
        .collect()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs every cell × replicate in parallel. Failures are recorded and skipped.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    if cfg.methods.is_empty() || cfg.scenarios.is_empty() {
        return Err(Error::Config(
            "need at least one method and one scenario".into(),
        ));
    }
    for cell in &cfg.grid {
        cell.validate()?;
    }
    cfg.pipeline.validate()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<ReplicateOutcome> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let seed = derive_seed(cfg.seed, &[c as u64, r as u64]);
            match simulate_replicate(&cfg.grid[c], cfg.n_train, seed) {
                Ok(rep) => {
                    let truth = rep.test_truth();
                    let pipeline = PipelineConfig {
                        seed,
                        ..cfg.pipeline.clone()
                    };
                    (
                        c,
                        r,
                        Ok(run_methods(&rep, &cfg.methods, &cfg.scenarios, &pipeline)),
                        Some(truth),
                    )
                }
                Err(e) => (c, r, Err(e), None),
            }
        })
        .collect();

    let mut report = BenchmarkReport::default();
    for (cell, replicate, outcome, truth) in outcomes {
        let per_method = match outcome {
            Ok(m) => m,
            Err(e) => {
                report.failures.push(CellFailure {
                    cell,
                    replicate,
                    method: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let truth = truth.expect("truth exists for simulated replicates");
        for (method, res) in per_method {
            let scored = res.and_then(|preds| {
                preds
                    .into_iter()
                    .map(|(scenario, p)| Ok((scenario, accuracy(&p.test_predictions, &truth)?)))
                    .collect::<Result<Vec<_>>>()
            });
            match scored {
                Ok(list) => {
                    for (scenario, acc) in list {
                        report.replicates.push(ReplicateAccuracy {
                            cell,
                            replicate,
                            method,
                            scenario,
                            accuracy: acc,
                        });
                    }
                }
                Err(e) => report.failures.push(CellFailure {
                    cell,
                    replicate,
                    method: Some(method),
                    message: e.to_string(),
                }),
            }
        }
    }

    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    let method_pos = |m: Method| {
        cfg.methods
            .iter()
            .position(|&x| x == m)
            .unwrap_or(usize::MAX)
    };
    let scenario_pos = |s: Scenario| {
        cfg.scenarios
            .iter()
            .position(|&x| x == s)
            .unwrap_or(usize::MAX)
    };
    for r in &report.replicates {
        groups
            .entry((r.cell, method_pos(r.method), scenario_pos(r.scenario)))
            .or_default()
            .push(r.accuracy);
    }
    for ((cell, m, s), values) in groups {
        let (mean_acc, sd_acc) = mean_sd(&values);
        let c = &cfg.grid[cell];
        report.rows.push(ReportRow {
            h2_s: c.h2_s,
            h2_y: c.h2_y,
            communality: c.communality,
            method: cfg.methods[m],
            scenario: cfg.scenarios[s],
            mean_acc,
            sd_acc,
            n_reps: values.len(),
        });
    }
    Ok(report)
}

/// Convenience wrapper writing the report to `out`.
pub fn run_benchmark_to(cfg: &BenchmarkConfig, out: &Path) -> Result<BenchmarkReport> {
    let report = run_benchmark(cfg)?;
    report.write(out)?;
    Ok(report)
}
