//! Latent-factor data generator with known ground truth, and the oracle
//! predictor that uses the true signal factors.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{genotype_means, Kinship, MarkerMatrix, PlotData};
use crate::error::{Error, Result};
use crate::prediction::{blup_cv1, blup_cv2, PredictionResult, Scenario, TraitCovariances};
use crate::scalar::Real;

/// Residual variance given to the (error-free) true factors in the oracle model.
pub const ORACLE_FACTOR_NOISE: f64 = 1e-6;

/// Mixes a base seed with a sequence of indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Generative design: `blocks` latent factors, each measured by
/// `feats_per_block` secondary features; the first `n_signal_factors` also
/// load on the focal trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_g: usize,
    pub r: usize,
    pub n_snp: usize,
    pub blocks: usize,
    pub feats_per_block: usize,
    pub h2_s: f64,
    pub h2_y: f64,
    pub communality: f64,
    pub n_signal_factors: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_g: 300,
            r: 2,
            n_snp: 1500,
            blocks: 8,
            feats_per_block: 20,
            h2_s: 0.9,
            h2_y: 0.3,
            communality: 0.8,
            n_signal_factors: 4,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn n_features(&self) -> usize {
        self.blocks * self.feats_per_block
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_g < 2 {
            return bad(format!("n_g must be at least 2, got {}", self.n_g));
        }
        if self.r < 1 {
            return bad("r must be at least 1".into());
        }
        if self.n_snp < 1 {
            return bad("n_snp must be at least 1".into());
        }
        if self.blocks < 1 || self.feats_per_block < 1 {
            return bad("need at least one block with one feature".into());
        }
        for (name, v) in [("h2_s", self.h2_s), ("h2_y", self.h2_y)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.communality) {
            return bad(format!(
                "communality must lie in [0, 1], got {}",
                self.communality
            ));
        }
        if self.n_signal_factors > self.blocks {
            return bad(format!(
                "n_signal_factors ({}) exceeds blocks ({})",
                self.n_signal_factors, self.blocks
            ));
        }
        if self.communality > 0.0 && self.n_signal_factors == 0 {
            return bad("positive communality needs at least one signal factor".into());
        }
        Ok(())
    }
}

/// Generative parameters and genotype-level latent quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub genotype_ids: Vec<String>,
    /// Focal-trait genetic values, one per genotype.
    pub genetic_focal: DVector<f64>,
    /// `p × blocks`; feature `j` loads only on its own block.
    pub loadings_s: DMatrix<f64>,
    /// Focal loadings on each factor (zero for noise factors).
    pub loadings_y: DVector<f64>,
    pub uniqueness_s: DVector<f64>,
    pub uniqueness_y: f64,
    pub residual_s: DVector<f64>,
    pub residual_y: f64,
    /// `n_g × blocks` latent factor values.
    pub factor_scores: DMatrix<f64>,
    pub signal_factors: Vec<usize>,
}

/// Train/test genotype indices, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn genotype_label(i: usize) -> String {
    format!("G{:05}", i + 1)
}

/// Hardy-Weinberg dosages with allele frequencies drawn from `U(0.1, 0.9)`.
/// Monomorphic columns are redrawn.
pub fn simulate_markers(n_g: usize, n_snp: usize, seed: u64) -> Result<MarkerMatrix> {
    if n_g < 2 {
        return Err(Error::InsufficientGenotypes(n_g));
    }
    if n_snp < 1 {
        return Err(Error::DegenerateMarkers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::<u8>::zeros(n_g, n_snp);
    for k in 0..n_snp {
        let q: f64 = rng.random_range(0.1..0.9);
        loop {
            for i in 0..n_g {
                values[(i, k)] = u8::from(rng.random_bool(q)) + u8::from(rng.random_bool(q));
            }
            let first = values[(0, k)];
            if values.column(k).iter().any(|&v| v != first) {
                break;
            }
        }
    }
    MarkerMatrix::new(
        values,
        (0..n_g).map(genotype_label).collect(),
        (0..n_snp).map(|k| format!("snp_{}", k + 1)).collect(),
    )
}

fn signed_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v: f64 = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Simulates plot-level secondary features and the focal trait.
///
/// Rows are ordered replicate-major (all genotypes of replicate 1 first).
/// Factor values are independent standard normal per genotype; the marker
/// panel only fixes the genotype labels.
pub fn simulate_dataset<T: Real>(
    cfg: &SimConfig,
    markers: &MarkerMatrix,
) -> Result<(PlotData<T>, SimTruth)> {
    cfg.validate()?;
    if markers.n_genotypes() != cfg.n_g {
        return Err(Error::DimensionMismatch(format!(
            "{} marker rows for n_g = {}",
            markers.n_genotypes(),
            cfg.n_g
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_g, r, b) = (cfg.n_g, cfg.r, cfg.blocks);
    let p = cfg.n_features();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let xi = DMatrix::from_fn(n_g, b, |_, _| normal(&mut rng));

    let mut loadings_s = DMatrix::zeros(p, b);
    let mut uniqueness_s = DVector::zeros(p);
    for j in 0..p {
        let mut l = signed_uniform(&mut rng, 0.3, 0.8);
        if l * l > cfg.h2_s {
            l = l.signum() * cfg.h2_s.sqrt();
        }
        loadings_s[(j, j / cfg.feats_per_block)] = l;
        uniqueness_s[j] = (cfg.h2_s - l * l).max(0.0);
    }
    let residual_s = DVector::from_element(p, 1.0 - cfg.h2_s);

    let signal_factors: Vec<usize> = (0..cfg.n_signal_factors).collect();
    let mut loadings_y = DVector::zeros(b);
    if cfg.n_signal_factors > 0 {
        let magnitude = (cfg.communality * cfg.h2_y / cfg.n_signal_factors as f64).sqrt();
        for &k in &signal_factors {
            loadings_y[k] = if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            };
        }
    }
    let uniqueness_y = (1.0 - cfg.communality) * cfg.h2_y;
    let residual_y = 1.0 - cfg.h2_y;

    let mut genetic = &xi * loadings_s.transpose();
    for j in 0..p {
        let sd = uniqueness_s[j].sqrt();
        for i in 0..n_g {
            genetic[(i, j)] += sd * normal(&mut rng);
        }
    }
    let mut genetic_focal = &xi * &loadings_y;
    let sd_y = uniqueness_y.sqrt();
    for i in 0..n_g {
        genetic_focal[i] += sd_y * normal(&mut rng);
    }

    let n = n_g * r;
    let mut values = DMatrix::<f64>::zeros(n, p + 1);
    let mut genotype_of = Vec::with_capacity(n);
    let (sd_s, sd_e) = ((1.0 - cfg.h2_s).sqrt(), residual_y.sqrt());
    for rep in 0..r {
        for i in 0..n_g {
            let row = rep * n_g + i;
            genotype_of.push(i);
            for j in 0..p {
                values[(row, j)] = genetic[(i, j)] + sd_s * normal(&mut rng);
            }
            values[(row, p)] = genetic_focal[i] + sd_e * normal(&mut rng);
        }
    }

    let ids = markers.genotype_ids().to_vec();
    let data = PlotData::new(
        values.map(T::lit),
        genotype_of,
        ids.clone(),
        (0..p).map(|j| format!("feat_{}", j + 1)).collect(),
        "focal",
    )?;
    let truth = SimTruth {
        genotype_ids: ids,
        genetic_focal,
        loadings_s,
        loadings_y,
        uniqueness_s,
        uniqueness_y,
        residual_s,
        residual_y,
        factor_scores: xi,
        signal_factors,
    };
    Ok((data, truth))
}

/// Uniform random split of `0..n_g` into `n_train` training and the remaining test genotypes.
pub fn split_train_test(n_g: usize, n_train: usize, seed: u64) -> Result<Partition> {
    if n_train < 2 || n_train >= n_g {
        return Err(Error::InvalidSplit(format!(
            "need 2 <= n_train < n_g, got n_train = {n_train}, n_g = {n_g}"
        )));
    }
    let mut order: Vec<usize> = (0..n_g).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Partition { train, test })
}

/// Multi-trait BLUP with the true signal factors as secondary traits and the
/// generative covariances in place of estimates.
///
/// The factors are treated as measured without error (residual variance
/// [`ORACLE_FACTOR_NOISE`]). `data` is the raw simulated plot data and
/// `kinship` carries the train/test partition. For [`Scenario::Univariate`]
/// the true focal variance components are used without secondary traits.
pub fn benchmark_oracle<T: Real>(
    truth: &SimTruth,
    data: &PlotData<T>,
    kinship: &Kinship<T>,
    scenario: Scenario,
) -> Result<PredictionResult<T>> {
    let signal: Vec<usize> = match scenario {
        Scenario::Univariate => Vec::new(),
        _ => truth.signal_factors.clone(),
    };
    let s = signal.len();
    let t = s + 1;
    let h2_y = truth.loadings_y.norm_squared() + truth.uniqueness_y;
    let mut genetic = DMatrix::<T>::zeros(t, t);
    let mut residual = DMatrix::<T>::zeros(t, t);
    for (a, &k) in signal.iter().enumerate() {
        genetic[(a, a)] = T::one();
        genetic[(a, s)] = T::lit(truth.loadings_y[k]);
        genetic[(s, a)] = T::lit(truth.loadings_y[k]);
        residual[(a, a)] = T::lit(ORACLE_FACTOR_NOISE);
    }
    genetic[(s, s)] = T::lit(h2_y.max(ORACLE_FACTOR_NOISE));
    residual[(s, s)] = T::lit(truth.residual_y.max(ORACLE_FACTOR_NOISE));
    let cov = TraitCovariances::new(genetic, residual, data.replicates())?;

    let truth_index = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|g| {
                truth
                    .genotype_ids
                    .iter()
                    .position(|x| x == g)
                    .ok_or_else(|| Error::InvalidData(format!("genotype `{g}` missing from truth")))
            })
            .collect()
    };
    let factor_block = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), s, |i, a| {
            T::lit(truth.factor_scores[(rows[i], signal[a])])
        })
    };

    let train_ids = kinship.train_ids();
    let blues = genotype_means(data).reorder(&train_ids)?;
    let focal = blues.values.column(data.focal_column()).into_owned();
    let mean = focal.mean();
    let train_rows = truth_index(&train_ids)?;
    let mut y = factor_block(&train_rows).insert_column(s, T::zero());
    y.set_column(s, &focal.add_scalar(-mean));

    match scenario {
        Scenario::Cv2 => {
            let test_rows = truth_index(&kinship.test_ids())?;
            blup_cv2(&y, kinship, &cov, &factor_block(&test_rows))
        }
        _ => blup_cv1(&y, kinship, &cov).map(|mut r| {
            r.scenario = scenario;
            r
        }),
    }
}
