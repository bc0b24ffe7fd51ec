//! Replicated phenotype data, genotype means, marker panels and kinship.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{principal, submatrix, SymEigen};
use crate::scalar::Real;

/// Diagonal jitter added to kinship blocks before they are inverted.
pub const KINSHIP_JITTER: f64 = 1e-8;

/// Balanced replication structure: which genotype each plot row belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    genotype_of: Vec<usize>,
    rows_of: Vec<Vec<usize>>,
    replicates: usize,
}

impl Design {
    /// Builds the design from a row → genotype-index map over `n_genotypes`
    /// genotypes. Every genotype must occur the same number of times.
    pub fn new(genotype_of: Vec<usize>, n_genotypes: usize) -> Result<Self> {
        let mut rows_of = vec![Vec::new(); n_genotypes];
        for (row, &g) in genotype_of.iter().enumerate() {
            if g >= n_genotypes {
                return Err(Error::InvalidData(format!(
                    "row {row} refers to genotype index {g} >= {n_genotypes}"
                )));
            }
            rows_of[g].push(row);
        }
        let replicates = rows_of.first().map_or(0, Vec::len);
        if let Some((j, rows)) = rows_of
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != replicates)
        {
            return Err(Error::Unbalanced {
                genotype: format!("#{j}"),
                found: rows.len(),
                expected: replicates,
            });
        }
        if replicates == 0 && n_genotypes > 0 {
            return Err(Error::InvalidData("genotype without observations".into()));
        }
        Ok(Self {
            genotype_of,
            rows_of,
            replicates,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.genotype_of.len()
    }

    pub fn n_genotypes(&self) -> usize {
        self.rows_of.len()
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn genotype_of(&self, row: usize) -> usize {
        self.genotype_of[row]
    }

    pub fn rows_of(&self, genotype: usize) -> &[usize] {
        &self.rows_of[genotype]
    }

    /// Restricts the design to `genotypes` (renumbered in the given order).
    /// Returns the selected plot rows alongside the new design.
    pub fn subset(&self, genotypes: &[usize]) -> (Vec<usize>, Design) {
        let mut rows = Vec::with_capacity(genotypes.len() * self.replicates);
        let mut genotype_of = Vec::with_capacity(rows.capacity());
        for (new, &g) in genotypes.iter().enumerate() {
            for &row in &self.rows_of[g] {
                rows.push(row);
                genotype_of.push(new);
            }
        }
        let rows_of = (0..genotypes.len())
            .map(|j| ((j * self.replicates)..((j + 1) * self.replicates)).collect())
            .collect();
        (
            rows,
            Design {
                genotype_of,
                rows_of,
                replicates: self.replicates,
            },
        )
    }
}

/// Genotype means of every column of `values` (`n_g × q`).
pub fn column_genotype_means<T: Real>(values: &DMatrix<T>, design: &Design) -> DMatrix<T> {
    let inv_r = T::one() / T::from_count(design.replicates());
    let mut means = DMatrix::zeros(design.n_genotypes(), values.ncols());
    for j in 0..design.n_genotypes() {
        for c in 0..values.ncols() {
            let mut acc = T::zero();
            for &row in design.rows_of(j) {
                acc += values[(row, c)];
            }
            means[(j, c)] = acc * inv_r;
        }
    }
    means
}

/// Plot-level phenotypes: `p` secondary feature columns followed by the focal trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct PlotData<T: Real> {
    values: DMatrix<T>,
    design: Design,
    genotype_ids: Vec<String>,
    feature_names: Vec<String>,
    focal_name: String,
}

impl<T: Real> PlotData<T> {
    pub fn new(
        values: DMatrix<T>,
        genotype_of: Vec<usize>,
        genotype_ids: Vec<String>,
        feature_names: Vec<String>,
        focal_name: impl Into<String>,
    ) -> Result<Self> {
        if values.nrows() != genotype_of.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} genotype labels",
                values.nrows(),
                genotype_of.len()
            )));
        }
        if values.ncols() != feature_names.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} feature names plus focal",
                values.ncols(),
                feature_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite phenotype value".into()));
        }
        let design = Design::new(genotype_of, genotype_ids.len()).map_err(|e| match e {
            Error::Unbalanced {
                genotype,
                found,
                expected,
            } => {
                let idx: usize = genotype.trim_start_matches('#').parse().unwrap_or(0);
                Error::Unbalanced {
                    genotype: genotype_ids.get(idx).cloned().unwrap_or(genotype),
                    found,
                    expected,
                }
            }
            other => other,
        })?;
        Ok(Self {
            values,
            design,
            genotype_ids,
            feature_names,
            focal_name: focal_name.into(),
        })
    }

    /// Builds plot data from rows labelled by genotype id, assigning genotype
    /// indices in order of first appearance.
    pub fn from_labelled_rows(
        values: DMatrix<T>,
        row_genotypes: &[String],
        feature_names: Vec<String>,
        focal_name: impl Into<String>,
    ) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut ids = Vec::new();
        let genotype_of = row_genotypes
            .iter()
            .map(|g| {
                *index.entry(g.as_str()).or_insert_with(|| {
                    ids.push(g.clone());
                    ids.len() - 1
                })
            })
            .collect();
        Self::new(values, genotype_of, ids, feature_names, focal_name)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_genotypes(&self) -> usize {
        self.design.n_genotypes()
    }

    pub fn replicates(&self) -> usize {
        self.design.replicates()
    }

    pub fn genotype_ids(&self) -> &[String] {
        &self.genotype_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn focal_name(&self) -> &str {
        &self.focal_name
    }

    /// Index of the focal-trait column.
    pub fn focal_column(&self) -> usize {
        self.feature_names.len()
    }

    pub fn secondary_columns(&self) -> Vec<usize> {
        (0..self.n_features()).collect()
    }

    pub fn columns(&self, cols: &[usize]) -> DMatrix<T> {
        self.values.select_columns(cols)
    }

    pub fn focal(&self) -> DVector<T> {
        self.values.column(self.focal_column()).into_owned()
    }

    /// Restricts the data to the given genotypes (in that order).
    pub fn subset_genotypes(&self, genotypes: &[usize]) -> PlotData<T> {
        let (rows, design) = self.design.subset(genotypes);
        PlotData {
            values: self.values.select_rows(&rows),
            design,
            genotype_ids: genotypes
                .iter()
                .map(|&g| self.genotype_ids[g].clone())
                .collect(),
            feature_names: self.feature_names.clone(),
            focal_name: self.focal_name.clone(),
        }
    }

    /// Restricts the data to the named genotypes.
    pub fn subset_ids(&self, ids: &[String]) -> Result<PlotData<T>> {
        let lookup: HashMap<&str, usize> = self
            .genotype_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let idx = ids
            .iter()
            .map(|g| {
                lookup
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidData(format!("unknown genotype `{g}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset_genotypes(&idx))
    }

    /// Same design with a new value matrix (secondary columns then focal).
    pub fn with_values(
        &self,
        values: DMatrix<T>,
        feature_names: Vec<String>,
    ) -> Result<PlotData<T>> {
        if values.nrows() != self.n_rows() || values.ncols() != feature_names.len() + 1 {
            return Err(Error::DimensionMismatch(
                "replacement values do not match design or names".into(),
            ));
        }
        Ok(PlotData {
            values,
            design: self.design.clone(),
            genotype_ids: self.genotype_ids.clone(),
            feature_names,
            focal_name: self.focal_name.clone(),
        })
    }

    /// Keeps the given secondary columns (and the focal trait).
    pub fn select_features(&self, kept: &[usize]) -> PlotData<T> {
        let mut cols = kept.to_vec();
        cols.push(self.focal_column());
        PlotData {
            values: self.values.select_columns(&cols),
            design: self.design.clone(),
            genotype_ids: self.genotype_ids.clone(),
            feature_names: kept
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
            focal_name: self.focal_name.clone(),
        }
    }

    /// Genotype means of all columns.
    pub fn genotype_means(&self) -> BlueMatrix<T> {
        genotype_means(self)
    }
}

/// Genotypic means (BLUEs under a completely randomized design).
#[derive(Debug, Clone, PartialEq)]
pub struct BlueMatrix<T: Real> {
    pub values: DMatrix<T>,
    pub genotype_ids: Vec<String>,
}

impl<T: Real> BlueMatrix<T> {
    /// Rows reordered to follow `ids`.
    pub fn reorder(&self, ids: &[String]) -> Result<BlueMatrix<T>> {
        let lookup: HashMap<&str, usize> = self
            .genotype_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|g| {
                lookup
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidData(format!("genotype `{g}` has no BLUE")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlueMatrix {
            values: self.values.select_rows(&rows),
            genotype_ids: ids.to_vec(),
        })
    }
}

pub fn genotype_means<T: Real>(data: &PlotData<T>) -> BlueMatrix<T> {
    BlueMatrix {
        values: column_genotype_means(data.values(), data.design()),
        genotype_ids: data.genotype_ids().to_vec(),
    }
}

/// Per-column location/scale used to standardize data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Standardization<T: Real> {
    pub columns: Vec<usize>,
    pub means: Vec<T>,
    pub sds: Vec<T>,
}

impl<T: Real> Standardization<T> {
    /// Column means and sample standard deviations of `columns` over `rows`.
    pub fn fit(values: &DMatrix<T>, rows: &[usize], columns: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidData(
                "standardization needs at least two rows".into(),
            ));
        }
        let n = T::from_count(rows.len());
        let mut means = Vec::with_capacity(columns.len());
        let mut sds = Vec::with_capacity(columns.len());
        for &c in columns {
            let mean = rows.iter().fold(T::zero(), |a, &r| a + values[(r, c)]) / n;
            let ss = rows.iter().fold(T::zero(), |a, &r| {
                let d = values[(r, c)] - mean;
                a + d * d
            });
            let sd = (ss / (n - T::one())).sqrt();
            let scale = mean.abs().max(T::one());
            if !(sd > T::eps() * T::lit(16.0) * scale) {
                return Err(Error::ZeroVariance(c));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(Self {
            columns: columns.to_vec(),
            means,
            sds,
        })
    }

    pub fn apply(&self, values: &DMatrix<T>) -> DMatrix<T> {
        let mut out = values.clone();
        for (k, &c) in self.columns.iter().enumerate() {
            let (m, s) = (self.means[k], self.sds[k]);
            out.column_mut(c).apply(|v| *v = (*v - m) / s);
        }
        out
    }
}

/// Centers and scales every column using statistics from `stats_rows`, applying
/// the transformation to all rows.
pub fn center_and_scale<T: Real>(
    data: &PlotData<T>,
    stats_rows: &[usize],
) -> Result<(PlotData<T>, Standardization<T>)> {
    let cols: Vec<usize> = (0..data.values().ncols()).collect();
    let stats = Standardization::fit(data.values(), stats_rows, &cols)?;
    let values = stats.apply(data.values());
    Ok((
        PlotData {
            values,
            ..data.clone()
        },
        stats,
    ))
}

/// Standardizes only the secondary columns, leaving the focal column untouched.
pub fn center_and_scale_secondary<T: Real>(
    data: &PlotData<T>,
    stats_rows: &[usize],
) -> Result<(PlotData<T>, Standardization<T>)> {
    let stats = Standardization::fit(data.values(), stats_rows, &data.secondary_columns())?;
    let values = stats.apply(data.values());
    Ok((
        PlotData {
            values,
            ..data.clone()
        },
        stats,
    ))
}

/// Allele dosages (0, 1, 2) for genotypes × SNPs.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerMatrix {
    values: DMatrix<u8>,
    genotype_ids: Vec<String>,
    snp_ids: Vec<String>,
}

impl MarkerMatrix {
    /// Validates dosages and drops monomorphic SNP columns.
    pub fn new(
        values: DMatrix<u8>,
        genotype_ids: Vec<String>,
        snp_ids: Vec<String>,
    ) -> Result<Self> {
        if values.nrows() != genotype_ids.len() || values.ncols() != snp_ids.len() {
            return Err(Error::DimensionMismatch(
                "marker matrix shape does not match its labels".into(),
            ));
        }
        if let Some(v) = values.iter().find(|&&v| v > 2) {
            return Err(Error::InvalidData(format!("dosage {v} outside {{0,1,2}}")));
        }
        let keep: Vec<usize> = (0..values.ncols())
            .filter(|&c| {
                let col = values.column(c);
                col.iter().any(|&v| v != col[0])
            })
            .collect();
        Ok(Self {
            values: values.select_columns(&keep),
            genotype_ids,
            snp_ids: keep.iter().map(|&c| snp_ids[c].clone()).collect(),
        })
    }

    pub fn values(&self) -> &DMatrix<u8> {
        &self.values
    }

    pub fn genotype_ids(&self) -> &[String] {
        &self.genotype_ids
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn n_genotypes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_snps(&self) -> usize {
        self.values.ncols()
    }
}

/// Genomic relationship matrix together with a test/train partition of its genotypes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Kinship<T: Real> {
    values: DMatrix<T>,
    genotype_ids: Vec<String>,
    test: Vec<usize>,
    train: Vec<usize>,
    #[serde(skip)]
    oo_eigen: OnceLock<SymEigen<T>>,
    #[serde(skip)]
    tt_inverse: OnceLock<Option<DMatrix<T>>>,
}

impl<T: Real> Kinship<T> {
    /// Wraps a symmetric relationship matrix; every genotype starts in the training set.
    pub fn new(values: DMatrix<T>, genotype_ids: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || genotype_ids.len() != n {
            return Err(Error::DimensionMismatch(
                "kinship must be square and labelled".into(),
            ));
        }
        let asym = crate::linalg::max_asymmetry(&values);
        if asym > T::lit(1e-12) * values.amax().max(T::one()) {
            return Err(Error::NonSymmetric(asym.as_f64()));
        }
        let mut values = values;
        crate::linalg::symmetrize(&mut values);
        Ok(Self {
            values,
            genotype_ids,
            test: Vec::new(),
            train: (0..n).collect(),
            oo_eigen: OnceLock::new(),
            tt_inverse: OnceLock::new(),
        })
    }

    /// Same matrix with a new partition (indices into the full matrix).
    pub fn with_partition(&self, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let n = self.values.nrows();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(test.iter()) {
            if i >= n || seen[i] {
                return Err(Error::InvalidSplit(format!(
                    "index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if train.is_empty() {
            return Err(Error::InvalidSplit("empty training set".into()));
        }
        Ok(Self {
            values: self.values.clone(),
            genotype_ids: self.genotype_ids.clone(),
            test,
            train,
            oo_eigen: OnceLock::new(),
            tt_inverse: OnceLock::new(),
        })
    }

    /// Partition by genotype ids.
    pub fn with_partition_ids(&self, train: &[String], test: &[String]) -> Result<Self> {
        let train = self.indices_of(train)?;
        let test = self.indices_of(test)?;
        self.with_partition(train, test)
    }

    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        let lookup: HashMap<&str, usize> = self
            .genotype_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        ids.iter()
            .map(|g| {
                lookup
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidData(format!("genotype `{g}` not in kinship")))
            })
            .collect()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn genotype_ids(&self) -> &[String] {
        &self.genotype_ids
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.train
            .iter()
            .map(|&i| self.genotype_ids[i].clone())
            .collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.test
            .iter()
            .map(|&i| self.genotype_ids[i].clone())
            .collect()
    }

    pub fn k_tt(&self) -> DMatrix<T> {
        principal(&self.values, &self.test)
    }

    pub fn k_oo(&self) -> DMatrix<T> {
        principal(&self.values, &self.train)
    }

    pub fn k_to(&self) -> DMatrix<T> {
        submatrix(&self.values, &self.test, &self.train)
    }

    pub fn k_ot(&self) -> DMatrix<T> {
        submatrix(&self.values, &self.train, &self.test)
    }

    /// Eigendecomposition of the training block (cached).
    pub fn oo_eigen(&self) -> &SymEigen<T> {
        self.oo_eigen.get_or_init(|| SymEigen::new(&self.k_oo()))
    }

    /// Inverse of the jittered test block (cached); `None` when singular.
    pub fn tt_inverse(&self) -> Option<&DMatrix<T>> {
        self.tt_inverse
            .get_or_init(|| {
                let mut ktt = self.k_tt();
                let jitter = T::lit(KINSHIP_JITTER);
                for i in 0..ktt.nrows() {
                    ktt[(i, i)] += jitter;
                }
                crate::linalg::spd_inverse(&ktt)
            })
            .as_ref()
    }
}

impl<T: Real> PartialEq for Kinship<T> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
            && self.genotype_ids == other.genotype_ids
            && self.train == other.train
            && self.test == other.test
    }
}

/// VanRaden genomic relationship matrix `W W^T / Σ 2q(1-q)` with allele
/// frequencies estimated from the panel itself.
pub fn vanraden_kinship<T: Real>(markers: &MarkerMatrix) -> Result<Kinship<T>> {
    let n = markers.n_genotypes();
    if n < 2 {
        return Err(Error::InsufficientGenotypes(n));
    }
    let x = markers.values();
    let mut w = DMatrix::<T>::zeros(n, x.ncols());
    let mut scale = T::zero();
    let two = T::lit(2.0);
    for c in 0..x.ncols() {
        let total: u32 = x.column(c).iter().map(|&v| u32::from(v)).sum();
        let freq = T::from_u32(total).unwrap() / (two * T::from_count(n));
        scale += two * freq * (T::one() - freq);
        let center = two * freq;
        for r in 0..n {
            w[(r, c)] = T::from_u8(x[(r, c)]).unwrap() - center;
        }
    }
    if !(scale > T::zero()) {
        return Err(Error::DegenerateMarkers);
    }
    let mut k = (&w * w.transpose()) / scale;
    crate::linalg::symmetrize(&mut k);
    Kinship::new(k, markers.genotype_ids().to_vec())
}
