//! Tab-separated readers and writers for phenotypes, markers, truth tables,
//! predictions and factor-model bundles.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{MarkerMatrix, PlotData};
use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::prediction::{PredictionResult, Scenario};
use crate::scalar::Real;
use crate::simulation::SimTruth;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    if field.eq_ignore_ascii_case("na") {
        return Err(parse_err(line, "missing values (NA) are not allowed"));
    }
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("`{field}` is not finite")));
    }
    Ok(v)
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses `genotype<TAB>rep<TAB>feat_1…feat_p<TAB>focal`.
pub fn parse_phenotypes(text: &str) -> Result<PlotData<f64>> {
    let mut it = lines(text);
    let (_, header) = it
        .next()
        .ok_or_else(|| parse_err(1, "empty phenotype file"))?;
    let names: Vec<&str> = header.split('\t').collect();
    if names.len() < 3 || names[0] != "genotype" || names[1] != "rep" {
        return Err(parse_err(
            1,
            "header must start with `genotype<TAB>rep` and name a focal column",
        ));
    }
    let q = names.len() - 2;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut genotype_of = Vec::new();
    let mut values = Vec::new();
    for (ln, line) in it {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != names.len() {
            return Err(parse_err(
                ln,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        fields[1]
            .trim()
            .parse::<u32>()
            .map_err(|_| parse_err(ln, format!("replicate `{}` is not an integer", fields[1])))?;
        let g = fields[0].trim().to_string();
        let next = ids.len();
        let gi = *index.entry(g.clone()).or_insert_with(|| {
            ids.push(g);
            next
        });
        genotype_of.push(gi);
        for f in &fields[2..] {
            values.push(parse_value(f.trim(), ln)?);
        }
    }
    let n = genotype_of.len();
    let matrix = DMatrix::from_row_slice(n, q, &values);
    let features = names[2..names.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect();
    PlotData::new(matrix, genotype_of, ids, features, names[names.len() - 1])
}

pub fn read_phenotypes(path: &Path) -> Result<PlotData<f64>> {
    parse_phenotypes(&std::fs::read_to_string(path)?)
}

pub fn format_phenotypes<T: Real>(data: &PlotData<T>) -> String {
    let mut out = String::from("genotype\trep");
    for name in data.feature_names() {
        out.push('\t');
        out.push_str(name);
    }
    let _ = writeln!(out, "\t{}", data.focal_name());
    let mut seen = vec![0usize; data.n_genotypes()];
    let v = data.values();
    for row in 0..data.n_rows() {
        let g = data.design().genotype_of(row);
        seen[g] += 1;
        let _ = write!(out, "{}\t{}", data.genotype_ids()[g], seen[g]);
        for c in 0..v.ncols() {
            let _ = write!(out, "\t{}", v[(row, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_phenotypes<T: Real>(data: &PlotData<T>, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, format_phenotypes(data))?)
}

/// Parses `genotype<TAB>snp_1…snp_m` with integer dosages.
pub fn parse_markers(text: &str) -> Result<MarkerMatrix> {
    let mut it = lines(text);
    let (_, header) = it.next().ok_or_else(|| parse_err(1, "empty marker file"))?;
    let names: Vec<&str> = header.split('\t').collect();
    if names.len() < 2 || names[0] != "genotype" {
        return Err(parse_err(
            1,
            "header must start with `genotype` followed by SNP ids",
        ));
    }
    let m = names.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (ln, line) in it {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != names.len() {
            return Err(parse_err(
                ln,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        ids.push(fields[0].trim().to_string());
        for f in &fields[1..] {
            let f = f.trim();
            if f.eq_ignore_ascii_case("na") {
                return Err(parse_err(ln, "missing values (NA) are not allowed"));
            }
            let d: u8 = f
                .parse()
                .map_err(|_| parse_err(ln, format!("dosage `{f}` is not an integer")))?;
            if d > 2 {
                return Err(parse_err(ln, format!("dosage {d} outside 0..=2")));
            }
            values.push(d);
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = ids.iter().find(|g| !seen.insert(g.as_str())) {
        return Err(Error::InvalidData(format!(
            "genotype `{dup}` listed twice in marker file"
        )));
    }
    MarkerMatrix::new(
        DMatrix::from_row_slice(ids.len(), m, &values),
        ids,
        names[1..].iter().map(|s| s.to_string()).collect(),
    )
}

pub fn read_markers(path: &Path) -> Result<MarkerMatrix> {
    parse_markers(&std::fs::read_to_string(path)?)
}

pub fn format_markers(markers: &MarkerMatrix) -> String {
    let mut out = String::from("genotype");
    for s in markers.snp_ids() {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    let v = markers.values();
    for (i, g) in markers.genotype_ids().iter().enumerate() {
        out.push_str(g);
        for c in 0..v.ncols() {
            let _ = write!(out, "\t{}", v[(i, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_markers(markers: &MarkerMatrix, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, format_markers(markers))?)
}

/// `genotype<TAB>genetic_focal<TAB>factor_1…factor_b`.
pub fn format_truth(truth: &SimTruth) -> String {
    let b = truth.factor_scores.ncols();
    let mut out = String::from("genotype\tgenetic_focal");
    for k in 0..b {
        let _ = write!(out, "\tfactor_{}", k + 1);
    }
    out.push('\n');
    for (i, g) in truth.genotype_ids.iter().enumerate() {
        let _ = write!(out, "{g}\t{}", truth.genetic_focal[i]);
        for k in 0..b {
            let _ = write!(out, "\t{}", truth.factor_scores[(i, k)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_truth(truth: &SimTruth, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, format_truth(truth))?)
}

/// Reads the `genotype` and `genetic_focal` columns of a truth table.
pub fn read_truth_focal(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut it = lines(&text);
    let (_, header) = it.next().ok_or_else(|| parse_err(1, "empty truth file"))?;
    if !header.starts_with("genotype\tgenetic_focal") {
        return Err(parse_err(
            1,
            "header must start with `genotype<TAB>genetic_focal`",
        ));
    }
    it.map(|(ln, line)| {
        let mut f = line.split('\t');
        let g = f.next().unwrap_or_default().to_string();
        let v = parse_value(f.next().ok_or_else(|| parse_err(ln, "missing value"))?, ln)?;
        Ok((g, v))
    })
    .collect()
}

/// `genotype<TAB>prediction<TAB>scenario` for the test genotypes.
pub fn format_predictions<T: Real>(result: &PredictionResult<T>) -> String {
    let mut out = String::from("genotype\tprediction\tscenario\n");
    for (g, v) in result.test_ids.iter().zip(result.test_predictions.iter()) {
        let _ = writeln!(out, "{g}\t{v}\t{}", result.scenario);
    }
    out
}

pub fn write_predictions<T: Real>(result: &PredictionResult<T>, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, format_predictions(result))?)
}

pub fn parse_predictions(text: &str) -> Result<Vec<(String, f64, Scenario)>> {
    let mut it = lines(text);
    let (_, header) = it
        .next()
        .ok_or_else(|| parse_err(1, "empty prediction file"))?;
    if header != "genotype\tprediction\tscenario" {
        return Err(parse_err(1, "unexpected prediction header"));
    }
    it.map(|(ln, line)| {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(ln, "expected 3 fields"));
        }
        Ok((f[0].to_string(), parse_value(f[1], ln)?, f[2].parse()?))
    })
    .collect()
}

/// Writes `loadings.tsv`, `uniquenesses.tsv` and `metadata.tsv` into `dir`.
pub fn write_factor_bundle<T: Real>(
    model: &FactorModel<T>,
    features: &[String],
    dir: &Path,
) -> Result<()> {
    if features.len() != model.loadings.nrows() {
        return Err(Error::DimensionMismatch("feature names vs loadings".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut loadings = String::from("feature");
    for k in 0..model.m {
        let _ = write!(loadings, "\tfactor_{}", k + 1);
    }
    loadings.push('\n');
    let mut uniq = String::from("feature\tuniqueness\n");
    for (i, name) in features.iter().enumerate() {
        loadings.push_str(name);
        for k in 0..model.m {
            let _ = write!(loadings, "\t{}", model.loadings[(i, k)]);
        }
        loadings.push('\n');
        let _ = writeln!(uniq, "{name}\t{}", model.uniquenesses[i]);
    }
    let meta = format!(
        "key\tvalue\nm\t{}\nrotated\t{}\nfit_value\t{}\nconverged\t{}\niterations\t{}\n",
        model.m, model.rotated, model.fit_value, model.converged, model.iterations
    );
    std::fs::write(dir.join("loadings.tsv"), loadings)?;
    std::fs::write(dir.join("uniquenesses.tsv"), uniq)?;
    std::fs::write(dir.join("metadata.tsv"), meta)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phenotype_round_trip() {
        let text = "genotype\trep\ta\tb\ty\nG1\t1\t1\t2\t3\nG2\t1\t4\t5\t6\nG1\t2\t1.5\t2.5\t3.5\nG2\t2\t4.5\t5.5\t6.5\n";
        let data = parse_phenotypes(text).unwrap();
        assert_eq!(data.n_genotypes(), 2);
        assert_eq!(data.replicates(), 2);
        assert_eq!(data.feature_names(), ["a", "b"]);
        assert_eq!(data.focal_name(), "y");
        let again = parse_phenotypes(&format_phenotypes(&data)).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn na_is_rejected() {
        let text = "genotype\trep\ta\ty\nG1\t1\tNA\t3\n";
        let err = parse_phenotypes(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn marker_round_trip_and_range() {
        let text = "genotype\ts1\ts2\nA\t0\t2\nB\t1\t0\n";
        let m = parse_markers(text).unwrap();
        assert_eq!(parse_markers(&format_markers(&m)).unwrap(), m);
        assert!(parse_markers("genotype\ts1\nA\t3\n").is_err());
    }
}
