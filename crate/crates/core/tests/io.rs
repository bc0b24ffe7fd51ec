mod common;

use common::{design_rows, ids, normal_matrix, rng};
use gfblup::benchmark::simulate_replicate;
use gfblup::io::{
    format_phenotypes, format_predictions, parse_markers, parse_phenotypes, parse_predictions,
    read_markers, read_phenotypes, read_truth_focal, write_factor_bundle, write_markers,
    write_phenotypes, write_predictions, write_truth,
};
use gfblup::{fit_factor_model, simulate_dataset, simulate_markers, Error, PlotData, SimConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_sim() -> (gfblup::MarkerMatrix, PlotData<f64>, gfblup::SimTruth) {
    let cfg = SimConfig {
        n_g: 15,
        n_snp: 30,
        blocks: 2,
        feats_per_block: 3,
        n_signal_factors: 1,
        ..SimConfig::default()
    };
    let markers = simulate_markers(cfg.n_g, cfg.n_snp, 3).unwrap();
    let (data, truth) = simulate_dataset::<f64>(&cfg, &markers).unwrap();
    (markers, data, truth)
}

#[test]
fn simulated_files_round_trip() {
    let (markers, data, truth) = small_sim();
    let dir = tempfile::tempdir().unwrap();
    let (pheno, geno, truth_path) = (
        dir.path().join("p.tsv"),
        dir.path().join("m.tsv"),
        dir.path().join("t.tsv"),
    );
    write_phenotypes(&data, &pheno).unwrap();
    write_markers(&markers, &geno).unwrap();
    write_truth(&truth, &truth_path).unwrap();
    assert_eq!(read_phenotypes(&pheno).unwrap(), data);
    assert_eq!(read_markers(&geno).unwrap(), markers);
    let focal = read_truth_focal(&truth_path).unwrap();
    assert_eq!(focal.len(), 15);
    for (i, (g, v)) in focal.iter().enumerate() {
        assert_eq!(g, &truth.genotype_ids[i]);
        assert_eq!(*v, truth.genetic_focal[i]);
    }
    let header = std::fs::read_to_string(&truth_path).unwrap();
    assert!(header.starts_with("genotype\tgenetic_focal\tfactor_1\tfactor_2\n"));
}

#[test]
fn phenotype_rows_may_arrive_in_any_order() {
    let text = "genotype\trep\tx\ty\nB\t2\t1\t2\nA\t1\t3\t4\nA\t2\t5\t6\nB\t1\t7\t8\n";
    let data = parse_phenotypes(text).unwrap();
    assert_eq!(data.genotype_ids(), ["B", "A"]);
    assert_eq!(data.replicates(), 2);
    let blues = gfblup::genotype_means(&data);
    assert_eq!(
        blues.values,
        DMatrix::from_row_slice(2, 2, &[4.0, 5.0, 4.0, 5.0])
    );
}

#[test]
fn malformed_phenotype_files_are_rejected() {
    let cases = [
        ("", 1),
        ("id\trep\tx\ty\n", 1),
        ("genotype\trep\n", 1),
        ("genotype\trep\tx\ty\nA\t1\t2\n", 2),
        ("genotype\trep\tx\ty\nA\t1\t2\t3\nA\tone\t2\t3\n", 3),
        ("genotype\trep\tx\ty\nA\t1\tna\t3\n", 2),
        ("genotype\trep\tx\ty\nA\t1\t2\tinf\n", 2),
        ("genotype\trep\tx\ty\nA\t1\t2\tabc\n", 2),
    ];
    for (text, line) in cases {
        match parse_phenotypes(text) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?} gave {other:?}"),
        }
    }
    let unbalanced = "genotype\trep\tx\ty\nA\t1\t1\t2\nA\t2\t1\t2\nB\t1\t1\t2\n";
    assert!(matches!(
        parse_phenotypes(unbalanced),
        Err(Error::Unbalanced { .. })
    ));
}

#[test]
fn malformed_marker_files_are_rejected() {
    assert!(matches!(
        parse_markers("genotype\ts1\nA\tNA\n"),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        parse_markers("genotype\ts1\nA\t3\n"),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        parse_markers("genotype\ts1\nA\t-1\n"),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        parse_markers("snp\ts1\nA\t1\n"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_markers("genotype\ts1\ts2\nA\t1\n"),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        parse_markers("genotype\ts1\nA\t1\nA\t0\n"),
        Err(Error::InvalidData(_))
    ));
}

#[test]
fn predictions_round_trip() {
    let rep = simulate_replicate(
        &SimConfig {
            n_g: 40,
            n_snp: 100,
            blocks: 2,
            feats_per_block: 3,
            n_signal_factors: 1,
            ..SimConfig::default()
        },
        30,
        4,
    )
    .unwrap();
    let res = gfblup::pipeline::fit_univariate(&rep.train, &rep.kinship)
        .unwrap()
        .predict()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.tsv");
    write_predictions(&res, &path).unwrap();
    let back = parse_predictions(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back.len(), 10);
    for (i, (g, v, s)) in back.iter().enumerate() {
        assert_eq!(g, &res.test_ids[i]);
        assert_eq!(*v, res.test_predictions[i]);
        assert_eq!(*s, res.scenario);
    }
    assert!(format_predictions(&res).starts_with("genotype\tprediction\tscenario\n"));
    assert!(parse_predictions("genotype\tprediction\tscenario\nA\t1.0\tcv9\n").is_err());
}

#[test]
fn factor_bundle_is_written() {
    let loadings = DMatrix::from_column_slice(4, 1, &[0.9, 0.8, 0.7, 0.6]);
    let mut r = &loadings * loadings.transpose();
    for i in 0..4 {
        r[(i, i)] = 1.0;
    }
    let model = fit_factor_model(&r, 1).unwrap();
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("factors");
    write_factor_bundle(&model, &names, &bundle).unwrap();
    let l = std::fs::read_to_string(bundle.join("loadings.tsv")).unwrap();
    let rows: Vec<&str> = l.lines().collect();
    assert_eq!(rows[0], "feature\tfactor_1");
    assert_eq!(rows.len(), 5);
    let first: f64 = rows[1].split('\t').nth(1).unwrap().parse().unwrap();
    assert_eq!(first, model.loadings[(0, 0)]);
    let u = std::fs::read_to_string(bundle.join("uniquenesses.tsv")).unwrap();
    assert_eq!(u.lines().count(), 5);
    let meta = std::fs::read_to_string(bundle.join("metadata.tsv")).unwrap();
    assert!(meta.contains("m\t1\n"));
    assert!(write_factor_bundle(&model, &names[..3], &bundle).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_phenotypes(std::path::Path::new("/nonexistent/pheno.tsv")).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn phenotype_text_round_trip_is_exact(n_g in 1usize..8, r in 1usize..4, p in 1usize..5, seed in any::<u64>()) {
        let values = normal_matrix(&mut rng(seed), n_g * r, p + 1) * 1e3;
        let names = (0..p).map(|j| format!("f{j}")).collect();
        let data = PlotData::new(values, design_rows(n_g, r), ids(n_g), names, "focal").unwrap();
        prop_assert_eq!(parse_phenotypes(&format_phenotypes(&data)).unwrap(), data);
    }
}
