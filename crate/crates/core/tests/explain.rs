use vaediff::data::{
    simulate_zip_table, ColumnKind, ColumnSchema, ExplanatorySpec, Marginal, SimulationSpec, Table, Term, Value,
    ZipParams,
};
use vaediff::explain::{
    dependence_csv, dependence_export, importance_ranking, sample_background, shapley, summary_csv, summary_export,
    FnModel, Model, ShapleyMode,
};
use vaediff::matrix::Matrix;
use vaediff::predictors::{train_gbt, GbtConfig, TreeEnsemble};

fn names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("f{j}")).collect()
}

fn normal(name: &str) -> ExplanatorySpec {
    ExplanatorySpec {
        name: name.into(),
        kind: ColumnKind::RealValued,
        values: Vec::new(),
        marginal: Marginal::Normal {
            mean: 0.0,
            std: 1.0,
            min: -3.0,
            max: 3.0,
        },
    }
}

/// Five informative reals plus a constant column `c` the trees cannot use.
fn six_feature_tree() -> (TreeEnsemble, Table) {
    let spec = SimulationSpec {
        columns: ["a", "b", "d", "e", "g"].iter().map(|n| normal(n)).collect(),
        target: "y".into(),
    };
    let lin = |f: &str, w: f64| Term::Linear {
        feature: f.into(),
        weight: w,
    };
    let params = ZipParams {
        zero_intercept: 0.0,
        zero_terms: vec![lin("a", -0.7)],
        rate_intercept: 0.5,
        rate_terms: vec![
            lin("a", 0.4),
            lin("b", 0.3),
            lin("d", -0.2),
            Term::Product {
                a: "e".into(),
                b: "g".into(),
                weight: 0.3,
            },
        ],
    };
    let t = simulate_zip_table(1500, &spec, &params, 41)
        .unwrap()
        .with_constant_column(ColumnSchema::real("c"), Value::Real(1.0))
        .unwrap();
    let cfg = GbtConfig {
        n_trees: 30,
        max_depth: 3,
        ..GbtConfig::default()
    };
    (train_gbt(&t, &cfg).unwrap().0, t)
}

#[test]
fn additive_model_matches_closed_form() {
    let a = [2.0, -1.0, 0.5, 3.0];
    let model = FnModel {
        n_features: 4,
        f: move |x: &[f64]| x.iter().zip(&a).map(|(v, w)| v * w).sum(),
    };
    let rows = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 5.0, 0.5]], 4).unwrap();
    let bg = Matrix::from_rows(&[vec![0.5, 1.0, -1.0, 2.0]], 4).unwrap();
    let r = shapley(&model, &names(4), &rows, &bg, ShapleyMode::Exact, 0).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let want = a[j] * (rows.get(i, j) - bg.get(0, j));
            assert!((r.phi.get(i, j) - want).abs() < 1e-12);
        }
    }
    // largest |a_j (x_j − b_j)| on average is feature 3
    assert_eq!(importance_ranking(&r)[0].feature, "f3");
}

#[test]
fn efficiency_holds_in_exact_mode() {
    let (model, t) = six_feature_tree();
    let x = model.features.matrix(&t).unwrap();
    let rows = x.select_rows(&(0..25).collect::<Vec<_>>());
    let bg = sample_background(&x, 40, 3);
    let r = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Exact, 0).unwrap();
    for (i, row) in rows.iter_rows().enumerate() {
        let total: f64 = r.phi.row(i).iter().sum::<f64>() + r.base_value;
        assert!((total - Model::predict_row(&model, row)).abs() < 1e-9);
    }
}

#[test]
fn symmetric_features_share_credit() {
    let model = FnModel {
        n_features: 3,
        f: |x: &[f64]| (x[0] + x[1]).powi(2) + x[2] * x[0] * x[1],
    };
    let rows = Matrix::from_rows(&[vec![1.5, 1.5, -2.0], vec![0.3, 0.3, 4.0]], 3).unwrap();
    let bg = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![-1.0, -1.0, 0.5]], 3).unwrap();
    let r = shapley(&model, &names(3), &rows, &bg, ShapleyMode::Exact, 0).unwrap();
    for i in 0..2 {
        assert!((r.phi.get(i, 0) - r.phi.get(i, 1)).abs() < 1e-9);
    }
}

#[test]
fn unused_feature_gets_zero() {
    let (model, t) = six_feature_tree();
    let c = model.features.index_of("c").unwrap();
    let mut used = Vec::new();
    for tree in &model.trees {
        tree.split_features(&mut used);
    }
    assert!(!used.contains(&c));
    let mut x = model.features.matrix(&t).unwrap().select_rows(&(0..10).collect::<Vec<_>>());
    for r in 0..x.rows() {
        x.set(r, c, r as f64 * 3.0 - 7.0);
    }
    let bg = sample_background(&model.features.matrix(&t).unwrap(), 20, 4);
    let r = shapley(&model, &names(6), &x, &bg, ShapleyMode::Exact, 0).unwrap();
    assert!(r.phi.column(c).iter().all(|v| *v == 0.0));
}

#[test]
fn sampled_agrees_with_exact_within_three_standard_errors() {
    let (model, t) = six_feature_tree();
    let x = model.features.matrix(&t).unwrap();
    let rows = x.select_rows(&[0, 1, 2]);
    let bg = sample_background(&x, 24, 5);
    let exact = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Exact, 0).unwrap();
    let sampled = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Sampled { n_permutations: 2000 }, 6).unwrap();
    let se = sampled.std_errors.as_ref().unwrap();
    for i in 0..3 {
        for j in 0..6 {
            let d = (exact.phi.get(i, j) - sampled.phi.get(i, j)).abs();
            assert!(d <= 3.0 * se.get(i, j) + 1e-12, "row {i} feature {j}: |Δ| {d}, se {}", se.get(i, j));
        }
        let total: f64 = sampled.phi.row(i).iter().sum::<f64>() + sampled.base_value;
        assert!((total - Model::predict_row(&model, rows.row(i))).abs() < 1e-9);
    }
}

#[test]
fn standard_error_shrinks_with_permutations() {
    let (model, t) = six_feature_tree();
    let x = model.features.matrix(&t).unwrap();
    let rows = x.select_rows(&[7]);
    let bg = sample_background(&x, 16, 7);
    let se_at = |n: usize| {
        let r = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Sampled { n_permutations: n }, 8).unwrap();
        r.std_errors.unwrap().row(0).iter().sum::<f64>()
    };
    let ratio = se_at(200) / se_at(800);
    // 1/√n scaling predicts a ratio of 2
    assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn exact_mode_refuses_too_many_features() {
    let model = FnModel { n_features: 17, f: |x: &[f64]| x[0] };
    let x = Matrix::zeros(1, 17);
    let err = shapley(&model, &names(17), &x, &x, ShapleyMode::Exact, 0).unwrap_err();
    assert!(err.to_string().contains("sampled"));
}

#[test]
fn exports_have_documented_shape() {
    let model = FnModel {
        n_features: 3,
        f: |x: &[f64]| x[0] - 3.0 * x[2],
    };
    let rows = Matrix::from_rows(&[vec![3.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![2.0, 0.0, 2.0]], 3).unwrap();
    let bg = Matrix::zeros(1, 3);
    let r = shapley(&model, &names(3), &rows, &bg, ShapleyMode::Exact, 0).unwrap();
    let summary = summary_csv(&r, &rows).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 3);
    let dep = dependence_csv(&r, &rows, "f0", "f1", true).unwrap();
    let lines: Vec<&str> = dep.lines().collect();
    assert_eq!(lines[0], "value,phi,interaction_value");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
    let first: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(first, vec![1.0, 2.0, 3.0]);
    assert!(dependence_csv(&r, &rows, "nope", "f1", false).is_err());

    let dir = tempfile::tempdir().unwrap();
    let ranking = summary_export(&r, &rows, &dir.path().join("s.csv")).unwrap();
    assert_eq!(ranking[0].feature, "f2");
    dependence_export(&r, &rows, "f2", "f0", false, &dir.path().join("d.csv")).unwrap();
}

#[test]
fn traffic_volume_ranks_first_on_simulator_data() {
    let t = simulate_zip_table(5000, &SimulationSpec::paper_shaped(), &ZipParams::paper_shaped_linear(), 42).unwrap();
    let (model, _) = train_gbt(&t, &GbtConfig::default()).unwrap();
    let x = model.features.matrix(&t).unwrap();
    let rows = sample_background(&x, 60, 9);
    let bg = sample_background(&x, 32, 10);
    let feature_names: Vec<String> = model.features.names().iter().map(|s| s.to_string()).collect();
    let r = shapley(&model, &feature_names, &rows, &bg, ShapleyMode::Sampled { n_permutations: 20 }, 11).unwrap();
    assert_eq!(importance_ranking(&r)[0].feature, "AAHT");
}
