//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of outcome so the workspace test run reports the
//! lines without aborting; set `ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.
//! `ACCEPTANCE_ONLY=8,9` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vaediff::augmentation::{minority_rows, plan_counts};
use vaediff::autodiff::{grad_check, Graph, ParamStore, Tensor, Var};
use vaediff::data::{encode, load_csv, simulate_zip_table, split, SimulationSpec, Table, Value, ZipParams};
use vaediff::diffusion::{train_diffusion, DiffusionConfig, DiffusionModel};
use vaediff::explain::{shapley, FnModel, Model, ShapleyMode};
use vaediff::matrix::Matrix;
use vaediff::predictors::{fit_zip, AccuracyReport, ZipConfig};
use vaediff::quality::{
    alpha_precision, auc, beta_recall, c2st, default_grid, evaluate_quality, independent_marginal_shuffle, pcd,
    C2stConfig,
};
use vaediff::vae::{train_vae, BetaConfig, VaeConfig, VaeModel};
use vaediff_cli::config::RunConfig;

type Check = Result<String, String>;

/// Turns a failed condition into `Err(detail)`.
fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const GRAD_TOL: f64 = 1e-3;
const INSTANCES: u64 = 10;

type OpFn = fn(&mut Graph, &[Var]) -> vaediff::Result<Var>;

fn draw(rng: &mut ChaCha8Rng, domain: u8) -> f64 {
    match domain {
        1 => rng.random_range(0.2..1.5),
        2 => {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        }
        _ => rng.random_range(-1.5..1.5),
    }
}

/// Worst relative error of `op` over the seeded instances.
fn op_error(name: &str, shapes: &[&[usize]], domain: u8, op: OpFn) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 104_729 + name.len() as u64);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let n: usize = s.iter().product();
                let values = (0..n).map(|_| draw(&mut rng, domain)).collect();
                store.add(format!("p{k}"), Tensor::parameter(s.to_vec(), values).unwrap())
            })
            .collect();
        let out_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
            let out = op(&mut g, &vars).map_err(fail)?;
            g.shape(out).to_vec()
        };
        let n_out: usize = out_shape.iter().product();
        let weights: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check(
            &mut store,
            |g, s| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                let out = op(g, &vars)?;
                let w = g.constant(out_shape.clone(), weights.clone())?;
                let prod = g.mul(out, w)?;
                g.sum(prod)
            },
            GRAD_TOL,
        )
        .map_err(fail)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn vae_loss_error() -> Result<f64, String> {
    let cfg = VaeConfig {
        d: 4,
        heads: 2,
        ffn_multiplier: 2,
        beta: BetaConfig::fixed(0.3),
        ..VaeConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let t = simulate_zip_table(6, &SimulationSpec::small(), &ZipParams::small_linear(), 300 + seed).map_err(fail)?;
        let fitted = t.fit_standardization();
        let x = encode(&t.with_schema(fitted.clone()).map_err(fail)?).map_err(fail)?.values;
        let model = VaeModel::new(&fitted, &cfg, seed).map_err(fail)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..x.rows() * model.latent_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut store = model.params().clone();
        let report = grad_check(
            &mut store,
            |g, s| {
                let mut m = model.clone();
                *m.params_mut() = s.clone();
                Ok(m.loss_graph(g, &x, Some(eps.clone()), 0.3)?.total)
            },
            GRAD_TOL,
        )
        .map_err(fail)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn diffusion_loss_error() -> Result<f64, String> {
    let cfg = DiffusionConfig {
        d_hidden: 12,
        time_frequencies: 3,
        ..DiffusionConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (b, dim) = (5, 3);
        let model = DiffusionModel::new(dim, &cfg, seed).map_err(fail)?;
        let z0 = Matrix::new(b, dim, (0..b * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).map_err(fail)?;
        let sigmas: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0f64..2.5).exp()).collect();
        let eps: Vec<f64> = (0..b * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut store = model.params().clone();
        let report = grad_check(
            &mut store,
            |g, s| {
                let mut m = model.clone();
                *m.params_mut() = s.clone();
                m.loss_graph(g, &z0, &sigmas, &eps)
            },
            GRAD_TOL,
        )
        .map_err(fail)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let ops: Vec<(&str, Vec<&[usize]>, u8, OpFn)> = vec![
        ("matmul", vec![&[3, 4], &[4, 2]], 0, |g, v| g.matmul(v[0], v[1])),
        ("batched matmul", vec![&[2, 3, 4], &[2, 4, 2]], 0, |g, v| g.matmul(v[0], v[1])),
        ("broadcast matmul", vec![&[2, 3, 4], &[4, 5]], 0, |g, v| g.matmul(v[0], v[1])),
        ("add", vec![&[3, 4], &[4]], 0, |g, v| g.add(v[0], v[1])),
        ("sub", vec![&[3], &[2, 3]], 0, |g, v| g.sub(v[0], v[1])),
        ("mul", vec![&[2, 3, 4], &[3, 4]], 0, |g, v| g.mul(v[0], v[1])),
        ("relu", vec![&[4, 5]], 2, |g, v| g.relu(v[0])),
        ("silu", vec![&[4, 5]], 0, |g, v| g.silu(v[0])),
        ("exp", vec![&[3, 3]], 0, |g, v| g.exp(v[0])),
        ("log", vec![&[3, 3]], 1, |g, v| g.log(v[0])),
        ("scale", vec![&[2, 5]], 0, |g, v| g.scale(v[0], -2.5)),
        ("softmax_rows", vec![&[2, 3, 4]], 0, |g, v| g.softmax_rows(v[0])),
        ("log_softmax_rows", vec![&[3, 5]], 0, |g, v| g.log_softmax_rows(v[0])),
        ("layer_norm", vec![&[3, 6]], 0, |g, v| g.layer_norm(v[0], 1e-5)),
        ("concat", vec![&[2, 3], &[2, 1], &[2, 2]], 0, |g, v| g.concat(v)),
        ("slice", vec![&[3, 6]], 0, |g, v| g.slice(v[0], 1, 4)),
        ("mean", vec![&[3, 4]], 0, |g, v| g.mean(v[0])),
        ("sum", vec![&[3, 4]], 0, |g, v| g.sum(v[0])),
        ("sum_squares", vec![&[3, 4]], 0, |g, v| g.sum_squares(v[0])),
        ("transpose", vec![&[2, 3, 4]], 0, |g, v| g.transpose(v[0])),
        ("reshape", vec![&[3, 4]], 0, |g, v| g.reshape(v[0], &[2, 6])),
    ];
    let mut worst = (0.0, "");
    for (name, shapes, domain, op) in &ops {
        let e = op_error(name, shapes, *domain, *op)?;
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let vae = vae_loss_error()?;
    let diffusion = diffusion_loss_error()?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} ops worst {:.1e} ({}), vae loss {vae:.1e}, diffusion loss {diffusion:.1e}, {secs:.1} s",
        ops.len(),
        worst.0,
        worst.1
    );
    ensure(worst.0 <= GRAD_TOL && vae <= GRAD_TOL && diffusion <= GRAD_TOL && secs < 60.0, detail)
}

// ---------------------------------------------------------------- 2

fn rebalance_arithmetic() -> Check {
    let full = plan_counts(15142, 2714, 1.0).map_err(fail)?;
    let train = plan_counts(10599, 1899, 1.0).map_err(fail)?;
    ensure(
        full.to_generate == 12428 && train.to_generate == 8700,
        format!("full {} to generate, training split {}", full.to_generate, train.to_generate),
    )
}

// ---------------------------------------------------------------- 3

fn vae_overfit() -> Check {
    let start = Instant::now();
    let t = simulate_zip_table(16, &SimulationSpec::paper_shaped(), &ZipParams::paper_shaped_linear(), 61)
        .map_err(fail)?;
    let cfg = VaeConfig {
        epochs: 2000,
        beta: BetaConfig::fixed(1e-3),
        ..VaeConfig::default()
    };
    let (vae, _) = train_vae(&t, &cfg, 62).map_err(fail)?;
    let fitted = t.with_schema(vae.schema().clone()).map_err(fail)?;
    let recon = vae.reconstruct(&fitted).map_err(fail)?;
    let (mut hits, mut discrete, mut abs, mut reals) = (0usize, 0usize, 0.0, 0usize);
    for (a, b) in fitted.rows().iter().zip(recon.rows()) {
        for (j, (va, vb)) in a.iter().zip(b).enumerate() {
            match (va, vb) {
                (Value::Category(x), Value::Category(y)) => {
                    discrete += 1;
                    hits += usize::from(x == y);
                }
                (Value::Real(x), Value::Real(y)) => {
                    let s = fitted.schema().column(j).standardization.ok_or("unfitted column")?.std;
                    abs += ((x - y) / s).abs();
                    reals += 1;
                }
                _ => return Err("column kinds differ".into()),
            }
        }
    }
    let mae = abs / reals.max(1) as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        hits == discrete && mae <= 0.05 && secs < 120.0,
        format!("discrete {hits}/{discrete}, standardized error {mae:.4}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 4

fn diffusion_modes() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let noise = Normal::new(0.0, 0.5).map_err(fail)?;
    let n = 2000;
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (cx, cy) = (if i % 2 == 0 { 3.0 } else { -3.0 }, if i % 4 < 2 { 3.0 } else { -3.0 });
        data.push(cx + noise.sample(&mut rng));
        data.push(cy + noise.sample(&mut rng));
    }
    let latents = Matrix::new(n, 2, data).map_err(fail)?;
    let cfg = DiffusionConfig {
        epochs: 100,
        ..DiffusionConfig::default()
    };
    let (model, _) = train_diffusion(&latents, &cfg, 72).map_err(fail)?;
    let samples = model.sample(2000, cfg.steps, 73).map_err(fail)?;
    let mut counts = [0usize; 4];
    for r in samples.iter_rows() {
        counts[usize::from(r[0] < 0.0) + 2 * usize::from(r[1] < 0.0)] += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        counts.iter().all(|c| *c >= 200) && secs < 300.0,
        format!("mode counts {counts:?} of 2000, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 5

fn shifted(t: &Table, shift: f64) -> Result<Table, String> {
    let rows = t
        .rows()
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| match v {
                    Value::Real(x) => Value::Real(x + shift),
                    other => *other,
                })
                .collect()
        })
        .collect();
    Table::new(t.schema().clone(), rows).map_err(fail)
}

fn metric_identities() -> Check {
    let sim = |n, seed| simulate_zip_table(n, &SimulationSpec::paper_shaped(), &ZipParams::paper_shaped_linear(), seed);
    let t = sim(4000, 11).map_err(fail)?;
    let self_pcd = pcd(&t, &t).map_err(fail)?.mean;
    let even: Vec<usize> = (0..t.n_rows()).step_by(2).collect();
    let odd: Vec<usize> = (1..t.n_rows()).step_by(2).collect();
    let cfg = C2stConfig::default();
    let halves = c2st(&t.select_rows(&even), &t.select_rows(&odd), &cfg).map_err(fail)?;
    let small = sim(1000, 12).map_err(fail)?;
    let far = c2st(&small, &shifted(&small, 1e5)?, &cfg).map_err(fail)?;
    let a = sim(2000, 15).map_err(fail)?;
    let alpha = alpha_precision(&a, &a, &default_grid()).map_err(fail)?;
    let beta = beta_recall(&a, &a, &default_grid()).map_err(fail)?;
    let hand = auc(&[false, false, true, true], &[0.1, 0.4, 0.35, 0.8]).map_err(fail)?;
    ensure(
        self_pcd == 0.0 && halves >= 0.9 && far <= 0.05 && alpha >= 0.95 && beta >= 0.95 && hand == 0.75,
        format!(
            "pcd(R,R) {self_pcd}, c2st halves {halves:.3}, c2st shifted {far:.3}, alpha {alpha:.3}, beta {beta:.3}, auc {hand}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn zip_recovery() -> Check {
    let start = Instant::now();
    let spec = SimulationSpec::small();
    let truth = ZipParams::small_linear();
    let t = simulate_zip_table(10_000, &spec, &truth, 35).map_err(fail)?;
    let model = fit_zip(&t, &ZipConfig::default()).map_err(fail)?;
    let (tz, tr) = truth.linear_weights(&spec.explanatory_names());
    let zse = model.zero_se.as_ref().ok_or("no zero-part standard errors")?;
    let rse = model.rate_se.as_ref().ok_or("no rate-part standard errors")?;
    let mut want_zero = vec![truth.zero_intercept];
    want_zero.extend(&tz);
    let mut want_rate = vec![truth.rate_intercept];
    want_rate.extend(&tr);
    let mut worst: f64 = 0.0;
    for (fit, (want, se)) in model.zero_coef.iter().zip(want_zero.iter().zip(zse)) {
        worst = worst.max((fit - want).abs() / se);
    }
    for (fit, (want, se)) in model.rate_coef.iter().zip(want_rate.iter().zip(rse)) {
        worst = worst.max((fit - want).abs() / se);
    }
    let monotone = model.trajectory.windows(2).all(|w| w[1] >= w[0]);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 3.0 && monotone && secs < 60.0,
        format!(
            "{} coefficients, worst |error|/se {worst:.2}, log-likelihood non-decreasing over {} iterations: {monotone}, {secs:.1} s",
            want_zero.len() + want_rate.len(),
            model.trajectory.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("f{j}")).collect()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn shapley_axioms() -> Check {
    // f0 and f1 enter symmetrically; f5 is never read
    let model = FnModel {
        n_features: 6,
        f: |x: &[f64]| x[0] * x[1] + 2.0 * x[2] + x[3].sin() * x[4] + (x[0] + x[1]).powi(2) + x[4] * x[4],
    };
    let mut rows = random_matrix(8, 6, 81);
    let mut bg = random_matrix(12, 6, 82);
    for m in [&mut rows, &mut bg] {
        for r in 0..m.rows() {
            m.set(r, 1, m.get(r, 0));
        }
    }
    let exact = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Exact, 0).map_err(fail)?;
    let (mut efficiency, mut symmetry, mut dummy): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..rows.rows() {
        let total: f64 = exact.phi.row(i).iter().sum::<f64>() + exact.base_value;
        efficiency = efficiency.max((total - Model::predict_row(&model, rows.row(i))).abs());
        symmetry = symmetry.max((exact.phi.get(i, 0) - exact.phi.get(i, 1)).abs());
        dummy = dummy.max(exact.phi.get(i, 5).abs());
    }
    let sampled = shapley(&model, &names(6), &rows, &bg, ShapleyMode::Sampled { n_permutations: 2000 }, 83)
        .map_err(fail)?;
    let se = sampled.std_errors.as_ref().ok_or("no standard errors")?;
    let mut outside = 0;
    for i in 0..rows.rows() {
        for j in 0..6 {
            let d = (exact.phi.get(i, j) - sampled.phi.get(i, j)).abs();
            outside += usize::from(d > 3.0 * se.get(i, j) + 1e-12);
        }
    }
    ensure(
        efficiency <= 1e-9 && symmetry <= 1e-9 && dummy <= 1e-9 && outside == 0,
        format!(
            "efficiency {efficiency:.1e}, symmetry {symmetry:.1e}, dummy {dummy:.1e}, sampled outside 3 se: {outside}/{}",
            rows.rows() * 6
        ),
    )
}

// ---------------------------------------------------------------- 8 and 9

#[derive(serde::Deserialize)]
struct ModelAccuracy {
    model: String,
    #[serde(flatten)]
    report: AccuracyReport,
}

/// The default pipeline, run once and shared by criteria 8 and 9.
struct PipelineRun {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    secs: f64,
}

fn default_pipeline() -> Result<PipelineRun, String> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let out = dir.path().join("run");
    let start = Instant::now();
    vaediff_cli::run(["vaediff", "--out", out.to_str().unwrap(), "pipeline"]).map_err(fail)?;
    let mut cfg = RunConfig::default();
    cfg.paths.out = out;
    Ok(PipelineRun {
        _dir: dir,
        cfg,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(fail)
}

fn directional_accuracy(run: &PipelineRun) -> Check {
    let data = load_csv(&run.cfg.paths.data(), &run.cfg.paths.schema()).map_err(fail)?;
    let (zero, nonzero) = data.zero_nonzero_counts().map_err(fail)?;
    let share = zero as f64 / data.n_rows() as f64;
    let rows: Vec<ModelAccuracy> = read_json(&run.cfg.paths.out.join("evaluation/accuracy.json"))?;
    let get = |name: &str| {
        rows.iter()
            .find(|r| r.model == name)
            .map(|r| &r.report)
            .ok_or_else(|| format!("no accuracy row for {name}"))
    };
    let (imb, reb, zip) = (get("gbt_imbalanced")?, get("gbt_rebalanced")?, get("zip")?);
    let nonzero_better = reb.mse_nonzero < imb.mse_nonzero;
    let imb_beats_zip = imb.mse_overall < zip.mse_overall;
    let reb_beats_zip = reb.mse_overall < zip.mse_overall;
    ensure(
        nonzero_better && imb_beats_zip && reb_beats_zip && run.secs <= 900.0 && data.n_rows() == 17856,
        format!(
            "n {} ({zero}/{nonzero}, {:.1}% zeros); non-zero MSE rebalanced {:.3} vs imbalanced {:.3}; \
             overall MSE imbalanced {:.4}, rebalanced {:.4}, zip {:.4}; pipeline {:.0} s",
            data.n_rows(),
            100.0 * share,
            reb.mse_nonzero,
            imb.mse_nonzero,
            imb.mse_overall,
            reb.mse_overall,
            zip.mse_overall,
            run.secs
        ),
    )
}

fn quality_ordering(run: &PipelineRun) -> Check {
    let cfg = &run.cfg;
    let synthetic: vaediff::quality::QualityReport = read_json(&cfg.paths.out.join("quality/report.json"))?;
    let data = load_csv(&cfg.paths.data(), &cfg.paths.schema()).map_err(fail)?;
    let (train, _) = split(&data, cfg.split.train_fraction, cfg.seeds.split()).map_err(fail)?;
    let real = minority_rows(&train).map_err(fail)?;
    let shuffle = independent_marginal_shuffle(&real, cfg.seeds.quality()).map_err(fail)?;
    let baseline =
        evaluate_quality(&real, &shuffle, &cfg.quality.with_seed(cfg.seeds.quality()), None).map_err(fail)?;
    ensure(
        synthetic.c2st > baseline.c2st && synthetic.pcd_mean < baseline.pcd_mean,
        format!(
            "c2st synthetic {:.4} vs shuffle {:.4}; pcd_mean synthetic {:.4} vs shuffle {:.4}",
            synthetic.c2st, baseline.c2st, synthetic.pcd_mean, baseline.pcd_mean
        ),
    )
}

// ---------------------------------------------------------------- 10

const TINY: &str = r#"
[simulate]
n_rows = 600

[vae]
epochs = 3
d = 4

[diffusion]
epochs = 3
d_hidden = 16
time_frequencies = 4
steps = 5

[quality]
iterations = 50
folds = 2
joint_pairs = [["AAHT", "Hour"]]

[predictor]
folds = 2
grid = [{ n_trees = 5, max_depth = 2 }, { n_trees = 10, max_depth = 2 }]

[zip]
max_iter = 500

[explain]
rows = 8
background = 8
n_permutations = 4
dependence = [["AAHT", "Hour"]]
"#;

fn manifests(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(fail)? {
        let path = entry.map_err(fail)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, std::fs::read(&path).map_err(fail)?);
    }
    Ok(out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(fail)?;
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).map_err(fail)?;
    let out = dir.path().join("run");
    let args = ["vaediff", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "pipeline"];
    vaediff_cli::run(args).map_err(fail)?;
    let first = manifests(&out.join("manifests"))?;
    vaediff_cli::run(args).map_err(fail)?;
    let second = manifests(&out.join("manifests"))?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure(
        first.len() == 10 && first.len() == second.len() && differing.is_empty(),
        format!("{} stage manifests, differing: {differing:?}", first.len()),
    )
}

// ----------------------------------------------------------------

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut failures = 0;
    let mut report = |n: u32, what: &str, result: Check| {
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {n:>2} {what}: {detail}");
    };

    if wanted(1) {
        report(1, "gradient correctness", gradient_correctness());
    }
    if wanted(2) {
        report(2, "rebalance arithmetic", rebalance_arithmetic());
    }
    if wanted(3) {
        report(3, "VAE overfit", vae_overfit());
    }
    if wanted(4) {
        report(4, "diffusion mode coverage", diffusion_modes());
    }
    if wanted(5) {
        report(5, "metric identities", metric_identities());
    }
    if wanted(6) {
        report(6, "ZIP parameter recovery", zip_recovery());
    }
    if wanted(7) {
        report(7, "Shapley axioms", shapley_axioms());
    }
    if wanted(8) || wanted(9) {
        let pipeline = default_pipeline().map_err(|e| format!("default pipeline failed: {e}"));
        if wanted(8) {
            report(8, "directional accuracy ordering", pipeline.as_ref().map_err(Clone::clone).and_then(directional_accuracy));
        }
        if wanted(9) {
            report(9, "quality ordering against shuffle", pipeline.as_ref().map_err(Clone::clone).and_then(quality_ordering));
        }
    }
    if wanted(10) {
        report(10, "manifest determinism", determinism());
    }
    println!("acceptance: {failures} failing");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
