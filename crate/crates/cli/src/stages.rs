//! One function per subcommand. Each reads the artifacts it needs, writes
//! its own, and finishes with a manifest under `manifests/`.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vaediff::augmentation::{combine, generate_synthetic_rows, minority_rows, plan_rebalance, RebalancePlan};
use vaediff::data::{load_csv, simulate_zip_table, split, SimulationSpec, Table, ZipParams};
use vaediff::diffusion::{train_diffusion, DiffusionModel};
use vaediff::explain::{dependence_export, importance_csv, sample_background, shapley, summary_export, ShapleyMode};
use vaediff::predictors::{evaluate, fit_zip, grid_search, train_gbt, AccuracyReport, GridSearchResult, ModelFile};
use vaediff::quality::{evaluate_quality, sanitize_file_stem};
use vaediff::vae::{train_vae, VaeModel};

use crate::config::{Law, RunConfig, Variant};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    TrainVae,
    TrainDiffusion,
    Generate,
    Rebalance,
    EvalQuality,
    FitPredictor,
    FitZip,
    Evaluate,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Simulate,
        Stage::TrainVae,
        Stage::TrainDiffusion,
        Stage::Generate,
        Stage::Rebalance,
        Stage::EvalQuality,
        Stage::FitPredictor,
        Stage::FitZip,
        Stage::Evaluate,
        Stage::Explain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::TrainVae => "train-vae",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::Generate => "generate",
            Stage::Rebalance => "rebalance",
            Stage::EvalQuality => "eval-quality",
            Stage::FitPredictor => "fit-predictor",
            Stage::FitZip => "fit-zip",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }

    /// Runs the stage and returns the manifest path.
    pub fn run(self, cfg: &RunConfig) -> CliResult<PathBuf> {
        log::info!("stage {}", self.name());
        let mut m = ManifestBuilder::new(self.name());
        match self {
            Stage::Simulate => simulate(cfg, &mut m)?,
            Stage::TrainVae => train_vae_stage(cfg, &mut m)?,
            Stage::TrainDiffusion => train_diffusion_stage(cfg, &mut m)?,
            Stage::Generate => generate(cfg, &mut m)?,
            Stage::Rebalance => rebalance(cfg, &mut m)?,
            Stage::EvalQuality => eval_quality(cfg, &mut m)?,
            Stage::FitPredictor => fit_predictor(cfg, &mut m)?,
            Stage::FitZip => fit_zip_stage(cfg, &mut m)?,
            Stage::Evaluate => evaluate_stage(cfg, &mut m)?,
            Stage::Explain => explain(cfg, &mut m)?,
        }
        m.write(&cfg.paths.manifests())
    }
}

fn require(path: &Path, stage: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        })
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.to_path_buf(), e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str, m: &mut ManifestBuilder) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    m.output(path);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, m: &mut ManifestBuilder) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(vaediff::Error::from)?;
    text.push('\n');
    write_text(path, &text, m)
}

fn write_table(table: &Table, csv: &Path, schema: &Path, m: &mut ManifestBuilder) -> CliResult<()> {
    write_text(csv, &table.to_csv_string()?, m)?;
    write_text(schema, &table.schema().to_sidecar_string()?, m)
}

fn load_table(csv: &Path, schema: &Path, stage: &'static str, m: &mut ManifestBuilder) -> CliResult<Table> {
    require(csv, stage)?;
    require(schema, stage)?;
    m.input(csv).input(schema);
    Ok(load_csv(csv, schema)?)
}

/// The simulated (or supplied) dataset split into training and test rows.
fn train_test(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<(Table, Table)> {
    let data = load_table(&cfg.paths.data(), &cfg.paths.schema(), "simulate", m)?;
    m.seed("split", cfg.seeds.split()).section("split", &cfg.split)?;
    Ok(split(&data, cfg.split.train_fraction, cfg.seeds.split())?)
}

fn load_vae(cfg: &RunConfig, minority: &Table, m: &mut ManifestBuilder) -> CliResult<VaeModel> {
    let path = cfg.paths.vae_checkpoint();
    require(&path, "train-vae")?;
    m.input(&path);
    Ok(VaeModel::load(&path, minority.schema())?)
}

fn load_diffusion(cfg: &RunConfig, vae: &VaeModel, m: &mut ManifestBuilder) -> CliResult<DiffusionModel> {
    let path = cfg.paths.diffusion_checkpoint();
    require(&path, "train-diffusion")?;
    m.input(&path);
    Ok(DiffusionModel::load(&path, &vae.schema().fingerprint(), vae.latent_dim())?)
}

fn load_model(cfg: &RunConfig, name: &str, m: &mut ManifestBuilder) -> CliResult<ModelFile> {
    let path = cfg.paths.model(name);
    require(&path, if name == "zip" { "fit-zip" } else { "fit-predictor" })?;
    m.input(&path);
    Ok(ModelFile::load(&path)?)
}

fn simulate(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let seed = cfg.seeds.simulate();
    m.seed("simulate", seed).section("simulate", &cfg.simulate)?;
    let params = match cfg.simulate.law {
        Law::Linear => ZipParams::paper_shaped_linear(),
        Law::Nonlinear => ZipParams::paper_shaped_nonlinear(),
    };
    let table = simulate_zip_table(cfg.simulate.n_rows, &SimulationSpec::paper_shaped(), &params, seed)?;
    if !table.is_empty() {
        let (zero, nonzero) = table.zero_nonzero_counts()?;
        log::info!(
            "simulated {} rows, {:.1}% zero ({zero} zero, {nonzero} non-zero)",
            table.n_rows(),
            100.0 * zero as f64 / table.n_rows() as f64
        );
    }
    write_table(&table, &cfg.paths.data(), &cfg.paths.schema(), m)
}

fn train_vae_stage(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let minority = minority_rows(&train)?;
    m.seed("vae", cfg.seeds.vae()).section("vae", &cfg.vae)?;
    log::info!("training VAE on {} non-zero training rows", minority.n_rows());
    let (vae, log) = train_vae(&minority, &cfg.vae, cfg.seeds.vae())?;
    let path = cfg.paths.vae_checkpoint();
    ensure_parent(&path)?;
    vae.save(&path)?;
    m.output(&path);
    write_json(&cfg.paths.logs().join("vae.json"), &log, m)
}

fn train_diffusion_stage(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let minority = minority_rows(&train)?;
    let vae = load_vae(cfg, &minority, m)?;
    m.seed("diffusion", cfg.seeds.diffusion()).section("diffusion", &cfg.diffusion)?;
    let latents = vae.extract_latents(&minority)?;
    let (model, log) = train_diffusion(&latents, &cfg.diffusion, cfg.seeds.diffusion())?;
    let path = cfg.paths.diffusion_checkpoint();
    ensure_parent(&path)?;
    model.save(&path, &vae.schema().fingerprint())?;
    m.output(&path);
    write_json(&cfg.paths.logs().join("diffusion.json"), &log, m)
}

#[derive(Serialize)]
struct GenerateLog {
    plan: RebalancePlan,
    accepted: usize,
    attempts: usize,
    acceptance_rate: f64,
}

fn generate(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let minority = minority_rows(&train)?;
    let vae = load_vae(cfg, &minority, m)?;
    let diffusion = load_diffusion(cfg, &vae, m)?;
    m.seed("generate", cfg.seeds.generate())
        .section("rebalance", &cfg.rebalance)?
        .section("generate", &cfg.generate)?;
    let plan = plan_rebalance(&train, cfg.rebalance.ratio)?;
    log::info!(
        "plan: {} zero, {} non-zero, generating {}",
        plan.zero,
        plan.nonzero,
        plan.to_generate
    );
    let generated = generate_synthetic_rows(&vae, &diffusion, plan.to_generate, cfg.seeds.generate(), &cfg.generate)?;
    let table = generated.table.with_schema(train.schema().clone())?;
    write_table(&table, &cfg.paths.synthetic(), &cfg.paths.synthetic_schema(), m)?;
    let log = GenerateLog {
        plan,
        accepted: table.n_rows(),
        attempts: generated.attempts,
        acceptance_rate: generated.acceptance_rate(),
    };
    write_json(&cfg.paths.logs().join("generate.json"), &log, m)
}

fn rebalance(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let synthetic = load_table(&cfg.paths.synthetic(), &cfg.paths.synthetic_schema(), "generate", m)?;
    m.section("rebalance", &cfg.rebalance)?;
    let plan = plan_rebalance(&train, cfg.rebalance.ratio)?;
    if synthetic.n_rows() != plan.to_generate {
        return Err(vaediff::Error::InvalidArgument {
            op: "rebalance",
            message: format!(
                "{} holds {} rows but the plan needs {}; rerun `vaediff generate`",
                cfg.paths.synthetic().display(),
                synthetic.n_rows(),
                plan.to_generate
            ),
        }
        .into());
    }
    let balanced = combine(&train, &synthetic)?;
    let (zero, nonzero) = balanced.zero_nonzero_counts()?;
    log::info!("rebalanced training set: {zero} zero, {nonzero} non-zero");
    write_table(&balanced, &cfg.paths.rebalanced(), &cfg.paths.rebalanced_schema(), m)
}

fn eval_quality(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let real = minority_rows(&train)?;
    let synthetic = load_table(&cfg.paths.synthetic(), &cfg.paths.synthetic_schema(), "generate", m)?;
    let diff = real.schema().diff(synthetic.schema());
    if !diff.is_empty() {
        return Err(vaediff::Error::Schema(format!(
            "real and synthetic schemas differ ({} vs {}): {}",
            cfg.paths.schema().display(),
            cfg.paths.synthetic_schema().display(),
            diff.join("; ")
        ))
        .into());
    }
    m.seed("quality", cfg.seeds.quality()).section("quality", &cfg.quality)?;
    let dir = cfg.paths.out.join("quality");
    let densities = dir.join("densities");
    std::fs::create_dir_all(&densities).map_err(|e| CliError::io(densities.clone(), e))?;
    let synthetic = synthetic.with_schema(real.schema().clone())?;
    let report = evaluate_quality(&real, &synthetic, &cfg.quality.with_seed(cfg.seeds.quality()), Some(&densities))?;
    log::info!(
        "c2st {:.3}, alpha {:.3}, beta {:.3}, pcd_mean {:.4}",
        report.c2st,
        report.alpha_precision,
        report.beta_recall,
        report.pcd_mean
    );
    for f in &report.density_exports {
        m.output(&densities.join(f));
    }
    write_json(&dir.join("report.json"), &report, m)
}

#[derive(Serialize)]
struct PredictorLog {
    variant: Variant,
    training_rows: usize,
    grid_search: Option<GridSearchResult>,
    train_mse: Vec<f64>,
}

fn fit_predictor(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    let seed = cfg.seeds.predictor();
    m.seed("predictor", seed).section("predictor", &cfg.predictor)?;
    for &variant in &cfg.predictor.variants {
        let table = match variant {
            Variant::Imbalanced => train.clone(),
            Variant::Rebalanced => {
                load_table(&cfg.paths.rebalanced(), &cfg.paths.rebalanced_schema(), "rebalance", m)?
            }
        };
        let search = if cfg.predictor.grid.len() > 1 {
            Some(grid_search(&table, &cfg.predictor.grid, cfg.predictor.folds, seed)?)
        } else {
            None
        };
        let best = search.as_ref().map_or(cfg.predictor.grid[0], |s| s.best);
        log::info!("{}: fitting {:?} on {} rows", variant.model_name(), best, table.n_rows());
        let (model, gbt_log) = train_gbt(&table, &best)?;
        let path = cfg.paths.model(variant.model_name());
        write_text(&path, &ModelFile::Gbt(model).to_json()?, m)?;
        let log = PredictorLog {
            variant,
            training_rows: table.n_rows(),
            grid_search: search,
            train_mse: gbt_log.train_mse,
        };
        write_json(&cfg.paths.logs().join(format!("{}.json", variant.model_name())), &log, m)?;
    }
    Ok(())
}

fn fit_zip_stage(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, _) = train_test(cfg, m)?;
    m.section("zip", &cfg.zip)?;
    let model = fit_zip(&train, &cfg.zip)?;
    log::info!(
        "zip converged after {} iterations, log-likelihood {:.3}",
        model.trajectory.len(),
        model.log_likelihood
    );
    write_text(&cfg.paths.model("zip"), &ModelFile::Zip(model).to_json()?, m)
}

#[derive(Serialize)]
struct ModelAccuracy {
    model: String,
    #[serde(flatten)]
    report: AccuracyReport,
}

fn evaluate_stage(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (_, test) = train_test(cfg, m)?;
    m.section("evaluate", &cfg.evaluate)?;
    let y = test.target_values()?;
    let mut rows = Vec::new();
    for name in &cfg.evaluate.models {
        let model = load_model(cfg, name, m)?;
        let report = evaluate(&model.predict(&test)?, &y)?;
        log::info!(
            "{name}: mse overall {:.4}, mse non-zero {:.4}",
            report.mse_overall,
            report.mse_nonzero
        );
        rows.push(ModelAccuracy {
            model: name.clone(),
            report,
        });
    }
    let dir = cfg.paths.out.join("evaluation");
    write_json(&dir.join("accuracy.json"), &rows, m)?;
    let mut csv = format!("model,{}\n", AccuracyReport::CSV_HEADER);
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.model, r.report.csv_row()));
    }
    write_text(&dir.join("accuracy.csv"), &csv, m)
}

fn explain(cfg: &RunConfig, m: &mut ManifestBuilder) -> CliResult<()> {
    let (train, test) = train_test(cfg, m)?;
    let e = &cfg.explain;
    let model = load_model(cfg, &e.model, m)?;
    let seed = cfg.seeds.explain();
    m.seed("explain", seed).section("explain", e)?;
    let features = model.features();
    let names: Vec<String> = features.names().iter().map(|s| s.to_string()).collect();
    let rows = sample_background(&features.matrix(&test)?, e.rows, seed);
    let background = sample_background(&features.matrix(&train)?, e.background, seed.wrapping_add(1));
    let mode = if e.exact {
        ShapleyMode::Exact
    } else {
        ShapleyMode::Sampled {
            n_permutations: e.n_permutations,
        }
    };
    let result = shapley(&model, &names, &rows, &background, mode, seed.wrapping_add(2))?;
    let dir = cfg.paths.out.join("explain").join(sanitize_file_stem(&e.model));
    std::fs::create_dir_all(&dir).map_err(|err| CliError::io(dir.clone(), err))?;
    let summary = dir.join("summary.csv");
    let ranking = summary_export(&result, &rows, &summary)?;
    m.output(&summary);
    if let Some(top) = ranking.first() {
        log::info!("most important feature: {} (mean |phi| {:.4})", top.feature, top.mean_abs_phi);
    }
    write_text(&dir.join("importance.csv"), &importance_csv(&ranking), m)?;
    write_json(&dir.join("importance.json"), &ranking, m)?;
    for (f, g) in &e.dependence {
        let path = dir.join(format!(
            "dependence_{}__{}.csv",
            sanitize_file_stem(f),
            sanitize_file_stem(g)
        ));
        dependence_export(&result, &rows, f, g, true, &path)?;
        m.output(&path);
    }
    Ok(())
}
