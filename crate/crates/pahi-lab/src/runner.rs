//! Config-driven experiment runner behind the CLI: pretrain, train-hi,
//! train-pahi, eval, and bench, each writing a metrics CSV, a JSON summary,
//! and (where applicable) a checkpoint and image dumps into the output
//! directory. Identical (config, seed) inputs produce byte-identical
//! artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{restore_named, Checkpoint, CheckpointKind, NamedArray};
use crate::config::{apply_overrides, ExperimentConfig, FrozenStack};
use crate::error::{LabError, Result};
use crate::eval::{aggregate_runs, bench_inference, evaluate_win_rate, Candidate};
use crate::fsio::write_atomic;
use crate::image::dump_image_pair;
use crate::inversion::{hi_optimize, NoiseDistribution};
use crate::metrics::{write_metrics, MetricRow};
use crate::predictor::{pahi_train, pretrain, EmbeddingDecoder, NoisePredictor};
use crate::rng::{self, rng_from_seed};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Pretrain,
    TrainHi,
    TrainPahi,
    Eval,
    Bench,
}

/// Paths of the artifacts a run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub images: Vec<PathBuf>,
}

pub fn run(
    cmd: Subcommand,
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    overrides: &[(String, String)],
) -> Result<RunArtifacts> {
    let mut cfg = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = seed_override {
        cfg.master_seed = seed;
    }
    let cfg = apply_overrides(&cfg, overrides)?;
    run_with_config(cmd, &cfg, out_dir)
}

pub fn run_with_config(
    cmd: Subcommand,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let stack = cfg.build_stack()?;
    match cmd {
        Subcommand::Pretrain => run_pretrain(cfg, &stack, out_dir),
        Subcommand::TrainHi => run_train_hi(cfg, &stack, out_dir),
        Subcommand::TrainPahi => run_train_pahi(cfg, &stack, out_dir),
        Subcommand::Eval => run_eval(cfg, &stack, out_dir),
        Subcommand::Bench => run_bench(cfg, &stack, out_dir),
    }
}

fn write_summary(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn seeded_predictor(cfg: &ExperimentConfig) -> NoisePredictor {
    NoisePredictor::seeded(
        cfg.prompts.embed_dim,
        cfg.pahi.hidden,
        cfg.generator.noise_dim,
        cfg.pahi.init_gain,
        cfg.seed("pahi-predictor-init"),
    )
}

fn seeded_decoder(cfg: &ExperimentConfig) -> EmbeddingDecoder {
    EmbeddingDecoder::seeded(
        cfg.generator.noise_dim,
        cfg.pahi.hidden,
        cfg.prompts.embed_dim,
        cfg.pahi.init_gain,
        cfg.seed("pahi-decoder-init"),
    )
}

fn run_pretrain(cfg: &ExperimentConfig, stack: &FrozenStack, out: &Path) -> Result<RunArtifacts> {
    let predictor = seeded_predictor(cfg);
    let decoder = seeded_decoder(cfg);
    let report = pretrain(
        &predictor,
        &decoder,
        &stack.prompts,
        &cfg.pahi.pretrain,
        cfg.sigma_convention,
        cfg.seed("pahi-pretrain"),
    )?;

    let rows: Vec<MetricRow> = report
        .steps
        .iter()
        .map(|s| MetricRow {
            step: s.step,
            split: "pretrain".to_string(),
            scorer: String::new(),
            loss: Some(s.total),
            win_rate: None,
            lr: Some(cfg.pahi.pretrain.lr),
            wall_clock_ms: None,
        })
        .collect();
    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, &rows)?;

    let mut params: Vec<NamedArray> = predictor
        .named_params()
        .iter()
        .map(|(n, t)| NamedArray::from_tensor(n, t))
        .collect();
    params.extend(
        decoder
            .named_params()
            .iter()
            .map(|(n, t)| NamedArray::from_tensor(n, t)),
    );
    let ckpt = Checkpoint::new(
        CheckpointKind::Pretrain,
        cfg,
        stack,
        params,
        cfg.pahi.pretrain.steps,
        None,
    );
    let ckpt_path = out.join(CheckpointKind::Pretrain.file_name());
    ckpt.save(&ckpt_path)?;

    let summary_path = out.join("summary.json");
    write_summary(
        &summary_path,
        &json!({
            "subcommand": "pretrain",
            "steps": cfg.pahi.pretrain.steps,
            "init_kl_per_dim": report.init_kl_per_dim,
            "final_kl_per_dim": report.final_kl_per_dim,
            "init_recon_mse": report.init_recon_mse,
            "final_recon_mse": report.final_recon_mse,
        }),
    )?;
    Ok(RunArtifacts {
        metrics: metrics_path,
        summary: summary_path,
        checkpoint: Some(ckpt_path),
        images: vec![],
    })
}

fn run_train_hi(cfg: &ExperimentConfig, stack: &FrozenStack, out: &Path) -> Result<RunArtifacts> {
    let run = hi_optimize(
        &stack.generator,
        &stack.training_scorer,
        &stack.prompts,
        &cfg.hi,
        cfg.sigma_convention,
        cfg.seed("hi-train"),
    )?;

    let scorer_name = stack.training_scorer.name().to_string();
    let rows: Vec<MetricRow> = run
        .trace
        .iter()
        .map(|t| MetricRow {
            step: t.step,
            split: "train".to_string(),
            scorer: scorer_name.clone(),
            loss: Some(t.loss),
            win_rate: None,
            lr: Some(t.lr),
            wall_clock_ms: None,
        })
        .collect();
    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, &rows)?;

    let params = vec![
        NamedArray {
            name: "mu".to_string(),
            shape: vec![run.mu.len()],
            data: run.mu.clone(),
        },
        NamedArray {
            name: "rho".to_string(),
            shape: vec![run.rho.len()],
            data: run.rho.clone(),
        },
    ];
    let ckpt = Checkpoint::new(CheckpointKind::Hi, cfg, stack, params, cfg.hi.steps, None);
    let ckpt_path = out.join(CheckpointKind::Hi.file_name());
    ckpt.save(&ckpt_path)?;

    let final_loss = run.trace.last().map(|t| t.loss);
    let sigma: Vec<f64> = run.rho.iter().map(|r| r.exp()).collect();
    let summary_path = out.join("summary.json");
    write_summary(
        &summary_path,
        &json!({
            "subcommand": "train-hi",
            "steps": cfg.hi.steps,
            "final_loss": final_loss,
            "mu": run.mu,
            "sigma": sigma,
        }),
    )?;
    Ok(RunArtifacts {
        metrics: metrics_path,
        summary: summary_path,
        checkpoint: Some(ckpt_path),
        images: vec![],
    })
}

fn run_train_pahi(cfg: &ExperimentConfig, stack: &FrozenStack, out: &Path) -> Result<RunArtifacts> {
    let predictor = seeded_predictor(cfg);
    let mut pretrain_summary = json!(null);

    if let Some(path) = &cfg.pahi.pretrain_checkpoint {
        let ckpt = Checkpoint::load(path)?;
        ckpt.verify_frozen(stack)?;
        restore_named(&predictor.named_params(), &ckpt)?;
        pretrain_summary = json!({ "loaded_from": path });
    } else if !cfg.pahi.raw_start {
        let decoder = seeded_decoder(cfg);
        let report = pretrain(
            &predictor,
            &decoder,
            &stack.prompts,
            &cfg.pahi.pretrain,
            cfg.sigma_convention,
            cfg.seed("pahi-pretrain"),
        )?;
        pretrain_summary = json!({
            "steps": cfg.pahi.pretrain.steps,
            "final_kl_per_dim": report.final_kl_per_dim,
            "final_recon_mse": report.final_recon_mse,
        });
    }

    let monitor_scorers: Vec<&crate::frozen::Scorer> = std::iter::once(&stack.training_scorer)
        .chain(stack.eval_scorers.iter())
        .collect();
    let run = pahi_train(
        &predictor,
        &stack.generator,
        &stack.training_scorer,
        &monitor_scorers,
        &stack.prompts,
        &cfg.pahi,
        cfg.sigma_convention,
        cfg.seed("pahi-train"),
    )?;

    let scorer_name = stack.training_scorer.name().to_string();
    let mut rows: Vec<MetricRow> = Vec::new();
    for t in &run.trace {
        rows.push(MetricRow {
            step: t.step,
            split: "train".to_string(),
            scorer: scorer_name.clone(),
            loss: Some(t.loss),
            win_rate: None,
            lr: Some(t.lr),
            wall_clock_ms: None,
        });
    }
    for v in &run.validation {
        for (name, loss) in &v.per_scorer {
            rows.push(MetricRow {
                step: v.step,
                split: "val".to_string(),
                scorer: name.clone(),
                loss: Some(*loss),
                win_rate: None,
                lr: None,
                wall_clock_ms: None,
            });
        }
        rows.push(MetricRow {
            step: v.step,
            split: "val".to_string(),
            scorer: "average".to_string(),
            loss: Some(v.average),
            win_rate: None,
            lr: None,
            wall_clock_ms: None,
        });
    }
    rows.sort_by(|a, b| (a.step, &a.split, &a.scorer).cmp(&(b.step, &b.split, &b.scorer)));
    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, &rows)?;

    let params: Vec<NamedArray> = predictor
        .named_params()
        .iter()
        .map(|(n, t)| NamedArray::from_tensor(n, t))
        .collect();
    let ckpt = Checkpoint::new(
        CheckpointKind::Pahi,
        cfg,
        stack,
        params,
        run.steps_run,
        run.best_val_loss,
    );
    let ckpt_path = out.join(CheckpointKind::Pahi.file_name());
    ckpt.save(&ckpt_path)?;

    let summary_path = out.join("summary.json");
    write_summary(
        &summary_path,
        &json!({
            "subcommand": "train-pahi",
            "pretrain": pretrain_summary,
            "steps_run": run.steps_run,
            "stopped_early": run.stopped_early,
            "best_validation_loss": run.best_val_loss,
            "best_step": run.best_step,
            "warning": run.warning,
        }),
    )?;
    Ok(RunArtifacts {
        metrics: metrics_path,
        summary: summary_path,
        checkpoint: Some(ckpt_path),
        images: vec![],
    })
}

/// Candidate models a loaded checkpoint can stand up.
enum LoadedCandidate {
    Distribution(NoiseDistribution),
    Predictor(NoisePredictor),
}

fn load_candidate(
    cfg: &ExperimentConfig,
    stack: &FrozenStack,
    path: &Path,
) -> Result<(LoadedCandidate, u64)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.verify_frozen(stack)?;
    match ckpt.kind {
        CheckpointKind::Hi => {
            let mu = ckpt.param("mu")?.data.clone();
            let rho = ckpt.param("rho")?.data.clone();
            Ok((
                LoadedCandidate::Distribution(NoiseDistribution::from_values(mu, rho)?),
                ckpt.step,
            ))
        }
        CheckpointKind::Pahi | CheckpointKind::Pretrain => {
            let predictor = seeded_predictor(cfg);
            restore_named(&predictor.named_params(), &ckpt)?;
            Ok((LoadedCandidate::Predictor(predictor), ckpt.step))
        }
    }
}

fn run_eval(cfg: &ExperimentConfig, stack: &FrozenStack, out: &Path) -> Result<RunArtifacts> {
    let loaded = match &cfg.eval.checkpoint {
        Some(path) => Some(load_candidate(cfg, stack, path)?),
        None => None,
    };
    let (candidate, step) = match &loaded {
        Some((LoadedCandidate::Distribution(d), step)) => (Candidate::Distribution(d), *step),
        Some((LoadedCandidate::Predictor(p), step)) => (Candidate::Predictor(p), *step),
        None => (Candidate::Standard, 0),
    };

    let mut scorers: Vec<&crate::frozen::Scorer> = Vec::new();
    if cfg.eval.include_training_scorer {
        scorers.push(&stack.training_scorer);
    }
    scorers.extend(stack.eval_scorers.iter());
    if scorers.is_empty() {
        return Err(LabError::InvalidConfig(
            "eval: no scorers configured (enable include_training_scorer or add eval_scorers)"
                .to_string(),
        ));
    }

    let reports = evaluate_win_rate(
        &candidate,
        &stack.generator,
        &scorers,
        stack.prompts.test(),
        cfg.eval.samples_per_prompt,
        cfg.sigma_convention,
        cfg.seed("eval"),
    )?;
    let aggregates = aggregate_runs(&reports)?;

    let rows: Vec<MetricRow> = reports
        .iter()
        .map(|r| MetricRow {
            step,
            split: "test".to_string(),
            scorer: r.scorer.clone(),
            loss: None,
            win_rate: Some(r.win_rate),
            lr: None,
            wall_clock_ms: None,
        })
        .collect();
    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, &rows)?;

    let mut images = Vec::new();
    if cfg.eval.dump_images > 0 {
        let mut rng = rng_from_seed(cfg.seed("eval-images"));
        let d_z = stack.generator.noise_dim();
        for prompt in stack.prompts.test().iter().take(cfg.eval.dump_images) {
            let baseline = rng::normal_tensor(&mut rng, d_z);
            let eps = rng::normal_tensor(&mut rng, d_z);
            let candidate_noise = candidate.draw(prompt, &eps, cfg.sigma_convention)?;
            let base_image = stack
                .generator
                .denoise_one_step(&baseline, &prompt.embedding)?;
            let cand_image = stack
                .generator
                .denoise_one_step(&candidate_noise, &prompt.embedding)?;
            let path = out.join("images").join(format!("{}.pgm", prompt.id));
            dump_image_pair(&base_image.value(), &cand_image.value(), &path)?;
            images.push(path);
        }
    }

    let summary_path = out.join("summary.json");
    write_summary(
        &summary_path,
        &json!({
            "subcommand": "eval",
            "candidate": candidate.label(),
            "checkpoint_step": step,
            "reports": reports,
            "aggregates": aggregates,
        }),
    )?;
    Ok(RunArtifacts {
        metrics: metrics_path,
        summary: summary_path,
        checkpoint: None,
        images,
    })
}

fn run_bench(cfg: &ExperimentConfig, stack: &FrozenStack, out: &Path) -> Result<RunArtifacts> {
    let loaded = match &cfg.eval.checkpoint {
        Some(path) => Some(load_candidate(cfg, stack, path)?),
        None => None,
    };
    let predictor = match &loaded {
        Some((LoadedCandidate::Predictor(p), _)) => Some(p),
        Some((LoadedCandidate::Distribution(_), _)) => {
            return Err(LabError::InvalidConfig(
                "bench: checkpoint must hold predictor weights (pahi or pretrain kind)".to_string(),
            ))
        }
        None => None,
    };
    let fresh;
    let predictor = match predictor {
        Some(p) => p,
        None => {
            fresh = seeded_predictor(cfg);
            &fresh
        }
    };

    let report = bench_inference(
        &stack.generator,
        Some(predictor),
        stack.prompts.all(),
        cfg.bench.reps,
        cfg.bench.warmup,
        cfg.sigma_convention,
        cfg.seed("bench"),
    )?;

    let rows = vec![
        MetricRow {
            step: 0,
            split: "bench".to_string(),
            scorer: "one-step".to_string(),
            loss: None,
            win_rate: None,
            lr: None,
            wall_clock_ms: Some(report.plain_ns_per_image / 1e6),
        },
        MetricRow {
            step: 0,
            split: "bench".to_string(),
            scorer: "predictor-augmented".to_string(),
            loss: None,
            win_rate: None,
            lr: None,
            wall_clock_ms: Some(report.augmented_ns_per_image / 1e6),
        },
    ];
    let metrics_path = out.join("metrics.csv");
    write_metrics(&metrics_path, &rows)?;

    let summary_path = out.join("summary.json");
    write_summary(
        &summary_path,
        &json!({
            "subcommand": "bench",
            "timing": report,
        }),
    )?;
    Ok(RunArtifacts {
        metrics: metrics_path,
        summary: summary_path,
        checkpoint: None,
        images: vec![],
    })
}

// Tensor is referenced by restore paths; keep the import used even when
// optional features prune code paths.
#[allow(dead_code)]
fn _t(_: &Tensor) {}
