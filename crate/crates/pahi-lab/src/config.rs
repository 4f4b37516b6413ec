//! Experiment configuration: one TOML file fully determines an experiment.
//! Every stochastic component draws its seed from the master seed plus a
//! component tag, and the whole struct round-trips losslessly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::frozen::{
    make_prompt_table, BilinearScorer, EpsilonPredictor, FrozenGenerator, PromptTable,
    QuadraticScorer, Scorer, VarianceSchedule,
};
use crate::inversion::{PairingMode, SigmaConvention};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "mlp")]
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub noise_dim: usize,
    pub image_dim: usize,
    pub alpha: f64,
    /// Weight scale; 0 gives the all-zero predictor (identity map at alpha = 1).
    pub scale: f64,
    /// Hidden width for the mlp kind.
    #[serde(default = "default_generator_hidden")]
    pub hidden: usize,
}

fn default_generator_hidden() -> usize {
    2048
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub count: usize,
    pub embed_dim: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum TargetSpec {
    /// Same target vector (value, ..., value) for every prompt.
    #[serde(rename = "constant")]
    Constant { value: f64 },
    /// Distinct per-prompt targets of norm `scale` derived from the embeddings.
    #[serde(rename = "per-prompt")]
    PerPrompt { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScorerSpec {
    #[serde(rename = "quadratic")]
    Quadratic {
        #[serde(default)]
        name: Option<String>,
        gamma: f64,
        target: TargetSpec,
    },
    #[serde(rename = "bilinear")]
    Bilinear {
        #[serde(default)]
        name: Option<String>,
        proj_dim: usize,
        temperature: f64,
        /// Couple the prompt projection to the training scorer's target map,
        /// so this held-out scorer is correlated with the training signal.
        #[serde(default)]
        correlated_with_training_targets: bool,
    },
}

impl ScorerSpec {
    fn name_or_default(&self, fallback: &str) -> String {
        match self {
            ScorerSpec::Quadratic { name, .. } | ScorerSpec::Bilinear { name, .. } => {
                name.clone().unwrap_or_else(|| fallback.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub floor_lr: f64,
    #[serde(default)]
    pub pairing: PairingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_unit_weight")]
    pub kl_weight: f64,
    #[serde(default = "default_unit_weight")]
    pub recon_weight: f64,
}

fn default_unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PahiConfig {
    pub hidden: usize,
    /// Weight-initialization gain for the predictor heads and decoder.
    pub init_gain: f64,
    pub pretrain: PretrainConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub floor_lr: f64,
    pub eval_cadence: u64,
    pub patience: u32,
    /// Independent draws per validation prompt when monitoring.
    pub val_samples: usize,
    #[serde(default)]
    pub pairing: PairingMode,
    /// Skip pretraining and start from the raw random initialization.
    #[serde(default)]
    pub raw_start: bool,
    /// Load pretrained head weights from this checkpoint instead of
    /// pretraining inline.
    #[serde(default)]
    pub pretrain_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_prompt: usize,
    /// Candidate checkpoint (hi or pahi); absent means the standard Gaussian.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// How many test prompts get a side-by-side image dump.
    pub dump_images: usize,
    pub include_training_scorer: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_prompt: 8,
            checkpoint: None,
            dump_images: 4,
            include_training_scorer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 200,
            warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub sigma_convention: SigmaConvention,
    /// Embed full frozen weights in checkpoints instead of hashes only.
    #[serde(default)]
    pub archive_frozen_weights: bool,
    pub generator: GeneratorSpec,
    pub prompts: PromptSpec,
    pub training_scorer: ScorerSpec,
    #[serde(default)]
    pub eval_scorers: Vec<ScorerSpec>,
    pub hi: HiConfig,
    pub pahi: PahiConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults; the full-scale hyperparameters remain reachable
    /// through overrides.
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 42,
            sigma_convention: SigmaConvention::StdDev,
            archive_frozen_weights: false,
            generator: GeneratorSpec {
                kind: GeneratorKind::Mlp,
                noise_dim: 16,
                image_dim: 16,
                alpha: 0.64,
                scale: 1.0,
                hidden: 2048,
            },
            prompts: PromptSpec {
                count: 64,
                embed_dim: 8,
                train: 44,
                val: 10,
                test: 10,
            },
            training_scorer: ScorerSpec::Quadratic {
                name: None,
                gamma: 0.1,
                target: TargetSpec::PerPrompt { scale: 3.0 },
            },
            eval_scorers: vec![ScorerSpec::Bilinear {
                name: None,
                proj_dim: 16,
                temperature: 1.0,
                correlated_with_training_targets: true,
            }],
            hi: HiConfig {
                steps: 2000,
                batch_size: 32,
                base_lr: 5e-3,
                warmup_steps: 200,
                floor_lr: 1e-5,
                pairing: PairingMode::CommonRandomNumbers,
            },
            pahi: PahiConfig {
                hidden: 32,
                init_gain: 2.0,
                pretrain: PretrainConfig {
                    steps: 1000,
                    batch_size: 32,
                    lr: 1e-2,
                    kl_weight: 1.0,
                    recon_weight: 1.0,
                },
                steps: 5000,
                batch_size: 32,
                base_lr: 5e-3,
                warmup_steps: 200,
                floor_lr: 1e-5,
                eval_cadence: 250,
                patience: 5,
                val_samples: 8,
                pairing: PairingMode::CommonRandomNumbers,
                raw_start: false,
                pretrain_checkpoint: None,
            },
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Frozen models materialized from a config.
pub struct FrozenStack {
    pub prompts: PromptTable,
    pub generator: FrozenGenerator,
    pub training_scorer: Scorer,
    pub eval_scorers: Vec<Scorer>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Per-component seed: stable hash of (master seed, component tag).
    pub fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.master_seed, tag)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LabError::InvalidConfig(msg));
        let g = &self.generator;
        if !(g.alpha > 0.0 && g.alpha <= 1.0) {
            return fail(format!("generator.alpha: must lie in (0, 1], got {}", g.alpha));
        }
        if g.noise_dim == 0 || g.image_dim == 0 {
            return fail("generator.noise_dim/image_dim: must be positive".to_string());
        }
        if g.noise_dim != g.image_dim {
            return fail(format!(
                "generator: image_dim must equal noise_dim for one-step denoising, got {} vs {}",
                g.image_dim, g.noise_dim
            ));
        }
        if g.kind == GeneratorKind::Mlp && g.hidden == 0 {
            return fail("generator.hidden: must be positive for the mlp kind".to_string());
        }
        if g.scale < 0.0 || !g.scale.is_finite() {
            return fail(format!("generator.scale: must be finite and >= 0, got {}", g.scale));
        }
        let p = &self.prompts;
        if p.embed_dim == 0 {
            return fail("prompts.embed_dim: must be positive".to_string());
        }
        if p.train + p.val + p.test != p.count {
            return fail(format!(
                "prompts: splits {}+{}+{} do not sum to count {}",
                p.train, p.val, p.test, p.count
            ));
        }
        self.validate_scorer(&self.training_scorer, "training_scorer")?;
        for (i, spec) in self.eval_scorers.iter().enumerate() {
            self.validate_scorer(spec, &format!("eval_scorers[{i}]"))?;
            if let ScorerSpec::Bilinear {
                correlated_with_training_targets: true,
                ..
            } = spec
            {
                match &self.training_scorer {
                    ScorerSpec::Quadratic {
                        target: TargetSpec::PerPrompt { .. },
                        ..
                    } => {}
                    _ => {
                        return fail(format!(
                            "eval_scorers[{i}]: correlated_with_training_targets requires a \
                             quadratic training scorer with per-prompt targets"
                        ))
                    }
                }
            }
        }
        let mut names: Vec<String> = self
            .scorer_names()
            .into_iter()
            .collect();
        names.sort();
        names.dedup();
        if names.len() != self.eval_scorers.len() + 1 {
            return fail("scorer names must be distinct".to_string());
        }
        let lr_ok = |floor: f64, base: f64| floor >= 0.0 && floor <= base && base.is_finite();
        if !lr_ok(self.hi.floor_lr, self.hi.base_lr) {
            return fail("hi: need 0 <= floor_lr <= base_lr".to_string());
        }
        if !lr_ok(self.pahi.floor_lr, self.pahi.base_lr) {
            return fail("pahi: need 0 <= floor_lr <= base_lr".to_string());
        }
        if self.hi.warmup_steps == 0 || self.pahi.warmup_steps == 0 {
            return fail("warmup_steps must be at least 1".to_string());
        }
        if self.hi.steps > 0 && self.hi.batch_size == 0 {
            return fail("hi.batch_size: must be positive".to_string());
        }
        if self.pahi.steps > 0 && self.pahi.batch_size == 0 {
            return fail("pahi.batch_size: must be positive".to_string());
        }
        if self.pahi.pretrain.steps > 0 && self.pahi.pretrain.batch_size == 0 {
            return fail("pahi.pretrain.batch_size: must be positive".to_string());
        }
        if self.pahi.hidden == 0 {
            return fail("pahi.hidden: must be positive".to_string());
        }
        if self.pahi.eval_cadence == 0 {
            return fail("pahi.eval_cadence: must be at least 1".to_string());
        }
        if self.pahi.patience == 0 {
            return fail("pahi.patience: must be at least 1".to_string());
        }
        if self.pahi.val_samples == 0 {
            return fail("pahi.val_samples: must be at least 1".to_string());
        }
        if self.eval.samples_per_prompt == 0 {
            return fail("eval.samples_per_prompt: must be at least 1".to_string());
        }
        if self.bench.reps == 0 {
            return fail("bench.reps: must be positive".to_string());
        }
        Ok(())
    }

    fn validate_scorer(&self, spec: &ScorerSpec, field: &str) -> Result<()> {
        match spec {
            ScorerSpec::Quadratic { gamma, target, .. } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(LabError::InvalidConfig(format!(
                        "{field}.gamma: must be positive, got {gamma}"
                    )));
                }
                if let TargetSpec::PerPrompt { scale } = target {
                    if !(*scale > 0.0 && scale.is_finite()) {
                        return Err(LabError::InvalidConfig(format!(
                            "{field}.target.scale: must be positive, got {scale}"
                        )));
                    }
                }
            }
            ScorerSpec::Bilinear {
                proj_dim,
                temperature,
                ..
            } => {
                if *proj_dim == 0 {
                    return Err(LabError::InvalidConfig(format!(
                        "{field}.proj_dim: must be positive"
                    )));
                }
                if !(*temperature > 0.0 && temperature.is_finite()) {
                    return Err(LabError::InvalidConfig(format!(
                        "{field}.temperature: must be positive, got {temperature}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn scorer_names(&self) -> Vec<String> {
        let mut names = vec![self.training_scorer.name_or_default("training")];
        for (i, spec) in self.eval_scorers.iter().enumerate() {
            names.push(spec.name_or_default(&format!("eval{i}")));
        }
        names
    }

    pub fn build_prompts(&self) -> Result<PromptTable> {
        make_prompt_table(
            self.prompts.count,
            self.prompts.embed_dim,
            self.seed("prompts"),
            (self.prompts.train, self.prompts.val, self.prompts.test),
        )
    }

    pub fn build_generator(&self) -> Result<FrozenGenerator> {
        let g = &self.generator;
        let seed = self.seed("generator");
        let predictor = match g.kind {
            GeneratorKind::Linear => {
                EpsilonPredictor::linear(g.noise_dim, self.prompts.embed_dim, g.scale, seed)
            }
            GeneratorKind::Mlp => {
                EpsilonPredictor::mlp(g.noise_dim, self.prompts.embed_dim, g.hidden, g.scale, seed)
            }
        };
        FrozenGenerator::new(
            predictor,
            VarianceSchedule::new(g.alpha)?,
            g.noise_dim,
            g.image_dim,
            self.prompts.embed_dim,
        )
    }

    fn build_scorer(
        &self,
        spec: &ScorerSpec,
        name: String,
        tag: &str,
        prompts: &PromptTable,
        training_target_map: Option<&crate::Tensor>,
    ) -> Result<Scorer> {
        let seed = self.seed(tag);
        match spec {
            ScorerSpec::Quadratic { gamma, target, .. } => {
                let scorer = match target {
                    TargetSpec::Constant { value } => QuadraticScorer::constant_target(
                        name,
                        *gamma,
                        *value,
                        self.generator.image_dim,
                        prompts,
                    )?,
                    TargetSpec::PerPrompt { scale } => QuadraticScorer::per_prompt_targets(
                        name,
                        *gamma,
                        *scale,
                        self.generator.image_dim,
                        seed,
                        prompts,
                    )?,
                };
                Ok(Scorer::Quadratic(scorer))
            }
            ScorerSpec::Bilinear {
                proj_dim,
                temperature,
                correlated_with_training_targets,
                ..
            } => {
                if *correlated_with_training_targets {
                    let map = training_target_map.ok_or_else(|| {
                        LabError::InvalidConfig(
                            "correlated bilinear scorer requires per-prompt quadratic training targets"
                                .to_string(),
                        )
                    })?;
                    Ok(Scorer::Bilinear(BilinearScorer::correlated(
                        name,
                        *proj_dim,
                        self.generator.image_dim,
                        *temperature,
                        seed,
                        map,
                    )?))
                } else {
                    Ok(Scorer::Bilinear(BilinearScorer::random(
                        name,
                        *proj_dim,
                        self.generator.image_dim,
                        self.prompts.embed_dim,
                        *temperature,
                        seed,
                    )?))
                }
            }
        }
    }

    /// Build the full frozen model stack. The training scorer is always
    /// built first so correlated evaluation scorers can reuse its target map.
    pub fn build_stack(&self) -> Result<FrozenStack> {
        self.validate()?;
        let prompts = self.build_prompts()?;
        let generator = self.build_generator()?;
        let names = self.scorer_names();
        let training_scorer = self.build_scorer(
            &self.training_scorer,
            names[0].clone(),
            "training-scorer",
            &prompts,
            None,
        )?;
        let target_map = match &training_scorer {
            Scorer::Quadratic(q) => q.target_map().cloned(),
            Scorer::Bilinear(_) => None,
        };
        let eval_scorers = self
            .eval_scorers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                self.build_scorer(
                    spec,
                    names[i + 1].clone(),
                    &format!("eval-scorer-{i}"),
                    &prompts,
                    target_map.as_ref(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenStack {
            prompts,
            generator,
            training_scorer,
            eval_scorers,
        })
    }
}

/// Apply `key=value` overrides onto the TOML representation of a config and
/// re-validate. Dotted keys address nested tables; values are parsed as
/// bool, integer, or float before falling back to strings.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut value: toml::Value = toml::Value::try_from(cfg).map_err(LabError::TomlSerialize)?;
    for (key, raw) in overrides {
        let parts: Vec<&str> = key.split('.').collect();
        set_path(&mut value, &parts, parse_override_value(raw), key)?;
    }
    let patched: ExperimentConfig = value.try_into().map_err(LabError::TomlParse)?;
    patched.validate()?;
    Ok(patched)
}

fn set_path(value: &mut toml::Value, parts: &[&str], parsed: toml::Value, key: &str) -> Result<()> {
    let table = value.as_table_mut().ok_or_else(|| {
        LabError::InvalidConfig(format!("override '{key}': path component is not a table"))
    })?;
    match parts {
        [] => Err(LabError::InvalidConfig(format!("override '{key}': empty key"))),
        [last] => {
            table.insert(last.to_string(), parsed);
            Ok(())
        }
        [head, rest @ ..] => {
            let next = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
            set_path(next, rest, parsed, key)
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn split_mismatch_is_field_level_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.prompts.train = 10;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("prompts"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let cfg = ExperimentConfig::default();
        let patched = apply_overrides(
            &cfg,
            &[
                ("hi.steps".to_string(), "72".to_string()),
                ("generator.alpha".to_string(), "0.25".to_string()),
                ("sigma_convention".to_string(), "paper-literal-squared".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(patched.hi.steps, 72);
        assert_eq!(patched.generator.alpha, 0.25);
        assert_eq!(
            patched.sigma_convention,
            crate::inversion::SigmaConvention::SquaredStdDev
        );
    }

    #[test]
    fn bad_override_is_rejected() {
        let cfg = ExperimentConfig::default();
        let err = apply_overrides(&cfg, &[("generator.alpha".to_string(), "7.0".to_string())])
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn component_seeds_are_distinct() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.seed("generator"), cfg.seed("prompts"));
        assert_ne!(cfg.seed("hi-train"), cfg.seed("pahi-train"));
    }

    #[test]
    fn correlated_scorer_requires_per_prompt_training_targets() {
        let mut cfg = ExperimentConfig::default();
        cfg.training_scorer = ScorerSpec::Quadratic {
            name: None,
            gamma: 0.1,
            target: TargetSpec::Constant { value: 3.0 },
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("correlated"), "{err}");
    }
}
