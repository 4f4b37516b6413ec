//! Versioned checkpoints: config snapshot, frozen-model hashes, and named
//! f64 parameter arrays. Loading then saving reproduces byte-identical
//! parameter values; version or hash mismatches are rejected outright.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, FrozenStack};
use crate::error::{LabError, Result};
use crate::fsio::write_atomic;
use crate::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    #[serde(rename = "hi")]
    Hi,
    #[serde(rename = "pahi")]
    Pahi,
    #[serde(rename = "pretrain")]
    Pretrain,
}

impl CheckpointKind {
    pub fn file_name(self) -> &'static str {
        match self {
            CheckpointKind::Hi => "hi.ckpt.json",
            CheckpointKind::Pahi => "pahi.ckpt.json",
            CheckpointKind::Pretrain => "pretrain.ckpt.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, tensor: &Tensor) -> Self {
        NamedArray {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            data: tensor.value(),
        }
    }
}

/// SHA-256 over the named weight arrays of the frozen models, so a checkpoint
/// can prove it was trained against the models the current config rebuilds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenHashes {
    pub generator: String,
    pub prompts: String,
    pub training_scorer: String,
    pub eval_scorers: Vec<String>,
}

pub fn fingerprint(arrays: &[(String, Vec<f64>)]) -> String {
    let mut hasher = Sha256::new();
    for (name, values) in arrays {
        hasher.update(name.as_bytes());
        hasher.update([0x00]);
        hasher.update((values.len() as u64).to_le_bytes());
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn frozen_hashes(stack: &FrozenStack) -> FrozenHashes {
    FrozenHashes {
        generator: fingerprint(&stack.generator.weight_arrays()),
        prompts: fingerprint(&stack.prompts.weight_arrays()),
        training_scorer: fingerprint(&stack.training_scorer.weight_arrays()),
        eval_scorers: stack
            .eval_scorers
            .iter()
            .map(|s| fingerprint(&s.weight_arrays()))
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: CheckpointKind,
    pub config: ExperimentConfig,
    pub frozen_hashes: FrozenHashes,
    pub params: Vec<NamedArray>,
    pub step: u64,
    pub best_validation_loss: Option<f64>,
    /// Full frozen weights, embedded only when the config archives them.
    pub frozen_weights: Option<Vec<NamedArray>>,
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        config: &ExperimentConfig,
        stack: &FrozenStack,
        params: Vec<NamedArray>,
        step: u64,
        best_validation_loss: Option<f64>,
    ) -> Self {
        let frozen_weights = if config.archive_frozen_weights {
            let mut all = stack.generator.weight_arrays();
            all.extend(stack.prompts.weight_arrays());
            all.extend(stack.training_scorer.weight_arrays());
            for s in &stack.eval_scorers {
                all.extend(s.weight_arrays());
            }
            Some(
                all.into_iter()
                    .map(|(name, data)| NamedArray {
                        shape: vec![data.len()],
                        name,
                        data,
                    })
                    .collect(),
            )
        } else {
            None
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind,
            config: config.clone(),
            frozen_hashes: frozen_hashes(stack),
            params,
            step,
            best_validation_loss,
            frozen_weights,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            LabError::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| LabError::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(LabError::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION}); refusing to migrate",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// The frozen models rebuilt from the current config must hash to the
    /// values recorded at save time.
    pub fn verify_frozen(&self, stack: &FrozenStack) -> Result<()> {
        let current = frozen_hashes(stack);
        if current != self.frozen_hashes {
            return Err(LabError::Checkpoint(
                "frozen-model hashes do not match the current config".to_string(),
            ));
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&NamedArray> {
        self.params
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| LabError::Checkpoint(format!("missing parameter array '{name}'")))
    }
}

/// Restore named tensors from checkpoint arrays, matching by name and shape.
pub fn restore_named(targets: &[(String, Tensor)], ckpt: &Checkpoint) -> Result<()> {
    for (name, tensor) in targets {
        let array = ckpt.param(name)?;
        if array.shape != tensor.shape() {
            return Err(LabError::Checkpoint(format!(
                "parameter '{name}' has shape {:?} in the checkpoint but {:?} in the model",
                array.shape,
                tensor.shape()
            )));
        }
        tensor.set_data(&array.data)?;
    }
    Ok(())
}
