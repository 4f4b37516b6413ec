//! Shared-noise-distribution inversion: optimize one (mu, sigma) pair across
//! all prompts by minimizing the pairwise preference objective.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::HiConfig;
use crate::error::{LabError, Result};
use crate::frozen::{build_pipeline_score, FrozenGenerator, PromptTable, Scorer};
use crate::rng::{self, rng_from_seed};
use crate::{AdamState, Tensor};
use diffcore::{lr_at, zero_grads};

/// How a reparameterized sample is formed from (mu, rho).
///
/// `StdDev` treats sigma = exp(rho) as the standard deviation, keeping the
/// declared covariance diag(sigma) consistent with the sampling rule. The
/// `SquaredStdDev` variant multiplies the standard normal by sigma^2 instead,
/// selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaConvention {
    #[serde(rename = "stddev")]
    StdDev,
    #[serde(rename = "paper-literal-squared")]
    SquaredStdDev,
}

impl Default for SigmaConvention {
    fn default() -> Self {
        SigmaConvention::StdDev
    }
}

/// Baseline/candidate pairing during training batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingMode {
    /// Reuse the candidate's standard-normal draw as the baseline noise,
    /// cutting gradient variance.
    #[serde(rename = "common-random-numbers")]
    CommonRandomNumbers,
    /// Fresh independent baseline draw; always used for evaluation.
    #[serde(rename = "independent")]
    Independent,
}

impl Default for PairingMode {
    fn default() -> Self {
        PairingMode::CommonRandomNumbers
    }
}

/// Learnable diagonal Gaussian over noise space, parameterized as
/// (mu, rho) with sigma = exp(rho) so sigma stays positive.
pub struct NoiseDistribution {
    mu: Tensor,
    rho: Tensor,
}

impl NoiseDistribution {
    /// mu = 0, rho = 0 (sigma = 1): the standard Gaussian.
    pub fn standard(dim: usize) -> Self {
        NoiseDistribution {
            mu: Tensor::param([dim], vec![0.0; dim]).expect("consistent"),
            rho: Tensor::param([dim], vec![0.0; dim]).expect("consistent"),
        }
    }

    pub fn from_values(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(LabError::InvalidConfig(format!(
                "mu and rho lengths differ: {} vs {}",
                mu.len(),
                rho.len()
            )));
        }
        let dim = mu.len();
        Ok(NoiseDistribution {
            mu: Tensor::param([dim], mu)?,
            rho: Tensor::param([dim], rho)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.numel()
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.mu.clone(), self.rho.clone()]
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn rho(&self) -> &Tensor {
        &self.rho
    }

    pub fn mu_values(&self) -> Vec<f64> {
        self.mu.value()
    }

    pub fn sigma_values(&self) -> Vec<f64> {
        self.rho.value().into_iter().map(f64::exp).collect()
    }
}

/// mu + sigma (x) eps, differentiable with respect to mu and rho.
pub fn sample_reparameterized(
    dist: &NoiseDistribution,
    eps: &Tensor,
    convention: SigmaConvention,
) -> Result<Tensor> {
    if eps.shape() != dist.mu.shape() {
        return Err(LabError::InvalidConfig(format!(
            "eps shape {:?} does not match distribution dimension {}",
            eps.shape(),
            dist.dim()
        )));
    }
    let sigma = dist.rho.exp()?;
    let spread = match convention {
        SigmaConvention::StdDev => sigma,
        SigmaConvention::SquaredStdDev => sigma.square()?,
    };
    Ok(dist.mu.add(&spread.mul(eps)?)?)
}

/// Per-pair preference loss: softplus(s - s'), the negative log-probability
/// of the candidate winning under the two-way softmax. Numerically stable
/// for score gaps up to 1e6 either way.
pub fn preference_pair_loss(s: &Tensor, s_prime: &Tensor) -> Result<Tensor> {
    Ok(s.sub(s_prime)?.softplus()?)
}

/// One training batch: per element a prompt, a baseline noise value, and the
/// candidate's standard-normal draw.
pub struct PreferenceBatch {
    pub items: Vec<PreferenceItem>,
    pub pairing: PairingMode,
}

pub struct PreferenceItem {
    pub prompt_index: usize,
    pub baseline: Tensor,
    pub eps: Tensor,
}

/// Draw a batch over `prompt_indices` with fresh baseline samples.
pub fn make_batch(
    prompt_indices: std::ops::Range<usize>,
    batch_size: usize,
    noise_dim: usize,
    pairing: PairingMode,
    rng: &mut ChaCha12Rng,
) -> PreferenceBatch {
    let items = (0..batch_size)
        .map(|_| {
            let prompt_index = rng.gen_range(prompt_indices.clone());
            let eps = rng::normal_tensor(rng, noise_dim);
            let baseline = match pairing {
                PairingMode::CommonRandomNumbers => {
                    Tensor::from_vec([noise_dim], eps.value()).expect("consistent")
                }
                PairingMode::Independent => rng::normal_tensor(rng, noise_dim),
            };
            PreferenceItem {
                prompt_index,
                baseline,
                eps,
            }
        })
        .collect();
    PreferenceBatch { items, pairing }
}

/// Mean pairwise preference loss over the batch. The baseline leg is a
/// constant; gradients flow only through the candidate leg into (mu, rho).
pub fn hi_loss(
    dist: &NoiseDistribution,
    generator: &FrozenGenerator,
    scorer: &Scorer,
    prompts: &PromptTable,
    batch: &PreferenceBatch,
    convention: SigmaConvention,
) -> Result<Tensor> {
    if batch.items.is_empty() {
        return Err(LabError::EmptyPromptSet("hi_loss batch"));
    }
    let mut total: Option<Tensor> = None;
    for item in &batch.items {
        let prompt = &prompts.all()[item.prompt_index];
        let s = build_pipeline_score(generator, scorer, &item.baseline, prompt)?;
        let candidate = sample_reparameterized(dist, &item.eps, convention)?;
        let s_prime = build_pipeline_score(generator, scorer, &candidate, prompt)?;
        let pair = preference_pair_loss(&s, &s_prime)?;
        total = Some(match total {
            Some(t) => t.add(&pair)?,
            None => pair,
        });
    }
    let n = batch.items.len() as f64;
    Ok(total.expect("batch nonempty").scale(1.0 / n)?)
}

/// Per-step record of an optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Result of `hi_optimize`: final (mu, rho) plus the loss trace.
pub struct HiRun {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl HiRun {
    pub fn distribution(&self) -> NoiseDistribution {
        NoiseDistribution::from_values(self.mu.clone(), self.rho.clone())
            .expect("lengths match by construction")
    }
}

/// Adam over (mu, rho) from the standard initialization; deterministic given
/// the seed. Aborts with a diagnostic if the loss turns non-finite.
pub fn hi_optimize(
    generator: &FrozenGenerator,
    scorer: &Scorer,
    prompts: &PromptTable,
    cfg: &HiConfig,
    convention: SigmaConvention,
    seed: u64,
) -> Result<HiRun> {
    if prompts.train().is_empty() {
        return Err(LabError::EmptyPromptSet("hi_optimize training prompts"));
    }
    let d_z = generator.noise_dim();
    let dist = NoiseDistribution::standard(d_z);
    let params = dist.params();
    let mut adam = AdamState::new(&params);
    let mut rng = rng_from_seed(seed);
    let mut trace = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let lr = lr_at(step, cfg.base_lr, cfg.warmup_steps, cfg.floor_lr)?;
        let batch = make_batch(
            0..prompts.train().len(),
            cfg.batch_size,
            d_z,
            cfg.pairing,
            &mut rng,
        );
        let loss = hi_loss(&dist, generator, scorer, prompts, &batch, convention)?;
        let loss_value = loss.item()?;
        if !loss_value.is_finite() {
            return Err(LabError::Diverged {
                step,
                detail: format!("hi loss became {loss_value}"),
            });
        }
        zero_grads(&params);
        loss.backward()?;
        adam.step(&params, lr)?;
        trace.push(TraceRow {
            step,
            loss: loss_value,
            lr,
        });
    }

    Ok(HiRun {
        mu: dist.mu_values(),
        rho: dist.rho.value(),
        trace,
    })
}
