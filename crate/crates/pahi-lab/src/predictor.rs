//! Prompt-adaptive noise prediction: two trainable MLP heads map a prompt
//! embedding to per-prompt (mu, sigma), pretrained with a KL +
//! embedding-reconstruction objective and then trained on the pairwise
//! preference loss with the generator and scorer frozen.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::config::{PahiConfig, PretrainConfig};
use crate::error::{LabError, Result};
use crate::eval::{validation_preference_loss, Candidate, EarlyStopMonitor, StopDecision};
use crate::frozen::{build_pipeline_score, FrozenGenerator, PromptTable, Scorer};
use crate::inversion::{preference_pair_loss, PairingMode, SigmaConvention, TraceRow};
use crate::rng::{self, rng_from_seed};
use crate::{AdamState, Tensor};
use diffcore::{lr_at, zero_grads};

/// Two-layer perceptron with tanh hidden activation.
pub struct Mlp2 {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Mlp2 {
    /// Weights ~ N(0, gain^2 / fan_in), zero biases.
    pub fn seeded(in_dim: usize, hidden: usize, out_dim: usize, gain: f64, rng: &mut ChaCha12Rng) -> Self {
        let w1 = rng::normal_matrix(rng, hidden, in_dim, gain / (in_dim as f64).sqrt());
        let w2 = rng::normal_matrix(rng, out_dim, hidden, gain / (hidden as f64).sqrt());
        Mlp2 {
            w1: Tensor::param([hidden, in_dim], w1.value()).expect("consistent"),
            b1: Tensor::param([hidden], vec![0.0; hidden]).expect("consistent"),
            w2: Tensor::param([out_dim, hidden], w2.value()).expect("consistent"),
            b2: Tensor::param([out_dim], vec![0.0; out_dim]).expect("consistent"),
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp2 {
            w1: Tensor::param([hidden, in_dim], vec![0.0; hidden * in_dim]).expect("consistent"),
            b1: Tensor::param([hidden], vec![0.0; hidden]).expect("consistent"),
            w2: Tensor::param([out_dim, hidden], vec![0.0; out_dim * hidden]).expect("consistent"),
            b2: Tensor::param([out_dim], vec![0.0; out_dim]).expect("consistent"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.w1.matmul(x)?.add(&self.b1)?.tanh()?;
        Ok(self.w2.matmul(&h)?.add(&self.b2)?)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }
}

/// Trainable map from prompt embedding to noise-distribution parameters:
/// two independent heads for mu(c) and rho(c), with sigma(c) = exp(rho(c)).
pub struct NoisePredictor {
    mu_head: Mlp2,
    rho_head: Mlp2,
    embed_dim: usize,
    noise_dim: usize,
}

impl NoisePredictor {
    pub fn seeded(embed_dim: usize, hidden: usize, noise_dim: usize, gain: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        NoisePredictor {
            mu_head: Mlp2::seeded(embed_dim, hidden, noise_dim, gain, &mut rng),
            rho_head: Mlp2::seeded(embed_dim, hidden, noise_dim, gain, &mut rng),
            embed_dim,
            noise_dim,
        }
    }

    /// All-zero heads: mu = 0, sigma = 1 for every embedding.
    pub fn zeros(embed_dim: usize, hidden: usize, noise_dim: usize) -> Self {
        NoisePredictor {
            mu_head: Mlp2::zeros(embed_dim, hidden, noise_dim),
            rho_head: Mlp2::zeros(embed_dim, hidden, noise_dim),
            embed_dim,
            noise_dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// (mu(c), sigma(c)), differentiable with respect to the head weights.
    pub fn predict_noise_params(&self, embedding: &Tensor) -> Result<(Tensor, Tensor)> {
        let (mu, rho) = self.predict_mu_rho(embedding)?;
        Ok((mu, rho.exp()?))
    }

    pub fn predict_mu_rho(&self, embedding: &Tensor) -> Result<(Tensor, Tensor)> {
        if embedding.shape() != [self.embed_dim] {
            return Err(LabError::InvalidConfig(format!(
                "predictor expects embedding of dimension {}, got shape {:?}",
                self.embed_dim,
                embedding.shape()
            )));
        }
        Ok((self.mu_head.forward(embedding)?, self.rho_head.forward(embedding)?))
    }

    /// Reparameterized per-prompt sample mu(c) + spread(c) (x) eps.
    pub fn sample(&self, embedding: &Tensor, eps: &Tensor, convention: SigmaConvention) -> Result<Tensor> {
        let (mu, rho) = self.predict_mu_rho(embedding)?;
        let sigma = rho.exp()?;
        let spread = match convention {
            SigmaConvention::StdDev => sigma,
            SigmaConvention::SquaredStdDev => sigma.square()?,
        };
        Ok(mu.add(&spread.mul(eps)?)?)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.mu_head.params();
        p.extend(self.rho_head.params());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.mu_head.named("mu_head");
        p.extend(self.rho_head.named("rho_head"));
        p
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(Tensor::value).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        for (p, s) in self.params().iter().zip(snapshot) {
            p.set_data(s)?;
        }
        Ok(())
    }
}

/// Embedding reconstruction decoder used only during pretraining.
pub struct EmbeddingDecoder {
    net: Mlp2,
}

impl EmbeddingDecoder {
    pub fn seeded(noise_dim: usize, hidden: usize, embed_dim: usize, gain: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        EmbeddingDecoder {
            net: Mlp2::seeded(noise_dim, hidden, embed_dim, gain, &mut rng),
        }
    }

    pub fn zeros(noise_dim: usize, hidden: usize, embed_dim: usize) -> Self {
        EmbeddingDecoder {
            net: Mlp2::zeros(noise_dim, hidden, embed_dim),
        }
    }

    pub fn from_net(net: Mlp2) -> Self {
        EmbeddingDecoder { net }
    }

    pub fn forward(&self, sample: &Tensor) -> Result<Tensor> {
        self.net.forward(sample)
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.net.params()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.net.named("decoder")
    }
}

/// Closed-form KL(N(mu, diag sigma^2) || N(0, I)):
/// 0.5 * sum(sigma^2 + mu^2 - 1 - 2 ln sigma). Non-negative, zero at (0, 1).
pub fn kl_to_standard(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() {
        return Err(LabError::InvalidConfig(format!(
            "kl_to_standard: mu shape {:?} != sigma shape {:?}",
            mu.shape(),
            sigma.shape()
        )));
    }
    if sigma.value().iter().any(|&s| s <= 0.0) {
        return Err(LabError::InvalidConfig(
            "kl_to_standard: sigma must be strictly positive".to_string(),
        ));
    }
    let d = mu.numel() as f64;
    sigma
        .square()?
        .sum()?
        .add(&mu.square()?.sum()?)?
        .sub(&Tensor::scalar(d))?
        .sub(&sigma.log()?.sum()?.scale(2.0)?)?
        .scale(0.5)
        .map_err(Into::into)
}

/// One prompt's pretraining loss: weighted KL + embedding-reconstruction MSE
/// (mean over embedding dimensions), with the sample drawn once via the
/// reparameterization trick.
pub struct PretrainLoss {
    pub total: Tensor,
    pub kl: f64,
    pub recon: f64,
}

pub fn pretrain_loss(
    predictor: &NoisePredictor,
    decoder: &EmbeddingDecoder,
    embedding: &Tensor,
    eps: &Tensor,
    kl_weight: f64,
    recon_weight: f64,
    convention: SigmaConvention,
) -> Result<PretrainLoss> {
    let (mu, rho) = predictor.predict_mu_rho(embedding)?;
    let sigma = rho.exp()?;
    let kl = kl_to_standard(&mu, &sigma)?;
    let spread = match convention {
        SigmaConvention::StdDev => sigma,
        SigmaConvention::SquaredStdDev => sigma.square()?,
    };
    let sample = mu.add(&spread.mul(eps)?)?;
    let recon = decoder.forward(&sample)?;
    let mse = embedding.sub(&recon)?.square()?.mean()?;
    let total = kl.scale(kl_weight)?.add(&mse.scale(recon_weight)?)?;
    Ok(PretrainLoss {
        total,
        kl: kl.item()?,
        recon: mse.item()?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainStep {
    pub step: u64,
    pub kl: f64,
    pub recon: f64,
    pub total: f64,
}

/// Outcome of pretraining: per-step terms plus before/after summary metrics.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub steps: Vec<PretrainStep>,
    pub init_kl_per_dim: f64,
    pub final_kl_per_dim: f64,
    pub init_recon_mse: f64,
    pub final_recon_mse: f64,
}

/// Mean per-dimension KL and reconstruction MSE over the training prompts,
/// with `samples` fresh draws per prompt.
pub fn pretrain_metrics(
    predictor: &NoisePredictor,
    decoder: &EmbeddingDecoder,
    prompts: &PromptTable,
    samples: usize,
    convention: SigmaConvention,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = rng_from_seed(seed);
    let train = prompts.train();
    if train.is_empty() {
        return Err(LabError::EmptyPromptSet("pretrain metrics"));
    }
    let d = predictor.noise_dim() as f64;
    let mut kl_acc = 0.0;
    let mut mse_acc = 0.0;
    for prompt in train {
        let (mu, sigma) = predictor.predict_noise_params(&prompt.embedding)?;
        kl_acc += kl_to_standard(&mu, &sigma)?.item()? / d;
        for _ in 0..samples {
            let eps = rng::normal_tensor(&mut rng, predictor.noise_dim());
            let loss = pretrain_loss(predictor, decoder, &prompt.embedding, &eps, 1.0, 1.0, convention)?;
            mse_acc += loss.recon;
        }
    }
    Ok((
        kl_acc / train.len() as f64,
        mse_acc / (train.len() * samples) as f64,
    ))
}

/// Minimize KL + reconstruction over predictor and decoder with Adam.
/// The updated predictor weights become the initialization for preference
/// training; the decoder is not used afterward.
pub fn pretrain(
    predictor: &NoisePredictor,
    decoder: &EmbeddingDecoder,
    prompts: &PromptTable,
    cfg: &PretrainConfig,
    convention: SigmaConvention,
    seed: u64,
) -> Result<PretrainReport> {
    let train_len = prompts.train().len();
    if train_len == 0 {
        return Err(LabError::EmptyPromptSet("pretrain"));
    }
    let metric_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let (init_kl, init_mse) =
        pretrain_metrics(predictor, decoder, prompts, 4, convention, metric_seed)?;

    let mut params = predictor.params();
    params.extend(decoder.params());
    let mut adam = AdamState::new(&params);
    let mut rng = rng_from_seed(seed);
    let mut steps = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let mut total: Option<Tensor> = None;
        let mut kl_sum = 0.0;
        let mut recon_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let prompt = &prompts.train()[rng.gen_range(0..train_len)];
            let eps = rng::normal_tensor(&mut rng, predictor.noise_dim());
            let loss = pretrain_loss(
                predictor,
                decoder,
                &prompt.embedding,
                &eps,
                cfg.kl_weight,
                cfg.recon_weight,
                convention,
            )?;
            kl_sum += loss.kl;
            recon_sum += loss.recon;
            total = Some(match total {
                Some(t) => t.add(&loss.total)?,
                None => loss.total,
            });
        }
        let batch = cfg.batch_size as f64;
        let loss = total.expect("batch nonempty").scale(1.0 / batch)?;
        let loss_value = loss.item()?;
        if !loss_value.is_finite() {
            return Err(LabError::Diverged {
                step,
                detail: format!("pretrain loss became {loss_value}"),
            });
        }
        zero_grads(&params);
        loss.backward()?;
        adam.step(&params, cfg.lr)?;
        steps.push(PretrainStep {
            step,
            kl: kl_sum / batch,
            recon: recon_sum / batch,
            total: loss_value,
        });
    }

    let (final_kl, final_mse) =
        pretrain_metrics(predictor, decoder, prompts, 4, convention, metric_seed)?;
    Ok(PretrainReport {
        steps,
        init_kl_per_dim: init_kl,
        final_kl_per_dim: final_kl,
        init_recon_mse: init_mse,
        final_recon_mse: final_mse,
    })
}

/// One validation measurement during preference training.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub step: u64,
    pub per_scorer: Vec<(String, f64)>,
    pub average: f64,
}

/// Outcome of preference training. The predictor is left holding the
/// best-validation weights.
pub struct PahiRun {
    pub trace: Vec<TraceRow>,
    pub validation: Vec<ValidationRow>,
    pub best_val_loss: Option<f64>,
    pub best_step: Option<u64>,
    pub stopped_early: bool,
    pub steps_run: u64,
    pub warning: Option<String>,
}

/// Preference training of the predictor heads: per step, draw a prompt
/// mini-batch, reparameterize per-prompt candidates, score candidate and
/// baseline legs through the frozen pipeline, and Adam-update the heads on
/// the mean pairwise loss. Validation loss (averaged across `monitor_scorers`)
/// is polled every `eval_cadence` steps and drives early stopping.
#[allow(clippy::too_many_arguments)]
pub fn pahi_train(
    predictor: &NoisePredictor,
    generator: &FrozenGenerator,
    training_scorer: &Scorer,
    monitor_scorers: &[&Scorer],
    prompts: &PromptTable,
    cfg: &PahiConfig,
    convention: SigmaConvention,
    seed: u64,
) -> Result<PahiRun> {
    let train_len = prompts.train().len();
    if train_len == 0 {
        return Err(LabError::EmptyPromptSet("pahi_train"));
    }
    let d_z = generator.noise_dim();
    let params = predictor.params();
    let mut adam = AdamState::new(&params);
    let mut rng = rng_from_seed(seed);
    let init_snapshot = predictor.snapshot();

    let mut monitor = EarlyStopMonitor::new(cfg.patience);
    let mut best_snapshot: Option<Vec<Vec<f64>>> = None;
    let mut best_val_loss = None;
    let mut best_step = None;
    let mut trace = Vec::new();
    let mut validation = Vec::new();
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        let lr = lr_at(step, cfg.base_lr, cfg.warmup_steps, cfg.floor_lr)?;
        let mut total: Option<Tensor> = None;
        for _ in 0..cfg.batch_size {
            let prompt = &prompts.train()[rng.gen_range(0..train_len)];
            let eps = rng::normal_tensor(&mut rng, d_z);
            let baseline = match cfg.pairing {
                PairingMode::CommonRandomNumbers => {
                    Tensor::from_vec([d_z], eps.value()).expect("consistent")
                }
                PairingMode::Independent => rng::normal_tensor(&mut rng, d_z),
            };
            let s = build_pipeline_score(generator, training_scorer, &baseline, prompt)?;
            let candidate = predictor.sample(&prompt.embedding, &eps, convention)?;
            let s_prime = build_pipeline_score(generator, training_scorer, &candidate, prompt)?;
            let pair = preference_pair_loss(&s, &s_prime)?;
            total = Some(match total {
                Some(t) => t.add(&pair)?,
                None => pair,
            });
        }
        let loss = total.expect("batch nonempty").scale(1.0 / cfg.batch_size as f64)?;
        let loss_value = loss.item()?;
        if !loss_value.is_finite() {
            return Err(LabError::Diverged {
                step,
                detail: format!("pahi loss became {loss_value}"),
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
        steps_run = step + 1;

        if (step + 1) % cfg.eval_cadence == 0 {
            let eval_index = (step + 1) / cfg.eval_cadence;
            let mut per_scorer = Vec::with_capacity(monitor_scorers.len());
            let mut sum = 0.0;
            for scorer in monitor_scorers {
                let mut vrng =
                    rng_from_seed(seed ^ (0xa5a5_5a5a_0000_0000 | eval_index));
                let v = validation_preference_loss(
                    &Candidate::Predictor(predictor),
                    generator,
                    scorer,
                    prompts.validation(),
                    cfg.val_samples,
                    convention,
                    &mut vrng,
                )?;
                sum += v;
                per_scorer.push((scorer.name().to_string(), v));
            }
            let average = sum / monitor_scorers.len() as f64;
            validation.push(ValidationRow {
                step: step + 1,
                per_scorer,
                average,
            });
            let improved = match best_val_loss {
                None => average.is_finite(),
                Some(b) => average.is_finite() && average < b,
            };
            if improved {
                best_val_loss = Some(average);
                best_step = Some(step + 1);
                best_snapshot = Some(predictor.snapshot());
            }
            if matches!(monitor.update(average), StopDecision::Stop) {
                stopped_early = true;
                break;
            }
        }
    }

    let mut warning = None;
    match &best_snapshot {
        Some(snapshot) => predictor.restore(snapshot)?,
        None => {
            if !validation.is_empty() {
                predictor.restore(&init_snapshot)?;
                warning = Some(
                    "validation loss never improved; returning the initialization".to_string(),
                );
            }
        }
    }

    Ok(PahiRun {
        trace,
        validation,
        best_val_loss,
        best_step,
        stopped_early,
        steps_run,
        warning,
    })
}

/// Inference: one predictor pass, one reparameterized draw, one generator pass.
pub fn pahi_infer(
    predictor: &NoisePredictor,
    generator: &FrozenGenerator,
    embedding: &Tensor,
    eps: &Tensor,
    convention: SigmaConvention,
) -> Result<Tensor> {
    let noise = predictor.sample(embedding, eps, convention)?;
    generator.denoise_one_step(&noise, embedding)
}
