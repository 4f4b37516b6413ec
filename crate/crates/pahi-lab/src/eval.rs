//! Win-rate evaluation, multi-run aggregation, early stopping, and
//! inference-cost benchmarking.

use std::time::Instant;

use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::frozen::{build_pipeline_score, FrozenGenerator, Prompt, Scorer};
use crate::inversion::{
    preference_pair_loss, sample_reparameterized, NoiseDistribution, SigmaConvention,
};
use crate::predictor::NoisePredictor;
use crate::rng::{self, rng_from_seed};
use crate::Tensor;

/// Source of candidate noise draws in an evaluation.
pub enum Candidate<'a> {
    /// The standard Gaussian itself (null candidate).
    Standard,
    /// A shared noise distribution from HI training.
    Distribution(&'a NoiseDistribution),
    /// A prompt-adaptive predictor from PAHI training.
    Predictor(&'a NoisePredictor),
}

impl Candidate<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Candidate::Standard => "standard",
            Candidate::Distribution(_) => "hi",
            Candidate::Predictor(_) => "pahi",
        }
    }

    /// Candidate noise for `prompt` from a standard-normal draw `eps`.
    pub fn draw(&self, prompt: &Prompt, eps: &Tensor, convention: SigmaConvention) -> Result<Tensor> {
        match self {
            Candidate::Standard => Ok(eps.clone()),
            Candidate::Distribution(dist) => sample_reparameterized(dist, eps, convention),
            Candidate::Predictor(pred) => pred.sample(&prompt.embedding, eps, convention),
        }
    }
}

/// Per-scorer outcome of one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scorer: String,
    pub win_rate: f64,
    pub wins: u64,
    pub comparisons: u64,
    pub mean_baseline_score: f64,
    pub mean_candidate_score: f64,
    pub prompt_count: usize,
    pub samples_per_prompt: usize,
    pub seed: u64,
}

/// Paired comparisons against the standard Gaussian: for every
/// (prompt, sample) both legs are generated from independent draws, scored by
/// every scorer, and a win is a strictly higher candidate score (ties count
/// as losses).
pub fn evaluate_win_rate(
    candidate: &Candidate,
    generator: &FrozenGenerator,
    scorers: &[&Scorer],
    prompts: &[Prompt],
    samples_per_prompt: usize,
    convention: SigmaConvention,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if prompts.is_empty() {
        return Err(LabError::EmptyPromptSet("evaluate_win_rate"));
    }
    if scorers.is_empty() {
        return Err(LabError::EmptyPromptSet("evaluate_win_rate scorers"));
    }
    let d_z = generator.noise_dim();
    let mut rng = rng_from_seed(seed);
    let mut wins = vec![0u64; scorers.len()];
    let mut base_sum = vec![0.0f64; scorers.len()];
    let mut cand_sum = vec![0.0f64; scorers.len()];
    let mut comparisons = 0u64;

    for prompt in prompts {
        for _ in 0..samples_per_prompt {
            let baseline = rng::normal_tensor(&mut rng, d_z);
            let eps = rng::normal_tensor(&mut rng, d_z);
            let candidate_noise = candidate.draw(prompt, &eps, convention)?;
            let base_image = generator.denoise_one_step(&baseline, &prompt.embedding)?;
            let cand_image = generator.denoise_one_step(&candidate_noise, &prompt.embedding)?;
            comparisons += 1;
            for (i, scorer) in scorers.iter().enumerate() {
                let s = scorer.score_image(&base_image, prompt)?.item()?;
                let s_prime = scorer.score_image(&cand_image, prompt)?.item()?;
                if s_prime > s {
                    wins[i] += 1;
                }
                base_sum[i] += s;
                cand_sum[i] += s_prime;
            }
        }
    }

    Ok(scorers
        .iter()
        .enumerate()
        .map(|(i, scorer)| EvalReport {
            scorer: scorer.name().to_string(),
            win_rate: wins[i] as f64 / comparisons as f64,
            wins: wins[i],
            comparisons,
            mean_baseline_score: base_sum[i] / comparisons as f64,
            mean_candidate_score: cand_sum[i] / comparisons as f64,
            prompt_count: prompts.len(),
            samples_per_prompt,
            seed,
        })
        .collect())
}

/// Mean pairwise preference loss of a candidate on a prompt set with fresh
/// independent draws on both legs; used for validation monitoring.
pub fn validation_preference_loss(
    candidate: &Candidate,
    generator: &FrozenGenerator,
    scorer: &Scorer,
    prompts: &[Prompt],
    samples_per_prompt: usize,
    convention: SigmaConvention,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(LabError::EmptyPromptSet("validation_preference_loss"));
    }
    let d_z = generator.noise_dim();
    let mut acc = 0.0;
    let mut count = 0usize;
    for prompt in prompts {
        for _ in 0..samples_per_prompt {
            let baseline = rng::normal_tensor(rng, d_z);
            let eps = rng::normal_tensor(rng, d_z);
            let candidate_noise = candidate.draw(prompt, &eps, convention)?;
            let s = build_pipeline_score(generator, scorer, &baseline, prompt)?;
            let s_prime = build_pipeline_score(generator, scorer, &candidate_noise, prompt)?;
            acc += preference_pair_loss(&s, &s_prime)?.item()?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Mean and sample standard deviation of win rates across runs, per scorer.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub scorer: String,
    pub mean_win_rate: f64,
    /// Absent when only a single run is aggregated.
    pub std_win_rate: Option<f64>,
    pub runs: usize,
}

/// Group reports by scorer and aggregate across runs. All runs must carry
/// the same scorer set and prompt count.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<Vec<AggregateReport>> {
    if reports.is_empty() {
        return Err(LabError::MixedScorerSets("no reports".to_string()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.scorer.as_str()) {
            order.push(&r.scorer);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    let mut group_len = None;
    for name in &order {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.scorer == *name).collect();
        match group_len {
            None => group_len = Some(group.len()),
            Some(n) if n != group.len() => {
                return Err(LabError::MixedScorerSets(format!(
                    "scorer '{name}' appears {} times, expected {n}",
                    group.len()
                )))
            }
            _ => {}
        }
        if group
            .iter()
            .any(|r| r.prompt_count != group[0].prompt_count)
        {
            return Err(LabError::MixedScorerSets(format!(
                "scorer '{name}' reports mix different prompt sets"
            )));
        }
        let n = group.len() as f64;
        let mean = group.iter().map(|r| r.win_rate).sum::<f64>() / n;
        let std = if group.len() >= 2 {
            let ss = group
                .iter()
                .map(|r| (r.win_rate - mean) * (r.win_rate - mean))
                .sum::<f64>();
            Some((ss / (n - 1.0)).sqrt())
        } else {
            None
        };
        out.push(AggregateReport {
            scorer: name.to_string(),
            mean_win_rate: mean,
            std_win_rate: std,
            runs: group.len(),
        });
    }
    Ok(out)
}

/// Wall-clock comparison of plain one-step sampling against
/// predictor-augmented sampling, batch size 1.
#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub plain_ns_per_image: f64,
    pub augmented_ns_per_image: f64,
    /// (augmented - plain) / plain.
    pub overhead_fraction: f64,
    pub reps: usize,
    pub warmup: usize,
    pub prompt_count: usize,
}

fn median_of_means(mut samples: Vec<f64>, chunks: usize) -> f64 {
    let chunk_size = (samples.len() / chunks).max(1);
    let mut means: Vec<f64> = samples
        .chunks(chunk_size)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let mid = means.len() / 2;
    let m = if means.len() % 2 == 1 {
        means[mid]
    } else {
        0.5 * (means[mid - 1] + means[mid])
    };
    samples.clear();
    m
}

/// Time per-image sampling with and without the predictor pass. When
/// `predictor` is absent both arms run the plain pipeline (self-comparison).
/// Strictly single-threaded; the first `warmup` reps per arm are discarded
/// and the per-rep timings are summarized by a median of 10 chunk means.
pub fn bench_inference(
    generator: &FrozenGenerator,
    predictor: Option<&NoisePredictor>,
    prompts: &[Prompt],
    reps: usize,
    warmup: usize,
    convention: SigmaConvention,
    seed: u64,
) -> Result<TimingReport> {
    if prompts.is_empty() {
        return Err(LabError::EmptyPromptSet("bench_inference"));
    }
    let d_z = generator.noise_dim();

    let run_arm = |use_predictor: bool| -> Result<f64> {
        let mut rng = rng_from_seed(seed);
        let mut timings = Vec::with_capacity(reps);
        for rep in 0..(warmup + reps) {
            let prompt = &prompts[rep % prompts.len()];
            let start = Instant::now();
            let eps = rng::normal_tensor(&mut rng, d_z);
            let noise = match (use_predictor, predictor) {
                (true, Some(p)) => p.sample(&prompt.embedding, &eps, convention)?,
                _ => eps,
            };
            let image = generator.denoise_one_step(&noise, &prompt.embedding)?;
            let elapsed = start.elapsed().as_nanos() as f64;
            std::hint::black_box(image.value());
            if rep >= warmup {
                timings.push(elapsed);
            }
        }
        Ok(median_of_means(timings, 10))
    };

    let plain = run_arm(false)?;
    let augmented = run_arm(true)?;
    Ok(TimingReport {
        plain_ns_per_image: plain,
        augmented_ns_per_image: augmented,
        overhead_fraction: (augmented - plain) / plain,
        reps,
        warmup,
        prompt_count: prompts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early stopping on a monitored validation loss: stop exactly when the loss
/// has not improved for `patience` consecutive evaluations. A non-finite
/// loss counts as no improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopMonitor {
    best: Option<f64>,
    since_improvement: u32,
    patience: u32,
}

impl EarlyStopMonitor {
    pub fn new(patience: u32) -> Self {
        EarlyStopMonitor {
            best: None,
            since_improvement: 0,
            patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn evaluations_since_improvement(&self) -> u32 {
        self.since_improvement
    }

    pub fn update(&mut self, loss: f64) -> StopDecision {
        let improved = loss.is_finite()
            && match self.best {
                None => true,
                Some(best) => loss < best,
            };
        if improved {
            self.best = Some(loss);
            self.since_improvement = 0;
            StopDecision::Continue
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frozen::{
        make_prompt_table, EpsilonPredictor, PromptTable, QuadraticScorer, VarianceSchedule,
    };
    use crate::rng::stream;

    fn identity_generator(d: usize, d_e: usize) -> FrozenGenerator {
        FrozenGenerator::new(
            EpsilonPredictor::zero(d, d_e),
            VarianceSchedule::new(1.0).unwrap(),
            d,
            d,
            d_e,
        )
        .unwrap()
    }

    fn quad_scorer(prompts: &PromptTable, gamma: f64, d: usize) -> Scorer {
        Scorer::Quadratic(
            QuadraticScorer::per_prompt_targets("quad", gamma, 3.0, d, 5, prompts).unwrap(),
        )
    }

    #[test]
    fn null_candidate_sits_in_the_binomial_band() {
        let prompts = make_prompt_table(12, 8, 31, (2, 2, 8)).unwrap();
        let gen = identity_generator(8, 8);
        let scorer = quad_scorer(&prompts, 0.1, 8);
        let reports = evaluate_win_rate(
            &Candidate::Standard,
            &gen,
            &[&scorer],
            prompts.test(),
            250,
            SigmaConvention::StdDev,
            77,
        )
        .unwrap();
        let r = &reports[0];
        assert_eq!(r.comparisons, 2000);
        let band = 2.576 * (0.25f64 / 2000.0).sqrt();
        assert!(
            (r.win_rate - 0.5).abs() < band,
            "win rate {} outside 99% band {band}",
            r.win_rate
        );
    }

    #[test]
    fn dominant_candidate_wins_every_comparison() {
        let prompts = make_prompt_table(6, 8, 3, (2, 2, 2)).unwrap();
        let gen = identity_generator(4, 8);
        let scorer = Scorer::Quadratic(
            QuadraticScorer::constant_target("quad", 1.0, 2.5, 4, &prompts).unwrap(),
        );
        let dist = NoiseDistribution::from_values(vec![2.5; 4], vec![0.01f64.ln(); 4]).unwrap();
        let reports = evaluate_win_rate(
            &Candidate::Distribution(&dist),
            &gen,
            &[&scorer],
            prompts.test(),
            500,
            SigmaConvention::StdDev,
            9,
        )
        .unwrap();
        assert_eq!(reports[0].comparisons, 1000);
        assert_eq!(reports[0].win_rate, 1.0);
        assert!(reports[0].mean_candidate_score > reports[0].mean_baseline_score);
    }

    #[test]
    fn self_comparison_has_zero_wins_under_strict_inequality() {
        let prompts = make_prompt_table(4, 8, 3, (2, 1, 1)).unwrap();
        let gen = identity_generator(4, 8);
        let scorer = quad_scorer(&prompts, 0.5, 4);
        let mut rng_a = stream(5, "legs");
        let mut rng_b = stream(5, "legs");
        let mut wins = 0;
        for prompt in prompts.all() {
            for _ in 0..50 {
                let x = rng::normal_tensor(&mut rng_a, 4);
                let x_prime = rng::normal_tensor(&mut rng_b, 4);
                let s = scorer
                    .score_image(&gen.denoise_one_step(&x, &prompt.embedding).unwrap(), prompt)
                    .unwrap()
                    .item()
                    .unwrap();
                let sp = scorer
                    .score_image(
                        &gen.denoise_one_step(&x_prime, &prompt.embedding).unwrap(),
                        prompt,
                    )
                    .unwrap()
                    .item()
                    .unwrap();
                if sp > s {
                    wins += 1;
                }
            }
        }
        assert_eq!(wins, 0);
    }

    #[test]
    fn win_rates_are_invariant_under_increasing_score_transforms() {
        let prompts = make_prompt_table(8, 8, 13, (2, 2, 4)).unwrap();
        let gen = identity_generator(4, 8);
        // gamma scales every quadratic score by a positive constant
        let s1 = Scorer::Quadratic(
            QuadraticScorer::per_prompt_targets("g1", 0.1, 2.0, 4, 5, &prompts).unwrap(),
        );
        let s2 = Scorer::Quadratic(
            QuadraticScorer::per_prompt_targets("g2", 0.7, 2.0, 4, 5, &prompts).unwrap(),
        );
        let dist = NoiseDistribution::from_values(vec![0.5; 4], vec![0.0; 4]).unwrap();
        let reports = evaluate_win_rate(
            &Candidate::Distribution(&dist),
            &gen,
            &[&s1, &s2],
            prompts.test(),
            100,
            SigmaConvention::StdDev,
            23,
        )
        .unwrap();
        assert_eq!(reports[0].wins, reports[1].wins);
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let prompts = make_prompt_table(6, 8, 17, (2, 2, 2)).unwrap();
        let gen = identity_generator(4, 8);
        let scorer = quad_scorer(&prompts, 0.2, 4);
        let run = || {
            evaluate_win_rate(
                &Candidate::Standard,
                &gen,
                &[&scorer],
                prompts.test(),
                64,
                SigmaConvention::StdDev,
                3,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].wins, b[0].wins);
        assert_eq!(
            a[0].mean_baseline_score.to_bits(),
            b[0].mean_baseline_score.to_bits()
        );
    }

    #[test]
    fn empty_prompt_set_is_an_error() {
        let prompts = make_prompt_table(4, 8, 3, (4, 0, 0)).unwrap();
        let gen = identity_generator(4, 8);
        let scorer = quad_scorer(&prompts, 0.5, 4);
        let err = evaluate_win_rate(
            &Candidate::Standard,
            &gen,
            &[&scorer],
            prompts.test(),
            10,
            SigmaConvention::StdDev,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, LabError::EmptyPromptSet(_)));
    }

    fn report(scorer: &str, win_rate: f64) -> EvalReport {
        EvalReport {
            scorer: scorer.to_string(),
            win_rate,
            wins: (win_rate * 100.0) as u64,
            comparisons: 100,
            mean_baseline_score: 0.0,
            mean_candidate_score: 0.0,
            prompt_count: 10,
            samples_per_prompt: 10,
            seed: 0,
        }
    }

    #[test]
    fn aggregate_examples() {
        // hand-evaluated sample std of (0.9, 0.9, 1.0, 1.0, 1.0)
        let reports: Vec<EvalReport> = [0.9, 0.9, 1.0, 1.0, 1.0]
            .iter()
            .map(|&w| report("s", w))
            .collect();
        let agg = aggregate_runs(&reports).unwrap();
        assert!((agg[0].mean_win_rate - 0.96).abs() < 1e-12);
        assert!((agg[0].std_win_rate.unwrap() - 0.054_772_255_750_516_6).abs() < 1e-12);

        let identical: Vec<EvalReport> = (0..5).map(|_| report("s", 0.8)).collect();
        let agg2 = aggregate_runs(&identical).unwrap();
        assert_eq!(agg2[0].std_win_rate.unwrap(), 0.0);

        let single = vec![report("s", 0.73)];
        let agg3 = aggregate_runs(&single).unwrap();
        assert_eq!(agg3[0].mean_win_rate, 0.73);
        assert!(agg3[0].std_win_rate.is_none());

        let mixed = vec![report("a", 0.5), report("b", 0.5), report("a", 0.6)];
        assert!(matches!(
            aggregate_runs(&mixed),
            Err(LabError::MixedScorerSets(_))
        ));
    }

    #[test]
    fn early_stop_scripted_traces() {
        // strictly decreasing: never stops
        let mut m = EarlyStopMonitor::new(5);
        for i in 0..50 {
            assert_eq!(m.update(1.0 / (i + 1) as f64), StopDecision::Continue);
        }

        // six 1.0s after a best of 1.0: stop exactly on the 5th non-improvement
        let mut m = EarlyStopMonitor::new(5);
        assert_eq!(m.update(1.0), StopDecision::Continue); // establishes best
        let mut decisions = Vec::new();
        for _ in 0..6 {
            decisions.push(m.update(1.0));
        }
        assert_eq!(
            decisions,
            vec![
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop,
                StopDecision::Stop,
            ]
        );

        // (1.0, 0.9, 1.1, 1.1, 1.1, 1.1, 0.8): only 4 consecutive stalls
        let mut m = EarlyStopMonitor::new(5);
        for loss in [1.0, 0.9, 1.1, 1.1, 1.1, 1.1, 0.8] {
            assert_eq!(m.update(loss), StopDecision::Continue, "loss {loss}");
        }
        assert_eq!(m.best(), Some(0.8));

        // NaN counts as no improvement
        let mut m = EarlyStopMonitor::new(2);
        assert_eq!(m.update(f64::NAN), StopDecision::Continue);
        assert_eq!(m.update(f64::NAN), StopDecision::Stop);
        assert_eq!(m.best(), None);
    }

    #[test]
    fn bench_self_comparison_is_balanced() {
        let prompts = make_prompt_table(4, 8, 3, (2, 1, 1)).unwrap();
        let gen = FrozenGenerator::new(
            EpsilonPredictor::mlp(16, 8, 512, 1.0, 9),
            VarianceSchedule::new(0.64).unwrap(),
            16,
            16,
            8,
        )
        .unwrap();
        let report = bench_inference(
            &gen,
            None,
            prompts.all(),
            300,
            20,
            SigmaConvention::StdDev,
            5,
        )
        .unwrap();
        assert!(
            report.overhead_fraction.abs() < 0.02,
            "self-comparison overhead {}",
            report.overhead_fraction
        );
    }
}
