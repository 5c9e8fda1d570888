//! Loss, exact gradients, Adam optimization, the seeded training loop, and
//! finite-difference gradient verification.

mod backward;
mod gradcheck;

pub use backward::{backward, bce_loss, BackwardPass, Batch, PROB_CLAMP};
pub use gradcheck::{default_tiny_config, grad_check, GradCheckGroup, GradCheckReport};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{DomainRegistry, NewsItem};
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::network::{model_forward, ModelConfig, ModelParams};
use crate::textpipe::{build_vocab, encode, tokenize, TokenSequence, Vocabulary};

/// Adam optimizer state: per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(config: &ModelConfig, learning_rate: f64) -> Self {
        AdamState {
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. The PAD embedding row is re-zeroed
/// after the step.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) {
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let mut ps = params.tensors_mut();
    let gs = grads.tensors();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for i in 0..ps.len() {
        let p = &mut ps[i].1;
        let g = gs[i].1;
        let m = &mut ms[i].1;
        let v = &mut vs[i].1;
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    drop(ps);
    params.embedding.zero_pad_row();
}

/// Training hyperparameters. Learning rate 0 is accepted so a zero-rate grid
/// entry can act as a no-op baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Minimum corpus frequency for vocabulary tokens.
    pub vocab_min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            patience: 10,
            vocab_min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the training history CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub wall_seconds: f64,
}

/// Best checkpoint plus the full history of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub best_params: ModelParams,
    /// Epoch of the kept checkpoint; 0 means initialization.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub history: Vec<EpochStats>,
    pub diverged: bool,
}

fn encode_items(
    items: &[NewsItem],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Vec<TokenSequence>, Vec<usize>, Vec<u8>)> {
    let mut seqs = Vec::with_capacity(items.len());
    let mut domains = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        seqs.push(encode(&tokenize(&item.content), vocab, max_len)?);
        domains.push(item.domain);
        labels.push(item.label);
    }
    Ok((seqs, domains, labels))
}

fn validation_f1(
    params: &ModelParams,
    config: &ModelConfig,
    seqs: &[TokenSequence],
    domains: &[usize],
    labels: &[u8],
) -> Result<f64> {
    let mut preds = Vec::with_capacity(seqs.len());
    for (seq, &dom) in seqs.iter().zip(domains) {
        let trace = model_forward(seq, dom, params, config)?;
        preds.push(if trace.p_fake >= 0.5 { 1u8 } else { 0u8 });
    }
    macro_f1(&preds, labels)
}

/// Seeded minibatch training with early stopping on validation macro-F1.
/// All randomness derives from the single seed, so a fixed seed gives
/// bit-identical loss curves. On divergence the last finite checkpoint is
/// kept and `diverged` is set.
pub fn train(
    train_items: &[NewsItem],
    val_items: &[NewsItem],
    registry: &DomainRegistry,
    template: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let vocab = build_vocab(train_items, tcfg.vocab_min_count)?;
    let mut config = template.clone();
    config.vocab_size = vocab.size();
    config.num_domains = registry.len();
    config.validate()?;

    let (train_seqs, train_domains, train_labels) =
        encode_items(train_items, &vocab, config.max_len)?;
    let (val_seqs, val_domains, val_labels) = encode_items(val_items, &vocab, config.max_len)?;

    let mut params = ModelParams::init(&config, tcfg.seed)?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(tcfg.seed);
    shuffle_rng.set_stream(1);
    let mut adam = AdamState::new(&config, tcfg.learning_rate);

    let mut best_params = params.clone();
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut history = Vec::new();
    let mut diverged = false;
    let mut indices: Vec<usize> = (0..train_seqs.len()).collect();

    'epochs: for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(tcfg.batch_size) {
            let batch = Batch {
                sequences: chunk.iter().map(|&i| train_seqs[i].clone()).collect(),
                domains: chunk.iter().map(|&i| train_domains[i]).collect(),
                labels: chunk.iter().map(|&i| train_labels[i]).collect(),
            };
            let pass = match backward(&batch, &params, &config) {
                Ok(pass) => pass,
                Err(Error::NonFinite { .. }) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            loss_sum += pass.loss * chunk.len() as f64;
            adam_step(&mut params, &pass.grads, &mut adam);
        }
        let train_loss = loss_sum / train_seqs.len() as f64;
        if !train_loss.is_finite() {
            diverged = true;
            break;
        }
        let val_f1 = validation_f1(&params, &config, &val_seqs, &val_domains, &val_labels)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_macro_f1: val_f1,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            best_epoch = epoch;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= tcfg.patience {
                break;
            }
        }
    }

    if best_val_f1 == f64::NEG_INFINITY {
        // No epoch completed (immediate divergence): report the
        // initialization checkpoint.
        best_val_f1 = validation_f1(&best_params, &config, &val_seqs, &val_domains, &val_labels)?;
    }

    Ok(TrainOutcome {
        config,
        vocab,
        best_params,
        best_epoch,
        best_val_f1,
        history,
        diverged,
    })
}

/// Result of a learning-rate grid search.
#[derive(Debug, Clone)]
pub struct LrSearch {
    pub best_rate: f64,
    /// (rate, best validation macro-F1) in grid order; NaN marks a run that
    /// diverged before completing an epoch.
    pub scores: Vec<(f64, f64)>,
    pub best: TrainOutcome,
}

/// Default search grid, 1e-6 to 1e-2 by decades.
pub fn default_lr_grid() -> Vec<f64> {
    vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2]
}

/// Trains one model per rate with identical seeds and returns the rate
/// maximizing validation macro-F1, ties to the smaller rate. Runs that
/// diverge are excluded; if every run diverges this is an error.
pub fn lr_search(
    grid: &[f64],
    train_items: &[NewsItem],
    val_items: &[NewsItem],
    registry: &DomainRegistry,
    template: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<LrSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(
            "learning-rate grid must be non-empty".into(),
        ));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, TrainOutcome)> = None;
    for &rate in grid {
        let mut cfg = tcfg.clone();
        cfg.learning_rate = rate;
        let outcome = train(train_items, val_items, registry, template, &cfg)?;
        let usable = !outcome.diverged;
        scores.push((rate, if usable { outcome.best_val_f1 } else { f64::NAN }));
        if usable {
            let better = match &best {
                None => true,
                Some((best_rate, b)) => {
                    outcome.best_val_f1 > b.best_val_f1
                        || (outcome.best_val_f1 == b.best_val_f1 && rate < *best_rate)
                }
            };
            if better {
                best = Some((rate, outcome));
            }
        }
    }
    match best {
        Some((best_rate, best)) => Ok(LrSearch {
            best_rate,
            scores,
            best,
        }),
        None => Err(Error::Diverged(
            "every learning rate in the grid diverged".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthMode};

    fn scalar_like_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            embedding_dim: 1,
            num_domains: 1,
            domain_dim: 1,
            num_experts: 1,
            kernel_sizes: vec![1],
            filters_per_kernel: 1,
            gate_hidden: 1,
            head_hidden: 1,
            max_len: 4,
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let config = scalar_like_config();
        let mut params = ModelParams::init(&config, 1).unwrap();
        let before = params.clone();
        let grads = ModelParams::zeros(&config);
        let mut state = AdamState::new(&config, 0.01);
        adam_step(&mut params, &grads, &mut state);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_closed_form() {
        // With g = 1: m̂ = 1, v̂ = 1 → Δθ = lr / (1 + ε) ≈ lr.
        let config = scalar_like_config();
        let mut params = ModelParams::init(&config, 1).unwrap();
        let before = params.gate.b2[0];
        let mut grads = ModelParams::zeros(&config);
        grads.gate.b2[0] = 1.0;
        let mut state = AdamState::new(&config, 0.01);
        adam_step(&mut params, &grads, &mut state);
        let delta = before - params.gate.b2[0];
        let want = 0.01 / (1.0 + 1e-8);
        assert!((delta - want).abs() < 1e-15);
    }

    #[test]
    fn adam_three_steps_match_scalar_oracle() {
        let config = scalar_like_config();
        let mut params = ModelParams::init(&config, 1).unwrap();
        let mut state = AdamState::new(&config, 0.05);
        let gs = [0.3, -1.2, 0.7];

        // Hand-rolled scalar Adam.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
        let mut theta = params.gate.b2[0];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, &g) in gs.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32 + 1));
            let v_hat = v / (1.0 - b2.powi(t as i32 + 1));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        for &g in &gs {
            let mut grads = ModelParams::zeros(&config);
            grads.gate.b2[0] = g;
            adam_step(&mut params, &grads, &mut state);
        }
        assert!((params.gate.b2[0] - theta).abs() < 1e-12);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn adam_keeps_pad_row_zero() {
        let config = scalar_like_config();
        let mut params = ModelParams::init(&config, 1).unwrap();
        let mut grads = ModelParams::zeros(&config);
        // Poke a fake gradient into the PAD row.
        grads.embedding.data_mut()[0] = 5.0;
        let mut state = AdamState::new(&config, 0.1);
        adam_step(&mut params, &grads, &mut state);
        assert_eq!(params.embedding.row(0), &[0.0]);
    }

    fn desk_template() -> ModelConfig {
        ModelConfig {
            vocab_size: 0, // filled by train
            embedding_dim: 8,
            num_domains: 0, // filled by train
            domain_dim: 8,
            num_experts: 2,
            kernel_sizes: vec![2],
            filters_per_kernel: 4,
            gate_hidden: 8,
            head_hidden: 8,
            max_len: 16,
        }
    }

    #[test]
    fn training_reduces_loss_on_separable_corpus() {
        let items = synth_corpus(1, 60, 8, SynthMode::Separable, 3).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (train_items, val_items) = items.split_at(40);
        let tcfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(train_items, val_items, &registry, &desk_template(), &tcfg).unwrap();
        assert!(!out.diverged);
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "loss {last} should fall below {first}");
    }

    #[test]
    fn fixed_seed_gives_bit_identical_loss_curves() {
        let items = synth_corpus(2, 30, 8, SynthMode::DomainFlip, 5).unwrap();
        let registry = DomainRegistry::synthetic(2).unwrap();
        let (tr, va) = items.split_at(40);
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 123,
            ..TrainConfig::default()
        };
        let a = train(tr, va, &registry, &desk_template(), &tcfg).unwrap();
        let b = train(tr, va, &registry, &desk_template(), &tcfg).unwrap();
        let la: Vec<f64> = a.history.iter().map(|h| h.train_loss).collect();
        let lb: Vec<f64> = b.history.iter().map(|h| h.train_loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.best_params, b.best_params);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_at_initialization() {
        let items = synth_corpus(1, 20, 8, SynthMode::Separable, 9).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (tr, va) = items.split_at(14);
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train(tr, va, &registry, &desk_template(), &tcfg).unwrap();
        let vocab = build_vocab(tr, 1).unwrap();
        let mut config = desk_template();
        config.vocab_size = vocab.size();
        config.num_domains = 1;
        let init = ModelParams::init(&config, 7).unwrap();
        assert_eq!(out.best_params, init);
    }

    #[test]
    fn best_f1_is_max_of_history() {
        let items = synth_corpus(1, 40, 8, SynthMode::Separable, 2).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (tr, va) = items.split_at(28);
        let tcfg = TrainConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 3e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(tr, va, &registry, &desk_template(), &tcfg).unwrap();
        let hist_max = out
            .history
            .iter()
            .map(|h| h.val_macro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val_f1, hist_max);
    }

    #[test]
    fn lr_search_single_rate_returns_it() {
        let items = synth_corpus(1, 20, 8, SynthMode::Separable, 6).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (tr, va) = items.split_at(14);
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let s = lr_search(&[2e-4], tr, va, &registry, &desk_template(), &tcfg).unwrap();
        assert_eq!(s.best_rate, 2e-4);
        assert_eq!(s.scores.len(), 1);
    }

    #[test]
    fn lr_search_prefers_learning_over_zero_rate() {
        let items = synth_corpus(1, 60, 8, SynthMode::Separable, 8).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (tr, va) = items.split_at(40);
        let tcfg = TrainConfig {
            epochs: 8,
            batch_size: 8,
            seed: 2,
            ..TrainConfig::default()
        };
        let s = lr_search(&[0.0, 1e-3], tr, va, &registry, &desk_template(), &tcfg).unwrap();
        assert_eq!(s.best_rate, 1e-3);
    }

    #[test]
    fn lr_search_breaks_ties_toward_smaller_rate() {
        // Two zero rates: identical (initialization) scores; the smaller of
        // the two distinct rates must win. Zero twice collapses to one value,
        // so use a grid where both entries provably tie: rate 0 listed twice.
        let items = synth_corpus(1, 20, 8, SynthMode::Separable, 4).unwrap();
        let registry = DomainRegistry::synthetic(1).unwrap();
        let (tr, va) = items.split_at(14);
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let s = lr_search(&[1e-9, 1e-10], tr, va, &registry, &desk_template(), &tcfg).unwrap();
        // Rates this small cannot change the argmax predictions in one
        // epoch: scores tie and the smaller rate wins.
        assert_eq!(s.scores[0].1, s.scores[1].1);
        assert_eq!(s.best_rate, 1e-10);
    }

    #[test]
    fn embedding_moments_have_embedding_shape() {
        let config = scalar_like_config();
        let state = AdamState::new(&config, 0.1);
        assert_eq!(
            state.m.embedding.mat().data().len(),
            config.vocab_size * config.embedding_dim
        );
    }
}
