//! Exact reverse-mode gradients for the full network under the batch-mean
//! binary cross-entropy loss.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::network::{DetailedTrace, ModelConfig, ModelParams};
use crate::textpipe::{TokenSequence, PAD};

/// Probability clamp applied before the logarithms of the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// One training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub sequences: Vec<TokenSequence>,
    pub domains: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if self.domains.len() != self.len() || self.labels.len() != self.len() {
            return Err(Error::InvalidArgument(
                "batch fields must have equal lengths".into(),
            ));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy over the batch, probabilities clamped to
/// [1e-7, 1 - 1e-7] before the logs.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "probabilities and labels must have equal lengths".into(),
        ));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Gradients plus the forward quantities computed along the way.
#[derive(Debug)]
pub struct BackwardPass {
    pub grads: ModelParams,
    pub loss: f64,
    pub probs: Vec<f64>,
}

/// Computes ∂loss/∂θ for every tensor, including only the embedding rows
/// touched by the batch and the domain rows of present domains. The PAD
/// embedding row gradient is forced to zero.
pub fn backward(batch: &Batch, params: &ModelParams, config: &ModelConfig) -> Result<BackwardPass> {
    batch.validate()?;
    let n = batch.len() as f64;
    let mut grads = ModelParams::zeros(config);
    let mut probs = Vec::with_capacity(batch.len());

    for i in 0..batch.len() {
        let trace = crate::network::detailed_forward(
            &batch.sequences[i],
            batch.domains[i],
            params,
            config,
        )?;
        probs.push(trace.p_fake);
        accumulate_item(
            &trace,
            &batch.sequences[i],
            batch.domains[i],
            batch.labels[i],
            n,
            params,
            config,
            &mut grads,
        );
    }

    // PAD row never receives gradient through valid positions; pin anyway.
    for g in grads.embedding.data_mut()[PAD * config.embedding_dim..(PAD + 1) * config.embedding_dim]
        .iter_mut()
    {
        *g = 0.0;
    }

    if let Some(tensor) = grads.find_non_finite() {
        return Err(Error::NonFinite { tensor });
    }
    let loss = bce_loss(&probs, &batch.labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            tensor: "loss".into(),
        });
    }
    Ok(BackwardPass { grads, loss, probs })
}

#[allow(clippy::too_many_arguments)]
fn accumulate_item(
    trace: &DetailedTrace,
    seq: &TokenSequence,
    domain: usize,
    label: u8,
    n: f64,
    params: &ModelParams,
    config: &ModelConfig,
    grads: &mut ModelParams,
) {
    let d = config.embedding_dim;
    let p = trace.p_fake;

    // Softmax + BCE collapse: dL/dz_fake = (p - y)/n while the clamp is
    // inactive; a clamped probability contributes zero gradient.
    let dz_fake = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
        (p - label as f64) / n
    } else {
        0.0
    };
    let dz = [-dz_fake, dz_fake];

    // Head second layer.
    for (k, &dzk) in dz.iter().enumerate() {
        grads.head.b2[k] += dzk;
    }
    grads.head.w2.add_outer(&dz, &trace.head_hidden, 1.0);
    let dh = params.head.w2.matvec_transposed(&dz);
    // ReLU with subgradient 0 at exactly 0.
    let dpre: Vec<f64> = dh
        .iter()
        .zip(&trace.head_pre)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    for (k, &g) in dpre.iter().enumerate() {
        grads.head.b1[k] += g;
    }
    grads.head.w1.add_outer(&dpre, &trace.v, 1.0);
    let dv = params.head.w1.matvec_transposed(&dpre);

    // Aggregation: v = Σ a_i r_i.
    let t_experts = config.num_experts;
    let mut da = vec![0.0; t_experts];
    for (i, e) in trace.experts.iter().enumerate() {
        da[i] = dot(&dv, &e.r);
    }

    // Gate softmax Jacobian.
    let inner: f64 = da.iter().zip(&trace.a).map(|(g, a)| g * a).sum();
    let dlogits: Vec<f64> = trace
        .a
        .iter()
        .zip(&da)
        .map(|(&a, &g)| a * (g - inner))
        .collect();
    for (k, &g) in dlogits.iter().enumerate() {
        grads.gate.b2[k] += g;
    }
    grads.gate.w2.add_outer(&dlogits, &trace.gate_hidden, 1.0);
    let dgh = params.gate.w2.matvec_transposed(&dlogits);
    let dgpre: Vec<f64> = dgh
        .iter()
        .zip(&trace.gate_pre)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    for (k, &g) in dgpre.iter().enumerate() {
        grads.gate.b1[k] += g;
    }
    grads.gate.w1.add_outer(&dgpre, &trace.gate_input, 1.0);
    let dgate_input = params.gate.w1.matvec_transposed(&dgpre);
    let (de_d, de_s) = dgate_input.split_at(config.domain_dim);

    // Domain embedding of the present domain.
    for (c, &g) in de_d.iter().enumerate() {
        grads.domain_table.add_at(domain, c, g);
    }

    // Word-embedding rows collect contributions from the experts and the
    // attention pooler through dW.
    let mut dw = Mat::zeros(config.max_len, d);

    // Experts: gradient flows through the picked window of each filter when
    // its pre-activation is positive.
    for (i, etrace) in trace.experts.iter().enumerate() {
        let a_i = trace.a[i];
        let mut out_idx = 0;
        for (b, bank) in params.experts[i].banks.iter().enumerate() {
            let k = bank.kernel;
            for f in 0..bank.weights.rows() {
                let dr = a_i * dv[out_idx];
                if let Some(pick) = &etrace.picks[b][f] {
                    if pick.pre_activation > 0.0 && dr != 0.0 {
                        let t0 = pick.position;
                        grads.experts[i].banks[b].bias[f] += dr;
                        let fw = bank.weights.row(f);
                        let gw = grads.experts[i].banks[b].weights.row_mut(f);
                        for u in 0..k {
                            let wrow = trace.w.row(t0 + u);
                            for c in 0..d {
                                gw[u * d + c] += dr * wrow[c];
                                dw.add_at(t0 + u, c, dr * fw[u * d + c]);
                            }
                        }
                    }
                }
                out_idx += 1;
            }
        }
    }

    // Attention pooling: e_s = Σ α_t W_t with α = softmax(q · W_t).
    let dalpha: Vec<f64> = trace
        .alpha
        .iter()
        .map(|&(t, _)| dot(de_s, trace.w.row(t)))
        .collect();
    let inner_a: f64 = trace
        .alpha
        .iter()
        .zip(&dalpha)
        .map(|(&(_, a), &g)| a * g)
        .sum();
    for (&(t, alpha_t), &dalpha_t) in trace.alpha.iter().zip(&dalpha) {
        let dscore = alpha_t * (dalpha_t - inner_a);
        let wrow = trace.w.row(t);
        for c in 0..d {
            grads.attn_query[c] += dscore * wrow[c];
            dw.add_at(t, c, dscore * params.attn_query[c] + alpha_t * de_s[c]);
        }
    }

    // Scatter dW into the embedding rows used by this sequence.
    for (t, &id) in seq.ids.iter().enumerate() {
        let row = dw.row(t);
        if row.iter().all(|&x| x == 0.0) {
            continue;
        }
        let dst = &mut grads.embedding.data_mut()[id * d..(id + 1) * d];
        for (gd, &g) in dst.iter_mut().zip(row) {
            *gd += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelParams;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embedding_dim: 3,
            num_domains: 3,
            domain_dim: 2,
            num_experts: 2,
            kernel_sizes: vec![2],
            filters_per_kernel: 2,
            gate_hidden: 3,
            head_hidden: 4,
            max_len: 6,
        }
    }

    fn tiny_batch() -> Batch {
        Batch {
            sequences: vec![
                TokenSequence {
                    ids: vec![1, 4, 5, 2, 0, 0],
                    mask: vec![1, 1, 1, 1, 0, 0],
                },
                TokenSequence {
                    ids: vec![1, 6, 7, 4, 2, 0],
                    mask: vec![1, 1, 1, 1, 1, 0],
                },
            ],
            domains: vec![0, 1],
            labels: vec![1, 0],
        }
    }

    #[test]
    fn bce_closed_forms() {
        assert!(bce_loss(&[1.0 - 1e-7], &[1]).unwrap() < 1e-6);
        let l = bce_loss(&[0.5], &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l2 = bce_loss(&[0.9, 0.2], &[1, 0]).unwrap();
        let want = (-(0.9f64.ln()) - (0.8f64.ln())) / 2.0;
        assert!((l2 - want).abs() < 1e-12);
        assert!((l2 - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_empty_batch() {
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn bce_loss_is_non_negative() {
        for p in [1e-9, 0.1, 0.5, 0.9, 1.0 - 1e-9] {
            for y in [0u8, 1] {
                assert!(bce_loss(&[p], &[y]).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn head_output_bias_gradient_equals_softmax_bce_identity() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let batch = tiny_batch();
        let pass = backward(&batch, &params, &config).unwrap();
        // dL/db2 = mean over items of (p - y) on the fake logit and its
        // negation on the real logit.
        let want: f64 = pass
            .probs
            .iter()
            .zip(&batch.labels)
            .map(|(&p, &y)| (p - y as f64) / batch.len() as f64)
            .sum();
        assert!((pass.grads.head.b2[1] - want).abs() < 1e-12);
        assert!((pass.grads.head.b2[0] + want).abs() < 1e-12);
    }

    #[test]
    fn absent_domain_rows_have_zero_gradient() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let batch = tiny_batch(); // domains 0 and 1; domain 2 absent
        let pass = backward(&batch, &params, &config).unwrap();
        assert!(pass.grads.domain_table.row(2).iter().all(|&g| g == 0.0));
        assert!(pass.grads.domain_table.row(0).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn pad_embedding_row_gradient_is_exactly_zero() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let pass = backward(&tiny_batch(), &params, &config).unwrap();
        assert!(pass.grads.embedding.row(PAD).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unused_vocabulary_rows_have_zero_gradient() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let pass = backward(&tiny_batch(), &params, &config).unwrap();
        // Token id 3 (UNK) is not used by the tiny batch.
        assert!(pass.grads.embedding.row(3).iter().all(|&g| g == 0.0));
        assert!(pass.grads.embedding.row(4).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gate_logit_shift_leaves_loss_unchanged() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11).unwrap();
        let batch = tiny_batch();
        let base = backward(&batch, &params, &config).unwrap();
        let mut shifted = params.clone();
        for b in shifted.gate.b2.iter_mut() {
            *b += 3.7;
        }
        let moved = backward(&batch, &shifted, &config).unwrap();
        assert!((base.loss - moved.loss).abs() < 1e-12);
        for (p, q) in base.probs.iter().zip(&moved.probs) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
