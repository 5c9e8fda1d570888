//! Forward computation of the network, with the detailed trace needed by
//! backpropagation and gradient checking.

use serde::{Deserialize, Serialize};

use super::{ExpertParams, ModelConfig, ModelParams, TwoLayer};
use crate::error::{Error, Result};
use crate::mat::{dot, relu, softmax, Mat};
use crate::textpipe::{embed, TokenSequence};

/// Simplex weights over experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights(pub Vec<f64>);

impl GateWeights {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Intermediate values of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Sentence embedding, width d.
    pub e_s: Vec<f64>,
    pub a: GateWeights,
    /// Per-expert representations, each of width `expert_dim`.
    pub r: Vec<Vec<f64>>,
    /// Aggregated feature vector.
    pub v: Vec<f64>,
    /// Probability of the fake class.
    pub p_fake: f64,
}

/// Attention-weighted average over valid positions. Scores are the query
/// dotted with each row; positions with mask 0 receive exactly zero weight.
pub fn mask_attention_pool(w: &Mat, mask: &[u8], query: &[f64]) -> Result<Vec<f64>> {
    let (alpha, e_s) = attention_detail(w, mask, query)?;
    let _ = alpha;
    Ok(e_s)
}

fn attention_detail(w: &Mat, mask: &[u8], query: &[f64]) -> Result<(Vec<(usize, f64)>, Vec<f64>)> {
    let valid: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 1)
        .map(|(t, _)| t)
        .collect();
    if valid.is_empty() {
        return Err(Error::AllZeroMask);
    }
    let scores: Vec<f64> = valid.iter().map(|&t| dot(query, w.row(t))).collect();
    let weights = softmax(&scores);
    let mut e_s = vec![0.0; w.cols()];
    for (&t, &a) in valid.iter().zip(&weights) {
        for (o, x) in e_s.iter_mut().zip(w.row(t)) {
            *o += a * x;
        }
    }
    Ok((valid.into_iter().zip(weights).collect(), e_s))
}

/// Per-filter max-pool pick: window position, pre-activation there, and the
/// gap to the runner-up window (infinite when only one window is valid).
#[derive(Debug, Clone)]
pub struct PoolPick {
    pub position: usize,
    pub pre_activation: f64,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct ExpertTrace {
    /// picks[bank][filter]; `None` when the bank had no valid window.
    pub picks: Vec<Vec<Option<PoolPick>>>,
    pub r: Vec<f64>,
}

/// Convolutional encoder with max-over-time pooling. Windows overlapping a
/// masked position are excluded; a bank with no valid window contributes
/// zeros.
pub fn expert_forward(w: &Mat, mask: &[u8], expert: &ExpertParams) -> Vec<f64> {
    expert_detail(w, mask, expert).r
}

fn expert_detail(w: &Mat, mask: &[u8], expert: &ExpertParams) -> ExpertTrace {
    let d = w.cols();
    let len = mask.iter().filter(|&&m| m == 1).count();
    let mut picks = Vec::with_capacity(expert.banks.len());
    let mut r = Vec::new();
    for bank in &expert.banks {
        let k = bank.kernel;
        let nf = bank.weights.rows();
        // best/second-best pre-activation per filter over valid windows
        let mut best: Vec<Option<(usize, f64)>> = vec![None; nf];
        let mut second: Vec<f64> = vec![f64::NEG_INFINITY; nf];
        if len >= k {
            for t in 0..=(len - k) {
                for f in 0..nf {
                    let fw = bank.weights.row(f);
                    let mut z = bank.bias[f];
                    for u in 0..k {
                        z += dot(&fw[u * d..(u + 1) * d], w.row(t + u));
                    }
                    match best[f] {
                        Some((_, zb)) if z <= zb => {
                            if z > second[f] {
                                second[f] = z;
                            }
                        }
                        Some((_, zb)) => {
                            second[f] = zb;
                            best[f] = Some((t, z));
                        }
                        None => best[f] = Some((t, z)),
                    }
                }
            }
        }
        let mut bank_picks = Vec::with_capacity(nf);
        for f in 0..nf {
            match best[f] {
                Some((t, z)) => {
                    r.push(relu(z));
                    bank_picks.push(Some(PoolPick {
                        position: t,
                        pre_activation: z,
                        margin: z - second[f],
                    }));
                }
                None => {
                    r.push(0.0);
                    bank_picks.push(None);
                }
            }
        }
        picks.push(bank_picks);
    }
    ExpertTrace { picks, r }
}

/// Two-layer feed-forward gate producing simplex weights over experts.
pub fn gate_forward(e_d: &[f64], e_s: &[f64], gate: &TwoLayer) -> GateWeights {
    let mut input = Vec::with_capacity(e_d.len() + e_s.len());
    input.extend_from_slice(e_d);
    input.extend_from_slice(e_s);
    let pre: Vec<f64> = gate
        .w1
        .matvec(&input)
        .iter()
        .zip(&gate.b1)
        .map(|(x, b)| x + b)
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&x| relu(x)).collect();
    let logits: Vec<f64> = gate
        .w2
        .matvec(&hidden)
        .iter()
        .zip(&gate.b2)
        .map(|(x, b)| x + b)
        .collect();
    GateWeights(softmax(&logits))
}

/// Convex combination of expert representations.
pub fn aggregate(a: &GateWeights, r: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(a.0.len(), r.len(), "one weight per expert");
    let dim = r.first().map_or(0, |v| v.len());
    let mut v = vec![0.0; dim];
    for (w, ri) in a.0.iter().zip(r) {
        for (o, x) in v.iter_mut().zip(ri) {
            *o += w * x;
        }
    }
    v
}

/// Two-layer head with a two-logit softmax; returns the fake-class
/// probability.
pub fn classify(v: &[f64], head: &TwoLayer) -> f64 {
    let pre: Vec<f64> = head
        .w1
        .matvec(v)
        .iter()
        .zip(&head.b1)
        .map(|(x, b)| x + b)
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&x| relu(x)).collect();
    let logits: Vec<f64> = head
        .w2
        .matvec(&hidden)
        .iter()
        .zip(&head.b2)
        .map(|(x, b)| x + b)
        .collect();
    softmax(&logits)[1]
}

/// Full forward trace kept for backpropagation.
#[derive(Debug, Clone)]
pub struct DetailedTrace {
    pub w: Mat,
    /// (position, attention weight) for each valid position.
    pub alpha: Vec<(usize, f64)>,
    pub e_s: Vec<f64>,
    pub experts: Vec<ExpertTrace>,
    pub gate_input: Vec<f64>,
    pub gate_pre: Vec<f64>,
    pub gate_hidden: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub head_pre: Vec<f64>,
    pub head_hidden: Vec<f64>,
    pub p_fake: f64,
}

pub(crate) fn detailed_forward(
    seq: &TokenSequence,
    domain: usize,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<DetailedTrace> {
    if domain >= config.num_domains {
        return Err(Error::InvalidArgument(format!(
            "domain id {domain} out of range for {} domains",
            config.num_domains
        )));
    }
    let w = embed(seq, &params.embedding)?;
    let (alpha, e_s) = attention_detail(&w, &seq.mask, &params.attn_query)?;
    let experts: Vec<ExpertTrace> = params
        .experts
        .iter()
        .map(|e| expert_detail(&w, &seq.mask, e))
        .collect();

    let e_d = params.domain_table.row(domain);
    let mut gate_input = Vec::with_capacity(e_d.len() + e_s.len());
    gate_input.extend_from_slice(e_d);
    gate_input.extend_from_slice(&e_s);
    let gate_pre: Vec<f64> = params
        .gate
        .w1
        .matvec(&gate_input)
        .iter()
        .zip(&params.gate.b1)
        .map(|(x, b)| x + b)
        .collect();
    let gate_hidden: Vec<f64> = gate_pre.iter().map(|&x| relu(x)).collect();
    let gate_logits: Vec<f64> = params
        .gate
        .w2
        .matvec(&gate_hidden)
        .iter()
        .zip(&params.gate.b2)
        .map(|(x, b)| x + b)
        .collect();
    let a = softmax(&gate_logits);

    let r: Vec<&Vec<f64>> = experts.iter().map(|t| &t.r).collect();
    let dim = r.first().map_or(0, |v| v.len());
    let mut v = vec![0.0; dim];
    for (wi, ri) in a.iter().zip(&r) {
        for (o, x) in v.iter_mut().zip(ri.iter()) {
            *o += wi * x;
        }
    }

    let head_pre: Vec<f64> = params
        .head
        .w1
        .matvec(&v)
        .iter()
        .zip(&params.head.b1)
        .map(|(x, b)| x + b)
        .collect();
    let head_hidden: Vec<f64> = head_pre.iter().map(|&x| relu(x)).collect();
    let logits: Vec<f64> = params
        .head
        .w2
        .matvec(&head_hidden)
        .iter()
        .zip(&params.head.b2)
        .map(|(x, b)| x + b)
        .collect();
    let p_fake = softmax(&logits)[1];

    Ok(DetailedTrace {
        w,
        alpha,
        e_s,
        experts,
        gate_input,
        gate_pre,
        gate_hidden,
        a,
        v,
        head_pre,
        head_hidden,
        p_fake,
    })
}

/// Composes the whole network: embed → attention pool and experts → domain
/// gate → aggregate → classify.
pub fn model_forward(
    seq: &TokenSequence,
    domain: usize,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardTrace> {
    let t = detailed_forward(seq, domain, params, config)?;
    Ok(ForwardTrace {
        e_s: t.e_s,
        a: GateWeights(t.a),
        r: t.experts.into_iter().map(|e| e.r).collect(),
        v: t.v,
        p_fake: t.p_fake,
    })
}
