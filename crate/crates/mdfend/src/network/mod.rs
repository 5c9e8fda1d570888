//! The multi-domain detection network: mask-attention sentence pooling, a
//! mixture of convolutional expert encoders, a domain-conditioned gate over
//! experts, and a two-logit classification head.

mod forward;

pub use forward::{
    aggregate, classify, expert_forward, gate_forward, mask_attention_pool, model_forward,
    DetailedTrace, ExpertTrace, ForwardTrace, GateWeights, PoolPick,
};
pub(crate) use forward::detailed_forward;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::textpipe::EmbeddingTable;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Word-embedding width d.
    pub embedding_dim: usize,
    /// Number of domains K.
    pub num_domains: usize,
    /// Domain-embedding width.
    pub domain_dim: usize,
    /// Number of experts T.
    pub num_experts: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub gate_hidden: usize,
    pub head_hidden: usize,
    pub max_len: usize,
}

impl ModelConfig {
    /// Expert output width: one max-pooled value per filter per kernel size.
    pub fn expert_dim(&self) -> usize {
        self.kernel_sizes.len() * self.filters_per_kernel
    }

    pub fn gate_input_dim(&self) -> usize {
        self.domain_dim + self.embedding_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts < 1 {
            return Err(Error::InvalidArgument("num_experts must be >= 1".into()));
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one kernel size is required".into(),
            ));
        }
        for &k in &self.kernel_sizes {
            if k < 1 || k > self.max_len.saturating_sub(2) {
                return Err(Error::InvalidArgument(format!(
                    "kernel size {k} must be in 1..={}",
                    self.max_len.saturating_sub(2)
                )));
            }
        }
        let widths = [
            self.vocab_size,
            self.embedding_dim,
            self.num_domains,
            self.domain_dim,
            self.filters_per_kernel,
            self.gate_hidden,
            self.head_hidden,
        ];
        if widths.iter().any(|&w| w < 1) {
            return Err(Error::InvalidArgument(
                "all model dimensions must be >= 1".into(),
            ));
        }
        if self.max_len < 3 {
            return Err(Error::InvalidArgument("max_len must be >= 3".into()));
        }
        if self.vocab_size < 4 {
            return Err(Error::InvalidArgument(
                "vocab_size must cover the reserved ids".into(),
            ));
        }
        Ok(())
    }

    /// Paper-scale defaults; vocabulary size and domain count come from the
    /// data.
    pub fn standard(vocab_size: usize, num_domains: usize) -> Self {
        ModelConfig {
            vocab_size,
            embedding_dim: 32,
            num_domains,
            domain_dim: 32,
            num_experts: 5,
            kernel_sizes: vec![2, 3, 4],
            filters_per_kernel: 64,
            gate_hidden: 64,
            head_hidden: 384,
            max_len: 170,
        }
    }
}

/// One bank of convolution filters sharing a kernel size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBank {
    pub kernel: usize,
    /// filters × (kernel · d); row f holds filter f flattened position-major.
    pub weights: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub banks: Vec<ConvBank>,
}

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embedding: EmbeddingTable,
    /// K × d_dom; row k is the domain embedding of domain k.
    pub domain_table: Mat,
    /// Attention query of the sentence pooler, width d.
    pub attn_query: Vec<f64>,
    pub experts: Vec<ExpertParams>,
    pub gate: TwoLayer,
    pub head: TwoLayer,
}

fn uniform_fan_in(mat: &mut Mat, fan_in: usize, rng: &mut ChaCha20Rng) {
    let bound = (1.0 / fan_in as f64).sqrt();
    for v in mat.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

impl ModelParams {
    /// Seeded initialization: affine weights and embedding rows
    /// uniform(±√(1/fan_in)), biases zero, domain rows normal(0, 0.02),
    /// PAD row zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.embedding_dim;

        let embedding = EmbeddingTable::random(config.vocab_size, d, &mut rng);

        let normal = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut domain_table = Mat::zeros(config.num_domains, config.domain_dim);
        for v in domain_table.data_mut() {
            *v = normal.sample(&mut rng);
        }

        let qbound = (1.0 / d as f64).sqrt();
        let attn_query: Vec<f64> = (0..d).map(|_| rng.random_range(-qbound..qbound)).collect();

        let mut experts = Vec::with_capacity(config.num_experts);
        for _ in 0..config.num_experts {
            let mut banks = Vec::with_capacity(config.kernel_sizes.len());
            for &k in &config.kernel_sizes {
                let mut weights = Mat::zeros(config.filters_per_kernel, k * d);
                uniform_fan_in(&mut weights, k * d, &mut rng);
                banks.push(ConvBank {
                    kernel: k,
                    weights,
                    bias: vec![0.0; config.filters_per_kernel],
                });
            }
            experts.push(ExpertParams { banks });
        }

        let gate_in = config.gate_input_dim();
        let mut gate_w1 = Mat::zeros(config.gate_hidden, gate_in);
        uniform_fan_in(&mut gate_w1, gate_in, &mut rng);
        let mut gate_w2 = Mat::zeros(config.num_experts, config.gate_hidden);
        uniform_fan_in(&mut gate_w2, config.gate_hidden, &mut rng);
        let gate = TwoLayer {
            w1: gate_w1,
            b1: vec![0.0; config.gate_hidden],
            w2: gate_w2,
            b2: vec![0.0; config.num_experts],
        };

        let mut head_w1 = Mat::zeros(config.head_hidden, config.expert_dim());
        uniform_fan_in(&mut head_w1, config.expert_dim(), &mut rng);
        let mut head_w2 = Mat::zeros(2, config.head_hidden);
        uniform_fan_in(&mut head_w2, config.head_hidden, &mut rng);
        let head = TwoLayer {
            w1: head_w1,
            b1: vec![0.0; config.head_hidden],
            w2: head_w2,
            b2: vec![0.0; 2],
        };

        Ok(ModelParams {
            embedding,
            domain_table,
            attn_query,
            experts,
            gate,
            head,
        })
    }

    /// All-zero tensors with the shapes implied by the config (gradient and
    /// moment buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.embedding_dim;
        ModelParams {
            embedding: EmbeddingTable::from_mat(Mat::zeros(config.vocab_size, d)),
            domain_table: Mat::zeros(config.num_domains, config.domain_dim),
            attn_query: vec![0.0; d],
            experts: (0..config.num_experts)
                .map(|_| ExpertParams {
                    banks: config
                        .kernel_sizes
                        .iter()
                        .map(|&k| ConvBank {
                            kernel: k,
                            weights: Mat::zeros(config.filters_per_kernel, k * d),
                            bias: vec![0.0; config.filters_per_kernel],
                        })
                        .collect(),
                })
                .collect(),
            gate: TwoLayer {
                w1: Mat::zeros(config.gate_hidden, config.gate_input_dim()),
                b1: vec![0.0; config.gate_hidden],
                w2: Mat::zeros(config.num_experts, config.gate_hidden),
                b2: vec![0.0; config.num_experts],
            },
            head: TwoLayer {
                w1: Mat::zeros(config.head_hidden, config.expert_dim()),
                b1: vec![0.0; config.head_hidden],
                w2: Mat::zeros(2, config.head_hidden),
                b2: vec![0.0; 2],
            },
        }
    }

    /// Named views over every tensor, in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out: Vec<(String, &Vec<f64>)> = vec![
            ("embedding".into(), self.embedding.mat().data_vec()),
            ("domain_table".into(), self.domain_table.data_vec()),
            ("attn_query".into(), &self.attn_query),
        ];
        for (i, e) in self.experts.iter().enumerate() {
            for bank in &e.banks {
                out.push((
                    format!("expert_{i}.k{}.weights", bank.kernel),
                    bank.weights.data_vec(),
                ));
                out.push((format!("expert_{i}.k{}.bias", bank.kernel), &bank.bias));
            }
        }
        out.push(("gate.w1".into(), self.gate.w1.data_vec()));
        out.push(("gate.b1".into(), &self.gate.b1));
        out.push(("gate.w2".into(), self.gate.w2.data_vec()));
        out.push(("gate.b2".into(), &self.gate.b2));
        out.push(("head.w1".into(), self.head.w1.data_vec()));
        out.push(("head.b1".into(), &self.head.b1));
        out.push(("head.w2".into(), self.head.w2.data_vec()));
        out.push(("head.b2".into(), &self.head.b2));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors); identical order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = vec![
            ("embedding".into(), self.embedding.data_mut()),
            ("domain_table".into(), self.domain_table.data_mut()),
            ("attn_query".into(), &mut self.attn_query),
        ];
        for (i, e) in self.experts.iter_mut().enumerate() {
            for bank in &mut e.banks {
                out.push((
                    format!("expert_{i}.k{}.weights", bank.kernel),
                    bank.weights.data_mut(),
                ));
                out.push((format!("expert_{i}.k{}.bias", bank.kernel), &mut bank.bias));
            }
        }
        out.push(("gate.w1".into(), self.gate.w1.data_mut()));
        out.push(("gate.b1".into(), &mut self.gate.b1));
        out.push(("gate.w2".into(), self.gate.w2.data_mut()));
        out.push(("gate.b2".into(), &mut self.gate.b2));
        out.push(("head.w1".into(), self.head.w1.data_mut()));
        out.push(("head.b1".into(), &mut self.head.b1));
        out.push(("head.w2".into(), self.head.w2.data_mut()));
        out.push(("head.b2".into(), &mut self.head.b2));
        out
    }

    /// First non-finite tensor entry, by name.
    pub fn find_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, data)| data.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}
