//! Central-difference verification of the analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::backward::{backward, bce_loss, Batch, PROB_CLAMP};
use crate::error::Result;
use crate::network::{detailed_forward, DetailedTrace, ModelConfig, ModelParams};
use crate::textpipe::{TokenSequence, CLS, SEP};

const STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-6;

/// Worst relative error found within one parameter group.
#[derive(Debug, Clone)]
pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<GradCheckGroup>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error <= self.tolerance)
    }

    /// One line per parameter group.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .groups
            .iter()
            .map(|g| g.name.len())
            .max()
            .unwrap_or(5)
            .max("group".len());
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>8}  {:>8}  status\n",
            "group", "max_rel_err", "checked", "skipped"
        ));
        for g in &self.groups {
            out.push_str(&format!(
                "{:<name_w$}  {:>12.3e}  {:>8}  {:>8}  {}\n",
                g.name,
                g.max_rel_error,
                g.checked,
                g.skipped,
                if g.max_rel_error <= self.tolerance {
                    "pass"
                } else {
                    "FAIL"
                }
            ));
        }
        out
    }
}

/// The built-in configuration for gradient checking: every dimension ≤ 8.
pub fn default_tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        embedding_dim: 4,
        num_domains: 2,
        domain_dim: 3,
        num_experts: 2,
        kernel_sizes: vec![2, 3],
        filters_per_kernel: 2,
        gate_hidden: 4,
        head_hidden: 5,
        max_len: 8,
    }
}

/// Deterministic probe batch: varying lengths, both domains and labels.
fn probe_batch(config: &ModelConfig, seed: u64) -> Batch {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let n = 4usize;
    let mut sequences = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let content_len = rng.random_range(2..=(config.max_len - 2));
        let mut ids = vec![CLS];
        for _ in 0..content_len {
            ids.push(rng.random_range(4..config.vocab_size));
        }
        ids.push(SEP);
        let valid = ids.len();
        ids.resize(config.max_len, 0);
        let mut mask = vec![1u8; valid];
        mask.resize(config.max_len, 0);
        sequences.push(TokenSequence { ids, mask });
        domains.push(i % config.num_domains);
        labels.push((i % 2) as u8);
    }
    Batch {
        sequences,
        domains,
        labels,
    }
}

/// Smallest distance to any non-differentiable point in the trace: ReLU
/// pre-activations, max-pool runner-up margins, and the loss clamp.
fn kink_distance(trace: &DetailedTrace) -> f64 {
    let mut min = f64::INFINITY;
    for &z in trace.gate_pre.iter().chain(&trace.head_pre) {
        min = min.min(z.abs());
    }
    for expert in &trace.experts {
        for bank in &expert.picks {
            for pick in bank.iter().flatten() {
                min = min.min(pick.pre_activation.abs());
                min = min.min(pick.margin);
            }
        }
    }
    let p = trace.p_fake;
    min = min.min((p - PROB_CLAMP).abs());
    min = min.min((1.0 - PROB_CLAMP - p).abs());
    min
}

fn loss_and_kink(batch: &Batch, params: &ModelParams, config: &ModelConfig) -> Result<(f64, f64)> {
    let mut probs = Vec::with_capacity(batch.len());
    let mut min_kink = f64::INFINITY;
    for i in 0..batch.len() {
        let trace = detailed_forward(&batch.sequences[i], batch.domains[i], params, config)?;
        min_kink = min_kink.min(kink_distance(&trace));
        probs.push(trace.p_fake);
    }
    Ok((bce_loss(&probs, &batch.labels)?, min_kink))
}

fn group_of(tensor_name: &str) -> String {
    tensor_name.split('.').next().unwrap_or(tensor_name).to_string()
}

/// Central differences against the analytic gradients on every coordinate,
/// reporting the max relative error |g_a − g_n| / max(1e-8, |g_a| + |g_n|)
/// per parameter group. Coordinates whose perturbed evaluations come within
/// 1e-6 of a ReLU kink, a pooling tie, or the loss clamp are skipped.
pub fn grad_check(config: &ModelConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let params = ModelParams::init(config, seed)?;
    let batch = probe_batch(config, seed);
    let analytic = backward(&batch, &params, config)?.grads;

    let tensor_names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut groups: Vec<GradCheckGroup> = Vec::new();
    let mut work = params.clone();

    for (ti, name) in tensor_names.iter().enumerate() {
        let group_name = group_of(name);
        if groups.last().map(|g| &g.name) != Some(&group_name) {
            groups.push(GradCheckGroup {
                name: group_name,
                max_rel_error: 0.0,
                checked: 0,
                skipped: 0,
            });
        }
        let group = groups.last_mut().unwrap();
        let len = params.tensors()[ti].1.len();
        for ci in 0..len {
            let orig = params.tensors()[ti].1[ci];
            work.tensors_mut()[ti].1[ci] = orig + STEP;
            let (loss_plus, kink_plus) = loss_and_kink(&batch, &work, config)?;
            work.tensors_mut()[ti].1[ci] = orig - STEP;
            let (loss_minus, kink_minus) = loss_and_kink(&batch, &work, config)?;
            work.tensors_mut()[ti].1[ci] = orig;

            if kink_plus < KINK_MARGIN || kink_minus < KINK_MARGIN {
                group.skipped += 1;
                continue;
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * STEP);
            let exact = analytic.tensors()[ti].1[ci];
            let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
            if rel > group.max_rel_error {
                group.max_rel_error = rel;
            }
            group.checked += 1;
        }
    }

    Ok(GradCheckReport {
        tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    #[test]
    fn full_tiny_model_passes_at_1e4() {
        let report = grad_check(&default_tiny_config(), 7, 1e-4).unwrap();
        assert!(report.passed(), "\n{}", report.render());
        // Every spec'd parameter group is present.
        let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
        for want in [
            "embedding",
            "domain_table",
            "attn_query",
            "expert_0",
            "expert_1",
            "gate",
            "head",
        ] {
            assert!(names.contains(&want), "missing group {want}");
        }
    }

    #[test]
    fn tolerance_zero_fails() {
        let report = grad_check(&default_tiny_config(), 7, 0.0).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn report_lists_every_group_by_name() {
        let report = grad_check(&default_tiny_config(), 7, 1e-4).unwrap();
        let rendered = report.render();
        for g in &report.groups {
            assert!(rendered.contains(&g.name));
        }
    }

    #[test]
    fn pad_row_gradient_is_reported_zero() {
        let config = default_tiny_config();
        let params = ModelParams::init(&config, 7).unwrap();
        let batch = probe_batch(&config, 7);
        let grads = backward(&batch, &params, &config).unwrap().grads;
        assert!(grads.embedding.row(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_head_case_matches_to_1e10() {
        // With zero hidden weights the head is linear in its second-layer
        // parameters: the analytic gradient is exact, so finite differences
        // agree to ~1e-10.
        let config = default_tiny_config();
        let mut params = ModelParams::init(&config, 3).unwrap();
        params.head.w1 = Mat::zeros(config.head_hidden, config.expert_dim());
        params.head.b1 = vec![0.4; config.head_hidden];
        let batch = probe_batch(&config, 3);
        let analytic = backward(&batch, &params, &config).unwrap().grads;

        let mut work = params.clone();
        // head.b2 is the second-to-last tensor.
        let ti = params.tensors().len() - 1;
        let name = params.tensors()[ti].0.clone();
        assert_eq!(name, "head.b2");
        for ci in 0..2 {
            let orig = params.tensors()[ti].1[ci];
            work.tensors_mut()[ti].1[ci] = orig + STEP;
            let (lp, _) = loss_and_kink(&batch, &work, &config).unwrap();
            work.tensors_mut()[ti].1[ci] = orig - STEP;
            let (lm, _) = loss_and_kink(&batch, &work, &config).unwrap();
            work.tensors_mut()[ti].1[ci] = orig;
            let numeric = (lp - lm) / (2.0 * STEP);
            let exact = analytic.tensors()[ti].1[ci];
            assert!(
                (exact - numeric).abs() < 1e-10,
                "coordinate {ci}: {exact} vs {numeric}"
            );
        }
    }
}
