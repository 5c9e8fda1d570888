//! Confusion statistics, F1 scores, per-domain evaluation, and report
//! rendering.

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainRegistry, NewsItem};
use crate::error::{Error, Result};
use crate::network::{model_forward, ModelConfig, ModelParams};
use crate::textpipe::{encode, tokenize, Vocabulary};

/// Binary confusion counts with fake (= 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "confusion: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn class_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // Class absent from both predictions and labels.
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 of the fake and real classes.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    let c = confusion(preds, labels)?;
    let f1_fake = class_f1(c.tp, c.fp, c.fn_);
    let f1_real = class_f1(c.tn, c.fn_, c.fp);
    Ok(0.5 * (f1_fake + f1_real))
}

/// F1 of the fake class only.
pub fn positive_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    let c = confusion(preds, labels)?;
    Ok(class_f1(c.tp, c.fp, c.fn_))
}

/// Which F1 a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum F1Variant {
    Macro,
    Positive,
}

impl F1Variant {
    pub fn score(&self, preds: &[u8], labels: &[u8]) -> Result<f64> {
        match self {
            F1Variant::Macro => macro_f1(preds, labels),
            F1Variant::Positive => positive_f1(preds, labels),
        }
    }
}

impl std::str::FromStr for F1Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(F1Variant::Macro),
            "positive" => Ok(F1Variant::Positive),
            other => Err(Error::InvalidArgument(format!(
                "unknown f1 variant {other:?} (expected macro or positive)"
            ))),
        }
    }
}

/// Per-domain and pooled F1 table. The overall column is computed over all
/// test items pooled, not averaged across domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub threshold: f64,
    pub variant: F1Variant,
    pub domains: Vec<String>,
    /// `None` marks a domain absent from the test set.
    pub per_domain: Vec<Option<f64>>,
    /// (real, fake) counts per domain.
    pub counts: Vec<(usize, usize)>,
    pub overall: f64,
    pub total_items: usize,
}

/// Scores a model over a test set with the decision rule
/// p_fake ≥ threshold ⇒ predict fake.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    items: &[NewsItem],
    registry: &DomainRegistry,
    threshold: f64,
    variant: F1Variant,
    model_name: &str,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut preds = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        let seq = encode(&tokenize(&item.content), vocab, config.max_len)?;
        let trace = model_forward(&seq, item.domain, params, config)?;
        preds.push(if trace.p_fake >= threshold { 1u8 } else { 0u8 });
        labels.push(item.label);
    }

    let k = registry.len();
    let mut per_domain = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    for d in 0..k {
        let idx: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.domain == d)
            .map(|(i, _)| i)
            .collect();
        let real = idx.iter().filter(|&&i| items[i].label == 0).count();
        counts.push((real, idx.len() - real));
        if idx.is_empty() {
            per_domain.push(None);
        } else {
            let dp: Vec<u8> = idx.iter().map(|&i| preds[i]).collect();
            let dl: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            per_domain.push(Some(variant.score(&dp, &dl)?));
        }
    }
    let overall = variant.score(&preds, &labels)?;
    Ok(EvalReport {
        model: model_name.to_string(),
        threshold,
        variant,
        domains: registry.names().to_vec(),
        per_domain,
        counts,
        overall,
        total_items: items.len(),
    })
}

/// Plain-text table: one row per model, one column per domain plus "All",
/// four decimal places. Absent domains render as "-".
pub fn render_report_text(report: &EvalReport) -> String {
    let mut widths: Vec<usize> = report.domains.iter().map(|d| d.len().max(6)).collect();
    widths.push(6); // "All"
    let model_w = report.model.len().max("model".len());
    let mut out = format!("{:<model_w$}", "model");
    for (d, w) in report.domains.iter().zip(&widths) {
        out.push_str(&format!("  {d:>w$}"));
    }
    out.push_str(&format!("  {:>6}\n", "All"));
    out.push_str(&format!("{:<model_w$}", report.model));
    for (f1, w) in report.per_domain.iter().zip(&widths) {
        match f1 {
            Some(v) => out.push_str(&format!("  {v:>w$.4}")),
            None => out.push_str(&format!("  {:>w$}", "-")),
        }
    }
    out.push_str(&format!("  {:>6.4}\n", report.overall));
    out
}

/// CSV twin: header `model,<domain names...>,all`; absent cells are empty.
pub fn render_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("model");
    for d in &report.domains {
        out.push(',');
        out.push_str(d);
    }
    out.push_str(",all\n");
    out.push_str(&report.model);
    for f1 in &report.per_domain {
        out.push(',');
        if let Some(v) = f1 {
            out.push_str(&format!("{v:.4}"));
        }
    }
    out.push_str(&format!(",{:.4}\n", report.overall));
    out
}

/// Parses a report CSV back into (model, per-domain, overall) rows.
pub fn parse_report_csv(csv: &str) -> Result<Vec<(String, Vec<Option<f64>>, f64)>> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty report csv".into()))?;
    let ncols = header.split(',').count();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(Error::InvalidArgument(format!(
                "report row has {} fields, header has {ncols}",
                fields.len()
            )));
        }
        let model = fields[0].to_string();
        let mut per_domain = Vec::new();
        for f in &fields[1..ncols - 1] {
            per_domain.push(if f.is_empty() {
                None
            } else {
                Some(f.parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("bad f1 value {f:?}: {e}"))
                })?)
            });
        }
        let overall = fields[ncols - 1]
            .parse::<f64>()
            .map_err(|e| Error::InvalidArgument(format!("bad overall value: {e}")))?;
        rows.push((model, per_domain, overall));
    }
    Ok(rows)
}
