//! Stratified train/val/test splitting with largest-remainder rounding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::NewsItem;
use crate::error::{Error, Result};

/// Split configuration: three ratios summing to 1, stratified by
/// (domain, label).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidArgument(
                "split ratios must be non-negative".into(),
            ));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(SplitSpec { ratios, seed })
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Vec<NewsItem>,
    pub val: Vec<NewsItem>,
    pub test: Vec<NewsItem>,
    /// One entry per (domain, label) cell with fewer items than non-zero
    /// ratio slots.
    pub warnings: Vec<String>,
}

/// Largest-remainder apportionment of `n` items across three ratio slots.
/// Leftover units go to the largest fractional remainders, ties to the
/// earlier split.
pub fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut rems = [0.0f64; 3];
    let mut assigned = 0;
    for i in 0..3 {
        let quota = n as f64 * ratios[i];
        counts[i] = quota.floor() as usize;
        rems[i] = quota - quota.floor();
        assigned += counts[i];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].partial_cmp(&rems[a]).unwrap().then(a.cmp(&b)));
    let mut leftover = n - assigned;
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Per-cell counts after the minimum-coverage adjustment: any cell with at
/// least 3 items contributes at least one item to every split with a
/// non-zero ratio.
fn cell_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut counts = largest_remainder(n, ratios);
    if n >= 3 {
        for i in 0..3 {
            while ratios[i] > 0.0 && counts[i] == 0 {
                let donor = (0..3)
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                    .unwrap();
                if counts[donor] <= 1 {
                    break;
                }
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Partitions items into train/val/test. Per (domain, label) cell the items
/// are shuffled by a generator derived from the seed and the cell identity,
/// then cut by the rounded ratios. Deterministic for a fixed seed; outputs
/// are disjoint and union to the input.
pub fn stratified_split(items: &[NewsItem], spec: &SplitSpec) -> Result<SplitResult> {
    SplitSpec::new(spec.ratios, spec.seed)?;
    let nonzero_slots = spec.ratios.iter().filter(|r| **r > 0.0).count();

    // Group item indices per (domain, label) cell, preserving input order.
    let mut cells: Vec<((usize, u8), Vec<usize>)> = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        let key = (item.domain, item.label);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(idx),
            None => cells.push((key, vec![idx])),
        }
    }
    cells.sort_by_key(|(k, _)| *k);

    let mut result = SplitResult {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for ((domain, label), mut indices) in cells {
        if indices.len() < nonzero_slots {
            result.warnings.push(format!(
                "cell (domain={domain}, label={label}) has only {} item(s) for {} split(s); assigned to earliest splits",
                indices.len(),
                nonzero_slots
            ));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(domain as u64 * 2 + label as u64 + 1);
        indices.shuffle(&mut rng);
        let counts = cell_counts(indices.len(), spec.ratios);
        let (a, b) = (counts[0], counts[0] + counts[1]);
        for &i in &indices[..a] {
            result.train.push(items[i].clone());
        }
        for &i in &indices[a..b] {
            result.val.push(items[i].clone());
        }
        for &i in &indices[b..] {
            result.test.push(items[i].clone());
        }
    }
    Ok(result)
}
