//! Synthetic corpora for desk-scale experiments.
//!
//! `separable` draws each label's tokens from a disjoint half of the
//! vocabulary, identically in every domain. `domain_flip` negates the
//! token→label association in odd-numbered domains, so pooled content
//! carries no label signal while content plus domain identity determines
//! the label exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::NewsItem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Separable,
    DomainFlip,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(SynthMode::Separable),
            "domain_flip" => Ok(SynthMode::DomainFlip),
            other => Err(Error::InvalidArgument(format!(
                "unknown synth mode {other:?} (expected separable or domain_flip)"
            ))),
        }
    }
}

/// Synthetic token for vocabulary index `i`.
fn token(i: usize, width: usize) -> String {
    format!("w{i:0width$}")
}

/// Generates a deterministic labeled corpus. Labels alternate within each
/// domain so every domain is exactly balanced.
pub fn synth_corpus(
    num_domains: usize,
    items_per_domain: usize,
    vocab_size: usize,
    mode: SynthMode,
    seed: u64,
) -> Result<Vec<NewsItem>> {
    if num_domains < 1 {
        return Err(Error::InvalidArgument("num_domains must be >= 1".into()));
    }
    if items_per_domain < 2 || items_per_domain % 2 != 0 {
        return Err(Error::InvalidArgument(
            "items_per_domain must be even and >= 2".into(),
        ));
    }
    if vocab_size < 4 {
        return Err(Error::InvalidArgument("vocab_size must be >= 4".into()));
    }

    let width = vocab_size.saturating_sub(1).to_string().len();
    let half = vocab_size / 2;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(num_domains * items_per_domain);
    for domain in 0..num_domains {
        for idx in 0..items_per_domain {
            let label = (idx % 2) as u8;
            let flipped = match mode {
                SynthMode::Separable => label,
                SynthMode::DomainFlip => label ^ (domain % 2) as u8,
            };
            let (lo, hi) = if flipped == 0 {
                (0, half)
            } else {
                (half, vocab_size)
            };
            let len = rng.random_range(6..=12);
            let words: Vec<String> = (0..len)
                .map(|_| token(rng.random_range(lo..hi), width))
                .collect();
            items.push(NewsItem {
                id: format!("d{domain}-{idx:05}"),
                content: words.join(" "),
                domain,
                label,
                timestamp: None,
                comments: None,
            });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn same_seed_gives_identical_corpora() {
        let a = synth_corpus(2, 10, 8, SynthMode::DomainFlip, 42).unwrap();
        let b = synth_corpus(2, 10, 8, SynthMode::DomainFlip, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(2, 10, 8, SynthMode::DomainFlip, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(synth_corpus(0, 10, 8, SynthMode::Separable, 1).is_err());
        assert!(synth_corpus(1, 3, 8, SynthMode::Separable, 1).is_err());
        assert!(synth_corpus(1, 10, 3, SynthMode::Separable, 1).is_err());
    }

    #[test]
    fn separable_labels_follow_vocabulary_halves() {
        let items = synth_corpus(3, 10, 8, SynthMode::Separable, 7).unwrap();
        for item in &items {
            for word in item.content.split(' ') {
                let i: usize = word[1..].parse().unwrap();
                if item.label == 0 {
                    assert!(i < 4);
                } else {
                    assert!(i >= 4);
                }
            }
        }
    }

    #[test]
    fn domain_flip_pooled_token_label_frequencies_are_near_half() {
        // Count token-label co-occurrences over the pooled corpus: the
        // per-token fake-label frequency must be 0.5 up to sampling noise.
        let items = synth_corpus(2, 1000, 16, SynthMode::DomainFlip, 7).unwrap();
        let mut by_token: HashMap<&str, (usize, usize)> = HashMap::new();
        for item in &items {
            for word in item.content.split(' ') {
                let e = by_token.entry(word).or_default();
                if item.label == 1 {
                    e.1 += 1;
                } else {
                    e.0 += 1;
                }
            }
        }
        assert_eq!(by_token.len(), 16);
        for (tok, (real, fake)) in by_token {
            let frac = fake as f64 / (real + fake) as f64;
            assert!(
                (frac - 0.5).abs() < 0.05,
                "token {tok}: fake fraction {frac}"
            );
        }
    }

    #[test]
    fn labels_are_exactly_balanced_per_domain() {
        let items = synth_corpus(2, 50, 8, SynthMode::DomainFlip, 3).unwrap();
        for d in 0..2 {
            let fake = items
                .iter()
                .filter(|i| i.domain == d && i.label == 1)
                .count();
            assert_eq!(fake, 25);
        }
        assert_eq!(items.len(), 100);
    }
}
