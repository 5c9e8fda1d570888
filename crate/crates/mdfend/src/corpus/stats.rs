//! Per-domain real/fake/all counts with text and CSV rendering.

use super::{DomainRegistry, NewsItem};

/// Count table: one row per domain plus an overall row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub domains: Vec<String>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
}

impl CorpusStats {
    pub fn all(&self, i: usize) -> usize {
        self.real[i] + self.fake[i]
    }

    pub fn total_real(&self) -> usize {
        self.real.iter().sum()
    }

    pub fn total_fake(&self) -> usize {
        self.fake.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.total_real() + self.total_fake()
    }

    /// Plain-text aligned table with columns domain/real/fake/all.
    pub fn render_text(&self) -> String {
        let name_w = self
            .domains
            .iter()
            .map(|d| d.len())
            .chain(["domain".len(), "All".len()])
            .max()
            .unwrap();
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_w$}  {:>8}  {:>8}  {:>8}\n",
            "domain", "real", "fake", "all"
        ));
        for (i, d) in self.domains.iter().enumerate() {
            out.push_str(&format!(
                "{:<name_w$}  {:>8}  {:>8}  {:>8}\n",
                d,
                self.real[i],
                self.fake[i],
                self.all(i)
            ));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>8}  {:>8}  {:>8}\n",
            "All",
            self.total_real(),
            self.total_fake(),
            self.total()
        ));
        out
    }

    /// Machine-readable twin of the text table.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("domain,real,fake,all\n");
        for (i, d) in self.domains.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", d, self.real[i], self.fake[i], self.all(i)));
        }
        out.push_str(&format!(
            "All,{},{},{}\n",
            self.total_real(),
            self.total_fake(),
            self.total()
        ));
        out
    }
}

pub fn corpus_stats(items: &[NewsItem], registry: &DomainRegistry) -> CorpusStats {
    let k = registry.len();
    let mut real = vec![0usize; k];
    let mut fake = vec![0usize; k];
    for item in items {
        match item.label {
            0 => real[item.domain] += 1,
            _ => fake[item.domain] += 1,
        }
    }
    CorpusStats {
        domains: registry.names().to_vec(),
        real,
        fake,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{synth_corpus, SynthMode};
    use super::*;

    #[test]
    fn empty_corpus_is_all_zeros() {
        let reg = DomainRegistry::weibo21();
        let s = corpus_stats(&[], &reg);
        assert_eq!(s.total(), 0);
        assert!(s.real.iter().all(|&c| c == 0));
    }

    #[test]
    fn rows_sum_and_totals_are_consistent() {
        let reg = DomainRegistry::synthetic(2).unwrap();
        let items = synth_corpus(2, 10, 8, SynthMode::Separable, 1).unwrap();
        let s = corpus_stats(&items, &reg);
        for i in 0..2 {
            assert_eq!(s.real[i] + s.fake[i], s.all(i));
            assert_eq!(s.all(i), 10);
            assert_eq!(s.real[i], 5);
        }
        assert_eq!(s.total(), 20);
    }

    #[test]
    fn csv_has_domain_rows_plus_overall() {
        let reg = DomainRegistry::synthetic(2).unwrap();
        let items = synth_corpus(2, 4, 8, SynthMode::Separable, 1).unwrap();
        let s = corpus_stats(&items, &reg);
        let csv = s.render_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "domain,real,fake,all");
        assert_eq!(lines[3], "All,4,4,8");
    }
}
