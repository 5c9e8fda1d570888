//! One-pass near-duplicate clustering over character 3-gram Jaccard
//! similarity.

use std::collections::HashSet;

use super::NewsItem;

fn shingles(text: &str) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        // Too short for a 3-gram window: the whole string is the signature.
        return HashSet::from([text.to_string()]);
    }
    chars
        .windows(3)
        .map(|w| w.iter().collect::<String>())
        .collect()
}

/// Jaccard similarity of the character-3-gram sets of two texts.
pub fn char_trigram_jaccard(a: &str, b: &str) -> f64 {
    let sa = shingles(a);
    let sb = shingles(b);
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Single forward pass: each item joins the first existing cluster whose
/// representative (the cluster's first-seen item) has 3-gram Jaccard
/// similarity ≥ `threshold`, otherwise it founds a new cluster. Returns the
/// cluster representatives in original order.
pub fn dedup_one_pass(items: &[NewsItem], threshold: f64) -> Vec<NewsItem> {
    let mut reps: Vec<NewsItem> = Vec::new();
    let mut rep_shingles: Vec<HashSet<String>> = Vec::new();
    for item in items {
        let sh = shingles(&item.content);
        let joins = rep_shingles.iter().any(|rs| {
            let inter = sh.intersection(rs).count();
            let union = sh.len() + rs.len() - inter;
            let sim = if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            sim >= threshold
        });
        if !joins {
            rep_shingles.push(sh);
            reps.push(item.clone());
        }
    }
    reps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, content: &str) -> NewsItem {
        NewsItem {
            id: id.into(),
            content: content.into(),
            domain: 0,
            label: 0,
            timestamp: None,
            comments: None,
        }
    }

    #[test]
    fn exact_duplicate_is_dropped() {
        let items = vec![
            item("1", "abc news today"),
            item("2", "abc news today"),
            item("3", "zq"),
        ];
        let kept = dedup_one_pass(&items, 0.8);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].id, "1");
        assert_eq!(kept[1].id, "3");
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(dedup_one_pass(&[], 0.8).is_empty());
    }

    #[test]
    fn near_duplicates_collapse_per_brute_force_oracle() {
        // Items 4 and 7 (1-based) are near-duplicates of item 1; everything
        // else is pairwise dissimilar.
        let contents = [
            "the quick brown fox jumps over the lazy dog",
            "completely different headline about markets",
            "weather alert issued for the northern coast",
            "the quick brown fox jumps over the lazy dogs",
            "election results delayed by recount demands",
            "new vaccine study reports promising outcomes",
            "a quick brown fox jumps over the lazy dog",
            "sports team wins championship after overtime",
            "museum reopens with a restored dinosaur hall",
            "river levels drop after a long dry spell",
        ];
        let items: Vec<NewsItem> = contents
            .iter()
            .enumerate()
            .map(|(i, c)| item(&format!("{}", i + 1), c))
            .collect();
        let threshold = 0.8;

        // Brute-force all-pairs oracle: find which pairs cross the threshold.
        let mut over: Vec<(usize, usize)> = Vec::new();
        for i in 0..contents.len() {
            for j in (i + 1)..contents.len() {
                if char_trigram_jaccard(contents[i], contents[j]) >= threshold {
                    over.push((i + 1, j + 1));
                }
            }
        }
        // 4 and 7 cross with 1 (and with each other); nothing else does.
        assert_eq!(over, vec![(1, 4), (1, 7), (4, 7)]);

        let kept = dedup_one_pass(&items, threshold);
        assert_eq!(kept.len(), 8);
        let kept_ids: Vec<&str> = kept.iter().map(|i| i.id.as_str()).collect();
        assert!(!kept_ids.contains(&"4"));
        assert!(!kept_ids.contains(&"7"));
    }

    #[test]
    fn threshold_zero_keeps_exactly_one_item() {
        let items = vec![item("1", "aaa"), item("2", "bbb"), item("3", "ccc")];
        let kept = dedup_one_pass(&items, 0.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "1");
    }

    #[test]
    fn threshold_above_one_is_identity() {
        let items = vec![item("1", "aaa"), item("2", "aaa"), item("3", "bbb")];
        let kept = dedup_one_pass(&items, 1.01);
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn short_strings_use_whole_string_signature() {
        let items = vec![item("1", "zq"), item("2", "zq"), item("3", "xw")];
        let kept = dedup_one_pass(&items, 0.8);
        assert_eq!(kept.len(), 2);
    }
}
