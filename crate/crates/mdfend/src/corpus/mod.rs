//! Corpus ingestion, validation, deduplication, splitting, statistics and
//! synthetic corpus generation.
//!
//! The on-disk corpus format is UTF-8 JSONL: one object per line with keys
//! `id` (string), `content` (string), `domain` (string name or integer id),
//! `label` (0 = real, 1 = fake), optional `timestamp` (integer seconds) and
//! optional `comments` (array of strings).

mod dedup;
mod split;
mod stats;
mod synth;

pub use dedup::{char_trigram_jaccard, dedup_one_pass};
pub use split::{stratified_split, SplitResult, SplitSpec};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{synth_corpus, SynthMode};

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of domain names with a bijective name → id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainRegistry {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    aliases: HashMap<String, usize>,
}

impl DomainRegistry {
    /// Registry over arbitrary names; ids follow the given order.
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument(
                "domain registry needs at least one domain".into(),
            ));
        }
        let mut ids = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate domain name {n:?}"
                )));
            }
        }
        Ok(DomainRegistry {
            names,
            ids,
            aliases: HashMap::new(),
        })
    }

    /// The nine Weibo21 domains. "Accidents" is accepted as an input alias
    /// for "Disasters".
    pub fn weibo21() -> Self {
        let names = [
            "Science",
            "Military",
            "Education",
            "Disasters",
            "Politics",
            "Health",
            "Finance",
            "Entertainment",
            "Society",
        ];
        let mut reg = DomainRegistry::new(names.iter().map(|s| s.to_string()).collect())
            .expect("static names are valid");
        reg.aliases.insert("Accidents".into(), 3);
        reg
    }

    /// Registry of `k` synthetic domains named `domain_0` .. `domain_{k-1}`.
    pub fn synthetic(k: usize) -> Result<Self> {
        DomainRegistry::new((0..k).map(|i| format!("domain_{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.ids
            .get(name)
            .or_else(|| self.aliases.get(name))
            .copied()
    }
}

/// One labeled news piece.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsItem {
    pub id: String,
    pub content: String,
    /// Domain id in the active registry.
    pub domain: usize,
    /// 0 = real, 1 = fake.
    pub label: u8,
    pub timestamp: Option<i64>,
    pub comments: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DomainField {
    Id(u64),
    Name(String),
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    content: String,
    domain: DomainField,
    label: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    timestamp: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    comments: Option<Vec<String>>,
}

/// Loads and validates a JSONL corpus, preserving file order.
pub fn load_corpus(path: &Path, registry: &DomainRegistry) -> Result<Vec<NewsItem>> {
    let file = std::fs::File::open(path)?;
    let display = path.display().to_string();
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: display.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
        let domain = match &rec.domain {
            DomainField::Id(id) => {
                let id = *id as usize;
                if id >= registry.len() {
                    return Err(Error::UnknownDomain {
                        path: display,
                        line: lineno,
                        value: id.to_string(),
                    });
                }
                id
            }
            DomainField::Name(name) => {
                registry.id_of(name).ok_or_else(|| Error::UnknownDomain {
                    path: display.clone(),
                    line: lineno,
                    value: name.clone(),
                })?
            }
        };
        if rec.content.trim().is_empty() {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                msg: "content is empty after trimming".into(),
            });
        }
        if rec.label > 1 {
            return Err(Error::MalformedRecord {
                path: display,
                line: lineno,
                msg: format!("label must be 0 or 1, got {}", rec.label),
            });
        }
        items.push(NewsItem {
            id: rec.id,
            content: rec.content,
            domain,
            label: rec.label,
            timestamp: rec.timestamp,
            comments: rec.comments,
        });
    }
    Ok(items)
}

/// Writes items as JSONL, emitting domains by name.
pub fn write_jsonl(path: &Path, items: &[NewsItem], registry: &DomainRegistry) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let rec = JsonRecord {
            id: item.id.clone(),
            content: item.content.clone(),
            domain: DomainField::Name(registry.name(item.domain).to_string()),
            label: item.label,
            timestamp: item.timestamp,
            comments: item.comments.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::MalformedRecord {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Builds a registry by scanning a JSONL file: string domains in first-seen
/// order, or integer domains as `domain_{id}` with k = max id + 1.
pub fn infer_registry(path: &Path) -> Result<DomainRegistry> {
    let file = std::fs::File::open(path)?;
    let display = path.display().to_string();
    let mut names: Vec<String> = Vec::new();
    let mut max_id: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: display.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
        match rec.domain {
            DomainField::Name(name) => {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
            DomainField::Id(id) => max_id = Some(max_id.unwrap_or(0).max(id as usize)),
        }
    }
    match (names.is_empty(), max_id) {
        (false, None) => DomainRegistry::new(names),
        (true, Some(max)) => DomainRegistry::synthetic(max + 1),
        (true, None) => Err(Error::InvalidArgument(format!(
            "{display}: cannot infer domains from an empty corpus"
        ))),
        (false, Some(_)) => Err(Error::InvalidArgument(format!(
            "{display}: corpus mixes string and integer domains"
        ))),
    }
}
