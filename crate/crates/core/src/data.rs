//! Multi-domain labeled datasets: loading, validation, similarity
//! filtering, split assignment, and source/target pool selection.
//!
//! Datasets arrive as JSON Lines, one object per line with keys `id`,
//! `text`, `embedding`, `reference_embedding`, `model_label`, `domain`,
//! and `split`. Label and domain strings become indices in order of
//! first appearance; unknown keys are ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, norm2};
use crate::rng::{fnv1a64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: Option<String>,
    pub embedding: Option<Vec<f64>>,
    pub reference_embedding: Option<Vec<f64>>,
    /// Class index into `Dataset::class_names`.
    pub model_label: usize,
    /// Domain index into `Dataset::domain_names`.
    pub domain: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    /// Shared embedding dimension; `None` until a vector is seen.
    pub embedding_dim: Option<usize>,
}

/// Per-domain split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train_n: 600,
            val_n: 200,
            test_n: 200,
        }
    }
}

/// Which domains train the model and which are reserved for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainSetting {
    pub sources: BTreeSet<usize>,
    pub targets: BTreeSet<usize>,
}

impl DomainSetting {
    pub fn new<I, J>(sources: I, targets: J) -> Self
    where
        I: IntoIterator<Item = usize>,
        J: IntoIterator<Item = usize>,
    {
        Self {
            sources: sources.into_iter().collect(),
            targets: targets.into_iter().collect(),
        }
    }

    pub fn validate(&self, domain_count: usize) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig(
                "domain setting needs at least one source domain".into(),
            ));
        }
        if let Some(&d) = self.sources.union(&self.targets).find(|&&d| d >= domain_count) {
            return Err(Error::InvalidConfig(format!(
                "domain index {d} out of range for {domain_count} domains"
            )));
        }
        if self.sources.intersection(&self.targets).next().is_some() {
            return Err(Error::InvalidConfig(
                "source and target domains overlap".into(),
            ));
        }
        Ok(())
    }

    pub fn is_upper_bound(&self) -> bool {
        self.targets.is_empty()
    }

    /// Human-readable label like `P+R->O`; upper-bound settings render
    /// as `P+R+O->(upper bound)`.
    pub fn label(&self, domain_names: &[String]) -> String {
        let name = |d: &usize| {
            domain_names
                .get(*d)
                .cloned()
                .unwrap_or_else(|| d.to_string())
        };
        let src: Vec<String> = self.sources.iter().map(name).collect();
        let tgt: Vec<String> = self.targets.iter().map(name).collect();
        if tgt.is_empty() {
            format!("{}->(upper bound)", src.join("+"))
        } else {
            format!("{}->{}", src.join("+"), tgt.join("+"))
        }
    }
}

impl fmt::Display for DomainSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let src: Vec<String> = self.sources.iter().map(|d| d.to_string()).collect();
        let tgt: Vec<String> = self.targets.iter().map(|d| d.to_string()).collect();
        write!(f, "{}->{}", src.join("+"), tgt.join("+"))
    }
}

/// All leave-domains-out settings: every nonempty proper source subset
/// with the complement as targets, ordered by source-set size then
/// lexicographically, followed by the all-source upper bound.
pub fn default_settings(domain_count: usize) -> Vec<DomainSetting> {
    let mut settings = Vec::new();
    let all: BTreeSet<usize> = (0..domain_count).collect();
    let mut subsets: Vec<BTreeSet<usize>> = Vec::new();
    for mask in 1u64..(1 << domain_count) {
        let set: BTreeSet<usize> = (0..domain_count).filter(|d| mask & (1 << d) != 0).collect();
        if set.len() < domain_count {
            subsets.push(set);
        }
    }
    subsets.sort_by_key(|s| (s.len(), s.iter().cloned().collect::<Vec<_>>()));
    for sources in subsets {
        let targets: BTreeSet<usize> = all.difference(&sources).cloned().collect();
        settings.push(DomainSetting { sources, targets });
    }
    settings.push(DomainSetting {
        sources: all,
        targets: BTreeSet::new(),
    });
    settings
}

/// Document pools for one domain setting. Target pools stay per-domain
/// for per-target reporting.
#[derive(Debug, Clone)]
pub struct DocumentPools {
    pub source_train: Vec<Document>,
    pub source_val: Vec<Document>,
    pub source_test: Vec<Document>,
    pub target_test: BTreeMap<usize, Vec<Document>>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    reference_embedding: Option<Vec<f64>>,
    model_label: String,
    domain: String,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    text: &'a Option<String>,
    embedding: &'a Option<Vec<f64>>,
    reference_embedding: &'a Option<Vec<f64>>,
    model_label: &'a str,
    domain: &'a str,
    split: &'a str,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn domain_count(&self) -> usize {
        self.domain_names.len()
    }

    pub fn domain_doc_indices(&self, domain: usize) -> Vec<usize> {
        self.documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.domain == domain)
            .map(|(i, _)| i)
            .collect()
    }

    /// Content hash of the split assignment, recorded in run manifests.
    pub fn split_hash(&self) -> u64 {
        let mut buf = String::new();
        for doc in &self.documents {
            buf.push_str(&doc.id);
            buf.push(':');
            buf.push_str(doc.split.as_str());
            buf.push('\n');
        }
        fnv1a64(buf.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if doc.model_label >= self.class_names.len() {
                return Err(Error::InvalidConfig(format!(
                    "document {}: label index {} out of range",
                    doc.id, doc.model_label
                )));
            }
            if doc.domain >= self.domain_names.len() {
                return Err(Error::InvalidConfig(format!(
                    "document {}: domain index {} out of range",
                    doc.id, doc.domain
                )));
            }
            if doc.text.is_none() && doc.embedding.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "document {}: needs text or an embedding",
                    doc.id
                )));
            }
            for vec in [&doc.embedding, &doc.reference_embedding].into_iter().flatten() {
                if vec.len() != self.embedding_dim.unwrap_or(vec.len()) {
                    return Err(Error::DimensionMismatch {
                        id: doc.id.clone(),
                        expected: self.embedding_dim.unwrap_or(0),
                        actual: vec.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Load a JSON Lines dataset. Label and domain names index in order of
/// first appearance; blank lines are skipped.
pub fn load_documents(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut dataset = Dataset::default();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut domain_index: HashMap<String, usize> = HashMap::new();
    let mut ids = HashSet::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !ids.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        if raw.text.is_none() && raw.embedding.is_none() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("document {}: needs text or an embedding", raw.id),
            });
        }
        for vec in [&raw.embedding, &raw.reference_embedding].into_iter().flatten() {
            match dataset.embedding_dim {
                None => dataset.embedding_dim = Some(vec.len()),
                Some(dim) if dim != vec.len() => {
                    return Err(Error::DimensionMismatch {
                        id: raw.id,
                        expected: dim,
                        actual: vec.len(),
                    });
                }
                _ => {}
            }
        }
        let split = match raw.split.as_deref() {
            None => Split::Unassigned,
            Some(s) => Split::parse(s).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("unknown split {s:?}"),
            })?,
        };
        let next_class = class_index.len();
        let model_label = *class_index.entry(raw.model_label.clone()).or_insert(next_class);
        if model_label == dataset.class_names.len() {
            dataset.class_names.push(raw.model_label);
        }
        let next_domain = domain_index.len();
        let domain = *domain_index.entry(raw.domain.clone()).or_insert(next_domain);
        if domain == dataset.domain_names.len() {
            dataset.domain_names.push(raw.domain);
        }
        dataset.documents.push(Document {
            id: raw.id,
            text: raw.text,
            embedding: raw.embedding,
            reference_embedding: raw.reference_embedding,
            model_label,
            domain,
            split,
        });
    }
    Ok(dataset)
}

/// Write a dataset back out as JSON Lines in the documented schema.
pub fn save_documents(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in &dataset.documents {
        let record = OutRecord {
            id: &doc.id,
            text: &doc.text,
            embedding: &doc.embedding,
            reference_embedding: &doc.reference_embedding,
            model_label: &dataset.class_names[doc.model_label],
            domain: &dataset.domain_names[doc.domain],
            split: doc.split.as_str(),
        };
        serde_json::to_writer(&mut file, &record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Result of the similarity filter; `passthrough_domains` flags domains
/// where the strict filter would have removed everything and the
/// original documents were kept instead.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    pub passthrough_domains: Vec<usize>,
}

/// Keep, per domain, only the documents whose cosine similarity between
/// `embedding` and `reference_embedding` is strictly above the domain
/// mean. Domains with at most one document pass through unchanged.
pub fn filter_by_similarity(dataset: &Dataset) -> Result<FilterOutcome> {
    for doc in &dataset.documents {
        if doc.embedding.is_none() || doc.reference_embedding.is_none() {
            return Err(Error::MissingEmbedding(doc.id.clone()));
        }
    }
    let mut keep = vec![false; dataset.documents.len()];
    let mut passthrough = Vec::new();
    for domain in 0..dataset.domain_count() {
        let indices = dataset.domain_doc_indices(domain);
        if indices.len() <= 1 {
            for &i in &indices {
                keep[i] = true;
            }
            continue;
        }
        let sims: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let doc = &dataset.documents[i];
                cosine(
                    doc.embedding.as_ref().unwrap(),
                    doc.reference_embedding.as_ref().unwrap(),
                )
            })
            .collect();
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        let retained: Vec<usize> = indices
            .iter()
            .zip(&sims)
            .filter(|(_, &s)| s > mean)
            .map(|(&i, _)| i)
            .collect();
        if retained.is_empty() {
            // Never silently destroy a domain.
            passthrough.push(domain);
            for &i in &indices {
                keep[i] = true;
            }
        } else {
            for &i in &retained {
                keep[i] = true;
            }
        }
    }
    let documents = dataset
        .documents
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(FilterOutcome {
        dataset: Dataset {
            documents,
            class_names: dataset.class_names.clone(),
            domain_names: dataset.domain_names.clone(),
            embedding_dim: dataset.embedding_dim,
        },
        passthrough_domains: passthrough,
    })
}

/// Shuffle each domain with one seeded Fisher-Yates stream (domains in
/// index order, documents in dataset order) and assign train/val/test
/// in order; leftovers become unassigned.
pub fn assign_splits(dataset: &Dataset, counts: &SplitCounts, seed: u64) -> Result<Dataset> {
    let mut out = dataset.clone();
    for doc in &mut out.documents {
        doc.split = Split::Unassigned;
    }
    let mut rng = SplitMix64::new(seed);
    for domain in 0..dataset.domain_count() {
        let mut indices = dataset.domain_doc_indices(domain);
        let requested = counts.train_n + counts.val_n + counts.test_n;
        if indices.len() < requested {
            return Err(Error::InsufficientDocuments {
                domain: dataset.domain_names[domain].clone(),
                requested,
                available: indices.len(),
            });
        }
        rng.shuffle(&mut indices);
        for (pos, &i) in indices.iter().enumerate() {
            out.documents[i].split = if pos < counts.train_n {
                Split::Train
            } else if pos < counts.train_n + counts.val_n {
                Split::Val
            } else if pos < requested {
                Split::Test
            } else {
                Split::Unassigned
            };
        }
    }
    Ok(out)
}

/// Build source train/val/test pools and per-domain target test pools
/// for one setting.
pub fn select_domains(dataset: &Dataset, setting: &DomainSetting) -> Result<DocumentPools> {
    setting.validate(dataset.domain_count())?;
    let mut pools = DocumentPools {
        source_train: Vec::new(),
        source_val: Vec::new(),
        source_test: Vec::new(),
        target_test: setting.targets.iter().map(|&d| (d, Vec::new())).collect(),
    };
    for doc in &dataset.documents {
        if setting.sources.contains(&doc.domain) {
            match doc.split {
                Split::Train => pools.source_train.push(doc.clone()),
                Split::Val => pools.source_val.push(doc.clone()),
                Split::Test => pools.source_test.push(doc.clone()),
                Split::Unassigned => {}
            }
        } else if setting.targets.contains(&doc.domain) && doc.split == Split::Test {
            pools.target_test.get_mut(&doc.domain).unwrap().push(doc.clone());
        }
    }
    if pools.source_train.is_empty() {
        return Err(Error::EmptyPool("source train".into()));
    }
    if pools.source_val.is_empty() {
        return Err(Error::EmptyPool("source validation".into()));
    }
    if pools.source_test.is_empty() {
        return Err(Error::EmptyPool("source test".into()));
    }
    for (&d, docs) in &pools.target_test {
        if docs.is_empty() {
            return Err(Error::EmptyPool(format!(
                "target test for domain {}",
                dataset.domain_names[d]
            )));
        }
    }
    Ok(pools)
}
