//! Verbalizer construction: each class keyword is embedded, its `k` nearest
//! vocabulary tokens become the class's label words, and their similarities
//! are turned into aggregation weights.

mod similarity;
mod weights;
pub mod whitening;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensorio::{EmbeddingMatrix, TensorIoError, Vocabulary};

pub use similarity::{similarity, topk_neighbors, Neighbor, SimilarityMetric};
pub use weights::{compute_weights, WeightScheme};
pub use whitening::{fit_whitening, whiten, WhiteningTransform};

pub type Result<T, E = VerbalizerError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VerbalizerError {
    #[error("label {0:?} does not resolve to any vocabulary token")]
    UnresolvableLabel(String),
    #[error("cosine similarity is undefined for a zero vector")]
    DegenerateVector,
    #[error("invalid neighborhood size k={k} ({eligible} eligible tokens)")]
    InvalidK { k: usize, eligible: usize },
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("class {0:?} has no keywords")]
    EmptyKeywords(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("whitening needs at least 2 samples, got {n}")]
    InsufficientSample { n: usize },
    #[error(transparent)]
    Format(#[from] TensorIoError),
}

/// A class and the label names that describe it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    #[serde(alias = "name")]
    pub class_name: String,
    pub keywords: Vec<String>,
}

impl LabelSpec {
    pub fn new(class_name: impl Into<String>, keywords: &[&str]) -> Self {
        Self {
            class_name: class_name.into(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keywords.is_empty() {
            return Err(VerbalizerError::EmptyKeywords(self.class_name.clone()));
        }
        if let Some(k) = self.keywords.iter().find(|k| k.is_empty()) {
            return Err(VerbalizerError::UnresolvableLabel(k.clone()));
        }
        Ok(())
    }
}

/// Order in which a keyword string is matched against the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordResolution {
    /// `kw`, then `" " + kw`.
    #[default]
    ExactFirst,
    /// `" " + kw`, then `kw`. Matches how byte-level BPE vocabularies store
    /// word-initial tokens.
    LeadingSpaceFirst,
}

impl FromStr for KeywordResolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_first" => Ok(Self::ExactFirst),
            "leading_space_first" => Ok(Self::LeadingSpaceFirst),
            other => Err(format!("unknown keyword resolution {other:?}")),
        }
    }
}

impl fmt::Display for KeywordResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExactFirst => "exact_first",
            Self::LeadingSpaceFirst => "leading_space_first",
        })
    }
}

/// Exporter-provided subword splits for keywords that are not single tokens.
#[derive(Debug, Clone, Default)]
pub struct SubwordSplits(HashMap<String, Vec<u32>>);

#[derive(Deserialize)]
struct SplitLine {
    keyword: String,
    token_ids: Vec<u32>,
}

impl SubwordSplits {
    pub fn insert(&mut self, keyword: impl Into<String>, ids: Vec<u32>) {
        self.0.insert(keyword.into(), ids);
    }

    pub fn get(&self, keyword: &str) -> Option<&[u32]> {
        self.0.get(keyword).map(Vec::as_slice)
    }

    /// Reads `{"keyword","token_ids"}` JSON lines.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| TensorIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut splits = Self::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TensorIoError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SplitLine =
                serde_json::from_str(&line).map_err(|e| TensorIoError::MalformedLine {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            splits.insert(parsed.keyword, parsed.token_ids);
        }
        Ok(splits)
    }
}

/// The embedding space label words are searched in.
#[derive(Debug, Clone, Copy)]
pub struct LabelIndex<'a> {
    pub vocab: &'a Vocabulary,
    pub embeddings: &'a EmbeddingMatrix,
    pub splits: Option<&'a SubwordSplits>,
    pub resolution: KeywordResolution,
}

impl<'a> LabelIndex<'a> {
    pub fn new(vocab: &'a Vocabulary, embeddings: &'a EmbeddingMatrix) -> Self {
        Self {
            vocab,
            embeddings,
            splits: None,
            resolution: KeywordResolution::default(),
        }
    }

    pub fn with_splits(mut self, splits: &'a SubwordSplits) -> Self {
        self.splits = Some(splits);
        self
    }

    pub fn with_resolution(mut self, resolution: KeywordResolution) -> Self {
        self.resolution = resolution;
        self
    }

    /// Token ids a keyword stands for: a whole-token match if one exists,
    /// otherwise the sidecar subword split.
    pub fn resolve(&self, keyword: &str) -> Result<Vec<u32>> {
        if keyword.is_empty() {
            return Err(VerbalizerError::UnresolvableLabel(keyword.to_string()));
        }
        let spaced = format!(" {keyword}");
        let order: [&str; 2] = match self.resolution {
            KeywordResolution::ExactFirst => [keyword, &spaced],
            KeywordResolution::LeadingSpaceFirst => [&spaced, keyword],
        };
        if let Some(id) = order.iter().find_map(|t| self.vocab.lookup(t)) {
            return Ok(vec![id]);
        }
        match self.splits.and_then(|s| s.get(keyword)) {
            Some(ids) if !ids.is_empty() && ids.iter().all(|&id| (id as usize) < self.vocab.len()) => {
                Ok(ids.to_vec())
            }
            _ => Err(VerbalizerError::UnresolvableLabel(keyword.to_string())),
        }
    }

    /// Static embedding of a keyword; the mean of its subword rows when it
    /// spans several tokens.
    pub fn embed_label(&self, keyword: &str) -> Result<Vec<f64>> {
        let ids = self.resolve(keyword)?;
        let d = self.embeddings.dim();
        let mut acc = vec![0.0f64; d];
        for &id in &ids {
            for (a, &v) in acc.iter_mut().zip(self.embeddings.row(id as usize)) {
                *a += f64::from(v);
            }
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWord {
    pub token_id: u32,
    pub similarity: f64,
    pub weight: f64,
}

/// The `k` label words found for one keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerEntry {
    pub keyword: String,
    pub neighbors: Vec<LabelWord>,
}

impl VerbalizerEntry {
    pub fn from_neighbors(
        keyword: impl Into<String>,
        neighbors: &[Neighbor],
        scheme: WeightScheme,
    ) -> Result<Self> {
        let sims: Vec<f64> = neighbors.iter().map(|n| n.similarity).collect();
        let weights = compute_weights(&sims, scheme)?;
        Ok(Self {
            keyword: keyword.into(),
            neighbors: neighbors
                .iter()
                .zip(weights)
                .map(|(n, weight)| LabelWord {
                    token_id: n.token_id,
                    similarity: n.similarity,
                    weight,
                })
                .collect(),
        })
    }

    fn as_neighbors(&self) -> Vec<Neighbor> {
        self.neighbors
            .iter()
            .map(|w| Neighbor {
                token_id: w.token_id,
                similarity: w.similarity,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerbalizer {
    pub class_name: String,
    pub entries: Vec<VerbalizerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub k: usize,
    pub metric: SimilarityMetric,
    pub scheme: WeightScheme,
    pub classes: Vec<ClassVerbalizer>,
}

pub fn build_verbalizer(
    specs: &[LabelSpec],
    index: &LabelIndex<'_>,
    k: usize,
    metric: SimilarityMetric,
    scheme: WeightScheme,
) -> Result<Verbalizer> {
    if k == 0 {
        return Err(VerbalizerError::InvalidK { k, eligible: 0 });
    }
    let mut classes = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let entries = spec
            .keywords
            .iter()
            .map(|kw| {
                let label = index.embed_label(kw)?;
                let neighbors = topk_neighbors(&label, index.embeddings, index.vocab, k, metric)?;
                VerbalizerEntry::from_neighbors(kw.as_str(), &neighbors, scheme)
            })
            .collect::<Result<Vec<_>>>()?;
        classes.push(ClassVerbalizer {
            class_name: spec.class_name.clone(),
            entries,
        });
    }
    let verbalizer = Verbalizer {
        k,
        metric,
        scheme,
        classes,
    };
    let shared = verbalizer.shared_token_ids();
    if !shared.is_empty() {
        log::warn!("label words shared across classes: token ids {shared:?}");
    }
    Ok(verbalizer)
}

impl Verbalizer {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Token ids that appear in the label words of more than one class.
    pub fn shared_token_ids(&self) -> Vec<u32> {
        let mut owners: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for (c, class) in self.classes.iter().enumerate() {
            for entry in &class.entries {
                for w in &entry.neighbors {
                    owners.entry(w.token_id).or_default().insert(c);
                }
            }
        }
        owners
            .into_iter()
            .filter(|(_, cs)| cs.len() > 1)
            .map(|(id, _)| id)
            .collect()
    }

    /// Every token id referenced by any label word, sorted.
    pub fn token_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self
            .classes
            .iter()
            .flat_map(|c| &c.entries)
            .flat_map(|e| e.neighbors.iter().map(|w| w.token_id))
            .collect();
        ids.into_iter().collect()
    }

    /// The verbalizer a fresh build with a smaller `k` would produce: top-k
    /// lists are prefixes of each other, only the weights change.
    pub fn truncate(&self, k: usize) -> Result<Verbalizer> {
        if k == 0 || k > self.k {
            return Err(VerbalizerError::InvalidK {
                k,
                eligible: self.k,
            });
        }
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let entries = c
                    .entries
                    .iter()
                    .map(|e| {
                        VerbalizerEntry::from_neighbors(
                            e.keyword.as_str(),
                            &e.as_neighbors()[..k],
                            self.scheme,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ClassVerbalizer {
                    class_name: c.class_name.clone(),
                    entries,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Verbalizer {
            k,
            metric: self.metric,
            scheme: self.scheme,
            classes,
        })
    }

    pub fn dump(&self, vocab: &Vocabulary) -> VerbalizerDump {
        VerbalizerDump {
            k: self.k,
            metric: self.metric,
            weights: self.scheme,
            classes: self
                .classes
                .iter()
                .map(|c| ClassDump {
                    class_name: c.class_name.clone(),
                    keywords: c
                        .entries
                        .iter()
                        .map(|e| KeywordDump {
                            keyword: e.keyword.clone(),
                            neighbors: e
                                .neighbors
                                .iter()
                                .map(|w| {
                                    (
                                        vocab.token(w.token_id).unwrap_or_default().to_string(),
                                        w.token_id,
                                        w.similarity,
                                        w.weight,
                                    )
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Inspection listing: classes -> keywords -> `[token, id, similarity, weight]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerDump {
    pub k: usize,
    pub metric: SimilarityMetric,
    pub weights: WeightScheme,
    pub classes: Vec<ClassDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDump {
    pub class_name: String,
    pub keywords: Vec<KeywordDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordDump {
    pub keyword: String,
    pub neighbors: Vec<(String, u32, f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::VocabEntry;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| VocabEntry {
                    id: i as u32,
                    token: t.to_string(),
                    special: t.starts_with('<'),
                })
                .collect(),
        )
        .unwrap()
    }

    fn four_rows() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.8, 0.6],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn embed_label_cases() {
        let v = vocab(&[" sports", "sp", "orts", "x"]);
        let e = EmbeddingMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 0.0],
            vec![0.0, 4.0],
            vec![9.0, 9.0],
        ])
        .unwrap();
        let mut splits = SubwordSplits::default();
        splits.insert("sporty", vec![1, 2]);
        let idx = LabelIndex::new(&v, &e).with_splits(&splits);
        assert_eq!(idx.embed_label(" sports").unwrap(), vec![1.0, 2.0]);
        assert_eq!(idx.embed_label("sports").unwrap(), vec![1.0, 2.0]);
        assert_eq!(idx.embed_label("sporty").unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            idx.embed_label(""),
            Err(VerbalizerError::UnresolvableLabel(_))
        ));
        assert!(matches!(
            idx.embed_label("nothing"),
            Err(VerbalizerError::UnresolvableLabel(k)) if k == "nothing"
        ));
    }

    #[test]
    fn resolution_order() {
        let v = vocab(&["sports", " sports"]);
        let e = EmbeddingMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let exact = LabelIndex::new(&v, &e);
        assert_eq!(exact.resolve("sports").unwrap(), vec![0]);
        let spaced = exact.with_resolution(KeywordResolution::LeadingSpaceFirst);
        assert_eq!(spaced.resolve("sports").unwrap(), vec![1]);
        assert_eq!(spaced.resolve(" sports").unwrap(), vec![1]);
    }

    #[test]
    fn two_class_build_on_four_rows() {
        let v = vocab(&["a", "b", "c", "d"]);
        let e = four_rows();
        let idx = LabelIndex::new(&v, &e);
        let specs = [LabelSpec::new("A", &["a"]), LabelSpec::new("C", &["c"])];
        let verb = build_verbalizer(&specs, &idx, 2, SimilarityMetric::Cosine, WeightScheme::Softmax)
            .unwrap();
        assert_eq!(verb.num_classes(), 2);
        for class in &verb.classes {
            let entry = &class.entries[0];
            assert_eq!(entry.neighbors.len(), 2);
            let total: f64 = entry.neighbors.iter().map(|w| w.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let a = &verb.classes[0].entries[0].neighbors;
        assert_eq!((a[0].token_id, a[1].token_id), (0, 1));
        assert!((a[0].weight - 0.549834).abs() < 1e-5);
        // c=[0,1]: itself, then b=[0.8,0.6] at 0.6
        let c = &verb.classes[1].entries[0].neighbors;
        assert_eq!((c[0].token_id, c[1].token_id), (2, 1));
        assert_eq!(verb.shared_token_ids(), vec![1]);
    }

    #[test]
    fn multi_keyword_class_has_one_entry_per_keyword() {
        let v = vocab(&["river", "lake", "mountain", "x"]);
        let e = four_rows();
        let idx = LabelIndex::new(&v, &e);
        let specs = [LabelSpec::new("NaturalPlace", &["river", "lake", "mountain"])];
        let verb = build_verbalizer(&specs, &idx, 1, SimilarityMetric::Cosine, WeightScheme::Softmax)
            .unwrap();
        let kws: Vec<&str> = verb.classes[0]
            .entries
            .iter()
            .map(|e| e.keyword.as_str())
            .collect();
        assert_eq!(kws, ["river", "lake", "mountain"]);
    }

    #[test]
    fn invalid_k_and_empty_keywords() {
        let v = vocab(&["a", "b", "c", "d"]);
        let e = four_rows();
        let idx = LabelIndex::new(&v, &e);
        let specs = [LabelSpec::new("A", &["a"])];
        assert!(matches!(
            build_verbalizer(&specs, &idx, 0, SimilarityMetric::Cosine, WeightScheme::Softmax),
            Err(VerbalizerError::InvalidK { k: 0, .. })
        ));
        let empty = [LabelSpec::new("A", &[])];
        assert!(matches!(
            build_verbalizer(&empty, &idx, 1, SimilarityMetric::Cosine, WeightScheme::Softmax),
            Err(VerbalizerError::EmptyKeywords(_))
        ));
    }

    #[test]
    fn truncate_matches_rebuild() {
        let v = vocab(&["a", "b", "c", "d"]);
        let e = four_rows();
        let idx = LabelIndex::new(&v, &e);
        let specs = [LabelSpec::new("A", &["a"]), LabelSpec::new("B", &["b", "d"])];
        let full = build_verbalizer(&specs, &idx, 4, SimilarityMetric::Cosine, WeightScheme::Softmax)
            .unwrap();
        for k in 1..=4 {
            let fresh =
                build_verbalizer(&specs, &idx, k, SimilarityMetric::Cosine, WeightScheme::Softmax)
                    .unwrap();
            assert_eq!(full.truncate(k).unwrap(), fresh);
        }
        assert!(full.truncate(5).is_err());
    }

    #[test]
    fn dump_lists_token_text() {
        let v = vocab(&["a", " b", "c", "d"]);
        let e = four_rows();
        let idx = LabelIndex::new(&v, &e);
        let verb = build_verbalizer(
            &[LabelSpec::new("A", &["a"])],
            &idx,
            2,
            SimilarityMetric::Cosine,
            WeightScheme::Uniform,
        )
        .unwrap();
        let json = serde_json::to_value(verb.dump(&v)).unwrap();
        let first = &json["classes"][0]["keywords"][0]["neighbors"][1];
        assert_eq!(first[0], " b");
        assert_eq!(first[1], 1);
        assert_eq!(first[3], 0.5);
    }
}
