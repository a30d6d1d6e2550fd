//! A tiny hand-built task used by the demo and the test suites: 10 tokens, 3
//! classes (one with three keywords) and 6 examples whose logits make
//! accuracy depend on `k` (a class-separating label word enters at rank 3).

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::tensorio::{
    write_dataset, write_logits_batch, write_tensor, write_vocab, DatasetRecord, EmbeddingMatrix,
    LogitsBatch, ManifestLine, Result, Tensor, VocabEntry, Vocabulary,
};
use crate::verbalizer::LabelSpec;

pub const MICRO_TEMPLATE: &str = "A {mask} news : {text} .";

pub struct Fixture {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub classes: Vec<LabelSpec>,
    pub records: Vec<DatasetRecord>,
    /// Mask-position logits per example id, in dataset order.
    pub logits: Vec<(String, Vec<f32>)>,
    pub template: &'static str,
}

const TOKENS: [(&str, bool); 10] = [
    ("<pad>", true),
    ("<mask>", true),
    (" sports", false),
    (" game", false),
    (" athletes", false),
    (" business", false),
    (" money", false),
    (" river", false),
    (" lake", false),
    (" mountain", false),
];

const EMBEDDINGS: [[f32; 4]; 10] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.9, 0.1, 0.0, 0.3],
    [0.7, 0.0, 0.1, 0.6],
    [0.0, 1.0, 0.0, 0.0],
    [0.1, 0.9, 0.0, 0.3],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.15, 0.9, 0.3],
    [0.1, 0.0, 0.8, 0.5],
];

const EXAMPLES: [(&str, &str, usize, [f32; 10]); 6] = [
    (
        "ex1",
        "The Warriors won the NBA championship 2022",
        0,
        [1.0, 2.0, 5.0, 4.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ),
    (
        "ex2",
        "Olympic athletes arrive in Paris",
        0,
        [0.0, 3.0, 0.0, 0.0, 9.0, 2.0, 2.0, 0.0, 0.0, 0.0],
    ),
    (
        "ex3",
        "Shares slide as the central bank raises rates",
        1,
        [0.0, 1.0, 1.0, 0.0, 0.0, 4.0, 5.0, 0.0, 0.0, 0.0],
    ),
    (
        "ex4",
        "Climbers reach the summit after a week on the ridge",
        2,
        [2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 6.0],
    ),
    (
        "ex5",
        "Sprinters break records at the national trials",
        0,
        [0.0, 0.0, 0.0, 0.0, 8.0, 3.0, 2.0, 1.0, 0.0, 0.0],
    ),
    (
        "ex6",
        "Floods swell the river past its banks",
        2,
        [0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 0.0],
    ),
];

/// The 10-token, 3-class, 6-example fixture.
pub fn micro() -> Fixture {
    build(0)
}

/// The micro fixture padded with `extra` filler tokens (embedding-orthogonal
/// to every class, logit 0), so that sweeps can go to larger `k`.
pub fn micro_padded(extra: usize) -> Fixture {
    build(extra)
}

fn build(extra: usize) -> Fixture {
    let mut entries: Vec<VocabEntry> = TOKENS
        .iter()
        .enumerate()
        .map(|(i, &(token, special))| VocabEntry {
            id: i as u32,
            token: token.to_string(),
            special,
        })
        .collect();
    let mut rows: Vec<Vec<f32>> = EMBEDDINGS.iter().map(|r| r.to_vec()).collect();
    for j in 0..extra {
        entries.push(VocabEntry {
            id: (TOKENS.len() + j) as u32,
            token: format!(" filler{j}"),
            special: false,
        });
        rows.push(vec![0.0, 0.0, 0.0, 1.0 + j as f32 / 64.0]);
    }
    let vocab = Vocabulary::from_entries(entries).expect("fixture vocabulary is valid");
    let embeddings = EmbeddingMatrix::from_rows(&rows).expect("fixture embeddings are valid");

    let classes = vec![
        LabelSpec::new("Sports", &["sports"]),
        LabelSpec::new("Business", &["business"]),
        LabelSpec::new("Nature", &["river", "lake", "mountain"]),
    ];
    let records = EXAMPLES
        .iter()
        .map(|&(id, text, label, _)| DatasetRecord::single(id, text, Some(label)))
        .collect();
    let logits = EXAMPLES
        .iter()
        .map(|(id, _, _, l)| {
            let mut row = l.to_vec();
            row.resize(TOKENS.len() + extra, 0.0);
            (id.to_string(), row)
        })
        .collect();
    Fixture {
        vocab,
        embeddings,
        classes,
        records,
        logits,
        template: MICRO_TEMPLATE,
    }
}

impl Fixture {
    /// The logits as an in-memory batch, as the file backend would load them.
    pub fn logits_batch(&self) -> LogitsBatch {
        let width = self.vocab.len();
        let data: Vec<f32> = self.logits.iter().flat_map(|(_, l)| l.iter().copied()).collect();
        let manifest = self
            .logits
            .iter()
            .enumerate()
            .map(|(row, (id, _))| ManifestLine {
                row,
                example_id: id.clone(),
            })
            .collect();
        let tensor = Tensor::matrix(self.logits.len(), width, data).expect("fixture logits shape");
        LogitsBatch::new(tensor, manifest, width).expect("fixture logits are consistent")
    }

    /// Writes every artifact plus a `config.json` into `dir` and returns the
    /// config path.
    pub fn write_to(&self, dir: impl AsRef<Path>, k: usize) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(crate::tensorio::io_err(dir))?;
        write_vocab(dir.join("micro.vocab.jsonl"), &self.vocab)?;
        write_tensor(dir.join("embeddings.npt"), self.embeddings.tensor())?;
        write_logits_batch(
            dir.join("logits.npt"),
            dir.join("logits.manifest.jsonl"),
            &self.logits,
        )?;
        write_dataset(dir.join("test.jsonl"), &self.records)?;
        let config = json!({
            "vocab": "micro.vocab.jsonl",
            "embeddings": "embeddings.npt",
            "logits": "logits.npt",
            "manifest": "logits.manifest.jsonl",
            "dataset": "test.jsonl",
            "template": self.template,
            "classes": self.classes,
            "k": k,
            "metric": "cosine",
            "weights": "softmax",
            "mode": "sum_logit",
        });
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        std::fs::write(&path, text).map_err(crate::tensorio::io_err(&path))?;
        Ok(path)
    }
}
