//! Corpus files, splits, and the preprocessed dataset.
//!
//! A corpus is JSON lines: `{"id": .., "text": .., "labels": [codes..]}`
//! with an optional `"split"` of `train`, `valid` or `test`. Documents
//! without a split are assigned one from a hash of their id (80/10/10).

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::labels::{description_tokens, LabelCatalog};
use crate::tensor::Tensor;
use crate::text::{build_vocab, truncate_by_tfidf, Document, Vocab};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDoc {
    pub id: String,
    pub text: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RawDoc {
    pub fn split(&self) -> Split {
        self.split.unwrap_or_else(|| match fnv1a(&self.id) % 10 {
            0..=7 => Split::Train,
            8 => Split::Valid,
            _ => Split::Test,
        })
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<RawDoc>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDoc = serde_json::from_str(&line).map_err(|e| Error::Load {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[RawDoc]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Vocabulary, catalog with training counts, and truncated documents per split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub catalog: LabelCatalog,
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
    /// Untruncated token ids of the training documents followed by every
    /// label description, the skip-gram corpus.
    pub embedding_corpus: Vec<Vec<usize>>,
}

impl Dataset {
    /// Labels occurring in at least one test document.
    pub fn test_label_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.catalog.len()];
        self.test
            .iter()
            .flat_map(|d| &d.labels)
            .for_each(|&l| m[l] = true);
        m
    }

    pub fn split(&self, which: Split) -> &[Document] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Tokenizes, builds the training vocabulary (extended with description
/// tokens), truncates every document to `l_r`, and counts training labels.
pub fn prepare(raw: &[RawDoc], mut catalog: LabelCatalog, cfg: &RunConfig) -> Result<Dataset> {
    let mut ids = HashSet::new();
    for d in raw {
        if !ids.insert(d.id.as_str()) {
            return Err(Error::Input(format!("duplicate document id {:?}", d.id)));
        }
    }
    let mut tokenized = Vec::with_capacity(raw.len());
    for d in raw {
        let mut labels = Vec::with_capacity(d.labels.len());
        for code in &d.labels {
            labels.push(catalog.id(code).ok_or_else(|| {
                Error::Input(format!("document {:?} uses unknown label {code:?}", d.id))
            })?);
        }
        tokenized.push((d, cfg.tokenizer.tokenize(&d.text), labels));
    }
    let train_tokens: Vec<&Vec<String>> = tokenized
        .iter()
        .filter(|(d, _, _)| d.split() == Split::Train)
        .map(|(_, t, _)| t)
        .collect();
    if train_tokens.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let train_refs: Vec<Vec<&str>> = train_tokens
        .iter()
        .map(|t| t.iter().map(String::as_str).collect())
        .collect();
    let mut vocab = build_vocab(&train_refs, cfg.min_count)?;
    let descriptions: Vec<Vec<String>> = (0..catalog.len())
        .map(|l| description_tokens(&catalog.description(l), cfg.tokenizer))
        .collect();
    for desc in &descriptions {
        vocab.extend(desc);
    }

    let mut ds = Dataset {
        vocab,
        catalog: catalog.clone(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        embedding_corpus: Vec::new(),
    };
    for (d, tokens, labels) in tokenized {
        let doc = truncate_by_tfidf(&d.id, &tokens, labels, &ds.vocab, cfg.l_r)?;
        match d.split() {
            Split::Train => {
                ds.embedding_corpus.push(ds.vocab.encode(&tokens));
                ds.train.push(doc);
            }
            Split::Valid => ds.valid.push(doc),
            Split::Test => ds.test.push(doc),
        }
    }
    for desc in &descriptions {
        ds.embedding_corpus.push(ds.vocab.encode(desc));
    }
    catalog.count_training_labels(ds.train.iter().map(|d| d.labels.as_slice()));
    ds.catalog = catalog;
    Ok(ds)
}

#[derive(Serialize)]
struct CacheRecord<'a> {
    id: &'a str,
    split: Split,
    tokens: &'a [usize],
    len: usize,
    labels: &'a [usize],
}

/// Tokenized documents as JSON lines, one per document in split order.
pub fn write_cache(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        for d in ds.split(split) {
            let rec = CacheRecord {
                id: &d.id,
                split,
                tokens: &d.tokens[..d.real_len()],
                len: d.real_len(),
                labels: &d.labels,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Text export: a `V d` header, then `token v1 … vd` per id.
pub fn save_embeddings_text(path: impl AsRef<Path>, vocab: &Vocab, table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (rows, d) = table.dims2();
    let mut out = format!("{rows} {d}\n");
    for id in 0..rows {
        out.push_str(vocab.token(id).unwrap_or("<unk>"));
        for v in table.row(id) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const EMB_MAGIC: &[u8; 8] = b"PLAMEMB1";

/// Binary table: magic, rows and columns as little-endian u64, then values.
pub fn save_embeddings_bin(path: impl AsRef<Path>, table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (rows, d) = table.dims2();
    let mut buf = Vec::with_capacity(24 + 8 * table.len());
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for v in table.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings_bin(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Load {
        path: path.display().to_string(),
        line: 0,
        msg: msg.into(),
    };
    if bytes.len() < 24 || &bytes[..8] != EMB_MAGIC {
        return Err(bad("not an embedding table"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()) as usize;
    let (rows, d) = (word(8), word(16));
    if bytes.len() != 24 + 8 * rows * d {
        return Err(bad("truncated embedding table"));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![rows, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, text: &str, labels: &[&str], split: Split) -> RawDoc {
        RawDoc {
            id: id.into(),
            text: text.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            split: Some(split),
        }
    }

    fn catalog() -> LabelCatalog {
        LabelCatalog::new([("A01", "red apple"), ("B02", "blue sky")]).unwrap()
    }

    #[test]
    fn corpus_round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let docs = vec![
            raw("1", "a b", &["A01"], Split::Train),
            RawDoc {
                split: None,
                ..raw("2", "c", &[], Split::Test)
            },
        ];
        write_corpus(&p, &docs).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), docs);
        std::fs::write(&p, "{\"id\":\"1\",\"text\":\"a\",\"labels\":[]}\n{oops\n").unwrap();
        let err = read_corpus(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn hash_split_is_stable_and_roughly_balanced() {
        let docs: Vec<RawDoc> = (0..1000)
            .map(|i| RawDoc {
                id: format!("doc{i}"),
                text: String::new(),
                labels: vec![],
                split: None,
            })
            .collect();
        let train = docs.iter().filter(|d| d.split() == Split::Train).count();
        assert!((700..900).contains(&train), "{train}");
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn prepare_uses_training_statistics() {
        let docs = vec![
            raw("1", "apple apple fruit", &["A01"], Split::Train),
            raw("2", "sky cloud", &["B02"], Split::Train),
            raw("3", "apple zebra", &["A01", "B02"], Split::Test),
        ];
        let cfg = RunConfig {
            l_r: 2,
            ..RunConfig::default()
        };
        let ds = prepare(&docs, catalog(), &cfg).unwrap();
        assert_eq!(ds.vocab.n_docs(), 2);
        assert!(!ds.vocab.contains("zebra"));
        assert!(ds.vocab.contains("A") && ds.vocab.contains("red"));
        assert_eq!(ds.catalog.train_counts(), vec![1, 1]);
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.test[0].labels, vec![0, 1]);
        assert_eq!(ds.train[1].mask, vec![true, true]);
        assert_eq!(ds.embedding_corpus.len(), 4);
        assert_eq!(ds.test_label_mask(), vec![true, true]);

        let bad = vec![raw("1", "a", &["Q"], Split::Train)];
        assert!(matches!(prepare(&bad, catalog(), &cfg), Err(Error::Input(_))));
        let dup = vec![raw("1", "a", &[], Split::Train), raw("1", "b", &[], Split::Test)];
        assert!(prepare(&dup, catalog(), &cfg).is_err());
        let no_train = vec![raw("1", "a", &[], Split::Test)];
        assert!(prepare(&no_train, catalog(), &cfg).is_err());
    }

    #[test]
    fn embedding_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let t = Tensor::new(vec![2, 2], vec![0.1, -2.5, 1e-300, 3.0]).unwrap();
        save_embeddings_bin(&p, &t).unwrap();
        assert_eq!(load_embeddings_bin(&p).unwrap(), t);
        std::fs::write(&p, b"nope").unwrap();
        assert!(load_embeddings_bin(&p).is_err());
    }
}
