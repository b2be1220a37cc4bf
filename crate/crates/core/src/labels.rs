//! Label catalog, description composition, and label vectors.
//!
//! A label vector is the mean of the token vectors of its description
//! `"<code>: <title>"`. The code part is split into single characters so
//! that codes sharing a prefix share tokens. Vectors produced by an
//! external encoder can be loaded from a plain-text file instead.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{TokenizerMode, Vocab};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub code: String,
    pub title: String,
    /// Occurrences in the training split.
    pub train_count: u64,
}

/// Ordered label set; position in the catalog is the label id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCatalog {
    labels: Vec<Label>,
    index: HashMap<String, usize>,
    vectors: Option<Tensor>,
}

impl LabelCatalog {
    pub fn new<I, C, T>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (C, T)>,
        C: Into<String>,
        T: Into<String>,
    {
        let mut cat = Self {
            labels: Vec::new(),
            index: HashMap::new(),
            vectors: None,
        };
        for (code, title) in entries {
            let code = code.into();
            if code.is_empty() {
                return Err(Error::Input("empty label code".into()));
            }
            if cat.index.contains_key(&code) {
                return Err(Error::Input(format!("duplicate label code {code:?}")));
            }
            cat.index.insert(code.clone(), cat.labels.len());
            cat.labels.push(Label {
                code,
                title: title.into(),
                train_count: 0,
            });
        }
        if cat.labels.is_empty() {
            return Err(Error::Input("label catalog is empty".into()));
        }
        Ok(cat)
    }

    /// Reads `code<TAB>title` lines.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (code, title) = line.split_once('\t').unwrap_or((line, ""));
            if code.is_empty() {
                return Err(Error::Load {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "empty code".into(),
                });
            }
            entries.push((code.to_owned(), title.to_owned()));
        }
        Self::new(entries)
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(&format!("{}\t{}\n", l.code, l.title));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, id: usize) -> Option<&Label> {
        self.labels.get(id)
    }

    pub fn code(&self, id: usize) -> &str {
        &self.labels[id].code
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn train_counts(&self) -> Vec<u64> {
        self.labels.iter().map(|l| l.train_count).collect()
    }

    /// Sets `train_count` from the label sets of the training documents.
    pub fn count_training_labels<'a, I>(&mut self, label_sets: I)
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        self.labels.iter_mut().for_each(|l| l.train_count = 0);
        for set in label_sets {
            for &id in set {
                if let Some(l) = self.labels.get_mut(id) {
                    l.train_count += 1;
                }
            }
        }
    }

    pub fn vectors(&self) -> Option<&Tensor> {
        self.vectors.as_ref()
    }

    /// Installs an `n × d_t` matrix of label vectors.
    pub fn set_vectors(&mut self, vectors: Tensor) -> Result<()> {
        if vectors.rank() != 2 || vectors.shape()[0] != self.len() {
            return Err(Error::Shape(format!(
                "label vectors {:?} for {} labels",
                vectors.shape(),
                self.len()
            )));
        }
        self.vectors = Some(vectors);
        Ok(())
    }

    pub fn description(&self, id: usize) -> String {
        let l = &self.labels[id];
        compose_description(&l.code, &l.title)
    }
}

/// `"<code>: <title>"`.
pub fn compose_description(code: &str, title: &str) -> String {
    format!("{code}: {title}")
}

/// Splits a description into tokens: the code becomes one token per
/// character, the title goes through the document tokenizer.
pub fn description_tokens(description: &str, mode: TokenizerMode) -> Vec<String> {
    let (code, title) = description
        .split_once(": ")
        .or_else(|| description.strip_suffix(':').map(|c| (c, "")))
        .unwrap_or(("", description));
    code.chars()
        .filter(|c| !c.is_whitespace())
        .map(String::from)
        .chain(mode.tokenize(title))
        .collect()
}

/// Mean of the description's token vectors; unknown tokens use the UNK row.
pub fn embed_description(
    description: &str,
    mode: TokenizerMode,
    vocab: &Vocab,
    table: &Tensor,
) -> Result<Tensor> {
    let tokens = description_tokens(description, mode);
    if tokens.is_empty() {
        return Err(Error::Input("empty label description".into()));
    }
    if table.rank() != 2 || table.shape()[0] < vocab.len() {
        return Err(Error::Shape(format!(
            "embedding table {:?} for a vocabulary of {}",
            table.shape(),
            vocab.len()
        )));
    }
    let d = table.shape()[1];
    let mut acc = vec![0.0; d];
    for tok in &tokens {
        let row = table.row(vocab.id(tok));
        acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new(vec![1, d], acc)
}

/// Label vectors for the whole catalog, one row per label.
pub fn embed_catalog(
    catalog: &LabelCatalog,
    mode: TokenizerMode,
    vocab: &Vocab,
    table: &Tensor,
) -> Result<Tensor> {
    let mut data = Vec::new();
    for id in 0..catalog.len() {
        data.extend(embed_description(&catalog.description(id), mode, vocab, table)?.into_data());
    }
    Tensor::new(vec![catalog.len(), table.shape()[1]], data)
}

/// Writes the header `n d_t` and one `code v1 … v_d` row per label.
pub fn save_label_vectors(path: impl AsRef<Path>, catalog: &LabelCatalog) -> Result<()> {
    let path = path.as_ref();
    let vectors = catalog
        .vectors()
        .ok_or_else(|| Error::Contract("catalog has no label vectors".into()))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (n, d) = (vectors.shape()[0], vectors.shape()[1]);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{n} {d}")?;
        for id in 0..n {
            write!(w, "{}", catalog.code(id))?;
            for v in vectors.row(id) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a label-vector file and installs it on `catalog`. Every catalog
/// code must appear exactly once.
pub fn load_label_vectors(path: impl AsRef<Path>, catalog: &mut LabelCatalog) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Load {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err(1, format!("bad header {header:?}")))?;
    let [n, d] = dims[..] else {
        return Err(err(1, format!("header must be \"n d_t\", got {header:?}")));
    };
    if d == 0 {
        return Err(err(1, "d_t must be positive".into()));
    }
    if n != catalog.len() {
        return Err(err(
            1,
            format!("header declares {n} labels, catalog has {}", catalog.len()),
        ));
    }
    let mut data = vec![0.0; catalog.len() * d];
    let mut seen = vec![false; catalog.len()];
    let mut last = 1;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        last = lineno;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let code = fields.next().unwrap_or_default();
        let id = catalog
            .id(code)
            .ok_or_else(|| err(lineno, format!("unknown code {code:?}")))?;
        if seen[id] {
            return Err(err(lineno, format!("duplicate code {code:?}")));
        }
        seen[id] = true;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(lineno, "unparseable number".into()))?;
        if values.len() != d {
            return Err(err(
                lineno,
                format!("expected {d} values for {code:?}, got {}", values.len()),
            ));
        }
        data[id * d..(id + 1) * d].copy_from_slice(&values);
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(err(
            last + 1,
            format!("code {:?} missing from vector file", catalog.code(missing)),
        ));
    }
    catalog.set_vectors(Tensor::new(vec![catalog.len(), d], data)?)
}

/// Groups label ids by the first `prefix_len` characters of their code
/// (dots removed). Groups appear in order of first member.
pub fn sibling_groups(catalog: &LabelCatalog, prefix_len: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_prefix: HashMap<String, usize> = HashMap::new();
    for (id, label) in catalog.labels().iter().enumerate() {
        let key = code_prefix(&label.code, prefix_len);
        match by_prefix.get(&key) {
            Some(&g) => groups[g].push(id),
            None => {
                by_prefix.insert(key, groups.len());
                groups.push(vec![id]);
            }
        }
    }
    groups
}

/// First `prefix_len` characters of a code after stripping dots.
pub fn code_prefix(code: &str, prefix_len: usize) -> String {
    code.chars().filter(|&c| c != '.').take(prefix_len.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn composes_descriptions() {
        assert_eq!(
            compose_description("H53.011", "deprivation amblyopia, right eye"),
            "H53.011: deprivation amblyopia, right eye"
        );
        assert_eq!(compose_description("X", ""), "X: ");
        assert_eq!(
            compose_description("401.9", "Unspecified essential hypertension"),
            "401.9: Unspecified essential hypertension"
        );
    }

    #[test]
    fn description_tokens_split_code_chars() {
        let toks = description_tokens("C18.1: colon tumor", TokenizerMode::Whitespace);
        assert_eq!(toks, vec!["C", "1", "8", ".", "1", "colon", "tumor"]);
        assert_eq!(description_tokens("X: ", TokenizerMode::Whitespace), vec!["X"]);
    }

    fn setup() -> (Vocab, Tensor) {
        let docs = vec![vec!["a", "b", "c", "C", "1"]];
        let vocab = build_vocab(&docs, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = Tensor::uniform(&[vocab.len(), 3], -1.0, 1.0, &mut rng);
        (vocab, table)
    }

    #[test]
    fn embedding_is_a_mean() {
        let (vocab, table) = setup();
        let m = TokenizerMode::Whitespace;
        let one = embed_description("C: ", m, &vocab, &table).unwrap();
        assert_eq!(one.data(), table.row(vocab.id("C")));
        let same = embed_description("1: 1 1", m, &vocab, &table).unwrap();
        for (a, b) in same.data().iter().zip(table.row(vocab.id("1"))) {
            assert!((a - b).abs() < 1e-15);
        }
        let three = embed_description("C: a b", m, &vocab, &table).unwrap();
        for k in 0..3 {
            let direct = (table.at(vocab.id("C"), k)
                + table.at(vocab.id("a"), k)
                + table.at(vocab.id("b"), k))
                / 3.0;
            assert!((three.data()[k] - direct).abs() < 1e-15);
        }
        let unk = embed_description("Z: ", m, &vocab, &table).unwrap();
        assert_eq!(unk.data(), table.row(crate::text::UNK));
        assert!(matches!(
            embed_description("", m, &vocab, &table),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        #[test]
        fn embedding_is_permutation_invariant_and_linear(
            perm_seed in 0u64..1000,
            c in 0.1f64..5.0,
        ) {
            let (vocab, table) = setup();
            let m = TokenizerMode::Whitespace;
            let mut words = vec!["a", "b", "c", "a"];
            let base = embed_description(&format!("C: {}", words.join(" ")), m, &vocab, &table).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..words.len()).rev() {
                words.swap(i, rng.gen_range(0..=i));
            }
            let permuted = embed_description(&format!("C: {}", words.join(" ")), m, &vocab, &table).unwrap();
            for (a, b) in base.data().iter().zip(permuted.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let scaled_table = Tensor::new(
                table.shape().to_vec(),
                table.data().iter().map(|v| v * c).collect(),
            ).unwrap();
            let scaled = embed_description(&format!("C: {}", words.join(" ")), m, &vocab, &scaled_table).unwrap();
            for (a, b) in base.data().iter().zip(scaled.data()) {
                prop_assert!((a * c - b).abs() < 1e-12);
            }
        }
    }

    fn catalog() -> LabelCatalog {
        LabelCatalog::new([("A1", "x"), ("B2", "y")]).unwrap()
    }

    #[test]
    fn vector_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        let mut cat = catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        cat.set_vectors(v.clone()).unwrap();
        save_label_vectors(&p, &cat).unwrap();
        let mut fresh = catalog();
        load_label_vectors(&p, &mut fresh).unwrap();
        let loaded = fresh.vectors().unwrap();
        assert!(loaded
            .data()
            .iter()
            .zip(v.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn vector_file_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        let mut cat = catalog();
        std::fs::write(&p, "2 3\nA1 1 2 3\nB2 4 5 6\n").unwrap();
        load_label_vectors(&p, &mut cat).unwrap();
        assert_eq!(cat.vectors().unwrap().row(1), &[4.0, 5.0, 6.0]);

        let cases = [
            ("2 3\nA1 1 2 3\nB2 4 5\n", ":3:"),
            ("2 3\nA1 1 2 3\nA1 4 5 6\n", ":3:"),
            ("2 3\nA1 1 2 3\nZZ 4 5 6\n", ":3:"),
            ("2 3\nA1 1 2 3\n", "missing"),
            ("2\nA1 1 2 3\n", ":1:"),
        ];
        for (body, needle) in cases {
            std::fs::write(&p, body).unwrap();
            let err = load_label_vectors(&p, &mut catalog()).unwrap_err().to_string();
            assert!(err.contains(needle), "{body:?} -> {err}");
        }
    }

    #[test]
    fn sibling_groups_by_prefix() {
        let cat = LabelCatalog::new([("C18.101", ""), ("C18.2", ""), ("D35.0", "")]).unwrap();
        assert_eq!(sibling_groups(&cat, 3), vec![vec![0, 1], vec![2]]);
        assert_eq!(sibling_groups(&cat, 6), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn sibling_groups_match_hash_map_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let codes: Vec<String> = (0..30)
                .map(|i| {
                    format!(
                        "{}{}.{}{}",
                        (b'A' + rng.gen_range(0..3)) as char,
                        rng.gen_range(0..3),
                        rng.gen_range(0..4),
                        i
                    )
                })
                .collect();
            let cat = LabelCatalog::new(codes.iter().map(|c| (c.clone(), ""))).unwrap();
            let groups = sibling_groups(&cat, 2);
            let mut oracle: HashMap<String, Vec<usize>> = HashMap::new();
            for (i, c) in codes.iter().enumerate() {
                let key: String = c.replace('.', "").chars().take(2).collect();
                oracle.entry(key).or_default().push(i);
            }
            assert_eq!(groups.len(), oracle.len());
            for g in groups {
                let key = code_prefix(&codes[g[0]], 2);
                assert_eq!(oracle[&key], g);
            }
        }
    }

    #[test]
    fn catalog_rejects_duplicates() {
        assert!(LabelCatalog::new([("A", ""), ("A", "")]).is_err());
        let mut cat = catalog();
        cat.count_training_labels([&[0usize, 1][..], &[1][..]]);
        assert_eq!(cat.train_counts(), vec![1, 2]);
    }
}
