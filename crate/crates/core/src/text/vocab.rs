use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token vocabulary with document frequencies over the corpus it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    df: Vec<u64>,
    n_docs: usize,
}

/// Builds a vocabulary from tokenized documents.
///
/// Tokens seen fewer than `min_count` times map to [`UNK`]. Ids are assigned
/// by descending corpus count, then ascending token.
pub fn build_vocab<S: AsRef<str>>(docs: &[Vec<S>], min_count: u64) -> Result<Vocab> {
    if docs.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut dfs: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        let mut seen = HashSet::new();
        for tok in doc {
            let tok = tok.as_ref();
            *counts.entry(tok).or_default() += 1;
            if seen.insert(tok) {
                *dfs.entry(tok).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut vocab = Vocab::reserved(docs.len());
    for (tok, _) in kept {
        vocab.push(tok.to_owned(), dfs[tok]);
    }
    Ok(vocab)
}

impl Vocab {
    fn reserved(n_docs: usize) -> Self {
        let mut v = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
            df: Vec::new(),
            n_docs,
        };
        v.push(PAD_TOKEN.into(), 0);
        v.push(UNK_TOKEN.into(), 0);
        v
    }

    fn push(&mut self, token: String, df: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.df.push(df);
    }

    /// Appends tokens not yet present with document frequency 0. Used for
    /// label-description tokens that never occur in training documents.
    pub fn extend<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for t in tokens {
            let t = t.as_ref();
            if !self.index.contains_key(t) {
                self.push(t.to_owned(), 0);
            }
        }
    }

    /// Number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Number of documents the statistics were computed over.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) if id > UNK => id,
            _ => UNK,
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id(token) != UNK
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn df(&self, id: usize) -> u64 {
        self.df.get(id).copied().unwrap_or(0)
    }

    /// Document frequency of a token string, 0 when unknown.
    pub fn df_of(&self, token: &str) -> u64 {
        self.df(self.id(token))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Writes `token<TAB>id<TAB>df` rows after a `#n_docs<TAB>N` header.
    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "#n_docs\t{}", self.n_docs)?;
            for (id, tok) in self.tokens.iter().enumerate() {
                writeln!(w, "{tok}\t{id}\t{}", self.df[id])?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let load_err = |line: usize, msg: String| Error::Load {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| load_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let n_docs = header
            .strip_prefix("#n_docs\t")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| load_err(1, format!("bad header {header:?}")))?;
        let mut vocab = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
            df: Vec::new(),
            n_docs,
        };
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = i + 2;
            let fields: Vec<&str> = line.split('\t').collect();
            let [tok, id, df] = fields[..] else {
                return Err(load_err(lineno, "expected token, id and df".into()));
            };
            let id: usize = id
                .parse()
                .map_err(|_| load_err(lineno, format!("bad id {id:?}")))?;
            let df: u64 = df
                .parse()
                .map_err(|_| load_err(lineno, format!("bad df {df:?}")))?;
            if id != vocab.tokens.len() {
                return Err(load_err(lineno, format!("id {id} out of sequence")));
            }
            if vocab.index.contains_key(tok) {
                return Err(load_err(lineno, format!("duplicate token {tok:?}")));
            }
            vocab.push(tok.to_owned(), df);
        }
        if vocab.token(PAD) != Some(PAD_TOKEN) || vocab.token(UNK) != Some(UNK_TOKEN) {
            return Err(load_err(2, "reserved ids 0 and 1 must be <pad> and <unk>".into()));
        }
        Ok(vocab)
    }
}
