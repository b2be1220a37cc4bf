//! Run configuration: a line-oriented `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the file.

use crate::attention::HeadKind;
use crate::error::{Error, Result};
use crate::text::TokenizerMode;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Lamb,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lamb" => Ok(OptimizerKind::Lamb),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (expected lamb or adam)"
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct RunConfig {
    pub tokenizer: TokenizerMode,
    pub l_r: usize,
    pub d_e: usize,
    pub d_c: usize,
    /// Mode count per pseudo layer.
    pub m: Vec<usize>,
    pub K: usize,
    pub d_t: usize,
    pub dropout: f64,
    pub threshold: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub head: HeadKind,
    pub max_epochs: usize,
    pub min_count: u64,
    pub weight_decay: f64,
    pub emb_epochs: usize,
    pub emb_window: usize,
    pub emb_negatives: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerMode::Whitespace,
            l_r: 128,
            d_e: 32,
            d_c: 32,
            m: vec![8],
            K: 1,
            d_t: 32,
            dropout: 0.2,
            threshold: 0.5,
            batch_size: 16,
            learning_rate: 0.005,
            optimizer: OptimizerKind::Lamb,
            patience: 64,
            seed: 0,
            corpus: None,
            catalog: None,
            vectors: None,
            out: None,
            head: HeadKind::Pseudo,
            max_epochs: 200,
            min_count: 1,
            weight_decay: 0.0,
            emb_epochs: 20,
            emb_window: 3,
            emb_negatives: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
            cfg.set(key, value, base)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_str(&text, base)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        match key {
            "tokenizer" => self.tokenizer = value.parse()?,
            "l_r" => self.l_r = parse(key, value)?,
            "d_e" => self.d_e = parse(key, value)?,
            "d_c" => self.d_c = parse(key, value)?,
            "m" => {
                self.m = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "K" => self.K = parse(key, value)?,
            "d_t" => self.d_t = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "corpus" => self.corpus = path(),
            "catalog" => self.catalog = path(),
            "vectors" => self.vectors = path(),
            "out" => self.out = path(),
            "head" => self.head = value.parse()?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "emb_epochs" => self.emb_epochs = parse(key, value)?,
            "emb_window" => self.emb_window = parse(key, value)?,
            "emb_negatives" => self.emb_negatives = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_r", self.l_r),
            ("d_e", self.d_e),
            ("d_c", self.d_c),
            ("K", self.K),
            ("d_t", self.d_t),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("emb_window", self.emb_window),
            ("emb_negatives", self.emb_negatives),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !self.d_c.is_multiple_of(2) {
            return Err(Error::Config(format!("d_c = {} must be even", self.d_c)));
        }
        if self.m.len() != self.K || self.m.contains(&0) {
            return Err(Error::Config(format!(
                "m = {:?} must list K = {} positive sizes",
                self.m, self.K
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.vectors.is_none() && self.d_e != self.d_t {
            return Err(Error::Config(format!(
                "label vectors averaged from word vectors need d_t == d_e ({} != {})",
                self.d_t, self.d_e
            )));
        }
        Ok(())
    }

    /// Hyper-parameters only (no paths), one `key = value` per line in a
    /// fixed order. Parses back to the same values.
    pub fn to_text(&self) -> String {
        let m: Vec<String> = self.m.iter().map(usize::to_string).collect();
        let fields: [(&str, String); 21] = [
            ("tokenizer", self.tokenizer.to_string()),
            ("l_r", self.l_r.to_string()),
            ("d_e", self.d_e.to_string()),
            ("d_c", self.d_c.to_string()),
            ("m", m.join(",")),
            ("K", self.K.to_string()),
            ("d_t", self.d_t.to_string()),
            ("dropout", self.dropout.to_string()),
            ("threshold", self.threshold.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("head", self.head.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("min_count", self.min_count.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("emb_epochs", self.emb_epochs.to_string()),
            ("emb_window", self.emb_window.to_string()),
            ("emb_negatives", self.emb_negatives.to_string()),
        ];
        fields
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Path of a required file setting.
    pub fn require(&self, which: &str) -> Result<&Path> {
        let p = match which {
            "corpus" => &self.corpus,
            "catalog" => &self.catalog,
            "vectors" => &self.vectors,
            _ => &self.out,
        };
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("config does not set {which}")))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
