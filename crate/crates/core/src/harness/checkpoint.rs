//! Binary checkpoints.
//!
//! Layout: magic, format version, then length-prefixed fields in a fixed
//! order. Integers are little-endian u64, floats little-endian f64 bit
//! patterns, strings UTF-8 with a u64 length. Parameter blocks and
//! optimizer moments are written in name order, so equal checkpoints
//! serialize to equal bytes.

use super::optim::OptimState;
use crate::attention::HeadKind;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::Params;
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 8] = b"PLAMCKPT";
const FORMAT: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Hyper-parameters the run was configured with.
    pub config_text: String,
    /// Epoch the parameters come from (1-based; 0 before training).
    pub epoch: u64,
    /// Validation micro F1 at that epoch.
    pub best_metric: f64,
    /// Run seed; every stochastic stream is derived from it and the epoch.
    pub seed: u64,
    pub model: Model,
    pub optim: OptimState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.rank() as u64);
        t.shape().iter().for_each(|&d| self.u64(d as u64));
        t.data().iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Load {
            path: self.path.display().to_string(),
            line: 0,
            msg: format!("byte {}: {}", self.pos, msg.into()),
        }
    }
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() {
            return Err(self.err(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| self.err("invalid UTF-8"))
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len()?;
        let shape: Vec<usize> = (0..rank).map(|_| self.len()).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        if n > self.bytes.len() {
            return Err(self.err("implausible tensor size"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(shape, data).map_err(|e| self.err(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u64(FORMAT);
        w.str(&self.config_text);
        w.u64(self.epoch);
        w.f64(self.best_metric);
        w.u64(self.seed);

        let c = self.model.config();
        w.str(&c.head.to_string());
        for v in [c.vocab_size, c.n_labels, c.d_e, c.d_c, c.d_t] {
            w.u64(v as u64);
        }
        w.u64(c.m.len() as u64);
        c.m.iter().for_each(|&m| w.u64(m as u64));
        w.f64(c.dropout);
        w.u64(self.model.version());
        w.tensor(self.model.label_vectors());
        let params = self.model.params();
        w.u64(params.len() as u64);
        for (name, t) in params.iter() {
            w.str(name);
            w.tensor(t);
        }

        w.u64(self.optim.step);
        w.u64(self.optim.m.len() as u64);
        for (name, m) in &self.optim.m {
            w.str(name);
            w.floats(m);
            w.floats(self.optim.v.get(name).map_or(&[][..], Vec::as_slice));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.err("not a checkpoint file"));
        }
        let format = r.u64()?;
        if format != FORMAT {
            return Err(r.err(format!("unsupported checkpoint format {format}")));
        }
        let config_text = r.str()?;
        let epoch = r.u64()?;
        let best_metric = r.f64()?;
        let seed = r.u64()?;

        let head: HeadKind = r.str()?.parse().map_err(|e: Error| r.err(e.to_string()))?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.len()?;
        }
        let n_layers = r.len()?;
        let m = (0..n_layers).map(|_| r.len()).collect::<Result<_>>()?;
        let dropout = r.f64()?;
        let version = r.u64()?;
        let label_vectors = r.tensor()?;
        let n_blocks = r.len()?;
        let mut params = Params::new();
        for _ in 0..n_blocks {
            let name = r.str()?;
            let t = r.tensor()?;
            params.insert(name, t);
        }
        let config = ModelConfig {
            vocab_size: dims[0],
            n_labels: dims[1],
            d_e: dims[2],
            d_c: dims[3],
            d_t: dims[4],
            head,
            m,
            dropout,
        };
        let model = Model::from_parts(config, params, label_vectors, version)
            .map_err(|e| r.err(e.to_string()))?;

        let mut optim = OptimState {
            step: r.u64()?,
            ..OptimState::default()
        };
        let n_moments = r.len()?;
        for _ in 0..n_moments {
            let name = r.str()?;
            let m = r.floats()?;
            let v = r.floats()?;
            optim.m.insert(name.clone(), m);
            optim.v.insert(name, v);
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Self {
            config_text,
            epoch,
            best_metric,
            seed,
            model,
            optim,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
