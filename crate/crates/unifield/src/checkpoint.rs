//! Versioned binary checkpoints: config, domain registry (including fitted
//! flow-standardization constants), and every named parameter buffer as raw
//! little-endian bytes. Optionally carries optimizer state for exact
//! training resumption. Save -> load round trips are bitwise exact.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::data::DomainRegistry;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UniFieldModel};
use crate::scalar::Scalar;
use crate::train::OptimState;

const MAGIC: &[u8; 8] = b"UFCKPT01";

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: MAGIC.to_vec(),
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    fn values<T: Scalar>(&mut self, vals: &[T]) {
        self.u64(vals.len() as u64);
        if T::dtype_name() == "f32" {
            for v in vals {
                self.bytes(&(v.to_f64() as f32).to_le_bytes());
            }
        } else {
            for v in vals {
                self.bytes(&v.to_f64().to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != MAGIC {
            return Err(ck_err("bad magic; not a checkpoint file"));
        }
        Ok(Reader { buf, at: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(ck_err(format!("truncated checkpoint at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ck_err("non-utf8 string"))
    }

    fn values<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        if T::dtype_name() == "f32" {
            for _ in 0..n {
                let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
                out.push(T::from_f64(v as f64));
            }
        } else {
            for _ in 0..n {
                let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
                out.push(T::from_f64(v));
            }
        }
        Ok(out)
    }

    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

/// Persist a model and optional optimizer state.
pub fn save<T: Scalar>(
    model: &UniFieldModel<T>,
    optim: Option<&OptimState<T>>,
    path: &Path,
) -> Result<()> {
    let mut w = Writer::new();
    w.str(T::dtype_name());
    w.str(&serde_json::to_string(&model.config).map_err(|e| ck_err(e.to_string()))?);
    w.str(&serde_json::to_string(&model.registry).map_err(|e| ck_err(e.to_string()))?);

    w.u64(model.store.len() as u64);
    for (_, p) in model.store.iter() {
        w.str(&p.name);
        w.u64(p.shape.len() as u64);
        for &d in &p.shape {
            w.u64(d as u64);
        }
        w.values(&p.value);
    }

    match optim {
        None => w.u64(0),
        Some(state) => {
            w.u64(1);
            w.u64(state.step as u64);
            w.str(&serde_json::to_string(&state.config).map_err(|e| ck_err(e.to_string()))?);
            w.u64(state.moments.len() as u64);
            for (m, v) in &state.moments {
                w.values(m);
                w.values(v);
            }
        }
    }

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, w.buf)?;
    Ok(())
}

/// Element type recorded in a checkpoint, without loading it.
pub fn peek_dtype(path: &Path) -> Result<String> {
    let mut head = vec![0u8; 64];
    let mut f = fs::File::open(path)?;
    let n = f.read(&mut head)?;
    head.truncate(n);
    let mut r = Reader::new(&head)?;
    r.str()
}

/// Rebuild a model from a checkpoint. The architecture is reconstructed from
/// the stored config and registry, then every buffer is overwritten from the
/// file; names and shapes must line up exactly.
pub fn load<T: Scalar>(path: &Path) -> Result<(UniFieldModel<T>, Option<OptimState<T>>)> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf)?;
    let dtype = r.str()?;
    if dtype != T::dtype_name() {
        return Err(ck_err(format!(
            "checkpoint holds {dtype} parameters, requested {}",
            T::dtype_name()
        )));
    }
    let config: ModelConfig =
        serde_json::from_str(&r.str()?).map_err(|e| ck_err(format!("config: {e}")))?;
    let registry: DomainRegistry =
        serde_json::from_str(&r.str()?).map_err(|e| ck_err(format!("registry: {e}")))?;

    let mut model = UniFieldModel::<T>::build(config, registry)?;

    let n_params = r.u64()? as usize;
    if n_params != model.store.len() {
        return Err(ck_err(format!(
            "checkpoint has {n_params} parameters, architecture has {}",
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = r.str()?;
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let values: Vec<T> = r.values()?;
        let p = model.store.get(id);
        if p.name != name || p.shape != shape {
            return Err(ck_err(format!(
                "parameter mismatch: checkpoint '{name}' {shape:?} vs model '{}' {:?}",
                p.name, p.shape
            )));
        }
        model.store.set_value(id, values)?;
    }

    let optim = match r.u64()? {
        0 => None,
        1 => {
            let step = r.u64()? as usize;
            let config: crate::train::AdamConfig =
                serde_json::from_str(&r.str()?).map_err(|e| ck_err(format!("optim: {e}")))?;
            let n = r.u64()? as usize;
            if n != model.store.len() {
                return Err(ck_err("optimizer moment count mismatch"));
            }
            let mut moments = Vec::with_capacity(n);
            for _ in 0..n {
                let m: Vec<T> = r.values()?;
                let v: Vec<T> = r.values()?;
                moments.push((m, v));
            }
            Some(OptimState {
                step,
                config,
                moments,
            })
        }
        other => return Err(ck_err(format!("unknown optimizer tag {other}"))),
    };

    if !r.done() {
        return Err(ck_err("trailing bytes after checkpoint payload"));
    }
    Ok((model, optim))
}
