//! Single-file checkpoint container: a JSON header plus named 2-D tensors.
//!
//! Layout (little-endian): magic `LSCK`, `u32` version, `u64` header length,
//! header JSON, `u32` tensor count, then per tensor a `u16` name length, the
//! UTF-8 name, a `u8` dtype (1 = f32, 2 = f64), `u32` rows, `u32` cols and the
//! row-major values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::LossRow;
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::features::{AeConfig, Autoencoder, MelConfig};
use crate::model::{AcousticModel, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// Raw container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(DTYPE_F64);
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for &v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} dimensions overflow")))?;
            let values: Vec<f64> = match dtype {
                DTYPE_F64 => r
                    .take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DTYPE_F32 => r
                    .take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                other => return Err(Error::Checkpoint(format!("tensor {name} has unknown dtype {other}"))),
            };
            let m = Mat::from_shape_vec((rows, cols), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((name, m));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("lsck.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn take(&mut self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::default();
        let mut rest = Vec::new();
        for (name, m) in self.tensors.drain(..) {
            match name.strip_prefix(prefix) {
                Some(stripped) => {
                    store.add(stripped.to_string(), m);
                }
                None => rest.push((name, m)),
            }
        }
        self.tensors = rest;
        store
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    model: Option<ModelConfig>,
    mel: MelConfig,
    train: Option<TrainConfig>,
    step: usize,
    adam: Option<(AdamConfig, u64)>,
    history: Vec<LossRow>,
    autoencoder: Option<AeConfig>,
}

const FORMAT: &str = "lanstyle";

/// A trained (or training) acoustic model together with everything needed to
/// resume training or run synthesis.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AcousticModel,
    pub mel: MelConfig,
    pub train: Option<TrainConfig>,
    pub step: usize,
    pub adam: Option<Adam>,
    pub history: Vec<LossRow>,
    /// Present for latent-feature models; decodes latents back to mel frames.
    pub autoencoder: Option<Autoencoder>,
}

fn ae_tensors(ae: &Autoencoder, out: &mut Vec<(String, Mat)>) {
    out.extend(ae.params.iter().map(|(_, n, v)| (format!("autoencoder.{n}"), v.clone())));
    let col = |v: &[f64]| Mat::from_shape_vec((v.len(), 1), v.to_vec()).expect("column");
    out.push(("autoencoder_stats.mean".into(), col(&ae.input_mean)));
    out.push(("autoencoder_stats.std".into(), col(&ae.input_std)));
}

fn ae_from(container: &mut Container, config: AeConfig) -> Result<Autoencoder> {
    let params = container.take("autoencoder.");
    let stats = container.take("autoencoder_stats.");
    let column = |name: &str| -> Result<Vec<f64>> {
        stats
            .id(name)
            .map(|id| stats.value(id).iter().copied().collect())
            .ok_or_else(|| Error::Checkpoint(format!("missing autoencoder statistic {name}")))
    };
    Autoencoder::from_parts(config, &params, column("mean")?, column("std")?)
}

fn check_format(header: &Header) -> Result<()> {
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", header.format)));
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let header = Header {
            format: FORMAT.into(),
            model: Some(self.model.config.clone()),
            mel: self.mel.clone(),
            train: self.train.clone(),
            step: self.step,
            adam: self.adam.as_ref().map(|a| (a.config, a.t)),
            history: self.history.clone(),
            autoencoder: self.autoencoder.as_ref().map(|a| a.config.clone()),
        };
        let mut tensors: Vec<(String, Mat)> = self
            .model
            .params
            .iter()
            .map(|(_, n, v)| (format!("model.{n}"), v.clone()))
            .collect();
        if let Some(adam) = &self.adam {
            for (id, n, _) in self.model.params.iter() {
                tensors.push((format!("adam_m.{n}"), adam.m[id.0].clone()));
                tensors.push((format!("adam_v.{n}"), adam.v[id.0].clone()));
            }
        }
        if let Some(ae) = &self.autoencoder {
            ae_tensors(ae, &mut tensors);
        }
        Container {
            header: serde_json::to_value(header).expect("header serializes"),
            tensors,
        }
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let header: Header = serde_json::from_value(c.header.clone())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        check_format(&header)?;
        let config = header
            .model
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no acoustic model".into()))?;
        let model = AcousticModel::from_params(config, c.take("model."))?;
        let adam = match header.adam {
            Some((config, t)) => {
                let ms = c.take("adam_m.");
                let vs = c.take("adam_v.");
                let mut adam = Adam::new(config, &model.params);
                adam.t = t;
                for (id, name, p) in model.params.iter() {
                    for (store, slot) in [(&ms, &mut adam.m[id.0]), (&vs, &mut adam.v[id.0])] {
                        let src = store
                            .id(name)
                            .map(|i| store.value(i))
                            .filter(|v| v.dim() == p.dim())
                            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))?;
                        *slot = src.clone();
                    }
                }
                Some(adam)
            }
            None => None,
        };
        let autoencoder = header.autoencoder.map(|cfg| ae_from(&mut c, cfg)).transpose()?;
        Ok(Self {
            model,
            mel: header.mel,
            train: header.train,
            step: header.step,
            adam,
            history: header.history,
            autoencoder,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Stand-alone autoencoder file written by autoencoder training.
pub fn save_autoencoder(ae: &Autoencoder, mel: &MelConfig, path: &Path) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        model: None,
        mel: mel.clone(),
        train: None,
        step: 0,
        adam: None,
        history: Vec::new(),
        autoencoder: Some(ae.config.clone()),
    };
    let mut tensors = Vec::new();
    ae_tensors(ae, &mut tensors);
    Container {
        header: serde_json::to_value(header)?,
        tensors,
    }
    .save(path)
}

/// Loads the autoencoder from either a stand-alone file or a model checkpoint.
pub fn load_autoencoder(path: &Path) -> Result<(Autoencoder, MelConfig)> {
    let mut c = Container::load(path)?;
    let header: Header =
        serde_json::from_value(c.header.clone()).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    check_format(&header)?;
    let cfg = header
        .autoencoder
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no autoencoder", path.display())))?;
    Ok((ae_from(&mut c, cfg)?, header.mel))
}
