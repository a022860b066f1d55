//! Binary checkpoint container: a JSON manifest followed by named
//! little-endian f64 tensors.
//!
//! Layout: `b"MLCK"`, `u32` version, `u64` manifest length, manifest bytes,
//! `u64` tensor count, then per tensor `u32` name length, name, `u32` rank,
//! `u64` dimensions and the row-major values.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2m::{L2MConfig, L2MModel};
use crate::m2l::{M2LConfig, M2LModel};
use crate::motion::Standardizer;
use crate::nn::{Nadam, NadamConfig, ParameterSet};
use crate::text::Vocabulary;

const MAGIC: &[u8; 4] = b"MLCK";
const VERSION: u32 = 1;
const OPT_M: &str = "optimizer.m/";
const OPT_V: &str = "optimizer.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum ModelConfig {
    M2l(M2LConfig),
    L2m(L2MConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::M2l(_) => "m2l",
            ModelConfig::L2m(_) => "l2m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epochs_completed: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// `None` when clipping is disabled.
    pub clip_norm: Option<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub optimizer_steps: u64,
}

impl TrainingState {
    pub fn nadam_config(&self) -> NadamConfig {
        NadamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub created_by: String,
    pub model: ModelConfig,
    pub training: Option<TrainingState>,
    pub standardizer: Standardizer,
    pub vocabulary: Vec<String>,
    pub joint_names: Vec<String>,
    /// Source-rate frames per model frame.
    #[serde(default = "default_downsample_factor")]
    pub downsample_factor: usize,
}

fn default_downsample_factor() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParameterSet,
    /// First and second moments aligned with `params`.
    pub optimizer: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)>,
}

pub enum Model {
    M2l(M2LModel),
    L2m(L2MModel),
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        params: &ParameterSet,
        optimizer: Option<&Nadam>,
        training: Option<TrainingState>,
        standardizer: &Standardizer,
        vocabulary: &Vocabulary,
        joint_names: &[String],
    ) -> Self {
        Checkpoint {
            manifest: Manifest {
                format_version: VERSION,
                created_by: format!("motion-language {}", env!("CARGO_PKG_VERSION")),
                model,
                training,
                standardizer: standardizer.clone(),
                vocabulary: vocabulary.words().to_vec(),
                joint_names: joint_names.to_vec(),
                downsample_factor: default_downsample_factor(),
            },
            params: params.clone(),
            optimizer: optimizer.map(|o| (o.first_moments().to_vec(), o.second_moments().to_vec())),
        }
    }

    pub fn kind(&self) -> &'static str {
        self.manifest.model.kind()
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_words(self.manifest.vocabulary.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        out.write_u64::<LittleEndian>(manifest.len() as u64).expect("vec write");
        out.extend_from_slice(&manifest);
        let mut tensors: Vec<(String, &Array2<f64>)> =
            self.params.iter().map(|(n, v)| (n.to_owned(), v)).collect();
        if let Some((m, v)) = &self.optimizer {
            for ((name, _), t) in self.params.iter().zip(m) {
                tensors.push((format!("{OPT_M}{name}"), t));
            }
            for ((name, _), t) in self.params.iter().zip(v) {
                tensors.push((format!("{OPT_V}{name}"), t));
            }
        }
        out.write_u64::<LittleEndian>(tensors.len() as u64).expect("vec write");
        for (name, t) in tensors {
            out.write_u32::<LittleEndian>(name.len() as u32).expect("vec write");
            out.extend_from_slice(name.as_bytes());
            out.write_u32::<LittleEndian>(2).expect("vec write");
            out.write_u64::<LittleEndian>(t.nrows() as u64).expect("vec write");
            out.write_u64::<LittleEndian>(t.ncols() as u64).expect("vec write");
            for &x in t.iter() {
                out.write_f64::<LittleEndian>(x).expect("vec write");
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_owned());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let start = r.position() as usize;
        let manifest_bytes = bytes.get(start..start + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        r.set_position((start + len) as u64);
        let count = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated tensor table"))?;
        let mut params = ParameterSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated tensor"))? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated tensor"))?;
            if rank != 2 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}, expected 2")));
            }
            let rows = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated tensor"))? as usize;
            let cols = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated tensor"))? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n.saturating_mul(8) <= bytes.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data)
                .map_err(|_| Error::Checkpoint(format!("tensor `{name}` is truncated")))?;
            let t = Array2::from_shape_vec((rows, cols), data).expect("checked length");
            if let Some(base) = name.strip_prefix(OPT_M) {
                m.push((base.to_owned(), t));
            } else if let Some(base) = name.strip_prefix(OPT_V) {
                v.push((base.to_owned(), t));
            } else {
                params.add(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
            }
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        let optimizer = if m.is_empty() && v.is_empty() {
            None
        } else {
            let order = |moments: Vec<(String, Array2<f64>)>| -> Result<Vec<Array2<f64>>> {
                if moments.len() != params.len()
                    || moments.iter().zip(params.iter()).any(|((a, _), (b, _))| a != b)
                {
                    return Err(bad("optimizer moments do not match parameters"));
                }
                Ok(moments.into_iter().map(|(_, t)| t).collect())
            };
            Some((order(m)?, order(v)?))
        };
        Ok(Checkpoint {
            manifest,
            params,
            optimizer,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the model from the manifest configuration and loads the
    /// stored tensors, validating names and shapes.
    pub fn model(&self) -> Result<Model> {
        match &self.manifest.model {
            ModelConfig::M2l(cfg) => {
                let mut model = M2LModel::new(cfg.clone(), 0)?;
                model.params_mut().load_from(&self.params)?;
                Ok(Model::M2l(model))
            }
            ModelConfig::L2m(cfg) => {
                let mut model = L2MModel::new(cfg.clone(), 0)?;
                model.params_mut().load_from(&self.params)?;
                Ok(Model::L2m(model))
            }
        }
    }

    pub fn m2l(&self) -> Result<M2LModel> {
        match self.model()? {
            Model::M2l(m) => Ok(m),
            Model::L2m(_) => Err(Error::Checkpoint("expected an m2l checkpoint, found l2m".into())),
        }
    }

    pub fn l2m(&self) -> Result<L2MModel> {
        match self.model()? {
            Model::L2m(m) => Ok(m),
            Model::M2l(_) => Err(Error::Checkpoint("expected an l2m checkpoint, found m2l".into())),
        }
    }

    /// Optimizer with the stored moments and step count.
    pub fn optimizer(&self, params: &ParameterSet) -> Result<Nadam> {
        let training = self
            .manifest
            .training
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        let (m, v) = self
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer moments".into()))?;
        Nadam::from_state(params, training.nadam_config(), training.optimizer_steps, m, v)
    }
}
