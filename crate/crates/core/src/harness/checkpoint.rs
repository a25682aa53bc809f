//! Checkpoint container: `ACRMCKPT`, a u32 version, a u64 manifest length,
//! the UTF-8 JSON manifest, then little-endian f32 tensor data. All integers
//! are little-endian; manifest offsets count bytes from the start of the
//! tensor data.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::encoders::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Acrm;
use crate::numerics::{AdamState, ParamSet, Scalar, Tensor};

use super::config::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACRMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const EMBEDDINGS: &str = "embeddings";
const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub d_in: usize,
    pub epoch: usize,
    pub table: EmbeddingTable,
    pub params: ParamSet<f32>,
    pub adam: Option<AdamState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    d_in: usize,
    epoch: usize,
    vocab: Vocabulary,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new<S: Scalar>(
        model: &Acrm,
        epoch: usize,
        table: &EmbeddingTable,
        params: &ParamSet<S>,
        adam: Option<&AdamState<S>>,
    ) -> Self {
        let cast = |m: &IndexMap<String, Tensor<S>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        Self {
            config: model.config.clone(),
            d_in: model.d_in,
            epoch,
            table: table.quantized(),
            params: params.cast(),
            adam: adam.map(|a| AdamState {
                m: cast(&a.m),
                v: cast(&a.v),
                t: a.t,
            }),
        }
    }

    pub fn model(&self) -> Result<Acrm> {
        Acrm::new(&self.config, self.d_in)
    }

    pub fn params<S: Scalar>(&self) -> ParamSet<S> {
        self.params.cast()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
        let emb = Tensor::<f32>::from_f64(&[self.table.vocab().len(), self.table.dim()], self.table.rows())
            .expect("table shape is consistent");
        tensors.push((EMBEDDINGS.into(), &emb));
        tensors.extend(self.params.iter().map(|(k, v)| (format!("{PARAM}{k}"), v)));
        if let Some(a) = &self.adam {
            tensors.extend(a.m.iter().map(|(k, v)| (format!("{ADAM_M}{k}"), v)));
            tensors.extend(a.v.iter().map(|(k, v)| (format!("{ADAM_V}{k}"), v)));
        }
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(tensors.len());
        for (name, t) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let manifest = Manifest {
            config: self.config.clone(),
            d_in: self.d_in,
            epoch: self.epoch,
            vocab: self.table.vocab().clone(),
            adam_step: self.adam.as_ref().map(|a| a.t),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg,
        };
        if bytes.len() < 20 {
            return Err(fail(bytes.len(), "truncated header".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(8, format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let data_start = 20usize
            .checked_add(usize::try_from(len).unwrap_or(usize::MAX))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(12, format!("manifest length {len} exceeds file size")))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| fail(20, format!("bad manifest: {e}")))?;
        let blob = &bytes[data_start..];

        let mut tensors: IndexMap<String, Tensor<f32>> = IndexMap::new();
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let start = usize::try_from(entry.offset).unwrap_or(usize::MAX);
            let end = start.checked_add(4 * n).filter(|&e| e <= blob.len()).ok_or_else(|| {
                fail(
                    data_start.saturating_add(start),
                    format!("tensor `{}` runs past the end of the file", entry.name),
                )
            })?;
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
        }

        let emb = tensors
            .shift_remove(EMBEDDINGS)
            .ok_or_else(|| fail(20, "manifest lacks the embedding table".into()))?;
        let dim = emb.cols();
        let table = EmbeddingTable::new(manifest.vocab, dim, emb.to_f64_vec())?;
        let model = Acrm::new(&manifest.config, manifest.d_in)?;
        let expected = model.init_params::<f32>();
        let mut params = ParamSet::new();
        let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
        for (name, t) in tensors {
            if let Some(p) = name.strip_prefix(PARAM) {
                params.insert(p, t);
            } else if let Some(p) = name.strip_prefix(ADAM_M) {
                m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                v.insert(p.to_string(), t);
            } else {
                return Err(fail(20, format!("unexpected tensor `{name}`")));
            }
        }
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(fail(
                        20,
                        format!("parameter `{name}` has shape {:?}, expected {:?}", p.shape(), t.shape()),
                    ))
                }
                None => return Err(fail(20, format!("missing parameter `{name}`"))),
            }
        }
        if params.len() != expected.len() {
            return Err(fail(20, "checkpoint holds parameters the model does not use".into()));
        }
        let adam = manifest.adam_step.map(|t| AdamState { m, v, t });
        Ok(Self {
            config: manifest.config,
            d_in: manifest.d_in,
            epoch: manifest.epoch,
            table,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_adam: bool) -> Checkpoint {
        let cfg = ModelConfig {
            d: 4,
            predictor_hidden: 3,
            embed_dim: 2,
            seed: 9,
            ..Default::default()
        };
        let model = Acrm::new(&cfg, 3).unwrap();
        let vocab = Vocabulary::from(vec!["<unk>".to_string(), "x".into()]);
        let table = EmbeddingTable::new(vocab, 2, vec![0.1, -0.2, 0.3, 1e-7]).unwrap();
        let params = model.init_params::<f64>();
        let mut adam = AdamState::new();
        if with_adam {
            for (k, v) in params.iter() {
                adam.m.insert(k.clone(), v.map(|x| x * 0.5));
                adam.v.insert(k.clone(), v.map(|x| x * x));
            }
            adam.t = 17;
        }
        Checkpoint::new(&model, 4, &table, &params, with_adam.then_some(&adam))
    }

    #[test]
    fn byte_round_trip() {
        for with_adam in [false, true] {
            let c = sample(with_adam);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_files_name_the_offset() {
        let bytes = sample(false).to_bytes();
        let p = Path::new("x.ckpt");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad, p),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bad, p),
            Err(Error::Format { offset: 8, .. })
        ));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::from_bytes(truncated, p),
            Err(Error::Format { .. })
        ));
        assert!(Checkpoint::from_bytes(&bytes[..10], p).is_err());
    }
}
