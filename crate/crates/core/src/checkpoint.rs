//! Checkpoint directory: `params.bin` holds every parameter as
//! little-endian f32 values back to back; `manifest.json` lists the model
//! spec, each parameter's name/shape/offset/decay flag, and the vocabulary,
//! domain labels and encoding options needed to rebuild inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EncodeOptions, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::params::Params;
use crate::tensor::Tensor;

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements from the start of `params.bin`.
    pub offset: usize,
    pub decay: bool,
}

/// Everything besides the weights needed to run a checkpoint on raw data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab: Vocab,
    pub domains: Vec<String>,
    pub encode: EncodeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec: ModelSpec,
    pub params: Vec<ParamRecord>,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(dir: &Path, model: &Model<f32>, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(4 * model.params.num_scalars());
    let mut records = Vec::with_capacity(model.params.len());
    for (name, entry) in model.params.iter() {
        records.push(ParamRecord {
            name: name.to_string(),
            shape: entry.tensor.shape().to_vec(),
            offset: bytes.len() / 4,
            decay: entry.decay,
        });
        for v in entry.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        spec: model.spec.clone(),
        params: records,
        meta: meta.clone(),
    };
    write_atomic(&dir.join(PARAMS_FILE), &bytes)?;
    write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads and checks a checkpoint against the parameter layout its spec
/// implies.
pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.version)));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{PARAMS_FILE} length {} is not a multiple of 4", bytes.len())));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let template = Model::<f32>::new(manifest.spec.clone())?;
    if template.params.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "spec implies {} parameters, manifest lists {}",
            template.params.len(),
            manifest.params.len()
        )));
    }
    let mut params = Params::new();
    let mut expected_offset = 0;
    for r in &manifest.params {
        let want = template
            .params
            .get(&r.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{}`", r.name)))?;
        if want.shape() != r.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {:?}, spec expects {:?}",
                r.name,
                r.shape,
                want.shape()
            )));
        }
        if r.offset != expected_offset {
            return Err(Error::Checkpoint(format!("`{}` at offset {}, expected {expected_offset}", r.name, r.offset)));
        }
        let n: usize = r.shape.iter().product();
        let data = values
            .get(r.offset..r.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("{PARAMS_FILE} too short for `{}`", r.name)))?;
        params.insert(&r.name, Tensor::new(r.shape.clone(), data.to_vec())?, r.decay);
        expected_offset += n;
    }
    if expected_offset != values.len() {
        return Err(Error::Checkpoint(format!(
            "{PARAMS_FILE} holds {} values, manifest accounts for {expected_offset}",
            values.len()
        )));
    }
    Ok((
        Model {
            spec: manifest.spec,
            params,
        },
        manifest.meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::Task;
    use crate::post::PostEncoder;

    fn model() -> Model<f32> {
        Model::new(ModelSpec {
            encoder: EncoderConfig {
                vocab_size: 20,
                max_seq_len: 8,
                hidden_size: 8,
                num_layers: 2,
                num_heads: 2,
                ffn_size: 16,
                dropout_rate: 0.1,
                seed: 5,
            },
            post: PostEncoder::Bilstm,
            tasks: vec![Task::Qa, Task::Sbj, Task::Dom],
            ..ModelSpec::default()
        })
        .unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            vocab: Vocab::build(["a b c"], None),
            domains: vec!["books".into()],
            encode: EncodeOptions::default(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(dir.path(), &m, &meta()).unwrap();
        let (back, mt) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.spec, m.spec);
        assert_eq!(mt, meta());
        let names: Vec<&str> = back.params.names().collect();
        assert_eq!(names, m.params.names().collect::<Vec<_>>());
        for (name, e) in m.params.iter() {
            let b = back.params.entry(name).unwrap();
            assert_eq!(b.decay, e.decay);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&b.tensor), bits(&e.tensor));
        }
        let bytes = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(bytes.len(), 4 * m.params.num_scalars());
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model(), &meta()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model(), &meta()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        m.spec.encoder.hidden_size = 16;
        m.spec.encoder.ffn_size = 32;
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
