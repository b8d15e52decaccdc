//! Model checkpoints: a JSON manifest describing named f32 tensors in a
//! little-endian blob, with one CRC32 over the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::denoiser::optim::AdamW;
use crate::denoiser::{ArchConfig, DenoiserModel, EpochLoss, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleParams};

pub const MAGIC: &[u8; 8] = b"DXOCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const OPT_M: &str = "optimizer.m";
const OPT_V: &str = "optimizer.v";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

/// Optimizer scalars and loss history; the moment vectors live in the blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub step: u64,
    pub history: Vec<EpochLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub image_shape: [usize; 3],
    pub schedule: ScheduleParams,
    pub tensors: Vec<TensorEntry>,
    pub blob_len: u64,
    pub blob_crc32: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerState>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub trainer: Option<Trainer>,
}

pub fn encode_checkpoint(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    trainer: Option<&Trainer>,
) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, values: &[f32], blob: &mut Vec<u8>| {
        let offset = blob.len() as u64;
        super::f32_to_le(values, blob);
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape,
            offset,
            length: blob.len() as u64 - offset,
        });
    };
    for (entry, values) in model.named_params() {
        push(&entry.name, entry.shape.clone(), values, &mut blob);
    }
    let trainer_state = trainer.map(|t| {
        let o = &t.optimizer;
        push(OPT_M, vec![o.m.len()], &o.m, &mut blob);
        push(OPT_V, vec![o.v.len()], &o.v, &mut blob);
        TrainerState {
            config: t.config.clone(),
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            step: o.step,
            history: t.history.clone(),
        }
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        arch: model.arch().clone(),
        image_shape: model.image_shape(),
        schedule: sched.params(),
        tensors,
        blob_len: blob.len() as u64,
        blob_crc32: crc32fast::hash(&blob),
        trainer: trainer_state,
    };
    let json = serde_json::to_vec(&manifest)?;
    Ok(container::encode(MAGIC, &json, &blob))
}

pub fn save_checkpoint(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    trainer: Option<&Trainer>,
    path: impl AsRef<Path>,
) -> Result<()> {
    super::write_file(path.as_ref(), &encode_checkpoint(model, sched, trainer)?)
}

pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let (json, blob, blob_start) = container::decode("checkpoint", MAGIC, bytes)?;
    let manifest: Manifest = serde_json::from_slice(json)
        .map_err(|e| Error::format("checkpoint manifest", 16, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if blob.len() as u64 != manifest.blob_len {
        return Err(Error::Load(format!(
            "blob is {} bytes, manifest says {} (at byte {blob_start})",
            blob.len(),
            manifest.blob_len
        )));
    }
    if crc32fast::hash(blob) != manifest.blob_crc32 {
        return Err(Error::Load("blob checksum mismatch".into()));
    }
    for t in &manifest.tensors {
        let end = t.offset.checked_add(t.length);
        if t.dtype != "f32" || end.is_none_or(|e| e > manifest.blob_len) || t.length % 4 != 0 {
            return Err(Error::Load(format!(
                "tensor {:?} has an invalid directory entry",
                t.name
            )));
        }
        if t.shape.iter().product::<usize>() as u64 * 4 != t.length {
            return Err(Error::Load(format!(
                "tensor {:?} length disagrees with its shape",
                t.name
            )));
        }
    }
    Ok((manifest, blob))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (manifest, blob) = read_manifest(bytes)?;
    let schedule = NoiseSchedule::from_params(manifest.schedule)?;
    let find = |name: &str| -> Result<Vec<f32>> {
        let t = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Load(format!("tensor {name:?} missing")))?;
        Ok(super::le_to_f32(
            &blob[t.offset as usize..(t.offset + t.length) as usize],
        ))
    };
    let skeleton = DenoiserModel::new(manifest.arch.clone(), manifest.image_shape, 0)?;
    let mut params = vec![0.0f32; skeleton.params().len()];
    for (entry, _) in skeleton.named_params() {
        let values = find(&entry.name)?;
        if values.len() != entry.len {
            return Err(Error::Load(format!(
                "tensor {:?} has the wrong size",
                entry.name
            )));
        }
        params[entry.offset..entry.offset + entry.len].copy_from_slice(&values);
    }
    let model = DenoiserModel::from_params(manifest.arch.clone(), manifest.image_shape, params)?;
    let trainer = match manifest.trainer {
        None => None,
        Some(s) => {
            let (m, v) = (find(OPT_M)?, find(OPT_V)?);
            if m.len() != model.params().len() || v.len() != m.len() {
                return Err(Error::Load(
                    "optimizer state does not match the model".into(),
                ));
            }
            Some(Trainer {
                config: s.config,
                optimizer: AdamW {
                    learning_rate: s.learning_rate,
                    beta1: s.beta1,
                    beta2: s.beta2,
                    eps: s.eps,
                    weight_decay: s.weight_decay,
                    step: s.step,
                    m,
                    v,
                },
                history: s.history,
            })
        }
    };
    Ok(Checkpoint {
        model,
        schedule,
        trainer,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (DenoiserModel, NoiseSchedule) {
        let arch = ArchConfig {
            base_width: 4,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            time_dim: 8,
            norm_groups: 2,
        };
        (
            DenoiserModel::new(arch, [1, 4, 4], 1).unwrap(),
            NoiseSchedule::linear(10, 1e-3, 0.1).unwrap(),
        )
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let (m, s) = tiny();
        let a = encode_checkpoint(&m, &s, None).unwrap();
        let back = decode_checkpoint(&a).unwrap();
        assert_eq!(back.model.params(), m.params());
        assert_eq!(
            encode_checkpoint(&back.model, &back.schedule, None).unwrap(),
            a
        );
    }

    #[test]
    fn trainer_state_round_trips() {
        let (m, s) = tiny();
        let mut cfg = TrainConfig::mnist();
        cfg.epochs = 1;
        cfg.checkpoint_interval = 1;
        let mut t = Trainer::new(cfg, &m).unwrap();
        t.optimizer.m[3] = 0.25;
        t.optimizer.step = 7;
        t.history.push(EpochLoss {
            epoch: 1,
            mean_loss: 0.5,
        });
        let bytes = encode_checkpoint(&m, &s, Some(&t)).unwrap();
        let back = decode_checkpoint(&bytes).unwrap().trainer.unwrap();
        assert_eq!(back.optimizer.m, t.optimizer.m);
        assert_eq!(back.optimizer.step, 7);
        assert_eq!(back.history, t.history);
    }

    #[test]
    fn corruption_is_detected() {
        let (m, s) = tiny();
        let good = encode_checkpoint(&m, &s, None).unwrap();
        let mut flipped = good.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Load(_))));
        assert!(decode_checkpoint(&good[..good.len() - 4]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (m, s) = tiny();
        let good = encode_checkpoint(&m, &s, None).unwrap();
        let (json, blob, _) = container::decode("checkpoint", MAGIC, &good).unwrap();
        let mut manifest: Manifest = serde_json::from_slice(json).unwrap();
        manifest.format_version = 99;
        let bytes = container::encode(MAGIC, &serde_json::to_vec(&manifest).unwrap(), blob);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Load(_))));
    }
}
