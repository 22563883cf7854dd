//! Versioned checkpoint container.
//!
//! Layout, little-endian:
//!   magic "DCKC" | version u16 | config fingerprint u64
//!   | config-json len u32 + bytes | delta_scale f64
//!   | entry count u32 | entries { name len u16 + utf8, tensor snapshot }
//!
//! Tensor snapshots use the DCT1 format from dcg-tensor. Loading refuses a
//! container whose architecture config disagrees with the expected one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dcg_tensor::{read_tensor, write_tensor, AnyTensor, Scalar};

use crate::config::{fingerprint_config, ModelConfig};
use crate::error::{CoreError, Result};
use crate::model::SketchModel;

pub const MAGIC: [u8; 4] = *b"DCKC";
pub const VERSION: u16 = 1;

pub fn save_model<T: Scalar>(model: &SketchModel<T>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w)
}

pub fn write_model<T: Scalar, W: Write>(model: &SketchModel<T>, w: &mut W) -> Result<()> {
    let config_json = serde_json::to_vec(model.config())?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&fingerprint_config(model.config())?.to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&model.delta_scale().to_le_bytes())?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for id in params.ids() {
        let name = params.name(id);
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, params.get(id))?;
    }
    Ok(())
}

pub struct LoadedCheckpoint {
    pub config: ModelConfig,
    pub fingerprint: u64,
    pub delta_scale: f64,
    pub entries: Vec<(String, AnyTensor)>,
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<LoadedCheckpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut fp = [0u8; 8];
    r.read_exact(&mut fp)?;
    let fingerprint = u64::from_le_bytes(fp);
    let mut len_b = [0u8; 4];
    r.read_exact(&mut len_b)?;
    let mut config_json = vec![0u8; u32::from_le_bytes(len_b) as usize];
    r.read_exact(&mut config_json)?;
    let config: ModelConfig = serde_json::from_slice(&config_json)?;
    let mut ds = [0u8; 8];
    r.read_exact(&mut ds)?;
    let delta_scale = f64::from_le_bytes(ds);
    let mut count_b = [0u8; 4];
    r.read_exact(&mut count_b)?;
    let count = u32::from_le_bytes(count_b) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nlen = [0u8; 2];
        r.read_exact(&mut nlen)?;
        let mut name = vec![0u8; u16::from_le_bytes(nlen) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        entries.push((name, read_tensor(r)?));
    }
    Ok(LoadedCheckpoint {
        config,
        fingerprint,
        delta_scale,
        entries,
    })
}

/// Rebuild a model from a checkpoint. When `expected` is given, the stored
/// architecture must match exactly (ablation flags included) or loading is
/// refused.
pub fn load_model<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<SketchModel<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let loaded = read_checkpoint(&mut r)?;
    if let Some(expect) = expected {
        if *expect != loaded.config {
            return Err(CoreError::ConfigMismatch(format!(
                "checkpoint was built for {:?}, expected {:?}",
                loaded.config, expect
            )));
        }
    }
    let stored_fp = fingerprint_config(&loaded.config)?;
    if stored_fp != loaded.fingerprint {
        return Err(CoreError::Checkpoint(
            "config fingerprint does not match stored config".into(),
        ));
    }
    let mut model = SketchModel::<T>::init(loaded.config, 0)?;
    model.set_delta_scale(loaded.delta_scale);
    let params = model.params_mut();
    if loaded.entries.len() != params.len() {
        return Err(CoreError::Checkpoint(format!(
            "{} tensors stored, model has {}",
            loaded.entries.len(),
            params.len()
        )));
    }
    for (name, tensor) in loaded.entries {
        let id = params.id_of(&name).ok_or_else(|| {
            CoreError::Checkpoint(format!("stored tensor {name:?} has no slot in the model"))
        })?;
        let cast = tensor.cast_to::<T>();
        if cast.shape() != params.get(id).shape() {
            return Err(CoreError::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, model wants {:?}",
                cast.shape(),
                params.get(id).shape()
            )));
        }
        params.set(id, cast);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PeFlags;

    #[test]
    fn save_load_roundtrip_preserves_params_bitwise() {
        let dir = std::env::temp_dir().join("dcg_ckpt_test_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let mut model = SketchModel::<f32>::init(ModelConfig::gradcheck_micro(), 42).unwrap();
        model.set_delta_scale(17.5);
        save_model(&model, &path).unwrap();
        let back = load_model::<f32>(&path, Some(&ModelConfig::gradcheck_micro())).unwrap();
        assert_eq!(back.delta_scale(), 17.5);
        for id in model.params().ids() {
            assert_eq!(
                model.params().get(id),
                back.params().get(back.params().id_of(model.params().name(id)).unwrap())
            );
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mismatched_architecture_refused() {
        let dir = std::env::temp_dir().join("dcg_ckpt_test_mismatch");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let model = SketchModel::<f32>::init(ModelConfig::gradcheck_micro(), 0).unwrap();
        save_model(&model, &path).unwrap();
        let err = match load_model::<f32>(&path, Some(&ModelConfig::toy())) {
            Err(e) => e,
            Ok(_) => panic!("mismatched config must be refused"),
        };
        assert!(matches!(err, CoreError::ConfigMismatch(_)));
        // Flag differences also count as architecture differences.
        let mut flagged = ModelConfig::gradcheck_micro();
        flagged.flags = PeFlags {
            absolute_pe: false,
            relative_pe: true,
            pe_in_edges: false,
        };
        assert!(load_model::<f32>(&path, Some(&flagged)).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn two_saves_of_same_model_are_byte_identical() {
        let model = SketchModel::<f32>::init(ModelConfig::gradcheck_micro(), 4).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_model(&model, &mut a).unwrap();
        write_model(&model, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
