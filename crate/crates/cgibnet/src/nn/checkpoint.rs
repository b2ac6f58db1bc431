//! Checkpoint serialization: a JSON manifest carrying the architecture
//! signature plus named flat f64 arrays in one little-endian binary blob.
//! Loads are validated against the destination store's signature.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CgibError, Result};

use super::params::{ParamStore, Signature};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub seed: u64,
    pub label: String,
    pub signature: Signature,
}

/// Write `stores` (label -> store) under `dir` as `<label>.json` + `<label>.bin`.
pub fn save(dir: &Path, seed: u64, stores: &[(&str, &ParamStore)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (label, store) in stores {
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            seed,
            label: label.to_string(),
            signature: store.signature(),
        };
        fs::write(dir.join(format!("{label}.json")), serde_json::to_vec_pretty(&manifest)?)?;
        let mut bytes = Vec::with_capacity(store.len() * 8);
        for v in store.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(format!("{label}.bin")), bytes)?;
    }
    Ok(())
}

/// Load `<label>` from `dir` into `store`, validating the signature.
pub fn load(dir: &Path, label: &str, store: &mut ParamStore) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(dir.join(format!("{label}.json")))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CgibError::CheckpointMismatch(format!(
            "version {} != {}",
            manifest.version, CHECKPOINT_VERSION
        )));
    }
    let expect = store.signature();
    if manifest.signature != expect {
        return Err(CgibError::CheckpointMismatch(format!(
            "architecture signature for '{label}' does not match this model"
        )));
    }
    let bytes = fs::read(dir.join(format!("{label}.bin")))?;
    if bytes.len() != store.len() * 8 {
        return Err(CgibError::CheckpointMismatch(format!(
            "parameter blob for '{label}' holds {} bytes, expected {}",
            bytes.len(),
            store.len() * 8
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    store.set_data(&data);
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::rng::Pcg;

    #[test]
    fn roundtrip_and_signature_validation() {
        let dir = std::env::temp_dir().join(format!("ckpt_test_{}", std::process::id()));
        let mut rng = Pcg::from_seed_u64(2);
        let mut store = ParamStore::new();
        let _ = Linear::new(&mut store, "probe", 3, 2, &mut rng);
        let original = store.data().to_vec();

        save(&dir, 7, &[("actor", &store)]).unwrap();
        for v in store.data_mut() {
            *v = 0.0;
        }
        let manifest = load(&dir, "actor", &mut store).unwrap();
        assert_eq!(manifest.seed, 7);
        assert_eq!(store.data(), &original[..]);

        // different architecture must be rejected
        let mut other = ParamStore::new();
        let _ = Linear::new(&mut other, "probe", 4, 2, &mut rng);
        assert!(load(&dir, "actor", &mut other).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
