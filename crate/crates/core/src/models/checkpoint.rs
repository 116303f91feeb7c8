use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, ModelBundle};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// JSON container for a trained bundle. Floats are written in shortest
/// round-trip form, so save followed by load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub bundle: ModelBundle,
    pub optimizers: BTreeMap<String, Adam>,
    /// Frozen pseudo-sensitive groups, when a pretraining stage produced them.
    pub frozen_groups: Option<Vec<u8>>,
}

impl Checkpoint {
    pub fn new(seed: u64, bundle: ModelBundle) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            seed,
            bundle,
            optimizers: BTreeMap::new(),
            frozen_groups: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema {} unsupported (expected {CHECKPOINT_SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AdamConfig, Backbone, ModelConfig, Parameters};

    #[test]
    fn round_trip_is_bit_exact() {
        for backbone in [Backbone::Gcn, Backbone::Jk, Backbone::Appnp] {
            let mut bundle = ModelBundle::init(ModelConfig { backbone, ..Default::default() }, 6, 42).unwrap();
            // Awkward values: subnormal, non-representable decimal, negative zero.
            bundle.encoder.layers[0].weight[[0, 0]] = 5e-324;
            bundle.encoder.layers[0].weight[[0, 1]] = 0.1 + 0.2;
            bundle.encoder.layers[0].weight[[0, 2]] = -0.0;
            let mut ck = Checkpoint::new(42, bundle.clone());
            let mut adam = Adam::new(&bundle.encoder, AdamConfig::default());
            let grads = bundle.encoder.tensors().iter().map(|t| t.mapv(|v| v * 0.37 + 1e-3)).collect();
            adam.step(&mut ck.bundle.encoder, &grads).unwrap();
            ck.optimizers.insert("encoder".into(), adam);
            ck.frozen_groups = Some(vec![0, 1, 1, 0]);

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ck.json");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back.bundle.encoder.param_hash(), ck.bundle.encoder.param_hash());
            assert_eq!(back.bundle.heads.param_hash(), ck.bundle.heads.param_hash());
            assert_eq!(back.optimizers["encoder"], ck.optimizers["encoder"]);
            assert_eq!(back.bundle.config.backbone, backbone);
            assert_eq!(back.frozen_groups, ck.frozen_groups);
            assert!(back.bundle.encoder.layers[0].weight[[0, 2]].is_sign_negative());
        }
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let bundle = ModelBundle::init(ModelConfig::default(), 3, 1).unwrap();
        let mut ck = Checkpoint::new(1, bundle);
        ck.schema_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Schema(_))));
    }
}
