//! Model persistence: a structured-text (TOML) document holding the flow
//! spec, per-block flat parameter arrays, and the base distribution, with a
//! version field checked on load. Parameter round-trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::flow::{FlowModel, FlowSpec};
use crate::targets::{BaseDistribution, PlanarStack};
use crate::velocity::VelocityField;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Either flow family, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SavedFlow {
    Ddnf { spec: FlowSpec, blocks: Vec<Vec<f64>> },
    Planar { dim: usize, layers: usize, params: Vec<f64> },
}

/// On-disk model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub version: u32,
    pub base: BaseDistribution,
    pub flow: SavedFlow,
}

impl SavedModel {
    pub fn from_ddnf(model: &FlowModel, base: &BaseDistribution) -> Self {
        SavedModel {
            version: MODEL_FORMAT_VERSION,
            base: base.clone(),
            flow: SavedFlow::Ddnf {
                spec: model.spec.clone(),
                blocks: model.blocks.iter().map(|b| b.params.values.clone()).collect(),
            },
        }
    }

    pub fn from_planar(stack: &PlanarStack, base: &BaseDistribution) -> Self {
        SavedModel {
            version: MODEL_FORMAT_VERSION,
            base: base.clone(),
            flow: SavedFlow::Planar {
                dim: stack.dim,
                layers: stack.n_layers,
                params: stack.params.clone(),
            },
        }
    }

    /// Validate and rebuild the in-memory model.
    pub fn into_ddnf(self) -> Result<(FlowModel, BaseDistribution)> {
        let SavedModel { version, base, flow } = self.validated()?;
        debug_assert_eq!(version, MODEL_FORMAT_VERSION);
        match flow {
            SavedFlow::Ddnf { spec, blocks } => {
                let layout = spec.velocity.layout();
                let fields = blocks
                    .into_iter()
                    .map(|values| {
                        Ok(VelocityField {
                            spec: spec.velocity.clone(),
                            params: ParamVector::new(values, layout.clone())
                                .map_err(|e| Error::ModelValidation(e.to_string()))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((FlowModel::from_blocks(spec, fields)?, base))
            }
            SavedFlow::Planar { .. } => {
                Err(Error::ModelValidation("expected a ddnf model, found planar".into()))
            }
        }
    }

    pub fn into_planar(self) -> Result<(PlanarStack, BaseDistribution)> {
        let SavedModel { base, flow, .. } = self.validated()?;
        match flow {
            SavedFlow::Planar { dim, layers, params } => {
                Ok((PlanarStack::from_params(dim, layers, params)?, base))
            }
            SavedFlow::Ddnf { .. } => {
                Err(Error::ModelValidation("expected a planar model, found ddnf".into()))
            }
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelValidation(format!(
                "unsupported model format version {} (supported: {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        match &self.flow {
            SavedFlow::Ddnf { spec, blocks } => {
                spec.validate().map_err(|e| Error::ModelValidation(e.to_string()))?;
                if blocks.len() != spec.blocks {
                    return Err(Error::ModelValidation(format!(
                        "spec declares {} blocks but {} parameter arrays are present",
                        spec.blocks,
                        blocks.len()
                    )));
                }
                let expected = spec.velocity.param_count();
                for (k, b) in blocks.iter().enumerate() {
                    if b.len() != expected {
                        return Err(Error::ModelValidation(format!(
                            "block {k}: expected {expected} parameters, found {}",
                            b.len()
                        )));
                    }
                }
            }
            SavedFlow::Planar { dim, layers, params } => {
                if params.len() != PlanarStack::param_count(*dim, *layers) {
                    return Err(Error::ModelValidation(format!(
                        "planar stack: expected {} parameters, found {}",
                        PlanarStack::param_count(*dim, *layers),
                        params.len()
                    )));
                }
            }
        }
        if self.base.mu.len() != self.base.dim || self.base.log_sigma.len() != self.base.dim {
            return Err(Error::ModelValidation("base distribution arrays mismatch dim".into()));
        }
        Ok(self)
    }
}

pub fn save_model(doc: &SavedModel, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(doc)
        .map_err(|e| Error::ModelValidation(format!("serialize: {e}")))?;
    std::fs::write(path, text)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let doc: SavedModel = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    doc.validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("velflow-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn random_model(seed: u64) -> (FlowModel, BaseDistribution) {
        let mut spec = FlowSpec::new(2, 3, 2);
        spec.velocity.init_scale = 1.3;
        let model = FlowModel::init(spec, seed).unwrap();
        let base = BaseDistribution::new(vec![0.2, -0.4], vec![0.05, -0.1], true).unwrap();
        (model, base)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, base) = random_model(5);
        let path = tmp("roundtrip.toml");
        save_model(&SavedModel::from_ddnf(&model, &base), &path).unwrap();
        let (loaded, loaded_base) = load_model(&path).unwrap().into_ddnf().unwrap();
        assert_eq!(loaded_base, base);
        assert_eq!(loaded.spec, model.spec);
        for (a, b) in loaded.blocks.iter().zip(&model.blocks) {
            assert_eq!(a.params.values, b.params.values); // bitwise
        }
        // forward agreement on 100 points, bitwise
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let z = rng.normal_vec(2);
            let a = model.forward(&z, None, false).unwrap();
            let b = loaded.forward(&z, None, false).unwrap();
            assert_eq!(a.z_out, b.z_out);
            assert_eq!(a.sum_logdet, b.sum_logdet);
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let (model, base) = random_model(6);
        let path = tmp("truncated.toml");
        save_model(&SavedModel::from_ddnf(&model, &base), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_model(&path) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parameter_count_mismatch_fails_validation() {
        let (model, base) = random_model(7);
        let mut doc = SavedModel::from_ddnf(&model, &base);
        if let SavedFlow::Ddnf { blocks, .. } = &mut doc.flow {
            blocks[1].pop();
        }
        let path = tmp("badcount.toml");
        let text = toml::to_string_pretty(&doc).unwrap();
        std::fs::write(&path, text).unwrap();
        match load_model(&path) {
            Err(Error::ModelValidation(msg)) => assert!(msg.contains("block 1")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn version_is_checked() {
        let (model, base) = random_model(8);
        let mut doc = SavedModel::from_ddnf(&model, &base);
        doc.version = 99;
        let path = tmp("badversion.toml");
        std::fs::write(&path, toml::to_string_pretty(&doc).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelValidation(_))));
    }

    #[test]
    fn planar_roundtrip() {
        let stack = PlanarStack::init(2, 4, 12).unwrap();
        let base = BaseDistribution::standard(2);
        let path = tmp("planar.toml");
        save_model(&SavedModel::from_planar(&stack, &base), &path).unwrap();
        let (loaded, _) = load_model(&path).unwrap().into_planar().unwrap();
        assert_eq!(loaded.params, stack.params);
        // family mismatch is a validation error
        assert!(load_model(&path).unwrap().into_ddnf().is_err());
    }
}
