//! The assembled pipeline: encoder, hasher and (in GZSL mode) the seen
//! emitter identifier, plus a versioned JSON snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Embedding, EncoderConfig, SignalEncoder};
use crate::error::{CashError, Result};
use crate::hasher::{BinaryCode, Hasher, HasherConfig};
use crate::identifier::{Identifier, IdentifierConfig, IdentifierState};
use crate::nn::{export_tensors, import_tensors, prefixed, NamedTensor, ParamView, Parameterized};
use crate::rng;
use crate::signal::{center_slice, EmitterId, IqSignal};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Full pipeline with the seen-emitter indicator.
    Gzsl,
    /// Few-shot mode: every sample receives the same indicator.
    Fsl,
    /// Single sign projector, no identifier.
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub encoder: EncoderConfig,
    pub hasher: HasherConfig,
    pub identifier: Option<IdentifierConfig>,
    pub seen_classes: Vec<EmitterId>,
}

impl ModelConfig {
    pub fn new(mode: ModelMode, encoder: EncoderConfig, code_length: usize, seen: Vec<EmitterId>) -> Self {
        let dim = encoder.embedding_dim;
        let desk = matches!(encoder.backbone, crate::encoder::BackboneConfig::DeskSmall { .. });
        let mut hasher = if desk { HasherConfig::desk(dim, code_length) } else { HasherConfig::paper_gzsl(dim) };
        hasher.code_length = code_length;
        hasher.confidence_head = mode != ModelMode::Vanilla;
        let identifier = (mode == ModelMode::Gzsl).then(|| {
            if desk {
                IdentifierConfig::desk(dim)
            } else {
                IdentifierConfig::paper(dim)
            }
        });
        Self { mode, encoder, hasher, identifier, seen_classes: seen }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.hasher.validate()?;
        if self.hasher.input_dim != self.encoder.embedding_dim {
            return Err(CashError::DimensionMismatch {
                context: "hasher input vs embedding",
                expected: self.encoder.embedding_dim,
                actual: self.hasher.input_dim,
            });
        }
        match (&self.identifier, self.mode) {
            (Some(id), ModelMode::Gzsl) => {
                id.validate()?;
                if id.input_dim != self.encoder.embedding_dim {
                    return Err(CashError::DimensionMismatch {
                        context: "identifier input vs embedding",
                        expected: self.encoder.embedding_dim,
                        actual: id.input_dim,
                    });
                }
                if self.seen_classes.is_empty() {
                    return Err(CashError::Empty("seen classes"));
                }
            }
            (None, ModelMode::Fsl | ModelMode::Vanilla) => {}
            (_, mode) => {
                return Err(CashError::InvalidParameter(format!(
                    "identifier configuration does not match mode {mode:?}"
                )))
            }
        }
        if self.mode == ModelMode::Vanilla && self.hasher.confidence_head {
            return Err(CashError::InvalidParameter("vanilla hasher has no confidence head".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CashModel {
    pub config: ModelConfig,
    pub encoder: SignalEncoder,
    pub hasher: Hasher,
    pub identifier: Option<Identifier>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub version: u32,
    pub config: ModelConfig,
    pub identifier_state: Option<IdentifierState>,
    pub tensors: Vec<NamedTensor>,
}

impl CashModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = SignalEncoder::new(config.encoder.clone(), &mut rng::stream(seed, "init-encoder"))?;
        let hasher = Hasher::new(config.hasher.clone(), &mut rng::stream(seed, "init-hasher"))?;
        let identifier = match &config.identifier {
            Some(c) => Some(Identifier::new(
                c.clone(),
                config.seen_classes.clone(),
                &mut rng::stream(seed, "init-identifier"),
            )?),
            None => None,
        };
        Ok(Self { config, encoder, hasher, identifier })
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    pub fn input_length(&self) -> usize {
        self.config.encoder.input_length
    }

    /// Embedding of the center window of a received signal.
    pub fn embed(&self, signal: &IqSignal) -> Result<Embedding> {
        self.encoder.extract_embedding(&center_slice(signal, self.input_length())?)
    }

    pub fn hard_hash(&self, e: &Embedding) -> Result<BinaryCode> {
        self.hasher.hard_hash(e)
    }

    /// The seen-emitter indicator; constant `+1` outside GZSL mode.
    pub fn indicator(&self, e: &Embedding) -> Result<i8> {
        match (&self.identifier, self.mode()) {
            (Some(id), ModelMode::Gzsl) => id.indicate(e),
            _ => Ok(1),
        }
    }

    pub fn to_snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            version: SNAPSHOT_VERSION,
            config: self.config.clone(),
            identifier_state: self.identifier.as_ref().and_then(|i| i.state),
            tensors: export_tensors(self),
        }
    }

    pub fn from_snapshot(snapshot: &ModelSnapshot) -> Result<Self> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(CashError::Version { what: "model snapshot", found: snapshot.version });
        }
        let mut model = Self::new(snapshot.config.clone(), 0)?;
        import_tensors(&mut model, &snapshot.tensors)?;
        if let Some(id) = &mut model.identifier {
            id.state = snapshot.identifier_state;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_snapshot())?;
        std::fs::write(path, text).map_err(|e| CashError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CashError::io(path, e))?;
        Self::from_snapshot(&serde_json::from_str(&text)?)
    }
}

impl Parameterized for CashModel {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("hasher", self.hasher.params()));
        if let Some(id) = &self.identifier {
            v.extend(prefixed("identifier", id.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.params_mut();
        v.extend(self.hasher.params_mut());
        if let Some(id) = &mut self.identifier {
            v.extend(id.params_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{simulate_emitter_signal, EmitterProfile};

    fn desk_config(mode: ModelMode) -> ModelConfig {
        let mut enc = EncoderConfig::desk();
        enc.input_length = 32;
        ModelConfig::new(mode, enc, 6, vec![3, 5])
    }

    #[test]
    fn modes_validate() {
        for mode in [ModelMode::Gzsl, ModelMode::Fsl, ModelMode::Vanilla] {
            let m = CashModel::new(desk_config(mode), 1).unwrap();
            assert_eq!(m.identifier.is_some(), mode == ModelMode::Gzsl);
            assert_eq!(m.hasher.confidence_head.is_some(), mode != ModelMode::Vanilla);
        }
        let mut bad = desk_config(ModelMode::Fsl);
        bad.identifier = desk_config(ModelMode::Gzsl).identifier;
        assert!(CashModel::new(bad, 1).is_err());
        let mut bad = desk_config(ModelMode::Vanilla);
        bad.hasher.confidence_head = true;
        assert!(CashModel::new(bad, 1).is_err());
        let mut bad = desk_config(ModelMode::Gzsl);
        bad.hasher.input_dim += 1;
        assert!(CashModel::new(bad, 1).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = CashModel::new(desk_config(ModelMode::Gzsl), 7).unwrap();
        m.identifier.as_mut().unwrap().state =
            Some(IdentifierState { threshold: -0.25, gamma: 0.95, calibration_set_size: 40 });
        m.identifier.as_mut().unwrap().points.radius[0] = 0.3;
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = CashModel::load(&path).unwrap();
        assert_eq!(back, m);

        let signal = simulate_emitter_signal(&EmitterProfile::ideal(2), 50, 20.0, 3).unwrap();
        let e = m.embed(&signal).unwrap();
        assert_eq!(back.embed(&signal).unwrap(), e);
        assert_eq!(back.hard_hash(&e).unwrap(), m.hard_hash(&e).unwrap());
        assert_eq!(back.indicator(&e).unwrap(), m.indicator(&e).unwrap());

        let mut snap = m.to_snapshot();
        snap.version = 9;
        assert!(matches!(CashModel::from_snapshot(&snap), Err(CashError::Version { found: 9, .. })));
        let mut snap = m.to_snapshot();
        snap.tensors.pop();
        assert!(CashModel::from_snapshot(&snap).is_err());
    }

    #[test]
    fn uncalibrated_gzsl_indicator_errors_and_fsl_is_constant() {
        let signal = simulate_emitter_signal(&EmitterProfile::ideal(2), 40, 20.0, 3).unwrap();
        let m = CashModel::new(desk_config(ModelMode::Gzsl), 7).unwrap();
        let e = m.embed(&signal).unwrap();
        assert!(matches!(m.indicator(&e), Err(CashError::Uncalibrated)));
        let f = CashModel::new(desk_config(ModelMode::Fsl), 7).unwrap();
        assert_eq!(f.indicator(&f.embed(&signal).unwrap()).unwrap(), 1);
        let short = simulate_emitter_signal(&EmitterProfile::ideal(2), 10, 20.0, 3).unwrap();
        assert!(matches!(f.embed(&short), Err(CashError::SignalTooShort { .. })));
    }
}
