//! Checkpoint and config documents.
//!
//! Both are UTF-8 JSON. Weight matrices are flat row-major arrays and floats
//! are written in shortest round-trip form, so a save/load cycle reproduces
//! every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EpisodeConfig;
use crate::error::{Error, Result};
use crate::trainer::{ActorCritic, PolicyVariant, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "wayfarer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate or serve a trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: PolicyVariant,
    /// Episode settings used in training, with the variant's styles applied.
    pub episode: EpisodeConfig,
    pub model: ActorCritic,
    pub iteration: u64,
    pub env_steps: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        variant: PolicyVariant,
        episode: EpisodeConfig,
        model: ActorCritic,
        iteration: u64,
        env_steps: u64,
        seed: u64,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            variant,
            episode,
            model,
            iteration,
            env_steps,
            seed,
        }
    }

    /// Consistency between the networks and the episode settings.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag `{}`",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads version {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        self.episode.validate()?;
        self.model.validate()?;
        if self.episode.training_style != self.variant.training_style()
            || self.episode.info_style != self.variant.info_style()
        {
            return Err(Error::Checkpoint(format!(
                "episode styles do not match variant {}",
                self.variant.id()
            )));
        }
        let (obs, act) = (self.episode.obs_dim(), self.episode.action_dim());
        if self.model.policy.input_dim() != obs || self.model.policy.output_dim() != act {
            return Err(Error::Checkpoint(format!(
                "policy is {}->{} but the episode needs {}->{}",
                self.model.policy.input_dim(),
                self.model.policy.output_dim(),
                obs,
                act
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: "serializing checkpoint".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Look at the header first so a newer file fails on its version rather
        // than on whatever field changed.
        #[derive(Deserialize)]
        struct Header {
            format: Option<String>,
            version: Option<u32>,
        }
        let header: Header = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "reading checkpoint".into(),
            source,
        })?;
        match (header.format.as_deref(), header.version) {
            (Some(CHECKPOINT_FORMAT), Some(CHECKPOINT_VERSION)) => {}
            (Some(CHECKPOINT_FORMAT), Some(v)) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {v} (this build reads version {CHECKPOINT_VERSION})"
                )))
            }
            _ => return Err(Error::Checkpoint("not a wayfarer checkpoint".into())),
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "reading checkpoint".into(),
            source,
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: path.display().to_string(),
                source,
            },
            other => other,
        })
    }
}

/// Parses a training config document. Missing fields take their defaults;
/// unknown fields are rejected with the line and column of the problem.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "config".into(),
        source,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn config_to_json(cfg: &TrainConfig) -> Result<String> {
    serde_json::to_string_pretty(cfg).map_err(|source| Error::Json {
        context: "serializing config".into(),
        source,
    })
}
