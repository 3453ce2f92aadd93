//! Checkpoints: an `STWT` tensor file plus a JSON sidecar with the same stem.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{weights, AdamState, SpectralState, Tensor};

use super::nets::Params;
use super::train::{Direction, GanConfig, GanState};
use crate::dataio::Image;

const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSteps {
    pub g1: u64,
    pub g2: u64,
    pub d1: u64,
    pub d2: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    /// Epoch `e` shuffles X with stream `2e` and Y with stream `2e + 1`.
    pub next_epoch: usize,
}

/// Everything in a checkpoint except the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub epoch: usize,
    pub step: u64,
    pub config: GanConfig,
    pub adam_steps: AdamSteps,
    pub spectral_d1: Vec<SpectralState>,
    pub spectral_d2: Vec<SpectralState>,
    pub rng: RngState,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn push_params(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, params: &Params<f32>, opt: &AdamState) {
    for (name, t) in params {
        out.push((format!("{prefix}.{name}"), t.clone()));
    }
    for ((name, _), (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
        out.push((format!("adam.{prefix}.m.{name}"), m.clone()));
        out.push((format!("adam.{prefix}.v.{name}"), v.clone()));
    }
}

fn take(
    records: &[(String, Tensor<f32>, usize)],
    name: &str,
    like: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let (_, t, at) = records.iter().find(|(n, _, _)| n == name).ok_or_else(|| Error::Format {
        offset: weights::COUNT_OFFSET,
        message: format!("checkpoint lacks tensor {name}"),
    })?;
    if t.shape() != like.shape() {
        return Err(Error::Format {
            offset: *at,
            message: format!("{name} has shape {:?}, expected {:?}", t.shape(), like.shape()),
        });
    }
    Ok(t.clone())
}

fn restore(
    records: &[(String, Tensor<f32>, usize)],
    prefix: &str,
    params: &mut Params<f32>,
    opt: &mut AdamState,
    step: u64,
) -> Result<()> {
    for (i, (name, t)) in params.iter_mut().enumerate() {
        *t = take(records, &format!("{prefix}.{name}"), t)?;
        opt.m[i] = take(records, &format!("adam.{prefix}.m.{name}"), &opt.m[i])?;
        opt.v[i] = take(records, &format!("adam.{prefix}.v.{name}"), &opt.v[i])?;
    }
    opt.step = step;
    Ok(())
}

impl GanState {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            version: SIDECAR_VERSION,
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
            adam_steps: AdamSteps {
                g1: self.opt_g1.step,
                g2: self.opt_g2.step,
                d1: self.opt_d1.step,
                d2: self.opt_d2.step,
            },
            spectral_d1: self.d1.spectral.clone(),
            spectral_d2: self.d2.spectral.clone(),
            rng: RngState {
                algorithm: "chacha8".into(),
                seed: self.config.seed,
                next_epoch: self.epoch,
            },
        }
    }

    /// Writes `path` (tensors) and its `.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut named = Vec::new();
        push_params(&mut named, "g1", &self.g1.params, &self.opt_g1);
        push_params(&mut named, "g2", &self.g2.params, &self.opt_g2);
        push_params(&mut named, "d1", &self.d1.params, &self.opt_d1);
        push_params(&mut named, "d2", &self.d2.params, &self.opt_d2);
        weights::save(path, &named)?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.meta())?;
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.version != SIDECAR_VERSION {
            return Err(Error::Unsupported(format!("checkpoint sidecar version {}", meta.version)));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let records = weights::decode_with_offsets(&bytes)?;
        let mut state = GanState::new(meta.config.clone())?;
        let s = &meta.adam_steps;
        restore(&records, "g1", &mut state.g1.params, &mut state.opt_g1, s.g1)?;
        restore(&records, "g2", &mut state.g2.params, &mut state.opt_g2, s.g2)?;
        restore(&records, "d1", &mut state.d1.params, &mut state.opt_d1, s.d1)?;
        restore(&records, "d2", &mut state.d2.params, &mut state.opt_d2, s.d2)?;
        for (have, want) in [(&meta.spectral_d1, state.d1.spectral.len()), (&meta.spectral_d2, state.d2.spectral.len())] {
            if have.len() != want {
                return Err(Error::invalid(format!(
                    "sidecar has {} spectral states, discriminator has {want} layers",
                    have.len()
                )));
            }
        }
        state.d1.spectral = meta.spectral_d1;
        state.d2.spectral = meta.spectral_d2;
        state.epoch = meta.epoch;
        state.step = meta.step;
        Ok(state)
    }
}

/// Loads a checkpoint and translates one image.
pub fn translate(checkpoint: impl AsRef<Path>, image: &Image, direction: Direction) -> Result<Image> {
    GanState::load(checkpoint)?.translate(image, direction)
}
