//! Run configuration: one JSON file, every field defaulted, flags on top.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use endd_core::{DistillConfig, DistillMode, OodGeometry, SpiralParams, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training split generator.
    pub spiral: SpiralParams,
    pub n_test_per_class: usize,
    pub ood: OodGeometry,
    pub n_ood: usize,
    pub aux: OodGeometry,
    pub n_aux: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spiral: SpiralParams::default(),
            n_test_per_class: 1000,
            ood: OodGeometry::Ring { inner: 2.0, outer: 3.0 },
            n_ood: 1000,
            aux: OodGeometry::Box { half_width: 4.0, exclusion: 1.2 },
            n_aux: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub mode: DistillMode,
    pub t_fixed: f64,
    pub t0: f64,
    pub annealed: bool,
    pub gamma: f64,
    /// Append auxiliary rows to the transfer set.
    pub aux: bool,
    pub train: TrainConfig,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::end2(TrainConfig::student(), 0);
        Self { mode: d.mode, t_fixed: d.t_fixed, t0: d.t0, annealed: d.annealed, gamma: d.gamma, aux: true, train: d.train }
    }
}

impl DistillSection {
    pub fn to_config(&self, seed: u64) -> DistillConfig {
        DistillConfig {
            mode: self.mode,
            t_fixed: self.t_fixed,
            t0: self.t0,
            annealed: self.annealed,
            gamma: self.gamma,
            train: self.train.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Training settings for the DNN baseline and ensemble members.
    pub members: TrainConfig,
    pub ensemble_size: usize,
    pub distill: DistillSection,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            members: TrainConfig::default(),
            ensemble_size: 20,
            distill: DistillSection::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Defaults, or the file at `path` with missing fields defaulted.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.members.validate()?;
        self.distill.to_config(0).validate()?;
        self.data.ood.validate()?;
        self.data.aux.validate()?;
        if self.ensemble_size == 0 {
            bail!("ensemble_size must be positive");
        }
        if self.data.n_test_per_class == 0 || self.data.n_ood == 0 {
            bail!("test and OOD sets must be non-empty");
        }
        // spiral points have radius at most 1
        let clear = match self.data.ood {
            OodGeometry::Ring { inner, .. } => inner > 1.0,
            OodGeometry::Box { exclusion, .. } => exclusion > 1.0,
        };
        if !clear {
            bail!("OOD geometry overlaps the unit disc holding the training data");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
