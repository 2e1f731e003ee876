//! On-disk layout of command outputs.
//!
//! ```text
//! data/      train.csv test.csv ood.csv aux.csv manifest.json
//! dnn/       model.json train_log.csv manifest.json
//! ensemble/  member_000.json … manifest.json logs/member_000.csv …
//! transfer/  transfer.json manifest.json
//! student/   model.json train_log.csv manifest.json
//! eval/      metrics.json histograms.csv rejection.csv roc.csv
//! ablate/    sweep.csv arms/<arm>/{model.json,done.json} seed-<s>/ensemble/
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use endd_core::data::{load_csv, load_points_csv};
use endd_core::{Checkpoint, Dataset2D, Ensemble, ModelKind, OodGeometry, Predictor, SpiralParams, Split, TransferSet};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const MODEL: &str = "model.json";
pub const TRANSFER: &str = "transfer.json";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSeeds {
    pub train: u64,
    pub test: u64,
    pub ood: u64,
    pub aux: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRows {
    pub train: usize,
    pub test: usize,
    pub ood: usize,
    pub aux: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub seed: u64,
    pub num_classes: usize,
    pub spiral: SpiralParams,
    pub n_test_per_class: usize,
    pub ood: OodGeometry,
    pub aux: OodGeometry,
    pub seeds: SplitSeeds,
    pub rows: SplitRows,
    /// Largest training radius and smallest OOD radius; OOD points lie
    /// outside the training hull when the second exceeds the first.
    pub max_train_radius: f64,
    pub min_ood_radius: f64,
}

/// Everything `gen-data` wrote.
#[derive(Debug, Clone)]
pub struct DataDir {
    pub manifest: DatasetManifest,
    pub train: Dataset2D,
    pub test: Dataset2D,
    pub ood: Array2<f64>,
    pub aux: Array2<f64>,
}

pub fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl DataDir {
    pub fn load(dir: &Path) -> Result<Self> {
        require(dir)?;
        let manifest: DatasetManifest = read_json(&dir.join(MANIFEST))?;
        let k = manifest.num_classes;
        let train = load_csv(dir.join("train.csv"), k, Split::Train).context("loading train.csv")?;
        let test = load_csv(dir.join("test.csv"), k, Split::Test).context("loading test.csv")?;
        let ood = load_points_csv(dir.join("ood.csv")).context("loading ood.csv")?;
        let aux = load_points_csv(dir.join("aux.csv")).context("loading aux.csv")?;
        let rows = SplitRows { train: train.len(), test: test.len(), ood: ood.nrows(), aux: aux.nrows() };
        if rows != manifest.rows {
            bail!("{}: row counts {:?} disagree with manifest {:?}", dir.display(), rows, manifest.rows);
        }
        Ok(Self { manifest, train, test, ood, aux })
    }
}

/// `path` itself if it is a file, else `path/name`.
pub fn file_in(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

/// A model directory (or file) as something `evaluate` can score: a
/// directory with member files is an ensemble, anything else a checkpoint.
pub fn load_predictor(path: &Path) -> Result<Predictor> {
    require(path)?;
    if path.is_dir() && path.join("member_000.json").exists() {
        return Ok(Predictor::Ensemble(Ensemble::load_dir(path)?));
    }
    let file = file_in(path, MODEL);
    let ck = Checkpoint::load(&file).with_context(|| format!("loading {}", file.display()))?;
    Ok(match ck.meta.model_kind {
        ModelKind::Dnn | ModelKind::Member => Predictor::Dnn(ck.model),
        ModelKind::End => Predictor::End(ck.model),
        ModelKind::End2 => Predictor::End2(ck.model),
    })
}

pub fn load_transfer(path: &Path) -> Result<TransferSet> {
    require(path)?;
    let file = file_in(path, TRANSFER);
    TransferSet::load(&file).with_context(|| format!("loading {}", file.display()))
}
