//! The seven subcommands. Each is a pure function of the resolved config
//! and its input files; rerunning rewrites identical bytes.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use endd_core::data::{make_ood, make_spiral, save_csv, save_points_csv};
use endd_core::distill::{train_distilled, train_dnn as fit_dnn};
use endd_core::ensemble::{build_transfer_set, member_seed, train_ensemble as fit_ensemble, EnsembleManifest};
use endd_core::metrics::DEFAULT_ECE_BINS;
use endd_core::rng::derive_seed;
use endd_core::{Checkpoint, DistillMode, Ensemble, Predictor, Split, TrainConfig, TransferSet};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command};
use crate::artifacts::{
    load_predictor, load_transfer, read_json, require, DataDir, DatasetManifest, SplitRows, SplitSeeds, MANIFEST, MODEL,
    TRAIN_LOG, TRANSFER,
};
use crate::config::{DistillSection, RunConfig};
use crate::report::{
    evaluate_model, validate_metrics, write_histograms, write_json, write_rejection, write_roc, MetricsReport, ModelReport,
    SCHEMA_ID,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = a.common.resolve()?;
            a.apply(&mut cfg);
            gen_data(&cfg).map(drop)
        }
        Command::TrainDnn(a) => {
            let mut cfg = a.common.resolve()?;
            a.train.apply(&mut cfg.members);
            train_dnn(&cfg, &a.data)
        }
        Command::TrainEnsemble(a) => {
            let mut cfg = a.base.common.resolve()?;
            a.base.train.apply(&mut cfg.members);
            if let Some(m) = a.size {
                cfg.ensemble_size = m;
            }
            train_ensemble(&cfg, &a.base.data)
        }
        Command::BuildTransfer(a) => {
            let mut cfg = a.common.resolve()?;
            a.apply(&mut cfg);
            build_transfer(&cfg, &a.ensemble, &a.data)
        }
        Command::Distill(a) => {
            let mut cfg = a.common.resolve()?;
            a.apply(&mut cfg);
            distill(&cfg, &a.transfer)
        }
        Command::Evaluate(a) => {
            let cfg = a.common.resolve()?;
            evaluate(&cfg, &a.models, &a.data, a.ood.as_deref(), a.bins).map(drop)
        }
        Command::Ablate(a) => {
            let cfg = a.common.resolve()?;
            ablate(&cfg, &a.sizes, &a.temps, a.seeds).map(drop)
        }
    }
}

pub fn split_seeds(seed: u64) -> SplitSeeds {
    SplitSeeds {
        train: derive_seed(seed, "train"),
        test: derive_seed(seed, "test"),
        ood: derive_seed(seed, "ood"),
        aux: derive_seed(seed, "aux"),
    }
}

/// Student initialisation seed for a distillation mode.
pub fn student_seed(seed: u64, mode: DistillMode) -> u64 {
    match mode {
        DistillMode::End => derive_seed(seed, "end"),
        DistillMode::End2 => derive_seed(seed, "end2"),
    }
}

fn max_radius(points: ArrayView2<f64>) -> f64 {
    points.rows().into_iter().map(|r| r[0].hypot(r[1])).fold(0.0, f64::max)
}

fn min_radius(points: ArrayView2<f64>) -> f64 {
    points.rows().into_iter().map(|r| r[0].hypot(r[1])).fold(f64::INFINITY, f64::min)
}

/// All four splits, in memory.
pub fn generate(cfg: &RunConfig) -> Result<DataDir> {
    cfg.validate()?;
    let d = &cfg.data;
    let seeds = split_seeds(cfg.seed);
    let train = make_spiral(&d.spiral, seeds.train, Split::Train)?;
    let test_params = endd_core::SpiralParams { n_per_class: d.n_test_per_class, ..d.spiral };
    let test = make_spiral(&test_params, seeds.test, Split::Test)?;
    let ood = make_ood(&d.ood, d.n_ood, seeds.ood)?;
    let aux = make_ood(&d.aux, d.n_aux, seeds.aux)?;
    let max_train_radius = max_radius(train.points.view());
    let min_ood_radius = min_radius(ood.view());
    if min_ood_radius <= max_train_radius {
        bail!("OOD sample at radius {min_ood_radius} falls inside the training support (max radius {max_train_radius})");
    }
    let manifest = DatasetManifest {
        config_hash: cfg.fingerprint(),
        seed: cfg.seed,
        num_classes: d.spiral.num_classes,
        spiral: d.spiral,
        n_test_per_class: d.n_test_per_class,
        ood: d.ood,
        aux: d.aux,
        seeds,
        rows: SplitRows { train: train.len(), test: test.len(), ood: ood.nrows(), aux: aux.nrows() },
        max_train_radius,
        min_ood_radius,
    };
    Ok(DataDir { manifest, train, test, ood, aux })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

pub fn gen_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    let data = generate(cfg)?;
    let out = out_dir(cfg)?;
    save_csv(&data.train, out.join("train.csv"))?;
    save_csv(&data.test, out.join("test.csv"))?;
    save_points_csv(&data.ood, out.join("ood.csv"))?;
    save_points_csv(&data.aux, out.join("aux.csv"))?;
    write_json(&out.join(MANIFEST), &data.manifest)?;
    let back = DataDir::load(out)?;
    if back.train != data.train || back.test != data.test || back.ood != data.ood || back.aux != data.aux {
        bail!("dataset files in {} do not round-trip", out.display());
    }
    Ok(data.manifest)
}

/// Provenance for a single trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: String,
    pub config_hash: String,
    /// `config_hash` of the dataset or transfer set trained on.
    pub source_hash: String,
    pub global_seed: u64,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub distill: Option<DistillSection>,
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    ck.save(path)?;
    if Checkpoint::load(path)? != *ck {
        bail!("{} does not round-trip", path.display());
    }
    Ok(())
}

pub fn train_dnn(cfg: &RunConfig, data: &Path) -> Result<()> {
    cfg.validate()?;
    let dd = DataDir::load(data)?;
    let seed = member_seed(cfg.seed, 0);
    let t = &dd.train;
    let (ck, log) = fit_dnn(t.points.view(), &t.labels, t.num_classes, &cfg.members, seed)?;
    let out = out_dir(cfg)?;
    save_checkpoint(&out.join(MODEL), &ck)?;
    log.write_csv(out.join(TRAIN_LOG))?;
    let manifest = ModelManifest {
        kind: "dnn".into(),
        config_hash: cfg.fingerprint(),
        source_hash: dd.manifest.config_hash,
        global_seed: cfg.seed,
        model_seed: seed,
        train: cfg.members.clone(),
        distill: None,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(())
}

pub fn train_ensemble(cfg: &RunConfig, data: &Path) -> Result<()> {
    cfg.validate()?;
    let dd = DataDir::load(data)?;
    let t = &dd.train;
    let (ens, logs) = fit_ensemble(t.points.view(), &t.labels, t.num_classes, &cfg.members, cfg.seed, cfg.ensemble_size)?;
    let out = out_dir(cfg)?;
    ens.save_dir(out, &cfg.fingerprint())?;
    let log_dir = out.join("logs");
    fs::create_dir_all(&log_dir)?;
    for (i, log) in logs.iter().enumerate() {
        log.write_csv(log_dir.join(format!("member_{i:03}.csv")))?;
    }
    if Ensemble::load_dir(out)? != ens {
        bail!("ensemble in {} does not round-trip", out.display());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub config_hash: String,
    pub ensemble_hash: String,
    pub data_hash: String,
    /// `[rows, members, classes]` of the logits tensor.
    pub dims: [usize; 3],
    pub aux_rows: usize,
}

pub fn build_transfer(cfg: &RunConfig, ensemble: &Path, data: &Path) -> Result<()> {
    require(ensemble)?;
    let dd = DataDir::load(data)?;
    let ens = Ensemble::load_dir(ensemble)?;
    let em: EnsembleManifest = read_json(&ensemble.join(MANIFEST))?;
    if ens.num_classes() != dd.manifest.num_classes {
        bail!("ensemble predicts {} classes but the dataset has {}", ens.num_classes(), dd.manifest.num_classes);
    }
    let aux = cfg.distill.aux.then(|| dd.aux.view());
    let ts = build_transfer_set(&ens, dd.train.points.view(), Some(&dd.train.labels), aux)?;
    let out = out_dir(cfg)?;
    ts.save(out.join(TRANSFER))?;
    if TransferSet::load(out.join(TRANSFER))? != ts {
        bail!("transfer set in {} does not round-trip", out.display());
    }
    let manifest = TransferManifest {
        config_hash: cfg.fingerprint(),
        ensemble_hash: em.config_hash,
        data_hash: dd.manifest.config_hash,
        dims: [ts.len(), ts.num_members(), ts.num_classes()],
        aux_rows: ts.aux_mask.iter().filter(|a| **a).count(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(())
}

pub fn distill(cfg: &RunConfig, transfer: &Path) -> Result<()> {
    cfg.validate()?;
    let ts = load_transfer(transfer)?;
    let source_hash = match transfer.is_dir().then(|| transfer.join(MANIFEST)).filter(|p| p.exists()) {
        Some(p) => read_json::<TransferManifest>(&p)?.config_hash,
        None => String::new(),
    };
    let seed = student_seed(cfg.seed, cfg.distill.mode);
    let (ck, log) = train_distilled(&ts, &cfg.distill.to_config(seed))?;
    let out = out_dir(cfg)?;
    save_checkpoint(&out.join(MODEL), &ck)?;
    log.write_csv(out.join(TRAIN_LOG))?;
    let manifest = ModelManifest {
        kind: ck.meta.model_kind.as_str().into(),
        config_hash: cfg.fingerprint(),
        source_hash,
        global_seed: cfg.seed,
        model_seed: seed,
        train: cfg.distill.train.clone(),
        distill: Some(cfg.distill.clone()),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(())
}

fn predictor_dims(p: &Predictor) -> (usize, usize) {
    match p {
        Predictor::Dnn(m) | Predictor::End(m) | Predictor::End2(m) => (m.input_dim(), m.num_classes()),
        Predictor::Ensemble(e) => (e.input_dim(), e.num_classes()),
    }
}

/// `NAME=PATH` or bare `PATH` (named by model kind, suffixed on repeats).
fn parse_model_specs(specs: &[String]) -> Result<Vec<(String, Predictor)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (Some(n.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(spec)),
        };
        let predictor = load_predictor(&path)?;
        let name = match name {
            Some(n) if !seen.insert(n.clone()) => bail!("model name `{n}` given twice"),
            Some(n) => n,
            None => {
                let kind = predictor.kind();
                let mut n = kind.to_string();
                let mut i = 2;
                while !seen.insert(n.clone()) {
                    n = format!("{kind}-{i}");
                    i += 1;
                }
                n
            }
        };
        out.push((name, predictor));
    }
    Ok(out)
}

pub fn evaluate(cfg: &RunConfig, models: &[String], data: &Path, ood: Option<&Path>, bins: usize) -> Result<MetricsReport> {
    let dd = DataDir::load(data)?;
    let ood_points = match ood {
        Some(p) => {
            require(p)?;
            endd_core::data::load_points_csv(p)?
        }
        None => dd.ood.clone(),
    };
    let specs = parse_model_specs(models)?;
    let mut reports: Vec<ModelReport> = Vec::with_capacity(specs.len());
    let mut scored = Vec::with_capacity(specs.len());
    for (name, predictor) in &specs {
        let (d, k) = predictor_dims(predictor);
        if d != dd.test.points.ncols() || k != dd.manifest.num_classes {
            bail!("model `{name}` maps {d} inputs to {k} classes; the data has 2 inputs and {} classes", dd.manifest.num_classes);
        }
        let (r, s) = evaluate_model(name, predictor, &dd.test, &ood_points, bins)?;
        reports.push(r);
        scored.push(s);
    }
    let report = MetricsReport {
        schema: SCHEMA_ID.into(),
        config_hash: cfg.fingerprint(),
        ece_bins: bins,
        n_test: dd.test.len(),
        n_ood: ood_points.nrows(),
        models: reports,
    };
    let out = out_dir(cfg)?;
    let written = write_json(&out.join("metrics.json"), &report)?;
    validate_metrics(&written)?;
    write_histograms(&out.join("histograms.csv"), &scored)?;
    write_rejection(&out.join("rejection.csv"), &scored)?;
    write_roc(&out.join("roc.csv"), &scored)?;
    Ok(report)
}

/// One EnD² arm of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `size` or `t0`.
    pub arm: String,
    pub seed: u64,
    pub ensemble_size: usize,
    pub t0: f64,
    pub annealed: bool,
    pub error: f64,
    pub nll: f64,
    pub ece: f64,
    pub prr: Option<f64>,
    pub auroc_total: Option<f64>,
    pub auroc_knowledge: Option<f64>,
    pub aupr_total: Option<f64>,
    pub aupr_knowledge: Option<f64>,
    pub id_total: f64,
    pub id_expected_data: Option<f64>,
    pub id_knowledge: Option<f64>,
    pub ood_total: f64,
    pub ood_expected_data: Option<f64>,
    pub ood_knowledge: Option<f64>,
    pub config_hash: String,
}

struct Arm {
    kind: &'static str,
    size: usize,
    t0: f64,
}

impl Arm {
    fn id(&self, seed: u64) -> String {
        match self.kind {
            "size" => format!("s{seed}-size-{}", self.size),
            _ => format!("s{seed}-t0-{}", self.t0),
        }
    }
}

/// Ensemble of `size` members for `seed`, cached under `dir`.
fn cached_ensemble(cfg: &RunConfig, data: &DataDir, size: usize, dir: &Path) -> Result<Ensemble> {
    let hash = cfg.fingerprint();
    if dir.join(MANIFEST).exists() {
        let m: EnsembleManifest = read_json(&dir.join(MANIFEST))?;
        if m.config_hash == hash && m.size == size {
            return Ok(Ensemble::load_dir(dir)?);
        }
    }
    let t = &data.train;
    let (ens, _) = fit_ensemble(t.points.view(), &t.labels, t.num_classes, &cfg.members, cfg.seed, size)?;
    ens.save_dir(dir, &hash)?;
    Ok(ens)
}

pub fn ablate(cfg: &RunConfig, sizes: &[usize], temps: &[f64], seeds: u64) -> Result<Vec<SweepRow>> {
    if sizes.contains(&0) || temps.iter().any(|t| !(*t >= 1.0)) {
        bail!("ensemble sizes must be positive and temperatures at least 1");
    }
    let largest = sizes.iter().copied().max().unwrap_or(cfg.ensemble_size);
    let mut arms: Vec<Arm> = sizes.iter().map(|&size| Arm { kind: "size", size, t0: cfg.distill.t0 }).collect();
    arms.extend(temps.iter().map(|&t0| Arm { kind: "t0", size: largest, t0 }));
    let out = out_dir(cfg)?.to_path_buf();
    let mut rows = Vec::with_capacity(arms.len() * seeds as usize);
    for i in 0..seeds {
        let mut run = cfg.clone();
        run.seed = cfg.seed + i;
        run.distill.mode = DistillMode::End2;
        let hash = run.fingerprint();
        let data = generate(&run)?;
        let mut ensemble: Option<Ensemble> = None;
        for arm in &arms {
            let dir = out.join("arms").join(arm.id(run.seed));
            let done = dir.join("done.json");
            if done.exists() {
                let row: SweepRow = read_json(&done)?;
                if row.config_hash == hash {
                    rows.push(row);
                    continue;
                }
            }
            if ensemble.is_none() {
                let dir = out.join(format!("seed-{}", run.seed)).join("ensemble");
                ensemble = Some(cached_ensemble(&run, &data, largest, &dir)?);
            }
            let full = ensemble.as_ref().expect("trained above");
            let ens = Ensemble::new(full.members[..arm.size].to_vec())?;
            let aux = run.distill.aux.then(|| data.aux.view());
            let ts = build_transfer_set(&ens, data.train.points.view(), Some(&data.train.labels), aux)?;
            let mut dc = run.distill.to_config(student_seed(run.seed, DistillMode::End2));
            dc.t0 = arm.t0;
            let (ck, _) = train_distilled(&ts, &dc)?;
            fs::create_dir_all(&dir)?;
            save_checkpoint(&dir.join(MODEL), &ck)?;
            let (r, _) = evaluate_model("end2", &Predictor::End2(ck.model), &data.test, &data.ood, DEFAULT_ECE_BINS)?;
            let row = SweepRow {
                arm: arm.kind.into(),
                seed: run.seed,
                ensemble_size: arm.size,
                t0: arm.t0,
                annealed: dc.annealed,
                error: r.test.error,
                nll: r.test.nll,
                ece: r.test.ece,
                prr: r.test.prr.confidence,
                auroc_total: r.ood.auroc.total,
                auroc_knowledge: r.ood.auroc.knowledge,
                aupr_total: r.ood.aupr.total,
                aupr_knowledge: r.ood.aupr.knowledge,
                id_total: r.mean_uncertainty.id.total,
                id_expected_data: r.mean_uncertainty.id.expected_data,
                id_knowledge: r.mean_uncertainty.id.knowledge,
                ood_total: r.mean_uncertainty.ood.total,
                ood_expected_data: r.mean_uncertainty.ood.expected_data,
                ood_knowledge: r.mean_uncertainty.ood.knowledge,
                config_hash: hash.clone(),
            };
            write_json(&done, &row)?;
            rows.push(row);
        }
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}
