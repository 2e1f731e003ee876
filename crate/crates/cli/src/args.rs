//! Command-line surface. Flags override the config file, which overrides
//! the built-in defaults.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use endd_core::{DistillMode, TrainConfig};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "endd", version, about = "Ensemble distribution distillation on a toy spiral task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test/OOD/aux CSVs and a manifest.
    GenData(GenDataArgs),
    /// Train the single-model baseline.
    TrainDnn(TrainArgs),
    /// Train a seed-varied ensemble.
    TrainEnsemble(TrainEnsembleArgs),
    /// Evaluate an ensemble on the training inputs (plus aux) for distillation.
    BuildTransfer(BuildTransferArgs),
    /// Distil a transfer set into an EnD or EnD² student.
    Distill(DistillArgs),
    /// Score models on test and OOD data.
    Evaluate(EvaluateArgs),
    /// Ensemble-size and initial-temperature sweeps.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_test_per_class: Option<usize>,
    #[arg(long)]
    pub n_ood: Option<usize>,
    #[arg(long)]
    pub n_aux: Option<usize>,
    #[arg(long)]
    pub noise_base: Option<f64>,
    #[arg(long)]
    pub noise_growth: Option<f64>,
}

impl GenDataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        set(&mut d.spiral.num_classes, self.k);
        set(&mut d.spiral.n_per_class, self.n_per_class);
        set(&mut d.spiral.noise_base, self.noise_base);
        set(&mut d.spiral.noise_growth, self.noise_growth);
        set(&mut d.n_test_per_class, self.n_test_per_class);
        set(&mut d.n_ood, self.n_ood);
        set(&mut d.n_aux, self.n_aux);
    }
}

/// Optimisation overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub cycle_len: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl TrainFlags {
    pub fn apply(&self, t: &mut TrainConfig) {
        if let Some(h) = &self.hidden {
            t.hidden = h.clone();
        }
        set(&mut t.epochs, self.epochs);
        set(&mut t.cycle_len, self.cycle_len);
        set(&mut t.peak_lr, self.lr);
        set(&mut t.keep_prob, self.keep_prob);
        set(&mut t.batch_size, self.batch_size);
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct TrainEnsembleArgs {
    #[command(flatten)]
    pub base: TrainArgs,
    /// Number of members.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildTransferArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by train-ensemble.
    #[arg(long, value_name = "DIR")]
    pub ensemble: PathBuf,
    /// Directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Append auxiliary rows.
    #[arg(long, overrides_with = "no_aux")]
    pub aux: bool,
    /// Leave auxiliary rows out.
    #[arg(long)]
    pub no_aux: bool,
}

impl BuildTransferArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.aux {
            cfg.distill.aux = true;
        }
        if self.no_aux {
            cfg.distill.aux = false;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    End,
    End2,
}

impl From<ModeArg> for DistillMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::End => DistillMode::End,
            ModeArg::End2 => DistillMode::End2,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: Common,
    /// Transfer file, or the directory holding it.
    #[arg(long, value_name = "PATH")]
    pub transfer: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// EnD temperature.
    #[arg(long)]
    pub t_fixed: Option<f64>,
    /// EnD² initial temperature.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Hold the EnD² temperature at T₀ throughout.
    #[arg(long)]
    pub no_anneal: bool,
    /// Central-smoothing weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

impl DistillArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.distill;
        if let Some(m) = self.mode {
            d.mode = m.into();
        }
        set(&mut d.t_fixed, self.t_fixed);
        set(&mut d.t0, self.t0);
        set(&mut d.gamma, self.gamma);
        if self.no_anneal {
            d.annealed = false;
        }
        self.train.apply(&mut d.train);
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Models to score, as `PATH` or `NAME=PATH`; repeatable or comma separated.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub models: Vec<String>,
    /// Directory written by gen-data; its test split is scored.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// OOD points CSV; defaults to the data directory's ood.csv.
    #[arg(long, value_name = "PATH")]
    pub ood: Option<PathBuf>,
    /// Calibration bins.
    #[arg(long, default_value_t = endd_core::metrics::DEFAULT_ECE_BINS)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ensemble sizes to distil from.
    #[arg(long, value_delimiter = ',', default_value = "5,20,50,100")]
    pub sizes: Vec<usize>,
    /// Initial temperatures, distilled from the largest ensemble.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
    pub temps: Vec<f64>,
    /// Number of global seeds, counting up from the configured seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn distill_defaults_and_overrides() {
        let cli = Cli::parse_from(["endd", "distill", "--transfer", "t.json"]);
        let Command::Distill(a) = cli.command else { panic!() };
        let mut cfg = a.common.resolve().unwrap();
        a.apply(&mut cfg);
        assert_eq!(cfg.distill.mode, DistillMode::End2);
        assert_eq!(cfg.distill.t0, 10.0);
        assert!(cfg.distill.annealed);

        let cli = Cli::parse_from(["endd", "distill", "--transfer", "t", "--mode", "end2", "--t0", "1", "--no-anneal", "--epochs", "7"]);
        let Command::Distill(a) = cli.command else { panic!() };
        let mut cfg = a.common.resolve().unwrap();
        a.apply(&mut cfg);
        assert_eq!(cfg.distill.t0, 1.0);
        assert!(!cfg.distill.annealed);
        assert_eq!(cfg.distill.train.epochs, 7);
        assert_eq!(cfg.members.epochs, TrainConfig::default().epochs);
    }

    #[test]
    fn bad_mode_is_a_usage_error() {
        let e = Cli::try_parse_from(["endd", "distill", "--transfer", "t", "--mode", "end3"]).unwrap_err();
        assert_eq!(e.kind(), clap::error::ErrorKind::InvalidValue);
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 4, "data": {"spiral": {"n_per_class": 50}}}"#).unwrap();
        let cli = Cli::parse_from(["endd", "gen-data", "--config", path.to_str().unwrap(), "--n-per-class", "10"]);
        let Command::GenData(a) = cli.command else { panic!() };
        let mut cfg = a.common.resolve().unwrap();
        a.apply(&mut cfg);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.data.spiral.n_per_class, 10);
    }

    #[test]
    fn ablate_default_grid() {
        let cli = Cli::parse_from(["endd", "ablate"]);
        let Command::Ablate(a) = cli.command else { panic!() };
        assert_eq!(a.sizes, vec![5, 20, 50, 100]);
        assert_eq!(a.temps, vec![1.0, 2.0, 5.0, 10.0, 20.0]);
        assert_eq!(a.seeds, 3);
    }
}
