//! Declarative run configuration shared by every subcommand.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use vdistill::baselines::DmConfig;
use vdistill::dataio::ShapeSpec;
use vdistill::evalkit::{EvalConfig, IcNormalization};
use vdistill::idtd::{IdtdConfig, Variant};
use vdistill::student::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Idtd,
    Dm,
    Random,
    Herding,
    Kcenter,
}

/// Every knob of a run. Missing fields take their defaults; command-line
/// flags override file values, and the merged result is what `run.json`
/// records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory of `gen-data` (holding `train/` and `test/`); when
    /// absent the data is generated in memory from `spec` and `data_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub spec: ShapeSpec,
    pub data_seed: u64,
    pub method: Method,
    /// Master seed for distillation and coreset selection.
    pub seed: u64,
    pub ipc: usize,
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
    /// Step size of the selectors and fusor; `None` means `lr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module_lr: Option<f64>,
    pub momentum: f64,
    pub iterations: usize,
    pub t_syn: usize,
    pub t_real: usize,
    pub real_batch: usize,
    pub min_frac: f64,
    pub variant: Variant,
    pub eval_seeds: Vec<u64>,
    pub eval: TrainConfig,
    /// Epochs of the feature extractor behind herding, k-center and the
    /// redundancy analysis (0 keeps random weights).
    pub feature_epochs: usize,
    pub feature_seed: u64,
    /// Ablation arms, e.g. `full`, `compress-and-stitch`, `t-syn=4`.
    pub variants: Vec<String>,
    /// Samples per class in the redundancy analysis.
    pub redundancy_batch: usize,
    pub ic_normalization: IcNormalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        let idtd = IdtdConfig::default();
        RunConfig {
            data: None,
            spec: ShapeSpec::default(),
            data_seed: 0,
            method: Method::Idtd,
            seed: 0,
            ipc: idtd.ipc,
            k: idtd.k,
            alpha1: idtd.alpha1,
            alpha2: idtd.alpha2,
            lr: idtd.lr,
            module_lr: idtd.module_lr,
            momentum: idtd.momentum,
            iterations: idtd.iterations,
            t_syn: idtd.t_syn,
            t_real: idtd.t_real,
            real_batch: idtd.real_batch,
            min_frac: idtd.min_frac,
            variant: idtd.variant,
            eval_seeds: vec![0, 1, 2],
            eval: TrainConfig::default(),
            feature_epochs: 20,
            feature_seed: 0,
            variants: ["full", "compress-and-stitch", "no-pool", "no-fusor"].map(String::from).to_vec(),
            redundancy_batch: 20,
            ic_normalization: IcNormalization::AsPrinted,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ipc", self.ipc),
            ("k", self.k),
            ("t_syn", self.t_syn),
            ("t_real", self.t_real),
            ("real_batch", self.real_batch),
            ("redundancy_batch", self.redundancy_batch),
        ] {
            ensure!(v > 0, "config: {name} must be positive");
        }
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("lr", self.lr), ("min_frac", self.min_frac)] {
            ensure!(v.is_finite() && v > 0.0, "config: {name} must be positive");
        }
        ensure!(self.momentum.is_finite() && self.momentum >= 0.0, "config: momentum must be non-negative");
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.eval_seeds {
            if !seen.insert(s) {
                bail!("config: eval seed {s} is repeated");
            }
        }
        self.spec.validate()?;
        self.idtd().validate()?;
        self.dm().validate()?;
        Ok(())
    }

    pub fn idtd(&self) -> IdtdConfig {
        IdtdConfig {
            ipc: self.ipc,
            k: self.k,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lr: self.lr,
            module_lr: self.module_lr,
            momentum: self.momentum,
            iterations: self.iterations,
            t_syn: self.t_syn,
            t_real: self.t_real,
            real_batch: self.real_batch,
            min_frac: self.min_frac,
            variant: self.variant,
            ..IdtdConfig::default()
        }
    }

    pub fn dm(&self) -> DmConfig {
        DmConfig {
            ipc: self.ipc,
            lr: self.lr,
            momentum: self.momentum,
            iterations: self.iterations,
            t_syn: self.t_syn,
            t_real: self.t_real,
            real_batch: self.real_batch,
            student: None,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { train: TrainConfig { frames: self.t_real, min_frac: self.min_frac, ..self.eval.clone() }, student: None }
    }
}
