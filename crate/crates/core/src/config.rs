//! Flat key=value run configuration covering the training, synthesis and
//! backbone settings. The format is line oriented: `key = value`, `#`
//! comments, blank lines ignored. Unknown and duplicate keys are rejected
//! by name; absent keys take their defaults; `echo` prints a canonical
//! listing that reparses to the identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::trainer::{EnabledLosses, TrainConfig, WeightMode};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub backbone: BackboneConfig,
}

impl RunConfig {
    /// Clip dimensions every decode uses, taken from the synth settings.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.synth.t, self.synth.h, self.synth.w)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        self.backbone.validate()
    }
}

const LOSS_NAMES: [&str; 5] = ["cls", "pseudo", "modality", "bridge", "triplet"];

fn losses_to_string(e: &EnabledLosses) -> String {
    [e.cls, e.pseudo, e.modality, e.bridge, e.triplet]
        .iter()
        .zip(LOSS_NAMES)
        .filter_map(|(&on, n)| on.then_some(n))
        .collect::<Vec<_>>()
        .join(",")
}

fn losses_from_string(s: &str) -> Result<EnabledLosses> {
    let mut e = EnabledLosses { cls: false, pseudo: false, modality: false, bridge: false, triplet: false };
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok {
            "cls" => e.cls = true,
            "pseudo" => e.pseudo = true,
            "modality" => e.modality = true,
            "bridge" => e.bridge = true,
            "triplet" => e.triplet = true,
            other => return Err(Error::Config(format!("unknown loss name `{other}`"))),
        }
    }
    Ok(e)
}

fn parse_as<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}` has unparsable value `{v}`")))
}

/// Canonical listing; reparsing it yields an identical configuration.
pub fn echo_run_config(c: &RunConfig) -> String {
    let mut s = String::new();
    let t = &c.train;
    let y = &c.synth;
    let b = &c.backbone;
    let wm = match t.weight_mode {
        WeightMode::Fixed => "fixed",
        WeightMode::Adaptive => "adaptive",
    };
    let _ = writeln!(s, "train.epochs = {}", t.epochs);
    let _ = writeln!(s, "train.base_lr = {}", t.base_lr);
    let _ = writeln!(s, "train.lr_decay_epoch = {}", t.lr_decay_epoch);
    let _ = writeln!(s, "train.lr_decay_factor = {}", t.lr_decay_factor);
    let _ = writeln!(s, "train.momentum = {}", t.momentum);
    let _ = writeln!(s, "train.tau = {}", t.tau);
    let _ = writeln!(s, "train.margin = {}", t.margin);
    let _ = writeln!(s, "train.xbm_capacity = {}", t.xbm_capacity);
    let _ = writeln!(s, "train.weight_mode = {wm}");
    let _ = writeln!(s, "train.enabled_losses = {}", losses_to_string(&t.enabled));
    let _ = writeln!(s, "train.seed = {}", t.seed);
    let _ = writeln!(s, "train.grl_lambda = {}", t.grl_lambda);
    let _ = writeln!(s, "synth.n_train_pairs = {}", y.n_train_pairs);
    let _ = writeln!(s, "synth.n_test_depth = {}", y.n_test_depth);
    let _ = writeln!(s, "synth.t = {}", y.t);
    let _ = writeln!(s, "synth.h = {}", y.h);
    let _ = writeln!(s, "synth.w = {}", y.w);
    let _ = writeln!(s, "synth.noise_level = {}", y.noise_level);
    let _ = writeln!(s, "synth.seed = {}", y.seed);
    let _ = writeln!(s, "backbone.stage1_channels = {}", b.stage1_channels);
    let _ = writeln!(s, "backbone.embedding_dim = {}", b.embedding_dim);
    let _ = writeln!(s, "backbone.n_stages = {}", b.n_stages);
    let _ = writeln!(s, "backbone.idm_enabled = {}", b.idm_enabled);
    s
}

/// Parses overrides onto defaults. Syntax only; call
/// [`RunConfig::validate`] before running anything.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = key.trim();
        let v = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
        match key {
            "train.epochs" => c.train.epochs = parse_as(key, v)?,
            "train.base_lr" => c.train.base_lr = parse_as(key, v)?,
            "train.lr_decay_epoch" => c.train.lr_decay_epoch = parse_as(key, v)?,
            "train.lr_decay_factor" => c.train.lr_decay_factor = parse_as(key, v)?,
            "train.momentum" => c.train.momentum = parse_as(key, v)?,
            "train.tau" => c.train.tau = parse_as(key, v)?,
            "train.margin" => c.train.margin = parse_as(key, v)?,
            "train.xbm_capacity" => c.train.xbm_capacity = parse_as(key, v)?,
            "train.weight_mode" => {
                c.train.weight_mode = match v {
                    "fixed" => WeightMode::Fixed,
                    "adaptive" => WeightMode::Adaptive,
                    other => return Err(Error::Config(format!("weight_mode must be fixed|adaptive, got `{other}`"))),
                }
            }
            "train.enabled_losses" => c.train.enabled = losses_from_string(v)?,
            "train.seed" => c.train.seed = parse_as(key, v)?,
            "train.grl_lambda" => c.train.grl_lambda = parse_as(key, v)?,
            "synth.n_train_pairs" => c.synth.n_train_pairs = parse_as(key, v)?,
            "synth.n_test_depth" => c.synth.n_test_depth = parse_as(key, v)?,
            "synth.t" => c.synth.t = parse_as(key, v)?,
            "synth.h" => c.synth.h = parse_as(key, v)?,
            "synth.w" => c.synth.w = parse_as(key, v)?,
            "synth.noise_level" => c.synth.noise_level = parse_as(key, v)?,
            "synth.seed" => c.synth.seed = parse_as(key, v)?,
            "backbone.stage1_channels" => c.backbone.stage1_channels = parse_as(key, v)?,
            "backbone.embedding_dim" => c.backbone.embedding_dim = parse_as(key, v)?,
            "backbone.n_stages" => c.backbone.n_stages = parse_as(key, v)?,
            "backbone.idm_enabled" => c.backbone.idm_enabled = parse_as(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
    }
    Ok(c)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, &e))?;
    parse_run_config(&text)
}
