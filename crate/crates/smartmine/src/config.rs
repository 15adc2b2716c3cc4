//! Training configuration, parsed from plain-text `key=value` files with
//! command-line overrides. Unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::ann::IndexConfig;
use crate::controller::ControllerConfig;
use crate::losses::LossConfig;
use crate::{Error, Result};

/// Which miner fills the training batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Miner {
    SmartAdaptive,
    SmartFixedKappa,
    Random,
    NaiveHard,
    SemiHard,
}

impl FromStr for Miner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smart-adaptive" => Ok(Miner::SmartAdaptive),
            "smart-fixed-kappa" => Ok(Miner::SmartFixedKappa),
            "random" => Ok(Miner::Random),
            "naive-hard" => Ok(Miner::NaiveHard),
            "semi-hard" => Ok(Miner::SemiHard),
            other => Err(Error::config(format!(
                "unknown miner {other:?}; expected smart-adaptive, smart-fixed-kappa, random, naive-hard or semi-hard"
            ))),
        }
    }
}

impl fmt::Display for Miner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Miner::SmartAdaptive => "smart-adaptive",
            Miner::SmartFixedKappa => "smart-fixed-kappa",
            Miner::Random => "random",
            Miner::NaiveHard => "naive-hard",
            Miner::SemiHard => "semi-hard",
        };
        write!(f, "{s}")
    }
}

/// Everything a training run needs besides the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub mined_fraction: f64,
    pub miner: Miner,
    pub lr_initial: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,

    // Network shape.
    pub hidden_width: usize,
    pub embedding_dim: usize,
    pub per_layer_normalisation: bool,

    // Losses.
    pub margin: f64,
    pub global_margin: f64,
    pub lambda: f64,
    pub global_weight: f64,

    // Controller.
    pub e_target: f64,
    pub controller_window: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_initial: f64,

    // Fixed-kappa mining.
    pub fixed_kappa: f64,
    pub kappa_decay: f64,

    // Mining.
    pub triplets_per_anchor: usize,
    /// Neighbour-list length; 0 derives it from the per-class count.
    pub list_size: usize,
    /// Search effort for neighbour lists; 0 derives it from the list size.
    pub query_effort: usize,

    // Index build.
    pub target_success: f64,
    pub build_effort: usize,
    pub success_window: usize,
    pub attempt_cap_factor: usize,

    // Validation and early stopping.
    pub val_class_fraction: f64,
    pub val_triplets: usize,
    /// Consecutive non-improving epochs before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,

    // Evaluation.
    pub recall_ks: Vec<usize>,
    pub log_triplets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            mined_fraction: 0.7,
            miner: Miner::SmartAdaptive,
            lr_initial: 0.1,
            lr_decay_every: 3,
            lr_decay_factor: 2.0,
            weight_decay: 0.0005,
            warmup_epochs: 2,
            seed: 0,
            hidden_width: 128,
            embedding_dim: 64,
            per_layer_normalisation: false,
            margin: 0.2,
            global_margin: 0.01,
            lambda: 1.0,
            global_weight: 1.0,
            e_target: 0.6,
            controller_window: 8,
            kappa_min: 0.5,
            kappa_max: 64.0,
            kappa_initial: 16.0,
            fixed_kappa: 16.0,
            kappa_decay: 1.0,
            triplets_per_anchor: 1,
            list_size: 0,
            query_effort: 0,
            target_success: 0.98,
            build_effort: 10,
            success_window: 1000,
            attempt_cap_factor: 200,
            val_class_fraction: 0.1,
            val_triplets: 512,
            early_stop_patience: 5,
            early_stop_min_delta: 0.005,
            recall_ks: vec![1, 2, 4, 8],
            log_triplets: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|tok| parse::<usize>(key, tok.trim()))
        .collect()
}

impl TrainConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "mined_fraction" => self.mined_fraction = parse(key, value)?,
            "miner" => self.miner = value.parse()?,
            "lr_initial" => self.lr_initial = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "per_layer_normalisation" => self.per_layer_normalisation = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "global_margin" => self.global_margin = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "global_weight" => self.global_weight = parse(key, value)?,
            "e_target" => self.e_target = parse(key, value)?,
            "controller_window" => self.controller_window = parse(key, value)?,
            "kappa_min" => self.kappa_min = parse(key, value)?,
            "kappa_max" => self.kappa_max = parse(key, value)?,
            "kappa_initial" => self.kappa_initial = parse(key, value)?,
            "fixed_kappa" => self.fixed_kappa = parse(key, value)?,
            "kappa_decay" => self.kappa_decay = parse(key, value)?,
            "triplets_per_anchor" => self.triplets_per_anchor = parse(key, value)?,
            "list_size" => self.list_size = parse(key, value)?,
            "query_effort" => self.query_effort = parse(key, value)?,
            "target_success" => self.target_success = parse(key, value)?,
            "build_effort" => self.build_effort = parse(key, value)?,
            "success_window" => self.success_window = parse(key, value)?,
            "attempt_cap_factor" => self.attempt_cap_factor = parse(key, value)?,
            "val_class_fraction" => self.val_class_fraction = parse(key, value)?,
            "val_triplets" => self.val_triplets = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value)?,
            "early_stop_min_delta" => self.early_stop_min_delta = parse(key, value)?,
            "recall_ks" => self.recall_ks = parse_list(key, value)?,
            "log_triplets" => self.log_triplets = parse(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a block of `key=value` lines; `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (assignment, _) in kv_assignments(text)? {
            let (key, value) = assignment;
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv_text(&std::fs::read_to_string(path)?)?;
        Ok(config)
    }

    /// Applies `--set key=value` style overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let (key, value) = split_assignment(item.as_ref())?;
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Full sorted `key=value` snapshot of this configuration.
    pub fn snapshot(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("epochs", self.epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("mined_fraction", self.mined_fraction.to_string());
        map.insert("miner", self.miner.to_string());
        map.insert("lr_initial", self.lr_initial.to_string());
        map.insert("lr_decay_every", self.lr_decay_every.to_string());
        map.insert("lr_decay_factor", self.lr_decay_factor.to_string());
        map.insert("weight_decay", self.weight_decay.to_string());
        map.insert("warmup_epochs", self.warmup_epochs.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("hidden_width", self.hidden_width.to_string());
        map.insert("embedding_dim", self.embedding_dim.to_string());
        map.insert("per_layer_normalisation", self.per_layer_normalisation.to_string());
        map.insert("margin", self.margin.to_string());
        map.insert("global_margin", self.global_margin.to_string());
        map.insert("lambda", self.lambda.to_string());
        map.insert("global_weight", self.global_weight.to_string());
        map.insert("e_target", self.e_target.to_string());
        map.insert("controller_window", self.controller_window.to_string());
        map.insert("kappa_min", self.kappa_min.to_string());
        map.insert("kappa_max", self.kappa_max.to_string());
        map.insert("kappa_initial", self.kappa_initial.to_string());
        map.insert("fixed_kappa", self.fixed_kappa.to_string());
        map.insert("kappa_decay", self.kappa_decay.to_string());
        map.insert("triplets_per_anchor", self.triplets_per_anchor.to_string());
        map.insert("list_size", self.list_size.to_string());
        map.insert("query_effort", self.query_effort.to_string());
        map.insert("target_success", self.target_success.to_string());
        map.insert("build_effort", self.build_effort.to_string());
        map.insert("success_window", self.success_window.to_string());
        map.insert("attempt_cap_factor", self.attempt_cap_factor.to_string());
        map.insert("val_class_fraction", self.val_class_fraction.to_string());
        map.insert("val_triplets", self.val_triplets.to_string());
        map.insert("early_stop_patience", self.early_stop_patience.to_string());
        map.insert("early_stop_min_delta", self.early_stop_min_delta.to_string());
        let ks: Vec<String> = self.recall_ks.iter().map(|k| k.to_string()).collect();
        map.insert("recall_ks", ks.join(","));
        map.insert("log_triplets", self.log_triplets.to_string());
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mined_fraction) {
            return Err(Error::config("mined_fraction must be in [0, 1]"));
        }
        if self.epochs > 0 && self.epochs < self.warmup_epochs {
            return Err(Error::config("epochs must be at least warmup_epochs"));
        }
        if self.lr_initial <= 0.0 || self.lr_decay_factor < 1.0 || self.lr_decay_every == 0 {
            return Err(Error::config("learning-rate schedule parameters out of range"));
        }
        if self.hidden_width == 0 || self.embedding_dim == 0 {
            return Err(Error::config("network widths must be positive"));
        }
        if self.triplets_per_anchor == 0 {
            return Err(Error::config("triplets_per_anchor must be at least 1"));
        }
        if !(self.fixed_kappa > 0.0) || !(self.kappa_decay >= 1.0) {
            return Err(Error::config("fixed_kappa must be > 0 and kappa_decay >= 1"));
        }
        if self.recall_ks.is_empty() {
            return Err(Error::config("recall_ks must not be empty"));
        }
        if self.recall_ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("recall_ks must be strictly increasing"));
        }
        self.loss_config().validate()?;
        self.controller_config().validate()?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            global_margin: self.global_margin,
            lambda: self.lambda,
            global_weight: self.global_weight,
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            e_target: self.e_target,
            window: self.controller_window,
            kappa_min: self.kappa_min,
            kappa_max: self.kappa_max,
            kappa_initial: self.kappa_initial,
            warmup_epochs: self.warmup_epochs,
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            target_success: self.target_success,
            build_effort: self.build_effort,
            success_window: self.success_window,
            attempt_cap_factor: self.attempt_cap_factor,
        }
    }
}

/// Splits `key=value`, trimming whitespace around both sides.
pub fn split_assignment(item: &str) -> Result<(String, String)> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::config(format!("expected key=value, got {item:?}")))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

/// Parses `key=value` lines, returning assignments with their line numbers.
pub fn kv_assignments(text: &str) -> Result<Vec<((String, String), usize)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let assignment = split_assignment(line)
            .map_err(|_| Error::config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)))?;
        out.push((assignment, lineno + 1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn kv_text_round_trip() {
        let mut config = TrainConfig::default();
        config
            .apply_kv_text("epochs=15\nminer=smart-fixed-kappa\nfixed_kappa=4\n# comment\nrecall_ks=1,2\n")
            .unwrap();
        assert_eq!(config.epochs, 15);
        assert_eq!(config.miner, Miner::SmartFixedKappa);
        assert_eq!(config.fixed_kappa, 4.0);
        assert_eq!(config.recall_ks, vec![1, 2]);

        // The snapshot parses back to the same configuration.
        let snapshot = config.snapshot();
        let mut reparsed = TrainConfig::default();
        reparsed.apply_kv_text(&snapshot).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut config = TrainConfig::default();
        assert!(config.set("no_such_key", "1").is_err());
        assert!(config.set("epochs", "many").is_err());
        assert!(config.apply_kv_text("epochs 12\n").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut config = TrainConfig::default();
        config.apply_overrides(&["seed=9", "seed=10", "miner=random"]).unwrap();
        assert_eq!(config.seed, 10);
        assert_eq!(config.miner, Miner::Random);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut config = TrainConfig::default();
        config.mined_fraction = 1.5;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.recall_ks = vec![4, 2];
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.epochs = 1;
        assert!(config.validate().is_err());
    }
}
