//! Sweep harnesses: one full training run per swept value with a shared
//! seed, emitted as a combined plot-ready table keyed by the value.

use std::io::Write;
use std::str::FromStr;

use crate::config::{Miner, TrainConfig};
use crate::dataset::Dataset;
use crate::trainer::{train, TrainOutcome};
use crate::{Error, Result};

/// Which hyper-parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Fixed exclusion-boundary scale; forces the fixed-kappa miner.
    Kappa,
    /// Fraction of mined triplets per batch.
    MinedFraction,
}

impl SweepParameter {
    pub fn key(&self) -> &'static str {
        match self {
            SweepParameter::Kappa => "kappa",
            SweepParameter::MinedFraction => "mined_fraction",
        }
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepParameter::Kappa),
            "mined_fraction" => Ok(SweepParameter::MinedFraction),
            other => Err(Error::config(format!(
                "unknown sweep parameter {other:?}; expected kappa or mined_fraction"
            ))),
        }
    }
}

/// A sweep: the parameter, its values, and the base configuration shared
/// by every run.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base: TrainConfig,
}

/// One completed run of a sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub value: f64,
    pub outcome: TrainOutcome,
}

/// Applies a swept value onto a copy of the base configuration.
pub fn configure(base: &TrainConfig, parameter: SweepParameter, value: f64) -> TrainConfig {
    let mut config = base.clone();
    match parameter {
        SweepParameter::Kappa => {
            config.miner = Miner::SmartFixedKappa;
            config.fixed_kappa = value;
            // Keep the swept value inside the clamp range.
            config.kappa_min = config.kappa_min.min(value);
            config.kappa_max = config.kappa_max.max(value);
        }
        SweepParameter::MinedFraction => config.mined_fraction = value,
    }
    config
}

/// One full training run per value, all sharing the base seed.
pub fn run_sweep(dataset: &Dataset, spec: &SweepSpec) -> Result<Vec<SweepRun>> {
    if spec.values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    spec.values
        .iter()
        .map(|&value| {
            let config = configure(&spec.base, spec.parameter, value);
            Ok(SweepRun { value, outcome: train(dataset, &config)? })
        })
        .collect()
}

/// Combined plot-ready table: the swept value as the first column, then
/// the per-epoch report columns.
pub fn write_sweep_csv<W: Write>(
    runs: &[SweepRun],
    parameter: SweepParameter,
    ks: &[usize],
    mut w: W,
) -> Result<()> {
    let recalls: Vec<String> = ks.iter().map(|k| format!("r@{k}")).collect();
    writeln!(w, "{},epoch,nmi,{},train_err,val_err", parameter.key(), recalls.join(","))?;
    for run in runs {
        for record in &run.outcome.records {
            writeln!(w, "{},{}", run.value, record.eval.csv_line())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_base() -> TrainConfig {
        let mut config = TrainConfig::default();
        config.epochs = 3;
        config.batch_size = 16;
        config.hidden_width = 12;
        config.embedding_dim = 8;
        config.recall_ks = vec![1];
        config.val_triplets = 32;
        config.success_window = 50;
        config.early_stop_patience = 0;
        config
    }

    #[test]
    fn empty_value_list_is_an_error() {
        let spec = SweepSpec { parameter: SweepParameter::Kappa, values: vec![], base: tiny_base() };
        let dataset = Dataset::generate_synthetic(8, 10, 6, 0.3, 1).unwrap();
        assert!(run_sweep(&dataset, &spec).is_err());
    }

    #[test]
    fn kappa_sweep_produces_one_trace_per_value() {
        let dataset = Dataset::generate_synthetic(8, 10, 6, 0.3, 1).unwrap();
        let spec = SweepSpec {
            parameter: SweepParameter::Kappa,
            values: vec![1.0, 4.0, 16.0, 64.0],
            base: tiny_base(),
        };
        let runs = run_sweep(&dataset, &spec).unwrap();
        assert_eq!(runs.len(), 4);
        for run in &runs {
            assert_eq!(run.outcome.records.len(), 3);
            // Post-warmup epochs carry the swept kappa.
            assert_eq!(run.outcome.records[2].kappa, Some(run.value));
        }
        let mut buf = Vec::new();
        write_sweep_csv(&runs, SweepParameter::Kappa, &[1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kappa,epoch,nmi,r@1,train_err,val_err"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
    }

    #[test]
    fn identical_values_share_identical_traces() {
        let dataset = Dataset::generate_synthetic(8, 10, 6, 0.3, 1).unwrap();
        let spec = SweepSpec {
            parameter: SweepParameter::MinedFraction,
            values: vec![0.4, 0.4],
            base: tiny_base(),
        };
        let runs = run_sweep(&dataset, &spec).unwrap();
        assert_eq!(runs[0].outcome.records, runs[1].outcome.records);
    }
}
