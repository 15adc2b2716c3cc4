//! Trains the same network with adaptive smart mining and with random
//! triplets on a shared seed, printing the per-epoch test Recall@1 of both
//! runs side by side along with the adaptive run's training error and
//! kappa trace.
//!
//! ```bash
//! cargo run --release --example compare_miners
//! ```

use smartmine::config::{Miner, TrainConfig};
use smartmine::dataset::Dataset;
use smartmine::trainer::train;

fn main() -> smartmine::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(1u64);

    let dataset = Dataset::generate_synthetic(20, 50, 32, 0.22, seed)?;

    let mut config = TrainConfig::default();
    config.epochs = 15;
    config.seed = seed;
    config.early_stop_patience = 0;

    let mut random_config = config.clone();
    random_config.miner = Miner::Random;

    let smart = train(&dataset, &config)?;
    let random = train(&dataset, &random_config)?;

    println!("epoch,smart_r1,random_r1,smart_train_err,smart_kappa,mined,fallback");
    for (s, r) in smart.records.iter().zip(&random.records) {
        println!(
            "{},{:.4},{:.4},{:.4},{},{},{}",
            s.epoch,
            s.eval.recall[0].1,
            r.eval.recall[0].1,
            s.eval.training_error,
            s.kappa.map(|k| format!("{k:.2}")).unwrap_or_else(|| "-".into()),
            s.mined,
            s.fallback,
        );
    }
    let wins = smart
        .records
        .iter()
        .zip(&random.records)
        .skip(7)
        .filter(|(s, r)| s.eval.recall[0].1 >= r.eval.recall[0].1)
        .count();
    println!("epochs >= 8 where smart >= random at recall@1: {wins}/8");
    Ok(())
}
