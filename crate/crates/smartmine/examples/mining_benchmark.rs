//! Measures distance computations and wall-clock for naive-hardest mining
//! versus graph-indexed mining as the set size doubles. Naive counts grow
//! exactly quadratically; the indexed pipeline stays well below that.
//!
//! ```bash
//! cargo run --release --example mining_benchmark
//! ```

use smartmine::trainer::{benchmark_mining, write_bench_csv, BenchConfig};

fn main() -> smartmine::Result<()> {
    let config = BenchConfig::default();
    let rows = benchmark_mining(&config)?;
    write_bench_csv(&rows, std::io::stdout().lock())?;
    if let [a, b] = &rows[..] {
        println!(
            "naive growth x{:.3}, smart growth x{:.3}",
            b.naive_distances as f64 / a.naive_distances as f64,
            b.smart_total_distances as f64 / a.smart_total_distances as f64
        );
    }
    Ok(())
}
