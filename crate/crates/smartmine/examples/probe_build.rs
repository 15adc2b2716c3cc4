//! Scratch probe for index build parameters (temporary).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartmine::ann::{brute_force_knn, IndexConfig, ProximityGraph};
use smartmine::EmbeddingTable;

fn random_unit_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    EmbeddingTable::from_rows(&rows).unwrap()
}

fn main() -> smartmine::Result<()> {
    let n = 2000;
    let k = 10;
    let table = random_unit_table(n, 64, 7);
    let exact: Vec<Vec<usize>> = (0..n)
        .map(|i| brute_force_knn(&table, table.row(i), k, Some(i)).indices)
        .collect();

    for seed in [11u64, 22, 33, 44, 55] {
        let build_effort = 10usize;
        let config = IndexConfig { build_effort, ..IndexConfig::default() };
        let t = std::time::Instant::now();
        let graph = ProximityGraph::build(table.clone(), &config, seed)?;
        let build_ms = t.elapsed().as_secs_f64() * 1e3;
        let stats = graph.stats();
        let mean_degree: f64 =
            (0..n).map(|v| graph.edges_of(v).len() as f64).sum::<f64>() / n as f64;
        for effort in [24usize] {
            let (lists, cost) = graph.neighbour_lists_with_cost(k, effort)?;
            let per_query = cost as f64 / n as f64;
            let hits: usize = lists
                .iter()
                .enumerate()
                .map(|(i, l)| l.indices.iter().filter(|idx| exact[i].contains(idx)).count())
                .sum();
            let recall = hits as f64 / (n * k) as f64;
            println!(
                "be={build_effort:2} attempts={:7} deg={mean_degree:5.1} build_dists={:9} build_ms={build_ms:7.1} | effort={effort:3} per_query={per_query:6.1} recall={recall:.4} target={} trail={:.4}",
                stats.attempts, stats.distance_computations, stats.reached_target, stats.trailing_success_rate
            );
        }
    }
    Ok(())
}
