//! Builds the proximity graph over random unit vectors and measures
//! neighbour-list recall against brute force, along with the distance
//! computations each query spends.
//!
//! ```bash
//! cargo run --release --example ann_index_quality
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartmine::ann::{brute_force_knn, default_effort, IndexConfig, ProximityGraph};
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
    let dim = 64;
    let k = 10;
    let table = random_unit_table(n, dim, 7);

    let t = std::time::Instant::now();
    let graph = ProximityGraph::build(table.clone(), &IndexConfig::default(), 11)?;
    let stats = graph.stats();
    println!(
        "build: {} points, {} attempts, trailing success {:.4}, {} distance computations, {:.1} ms",
        n,
        stats.attempts,
        stats.trailing_success_rate,
        stats.distance_computations,
        t.elapsed().as_secs_f64() * 1e3
    );
    let mean_degree: f64 =
        (0..n).map(|v| graph.edges_of(v).len() as f64).sum::<f64>() / n as f64;
    println!("mean out-degree: {mean_degree:.1}");

    let effort = default_effort(k);
    let t = std::time::Instant::now();
    let (lists, cost) = graph.neighbour_lists_with_cost(k, effort)?;
    let per_query = cost as f64 / n as f64;
    println!(
        "neighbour lists: k={k}, effort={effort}, {:.1} distance computations per query ({:.3} of N), {:.1} ms",
        per_query,
        per_query / n as f64,
        t.elapsed().as_secs_f64() * 1e3
    );

    let mut hits = 0usize;
    for (i, list) in lists.iter().enumerate() {
        let exact = brute_force_knn(&table, table.row(i), k, Some(i));
        hits += list.indices.iter().filter(|idx| exact.indices.contains(idx)).count();
    }
    let recall = hits as f64 / (n * k) as f64;
    println!("recall@{k} vs brute force: {recall:.4}");

    // Full-effort searches reproduce brute force exactly.
    let mut exact_matches = 0usize;
    for i in (0..n).step_by(100) {
        let full = graph.search_from(table.row(i), k, n, Some(i), i)?;
        let exact = brute_force_knn(&table, table.row(i), k, Some(i));
        if full.indices == exact.indices {
            exact_matches += 1;
        }
    }
    println!("full-effort spot checks equal to brute force: {exact_matches}/20");
    Ok(())
}
