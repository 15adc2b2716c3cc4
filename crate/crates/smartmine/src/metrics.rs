//! Embedding-quality evaluation: NMI against ground-truth classes,
//! Recall@K retrieval, and the training/validation error signals that
//! drive the kappa controller.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;

use crate::embedding::EmbeddingParams;
use crate::losses::triplet_loss;
use crate::mining::random_triplets;
use crate::{mix_seed, squared_distance, EmbeddingTable, Error, Result};

/// Per-epoch evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub epoch: usize,
    pub nmi: f64,
    /// `(K, recall)` pairs, ascending in K.
    pub recall: Vec<(usize, f64)>,
    pub training_error: f64,
    pub validation_error: f64,
}

impl EvalReport {
    pub fn csv_header(ks: &[usize]) -> String {
        let recalls: Vec<String> = ks.iter().map(|k| format!("r@{k}")).collect();
        format!("epoch,nmi,{},train_err,val_err", recalls.join(","))
    }

    pub fn csv_line(&self) -> String {
        let recalls: Vec<String> = self.recall.iter().map(|(_, r)| format!("{r}")).collect();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            self.nmi,
            recalls.join(","),
            self.training_error,
            self.validation_error
        )
    }

    pub fn write_csv<W: Write>(reports: &[EvalReport], ks: &[usize], mut w: W) -> Result<()> {
        writeln!(w, "{}", EvalReport::csv_header(ks))?;
        for r in reports {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information between two partitions, using the
/// geometric-mean normaliser `I / sqrt(H(A) * H(B))`. Invariant to
/// relabeling either side. Two single-block partitions score 1.0 by
/// convention; if exactly one side is a single block the score is 0.0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config("partitions must have equal length"));
    }
    if a.is_empty() {
        return Err(Error::config("partitions must be non-empty"));
    }
    // BTreeMaps keep the summation order deterministic, so equal inputs
    // produce bit-identical scores.
    let n = a.len() as f64;
    let mut counts_a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut counts_b: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *counts_a.entry(x).or_default() += 1;
        *counts_b.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let h_a = entropy(&counts_a, n);
    let h_b = entropy(&counts_b, n);
    if h_a <= 0.0 && h_b <= 0.0 {
        return Ok(1.0);
    }
    if h_a <= 0.0 || h_b <= 0.0 {
        return Ok(0.0);
    }
    let mut info = 0.0;
    for (&(x, y), &c) in &joint {
        let p_xy = c as f64 / n;
        let p_x = counts_a[&x] as f64 / n;
        let p_y = counts_b[&y] as f64 / n;
        info += p_xy * (p_xy / (p_x * p_y)).ln();
    }
    Ok((info / (h_a * h_b).sqrt()).clamp(0.0, 1.0))
}

/// Seeded k-means with k-means++ initialisation, 10 restarts, best inertia
/// kept. Deterministic per seed.
pub fn cluster_for_nmi(table: &EmbeddingTable, k: usize, seed: u64) -> Result<Vec<usize>> {
    const RESTARTS: usize = 10;
    const MAX_ITERS: usize = 100;
    let n = table.len();
    if k == 0 || k > n {
        return Err(Error::config(format!("cannot form {k} clusters from {n} points")));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, restart as u64));
        let mut centroids = plus_plus_init(table, k, &mut rng);
        let mut assignment = vec![0usize; n];
        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for i in 0..n {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = squared_distance(table.row(i), centroid);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if assignment[i] != best_c {
                    assignment[i] = best_c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; table.dim()]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[assignment[i]] += 1;
                for (s, v) in sums[assignment[i]].iter_mut().zip(table.row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for (target, s) in centroids[c].iter_mut().zip(&sums[c]) {
                        *target = s / counts[c] as f64;
                    }
                }
                // Empty clusters keep their previous centroid.
            }
        }
        let inertia: f64 = (0..n)
            .map(|i| squared_distance(table.row(i), &centroids[assignment[i]]))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, assignment));
        }
    }
    Ok(best.unwrap().1)
}

fn plus_plus_init(table: &EmbeddingTable, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = table.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(table.row(rng.gen_range(0..n)).to_vec());
    let mut dists: Vec<f64> =
        (0..n).map(|i| squared_distance(table.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let centroid = table.row(next).to_vec();
        for (i, d) in dists.iter_mut().enumerate() {
            *d = d.min(squared_distance(table.row(i), &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

/// Fraction of points whose K exact nearest neighbours (self excluded,
/// squared Euclidean, ties by lower index) contain at least one
/// same-label point.
pub fn recall_at_k(table: &EmbeddingTable, labels: &[usize], k: usize) -> Result<f64> {
    let n = table.len();
    if labels.len() != n {
        return Err(Error::config("labels length must match table"));
    }
    if n < 2 || k == 0 || k > n - 1 {
        return Err(Error::config(format!("recall@{k} undefined for {n} points")));
    }
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(table.row(i), table.row(j)), j))
                .collect();
            dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            dists[..k].iter().any(|&(_, j)| labels[j] == labels[i]) as usize
        })
        .sum();
    Ok(hits as f64 / n as f64)
}

/// Fraction of triplet losses that are non-zero, i.e. the fraction of the
/// batch producing a gradient.
pub fn training_error(per_triplet_losses: &[f64]) -> f64 {
    if per_triplet_losses.is_empty() {
        return 0.0;
    }
    let active = per_triplet_losses.iter().filter(|&&l| l > 0.0).count();
    active as f64 / per_triplet_losses.len() as f64
}

/// Training error over a fixed seeded set of random triplets drawn from a
/// held-out split. `features`/`labels` are the validation subset.
pub fn validation_error(
    params: &EmbeddingParams,
    features: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
    num_triplets: usize,
    seed: u64,
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    if features.len() != labels.len() {
        return Err(Error::config("validation features and labels differ in length"));
    }
    let triplets = random_triplets(labels, num_triplets, seed)?;
    let embedded = params.forward_batch(features)?;
    let losses: Vec<f64> = triplets
        .iter()
        .map(|t| {
            triplet_loss(&embedded[t.anchor], &embedded[t.positive], &embedded[t.negative], margin)
        })
        .collect();
    Ok(training_error(&losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{default_specs, EmbeddingParams};
    use rand::Rng;

    /// Independent NMI oracle via the joint-entropy identity
    /// `I = H(A) + H(B) - H(A,B)` over a dense contingency table.
    fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
        use std::collections::HashMap;
        let n = a.len() as f64;
        let mut ca: HashMap<usize, usize> = HashMap::new();
        let mut cb: HashMap<usize, usize> = HashMap::new();
        let mut cab: HashMap<(usize, usize), usize> = HashMap::new();
        for (&x, &y) in a.iter().zip(b) {
            *ca.entry(x).or_default() += 1;
            *cb.entry(y).or_default() += 1;
            *cab.entry((x, y)).or_default() += 1;
        }
        let h = |counts: &HashMap<usize, usize>| -> f64 {
            counts
                .values()
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum()
        };
        let h_ab: f64 = cab
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        let (ha, hb) = (h(&ca), h(&cb));
        if ha <= 0.0 && hb <= 0.0 {
            return 1.0;
        }
        if ha <= 0.0 || hb <= 0.0 {
            return 0.0;
        }
        ((ha + hb - h_ab) / (ha * hb).sqrt()).clamp(0.0, 1.0)
    }

    #[test]
    fn nmi_identical_up_to_relabeling_is_one() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let permuted = vec![5, 5, 3, 3, 9, 9];
        assert!((nmi(&labels, &permuted).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_independent_partitions_is_zero() {
        let labels = vec![0, 0, 1, 1];
        let clusters = vec![0, 1, 0, 1];
        assert!(nmi(&labels, &clusters).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nmi_hand_computed_value() {
        // I = 0.2158 nats, H(A) = ln 2, H(B) = 0.5623 nats -> 0.3456.
        let labels = vec![0, 0, 1, 1];
        let clusters = vec![0, 0, 0, 1];
        let value = nmi(&labels, &clusters).unwrap();
        assert!((value - 0.3456).abs() < 5e-4, "value {value}");
    }

    #[test]
    fn nmi_single_block_conventions() {
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_is_symmetric_and_matches_oracle_on_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(2..400);
            let ka = rng.gen_range(1..8);
            let kb = rng.gen_range(1..8);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ka)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kb)).collect();
            let fwd = nmi(&a, &b).unwrap();
            let rev = nmi(&b, &a).unwrap();
            assert!((fwd - rev).abs() < 1e-12);
            assert!((fwd - nmi_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_recovers_separated_balls() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 6;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            // Centres on coordinate axes, radius 10; spread 0.1.
            for _ in 0..20 {
                let mut p = vec![0.0; k];
                p[c] = 10.0;
                for v in p.iter_mut() {
                    *v += rng.gen_range(-0.1..0.1);
                }
                rows.push(p);
                labels.push(c);
            }
        }
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        let assignment = cluster_for_nmi(&table, k, 11).unwrap();
        assert!((nmi(&assignment, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_single_cluster_and_determinism() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        assert_eq!(cluster_for_nmi(&table, 1, 0).unwrap(), vec![0, 0, 0]);
        let a = cluster_for_nmi(&table, 2, 5).unwrap();
        let b = cluster_for_nmi(&table, 2, 5).unwrap();
        assert_eq!(a, b);
        assert!(cluster_for_nmi(&table, 4, 0).is_err());
    }

    #[test]
    fn recall_duplicated_points_hit_at_one() {
        // Every point duplicated once within its class.
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![5.0, 0.0],
            vec![5.0, 0.0],
        ];
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        let labels = vec![0, 0, 1, 1];
        assert_eq!(recall_at_k(&table, &labels, 1).unwrap(), 1.0);
    }

    #[test]
    fn recall_alternating_line_is_zero_at_one() {
        // Classes alternate along a line: the nearest neighbour is always
        // the other class.
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0]).collect();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        assert_eq!(recall_at_k(&table, &labels, 1).unwrap(), 0.0);
        // With K = N-1 every class of size >= 2 is found.
        assert_eq!(recall_at_k(&table, &labels, 7).unwrap(), 1.0);
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<f64>> =
            (0..40).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.gen_range(0..4)).collect();
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        let mut prev = 0.0;
        for k in 1..10 {
            let r = recall_at_k(&table, &labels, k).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn training_error_counts_active_fraction() {
        assert_eq!(training_error(&[0.0, 0.2, 0.5, 0.0]), 0.5);
        assert_eq!(training_error(&[0.0, 0.0]), 0.0);
        assert_eq!(training_error(&[0.1, 0.9, 0.3]), 1.0);
    }

    #[test]
    fn validation_error_empty_split_errors() {
        let params = EmbeddingParams::init(&default_specs(4, 8, 3), 0).unwrap();
        assert!(validation_error(&params, &[], &[], 0.2, 10, 0).is_err());
    }

    #[test]
    fn validation_error_deterministic_and_zero_for_perfect_embedding() {
        // An identity network on inputs already collapsed to two far-apart
        // class points: every random triplet is satisfied by margin.
        let spec = crate::embedding::LayerSpec::new(2, 2).with_normalisation();
        let layer =
            crate::embedding::Layer::new(spec, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            features.push(vec![1.0, 0.0]);
            labels.push(0);
            features.push(vec![-1.0, 0.0]);
            labels.push(1);
        }
        let e1 = validation_error(&params, &features, &labels, 0.2, 200, 9).unwrap();
        let e2 = validation_error(&params, &features, &labels, 0.2, 200, 9).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1, 0.0);
    }

    #[test]
    fn eval_report_csv_round_shape() {
        let report = EvalReport {
            epoch: 3,
            nmi: 0.5,
            recall: vec![(1, 0.4), (2, 0.5), (4, 0.6), (8, 0.7)],
            training_error: 0.61,
            validation_error: 0.58,
        };
        assert_eq!(EvalReport::csv_header(&[1, 2, 4, 8]), "epoch,nmi,r@1,r@2,r@4,r@8,train_err,val_err");
        let line = report.csv_line();
        assert!(line.starts_with("3,0.5,0.4,0.5,0.6,0.7,"));
    }
}
