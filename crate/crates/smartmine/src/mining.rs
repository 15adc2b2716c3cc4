//! Triplet selection over per-anchor neighbour lists, plus the baseline
//! miners used for comparison: uniform random, naive hardest over the full
//! set, and minibatch semi-hard.
//!
//! The exclusion-boundary miner makes a single pass over each sorted
//! neighbour list. The first same-class entry fixes the boundary at
//! `kappa` times its squared distance; entries inside the boundary are
//! skipped; negatives beyond it become candidates and each later positive
//! remembers how many negatives preceded it, so a chosen positive is never
//! paired with a negative that sits farther from the anchor. Every fully
//! mined triplet therefore violates the triplet constraint by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::ann::NeighbourList;
use crate::{mix_seed, squared_distance, EmbeddingTable, Error, Result};

/// How a triplet was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Negative taken from the valid-negative list of the anchor.
    Mined,
    /// Anchor had no valid negative; a random triplet was substituted.
    RandomFallback,
    /// Drawn uniformly by the random miner.
    Random,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Mined => write!(f, "mined"),
            Provenance::RandomFallback => write!(f, "random-fallback"),
            Provenance::Random => write!(f, "random"),
        }
    }
}

/// An (anchor, positive, negative) index triple into the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub provenance: Provenance,
}

/// A batch of triplets as assembled by [`mix_batches`].
pub type TripletBatch = Vec<Triplet>;

/// Indices grouped by class label, the shared lookup for all miners.
fn class_members(labels: &[usize]) -> HashMap<usize, Vec<usize>> {
    let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &y) in labels.iter().enumerate() {
        map.entry(y).or_default().push(i);
    }
    map
}

/// `kappa` times the squared distance from the anchor to its nearest
/// same-class entry in the list.
pub fn exclusion_bound(list: &NeighbourList, labels: &[usize], kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::config("kappa must be positive"));
    }
    list.indices
        .iter()
        .zip(&list.distances)
        .find(|(&nb, _)| labels[nb] == labels[list.anchor])
        .map(|(_, &d)| kappa * d)
        .ok_or(Error::NoPositive { anchor: list.anchor })
}

/// A positive candidate and the number of valid negatives found before it.
struct PositiveEntry {
    index: usize,
    valid_negatives: usize,
}

fn uniform_pick(rng: &mut ChaCha8Rng, candidates: &[usize]) -> usize {
    candidates[rng.gen_range(0..candidates.len())]
}

/// Uniform triplet for a fixed anchor. The positive is any same-class
/// sample, the negative any sample from another class.
fn random_triplet_for_anchor(
    anchor: usize,
    labels: &[usize],
    members: &HashMap<usize, Vec<usize>>,
    rng: &mut ChaCha8Rng,
    provenance: Provenance,
) -> Result<Triplet> {
    let y = labels[anchor];
    let same = &members[&y];
    if same.len() < 2 {
        return Err(Error::config(format!("class {y} has no positive partner for anchor {anchor}")));
    }
    let positive = loop {
        let cand = uniform_pick(rng, same);
        if cand != anchor {
            break cand;
        }
    };
    let negative_pool: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != y).collect();
    if negative_pool.is_empty() {
        return Err(Error::config("dataset has a single class; no negatives exist"));
    }
    let negative = uniform_pick(rng, &negative_pool);
    Ok(Triplet { anchor, positive, negative, provenance })
}

/// Single-pass exclusion-boundary selection: `per_anchor` triplets per
/// neighbour list, each negative used at most once per anchor. Anchors with
/// no valid negative fall back to a random triplet. Positives with no valid
/// in-list candidate are drawn uniformly from the same class outside the
/// neighbour list.
pub fn select_triplets(
    lists: &[NeighbourList],
    labels: &[usize],
    kappa: f64,
    per_anchor: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if lists.is_empty() {
        return Err(Error::config("no neighbour lists to mine from"));
    }
    if !(kappa > 0.0) {
        return Err(Error::config("kappa must be positive"));
    }
    if per_anchor == 0 {
        return Err(Error::config("per_anchor must be at least 1"));
    }
    let members = class_members(labels);
    let mut out = Vec::with_capacity(lists.len() * per_anchor);

    for list in lists {
        let anchor = list.anchor;
        let y = labels[anchor];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, anchor as u64));

        let mut bound = None;
        let mut negatives: Vec<usize> = Vec::new();
        let mut positives: Vec<PositiveEntry> = Vec::new();
        for (&nb, &d) in list.indices.iter().zip(&list.distances) {
            match bound {
                None => {
                    if labels[nb] != y {
                        continue;
                    }
                    bound = Some(kappa * d);
                    positives.push(PositiveEntry { index: nb, valid_negatives: 0 });
                }
                Some(b) => {
                    if d < b {
                        continue;
                    }
                    if labels[nb] != y {
                        negatives.push(nb);
                    } else {
                        positives.push(PositiveEntry { index: nb, valid_negatives: negatives.len() });
                    }
                }
            }
        }

        for slot in 0..per_anchor {
            if slot >= negatives.len() {
                out.push(random_triplet_for_anchor(
                    anchor,
                    labels,
                    &members,
                    &mut rng,
                    Provenance::RandomFallback,
                )?);
                continue;
            }
            let negative = negatives[slot];
            let in_list =
                positives.iter().find(|p| p.valid_negatives > slot).map(|p| p.index);
            let positive = match in_list {
                Some(p) => Some(p),
                None => {
                    // Uniform positive from the same class outside the list.
                    let candidates: Vec<usize> = members[&y]
                        .iter()
                        .copied()
                        .filter(|&j| j != anchor && !list.indices.contains(&j))
                        .collect();
                    if candidates.is_empty() {
                        None
                    } else {
                        Some(uniform_pick(&mut rng, &candidates))
                    }
                }
            };
            match positive {
                Some(positive) => out.push(Triplet {
                    anchor,
                    positive,
                    negative,
                    provenance: Provenance::Mined,
                }),
                None => out.push(random_triplet_for_anchor(
                    anchor,
                    labels,
                    &members,
                    &mut rng,
                    Provenance::RandomFallback,
                )?),
            }
        }
    }
    Ok(out)
}

/// `count` uniform triplets: anchor uniform over samples whose class has a
/// positive partner, positive uniform within the class, negative uniform
/// outside it.
pub fn random_triplets(labels: &[usize], count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let members = class_members(labels);
    if members.len() < 2 {
        return Err(Error::config("random triplets need at least two classes"));
    }
    let eligible: Vec<usize> =
        (0..labels.len()).filter(|&i| members[&labels[i]].len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::config("no class has two samples; triplets are impossible"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let anchor = uniform_pick(&mut rng, &eligible);
            random_triplet_for_anchor(anchor, labels, &members, &mut rng, Provenance::Random)
        })
        .collect()
}

/// Hardest positive (argmax same-class distance) and hardest negative
/// (argmin different-class distance) per anchor over the full set, ties by
/// lower index. Anchors without a positive partner are skipped. Also
/// returns the number of distance computations performed.
pub fn naive_hard_triplets(
    embeddings: &EmbeddingTable,
    labels: &[usize],
) -> (Vec<Triplet>, u64) {
    let n = embeddings.len();
    let members = class_members(labels);
    let mut out = Vec::new();
    let mut dist_count = 0u64;
    for anchor in 0..n {
        let y = labels[anchor];
        if members[&y].len() < 2 {
            continue;
        }
        let mut hardest_pos: Option<(f64, usize)> = None;
        let mut hardest_neg: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == anchor {
                continue;
            }
            let d = squared_distance(embeddings.row(anchor), embeddings.row(j));
            dist_count += 1;
            if labels[j] == y {
                if hardest_pos.map_or(true, |(best, _)| d > best) {
                    hardest_pos = Some((d, j));
                }
            } else if hardest_neg.map_or(true, |(best, _)| d < best) {
                hardest_neg = Some((d, j));
            }
        }
        if let (Some((_, positive)), Some((_, negative))) = (hardest_pos, hardest_neg) {
            out.push(Triplet { anchor, positive, negative, provenance: Provenance::Mined });
        }
    }
    (out, dist_count)
}

/// Minibatch semi-hard selection: for every ordered same-class pair
/// `(anchor, positive)` in the batch, the closest negative farther from the
/// anchor than the positive is chosen; when none qualifies, the closest
/// negative overall. Indices are positions within the batch.
pub fn semi_hard_triplets(batch: &EmbeddingTable, labels: &[usize]) -> Vec<Triplet> {
    let n = batch.len();
    let mut out = Vec::new();
    for anchor in 0..n {
        let negatives: Vec<(f64, usize)> = (0..n)
            .filter(|&j| labels[j] != labels[anchor])
            .map(|j| (squared_distance(batch.row(anchor), batch.row(j)), j))
            .collect();
        if negatives.is_empty() {
            continue;
        }
        for positive in 0..n {
            if positive == anchor || labels[positive] != labels[anchor] {
                continue;
            }
            let d_ap = squared_distance(batch.row(anchor), batch.row(positive));
            let qualifying = negatives
                .iter()
                .filter(|&&(d, _)| d > d_ap)
                .min_by(|a, b| a.partial_cmp(b).unwrap());
            let chosen = qualifying
                .or_else(|| negatives.iter().min_by(|a, b| a.partial_cmp(b).unwrap()))
                .map(|&(_, j)| j)
                .unwrap();
            out.push(Triplet {
                anchor,
                positive,
                negative: chosen,
                provenance: Provenance::Mined,
            });
        }
    }
    out
}

/// Fixed-count batch assembly: each batch takes `mined_per_batch` triplets
/// from the mined pool and fills the rest from the random pool, then
/// shuffles. As many full batches as the pools allow.
pub fn mix_batches_counted(
    mined: &[Triplet],
    random: &[Triplet],
    mined_per_batch: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TripletBatch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if mined_per_batch > batch_size {
        return Err(Error::config("mined_per_batch exceeds batch size"));
    }
    let random_per_batch = batch_size - mined_per_batch;
    let by_mined =
        if mined_per_batch > 0 { mined.len() / mined_per_batch } else { usize::MAX };
    let by_random =
        if random_per_batch > 0 { random.len() / random_per_batch } else { usize::MAX };
    let num_batches = by_mined.min(by_random);
    if num_batches == usize::MAX {
        return Err(Error::config("batch size of zero triplets"));
    }

    let mut batches = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let mut batch: TripletBatch = Vec::with_capacity(batch_size);
        batch.extend_from_slice(&mined[b * mined_per_batch..(b + 1) * mined_per_batch]);
        batch.extend_from_slice(&random[b * random_per_batch..(b + 1) * random_per_batch]);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b as u64));
        // Fisher-Yates with the seeded generator.
        for i in (1..batch.len()).rev() {
            let j = rng.gen_range(0..=i);
            batch.swap(i, j);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Batch assembly at a mined fraction: each batch holds
/// `round(mined_fraction * batch_size)` mined triplets, remainder random.
pub fn mix_batches(
    mined: &[Triplet],
    random: &[Triplet],
    mined_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TripletBatch>> {
    if !(0.0..=1.0).contains(&mined_fraction) {
        return Err(Error::config("mined fraction must be in [0, 1]"));
    }
    let mined_per_batch = (mined_fraction * batch_size as f64).round() as usize;
    mix_batches_counted(mined, random, mined_per_batch.min(batch_size), batch_size, seed)
}
