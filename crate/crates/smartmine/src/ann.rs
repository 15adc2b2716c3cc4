//! Occlusion-pruned proximity graph over the current embedding of the
//! training set.
//!
//! The graph is built by traverse-add: sample an ordered vertex pair
//! `(p, q)`, run a backtracking best-first search from `p` for `q`'s
//! embedding, and on failure add an edge from the best vertex found to `q`.
//! Success is tracked over a sliding window and the build stops once the
//! window hits the target rate (or an attempt cap). Edge lists keep only
//! un-occluded neighbours, which keeps their length small and roughly
//! independent of the set size.
//!
//! After the build the graph is immutable: searches never mutate it and are
//! deterministic, so neighbour-list generation can run in parallel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BinaryHeap;
use std::collections::VecDeque;
use std::io::Write;

use crate::{squared_distance, EmbeddingTable, Error, Result};

/// Build and query knobs for the proximity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    /// Trailing success rate at which the traverse-add loop stops.
    pub target_success: f64,
    /// Vertex expansions per traverse-add search.
    pub build_effort: usize,
    /// Length of the sliding success window.
    pub success_window: usize,
    /// Attempt cap as a multiple of the vertex count.
    pub attempt_cap_factor: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            target_success: 0.98,
            build_effort: 10,
            success_window: 1000,
            attempt_cap_factor: 200,
        }
    }
}

/// Neighbour-list length for a dataset with `per_class` samples per class:
/// twice the per-class count, clamped to `[16, 64]`, so the list always
/// contains both positives and negatives.
pub fn default_list_size(per_class: usize) -> usize {
    (2 * per_class).clamp(16, 64)
}

/// Search effort used when generating neighbour lists of length `k`.
/// Each expansion costs roughly two distance evaluations on top of the
/// descent, so this keeps the per-query cost well under a linear scan
/// while holding recall@10 above 95% on structure-free data.
pub fn default_effort(k: usize) -> usize {
    2 * k + 4
}

/// One outbound edge: target vertex and exact squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target: u32,
    pub dist: f64,
}

/// Counters recorded while building the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildStats {
    pub attempts: u64,
    pub successes: u64,
    /// Success rate over the trailing window at termination.
    pub trailing_success_rate: f64,
    pub distance_computations: u64,
    /// True when the build stopped by reaching the target rate rather than
    /// the attempt cap.
    pub reached_target: bool,
}

/// Result of one graph (or brute-force) query.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Neighbour indices, ascending by distance, ties by lower index.
    pub indices: Vec<usize>,
    /// Exact squared Euclidean distances, aligned with `indices`.
    pub distances: Vec<f64>,
    /// Distance evaluations performed by this query.
    pub distance_computations: u64,
}

/// Per-anchor sorted approximate nearest neighbours with exact distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourList {
    pub anchor: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// True iff an edge `a -> b` at squared distance `d_ab` is occluded by an
/// existing neighbour `c` at `d_ac` from `a` and `d_cb` from `b`.
#[inline]
pub fn occludes(d_ab: f64, d_ac: f64, d_cb: f64) -> bool {
    d_ac < d_ab && d_cb < d_ab
}

/// Exact k nearest neighbours by squared Euclidean distance, ties broken by
/// lower index. `exclude` removes one vertex (typically the query itself).
pub fn brute_force_knn(
    points: &EmbeddingTable,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> SearchResult {
    let mut all: Vec<(f64, usize)> = (0..points.len())
        .filter(|&i| Some(i) != exclude)
        .map(|i| (squared_distance(points.row(i), query), i))
        .collect();
    all.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    all.truncate(k);
    SearchResult {
        indices: all.iter().map(|&(_, i)| i).collect(),
        distances: all.iter().map(|&(d, _)| d).collect(),
        distance_computations: points.len() as u64,
    }
}

/// Frontier entry: an evaluated but not yet expanded vertex, ordered
/// ascending by (distance, index).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    target: u32,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap, we pop the nearest first.
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then_with(|| other.target.cmp(&self.target))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable per-search buffers; the stamp avoids clearing the visited map
/// between the many searches of a build.
struct Scratch {
    eval_stamp: Vec<u32>,
    current: u32,
    heap: BinaryHeap<Frontier>,
    evaluated: Vec<(f64, u32)>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            eval_stamp: vec![0; n],
            current: 0,
            heap: BinaryHeap::new(),
            evaluated: Vec::new(),
        }
    }

    fn begin(&mut self) {
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            self.eval_stamp.fill(0);
            self.current = 1;
        }
        self.heap.clear();
        self.evaluated.clear();
    }

    #[inline]
    fn seen(&self, v: u32) -> bool {
        self.eval_stamp[v as usize] == self.current
    }

    #[inline]
    fn mark(&mut self, v: u32) {
        self.eval_stamp[v as usize] = self.current;
    }
}

/// An immutable directed neighbour graph over an embedding table.
#[derive(Debug, Clone)]
pub struct ProximityGraph {
    points: EmbeddingTable,
    edges: Vec<Vec<Edge>>,
    stats: BuildStats,
}

impl ProximityGraph {
    /// Builds the graph with the traverse-add loop. Deterministic for a
    /// fixed seed.
    pub fn build(points: EmbeddingTable, config: &IndexConfig, seed: u64) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::config("index needs at least 2 points"));
        }
        if points.iter_rows().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric("non-finite embedding passed to index build"));
        }
        if !(0.0 < config.target_success && config.target_success <= 1.0) {
            return Err(Error::config("target success must be in (0, 1]"));
        }
        if config.build_effort == 0 || config.success_window == 0 {
            return Err(Error::config("build effort and success window must be positive"));
        }

        let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scratch = Scratch::new(n);
        let mut window: VecDeque<bool> = VecDeque::with_capacity(config.success_window);
        let mut window_hits = 0usize;
        let mut attempts = 0u64;
        let mut successes = 0u64;
        let mut dist_count = 0u64;
        let cap = (config.attempt_cap_factor * n) as u64;
        let mut reached_target = false;

        while attempts < cap {
            let p = rng.gen_range(0..n);
            let mut q = rng.gen_range(0..n - 1);
            if q >= p {
                q += 1;
            }
            attempts += 1;

            let query = points.row(q);
            let (best, _) = search_raw(
                &points,
                &edges,
                query,
                1,
                config.build_effort,
                None,
                p,
                false,
                &mut scratch,
                &mut dist_count,
            );
            let hit = best.first().map(|&(_, v)| v as usize) == Some(q);
            if hit {
                successes += 1;
                window_hits += 1;
            } else if let Some(&(_, found)) = best.first() {
                // The forward edge makes q reachable from where the search
                // stalled; the reverse edge densifies q's own list, which
                // lifts k-NN recall on structure-poor data.
                add_edge(&points, &mut edges, found as usize, q, &mut dist_count);
                add_edge(&points, &mut edges, q, found as usize, &mut dist_count);
            }
            window.push_back(hit);
            if window.len() > config.success_window {
                if window.pop_front() == Some(true) {
                    window_hits -= 1;
                }
            }
            if window.len() == config.success_window
                && window_hits as f64 / config.success_window as f64 >= config.target_success
            {
                reached_target = true;
                break;
            }
        }

        let trailing = if window.is_empty() {
            0.0
        } else {
            window.iter().filter(|&&h| h).count() as f64 / window.len() as f64
        };
        Ok(Self {
            points,
            edges,
            stats: BuildStats {
                attempts,
                successes,
                trailing_success_rate: trailing,
                distance_computations: dist_count,
                reached_target,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 0
    }

    pub fn points(&self) -> &EmbeddingTable {
        &self.points
    }

    pub fn stats(&self) -> &BuildStats {
        &self.stats
    }

    pub fn edges_of(&self, vertex: usize) -> &[Edge] {
        &self.edges[vertex]
    }

    /// True iff `candidate` would be occluded by an existing edge of
    /// `vertex` under the squared-distance rule.
    pub fn occlusion_test(&self, vertex: usize, candidate: usize) -> bool {
        let d_ab = squared_distance(self.points.row(vertex), self.points.row(candidate));
        self.edges[vertex].iter().any(|e| {
            e.dist < d_ab
                && squared_distance(self.points.row(e.target as usize), self.points.row(candidate))
                    < d_ab
        })
    }

    /// Backtracking best-first search from vertex 0. Returns the `k` best
    /// vertices among all visited, ascending by (distance, index). Raising
    /// `effort` (the expansion budget) never worsens any returned rank;
    /// `effort >= len()` visits every vertex and equals brute force.
    pub fn search(
        &self,
        query: &[f64],
        k: usize,
        effort: usize,
        exclude: Option<usize>,
    ) -> Result<SearchResult> {
        self.search_from(query, k, effort, exclude, 0)
    }

    /// Same as [`ProximityGraph::search`] with an explicit start vertex.
    pub fn search_from(
        &self,
        query: &[f64],
        k: usize,
        effort: usize,
        exclude: Option<usize>,
        start: usize,
    ) -> Result<SearchResult> {
        self.validate_query(query, k, effort, start)?;
        let mut scratch = Scratch::new(self.len());
        Ok(self.run_search(query, k, effort, exclude, start, &mut scratch))
    }

    fn validate_query(&self, query: &[f64], k: usize, effort: usize, start: usize) -> Result<()> {
        if query.len() != self.points.dim() {
            return Err(Error::config(format!(
                "query has width {}, index holds width {}",
                query.len(),
                self.points.dim()
            )));
        }
        if k == 0 || k >= self.len() {
            return Err(Error::config(format!(
                "k must satisfy 1 <= k < N (k={k}, N={})",
                self.len()
            )));
        }
        if effort < k {
            return Err(Error::config(format!("effort {effort} must be at least k={k}")));
        }
        if start >= self.len() {
            return Err(Error::config(format!("start vertex {start} out of range")));
        }
        Ok(())
    }

    fn run_search(
        &self,
        query: &[f64],
        k: usize,
        effort: usize,
        exclude: Option<usize>,
        start: usize,
        scratch: &mut Scratch,
    ) -> SearchResult {
        let mut dist_count = 0u64;
        let (best, _) = search_raw(
            &self.points,
            &self.edges,
            query,
            k,
            effort,
            exclude,
            start,
            true,
            scratch,
            &mut dist_count,
        );
        SearchResult {
            indices: best.iter().map(|&(_, v)| v as usize).collect(),
            distances: best.iter().map(|&(d, _)| d).collect(),
            distance_computations: dist_count,
        }
    }

    /// One neighbour list per vertex: element `i` equals
    /// `search_from(row(i), k, effort, exclude=i, start=i)`. Runs in
    /// parallel; results are identical to sequential execution.
    pub fn neighbour_lists(&self, k: usize, effort: usize) -> Result<Vec<NeighbourList>> {
        Ok(self.neighbour_lists_with_cost(k, effort)?.0)
    }

    /// Neighbour lists plus the total distance computations performed,
    /// summed over the per-vertex searches.
    pub fn neighbour_lists_with_cost(
        &self,
        k: usize,
        effort: usize,
    ) -> Result<(Vec<NeighbourList>, u64)> {
        self.validate_query(self.points.row(0), k, effort, 0)?;
        let lists: Vec<(NeighbourList, u64)> = (0..self.len())
            .into_par_iter()
            .map_init(
                || Scratch::new(self.len()),
                |scratch, i| {
                    let res =
                        self.run_search(self.points.row(i), k, effort, Some(i), i, scratch);
                    (
                        NeighbourList { anchor: i, indices: res.indices, distances: res.distances },
                        res.distance_computations,
                    )
                },
            )
            .collect();
        let cost = lists.iter().map(|(_, c)| c).sum();
        Ok((lists.into_iter().map(|(l, _)| l).collect(), cost))
    }

    /// Plain-text debug dump: one line per vertex with `(neighbour,
    /// distance)` pairs ascending.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (v, list) in self.edges.iter().enumerate() {
            write!(w, "{v}")?;
            for e in list {
                write!(w, " {}:{}", e.target, e.dist)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Core backtracking search over an edge set; shared by the build loop and
/// public queries.
///
/// Expanding a vertex walks its edge list in ascending length order,
/// evaluating unseen targets. The walk jumps to the first target that
/// improves on the expanded vertex's own distance (greedy descent, one
/// cheap step); targets that do not improve are pushed on a frontier
/// priority queue keyed by their exact distance to the query. At a local
/// minimum the whole list has been evaluated and the search backtracks to
/// the nearest frontier entry. `effort` counts vertex expansions.
///
/// Returns the k best (distance, vertex) pairs over everything evaluated,
/// ascending, ties by index. With `scan_remainder`, leftover expansion
/// budget after the frontier empties is spent evaluating unvisited
/// vertices in index order, which makes `effort = N` equivalent to a full
/// scan.
#[allow(clippy::too_many_arguments)]
fn search_raw(
    points: &EmbeddingTable,
    edges: &[Vec<Edge>],
    query: &[f64],
    k: usize,
    effort: usize,
    exclude: Option<usize>,
    start: usize,
    scan_remainder: bool,
    scratch: &mut Scratch,
    dist_count: &mut u64,
) -> (Vec<(f64, u32)>, usize) {
    scratch.begin();
    let start = start as u32;
    let d0 = squared_distance(points.row(start as usize), query);
    *dist_count += 1;
    scratch.mark(start);
    scratch.evaluated.push((d0, start));

    let mut expansions = 0usize;
    let mut current = Some((start, d0));
    while expansions < effort {
        let (v, walking_best) = match current.take() {
            Some(c) => c,
            None => match scratch.heap.pop() {
                Some(f) => (f.target, f.dist),
                None => break,
            },
        };
        expansions += 1;
        for e in &edges[v as usize] {
            if scratch.seen(e.target) {
                continue;
            }
            scratch.mark(e.target);
            let d = squared_distance(points.row(e.target as usize), query);
            *dist_count += 1;
            scratch.evaluated.push((d, e.target));
            if d < walking_best {
                current = Some((e.target, d));
                break;
            }
            scratch.heap.push(Frontier { dist: d, target: e.target });
        }
    }

    if scan_remainder && expansions < effort {
        let mut budget = effort - expansions;
        for v in 0..points.len() as u32 {
            if budget == 0 {
                break;
            }
            if !scratch.seen(v) {
                scratch.mark(v);
                let d = squared_distance(points.row(v as usize), query);
                *dist_count += 1;
                scratch.evaluated.push((d, v));
                budget -= 1;
            }
        }
    }

    scratch
        .evaluated
        .sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let best: Vec<(f64, u32)> = scratch
        .evaluated
        .iter()
        .filter(|&&(_, v)| exclude != Some(v as usize))
        .take(k)
        .copied()
        .collect();
    (best, expansions)
}

/// Inserts `a -> b` unless it already exists or is occluded by a shorter
/// edge, then drops longer edges of `a` that the new edge occludes.
fn add_edge(
    points: &EmbeddingTable,
    edges: &mut [Vec<Edge>],
    a: usize,
    b: usize,
    dist_count: &mut u64,
) {
    if a == b {
        return;
    }
    let b32 = b as u32;
    if edges[a].iter().any(|e| e.target == b32) {
        return;
    }
    let d_ab = squared_distance(points.row(a), points.row(b));
    *dist_count += 1;
    for e in &edges[a] {
        if e.dist >= d_ab {
            break; // list ascending: no shorter edges remain
        }
        let d_cb = squared_distance(points.row(e.target as usize), points.row(b));
        *dist_count += 1;
        if d_cb < d_ab {
            return; // occluded by an existing shorter edge
        }
    }
    let list = &mut edges[a];
    let mut keep = Vec::with_capacity(list.len() + 1);
    let mut inserted = false;
    for &e in list.iter() {
        if !inserted && (d_ab, b32) < (e.dist, e.target) {
            keep.push(Edge { target: b32, dist: d_ab });
            inserted = true;
        }
        if e.dist > d_ab {
            let d_bc = squared_distance(points.row(b), points.row(e.target as usize));
            *dist_count += 1;
            if d_bc < e.dist {
                continue; // now occluded by the new edge
            }
        }
        keep.push(e);
    }
    if !inserted {
        keep.push(Edge { target: b32, dist: d_ab });
    }
    *list = keep;
}
