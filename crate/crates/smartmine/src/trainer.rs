//! Epoch orchestration: full forward pass, index rebuild, neighbour
//! lists, controller update, mining, batch assembly, minibatch SGD on the
//! combined loss, and per-epoch evaluation. Also hosts the mining cost
//! benchmark and the run-directory writer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::ann::{default_effort, default_list_size, IndexConfig, ProximityGraph};
use crate::config::{Miner, TrainConfig};
use crate::controller::{ControllerTrace, KappaController};
use crate::dataset::{Dataset, Split, SplitData};
use crate::embedding::{default_specs, EmbeddingParams, LayerSpec, ParamGrads};
use crate::losses::{combined_loss, TripletVectors};
use crate::metrics::{self, EvalReport};
use crate::mining::{
    mix_batches_counted, naive_hard_triplets, random_triplets, select_triplets,
    semi_hard_triplets, Provenance, Triplet, TripletBatch,
};
use crate::{mix_seed, squared_distance, EmbeddingTable, Error, Result};

const SALT_RANDOM_POOL: u64 = 1;
const SALT_SELECT: u64 = 2;
const SALT_SHUFFLE: u64 = 3;
const SALT_BUILD: u64 = 4;
const SALT_SEMIHARD: u64 = 5;
const SALT_VALIDATION: u64 = 0x5641;
const SALT_CLUSTER: u64 = 0x4b4d;

/// Wall-clock milliseconds per epoch phase. Excluded from record equality:
/// two runs of the same configuration are identical except for time.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub forward_ms: f64,
    pub build_ms: f64,
    pub lists_ms: f64,
    pub mine_ms: f64,
    pub train_ms: f64,
    pub eval_ms: f64,
}

/// Everything observed during one epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Exclusion-boundary scale used, for miners that have one.
    pub kappa: Option<f64>,
    pub mined: usize,
    pub random: usize,
    pub fallback: usize,
    pub build_attempts: u64,
    pub build_successes: u64,
    pub eval: EvalReport,
    pub timings: PhaseTimings,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.lr == other.lr
            && self.kappa == other.kappa
            && self.mined == other.mined
            && self.random == other.random
            && self.fallback == other.fallback
            && self.build_attempts == other.build_attempts
            && self.build_successes == other.build_successes
            && self.eval == other.eval
    }
}

impl EpochRecord {
    pub fn triplets_trained(&self) -> usize {
        self.mined + self.random + self.fallback
    }
}

/// Final parameters plus the full per-epoch trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EmbeddingParams,
    pub records: Vec<EpochRecord>,
    pub controller_trace: Vec<ControllerTrace>,
    pub stopped_early: bool,
    /// `anchor,positive,negative,provenance,d_ap,d_an` lines when triplet
    /// logging is enabled; indices refer to the full dataset.
    pub triplet_log: Option<String>,
}

/// Learning rate at a 1-based epoch index.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = ((epoch - 1) / config.lr_decay_every) as i32;
    config.lr_initial / config.lr_decay_factor.powi(steps)
}

fn network_specs(config: &TrainConfig, input_dim: usize) -> Vec<LayerSpec> {
    let mut specs = default_specs(input_dim, config.hidden_width, config.embedding_dim);
    if config.per_layer_normalisation {
        for spec in specs.iter_mut() {
            spec.has_normalisation = true;
        }
    }
    specs
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    train: SplitData,
    val: SplitData,
    test: SplitData,
    num_test_classes: usize,
    params: EmbeddingParams,
    controller: KappaController,
    prev_training_error: f64,
    controller_trace: Vec<ControllerTrace>,
    triplet_log: Option<String>,
}

impl<'a> Trainer<'a> {
    fn new(dataset: &Dataset, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut dataset = dataset.clone();
        dataset.hold_out_validation_classes(config.val_class_fraction)?;
        dataset.validate_for_training()?;
        let train = dataset.split_data(Split::Train);
        let val = dataset.split_data(Split::Validation);
        let test = dataset.split_data(Split::Test);
        if config.val_class_fraction > 0.0 && val.features.is_empty() {
            return Err(Error::config(
                "cannot carve a class-disjoint validation split: need at least 4 train classes",
            ));
        }
        if test.features.is_empty() {
            return Err(Error::config("dataset has no test split"));
        }
        let num_test_classes = {
            let mut classes: Vec<usize> = test.labels.clone();
            classes.sort_unstable();
            classes.dedup();
            classes.len()
        };
        if let Some(&max_k) = config.recall_ks.last() {
            if max_k + 1 > test.features.len() {
                return Err(Error::config(format!(
                    "recall@{max_k} undefined for a test split of {} points",
                    test.features.len()
                )));
            }
        }
        let params = EmbeddingParams::init(
            &network_specs(config, train.features[0].len()),
            mix_seed(config.seed, 0),
        )?;
        let controller = KappaController::new(config.controller_config())?;
        Ok(Self {
            config,
            train,
            val,
            test,
            num_test_classes,
            params,
            controller,
            prev_training_error: 1.0,
            controller_trace: Vec::new(),
            triplet_log: config.log_triplets.then(String::new),
        })
    }

    fn neighbour_list_len(&self) -> usize {
        let n = self.train.features.len();
        let k = if self.config.list_size > 0 {
            self.config.list_size
        } else {
            let classes = {
                let mut c: Vec<usize> = self.train.labels.clone();
                c.sort_unstable();
                c.dedup();
                c.len()
            };
            default_list_size((n + classes - 1) / classes)
        };
        k.min(n - 1)
    }

    /// Scale for a fixed-kappa epoch, with the optional per-epoch decay.
    fn fixed_kappa_for(&self, epoch: usize) -> f64 {
        let elapsed = (epoch - self.config.warmup_epochs - 1) as i32;
        (self.config.fixed_kappa / self.config.kappa_decay.powi(elapsed))
            .clamp(self.config.kappa_min, self.config.kappa_max)
    }

    fn mine(
        &mut self,
        epoch: usize,
        timings: &mut PhaseTimings,
    ) -> Result<(Vec<Triplet>, Vec<Triplet>, Option<f64>, u64, u64, Option<EmbeddingTable>)> {
        let epoch_seed = mix_seed(self.config.seed, epoch as u64);
        let t = Instant::now();
        let rows = self.params.forward_batch(&self.train.features)?;
        let table = EmbeddingTable::from_rows(&rows)?;
        timings.forward_ms = t.elapsed().as_secs_f64() * 1e3;

        let kappa = match self.config.miner {
            Miner::SmartAdaptive => {
                let kappa = self.controller.advance(self.prev_training_error, epoch)?;
                let (alpha, beta) =
                    self.controller.model().unwrap_or((f64::NAN, f64::NAN));
                self.controller_trace.push(ControllerTrace {
                    epoch,
                    observed_error: self.prev_training_error,
                    alpha,
                    beta,
                    kappa,
                });
                kappa
            }
            Miner::SmartFixedKappa => self.fixed_kappa_for(epoch),
            _ => unreachable!("mine() is only called for smart miners"),
        };

        let t = Instant::now();
        let graph =
            ProximityGraph::build(table, &self.config.index_config(), mix_seed(epoch_seed, SALT_BUILD))?;
        timings.build_ms = t.elapsed().as_secs_f64() * 1e3;
        let (attempts, successes) = (graph.stats().attempts, graph.stats().successes);

        let k = self.neighbour_list_len();
        let effort = if self.config.query_effort > 0 {
            self.config.query_effort.max(k)
        } else {
            default_effort(k)
        };
        let t = Instant::now();
        let lists = graph.neighbour_lists(k, effort)?;
        timings.lists_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let selected = select_triplets(
            &lists,
            &self.train.labels,
            kappa,
            self.config.triplets_per_anchor,
            mix_seed(epoch_seed, SALT_SELECT),
        )?;
        timings.mine_ms = t.elapsed().as_secs_f64() * 1e3;

        let mut mined = Vec::new();
        let mut fallback = Vec::new();
        for t in selected {
            match t.provenance {
                Provenance::Mined => mined.push(t),
                _ => fallback.push(t),
            }
        }
        Ok((mined, fallback, Some(kappa), attempts, successes, Some(graph.points().clone())))
    }

    /// Assembles this epoch's batches. Returns the batches plus the mining
    /// metadata that goes into the record.
    #[allow(clippy::type_complexity)]
    fn assemble_batches(
        &mut self,
        epoch: usize,
        timings: &mut PhaseTimings,
    ) -> Result<(Vec<TripletBatch>, Option<f64>, u64, u64, Option<EmbeddingTable>)> {
        let epoch_seed = mix_seed(self.config.seed, epoch as u64);
        let n = self.train.features.len();
        let warmup = epoch <= self.config.warmup_epochs;
        let num_batches =
            ((n * self.config.triplets_per_anchor) / self.config.batch_size).max(1);

        let (mined_pool, fallback_pool, kappa, attempts, successes, table) = if warmup
            || matches!(self.config.miner, Miner::Random | Miner::SemiHard)
        {
            (Vec::new(), Vec::new(), None, 0, 0, None)
        } else {
            let t = Instant::now();
            let mut out = match self.config.miner {
                Miner::NaiveHard => {
                    let rows = self.params.forward_batch(&self.train.features)?;
                    let table = EmbeddingTable::from_rows(&rows)?;
                    let (mined, _) = naive_hard_triplets(&table, &self.train.labels);
                    (mined, Vec::new(), None, 0, 0, Some(table))
                }
                _ => self.mine(epoch, timings)?,
            };
            if matches!(self.config.miner, Miner::NaiveHard) {
                timings.mine_ms = t.elapsed().as_secs_f64() * 1e3;
            }
            // Mined pools larger than one per anchor per batch slot are
            // consumed in selection order.
            out.0.truncate(num_batches * self.config.batch_size);
            out
        };

        let mined_per_batch = if kappa.is_some() || !mined_pool.is_empty() {
            let target = (self.config.mined_fraction * self.config.batch_size as f64).round()
                as usize;
            target.min(mined_pool.len() / num_batches)
        } else {
            0
        };
        let mined_used = &mined_pool[..mined_per_batch * num_batches];

        let random_needed = (self.config.batch_size - mined_per_batch) * num_batches;
        let mut random_pool = fallback_pool;
        random_pool.truncate(random_needed);
        if random_pool.len() < random_needed {
            random_pool.extend(random_triplets(
                &self.train.labels,
                random_needed - random_pool.len(),
                mix_seed(epoch_seed, SALT_RANDOM_POOL),
            )?);
        }

        let batches = mix_batches_counted(
            mined_used,
            &random_pool,
            mined_per_batch,
            self.config.batch_size,
            mix_seed(epoch_seed, SALT_SHUFFLE),
        )?;
        Ok((batches, kappa, attempts, successes, table))
    }

    /// Draws `batch_size` distinct train samples for one semi-hard batch.
    fn semi_hard_members(&self, epoch: usize, batch: usize) -> Vec<usize> {
        let n = self.train.features.len();
        let size = self.config.batch_size.min(n);
        let seed = mix_seed(mix_seed(self.config.seed, epoch as u64), SALT_SEMIHARD + batch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..size {
            let j = rng.gen_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(size);
        indices
    }

    /// One SGD update on a batch of triplets. Returns the per-triplet
    /// losses.
    fn train_batch(&mut self, batch: &[Triplet], lr: f64) -> Result<Vec<f64>> {
        let mut embedded = Vec::with_capacity(batch.len());
        let mut tapes = Vec::with_capacity(batch.len());
        for t in batch {
            let (ea, tape_a) = self.params.forward(&self.train.features[t.anchor])?;
            let (ep, tape_p) = self.params.forward(&self.train.features[t.positive])?;
            let (en, tape_n) = self.params.forward(&self.train.features[t.negative])?;
            embedded.push(TripletVectors::new(ea, ep, en));
            tapes.push((tape_a, tape_p, tape_n));
        }
        let combined = combined_loss(&embedded, &self.config.loss_config())?;
        let mut acc = ParamGrads::zeros_like(&self.params);
        for (grads, (tape_a, tape_p, tape_n)) in combined.grads.iter().zip(&tapes) {
            let (ga, _) = self.params.backward(tape_a, &grads.anchor)?;
            acc.accumulate(&ga);
            let (gp, _) = self.params.backward(tape_p, &grads.positive)?;
            acc.accumulate(&gp);
            let (gn, _) = self.params.backward(tape_n, &grads.negative)?;
            acc.accumulate(&gn);
        }
        self.params.sgd_step(&acc, lr, self.config.weight_decay)?;
        Ok(combined.per_triplet_losses)
    }

    fn log_triplets(&mut self, batches: &[TripletBatch], table: Option<&EmbeddingTable>) {
        let Some(log) = self.triplet_log.as_mut() else {
            return;
        };
        let Some(table) = table else {
            return;
        };
        for t in batches.iter().flatten() {
            let d_ap = squared_distance(table.row(t.anchor), table.row(t.positive));
            let d_an = squared_distance(table.row(t.anchor), table.row(t.negative));
            let _ = writeln!(
                log,
                "{},{},{},{},{d_ap},{d_an}",
                self.train.original[t.anchor],
                self.train.original[t.positive],
                self.train.original[t.negative],
                t.provenance
            );
        }
    }

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let lr = learning_rate(self.config, epoch);
        let mut timings = PhaseTimings::default();
        let mut counts = (0usize, 0usize, 0usize);
        let mut losses: Vec<f64> = Vec::new();

        let (kappa, attempts, successes) = if self.config.miner == Miner::SemiHard
            && epoch > self.config.warmup_epochs
        {
            // Semi-hard mines within each minibatch using the embeddings
            // at the moment the batch is formed.
            let n = self.train.features.len();
            let num_batches = (n / self.config.batch_size).max(1);
            let t = Instant::now();
            for b in 0..num_batches {
                let members = self.semi_hard_members(epoch, b);
                let feats: Vec<Vec<f64>> =
                    members.iter().map(|&i| self.train.features[i].clone()).collect();
                let labels: Vec<usize> =
                    members.iter().map(|&i| self.train.labels[i]).collect();
                let rows = self.params.forward_batch(&feats)?;
                let table = EmbeddingTable::from_rows(&rows)?;
                let local = semi_hard_triplets(&table, &labels);
                if local.is_empty() {
                    continue;
                }
                let batch: TripletBatch = local
                    .iter()
                    .map(|t| Triplet {
                        anchor: members[t.anchor],
                        positive: members[t.positive],
                        negative: members[t.negative],
                        provenance: t.provenance,
                    })
                    .collect();
                counts.0 += batch.len();
                losses.extend(self.train_batch(&batch, lr)?);
            }
            timings.train_ms = t.elapsed().as_secs_f64() * 1e3;
            (None, 0, 0)
        } else {
            let (batches, kappa, attempts, successes, table) =
                self.assemble_batches(epoch, &mut timings)?;
            self.log_triplets(&batches, table.as_ref());
            let t = Instant::now();
            for batch in &batches {
                for triplet in batch {
                    match triplet.provenance {
                        Provenance::Mined => counts.0 += 1,
                        Provenance::Random => counts.1 += 1,
                        Provenance::RandomFallback => counts.2 += 1,
                    }
                }
                losses.extend(self.train_batch(batch, lr)?);
            }
            timings.train_ms = t.elapsed().as_secs_f64() * 1e3;
            (kappa, attempts, successes)
        };

        let training_error = metrics::training_error(&losses);

        let t = Instant::now();
        let eval = self.evaluate(epoch, training_error)?;
        timings.eval_ms = t.elapsed().as_secs_f64() * 1e3;

        self.prev_training_error = training_error;
        Ok(EpochRecord {
            epoch,
            lr,
            kappa,
            mined: counts.0,
            random: counts.1,
            fallback: counts.2,
            build_attempts: attempts,
            build_successes: successes,
            eval,
            timings,
        })
    }

    fn evaluate(&self, epoch: usize, training_error: f64) -> Result<EvalReport> {
        let rows = self.params.forward_batch(&self.test.features)?;
        let table = EmbeddingTable::from_rows(&rows)?;
        let assignment = metrics::cluster_for_nmi(
            &table,
            self.num_test_classes,
            mix_seed(self.config.seed, SALT_CLUSTER),
        )?;
        let nmi = metrics::nmi(&assignment, &self.test.labels)?;
        let mut recall = Vec::with_capacity(self.config.recall_ks.len());
        for &k in &self.config.recall_ks {
            recall.push((k, metrics::recall_at_k(&table, &self.test.labels, k)?));
        }
        let validation_error = if self.val.features.is_empty() {
            training_error
        } else {
            metrics::validation_error(
                &self.params,
                &self.val.features,
                &self.val.labels,
                self.config.margin,
                self.config.val_triplets,
                mix_seed(self.config.seed, SALT_VALIDATION),
            )?
        };
        Ok(EvalReport { epoch, nmi, recall, training_error, validation_error })
    }
}

/// Runs `config.epochs` epochs (or stops early when the validation error
/// fails to improve) and returns the final parameters with the full trace.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config)?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let record = trainer.run_epoch(epoch)?;
        let val = record.eval.validation_error;
        records.push(record);
        if best_val - val > config.early_stop_min_delta {
            best_val = val;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if config.early_stop_patience > 0 && stale_epochs >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: trainer.params,
        records,
        controller_trace: trainer.controller_trace,
        stopped_early,
        triplet_log: trainer.triplet_log,
    })
}

/// One row of the mining cost benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub naive_distances: u64,
    pub naive_ms: f64,
    pub smart_build_distances: u64,
    pub smart_list_distances: u64,
    pub smart_total_distances: u64,
    pub smart_ms: f64,
    pub build_attempts: u64,
    pub naive_triplets: usize,
    pub smart_triplets: usize,
}

/// Benchmark inputs: balanced random unit embeddings of the given sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub per_class: usize,
    pub list_size: usize,
    pub effort: usize,
    pub seed: u64,
    pub index: IndexConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4000, 8000],
            dim: 64,
            per_class: 10,
            list_size: default_list_size(10),
            effort: 0,
            seed: 0,
            index: IndexConfig::default(),
        }
    }
}

/// Wall-clock and distance-computation counts for naive-hardest versus
/// graph-indexed mining at each size.
pub fn benchmark_mining(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.sizes.is_empty() {
        return Err(Error::config("benchmark needs at least one size"));
    }
    let mut rows = Vec::with_capacity(config.sizes.len());
    for (i, &n) in config.sizes.iter().enumerate() {
        if n < 2 * config.per_class {
            return Err(Error::config(format!("benchmark size {n} too small")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, i as u64));
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..config.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|j| j / config.per_class).collect();
        let table = EmbeddingTable::from_rows(&points)?;

        let t = Instant::now();
        let (naive, naive_distances) = naive_hard_triplets(&table, &labels);
        let naive_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let graph =
            ProximityGraph::build(table, &config.index, mix_seed(config.seed, 1000 + i as u64))?;
        let k = config.list_size.min(n - 1);
        let effort = if config.effort > 0 { config.effort.max(k) } else { default_effort(k) };
        let (lists, list_cost) = graph.neighbour_lists_with_cost(k, effort)?;
        // Selection reuses the distances already attached to the lists.
        let selected = select_triplets(&lists, &labels, 4.0, 1, mix_seed(config.seed, 2000))?;
        let smart_ms = t.elapsed().as_secs_f64() * 1e3;

        let build_distances = graph.stats().distance_computations;
        rows.push(BenchRow {
            n,
            naive_distances,
            naive_ms,
            smart_build_distances: build_distances,
            smart_list_distances: list_cost,
            smart_total_distances: build_distances + list_cost,
            smart_ms,
            build_attempts: graph.stats().attempts,
            naive_triplets: naive.len(),
            smart_triplets: selected.len(),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: std::io::Write>(rows: &[BenchRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "n,naive_distances,naive_ms,smart_build_distances,smart_list_distances,smart_total_distances,smart_ms,build_attempts,naive_triplets,smart_triplets"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.naive_distances,
            r.naive_ms,
            r.smart_build_distances,
            r.smart_list_distances,
            r.smart_total_distances,
            r.smart_ms,
            r.build_attempts,
            r.naive_triplets,
            r.smart_triplets
        )?;
    }
    Ok(())
}

/// Writes the run directory: config snapshot, per-epoch reports,
/// controller trace, optional triplet log and the final checkpoint.
pub fn write_run_dir(
    out_dir: impl AsRef<Path>,
    config: &TrainConfig,
    outcome: &TrainOutcome,
) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), config.snapshot())?;

    let reports: Vec<EvalReport> = outcome.records.iter().map(|r| r.eval.clone()).collect();
    let mut file = std::fs::File::create(dir.join("reports.csv"))?;
    EvalReport::write_csv(&reports, &config.recall_ks, &mut file)?;

    let mut trace = String::from("epoch,observed_error,alpha,beta,kappa\n");
    for row in &outcome.controller_trace {
        let _ = writeln!(
            trace,
            "{},{},{},{},{}",
            row.epoch, row.observed_error, row.alpha, row.beta, row.kappa
        );
    }
    std::fs::write(dir.join("controller.csv"), trace)?;

    if let Some(log) = &outcome.triplet_log {
        std::fs::write(dir.join("triplets.log"), log)?;
    }
    outcome.params.save(dir.join("model.ckpt"))?;
    Ok(())
}
