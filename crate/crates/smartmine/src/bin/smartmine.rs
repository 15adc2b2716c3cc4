//! Thin command-line front end over the library: generate data, train,
//! sweep, benchmark and evaluate, driven by `key=value` config files with
//! `--set` overrides. See `examples/` for the library API.

use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::path::PathBuf;

use smartmine::config::{kv_assignments, split_assignment, TrainConfig};
use smartmine::dataset::{Dataset, Split};
use smartmine::embedding::EmbeddingParams;
use smartmine::metrics::{cluster_for_nmi, nmi, recall_at_k};
use smartmine::sweep::{run_sweep, write_sweep_csv, SweepParameter, SweepSpec};
use smartmine::trainer::{benchmark_mining, train, write_bench_csv, write_run_dir, BenchConfig};
use smartmine::{EmbeddingTable, Error, Result};

#[derive(Parser)]
#[command(name = "smartmine", version, about = "Metric-learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered dataset.
    GenData(CommonArgs),
    /// Train an embedding network on a dataset file.
    Train(CommonArgs),
    /// Run a kappa or mined-fraction sweep (one training run per value).
    Sweep(CommonArgs),
    /// Benchmark naive-hardest vs graph-indexed mining cost.
    Bench(CommonArgs),
    /// Evaluate a saved checkpoint on a dataset's test split.
    Eval(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Plain-text key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for emitted tables and artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inline key=value override; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    /// Config-file assignments followed by `--set` overrides, in order.
    fn assignments(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            for (kv, _) in kv_assignments(&text)? {
                out.push(kv);
            }
        }
        for item in &self.set {
            out.push(split_assignment(item)?);
        }
        Ok(out)
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => do_train(args),
        Command::Sweep(args) => do_sweep(args),
        Command::Bench(args) => do_bench(args),
        Command::Eval(args) => do_eval(args),
    }
}

fn out_dir(args: &CommonArgs) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn gen_data(args: CommonArgs) -> Result<()> {
    let mut num_classes = 10usize;
    let mut per_class = 50usize;
    let mut input_dim = 32usize;
    let mut cluster_spread = 0.35f64;
    let mut seed = 0u64;
    let mut format = String::from("text");
    for (key, value) in args.assignments()? {
        match key.as_str() {
            "num_classes" => num_classes = parse(&key, &value)?,
            "per_class" => per_class = parse(&key, &value)?,
            "input_dim" => input_dim = parse(&key, &value)?,
            "cluster_spread" => cluster_spread = parse(&key, &value)?,
            "seed" => seed = parse(&key, &value)?,
            "format" => format = value,
            other => return Err(Error::config(format!("unknown gen-data key {other:?}"))),
        }
    }
    if let Some(s) = args.seed {
        seed = s;
    }
    let dataset =
        Dataset::generate_synthetic(num_classes, per_class, input_dim, cluster_spread, seed)?;
    let dir = out_dir(&args)?;
    let path = match format.as_str() {
        "text" => {
            let path = dir.join("dataset.txt");
            dataset.save(&path)?;
            path
        }
        "binary" => {
            let path = dir.join("dataset.bin");
            dataset.save_binary(&path)?;
            path
        }
        other => return Err(Error::config(format!("unknown format {other:?}"))),
    };
    println!("wrote {} points ({num_classes} classes, dim {input_dim}) to {}", dataset.len(), path.display());
    Ok(())
}

/// Splits assignments into command-level keys and TrainConfig keys.
fn train_config_from(
    args: &CommonArgs,
    command_keys: &[&str],
) -> Result<(TrainConfig, HashMap<String, String>)> {
    let mut config = TrainConfig::default();
    let mut extras = HashMap::new();
    for (key, value) in args.assignments()? {
        if command_keys.contains(&key.as_str()) {
            extras.insert(key, value);
        } else {
            config.set(&key, &value)?;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok((config, extras))
}

fn require<'a>(extras: &'a HashMap<String, String>, key: &str, hint: &str) -> Result<&'a str> {
    extras
        .get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::config(format!("missing required key {key:?} ({hint})")))
}

fn do_train(args: CommonArgs) -> Result<()> {
    let (config, extras) = train_config_from(&args, &["data"])?;
    let data_path = require(&extras, "data", "path to a dataset file")?;
    let dataset = Dataset::load(data_path)?;
    let outcome = train(&dataset, &config)?;
    let dir = out_dir(&args)?;
    write_run_dir(&dir, &config, &outcome)?;
    let mut stdout = std::io::stdout().lock();
    let reports: Vec<_> = outcome.records.iter().map(|r| r.eval.clone()).collect();
    smartmine::metrics::EvalReport::write_csv(&reports, &config.recall_ks, &mut stdout)?;
    println!(
        "trained {} epochs{}; artifacts in {}",
        outcome.records.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        dir.display()
    );
    Ok(())
}

fn do_sweep(args: CommonArgs) -> Result<()> {
    let (base, extras) = train_config_from(&args, &["data", "parameter", "values"])?;
    let data_path = require(&extras, "data", "path to a dataset file")?;
    let parameter: SweepParameter =
        require(&extras, "parameter", "kappa or mined_fraction")?.parse()?;
    let values: Vec<f64> = require(&extras, "values", "comma-separated list, e.g. 1,4,16,64")?
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad sweep value {tok:?}")))
        })
        .collect::<Result<_>>()?;
    let dataset = Dataset::load(data_path)?;
    let spec = SweepSpec { parameter, values, base };
    let runs = run_sweep(&dataset, &spec)?;
    let dir = out_dir(&args)?;
    let file = std::fs::File::create(dir.join("sweep.csv"))?;
    write_sweep_csv(&runs, parameter, &spec.base.recall_ks, file)?;
    write_sweep_csv(&runs, parameter, &spec.base.recall_ks, std::io::stdout().lock())?;
    println!("swept {} over {} values; table in {}", parameter.key(), runs.len(), dir.display());
    Ok(())
}

fn do_bench(args: CommonArgs) -> Result<()> {
    let mut bench = BenchConfig::default();
    for (key, value) in args.assignments()? {
        match key.as_str() {
            "sizes" => {
                bench.sizes = value
                    .split(',')
                    .map(|tok| parse::<usize>("sizes", tok.trim()))
                    .collect::<Result<_>>()?
            }
            "dim" => bench.dim = parse(&key, &value)?,
            "per_class" => bench.per_class = parse(&key, &value)?,
            "list_size" => bench.list_size = parse(&key, &value)?,
            "effort" => bench.effort = parse(&key, &value)?,
            "seed" => bench.seed = parse(&key, &value)?,
            "target_success" => bench.index.target_success = parse(&key, &value)?,
            "build_effort" => bench.index.build_effort = parse(&key, &value)?,
            "success_window" => bench.index.success_window = parse(&key, &value)?,
            "attempt_cap_factor" => bench.index.attempt_cap_factor = parse(&key, &value)?,
            other => return Err(Error::config(format!("unknown bench key {other:?}"))),
        }
    }
    if let Some(seed) = args.seed {
        bench.seed = seed;
    }
    let rows = benchmark_mining(&bench)?;
    let dir = out_dir(&args)?;
    let file = std::fs::File::create(dir.join("bench.csv"))?;
    write_bench_csv(&rows, file)?;
    write_bench_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

fn do_eval(args: CommonArgs) -> Result<()> {
    let mut model_path = None;
    let mut data_path = None;
    let mut ks = vec![1usize, 2, 4, 8];
    let mut seed = 0u64;
    for (key, value) in args.assignments()? {
        match key.as_str() {
            "model" => model_path = Some(value),
            "data" => data_path = Some(value),
            "recall_ks" => {
                ks = value
                    .split(',')
                    .map(|tok| parse::<usize>("recall_ks", tok.trim()))
                    .collect::<Result<_>>()?
            }
            "seed" => seed = parse(&key, &value)?,
            other => return Err(Error::config(format!("unknown eval key {other:?}"))),
        }
    }
    if let Some(s) = args.seed {
        seed = s;
    }
    let model_path = model_path.ok_or_else(|| Error::config("missing required key \"model\""))?;
    let data_path = data_path.ok_or_else(|| Error::config("missing required key \"data\""))?;
    let params = EmbeddingParams::load(model_path)?;
    let dataset = Dataset::load(data_path)?;
    let test = dataset.split_data(Split::Test);
    if test.features.is_empty() {
        return Err(Error::config("dataset has no test split"));
    }
    let rows = params.forward_batch(&test.features)?;
    let table = EmbeddingTable::from_rows(&rows)?;
    let classes = {
        let mut c = test.labels.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    };
    let assignment = cluster_for_nmi(&table, classes, seed)?;
    let nmi_value = nmi(&assignment, &test.labels)?;
    let recalls: Vec<String> = ks.iter().map(|k| format!("r@{k}")).collect();
    println!("nmi,{}", recalls.join(","));
    let mut values = vec![format!("{nmi_value}")];
    for &k in &ks {
        values.push(format!("{}", recall_at_k(&table, &test.labels, k)?));
    }
    println!("{}", values.join(","));
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for key {key:?}")))
}
