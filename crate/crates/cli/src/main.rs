//! Command-line driver for the privacy-preserving driving-style toolkit:
//! synthetic data generation, secure distributed tree training, encrypted
//! recognition, and the two benchmark sweeps.
//!
//! Exit codes: 0 on success, 1 for command-line usage errors, 2 for runtime
//! failures (missing files, malformed data, protocol errors).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use drivestyle::datagen::{
    generate, run_experiment, telematics_columns, write_metrics_csv_file, ExperimentSpec,
    GenConfig, LabelRule, MetricsRow, SweepAxis,
};
use drivestyle::domain::{AttributeSchema, ClassLabel, Dataset, EncodingMode, TreeNode};
use drivestyle::paillier::keygen;
use drivestyle::recognition::recognize;
use drivestyle::secure_sum::BatchMode;
use drivestyle::simnet::SimNet;
use drivestyle::training::{train, TrainConfig};

/// Marker for errors that are the caller's usage mistake rather than a
/// runtime failure; they exit with code 1 instead of 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "drivestyle",
    version,
    about = "Privacy-preserving driving-style recognition: train a decision tree across \
             many drivers without seeing their data, then classify new drivers without \
             seeing theirs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled telematics data (plus optional unlabeled queries)
    Gen(GenArgs),
    /// Train a decision tree over the secure multiparty protocol
    Train(TrainArgs),
    /// Classify one record against a tree via encrypted path matching
    Recognize(RecognizeArgs),
    /// Sweep the driver count and record training cost metrics
    BenchTrain(BenchArgs),
    /// Sweep the aggressive-path count (T=..) or key size (key_bits=..) for recognition
    BenchRecognize(BenchArgs),
}

fn parse_key_bits(s: &str) -> Result<usize, String> {
    match s {
        // The reduced test size keeps desk runs fast; it is far too small to
        // offer any security.
        "test" => Ok(64),
        "512" => Ok(512),
        "1024" => Ok(1024),
        _ => Err("must be one of: test, 512, 1024".into()),
    }
}

fn parse_encoding(s: &str) -> Result<EncodingMode, String> {
    match s {
        "augmented" => Ok(EncodingMode::Augmented),
        // "paper" is a compatibility alias for the original ones-only layout.
        "ones" | "paper" => Ok(EncodingMode::OnesOnly),
        _ => Err("must be one of: augmented, ones".into()),
    }
}

fn parse_tie_label(s: &str) -> Result<ClassLabel, String> {
    ClassLabel::parse(s).map_err(|_| "must be one of: aggressive, defensive".into())
}

/// A sweep request like `m=100..500:100`, `T=1..10`, or `key_bits=512,1024`.
#[derive(Debug, Clone)]
struct SweepArg {
    axis: SweepAxis,
    values: Vec<u64>,
}

fn parse_sweep(s: &str) -> Result<SweepArg, String> {
    let (axis_str, values_str) = s
        .split_once('=')
        .ok_or("expected AXIS=VALUES, e.g. m=100..500:100 or T=1..10")?;
    let axis = match axis_str {
        "m" => SweepAxis::Drivers,
        "T" => SweepAxis::Paths,
        "key_bits" => SweepAxis::KeyBits,
        other => return Err(format!("unknown sweep axis '{other}' (use m, T, or key_bits)")),
    };
    let values = if let Some((range, rest)) = values_str.split_once("..") {
        let (end, step) = match rest.split_once(':') {
            Some((end, step)) => (end, step.parse::<u64>().map_err(|e| e.to_string())?),
            None => (rest, 1),
        };
        if step == 0 {
            return Err("step must be positive".into());
        }
        let start: u64 = range.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        let end: u64 = end.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        (start..=end).step_by(step as usize).collect()
    } else {
        values_str
            .split(',')
            .map(|v| v.trim().parse::<u64>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<u64>, String>>()?
    };
    if values.is_empty() {
        return Err("sweep produced no values".into());
    }
    Ok(SweepArg { axis, values })
}

#[derive(Args)]
struct GenArgs {
    /// Number of labeled driver records
    #[arg(long)]
    drivers: usize,
    /// Number of additional unlabeled query records
    #[arg(long, default_value_t = 0)]
    unlabeled: usize,
    /// RNG seed; omit for a fresh random run
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for schema.csv, train.csv, queries.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Depth of the randomly planted labeling tree
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Probability of flipping each planted label
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Label by counting above-threshold attributes (>= this many is
    /// aggressive) instead of planting a tree
    #[arg(long, conflicts_with_all = ["depth", "noise"])]
    threshold_count: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset CSV (one driver per row)
    #[arg(long)]
    data: PathBuf,
    /// Attribute schema CSV (name,threshold)
    #[arg(long)]
    schema: PathBuf,
    /// Paillier key size
    #[arg(long, value_parser = parse_key_bits, default_value = "test")]
    key_bits: usize,
    /// RNG seed; omit for a fresh random run
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the trained tree JSON
    #[arg(long, default_value = "tree.json")]
    out: PathBuf,
    /// Cap on split depth (default: the attribute count)
    #[arg(long)]
    max_depth: Option<usize>,
    /// Label for exact class ties
    #[arg(long, value_parser = parse_tie_label, default_value = "defensive")]
    tie_label: ClassLabel,
    /// Run each node's secure sums on parallel threads
    #[arg(long)]
    concurrent: bool,
}

#[derive(Args)]
struct RecognizeArgs {
    /// Trained tree JSON
    #[arg(long)]
    tree: PathBuf,
    /// Attribute schema CSV (name,threshold)
    #[arg(long)]
    schema: PathBuf,
    /// The record to classify, as comma-separated values
    #[arg(long, conflicts_with = "data")]
    values: Option<String>,
    /// Dataset CSV to take the record from
    #[arg(long)]
    data: Option<PathBuf>,
    /// Row index into --data (0-based)
    #[arg(long, default_value_t = 0, requires = "data")]
    row: usize,
    /// Path digit encoding
    #[arg(long, value_parser = parse_encoding, default_value = "augmented")]
    encoding: EncodingMode,
    /// Paillier key size
    #[arg(long, value_parser = parse_key_bits, default_value = "test")]
    key_bits: usize,
    /// RNG seed; omit for a fresh random run
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Sweep spec: m=START..END[:STEP] for training, T=..[:..] or
    /// key_bits=A,B for recognition
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<SweepArg>,
    /// Paillier key size (fixed axis value)
    #[arg(long, value_parser = parse_key_bits, default_value = "test")]
    key_bits: usize,
    /// Repetitions per sweep value
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// RNG seed; omit for a fresh random run
    #[arg(long)]
    seed: Option<u64>,
    /// Path digit encoding
    #[arg(long, value_parser = parse_encoding, default_value = "augmented")]
    encoding: EncodingMode,
    /// Output metrics CSV path
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Write the full per-phase, per-party breakdown instead of one summary
    /// row per run
    #[arg(long)]
    detailed: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Train(args) => run_train(args),
        Command::Recognize(args) => run_recognize(args),
        Command::BenchTrain(args) => run_bench(args, SweepAxis::Drivers, "m=100..500:100"),
        Command::BenchRecognize(args) => run_bench(args, SweepAxis::Paths, "T=1..10"),
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let label_rule = match args.threshold_count {
        Some(min_count) => LabelRule::ThresholdCount { min_count },
        None => LabelRule::PlantedTree {
            depth: args.depth,
            noise: args.noise,
        },
    };
    let config = GenConfig {
        columns: telematics_columns(),
        drivers: args.drivers,
        unlabeled: args.unlabeled,
        label_rule,
    };
    let data = generate(&config, args.seed)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let schema_path = args.out.join("schema.csv");
    let train_path = args.out.join("train.csv");
    data.schema.write_csv_file(&schema_path)?;
    data.train.write_csv_file(&train_path)?;
    println!("wrote {}", schema_path.display());
    println!("wrote {} ({} labeled records)", train_path.display(), data.train.len());
    if args.unlabeled > 0 {
        let queries_path = args.out.join("queries.csv");
        data.queries.write_csv_file(&queries_path)?;
        println!(
            "wrote {} ({} unlabeled records)",
            queries_path.display(),
            data.queries.len()
        );
    }
    if let Some(tree) = &data.planted {
        let tree_path = args.out.join("planted_tree.json");
        std::fs::write(&tree_path, tree.to_json()?)?;
        println!("wrote {} (labeling ground truth)", tree_path.display());
    }
    Ok(())
}

fn load_schema(path: &Path) -> Result<AttributeSchema> {
    AttributeSchema::read_csv_file(path)
        .with_context(|| format!("reading schema {}", path.display()))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let dataset = Dataset::read_csv_file(schema.clone(), &args.data)
        .with_context(|| format!("reading dataset {}", args.data.display()))?;

    let (_, sk) = keygen(args.key_bits, args.seed)?;
    let config = TrainConfig {
        max_depth: args.max_depth,
        tie_label: args.tie_label,
        batch_mode: if args.concurrent {
            BatchMode::Concurrent
        } else {
            BatchMode::Sequential
        },
    };
    let mut net = SimNet::with_drivers(u32::try_from(dataset.len()).context("too many drivers")?);
    let started = Instant::now();
    let tree = train(&mut net, &sk, &dataset, &config, args.seed)?;
    let wall = started.elapsed();
    net.transcript_mut().set_wall_time(wall);

    std::fs::write(&args.out, tree.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let t = net.transcript();
    println!("wrote {}", args.out.display());
    println!(
        "tree: depth {}, {} leaves, {} aggressive paths",
        tree.depth(),
        tree.leaf_count(),
        tree.aggressive_paths(&schema)?.len()
    );
    println!(
        "protocol: {} drivers, {} messages, {} bytes, {:.1} ms",
        dataset.len(),
        t.total_messages(),
        t.total_bytes(),
        wall.as_secs_f64() * 1e3
    );
    Ok(())
}

fn run_recognize(args: RecognizeArgs) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let tree_json = std::fs::read_to_string(&args.tree)
        .with_context(|| format!("reading tree {}", args.tree.display()))?;
    let tree = TreeNode::from_json(&tree_json)?;
    tree.validate(&schema)?;

    let values: Vec<f64> = match (&args.values, &args.data) {
        (Some(csv_values), None) => csv_values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad value '{v}': {e}")))
            .collect::<Result<_>>()?,
        (None, Some(path)) => {
            let dataset = Dataset::read_csv_file(schema.clone(), path)
                .with_context(|| format!("reading dataset {}", path.display()))?;
            dataset
                .records()
                .get(args.row)
                .ok_or_else(|| {
                    anyhow!("row {} out of range (dataset has {})", args.row, dataset.len())
                })?
                .values
                .clone()
        }
        _ => {
            return Err(anyhow!(UsageError(
                "provide the record with either --values or --data [--row]".into()
            )))
        }
    };

    let (_, sk) = keygen(args.key_bits, args.seed)?;
    let mut net = SimNet::with_drivers(1);
    let outcome = recognize(&mut net, &sk, &tree, &schema, &values, args.encoding, args.seed)?;

    println!("{}", outcome.verdict);
    eprintln!(
        "paths: {}, differences decrypted: {}, messages: {}, bytes: {}",
        outcome.path_count,
        outcome.consumed,
        net.transcript().total_messages(),
        net.transcript().total_bytes()
    );
    Ok(())
}

fn run_bench(args: BenchArgs, default_axis: SweepAxis, default_sweep: &str) -> Result<()> {
    let sweep = match args.sweep {
        Some(sweep) => sweep,
        None => parse_sweep(default_sweep).expect("default sweep is valid"),
    };
    let axis_ok = match default_axis {
        SweepAxis::Drivers => sweep.axis == SweepAxis::Drivers,
        _ => matches!(sweep.axis, SweepAxis::Paths | SweepAxis::KeyBits),
    };
    if !axis_ok {
        let (cmd, allowed) = match default_axis {
            SweepAxis::Drivers => ("bench-train", "m"),
            _ => ("bench-recognize", "T or key_bits"),
        };
        return Err(anyhow!(UsageError(format!(
            "{cmd} sweeps {allowed}, not this axis"
        ))));
    }

    let spec = ExperimentSpec {
        axis: sweep.axis,
        values: sweep.values,
        reps: args.reps,
        encoding: args.encoding,
        key_bits: args.key_bits,
        seed: args.seed,
    };
    let started = Instant::now();
    let mut rows = run_experiment(&spec)?;
    if !args.detailed {
        rows.retain(|r: &MetricsRow| r.phase == "total");
    }
    write_metrics_csv_file(&rows, &args.out)?;
    println!(
        "wrote {} ({} rows, {:.1} s)",
        args.out.display(),
        rows.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
