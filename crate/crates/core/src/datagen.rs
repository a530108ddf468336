//! Synthetic telematics data, planted trees, and the benchmark harness.
//!
//! Data generation draws every column uniformly from a configured range and
//! labels records by one of three rules: a randomly planted threshold tree, a
//! caller-supplied tree, or a simple count of above-threshold attributes. All
//! randomness flows from one seed through per-purpose derived streams, so the
//! labeled pool, the unlabeled queries, and the planted tree replay exactly.
//!
//! The experiment runner drives the two protocols over swept parameters
//! (driver count, aggressive path count, key size) and reduces each run's
//! transcript to a fixed nine-row metrics block: per-phase compute time for
//! both sides, per-side transport totals, and one whole-run summary row.

use std::io::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{
    AggressivePath, Attribute, AttributeSchema, ClassLabel, Dataset, DriverRecord, EncodingMode,
    TreeNode,
};
use crate::error::{Error, Result};
use crate::paillier::keygen;
use crate::recognition::recognize;
use crate::rng::{derive_seed, materialize_seed, seeded_rng};
use crate::simnet::{PartyId, Phase, SimNet, Transcript};
use crate::training::{train, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// One generated column: a uniform value range and the classification
/// threshold that binarizes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub threshold: f64,
}

/// How generated records get their class labels.
#[derive(Debug, Clone)]
pub enum LabelRule {
    /// Plant a random full-depth threshold tree (distinct attributes along
    /// every path, leaf aggressive iff most of its path went at-or-above) and
    /// label by traversal; `noise` flips each label independently.
    PlantedTree { depth: usize, noise: f64 },
    /// Label by traversing a fixed tree.
    ExplicitTree(TreeNode),
    /// Aggressive iff at least `min_count` attributes are at or above their
    /// thresholds.
    ThresholdCount { min_count: usize },
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule::PlantedTree {
            depth: 3,
            noise: 0.0,
        }
    }
}

/// Full generation request: the columns, how many labeled drivers and
/// unlabeled query records to draw, and the labeling rule.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub columns: Vec<ColumnSpec>,
    pub drivers: usize,
    pub unlabeled: usize,
    pub label_rule: LabelRule,
}

impl GenConfig {
    pub fn new(columns: Vec<ColumnSpec>, drivers: usize) -> Self {
        GenConfig {
            columns,
            drivers,
            unlabeled: 0,
            label_rule: LabelRule::default(),
        }
    }

    fn validate(&self) -> Result<AttributeSchema> {
        if self.columns.is_empty() {
            return Err(Error::InvalidGenConfig("no columns".into()));
        }
        for c in &self.columns {
            if !(c.min.is_finite() && c.max.is_finite() && c.threshold.is_finite()) {
                return Err(Error::InvalidGenConfig(format!(
                    "column {} has a non-finite bound",
                    c.name
                )));
            }
            if c.min >= c.max {
                return Err(Error::InvalidGenConfig(format!(
                    "column {} range [{}, {}] is empty",
                    c.name, c.min, c.max
                )));
            }
            if !(c.min < c.threshold && c.threshold < c.max) {
                return Err(Error::InvalidGenConfig(format!(
                    "column {} threshold {} lies outside ({}, {})",
                    c.name, c.threshold, c.min, c.max
                )));
            }
        }
        let schema = AttributeSchema::new(
            self.columns
                .iter()
                .map(|c| Attribute {
                    name: c.name.clone(),
                    threshold: c.threshold,
                })
                .collect(),
        )?;
        match &self.label_rule {
            LabelRule::PlantedTree { depth, noise } => {
                if *depth == 0 || *depth > self.columns.len() {
                    return Err(Error::InvalidGenConfig(format!(
                        "planted depth {depth} not in 1..={}",
                        self.columns.len()
                    )));
                }
                if !(0.0..=1.0).contains(noise) {
                    return Err(Error::InvalidGenConfig(format!(
                        "label noise {noise} not in [0, 1]"
                    )));
                }
            }
            LabelRule::ExplicitTree(tree) => tree.validate(&schema)?,
            LabelRule::ThresholdCount { min_count } => {
                if *min_count == 0 || *min_count > self.columns.len() {
                    return Err(Error::InvalidGenConfig(format!(
                        "threshold count {min_count} not in 1..={}",
                        self.columns.len()
                    )));
                }
            }
        }
        Ok(schema)
    }
}

/// Everything one generation run produces. The planted tree is present only
/// under [`LabelRule::PlantedTree`]; queries carry no labels.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub schema: AttributeSchema,
    pub train: Dataset,
    pub queries: Dataset,
    pub planted: Option<TreeNode>,
}

/// The canonical nine-column telematics layout used by the demos and
/// benchmarks: monthly driving exposure and harshness counters.
pub fn telematics_columns() -> Vec<ColumnSpec> {
    let col = |name: &str, min: f64, max: f64, threshold: f64| ColumnSpec {
        name: name.into(),
        min,
        max,
        threshold,
    };
    vec![
        col("trips", 50.0, 600.0, 325.0),
        col("mileage_mi", 500.0, 10_000.0, 5250.0),
        col("accel_events", 20.0, 300.0, 110.0),
        col("avg_accel_ms2", 1.0, 5.0, 3.0),
        col("braking_events", 20.0, 300.0, 150.0),
        col("avg_braking_ms2", 2.0, 8.0, 4.9),
        col("avg_turn_degrees", 10.0, 90.0, 50.0),
        col("hard_braking_events", 0.0, 60.0, 30.0),
        col("risk_hours_0to4am", 0.0, 150.0, 80.0),
    ]
}

pub fn telematics_schema() -> AttributeSchema {
    AttributeSchema::new(
        telematics_columns()
            .into_iter()
            .map(|c| Attribute {
                name: c.name,
                threshold: c.threshold,
            })
            .collect(),
    )
    .expect("the canonical layout is valid")
}

/// Draws the labeled pool and the unlabeled queries. Each consumer (planted
/// tree, pool values, query values, label noise) gets its own derived stream,
/// so shrinking one request never shifts another's randomness.
pub fn generate(config: &GenConfig, seed: Option<u64>) -> Result<GeneratedData> {
    let schema = config.validate()?;
    let base = materialize_seed(seed);
    let mut plant_rng = seeded_rng(Some(derive_seed(base, &[0])));
    let mut pool_rng = seeded_rng(Some(derive_seed(base, &[1])));
    let mut query_rng = seeded_rng(Some(derive_seed(base, &[2])));
    let mut noise_rng = seeded_rng(Some(derive_seed(base, &[3])));

    let planted = match &config.label_rule {
        LabelRule::PlantedTree { depth, .. } => {
            Some(random_planted_tree(&schema, *depth, &mut plant_rng))
        }
        _ => None,
    };

    let draw = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        config
            .columns
            .iter()
            .map(|c| rng.gen_range(c.min..c.max))
            .collect()
    };

    let mut train_records = Vec::with_capacity(config.drivers);
    for _ in 0..config.drivers {
        let values = draw(&mut pool_rng);
        let mut label = match &config.label_rule {
            LabelRule::PlantedTree { .. } => planted
                .as_ref()
                .expect("planted above")
                .classify(&schema, &values)?,
            LabelRule::ExplicitTree(tree) => tree.classify(&schema, &values)?,
            LabelRule::ThresholdCount { min_count } => {
                let above = schema.binarize(&values)?.iter().filter(|&&b| b).count();
                if above >= *min_count {
                    ClassLabel::Aggressive
                } else {
                    ClassLabel::Defensive
                }
            }
        };
        if let LabelRule::PlantedTree { noise, .. } = &config.label_rule {
            if *noise > 0.0 && noise_rng.gen_bool(*noise) {
                label = match label {
                    ClassLabel::Aggressive => ClassLabel::Defensive,
                    ClassLabel::Defensive => ClassLabel::Aggressive,
                };
            }
        }
        train_records.push(DriverRecord {
            values,
            label: Some(label),
        });
    }

    let query_records = (0..config.unlabeled)
        .map(|_| DriverRecord {
            values: draw(&mut query_rng),
            label: None,
        })
        .collect();

    Ok(GeneratedData {
        train: Dataset::new(schema.clone(), train_records)?,
        queries: Dataset::new(schema.clone(), query_records)?,
        schema,
        planted,
    })
}

fn random_planted_tree(schema: &AttributeSchema, depth: usize, rng: &mut ChaCha20Rng) -> TreeNode {
    let available: Vec<usize> = (0..schema.len()).collect();
    plant_node(schema, &available, depth, 0, rng)
}

fn plant_node(
    schema: &AttributeSchema,
    available: &[usize],
    depth_left: usize,
    ones_so_far: usize,
    rng: &mut ChaCha20Rng,
) -> TreeNode {
    if depth_left == 0 {
        // Majority of the path's conditions went at-or-above: the kind of
        // monotone rule a threshold tree can actually re-learn from samples.
        let conditions = schema.len() - available.len();
        let label = if 2 * ones_so_far > conditions {
            ClassLabel::Aggressive
        } else {
            ClassLabel::Defensive
        };
        return TreeNode::leaf(label);
    }
    let pick = rng.gen_range(0..available.len());
    let attribute = available[pick];
    let rest: Vec<usize> = available
        .iter()
        .copied()
        .filter(|&a| a != attribute)
        .collect();
    let below = plant_node(schema, &rest, depth_left - 1, ones_so_far, rng);
    let above = plant_node(schema, &rest, depth_left - 1, ones_so_far + 1, rng);
    TreeNode::split(
        attribute,
        schema.attributes()[attribute].threshold,
        below,
        above,
    )
}

/// Builds a tree with exactly `count` aggressive leaf paths: a full binary
/// tree of minimal depth over the first attributes, with the last `count`
/// leaves (in traversal order) aggressive. The all-below leaf stays
/// defensive, so a record under every threshold never matches.
pub fn plant_tree_with_aggressive_paths(
    count: usize,
    schema: &AttributeSchema,
) -> Result<TreeNode> {
    // Minimal depth d with 2^d >= count + 1.
    let mut d = 0usize;
    while (1usize << d) < count + 1 {
        d += 1;
    }
    if d > schema.len() {
        return Err(Error::InfeasiblePathCount {
            count,
            attributes: schema.len(),
        });
    }
    let total_leaves = 1usize << d;
    let first_aggressive = total_leaves - count;
    let mut next_leaf = 0usize;
    Ok(build_counted(schema, d, 0, first_aggressive, &mut next_leaf))
}

fn build_counted(
    schema: &AttributeSchema,
    depth_left: usize,
    level: usize,
    first_aggressive: usize,
    next_leaf: &mut usize,
) -> TreeNode {
    if depth_left == 0 {
        let label = if *next_leaf >= first_aggressive {
            ClassLabel::Aggressive
        } else {
            ClassLabel::Defensive
        };
        *next_leaf += 1;
        return TreeNode::leaf(label);
    }
    let below = build_counted(schema, depth_left - 1, level + 1, first_aggressive, next_leaf);
    let above = build_counted(schema, depth_left - 1, level + 1, first_aggressive, next_leaf);
    TreeNode::split(
        level,
        schema.attributes()[level].threshold,
        below,
        above,
    )
}

/// A record sitting at every column's minimum: strictly below every
/// threshold, so it reaches the all-below leaf and matches no aggressive path
/// of a counted tree. The worst case for recognition (nothing terminates
/// early).
pub fn all_minima_record(columns: &[ColumnSpec]) -> Vec<f64> {
    columns.iter().map(|c| c.min).collect()
}

/// Which parameter a benchmark sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Training with a varying driver count.
    Drivers,
    /// Recognition with a varying aggressive path count.
    Paths,
    /// Recognition at varying key sizes (fixed four-path tree).
    KeyBits,
}

/// One benchmark request: the axis, its values, repetitions per value, and
/// the fixed protocol parameters.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    pub reps: usize,
    pub encoding: EncodingMode,
    pub key_bits: usize,
    pub seed: Option<u64>,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidExperiment("no sweep values".into()));
        }
        if self.values[0] == 0 {
            return Err(Error::InvalidExperiment("sweep values must be positive".into()));
        }
        if !self.values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidExperiment(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.reps == 0 {
            return Err(Error::InvalidExperiment("reps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One metrics observation. Every run emits nine rows: three compute phases
/// times two sides, two transport rows, and one whole-run total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub protocol: String,
    pub key_bits: usize,
    pub m: usize,
    /// Aggressive path count, written under the conventional `|T|` header.
    #[serde(rename = "|T|")]
    pub paths: usize,
    pub n: usize,
    pub phase: String,
    pub party: String,
    pub messages: u64,
    pub bytes: u64,
    pub millis: f64,
}

// Identity columns shared by every row of one run.
struct RunMeta<'a> {
    run_id: String,
    protocol: &'a str,
    key_bits: usize,
    m: usize,
    paths: usize,
    n: usize,
    driver_count: u32,
}

/// The nine standard rows for one finished run.
fn collect_rows(meta: &RunMeta<'_>, transcript: &Transcript) -> Vec<MetricsRow> {
    let driver_count = meta.driver_count;
    let row = |phase: &str, party: &str, messages: u64, bytes: u64, millis: f64| MetricsRow {
        run_id: meta.run_id.clone(),
        protocol: meta.protocol.to_string(),
        key_bits: meta.key_bits,
        m: meta.m,
        paths: meta.paths,
        n: meta.n,
        phase: phase.to_string(),
        party: party.to_string(),
        messages,
        bytes,
        millis,
    };
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(9);
    for phase in Phase::ALL {
        rows.push(row(
            phase.as_str(),
            "insurer",
            0,
            0,
            ms(transcript.phase_time(PartyId::Insurer, phase)),
        ));
        rows.push(row(
            phase.as_str(),
            "drivers",
            0,
            0,
            ms(transcript.drivers_phase_time(phase)),
        ));
    }
    let insurer_msgs = transcript.messages_sent_by(PartyId::Insurer);
    let insurer_bytes = transcript.bytes_sent_by(PartyId::Insurer);
    let mut driver_msgs = 0u64;
    let mut driver_bytes = 0u64;
    for d in 1..=driver_count {
        driver_msgs += transcript.messages_sent_by(PartyId::Driver(d));
        driver_bytes += transcript.bytes_sent_by(PartyId::Driver(d));
    }
    rows.push(row("transport", "insurer", insurer_msgs, insurer_bytes, 0.0));
    rows.push(row("transport", "drivers", driver_msgs, driver_bytes, 0.0));
    rows.push(row(
        "total",
        "all",
        transcript.total_messages() as u64,
        transcript.total_bytes(),
        ms(transcript.wall_time()),
    ));
    rows
}

/// Runs a whole sweep and returns `9 * values * reps` metrics rows in sweep
/// order. One key pair per key size, generated up front, serves every run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricsRow>> {
    spec.validate()?;
    let base = materialize_seed(spec.seed);
    let columns = telematics_columns();
    let schema = telematics_schema();
    let n = schema.len();
    let mut rows = Vec::with_capacity(9 * spec.values.len() * spec.reps);

    match spec.axis {
        SweepAxis::Drivers => {
            let (_, sk) = keygen(spec.key_bits, Some(derive_seed(base, &[9])))?;
            // Labels keyed to one column give a fixed one-split tree, so the
            // per-driver traffic is identical across the sweep.
            let bench_tree = TreeNode::split(
                2,
                schema.attributes()[2].threshold,
                TreeNode::leaf(ClassLabel::Defensive),
                TreeNode::leaf(ClassLabel::Aggressive),
            );
            for (vi, &value) in spec.values.iter().enumerate() {
                let m = value as usize;
                for rep in 0..spec.reps {
                    let tag = [1, vi as u64, rep as u64];
                    let config = GenConfig {
                        columns: columns.clone(),
                        drivers: m,
                        unlabeled: 0,
                        label_rule: LabelRule::ExplicitTree(bench_tree.clone()),
                    };
                    let data = generate(&config, Some(derive_seed(base, &tag)))?;
                    let mut net = SimNet::with_drivers(m as u32);
                    let started = Instant::now();
                    let tree = train(
                        &mut net,
                        &sk,
                        &data.train,
                        &TrainConfig::default(),
                        Some(derive_seed(base, &[2, vi as u64, rep as u64])),
                    )?;
                    net.transcript_mut().set_wall_time(started.elapsed());
                    let paths = tree.aggressive_paths(&schema)?.len();
                    let meta = RunMeta {
                        run_id: format!("train-m{m}-r{rep}"),
                        protocol: "train",
                        key_bits: spec.key_bits,
                        m,
                        paths,
                        n,
                        driver_count: m as u32,
                    };
                    rows.extend(collect_rows(&meta, net.transcript()));
                }
            }
        }
        SweepAxis::Paths | SweepAxis::KeyBits => {
            let fixed_key = match spec.axis {
                SweepAxis::Paths => Some(keygen(spec.key_bits, Some(derive_seed(base, &[9])))?.1),
                _ => None,
            };
            let record = all_minima_record(&columns);
            for (vi, &value) in spec.values.iter().enumerate() {
                let (key_bits, path_count) = match spec.axis {
                    SweepAxis::Paths => (spec.key_bits, value as usize),
                    _ => (value as usize, 4),
                };
                let sk = match &fixed_key {
                    Some(sk) => sk.clone(),
                    None => keygen(key_bits, Some(derive_seed(base, &[9, value])))?.1,
                };
                let tree = plant_tree_with_aggressive_paths(path_count, &schema)?;
                for rep in 0..spec.reps {
                    let mut net = SimNet::with_drivers(1);
                    let started = Instant::now();
                    let outcome = recognize(
                        &mut net,
                        &sk,
                        &tree,
                        &schema,
                        &record,
                        spec.encoding,
                        Some(derive_seed(base, &[3, vi as u64, rep as u64])),
                    )?;
                    net.transcript_mut().set_wall_time(started.elapsed());
                    debug_assert_eq!(outcome.verdict, ClassLabel::Defensive);
                    debug_assert_eq!(outcome.consumed, path_count);
                    let meta = RunMeta {
                        run_id: match spec.axis {
                            SweepAxis::Paths => format!("recognize-t{path_count}-r{rep}"),
                            _ => format!("recognize-k{key_bits}-r{rep}"),
                        },
                        protocol: "recognize",
                        key_bits,
                        m: 1,
                        paths: path_count,
                        n,
                        driver_count: 1,
                    };
                    rows.extend(collect_rows(&meta, net.transcript()));
                }
            }
        }
    }
    Ok(rows)
}

/// Writes metrics as CSV with a header row.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv_file(rows: &[MetricsRow], path: &std::path::Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_metrics_csv(rows, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Ordinary least squares `y = slope * x + intercept` plus the coefficient of
/// determination. A perfectly flat, perfectly explained series reports 1.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len(), "series lengths differ");
    assert!(xs.len() >= 2, "need at least two points");
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, intercept, r2)
}

/// Convenience for checking counted trees in tests and benchmarks.
pub fn aggressive_path_count(tree: &TreeNode, schema: &AttributeSchema) -> Result<usize> {
    Ok(tree.aggressive_paths(schema)?.len())
}

/// The paths of a counted tree, for byte-accounting assertions.
pub fn planted_paths(count: usize, schema: &AttributeSchema) -> Result<Vec<AggressivePath>> {
    plant_tree_with_aggressive_paths(count, schema)?.aggressive_paths(schema)
}
