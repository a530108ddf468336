//! Distributed ID3 tree training between the insurer and m drivers.
//!
//! The insurer never sees a record. For each node it broadcasts the node's
//! ancestor conditions and usable attributes; every driver locally derives
//! 0/1 indicator shares (all zeros when its record does not reach the node,
//! which keeps membership invisible inside the sums) and the counts are
//! aggregated with one ring secure sum per indicator. The insurer picks the
//! attribute with the smallest weighted post-split entropy, ties going to the
//! lowest index, and expands nodes breadth first, below branch first. Child
//! class totals fall out of the parent's counts for its chosen attribute, so
//! purity and empty-branch stops cost no extra protocol rounds.
//!
//! What each party can see is pinned by tests: the insurer's per-node view is
//! the 4 x |remaining| decrypted totals, and a driver's whole view is the
//! public key, the node broadcasts, and one ring ciphertext per sum.

use std::collections::VecDeque;

use crate::domain::{AttributeSchema, ClassLabel, Dataset, TreeNode};
use crate::error::{Error, Result};
use crate::paillier::SecretKey;
use crate::rng::{derive_seed, materialize_seed};
use crate::secure_sum::{
    distribute_public_key, secure_sum_batch, BatchMode, RingOrder, Share,
};
use crate::simnet::{MessageKind, PartyId, SimNet};

/// Which side of a threshold test a path takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Below,
    AtOrAbove,
}

/// Class totals of the records reaching a node, split by one attribute's
/// threshold test. The flat order (below aggressive, below defensive, above
/// aggressive, above defensive) is the canonical share and sum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub below_aggressive: u64,
    pub below_defensive: u64,
    pub above_aggressive: u64,
    pub above_defensive: u64,
}

impl ClassCounts {
    pub fn from_flat(flat: [u64; 4]) -> Self {
        ClassCounts {
            below_aggressive: flat[0],
            below_defensive: flat[1],
            above_aggressive: flat[2],
            above_defensive: flat[3],
        }
    }

    pub fn total(&self) -> u64 {
        self.below_aggressive + self.below_defensive + self.above_aggressive + self.above_defensive
    }

    pub fn aggressive(&self) -> u64 {
        self.below_aggressive + self.above_aggressive
    }

    pub fn defensive(&self) -> u64 {
        self.below_defensive + self.above_defensive
    }

    pub fn below_total(&self) -> u64 {
        self.below_aggressive + self.below_defensive
    }

    pub fn above_total(&self) -> u64 {
        self.above_aggressive + self.above_defensive
    }
}

/// Weighted post-split entropy in bits: each branch contributes its class
/// entropy weighted by its share of the records. Empty branches and zero
/// probabilities contribute nothing (0 log 0 = 0). Lower is a better split.
pub fn split_entropy(counts: &ClassCounts) -> f64 {
    fn branch_entropy(a: u64, d: u64) -> f64 {
        let n = (a + d) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mut h = 0.0;
        for c in [a, d] {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * p.log2();
            }
        }
        h
    }
    let total = counts.total() as f64;
    if total == 0.0 {
        return 0.0;
    }
    let below = counts.below_total() as f64;
    let above = counts.above_total() as f64;
    (below / total) * branch_entropy(counts.below_aggressive, counts.below_defensive)
        + (above / total) * branch_entropy(counts.above_aggressive, counts.above_defensive)
}

/// A node's position in the tree being grown: the threshold conditions on the
/// path from the root, and the attributes still usable beneath it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeContext {
    pub conditions: Vec<(usize, Branch)>,
    pub remaining: Vec<usize>,
}

impl NodeContext {
    pub fn root(attribute_count: usize) -> Self {
        NodeContext {
            conditions: Vec::new(),
            remaining: (0..attribute_count).collect(),
        }
    }

    /// Context of the child taking `branch` at `attribute`.
    pub fn child(&self, attribute: usize, branch: Branch) -> Self {
        let mut ctx = self.clone();
        ctx.conditions.push((attribute, branch));
        ctx.remaining.retain(|&a| a != attribute);
        ctx
    }

    /// Whether a binarized record reaches this node.
    pub fn admits(&self, bins: &[bool]) -> bool {
        self.conditions.iter().all(|&(attr, branch)| {
            bins.get(attr).copied().is_some_and(|bit| match branch {
                Branch::Below => !bit,
                Branch::AtOrAbove => bit,
            })
        })
    }

    /// Broadcast wire form: condition list then remaining-attribute list,
    /// all indices 16-bit big-endian.
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 3 * self.conditions.len() + 2 + 2 * self.remaining.len());
        out.extend_from_slice(&(self.conditions.len() as u16).to_be_bytes());
        for &(attr, branch) in &self.conditions {
            out.extend_from_slice(&(attr as u16).to_be_bytes());
            out.push(match branch {
                Branch::Below => 0,
                Branch::AtOrAbove => 1,
            });
        }
        out.extend_from_slice(&(self.remaining.len() as u16).to_be_bytes());
        for &attr in &self.remaining {
            out.extend_from_slice(&(attr as u16).to_be_bytes());
        }
        out
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self> {
        let malformed = |what: &str| Error::MalformedMessage(format!("node broadcast: {what}"));
        let take2 = |payload: &[u8], at: usize| -> Result<u16> {
            payload
                .get(at..at + 2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .ok_or_else(|| malformed("truncated"))
        };
        let cond_count = take2(payload, 0)? as usize;
        let mut at = 2;
        let mut conditions = Vec::with_capacity(cond_count);
        for _ in 0..cond_count {
            let attr = take2(payload, at)? as usize;
            let branch = match payload.get(at + 2) {
                Some(0) => Branch::Below,
                Some(1) => Branch::AtOrAbove,
                _ => return Err(malformed("bad branch byte")),
            };
            conditions.push((attr, branch));
            at += 3;
        }
        let rem_count = take2(payload, at)? as usize;
        at += 2;
        let mut remaining = Vec::with_capacity(rem_count);
        for _ in 0..rem_count {
            remaining.push(take2(payload, at)? as usize);
            at += 2;
        }
        if at != payload.len() {
            return Err(malformed("trailing bytes"));
        }
        Ok(NodeContext { conditions, remaining })
    }
}

/// One driver's secret contribution for a broadcast node: per remaining
/// attribute, the four (branch, class) indicators. A record that fails any
/// ancestor condition contributes all zeros; otherwise exactly one indicator
/// per attribute is one.
pub fn driver_shares(bins: &[bool], label: ClassLabel, ctx: &NodeContext) -> Vec<[Share; 4]> {
    let member = ctx.admits(bins);
    ctx.remaining
        .iter()
        .map(|&attr| {
            let mut cell = [Share(0); 4];
            if member {
                let above = bins.get(attr).copied().unwrap_or(false);
                let idx = (above as usize) * 2 + (label == ClassLabel::Defensive) as usize;
                cell[idx] = Share(1);
            }
            cell
        })
        .collect()
}

/// Stop rules and scheduling knobs for training.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Maximum split depth; `None` allows up to one split per attribute.
    pub max_depth: Option<usize>,
    /// Label for an exact class tie at an unsplittable node.
    pub tie_label: ClassLabel,
    /// How each node's batch of secure sums is scheduled.
    pub batch_mode: BatchMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: None,
            // A tied node carries no evidence of risk.
            tie_label: ClassLabel::Defensive,
            batch_mode: BatchMode::Sequential,
        }
    }
}

fn majority(aggressive: u64, defensive: u64, tie_label: ClassLabel) -> ClassLabel {
    use std::cmp::Ordering;
    match aggressive.cmp(&defensive) {
        Ordering::Greater => ClassLabel::Aggressive,
        Ordering::Less => ClassLabel::Defensive,
        Ordering::Equal => tie_label,
    }
}

// Tree under construction: children referenced by arena slot until the whole
// shape is known, then materialized into TreeNode.
enum Built {
    Leaf(ClassLabel),
    Split {
        attribute: usize,
        threshold: f64,
        below: usize,
        at_or_above: usize,
    },
}

struct Job {
    slot: usize,
    ctx: NodeContext,
    /// (aggressive, defensive) totals, known for every node except the root.
    known: Option<(u64, u64)>,
    depth: usize,
}

/// Runs the full training protocol over the network. Every driver holds one
/// labeled record; the returned tree lives with the insurer. A fixed seed
/// replays the transcript byte for byte.
pub fn train(
    net: &mut SimNet,
    sk: &SecretKey,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: Option<u64>,
) -> Result<TreeNode> {
    if dataset.is_empty() {
        return Err(Error::NoDrivers);
    }
    let schema = dataset.schema();
    let driver_bins: Vec<(Vec<bool>, ClassLabel)> = dataset
        .records()
        .iter()
        .map(|r| {
            let label = r.label.ok_or(Error::MissingLabel)?;
            Ok((schema.binarize(&r.values)?, label))
        })
        .collect::<Result<_>>()?;

    let m = u32::try_from(driver_bins.len())
        .map_err(|_| Error::InvalidGenConfig("driver count exceeds u32".into()))?;
    let ring = RingOrder::canonical(m)?;
    distribute_public_key(net, sk.public_key(), &ring)?;

    let base_seed = materialize_seed(seed);
    let max_depth = config.max_depth.unwrap_or(schema.len());

    let mut arena: Vec<Option<Built>> = vec![None];
    let mut queue = VecDeque::new();
    queue.push_back(Job {
        slot: 0,
        ctx: NodeContext::root(schema.len()),
        known: None,
        depth: 0,
    });
    let mut batch_counter: u64 = 0;

    while let Some(job) = queue.pop_front() {
        // The node's counts come from the protocol: broadcast the context,
        // then one secure sum per (attribute, branch, class) cell.
        let broadcast = job.ctx.to_payload();
        for &driver in ring.drivers() {
            net.send(PartyId::Insurer, driver, MessageKind::ExpandNode, broadcast.clone())?;
        }
        let mut share_table: Vec<Vec<Share>> = Vec::with_capacity(driver_bins.len());
        for (i, (bins, label)) in driver_bins.iter().enumerate() {
            let msg = net.recv_expect(ring.drivers()[i], MessageKind::ExpandNode)?;
            let ctx = NodeContext::from_payload(&msg.payload)?;
            share_table.push(driver_shares(bins, *label, &ctx).into_iter().flatten().collect());
        }

        let totals = secure_sum_batch(
            net,
            sk,
            &ring,
            &share_table,
            Some(derive_seed(base_seed, &[batch_counter])),
            config.batch_mode,
        )?;
        batch_counter += 1;

        let counts: Vec<ClassCounts> = totals
            .chunks_exact(4)
            .map(|c| ClassCounts::from_flat([c[0], c[1], c[2], c[3]]))
            .collect();
        debug_assert_eq!(counts.len(), job.ctx.remaining.len());

        // Every attribute's cells partition the same record set.
        let (aggressive, defensive) = (counts[0].aggressive(), counts[0].defensive());
        debug_assert!(counts
            .iter()
            .all(|c| c.aggressive() == aggressive && c.defensive() == defensive));
        if let Some(expected) = job.known {
            debug_assert_eq!((aggressive, defensive), expected);
        }

        if aggressive == 0 || defensive == 0 || job.depth >= max_depth {
            arena[job.slot] = Some(Built::Leaf(majority(
                aggressive,
                defensive,
                config.tie_label,
            )));
            continue;
        }

        let mut best = 0usize;
        for (i, c) in counts.iter().enumerate().skip(1) {
            if split_entropy(c) < split_entropy(&counts[best]) {
                best = i;
            }
        }
        let attribute = job.ctx.remaining[best];
        let chosen = counts[best];

        let mut child_slots = [0usize; 2];
        for (side, branch) in [Branch::Below, Branch::AtOrAbove].into_iter().enumerate() {
            let (child_agg, child_def) = match branch {
                Branch::Below => (chosen.below_aggressive, chosen.below_defensive),
                Branch::AtOrAbove => (chosen.above_aggressive, chosen.above_defensive),
            };
            let slot = arena.len();
            arena.push(None);
            child_slots[side] = slot;

            let child_ctx = job.ctx.child(attribute, branch);
            if child_agg + child_def == 0 {
                // Nobody takes this side: inherit the parent's majority.
                arena[slot] = Some(Built::Leaf(majority(
                    aggressive,
                    defensive,
                    config.tie_label,
                )));
            } else if child_agg == 0 || child_def == 0 || child_ctx.remaining.is_empty()
                || job.depth + 1 >= max_depth
            {
                arena[slot] = Some(Built::Leaf(majority(
                    child_agg,
                    child_def,
                    config.tie_label,
                )));
            } else {
                queue.push_back(Job {
                    slot,
                    ctx: child_ctx,
                    known: Some((child_agg, child_def)),
                    depth: job.depth + 1,
                });
            }
        }

        arena[job.slot] = Some(Built::Split {
            attribute,
            threshold: schema.attribute(attribute)?.threshold,
            below: child_slots[0],
            at_or_above: child_slots[1],
        });
    }

    Ok(materialize(&arena, 0))
}

fn materialize(arena: &[Option<Built>], slot: usize) -> TreeNode {
    match arena[slot].as_ref().expect("every slot is filled before materializing") {
        Built::Leaf(label) => TreeNode::leaf(*label),
        Built::Split {
            attribute,
            threshold,
            below,
            at_or_above,
        } => TreeNode::split(
            *attribute,
            *threshold,
            materialize(arena, *below),
            materialize(arena, *at_or_above),
        ),
    }
}

/// Reference ID3 with the same split criterion and stop rules but direct
/// access to all records. Training must produce structurally identical trees;
/// the equivalence tests rely on this implementation counting for itself
/// rather than reusing the protocol's share plumbing.
pub fn train_plaintext(
    schema: &AttributeSchema,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TreeNode> {
    if dataset.is_empty() {
        return Err(Error::NoDrivers);
    }
    let rows: Vec<(Vec<bool>, ClassLabel)> = dataset
        .records()
        .iter()
        .map(|r| {
            let label = r.label.ok_or(Error::MissingLabel)?;
            Ok((schema.binarize(&r.values)?, label))
        })
        .collect::<Result<_>>()?;
    let remaining: Vec<usize> = (0..schema.len()).collect();
    let max_depth = config.max_depth.unwrap_or(schema.len());
    Ok(grow(schema, rows.iter().collect(), remaining, 0, max_depth, config))
}

fn grow(
    schema: &AttributeSchema,
    rows: Vec<&(Vec<bool>, ClassLabel)>,
    remaining: Vec<usize>,
    depth: usize,
    max_depth: usize,
    config: &TrainConfig,
) -> TreeNode {
    let aggressive = rows.iter().filter(|(_, l)| *l == ClassLabel::Aggressive).count() as u64;
    let defensive = rows.len() as u64 - aggressive;
    if aggressive == 0 || defensive == 0 || remaining.is_empty() || depth >= max_depth {
        return TreeNode::leaf(majority(aggressive, defensive, config.tie_label));
    }

    let counts_for = |attr: usize| {
        let mut c = ClassCounts::default();
        for (bins, label) in rows.iter().copied() {
            match (bins[attr], label) {
                (false, ClassLabel::Aggressive) => c.below_aggressive += 1,
                (false, ClassLabel::Defensive) => c.below_defensive += 1,
                (true, ClassLabel::Aggressive) => c.above_aggressive += 1,
                (true, ClassLabel::Defensive) => c.above_defensive += 1,
            }
        }
        c
    };

    // min_by keeps the first of equally minimal elements, so exact entropy
    // ties resolve to the lowest index (`remaining` stays sorted).
    let attribute = remaining
        .iter()
        .copied()
        .min_by(|&a, &b| {
            split_entropy(&counts_for(a))
                .partial_cmp(&split_entropy(&counts_for(b)))
                .expect("entropies are finite")
        })
        .expect("remaining is nonempty");

    let threshold = schema
        .attribute(attribute)
        .expect("remaining indices come from the schema")
        .threshold;
    let child_remaining: Vec<usize> = remaining.iter().copied().filter(|&a| a != attribute).collect();

    let mut children = [TreeNode::leaf(config.tie_label), TreeNode::leaf(config.tie_label)];
    for (side, want_above) in [(0usize, false), (1usize, true)] {
        let subset: Vec<&(Vec<bool>, ClassLabel)> = rows
            .iter()
            .copied()
            .filter(|(bins, _)| bins[attribute] == want_above)
            .collect();
        children[side] = if subset.is_empty() {
            TreeNode::leaf(majority(aggressive, defensive, config.tie_label))
        } else {
            grow(schema, subset, child_remaining.clone(), depth + 1, max_depth, config)
        };
    }
    let [below, at_or_above] = children;
    TreeNode::split(attribute, threshold, below, at_or_above)
}
