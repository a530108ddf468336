//! Domain model shared by every protocol: attribute schemas with fixed split
//! thresholds, labeled driving records, binary decision trees, and the
//! aggressive-path view of a tree that recognition works from.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Driving style class. The protocols treat `Aggressive` as the positive
/// class: recognition reports whether a driver matches any aggressive leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Aggressive,
    Defensive,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Aggressive => "aggressive",
            ClassLabel::Defensive => "defensive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aggressive" => Ok(ClassLabel::Aggressive),
            "defensive" => Ok(ClassLabel::Defensive),
            other => Err(Error::Parse(format!("unknown class label {other:?}"))),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One telematics metric together with its split threshold. Trees only ever
/// test `value < threshold` versus `value >= threshold`, so the threshold is
/// public schema data rather than something a tree learns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub threshold: f64,
}

impl Attribute {
    /// Binarizes a raw value. Values exactly at the threshold count as above:
    /// the two branches partition the reals with no gap.
    pub fn is_at_or_above(&self, value: f64) -> bool {
        value >= self.threshold
    }
}

/// Ordered attribute list. The order is load-bearing: share vectors, path
/// digit positions, and tree attribute indices all refer to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("no attributes".into()));
        }
        for (i, a) in attributes.iter().enumerate() {
            if a.name.is_empty() {
                return Err(Error::InvalidSchema(format!("attribute {i} has no name")));
            }
            if !a.threshold.is_finite() {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?} has non-finite threshold",
                    a.name
                )));
            }
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute name {:?}",
                    a.name
                )));
            }
        }
        Ok(AttributeSchema { attributes })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> Result<&Attribute> {
        self.attributes
            .get(index)
            .ok_or_else(|| Error::InvalidSchema(format!("attribute index {index} out of range")))
    }

    /// Maps raw metric values to per-attribute bits, true meaning at or above
    /// the threshold.
    pub fn binarize(&self, values: &[f64]) -> Result<Vec<bool>> {
        if values.len() != self.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} values, schema has {} attributes",
                values.len(),
                self.len()
            )));
        }
        Ok(self
            .attributes
            .iter()
            .zip(values)
            .map(|(a, &v)| a.is_at_or_above(v))
            .collect())
    }

    /// Writes the schema as a two-column CSV of name and threshold.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["name", "threshold"])?;
        for a in &self.attributes {
            w.write_record([a.name.as_str(), &a.threshold.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["name", "threshold"] {
            return Err(Error::InvalidSchema(format!(
                "schema csv header must be name,threshold, got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut attributes = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let name = row.get(0).unwrap_or("").trim().to_string();
            let raw = row.get(1).unwrap_or("").trim();
            let threshold: f64 = raw
                .parse()
                .map_err(|_| Error::Parse(format!("schema row {i}: {raw:?} is not a number")))?;
            attributes.push(Attribute { name, threshold });
        }
        AttributeSchema::new(attributes)
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

impl TryFrom<Vec<Attribute>> for AttributeSchema {
    type Error = Error;
    fn try_from(attributes: Vec<Attribute>) -> Result<Self> {
        AttributeSchema::new(attributes)
    }
}

impl From<AttributeSchema> for Vec<Attribute> {
    fn from(s: AttributeSchema) -> Vec<Attribute> {
        s.attributes
    }
}

/// One driver's metrics plus an optional style label. Training requires the
/// label; a record submitted for recognition goes without one.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverRecord {
    pub values: Vec<f64>,
    pub label: Option<ClassLabel>,
}

/// Records bound to the schema they were measured under.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    records: Vec<DriverRecord>,
}

impl Dataset {
    pub fn new(schema: AttributeSchema, records: Vec<DriverRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "record {i} has {} values, schema has {} attributes",
                    r.values.len(),
                    schema.len()
                )));
            }
            if let Some(j) = r.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::SchemaMismatch(format!(
                    "record {i} has non-finite value in column {j}"
                )));
            }
        }
        Ok(Dataset { schema, records })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn records(&self) -> &[DriverRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes attribute columns named after the schema, then a `label` column
    /// that is empty for unlabeled records.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self
            .schema
            .attributes()
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        header.push("label");
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            row.push(r.label.map(|l| l.as_str().to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads records for a known schema, insisting the header matches it
    /// column for column.
    pub fn read_csv<R: Read>(schema: AttributeSchema, reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected: Vec<&str> = schema
            .attributes()
            .iter()
            .map(|a| a.name.as_str())
            .chain(std::iter::once("label"))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::SchemaMismatch(format!(
                "csv header {:?} does not match schema columns {expected:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let mut values = Vec::with_capacity(schema.len());
            for (j, field) in row.iter().take(schema.len()).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("row {i}, column {j}: {field:?} is not a number"))
                })?;
                values.push(v);
            }
            let label_field = row.get(schema.len()).unwrap_or("").trim();
            let label = if label_field.is_empty() {
                None
            } else {
                Some(ClassLabel::parse(label_field)?)
            };
            records.push(DriverRecord { values, label });
        }
        Dataset::new(schema, records)
    }

    pub fn read_csv_file(schema: AttributeSchema, path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(schema, std::fs::File::open(path)?)
    }
}

/// Binary decision tree over schema attributes. `below` is taken when the
/// record's value is under the split threshold. Split nodes carry a copy of
/// their attribute's threshold so serialized trees are self-describing;
/// `validate` pins the copy to the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        label: ClassLabel,
    },
    Split {
        attribute: usize,
        threshold: f64,
        below: Box<TreeNode>,
        at_or_above: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(label: ClassLabel) -> Self {
        TreeNode::Leaf { label }
    }

    pub fn split(attribute: usize, threshold: f64, below: TreeNode, at_or_above: TreeNode) -> Self {
        TreeNode::Split {
            attribute,
            threshold,
            below: Box::new(below),
            at_or_above: Box::new(at_or_above),
        }
    }

    /// Checks attribute indices and thresholds against the schema and that no
    /// attribute is tested twice on any root-to-leaf path. Trees produced by
    /// training hold all three by construction; trees read from files may not.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        fn walk(node: &TreeNode, schema: &AttributeSchema, seen: &mut Vec<usize>) -> Result<()> {
            match node {
                TreeNode::Leaf { .. } => Ok(()),
                TreeNode::Split {
                    attribute,
                    threshold,
                    below,
                    at_or_above,
                } => {
                    let attr = schema.attribute(*attribute).map_err(|_| {
                        Error::InvalidTree(format!(
                            "attribute index {attribute} out of range for {}-attribute schema",
                            schema.len()
                        ))
                    })?;
                    if *threshold != attr.threshold {
                        return Err(Error::InvalidTree(format!(
                            "node threshold {threshold} disagrees with schema threshold {} for {:?}",
                            attr.threshold, attr.name
                        )));
                    }
                    if seen.contains(attribute) {
                        return Err(Error::InvalidTree(format!(
                            "attribute {attribute} tested twice on one path"
                        )));
                    }
                    seen.push(*attribute);
                    walk(below, schema, seen)?;
                    walk(at_or_above, schema, seen)?;
                    seen.pop();
                    Ok(())
                }
            }
        }
        walk(self, schema, &mut Vec::new())
    }

    /// Classifies a raw record by walking threshold tests.
    pub fn classify(&self, schema: &AttributeSchema, values: &[f64]) -> Result<ClassLabel> {
        let bins = schema.binarize(values)?;
        self.classify_bins(&bins)
    }

    /// Classifies an already-binarized vector: bit true takes the at-or-above
    /// branch. This is the plaintext reference that the encrypted recognition
    /// protocol is tested against.
    pub fn classify_bins(&self, bins: &[bool]) -> Result<ClassLabel> {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label } => return Ok(*label),
                TreeNode::Split {
                    attribute,
                    below,
                    at_or_above,
                    ..
                } => {
                    let bit = bins.get(*attribute).copied().ok_or_else(|| {
                        Error::SchemaMismatch(format!(
                            "vector has {} bits but tree tests attribute {attribute}",
                            bins.len()
                        ))
                    })?;
                    node = if bit { at_or_above } else { below };
                }
            }
        }
    }

    /// Depth of the deepest leaf; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split {
                below, at_or_above, ..
            } => 1 + below.depth().max(at_or_above.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split {
                below, at_or_above, ..
            } => below.leaf_count() + at_or_above.leaf_count(),
        }
    }

    /// Collects every root-to-leaf path ending in an aggressive leaf, in
    /// depth-first order with the below branch explored first.
    pub fn aggressive_paths(&self, schema: &AttributeSchema) -> Result<Vec<AggressivePath>> {
        self.validate(schema)?;
        fn walk(
            node: &TreeNode,
            ones: &mut Vec<bool>,
            mask: &mut Vec<bool>,
            out: &mut Vec<AggressivePath>,
        ) {
            match node {
                TreeNode::Leaf { label } => {
                    if *label == ClassLabel::Aggressive {
                        out.push(
                            AggressivePath::new(ones.clone(), mask.clone())
                                .expect("path built from a validated tree"),
                        );
                    }
                }
                TreeNode::Split {
                    attribute,
                    below,
                    at_or_above,
                    ..
                } => {
                    mask[*attribute] = true;
                    ones[*attribute] = false;
                    walk(below, ones, mask, out);
                    ones[*attribute] = true;
                    walk(at_or_above, ones, mask, out);
                    ones[*attribute] = false;
                    mask[*attribute] = false;
                }
            }
        }
        let n = schema.len();
        let mut out = Vec::new();
        walk(self, &mut vec![false; n], &mut vec![false; n], &mut out);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// How paths and record vectors are flattened into digit vectors for the
/// encrypted dot-product match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum EncodingMode {
    /// One digit per attribute, set where the path takes the at-or-above
    /// branch. Below-branch constraints are invisible to the dot product, so
    /// a vector can exceed extra thresholds and still "match" a path whose
    /// below edge it violates. Kept for comparison; unsound.
    OnesOnly,
    /// Two digits per attribute j: position 2j carries the at-or-above bit
    /// and position 2j+1 its complement. Matching becomes exactly equivalent
    /// to walking the tree. Default.
    #[default]
    Augmented,
}


impl EncodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::OnesOnly => "ones",
            EncodingMode::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(EncodingMode::OnesOnly),
            "augmented" => Ok(EncodingMode::Augmented),
            other => Err(Error::Parse(format!("unknown encoding mode {other:?}"))),
        }
    }

    /// Digits per path or vector for an n-attribute schema.
    pub fn digit_count(self, n: usize) -> usize {
        match self {
            EncodingMode::OnesOnly => n,
            EncodingMode::Augmented => 2 * n,
        }
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flattens a binarized record into match digits. In augmented mode each bit
/// v becomes the pair (v, 1-v).
pub fn vector_digits(bins: &[bool], mode: EncodingMode) -> Vec<u8> {
    match mode {
        EncodingMode::OnesOnly => bins.iter().map(|&b| b as u8).collect(),
        EncodingMode::Augmented => bins
            .iter()
            .flat_map(|&b| [b as u8, (!b) as u8])
            .collect(),
    }
}

/// One aggressive leaf of a tree, flattened over the schema: `mask[j]` says
/// whether the path tests attribute j at all, and for masked positions
/// `ones[j]` says whether the path requires at-or-above (true) or below.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggressivePath {
    ones: Vec<bool>,
    mask: Vec<bool>,
}

impl AggressivePath {
    pub fn new(ones: Vec<bool>, mask: Vec<bool>) -> Result<Self> {
        if ones.len() != mask.len() {
            return Err(Error::InvalidTree(format!(
                "path vectors disagree in length: {} vs {}",
                ones.len(),
                mask.len()
            )));
        }
        if ones.iter().zip(&mask).any(|(&o, &m)| o && !m) {
            return Err(Error::InvalidTree(
                "path requires a bit on an attribute it does not test".into(),
            ));
        }
        Ok(AggressivePath { ones, mask })
    }

    pub fn len(&self) -> usize {
        self.ones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ones.is_empty()
    }

    pub fn ones(&self) -> &[bool] {
        &self.ones
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of attributes the path constrains.
    pub fn constraint_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Number of constraints requiring the at-or-above side.
    pub fn required_ones(&self) -> usize {
        self.ones.iter().filter(|&&o| o).count()
    }

    /// The path's digit vector under an encoding. Ones-only keeps just the
    /// at-or-above bits; augmented also sets the complement digit for masked
    /// below-branch attributes, so unmet below constraints cost the match.
    pub fn digits(&self, mode: EncodingMode) -> Vec<u8> {
        match mode {
            EncodingMode::OnesOnly => self.ones.iter().map(|&o| o as u8).collect(),
            EncodingMode::Augmented => self
                .ones
                .iter()
                .zip(&self.mask)
                .flat_map(|(&o, &m)| [o as u8, (m && !o) as u8])
                .collect(),
        }
    }

    /// Dot product of the path's digits with themselves: the match target a
    /// vector's dot product must reach. Equals the ones count in ones-only
    /// mode and the full constraint count in augmented mode.
    pub fn self_product(&self, mode: EncodingMode) -> u64 {
        match mode {
            EncodingMode::OnesOnly => self.required_ones() as u64,
            EncodingMode::Augmented => self.constraint_count() as u64,
        }
    }

    /// Whether a binarized record satisfies every constraint on this path.
    pub fn matches(&self, bins: &[bool]) -> Result<bool> {
        if bins.len() != self.len() {
            return Err(Error::SchemaMismatch(format!(
                "vector has {} bits, path covers {} attributes",
                bins.len(),
                self.len()
            )));
        }
        Ok(self
            .mask
            .iter()
            .zip(&self.ones)
            .zip(bins)
            .all(|((&m, &o), &b)| !m || o == b))
    }
}

/// Plaintext reference for recognition: aggressive iff any path matches.
pub fn classify_by_aggressive_paths(paths: &[AggressivePath], bins: &[bool]) -> Result<ClassLabel> {
    for p in paths {
        if p.matches(bins)? {
            return Ok(ClassLabel::Aggressive);
        }
    }
    Ok(ClassLabel::Defensive)
}
