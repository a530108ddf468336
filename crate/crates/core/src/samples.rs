//! Small ready-made fixtures: a six-attribute schema and a hand-built tree
//! over it. Used by tests and docs so protocol examples stay concrete without
//! first running training.

use crate::domain::{Attribute, AttributeSchema, ClassLabel, TreeNode};

/// Six telematics metrics with fixed split thresholds.
pub fn demo_schema() -> AttributeSchema {
    AttributeSchema::new(vec![
        Attribute { name: "accel_events".into(), threshold: 110.0 },
        Attribute { name: "avg_accel_ms2".into(), threshold: 3.0 },
        Attribute { name: "braking_events".into(), threshold: 150.0 },
        Attribute { name: "avg_braking_ms2".into(), threshold: 4.9 },
        Attribute { name: "trips".into(), threshold: 325.0 },
        Attribute { name: "risk_hours_0to4am".into(), threshold: 80.0 },
    ])
    .expect("fixture schema is well formed")
}

/// Depth-3 tree over [`demo_schema`] with two aggressive leaves: drivers who
/// brake often and hard despite few rapid accelerations, and drivers who
/// accelerate rapidly and log many late-night hours.
pub fn demo_tree() -> TreeNode {
    TreeNode::split(
        0,
        110.0,
        TreeNode::split(
            2,
            150.0,
            TreeNode::leaf(ClassLabel::Defensive),
            TreeNode::split(
                3,
                4.9,
                TreeNode::leaf(ClassLabel::Defensive),
                TreeNode::leaf(ClassLabel::Aggressive),
            ),
        ),
        TreeNode::split(
            5,
            80.0,
            TreeNode::leaf(ClassLabel::Defensive),
            TreeNode::leaf(ClassLabel::Aggressive),
        ),
    )
}

/// Record landing on the first aggressive leaf of [`demo_tree`].
pub fn aggressive_record() -> Vec<f64> {
    vec![100.0, 2.0, 160.0, 5.1, 300.0, 10.0]
}

/// Record landing on a defensive leaf of [`demo_tree`].
pub fn defensive_record() -> Vec<f64> {
    vec![80.0, 1.5, 100.0, 3.0, 250.0, 10.0]
}

/// Record that is defensive under [`demo_tree`], yet carries every at-or-above
/// bit of the tree's first aggressive path. It violates that path's "accel
/// events below threshold" constraint, so any matcher that checks only the
/// at-or-above bits will wrongly call it aggressive. Tests use it to pin down
/// the soundness gap between the two digit encodings.
pub fn masked_false_match_record() -> Vec<f64> {
    vec![120.0, 2.0, 160.0, 5.0, 300.0, 10.0]
}
