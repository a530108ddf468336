//! Cross-module integration: the two protocols end to end, the disclosure
//! audits over real transcripts, scheduling equivalence, and the file
//! formats that tie the pipeline together.

use std::collections::BTreeMap;

use drivestyle::datagen::{generate, GenConfig, LabelRule, telematics_columns};
use drivestyle::domain::{AttributeSchema, ClassLabel, Dataset, DriverRecord, EncodingMode, TreeNode};
use drivestyle::paillier::keygen;
use drivestyle::recognition::recognize;
use drivestyle::rng::seeded_rng;
use drivestyle::secure_sum::BatchMode;
use drivestyle::simnet::{MessageKind, PartyId, SimNet};
use drivestyle::training::{train, train_plaintext, TrainConfig};
use rand::Rng;

fn planted_dataset(drivers: usize, seed: u64) -> (Dataset, TreeNode) {
    let config = GenConfig {
        columns: telematics_columns(),
        drivers,
        unlabeled: 0,
        label_rule: LabelRule::PlantedTree {
            depth: 3,
            noise: 0.0,
        },
    };
    let data = generate(&config, Some(seed)).unwrap();
    (data.train, data.planted.unwrap())
}

fn random_values(schema: &AttributeSchema, rng: &mut impl Rng) -> Vec<f64> {
    let values: Vec<f64> = telematics_columns()
        .iter()
        .map(|c| rng.gen_range(c.min..c.max))
        .collect();
    assert_eq!(values.len(), schema.len());
    values
}

#[test]
fn training_reveals_only_keys_broadcasts_and_single_ring_hops() {
    let (dataset, _) = planted_dataset(12, 50);
    let (_, sk) = keygen(64, Some(50)).unwrap();
    let mut net = SimNet::with_drivers(12);
    train(&mut net, &sk, &dataset, &TrainConfig::default(), Some(50)).unwrap();
    let transcript = net.transcript();

    // Every driver's received view is the same multiset of (kind, size):
    // one public key, one broadcast per expanded node, one ring ciphertext
    // per secure sum — nothing else, and no driver is distinguishable.
    let view_of = |driver: u32| -> BTreeMap<(MessageKind, usize), usize> {
        let mut view = BTreeMap::new();
        for record in transcript.messages_to(PartyId::Driver(driver)) {
            *view.entry((record.kind, record.payload_len)).or_insert(0) += 1;
        }
        view
    };
    let reference = view_of(1);
    let kinds: std::collections::BTreeSet<MessageKind> =
        reference.keys().map(|(k, _)| *k).collect();
    assert_eq!(
        kinds.into_iter().collect::<Vec<_>>(),
        vec![
            MessageKind::PublicKey,
            MessageKind::RingCipher,
            MessageKind::ExpandNode
        ]
    );
    for driver in 2..=12 {
        assert_eq!(view_of(driver), reference, "driver {driver} sees a different view");
    }

    let key_messages: usize = reference
        .iter()
        .filter(|((k, _), _)| *k == MessageKind::PublicKey)
        .map(|(_, count)| count)
        .sum();
    assert_eq!(key_messages, 1);

    // Per sum, each driver gets exactly one ring ciphertext.
    let sums = transcript.count_kind(MessageKind::RingCipher) / 13;
    let ring_to_each: usize = reference
        .iter()
        .filter(|((k, _), _)| *k == MessageKind::RingCipher)
        .map(|(_, count)| count)
        .sum();
    assert_eq!(ring_to_each, sums);

    // The insurer receives nothing but fixed-width ring ciphertexts (the
    // encrypted totals): no plaintext share ever crosses the wire to it.
    let cipher_payload = 4 + sk.public_key().ciphertext_byte_len();
    let mut to_insurer = 0usize;
    for record in transcript.messages_to(PartyId::Insurer) {
        assert_eq!(record.kind, MessageKind::RingCipher);
        assert_eq!(record.payload_len, cipher_payload);
        to_insurer += 1;
    }
    assert_eq!(to_insurer, sums);
}

#[test]
fn recognition_messages_stay_within_the_protocol_kinds() {
    let (dataset, tree) = planted_dataset(20, 51);
    let schema = dataset.schema().clone();
    let (_, sk) = keygen(64, Some(51)).unwrap();
    let mut rng = seeded_rng(Some(51));
    let values = random_values(&schema, &mut rng);

    let mut net = SimNet::with_drivers(1);
    recognize(
        &mut net,
        &sk,
        &tree,
        &schema,
        &values,
        EncodingMode::Augmented,
        Some(51),
    )
    .unwrap();

    let allowed = [
        MessageKind::PublicKey,
        MessageKind::PathSet,
        MessageKind::Difference,
        MessageKind::Verdict,
    ];
    for record in net.transcript().records() {
        assert!(
            allowed.contains(&record.kind),
            "unexpected message kind {}",
            record.kind
        );
    }
    // The driver never receives a difference; the insurer receives nothing
    // else.
    for record in net.transcript().messages_to(PartyId::Driver(1)) {
        assert_ne!(record.kind, MessageKind::Difference);
    }
    for record in net.transcript().messages_to(PartyId::Insurer) {
        assert_eq!(record.kind, MessageKind::Difference);
    }
}

#[test]
fn trained_trees_drive_recognition_to_traversal_verdicts() {
    let (dataset, _) = planted_dataset(40, 52);
    let schema = dataset.schema().clone();
    let (_, sk) = keygen(64, Some(52)).unwrap();

    let mut net = SimNet::with_drivers(40);
    let tree = train(&mut net, &sk, &dataset, &TrainConfig::default(), Some(52)).unwrap();
    assert_eq!(
        tree,
        train_plaintext(&schema, &dataset, &TrainConfig::default()).unwrap()
    );

    let mut rng = seeded_rng(Some(520));
    for i in 0..20 {
        let values = random_values(&schema, &mut rng);
        let mut net = SimNet::with_drivers(1);
        let outcome = recognize(
            &mut net,
            &sk,
            &tree,
            &schema,
            &values,
            EncodingMode::Augmented,
            Some(i),
        )
        .unwrap();
        assert_eq!(
            outcome.verdict,
            tree.classify(&schema, &values).unwrap(),
            "query {i}"
        );
    }
}

#[test]
fn concurrent_batches_match_sequential_training_exactly() {
    let (dataset, _) = planted_dataset(9, 53);
    let (_, sk) = keygen(64, Some(53)).unwrap();

    let run = |mode: BatchMode| {
        let config = TrainConfig {
            batch_mode: mode,
            ..TrainConfig::default()
        };
        let mut net = SimNet::with_drivers(9);
        let tree = train(&mut net, &sk, &dataset, &config, Some(53)).unwrap();
        (tree, net.into_transcript())
    };
    let (seq_tree, seq_transcript) = run(BatchMode::Sequential);
    let (conc_tree, conc_transcript) = run(BatchMode::Concurrent);
    assert_eq!(seq_tree, conc_tree);
    assert_eq!(seq_transcript, conc_transcript);
}

#[test]
fn datasets_and_trees_survive_the_file_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, planted) = planted_dataset(15, 54);
    let schema = dataset.schema().clone();

    let schema_path = dir.path().join("schema.csv");
    let data_path = dir.path().join("train.csv");
    schema.write_csv_file(&schema_path).unwrap();
    dataset.write_csv_file(&data_path).unwrap();

    let schema_back = AttributeSchema::read_csv_file(&schema_path).unwrap();
    assert_eq!(schema_back, schema);
    let dataset_back = Dataset::read_csv_file(schema_back, &data_path).unwrap();
    assert_eq!(dataset_back, dataset);

    let (_, sk) = keygen(64, Some(54)).unwrap();
    let mut net = SimNet::with_drivers(15);
    let tree = train(&mut net, &sk, &dataset_back, &TrainConfig::default(), Some(54)).unwrap();

    let tree_path = dir.path().join("tree.json");
    std::fs::write(&tree_path, tree.to_json().unwrap()).unwrap();
    let tree_back =
        TreeNode::from_json(&std::fs::read_to_string(&tree_path).unwrap()).unwrap();
    assert_eq!(tree_back, tree);
    tree_back.validate(&schema).unwrap();

    // The planted labeler and the trained tree agree on the training data.
    for record in dataset.records() {
        assert_eq!(
            tree_back.classify(&schema, &record.values).unwrap(),
            planted.classify(&schema, &record.values).unwrap()
        );
    }
}

#[test]
fn unlabeled_queries_flow_from_generation_to_verdicts() {
    let config = GenConfig {
        columns: telematics_columns(),
        drivers: 25,
        unlabeled: 6,
        label_rule: LabelRule::PlantedTree {
            depth: 2,
            noise: 0.0,
        },
    };
    let data = generate(&config, Some(55)).unwrap();
    let (_, sk) = keygen(64, Some(55)).unwrap();

    let mut net = SimNet::with_drivers(25);
    let tree = train(&mut net, &sk, &data.train, &TrainConfig::default(), Some(55)).unwrap();

    for (i, query) in data.queries.records().iter().enumerate() {
        assert!(query.label.is_none());
        let mut net = SimNet::with_drivers(1);
        let outcome = recognize(
            &mut net,
            &sk,
            &tree,
            &data.schema,
            &query.values,
            EncodingMode::Augmented,
            Some(i as u64),
        )
        .unwrap();
        assert_eq!(
            outcome.verdict,
            tree.classify(&data.schema, &query.values).unwrap()
        );
    }
}

#[test]
fn mixed_label_edge_rows_flow_through_both_implementations() {
    // Hand-built corner dataset: duplicate vectors, contradictory labels,
    // and a column that never varies. Secure and plaintext training must
    // stay structurally identical even here.
    let schema = AttributeSchema::read_csv(
        "name,threshold\nalpha,10\nbeta,20\ngamma,30\n".as_bytes(),
    )
    .unwrap();
    let record = |a: f64, b: f64, g: f64, label: ClassLabel| DriverRecord {
        values: vec![a, b, g],
        label: Some(label),
    };
    let dataset = Dataset::new(
        schema.clone(),
        vec![
            record(12.0, 25.0, 5.0, ClassLabel::Aggressive),
            record(12.0, 25.0, 5.0, ClassLabel::Defensive),
            record(12.0, 25.0, 5.0, ClassLabel::Aggressive),
            record(5.0, 25.0, 5.0, ClassLabel::Defensive),
            record(5.0, 15.0, 5.0, ClassLabel::Defensive),
            record(15.0, 15.0, 5.0, ClassLabel::Aggressive),
        ],
    )
    .unwrap();

    let (_, sk) = keygen(64, Some(56)).unwrap();
    let mut net = SimNet::with_drivers(6);
    let secure = train(&mut net, &sk, &dataset, &TrainConfig::default(), Some(56)).unwrap();
    let oracle = train_plaintext(&schema, &dataset, &TrainConfig::default()).unwrap();
    assert_eq!(secure, oracle);
    secure.validate(&schema).unwrap();
}
