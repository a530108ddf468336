//! Encrypted recognition of a new driver against a trained tree.
//!
//! The insurer never sees the driver's telematics vector and the driver never
//! sees the tree. The insurer encrypts each aggressive path as a digit vector
//! plus its self dot product and sends the whole set. The driver homomorphically
//! builds, per path, dot(path digits, own digits) - self product: zero exactly
//! on a match (never positive), but the driver cannot tell because each value
//! stays encrypted under the insurer's key behind a fresh zero encryption. A
//! random permutation hides which path produced which difference; the insurer
//! decrypts in arrival order and stops at the first zero.
//!
//! With the augmented encoding at most one path can match (sibling subtrees
//! are disjoint). The ones-only encoding keeps below-branch constraints out of
//! the digits and can call a false match; the demo tree plus
//! [`crate::samples::masked_false_match_record`] exhibits the disagreement.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::domain::{
    vector_digits, AggressivePath, AttributeSchema, ClassLabel, EncodingMode, TreeNode,
};
use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, PublicKey, SecretKey};
use crate::rng::{derive_seed, materialize_seed, seeded_rng};
use crate::simnet::{MessageKind, PartyId, Phase, SimNet};

/// One encrypted aggressive path: its digit vector and self dot product,
/// every entry an individual ciphertext.
#[derive(Debug, Clone)]
pub struct EncryptedPath {
    pub digits: Vec<Ciphertext>,
    pub self_product: Ciphertext,
}

/// Everything the insurer sends for matching: the encoding, the digit width,
/// and one encrypted entry per aggressive path.
#[derive(Debug, Clone)]
pub struct EncryptedPathSet {
    pub mode: EncodingMode,
    pub digit_count: usize,
    pub entries: Vec<EncryptedPath>,
}

/// Encrypts every path under the insurer's key. All paths must cover
/// `attribute_count` attributes; digit width follows the encoding.
pub fn encrypt_path_set<R: Rng + ?Sized>(
    pk: &PublicKey,
    paths: &[AggressivePath],
    mode: EncodingMode,
    attribute_count: usize,
    rng: &mut R,
) -> Result<EncryptedPathSet> {
    let digit_count = mode.digit_count(attribute_count);
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let digits = path.digits(mode);
        if digits.len() != digit_count {
            return Err(Error::DigitCountMismatch {
                expected: digit_count,
                got: digits.len(),
            });
        }
        let encrypted: Vec<Ciphertext> = digits
            .iter()
            .map(|&d| pk.encrypt(i64::from(d), rng))
            .collect::<Result<_>>()?;
        let self_product = pk.encrypt(path.self_product(mode) as i64, rng)?;
        entries.push(EncryptedPath {
            digits: encrypted,
            self_product,
        });
    }
    Ok(EncryptedPathSet {
        mode,
        digit_count,
        entries,
    })
}

impl EncryptedPathSet {
    /// Wire form: mode byte, 16-bit digit and path counts, then per path the
    /// digit ciphertexts followed by the self-product ciphertext, all at the
    /// key's fixed ciphertext width.
    pub fn to_payload(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        let width = pk.ciphertext_byte_len();
        let mut out =
            Vec::with_capacity(5 + self.entries.len() * (self.digit_count + 1) * width);
        out.push(match self.mode {
            EncodingMode::OnesOnly => 0,
            EncodingMode::Augmented => 1,
        });
        out.extend_from_slice(&(self.digit_count as u16).to_be_bytes());
        out.extend_from_slice(&(self.entries.len() as u16).to_be_bytes());
        for entry in &self.entries {
            if entry.digits.len() != self.digit_count {
                return Err(Error::DigitCountMismatch {
                    expected: self.digit_count,
                    got: entry.digits.len(),
                });
            }
            for digit in &entry.digits {
                out.extend_from_slice(&pk.ciphertext_to_bytes(digit)?);
            }
            out.extend_from_slice(&pk.ciphertext_to_bytes(&entry.self_product)?);
        }
        Ok(out)
    }

    pub fn from_payload(pk: &PublicKey, payload: &[u8]) -> Result<Self> {
        let malformed = |what: &str| Error::MalformedMessage(format!("path set: {what}"));
        if payload.len() < 5 {
            return Err(malformed("truncated header"));
        }
        let mode = match payload[0] {
            0 => EncodingMode::OnesOnly,
            1 => EncodingMode::Augmented,
            b => return Err(malformed(&format!("unknown encoding byte {b}"))),
        };
        let digit_count = u16::from_be_bytes([payload[1], payload[2]]) as usize;
        let path_count = u16::from_be_bytes([payload[3], payload[4]]) as usize;
        let width = pk.ciphertext_byte_len();
        let expected_len = 5 + path_count * (digit_count + 1) * width;
        if payload.len() != expected_len {
            return Err(malformed(&format!(
                "expected {expected_len} bytes, got {}",
                payload.len()
            )));
        }
        let mut at = 5;
        let mut entries = Vec::with_capacity(path_count);
        for _ in 0..path_count {
            let mut digits = Vec::with_capacity(digit_count);
            for _ in 0..digit_count {
                digits.push(pk.ciphertext_from_bytes(&payload[at..at + width])?);
                at += width;
            }
            let self_product = pk.ciphertext_from_bytes(&payload[at..at + width])?;
            at += width;
            entries.push(EncryptedPath {
                digits,
                self_product,
            });
        }
        Ok(EncryptedPathSet {
            mode,
            digit_count,
            entries,
        })
    }
}

/// The driver's whole computation: per path, accumulate the digit ciphertexts
/// at the positions where the driver's own digit is one (a homomorphic dot
/// product), subtract the self product, and return the differences in a
/// uniformly random order. Each accumulator starts as a fresh encryption of
/// zero, so every output is rerandomized even when no digit is added.
pub fn match_differences<R: Rng + ?Sized>(
    pk: &PublicKey,
    set: &EncryptedPathSet,
    bins: &[bool],
    rng: &mut R,
) -> Result<Vec<Ciphertext>> {
    let digits = vector_digits(bins, set.mode);
    if digits.len() != set.digit_count {
        return Err(Error::DigitCountMismatch {
            expected: set.digit_count,
            got: digits.len(),
        });
    }
    let accumulators = set
        .entries
        .iter()
        .map(|_| pk.encrypt_zero(rng))
        .collect::<Result<Vec<_>>>()?;
    accumulate_and_shuffle(pk, set, &digits, accumulators, rng)
}

fn accumulate_and_shuffle<R: Rng + ?Sized>(
    pk: &PublicKey,
    set: &EncryptedPathSet,
    digits: &[u8],
    accumulators: Vec<Ciphertext>,
    rng: &mut R,
) -> Result<Vec<Ciphertext>> {
    let mut diffs = accumulators;
    for (entry, acc) in set.entries.iter().zip(diffs.iter_mut()) {
        if entry.digits.len() != set.digit_count {
            return Err(Error::DigitCountMismatch {
                expected: set.digit_count,
                got: entry.digits.len(),
            });
        }
        for (pos, &d) in digits.iter().enumerate() {
            if d == 1 {
                *acc = pk.hom_add(acc, &entry.digits[pos])?;
            }
        }
        *acc = pk.hom_sub(acc, &entry.self_product)?;
    }
    diffs.shuffle(rng);
    Ok(diffs)
}

/// What recognition produced: the shared verdict, how many differences the
/// insurer decrypted before deciding, and how many paths were in play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecognitionOutcome {
    pub verdict: ClassLabel,
    /// Differences decrypted: the permuted position of the matching path for
    /// an aggressive verdict, the full path count otherwise, zero when the
    /// tree has no aggressive path at all.
    pub consumed: usize,
    pub path_count: usize,
}

const VERDICT_DEFENSIVE: u8 = 0;
const VERDICT_AGGRESSIVE: u8 = 1;

fn verdict_payload(label: ClassLabel) -> Vec<u8> {
    vec![match label {
        ClassLabel::Defensive => VERDICT_DEFENSIVE,
        ClassLabel::Aggressive => VERDICT_AGGRESSIVE,
    }]
}

fn parse_verdict(payload: &[u8]) -> Result<ClassLabel> {
    match payload {
        [VERDICT_DEFENSIVE] => Ok(ClassLabel::Defensive),
        [VERDICT_AGGRESSIVE] => Ok(ClassLabel::Aggressive),
        _ => Err(Error::MalformedMessage("verdict must be one byte 0 or 1".into())),
    }
}

/// Runs the full recognition protocol between the insurer (holding the tree
/// and the key pair) and driver 1 (holding the raw telematics values). A tree
/// with no aggressive path short-circuits to an immediate defensive verdict
/// with no encrypted traffic at all.
pub fn recognize(
    net: &mut SimNet,
    sk: &SecretKey,
    tree: &TreeNode,
    schema: &AttributeSchema,
    values: &[f64],
    mode: EncodingMode,
    seed: Option<u64>,
) -> Result<RecognitionOutcome> {
    let driver = PartyId::Driver(1);
    let pk = sk.public_key();
    let paths = tree.aggressive_paths(schema)?;

    if paths.is_empty() {
        net.send(
            PartyId::Insurer,
            driver,
            MessageKind::Verdict,
            verdict_payload(ClassLabel::Defensive),
        )?;
        let msg = net.recv_expect(driver, MessageKind::Verdict)?;
        let verdict = parse_verdict(&msg.payload)?;
        return Ok(RecognitionOutcome {
            verdict,
            consumed: 0,
            path_count: 0,
        });
    }

    let base_seed = materialize_seed(seed);
    let mut insurer_rng = seeded_rng(Some(derive_seed(base_seed, &[0])));
    let mut driver_rng = seeded_rng(Some(derive_seed(base_seed, &[1])));

    // Key setup round.
    net.send(PartyId::Insurer, driver, MessageKind::PublicKey, pk.to_bytes())?;
    let key_msg = net.recv_expect(driver, MessageKind::PublicKey)?;
    let driver_pk = PublicKey::from_bytes(&key_msg.payload)?;

    // Insurer side: encrypt and ship the aggressive paths.
    let set = net.time_phase(PartyId::Insurer, Phase::Encrypt, || {
        encrypt_path_set(pk, &paths, mode, schema.len(), &mut insurer_rng)
    })?;
    net.send(
        PartyId::Insurer,
        driver,
        MessageKind::PathSet,
        set.to_payload(pk)?,
    )?;

    // Driver side: decode, match homomorphically, stream back shuffled.
    let set_msg = net.recv_expect(driver, MessageKind::PathSet)?;
    let received = EncryptedPathSet::from_payload(&driver_pk, &set_msg.payload)?;
    let digits = vector_digits(&schema.binarize(values)?, received.mode);
    if digits.len() != received.digit_count {
        return Err(Error::DigitCountMismatch {
            expected: received.digit_count,
            got: digits.len(),
        });
    }
    let accumulators = net.time_phase(driver, Phase::Encrypt, || {
        received
            .entries
            .iter()
            .map(|_| driver_pk.encrypt_zero(&mut driver_rng))
            .collect::<Result<Vec<_>>>()
    })?;
    let diffs = net.time_phase(driver, Phase::HomOps, || {
        accumulate_and_shuffle(&driver_pk, &received, &digits, accumulators, &mut driver_rng)
    })?;
    for diff in &diffs {
        net.send(
            driver,
            PartyId::Insurer,
            MessageKind::Difference,
            driver_pk.ciphertext_to_bytes(diff)?,
        )?;
    }

    // Insurer side: decrypt in arrival order, stop at the first zero. The
    // remaining messages are drained undecrypted; `consumed` counts the work.
    let mut consumed = 0usize;
    let mut verdict = ClassLabel::Defensive;
    for _ in 0..paths.len() {
        let msg = net.recv_expect(PartyId::Insurer, MessageKind::Difference)?;
        if verdict == ClassLabel::Defensive {
            let cipher = pk.ciphertext_from_bytes(&msg.payload)?;
            let value = net.time_phase(PartyId::Insurer, Phase::Decrypt, || sk.decrypt(&cipher))?;
            consumed += 1;
            debug_assert!(value <= 0, "differences can never be positive");
            if value == 0 {
                verdict = ClassLabel::Aggressive;
            }
        }
    }

    net.send(
        PartyId::Insurer,
        driver,
        MessageKind::Verdict,
        verdict_payload(verdict),
    )?;
    let verdict_msg = net.recv_expect(driver, MessageKind::Verdict)?;
    let driver_verdict = parse_verdict(&verdict_msg.payload)?;
    debug_assert_eq!(driver_verdict, verdict);

    Ok(RecognitionOutcome {
        verdict: driver_verdict,
        consumed,
        path_count: paths.len(),
    })
}
