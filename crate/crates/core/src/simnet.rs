//! In-process message fabric for one insurer and m drivers, with a transcript
//! that records every message's size and per-party phase timings.
//!
//! The parties run under a semi-honest assumption: everyone follows the
//! protocol and privacy claims are about what each party's view contains.
//! Because channels are in-process, the transcript is that view, byte for
//! byte, which is what the disclosure-audit tests enumerate. Byte totals
//! include a fixed 5-byte frame per message (4-byte length prefix plus 1-byte
//! protocol tag); latency and loss are out of scope.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::paillier::fnv1a64;

/// Length prefix plus protocol tag, charged to every message.
pub const FRAME_OVERHEAD: u64 = 5;

/// Protocol participant. Driver indices are 1-based; the insurer is its own
/// role rather than index 0 so match statements stay honest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartyId {
    Insurer,
    Driver(u32),
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Insurer => f.write_str("insurer"),
            PartyId::Driver(i) => write!(f, "driver-{i}"),
        }
    }
}

/// Closed set of message tags; one byte each on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    /// Insurer hands its Paillier public key to a driver.
    PublicKey,
    /// One hop of a ring sum: sum index plus the running ciphertext.
    RingCipher,
    /// Training broadcast describing the node about to be expanded.
    ExpandNode,
    /// Recognition downlink: every path's digit and self-product ciphertexts.
    PathSet,
    /// Recognition uplink: one permuted difference ciphertext.
    Difference,
    /// Final classification, one byte, shared with the driver.
    Verdict,
}

impl MessageKind {
    pub fn tag(self) -> u8 {
        match self {
            MessageKind::PublicKey => 1,
            MessageKind::RingCipher => 2,
            MessageKind::ExpandNode => 3,
            MessageKind::PathSet => 4,
            MessageKind::Difference => 5,
            MessageKind::Verdict => 6,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MessageKind::PublicKey => "public_key",
            MessageKind::RingCipher => "ring_cipher",
            MessageKind::ExpandNode => "expand_node",
            MessageKind::PathSet => "path_set",
            MessageKind::Difference => "difference",
            MessageKind::Verdict => "verdict",
        };
        f.write_str(name)
    }
}

/// A delivered message. Payload layouts are owned by the protocol modules;
/// the fabric treats them as opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

/// What the transcript keeps per message: routing, size, and a payload
/// fingerprint. The fingerprint lets determinism tests assert byte-identical
/// replays without retaining every payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageKind,
    pub payload_len: usize,
    pub payload_fingerprint: u64,
}

impl MessageRecord {
    /// Bytes this message cost on the wire, framing included.
    pub fn wire_len(&self) -> u64 {
        self.payload_len as u64 + FRAME_OVERHEAD
    }
}

/// Compute phases mirrored in the benchmark reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Encrypt,
    HomOps,
    Decrypt,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Encrypt, Phase::HomOps, Phase::Decrypt];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Encrypt => "encrypt",
            Phase::HomOps => "hom_ops",
            Phase::Decrypt => "decrypt",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered message log plus derived counters and phase timers. Two
/// transcripts compare equal when their message sequences and byte counters
/// match; timings are deliberately excluded so deterministic replays compare
/// equal across runs.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    records: Vec<MessageRecord>,
    bytes_sent: BTreeMap<PartyId, u64>,
    bytes_received: BTreeMap<PartyId, u64>,
    messages_sent: BTreeMap<PartyId, u64>,
    messages_received: BTreeMap<PartyId, u64>,
    phase_time: BTreeMap<(PartyId, Phase), Duration>,
    wall_time: Duration,
}

impl PartialEq for Transcript {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.bytes_sent == other.bytes_sent
            && self.bytes_received == other.bytes_received
            && self.messages_sent == other.messages_sent
            && self.messages_received == other.messages_received
    }
}

impl Transcript {
    fn log(&mut self, record: MessageRecord) {
        let wire = record.wire_len();
        *self.bytes_sent.entry(record.from).or_default() += wire;
        *self.bytes_received.entry(record.to).or_default() += wire;
        *self.messages_sent.entry(record.from).or_default() += 1;
        *self.messages_received.entry(record.to).or_default() += 1;
        self.records.push(record);
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn total_messages(&self) -> usize {
        self.records.len()
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.wire_len()).sum()
    }

    pub fn bytes_sent_by(&self, party: PartyId) -> u64 {
        self.bytes_sent.get(&party).copied().unwrap_or(0)
    }

    pub fn bytes_received_by(&self, party: PartyId) -> u64 {
        self.bytes_received.get(&party).copied().unwrap_or(0)
    }

    pub fn messages_sent_by(&self, party: PartyId) -> u64 {
        self.messages_sent.get(&party).copied().unwrap_or(0)
    }

    pub fn messages_received_by(&self, party: PartyId) -> u64 {
        self.messages_received.get(&party).copied().unwrap_or(0)
    }

    pub fn messages_to(&self, party: PartyId) -> impl Iterator<Item = &MessageRecord> {
        self.records.iter().filter(move |r| r.to == party)
    }

    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn add_phase_time(&mut self, party: PartyId, phase: Phase, elapsed: Duration) {
        *self.phase_time.entry((party, phase)).or_default() += elapsed;
    }

    pub fn phase_time(&self, party: PartyId, phase: Phase) -> Duration {
        self.phase_time
            .get(&(party, phase))
            .copied()
            .unwrap_or_default()
    }

    /// Summed phase time over all drivers.
    pub fn drivers_phase_time(&self, phase: Phase) -> Duration {
        self.phase_time
            .iter()
            .filter(|((p, ph), _)| *ph == phase && matches!(p, PartyId::Driver(_)))
            .map(|(_, d)| *d)
            .sum()
    }

    pub fn set_wall_time(&mut self, wall: Duration) {
        self.wall_time = wall;
    }

    pub fn wall_time(&self) -> Duration {
        self.wall_time
    }

    /// Appends another transcript's log and counters onto this one. Used to
    /// deterministically stitch per-sum transcripts from the concurrent batch
    /// mode back together in sum order.
    pub fn absorb(&mut self, other: Transcript) {
        for r in other.records {
            self.log(r);
        }
        for ((party, phase), d) in other.phase_time {
            self.add_phase_time(party, phase, d);
        }
        self.wall_time += other.wall_time;
    }
}

/// The fabric: registered parties, one FIFO mailbox each, and the transcript.
#[derive(Debug)]
pub struct SimNet {
    mailboxes: BTreeMap<PartyId, VecDeque<Message>>,
    transcript: Transcript,
}

impl SimNet {
    pub fn new(parties: impl IntoIterator<Item = PartyId>) -> Self {
        SimNet {
            mailboxes: parties.into_iter().map(|p| (p, VecDeque::new())).collect(),
            transcript: Transcript::default(),
        }
    }

    /// Fabric for one insurer plus drivers 1..=m.
    pub fn with_drivers(m: u32) -> Self {
        Self::new(
            std::iter::once(PartyId::Insurer).chain((1..=m).map(PartyId::Driver)),
        )
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.mailboxes.keys().copied()
    }

    /// Logs and delivers a message. Both endpoints must be registered; every
    /// send is logged before delivery.
    pub fn send(
        &mut self,
        from: PartyId,
        to: PartyId,
        kind: MessageKind,
        payload: Vec<u8>,
    ) -> Result<()> {
        if !self.mailboxes.contains_key(&from) {
            return Err(Error::UnknownParty(from));
        }
        if !self.mailboxes.contains_key(&to) {
            return Err(Error::UnknownParty(to));
        }
        self.transcript.log(MessageRecord {
            from,
            to,
            kind,
            payload_len: payload.len(),
            payload_fingerprint: fnv1a64(&payload),
        });
        self.mailboxes
            .get_mut(&to)
            .expect("checked above")
            .push_back(Message { from, to, kind, payload });
        Ok(())
    }

    pub fn recv(&mut self, party: PartyId) -> Result<Message> {
        self.mailboxes
            .get_mut(&party)
            .ok_or(Error::UnknownParty(party))?
            .pop_front()
            .ok_or_else(|| Error::ProtocolViolation(format!("{party} expected a message, mailbox empty")))
    }

    /// Receives and insists on a particular message kind.
    pub fn recv_expect(&mut self, party: PartyId, kind: MessageKind) -> Result<Message> {
        let msg = self.recv(party)?;
        if msg.kind != kind {
            return Err(Error::ProtocolViolation(format!(
                "{party} expected {kind}, got {} from {}",
                msg.kind, msg.from
            )));
        }
        Ok(msg)
    }

    pub fn pending(&self, party: PartyId) -> usize {
        self.mailboxes.get(&party).map_or(0, VecDeque::len)
    }

    /// Runs a compute closure, charging its wall time to the party's phase.
    pub fn time_phase<T>(&mut self, party: PartyId, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.transcript.add_phase_time(party, phase, start.elapsed());
        out
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}
