//! Ring-topology secure summation: the insurer learns the total of the
//! drivers' private integer shares and nothing else.
//!
//! One sum is one pass around the ring. The insurer opens the pass with a
//! fresh encryption of zero, each driver folds in a fresh encryption of its
//! own share by ciphertext multiplication and forwards the running
//! ciphertext, and the last driver returns it to the insurer for decryption.
//! Every driver therefore sees exactly one incoming ciphertext, every
//! outgoing message is a single ciphertext, and a sum over m drivers costs
//! exactly m + 1 messages. Two colluding ring neighbors could bound the
//! driver between them; that is inherent to the topology and out of scope.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, PublicKey, SecretKey};
use crate::rng::{derive_seed, materialize_seed, seeded_rng};
use crate::simnet::{MessageKind, PartyId, Phase, SimNet};

/// One driver's private contribution to a sum. Bounded so that even the full
/// ring total stays far inside the signed plaintext range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share(pub u64);

/// Visiting order of the drivers in a ring pass; the insurer is implicitly
/// the final stop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingOrder {
    drivers: Vec<PartyId>,
}

impl RingOrder {
    /// Drivers 1..=m in index order.
    pub fn canonical(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::NoDrivers);
        }
        Ok(RingOrder {
            drivers: (1..=m).map(PartyId::Driver).collect(),
        })
    }

    /// A seed-determined permutation of drivers 1..=m.
    pub fn shuffled(m: u32, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut order = Self::canonical(m)?;
        order.drivers.shuffle(&mut seeded_rng(Some(seed)));
        Ok(order)
    }

    /// Validates an explicit order: nonempty, drivers only, no repeats.
    pub fn from_parties(drivers: Vec<PartyId>) -> Result<Self> {
        if drivers.is_empty() {
            return Err(Error::NoDrivers);
        }
        for (i, d) in drivers.iter().enumerate() {
            match d {
                PartyId::Driver(_) => {}
                PartyId::Insurer => {
                    return Err(Error::InvalidRingOrder(
                        "the insurer cannot appear inside the ring".into(),
                    ))
                }
            }
            if drivers[..i].contains(d) {
                return Err(Error::InvalidRingOrder(format!("{d} appears twice")));
            }
        }
        Ok(RingOrder { drivers })
    }

    pub fn drivers(&self) -> &[PartyId] {
        &self.drivers
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }
}

/// How a batch of independent sums is scheduled. Both modes produce identical
/// totals and identical transcripts; concurrent mode exists to exercise the
/// actors on real threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    #[default]
    Sequential,
    Concurrent,
}

/// Sends the insurer's public key to every driver in the ring. Each driver
/// consumes and parses its copy, completing the setup round, so the function
/// fails if any delivered key is malformed.
pub fn distribute_public_key(net: &mut SimNet, pk: &PublicKey, ring: &RingOrder) -> Result<()> {
    let bytes = pk.to_bytes();
    for &driver in ring.drivers() {
        net.send(PartyId::Insurer, driver, MessageKind::PublicKey, bytes.clone())?;
        let received = net.recv_expect(driver, MessageKind::PublicKey)?;
        PublicKey::from_bytes(&received.payload)?;
    }
    Ok(())
}

/// One secure sum. The seed (drawn from entropy when absent) controls every
/// nonce, so a fixed seed replays the exact transcript.
pub fn secure_sum(
    net: &mut SimNet,
    sk: &SecretKey,
    ring: &RingOrder,
    shares: &[Share],
    seed: Option<u64>,
) -> Result<u64> {
    secure_sum_indexed(net, sk, ring, shares, 0, materialize_seed(seed))
}

/// A batch of sums over the same ring: drivers supply one row of shares each,
/// sum s totals column s. Rows must be rectangular.
pub fn secure_sum_batch(
    net: &mut SimNet,
    sk: &SecretKey,
    ring: &RingOrder,
    share_table: &[Vec<Share>],
    seed: Option<u64>,
    mode: BatchMode,
) -> Result<Vec<u64>> {
    let m = ring.len();
    if share_table.len() != m {
        return Err(Error::ProtocolViolation(format!(
            "share table has {} rows for {m} ring drivers",
            share_table.len()
        )));
    }
    let sums = share_table.first().map_or(0, Vec::len);
    for (row, shares) in share_table.iter().enumerate() {
        if shares.len() != sums {
            let PartyId::Driver(driver) = ring.drivers()[row] else {
                unreachable!("ring orders hold drivers only");
            };
            return Err(Error::RaggedShareTable {
                driver,
                got: shares.len(),
                expected: sums,
            });
        }
    }
    let base = materialize_seed(seed);
    let columns: Vec<Vec<Share>> = (0..sums)
        .map(|s| share_table.iter().map(|row| row[s]).collect())
        .collect();

    match mode {
        BatchMode::Sequential => columns
            .iter()
            .enumerate()
            .map(|(s, column)| secure_sum_indexed(net, sk, ring, column, s as u32, base))
            .collect(),
        BatchMode::Concurrent => {
            let parties: Vec<PartyId> = net.parties().collect();
            let runs: Vec<Result<(u64, SimNet)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = columns
                    .iter()
                    .enumerate()
                    .map(|(s, column)| {
                        let parties = parties.clone();
                        scope.spawn(move || {
                            let mut local = SimNet::new(parties);
                            let total =
                                secure_sum_indexed(&mut local, sk, ring, column, s as u32, base)?;
                            Ok((total, local))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sum worker panicked"))
                    .collect()
            });
            // Stitch per-sum transcripts back in sum order so the log is
            // byte-identical to the sequential schedule.
            let mut totals = Vec::with_capacity(sums);
            for run in runs {
                let (total, local) = run?;
                totals.push(total);
                net.transcript_mut().absorb(local.into_transcript());
            }
            Ok(totals)
        }
    }
}

/// The ring pass itself. `sum_index` tags the wire messages and separates the
/// nonce streams of concurrent sums derived from one base seed.
pub fn secure_sum_indexed(
    net: &mut SimNet,
    sk: &SecretKey,
    ring: &RingOrder,
    shares: &[Share],
    sum_index: u32,
    base_seed: u64,
) -> Result<u64> {
    let pk = sk.public_key();
    let m = ring.len();
    if m == 0 {
        return Err(Error::NoDrivers);
    }
    if shares.len() != m {
        return Err(Error::ProtocolViolation(format!(
            "{} shares supplied for {m} ring drivers",
            shares.len()
        )));
    }
    for share in shares {
        check_share_bound(pk, *share, m as u64)?;
    }

    // Insurer opens the pass with a fresh zero so even the first driver's
    // outbound ciphertext is blinded by a nonce the driver never chose alone.
    let mut insurer_rng = party_rng(base_seed, sum_index, 0);
    let kickoff = net.time_phase(PartyId::Insurer, Phase::Encrypt, || {
        pk.encrypt_zero(&mut insurer_rng)
    })?;
    net.send(
        PartyId::Insurer,
        ring.drivers()[0],
        MessageKind::RingCipher,
        encode_ring_payload(pk, sum_index, &kickoff)?,
    )?;

    for (pos, &driver) in ring.drivers().iter().enumerate() {
        let incoming = net.recv_expect(driver, MessageKind::RingCipher)?;
        let (tag, running) = decode_ring_payload(pk, &incoming.payload)?;
        if tag != sum_index {
            return Err(Error::ProtocolViolation(format!(
                "{driver} received ciphertext for sum {tag} during sum {sum_index}"
            )));
        }
        let share = i64::try_from(shares[pos].0)
            .map_err(|_| Error::PlaintextOutOfRange(shares[pos].0.to_string()))?;
        let mut rng = party_rng(base_seed, sum_index, pos as u64 + 1);
        let own = net.time_phase(driver, Phase::Encrypt, || pk.encrypt(share, &mut rng))?;
        let running = net.time_phase(driver, Phase::HomOps, || pk.hom_add(&running, &own))?;
        let next = ring
            .drivers()
            .get(pos + 1)
            .copied()
            .unwrap_or(PartyId::Insurer);
        net.send(
            driver,
            next,
            MessageKind::RingCipher,
            encode_ring_payload(pk, sum_index, &running)?,
        )?;
    }

    let last = net.recv_expect(PartyId::Insurer, MessageKind::RingCipher)?;
    let (tag, total_ct) = decode_ring_payload(pk, &last.payload)?;
    if tag != sum_index {
        return Err(Error::ProtocolViolation(format!(
            "insurer received ciphertext for sum {tag} during sum {sum_index}"
        )));
    }
    let total = net.time_phase(PartyId::Insurer, Phase::Decrypt, || sk.decrypt(&total_ct))?;
    u64::try_from(total).map_err(|_| {
        Error::ProtocolViolation(format!("ring total decrypted to negative value {total}"))
    })
}

fn party_rng(base_seed: u64, sum_index: u32, party_slot: u64) -> ChaCha20Rng {
    seeded_rng(Some(derive_seed(base_seed, &[sum_index as u64, party_slot])))
}

fn check_share_bound(pk: &PublicKey, share: Share, m: u64) -> Result<()> {
    use num_bigint::BigUint;
    // share < n / (2m): headroom so Σ shares can never wrap the signed range.
    if BigUint::from(share.0) * BigUint::from(2 * m) >= *pk.n() {
        return Err(Error::ShareBound {
            share: share.0,
            drivers: m,
        });
    }
    Ok(())
}

/// Wire layout of a ring hop: 4-byte big-endian sum index, then the
/// fixed-width ciphertext.
fn encode_ring_payload(pk: &PublicKey, sum_index: u32, ct: &Ciphertext) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(4 + pk.ciphertext_byte_len());
    payload.extend_from_slice(&sum_index.to_be_bytes());
    payload.extend_from_slice(&pk.ciphertext_to_bytes(ct)?);
    Ok(payload)
}

fn decode_ring_payload(pk: &PublicKey, payload: &[u8]) -> Result<(u32, Ciphertext)> {
    if payload.len() != 4 + pk.ciphertext_byte_len() {
        return Err(Error::MalformedMessage(format!(
            "ring payload is {} bytes, expected {}",
            payload.len(),
            4 + pk.ciphertext_byte_len()
        )));
    }
    let sum_index = u32::from_be_bytes(payload[..4].try_into().expect("checked length"));
    let ct = pk.ciphertext_from_bytes(&payload[4..])?;
    Ok((sum_index, ct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::{keygen, keypair_from_primes};
    use proptest::prelude::*;

    fn setup(m: u32) -> (SimNet, SecretKey, RingOrder) {
        let (_, sk) = keygen(64, Some(1000 + m as u64)).unwrap();
        let net = SimNet::with_drivers(m);
        let ring = RingOrder::canonical(m).unwrap();
        (net, sk, ring)
    }

    #[test]
    fn sums_three_shares() {
        let (mut net, sk, ring) = setup(3);
        distribute_public_key(&mut net, sk.public_key(), &ring).unwrap();
        let total = secure_sum(
            &mut net,
            &sk,
            &ring,
            &[Share(4), Share(0), Share(9)],
            Some(7),
        )
        .unwrap();
        assert_eq!(total, 13);

        // m + 1 ring messages; every driver saw the key and exactly one
        // ciphertext; the insurer got exactly one ciphertext back.
        let t = net.transcript();
        assert_eq!(t.count_kind(MessageKind::RingCipher), 4);
        for d in ring.drivers() {
            let kinds: Vec<MessageKind> = t.messages_to(*d).map(|r| r.kind).collect();
            assert_eq!(kinds, vec![MessageKind::PublicKey, MessageKind::RingCipher]);
        }
        assert_eq!(t.messages_received_by(PartyId::Insurer), 1);
    }

    #[test]
    fn zero_shares_sum_to_zero() {
        let (mut net, sk, ring) = setup(5);
        let shares = vec![Share(0); 5];
        assert_eq!(secure_sum(&mut net, &sk, &ring, &shares, Some(1)).unwrap(), 0);
    }

    #[test]
    fn single_driver_batch_is_identity() {
        let (mut net, sk, ring) = setup(1);
        let totals = secure_sum_batch(
            &mut net,
            &sk,
            &ring,
            &[vec![Share(5), Share(7), Share(9)]],
            Some(2),
            BatchMode::Sequential,
        )
        .unwrap();
        assert_eq!(totals, vec![5, 7, 9]);
    }

    #[test]
    fn batch_totals_are_column_sums() {
        let (mut net, sk, ring) = setup(3);
        let table = vec![
            vec![Share(1), Share(0)],
            vec![Share(0), Share(1)],
            vec![Share(1), Share(1)],
        ];
        let totals =
            secure_sum_batch(&mut net, &sk, &ring, &table, Some(3), BatchMode::Sequential).unwrap();
        assert_eq!(totals, vec![2, 2]);
    }

    #[test]
    fn random_batch_matches_plaintext_column_sums() {
        use rand::Rng;
        let (mut net, sk, ring) = setup(10);
        let mut rng = seeded_rng(Some(99));
        let table: Vec<Vec<Share>> = (0..10)
            .map(|_| (0..8).map(|_| Share(rng.gen_range(0..=1000))).collect())
            .collect();
        let expected: Vec<u64> = (0..8)
            .map(|s| table.iter().map(|row| row[s].0).sum())
            .collect();
        let totals =
            secure_sum_batch(&mut net, &sk, &ring, &table, Some(4), BatchMode::Sequential).unwrap();
        assert_eq!(totals, expected);
    }

    #[test]
    fn concurrent_batch_matches_sequential_exactly() {
        use rand::Rng;
        let mut rng = seeded_rng(Some(55));
        let table: Vec<Vec<Share>> = (0..5)
            .map(|_| (0..6).map(|_| Share(rng.gen_range(0..=500))).collect())
            .collect();

        let (mut seq_net, sk, ring) = setup(5);
        let seq = secure_sum_batch(&mut seq_net, &sk, &ring, &table, Some(77), BatchMode::Sequential)
            .unwrap();

        let mut conc_net = SimNet::with_drivers(5);
        let conc = secure_sum_batch(&mut conc_net, &sk, &ring, &table, Some(77), BatchMode::Concurrent)
            .unwrap();

        assert_eq!(seq, conc);
        // Not just byte counts: the stitched concurrent transcript equals the
        // sequential one record for record, fingerprints included.
        assert_eq!(seq_net.transcript(), conc_net.transcript());
    }

    #[test]
    fn fixed_seed_replays_identically() {
        let table = vec![vec![Share(3)], vec![Share(4)]];
        let run = |seed| {
            let (_, sk) = keygen(64, Some(42)).unwrap();
            let mut net = SimNet::with_drivers(2);
            let ring = RingOrder::canonical(2).unwrap();
            let totals =
                secure_sum_batch(&mut net, &sk, &ring, &table, Some(seed), BatchMode::Sequential)
                    .unwrap();
            (totals, net.into_transcript())
        };
        let (t1, tr1) = run(5);
        let (t2, tr2) = run(5);
        let (_, tr3) = run(6);
        assert_eq!(t1, t2);
        assert_eq!(tr1, tr2);
        // A different seed changes the nonces, hence the payload fingerprints.
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn share_bound_is_enforced() {
        // n = 60491; with m = 3 the per-share bound is n / 6 = 10081.8.
        let (_, sk) = keypair_from_primes(251, 241).unwrap();
        let mut net = SimNet::with_drivers(3);
        let ring = RingOrder::canonical(3).unwrap();
        let ok = [Share(10081), Share(0), Share(0)];
        assert_eq!(secure_sum(&mut net, &sk, &ring, &ok, Some(1)).unwrap(), 10081);
        let over = [Share(10082), Share(0), Share(0)];
        assert!(matches!(
            secure_sum(&mut net, &sk, &ring, &over, Some(1)),
            Err(Error::ShareBound { share: 10082, drivers: 3 })
        ));
    }

    #[test]
    fn ragged_tables_are_rejected() {
        let (mut net, sk, ring) = setup(2);
        let table = vec![vec![Share(1), Share(2)], vec![Share(3)]];
        assert!(matches!(
            secure_sum_batch(&mut net, &sk, &ring, &table, Some(1), BatchMode::Sequential),
            Err(Error::RaggedShareTable { driver: 2, got: 1, expected: 2 })
        ));
    }

    #[test]
    fn ring_orders_validate() {
        assert!(matches!(RingOrder::canonical(0), Err(Error::NoDrivers)));
        let canonical = RingOrder::canonical(3).unwrap();
        assert_eq!(
            canonical.drivers(),
            &[PartyId::Driver(1), PartyId::Driver(2), PartyId::Driver(3)]
        );

        let shuffled = RingOrder::shuffled(30, 9).unwrap();
        assert_eq!(shuffled, RingOrder::shuffled(30, 9).unwrap());
        assert_ne!(shuffled, RingOrder::canonical(30).unwrap());
        let mut sorted = shuffled.drivers().to_vec();
        sorted.sort();
        assert_eq!(sorted, RingOrder::canonical(30).unwrap().drivers());

        assert!(RingOrder::from_parties(vec![]).is_err());
        assert!(RingOrder::from_parties(vec![PartyId::Insurer]).is_err());
        assert!(
            RingOrder::from_parties(vec![PartyId::Driver(1), PartyId::Driver(1)]).is_err()
        );
    }

    #[test]
    fn shuffled_ring_still_sums_correctly() {
        let (_, sk) = keygen(64, Some(7)).unwrap();
        let mut net = SimNet::with_drivers(4);
        let ring = RingOrder::shuffled(4, 123).unwrap();
        // Shares follow ring positions: totals are order-independent anyway.
        let shares = [Share(10), Share(20), Share(30), Share(40)];
        assert_eq!(secure_sum(&mut net, &sk, &ring, &shares, Some(8)).unwrap(), 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn totals_equal_plaintext_sums(
            m in 1u32..=200,
            seed in 0u64..1_000_000,
        ) {
            use rand::Rng;
            let (_, sk) = keygen(64, Some(31)).unwrap();
            let mut rng = seeded_rng(Some(seed));
            let shares: Vec<Share> = (0..m).map(|_| Share(rng.gen_range(0..=1000))).collect();
            let expected: u64 = shares.iter().map(|s| s.0).sum();

            let mut net = SimNet::with_drivers(m);
            let ring = RingOrder::canonical(m).unwrap();
            let total = secure_sum(&mut net, &sk, &ring, &shares, Some(seed)).unwrap();
            prop_assert_eq!(total, expected);
            prop_assert_eq!(
                net.transcript().count_kind(MessageKind::RingCipher),
                m as usize + 1
            );
        }
    }
}
