//! Paillier cryptosystem with the additive homomorphisms the protocols need.
//!
//! Plaintexts are signed integers encoded into Z_n by wrapping negatives to
//! the upper half of the ring: m < 0 is stored as n + m, and any decrypted
//! residue above n/2 decodes back to a negative. That keeps ciphertext
//! subtraction closed without a separate sign channel. The generator is fixed
//! at g = n + 1, so g^m mod n^2 collapses to 1 + m*n and encryption costs a
//! single modular exponentiation for the nonce.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

const MILLER_RABIN_ROUNDS: usize = 40;
const MIN_KEY_BITS: usize = 64;

/// Public half of a keypair. Carries derived constants so hot paths never
/// recompute n^2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    half_n: BigUint,
    key_bits: usize,
    fingerprint: u64,
}

/// Decryption key. Holds its public key so callers can hand out views of one
/// object.
#[derive(Debug, Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    pk: PublicKey,
}

/// A Paillier ciphertext tagged with the fingerprint of the key that produced
/// it. Every operation checks the tag, so ciphertexts from different keys can
/// never be silently combined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    fingerprint: u64,
}

impl Ciphertext {
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

impl fmt::Display for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext(key {:016x})", self.fingerprint)
    }
}

impl PublicKey {
    fn from_modulus(n: BigUint) -> Result<Self> {
        if n.bits() < 3 || n.is_even() {
            return Err(Error::InvalidPrimes(format!("modulus {n} is degenerate")));
        }
        let key_bits = n.bits() as usize;
        let n_squared = &n * &n;
        let half_n = &n >> 1;
        let mut pk = PublicKey {
            n,
            n_squared,
            half_n,
            key_bits,
            fingerprint: 0,
        };
        pk.fingerprint = fnv1a64(&pk.to_bytes());
        Ok(pk)
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn key_bits(&self) -> usize {
        self.key_bits
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Width of a serialized modulus in bytes.
    pub fn modulus_byte_len(&self) -> usize {
        self.key_bits.div_ceil(8)
    }

    /// Width of a serialized ciphertext in bytes. Ciphertexts live mod n^2,
    /// which always fits in twice the key width.
    pub fn ciphertext_byte_len(&self) -> usize {
        (2 * self.key_bits).div_ceil(8)
    }

    /// Canonical wire form: 2-byte big-endian bit length, then the modulus as
    /// fixed-width big-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.modulus_byte_len());
        out.extend_from_slice(&(self.key_bits as u16).to_be_bytes());
        out.extend_from_slice(&to_fixed_be(&self.n, self.modulus_byte_len()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 {
            return Err(Error::MalformedMessage("public key too short".into()));
        }
        let key_bits = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        let expected = 2 + key_bits.div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::MalformedMessage(format!(
                "public key length {} does not match declared {key_bits}-bit modulus",
                bytes.len()
            )));
        }
        let n = BigUint::from_bytes_be(&bytes[2..]);
        if n.bits() as usize != key_bits {
            return Err(Error::MalformedMessage(format!(
                "modulus has {} bits but header declares {key_bits}",
                n.bits()
            )));
        }
        Self::from_modulus(n)
    }

    /// Encrypts a signed integer. The encodable range is |m| <= (n-1)/2; the
    /// nonce is drawn fresh from the caller's RNG, so encrypting the same
    /// value twice yields unrelated ciphertexts.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: i64, rng: &mut R) -> Result<Ciphertext> {
        let encoded = self.encode(m)?;
        let r = self.sample_unit(rng);
        // g = n + 1, so g^m = 1 + m*n (mod n^2); avoids a full modpow.
        let g_m = (BigUint::one() + encoded * &self.n) % &self.n_squared;
        let value = (g_m * r.modpow(&self.n, &self.n_squared)) % &self.n_squared;
        Ok(Ciphertext {
            value,
            fingerprint: self.fingerprint,
        })
    }

    /// Fresh encryption of zero. Used to seed accumulators: multiplying it in
    /// rerandomizes whatever it touches without changing the plaintext.
    pub fn encrypt_zero<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Ciphertext> {
        self.encrypt(0, rng)
    }

    /// Homomorphic addition: the product of ciphertexts encrypts the sum.
    pub fn hom_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.n_squared,
            fingerprint: self.fingerprint,
        })
    }

    /// Homomorphic scaling: raising to k encrypts k times the plaintext.
    pub fn hom_scale(&self, a: &Ciphertext, k: &BigUint) -> Result<Ciphertext> {
        self.check(a)?;
        Ok(Ciphertext {
            value: a.value.modpow(k, &self.n_squared),
            fingerprint: self.fingerprint,
        })
    }

    /// Homomorphic subtraction: adds b scaled by n - 1, which encrypts -1
    /// under the signed encoding.
    pub fn hom_sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let minus_one = &self.n - BigUint::one();
        let neg_b = self.hom_scale(b, &minus_one)?;
        self.hom_add(a, &neg_b)
    }

    pub fn ciphertext_to_bytes(&self, c: &Ciphertext) -> Result<Vec<u8>> {
        self.check(c)?;
        Ok(to_fixed_be(&c.value, self.ciphertext_byte_len()))
    }

    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<Ciphertext> {
        if bytes.len() != self.ciphertext_byte_len() {
            return Err(Error::InvalidCiphertext(format!(
                "expected {} bytes, got {}",
                self.ciphertext_byte_len(),
                bytes.len()
            )));
        }
        let value = BigUint::from_bytes_be(bytes);
        if value.is_zero() || value >= self.n_squared {
            return Err(Error::InvalidCiphertext(
                "value outside the multiplicative group mod n^2".into(),
            ));
        }
        Ok(Ciphertext {
            value,
            fingerprint: self.fingerprint,
        })
    }

    fn encode(&self, m: i64) -> Result<BigUint> {
        let mag = BigUint::from(m.unsigned_abs());
        if mag > self.half_n {
            return Err(Error::PlaintextOutOfRange(m.to_string()));
        }
        Ok(if m < 0 { &self.n - mag } else { mag })
    }

    fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    fn check(&self, c: &Ciphertext) -> Result<()> {
        if c.fingerprint != self.fingerprint {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }
}

impl SecretKey {
    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    /// Decrypts to a signed integer. Residues above n/2 decode as negatives;
    /// anything that does not fit an i64 is reported as out of range rather
    /// than truncated.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<i64> {
        self.pk.check(c)?;
        let u = c.value.modpow(&self.lambda, &self.pk.n_squared);
        // L(u) = (u - 1) / n, exact by construction for valid ciphertexts.
        let l = (u - BigUint::one()) / &self.pk.n;
        let residue = (l * &self.mu) % &self.pk.n;
        if residue > self.pk.half_n {
            let mag = &self.pk.n - residue;
            let mag: u64 = mag
                .try_into()
                .map_err(|_| Error::PlaintextOutOfRange("negative overflow".into()))?;
            if mag > i64::MIN.unsigned_abs() {
                return Err(Error::PlaintextOutOfRange(format!("-{mag}")));
            }
            Ok((mag as i64).wrapping_neg())
        } else {
            let mag: u64 = residue
                .try_into()
                .map_err(|_| Error::PlaintextOutOfRange("positive overflow".into()))?;
            i64::try_from(mag).map_err(|_| Error::PlaintextOutOfRange(mag.to_string()))
        }
    }
}

/// Generates a keypair whose modulus has exactly `key_bits` bits. Both primes
/// get their top two bits forced, which pins the product's width. A seed makes
/// generation reproducible; pass `None` for an entropy-backed key.
pub fn keygen(key_bits: usize, seed: Option<u64>) -> Result<(PublicKey, SecretKey)> {
    if key_bits < MIN_KEY_BITS || !key_bits.is_multiple_of(2) {
        return Err(Error::InvalidKeyBits(key_bits));
    }
    let mut rng = seeded_rng(seed);
    let prime_bits = key_bits / 2;
    loop {
        let p = gen_prime(prime_bits, &mut rng);
        let q = gen_prime(prime_bits, &mut rng);
        if p == q {
            continue;
        }
        match assemble(&p, &q) {
            Ok(pair) => {
                debug_assert_eq!(pair.0.key_bits, key_bits);
                return Ok(pair);
            }
            // Vanishingly rare for real key sizes: draw fresh primes.
            Err(_) => continue,
        }
    }
}

/// Builds a keypair from caller-chosen primes. Exists for tests that need
/// moduli small enough to cross-check arithmetic by hand; rejects inputs that
/// do not yield a working key.
pub fn keypair_from_primes(p: u64, q: u64) -> Result<(PublicKey, SecretKey)> {
    if p == q {
        return Err(Error::InvalidPrimes(format!("p and q must differ, got {p}")));
    }
    let mut rng = seeded_rng(Some(0));
    for v in [p, q] {
        if v < 3 {
            return Err(Error::InvalidPrimes(format!("{v} is too small")));
        }
        if !is_probable_prime(&BigUint::from(v), MILLER_RABIN_ROUNDS, &mut rng) {
            return Err(Error::InvalidPrimes(format!("{v} is not prime")));
        }
    }
    assemble(&BigUint::from(p), &BigUint::from(q))
}

fn assemble(p: &BigUint, q: &BigUint) -> Result<(PublicKey, SecretKey)> {
    let n = p * q;
    let lambda = (p - BigUint::one()).lcm(&(q - BigUint::one()));
    let mu = lambda.modinv(&n).ok_or_else(|| {
        Error::InvalidPrimes(format!("lcm(p-1, q-1) is not invertible mod {n}"))
    })?;
    let pk = PublicKey::from_modulus(n)?;
    let sk = SecretKey {
        lambda,
        mu,
        pk: pk.clone(),
    };
    Ok((pk, sk))
}

fn gen_prime<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> BigUint {
    let top_two = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    loop {
        let mut candidate = rng.gen_biguint(bits as u64) | &top_two;
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return candidate;
        }
    }
}

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let limit = 1 << 10;
        let mut sieve = vec![true; limit];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..limit {
            if sieve[i] {
                for j in (i * i..limit).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        (2..limit as u32).filter(|&i| sieve[i as usize]).collect()
    })
}

/// Miller-Rabin with random bases after trial division. With 40 rounds the
/// error probability is below 4^-40 per call, negligible next to hardware
/// faults.
fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    // n - 1 = d * 2^s with d odd.
    let n_minus_one = n - BigUint::one();
    let s = n_minus_one.trailing_zeros().expect("n > 1 is odd here");
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn to_fixed_be(value: &BigUint, width: usize) -> Vec<u8> {
    let raw = value.to_bytes_be();
    assert!(raw.len() <= width, "value wider than its declared encoding");
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    out
}

/// FNV-1a, 64-bit. Used only as a cheap stable tag for key material, not for
/// any security property.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
