//! Provable data possession with homomorphic RSA tags.
//!
//! The owner of a file tags each data block under an RSA key whose modulus
//! is a product of two safe primes. Anyone holding the public key can later
//! challenge a server for a random subset of blocks and check a
//! constant-size proof, without ever seeing the data again and without any
//! secret key. Verification rests on the equation
//!
//! ```text
//!   T^e = prod_j fdh(file_id || i_j)^{a_j} * g^M   (mod N)
//! ```
//!
//! where `T` aggregates the challenged tags, `M = sum_j a_j * f_{i_j}` is
//! computed over the integers, and `fdh` is a full-domain hash into the
//! quadratic residues mod N.
//!
//! Data blocks must leave arithmetic headroom so that `M` can never wrap:
//! with coefficients below 2^80, at most 2^20 blocks per challenge and 64
//! bits of slack, a block may hold at most `bitlen(N) - 164` bits. Callers
//! storing larger chunks split them and aggregate one proof per block
//! position (see the protocol layer).

pub(crate) mod primes;

use crate::crypto::{self, tags, Digest, DIGEST_LEN};
use crate::wire::{Reader, WireError, Writer};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::cell::Cell;
use std::collections::BTreeMap;
use thiserror::Error;

/// Challenge coefficients are drawn from [1, 2^COEF_BITS).
pub const COEF_BITS: u64 = 80;
/// Statistical slack separating honest aggregates from the wrap boundary.
pub const STAT_SLACK_BITS: u64 = 64;
/// No challenge may exceed 2^MAX_CHALLENGE_LOG2 indexes.
pub const MAX_CHALLENGE_LOG2: u64 = 20;
pub const MAX_CHALLENGE_SIZE: u64 = 1 << MAX_CHALLENGE_LOG2;
/// Total headroom reserved above the block payload.
pub const HEADROOM_BITS: u64 = COEF_BITS + STAT_SLACK_BITS + MAX_CHALLENGE_LOG2;
/// Smallest accepted modulus. Widths this small are for tests; production
/// use is 1024, 2048 or 3072 bits.
pub const MIN_MODULUS_BITS: u64 = 512;

#[derive(Debug, Error)]
pub enum PdpError {
    #[error("modulus width {0} unsupported: need a multiple of 64, at least {MIN_MODULUS_BITS}")]
    BadModulusWidth(u64),
    #[error("chunk at index {index} holds {got} bits, capacity is {capacity}")]
    ChunkTooLarge { index: u64, got: u64, capacity: u64 },
    #[error("challenge size {d} outside [0, {max}]")]
    BadChallengeSize { d: u64, max: u64 },
    #[error("missing {what} for challenged index {index}")]
    MissingInput { what: &'static str, index: u64 },
    #[error("tag carries index {got}, challenged index is {want}")]
    TagIndexMismatch { got: u64, want: u64 },
    #[error("parameter out of range: {0}")]
    Parameter(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] crypto::CryptoError),
}

/// Work counters for the current thread, for cost-scaling assertions.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct OpCounts {
    pub tags_created: u64,
    pub proofs_generated: u64,
    pub proofs_checked: u64,
    pub modexp_ops: u64,
}

thread_local! {
    static OPS: Cell<OpCounts> = const { Cell::new(OpCounts {
        tags_created: 0,
        proofs_generated: 0,
        proofs_checked: 0,
        modexp_ops: 0,
    }) };
}

pub fn op_counts() -> OpCounts {
    OPS.with(|c| c.get())
}

pub fn reset_op_counts() {
    OPS.with(|c| c.set(OpCounts::default()));
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    OPS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

fn modexp(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> BigUint {
    bump(|o| o.modexp_ops += 1);
    base.modpow(exp, modulus)
}

/// Public verification material: modulus, exponent, generator, and the
/// file id that binds every tag to this key.
#[derive(Clone, PartialEq, Eq)]
pub struct PdpPublicKey {
    pub modulus: BigUint,
    pub public_exponent: BigUint,
    pub generator: BigUint,
    file_id: Digest,
}

impl PdpPublicKey {
    pub(crate) fn assemble(modulus: BigUint, public_exponent: BigUint, generator: BigUint) -> Self {
        let mut pk = PdpPublicKey {
            modulus,
            public_exponent,
            generator,
            file_id: [0; DIGEST_LEN],
        };
        pk.file_id = crypto::tagged_hash(tags::FILE_ID, &pk.encode_body());
        pk
    }

    /// Digest binding tags and proofs to this key.
    pub fn file_id(&self) -> Digest {
        self.file_id
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus.bits()
    }

    /// Largest bit-width a data block may occupy.
    pub fn chunk_capacity_bits(&self) -> u64 {
        self.modulus_bits().saturating_sub(HEADROOM_BITS)
    }

    /// Largest whole-byte block size.
    pub fn chunk_capacity_bytes(&self) -> usize {
        (self.chunk_capacity_bits() / 8) as usize
    }

    /// Serialized width of an aggregated tag.
    fn tag_width(&self) -> usize {
        self.modulus_bits().div_ceil(8) as usize
    }

    /// Serialized width of the aggregated data value: payload plus all
    /// headroom except the statistical slack.
    fn data_width(&self) -> usize {
        (self.modulus_bits().saturating_sub(STAT_SLACK_BITS) as usize).div_ceil(8)
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.modulus.to_bytes_be());
        w.bytes(&self.public_exponent.to_bytes_be());
        w.bytes(&self.generator.to_bytes_be());
        w.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_body()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let pk = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(pk)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let modulus = BigUint::from_bytes_be(r.bytes()?);
        let public_exponent = BigUint::from_bytes_be(r.bytes()?);
        let generator = BigUint::from_bytes_be(r.bytes()?);
        Ok(Self::assemble(modulus, public_exponent, generator))
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.raw(&self.encode_body());
    }
}

impl std::fmt::Debug for PdpPublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PdpPublicKey({} bits, file {})",
            self.modulus_bits(),
            hex::encode(&self.file_id[..8])
        )
    }
}

/// Tagging key: the public part plus the factorization and the private
/// exponent in CRT form.
#[derive(Clone)]
pub struct PdpKeyPair {
    public: PdpPublicKey,
    prime_p: BigUint,
    prime_q: BigUint,
    private_exponent: BigUint,
    d_mod_p1: BigUint,
    d_mod_q1: BigUint,
    q_inv_p: BigUint,
}

impl PdpKeyPair {
    pub fn public(&self) -> &PdpPublicKey {
        &self.public
    }

    fn with_crt(public: PdpPublicKey, p: BigUint, q: BigUint, d: BigUint) -> Self {
        let d_mod_p1 = &d % (&p - 1u32);
        let d_mod_q1 = &d % (&q - 1u32);
        let q_inv_p = primes::modinv(&q, &p).expect("distinct primes are coprime");
        PdpKeyPair {
            public,
            prime_p: p,
            prime_q: q,
            private_exponent: d,
            d_mod_p1,
            d_mod_q1,
            q_inv_p,
        }
    }

    /// (h * g^f)^d mod N via the two prime halves.
    fn sign_value(&self, h: &BigUint, f: &BigUint) -> BigUint {
        let half = |prime: &BigUint, d_exp: &BigUint| {
            let order = prime - 1u32;
            let base = (h % prime) * modexp(&(&self.public.generator % prime), &(f % &order), prime)
                % prime;
            modexp(&base, d_exp, prime)
        };
        let tp = half(&self.prime_p, &self.d_mod_p1);
        let tq = half(&self.prime_q, &self.d_mod_q1);
        // Garner recombination.
        let p = &self.prime_p;
        let diff = (&tp + p - (&tq % p)) % p;
        let gap = diff * &self.q_inv_p % p;
        tq + gap * &self.prime_q
    }

    /// Secret serialization: public part plus p, q, d.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.public.encode());
        w.bytes(&self.prime_p.to_bytes_be());
        w.bytes(&self.prime_q.to_bytes_be());
        w.bytes(&self.private_exponent.to_bytes_be());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PdpError> {
        let mut r = Reader::new(bytes);
        let public = PdpPublicKey::decode(r.bytes()?)?;
        let p = BigUint::from_bytes_be(r.bytes()?);
        let q = BigUint::from_bytes_be(r.bytes()?);
        let d = BigUint::from_bytes_be(r.bytes()?);
        r.finish()?;
        if &p * &q != public.modulus || p == q || p.is_one() || q.is_one() {
            return Err(WireError::Malformed("key pair factorization").into());
        }
        Ok(Self::with_crt(public, p, q, d))
    }
}

impl std::fmt::Debug for PdpKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PdpKeyPair({:?})", self.public)
    }
}

/// Homomorphic tag for one data block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkTag {
    pub index: u64,
    pub value: BigUint,
}

impl ChunkTag {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.index);
        w.bytes(&self.value.to_bytes_be());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tag = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(tag)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let index = r.u64()?;
        let value = BigUint::from_bytes_be(r.bytes()?);
        Ok(ChunkTag { index, value })
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u64(self.index);
        w.bytes(&self.value.to_bytes_be());
    }
}

/// Resolved challenge: the drawn indexes and coefficients, plus the seed
/// and index-space digest that pin them down.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub seed: Digest,
    pub index_space_digest: Digest,
    pub indexes: Vec<u64>,
    pub coefficients: Vec<BigUint>,
}

impl Challenge {
    pub fn size(&self) -> u64 {
        self.indexes.len() as u64
    }

    /// Wire form carries only (d, seed, index-space digest); indexes and
    /// coefficients are always recomputed, never trusted from the wire.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.size());
        w.raw(&self.seed);
        w.raw(&self.index_space_digest);
        w.finish()
    }

    pub fn decode(bytes: &[u8], index_space: &[u64]) -> Result<Self, PdpError> {
        let mut r = Reader::new(bytes);
        let d = r.u64()?;
        let seed: Digest = r.raw(DIGEST_LEN)?.try_into().unwrap();
        let space_digest: Digest = r.raw(DIGEST_LEN)?.try_into().unwrap();
        r.finish().map_err(PdpError::from)?;
        let chal = pdp_genchal(d, index_space, &seed)?;
        if chal.index_space_digest != space_digest {
            return Err(WireError::Malformed("challenge index space digest").into());
        }
        Ok(chal)
    }
}

fn index_space_digest(index_space: &[u64]) -> Digest {
    let mut buf = Vec::with_capacity(index_space.len() * 8);
    for &i in index_space {
        buf.extend_from_slice(&i.to_be_bytes());
    }
    crypto::tagged_hash(tags::INDEX_SPACE, &buf)
}

/// Aggregated proof: one tag product and one integer data combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PdpProof {
    pub aggregated_tag: BigUint,
    pub aggregated_data: BigUint,
}

fn pad_to(v: &BigUint, width: usize) -> Vec<u8> {
    let raw = v.to_bytes_be();
    if raw.len() >= width {
        return raw;
    }
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    out
}

impl PdpProof {
    /// Fixed-width serialization: both fields are padded to widths set by
    /// the key alone, so honest proof size is independent of data size and
    /// challenge size.
    pub fn encode(&self, pk: &PdpPublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&pad_to(&self.aggregated_tag, pk.tag_width()));
        w.bytes(&pad_to(&self.aggregated_data, pk.data_width()));
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let proof = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(proof)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let aggregated_tag = BigUint::from_bytes_be(r.bytes()?);
        let aggregated_data = BigUint::from_bytes_be(r.bytes()?);
        Ok(PdpProof {
            aggregated_tag,
            aggregated_data,
        })
    }

    pub(crate) fn encode_into(&self, pk: &PdpPublicKey, w: &mut Writer) {
        w.bytes(&pad_to(&self.aggregated_tag, pk.tag_width()));
        w.bytes(&pad_to(&self.aggregated_data, pk.data_width()));
    }
}

/// Full-domain hash into the quadratic residues mod N: counter-mode
/// expansion of `file_id || index` to modulus width, reduction, squaring.
fn fdh(pk: &PdpPublicKey, index: u64) -> BigUint {
    let width = pk.tag_width();
    let mut msg = Vec::with_capacity(DIGEST_LEN + 12);
    msg.extend_from_slice(&pk.file_id);
    msg.extend_from_slice(&index.to_be_bytes());
    msg.extend_from_slice(&[0u8; 4]);
    let ctr_at = msg.len() - 4;

    let mut out = Vec::with_capacity(width + DIGEST_LEN);
    let mut ctr: u32 = 0;
    while out.len() < width {
        msg[ctr_at..].copy_from_slice(&ctr.to_be_bytes());
        out.extend_from_slice(&crypto::tagged_hash(tags::FDH, &msg));
        ctr += 1;
    }
    let x = BigUint::from_bytes_be(&out[..width]) % &pk.modulus;
    &x * &x % &pk.modulus
}

/// Generates a tagging key with the given modulus width, deterministically
/// from the seed. The modulus is a product of two safe primes; the
/// generator is a quadratic residue of maximal odd order.
pub fn pdp_keygen(modulus_bits: u64, seed: &[u8]) -> Result<PdpKeyPair, PdpError> {
    if modulus_bits < MIN_MODULUS_BITS || modulus_bits % 64 != 0 {
        return Err(PdpError::BadModulusWidth(modulus_bits));
    }
    let mut rng = ChaCha20Rng::from_seed(crypto::tagged_hash(tags::KEYGEN, seed));
    let half = modulus_bits / 2;
    let (p, p_half) = primes::safe_prime(&mut rng, half);
    let (q, q_half) = loop {
        let cand = primes::safe_prime(&mut rng, half);
        if cand.0 != p {
            break cand;
        }
    };
    let modulus = &p * &q;
    debug_assert_eq!(modulus.bits(), modulus_bits);

    let e = BigUint::from(65537u32);
    // lambda(N) = 2 p' q'; e is coprime to it since p', q' are huge primes.
    let lambda = BigUint::from(2u32) * &p_half * &q_half;
    let d = primes::modinv(&e, &lambda).ok_or(PdpError::Parameter("exponent not invertible"))?;

    // g = a^2 with g != 1 and gcd(g-1, N) = 1 forces order p'q'.
    let one = BigUint::one();
    let generator = loop {
        let a = primes::rand_biguint(&mut rng, modulus_bits) % &modulus;
        let g = &a * &a % &modulus;
        if g > one && (&g - &one).gcd(&modulus).is_one() && g.gcd(&modulus).is_one() {
            break g;
        }
    };

    let public = PdpPublicKey::assemble(modulus, e, generator);
    Ok(PdpKeyPair::with_crt(public, p, q, d))
}

/// Tags one data block. The block, read as a big-endian integer, must fit
/// the key's headroom capacity.
pub fn pdp_tag(keys: &PdpKeyPair, index: u64, chunk: &[u8]) -> Result<ChunkTag, PdpError> {
    let f = BigUint::from_bytes_be(chunk);
    let capacity = keys.public.chunk_capacity_bits();
    if f.bits() > capacity {
        return Err(PdpError::ChunkTooLarge {
            index,
            got: f.bits(),
            capacity,
        });
    }
    let h = fdh(&keys.public, index);
    let value = keys.sign_value(&h, &f);
    bump(|o| o.tags_created += 1);
    Ok(ChunkTag { index, value })
}

/// Draws a challenge of `d` indexes out of `index_space`, with matching
/// coefficients, entirely determined by the seed.
pub fn pdp_genchal(d: u64, index_space: &[u64], seed: &Digest) -> Result<Challenge, PdpError> {
    let max = (index_space.len() as u64).min(MAX_CHALLENGE_SIZE);
    if d > max {
        return Err(PdpError::BadChallengeSize { d, max });
    }
    let positions = crypto::sample_indices(tags::CHALLENGE, seed, index_space.len() as u64, d)?;
    let indexes: Vec<u64> = positions.iter().map(|&p| index_space[p as usize]).collect();

    let mut coefficients = Vec::with_capacity(d as usize);
    let mut msg = Vec::with_capacity(DIGEST_LEN + 12);
    for j in 0..d {
        // Coefficient draw: first 80 bits of the digest, rejecting zero.
        let mut attempt: u32 = 0;
        let coef = loop {
            msg.clear();
            msg.extend_from_slice(seed);
            msg.extend_from_slice(&j.to_be_bytes());
            msg.extend_from_slice(&attempt.to_be_bytes());
            let digest = crypto::tagged_hash(tags::CHALLENGE_COEF, &msg);
            let mut v: u128 = 0;
            for &b in &digest[..(COEF_BITS / 8) as usize] {
                v = v << 8 | b as u128;
            }
            if v != 0 {
                break BigUint::from(v);
            }
            attempt += 1;
        };
        coefficients.push(coef);
    }

    Ok(Challenge {
        seed: *seed,
        index_space_digest: index_space_digest(index_space),
        indexes,
        coefficients,
    })
}

/// Aggregates the challenged tags and data into a proof. Requires every
/// challenged index in both maps; a missing entry is the honest-prover
/// signal of data loss.
pub fn pdp_genproof(
    pk: &PdpPublicKey,
    chal: &Challenge,
    chunks: &BTreeMap<u64, Vec<u8>>,
    tags_by_index: &BTreeMap<u64, ChunkTag>,
) -> Result<PdpProof, PdpError> {
    let mut aggregated_tag = BigUint::one();
    let mut aggregated_data = BigUint::zero();
    for (i, a) in chal.indexes.iter().zip(&chal.coefficients) {
        let chunk = chunks.get(i).ok_or(PdpError::MissingInput {
            what: "chunk",
            index: *i,
        })?;
        let tag = tags_by_index.get(i).ok_or(PdpError::MissingInput {
            what: "tag",
            index: *i,
        })?;
        if tag.index != *i {
            return Err(PdpError::TagIndexMismatch {
                got: tag.index,
                want: *i,
            });
        }
        aggregated_tag = aggregated_tag * modexp(&tag.value, a, &pk.modulus) % &pk.modulus;
        aggregated_data += a * BigUint::from_bytes_be(chunk);
    }
    bump(|o| o.proofs_generated += 1);
    Ok(PdpProof {
        aggregated_tag,
        aggregated_data,
    })
}

/// Checks a proof against a challenge. Total: every malformed or
/// adversarial input yields false, never a panic or an error.
pub fn pdp_checkproof(pk: &PdpPublicKey, chal: &Challenge, proof: &PdpProof) -> bool {
    bump(|o| o.proofs_checked += 1);
    if pk.modulus.bits() < MIN_MODULUS_BITS {
        return false;
    }
    if chal.indexes.len() != chal.coefficients.len() {
        return false;
    }
    if chal.size() > MAX_CHALLENGE_SIZE {
        return false;
    }
    if chal
        .coefficients
        .iter()
        .any(|a| a.is_zero() || a.bits() > COEF_BITS)
    {
        return false;
    }
    if proof.aggregated_tag >= pk.modulus {
        return false;
    }
    // Headroom bound: honest M stays below 2^(payload + coef + challenge
    // log); anything at or past the slack boundary is rejected.
    if proof.aggregated_data.bits() > pk.modulus_bits().saturating_sub(STAT_SLACK_BITS) {
        return false;
    }

    let lhs = modexp(&proof.aggregated_tag, &pk.public_exponent, &pk.modulus);
    let mut rhs = modexp(
        &(&pk.generator % &pk.modulus),
        &proof.aggregated_data,
        &pk.modulus,
    );
    for (i, a) in chal.indexes.iter().zip(&chal.coefficients) {
        rhs = rhs * modexp(&fdh(pk, *i), a, &pk.modulus) % &pk.modulus;
    }
    lhs == rhs
}

/// Checks a single tag against its block: tag^e = fdh(file_id || index) * g^f.
pub fn pdp_verify_tag(pk: &PdpPublicKey, index: u64, chunk: &[u8], tag: &ChunkTag) -> bool {
    if pk.modulus.bits() < MIN_MODULUS_BITS || tag.index != index || tag.value >= pk.modulus {
        return false;
    }
    let f = BigUint::from_bytes_be(chunk);
    if f.bits() > pk.chunk_capacity_bits() {
        return false;
    }
    let lhs = modexp(&tag.value, &pk.public_exponent, &pk.modulus);
    let rhs = fdh(pk, index) * modexp(&(&pk.generator % &pk.modulus), &f, &pk.modulus) % &pk.modulus;
    lhs == rhs
}

/// Closed-form bounds on the probability that a prover missing `t` of its
/// `m` chunks fails a size-`d` challenge: the lower bound models sampling
/// with replacement, the upper without.
pub fn detection_probability_bounds(m: u64, t: u64, d: u64) -> Result<(f64, f64), PdpError> {
    if m < 1 {
        return Err(PdpError::Parameter("m must be at least 1"));
    }
    if t > m {
        return Err(PdpError::Parameter("t must not exceed m"));
    }
    if d < 1 || d > m {
        return Err(PdpError::Parameter("d must lie in [1, m]"));
    }
    fn pow_u(base: f64, exp: u64) -> f64 {
        if base == 0.0 {
            0.0
        } else {
            (exp as f64 * base.ln()).exp()
        }
    }
    let lower = 1.0 - pow_u((m - t) as f64 / m as f64, d);
    let upper = if m - d + 1 <= t {
        1.0
    } else {
        let denom = (m - d + 1) as f64;
        1.0 - pow_u((m - d + 1 - t) as f64 / denom, d)
    };
    Ok((lower, upper))
}
