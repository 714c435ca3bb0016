//! Hashing, deterministic sampling, and signatures.
//!
//! Every hash in the system is SHA3-256 over a single-byte domain tag
//! followed by the payload. Separate tags keep the index sampler, the
//! challenge derivation, the full-domain hash and all bookkeeping streams
//! independent of each other even when they share seed material.

use ed25519_dalek::{Signer, Verifier};
use sha3::{Digest as _, Sha3_256};
use std::collections::HashSet;
use thiserror::Error;

/// Output width of every hash in the system.
pub const DIGEST_LEN: usize = 32;

pub type Digest = [u8; DIGEST_LEN];

/// Public sampling domains. Each call site that samples indexes uses its
/// own domain so that streams never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashDomain {
    /// Chunk-to-node assignment.
    ChunkSampling,
    /// Per-round storage node election.
    NodeSampling,
    /// Challenge seed derivation and challenge index sampling.
    ChallengeSeed,
}

impl HashDomain {
    fn tag(self) -> u8 {
        match self {
            HashDomain::ChunkSampling => tags::CHUNK_SAMPLING,
            HashDomain::NodeSampling => tags::NODE_SAMPLING,
            HashDomain::ChallengeSeed => tags::CHALLENGE,
        }
    }
}

/// Domain tag bytes. One byte per independent hash stream.
pub(crate) mod tags {
    pub const CHUNK_SAMPLING: u8 = 0x01;
    pub const NODE_SAMPLING: u8 = 0x02;
    pub const CHALLENGE: u8 = 0x03;
    pub const FDH: u8 = 0x04;
    pub const CHALLENGE_COEF: u8 = 0x05;
    pub const LEADER: u8 = 0x06;
    pub const ORACLE: u8 = 0x07;
    pub const JITTER: u8 = 0x08;
    pub const FILE_ID: u8 = 0x09;
    pub const SIG_KEY: u8 = 0x0a;
    pub const BLOCK: u8 = 0x0b;
    pub const DELETION: u8 = 0x0c;
    pub const NODE_SEED: u8 = 0x0d;
    pub const INDEX_SPACE: u8 = 0x0e;
    pub const KEYGEN: u8 = 0x0f;
    pub const FILE_BYTES: u8 = 0x10;
}

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("sample size {requested} exceeds universe size {universe}")]
    SampleTooLarge { requested: u64, universe: u64 },
    #[error("malformed {0} encoding")]
    Decode(&'static str),
}

/// SHA3-256 over a one-byte tag followed by the input.
pub(crate) fn tagged_hash(tag: u8, input: &[u8]) -> Digest {
    let mut h = Sha3_256::new();
    h.update([tag]);
    h.update(input);
    h.finalize().into()
}

/// Domain-separated hash with one of the public sampling domains.
pub fn hash(domain: HashDomain, input: &[u8]) -> Digest {
    tagged_hash(domain.tag(), input)
}

// Membership filter for the sampler. Small universes get a bitmap, large
// ones a hash set; behaviour is identical either way.
enum Seen {
    Bitmap(Vec<u64>),
    Set(HashSet<u64>),
}

impl Seen {
    fn new(universe: u64) -> Self {
        if universe <= 1 << 24 {
            Seen::Bitmap(vec![0u64; (universe as usize).div_ceil(64)])
        } else {
            Seen::Set(HashSet::new())
        }
    }

    /// Inserts `v`; returns true if it was new.
    fn insert(&mut self, v: u64) -> bool {
        match self {
            Seen::Bitmap(words) => {
                let (w, b) = ((v / 64) as usize, v % 64);
                let fresh = words[w] & (1 << b) == 0;
                words[w] |= 1 << b;
                fresh
            }
            Seen::Set(set) => set.insert(v),
        }
    }
}

/// Draws `sample_size` distinct indexes from `0..universe_size`, in a
/// deterministic order fixed entirely by `(domain, seed)`.
///
/// A counter starts at 1 and increments on every attempt, whether the
/// attempt is accepted, rejected as out of range, or discarded as a
/// duplicate. Attempt `j` hashes `tag || seed || j` and keeps the lowest
/// `b` bits of the digest, where `2^b` is the smallest power of two at
/// least `universe_size`; values at or above the universe are rejected.
/// Because acceptance of a prefix never depends on later draws, the first
/// `s` accepted indexes are the same for every `sample_size >= s`.
pub fn sample_without_replacement(
    domain: HashDomain,
    seed: &[u8],
    universe_size: u64,
    sample_size: u64,
) -> Result<Vec<u64>, CryptoError> {
    sample_indices(domain.tag(), seed, universe_size, sample_size)
}

pub(crate) fn sample_indices(
    tag: u8,
    seed: &[u8],
    universe_size: u64,
    sample_size: u64,
) -> Result<Vec<u64>, CryptoError> {
    if sample_size > universe_size {
        return Err(CryptoError::SampleTooLarge {
            requested: sample_size,
            universe: universe_size,
        });
    }
    if sample_size == 0 {
        return Ok(Vec::new());
    }

    // b = ceil(log2(universe_size)); universe 1 gives b = 0.
    let b = 64 - (universe_size - 1).leading_zeros();
    let mask: u64 = if b == 64 { u64::MAX } else { (1u64 << b) - 1 };

    // The tag and seed fit one sponge block, so cloning the pre-absorbed
    // state costs far less than rehashing the seed on every attempt.
    let mut base = Sha3_256::new();
    base.update([tag]);
    base.update(seed);

    let mut seen = Seen::new(universe_size);
    let mut out = Vec::with_capacity(sample_size as usize);
    let mut counter: u64 = 0;
    while (out.len() as u64) < sample_size {
        counter += 1;
        let mut h = base.clone();
        h.update(counter.to_be_bytes());
        let digest = h.finalize();
        // Low b bits of the digest read as a big-endian integer.
        let tail: [u8; 8] = digest[DIGEST_LEN - 8..].try_into().unwrap();
        let v = u64::from_be_bytes(tail) & mask;
        if v < universe_size && seen.insert(v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Ed25519 public key. Ordering is lexicographic on the encoded bytes and
/// is used wherever the protocol needs a canonical node order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SigPublicKey(pub [u8; 32]);

impl SigPublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Decode("public key"))?;
        // Reject encodings that are not valid curve points up front.
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map_err(|_| CryptoError::Decode("public key"))?;
        Ok(SigPublicKey(arr))
    }

    /// Checks a signature. Decode failures are errors, distinct from an
    /// honest verification failure which is `Ok(false)`.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
        let key = ed25519_dalek::VerifyingKey::from_bytes(&self.0)
            .map_err(|_| CryptoError::Decode("public key"))?;
        let sig_bytes: [u8; 64] = signature
            .try_into()
            .map_err(|_| CryptoError::Decode("signature"))?;
        let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
        Ok(key.verify(message, &sig).is_ok())
    }
}

impl std::fmt::Debug for SigPublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigPublicKey({})", hex::encode(&self.0[..8]))
    }
}

/// Ed25519 key pair with a deterministic derivation from seed bytes.
#[derive(Clone)]
pub struct SigKeyPair {
    signing: ed25519_dalek::SigningKey,
    public: SigPublicKey,
}

impl SigKeyPair {
    pub fn public(&self) -> SigPublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }

    /// Secret seed followed by the public key, 64 bytes total.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signing.to_bytes().to_vec();
        out.extend_from_slice(&self.public.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != 64 {
            return Err(CryptoError::Decode("key pair"));
        }
        let secret: [u8; 32] = bytes[..32].try_into().unwrap();
        let signing = ed25519_dalek::SigningKey::from_bytes(&secret);
        let public = SigPublicKey(signing.verifying_key().to_bytes());
        if public.0 != bytes[32..] {
            return Err(CryptoError::Decode("key pair"));
        }
        Ok(SigKeyPair { signing, public })
    }
}

impl std::fmt::Debug for SigKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigKeyPair({:?})", self.public)
    }
}

/// Derives a signing key pair from arbitrary seed bytes.
pub fn sig_keygen(seed: &[u8]) -> SigKeyPair {
    let secret = tagged_hash(tags::SIG_KEY, seed);
    let signing = ed25519_dalek::SigningKey::from_bytes(&secret);
    let public = SigPublicKey(signing.verifying_key().to_bytes());
    SigKeyPair { signing, public }
}

#[cfg(test)]
mod tests {
    use super::*;

    // SHA3-256 reference vectors, cross-checked against an independent
    // from-scratch implementation of the permutation.
    #[test]
    fn sha3_reference_vectors() {
        let cases: [(&[u8], &str); 4] = [
            (
                b"",
                "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a",
            ),
            (
                b"abc",
                "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532",
            ),
            (
                &{
                    let mut v = [0u8; 136];
                    for (i, b) in v.iter_mut().enumerate() {
                        *b = i as u8;
                    }
                    v
                },
                "cf3ccff92480a29160c2d38317c430e14749bfee1788106957dfe73f8c4930e5",
            ),
            (
                &[0xa3; 200],
                "79f38adec5c20307a98ef76e8324afbfd46cfd81b22e3973c65fa1bd9de31787",
            ),
        ];
        for (input, want) in cases {
            let got: Digest = Sha3_256::digest(input).into();
            assert_eq!(hex::encode(got), want);
        }
    }

    #[test]
    fn tagged_hash_prepends_domain() {
        // hash(ChunkSampling, "") equals SHA3-256 of the single byte 0x01.
        let got = hash(HashDomain::ChunkSampling, b"");
        assert_eq!(
            hex::encode(got),
            "2767f15c8af2f2c7225d5273fdd683edc714110a987d1054697c348aed4e6cc7"
        );
        // Domains separate identical payloads.
        assert_ne!(
            hash(HashDomain::ChunkSampling, b"x"),
            hash(HashDomain::NodeSampling, b"x")
        );
    }

    #[test]
    fn sample_is_deterministic_and_in_range() {
        let a = sample_without_replacement(HashDomain::ChunkSampling, b"seed", 1000, 50).unwrap();
        let b = sample_without_replacement(HashDomain::ChunkSampling, b"seed", 1000, 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|&v| v < 1000));
        let c = sample_without_replacement(HashDomain::NodeSampling, b"seed", 1000, 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_rejects_oversized_request() {
        let err = sample_without_replacement(HashDomain::ChunkSampling, b"s", 10, 11).unwrap_err();
        assert!(matches!(
            err,
            CryptoError::SampleTooLarge {
                requested: 11,
                universe: 10
            }
        ));
    }

    #[test]
    fn sample_edge_cases() {
        // Empty sample from any universe, including an empty one.
        assert!(sample_without_replacement(HashDomain::ChunkSampling, b"s", 0, 0)
            .unwrap()
            .is_empty());
        // Universe of one has a single possible outcome.
        assert_eq!(
            sample_without_replacement(HashDomain::ChunkSampling, b"s", 1, 1).unwrap(),
            vec![0]
        );
        // Full-universe sample is a permutation.
        let full = sample_without_replacement(HashDomain::ChunkSampling, b"s", 64, 64).unwrap();
        let mut sorted = full.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn sample_prefix_stability() {
        // Growing the sample size never changes the already drawn prefix.
        for seed in 0u32..100 {
            let s = seed.to_be_bytes();
            let small = sample_without_replacement(HashDomain::ChallengeSeed, &s, 1000, 50).unwrap();
            let large = sample_without_replacement(HashDomain::ChallengeSeed, &s, 1000, 200).unwrap();
            assert_eq!(&large[..50], &small[..]);
        }
    }

    #[test]
    fn sample_distinctness_many_seeds() {
        for seed in 0u32..10_000 {
            let s = seed.to_be_bytes();
            let v = sample_without_replacement(HashDomain::ChunkSampling, &s, 64, 32).unwrap();
            let set: HashSet<u64> = v.iter().copied().collect();
            assert_eq!(set.len(), v.len());
        }
    }

    // First draws over a fixed seed population must be uniform over the
    // universe. Chi-squared over 10^6 deterministic seeds against the
    // 1% critical value for 99 degrees of freedom.
    #[test]
    fn sample_first_draw_uniformity() {
        const UNIVERSE: u64 = 100;
        const TRIALS: u64 = 1_000_000;
        let mut counts = [0u64; UNIVERSE as usize];
        for i in 0..TRIALS {
            let seed = i.to_be_bytes();
            let v = sample_without_replacement(HashDomain::NodeSampling, &seed, UNIVERSE, 1)
                .unwrap()[0];
            counts[v as usize] += 1;
        }
        let expected = TRIALS as f64 / UNIVERSE as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 134.65, "chi-squared {chi2} exceeds the 1% critical value");
    }

    #[test]
    fn signature_roundtrip() {
        let kp = sig_keygen(b"node-0");
        let msg = b"attest these bytes";
        let sig = kp.sign(msg);
        assert_eq!(sig.len(), 64);
        assert!(kp.public().verify(msg, &sig).unwrap());
    }

    #[test]
    fn signature_verification_failures_and_decode_errors() {
        let kp = sig_keygen(b"node-1");
        let other = sig_keygen(b"node-2");
        let msg = b"message";
        let sig = kp.sign(msg);

        // Honest failures return Ok(false).
        assert!(!kp.public().verify(b"other message", &sig).unwrap());
        assert!(!other.public().verify(msg, &sig).unwrap());
        let mut bad = sig.clone();
        bad[0] ^= 1;
        assert!(!kp.public().verify(msg, &bad).unwrap());

        // Malformed encodings are errors, not failures.
        assert!(matches!(
            kp.public().verify(msg, &sig[..63]),
            Err(CryptoError::Decode("signature"))
        ));
        assert!(matches!(
            SigPublicKey::from_bytes(&[0xff; 31]),
            Err(CryptoError::Decode("public key"))
        ));
    }

    #[test]
    fn keypair_encoding_roundtrip() {
        let kp = sig_keygen(b"roundtrip");
        let bytes = kp.to_bytes();
        assert_eq!(bytes.len(), 64);
        let back = SigKeyPair::from_bytes(&bytes).unwrap();
        assert_eq!(back.public(), kp.public());
        let msg = b"same signer";
        assert_eq!(back.sign(msg), kp.sign(msg));

        // Corrupting the embedded public half must fail the decode.
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(SigKeyPair::from_bytes(&bad).is_err());
    }

    #[test]
    fn keygen_is_deterministic() {
        assert_eq!(sig_keygen(b"a").public(), sig_keygen(b"a").public());
        assert_ne!(sig_keygen(b"a").public(), sig_keygen(b"b").public());
    }
}
