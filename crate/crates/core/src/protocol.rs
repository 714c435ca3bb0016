//! Storage-audit protocol: file encoding, pseudorandom chunk placement,
//! prover election, challenge derivation, and signed possession proofs.
//!
//! A file is split into fixed-size chunks; each chunk is further split into
//! blocks small enough for the homomorphic tag scheme, and every block gets a
//! tag under the file keypair produced during setup. Placement of chunks on a
//! storage node, the set of provers for a timestamp, and the challenged chunk
//! indexes are all recomputable by anyone from public data, so a verifier
//! needs only the registry, the identification string, and the proof bytes.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{self, Digest, HashDomain, SigKeyPair, SigPublicKey, DIGEST_LEN};
use crate::ledger::Block;
use crate::pdp::{
    self, pdp_genchal, pdp_genproof, pdp_keygen, pdp_tag, Challenge, ChunkTag, PdpProof,
    PdpPublicKey,
};
use crate::wire::{Reader, WireError, Writer};
use thiserror::Error;

/// Errors surfaced by protocol operations.
///
/// Verification predicates never return these: they are total and simply
/// answer `false` on any malformed or dishonest input. Errors mark contract
/// violations by the *caller* (bad parameters, missing local data).
#[derive(Debug, Error)]
pub enum ProtocolError {
    /// Setup was asked to encode an empty file.
    #[error("cannot encode an empty file")]
    EmptyFile,
    /// A chunk size of zero was supplied.
    #[error("chunk size must be at least 1 byte")]
    BadChunkSize,
    /// A placement of `m` chunks was requested from a file with only `n`.
    #[error("placement of {m} chunks requested but the file has only {n}")]
    AssignmentTooLarge { m: u64, n: u64 },
    /// An election of `k` nodes was requested from a smaller registry.
    #[error("election of {k} nodes requested from a registry of {len}")]
    ElectionTooLarge { k: u64, len: u64 },
    /// An election was requested against an empty registry.
    #[error("cannot elect from an empty registry")]
    EmptyRegistry,
    /// A challenge of `d` chunks was requested against a placement of `m`.
    #[error("challenge size {d} exceeds placement size {m}")]
    ChallengeTooLarge { d: u64, m: u64 },
    /// The prover no longer holds a chunk it is being challenged on.
    #[error("data loss: challenged chunk {index} is not held")]
    DataLoss { index: u64 },
    /// A locally supplied structure is internally inconsistent.
    #[error("malformed input: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Pdp(#[from] pdp::PdpError),
    #[error(transparent)]
    Crypto(#[from] crypto::CryptoError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Generates a blockchain-node signing keypair from a seed.
pub fn bc_keygen(seed: &[u8]) -> SigKeyPair {
    crypto::sig_keygen(seed)
}

/// Generates a storage-node signing keypair from a seed.
pub fn sn_keygen(seed: &[u8]) -> SigKeyPair {
    crypto::sig_keygen(seed)
}

/// Public description of an encoded file: the tag-scheme public key plus the
/// chunk geometry. This is what outsourcers publish and verifiers consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePublicKey {
    /// Public key of the homomorphic tag scheme for this file.
    pub pdp: PdpPublicKey,
    /// Number of protocol chunks `n` the file was split into.
    pub chunk_count: u64,
    /// Size in bytes of every chunk (the last one is zero-padded up to this).
    pub chunk_size: u32,
    /// True byte length of the original file.
    pub file_len: u64,
    /// Number of tag-scheme blocks each chunk is split into.
    pub blocks_per_chunk: u32,
}

impl FilePublicKey {
    /// Unique identifier of the file, bound to the tag-scheme key.
    pub fn file_id(&self) -> Digest {
        self.pdp.file_id()
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        self.pdp.encode_into(w);
        w.u64(self.chunk_count);
        w.u32(self.chunk_size);
        w.u64(self.file_len);
        w.u32(self.blocks_per_chunk);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub(crate) fn decode_from(r: &mut Reader) -> Result<Self, WireError> {
        let pdp = PdpPublicKey::decode_from(r)?;
        let chunk_count = r.u64()?;
        let chunk_size = r.u32()?;
        let file_len = r.u64()?;
        let blocks_per_chunk = r.u32()?;
        if chunk_count == 0 || chunk_size == 0 || blocks_per_chunk == 0 {
            return Err(WireError::Malformed("file key with zero geometry field"));
        }
        // Geometry must be self-consistent. The block split is only checked
        // when the tag key has real capacity (bookkeeping-grade keys encode a
        // degenerate modulus and always declare a single block per chunk).
        if chunk_count != file_len.div_ceil(chunk_size as u64) {
            return Err(WireError::Malformed("file key chunk count mismatch"));
        }
        let cap = pdp.chunk_capacity_bytes() as u64;
        if cap > 0 && u64::from(blocks_per_chunk) != (chunk_size as u64).div_ceil(cap) {
            return Err(WireError::Malformed("file key block split mismatch"));
        }
        Ok(FilePublicKey {
            pdp,
            chunk_count,
            chunk_size,
            file_len,
            blocks_per_chunk,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let key = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(key)
    }
}

/// One encoded chunk: its (padded) bytes plus the tags of its blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedChunk {
    pub data: Vec<u8>,
    pub tags: Vec<ChunkTag>,
}

/// A fully encoded file ready for distribution.
#[derive(Debug, Clone)]
pub struct EncodedFile {
    pub public: FilePublicKey,
    pub chunks: Vec<EncodedChunk>,
}

impl EncodedFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.public.encode_into(&mut w);
        w.u64(self.chunks.len() as u64);
        for chunk in &self.chunks {
            w.bytes(&chunk.data);
            w.u32(chunk.tags.len() as u32);
            for tag in &chunk.tags {
                tag.encode_into(&mut w);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let public = FilePublicKey::decode_from(&mut r)?;
        let count = r.u64()?;
        if count != public.chunk_count {
            return Err(WireError::Malformed("encoded file chunk count mismatch"));
        }
        let mut chunks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let data = r.bytes()?.to_vec();
            let tag_count = r.u32()?;
            if tag_count != public.blocks_per_chunk {
                return Err(WireError::Malformed("encoded chunk tag count mismatch"));
            }
            let mut tags = Vec::with_capacity(tag_count as usize);
            for _ in 0..tag_count {
                tags.push(ChunkTag::decode_from(&mut r)?);
            }
            chunks.push(EncodedChunk { data, tags });
        }
        r.finish()?;
        Ok(EncodedFile { public, chunks })
    }
}

/// Splits a file into chunks, splits each chunk into tag-scheme blocks, and
/// tags every block under a fresh keypair derived from `seed`. The signing
/// exponent is dropped before returning: nothing after setup needs it.
///
/// Block `u` of chunk `i` is tagged at flat index `i * blocks_per_chunk + u`,
/// so tag indexes are unique across the whole file.
pub fn setup(
    file: &[u8],
    chunk_size: u32,
    modulus_bits: u64,
    seed: &[u8],
) -> Result<EncodedFile, ProtocolError> {
    if file.is_empty() {
        return Err(ProtocolError::EmptyFile);
    }
    if chunk_size == 0 {
        return Err(ProtocolError::BadChunkSize);
    }
    let keys = pdp_keygen(modulus_bits, seed)?;
    let cap = keys.public().chunk_capacity_bytes() as u64;
    debug_assert!(cap >= 1, "minimum modulus width leaves block capacity");
    let blocks_per_chunk = (chunk_size as u64).div_ceil(cap);
    let chunk_count = (file.len() as u64).div_ceil(chunk_size as u64);

    let mut chunks = Vec::with_capacity(chunk_count as usize);
    for i in 0..chunk_count {
        let start = (i * chunk_size as u64) as usize;
        let end = usize::min(start + chunk_size as usize, file.len());
        let mut data = file[start..end].to_vec();
        data.resize(chunk_size as usize, 0);
        let mut tags = Vec::with_capacity(blocks_per_chunk as usize);
        for u in 0..blocks_per_chunk {
            let bstart = (u * cap) as usize;
            let bend = usize::min(bstart + cap as usize, chunk_size as usize);
            let index = i * blocks_per_chunk + u;
            tags.push(pdp_tag(&keys, index, &data[bstart..bend])?);
        }
        chunks.push(EncodedChunk { data, tags });
    }

    let public = FilePublicKey {
        pdp: keys.public().clone(),
        chunk_count,
        chunk_size,
        file_len: file.len() as u64,
        blocks_per_chunk: blocks_per_chunk as u32,
    };
    Ok(EncodedFile { public, chunks })
}

/// Checks every tag of every chunk against the chunk bytes. Linear in the
/// file size; meant for audits and for validating fetched repairs, not for
/// the per-timestamp hot path.
pub fn verify_file_tags(file: &EncodedFile) -> bool {
    let pk = &file.public;
    if file.chunks.len() as u64 != pk.chunk_count {
        return false;
    }
    let cap = pk.pdp.chunk_capacity_bytes();
    if cap == 0 {
        return false;
    }
    for (i, chunk) in file.chunks.iter().enumerate() {
        if chunk.data.len() != pk.chunk_size as usize
            || chunk.tags.len() != pk.blocks_per_chunk as usize
        {
            return false;
        }
        for (u, tag) in chunk.tags.iter().enumerate() {
            let bstart = u * cap as usize;
            let bend = usize::min(bstart + cap as usize, pk.chunk_size as usize);
            let index = i as u64 * pk.blocks_per_chunk as u64 + u as u64;
            if !pdp::pdp_verify_tag(&pk.pdp, index, &chunk.data[bstart..bend], tag) {
                return false;
            }
        }
    }
    true
}

/// The chunks a storage node is responsible for, with whatever subset it
/// still actually holds (a missing entry models deletion or corruption loss).
#[derive(Debug, Clone)]
pub struct ChunkAssignment {
    pub node: SigPublicKey,
    /// The `m` pseudorandomly placed chunk indexes, in derivation order.
    pub indexes: Vec<u64>,
    /// Held chunks, keyed by chunk index.
    pub held: BTreeMap<u64, EncodedChunk>,
}

/// The pseudorandom placement of `m` distinct chunk indexes (out of `n`) for
/// a storage node. Depends only on the node's public key, so any party can
/// recompute it.
pub fn assignment_indexes(
    node: &SigPublicKey,
    n: u64,
    m: u64,
) -> Result<Vec<u64>, ProtocolError> {
    if m > n {
        return Err(ProtocolError::AssignmentTooLarge { m, n });
    }
    Ok(crypto::sample_without_replacement(
        HashDomain::ChunkSampling,
        node.as_bytes(),
        n,
        m,
    )?)
}

/// Materializes a node's assignment from an encoded file: the placement plus
/// clones of the assigned chunks.
pub fn get_chunks(
    file: &EncodedFile,
    node: &SigPublicKey,
    m: u64,
) -> Result<ChunkAssignment, ProtocolError> {
    let indexes = assignment_indexes(node, file.public.chunk_count, m)?;
    let mut held = BTreeMap::new();
    for &i in &indexes {
        held.insert(i, file.chunks[i as usize].clone());
    }
    Ok(ChunkAssignment {
        node: node.clone(),
        indexes,
        held,
    })
}

/// Per-timestamp identification string: the elected leader, the randomness
/// beacon output for the timestamp, and the timestamp itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentificationString {
    pub leader: SigPublicKey,
    pub epoch_seed: Digest,
    pub timestamp: u64,
}

impl IdentificationString {
    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.raw(self.leader.as_bytes());
        w.raw(&self.epoch_seed);
        w.u64(self.timestamp);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub(crate) fn decode_from(r: &mut Reader) -> Result<Self, WireError> {
        let leader = SigPublicKey::from_bytes(r.raw(32)?)
            .map_err(|_| WireError::Malformed("identification string leader key"))?;
        let mut epoch_seed = [0u8; DIGEST_LEN];
        epoch_seed.copy_from_slice(r.raw(DIGEST_LEN)?);
        let timestamp = r.u64()?;
        Ok(IdentificationString {
            leader,
            epoch_seed,
            timestamp,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let idstr = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(idstr)
    }
}

/// Elects `k` distinct storage nodes from the registry for this timestamp.
/// Returns registry *positions*, in derivation order. Deterministic in
/// (registry order, identification string).
pub fn elect(
    registry: &[SigPublicKey],
    idstr: &IdentificationString,
    k: u64,
) -> Result<Vec<u32>, ProtocolError> {
    if registry.is_empty() {
        return Err(ProtocolError::EmptyRegistry);
    }
    if k > registry.len() as u64 {
        return Err(ProtocolError::ElectionTooLarge {
            k,
            len: registry.len() as u64,
        });
    }
    let positions = crypto::sample_without_replacement(
        HashDomain::NodeSampling,
        &idstr.encode(),
        registry.len() as u64,
        k,
    )?;
    Ok(positions.into_iter().map(|p| p as u32).collect())
}

/// Derives the challenge a given prover must answer for a given file at a
/// given timestamp. The challenge seed binds the file key, the prover, and
/// the identification string, so no party can grind any one of them
/// independently. Challenged positions index into the prover's placement
/// `assignment` (which callers recompute from public data).
pub fn derive_challenge(
    file_public: &FilePublicKey,
    prover: &SigPublicKey,
    idstr: &IdentificationString,
    d: u64,
    assignment: &[u64],
) -> Result<Challenge, ProtocolError> {
    if d > assignment.len() as u64 {
        return Err(ProtocolError::ChallengeTooLarge {
            d,
            m: assignment.len() as u64,
        });
    }
    let mut seed_input = file_public.encode();
    seed_input.extend_from_slice(prover.as_bytes());
    seed_input.extend_from_slice(&idstr.encode());
    let seed = crypto::hash(HashDomain::ChallengeSeed, &seed_input);
    Ok(pdp_genchal(d, assignment, &seed)?)
}

/// A signed possession proof for one (prover, file) pair: one aggregate
/// sub-proof per block position within a chunk, plus the prover's signature
/// over the serialized sub-proofs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PossessionProof {
    pub prover: SigPublicKey,
    pub file_id: Digest,
    pub sub_proofs: Vec<PdpProof>,
    pub signature: Vec<u8>,
}

/// Canonical serialization of the sub-proof section — the exact bytes the
/// prover signs.
fn sub_proof_bytes(sub_proofs: &[PdpProof], pdp: &PdpPublicKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(sub_proofs.len() as u32);
    for sub in sub_proofs {
        sub.encode_into(pdp, &mut w);
    }
    w.finish()
}

impl PossessionProof {
    pub fn encode(&self, file_public: &FilePublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(self.prover.as_bytes());
        w.raw(&self.file_id);
        w.raw(&sub_proof_bytes(&self.sub_proofs, &file_public.pdp));
        w.bytes(&self.signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let prover = SigPublicKey::from_bytes(r.raw(32)?)
            .map_err(|_| WireError::Malformed("possession proof prover key"))?;
        let mut file_id = [0u8; DIGEST_LEN];
        file_id.copy_from_slice(r.raw(DIGEST_LEN)?);
        let count = r.u32()?;
        let mut sub_proofs = Vec::with_capacity(count as usize);
        for _ in 0..count {
            sub_proofs.push(PdpProof::decode_from(&mut r)?);
        }
        let signature = r.bytes()?.to_vec();
        r.finish()?;
        Ok(PossessionProof {
            prover,
            file_id,
            sub_proofs,
            signature,
        })
    }
}

/// Remaps a challenge over chunk indexes to one over the flat tag indexes of
/// block position `u` within each challenged chunk. Coefficients carry over
/// unchanged, so each block position gets an independently sound aggregate.
fn block_view(chal: &Challenge, blocks_per_chunk: u32, u: u32) -> Challenge {
    Challenge {
        seed: chal.seed,
        index_space_digest: chal.index_space_digest,
        indexes: chal
            .indexes
            .iter()
            .map(|&i| i * blocks_per_chunk as u64 + u as u64)
            .collect(),
        coefficients: chal.coefficients.clone(),
    }
}

/// Produces the signed possession proof for one file at one timestamp.
/// Fails with [`ProtocolError::DataLoss`] if a challenged chunk is gone.
pub fn prove(
    file_public: &FilePublicKey,
    assignment: &ChunkAssignment,
    keys: &SigKeyPair,
    idstr: &IdentificationString,
    d: u64,
) -> Result<PossessionProof, ProtocolError> {
    if assignment.node != keys.public() {
        return Err(ProtocolError::Malformed("assignment is for a different node"));
    }
    let chal = derive_challenge(file_public, &keys.public(), idstr, d, &assignment.indexes)?;
    let bpc = file_public.blocks_per_chunk;
    let cap = file_public.pdp.chunk_capacity_bytes();
    if cap == 0 {
        return Err(ProtocolError::Malformed("file key has no block capacity"));
    }

    // Gather the challenged chunks once, failing fast on anything missing.
    let mut challenged: BTreeMap<u64, &EncodedChunk> = BTreeMap::new();
    for &i in &chal.indexes {
        let chunk = assignment
            .held
            .get(&i)
            .ok_or(ProtocolError::DataLoss { index: i })?;
        if chunk.data.len() != file_public.chunk_size as usize
            || chunk.tags.len() != bpc as usize
        {
            return Err(ProtocolError::Malformed("held chunk has wrong geometry"));
        }
        challenged.insert(i, chunk);
    }

    let mut sub_proofs = Vec::with_capacity(bpc as usize);
    for u in 0..bpc {
        let view = block_view(&chal, bpc, u);
        let bstart = u as usize * cap as usize;
        let bend = usize::min(bstart + cap as usize, file_public.chunk_size as usize);
        let mut blocks = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for (&i, chunk) in &challenged {
            let flat = i * bpc as u64 + u as u64;
            blocks.insert(flat, chunk.data[bstart..bend].to_vec());
            tags.insert(flat, chunk.tags[u as usize].clone());
        }
        sub_proofs.push(pdp_genproof(&file_public.pdp, &view, &blocks, &tags)?);
    }

    let core = sub_proof_bytes(&sub_proofs, &file_public.pdp);
    let signature = keys.sign(&core);
    Ok(PossessionProof {
        prover: keys.public(),
        file_id: file_public.file_id(),
        sub_proofs,
        signature,
    })
}

/// Proves possession of several files at once under the same timestamp and
/// challenge size. Returns one proof per file, in input order.
pub fn prove_multi(
    files: &[(&FilePublicKey, &ChunkAssignment)],
    keys: &SigKeyPair,
    idstr: &IdentificationString,
    d: u64,
) -> Result<Vec<PossessionProof>, ProtocolError> {
    files
        .iter()
        .map(|(public, assignment)| prove(public, assignment, keys, idstr, d))
        .collect()
}

/// Checks one possession proof end to end: signature, placement, challenge
/// re-derivation, and every block-position aggregate. Returns the challenged
/// chunk indexes on success (the coverage a valid proof demonstrates),
/// `None` on any failure. Total: never panics or errors on adversarial
/// input.
pub fn verify_possession_detailed(
    file_public: &FilePublicKey,
    m: u64,
    proof: &PossessionProof,
    idstr: &IdentificationString,
    d: u64,
) -> Option<Vec<u64>> {
    if proof.file_id != file_public.file_id() {
        return None;
    }
    if proof.sub_proofs.len() != file_public.blocks_per_chunk as usize {
        return None;
    }
    let core = sub_proof_bytes(&proof.sub_proofs, &file_public.pdp);
    if !matches!(proof.prover.verify(&core, &proof.signature), Ok(true)) {
        return None;
    }
    let indexes = assignment_indexes(&proof.prover, file_public.chunk_count, m).ok()?;
    let chal = derive_challenge(file_public, &proof.prover, idstr, d, &indexes).ok()?;
    for (u, sub) in proof.sub_proofs.iter().enumerate() {
        let view = block_view(&chal, file_public.blocks_per_chunk, u as u32);
        if !pdp::pdp_checkproof(&file_public.pdp, &view, sub) {
            return None;
        }
    }
    Some(chal.indexes)
}

/// Boolean form of [`verify_possession_detailed`].
pub fn verify_possession(
    file_public: &FilePublicKey,
    m: u64,
    proof: &PossessionProof,
    idstr: &IdentificationString,
    d: u64,
) -> bool {
    verify_possession_detailed(file_public, m, proof, idstr, d).is_some()
}

/// One file under audit: its public key plus the placement and challenge
/// sizes agreed when it was stored.
#[derive(Debug, Clone)]
pub struct FileAudit {
    pub public: FilePublicKey,
    pub m: u64,
    pub d: u64,
}

/// A proof that passed verification, reduced to what reward accounting and
/// coverage tracking need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedProof {
    pub prover: SigPublicKey,
    pub file_id: Digest,
    /// The chunk indexes this proof demonstrated possession of.
    pub chunk_indexes: Vec<u64>,
}

/// Verifies a proposed chain extension against several files at once.
///
/// Checks, in order:
///   (i) the block's identification string is the expected one;
///  (ii) the block's leader matches it;
/// (iii) every prover is among the `min(k, |registry|)` elected nodes, and no
///       (prover, file) pair appears twice;
///  (iv) exactly `min(l, elected)` distinct provers answered, each covering
///       every file;
///   (v) every proof verifies cryptographically.
///
/// Returns the verified proofs on success, `None` on any violation. With no
/// files under audit, succeeds exactly when no proofs are attached.
pub fn verify_multi(
    files: &[FileAudit],
    registry: &[SigPublicKey],
    idstr: &IdentificationString,
    block: &Block,
    proofs: &[PossessionProof],
    k: u64,
    l: u64,
) -> Option<Vec<VerifiedProof>> {
    if block.idstr != *idstr || block.leader != idstr.leader {
        return None;
    }
    if files.is_empty() {
        return proofs.is_empty().then(Vec::new);
    }

    let k_eff = k.min(registry.len() as u64);
    let elected = elect(registry, idstr, k_eff).ok()?;
    let elected_keys: BTreeSet<&SigPublicKey> =
        elected.iter().map(|&p| &registry[p as usize]).collect();
    let l_eff = l.min(elected.len() as u64);

    if proofs.len() as u64 != l_eff * files.len() as u64 {
        return None;
    }

    let by_file: BTreeMap<Digest, &FileAudit> =
        files.iter().map(|f| (f.public.file_id(), f)).collect();
    if by_file.len() != files.len() {
        return None;
    }

    let mut seen: BTreeSet<(&SigPublicKey, Digest)> = BTreeSet::new();
    let mut provers: BTreeSet<&SigPublicKey> = BTreeSet::new();
    let mut verified = Vec::with_capacity(proofs.len());
    for proof in proofs {
        if !elected_keys.contains(&proof.prover) {
            return None;
        }
        if !seen.insert((&proof.prover, proof.file_id)) {
            return None;
        }
        provers.insert(&proof.prover);
        let audit = by_file.get(&proof.file_id)?;
        let chunk_indexes =
            verify_possession_detailed(&audit.public, audit.m, proof, idstr, audit.d)?;
        verified.push(VerifiedProof {
            prover: proof.prover.clone(),
            file_id: proof.file_id,
            chunk_indexes,
        });
    }
    // Exactly l_eff distinct provers, each covering every file.
    if provers.len() as u64 != l_eff || seen.len() != provers.len() * files.len() {
        return None;
    }
    Some(verified)
}

/// Single-file form of [`verify_multi`].
#[allow(clippy::too_many_arguments)]
pub fn verify_extension(
    file_public: &FilePublicKey,
    m: u64,
    registry: &[SigPublicKey],
    idstr: &IdentificationString,
    block: &Block,
    proofs: &[PossessionProof],
    d: u64,
    k: u64,
    l: u64,
) -> bool {
    let files = [FileAudit {
        public: file_public.clone(),
        m,
        d,
    }];
    verify_multi(&files, registry, idstr, block, proofs, k, l).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::Block;

    const TEST_BITS: u64 = 512;

    fn test_idstr(leader: &SigPublicKey, tag: u8) -> IdentificationString {
        IdentificationString {
            leader: leader.clone(),
            epoch_seed: crypto::hash(HashDomain::NodeSampling, &[tag; 4]),
            timestamp: tag as u64,
        }
    }

    fn pattern_file(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 31 + 7) as u8).collect()
    }

    /// Block whose header fields match the identification string; the
    /// transaction list is irrelevant to extension verification here.
    fn block_for(idstr: &IdentificationString) -> Block {
        Block {
            height: 1,
            previous: [0u8; DIGEST_LEN],
            leader: idstr.leader.clone(),
            idstr: idstr.clone(),
            transactions: Vec::new(),
        }
    }

    struct World {
        file: EncodedFile,
        registry: Vec<SigPublicKey>,
        node_keys: Vec<SigKeyPair>,
        assignments: Vec<ChunkAssignment>,
        m: u64,
    }

    /// Small but non-degenerate world: multi-block chunks, several nodes.
    fn build_world(n_nodes: usize, file_len: usize, chunk_size: u32, m: u64) -> World {
        let file = setup(&pattern_file(file_len), chunk_size, TEST_BITS, b"world-file").unwrap();
        let node_keys: Vec<SigKeyPair> = (0..n_nodes)
            .map(|i| sn_keygen(format!("world-node-{i}").as_bytes()))
            .collect();
        let registry: Vec<SigPublicKey> = node_keys.iter().map(|k| k.public()).collect();
        let assignments = registry
            .iter()
            .map(|pk| get_chunks(&file, pk, m).unwrap())
            .collect();
        World {
            file,
            registry,
            node_keys,
            assignments,
            m,
        }
    }

    #[test]
    fn setup_chunks_pads_and_tags() {
        let data = pattern_file(1000);
        let file = setup(&data, 300, TEST_BITS, b"pad").unwrap();
        let pk = &file.public;
        assert_eq!(pk.chunk_count, 4);
        assert_eq!(pk.file_len, 1000);
        // 512-bit modulus leaves 43 bytes per block: ceil(300 / 43) = 7.
        assert_eq!(pk.blocks_per_chunk, 7);
        assert_eq!(file.chunks.len(), 4);
        for chunk in &file.chunks {
            assert_eq!(chunk.data.len(), 300);
            assert_eq!(chunk.tags.len(), 7);
        }
        // Last chunk holds the 100 real bytes then zeros.
        assert_eq!(&file.chunks[3].data[..100], &data[900..]);
        assert!(file.chunks[3].data[100..].iter().all(|&b| b == 0));
        // Tag indexes are flat and unique across the file.
        let mut seen = BTreeSet::new();
        for (i, chunk) in file.chunks.iter().enumerate() {
            for (u, tag) in chunk.tags.iter().enumerate() {
                assert_eq!(tag.index, i as u64 * 7 + u as u64);
                assert!(seen.insert(tag.index));
            }
        }
        assert!(verify_file_tags(&file));
    }

    #[test]
    fn setup_rejects_empty_file_and_zero_chunk() {
        assert!(matches!(
            setup(b"", 64, TEST_BITS, b"x"),
            Err(ProtocolError::EmptyFile)
        ));
        assert!(matches!(
            setup(b"abc", 0, TEST_BITS, b"x"),
            Err(ProtocolError::BadChunkSize)
        ));
    }

    #[test]
    fn file_tag_scan_catches_one_flipped_byte() {
        let mut file = setup(&pattern_file(500), 100, TEST_BITS, b"scan").unwrap();
        assert!(verify_file_tags(&file));
        file.chunks[2].data[57] ^= 1;
        assert!(!verify_file_tags(&file));
    }

    #[test]
    fn encoded_file_roundtrips() {
        let file = setup(&pattern_file(700), 128, TEST_BITS, b"roundtrip").unwrap();
        let decoded = EncodedFile::decode(&file.encode()).unwrap();
        assert_eq!(decoded.public, file.public);
        assert_eq!(decoded.chunks, file.chunks);
    }

    #[test]
    fn file_public_key_rejects_inconsistent_geometry() {
        let file = setup(&pattern_file(700), 128, TEST_BITS, b"geom").unwrap();
        let mut pk = file.public.clone();
        pk.chunk_count += 1;
        assert!(FilePublicKey::decode(&pk.encode()).is_err());
        let mut pk = file.public.clone();
        pk.blocks_per_chunk += 1;
        assert!(FilePublicKey::decode(&pk.encode()).is_err());
    }

    #[test]
    fn assignment_is_deterministic_and_bounded() {
        let node = sn_keygen(b"assign").public();
        let a = assignment_indexes(&node, 100, 30).unwrap();
        let b = assignment_indexes(&node, 100, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|&i| i < 100));
        let distinct: BTreeSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert!(matches!(
            assignment_indexes(&node, 10, 11),
            Err(ProtocolError::AssignmentTooLarge { m: 11, n: 10 })
        ));
    }

    #[test]
    fn get_chunks_holds_exactly_the_assignment() {
        let world = build_world(3, 2000, 200, 6);
        let asg = &world.assignments[0];
        assert_eq!(asg.indexes.len(), 6);
        assert_eq!(asg.held.len(), 6);
        for &i in &asg.indexes {
            assert_eq!(asg.held[&i], world.file.chunks[i as usize]);
        }
    }

    #[test]
    fn election_is_deterministic_and_validates() {
        let world = build_world(8, 1000, 200, 3);
        let idstr = test_idstr(&world.registry[0], 1);
        let a = elect(&world.registry, &idstr, 5).unwrap();
        let b = elect(&world.registry, &idstr, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let distinct: BTreeSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 5);
        // Exhaustive election returns a permutation of all positions.
        let all = elect(&world.registry, &idstr, 8).unwrap();
        let positions: BTreeSet<_> = all.iter().collect();
        assert_eq!(positions.len(), 8);
        assert!(matches!(
            elect(&world.registry, &idstr, 9),
            Err(ProtocolError::ElectionTooLarge { k: 9, len: 8 })
        ));
        assert!(matches!(
            elect(&[], &idstr, 0),
            Err(ProtocolError::EmptyRegistry)
        ));
    }

    #[test]
    fn election_depends_on_the_identification_string() {
        let world = build_world(32, 1000, 200, 3);
        let a = elect(&world.registry, &test_idstr(&world.registry[0], 1), 8).unwrap();
        let mut idstr = test_idstr(&world.registry[0], 1);
        idstr.timestamp += 1;
        let b = elect(&world.registry, &idstr, 8).unwrap();
        assert_ne!(a, b, "one-field change must reshuffle the election");
    }

    #[test]
    fn challenge_binds_file_prover_and_timestamp() {
        let world = build_world(2, 4000, 250, 8);
        let idstr = test_idstr(&world.registry[0], 3);
        let asg = &world.assignments[0];
        let base =
            derive_challenge(&world.file.public, &world.registry[0], &idstr, 4, &asg.indexes)
                .unwrap();
        let same =
            derive_challenge(&world.file.public, &world.registry[0], &idstr, 4, &asg.indexes)
                .unwrap();
        assert_eq!(base.seed, same.seed);
        assert_eq!(base.indexes, same.indexes);
        assert_eq!(base.coefficients, same.coefficients);

        let other_prover =
            derive_challenge(&world.file.public, &world.registry[1], &idstr, 4, &asg.indexes)
                .unwrap();
        assert_ne!(base.seed, other_prover.seed);

        let mut later = idstr.clone();
        later.timestamp += 1;
        let other_ts =
            derive_challenge(&world.file.public, &world.registry[0], &later, 4, &asg.indexes)
                .unwrap();
        assert_ne!(base.seed, other_ts.seed);

        assert!(matches!(
            derive_challenge(&world.file.public, &world.registry[0], &idstr, 9, &asg.indexes),
            Err(ProtocolError::ChallengeTooLarge { d: 9, m: 8 })
        ));
    }

    #[test]
    fn challenged_positions_land_in_the_placement() {
        let world = build_world(1, 4000, 250, 8);
        let idstr = test_idstr(&world.registry[0], 4);
        let asg = &world.assignments[0];
        let chal =
            derive_challenge(&world.file.public, &world.registry[0], &idstr, 5, &asg.indexes)
                .unwrap();
        let placement: BTreeSet<_> = asg.indexes.iter().collect();
        assert_eq!(chal.indexes.len(), 5);
        for i in &chal.indexes {
            assert!(placement.contains(i));
        }
    }

    #[test]
    fn proof_roundtrip_accepts_and_reports_coverage() {
        let world = build_world(2, 3000, 300, 7);
        let idstr = test_idstr(&world.registry[1], 5);
        let proof = prove(
            &world.file.public,
            &world.assignments[0],
            &world.node_keys[0],
            &idstr,
            4,
        )
        .unwrap();
        let covered =
            verify_possession_detailed(&world.file.public, world.m, &proof, &idstr, 4).unwrap();
        assert_eq!(covered.len(), 4);
        let placement: BTreeSet<_> = world.assignments[0].indexes.iter().copied().collect();
        assert!(covered.iter().all(|i| placement.contains(i)));
        // Wire roundtrip preserves validity.
        let bytes = proof.encode(&world.file.public);
        let decoded = PossessionProof::decode(&bytes).unwrap();
        assert!(verify_possession(&world.file.public, world.m, &decoded, &idstr, 4));
    }

    #[test]
    fn proof_size_is_independent_of_placement_and_challenge_size() {
        let world = build_world(1, 6000, 300, 12);
        let idstr = test_idstr(&world.registry[0], 6);
        let sizes: BTreeSet<usize> = [2u64, 5, 12]
            .iter()
            .map(|&d| {
                prove(
                    &world.file.public,
                    &world.assignments[0],
                    &world.node_keys[0],
                    &idstr,
                    d,
                )
                .unwrap()
                .encode(&world.file.public)
                .len()
            })
            .collect();
        assert_eq!(sizes.len(), 1, "proof size must not vary with d");
    }

    #[test]
    fn missing_chunk_is_data_loss_not_a_bogus_proof() {
        let world = build_world(1, 3000, 300, 7);
        let idstr = test_idstr(&world.registry[0], 7);
        let chal = derive_challenge(
            &world.file.public,
            &world.registry[0],
            &idstr,
            4,
            &world.assignments[0].indexes,
        )
        .unwrap();
        let mut broken = world.assignments[0].clone();
        broken.held.remove(&chal.indexes[2]);
        let err = prove(&world.file.public, &broken, &world.node_keys[0], &idstr, 4).unwrap_err();
        assert!(matches!(err, ProtocolError::DataLoss { index } if index == chal.indexes[2]));
    }

    #[test]
    fn substituted_chunk_fails_verification() {
        let world = build_world(1, 3000, 300, 7);
        let idstr = test_idstr(&world.registry[0], 8);
        let chal = derive_challenge(
            &world.file.public,
            &world.registry[0],
            &idstr,
            4,
            &world.assignments[0].indexes,
        )
        .unwrap();
        // The node lost a chunk and stuffs another held chunk's bytes in
        // its place, relabeling the donor tags with the victim's indexes.
        let mut cheating = world.assignments[0].clone();
        let victim = chal.indexes[0];
        let donor = *cheating.held.keys().find(|&&i| i != victim).unwrap();
        let mut forged = cheating.held[&donor].clone();
        let bpc = world.file.public.blocks_per_chunk as u64;
        for (u, tag) in forged.tags.iter_mut().enumerate() {
            tag.index = victim * bpc + u as u64;
        }
        cheating.held.insert(victim, forged);
        let proof = prove(&world.file.public, &cheating, &world.node_keys[0], &idstr, 4).unwrap();
        assert!(!verify_possession(&world.file.public, world.m, &proof, &idstr, 4));
    }

    #[test]
    fn multi_file_proofs_verify_per_file() {
        let world = build_world(1, 3000, 300, 7);
        let file2 = setup(&pattern_file(2000), 300, TEST_BITS, b"second-file").unwrap();
        let asg2 = get_chunks(&file2, &world.registry[0], 5).unwrap();
        let idstr = test_idstr(&world.registry[0], 9);
        let proofs = prove_multi(
            &[
                (&world.file.public, &world.assignments[0]),
                (&file2.public, &asg2),
            ],
            &world.node_keys[0],
            &idstr,
            3,
        )
        .unwrap();
        assert_eq!(proofs.len(), 2);
        assert!(verify_possession(&world.file.public, 7, &proofs[0], &idstr, 3));
        assert!(verify_possession(&file2.public, 5, &proofs[1], &idstr, 3));
        // Proofs are bound to their file: swapped they fail.
        assert!(!verify_possession(&world.file.public, 7, &proofs[1], &idstr, 3));
        assert!(!verify_possession(&file2.public, 5, &proofs[0], &idstr, 3));
    }

    /// Full accept-then-mutate matrix for chain-extension verification.
    #[test]
    fn extension_verification_rejects_each_violation() {
        let world = build_world(6, 3000, 300, 7);
        let d = 4;
        let k = 4;
        let l = 2;
        let leader = world.registry[5].clone();
        let idstr = test_idstr(&leader, 10);
        let block = block_for(&idstr);
        let elected = elect(&world.registry, &idstr, k).unwrap();
        let first_two: Vec<usize> = elected.iter().take(2).map(|&p| p as usize).collect();
        let proofs: Vec<PossessionProof> = first_two
            .iter()
            .map(|&p| {
                prove(
                    &world.file.public,
                    &world.assignments[p],
                    &world.node_keys[p],
                    &idstr,
                    d,
                )
                .unwrap()
            })
            .collect();

        let ok = |proofs: &[PossessionProof], idstr: &IdentificationString, block: &Block| {
            verify_extension(
                &world.file.public,
                world.m,
                &world.registry,
                idstr,
                block,
                proofs,
                d,
                k,
                l,
            )
        };
        assert!(ok(&proofs, &idstr, &block), "honest extension must verify");

        // Wrong leader in the block header.
        let mut bad = block.clone();
        bad.leader = world.registry[0].clone();
        assert!(!ok(&proofs, &idstr, &bad));

        // Wrong identification string in the block header.
        let mut bad = block.clone();
        bad.idstr.timestamp += 1;
        assert!(!ok(&proofs, &idstr, &bad));

        // A proof from a non-elected node.
        let outsider = (0..world.registry.len())
            .find(|i| !elected.contains(&(*i as u32)))
            .unwrap();
        let outsider_proof = prove(
            &world.file.public,
            &world.assignments[outsider],
            &world.node_keys[outsider],
            &idstr,
            d,
        )
        .unwrap();
        let bad_proofs = vec![proofs[0].clone(), outsider_proof];
        assert!(!ok(&bad_proofs, &idstr, &block));

        // The same prover answering twice.
        let bad_proofs = vec![proofs[0].clone(), proofs[0].clone()];
        assert!(!ok(&bad_proofs, &idstr, &block));

        // Too few proofs.
        assert!(!ok(&proofs[..1], &idstr, &block));

        // A corrupted signature.
        let mut bad_proofs = proofs.clone();
        bad_proofs[1].signature[5] ^= 0x40;
        assert!(!ok(&bad_proofs, &idstr, &block));

        // A corrupted aggregate value.
        let mut bad_proofs = proofs.clone();
        bad_proofs[1].sub_proofs[0].aggregated_data += 1u32;
        assert!(!ok(&bad_proofs, &idstr, &block));

        // A proof computed for the wrong challenge size.
        let wrong_d: Vec<PossessionProof> = first_two
            .iter()
            .map(|&p| {
                prove(
                    &world.file.public,
                    &world.assignments[p],
                    &world.node_keys[p],
                    &idstr,
                    d + 1,
                )
                .unwrap()
            })
            .collect();
        assert!(!ok(&wrong_d, &idstr, &block));

        // Original inputs still verify after all that.
        assert!(ok(&proofs, &idstr, &block));
    }

    #[test]
    fn extension_with_no_files_accepts_only_empty_proof_sets() {
        let world = build_world(3, 1000, 200, 3);
        let idstr = test_idstr(&world.registry[0], 11);
        let block = block_for(&idstr);
        assert!(
            verify_multi(&[], &world.registry, &idstr, &block, &[], 2, 1).is_some()
        );
        let proof = prove(
            &world.file.public,
            &world.assignments[0],
            &world.node_keys[0],
            &idstr,
            2,
        )
        .unwrap();
        assert!(
            verify_multi(&[], &world.registry, &idstr, &block, &[proof], 2, 1).is_none()
        );
    }

    #[test]
    fn small_registry_shrinks_the_quorum() {
        // k and l both exceed the registry: every node is elected and all
        // must answer.
        let world = build_world(2, 1000, 200, 3);
        let idstr = test_idstr(&world.registry[0], 12);
        let block = block_for(&idstr);
        let proofs: Vec<PossessionProof> = (0..2)
            .map(|p| {
                prove(
                    &world.file.public,
                    &world.assignments[p],
                    &world.node_keys[p],
                    &idstr,
                    2,
                )
                .unwrap()
            })
            .collect();
        assert!(verify_extension(
            &world.file.public,
            world.m,
            &world.registry,
            &idstr,
            &block,
            &proofs,
            2,
            10,
            5,
        ));
        assert!(!verify_extension(
            &world.file.public,
            world.m,
            &world.registry,
            &idstr,
            &block,
            &proofs[..1],
            2,
            10,
            5,
        ));
    }

    #[test]
    fn identification_string_roundtrips() {
        let leader = sn_keygen(b"ids").public();
        let idstr = test_idstr(&leader, 13);
        let decoded = IdentificationString::decode(&idstr.encode()).unwrap();
        assert_eq!(decoded, idstr);
    }
}
