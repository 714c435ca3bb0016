//! The simulation engine: deterministic nodes, adversaries, latency, and
//! the per-timestamp proof race, driven on top of the real ledger.
//!
//! Every random quantity — node keys, file keys and contents, per-response
//! latency jitter, deleted-chunk selection — is a tagged hash of the master
//! seed, so a configuration maps to exactly one run. The two modes share
//! the whole pipeline (elections, challenge derivation, the latency race,
//! block acceptance, escrow accounting) and differ only in whether
//! possession proofs are actually computed and checked or bookkept from
//! the same challenge derivation; because file keys are derived identically
//! in both modes, the two produce byte-identical chains.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use crate::crypto::{self, tags, Digest, SigKeyPair, SigPublicKey};
use crate::ledger::{
    join_transaction, store_transaction, Ledger, LedgerParams, ProofCheck, StorePayload,
};
use crate::pdp::{pdp_keygen, pdp_verify_tag};
use crate::protocol::{
    self, ChunkAssignment, EncodedChunk, FilePublicKey, IdentificationString, PossessionProof,
    ProtocolError, VerifiedProof,
};

use super::{AdversaryKind, SimConfig, SimError, SimMode};

/// Why an elected node did not win a proof race.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Never responded: refusers, and nodes whose challenge hit a chunk
    /// they no longer have and cannot fake.
    Silent,
    /// Responded, but at least one of its proofs failed verification.
    Invalid,
    /// Responded with valid proofs after the winner quota was filled.
    Late,
}

/// Everything that happened in one timestamp's proof race.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceOutcome {
    pub timestamp: u64,
    /// Elected node ids, in election order. Empty when nothing was under
    /// audit this timestamp.
    pub elected: Vec<u64>,
    /// (node id, latency in microseconds) for every node that responded,
    /// in arrival order (ties broken by public key).
    pub responders: Vec<(u64, u64)>,
    /// The first `min(l, elected)` responders whose proofs all verified.
    pub winners: Vec<u64>,
    /// Elected non-winners, with the reason each was passed over.
    pub rejected: Vec<(u64, RejectReason)>,
    /// Whether a block was accepted this timestamp. False only when too
    /// few valid responses arrived to meet the winner quota.
    pub block_accepted: bool,
}

/// Per-node running totals across a simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    /// Timestamps at which the node was elected and challenged.
    pub elected: u64,
    /// Challenges it answered (validly or not).
    pub responses: u64,
    /// Races it won.
    pub wins: u64,
    /// Total rewards collected.
    pub rewards: u64,
    /// Challenges it was elected for but failed: silent or invalid.
    pub failures: u64,
}

/// Which chunks of one file have ever been covered by a winning proof.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    pub file_id: Digest,
    n: u64,
    bits: Vec<u64>,
    covered: u64,
    /// Coverage fraction after each timestamp, one entry per timestamp.
    pub history: Vec<f64>,
}

impl CoverageState {
    fn new(file_id: Digest, n: u64) -> Self {
        CoverageState {
            file_id,
            n,
            bits: vec![0; (n as usize).div_ceil(64)],
            covered: 0,
            history: Vec::new(),
        }
    }

    fn mark(&mut self, chunks: &[u64]) {
        for &c in chunks {
            let word = (c / 64) as usize;
            let bit = 1u64 << (c % 64);
            if self.bits[word] & bit == 0 {
                self.bits[word] |= bit;
                self.covered += 1;
            }
        }
    }

    fn record(&mut self) {
        self.history.push(self.fraction());
    }

    pub fn is_covered(&self, chunk: u64) -> bool {
        chunk < self.n && self.bits[(chunk / 64) as usize] & (1u64 << (chunk % 64)) != 0
    }

    /// Number of distinct chunks ever proven.
    pub fn covered(&self) -> u64 {
        self.covered
    }

    pub fn fraction(&self) -> f64 {
        self.covered as f64 / self.n as f64
    }
}

/// What a late joiner managed to recover when re-fetching its assignment
/// from the current holders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DealerReport {
    pub node: u64,
    pub timestamp: u64,
    /// Chunks successfully fetched and validated, across all files.
    pub fetched: u64,
    /// Holders that refused to serve, in id order. Each is marked faulty.
    pub refused_by: Vec<u64>,
    /// (file id, chunk index) pairs no live holder could supply.
    pub unrecoverable: Vec<(Digest, u64)>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub config: SimConfig,
    /// One per file, in file order.
    pub coverage: Vec<CoverageState>,
    /// One per node id.
    pub node_stats: Vec<NodeStats>,
    /// One per timestamp.
    pub races: Vec<RaceOutcome>,
    pub dealer_reports: Vec<DealerReport>,
    /// Node ids flagged faulty by the end of the run, in id order.
    pub faulty: Vec<u64>,
    pub blocks_accepted: u64,
    pub rewards_paid: u64,
    /// The accepted chain, one hex-encoded block per line.
    pub chain: String,
}

/// One node's copy of one file: the placement (with actual chunk data in
/// full-crypto mode) plus which of those chunks are damaged — deleted,
/// corrupted, or never recovered.
struct Holding {
    assignment: ChunkAssignment,
    damaged: BTreeSet<u64>,
}

struct SimFile {
    public: FilePublicKey,
    /// Indexed by node id; `None` until the node has joined and fetched.
    holdings: Vec<Option<Holding>>,
}

/// A deterministic in-memory network: storage nodes with behaviors and
/// latencies, files under escrowed audit contracts, and the ledger that
/// arbitrates every timestamp.
pub struct Simulation {
    config: SimConfig,
    ledger: Ledger,
    bc_keys: SigKeyPair,
    node_keys: Vec<SigKeyPair>,
    node_pks: Vec<SigPublicKey>,
    id_of: BTreeMap<SigPublicKey, u64>,
    behaviors: Vec<AdversaryKind>,
    base_ms: Vec<f64>,
    joined: Vec<bool>,
    files: Vec<SimFile>,
    file_of: BTreeMap<Digest, usize>,
    coverage: Vec<CoverageState>,
    node_stats: Vec<NodeStats>,
    races: Vec<RaceOutcome>,
    dealer_reports: Vec<DealerReport>,
    /// timestamp -> node ids joining at its start.
    scheduled_joins: BTreeMap<u64, Vec<u64>>,
    ticks_run: u64,
    blocks_accepted: u64,
    rewards_paid: u64,
}

/// Domain-separated sub-seed of the master seed.
fn sub_seed(tag: u8, master: &[u8], label: &[u8], index: u64) -> Digest {
    let mut input = Vec::with_capacity(master.len() + label.len() + 8);
    input.extend_from_slice(master);
    input.extend_from_slice(label);
    input.extend_from_slice(&index.to_be_bytes());
    crypto::tagged_hash(tag, &input)
}

/// Deterministic pseudorandom file contents: a counter-mode hash stream.
fn file_bytes(seed: &Digest, len: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(len as usize);
    let mut counter: u64 = 0;
    while (out.len() as u64) < len {
        let mut input = Vec::with_capacity(seed.len() + 8);
        input.extend_from_slice(seed);
        input.extend_from_slice(&counter.to_be_bytes());
        out.extend_from_slice(&crypto::tagged_hash(tags::FILE_BYTES, &input));
        counter += 1;
    }
    out.truncate(len as usize);
    out
}

/// Uniform in [0, 1) from the top 53 bits of a hash word.
fn uniform(v: u64) -> f64 {
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn word(h: &Digest, at: usize) -> u64 {
    u64::from_be_bytes(h[at..at + 8].try_into().unwrap())
}

/// Whether damaged chunks are answered with forged values (which verify
/// false) rather than silence.
fn forges_damage(kind: &AdversaryKind) -> bool {
    matches!(kind, AdversaryKind::Deleter { forge: true, .. })
}

/// Checks every tag of one fetched chunk against its bytes — what an
/// honest node does before accepting a repair from another holder.
fn chunk_tags_valid(public: &FilePublicKey, index: u64, chunk: &EncodedChunk) -> bool {
    if chunk.data.len() != public.chunk_size as usize
        || chunk.tags.len() != public.blocks_per_chunk as usize
    {
        return false;
    }
    let cap = public.pdp.chunk_capacity_bytes();
    if cap == 0 {
        return false;
    }
    let bpc = public.blocks_per_chunk as u64;
    for u in 0..public.blocks_per_chunk as usize {
        let bstart = u * cap;
        let bend = usize::min(bstart + cap, public.chunk_size as usize);
        let flat = index * bpc + u as u64;
        if !pdp_verify_tag(&public.pdp, flat, &chunk.data[bstart..bend], &chunk.tags[u]) {
            return false;
        }
    }
    true
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let master_seed = config.master_seed.clone();
        let master = master_seed.as_slice();

        let bc_keys = protocol::bc_keygen(&sub_seed(tags::NODE_SEED, master, b"bc", 0));
        let funder_keys = crypto::sig_keygen(&sub_seed(tags::NODE_SEED, master, b"funder", 0));

        let mut node_keys = Vec::with_capacity(config.node_count as usize);
        let mut node_pks = Vec::with_capacity(config.node_count as usize);
        let mut id_of = BTreeMap::new();
        let mut base_ms = Vec::with_capacity(config.node_count as usize);
        for i in 0..config.node_count {
            let keys = protocol::sn_keygen(&sub_seed(tags::NODE_SEED, master, b"node", i));
            let pk = keys.public();
            let base = sub_seed(tags::JITTER, master, b"base", i);
            base_ms.push(config.latency.base_ms + config.latency.base_spread_ms * uniform(word(&base, 0)));
            id_of.insert(pk, i);
            node_pks.push(pk);
            node_keys.push(keys);
        }
        if id_of.len() != config.node_count as usize {
            return Err(SimError::Config("node key collision".into()));
        }

        let mut behaviors = vec![AdversaryKind::Honest; config.node_count as usize];
        for (id, kind) in &config.adversaries {
            behaviors[*id as usize] = *kind;
        }

        // Joining at timestamp 0 is genesis membership.
        let mut scheduled_joins: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        let mut late: BTreeSet<u64> = BTreeSet::new();
        for (id, at) in &config.late_joins {
            if *at > 0 {
                late.insert(*id);
                scheduled_joins.entry(*at).or_default().push(*id);
            }
        }
        for ids in scheduled_joins.values_mut() {
            ids.sort_unstable();
        }
        if late.len() == config.node_count as usize {
            return Err(SimError::Config(
                "at least one node must be present at genesis".into(),
            ));
        }

        let escrow_per_file = config
            .duration
            .checked_mul(config.alpha)
            .ok_or_else(|| SimError::Config("duration * alpha overflows".into()))?;
        let total_funds = escrow_per_file
            .checked_mul(config.file_count)
            .ok_or_else(|| SimError::Config("total escrow overflows".into()))?;

        let ledger = Ledger::new(
            LedgerParams {
                k: config.k,
                l: config.l,
            },
            vec![bc_keys.public()],
            &[(funder_keys.public(), total_funds)],
            &sub_seed(tags::ORACLE, master, b"beacon", 0),
        )?;

        let mut sim = Simulation {
            behaviors,
            base_ms,
            joined: vec![false; config.node_count as usize],
            files: Vec::with_capacity(config.file_count as usize),
            file_of: BTreeMap::new(),
            coverage: Vec::with_capacity(config.file_count as usize),
            node_stats: vec![NodeStats::default(); config.node_count as usize],
            races: Vec::new(),
            dealer_reports: Vec::new(),
            scheduled_joins,
            ticks_run: 0,
            blocks_accepted: 0,
            rewards_paid: 0,
            bc_keys,
            node_keys,
            node_pks,
            id_of,
            ledger,
            config,
        };

        // Build the files. Both modes derive the tag-scheme keypair from
        // the same seed, so the public key — and with it every challenge
        // seed — is identical across modes. Only full_crypto materializes
        // chunk bytes and tags.
        let config = sim.config.clone();
        let file_len = config.n * config.chunk_size as u64;
        for j in 0..config.file_count {
            let key_seed = sub_seed(tags::KEYGEN, master, b"file", j);
            let (public, encoded) = match config.mode {
                SimMode::FullCrypto => {
                    let content_seed = sub_seed(tags::FILE_BYTES, master, b"file", j);
                    let bytes = file_bytes(&content_seed, file_len);
                    let encoded =
                        protocol::setup(&bytes, config.chunk_size, config.modulus_bits, &key_seed)?;
                    (encoded.public.clone(), Some(encoded))
                }
                SimMode::CoverageOnly => {
                    let keys = pdp_keygen(config.modulus_bits, &key_seed)?;
                    let cap = keys.public().chunk_capacity_bytes() as u64;
                    let public = FilePublicKey {
                        pdp: keys.public().clone(),
                        chunk_count: config.n,
                        chunk_size: config.chunk_size,
                        file_len,
                        blocks_per_chunk: (config.chunk_size as u64).div_ceil(cap) as u32,
                    };
                    (public, None)
                }
            };

            let mut holdings: Vec<Option<Holding>> = Vec::with_capacity(config.node_count as usize);
            for id in 0..config.node_count {
                if late.contains(&id) {
                    holdings.push(None);
                    continue;
                }
                let assignment = match &encoded {
                    Some(file) => protocol::get_chunks(file, &sim.node_pks[id as usize], config.m)?,
                    None => ChunkAssignment {
                        node: sim.node_pks[id as usize],
                        indexes: protocol::assignment_indexes(
                            &sim.node_pks[id as usize],
                            config.n,
                            config.m,
                        )?,
                        held: BTreeMap::new(),
                    },
                };
                let mut holding = Holding {
                    assignment,
                    damaged: BTreeSet::new(),
                };
                sim.apply_deletion(&public, id, &mut holding)?;
                holdings.push(Some(holding));
            }

            sim.file_of.insert(public.file_id(), j as usize);
            sim.coverage.push(CoverageState::new(public.file_id(), config.n));
            sim.files.push(SimFile { public, holdings });
        }
        if sim.file_of.len() != config.file_count as usize {
            return Err(SimError::Config("file id collision".into()));
        }

        // Bootstrap block: genesis joins and all storage contracts. Audits
        // begin at the next timestamp.
        for id in 0..config.node_count {
            if !late.contains(&id) {
                sim.ledger
                    .submit_join(join_transaction(&sim.node_keys[id as usize], id))?;
                sim.joined[id as usize] = true;
            }
        }
        for (j, file) in sim.files.iter().enumerate() {
            let payload = StorePayload {
                funder: funder_keys.public(),
                file_public: file.public.clone(),
                m: config.m,
                d: config.d,
                duration: config.duration,
                alpha: config.alpha,
                funds: escrow_per_file,
                nonce: j as u64,
            };
            sim.ledger
                .submit_store(store_transaction(&funder_keys, payload))?;
        }
        let idstr = sim.ledger.advance_timestamp();
        let block = sim.ledger.build_block(&idstr, Vec::new());
        let check = match config.mode {
            SimMode::FullCrypto => ProofCheck::Full(&[]),
            SimMode::CoverageOnly => ProofCheck::Bookkeeping(&[]),
        };
        sim.ledger.try_accept(&block, check)?;
        sim.blocks_accepted += 1;

        Ok(sim)
    }

    /// Marks the deleter's chosen fraction of this holding as damaged; in
    /// full-crypto mode also corrupts (forge) or drops (refuse) the bytes.
    fn apply_deletion(
        &self,
        public: &FilePublicKey,
        id: u64,
        holding: &mut Holding,
    ) -> Result<(), SimError> {
        let AdversaryKind::Deleter { fraction, forge } = self.behaviors[id as usize] else {
            return Ok(());
        };
        let m = holding.assignment.indexes.len() as u64;
        let count = ((fraction * m as f64).round() as u64).min(m);
        let mut input = self.config.master_seed.clone();
        input.extend_from_slice(&public.file_id());
        input.extend_from_slice(self.node_pks[id as usize].as_bytes());
        let positions = crypto::sample_indices(tags::DELETION, &input, m, count)
            .map_err(ProtocolError::from)?;
        for p in positions {
            let chunk = holding.assignment.indexes[p as usize];
            holding.damaged.insert(chunk);
            if self.config.mode == SimMode::FullCrypto {
                if forge {
                    if let Some(held) = holding.assignment.held.get_mut(&chunk) {
                        held.data[0] ^= 0xa5;
                    }
                } else {
                    holding.assignment.held.remove(&chunk);
                }
            }
        }
        Ok(())
    }

    /// Response latency of a node at a timestamp: per-node base, plus
    /// log-normal jitter drawn from the (seed, timestamp, node) hash, plus
    /// the outsourcer's fetch penalty. Rounded to whole microseconds so
    /// ordering is exact.
    fn latency_us(&self, idstr: &IdentificationString, id: u64) -> u64 {
        let lm = &self.config.latency;
        let mut input = self.config.master_seed.clone();
        input.extend_from_slice(&idstr.encode());
        input.extend_from_slice(self.node_pks[id as usize].as_bytes());
        let h = crypto::tagged_hash(tags::JITTER, &input);
        // Box-Muller on two hash-derived uniforms; u1 is nudged into (0, 1].
        let u1 = ((word(&h, 0) >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let u2 = uniform(word(&h, 8));
        let z = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        let jitter = lm.jitter_median_ms * (lm.jitter_sigma * z).exp();
        let extra = match self.behaviors[id as usize] {
            AdversaryKind::Outsourcer { extra_ms } => extra_ms,
            _ => 0.0,
        };
        ((self.base_ms[id as usize] + jitter + extra) * 1000.0).round() as u64
    }

    /// Runs one timestamp: due joins, election, the proof race, and block
    /// acceptance. Returns what happened in the race.
    pub fn tick(&mut self) -> Result<&RaceOutcome, SimError> {
        self.ticks_run += 1;
        let now = self.ticks_run;
        if let Some(ids) = self.scheduled_joins.remove(&now) {
            for id in ids {
                self.process_late_join(id, now)?;
            }
        }

        let idstr = self.ledger.advance_timestamp();
        let audits = self.ledger.active_audits();
        let registry = self.ledger.registry();

        let mut outcome = RaceOutcome {
            timestamp: now,
            elected: Vec::new(),
            responders: Vec::new(),
            winners: Vec::new(),
            rejected: Vec::new(),
            block_accepted: false,
        };

        if audits.is_empty() {
            // Nothing to audit: the chain still advances, carrying any
            // pending registry and contract changes.
            let block = self.ledger.build_block(&idstr, Vec::new());
            let check = match self.config.mode {
                SimMode::FullCrypto => ProofCheck::Full(&[]),
                SimMode::CoverageOnly => ProofCheck::Bookkeeping(&[]),
            };
            self.ledger.try_accept(&block, check)?;
            self.blocks_accepted += 1;
            outcome.block_accepted = true;
            return self.finish_tick(outcome);
        }

        let k_eff = self.config.k.min(registry.len() as u64);
        let elected = protocol::elect(&registry, &idstr, k_eff)?;
        let l_eff = self.config.l.min(elected.len() as u64);

        // Each elected node answers every audited file, or doesn't.
        struct Response {
            id: u64,
            latency_us: u64,
            valid: bool,
            proofs: Vec<PossessionProof>,
            verified: Vec<VerifiedProof>,
        }
        let mut responses: Vec<Response> = Vec::new();
        let mut to_flag: Vec<u64> = Vec::new();
        for &pos in &elected {
            let pk = registry[pos as usize];
            let id = self.id_of[&pk];
            outcome.elected.push(id);
            self.node_stats[id as usize].elected += 1;

            if matches!(self.behaviors[id as usize], AdversaryKind::Refuser) {
                outcome.rejected.push((id, RejectReason::Silent));
                self.node_stats[id as usize].failures += 1;
                to_flag.push(id);
                continue;
            }

            let mut silent = false;
            let mut valid = true;
            let mut proofs = Vec::new();
            let mut verified = Vec::new();
            for audit in &audits {
                let fi = self.file_of[&audit.public.file_id()];
                let holding = self.files[fi].holdings[id as usize]
                    .as_ref()
                    .expect("elected nodes have joined and hold an assignment");
                match self.config.mode {
                    SimMode::FullCrypto => {
                        match protocol::prove(
                            &audit.public,
                            &holding.assignment,
                            &self.node_keys[id as usize],
                            &idstr,
                            audit.d,
                        ) {
                            Ok(proof) => {
                                match protocol::verify_possession_detailed(
                                    &audit.public,
                                    audit.m,
                                    &proof,
                                    &idstr,
                                    audit.d,
                                ) {
                                    Some(chunk_indexes) => verified.push(VerifiedProof {
                                        prover: pk,
                                        file_id: audit.public.file_id(),
                                        chunk_indexes,
                                    }),
                                    None => valid = false,
                                }
                                proofs.push(proof);
                            }
                            Err(ProtocolError::DataLoss { .. }) => {
                                silent = true;
                                break;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    SimMode::CoverageOnly => {
                        let chal = protocol::derive_challenge(
                            &audit.public,
                            &pk,
                            &idstr,
                            audit.d,
                            &holding.assignment.indexes,
                        )?;
                        let hit = chal.indexes.iter().any(|i| holding.damaged.contains(i));
                        if hit {
                            if forges_damage(&self.behaviors[id as usize]) {
                                valid = false;
                            } else {
                                silent = true;
                                break;
                            }
                        }
                        verified.push(VerifiedProof {
                            prover: pk,
                            file_id: audit.public.file_id(),
                            chunk_indexes: chal.indexes,
                        });
                    }
                }
            }

            if silent {
                outcome.rejected.push((id, RejectReason::Silent));
                self.node_stats[id as usize].failures += 1;
                continue;
            }
            self.node_stats[id as usize].responses += 1;
            responses.push(Response {
                id,
                latency_us: self.latency_us(&idstr, id),
                valid,
                proofs,
                verified,
            });
        }

        responses.sort_by(|a, b| {
            (a.latency_us, &self.node_pks[a.id as usize])
                .cmp(&(b.latency_us, &self.node_pks[b.id as usize]))
        });

        let mut winner_proofs: Vec<PossessionProof> = Vec::new();
        let mut winner_verified: Vec<VerifiedProof> = Vec::new();
        for response in &responses {
            outcome.responders.push((response.id, response.latency_us));
            if !response.valid {
                outcome.rejected.push((response.id, RejectReason::Invalid));
                self.node_stats[response.id as usize].failures += 1;
            } else if (outcome.winners.len() as u64) < l_eff {
                outcome.winners.push(response.id);
                winner_proofs.extend(response.proofs.iter().cloned());
                winner_verified.extend(response.verified.iter().cloned());
            } else {
                outcome.rejected.push((response.id, RejectReason::Late));
            }
        }

        if (outcome.winners.len() as u64) == l_eff && l_eff > 0 {
            let rewards = self
                .ledger
                .reward_transactions(&winner_verified, &self.bc_keys);
            let block = self.ledger.build_block(&idstr, rewards);
            let check = match self.config.mode {
                SimMode::FullCrypto => ProofCheck::Full(&winner_proofs),
                SimMode::CoverageOnly => ProofCheck::Bookkeeping(&winner_verified),
            };
            let accepted = self.ledger.try_accept(&block, check)?;
            self.blocks_accepted += 1;
            outcome.block_accepted = true;
            let unit = self.config.alpha / self.config.l;
            for vp in &accepted {
                self.coverage[self.file_of[&vp.file_id]].mark(&vp.chunk_indexes);
                self.node_stats[self.id_of[&vp.prover] as usize].rewards += unit;
                self.rewards_paid += unit;
            }
            for &id in &outcome.winners {
                self.node_stats[id as usize].wins += 1;
            }
        }

        // Refusals are flagged only after the block settles, so the
        // registry the validators elected against is the one used above.
        for id in to_flag {
            self.ledger.mark_faulty(&self.node_pks[id as usize]);
        }
        self.finish_tick(outcome)
    }

    fn finish_tick(&mut self, outcome: RaceOutcome) -> Result<&RaceOutcome, SimError> {
        for cov in &mut self.coverage {
            cov.record();
        }
        self.races.push(outcome);
        Ok(self.races.last().unwrap())
    }

    /// A node joins after genesis: it submits a join transaction, derives
    /// its placement, and fetches each assigned chunk from current holders
    /// in node-id order. Refusing holders are flagged faulty; chunks no
    /// holder can supply are recorded as unrecoverable and stay damaged
    /// for the joiner.
    fn process_late_join(&mut self, id: u64, now: u64) -> Result<(), SimError> {
        let pk = self.node_pks[id as usize];
        self.ledger
            .submit_join(join_transaction(&self.node_keys[id as usize], id))?;
        self.joined[id as usize] = true;

        let mut report = DealerReport {
            node: id,
            timestamp: now,
            fetched: 0,
            refused_by: Vec::new(),
            unrecoverable: Vec::new(),
        };
        let mut refused: BTreeSet<u64> = BTreeSet::new();

        for fi in 0..self.files.len() {
            let public = self.files[fi].public.clone();
            let indexes = protocol::assignment_indexes(&pk, public.chunk_count, self.config.m)?;

            // chunk -> holder ids, in node-id order.
            let mut holder_map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for (hid, holding) in self.files[fi].holdings.iter().enumerate() {
                let (true, Some(holding)) = (self.joined[hid], holding) else {
                    continue;
                };
                for &c in &holding.assignment.indexes {
                    holder_map.entry(c).or_default().push(hid as u64);
                }
            }

            let mut held: BTreeMap<u64, EncodedChunk> = BTreeMap::new();
            let mut damaged: BTreeSet<u64> = BTreeSet::new();
            for &c in &indexes {
                let mut got = false;
                for &hid in holder_map.get(&c).map(Vec::as_slice).unwrap_or(&[]) {
                    if matches!(self.behaviors[hid as usize], AdversaryKind::Refuser) {
                        refused.insert(hid);
                        continue;
                    }
                    let holder = self.files[fi].holdings[hid as usize].as_ref().unwrap();
                    match self.config.mode {
                        SimMode::FullCrypto => {
                            // Serve whatever bytes the holder has; the
                            // joiner validates the tags before accepting.
                            let Some(chunk) = holder.assignment.held.get(&c) else {
                                continue;
                            };
                            if chunk_tags_valid(&public, c, chunk) {
                                held.insert(c, chunk.clone());
                                got = true;
                                break;
                            }
                        }
                        SimMode::CoverageOnly => {
                            if !holder.damaged.contains(&c) {
                                got = true;
                                break;
                            }
                        }
                    }
                }
                if got {
                    report.fetched += 1;
                } else {
                    report.unrecoverable.push((public.file_id(), c));
                    damaged.insert(c);
                }
            }

            let mut holding = Holding {
                assignment: ChunkAssignment {
                    node: pk,
                    indexes,
                    held,
                },
                damaged,
            };
            // A late-joining deleter still deletes its configured share.
            self.apply_deletion(&public, id, &mut holding)?;
            self.files[fi].holdings[id as usize] = Some(holding);
        }

        for &hid in &refused {
            self.ledger.mark_faulty(&self.node_pks[hid as usize]);
        }
        report.refused_by = refused.into_iter().collect();
        self.dealer_reports.push(report);
        Ok(())
    }

    /// Runs the remaining timestamps up to the configured maximum.
    pub fn run(&mut self) -> Result<(), SimError> {
        while self.ticks_run < self.config.max_timestamps {
            self.tick()?;
        }
        Ok(())
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn coverage(&self) -> &[CoverageState] {
        &self.coverage
    }

    pub fn node_stats(&self) -> &[NodeStats] {
        &self.node_stats
    }

    pub fn races(&self) -> &[RaceOutcome] {
        &self.races
    }

    pub fn node_key(&self, id: u64) -> &SigPublicKey {
        &self.node_pks[id as usize]
    }

    pub fn consume(self) -> SimResult {
        let faulty = (0..self.config.node_count)
            .filter(|&id| self.ledger.is_faulty(&self.node_pks[id as usize]))
            .collect();
        SimResult {
            chain: self.ledger.export_chain(),
            faulty,
            config: self.config,
            coverage: self.coverage,
            node_stats: self.node_stats,
            races: self.races,
            dealer_reports: self.dealer_reports,
            blocks_accepted: self.blocks_accepted,
            rewards_paid: self.rewards_paid,
        }
    }
}

/// Builds the network, runs every timestamp, and returns the results.
pub fn run_simulation(config: SimConfig) -> Result<SimResult, SimError> {
    let mut sim = Simulation::new(config)?;
    sim.run()?;
    Ok(sim.consume())
}

/// One adversarial node's bottom line across a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryStats {
    pub node: u64,
    pub kind: AdversaryKind,
    /// Audits it was elected for.
    pub elected: u64,
    /// Audits it failed (silent or invalid).
    pub failures: u64,
    /// failures / elected; 0 when never elected.
    pub failure_rate: f64,
    pub rewards: u64,
    /// Share of all rewards paid in the run; 0 when none were paid.
    pub reward_share: f64,
    pub flagged_faulty: bool,
}

/// Outcome summary for every configured adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryReport {
    pub total_rewards: u64,
    pub stats: Vec<AdversaryStats>,
}

pub fn adversary_report(result: &SimResult) -> AdversaryReport {
    let total = result.rewards_paid;
    let stats = result
        .config
        .adversaries
        .iter()
        .map(|&(node, kind)| {
            let s = &result.node_stats[node as usize];
            AdversaryStats {
                node,
                kind,
                elected: s.elected,
                failures: s.failures,
                failure_rate: if s.elected == 0 {
                    0.0
                } else {
                    s.failures as f64 / s.elected as f64
                },
                rewards: s.rewards,
                reward_share: if total == 0 {
                    0.0
                } else {
                    s.rewards as f64 / total as f64
                },
                flagged_faulty: result.faulty.contains(&node),
            }
        })
        .collect();
    AdversaryReport {
        total_rewards: total,
        stats,
    }
}
