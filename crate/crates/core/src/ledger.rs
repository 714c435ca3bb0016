//! Append-only ledger with escrow-backed storage contracts.
//!
//! The ledger tracks four things: the storage-node registry, account
//! balances, per-file escrows, and the block chain itself. Time advances in
//! discrete timestamps; each timestamp a randomness beacon seeds the leader
//! election and, through the identification string, the storage-node
//! election and every challenge. A block is accepted only if it carries
//! exactly the pending transactions plus one reward per (audited file,
//! winning prover) pair, each reward worth the file's fixed per-proof
//! amount, justified either by verifying the attached possession proofs or
//! by the caller's own bookkeeping (for simulations that skip the
//! arithmetic but keep the accounting honest).

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{self, tags, Digest, SigKeyPair, SigPublicKey, DIGEST_LEN};
use crate::protocol::{
    self, FileAudit, FilePublicKey, IdentificationString, PossessionProof, VerifiedProof,
};
use crate::wire::{Reader, WireError, Writer};
use thiserror::Error;

/// Errors from ledger operations. Block rejection reasons are collapsed
/// into [`LedgerError::Rejected`] with a human-readable cause.
#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger requires at least one blockchain node")]
    NoBlockchainNodes,
    #[error("invalid ledger parameters: {0}")]
    BadParams(&'static str),
    #[error("join: node is already registered or queued")]
    DuplicateNode,
    #[error("store: file is already registered or queued")]
    DuplicateFile,
    #[error("store: funds {funds} do not cover duration {duration} at rate {alpha}")]
    EscrowMismatch {
        funds: u64,
        duration: u64,
        alpha: u64,
    },
    #[error("store: reward rate {alpha} is not divisible by the winner quota {quota}")]
    AlphaNotDivisible { alpha: u64, quota: u64 },
    #[error("store: funder balance {balance} cannot cover the escrow {needed}")]
    InsufficientFunds { balance: u64, needed: u64 },
    #[error("store: {0}")]
    InvalidStore(&'static str),
    #[error("transaction signature is invalid")]
    BadSignature,
    #[error("transaction kind does not match the submission endpoint")]
    WrongKind,
    #[error("no open timestamp: advance the clock before proposing a block")]
    NoOpenTimestamp,
    #[error("block rejected: {0}")]
    Rejected(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Global protocol parameters fixed at genesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerParams {
    /// Number of storage nodes elected per timestamp.
    pub k: u64,
    /// Number of winning proofs rewarded per file per timestamp.
    pub l: u64,
}

/// Payload of a storage contract: who pays, what is stored, and the audit
/// and reward schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorePayload {
    pub funder: SigPublicKey,
    pub file_public: FilePublicKey,
    /// Chunks placed on each storage node.
    pub m: u64,
    /// Chunks challenged per audit.
    pub d: u64,
    /// Contract lifetime in successful audit rounds.
    pub duration: u64,
    /// Total reward released per successful round.
    pub alpha: u64,
    /// Escrowed amount; must equal `duration * alpha`.
    pub funds: u64,
    pub nonce: u64,
}

impl StorePayload {
    fn encode_into(&self, w: &mut Writer) {
        w.raw(self.funder.as_bytes());
        self.file_public.encode_into(w);
        w.u64(self.m);
        w.u64(self.d);
        w.u64(self.duration);
        w.u64(self.alpha);
        w.u64(self.funds);
        w.u64(self.nonce);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let funder = SigPublicKey::from_bytes(r.raw(32)?)
            .map_err(|_| WireError::Malformed("store funder key"))?;
        let file_public = FilePublicKey::decode_from(r)?;
        Ok(StorePayload {
            funder,
            file_public,
            m: r.u64()?,
            d: r.u64()?,
            duration: r.u64()?,
            alpha: r.u64()?,
            funds: r.u64()?,
            nonce: r.u64()?,
        })
    }

    pub fn file_id(&self) -> Digest {
        self.file_public.file_id()
    }
}

const TX_JOIN: u8 = 1;
const TX_STORE: u8 = 2;
const TX_REWARD: u8 = 3;

/// A ledger transaction. `Join` and `Store` are user-submitted and signed
/// by their author; `Reward` is leader-authored inside a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transaction {
    Join {
        node: SigPublicKey,
        nonce: u64,
        signature: Vec<u8>,
    },
    Store {
        payload: StorePayload,
        signature: Vec<u8>,
    },
    Reward {
        file_id: Digest,
        to: SigPublicKey,
        amount: u64,
        nonce: u64,
        signature: Vec<u8>,
    },
}

impl Transaction {
    /// The bytes the author signs: everything except the signature itself.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Transaction::Join { node, nonce, .. } => {
                w.u8(TX_JOIN);
                w.raw(node.as_bytes());
                w.u64(*nonce);
            }
            Transaction::Store { payload, .. } => {
                w.u8(TX_STORE);
                payload.encode_into(&mut w);
            }
            Transaction::Reward {
                file_id,
                to,
                amount,
                nonce,
                ..
            } => {
                w.u8(TX_REWARD);
                w.raw(file_id);
                w.raw(to.as_bytes());
                w.u64(*amount);
                w.u64(*nonce);
            }
        }
        w.finish()
    }

    fn signature(&self) -> &[u8] {
        match self {
            Transaction::Join { signature, .. }
            | Transaction::Store { signature, .. }
            | Transaction::Reward { signature, .. } => signature,
        }
    }

    /// The key expected to have signed this transaction. Rewards are signed
    /// by the block leader, which is not part of the transaction.
    fn author(&self) -> Option<&SigPublicKey> {
        match self {
            Transaction::Join { node, .. } => Some(node),
            Transaction::Store { payload, .. } => Some(&payload.funder),
            Transaction::Reward { .. } => None,
        }
    }

    fn verify_author(&self) -> bool {
        match self.author() {
            Some(key) => matches!(
                key.verify(&self.signing_bytes(), self.signature()),
                Ok(true)
            ),
            None => true,
        }
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.raw(&self.signing_bytes());
        w.bytes(self.signature());
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let kind = r.u8()?;
        let tx = match kind {
            TX_JOIN => {
                let node = SigPublicKey::from_bytes(r.raw(32)?)
                    .map_err(|_| WireError::Malformed("join node key"))?;
                let nonce = r.u64()?;
                Transaction::Join {
                    node,
                    nonce,
                    signature: Vec::new(),
                }
            }
            TX_STORE => {
                let payload = StorePayload::decode_from(r)?;
                Transaction::Store {
                    payload,
                    signature: Vec::new(),
                }
            }
            TX_REWARD => {
                let mut file_id = [0u8; DIGEST_LEN];
                file_id.copy_from_slice(r.raw(DIGEST_LEN)?);
                let to = SigPublicKey::from_bytes(r.raw(32)?)
                    .map_err(|_| WireError::Malformed("reward beneficiary key"))?;
                let amount = r.u64()?;
                let nonce = r.u64()?;
                Transaction::Reward {
                    file_id,
                    to,
                    amount,
                    nonce,
                    signature: Vec::new(),
                }
            }
            _ => return Err(WireError::Malformed("unknown transaction kind")),
        };
        let signature = r.bytes()?.to_vec();
        Ok(match tx {
            Transaction::Join { node, nonce, .. } => Transaction::Join {
                node,
                nonce,
                signature,
            },
            Transaction::Store { payload, .. } => Transaction::Store { payload, signature },
            Transaction::Reward {
                file_id,
                to,
                amount,
                nonce,
                ..
            } => Transaction::Reward {
                file_id,
                to,
                amount,
                nonce,
                signature,
            },
        })
    }
}

/// Signs a registry-join transaction with the joining node's own key.
pub fn join_transaction(keys: &SigKeyPair, nonce: u64) -> Transaction {
    let mut tx = Transaction::Join {
        node: keys.public(),
        nonce,
        signature: Vec::new(),
    };
    let sig = keys.sign(&tx.signing_bytes());
    if let Transaction::Join { signature, .. } = &mut tx {
        *signature = sig;
    }
    tx
}

/// Signs a storage contract with the funder's key. The payload's `funder`
/// field must match `funder_keys` for the ledger to accept it.
pub fn store_transaction(funder_keys: &SigKeyPair, payload: StorePayload) -> Transaction {
    let mut tx = Transaction::Store {
        payload,
        signature: Vec::new(),
    };
    let sig = funder_keys.sign(&tx.signing_bytes());
    if let Transaction::Store { signature, .. } = &mut tx {
        *signature = sig;
    }
    tx
}

/// Signs one reward with the block leader's key.
pub fn reward_transaction(
    leader_keys: &SigKeyPair,
    file_id: Digest,
    to: SigPublicKey,
    amount: u64,
    nonce: u64,
) -> Transaction {
    let mut tx = Transaction::Reward {
        file_id,
        to,
        amount,
        nonce,
        signature: Vec::new(),
    };
    let sig = leader_keys.sign(&tx.signing_bytes());
    if let Transaction::Reward { signature, .. } = &mut tx {
        *signature = sig;
    }
    tx
}

/// One block of the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub previous: Digest,
    pub leader: SigPublicKey,
    pub idstr: IdentificationString,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.height);
        w.raw(&self.previous);
        w.raw(self.leader.as_bytes());
        self.idstr.encode_into(&mut w);
        w.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            tx.encode_into(&mut w);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let height = r.u64()?;
        let mut previous = [0u8; DIGEST_LEN];
        previous.copy_from_slice(r.raw(DIGEST_LEN)?);
        let leader = SigPublicKey::from_bytes(r.raw(32)?)
            .map_err(|_| WireError::Malformed("block leader key"))?;
        let idstr = IdentificationString::decode_from(&mut r)?;
        let count = r.u32()?;
        let mut transactions = Vec::with_capacity(count as usize);
        for _ in 0..count {
            transactions.push(Transaction::decode_from(&mut r)?);
        }
        r.finish()?;
        Ok(Block {
            height,
            previous,
            leader,
            idstr,
            transactions,
        })
    }

    pub fn digest(&self) -> Digest {
        crypto::tagged_hash(tags::BLOCK, &self.encode())
    }
}

/// Deterministic stand-in for the per-timestamp randomness beacon.
#[derive(Debug, Clone)]
pub struct ElectionOracle {
    seed: Vec<u8>,
}

impl ElectionOracle {
    pub fn new(seed: &[u8]) -> Self {
        ElectionOracle {
            seed: seed.to_vec(),
        }
    }

    /// Beacon output for one timestamp.
    pub fn epoch_seed(&self, timestamp: u64) -> Digest {
        let mut input = self.seed.clone();
        input.extend_from_slice(&timestamp.to_be_bytes());
        crypto::tagged_hash(tags::ORACLE, &input)
    }
}

/// Ledger-side record of one stored file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub payload: StorePayload,
    pub escrow_remaining: u64,
    /// Audit rounds in which at least one reward was paid for this file.
    pub proven_rounds: u64,
}

impl FileRecord {
    /// Fixed reward per winning proof.
    pub fn reward_unit(&self, quota: u64) -> u64 {
        self.payload.alpha / quota
    }
}

/// Whether block acceptance verifies the attached possession proofs itself
/// or trusts the caller's already-verified bookkeeping.
pub enum ProofCheck<'a> {
    /// Verify these possession proofs cryptographically.
    Full(&'a [PossessionProof]),
    /// Accept these already-verified results; only structural and
    /// accounting checks are applied.
    Bookkeeping(&'a [VerifiedProof]),
}

/// Summary of a structural chain verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSummary {
    pub blocks: usize,
    pub storage_nodes: usize,
    pub files: usize,
    pub rewards_paid: u64,
}

pub struct Ledger {
    params: LedgerParams,
    oracle: ElectionOracle,
    bc_nodes: Vec<SigPublicKey>,
    blocks: Vec<Block>,
    /// Storage nodes in join order, including ones later marked faulty.
    storage_nodes: Vec<SigPublicKey>,
    faulty: BTreeSet<SigPublicKey>,
    balances: BTreeMap<SigPublicKey, u64>,
    files: BTreeMap<Digest, FileRecord>,
    pending: Vec<Transaction>,
    expected: Option<IdentificationString>,
    timestamp: u64,
    total_minted: u64,
    genesis_allocation: BTreeMap<SigPublicKey, u64>,
}

impl Ledger {
    pub fn new(
        params: LedgerParams,
        bc_nodes: Vec<SigPublicKey>,
        genesis_balances: &[(SigPublicKey, u64)],
        oracle_seed: &[u8],
    ) -> Result<Self, LedgerError> {
        if bc_nodes.is_empty() {
            return Err(LedgerError::NoBlockchainNodes);
        }
        if params.k == 0 || params.l == 0 {
            return Err(LedgerError::BadParams("k and l must both be at least 1"));
        }
        let genesis_leader = bc_nodes[0].clone();
        let genesis = Block {
            height: 0,
            previous: [0u8; DIGEST_LEN],
            leader: genesis_leader.clone(),
            idstr: IdentificationString {
                leader: genesis_leader,
                epoch_seed: [0u8; DIGEST_LEN],
                timestamp: 0,
            },
            transactions: Vec::new(),
        };
        let mut balances: BTreeMap<SigPublicKey, u64> = BTreeMap::new();
        let mut total_minted: u64 = 0;
        for (key, amount) in genesis_balances {
            *balances.entry(key.clone()).or_default() += amount;
            total_minted = total_minted
                .checked_add(*amount)
                .ok_or(LedgerError::BadParams("genesis balances overflow"))?;
        }
        Ok(Ledger {
            params,
            oracle: ElectionOracle::new(oracle_seed),
            bc_nodes,
            blocks: vec![genesis],
            storage_nodes: Vec::new(),
            faulty: BTreeSet::new(),
            genesis_allocation: balances.clone(),
            balances,
            files: BTreeMap::new(),
            pending: Vec::new(),
            expected: None,
            timestamp: 0,
            total_minted,
        })
    }

    pub fn params(&self) -> LedgerParams {
        self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> Digest {
        self.blocks.last().expect("genesis always present").digest()
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn total_minted(&self) -> u64 {
        self.total_minted
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn balance(&self, key: &SigPublicKey) -> u64 {
        self.balances.get(key).copied().unwrap_or(0)
    }

    pub fn escrow_remaining(&self, file_id: &Digest) -> Option<u64> {
        self.files.get(file_id).map(|f| f.escrow_remaining)
    }

    pub fn file(&self, file_id: &Digest) -> Option<&FileRecord> {
        self.files.get(file_id)
    }

    pub fn files(&self) -> impl Iterator<Item = (&Digest, &FileRecord)> {
        self.files.iter()
    }

    /// All storage nodes ever registered, in join order.
    pub fn storage_nodes(&self) -> &[SigPublicKey] {
        &self.storage_nodes
    }

    pub fn is_faulty(&self, key: &SigPublicKey) -> bool {
        self.faulty.contains(key)
    }

    /// Election registry: registered nodes not marked faulty, in join order.
    pub fn registry(&self) -> Vec<SigPublicKey> {
        self.storage_nodes
            .iter()
            .filter(|n| !self.faulty.contains(*n))
            .cloned()
            .collect()
    }

    /// Flags a registered node as faulty, excluding it from every future
    /// election. Returns whether this changed anything.
    pub fn mark_faulty(&mut self, key: &SigPublicKey) -> bool {
        if !self.storage_nodes.contains(key) {
            return false;
        }
        self.faulty.insert(key.clone())
    }

    /// Number of winning proofs actually collectable this timestamp:
    /// `min(l, k, active registry size)`.
    pub fn quorum(&self) -> u64 {
        let active = self
            .storage_nodes
            .iter()
            .filter(|n| !self.faulty.contains(*n))
            .count() as u64;
        self.params.l.min(self.params.k).min(active)
    }

    /// Files due for audit at the current quorum: every file whose escrow
    /// still covers a full round of rewards. Ordered by file id.
    pub fn active_audits(&self) -> Vec<FileAudit> {
        let quorum = self.quorum();
        if quorum == 0 {
            return Vec::new();
        }
        self.files
            .values()
            .filter(|f| f.escrow_remaining >= quorum * f.reward_unit(self.params.l))
            .map(|f| FileAudit {
                public: f.payload.file_public.clone(),
                m: f.payload.m,
                d: f.payload.d,
            })
            .collect()
    }

    /// Queues a registry join. Validates the signature and uniqueness.
    pub fn submit_join(&mut self, tx: Transaction) -> Result<(), LedgerError> {
        let node = match &tx {
            Transaction::Join { node, .. } => node.clone(),
            _ => return Err(LedgerError::WrongKind),
        };
        if !tx.verify_author() {
            return Err(LedgerError::BadSignature);
        }
        let queued = self.pending.iter().any(
            |p| matches!(p, Transaction::Join { node: n, .. } if *n == node),
        );
        if queued || self.storage_nodes.contains(&node) {
            return Err(LedgerError::DuplicateNode);
        }
        self.pending.push(tx);
        Ok(())
    }

    /// Queues a storage contract. Validates the signature, the escrow
    /// arithmetic, the audit geometry, and the funder's balance net of
    /// already-queued contracts. Returns the file id.
    pub fn submit_store(&mut self, tx: Transaction) -> Result<Digest, LedgerError> {
        let payload = match &tx {
            Transaction::Store { payload, .. } => payload.clone(),
            _ => return Err(LedgerError::WrongKind),
        };
        if !tx.verify_author() {
            return Err(LedgerError::BadSignature);
        }
        if payload.duration == 0 || payload.alpha == 0 {
            return Err(LedgerError::InvalidStore(
                "duration and alpha must be at least 1",
            ));
        }
        let needed = payload
            .duration
            .checked_mul(payload.alpha)
            .ok_or(LedgerError::InvalidStore("escrow overflows"))?;
        if payload.funds != needed {
            return Err(LedgerError::EscrowMismatch {
                funds: payload.funds,
                duration: payload.duration,
                alpha: payload.alpha,
            });
        }
        if payload.alpha % self.params.l != 0 {
            return Err(LedgerError::AlphaNotDivisible {
                alpha: payload.alpha,
                quota: self.params.l,
            });
        }
        if payload.m > payload.file_public.chunk_count {
            return Err(LedgerError::InvalidStore(
                "placement exceeds the file's chunk count",
            ));
        }
        if payload.d > payload.m {
            return Err(LedgerError::InvalidStore(
                "challenge size exceeds the placement size",
            ));
        }
        let file_id = payload.file_id();
        let queued = self.pending.iter().any(|p| {
            matches!(p, Transaction::Store { payload: q, .. } if q.file_id() == file_id)
        });
        if queued || self.files.contains_key(&file_id) {
            return Err(LedgerError::DuplicateFile);
        }
        let committed: u64 = self
            .pending
            .iter()
            .filter_map(|p| match p {
                Transaction::Store { payload: q, .. } if q.funder == payload.funder => {
                    Some(q.funds)
                }
                _ => None,
            })
            .sum();
        let balance = self.balance(&payload.funder);
        let total_needed = committed.saturating_add(payload.funds);
        if balance < total_needed {
            return Err(LedgerError::InsufficientFunds {
                balance,
                needed: total_needed,
            });
        }
        self.pending.push(tx);
        Ok(file_id)
    }

    /// Advances the clock one timestamp: draws the beacon output, elects the
    /// leader among the blockchain nodes, and opens the timestamp for one
    /// block proposal. Returns the identification string.
    pub fn advance_timestamp(&mut self) -> IdentificationString {
        self.timestamp += 1;
        let epoch_seed = self.oracle.epoch_seed(self.timestamp);
        let position = crypto::sample_indices(
            tags::LEADER,
            &epoch_seed,
            self.bc_nodes.len() as u64,
            1,
        )
        .expect("one leader from a non-empty node set")[0];
        let idstr = IdentificationString {
            leader: self.bc_nodes[position as usize].clone(),
            epoch_seed,
            timestamp: self.timestamp,
        };
        self.expected = Some(idstr.clone());
        idstr
    }

    /// Builds the block a leader should propose: all pending transactions
    /// followed by the given rewards.
    pub fn build_block(
        &self,
        idstr: &IdentificationString,
        rewards: Vec<Transaction>,
    ) -> Block {
        let mut transactions = self.pending.clone();
        transactions.extend(rewards);
        Block {
            height: self.next_height(),
            previous: self.tip(),
            leader: idstr.leader.clone(),
            idstr: idstr.clone(),
            transactions,
        }
    }

    /// Builds the canonical reward list for a set of verified proofs:
    /// one reward of the file's per-proof unit per (file, winner) pair,
    /// ordered by (file id, winner key), signed by the leader.
    pub fn reward_transactions(
        &self,
        winners: &[VerifiedProof],
        leader_keys: &SigKeyPair,
    ) -> Vec<Transaction> {
        let mut pairs: Vec<(Digest, SigPublicKey)> = winners
            .iter()
            .map(|v| (v.file_id, v.prover.clone()))
            .collect();
        pairs.sort();
        let nonce = self.next_height();
        pairs
            .into_iter()
            .filter_map(|(file_id, to)| {
                let file = self.files.get(&file_id)?;
                let amount = file.reward_unit(self.params.l);
                Some(reward_transaction(leader_keys, file_id, to, amount, nonce))
            })
            .collect()
    }

    /// Validates and applies one block. On success returns the verified
    /// proof results the rewards were justified by; on failure the ledger
    /// is unchanged.
    pub fn try_accept(
        &mut self,
        block: &Block,
        check: ProofCheck<'_>,
    ) -> Result<Vec<VerifiedProof>, LedgerError> {
        let expected = self
            .expected
            .as_ref()
            .ok_or(LedgerError::NoOpenTimestamp)?
            .clone();
        if block.idstr != expected {
            return Err(LedgerError::Rejected("identification string mismatch"));
        }
        if block.leader != expected.leader {
            return Err(LedgerError::Rejected("leader mismatch"));
        }
        if block.height != self.next_height() {
            return Err(LedgerError::Rejected("height is not sequential"));
        }
        if block.previous != self.tip() {
            return Err(LedgerError::Rejected("previous digest mismatch"));
        }

        // The transaction list must be exactly the pending set, in order,
        // followed by the rewards.
        if block.transactions.len() < self.pending.len()
            || block.transactions[..self.pending.len()] != self.pending[..]
        {
            return Err(LedgerError::Rejected(
                "block must carry exactly the pending transactions",
            ));
        }
        let reward_txs = &block.transactions[self.pending.len()..];
        if reward_txs
            .iter()
            .any(|tx| !matches!(tx, Transaction::Reward { .. }))
        {
            return Err(LedgerError::Rejected(
                "only rewards may follow the pending transactions",
            ));
        }

        let registry = self.registry();
        let audits = self.active_audits();
        let quorum = self.quorum();

        // Justify the rewards: either verify the possession proofs here, or
        // structurally check the caller's bookkeeping.
        let verified: Vec<VerifiedProof> = match check {
            ProofCheck::Full(proofs) => protocol::verify_multi(
                &audits,
                &registry,
                &expected,
                block,
                proofs,
                self.params.k,
                self.params.l,
            )
            .ok_or(LedgerError::Rejected("possession proofs failed"))?,
            ProofCheck::Bookkeeping(winners) => {
                self.check_bookkeeping(&audits, &registry, &expected, winners)?
            }
        };

        // Required rewards: one per (audited file, winner), each the file's
        // fixed unit. Compare as sorted (file, to, amount) triples.
        let mut required: Vec<(Digest, SigPublicKey, u64)> = verified
            .iter()
            .map(|v| {
                let unit = self.files[&v.file_id].reward_unit(self.params.l);
                (v.file_id, v.prover.clone(), unit)
            })
            .collect();
        required.sort();
        let mut offered: Vec<(Digest, SigPublicKey, u64)> = Vec::with_capacity(reward_txs.len());
        for tx in reward_txs {
            if let Transaction::Reward {
                file_id,
                to,
                amount,
                ..
            } = tx
            {
                if !matches!(
                    block.leader.verify(&tx.signing_bytes(), tx.signature()),
                    Ok(true)
                ) {
                    return Err(LedgerError::Rejected("reward signature invalid"));
                }
                offered.push((*file_id, to.clone(), *amount));
            }
        }
        offered.sort();
        if required != offered {
            return Err(LedgerError::Rejected(
                "rewards do not match the verified proofs",
            ));
        }
        debug_assert_eq!(verified.len() as u64, quorum * audits.len() as u64);

        // All checks passed: apply.
        for tx in &block.transactions {
            match tx {
                Transaction::Join { node, .. } => {
                    self.storage_nodes.push(node.clone());
                }
                Transaction::Store { payload, .. } => {
                    let entry = self
                        .balances
                        .get_mut(&payload.funder)
                        .expect("validated funder has a balance");
                    *entry -= payload.funds;
                    self.files.insert(
                        payload.file_id(),
                        FileRecord {
                            payload: payload.clone(),
                            escrow_remaining: payload.funds,
                            proven_rounds: 0,
                        },
                    );
                }
                Transaction::Reward {
                    file_id,
                    to,
                    amount,
                    ..
                } => {
                    let file = self.files.get_mut(file_id).expect("validated reward file");
                    file.escrow_remaining -= amount;
                    *self.balances.entry(to.clone()).or_default() += amount;
                }
            }
        }
        let rewarded: BTreeSet<Digest> = verified.iter().map(|v| v.file_id).collect();
        for file_id in rewarded {
            self.files.get_mut(&file_id).expect("rewarded file").proven_rounds += 1;
        }
        self.pending.clear();
        self.expected = None;
        self.blocks.push(block.clone());
        debug_assert!(self.conservation_holds());
        Ok(verified)
    }

    /// Boolean form of [`Ledger::try_accept`].
    pub fn accept_block(&mut self, block: &Block, check: ProofCheck<'_>) -> bool {
        self.try_accept(block, check).is_ok()
    }

    /// Structural validation of caller bookkeeping: the winners must look
    /// exactly like what a full verification would have returned.
    fn check_bookkeeping(
        &self,
        audits: &[FileAudit],
        registry: &[SigPublicKey],
        idstr: &IdentificationString,
        winners: &[VerifiedProof],
    ) -> Result<Vec<VerifiedProof>, LedgerError> {
        if audits.is_empty() {
            return if winners.is_empty() {
                Ok(Vec::new())
            } else {
                Err(LedgerError::Rejected("winners without audited files"))
            };
        }
        let k_eff = self.params.k.min(registry.len() as u64);
        let elected = protocol::elect(registry, idstr, k_eff)
            .map_err(|_| LedgerError::Rejected("election failed"))?;
        let elected_keys: BTreeSet<&SigPublicKey> =
            elected.iter().map(|&p| &registry[p as usize]).collect();
        let quorum = self.params.l.min(elected.len() as u64);
        if winners.len() as u64 != quorum * audits.len() as u64 {
            return Err(LedgerError::Rejected("wrong number of winners"));
        }
        let by_file: BTreeMap<Digest, &FileAudit> = audits
            .iter()
            .map(|a| (a.public.file_id(), a))
            .collect();
        let mut seen: BTreeSet<(&SigPublicKey, Digest)> = BTreeSet::new();
        let mut provers: BTreeSet<&SigPublicKey> = BTreeSet::new();
        for win in winners {
            let audit = by_file
                .get(&win.file_id)
                .ok_or(LedgerError::Rejected("winner for an unaudited file"))?;
            if !elected_keys.contains(&win.prover) {
                return Err(LedgerError::Rejected("winner was not elected"));
            }
            if win.chunk_indexes.len() as u64 != audit.d {
                return Err(LedgerError::Rejected("winner coverage has wrong size"));
            }
            if !seen.insert((&win.prover, win.file_id)) {
                return Err(LedgerError::Rejected("duplicate (winner, file) pair"));
            }
            provers.insert(&win.prover);
        }
        if provers.len() as u64 != quorum || seen.len() != provers.len() * audits.len() {
            return Err(LedgerError::Rejected(
                "winners must be the same quorum across every file",
            ));
        }
        Ok(winners.to_vec())
    }

    /// Exact account conservation: liquid balances plus locked escrows
    /// always equal the genesis supply.
    pub fn conservation_holds(&self) -> bool {
        let liquid: u64 = self.balances.values().sum();
        let locked: u64 = self.files.values().map(|f| f.escrow_remaining).sum();
        liquid + locked == self.total_minted
    }

    /// One block per line, hex-encoded.
    pub fn export_chain(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&crate::wire::to_hex(&block.encode()));
            out.push('\n');
        }
        out
    }

    /// Re-validates the stored chain from genesis: header linkage, author
    /// and leader signatures, and a full replay of balances and escrows,
    /// which must land exactly on the live state.
    pub fn verify_chain(&self) -> Result<ChainSummary, LedgerError> {
        let replayed = replay_blocks(&self.blocks, &self.balances_at_genesis())?;
        if replayed.balances != self.balances
            || replayed.escrows
                != self
                    .files
                    .iter()
                    .map(|(id, f)| (*id, f.escrow_remaining))
                    .collect::<BTreeMap<_, _>>()
            || replayed.storage_nodes != self.storage_nodes
        {
            return Err(LedgerError::Rejected("replay diverged from live state"));
        }
        Ok(ChainSummary {
            blocks: self.blocks.len(),
            storage_nodes: self.storage_nodes.len(),
            files: self.files.len(),
            rewards_paid: replayed.rewards_paid,
        })
    }

    fn balances_at_genesis(&self) -> BTreeMap<SigPublicKey, u64> {
        self.genesis_allocation.clone()
    }
}

/// Outcome of replaying a block sequence.
struct ReplayState {
    balances: BTreeMap<SigPublicKey, u64>,
    escrows: BTreeMap<Digest, u64>,
    storage_nodes: Vec<SigPublicKey>,
    rewards_paid: u64,
}

/// Replays blocks structurally: linkage, signatures, escrow arithmetic.
/// Possession proofs are not stored in blocks, so reward justification is
/// not re-checked here; amounts, signatures, and conservation are.
fn replay_blocks(
    blocks: &[Block],
    genesis_balances: &BTreeMap<SigPublicKey, u64>,
) -> Result<ReplayState, LedgerError> {
    if blocks.is_empty() {
        return Err(LedgerError::Rejected("chain has no genesis block"));
    }
    if blocks[0].height != 0 || !blocks[0].transactions.is_empty() {
        return Err(LedgerError::Rejected("malformed genesis block"));
    }
    let mut state = ReplayState {
        balances: genesis_balances.clone(),
        escrows: BTreeMap::new(),
        storage_nodes: Vec::new(),
        rewards_paid: 0,
    };
    let minted: u64 = genesis_balances.values().sum();
    let mut units: BTreeMap<Digest, u64> = BTreeMap::new();
    let mut prev = blocks[0].digest();
    for (i, block) in blocks.iter().enumerate().skip(1) {
        if block.height != i as u64 {
            return Err(LedgerError::Rejected("height is not sequential"));
        }
        if block.previous != prev {
            return Err(LedgerError::Rejected("previous digest mismatch"));
        }
        if block.leader != block.idstr.leader {
            return Err(LedgerError::Rejected("leader mismatch"));
        }
        for tx in &block.transactions {
            match tx {
                Transaction::Join { node, .. } => {
                    if !tx.verify_author() {
                        return Err(LedgerError::BadSignature);
                    }
                    if state.storage_nodes.contains(node) {
                        return Err(LedgerError::DuplicateNode);
                    }
                    state.storage_nodes.push(node.clone());
                }
                Transaction::Store { payload, .. } => {
                    if !tx.verify_author() {
                        return Err(LedgerError::BadSignature);
                    }
                    let file_id = payload.file_id();
                    if state.escrows.contains_key(&file_id) {
                        return Err(LedgerError::DuplicateFile);
                    }
                    let balance = state.balances.get(&payload.funder).copied().unwrap_or(0);
                    if balance < payload.funds {
                        return Err(LedgerError::Rejected("store without funds"));
                    }
                    state
                        .balances
                        .insert(payload.funder.clone(), balance - payload.funds);
                    state.escrows.insert(file_id, payload.funds);
                    units.insert(file_id, payload.alpha);
                }
                Transaction::Reward {
                    file_id,
                    to,
                    amount,
                    ..
                } => {
                    if !matches!(
                        block.leader.verify(&tx.signing_bytes(), tx.signature()),
                        Ok(true)
                    ) {
                        return Err(LedgerError::BadSignature);
                    }
                    let escrow = state
                        .escrows
                        .get_mut(file_id)
                        .ok_or(LedgerError::Rejected("reward for unknown file"))?;
                    if *escrow < *amount {
                        return Err(LedgerError::Rejected("reward exceeds escrow"));
                    }
                    *escrow -= amount;
                    *state.balances.entry(to.clone()).or_default() += amount;
                    state.rewards_paid += amount;
                }
            }
        }
        let liquid: u64 = state.balances.values().sum();
        let locked: u64 = state.escrows.values().sum();
        if liquid + locked != minted {
            return Err(LedgerError::Rejected("conservation violated"));
        }
        prev = block.digest();
    }
    Ok(state)
}

/// Parses a hex-lines chain export back into blocks.
pub fn decode_chain(text: &str) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        blocks.push(Block::decode(&crate::wire::from_hex(line)?)?);
    }
    Ok(blocks)
}

/// Structural verification of an imported chain given its genesis
/// allocation.
pub fn verify_exported_chain(
    text: &str,
    genesis_balances: &[(SigPublicKey, u64)],
) -> Result<ChainSummary, LedgerError> {
    let blocks = decode_chain(text)?;
    let mut genesis: BTreeMap<SigPublicKey, u64> = BTreeMap::new();
    for (key, amount) in genesis_balances {
        *genesis.entry(key.clone()).or_default() += amount;
    }
    let files: BTreeSet<Digest> = blocks
        .iter()
        .flat_map(|b| &b.transactions)
        .filter_map(|tx| match tx {
            Transaction::Store { payload, .. } => Some(payload.file_id()),
            _ => None,
        })
        .collect();
    let state = replay_blocks(&blocks, &genesis)?;
    Ok(ChainSummary {
        blocks: blocks.len(),
        storage_nodes: state.storage_nodes.len(),
        files: files.len(),
        rewards_paid: state.rewards_paid,
    })
}
