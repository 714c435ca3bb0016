//! End-to-end walk through the library's public API: encode files, place
//! them on storage nodes, drive audited timestamps against the ledger until
//! the escrow drains, and replay the finished chain from its export.

use std::collections::BTreeMap;

use auditstore::crypto::{sig_keygen, Digest, SigKeyPair};
use auditstore::ledger::{
    join_transaction, store_transaction, Ledger, LedgerParams, ProofCheck, StorePayload,
    Transaction,
};
use auditstore::protocol::{
    bc_keygen, elect, get_chunks, prove_multi, setup, sn_keygen, verify_file_tags,
    ChunkAssignment, EncodedFile, FilePublicKey,
};

const K: u64 = 3;
const L: u64 = 2;
const M: u64 = 10;
const D: u64 = 3;
const DURATION: u64 = 4;
const ALPHA: u64 = 6; // divisible by L; each winner earns 3 per file per round

struct Node {
    keys: SigKeyPair,
    // One materialized assignment per stored file, keyed by file id.
    assignments: BTreeMap<Digest, ChunkAssignment>,
}

fn deterministic_bytes(seed: u8, len: usize) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
}

#[test]
fn a_file_lives_out_its_whole_contract() {
    // --- actors -----------------------------------------------------------
    let bc = bc_keygen(b"lifecycle-bc");
    let funder = sig_keygen(b"lifecycle-funder");
    let mut nodes: Vec<Node> = (0..5)
        .map(|i| Node {
            keys: sn_keygen(format!("lifecycle-node-{i}").as_bytes()),
            assignments: BTreeMap::new(),
        })
        .collect();

    // --- files ------------------------------------------------------------
    let files: Vec<EncodedFile> = [
        (deterministic_bytes(3, 3000), b"lifecycle-file-a".as_slice()),
        (deterministic_bytes(7, 2200), b"lifecycle-file-b".as_slice()),
    ]
    .into_iter()
    .map(|(bytes, seed)| setup(&bytes, 150, 512, seed).expect("setup"))
    .collect();
    for file in &files {
        assert!(verify_file_tags(file), "freshly tagged files must verify");
        assert_eq!(file.public.chunk_count, file.chunks.len() as u64);
    }

    // Every node fetches its deterministic placement for both files.
    for node in &mut nodes {
        for file in &files {
            let assignment = get_chunks(file, &node.keys.public(), M).expect("get_chunks");
            assert_eq!(assignment.indexes.len(), M as usize);
            assert_eq!(assignment.held.len(), M as usize);
            node.assignments.insert(file.public.file_id(), assignment);
        }
    }

    // --- ledger bootstrap ---------------------------------------------------
    let escrow = DURATION * ALPHA;
    let mut ledger = Ledger::new(
        LedgerParams { k: K, l: L },
        vec![bc.public()],
        &[(funder.public(), 2 * escrow)],
        b"lifecycle-beacon",
    )
    .expect("ledger");
    for (i, node) in nodes.iter().enumerate() {
        ledger
            .submit_join(join_transaction(&node.keys, i as u64))
            .expect("join");
    }
    let mut file_ids = Vec::new();
    for (j, file) in files.iter().enumerate() {
        let payload = StorePayload {
            funder: funder.public(),
            file_public: file.public.clone(),
            m: M,
            d: D,
            duration: DURATION,
            alpha: ALPHA,
            funds: escrow,
            nonce: j as u64,
        };
        file_ids.push(ledger.submit_store(store_transaction(&funder, payload)).expect("store"));
    }

    // Bootstrap block: registrations and contracts land, no proofs yet
    // because nothing was under audit when the timestamp opened.
    let idstr = ledger.advance_timestamp();
    let block = ledger.build_block(&idstr, Vec::new());
    ledger
        .try_accept(&block, ProofCheck::Full(&[]))
        .expect("bootstrap block");
    assert_eq!(ledger.storage_nodes().len(), nodes.len());
    assert_eq!(ledger.balance(&funder.public()), 0);
    for id in &file_ids {
        assert_eq!(ledger.escrow_remaining(id), Some(escrow));
    }

    // --- audited rounds -----------------------------------------------------
    let publics: BTreeMap<Digest, FilePublicKey> = files
        .iter()
        .map(|f| (f.public.file_id(), f.public.clone()))
        .collect();
    for round in 0..DURATION {
        let idstr = ledger.advance_timestamp();
        let audits = ledger.active_audits();
        assert_eq!(audits.len(), files.len(), "both contracts stay active");

        let registry = ledger.registry();
        let elected = elect(&registry, &idstr, K).expect("elect");
        assert_eq!(elected.len(), K as usize);

        // Every elected node answers; the first `L` (by election order) win.
        let mut winner_proofs = Vec::new();
        for &pos in elected.iter().take(L as usize) {
            let node = nodes
                .iter()
                .find(|n| n.keys.public() == registry[pos as usize])
                .expect("elected key belongs to a known node");
            let pairs: Vec<_> = audits
                .iter()
                .map(|a| {
                    let id = a.public.file_id();
                    (&publics[&id], &node.assignments[&id])
                })
                .collect();
            winner_proofs.extend(prove_multi(&pairs, &node.keys, &idstr, D).expect("prove"));
        }
        assert_eq!(winner_proofs.len(), (L as usize) * files.len());

        // Challenged indexes must come from the prover's placement.
        for proof in &winner_proofs {
            let node = nodes
                .iter()
                .find(|n| n.keys.public() == proof.prover)
                .expect("prover is a known node");
            let assignment = &node.assignments[&proof.file_id];
            let public = &publics[&proof.file_id];
            for sub in &proof.sub_proofs {
                assert!(!sub.encode(&public.pdp).is_empty());
            }
            assert_eq!(assignment.indexes.len(), M as usize);
        }

        // Leader settles the round: rewards for the winners, then the block.
        let verified: Vec<_> = winner_proofs
            .iter()
            .map(|p| {
                auditstore::protocol::verify_possession_detailed(
                    &publics[&p.file_id],
                    M,
                    p,
                    &idstr,
                    D,
                )
                .map(|chunk_indexes| auditstore::protocol::VerifiedProof {
                    prover: p.prover.clone(),
                    file_id: p.file_id,
                    chunk_indexes,
                })
                .expect("honest proof verifies")
            })
            .collect();
        let rewards = ledger.reward_transactions(&verified, &bc);
        assert_eq!(rewards.len(), (L as usize) * files.len());
        for tx in &rewards {
            match tx {
                Transaction::Reward { amount, .. } => assert_eq!(*amount, ALPHA / L),
                other => panic!("expected a reward, got {other:?}"),
            }
        }
        let block = ledger.build_block(&idstr, rewards);
        let accepted = ledger
            .try_accept(&block, ProofCheck::Full(&winner_proofs))
            .expect("audited block");
        assert_eq!(accepted.len(), (L as usize) * files.len());
        for vp in &accepted {
            assert_eq!(vp.chunk_indexes.len(), D as usize);
        }

        for id in &file_ids {
            let spent = (round + 1) * ALPHA;
            assert_eq!(ledger.escrow_remaining(id), Some(escrow - spent));
        }
        assert!(ledger.conservation_holds(), "conservation after round {round}");
    }

    // --- contracts expire -----------------------------------------------------
    for id in &file_ids {
        assert_eq!(ledger.escrow_remaining(id), Some(0));
    }
    assert!(ledger.active_audits().is_empty(), "drained contracts stop auditing");

    // One more timestamp: nothing to prove, the empty block still extends
    // the chain.
    let idstr = ledger.advance_timestamp();
    let block = ledger.build_block(&idstr, Vec::new());
    ledger.try_accept(&block, ProofCheck::Full(&[])).expect("empty block");

    // --- replay ---------------------------------------------------------------
    let summary = ledger.verify_chain().expect("chain replays");
    assert_eq!(summary.blocks as usize, ledger.blocks().len());
    assert_eq!(summary.rewards_paid, 2 * DURATION * ALPHA);
    assert_eq!(ledger.total_minted(), 2 * escrow);

    let exported = ledger.export_chain();
    let decoded = auditstore::ledger::decode_chain(&exported).expect("chain decodes");
    assert_eq!(decoded.len(), ledger.blocks().len());
    for (a, b) in decoded.iter().zip(ledger.blocks()) {
        assert_eq!(a.encode(), b.encode(), "export round-trips every block");
    }

    // Winners actually got paid: total node balances equal total rewards.
    let node_total: u64 = nodes.iter().map(|n| ledger.balance(&n.keys.public())).sum();
    assert_eq!(node_total, 2 * DURATION * ALPHA);
}

#[test]
fn a_node_that_joins_mid_contract_can_win_audits() {
    let bc = bc_keygen(b"latejoin-bc");
    let funder = sig_keygen(b"latejoin-funder");
    let veteran = sn_keygen(b"latejoin-veteran");
    let rookie = sn_keygen(b"latejoin-rookie");

    let file = setup(&deterministic_bytes(11, 1700), 120, 512, b"latejoin-file").expect("setup");
    let file_id = file.public.file_id();

    let escrow = 8 * 2;
    let mut ledger = Ledger::new(
        LedgerParams { k: 2, l: 1 },
        vec![bc.public()],
        &[(funder.public(), escrow)],
        b"latejoin-beacon",
    )
    .expect("ledger");
    ledger.submit_join(join_transaction(&veteran, 0)).expect("join");
    ledger
        .submit_store(store_transaction(
            &funder,
            StorePayload {
                funder: funder.public(),
                file_public: file.public.clone(),
                m: 8,
                d: 2,
                duration: 8,
                alpha: 2,
                funds: escrow,
                nonce: 0,
            },
        ))
        .expect("store");
    let idstr = ledger.advance_timestamp();
    let block = ledger.build_block(&idstr, Vec::new());
    ledger.try_accept(&block, ProofCheck::Full(&[])).expect("bootstrap");

    let veteran_assignment = get_chunks(&file, &veteran.public(), 8).expect("get_chunks");
    let rookie_assignment = get_chunks(&file, &rookie.public(), 8).expect("get_chunks");

    let settle_round = |ledger: &mut Ledger, provers: &[(&SigKeyPair, &ChunkAssignment)]| {
        let idstr = ledger.advance_timestamp();
        let quorum = ledger.quorum() as usize;
        let registry = ledger.registry();
        let k_eff = ledger.params().k.min(registry.len() as u64);
        let elected = elect(&registry, &idstr, k_eff).expect("elect");
        let mut proofs = Vec::new();
        for &pos in elected.iter().take(quorum) {
            let (keys, assignment) = provers
                .iter()
                .find(|(k, _)| k.public() == registry[pos as usize])
                .expect("every elected node is simulated");
            proofs
                .extend(prove_multi(&[(&file.public, assignment)], keys, &idstr, 2).expect("prove"));
        }
        let verified: Vec<_> = proofs
            .iter()
            .map(|p| {
                auditstore::protocol::verify_possession_detailed(&file.public, 8, p, &idstr, 2)
                    .map(|chunk_indexes| auditstore::protocol::VerifiedProof {
                        prover: p.prover.clone(),
                        file_id: p.file_id,
                        chunk_indexes,
                    })
                    .expect("honest proof")
            })
            .collect();
        let rewards = ledger.reward_transactions(&verified, &bc);
        let block = ledger.build_block(&idstr, rewards);
        ledger.try_accept(&block, ProofCheck::Full(&proofs)).expect("round");
    };

    // Two rounds with only the veteran registered.
    for _ in 0..2 {
        settle_round(&mut ledger, &[(&veteran, &veteran_assignment)]);
    }
    assert_eq!(ledger.balance(&veteran.public()), 2 * 2);
    assert_eq!(ledger.balance(&rookie.public()), 0);

    // The rookie joins; from the next timestamp on it is electable and its
    // deterministic placement is the same one any verifier recomputes.
    ledger.submit_join(join_transaction(&rookie, 1)).expect("late join");
    for _ in 0..3 {
        settle_round(
            &mut ledger,
            &[(&veteran, &veteran_assignment), (&rookie, &rookie_assignment)],
        );
    }
    assert_eq!(ledger.storage_nodes().len(), 2);
    let rookie_balance = ledger.balance(&rookie.public());
    assert!(rookie_balance > 0, "the late joiner wins at least one audit");
    assert_eq!(
        rookie_balance + ledger.balance(&veteran.public()),
        5 * 2,
        "all five rounds paid exactly alpha"
    );
    assert_eq!(ledger.escrow_remaining(&file_id), Some(escrow - 5 * 2));
    assert!(ledger.conservation_holds());
    ledger.verify_chain().expect("chain replays");
}
