//! Command line front end: key generation, file tagging, chunk
//! distribution, challenge/prove/verify round-trips, scenario simulation,
//! and the closed-form coverage solver.
//!
//! All artifacts are hex-encoded text files so they can be inspected,
//! diffed, and checked into golden-file tests. Exit codes: 0 on success,
//! 1 on any contract violation (with a single `error: ...` line on
//! stderr), 2 on command-line usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use auditstore::crypto::{SigKeyPair, SigPublicKey};
use auditstore::netsim::{
    adversary_report, coverage_csv, nodes_csv, parse_scenario, run_simulation,
    solve_timestamps_for_coverage,
};
use auditstore::protocol::{
    assignment_indexes, bc_keygen, get_chunks, setup, sn_keygen, ChunkAssignment, EncodedChunk,
    EncodedFile, FilePublicKey, IdentificationString, PossessionProof,
};
use auditstore::wire::{Reader, Writer};

#[derive(Parser)]
#[command(
    name = "auditstore",
    version,
    about = "Verifiable remote-storage auditing: tag files, prove possession, simulate networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic signing keypair for a storage node.
    Keygen {
        /// Seed bytes, hex-encoded; the same seed always yields the same keypair.
        #[arg(long)]
        seed: String,
        /// Basename for the output files (<name>.sk and <name>.pk).
        #[arg(long, default_value = "node")]
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Tag a file for auditing: emit its public key and the tagged chunk store.
    Setup {
        /// Path to the raw file to tag.
        #[arg(long)]
        file: PathBuf,
        /// Tagging key seed, hex-encoded.
        #[arg(long)]
        seed: String,
        /// Chunk size in bytes.
        #[arg(long, default_value_t = 16384)]
        chunk_size: u32,
        /// RSA modulus size in bits.
        #[arg(long, default_value_t = 1024)]
        modulus_bits: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Extract one node's deterministic chunk assignment from a tagged store.
    Distribute {
        /// Tagged store produced by setup (<basename>.store).
        #[arg(long)]
        store: PathBuf,
        /// The node's public key: hex, or @path to a .pk file.
        #[arg(long)]
        node: String,
        /// Chunks to place on the node.
        #[arg(long)]
        m: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Derive the audit challenge context for one (file, prover, timestamp).
    Challenge {
        /// The file's public key file (<basename>.pub).
        #[arg(long)]
        file_pub: PathBuf,
        /// The prover's public key: hex, or @path to a .pk file.
        #[arg(long)]
        prover: String,
        /// Chunks placed on each node.
        #[arg(long)]
        m: u64,
        /// Chunks challenged.
        #[arg(long)]
        d: u64,
        /// Leader public key: hex, or @path. Defaults to a fixed built-in key.
        #[arg(long)]
        leader: Option<String>,
        /// Epoch randomness, 32 bytes hex. Defaults to all zeroes.
        #[arg(long)]
        epoch: Option<String>,
        #[arg(long, default_value_t = 1)]
        timestamp: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Answer a challenge context with a signed possession proof.
    Prove {
        /// Assignment manifest produced by distribute.
        #[arg(long)]
        assignment: PathBuf,
        /// The prover's secret key file (.sk).
        #[arg(long)]
        key: PathBuf,
        /// Challenge context produced by challenge.
        #[arg(long)]
        context: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a possession proof; exits 0 only if it verifies.
    Verify {
        #[arg(long)]
        file_pub: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        proof: PathBuf,
    },
    /// Run a scenario file and write coverage.csv, nodes.csv and chain.txt.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Closed form: timestamps needed for the analytic coverage to reach a target.
    Solve {
        /// Total chunks per file.
        #[arg(long)]
        n: u64,
        /// Chunks challenged per proof.
        #[arg(long)]
        d: u64,
        /// Winning proofs per timestamp.
        #[arg(long)]
        l: u64,
        /// Coverage target in (0, 1).
        #[arg(long)]
        target: f64,
    },
    /// Run a scenario and emit only the accepted chain, one block per line.
    ExportChain {
        #[arg(long)]
        scenario: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// File helpers: every artifact is one hex blob per file, newline-terminated.

fn read_hex_file(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    hex::decode(text.trim())
        .with_context(|| format!("{} is not valid hex", path.display()))
}

fn write_hex_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, format!("{}\n", hex::encode(bytes)))
        .with_context(|| format!("cannot write {}", path.display()))
}

/// A public key argument: inline hex, or `@path` to a `.pk` file.
fn read_key_arg(arg: &str) -> Result<SigPublicKey> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("cannot read key file {path}"))?,
        None => arg.to_string(),
    };
    let bytes = hex::decode(text.trim()).context("public key is not valid hex")?;
    SigPublicKey::from_bytes(&bytes).map_err(|e| anyhow!("bad public key: {e}"))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

// ---------------------------------------------------------------------------
// Assignment manifest: the node key, the file public key, the placement
// size, and the held chunks with their tags.

fn encode_manifest(public: &FilePublicKey, assignment: &ChunkAssignment, m: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(assignment.node.as_bytes());
    w.bytes(&public.encode());
    w.u64(m);
    w.u32(assignment.held.len() as u32);
    for (&index, chunk) in &assignment.held {
        w.u64(index);
        w.bytes(&chunk.data);
        w.u32(chunk.tags.len() as u32);
        for tag in &chunk.tags {
            w.bytes(&tag.encode());
        }
    }
    w.finish()
}

fn decode_manifest(bytes: &[u8]) -> Result<(FilePublicKey, ChunkAssignment, u64)> {
    let mut r = Reader::new(bytes);
    let node = SigPublicKey::from_bytes(r.raw(32)?).map_err(|e| anyhow!("bad node key: {e}"))?;
    let public = FilePublicKey::decode(r.bytes()?)?;
    let m = r.u64()?;
    let held_count = r.u32()?;
    let mut held = BTreeMap::new();
    for _ in 0..held_count {
        let index = r.u64()?;
        let data = r.bytes()?.to_vec();
        let ntags = r.u32()?;
        let mut tags = Vec::with_capacity(ntags as usize);
        for _ in 0..ntags {
            tags.push(auditstore::pdp::ChunkTag::decode(r.bytes()?)?);
        }
        held.insert(index, EncodedChunk { data, tags });
    }
    r.finish()?;
    let indexes = assignment_indexes(&node, public.chunk_count, m)?;
    Ok((public, ChunkAssignment { node, indexes, held }, m))
}

// ---------------------------------------------------------------------------
// Challenge context: the identification string, the challenged prover, and
// the audit sizes. Binding the prover here means a context written for one
// node cannot be satisfied by another node's (otherwise valid) proof.

fn encode_context(idstr: &IdentificationString, prover: &SigPublicKey, m: u64, d: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&idstr.encode());
    w.raw(prover.as_bytes());
    w.u64(m);
    w.u64(d);
    w.finish()
}

fn decode_context(bytes: &[u8]) -> Result<(IdentificationString, SigPublicKey, u64, u64)> {
    let mut r = Reader::new(bytes);
    let idstr = IdentificationString::decode(r.bytes()?)?;
    let prover = SigPublicKey::from_bytes(r.raw(32)?).map_err(|e| anyhow!("bad prover key: {e}"))?;
    let m = r.u64()?;
    let d = r.u64()?;
    r.finish()?;
    Ok((idstr, prover, m, d))
}

// ---------------------------------------------------------------------------

fn run(command: Command) -> Result<()> {
    match command {
        Command::Keygen { seed, name, out } => {
            let seed = hex::decode(seed.trim()).context("--seed is not valid hex")?;
            ensure_out_dir(&out)?;
            let keys = sn_keygen(&seed);
            write_hex_file(&out.join(format!("{name}.sk")), &keys.to_bytes())?;
            write_hex_file(&out.join(format!("{name}.pk")), keys.public().as_bytes())?;
            println!("public key: {}", hex::encode(keys.public().as_bytes()));
            Ok(())
        }

        Command::Setup { file, seed, chunk_size, modulus_bits, out } => {
            let seed = hex::decode(seed.trim()).context("--seed is not valid hex")?;
            let data = fs::read(&file)
                .with_context(|| format!("cannot read {}", file.display()))?;
            let encoded = setup(&data, chunk_size, modulus_bits, &seed)?;
            ensure_out_dir(&out)?;
            let base = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("file")
                .to_string();
            write_hex_file(&out.join(format!("{base}.pub")), &encoded.public.encode())?;
            write_hex_file(&out.join(format!("{base}.store")), &encoded.encode())?;
            println!(
                "tagged {} bytes into {} chunks of {} bytes (file id {})",
                data.len(),
                encoded.public.chunk_count,
                chunk_size,
                hex::encode(encoded.public.file_id())
            );
            Ok(())
        }

        Command::Distribute { store, node, m, out } => {
            let encoded = EncodedFile::decode(&read_hex_file(&store)?)?;
            let node = read_key_arg(&node)?;
            let assignment = get_chunks(&encoded, &node, m)?;
            ensure_out_dir(&out)?;
            let path = out.join(format!(
                "{}.assignment",
                hex::encode(&node.as_bytes()[..8])
            ));
            write_hex_file(&path, &encode_manifest(&encoded.public, &assignment, m))?;
            println!(
                "placed {} of {} chunks on node {}",
                m,
                encoded.public.chunk_count,
                hex::encode(node.as_bytes())
            );
            Ok(())
        }

        Command::Challenge {
            file_pub,
            prover,
            m,
            d,
            leader,
            epoch,
            timestamp,
            out,
        } => {
            let public = FilePublicKey::decode(&read_hex_file(&file_pub)?)?;
            let prover = read_key_arg(&prover)?;
            let leader = match leader {
                Some(arg) => read_key_arg(&arg)?,
                None => bc_keygen(b"auditstore-cli-default-leader").public(),
            };
            let epoch_seed = match epoch {
                Some(hex_str) => {
                    let bytes = hex::decode(hex_str.trim()).context("--epoch is not valid hex")?;
                    bytes
                        .as_slice()
                        .try_into()
                        .map_err(|_| anyhow!("--epoch must be exactly 32 bytes of hex"))?
                }
                None => [0u8; 32],
            };
            let idstr = IdentificationString { leader, epoch_seed, timestamp };
            // Derive the challenge now so impossible parameters fail here,
            // not at prove time.
            let indexes = assignment_indexes(&prover, public.chunk_count, m)?;
            let chal = auditstore::protocol::derive_challenge(&public, &prover, &idstr, d, &indexes)?;
            ensure_out_dir(&out)?;
            write_hex_file(&out.join("challenge.ctx"), &encode_context(&idstr, &prover, m, d))?;
            println!(
                "challenge for timestamp {}: {} of {} placed chunks, first indexes {:?}",
                timestamp,
                d,
                m,
                &chal.indexes[..chal.indexes.len().min(8)]
            );
            Ok(())
        }

        Command::Prove { assignment, key, context, out } => {
            let (public, assignment, _m) = decode_manifest(&read_hex_file(&assignment)?)?;
            let keys = SigKeyPair::from_bytes(&read_hex_file(&key)?)
                .map_err(|e| anyhow!("bad secret key: {e}"))?;
            let (idstr, prover, _, d) = decode_context(&read_hex_file(&context)?)?;
            if keys.public() != prover {
                bail!(
                    "the context challenges prover {}, not this key",
                    hex::encode(prover.as_bytes())
                );
            }
            let proof = auditstore::protocol::prove(&public, &assignment, &keys, &idstr, d)?;
            ensure_out_dir(&out)?;
            write_hex_file(&out.join("proof.bin"), &proof.encode(&public))?;
            println!(
                "proof over {} challenged chunks ({} aggregate blocks)",
                d,
                proof.sub_proofs.len()
            );
            Ok(())
        }

        Command::Verify { file_pub, context, proof } => {
            let public = FilePublicKey::decode(&read_hex_file(&file_pub)?)?;
            let (idstr, prover, m, d) = decode_context(&read_hex_file(&context)?)?;
            let proof = PossessionProof::decode(&read_hex_file(&proof)?)?;
            if proof.prover != prover {
                bail!("proof comes from a different prover than the context challenges");
            }
            match auditstore::protocol::verify_possession_detailed(&public, m, &proof, &idstr, d) {
                Some(covered) => {
                    println!("ok: proof verified ({} chunks covered)", covered.len());
                    Ok(())
                }
                None => bail!("proof failed verification"),
            }
        }

        Command::Simulate { scenario, out } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("cannot read {}", scenario.display()))?;
            let config = parse_scenario(&text)?;
            let result = run_simulation(config)?;
            ensure_out_dir(&out)?;
            fs::write(out.join("coverage.csv"), coverage_csv(&result))?;
            fs::write(out.join("nodes.csv"), nodes_csv(&result))?;
            fs::write(out.join("chain.txt"), &result.chain)?;
            let final_coverage = result
                .coverage
                .iter()
                .map(|c| c.fraction())
                .fold(f64::INFINITY, f64::min);
            println!(
                "simulated {} timestamps: {} blocks accepted, {} rewards paid, \
                 minimum final coverage {:.4}",
                result.config.max_timestamps,
                result.blocks_accepted,
                result.rewards_paid,
                final_coverage
            );
            let report = adversary_report(&result);
            for stat in &report.stats {
                println!(
                    "node {} ({}): elected {}, failures {}, rewards {} ({:.4} share){}",
                    stat.node,
                    stat.kind.label(),
                    stat.elected,
                    stat.failures,
                    stat.rewards,
                    stat.reward_share,
                    if stat.flagged_faulty { ", flagged faulty" } else { "" }
                );
            }
            Ok(())
        }

        Command::Solve { n, d, l, target } => {
            let timestamps = solve_timestamps_for_coverage(n, d, l, target)?;
            println!("{timestamps}");
            Ok(())
        }

        Command::ExportChain { scenario, out } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("cannot read {}", scenario.display()))?;
            let config = parse_scenario(&text)?;
            let result = run_simulation(config)?;
            match out {
                Some(path) => fs::write(&path, &result.chain)
                    .with_context(|| format!("cannot write {}", path.display()))?,
                None => print!("{}", result.chain),
            }
            Ok(())
        }
    }
}
