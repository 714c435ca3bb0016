//! Deterministic network simulator for the audit protocol.
//!
//! The simulator drives the full per-timestamp pipeline — leader election,
//! storage-node election, challenge derivation, a latency-ranked proof race,
//! block acceptance, and reward payout — entirely from a master seed, so two
//! runs with the same configuration are byte-identical. Two modes share all
//! of that machinery and differ only in how possession is checked:
//! `full_crypto` generates and verifies every proof, while `coverage_only`
//! keeps the sampling and accounting but replaces the modular arithmetic
//! with index bookkeeping. A closed-form coverage model and its inverse
//! accompany the simulator for cross-checking and for scales where a bitset
//! per chunk would be impractical.

mod sim;

pub use sim::{
    adversary_report, run_simulation, AdversaryReport, AdversaryStats, CoverageState,
    DealerReport, NodeStats, RaceOutcome, RejectReason, SimResult, Simulation,
};

use crate::ledger::LedgerError;
use crate::pdp::PdpError;
use crate::protocol::ProtocolError;
use crate::wire;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario line {line}: {message}")]
    Scenario { line: usize, message: String },
    #[error("coverage target is unreachable with an empty challenge")]
    UnreachableTarget,
    #[error("coverage target must lie strictly between 0 and 1")]
    BadTarget,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Pdp(#[from] PdpError),
}

/// How a simulated node behaves when elected or asked to serve chunks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryKind {
    Honest,
    /// Stores honestly but far away: every response pays a fixed extra
    /// latency, so it loses proof races against local nodes.
    Outsourcer { extra_ms: f64 },
    /// Discards (or corrupts) a fraction of its assigned chunks. A forging
    /// deleter answers challenges that hit the gap with garbage values; a
    /// refusing deleter stays silent on a hit. Both must fail.
    Deleter { fraction: f64, forge: bool },
    /// Never responds to challenges and never serves chunks to joiners.
    Refuser,
}

impl AdversaryKind {
    pub fn label(&self) -> &'static str {
        match self {
            AdversaryKind::Honest => "honest",
            AdversaryKind::Outsourcer { .. } => "outsourcer",
            AdversaryKind::Deleter { forge: true, .. } => "deleter-forge",
            AdversaryKind::Deleter { forge: false, .. } => "deleter-refuse",
            AdversaryKind::Refuser => "refuser",
        }
    }
}

/// Latency model: a per-node base drawn once, plus a heavy-tailed
/// (log-normal) jitter drawn per response. All in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    /// Smallest possible per-node base latency.
    pub base_ms: f64,
    /// Width of the uniform per-node base spread above `base_ms`.
    pub base_spread_ms: f64,
    /// Median of the log-normal jitter added to every response.
    pub jitter_median_ms: f64,
    /// Log-normal shape parameter of the jitter.
    pub jitter_sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            base_ms: 20.0,
            base_spread_ms: 0.0,
            jitter_median_ms: 5.0,
            jitter_sigma: 0.5,
        }
    }
}

/// Whether possession proofs are computed for real or bookkept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    FullCrypto,
    CoverageOnly,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Chunks per file.
    pub n: u64,
    /// Chunks assigned to each storage node.
    pub m: u64,
    /// Storage nodes elected per timestamp.
    pub k: u64,
    /// Chunks challenged per audit.
    pub d: u64,
    /// Winning proofs rewarded per file per timestamp.
    pub l: u64,
    /// Storage nodes, including ones that join late.
    pub node_count: u64,
    /// Files under audit.
    pub file_count: u64,
    /// Root of every random draw in the run.
    pub master_seed: Vec<u8>,
    pub latency: LatencyModel,
    /// (node id, behavior) for every non-honest node.
    pub adversaries: Vec<(u64, AdversaryKind)>,
    /// (node id, timestamp) pairs: these nodes join at that timestamp
    /// instead of at genesis, re-fetching their chunks from live holders.
    pub late_joins: Vec<(u64, u64)>,
    pub mode: SimMode,
    pub max_timestamps: u64,
    /// Bytes per chunk (relevant to proof arithmetic in full_crypto mode).
    pub chunk_size: u32,
    /// Tag-scheme modulus width for the simulated files.
    pub modulus_bits: u64,
    /// Storage-contract lifetime in successful rounds.
    pub duration: u64,
    /// Reward released per file per successful round; divisible by `l`.
    pub alpha: u64,
}

impl SimConfig {
    /// A minimal honest configuration; callers override what they study.
    pub fn new(n: u64, m: u64, k: u64, d: u64, l: u64, node_count: u64) -> Self {
        SimConfig {
            n,
            m,
            k,
            d,
            l,
            node_count,
            file_count: 1,
            master_seed: b"default-seed".to_vec(),
            latency: LatencyModel::default(),
            adversaries: Vec::new(),
            late_joins: Vec::new(),
            mode: SimMode::CoverageOnly,
            max_timestamps: 100,
            chunk_size: 16384,
            modulus_bits: 512,
            duration: 100,
            alpha: l,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.n == 0 || self.node_count == 0 || self.file_count == 0 {
            return fail("n, node_count, and file_count must be at least 1".into());
        }
        if !(self.d <= self.m && self.m <= self.n) {
            return fail(format!(
                "audit sizes must satisfy d <= m <= n, got d={} m={} n={}",
                self.d, self.m, self.n
            ));
        }
        if !(self.l <= self.k && self.k <= self.node_count) {
            return fail(format!(
                "election sizes must satisfy l <= k <= node_count, got l={} k={} node_count={}",
                self.l, self.k, self.node_count
            ));
        }
        if self.l == 0 {
            return fail("l must be at least 1".into());
        }
        if self.chunk_size == 0 {
            return fail("chunk_size must be at least 1".into());
        }
        if self.duration == 0 || self.alpha == 0 {
            return fail("duration and alpha must be at least 1".into());
        }
        if self.alpha % self.l != 0 {
            return fail(format!(
                "alpha ({}) must be divisible by l ({})",
                self.alpha, self.l
            ));
        }
        if self.latency.base_ms < 0.0
            || self.latency.base_spread_ms < 0.0
            || self.latency.jitter_median_ms < 0.0
            || self.latency.jitter_sigma < 0.0
        {
            return fail("latency parameters must be non-negative".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, kind) in &self.adversaries {
            if *id >= self.node_count {
                return fail(format!("adversary node id {id} out of range"));
            }
            if !seen.insert(*id) {
                return fail(format!("node {id} appears twice in the adversary list"));
            }
            match kind {
                AdversaryKind::Deleter { fraction, .. } => {
                    if !(0.0..=1.0).contains(fraction) {
                        return fail(format!("deleted fraction {fraction} outside [0, 1]"));
                    }
                }
                AdversaryKind::Outsourcer { extra_ms } => {
                    if *extra_ms < 0.0 {
                        return fail("outsourcer extra latency must be non-negative".into());
                    }
                }
                _ => {}
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, _at) in &self.late_joins {
            if *id >= self.node_count {
                return fail(format!("late-join node id {id} out of range"));
            }
            if !seen.insert(*id) {
                return fail(format!("node {id} appears twice in the late-join list"));
            }
        }
        Ok(())
    }
}

/// Parses a flat `key = value` scenario file: one pair per line, `#`
/// comments, decimal integers, hex seed. `adversary` and `late_join` lines
/// may repeat.
///
/// ```text
/// n = 65536
/// m = 12500
/// k = 10
/// d = 1000
/// l = 1
/// node_count = 1000
/// max_timestamps = 250
/// master_seed = 6669673464
/// mode = coverage_only
/// adversary = 3 deleter 0.01 forge
/// late_join = 7 50
/// ```
pub fn parse_scenario(text: &str) -> Result<SimConfig, SimError> {
    let mut config = SimConfig::new(1, 0, 1, 0, 1, 1);
    let mut duration_set = false;
    let mut alpha_set = false;
    let err = |line: usize, message: String| SimError::Scenario { line, message };

    let mut seen = std::collections::BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected `key = value`".into()))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(err(line_no, format!("key `{key}` has no value")));
        }
        if key != "adversary" && key != "late_join" && !seen.insert(key.to_string()) {
            return Err(err(line_no, format!("key `{key}` appears twice")));
        }

        let parse_u64 = |v: &str| -> Result<u64, SimError> {
            v.parse::<u64>()
                .map_err(|_| err(line_no, format!("`{v}` is not a non-negative integer")))
        };
        let parse_f64 = |v: &str| -> Result<f64, SimError> {
            v.parse::<f64>()
                .map_err(|_| err(line_no, format!("`{v}` is not a number")))
        };

        match key {
            "n" => config.n = parse_u64(value)?,
            "m" => config.m = parse_u64(value)?,
            "k" => config.k = parse_u64(value)?,
            "d" => config.d = parse_u64(value)?,
            "l" => config.l = parse_u64(value)?,
            "node_count" => config.node_count = parse_u64(value)?,
            "file_count" => config.file_count = parse_u64(value)?,
            "max_timestamps" => config.max_timestamps = parse_u64(value)?,
            "chunk_size" => {
                config.chunk_size = parse_u64(value)?
                    .try_into()
                    .map_err(|_| err(line_no, "chunk_size too large".into()))?
            }
            "modulus_bits" => config.modulus_bits = parse_u64(value)?,
            "duration" => {
                config.duration = parse_u64(value)?;
                duration_set = true;
            }
            "alpha" => {
                config.alpha = parse_u64(value)?;
                alpha_set = true;
            }
            "master_seed" => {
                config.master_seed = wire::from_hex(value)
                    .map_err(|_| err(line_no, format!("`{value}` is not a hex string")))?
            }
            "mode" => {
                config.mode = match value {
                    "full_crypto" => SimMode::FullCrypto,
                    "coverage_only" => SimMode::CoverageOnly,
                    other => {
                        return Err(err(
                            line_no,
                            format!("unknown mode `{other}` (full_crypto | coverage_only)"),
                        ))
                    }
                }
            }
            "base_latency_ms" => config.latency.base_ms = parse_f64(value)?,
            "base_spread_ms" => config.latency.base_spread_ms = parse_f64(value)?,
            "jitter_median_ms" => config.latency.jitter_median_ms = parse_f64(value)?,
            "jitter_sigma" => config.latency.jitter_sigma = parse_f64(value)?,
            "adversary" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let kind = match parts.as_slice() {
                    [_, "outsourcer", extra] => AdversaryKind::Outsourcer {
                        extra_ms: parse_f64(extra)?,
                    },
                    [_, "deleter", fraction] => AdversaryKind::Deleter {
                        fraction: parse_f64(fraction)?,
                        forge: true,
                    },
                    [_, "deleter", fraction, style] => AdversaryKind::Deleter {
                        fraction: parse_f64(fraction)?,
                        forge: match *style {
                            "forge" => true,
                            "refuse" => false,
                            other => {
                                return Err(err(
                                    line_no,
                                    format!("unknown deleter style `{other}` (forge | refuse)"),
                                ))
                            }
                        },
                    },
                    [_, "refuser"] => AdversaryKind::Refuser,
                    _ => {
                        return Err(err(
                            line_no,
                            "expected `<id> outsourcer <ms>`, `<id> deleter <fraction> \
                             [forge|refuse]`, or `<id> refuser`"
                                .into(),
                        ))
                    }
                };
                config.adversaries.push((parse_u64(parts[0])?, kind));
            }
            "late_join" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                match parts.as_slice() {
                    [id, at] => config.late_joins.push((parse_u64(id)?, parse_u64(at)?)),
                    _ => {
                        return Err(err(line_no, "expected `<node id> <timestamp>`".into()));
                    }
                }
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }

    if !duration_set {
        config.duration = config.max_timestamps.max(1);
    }
    if !alpha_set {
        config.alpha = config.l;
    }
    config.validate()?;
    Ok(config)
}

/// Expected fraction of a file proven after `t` timestamps, under the
/// independent-sampling approximation: each of `l` winners proves `d` of
/// the `n` chunks per timestamp, each challenged chunk landing on a given
/// chunk with probability d/n, so a chunk stays unproven with probability
/// (1 - d/n)^(l t).
pub fn analytic_coverage(n: u64, d: u64, l: u64, t: u64) -> f64 {
    assert!(d <= n && n > 0, "challenge cannot exceed the chunk count");
    if d == 0 || l == 0 || t == 0 {
        return 0.0;
    }
    if d == n {
        return 1.0;
    }
    let per_round = (-(d as f64) / n as f64).ln_1p();
    1.0 - ((l * t) as f64 * per_round).exp()
}

/// Smallest number of timestamps after which the expected coverage reaches
/// `target`: the closed-form inverse of [`analytic_coverage`].
pub fn solve_timestamps_for_coverage(
    n: u64,
    d: u64,
    l: u64,
    target: f64,
) -> Result<u64, SimError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(SimError::BadTarget);
    }
    if d == 0 || l == 0 {
        return Err(SimError::UnreachableTarget);
    }
    assert!(d <= n && n > 0, "challenge cannot exceed the chunk count");
    if d == n {
        return Ok(1);
    }
    let per_round = (-(d as f64) / n as f64).ln_1p();
    let t = (1.0 - target).ln() / (l as f64 * per_round);
    Ok((t.ceil() as u64).max(1))
}

/// Renders per-timestamp coverage as CSV. Single-file runs use
/// `timestamp,coverage_fraction`; multi-file runs append a `file_id`
/// column and emit one row per file per timestamp.
pub fn coverage_csv(result: &SimResult) -> String {
    let mut out = String::new();
    if result.coverage.len() == 1 {
        out.push_str("timestamp,coverage_fraction\n");
        for (t, frac) in result.coverage[0].history.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", t + 1, frac));
        }
    } else {
        out.push_str("timestamp,coverage_fraction,file_id\n");
        let steps = result
            .coverage
            .iter()
            .map(|c| c.history.len())
            .max()
            .unwrap_or(0);
        for t in 0..steps {
            for cov in &result.coverage {
                if let Some(frac) = cov.history.get(t) {
                    out.push_str(&format!(
                        "{},{:.6},{}\n",
                        t + 1,
                        frac,
                        wire::to_hex(&cov.file_id)
                    ));
                }
            }
        }
    }
    out
}

/// Renders the per-node tally as CSV: `node_id,rewards,failures`.
pub fn nodes_csv(result: &SimResult) -> String {
    let mut out = String::from("node_id,rewards,failures\n");
    for (id, stats) in result.node_stats.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", id, stats.rewards, stats.failures));
    }
    out
}
