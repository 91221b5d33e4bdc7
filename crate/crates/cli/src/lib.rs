//! Implementation of the `imukey` binary's subcommands. Each command is
//! a function over parsed arguments so the pieces stay testable without
//! spawning processes; `main` only maps errors to exit codes.
//!
//! Exit code contract: 0 on success, 2 for configuration errors
//! (unreadable or invalid config, bad CLI values), 3 for data and model
//! errors (missing or malformed inputs, kind mismatches, leaked users).
//!
//! Every command is deterministic given its seed. Output files never
//! embed wall-clock state; the one exception is the training loss CSV,
//! whose per-epoch seconds column is a timing diagnostic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use imukey_core::passwords::Password;
use imukey_core::simwatch::MotionSegment;

pub mod attack;
pub mod energy;
pub mod gen;
pub mod plot;
pub mod train;

mod diag;

pub use diag::{cmd_enum_apl, cmd_gradcheck};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn data_err(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Reads and parses a `key = value` config file. Both failure modes are
/// configuration errors: without a readable config there is no run.
pub fn load_kv(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    imukey_core::trainer::parse_kv(&text).map_err(config_err)
}

/// Typed lookup with a default for absent keys.
pub fn kv_get<T: std::str::FromStr>(
    kv: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> CliResult<T> {
    match kv.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| CliError::Config(format!("config key {key}: bad value {raw:?}"))),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Companion file path: the suffix is appended to the full name, so
/// `data.jsonl` keeps its identity inside `data.jsonl.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, ".manifest.json")
}

/// User-disjoint split by sorted user id: the last fifth (at least one
/// user, never all of them) is held out for validation.
pub fn split_users(users: &BTreeSet<u32>) -> CliResult<(BTreeSet<u32>, BTreeSet<u32>)> {
    if users.len() < 2 {
        return Err(CliError::Data(format!(
            "need at least two users for a user-disjoint split, got {}",
            users.len()
        )));
    }
    let n_val = (users.len() as f64 * 0.2).round().max(1.0) as usize;
    let n_val = n_val.min(users.len() - 1);
    let sorted: Vec<u32> = users.iter().copied().collect();
    let train = sorted[..sorted.len() - n_val].iter().copied().collect();
    let val = sorted[sorted.len() - n_val..].iter().copied().collect();
    Ok((train, val))
}

/// Copies `[start, end)` out of a labeled segment, dropping labels: the
/// result is model input, not annotation.
pub fn slice_segment(seg: &MotionSegment, start: usize, end: usize) -> MotionSegment {
    let mut out = MotionSegment::with_rate(seg.rate_hz);
    for s in &seg.samples[start..end] {
        out.push(s.accel, s.gyro);
    }
    out
}

/// The password-entry span of an episode, or the whole segment when no
/// entry is labeled (bare captures carry no annotation).
pub fn entry_bounds(seg: &MotionSegment) -> (usize, usize) {
    seg.spans_of(|k| k.is_password_entry())
        .first()
        .map(|s| (s.start, s.end))
        .unwrap_or((0, seg.len()))
}

/// Written next to every generated dataset. `db` fixes the password
/// database and its order; seq2pwd class indices refer to it.
#[derive(Serialize, Deserialize)]
pub struct GenManifest {
    pub command: String,
    pub kind: String,
    pub style: String,
    pub seed: u64,
    pub db_seed: u64,
    pub db_size: usize,
    pub db_skew: f64,
    pub device: String,
    pub rate_hz: u32,
    pub snr_db: f64,
    pub users: Vec<u32>,
    pub passwords_per_user: usize,
    pub repetitions: usize,
    pub background_per_user: usize,
    pub records: usize,
    pub db: Vec<Password>,
    pub data_sha256: String,
    pub config_sha256: String,
}

/// Written next to every trained model. Downstream attack runs consult
/// only the user id sets; everything else is provenance.
#[derive(Serialize, Deserialize)]
pub struct TrainManifest {
    pub command: String,
    pub model_kind: String,
    pub seed: u64,
    pub train_users: Vec<u32>,
    pub val_users: Vec<u32>,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub train_device: Option<String>,
    pub data_sha256: String,
    pub config_sha256: String,
}

pub fn write_manifest<T: Serialize>(path: &Path, manifest: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(data_err)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Data(format!("manifest {}: {e}", path.display())))
}
