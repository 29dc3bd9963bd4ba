//! Checkpointing, failure injection, and recovery.
//!
//! Checkpoints capture a client's mid-round training state — model params
//! plus the RNG stream cursor — so a failed client replays the exact
//! trajectory of an uninterrupted run. The on-disk format is versioned
//! binary: magic `FSCP`, format version, identity fields, little-endian
//! f64 params, the 16-byte stream cursor, and a trailing CRC32.
//!
//! Failures are injected per round: each selected client independently
//! fails with `failure_prob_per_round`, at a step uniform over its local
//! schedule. The sampler consumes a fixed number of draws per client
//! whether or not the client fails, so failure schedules at different
//! probabilities are coupled (a client that fails at p=0.1 also fails, at
//! the same step, at p=0.2), which makes cross-probability sweeps
//! monotone comparisons rather than re-randomizations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSCP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Behavioral fault-tolerance knobs. The time costs of saves and restores
/// live in [`crate::cost::CostModel`], which the orchestrator shares with
/// this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultToleranceConfig {
    /// Toggles checkpointing and recovery. Failure injection is governed
    /// only by `failure_prob_per_round`: with this off, failed clients
    /// simply drop out of the round.
    pub enabled: bool,
    /// Checkpoint every `t_c` completed local steps.
    pub checkpoint_interval_steps: u64,
    pub failure_prob_per_round: f64,
}

impl FaultToleranceConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, checkpoint_interval_steps: 1, failure_prob_per_round: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && self.checkpoint_interval_steps == 0 {
            return Err(Error::Parameter(
                "checkpoint interval must be at least 1 step".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.failure_prob_per_round) {
            return Err(Error::Parameter(format!(
                "failure probability must lie in [0, 1), got {}",
                self.failure_prob_per_round
            )));
        }
        Ok(())
    }
}

/// A client's saved training state at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub client_id: u64,
    pub round: u64,
    /// Completed local steps at save time; always a multiple of `t_c`.
    pub step: u64,
    pub model_params: Vec<f64>,
    /// ChaCha word position to restore before re-deriving the current
    /// epoch's draws.
    pub rng_cursor: u128,
    pub format_version: u32,
}

impl CheckpointRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 + 4 + 8 * 4 + self.model_params.len() * 8 + 16 + 4);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&self.format_version.to_le_bytes());
        buf.extend_from_slice(&self.client_id.to_le_bytes());
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.model_params.len() as u64).to_le_bytes());
        for p in &self.model_params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf.extend_from_slice(&self.rng_cursor.to_le_bytes());
        let crc = crc32(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("bad magic bytes".into()));
        }
        let format_version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported format version {format_version}"
            )));
        }
        let client_id = r.take_u64()?;
        let round = r.take_u64()?;
        let step = r.take_u64()?;
        let count = r.take_u64()? as usize;
        let body_len = 4 + 4 + 8 * 4 + count * 8 + 16;
        if bytes.len() != body_len + 4 {
            return Err(Error::Integrity(format!(
                "length {} does not match declared param count {count}",
                bytes.len()
            )));
        }
        let mut model_params = Vec::with_capacity(count);
        for _ in 0..count {
            model_params.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let rng_cursor = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let stored_crc = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let actual = crc32(&bytes[..body_len]);
        if stored_crc != actual {
            return Err(Error::Integrity(format!(
                "crc mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
            )));
        }
        if !model_params.iter().all(|p| p.is_finite()) {
            return Err(Error::Integrity("non-finite parameter".into()));
        }
        Ok(Self { client_id, round, step, model_params, rng_cursor, format_version })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Integrity("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// CRC-32 (IEEE 802.3, reflected 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Directory-backed checkpoint store with latest-wins retention per
/// `(client, round)` key: `<root>/client_<id>/round_<t>.ckpt`.
///
/// Distinct keys map to distinct files, so concurrent clients may save
/// without coordination; a single key is only ever written by its client.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)
            .map_err(|e| Error::Storage(format!("create {}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, client_id: u64, round: u64) -> PathBuf {
        self.root
            .join(format!("client_{client_id}"))
            .join(format!("round_{round}.ckpt"))
    }

    /// Persist `record`, replacing any earlier checkpoint for the same key.
    pub fn save(&self, record: &CheckpointRecord) -> Result<()> {
        let path = self.path_for(record.client_id, record.round);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| Error::Storage(format!("create {}: {e}", dir.display())))?;
        }
        fs::write(&path, record.encode())
            .map_err(|e| Error::Storage(format!("write {}: {e}", path.display())))
    }

    /// Fetch the latest checkpoint for `(client_id, round)`, `None` when
    /// absent, or an integrity error when the bytes fail validation.
    pub fn load(&self, client_id: u64, round: u64) -> Result<Option<CheckpointRecord>> {
        let path = self.path_for(client_id, round);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::Storage(format!("read {}: {e}", path.display()))),
        };
        CheckpointRecord::decode(&bytes).map(Some)
    }
}

/// True when a checkpoint is due after `step` completed steps.
pub fn should_checkpoint(step: u64, t_c: u64) -> bool {
    debug_assert!(step >= 1 && t_c >= 1);
    step % t_c == 0
}

/// One injected client failure: the client crashes while executing the
/// step that would bring its completed count to `fail_at_step + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureEvent {
    pub client_id: u64,
    pub round: u64,
    pub fail_at_step: u64,
}

/// Bernoulli failure injection over the selected set. Draws are consumed
/// for every client regardless of outcome (see module docs).
pub fn sample_failures(
    selected: &[u64],
    round: u64,
    cfg: &FaultToleranceConfig,
    rng: &mut impl Rng,
    steps_per_client: &[u64],
) -> Vec<FailureEvent> {
    debug_assert_eq!(selected.len(), steps_per_client.len());
    let mut events = Vec::new();
    for (&client_id, &steps) in selected.iter().zip(steps_per_client) {
        let u: f64 = rng.random();
        let raw: u64 = rng.random();
        if u < cfg.failure_prob_per_round && steps > 0 {
            events.push(FailureEvent { client_id, round, fail_at_step: raw % steps });
        }
    }
    events
}

/// Where a failed client resumes: a checkpointed state, or round-initial.
#[derive(Debug, Clone, PartialEq)]
pub enum ResumePoint {
    /// No checkpoint: restart the round's local pass from step 0.
    FromStart,
    /// Resume after `step` completed steps with the saved params and cursor.
    FromCheckpoint { step: u64, model_params: Vec<f64>, rng_cursor: u128 },
}

/// Resolve the resume point for `(client_id, round)`. A corrupt checkpoint
/// surfaces as an integrity error; the orchestrator falls back to
/// [`ResumePoint::FromStart`] after logging it.
pub fn recover(client_id: u64, round: u64, store: &CheckpointStore) -> Result<ResumePoint> {
    match store.load(client_id, round)? {
        None => Ok(ResumePoint::FromStart),
        Some(rec) => Ok(ResumePoint::FromCheckpoint {
            step: rec.step,
            model_params: rec.model_params,
            rng_cursor: rec.rng_cursor,
        }),
    }
}
