//! Live trial sessions, persisted as one append-only JSON-lines log each.
//!
//! Every mutation is written and synced to the log before it is applied in
//! memory, so a restarted service replays exactly the acknowledged blocks.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use blockrar::{BlockAction, ContingencyState, StratumTable};
use serde::{Deserialize, Serialize};

pub const LOG_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedBlock {
    pub action: BlockAction,
    pub stratum: StratumTable,
    pub timestamp_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Record {
    Created {
        session_id: String,
        policy_id: String,
        timestamp_ms: u64,
    },
    Block(LoggedBlock),
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub policy_id: String,
    pub created_ms: u64,
    pub blocks: Vec<LoggedBlock>,
    state: ContingencyState,
    log: PathBuf,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A fresh random 128-bit identifier.
pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn append_line(path: &Path, record: &Record) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()
}

impl Session {
    pub fn create(dir: &Path, policy_id: &str) -> std::io::Result<Self> {
        let id = new_session_id();
        let log = dir.join(format!("{id}.{LOG_EXTENSION}"));
        let created_ms = now_ms();
        append_line(
            &log,
            &Record::Created {
                session_id: id.clone(),
                policy_id: policy_id.to_string(),
                timestamp_ms: created_ms,
            },
        )?;
        Ok(Session {
            id,
            policy_id: policy_id.to_string(),
            created_ms,
            blocks: Vec::new(),
            state: ContingencyState::EMPTY,
            log,
        })
    }

    /// Rebuilds a session by replaying its log.
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut lines = BufReader::new(f).lines();
        let first = lines.next().context("empty session log")??;
        let Record::Created {
            session_id,
            policy_id,
            timestamp_ms,
        } = serde_json::from_str(&first)?
        else {
            bail!("session log does not start with a creation record");
        };
        let mut session = Session {
            id: session_id,
            policy_id,
            created_ms: timestamp_ms,
            blocks: Vec::new(),
            state: ContingencyState::EMPTY,
            log: path.to_path_buf(),
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).with_context(|| format!("line {}", i + 2))? {
                Record::Block(b) => session.apply(b),
                Record::Created { .. } => bail!("line {}: duplicate creation record", i + 2),
            }
        }
        Ok(session)
    }

    pub fn current_state(&self) -> ContingencyState {
        self.state
    }

    /// Cumulative table rebuilt from the logged strata.
    pub fn replayed_state(&self) -> ContingencyState {
        self.blocks.iter().fold(ContingencyState::EMPTY, |s, b| s + b.stratum)
    }

    /// Persists `block`, then applies it.
    pub fn append(&mut self, block: LoggedBlock) -> std::io::Result<()> {
        append_line(&self.log, &Record::Block(block))?;
        self.apply(block);
        Ok(())
    }

    fn apply(&mut self, block: LoggedBlock) {
        self.state = self.state + block.stratum;
        self.blocks.push(block);
    }
}
