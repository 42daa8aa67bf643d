//! Append-only NDJSON record of analytical requests.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use cdw_core::warehouse::sha256_hex;

pub const ACCESS_LOG_FILE: &str = "access.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Query,
    Drill,
    Report,
    Catalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub operation: Operation,
    /// sha256 of the request body, or of `path?query` for bodiless requests.
    pub request_digest: String,
    pub duration_ms: u64,
    /// `ok` or `error:<code>`.
    pub outcome: String,
}

pub fn digest(request: &[u8]) -> String {
    sha256_hex(request)
}

pub fn outcome<T>(result: &Result<T, cdw_core::Error>) -> String {
    match result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("error:{}", e.code()),
    }
}

pub fn log_path(warehouse: &Path) -> PathBuf {
    warehouse.join(ACCESS_LOG_FILE)
}

/// Appends one line. A single `write` of a full line keeps concurrent
/// appenders from interleaving.
pub fn append(path: &Path, entry: &AccessLogEntry) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct AccessLogFilter {
    pub actor: Option<String>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl AccessLogFilter {
    pub fn matches(&self, e: &AccessLogEntry) -> bool {
        self.actor.as_ref().is_none_or(|a| *a == e.actor)
            && self.since.is_none_or(|t| e.timestamp >= t)
            && self.until.is_none_or(|t| e.timestamp <= t)
    }
}

/// Entries matching `filter` in timestamp order; a missing log reads empty.
pub fn read(path: &Path, filter: &AccessLogFilter) -> anyhow::Result<Vec<AccessLogEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: AccessLogEntry = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if filter.matches(&entry) {
            out.push(entry);
        }
    }
    out.sort_by_key(|e| e.timestamp);
    Ok(out)
}

type Request = (AccessLogEntry, oneshot::Sender<io::Result<()>>);

/// Serializes appends from concurrent handlers through one task.
#[derive(Clone)]
pub struct AccessLogWriter {
    tx: mpsc::Sender<Request>,
}

impl AccessLogWriter {
    /// Must be called inside a tokio runtime.
    pub fn spawn(path: PathBuf) -> Self {
        let (tx, mut rx) = mpsc::channel::<Request>(256);
        tokio::spawn(async move {
            while let Some((entry, done)) = rx.recv().await {
                let path = path.clone();
                let result = tokio::task::spawn_blocking(move || append(&path, &entry))
                    .await
                    .unwrap_or_else(|e| Err(io::Error::other(e)));
                let _ = done.send(result);
            }
        });
        AccessLogWriter { tx }
    }

    /// Resolves once the entry is on disk.
    pub async fn record(&self, entry: AccessLogEntry) -> io::Result<()> {
        let (done, wait) = oneshot::channel();
        self.tx
            .send((entry, done))
            .await
            .map_err(|_| io::Error::other("access log writer stopped"))?;
        wait.await.map_err(|_| io::Error::other("access log writer stopped"))?
    }
}
