use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    CaptionError, CaptionRequest, Captioner, Decision, Event, IngestOutcome, ItemState, NewItem, ReviewError,
    ReviewState,
};

const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    /// Where the log and snapshots live; `None` keeps everything in memory.
    pub dir: Option<PathBuf>,
    pub seed: u64,
    /// Write a snapshot after this many events; 0 never does.
    pub snapshot_every: u64,
    /// Stamp log lines with wall-clock milliseconds.
    pub record_time: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dir: None,
            seed: 0,
            snapshot_every: 200,
            record_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    at_ms: Option<u64>,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: ReviewState,
}

/// One line of the export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub image: String,
    pub caption: String,
    pub prompt: super::PromptKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelabelReport {
    pub relabeled: Vec<String>,
    /// Item id and reason; these stay as they were and can be retried.
    pub failed: Vec<(String, String)>,
    /// Whether a rejected batch went back to review.
    pub requeued: bool,
}

/// Owns the state and its append-only event log. All changes go through
/// here, one at a time.
pub struct Store {
    config: StoreConfig,
    state: ReviewState,
    log: Vec<Event>,
    writer: Option<BufWriter<File>>,
    since_snapshot: u64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReviewError {
    ReviewError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Store {
    pub fn in_memory(seed: u64) -> Self {
        Self::open(StoreConfig {
            seed,
            ..Default::default()
        })
        .expect("an in-memory store cannot fail to open")
    }

    /// Opens or creates a store, rebuilding state from the full log. A
    /// snapshot, when present, must agree with the replayed log.
    pub fn open(config: StoreConfig) -> Result<Self, ReviewError> {
        let mut log = Vec::new();
        let mut writer = None;
        if let Some(dir) = &config.dir {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(LOG_FILE);
            if path.exists() {
                log = read_log(&path)?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            writer = Some(BufWriter::new(f));
        }
        let state = ReviewState::replay(&log)?;
        if let Some(dir) = &config.dir {
            let snap_path = dir.join(SNAPSHOT_FILE);
            if snap_path.exists() {
                let text = fs::read_to_string(&snap_path).map_err(|e| io_err(&snap_path, e))?;
                let snap: Snapshot =
                    serde_json::from_str(&text).map_err(|e| ReviewError::Corrupt(format!("snapshot: {e}")))?;
                if snap.state.seq > state.seq {
                    return Err(ReviewError::Corrupt(format!(
                        "snapshot is at event {} but the log ends at {}",
                        snap.state.seq, state.seq
                    )));
                }
                let prefix = ReviewState::replay(&log[..snap.state.seq as usize])?;
                if prefix != snap.state {
                    return Err(ReviewError::Corrupt("snapshot disagrees with the event log".into()));
                }
            }
        }
        Ok(Self {
            config,
            state,
            log,
            writer,
            since_snapshot: 0,
        })
    }

    pub fn state(&self) -> &ReviewState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    fn commit(&mut self, events: Vec<Event>) -> Result<(), ReviewError> {
        for e in events {
            let mut next = self.state.clone();
            next.apply(&e)?;
            if let Some(w) = &mut self.writer {
                let line = LogLine {
                    seq: next.seq,
                    at_ms: self.config.record_time.then(now_ms),
                    event: e.clone(),
                };
                let path = self.config.dir.as_deref().unwrap_or(Path::new(LOG_FILE));
                serde_json::to_writer(&mut *w, &line).map_err(|err| io_err(path, err))?;
                w.write_all(b"\n").map_err(|err| io_err(path, err))?;
                w.flush().map_err(|err| io_err(path, err))?;
            }
            self.state = next;
            self.log.push(e);
            self.since_snapshot += 1;
        }
        if self.config.snapshot_every > 0 && self.since_snapshot >= self.config.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Flushes the log and writes a snapshot of the current state.
    pub fn snapshot(&mut self) -> Result<(), ReviewError> {
        self.since_snapshot = 0;
        let Some(dir) = self.config.dir.clone() else {
            return Ok(());
        };
        if let Some(w) = &mut self.writer {
            w.flush().map_err(|e| io_err(&dir, e))?;
            w.get_ref().sync_all().map_err(|e| io_err(&dir, e))?;
        }
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = serde_json::to_string(&Snapshot {
            state: self.state.clone(),
        })
        .map_err(|e| io_err(&tmp, e))?;
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE)).map_err(|e| io_err(&dir, e))
    }

    pub fn ingest(&mut self, source_id: &str, items: Vec<NewItem>) -> Result<IngestOutcome, ReviewError> {
        let (outcome, events) = self.state.plan_ingest(source_id, items, self.config.seed)?;
        self.commit(events)?;
        Ok(outcome)
    }

    pub fn start_review(&mut self, batch_id: &str) -> Result<(), ReviewError> {
        let events = self.state.plan_start_review(batch_id)?;
        self.commit(events)
    }

    pub fn decide(&mut self, batch_id: &str, decision: Decision) -> Result<(), ReviewError> {
        let events = self.state.plan_decision(batch_id, decision, self.config.seed)?;
        self.commit(events)
    }

    pub fn edit_caption(&mut self, item_id: &str, caption: &str, editor: &str) -> Result<(), ReviewError> {
        let events = self.state.plan_edit(item_id, caption, editor)?;
        self.commit(events)
    }

    /// Caption requests for the items of `batch_id` that need one.
    pub fn caption_requests(&self, batch_id: &str) -> Result<Vec<(String, CaptionRequest)>, ReviewError> {
        let batch = self.state.batch(batch_id)?;
        let feedback = (batch.status == super::BatchStatus::Rejected)
            .then(|| batch.feedback.clone())
            .flatten();
        Ok(self
            .state
            .caption_targets(batch_id)?
            .into_iter()
            .map(|it| {
                (
                    it.id.clone(),
                    CaptionRequest {
                        image_ref: it.image.clone(),
                        prompt: it.prompt.prompt().to_string(),
                        feedback: feedback.clone(),
                    },
                )
            })
            .collect())
    }

    /// Records caption results gathered outside the store.
    pub fn apply_captions(
        &mut self,
        batch_id: &str,
        results: Vec<(String, Result<String, CaptionError>)>,
    ) -> Result<RelabelReport, ReviewError> {
        let mut report = RelabelReport::default();
        let mut ok = Vec::new();
        for (id, r) in results {
            match r {
                Ok(c) if !c.trim().is_empty() => ok.push((id, c)),
                Ok(_) => report.failed.push((id, CaptionError::Malformed("empty caption".into()).to_string())),
                Err(e) => report.failed.push((id, e.to_string())),
            }
        }
        let events = self.state.plan_captions(batch_id, &ok)?;
        report.requeued = events.iter().any(|e| matches!(e, Event::Requeued { .. }));
        report.relabeled = ok.into_iter().map(|(id, _)| id).collect();
        self.commit(events)?;
        Ok(report)
    }

    /// Captions new items of a caption batch, or relabels the returned items
    /// of a rejected one with the inspector's feedback.
    pub fn request_relabel(&mut self, batch_id: &str, captioner: &dyn Captioner) -> Result<RelabelReport, ReviewError> {
        let results = self
            .caption_requests(batch_id)?
            .into_iter()
            .map(|(id, req)| (id, captioner.caption(&req)))
            .collect();
        self.apply_captions(batch_id, results)
    }

    /// Approved items sorted by id.
    pub fn export(&self) -> Vec<ExportRecord> {
        self.state
            .items
            .values()
            .filter(|it| it.state == ItemState::Approved)
            .map(|it| ExportRecord {
                id: it.id.clone(),
                image: it.image.clone(),
                caption: it.caption.clone().expect("approved items carry a caption"),
                prompt: it.prompt,
            })
            .collect()
    }

    pub fn export_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.export() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if let Some(w) = &mut self.writer {
            let _ = w.flush();
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_log(path: &Path) -> Result<Vec<Event>, ReviewError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogLine = serde_json::from_str(&line)
            .map_err(|e| ReviewError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.seq != out.len() as u64 + 1 {
            return Err(ReviewError::Corrupt(format!(
                "{}:{}: expected event {}, found {}",
                path.display(),
                i + 1,
                out.len() + 1,
                rec.seq
            )));
        }
        out.push(rec.event);
    }
    Ok(out)
}
