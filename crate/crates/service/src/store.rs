//! Durable session storage.
//!
//! Every session lives in its own directory holding an append-only
//! `events.jsonl` and, once enough events have accumulated, a
//! `snapshot.json`. An operation is acknowledged only after its event line
//! has been written and synced, so a crash never loses an acknowledged
//! change. Replay starts from the snapshot and skips logged events it
//! already covers; a torn final line (a crash mid-append) is dropped.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use dedupsec::ingest::parse_report_value;
use dedupsec::{ClusterSet, Dataset, FindingId, SchemaMapping};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ServiceError;
use crate::model::{Event, ReasonTag, Review, ReviewItem, Session, Verdict};

/// Events between snapshots.
pub const SNAPSHOT_EVERY: usize = 32;

#[derive(Serialize, Deserialize)]
struct LogRecord {
    seq: u64,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    session: Session,
}

struct SessionLog {
    session: Session,
    dir: PathBuf,
    log: File,
    seq: u64,
    since_snapshot: usize,
}

pub struct Store {
    root: PathBuf,
    catalog: Vec<SchemaMapping>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionLog>>>>,
}

fn storage(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(e.to_string())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn sync_dir(dir: &Path) -> Result<(), ServiceError> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(storage)
}

impl Store {
    /// Open (or initialize) a data directory and replay every session in it.
    pub fn open(root: impl Into<PathBuf>, catalog: Vec<SchemaMapping>) -> Result<Self, ServiceError> {
        let root = root.into();
        let sessions_dir = root.join("sessions");
        fs::create_dir_all(&sessions_dir).map_err(storage)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&sessions_dir).map_err(storage)? {
            let dir = entry.map_err(storage)?.path();
            if !dir.is_dir() {
                continue;
            }
            let log = replay(&dir)?;
            sessions.insert(log.session.session_id.clone(), Arc::new(Mutex::new(log)));
        }
        Ok(Store {
            root,
            catalog,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn catalog(&self) -> &[SchemaMapping] {
        &self.catalog
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<SessionLog>>, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Read a session under its lock.
    pub fn read<R>(&self, id: &str, f: impl FnOnce(&Session) -> R) -> Result<R, ServiceError> {
        let handle = self.handle(id)?;
        let log = handle.lock().unwrap();
        Ok(f(&log.session))
    }

    pub fn create(&self, dataset: Dataset) -> Result<Session, ServiceError> {
        if dataset.is_empty() {
            return Err(ServiceError::InvalidDataset("dataset has no findings".into()));
        }
        dataset
            .validate()
            .map_err(|e| ServiceError::InvalidDataset(e.to_string()))?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.root.join("sessions").join(&session_id);
        fs::create_dir_all(&dir).map_err(storage)?;
        let event = Event::Created {
            session_id: session_id.clone(),
            dataset,
            at: now(),
        };
        let session = Session::from_created(&event).expect("created event");
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))
            .map_err(storage)?;
        append(&mut log, 1, &event)?;
        sync_dir(&dir)?;
        sync_dir(&self.root.join("sessions"))?;
        let out = session.clone();
        self.sessions.write().unwrap().insert(
            session_id,
            Arc::new(Mutex::new(SessionLog {
                session,
                dir,
                log,
                seq: 1,
                since_snapshot: 1,
            })),
        );
        Ok(out)
    }

    /// Validate and persist one change: `build` inspects the current state
    /// and returns the event to record plus the caller's result.
    fn commit<R>(
        &self,
        id: &str,
        build: impl FnOnce(&Session) -> Result<(Option<Event>, R), ServiceError>,
    ) -> Result<R, ServiceError> {
        let handle = self.handle(id)?;
        let mut guard = handle.lock().unwrap();
        let log = &mut *guard;
        let (event, result) = build(&log.session)?;
        if let Some(event) = event {
            append(&mut log.log, log.seq + 1, &event)?;
            log.seq += 1;
            log.session.apply(&event);
            log.since_snapshot += 1;
            if log.since_snapshot >= SNAPSHOT_EVERY {
                compact(log)?;
            }
        }
        Ok(result)
    }

    /// Parse a scanner report with the catalog and add its findings.
    pub fn add_report(
        &self,
        id: &str,
        tool: &str,
        report: &Value,
        source: Option<&str>,
    ) -> Result<usize, ServiceError> {
        let mapping = self
            .catalog
            .iter()
            .find(|m| m.tool_name == tool)
            .ok_or_else(|| ServiceError::UnknownTool(tool.to_string()))?;
        self.commit(id, |s| {
            if mapping.testing_type != s.dataset.testing_type {
                return Err(ServiceError::InvalidDataset(format!(
                    "{tool} reports {} findings, session holds {}",
                    mapping.testing_type, s.dataset.testing_type
                )));
            }
            let findings = parse_report_value(report, source.unwrap_or(tool), mapping, s.next_finding_id())
                .map_err(|e| ServiceError::InvalidDataset(e.to_string()))?;
            let n = findings.len();
            let mut merged = s.dataset.clone();
            merged.findings.extend(findings.iter().cloned());
            merged
                .validate()
                .map_err(|e| ServiceError::InvalidDataset(e.to_string()))?;
            let event = (n > 0).then(|| Event::FindingsAdded { findings, at: now() });
            Ok((event, n))
        })
    }

    /// Move findings into a named cluster, creating it if needed.
    pub fn assign(&self, id: &str, cluster: &str, finding_ids: &BTreeSet<FindingId>) -> Result<(), ServiceError> {
        if cluster.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("cluster name is empty".into()));
        }
        if finding_ids.is_empty() {
            return Err(ServiceError::InvalidRequest("no finding ids".into()));
        }
        self.commit(id, |s| {
            let known = s.dataset.ids();
            let unknown: Vec<FindingId> = finding_ids.iter().filter(|f| !known.contains(f)).copied().collect();
            if !unknown.is_empty() {
                return Err(ServiceError::UnknownFinding(unknown));
            }
            let event = Event::Assigned {
                cluster: cluster.to_string(),
                finding_ids: finding_ids.iter().copied().collect(),
                at: now(),
            };
            Ok((Some(event), ()))
        })
    }

    pub fn add_reason(&self, id: &str, text: &str) -> Result<ReasonTag, ServiceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::InvalidRequest("reason text is empty".into()));
        }
        self.commit(id, |s| {
            let reason_id = s.next_reason_id();
            let event = Event::ReasonAdded {
                reason_id,
                text: text.to_string(),
                at: now(),
            };
            Ok((
                Some(event),
                ReasonTag {
                    reason_id,
                    text: text.to_string(),
                },
            ))
        })
    }

    /// Start reviewing a prediction. Replaces any earlier review.
    pub fn open_review(&self, id: &str, predicted: ClusterSet) -> Result<Review, ServiceError> {
        self.commit(id, |s| {
            let review = s.build_review(predicted)?;
            Ok((
                Some(Event::ReviewOpened {
                    review: review.clone(),
                    at: now(),
                }),
                review,
            ))
        })
    }

    pub fn tag(
        &self,
        id: &str,
        index: usize,
        verdict: Verdict,
        reasons: &BTreeSet<u32>,
    ) -> Result<ReviewItem, ServiceError> {
        self.commit(id, |s| {
            let review = s.review.as_ref().ok_or(ServiceError::NoReview)?;
            let item = review.items.get(index).ok_or(ServiceError::UnknownReviewItem(index))?;
            if item.verdict != Verdict::Pending {
                return Err(ServiceError::AlreadyTagged(index));
            }
            if verdict == Verdict::Pending {
                return Err(ServiceError::InvalidRequest("verdict must not be pending".into()));
            }
            if reasons.is_empty() {
                return Err(ServiceError::EmptyReasons);
            }
            let unknown: Vec<u32> = reasons.iter().filter(|r| !s.knows_reason(**r)).copied().collect();
            if !unknown.is_empty() {
                return Err(ServiceError::UnknownReason(unknown));
            }
            let tagged = ReviewItem {
                verdict,
                reasons: reasons.clone(),
                ..item.clone()
            };
            let event = Event::Tagged {
                index,
                verdict,
                reasons: reasons.clone(),
                at: now(),
            };
            Ok((Some(event), tagged))
        })
    }
}

fn append(log: &mut File, seq: u64, event: &Event) -> Result<(), ServiceError> {
    let mut line = serde_json::to_vec(&LogRecord {
        seq,
        event: event.clone(),
    })
    .map_err(storage)?;
    line.push(b'\n');
    log.write_all(&line).map_err(storage)?;
    log.sync_data().map_err(storage)
}

/// Write a snapshot, then empty the event log. A crash in between leaves
/// logged events the snapshot already covers; replay skips them by `seq`.
fn compact(log: &mut SessionLog) -> Result<(), ServiceError> {
    let snapshot = serde_json::to_vec(&Snapshot {
        seq: log.seq,
        session: log.session.clone(),
    })
    .map_err(storage)?;
    dedupsec::io::write_atomic(&log.dir.join("snapshot.json"), &snapshot).map_err(storage)?;
    sync_dir(&log.dir)?;
    log.log.set_len(0).map_err(storage)?;
    log.log.sync_all().map_err(storage)?;
    log.since_snapshot = 0;
    Ok(())
}

fn replay(dir: &Path) -> Result<SessionLog, ServiceError> {
    let bad = |what: String| ServiceError::Storage(format!("{}: {what}", dir.display()));
    let snapshot_path = dir.join("snapshot.json");
    let (mut session, mut seq) = if snapshot_path.exists() {
        let text = fs::read(&snapshot_path).map_err(storage)?;
        let snap: Snapshot = serde_json::from_slice(&text).map_err(|e| bad(format!("snapshot: {e}")))?;
        (Some(snap.session), snap.seq)
    } else {
        (None, 0)
    };

    let events_path = dir.join("events.jsonl");
    let mut valid_len: u64 = 0;
    let mut since_snapshot = 0;
    if events_path.exists() {
        let reader = BufReader::new(File::open(&events_path).map_err(storage)?);
        let lines: Vec<Vec<u8>> = reader.split(b'\n').collect::<Result<_, _>>().map_err(storage)?;
        let total = lines.len();
        let file_len = fs::metadata(&events_path).map_err(storage)?.len();
        for (i, line) in lines.iter().enumerate() {
            if line.is_empty() {
                valid_len += 1;
                continue;
            }
            let complete = valid_len + line.len() as u64 + 1 <= file_len;
            match serde_json::from_slice::<LogRecord>(line) {
                Ok(rec) if complete => {
                    valid_len += line.len() as u64 + 1;
                    if rec.seq <= seq {
                        continue;
                    }
                    if rec.seq != seq + 1 {
                        return Err(bad(format!("event {} follows {seq}", rec.seq)));
                    }
                    match &mut session {
                        None => {
                            session = Some(
                                Session::from_created(&rec.event)
                                    .ok_or_else(|| bad("log does not start with creation".into()))?,
                            )
                        }
                        Some(s) => s.apply(&rec.event),
                    }
                    seq = rec.seq;
                    since_snapshot += 1;
                }
                // an unterminated or unreadable last line is a torn append
                _ if i + 1 == total => break,
                Ok(_) => unreachable!("only the last line can be unterminated"),
                Err(e) => return Err(bad(format!("event line {}: {e}", i + 1))),
            }
        }
        if valid_len < file_len {
            let f = OpenOptions::new().write(true).open(&events_path).map_err(storage)?;
            f.set_len(valid_len).map_err(storage)?;
            f.sync_all().map_err(storage)?;
        }
    }
    let session = session.ok_or_else(|| bad("no events".into()))?;
    let log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&events_path)
        .map_err(storage)?;
    Ok(SessionLog {
        session,
        dir: dir.to_path_buf(),
        log,
        seq,
        since_snapshot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dedupsec::builtin_catalog;

    fn dataset() -> Dataset {
        Dataset::from_json_str(
            r#"{"testing_type":"DAST","findings":[
                {"id":1,"tool":"zap","features":{"name":"a"}},
                {"id":2,"tool":"zap","features":{"name":"b"}},
                {"id":3,"tool":"zap","features":{"name":"c"}}]}"#,
        )
        .unwrap()
    }

    fn ids(xs: &[u64]) -> BTreeSet<FindingId> {
        xs.iter().map(|&i| FindingId(i)).collect()
    }

    #[test]
    fn move_semantics_and_garbage_collection() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        let s = store.create(dataset()).unwrap();
        store.assign(&s.session_id, "sql-injection", &ids(&[1, 2])).unwrap();
        store.assign(&s.session_id, "xss", &ids(&[2])).unwrap();
        let clusters = store.read(&s.session_id, |s| s.named_clusters.clone()).unwrap();
        assert_eq!(clusters["sql-injection"], ids(&[1]));
        assert_eq!(clusters["xss"], ids(&[2]));
        store.assign(&s.session_id, "xss", &ids(&[1])).unwrap();
        let clusters = store.read(&s.session_id, |s| s.named_clusters.clone()).unwrap();
        assert!(!clusters.contains_key("sql-injection"));
    }

    #[test]
    fn unknown_finding_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        let s = store.create(dataset()).unwrap();
        assert!(matches!(
            store.assign(&s.session_id, "x", &ids(&[9999])),
            Err(ServiceError::UnknownFinding(v)) if v == vec![FindingId(9999)]
        ));
    }

    #[test]
    fn reopen_replays_log_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let id;
        let before;
        {
            let store = Store::open(dir.path(), builtin_catalog()).unwrap();
            id = store.create(dataset()).unwrap().session_id;
            for i in 0..(SNAPSHOT_EVERY * 2 + 3) {
                store
                    .assign(&id, &format!("c{}", i % 3), &ids(&[(i % 3) as u64 + 1]))
                    .unwrap();
            }
            before = store.read(&id, Session::clone).unwrap();
        }
        assert!(dir.path().join("sessions").join(&id).join("snapshot.json").exists());
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        assert_eq!(store.read(&id, Session::clone).unwrap(), before);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let id;
        {
            let store = Store::open(dir.path(), builtin_catalog()).unwrap();
            id = store.create(dataset()).unwrap().session_id;
            store.assign(&id, "a", &ids(&[1])).unwrap();
        }
        let events = dir.path().join("sessions").join(&id).join("events.jsonl");
        let mut f = OpenOptions::new().append(true).open(&events).unwrap();
        f.write_all(br#"{"seq":3,"event":{"kind":"assig"#).unwrap();
        drop(f);
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        assert_eq!(store.read(&id, |s| s.named_clusters.len()).unwrap(), 1);
        store.assign(&id, "b", &ids(&[2])).unwrap();
        drop(store);
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        assert_eq!(store.read(&id, |s| s.named_clusters.len()).unwrap(), 2);
    }

    #[test]
    fn empty_dataset_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), builtin_catalog()).unwrap();
        let empty = Dataset::from_json_str(r#"{"testing_type":"SAST","findings":[]}"#).unwrap();
        assert!(matches!(store.create(empty), Err(ServiceError::InvalidDataset(_))));
    }
}
