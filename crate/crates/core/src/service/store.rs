//! Task queue with leases plus an append-only judgment log that is replayed on open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{judgments_to_jsonl, Choice, ItemId, Source, TripletJudgment};
use crate::error::{Error, Result};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
    #[error(transparent)]
    Storage(#[from] Error),
}

type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub triplet_id: String,
    pub anchor: ItemId,
    pub left: ItemId,
    pub right: ItemId,
}

#[derive(Deserialize)]
struct RawTask {
    triplet_id: Option<String>,
    anchor: ItemId,
    left: ItemId,
    right: ItemId,
}

/// Reads a task list: JSONL with `anchor`, `left`, `right` and an optional
/// `triplet_id` (defaults to `t<line index>`). Judgment JSONL files qualify too.
pub fn parse_tasks(text: &str, origin: &Path) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTask =
            serde_json::from_str(line).map_err(|e| Error::format(origin, Some(i + 1), e.to_string()))?;
        if raw.anchor == raw.left || raw.anchor == raw.right || raw.left == raw.right {
            return Err(Error::format(origin, Some(i + 1), "triplet ids must be pairwise distinct"));
        }
        let id = raw.triplet_id.unwrap_or_else(|| format!("t{:04}", tasks.len()));
        if !seen.insert(id.clone()) {
            return Err(Error::format(origin, Some(i + 1), format!("duplicate triplet id {id:?}")));
        }
        tasks.push(Task {
            triplet_id: id,
            anchor: raw.anchor,
            left: raw.left,
            right: raw.right,
        });
    }
    Ok(tasks)
}

pub fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tasks(&text, path)
}

/// One log line. Undo appends a copy of the undone record with `superseded` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub triplet_id: String,
    pub session: String,
    pub received_at: DateTime<Utc>,
    #[serde(default)]
    pub superseded: bool,
    pub judgment: TripletJudgment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub completed: usize,
    pub skipped: usize,
    pub in_flight: usize,
    pub pending: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub triplet_id: String,
    pub choice: Choice,
    pub record: usize,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leased {
    pub task: Task,
    pub lease_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextTask {
    Task(Leased),
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Undone {
    pub triplet_id: String,
    pub task: Leased,
}

#[derive(Debug, Clone)]
struct Lease {
    session: String,
    annotator: String,
    expires: DateTime<Utc>,
}

pub struct Store {
    tasks: Vec<Task>,
    by_id: HashMap<String, usize>,
    log_path: PathBuf,
    log: File,
    records: Vec<JudgmentRecord>,
    /// Active record per (task, annotator).
    active: HashMap<(usize, String), usize>,
    leases: HashMap<usize, Lease>,
    /// Task leased by each session.
    held: HashMap<String, usize>,
    acks: HashMap<(usize, String), Ack>,
    /// Active records per session, newest last.
    history: HashMap<String, Vec<usize>>,
    lease_timeout: Duration,
}

impl Store {
    /// Opens (creating if needed) the log at `log_path` and replays it.
    pub fn open(tasks: Vec<Task>, log_path: &Path, lease_timeout: Duration) -> Result<Self> {
        let by_id = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.triplet_id.clone(), i))
            .collect();
        let existing = match std::fs::read_to_string(log_path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(log_path, e)),
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|e| Error::io(log_path, e))?;
        let mut store = Store {
            tasks,
            by_id,
            log_path: log_path.to_path_buf(),
            log,
            records: Vec::new(),
            active: HashMap::new(),
            leases: HashMap::new(),
            held: HashMap::new(),
            acks: HashMap::new(),
            history: HashMap::new(),
            lease_timeout,
        };
        for (i, line) in existing.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: JudgmentRecord =
                serde_json::from_str(line).map_err(|e| Error::format(log_path, Some(i + 1), e.to_string()))?;
            let task = *store.by_id.get(&rec.triplet_id).ok_or_else(|| {
                Error::format(
                    log_path,
                    Some(i + 1),
                    format!("triplet {:?} is not in the task list", rec.triplet_id),
                )
            })?;
            store.apply(task, rec);
        }
        Ok(store)
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn records(&self) -> &[JudgmentRecord] {
        &self.records
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Updates the in-memory indexes for one record already on disk.
    fn apply(&mut self, task: usize, rec: JudgmentRecord) {
        let annotator = rec.judgment.annotator.clone().unwrap_or_default();
        let idx = self.records.len();
        let key = (task, annotator.clone());
        if rec.superseded {
            if let Some(prev) = self.active.remove(&key) {
                let session = self.records[prev].session.clone();
                self.acks.remove(&(task, session.clone()));
                if let Some(h) = self.history.get_mut(&session) {
                    h.retain(|&r| r != prev);
                }
            }
        } else {
            self.active.insert(key, idx);
            self.history.entry(rec.session.clone()).or_default().push(idx);
            let completed = self.completed_by(&annotator);
            self.acks.insert(
                (task, rec.session.clone()),
                Ack {
                    triplet_id: rec.triplet_id.clone(),
                    choice: rec.judgment.choice,
                    record: idx,
                    completed,
                    total: self.tasks.len(),
                },
            );
        }
        self.records.push(rec);
    }

    fn append(&mut self, task: usize, rec: JudgmentRecord) -> Result<usize> {
        let mut line = serde_json::to_string(&rec).expect("records serialize");
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| Error::io(&self.log_path, e))?;
        let idx = self.records.len();
        self.apply(task, rec);
        Ok(idx)
    }

    fn completed_by(&self, annotator: &str) -> usize {
        self.active.keys().filter(|(_, a)| a == annotator).count()
    }

    fn lease_live(&self, task: usize, now: DateTime<Utc>) -> Option<&Lease> {
        self.leases.get(&task).filter(|l| l.expires > now)
    }

    fn grant(&mut self, task: usize, session: &str, annotator: &str, now: DateTime<Utc>) -> Leased {
        if let Some(old) = self.held.insert(session.to_string(), task) {
            if old != task {
                self.leases.remove(&old);
            }
        }
        let expires = now + self.lease_timeout;
        self.leases.insert(
            task,
            Lease {
                session: session.to_string(),
                annotator: annotator.to_string(),
                expires,
            },
        );
        Leased {
            task: self.tasks[task].clone(),
            lease_expires_at: expires,
        }
    }

    /// The session's current lease if still valid, else the earliest task this
    /// annotator has not judged and no other session holds.
    pub fn next_task(&mut self, annotator: &str, session: &str, now: DateTime<Utc>) -> ServiceResult<NextTask> {
        if annotator.trim().is_empty() || session.trim().is_empty() {
            return Err(ServiceError::BadRequest("annotator and session must be non-empty".into()));
        }
        if self.tasks.is_empty() {
            return Err(ServiceError::Unavailable("the task queue is empty".into()));
        }
        if let Some(&t) = self.held.get(session) {
            if let Some(l) = self.lease_live(t, now) {
                if l.session == session && l.annotator == annotator {
                    return Ok(NextTask::Task(Leased {
                        task: self.tasks[t].clone(),
                        lease_expires_at: l.expires,
                    }));
                }
            }
        }
        let free = (0..self.tasks.len()).find(|&t| {
            !self.active.contains_key(&(t, annotator.to_string()))
                && self.lease_live(t, now).is_none_or(|l| l.session == session)
        });
        Ok(match free {
            Some(t) => NextTask::Task(self.grant(t, session, annotator, now)),
            None => NextTask::Done,
        })
    }

    /// Records the session's choice for its leased triplet. Resubmitting the same
    /// (triplet, session) returns the original acknowledgement.
    pub fn submit(&mut self, triplet_id: &str, choice: Choice, session: &str, now: DateTime<Utc>) -> ServiceResult<Ack> {
        let task = *self
            .by_id
            .get(triplet_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown triplet {triplet_id:?}")))?;
        if let Some(ack) = self.acks.get(&(task, session.to_string())) {
            return Ok(ack.clone());
        }
        let lease = match self.lease_live(task, now) {
            Some(l) if l.session == session => l.clone(),
            _ => {
                return Err(ServiceError::Conflict(format!(
                    "session {session:?} holds no live lease on triplet {triplet_id:?}"
                )))
            }
        };
        let t = &self.tasks[task];
        let judgment = TripletJudgment::new(
            t.anchor.clone(),
            t.left.clone(),
            t.right.clone(),
            choice,
            Source::Human,
            Some(lease.annotator.clone()),
            now,
        )?;
        let rec = JudgmentRecord {
            triplet_id: triplet_id.to_string(),
            session: session.to_string(),
            received_at: now,
            superseded: false,
            judgment,
        };
        self.append(task, rec)?;
        self.leases.remove(&task);
        self.held.remove(session);
        Ok(self.acks[&(task, session.to_string())].clone())
    }

    /// Supersedes the session's latest active judgment and leases that triplet back to it.
    pub fn undo(&mut self, session: &str, now: DateTime<Utc>) -> ServiceResult<Undone> {
        let last = self
            .history
            .get(session)
            .and_then(|h| h.last().copied())
            .ok_or_else(|| ServiceError::Conflict(format!("session {session:?} has nothing to undo")))?;
        let mut rec = self.records[last].clone();
        let task = self.by_id[&rec.triplet_id];
        if let Some(l) = self.lease_live(task, now) {
            if l.session != session {
                return Err(ServiceError::Conflict(format!(
                    "triplet {:?} is leased by another session",
                    rec.triplet_id
                )));
            }
        }
        rec.superseded = true;
        rec.received_at = now;
        let annotator = rec.judgment.annotator.clone().unwrap_or_default();
        let triplet_id = rec.triplet_id.clone();
        self.append(task, rec)?;
        let leased = self.grant(task, session, &annotator, now);
        Ok(Undone {
            triplet_id,
            task: leased,
        })
    }

    /// Counts for one annotator, or across annotators (a triplet counts as
    /// completed once anyone has an active judgment on it).
    pub fn progress(&self, annotator: Option<&str>, now: DateTime<Utc>) -> Progress {
        let total = self.tasks.len();
        let judged = |t: usize| -> Option<usize> {
            match annotator {
                Some(a) => self.active.get(&(t, a.to_string())).copied(),
                None => self
                    .active
                    .iter()
                    .filter(|((task, _), _)| *task == t)
                    .map(|(_, &r)| r)
                    .min(),
            }
        };
        let mut completed = 0;
        let mut skipped = 0;
        let mut in_flight = 0;
        for t in 0..total {
            if let Some(r) = judged(t) {
                completed += 1;
                if self.records[r].judgment.choice == Choice::Skipped {
                    skipped += 1;
                }
            } else if self
                .lease_live(t, now)
                .is_some_and(|l| annotator.is_none_or(|a| l.annotator == a))
            {
                in_flight += 1;
            }
        }
        Progress {
            completed,
            skipped,
            in_flight,
            pending: total - completed - in_flight,
            total,
        }
    }

    /// Active judgments in submission order.
    pub fn export(&self) -> Vec<TripletJudgment> {
        let mut live: Vec<usize> = self.active.values().copied().collect();
        live.sort_unstable();
        live.into_iter().map(|r| self.records[r].judgment.clone()).collect()
    }

    pub fn export_jsonl(&self) -> String {
        judgments_to_jsonl(&self.export())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks(n: usize) -> Vec<Task> {
        let id = |s: String| ItemId::new(s).unwrap();
        (0..n)
            .map(|i| Task {
                triplet_id: format!("t{i}"),
                anchor: id(format!("a{i}")),
                left: id(format!("l{i}")),
                right: id(format!("r{i}")),
            })
            .collect()
    }

    fn t0() -> DateTime<Utc> {
        crate::corpus::synthetic_epoch()
    }

    fn lease_id(n: NextTask) -> String {
        match n {
            NextTask::Task(l) => l.task.triplet_id,
            NextTask::Done => panic!("queue unexpectedly done"),
        }
    }

    fn open(dir: &Path, n: usize) -> Store {
        Store::open(tasks(n), &dir.join("log.jsonl"), Duration::minutes(10)).unwrap()
    }

    #[test]
    fn serves_in_order_and_finishes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path(), 2);
        let now = t0();
        assert_eq!(lease_id(s.next_task("ann", "s1", now).unwrap()), "t0");
        // same session gets the same lease back
        assert_eq!(lease_id(s.next_task("ann", "s1", now).unwrap()), "t0");
        // a second session skips the leased task
        assert_eq!(lease_id(s.next_task("ann", "s2", now).unwrap()), "t1");
        s.submit("t0", Choice::Left, "s1", now).unwrap();
        s.submit("t1", Choice::Skipped, "s2", now).unwrap();
        assert_eq!(s.next_task("ann", "s1", now).unwrap(), NextTask::Done);
        let p = s.progress(Some("ann"), now);
        assert_eq!((p.completed, p.skipped, p.pending, p.total), (2, 1, 0, 2));
        // another annotator still has both tasks
        assert_eq!(lease_id(s.next_task("other", "s3", now).unwrap()), "t0");
    }

    #[test]
    fn expired_lease_is_reserved() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path(), 1);
        assert_eq!(lease_id(s.next_task("a", "s1", t0()).unwrap()), "t0");
        assert_eq!(s.next_task("a", "s2", t0()).unwrap(), NextTask::Done);
        let later = t0() + Duration::minutes(11);
        assert_eq!(lease_id(s.next_task("a", "s2", later).unwrap()), "t0");
        assert!(matches!(s.submit("t0", Choice::Left, "s1", later), Err(ServiceError::Conflict(_))));
        s.submit("t0", Choice::Left, "s2", later).unwrap();
    }

    #[test]
    fn idempotent_submit() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path(), 2);
        s.next_task("a", "s", t0()).unwrap();
        let first = s.submit("t0", Choice::Right, "s", t0()).unwrap();
        let again = s.submit("t0", Choice::Left, "s", t0()).unwrap();
        assert_eq!(first, again);
        assert_eq!(s.records().len(), 1);
        assert!(matches!(s.submit("nope", Choice::Left, "s", t0()), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn undo_supersedes_and_releases() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path(), 3);
        s.next_task("a", "s", t0()).unwrap();
        s.submit("t0", Choice::Left, "s", t0()).unwrap();
        assert_eq!(lease_id(s.next_task("a", "s", t0()).unwrap()), "t1");
        let u = s.undo("s", t0()).unwrap();
        assert_eq!(u.triplet_id, "t0");
        assert_eq!(lease_id(s.next_task("a", "s", t0()).unwrap()), "t0");
        assert!(s.export().is_empty());
        assert!(matches!(s.undo("s", t0()), Err(ServiceError::Conflict(_))));
        s.submit("t0", Choice::Right, "s", t0()).unwrap();
        let out = s.export();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].choice, Choice::Right);
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let exported = {
            let mut s = open(dir.path(), 4);
            for (i, c) in [Choice::Left, Choice::Right, Choice::Skipped].into_iter().enumerate() {
                s.next_task("a", "s", t0()).unwrap();
                s.submit(&format!("t{i}"), c, "s", t0()).unwrap();
            }
            s.undo("s", t0()).unwrap();
            s.export_jsonl()
        };
        let mut s = open(dir.path(), 4);
        assert_eq!(s.export_jsonl(), exported);
        assert_eq!(s.records().len(), 4);
        let p = s.progress(Some("a"), t0());
        assert_eq!((p.completed, p.skipped), (2, 0));
        assert_eq!(lease_id(s.next_task("a", "s", t0()).unwrap()), "t2");
        s.undo("s", t0()).unwrap();
        s.undo("s", t0()).unwrap();
        assert!(s.undo("s", t0()).is_err());
        assert!(s.export().is_empty());
    }

    #[test]
    fn task_file_ids() {
        let text = "{\"anchor\":\"a\",\"left\":\"b\",\"right\":\"c\"}\n{\"triplet_id\":\"x\",\"anchor\":\"a\",\"left\":\"c\",\"right\":\"b\",\"choice\":\"left\"}\n";
        let t = parse_tasks(text, Path::new("t")).unwrap();
        assert_eq!(t[0].triplet_id, "t0000");
        assert_eq!(t[1].triplet_id, "x");
        assert!(parse_tasks("{\"anchor\":\"a\",\"left\":\"a\",\"right\":\"c\"}", Path::new("t")).is_err());
    }
}
