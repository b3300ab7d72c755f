//! Crowdsourced scoring: task assignment, score persistence, aggregation.
//!
//! [`Study`] is the in-memory state machine. [`StudyStore`] makes it durable
//! (append-only event log plus periodic snapshots) and serializes every
//! mutation through one lock.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::archive::{Tag, TagSet};
use crate::evaluate::{self, ScoreSummary};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("no tasks of type {0}")]
    UnknownStudy(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("participant {participant_id} already scored task {task_id}")]
    DuplicateSubmission { task_id: String, participant_id: String },
    #[error("response does not fit task {task_id}: {reason}")]
    FormMismatch { task_id: String, reason: String },
    #[error("invalid task definition: {0}")]
    InvalidTask(String),
    #[error("corrupt study store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Images,
    Webpages,
    Scale,
    ScalePrompt,
}

impl TaskKind {
    pub fn is_comparison(self) -> bool {
        matches!(self, TaskKind::Images | TaskKind::Webpages)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Images => "images",
            TaskKind::Webpages => "webpages",
            TaskKind::Scale => "scale",
            TaskKind::ScalePrompt => "scale_prompt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Client,
    Server,
}

/// A `type` query value: task kind, plus `_client` to select the client
/// variant (server is the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StudyType {
    pub kind: TaskKind,
    pub variant: Variant,
}

impl FromStr for StudyType {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, variant) = match s.strip_suffix("_client") {
            Some(base) => (base, Variant::Client),
            None => (s, Variant::Server),
        };
        let kind = match base {
            "images" => TaskKind::Images,
            "webpages" => TaskKind::Webpages,
            "scale" => TaskKind::Scale,
            "scale_prompt" => TaskKind::ScalePrompt,
            _ => return Err(StudyError::UnknownStudy(s.to_string())),
        };
        Ok(Self { kind, variant })
    }
}

impl fmt::Display for StudyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        if self.variant == Variant::Client {
            f.write_str("_client")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub variant: Variant,
    pub prompt_text: String,
    pub original_ref: String,
    #[serde(default)]
    pub generated_ref: Option<String>,
    #[serde(default)]
    pub tags: TagSet,
}

impl StudyTask {
    pub fn study_type(&self) -> StudyType {
        StudyType {
            kind: self.kind,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        match (self.kind.is_comparison(), &self.generated_ref) {
            (true, None) => Err(StudyError::InvalidTask(format!(
                "{} task {} needs a generated_ref",
                self.kind.as_str(),
                self.task_id
            ))),
            (false, Some(_)) => Err(StudyError::InvalidTask(format!(
                "{} task {} must not have a generated_ref",
                self.kind.as_str(),
                self.task_id
            ))),
            _ => Ok(()),
        }
    }
}

/// One participant answer: a 1-5 quality score, a 1-5 relevance level, or
/// an explicit "cannot judge".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Quality(u8),
    Relevance(u8),
    CannotJudge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    pub participant_id: String,
    pub response: Response,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Assignment {
    Task { task: StudyTask },
    Exhausted { completion_code: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepted {
    /// Set when the task now holds more responses than the quota.
    pub over_quota: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub quota: usize,
    pub seed: u64,
    /// Salt for completion codes.
    pub secret: String,
    /// An unanswered assignment is released after this many seconds.
    pub lease_secs: i64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            quota: 10,
            seed: 0,
            secret: String::new(),
            lease_secs: 1800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub study_type: String,
    pub summaries: Vec<ScoreSummary>,
    pub cdf: Vec<(f64, f64)>,
    pub boxplots: BTreeMap<Tag, ScoreSummary>,
    pub participant_counts: BTreeMap<String, usize>,
    pub completion_codes: BTreeMap<String, String>,
    pub over_quota: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Event {
    Submit(ScoreRecord),
    Complete {
        participant_id: String,
        study_type: String,
        code: String,
    },
}

#[derive(Debug, Clone)]
struct Lease {
    task: usize,
    expires: DateTime<Utc>,
}

/// In-memory study state.
#[derive(Debug)]
pub struct Study {
    config: StudyConfig,
    tasks: Vec<StudyTask>,
    by_id: HashMap<String, usize>,
    records: Vec<ScoreRecord>,
    counts: Vec<usize>,
    leased: Vec<usize>,
    scored: HashSet<(usize, String)>,
    leases: HashMap<(String, StudyType), Lease>,
    completions: BTreeMap<(String, StudyType), String>,
    rng: ChaCha8Rng,
}

impl Study {
    pub fn new(tasks: Vec<StudyTask>, config: StudyConfig) -> Result<Self, StudyError> {
        let mut by_id = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            t.validate()?;
            if by_id.insert(t.task_id.clone(), i).is_some() {
                return Err(StudyError::InvalidTask(format!("duplicate task id {}", t.task_id)));
            }
        }
        let n = tasks.len();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            tasks,
            by_id,
            records: Vec::new(),
            counts: vec![0; n],
            leased: vec![0; n],
            scored: HashSet::new(),
            leases: HashMap::new(),
            completions: BTreeMap::new(),
        })
    }

    pub fn tasks(&self) -> &[StudyTask] {
        &self.tasks
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn task(&self, task_id: &str) -> Option<&StudyTask> {
        self.by_id.get(task_id).map(|&i| &self.tasks[i])
    }

    pub fn count(&self, task_id: &str) -> Option<usize> {
        self.by_id.get(task_id).map(|&i| self.counts[i])
    }

    pub fn completion_code(&self, participant_id: &str, study_type: StudyType) -> String {
        let mut h = Sha256::new();
        h.update(self.config.secret.as_bytes());
        h.update([0]);
        h.update(participant_id.as_bytes());
        h.update([0]);
        h.update(study_type.to_string().as_bytes());
        hex::encode_upper(&h.finalize()[..6])
    }

    fn expire_leases(&mut self, now: DateTime<Utc>) {
        let leased = &mut self.leased;
        self.leases.retain(|_, l| {
            let keep = l.expires > now;
            if !keep {
                leased[l.task] -= 1;
            }
            keep
        });
    }

    /// Least-loaded unscored task for the participant (ties broken by the
    /// seeded RNG), or the participant's completion code once nothing is left.
    /// Load counts submitted responses plus outstanding assignments.
    pub fn next_task(
        &mut self,
        study_type: StudyType,
        participant_id: &str,
        now: DateTime<Utc>,
    ) -> Result<(Assignment, Option<(String, String)>), StudyError> {
        let pool: Vec<usize> = (0..self.tasks.len())
            .filter(|&i| self.tasks[i].study_type() == study_type)
            .collect();
        if pool.is_empty() {
            return Err(StudyError::UnknownStudy(study_type.to_string()));
        }
        self.expire_leases(now);
        let key = (participant_id.to_string(), study_type);
        if let Some(lease) = self.leases.get_mut(&key) {
            lease.expires = now + Duration::seconds(self.config.lease_secs);
            let task = self.tasks[lease.task].clone();
            return Ok((Assignment::Task { task }, None));
        }

        let candidates: Vec<usize> = pool
            .into_iter()
            .filter(|&i| !self.scored.contains(&(i, participant_id.to_string())))
            .filter(|&i| self.counts[i] + self.leased[i] < self.config.quota)
            .collect();
        let Some(min_load) = candidates.iter().map(|&i| self.counts[i] + self.leased[i]).min() else {
            let code = self.completion_code(participant_id, study_type);
            let newly = match self.completions.entry(key) {
                Entry::Occupied(_) => None,
                Entry::Vacant(slot) => {
                    slot.insert(code.clone());
                    Some((participant_id.to_string(), code.clone()))
                }
            };
            return Ok((Assignment::Exhausted { completion_code: code }, newly));
        };
        let tied: Vec<usize> = candidates
            .into_iter()
            .filter(|&i| self.counts[i] + self.leased[i] == min_load)
            .collect();
        let pick = tied[self.rng.gen_range(0..tied.len())];
        self.leased[pick] += 1;
        self.leases.insert(
            key,
            Lease {
                task: pick,
                expires: now + Duration::seconds(self.config.lease_secs),
            },
        );
        Ok((
            Assignment::Task {
                task: self.tasks[pick].clone(),
            },
            None,
        ))
    }

    /// Validates a record without applying it.
    pub fn check(&self, record: &ScoreRecord) -> Result<usize, StudyError> {
        let &idx = self
            .by_id
            .get(&record.task_id)
            .ok_or_else(|| StudyError::UnknownTask(record.task_id.clone()))?;
        let task = &self.tasks[idx];
        let mismatch = |reason: &str| StudyError::FormMismatch {
            task_id: record.task_id.clone(),
            reason: reason.to_string(),
        };
        match (task.kind.is_comparison(), record.response) {
            (true, Response::Quality(v)) | (false, Response::Relevance(v)) => {
                if !(1..=5).contains(&v) {
                    return Err(mismatch("score must be between 1 and 5"));
                }
            }
            (false, Response::CannotJudge) => {}
            (true, _) => return Err(mismatch("comparison tasks take a quality score")),
            (false, Response::Quality(_)) => {
                return Err(mismatch("relevance tasks take a relevance level or cannot_judge"))
            }
        }
        if self.scored.contains(&(idx, record.participant_id.clone())) {
            return Err(StudyError::DuplicateSubmission {
                task_id: record.task_id.clone(),
                participant_id: record.participant_id.clone(),
            });
        }
        Ok(idx)
    }

    fn apply(&mut self, idx: usize, record: ScoreRecord) -> Accepted {
        let key = (record.participant_id.clone(), self.tasks[idx].study_type());
        if self.leases.get(&key).is_some_and(|l| l.task == idx) {
            self.leases.remove(&key);
            self.leased[idx] -= 1;
        }
        self.scored.insert((idx, record.participant_id.clone()));
        self.counts[idx] += 1;
        self.records.push(record);
        Accepted {
            over_quota: self.counts[idx] > self.config.quota,
        }
    }

    pub fn submit(&mut self, record: ScoreRecord) -> Result<Accepted, StudyError> {
        let idx = self.check(&record)?;
        Ok(self.apply(idx, record))
    }

    pub fn results(&self, study_type: StudyType) -> StudyResults {
        let mut per_task: BTreeMap<usize, Vec<ScoreRecord>> = BTreeMap::new();
        let mut participant_counts = BTreeMap::new();
        for r in &self.records {
            let idx = self.by_id[&r.task_id];
            if self.tasks[idx].study_type() != study_type {
                continue;
            }
            per_task.entry(idx).or_default().push(r.clone());
            *participant_counts.entry(r.participant_id.clone()).or_insert(0) += 1;
        }
        let mut summaries = Vec::new();
        let mut tagged = Vec::new();
        for (idx, recs) in &per_task {
            if let Ok(s) = evaluate::summarize_scores(recs) {
                tagged.push((s.clone(), self.tasks[*idx].tags.clone()));
                summaries.push(s);
            }
        }
        let over_quota = per_task
            .keys()
            .filter(|&&i| self.counts[i] > self.config.quota)
            .map(|&i| self.tasks[i].task_id.clone())
            .collect();
        StudyResults {
            study_type: study_type.to_string(),
            cdf: evaluate::score_cdf(&summaries),
            boxplots: evaluate::tag_boxplots(&tagged),
            summaries,
            participant_counts,
            completion_codes: self
                .completions
                .iter()
                .filter(|((_, t), _)| *t == study_type)
                .map(|((p, _), c)| (p.clone(), c.clone()))
                .collect(),
            over_quota,
        }
    }

    fn replay(&mut self, event: Event) -> Result<(), StudyError> {
        match event {
            Event::Submit(record) => {
                let idx = self.check(&record)?;
                self.apply(idx, record);
            }
            Event::Complete {
                participant_id,
                study_type,
                code,
            } => {
                let t: StudyType = study_type.parse()?;
                self.completions.insert((participant_id, t), code);
            }
        }
        Ok(())
    }
}

const TASKS_FILE: &str = "tasks.json";
const CONFIG_FILE: &str = "config.json";
const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    events: Vec<Event>,
}

struct Inner {
    study: Study,
    log: File,
    seq: u64,
    since_snapshot: usize,
}

/// Durable, thread-safe study.
pub struct StudyStore {
    dir: PathBuf,
    snapshot_every: usize,
    inner: Mutex<Inner>,
}

impl StudyStore {
    pub const DEFAULT_SNAPSHOT_EVERY: usize = 256;

    /// Creates a new store in `dir`, which must not already hold a study.
    pub fn create(dir: impl AsRef<Path>, tasks: Vec<StudyTask>, config: StudyConfig) -> Result<Self, StudyError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        if dir.join(TASKS_FILE).exists() {
            return Err(StudyError::Corrupt(format!("{} already holds a study", dir.display())));
        }
        let study = Study::new(tasks, config)?;
        write_json(&dir.join(TASKS_FILE), &study.tasks)?;
        write_json(&dir.join(CONFIG_FILE), &study.config)?;
        Self::finish_open(dir, study, 0)
    }

    /// Reopens an existing store: snapshot first, then log lines past it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StudyError> {
        let dir = dir.as_ref();
        let tasks: Vec<StudyTask> = read_json(&dir.join(TASKS_FILE))?;
        let config: StudyConfig = read_json(&dir.join(CONFIG_FILE))?;
        let mut study = Study::new(tasks, config)?;
        let mut seq = 0;
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let snap: Snapshot = read_json(&snap_path)?;
            for e in snap.events {
                study.replay(e)?;
            }
            seq = snap.seq;
        }
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            for line in BufReader::new(File::open(&log_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogLine = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    // A torn final line from a crash mid-append.
                    Err(_) => break,
                };
                if entry.seq <= seq {
                    continue;
                }
                study.replay(entry.event)?;
                seq = entry.seq;
            }
        }
        Self::finish_open(dir, study, seq)
    }

    /// Opens `dir` if it holds a study, otherwise creates one from `tasks`.
    pub fn open_or_create(dir: impl AsRef<Path>, tasks: Vec<StudyTask>, config: StudyConfig) -> Result<Self, StudyError> {
        if dir.as_ref().join(TASKS_FILE).exists() {
            Self::open(dir)
        } else {
            Self::create(dir, tasks, config)
        }
    }

    fn finish_open(dir: &Path, study: Study, seq: u64) -> Result<Self, StudyError> {
        let log = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            snapshot_every: Self::DEFAULT_SNAPSHOT_EVERY,
            inner: Mutex::new(Inner {
                study,
                log,
                seq,
                since_snapshot: 0,
            }),
        })
    }

    pub fn with_snapshot_every(mut self, n: usize) -> Self {
        self.snapshot_every = n.max(1);
        self
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn commit(&self, inner: &mut Inner, event: Event) -> Result<(), StudyError> {
        let seq = inner.seq + 1;
        let mut line = serde_json::to_vec(&LogLine { seq, event }).map_err(|e| StudyError::Corrupt(e.to_string()))?;
        line.push(b'\n');
        inner.log.write_all(&line)?;
        inner.log.flush()?;
        inner.seq = seq;
        inner.since_snapshot += 1;
        Ok(())
    }

    fn maybe_snapshot(&self, inner: &mut Inner) -> Result<(), StudyError> {
        if inner.since_snapshot >= self.snapshot_every {
            self.snapshot(inner)?;
        }
        Ok(())
    }

    fn snapshot(&self, inner: &mut Inner) -> Result<(), StudyError> {
        let mut events: Vec<Event> = inner.study.records.iter().cloned().map(Event::Submit).collect();
        events.extend(inner.study.completions.iter().map(|((p, t), c)| Event::Complete {
            participant_id: p.clone(),
            study_type: t.to_string(),
            code: c.clone(),
        }));
        write_json(&self.dir.join(SNAPSHOT_FILE), &Snapshot { seq: inner.seq, events })?;
        inner.log = File::create(self.dir.join(LOG_FILE))?;
        inner.since_snapshot = 0;
        Ok(())
    }

    pub fn next_task(&self, study_type: StudyType, participant_id: &str) -> Result<Assignment, StudyError> {
        let mut inner = self.lock();
        let (assignment, newly) = inner.study.next_task(study_type, participant_id, Utc::now())?;
        if let Some((participant_id, code)) = newly {
            self.commit(
                &mut inner,
                Event::Complete {
                    participant_id,
                    study_type: study_type.to_string(),
                    code,
                },
            )?;
            self.maybe_snapshot(&mut inner)?;
        }
        Ok(assignment)
    }

    /// Validates, logs, then applies. A record that fails to log is not applied.
    pub fn submit(&self, record: ScoreRecord) -> Result<Accepted, StudyError> {
        let mut inner = self.lock();
        let idx = inner.study.check(&record)?;
        self.commit(&mut inner, Event::Submit(record.clone()))?;
        let accepted = inner.study.apply(idx, record);
        // The record is already durable in the log; a failed snapshot is retried later.
        let _ = self.maybe_snapshot(&mut inner);
        Ok(accepted)
    }

    pub fn results(&self, study_type: StudyType) -> StudyResults {
        self.lock().study.results(study_type)
    }

    pub fn records(&self) -> Vec<ScoreRecord> {
        self.lock().study.records.clone()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let inner = self.lock();
        inner
            .study
            .tasks
            .iter()
            .zip(&inner.study.counts)
            .map(|(t, c)| (t.task_id.clone(), *c))
            .collect()
    }

    pub fn task(&self, task_id: &str) -> Option<StudyTask> {
        self.lock().study.task(task_id).cloned()
    }

    pub fn tasks(&self) -> Vec<StudyTask> {
        self.lock().study.tasks.clone()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StudyError> {
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| StudyError::Corrupt(e.to_string()))?;
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StudyError> {
    let bytes = fs::read(path).map_err(|e| StudyError::Corrupt(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| StudyError::Corrupt(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, kind: TaskKind, variant: Variant) -> StudyTask {
        StudyTask {
            task_id: id.into(),
            kind,
            variant,
            prompt_text: format!("prompt {id}"),
            original_ref: format!("orig/{id}.png"),
            generated_ref: kind.is_comparison().then(|| format!("gen/{id}.png")),
            tags: TagSet::empty(),
        }
    }

    fn images(n: usize) -> Vec<StudyTask> {
        (0..n).map(|i| task(&format!("t{i}"), TaskKind::Images, Variant::Server)).collect()
    }

    fn rec(task: &str, pid: &str, response: Response) -> ScoreRecord {
        ScoreRecord {
            task_id: task.into(),
            participant_id: pid.into(),
            response,
            submitted_at: Utc::now(),
        }
    }

    const IMAGES: StudyType = StudyType {
        kind: TaskKind::Images,
        variant: Variant::Server,
    };

    #[test]
    fn study_type_parsing() {
        assert_eq!("images".parse::<StudyType>().unwrap(), IMAGES);
        let c: StudyType = "scale_prompt_client".parse().unwrap();
        assert_eq!((c.kind, c.variant), (TaskKind::ScalePrompt, Variant::Client));
        assert_eq!(c.to_string(), "scale_prompt_client");
        assert!(matches!("movies".parse::<StudyType>(), Err(StudyError::UnknownStudy(_))));
    }

    #[test]
    fn task_invariants() {
        let mut t = task("a", TaskKind::Scale, Variant::Server);
        assert!(t.validate().is_ok());
        t.generated_ref = Some("x".into());
        assert!(t.validate().is_err());
        let mut t = task("b", TaskKind::Images, Variant::Server);
        t.generated_ref = None;
        assert!(Study::new(vec![t], StudyConfig::default()).is_err());
    }

    #[test]
    fn least_scored_first() {
        let mut s = Study::new(images(3), StudyConfig::default()).unwrap();
        for (task, n) in [("t0", 2), ("t2", 1)] {
            for i in 0..n {
                s.submit(rec(task, &format!("other{i}"), Response::Quality(3))).unwrap();
            }
        }
        let (a, _) = s.next_task(IMAGES, "p", Utc::now()).unwrap();
        match a {
            Assignment::Task { task } => assert_eq!(task.task_id, "t1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exhaustion_gives_code() {
        let mut s = Study::new(images(2), StudyConfig::default()).unwrap();
        for _ in 0..2 {
            let (a, _) = s.next_task(IMAGES, "p", Utc::now()).unwrap();
            let Assignment::Task { task } = a else { panic!() };
            s.submit(rec(&task.task_id, "p", Response::Quality(4))).unwrap();
        }
        let (a, newly) = s.next_task(IMAGES, "p", Utc::now()).unwrap();
        let code = s.completion_code("p", IMAGES);
        assert_eq!(a, Assignment::Exhausted { completion_code: code.clone() });
        assert_eq!(newly, Some(("p".into(), code)));
        assert!(matches!(
            s.next_task(StudyType { kind: TaskKind::Scale, variant: Variant::Server }, "p", Utc::now()),
            Err(StudyError::UnknownStudy(_))
        ));
    }

    #[test]
    fn repeated_request_returns_same_lease() {
        let mut s = Study::new(images(5), StudyConfig::default()).unwrap();
        let (a, _) = s.next_task(IMAGES, "p", Utc::now()).unwrap();
        let (b, _) = s.next_task(IMAGES, "p", Utc::now()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expired_lease_is_released() {
        let cfg = StudyConfig { quota: 1, ..Default::default() };
        let mut s = Study::new(images(1), cfg).unwrap();
        let now = Utc::now();
        assert!(matches!(s.next_task(IMAGES, "a", now).unwrap().0, Assignment::Task { .. }));
        assert!(matches!(s.next_task(IMAGES, "b", now).unwrap().0, Assignment::Exhausted { .. }));
        let later = now + Duration::seconds(3600);
        assert!(matches!(s.next_task(IMAGES, "c", later).unwrap().0, Assignment::Task { .. }));
    }

    #[test]
    fn submit_validation() {
        let mut tasks = images(1);
        tasks.push(task("s", TaskKind::Scale, Variant::Client));
        let mut s = Study::new(tasks, StudyConfig::default()).unwrap();
        assert!(s.submit(rec("t0", "p", Response::Quality(5))).is_ok());
        assert!(matches!(
            s.submit(rec("t0", "q", Response::Relevance(3))),
            Err(StudyError::FormMismatch { .. })
        ));
        assert!(matches!(
            s.submit(rec("t0", "p", Response::Quality(2))),
            Err(StudyError::DuplicateSubmission { .. })
        ));
        assert!(matches!(s.submit(rec("zz", "p", Response::Quality(2))), Err(StudyError::UnknownTask(_))));
        assert!(matches!(s.submit(rec("t0", "r", Response::Quality(6))), Err(StudyError::FormMismatch { .. })));
        assert!(s.submit(rec("s", "p", Response::CannotJudge)).is_ok());
        assert!(s.submit(rec("s", "q", Response::Relevance(1))).is_ok());
        assert!(matches!(s.submit(rec("s", "r", Response::Quality(1))), Err(StudyError::FormMismatch { .. })));
    }

    #[test]
    fn over_quota_is_flagged() {
        let cfg = StudyConfig { quota: 1, ..Default::default() };
        let mut s = Study::new(images(1), cfg).unwrap();
        assert!(!s.submit(rec("t0", "a", Response::Quality(3))).unwrap().over_quota);
        assert!(s.submit(rec("t0", "b", Response::Quality(3))).unwrap().over_quota);
        assert_eq!(s.results(IMAGES).over_quota, vec!["t0".to_string()]);
    }

    #[test]
    fn results_partitioned_by_variant() {
        let mut tasks = images(1);
        tasks.push(task("c0", TaskKind::Images, Variant::Client));
        let mut s = Study::new(tasks, StudyConfig::default()).unwrap();
        assert!(s.results(IMAGES).summaries.is_empty());
        for i in 0..10 {
            s.submit(rec("t0", &format!("p{i}"), Response::Quality(4))).unwrap();
        }
        s.submit(rec("c0", "p0", Response::Quality(1))).unwrap();
        let r = s.results(IMAGES);
        assert_eq!(r.summaries.len(), 1);
        assert_eq!(r.summaries[0].n, 10);
        let c = s.results(StudyType { kind: TaskKind::Images, variant: Variant::Client });
        assert_eq!(c.summaries[0].item_id, "c0");
    }

    #[test]
    fn store_survives_reopen_across_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = StudyStore::create(dir.path(), images(4), StudyConfig::default())
                .unwrap()
                .with_snapshot_every(3);
            for i in 0..7 {
                store.submit(rec(&format!("t{}", i % 4), &format!("p{i}"), Response::Quality(3))).unwrap();
            }
        }
        let store = StudyStore::open(dir.path()).unwrap();
        assert_eq!(store.records().len(), 7);
        assert!(matches!(
            store.submit(rec("t0", "p0", Response::Quality(3))),
            Err(StudyError::DuplicateSubmission { .. })
        ));
    }

    #[test]
    fn response_wire_format() {
        assert_eq!(serde_json::to_string(&Response::Quality(5)).unwrap(), r#"{"quality":5}"#);
        assert_eq!(serde_json::to_string(&Response::CannotJudge).unwrap(), r#""cannot_judge""#);
    }
}
