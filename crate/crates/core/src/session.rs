//! Live annotation sessions: a learner, one pending query at a time, and an
//! append-only JSON-lines event log that rebuilds the session on restart.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{read_comparisons_csv, ItemId, ItemPool};
use crate::error::{Error, Result};
use crate::learner::{Learner, LearnerConfig, ModelKind};
use crate::samplers::{PairSet, SamplerKind, TrueSkillRule};

/// One item as uploaded: features for the model, an opaque payload for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInput {
    pub features: Vec<f64>,
    #[serde(default)]
    pub payload: Value,
}

/// Body of a create request. Sampler and model are names so that unknown
/// values produce a validation error rather than a decode failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub items: Vec<ItemInput>,
    pub sampler: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reg: Option<f64>,
    #[serde(default)]
    pub reg_zeta: Option<f64>,
    #[serde(default)]
    pub refit_stride: Option<usize>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub candidate_cap: Option<usize>,
    #[serde(default)]
    pub posterior_samples: Option<usize>,
    #[serde(default)]
    pub trueskill_rule: Option<String>,
    /// Restricts queries to these pairs, each asked at most once.
    #[serde(default)]
    pub pairs: Option<Vec<(ItemId, ItemId)>>,
}

impl CreateRequest {
    pub fn new(items: Vec<ItemInput>, sampler: &str) -> Self {
        CreateRequest {
            items,
            sampler: sampler.to_string(),
            model: None,
            seed: 0,
            reg: None,
            reg_zeta: None,
            refit_stride: None,
            budget: None,
            candidate_cap: None,
            posterior_samples: None,
            trueskill_rule: None,
            pairs: None,
        }
    }

    fn learner_config(&self) -> Result<LearnerConfig> {
        let kind: SamplerKind = self.sampler.parse()?;
        let mut config = LearnerConfig::new(kind);
        if let Some(m) = &self.model {
            config.model = m.parse::<ModelKind>()?;
        }
        if let Some(v) = self.reg {
            config.reg = v;
        }
        if let Some(v) = self.reg_zeta {
            config.reg_zeta = v;
        }
        if let Some(v) = self.refit_stride {
            config.refit_stride = v;
        }
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.posterior_samples {
            config.sampler.posterior_samples = v;
        }
        if let Some(r) = &self.trueskill_rule {
            config.sampler.trueskill_rule = r.parse::<TrueSkillRule>()?;
        }
        config.sampler.candidate_cap = self.candidate_cap;
        config.validate().map_err(|e| match e {
            Error::Config(m) => Error::Validation(m),
            other => other,
        })?;
        Ok(config)
    }
}

/// Everything needed to rebuild a session before any answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSetup {
    pub config: LearnerConfig,
    pub seed: u64,
    pub features: Vec<Vec<f64>>,
    pub payloads: Vec<Value>,
    #[serde(default)]
    pub pairs: Option<Vec<(ItemId, ItemId)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, at_ms: u64, setup: SessionSetup },
    Issued { step: usize, i: ItemId, j: ItemId, at_ms: u64 },
    Answered {
        step: usize,
        i: ItemId,
        j: ItemId,
        choice: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        annotator: Option<String>,
        at_ms: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextPair {
    pub status: PairStatus,
    /// Number of answers so far.
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(ItemId, ItemId)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payloads: Option<(Value, Value)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Pending,
    Exhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answer {
    pub pair: (ItemId, ItemId),
    /// 1 when the first item of the pair is preferred, 0 otherwise.
    pub choice: u8,
    #[serde(default)]
    pub annotator: Option<String>,
    /// Include the top `preview` items of the updated ranking.
    #[serde(default)]
    pub preview: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preview: Option<Vec<RankedItem>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item: ItemId,
    pub score: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ranking {
    pub step: usize,
    pub items: Vec<RankedItem>,
}

/// Model state at export time; `theta` and `zeta` are absent when the model
/// has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: String,
    pub step: usize,
    pub setup: SessionSetup,
    pub theta: Option<Vec<f64>>,
    pub zeta: Option<Vec<f64>>,
    pub scores: Vec<f64>,
}

/// History as `i,j,c` CSV plus a JSON checkpoint. Pending queries are left out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionExport {
    pub history_csv: String,
    pub checkpoint: Checkpoint,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    setup: SessionSetup,
    learner: Learner,
    pending: Option<(ItemId, ItemId)>,
    asked: BTreeSet<(ItemId, ItemId)>,
    created_ms: u64,
    updated_ms: u64,
}

impl Session {
    fn build(id: String, setup: SessionSetup, at_ms: u64) -> Result<Self> {
        let n = setup.features.len();
        if n < 2 {
            return Err(Error::Validation(format!("a session needs at least 2 items, got {n}")));
        }
        if setup.payloads.len() != n {
            return Err(Error::Validation("one payload per item is required".into()));
        }
        let pool = ItemPool::from_rows(&setup.features, None)?;
        if let Some(pairs) = &setup.pairs {
            for &(i, j) in pairs {
                pool.check_pair(i, j)?;
            }
        }
        let learner = Learner::new(pool, setup.config.clone(), setup.seed)?;
        Ok(Session {
            id,
            setup,
            learner,
            pending: None,
            asked: BTreeSet::new(),
            created_ms: at_ms,
            updated_ms: at_ms,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn pending(&self) -> Option<(ItemId, ItemId)> {
        self.pending
    }

    pub fn step(&self) -> usize {
        self.learner.history().len()
    }

    pub fn created_ms(&self) -> u64 {
        self.created_ms
    }

    pub fn updated_ms(&self) -> u64 {
        self.updated_ms
    }

    fn eligible(&self) -> PairSet {
        match &self.setup.pairs {
            None => PairSet::all(self.learner.pool().len()),
            Some(pairs) => PairSet::listed(
                pairs
                    .iter()
                    .map(|&(i, j)| (i.min(j), i.max(j)))
                    .filter(|p| !self.asked.contains(p)),
            ),
        }
    }

    fn view(&self) -> NextPair {
        let payloads = self
            .pending
            .map(|(i, j)| (self.setup.payloads[i].clone(), self.setup.payloads[j].clone()));
        NextPair {
            status: PairStatus::Pending,
            step: self.step(),
            pair: self.pending,
            payloads,
        }
    }

    fn exhausted(&self) -> NextPair {
        NextPair {
            status: PairStatus::Exhausted,
            step: self.step(),
            pair: None,
            payloads: None,
        }
    }

    /// Applies an event to the state. `Issued` re-runs the sampler and checks
    /// it picks the logged pair, so replay also checks determinism.
    fn apply(&mut self, event: &Event) -> Result<()> {
        match *event {
            Event::Created { .. } => Err(Error::Validation("duplicate create event".into())),
            Event::Issued { i, j, at_ms, .. } => {
                if self.pending.is_some() {
                    return Err(Error::Conflict("a query is already pending".into()));
                }
                let pair = self.learner.select(&self.eligible())?;
                if pair != (i, j) {
                    return Err(Error::Validation(format!(
                        "session {}: replay selected {pair:?}, log has ({i}, {j})",
                        self.id
                    )));
                }
                self.pending = Some(pair);
                self.updated_ms = at_ms;
                Ok(())
            }
            Event::Answered { i, j, choice, at_ms, .. } => {
                if self.pending != Some((i, j)) {
                    return Err(Error::Conflict(format!("({i}, {j}) is not the pending query")));
                }
                self.learner.observe(i, j, choice == 1)?;
                self.asked.insert((i.min(j), i.max(j)));
                self.pending = None;
                self.updated_ms = at_ms;
                Ok(())
            }
        }
    }

    pub fn ranking(&self, top: Option<usize>) -> Result<Ranking> {
        let scores = self.learner.scores();
        let std = self.learner.score_std()?;
        let items = self
            .learner
            .ranking()
            .into_iter()
            .take(top.unwrap_or(usize::MAX))
            .map(|item| RankedItem {
                item,
                score: scores[item],
                std: std[item],
            })
            .collect();
        Ok(Ranking { step: self.step(), items })
    }

    pub fn export(&self) -> Result<SessionExport> {
        let mut buf = Vec::new();
        self.learner.history().write_csv(&mut buf)?;
        let history_csv = String::from_utf8(buf).map_err(|e| Error::Validation(e.to_string()))?;
        let state = self.learner.state();
        Ok(SessionExport {
            history_csv,
            checkpoint: Checkpoint {
                id: self.id.clone(),
                step: self.step(),
                setup: self.setup.clone(),
                theta: state.theta().map(|t| t.iter().copied().collect()),
                zeta: state.zeta().map(|z| z.iter().copied().collect()),
                scores: self.learner.scores(),
            },
        })
    }
}

/// All sessions, optionally persisted under a data directory as `<id>.jsonl`.
///
/// Each session sits behind its own mutex, so writes to one session are
/// serialized while other sessions proceed.
#[derive(Debug, Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `dir`, creating it if needed, and replays every session log in it.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = replay_log(&path)?;
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        log::info!("loaded {} sessions from {}", sessions.len(), dir.display());
        Ok(SessionStore {
            dir: Some(dir.to_path_buf()),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::SessionNotFound(id.to_string()))
    }

    fn append(&self, id: &str, events: &[Event]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut file = OpenOptions::new().create(true).append(true).open(log_path(dir, id))?;
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        file.write_all(&buf)?;
        file.flush()?;
        Ok(())
    }

    fn insert(&self, session: Session, events: &[Event]) -> Result<String> {
        let id = session.id.clone();
        self.append(&id, events)?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn create(&self, req: &CreateRequest) -> Result<String> {
        let config = req.learner_config()?;
        if req.items.is_empty() {
            return Err(Error::Validation("no items supplied".into()));
        }
        let setup = SessionSetup {
            config,
            seed: req.seed,
            features: req.items.iter().map(|it| it.features.clone()).collect(),
            payloads: req.items.iter().map(|it| it.payload.clone()).collect(),
            pairs: req.pairs.clone(),
        };
        let (id, at_ms) = (new_id(), now_ms());
        let session = Session::build(id.clone(), setup.clone(), at_ms)?;
        self.insert(session, &[Event::Created { id, at_ms, setup }])
    }

    /// Runs `f` on a copy of the session and commits it only if `f` succeeds
    /// and its events reach the log.
    fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<(T, Vec<Event>)>) -> Result<T> {
        let handle = self.get(id)?;
        let mut guard = handle.lock().expect("session poisoned");
        let mut draft = guard.clone();
        let (out, events) = f(&mut draft)?;
        if !events.is_empty() {
            self.append(id, &events)?;
        }
        *guard = draft;
        Ok(out)
    }

    /// The pending pair, issuing a new one if nothing is pending.
    pub fn next(&self, id: &str) -> Result<NextPair> {
        self.mutate(id, |s| {
            if s.pending.is_some() {
                return Ok((s.view(), Vec::new()));
            }
            let eligible = s.eligible();
            if eligible.is_empty() {
                return Ok((s.exhausted(), Vec::new()));
            }
            let (i, j) = s.learner.select(&eligible)?;
            let event = Event::Issued {
                step: s.step(),
                i,
                j,
                at_ms: now_ms(),
            };
            s.pending = Some((i, j));
            Ok((s.view(), vec![event]))
        })
    }

    pub fn submit(&self, id: &str, answer: &Answer) -> Result<StepSummary> {
        if answer.choice > 1 {
            return Err(Error::Validation(format!("choice must be 0 or 1, got {}", answer.choice)));
        }
        self.mutate(id, |s| {
            let (i, j) = answer.pair;
            match s.pending {
                None => return Err(Error::Conflict("no query is pending".into())),
                Some(p) if p != (i, j) => {
                    return Err(Error::Conflict(format!(
                        "answer for ({i}, {j}) but the pending query is ({}, {})",
                        p.0, p.1
                    )))
                }
                Some(_) => {}
            }
            let event = Event::Answered {
                step: s.step() + 1,
                i,
                j,
                choice: answer.choice,
                annotator: answer.annotator.clone(),
                at_ms: now_ms(),
            };
            s.apply(&event)?;
            let preview = match answer.preview {
                Some(k) => Some(s.ranking(Some(k))?.items),
                None => None,
            };
            Ok((StepSummary { step: s.step(), preview }, vec![event]))
        })
    }

    pub fn ranking(&self, id: &str) -> Result<Ranking> {
        let handle = self.get(id)?;
        let guard = handle.lock().expect("session poisoned");
        guard.ranking(None)
    }

    pub fn export(&self, id: &str) -> Result<SessionExport> {
        let handle = self.get(id)?;
        let guard = handle.lock().expect("session poisoned");
        guard.export()
    }

    /// A copy of the session state, for inspection and tests.
    pub fn snapshot(&self, id: &str) -> Result<Session> {
        let handle = self.get(id)?;
        let guard = handle.lock().expect("session poisoned");
        Ok(guard.clone())
    }

    /// Creates a new session from an export by replaying its history.
    ///
    /// Each answer is issued and answered again, so the imported log has the
    /// same shape as a live one. The sampler stream restarts from the seed.
    pub fn import(&self, export: &SessionExport) -> Result<String> {
        let setup = export.checkpoint.setup.clone();
        let n = setup.features.len();
        let annotations = read_comparisons_csv(export.history_csv.as_bytes(), "history", n)?;
        let (id, at_ms) = (new_id(), now_ms());
        let mut session = Session::build(id.clone(), setup.clone(), at_ms)?;
        let mut events = vec![Event::Created {
            id: id.clone(),
            at_ms,
            setup,
        }];
        for (t, a) in annotations.iter().enumerate() {
            session.learner.observe(a.i, a.j, a.c)?;
            session.asked.insert((a.i.min(a.j), a.i.max(a.j)));
            events.push(Event::Answered {
                step: t + 1,
                i: a.i,
                j: a.j,
                choice: u8::from(a.c),
                annotator: None,
                at_ms,
            });
        }
        self.insert(session, &events)
    }
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

/// Rebuilds a session from its log. A torn final line (a crash mid-write) is
/// dropped; any other malformed line is an error.
pub fn replay_log(path: &Path) -> Result<Session> {
    let name = path.display().to_string();
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let bad = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line: line as u64,
        message,
    };
    let mut events = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => events.push(e),
            Err(e) if k + 1 == lines.len() => log::warn!("{name}: dropping torn final line: {e}"),
            Err(e) => return Err(bad(k + 1, e.to_string())),
        }
    }
    let mut iter = events.into_iter();
    let Some(Event::Created { id, at_ms, setup }) = iter.next() else {
        return Err(bad(1, "log must start with a create event".into()));
    };
    let mut session = Session::build(id, setup, at_ms)?;
    for event in iter {
        match event {
            // Imported histories carry answers with no issue events.
            Event::Answered { i, j, .. } if session.pending.is_none() => {
                session.pending = Some((i, j));
                session.apply(&event)?;
            }
            other => session.apply(&other)?,
        }
    }
    Ok(session)
}
