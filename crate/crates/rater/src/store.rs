//! Sessions backed by one append-only log file each.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use agf_core::dataset::LesionClass;
use serde::Serialize;

use crate::error::{RaterError, Result};
use crate::log::{complete_prefix, replay, LogEvent, Response};
use crate::report::{agreement, session_report, AgreementReport, RaterReport};
use crate::session::{draw_items, ItemPool, ServedItem, Session, SessionSpec};

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

/// Public view of a session (no ground truth).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub rater_id: String,
    pub total_items: usize,
    pub answered: usize,
    pub ask_real: bool,
    pub complete: bool,
}

impl SessionStatus {
    fn of(s: &Session) -> Self {
        SessionStatus {
            session_id: s.id().to_owned(),
            rater_id: s.created.rater_id.clone(),
            total_items: s.created.items.len(),
            answered: s.cursor(),
            ask_real: s.created.ask_real,
            complete: s.is_complete(),
        }
    }
}

pub struct Store {
    dir: PathBuf,
    pool: ItemPool,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    clock: Clock,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    /// Opens `dir` (created if missing) and replays every `*.jsonl` log in
    /// it. Torn final lines are cut off.
    pub fn open(dir: &Path, pool: ItemPool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut sessions = BTreeMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
        paths.sort();
        for path in paths {
            let bytes = std::fs::read(&path)?;
            let keep = complete_prefix(&bytes).len();
            if keep < bytes.len() {
                OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
            }
            let (created, responses) = replay(&bytes)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != created.session_id {
                return Err(RaterError::CorruptLog {
                    line: 1,
                    detail: format!("log {} holds session {}", path.display(), created.session_id),
                });
            }
            sessions.insert(created.session_id.clone(), Arc::new(Mutex::new(Session { created, responses })));
        }
        Ok(Store { dir: dir.to_owned(), pool, sessions: Mutex::new(sessions), clock: Box::new(now_ms) })
    }

    /// Replaces the wall clock used for timestamps (tests use a fixed one).
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn pool(&self) -> &ItemPool {
        &self.pool
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| RaterError::NotFound(format!("no session {id:?}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.lock().expect("session map").keys().cloned().collect()
    }

    pub fn create(&self, spec: &SessionSpec) -> Result<SessionStatus> {
        let items = draw_items(&self.pool, spec)?;
        let mut map = self.sessions.lock().expect("session map");
        let id = (map.len() + 1..).map(|n| format!("s{n:04}")).find(|id| !map.contains_key(id)).expect("free id");
        let session = Session::new(id.clone(), spec, items, (self.clock)())?;
        let mut f = OpenOptions::new().write(true).create_new(true).open(self.log_path(&id))?;
        f.write_all(LogEvent::Created(session.created.clone()).to_line().as_bytes())?;
        f.sync_data()?;
        let status = SessionStatus::of(&session);
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(status)
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus> {
        Ok(SessionStatus::of(&self.session(id)?.lock().expect("session")))
    }

    /// The item awaiting an answer, `None` when the session is complete.
    pub fn next(&self, id: &str) -> Result<Option<ServedItem>> {
        Ok(self.session(id)?.lock().expect("session").next())
    }

    /// PNG of the item behind `token` (current or already answered).
    pub fn image(&self, id: &str, token: &str) -> Result<Vec<u8>> {
        let s = self.session(id)?;
        let s = s.lock().expect("session");
        let item = s.item_for_token(token).ok_or_else(|| RaterError::NotFound(format!("no item {token} in session {id}")))?;
        let roi = self.pool.get(item).ok_or_else(|| RaterError::NotFound(format!("image for item {token} is not loaded")))?;
        Ok(agf_core::imageops::encode_png(&roi.image())?)
    }

    /// Validates, persists, then applies one answer. Submissions to one
    /// session are serialized; a failed write leaves the session unchanged.
    pub fn submit(&self, id: &str, token: &str, class: LesionClass, is_real: Option<bool>) -> Result<Response> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session");
        let r = s.prepare(token, class, is_real, (self.clock)())?;
        let mut f = OpenOptions::new().append(true).open(self.log_path(id))?;
        f.write_all(LogEvent::Response(r.clone()).to_line().as_bytes())?;
        f.sync_data()?;
        s.accept(r.clone());
        Ok(r)
    }

    /// Recomputed from the log file, not from memory.
    pub fn report(&self, id: &str) -> Result<RaterReport> {
        let s = self.session(id)?;
        let _guard = s.lock().expect("session");
        let (created, responses) = replay(&std::fs::read(self.log_path(id))?)?;
        session_report(&created, &responses)
    }

    pub fn agreement(&self, a: &str, b: &str) -> Result<AgreementReport> {
        let load = |id: &str| -> Result<_> {
            let s = self.session(id)?;
            let _guard = s.lock().expect("session");
            replay(&std::fs::read(self.log_path(id))?)
        };
        let (ca, ra) = load(a)?;
        let (cb, rb) = load(b)?;
        agreement((&ca, &ra), (&cb, &rb))
    }
}

pub(crate) fn check_id(id: &str) -> Result<()> {
    if valid_session_id(id) {
        Ok(())
    } else {
        Err(RaterError::NotFound(format!("no session {id:?}")))
    }
}
