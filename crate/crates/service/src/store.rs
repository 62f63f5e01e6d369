//! Session store backed by one append-only JSONL event log per session.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use uncertainty_core::annotation::{Gender, Participant};
use uncertainty_core::seed::{derive_seed, rng_from};
use uncertainty_core::stimgen::{build_schedule_with, Condition, Schedule, StimulusConfig};

use crate::session::{Feedback, ResponseInput, Session, TrialResponse, UiSchedule};
use crate::SessionError;

const LOG_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        participant: Participant,
        schedule: Schedule,
    },
    Response {
        response: TrialResponse,
    },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    pub age_days: u32,
    #[serde(default = "default_gender")]
    pub gender: Gender,
    #[serde(default)]
    pub condition: Option<Condition>,
}

fn default_gender() -> Gender {
    Gender::Other
}

#[derive(Debug)]
struct Entry {
    session: Session,
    log: Option<File>,
}

/// Concurrent session store. Writes to one session are serialized by its lock;
/// the event is persisted before the in-memory state changes.
#[derive(Debug)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    seed: u64,
    stimulus: StimulusConfig,
    next_index: Mutex<u64>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn io_err(path: &Path, e: std::io::Error) -> SessionError {
    SessionError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn append(
    log: &mut Option<File>,
    path: impl Fn() -> PathBuf,
    event: &Event,
) -> Result<(), SessionError> {
    if let Some(f) = log {
        let mut line =
            serde_json::to_string(event).map_err(|e| SessionError::Log(e.to_string()))?;
        line.push('\n');
        f.write_all(line.as_bytes())
            .map_err(|e| io_err(&path(), e))?;
        f.flush().map_err(|e| io_err(&path(), e))?;
    }
    Ok(())
}

/// Rebuilds a session from its events. A torn final line (no trailing newline)
/// from an interrupted write is dropped.
pub fn replay(path: &Path) -> Result<Session, SessionError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut session: Option<Session> = None;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete_line = line.ends_with('\n');
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = match serde_json::from_str(line.trim_end()) {
            Ok(ev) => ev,
            Err(_) if !complete_line => break,
            Err(e) => {
                return Err(SessionError::Log(format!(
                    "{}:{lineno}: {e}",
                    path.display()
                )))
            }
        };
        let bad = |msg: &str| SessionError::Log(format!("{}:{lineno}: {msg}", path.display()));
        match (event, session.as_mut()) {
            (
                Event::Created {
                    session_id,
                    participant,
                    schedule,
                },
                None,
            ) => {
                session = Some(Session::new(session_id, participant, schedule));
            }
            (Event::Created { .. }, Some(_)) => return Err(bad("second created event")),
            (_, None) => return Err(bad("event before created")),
            (Event::Response { response }, Some(s)) => {
                let input = ResponseInput {
                    trial_id: response.trial_id.clone(),
                    chosen_side: response.chosen_side,
                    latency_ms: response.latency_ms,
                    timestamp: Some(response.timestamp),
                };
                let judged = s
                    .judge(&input, response.timestamp)
                    .map_err(|e| bad(&e.to_string()))?;
                if judged != response {
                    return Err(bad("stored response disagrees with schedule"));
                }
                s.apply_response(judged);
            }
            (Event::Completed, Some(s)) => {
                if s.state != crate::SessionState::Complete {
                    return Err(bad("completed event before the last response"));
                }
            }
        }
    }
    session.ok_or_else(|| SessionError::Log(format!("{}: empty log", path.display())))
}

impl SessionStore {
    /// Store without persistence.
    pub fn in_memory(seed: u64) -> Self {
        Self {
            dir: None,
            seed,
            stimulus: StimulusConfig::default(),
            next_index: Mutex::new(0),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: impl AsRef<Path>, seed: u64) -> Result<Self, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == LOG_EXTENSION))
            .collect();
        paths.sort();
        for path in paths {
            let session = replay(&path)?;
            let log = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            sessions.insert(
                session.session_id.clone(),
                Arc::new(Mutex::new(Entry {
                    session,
                    log: Some(log),
                })),
            );
        }
        let next = sessions.len() as u64;
        Ok(Self {
            dir: Some(dir),
            seed,
            stimulus: StimulusConfig::default(),
            next_index: Mutex::new(next),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn with_stimulus(mut self, cfg: StimulusConfig) -> Self {
        self.stimulus = cfg;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{id}.{LOG_EXTENSION}")))
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, SessionError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session map lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Creates a session. The condition is drawn from the store seed when omitted.
    pub fn create(&self, req: CreateSession) -> Result<Session, SessionError> {
        if req.participant_id.trim().is_empty() {
            return Err(SessionError::InvalidRequest(
                "participant_id must not be empty".into(),
            ));
        }
        if req.age_days == 0 {
            return Err(SessionError::InvalidRequest(
                "age_days must be positive".into(),
            ));
        }
        let mut map = self.sessions.write().expect("session map lock");
        let mut index = self.next_index.lock().expect("index lock");
        let (id, stream) = loop {
            let stream = derive_seed(self.seed, *index);
            *index += 1;
            let id = format!("s{stream:016x}");
            if !map.contains_key(&id) {
                break (id, stream);
            }
        };
        let mut rng = rng_from(stream);
        let drawn = if rng.random_bool(0.5) {
            Condition::EasyFirst
        } else {
            Condition::HardFirst
        };
        let condition = req.condition.unwrap_or(drawn);
        let schedule = build_schedule_with(condition, derive_seed(stream, 1), &self.stimulus)?;
        let participant = Participant {
            participant_id: req.participant_id,
            age_days: req.age_days,
            gender: req.gender,
            condition,
        };
        let session = Session::new(id.clone(), participant.clone(), schedule.clone());
        let mut log = match self.log_path(&id) {
            Some(p) => Some(
                OpenOptions::new()
                    .create_new(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| io_err(&p, e))?,
            ),
            None => None,
        };
        let event = Event::Created {
            session_id: id.clone(),
            participant,
            schedule,
        };
        let path = self.log_path(&id).unwrap_or_default();
        append(&mut log, || path.clone(), &event)?;
        map.insert(
            id,
            Arc::new(Mutex::new(Entry {
                session: session.clone(),
                log,
            })),
        );
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self
            .entry(id)?
            .lock()
            .expect("session lock")
            .session
            .clone())
    }

    pub fn schedule(&self, id: &str) -> Result<Schedule, SessionError> {
        Ok(self
            .entry(id)?
            .lock()
            .expect("session lock")
            .session
            .schedule
            .clone())
    }

    pub fn ui_schedule(&self, id: &str) -> Result<UiSchedule, SessionError> {
        Ok(self
            .entry(id)?
            .lock()
            .expect("session lock")
            .session
            .ui_schedule())
    }

    /// Judges and records a response. Rejected responses leave the session unchanged.
    pub fn post_response(&self, id: &str, input: ResponseInput) -> Result<Feedback, SessionError> {
        let entry = self.entry(id)?;
        let mut guard = entry.lock().expect("session lock");
        let Entry { session, log } = &mut *guard;
        let response = session.judge(&input, now_ms())?;
        let path = self.log_path(id).unwrap_or_default();
        append(
            log,
            || path.clone(),
            &Event::Response {
                response: response.clone(),
            },
        )?;
        let correct = response.correct;
        let complete = session.apply_response(response);
        if complete {
            append(log, || path.clone(), &Event::Completed)?;
        }
        Ok(Feedback { correct, complete })
    }

    pub fn export_csv(&self, id: &str) -> Result<String, SessionError> {
        self.entry(id)?
            .lock()
            .expect("session lock")
            .session
            .export_csv()
    }
}
