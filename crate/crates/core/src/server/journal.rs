//! Write-ahead event log with periodic state snapshots.
//!
//! `server.log` holds one canonical JSON line per event, `{"event":..,"index":n}`.
//! `server.snapshot` holds the whole state plus the index of the last event
//! folded into it. Recovery loads the snapshot and replays later events; a
//! torn final line (crash mid-append) is dropped.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::session::{AgentEntry, ExamSession, InstallRecord};
use super::ServerError;
use crate::agent::{AgentId, AgentStatus, InstallReportEntry};
use crate::canonical;
use crate::engine::FinalResult;
use crate::fsutil::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ServerEvent {
    SessionCreated {
        session: ExamSession,
    },
    AgentsDispatched {
        session_id: String,
        agents: BTreeMap<String, AgentId>,
    },
    DispatchAcked {
        session_id: String,
        student_id: String,
        seq: u64,
    },
    DispatchFailed {
        session_id: String,
        student_id: String,
        reason: String,
    },
    ReturnIngested {
        session_id: String,
        student_id: String,
        seq: u64,
        results: FinalResult,
    },
    Expired {
        session_id: String,
        student_id: String,
    },
    Published {
        session_id: String,
    },
    InstallCreated {
        record: InstallRecord,
    },
    InstallReturned {
        agent_id: AgentId,
        report: Vec<InstallReportEntry>,
    },
}

/// Everything the server must remember. Mutated only by [`ServerState::apply`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerState {
    pub sessions: BTreeMap<String, ExamSession>,
    pub installs: BTreeMap<AgentId, InstallRecord>,
    pub session_counter: u64,
    pub pull_counter: u64,
    pub install_counter: u64,
}

impl ServerState {
    /// Folds one event into the state. Events are validated before they
    /// are logged, so applying never fails on a consistent log.
    pub fn apply(&mut self, event: &ServerEvent) {
        match event {
            ServerEvent::SessionCreated { session } => {
                if session.self_assessment {
                    self.pull_counter += 1;
                } else {
                    self.session_counter += 1;
                }
                self.sessions
                    .insert(session.session_id.clone(), session.clone());
            }
            ServerEvent::AgentsDispatched { session_id, agents } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    s.dispatched = true;
                    for (student, id) in agents {
                        s.per_student.insert(
                            student.clone(),
                            AgentEntry {
                                agent_id: Some(*id),
                                status: AgentStatus::InTransit,
                                last_seq: 1,
                                failure: None,
                            },
                        );
                    }
                }
            }
            ServerEvent::DispatchAcked {
                session_id,
                student_id,
                seq,
            } => {
                if let Some(e) = self.entry_mut(session_id, student_id) {
                    e.last_seq = e.last_seq.max(*seq);
                }
            }
            ServerEvent::DispatchFailed {
                session_id,
                student_id,
                reason,
            } => {
                if let Some(e) = self.entry_mut(session_id, student_id) {
                    e.status = AgentStatus::Expired;
                    e.failure = Some(reason.clone());
                }
            }
            ServerEvent::ReturnIngested {
                session_id,
                student_id,
                seq,
                results,
            } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    if let Some(e) = s.per_student.get_mut(student_id) {
                        e.status = AgentStatus::Completed;
                        e.last_seq = e.last_seq.max(*seq);
                    }
                    s.grade_book.insert(student_id.clone(), results.clone());
                }
            }
            ServerEvent::Expired {
                session_id,
                student_id,
            } => {
                if let Some(e) = self.entry_mut(session_id, student_id) {
                    e.status = AgentStatus::Expired;
                    e.failure.get_or_insert_with(|| "DEADLINE_EXCEEDED".into());
                }
            }
            ServerEvent::Published { session_id } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    s.published = true;
                }
            }
            ServerEvent::InstallCreated { record } => {
                self.install_counter += 1;
                self.installs.insert(record.agent_id, record.clone());
            }
            ServerEvent::InstallReturned { agent_id, report } => {
                if let Some(r) = self.installs.get_mut(agent_id) {
                    r.status = AgentStatus::Completed;
                    r.report = Some(report.clone());
                }
            }
        }
    }

    fn entry_mut(&mut self, session_id: &str, student_id: &str) -> Option<&mut AgentEntry> {
        self.sessions
            .get_mut(session_id)?
            .per_student
            .get_mut(student_id)
    }

    /// Session and student an evaluation agent was created for.
    pub fn locate_agent(&self, agent_id: &AgentId) -> Option<(&ExamSession, &str)> {
        self.sessions.values().find_map(|s| {
            s.per_student
                .iter()
                .find(|(_, e)| e.agent_id.as_ref() == Some(agent_id))
                .map(|(student, _)| (s, student.as_str()))
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    event: ServerEvent,
    index: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    applied: u64,
    state: ServerState,
}

pub const LOG_FILE: &str = "server.log";
pub const SNAPSHOT_FILE: &str = "server.snapshot";

/// Durable event log. Every append is fsynced before it returns.
#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    log: File,
    next_index: u64,
    since_snapshot: u64,
    snapshot_every: u64,
}

impl Journal {
    /// Opens (or creates) the journal in `dir` and rebuilds the state.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Journal, ServerState), ServerError> {
        fs::create_dir_all(dir)?;
        let (mut state, applied) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let doc: SnapshotDoc = canonical::from_bytes(&bytes)
                    .map_err(|e| ServerError::CorruptLog(format!("snapshot: {e}")))?;
                (doc.state, doc.applied)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (ServerState::default(), 0),
            Err(e) => return Err(e.into()),
        };

        let log_path = dir.join(LOG_FILE);
        let mut last = applied;
        let mut since_snapshot = 0;
        let mut valid_len: u64 = 0;
        if let Ok(f) = File::open(&log_path) {
            let mut reader = BufReader::new(f);
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 {
                    break;
                }
                if line.last() != Some(&b'\n') {
                    log::warn!("dropping torn final log line ({n} bytes)");
                    break;
                }
                let entry: LogLine = canonical::from_bytes(&line[..n - 1]).map_err(|e| {
                    ServerError::CorruptLog(format!("line after event {last}: {e}"))
                })?;
                valid_len += n as u64;
                if entry.index <= applied {
                    continue;
                }
                if entry.index != last + 1 {
                    return Err(ServerError::CorruptLog(format!(
                        "event {} follows {}",
                        entry.index, last
                    )));
                }
                state.apply(&entry.event);
                last = entry.index;
                since_snapshot += 1;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        // Cut a torn tail so the next append starts on a fresh line.
        if log.metadata()?.len() != valid_len {
            log.set_len(valid_len)?;
        }
        Ok((
            Journal {
                dir: dir.to_path_buf(),
                log,
                next_index: last + 1,
                since_snapshot,
                snapshot_every: snapshot_every.max(1),
            },
            state,
        ))
    }

    /// Appends and fsyncs one event. `state` must already include it; it is
    /// used when the append triggers a snapshot.
    pub fn append(&mut self, event: &ServerEvent) -> Result<u64, ServerError> {
        let index = self.next_index;
        let mut line = canonical::to_bytes(&LogLine {
            event: event.clone(),
            index,
        });
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.next_index += 1;
        self.since_snapshot += 1;
        Ok(index)
    }

    pub fn wants_snapshot(&self) -> bool {
        self.since_snapshot >= self.snapshot_every
    }

    /// Writes the state snapshot, then truncates the log. A crash between
    /// the two is harmless: replay skips events the snapshot already holds.
    pub fn snapshot(&mut self, state: &ServerState) -> Result<(), ServerError> {
        let doc = SnapshotDoc {
            applied: self.next_index - 1,
            state: state.clone(),
        };
        atomic_write(&self.dir.join(SNAPSHOT_FILE), &canonical::to_bytes(&doc))?;
        self.log.set_len(0)?;
        self.log.sync_all()?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
