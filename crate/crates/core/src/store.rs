//! On-disk sessions: event-sourced logs with a rolling hash chain, content
//! addressed snapshots, and restore by deterministic replay.
//!
//! Layout under the data directory:
//!
//! ```text
//! sessions/{id}/session.json          descriptor fields, seed, configs
//! sessions/{id}/world.json            the world spec
//! sessions/{id}/events/branch-{k}.ndjson
//! sessions/{id}/snapshots/{ref}.json
//! sessions/{id}/graph.json            story graph
//! ```
//!
//! Each log line is an event plus `chain` (sha256 of the previous chain value
//! and the event's canonical JSON). The last line of every write batch also
//! carries `commit: true`; lines after the last commit belong to a batch that
//! never finished and are dropped on restore.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentAction, AgentConfig};
use crate::event::{BranchId, EventRecord};
use crate::extract::{extract_world_spec, ExtractionConfig, ExtractionError};
use crate::llm::Provider;
use crate::runtime::{Change, Command, Decider, PacingConfig, RuntimeError, Session, SessionState, ROOT_BRANCH};
use crate::schema::{serialize_world_spec, to_canonical_json, validate_world_spec, parse_world_spec, SchemaError, Violation, WorldSpec};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("sequence gap on branch {branch}: expected seq {expected}, got {got}")]
    SequenceGap { branch: BranchId, expected: u64, got: u64 },
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("world spec is invalid ({} violation(s))", .0.len())]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// What a new session is built from.
#[derive(Debug, Clone)]
pub enum SessionSource {
    StoryText(String),
    WorldSpec(WorldSpec),
}

impl SessionSource {
    /// Exactly one of the two inputs must be present.
    pub fn from_parts(story_text: Option<String>, world_spec: Option<WorldSpec>) -> Result<Self, StoreError> {
        match (story_text, world_spec) {
            (Some(t), None) => Ok(Self::StoryText(t)),
            (None, Some(w)) => Ok(Self::WorldSpec(w)),
            (Some(_), Some(_)) => Err(StoreError::InvalidInput("supply story_text or world_spec, not both".into())),
            (None, None) => Err(StoreError::InvalidInput("one of story_text or world_spec is required".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub title: String,
    pub created_at: String,
    pub seed: u64,
    pub agent_config: AgentConfig,
    pub pacing_config: PacingConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub title: String,
    pub created_at: String,
    pub active_branch: BranchId,
    pub turn: u64,
    pub controlled_character: String,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = data_dir.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    /// Ids of every session on disk, sorted.
    pub fn list_sessions(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let entry = entry?;
            if entry.path().join("session.json").is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn create_session(
        &self,
        source: SessionSource,
        seed: u64,
        provider: &dyn Provider,
    ) -> Result<PersistentSession, StoreError> {
        self.create_session_with(source, seed, provider, AgentConfig::default(), PacingConfig::default())
    }

    pub fn create_session_with(
        &self,
        source: SessionSource,
        seed: u64,
        provider: &dyn Provider,
        agent_config: AgentConfig,
        pacing_config: PacingConfig,
    ) -> Result<PersistentSession, StoreError> {
        let world = match source {
            SessionSource::StoryText(text) => extract_world_spec(&text, provider, &ExtractionConfig::default())?.0,
            SessionSource::WorldSpec(w) => {
                let violations = validate_world_spec(&w);
                if !violations.is_empty() {
                    return Err(StoreError::Validation(violations));
                }
                w
            }
        };
        let session = Session::new(world, seed, agent_config.clone(), pacing_config.clone())?;
        let meta = SessionMeta {
            session_id: uuid::Uuid::new_v4().to_string(),
            title: session.state().world.title.clone(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            seed,
            agent_config,
            pacing_config,
        };
        let dir = self.session_dir(&meta.session_id);
        fs::create_dir_all(dir.join("events"))?;
        fs::create_dir_all(dir.join("snapshots"))?;
        write_atomic(&dir.join("world.json"), serialize_world_spec(&session.state().world).as_bytes())?;
        File::create(log_path(&dir, ROOT_BRANCH))?.sync_all()?;
        write_atomic(&dir.join("graph.json"), pretty(session.story()).as_bytes())?;
        // session.json last: its presence marks a fully created session
        write_atomic(&dir.join("session.json"), pretty(&meta).as_bytes())?;
        let tails = BTreeMap::from([(ROOT_BRANCH, Tail::genesis(&meta.session_id, ROOT_BRANCH, 0))]);
        Ok(PersistentSession { dir, meta, session, tails })
    }

    /// Restores a session by replaying its logs from genesis.
    pub fn open_session(&self, id: &str) -> Result<PersistentSession, StoreError> {
        let dir = self.session_dir(id);
        if id.is_empty() || id.contains(['/', '\\', '.']) || !dir.join("session.json").is_file() {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join("session.json"))?)
            .map_err(|e| StoreError::CorruptLog(format!("session.json: {e}")))?;
        let world_text = fs::read_to_string(dir.join("world.json"))?;
        let world = parse_world_spec(&world_text).map_err(|e| match e {
            SchemaError::Validation(v) => StoreError::Validation(v),
            other => StoreError::CorruptLog(format!("world.json: {other}")),
        })?;

        let mut logs = BTreeMap::new();
        let mut tails = BTreeMap::new();
        for (branch, path) in branch_files(&dir)? {
            let (events, tail) = read_log(&path, &meta.session_id, branch)?;
            logs.insert(branch, events);
            if let Some(tail) = tail {
                tails.insert(branch, tail);
            }
        }
        logs.entry(ROOT_BRANCH).or_default();
        tails
            .entry(ROOT_BRANCH)
            .or_insert_with(|| Tail::genesis(&meta.session_id, ROOT_BRANCH, 0));

        let session = Session::replay_logs(world, meta.seed, meta.agent_config.clone(), meta.pacing_config.clone(), &logs)
            .map_err(|e| StoreError::CorruptLog(e.to_string()))?;

        let ps = PersistentSession { dir, meta, session, tails };
        ps.write_derived()?;
        Ok(ps)
    }
}

/// Where the next line of a branch log goes.
#[derive(Debug, Clone)]
struct Tail {
    next_seq: u64,
    chain: String,
}

impl Tail {
    fn genesis(session_id: &str, branch: BranchId, first_seq: u64) -> Self {
        let seed = format!("genlarp:{session_id}:{branch}");
        Self { next_seq: first_seq, chain: hex::encode(Sha256::digest(seed.as_bytes())) }
    }
}

fn chain_next(prev: &str, event: &EventRecord) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(to_canonical_json(event).as_bytes());
    hex::encode(h.finalize())
}

fn log_path(dir: &Path, branch: BranchId) -> PathBuf {
    dir.join("events").join(format!("branch-{branch}.ndjson"))
}

fn branch_files(dir: &Path) -> Result<Vec<(BranchId, PathBuf)>, StoreError> {
    let mut out = Vec::new();
    let events = dir.join("events");
    if !events.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(events)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(k) = name.strip_prefix("branch-").and_then(|r| r.strip_suffix(".ndjson")) {
            let branch = k.parse().map_err(|_| StoreError::CorruptLog(format!("bad log file name {name}")))?;
            out.push((branch, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Parses and verifies one branch log, dropping an uncommitted tail.
fn read_log(path: &Path, session_id: &str, branch: BranchId) -> Result<(Vec<EventRecord>, Option<Tail>), StoreError> {
    let text = fs::read_to_string(path)?;
    let name = path.display();
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(StoreError::CorruptLog(format!("{name}: truncated final line")));
    }
    let mut events = Vec::new();
    let mut committed = 0;
    let mut committed_bytes = 0;
    let mut offset = 0;
    let mut committed_chain = None;
    let mut chain: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        offset += line.len() + 1;
        let mut value: Value = serde_json::from_str(line)
            .map_err(|e| StoreError::CorruptLog(format!("{name}:{lineno}: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| StoreError::CorruptLog(format!("{name}:{lineno}: not an object")))?;
        let stored = match obj.remove("chain") {
            Some(Value::String(s)) => s,
            _ => return Err(StoreError::CorruptLog(format!("{name}:{lineno}: missing chain"))),
        };
        let commit = matches!(obj.remove("commit"), Some(Value::Bool(true)));
        let event: EventRecord = serde_json::from_value(value)
            .map_err(|e| StoreError::CorruptLog(format!("{name}:{lineno}: {e}")))?;
        if event.branch_id != branch {
            return Err(StoreError::CorruptLog(format!("{name}:{lineno}: event from branch {}", event.branch_id)));
        }
        if let Some(prev) = events.last().map(|e: &EventRecord| e.seq) {
            if event.seq != prev + 1 {
                return Err(StoreError::CorruptLog(format!("{name}:{lineno}: seq {} after {prev}", event.seq)));
            }
        }
        let prev_chain = match &chain {
            Some(c) => c.clone(),
            None => Tail::genesis(session_id, branch, event.seq).chain,
        };
        let expected = chain_next(&prev_chain, &event);
        if stored != expected {
            return Err(StoreError::CorruptLog(format!("{name}:{lineno}: hash chain mismatch")));
        }
        chain = Some(expected);
        events.push(event);
        if commit {
            committed = events.len();
            committed_bytes = offset;
            committed_chain = chain.clone();
        }
    }
    events.truncate(committed);
    if committed_bytes < text.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(committed_bytes as u64)?;
        f.sync_all()?;
    }
    let tail = match (events.last(), committed_chain) {
        (Some(last), Some(c)) => Some(Tail { next_seq: last.seq + 1, chain: c }),
        _ => None,
    };
    Ok((events, tail))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(value).expect("serializable")).expect("json");
    s.push('\n');
    s
}

/// A live session bound to its directory. Every mutation is persisted
/// before it becomes visible in memory.
#[derive(Debug)]
pub struct PersistentSession {
    dir: PathBuf,
    meta: SessionMeta,
    session: Session,
    tails: BTreeMap<BranchId, Tail>,
}

impl PersistentSession {
    pub fn id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn state(&self) -> &SessionState {
        self.session.state()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            session_id: self.meta.session_id.clone(),
            title: self.meta.title.clone(),
            created_at: self.meta.created_at.clone(),
            active_branch: self.session.story().active_branch,
            turn: self.session.state().turn,
            controlled_character: self.session.state().controlled_character.clone(),
        }
    }

    pub fn act(&mut self, action: AgentAction, decider: &mut dyn Decider) -> Result<Vec<EventRecord>, StoreError> {
        self.run(&Command::Act { action }, decider)
    }

    pub fn switch_role(&mut self, character_id: &str) -> Result<EventRecord, StoreError> {
        let change = self.session.plan_switch(character_id)?;
        let event = change.events[0].clone();
        self.commit(change)?;
        Ok(event)
    }

    pub fn rewind(&mut self, node_id: &str) -> Result<BranchId, StoreError> {
        let change = self.session.plan_rewind(node_id)?;
        let branch = change.branch;
        self.commit(change)?;
        Ok(branch)
    }

    pub fn run(&mut self, command: &Command, decider: &mut dyn Decider) -> Result<Vec<EventRecord>, StoreError> {
        let change = self.session.plan_command(command, decider)?;
        let events = change.events.clone();
        self.commit(change)?;
        Ok(events)
    }

    /// Write-ahead half of a commit: appends the change's events durably
    /// but leaves memory untouched. Exposed for crash simulation.
    pub fn persist_change_events(&mut self, change: &Change) -> Result<(), StoreError> {
        if let Some(info) = change.new_branch {
            let first = info.fork_seq.map(|f| f + 1).unwrap_or(0);
            self.tails.insert(change.branch, Tail::genesis(&self.meta.session_id, change.branch, first));
        }
        self.persist_events(&change.events)
    }

    /// Appends a batch, rejecting any sequence gap or duplicate before
    /// writing anything. The last line carries the commit marker.
    pub fn persist_events(&mut self, events: &[EventRecord]) -> Result<(), StoreError> {
        let mut staged: BTreeMap<BranchId, (Tail, String)> = BTreeMap::new();
        for (i, event) in events.iter().enumerate() {
            let branch = event.branch_id;
            let (tail, buf) = match staged.get_mut(&branch) {
                Some(s) => s,
                None => {
                    let tail = self.tails.get(&branch).cloned().ok_or(StoreError::SequenceGap {
                        branch,
                        expected: 0,
                        got: event.seq,
                    })?;
                    staged.entry(branch).or_insert((tail, String::new()))
                }
            };
            if event.seq != tail.next_seq {
                return Err(StoreError::SequenceGap { branch, expected: tail.next_seq, got: event.seq });
            }
            tail.chain = chain_next(&tail.chain, event);
            tail.next_seq += 1;
            let mut value = serde_json::to_value(event).expect("event serializes");
            let obj = value.as_object_mut().expect("event is an object");
            obj.insert("chain".into(), Value::String(tail.chain.clone()));
            if i + 1 == events.len() || events[i + 1].branch_id != branch {
                obj.insert("commit".into(), Value::Bool(true));
            }
            buf.push_str(&serde_json::to_string(&value).expect("json"));
            buf.push('\n');
        }
        for (branch, (tail, buf)) in staged {
            let mut f = OpenOptions::new().create(true).append(true).open(log_path(&self.dir, branch))?;
            f.write_all(buf.as_bytes())?;
            f.sync_data()?;
            self.tails.insert(branch, tail);
        }
        Ok(())
    }

    fn commit(&mut self, change: Change) -> Result<(), StoreError> {
        self.persist_change_events(&change)?;
        if let (Some(node), Some(snap)) = (&change.node, &change.snapshot) {
            self.write_snapshot(&node.snapshot_ref, snap)?;
        }
        self.session.apply(change);
        write_atomic(&self.dir.join("graph.json"), pretty(self.session.story()).as_bytes())?;
        Ok(())
    }

    fn write_snapshot(&self, snapshot_ref: &str, state: &SessionState) -> io::Result<()> {
        let path = self.dir.join("snapshots").join(format!("{snapshot_ref}.json"));
        if path.is_file() {
            return Ok(());
        }
        write_atomic(&path, state.canonical_json().as_bytes())
    }

    /// Rewrites the files derived from the logs (graph and snapshots).
    fn write_derived(&self) -> Result<(), StoreError> {
        fs::create_dir_all(self.dir.join("snapshots"))?;
        for (r, snap) in self.session.snapshots() {
            self.write_snapshot(r, snap)?;
        }
        write_atomic(&self.dir.join("graph.json"), pretty(self.session.story()).as_bytes())?;
        Ok(())
    }

    /// Reads a snapshot file back from disk.
    pub fn load_snapshot(&self, snapshot_ref: &str) -> Result<SessionState, StoreError> {
        let path = self.dir.join("snapshots").join(format!("{snapshot_ref}.json"));
        let bytes = fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptLog(format!("{}: {e}", path.display())))
    }
}
