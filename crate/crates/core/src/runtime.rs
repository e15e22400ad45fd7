//! The turn loop, role switching, key-event snapshots, branching rewind and
//! the pacing controller.
//!
//! Every mutating operation is split in two: `plan_*` computes a [`Change`]
//! without touching the session, and [`Session::apply`] commits it. Callers
//! that need write-ahead persistence store the change between the two steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{
    decide, gate_action, init_agents, is_visible, perceive_in_place, ActionKind, AgentAction,
    AgentConfig, AgentError, AgentState, BehaviorEntry, BehaviorLog, BlockReason, GateDecision,
    RelationshipGraph, SceneContext,
};
use crate::event::{Actor, BranchId, EventKind, EventPayload, EventRecord, SystemKind};
use crate::llm::Provider;
use crate::schema::{to_canonical_json, validate_world_spec, clamp, QuestSpec, Violation, WorldSpec};

pub const ROOT_BRANCH: BranchId = 0;
const RECENT_EVENTS: usize = 6;

// ---------------------------------------------------------------------------
// Pacing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingConfig {
    pub heat_decay: f64,
    pub density_window: u64,
    pub heat_low: f64,
    pub heat_high: f64,
    pub step: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub initial_prob: f64,
}

impl Default for PacingConfig {
    fn default() -> Self {
        Self {
            heat_decay: 0.8,
            density_window: 10,
            heat_low: 0.5,
            heat_high: 3.0,
            step: 0.1,
            p_min: 0.1,
            p_max: 0.8,
            initial_prob: 0.3,
        }
    }
}

impl PacingConfig {
    // negated comparisons so NaN fails every check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::InvalidConfig(m.to_string()));
        if !(self.heat_decay > 0.0 && self.heat_decay < 1.0) {
            return bad("heat_decay must be in (0, 1)");
        }
        if self.density_window < 1 {
            return bad("density_window must be at least 1");
        }
        if !(0.0 <= self.p_min && self.p_min <= self.p_max && self.p_max <= 1.0) {
            return bad("need 0 <= p_min <= p_max <= 1");
        }
        if !(self.heat_low < self.heat_high) {
            return bad("heat_low must be below heat_high");
        }
        if !(self.step >= 0.0) {
            return bad("step must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingState {
    pub plot_heat: f64,
    pub interaction_density: f64,
    pub npc_initiative_prob: f64,
    /// Quests offered so far, in offer order.
    pub side_quest_queue: Vec<String>,
}

impl PacingState {
    pub fn new(config: &PacingConfig) -> Self {
        Self {
            plot_heat: 0.0,
            interaction_density: 0.0,
            npc_initiative_prob: clamp(config.initial_prob, config.p_min, config.p_max),
            side_quest_queue: Vec::new(),
        }
    }
}

/// Σ γ^(now − turn) over conflict-relevant events no later than `now`.
pub fn compute_plot_heat<'e>(events: impl IntoIterator<Item = &'e EventRecord>, now: u64, gamma: f64) -> f64 {
    events
        .into_iter()
        .filter(|e| e.conflict_relevant && e.turn <= now)
        .map(|e| gamma.powi((now - e.turn) as i32))
        .sum()
}

/// Share of the last `window` turns with at least one character-to-character event.
pub fn compute_interaction_density<'e>(events: impl IntoIterator<Item = &'e EventRecord>, now: u64, window: u64) -> f64 {
    let window = window.max(1);
    let lo = now.saturating_sub(window - 1);
    let turns: BTreeSet<u64> = events
        .into_iter()
        .filter(|e| e.is_interaction() && e.turn >= lo && e.turn <= now)
        .map(|e| e.turn)
        .collect();
    turns.len() as f64 / window as f64
}

/// Steers NPC initiative toward the heat band. Returns the new state and the
/// quest offered, if any. The untriggered quest with the lowest id is offered.
pub fn pacing_adjust(
    pacing: &PacingState,
    heat: f64,
    density: f64,
    quests: &[QuestSpec],
    config: &PacingConfig,
) -> (PacingState, Option<String>) {
    let mut next = pacing.clone();
    next.plot_heat = heat;
    next.interaction_density = density;
    let mut offered = None;
    if heat < config.heat_low {
        next.npc_initiative_prob += config.step;
        offered = quests
            .iter()
            .map(|q| q.id.as_str())
            .filter(|id| !pacing.side_quest_queue.iter().any(|o| o == id))
            .min()
            .map(str::to_string);
        if let Some(q) = &offered {
            next.side_quest_queue.push(q.clone());
        }
    } else if heat > config.heat_high {
        next.npc_initiative_prob -= config.step;
    }
    next.npc_initiative_prob = clamp(next.npc_initiative_prob, config.p_min, config.p_max);
    (next, offered)
}

// ---------------------------------------------------------------------------
// Rng and state

/// Seeded stream cipher rng whose position serializes losslessly.
#[derive(Debug, Clone)]
pub struct SessionRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl PartialEq for SessionRng {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.word_pos() == other.word_pos()
    }
}

#[derive(Serialize, Deserialize)]
struct RngRecord {
    seed: u64,
    word_pos: String,
}

impl Serialize for SessionRng {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RngRecord { seed: self.seed, word_pos: self.word_pos().to_string() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SessionRng {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RngRecord::deserialize(d)?;
        let pos: u128 = r.word_pos.parse().map_err(serde::de::Error::custom)?;
        let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
        rng.set_word_pos(pos);
        Ok(Self { seed: r.seed, rng })
    }
}

/// Everything a snapshot captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub world: WorldSpec,
    pub agents: BTreeMap<String, AgentState>,
    pub graph: RelationshipGraph,
    pub pacing: PacingState,
    pub controlled_character: String,
    pub rng: SessionRng,
    pub turn: u64,
    pub behavior: BehaviorLog,
}

impl SessionState {
    /// Hex sha256 of the canonical JSON form; doubles as the snapshot ref.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(to_canonical_json(self).as_bytes()))
    }

    pub fn canonical_json(&self) -> String {
        to_canonical_json(self)
    }

    fn present_at(&self, location: &str, except: &str) -> Vec<String> {
        self.agents
            .values()
            .filter(|a| a.location_id == location && a.character_id != except)
            .map(|a| a.character_id.clone())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Story graph

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryNode {
    pub node_id: String,
    pub branch_id: BranchId,
    /// Last event of the turn the snapshot closes.
    pub seq: u64,
    pub turn: u64,
    pub snapshot_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub parent_branch: Option<BranchId>,
    pub fork_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryGraph {
    pub nodes: Vec<StoryNode>,
    pub branches: BTreeMap<BranchId, BranchInfo>,
    pub active_branch: BranchId,
}

impl Default for StoryGraph {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            branches: BTreeMap::from([(ROOT_BRANCH, BranchInfo { parent_branch: None, fork_seq: None })]),
            active_branch: ROOT_BRANCH,
        }
    }
}

impl StoryGraph {
    pub fn node(&self, node_id: &str) -> Option<&StoryNode> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    /// Branch ids from the root down to `branch`.
    pub fn lineage(&self, branch: BranchId) -> Vec<BranchId> {
        let mut chain = vec![branch];
        let mut cur = branch;
        while let Some(parent) = self.branches.get(&cur).and_then(|b| b.parent_branch) {
            if chain.contains(&parent) {
                break;
            }
            chain.push(parent);
            cur = parent;
        }
        chain.reverse();
        chain
    }

    /// True when every branch reaches the root without cycles.
    pub fn is_tree(&self) -> bool {
        let roots = self.branches.values().filter(|b| b.parent_branch.is_none()).count();
        roots == 1
            && self.branches.get(&ROOT_BRANCH).is_some_and(|b| b.parent_branch.is_none())
            && self.branches.keys().all(|&b| {
                let mut seen = BTreeSet::new();
                let mut cur = b;
                loop {
                    if !seen.insert(cur) {
                        return false;
                    }
                    match self.branches.get(&cur) {
                        Some(BranchInfo { parent_branch: Some(p), .. }) => cur = *p,
                        Some(_) => return cur == ROOT_BRANCH,
                        None => return false,
                    }
                }
            })
    }
}

// ---------------------------------------------------------------------------
// Errors, deciders, commands

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("action blocked: {0}")]
    Gate(BlockReason),
    #[error("unknown character '{0}'")]
    UnknownCharacter(String),
    #[error("unknown story node '{0}'")]
    UnknownNode(String),
    #[error("world spec is invalid ({} violation(s))", .0.len())]
    InvalidWorld(Vec<Violation>),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("decider failed: {0}")]
    Decider(String),
    #[error("replay diverged: {0}")]
    Replay(String),
}

/// Source of NPC actions.
pub trait Decider {
    fn decide(
        &mut self,
        state: &AgentState,
        graph: &RelationshipGraph,
        scene: &SceneContext<'_>,
        config: &AgentConfig,
    ) -> Result<(AgentAction, BehaviorEntry), RuntimeError>;
}

/// Decides through an LLM provider.
pub struct LlmDecider<'p> {
    provider: &'p dyn Provider,
}

impl<'p> LlmDecider<'p> {
    pub fn new(provider: &'p dyn Provider) -> Self {
        Self { provider }
    }
}

impl Decider for LlmDecider<'_> {
    fn decide(
        &mut self,
        state: &AgentState,
        graph: &RelationshipGraph,
        scene: &SceneContext<'_>,
        config: &AgentConfig,
    ) -> Result<(AgentAction, BehaviorEntry), RuntimeError> {
        Ok(decide(state, graph, scene, self.provider, config)?)
    }
}

/// Replays NPC actions taken from a log, in order.
#[derive(Debug, Default)]
pub struct RecordedDecider {
    queue: VecDeque<(String, AgentAction, String)>,
}

impl RecordedDecider {
    /// Collects every autonomous action event of the given log, in order.
    pub fn from_events<'e>(events: impl IntoIterator<Item = &'e EventRecord>) -> Self {
        let queue = events
            .into_iter()
            .filter(|e| !is_user_event(e))
            .filter_map(|e| {
                let action = e.action()?;
                let actor = e.actor.character_id()?.to_string();
                Some((actor, action, e.payload.rationale.clone().unwrap_or_default()))
            })
            .collect();
        Self { queue }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl Decider for RecordedDecider {
    fn decide(
        &mut self,
        state: &AgentState,
        _graph: &RelationshipGraph,
        scene: &SceneContext<'_>,
        _config: &AgentConfig,
    ) -> Result<(AgentAction, BehaviorEntry), RuntimeError> {
        let (actor, action, rationale) = self
            .queue
            .pop_front()
            .ok_or_else(|| RuntimeError::Decider(format!("no recorded action left for {}", state.character_id)))?;
        if actor != state.character_id {
            return Err(RuntimeError::Decider(format!(
                "recorded action belongs to {actor}, expected {}",
                state.character_id
            )));
        }
        let entry = BehaviorEntry {
            turn: scene.turn,
            character_id: actor,
            action: action.clone(),
            rationale_tag: rationale,
        };
        Ok((action, entry))
    }
}

const USER_RATIONALE: &str = "user";

pub fn is_user_event(e: &EventRecord) -> bool {
    e.kind.action().is_some() && e.payload.rationale.as_deref() == Some(USER_RATIONALE)
}

/// A player-level command, as reconstructed from a log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Act { action: AgentAction },
    SwitchRole { character_id: String },
    Rewind { node_id: String },
}

/// Player commands recorded in a session's logs, in the order they were issued.
/// Branches are only ever appended to while active, and a newer branch is
/// always created later, so walking branches in id order restores history.
pub fn commands_from_logs(logs: &BTreeMap<BranchId, Vec<EventRecord>>) -> Vec<Command> {
    let mut out = Vec::new();
    for events in logs.values() {
        for e in events {
            match e.kind {
                EventKind::System(SystemKind::RoleSwitch) => out.push(Command::SwitchRole {
                    character_id: e.payload.target.clone().unwrap_or_default(),
                }),
                EventKind::System(SystemKind::RewindMark) => out.push(Command::Rewind {
                    node_id: e.payload.node_id.clone().unwrap_or_default(),
                }),
                EventKind::Action(_) if is_user_event(e) => out.push(Command::Act {
                    action: e.action().expect("action event"),
                }),
                _ => {}
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Key events and conflict relevance

fn conflict_relevant(world: &WorldSpec, actor: &Actor, kind: EventKind, target: Option<&str>) -> bool {
    match kind {
        EventKind::Action(ActionKind::Betray) | EventKind::System(SystemKind::AllianceDissolved) => true,
        EventKind::Action(k) if k.targets_character() => match (actor.character_id(), target) {
            (Some(a), Some(t)) => world
                .conflicts
                .iter()
                .any(|c| c.parties.iter().any(|p| p == a) && c.parties.iter().any(|p| p == t)),
            _ => false,
        },
        _ => false,
    }
}

/// Key events are snapshot-worthy: betrayals, secrets, quest updates, broken
/// alliances, and conflict beats played out with every party of a conflict
/// at the event's location. `locations` maps character id to location.
pub fn is_key_event(event: &EventRecord, world: &WorldSpec, locations: &BTreeMap<String, String>) -> bool {
    match event.kind {
        EventKind::Action(ActionKind::Betray | ActionKind::ShareSecret)
        | EventKind::System(SystemKind::AllianceDissolved | SystemKind::QuestUpdate) => true,
        _ if event.conflict_relevant => {
            let Some(here) = event.payload.location.as_deref() else { return false };
            let actor = event.actor.character_id();
            world.conflicts.iter().any(|c| {
                actor.is_some_and(|a| c.parties.iter().any(|p| p == a))
                    && c.parties.iter().all(|p| locations.get(p).map(String::as_str) == Some(here))
            })
        }
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Session

/// A planned mutation; see [`Session::apply`].
#[derive(Debug, Clone)]
pub struct Change {
    pub branch: BranchId,
    pub new_branch: Option<BranchInfo>,
    pub events: Vec<EventRecord>,
    pub node: Option<StoryNode>,
    pub snapshot: Option<Arc<SessionState>>,
    pub state: SessionState,
}

#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    story: StoryGraph,
    logs: BTreeMap<BranchId, Vec<EventRecord>>,
    snapshots: BTreeMap<String, Arc<SessionState>>,
    agent_config: AgentConfig,
    pacing_config: PacingConfig,
}

impl Session {
    /// Turn 0, branch 0, no events; the first declared character is controlled.
    pub fn new(world: WorldSpec, seed: u64, agent_config: AgentConfig, pacing_config: PacingConfig) -> Result<Self, RuntimeError> {
        let violations = validate_world_spec(&world);
        if !violations.is_empty() {
            return Err(RuntimeError::InvalidWorld(violations));
        }
        agent_config.validate()?;
        pacing_config.validate()?;
        let (mut agents, graph) = init_agents(&world);
        let controlled = world.characters[0].id.clone();
        agents.get_mut(&controlled).expect("first character").suspended = true;
        let state = SessionState {
            world,
            agents,
            graph,
            pacing: PacingState::new(&pacing_config),
            controlled_character: controlled,
            rng: SessionRng::new(seed),
            turn: 0,
            behavior: BehaviorLog::default(),
        };
        Ok(Self {
            state,
            story: StoryGraph::default(),
            logs: BTreeMap::from([(ROOT_BRANCH, Vec::new())]),
            snapshots: BTreeMap::new(),
            agent_config,
            pacing_config,
        })
    }

    pub fn with_defaults(world: WorldSpec, seed: u64) -> Result<Self, RuntimeError> {
        Self::new(world, seed, AgentConfig::default(), PacingConfig::default())
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn story(&self) -> &StoryGraph {
        &self.story
    }

    pub fn logs(&self) -> &BTreeMap<BranchId, Vec<EventRecord>> {
        &self.logs
    }

    pub fn events(&self, branch: BranchId) -> Option<&[EventRecord]> {
        self.logs.get(&branch).map(Vec::as_slice)
    }

    pub fn agent_config(&self) -> &AgentConfig {
        &self.agent_config
    }

    pub fn pacing_config(&self) -> &PacingConfig {
        &self.pacing_config
    }

    pub fn state_hash(&self) -> String {
        self.state.hash()
    }

    pub fn snapshot_state(&self, snapshot_ref: &str) -> Option<Arc<SessionState>> {
        self.snapshots.get(snapshot_ref).cloned()
    }

    pub fn snapshots(&self) -> &BTreeMap<String, Arc<SessionState>> {
        &self.snapshots
    }

    /// Content-addressed copy of the current state.
    pub fn snapshot(&mut self) -> String {
        let r = self.state.hash();
        self.snapshots.entry(r.clone()).or_insert_with(|| Arc::new(self.state.clone()));
        r
    }

    /// Events visible from `branch`: ancestors up to each fork point, then the branch itself.
    pub fn path_events(&self, branch: BranchId) -> Vec<&EventRecord> {
        let lineage = self.story.lineage(branch);
        let mut out = Vec::new();
        for (i, b) in lineage.iter().enumerate() {
            let limit = lineage
                .get(i + 1)
                .and_then(|child| self.story.branches.get(child))
                .and_then(|info| info.fork_seq)
                .unwrap_or(u64::MAX);
            if let Some(log) = self.logs.get(b) {
                out.extend(log.iter().filter(|e| e.seq <= limit));
            }
        }
        out
    }

    /// Sequence number the next event on `branch` must carry.
    pub fn next_seq(&self, branch: BranchId) -> u64 {
        if let Some(last) = self.logs.get(&branch).and_then(|l| l.last()) {
            return last.seq + 1;
        }
        match self.story.branches.get(&branch).and_then(|b| b.fork_seq) {
            Some(fork) => fork + 1,
            None => 0,
        }
    }

    /// Commits a planned change.
    pub fn apply(&mut self, change: Change) {
        if let Some(info) = change.new_branch {
            self.story.branches.insert(change.branch, info);
            self.logs.entry(change.branch).or_default();
        }
        self.story.active_branch = change.branch;
        self.logs.entry(change.branch).or_default().extend(change.events);
        if let Some(node) = change.node {
            if let Some(snap) = change.snapshot {
                self.snapshots.entry(node.snapshot_ref.clone()).or_insert(snap);
            }
            self.story.nodes.push(node);
        }
        self.state = change.state;
    }

    pub fn advance_turn(&mut self, action: AgentAction, decider: &mut dyn Decider) -> Result<Vec<EventRecord>, RuntimeError> {
        let change = self.plan_turn(action, decider)?;
        let events = change.events.clone();
        self.apply(change);
        Ok(events)
    }

    pub fn switch_role(&mut self, character_id: &str) -> Result<EventRecord, RuntimeError> {
        let change = self.plan_switch(character_id)?;
        let event = change.events[0].clone();
        self.apply(change);
        Ok(event)
    }

    pub fn rewind_to(&mut self, node_id: &str) -> Result<BranchId, RuntimeError> {
        let change = self.plan_rewind(node_id)?;
        let branch = change.branch;
        self.apply(change);
        Ok(branch)
    }

    pub fn run_command(&mut self, command: &Command, decider: &mut dyn Decider) -> Result<Vec<EventRecord>, RuntimeError> {
        let change = self.plan_command(command, decider)?;
        let events = change.events.clone();
        self.apply(change);
        Ok(events)
    }

    pub fn plan_command(&self, command: &Command, decider: &mut dyn Decider) -> Result<Change, RuntimeError> {
        match command {
            Command::Act { action } => self.plan_turn(action.clone(), decider),
            Command::SwitchRole { character_id } => self.plan_switch(character_id),
            Command::Rewind { node_id } => self.plan_rewind(node_id),
        }
    }

    pub fn plan_switch(&self, character_id: &str) -> Result<Change, RuntimeError> {
        let mut state = self.state.clone();
        if !state.agents.contains_key(character_id) {
            return Err(RuntimeError::UnknownCharacter(character_id.to_string()));
        }
        let previous = std::mem::replace(&mut state.controlled_character, character_id.to_string());
        if let Some(a) = state.agents.get_mut(&previous) {
            a.suspended = false;
        }
        let target = state.agents.get_mut(character_id).expect("checked above");
        target.suspended = true;
        let location = target.location_id.clone();
        let branch = self.story.active_branch;
        let event = EventRecord {
            seq: self.next_seq(branch),
            turn: state.turn,
            branch_id: branch,
            actor: Actor::System,
            kind: EventKind::System(SystemKind::RoleSwitch),
            payload: EventPayload {
                location: Some(location),
                subject: Some(previous),
                target: Some(character_id.to_string()),
                ..Default::default()
            },
            conflict_relevant: false,
        };
        Ok(Change { branch, new_branch: None, events: vec![event], node: None, snapshot: None, state })
    }

    pub fn plan_rewind(&self, node_id: &str) -> Result<Change, RuntimeError> {
        let node = self
            .story
            .node(node_id)
            .ok_or_else(|| RuntimeError::UnknownNode(node_id.to_string()))?;
        let snap = self
            .snapshots
            .get(&node.snapshot_ref)
            .ok_or_else(|| RuntimeError::UnknownNode(node_id.to_string()))?;
        let state = (**snap).clone();
        let branch = self.story.branches.keys().next_back().copied().unwrap_or(ROOT_BRANCH) + 1;
        let info = BranchInfo { parent_branch: Some(node.branch_id), fork_seq: Some(node.seq) };
        let location = state.agents.get(&state.controlled_character).map(|a| a.location_id.clone());
        let mark = EventRecord {
            seq: node.seq + 1,
            turn: state.turn,
            branch_id: branch,
            actor: Actor::System,
            kind: EventKind::System(SystemKind::RewindMark),
            payload: EventPayload {
                location,
                node_id: Some(node.node_id.clone()),
                parent_branch: Some(node.branch_id),
                fork_seq: Some(node.seq),
                ..Default::default()
            },
            conflict_relevant: false,
        };
        Ok(Change { branch, new_branch: Some(info), events: vec![mark], node: None, snapshot: None, state })
    }

    /// One full turn; see the module docs for the ordering.
    pub fn plan_turn(&self, action: AgentAction, decider: &mut dyn Decider) -> Result<Change, RuntimeError> {
        let branch = self.story.active_branch;
        let mut tx = Turn {
            state: self.state.clone(),
            branch,
            next_seq: self.next_seq(branch),
            events: Vec::new(),
            key: false,
            history: self.path_events(branch),
            config: &self.agent_config,
        };

        let player = tx.state.controlled_character.clone();
        {
            let actor = &tx.state.agents[&player];
            if let GateDecision::Blocked(reason) = gate_action(&action, actor, &tx.state.graph, &tx.state.world, &self.agent_config) {
                return Err(RuntimeError::Gate(reason));
            }
        }

        let user_event = tx.act(&player, &action, USER_RATIONALE);
        let perceivers = tx.perceive_all(&user_event, &player)?;

        for npc in perceivers {
            let roll = tx.state.rng.next_unit();
            if roll >= tx.state.pacing.npc_initiative_prob {
                continue;
            }
            let (npc_action, entry) = {
                let st = &tx.state;
                let agent = &st.agents[&npc];
                let scene = SceneContext {
                    world: &st.world,
                    turn: st.turn,
                    present: st.present_at(&agent.location_id, &npc),
                    recent_events: tx.recent_for(agent),
                };
                decider.decide(agent, &st.graph, &scene, &self.agent_config)?
            };
            let agent = &tx.state.agents[&npc];
            if let GateDecision::Blocked(reason) = gate_action(&npc_action, agent, &tx.state.graph, &tx.state.world, &self.agent_config) {
                return Err(RuntimeError::Decider(format!("{npc} chose a blocked action ({reason})")));
            }
            tx.state.behavior.append(entry)?;
            let rationale = tx.state.behavior.entries().last().map(|e| e.rationale_tag.clone()).unwrap_or_default();
            let ev = tx.act(&npc, &npc_action, &rationale);
            tx.perceive_all(&ev, &npc)?;
        }

        let now = tx.state.turn;
        let all = tx.history.iter().copied().chain(tx.events.iter());
        let heat = compute_plot_heat(all.clone(), now, self.pacing_config.heat_decay);
        let density = compute_interaction_density(all, now, self.pacing_config.density_window);
        let (pacing, offered) = pacing_adjust(&tx.state.pacing, heat, density, &tx.state.world.quests, &self.pacing_config);
        tx.state.pacing = pacing;
        if let Some(quest) = offered {
            let assigned = tx.state.world.quests.iter().find(|q| q.id == quest).map(|q| q.assigned_to.clone());
            let location = assigned.as_ref().and_then(|c| tx.state.agents.get(c)).map(|a| a.location_id.clone());
            tx.push_system(SystemKind::SideQuestOffered, EventPayload {
                location,
                subject: assigned,
                quest: Some(quest),
                ..Default::default()
            });
        }

        for agent in tx.state.agents.values_mut() {
            agent.end_turn(&self.agent_config);
        }
        tx.state.turn += 1;

        let Turn { state, events, key, .. } = tx;
        let (node, snapshot) = if key {
            let snap = Arc::new(state.clone());
            let node = StoryNode {
                node_id: format!("n{}", self.story.nodes.len()),
                branch_id: branch,
                seq: events.last().expect("turn has events").seq,
                turn: state.turn,
                snapshot_ref: snap.hash(),
            };
            (Some(node), Some(snap))
        } else {
            (None, None)
        };
        Ok(Change { branch, new_branch: None, events, node, snapshot, state })
    }

    /// Rebuilds a session from its logs, re-running every command with the
    /// recorded NPC actions, and checks the regenerated logs match exactly.
    pub fn replay_logs(
        world: WorldSpec,
        seed: u64,
        agent_config: AgentConfig,
        pacing_config: PacingConfig,
        logs: &BTreeMap<BranchId, Vec<EventRecord>>,
    ) -> Result<Self, RuntimeError> {
        let mut session = Self::new(world, seed, agent_config, pacing_config)?;
        let mut decider = RecordedDecider::from_events(logs.values().flatten());
        for command in commands_from_logs(logs) {
            session
                .run_command(&command, &mut decider)
                .map_err(|e| RuntimeError::Replay(format!("{command:?}: {e}")))?;
        }
        if decider.remaining() > 0 {
            return Err(RuntimeError::Replay(format!("{} recorded action(s) never replayed", decider.remaining())));
        }
        let expected: BTreeMap<_, _> = logs.iter().filter(|(b, l)| **b == ROOT_BRANCH || !l.is_empty()).collect();
        let actual: BTreeMap<_, _> = session.logs.iter().collect();
        if expected != actual {
            let first = first_difference(logs, &session.logs);
            return Err(RuntimeError::Replay(format!("regenerated log differs at {first}")));
        }
        Ok(session)
    }
}

fn first_difference(a: &BTreeMap<BranchId, Vec<EventRecord>>, b: &BTreeMap<BranchId, Vec<EventRecord>>) -> String {
    for (branch, la) in a {
        let lb = b.get(branch).map(Vec::as_slice).unwrap_or(&[]);
        for (i, e) in la.iter().enumerate() {
            if lb.get(i) != Some(e) {
                return format!("branch {branch}, seq {}", e.seq);
            }
        }
        if lb.len() > la.len() {
            return format!("branch {branch}, seq {}", lb[la.len()].seq);
        }
    }
    "an extra branch".to_string()
}

/// Working set of a turn in progress.
struct Turn<'s> {
    state: SessionState,
    branch: BranchId,
    next_seq: u64,
    events: Vec<EventRecord>,
    key: bool,
    history: Vec<&'s EventRecord>,
    config: &'s AgentConfig,
}

impl Turn<'_> {
    fn locations(&self) -> BTreeMap<String, String> {
        self.state
            .agents
            .iter()
            .map(|(id, a)| (id.clone(), a.location_id.clone()))
            .collect()
    }

    fn push(&mut self, actor: Actor, kind: EventKind, payload: EventPayload) -> EventRecord {
        let relevant = conflict_relevant(&self.state.world, &actor, kind, payload.target.as_deref());
        let event = EventRecord {
            seq: self.next_seq,
            turn: self.state.turn,
            branch_id: self.branch,
            actor,
            kind,
            payload,
            conflict_relevant: relevant,
        };
        self.next_seq += 1;
        if is_key_event(&event, &self.state.world, &self.locations()) {
            self.key = true;
        }
        self.events.push(event.clone());
        event
    }

    fn push_system(&mut self, kind: SystemKind, payload: EventPayload) -> EventRecord {
        self.push(Actor::System, EventKind::System(kind), payload)
    }

    /// Appends an action event and applies its effect on the world.
    fn act(&mut self, actor: &str, action: &AgentAction, rationale: &str) -> EventRecord {
        let origin = self.state.agents[actor].location_id.clone();
        let event = self.push(
            Actor::Character(actor.to_string()),
            EventKind::Action(action.kind),
            EventPayload {
                location: Some(origin.clone()),
                target: action.target.clone(),
                content: action.content.clone(),
                rationale: Some(rationale.to_string()),
                ..Default::default()
            },
        );
        if action.kind == ActionKind::Move {
            let dest = action.target.clone().expect("gated move has a target");
            self.state.agents.get_mut(actor).expect("actor exists").location_id = dest.clone();
            if actor == self.state.controlled_character {
                self.push_system(SystemKind::SceneChange, EventPayload {
                    location: Some(origin),
                    subject: Some(actor.to_string()),
                    target: Some(dest),
                    ..Default::default()
                });
            }
        }
        event
    }

    /// Every non-suspended agent that can see the event perceives it, in id
    /// order. Returns the perceivers.
    fn perceive_all(&mut self, event: &EventRecord, actor: &str) -> Result<Vec<String>, RuntimeError> {
        let ids: Vec<String> = self
            .state
            .agents
            .values()
            .filter(|a| !a.suspended && a.character_id != actor && is_visible(a, event))
            .map(|a| a.character_id.clone())
            .collect();
        for id in &ids {
            let agent = self.state.agents.get_mut(id).expect("listed above");
            let fx = perceive_in_place(agent, &mut self.state.graph, event, self.config)?;
            for (from, to) in fx.dissolved {
                let location = self.state.agents[&from].location_id.clone();
                self.push_system(SystemKind::AllianceDissolved, EventPayload {
                    location: Some(location),
                    subject: Some(from),
                    target: Some(to),
                    ..Default::default()
                });
            }
        }
        Ok(ids)
    }

    fn recent_for(&self, agent: &AgentState) -> Vec<String> {
        let mut recent: Vec<String> = self
            .events
            .iter()
            .rev()
            .chain(self.history.iter().rev().copied())
            .filter(|e| is_visible(agent, e))
            .take(RECENT_EVENTS)
            .map(EventRecord::describe)
            .collect();
        recent.reverse();
        recent
    }
}

/// Convenience: a session driven by a provider.
pub fn advance_with_provider(session: &mut Session, action: AgentAction, provider: &dyn Provider) -> Result<Vec<EventRecord>, RuntimeError> {
    session.advance_turn(action, &mut LlmDecider::new(provider))
}
