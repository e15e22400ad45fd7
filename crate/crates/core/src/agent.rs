//! Character agents: explicit state, deterministic update rules, trust-gated
//! actions and LLM-backed decisions with a total fallback.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::EventRecord;
use crate::extract::json_object_slice;
use crate::llm::{ChatMessage, PromptRequest, Provider};
use crate::schema::{clamp, AffectVector, Goal, RelationshipSpec, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Say,
    Move,
    Give,
    Cooperate,
    Betray,
    ShareSecret,
    Observe,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Say,
        ActionKind::Move,
        ActionKind::Give,
        ActionKind::Cooperate,
        ActionKind::Betray,
        ActionKind::ShareSecret,
        ActionKind::Observe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Say => "say",
            Self::Move => "move",
            Self::Give => "give",
            Self::Cooperate => "cooperate",
            Self::Betray => "betray",
            Self::ShareSecret => "share_secret",
            Self::Observe => "observe",
        }
    }

    pub fn verb(self) -> &'static str {
        match self {
            Self::Say => "says to",
            Self::Move => "moves to",
            Self::Give => "gives to",
            Self::Cooperate => "cooperates with",
            Self::Betray => "betrays",
            Self::ShareSecret => "shares a secret with",
            Self::Observe => "observes",
        }
    }

    pub fn targets_character(self) -> bool {
        matches!(self, Self::Say | Self::Give | Self::Cooperate | Self::Betray | Self::ShareSecret)
    }

    /// Initial memory salience of a perceived event of this kind.
    pub fn salience(self) -> f64 {
        match self {
            Self::Betray => 0.9,
            Self::ShareSecret => 0.8,
            Self::Cooperate => 0.6,
            Self::Give => 0.5,
            Self::Say => 0.4,
            Self::Move => 0.2,
            Self::Observe => 0.1,
        }
    }

    pub fn valence_shift(self) -> f64 {
        match self {
            Self::Betray => -0.3,
            Self::Cooperate => 0.2,
            Self::Give => 0.1,
            _ => 0.0,
        }
    }

    pub fn arousal_shift(self) -> f64 {
        match self {
            Self::Betray | Self::Cooperate => 0.1,
            _ => 0.0,
        }
    }
}

impl std::str::FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown action kind '{s}'"))
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical form is a single-line JSON object `{kind, target?, content?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl AgentAction {
    pub fn new(kind: ActionKind, target: Option<&str>, content: Option<&str>) -> Self {
        Self {
            kind,
            target: target.map(str::to_string),
            content: content.map(str::to_string),
        }
    }

    pub fn observe() -> Self {
        Self::new(ActionKind::Observe, None, None)
    }

    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("action serializes")
    }
}

/// Parses a model reply into an action, tolerating surrounding text.
pub fn parse_action(text: &str) -> Result<AgentAction, String> {
    serde_json::from_str(json_object_slice(text.trim())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub turn: u64,
    pub content: String,
    pub salience: f64,
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub character_id: String,
    pub location_id: String,
    pub affect: AffectVector,
    pub beliefs: BTreeMap<String, f64>,
    pub goals: Vec<Goal>,
    /// Sorted by turn.
    pub memory: Vec<MemoryEntry>,
    /// Set while the player controls this character.
    pub suspended: bool,
}

impl AgentState {
    /// Inserts after every entry with the same or an earlier turn.
    pub fn remember(&mut self, entry: MemoryEntry) {
        let at = self.memory.partition_point(|m| m.turn <= entry.turn);
        self.memory.insert(at, entry);
    }

    /// Per-turn arousal decay toward zero.
    pub fn end_turn(&mut self, config: &AgentConfig) {
        self.affect.arousal = clamp(self.affect.arousal * config.arousal_decay, 0.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationshipEdge {
    pub trust: f64,
    pub power: f64,
    pub dependency: f64,
    pub alliance: bool,
}

impl Default for RelationshipEdge {
    fn default() -> Self {
        Self { trust: 0.5, power: 0.0, dependency: 0.0, alliance: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EdgeRecord {
    from: String,
    to: String,
    #[serde(flatten)]
    edge: RelationshipEdge,
}

/// Directed edges keyed by `(from, to)`; serialized as a sorted list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<EdgeRecord>", from = "Vec<EdgeRecord>")]
pub struct RelationshipGraph {
    pub edges: BTreeMap<(String, String), RelationshipEdge>,
}

impl From<RelationshipGraph> for Vec<EdgeRecord> {
    fn from(g: RelationshipGraph) -> Self {
        g.edges
            .into_iter()
            .map(|((from, to), edge)| EdgeRecord { from, to, edge })
            .collect()
    }
}

impl From<Vec<EdgeRecord>> for RelationshipGraph {
    fn from(v: Vec<EdgeRecord>) -> Self {
        Self {
            edges: v.into_iter().map(|r| ((r.from, r.to), r.edge)).collect(),
        }
    }
}

impl RelationshipGraph {
    pub fn get(&self, from: &str, to: &str) -> Option<&RelationshipEdge> {
        self.edges.get(&(from.to_string(), to.to_string()))
    }

    /// Trust of `from` toward `to`, neutral when no edge exists.
    pub fn trust(&self, from: &str, to: &str) -> f64 {
        self.get(from, to).map(|e| e.trust).unwrap_or(RelationshipEdge::default().trust)
    }

    pub fn edge_mut(&mut self, from: &str, to: &str) -> &mut RelationshipEdge {
        self.edges.entry((from.to_string(), to.to_string())).or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEntry {
    pub turn: u64,
    pub character_id: String,
    pub action: AgentAction,
    pub rationale_tag: String,
}

/// Append-only record of chosen actions with non-decreasing turns.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BehaviorLog {
    entries: Vec<BehaviorEntry>,
}

impl BehaviorLog {
    pub fn append(&mut self, entry: BehaviorEntry) -> Result<(), AgentError> {
        if let Some(last) = self.entries.last() {
            if entry.turn < last.turn {
                return Err(AgentError::TurnRegression { last: last.turn, got: entry.turn });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[BehaviorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Update-rule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub belief_rate: f64,
    pub trust_rate_up: f64,
    pub trust_rate_down: f64,
    pub memory_decay: f64,
    pub prune_threshold: f64,
    pub secret_trust_threshold: f64,
    pub alliance_break_threshold: f64,
    pub memory_top_k: usize,
    pub arousal_decay: f64,
    /// Recency weight per turn of age when ranking memories.
    pub recency_weight: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            belief_rate: 0.4,
            trust_rate_up: 0.3,
            trust_rate_down: 0.5,
            memory_decay: 0.95,
            prune_threshold: 0.05,
            secret_trust_threshold: 0.6,
            alliance_break_threshold: 0.2,
            memory_top_k: 8,
            arousal_decay: 0.95,
            recency_weight: 0.9,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let rates = [
            ("belief_rate", self.belief_rate),
            ("trust_rate_up", self.trust_rate_up),
            ("trust_rate_down", self.trust_rate_down),
            ("memory_decay", self.memory_decay),
            ("arousal_decay", self.arousal_decay),
            ("recency_weight", self.recency_weight),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v <= 1.0) {
                return Err(AgentError::Range(format!("{name} = {v} outside (0, 1]")));
            }
        }
        let thresholds = [
            ("prune_threshold", self.prune_threshold),
            ("secret_trust_threshold", self.secret_trust_threshold),
            ("alliance_break_threshold", self.alliance_break_threshold),
        ];
        for (name, v) in thresholds {
            if !(0.0..=1.0).contains(&v) {
                return Err(AgentError::Range(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("value out of range: {0}")]
    Range(String),
    #[error("event {seq} is not visible to {character}")]
    NotVisible { seq: u64, character: String },
    #[error("agent {0} is suspended")]
    Suspended(String),
    #[error("behavior log turn went backwards ({got} after {last})")]
    TurnRegression { last: u64, got: u64 },
}

// ---------------------------------------------------------------------------
// Construction

/// One agent per character plus the relationship graph. Conflict pairs
/// without a declared edge get the neutral default.
pub fn init_agents(spec: &WorldSpec) -> (BTreeMap<String, AgentState>, RelationshipGraph) {
    let mut agents = BTreeMap::new();
    for ch in &spec.characters {
        let mut state = AgentState {
            character_id: ch.id.clone(),
            location_id: ch.initial_location.clone(),
            affect: ch.initial_affect,
            beliefs: BTreeMap::new(),
            goals: ch.goals.clone(),
            memory: Vec::new(),
            suspended: false,
        };
        if let Some(secret) = &ch.secret {
            state.memory.push(MemoryEntry {
                turn: 0,
                content: format!("My secret: {secret}"),
                salience: 1.0,
                pinned: true,
            });
        }
        agents.insert(ch.id.clone(), state);
    }

    let mut graph = RelationshipGraph::default();
    for r in &spec.relationships {
        graph.edges.insert((r.from.clone(), r.to.clone()), edge_from_spec(r));
    }
    for c in &spec.conflicts {
        for p in &c.parties {
            for q in &c.parties {
                if p != q {
                    graph.edges.entry((p.clone(), q.clone())).or_default();
                }
            }
        }
    }
    (agents, graph)
}

fn edge_from_spec(r: &RelationshipSpec) -> RelationshipEdge {
    RelationshipEdge {
        trust: r.trust,
        power: r.power,
        dependency: r.dependency,
        alliance: r.alliance,
    }
}

// ---------------------------------------------------------------------------
// Update rules

fn check_unit(name: &str, v: f64) -> Result<(), AgentError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(AgentError::Range(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Exponential moving average of credence toward the evidence strength.
pub fn update_belief(credence: f64, evidence: f64, rate: f64) -> Result<f64, AgentError> {
    check_unit("credence", credence)?;
    check_unit("evidence", evidence)?;
    check_unit("rate", rate)?;
    Ok(clamp((1.0 - rate) * credence + rate * evidence, 0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustOutcome {
    Cooperate,
    Betray,
}

/// Moves trust toward 1 on cooperation (rate `trust_rate_up`) or toward 0 on
/// betrayal (rate `trust_rate_down`).
pub fn update_trust(trust: f64, outcome: TrustOutcome, config: &AgentConfig) -> f64 {
    let t = clamp(trust, 0.0, 1.0);
    let next = match outcome {
        TrustOutcome::Cooperate => (1.0 - config.trust_rate_up) * t + config.trust_rate_up,
        TrustOutcome::Betray => (1.0 - config.trust_rate_down) * t,
    };
    clamp(next, 0.0, 1.0)
}

/// Dissolves an alliance whose trust fell strictly below the break threshold.
/// The flag is true when a dissolution happened.
pub fn maybe_break_alliance(edge: RelationshipEdge, config: &AgentConfig) -> (RelationshipEdge, bool) {
    if edge.alliance && edge.trust < config.alliance_break_threshold {
        (RelationshipEdge { alliance: false, ..edge }, true)
    } else {
        (edge, false)
    }
}

/// Scales unpinned salience by `decay` and prunes entries that fall below `threshold`.
pub fn decay_memory(memory: &[MemoryEntry], decay: f64, threshold: f64) -> Vec<MemoryEntry> {
    let mut out = memory.to_vec();
    decay_memory_in_place(&mut out, decay, threshold);
    out
}

pub fn decay_memory_in_place(memory: &mut Vec<MemoryEntry>, decay: f64, threshold: f64) {
    memory.retain_mut(|m| {
        if m.pinned {
            return true;
        }
        m.salience = clamp(m.salience * decay, 0.0, 1.0);
        m.salience >= threshold
    });
}

/// Proposition minted from an event: `actor_did_kind[_target]`.
pub fn proposition_id(event: &EventRecord) -> String {
    match &event.payload.target {
        Some(t) => format!("{}_did_{}_{}", event.actor, event.kind, t),
        None => format!("{}_did_{}", event.actor, event.kind),
    }
}

/// Whether `state`'s character can see the event: same location, or targeted.
pub fn is_visible(state: &AgentState, event: &EventRecord) -> bool {
    event.payload.location.as_deref() == Some(state.location_id.as_str())
        || event.character_target() == Some(state.character_id.as_str())
}

/// Side effects of one perception beyond the state change itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptionEffects {
    /// `(perceiver, other)` pairs whose alliance just dissolved.
    pub dissolved: Vec<(String, String)>,
}

/// Pure form of [`perceive_in_place`].
pub fn perceive(
    state: &AgentState,
    graph: &RelationshipGraph,
    event: &EventRecord,
    config: &AgentConfig,
) -> Result<(AgentState, RelationshipGraph, PerceptionEffects), AgentError> {
    let mut s = state.clone();
    let mut g = graph.clone();
    let fx = perceive_in_place(&mut s, &mut g, event, config)?;
    Ok((s, g, fx))
}

/// Memory, belief, trust, alliance and affect updates for one visible event,
/// followed by memory decay. Leaves everything untouched on error.
pub fn perceive_in_place(
    state: &mut AgentState,
    graph: &mut RelationshipGraph,
    event: &EventRecord,
    config: &AgentConfig,
) -> Result<PerceptionEffects, AgentError> {
    if !is_visible(state, event) {
        return Err(AgentError::NotVisible { seq: event.seq, character: state.character_id.clone() });
    }
    let mut fx = PerceptionEffects::default();
    let kind = event.kind.action();

    state.remember(MemoryEntry {
        turn: event.turn,
        content: event.describe(),
        salience: kind.map(ActionKind::salience).unwrap_or(0.3),
        pinned: false,
    });

    let prop = proposition_id(event);
    let prior = state.beliefs.get(&prop).copied().unwrap_or(0.5);
    let credence = update_belief(prior, 1.0, config.belief_rate)?;
    state.beliefs.insert(prop, credence);

    let targeted = event.character_target() == Some(state.character_id.as_str());
    if let (Some(kind), Some(actor), true) = (kind, event.actor.character_id(), targeted) {
        let outcome = match kind {
            ActionKind::Cooperate => Some(TrustOutcome::Cooperate),
            ActionKind::Betray => Some(TrustOutcome::Betray),
            _ => None,
        };
        if let Some(outcome) = outcome {
            let edge = graph.edge_mut(&state.character_id, actor);
            edge.trust = update_trust(edge.trust, outcome, config);
            if outcome == TrustOutcome::Cooperate
                && !edge.alliance
                && edge.trust >= 2.0 * config.alliance_break_threshold
            {
                edge.alliance = true;
            }
            let (next, dissolved) = maybe_break_alliance(*edge, config);
            *edge = next;
            if dissolved {
                fx.dissolved.push((state.character_id.clone(), actor.to_string()));
            }
        }
    }

    if let Some(kind) = kind {
        state.affect = AffectVector {
            valence: state.affect.valence + kind.valence_shift(),
            arousal: state.affect.arousal + kind.arousal_shift(),
        }
        .clamped();
    }

    decay_memory_in_place(&mut state.memory, config.memory_decay, config.prune_threshold);
    Ok(fx)
}

// ---------------------------------------------------------------------------
// Gating

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlockReason {
    TrustBelowThreshold,
    NotAdjacent,
    MissingTarget,
    UnknownTarget,
    SelfTarget,
    UnexpectedTarget,
}

impl BlockReason {
    pub fn code(self) -> &'static str {
        match self {
            Self::TrustBelowThreshold => "TRUST_BELOW_THRESHOLD",
            Self::NotAdjacent => "NOT_ADJACENT",
            Self::MissingTarget => "MISSING_TARGET",
            Self::UnknownTarget => "UNKNOWN_TARGET",
            Self::SelfTarget => "SELF_TARGET",
            Self::UnexpectedTarget => "UNEXPECTED_TARGET",
        }
    }
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Allowed,
    Blocked(BlockReason),
}

/// Kind-specific target rules, then the trust and adjacency gates.
pub fn gate_action(
    action: &AgentAction,
    actor: &AgentState,
    graph: &RelationshipGraph,
    world: &WorldSpec,
    config: &AgentConfig,
) -> GateDecision {
    use GateDecision::*;
    let target = action.target.as_deref();
    match action.kind {
        k if k.targets_character() => {
            let Some(t) = target else { return Blocked(BlockReason::MissingTarget) };
            if world.character(t).is_none() {
                return Blocked(BlockReason::UnknownTarget);
            }
            if t == actor.character_id {
                return Blocked(BlockReason::SelfTarget);
            }
            if k == ActionKind::ShareSecret
                && graph.trust(&actor.character_id, t) < config.secret_trust_threshold
            {
                return Blocked(BlockReason::TrustBelowThreshold);
            }
            Allowed
        }
        ActionKind::Move => {
            let Some(t) = target else { return Blocked(BlockReason::MissingTarget) };
            if world.location(t).is_none() {
                return Blocked(BlockReason::UnknownTarget);
            }
            if !world.is_adjacent(&actor.location_id, t) {
                return Blocked(BlockReason::NotAdjacent);
            }
            Allowed
        }
        _ => match target {
            None => Allowed,
            Some(t) if world.character(t).is_some() || world.location(t).is_some() => Allowed,
            Some(_) => Blocked(BlockReason::UnexpectedTarget),
        },
    }
}

// ---------------------------------------------------------------------------
// Prompting and decisions

/// What an agent can see when asked to act.
#[derive(Debug, Clone)]
pub struct SceneContext<'a> {
    pub world: &'a WorldSpec,
    pub turn: u64,
    /// Other characters at the agent's location, sorted by id.
    pub present: Vec<String>,
    /// Recent visible events, oldest first.
    pub recent_events: Vec<String>,
}

/// Memories ranked by salience × recency_weight^age, best first.
pub fn rank_memories<'m>(memory: &'m [MemoryEntry], now: u64, config: &AgentConfig) -> Vec<&'m MemoryEntry> {
    let mut scored: Vec<(f64, usize, &MemoryEntry)> = memory
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let age = now.saturating_sub(m.turn) as i32;
            (m.salience * config.recency_weight.powi(age), i, m)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.2.turn.cmp(&a.2.turn)).then(a.1.cmp(&b.1)));
    scored.into_iter().take(config.memory_top_k).map(|(_, _, m)| m).collect()
}

const AGENT_SYSTEM_TEXT: &str = "You play one character in an interactive story. Stay in \
character, act on your goals and memories, and answer with exactly one action.";

const ACTION_SCHEMA: &str = r#"Reply with exactly one line of JSON:
{"kind": "say|move|give|cooperate|betray|share_secret|observe", "target": "id", "content": "text"}
say, give, cooperate, betray and share_secret need a character id as target.
move needs the id of an adjacent location. observe needs no target.
Omit fields you do not use."#;

pub fn build_agent_prompt(
    state: &AgentState,
    graph: &RelationshipGraph,
    scene: &SceneContext<'_>,
    config: &AgentConfig,
) -> Result<PromptRequest, AgentError> {
    if state.suspended {
        return Err(AgentError::Suspended(state.character_id.clone()));
    }
    let world = scene.world;
    let me = &state.character_id;
    let mut s = String::new();

    s.push_str("# Character\n");
    if let Some(c) = world.character(me) {
        s.push_str(&format!("Name: {} ({})\n", c.display_name(), c.id));
        s.push_str(&format!("Archetype: {}\n", c.archetype));
        s.push_str(&format!("Description: {}\n", c.public_description));
        if let Some(secret) = &c.secret {
            s.push_str(&format!("Secret (yours alone): {secret}\n"));
        }
    } else {
        s.push_str(&format!("Name: {me}\n"));
    }
    s.push_str(&format!("Mood: valence {:.2}, arousal {:.2}\n", state.affect.valence, state.affect.arousal));

    s.push_str("\n# Scene\n");
    s.push_str(&format!("Turn {}. Setting: {} ({})\n", scene.turn, world.title, world.temporal_cue));
    if let Some(loc) = world.location(&state.location_id) {
        s.push_str(&format!("You are at {} ({}): {}\n", loc.name, loc.id, loc.description));
        if !loc.adjacent_to.is_empty() {
            s.push_str(&format!("Exits: {}\n", loc.adjacent_to.join(", ")));
        }
    }
    if scene.present.is_empty() {
        s.push_str("Nobody else is here.\n");
    } else {
        for p in &scene.present {
            let name = world.character(p).map(|c| c.display_name()).unwrap_or(p);
            s.push_str(&format!("Present: {name} ({p})\n"));
        }
    }

    s.push_str("\n# Goals\n");
    let mut goals: Vec<&Goal> = state.goals.iter().collect();
    goals.sort_by(|a, b| b.priority.total_cmp(&a.priority));
    for g in goals {
        s.push_str(&format!("- [{:.2}] {}\n", g.priority, g.description));
    }

    s.push_str("\n# Memories\n");
    for m in rank_memories(&state.memory, scene.turn, config) {
        s.push_str(&format!("- (turn {}) {}\n", m.turn, m.content));
    }

    s.push_str("\n# Beliefs\n");
    for (prop, c) in state.beliefs.iter().filter(|(_, c)| **c >= 0.5) {
        s.push_str(&format!("- {prop}: {c:.2}\n"));
    }

    s.push_str("\n# Relationships\n");
    for p in &scene.present {
        if let Some(e) = graph.get(me, p) {
            s.push_str(&format!(
                "- toward {p}: trust {:.2}, power {:.2}, dependency {:.2}, allied {}\n",
                e.trust,
                e.power,
                e.dependency,
                if e.alliance { "yes" } else { "no" }
            ));
        }
    }

    if !scene.recent_events.is_empty() {
        s.push_str("\n# Recent events\n");
        for e in &scene.recent_events {
            s.push_str(&format!("- {e}\n"));
        }
    }

    s.push_str("\n# Action\n");
    s.push_str(ACTION_SCHEMA);

    Ok(PromptRequest {
        system_text: AGENT_SYSTEM_TEXT.to_string(),
        messages: vec![ChatMessage::user(s)],
        temperature: 0.7,
        max_output_tokens: 256,
        tag: format!("agent:{me}"),
    })
}

/// A chosen action and how it was reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub action: AgentAction,
    pub rationale: String,
}

fn attempt(
    provider: &dyn Provider,
    request: &PromptRequest,
    state: &AgentState,
    graph: &RelationshipGraph,
    world: &WorldSpec,
    config: &AgentConfig,
) -> (Option<String>, Result<AgentAction, String>) {
    let reply = match provider.complete(request) {
        Ok(r) => r.text,
        Err(_) => return (None, Err("PROVIDER_ERROR".into())),
    };
    let action = match parse_action(&reply) {
        Ok(a) => a,
        Err(_) => return (Some(reply), Err("PARSE_ERROR".into())),
    };
    match gate_action(&action, state, graph, world, config) {
        GateDecision::Allowed => (Some(reply), Ok(action)),
        GateDecision::Blocked(r) => (Some(reply), Err(r.code().to_string())),
    }
}

/// Prompt, parse and gate; one repair call on failure, then `observe`.
/// Never returns an action the gate would block.
pub fn decide(
    state: &AgentState,
    graph: &RelationshipGraph,
    scene: &SceneContext<'_>,
    provider: &dyn Provider,
    config: &AgentConfig,
) -> Result<(AgentAction, BehaviorEntry), AgentError> {
    let request = build_agent_prompt(state, graph, scene, config)?;
    let (reply, first) = attempt(provider, &request, state, graph, scene.world, config);
    let decision = match first {
        Ok(action) => Decision { action, rationale: "normal".into() },
        Err(reason) => {
            let mut repair = request.clone();
            if let Some(reply) = reply {
                repair.messages.push(ChatMessage::assistant(reply));
            }
            repair.messages.push(ChatMessage::user(format!(
                "That action was rejected ({reason}). Reply with one valid action as a single line of JSON."
            )));
            repair.tag = format!("agent_repair:{}", state.character_id);
            match attempt(provider, &repair, state, graph, scene.world, config).1 {
                Ok(action) => Decision { action, rationale: format!("repair:{reason}") },
                Err(second) => Decision {
                    action: AgentAction::observe(),
                    rationale: format!("fallback:{reason},{second}"),
                },
            }
        }
    };
    let entry = BehaviorEntry {
        turn: scene.turn,
        character_id: state.character_id.clone(),
        action: decision.action.clone(),
        rationale_tag: decision.rationale,
    };
    Ok((decision.action, entry))
}
