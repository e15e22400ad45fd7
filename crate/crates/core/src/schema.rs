//! World spec data protocol: types, canonical JSON form, validation and
//! deterministic template completion.
//!
//! A world spec is the structured document every later stage consumes:
//! locations with symmetric adjacency, characters with goals and affect,
//! directed relationship edges, conflicts and quests.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema version written by this crate.
pub const CURRENT_SCHEMA_VERSION: u32 = 1;

/// Actor name reserved for system events; no character may use it.
pub const RESERVED_ACTOR_ID: &str = "SYSTEM";

pub const DEFAULT_LOCATION_ID: &str = "commons";
pub const DEFAULT_GOAL_TEXT: &str = "pursue the central conflict";
pub const DEFAULT_GOAL_PRIORITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub temporal_cue: String,
    #[serde(default)]
    pub locations: Vec<LocationSpec>,
    #[serde(default)]
    pub characters: Vec<CharacterSpec>,
    #[serde(default)]
    pub relationships: Vec<RelationshipSpec>,
    #[serde(default)]
    pub conflicts: Vec<ConflictSpec>,
    #[serde(default)]
    pub quests: Vec<QuestSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationSpec {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub adjacent_to: Vec<String>,
}

/// Emotional state: valence in [-1, 1], arousal in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffectVector {
    pub valence: f64,
    pub arousal: f64,
}

impl AffectVector {
    pub fn new(valence: f64, arousal: f64) -> Self {
        Self { valence, arousal }
    }

    /// Returns a copy with both components clamped into range.
    pub fn clamped(self) -> Self {
        Self {
            valence: clamp(self.valence, -1.0, 1.0),
            arousal: clamp(self.arousal, 0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub description: String,
    pub priority: f64,
}

impl Goal {
    pub fn new(description: impl Into<String>, priority: f64) -> Self {
        Self {
            description: description.into(),
            priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterSpec {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub archetype: String,
    #[serde(default)]
    pub public_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(default)]
    pub goals: Vec<Goal>,
    /// Empty until placed; completion fills it.
    #[serde(default)]
    pub initial_location: String,
    #[serde(default)]
    pub initial_affect: AffectVector,
}

impl CharacterSpec {
    /// Highest goal priority, or `None` without goals.
    pub fn top_priority(&self) -> Option<f64> {
        self.goals.iter().map(|g| g.priority).reduce(f64::max)
    }

    pub fn display_name(&self) -> &str {
        if self.name.trim().is_empty() {
            &self.id
        } else {
            &self.name
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationshipSpec {
    pub from: String,
    pub to: String,
    pub trust: f64,
    /// Positive means `from` dominates `to`.
    pub power: f64,
    pub dependency: f64,
    pub alliance: bool,
}

impl RelationshipSpec {
    /// Default edge synthesized for conflict pairs without a declared relationship.
    pub fn neutral(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            trust: 0.5,
            power: 0.0,
            dependency: 0.0,
            alliance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parties: Vec<String>,
    #[serde(default)]
    pub stakes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub assigned_to: String,
    #[serde(default)]
    pub trigger: String,
    #[serde(default)]
    pub resolution: String,
}

impl WorldSpec {
    /// An empty document at the current schema version.
    pub fn empty(title: impl Into<String>) -> Self {
        Self {
            schema_version: CURRENT_SCHEMA_VERSION,
            title: title.into(),
            temporal_cue: String::new(),
            locations: Vec::new(),
            characters: Vec::new(),
            relationships: Vec::new(),
            conflicts: Vec::new(),
            quests: Vec::new(),
        }
    }

    pub fn character(&self, id: &str) -> Option<&CharacterSpec> {
        self.characters.iter().find(|c| c.id == id)
    }

    pub fn location(&self, id: &str) -> Option<&LocationSpec> {
        self.locations.iter().find(|l| l.id == id)
    }

    /// Whether `a` lists `b` as a neighbour.
    pub fn is_adjacent(&self, a: &str, b: &str) -> bool {
        self.location(a)
            .map(|l| l.adjacent_to.iter().any(|n| n == b))
            .unwrap_or(false)
    }

    pub fn relationship(&self, from: &str, to: &str) -> Option<&RelationshipSpec> {
        self.relationships
            .iter()
            .find(|r| r.from == from && r.to == to)
    }
}

// ---------------------------------------------------------------------------
// Violations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    SchemaVersion,
    EmptyTitle,
    EmptyId,
    ReservedId,
    DuplicateId,
    UnknownReference,
    MissingInitialLocation,
    SelfAdjacency,
    AdjacencyAsymmetric,
    OutOfRange,
    SelfRelationship,
    DuplicateRelationship,
    ConflictParties,
    MissingGoals,
    MinLocations,
    MinCharacters,
    MinConflicts,
    /// Not produced by the validator; used when a document fails to parse.
    MalformedDocument,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SchemaVersion => "SCHEMA_VERSION",
            Self::EmptyTitle => "EMPTY_TITLE",
            Self::EmptyId => "EMPTY_ID",
            Self::ReservedId => "RESERVED_ID",
            Self::DuplicateId => "DUPLICATE_ID",
            Self::UnknownReference => "UNKNOWN_REFERENCE",
            Self::MissingInitialLocation => "MISSING_INITIAL_LOCATION",
            Self::SelfAdjacency => "SELF_ADJACENCY",
            Self::AdjacencyAsymmetric => "ADJACENCY_ASYMMETRIC",
            Self::OutOfRange => "OUT_OF_RANGE",
            Self::SelfRelationship => "SELF_RELATIONSHIP",
            Self::DuplicateRelationship => "DUPLICATE_RELATIONSHIP",
            Self::ConflictParties => "CONFLICT_PARTIES",
            Self::MissingGoals => "MISSING_GOALS",
            Self::MinLocations => "MIN_LOCATIONS",
            Self::MinCharacters => "MIN_CHARACTERS",
            Self::MinConflicts => "MIN_CONFLICTS",
            Self::MalformedDocument => "MALFORMED_DOCUMENT",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken invariant. `subject` names the offending identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub subject: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.subject, self.message)
    }
}

// ---------------------------------------------------------------------------
// Errors

/// Malformed syntax. Line and column are 1-based; column 0 means end of input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("world spec has {} violation(s): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot complete world spec: {}", join_violations(.violations))]
pub struct CompletionError {
    pub violations: Vec<Violation>,
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

// ---------------------------------------------------------------------------
// Parsing and serialization

/// Strict syntactic decode. Unknown fields are rejected; invariants are not checked.
pub fn decode_world_spec(text: &str) -> Result<WorldSpec, ParseError> {
    Ok(serde_json::from_str(text)?)
}

/// Decode and validate. Every violation is reported, not only the first.
pub fn parse_world_spec(text: &str) -> Result<WorldSpec, SchemaError> {
    let spec = decode_world_spec(text)?;
    let violations = validate_world_spec(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(SchemaError::Validation(violations))
    }
}

/// Canonical form: sorted keys, two-space indent, shortest round-trip numbers,
/// trailing newline.
pub fn serialize_world_spec(spec: &WorldSpec) -> String {
    let mut out = to_canonical_json_pretty(spec);
    out.push('\n');
    out
}

/// Sorted-key JSON. `serde_json::Value` keeps object keys in a `BTreeMap`.
pub(crate) fn to_canonical_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("value serializes to JSON")
}

pub(crate) fn to_canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(&to_canonical_value(value)).expect("JSON value serializes")
}

pub(crate) fn to_canonical_json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(&to_canonical_value(value)).expect("JSON value serializes")
}

// ---------------------------------------------------------------------------
// Validation

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

pub(crate) fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x.is_nan() {
        lo
    } else {
        x.clamp(lo, hi)
    }
}

fn check_ids<'a>(
    kind: &str,
    ids: impl Iterator<Item = &'a str>,
    out: &mut Vec<Violation>,
) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut reported = HashSet::new();
    for (i, id) in ids.enumerate() {
        if id.trim().is_empty() {
            out.push(Violation::new(
                ViolationCode::EmptyId,
                format!("{kind}[{i}]"),
                format!("{kind} #{i} has an empty id"),
            ));
            continue;
        }
        if !seen.insert(id) && reported.insert(id) {
            out.push(Violation::new(
                ViolationCode::DuplicateId,
                id,
                format!("{kind} id '{id}' is declared more than once"),
            ));
        }
    }
    seen
}

fn check_scalar(out: &mut Vec<Violation>, subject: String, value: f64, lo: f64, hi: f64) {
    if !in_range(value, lo, hi) {
        out.push(Violation::new(
            ViolationCode::OutOfRange,
            subject,
            format!("value {value} outside [{lo}, {hi}]"),
        ));
    }
}

/// Checks every structural invariant. Empty iff the spec is valid.
pub fn validate_world_spec(spec: &WorldSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if spec.schema_version < 1 {
        out.push(Violation::new(
            ViolationCode::SchemaVersion,
            "schema_version",
            "schema_version must be at least 1",
        ));
    }
    if spec.title.trim().is_empty() {
        out.push(Violation::new(ViolationCode::EmptyTitle, "title", "title is empty"));
    }

    let location_ids = check_ids("location", spec.locations.iter().map(|l| l.id.as_str()), &mut out);
    let character_ids = check_ids(
        "character",
        spec.characters.iter().map(|c| c.id.as_str()),
        &mut out,
    );
    check_ids("conflict", spec.conflicts.iter().map(|c| c.id.as_str()), &mut out);
    check_ids("quest", spec.quests.iter().map(|q| q.id.as_str()), &mut out);

    if character_ids.contains(RESERVED_ACTOR_ID) {
        out.push(Violation::new(
            ViolationCode::ReservedId,
            RESERVED_ACTOR_ID,
            "character id is reserved for system events",
        ));
    }

    for loc in &spec.locations {
        for n in &loc.adjacent_to {
            if *n == loc.id {
                out.push(Violation::new(
                    ViolationCode::SelfAdjacency,
                    &loc.id,
                    format!("location '{}' lists itself as adjacent", loc.id),
                ));
            } else if !location_ids.contains(n.as_str()) {
                out.push(Violation::new(
                    ViolationCode::UnknownReference,
                    n,
                    format!("location '{}' is adjacent to undeclared location '{n}'", loc.id),
                ));
            } else if !spec.is_adjacent(n, &loc.id) {
                out.push(Violation::new(
                    ViolationCode::AdjacencyAsymmetric,
                    format!("{}->{}", loc.id, n),
                    format!("'{}' lists '{n}' but '{n}' does not list '{}'", loc.id, loc.id),
                ));
            }
        }
    }

    for ch in &spec.characters {
        if ch.initial_location.is_empty() {
            out.push(Violation::new(
                ViolationCode::MissingInitialLocation,
                &ch.id,
                format!("character '{}' has no initial location", ch.id),
            ));
        } else if !location_ids.contains(ch.initial_location.as_str()) {
            out.push(Violation::new(
                ViolationCode::UnknownReference,
                &ch.initial_location,
                format!(
                    "character '{}' starts in undeclared location '{}'",
                    ch.id, ch.initial_location
                ),
            ));
        }
        if ch.goals.is_empty() {
            out.push(Violation::new(
                ViolationCode::MissingGoals,
                &ch.id,
                format!("character '{}' has no goals", ch.id),
            ));
        }
        for (i, g) in ch.goals.iter().enumerate() {
            check_scalar(&mut out, format!("{}.goals[{i}].priority", ch.id), g.priority, 0.0, 1.0);
        }
        check_scalar(&mut out, format!("{}.initial_affect.valence", ch.id), ch.initial_affect.valence, -1.0, 1.0);
        check_scalar(&mut out, format!("{}.initial_affect.arousal", ch.id), ch.initial_affect.arousal, 0.0, 1.0);
    }

    let mut pairs = HashSet::new();
    for r in &spec.relationships {
        let mut resolvable = true;
        for end in [&r.from, &r.to] {
            if !character_ids.contains(end.as_str()) {
                resolvable = false;
                out.push(Violation::new(
                    ViolationCode::UnknownReference,
                    end,
                    format!("relationship {}->{} references undeclared character '{end}'", r.from, r.to),
                ));
            }
        }
        if resolvable && r.from == r.to {
            out.push(Violation::new(
                ViolationCode::SelfRelationship,
                &r.from,
                format!("relationship from '{}' to itself", r.from),
            ));
        }
        if !pairs.insert((r.from.as_str(), r.to.as_str())) {
            out.push(Violation::new(
                ViolationCode::DuplicateRelationship,
                format!("{}->{}", r.from, r.to),
                "more than one edge for this ordered pair",
            ));
        }
        let subject = |field: &str| format!("{}->{}.{field}", r.from, r.to);
        check_scalar(&mut out, subject("trust"), r.trust, 0.0, 1.0);
        check_scalar(&mut out, subject("power"), r.power, -1.0, 1.0);
        check_scalar(&mut out, subject("dependency"), r.dependency, 0.0, 1.0);
    }

    for c in &spec.conflicts {
        for p in &c.parties {
            if !character_ids.contains(p.as_str()) {
                out.push(Violation::new(
                    ViolationCode::UnknownReference,
                    p,
                    format!("conflict '{}' names undeclared party '{p}'", c.id),
                ));
            }
        }
        let distinct: BTreeSet<&str> = c.parties.iter().map(String::as_str).collect();
        if distinct.len() < 2 || distinct.len() != c.parties.len() {
            out.push(Violation::new(
                ViolationCode::ConflictParties,
                &c.id,
                format!("conflict '{}' needs at least two distinct parties", c.id),
            ));
        }
    }

    for q in &spec.quests {
        if !character_ids.contains(q.assigned_to.as_str()) {
            out.push(Violation::new(
                ViolationCode::UnknownReference,
                &q.assigned_to,
                format!("quest '{}' is assigned to undeclared character '{}'", q.id, q.assigned_to),
            ));
        }
    }

    if spec.locations.is_empty() {
        out.push(Violation::new(ViolationCode::MinLocations, "locations", "at least 1 location required"));
    }
    if spec.characters.len() < 2 {
        out.push(Violation::new(ViolationCode::MinCharacters, "characters", "at least 2 characters required"));
    }
    if spec.conflicts.is_empty() {
        out.push(Violation::new(ViolationCode::MinConflicts, "conflicts", "at least 1 conflict required"));
    }

    out
}

// ---------------------------------------------------------------------------
// Completion

/// One element synthesized by [`complete_world_spec_with_report`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CompletionAction {
    SetSchemaVersion { version: u32 },
    SetTitle { title: String },
    AddLocation { id: String },
    PlaceCharacter { character: String, location: String },
    SymmetrizeAdjacency { from: String, to: String },
    AddCharacter { id: String },
    AddGoal { character: String },
    AddConflict { id: String, parties: Vec<String> },
    AddRelationship { from: String, to: String },
}

/// Fills absent elements from fixed template rules; see
/// [`complete_world_spec_with_report`].
pub fn complete_world_spec(partial: &WorldSpec) -> Result<WorldSpec, CompletionError> {
    complete_world_spec_with_report(partial).map(|(spec, _)| spec)
}

fn fresh_id(base: &str, taken: &BTreeSet<String>) -> String {
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|id| !taken.contains(id))
        .expect("unbounded id space")
}

/// Deterministic completion. Existing content is kept; only missing pieces are
/// added:
///
/// - no locations: one `commons` location, every character placed there
/// - asymmetric adjacency: the missing back-edge
/// - fewer than two characters: placeholder strangers
/// - no goals: `pursue the central conflict` at 0.5
/// - no conflicts: the two characters with the highest goal priority
/// - conflict pairs without an edge: trust 0.5, power 0, dependency 0, no alliance
///
/// Contradictions (duplicate ids, dangling references, out-of-range scalars)
/// are returned as a [`CompletionError`].
pub fn complete_world_spec_with_report(
    partial: &WorldSpec,
) -> Result<(WorldSpec, Vec<CompletionAction>), CompletionError> {
    let mut spec = partial.clone();
    let mut actions = Vec::new();

    if spec.schema_version < 1 {
        spec.schema_version = CURRENT_SCHEMA_VERSION;
        actions.push(CompletionAction::SetSchemaVersion { version: CURRENT_SCHEMA_VERSION });
    }
    if spec.title.trim().is_empty() {
        spec.title = "Untitled story".to_string();
        actions.push(CompletionAction::SetTitle { title: spec.title.clone() });
    }

    if spec.locations.is_empty() {
        spec.locations.push(LocationSpec {
            id: DEFAULT_LOCATION_ID.to_string(),
            name: "Commons".to_string(),
            description: "A shared gathering place where every path crosses.".to_string(),
            adjacent_to: Vec::new(),
        });
        actions.push(CompletionAction::AddLocation { id: DEFAULT_LOCATION_ID.to_string() });
        for ch in &mut spec.characters {
            ch.initial_location = DEFAULT_LOCATION_ID.to_string();
            actions.push(CompletionAction::PlaceCharacter {
                character: ch.id.clone(),
                location: DEFAULT_LOCATION_ID.to_string(),
            });
        }
    }

    let declared: BTreeSet<String> = spec.locations.iter().map(|l| l.id.clone()).collect();
    let mut back_edges = Vec::new();
    for loc in &spec.locations {
        for n in &loc.adjacent_to {
            if *n != loc.id && declared.contains(n) && !spec.is_adjacent(n, &loc.id) {
                back_edges.push((n.clone(), loc.id.clone()));
            }
        }
    }
    for (from, to) in back_edges {
        if let Some(l) = spec.locations.iter_mut().find(|l| l.id == from) {
            if !l.adjacent_to.contains(&to) {
                l.adjacent_to.push(to.clone());
                actions.push(CompletionAction::SymmetrizeAdjacency { from, to });
            }
        }
    }

    let first_location = spec.locations[0].id.clone();
    let mut taken: BTreeSet<String> = spec.characters.iter().map(|c| c.id.clone()).collect();
    taken.insert(RESERVED_ACTOR_ID.to_string());
    while spec.characters.len() < 2 {
        let id = fresh_id("stranger", &taken);
        taken.insert(id.clone());
        spec.characters.push(CharacterSpec {
            id: id.clone(),
            name: "Stranger".to_string(),
            archetype: "wanderer".to_string(),
            public_description: "A newcomer whose loyalties are not yet known.".to_string(),
            secret: None,
            goals: Vec::new(),
            initial_location: first_location.clone(),
            initial_affect: AffectVector::default(),
        });
        actions.push(CompletionAction::AddCharacter { id });
    }

    for ch in &mut spec.characters {
        if ch.initial_location.is_empty() {
            ch.initial_location = first_location.clone();
            actions.push(CompletionAction::PlaceCharacter {
                character: ch.id.clone(),
                location: first_location.clone(),
            });
        }
        if ch.goals.is_empty() {
            ch.goals.push(Goal::new(DEFAULT_GOAL_TEXT, DEFAULT_GOAL_PRIORITY));
            actions.push(CompletionAction::AddGoal { character: ch.id.clone() });
        }
    }

    if spec.conflicts.is_empty() {
        let mut ranked: Vec<&CharacterSpec> = spec.characters.iter().collect();
        // stable: ties keep declaration order
        ranked.sort_by(|a, b| {
            let pa = a.top_priority().unwrap_or(0.0);
            let pb = b.top_priority().unwrap_or(0.0);
            pb.total_cmp(&pa)
        });
        let (a, b) = (ranked[0], ranked[1]);
        let goal_of = |c: &CharacterSpec| {
            c.goals
                .iter()
                .reduce(|best, g| if g.priority > best.priority { g } else { best })
                .map(|g| g.description.clone())
                .unwrap_or_else(|| DEFAULT_GOAL_TEXT.to_string())
        };
        let taken: BTreeSet<String> = spec.conflicts.iter().map(|c| c.id.clone()).collect();
        let id = fresh_id("conflict", &taken);
        let parties = vec![a.id.clone(), b.id.clone()];
        let conflict = ConflictSpec {
            id: id.clone(),
            description: format!(
                "{} wants to {}, while {} wants to {}",
                a.display_name(),
                goal_of(a),
                b.display_name(),
                goal_of(b)
            ),
            parties: parties.clone(),
            stakes: format!("only one of {} and {} can prevail", a.display_name(), b.display_name()),
        };
        spec.conflicts.push(conflict);
        actions.push(CompletionAction::AddConflict { id, parties });
    }

    let mut missing = Vec::new();
    for c in &spec.conflicts {
        let parties: Vec<&String> = {
            let mut seen = BTreeSet::new();
            c.parties.iter().filter(|p| seen.insert(p.as_str())).collect()
        };
        for p in &parties {
            for q in &parties {
                if p != q
                    && spec.relationship(p, q).is_none()
                    && !missing.iter().any(|(f, t): &(String, String)| f == *p && t == *q)
                {
                    missing.push(((*p).clone(), (*q).clone()));
                }
            }
        }
    }
    for (from, to) in missing {
        spec.relationships.push(RelationshipSpec::neutral(&from, &to));
        actions.push(CompletionAction::AddRelationship { from, to });
    }

    let violations = validate_world_spec(&spec);
    if violations.is_empty() {
        Ok((spec, actions))
    } else {
        Err(CompletionError { violations })
    }
}

/// Index of declared characters by id.
pub fn characters_by_id(spec: &WorldSpec) -> BTreeMap<&str, &CharacterSpec> {
    spec.characters.iter().map(|c| (c.id.as_str(), c)).collect()
}
