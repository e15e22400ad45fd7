//! Event records: the unit of the session log.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{ActionKind, AgentAction};
use crate::schema::RESERVED_ACTOR_ID;

pub type BranchId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SystemKind {
    SceneChange,
    QuestUpdate,
    AllianceDissolved,
    SideQuestOffered,
    RewindMark,
    RoleSwitch,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SceneChange => "SCENE_CHANGE",
            Self::QuestUpdate => "QUEST_UPDATE",
            Self::AllianceDissolved => "ALLIANCE_DISSOLVED",
            Self::SideQuestOffered => "SIDE_QUEST_OFFERED",
            Self::RewindMark => "REWIND_MARK",
            Self::RoleSwitch => "ROLE_SWITCH",
        }
    }
}

/// Either a character action or a system notice; serialized as a bare string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventKind {
    Action(ActionKind),
    System(SystemKind),
}

impl EventKind {
    pub fn action(&self) -> Option<ActionKind> {
        match self {
            EventKind::Action(k) => Some(*k),
            EventKind::System(_) => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Action(k) => k.as_str(),
            EventKind::System(k) => k.as_str(),
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Actor {
    Character(String),
    System,
}

impl Actor {
    pub fn character_id(&self) -> Option<&str> {
        match self {
            Actor::Character(id) => Some(id),
            Actor::System => None,
        }
    }
}

impl From<String> for Actor {
    fn from(s: String) -> Self {
        if s == RESERVED_ACTOR_ID {
            Actor::System
        } else {
            Actor::Character(s)
        }
    }
}

impl From<Actor> for String {
    fn from(a: Actor) -> Self {
        match a {
            Actor::Character(id) => id,
            Actor::System => RESERVED_ACTOR_ID.to_string(),
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Character(id) => f.write_str(id),
            Actor::System => f.write_str(RESERVED_ACTOR_ID),
        }
    }
}

/// Kind-specific details. Unused fields are omitted from the JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventPayload {
    /// Where the event happened (the origin for moves).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    /// Character or location id, depending on kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    /// How the actor arrived at the action: `user`, `normal`, `repair:..`, `fallback:..`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_branch: Option<BranchId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub turn: u64,
    pub branch_id: BranchId,
    pub actor: Actor,
    pub kind: EventKind,
    pub payload: EventPayload,
    pub conflict_relevant: bool,
}

impl EventRecord {
    /// Character id of an action target, if the kind targets a character.
    pub fn character_target(&self) -> Option<&str> {
        match self.kind {
            EventKind::Action(k) if k.targets_character() => self.payload.target.as_deref(),
            _ => None,
        }
    }

    /// True for actions from one character directed at another.
    pub fn is_interaction(&self) -> bool {
        self.actor.character_id().is_some() && self.character_target().is_some()
    }

    /// Reconstructs the action of an action event.
    pub fn action(&self) -> Option<AgentAction> {
        self.kind.action().map(|kind| AgentAction {
            kind,
            target: self.payload.target.clone(),
            content: self.payload.content.clone(),
        })
    }

    /// Short prose form, used for memories and transcripts.
    pub fn describe(&self) -> String {
        let p = &self.payload;
        match self.kind {
            EventKind::Action(kind) => {
                let mut s = format!("{} {}", self.actor, kind.verb());
                if let Some(t) = &p.target {
                    s.push(' ');
                    s.push_str(t);
                }
                if let Some(c) = &p.content {
                    s.push_str(&format!(": \"{c}\""));
                }
                s
            }
            EventKind::System(SystemKind::AllianceDissolved) => format!(
                "alliance of {} with {} dissolved",
                p.subject.as_deref().unwrap_or("?"),
                p.target.as_deref().unwrap_or("?")
            ),
            EventKind::System(SystemKind::SideQuestOffered) => {
                format!("side quest offered: {}", p.quest.as_deref().unwrap_or("?"))
            }
            EventKind::System(SystemKind::SceneChange) => format!(
                "scene changes to {}",
                p.target.as_deref().unwrap_or("?")
            ),
            EventKind::System(SystemKind::RoleSwitch) => format!(
                "player now controls {}",
                p.target.as_deref().unwrap_or("?")
            ),
            EventKind::System(SystemKind::RewindMark) => format!(
                "story rewound to {}",
                p.node_id.as_deref().unwrap_or("?")
            ),
            EventKind::System(SystemKind::QuestUpdate) => {
                format!("quest update: {}", p.quest.as_deref().unwrap_or("?"))
            }
        }
    }
}
