#![allow(dead_code)]

use std::path::PathBuf;

use genlarp_core::agent::{ActionKind, AgentAction};
use genlarp_core::llm::ScriptedProvider;
use genlarp_core::runtime::{advance_with_provider, Session, SessionState};
use genlarp_core::schema::{
    parse_world_spec, AffectVector, CharacterSpec, ConflictSpec, Goal, LocationSpec, QuestSpec,
    RelationshipSpec, WorldSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join("worldspecs").join(name)).unwrap()
}

pub fn fixture(name: &str) -> WorldSpec {
    parse_world_spec(&fixture_text(name)).unwrap()
}

pub fn lighthouse() -> WorldSpec {
    fixture("lighthouse.json")
}

pub fn harbor() -> WorldSpec {
    fixture("harbor_intrigue.json")
}

// ---------------------------------------------------------------------------
// Generated world specs, valid by construction

fn text(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[\\PC\"\\\\]{{0,{max}}}")).unwrap()
}

fn title() -> impl Strategy<Value = String> {
    ("[A-Za-z]", text(24)).prop_map(|(a, b)| format!("{a}{b}"))
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

fn signed() -> impl Strategy<Value = f64> {
    -1.0f64..=1.0
}

#[derive(Debug, Clone)]
struct CharSeed {
    name: String,
    archetype: String,
    description: String,
    secret: Option<String>,
    goals: Vec<(String, f64)>,
    location: usize,
    valence: f64,
    arousal: f64,
}

fn char_seed() -> impl Strategy<Value = CharSeed> {
    (
        text(12),
        text(12),
        text(30),
        proptest::option::of(text(20)),
        proptest::collection::vec((text(20), unit()), 1..=3),
        any::<usize>(),
        signed(),
        unit(),
    )
        .prop_map(|(name, archetype, description, secret, goals, location, valence, arousal)| CharSeed {
            name,
            archetype,
            description,
            secret,
            goals,
            location,
            valence,
            arousal,
        })
}

pub fn arb_world_spec() -> impl Strategy<Value = WorldSpec> {
    (1usize..=5, 2usize..=5)
        .prop_flat_map(|(nl, nc)| {
            (
                title(),
                text(20),
                proptest::collection::vec((text(12), text(30)), nl),
                proptest::collection::vec(any::<bool>(), nl * nl),
                proptest::collection::vec(char_seed(), nc),
                proptest::collection::vec((any::<usize>(), any::<usize>(), unit(), signed(), unit(), any::<bool>()), 0..6),
                proptest::collection::vec((any::<usize>(), 1usize..5, text(20), text(12)), 1..=3),
                proptest::collection::vec((any::<usize>(), text(20), text(12), text(12)), 0..=3),
            )
        })
        .prop_map(|(title, cue, locs, adj_bits, chars, rels, conflicts, quests)| {
            let nl = locs.len();
            let nc = chars.len();
            let loc_id = |i: usize| format!("loc_{i}");
            let ch_id = |i: usize| format!("ch_{i}");
            let locations = locs
                .into_iter()
                .enumerate()
                .map(|(i, (name, description))| LocationSpec {
                    id: loc_id(i),
                    name,
                    description,
                    adjacent_to: (0..nl)
                        .filter(|&j| j != i && adj_bits[i.min(j) * nl + i.max(j)])
                        .map(loc_id)
                        .collect(),
                })
                .collect();
            let characters = chars
                .into_iter()
                .enumerate()
                .map(|(i, c)| CharacterSpec {
                    id: ch_id(i),
                    name: c.name,
                    archetype: c.archetype,
                    public_description: c.description,
                    secret: c.secret,
                    goals: c.goals.into_iter().map(|(d, p)| Goal::new(d, p)).collect(),
                    initial_location: loc_id(c.location % nl),
                    initial_affect: AffectVector::new(c.valence, c.arousal),
                })
                .collect();
            let mut seen = std::collections::BTreeSet::new();
            let relationships = rels
                .into_iter()
                .filter_map(|(a, b, trust, power, dependency, alliance)| {
                    let (a, b) = (a % nc, b % nc);
                    (a != b && seen.insert((a, b))).then(|| RelationshipSpec {
                        from: ch_id(a),
                        to: ch_id(b),
                        trust,
                        power,
                        dependency,
                        alliance,
                    })
                })
                .collect();
            let conflicts = conflicts
                .into_iter()
                .enumerate()
                .map(|(i, (a, off, description, stakes))| {
                    let a = a % nc;
                    let b = (a + 1 + off % (nc - 1)) % nc;
                    ConflictSpec { id: format!("conflict_{i}"), description, parties: vec![ch_id(a), ch_id(b)], stakes }
                })
                .collect();
            let quests = quests
                .into_iter()
                .enumerate()
                .map(|(i, (who, description, trigger, resolution))| QuestSpec {
                    id: format!("quest_{i}"),
                    description,
                    assigned_to: ch_id(who % nc),
                    trigger,
                    resolution,
                })
                .collect();
            WorldSpec {
                schema_version: 1,
                title,
                temporal_cue: cue,
                locations,
                characters,
                relationships,
                conflicts,
                quests,
            }
        })
}

// ---------------------------------------------------------------------------
// Scripted play

/// A mix of valid, gated and malformed NPC replies for `world`.
pub fn npc_replies(world: &WorldSpec, seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars: Vec<&str> = world.characters.iter().map(|c| c.id.as_str()).collect();
    let locs: Vec<&str> = world.locations.iter().map(|l| l.id.as_str()).collect();
    (0..n)
        .map(|_| {
            let who = chars[rng.random_range(0..chars.len())];
            let to = locs[rng.random_range(0..locs.len())];
            match rng.random_range(0..10) {
                0 | 1 => format!(r#"{{"kind":"say","target":"{who}","content":"Mind the tide."}}"#),
                2 => format!(r#"{{"kind":"cooperate","target":"{who}"}}"#),
                3 => format!(r#"{{"kind":"betray","target":"{who}"}}"#),
                4 => format!(r#"{{"kind":"give","target":"{who}","content":"a coin"}}"#),
                5 => format!(r#"{{"kind":"move","target":"{to}"}}"#),
                6 => format!(r#"{{"kind":"share_secret","target":"{who}","content":"listen"}}"#),
                7 => r#"{"kind":"observe"}"#.to_string(),
                8 => "I would rather not say.".to_string(),
                _ => format!(r#"Sure: {{"kind":"say","target":"{who}","content":"Fine."}}"#),
            }
        })
        .collect()
}

fn others(state: &SessionState) -> Vec<String> {
    state
        .agents
        .keys()
        .filter(|id| **id != state.controlled_character)
        .cloned()
        .collect()
}

/// Deterministic player script: cycles through kinds, always gate-valid.
pub fn scripted_user_action(state: &SessionState, step: usize) -> AgentAction {
    let others = others(state);
    let who = others[step % others.len()].as_str();
    let me = &state.agents[&state.controlled_character];
    let exits = &state.world.location(&me.location_id).unwrap().adjacent_to;
    match step % 6 {
        0 => AgentAction::new(ActionKind::Say, Some(who), Some("What brings you here?")),
        1 if !exits.is_empty() => AgentAction::new(ActionKind::Move, Some(&exits[step % exits.len()]), None),
        2 => AgentAction::new(ActionKind::Cooperate, Some(who), None),
        4 => AgentAction::new(ActionKind::Betray, Some(who), None),
        5 => AgentAction::new(ActionKind::Give, Some(who), Some("a lantern")),
        _ => AgentAction::observe(),
    }
}

/// Random gate-valid player action.
pub fn random_user_action(state: &SessionState, rng: &mut ChaCha8Rng) -> AgentAction {
    let step = rng.random_range(0..1000usize);
    scripted_user_action(state, step)
}

/// Plays `turns` scripted turns on a fresh session.
pub fn run_scripted(world: WorldSpec, seed: u64, turns: usize) -> Session {
    let provider = ScriptedProvider::new(npc_replies(&world, seed, turns * 8));
    let mut session = Session::with_defaults(world, seed).unwrap();
    for step in 0..turns {
        let action = scripted_user_action(session.state(), step);
        advance_with_provider(&mut session, action, &provider).unwrap();
    }
    session
}

/// One NDJSON string per branch, for byte comparisons.
pub fn logs_ndjson(session: &Session) -> String {
    let mut out = String::new();
    for (branch, events) in session.logs() {
        out.push_str(&format!("# branch {branch}\n"));
        for e in events {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
    }
    out
}
