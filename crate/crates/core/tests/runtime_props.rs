mod common;

use common::*;
use genlarp_core::agent::{ActionKind, AgentAction, AgentConfig};
use genlarp_core::event::{Actor, EventKind, EventPayload, EventRecord, SystemKind};
use genlarp_core::llm::ScriptedProvider;
use genlarp_core::runtime::{
    advance_with_provider, compute_interaction_density, compute_plot_heat, is_user_event, pacing_adjust, LlmDecider,
    PacingConfig, PacingState, RuntimeError, Session, SessionState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn event(seq: u64, turn: u64, kind: ActionKind, relevant: bool) -> EventRecord {
    EventRecord {
        seq,
        turn,
        branch_id: 0,
        actor: Actor::Character("mara".into()),
        kind: EventKind::Action(kind),
        payload: EventPayload {
            target: kind.targets_character().then(|| "oskar".to_string()),
            ..Default::default()
        },
        conflict_relevant: relevant,
    }
}

fn arb_events() -> impl Strategy<Value = Vec<EventRecord>> {
    prop::collection::vec((0u64..30, prop::sample::select(ActionKind::ALL.to_vec()), any::<bool>()), 0..60).prop_map(|v| {
        v.into_iter().enumerate().map(|(i, (turn, kind, rel))| event(i as u64, turn, kind, rel)).collect()
    })
}

proptest! {
    #[test]
    fn initiative_stays_clamped(heats in prop::collection::vec(0.0f64..6.0, 1..40), step in 0.0f64..0.5) {
        let cfg = PacingConfig { step, ..PacingConfig::default() };
        let world = harbor();
        let mut pacing = PacingState::new(&cfg);
        for h in heats {
            let before = pacing.npc_initiative_prob;
            let (next, offered) = pacing_adjust(&pacing, h, 0.0, &world.quests, &cfg);
            prop_assert!(next.npc_initiative_prob >= cfg.p_min && next.npc_initiative_prob <= cfg.p_max);
            if h < cfg.heat_low {
                prop_assert!(next.npc_initiative_prob >= before);
            } else if h > cfg.heat_high {
                prop_assert!(next.npc_initiative_prob <= before);
            } else {
                prop_assert_eq!(next.npc_initiative_prob, before);
                prop_assert!(offered.is_none());
            }
            // no quest is ever offered twice
            let mut q = next.side_quest_queue.clone();
            q.sort();
            q.dedup();
            prop_assert_eq!(q.len(), next.side_quest_queue.len());
            pacing = next;
        }
    }

    #[test]
    fn heat_grows_by_one_per_fresh_conflict_event(events in arb_events(), now in 30u64..40) {
        let base = compute_plot_heat(&events, now, 0.8);
        let mut more = events.clone();
        more.push(event(999, now, ActionKind::Betray, true));
        let bumped = compute_plot_heat(&more, now, 0.8);
        prop_assert!((bumped - base - 1.0).abs() < 1e-9);
        more.push(event(1000, now, ActionKind::Say, false));
        prop_assert_eq!(compute_plot_heat(&more, now, 0.8), bumped);
    }

    #[test]
    fn density_is_a_fraction(events in arb_events(), now in 0u64..40, window in 1u64..15) {
        let d = compute_interaction_density(&events, now, window);
        prop_assert!((0.0..=1.0).contains(&d));
        // independent count of distinct interaction turns in the window
        let lo = (now + 1).saturating_sub(window);
        let mut turns: Vec<u64> = events
            .iter()
            .filter(|e| e.turn >= lo && e.turn <= now && e.payload.target.is_some())
            .map(|e| e.turn)
            .collect();
        turns.sort();
        turns.dedup();
        prop_assert_eq!(d, turns.len() as f64 / window as f64);
    }

    #[test]
    fn snapshot_json_round_trips(seed in 0u64..1000, turns in 0usize..12) {
        let session = run_scripted(harbor(), seed, turns);
        let json = session.state().canonical_json();
        let back: SessionState = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.canonical_json(), json);
        prop_assert_eq!(back.hash(), session.state_hash());
    }

    #[test]
    fn replay_rebuilds_random_histories(seed in 0u64..500) {
        let world = lighthouse();
        let provider = ScriptedProvider::new(npc_replies(&world, seed, 400));
        let mut session = Session::with_defaults(world.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for step in 0..15 {
            let action = random_user_action(session.state(), &mut rng);
            advance_with_provider(&mut session, action, &provider).unwrap();
            if step == 6 {
                session.switch_role("bram").unwrap();
            }
            if step == 10 {
                if let Some(node) = session.story().nodes.first().cloned() {
                    session.rewind_to(&node.node_id).unwrap();
                }
            }
        }
        let rebuilt = Session::replay_logs(world, seed, AgentConfig::default(), PacingConfig::default(), session.logs()).unwrap();
        prop_assert_eq!(rebuilt.state_hash(), session.state_hash());
        prop_assert_eq!(rebuilt.story(), session.story());
    }
}

#[test]
fn blocked_user_action_changes_nothing() {
    let mut session = run_scripted(harbor(), 5, 4);
    let before = session.state_hash();
    let logs = session.logs().clone();
    let provider = ScriptedProvider::new(Vec::<String>::new());
    let bad = [
        AgentAction::new(ActionKind::Move, Some("nowhere"), None),
        AgentAction::new(ActionKind::Betray, Some("ghost"), None),
        AgentAction::new(ActionKind::Say, None, Some("hello?")),
        AgentAction::new(ActionKind::Give, Some(&session.state().controlled_character.clone()), None),
    ];
    for action in bad {
        let err = advance_with_provider(&mut session, action, &provider).unwrap_err();
        assert!(matches!(err, RuntimeError::Gate(_)), "{err:?}");
    }
    assert_eq!(session.state_hash(), before);
    assert_eq!(session.logs(), &logs);
}

#[test]
fn role_switch_is_an_involution() {
    let mut session = run_scripted(harbor(), 11, 3);
    let original = session.state().controlled_character.clone();
    let agents_before = session.state().agents.clone();
    session.switch_role("quinn").unwrap();
    assert!(session.state().agents["quinn"].suspended);
    assert!(!session.state().agents[&original].suspended);
    let mark = session.switch_role(&original).unwrap();
    assert_eq!(mark.kind, EventKind::System(SystemKind::RoleSwitch));
    assert_eq!(session.state().controlled_character, original);
    assert_eq!(session.state().agents, agents_before);
    assert!(matches!(session.switch_role("ghost"), Err(RuntimeError::UnknownCharacter(_))));
}

#[test]
fn former_character_acts_autonomously_after_switch() {
    let world = harbor();
    let pacing = PacingConfig { initial_prob: 1.0, p_min: 1.0, p_max: 1.0, ..PacingConfig::default() };
    let mut session = Session::new(world.clone(), 3, AgentConfig::default(), pacing).unwrap();
    let former = session.state().controlled_character.clone();
    session.switch_role("quinn").unwrap();
    let provider = ScriptedProvider::new(npc_replies(&world, 3, 400));
    let mut decider = LlmDecider::new(&provider);
    for step in 0..20 {
        let others: Vec<String> = session.state().agents.keys().filter(|id| **id != "quinn").cloned().collect();
        let action = AgentAction::new(ActionKind::Say, Some(&others[step % others.len()]), Some("well?"));
        session.advance_turn(action, &mut decider).unwrap();
    }
    let acted = session
        .events(session.story().active_branch)
        .unwrap()
        .iter()
        .filter(|e| !is_user_event(e) && e.actor == Actor::Character(former.clone()))
        .count();
    assert!(acted > 0, "{former} never acted after losing control");
    assert!(session
        .events(session.story().active_branch)
        .unwrap()
        .iter()
        .filter(|e| is_user_event(e))
        .all(|e| e.actor == Actor::Character("quinn".into())));
}

#[test]
fn rewinding_twice_to_one_node_makes_siblings() {
    let mut session = run_scripted(harbor(), 21, 12);
    let node = session.story().nodes.first().cloned().expect("a key event in 12 scripted turns");
    let first = session.rewind_to(&node.node_id).unwrap();
    let provider = ScriptedProvider::new(npc_replies(&harbor(), 22, 100));
    advance_with_provider(&mut session, AgentAction::observe(), &provider).unwrap();
    let second = session.rewind_to(&node.node_id).unwrap();
    assert_ne!(first, second);
    let story = session.story();
    let (a, b) = (&story.branches[&first], &story.branches[&second]);
    assert_eq!(a.parent_branch, Some(node.branch_id));
    assert_eq!(a.parent_branch, b.parent_branch);
    assert_eq!(a.fork_seq, Some(node.seq));
    assert_eq!(a.fork_seq, b.fork_seq);
    assert!(story.is_tree());
    assert_eq!(session.state_hash(), node.snapshot_ref);
    assert_eq!(story.active_branch, second);
    assert!(matches!(session.rewind_to("n999"), Err(RuntimeError::UnknownNode(_))));
}
