use genlarp_core::runtime::SessionState;
use serde_json::{json, Map, Value};

/// Agent fields anyone at the table may see.
const PUBLIC_AGENT_FIELDS: [&str; 4] = ["character_id", "location_id", "affect", "suspended"];

/// The player's view of `state`: other characters' secrets, memories,
/// beliefs and goals are left out.
pub fn public_state(state: &SessionState) -> Value {
    let me = state.controlled_character.as_str();
    let mut world = serde_json::to_value(&state.world).expect("world serializes");
    if let Some(chars) = world.get_mut("characters").and_then(Value::as_array_mut) {
        for c in chars {
            if c.get("id").and_then(Value::as_str) != Some(me) {
                if let Some(obj) = c.as_object_mut() {
                    obj.remove("secret");
                }
            }
        }
    }
    let agents: Map<String, Value> = state
        .agents
        .iter()
        .map(|(id, agent)| {
            let full = serde_json::to_value(agent).expect("agent serializes");
            let view = if id == me {
                full
            } else {
                let obj = full.as_object().expect("agent is an object");
                Value::Object(
                    PUBLIC_AGENT_FIELDS
                        .iter()
                        .filter_map(|k| obj.get(*k).map(|v| (k.to_string(), v.clone())))
                        .collect(),
                )
            };
            (id.clone(), view)
        })
        .collect();
    json!({
        "turn": state.turn,
        "controlled_character": me,
        "world": world,
        "agents": agents,
        "relationships": state.graph,
        "pacing": state.pacing,
    })
}
