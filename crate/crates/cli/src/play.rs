//! The `play` loop: one command per input line.

use std::io::{BufRead, Write};

use genlarp_core::agent::{ActionKind, AgentAction};
use genlarp_core::event::EventRecord;
use genlarp_core::llm::Provider;
use genlarp_core::runtime::{Command, LlmDecider, RuntimeError};
use genlarp_core::store::{PersistentSession, StoreError};
use serde_json::{json, Value};

use crate::{Failure, Report};

const HELP: &str = "\
say TARGET TEXT     speak to a character
move LOCATION       walk to an adjacent location
give TARGET ITEM    hand over an item
cooperate TARGET    help a character
betray TARGET       turn on a character
share TARGET [TEXT] reveal your secret
observe             watch the scene
{...}               a raw action object
/role CHARACTER     take control of another character
/rewind NODE        fork the story at a saved node
/nodes              list saved nodes
/quit               leave";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Blank,
    Run(Command),
    Nodes,
    Help,
    Quit,
}

/// Parses one input line. Errors are meant for the player, not for logs.
pub fn parse_line(line: &str) -> Result<Line, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(Line::Blank);
    }
    if line.starts_with('{') {
        let action: AgentAction = serde_json::from_str(line).map_err(|e| format!("bad action object: {e}"))?;
        return Ok(Line::Run(Command::Act { action }));
    }
    let (head, rest) = split_word(line);
    if let Some(meta) = head.strip_prefix('/') {
        let arg = |name: &str| {
            let (a, extra) = split_word(rest);
            if a.is_empty() || !extra.is_empty() {
                Err(format!("usage: /{meta} {name}"))
            } else {
                Ok(a.to_string())
            }
        };
        return match meta {
            "role" => Ok(Line::Run(Command::SwitchRole { character_id: arg("CHARACTER")? })),
            "rewind" => Ok(Line::Run(Command::Rewind { node_id: arg("NODE")? })),
            "nodes" => Ok(Line::Nodes),
            "help" => Ok(Line::Help),
            "quit" | "exit" => Ok(Line::Quit),
            _ => Err(format!("unknown command '/{meta}' (try /help)")),
        };
    }

    let kind = match head {
        "share" => ActionKind::ShareSecret,
        other => other.parse::<ActionKind>().map_err(|e| format!("{e} (try /help)"))?,
    };
    let (target, content) = split_word(rest);
    let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
    let action = match kind {
        ActionKind::Observe => {
            if !rest.is_empty() {
                return Err("observe takes no arguments".into());
            }
            AgentAction::observe()
        }
        ActionKind::Move | ActionKind::Cooperate | ActionKind::Betray => {
            if target.is_empty() || !content.is_empty() {
                return Err(format!("usage: {head} {}", if kind == ActionKind::Move { "LOCATION" } else { "TARGET" }));
            }
            AgentAction::new(kind, Some(target), None)
        }
        ActionKind::Say | ActionKind::Give => {
            if target.is_empty() || content.is_empty() {
                return Err(format!("usage: {head} TARGET {}", if kind == ActionKind::Say { "TEXT" } else { "ITEM" }));
            }
            AgentAction::new(kind, Some(target), Some(content))
        }
        ActionKind::ShareSecret => {
            if target.is_empty() {
                return Err(format!("usage: {head} TARGET [TEXT]"));
            }
            AgentAction { kind, target: opt(target), content: opt(content) }
        }
    };
    Ok(Line::Run(Command::Act { action }))
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim()),
        None => (s, ""),
    }
}

fn prompt(session: &PersistentSession) -> String {
    let st = session.state();
    let here = st.agents.get(&st.controlled_character).map(|a| a.location_id.as_str()).unwrap_or("?");
    format!("[turn {} | {} @ {}] > ", st.turn, st.controlled_character, here)
}

fn rejection(e: &StoreError) -> Option<Value> {
    let StoreError::Runtime(r) = e else { return None };
    let code = match r {
        RuntimeError::Gate(reason) => reason.code().to_string(),
        RuntimeError::UnknownCharacter(_) => "UNKNOWN_CHARACTER".into(),
        RuntimeError::UnknownNode(_) => "UNKNOWN_NODE".into(),
        RuntimeError::Agent(_) => "INVALID_ACTION".into(),
        _ => return None,
    };
    Some(json!({"code": code, "message": r.to_string()}))
}

/// Reads commands until EOF or `/quit`. In interactive mode events are printed
/// as they happen; otherwise everything goes into the returned report.
pub fn run(
    session: &mut PersistentSession,
    provider: &dyn Provider,
    input: impl BufRead,
    mut out: impl Write,
    interactive: bool,
) -> Result<Report, Failure> {
    let mut decider = LlmDecider::new(provider);
    let mut events: Vec<EventRecord> = Vec::new();
    let mut rejected = Vec::new();
    let mut lines = input.lines();

    if interactive {
        let d = session.descriptor();
        let _ = writeln!(out, "{} (branch {}, /help for commands)", d.title, d.active_branch);
    }
    loop {
        if interactive {
            let _ = write!(out, "{}", prompt(session));
            let _ = out.flush();
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(|e| Failure::domain("STORAGE_ERROR", format!("stdin: {e}")))?;
        let parsed = match parse_line(&line) {
            Ok(p) => p,
            Err(msg) => {
                if interactive {
                    eprintln!("{msg}");
                }
                rejected.push(json!({"line": line, "code": "INVALID_COMMAND", "message": msg}));
                continue;
            }
        };
        match parsed {
            Line::Blank => {}
            Line::Quit => break,
            Line::Help => {
                if interactive {
                    let _ = writeln!(out, "{HELP}");
                }
            }
            Line::Nodes => {
                if interactive {
                    let story = session.session().story();
                    for n in &story.nodes {
                        let _ = writeln!(out, "{}  branch {} turn {}", n.node_id, n.branch_id, n.turn);
                    }
                }
            }
            Line::Run(command) => match session.run(&command, &mut decider) {
                Ok(new) => {
                    if interactive {
                        for e in &new {
                            let _ = writeln!(out, "  {}", e.describe());
                        }
                        if let Command::Rewind { .. } = command {
                            let _ = writeln!(out, "  now on branch {}", session.descriptor().active_branch);
                        }
                    }
                    events.extend(new);
                }
                Err(e) => match rejection(&e) {
                    Some(mut r) => {
                        if interactive {
                            eprintln!("{}", r["message"].as_str().unwrap_or_default());
                        }
                        r["line"] = json!(line);
                        rejected.push(r);
                    }
                    None => return Err(e.into()),
                },
            },
        }
    }
    if interactive {
        let _ = writeln!(out);
    }

    let hash = session.state().hash();
    let descriptor = serde_json::to_value(session.descriptor()).expect("descriptor serializes");
    Ok(Report::ok(
        json!({"session": descriptor, "events": events, "rejected": rejected, "state_hash": hash}),
        if interactive { String::new() } else { hash },
    ))
}
