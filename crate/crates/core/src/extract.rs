//! Free story text to world spec: extraction prompt, model call, parse,
//! violation-driven repair and template completion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatMessage, LlmError, PromptRequest, Provider};
use crate::schema::{
    complete_world_spec_with_report, decode_world_spec, validate_world_spec, CompletionAction,
    Violation, ViolationCode, WorldSpec,
};

/// The narrative elements every extraction prompt asks for.
pub const REQUIRED_ELEMENTS: [&str; 5] = [
    "spatial context",
    "temporal cues",
    "sources of conflict",
    "role distribution",
    "task motivation",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Total provider calls allowed, including the first.
    pub max_repair_attempts: u32,
    pub temperature: f64,
    pub completion_fallback: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            max_repair_attempts: 3,
            temperature: 0.2,
            completion_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub attempts: u32,
    /// Violations per rejected attempt, in order.
    pub violations_seen: Vec<Vec<Violation>>,
    pub completion_actions: Vec<CompletionAction>,
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("story text is empty")]
    EmptyInput,
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error("extraction failed after {attempts} attempt(s)")]
    ExtractionFailed {
        attempts: u32,
        last_violations: Vec<Violation>,
    },
    #[error("provider error: {0}")]
    Provider(#[from] LlmError),
}

const MAX_OUTPUT_TOKENS: u32 = 4096;

const SYSTEM_TEXT: &str = "You convert story ideas into a structured world document for a \
live-action role-play engine. Reply with exactly one JSON document and nothing else.";

const FORMAT_GUIDE: &str = r#"The document must be a single JSON object with these fields:
{
  "schema_version": 1,
  "title": "...",
  "temporal_cue": "era or time of the story",
  "locations": [{"id": "...", "name": "...", "description": "...", "adjacent_to": ["other location id"]}],
  "characters": [{"id": "...", "name": "...", "archetype": "...", "public_description": "...",
                  "secret": "optional hidden fact", "goals": [{"description": "...", "priority": 0.0-1.0}],
                  "initial_location": "location id", "initial_affect": {"valence": -1.0-1.0, "arousal": 0.0-1.0}}],
  "relationships": [{"from": "character id", "to": "character id", "trust": 0.0-1.0,
                     "power": -1.0-1.0, "dependency": 0.0-1.0, "alliance": true|false}],
  "conflicts": [{"id": "...", "description": "...", "parties": ["character id", "character id"], "stakes": "..."}],
  "quests": [{"id": "...", "description": "...", "assigned_to": "character id", "trigger": "...", "resolution": "..."}]
}
Rules: ids are unique per kind; every reference points to a declared id; adjacency is symmetric;
at least 1 location, 2 characters and 1 conflict. Do not use the id "SYSTEM"."#;

/// Deterministic extraction prompt for a story.
pub fn build_extraction_prompt(story_text: &str, temperature: f64) -> Result<PromptRequest, ExtractionError> {
    let story = story_text.trim();
    if story.is_empty() {
        return Err(ExtractionError::EmptyInput);
    }
    let elements = REQUIRED_ELEMENTS
        .iter()
        .map(|e| format!("- {e}"))
        .collect::<Vec<_>>()
        .join("\n");
    let body = format!(
        "Read the story below and identify its key elements:\n{elements}\n\n\
         Fill gaps with plausible details consistent with the story.\n\n\
         {FORMAT_GUIDE}\n\nStory:\n<<<\n{story}\n>>>"
    );
    Ok(PromptRequest {
        system_text: SYSTEM_TEXT.to_string(),
        messages: vec![ChatMessage::user(body)],
        temperature,
        max_output_tokens: MAX_OUTPUT_TOKENS,
        tag: "extract".to_string(),
    })
}

/// Follow-up turn quoting every violation of the previous reply.
pub fn build_repair_prompt(original: &PromptRequest, previous_output: &str, violations: &[Violation]) -> PromptRequest {
    let mut list = String::new();
    for v in violations {
        list.push_str(&format!("- {} ({}): {}\n", v.code, v.subject, v.message));
    }
    let mut req = original.clone();
    req.messages.push(ChatMessage::assistant(previous_output));
    req.messages.push(ChatMessage::user(format!(
        "Your document was rejected with these violations:\n{list}\n\
         Reply with the corrected document only, as one JSON object."
    )));
    req.tag = "extract_repair".to_string();
    req
}

/// The JSON object inside a reply, tolerating code fences and chatter.
pub(crate) fn json_object_slice(text: &str) -> &str {
    match (text.find('{'), text.rfind('}')) {
        (Some(start), Some(end)) if end > start => &text[start..=end],
        _ => text,
    }
}

enum Attempt {
    Accepted(WorldSpec, Vec<CompletionAction>),
    Rejected(Vec<Violation>),
}

fn evaluate(text: &str, config: &ExtractionConfig) -> Attempt {
    let spec = match decode_world_spec(json_object_slice(text)) {
        Ok(s) => s,
        Err(e) => {
            return Attempt::Rejected(vec![Violation::new(
                ViolationCode::MalformedDocument,
                format!("line {}, column {}", e.line, e.column),
                e.message,
            )])
        }
    };
    let violations = validate_world_spec(&spec);
    if violations.is_empty() {
        return Attempt::Accepted(spec, Vec::new());
    }
    if !config.completion_fallback {
        return Attempt::Rejected(violations);
    }
    match complete_world_spec_with_report(&spec) {
        Ok((done, actions)) => Attempt::Accepted(done, actions),
        Err(e) => Attempt::Rejected(e.violations),
    }
}

/// Runs the extraction pipeline. The returned spec always validates cleanly
/// and the provider is called at most `max_repair_attempts` times.
pub fn extract_world_spec(
    story_text: &str,
    provider: &dyn Provider,
    config: &ExtractionConfig,
) -> Result<(WorldSpec, ExtractionReport), ExtractionError> {
    if config.max_repair_attempts < 1 {
        return Err(ExtractionError::InvalidConfig("max_repair_attempts must be at least 1".into()));
    }
    let original = build_extraction_prompt(story_text, config.temperature)?;
    let mut request = original.clone();
    let mut report = ExtractionReport::default();

    for attempt in 1..=config.max_repair_attempts {
        report.attempts = attempt;
        let reply = provider.complete(&request)?;
        match evaluate(&reply.text, config) {
            Attempt::Accepted(spec, actions) => {
                report.completion_actions = actions;
                return Ok((spec, report));
            }
            Attempt::Rejected(violations) => {
                request = build_repair_prompt(&original, &reply.text, &violations);
                report.violations_seen.push(violations);
            }
        }
    }

    Err(ExtractionError::ExtractionFailed {
        attempts: report.attempts,
        last_violations: report.violations_seen.pop().unwrap_or_default(),
    })
}
