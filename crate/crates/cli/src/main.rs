mod play;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use genlarp_core::layout::{default_grid, layout_scene, parse_grid, LayoutError};
use genlarp_core::llm::{build_provider, Provider, ProviderConfig, ProviderMode};
use genlarp_core::runtime::{commands_from_logs, LlmDecider, Session};
use genlarp_core::schema::{decode_world_spec, parse_world_spec, validate_world_spec, SchemaError};
use genlarp_core::store::{SessionSource, Store, StoreError};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "genlarp", version, about = "Build story worlds and play them from the terminal")]
struct Cli {
    /// Directory holding sessions.
    #[arg(long, global = true, env = "GENLARP_DATA_DIR", default_value = "genlarp-data")]
    data_dir: PathBuf,
    /// Provider mode: live, record, replay or scripted.
    #[arg(long, global = true, env = "GENLARP_MODE", default_value = "live", value_parser = parse_mode)]
    mode: ProviderMode,
    /// Transcript (record/replay) or reply script (scripted).
    #[arg(long, global = true, env = "GENLARP_TRANSCRIPT")]
    transcript: Option<PathBuf>,
    #[arg(long, global = true, env = "GENLARP_LLM_BASE_URL", hide = true)]
    llm_base_url: Option<String>,
    #[arg(long, global = true, env = "GENLARP_LLM_MODEL", hide = true)]
    llm_model: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a session from a story text or a world spec.
    New {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        story: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, env = "GENLARP_SEED")]
        seed: Option<u64>,
    },
    /// Check a world spec; exits 0 iff it has no violations.
    Validate { spec: PathBuf },
    /// Play a session turn by turn on standard input.
    Play {
        #[arg(long)]
        session: String,
    },
    /// Re-run a session's commands against a transcript and print the final state hash.
    Replay {
        #[arg(long)]
        session: String,
    },
    /// Place a world's locations on a tile grid.
    Layout {
        spec: PathBuf,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(u32, u32)>,
    },
}

fn parse_mode(s: &str) -> Result<ProviderMode, String> {
    s.parse()
}

/// What went wrong, and which exit code it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain { code: String, message: String, detail: Value },
}

impl Failure {
    fn domain(code: &str, message: impl Into<String>) -> Self {
        Self::Domain { code: code.into(), message: message.into(), detail: Value::Null }
    }

    fn with_detail(self, d: Value) -> Self {
        match self {
            Self::Domain { code, message, .. } => Self::Domain { code, message, detail: d },
            other => other,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::UnknownSession(_) => "UNKNOWN_SESSION",
            StoreError::CorruptLog(_) => "CORRUPT_LOG",
            StoreError::SequenceGap { .. } => "SEQUENCE_GAP",
            StoreError::Storage(_) => "STORAGE_ERROR",
            StoreError::Extraction(_) => "EXTRACTION_FAILED",
            StoreError::Validation(_) => "VALIDATION_ERROR",
            StoreError::Runtime(_) => "RUNTIME_ERROR",
            StoreError::InvalidInput(_) => "INVALID_INPUT",
        };
        let detail = match &e {
            StoreError::Validation(v) => json!({"violations": v}),
            _ => Value::Null,
        };
        Self::domain(code, e.to_string()).with_detail(detail)
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        match &e {
            SchemaError::Parse(_) => Self::domain("MALFORMED_DOCUMENT", e.to_string()),
            SchemaError::Validation(v) => {
                Self::domain("VALIDATION_ERROR", e.to_string()).with_detail(json!({"violations": v}))
            }
        }
    }
}

/// A successful run: the JSON document, and its text rendering.
struct Report {
    json: Value,
    text: String,
    /// Domain-level "no" (failed validation, UNSAT) that still has a report.
    failed: bool,
}

impl Report {
    fn ok(json: Value, text: impl Into<String>) -> Self {
        Self { json, text: text.into(), failed: false }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::domain("STORAGE_ERROR", format!("{}: {e}", path.display())))
}

impl Cli {
    fn provider_config(&self) -> ProviderConfig {
        let d = ProviderConfig::default();
        ProviderConfig {
            base_url: self.llm_base_url.clone().unwrap_or(d.base_url),
            model_name: self.llm_model.clone().unwrap_or(d.model_name),
            mode: self.mode,
            ..d
        }
    }

    fn provider(&self) -> Result<Arc<dyn Provider>, Failure> {
        if self.mode != ProviderMode::Live && self.transcript.is_none() {
            return Err(Failure::Usage(format!("--mode {} needs --transcript", mode_name(self.mode))));
        }
        build_provider(&self.provider_config(), self.transcript.as_deref())
            .map_err(|e| Failure::domain("PROVIDER_ERROR", e.to_string()))
    }

    fn store(&self) -> Result<Store, Failure> {
        Ok(Store::open(&self.data_dir)?)
    }
}

fn mode_name(m: ProviderMode) -> &'static str {
    match m {
        ProviderMode::Live => "live",
        ProviderMode::Record => "record",
        ProviderMode::Replay => "replay",
        ProviderMode::Scripted => "scripted",
    }
}

fn cmd_new(cli: &Cli, story: Option<&Path>, spec: Option<&Path>, seed: Option<u64>) -> Result<Report, Failure> {
    let source = match (story, spec) {
        (Some(p), None) => SessionSource::StoryText(read_file(p)?),
        (None, Some(p)) => SessionSource::WorldSpec(parse_world_spec(&read_file(p)?)?),
        _ => return Err(Failure::Usage("give exactly one of --story or --spec".into())),
    };
    let provider = cli.provider()?;
    let seed = seed.unwrap_or_else(|| u64::from(rand::random::<u32>()));
    let session = cli.store()?.create_session(source, seed, provider.as_ref())?;
    let d = session.descriptor();
    let text = format!(
        "session  {}\ntitle    {}\nseed     {}\nturn     {} (branch {})\nplaying  {}",
        d.session_id, d.title, seed, d.turn, d.active_branch, d.controlled_character
    );
    let mut json = serde_json::to_value(&d).expect("descriptor serializes");
    json["seed"] = json!(seed);
    Ok(Report::ok(json, text))
}

fn cmd_validate(path: &Path) -> Result<Report, Failure> {
    let spec = decode_world_spec(&read_file(path)?).map_err(|e| Failure::domain("MALFORMED_DOCUMENT", e.to_string()))?;
    let violations = validate_world_spec(&spec);
    let text = violations
        .iter()
        .map(|v| format!("{} {}: {}", v.code, v.subject, v.message))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Report {
        json: json!({"valid": violations.is_empty(), "violations": violations}),
        text,
        failed: !violations.is_empty(),
    })
}

fn cmd_layout(path: &Path, grid: Option<(u32, u32)>) -> Result<Report, Failure> {
    let spec = decode_world_spec(&read_file(path)?).map_err(|e| Failure::domain("MALFORMED_DOCUMENT", e.to_string()))?;
    let grid = grid.unwrap_or_else(|| default_grid(spec.locations.len()));
    match layout_scene(&spec.locations, grid) {
        Ok(layout) => {
            let json = serde_json::to_value(&layout).expect("layout serializes");
            let text = serde_json::to_string_pretty(&json).expect("layout serializes");
            Ok(Report::ok(json, text))
        }
        Err(LayoutError::Unsatisfiable) => Ok(Report {
            json: json!({"unsat": true, "grid": [grid.0, grid.1]}),
            text: "UNSAT".into(),
            failed: true,
        }),
        Err(e @ LayoutError::GridTooSmall { .. }) => Err(Failure::domain("GRID_TOO_SMALL", e.to_string())),
    }
}

/// Rebuilds the session from genesis, asking the transcript for every NPC
/// decision. Nothing is written back to the store.
fn cmd_replay(cli: &Cli, id: &str) -> Result<Report, Failure> {
    let mode = match cli.mode {
        ProviderMode::Live | ProviderMode::Replay => ProviderMode::Replay,
        ProviderMode::Scripted => ProviderMode::Scripted,
        ProviderMode::Record => return Err(Failure::Usage("replay cannot run in record mode".into())),
    };
    let Some(transcript) = cli.transcript.as_deref() else {
        return Err(Failure::Usage("replay needs --transcript".into()));
    };
    let config = ProviderConfig { mode, ..cli.provider_config() };
    let provider = build_provider(&config, Some(transcript)).map_err(|e| Failure::domain("PROVIDER_ERROR", e.to_string()))?;
    let stored = cli.store()?.open_session(id)?;
    let meta = stored.meta();
    let world = parse_world_spec(&read_file(&stored.dir().join("world.json"))?)?;
    let mut session = Session::new(
        world,
        meta.seed,
        meta.agent_config.clone(),
        meta.pacing_config.clone(),
    )
    .map_err(|e| Failure::domain("RUNTIME_ERROR", e.to_string()))?;
    let mut decider = LlmDecider::new(provider.as_ref());
    for command in commands_from_logs(stored.session().logs()) {
        session
            .run_command(&command, &mut decider)
            .map_err(|e| Failure::domain("REPLAY_DIVERGED", format!("{command:?}: {e}")))?;
    }
    let hash = session.state_hash();
    let recorded = stored.state().hash();
    Ok(Report::ok(
        json!({"session_id": id, "state_hash": hash, "recorded_hash": recorded, "matches": hash == recorded}),
        hash,
    ))
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    match &cli.command {
        Command::New { story, spec, seed } => cmd_new(cli, story.as_deref(), spec.as_deref(), *seed),
        Command::Validate { spec } => cmd_validate(spec),
        Command::Layout { spec, grid } => cmd_layout(spec, *grid),
        Command::Replay { session } => cmd_replay(cli, session),
        Command::Play { session } => {
            let provider = cli.provider()?;
            let mut stored = cli.store()?.open_session(session)?;
            let stdin = io::stdin();
            let interactive = cli.format == Format::Text;
            play::run(&mut stored, provider.as_ref(), stdin.lock(), io::stdout(), interactive)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let json = cli.format == Format::Json;
    let mut out = io::stdout().lock();
    match run(&cli) {
        Ok(report) => {
            if json {
                let _ = writeln!(out, "{}", report.json);
            } else if !report.text.is_empty() {
                let _ = writeln!(out, "{}", report.text);
            }
            if report.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("genlarp: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain { code, message, detail }) => {
            eprintln!("genlarp: {message}");
            if let Some(v) = detail.get("violations").and_then(Value::as_array) {
                for v in v {
                    eprintln!("  {} {}: {}", v["code"].as_str().unwrap_or("?"), v["subject"].as_str().unwrap_or(""), v["message"].as_str().unwrap_or(""));
                }
            }
            if json {
                let _ = writeln!(out, "{}", json!({"code": code, "message": message, "detail": detail}));
            }
            ExitCode::from(1)
        }
    }
}
