//! HTTP and newline-delimited event-stream service over genlarp sessions.

mod error;
mod public;
mod routes;
mod worker;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use genlarp_core::llm::{build_provider, LlmError, Provider, ProviderConfig, ProviderMode};
use genlarp_core::store::{PersistentSession, Store, StoreError};

pub use error::ApiError;
pub use public::public_state;
pub use routes::router;
pub use worker::{Op, Outcome, SessionHandle, View};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "genlarp-data";

/// Service settings, normally read from `GENLARP_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    /// Transcript for record/replay, or the reply script for scripted mode.
    pub transcript: Option<PathBuf>,
    /// Seed for sessions created without one; random when unset.
    pub default_seed: Option<u64>,
    pub bind: String,
}

impl AppConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let defaults = ProviderConfig::default();
        let mode: ProviderMode = get("GENLARP_MODE").as_deref().unwrap_or("live").parse()?;
        let default_seed = get("GENLARP_SEED")
            .map(|s| s.trim().parse::<u64>().map_err(|_| format!("GENLARP_SEED is not an integer: '{s}'")))
            .transpose()?;
        let transcript = get("GENLARP_TRANSCRIPT").map(PathBuf::from);
        if mode != ProviderMode::Live && transcript.is_none() {
            return Err(format!("GENLARP_MODE={mode:?} needs GENLARP_TRANSCRIPT").to_lowercase());
        }
        Ok(Self {
            data_dir: get("GENLARP_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| DEFAULT_DATA_DIR.into()),
            provider: ProviderConfig {
                base_url: get("GENLARP_LLM_BASE_URL").unwrap_or(defaults.base_url),
                model_name: get("GENLARP_LLM_MODEL").unwrap_or(defaults.model_name),
                mode,
                ..defaults
            },
            transcript,
            default_seed,
            bind: get("GENLARP_BIND").unwrap_or_else(|| DEFAULT_BIND.into()),
        })
    }
}

/// Shared service state: the store, one provider for all sessions and the
/// live session handles.
pub struct App {
    store: Store,
    provider: Arc<dyn Provider>,
    default_seed: Option<u64>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
}

#[derive(Debug)]
pub enum StartupError {
    Store(StoreError),
    Provider(LlmError),
}

impl std::fmt::Display for StartupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Store(e) => write!(f, "{e}"),
            Self::Provider(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StartupError {}

impl App {
    pub fn new(config: &AppConfig) -> Result<Arc<Self>, StartupError> {
        let provider = build_provider(&config.provider, config.transcript.as_deref()).map_err(StartupError::Provider)?;
        Self::with_provider(config.data_dir.clone(), provider, config.default_seed)
    }

    pub fn with_provider(
        data_dir: PathBuf,
        provider: Arc<dyn Provider>,
        default_seed: Option<u64>,
    ) -> Result<Arc<Self>, StartupError> {
        let store = Store::open(data_dir).map_err(StartupError::Store)?;
        Ok(Arc::new(Self { store, provider, default_seed, sessions: Mutex::new(HashMap::new()) }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn provider(&self) -> Arc<dyn Provider> {
        self.provider.clone()
    }

    /// Seeds stay below 2^32 so browser clients can hold them exactly.
    pub(crate) fn pick_seed(&self, requested: Option<u64>) -> u64 {
        requested.or(self.default_seed).unwrap_or_else(|| u64::from(rand::random::<u32>()))
    }

    pub(crate) fn register(&self, session: PersistentSession) -> Arc<SessionHandle> {
        let id = session.id().to_string();
        let handle = SessionHandle::spawn(session, self.provider.clone());
        self.sessions.lock().expect("sessions lock").insert(id, handle.clone());
        handle
    }

    /// The live handle for `id`, restoring it from disk on first use. Blocking.
    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        let mut sessions = self.sessions.lock().expect("sessions lock");
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        let restored = self.store.open_session(id)?;
        let handle = SessionHandle::spawn(restored, self.provider.clone());
        sessions.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup<'a>(pairs: &'a [(&'a str, &'a str)]) -> impl Fn(&str) -> Option<String> + 'a {
        move |k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn defaults_without_env() {
        let c = AppConfig::from_lookup(lookup(&[])).unwrap();
        assert_eq!(c.provider.mode, ProviderMode::Live);
        assert_eq!(c.data_dir, PathBuf::from(DEFAULT_DATA_DIR));
        assert_eq!(c.bind, DEFAULT_BIND);
        assert_eq!(c.default_seed, None);
        assert_eq!(c.provider.api_key_ref, "GENLARP_LLM_API_KEY");
    }

    #[test]
    fn env_overrides() {
        let c = AppConfig::from_lookup(lookup(&[
            ("GENLARP_MODE", "replay"),
            ("GENLARP_TRANSCRIPT", "/tmp/t.ndjson"),
            ("GENLARP_SEED", "42"),
            ("GENLARP_LLM_MODEL", "m"),
            ("GENLARP_LLM_BASE_URL", "http://localhost:1"),
            ("GENLARP_DATA_DIR", "/srv/g"),
        ]))
        .unwrap();
        assert_eq!(c.provider.mode, ProviderMode::Replay);
        assert_eq!(c.default_seed, Some(42));
        assert_eq!(c.provider.model_name, "m");
        assert_eq!(c.provider.base_url, "http://localhost:1");
        assert_eq!(c.data_dir, PathBuf::from("/srv/g"));
    }

    #[test]
    fn bad_env_is_reported() {
        assert!(AppConfig::from_lookup(lookup(&[("GENLARP_MODE", "dream")])).is_err());
        assert!(AppConfig::from_lookup(lookup(&[("GENLARP_SEED", "x")])).is_err());
        assert!(AppConfig::from_lookup(lookup(&[("GENLARP_MODE", "replay")])).is_err());
    }
}
