//! One writer thread per session. Mutations queue up in arrival order;
//! readers take the latest committed view without waiting on the writer.

use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread;

use genlarp_core::agent::AgentAction;
use genlarp_core::event::{BranchId, EventRecord};
use genlarp_core::layout::{default_grid, layout_scene, LayoutError, SceneLayout};
use genlarp_core::llm::Provider;
use genlarp_core::runtime::{LlmDecider, Session};
use genlarp_core::store::{PersistentSession, SessionDescriptor};
use tokio::sync::{broadcast, oneshot};

use crate::error::ApiError;

const STREAM_BUFFER: usize = 1024;

#[derive(Debug, Clone)]
pub enum Op {
    Act(AgentAction),
    Role(String),
    Rewind(String),
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Events(Vec<EventRecord>),
    Descriptor(SessionDescriptor),
    Branch(BranchId),
}

/// A committed, immutable picture of a session.
#[derive(Debug, Clone)]
pub struct View {
    pub descriptor: SessionDescriptor,
    pub session: Session,
}

struct Job {
    op: Op,
    reply: oneshot::Sender<Result<Outcome, ApiError>>,
}

struct Shared {
    view: RwLock<Arc<View>>,
    events: broadcast::Sender<EventRecord>,
}

pub struct SessionHandle {
    jobs: mpsc::Sender<Job>,
    shared: Arc<Shared>,
    layout: Result<SceneLayout, LayoutError>,
}

impl SessionHandle {
    /// Takes ownership of `persistent` and starts its writer thread. The
    /// thread exits once the handle is dropped.
    pub fn spawn(persistent: PersistentSession, provider: Arc<dyn Provider>) -> Arc<Self> {
        let locations = &persistent.state().world.locations;
        let layout = layout_scene(locations, default_grid(locations.len()));
        let view = View { descriptor: persistent.descriptor(), session: persistent.session().clone() };
        let (events, _) = broadcast::channel(STREAM_BUFFER);
        let shared = Arc::new(Shared { view: RwLock::new(Arc::new(view)), events });
        let (jobs, rx) = mpsc::channel::<Job>();
        let worker = shared.clone();
        thread::Builder::new()
            .name(format!("session-{}", persistent.id()))
            .spawn(move || run(persistent, provider, worker, rx))
            .expect("spawn session worker");
        Arc::new(Self { jobs, shared, layout })
    }

    pub fn view(&self) -> Arc<View> {
        self.shared.view.read().expect("view lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventRecord> {
        self.shared.events.subscribe()
    }

    pub fn layout(&self) -> &Result<SceneLayout, LayoutError> {
        &self.layout
    }

    /// Queues `op` and waits for its commit. The reply is sent only after
    /// the resulting events are durable.
    pub async fn submit(&self, op: Op) -> Result<Outcome, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.jobs
            .send(Job { op, reply })
            .map_err(|_| ApiError::internal("session worker stopped"))?;
        rx.await.map_err(|_| ApiError::internal("session worker dropped the request"))?
    }
}

fn run(mut session: PersistentSession, provider: Arc<dyn Provider>, shared: Arc<Shared>, rx: mpsc::Receiver<Job>) {
    while let Ok(Job { op, reply }) = rx.recv() {
        let result = match op {
            Op::Act(action) => session
                .act(action, &mut LlmDecider::new(provider.as_ref()))
                .map(Outcome::Events),
            Op::Role(id) => session.switch_role(&id).map(|_| Outcome::Descriptor(session.descriptor())),
            Op::Rewind(node) => session.rewind(&node).map(Outcome::Branch),
        };
        let result = result.map_err(ApiError::from);
        if result.is_ok() {
            let before = shared.view.read().expect("view lock").session.logs().clone();
            let view = View { descriptor: session.descriptor(), session: session.session().clone() };
            *shared.view.write().expect("view lock") = Arc::new(view);
            for event in new_events(&before, session.session()) {
                // no subscribers is fine
                let _ = shared.events.send(event);
            }
        }
        let _ = reply.send(result);
    }
}

fn new_events(
    before: &std::collections::BTreeMap<BranchId, Vec<EventRecord>>,
    after: &Session,
) -> Vec<EventRecord> {
    let mut out = Vec::new();
    for (branch, log) in after.logs() {
        let seen = before.get(branch).map_or(0, Vec::len);
        out.extend(log[seen..].iter().cloned());
    }
    out
}
