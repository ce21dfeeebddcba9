//! HTTP/JSON experiment service.
//!
//! Runs live sessions of the drone surveillance task (treatment assignment,
//! control questions, flying, questionnaire, price list, payoff) and exposes
//! the solver, evaluator, simulator, agent generator and analysis as compute
//! endpoints. The request and response bodies live in
//! [`surveil_core::api`].
//!
//! Requests on one session are serialized by a per-session lock; a request
//! is applied to a copy of the session and only committed once its events
//! are on disk, so a rejected or failed request leaves no trace.

mod error;
mod live;
mod routes;
mod store;

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surveil_core::api::{CreateSessionRequest, ErrorCode, Phase};
use surveil_core::config::{FileConfig, QuizQuestion};
use surveil_core::session::{replay_events, CreatedPayload, EventKind, EventRecord, SessionLog};
use surveil_core::Treatment;

pub use error::ApiError;
pub use live::LiveSession;
pub use routes::router;
pub use store::{Store, EVENTS_FILE, SESSIONS_FILE};

/// Generator streams reserved for service-level draws; missions use 0, 1, ...
const ASSIGNMENT_STREAM: u64 = u64::MAX;
const PAYOUT_STREAM: u64 = u64::MAX - 1;

const CODE_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug)]
struct Registry {
    next_stream: u64,
    completed: u32,
    assign: ChaCha8Rng,
    /// Remaining treatments of the current balanced block.
    block: Vec<Treatment>,
    codes: HashSet<String>,
}

impl Registry {
    fn next_treatment(&mut self) -> Treatment {
        if self.block.is_empty() {
            self.block = Treatment::ALL.to_vec();
            self.block.shuffle(&mut self.assign);
        }
        self.block.pop().expect("refilled")
    }

    fn fresh_code(&mut self) -> String {
        loop {
            let code: String = (0..8)
                .map(|_| CODE_ALPHABET[self.assign.random_range(0..CODE_ALPHABET.len())] as char)
                .collect();
            if !self.codes.contains(&code) {
                return code;
            }
        }
    }
}

type SessionHandle = Arc<tokio::sync::Mutex<LiveSession>>;

struct Shared {
    settings: FileConfig,
    quiz: Vec<QuizQuestion>,
    seed: u64,
    store: Store,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    registry: Mutex<Registry>,
    payout_rng: Mutex<ChaCha8Rng>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Opens the data directory if one is configured. Completed sessions in
    /// an existing event log are replayed and checked; the stream counter,
    /// participant codes and participant index continue from there.
    /// Sessions that were still in progress are not resumed.
    pub fn new(settings: FileConfig) -> Result<Self, ApiError> {
        settings.validate()?;
        let seed = settings.service.seed.unwrap_or_else(rand::random);
        let store = match &settings.service.data_dir {
            Some(dir) => Store::open(dir)?,
            None => Store::in_memory(),
        };
        let events = store.events();
        let completed = replay_events(&events)?;
        let mut next_stream = 0;
        let mut codes = HashSet::new();
        for e in events.iter().filter(|e| e.kind == EventKind::Created) {
            let created: CreatedPayload = serde_json::from_value(e.payload.clone())
                .map_err(|err| ApiError::internal(format!("event log: {err}")))?;
            next_stream = next_stream.max(created.stream + 1);
            codes.insert(created.participant_code);
        }
        let done = completed.iter().filter_map(|s| s.participant_index).max().unwrap_or(0);
        let mut assign = ChaCha8Rng::seed_from_u64(seed);
        assign.set_stream(ASSIGNMENT_STREAM);
        let mut payout = ChaCha8Rng::seed_from_u64(seed);
        payout.set_stream(PAYOUT_STREAM);
        Ok(Self(Arc::new(Shared {
            quiz: settings.quiz(),
            settings,
            seed,
            store,
            sessions: RwLock::new(HashMap::new()),
            registry: Mutex::new(Registry { next_stream, completed: done, assign, block: Vec::new(), codes }),
            payout_rng: Mutex::new(payout),
        })))
    }

    pub fn settings(&self) -> &FileConfig {
        &self.0.settings
    }

    pub fn seed(&self) -> u64 {
        self.0.seed
    }

    /// Every event accepted so far, in append order.
    pub fn events(&self) -> Vec<EventRecord> {
        self.0.store.events()
    }

    /// Snapshots of the sessions completed since the store was opened,
    /// plus those already in the snapshot file.
    pub fn completed_sessions(&self) -> Vec<SessionLog> {
        self.0.store.sessions()
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, session: &mut LiveSession, events: live::Events) -> Result<(), ApiError> {
        if events.is_empty() {
            return Ok(());
        }
        let ts = now_ms();
        let records: Vec<EventRecord> = events
            .into_iter()
            .map(|(kind, payload)| {
                let seq = session.seq;
                session.seq += 1;
                EventRecord { session_id: session.id.clone(), seq, kind, payload, timestamp_ms: ts }
            })
            .collect();
        self.0.store.append_events(&records)?;
        Ok(())
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<LiveSession, ApiError> {
        if req.scripted && !self.0.settings.service.allow_scripted_outcomes {
            return Err(ApiError::validation("scripted sessions are disabled on this service"));
        }
        if let Some(code) = &req.participant_code {
            if code.len() != 8 || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(ApiError::validation("participant code must be 8 letters or digits"));
            }
        }
        let (id, code, treatment, stream) = {
            let mut reg = self.0.registry.lock().expect("registry lock");
            let code = match &req.participant_code {
                Some(c) if reg.codes.contains(c) => {
                    return Err(ApiError::new(ErrorCode::Conflict, format!("participant code {c} already used")))
                }
                Some(c) => c.clone(),
                None => reg.fresh_code(),
            };
            let treatment = req.treatment.unwrap_or_else(|| reg.next_treatment());
            let stream = reg.next_stream;
            // The stream prefix keeps ids unique across restarts.
            let id = format!("{stream:06}-{:016x}", reg.assign.next_u64());
            reg.next_stream += 1;
            reg.codes.insert(code.clone());
            (id, code, treatment, stream)
        };
        let (mut session, events) = LiveSession::new(
            id.clone(),
            code,
            treatment,
            self.0.seed,
            stream,
            req.scripted,
            self.0.settings.mission.clone(),
            self.0.quiz.clone(),
            now_ms(),
        )?;
        self.persist(&mut session, events)?;
        self.0
            .sessions
            .write()
            .expect("session map lock")
            .insert(id, Arc::new(tokio::sync::Mutex::new(session.clone())));
        tracing::info!(session = %session.id, %treatment, stream, "session created");
        Ok(session)
    }

    /// Reads a session, waiting for any request in flight on it.
    pub async fn read_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&LiveSession) -> Result<R, ApiError>,
    ) -> Result<R, ApiError> {
        let handle = self.handle(id)?;
        let guard = handle.lock().await;
        f(&guard)
    }

    /// Applies `f` to a copy of the session and commits it once the events
    /// it produced are stored.
    pub async fn update_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut LiveSession, &AppState) -> Result<(R, live::Events), ApiError>,
    ) -> Result<R, ApiError> {
        let handle = self.handle(id)?;
        let mut guard = handle.lock().await;
        let mut draft = guard.clone();
        let (out, events) = f(&mut draft, self)?;
        self.persist(&mut draft, events)?;
        if draft.phase == Phase::Done && guard.phase != Phase::Done {
            if let Some(snapshot) = draft.snapshot() {
                self.0.store.append_session(&snapshot)?;
            }
            tracing::info!(session = %draft.id, "session completed");
        }
        *guard = draft;
        Ok(out)
    }

    fn next_participant_index(&self) -> u32 {
        let mut reg = self.0.registry.lock().expect("registry lock");
        reg.completed += 1;
        reg.completed
    }
}

/// Serves the API on `addr` until ctrl-c.
pub async fn serve(settings: FileConfig) -> std::io::Result<()> {
    let addr: SocketAddr = settings
        .service
        .bind
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bind address: {e}")))?;
    let state = AppState::new(settings).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, seed = state.seed(), "experiment service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Serves on an already bound listener; used by tests and embedding code.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
