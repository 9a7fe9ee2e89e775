//! HTTP API over a [`Store`]: dataset administration, batch upload with
//! background processing, annotation dispatch, insights and export.
//!
//! Every `/api` route requires `Authorization: Bearer <token>` with a token
//! from the allowlist. `/health` is open. Errors are JSON objects with
//! `code`, `message` and `detail`.

mod api;
pub mod auth;
mod error;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::{HeaderValue, Method};
use axum::routing::{delete, get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};
use ttsforge::align::asr::AsrSpec;
use ttsforge::align::BatchConfig;
use ttsforge::store::worker::PipelineRunner;
use ttsforge::store::Store;

pub use api::SampleView;
pub use auth::{Allowlist, Principal, Role};
pub use error::{ApiError, ErrorBody};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub lease_s: i64,
    pub max_upload_bytes: u64,
    /// Uploads are written here before a job is queued.
    pub spool_dir: PathBuf,
    /// Origin allowed to call the API from a browser; `*` for any.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(spool_dir: PathBuf) -> Self {
        Self {
            lease_s: ttsforge::store::DEFAULT_LEASE_S,
            max_upload_bytes: 2 << 30,
            spool_dir,
            cors_origin: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub allowlist: Arc<Allowlist>,
    pub config: Arc<ServiceConfig>,
}

/// Every authenticated route, with `1` for path parameters.
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/api/me"),
    ("GET", "/api/datasets"),
    ("POST", "/api/datasets"),
    ("GET", "/api/datasets/1"),
    ("GET", "/api/datasets/1/script"),
    ("PUT", "/api/datasets/1/script"),
    ("POST", "/api/datasets/1/batches"),
    ("GET", "/api/datasets/1/assignments"),
    ("POST", "/api/datasets/1/assignments"),
    ("DELETE", "/api/datasets/1/assignments/a@b.c"),
    ("POST", "/api/datasets/1/next-sample"),
    ("GET", "/api/datasets/1/samples"),
    ("GET", "/api/datasets/1/stats"),
    ("GET", "/api/datasets/1/reports"),
    ("GET", "/api/datasets/1/export"),
    ("GET", "/api/jobs"),
    ("GET", "/api/jobs/1"),
    ("GET", "/api/samples/1"),
    ("GET", "/api/samples/1/audio"),
    ("POST", "/api/samples/1/annotation"),
    ("POST", "/api/samples/1/release"),
];

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/me", get(api::me))
        .route("/datasets", get(api::list_datasets).post(api::create_dataset))
        .route("/datasets/{id}", get(api::get_dataset))
        .route("/datasets/{id}/script", get(api::get_script).put(api::put_script))
        .route(
            "/datasets/{id}/batches",
            post(api::upload_batch).layer(DefaultBodyLimit::disable()),
        )
        .route(
            "/datasets/{id}/assignments",
            get(api::list_assignments).post(api::assign),
        )
        .route("/datasets/{id}/assignments/{annotator}", delete(api::unassign))
        .route("/datasets/{id}/next-sample", post(api::next_sample))
        .route("/datasets/{id}/samples", get(api::list_samples))
        .route("/datasets/{id}/stats", get(api::stats))
        .route("/datasets/{id}/reports", get(api::reports))
        .route("/datasets/{id}/export", get(api::export))
        .route("/jobs", get(api::list_jobs))
        .route("/jobs/{id}", get(api::get_job))
        .route("/samples/{id}", get(api::get_sample))
        .route("/samples/{id}/audio", get(api::sample_audio))
        .route("/samples/{id}/annotation", post(api::annotate))
        .route("/samples/{id}/release", post(api::release));
    let mut app = Router::new()
        .route("/health", get(api::health))
        .nest("/api", api)
        .with_state(state.clone());
    if let Some(origin) = &state.config.cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => {
                    tracing::warn!(origin, "ignoring invalid CORS origin");
                    return app;
                }
            }
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
                .allow_headers([AUTHORIZATION, CONTENT_TYPE]),
        );
    }
    app
}

/// Background job runners on their own threads.
pub struct Workers {
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl Workers {
    pub fn spawn(store: Arc<Store>, count: usize, asr: AsrSpec, batch: BatchConfig) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let handles = (0..count)
            .map(|i| {
                let mut runner =
                    PipelineRunner::new(store.clone(), format!("worker-{}-{i}", std::process::id()), asr.clone());
                runner.batch = batch.clone();
                let stop = stop.clone();
                std::thread::Builder::new()
                    .name(format!("job-worker-{i}"))
                    .spawn(move || runner.run_loop(&stop, Duration::from_millis(100)))
                    .expect("spawn worker thread")
            })
            .collect();
        Self { stop, handles }
    }

    /// Lets running jobs finish, then joins the threads.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.handles {
            let _ = h.join();
        }
    }
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
