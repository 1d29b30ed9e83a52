//! Room recognition over HTTP, with participatory retraining: clients upload
//! unlabeled batches, pick or create a room label, and a single background
//! worker retrains and atomically swaps the served model.

pub mod api;
pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use config::ServiceConfig;
pub use error::{ApiError, ServiceError};
pub use routes::router;
pub use state::AppState;

/// A server bound to a socket and running on the current tokio runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn abort(&self) {
        self.state.shutdown();
        self.handle.abort();
    }
}

pub async fn start(config: ServiceConfig) -> Result<RunningServer, ServiceError> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let state = AppState::open(config)?;
    let app = router(Arc::clone(&state));
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(RunningServer { addr, state, handle })
}

/// Starts a server on its own runtime thread; for callers without tokio.
pub fn spawn_blocking_server(config: ServiceConfig) -> Result<(String, Arc<AppState>), ServiceError> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::Builder::new().name("roomrec-http".into()).spawn(move || {
        let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
            Ok(rt) => rt,
            Err(e) => {
                let _ = tx.send(Err(ServiceError::Io(e)));
                return;
            }
        };
        rt.block_on(async move {
            match start(config).await {
                Ok(server) => {
                    let _ = tx.send(Ok((server.url(), Arc::clone(&server.state))));
                    let _ = server.handle.await;
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                }
            }
        });
    })?;
    rx.recv()
        .map_err(|_| ServiceError::Config("server thread exited before binding".into()))?
}
