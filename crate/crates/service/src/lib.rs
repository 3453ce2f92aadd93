//! HTTP preview service for the embroidery engine.
//!
//! Clients create a project, upload a PNG, extract color regions, assign a
//! stitch swatch to every region and request previews, which run as queued
//! jobs on a worker pool. State lives on disk under the data directory and
//! survives restarts.

pub mod api;
pub mod config;
pub mod error;
pub mod jobs;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use stitchwork_core::Result;

pub use config::ServiceConfig;
pub use jobs::{render_preview, JobParams, JobQueue, JobRecord, JobStatus};
pub use store::Store;

pub struct AppState {
    pub config: ServiceConfig,
    pub store: Store,
    pub jobs: Arc<JobQueue>,
}

/// A running service: shared state plus its worker threads.
pub struct Service {
    state: Arc<AppState>,
    workers: Vec<JoinHandle<()>>,
}

impl Service {
    /// Opens the data directory, requeues unfinished jobs and starts the workers.
    pub fn start(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let store = Store::open(config.data_dir.join("projects"))?;
        let jobs = JobQueue::open(config.data_dir.join("jobs"), config.stitch_dir.clone())?;
        let workers = jobs.spawn_workers(config.workers);
        log::info!(
            "{} project(s) loaded, {} worker(s), stitches from {}",
            store.len(),
            config.workers,
            config.stitch_dir.display()
        );
        Ok(Self {
            state: Arc::new(AppState { config, store, jobs }),
            workers,
        })
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub fn router(&self) -> axum::Router {
        api::router(Arc::clone(&self.state))
    }

    /// Serves until Ctrl-C, then stops the workers.
    pub async fn serve(self) -> std::io::Result<()> {
        let addr = SocketAddr::from(([0, 0, 0, 0], self.state.config.port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{addr}");
        axum::serve(listener, self.router())
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            })
            .await?;
        self.shutdown();
        Ok(())
    }

    /// Signals the workers and waits for any running job to finish.
    pub fn shutdown(mut self) {
        self.state.jobs.shutdown();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.state.jobs.shutdown();
    }
}
