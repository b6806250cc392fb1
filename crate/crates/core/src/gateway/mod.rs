//! Configuration, mailbox adapters, control API and the service loop.

pub mod api;
pub mod config;
pub mod mailbox;
pub mod service;

use std::future::Future;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

pub use api::{router, ApiState, QueueItem, ThreadDetail, ThreadSummary};
pub use config::{ConfigFileError, ServiceConfig};
pub use mailbox::{FileMailbox, MailboxAdapter, MailboxError, NetConfig, NetMailbox, SendOutcome, SimMailbox};
pub use service::{build_service, data_dir_config, load_data_dir, run_worker, ServeError, Service, SharedService};

use crate::clock::{Clock, SystemClock};

/// Runs the service described by `config` until `shutdown` resolves: the
/// mailbox poller and timer wheel on a worker thread, the control API on
/// the configured loopback address. Every event is on disk before it takes
/// effect, so a restart picks up where this run stopped.
pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    let (service, _) = build_service(&config)?;
    tracing::info!(
        threads = service.engine().states().count(),
        data_dir = %config.paths.data_dir.display(),
        "state replayed"
    );
    let service = Arc::new(Mutex::new(service));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let stop = Arc::new(AtomicBool::new(false));

    let worker = {
        let (service, clock, stop) = (service.clone(), clock.clone(), stop.clone());
        let poll = config.mailbox.poll_interval;
        std::thread::spawn(move || run_worker(service, clock, poll, stop))
    };

    let listener = tokio::net::TcpListener::bind(config.api.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "control API listening");
    let app = router(ApiState { service, clock });
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;

    stop.store(true, Ordering::Relaxed);
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
    tracing::info!("stopped");
    Ok(result?)
}
