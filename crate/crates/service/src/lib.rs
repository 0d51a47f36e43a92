//! Multi-user annotation service: the HTTP API, the serialized store
//! writer and the job pipeline.

pub mod api;
pub mod broker;
pub mod config;
pub mod error;
pub mod jobs;
pub mod writer;

#[cfg(feature = "amqp")]
pub mod amqp;

use std::path::Path;
use std::sync::Arc;

use axum::Router;
use mtmc_core::annotate::AnnotationStore;
use mtmc_core::recommend::CameraGraph;
use tokio::task::JoinHandle;

pub use api::{router, AppState};
pub use broker::{Broker, InMemoryBroker, JobKind, JobMessage};
pub use config::ServiceConfig;
pub use error::ServiceError;
pub use jobs::{JobState, JobStatus, Pipeline};
pub use writer::{StoreHandle, WriteOp};

pub fn load_graph(path: Option<&Path>) -> Result<CameraGraph, ServiceError> {
    let Some(path) = path else {
        return Ok(CameraGraph::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
    CameraGraph::from_json(&text).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
}

/// Opens the broker named by `broker_uri`.
pub async fn connect_broker(cfg: &ServiceConfig) -> Result<Arc<dyn Broker>, ServiceError> {
    let uri = cfg.broker_uri.as_str();
    if uri.starts_with("memory:") {
        return Ok(InMemoryBroker::new());
    }
    if uri.starts_with("amqp://") || uri.starts_with("amqps://") {
        #[cfg(feature = "amqp")]
        {
            let b = amqp::AmqpBroker::connect(uri, &cfg.queue)
                .await
                .map_err(|e| ServiceError::Unavailable(e.to_string()))?;
            return Ok(b);
        }
        #[cfg(not(feature = "amqp"))]
        return Err(ServiceError::Internal(
            "AMQP broker requested but the service was built without the `amqp` feature".into(),
        ));
    }
    Err(ServiceError::Internal(format!("unsupported broker URI {uri:?}")))
}

/// A running service instance: writer task, pipeline workers and the state
/// shared by request handlers.
pub struct Service {
    pub state: AppState,
    pub workers: Vec<JoinHandle<()>>,
    pub writer: JoinHandle<()>,
}

impl Service {
    pub async fn start(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let broker = connect_broker(cfg).await?;
        let graph = load_graph(cfg.graph_path.as_deref())?;
        Self::start_with(cfg, broker, graph, AnnotationStore::new().with_revisits(cfg.allow_revisits))
    }

    /// Starts on an explicit broker and graph. `base` supplies the store's
    /// clock and revisit policy; the event log under `store_path` is
    /// replayed into it.
    pub fn start_with(
        cfg: &ServiceConfig,
        broker: Arc<dyn Broker>,
        graph: CameraGraph,
        base: AnnotationStore,
    ) -> Result<Self, ServiceError> {
        let (store, writer) = StoreHandle::open_with(cfg.event_log_path(), base, cfg.fsync)?;
        let pipeline = Pipeline::new(broker, store.clone(), cfg.results_dir(), cfg.pipeline.clone())
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", cfg.results_dir().display())))?;
        let workers = pipeline.spawn_workers(cfg.pipeline.workers);
        Ok(Self {
            state: AppState {
                store,
                graph: Arc::new(graph),
                pipeline,
                defaults: cfg.recommend.clone(),
            },
            workers,
            writer,
        })
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }
}

/// Serves the API on `cfg.listen` until Ctrl-C.
pub async fn serve(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let service = Service::start(cfg).await?;
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {}: {e}", cfg.listen)))?;
    tracing::info!(addr = %cfg.listen, store = %cfg.store_path.display(), "serving");
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
