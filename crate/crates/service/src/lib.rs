//! HTTP facade over the recourse engine.
//!
//! A client opens a session, loads a dataset, trains (or uploads) a model,
//! builds an ellipsoid and then asks for counterfactuals, certificates and
//! ε sweeps. Artifacts live in memory for the life of the process.

pub mod api;
pub mod error;
mod handlers;
pub mod session;

use std::net::SocketAddr;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ErrorBody};
pub use session::{AppState, ServiceConfig};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    use handlers::*;
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/dataset", post(post_dataset))
        .route("/session/{id}/model/train", post(post_train))
        .route("/session/{id}/model", get(get_model))
        .route("/session/{id}/ellipsoid", post(post_ellipsoid).get(get_ellipsoid))
        .route("/session/{id}/constraints", post(post_constraints))
        .route("/session/{id}/recourse", post(post_recourse))
        .route("/session/{id}/certify", post(post_certify))
        .route("/session/{id}/sweep", post(post_sweep))
        .route("/session/{id}/schema", get(get_schema))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}
