use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::Value;
use tokio::net::TcpListener;
use tracing::debug;

use pbt_core::service::{Controller, ServiceError, WireRequest, WireResponse};

/// Routes `POST /v1/<kind>` to the controller. The body is the request
/// without its `kind` field, which comes from the path.
pub fn router(controller: Arc<Controller>) -> Router {
    Router::new()
        .route("/v1/{kind}", post(dispatch))
        .with_state(controller)
}

async fn dispatch(
    State(controller): State<Arc<Controller>>,
    Path(kind): Path<String>,
    body: Bytes,
) -> (StatusCode, Json<WireResponse>) {
    let response = match decode(&kind, &body) {
        Ok(request) => {
            debug!(kind, "request");
            // Controller calls block on the store.
            tokio::task::spawn_blocking(move || controller.handle(request))
                .await
                .unwrap_or_else(|e| {
                    WireResponse::from_error(&ServiceError::StoreUnavailable(e.to_string()))
                })
        }
        Err(e) => WireResponse::from_error(&e),
    };
    let status = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(response))
}

fn decode(kind: &str, body: &[u8]) -> Result<WireRequest, ServiceError> {
    if !WireRequest::KINDS.contains(&kind) {
        return Err(ServiceError::NotFound(format!(
            "unknown request kind {kind}"
        )));
    }
    let mut body: Value =
        serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let Value::Object(map) = &mut body else {
        return Err(ServiceError::BadRequest(
            "request body must be a JSON object".into(),
        ));
    };
    map.insert("kind".into(), Value::String(kind.to_string()));
    serde_json::from_value(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    controller: Arc<Controller>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(controller))
        .with_graceful_shutdown(shutdown)
        .await
}
