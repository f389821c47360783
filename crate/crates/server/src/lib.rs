//! HTTP transport for the controller: an axum router serving
//! `POST /v1/<kind>` and a blocking client implementing `TrialService`.

pub mod client;
pub mod http;

pub use client::HttpClient;
pub use http::{router, serve};
