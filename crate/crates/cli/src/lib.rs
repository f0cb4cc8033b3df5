//! Networked front ends for the evaluation platform: the teacher server
//! and student host daemons, their HTTP APIs, and a blocking client for
//! the admin API.

pub mod api;
pub mod client;
pub mod host;
pub mod server;
pub mod tcp;

use std::net::SocketAddr;
use std::thread;

use axum::Router;
use serde::de::DeserializeOwned;

use api::ApiError;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Server(#[from] mage_core::server::ServerError),
    #[error(transparent)]
    Host(#[from] mage_core::host::HostError),
    #[error("config: {0}")]
    Config(String),
}

pub(crate) fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

/// Binds `addr` now and serves `router` on its own runtime thread.
pub(crate) fn serve_http(addr: SocketAddr, router: Router) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let bound = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    thread::Builder::new()
        .name(format!("http-{bound}"))
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => return log::error!("http listener {bound}: {e}"),
                };
                if let Err(e) = axum::serve(listener, router).await {
                    log::error!("http server {bound}: {e}");
                }
            })
        })?;
    Ok(bound)
}
