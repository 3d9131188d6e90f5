//! Blocking JSON-over-HTTP plumbing for the remote providers.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub(crate) enum HttpFailure {
    /// Connection, timeout or 5xx; worth retrying.
    Transport(String),
    RateLimited {
        retry_after_secs: Option<u64>,
    },
    /// Non-retryable status with the provider's body verbatim.
    Status {
        status: u16,
        body: String,
    },
    /// 2xx with a body that is not JSON.
    Decode(String),
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> Result<Value, HttpFailure> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req
        .send(body.to_string())
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let retry_after_secs = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| HttpFailure::Decode(format!("{e}: {text}"))),
        429 => Err(HttpFailure::RateLimited { retry_after_secs }),
        500..=599 => Err(HttpFailure::Transport(format!("HTTP {status}: {text}"))),
        _ => Err(HttpFailure::Status { status, body: text }),
    }
}

/// Runs `op` up to `attempts` times with exponential backoff while it fails
/// with a retryable error.
pub(crate) fn with_retries<T, E>(
    attempts: u32,
    base_delay: Duration,
    retryable: impl Fn(&E) -> bool,
    mut op: impl FnMut() -> Result<T, E>,
) -> Result<T, E> {
    let mut delay = base_delay;
    let mut attempt = 1;
    loop {
        match op() {
            Err(e) if attempt < attempts && retryable(&e) => {
                tracing::warn!(attempt, "provider call failed; retrying");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// TCP reachability of the endpoint's host.
pub(crate) fn probe(url: &str, timeout: Duration) -> bool {
    let Ok(uri) = url.parse::<ureq::http::Uri>() else {
        return false;
    };
    let Some(host) = uri.host() else {
        return false;
    };
    let port = uri
        .port_u16()
        .unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
    let Ok(addrs) = (host, port).to_socket_addrs() else {
        return false;
    };
    addrs
        .into_iter()
        .any(|addr| TcpStream::connect_timeout(&addr, timeout).is_ok())
}
