//! The plain HTTP side: finished panoramas and the static web client.

use std::convert::Infallible;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use bytes::Bytes;
use copano_core::ids::SessionId;
use http_body_util::Full;
use hyper::body::Incoming;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use tokio::net::TcpStream;

use crate::persist;
use crate::server::{ResultStatus, Shared};

pub(crate) async fn serve(shared: Arc<Shared>, stream: TcpStream) {
    let svc = service_fn(move |req: Request<Incoming>| {
        let shared = shared.clone();
        async move { Ok::<_, Infallible>(route(&shared, req).await) }
    });
    let _ = http1::Builder::new().serve_connection(TokioIo::new(stream), svc).await;
}

fn text(status: StatusCode, body: &str) -> Response<Full<Bytes>> {
    Response::builder()
        .status(status)
        .header("content-type", "text/plain; charset=utf-8")
        .body(Full::new(Bytes::from(body.to_owned())))
        .expect("static response")
}

fn file(bytes: Vec<u8>, content_type: &str, head: bool) -> Response<Full<Bytes>> {
    let len = bytes.len();
    let body = if head { Bytes::new() } else { Bytes::from(bytes) };
    Response::builder()
        .header("content-type", content_type)
        .header("content-length", len)
        .body(Full::new(body))
        .expect("static response")
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("svg") => "image/svg+xml",
        Some("meta") | Some("toml") | Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn route(shared: &Shared, req: Request<Incoming>) -> Response<Full<Bytes>> {
    let head = req.method() == Method::HEAD;
    if req.method() != Method::GET && !head {
        return text(StatusCode::METHOD_NOT_ALLOWED, "only GET and HEAD are supported\n");
    }
    let path = req.uri().path().to_owned();
    let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    match parts.as_slice() {
        ["sessions", id, name] if *name == persist::PANORAMA_FILE || *name == persist::META_FILE => {
            session_file(shared, &SessionId::from(*id), name, head).await
        }
        ["app", rest @ ..] => static_file(shared.config.app_dir.as_deref(), rest, head).await,
        _ => text(StatusCode::NOT_FOUND, "not found\n"),
    }
}

async fn session_file(shared: &Shared, id: &SessionId, name: &str, head: bool) -> Response<Full<Bytes>> {
    let status = shared.hub().sessions.get(id).map(|s| s.result.clone());
    let dir = persist::session_dir(&shared.config.data_dir, id);
    match status {
        Some(ResultStatus::Ready) => {}
        Some(ResultStatus::Failed(why)) => return text(StatusCode::CONFLICT, &format!("session failed: {why}\n")),
        Some(_) => return text(StatusCode::CONFLICT, "not ready\n"),
        // Results written by an earlier run are still served from disk.
        None if id.as_str().chars().all(|c| c.is_ascii_alphanumeric() || c == '-') && dir.join(name).is_file() => {}
        None => return text(StatusCode::NOT_FOUND, "unknown session\n"),
    }
    match tokio::fs::read(dir.join(name)).await {
        Ok(bytes) => file(bytes, content_type(Path::new(name)), head),
        Err(_) => text(StatusCode::NOT_FOUND, "unknown session\n"),
    }
}

async fn static_file(root: Option<&Path>, rest: &[&str], head: bool) -> Response<Full<Bytes>> {
    let Some(root) = root else { return text(StatusCode::NOT_FOUND, "no web client configured\n") };
    let mut rel = PathBuf::new();
    for seg in rest.iter().filter(|s| !s.is_empty()) {
        let seg = Path::new(seg);
        if seg.components().count() != 1 || !matches!(seg.components().next(), Some(Component::Normal(_))) {
            return text(StatusCode::BAD_REQUEST, "bad path\n");
        }
        rel.push(seg);
    }
    let mut full = root.join(&rel);
    if full.is_dir() {
        full.push("index.html");
    }
    match tokio::fs::read(&full).await {
        Ok(bytes) => file(bytes, content_type(&full), head),
        Err(_) => text(StatusCode::NOT_FOUND, "not found\n"),
    }
}
