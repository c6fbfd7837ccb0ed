use super::wire::{handle, parse_request, ErrorBody, Reply, MAX_FRAME};
use super::{CreateSlice, OrchError, Orchestrator};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use std::convert::Infallible;
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio_stream::wrappers::IntervalStream;
use tokio_stream::{Stream, StreamExt};

pub const DEFAULT_REQREP_PORT: u16 = 5555;
pub const DEFAULT_HTTP_PORT: u16 = 8080;
/// Cadence of `/api/events`.
pub const SSE_PERIOD: Duration = Duration::from_millis(500);

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: IpAddr,
    pub reqrep_port: u16,
    pub http_port: u16,
    pub sse_period: Duration,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            reqrep_port: DEFAULT_REQREP_PORT,
            http_port: DEFAULT_HTTP_PORT,
            sse_period: SSE_PERIOD,
        }
    }
}

/// A running service. Dropping it stops both listeners (the orchestrator
/// itself keeps running).
pub struct ServiceHandle {
    pub reqrep_addr: SocketAddr,
    pub http_addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Blocks until the service ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds both ports, then serves them from a background runtime.
pub fn serve(orch: Arc<Orchestrator>, cfg: ServeConfig) -> io::Result<ServiceHandle> {
    let reqrep = std::net::TcpListener::bind((cfg.bind, cfg.reqrep_port))?;
    let http = std::net::TcpListener::bind((cfg.bind, cfg.http_port))?;
    reqrep.set_nonblocking(true)?;
    http.set_nonblocking(true)?;
    let (reqrep_addr, http_addr) = (reqrep.local_addr()?, http.local_addr()?);
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let (stop, stopped) = oneshot::channel();
    let thread = thread::Builder::new().name("orchestrator-net".into()).spawn(move || {
        rt.block_on(async move {
            let reqrep = TcpListener::from_std(reqrep).expect("listener from std");
            let http = TcpListener::from_std(http).expect("listener from std");
            let app = router(orch.clone(), cfg.sse_period);
            tokio::select! {
                _ = stopped => {}
                _ = accept_reqrep(reqrep, orch) => {}
                r = axum::serve(http, app) => {
                    if let Err(e) = r {
                        tracing::error!(error = %e, "http gateway failed");
                    }
                }
            }
        });
        rt.shutdown_timeout(Duration::from_millis(200));
    })?;
    tracing::info!(%reqrep_addr, %http_addr, "orchestrator listening");
    Ok(ServiceHandle { reqrep_addr, http_addr, stop: Some(stop), thread: Some(thread) })
}

async fn accept_reqrep(listener: TcpListener, orch: Arc<Orchestrator>) {
    loop {
        match listener.accept().await {
            Ok((sock, peer)) => {
                let _ = sock.set_nodelay(true);
                let orch = orch.clone();
                tokio::spawn(async move {
                    if let Err(e) = reqrep_conn(sock, orch).await {
                        tracing::debug!(%peer, error = %e, "request-reply connection closed");
                    }
                });
            }
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
        }
    }
}

async fn reply(sock: &mut TcpStream, r: &Reply) -> io::Result<()> {
    let body = serde_json::to_vec(r).map_err(io::Error::other)?;
    sock.write_all(&(body.len() as u32).to_be_bytes()).await?;
    sock.write_all(&body).await?;
    sock.flush().await
}

/// Strict alternation: read one frame, answer it, repeat.
async fn reqrep_conn(mut sock: TcpStream, orch: Arc<Orchestrator>) -> io::Result<()> {
    loop {
        let mut len = [0u8; 4];
        sock.read_exact(&mut len).await?;
        let len = u32::from_be_bytes(len);
        if len > MAX_FRAME {
            // the stream can't be resynchronised after this
            let r = Reply::error("bad_request", format!("frame of {len} bytes exceeds {MAX_FRAME}"), Vec::new());
            reply(&mut sock, &r).await?;
            return Ok(());
        }
        let mut buf = vec![0u8; len as usize];
        sock.read_exact(&mut buf).await?;
        let r = match parse_request(&buf) {
            Ok(req) => {
                let orch = orch.clone();
                tokio::task::spawn_blocking(move || handle(&orch, req))
                    .await
                    .unwrap_or_else(|e| Reply::error("internal", e.to_string(), Vec::new()))
            }
            Err(r) => r,
        };
        reply(&mut sock, &r).await?;
    }
}

#[derive(Clone)]
struct AppState {
    orch: Arc<Orchestrator>,
    period: Duration,
}

fn router(orch: Arc<Orchestrator>, period: Duration) -> Router {
    Router::new()
        .route("/api/slices", get(list).post(create))
        .route("/api/slices/{id}", delete(destroy))
        .route("/api/slices/{id}/band", post(set_band).put(set_band))
        .route("/api/metrics", get(metrics))
        .route("/api/events", get(events))
        .with_state(AppState { orch, period })
}

fn error_response(e: &OrchError, slice_id: u32) -> Response {
    let code = match e {
        OrchError::Validation(_) => StatusCode::BAD_REQUEST,
        OrchError::Conflict(_) | OrchError::ChannelInUse(_) | OrchError::AlreadyExists(_) => StatusCode::CONFLICT,
        OrchError::UnknownSlice(_) => StatusCode::NOT_FOUND,
        OrchError::Backend(_) => StatusCode::BAD_GATEWAY,
        OrchError::ShutDown => StatusCode::SERVICE_UNAVAILABLE,
    };
    let body = ErrorBody { code: e.code().into(), message: e.to_string(), blockers: e.blockers(slice_id) };
    (code, Json(body)).into_response()
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { code: "bad_request".into(), message, blockers: Vec::new() })).into_response()
}

/// Runs a blocking orchestrator call off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f).await.map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response())
}

async fn list(State(s): State<AppState>) -> Response {
    Json(s.orch.list()).into_response()
}

async fn metrics(State(s): State<AppState>) -> Response {
    Json(s.orch.metrics().as_ref().clone()).into_response()
}

async fn create(State(s): State<AppState>, body: Bytes) -> Response {
    let req: CreateSlice = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("bad body: {e}")),
    };
    let id = req.config.slice_id.0;
    match blocking(move || s.orch.create(req)).await {
        Ok(Ok(d)) => (StatusCode::CREATED, Json(d)).into_response(),
        Ok(Err(e)) => error_response(&e, id),
        Err(r) => r,
    }
}

async fn destroy(State(s): State<AppState>, Path(id): Path<u32>) -> Response {
    match blocking(move || s.orch.destroy(id)).await {
        Ok(Ok(f)) => Json(f).into_response(),
        Ok(Err(e)) => error_response(&e, id),
        Err(r) => r,
    }
}

#[derive(Deserialize)]
struct Bands {
    dl_freq_hz: u64,
    ul_freq_hz: u64,
}

async fn set_band(State(s): State<AppState>, Path(id): Path<u32>, body: Bytes) -> Response {
    let b: Bands = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return bad_request(format!("bad body: {e}")),
    };
    match blocking(move || s.orch.set_band(id, b.dl_freq_hz, b.ul_freq_hz)).await {
        Ok(Ok(d)) => Json(d).into_response(),
        Ok(Err(e)) => error_response(&e, id),
        Err(r) => r,
    }
}

async fn events(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let orch = s.orch.clone();
    let stream = IntervalStream::new(tokio::time::interval(s.period)).map(move |_| {
        let snap = orch.metrics();
        Ok(Event::default()
            .event("metrics")
            .json_data(snap.as_ref())
            .unwrap_or_else(|_| Event::default().comment("snapshot did not serialize")))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
