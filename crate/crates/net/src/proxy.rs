//! The replay proxy pair: a content proxy (optionally shaped) and an image
//! proxy that substitutes generated images.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use http_body_util::Full;
use hyper::body::Incoming;
use hyper::header::{HeaderName, HeaderValue, CONTENT_TYPE, HOST};
use hyper::service::service_fn;
use hyper::{Request, Response, StatusCode};
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use hyper_util::server::graceful::GracefulShutdown;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinSet;
use webforge_core::archive::{ArchiveEntry, ImageAnnotation, PageArchive};
use webforge_core::genclient::{GenError, GenerationConfig, ImageGenerator};
use webforge_core::pac::emit_pac;
use webforge_core::replay::{decide, Decision, MissPolicy, ServeMode};
use webforge_core::shaper::ConnectivityProfile;

use crate::shaper::wrap_stream;

pub const GENERATED_HEADER: &str = "x-webforge-generated";
pub const ERROR_HEADER: &str = "x-webforge-error";
pub const DEFAULT_DRAIN: Duration = Duration::from_secs(5);

const STRIPPED: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-connection",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "content-length",
    "content-encoding",
];

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("port in use: {0}")]
    PortInUse(SocketAddr),
    #[error("content and image proxies need distinct ports ({0})")]
    SamePort(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ProxyPairConfig {
    pub content_addr: SocketAddr,
    pub image_addr: SocketAddr,
    pub serve_mode: ServeMode,
    /// Applied to the content listener only.
    pub shaping: Option<ConnectivityProfile>,
    pub miss_policy: MissPolicy,
    pub generation: GenerationConfig,
    /// Concurrent generator calls allowed.
    pub max_in_flight: usize,
    /// Accept HTTP/2 with prior knowledge in addition to HTTP/1.1.
    pub http2: bool,
    pub drain_timeout: Duration,
}

impl ProxyPairConfig {
    pub fn new(content_addr: SocketAddr, image_addr: SocketAddr, serve_mode: ServeMode) -> Self {
        Self {
            content_addr,
            image_addr,
            serve_mode,
            shaping: None,
            miss_policy: MissPolicy::default(),
            generation: GenerationConfig::default(),
            max_in_flight: 1,
            http2: false,
            drain_timeout: DEFAULT_DRAIN,
        }
    }

    /// Both listeners on loopback with OS-assigned ports.
    pub fn ephemeral(serve_mode: ServeMode) -> Self {
        let any: SocketAddr = ([127, 0, 0, 1], 0).into();
        Self::new(any, any, serve_mode)
    }
}

/// Shared request-handling state.
pub struct ReplayService {
    archive: Arc<PageArchive>,
    generator: Arc<dyn ImageGenerator>,
    mode: ServeMode,
    miss_policy: MissPolicy,
    generation: GenerationConfig,
    permits: Semaphore,
}

impl ReplayService {
    pub fn new(archive: Arc<PageArchive>, generator: Arc<dyn ImageGenerator>, config: &ProxyPairConfig) -> Self {
        Self {
            archive,
            generator,
            mode: config.serve_mode.clone(),
            miss_policy: config.miss_policy,
            generation: config.generation.clone(),
            permits: Semaphore::new(config.max_in_flight.max(1)),
        }
    }

    /// Answers one proxied request from the archive or the generator.
    pub async fn serve_request<B>(&self, req: &Request<B>) -> Response<Full<Bytes>> {
        let Some(url) = request_url(req) else {
            return plain(StatusCode::BAD_REQUEST, "cannot determine request URL");
        };
        match decide(&self.archive, &self.mode, req.method().as_str(), &url) {
            Decision::Archived(entry) => self.archived(entry),
            Decision::Generate { image, prompt, .. } => self.generated(image, prompt).await,
            Decision::Miss => {
                let status = StatusCode::from_u16(self.miss_policy.status()).unwrap_or(StatusCode::NOT_FOUND);
                plain(status, "not in archive")
            }
        }
    }

    fn archived(&self, entry: &ArchiveEntry) -> Response<Full<Bytes>> {
        let body = self.archive.body(entry).cloned().unwrap_or_default();
        let mut resp = Response::new(Full::new(body));
        *resp.status_mut() = StatusCode::from_u16(entry.status).unwrap_or(StatusCode::OK);
        let headers = resp.headers_mut();
        for (name, value) in &entry.headers {
            let lower = name.to_ascii_lowercase();
            if STRIPPED.contains(&lower.as_str()) || lower == GENERATED_HEADER || lower == ERROR_HEADER {
                continue;
            }
            if let (Ok(n), Ok(v)) = (HeaderName::from_bytes(lower.as_bytes()), HeaderValue::from_str(value)) {
                headers.append(n, v);
            }
        }
        if let Ok(v) = HeaderValue::from_str(&entry.content_type) {
            headers.insert(CONTENT_TYPE, v);
        }
        resp
    }

    async fn generated(&self, image: &ImageAnnotation, prompt: &str) -> Response<Full<Bytes>> {
        let config = self.generation.with_dimensions_of(image.width, image.height);
        let result = match self.permits.acquire().await {
            Ok(_permit) => {
                let generator = self.generator.clone();
                let prompt = prompt.to_string();
                tokio::task::spawn_blocking(move || generator.generate(&prompt, &config))
                    .await
                    .unwrap_or_else(|e| Err(GenError::BackendUnavailable {
                        endpoint: "generator".into(),
                        reason: e.to_string(),
                    }))
            }
            Err(_) => Err(GenError::BackendUnavailable {
                endpoint: "generator".into(),
                reason: "shutting down".into(),
            }),
        };
        match result {
            Ok(img) => {
                let mut resp = Response::new(Full::new(img.png));
                let h = resp.headers_mut();
                h.insert(CONTENT_TYPE, HeaderValue::from_static("image/png"));
                h.insert(GENERATED_HEADER, HeaderValue::from_static("1"));
                resp
            }
            Err(e) => {
                tracing::warn!(url = %image.url, error = %e, "generation failed");
                let mut resp = plain(StatusCode::BAD_GATEWAY, "generation failed");
                let msg = e.to_string().replace(['\r', '\n'], " ");
                if let Ok(v) = HeaderValue::from_str(&msg) {
                    resp.headers_mut().insert(ERROR_HEADER, v);
                }
                resp
            }
        }
    }
}

fn plain(status: StatusCode, msg: &'static str) -> Response<Full<Bytes>> {
    let mut resp = Response::new(Full::new(Bytes::from_static(msg.as_bytes())));
    *resp.status_mut() = status;
    resp.headers_mut()
        .insert(CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8"));
    resp
}

/// Absolute-form request targets are used as is; origin-form targets are
/// rebuilt from the Host header as plain http.
pub fn request_url<B>(req: &Request<B>) -> Option<String> {
    let uri = req.uri();
    if uri.scheme().is_some() && uri.authority().is_some() {
        return Some(uri.to_string());
    }
    let host = uri
        .authority()
        .map(|a| a.as_str().to_string())
        .or_else(|| req.headers().get(HOST)?.to_str().ok().map(String::from))?;
    let path = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    Some(format!("http://{host}{path}"))
}

/// Handle to a running proxy pair.
pub struct ProxyHandle {
    content_addr: SocketAddr,
    image_addr: SocketAddr,
    stop: watch::Sender<bool>,
    listeners: Vec<tokio::task::JoinHandle<()>>,
}

impl ProxyHandle {
    pub fn content_addr(&self) -> SocketAddr {
        self.content_addr
    }

    pub fn image_addr(&self) -> SocketAddr {
        self.image_addr
    }

    pub fn pac(&self) -> String {
        emit_pac(&self.content_addr.to_string(), &self.image_addr.to_string())
    }

    /// Stops accepting, lets in-flight requests finish within the drain
    /// timeout, aborts the rest. Returns the time spent draining.
    pub async fn shutdown(self) -> Duration {
        let start = Instant::now();
        let _ = self.stop.send(true);
        for l in self.listeners {
            let _ = l.await;
        }
        start.elapsed()
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ProxyError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ProxyError::PortInUse(addr),
        _ => ProxyError::Io(e),
    })
}

/// Binds both listeners and starts serving.
pub async fn run_pair(
    archive: Arc<PageArchive>,
    generator: Arc<dyn ImageGenerator>,
    config: ProxyPairConfig,
) -> Result<ProxyHandle, ProxyError> {
    if config.content_addr.port() != 0 && config.content_addr.port() == config.image_addr.port() {
        return Err(ProxyError::SamePort(config.content_addr.port()));
    }
    let content = bind(config.content_addr).await?;
    let image = bind(config.image_addr).await?;
    let content_addr = content.local_addr()?;
    let image_addr = image.local_addr()?;
    let service = Arc::new(ReplayService::new(archive, generator, &config));
    let (stop, stop_rx) = watch::channel(false);
    let listeners = vec![
        tokio::spawn(accept_loop(content, service.clone(), config.shaping, config.http2, config.drain_timeout, stop_rx.clone())),
        tokio::spawn(accept_loop(image, service, None, config.http2, config.drain_timeout, stop_rx)),
    ];
    tracing::info!(%content_addr, %image_addr, "proxy pair listening");
    Ok(ProxyHandle {
        content_addr,
        image_addr,
        stop,
        listeners,
    })
}

async fn accept_loop(
    listener: TcpListener,
    service: Arc<ReplayService>,
    shaping: Option<ConnectivityProfile>,
    http2: bool,
    drain: Duration,
    mut stop: watch::Receiver<bool>,
) {
    let mut builder = auto::Builder::new(TokioExecutor::new());
    if !http2 {
        builder = builder.http1_only();
    }
    let graceful = GracefulShutdown::new();
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => {
                let Ok((tcp, _)) = accepted else { continue };
                while conns.try_join_next().is_some() {}
                spawn_connection(&builder, &graceful, &mut conns, tcp, service.clone(), shaping);
            }
        }
    }
    drop(listener);
    if tokio::time::timeout(drain, graceful.shutdown()).await.is_err() {
        tracing::warn!("drain timed out, aborting remaining connections");
    }
    conns.shutdown().await;
}

fn spawn_connection(
    builder: &auto::Builder<TokioExecutor>,
    graceful: &GracefulShutdown,
    conns: &mut JoinSet<()>,
    tcp: TcpStream,
    service: Arc<ReplayService>,
    shaping: Option<ConnectivityProfile>,
) {
    let _ = tcp.set_nodelay(true);
    let svc = service_fn(move |req: Request<Incoming>| {
        let service = service.clone();
        async move { Ok::<_, Infallible>(service.serve_request(&req).await) }
    });
    match shaping {
        Some(profile) => {
            let io = TokioIo::new(wrap_stream(tcp, profile));
            let conn = graceful.watch(builder.serve_connection(io, svc).into_owned());
            conns.spawn(async move {
                let _ = conn.await;
            });
        }
        None => {
            let conn = graceful.watch(builder.serve_connection(TokioIo::new(tcp), svc).into_owned());
            conns.spawn(async move {
                let _ = conn.await;
            });
        }
    }
}
