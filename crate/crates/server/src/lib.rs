//! Read-only HTTP API over a pyramid root.
//!
//! Endpoints (all `GET`):
//!
//! | path | response |
//! |------|----------|
//! | `/api/manifest` | level summary: labels, periods, counts, missing runs |
//! | `/api/spectrogram?levels=a..b&from=ns&to=ns` | norms, log values and missing flags |
//! | `/api/level/{i}/frame/{slot}/thumb.png` | PNG thumbnail with `X-Frame-Time` |
//! | `/api/level/{i}/video?from=ns&to=ns` | encoded slice, range requests supported |
//! | `/api/level/{i}/day/{YYYY-MM-DD}/video` | one UTC day of level `i` |
//! | `/` | static explorer bundle |

mod api;
mod cache;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{header, HeaderName, Method};
use axum::routing::get;
use axum::Router;
use chronopyr::store::{encoder_template, Store, DEFAULT_THUMB_EDGE};
use chronopyr::{SpectrogramGrid, SpectrogramOptions};
use tokio::sync::OnceCell;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub use api::{LevelSummary, ManifestSummary, PlaneSummary, FRAME_TIME_HEADER, FRAME_TIME_NS_HEADER, VIDEO_SLOTS_HEADER};
pub use cache::{ThumbCache, ThumbKey, VideoCache};
pub use error::ApiError;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_THUMB_CACHE: usize = 512;
pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub root: PathBuf,
    pub addr: SocketAddr,
    /// Thumbnails kept in memory; 0 disables the cache.
    pub thumb_cache: usize,
    pub thumb_edge: u32,
    /// Directory holding the explorer bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Encoded-video cache; `<root>/cache` by default.
    pub cache_dir: Option<PathBuf>,
    /// Encoder command template; `CHRONOPYR_ENCODER` or the default when unset.
    pub encoder: Option<String>,
    pub fps: f64,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl ServeConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ServeConfig {
            root: root.into(),
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            thumb_cache: DEFAULT_THUMB_CACHE,
            thumb_edge: DEFAULT_THUMB_EDGE,
            static_dir: None,
            cache_dir: None,
            encoder: None,
            fps: DEFAULT_FPS,
            cors_origin: None,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.root.join("cache"))
    }
}

/// Shared request state. The store is immutable; caches are internally
/// synchronized.
pub struct AppState {
    pub store: Store,
    pub config: ServeConfig,
    pub encoder: String,
    pub(crate) summary: axum::body::Bytes,
    pub(crate) spectrogram: OnceCell<Arc<SpectrogramGrid>>,
    pub(crate) spectrogram_options: SpectrogramOptions,
    pub thumbs: ThumbCache,
    pub videos: VideoCache,
}

impl AppState {
    /// Opens the pyramid root. Fails when it holds no valid manifest.
    pub fn open(config: ServeConfig) -> chronopyr::Result<Arc<Self>> {
        let store = Store::open(&config.root)?;
        store.manifest().validate()?;
        if !(config.fps > 0.0 && config.fps.is_finite()) {
            return Err(chronopyr::Error::InvalidArgument(format!("fps {} must be positive", config.fps)));
        }
        if config.thumb_edge == 0 {
            return Err(chronopyr::Error::InvalidArgument("thumbnail edge must be positive".into()));
        }
        let summary = serde_json::to_vec(&ManifestSummary::of(store.manifest())?)?.into();
        Ok(Arc::new(AppState {
            encoder: config.encoder.clone().unwrap_or_else(encoder_template),
            thumbs: ThumbCache::new(config.thumb_cache),
            videos: VideoCache::new(config.cache_dir()),
            summary,
            spectrogram: OnceCell::new(),
            spectrogram_options: SpectrogramOptions::default(),
            store,
            config,
        }))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => match o.parse() {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                log::warn!("ignoring unparsable CORS origin {o:?}");
                AllowOrigin::any()
            }
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::HEAD])
        .allow_headers([header::RANGE, header::IF_RANGE])
        .expose_headers([
            HeaderName::from_static(FRAME_TIME_HEADER),
            HeaderName::from_static(FRAME_TIME_NS_HEADER),
            HeaderName::from_static(VIDEO_SLOTS_HEADER),
            header::CONTENT_RANGE,
            header::ACCEPT_RANGES,
        ]);

    let api = Router::new()
        .route("/manifest", get(api::manifest))
        .route("/spectrogram", get(api::spectrogram))
        .route("/level/{level}/frame/{slot}/thumb.png", get(api::thumbnail))
        .route("/level/{level}/video", get(api::video))
        .route("/level/{level}/day/{date}/video", get(api::day_video))
        .fallback(api::api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/", get(api::no_bundle)),
    };
    app.layer(cors).with_state(state)
}

/// Binds `config.addr` and serves until the process is stopped.
pub async fn serve(config: ServeConfig) -> std::io::Result<()> {
    let addr = config.addr;
    let state = AppState::open(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, state).await
}

/// Serves `state` on an already bound listener.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("serving {} on http://{}", state.config.root.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
