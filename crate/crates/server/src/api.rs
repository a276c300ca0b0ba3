use std::ops::Range;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use chrono::NaiveDate;
use chronopyr::pyramid::LaplacianEncoding;
use chronopyr::spectrogram::compute_spectrogram;
use chronopyr::store::{encode_png, export_thumbnail, export_video, Plane};
use chronopyr::time::{date_of, format_duration, format_time, midnight_ns, NANOS_PER_DAY};
use chronopyr::{MissingRuns, Period, PyramidManifest, Shape, SpectrogramGrid, TimeGrid};
use serde::{Deserialize, Serialize};
use tower::ServiceExt;
use tower_http::services::ServeFile;
use xxhash_rust::xxh64::xxh64;

use crate::cache::ThumbKey;
use crate::error::ApiError;
use crate::AppState;

/// `<ISO-8601 start>/<ISO-8601 duration>` of the frame.
pub const FRAME_TIME_HEADER: &str = "x-frame-time";
pub const FRAME_TIME_NS_HEADER: &str = "x-frame-time-ns";
/// Half-open slot range `a-b` encoded in a video response.
pub const VIDEO_SLOTS_HEADER: &str = "x-video-slots";

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub origin_ns: i64,
    pub end_ns: i64,
    pub period: Period,
    pub period_ns: f64,
    pub count: usize,
    pub missing: MissingRuns,
    /// Whether slots carry explicit timestamps instead of a regular grid.
    pub irregular: bool,
}

impl PlaneSummary {
    fn of(grid: &TimeGrid) -> Self {
        PlaneSummary {
            origin_ns: grid.origin_ns,
            end_ns: grid.end_time(),
            period: grid.period,
            period_ns: grid.period.as_nanos_f64(),
            count: grid.count,
            missing: grid.missing.clone(),
            irregular: grid.times.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    /// Timescale of the level's Gaussian frames.
    pub label: String,
    pub gaussian: PlaneSummary,
    /// `None` for level 0.
    pub laplacian: Option<PlaneSummary>,
    pub gaussian_stored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub shape: Shape,
    /// Number of levels above the input.
    pub depth: usize,
    pub strides: Vec<u8>,
    pub day_level: Option<usize>,
    pub year_level: Option<usize>,
    pub chunk_size: usize,
    pub laplacian_encoding: LaplacianEncoding,
    /// UTC dates (`YYYY-MM-DD`) left out of the levels above the day level.
    pub dropped_days: Vec<String>,
    pub levels: Vec<LevelSummary>,
}

impl ManifestSummary {
    pub fn of(m: &PyramidManifest) -> chronopyr::Result<Self> {
        let levels = (0..=m.depth())
            .map(|level| {
                Ok(LevelSummary {
                    level,
                    label: m.schedule.labels[level].clone(),
                    gaussian: PlaneSummary::of(m.gaussian_grid(level)?),
                    laplacian: if level == 0 {
                        None
                    } else {
                        Some(PlaneSummary::of(m.laplacian_grid(level)?))
                    },
                    gaussian_stored: level > 0 || m.input_stored,
                })
            })
            .collect::<chronopyr::Result<Vec<_>>>()?;
        Ok(ManifestSummary {
            shape: m.shape,
            depth: m.depth(),
            strides: m.schedule.strides.clone(),
            day_level: m.schedule.day_level,
            year_level: m.schedule.year_level,
            chunk_size: m.chunk_size,
            laplacian_encoding: m.laplacian_encoding,
            dropped_days: dropped_days(m)?,
            levels,
        })
    }
}

fn dropped_days(m: &PyramidManifest) -> chronopyr::Result<Vec<String>> {
    let Some(shards) = &m.shards else {
        return Ok(Vec::new());
    };
    shards
        .dropped
        .iter()
        .map(|&i| {
            let t = m.gaussian[0].slot_to_time(shards.bounds[i].0)?;
            Ok(date_of(t).format("%Y-%m-%d").to_string())
        })
        .collect()
}

pub async fn manifest(State(app): Shared) -> Response {
    json_bytes(app.summary.clone())
}

fn json_bytes(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

pub async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub async fn no_bundle() -> Html<&'static str> {
    Html(
        "<!doctype html><title>chronopyr</title><p>The explorer bundle is not installed. \
         Start the server with a static directory, or use the <code>/api</code> endpoints directly.</p>",
    )
}

#[derive(Debug, Deserialize)]
pub struct SpectrogramQuery {
    levels: Option<String>,
    from: Option<i64>,
    to: Option<i64>,
}

/// Parses `a..b` (half-open), `a..=b` or a single level `a`.
fn parse_levels(text: &str) -> AppResult<Range<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("bad level range {text:?}")))
    };
    if let Some((a, b)) = text.split_once("..=") {
        Ok(num(a)?..num(b)? + 1)
    } else if let Some((a, b)) = text.split_once("..") {
        Ok(num(a)?..num(b)?)
    } else {
        let a = num(text)?;
        Ok(a..a + 1)
    }
}

async fn spectrogram_grid(app: &Arc<AppState>) -> AppResult<Arc<SpectrogramGrid>> {
    app.spectrogram
        .get_or_try_init(|| async {
            let worker = Arc::clone(app);
            let grid = tokio::task::spawn_blocking(move || {
                compute_spectrogram(&worker.store, &worker.spectrogram_options)
            })
            .await??;
            Ok::<_, ApiError>(Arc::new(grid))
        })
        .await
        .cloned()
}

pub async fn spectrogram(State(app): Shared, Query(q): Query<SpectrogramQuery>) -> AppResult<Response> {
    let m = app.store.manifest();
    let depth = m.depth();
    let levels = match &q.levels {
        Some(text) => parse_levels(text)?,
        None => 1..depth + 1,
    };
    if levels.is_empty() {
        return Err(ApiError::bad_range(format!("empty level range {:?}", q.levels.unwrap_or_default())));
    }
    if levels.start == 0 || levels.end > depth + 1 {
        return Err(ApiError::not_found(format!("levels {levels:?} outside 1..={depth}")));
    }
    let from = q.from.unwrap_or(m.gaussian[0].origin_ns);
    let to = q.to.unwrap_or_else(|| m.gaussian.iter().map(|g| g.end_time()).max().unwrap_or(from));
    if from >= to {
        return Err(ApiError::bad_range(format!("empty time window [{from}, {to})")));
    }
    let grid = spectrogram_grid(&app).await?;
    let window = grid.window(levels, from, to)?;
    Ok(json_bytes(serde_json::to_vec(&window).map_err(|e| ApiError::internal(e.to_string()))?.into()))
}

#[derive(Debug, Deserialize)]
pub struct FrameQuery {
    kind: Option<String>,
    edge: Option<u32>,
}

fn parse_plane(kind: Option<&str>) -> AppResult<Plane> {
    match kind {
        None | Some("gaussian") => Ok(Plane::Gaussian),
        Some("laplacian") => Ok(Plane::Laplacian),
        Some(other) => Err(ApiError::bad_request(format!("kind must be gaussian or laplacian, not {other:?}"))),
    }
}

/// The grid of a level, or 404 when the level does not exist or is not stored.
fn level_grid(app: &AppState, plane: Plane, level: usize) -> AppResult<&TimeGrid> {
    let m = app.store.manifest();
    let stored = match plane {
        Plane::Gaussian => level <= m.depth() && (level > 0 || m.input_stored),
        Plane::Laplacian => (1..=m.depth()).contains(&level),
    };
    if !stored {
        return Err(ApiError::not_found(format!("no stored {} level {level}", plane.dir())));
    }
    Ok(app.store.grid(plane, level)?)
}

pub async fn thumbnail(
    State(app): Shared,
    Path((level, slot)): Path<(usize, usize)>,
    Query(q): Query<FrameQuery>,
) -> AppResult<Response> {
    let plane = parse_plane(q.kind.as_deref())?;
    let grid = level_grid(&app, plane, level)?;
    if slot >= grid.count {
        return Err(ApiError::not_found(format!("slot {slot} outside 0..{}", grid.count)));
    }
    let t = grid.slot_to_time(slot)?;
    let frame_time = format!("{}/{}", format_time(t), format_duration(&grid.period));
    let edge = q.edge.unwrap_or(app.config.thumb_edge);
    if edge == 0 {
        return Err(ApiError::bad_request("edge must be positive"));
    }
    let key = ThumbKey { plane, level, slot, edge };
    let png = match app.thumbs.get(&key) {
        Some(png) => png,
        None => {
            let worker = Arc::clone(&app);
            let png = tokio::task::spawn_blocking(move || -> AppResult<Bytes> {
                let values = worker.store.read_frame(plane, level, slot)?;
                let shape = worker.store.manifest().shape;
                let img = export_thumbnail(shape, plane.kind(), &values, edge)?;
                Ok(encode_png(&img)?.into())
            })
            .await??;
            app.thumbs.put(key, png.clone());
            png
        }
    };
    let mut resp = ([(header::CONTENT_TYPE, HeaderValue::from_static("image/png"))], png).into_response();
    let h = resp.headers_mut();
    h.insert(FRAME_TIME_HEADER, HeaderValue::from_str(&frame_time).expect("ascii time"));
    h.insert(FRAME_TIME_NS_HEADER, HeaderValue::from(t));
    if grid.is_missing(slot) {
        h.insert("x-frame-missing", HeaderValue::from_static("1"));
    }
    Ok(resp)
}

#[derive(Debug, Deserialize)]
pub struct VideoQuery {
    from: Option<i64>,
    to: Option<i64>,
    kind: Option<String>,
}

/// Short stable tag of the encoder settings, part of every cache file name.
fn settings_tag(app: &AppState) -> String {
    let fps = app.config.fps;
    format!("{:016x}", xxh64(format!("{}\n{fps}", app.encoder).as_bytes(), 0))
}

async fn encoded_video(
    app: &Arc<AppState>,
    plane: Plane,
    level: usize,
    slots: Range<usize>,
    name: String,
    req: Request,
) -> AppResult<Response> {
    let worker = Arc::clone(app);
    let range = slots.clone();
    let path = app
        .videos
        .get_or_encode(&name, move |path| {
            let source = worker.store.source(plane, level)?;
            let template = worker.encoder.clone();
            export_video(&source, plane.kind(), range, worker.config.fps, &path, Some(&template))?;
            Ok(())
        })
        .await?;
    let mut resp = ServeFile::new_with_mime(&path, &"video/mp4".parse().expect("valid mime"))
        .oneshot(req)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Body::new);
    if resp.status() == StatusCode::NOT_FOUND {
        return Err(ApiError::internal(format!("cached video {} vanished", path.display())));
    }
    let slots = format!("{}-{}", slots.start, slots.end);
    resp.headers_mut()
        .insert(VIDEO_SLOTS_HEADER, HeaderValue::from_str(&slots).expect("ascii"));
    Ok(resp)
}

pub async fn video(
    State(app): Shared,
    Path(level): Path<usize>,
    Query(q): Query<VideoQuery>,
    req: Request,
) -> AppResult<Response> {
    let plane = parse_plane(q.kind.as_deref())?;
    let grid = level_grid(&app, plane, level)?;
    let from = q.from.unwrap_or(grid.origin_ns);
    let to = q.to.unwrap_or_else(|| grid.end_time());
    if from >= to {
        return Err(ApiError::bad_range(format!("empty time window [{from}, {to})")));
    }
    let slots = grid.slots_in(from, to);
    if slots.is_empty() {
        return Err(ApiError::bad_range(format!("no level-{level} frames in [{from}, {to})")));
    }
    let name = format!(
        "video/{}{level}-{}-{}-{}.mp4",
        plane.dir(),
        slots.start,
        slots.end,
        settings_tag(&app)
    );
    encoded_video(&app, plane, level, slots, name, req).await
}

pub async fn day_video(
    State(app): Shared,
    Path((level, date)): Path<(usize, String)>,
    Query(q): Query<FrameQuery>,
    req: Request,
) -> AppResult<Response> {
    let plane = parse_plane(q.kind.as_deref())?;
    let grid = level_grid(&app, plane, level)?;
    let day = NaiveDate::parse_from_str(&date, "%Y-%m-%d")
        .map_err(|_| ApiError::not_found(format!("{date:?} is not a YYYY-MM-DD date")))?;
    let from = midnight_ns(day);
    let slots = grid.slots_in(from, from + NANOS_PER_DAY as i64);
    if slots.is_empty() {
        return Err(ApiError::not_found(format!("no level-{level} frames on {day}")));
    }
    let name = format!("day/{}{level}-{day}-{}.mp4", plane.dir(), settings_tag(&app));
    encoded_video(&app, plane, level, slots, name, req).await
}
