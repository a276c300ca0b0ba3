use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::NaiveDate;
use chronopyr::builder::level_grids;
use chronopyr::pyramid::{Checksums, DEFAULT_CHUNK_SIZE};
use chronopyr::store::{build_store, display_bytes, write_input, write_manifest, Plane, StoreBuildOptions, StoreLayout};
use chronopyr::synth::{Component, Noise};
use chronopyr::time::{format_time, midnight_ns, NANOS_PER_DAY, NANOS_PER_MIN};
use chronopyr::{generate, schedule_for, LaplacianEncoding, Period, PyramidManifest, SceneSpec, Shape, TimeGrid};
use chronopyr_server::{router, AppState, ManifestSummary, ServeConfig, FRAME_TIME_HEADER, FRAME_TIME_NS_HEADER};
use serde_json::Value;
use tower::ServiceExt;

const ENCODER: &str = "cat > {output}";

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 10).unwrap()
}

/// Three days at one frame per minute, the middle day missing, built as a
/// sharded store. Shared by all tests; never modified after creation.
fn three_day_root() -> &'static Path {
    static ROOT: OnceLock<tempfile::TempDir> = OnceLock::new();
    ROOT.get_or_init(|| {
        let minute = Period::from_nanos(NANOS_PER_MIN).unwrap();
        let mut spec = SceneSpec::new(minute, 3 * 1440, 8, 6)
            .with(Component::DayNight {
                day_fraction: 0.5,
                day: 160.0,
                night: 20.0,
                region: None,
            })
            .with(Component::Sinusoid {
                period_slots: 37.0,
                amplitude: 25.0,
                phase: 0.0,
                region: None,
            })
            .with(Component::Missing { start: 1440, end: 2880 });
        spec.origin_ns = midnight_ns(day0());
        spec.noise = Some(Noise { amplitude: 4.0, seed: 3 });
        let x = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_input(&x, dir.path(), StoreLayout { chunk_size: 256, ..Default::default() }).unwrap();
        let opts = StoreBuildOptions {
            workers: 2,
            sharded: true,
            ..Default::default()
        };
        build_store(dir.path(), &opts).unwrap();
        dir
    })
    .path()
}

/// A constant scene: every Laplacian frame is zero.
fn constant_root() -> &'static Path {
    static ROOT: OnceLock<tempfile::TempDir> = OnceLock::new();
    ROOT.get_or_init(|| {
        let mut spec = SceneSpec::new(Period::from_secs(1).unwrap(), 600, 5, 3);
        spec.base = 90.0;
        let dir = tempfile::tempdir().unwrap();
        write_input(&generate(&spec).unwrap(), dir.path(), StoreLayout::default()).unwrap();
        build_store(dir.path(), &StoreBuildOptions::default()).unwrap();
        dir
    })
    .path()
}

/// Manifest of a one-year 30 fps pyramid with no frame data written.
fn year_manifest_root() -> tempfile::TempDir {
    let fps30 = Period::from_fps(30).unwrap();
    let origin = midnight_ns(NaiveDate::from_ymd_opt(2023, 1, 1).unwrap());
    let count = 30 * 86_400 * 366;
    let schedule = schedule_for(fps30, Period::days(366).unwrap()).unwrap();
    let grids = level_grids(&TimeGrid::new(origin, fps30, count), &schedule.strides).unwrap();
    let depth = schedule.depth();
    let manifest = PyramidManifest {
        schedule,
        shape: Shape::new(64, 48, 3).unwrap(),
        laplacian: grids[..depth].to_vec(),
        gaussian: grids,
        laplacian_encoding: LaplacianEncoding::I16,
        chunk_size: DEFAULT_CHUNK_SIZE,
        input_stored: false,
        checksums: Checksums {
            gaussian: vec![None; depth + 1],
            laplacian: vec![None; depth],
        },
        shards: None,
    };
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), &manifest).unwrap();
    dir
}

fn config(root: &Path, cache: &Path) -> ServeConfig {
    let mut c = ServeConfig::new(root);
    c.cache_dir = Some(cache.to_path_buf());
    c.encoder = Some(ENCODER.into());
    c
}

fn app(root: &Path, cache: &Path) -> (Arc<AppState>, Router) {
    let state = AppState::open(config(root, cache)).unwrap();
    (Arc::clone(&state), router(state))
}

#[derive(Debug, Clone, PartialEq)]
struct Reply {
    status: StatusCode,
    headers: BTreeMap<String, String>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn header(&self, name: &str) -> &str {
        self.headers.get(name).map(String::as_str).unwrap_or_else(|| panic!("no {name} header"))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    // Dates vary between requests; everything else must be reproducible.
    let headers = resp
        .headers()
        .iter()
        .filter(|(k, _)| *k != header::DATE)
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("<binary>").to_string()))
        .collect();
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn summary(root: &Path) -> ManifestSummary {
    ManifestSummary::of(chronopyr::Store::open(root).unwrap().manifest()).unwrap()
}

#[tokio::test]
async fn manifest_summarizes_levels() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let r = get(&app, "/api/manifest").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header("content-type"), "application/json");
    let s: ManifestSummary = serde_json::from_slice(&r.body).unwrap();
    let m = state.store.manifest();
    assert_eq!(s.depth, m.depth());
    assert_eq!(s.levels.len(), m.depth() + 1);
    assert_eq!(s.day_level, m.schedule.day_level);
    assert_eq!(s.levels[0].label, "1 min");
    assert_eq!(s.levels[s.day_level.unwrap()].label, "1 day");
    assert!(s.levels[0].laplacian.is_none());
    assert_eq!(s.levels[0].gaussian.missing.runs(), &[(1440, 2880)]);
    for (i, l) in s.levels.iter().enumerate().skip(1) {
        assert_eq!(l.gaussian.count, m.gaussian[i].count);
        assert_eq!(l.laplacian.as_ref().unwrap().count, m.laplacian[i - 1].count);
    }
}

#[tokio::test]
async fn year_at_30_fps_has_21_levels() {
    let root = year_manifest_root();
    let cache = tempfile::tempdir().unwrap();
    let (_, app) = app(root.path(), cache.path());
    let s = get(&app, "/api/manifest").await.json();
    assert_eq!(s["depth"], 21);
    assert_eq!(s["year_level"], 21);
    let labels: Vec<&str> = s["levels"].as_array().unwrap().iter().map(|l| l["label"].as_str().unwrap()).collect();
    assert_eq!(labels.len(), 22);
    assert_eq!(labels[0], "1/30 s");
    assert!(labels.last().unwrap().ends_with("1 year"));

    // No chunk has been written yet.
    for uri in [
        "/api/level/3/frame/0/thumb.png",
        "/api/level/3/frame/0/thumb.png?kind=laplacian",
        "/api/spectrogram?levels=20..22",
        "/api/level/21/video",
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_eq!(r.json()["error"], "missing-chunk");
        assert_eq!(r.header("retry-after"), "5");
    }
    // Level 0 is not stored at all.
    assert_eq!(get(&app, "/api/level/0/frame/0/thumb.png").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn zero_laplacian_thumbnail_is_mid_gray() {
    let cache = tempfile::tempdir().unwrap();
    let (_, app) = app(constant_root(), cache.path());
    for level in [1, 2] {
        let r = get(&app, &format!("/api/level/{level}/frame/3/thumb.png?kind=laplacian")).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.header("content-type"), "image/png");
        let img = image::load_from_memory(&r.body).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (5, 3));
        assert!(img.pixels().all(|p| p.0[0] == 128));
    }
    let r = get(&app, "/api/level/1/frame/3/thumb.png").await;
    let img = image::load_from_memory(&r.body).unwrap().to_luma8();
    assert!(img.pixels().all(|p| p.0[0] == 90));
}

#[tokio::test]
async fn thumbnails_downscale_to_the_requested_edge() {
    let cache = tempfile::tempdir().unwrap();
    let (_, app) = app(three_day_root(), cache.path());
    let r = get(&app, "/api/level/0/frame/700/thumb.png?edge=4").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(image::load_from_memory(&r.body).unwrap().to_luma8().dimensions(), (4, 3));
    assert_eq!(get(&app, "/api/level/0/frame/700/thumb.png?edge=0").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn frame_time_header_is_exact() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let m = state.store.manifest();
    for (level, slot, kind) in [(0, 0, "gaussian"), (0, 4319, "gaussian"), (3, 17, "gaussian"), (3, 17, "laplacian"), (6, 2, "laplacian")] {
        let grid = match kind {
            "gaussian" => &m.gaussian[level],
            _ => &m.laplacian[level - 1],
        };
        let r = get(&app, &format!("/api/level/{level}/frame/{slot}/thumb.png?kind={kind}")).await;
        assert_eq!(r.status, StatusCode::OK);
        let t = grid.slot_to_time(slot).unwrap();
        assert_eq!(r.header(FRAME_TIME_NS_HEADER), t.to_string());
        let (start, span) = r.header(FRAME_TIME_HEADER).split_once('/').unwrap();
        assert_eq!(start, format_time(t));
        assert!(span.starts_with("PT") && span.ends_with('S'));
    }
    let r = get(&app, "/api/level/0/frame/0/thumb.png").await;
    assert_eq!(r.header(FRAME_TIME_HEADER), "2024-03-10T00:00:00.000000000Z/PT60S");
    let r = get(&app, "/api/level/0/frame/1500/thumb.png").await;
    assert_eq!(r.header("x-frame-missing"), "1");
}

#[tokio::test]
async fn missing_day_is_flagged_in_the_spectrogram() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let day_level = state.store.manifest().schedule.day_level.unwrap();
    let from = midnight_ns(day0()) + NANOS_PER_DAY as i64;
    let to = from + NANOS_PER_DAY as i64;
    let w = get(&app, &format!("/api/spectrogram?levels=1..={day_level}&from={from}&to={to}")).await.json();
    let levels = w["levels"].as_array().unwrap();
    assert_eq!(levels.len(), day_level);
    for l in levels {
        let missing = l["missing"].as_array().unwrap();
        assert!(!missing.is_empty());
        assert!(missing.iter().all(|m| m == true), "level {}", l["level"]);
        assert!(l["norms"].as_array().unwrap().iter().all(|n| n == 0.0));
    }

    // The day before has real activity.
    let w = get(&app, &format!("/api/spectrogram?levels=1..4&from={}&to={from}", from - NANOS_PER_DAY as i64)).await.json();
    for l in w["levels"].as_array().unwrap() {
        assert!(l["missing"].as_array().unwrap().iter().any(|m| m == false));
        assert_eq!(l["norms"].as_array().unwrap().len(), l["log"].as_array().unwrap().len());
    }
    assert!(w["log_max"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn spectrogram_defaults_cover_everything() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let w = get(&app, "/api/spectrogram").await.json();
    let m = state.store.manifest();
    let levels = w["levels"].as_array().unwrap();
    assert_eq!(levels.len(), m.depth());
    for (l, grid) in levels.iter().zip(&m.laplacian) {
        assert_eq!(l["norms"].as_array().unwrap().len(), grid.count);
        assert_eq!(l["first_slot"], 0);
    }
}

#[tokio::test]
async fn bad_requests_get_the_documented_codes() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let depth = state.store.manifest().depth();
    let start = midnight_ns(day0());
    let cases = [
        (format!("/api/level/{}/frame/0/thumb.png", depth + 1), StatusCode::NOT_FOUND),
        ("/api/level/2/frame/999999/thumb.png".into(), StatusCode::NOT_FOUND),
        ("/api/level/0/frame/0/thumb.png?kind=laplacian".into(), StatusCode::NOT_FOUND),
        ("/api/level/1/frame/0/thumb.png?kind=other".into(), StatusCode::BAD_REQUEST),
        (format!("/api/spectrogram?levels=0..{depth}"), StatusCode::NOT_FOUND),
        (format!("/api/spectrogram?levels=1..{}", depth + 2), StatusCode::NOT_FOUND),
        ("/api/spectrogram?levels=3..3".into(), StatusCode::RANGE_NOT_SATISFIABLE),
        ("/api/spectrogram?levels=x".into(), StatusCode::BAD_REQUEST),
        (format!("/api/spectrogram?from={start}&to={start}"), StatusCode::RANGE_NOT_SATISFIABLE),
        (format!("/api/level/1/video?from={}&to={start}", start + 10), StatusCode::RANGE_NOT_SATISFIABLE),
        ("/api/level/1/video?from=0&to=1000".into(), StatusCode::RANGE_NOT_SATISFIABLE),
        ("/api/level/1/day/2024-03-13/video".into(), StatusCode::NOT_FOUND),
        ("/api/level/1/day/10-03-2024/video".into(), StatusCode::NOT_FOUND),
        (format!("/api/level/{}/day/2024-03-10/video", depth + 1), StatusCode::NOT_FOUND),
        ("/api/nothing".into(), StatusCode::NOT_FOUND),
    ];
    for (uri, status) in cases {
        let r = get(&app, &uri).await;
        assert_eq!(r.status, status, "{uri}: {}", String::from_utf8_lossy(&r.body));
        if r.status != StatusCode::BAD_REQUEST || !uri.contains("levels=x") {
            assert!(r.json()["error"].is_string(), "{uri}");
        }
    }
}

/// Display bytes of slots `range` as the `cat` encoder writes them.
fn expected_video(root: &Path, plane: Plane, level: usize, range: std::ops::Range<usize>) -> Vec<u8> {
    let store = chronopyr::Store::open(root).unwrap();
    let shape = store.manifest().shape;
    range
        .flat_map(|s| display_bytes(shape, plane.kind(), &store.read_frame(plane, level, s).unwrap()))
        .collect()
}

#[tokio::test]
async fn videos_support_range_requests() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let grid = &state.store.manifest().gaussian[2];
    let from = grid.slot_to_time(10).unwrap();
    let to = grid.slot_to_time(50).unwrap();
    let uri = format!("/api/level/2/video?from={from}&to={to}");
    let full = get(&app, &uri).await;
    assert_eq!(full.status, StatusCode::OK);
    assert_eq!(full.header("content-type"), "video/mp4");
    assert_eq!(full.header("accept-ranges"), "bytes");
    assert_eq!(full.header("x-video-slots"), "10-50");
    assert_eq!(full.body, expected_video(three_day_root(), Plane::Gaussian, 2, 10..50));

    let part = send(&app, Request::get(&uri).header(header::RANGE, "bytes=100-199").body(Body::empty()).unwrap()).await;
    assert_eq!(part.status, StatusCode::PARTIAL_CONTENT);
    assert_eq!(part.header("content-range"), format!("bytes 100-199/{}", full.body.len()));
    assert_eq!(part.body, &full.body[100..200]);

    let past = format!("bytes={}-", full.body.len() + 10);
    let bad = send(&app, Request::get(&uri).header(header::RANGE, past).body(Body::empty()).unwrap()).await;
    assert_eq!(bad.status, StatusCode::RANGE_NOT_SATISFIABLE);

    let lap = get(&app, &format!("/api/level/2/video?from={from}&to={to}&kind=laplacian")).await;
    let lgrid = &state.store.manifest().laplacian[1];
    let slots = lgrid.slots_in(from, to);
    assert_eq!(lap.body, expected_video(three_day_root(), Plane::Laplacian, 2, slots));
    assert_eq!(state.videos.encodes(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn day_videos_are_encoded_once() {
    let cache = tempfile::tempdir().unwrap();
    let (state, app) = app(three_day_root(), cache.path());
    let mut tasks = Vec::new();
    for _ in 0..20 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move { get(&app, "/api/level/1/day/2024-03-12/video").await }));
    }
    let mut bodies = Vec::new();
    for t in tasks {
        let r = t.await.unwrap();
        assert_eq!(r.status, StatusCode::OK);
        bodies.push(r.body);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(state.videos.encodes(), 1);
    let grid = &state.store.manifest().gaussian[1];
    let from = midnight_ns(day0()) + 2 * NANOS_PER_DAY as i64;
    let slots = grid.slots_in(from, from + NANOS_PER_DAY as i64);
    assert_eq!(slots.len() as u64, NANOS_PER_DAY / grid.period.as_nanos().unwrap());
    assert_eq!(bodies[0], expected_video(three_day_root(), Plane::Gaussian, 1, slots));

    // A new server over the same cache reuses the file.
    let (again, app) = self::app(three_day_root(), cache.path());
    assert_eq!(get(&app, "/api/level/1/day/2024-03-12/video").await.body, bodies[0]);
    assert_eq!(again.videos.encodes(), 0);
    let names: Vec<PathBuf> = std::fs::read_dir(cache.path().join("day")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(names.len(), 1, "{names:?}");
}

#[tokio::test]
async fn encoder_failure_is_reported() {
    let cache = tempfile::tempdir().unwrap();
    let mut c = config(three_day_root(), cache.path());
    c.encoder = Some("exit 3".into());
    let app = router(AppState::open(c).unwrap());
    let r = get(&app, "/api/level/4/day/2024-03-10/video").await;
    assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR);
    let body = r.json();
    assert_eq!(body["error"], "encoder");
    assert!(body["message"].as_str().unwrap().contains("CHRONOPYR_ENCODER"));
}

fn mixed_uris(root: &Path) -> Vec<String> {
    let m = chronopyr::Store::open(root).unwrap().manifest().clone();
    let start = midnight_ns(day0());
    let mut uris = Vec::new();
    for i in 0..100usize {
        let level = i % (m.depth() + 1);
        let uri = match i % 7 {
            0 => "/api/manifest".to_string(),
            1 => {
                let a = 1 + i % m.depth();
                let from = start + (i as i64) * 3_600_000_000_000;
                format!("/api/spectrogram?levels={a}..={}&from={from}&to={}", m.depth(), from + 7 * 3_600_000_000_000)
            }
            2 => format!("/api/level/{level}/frame/{}/thumb.png", i % m.gaussian[level].count),
            3 if level > 0 => format!("/api/level/{level}/frame/{}/thumb.png?kind=laplacian", i % m.laplacian[level - 1].count),
            4 if level < 4 => {
                let day = 10 + i % 3;
                format!("/api/level/{level}/day/2024-03-{day}/video")
            }
            5 => {
                let g = &m.gaussian[level % 4];
                let a = g.slot_to_time((i * 3) % g.count).unwrap();
                format!("/api/level/{}/video?from={a}&to={}", level % 4, a + 6 * 3_600_000_000_000)
            }
            _ => format!("/api/level/{}/frame/0/thumb.png", m.depth() + i),
        };
        uris.push(uri);
    }
    uris
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_requests_match_serial_ones() {
    let uris = mixed_uris(three_day_root());
    let serial_cache = tempfile::tempdir().unwrap();
    let (_, serial_app) = app(three_day_root(), serial_cache.path());
    let mut serial = Vec::new();
    for uri in &uris {
        serial.push(get(&serial_app, uri).await);
    }
    assert!(serial.iter().any(|r| r.status == StatusCode::OK));
    assert!(serial.iter().any(|r| r.status == StatusCode::NOT_FOUND));

    let cache = tempfile::tempdir().unwrap();
    let (_, app) = app(three_day_root(), cache.path());
    let tasks: Vec<_> = uris
        .iter()
        .cloned()
        .map(|uri| {
            let app = app.clone();
            tokio::spawn(async move { get(&app, &uri).await })
        })
        .collect();
    for ((uri, want), task) in uris.iter().zip(&serial).zip(tasks) {
        let got = task.await.unwrap();
        assert_eq!(got.status, want.status, "{uri}");
        assert_eq!(got.headers, want.headers, "{uri}");
        assert!(got.body == want.body, "{uri}: bodies differ");
    }
}

/// Relative path → bytes of every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in snapshot(from) {
        let p = to.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }
}

#[tokio::test]
async fn requests_never_modify_the_root() {
    let root = tempfile::tempdir().unwrap();
    copy_tree(three_day_root(), root.path());
    let before = snapshot(root.path());
    let cache = tempfile::tempdir().unwrap();
    let (_, app) = app(root.path(), cache.path());
    for uri in mixed_uris(root.path()) {
        get(&app, &uri).await;
    }
    assert_eq!(snapshot(root.path()), before);

    // With the default cache location only `cache/` appears.
    let mut c = ServeConfig::new(root.path());
    c.encoder = Some(ENCODER.into());
    let app = router(AppState::open(c).unwrap());
    for uri in mixed_uris(root.path()) {
        get(&app, &uri).await;
    }
    let after = snapshot(root.path());
    let outside: BTreeMap<_, _> = after.into_iter().filter(|(p, _)| !p.starts_with("cache")).collect();
    assert_eq!(outside, before);
    assert!(root.path().join("cache/day").is_dir());
}

#[tokio::test]
async fn static_bundle_and_cors() {
    let bundle = tempfile::tempdir().unwrap();
    std::fs::write(bundle.path().join("index.html"), "<h1>explorer</h1>").unwrap();
    std::fs::write(bundle.path().join("app.js"), "console.log(1)").unwrap();
    let cache = tempfile::tempdir().unwrap();
    let mut c = config(three_day_root(), cache.path());
    c.static_dir = Some(bundle.path().to_path_buf());
    c.cors_origin = Some("http://localhost:5173".into());
    let app = router(AppState::open(c).unwrap());
    assert_eq!(get(&app, "/").await.body, b"<h1>explorer</h1>");
    assert_eq!(get(&app, "/app.js").await.body, b"console.log(1)");
    assert_eq!(get(&app, "/api/unknown").await.json()["error"], "not-found");

    let r = send(
        &app,
        Request::get("/api/level/1/frame/0/thumb.png")
            .header(header::ORIGIN, "http://localhost:5173")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(r.header("access-control-allow-origin"), "http://localhost:5173");
    assert!(r.header("access-control-expose-headers").contains("x-frame-time"));

    let (_, plain) = self::app(three_day_root(), cache.path());
    let home = get(&plain, "/").await;
    assert_eq!(home.status, StatusCode::OK);
    assert!(String::from_utf8_lossy(&home.body).contains("/api"));
}

#[test]
fn open_requires_a_manifest() {
    let empty = tempfile::tempdir().unwrap();
    let err = AppState::open(ServeConfig::new(empty.path())).err().unwrap();
    assert_eq!(err.kind(), "io");
    assert_eq!(ServeConfig::new("/data/p").cache_dir(), Path::new("/data/p/cache"));
}

#[tokio::test]
async fn serves_over_tcp() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let cache = tempfile::tempdir().unwrap();
    let state = AppState::open(config(three_day_root(), cache.path())).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(chronopyr_server::serve_on(listener, state));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /api/manifest HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).await.unwrap();
    assert!(text.starts_with("HTTP/1.1 200 OK"), "{text}");
    let body = text.split("\r\n\r\n").nth(1).unwrap();
    let s: ManifestSummary = serde_json::from_str(body).unwrap();
    assert_eq!(s, summary(three_day_root()));
}
