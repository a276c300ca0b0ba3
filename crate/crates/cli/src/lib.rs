//! The `chronopyr` command.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
//! Runtime errors print one JSON line to stderr:
//! `{"error":"<kind>","message":"<text>"}`.

use std::ffi::OsString;
use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use chronopyr::pyramid::LaplacianEncoding;
use chronopyr::spectrogram::{export_heatmap, HeatmapOptions, NormKind};
use chronopyr::store::{
    build_store, export_video, ingest, write_input, IngestSource, IngestSpec, Plane, StoreBuildOptions, StoreLayout,
};
use chronopyr::time::{format_time, parse_time};
use chronopyr::{
    compute_spectrogram, generate, reconstruct, DetailMask, FrameSource, Period, SceneSpec, SequenceKind, Shape,
    SpectrogramOptions, Store,
};

#[derive(Debug, Parser)]
#[command(name = "chronopyr", version, about = "Temporal Laplacian pyramids and video spectrograms")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read frames from a source into the level-0 store of a pyramid root.
    Ingest(IngestArgs),
    /// Build the pyramid levels from the stored level 0.
    Build(BuildArgs),
    /// Rebuild a level from coarser levels with selected detail bands.
    Reconstruct(ReconstructArgs),
    /// Compute the activity spectrogram and export it.
    Spectrogram(SpectrogramArgs),
    /// Export a plain every-m-th-frame time-lapse of level 0.
    Timelapse(TimelapseArgs),
    /// Generate a synthetic scene into a pyramid root.
    Synth(SynthArgs),
    /// Serve the HTTP API over a pyramid root.
    Serve(ServeArgs),
    /// Print a summary of a pyramid root.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
struct RootArg {
    /// Pyramid root directory.
    #[arg(long)]
    root: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["dir", "raw", "list", "spec"])))]
struct IngestArgs {
    #[command(flatten)]
    root: RootArg,
    /// Directory of images whose names carry their capture time.
    #[arg(long, requires = "pattern")]
    dir: Option<PathBuf>,
    /// File name pattern with YYYY, MM, DD, HH, MM, SS and mmm fields, e.g. `cam-YYYYMMDD-HHMMSS.jpg`.
    #[arg(long)]
    pattern: Option<String>,
    /// Raw interleaved 8-bit frames (`-` for stdin); needs --size.
    #[arg(long, requires = "size")]
    raw: Option<PathBuf>,
    /// Text file of `<time>\t<image path>` lines.
    #[arg(long)]
    list: Option<PathBuf>,
    /// Ingest spec as JSON; other source and sampling flags are ignored.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Frame period: 30fps, 1min, 1/30s, 500ms, ...
    #[arg(long, required_unless_present = "spec")]
    period: Option<Period>,
    /// Time of slot 0 (RFC 3339 or integer ns); defaults to the first frame.
    #[arg(long, value_parser = parse_instant)]
    origin: Option<i64>,
    /// Largest accepted distance to a slot, as a fraction of the period.
    #[arg(long, default_value_t = 0.5)]
    tolerance: f64,
    /// Frame size WIDTHxHEIGHT; images of other sizes are resized.
    #[arg(long, value_parser = parse_size)]
    size: Option<(u32, u32)>,
    /// Store a single luma channel.
    #[arg(long)]
    gray: bool,
    /// Frames per chunk file.
    #[arg(long, default_value_t = 1024)]
    chunk_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Encoding {
    F32,
    I16,
}

impl From<Encoding> for LaplacianEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::F32 => LaplacianEncoding::F32,
            Encoding::I16 => LaplacianEncoding::I16,
        }
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    root: RootArg,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    /// Build each UTC day independently up to the day level, then merge.
    #[arg(long)]
    sharded: bool,
    /// Explicit comma-separated strides (2, 3 or 5) instead of the calendar schedule.
    #[arg(long, value_delimiter = ',')]
    strides: Option<Vec<u8>>,
    /// Storage type of Laplacian samples.
    #[arg(long, value_enum, default_value = "f32")]
    encoding: Encoding,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    root: RootArg,
    /// Level to reconstruct.
    #[arg(long, default_value_t = 0)]
    level: usize,
    /// Detail bands to add: `all`, `none`, or one 0/1 per level starting at level 1.
    #[arg(long, default_value = "all")]
    mask: String,
    /// Output video file.
    #[arg(long)]
    out: PathBuf,
    /// Playback rate of the output.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Norm {
    L1,
    L2,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("output").required(true).multiple(true).args(["png", "json"])))]
struct SpectrogramArgs {
    #[command(flatten)]
    root: RootArg,
    /// Heatmap image.
    #[arg(long)]
    png: Option<PathBuf>,
    /// Norm sidecar (`spectrogram.json` format).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Levels drawn in the heatmap: `a..b` (half-open) or `a..=b`.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<Range<usize>>,
    /// Start of the heatmap window (RFC 3339 or integer ns).
    #[arg(long, value_parser = parse_instant)]
    from: Option<i64>,
    /// End of the heatmap window.
    #[arg(long, value_parser = parse_instant)]
    to: Option<i64>,
    #[arg(long, default_value_t = 1200)]
    width: u32,
    #[arg(long, default_value_t = 12)]
    row_height: u32,
    #[arg(long, value_enum, default_value = "l2")]
    norm: Norm,
    /// Floor of the log display scale.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Normalize colors per level instead of globally.
    #[arg(long)]
    per_level: bool,
}

#[derive(Debug, Args)]
struct TimelapseArgs {
    #[command(flatten)]
    root: RootArg,
    /// Keep every m-th level-0 frame.
    #[arg(long)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Pyramid root receiving the generated level 0.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value_t = 1024)]
    chunk_size: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    root: RootArg,
    #[arg(long, default_value_t = chronopyr_server::DEFAULT_PORT)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Explorer bundle served at `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Video cache directory; `<root>/cache` by default.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Thumbnails kept in memory.
    #[arg(long, default_value_t = chronopyr_server::DEFAULT_THUMB_CACHE)]
    thumb_cache: usize,
    /// Playback rate of encoded level videos.
    #[arg(long, default_value_t = chronopyr_server::DEFAULT_FPS)]
    fps: f64,
    /// Allowed CORS origin; any origin by default.
    #[arg(long)]
    cors_origin: Option<String>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[command(flatten)]
    root: RootArg,
    /// Print the manifest summary as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_instant(s: &str) -> Result<i64, String> {
    parse_time(s).ok_or_else(|| format!("{s:?} is neither RFC 3339 nor integer nanoseconds"))
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let bad = || format!("{s:?} is not WIDTHxHEIGHT");
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: u32 = w.parse().map_err(|_| bad())?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn parse_levels(s: &str) -> Result<Range<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad level range {s:?}"));
    let r = if let Some((a, b)) = s.split_once("..=") {
        num(a)?..num(b)? + 1
    } else if let Some((a, b)) = s.split_once("..") {
        num(a)?..num(b)?
    } else {
        let a = num(s)?;
        a..a + 1
    };
    if r.is_empty() {
        return Err(format!("empty level range {s:?}"));
    }
    Ok(r)
}

/// A runtime failure: a stable kind plus a message.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = serde_json::json!({ "error": self.kind, "message": self.message });
        write!(f, "{line}")
    }
}

impl From<chronopyr::Error> for CliError {
    fn from(e: chronopyr::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn execute(command: Command) -> CliResult {
    match command {
        Command::Ingest(a) => run_ingest(a),
        Command::Build(a) => run_build(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Spectrogram(a) => run_spectrogram(a),
        Command::Timelapse(a) => run_timelapse(a),
        Command::Synth(a) => run_synth(a),
        Command::Serve(a) => run_serve(a),
        Command::Info(a) => run_info(a),
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.as_os_str() == "-" || path.is_file() {
        Ok(())
    } else {
        Err(CliError::new("io", format!("{}: no such file", path.display())))
    }
}

fn open_store(root: &Path) -> CliResult<Store> {
    if !root.is_dir() {
        return Err(CliError::new("io", format!("{}: no such pyramid root", root.display())));
    }
    Ok(Store::open(root)?)
}

fn check_fps(fps: f64) -> CliResult {
    if fps > 0.0 && fps.is_finite() {
        Ok(())
    } else {
        Err(CliError::new("argument", format!("fps {fps} must be positive")))
    }
}

fn ingest_spec(a: &IngestArgs) -> CliResult<IngestSpec> {
    if let Some(path) = &a.spec {
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        let spec: IngestSpec = serde_json::from_str(&text).map_err(|e| CliError::new("json", format!("{}: {e}", path.display())))?;
        return Ok(spec);
    }
    let source = if let Some(dir) = &a.dir {
        if !dir.is_dir() {
            return Err(CliError::new("io", format!("{}: no such directory", dir.display())));
        }
        IngestSource::ImageDirectory {
            dir: dir.clone(),
            pattern: a.pattern.clone().unwrap_or_default(),
        }
    } else if let Some(path) = &a.raw {
        require_file(path)?;
        IngestSource::RawStream { path: path.clone() }
    } else {
        let path = a.list.clone().expect("clap requires a source");
        require_file(&path)?;
        IngestSource::ManifestList { path }
    };
    let mut spec = IngestSpec::new(source, a.period.expect("clap requires a period"));
    spec.origin_ns = a.origin;
    spec.tolerance = a.tolerance;
    spec.grayscale = a.gray;
    if let Some((w, h)) = a.size {
        spec.shape = Some(Shape::new(w, h, if a.gray { 1 } else { 3 })?);
    }
    Ok(spec)
}

fn run_ingest(a: IngestArgs) -> CliResult {
    let spec = ingest_spec(&a)?;
    spec.validate()?;
    if a.chunk_size == 0 {
        return Err(CliError::new("argument", "chunk size must be positive"));
    }
    let layout = StoreLayout {
        chunk_size: a.chunk_size,
        ..Default::default()
    };
    let r = ingest(&spec, &a.root.root, layout)?;
    println!(
        "ingested {} frames of {} into {} slots every {} from {} ({} missing, {} duplicates, {} rejected, {} resized)",
        r.frames,
        r.shape,
        r.grid.count,
        r.grid.period,
        format_time(r.grid.origin_ns),
        r.grid.missing.total(),
        r.duplicates,
        r.rejected,
        r.resized
    );
    Ok(())
}

fn run_build(a: BuildArgs) -> CliResult {
    let store = open_store(&a.root.root)?;
    let workers = match a.workers {
        Some(0) => return Err(CliError::new("argument", "--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let layout = StoreLayout {
        chunk_size: store.manifest().chunk_size,
        laplacian_encoding: a.encoding.into(),
    };
    let opts = StoreBuildOptions {
        workers,
        sharded: a.sharded,
        layout: Some(layout),
        strides: a.strides,
    };
    let m = build_store(&a.root.root, &opts)?;
    let day = m.schedule.day_level.map_or("none".into(), |d| d.to_string());
    let dropped = m.shards.as_ref().map_or(0, |s| s.dropped.len());
    println!(
        "built {} levels ({} .. {}), day level {day}, {} shards, {dropped} dropped days",
        m.depth(),
        m.schedule.labels[0],
        m.schedule.labels[m.depth()],
        m.shards.as_ref().map_or(0, |s| s.bounds.len()),
    );
    Ok(())
}

fn run_reconstruct(a: ReconstructArgs) -> CliResult {
    check_fps(a.fps)?;
    let store = open_store(&a.root.root)?;
    let depth = store.manifest().depth();
    if a.level > depth {
        return Err(CliError::new("range", format!("level {} outside 0..={depth}", a.level)));
    }
    let mask = DetailMask::parse(&a.mask, depth)?;
    let seq = reconstruct(&store, a.level, &mask)?;
    export_video(&seq, SequenceKind::Input, 0..seq.len(), a.fps, &a.out, None)?;
    println!("wrote {} frames of level {} to {}", seq.len(), a.level, a.out.display());
    Ok(())
}

fn run_spectrogram(a: SpectrogramArgs) -> CliResult {
    if !(a.epsilon > 0.0) {
        return Err(CliError::new("argument", "epsilon must be positive"));
    }
    let store = open_store(&a.root.root)?;
    let depth = store.manifest().depth();
    if let Some(r) = &a.levels {
        if r.start == 0 || r.end > depth + 1 {
            return Err(CliError::new("range", format!("levels {r:?} outside 1..={depth}")));
        }
    }
    let options = SpectrogramOptions {
        norm: match a.norm {
            Norm::L1 => NormKind::L1,
            Norm::L2 => NormKind::L2,
        },
        epsilon: a.epsilon,
    };
    let grid = compute_spectrogram(&store, &options)?;
    let heatmap = HeatmapOptions {
        width: a.width,
        row_height: a.row_height,
        levels: a.levels.map(|r| r.start..=r.end - 1),
        from: a.from,
        to: a.to,
        per_level: a.per_level,
    };
    export_heatmap(&grid, &heatmap, a.png.as_deref(), a.json.as_deref())?;
    for path in [&a.png, &a.json].into_iter().flatten() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Every `stride`-th frame of a source.
struct Strided<S> {
    inner: S,
    stride: usize,
}

impl<S: FrameSource> FrameSource for Strided<S> {
    fn shape(&self) -> Shape {
        self.inner.shape()
    }

    fn len(&self) -> usize {
        self.inner.len().div_ceil(self.stride)
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> chronopyr::Result<()> {
        self.inner.read_frame(slot * self.stride, out)
    }
}

fn run_timelapse(a: TimelapseArgs) -> CliResult {
    check_fps(a.fps)?;
    if a.stride == 0 {
        return Err(CliError::new("argument", "--stride must be at least 1"));
    }
    let store = open_store(&a.root.root)?;
    let source = Strided {
        inner: store.source(Plane::Gaussian, 0)?,
        stride: a.stride,
    };
    let n = source.len();
    export_video(&source, SequenceKind::Input, 0..n, a.fps, &a.out, None)?;
    println!("wrote {n} frames (every {}th) to {}", a.stride, a.out.display());
    Ok(())
}

fn run_synth(a: SynthArgs) -> CliResult {
    require_file(&a.spec)?;
    if a.chunk_size == 0 {
        return Err(CliError::new("argument", "chunk size must be positive"));
    }
    let text = std::fs::read_to_string(&a.spec).map_err(|e| CliError::new("io", format!("{}: {e}", a.spec.display())))?;
    let spec = SceneSpec::from_json(&text)?;
    let seq = generate(&spec)?;
    let layout = StoreLayout {
        chunk_size: a.chunk_size,
        ..Default::default()
    };
    write_input(&seq, &a.root, layout)?;
    println!("generated {} frames of {} into {}", seq.len(), seq.shape(), a.root.display());
    Ok(())
}

fn run_serve(a: ServeArgs) -> CliResult {
    check_fps(a.fps)?;
    open_store(&a.root.root)?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(CliError::new("io", format!("{}: no such directory", dir.display())));
        }
    }
    let mut config = chronopyr_server::ServeConfig::new(&a.root.root);
    config.addr = SocketAddr::new(a.bind, a.port);
    config.static_dir = a.static_dir;
    config.cache_dir = a.cache;
    config.thumb_cache = a.thumb_cache;
    config.fps = a.fps;
    config.cors_origin = a.cors_origin;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e.to_string()))?;
    runtime
        .block_on(chronopyr_server::serve(config))
        .map_err(|e| CliError::new("io", e.to_string()))
}

fn run_info(a: InfoArgs) -> CliResult {
    let store = open_store(&a.root.root)?;
    let summary = chronopyr_server::ManifestSummary::of(store.manifest())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(chronopyr::Error::from)?);
        return Ok(());
    }
    let g0 = &summary.levels[0].gaussian;
    println!("root      {}", a.root.root.display());
    println!("shape     {}", summary.shape);
    println!(
        "span      {} .. {} ({} frames, {} missing)",
        format_time(g0.origin_ns),
        format_time(g0.end_ns),
        g0.count,
        g0.missing.total()
    );
    let anchor = |l: Option<usize>| l.map_or("-".to_string(), |l| l.to_string());
    println!(
        "levels    {} (day level {}, year level {})",
        summary.depth,
        anchor(summary.day_level),
        anchor(summary.year_level)
    );
    if !summary.dropped_days.is_empty() {
        println!("dropped   {}", summary.dropped_days.join(", "));
    }
    println!("{:>5}  {:<10} {:>10} {:>10} {:>10}", "level", "label", "gaussian", "laplacian", "available");
    for l in &summary.levels {
        let lap = l.laplacian.as_ref().map_or("-".to_string(), |p| p.count.to_string());
        let ok = (!l.gaussian_stored || store.level_available(Plane::Gaussian, l.level))
            && (l.level == 0 || store.level_available(Plane::Laplacian, l.level));
        println!(
            "{:>5}  {:<10} {:>10} {:>10} {:>10}",
            l.level,
            l.label,
            l.gaussian.count,
            lap,
            if ok { "yes" } else { "no" }
        );
    }
    Ok(())
}
