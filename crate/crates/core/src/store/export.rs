//! Video and thumbnail export.
//!
//! Videos are produced by piping interleaved 8-bit frames into an external
//! encoder started through `sh -c`. The command comes from a template with
//! `{width}`, `{height}`, `{fps}`, `{pix_fmt}` and `{output}` placeholders;
//! `CHRONOPYR_ENCODER` replaces the default ffmpeg template.

use std::io::{Cursor, Write};
use std::ops::Range;
use std::path::Path;
use std::process::{Command, Stdio};

use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::frame::{interleave_u8, FrameSource, SequenceKind, Shape};
use crate::spectrogram::{frame_image, laplacian_display, render_laplacian};

pub const ENCODER_ENV: &str = "CHRONOPYR_ENCODER";

pub const DEFAULT_ENCODER: &str = "ffmpeg -hide_banner -loglevel error -y -f rawvideo -pix_fmt {pix_fmt} \
-s {width}x{height} -r {fps} -i - -an -c:v libx264 -pix_fmt yuv420p -movflags +faststart {output}";

pub const DEFAULT_THUMB_EDGE: u32 = 256;

/// The template in effect: `CHRONOPYR_ENCODER` if set, else the default.
pub fn encoder_template() -> String {
    std::env::var(ENCODER_ENV)
        .ok()
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| DEFAULT_ENCODER.to_string())
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

pub fn encoder_command(template: &str, shape: Shape, fps: f64, output: &Path) -> String {
    let pix_fmt = if shape.channels == 1 { "gray" } else { "rgb24" };
    template
        .replace("{width}", &shape.width.to_string())
        .replace("{height}", &shape.height.to_string())
        .replace("{fps}", &fps.to_string())
        .replace("{pix_fmt}", pix_fmt)
        .replace("{output}", &shell_quote(&output.to_string_lossy()))
}

/// Interleaved display bytes of one frame: Gaussian values as they are,
/// Laplacian values re-centred on mid-gray.
pub fn display_bytes(shape: Shape, kind: SequenceKind, values: &[f32]) -> Vec<u8> {
    match kind {
        SequenceKind::Laplacian => {
            let shifted: Vec<f32> = values.iter().map(|&v| laplacian_display(v)).collect();
            interleave_u8(shape, &shifted)
        }
        _ => interleave_u8(shape, values),
    }
}

/// Temporary sibling of `path` keeping its extension, which encoders use
/// to choose the container.
fn partial_path(path: &Path) -> std::path::PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".partial-{}-{name}", std::process::id()))
}

/// Encodes slots `range` of `source` at `fps` into `path`.
pub fn export_video(
    source: &dyn FrameSource,
    kind: SequenceKind,
    range: Range<usize>,
    fps: f64,
    path: &Path,
    template: Option<&str>,
) -> Result<()> {
    if range.is_empty() {
        return Err(Error::EmptySequence);
    }
    if range.end > source.len() {
        return Err(Error::OutOfRange {
            what: "slot",
            index: range.end,
            len: source.len(),
        });
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps {fps} must be positive")));
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let shape = source.shape();
    let template = template.map(str::to_string).unwrap_or_else(encoder_template);
    let tmp = partial_path(path);
    let command = encoder_command(&template, shape, fps, &tmp);
    let fail = |detail: String| Error::Encoder {
        command: command.clone(),
        detail: format!("{detail}; install ffmpeg or set {ENCODER_ENV} to a working command template"),
    };

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("cannot start shell: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut buf = vec![0.0f32; shape.len()];
    let mut write_err = None;
    for slot in range {
        if let Err(e) = source.read_frame(slot, &mut buf) {
            drop(stdin);
            let _ = child.wait();
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
        if let Err(e) = stdin.write_all(&display_bytes(shape, kind, &buf)) {
            write_err = Some(e);
            break;
        }
    }
    drop(stdin);
    let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
    if !out.status.success() || write_err.is_some() {
        let _ = std::fs::remove_file(&tmp);
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
        let mut detail = format!("{}", out.status);
        if !stderr.is_empty() {
            detail.push_str(&format!(": {stderr}"));
        } else if let Some(e) = write_err {
            detail.push_str(&format!(": {e}"));
        }
        return Err(fail(detail));
    }
    if !tmp.exists() {
        return Err(fail("encoder exited successfully but wrote no output".into()));
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Dimensions scaled so the longer edge is at most `max_edge`.
pub fn thumbnail_size(width: u32, height: u32, max_edge: u32) -> (u32, u32) {
    let long = width.max(height);
    if long <= max_edge {
        return (width, height);
    }
    let scale = |v: u32| ((v as u64 * max_edge as u64 + long as u64 / 2) / long as u64).max(1) as u32;
    (scale(width), scale(height))
}

/// A displayable image of one frame, downscaled to `max_edge`.
pub fn export_thumbnail(shape: Shape, kind: SequenceKind, values: &[f32], max_edge: u32) -> Result<DynamicImage> {
    if max_edge == 0 {
        return Err(Error::InvalidArgument("thumbnail edge must be positive".into()));
    }
    let img = match kind {
        SequenceKind::Laplacian => render_laplacian(shape, values)?,
        _ => frame_image(shape, values)?,
    };
    let (w, h) = thumbnail_size(shape.width, shape.height, max_edge);
    Ok(if (w, h) == (shape.width, shape.height) {
        img
    } else {
        img.resize_exact(w, h, FilterType::Triangle)
    })
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    Ok(bytes)
}
