//! Chunked on-disk pyramids, level-0 ingestion and media export.

mod build;
mod export;
mod ingest;
mod layout;

pub use build::{build_store, schedule_for_grid, StoreBuildOptions};
pub use export::{
    display_bytes, encode_png, encoder_command, encoder_template, export_thumbnail, export_video, thumbnail_size,
    DEFAULT_ENCODER, DEFAULT_THUMB_EDGE, ENCODER_ENV,
};
pub use ingest::{image_to_planar, ingest, snap, write_input, IngestReport, IngestSource, IngestSpec, TimestampPattern};
pub use layout::{
    checksum_hex, chunk_rel_path, read_pyramid, write_manifest, write_pyramid, ChunkWriter, LevelSource, Plane, Store,
    StoreLayout, StoreSink, MANIFEST_FILE,
};
