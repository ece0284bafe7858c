mod batch;
mod cache;
mod patches;
mod ring;
mod trace;

pub use batch::{kept_rows, pad_or_truncate, LengthPolicy, PaddedBatch, PaddedItem, L_MAX_MATCH, L_MAX_SEARCH};
pub use cache::{read_cache, write_cache, write_cache_to, EncodedCache, CACHE_VERSION};
pub use patches::{
    crop_texture_patches, encode_contour_patches, ContourMode, ContourPatchSet, TexturePatchSet,
};
pub use ring::{build_ring_graph, RingGraph, DEFAULT_RING_K};
pub use trace::{outer_boundary_pixels, trace_contour};
