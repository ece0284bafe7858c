//! End-to-end pipeline over an on-disk dataset and run directory.

mod commands;
mod config;
mod dataset;
mod render;

pub use commands::{
    evaluate, generate, layout, load_model, matching_samples, prepare_inputs, run_match, search, train,
    CandidatesFile, EvalSummary, GenerateSummary, MatchReport, MatchSummary, PairMatch, PairSource, RankTableFile,
    SearchSummary, TrainSummary, MAX_REPORTED_CORRESPONDENCES,
};
pub use config::{stream, sub_seed, Paths, RunConfig, SyntheticImages};
pub use dataset::{
    assign_splits, encode_png, fragment_rgba, split_counts_for, Dataset, DatasetManifest, FragmentEntry, ImageEntry,
    PairEntry, Split, SplitCounts, FORMAT_VERSION, FRAGMENT_DIR, MANIFEST_FILE, SPLIT_RATIO,
};
pub use render::{render_overlay, MAX_DRAWN_LINES};
