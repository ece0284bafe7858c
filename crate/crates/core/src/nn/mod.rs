//! Differentiable feature stack, losses, and training.

pub mod gradcheck;
mod graph;
pub mod layers;
mod model;
mod optim;
mod params;
mod tensor;
mod train;

pub use graph::{dual_softmax_factors, focal_value, nce_batch_is_valid, sigmoid, Graph, Var, PROB_CLAMP};
pub use model::{
    backbone_forward, init_backbone, init_search, input_from_patches, matching_loss, prepare_input, search_forward, search_rows,
    BackboneVars, FragmentInput, MatchingFeatures, Model, ModelConfig,
};
pub use optim::{Adam, CosineSchedule};
pub use params::{Binding, ParamStore, CHECKPOINT_VERSION};
pub use tensor::{gemm, Tensor};
pub use train::{
    embed_inputs, frozen_features, fused_features, gt_matrix, matching_batch_gradient, search_batch_gradient,
    train_matching, train_searching, MatchingSample, SearchTrainReport, TrainReport, DIVERGENCE_PATIENCE,
};
