//! Desk-scale stand-in for the generative backbone: procedural box-world
//! scenes, a patch descriptor, a small convolutional denoiser and its trainer.

mod ablate;
mod descriptor;
mod io;
mod model;
mod scene;
mod train;

pub use ablate::{ablate, best_chunk, eval_chunk, view_order, AblationRow, AblationTable, ChunkEval, EvalProtocol, Variant};
pub use descriptor::{toy_descriptor, DESCRIPTOR_DIM, PATCH};
pub use io::{load_model, save_model};
pub use model::{
    neighbor_table, time_features, to_channel_major, to_voxel_major, Block, DenoiserConfig, ForwardCache, ForwardInput,
    ToyDenoiser, MAX_BLOCKS, TAPS, TIME_FEATURES,
};
pub use scene::{gen_scene, visible_fraction, ToyScene, TOY_CAMERAS, TOY_IMAGE, TOY_LATENT, TOY_RESOLUTION};
pub use train::{
    chunk_latent, draw_example, example_loss, example_loss_grad, gradient_check, lift_chunk_views, probe_example,
    random_point, train, write_loss_csv, Example, GradCheck, Optimizer, ToyModel, TrainConfig, TrainOutput,
};
