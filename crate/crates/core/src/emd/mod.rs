//! Encode-Message-Decode graph network predicting normalized ShDF values
//! on Poisson-disk sample graphs.

mod graph;
mod infer;
mod model;
mod nn;
mod train;

pub use graph::{build_graph_input, GraphInput, EDGE_FEATURES, NODE_FEATURES};
pub use infer::{infer_field, samples_to_faces};
pub use model::{EmdModel, ForwardTape, ModelConfig, RoundOneProbe};
pub use nn::{sigmoid, Activation, Dense, Mlp};
pub use train::{
    backward, dataset_loss, history_csv, loss, loss_gradient, loss_with, train, train_with, LossKind, LossRecord,
    TrainReport, TrainSchedule,
};
