//! Segmentation from a scalar field: 1-D Gaussian-mixture soft clustering
//! of faces, then a k-way graph cut over the face dual graph by
//! alpha-expansion, a connectivity pass, and optional boundary smoothing.

mod dual;
mod expansion;
mod gmm;
mod maxflow;
mod segmentation;

pub use dual::{build_dual_graph, edge_weight, DualGraph};
pub use expansion::{alpha_expansion, labeling_energy, ExpansionOutcome};
pub use gmm::{argmax, fit_gmm, soft_assign, Gmm1D, GmmFit, VARIANCE_FLOOR};
pub use maxflow::{MaxFlow, Side};
pub use segmentation::{
    enforce_connectivity, kway_cut, partition_field, part_colors, segmentation_ply, smooth_boundaries, CutReport,
    ParentLink, PartitionOutcome, PartitionParams, Segmentation, SMOOTHING_ANCHOR,
};
