//! Density clustering of frame indices and Dirichlet-process mixtures of
//! feature vectors.

mod dbscan;
mod dpgmm;

pub use dbscan::{
    cluster_frames, cluster_representatives, dbscan_1d, DbscanConfig, DbscanResult, PointLabel, PointRole,
};
pub use dpgmm::{
    fit_dpgmm, predict_labels, ComponentPosterior, DpGmmConfig, DpGmmModel, ACTIVE_WEIGHT, MODEL_VERSION,
    VARIANCE_FLOOR,
};
