//! Hypersphere-latent linear shape models: a mean mesh plus an orthonormal
//! basis driven by a unit identity vector and a scalar scale.
//!
//! The crate covers mesh I/O and error measures, the model and its binary
//! container, the stage-one training objective with analytic gradients,
//! Adam-based fitting, clustering separability metrics and a seeded synthetic
//! corpus generator.

pub mod corpus;
pub mod error;
pub mod fit;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;

pub use corpus::LabeledCorpus;
pub use error::{Result, SfmError};
pub use fit::{fit_corpus, fit_mesh, fit_meshes, FitConfig, FitResult};
pub use mesh::{Mesh, NeighborGraph, SymmetryMap};
pub use metrics::{
    build_report, calinski_harabasz, silhouette, silhouette_with, Distance, LabeledVectors, ReportOptions,
    SeparabilityReport, SilhouetteForm, Space,
};
pub use model::{interpolate_codes, project, reconstruct, ShapeCode, SphereFaceModel};
pub use synth::{generate, oracle_report, SynthConfig, SynthTruth};
pub use train::{train_stage1, TrainConfig, TrainOutput, TrainReport};
