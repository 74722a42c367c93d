//! Facies grids and the data-side tooling around them: codebooks, the
//! ensemble container, well observations, object-based training-image
//! synthesis and ensemble statistics.

pub mod ensemble;
pub mod error;
pub mod grid;
pub mod latent;
pub mod obm;
pub mod raster;
pub mod stats;
pub mod wells;

pub use ensemble::LabeledEnsemble;
pub use error::{FaciesError, Result};
pub use grid::{
    decode_generator_output, encode_planes, indicator_transform, one_hot_encode, FaciesCodebook,
    FaciesEntry, FaciesGrid, SoftPlanes,
};
pub use latent::LatentInput;
pub use wells::{WellObservation, WellSet};
