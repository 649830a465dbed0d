//! Maximum-likelihood joint detection, association and tracking of
//! constant-velocity targets in heavy clutter, by dynamic logic: an
//! expectation-maximization style iteration that starts from vague models
//! and sharpens them as associations become crisp.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod track_manager;

pub use engine::{run_dl, CMode, DLConfig, DlOutput, IterationTrace, Threshold};
pub use error::{Dim, Error, Result};
pub use evaluation::{MatchCriteria, RocPoint};
pub use model::{
    measurement_volume, validate_batch, AssociationMatrix, Batch, HypothesisSet, Interval,
    Measurement, MeasurementBounds, Sigmas, Status, TrackHypothesis, TrackParams,
};
pub use scenario::{ScenarioConfig, ScrReport};
pub use track_manager::DetectionReport;
