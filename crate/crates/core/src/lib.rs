//! Handcrafted prostate-MRI features and outcome modelling.
//!
//! The pipeline runs from labelled masks (prostate / fascia) through radial
//! fascia-thickness and volume features, clinical record handling, tabular,
//! fusion and multitask classifiers, stratified nested cross-validation and
//! Shapley attribution. A synthetic phantom generator provides cohorts with
//! known anatomy and a planted outcome model.

pub mod eval;
pub mod explain;
pub mod features;
pub mod io;
pub mod model;
pub mod phantom;
pub mod preprocess;
pub mod seed;
pub mod volume;

pub use volume::{Label, MaskVolume, Slice2D, Volume, Volume3D, VolumeError};
