//! Width-stratified evaluation of binary vessel segmentations.
//!
//! The crate estimates local vessel half-width from an exact Euclidean
//! distance transform of the native-resolution ground truth, splits vessel
//! pixels into thin / medium / thick strata and scores recall inside each
//! stratum. Around that core sit the resize protocol used to derive
//! processed sizes, a model-free decimation audit, the small-sample tests
//! used to compare resolution conditions, synthetic phantoms with known
//! widths, and the report harness driven by the `widthstrat` CLI.

pub mod edt;
pub mod error;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod phantom;
pub mod resample;
pub mod stats;
pub mod stratify;

pub use edt::{euclidean_distance_transform, DistanceMap};
pub use error::{Error, Result};
pub use mask::{binarize, load_manifest, load_mask, BinaryMask, DatasetManifest, ProbabilityMap, Size2D};
pub use metrics::{aggregate, dice, evaluate_image, sensitivity, specificity, stratified_sensitivity, EvalResult};
pub use resample::{condition_sizes, decimation_audit, resize_bilinear, resize_nearest, ConditionSpec};
pub use stats::{spearman, wilcoxon_signed_rank, StatTestResult};
pub use stratify::{stratify, PerStratum, Stratum, StratumLabels, StratumThresholds};
