//! Single-source domain generalization plugins: transformation search
//! (RSDA), relative rotations (RR) and self-challenging masking (SC).

mod plugin;
mod rotation;
mod rsda;
mod self_challenging;
mod transforms;

pub use plugin::{DgConfig, DgMethod, DgPlugin};
pub use rotation::{rotate90, rr_aux_loss, rr_build_batch, RotationHead, RrConfig};
pub use rsda::{evolve_population, rsda_augment_batch, rsda_evolve, RsdaConfig, TransformPool};
pub use self_challenging::{feature_mask, quantile_threshold, sc_mask, MaskedBatch, ScConfig, ScoreFn};
pub use transforms::{random_augment, BasicTransform, ComposedTransform, TransformKind, MAX_CHAIN};
