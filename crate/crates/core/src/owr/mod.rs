//! Open-world recognition: NNO, DeepNNO and B-DOC.

mod checkpoint;
mod class_model;
mod config;
mod exemplars;
mod losses;
mod model;
mod scores;
mod thresholds;

pub use checkpoint::{latest_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use class_model::ClassModel;
pub use config::{MethodConfig, SpreadPooling, Variant};
pub use exemplars::{select_exemplars, ExemplarMemory};
pub use losses::{
    bce_loss, bdoc_scores, cross_entropy, deepnno_scores, distillation_loss, label_indices, ncm_logits, one_hot,
    snnl_loss, BCE_EPS,
};
pub use model::{model_input, OwrModel, StepReport, MIN_SPREAD};
pub use scores::{bdoc_classify, classify, deepnno_classify, nno_classify, Classification, Prediction};
pub use thresholds::{
    bdoc_learn_thresholds, estimate_nno_threshold, heldout_harmonic, threshold_grid, ClassScores, HeldOutKnown,
    ThresholdTracker,
};
