//! Synthetic multi-domain benchmark, domain transforms, incremental
//! schedules, validation splits, and dataset files.

mod benchmark;
mod dataset;
mod domain;
pub mod io;
mod schedule;

pub use benchmark::{generate_benchmark, BenchmarkParams};
pub use dataset::{to_matrix, Dataset, ImageShape, Sample};
pub use domain::{apply_domain, default_domains, shift_dataset, DomainSpec};
pub use schedule::{build_schedule, build_validation_splits, EpisodeSchedule, SplitTrial};

pub(crate) use benchmark::{hsv_to_rgb, rgb_to_hsv};
pub(crate) use domain::bilinear;
