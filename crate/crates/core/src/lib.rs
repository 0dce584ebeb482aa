//! Config-driven platform that trains an ensemble of learners on site-day
//! pollution data and replays the exact preprocessing + model chain to
//! predict concentrations at unmonitored locations.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod ingest;
pub mod interpolate;
pub mod learners;
mod linalg;
pub mod manifest;
pub mod pipeline;
pub mod preprocess;
pub mod progress;
mod rng;
pub mod synth;
pub mod table;
pub mod two_stage;

pub use config::{
    gen_config, load_config, load_model_config, ModelConfig, ModelId, PipelineConfig,
};
pub use error::{Error, Result};
pub use interpolate::GridSpec;
pub use manifest::RunManifest;
pub use progress::Progress;
pub use table::{SiteDayTable, SiteRecord};
