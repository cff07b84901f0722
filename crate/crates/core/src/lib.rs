//! Unsupervised domain adaptation guided by frozen CLIP embeddings.
//!
//! A small MLP is trained on labeled source embeddings while two divergence
//! losses pull its predictions toward CLIP zero-shot distributions: an
//! absolute KL term per domain and a relative term that aligns the
//! source-minus-target difference of the model with that of CLIP under
//! domain-averaged prompts. Target pseudo labels come from CLIP-calibrated
//! feature centroids, refreshed every epoch.

// `!(x > 0.0)` rejects NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod error;
pub mod guidance;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod prompt_bank;
pub mod pseudo_label;
pub mod trainer;

pub use dataio::{EmbeddingDataset, SynthConfig};
pub use error::{Error, Result};
pub use guidance::{GuidanceCache, GuidanceDistribution};
pub use losses::{KlDirection, LossValues, LossWeights};
pub use model::{Activation, UdaModel};
pub use numerics::{Mat, ProbVector};
pub use prompt_bank::{PromptBank, PromptSet};
pub use trainer::{evaluate, train, RunMetrics, TrainingConfig};
