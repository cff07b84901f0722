//! Datasets, on-disk formats and the synthetic two-domain benchmark.
//!
//! A dataset, prompt bank or checkpoint is a directory holding `manifest.json`
//! and headerless little-endian blobs. See [`format`] for the manifest fields.

pub mod format;
pub mod synth;

pub use format::{
    read_checkpoint, read_dataset, read_manifest, read_prompts, write_checkpoint, write_dataset, write_prompts,
    BlobSpec, DType, Manifest, ManifestKind, FORMAT_VERSION, MANIFEST_FILE,
};
pub use synth::{synth_generate, SynthConfig, SynthOutput};

use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::prompt_bank::check_class_names;

/// Model inputs and frozen CLIP image embeddings for one domain.
///
/// `labels` is training supervision (source). `eval_labels` is ground truth
/// that only evaluation may read (target); the trainer never touches it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub domain_name: String,
    pub class_names: Vec<String>,
    pub inputs: Mat,
    pub clip_embs: Option<Mat>,
    pub labels: Option<Vec<usize>>,
    pub eval_labels: Option<Vec<usize>>,
}

impl EmbeddingDataset {
    pub fn new(
        domain_name: impl Into<String>,
        class_names: Vec<String>,
        inputs: Mat,
        clip_embs: Option<Mat>,
        labels: Option<Vec<usize>>,
        eval_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = EmbeddingDataset {
            domain_name: domain_name.into(),
            class_names,
            inputs,
            clip_embs,
            labels,
            eval_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        check_class_names(&self.class_names).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let n = self.inputs.nrows();
        if let Some(clip) = &self.clip_embs {
            if clip.nrows() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} input rows but {} CLIP rows",
                    n,
                    clip.nrows()
                )));
            }
        }
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("inputs contain non-finite values".into()));
        }
        let k = self.class_names.len();
        for (what, labels) in [("labels", &self.labels), ("eval_labels", &self.eval_labels)] {
            if let Some(labels) = labels {
                if labels.len() != n {
                    return Err(Error::InvalidDataset(format!(
                        "{} {what} for {n} samples",
                        labels.len()
                    )));
                }
                if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
                    return Err(Error::InvalidLabel {
                        row,
                        label,
                        num_classes: k,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim_input(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn dim_clip(&self) -> Option<usize> {
        self.clip_embs.as_ref().map(|m| m.ncols())
    }

    pub fn clip(&self) -> Result<&Mat> {
        self.clip_embs
            .as_ref()
            .ok_or_else(|| Error::InvalidDataset(format!("dataset `{}` has no CLIP embeddings", self.domain_name)))
    }

    /// Ground truth for scoring: training labels if present, else evaluation labels.
    pub fn scoring_labels(&self) -> Option<&[usize]> {
        self.labels.as_deref().or(self.eval_labels.as_deref())
    }
}
