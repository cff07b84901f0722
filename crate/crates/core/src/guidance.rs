//! Zero-shot class distributions from frozen CLIP embeddings.
//!
//! `p_k(x) = softmax_k(cos(text_k, image(x)) / tau)`. CLIP is frozen, so every
//! distribution is a constant of the data and is computed once per dataset.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, norm, softmax_into, Mat, EPS_NORM};
use crate::prompt_bank::{PromptBank, PromptSet};

/// Default CLIP temperature, the inverse of CLIP's logit scale of 100.
pub const DEFAULT_TAU: f64 = 0.01;

/// Zero-shot probabilities of one prompt set over `N` images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidanceDistribution {
    pub prompt_set: PromptSet,
    pub tau: f64,
    #[serde(serialize_with = "serialize_rows")]
    pub probs: Mat,
}

fn serialize_rows<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.rows() {
        seq.serialize_element(&row.to_vec())?;
    }
    seq.end()
}

impl GuidanceDistribution {
    pub fn compute(prompt_set: PromptSet, image_embs: &Mat, bank: &PromptBank, tau: f64) -> Result<Self> {
        Ok(GuidanceDistribution {
            prompt_set,
            tau,
            probs: zero_shot_probs(image_embs, bank.text(prompt_set), tau)?,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect()
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update(self.prompt_set.name().as_bytes());
        h.update(self.tau.to_le_bytes());
        h.update((self.probs.nrows() as u64).to_le_bytes());
        h.update((self.probs.ncols() as u64).to_le_bytes());
        for v in self.probs.iter() {
            h.update(v.to_le_bytes());
        }
    }
}

/// Cosine similarity of every image row against every text row.
pub fn cosine_table(image_embs: &Mat, text_embs: &Mat) -> Result<Mat> {
    if image_embs.ncols() != text_embs.ncols() {
        return Err(Error::Dimension(format!(
            "image embeddings have width {}, text embeddings {}",
            image_embs.ncols(),
            text_embs.ncols()
        )));
    }
    let text_norms: Vec<f64> = text_embs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let n = norm(row.as_slice().expect("standard layout"));
            if n <= EPS_NORM {
                Err(Error::DegenerateInput(format!("text embedding for class {k} is zero")))
            } else {
                Ok(n)
            }
        })
        .collect::<Result<_>>()?;
    let mut table = Mat::zeros((image_embs.nrows(), text_embs.nrows()));
    for (i, img) in image_embs.rows().into_iter().enumerate() {
        let img = img.as_slice().expect("standard layout");
        let img_norm = norm(img);
        if img_norm <= EPS_NORM {
            return Err(Error::DegenerateInput(format!("image embedding in row {i} is zero")));
        }
        for (k, txt) in text_embs.rows().into_iter().enumerate() {
            let txt = txt.as_slice().expect("standard layout");
            table[[i, k]] = dot(txt, img) / ((text_norms[k] + EPS_NORM) * (img_norm + EPS_NORM));
        }
    }
    Ok(table)
}

/// Row `i` is the softmax over classes of `cos(text_k, image_i) / tau`.
pub fn zero_shot_probs(image_embs: &Mat, text_embs: &Mat, tau: f64) -> Result<Mat> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let mut probs = cosine_table(image_embs, text_embs)?;
    let mut scratch = vec![0.0; probs.ncols()];
    for mut row in probs.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        scratch.copy_from_slice(row);
        softmax_into(&scratch, tau, row)?;
    }
    Ok(probs)
}

/// Fraction of rows whose argmax equals the label.
pub fn zero_shot_accuracy(probs: &Mat, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.as_slice().expect("standard layout")) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Which side of the adaptation a dataset plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainRole {
    Source,
    Target,
}

/// Guidance distributions precomputed once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceCache {
    pub agnostic: GuidanceDistribution,
    pub averaged: GuidanceDistribution,
    /// Only built for target datasets; feeds the centroid calibration.
    pub target_specific: Option<GuidanceDistribution>,
}

impl GuidanceCache {
    pub fn get(&self, set: PromptSet) -> Option<&GuidanceDistribution> {
        match set {
            PromptSet::Agnostic => Some(&self.agnostic),
            PromptSet::Averaged => Some(&self.averaged),
            PromptSet::TargetSpecific => self.target_specific.as_ref(),
            PromptSet::SourceSpecific => None,
        }
    }

    pub fn len(&self) -> usize {
        self.agnostic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 over every probability, in a fixed order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        self.agnostic.hash_into(&mut h);
        self.averaged.hash_into(&mut h);
        if let Some(t) = &self.target_specific {
            t.hash_into(&mut h);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn guidance_cache(
    dataset: &EmbeddingDataset,
    bank: &PromptBank,
    tau: f64,
    role: DomainRole,
) -> Result<GuidanceCache> {
    let clip = dataset.clip()?;
    if clip.ncols() != bank.dim_clip() {
        return Err(Error::InvalidDataset(format!(
            "dataset `{}` has CLIP width {}, prompt bank has {}",
            dataset.domain_name,
            clip.ncols(),
            bank.dim_clip()
        )));
    }
    if dataset.num_classes() != bank.num_classes() {
        return Err(Error::Config(format!(
            "dataset `{}` has {} classes, prompt bank has {}",
            dataset.domain_name,
            dataset.num_classes(),
            bank.num_classes()
        )));
    }
    Ok(GuidanceCache {
        agnostic: GuidanceDistribution::compute(PromptSet::Agnostic, clip, bank, tau)?,
        averaged: GuidanceDistribution::compute(PromptSet::Averaged, clip, bank, tau)?,
        target_specific: match role {
            DomainRole::Target => Some(GuidanceDistribution::compute(
                PromptSet::TargetSpecific,
                clip,
                bank,
                tau,
            )?),
            DomainRole::Source => None,
        },
    })
}
