//! Per-class text embeddings for every prompt set.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Which text embeddings a zero-shot distribution was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSet {
    /// "a photo of a {class}"
    Agnostic,
    /// Mean of the source- and target-specific embeddings.
    Averaged,
    SourceSpecific,
    TargetSpecific,
}

impl PromptSet {
    pub const ALL: [PromptSet; 4] = [
        PromptSet::Agnostic,
        PromptSet::Averaged,
        PromptSet::SourceSpecific,
        PromptSet::TargetSpecific,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptSet::Agnostic => "agnostic",
            PromptSet::Averaged => "averaged",
            PromptSet::SourceSpecific => "source_specific",
            PromptSet::TargetSpecific => "target_specific",
        }
    }
}

impl std::str::FromStr for PromptSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" => Ok(PromptSet::Agnostic),
            "averaged" | "avg" => Ok(PromptSet::Averaged),
            "source" | "source_specific" | "source-specific" => Ok(PromptSet::SourceSpecific),
            "target" | "target_specific" | "target-specific" => Ok(PromptSet::TargetSpecific),
            other => Err(Error::InvalidParameter(format!("unknown prompt set `{other}`"))),
        }
    }
}

impl std::fmt::Display for PromptSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Renders one prompt per class.
///
/// The article is always "a", even before vowels, so the strings match
/// published prompt lists byte for byte ("a real world photo of a Alarm Clock").
pub fn render_prompts(class_names: &[String], domain_name: Option<&str>) -> Result<Vec<String>> {
    check_class_names(class_names)?;
    Ok(class_names
        .iter()
        .map(|class| match domain_name {
            Some(domain) => format!("a {domain} photo of a {class}"),
            None => format!("a photo of a {class}"),
        })
        .collect())
}

pub(crate) fn check_class_names(class_names: &[String]) -> Result<()> {
    if class_names.is_empty() {
        return Err(Error::InvalidInput("class list is empty".into()));
    }
    let mut seen = HashSet::new();
    for name in class_names {
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate class name `{name}`")));
        }
    }
    Ok(())
}

/// Row-wise mean of the source- and target-specific text embeddings.
pub fn build_averaged(source_text: &Mat, target_text: &Mat) -> Result<Mat> {
    if source_text.dim() != target_text.dim() {
        return Err(Error::Dimension(format!(
            "source text is {:?} but target text is {:?}",
            source_text.dim(),
            target_text.dim()
        )));
    }
    Ok((source_text + target_text) * 0.5)
}

/// Text embeddings of all four prompt sets, one row per class.
///
/// Embeddings are stored as given; cosine similarity normalizes internally.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    class_names: Vec<String>,
    source_domain: Option<String>,
    target_domain: Option<String>,
    source_text: Mat,
    target_text: Mat,
    agnostic_text: Mat,
    averaged_text: Mat,
}

impl PromptBank {
    pub fn new(class_names: Vec<String>, source_text: Mat, target_text: Mat, agnostic_text: Mat) -> Result<Self> {
        check_class_names(&class_names)?;
        let k = class_names.len();
        let d = agnostic_text.ncols();
        if d == 0 {
            return Err(Error::InvalidParameter("text embedding width is zero".into()));
        }
        for (name, m) in [
            ("source", &source_text),
            ("target", &target_text),
            ("agnostic", &agnostic_text),
        ] {
            if m.dim() != (k, d) {
                return Err(Error::Dimension(format!(
                    "{name} text embeddings are {:?}, expected ({k}, {d})",
                    m.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} text embeddings contain non-finite values"
                )));
            }
        }
        let averaged_text = build_averaged(&source_text, &target_text)?;
        Ok(PromptBank {
            class_names,
            source_domain: None,
            target_domain: None,
            source_text,
            target_text,
            agnostic_text,
            averaged_text,
        })
    }

    /// Records the domain names the specific prompts were rendered with.
    pub fn with_domains(mut self, source: impl Into<String>, target: impl Into<String>) -> Self {
        self.source_domain = Some(source.into());
        self.target_domain = Some(target.into());
        self
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim_clip(&self) -> usize {
        self.agnostic_text.ncols()
    }

    pub fn source_domain(&self) -> Option<&str> {
        self.source_domain.as_deref()
    }

    pub fn target_domain(&self) -> Option<&str> {
        self.target_domain.as_deref()
    }

    pub fn source_text(&self) -> &Mat {
        &self.source_text
    }

    pub fn target_text(&self) -> &Mat {
        &self.target_text
    }

    pub fn agnostic_text(&self) -> &Mat {
        &self.agnostic_text
    }

    pub fn averaged_text(&self) -> &Mat {
        &self.averaged_text
    }

    pub fn text(&self, set: PromptSet) -> &Mat {
        match set {
            PromptSet::Agnostic => &self.agnostic_text,
            PromptSet::Averaged => &self.averaged_text,
            PromptSet::SourceSpecific => &self.source_text,
            PromptSet::TargetSpecific => &self.target_text,
        }
    }

    /// Prompt strings for a set, when the domain names are known.
    pub fn prompts(&self, set: PromptSet) -> Option<Vec<String>> {
        let domain = match set {
            PromptSet::Agnostic => None,
            PromptSet::SourceSpecific => Some(self.source_domain.as_deref()?),
            PromptSet::TargetSpecific => Some(self.target_domain.as_deref()?),
            PromptSet::Averaged => return None,
        };
        render_prompts(&self.class_names, domain).ok()
    }
}
