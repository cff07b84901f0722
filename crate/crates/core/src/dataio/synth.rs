//! Two-domain gaussian benchmark with synthetic CLIP embeddings.
//!
//! Inputs are class means plus isotropic noise; the target domain is shifted
//! along a fixed random direction. Class text embeddings are orthonormal, and
//! each image's CLIP embedding mixes its class text row with noise according
//! to `clip_fidelity`.

use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Mat, Rng};
use crate::prompt_bank::PromptBank;

/// Distance of each class mean from the origin.
const MEAN_SCALE: f64 = 1.5;
/// Per-coordinate scale of CLIP noise before mixing.
const CLIP_NOISE: f64 = 4.0;
/// Weight of the domain direction in CLIP image and prompt embeddings.
const DOMAIN_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim_input: usize,
    pub dim_clip: usize,
    pub n_per_domain: usize,
    /// Length of the offset added to every target input.
    pub domain_gap: f64,
    /// In `[0, 1]`; 1 makes CLIP embeddings equal to their class text rows (up to the domain part).
    pub clip_fidelity: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 5,
            dim_input: 16,
            dim_clip: 32,
            n_per_domain: 500,
            domain_gap: 3.0,
            clip_fidelity: 0.9,
            noise_scale: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes == 0 || self.dim_input == 0 || self.dim_clip == 0 || self.n_per_domain == 0 {
            return bad("class count, dimensions and sample count must be >= 1".into());
        }
        if self.dim_clip < self.num_classes {
            return bad(format!(
                "d_clip = {} cannot hold {} orthonormal class text rows",
                self.dim_clip, self.num_classes
            ));
        }
        if !(0.0..=1.0).contains(&self.clip_fidelity) {
            return bad(format!("clip_fidelity must be in [0, 1], got {}", self.clip_fidelity));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return bad(format!("noise_scale must be >= 0, got {}", self.noise_scale));
        }
        if !(self.domain_gap >= 0.0) || !self.domain_gap.is_finite() {
            return bad(format!("domain_gap must be >= 0, got {}", self.domain_gap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Carries training `labels`.
    pub source: EmbeddingDataset,
    /// Carries `eval_labels` only.
    pub target: EmbeddingDataset,
    pub bank: PromptBank,
}

fn gaussian(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Removes the components along each (unit) row of `basis`.
fn project_out(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for b in basis {
        let c = dot(&v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    v
}

/// `count` unit vectors in `d` dims; orthonormal while `count <= d`.
fn orthonormal_rows(rng: &mut Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let raw = gaussian(rng, d);
        let v = if rows.len() < d {
            let v = project_out(raw, &rows);
            if norm(&v) < 1e-8 {
                continue;
            }
            v
        } else {
            raw
        };
        rows.push(normalized(v));
    }
    rows
}

/// Unit direction orthogonal to `basis`, or zero when the basis spans the space.
fn orthogonal_direction(rng: &mut Rng, basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    if basis.len() >= d {
        return vec![0.0; d];
    }
    loop {
        let v = project_out(gaussian(rng, d), basis);
        if norm(&v) > 1e-8 {
            return normalized(v);
        }
    }
}

fn to_mat(rows: &[Vec<f64>]) -> Mat {
    let cols = rows.first().map_or(0, Vec::len);
    Mat::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

fn domain(
    rng: &mut Rng,
    cfg: &SynthConfig,
    means: &[Vec<f64>],
    shift: &[f64],
    text: &[Vec<f64>],
    clip_dir: &[f64],
) -> (Mat, Mat, Vec<usize>) {
    let (n, k) = (cfg.n_per_domain, cfg.num_classes);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut inputs = Mat::zeros((n, cfg.dim_input));
    let mut clip = Mat::zeros((n, cfg.dim_clip));
    let f = cfg.clip_fidelity;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..cfg.dim_input {
            inputs[[i, j]] = means[y][j] + shift[j] + cfg.noise_scale * rng.normal();
        }
        let raw: Vec<f64> = (0..cfg.dim_clip)
            .map(|j| f * text[y][j] + (1.0 - f) * CLIP_NOISE * rng.normal() + DOMAIN_WEIGHT * clip_dir[j])
            .collect();
        for (j, v) in normalized(raw).into_iter().enumerate() {
            clip[[i, j]] = v;
        }
    }
    (inputs, clip, labels)
}

/// Pure function of `cfg`: equal configs give bit-identical outputs.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let (k, d_in, d_clip) = (cfg.num_classes, cfg.dim_input, cfg.dim_clip);
    let mut geometry = Rng::with_stream(cfg.seed, 0);

    let means: Vec<Vec<f64>> = orthonormal_rows(&mut geometry, k, d_in)
        .into_iter()
        .map(|m| m.into_iter().map(|x| x * MEAN_SCALE).collect())
        .collect();
    let v = normalized(gaussian(&mut geometry, d_in));
    let text = orthonormal_rows(&mut geometry, k, d_clip);
    let u_source = orthogonal_direction(&mut geometry, &text, d_clip);
    let u_target = orthogonal_direction(&mut geometry, &text, d_clip);

    let prompt_rows = |u: &[f64]| -> Vec<Vec<f64>> {
        text.iter()
            .map(|t| normalized(t.iter().zip(u).map(|(a, b)| a + DOMAIN_WEIGHT * b).collect()))
            .collect()
    };
    let class_names: Vec<String> = (0..k).map(|c| format!("class{c}")).collect();
    let bank = PromptBank::new(
        class_names.clone(),
        to_mat(&prompt_rows(&u_source)),
        to_mat(&prompt_rows(&u_target)),
        to_mat(&text),
    )?
    .with_domains("source", "target");

    let no_shift = vec![0.0; d_in];
    let gap: Vec<f64> = v.iter().map(|x| x * cfg.domain_gap).collect();
    let (xs, cs, ys) = domain(
        &mut Rng::with_stream(cfg.seed, 1),
        cfg,
        &means,
        &no_shift,
        &text,
        &u_source,
    );
    let (xt, ct, yt) = domain(&mut Rng::with_stream(cfg.seed, 2), cfg, &means, &gap, &text, &u_target);

    Ok(SynthOutput {
        source: EmbeddingDataset::new("synthetic source", class_names.clone(), xs, Some(cs), Some(ys), None)?,
        target: EmbeddingDataset::new("synthetic target", class_names, xt, Some(ct), None, Some(yt))?,
        bank,
    })
}
