//! CLIP-calibrated nearest-centroid pseudo labels for the target domain.
//!
//! 1. Centroids weighted by `δ_ik + p_ik`, the model's and CLIP's
//!    (target-specific prompt) probability of class `k` for sample `i`.
//! 2. Nearest centroid under cosine distance.
//! 3. One refinement: hard-label class means, then reassign.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Mat, EPS_NORM};

/// Guard on the centroid weight denominator.
pub const EPS_DEN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabelState {
    #[serde(serialize_with = "serialize_rows")]
    pub centroids: Mat,
    #[serde(serialize_with = "serialize_rows")]
    pub refined_centroids: Mat,
    /// Labels from the refined centroids.
    pub labels: Vec<usize>,
    /// Labels from the calibrated centroids, before refinement.
    pub initial_labels: Vec<usize>,
    /// `δ + p` per sample and class.
    #[serde(serialize_with = "serialize_rows")]
    pub weights: Mat,
}

fn serialize_rows<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.rows() {
        seq.serialize_element(&row.to_vec())?;
    }
    seq.end()
}

fn slice(m: &Mat, i: usize) -> &[f64] {
    m.row(i).to_slice().expect("standard layout")
}

/// Weighted class centroids, `c_k = Σ_i w_ik f_i / Σ_i w_ik` with `w = δ + p`.
pub fn calibrated_centroids(features: &Mat, model_probs: &Mat, clip_target_probs: &Mat) -> Result<Mat> {
    let weights = calibration_weights(features, model_probs, clip_target_probs)?;
    Ok(weighted_centroids(features, &weights))
}

fn calibration_weights(features: &Mat, model_probs: &Mat, clip_target_probs: &Mat) -> Result<Mat> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::InvalidInput(
            "pseudo-labeling needs at least one target sample".into(),
        ));
    }
    if model_probs.nrows() != n || clip_target_probs.dim() != model_probs.dim() {
        return Err(Error::Dimension(format!(
            "features {:?}, model probabilities {:?}, CLIP probabilities {:?}",
            features.dim(),
            model_probs.dim(),
            clip_target_probs.dim()
        )));
    }
    Ok(model_probs + clip_target_probs)
}

fn weighted_centroids(features: &Mat, weights: &Mat) -> Mat {
    let (n, d) = features.dim();
    let k = weights.ncols();
    let mut centroids = Mat::zeros((k, d));
    for c in 0..k {
        let mut den = 0.0;
        for i in 0..n {
            let w = weights[[i, c]];
            den += w;
            for j in 0..d {
                centroids[[c, j]] += w * features[[i, j]];
            }
        }
        let den = den.max(EPS_DEN);
        centroids.row_mut(c).mapv_inplace(|v| v / den);
    }
    centroids
}

/// `argmin_k (1 - cos(f_i, c_k))`, lowest `k` on ties.
pub fn assign_nearest(features: &Mat, centroids: &Mat) -> Result<Vec<usize>> {
    if features.ncols() != centroids.ncols() {
        return Err(Error::Dimension(format!(
            "feature width {} but centroid width {}",
            features.ncols(),
            centroids.ncols()
        )));
    }
    if centroids.nrows() == 0 {
        return Err(Error::InvalidInput("no centroids".into()));
    }
    let centroid_norms: Vec<f64> = (0..centroids.nrows())
        .map(|k| {
            let n = norm(slice(centroids, k));
            if n <= EPS_NORM {
                Err(Error::DegenerateCentroid(k))
            } else {
                Ok(n)
            }
        })
        .collect::<Result<_>>()?;
    Ok((0..features.nrows())
        .map(|i| {
            let f = slice(features, i);
            let nf = norm(f);
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (k, &nc) in centroid_norms.iter().enumerate() {
                let dist = 1.0 - dot(f, slice(centroids, k)) / ((nf + EPS_NORM) * (nc + EPS_NORM));
                if dist < best_dist {
                    best = k;
                    best_dist = dist;
                }
            }
            best
        })
        .collect())
}

/// Hard-label class means, then reassignment. Empty classes keep `previous`.
pub fn refine_round(features: &Mat, labels: &[usize], previous: &Mat) -> Result<(Mat, Vec<usize>)> {
    let (n, d) = features.dim();
    let k = previous.nrows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} features but {} labels", labels.len())));
    }
    if previous.ncols() != d {
        return Err(Error::Dimension(format!(
            "feature width {d} but centroid width {}",
            previous.ncols()
        )));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::InvalidLabel {
            row,
            label,
            num_classes: k,
        });
    }
    let mut sums = Mat::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for j in 0..d {
            sums[[y, j]] += features[[i, j]];
        }
    }
    let mut refined = previous.clone();
    for c in 0..k {
        if counts[c] > 0 {
            let inv = counts[c] as f64;
            for j in 0..d {
                refined[[c, j]] = sums[[c, j]] / inv;
            }
        }
    }
    let new_labels = assign_nearest(features, &refined)?;
    Ok((refined, new_labels))
}

/// Calibrated centroids, nearest-centroid labels, and exactly one refinement.
pub fn run(features: &Mat, model_probs: &Mat, clip_target_probs: &Mat) -> Result<PseudoLabelState> {
    let weights = calibration_weights(features, model_probs, clip_target_probs)?;
    let centroids = weighted_centroids(features, &weights);
    let initial_labels = assign_nearest(features, &centroids)?;
    let (refined_centroids, labels) = refine_round(features, &initial_labels, &centroids)?;
    Ok(PseudoLabelState {
        centroids,
        refined_centroids,
        labels,
        initial_labels,
        weights,
    })
}
