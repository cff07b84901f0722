//! Loss terms of the adaptation objective and their gradients with respect to model logits.
//!
//! Every loss takes row-wise model probabilities `p = softmax(z)` and returns
//! `d loss / d z`. All losses are batch means.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, kl_div, norm, Mat, EPS_KL, EPS_NORM};

/// Weights of the divergence and pseudo-label terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_abs: f64,
    pub lambda_rel: f64,
    pub lambda_pl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_abs: 10.0,
            lambda_rel: 1.0,
            lambda_pl: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_abs: f64, lambda_rel: f64, lambda_pl: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_abs,
            lambda_rel,
            lambda_pl,
        };
        w.validate()?;
        Ok(w)
    }

    /// Source-only training: every adaptation term switched off.
    pub fn source_only() -> Self {
        LossWeights {
            lambda_abs: 0.0,
            lambda_rel: 0.0,
            lambda_pl: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_abs", self.lambda_abs),
            ("lambda_rel", self.lambda_rel),
            ("lambda_pl", self.lambda_pl),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Argument order of the absolute-divergence KL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(clip || model)`.
    #[default]
    GuidanceFirst,
    /// `KL(model || clip)`.
    ModelFirst,
}

impl std::str::FromStr for KlDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guidance_first" | "guidance-first" => Ok(KlDirection::GuidanceFirst),
            "model_first" | "model-first" => Ok(KlDirection::ModelFirst),
            other => Err(Error::InvalidParameter(format!("unknown kl direction `{other}`"))),
        }
    }
}

/// A scalar loss and its logit gradient for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Mat,
}

/// A loss over paired source/target batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub value: f64,
    pub grad_source: Mat,
    pub grad_target: Mat,
    /// Pairs that contributed (non-degenerate).
    pub pairs_used: usize,
}

fn row(m: &Mat, i: usize) -> &[f64] {
    m.row(i).to_slice().expect("standard layout")
}

fn check_same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Chains `d loss / d p` through the softmax: `p ⊙ (g - <p, g>)`, per row.
pub fn softmax_backward(probs: &Mat, grad_probs: &Mat) -> Mat {
    let mut out = grad_probs.clone();
    for (mut o, p) in out.rows_mut().into_iter().zip(probs.rows()) {
        let inner: f64 = o.iter().zip(p.iter()).map(|(g, p)| g * p).sum();
        o.iter_mut().zip(p.iter()).for_each(|(g, p)| *g = p * (*g - inner));
    }
    out
}

/// Mean cross-entropy `-ln p_y`; gradient `(p - onehot(y)) / N`.
pub fn source_cls_loss(model_probs: &Mat, labels: &[usize]) -> Result<LossTerm> {
    let (n, k) = model_probs.dim();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::InvalidLabel {
            row,
            label,
            num_classes: k,
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = model_probs * inv_n;
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        value -= model_probs[[i, y]].max(f64::MIN_POSITIVE).ln();
        grad[[i, y]] -= inv_n;
    }
    Ok(LossTerm {
        value: value * inv_n,
        grad,
    })
}

/// Cross-entropy against pseudo labels; same contract as [`source_cls_loss`].
pub fn target_pl_loss(model_probs: &Mat, pseudo_labels: &[usize]) -> Result<LossTerm> {
    source_cls_loss(model_probs, pseudo_labels)
}

/// Mean KL between the CLIP guidance rows and the model rows, for one domain.
pub fn absolute_divergence(model_probs: &Mat, guidance_probs: &Mat, direction: KlDirection) -> Result<LossTerm> {
    check_same_shape(model_probs, guidance_probs, "model vs guidance probabilities")?;
    let n = model_probs.nrows();
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let grad = match direction {
        KlDirection::GuidanceFirst => {
            for i in 0..n {
                value += kl_div(row(guidance_probs, i), row(model_probs, i))?;
            }
            (model_probs - guidance_probs) * inv_n
        }
        KlDirection::ModelFirst => {
            let mut grad = Mat::zeros(model_probs.dim());
            for i in 0..n {
                let (p, q) = (row(model_probs, i), row(guidance_probs, i));
                let kl = kl_div(p, q)?;
                value += kl;
                for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
                    if p[k] > 0.0 {
                        *g = p[k] * (p[k].ln() - q[k].max(EPS_KL).ln() - kl) * inv_n;
                    }
                }
            }
            grad
        }
    };
    Ok(LossTerm {
        value: value * inv_n,
        grad,
    })
}

/// `1 - cos(Δ1, Δ2)` averaged over index-paired rows, where
/// `Δ1 = src_avg_guidance - tgt_avg_guidance` and `Δ2 = src_probs - tgt_probs`.
///
/// Pairs where either difference has norm below [`EPS_NORM`] are skipped and
/// the mean is taken over the remaining pairs.
pub fn relative_divergence(
    src_probs: &Mat,
    tgt_probs: &Mat,
    src_avg_guidance: &Mat,
    tgt_avg_guidance: &Mat,
) -> Result<PairTerm> {
    check_same_shape(src_probs, tgt_probs, "source vs target probabilities")?;
    check_same_shape(src_probs, src_avg_guidance, "source probabilities vs source guidance")?;
    check_same_shape(src_probs, tgt_avg_guidance, "source probabilities vs target guidance")?;
    let (b, k) = src_probs.dim();
    if b == 0 {
        return Err(Error::InvalidBatch(
            "relative divergence needs at least one pair".into(),
        ));
    }

    let mut value = 0.0;
    let mut used = 0usize;
    // d loss_i / d Δ2_i, before dividing by the number of used pairs
    let mut grad_delta = Mat::zeros((b, k));
    let mut d1 = vec![0.0; k];
    let mut d2 = vec![0.0; k];
    for i in 0..b {
        for j in 0..k {
            d1[j] = src_avg_guidance[[i, j]] - tgt_avg_guidance[[i, j]];
            d2[j] = src_probs[[i, j]] - tgt_probs[[i, j]];
        }
        let (n1, n2) = (norm(&d1), norm(&d2));
        if n1 < EPS_NORM || n2 < EPS_NORM {
            continue;
        }
        let denom = (n1 + EPS_NORM) * (n2 + EPS_NORM);
        let inner = dot(&d1, &d2);
        value += 1.0 - inner / denom;
        used += 1;
        // d cos / d Δ2 = Δ1 / D - <Δ1,Δ2> / (D (|Δ2| + ε)) * Δ2 / |Δ2|
        let radial = inner / (denom * (n2 + EPS_NORM) * n2);
        for j in 0..k {
            grad_delta[[i, j]] = -(d1[j] / denom - radial * d2[j]);
        }
    }
    if used == 0 {
        return Err(Error::DegenerateBatch(b));
    }
    let inv = 1.0 / used as f64;
    grad_delta *= inv;
    let grad_source = softmax_backward(src_probs, &grad_delta);
    let grad_target = softmax_backward(tgt_probs, &(-&grad_delta));
    Ok(PairTerm {
        value: value * inv,
        grad_source,
        grad_target,
        pairs_used: used,
    })
}

/// Every component of the objective evaluated on one model snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub cls_source: LossTerm,
    pub abs_source: LossTerm,
    pub abs_target: LossTerm,
    pub rel: PairTerm,
    pub pl: LossTerm,
}

/// Scalar values of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub cls_source: f64,
    pub abs_source: f64,
    pub abs_target: f64,
    pub abs_total: f64,
    pub rel: f64,
    pub pl: f64,
    pub total: f64,
}

impl LossValues {
    /// `cls + λ_abs·abs + λ_rel·rel + λ_pl·pl`, evaluated exactly as the trainer does.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.cls_source + w.lambda_abs * self.abs_total + w.lambda_rel * self.rel + w.lambda_pl * self.pl
    }
}

/// Weighted objective plus the combined logit gradients for both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub values: LossValues,
    pub grad_logits_source: Mat,
    pub grad_logits_target: Mat,
}

pub fn total_objective(parts: &LossParts, weights: &LossWeights) -> Result<LossBundle> {
    weights.validate()?;
    let src = parts.cls_source.grad.dim();
    let tgt = parts.abs_target.grad.dim();
    check_same_shape(&parts.cls_source.grad, &parts.abs_source.grad, "source gradients")?;
    check_same_shape(&parts.cls_source.grad, &parts.rel.grad_source, "source gradients")?;
    check_same_shape(&parts.abs_target.grad, &parts.rel.grad_target, "target gradients")?;
    check_same_shape(&parts.abs_target.grad, &parts.pl.grad, "target gradients")?;
    if src.1 != tgt.1 {
        return Err(Error::Dimension(format!("class counts differ: {} vs {}", src.1, tgt.1)));
    }

    let abs_total = parts.abs_source.value + parts.abs_target.value;
    let mut values = LossValues {
        cls_source: parts.cls_source.value,
        abs_source: parts.abs_source.value,
        abs_target: parts.abs_target.value,
        abs_total,
        rel: parts.rel.value,
        pl: parts.pl.value,
        total: 0.0,
    };
    values.total = values.weighted_total(weights);

    let mut grad_src = parts.cls_source.grad.clone();
    grad_src.scaled_add(weights.lambda_abs, &parts.abs_source.grad);
    grad_src.scaled_add(weights.lambda_rel, &parts.rel.grad_source);
    let mut grad_tgt = &parts.abs_target.grad * weights.lambda_abs;
    grad_tgt.scaled_add(weights.lambda_rel, &parts.rel.grad_target);
    grad_tgt.scaled_add(weights.lambda_pl, &parts.pl.grad);

    Ok(LossBundle {
        values,
        grad_logits_source: grad_src,
        grad_logits_target: grad_tgt,
    })
}

/// Row-sums of a gradient block; softmax-chained gradients sum to zero per row.
pub fn row_sums(m: &Mat) -> Vec<f64> {
    m.sum_axis(Axis(1)).to_vec()
}
