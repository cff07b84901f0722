//! The adaptation loop: pseudo labels once per epoch, then paired source/target
//! minibatches optimized with momentum SGD under an annealed learning rate.

use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::guidance::{guidance_cache, DomainRole, GuidanceCache, DEFAULT_TAU};
use crate::losses::{
    absolute_divergence, relative_divergence, source_cls_loss, target_pl_loss, total_objective, KlDirection, LossParts,
    LossValues, LossWeights, PairTerm,
};
use crate::model::{Activation, ParamGrads, UdaModel};
use crate::numerics::{Mat, Rng};
use crate::prompt_bank::PromptBank;
use crate::pseudo_label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate of the feature extractor.
    pub lr_extractor: f64,
    /// Base learning rate of the linear classifier.
    pub lr_classifier: f64,
    pub momentum: f64,
    pub eta0: f64,
    pub alpha: f64,
    pub beta: f64,
    /// CLIP softmax temperature.
    pub tau: f64,
    pub seed: u64,
    pub kl_direction: KlDirection,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            weights: LossWeights::default(),
            epochs: 10,
            batch_size: 32,
            lr_extractor: 2e-3,
            lr_classifier: 2e-2,
            momentum: 0.9,
            eta0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            tau: DEFAULT_TAU,
            seed: 0,
            kl_direction: KlDirection::GuidanceFirst,
            hidden_dims: vec![256],
            feature_dim: 256,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, v) in [
            ("lr_extractor", self.lr_extractor),
            ("lr_classifier", self.lr_classifier),
            ("eta0", self.eta0),
            ("alpha", self.alpha),
            ("tau", self.tau),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn layer_dims(&self, dim_input: usize) -> Vec<usize> {
        let mut dims = vec![dim_input];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }

    /// Learning rates of (extractor, classifier) at progress `theta`.
    pub fn group_lrs(&self, theta: f64) -> Result<GroupLrs> {
        let scale = lr_multiplier(theta, self.eta0, self.alpha, self.beta)? / self.eta0;
        Ok(GroupLrs {
            extractor: self.lr_extractor * scale,
            classifier: self.lr_classifier * scale,
        })
    }
}

/// `η_θ = η_0 / (1 + α θ)^β`.
pub fn lr_multiplier(theta: f64, eta0: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta must be in [0, 1], got {theta}")));
    }
    if !(eta0 > 0.0) || !(alpha > 0.0) || !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "schedule needs eta0 > 0, alpha > 0, beta >= 0 (got {eta0}, {alpha}, {beta})"
        )));
    }
    Ok(eta0 / (1.0 + alpha * theta).powf(beta))
}

/// Training progress and the schedule value at that point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub theta: f64,
    pub eta_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLrs {
    pub extractor: f64,
    pub classifier: f64,
}

/// Heavy-ball momentum: `v <- μ v + g`, `p <- p - lr v`.
///
/// The classifier (last layer) uses `lrs.classifier`, every other layer `lrs.extractor`.
pub fn sgd_step(
    model: &mut UdaModel,
    grads: &ParamGrads,
    velocity: &mut ParamGrads,
    lrs: GroupLrs,
    momentum: f64,
) -> Result<()> {
    if !grads.matches_model(model) || !velocity.matches_model(model) {
        return Err(Error::Dimension(
            "gradient or velocity shape does not match the model".into(),
        ));
    }
    let last = model.layers().len() - 1;
    for (l, ((layer, g), v)) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
        .enumerate()
    {
        let lr = if l == last { lrs.classifier } else { lrs.extractor };
        v.weight.zip_mut_with(&g.weight, |v, &g| *v = momentum * *v + g);
        v.bias.zip_mut_with(&g.bias, |v, &g| *v = momentum * *v + g);
        layer.weight.scaled_add(-lr, &v.weight);
        layer.bias.scaled_add(-lr, &v.bias);
    }
    Ok(())
}

/// Losses logged for one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub schedule: ScheduleState,
    pub losses: LossValues,
    pub rel_pairs_used: usize,
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Step-averaged losses over the epoch.
    #[serde(flatten)]
    pub losses: LossValues,
    pub source_accuracy: f64,
    /// Only when the target carries evaluation labels.
    pub target_accuracy: Option<f64>,
    /// Agreement of this epoch's pseudo labels with the evaluation labels.
    pub pseudo_label_accuracy: Option<f64>,
    pub lr_extractor: f64,
    pub lr_classifier: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Seconds per epoch; kept out of the metrics file so reruns are byte-identical.
    pub wall_time_secs: Vec<f64>,
}

impl RunMetrics {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }

    pub fn final_target_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.target_accuracy)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.epochs == other.epochs && self.steps == other.steps
    }
}

/// Fraction of `predict` outputs equal to the dataset's labels.
pub fn evaluate(model: &UdaModel, dataset: &EmbeddingDataset) -> Result<f64> {
    let labels = dataset
        .scoring_labels()
        .ok_or_else(|| Error::InvalidInput(format!("dataset `{}` has no labels", dataset.domain_name)))?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty dataset".into()));
    }
    let preds = model.predict(&dataset.inputs)?;
    Ok(accuracy(&preds, labels))
}

pub(crate) fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Indices of `len` samples drawn as concatenated shuffles of `0..n`.
fn index_stream(rng: &mut Rng, n: usize, len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len + n);
    while out.len() < len {
        out.extend(rng.permutation(n));
    }
    out.truncate(len);
    out
}

fn gather(m: &Mat, idx: &[usize]) -> Mat {
    m.select(Axis(0), idx)
}

fn check_pairing(source: &EmbeddingDataset, target: &EmbeddingDataset, config: &TrainingConfig) -> Result<()> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("source and target datasets must be non-empty".into()));
    }
    if source.labels.is_none() {
        return Err(Error::Config(format!(
            "source dataset `{}` has no labels",
            source.domain_name
        )));
    }
    if source.class_names != target.class_names {
        return Err(Error::Config("source and target class lists differ".into()));
    }
    if source.dim_input() != target.dim_input() {
        return Err(Error::Config(format!(
            "input widths differ: source {}, target {}",
            source.dim_input(),
            target.dim_input()
        )));
    }
    Ok(())
}

/// Builds the frozen guidance for both domains and trains.
pub fn train(
    source: &EmbeddingDataset,
    target: &EmbeddingDataset,
    bank: &PromptBank,
    config: &TrainingConfig,
) -> Result<(UdaModel, RunMetrics)> {
    check_pairing(source, target, config)?;
    if bank.class_names() != source.class_names.as_slice() {
        return Err(Error::Config(format!(
            "prompt bank has {} classes {:?}, datasets have {}",
            bank.num_classes(),
            bank.class_names(),
            source.num_classes()
        )));
    }
    let source_guidance = guidance_cache(source, bank, config.tau, DomainRole::Source)?;
    let target_guidance = guidance_cache(target, bank, config.tau, DomainRole::Target)?;
    train_with_guidance(source, target, &source_guidance, &target_guidance, config)
}

/// Trains against precomputed guidance. Only `target.inputs` feeds training;
/// target labels are read solely for the per-epoch accuracy metric.
pub fn train_with_guidance(
    source: &EmbeddingDataset,
    target: &EmbeddingDataset,
    source_guidance: &GuidanceCache,
    target_guidance: &GuidanceCache,
    config: &TrainingConfig,
) -> Result<(UdaModel, RunMetrics)> {
    check_pairing(source, target, config)?;
    let k = source.num_classes();
    let (ns, nt) = (source.len(), target.len());
    let target_specific = target_guidance
        .target_specific
        .as_ref()
        .ok_or_else(|| Error::Config("target guidance lacks the target-specific prompt set".into()))?;
    for (what, g, n) in [
        ("source agnostic", &source_guidance.agnostic, ns),
        ("source averaged", &source_guidance.averaged, ns),
        ("target agnostic", &target_guidance.agnostic, nt),
        ("target averaged", &target_guidance.averaged, nt),
        ("target specific", target_specific, nt),
    ] {
        if g.probs.dim() != (n, k) {
            return Err(Error::Config(format!(
                "{what} guidance is {:?}, expected ({n}, {k})",
                g.probs.dim()
            )));
        }
    }
    let source_labels = source.labels.as_deref().expect("checked");

    let mut model = UdaModel::init(&config.layer_dims(source.dim_input()), k, Activation::Tanh, config.seed)?;
    let mut velocity = ParamGrads::zeros_like(&model);
    let mut rng = Rng::with_stream(config.seed, 1);

    let batch = config.batch_size;
    let steps_per_epoch = ns.max(nt).div_ceil(batch);
    let total_steps = (config.epochs * steps_per_epoch) as f64;
    let mut metrics = RunMetrics::default();
    let mut global_step = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();

        let target_pass = model.forward(&target.inputs)?;
        let pl_state = pseudo_label::run(target_pass.features(), &target_pass.probs, &target_specific.probs)?;
        let pseudo_labels = pl_state.labels;
        drop(target_pass);

        let src_stream = index_stream(&mut rng, ns, steps_per_epoch * batch);
        let tgt_stream = index_stream(&mut rng, nt, steps_per_epoch * batch);
        let mut sum = LossValues::default();
        let mut lrs = config.group_lrs(0.0)?;

        for step in 0..steps_per_epoch {
            let theta = global_step as f64 / total_steps;
            let schedule = ScheduleState {
                theta,
                eta_theta: lr_multiplier(theta, config.eta0, config.alpha, config.beta)?,
            };
            lrs = config.group_lrs(theta)?;

            let si = &src_stream[step * batch..(step + 1) * batch];
            let ti = &tgt_stream[step * batch..(step + 1) * batch];
            let src_rec = model.forward(&gather(&source.inputs, si))?;
            let tgt_rec = model.forward(&gather(&target.inputs, ti))?;
            let ys: Vec<usize> = si.iter().map(|&i| source_labels[i]).collect();
            let pls: Vec<usize> = ti.iter().map(|&i| pseudo_labels[i]).collect();
            let src_avg = gather(&source_guidance.averaged.probs, si);
            let tgt_avg = gather(&target_guidance.averaged.probs, ti);

            let rel = match relative_divergence(&src_rec.probs, &tgt_rec.probs, &src_avg, &tgt_avg) {
                Ok(t) => t,
                Err(Error::DegenerateBatch(_)) => PairTerm {
                    value: 0.0,
                    grad_source: Mat::zeros((batch, k)),
                    grad_target: Mat::zeros((batch, k)),
                    pairs_used: 0,
                },
                Err(e) => return Err(e),
            };
            let parts = LossParts {
                cls_source: source_cls_loss(&src_rec.probs, &ys)?,
                abs_source: absolute_divergence(
                    &src_rec.probs,
                    &gather(&source_guidance.agnostic.probs, si),
                    config.kl_direction,
                )?,
                abs_target: absolute_divergence(
                    &tgt_rec.probs,
                    &gather(&target_guidance.agnostic.probs, ti),
                    config.kl_direction,
                )?,
                rel,
                pl: target_pl_loss(&tgt_rec.probs, &pls)?,
            };
            let bundle = total_objective(&parts, &config.weights)?;

            let mut grads = model.backward(&src_rec, &bundle.grad_logits_source)?;
            grads.add_assign(&model.backward(&tgt_rec, &bundle.grad_logits_target)?)?;
            sgd_step(&mut model, &grads, &mut velocity, lrs, config.momentum)?;
            if !model.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "parameters diverged at epoch {epoch}, step {step}"
                )));
            }

            let v = bundle.values;
            sum.cls_source += v.cls_source;
            sum.abs_source += v.abs_source;
            sum.abs_target += v.abs_target;
            sum.abs_total += v.abs_total;
            sum.rel += v.rel;
            sum.pl += v.pl;
            sum.total += v.total;
            metrics.steps.push(StepRecord {
                epoch,
                step: global_step,
                schedule,
                losses: v,
                rel_pairs_used: parts.rel.pairs_used,
            });
            global_step += 1;
        }

        let inv = 1.0 / steps_per_epoch as f64;
        let mean = LossValues {
            cls_source: sum.cls_source * inv,
            abs_source: sum.abs_source * inv,
            abs_target: sum.abs_target * inv,
            abs_total: sum.abs_total * inv,
            rel: sum.rel * inv,
            pl: sum.pl * inv,
            total: sum.total * inv,
        };
        let target_accuracy = match target.scoring_labels() {
            Some(_) => Some(evaluate(&model, target)?),
            None => None,
        };
        let pseudo_label_accuracy = target.scoring_labels().map(|y| accuracy(&pseudo_labels, y));
        metrics.epochs.push(EpochRecord {
            epoch,
            losses: mean,
            source_accuracy: evaluate(&model, source)?,
            target_accuracy,
            pseudo_label_accuracy,
            lr_extractor: lrs.extractor,
            lr_classifier: lrs.classifier,
        });
        metrics.wall_time_secs.push(started.elapsed().as_secs_f64());
    }
    Ok((model, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_multiplier(0.0, 0.01, 10.0, 0.75).unwrap(), 0.01);
        let end = lr_multiplier(1.0, 0.01, 10.0, 0.75).unwrap();
        // independent: 0.01 * exp(-0.75 ln 11)
        assert!((end - 0.01 * (-0.75 * 11f64.ln()).exp()).abs() < 1e-15);
        assert!((end - 0.001_655_7).abs() < 1e-7);
        for theta in [0.0, 0.3, 1.0] {
            assert_eq!(lr_multiplier(theta, 0.01, 10.0, 0.0).unwrap(), 0.01);
        }
        assert!(lr_multiplier(1.5, 0.01, 10.0, 0.75).is_err());
        assert!(lr_multiplier(-0.1, 0.01, 10.0, 0.75).is_err());
    }

    #[test]
    fn group_lrs_start_at_base_rates() {
        let cfg = TrainingConfig::default();
        let lrs = cfg.group_lrs(0.0).unwrap();
        assert_eq!(lrs.extractor, 2e-3);
        assert_eq!(lrs.classifier, 2e-2);
        let late = cfg.group_lrs(1.0).unwrap();
        assert!((late.classifier / late.extractor - 10.0).abs() < 1e-12);
    }

    #[test]
    fn default_config_values() {
        let c = TrainingConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.momentum, 0.9);
        assert_eq!((c.eta0, c.alpha, c.beta, c.tau), (0.01, 10.0, 0.75, 0.01));
        assert_eq!(c.weights, LossWeights::default());
        c.validate().unwrap();
        let bad = TrainingConfig {
            momentum: 1.0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tiny_model() -> UdaModel {
        UdaModel::init(&[2, 3], 2, Activation::Tanh, 1).unwrap()
    }

    fn filled(model: &UdaModel, v: f64) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(model);
        for l in &mut g.layers {
            l.weight.fill(v);
            l.bias.fill(v);
        }
        g
    }

    #[test]
    fn plain_step_subtracts_gradient() {
        let mut m = tiny_model();
        let before = m.params_flat();
        let g = filled(&m, 0.25);
        let mut vel = ParamGrads::zeros_like(&m);
        let lrs = GroupLrs {
            extractor: 1.0,
            classifier: 1.0,
        };
        sgd_step(&mut m, &g, &mut vel, lrs, 0.0).unwrap();
        for (a, b) in m.params_flat().iter().zip(&before) {
            assert_eq!(*a, b - 0.25);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut m = tiny_model();
        let before = m.clone();
        let mut vel = ParamGrads::zeros_like(&m);
        let lrs = GroupLrs {
            extractor: 0.1,
            classifier: 0.1,
        };
        sgd_step(&mut m, &ParamGrads::zeros_like(&before), &mut vel, lrs, 0.9).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn momentum_unrolls_by_hand() {
        // v1 = g, p1 = p0 - lr g; v2 = 0.9 g + g = 1.9 g, p2 = p1 - 1.9 lr g
        let mut m = tiny_model();
        let p0 = m.params_flat();
        let g = filled(&m, 1.0);
        let mut vel = ParamGrads::zeros_like(&m);
        let lrs = GroupLrs {
            extractor: 0.5,
            classifier: 0.5,
        };
        sgd_step(&mut m, &g, &mut vel, lrs, 0.9).unwrap();
        sgd_step(&mut m, &g, &mut vel, lrs, 0.9).unwrap();
        for (a, b) in m.params_flat().iter().zip(&p0) {
            assert!((a - (b - 0.5 * 2.9)).abs() < 1e-12);
        }
        assert!(vel.flat().iter().all(|v| (v - 1.9).abs() < 1e-12));
    }

    #[test]
    fn groups_use_their_own_rates() {
        let mut m = tiny_model();
        let p0 = m.clone();
        let g = filled(&m, 1.0);
        let mut vel = ParamGrads::zeros_like(&m);
        let lrs = GroupLrs {
            extractor: 0.1,
            classifier: 0.3,
        };
        sgd_step(&mut m, &g, &mut vel, lrs, 0.0).unwrap();
        assert!((m.layers()[0].weight[[0, 0]] - (p0.layers()[0].weight[[0, 0]] - 0.1)).abs() < 1e-15);
        assert!((m.classifier().bias[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_mismatched_shapes() {
        let mut m = tiny_model();
        let other = UdaModel::init(&[2, 4], 2, Activation::Tanh, 1).unwrap();
        let mut vel = ParamGrads::zeros_like(&m);
        let lrs = GroupLrs {
            extractor: 0.1,
            classifier: 0.1,
        };
        assert!(sgd_step(&mut m, &ParamGrads::zeros_like(&other), &mut vel, lrs, 0.9).is_err());
    }

    #[test]
    fn index_stream_pads_with_reshuffles() {
        let mut rng = Rng::new(3);
        let s = index_stream(&mut rng, 5, 12);
        assert_eq!(s.len(), 12);
        let mut first: Vec<usize> = s[..5].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert!(s.iter().all(|&i| i < 5));
    }

    #[test]
    fn evaluate_examples() {
        let mut m = UdaModel::init(&[1, 1], 2, Activation::Identity, 0).unwrap();
        m.classifier_mut().weight.fill(0.0);
        m.classifier_mut().bias = ndarray::array![0.0, 1.0];
        let names = vec!["a".to_string(), "b".to_string()];
        let ds = |labels: Vec<usize>| {
            EmbeddingDataset::new("d", names.clone(), Mat::zeros((4, 1)), None, Some(labels), None).unwrap()
        };
        assert_eq!(evaluate(&m, &ds(vec![1, 1, 1, 1])).unwrap(), 1.0);
        assert_eq!(evaluate(&m, &ds(vec![1, 0, 1, 1])).unwrap(), 0.75);
        // complement on K = 2
        assert_eq!(evaluate(&m, &ds(vec![0, 1, 0, 0])).unwrap(), 0.25);
        let unlabeled = EmbeddingDataset::new("d", names, Mat::zeros((4, 1)), None, None, None).unwrap();
        assert!(matches!(evaluate(&m, &unlabeled), Err(Error::InvalidInput(_))));
    }
}
