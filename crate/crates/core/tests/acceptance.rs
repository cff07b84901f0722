//! Acceptance gate. Runs without the libtest harness so every criterion prints
//! exactly one `PASS` or `FAIL` line; the process exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use clipdiv::cli::{run_sweep, SweepParam, SweepResult, SweepRow, SweepSpec};
use clipdiv::dataio::{synth_generate, SynthOutput};
use clipdiv::guidance::{guidance_cache, zero_shot_probs, DomainRole};
use clipdiv::losses::{
    absolute_divergence, relative_divergence, source_cls_loss, target_pl_loss, total_objective, LossParts,
};
use clipdiv::model::softmax_rows;
use clipdiv::numerics::{argmax, kl_div, softmax, Rng};
use clipdiv::pseudo_label;
use clipdiv::trainer::{lr_multiplier, train_with_guidance};
use clipdiv::{Activation, KlDirection, LossWeights, Mat, SynthConfig, TrainingConfig, UdaModel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Cls,
    AbsGuidanceFirst,
    AbsModelFirst,
    Rel,
    Pl,
    Total(KlDirection),
}

impl Objective {
    fn name(self) -> &'static str {
        match self {
            Objective::Cls => "cls",
            Objective::AbsGuidanceFirst => "abs[guidance_first]",
            Objective::AbsModelFirst => "abs[model_first]",
            Objective::Rel => "rel",
            Objective::Pl => "pl",
            Objective::Total(KlDirection::GuidanceFirst) => "total[guidance_first]",
            Objective::Total(KlDirection::ModelFirst) => "total[model_first]",
        }
    }
}

struct Instance {
    model: UdaModel,
    xs: Mat,
    xt: Mat,
    ys: Vec<usize>,
    pls: Vec<usize>,
    agn_s: Mat,
    agn_t: Mat,
    avg_s: Mat,
    avg_t: Mat,
    weights: LossWeights,
}

fn random_probs(rng: &mut Rng, n: usize, k: usize) -> Mat {
    softmax_rows(&Mat::from_shape_simple_fn((n, k), || 2.0 * rng.normal()))
}

fn instance(seed: u64) -> Instance {
    let mut rng = Rng::new(seed);
    let b = 3 + rng.below(4);
    // K >= 3: with two classes every difference vector is colinear
    let k = 3 + rng.below(3);
    let d_in = 2 + rng.below(4);
    let dims = [d_in, 2 + rng.below(4), 2 + rng.below(3)];
    let model = UdaModel::init(&dims, k, Activation::Tanh, seed).unwrap();
    Instance {
        model,
        xs: Mat::from_shape_simple_fn((b, d_in), || rng.normal()),
        xt: Mat::from_shape_simple_fn((b, d_in), || rng.normal()),
        ys: (0..b).map(|_| rng.below(k)).collect(),
        pls: (0..b).map(|_| rng.below(k)).collect(),
        agn_s: random_probs(&mut rng, b, k),
        agn_t: random_probs(&mut rng, b, k),
        avg_s: random_probs(&mut rng, b, k),
        avg_t: random_probs(&mut rng, b, k),
        weights: LossWeights::new(rng.uniform(0.5, 10.0), rng.uniform(0.5, 2.0), rng.uniform(0.05, 1.0)).unwrap(),
    }
}

/// Loss value and its gradients with respect to source and target logits.
fn objective(inst: &Instance, obj: Objective, zs: &Mat, zt: &Mat) -> (f64, Mat, Mat) {
    let (ps, pt) = (softmax_rows(zs), softmax_rows(zt));
    let zeros = || Mat::zeros(zs.dim());
    match obj {
        Objective::Cls => {
            let t = source_cls_loss(&ps, &inst.ys).unwrap();
            (t.value, t.grad, zeros())
        }
        Objective::AbsGuidanceFirst | Objective::AbsModelFirst => {
            let dir = if obj == Objective::AbsModelFirst {
                KlDirection::ModelFirst
            } else {
                KlDirection::GuidanceFirst
            };
            let s = absolute_divergence(&ps, &inst.agn_s, dir).unwrap();
            let t = absolute_divergence(&pt, &inst.agn_t, dir).unwrap();
            (s.value + t.value, s.grad, t.grad)
        }
        Objective::Rel => {
            let r = relative_divergence(&ps, &pt, &inst.avg_s, &inst.avg_t).unwrap();
            (r.value, r.grad_source, r.grad_target)
        }
        Objective::Pl => {
            let t = target_pl_loss(&pt, &inst.pls).unwrap();
            (t.value, zeros(), t.grad)
        }
        Objective::Total(dir) => {
            let parts = LossParts {
                cls_source: source_cls_loss(&ps, &inst.ys).unwrap(),
                abs_source: absolute_divergence(&ps, &inst.agn_s, dir).unwrap(),
                abs_target: absolute_divergence(&pt, &inst.agn_t, dir).unwrap(),
                rel: relative_divergence(&ps, &pt, &inst.avg_s, &inst.avg_t).unwrap(),
                pl: target_pl_loss(&pt, &inst.pls).unwrap(),
            };
            let b = total_objective(&parts, &inst.weights).unwrap();
            (b.values.total, b.grad_logits_source, b.grad_logits_target)
        }
    }
}

fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole gradient vectors.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = l2(&mut a.iter().copied()).max(l2(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn split(flat: &[f64], dim: (usize, usize)) -> (Mat, Mat) {
    let n = dim.0 * dim.1;
    (
        Mat::from_shape_vec(dim, flat[..n].to_vec()).unwrap(),
        Mat::from_shape_vec(dim, flat[n..].to_vec()).unwrap(),
    )
}

fn concat(a: &Mat, b: &Mat) -> Vec<f64> {
    a.iter().chain(b.iter()).copied().collect()
}

/// Worst logit and parameter relative errors for one objective on one instance.
fn gradient_errors(inst: &Instance, obj: Objective) -> (f64, f64) {
    let rs = inst.model.forward(&inst.xs).unwrap();
    let rt = inst.model.forward(&inst.xt).unwrap();
    let (_, gs, gt) = objective(inst, obj, &rs.logits, &rt.logits);

    let dim = rs.logits.dim();
    let logits = concat(&rs.logits, &rt.logits);
    let numeric = central_difference(&logits, |z| {
        let (zs, zt) = split(z, dim);
        objective(inst, obj, &zs, &zt).0
    });
    let logit_err = relative_error(&concat(&gs, &gt), &numeric);

    let mut analytic = inst.model.backward(&rs, &gs).unwrap();
    analytic.add_assign(&inst.model.backward(&rt, &gt).unwrap()).unwrap();
    let params = inst.model.params_flat();
    let numeric = central_difference(&params, |p| {
        let mut m = inst.model.clone();
        m.set_params_flat(p).unwrap();
        let zs = m.forward(&inst.xs).unwrap().logits;
        let zt = m.forward(&inst.xt).unwrap().logits;
        objective(inst, obj, &zs, &zt).0
    });
    let param_err = relative_error(&analytic.flat(), &numeric);
    (logit_err, param_err)
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let objectives = [
        Objective::Cls,
        Objective::AbsGuidanceFirst,
        Objective::AbsModelFirst,
        Objective::Rel,
        Objective::Pl,
        Objective::Total(KlDirection::GuidanceFirst),
        Objective::Total(KlDirection::ModelFirst),
    ];
    let mut summary = Vec::new();
    for obj in objectives {
        let (mut worst_logit, mut worst_param) = (0.0f64, 0.0f64);
        for seed in 0..INSTANCES as u64 {
            let (l, p) = gradient_errors(&instance(1000 + seed), obj);
            worst_logit = worst_logit.max(l);
            worst_param = worst_param.max(p);
        }
        ensure(worst_logit <= GRAD_TOL && worst_param <= GRAD_TOL, || {
            format!(
                "{}: logit err {worst_logit:.2e}, param err {worst_param:.2e}",
                obj.name()
            )
        })?;
        summary.push(format!("{} {:.1e}/{:.1e}", obj.name(), worst_logit, worst_param));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{INSTANCES} instances each, worst logit/param rel err: {} ({secs:.2}s)",
        summary.join(", ")
    ))
}

// ---------------------------------------------------------- shared datasets

fn benchmark(seed: u64) -> SynthOutput {
    synth_generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn config(weights: LossWeights, seed: u64) -> TrainingConfig {
    TrainingConfig {
        weights,
        seed,
        ..TrainingConfig::default()
    }
}

// ----------------------------------------------------------- loss identities

fn loss_identities() -> Outcome {
    let data = benchmark(1);
    let cfg = TrainingConfig {
        epochs: 10,
        ..config(LossWeights::default(), 1)
    };
    let gs = guidance_cache(&data.source, &data.bank, cfg.tau, DomainRole::Source).unwrap();
    let gt = guidance_cache(&data.target, &data.bank, cfg.tau, DomainRole::Target).unwrap();
    let (_, metrics) = train_with_guidance(&data.source, &data.target, &gs, &gt, &cfg).unwrap();
    let steps_per_epoch = data.source.len().max(data.target.len()).div_ceil(cfg.batch_size);
    ensure(metrics.steps.len() == 10 * steps_per_epoch, || {
        format!("{} steps logged", metrics.steps.len())
    })?;
    let w = cfg.weights;
    let (mut worst_abs, mut worst_total) = (0.0f64, 0.0f64);
    for s in &metrics.steps {
        let l = s.losses;
        worst_abs = worst_abs.max((l.abs_total - (l.abs_source + l.abs_target)).abs());
        let expected =
            l.cls_source + w.lambda_abs * (l.abs_source + l.abs_target) + w.lambda_rel * l.rel + w.lambda_pl * l.pl;
        worst_total = worst_total.max((l.total - expected).abs());
    }
    ensure(worst_abs <= 1e-12 && worst_total <= 1e-12, || {
        format!("abs gap {worst_abs:.2e}, total gap {worst_total:.2e}")
    })?;
    Ok(format!(
        "{} steps, max |abs - (abs_s + abs_t)| = {worst_abs:.1e}, max |total - weighted sum| = {worst_total:.1e}",
        metrics.steps.len()
    ))
}

// ------------------------------------------------------ divergence properties

fn divergence_properties() -> Outcome {
    let mut rng = Rng::new(42);
    let mut min_kl = f64::INFINITY;
    for _ in 0..500 {
        let k = 2 + rng.below(8);
        let p: Vec<f64> = softmax(&(0..k).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>(), 1.0)
            .unwrap()
            .into_inner();
        let q: Vec<f64> = softmax(&(0..k).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>(), 1.0)
            .unwrap()
            .into_inner();
        let self_kl = kl_div(&p, &p).unwrap();
        ensure(self_kl.abs() <= 1e-9, || format!("KL(p, p) = {self_kl:e}"))?;
        let kl = kl_div(&p, &q).unwrap();
        ensure(kl >= 0.0, || format!("KL = {kl:e} < 0"))?;
        // Pinsker: KL >= 2·TV², so distinct distributions have a provably positive gap
        let tv: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        ensure(kl >= 2.0 * tv * tv - 1e-9 && kl > 1e-9, || {
            format!("KL = {kl:e} for TV = {tv:e}")
        })?;
        min_kl = min_kl.min(kl);
    }

    let mut rel_range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..500 {
        let (b, k) = (1 + rng.below(6), 2 + rng.below(6));
        let m = [0; 4].map(|_| random_probs(&mut rng, b, k));
        let v = relative_divergence(&m[0], &m[1], &m[2], &m[3]).unwrap().value;
        ensure((0.0..=2.0).contains(&v), || format!("rel = {v}"))?;
        rel_range = (rel_range.0.min(v), rel_range.1.max(v));
    }

    let row = |v: [f64; 3]| Mat::from_shape_vec((1, 3), v.to_vec()).unwrap();
    // guidance difference Δ1 = [0.2, -0.2, 0]
    let (avg_s, avg_t) = (row([0.5, 0.3, 0.2]), row([0.3, 0.5, 0.2]));
    for (want, src, tgt) in [
        (0.0, [0.6, 0.2, 0.2], [0.2, 0.6, 0.2]),
        (1.0, [0.4, 0.4, 0.2], [0.3, 0.3, 0.4]),
        (2.0, [0.2, 0.6, 0.2], [0.6, 0.2, 0.2]),
    ] {
        let v = relative_divergence(&row(src), &row(tgt), &avg_s, &avg_t).unwrap().value;
        ensure((v - want).abs() <= 1e-9, || format!("fixed point {want}: got {v}"))?;
    }

    let taus = [0.005, 0.01, 0.05, 1.0];
    for _ in 0..100 {
        let (n, k, d) = (1 + rng.below(10), 2 + rng.below(8), 2 + rng.below(30));
        let images = Mat::from_shape_simple_fn((n, d), || rng.normal());
        let texts = Mat::from_shape_simple_fn((k, d), || rng.normal());
        let argmaxes: Vec<Vec<usize>> = taus
            .iter()
            .map(|&tau| {
                let p = zero_shot_probs(&images, &texts, tau).unwrap();
                p.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
            })
            .collect();
        ensure(argmaxes.iter().all(|a| *a == argmaxes[0]), || {
            format!("argmax changed across temperatures: {argmaxes:?}")
        })?;
    }
    Ok(format!(
        "500 KL pairs (min KL {min_kl:.1e}), rel observed in [{:.3}, {:.3}], fixed points 0/1/2, argmax stable over {taus:?}",
        rel_range.0, rel_range.1
    ))
}

// --------------------------------------------------------- pseudo-label oracle

type Rows = Vec<Vec<f64>>;

fn rows_of(m: &Mat) -> Rows {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn oracle_cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / ((na + 1e-12) * (nb + 1e-12))
}

fn oracle_nearest(features: &Rows, centroids: &Rows) -> Vec<usize> {
    features
        .iter()
        .map(|f| {
            let dists: Vec<f64> = centroids.iter().map(|c| oracle_cosine_distance(f, c)).collect();
            // first index attaining the minimum
            let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
            dists.iter().position(|&d| d == min).unwrap()
        })
        .collect()
}

/// Straight transcription: weighted means, nearest centroid, one hard-label round.
fn oracle_pseudo_labels(features: &Rows, delta: &Rows, clip: &Rows) -> (Rows, Rows, Vec<usize>) {
    let (n, k, d) = (features.len(), delta[0].len(), features[0].len());
    let mut centroids = vec![vec![0.0; d]; k];
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let weights: Vec<f64> = (0..n).map(|i| delta[i][c] + clip[i][c]).collect();
        let total: f64 = weights.iter().sum::<f64>().max(1e-12);
        for j in 0..d {
            centroid[j] = (0..n).map(|i| weights[i] * features[i][j]).sum::<f64>() / total;
        }
    }
    let first = oracle_nearest(features, &centroids);
    let mut refined = centroids.clone();
    for (c, centroid) in refined.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = (0..n).filter(|&i| first[i] == c).map(|i| &features[i]).collect();
        if !members.is_empty() {
            for j in 0..d {
                centroid[j] = members.iter().map(|f| f[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let labels = oracle_nearest(features, &refined);
    (centroids, refined, labels)
}

fn max_gap(a: &Mat, b: &Rows) -> f64 {
    a.rows()
        .into_iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn pseudo_label_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(7);
    let (mut worst, mut empty_classes) = (0.0f64, 0usize);
    for case in 0..200 {
        let (n, k, d) = (1 + rng.below(20), 1 + rng.below(4), 1 + rng.below(8));
        let features = Mat::from_shape_simple_fn((n, d), || rng.normal());
        let delta = random_probs(&mut rng, n, k);
        let clip = random_probs(&mut rng, n, k);
        let state = pseudo_label::run(&features, &delta, &clip).map_err(|e| format!("case {case}: {e}"))?;
        let (c, c2, labels) = oracle_pseudo_labels(&rows_of(&features), &rows_of(&delta), &rows_of(&clip));
        ensure(state.labels == labels, || {
            format!("case {case}: labels {:?} vs oracle {labels:?}", state.labels)
        })?;
        let gap = max_gap(&state.centroids, &c).max(max_gap(&state.refined_centroids, &c2));
        ensure(gap <= 1e-9, || format!("case {case}: centroid gap {gap:e}"))?;
        worst = worst.max(gap);
        empty_classes += (0..k).filter(|c| !state.initial_labels.contains(c)).count();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "200 instances, labels identical, max centroid gap {worst:.1e}, {empty_classes} empty-class fallbacks ({secs:.2}s)"
    ))
}

// ------------------------------------------------------------ mechanism check

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mechanism_check() -> Outcome {
    let variants = [
        ("source-only", LossWeights::source_only()),
        ("abs-only", LossWeights::new(10.0, 0.0, 0.0).unwrap()),
        ("full", LossWeights::default()),
    ];
    let mut means = Vec::new();
    let mut slowest = 0.0f64;
    for (name, weights) in variants {
        let mut accs = Vec::new();
        for seed in SEEDS {
            let data = benchmark(seed);
            let started = Instant::now();
            let (_, metrics) = clipdiv::train(&data.source, &data.target, &data.bank, &config(weights, seed)).unwrap();
            let secs = started.elapsed().as_secs_f64();
            ensure(secs < 60.0, || format!("{name} seed {seed} took {secs:.1}s"))?;
            slowest = slowest.max(secs);
            accs.push(metrics.final_target_accuracy().unwrap());
        }
        means.push((name, mean(&accs), accs));
    }
    let line = means
        .iter()
        .map(|(n, m, a)| format!("{n} {m:.4} {a:?}"))
        .collect::<Vec<_>>()
        .join("; ");
    let (src, abs, full) = (means[0].1, means[1].1, means[2].1);
    ensure(src < abs && abs < full && full >= src + 0.10, || line.clone())?;
    Ok(format!("{line} (slowest run {slowest:.2}s)"))
}

// ------------------------------------------------------------ frozen guidance

fn frozen_guidance() -> Outcome {
    let data = benchmark(2);
    let cfg = config(LossWeights::default(), 2);
    let gs = guidance_cache(&data.source, &data.bank, cfg.tau, DomainRole::Source).unwrap();
    let gt = guidance_cache(&data.target, &data.bank, cfg.tau, DomainRole::Target).unwrap();
    let before = (gs.fingerprint(), gt.fingerprint());
    train_with_guidance(&data.source, &data.target, &gs, &gt, &cfg).unwrap();
    let after = (gs.fingerprint(), gt.fingerprint());
    let fresh = (
        guidance_cache(&data.source, &data.bank, cfg.tau, DomainRole::Source)
            .unwrap()
            .fingerprint(),
        guidance_cache(&data.target, &data.bank, cfg.tau, DomainRole::Target)
            .unwrap()
            .fingerprint(),
    );
    ensure(before == after && after == fresh, || {
        format!("{before:?} -> {after:?}, fresh {fresh:?}")
    })?;
    Ok(format!("source {}…, target {}…", &before.0[..12], &before.1[..12]))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let data = benchmark(3);
    let cfg = config(LossWeights::default(), 3);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in 0..2 {
        let (model, metrics) = clipdiv::train(&data.source, &data.target, &data.bank, &cfg).unwrap();
        let path = dir.path().join(format!("metrics{run}.jsonl"));
        std::fs::write(&path, metrics.to_jsonl()).map_err(|e| e.to_string())?;
        files.push((
            std::fs::read(&path).map_err(|e| e.to_string())?,
            model.params_flat(),
            metrics,
        ));
    }
    ensure(files[0].0 == files[1].0, || "metrics files differ".into())?;
    ensure(files[0].1 == files[1].1, || "final parameters differ".into())?;
    ensure(files[0].2.same_results(&files[1].2), || "step logs differ".into())?;
    Ok(format!(
        "{} identical bytes, identical parameters and step logs",
        files[0].0.len()
    ))
}

// ------------------------------------------------------------------- schedule

fn schedule_values() -> Outcome {
    let cfg = TrainingConfig::default();
    let start = lr_multiplier(0.0, cfg.eta0, cfg.alpha, cfg.beta).map_err(|e| e.to_string())?;
    ensure(start == 0.01, || format!("η(0) = {start:e}"))?;
    let end = lr_multiplier(1.0, cfg.eta0, cfg.alpha, cfg.beta).map_err(|e| e.to_string())?;
    let independent = 0.01 * (-0.75 * 11f64.ln()).exp();
    ensure((end - independent).abs() <= 1e-9, || {
        format!("η(1) = {end:e}, expected {independent:e}")
    })?;
    Ok(format!(
        "η(0) = {start}, η(1) = {end:.12} (independent {independent:.12})"
    ))
}

// ---------------------------------------------------------------------- sweep

const LAMBDA_ABS_AXIS: [f64; 6] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0];

fn lambda_abs_sweep() -> Outcome {
    // Each seed draws its own benchmark and its own initialization, as in the mechanism check.
    let mut runs: Vec<SweepRow> = Vec::new();
    for seed in SEEDS {
        let data = benchmark(seed);
        let spec = SweepSpec {
            param: SweepParam::LambdaAbs,
            values: LAMBDA_ABS_AXIS.to_vec(),
            seeds: vec![seed],
            base: TrainingConfig::default(),
        };
        let result = run_sweep(&spec, &data.source, &data.target, &data.bank, None).map_err(|e| e.to_string())?;
        ensure(result.runs.len() == LAMBDA_ABS_AXIS.len(), || {
            format!("{} runs for seed {seed}", result.runs.len())
        })?;
        runs.extend(result.runs);
    }
    runs.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
    let means: Vec<SweepRow> = LAMBDA_ABS_AXIS
        .iter()
        .map(|&value| {
            let pick =
                |f: fn(&SweepRow) -> f64| mean(&runs.iter().filter(|r| r.value == value).map(f).collect::<Vec<_>>());
            SweepRow {
                param: "lambda_abs".into(),
                value,
                seed: None,
                target_accuracy: pick(|r| r.target_accuracy),
                source_accuracy: pick(|r| r.source_accuracy),
            }
        })
        .collect();
    let result = SweepResult { runs, means };

    let csv = result.to_csv();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    ensure(
        header == ["param", "value", "seed", "target_accuracy", "source_accuracy"],
        || format!("header {header:?}"),
    )?;
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(records.len() == LAMBDA_ABS_AXIS.len() * (SEEDS.len() + 1), || {
        format!("{} csv rows", records.len())
    })?;
    let axis: Vec<f64> = records
        .iter()
        .filter(|r| &r[2] == "mean")
        .map(|r| r[1].parse().unwrap())
        .collect();
    ensure(axis == LAMBDA_ABS_AXIS, || format!("mean rows for {axis:?}"))?;

    let accs: Vec<f64> = LAMBDA_ABS_AXIS
        .iter()
        .map(|&v| result.mean_target_accuracy(v).unwrap())
        .collect();
    let table = LAMBDA_ABS_AXIS
        .iter()
        .zip(&accs)
        .map(|(v, a)| format!("{v}: {a:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(accs[1..].iter().all(|&a| a > accs[0]), || {
        format!("λ_abs = 0 not strictly worst: {table}")
    })?;
    Ok(format!("{} csv rows; mean target accuracy {table}", records.len() + 1))
}

// ---------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("loss identities", loss_identities),
        ("divergence properties", divergence_properties),
        ("pseudo-label oracle", pseudo_label_oracle),
        ("mechanism check", mechanism_check),
        ("frozen guidance", frozen_guidance),
        ("determinism", determinism),
        ("schedule values", schedule_values),
        ("lambda_abs sweep", lambda_abs_sweep),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
