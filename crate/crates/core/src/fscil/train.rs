//! Session-wise training: joint base training, class-mean memory, and
//! projection-only incremental finetuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{self, LossKind};
use crate::nc_metrics::{FeatureDump, FeatureRecord, Split};
use crate::parallel;
use crate::rng::{self, streams};
use crate::scalar::Scalar;

use super::data::{Sample, SyntheticDataset};
use super::model::{Backbone, Classifier, FscilModel, LearnableClassifier, Projection};
use super::optim::{cosine_lr, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    Etf,
    Learnable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_base: usize,
    pub iters_incremental: usize,
    pub batch_base: usize,
    /// Cap on session samples per incremental iteration; memory is always used in full.
    pub batch_incremental: usize,
    pub lr_base: f64,
    pub lr_incremental: f64,
    pub momentum: f64,
    /// `"dr"` or `"ce"`.
    pub loss: String,
    /// Logit scale for cross-entropy on normalized features.
    pub ce_scale: f64,
    pub classifier_mode: ClassifierMode,
    /// Learnable arm only: logits on `μ̂` (true) or raw `μ` (false).
    pub normalize_learnable: bool,
    /// Learnable arm only: keep earlier sessions' prototype columns fixed.
    pub freeze_old_prototypes: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_base: 60,
            iters_incremental: 400,
            batch_base: 64,
            batch_incremental: 64,
            lr_base: 0.1,
            lr_incremental: 0.2,
            momentum: 0.9,
            loss: "dr".into(),
            ce_scale: losses::DEFAULT_CE_SCALE,
            classifier_mode: ClassifierMode::Etf,
            normalize_learnable: true,
            freeze_old_prototypes: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_kind(&self) -> Result<LossKind> {
        LossKind::from_name(&self.loss, self.ce_scale)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.loss_kind()?;
        if self.batch_base == 0 || self.batch_incremental == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_base >= 0.0 && self.lr_incremental >= 0.0) {
            return Err(Error::InvalidConfig("learning rates must be non-negative".into()));
        }
        if self.classifier_mode == ClassifierMode::Learnable && kind == LossKind::DotRegression {
            return Err(Error::InvalidConfig("dot-regression needs the fixed ETF classifier".into()));
        }
        Ok(())
    }
}

/// Input of one loss term: a raw sample through `f` then `g`, or a memory
/// feature `h_c` straight into `g`.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, T> {
    Raw(&'a [T]),
    Memory(&'a [T]),
}

/// Gradient buffers; `None` groups are not being trained.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub backbone: Option<Backbone<T>>,
    pub projection: Projection<T>,
    pub classifier: Option<LearnableClassifier<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(model: &FscilModel<T>, train_backbone: bool) -> Self {
        Self {
            backbone: train_backbone.then(|| model.backbone.zeros_like()),
            projection: model.projection.zeros_like(),
            classifier: match &model.classifier {
                Classifier::Learnable(l) => Some(LearnableClassifier {
                    weights: linalg::Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    normalized_features: l.normalized_features,
                }),
                Classifier::Etf(_) => None,
            },
        }
    }

    fn scale(&mut self, factor: T) {
        use super::model::Parameters;
        let apply = |ts: Vec<&mut [T]>| {
            for t in ts {
                linalg::scale(factor, t);
            }
        };
        if let Some(b) = &mut self.backbone {
            apply(b.tensors_mut());
        }
        apply(self.projection.tensors_mut());
        if let Some(c) = &mut self.classifier {
            apply(c.tensors_mut());
        }
    }
}

/// Loss of one term; accumulates its gradient into `grads`.
pub fn accumulate_gradient<T: Scalar>(
    model: &FscilModel<T>,
    input: Input<'_, T>,
    label: usize,
    loss: LossKind,
    grads: &mut Gradients<T>,
) -> Result<T> {
    let (h, backbone_cache) = match input {
        Input::Raw(x) => {
            let (h, c) = model.backbone.forward_cached(x);
            (h, Some((x, c)))
        }
        Input::Memory(h) => (h.to_vec(), None),
    };
    let (mu, proj_cache) = model.projection.forward_cached(&h);
    let (value, dmu) = head_loss(model, &mu, label, loss, grads.classifier.as_mut())?;
    let dh = model.projection.backward(&h, &proj_cache, &dmu, &mut grads.projection);
    if let (Some(gb), Some((x, cache))) = (grads.backbone.as_mut(), backbone_cache) {
        model.backbone.backward(x, &cache, &dh, gb);
    }
    Ok(value)
}

/// Loss on the projected feature `μ` and `∂L/∂μ`.
fn head_loss<T: Scalar>(
    model: &FscilModel<T>,
    mu: &[T],
    label: usize,
    loss: LossKind,
    classifier_grad: Option<&mut LearnableClassifier<T>>,
) -> Result<(T, Vec<T>)> {
    if label >= model.num_classes() {
        return Err(Error::IndexOutOfRange {
            index: label,
            len: model.num_classes(),
        });
    }
    match (&model.classifier, loss) {
        (Classifier::Etf(etf), LossKind::DotRegression) => {
            let (mu_hat, _) = losses::normalize(mu)?;
            let e = losses::dr_loss(&mu_hat, etf.column(label))?;
            Ok((e.value, losses::normalize_backward(mu, &e.grad_wrt_normalized)?))
        }
        (Classifier::Etf(etf), LossKind::CrossEntropy { scale }) => {
            let (mu_hat, _) = losses::normalize(mu)?;
            let e = losses::ce_loss_fixed(&mu_hat, etf, label, T::lit(scale))?;
            Ok((e.value, losses::normalize_backward(mu, &e.grad_wrt_normalized)?))
        }
        (Classifier::Learnable(l), LossKind::CrossEntropy { scale }) => {
            let active = model.active_classes.min(l.weights.cols());
            if label >= active {
                return Err(Error::IndexOutOfRange { index: label, len: active });
            }
            let (feature, scale) = if l.normalized_features {
                (losses::normalize(mu)?.0, T::lit(scale))
            } else {
                (mu.to_vec(), T::one())
            };
            let logits: Vec<T> = (0..active)
                .map(|k| scale * linalg::dot(l.weights.col(k), &feature))
                .collect();
            let (value, dlogits) = losses::softmax_cross_entropy(&logits, label)?;
            let mut dfeature = vec![T::zero(); feature.len()];
            for (k, &dz) in dlogits.iter().enumerate() {
                linalg::axpy(scale * dz, l.weights.col(k), &mut dfeature);
            }
            if let Some(g) = classifier_grad {
                for (k, &dz) in dlogits.iter().enumerate() {
                    linalg::axpy(scale * dz, &feature, g.weights.col_mut(k));
                }
            }
            let dmu = if l.normalized_features {
                losses::normalize_backward(mu, &dfeature)?
            } else {
                dfeature
            };
            Ok((value, dmu))
        }
        (Classifier::Learnable(_), LossKind::DotRegression) => {
            Err(Error::InvalidConfig("dot-regression needs the fixed ETF classifier".into()))
        }
    }
}

/// Mean loss and mean gradient over a batch of terms.
pub fn batch_gradient<T: Scalar>(
    model: &FscilModel<T>,
    terms: &[(Input<'_, T>, usize)],
    loss: LossKind,
    train_backbone: bool,
) -> Result<(T, Gradients<T>)> {
    let mut grads = Gradients::zeros(model, train_backbone);
    let mut total = T::zero();
    for &(input, label) in terms {
        total += accumulate_gradient(model, input, label, loss, &mut grads)?;
    }
    let inv = T::one() / T::from_usize_lossy(terms.len().max(1));
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Optimizer state for one session.
#[derive(Debug, Clone)]
pub struct Optimizers<T> {
    backbone: Sgd<T>,
    projection: Sgd<T>,
    classifier: Sgd<T>,
}

impl<T: Scalar> Optimizers<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            backbone: Sgd::new(momentum),
            projection: Sgd::new(momentum),
            classifier: Sgd::new(momentum),
        }
    }
}

/// Applies one SGD step; refuses backbone gradients once the backbone is frozen.
pub fn apply_gradients<T: Scalar>(
    model: &mut FscilModel<T>,
    grads: &Gradients<T>,
    opt: &mut Optimizers<T>,
    lr: f64,
) -> Result<()> {
    if let Some(gb) = &grads.backbone {
        if model.backbone_frozen {
            return Err(Error::FrozenViolation);
        }
        opt.backbone.step(&mut model.backbone, gb, lr);
    }
    opt.projection.step(&mut model.projection, &grads.projection, lr);
    if let (Classifier::Learnable(l), Some(gc)) = (&mut model.classifier, &grads.classifier) {
        opt.classifier.step(l, gc, lr);
    }
    Ok(())
}

/// Jointly trains `f`, `g` (and a learnable classifier) on the base session.
///
/// Returns the mean training loss of each epoch. Freezes the backbone on exit.
pub fn train_base<T: Scalar>(
    model: &mut FscilModel<T>,
    dataset: &SyntheticDataset<T>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let loss = config.loss_kind()?;
    let samples = &dataset.train[0];
    if samples.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    if model.backbone_frozen {
        return Err(Error::FrozenViolation);
    }
    model.active_classes = dataset.plan.session_classes(0).end;

    let batches_per_epoch = samples.len().div_ceil(config.batch_base);
    let total_steps = config.epochs_base * batches_per_epoch;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::seeded(config.seed, streams::SHUFFLE);
    let mut opt = Optimizers::new(config.momentum);
    let mut curve = Vec::with_capacity(config.epochs_base);
    let mut step = 0;
    for _epoch in 0..config.epochs_base {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(config.batch_base) {
            let terms: Vec<(Input<'_, T>, usize)> = chunk
                .iter()
                .map(|&i| (Input::Raw(samples[i].x.as_slice()), samples[i].label))
                .collect();
            let (mean, grads) = batch_gradient(model, &terms, loss, true)?;
            let mean = mean.to_f64_lossy();
            if !mean.is_finite() {
                return Err(Error::Divergence { step });
            }
            epoch_total += mean * chunk.len() as f64;
            apply_gradients(model, &grads, &mut opt, cosine_lr(config.lr_base, step, total_steps))?;
            step += 1;
        }
        curve.push(epoch_total / samples.len() as f64);
    }
    model.backbone_frozen = true;
    Ok(curve)
}

/// Rebuilds the memory for session `t`: the mean backbone feature of every
/// class introduced before `t`, over that class's training samples.
pub fn build_memory<T: Scalar>(model: &mut FscilModel<T>, dataset: &SyntheticDataset<T>, t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("memory is only built for incremental sessions".into()));
    }
    if !model.backbone_frozen {
        return Err(Error::InvalidConfig("memory requires the backbone to be frozen".into()));
    }
    let mut memory = super::model::Memory::new();
    for c in dataset.plan.seen_classes(t - 1) {
        let mut sum = vec![T::zero(); model.backbone.output_dim()];
        let mut count = 0usize;
        for s in dataset.train_of_class(c) {
            linalg::axpy(T::one(), &model.backbone.forward(&s.x), &mut sum);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
        linalg::scale(T::one() / T::from_usize_lossy(count), &mut sum);
        memory.insert(c, sum);
    }
    model.memory = memory;
    Ok(())
}

/// Per-iteration record of an incremental session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncrementalLog {
    /// Batch loss, evaluated before each update.
    pub losses: Vec<f64>,
    /// `|batch of D^(t)| + |M^(t)|` of each iteration.
    pub denominators: Vec<usize>,
}

/// Finetunes `g` (and a learnable classifier) on session `t` plus the memory,
/// with the loss normalized by `|D^(t)| + |M^(t)|` per batch.
pub fn train_incremental<T: Scalar>(
    model: &mut FscilModel<T>,
    dataset: &SyntheticDataset<T>,
    t: usize,
    config: &TrainConfig,
) -> Result<IncrementalLog> {
    config.validate()?;
    let loss = config.loss_kind()?;
    if t == 0 || t >= dataset.plan.num_sessions() {
        return Err(Error::InvalidConfig(format!("session {t} is not an incremental session")));
    }
    if !model.backbone_frozen {
        return Err(Error::InvalidConfig("incremental sessions require a frozen backbone".into()));
    }
    let expected: Vec<usize> = dataset.plan.seen_classes(t - 1).collect();
    if !model.memory.keys().copied().eq(expected.iter().copied()) {
        return Err(Error::InvalidConfig(format!("memory is not built for session {t}")));
    }
    let new_classes = dataset.plan.session_classes(t);
    model.active_classes = new_classes.end;

    let samples: &[Sample<T>] = &dataset.train[t];
    let memory: Vec<(usize, Vec<T>)> = model.memory.iter().map(|(&c, h)| (c, h.clone())).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::seeded(config.seed, streams::SHUFFLE + t as u64);
    let mut opt = Optimizers::new(config.momentum);
    let mut log = IncrementalLog::default();
    let mut cursor = samples.len();
    for step in 0..config.iters_incremental {
        let take = samples.len().min(config.batch_incremental);
        if cursor + take > samples.len() {
            if take < samples.len() {
                order.shuffle(&mut shuffle_rng);
            }
            cursor = 0;
        }
        let mut terms: Vec<(Input<'_, T>, usize)> = order[cursor..cursor + take]
            .iter()
            .map(|&i| (Input::Raw(samples[i].x.as_slice()), samples[i].label))
            .collect();
        cursor += take;
        terms.extend(memory.iter().map(|(c, h)| (Input::Memory(h.as_slice()), *c)));

        let (mean, mut grads) = batch_gradient(model, &terms, loss, false)?;
        let mean = mean.to_f64_lossy();
        if !mean.is_finite() {
            return Err(Error::Divergence { step });
        }
        if config.freeze_old_prototypes {
            if let Some(gc) = &mut grads.classifier {
                for k in 0..new_classes.start {
                    gc.weights.col_mut(k).iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
        log.losses.push(mean);
        log.denominators.push(terms.len());
        apply_gradients(model, &grads, &mut opt, cosine_lr(config.lr_incremental, step, config.iters_incremental))?;
    }
    Ok(log)
}

/// Accuracies (percent) after session `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionAccuracy {
    /// Over every class seen so far.
    pub all: f64,
    /// Over base classes.
    pub base: f64,
    /// Over the classes introduced in session `t`.
    pub novel: f64,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        100.0 * hits as f64 / total as f64
    }
}

pub fn evaluate<T: Scalar>(model: &FscilModel<T>, dataset: &SyntheticDataset<T>, t: usize) -> Result<SessionAccuracy> {
    let pool: Vec<&Sample<T>> = dataset.test_pool(t).collect();
    let predictions = parallel::map_indexed(pool.len(), |i| model.predict(&pool[i].x));
    let plan = &dataset.plan;
    let novel = plan.session_classes(t);
    let (mut all, mut base, mut base_n, mut nov, mut nov_n) = (0, 0, 0, 0, 0);
    for (s, p) in pool.iter().zip(predictions) {
        let hit = p? == s.label;
        all += hit as usize;
        if plan.session_of(s.label) == 0 {
            base += hit as usize;
            base_n += 1;
        }
        if novel.contains(&s.label) {
            nov += hit as usize;
            nov_n += 1;
        }
    }
    Ok(SessionAccuracy {
        all: percent(all, pool.len()),
        base: percent(base, base_n),
        novel: percent(nov, nov_n),
    })
}

/// Which representation a feature dump records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Normalized projection output `μ̂`.
    #[default]
    Normalized,
    /// Backbone output `h`.
    Intermediate,
}

/// Features of every train and test sample of the classes seen through session `t`.
pub fn feature_dump<T: Scalar>(
    model: &FscilModel<T>,
    dataset: &SyntheticDataset<T>,
    t: usize,
    kind: FeatureKind,
) -> Result<FeatureDump<T>> {
    let dim = match kind {
        FeatureKind::Normalized => model.dim(),
        FeatureKind::Intermediate => model.backbone.output_dim(),
    };
    let mut items: Vec<(&Sample<T>, Split)> = Vec::new();
    for s in 0..=t {
        items.extend(dataset.train[s].iter().map(|x| (x, Split::Train)));
        items.extend(dataset.test[s].iter().map(|x| (x, Split::Test)));
    }
    let vectors = parallel::map_indexed(items.len(), |i| -> Result<Vec<T>> {
        let (h, mu_hat) = model.forward(&items[i].0.x)?;
        Ok(match kind {
            FeatureKind::Normalized => mu_hat,
            FeatureKind::Intermediate => h,
        })
    });
    let mut dump = FeatureDump::new(dim);
    for ((sample, split), v) in items.into_iter().zip(vectors) {
        dump.push(FeatureRecord {
            vector: v?,
            label: sample.label,
            session: dataset.plan.session_of(sample.label),
            split,
        })?;
    }
    Ok(dump)
}
