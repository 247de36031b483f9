//! Layer-peeled incremental problem with free, norm-constrained features.
//!
//! Each session `t` owns features `m_{k,i}` for its classes, optimized
//! against the full fixed ETF under `‖m‖² ≤ 1`, with every earlier session
//! frozen. The global optimum puts every feature exactly on its class
//! prototype; [`check_optimality`] measures how far a bank is from that.
//!
//! The objective is separable across features, so the solver updates each
//! feature with the gradient of its own loss term. That is the session-mean
//! gradient scaled by the session size `N`, which keeps `lr` meaningful
//! regardless of how many (or how imbalanced) samples a session has.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::EtfPrototypes;
use crate::linalg;
use crate::losses::{self, LossKind};
use crate::rng::{self, streams};
use crate::scalar::Scalar;

/// Norm of the seeded initial features (strictly inside the constraint ball).
pub const INIT_NORM: f64 = 0.5;

/// Loss trajectory sampling period, in steps.
pub const TRAJECTORY_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    /// `n_k` for each class of the session; the session has `len()` classes.
    pub samples_per_class: Vec<usize>,
}

impl SessionSpec {
    pub fn num_classes(&self) -> usize {
        self.samples_per_class.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples_per_class.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct LayerPeeledProblem<T> {
    dim: usize,
    sessions: Vec<SessionSpec>,
    protos: EtfPrototypes<T>,
    loss: LossKind,
}

impl<T: Scalar> LayerPeeledProblem<T> {
    pub fn new(sessions: Vec<SessionSpec>, protos: EtfPrototypes<T>, loss: LossKind) -> Result<Self> {
        let total: usize = sessions.iter().map(SessionSpec::num_classes).sum();
        if total != protos.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "sessions cover {total} classes but the ETF has {}",
                protos.num_classes()
            )));
        }
        if sessions.iter().any(|s| s.samples_per_class.contains(&0)) {
            return Err(Error::InvalidConfig("every class needs at least one sample".into()));
        }
        Ok(Self {
            dim: protos.dim(),
            sessions,
            protos,
            loss,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sessions(&self) -> &[SessionSpec] {
        &self.sessions
    }

    pub fn protos(&self) -> &EtfPrototypes<T> {
        &self.protos
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Global class index of the first class of session `t`.
    pub fn class_offset(&self, t: usize) -> usize {
        self.sessions[..t].iter().map(SessionSpec::num_classes).sum()
    }

    /// Global class label of every sample of session `t`, class-major.
    fn session_labels(&self, t: usize) -> Vec<usize> {
        let offset = self.class_offset(t);
        self.sessions[t]
            .samples_per_class
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat_n(offset + k, n))
            .collect()
    }

    /// Per-sample loss and its gradient with respect to the free feature.
    pub fn sample_loss(&self, m: &[T], label: usize) -> Result<(T, Vec<T>)> {
        match self.loss {
            LossKind::DotRegression => {
                let e = losses::dr_loss_constrained(m, self.protos.column(label))?;
                Ok((e.value, e.grad_wrt_normalized))
            }
            LossKind::CrossEntropy { scale } => {
                let e = losses::ce_loss_fixed(m, &self.protos, label, T::lit(scale))?;
                Ok((e.value, e.grad_wrt_normalized))
            }
        }
    }
}

/// One free feature variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature<T> {
    pub class: usize,
    pub vector: Vec<T>,
}

/// Solved (or partially solved) features, one block per session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank<T> {
    pub sessions: Vec<Vec<Feature<T>>>,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Feature<T>)> + '_ {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(t, s)| s.iter().map(move |f| (t, f)))
    }

    pub fn len(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bank with every feature placed exactly on its class prototype.
    pub fn at_prototypes(problem: &LayerPeeledProblem<T>) -> Self {
        Self::filled(problem, |label| problem.protos.column(label).to_vec())
    }

    pub fn filled(problem: &LayerPeeledProblem<T>, f: impl Fn(usize) -> Vec<T>) -> Self {
        let sessions = (0..problem.sessions.len())
            .map(|t| {
                problem
                    .session_labels(t)
                    .into_iter()
                    .map(|class| Feature {
                        class,
                        vector: f(class),
                    })
                    .collect()
            })
            .collect();
        Self { sessions }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub session: usize,
    pub step: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub bank: FeatureBank<T>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Solves every session in order; see [`solve_incremental_traced`].
pub fn solve_incremental<T: Scalar>(
    problem: &LayerPeeledProblem<T>,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<FeatureBank<T>> {
    Ok(solve_incremental_traced(problem, steps, lr, seed)?.bank)
}

/// Projected gradient descent, session by session, recording the session
/// mean loss every [`TRAJECTORY_EVERY`] steps and at the final step.
pub fn solve_incremental_traced<T: Scalar>(
    problem: &LayerPeeledProblem<T>,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<SolveOutcome<T>> {
    let mut bank = FeatureBank::default();
    let mut trajectory = Vec::new();
    for t in 0..problem.sessions.len() {
        solve_session(problem, &mut bank, t, steps, lr, seed, &mut trajectory)?;
    }
    Ok(SolveOutcome { bank, trajectory })
}

/// Solves session `t` given a bank holding exactly sessions `0..t`.
///
/// Earlier sessions are never touched. The bank is truncated to `t` entries
/// first, so re-running a session replaces only that session's block.
pub fn solve_session<T: Scalar>(
    problem: &LayerPeeledProblem<T>,
    bank: &mut FeatureBank<T>,
    t: usize,
    steps: usize,
    lr: f64,
    seed: u64,
    trajectory: &mut Vec<TrajectoryPoint>,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    if t >= problem.sessions.len() || bank.sessions.len() < t {
        return Err(Error::ShapeMismatch(format!(
            "cannot solve session {t} with {} sessions solved out of {}",
            bank.sessions.len(),
            problem.sessions.len()
        )));
    }
    bank.sessions.truncate(t);

    let mut rng = rng::seeded(seed, streams::LAYER_PEELED_INIT + t as u64);
    let labels = problem.session_labels(t);
    let mut features: Vec<Feature<T>> = labels
        .iter()
        .map(|&class| {
            let mut v: Vec<T> = rng::gaussian_vec(&mut rng, problem.dim);
            let n = linalg::norm(&v);
            linalg::scale(T::lit(INIT_NORM) / n, &mut v);
            Feature { class, vector: v }
        })
        .collect();

    let n_samples = T::from_usize_lossy(features.len());
    let step_size = T::lit(lr);
    let mut record = |step: usize, total: T| -> Result<()> {
        let mean = (total / n_samples).to_f64_lossy();
        if !mean.is_finite() {
            return Err(Error::Divergence { step });
        }
        trajectory.push(TrajectoryPoint {
            session: t,
            step,
            mean_loss: mean,
        });
        Ok(())
    };

    for step in 0..steps {
        let mut total = T::zero();
        for f in &mut features {
            let (value, grad) = problem.sample_loss(&f.vector, f.class)?;
            total += value;
            linalg::axpy(-step_size, &grad, &mut f.vector);
            let n = linalg::norm(&f.vector);
            if !n.is_finite() {
                return Err(Error::Divergence { step });
            }
            if n > T::one() {
                linalg::scale(T::one() / n, &mut f.vector);
            }
        }
        if !total.is_finite() {
            return Err(Error::Divergence { step });
        }
        if step % TRAJECTORY_EVERY == 0 {
            record(step, total)?;
        }
    }
    let mut final_total = T::zero();
    for f in &features {
        final_total += problem.sample_loss(&f.vector, f.class)?.0;
    }
    record(steps, final_total)?;

    bank.sessions.push(features);
    Ok(())
}

/// Distance of a bank from the neural-collapse optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// worst `|‖m‖ − 1|`
    pub max_norm_gap: f64,
    /// worst `|mᵀŵ_k − 1|` for the feature's own class `k`
    pub max_self_gap: f64,
    /// worst `|mᵀŵ_k' + 1/(K−1)|` over other classes `k'`
    pub max_cross_gap: f64,
    /// worst norm of the loss gradient projected onto the sphere's tangent space at `m/‖m‖`
    pub max_kkt_residual: f64,
}

pub fn check_optimality<T: Scalar>(
    bank: &FeatureBank<T>,
    problem: &LayerPeeledProblem<T>,
) -> Result<OptimalityReport> {
    if bank.sessions.len() != problem.sessions.len() {
        return Err(Error::ShapeMismatch(format!(
            "bank has {} sessions, problem has {}",
            bank.sessions.len(),
            problem.sessions.len()
        )));
    }
    for (t, block) in bank.sessions.iter().enumerate() {
        let labels = problem.session_labels(t);
        if block.len() != labels.len() || block.iter().zip(&labels).any(|(f, &l)| f.class != l) {
            return Err(Error::ShapeMismatch(format!("session {t} features do not match the problem layout")));
        }
        if let Some(f) = block.iter().find(|f| f.vector.len() != problem.dim) {
            return Err(Error::ShapeMismatch(format!(
                "feature of length {} in a {}-dimensional problem",
                f.vector.len(),
                problem.dim
            )));
        }
    }

    let k_total = problem.protos.num_classes();
    let off = -1.0 / (k_total as f64 - 1.0);
    let mut report = OptimalityReport {
        max_norm_gap: 0.0,
        max_self_gap: 0.0,
        max_cross_gap: 0.0,
        max_kkt_residual: 0.0,
    };
    for (_, f) in bank.iter() {
        let m = &f.vector;
        let n = linalg::norm(m);
        report.max_norm_gap = report.max_norm_gap.max((n.to_f64_lossy() - 1.0).abs());
        for (j, z) in problem.protos.logits(m).into_iter().enumerate() {
            let z = z.to_f64_lossy();
            if j == f.class {
                report.max_self_gap = report.max_self_gap.max((z - 1.0).abs());
            } else {
                report.max_cross_gap = report.max_cross_gap.max((z - off).abs());
            }
        }
        let (_, grad) = problem.sample_loss(m, f.class)?;
        let residual = if n > T::lit(losses::EPS_NORM) {
            let radial = linalg::dot(m, &grad) / (n * n);
            let tangential: Vec<T> = grad.iter().zip(m).map(|(&g, &mi)| g - radial * mi).collect();
            linalg::norm(&tangential)
        } else {
            linalg::norm(&grad)
        };
        report.max_kkt_residual = report.max_kkt_residual.max(residual.to_f64_lossy());
    }
    Ok(report)
}

/// Worst spread (max − min) of the off-class softmax probabilities at any
/// feature, with logits scaled as in the problem's loss (scale 1 for DR).
pub fn offclass_probability_spread<T: Scalar>(bank: &FeatureBank<T>, problem: &LayerPeeledProblem<T>) -> f64 {
    let scale = match problem.loss {
        LossKind::CrossEntropy { scale } => T::lit(scale),
        LossKind::DotRegression => T::one(),
    };
    let mut worst = 0.0f64;
    for (_, f) in bank.iter() {
        let logits: Vec<T> = problem.protos.logits(&f.vector).into_iter().map(|z| z * scale).collect();
        let p = losses::softmax(&logits);
        let off = p.iter().enumerate().filter(|&(j, _)| j != f.class).map(|(_, v)| v.to_f64_lossy());
        let (lo, hi) = off.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi >= lo {
            worst = worst.max(hi - lo);
        }
    }
    worst
}

/// Softmax over unscaled logits `Ŵᵀm`.
pub fn softmax_probs<T: Scalar>(feature: &[T], protos: &EtfPrototypes<T>) -> Vec<T> {
    losses::softmax(&protos.logits(feature))
}
