//! Dot-regression and fixed-classifier cross-entropy losses.
//!
//! Both losses are evaluated on the normalized feature `μ̂ = μ/‖μ‖`; the
//! gradient with respect to the raw feature is obtained by composing with
//! [`normalize_backward`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::EtfPrototypes;
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Norms at or below this are refused by the normalization.
pub const EPS_NORM: f64 = 1e-12;

/// Slack allowed on the unit-norm preconditions.
pub const UNIT_NORM_SLACK: f64 = 1e-6;

/// Default logit scale for cross-entropy on normalized features.
pub const DEFAULT_CE_SCALE: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    DotRegression,
    CrossEntropy { scale: f64 },
}

impl LossKind {
    pub fn cross_entropy(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("cross-entropy scale must be positive, got {scale}")));
        }
        Ok(LossKind::CrossEntropy { scale })
    }

    /// Parses the config names `"dr"` and `"ce"`.
    pub fn from_name(name: &str, ce_scale: f64) -> Result<Self> {
        match name {
            "dr" => Ok(LossKind::DotRegression),
            "ce" => Self::cross_entropy(ce_scale),
            other => Err(Error::InvalidConfig(format!("unknown loss {other:?} (expected \"dr\" or \"ce\")"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::DotRegression => "dr",
            LossKind::CrossEntropy { .. } => "ce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval<T> {
    pub value: T,
    /// `∂L/∂μ̂`
    pub grad_wrt_normalized: Vec<T>,
    /// `∂L/∂μ` through the normalization, when computed.
    pub grad_wrt_raw: Option<Vec<T>>,
}

fn unit_slack<T: Scalar>() -> T {
    T::lit(UNIT_NORM_SLACK).max(T::epsilon() * T::lit(16.0))
}

fn check_unit<T: Scalar>(v: &[T]) -> Result<()> {
    let n = linalg::norm(v);
    if (n - T::one()).abs() > unit_slack::<T>() || !n.is_finite() {
        return Err(Error::NotNormalized { norm: n.to_f64_lossy() });
    }
    Ok(())
}

/// `½(ŵᵀμ̂ − 1)²` with gradient `−(1 − ŵᵀμ̂)·ŵ`.
pub fn dr_loss<T: Scalar>(mu_hat: &[T], target_proto: &[T]) -> Result<LossEval<T>> {
    check_unit(mu_hat)?;
    check_unit(target_proto)?;
    Ok(dr_closed_form(mu_hat, target_proto))
}

/// Dot-regression on a norm-constrained free feature `‖m‖ ≤ 1`.
///
/// Same closed form as [`dr_loss`]; the gradient is with respect to `m`
/// itself, so it is also reported as `grad_wrt_raw`.
pub fn dr_loss_constrained<T: Scalar>(m: &[T], target_proto: &[T]) -> Result<LossEval<T>> {
    let n = linalg::norm(m);
    if !(n <= T::one() + unit_slack::<T>()) {
        return Err(Error::NotNormalized { norm: n.to_f64_lossy() });
    }
    check_unit(target_proto)?;
    let mut eval = dr_closed_form(m, target_proto);
    eval.grad_wrt_raw = Some(eval.grad_wrt_normalized.clone());
    Ok(eval)
}

fn dr_closed_form<T: Scalar>(x: &[T], w: &[T]) -> LossEval<T> {
    let c = linalg::dot(w, x);
    let r = c - T::one();
    let coef = -(T::one() - c);
    LossEval {
        value: T::lit(0.5) * r * r,
        grad_wrt_normalized: w.iter().map(|&wi| coef * wi).collect(),
        grad_wrt_raw: None,
    }
}

/// Softmax of `logits`, stabilized by max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = p.iter().copied().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// `-log softmax(z)_label` and its gradient `p - e_label` with respect to `z`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum_exp: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let value = if logits[label] == max {
        // Near-saturated: keep relative precision instead of cancelling lse − z.
        let rest: T = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label)
            .map(|(_, &z)| (z - max).exp())
            .sum();
        rest.ln_1p()
    } else {
        lse - logits[label]
    };
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[label] = T::zero();
    grad[label] = -grad.iter().copied().sum::<T>();
    Ok((value, grad))
}

/// Cross-entropy against a fixed prototype matrix with logits `scale · Wᵀ feature`.
pub fn ce_loss_with_matrix<T: Scalar>(
    feature: &[T],
    protos: &Matrix<T>,
    label: usize,
    scale: T,
) -> Result<LossEval<T>> {
    if feature.len() != protos.rows() {
        return Err(Error::ShapeMismatch(format!(
            "feature length {} vs prototype dim {}",
            feature.len(),
            protos.rows()
        )));
    }
    let logits: Vec<T> = protos.matvec_t(feature).into_iter().map(|z| scale * z).collect();
    let (value, dlogits) = softmax_cross_entropy(&logits, label)?;
    let scaled: Vec<T> = dlogits.into_iter().map(|g| g * scale).collect();
    Ok(LossEval {
        value,
        grad_wrt_normalized: protos.matvec(&scaled),
        grad_wrt_raw: None,
    })
}

/// Cross-entropy against the fixed ETF classifier.
pub fn ce_loss_fixed<T: Scalar>(
    feature: &[T],
    protos: &EtfPrototypes<T>,
    label: usize,
    scale: T,
) -> Result<LossEval<T>> {
    ce_loss_with_matrix(feature, protos.matrix(), label, scale)
}

/// `μ / ‖μ‖` and `‖μ‖`.
pub fn normalize<T: Scalar>(mu: &[T]) -> Result<(Vec<T>, T)> {
    let n = linalg::norm(mu);
    if !(n > T::lit(EPS_NORM)) {
        return Err(Error::VanishingNorm { norm: n.to_f64_lossy() });
    }
    Ok((mu.iter().map(|&v| v / n).collect(), n))
}

/// Pulls a gradient with respect to `μ̂` back to `μ`: `(I − μ̂μ̂ᵀ) g / ‖μ‖`.
pub fn normalize_backward<T: Scalar>(mu_raw: &[T], upstream: &[T]) -> Result<Vec<T>> {
    if mu_raw.len() != upstream.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature length {} vs gradient length {}",
            mu_raw.len(),
            upstream.len()
        )));
    }
    let (mu_hat, n) = normalize(mu_raw)?;
    let radial = linalg::dot(&mu_hat, upstream);
    Ok(upstream
        .iter()
        .zip(&mu_hat)
        .map(|(&g, &u)| (g - radial * u) / n)
        .collect())
}

/// Evaluates `kind` on a raw feature, normalizing first and filling `grad_wrt_raw`.
pub fn eval_raw<T: Scalar>(
    kind: LossKind,
    mu_raw: &[T],
    protos: &EtfPrototypes<T>,
    label: usize,
) -> Result<LossEval<T>> {
    if label >= protos.num_classes() {
        return Err(Error::IndexOutOfRange {
            index: label,
            len: protos.num_classes(),
        });
    }
    let (mu_hat, _) = normalize(mu_raw)?;
    let mut eval = match kind {
        LossKind::DotRegression => dr_loss(&mu_hat, protos.column(label))?,
        LossKind::CrossEntropy { scale } => ce_loss_fixed(&mu_hat, protos, label, T::lit(scale))?,
    };
    eval.grad_wrt_raw = Some(normalize_backward(mu_raw, &eval.grad_wrt_normalized)?);
    Ok(eval)
}
