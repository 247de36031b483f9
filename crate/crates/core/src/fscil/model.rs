//! Backbone `f`, projection head `g`, classifier, and class-mean memory.
//!
//! Reverse-mode gradients are written out by hand for this fixed topology:
//!
//! ```text
//! x ─ Dense ─ ReLU ─ Dense ─ ReLU ─▶ h ─ Dense ─ ReLU ─ Dense ─▶ μ ─ /‖μ‖ ─▶ μ̂
//! └────────────── backbone f ──────┘   └───── projection g ────┘
//! ```
//!
//! Gradient buffers reuse the parameter structs (a zeroed clone), so the
//! optimizer can walk parameters and gradients in lockstep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::EtfPrototypes;
use crate::linalg::{self, Matrix};
use crate::losses::{self};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

/// Fully connected layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Gaussian weights with variance `gain / input`, zero bias.
    pub fn gaussian(input: usize, output: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = T::lit((gain / input as f64).sqrt());
        let data = rng::gaussian_vec::<T>(rng, input * output)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Self {
            weight: Matrix::from_col_major(output, input, data),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.weight.matvec(x);
        linalg::axpy(T::one(), &self.bias, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    fn backward(&self, x: &[T], dy: &[T], grad: &mut Dense<T>) -> Vec<T> {
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                linalg::axpy(xj, dy, grad.weight.col_mut(j));
            }
        }
        linalg::axpy(T::one(), dy, &mut grad.bias);
        self.weight.matvec_t(dy)
    }

    fn tensors(&self) -> [&[T]; 2] {
        [self.weight.as_col_major(), &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut [T]; 2] {
        [self.weight.as_col_major_mut(), &mut self.bias]
    }
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&a| a.max(T::zero())).collect()
}

fn relu_backward<T: Scalar>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter()
        .zip(dy)
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect()
}

/// Flat access to parameter tensors, in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Two-layer ReLU network `input → hidden → feature_mid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
}

impl<T: Scalar> Parameters<T> for Backbone<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.l1.tensors().into_iter().chain(self.l2.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Backbone { l1, l2 } = self;
        l1.tensors_mut().into_iter().chain(l2.tensors_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    a1: Vec<T>,
    r1: Vec<T>,
    a2: Vec<T>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(input: usize, hidden: usize, feature_mid: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Dense::gaussian(input, hidden, 2.0, rng),
            l2: Dense::gaussian(hidden, feature_mid, 2.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: Dense::zeros(self.l1.input_dim(), self.l1.output_dim()),
            l2: Dense::zeros(self.l2.input_dim(), self.l2.output_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.l2.output_dim()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[T]) -> (Vec<T>, BackboneCache<T>) {
        let a1 = self.l1.forward(x);
        let r1 = relu(&a1);
        let a2 = self.l2.forward(&r1);
        let h = relu(&a2);
        (h, BackboneCache { a1, r1, a2 })
    }

    pub fn backward(&self, x: &[T], cache: &BackboneCache<T>, dh: &[T], grad: &mut Backbone<T>) {
        let da2 = relu_backward(&cache.a2, dh);
        let dr1 = self.l2.backward(&cache.r1, &da2, &mut grad.l2);
        let da1 = relu_backward(&cache.a1, &dr1);
        self.l1.backward(x, &da1, &mut grad.l1);
    }

    /// Little-endian `f64` encoding of every parameter, used to assert freezing.
    pub fn to_bytes(&self) -> Vec<u8> {
        params_to_bytes(self)
    }
}

/// Two-layer MLP head `feature_mid → hidden_g → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
}

impl<T: Scalar> Parameters<T> for Projection<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.l1.tensors().into_iter().chain(self.l2.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Projection { l1, l2 } = self;
        l1.tensors_mut().into_iter().chain(l2.tensors_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache<T> {
    a1: Vec<T>,
    r1: Vec<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn new(feature_mid: usize, hidden: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Dense::gaussian(feature_mid, hidden, 2.0, rng),
            l2: Dense::gaussian(hidden, dim, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: Dense::zeros(self.l1.input_dim(), self.l1.output_dim()),
            l2: Dense::zeros(self.l2.input_dim(), self.l2.output_dim()),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.l2.output_dim()
    }

    pub fn forward(&self, h: &[T]) -> Vec<T> {
        self.forward_cached(h).0
    }

    pub fn forward_cached(&self, h: &[T]) -> (Vec<T>, ProjectionCache<T>) {
        let a1 = self.l1.forward(h);
        let r1 = relu(&a1);
        let mu = self.l2.forward(&r1);
        (mu, ProjectionCache { a1, r1 })
    }

    /// Accumulates into `grad` and returns `∂L/∂h`.
    pub fn backward(&self, h: &[T], cache: &ProjectionCache<T>, dmu: &[T], grad: &mut Projection<T>) -> Vec<T> {
        let dr1 = self.l2.backward(&cache.r1, dmu, &mut grad.l2);
        let da1 = relu_backward(&cache.a1, &dr1);
        self.l1.backward(h, &da1, &mut grad.l1)
    }
}

/// Trainable linear classifier used by the ablation baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableClassifier<T> {
    /// `d × K`, column `k` is the prototype of class `k`.
    pub weights: Matrix<T>,
    /// Logits use `μ̂` when true, raw `μ` otherwise.
    pub normalized_features: bool,
}

impl<T: Scalar> Parameters<T> for LearnableClassifier<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.weights.as_col_major()]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weights.as_col_major_mut()]
    }
}

impl<T: Scalar> LearnableClassifier<T> {
    /// Columns drawn i.i.d. `N(0, I/d)`.
    pub fn new(dim: usize, num_classes: usize, normalized_features: bool, rng: &mut Rng) -> Self {
        let std = T::lit(1.0 / (dim as f64).sqrt());
        let data = rng::gaussian_vec::<T>(rng, dim * num_classes)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Self {
            weights: Matrix::from_col_major(dim, num_classes, data),
            normalized_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier<T> {
    Etf(EtfPrototypes<T>),
    Learnable(LearnableClassifier<T>),
}

impl<T: Scalar> Classifier<T> {
    pub fn num_classes(&self) -> usize {
        self.prototypes().cols()
    }

    /// Prototype matrix, `d × K`.
    pub fn prototypes(&self) -> &Matrix<T> {
        match self {
            Classifier::Etf(e) => e.matrix(),
            Classifier::Learnable(l) => &l.weights,
        }
    }

    pub fn is_etf(&self) -> bool {
        matches!(self, Classifier::Etf(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub hidden: usize,
    pub feature_mid: usize,
    pub hidden_g: usize,
    pub dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature_mid: 32,
            hidden_g: 32,
            dim: 16,
        }
    }
}

/// Class-mean memory of intermediate backbone features.
pub type Memory<T> = BTreeMap<usize, Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct FscilModel<T> {
    pub backbone: Backbone<T>,
    pub projection: Projection<T>,
    pub classifier: Classifier<T>,
    pub memory: Memory<T>,
    /// Set once the base session completes.
    pub backbone_frozen: bool,
    /// Classes `0..active_classes` have been introduced so far.
    pub active_classes: usize,
}

impl<T: Scalar> FscilModel<T> {
    pub fn new(backbone: Backbone<T>, projection: Projection<T>, classifier: Classifier<T>) -> Result<Self> {
        if backbone.output_dim() != projection.l1.input_dim() {
            return Err(Error::ShapeMismatch("backbone output does not feed the projection".into()));
        }
        if projection.output_dim() != classifier.prototypes().rows() {
            return Err(Error::ShapeMismatch("projection output does not match classifier dim".into()));
        }
        Ok(Self {
            backbone,
            projection,
            classifier,
            memory: Memory::new(),
            backbone_frozen: false,
            active_classes: 0,
        })
    }

    pub fn init(input_dim: usize, shape: ModelShape, classifier: Classifier<T>, rng: &mut Rng) -> Result<Self> {
        let backbone = Backbone::new(input_dim, shape.hidden, shape.feature_mid, rng);
        let projection = Projection::new(shape.feature_mid, shape.hidden_g, shape.dim, rng);
        Self::new(backbone, projection, classifier)
    }

    pub fn dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// `(h, μ̂)` for input `x`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let h = self.backbone.forward(x);
        let (mu_hat, _) = losses::normalize(&self.projection.forward(&h))?;
        Ok((h, mu_hat))
    }

    /// Classes the argmax ranges over: the whole label space for the fixed
    /// ETF, the introduced classes for a learnable classifier.
    pub fn scored_classes(&self) -> usize {
        match self.classifier {
            Classifier::Etf(_) => self.num_classes(),
            Classifier::Learnable(_) => self.active_classes.max(1).min(self.num_classes()),
        }
    }

    /// `argmax_k ⟨μ̂, w_k⟩`, lowest index on ties.
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        let (_, mu_hat) = self.forward(x)?;
        Ok(self.predict_feature(&mu_hat))
    }

    pub fn predict_feature(&self, mu_hat: &[T]) -> usize {
        let protos = self.classifier.prototypes();
        let scores: Vec<T> = (0..self.scored_classes())
            .map(|k| linalg::dot(mu_hat, protos.col(k)))
            .collect();
        linalg::argmax(&scores).unwrap_or(0)
    }
}

pub(crate) fn params_to_bytes<T: Scalar, P: Parameters<T>>(p: &P) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * p.num_parameters());
    for t in p.tensors() {
        for &v in t {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}
