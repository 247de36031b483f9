use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label-space partition: `K₀` base classes then `T` sessions of `p` ways,
/// `q` shots each.
///
/// Classes are numbered in introduction order, so session `t > 0` owns
/// classes `K₀ + (t-1)p .. K₀ + tp` and those are also its ETF columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionPlan {
    pub input_dim: usize,
    pub base_classes: usize,
    pub incremental_sessions: usize,
    pub ways: usize,
    pub shots: usize,
    pub base_train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SessionPlan {
    fn default() -> Self {
        Self {
            input_dim: 20,
            base_classes: 6,
            incremental_sessions: 2,
            ways: 2,
            shots: 5,
            base_train_per_class: 50,
            test_per_class: 50,
            seed: 0,
        }
    }
}

impl SessionPlan {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("base_classes", self.base_classes),
            ("ways", self.ways),
            ("shots", self.shots),
            ("base_train_per_class", self.base_train_per_class),
            ("test_per_class", self.test_per_class),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("plan.{name} must be positive")));
        }
        if self.total_classes() < 2 {
            return Err(Error::InvalidConfig("the label space needs at least two classes".into()));
        }
        Ok(())
    }

    /// `K = K₀ + T·p`
    pub fn total_classes(&self) -> usize {
        self.base_classes + self.incremental_sessions * self.ways
    }

    pub fn num_sessions(&self) -> usize {
        self.incremental_sessions + 1
    }

    /// Classes introduced in session `t`.
    pub fn session_classes(&self, t: usize) -> std::ops::Range<usize> {
        if t == 0 {
            0..self.base_classes
        } else {
            let start = self.base_classes + (t - 1) * self.ways;
            start..start + self.ways
        }
    }

    /// Every class introduced in sessions `0..=t`.
    pub fn seen_classes(&self, t: usize) -> std::ops::Range<usize> {
        0..self.session_classes(t).end
    }

    pub fn session_of(&self, class: usize) -> usize {
        if class < self.base_classes {
            0
        } else {
            1 + (class - self.base_classes) / self.ways
        }
    }

    pub fn train_per_class(&self, class: usize) -> usize {
        if self.session_of(class) == 0 {
            self.base_train_per_class
        } else {
            self.shots
        }
    }
}
