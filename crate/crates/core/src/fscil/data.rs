//! Synthetic Gaussian-cluster data standing in for image benchmarks.

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::linalg;
use crate::rng::{self, streams};
use crate::scalar::Scalar;

use super::plan::SessionPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T> {
    pub plan: SessionPlan,
    pub r_mean: f64,
    pub sigma_noise: f64,
    /// Class means, indexed by label.
    pub means: Vec<Vec<T>>,
    /// Training samples per session, class-major.
    pub train: Vec<Vec<Sample<T>>>,
    /// Test samples per session of origin, class-major.
    pub test: Vec<Vec<Sample<T>>>,
}

impl<T: Scalar> SyntheticDataset<T> {
    /// Test pool of session `t`: every class seen so far.
    pub fn test_pool(&self, t: usize) -> impl Iterator<Item = &Sample<T>> + '_ {
        self.test[..=t].iter().flatten()
    }

    pub fn train_of_class(&self, class: usize) -> impl Iterator<Item = &Sample<T>> + '_ {
        self.train[self.plan.session_of(class)]
            .iter()
            .filter(move |s| s.label == class)
    }

    /// SHA-256 of every sample (label then little-endian `f64` coordinates), hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.train.iter().chain(&self.test).flatten() {
            h.update((s.label as u64).to_le_bytes());
            for &v in &s.x {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Class means uniform on the radius-`r_mean` sphere, samples `mean + σ·N(0, I)`.
pub fn generate_dataset<T: Scalar>(plan: &SessionPlan, r_mean: f64, sigma_noise: f64) -> Result<SyntheticDataset<T>> {
    plan.validate()?;
    if !(r_mean > 0.0) || !(sigma_noise >= 0.0) {
        return Err(crate::error::Error::InvalidConfig(format!(
            "need r_mean > 0 and sigma_noise >= 0, got {r_mean} and {sigma_noise}"
        )));
    }
    let k = plan.total_classes();
    let mut mean_rng = rng::seeded(plan.seed, streams::DATA_MEANS);
    let means: Vec<Vec<T>> = (0..k)
        .map(|_| {
            let mut v: Vec<T> = rng::gaussian_vec(&mut mean_rng, plan.input_dim);
            let n = linalg::norm(&v);
            linalg::scale(T::lit(r_mean) / n, &mut v);
            v
        })
        .collect();

    let sigma = T::lit(sigma_noise);
    let draw = |rng: &mut rng::Rng, class: usize| Sample {
        x: means[class]
            .iter()
            .map(|&m| m + sigma * rng::gaussian::<T>(rng))
            .collect(),
        label: class,
    };

    let mut train_rng = rng::seeded(plan.seed, streams::DATA_TRAIN);
    let mut test_rng = rng::seeded(plan.seed, streams::DATA_TEST);
    let mut train = Vec::with_capacity(plan.num_sessions());
    let mut test = Vec::with_capacity(plan.num_sessions());
    for t in 0..plan.num_sessions() {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for c in plan.session_classes(t) {
            for _ in 0..plan.train_per_class(c) {
                tr.push(draw(&mut train_rng, c));
            }
            for _ in 0..plan.test_per_class {
                te.push(draw(&mut test_rng, c));
            }
        }
        train.push(tr);
        test.push(te);
    }
    Ok(SyntheticDataset {
        plan: *plan,
        r_mean,
        sigma_noise,
        means,
        train,
        test,
    })
}
