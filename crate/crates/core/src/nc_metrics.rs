//! Neural-collapse diagnostics over feature dumps.
//!
//! All averages are unweighted over the stated index set: class means over
//! samples, `Σ_W` over classes, cross-class cosines over ordered pairs
//! `k ≠ k'`. The global mean is taken over the sample pool of whatever class
//! set is requested, so a scope's statistics depend only on that scope.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;
use crate::serialize::{self, ByteReader};

const DUMP_MAGIC: &[u8; 4] = b"NCFD";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

/// Which classes a statistic is computed over, relative to a session `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Classes introduced in session `t` only.
    PerSession,
    /// Every class introduced in sessions `0..=t`.
    Accumulate,
    /// Base-session classes.
    BaseOnly,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::PerSession => "per-session",
            Scope::Accumulate => "accumulate",
            Scope::BaseOnly => "base-only",
        }
    }

    pub fn includes(self, origin: usize, t: usize) -> bool {
        match self {
            Scope::PerSession => origin == t,
            Scope::Accumulate => origin <= t,
            Scope::BaseOnly => origin == 0,
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-session" | "each" => Ok(Scope::PerSession),
            "accumulate" => Ok(Scope::Accumulate),
            "base-only" | "base" => Ok(Scope::BaseOnly),
            other => Err(Error::InvalidConfig(format!("unknown scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord<T> {
    pub vector: Vec<T>,
    pub label: usize,
    /// Session that introduced the record's class.
    pub session: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump<T> {
    pub dim: usize,
    pub records: Vec<FeatureRecord<T>>,
}

impl<T: Scalar> FeatureDump<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: FeatureRecord<T>) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "record of length {} in a {}-dimensional dump",
                record.vector.len(),
                self.dim
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Latest session of origin present in the dump.
    pub fn last_session(&self) -> Option<usize> {
        self.records.iter().map(|r| r.session).max()
    }

    /// Records of `split` whose class belongs to `scope` at session `t`,
    /// together with the sorted class set they span.
    pub fn select(&self, scope: Scope, split: Split, t: usize) -> (FeatureDump<T>, Vec<usize>) {
        let records: Vec<FeatureRecord<T>> = self
            .records
            .iter()
            .filter(|r| r.split == split && scope.includes(r.session, t))
            .cloned()
            .collect();
        let classes: BTreeSet<usize> = records.iter().map(|r| r.label).collect();
        (
            FeatureDump {
                dim: self.dim,
                records,
            },
            classes.into_iter().collect(),
        )
    }

    pub fn scaled(&self, factor: T) -> Self {
        self.map_vectors(|v| v.iter().map(|&x| x * factor).collect())
    }

    pub fn map_vectors(&self, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| FeatureRecord {
                vector: f(&r.vector),
                ..r.clone()
            })
            .collect();
        Self {
            dim: self.dim,
            records,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.records.len() * (9 + 8 * self.dim));
        out.extend_from_slice(DUMP_MAGIC);
        serialize::put_u32(&mut out, DUMP_VERSION);
        serialize::put_u32(&mut out, self.dim as u32);
        serialize::put_len(&mut out, self.records.len());
        for r in &self.records {
            serialize::put_u32(&mut out, r.label as u32);
            serialize::put_u32(&mut out, r.session as u32);
            serialize::put_u8(
                &mut out,
                match r.split {
                    Split::Train => 0,
                    Split::Test => 1,
                },
            );
            for &v in &r.vector {
                serialize::put_f64(&mut out, v.to_f64_lossy());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        if rd.bytes(4)? != DUMP_MAGIC {
            return Err(Error::Format("not a feature dump (bad magic)".into()));
        }
        let version = rd.u32()?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported feature dump version {version}")));
        }
        let dim = rd.u32()? as usize;
        let count = rd.len()?;
        let mut dump = FeatureDump::new(dim);
        for _ in 0..count {
            let label = rd.u32()? as usize;
            let session = rd.u32()? as usize;
            let split = match rd.u8()? {
                0 => Split::Train,
                1 => Split::Test,
                other => return Err(Error::Format(format!("bad split tag {other}"))),
            };
            let vector = (0..dim).map(|_| rd.f64().map(T::lit)).collect::<Result<Vec<T>>>()?;
            dump.records.push(FeatureRecord {
                vector,
                label,
                session,
                split,
            });
        }
        if !rd.is_empty() {
            return Err(Error::Format("trailing bytes after feature dump".into()));
        }
        Ok(dump)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans<T> {
    /// Sorted class ids; `means[i]` belongs to `classes[i]`.
    pub classes: Vec<usize>,
    pub means: Vec<Vec<T>>,
    pub counts: Vec<usize>,
    /// Mean over every sample in the pool.
    pub global: Vec<T>,
}

impl<T: Scalar> ClassMeans<T> {
    pub fn mean_of(&self, class: usize) -> Option<&[T]> {
        self.classes
            .binary_search(&class)
            .ok()
            .map(|i| self.means[i].as_slice())
    }
}

fn sorted_unique(class_set: &[usize]) -> Vec<usize> {
    class_set.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn class_means<T: Scalar>(dump: &FeatureDump<T>, class_set: &[usize]) -> Result<ClassMeans<T>> {
    let classes = sorted_unique(class_set);
    let mut sums = vec![vec![T::zero(); dump.dim]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    let mut global = vec![T::zero(); dump.dim];
    let mut pool = 0usize;
    for r in &dump.records {
        if let Ok(i) = classes.binary_search(&r.label) {
            linalg::axpy(T::one(), &r.vector, &mut sums[i]);
            linalg::axpy(T::one(), &r.vector, &mut global);
            counts[i] += 1;
            pool += 1;
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(classes[i]));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        linalg::scale(T::one() / T::from_usize_lossy(c), s);
    }
    if pool > 0 {
        linalg::scale(T::one() / T::from_usize_lossy(pool), &mut global);
    }
    Ok(ClassMeans {
        classes,
        means: sums,
        counts,
        global,
    })
}

fn check_protos<T: Scalar>(protos: &Matrix<T>, dim: usize, classes: &[usize]) -> Result<()> {
    if protos.rows() != dim {
        return Err(Error::ShapeMismatch(format!(
            "prototype dim {} vs feature dim {dim}",
            protos.rows()
        )));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= protos.cols()) {
        return Err(Error::IndexOutOfRange {
            index: c,
            len: protos.cols(),
        });
    }
    Ok(())
}

/// `(Avg_{k≠k'} cos∠(m_k − m_G, w_k'), Avg_k cos∠(m_k − m_G, w_k))`.
///
/// `protos` is indexed by class label; its columns need not be unit norm.
/// The cross-class average is NaN for a single-class set (no pairs).
pub fn alignment_cosines<T: Scalar>(
    dump: &FeatureDump<T>,
    protos: &Matrix<T>,
    class_set: &[usize],
) -> Result<(f64, f64)> {
    let cm = class_means(dump, class_set)?;
    check_protos(protos, dump.dim, &cm.classes)?;
    let centered: Vec<Vec<T>> = cm
        .classes
        .iter()
        .zip(&cm.means)
        .map(|(&c, m)| {
            let v = linalg::sub(m, &cm.global);
            if linalg::norm(&v) <= T::lit(1e-12) {
                Err(Error::DegenerateMean(c))
            } else {
                Ok(v)
            }
        })
        .collect::<Result<_>>()?;
    let cos = |v: &[T], c: usize| -> Result<f64> {
        linalg::cosine(v, protos.col(c))
            .map(|x| x.to_f64_lossy())
            .ok_or_else(|| Error::ShapeMismatch(format!("prototype {c} is zero")))
    };
    let mut cross = 0.0;
    let mut same = 0.0;
    let mut pairs = 0usize;
    for (i, v) in centered.iter().enumerate() {
        for (j, &c) in cm.classes.iter().enumerate() {
            if i == j {
                same += cos(v, c)?;
            } else {
                cross += cos(v, c)?;
                pairs += 1;
            }
        }
    }
    let n = cm.classes.len() as f64;
    let cross = if pairs == 0 { f64::NAN } else { cross / pairs as f64 };
    Ok((cross, same / n))
}

/// `tr(Σ_W) / tr(Σ_B)` via sums of squared norms.
pub fn trace_ratio<T: Scalar>(dump: &FeatureDump<T>, class_set: &[usize]) -> Result<f64> {
    let cm = class_means(dump, class_set)?;
    if cm.classes.len() < 2 {
        return Err(Error::InvalidConfig("trace ratio needs at least two classes".into()));
    }
    let mut within = vec![T::zero(); cm.classes.len()];
    for r in &dump.records {
        if let Ok(i) = cm.classes.binary_search(&r.label) {
            within[i] += linalg::norm_sq(&linalg::sub(&r.vector, &cm.means[i]));
        }
    }
    let nk = T::from_usize_lossy(cm.classes.len());
    let tr_w: T = within
        .iter()
        .zip(&cm.counts)
        .map(|(&w, &c)| w / T::from_usize_lossy(c))
        .sum::<T>()
        / nk;
    let tr_b: T = cm
        .means
        .iter()
        .map(|m| linalg::norm_sq(&linalg::sub(m, &cm.global)))
        .sum::<T>()
        / nk;
    let tr_b = tr_b.to_f64_lossy();
    if !(tr_b > 1e-12) {
        return Err(Error::DegenerateBetween(tr_b));
    }
    Ok(tr_w.to_f64_lossy() / tr_b)
}

/// Fraction of samples whose inner-product argmax over prototypes equals the
/// distance argmin over empirical class means, both restricted to `class_set`.
pub fn nc4_agreement<T: Scalar>(
    dump: &FeatureDump<T>,
    protos: &Matrix<T>,
    class_set: &[usize],
) -> Result<f64> {
    let cm = class_means(dump, class_set)?;
    check_protos(protos, dump.dim, &cm.classes)?;
    let mut agree = 0usize;
    let mut total = 0usize;
    for r in &dump.records {
        if cm.classes.binary_search(&r.label).is_err() {
            continue;
        }
        let scores: Vec<T> = cm.classes.iter().map(|&c| linalg::dot(&r.vector, protos.col(c))).collect();
        let dists: Vec<T> = cm
            .means
            .iter()
            .map(|m| linalg::norm_sq(&linalg::sub(&r.vector, m)))
            .collect();
        if linalg::argmax(&scores) == linalg::argmin(&dists) {
            agree += 1;
        }
        total += 1;
    }
    Ok(if total == 0 { 1.0 } else { agree as f64 / total as f64 })
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub split: Split,
    pub session: usize,
    pub num_classes: usize,
    pub cross_class_cosine: f64,
    pub same_class_cosine: f64,
    pub trace_ratio: f64,
    pub nc4_agreement: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "scope,split,session,num_classes,cross_class_cosine,same_class_cosine,trace_ratio,nc4_agreement";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scope.as_str(),
            self.split.as_str(),
            self.session,
            self.num_classes,
            serialize::fmt_f64(self.cross_class_cosine),
            serialize::fmt_f64(self.same_class_cosine),
            serialize::fmt_f64(self.trace_ratio),
            serialize::fmt_f64(self.nc4_agreement),
        )
    }
}

/// All four diagnostics for one `(scope, split, session)` cell.
///
/// A single-class cell reports a NaN cross-class cosine and trace ratio.
pub fn report<T: Scalar>(
    dump: &FeatureDump<T>,
    protos: &Matrix<T>,
    scope: Scope,
    split: Split,
    t: usize,
) -> Result<MetricsReport> {
    let (pool, classes) = dump.select(scope, split, t);
    if classes.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no {} records in scope {} at session {t}",
            split.as_str(),
            scope.as_str()
        )));
    }
    let (cross, same) = alignment_cosines(&pool, protos, &classes)?;
    let ratio = if classes.len() >= 2 {
        trace_ratio(&pool, &classes)?
    } else {
        f64::NAN
    };
    Ok(MetricsReport {
        scope,
        split,
        session: t,
        num_classes: classes.len(),
        cross_class_cosine: cross,
        same_class_cosine: same,
        trace_ratio: ratio,
        nc4_agreement: nc4_agreement(&pool, protos, &classes)?,
    })
}

/// Report rows for every session present in the dump (one row for base-only).
pub fn report_all<T: Scalar>(
    dump: &FeatureDump<T>,
    protos: &Matrix<T>,
    scope: Scope,
    split: Split,
) -> Result<Vec<MetricsReport>> {
    let last = dump
        .last_session()
        .ok_or_else(|| Error::InvalidConfig("empty feature dump".into()))?;
    let sessions: Vec<usize> = match scope {
        Scope::BaseOnly => vec![last],
        _ => (0..=last).collect(),
    };
    sessions.into_iter().map(|t| report(dump, protos, scope, split, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etf::make_etf;

    fn rec(v: &[f64], label: usize, session: usize) -> FeatureRecord<f64> {
        FeatureRecord {
            vector: v.to_vec(),
            label,
            session,
            split: Split::Test,
        }
    }

    #[test]
    fn single_feature_means_and_symmetric_global() {
        let mut d = FeatureDump::new(2);
        d.push(rec(&[1.0, 2.0], 0, 0)).unwrap();
        d.push(rec(&[-1.0, -2.0], 1, 0)).unwrap();
        let cm = class_means(&d, &[0, 1]).unwrap();
        assert_eq!(cm.mean_of(0).unwrap(), &[1.0, 2.0]);
        assert_eq!(cm.global, vec![0.0, 0.0]);
        assert!(matches!(class_means(&d, &[0, 2]), Err(Error::EmptyClass(2))));
    }

    #[test]
    fn two_class_collapse_has_cross_cosine_minus_one() {
        let e = make_etf::<f64>(3, 2, 9).unwrap();
        let mut d = FeatureDump::new(3);
        for k in 0..2 {
            d.push(rec(e.column(k), k, 0)).unwrap();
        }
        let (cross, same) = alignment_cosines(&d, e.matrix(), &[0, 1]).unwrap();
        assert!((cross + 1.0).abs() < 1e-12 && (same - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_within_scatter_gives_zero_ratio() {
        let mut d = FeatureDump::new(2);
        for _ in 0..3 {
            d.push(rec(&[1.0, 0.0], 0, 0)).unwrap();
            d.push(rec(&[0.0, 1.0], 1, 0)).unwrap();
        }
        assert_eq!(trace_ratio(&d, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_cases() {
        let mut d = FeatureDump::new(2);
        d.push(rec(&[1.0, 0.0], 0, 0)).unwrap();
        d.push(rec(&[1.0, 0.0], 1, 0)).unwrap();
        assert!(matches!(trace_ratio(&d, &[0, 1]), Err(Error::DegenerateBetween(_))));
        let p = Matrix::<f64>::identity(2);
        assert!(matches!(alignment_cosines(&d, &p, &[0, 1]), Err(Error::DegenerateMean(0))));
        assert!(d.push(rec(&[1.0], 0, 0)).is_err());
    }

    #[test]
    fn nc4_single_class_is_vacuous() {
        let mut d = FeatureDump::new(2);
        d.push(rec(&[0.3, -0.2], 4, 1)).unwrap();
        d.push(rec(&[-0.5, 0.1], 4, 1)).unwrap();
        let p = Matrix::from_row_major(2, 5, &[0.0; 10]);
        assert_eq!(nc4_agreement(&d, &p, &[4]).unwrap(), 1.0);
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("accumulate".parse::<Scope>().unwrap(), Scope::Accumulate);
        assert_eq!("per-session".parse::<Scope>().unwrap(), Scope::PerSession);
        assert_eq!("base-only".parse::<Scope>().unwrap(), Scope::BaseOnly);
        assert!("all".parse::<Scope>().is_err());
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
    }

    #[test]
    fn dump_bytes_round_trip_and_reject_garbage() {
        let mut d = FeatureDump::new(2);
        d.push(rec(&[0.25, -1.5], 3, 1)).unwrap();
        d.push(FeatureRecord {
            split: Split::Train,
            ..rec(&[1e-300, 7.0], 0, 0)
        })
        .unwrap();
        let bytes = d.to_bytes();
        assert_eq!(FeatureDump::<f64>::from_bytes(&bytes).unwrap(), d);
        assert!(FeatureDump::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureDump::<f64>::from_bytes(&bad).is_err());
    }
}
