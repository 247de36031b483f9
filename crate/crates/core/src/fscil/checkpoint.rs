//! `model.bin`: a versioned little-endian header followed by `f64` parameters.
//!
//! ```text
//! "NCFM" u32:version u8:classifier(0 etf, 1 learnable) u8:normalized u8:frozen
//! u64 × 7: input hidden feature_mid hidden_g dim num_classes active_classes
//! u64:etf_seed
//! f64 × n: backbone, projection, classifier columns (column-major)
//! u64:memory_len { u64:class f64 × feature_mid }*
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::etf::EtfPrototypes;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::serialize::{put_len, put_u32, put_u64, put_u8, ByteReader};

use super::model::{Backbone, Classifier, Dense, FscilModel, LearnableClassifier, Memory, Parameters, Projection};

const MAGIC: &[u8; 4] = b"NCFM";
pub const VERSION: u32 = 1;

fn put_values<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

fn put_params<T: Scalar, P: Parameters<T>>(out: &mut Vec<u8>, p: &P) {
    for t in p.tensors() {
        put_values(out, t);
    }
}

fn read_params<T: Scalar, P: Parameters<T>>(r: &mut ByteReader<'_>, p: &mut P) -> Result<()> {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = T::lit(r.f64()?);
        }
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(model: &FscilModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let (tag, normalized, seed) = match &model.classifier {
        Classifier::Etf(e) => (0, true, e.seed()),
        Classifier::Learnable(l) => (1, l.normalized_features, 0),
    };
    put_u8(&mut out, tag);
    put_u8(&mut out, normalized as u8);
    put_u8(&mut out, model.backbone_frozen as u8);
    for n in [
        model.backbone.input_dim(),
        model.backbone.l1.output_dim(),
        model.backbone.output_dim(),
        model.projection.l1.output_dim(),
        model.dim(),
        model.num_classes(),
        model.active_classes,
    ] {
        put_len(&mut out, n);
    }
    put_u64(&mut out, seed);
    put_params(&mut out, &model.backbone);
    put_params(&mut out, &model.projection);
    put_values(&mut out, model.classifier.prototypes().as_col_major());
    put_len(&mut out, model.memory.len());
    for (&c, h) in &model.memory {
        put_len(&mut out, c);
        put_values(&mut out, h);
    }
    out
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<FscilModel<T>> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let tag = r.u8()?;
    let normalized = r.u8()? != 0;
    let frozen = r.u8()? != 0;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.len()?;
    }
    let [input, hidden, mid, hidden_g, dim, k, active] = dims;
    let seed = r.u64()?;

    let mut backbone = Backbone {
        l1: Dense::zeros(input, hidden),
        l2: Dense::zeros(hidden, mid),
    };
    let mut projection = Projection {
        l1: Dense::zeros(mid, hidden_g),
        l2: Dense::zeros(hidden_g, dim),
    };
    read_params(&mut r, &mut backbone)?;
    read_params(&mut r, &mut projection)?;
    let mut columns = Matrix::zeros(dim, k);
    for v in columns.as_col_major_mut() {
        *v = T::lit(r.f64()?);
    }
    let classifier = match tag {
        0 => Classifier::Etf(EtfPrototypes::from_matrix_unchecked(columns, seed)),
        1 => Classifier::Learnable(LearnableClassifier {
            weights: columns,
            normalized_features: normalized,
        }),
        other => return Err(Error::Format(format!("unknown classifier tag {other}"))),
    };
    let mut model = FscilModel::new(backbone, projection, classifier)?;
    model.backbone_frozen = frozen;
    model.active_classes = active;

    let mut memory = Memory::new();
    for _ in 0..r.len()? {
        let c = r.len()?;
        let h = (0..mid).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<T>>>()?;
        memory.insert(c, h);
    }
    model.memory = memory;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &FscilModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<FscilModel<T>> {
    from_bytes(&std::fs::read(path)?)
}
