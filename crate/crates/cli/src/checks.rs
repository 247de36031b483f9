//! Acceptance checks evaluated by `repro full`.

use ncfscil::etf::{self, EtfPrototypes};
use ncfscil::fscil::model::Parameters;
use ncfscil::fscil::train::{self, Gradients, Input};
use ncfscil::fscil::{AblationResult, Arm, ArmRun, Backbone, Classifier, FscilModel, LearnableClassifier, Projection};
use ncfscil::fscil::model::Dense;
use ncfscil::linalg;
use ncfscil::losses::{self, LossKind};
use ncfscil::nc_metrics::{self, FeatureDump, FeatureRecord, Scope, Split};
use ncfscil::rng::{self, Rng};
use ncfscil::Result;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::LpReport;

/// Thresholds pinned in `expected/acceptance.json`.
pub const THRESHOLDS_JSON: &str = include_str!("../../../expected/acceptance.json");

#[derive(Debug, Clone, Deserialize)]
pub struct Thresholds {
    pub etf: EtfThresholds,
    pub gradients: GradientThresholds,
    pub lp_dr: LpThresholds,
    pub lp_ce: LpThresholds,
    pub ablation: AblationThresholds,
    pub collapse_fixture: FixtureThresholds,
    pub trend: TrendThresholds,
    pub session_one: SessionOneThresholds,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EtfThresholds {
    pub cases: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub sum_tol: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GradientThresholds {
    pub draws: usize,
    pub shapes: Vec<(usize, usize)>,
    pub step: f64,
    pub loss_rel_tol: f64,
    pub model_rel_tol: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LpThresholds {
    pub gap_tol: f64,
    #[serde(default)]
    pub kkt_tol: Option<f64>,
    #[serde(default)]
    pub prob_tol: Option<f64>,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AblationThresholds {
    pub seeds: Vec<u64>,
    pub min_seeds: usize,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureThresholds {
    pub dim: usize,
    pub classes: usize,
    pub copies: usize,
    pub tol: f64,
    pub trace_tol: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TrendThresholds {
    pub flatness_ratio: f64,
    pub min_seeds: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SessionOneThresholds {
    pub min_novel_accuracy: f64,
    pub max_base_drop: f64,
}

impl Thresholds {
    pub fn pinned() -> Self {
        serde_json::from_str(THRESHOLDS_JSON).expect("expected/acceptance.json is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: String,
    pub passed: bool,
    pub summary: String,
    pub details: serde_json::Value,
}

impl Criterion {
    fn new(id: &str, passed: bool, summary: String, details: serde_json::Value) -> Self {
        Self {
            id: id.into(),
            passed,
            summary,
            details,
        }
    }
}

pub fn etf_geometry(cases: &[(usize, usize)], seeds: &[u64], th: &EtfThresholds) -> Result<Criterion> {
    let (mut worst_norm, mut worst_gram, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    let mut passed = true;
    for &(d, k) in cases {
        for &seed in seeds {
            let cert = etf::verify_etf(&etf::make_etf::<f64>(d, k, seed)?, th.tol);
            passed &= cert.passed && cert.sum_norm <= th.sum_tol;
            worst_norm = worst_norm.max(cert.max_norm_error);
            worst_gram = worst_gram.max(cert.max_gram_error);
            worst_sum = worst_sum.max(cert.sum_norm);
        }
    }
    Ok(Criterion::new(
        "etf_geometry",
        passed,
        format!("norm {worst_norm:.2e}, gram {worst_gram:.2e}, column sum {worst_sum:.2e}"),
        json!({"max_norm_error": worst_norm, "max_gram_error": worst_gram, "max_sum_norm": worst_sum}),
    ))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = linalg::norm(&linalg::sub(a, b));
    diff / linalg::norm(a).max(linalg::norm(b)).max(1e-12)
}

fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = x[i];
            x[i] = v + h;
            let up = f(&x);
            x[i] = v - h;
            let down = f(&x);
            x[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error of the normalized-feature loss gradients.
pub fn loss_gradient_error(th: &GradientThresholds, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut r = rng::seeded(seed, 0x4744);
    for (i, &(d, k)) in th.shapes.iter().enumerate() {
        let protos = etf::make_etf::<f64>(d, k, seed + i as u64)?;
        for draw in 0..th.draws {
            let mu: Vec<f64> = rng::gaussian_vec(&mut r, d);
            let label = draw % k;
            for loss in [LossKind::DotRegression, LossKind::CrossEntropy { scale: losses::DEFAULT_CE_SCALE }] {
                let value = |m: &[f64]| -> f64 {
                    let (mh, _) = losses::normalize(m).expect("nonzero");
                    match loss {
                        LossKind::DotRegression => losses::dr_loss(&mh, protos.column(label)).expect("unit").value,
                        LossKind::CrossEntropy { scale } => {
                            losses::ce_loss_fixed(&mh, &protos, label, scale).expect("label").value
                        }
                    }
                };
                let analytic = losses::eval_raw(loss, &mu, &protos, label)?;
                let fd = central_difference(value, &mu, th.step);
                worst = worst.max(rel_err(analytic.grad_wrt_raw.as_deref().unwrap_or(&[]), &fd));
            }
        }
    }
    Ok(worst)
}

fn tiny_dense(input: usize, output: usize, r: &mut Rng) -> Dense<f64> {
    let mut l = Dense::gaussian(input, output, 2.0, r);
    l.bias = rng::gaussian_vec::<f64>(r, output).into_iter().map(|v| 0.3 * v).collect();
    l
}

/// A model with every width ≤ 4.
pub fn tiny_model(arm: Arm, seed: u64) -> Result<(FscilModel<f64>, LossKind)> {
    let mut r = rng::seeded(seed, 0x544d);
    let backbone = Backbone {
        l1: tiny_dense(3, 4, &mut r),
        l2: tiny_dense(4, 4, &mut r),
    };
    let projection = Projection {
        l1: tiny_dense(4, 4, &mut r),
        l2: tiny_dense(4, 3, &mut r),
    };
    let (classifier, loss) = match arm {
        Arm::EtfDr => (Classifier::Etf(etf::make_etf(3, 3, seed)?), LossKind::DotRegression),
        Arm::EtfCe => (Classifier::Etf(etf::make_etf(3, 3, seed)?), LossKind::CrossEntropy { scale: 4.0 }),
        Arm::LearnableCe => (
            Classifier::Learnable(LearnableClassifier::new(3, 3, seed.is_multiple_of(2), &mut r)),
            LossKind::CrossEntropy { scale: 4.0 },
        ),
    };
    let mut model = FscilModel::new(backbone, projection, classifier)?;
    model.active_classes = 3;
    Ok((model, loss))
}

fn flat<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.tensors().concat()
}

fn set_flat<P: Parameters<f64>>(p: &mut P, v: &[f64]) {
    let mut i = 0;
    for t in p.tensors_mut() {
        t.copy_from_slice(&v[i..i + t.len()]);
        i += t.len();
    }
}

fn model_params(m: &FscilModel<f64>) -> Vec<f64> {
    let mut v = flat(&m.backbone);
    v.extend(flat(&m.projection));
    if let Classifier::Learnable(l) = &m.classifier {
        v.extend(flat(l));
    }
    v
}

fn set_model_params(m: &mut FscilModel<f64>, v: &[f64]) {
    let nb = m.backbone.num_parameters();
    let np = m.projection.num_parameters();
    set_flat(&mut m.backbone, &v[..nb]);
    set_flat(&mut m.projection, &v[nb..nb + np]);
    if let Classifier::Learnable(l) = &mut m.classifier {
        set_flat(l, &v[nb + np..]);
    }
}

fn gradient_params(g: &Gradients<f64>) -> Vec<f64> {
    let mut v = g.backbone.as_ref().map(flat).unwrap_or_default();
    v.extend(flat(&g.projection));
    if let Some(c) = &g.classifier {
        v.extend(flat(c));
    }
    v
}

/// Loss of the model on one sample, computed from the forward pass only.
fn forward_loss(model: &FscilModel<f64>, x: &[f64], label: usize, loss: LossKind) -> f64 {
    let h = model.backbone.forward(x);
    let mu = model.projection.forward(&h);
    let (mu_hat, _) = losses::normalize(&mu).expect("nonzero feature");
    match (&model.classifier, loss) {
        (Classifier::Etf(e), LossKind::DotRegression) => losses::dr_loss(&mu_hat, e.column(label)).expect("unit").value,
        (Classifier::Etf(e), LossKind::CrossEntropy { scale }) => {
            losses::ce_loss_fixed(&mu_hat, e, label, scale).expect("label").value
        }
        (Classifier::Learnable(l), LossKind::CrossEntropy { scale }) => {
            let (f, s) = if l.normalized_features { (mu_hat, scale) } else { (mu, 1.0) };
            losses::ce_loss_with_matrix(&f, &l.weights, label, s).expect("label").value
        }
        (Classifier::Learnable(_), LossKind::DotRegression) => f64::NAN,
    }
}

/// Worst relative error of the full-model parameter gradient.
pub fn model_gradient_error(th: &GradientThresholds, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut r = rng::seeded(seed, 0x4d47);
    for draw in 0..th.draws {
        let arm = Arm::ALL[draw % 3];
        let (model, loss) = tiny_model(arm, seed.wrapping_add(draw as u64))?;
        let x: Vec<f64> = rng::gaussian_vec(&mut r, 3);
        let label = draw % 3;
        let mut grads = Gradients::zeros(&model, true);
        train::accumulate_gradient(&model, Input::Raw(&x), label, loss, &mut grads)?;
        let theta = model_params(&model);
        let mut probe = model.clone();
        let fd = central_difference(
            |p| {
                set_model_params(&mut probe, p);
                forward_loss(&probe, &x, label, loss)
            },
            &theta,
            th.step,
        );
        worst = worst.max(rel_err(&gradient_params(&grads), &fd));
    }
    Ok(worst)
}

pub fn gradients(th: &GradientThresholds, seed: u64) -> Result<Criterion> {
    let loss_err = loss_gradient_error(th, seed)?;
    let model_err = model_gradient_error(th, seed)?;
    Ok(Criterion::new(
        "gradients",
        loss_err <= th.loss_rel_tol && model_err <= th.model_rel_tol,
        format!("loss rel err {loss_err:.2e}, full model rel err {model_err:.2e}"),
        json!({"loss_rel_err": loss_err, "model_rel_err": model_err}),
    ))
}

pub fn lp_dr(report: &LpReport, th: &LpThresholds) -> Criterion {
    let r = &report.report;
    let worst = r.max_norm_gap.max(r.max_self_gap).max(r.max_cross_gap);
    Criterion::new(
        "lp_dr",
        worst <= th.gap_tol,
        format!(
            "norm gap {:.2e}, self gap {:.2e}, cross gap {:.2e}",
            r.max_norm_gap, r.max_self_gap, r.max_cross_gap
        ),
        serde_json::to_value(r).unwrap_or_default(),
    )
}

pub fn lp_ce(report: &LpReport, th: &LpThresholds) -> Criterion {
    let r = &report.report;
    let worst = r.max_norm_gap.max(r.max_self_gap).max(r.max_cross_gap);
    let kkt_ok = th.kkt_tol.is_none_or(|t| r.max_kkt_residual <= t);
    let prob_ok = th.prob_tol.is_none_or(|t| report.offclass_probability_spread <= t);
    let mut details = serde_json::to_value(r).unwrap_or_default();
    details["offclass_probability_spread"] = json!(report.offclass_probability_spread);
    Criterion::new(
        "lp_ce",
        worst <= th.gap_tol && kkt_ok && prob_ok,
        format!(
            "worst gap {worst:.2e}, kkt {:.2e}, off-class spread {:.2e}",
            r.max_kkt_residual, report.offclass_probability_spread
        ),
        details,
    )
}

fn arm_pair(res: &AblationResult<f64>, a: Arm) -> &ArmRun<f64> {
    res.run(a).expect("ablation ran all arms")
}

pub fn ablation_ordering(results: &[(u64, AblationResult<f64>)], th: &AblationThresholds) -> Criterion {
    let (mut dr_ce, mut ce_l, mut pd) = (0, 0, 0);
    for (_, res) in results {
        let l = arm_pair(res, Arm::LearnableCe);
        let ce = arm_pair(res, Arm::EtfCe);
        let dr = arm_pair(res, Arm::EtfDr);
        dr_ce += (dr.final_accuracy() >= ce.final_accuracy()) as usize;
        ce_l += (ce.final_accuracy() >= l.final_accuracy()) as usize;
        pd += (dr.performance_drop() <= l.performance_drop()) as usize;
    }
    let need = th.min_seeds;
    Criterion::new(
        "ablation_ordering",
        dr_ce >= need && ce_l >= need && pd >= need,
        format!(
            "of {} seeds: final etf_dr>=etf_ce {dr_ce}, etf_ce>=learnable_ce {ce_l}, pd etf_dr<=learnable_ce {pd}",
            results.len()
        ),
        json!({"etf_dr_ge_etf_ce": dr_ce, "etf_ce_ge_learnable_ce": ce_l, "pd_etf_dr_le_learnable_ce": pd}),
    )
}

/// Dump with `copies` train and test features sitting on each prototype.
pub fn collapse_dump(protos: &EtfPrototypes<f64>, copies: usize) -> Result<FeatureDump<f64>> {
    let mut dump = FeatureDump::new(protos.dim());
    for k in 0..protos.num_classes() {
        for split in [Split::Train, Split::Test] {
            for _ in 0..copies {
                dump.push(FeatureRecord {
                    vector: protos.column(k).to_vec(),
                    label: k,
                    session: 0,
                    split,
                })?;
            }
        }
    }
    Ok(dump)
}

pub fn collapse_fixture(th: &FixtureThresholds, seed: u64) -> Result<Criterion> {
    let protos = etf::make_etf::<f64>(th.dim, th.classes, seed)?;
    let dump = collapse_dump(&protos, th.copies)?;
    let r = nc_metrics::report(&dump, protos.matrix(), Scope::Accumulate, Split::Test, 0)?;
    let off = -1.0 / (th.classes as f64 - 1.0);
    let passed = (r.same_class_cosine - 1.0).abs() <= th.tol
        && (r.cross_class_cosine - off).abs() <= th.tol
        && r.trace_ratio <= th.trace_tol
        && r.nc4_agreement == 1.0;
    Ok(Criterion::new(
        "collapse_fixture",
        passed,
        format!(
            "same {:.12}, cross {:.12}, trace {:.2e}, nc4 {}",
            r.same_class_cosine, r.cross_class_cosine, r.trace_ratio, r.nc4_agreement
        ),
        serde_json::to_value(&r).unwrap_or_default(),
    ))
}

/// `max − min` of the accumulate-scope cross-class cosine over sessions.
pub fn cosine_range(run: &ArmRun<f64>, split: Split) -> f64 {
    let series: Vec<f64> = (0..run.sessions.len())
        .filter_map(|t| run.metric(Scope::Accumulate, split, t).map(|m| m.cross_class_cosine))
        .collect();
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Base-class trace ratio at the last session over session 0.
pub fn trace_growth(run: &ArmRun<f64>, split: Split) -> f64 {
    let last = run.sessions.len() - 1;
    let at = |t| run.metric(Scope::BaseOnly, split, t).map_or(f64::NAN, |m| m.trace_ratio);
    at(last) / at(0)
}

pub fn collapse_trend(results: &[(u64, AblationResult<f64>)], th: &TrendThresholds) -> Criterion {
    let (mut flat, mut growth) = (0, 0);
    let mut per_seed = Vec::new();
    for (seed, res) in results {
        let l = arm_pair(res, Arm::LearnableCe);
        let dr = arm_pair(res, Arm::EtfDr);
        let (rl, rd) = (cosine_range(l, Split::Test), cosine_range(dr, Split::Test));
        let (gl, gd) = (trace_growth(l, Split::Test), trace_growth(dr, Split::Test));
        flat += (rd <= th.flatness_ratio * rl) as usize;
        growth += (gd < gl) as usize;
        per_seed.push(json!({
            "seed": seed,
            "cosine_range_etf_dr": rd,
            "cosine_range_learnable_ce": rl,
            "trace_growth_etf_dr": gd,
            "trace_growth_learnable_ce": gl,
        }));
    }
    Criterion::new(
        "collapse_trend",
        flat >= th.min_seeds && growth >= th.min_seeds,
        format!(
            "of {} seeds: flatter cosine series {flat}, smaller trace-ratio growth {growth}",
            results.len()
        ),
        json!({"flatter": flat, "smaller_growth": growth, "seeds": per_seed}),
    )
}

pub fn determinism(identical: bool, files: usize) -> Criterion {
    Criterion::new(
        "determinism",
        identical,
        format!("{files} artifacts {}", if identical { "byte-identical across two builds" } else { "differ between builds" }),
        json!({"files": files, "identical": identical}),
    )
}
