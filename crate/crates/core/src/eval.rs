//! Metrics engine, the three experimental protocols, the V-01..V-06
//! ablation ladder and embedding export.
//!
//! All metrics are computed on depth test clips only. Report CSVs format
//! values as percentages with two decimals; the in-memory reports keep
//! full-precision fractions in [0, 1].

use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::{self, BackboneConfig};
use crate::data::{ClipRecord, Dataset, Modality, Split};
use crate::error::{Error, Result};
use crate::heads;
use crate::model::ModelParams;
use crate::trainer::{self, EnabledLosses, StepMode, TrainConfig, WeightMode};

/// Confusion counts plus derived ratios. Ratios with a zero denominator
/// are reported as 0 and listed in `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub undefined: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Baseline,
    Umafd,
    SupervisedTarget,
}

impl Protocol {
    /// Token used in report rows and file names.
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::Umafd => "umafd",
            Protocol::SupervisedTarget => "supervised_target",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub metrics: MetricsReport,
    pub seed: u64,
    /// Echo of the configuration the run actually used.
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
    pub report_path: PathBuf,
}

/// Positive prediction iff score > threshold; a score exactly at the
/// threshold counts as negative. Returns (tp, fp, tn, fn).
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(usize, usize, usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Data("confusion over an empty set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    Ok((tp, fp, tn, fneg))
}

/// Rank-statistic AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties credited one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y != 0).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("auc needs at least one positive and one negative".into()));
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                1.0
            } else if p < n {
                0.0
            } else {
                0.5
            };
        }
    }
    Ok(credit / (pos.len() as f64 * neg.len() as f64))
}

/// Confusion-derived ratios at threshold 0.5 plus AUC.
pub fn metrics(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    let (tp, fp, tn, fn_) = confusion(scores, labels, 0.5)?;
    let auc = auc(scores, labels)?;
    let total = (tp + fp + tn + fn_) as f64;
    let mut undefined = Vec::new();
    let mut ratio = |name, num: usize, den: usize| {
        if den == 0 {
            undefined.push(name);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (tp + tn) as f64 / total;
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1");
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, auc, tp, fp, tn, fn_, undefined })
}

fn score_one(params: &ModelParams<f32>, bcfg: &BackboneConfig, dataset: &Dataset, rec: &ClipRecord) -> Result<f64> {
    let clip = dataset.clip_tensor(rec)?;
    let (emb, _) = backbone::forward_single(params, bcfg, &clip.data)?;
    Ok(heads::classify(&params.cls, &emb)?.score as f64)
}

/// Classifier scores for each record, in the order given; single threaded
/// regardless of features, kept public for benchmark comparison.
pub fn score_clips_sequential(
    params: &ModelParams<f32>,
    bcfg: &BackboneConfig,
    dataset: &Dataset,
    records: &[ClipRecord],
) -> Result<Vec<f64>> {
    records.iter().map(|r| score_one(params, bcfg, dataset, r)).collect()
}

/// Classifier scores for each record, in the order given. Scoring is
/// data parallel when the `parallel` feature is on; the output order is
/// the input order either way.
#[cfg(feature = "parallel")]
pub fn score_clips(
    params: &ModelParams<f32>,
    bcfg: &BackboneConfig,
    dataset: &Dataset,
    records: &[ClipRecord],
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    records.par_iter().map(|r| score_one(params, bcfg, dataset, r)).collect()
}

/// Classifier scores for each record, in the order given.
#[cfg(not(feature = "parallel"))]
pub fn score_clips(
    params: &ModelParams<f32>,
    bcfg: &BackboneConfig,
    dataset: &Dataset,
    records: &[ClipRecord],
) -> Result<Vec<f64>> {
    score_clips_sequential(params, bcfg, dataset, records)
}

/// Depth-test metrics for a trained parameter set.
pub fn evaluate_depth_test(params: &ModelParams<f32>, bcfg: &BackboneConfig, dataset: &Dataset) -> Result<MetricsReport> {
    let recs = dataset.select(Modality::Depth, Split::Test);
    if recs.is_empty() {
        return Err(Error::Data("no depth test clips".into()));
    }
    let scores = score_clips(params, bcfg, dataset, &recs)?;
    let labels: Vec<u8> = recs
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Data(format!("test clip `{}` is unlabeled", r.clip_id))))
        .collect::<Result<_>>()?;
    metrics(&scores, &labels)
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub const REPORT_HEADER: &str = "protocol,seed,accuracy,precision,recall,f1,auc";
pub const ABLATION_HEADER: &str = "stage,accuracy,precision,recall,f1,auc";

fn metric_cells(m: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{}",
        percent(m.accuracy),
        percent(m.precision),
        percent(m.recall),
        percent(m.f1),
        percent(m.auc)
    )
}

/// The per-protocol training configuration. The baseline and the
/// supervised target are classification-only by definition; the full
/// pipeline runs whatever the caller enabled.
pub fn protocol_train_config(protocol: Protocol, cfg: &TrainConfig) -> TrainConfig {
    match protocol {
        Protocol::Umafd => cfg.clone(),
        Protocol::Baseline | Protocol::SupervisedTarget => TrainConfig {
            enabled: EnabledLosses::cls_only(),
            weight_mode: WeightMode::Fixed,
            ..cfg.clone()
        },
    }
}

pub fn protocol_step_mode(protocol: Protocol) -> StepMode {
    match protocol {
        Protocol::Baseline => StepMode::RgbOnly,
        Protocol::Umafd => StepMode::Paired,
        Protocol::SupervisedTarget => StepMode::SupervisedPaired,
    }
}

/// Trains per the protocol definition, evaluates on depth test and writes
/// `report_<protocol>.csv` under `out_dir`.
pub fn run_protocol(
    protocol: Protocol,
    dataset: &Dataset,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    out_dir: &Path,
) -> Result<ProtocolResult> {
    let pcfg = protocol_train_config(protocol, cfg);
    let mode = protocol_step_mode(protocol);
    let outcome = trainer::fit(dataset, &pcfg, bcfg, mode, out_dir, None)?;
    let params = trainer::load_params(&outcome.final_checkpoint)?;
    let m = evaluate_depth_test(&params, bcfg, dataset)?;
    let report_path = out_dir.join(format!("report_{}.csv", protocol.as_str()));
    let body = format!("{REPORT_HEADER}\n{},{},{}\n", protocol.as_str(), pcfg.seed, metric_cells(&m));
    fs::write(&report_path, body).map_err(|e| Error::file(&report_path, &e))?;
    Ok(ProtocolResult { protocol, metrics: m, seed: pcfg.seed, train: pcfg, backbone: *bcfg, report_path })
}

/// One rung of the ablation ladder.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub stage: &'static str,
    pub enabled: EnabledLosses,
    pub weight_mode: WeightMode,
    pub metrics: MetricsReport,
}

/// Stage identifiers with their loss-enable sets, in ladder order.
pub fn ablation_ladder() -> [(&'static str, EnabledLosses, WeightMode); 6] {
    let e = |pseudo, modality, bridge, triplet| EnabledLosses { cls: true, pseudo, modality, bridge, triplet };
    [
        ("V-01", e(false, false, false, false), WeightMode::Fixed),
        ("V-02", e(false, true, false, false), WeightMode::Fixed),
        ("V-03", e(true, true, false, false), WeightMode::Fixed),
        ("V-04", e(true, true, true, false), WeightMode::Fixed),
        ("V-05", e(true, true, true, true), WeightMode::Fixed),
        ("V-06", e(true, true, true, true), WeightMode::Adaptive),
    ]
}

/// Runs the six-stage ladder. V-01 is classification-only source training,
/// identical to the baseline protocol; every later stage warm-starts from
/// the previous stage's final checkpoint. Completed stages are skipped via
/// their existing checkpoints. Writes `ablation.csv` under `out_dir`.
pub fn ablation(dataset: &Dataset, cfg: &TrainConfig, bcfg: &BackboneConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, &e))?;
    let mut rows = Vec::with_capacity(6);
    let mut prev_ckpt: Option<PathBuf> = None;
    for (stage, enabled, weight_mode) in ablation_ladder() {
        let scfg = TrainConfig { enabled, weight_mode, ..cfg.clone() };
        let mode = if stage == "V-01" { StepMode::RgbOnly } else { StepMode::Paired };
        let stage_dir = out_dir.join(stage.to_lowercase().replace('-', ""));
        let warm = match &prev_ckpt {
            Some(p) => Some(trainer::load_params(p)?),
            None => None,
        };
        let outcome = trainer::fit(dataset, &scfg, bcfg, mode, &stage_dir, warm.as_ref())?;
        let params = trainer::load_params(&outcome.final_checkpoint)?;
        let m = evaluate_depth_test(&params, bcfg, dataset)?;
        rows.push(AblationRow { stage, enabled, weight_mode, metrics: m });
        prev_ckpt = Some(outcome.final_checkpoint);
    }
    let mut body = String::from(ABLATION_HEADER);
    body.push('\n');
    for r in &rows {
        body.push_str(&format!("{},{}\n", r.stage, metric_cells(&r.metrics)));
    }
    let path = out_dir.join("ablation.csv");
    fs::write(&path, body).map_err(|e| Error::file(&path, &e))?;
    Ok(rows)
}

/// Writes one row per test clip (any modality), ordered by clip id:
/// `clip_id,modality,label,e0..e{d-1}`. Deterministic for a fixed
/// checkpoint, so re-export is byte-identical.
pub fn export_embeddings(ckpt: &Path, dataset: &Dataset, out: &Path) -> Result<()> {
    let (state, meta) = trainer::load_checkpoint(ckpt)?;
    let mut recs: Vec<ClipRecord> = dataset.records.iter().filter(|r| r.split == Split::Test).cloned().collect();
    recs.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    if recs.is_empty() {
        return Err(Error::Data("no test clips to export".into()));
    }
    let dim = meta.backbone.embedding_dim;
    let mut body = String::from("clip_id,modality,label");
    for i in 0..dim {
        body.push_str(&format!(",e{i}"));
    }
    body.push('\n');
    for rec in &recs {
        let clip = dataset.clip_tensor(rec)?;
        let (emb, _) = backbone::forward_single(&state.params, &meta.backbone, &clip.data)?;
        let label = rec.label.map(|l| l.to_string()).unwrap_or_default();
        body.push_str(&format!("{},{},{label}", rec.clip_id, rec.modality.as_str()));
        for v in emb {
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    fs::write(out, body).map_err(|e| Error::file(out, &e))?;
    Ok(())
}

/// Median of a non-empty sample (mean of the middle two when even).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}
