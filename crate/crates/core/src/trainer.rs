//! Training loop: pairing, forward through backbone/IDM/heads, loss
//! assembly, SGD-with-momentum updates, the learning-rate schedule, XBM
//! maintenance, checkpointing and the per-step trace log.
//!
//! One batch is one RGB clip paired with one depth clip. Three step modes
//! share the machinery: `RgbOnly` (source-only baseline, never touches
//! depth), `Paired` (the full adaptation pipeline) and `SupervisedPaired`
//! (labels revealed on both modalities, classification only).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneConfig, FeatureGrads};
use crate::data::{self, ClipTensor, Dataset, Modality, PairedBatch, Split};
use crate::error::{Error, Result};
use crate::heads;
use crate::idm::{self, BridgeSample};
use crate::losses::{self, LossBundle, LossWeights};
use crate::model::ModelParams;
use crate::ops::Scalar;
use crate::rng::Purpose;
use crate::xbm::{XBMEntry, XBMMemory};

/// Which of the five terms participate. A disabled loss is never
/// constructed: it contributes exactly zero and produces no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledLosses {
    pub cls: bool,
    pub pseudo: bool,
    pub modality: bool,
    pub bridge: bool,
    pub triplet: bool,
}

impl Default for EnabledLosses {
    fn default() -> Self {
        EnabledLosses { cls: true, pseudo: true, modality: true, bridge: true, triplet: true }
    }
}

impl EnabledLosses {
    pub fn cls_only() -> Self {
        EnabledLosses { cls: true, pseudo: false, modality: false, bridge: false, triplet: false }
    }

    /// Names of enabled terms, in canonical loss order.
    pub fn names(&self) -> Vec<&'static str> {
        [self.cls, self.pseudo, self.modality, self.bridge, self.triplet]
            .iter()
            .zip(["cls", "pseudo", "modality", "bridge", "triplet"])
            .filter_map(|(&on, name)| on.then_some(name))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Fixed,
    Adaptive,
}

/// What each batch looks like for the three protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    RgbOnly,
    Paired,
    SupervisedPaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    pub margin: f64,
    pub xbm_capacity: usize,
    pub weight_mode: WeightMode,
    pub enabled: EnabledLosses,
    pub seed: u64,
    pub grl_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            base_lr: 1e-4,
            lr_decay_epoch: 60,
            lr_decay_factor: 0.1,
            momentum: 0.9,
            tau: 0.7,
            margin: 0.3,
            xbm_capacity: 128,
            weight_mode: WeightMode::Fixed,
            enabled: EnabledLosses::default(),
            seed: 0,
            grl_lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enabled.cls {
            return Err(Error::Config("the classification loss is always enabled".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.tau > 0.5) || self.tau > 1.0 {
            return Err(Error::Config(format!("tau must lie in (0.5, 1], got {}", self.tau)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1)".into()));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config("base_lr must be finite and >= 0".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("margin must be > 0".into()));
        }
        if self.xbm_capacity == 0 {
            return Err(Error::Config("xbm_capacity must be > 0".into()));
        }
        if !(self.grl_lambda > 0.0) {
            return Err(Error::Config("grl_lambda must be > 0".into()));
        }
        Ok(())
    }
}

/// Everything that evolves during training. Random streams are derived
/// statelessly from (seed, purpose, epoch), so the epoch counter is the
/// whole stream state.
pub struct TrainState<S> {
    pub params: ModelParams<S>,
    pub velocity: ModelParams<S>,
    /// Epochs fully completed.
    pub epoch: usize,
    /// Steps taken.
    pub step: u64,
    pub xbm: XBMMemory<S>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(cfg: &TrainConfig, bcfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        bcfg.validate()?;
        let params = ModelParams::init(bcfg, cfg.seed);
        let velocity = params.zeros_like();
        Ok(TrainState { params, velocity, epoch: 0, step: 0, xbm: XBMMemory::new(cfg.xbm_capacity)? })
    }
}

/// Step decay: base rate before `lr_decay_epoch`, one factor after.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    Ok(if epoch < cfg.lr_decay_epoch { cfg.base_lr } else { cfg.base_lr * cfg.lr_decay_factor })
}

/// v <- m*v - lr*g; theta <- theta + v, over every tensor.
pub fn sgd_update<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    velocity: &mut ModelParams<S>,
    lr: S,
    momentum: S,
) {
    let mut ps = params.tensors_mut();
    let gs = grads.tensors();
    let mut vs = velocity.tensors_mut();
    for i in 0..ps.len() {
        for j in 0..ps[i].len() {
            let v = momentum * vs[i][j] - lr * gs[i][j];
            vs[i][j] = v;
            ps[i][j] += v;
        }
    }
}

/// Per-step outputs for the trace log.
#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub bundle: LossBundle<S>,
    pub weights: [S; 5],
    pub total: S,
}

/// One full adaptation step on a paired batch; the ordered contract is
/// forward, classification, pseudo machinery, modality discrimination,
/// bridge, triplet-with-memory, weighting, one SGD update.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    batch: &PairedBatch<S>,
    rgb_label: u8,
    lr: S,
) -> Result<StepOutput<S>> {
    if batch.rgb.modality != Modality::Rgb || batch.depth.modality != Modality::Depth {
        return Err(Error::Data("paired batch sides have wrong modalities".into()));
    }
    let en = cfg.enabled;
    let bc = BackboneConfig { idm_enabled: en.bridge, ..*bcfg };
    let (bundle, cache) = backbone::forward_features(&state.params, &bc, &batch.rgb.data, &batch.depth.data)?;
    let lam = S::from_f64(cfg.grl_lambda);

    // Classifier on both embeddings; the depth score exists only for the
    // pseudo machinery and triplet labeling.
    let cls_out = heads::classify(&state.params.cls, &bundle.emb_rgb)?;
    let depth_out = if en.pseudo || en.triplet {
        Some(heads::classify(&state.params.cls, &bundle.emb_depth)?)
    } else {
        None
    };

    let mut lb = LossBundle::zero();
    let (cls_v, cls_g) = losses::cls_loss_grad(&[cls_out.score], &[cls_out.dscore_dlogit], &[rgb_label])?;
    lb.cls = cls_v;

    let mut pseudo_g = S::zero();
    let mut depth_pseudo: Option<u8> = None;
    if let Some(d) = &depth_out {
        let (pv, pg, mask, labels, count) =
            losses::pseudo_loss_grad(&[d.score], &[d.dscore_dlogit], S::from_f64(cfg.tau))?;
        lb.pseudo_count = count;
        if mask[0] {
            depth_pseudo = Some(labels[0]);
        }
        if en.pseudo {
            lb.pseudo = pv;
            pseudo_g = pg[0];
        }
    }

    let mut mod_data = None;
    if en.modality {
        let mr = heads::discriminate_modality(&state.params, &bundle.emb_rgb, lam)?;
        let md = heads::discriminate_modality(&state.params, &bundle.emb_depth, lam)?;
        let (mv, mg) =
            losses::modality_loss_grad(&[mr.prob, md.prob], &[mr.dprob_dlogit, md.dprob_dlogit], &[1, 0])?;
        lb.modality = mv;
        mod_data = Some((mr, md, mg));
    }

    if en.bridge {
        let coeffs = bundle.coeffs.expect("idm runs when bridge is enabled");
        let sample = BridgeSample {
            rgb: &bundle.feat_rgb,
            depth: &bundle.feat_depth,
            inter: bundle.feat_inter.as_ref().expect("inter map present"),
            coeffs,
        };
        lb.bridge = idm::bridge_loss(&[sample])?;
    }

    let mut triplet_grads = None;
    if en.triplet {
        let mut tb: Vec<(&[S], u8)> = vec![(&bundle.emb_rgb, rgb_label)];
        if let Some(pl) = depth_pseudo {
            tb.push((&bundle.emb_depth, pl));
        }
        let snapshot = state.xbm.snapshot();
        let (tv, tg) = losses::xbm_triplet_loss_grad(&tb, &snapshot, S::from_f64(cfg.margin))?;
        lb.triplet = tv;
        triplet_grads = Some(tg);
    }

    let mut weight_data = None;
    let weights = match cfg.weight_mode {
        WeightMode::Fixed => LossWeights::uniform_fixed(),
        WeightMode::Adaptive => {
            let half = S::from_f64(0.5);
            let mean: Vec<S> =
                bundle.emb_rgb.iter().zip(&bundle.emb_depth).map(|(&a, &b)| (a + b) * half).collect();
            let wout = heads::loss_weights(&state.params, &mean)?;
            let p = [wout.p[0], wout.p[1], wout.p[2], wout.p[3], wout.p[4]];
            weight_data = Some((mean, wout));
            LossWeights::Adaptive(p)
        }
    };

    lb.check_finite(state.step)?;
    let total = losses::total_loss(&lb, &weights)?;
    if !total.is_finite() {
        return Err(Error::NonFinite { term: "total", step: state.step });
    }
    let wv = weights.values();

    // Gradient assembly in canonical loss order; disabled paths are skipped
    // outright.
    let mut grads = state.params.zeros_like();
    let dim = bundle.emb_rgb.len();
    let mut d_emb_rgb = vec![S::zero(); dim];
    let mut d_emb_depth = vec![S::zero(); dim];

    heads::classify_backward(&state.params.cls, &bundle.emb_rgb, wv[0] * cls_g[0], &mut grads.cls, Some(&mut d_emb_rgb));
    if en.pseudo && pseudo_g != S::zero() {
        heads::classify_backward(
            &state.params.cls,
            &bundle.emb_depth,
            wv[1] * pseudo_g,
            &mut grads.cls,
            Some(&mut d_emb_depth),
        );
    }
    if let Some((mr, md, mg)) = &mod_data {
        heads::modality_backward(&state.params, &bundle.emb_rgb, mr, wv[2] * mg[0], lam, &mut grads, &mut d_emb_rgb)?;
        heads::modality_backward(&state.params, &bundle.emb_depth, md, wv[2] * mg[1], lam, &mut grads, &mut d_emb_depth)?;
    }
    if let Some(tg) = &triplet_grads {
        for (acc, &g) in d_emb_rgb.iter_mut().zip(&tg[0]) {
            *acc += wv[4] * g;
        }
        if tg.len() > 1 {
            for (acc, &g) in d_emb_depth.iter_mut().zip(&tg[1]) {
                *acc += wv[4] * g;
            }
        }
    }

    let mut fg = FeatureGrads {
        d_emb_rgb,
        d_emb_depth,
        d_feat_rgb: None,
        d_feat_depth: None,
        d_feat_inter: None,
        d_coeffs: (S::zero(), S::zero()),
    };
    if en.bridge {
        let coeffs = bundle.coeffs.expect("idm ran");
        let sample = BridgeSample {
            rgb: &bundle.feat_rgb,
            depth: &bundle.feat_depth,
            inter: bundle.feat_inter.as_ref().expect("inter map present"),
            coeffs,
        };
        let mut bg = idm::bridge_backward(&[sample], wv[3])?;
        let bg = bg.remove(0);
        fg.d_feat_rgb = Some(bg.d_rgb);
        fg.d_feat_depth = Some(bg.d_depth);
        fg.d_feat_inter = Some(bg.d_inter);
        fg.d_coeffs = (bg.d_a_rgb, bg.d_a_depth);
    }
    backbone::backward_features(&state.params, &cache, &fg, &mut grads)?;

    if let Some((mean, wout)) = &weight_data {
        // dTotal/dP_i is the live loss value of term i.
        let d_p = lb.values();
        heads::loss_weights_backward(&state.params, mean, wout, &d_p, &mut grads)?;
    }

    if en.triplet {
        let step = state.step;
        let mut entries = vec![XBMEntry {
            embedding: bundle.emb_rgb.clone(),
            label: rgb_label,
            modality: Modality::Rgb,
            step,
        }];
        if let Some(pl) = depth_pseudo {
            entries.push(XBMEntry { embedding: bundle.emb_depth.clone(), label: pl, modality: Modality::Depth, step });
        }
        state.xbm.push(entries);
    }

    sgd_update(&mut state.params, &grads, &mut state.velocity, lr, S::from_f64(cfg.momentum));
    state.step += 1;
    Ok(StepOutput { bundle: lb, weights: wv, total })
}

/// Source-only step: classification on one labeled RGB clip. Depth never
/// enters this function.
pub fn train_step_rgb_only<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    rgb: &ClipTensor<S>,
    rgb_label: u8,
    lr: S,
) -> Result<StepOutput<S>> {
    if let WeightMode::Adaptive = cfg.weight_mode {
        return Err(Error::Config("adaptive weights require paired batches".into()));
    }
    let (emb, cache) = backbone::forward_single(&state.params, bcfg, &rgb.data)?;
    let cls_out = heads::classify(&state.params.cls, &emb)?;
    let (cls_v, cls_g) = losses::cls_loss_grad(&[cls_out.score], &[cls_out.dscore_dlogit], &[rgb_label])?;
    let mut lb = LossBundle::zero();
    lb.cls = cls_v;
    lb.check_finite(state.step)?;
    let weights = LossWeights::uniform_fixed();
    let total = losses::total_loss(&lb, &weights)?;

    let mut grads = state.params.zeros_like();
    let mut d_emb = vec![S::zero(); emb.len()];
    heads::classify_backward(&state.params.cls, &emb, cls_g[0], &mut grads.cls, Some(&mut d_emb));
    backbone::backward_single(&state.params, &cache, &d_emb, &mut grads)?;

    sgd_update(&mut state.params, &grads, &mut state.velocity, lr, S::from_f64(cfg.momentum));
    state.step += 1;
    Ok(StepOutput { bundle: lb, weights: weights.values(), total })
}

/// Oracle step with target labels revealed: mean classification loss over
/// the RGB and depth clips; nothing else.
pub fn train_step_supervised<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    batch: &PairedBatch<S>,
    rgb_label: u8,
    depth_label: u8,
    lr: S,
) -> Result<StepOutput<S>> {
    let bc = BackboneConfig { idm_enabled: false, ..*bcfg };
    let (bundle, cache) = backbone::forward_features(&state.params, &bc, &batch.rgb.data, &batch.depth.data)?;
    let r = heads::classify(&state.params.cls, &bundle.emb_rgb)?;
    let d = heads::classify(&state.params.cls, &bundle.emb_depth)?;
    let (cls_v, g) = losses::cls_loss_grad(
        &[r.score, d.score],
        &[r.dscore_dlogit, d.dscore_dlogit],
        &[rgb_label, depth_label],
    )?;
    let mut lb = LossBundle::zero();
    lb.cls = cls_v;
    lb.check_finite(state.step)?;
    let weights = LossWeights::uniform_fixed();
    let total = losses::total_loss(&lb, &weights)?;

    let mut grads = state.params.zeros_like();
    let dim = bundle.emb_rgb.len();
    let mut d_emb_rgb = vec![S::zero(); dim];
    let mut d_emb_depth = vec![S::zero(); dim];
    heads::classify_backward(&state.params.cls, &bundle.emb_rgb, g[0], &mut grads.cls, Some(&mut d_emb_rgb));
    heads::classify_backward(&state.params.cls, &bundle.emb_depth, g[1], &mut grads.cls, Some(&mut d_emb_depth));
    let fg = FeatureGrads {
        d_emb_rgb,
        d_emb_depth,
        d_feat_rgb: None,
        d_feat_depth: None,
        d_feat_inter: None,
        d_coeffs: (S::zero(), S::zero()),
    };
    backbone::backward_features(&state.params, &cache, &fg, &mut grads)?;

    sgd_update(&mut state.params, &grads, &mut state.velocity, lr, S::from_f64(cfg.momentum));
    state.step += 1;
    Ok(StepOutput { bundle: lb, weights: weights.values(), total })
}

// ── Checkpoints ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epoch this checkpoint completed.
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    /// SHA-256 of the parameter block, for integrity and determinism checks.
    pub params_checksum: String,
    pub mode: StepMode,
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("ckpt_epoch_{epoch:03}.bin"))
}

fn meta_path(bin: &Path) -> PathBuf {
    bin.with_extension("meta.json")
}

/// Writes `ckpt_epoch_%03d.bin` (parameters then velocity, f64 little
/// endian) plus the `.meta.json` sidecar. f32 round-trips through f64
/// exactly.
pub fn save_checkpoint(
    dir: &Path,
    state: &TrainState<f32>,
    epoch: usize,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    mode: StepMode,
) -> Result<PathBuf> {
    let bin = checkpoint_path(dir, epoch);
    let mut blob = Vec::with_capacity((state.params.n_params() * 2) * 8);
    for t in [&state.params, &state.velocity] {
        for v in t.flatten() {
            blob.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    fs::write(&bin, &blob).map_err(|e| Error::file(&bin, &e))?;
    let meta = CheckpointMeta {
        epoch,
        step: state.step,
        seed: cfg.seed,
        params_checksum: state.params.checksum(),
        mode,
        train: cfg.clone(),
        backbone: *bcfg,
    };
    let mp = meta_path(&bin);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(&mp, text).map_err(|e| Error::file(&mp, &e))?;
    Ok(bin)
}

pub fn read_meta(bin: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(bin);
    let text = fs::read_to_string(&mp).map_err(|e| Error::file(&mp, &e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", mp.display())))
}

/// Loads parameters and velocity from a checkpoint written by
/// [`save_checkpoint`]; verifies the parameter checksum.
pub fn load_checkpoint(bin: &Path) -> Result<(TrainState<f32>, CheckpointMeta)> {
    let meta = read_meta(bin)?;
    let mut params = ModelParams::<f32>::zeros(&meta.backbone);
    let n = params.n_params();
    let blob = fs::read(bin).map_err(|e| Error::file(bin, &e))?;
    if blob.len() != 2 * n * 8 {
        return Err(Error::Schema(format!(
            "checkpoint {} holds {} bytes, expected {}",
            bin.display(),
            blob.len(),
            2 * n * 8
        )));
    }
    let read = |off: usize| -> Vec<f32> {
        blob[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect()
    };
    params.load_flat(&read(0))?;
    let mut velocity = params.zeros_like();
    velocity.load_flat(&read(n * 8))?;
    if params.checksum() != meta.params_checksum {
        return Err(Error::Schema(format!("checkpoint {} fails its checksum", bin.display())));
    }
    let xbm = XBMMemory::new(meta.train.xbm_capacity)?;
    Ok((TrainState { params, velocity, epoch: meta.epoch, step: meta.step, xbm }, meta))
}

/// Parameters only, for warm-starting a new run (ablation chaining).
pub fn load_params(bin: &Path) -> Result<ModelParams<f32>> {
    Ok(load_checkpoint(bin)?.0.params)
}

fn latest_checkpoint(dir: &Path, below_epochs: usize) -> Option<(usize, PathBuf)> {
    (0..below_epochs).rev().find_map(|e| {
        let p = checkpoint_path(dir, e);
        p.exists().then_some((e, p))
    })
}

// ── Fit driver ──────────────────────────────────────────────────────────────

pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    /// Steps run by this invocation (0 when already complete).
    pub steps_run: u64,
}

pub const TRACE_HEADER: &str = "step,cls,pseudo,modality,bridge,triplet,total,w1,w2,w3,w4,w5,pseudo_count";

fn trace_row(f: &mut fs::File, step: u64, out: &StepOutput<f32>) -> Result<()> {
    let b = &out.bundle;
    let w = &out.weights;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        step, b.cls, b.pseudo, b.modality, b.bridge, b.triplet, out.total, w[0], w[1], w[2], w[3], w[4], b.pseudo_count
    )
    .map_err(|e| Error::file(Path::new("train_log.csv"), &e))
}

/// Trains `cfg.epochs` epochs with per-epoch checkpoints, resuming from the
/// newest checkpoint in `out_dir` when one exists. Initial parameters come
/// from `warm_start` when given, otherwise from seeded initialization.
pub fn fit(
    dataset: &Dataset,
    cfg: &TrainConfig,
    bcfg: &BackboneConfig,
    mode: StepMode,
    out_dir: &Path,
    warm_start: Option<&ModelParams<f32>>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    bcfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, &e))?;

    let rgb = dataset.select(Modality::Rgb, Split::Train);
    let depth = dataset.select(Modality::Depth, Split::Train);
    if rgb.is_empty() {
        return Err(Error::Data("no RGB training clips".into()));
    }
    if let Some(r) = rgb.iter().find(|r| r.label.is_none()) {
        return Err(Error::Data(format!("rgb train clip `{}` is unlabeled", r.clip_id)));
    }
    if mode != StepMode::RgbOnly && depth.is_empty() {
        return Err(Error::Data("no depth training clips".into()));
    }
    if mode == StepMode::SupervisedPaired {
        if let Some(r) = depth.iter().find(|r| r.label.is_none()) {
            return Err(Error::Data(format!("supervised target needs labels; `{}` has none", r.clip_id)));
        }
    }

    let final_bin = checkpoint_path(out_dir, cfg.epochs - 1);
    if final_bin.exists() {
        return Ok(FitOutcome { final_checkpoint: final_bin, steps_run: 0 });
    }

    let trace_path = out_dir.join("train_log.csv");
    let (mut state, start_epoch, mut trace) = match latest_checkpoint(out_dir, cfg.epochs) {
        Some((e, bin)) => {
            let (state, _meta) = load_checkpoint(&bin)?;
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&trace_path)
                .map_err(|er| Error::file(&trace_path, &er))?;
            (state, e + 1, f)
        }
        None => {
            let mut state = TrainState::<f32>::new(cfg, bcfg)?;
            if let Some(p) = warm_start {
                state.params = p.clone();
            }
            let mut f = fs::File::create(&trace_path).map_err(|er| Error::file(&trace_path, &er))?;
            writeln!(f, "{TRACE_HEADER}").map_err(|er| Error::file(&trace_path, &er))?;
            (state, 0, f)
        }
    };

    let mut steps_run = 0u64;
    for epoch in start_epoch..cfg.epochs {
        state.xbm.clear();
        let lr = lr_schedule(epoch, cfg)? as f32;
        match mode {
            StepMode::RgbOnly => {
                for rec in data::shuffled(&rgb, Purpose::ShuffleRgb, cfg.seed, epoch as u64) {
                    let clip = dataset.clip_tensor(&rec)?;
                    let y = dataset.train_label(&rec)?;
                    let out = train_step_rgb_only(&mut state, cfg, bcfg, &clip, y, lr)?;
                    trace_row(&mut trace, state.step, &out)?;
                    steps_run += 1;
                }
            }
            StepMode::Paired => {
                for (rr, dr) in data::make_pairs(&rgb, &depth, cfg.seed, epoch as u64)? {
                    let batch = PairedBatch { rgb: dataset.clip_tensor(&rr)?, depth: dataset.clip_tensor(&dr)? };
                    let y = dataset.train_label(&rr)?;
                    let out = train_step(&mut state, cfg, bcfg, &batch, y, lr)?;
                    trace_row(&mut trace, state.step, &out)?;
                    steps_run += 1;
                }
            }
            StepMode::SupervisedPaired => {
                for (rr, dr) in data::make_pairs(&rgb, &depth, cfg.seed, epoch as u64)? {
                    let batch = PairedBatch { rgb: dataset.clip_tensor(&rr)?, depth: dataset.clip_tensor(&dr)? };
                    let y_r = dataset.train_label(&rr)?;
                    let y_d = dataset.train_label(&dr)?;
                    let out = train_step_supervised(&mut state, cfg, bcfg, &batch, y_r, y_d, lr)?;
                    trace_row(&mut trace, state.step, &out)?;
                    steps_run += 1;
                }
            }
        }
        state.epoch = epoch;
        save_checkpoint(out_dir, &state, epoch, cfg, bcfg, mode)?;
    }
    Ok(FitOutcome { final_checkpoint: final_bin, steps_run })
}
