//! End-to-end training: the collaborative training loop (per epoch: extract
//! partition features, update the head by coordinate descent, back-propagate
//! the feature-matrix gradient into the network), the softmax and cascade
//! baselines, staged pretraining, cross-validation, and model checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collab::{
    self, descent_step, grad_x, grad_y, CollabState, PartitionPair, WeightingMode,
};
use crate::crc::{crc_classify_batch, CrcModel, Dictionary};
use crate::data::{accuracy_percent, Image, LabeledImageSet};
use crate::error::{Error, Result};
use crate::featnet::{FeatNet, NetSpec, SoftmaxHead};
use crate::linalg::Mat;
use crate::procrc::{procrc_classify_batch, ProCrcModel};
use crate::util::{atomic_write, ByteReader, ByteWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    SoftmaxBaseline,
    CascadeCrc,
    CascadeProcrc,
    Coconet,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_baseline" | "softmax" => Ok(TrainMode::SoftmaxBaseline),
            "cascade_crc" => Ok(TrainMode::CascadeCrc),
            "cascade_procrc" => Ok(TrainMode::CascadeProcrc),
            "coconet" => Ok(TrainMode::Coconet),
            other => Err(Error::param("TrainMode", format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrainMode::SoftmaxBaseline => "softmax_baseline",
            TrainMode::CascadeCrc => "cascade_crc",
            TrainMode::CascadeProcrc => "cascade_procrc",
            TrainMode::Coconet => "coconet",
        };
        f.write_str(s)
    }
}

pub const MAX_EPOCH_CAP: usize = 1000;

/// Full training configuration. Every field is settable through the
/// key=value run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    pub max_epochs: usize,
    pub plateau_window: usize,
    /// Relative loss change below which the window counts as a plateau.
    pub plateau_tol: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub partition_fraction: f64,
    pub seed: u64,
    pub enable_grad_y: bool,
    /// Cross-entropy warmup epochs before the collaborative phase; the
    /// desk-scale stand-in for starting from a pretrained feature network.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Images are resized to this square size at ingestion (paper parity is
    /// 128; the desk default is 32).
    pub image_size: usize,
    pub conv_channels: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Coconet,
            lr_initial: 1e-3,
            lr_reduced: 1e-4,
            max_epochs: 30,
            plateau_window: 10,
            plateau_tol: 1e-4,
            lambda: 1e-2,
            gamma: 1e-2,
            partition_fraction: 0.5,
            seed: 42,
            enable_grad_y: false,
            warmup_epochs: 12,
            batch_size: 32,
            image_size: 32,
            conv_channels: vec![8, 16],
            feature_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.partition_fraction > 0.0 && self.partition_fraction < 1.0) {
            return Err(Error::param(
                "TrainConfig",
                format!("partition_fraction = {}", self.partition_fraction),
            ));
        }
        if !(self.lr_reduced < self.lr_initial) {
            return Err(Error::param("TrainConfig", "lr_reduced must be < lr_initial"));
        }
        if !(self.lr_initial > 0.0 && self.lr_reduced > 0.0) {
            return Err(Error::param("TrainConfig", "learning rates must be > 0"));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCH_CAP {
            return Err(Error::param(
                "TrainConfig",
                format!("max_epochs must be in 1..={MAX_EPOCH_CAP}"),
            ));
        }
        if self.warmup_epochs > MAX_EPOCH_CAP {
            return Err(Error::param("TrainConfig", "warmup_epochs exceeds the epoch cap"));
        }
        if !(self.lambda > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::param("TrainConfig", "lambda must be > 0 and gamma >= 0"));
        }
        if self.batch_size == 0 || self.plateau_window == 0 || self.feature_dim == 0 {
            return Err(Error::param("TrainConfig", "zero-sized loop parameter"));
        }
        if self.image_size < 4 {
            return Err(Error::param("TrainConfig", "image_size too small"));
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::param("TrainConfig", format!("bad {what} '{value}'"));
        match key {
            "mode" => self.mode = value.parse()?,
            "lr_initial" => self.lr_initial = value.parse().map_err(|_| bad("lr_initial"))?,
            "lr_reduced" => self.lr_reduced = value.parse().map_err(|_| bad("lr_reduced"))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad("max_epochs"))?,
            "plateau_window" => {
                self.plateau_window = value.parse().map_err(|_| bad("plateau_window"))?
            }
            "plateau_tol" => self.plateau_tol = value.parse().map_err(|_| bad("plateau_tol"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad("gamma"))?,
            "partition_fraction" => {
                self.partition_fraction = value.parse().map_err(|_| bad("partition_fraction"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "enable_grad_y" => {
                self.enable_grad_y = value.parse().map_err(|_| bad("enable_grad_y"))?
            }
            "warmup_epochs" => {
                self.warmup_epochs = value.parse().map_err(|_| bad("warmup_epochs"))?
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "image_size" => self.image_size = value.parse().map_err(|_| bad("image_size"))?,
            "conv_channels" => {
                self.conv_channels = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad("conv_channels")))
                    .collect::<Result<_>>()?
            }
            "feature_dim" => self.feature_dim = value.parse().map_err(|_| bad("feature_dim"))?,
            other => {
                return Err(Error::param(
                    "TrainConfig",
                    format!("unknown config key '{other}'"),
                ))
            }
        }
        Ok(())
    }

    /// Parse a run manifest: `key=value` lines, `#` comments, blank lines.
    pub fn apply_manifest_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Format {
                what: "run manifest",
                line: i + 1,
                detail: format!("expected key=value, got '{line}'"),
            })?;
            self.apply_kv(key.trim(), value.trim()).map_err(|e| Error::Format {
                what: "run manifest",
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Resolved config echoed at the start of every run.
    pub fn to_manifest_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("mode={}\n", self.mode));
        s.push_str(&format!("lr_initial={}\n", self.lr_initial));
        s.push_str(&format!("lr_reduced={}\n", self.lr_reduced));
        s.push_str(&format!("max_epochs={}\n", self.max_epochs));
        s.push_str(&format!("plateau_window={}\n", self.plateau_window));
        s.push_str(&format!("plateau_tol={}\n", self.plateau_tol));
        s.push_str(&format!("lambda={}\n", self.lambda));
        s.push_str(&format!("gamma={}\n", self.gamma));
        s.push_str(&format!("partition_fraction={}\n", self.partition_fraction));
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("enable_grad_y={}\n", self.enable_grad_y));
        s.push_str(&format!("warmup_epochs={}\n", self.warmup_epochs));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("image_size={}\n", self.image_size));
        let channels: Vec<String> = self.conv_channels.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("conv_channels={}\n", channels.join(",")));
        s.push_str(&format!("feature_dim={}\n", self.feature_dim));
        s
    }

    fn net_spec(&self, channels: usize) -> NetSpec {
        NetSpec::desk_default(
            (self.image_size, self.image_size, channels),
            &self.conv_channels,
            self.feature_dim,
        )
    }
}

// ── loss log ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LossRow {
    pub epoch: usize,
    pub phase: &'static str,
    pub cost: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,cost,accuracy,lr\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.phase, r.cost, r.accuracy, r.lr
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }
}

// ── learning-rate schedule ──────────────────────────────────────────

enum ScheduleEvent {
    None,
    Reduced,
    Stop,
}

/// Drops the learning rate once when the loss plateaus (relative change
/// below `tol` across a `window`-epoch span) and requests a stop when the
/// reduced-rate loss plateaus again.
struct LrSchedule {
    lr: f64,
    lr_reduced: f64,
    window: usize,
    tol: f64,
    history: Vec<f64>,
    reduced: bool,
}

impl LrSchedule {
    fn new(cfg: &TrainConfig) -> Self {
        LrSchedule {
            lr: cfg.lr_initial,
            lr_reduced: cfg.lr_reduced,
            window: cfg.plateau_window,
            tol: cfg.plateau_tol,
            history: Vec::new(),
            reduced: false,
        }
    }

    fn observe(&mut self, cost: f64) -> ScheduleEvent {
        self.history.push(cost);
        if self.history.len() < self.window {
            return ScheduleEvent::None;
        }
        let oldest = self.history[self.history.len() - self.window];
        let change = (cost - oldest).abs() / oldest.abs().max(1e-12);
        if change >= self.tol {
            return ScheduleEvent::None;
        }
        if self.reduced {
            ScheduleEvent::Stop
        } else {
            self.reduced = true;
            self.lr = self.lr_reduced;
            self.history.clear();
            ScheduleEvent::Reduced
        }
    }
}

// ── partition splitting ─────────────────────────────────────────────

/// Per-class stratified random split into (p1, p2) index sets at the given
/// fraction. Deterministic for a fixed seed; per-class proportions deviate
/// from the fraction by at most one sample, and both sides keep at least one
/// sample of every class.
pub fn split_partitions(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("split_partitions", format!("fraction = {fraction}")));
    }
    if labels.is_empty() {
        return Err(Error::param("split_partitions", "no samples"));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(Error::param(
                "split_partitions",
                format!("class {class} has {} sample(s); need at least 2", indices.len()),
            ));
        }
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let take = ((indices.len() as f64 * fraction).round() as usize)
            .clamp(1, indices.len() - 1);
        p1.extend_from_slice(&indices[..take]);
        p2.extend_from_slice(&indices[take..]);
    }
    p1.sort_unstable();
    p2.sort_unstable();
    Ok((p1, p2))
}

// ── trained model ───────────────────────────────────────────────────

/// The classifier attached to the trained feature network.
#[derive(Debug, Clone)]
pub enum HeadKind {
    Softmax(SoftmaxHead),
    Crc { lambda: f64 },
    ProCrc { lambda: f64, gamma: f64 },
    Coconet { lambda: f64, state: CollabState },
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Softmax(_) => "softmax",
            HeadKind::Crc { .. } => "crc",
            HeadKind::ProCrc { .. } => "procrc",
            HeadKind::Coconet { .. } => "coconet",
        }
    }
}

/// A trained feature network, the dictionary of training features extracted
/// with it, and the classification head.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: FeatNet,
    pub dict: Dictionary,
    pub head: HeadKind,
    pub class_names: Vec<String>,
}

impl TrainedModel {
    /// Classify images: extract features with the trained network, then
    /// apply the model's head. Collaborative models classify with the ridge
    /// dictionary rule at the trained λ.
    pub fn infer(&self, images: &[Image]) -> Result<Vec<usize>> {
        let feats = self.net.extract(images)?;
        match &self.head {
            HeadKind::Softmax(head) => Ok(head.predict_batch(&feats)),
            HeadKind::Crc { lambda } | HeadKind::Coconet { lambda, .. } => {
                let model = CrcModel::new(self.dict.clone(), *lambda)?;
                crc_classify_batch(&model, &feats)
            }
            HeadKind::ProCrc { lambda, gamma } => {
                let model = ProCrcModel::new(self.dict.clone(), *lambda, *gamma)?;
                procrc_classify_batch(&model, &feats)
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"CCKP");
        w.u32(1);
        self.net.write_into(&mut w);
        match &self.head {
            HeadKind::Softmax(head) => {
                w.u8(0);
                head.write_into(&mut w);
            }
            HeadKind::Crc { lambda } => {
                w.u8(1);
                w.f64(*lambda);
            }
            HeadKind::ProCrc { lambda, gamma } => {
                w.u8(2);
                w.f64(*lambda);
                w.f64(*gamma);
            }
            HeadKind::Coconet { lambda, state } => {
                w.u8(3);
                w.f64(*lambda);
                w.u32(state.a.rows() as u32);
                w.u32(state.a.cols() as u32);
                w.f64_slice(state.a.data());
                w.f64_slice(&state.w);
                w.f64(state.lambda);
                w.f64(state.gamma);
                w.u8(match state.weighting {
                    WeightingMode::MixedVector => 0,
                    WeightingMode::PerColumn => 1,
                });
            }
        }
        w.bytes(b"DICT");
        w.u32(self.dict.feature_dim() as u32);
        w.u32(self.dict.num_samples() as u32);
        w.f64_slice(self.dict.features().data());
        w.u64(self.dict.labels().len() as u64);
        for &l in self.dict.labels() {
            w.u32(l as u32);
        }
        w.u16(self.class_names.len() as u16);
        for name in &self.class_names {
            w.str(name);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
        let mut r = ByteReader::new(bytes, "model checkpoint");
        if r.bytes(4)? != b"CCKP" {
            return Err(Error::Format {
                what: "model checkpoint",
                line: 0,
                detail: "bad magic".to_string(),
            });
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format {
                what: "model checkpoint",
                line: 0,
                detail: format!("unsupported version {version}"),
            });
        }
        let net = FeatNet::read_from(&mut r)?;
        let head = match r.u8()? {
            0 => HeadKind::Softmax(SoftmaxHead::read_from(&mut r)?),
            1 => HeadKind::Crc { lambda: r.f64()? },
            2 => HeadKind::ProCrc {
                lambda: r.f64()?,
                gamma: r.f64()?,
            },
            3 => {
                let lambda = r.f64()?;
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let data = r.f64_vec()?;
                if data.len() != rows * cols {
                    return Err(Error::Format {
                        what: "model checkpoint",
                        line: 0,
                        detail: "reconstruction matrix length mismatch".to_string(),
                    });
                }
                let a = Mat::from_vec(rows, cols, data);
                let w = r.f64_vec()?;
                let st_lambda = r.f64()?;
                let st_gamma = r.f64()?;
                let weighting = match r.u8()? {
                    0 => WeightingMode::MixedVector,
                    1 => WeightingMode::PerColumn,
                    t => {
                        return Err(Error::Format {
                            what: "model checkpoint",
                            line: 0,
                            detail: format!("unknown weighting tag {t}"),
                        })
                    }
                };
                HeadKind::Coconet {
                    lambda,
                    state: CollabState {
                        a,
                        w,
                        lambda: st_lambda,
                        gamma: st_gamma,
                        weighting,
                    },
                }
            }
            t => {
                return Err(Error::Format {
                    what: "model checkpoint",
                    line: 0,
                    detail: format!("unknown head tag {t}"),
                })
            }
        };
        if r.bytes(4)? != b"DICT" {
            return Err(Error::Format {
                what: "model checkpoint",
                line: 0,
                detail: "missing dictionary block".to_string(),
            });
        }
        let d = r.u32()? as usize;
        let n = r.u32()? as usize;
        let data = r.f64_vec()?;
        if data.len() != d * n {
            return Err(Error::Format {
                what: "model checkpoint",
                line: 0,
                detail: "dictionary data length mismatch".to_string(),
            });
        }
        let n_labels = r.u64()? as usize;
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            labels.push(r.u32()? as usize);
        }
        let dict = Dictionary::new(Mat::from_vec(d, n, data), labels)?;
        let n_names = r.u16()? as usize;
        let mut class_names = Vec::with_capacity(n_names);
        for _ in 0..n_names {
            class_names.push(r.str()?);
        }
        if !r.is_empty() {
            return Err(Error::Format {
                what: "model checkpoint",
                line: 0,
                detail: "trailing bytes after checkpoint".to_string(),
            });
        }
        Ok(TrainedModel {
            net,
            dict,
            head,
            class_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

// ── training ────────────────────────────────────────────────────────

const NET_SEED_OFFSET: u64 = 1;
const HEAD_SEED_OFFSET: u64 = 2;
const SHUFFLE_SEED_OFFSET: u64 = 3;
const SPLIT_SEED_OFFSET: u64 = 4;
const DIVERGENCE_FACTOR: f64 = 1e3;

fn divergence_limit(initial: f64) -> f64 {
    DIVERGENCE_FACTOR * initial.max(1e-9)
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// One cross-entropy training phase over the whole set; shared by the
/// softmax baseline, the cascade pretraining, and the collaborative warmup.
#[allow(clippy::too_many_arguments)]
fn train_softmax_phase(
    net: &mut FeatNet,
    head: &mut SoftmaxHead,
    set: &LabeledImageSet,
    cfg: &TrainConfig,
    epochs: usize,
    phase: &'static str,
    log: &mut LossLog,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut schedule = LrSchedule::new(cfg);
    let mut initial_loss = None;
    for epoch in 0..epochs {
        let order = shuffled_indices(set.len(), shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let images: Vec<Image> = batch.iter().map(|&i| set.images[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| set.labels[i]).collect();
            let (feats, cache) = net.forward(&images)?;
            let (loss, head_grads, feat_grads) = head.loss_and_grads(&feats, &labels)?;
            let predictions = head.predict_batch(&feats);
            correct += predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
            let net_grads = net.backward(&cache, &feat_grads)?;
            head.adam_step(&head_grads, schedule.lr)?;
            net.adam_step(&net_grads, schedule.lr)?;
            epoch_loss += loss * labels.len() as f64;
        }
        let cost = epoch_loss / set.len() as f64;
        let accuracy = 100.0 * correct as f64 / set.len() as f64;
        log.rows.push(LossRow {
            epoch,
            phase,
            cost,
            accuracy,
            lr: schedule.lr,
        });
        let initial = *initial_loss.get_or_insert(cost);
        if !cost.is_finite() || cost > divergence_limit(initial) {
            return Err(Error::Diverged {
                cost,
                limit: divergence_limit(initial),
            });
        }
        if let ScheduleEvent::Stop = schedule.observe(cost) {
            break;
        }
    }
    Ok(())
}

fn extract_dictionary(net: &FeatNet, set: &LabeledImageSet) -> Result<Dictionary> {
    let feats = net.extract(&set.images)?;
    Dictionary::from_labeled(&feats, &set.labels)
}

fn train_coconet_with_net(
    mut net: FeatNet,
    cfg: &TrainConfig,
    set: &LabeledImageSet,
    log: &mut LossLog,
) -> Result<TrainedModel> {
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHUFFLE_SEED_OFFSET));

    if cfg.warmup_epochs > 0 {
        let mut head = SoftmaxHead::new(
            net.feature_dim(),
            set.num_classes(),
            cfg.seed.wrapping_add(HEAD_SEED_OFFSET),
        )?;
        train_softmax_phase(
            &mut net,
            &mut head,
            set,
            cfg,
            cfg.warmup_epochs,
            "warmup",
            log,
            &mut shuffle_rng,
        )?;
        // the warmup head is discarded: the collaborative model carries no
        // softmax parameters
    }

    let (p1_idx, p2_idx) = split_partitions(
        &set.labels,
        cfg.partition_fraction,
        cfg.seed.wrapping_add(SPLIT_SEED_OFFSET),
    )?;
    let p1_images: Vec<Image> = p1_idx.iter().map(|&i| set.images[i].clone()).collect();
    let p2_images: Vec<Image> = p2_idx.iter().map(|&i| set.images[i].clone()).collect();
    let labels_p1: Vec<usize> = p1_idx.iter().map(|&i| set.labels[i]).collect();
    let labels_p2: Vec<usize> = p2_idx.iter().map(|&i| set.labels[i]).collect();

    let mut class_sizes_p2 = vec![0usize; set.num_classes()];
    for &l in &labels_p2 {
        class_sizes_p2[l] += 1;
    }

    let mut schedule = LrSchedule::new(cfg);
    let mut state: Option<CollabState> = None;
    let mut initial_cost = None;

    for epoch in 0..cfg.max_epochs {
        let x = net.extract(&p1_images)?;
        let y = net.extract(&p2_images)?;
        let pp = PartitionPair::new(x, y, labels_p1.clone(), labels_p2.clone())?;

        let st = match state.as_mut() {
            Some(st) => st,
            None => {
                let w = collab::init_weights(&class_sizes_p2, &labels_p2)?;
                let a = collab::init_a(&pp, &w, cfg.lambda)?;
                let mut st = CollabState::new(a, w, cfg.lambda, cfg.gamma)?;
                st.weighting = WeightingMode::MixedVector;
                state = Some(st);
                state.as_mut().unwrap()
            }
        };

        let outcome = descent_step(&pp, st, collab::DEFAULT_ETA, collab::DEFAULT_ETA)?;
        let cost = outcome.cost_after;

        // error signal into the feature network for p1 (and optionally p2)
        let gx = grad_x(&pp, st)?;
        backprop_partition(&mut net, &p1_images, &gx, cfg, schedule.lr, &mut shuffle_rng)?;
        if cfg.enable_grad_y {
            let gy = grad_y(&pp, st)?;
            backprop_partition(&mut net, &p2_images, &gy, cfg, schedule.lr, &mut shuffle_rng)?;
        }

        // dictionary accuracy of p2 against p1 features for the log
        let accuracy = {
            let dict = Dictionary::from_labeled(&pp.x, &labels_p1)?;
            let model = CrcModel::new(dict, cfg.lambda)?;
            let predicted = crc_classify_batch(&model, &pp.y)?;
            accuracy_percent(&predicted, &labels_p2)?
        };

        log.rows.push(LossRow {
            epoch,
            phase: "collab",
            cost,
            accuracy,
            lr: schedule.lr,
        });

        let initial = *initial_cost.get_or_insert(outcome.cost_before);
        if !cost.is_finite() || cost > divergence_limit(initial) {
            return Err(Error::Diverged {
                cost,
                limit: divergence_limit(initial),
            });
        }
        if let ScheduleEvent::Stop = schedule.observe(cost) {
            break;
        }
    }

    let state = state.expect("at least one epoch ran");
    let dict = extract_dictionary(&net, set)?;
    Ok(TrainedModel {
        net,
        dict,
        head: HeadKind::Coconet {
            lambda: cfg.lambda,
            state,
        },
        class_names: set.class_names.clone(),
    })
}

/// Back-propagate per-sample feature gradients (columns of `grad`) through
/// the network in mini-batches, applying one Adam step per batch.
fn backprop_partition(
    net: &mut FeatNet,
    images: &[Image],
    grad: &Mat,
    cfg: &TrainConfig,
    lr: f64,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<()> {
    let order = shuffled_indices(images.len(), shuffle_rng);
    for batch in order.chunks(cfg.batch_size) {
        let batch_images: Vec<Image> = batch.iter().map(|&i| images[i].clone()).collect();
        let mut batch_grads = Mat::zeros(grad.rows(), batch.len());
        for (j, &i) in batch.iter().enumerate() {
            batch_grads.set_col(j, grad.col(i));
        }
        let (_, cache) = net.forward(&batch_images)?;
        let net_grads = net.backward(&cache, &batch_grads)?;
        net.adam_step(&net_grads, lr)?;
    }
    Ok(())
}

fn train_baseline_with_net(
    mut net: FeatNet,
    cfg: &TrainConfig,
    set: &LabeledImageSet,
    log: &mut LossLog,
) -> Result<TrainedModel> {
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHUFFLE_SEED_OFFSET));
    let mut head = SoftmaxHead::new(
        net.feature_dim(),
        set.num_classes(),
        cfg.seed.wrapping_add(HEAD_SEED_OFFSET),
    )?;
    train_softmax_phase(
        &mut net,
        &mut head,
        set,
        cfg,
        cfg.max_epochs,
        "softmax",
        log,
        &mut shuffle_rng,
    )?;
    let dict = extract_dictionary(&net, set)?;
    let head = match cfg.mode {
        TrainMode::SoftmaxBaseline => HeadKind::Softmax(head),
        TrainMode::CascadeCrc => HeadKind::Crc { lambda: cfg.lambda },
        TrainMode::CascadeProcrc => HeadKind::ProCrc {
            lambda: cfg.lambda,
            gamma: cfg.gamma,
        },
        TrainMode::Coconet => unreachable!("baseline trainer called with coconet mode"),
    };
    Ok(TrainedModel {
        net,
        dict,
        head,
        class_names: set.class_names.clone(),
    })
}

fn train_with_net(
    net: FeatNet,
    cfg: &TrainConfig,
    set: &LabeledImageSet,
    log: &mut LossLog,
) -> Result<TrainedModel> {
    match cfg.mode {
        TrainMode::Coconet => train_coconet_with_net(net, cfg, set, log),
        _ => train_baseline_with_net(net, cfg, set, log),
    }
}

fn check_image_size(cfg: &TrainConfig, set: &LabeledImageSet) -> Result<()> {
    let img = &set.images[0];
    if img.h != cfg.image_size || img.w != cfg.image_size {
        return Err(Error::dim(
            "train",
            format!(
                "dataset images are {}x{}, config expects {size}x{size} (resize at ingestion)",
                img.h,
                img.w,
                size = cfg.image_size
            ),
        ));
    }
    Ok(())
}

/// Train a model in the configured mode and return it with its loss log.
pub fn train(cfg: &TrainConfig, set: &LabeledImageSet) -> Result<(TrainedModel, LossLog)> {
    cfg.validate()?;
    check_image_size(cfg, set)?;
    let channels = set.images[0].c;
    let net = FeatNet::new(cfg.net_spec(channels), cfg.seed.wrapping_add(NET_SEED_OFFSET))?;
    let mut log = LossLog::default();
    let model = train_with_net(net, cfg, set, &mut log)?;
    Ok((model, log))
}

/// Staged training: every stage before the last runs the plain softmax
/// architecture; the network parameters carry over; only the final stage may
/// use the collaborative mode. A single stage is identical to [`train`].
pub fn pretrain_then_finetune(
    stages: &[&LabeledImageSet],
    cfg: &TrainConfig,
) -> Result<(TrainedModel, LossLog)> {
    cfg.validate()?;
    if stages.is_empty() {
        return Err(Error::param("pretrain_then_finetune", "no stages"));
    }
    let first = &stages[0].images[0];
    for stage in stages {
        let img = &stage.images[0];
        if (img.h, img.w, img.c) != (first.h, first.w, first.c) {
            return Err(Error::dim(
                "pretrain_then_finetune",
                "stages have incompatible image dimensions".to_string(),
            ));
        }
    }
    check_image_size(cfg, stages[0])?;

    let mut net = FeatNet::new(
        cfg.net_spec(first.c),
        cfg.seed.wrapping_add(NET_SEED_OFFSET),
    )?;
    let mut log = LossLog::default();
    for stage_set in &stages[..stages.len() - 1] {
        let mut stage_cfg = cfg.clone();
        stage_cfg.mode = TrainMode::SoftmaxBaseline;
        let model = train_with_net(net, &stage_cfg, stage_set, &mut log)?;
        net = model.net;
    }
    let model = train_with_net(net, cfg, stages[stages.len() - 1], &mut log)?;
    Ok((model, log))
}

/// Accuracy (%) of a trained model on a labeled set.
pub fn evaluate(model: &TrainedModel, set: &LabeledImageSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::param("evaluate", "empty test set"));
    }
    let predicted = model.infer(&set.images)?;
    accuracy_percent(&predicted, &set.labels)
}

/// Stratified k-fold cross-validation: train on k−1 folds, test on the held
/// fold, and aggregate the per-fold accuracies.
pub fn crossval(cfg: &TrainConfig, set: &LabeledImageSet, k: usize) -> Result<crate::EvalReport> {
    cfg.validate()?;
    let folds = crate::data::stratified_kfold(&set.labels, k, cfg.seed)?;
    let mut accuracies = Vec::with_capacity(k);
    for held in 0..folds.len() {
        let test = set.subset(&folds[held]);
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        if train_idx.is_empty() {
            // k = 1: train and test on the whole set
            let (model, _) = train(cfg, &set.subset(&folds[held]))?;
            accuracies.push(evaluate(&model, &test)?);
            continue;
        }
        let train_set = set.subset(&train_idx);
        let (model, _) = train(cfg, &train_set)?;
        accuracies.push(evaluate(&model, &test)?);
    }
    crate::data::aggregate(&accuracies, crate::util::fingerprint(cfg))
}

/// Run [`crossval`] for several modes and return the reports ordered from
/// best to worst mean accuracy.
pub fn compare_modes(
    base_cfg: &TrainConfig,
    set: &LabeledImageSet,
    modes: &[TrainMode],
    k: usize,
) -> Result<Vec<(TrainMode, crate::EvalReport)>> {
    let mut results = Vec::with_capacity(modes.len());
    for &mode in modes {
        let cfg = TrainConfig {
            mode,
            ..base_cfg.clone()
        };
        results.push((mode, crossval(&cfg, set, k)?));
    }
    results.sort_by(|a, b| b.1.mean.partial_cmp(&a.1.mean).unwrap());
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_finegrained, SynthConfig};

    fn tiny_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> LabeledImageSet {
        synth_finegrained(&SynthConfig {
            classes,
            per_class,
            image_size: size,
            glyph_contrast: 0.8,
            jitter: 1,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            max_epochs: 4,
            warmup_epochs: 2,
            image_size: 16,
            conv_channels: vec![4],
            feature_dim: 16,
            batch_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..800).map(|i| i / 100).collect();
        let (p1, p2) = split_partitions(&labels, 0.5, 7).unwrap();
        assert_eq!(p1.len(), 400);
        assert_eq!(p2.len(), 400);
        for class in 0..8 {
            let c1 = p1.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(c1, 50, "50/50 per class");
        }
        let (q1, q2) = split_partitions(&labels, 0.5, 7).unwrap();
        assert_eq!(p1, q1);
        assert_eq!(p2, q2);

        let (a, b) = split_partitions(&[0, 0, 1, 1], 0.5, 3).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);

        assert!(split_partitions(&[0, 0, 1], 0.5, 3).is_err(), "1-sample class");
    }

    #[test]
    fn split_respects_fraction_within_one_sample() {
        let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let (p1, _) = split_partitions(&labels, 0.3, 11).unwrap();
        for class in 0..3 {
            let c = p1.iter().filter(|&&i| labels[i] == class).count();
            assert!((c as f64 - 3.0).abs() <= 1.0);
        }
    }

    #[test]
    fn config_manifest_roundtrip_and_unknown_keys() {
        let mut cfg = TrainConfig::default();
        cfg.apply_manifest_text(
            "# comment\nmode=cascade_crc\nlambda=0.5\nconv_channels=4,8\nseed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, TrainMode::CascadeCrc);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.conv_channels, vec![4, 8]);
        assert_eq!(cfg.seed, 9);

        let mut cfg2 = TrainConfig::default();
        cfg2.apply_manifest_text(&cfg.to_manifest_text()).unwrap();
        assert_eq!(crate::util::fingerprint(&cfg), crate::util::fingerprint(&cfg2));

        assert!(cfg.apply_manifest_text("bogus_key=1\n").is_err());
        assert!(cfg.apply_manifest_text("no equals sign\n").is_err());
    }

    #[test]
    fn schedule_fires_once_then_stops() {
        let cfg = TrainConfig {
            plateau_window: 3,
            plateau_tol: 1e-4,
            ..Default::default()
        };
        let mut s = LrSchedule::new(&cfg);
        assert!(matches!(s.observe(1.0), ScheduleEvent::None));
        assert!(matches!(s.observe(0.9), ScheduleEvent::None));
        assert!(matches!(s.observe(0.8), ScheduleEvent::None)); // 20% change
        // now plateau: three nearly equal values
        assert!(matches!(s.observe(0.800001), ScheduleEvent::None));
        let ev = s.observe(0.800002);
        assert!(matches!(ev, ScheduleEvent::Reduced));
        assert_eq!(s.lr, cfg.lr_reduced);
        // window restarts; another plateau stops
        assert!(matches!(s.observe(0.800003), ScheduleEvent::None));
        assert!(matches!(s.observe(0.800004), ScheduleEvent::None));
        assert!(matches!(s.observe(0.800005), ScheduleEvent::Stop));
    }

    #[test]
    fn coconet_perfect_reconstruction_is_a_fixed_point() {
        // every sample is the same image, so p2 features are exactly
        // reconstructible from p1 for any split; with tiny λ and γ = 0 the
        // cost starts at ≈ 0 and the network receives (numerically) no
        // gradient
        let base = tiny_dataset(2, 2, 16, 5);
        let one = base.images[0].clone();
        let images: Vec<Image> = (0..8).map(|_| one.clone()).collect();
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let set = LabeledImageSet::new(images, labels, base.class_names.clone()).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Coconet,
            lambda: 1e-11,
            gamma: 0.0,
            warmup_epochs: 0,
            max_epochs: 1,
            image_size: 16,
            conv_channels: vec![4],
            feature_dim: 16,
            partition_fraction: 0.5,
            ..Default::default()
        };
        let before = FeatNet::new(cfg.net_spec(3), cfg.seed.wrapping_add(NET_SEED_OFFSET)).unwrap();
        let (model, log) = train(&cfg, &set).unwrap();
        let first_cost = log.rows[0].cost;
        assert!(first_cost < 1e-6, "cost at epoch 1 should be ≈ 0, got {first_cost}");
        // no drift beyond Adam epsilon effects
        let mut max_drift = 0.0f64;
        for i in 0..before.param_count() {
            max_drift = max_drift.max((before.param(i) - model.net.param(i)).abs());
        }
        assert!(max_drift < 1e-4, "featnet drifted by {max_drift}");
    }

    #[test]
    fn coconet_run_is_deterministic_and_head_is_softmax_free() {
        let set = tiny_dataset(2, 4, 16, 3);
        let cfg = TrainConfig {
            mode: TrainMode::Coconet,
            ..tiny_config()
        };
        let (m1, log1) = train(&cfg, &set).unwrap();
        let (m2, log2) = train(&cfg, &set).unwrap();
        assert_eq!(m1.to_bytes(), m2.to_bytes(), "seeded runs must be identical");
        assert_eq!(log1.to_csv(), log2.to_csv());
        assert!(matches!(m1.head, HeadKind::Coconet { .. }));
        // loss log carries warmup then collab phases
        assert!(log1.rows.iter().any(|r| r.phase == "warmup"));
        assert!(log1.rows.iter().any(|r| r.phase == "collab"));
    }

    #[test]
    fn coconet_cost_is_mostly_non_increasing() {
        let set = tiny_dataset(3, 6, 16, 11);
        let cfg = TrainConfig {
            mode: TrainMode::Coconet,
            max_epochs: 20,
            warmup_epochs: 0,
            image_size: 16,
            conv_channels: vec![4],
            feature_dim: 16,
            ..Default::default()
        };
        let (_, log) = train(&cfg, &set).unwrap();
        let costs: Vec<f64> = log
            .rows
            .iter()
            .filter(|r| r.phase == "collab")
            .map(|r| r.cost)
            .collect();
        assert!(costs.len() >= 10);
        let non_increasing = costs.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
        let frac = non_increasing as f64 / (costs.len() - 1) as f64;
        assert!(frac >= 0.9, "only {frac:.2} of epoch steps non-increasing");
        assert!(costs.last().unwrap() <= &costs[0]);
    }

    #[test]
    fn softmax_baseline_separates_easy_blobs() {
        // two classes with very different global brightness: linearly
        // separable on raw pixels
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..24 {
            let class = i % 2;
            let base = if class == 0 { 0.2 } else { 0.8 };
            let mut img = Image::zeros(8, 8, 1);
            for v in img.data.iter_mut() {
                *v = base + rng.gen_range(-0.05..0.05);
            }
            images.push(img);
            labels.push(class);
        }
        let set = LabeledImageSet::new(
            images,
            labels,
            vec!["dark".to_string(), "bright".to_string()],
        )
        .unwrap();

        // logistic-regression oracle on flattened pixels separates this data
        {
            let mut w = vec![0.0f64; 64];
            let mut b = 0.0f64;
            for _ in 0..500 {
                for (img, &l) in set.images.iter().zip(&set.labels) {
                    let z: f64 = w.iter().zip(&img.data).map(|(a, x)| a * x).sum::<f64>() + b;
                    let p = 1.0 / (1.0 + (-z).exp());
                    let g = p - l as f64;
                    for (wi, x) in w.iter_mut().zip(&img.data) {
                        *wi -= 0.1 * g * x;
                    }
                    b -= 0.1 * g;
                }
            }
            let correct = set
                .images
                .iter()
                .zip(&set.labels)
                .filter(|(img, &l)| {
                    let z: f64 = w.iter().zip(&img.data).map(|(a, x)| a * x).sum::<f64>() + b;
                    (z > 0.0) as usize == l
                })
                .count();
            assert_eq!(correct, set.len(), "oracle: data must be separable");
        }

        let cfg = TrainConfig {
            mode: TrainMode::SoftmaxBaseline,
            lr_initial: 1e-2,
            lr_reduced: 1e-3,
            max_epochs: 40,
            image_size: 8,
            conv_channels: vec![2],
            feature_dim: 8,
            batch_size: 8,
            ..Default::default()
        };
        let (model, _) = train(&cfg, &set).unwrap();
        assert_eq!(evaluate(&model, &set).unwrap(), 100.0);
        assert!(matches!(model.head, HeadKind::Softmax(_)));
    }

    #[test]
    fn cascade_crc_classifies_held_out_blobs() {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..32 {
            let class = i % 2;
            let base = if class == 0 { 0.25 } else { 0.75 };
            let mut img = Image::zeros(8, 8, 1);
            for v in img.data.iter_mut() {
                *v = base + rng.gen_range(-0.05..0.05);
            }
            images.push(img);
            labels.push(class);
        }
        let all = LabeledImageSet::new(images, labels, vec!["a".into(), "b".into()]).unwrap();
        let train_idx: Vec<usize> = (0..24).collect();
        let test_idx: Vec<usize> = (24..32).collect();
        let cfg = TrainConfig {
            mode: TrainMode::CascadeCrc,
            lr_initial: 1e-2,
            lr_reduced: 1e-3,
            max_epochs: 40,
            image_size: 8,
            conv_channels: vec![2],
            feature_dim: 8,
            batch_size: 8,
            ..Default::default()
        };
        let (model, _) = train(&cfg, &all.subset(&train_idx)).unwrap();
        assert!(matches!(model.head, HeadKind::Crc { .. }));
        assert_eq!(evaluate(&model, &all.subset(&test_idx)).unwrap(), 100.0);
    }

    #[test]
    fn infer_is_deterministic_and_survives_checkpoint_roundtrip() {
        let set = tiny_dataset(2, 3, 16, 31);
        let cfg = TrainConfig {
            mode: TrainMode::CascadeProcrc,
            ..tiny_config()
        };
        let (model, _) = train(&cfg, &set).unwrap();
        let p1 = model.infer(&set.images).unwrap();
        let p2 = model.infer(&set.images).unwrap();
        assert_eq!(p1, p2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cckp");
        model.save(&path).unwrap();
        let restored = TrainedModel::load(&path).unwrap();
        assert_eq!(restored.to_bytes(), model.to_bytes());
        assert_eq!(restored.infer(&set.images).unwrap(), p1);
        assert_eq!(restored.class_names, set.class_names);
    }

    #[test]
    fn single_stage_pretrain_equals_direct_training() {
        let set = tiny_dataset(2, 3, 16, 37);
        let cfg = TrainConfig {
            mode: TrainMode::Coconet,
            ..tiny_config()
        };
        let (direct, _) = train(&cfg, &set).unwrap();
        let (staged, _) = pretrain_then_finetune(&[&set], &cfg).unwrap();
        assert_eq!(direct.to_bytes(), staged.to_bytes());
    }

    #[test]
    fn pretrain_rejects_empty_and_mismatched_stages() {
        let cfg = tiny_config();
        assert!(pretrain_then_finetune(&[], &cfg).is_err());
        let a = tiny_dataset(2, 3, 16, 41);
        let b = tiny_dataset(2, 3, 8, 43);
        assert!(pretrain_then_finetune(&[&a, &b], &cfg).is_err());
    }

    #[test]
    fn two_stage_transfer_helps_on_default_seed() {
        // stage 1: a larger, easier corpus from the same generator family;
        // stage 2: the small target set
        let coarse = synth_finegrained(&SynthConfig {
            classes: 3,
            per_class: 16,
            image_size: 16,
            glyph_contrast: 0.9,
            jitter: 1,
            seed: 51,
            ..Default::default()
        })
        .unwrap();
        let target = synth_finegrained(&SynthConfig {
            classes: 3,
            per_class: 8,
            image_size: 16,
            glyph_contrast: 0.5,
            jitter: 1,
            seed: 53,
            ..Default::default()
        })
        .unwrap();
        let train_idx: Vec<usize> = (0..target.len()).filter(|i| i % 4 != 3).collect();
        let test_idx: Vec<usize> = (0..target.len()).filter(|i| i % 4 == 3).collect();
        let train_set = target.subset(&train_idx);
        let test_set = target.subset(&test_idx);

        let cfg = TrainConfig {
            mode: TrainMode::CascadeCrc,
            max_epochs: 8,
            warmup_epochs: 0,
            image_size: 16,
            conv_channels: vec![4],
            feature_dim: 16,
            ..Default::default()
        };
        let (single, _) = train(&cfg, &train_set).unwrap();
        let (staged, _) = pretrain_then_finetune(&[&coarse, &train_set], &cfg).unwrap();
        let acc_single = evaluate(&single, &test_set).unwrap();
        let acc_staged = evaluate(&staged, &test_set).unwrap();
        assert!(
            acc_staged >= acc_single,
            "two-stage {acc_staged} < single-stage {acc_single}"
        );
    }

    #[test]
    fn crossval_produces_k_folds_and_is_deterministic() {
        let set = tiny_dataset(2, 6, 16, 61);
        let cfg = TrainConfig {
            mode: TrainMode::CascadeCrc,
            max_epochs: 3,
            warmup_epochs: 0,
            image_size: 16,
            conv_channels: vec![2],
            feature_dim: 8,
            ..Default::default()
        };
        let r1 = crossval(&cfg, &set, 3).unwrap();
        assert_eq!(r1.folds.len(), 3);
        let r2 = crossval(&cfg, &set, 3).unwrap();
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    }

    #[test]
    fn divergent_training_reports_divergence() {
        let set = tiny_dataset(2, 4, 16, 67);
        let cfg = TrainConfig {
            mode: TrainMode::Coconet,
            lr_initial: 1e4,
            lr_reduced: 1e3,
            warmup_epochs: 0,
            max_epochs: 10,
            image_size: 16,
            conv_channels: vec![4],
            feature_dim: 16,
            ..Default::default()
        };
        match train(&cfg, &set) {
            Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
