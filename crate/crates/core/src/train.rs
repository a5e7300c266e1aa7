//! Staged training on frame pairs.
//!
//! Stage one teaches the encoder (with the detection head on raw
//! embeddings) to regress true object attributes from noisy detections.
//! Stage two freezes everything but the association modules and trains them
//! against ground-truth correspondence labels. Stage three unfreezes the
//! rest of the network — refinement, enhancement, detection head, and
//! association — while the encoder stays fixed.
//!
//! Training is teacher-forced: the "previous tracks" of a pair are the
//! previous frame's detections, so every step is a two-frame problem.

use std::collections::BTreeMap;

use crate::da::{associate, association_loss};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrackerModel, DET_HEAD_DIM};
use crate::numcore::{adamw_step, AdamW, OptimState, ParamId, Rng, Tape, Tensor, Value};
use crate::simworld::{encode_observations, label_associations, Frame, Scenario};

/// Training curriculum stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    /// Encoder + detection head on single frames.
    Encoder,
    /// Association modules only, on frame pairs.
    Association,
    /// Everything except the encoder, on frame pairs.
    Joint,
}

impl std::str::FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(TrainStage::Encoder),
            "association" => Ok(TrainStage::Association),
            "joint" => Ok(TrainStage::Joint),
            other => Err(Error::config(
                "stage",
                format!("unknown stage `{other}` (expected encoder, association, or joint)"),
            )),
        }
    }
}

impl std::fmt::Display for TrainStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainStage::Encoder => "encoder",
            TrainStage::Association => "association",
            TrainStage::Joint => "joint",
        })
    }
}

/// Training hyper-parameters. `steps` is the schedule horizon the one-cycle
/// learning rate stretches over.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Samples (frames or pairs) per optimizer step.
    pub batch: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    /// Weight of the detection regression term in the joint stage.
    pub det_loss_weight: f64,
    /// Jitter detection positions and headings while sampling.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch: 4,
            max_lr: 1e-3,
            weight_decay: 0.01,
            det_loss_weight: 1.0,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return Err(Error::config("max_lr", "must be finite and positive"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay", "must be finite and non-negative"));
        }
        if !(self.det_loss_weight >= 0.0) || !self.det_loss_weight.is_finite() {
            return Err(Error::config("det_loss_weight", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-step mean batch losses from one `run` call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub losses: Vec<f64>,
}

impl TrainRun {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Loss curve as a two-column CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l:.12}\n"));
        }
        out
    }
}

/// Mutable training state: optimizer moments, sampling RNG, and progress
/// through the schedule horizon. Checkpoints capture it losslessly.
#[derive(Debug, Clone)]
pub struct TrainSession {
    pub config: TrainConfig,
    pub optim: OptimState,
    pub rng: Rng,
    pub completed: usize,
}

impl TrainSession {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(TrainSession {
            config,
            optim: OptimState::new(),
            rng: Rng::new(seed),
            completed: 0,
        })
    }

    /// Position in [0, 1] along the one-cycle schedule.
    pub fn schedule_pos(&self) -> f64 {
        if self.config.steps <= 1 {
            return 0.0;
        }
        (self.completed as f64 / (self.config.steps - 1) as f64).min(1.0)
    }

    /// Runs `steps` optimizer steps of the given stage over the pool.
    pub fn run(
        &mut self,
        model: &mut TrackerModel,
        stage: TrainStage,
        pool: &[Scenario],
        steps: usize,
    ) -> Result<TrainRun> {
        if pool.is_empty() {
            return Err(Error::data("training pool is empty"));
        }
        let ids = trainable_ids(model, stage);
        if ids.is_empty() {
            return Err(Error::contract(format!(
                "stage `{stage}` has no trainable parameters under this model config"
            )));
        }
        let opt = AdamW {
            max_lr: self.config.max_lr,
            weight_decay: self.config.weight_decay,
            ..AdamW::default()
        };

        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            model.store.zero_grads();
            let mut batch_loss = 0.0;
            for _ in 0..self.config.batch {
                batch_loss += self.one_sample(model, stage, pool)?;
            }
            // Only parameters actually reached by this batch update; a batch
            // without ground-truth-backed rows, for example, leaves the
            // detection head untouched.
            let step_ids: Vec<ParamId> = ids
                .iter()
                .filter(|id| model.store.get(**id).grad.is_some())
                .copied()
                .collect();
            if step_ids.is_empty() {
                return Err(Error::data(
                    "batch produced no gradient for any trainable parameter",
                ));
            }
            let pos = self.schedule_pos();
            adamw_step(&opt, &mut model.store, &step_ids, &mut self.optim, pos)?;
            self.completed += 1;
            losses.push(batch_loss / self.config.batch as f64);
        }
        Ok(TrainRun { losses })
    }

    /// Samples one usable training example, builds its loss, backpropagates,
    /// and accumulates parameter gradients. Returns the loss value.
    fn one_sample(
        &mut self,
        model: &mut TrackerModel,
        stage: TrainStage,
        pool: &[Scenario],
    ) -> Result<f64> {
        const ATTEMPTS: usize = 200;
        for _ in 0..ATTEMPTS {
            let mut tape = Tape::new();
            let loss = match stage {
                TrainStage::Encoder => {
                    let frame = sample_frame(pool, &mut self.rng);
                    let frame = self.maybe_augment(frame);
                    stage1_loss(model, &mut tape, &frame)?
                }
                TrainStage::Association | TrainStage::Joint => {
                    let (prev, curr) = sample_pair(pool, &mut self.rng);
                    let prev = self.maybe_augment(prev);
                    let curr = self.maybe_augment(curr);
                    let graph = build_pair(model, &mut tape, &prev, &curr)?;
                    match stage {
                        TrainStage::Association => graph.assoc,
                        _ => {
                            let det = match graph.det {
                                Some(d) if self.config.det_loss_weight > 0.0 => {
                                    Some(tape.scale(d, self.config.det_loss_weight)?)
                                }
                                _ => None,
                            };
                            match (graph.assoc, det) {
                                (Some(a), Some(d)) => Some(tape.add(a, d)?),
                                (Some(a), None) => Some(a),
                                (None, Some(d)) => Some(d),
                                (None, None) => None,
                            }
                        }
                    }
                }
            };
            let Some(loss) = loss else { continue };
            let scale = 1.0 / self.config.batch as f64;
            let scaled = tape.scale(loss, scale)?;
            tape.backward(scaled)?;
            tape.accumulate_param_grads(&mut model.store);
            return Ok(tape.data(loss)[0]);
        }
        Err(Error::data(
            "could not sample a usable training example from the pool",
        ))
    }

    fn maybe_augment(&mut self, frame: &Frame) -> Frame {
        if !self.config.augment {
            return frame.clone();
        }
        let mut f = frame.clone();
        for det in &mut f.dets {
            det.x += self.rng.normal_with(0.0, 0.05);
            det.y += self.rng.normal_with(0.0, 0.05);
            det.heading_meas =
                (det.heading_meas + self.rng.normal_with(0.0, 0.01)).rem_euclid(std::f64::consts::TAU);
        }
        f
    }
}

/// Parameters updated by each stage.
fn trainable_ids(model: &TrackerModel, stage: TrainStage) -> Vec<ParamId> {
    match stage {
        TrainStage::Encoder => model.store.ids_with_prefix(&["enc.", "head."]),
        TrainStage::Association => model.da_param_ids(),
        TrainStage::Joint => {
            let skip_qem = !model.config.use_qem;
            model
                .non_encoder_param_ids()
                .into_iter()
                .filter(|id| !(skip_qem && model.store.name(*id).starts_with("qem.")))
                .collect()
        }
    }
}

fn sample_frame<'a>(pool: &'a [Scenario], rng: &mut Rng) -> &'a Frame {
    let s = &pool[rng.below(pool.len())];
    &s.frames[rng.below(s.frames.len())]
}

fn sample_pair<'a>(pool: &'a [Scenario], rng: &mut Rng) -> (&'a Frame, &'a Frame) {
    let s = &pool[rng.below(pool.len())];
    let i = rng.below(s.frames.len() - 1);
    (&s.frames[i], &s.frames[i + 1])
}

/// Regression targets for a frame's detections: true position (normalized),
/// heading sin/cos, and class one-hot, with a mask selecting rows backed by
/// a ground-truth object. None when no row is backed.
fn det_targets(frame: &Frame, pos_norm: f64) -> Option<(Tensor, Vec<bool>, usize)> {
    let m = frame.dets.len();
    let mut data = vec![0.0; m * DET_HEAD_DIM];
    let mut mask = vec![false; m];
    let mut count = 0;
    for (j, det) in frame.dets.iter().enumerate() {
        let Some(gid) = det.source_gt else { continue };
        let Some(gt) = frame.gt.iter().find(|o| o.id == gid) else {
            continue;
        };
        let row = &mut data[j * DET_HEAD_DIM..(j + 1) * DET_HEAD_DIM];
        row[0] = gt.x / pos_norm;
        row[1] = gt.y / pos_norm;
        row[2] = gt.heading.sin();
        row[3] = gt.heading.cos();
        row[4 + gt.class.index()] = 1.0;
        mask[j] = true;
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let t = Tensor::from_vec(vec![m, DET_HEAD_DIM], data).expect("target shape");
    Some((t, mask, count))
}

/// Mean squared error over the masked rows of `pred`.
fn masked_mse(
    tape: &mut Tape,
    pred: Value,
    target: Tensor,
    mask: &[bool],
    rows: usize,
) -> Result<Value> {
    let cols = target.cols();
    let tgt = tape.input(target);
    let diff = tape.sub(pred, tgt)?;
    let sq = tape.mul(diff, diff)?;
    let zeros = tape.input(Tensor::zeros(tape.shape(sq).to_vec()));
    let masked = tape.select_rows(mask, sq, zeros)?;
    let total = tape.sum_all(masked)?;
    tape.scale(total, 1.0 / (rows * cols) as f64)
}

/// Stage-one loss: detection head applied directly to encoder embeddings.
fn stage1_loss(model: &TrackerModel, tape: &mut Tape, frame: &Frame) -> Result<Option<Value>> {
    if frame.dets.is_empty() {
        return Ok(None);
    }
    let Some((target, mask, rows)) = det_targets(frame, model.config.pos_norm) else {
        return Ok(None);
    };
    let qin = encode_observations(
        &model.store,
        tape,
        &model.encoder,
        frame,
        model.config.pos_norm,
    )?;
    let out = model.det_head.forward(&model.store, tape, qin)?;
    Ok(Some(masked_mse(tape, out, target, &mask, rows)?))
}

/// The tape nodes a pair forward produces.
pub struct PairGraph {
    /// Mean association cross-entropy across the DA streams (None when the
    /// previous frame has no detections).
    pub assoc: Option<Value>,
    /// Masked detection regression loss on the current frame.
    pub det: Option<Value>,
    /// Final-stream association scores with their labels, for accuracy.
    pub scores: Option<(Value, Vec<usize>)>,
}

/// Builds the teacher-forced training graph for one frame pair, mirroring
/// the inference pipeline with the previous frame's detections as tracks.
pub fn build_pair(
    model: &TrackerModel,
    tape: &mut Tape,
    prev: &Frame,
    curr: &Frame,
) -> Result<PairGraph> {
    let cfg = &model.config;
    let n = prev.dets.len();
    let m = curr.dets.len();
    if n == 0 {
        return Ok(PairGraph {
            assoc: None,
            det: None,
            scores: None,
        });
    }

    // Previous side: no earlier history, so enhancement passes through.
    let prev_qin = encode_observations(&model.store, tape, &model.encoder, prev, cfg.pos_norm)?;
    let (prev_qfeat, prev_qfine) = model.refine(tape, prev_qin)?;
    let headings: Vec<f64> = prev.dets.iter().map(|d| d.heading_meas).collect();

    // Current side.
    let curr_qin = encode_observations(&model.store, tape, &model.encoder, curr, cfg.pos_norm)?;
    let (curr_qfeat, curr_qfine, det) = if m == 0 {
        (None, None, None)
    } else {
        let newborn_mask: Vec<bool> = curr
            .dets
            .iter()
            .map(|det| {
                !prev
                    .dets
                    .iter()
                    .any(|p| (det.x - p.x).hypot(det.y - p.y) < cfg.gate_radius)
            })
            .collect();
        let enhanced = if cfg.use_qem {
            let prev_feats = prev_qfine.unwrap_or(prev_qfeat);
            let (e, _) = model.qem.enhance(
                &model.store,
                tape,
                curr_qin,
                Some(prev_feats),
                &newborn_mask,
            )?;
            e
        } else {
            curr_qin
        };
        let (qfeat, qfine) = model.refine(tape, enhanced)?;
        let refined = qfine.unwrap_or(qfeat);
        let det = match det_targets(curr, cfg.pos_norm) {
            Some((target, mask, rows)) => {
                let out = model.detect(tape, refined)?;
                Some(masked_mse(tape, out, target, &mask, rows)?)
            }
            None => None,
        };
        (Some(qfeat), Some(qfine), det)
    };

    // Association streams. With an empty current frame the target MLP still
    // produces the dead row, so every label points at the dead column.
    let labels = label_associations(prev, curr);
    let upd_c = model.da.update_query_features(
        &model.store,
        tape,
        prev_qfeat,
        prev_qin,
        &headings,
    )?;
    let curr_qin_or = |v: Option<Value>| v.unwrap_or(curr_qin);
    let tgt_c = model
        .da
        .refine_targets(&model.store, tape, curr_qin_or(curr_qfeat))?;
    let sc_c = associate(tape, upd_c, tgt_c)?;
    let loss_c = association_loss(tape, sc_c, &labels)?;

    let (assoc, scores) = match (&model.da_fine, prev_qfine) {
        (Some(da_fine), Some(prev_qfine)) => {
            let upd_f = da_fine.update_query_features(
                &model.store,
                tape,
                prev_qfine,
                prev_qfeat,
                &headings,
            )?;
            let fine_curr = curr_qfine.flatten().or(curr_qfeat);
            let tgt_f = da_fine.refine_targets(&model.store, tape, curr_qin_or(fine_curr))?;
            let sc_f = associate(tape, upd_f, tgt_f)?;
            let loss_f = association_loss(tape, sc_f, &labels)?;
            let sum = tape.add(loss_c, loss_f)?;
            (tape.scale(sum, 0.5)?, (sc_f, labels))
        }
        _ => (loss_c, (sc_c, labels)),
    };

    Ok(PairGraph {
        assoc: Some(assoc),
        det,
        scores: Some(scores),
    })
}

/// Association quality over every consecutive pair in a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocEval {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub rows: usize,
}

/// Evaluates association loss and argmax accuracy without training.
pub fn association_metrics(model: &TrackerModel, pool: &[Scenario]) -> Result<AssocEval> {
    let mut loss_sum = 0.0;
    let mut pairs = 0usize;
    let mut correct = 0usize;
    let mut rows = 0usize;
    for scenario in pool {
        for w in scenario.frames.windows(2) {
            let mut tape = Tape::new();
            let graph = build_pair(model, &mut tape, &w[0], &w[1])?;
            let (Some(assoc), Some((scores, labels))) = (graph.assoc, graph.scores) else {
                continue;
            };
            loss_sum += tape.data(assoc)[0];
            pairs += 1;
            let width = tape.shape(scores)[1];
            let data = tape.data(scores);
            for (i, label) in labels.iter().enumerate() {
                let row = &data[i * width..(i + 1) * width];
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                rows += 1;
                if best == *label {
                    correct += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::data("no usable pairs for association evaluation"));
    }
    Ok(AssocEval {
        mean_loss: loss_sum / pairs as f64,
        accuracy: correct as f64 / rows as f64,
        rows,
    })
}

/// Mean per-row detection regression error over every consecutive pair,
/// evaluated through the full pair forward (so enhancement participates).
pub fn detection_regression_error(model: &TrackerModel, pool: &[Scenario]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for scenario in pool {
        for w in scenario.frames.windows(2) {
            let mut tape = Tape::new();
            let graph = build_pair(model, &mut tape, &w[0], &w[1])?;
            if let Some(det) = graph.det {
                sum += tape.data(det)[0];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::data("no usable pairs for detection evaluation"));
    }
    Ok(sum / count as f64)
}

// ----- checkpointing -----

pub const CHECKPOINT_SCHEMA: &str = "attentrack.checkpoint";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Serializable snapshot of a model plus its training session.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub version: u32,
    pub model: ModelConfig,
    pub init_seed: u64,
    pub stage: TrainStage,
    pub completed: usize,
    pub train: TrainConfig,
    pub params: BTreeMap<String, Tensor>,
    pub optim_step: u64,
    pub optim_moments: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub rng_state: [u64; 4],
}

impl Checkpoint {
    pub fn capture(
        model: &TrackerModel,
        init_seed: u64,
        stage: TrainStage,
        session: &TrainSession,
    ) -> Checkpoint {
        let (optim_step, optim_moments) = session.optim.export(&model.store);
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            version: CHECKPOINT_SCHEMA_VERSION,
            model: model.config.clone(),
            init_seed,
            stage,
            completed: session.completed,
            train: session.config.clone(),
            params: model.store.export(),
            optim_step,
            optim_moments,
            rng_state: session.rng.state(),
        }
    }

    /// Reconstructs the model and session exactly as captured.
    pub fn restore(&self) -> Result<(TrackerModel, TrainSession, TrainStage)> {
        let mut model = TrackerModel::new(&self.model, self.init_seed)?;
        model.store.import(&self.params)?;
        let optim = OptimState::import(&model.store, self.optim_step, &self.optim_moments)?;
        let session = TrainSession {
            config: self.train.clone(),
            optim,
            rng: Rng::from_state(self.rng_state),
            completed: self.completed,
        };
        Ok((model, session, self.stage))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self).map_err(|e| Error::data(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(s)
            .map_err(|e| Error::data(format!("bad checkpoint: {e}")))?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(Error::data(format!(
                "unexpected schema `{}`, expected `{CHECKPOINT_SCHEMA}`",
                ck.schema
            )));
        }
        if ck.version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }
}
