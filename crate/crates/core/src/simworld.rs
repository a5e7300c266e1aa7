//! Synthetic bird's-eye-view tracking world.
//!
//! Objects live in an ego-centered BEV box and move with constant velocity
//! plus jitter; they are born and die by Poisson-style rates and die when
//! they leave the box. Each frame emits noisy detections: ground-truth
//! objects drop out with probability `p_miss`, clutter arrives at rate
//! `clutter_rate`, and positions/headings are Gaussian-perturbed. Scenarios
//! serialize to JSON-lines with a schema-version header so generated data
//! is a stable on-disk artifact.

use std::io::{BufRead, Write};

use crate::attention::Mlp2;
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Rng, Tape, Tensor, Value};

/// Object categories, ordered as they appear in one-hot encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Truck,
    Bus,
    Pedestrian,
    Bicycle,
    Motorcycle,
    Trailer,
}

pub const NUM_CLASSES: usize = 7;

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Pedestrian,
        ObjectClass::Bicycle,
        ObjectClass::Motorcycle,
        ObjectClass::Trailer,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<ObjectClass> {
        Self::ALL.get(i).copied().ok_or(Error::IndexOutOfRange {
            op: "ObjectClass::from_index",
            index: i,
            len: NUM_CLASSES,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Bus => "bus",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Bicycle => "bicycle",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Trailer => "trailer",
        }
    }

    /// Hard speed cap in m/s.
    pub fn speed_cap(self) -> f64 {
        match self {
            ObjectClass::Car => 20.0,
            ObjectClass::Truck => 18.0,
            ObjectClass::Bus => 15.0,
            ObjectClass::Pedestrian => 2.5,
            ObjectClass::Bicycle => 8.0,
            ObjectClass::Motorcycle => 20.0,
            ObjectClass::Trailer => 15.0,
        }
    }

    /// Nominal (length, width) in meters.
    pub fn nominal_size(self) -> (f64, f64) {
        match self {
            ObjectClass::Car => (4.5, 1.9),
            ObjectClass::Truck => (7.0, 2.5),
            ObjectClass::Bus => (11.0, 2.9),
            ObjectClass::Pedestrian => (0.7, 0.7),
            ObjectClass::Bicycle => (1.8, 0.6),
            ObjectClass::Motorcycle => (2.1, 0.8),
            ObjectClass::Trailer => (10.0, 2.6),
        }
    }

    /// Relative spawn frequency; proportions follow the benchmark's
    /// ground-truth class counts, heavily skewed toward cars and pedestrians.
    pub fn mix_weight(self) -> f64 {
        match self {
            ObjectClass::Car => 58317.0,
            ObjectClass::Truck => 9650.0,
            ObjectClass::Bus => 2112.0,
            ObjectClass::Pedestrian => 25423.0,
            ObjectClass::Bicycle => 1993.0,
            ObjectClass::Motorcycle => 1977.0,
            ObjectClass::Trailer => 2425.0,
        }
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ego pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Maps an ego-frame point into the world frame.
pub fn ego_to_world(pose: &EgoPose, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = pose.yaw.sin_cos();
    (pose.x + c * x - s * y, pose.y + s * x + c * y)
}

/// Maps a world-frame point into the ego frame; inverse of [`ego_to_world`].
pub fn world_to_ego(pose: &EgoPose, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = pose.yaw.sin_cos();
    let dx = x - pose.x;
    let dy = y - pose.y;
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Ground-truth object state for one frame, in ego-frame BEV meters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectState {
    pub id: u64,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// One detection: measured box attributes plus provenance. `source_gt` is
/// the generating object id, or None for clutter.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionQuery {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub heading_meas: f64,
    pub heatmap_score: f64,
    pub class_logits: Vec<f64>,
    pub source_gt: Option<u64>,
}

impl DetectionQuery {
    /// Most likely class under the measured logits.
    pub fn class(&self) -> ObjectClass {
        let mut best = 0;
        for (i, v) in self.class_logits.iter().enumerate() {
            if *v > self.class_logits[best] {
                best = i;
            }
        }
        ObjectClass::from_index(best).unwrap_or(ObjectClass::Car)
    }
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Frame {
    pub t: f64,
    pub ego: EgoPose,
    pub gt: Vec<ObjectState>,
    pub dets: Vec<DetectionQuery>,
}

/// World generation parameters. All fields have defaults so config files
/// can set only what they vary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Frames per scenario; at least 2 so every scenario yields a pair.
    pub frames: usize,
    /// Frame period in seconds.
    pub dt: f64,
    /// Half side length of the ego-centered BEV box; objects outside die.
    pub world_half_extent: f64,
    /// Objects spawned at t = 0.
    pub initial_objects: usize,
    /// Poisson rate of new objects per frame.
    pub birth_rate: f64,
    /// Per-object, per-frame death probability.
    pub death_rate: f64,
    /// Probability a live object emits no detection in a frame.
    pub p_miss: f64,
    /// Poisson rate of clutter detections per frame.
    pub clutter_rate: f64,
    /// Std-dev of detection position noise, meters.
    pub sigma_pos: f64,
    /// Std-dev of detection heading noise, radians.
    pub sigma_heading: f64,
    /// Std-dev of per-frame speed jitter, m/s.
    pub sigma_vel: f64,
    /// Std-dev of per-frame heading drift, radians.
    pub sigma_turn: f64,
    /// Scales sampled speeds relative to the class caps (0 = static world).
    pub speed_scale: f64,
    /// Ego forward speed, m/s.
    pub ego_speed: f64,
    /// Ego yaw rate, rad/s.
    pub ego_yaw_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            frames: 40,
            dt: 0.5,
            world_half_extent: 40.0,
            initial_objects: 8,
            birth_rate: 0.15,
            death_rate: 0.01,
            p_miss: 0.0,
            clutter_rate: 0.0,
            sigma_pos: 0.0,
            sigma_heading: 0.0,
            sigma_vel: 0.1,
            sigma_turn: 0.02,
            speed_scale: 0.3,
            ego_speed: 0.0,
            ego_yaw_rate: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::config("frames", "must be at least 2"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.world_half_extent > 0.0) {
            return Err(Error::config("world_half_extent", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_miss) {
            return Err(Error::config("p_miss", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.death_rate) {
            return Err(Error::config("death_rate", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("birth_rate", self.birth_rate),
            ("clutter_rate", self.clutter_rate),
            ("sigma_pos", self.sigma_pos),
            ("sigma_heading", self.sigma_heading),
            ("sigma_vel", self.sigma_vel),
            ("sigma_turn", self.sigma_turn),
            ("speed_scale", self.speed_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !self.ego_speed.is_finite() || !self.ego_yaw_rate.is_finite() {
            return Err(Error::config("ego", "must be finite"));
        }
        Ok(())
    }
}

/// A generated scenario: config echo plus per-frame ground truth and
/// detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub frames: Vec<Frame>,
}

fn sample_class(rng: &mut Rng) -> ObjectClass {
    let total: f64 = ObjectClass::ALL.iter().map(|c| c.mix_weight()).sum();
    let mut draw = rng.uniform() * total;
    for c in ObjectClass::ALL {
        draw -= c.mix_weight();
        if draw < 0.0 {
            return c;
        }
    }
    ObjectClass::Trailer
}

struct LiveObject {
    id: u64,
    class: ObjectClass,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    length: f64,
    width: f64,
}

fn spawn_object(cfg: &ScenarioConfig, rng: &mut Rng, id: u64) -> LiveObject {
    let class = sample_class(rng);
    let (nl, nw) = class.nominal_size();
    let reach = 0.9 * cfg.world_half_extent;
    LiveObject {
        id,
        class,
        x: rng.uniform_in(-reach, reach),
        y: rng.uniform_in(-reach, reach),
        heading: rng.uniform_in(0.0, std::f64::consts::TAU),
        speed: rng.uniform_in(0.0, class.speed_cap() * cfg.speed_scale.min(1.0)),
        length: nl * rng.uniform_in(0.9, 1.1),
        width: nw * rng.uniform_in(0.9, 1.1),
    }
}

/// Deterministically generates a scenario from config and seed.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let cfg = config;
    let mut rng = Rng::new(seed);
    let mut next_id: u64 = 0;
    let mut live: Vec<LiveObject> = Vec::new();
    for _ in 0..cfg.initial_objects {
        live.push(spawn_object(cfg, &mut rng, next_id));
        next_id += 1;
    }

    let mut ego = EgoPose {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };
    let mut frames = Vec::with_capacity(cfg.frames);
    for fi in 0..cfg.frames {
        if fi > 0 {
            // Ego moves first; object states are ego-frame, so ego motion
            // only changes the recorded pose used by the frame transforms.
            ego.x += cfg.ego_speed * cfg.dt * ego.yaw.cos();
            ego.y += cfg.ego_speed * cfg.dt * ego.yaw.sin();
            ego.yaw += cfg.ego_yaw_rate * cfg.dt;

            // Constant-velocity step with jitter, then deaths, then births.
            for obj in &mut live {
                let cap = obj.class.speed_cap() * cfg.speed_scale.min(1.0);
                obj.speed = (obj.speed + rng.normal_with(0.0, cfg.sigma_vel)).clamp(0.0, cap);
                obj.heading += rng.normal_with(0.0, cfg.sigma_turn);
                obj.x += obj.speed * obj.heading.cos() * cfg.dt;
                obj.y += obj.speed * obj.heading.sin() * cfg.dt;
            }
            let he = cfg.world_half_extent;
            let mut survivors = Vec::with_capacity(live.len());
            for obj in live.drain(..) {
                let out_of_box = obj.x.abs() > he || obj.y.abs() > he;
                let hazard = rng.uniform() < cfg.death_rate;
                if !out_of_box && !hazard {
                    survivors.push(obj);
                }
            }
            live = survivors;
            for _ in 0..rng.poisson(cfg.birth_rate) {
                live.push(spawn_object(cfg, &mut rng, next_id));
                next_id += 1;
            }
        }

        let gt: Vec<ObjectState> = live
            .iter()
            .map(|o| ObjectState {
                id: o.id,
                class: o.class,
                x: o.x,
                y: o.y,
                heading: o.heading.rem_euclid(std::f64::consts::TAU),
                speed: o.speed,
                length: o.length,
                width: o.width,
            })
            .collect();

        let mut dets: Vec<DetectionQuery> = Vec::new();
        for o in &gt {
            if rng.uniform() < cfg.p_miss {
                continue;
            }
            let mut logits = vec![0.0; NUM_CLASSES];
            logits[o.class.index()] = 1.0;
            dets.push(DetectionQuery {
                x: o.x + rng.normal_with(0.0, cfg.sigma_pos),
                y: o.y + rng.normal_with(0.0, cfg.sigma_pos),
                length: o.length,
                width: o.width,
                heading_meas: (o.heading + rng.normal_with(0.0, cfg.sigma_heading))
                    .rem_euclid(std::f64::consts::TAU),
                heatmap_score: rng.uniform_in(0.6, 1.0),
                class_logits: logits,
                source_gt: Some(o.id),
            });
        }
        for _ in 0..rng.poisson(cfg.clutter_rate) {
            let class = sample_class(&mut rng);
            let (nl, nw) = class.nominal_size();
            let mut logits = vec![0.0; NUM_CLASSES];
            logits[class.index()] = 1.0;
            let he = cfg.world_half_extent;
            dets.push(DetectionQuery {
                x: rng.uniform_in(-he, he),
                y: rng.uniform_in(-he, he),
                length: nl * rng.uniform_in(0.8, 1.2),
                width: nw * rng.uniform_in(0.8, 1.2),
                heading_meas: rng.uniform_in(0.0, std::f64::consts::TAU),
                // Clutter confidence is low-mean Beta(2, 8).
                heatmap_score: rng.beta_int(2, 8),
                class_logits: logits,
                source_gt: None,
            });
        }

        frames.push(Frame {
            t: fi as f64 * cfg.dt,
            ego,
            gt,
            dets,
        });
    }

    Ok(Scenario {
        seed,
        config: cfg.clone(),
        frames,
    })
}

// ----- feature encoding -----

/// Raw per-detection feature width: x, y, length, width, 7 class logits,
/// sin/cos heading, heatmap score.
pub const RAW_FEATURE_DIM: usize = 4 + NUM_CLASSES + 3;

/// Stacks raw detection features for one frame into [M x RAW_FEATURE_DIM].
/// Positions are normalized by `pos_norm` and sizes by a fixed 12 m scale so
/// all channels are order-1.
pub fn detection_features(frame: &Frame, pos_norm: f64) -> Result<Tensor> {
    const SIZE_NORM: f64 = 12.0;
    if !(pos_norm > 0.0) {
        return Err(Error::contract("detection_features: pos_norm must be positive"));
    }
    let m = frame.dets.len();
    let mut data = Vec::with_capacity(m * RAW_FEATURE_DIM);
    for det in &frame.dets {
        if det.class_logits.len() != NUM_CLASSES {
            return Err(Error::data(format!(
                "detection has {} class logits, expected {NUM_CLASSES}",
                det.class_logits.len()
            )));
        }
        data.push(det.x / pos_norm);
        data.push(det.y / pos_norm);
        data.push(det.length / SIZE_NORM);
        data.push(det.width / SIZE_NORM);
        data.extend_from_slice(&det.class_logits);
        data.push(det.heading_meas.sin());
        data.push(det.heading_meas.cos());
        data.push(det.heatmap_score);
    }
    Tensor::from_vec(vec![m, RAW_FEATURE_DIM], data)
}

/// Encodes a frame's detections into query embeddings [M x d] through the
/// observation encoder. Deterministic given frame content and weights.
pub fn encode_observations(
    store: &ParamStore,
    tape: &mut Tape,
    encoder: &Mlp2,
    frame: &Frame,
    pos_norm: f64,
) -> Result<Value> {
    let raw = detection_features(frame, pos_norm)?;
    let x = tape.input(raw);
    encoder.forward(store, tape, x)
}

// ----- association labels -----

/// Ground-truth association targets for a frame pair: for previous
/// detection i, the index of the current detection generated by the same
/// object, or `curr.dets.len()` (the dead column) when the object vanished,
/// was missed, or the detection was clutter.
pub fn label_associations(prev: &Frame, curr: &Frame) -> Vec<usize> {
    let dead = curr.dets.len();
    prev.dets
        .iter()
        .map(|p| match p.source_gt {
            None => dead,
            Some(gid) => curr
                .dets
                .iter()
                .position(|c| c.source_gt == Some(gid))
                .unwrap_or(dead),
        })
        .collect()
}

// ----- serialization -----

pub const SCENARIO_SCHEMA: &str = "attentrack.scenario";
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct ScenarioHeader {
    schema: String,
    version: u32,
    seed: u64,
    config: ScenarioConfig,
}

/// Serializes a scenario to JSON-lines: a schema header line, then one
/// frame per line. Output is byte-deterministic.
pub fn write_scenario_jsonl(scenario: &Scenario, out: &mut impl Write) -> Result<()> {
    let header = ScenarioHeader {
        schema: SCENARIO_SCHEMA.to_string(),
        version: SCENARIO_SCHEMA_VERSION,
        seed: scenario.seed,
        config: scenario.config.clone(),
    };
    let to_io = |e: std::io::Error| Error::data(format!("scenario write failed: {e}"));
    let mut line = serde_json::to_string(&header).map_err(|e| Error::data(e.to_string()))?;
    line.push('\n');
    out.write_all(line.as_bytes()).map_err(to_io)?;
    for frame in &scenario.frames {
        let mut line = serde_json::to_string(frame).map_err(|e| Error::data(e.to_string()))?;
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(to_io)?;
    }
    Ok(())
}

/// Parses a scenario from JSON-lines, validating the schema header.
pub fn read_scenario_jsonl(input: &mut impl BufRead) -> Result<Scenario> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::data("scenario file is empty"))?
        .map_err(|e| Error::data(format!("scenario read failed: {e}")))?;
    let header: ScenarioHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::data(format!("bad scenario header: {e}")))?;
    if header.schema != SCENARIO_SCHEMA {
        return Err(Error::data(format!(
            "unexpected schema `{}`, expected `{SCENARIO_SCHEMA}`",
            header.schema
        )));
    }
    if header.version != SCENARIO_SCHEMA_VERSION {
        return Err(Error::data(format!(
            "unsupported scenario schema version {}",
            header.version
        )));
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::data(format!("scenario read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("bad frame on line {}: {e}", i + 2)))?;
        frames.push(frame);
    }
    Ok(Scenario {
        seed: header.seed,
        config: header.config,
        frames,
    })
}

/// Serializes to an in-memory string (used by tests and hashing).
pub fn scenario_to_string(scenario: &Scenario) -> Result<String> {
    let mut buf = Vec::new();
    write_scenario_jsonl(scenario, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::data(e.to_string()))
}

/// Parses from an in-memory string.
pub fn scenario_from_str(s: &str) -> Result<Scenario> {
    read_scenario_jsonl(&mut s.as_bytes())
}
