//! Tracker model: one parameter store holding the observation encoder, the
//! query-enhancement module, the detection-refinement attention stack, the
//! detection head, and the data-association modules.
//!
//! Construction is deterministic: the same config and seed always produce
//! bit-identical initial weights.

use crate::attention::{CrossAttentionLayer, Mlp2};
use crate::da::DaModule;
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Value};
use crate::qem::QemModule;
use crate::simworld::{NUM_CLASSES, RAW_FEATURE_DIM};

/// Width of the detection head output: x, y, sin/cos heading, class one-hot.
pub const DET_HEAD_DIM: usize = 4 + NUM_CLASSES;

/// Model hyper-parameters and feature flags. Defaults give the full model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Query embedding width.
    pub d_model: usize,
    /// Hidden width of the MLPs.
    pub hidden: usize,
    /// Enable the query-enhancement module (previous-frame context mixing).
    pub use_qem: bool,
    /// Use the learned transformer data association; when false the tracker
    /// falls back to greedy matching of raw detection features by dot
    /// product.
    pub use_transformer_da: bool,
    /// Run the second (fine) refinement stage and fuse two association
    /// matrices; when false a single coarse association is used.
    pub dual_da: bool,
    /// Position normalization scale in meters for raw features.
    pub pos_norm: f64,
    /// Enhancement gate radius in meters: a current detection counts as
    /// matched history only if some previous-frame detection lies strictly
    /// within this distance.
    pub gate_radius: f64,
    /// Minimum heatmap score for an unmatched detection to found a track.
    pub spawn_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            hidden: 64,
            use_qem: true,
            use_transformer_da: true,
            dual_da: true,
            pos_norm: 40.0,
            gate_radius: 2.0,
            spawn_threshold: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::config("d_model", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        if !(self.pos_norm > 0.0) || !self.pos_norm.is_finite() {
            return Err(Error::config("pos_norm", "must be finite and positive"));
        }
        if !(self.gate_radius > 0.0) || !self.gate_radius.is_finite() {
            return Err(Error::config("gate_radius", "must be finite and positive"));
        }
        if !(0.0..=1.0).contains(&self.spawn_threshold) {
            return Err(Error::config("spawn_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The assembled tracker. All weights live in `store`; module structs hold
/// only parameter handles.
pub struct TrackerModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Raw detection features -> query embeddings (Q-in).
    pub encoder: Mlp2,
    /// Mixes previous-frame track features into gated current queries.
    pub qem: QemModule,
    /// Coarse refinement: self-attention over the frame's queries -> Q-feat.
    pub cdet: CrossAttentionLayer,
    /// Fine refinement on top of Q-feat -> Q-fine (dual mode only).
    pub fdet: Option<CrossAttentionLayer>,
    /// Regression head from refined features to detection attributes.
    pub det_head: Mlp2,
    /// Coarse data association over (prev Q-feat, curr Q-feat).
    pub da: DaModule,
    /// Fine data association over (prev Q-fine, curr Q-fine), dual mode only.
    pub da_fine: Option<DaModule>,
}

impl TrackerModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<TrackerModel> {
        config.validate()?;
        let d = config.d_model;
        let h = config.hidden;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);

        let encoder = Mlp2::new(&mut store, "enc", RAW_FEATURE_DIM, h, d, &mut rng);
        let qem = QemModule::new(&mut store, "qem", d, &mut rng);
        let cdet = CrossAttentionLayer::new(&mut store, "cdet", d, &mut rng);
        let fdet = config
            .dual_da
            .then(|| CrossAttentionLayer::new(&mut store, "fdet", d, &mut rng));
        let det_head = Mlp2::new(&mut store, "head", d, h, DET_HEAD_DIM, &mut rng);
        let da = DaModule::new(&mut store, "da", d, h, &mut rng);
        let da_fine = config
            .dual_da
            .then(|| DaModule::new(&mut store, "daf", d, h, &mut rng));

        Ok(TrackerModel {
            config: config.clone(),
            store,
            encoder,
            qem,
            cdet,
            fdet,
            det_head,
            da,
            da_fine,
        })
    }

    /// Runs the refinement stack on enhanced queries: coarse Q-feat, then in
    /// dual mode fine Q-fine. Returns (qfeat, qfine). `qfine` is None when
    /// the fine stage is disabled.
    pub fn refine(&self, tape: &mut Tape, enhanced: Value) -> Result<(Value, Option<Value>)> {
        let qfeat = self.cdet.forward(&self.store, tape, enhanced, enhanced)?;
        let qfine = match &self.fdet {
            Some(fdet) => Some(fdet.forward(&self.store, tape, qfeat, qfeat)?),
            None => None,
        };
        Ok((qfeat, qfine))
    }

    /// Detection attribute regression from the final refined features.
    pub fn detect(&self, tape: &mut Tape, refined: Value) -> Result<Value> {
        self.det_head.forward(&self.store, tape, refined)
    }

    /// Parameter ids of the observation encoder (frozen after stage 1).
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(&["enc."])
    }

    /// Parameter ids of both data-association modules.
    pub fn da_param_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(&["da.", "daf."])
    }

    /// Everything except the encoder: refinement, head, enhancement, DA.
    pub fn non_encoder_param_ids(&self) -> Vec<ParamId> {
        let enc: std::collections::HashSet<usize> =
            self.encoder_param_ids().iter().map(|p| p.index()).collect();
        self.store
            .ids()
            .into_iter()
            .filter(|p| !enc.contains(&p.index()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn construction_is_seed_deterministic() {
        let cfg = ModelConfig::default();
        let a = TrackerModel::new(&cfg, 11).unwrap();
        let b = TrackerModel::new(&cfg, 11).unwrap();
        let c = TrackerModel::new(&cfg, 12).unwrap();
        let ea = a.store.export();
        let eb = b.store.export();
        let ec = c.store.export();
        assert_eq!(ea, eb);
        assert_ne!(ea, ec);
    }

    #[test]
    fn param_groups_partition_the_store() {
        let model = TrackerModel::new(&ModelConfig::default(), 3).unwrap();
        let enc = model.encoder_param_ids();
        let rest = model.non_encoder_param_ids();
        assert_eq!(enc.len() + rest.len(), model.store.ids().len());
        let enc_set: std::collections::HashSet<usize> = enc.iter().map(|p| p.index()).collect();
        assert!(rest.iter().all(|p| !enc_set.contains(&p.index())));
        let da = model.da_param_ids();
        assert!(!da.is_empty());
        let rest_set: std::collections::HashSet<usize> = rest.iter().map(|p| p.index()).collect();
        assert!(da.iter().all(|p| rest_set.contains(&p.index())));
    }

    #[test]
    fn single_stage_mode_drops_fine_modules() {
        let cfg = ModelConfig {
            dual_da: false,
            ..ModelConfig::default()
        };
        let model = TrackerModel::new(&cfg, 1).unwrap();
        assert!(model.fdet.is_none());
        assert!(model.da_fine.is_none());
        assert!(model.store.ids_with_prefix(&["fdet."]).is_empty());
        assert!(model.store.ids_with_prefix(&["daf."]).is_empty());
    }

    #[test]
    fn refine_and_detect_have_expected_shapes() {
        let cfg = ModelConfig::default();
        let model = TrackerModel::new(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let mut rng = Rng::new(9);
        let q = tape.input(Tensor::xavier(4, cfg.d_model, &mut rng));
        let (qfeat, qfine) = model.refine(&mut tape, q).unwrap();
        assert_eq!(tape.shape(qfeat), &[4, cfg.d_model]);
        let qfine = qfine.unwrap();
        assert_eq!(tape.shape(qfine), &[4, cfg.d_model]);
        let out = model.detect(&mut tape, qfine).unwrap();
        assert_eq!(tape.shape(out), &[4, DET_HEAD_DIM]);
    }

    #[test]
    fn config_validation_reports_field() {
        let cfg = ModelConfig {
            gate_radius: -1.0,
            ..ModelConfig::default()
        };
        let err = match TrackerModel::new(&cfg, 0) {
            Ok(_) => panic!("negative gate_radius accepted"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("gate_radius"), "{err}");
    }
}
