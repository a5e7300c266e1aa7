//! Query enhancement.
//!
//! Current-frame queries attend over the previous frame's tracked features
//! so that temporal context sharpens detection before association. Rows the
//! pipeline gates as newborn bypass enhancement entirely: there is nothing
//! in the past for a new object to attend to, and the bypass is a verbatim
//! copy so newborn queries are bitwise-identical to their inputs.
//!
//! The attention branch is residual-only with a shrunk output projection,
//! so a freshly initialized module is a near-identity map: enhancement can
//! only move queries once training finds profitable history mixes.

use crate::attention::CrossAttentionLayer;
use crate::error::Result;
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Value};

/// Materialized enhancement output.
#[derive(Debug, Clone)]
pub struct EnhancedQueries {
    /// [M x d] enhanced (or passed-through) query embeddings.
    pub embeddings: Tensor,
    /// True where the row skipped enhancement as a newborn candidate.
    pub newborn_mask: Vec<bool>,
}

/// Cross-attention enhancer over previous-frame features.
#[derive(Debug, Clone)]
pub struct QemModule {
    pub d: usize,
    attn: CrossAttentionLayer,
}

/// Output-projection shrink factor at initialization. Enhancement starts as
/// a near-identity map — unenhanced and enhanced queries are interchangeable
/// until training finds history mixes that actually lower the loss.
const QEM_OUT_SCALE: f64 = 1e-2;

impl QemModule {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        QemModule {
            d,
            attn: CrossAttentionLayer::new_residual_only(
                store,
                &format!("{prefix}.attn"),
                d,
                rng,
                QEM_OUT_SCALE,
            ),
        }
    }

    /// Enhances `curr_qin` [M x d] over `prev_feats` [P x d] on the tape.
    ///
    /// `newborn_mask` (length M) marks rows that must pass through
    /// unchanged; the pipeline computes it from its spatial gate. With
    /// P == 0 every row passes through and the mask argument is ignored in
    /// favor of all-true.
    pub fn enhance(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        curr_qin: Value,
        prev_feats: Option<Value>,
        newborn_mask: &[bool],
    ) -> Result<(Value, Vec<bool>)> {
        let m = tape.shape(curr_qin).first().copied().unwrap_or(0);
        let prev = prev_feats.filter(|p| tape.shape(*p).first().copied().unwrap_or(0) > 0);
        let Some(prev) = prev else {
            // No history: exact passthrough, everything newborn.
            return Ok((curr_qin, vec![true; m]));
        };
        if newborn_mask.len() != m {
            return Err(crate::error::Error::contract(format!(
                "enhance_queries: mask length {} for {m} queries",
                newborn_mask.len()
            )));
        }
        if newborn_mask.iter().all(|&b| b) {
            return Ok((curr_qin, newborn_mask.to_vec()));
        }
        let enhanced = self.attn.forward(store, tape, curr_qin, prev)?;
        let mixed = tape.select_rows(newborn_mask, curr_qin, enhanced)?;
        Ok((mixed, newborn_mask.to_vec()))
    }

    /// Convenience wrapper producing a materialized [`EnhancedQueries`].
    pub fn enhance_queries(
        &self,
        store: &ParamStore,
        curr_qin: &Tensor,
        prev_feats: &Tensor,
        newborn_mask: &[bool],
    ) -> Result<EnhancedQueries> {
        let mut tape = Tape::new();
        let q = tape.input(curr_qin.clone());
        let p = if prev_feats.rows() == 0 {
            None
        } else {
            Some(tape.input(prev_feats.clone()))
        };
        let (out, mask) = self.enhance(store, &mut tape, q, p, newborn_mask)?;
        Ok(EnhancedQueries {
            embeddings: tape.tensor(out).clone(),
            newborn_mask: mask,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.attn.param_ids()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, d: usize, rng: &mut Rng) -> Tensor {
        let data = (0..n * d).map(|_| rng.normal()).collect();
        Tensor::from_vec(vec![n, d], data).unwrap()
    }

    #[test]
    fn no_history_is_exact_passthrough() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(20);
        let qem = QemModule::new(&mut store, "qem", 8, &mut rng);
        let qin = rows(4, 8, &mut rng);
        let empty = Tensor::from_vec(vec![0, 8], vec![]).unwrap();
        let out = qem
            .enhance_queries(&store, &qin, &empty, &[false; 4])
            .unwrap();
        assert_eq!(out.embeddings.data, qin.data);
        assert_eq!(out.newborn_mask, vec![true; 4]);
    }

    #[test]
    fn gated_rows_pass_through_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(21);
        let qem = QemModule::new(&mut store, "qem", 8, &mut rng);
        let qin = rows(3, 8, &mut rng);
        let prev = rows(2, 8, &mut rng);
        let mask = [false, true, false];
        let out = qem.enhance_queries(&store, &qin, &prev, &mask).unwrap();
        // Row 1 is bitwise-identical to its input; the others moved.
        assert_eq!(out.embeddings.row(1), qin.row(1));
        assert_ne!(out.embeddings.row(0), qin.row(0));
        assert_ne!(out.embeddings.row(2), qin.row(2));
        assert_eq!(out.newborn_mask, mask);
    }

    #[test]
    fn single_previous_feature_mixes_identically_into_all_rows() {
        // P == 1: the attention weights are exactly [1], so every enhanced
        // row is qin_row + mix with mix = (prev W_v) W_out.
        let mut store = ParamStore::new();
        let mut rng = Rng::new(22);
        let d = 6;
        let qem = QemModule::new(&mut store, "qem", d, &mut rng);
        let qin = rows(3, d, &mut rng);
        let prev = rows(1, d, &mut rng);
        let out = qem
            .enhance_queries(&store, &qin, &prev, &[false, false, false])
            .unwrap();

        let wv = store.get(store.id_by_name("qem.attn.w_v").unwrap());
        let wo = store.get(store.id_by_name("qem.attn.w_out").unwrap());
        let mut mid = vec![0.0; d];
        for j in 0..d {
            for p in 0..d {
                mid[j] += prev.at(0, p) * wv.at(p, j);
            }
        }
        let mut mix = vec![0.0; d];
        for j in 0..d {
            for p in 0..d {
                mix[j] += mid[p] * wo.at(p, j);
            }
        }
        for i in 0..3 {
            let expect: Vec<f64> = qin.row(i).iter().zip(&mix).map(|(a, b)| a + b).collect();
            for (g, e) in out.embeddings.row(i).iter().zip(&expect) {
                assert!((g - e).abs() < 1e-10, "row {i}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn mask_length_mismatch_is_contract_error() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(23);
        let qem = QemModule::new(&mut store, "qem", 4, &mut rng);
        let qin = rows(3, 4, &mut rng);
        let prev = rows(1, 4, &mut rng);
        assert!(qem.enhance_queries(&store, &qin, &prev, &[false]).is_err());
    }

    #[test]
    fn gradients_flow_into_qem_parameters() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(24);
        let d = 6;
        let qem = QemModule::new(&mut store, "qem", d, &mut rng);
        let mut tape = Tape::new();
        let qin = tape.input(rows(3, d, &mut rng));
        let prev = tape.input(rows(2, d, &mut rng));
        let (out, _) = qem
            .enhance(&store, &mut tape, qin, Some(prev), &[false, true, false])
            .unwrap();
        let loss = tape.mean_all(out).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        let any_nonzero = qem.param_ids().iter().any(|id| {
            store
                .get(*id)
                .grad
                .as_ref()
                .map_or(false, |g| g.iter().any(|v| *v != 0.0))
        });
        assert!(any_nonzero);
    }
}
