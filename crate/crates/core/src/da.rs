//! Data association.
//!
//! The association module updates previous-frame object features through two
//! cross-attention passes (heading context first, then the previous queries),
//! refines current-frame queries into association targets with an appended
//! dead slot, and scores every track/target pair by a raw dot product. A
//! greedy matcher turns the score matrix into per-track decisions; a fusion
//! rule reconciles the coarse and fine matchers when both run.

use crate::attention::{CrossAttentionLayer, HeadingEmbed, Mlp2};
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Value};

/// Transformer that turns previous-frame features into association queries
/// and current-frame queries into association targets.
#[derive(Debug, Clone)]
pub struct DaModule {
    pub d: usize,
    h_cross: CrossAttentionLayer,
    q_cross: CrossAttentionLayer,
    heading: HeadingEmbed,
    target_mlp: Mlp2,
}

impl DaModule {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize, rng: &mut Rng) -> Self {
        DaModule {
            d,
            h_cross: CrossAttentionLayer::new(store, &format!("{prefix}.h_cross"), d, rng),
            q_cross: CrossAttentionLayer::new(store, &format!("{prefix}.q_cross"), d, rng),
            heading: HeadingEmbed::new(store, &format!("{prefix}.heading"), d, rng),
            target_mlp: Mlp2::new(store, &format!("{prefix}.target"), d, hidden, d, rng),
        }
    }

    /// Updates previous-frame object features for association.
    ///
    /// `prev_feat` [N x d] is the query stream; the first pass attends over
    /// the embedded `headings` (one per object), the second over
    /// `prev_context` [N x d] (the previous queries for the coarse module,
    /// the previous coarse features for the fine module). Requires N >= 1.
    pub fn update_query_features(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        prev_feat: Value,
        prev_context: Value,
        headings: &[f64],
    ) -> Result<Value> {
        let n = tape.shape(prev_feat).first().copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::contract(
                "update_query_features: requires at least one previous object",
            ));
        }
        if tape.shape(prev_context) != tape.shape(prev_feat) {
            return Err(Error::DimMismatch {
                op: "update_query_features",
                lhs: tape.shape(prev_feat).to_vec(),
                rhs: tape.shape(prev_context).to_vec(),
            });
        }
        if headings.len() != n {
            return Err(Error::contract(format!(
                "update_query_features: {} headings for {n} objects",
                headings.len()
            )));
        }
        let h_emb = self.heading.forward(store, tape, headings)?;
        let after_h = self.h_cross.forward(store, tape, prev_feat, h_emb)?;
        self.q_cross.forward(store, tape, after_h, prev_context)
    }

    /// Refines current queries [M x d] into association targets [M+1 x d].
    /// A zero row is appended before the MLP, so the dead slot (last row) is
    /// the learned image of the origin and is identical across calls.
    pub fn refine_targets(&self, store: &ParamStore, tape: &mut Tape, curr_qin: Value) -> Result<Value> {
        let shape = tape.shape(curr_qin).to_vec();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(Error::BadShape {
                op: "refine_targets",
                shape,
                reason: "expected [M x d] current queries",
            });
        }
        let zero = tape.input(Tensor::zeros(vec![1, self.d]));
        let with_dead = tape.concat_rows(curr_qin, zero)?;
        self.target_mlp.forward(store, tape, with_dead)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.h_cross.param_ids();
        ids.extend(self.q_cross.param_ids());
        ids.extend(self.heading.param_ids());
        ids.extend(self.target_mlp.param_ids());
        ids
    }
}

/// Raw dot-product scores between updated features [N x d] and refined
/// targets [M+1 x d] -> [N x M+1]. Deliberately not normalized: the greedy
/// matcher and the fusion rule compare raw scores.
pub fn associate(tape: &mut Tape, updated: Value, targets: Value) -> Result<Value> {
    let tt = tape.transpose(targets)?;
    tape.matmul(updated, tt)
}

/// Mean row-wise cross-entropy between score rows and ground-truth columns
/// (`m` marks the dead column for vanished objects).
pub fn association_loss(tape: &mut Tape, scores: Value, gt_cols: &[usize]) -> Result<Value> {
    tape.cross_entropy_rows(scores, gt_cols)
}

/// Materialized association scores: `n` tracks over `m` queries plus the
/// trailing dead column.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    pub n: usize,
    pub m: usize,
    scores: Vec<f64>,
}

impl AssociationMatrix {
    /// Builds from raw row-major scores of shape [n x (m+1)].
    pub fn new(n: usize, m: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n * (m + 1) {
            return Err(Error::BadShape {
                op: "AssociationMatrix::new",
                shape: vec![n, m + 1],
                reason: "score length does not match n x (m+1)",
            });
        }
        Ok(AssociationMatrix { n, m, scores })
    }

    /// Reads scores out of a tape value of shape [n x (m+1)].
    pub fn from_tape(tape: &Tape, scores: Value) -> Result<Self> {
        let shape = tape.shape(scores);
        if shape.len() != 2 || shape[1] == 0 {
            return Err(Error::BadShape {
                op: "AssociationMatrix::from_tape",
                shape: shape.to_vec(),
                reason: "expected [n x (m+1)] scores",
            });
        }
        AssociationMatrix::new(shape[0], shape[1] - 1, tape.data(scores).to_vec())
    }

    /// Score of track `i` against query `j` (or the dead column at j == m).
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * (self.m + 1) + j]
    }

    /// Score of track `i` against the dead column.
    pub fn dead_score(&self, i: usize) -> f64 {
        self.score(i, self.m)
    }
}

/// Outcome for one existing track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackDecision {
    /// Track continues as current query `query`.
    Matched { query: usize, score: f64 },
    /// Track ends this frame.
    Dead { score: f64 },
}

impl TrackDecision {
    pub fn matched_query(&self) -> Option<usize> {
        match self {
            TrackDecision::Matched { query, .. } => Some(*query),
            TrackDecision::Dead { .. } => None,
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            TrackDecision::Matched { score, .. } | TrackDecision::Dead { score } => *score,
        }
    }
}

/// Joint association outcome: one decision per track, plus the current
/// queries no track claimed (newborn candidates), in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationDecision {
    pub tracks: Vec<TrackDecision>,
    pub newborn: Vec<usize>,
    pub num_queries: usize,
}

impl AssociationDecision {
    /// Internal consistency: every matched query claimed at most once and
    /// in range, newborn exactly the unclaimed queries.
    pub fn check_invariants(&self) -> Result<()> {
        let mut claimed = vec![false; self.num_queries];
        for t in &self.tracks {
            if let Some(q) = t.matched_query() {
                if q >= self.num_queries {
                    return Err(Error::contract(format!(
                        "decision claims query {q} of {}",
                        self.num_queries
                    )));
                }
                if claimed[q] {
                    return Err(Error::contract(format!("query {q} claimed twice")));
                }
                claimed[q] = true;
            }
        }
        let expect: Vec<usize> = (0..self.num_queries).filter(|q| !claimed[*q]).collect();
        if expect != self.newborn {
            return Err(Error::contract("newborn set inconsistent with claims"));
        }
        Ok(())
    }
}

/// Greedy decode of an association matrix.
///
/// Repeatedly takes the largest remaining score; the winning row leaves the
/// pool, and the winning column leaves too unless it is the dead column,
/// which any number of tracks may select. Ties break toward the lower row
/// index, then the lower column index. Runs in n rounds of full scans,
/// deterministic for any input.
pub fn greedy_match(matrix: &AssociationMatrix) -> AssociationDecision {
    let (n, m) = (matrix.n, matrix.m);
    let mut decided: Vec<Option<TrackDecision>> = vec![None; n];
    let mut row_open: Vec<bool> = vec![true; n];
    let mut col_open: Vec<bool> = vec![true; m];

    for _ in 0..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !row_open[i] {
                continue;
            }
            for j in 0..=m {
                if j < m && !col_open[j] {
                    continue;
                }
                let s = matrix.score(i, j);
                if best.map_or(true, |(_, _, bs)| s > bs) {
                    best = Some((i, j, s));
                }
            }
        }
        let Some((i, j, s)) = best else { break };
        row_open[i] = false;
        if j == m {
            decided[i] = Some(TrackDecision::Dead { score: s });
        } else {
            col_open[j] = false;
            decided[i] = Some(TrackDecision::Matched { query: j, score: s });
        }
    }

    AssociationDecision {
        tracks: decided.into_iter().map(|d| d.expect("all rows decided")).collect(),
        newborn: (0..m).filter(|&j| col_open[j]).collect(),
        num_queries: m,
    }
}

/// Fuses the coarse and fine association decisions.
///
/// Where both modules agree the fine decision is kept verbatim; where they
/// conflict the outcome with the larger raw score wins (ties prefer fine,
/// the final-stage module). A repair pass then restores query exclusivity:
/// claims are granted in descending score order and a displaced track dies
/// with its dead-column score.
pub fn fuse_dual_da(
    coarse: (&AssociationMatrix, &AssociationDecision),
    fine: (&AssociationMatrix, &AssociationDecision),
) -> Result<AssociationDecision> {
    let (cm, cd) = coarse;
    let (fm, fd) = fine;
    if cm.n != fm.n || cm.m != fm.m {
        return Err(Error::contract(format!(
            "fuse_dual_da: matrix shapes differ: {}x{} vs {}x{}",
            cm.n,
            cm.m + 1,
            fm.n,
            fm.m + 1
        )));
    }
    for (d, label) in [(cd, "coarse"), (fd, "fine")] {
        if d.tracks.len() != cm.n || d.num_queries != cm.m {
            return Err(Error::contract(format!(
                "fuse_dual_da: {label} decision shape does not match its matrix"
            )));
        }
    }

    // Per-track pick, remembering which matrix supplied the winner so the
    // repair pass can read the right dead score.
    let mut picked: Vec<(TrackDecision, bool)> = Vec::with_capacity(cm.n); // (decision, from_fine)
    for i in 0..cm.n {
        let c = cd.tracks[i];
        let f = fd.tracks[i];
        let agree = c.matched_query() == f.matched_query();
        if agree || f.score() >= c.score() {
            picked.push((f, true));
        } else {
            picked.push((c, false));
        }
    }

    // Exclusivity repair: grant claims by descending score, lower track
    // index first on ties; losers die.
    let mut order: Vec<usize> = (0..cm.n).collect();
    order.sort_by(|&a, &b| {
        picked[b]
            .0
            .score()
            .partial_cmp(&picked[a].0.score())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; cm.m];
    let mut tracks: Vec<TrackDecision> = picked.iter().map(|(d, _)| *d).collect();
    for &i in &order {
        let (decision, from_fine) = picked[i];
        if let Some(q) = decision.matched_query() {
            if claimed[q] {
                let dead = if from_fine { fm.dead_score(i) } else { cm.dead_score(i) };
                tracks[i] = TrackDecision::Dead { score: dead };
            } else {
                claimed[q] = true;
            }
        }
    }

    let decision = AssociationDecision {
        tracks,
        newborn: (0..cm.m).filter(|&q| !claimed[q]).collect(),
        num_queries: cm.m,
    };
    decision.check_invariants()?;
    Ok(decision)
}
