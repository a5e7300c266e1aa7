//! Multi-object tracking evaluation.
//!
//! Per frame, ground truth and emitted tracks are matched greedily by
//! ascending center distance, accepting pairs strictly inside the match
//! threshold. Identity switches are counted against the last track id each
//! ground-truth object ever matched, so a track that merely resumes after a
//! gap does not switch. On top of the per-point CLEAR numbers, the average
//! metrics sweep track-confidence operating points and integrate over fixed
//! recall targets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::pipeline::TrackerOutput;
use crate::simworld::{ObjectClass, Scenario};

/// Evaluation knobs. Defaults match the reported benchmark setup.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    /// Center-distance gate in meters; a pair matches only strictly inside.
    pub match_threshold: f64,
    /// Number of recall points `n`; targets are k/(n-1) for k = 1..n-1.
    pub recall_points: usize,
    /// A ground-truth track covered on at least this fraction of its frames
    /// counts as mostly tracked (inclusive).
    pub mt_threshold: f64,
    /// Coverage at or below this fraction counts as mostly lost (inclusive).
    pub ml_threshold: f64,
    /// Report CLEAR numbers at the confidence threshold maximizing MOTA;
    /// when false they are reported with every track kept.
    pub report_at_max_mota: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            match_threshold: 2.0,
            recall_points: 40,
            mt_threshold: 0.8,
            ml_threshold: 0.2,
            report_at_max_mota: true,
        }
    }
}

impl MetricsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_threshold > 0.0) {
            return Err(Error::config("match_threshold", "must be positive"));
        }
        if self.recall_points < 2 {
            return Err(Error::config("recall_points", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.mt_threshold) || !(0.0..=1.0).contains(&self.ml_threshold) {
            return Err(Error::config("mt_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Metrics for one class (or the aggregate row).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    /// Ground-truth object-frame count (the MOTA denominator).
    pub gt: usize,
    /// Distinct ground-truth objects.
    pub gt_tracks: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub mt: usize,
    pub ml: usize,
    pub mota: f64,
    pub motp: f64,
    pub recall: f64,
    /// False alarms per frame, scaled by 100.
    pub faf: f64,
    pub amota: f64,
    pub amotp: f64,
}

/// Full evaluation result.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub match_threshold: f64,
    pub recall_points: usize,
    pub per_class: Vec<ClassMetrics>,
    pub overall: ClassMetrics,
}

// ----- internal sequence views -----

struct SeqData {
    /// Per frame: (gt id, x, y).
    gt: Vec<Vec<(u64, f64, f64)>>,
    /// Per frame: (track id, x, y).
    trk: Vec<Vec<(u64, f64, f64)>>,
    /// Mean emitted score per track id.
    conf: BTreeMap<u64, f64>,
}

fn extract_class(scenario: &Scenario, output: &TrackerOutput, class: ObjectClass) -> SeqData {
    let frames = scenario.frames.len();
    let mut gt = Vec::with_capacity(frames);
    let mut trk = Vec::with_capacity(frames);
    let mut score_sum: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (sf, of) in scenario.frames.iter().zip(&output.frames) {
        gt.push(
            sf.gt
                .iter()
                .filter(|o| o.class == class)
                .map(|o| (o.id, o.x, o.y))
                .collect(),
        );
        let mut rows = Vec::new();
        for r in &of.tracks {
            if r.class == class {
                rows.push((r.id, r.x, r.y));
                let e = score_sum.entry(r.id).or_insert((0.0, 0));
                e.0 += r.score;
                e.1 += 1;
            }
        }
        trk.push(rows);
    }
    let conf = score_sum
        .into_iter()
        .map(|(id, (s, n))| (id, s / n as f64))
        .collect();
    SeqData { gt, trk, conf }
}

/// Greedy per-frame matching: ascending distance, strictly inside `thr`;
/// ties break toward the lower ground-truth index, then lower track index.
fn match_frame(
    gts: &[(u64, f64, f64)],
    trs: &[(u64, f64, f64)],
    thr: f64,
) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (gi, g) in gts.iter().enumerate() {
        for (ti, t) in trs.iter().enumerate() {
            let d = (g.1 - t.1).hypot(g.2 - t.2);
            if d < thr {
                pairs.push((gi, ti, d));
            }
        }
    }
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut g_used = vec![false; gts.len()];
    let mut t_used = vec![false; trs.len()];
    let mut out = Vec::new();
    for (gi, ti, d) in pairs {
        if !g_used[gi] && !t_used[ti] {
            g_used[gi] = true;
            t_used[ti] = true;
            out.push((gi, ti, d));
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct PointCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
    ids: usize,
    dist_sum: f64,
    /// Per gt id: (matched frames, alive frames).
    coverage: BTreeMap<u64, (usize, usize)>,
}

impl PointCounts {
    fn gt_total(&self) -> usize {
        self.tp + self.fn_
    }

    fn recall(&self) -> f64 {
        let p = self.gt_total();
        if p == 0 {
            0.0
        } else {
            self.tp as f64 / p as f64
        }
    }

    fn mota(&self) -> f64 {
        let p = self.gt_total();
        if p == 0 {
            0.0
        } else {
            1.0 - (self.fp + self.fn_ + self.ids) as f64 / p as f64
        }
    }

    fn motp(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.dist_sum / self.tp as f64
        }
    }
}

/// Accumulates CLEAR counts over a sequence at one operating point. `keep`
/// restricts which track ids participate (None keeps all).
fn evaluate_point(data: &SeqData, keep: Option<&BTreeSet<u64>>, thr: f64) -> PointCounts {
    let mut c = PointCounts::default();
    let mut last_id: HashMap<u64, u64> = HashMap::new();
    for (gts, trs_all) in data.gt.iter().zip(&data.trk) {
        let trs: Vec<(u64, f64, f64)> = trs_all
            .iter()
            .filter(|t| keep.map_or(true, |k| k.contains(&t.0)))
            .copied()
            .collect();
        let matches = match_frame(gts, &trs, thr);
        c.tp += matches.len();
        c.fp += trs.len() - matches.len();
        c.fn_ += gts.len() - matches.len();
        for g in gts {
            c.coverage.entry(g.0).or_insert((0, 0)).1 += 1;
        }
        for (gi, ti, d) in matches {
            let gid = gts[gi].0;
            let tid = trs[ti].0;
            if let Some(prev) = last_id.get(&gid) {
                if *prev != tid {
                    c.ids += 1;
                }
            }
            last_id.insert(gid, tid);
            c.coverage.get_mut(&gid).unwrap().0 += 1;
            c.dist_sum += d;
        }
    }
    c
}

struct ClassEval {
    counts: PointCounts,
    amota: f64,
    amotp: f64,
}

/// Evaluates one class: sweeps confidence operating points for the average
/// metrics, and picks the reporting point per the options.
fn evaluate_class(data: &SeqData, opts: &MetricsOptions) -> ClassEval {
    let thr = opts.match_threshold;
    // Distinct confidences, descending: each is one operating point keeping
    // every track at least that confident.
    let mut levels: Vec<f64> = data.conf.values().copied().collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let ops: Vec<PointCounts> = levels
        .iter()
        .map(|lv| {
            let keep: BTreeSet<u64> = data
                .conf
                .iter()
                .filter(|(_, c)| **c >= *lv)
                .map(|(id, _)| *id)
                .collect();
            evaluate_point(data, Some(&keep), thr)
        })
        .collect();

    // Average metrics over fixed recall targets: for each target take the
    // highest-confidence operating point reaching it; unreachable targets
    // contribute zero accuracy and threshold-distance precision.
    let n = opts.recall_points;
    let mut motars = Vec::with_capacity(n - 1);
    let mut motps = Vec::with_capacity(n - 1);
    for k in 1..n {
        let target = k as f64 / (n - 1) as f64;
        match ops.iter().find(|op| op.recall() >= target) {
            Some(op) => {
                let p = op.gt_total() as f64;
                let r = op.recall();
                let motar =
                    1.0 - ((op.ids + op.fp + op.fn_) as f64 - (1.0 - r) * p) / (r * p);
                motars.push(motar.clamp(0.0, 1.0));
                motps.push(op.motp());
            }
            None => {
                motars.push(0.0);
                motps.push(thr);
            }
        }
    }
    let amota = motars.iter().sum::<f64>() / motars.len() as f64;
    let amotp = motps.iter().sum::<f64>() / motps.len() as f64;

    let counts = if opts.report_at_max_mota {
        let mut best: Option<PointCounts> = None;
        for op in ops {
            if best.as_ref().map_or(true, |b| op.mota() > b.mota()) {
                best = Some(op);
            }
        }
        best.unwrap_or_else(|| evaluate_point(data, None, thr))
    } else {
        evaluate_point(data, None, thr)
    };

    ClassEval {
        counts,
        amota,
        amotp,
    }
}

fn metrics_row(
    name: String,
    c: &PointCounts,
    frames: usize,
    amota: f64,
    amotp: f64,
    opts: &MetricsOptions,
) -> ClassMetrics {
    let mut mt = 0;
    let mut ml = 0;
    for (matched, alive) in c.coverage.values() {
        let cov = *matched as f64 / *alive as f64;
        if cov >= opts.mt_threshold {
            mt += 1;
        }
        if cov <= opts.ml_threshold {
            ml += 1;
        }
    }
    ClassMetrics {
        class: name,
        gt: c.gt_total(),
        gt_tracks: c.coverage.len(),
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        ids: c.ids,
        mt,
        ml,
        mota: c.mota(),
        motp: c.motp(),
        recall: c.recall(),
        faf: if frames == 0 {
            0.0
        } else {
            c.fp as f64 / frames as f64 * 100.0
        },
        amota,
        amotp,
    }
}

/// Evaluates tracker output against a scenario's ground truth.
pub fn evaluate(
    scenario: &Scenario,
    output: &TrackerOutput,
    opts: &MetricsOptions,
) -> Result<MetricsReport> {
    opts.validate()?;
    if scenario.frames.len() != output.frames.len() {
        return Err(Error::data(format!(
            "output has {} frames, ground truth has {}",
            output.frames.len(),
            scenario.frames.len()
        )));
    }
    for (sf, of) in scenario.frames.iter().zip(&output.frames) {
        if sf.t != of.t {
            return Err(Error::data(format!(
                "frame timestamp mismatch: gt {} vs output {}",
                sf.t, of.t
            )));
        }
    }

    let frames = scenario.frames.len();
    let mut per_class = Vec::new();
    let mut rate_rows = 0usize;
    let mut agg = ClassMetrics {
        class: "overall".to_string(),
        gt: 0,
        gt_tracks: 0,
        tp: 0,
        fp: 0,
        fn_: 0,
        ids: 0,
        mt: 0,
        ml: 0,
        mota: 0.0,
        motp: 0.0,
        recall: 0.0,
        faf: 0.0,
        amota: 0.0,
        amotp: 0.0,
    };

    for class in ObjectClass::ALL {
        let data = extract_class(scenario, output, class);
        let has_gt = data.gt.iter().any(|f| !f.is_empty());
        let has_trk = data.trk.iter().any(|f| !f.is_empty());
        if !has_gt && !has_trk {
            continue;
        }
        let eval = evaluate_class(&data, opts);
        let row = metrics_row(
            class.as_str().to_string(),
            &eval.counts,
            frames,
            eval.amota,
            eval.amotp,
            opts,
        );
        agg.gt += row.gt;
        agg.gt_tracks += row.gt_tracks;
        agg.tp += row.tp;
        agg.fp += row.fp;
        agg.fn_ += row.fn_;
        agg.ids += row.ids;
        agg.mt += row.mt;
        agg.ml += row.ml;
        // Rate metrics average over classes that have ground truth.
        if has_gt {
            rate_rows += 1;
            agg.mota += row.mota;
            agg.motp += row.motp;
            agg.recall += row.recall;
            agg.amota += row.amota;
            agg.amotp += row.amotp;
        }
        per_class.push(row);
    }

    if rate_rows > 0 {
        agg.mota /= rate_rows as f64;
        agg.motp /= rate_rows as f64;
        agg.recall /= rate_rows as f64;
        agg.amota /= rate_rows as f64;
        agg.amotp /= rate_rows as f64;
    }
    agg.faf = if frames == 0 {
        0.0
    } else {
        agg.fp as f64 / frames as f64 * 100.0
    };

    Ok(MetricsReport {
        frames,
        match_threshold: opts.match_threshold,
        recall_points: opts.recall_points,
        per_class,
        overall: agg,
    })
}

/// Renders the report as CSV, one row per class plus the aggregate row.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class,amota,amotp,mota,motp,recall,mt,ml,ids,faf,tp,fp,fn,gt\n");
    for row in report.per_class.iter().chain(std::iter::once(&report.overall)) {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{:.6},{},{},{},{}\n",
            row.class,
            row.amota,
            row.amotp,
            row.mota,
            row.motp,
            row.recall,
            row.mt,
            row.ml,
            row.ids,
            row.faf,
            row.tp,
            row.fp,
            row.fn_,
            row.gt
        ));
    }
    out
}

/// Renders the report as pretty JSON with a trailing newline.
pub fn report_to_json(report: &MetricsReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
