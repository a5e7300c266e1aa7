//! `eval`: score tracks against ground truth, one report per scenario plus a
//! cross-scenario summary.
//!
//! Tracks pair with scenarios by stem: `<stem>.tracks.jsonl` scores against
//! `<stem>.jsonl`. Outputs are `<stem>.report.json` / `<stem>.report.csv`
//! per pair, `summary.csv` across pairs, and the manifest. Scenarios are
//! evaluated on a worker pool; results are merged in name order.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};

use attentrack_core::motmetrics::{evaluate, report_to_csv, report_to_json, MetricsOptions, MetricsReport};
use attentrack_core::pipeline::tracks_from_str;
use attentrack_core::Error;

use crate::fsio::{load_scenario, par_map, scenario_files, stem, tracks_files, write_file};
use crate::manifest::RunManifest;

pub struct EvalArgs {
    pub tracks: PathBuf,
    pub gt: PathBuf,
    pub out: PathBuf,
    pub n_points: usize,
    pub match_threshold_m: f64,
    pub jobs: usize,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let opts = MetricsOptions {
        match_threshold: args.match_threshold_m,
        recall_points: args.n_points,
        ..MetricsOptions::default()
    };
    opts.validate()?;

    let gt_files = scenario_files(&args.gt)?;
    let trk_files = tracks_files(&args.tracks)?;
    let gt_by_stem: BTreeMap<String, &PathBuf> =
        gt_files.iter().map(|p| (stem(p), p)).collect();

    // Every tracks file must find its ground truth; order by tracks stem.
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for trk in &trk_files {
        let s = stem(trk);
        let gt = gt_by_stem.get(&s).ok_or_else(|| {
            Error::data(format!(
                "tracks `{}` have no matching scenario `{s}.jsonl` under {}",
                trk.display(),
                args.gt.display()
            ))
        })?;
        pairs.push((s, trk.clone(), (*gt).clone()));
    }

    let mut manifest = RunManifest::new("eval", None, None);
    manifest.note("n_points", args.n_points.to_string());
    manifest.note("match_threshold_m", format!("{}", args.match_threshold_m));
    for (_, trk, gt) in &pairs {
        manifest.record_input(trk)?;
        manifest.record_input(gt)?;
    }

    let reports = par_map(args.jobs, &pairs, |(s, trk, gt)| -> Result<MetricsReport> {
        let scenario = load_scenario(gt)?;
        let text = std::fs::read_to_string(trk)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", trk.display())))?;
        let output = tracks_from_str(&text).with_context(|| format!("tracks {}", trk.display()))?;
        let report = evaluate(&scenario, &output, &opts)
            .with_context(|| format!("evaluating `{s}`"))?;
        Ok(report)
    });

    std::fs::create_dir_all(&args.out)?;
    let mut summary = String::from("scenario,amota,amotp,mota,motp,ids,fp,fn,gt\n");
    let mut mean_amota = 0.0;
    let mut mean_amotp = 0.0;
    let mut mean_mota = 0.0;
    let mut mean_motp = 0.0;
    let mut totals = (0usize, 0usize, 0usize, 0usize);
    let n = pairs.len();
    for ((s, _, _), report) in pairs.iter().zip(reports) {
        let report = report?;
        let json_path = args.out.join(format!("{s}.report.json"));
        write_file(&json_path, report_to_json(&report)?)?;
        manifest.record_output(&json_path)?;
        let csv_path = args.out.join(format!("{s}.report.csv"));
        write_file(&csv_path, report_to_csv(&report))?;
        manifest.record_output(&csv_path)?;

        let o = &report.overall;
        summary.push_str(&format!(
            "{s},{:.6},{:.6},{:.6},{:.6},{},{},{},{}\n",
            o.amota, o.amotp, o.mota, o.motp, o.ids, o.fp, o.fn_, o.gt
        ));
        mean_amota += o.amota / n as f64;
        mean_amotp += o.amotp / n as f64;
        mean_mota += o.mota / n as f64;
        mean_motp += o.motp / n as f64;
        totals = (
            totals.0 + o.ids,
            totals.1 + o.fp,
            totals.2 + o.fn_,
            totals.3 + o.gt,
        );
    }
    summary.push_str(&format!(
        "mean,{mean_amota:.6},{mean_amotp:.6},{mean_mota:.6},{mean_motp:.6},{},{},{},{}\n",
        totals.0, totals.1, totals.2, totals.3
    ));
    let summary_path = args.out.join("summary.csv");
    write_file(&summary_path, &summary)?;
    manifest.record_output(&summary_path)?;
    manifest.write(&args.out, started)?;

    print!("{summary}");
    Ok(())
}
