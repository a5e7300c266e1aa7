//! `ablate`: score two trained arms — with and without one component — on a
//! shared held-out benchmark and emit a comparison table.
//!
//! The arms arrive as checkpoints whose model configs must actually differ
//! in the ablated component; the benchmark scenes are generated from the
//! config and the run seed, so the whole comparison is reproducible from
//! (config, seed, checkpoints).

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;

use attentrack_core::model::TrackerModel;
use attentrack_core::motmetrics::{evaluate, MetricsOptions};
use attentrack_core::pipeline::run_sequence;
use attentrack_core::simworld::{generate_scenario, Scenario, ScenarioConfig};
use attentrack_core::train::detection_regression_error;
use attentrack_core::Error;

use crate::config::{self, AblateFileConfig};
use crate::fsio::write_file;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateWhich {
    DaTransformer,
    Qem,
}

impl AblateWhich {
    fn component(self) -> &'static str {
        match self {
            AblateWhich::DaTransformer => "transformer data association",
            AblateWhich::Qem => "query enhancement",
        }
    }

    fn flag_of(self, cfg: &attentrack_core::model::ModelConfig) -> bool {
        match self {
            AblateWhich::DaTransformer => cfg.use_transformer_da,
            AblateWhich::Qem => cfg.use_qem,
        }
    }
}

pub struct AblateArgs {
    pub which: AblateWhich,
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub arm_with: PathBuf,
    pub arm_without: PathBuf,
}

/// Mean overall metrics of one arm across the benchmark scenes.
struct ArmResult {
    amota: f64,
    amotp: f64,
    mota: f64,
    ids: usize,
    fp: usize,
    fn_: usize,
    det_error: f64,
}

fn load_arm(
    which: AblateWhich,
    path: &Path,
    expect_enabled: bool,
    manifest: &mut RunManifest,
) -> Result<TrackerModel> {
    let ck = config::load_checkpoint(path)?;
    manifest.record_input(path)?;
    if which.flag_of(&ck.model) != expect_enabled {
        let state = if expect_enabled { "with" } else { "without" };
        return Err(Error::config(
            "arm",
            format!(
                "checkpoint {} was passed as the arm {state} {} but its model \
                 config disagrees",
                path.display(),
                which.component()
            ),
        )
        .into());
    }
    let (model, _, _) = ck.restore()?;
    Ok(model)
}

fn score_arm(model: &TrackerModel, scenes: &[Scenario], opts: &MetricsOptions) -> Result<ArmResult> {
    let mut r = ArmResult {
        amota: 0.0,
        amotp: 0.0,
        mota: 0.0,
        ids: 0,
        fp: 0,
        fn_: 0,
        det_error: 0.0,
    };
    for scenario in scenes {
        let output = run_sequence(model, scenario)?;
        let report = evaluate(scenario, &output, opts)?;
        let o = &report.overall;
        r.amota += o.amota / scenes.len() as f64;
        r.amotp += o.amotp / scenes.len() as f64;
        r.mota += o.mota / scenes.len() as f64;
        r.ids += o.ids;
        r.fp += o.fp;
        r.fn_ += o.fn_;
    }
    r.det_error = detection_regression_error(model, scenes)?;
    Ok(r)
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: AblateFileConfig = config::load(&args.config)?;
    cfg.validate()?;

    let mut manifest = RunManifest::new("ablate", Some(&args.config), Some(args.seed));
    manifest.record_input(&args.config)?;
    manifest.note("which", args.which.component());
    manifest.note(
        "arm_with",
        format!("{} ({} enabled)", args.arm_with.display(), args.which.component()),
    );
    manifest.note(
        "arm_without",
        format!("{} ({} disabled)", args.arm_without.display(), args.which.component()),
    );

    let arm_with = load_arm(args.which, &args.arm_with, true, &mut manifest)?;
    let arm_without = load_arm(args.which, &args.arm_without, false, &mut manifest)?;

    let scene_cfg = ScenarioConfig {
        frames: cfg.eval.frames,
        ..cfg.scenario.clone()
    };
    let scenes: Vec<Scenario> = (0..cfg.eval.scenarios as u64)
        .map(|i| generate_scenario(&scene_cfg, args.seed.wrapping_add(i)))
        .collect::<attentrack_core::Result<_>>()?;
    let opts = MetricsOptions {
        match_threshold: cfg.eval.match_threshold_m,
        recall_points: cfg.eval.n_points,
        ..MetricsOptions::default()
    };
    opts.validate()?;

    let with = score_arm(&arm_with, &scenes, &opts)?;
    let without = score_arm(&arm_without, &scenes, &opts)?;

    let mut table = String::from("arm,amota,amotp,mota,ids,fp,fn,det_regression_error\n");
    for (name, r) in [("with", &with), ("without", &without)] {
        table.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{},{},{},{:.9}\n",
            r.amota, r.amotp, r.mota, r.ids, r.fp, r.fn_, r.det_error
        ));
    }
    std::fs::create_dir_all(&args.out)?;
    let table_path = args.out.join("table.csv");
    write_file(&table_path, &table)?;
    manifest.record_output(&table_path)?;
    manifest.write(&args.out, started)?;

    print!("{table}");
    Ok(())
}
