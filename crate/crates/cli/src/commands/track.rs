//! `track`: run a tracker over scenario files, writing one
//! `<stem>.tracks.jsonl` per scenario plus a manifest.
//!
//! The model comes from a trained checkpoint (`--checkpoint`) or, for
//! untrained baselines, fresh from a config file's `[model]` section and the
//! run seed.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;

use attentrack_core::model::TrackerModel;
use attentrack_core::pipeline::{run_sequence, tracks_to_string};
use attentrack_core::Error;

use crate::config::{self, TrackFileConfig};
use crate::fsio::{load_scenarios, scenario_files, stem, write_file};
use crate::manifest::RunManifest;

pub struct TrackArgs {
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub fusion_mode: Option<bool>,
}

pub fn run(args: &TrackArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new(
        "track",
        args.config.as_deref().or(args.checkpoint.as_deref()),
        Some(args.seed),
    );

    let model = match (&args.checkpoint, &args.config) {
        (Some(ck_path), None) => {
            if args.fusion_mode.is_some() {
                return Err(Error::config(
                    "mode",
                    "cannot override the architecture recorded in a checkpoint",
                )
                .into());
            }
            let ck = config::load_checkpoint(ck_path)?;
            manifest.record_input(ck_path)?;
            manifest.note("model", format!("checkpoint after stage `{}`", ck.stage));
            let (model, _, _) = ck.restore()?;
            model
        }
        (None, Some(cfg_path)) => {
            let cfg: TrackFileConfig = config::load(cfg_path)?;
            cfg.validate()?;
            manifest.record_input(cfg_path)?;
            let mut model_cfg = cfg.model.clone();
            if let Some(fusion) = args.fusion_mode {
                model_cfg.dual_da = fusion;
            }
            manifest.note("model", "untrained (fresh initialization from config)");
            TrackerModel::new(&model_cfg, args.seed)?
        }
        _ => {
            return Err(Error::config(
                "checkpoint",
                "pass exactly one of --checkpoint or --config",
            )
            .into());
        }
    };

    let files = scenario_files(&args.data)?;
    for f in &files {
        manifest.record_input(f)?;
    }
    let scenarios = load_scenarios(&files)?;
    std::fs::create_dir_all(&args.out)?;

    for (file, scenario) in files.iter().zip(&scenarios) {
        let output = run_sequence(&model, scenario)?;
        let path = args.out.join(format!("{}.tracks.jsonl", stem(file)));
        write_file(&path, tracks_to_string(&output)?)?;
        manifest.record_output(&path)?;
    }
    manifest.write(&args.out, started)?;

    println!("tracked {} scenarios into {}", files.len(), args.out.display());
    Ok(())
}
