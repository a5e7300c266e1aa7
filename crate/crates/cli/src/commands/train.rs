//! `train`: run one curriculum stage over a scenario pool and write a
//! checkpoint, a loss curve, and a manifest.
//!
//! The `association` and `joint` stages require the previous stage's
//! checkpoint via `--init-from`; passing the same stage's checkpoint resumes
//! it instead, reproducing the uninterrupted run exactly. The run seed
//! initializes fresh model weights, and `seed + 1` drives the sampling RNG.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;

use attentrack_core::model::TrackerModel;
use attentrack_core::train::{Checkpoint, TrainSession, TrainStage};
use attentrack_core::Error;

use crate::config::{self, TrainFileConfig};
use crate::fsio::{load_scenarios, scenario_files, write_file};
use crate::manifest::RunManifest;

pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub init_from: Option<PathBuf>,
    pub fusion_mode: Option<bool>,
}

/// Which checkpoint stages may seed which training stage.
fn allowed_prior(stage: TrainStage) -> &'static [TrainStage] {
    match stage {
        TrainStage::Encoder => &[TrainStage::Encoder],
        TrainStage::Association => &[TrainStage::Encoder, TrainStage::Association],
        TrainStage::Joint => &[TrainStage::Association, TrainStage::Joint],
    }
}

fn stage_freeze_description(stage: TrainStage) -> &'static str {
    match stage {
        TrainStage::Encoder => {
            "trains the observation encoder and detection head; association, \
             enhancement, and refinement modules frozen"
        }
        TrainStage::Association => {
            "trains the data-association modules only; everything else frozen"
        }
        TrainStage::Joint => {
            "trains association, enhancement, refinement, and head; encoder frozen"
        }
    }
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: TrainFileConfig = config::load(&args.config)?;
    let stage = cfg.validate()?;

    let mut manifest = RunManifest::new("train", Some(&args.config), Some(args.seed));
    manifest.record_input(&args.config)?;

    let (mut model, mut session) = match &args.init_from {
        Some(path) => {
            if args.fusion_mode.is_some() {
                return Err(Error::config(
                    "mode",
                    "cannot override the architecture recorded in a checkpoint",
                )
                .into());
            }
            let ck = config::load_checkpoint(path)?;
            manifest.record_input(path)?;
            if !allowed_prior(stage).contains(&ck.stage) {
                return Err(Error::config(
                    "stage",
                    format!(
                        "stage `{stage}` needs a checkpoint from {}, got `{}` \
                         (train the stages in order: encoder, association, joint)",
                        allowed_prior(stage)
                            .iter()
                            .map(|s| format!("`{s}`"))
                            .collect::<Vec<_>>()
                            .join(" or "),
                        ck.stage
                    ),
                )
                .into());
            }
            let (model, session, ck_stage) = ck.restore()?;
            if ck_stage == stage {
                // Same stage: resume the captured session mid-schedule.
                manifest.note("resumed", "true");
                (model, session)
            } else {
                // Next stage: keep the weights, start a fresh schedule.
                (model, TrainSession::new(cfg.train.clone(), args.seed.wrapping_add(1))?)
            }
        }
        None => {
            if stage != TrainStage::Encoder {
                return Err(Error::config(
                    "init_from",
                    format!("stage `{stage}` requires the previous stage's checkpoint (--init-from)"),
                )
                .into());
            }
            let mut model_cfg = cfg.model.clone();
            if let Some(fusion) = args.fusion_mode {
                model_cfg.dual_da = fusion;
            }
            (
                TrackerModel::new(&model_cfg, args.seed)?,
                TrainSession::new(cfg.train.clone(), args.seed.wrapping_add(1))?,
            )
        }
    };

    let files = scenario_files(&args.data)?;
    for f in &files {
        manifest.record_input(f)?;
    }
    let pool = load_scenarios(&files)?;

    let remaining = session.config.steps.saturating_sub(session.completed);
    let run = session.run(&mut model, stage, &pool, remaining)?;

    std::fs::create_dir_all(&args.out)?;
    let ck = Checkpoint::capture(&model, args.seed, stage, &session);
    let ck_path = args.out.join("checkpoint.json");
    write_file(&ck_path, ck.to_json()?)?;
    let loss_path = args.out.join("loss.csv");
    write_file(&loss_path, run.to_csv())?;

    manifest.note("stage", stage.to_string());
    manifest.note("frozen_set", stage_freeze_description(stage));
    manifest.note("steps", remaining.to_string());
    manifest.record_output(&ck_path)?;
    manifest.record_output(&loss_path)?;
    manifest.write(&args.out, started)?;

    println!(
        "stage {stage}: {} steps, final loss {:.6}",
        remaining,
        run.final_loss()
    );
    Ok(())
}
