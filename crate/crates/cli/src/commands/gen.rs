//! `gen`: write synthetic scenarios as JSONL files plus a manifest.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;

use attentrack_core::simworld::{generate_scenario, scenario_to_string};

use crate::config::{self, GenFileConfig};
use crate::fsio::{par_map, write_file};
use crate::manifest::RunManifest;

pub struct GenArgs {
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    /// File-name prefix, so several pools can share one data directory.
    pub prefix: String,
}

pub fn run(args: &GenArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: GenFileConfig = config::load(&args.config)?;
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;

    let indices: Vec<u64> = (0..cfg.count as u64).collect();
    let texts = par_map(args.jobs, &indices, |i| -> Result<String> {
        let scenario = generate_scenario(&cfg.scenario, args.seed.wrapping_add(*i))?;
        Ok(scenario_to_string(&scenario)?)
    });

    let mut manifest = RunManifest::new("gen", Some(&args.config), Some(args.seed));
    manifest.record_input(&args.config)?;
    manifest.note("count", cfg.count.to_string());
    for (i, text) in texts.into_iter().enumerate() {
        let path = args.out.join(format!("{}_{i:03}.jsonl", args.prefix));
        write_file(&path, text?)?;
        manifest.record_output(&path)?;
    }
    manifest.write(&args.out, started)?;

    println!("wrote {} scenarios to {}", cfg.count, args.out.display());
    Ok(())
}
