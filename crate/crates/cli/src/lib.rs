//! Command-line driver for the low-rank adapter lab.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::{Outcome, Suite};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lowrank", version, about = "LoRA initialization experiments and theorem checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One factorization run per (init, seed) pair.
    Factorize(Common),
    /// Loss curves for the four initializations under classic and asymmetric updates.
    Figure1(Common),
    /// Oracle and Monte Carlo theorem checks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Initializer comparison on the toy linear fine-tuning task.
    Nn(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config; every key is optional.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    #[arg(long, value_name = "S")]
    pub master_seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, value_name = "K")]
    pub jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.seeds {
            cfg.seeds.count = n;
            cfg.figure1.n_seeds = n;
        }
        if let Some(m) = self.master_seed {
            cfg.seeds.master_seed = m;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(default))
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let common = match &cli.command {
        Command::Factorize(c) | Command::Figure1(c) | Command::Nn(c) => c,
        Command::Verify { common, .. } => common,
    };
    if let Some(k) = common.jobs {
        if k == 0 {
            return Err(config::ConfigError("--jobs: must be at least 1".to_string()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    let mut cfg = common.load()?;
    match &cli.command {
        Command::Factorize(c) => {
            let out = c.out_dir(&cfg, "out/factorize");
            let o = commands::factorize(&cfg, &out)?;
            for entry in &o.bundle.csv {
                println!("wrote {}", entry.display());
            }
            Ok(o)
        }
        Command::Figure1(c) => {
            let out = c.out_dir(&cfg, "out/figure1");
            let res = commands::figure1(&cfg.figure1, cfg.seeds.master_seed, &out)?;
            for check in &res.checks {
                println!("{} {}", if check.pass { "PASS" } else { "FAIL" }, check.name);
            }
            println!("wrote {}", out.display());
            Ok(res.outcome)
        }
        Command::Verify { common, suite } => {
            commands::override_verify_seeds(&mut cfg, common.seeds, common.master_seed);
            let out = common.out_dir(&cfg, "out/verify");
            let (o, reports) = commands::verify_suite(&cfg, *suite, &out)?;
            for r in &reports {
                println!("{}", r.summary());
                for note in &r.notes {
                    println!("    note: {note}");
                }
            }
            let passed = reports.iter().filter(|r| r.pass).count();
            println!("{passed}/{} checks passed", reports.len());
            Ok(o)
        }
        Command::Nn(c) => {
            let out = c.out_dir(&cfg, "out/nn");
            let o = commands::nn_compare(&cfg, &out)?;
            if let Some(json) = &o.bundle.json {
                println!("wrote {}", json.display());
            }
            Ok(o)
        }
    }
}

/// 2 for configuration problems, 1 for everything else.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<config::ConfigError>()) {
        2
    } else {
        1
    }
}
