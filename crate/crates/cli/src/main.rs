//! `facediff`: world generation, training, sampling, evaluation and studies.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 any
//! other error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use facediff_core::eval::{
    comparison_csv, curves_csv, evaluate, gaussian_comparison, generate_swaps, quarter_timesteps,
    run_ablation_study, run_sampling_study, samples_csv, swap_set, RunConfig, StudyOutcome, StudyReport, StudyRow,
};
use facediff_core::numerics::sub_seed;
use facediff_core::par::Exec;
use facediff_core::training::{
    export_dataset, load_checkpoint, save_checkpoint, train, training_log_csv, TrainState,
};
use facediff_core::world::World;
use facediff_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "facediff", version, about = "Conditional diffusion on a synthetic factor world")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run batch loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from the world and write it with the generators.
    GenWorld {
        #[arg(long, default_value_t = 1024)]
        samples: usize,
    },
    /// Train a denoiser and write the checkpoint and loss log.
    Train,
    /// Generate face swaps with a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Swap-task metrics of a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and compare the four sampling-method variants.
    StudySampling,
    /// Train and compare the four ablation variants.
    StudyAblation,
    /// Estimator reconstruction error under the exact Gaussian denoiser.
    CompareEstimators {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        sigma: Vec<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        c.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        c.train.seed = seed;
    }
    c.validate()?;
    Ok(c)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn write_study(dir: &Path, out: &StudyOutcome) -> Result<()> {
    write(dir, "study.csv", out.report.to_csv())?;
    write(dir, "study.meta", out.report.meta())?;
    let curves: Vec<_> = out.variants.iter().map(|v| &v.curve).collect();
    write(dir, "curves.csv", curves_csv(&curves))?;
    print!("{}", out.report.to_csv());
    for v in &out.variants {
        if let Some(e) = &v.error {
            eprintln!("variant {} failed: {e}", v.label);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    let dir = cli.out.as_path();
    let default_ckpt = || dir.join("model.dsr");

    match &cli.command {
        Command::GenWorld { samples } => {
            let world = World::new(cfg.world.clone())?;
            let data = export_dataset(&world, *samples, sub_seed(cfg.train.seed, 5))?;
            save_checkpoint(&data, &dir.join("world.dsr"))?;
            write(dir, "config.txt", cfg.render())?;
            println!("wrote {samples} samples to {}", dir.join("world.dsr").display());
        }
        Command::Train => {
            let world = World::new(cfg.world.clone())?;
            let (state, log) = train(&world, &cfg.train, exec, |_, _| Ok(()))?;
            save_checkpoint(&state.to_checkpoint(&cfg.train, &world.spec)?, &default_ckpt())?;
            write(dir, "train_log.csv", training_log_csv(&log))?;
            write(dir, "config.txt", cfg.render())?;
            if let Some(last) = log.last() {
                println!("step {} total loss {:.6}", last.step, last.total);
            }
        }
        Command::Sample { checkpoint, count } => {
            let path = checkpoint.clone().unwrap_or_else(default_ckpt);
            let (state, train_cfg, spec) = TrainState::from_checkpoint(&load_checkpoint(&path)?)?;
            let world = World::new(spec)?;
            let s = train_cfg.schedule()?;
            cfg.sampler.validate(&s)?;
            let seed = cli.seed.unwrap_or(train_cfg.seed);
            let items = swap_set(&world, *count, sub_seed(seed, 6));
            let gen = generate_swaps(&world, &state.params, &s, &cfg.sampler, &items, train_cfg.num_id_embeds, sub_seed(seed, 7), exec)?;
            write(dir, "samples.csv", samples_csv(&world, &items, &gen)?)?;
            println!("wrote {count} samples to {}", dir.join("samples.csv").display());
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(default_ckpt);
            let (state, train_cfg, spec) = TrainState::from_checkpoint(&load_checkpoint(&path)?)?;
            let world = World::new(spec)?;
            cfg.sampler.validate(&train_cfg.schedule()?)?;
            let m = evaluate(&world, &state.params, &train_cfg, &cfg.sampler, cfg.study.eval_size, exec)?;
            let row = StudyRow::new("checkpoint", m, train_cfg.seed, state.step)?;
            let report = StudyReport::new(vec![row], Some(cfg.hash()))?;
            write(dir, "metrics.csv", report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Command::StudySampling => {
            let world = World::new(cfg.world.clone())?;
            let out = run_sampling_study(&world, &cfg.train, &cfg.sampler, &cfg.study, cfg.hash(), exec)?;
            write_study(dir, &out)?;
        }
        Command::StudyAblation => {
            let world = World::new(cfg.world.clone())?;
            let out = run_ablation_study(&world, &cfg.train, &cfg.sampler, &cfg.study, cfg.hash(), exec)?;
            write_study(dir, &out)?;
        }
        Command::CompareEstimators { samples, dim, sigma } => {
            let s = cfg.train.schedule()?;
            let rows = gaussian_comparison(&s, sigma, *dim, &quarter_timesteps(&s), *samples, cfg.train.seed, exec)?;
            let csv = comparison_csv(&rows);
            write(dir, "compare_estimators.csv", &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
