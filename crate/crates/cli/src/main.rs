use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use prefdistill_core::pipeline::{self, PipelineError, RunConfig, Split, TrainOptions, WorldSpec};
use serde_json::json;

const CONFIG_HELP: &str = "\
Config file (JSON; unknown keys are rejected; relative paths resolve against the file's directory):
  paths.catalog                  PDE1 embedding file with its .manifest.json (required)
  paths.personas_train|val|test  JSON Lines personas {id, text, embedding?}
  paths.labels_val|test          tournament label files
  paths.teacher_cache            append-only teacher cache (optional)
  paths.image_refs               image reference template, `{id}` substituted (optional)
  paths.output_dir               checkpoints, logs and reports (required)
  student_init.mode              import | random-unit                 [import]
  sampler.bins.cuts              score-range cut fractions            [0.7, 0.9, 0.95]
  sampler.bins.mode              mirrored | literal-sorted            [mirrored]
  sampler.plan                   draws per bin, lowest bin first      [1, 1, 1, 2]
  sampler.group_size                                                  [5]
  sampler.groups_per_step                                             [1000]
  sampler.groups_per_persona     per-persona groups instead           [unset]
  sampler.policy                 preference-aligned | uniform         [preference-aligned]
  optimizer.lr0 / decay          lr at step t is lr0 * decay^t        [1e-6 / 0.95]
  optimizer.beta1 / beta2 / eps                                       [0.9 / 0.999 / 1e-8]
  optimizer.weight_decay                                              [0]
  optimizer.accumulation_steps   micro-batches per optimizer step     [10]
  optimizer.micro_batch          nominal groups per micro-batch       [50]
  teacher.kind                   synthetic | http | replay (required)
    synthetic: hidden_dim [catalog dim], tau [0], seed [run seed]
    http: url, model, auth_env, max_parallel [8], max_retries [3], timeout_ms [30000],
          prompt_template, backoff_ms [250]
    replay: log, teacher_id
  eval.cadence                   validate every j optimizer steps     [1]
  eval.patience                  validation rounds without gain       [5]
  eval.split                     split scored by `eval`               [test]
  label.split                    split labelled by `label`            [val]
  label.entrants                 first n catalog images compete       [all]
  label.shuffle / brackets / parallelism                              [false / false / 8]
  max_steps                                                           [50]
  seed                                                                [0]

Exit status: 0 success, 2 config error, 3 teacher failure, 4 resumable abort, 1 other errors.";

#[derive(Parser)]
#[command(name = "prefdistill", version, about = "Distill teacher ranking preferences into an image embedding table", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config file
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the student against the teacher
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output dir
        #[arg(long)]
        resume: bool,
        /// Validate inputs and print the per-step budget; no teacher calls
        #[arg(long)]
        dry_run: bool,
    },
    /// Label a persona split by single-elimination tournaments
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Accepted for symmetry; labelling always resumes by persona id
        #[arg(long)]
        resume: bool,
        /// Print the comparison budget without calling the teacher
        #[arg(long)]
        dry_run: bool,
    },
    /// Mean percentile rank of labelled winners under the trained student
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Top-k catalog images for a persona id or text
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        persona: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Write a synthetic world (catalog, personas, config) for experiments
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        val: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
        #[arg(long, default_value_t = 512)]
        images: usize,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn to_json<S: serde::Serialize>(value: &S) -> serde_json::Value {
    serde_json::to_value(value).expect("serializable output")
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Train {
            common,
            resume,
            dry_run,
        } => {
            let config = load(&common)?;
            if dry_run {
                print(to_json(&pipeline::dry_run(&config)?));
                return Ok(());
            }
            let interrupt = Arc::new(AtomicBool::new(false));
            {
                let flag = interrupt.clone();
                // first signal finishes the current step, a second one exits at once
                let installed = ctrlc::set_handler(move || {
                    if flag.swap(true, Ordering::SeqCst) {
                        std::process::exit(130);
                    }
                    log::warn!("interrupt: stopping after the current step");
                });
                if let Err(e) = installed {
                    log::warn!("no interrupt handler: {e}");
                }
            }
            let options = TrainOptions {
                resume,
                interrupt: Some(interrupt),
                ..Default::default()
            };
            let outcome = pipeline::train(&config, &options)?;
            print(json!({
                "steps": outcome.state.step,
                "stop_reason": outcome.state.stop_reason,
                "initial_metric": outcome.state.initial_metric,
                "best_metric": outcome.state.early_stop.best_metric,
                "best_step": outcome.state.early_stop.best_tag,
                "teacher_calls": outcome.state.teacher_calls,
                "checkpoint": outcome.checkpoint,
                "best": outcome.best,
            }));
        }
        Command::Label {
            common,
            split,
            resume: _,
            dry_run,
        } => {
            let config = load(&common)?;
            let split = split.map(Split::from);
            if dry_run {
                print(to_json(&pipeline::dry_run_labels(&config, split)?));
                return Ok(());
            }
            print(to_json(&pipeline::label(&config, split)?));
        }
        Command::Eval { common, split } => {
            let config = load(&common)?;
            let outcome = pipeline::eval(&config, split.map(Split::from))?;
            print(to_json(&outcome.report));
        }
        Command::Retrieve { common, persona, k } => {
            let config = load(&common)?;
            print(to_json(&pipeline::retrieve(&config, &persona, k)?));
        }
        Command::Synth {
            out,
            dim,
            train,
            val,
            test,
            images,
            tau,
            seed,
        } => {
            let spec = WorldSpec {
                dim,
                train_personas: train,
                val_personas: val,
                test_personas: test,
                images,
                tau,
                seed,
            };
            pipeline::write_world(&out, &spec)?;
            print(json!({"config": out.join("config.json").display().to_string()}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            let code = e.exit_code();
            if code == 3 || code == 4 {
                error!("completed work is saved; rerun (train with --resume) to continue");
            }
            ExitCode::from(code as u8)
        }
    }
}
