use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use persona_align::annotate::PairPolicy;
use persona_pipeline::{
    doctor, studio_from_workdir, Overrides, Pipeline, PipelineConfig, PipelineError, Stage, StageOutcome,
};
use persona_studio::StudioConfig;

#[derive(Parser)]
#[command(name = "palign", version, about = "Persona alignment pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, short, global = true, default_value = "palign.toml")]
    config: PathBuf,
    /// Directory holding artifacts, index and manifests.
    #[arg(long, short, global = true, default_value = "work")]
    workdir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    rouge_threshold: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pair_policy: Option<PolicyArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    AllStrict,
    ExtremesOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and store the input corpora.
    Ingest,
    /// Back-translation and self-instruct expansion.
    Augment,
    /// Train one objective.
    Train {
        #[arg(value_enum)]
        objective: Objective,
    },
    /// Hand annotation tasks out and take votes back in.
    Annotate {
        #[command(subcommand)]
        action: AnnotateAction,
    },
    /// Label the remaining variants with the reward model and build the
    /// train/test preference pairs.
    Pairs,
    /// Evaluate the aligned checkpoint.
    Eval,
    /// Run every stage in order.
    Run,
    /// Serve the annotation and chat studio over this workdir.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Votes needed before an item is aggregated.
        #[arg(long, default_value_t = 3)]
        quorum: usize,
        /// Seconds before an unanswered assignment returns to the queue.
        #[arg(long, default_value_t = 600)]
        lease_secs: u64,
        /// Chat turns kept in the prompt.
        #[arg(long, default_value_t = 8)]
        window: usize,
    },
    /// Report stage status and artifact integrity without changing anything.
    Doctor {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Sft,
    Rm,
    Dpo,
}

#[derive(Subcommand)]
enum AnnotateAction {
    /// Write the items still needing votes as JSONL.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a vote log (annotation JSONL).
    Import { file: PathBuf },
}

fn report(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let how = if o.cache_hit { "cached" } else { "ran" };
        println!("{:<16} {how:<7} manifest {}", o.stage.name(), o.entry.manifest.file);
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::Doctor { json } = cli.command {
        let r = doctor(&cli.workdir);
        if json {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        } else {
            print!("{}", r.render());
        }
        return Ok(());
    }

    let mut config = PipelineConfig::load(&cli.config)?;
    config.apply(&Overrides {
        seed: cli.seed,
        beta: cli.beta,
        lr: cli.lr,
        epochs: cli.epochs,
        batch_size: cli.batch_size,
        rouge_threshold: cli.rouge_threshold,
        pair_policy: cli.pair_policy.map(|p| match p {
            PolicyArg::AllStrict => PairPolicy::AllStrict,
            PolicyArg::ExtremesOnly => PairPolicy::ExtremesOnly,
        }),
    })?;
    let pipeline = Pipeline::new(config, &cli.workdir)?;

    match cli.command {
        Command::Ingest => report(&[pipeline.run_stage(Stage::Ingest)?]),
        Command::Augment => report(&[pipeline.run_stage(Stage::Augment)?]),
        Command::Train { objective } => {
            let stage = match objective {
                Objective::Sft => Stage::Sft,
                Objective::Rm => Stage::Rm,
                Objective::Dpo => Stage::Dpo,
            };
            report(&[pipeline.run_stage(stage)?]);
        }
        Command::Annotate { action } => match action {
            AnnotateAction::Export { out } => {
                let (path, n) = pipeline.export_annotation_tasks(out.as_deref())?;
                println!("{n} task(s) written to {}", path.display());
            }
            AnnotateAction::Import { file } => report(&[pipeline.import_annotations(&file)?]),
        },
        Command::Pairs => report(&pipeline.run_stages(&[Stage::LabelRemainder, Stage::Pairs])?),
        Command::Eval => {
            let o = pipeline.run_stage(Stage::Eval)?;
            report(std::slice::from_ref(&o));
            if let Some(table) = pipeline.output(Stage::Eval, "report_table")? {
                print!("{}", String::from_utf8_lossy(&table));
            }
        }
        Command::Run => report(&pipeline.run_all()?),
        Command::Serve {
            addr,
            quorum,
            lease_secs,
            window,
        } => {
            let studio = studio_from_workdir(
                &pipeline,
                StudioConfig {
                    quorum,
                    lease: Duration::from_secs(lease_secs),
                    window,
                    ..StudioConfig::default()
                },
            )?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Io {
                path: cli.workdir.clone(),
                source: e,
            })?;
            log::info!("serve: listening on http://{addr}");
            rt.block_on(persona_studio::serve(studio, addr))
                .map_err(|e| PipelineError::Io {
                    path: cli.workdir,
                    source: e,
                })?;
        }
        Command::Doctor { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
