//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{AppConfig, BackendKind, Frontend, Overrides, BUNDLED_CORPUS};
use crate::eval_runner::{evaluate, load_corpus};
use crate::imaging::load_image;
use crate::pipeline::{plan_json, report_json, Fault, Pipeline, PipelineError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "medprompt",
    version,
    about = "Plan, route and run medical image analysis tasks from natural-language requests"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Each one falls back to its
/// environment variable, then the config file, then the default.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON config file [env: MEDPROMPT_CONFIG]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of weight files [env: MEDPROMPT_REGISTRY]
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Extra synonym lexicon (JSON object) [env: MEDPROMPT_LEXICON]
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Target similarity weight [env: MEDPROMPT_ALPHA]
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Modality similarity weight [env: MEDPROMPT_BETA]
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Minimum routing score, exclusive [env: MEDPROMPT_THRESHOLD]
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Minimum similarity for the embedding normalization stage [env: MEDPROMPT_TAU]
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// offline or llm [env: MEDPROMPT_FRONTEND]
    #[arg(long, global = true)]
    frontend: Option<Frontend>,
    /// stub or remote [env: MEDPROMPT_BACKEND]
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Model server base URL for the remote backend [env: MEDPROMPT_REMOTE]
    #[arg(long, global = true)]
    remote: Option<String>,
    /// Where masks are written [env: MEDPROMPT_OUTPUT_DIR]
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Chat-completion endpoint [env: LLM_ENDPOINT]
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    /// Chat model name [env: LLM_MODEL]
    #[arg(long, global = true)]
    llm_model: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect the weight registry
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
    /// Print the resolved plan for a query
    Plan {
        #[arg(long)]
        query: String,
        /// Use the rule-based parser instead of the LLM
        #[arg(long)]
        offline: bool,
        /// Include every ranked candidate, not just the winner
        #[arg(long)]
        explain: bool,
    },
    /// Plan and execute a query on an image
    Run {
        #[arg(long)]
        query: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        offline: bool,
        /// Force stub classifications: positive, negative or a class label
        #[arg(long)]
        stub_outcome: Option<String>,
    },
    /// Score a gold corpus and print the correctness table
    Eval {
        /// JSONL gold corpus; the bundled one by default
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        offline: bool,
        /// Print the per-record results as JSON after the table
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service
    Serve {
        /// [env: MEDPROMPT_PORT]
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Subcommand)]
enum RegistryAction {
    /// List weights with their parsed metadata
    List {
        #[arg(long)]
        json: bool,
    },
}

impl GlobalArgs {
    fn overrides(&self, port: Option<u16>) -> Overrides {
        Overrides {
            config_file: self.config.clone(),
            registry_root: self.registry.clone(),
            lexicon_path: self.lexicon.clone(),
            alpha: self.alpha,
            beta: self.beta,
            threshold: self.threshold,
            tau_norm: self.tau,
            frontend: self.frontend,
            backend: self.backend,
            remote_endpoint: self.remote.clone(),
            output_dir: self.output_dir.clone(),
            service_port: port,
            llm_endpoint: self.llm_endpoint.clone(),
            llm_model: self.llm_model.clone(),
        }
    }
}

fn exit_code(e: &PipelineError) -> i32 {
    match e.fault() {
        Fault::User => EXIT_USER,
        _ => EXIT_INTERNAL,
    }
}

fn frontend(offline: bool, config: &AppConfig) -> Frontend {
    if offline {
        Frontend::Offline
    } else {
        config.frontend
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Environment lookups go through `env`.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USER
                }
            };
        }
    };
    match dispatch(cli, env, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(
    cli: Cli,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), PipelineError> {
    let port = match &cli.command {
        Command::Serve { port } => *port,
        _ => None,
    };
    let config = AppConfig::resolve(&cli.global.overrides(port), env)?;
    let pipeline = Pipeline::load(config)?;
    for w in pipeline.registry.warnings() {
        let _ = writeln!(err, "warning: skipped {w}");
    }
    let io = |e: std::io::Error| PipelineError::Internal(format!("cannot write output: {e}"));

    match cli.command {
        Command::Registry {
            action: RegistryAction::List { json },
        } => {
            let listing = pipeline.registry.listing();
            if json {
                let text = serde_json::to_string_pretty(&listing).expect("listings serialize");
                writeln!(out, "{text}").map_err(io)?;
            } else if listing.is_empty() {
                writeln!(out, "no weights found in {}", pipeline.config.registry_root.display()).map_err(io)?;
            } else {
                for w in &listing {
                    let intent = serde_json::to_value(w.intent).expect("intents serialize");
                    let labels = if w.class_labels.is_empty() {
                        String::new()
                    } else {
                        format!("  [{}]", w.class_labels.join(", "))
                    };
                    writeln!(
                        out,
                        "{:<32} {:<14} {:<22} {:<12}{labels}",
                        w.weight_id,
                        intent.as_str().unwrap_or_default(),
                        w.targets.join("+"),
                        w.modality
                    )
                    .map_err(io)?;
                }
            }
        }
        Command::Plan { query, offline, explain } => {
            let planned = pipeline.plan(&query, frontend(offline, &pipeline.config))?;
            write!(out, "{}", plan_json(&planned.plan, explain)).map_err(io)?;
        }
        Command::Run {
            query,
            image,
            offline,
            stub_outcome,
        } => {
            let image = load_image(&image).map_err(PipelineError::Image)?;
            let backend = pipeline.backend(stub_outcome.as_deref(), Some(pipeline.config.output_dir.clone()))?;
            let executed = pipeline.run(&query, frontend(offline, &pipeline.config), &image, &backend)?;
            write!(out, "{}", report_json(&executed.report)).map_err(io)?;
            let _ = writeln!(err, "{}", executed.report.answer);
        }
        Command::Eval { corpus, offline, json } => {
            let path = corpus.unwrap_or_else(|| PathBuf::from(BUNDLED_CORPUS));
            let records = load_corpus(&path)?;
            let run = evaluate(&pipeline, &records, frontend(offline, &pipeline.config));
            write!(out, "{}", run.table.format()).map_err(io)?;
            for r in run.records.iter().filter(|r| !r.flags.overall) {
                let reason = r.error.as_deref().unwrap_or("plan differs from gold");
                let _ = writeln!(err, "miss: {:?}: {reason}", r.prompt);
            }
            if json {
                let text = serde_json::to_string_pretty(&run).expect("eval runs serialize");
                writeln!(out, "{text}").map_err(io)?;
            }
        }
        Command::Serve { .. } => {
            let port = pipeline.config.service_port;
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| PipelineError::Internal(format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(crate::server::serve(pipeline, port))
                .map_err(|e| PipelineError::Internal(format!("server failed: {e}")))?;
        }
    }
    Ok(())
}
