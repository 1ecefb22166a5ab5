//! `imlc`: excite the testbed, train surrogates, run the controller, and
//! explain or question its decisions.

mod manifest;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use imlc_core::explain::{scenario_census, Explainer, TemplateSet};
use imlc_core::hub::{run_episode, timing_report, Episode, EpisodeConfig, Surrogates};
use imlc_core::llm::{LlmClient, LlmConfig, LlmMode};
use imlc_core::surrogate::{train, ModelKind, SurrogateModel, TrainConfig, TrainingData};
use imlc_core::testbed::{generate_dr_calendar, run_excitation, ExcitationDataset, TestbedConfig};
use imlc_core::{Error, Result};
use serde::{Deserialize, Serialize};

use manifest::{ManifestEntry, RunManifest};

/// Mean optimization time per control interval reported for the original
/// co-simulation setup.
const REFERENCE_SECONDS_PER_INTERVAL: f64 = 4.19;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    testbed: TestbedConfig,
    train: TrainConfig,
    episode: EpisodeConfig,
    llm: LlmConfig,
}

#[derive(Parser)]
#[command(name = "imlc", version, about = "Explainable MPC precooling pipeline")]
struct Cli {
    /// JSON file overriding defaults (sections: testbed, train, episode, llm).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Append produced files and seeds to this manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Fx,
    Fy,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    Deterministic,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Online,
    Stub,
}

impl From<Backend> for LlmMode {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Online => LlmMode::Online,
            Backend::Stub => LlmMode::Stub,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Random-excitation run of the testbed; writes a CSV and its config.
    Excite {
        #[arg(long, default_value_t = 31)]
        days: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the f_x or f_y surrogate on an excitation CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop episode with per-step attributions.
    Run {
        #[arg(long, default_value_t = 31)]
        days: usize,
        #[arg(long)]
        fx: PathBuf,
        #[arg(long)]
        fy: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        dr_prob: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Zero the wall-clock fields so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Writes Markdown and SVG explanations for recorded timesteps.
    Explain {
        #[arg(long)]
        episode: PathBuf,
        /// Timestep index or `all`.
        #[arg(long, default_value = "all")]
        t: String,
        #[arg(long, value_enum, default_value = "deterministic")]
        mode: Mode,
        /// Chat backend used in llm mode.
        #[arg(long, value_enum, default_value = "online")]
        llm: Backend,
        /// Directory holding scenario1.txt .. scenario3.txt.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answers questions about one timestep.
    Ask {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        question: Option<String>,
        /// Read questions from stdin until end of input.
        #[arg(long)]
        repl: bool,
        #[arg(long, value_enum, default_value = "online")]
        llm: Backend,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn client(cfg: &PipelineConfig, backend: Backend) -> Result<LlmClient> {
    LlmClient::new(LlmConfig {
        mode: backend.into(),
        ..cfg.llm.clone()
    })
}

fn execute(cli: Cli) -> Result<Option<ManifestEntry>> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Excite { days, seed, out } => {
            let data = run_excitation(days, &cfg.testbed, seed)?;
            ensure_parent(&out)?;
            data.save(&out)?;
            let config_path = sidecar(&out, "config.json");
            cfg.testbed.save(&config_path)?;
            println!("wrote {} rows to {}", data.len(), out.display());
            Ok(Some(
                ManifestEntry::new("excite")
                    .seed("excitation", seed)
                    .seed("weather", cfg.testbed.rng_seed)
                    .output(&out)
                    .output(&config_path),
            ))
        }
        Command::Train {
            data,
            target,
            epochs,
            seed,
            out,
        } => {
            let dataset = ExcitationDataset::load(&data)?;
            let kind = match target {
                Target::Fx => ModelKind::Fx,
                Target::Fy => ModelKind::Fy,
            };
            let mut tc = cfg.train.clone();
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.rng_seed = seed.unwrap_or(tc.rng_seed);
            let model = train(&TrainingData::from_excitation(&dataset, kind), &kind.schema(), &tc)?;
            ensure_parent(&out)?;
            model.save(&out)?;
            println!(
                "{}: final train MSE {:.6}, validation MSE {:.6} ({} epochs)",
                model.schema.target.name, model.meta.final_train_mse, model.meta.final_validation_mse, tc.epochs
            );
            Ok(Some(
                ManifestEntry::new("train")
                    .seed("training", tc.rng_seed)
                    .input(&data)
                    .output(&out),
            ))
        }
        Command::Run {
            days,
            fx,
            fy,
            dr_prob,
            seed,
            out,
            no_timing,
        } => {
            let fx_model = SurrogateModel::load(&fx)?;
            let fy_model = SurrogateModel::load(&fy)?;
            let models = Surrogates::from_models(&fx_model, &fy_model)?;
            let ec = EpisodeConfig {
                n_days: days,
                ..cfg.episode.clone()
            };
            let calendar = generate_dr_calendar(days, dr_prob, seed)?;
            let mut episode = run_episode(&ec, &cfg.testbed, &models, &calendar)?;
            let timing = timing_report(&episode);
            if no_timing {
                episode.canonicalize();
            }
            ensure_parent(&out)?;
            episode.save(&out)?;
            let census = scenario_census(&episode);
            println!("wrote {} records to {}", episode.records.len(), out.display());
            println!(
                "optimization time per interval: mean {:.6} s, max {:.6} s (reference {REFERENCE_SECONDS_PER_INTERVAL} s)",
                timing.mean, timing.max
            );
            println!(
                "scenarios: precool {}, normal {}, event without precool {} (total {})",
                census.precool,
                census.normal,
                census.event_no_precool,
                census.total()
            );
            Ok(Some(
                ManifestEntry::new("run")
                    .seed("calendar", seed)
                    .seed("weather", cfg.testbed.rng_seed)
                    .input(&fx)
                    .input(&fy)
                    .output(&out),
            ))
        }
        Command::Explain {
            episode,
            t,
            mode,
            llm,
            templates,
            out,
        } => {
            let ep = Episode::load(&episode)?;
            let explainer = Explainer {
                templates: match &templates {
                    Some(dir) => TemplateSet::load_dir(dir)?,
                    None => TemplateSet::default(),
                },
                threshold_w: ep.header.config.episode.threshold_w,
                ..Explainer::default()
            };
            let client = match mode {
                Mode::Llm => Some(client(&cfg, llm)?),
                Mode::Deterministic => None,
            };
            let selected: Vec<usize> = if t == "all" {
                ep.records.iter().map(|r| r.timestamp).collect()
            } else {
                let t: usize = t
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("--t expects a timestep or `all`, got `{t}`")))?;
                vec![ep.record(t)?.timestamp]
            };
            let mut entry = ManifestEntry::new("explain").input(&episode);
            let (mut asked, mut agreed) = (0usize, 0usize);
            for t in selected {
                let record = ep.record(t)?;
                let doc = match &client {
                    Some(c) => explainer.render_document_llm(record, c)?,
                    None => explainer.render_document(record)?,
                };
                if let Some(ok) = doc.llm_agrees() {
                    asked += 1;
                    agreed += usize::from(ok);
                }
                entry = entry.output(&doc.write(&out)?);
            }
            println!("wrote {} documents to {}", entry.outputs.len(), out.display());
            if asked > 0 {
                println!(
                    "language model scenario agreement with the rubric: {agreed}/{asked} ({:.1}%)",
                    100.0 * agreed as f64 / asked as f64
                );
            }
            Ok(Some(entry))
        }
        Command::Ask {
            episode,
            t,
            question,
            repl,
            llm,
        } => {
            let ep = Episode::load(&episode)?;
            ep.record(t)?;
            let explainer = Explainer {
                threshold_w: ep.header.config.episode.threshold_w,
                ..Explainer::default()
            };
            let client = client(&cfg, llm)?;
            let answer = |q: &str| -> Result<String> {
                let context = explainer.build_qa_context(&ep, t, q)?;
                client.answer_question(&context)
            };
            if let Some(q) = &question {
                println!("{}", answer(q)?);
            }
            if repl {
                let stdin = std::io::stdin();
                let mut lines = stdin.lock().lines();
                loop {
                    print!("question> ");
                    let _ = std::io::stdout().flush();
                    let Some(line) = lines.next() else { break };
                    let line = line.map_err(|e| Error::Io {
                        path: "<stdin>".into(),
                        source: e,
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    println!("{}", answer(&line)?);
                }
                println!();
            } else if question.is_none() {
                return Err(Error::InvalidInput("give --question or --repl".into()));
            }
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let manifest = cli.manifest.clone();
    let result = execute(cli).and_then(|entry| match (manifest, entry) {
        (Some(path), Some(entry)) => RunManifest::record(&path, entry),
        _ => Ok(()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
