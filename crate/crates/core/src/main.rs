use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use planscript::bench::{load_samples, run_ablation, run_bench};
use planscript::config::{BackendMode, FileConfig, Overrides, Settings};
use planscript::pipeline::{answer_query, PipelineOptions, Query};
use planscript::report::{render_html, render_text, TraceFile};
use planscript::ssparser::{validate_text, ModuleRegistry};
use planscript::task::TaskKind;
use planscript::value::ImageRef;

/// Exit code for any failure other than a validation verdict.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "planscript",
    version,
    about = "Validate, repair and execute visual reasoning scripts"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file (falls back to $PLANSCRIPT_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// gqa, nlvr2, vqav2, mme or video
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<TaskKind>,
    /// fixture, http or record
    #[arg(long, global = true, value_parser = parse_mode)]
    backend: Option<BackendMode>,
    /// Directory holding <backend name>.jsonl fixture files
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    no_ssparser: bool,
    #[arg(long, global = true)]
    no_verifier: bool,
    #[arg(long, global = true)]
    no_ensemble: bool,
    /// Caption verification runs alongside planning and execution
    #[arg(long, global = true)]
    parallel: bool,
    /// Write the execution trace (JSON) here
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Abort on the first missing fixture or failed sample
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question
    Run {
        #[arg(long, short)]
        question: String,
        /// Image file, or `<id>@<width>x<height>` for an image known only by id
        #[arg(long = "image", required = true)]
        images: Vec<String>,
        /// Answer choice (repeat for multiple-choice questions)
        #[arg(long = "choice")]
        choices: Vec<String>,
        /// Print the full trace as JSON instead of just the answer
        #[arg(long)]
        json: bool,
    },
    /// Check and repair a script without running it
    Validate {
        script: PathBuf,
        #[arg(long, short)]
        question: String,
    },
    /// Run a JSONL sample file and report accuracy
    Bench {
        samples: PathBuf,
        /// Worker threads
        #[arg(long)]
        jobs: Option<usize>,
        /// Run the four-configuration ablation matrix
        #[arg(long)]
        ablation: bool,
        /// Write the JSON report here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report instead of the summary
        #[arg(long)]
        json: bool,
    },
    /// Render a trace file
    Report {
        trace: PathBuf,
        #[arg(long)]
        html: bool,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse()
        .map_err(|e: planscript::task::UnknownTaskKind| e.to_string())
}

fn parse_mode(s: &str) -> Result<BackendMode, String> {
    match s {
        "fixture" => Ok(BackendMode::Fixture),
        "http" => Ok(BackendMode::Http),
        "record" => Ok(BackendMode::Record),
        other => Err(format!(
            "unknown backend mode '{other}' (fixture, http, record)"
        )),
    }
}

fn parse_image(spec: &str) -> Result<ImageRef, String> {
    let path = Path::new(spec);
    if path.exists() {
        let (w, h) = image::image_dimensions(path).map_err(|e| format!("{spec}: {e}"))?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string());
        return Ok(ImageRef::new(id, w, h).with_origin(spec));
    }
    let (id, size) = spec.rsplit_once('@').ok_or_else(|| {
        format!("{spec}: no such file (use <id>@<width>x<height> for virtual images)")
    })?;
    let (w, h) = size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
        .filter(|(w, h)| *w > 0 && *h > 0)
        .ok_or_else(|| format!("{spec}: bad size '{size}'"))?;
    Ok(ImageRef::new(id, w, h))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn settings(common: &Common, jobs: Option<usize>) -> Result<Settings, String> {
    let file = FileConfig::discover(common.config.as_deref()).map_err(|e| e.to_string())?;
    let overrides = Overrides {
        task: common.task,
        backend: common.backend,
        fixtures: common.fixtures.clone(),
        no_ssparser: common.no_ssparser,
        no_verifier: common.no_verifier,
        no_ensemble: common.no_ensemble,
        parallel: common.parallel,
        strict: common.strict,
        jobs,
    };
    Ok(Settings::resolve(file, &overrides))
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::Run {
            question,
            images,
            choices,
            json,
        } => {
            let s = settings(&cli.common, None)?;
            let images = images
                .iter()
                .map(|i| parse_image(i))
                .collect::<Result<Vec<_>, _>>()?;
            let gateway = s.build_gateway().map_err(|e| e.to_string())?;
            let repo = s.repository().map_err(|e| e.to_string())?;
            let query = Query {
                question: question.clone(),
                images,
                choices,
            };
            let out = answer_query(&query, &PipelineOptions::from_settings(&s), &repo, &gateway)
                .map_err(|e| e.to_string())?;
            let trace = TraceFile::from_output(&question, s.task, &out);
            if let Some(path) = &cli.common.trace {
                write_file(path, &to_json(&trace))?;
            }
            if json {
                println!("{}", to_json(&trace));
            } else {
                println!("{}", out.answer);
            }
            Ok(0)
        }
        Command::Validate { script, question } => {
            let s = settings(&cli.common, None)?;
            let text = std::fs::read_to_string(&script)
                .map_err(|e| format!("{}: {e}", script.display()))?;
            let outcome =
                validate_text(&text, &question, &ModuleRegistry::for_task(s.task), s.task);
            println!("{}", to_json(&outcome.report()));
            Ok(outcome.verdict.exit_code() as u8)
        }
        Command::Bench {
            samples,
            jobs,
            ablation,
            out,
            json,
        } => {
            let s = settings(&cli.common, jobs)?;
            let samples = load_samples(&samples).map_err(|e| e.to_string())?;
            let repo = s.repository().map_err(|e| e.to_string())?;
            let (json_text, summary) = if ablation {
                let report = run_ablation(&samples, &s, &repo).map_err(|e| e.to_string())?;
                (to_json(&report), report.summary())
            } else {
                let gateway = s.build_gateway().map_err(|e| e.to_string())?;
                let report = run_bench(&samples, &s, &repo, &gateway).map_err(|e| e.to_string())?;
                if s.backend == Some(BackendMode::Fixture) && report.network_calls > 0 {
                    return Err(format!(
                        "replay run made {} network call(s)",
                        report.network_calls
                    ));
                }
                (to_json(&report), report.summary())
            };
            if let Some(path) = &out {
                write_file(path, &json_text)?;
            }
            if json {
                println!("{json_text}");
            } else {
                print!("{summary}");
            }
            Ok(0)
        }
        Command::Report { trace, html } => {
            let text =
                std::fs::read_to_string(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
            let parsed = TraceFile::parse(&text).map_err(|e| e.to_string())?;
            if let Some(t) = parsed {
                print!(
                    "{}",
                    if html {
                        render_html(&t)
                    } else {
                        render_text(&t)
                    }
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
