//! Command line entry points for every pipeline stage.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dialogen_core::crowd::{finalize, CrowdError, ParaphraseMap};
use dialogen_core::dialogue::{Dialogue, Outline};
use dialogen_core::expansion::{expand, ExpansionError, KeyMode};
use dialogen_core::fixtures;
use dialogen_core::metrics::{compute_report, import_corpus, ActMap, CorpusFormat, ImportError, MetricsError};
use dialogen_core::scenario::ScenarioConfig;
use dialogen_core::selfplay::{GenerateError, SelfPlay, DEFAULT_MAX_TURNS};
use dialogen_core::system_agent::transition_report;
use dialogen_core::task_spec::{TaskSpec, TaskSpecError};

use crate::io::{read_json, read_jsonl, write_json, write_jsonl, IoError};
use crate::service::{self, Service, ServiceError};
use crate::split::{split_corpus, SplitError, NAMES};

#[derive(Debug, Parser)]
#[command(name = "dialogen", version, about = "Dialogue outline generation, paraphrase collection and corpus statistics")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Scenario configuration (JSON) for generation.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    Restaurant,
    Movie,
    MovieRestaurant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Native,
    Dstc2Like,
    SimJson,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Native => CorpusFormat::Native,
            FormatArg::Dstc2Like => CorpusFormat::Dstc2Like,
            FormatArg::SimJson => CorpusFormat::SimJson,
        }
    }
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Bundled task specification and configuration.
    #[arg(long, conflicts_with_all = ["schema", "db"])]
    pub builtin: Option<Builtin>,
    /// Task schema (JSON); repeat with --db for multi-task scenarios.
    #[arg(long, requires = "db")]
    pub schema: Vec<PathBuf>,
    /// Entity database (JSON), paired with --schema by position.
    #[arg(long, requires = "schema")]
    pub db: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate outlines by self-play.
    Generate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        n: usize,
        /// Replace outlines whose annotation sequence repeats an earlier one.
        #[arg(long)]
        dedup: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
        max_turns: usize,
        /// Override the configured chance of an unsatisfiable constraint.
        #[arg(long)]
        p_unsat: Option<f64>,
        /// Override the configured chance of a second goal.
        #[arg(long)]
        p_multi_goal: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the template utterances of each outline as text.
    Templates {
        #[arg(long)]
        outlines: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Create a state directory with K paraphrase tasks per outline.
    Tasks {
        #[arg(long)]
        outlines: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        state: PathBuf,
    },
    /// Record identity rewrites for every open task in a state directory.
    Autoparaphrase {
        #[arg(long)]
        state: PathBuf,
    },
    /// Apply validation and span rules; write dialogues, map and drop report.
    Finalize {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Realize outlines from a paraphrase map.
    Expand {
        #[arg(long)]
        outlines: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Also reuse utterances recorded with other slot values.
        #[arg(long)]
        substitute: bool,
        /// Key the map on annotations with values (the default).
        #[arg(long, conflicts_with = "substitute")]
        strict_keys: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Diversity statistics of a corpus.
    Report {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Native)]
        format: FormatArg,
        /// Act label mapping (JSON object) for imported corpora.
        #[arg(long)]
        act_map: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Partition dialogues into train, dev and test by outline.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Train, dev and test shares.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.16, 0.34])]
        ratios: Vec<f64>,
        /// Allow empty splits.
        #[arg(long)]
        allow_empty: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the annotation task API over HTTP.
    Serve {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Port to listen on, replacing the port of --addr.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Print the system agent's transition table.
    Transitions,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    EmptyCorpus(#[from] MetricsError),
    #[error(transparent)]
    EmptyMap(#[from] ExpansionError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Crowd(#[from] CrowdError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl From<TaskSpecError> for CliError {
    fn from(e: TaskSpecError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ImportError> for CliError {
    fn from(e: ImportError) -> Self {
        match e {
            ImportError::Io { path, source } => CliError::Io(IoError::Fs { path: path.into(), source }),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl CliError {
    /// Distinct nonzero code per error class; 2 is left to usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(IoError::Fs { .. }) => 3,
            CliError::Io(IoError::Parse { .. }) | CliError::Input(_) => 4,
            CliError::EmptyCorpus(_) => 5,
            CliError::EmptyMap(_) => 6,
            CliError::Generate(_) => 7,
            CliError::Crowd(_) => 8,
            CliError::Split(SplitError::TooFewDialogues { .. }) => 9,
            CliError::Split(SplitError::InvalidRatios(_)) => 4,
            CliError::Service(_) => 10,
        }
    }
}

fn load_specs(cli_config: Option<&Path>, spec: &SpecArgs) -> Result<(Vec<TaskSpec>, ScenarioConfig), CliError> {
    let (specs, default_config) = match spec.builtin {
        Some(Builtin::Restaurant) => (vec![fixtures::restaurant_spec()], fixtures::restaurant_config()),
        Some(Builtin::Movie) => (vec![fixtures::movie_spec()], ScenarioConfig::default()),
        Some(Builtin::MovieRestaurant) => (
            vec![fixtures::movie_spec(), fixtures::restaurant_spec()],
            fixtures::movie_restaurant_config(),
        ),
        None => {
            if spec.schema.is_empty() || spec.schema.len() != spec.db.len() {
                return Err(CliError::Input("give --builtin, or --schema and --db in pairs".into()));
            }
            let specs = spec
                .schema
                .iter()
                .zip(&spec.db)
                .map(|(s, d)| TaskSpec::load_files(s, d))
                .collect::<Result<Vec<_>, _>>()?;
            (specs, ScenarioConfig::default())
        }
    };
    let config = match cli_config {
        Some(path) => read_json(path)?,
        None => default_config,
    };
    Ok((specs, config))
}

fn render_templates(outlines: &[Outline]) -> String {
    let mut out = String::new();
    for o in outlines {
        let _ = writeln!(out, "# {}", o.id);
        for t in &o.turns {
            let _ = writeln!(out, "{}: {}", t.annotation.speaker.tag(), t.template);
        }
        out.push('\n');
    }
    out
}

/// Runs one command; returns what it prints on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate {
            spec,
            n,
            dedup,
            max_turns,
            p_unsat,
            p_multi_goal,
            out,
        } => {
            if max_turns < 4 {
                return Err(CliError::Input("--max-turns must be at least 4".into()));
            }
            let (specs, mut config) = load_specs(cli.config.as_deref(), &spec)?;
            for (flag, value, target) in [
                ("--p-unsat", p_unsat, &mut config.goal.p_unsat),
                ("--p-multi-goal", p_multi_goal, &mut config.p_multi_goal),
            ] {
                if let Some(p) = value {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(CliError::Input(format!("{flag} must be within [0, 1], got {p}")));
                    }
                    *target = p;
                }
            }
            let mut play = SelfPlay::new(specs);
            play.max_turns = max_turns;
            let outlines = play.generate_outlines(&config, n, seed, dedup)?;
            write_jsonl(&out, &outlines)?;
            let successes = outlines.iter().filter(|o| o.success).count();
            Ok(format!("{} outlines ({successes} successful) -> {}\n", outlines.len(), out.display()))
        }
        Command::Templates { outlines, out } => {
            let outlines: Vec<Outline> = read_jsonl(&outlines)?;
            let text = render_templates(&outlines);
            match out {
                Some(path) => {
                    std::fs::write(&path, &text).map_err(|source| IoError::Fs { path, source })?;
                    Ok(String::new())
                }
                None => Ok(text),
            }
        }
        Command::Tasks { outlines, k, state } => {
            let outlines: Vec<Outline> = read_jsonl(&outlines)?;
            let tasks = service::init_state(&state, &outlines, k)?;
            Ok(format!("{} tasks for {} outlines in {}\n", tasks.len(), outlines.len(), state.display()))
        }
        Command::Autoparaphrase { state } => {
            let mut service = Service::open(&state)?;
            let n = service.auto_paraphrase_open()?;
            Ok(format!("{n} identity rewrites recorded\n"))
        }
        Command::Finalize { state, out_dir } => {
            let service = Service::open(&state)?;
            let b = service.board();
            let f = finalize(b.outlines(), b.tasks(), b.rewrites(), b.votes(), b.fixes())?;
            std::fs::create_dir_all(&out_dir).map_err(|source| IoError::Fs {
                path: out_dir.clone(),
                source,
            })?;
            write_jsonl(&out_dir.join("dialogues.jsonl"), &f.dialogues)?;
            write_json(&out_dir.join("map.json"), &f.map)?;
            write_json(&out_dir.join("drops.json"), &f.report)?;
            Ok(format!(
                "{} of {} dialogues kept, {} utterances in the map, {} dropped\n",
                f.report.dialogues_out,
                f.report.dialogues_in,
                f.map.len(),
                f.report.dropped()
            ))
        }
        Command::Expand {
            outlines,
            map,
            substitute,
            strict_keys: _,
            out,
        } => {
            let outlines: Vec<Outline> = read_jsonl(&outlines)?;
            let map: ParaphraseMap = read_json(&map)?;
            let mode = if substitute { KeyMode::Substitute } else { KeyMode::Strict };
            let x = expand(&outlines, &map, mode, seed)?;
            write_jsonl(&out, &x.dialogues)?;
            Ok(format!("{} dialogues written, {} outlines dropped\n", x.dialogues.len(), x.dropped))
        }
        Command::Report {
            corpus,
            format,
            act_map,
            json,
        } => {
            let acts = match act_map {
                Some(path) => read_json(&path)?,
                None if format == FormatArg::Dstc2Like => ActMap::dstc2(),
                None => ActMap::default(),
            };
            let imported = import_corpus(&corpus, format.into(), &acts)?;
            for (label, count) in &imported.unmapped {
                eprintln!("warning: act `{label}` ({count}x) has no mapping; counted as OTHER");
            }
            let report = compute_report(&imported.dialogues)?;
            Ok(if json {
                serde_json::to_string_pretty(&report).expect("serializable") + "\n"
            } else {
                report.to_table()
            })
        }
        Command::Split {
            corpus,
            ratios,
            allow_empty,
            out_dir,
        } => {
            let dialogues: Vec<Dialogue> = read_jsonl(&corpus)?;
            let ratios: [f64; 3] = ratios
                .try_into()
                .map_err(|_| CliError::Input("--ratios takes three values".into()))?;
            let split = split_corpus(&dialogues, ratios, seed, !allow_empty)?;
            std::fs::create_dir_all(&out_dir).map_err(|source| IoError::Fs {
                path: out_dir.clone(),
                source,
            })?;
            let mut summary = String::new();
            for (name, part) in NAMES.iter().zip([&split.train, &split.dev, &split.test]) {
                write_jsonl(&out_dir.join(format!("{name}.jsonl")), part)?;
                let _ = writeln!(summary, "{name}: {}", part.len());
            }
            Ok(summary)
        }
        Command::Serve { state, mut addr, port } => {
            if let Some(port) = port {
                addr.set_port(port);
            }
            let service = Service::open(&state)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|source| IoError::Fs {
                path: state.clone(),
                source,
            })?;
            eprintln!("serving {} on http://{addr}", state.display());
            runtime
                .block_on(service::serve(service, addr))
                .map_err(|source| IoError::Fs { path: state, source })?;
            Ok(String::new())
        }
        Command::Transitions => Ok(transition_report()),
    }
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            // A closed pipe (`| head`) is not an error.
            let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
