//! `mwe`: train, tag, evaluate and check the multilingual MWE tagger.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use mwe_core::autodiff::{Fault, OpKind};
use mwe_core::corpus::{corpus_stats, merge_corpora, parse_cupt, serialize_cupt, Corpus, Language};
use mwe_core::evaluation::{evaluate, EvalError, EvalResult, MatchMode};
use mwe_core::gradcheck_suite::run_suite;
use mwe_core::model::{Model, ModelError};
use mwe_core::trainer::{train, TrainError};
use serde::Serialize;

use config::{CorpusInput, Overrides, RunConfig};

const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_CONFIG: u8 = 5;
const EXIT_TRAINING: u8 = 6;
const EXIT_ALIGNMENT: u8 = 7;
const EXIT_GRADCHECK: u8 = 8;
const EXIT_CHECKPOINT: u8 = 9;
const EXIT_OUTPUT_EXISTS: u8 = 10;

/// Language code used when a command does not need one.
const NO_LANGUAGE: &str = "und";

#[derive(Parser)]
#[command(name = "mwe", version, about = "Multilingual verbal MWE tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, report and resolved config.
    Train(TrainArgs),
    /// Tag a .cupt file, rewriting its MWE column.
    Tag(TagArgs),
    /// Score predicted MWEs against gold ones.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Print sentence, token and MWE counts.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config; command-line flags override it.
    config: Option<PathBuf>,
    /// Training corpus, repeatable.
    #[arg(long, num_args = 2, value_names = ["LANG", "PATH"])]
    train: Vec<String>,
    /// Development corpus, repeatable.
    #[arg(long, num_args = 2, value_names = ["LANG", "PATH"])]
    dev: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    use_li: Option<bool>,
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    use_adv: Option<bool>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write into an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Language code of the input.
    #[arg(long, default_value = NO_LANGUAGE)]
    lang: Language,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Training corpus defining seen MWEs, repeatable. Without it every
    /// MWE counts as unseen.
    #[arg(long)]
    train: Vec<PathBuf>,
    /// Require categories to match as well as token sets.
    #[arg(long)]
    category_sensitive: bool,
    /// Write the scores and counts as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Scale the analytic gradient of this operation, e.g. `matmul`.
    #[arg(long, value_name = "OP")]
    corrupt: Option<String>,
    #[arg(long, default_value_t = 1.01)]
    factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus and its language, repeatable.
    #[arg(long, num_args = 2, value_names = ["LANG", "PATH"], required = true)]
    lang: Vec<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn inputs(flat: &[String]) -> Result<Vec<CorpusInput>, Failure> {
    flat.chunks(2)
        .map(|pair| {
            Ok(CorpusInput {
                lang: pair[0].parse().or_exit(EXIT_CONFIG)?,
                path: PathBuf::from(&pair[1]),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_exit(EXIT_IO)
}

fn read_cupt(path: &Path, lang: &Language) -> Result<Corpus, Failure> {
    let text = read_text(path)?;
    let corpus = parse_cupt(&text, lang)
        .with_context(|| format!("parsing {}", path.display()))
        .or_exit(EXIT_PARSE)?;
    Ok(corpus.with_source(path.display().to_string()))
}

fn read_merged(list: &[CorpusInput]) -> Result<Corpus, Failure> {
    let parts = list
        .iter()
        .map(|i| Ok((read_cupt(&i.path, &i.lang)?, i.lang.clone())))
        .collect::<Result<Vec<_>, Failure>>()?;
    merge_corpora(parts).or_exit(EXIT_CONFIG)
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .or_exit(EXIT_IO)
}

fn model_exit(e: &ModelError) -> u8 {
    match e {
        ModelError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_TRAINING,
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = read_text(path)?;
            RunConfig::from_toml(&text)
                .with_context(|| format!("in {}", path.display()))
                .or_exit(EXIT_CONFIG)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        out: a.out,
        train: inputs(&a.train)?,
        dev: inputs(&a.dev)?,
        use_li: a.use_li,
        use_adv: a.use_adv,
        lambda: a.lambda,
        epochs: a.epochs,
        seed: a.seed,
    });
    cfg.validate().or_exit(EXIT_CONFIG)?;
    let out = cfg.out.clone().expect("validated");
    if out.exists() && !a.force {
        return Err(Failure {
            code: EXIT_OUTPUT_EXISTS,
            error: anyhow!("{} exists; pass --force to write into it", out.display()),
        });
    }

    let train_corpus = read_merged(&cfg.train)?;
    if train_corpus.sentences.is_empty() {
        return Err(Failure {
            code: EXIT_TRAINING,
            error: anyhow!("training corpus has no sentences"),
        });
    }
    let dev = if cfg.dev.is_empty() {
        None
    } else {
        Some(read_merged(&cfg.dev)?)
    };
    let mut model = Model::new(cfg.model.clone(), &train_corpus).map_err(|e| Failure {
        code: model_exit(&e),
        error: e.into(),
    })?;
    let outcome = train(&mut model, &train_corpus, dev.as_ref(), &cfg.trainer).map_err(|e| {
        let code = match &e {
            TrainError::InvalidConfig(_) => EXIT_CONFIG,
            TrainError::Model(m) => model_exit(m),
            _ => EXIT_TRAINING,
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;

    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .or_exit(EXIT_IO)?;
    write(&out.join("config.resolved.toml"), &cfg.to_toml())?;
    write(&out.join("checkpoint.json"), &model.save_json())?;
    if let Some(best) = &outcome.best_model {
        write(&out.join("best_checkpoint.json"), &best.save_json())?;
    }
    write(&out.join("report.jsonl"), &outcome.report.to_jsonl())?;
    write(&out.join("summary.json"), &outcome.report.summary_json())?;
    println!("{}", outcome.report.summary_json());
    Ok(())
}

fn cmd_tag(a: TagArgs) -> CmdResult {
    let text = read_text(&a.checkpoint)?;
    let model = Model::load_json(&text)
        .with_context(|| format!("loading {}", a.checkpoint.display()))
        .or_exit(EXIT_CHECKPOINT)?;
    let input = read_cupt(&a.input, &a.lang)?;
    let tagged = model.tag_corpus(&input).or_exit(EXIT_TRAINING)?;
    write(&a.output, &serialize_cupt(&tagged))
}

#[derive(Serialize)]
struct EvalReport<'a> {
    gold: &'a Path,
    pred: &'a Path,
    train: &'a [PathBuf],
    #[serde(flatten)]
    result: &'a EvalResult,
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let lang = Language::new(NO_LANGUAGE).expect("valid code");
    let gold = read_cupt(&a.gold, &lang)?;
    let pred = read_cupt(&a.pred, &lang)?;
    let mut train_corpus = Corpus::default();
    for path in &a.train {
        train_corpus
            .sentences
            .extend(read_cupt(path, &lang)?.sentences);
    }
    let mode = if a.category_sensitive {
        MatchMode::CategorySensitive
    } else {
        MatchMode::CategoryInsensitive
    };
    let result = evaluate(&gold, &pred, &train_corpus, mode).map_err(|e| {
        let code = match &e {
            EvalError::AlignmentMismatch { .. } | EvalError::TokenizationMismatch { .. } => {
                EXIT_ALIGNMENT
            }
            EvalError::Corpus(_) => EXIT_PARSE,
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;
    println!("{result}");
    if let Some(path) = &a.report {
        let report = EvalReport {
            gold: &a.gold,
            pred: &a.pred,
            train: &a.train,
            result: &result,
        };
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write(path, &(json + "\n"))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let fault = match &a.corrupt {
        Some(name) => Some(Fault {
            kind: OpKind::from_name(name)
                .ok_or_else(|| anyhow!("unknown operation {name:?}"))
                .or_exit(EXIT_CONFIG)?,
            factor: a.factor,
        }),
        None => None,
    };
    let report = run_suite(a.seed, fault).or_exit(EXIT_GRADCHECK)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            error: anyhow!(
                "max relative error {:.3e} exceeds threshold",
                report.max_rel_error()
            ),
        })
    }
}

fn cmd_stats(a: StatsArgs) -> CmdResult {
    let corpus = read_merged(&inputs(&a.lang)?)?;
    let stats = corpus_stats(&corpus).or_exit(EXIT_PARSE)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&stats).expect("stats serialize")
        );
    } else {
        println!("{stats}");
    }
    Ok(())
}
