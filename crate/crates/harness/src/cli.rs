//! `framemix` subcommands. Each one wraps a single library operation and
//! writes its outputs under `--out`.

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use framemix_core::annoparse::{from_sequence_records, read_records, to_sequence_records, write_records};
use framemix_core::budget::{assemble_mixture, plan_grid, plan_mixture, ratio_grid, write_plans_csv};
use framemix_core::corpus::{
    label_distribution, length_stats, read_corpus, read_dialogues, read_sessions, split_dialogue, write_corpus,
    write_sessions,
};
use framemix_core::evaluation::{evaluate, EvalReport};
use framemix_core::llm::{usage_cost, ChatClient, HttpClient, RecordingClient, ReplayClient};
use framemix_core::synthesis::{build_exemplar_pool, generate_pseudo_dialogues, label_sessions, Labeler, SynthesisError};
use framemix_core::{Dataset, Money, Source, Variant};
use serde::Serialize;

use crate::config::Config;
use crate::report::emit_report;
use crate::sweep::{run_sweep, SweepInputs};
use crate::{trainer, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "framemix", version, about = "Synthesize, label, mix and evaluate semantic frame training data")]
pub struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed(s).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split dialogues into sessions of about `window` utterances.
    Split {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Generate pseudo-dialogues with the self-instruct loop.
    Generate {
        #[arg(long)]
        human: PathBuf,
        /// Previously generated sessions to seed the pseudo pool.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Pseudo-label sessions with few-shot exemplars.
    Label {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        exemplars: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Plan (and optionally assemble) a budgeted mixture.
    Mix(MixArgs),
    /// Convert a corpus to sequence-record TSV.
    Export {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        /// Corpus JSONL, or sequence-record TSV (`.tsv`) as written by a trainer.
        #[arg(long)]
        pred: PathBuf,
        /// Require arguments to attach to exactly the gold trigger.
        #[arg(long)]
        no_ecr: bool,
    },
    /// Session length and label statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        bucket: usize,
    },
    /// Run the budget × ratio × seed sweep and write the report.
    Sweep {
        #[arg(long)]
        hh: PathBuf,
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        augment: bool,
    },
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// Serve responses from a recorded transcript instead of the endpoint.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long, required_unless_present = "grid")]
    pub budget: Option<Money>,
    #[arg(long, required_unless_present = "grid")]
    pub ratio: Option<f64>,
    /// HP or PP; the configured sweep variant by default.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Plan the configured budget grid instead of a single point.
    #[arg(long, conflicts_with_all = ["budget", "ratio"])]
    pub grid: bool,
    #[arg(long, requires = "pseudo")]
    pub hh: Option<PathBuf>,
    #[arg(long, requires = "hh")]
    pub pseudo: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn summary<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes")
}

fn create_out(out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

#[derive(Serialize)]
struct ClassRow<'a> {
    kind: &'a str,
    label: &'a str,
    precision: String,
    recall: String,
    f1: String,
    gold: usize,
    pred: usize,
}

fn write_class_csv(report: &EvalReport, path: &Path) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Validation(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (kind, classes) in [("trigger", &report.triggers), ("argument", &report.arguments)] {
        for (label, c) in classes {
            w.serialize(ClassRow {
                kind,
                label,
                precision: format!("{:.6}", c.precision),
                recall: format!("{:.6}", c.recall),
                f1: format!("{:.6}", c.f1),
                gold: c.gold_count,
                pred: c.pred_count,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn client(config: &Config, replay: &Option<PathBuf>) -> Result<Box<dyn ChatClient>, HarnessError> {
    if let Some(path) = replay.as_ref().or(config.llm.replay.as_ref()) {
        return Ok(Box::new(ReplayClient::from_path(path)?));
    }
    let live = HttpClient::from_env(&config.llm.http)?;
    Ok(match &config.llm.record {
        Some(path) => Box::new(RecordingClient::new(live, path)?),
        None => Box::new(live),
    })
}

pub fn execute(cli: &Cli) -> Result<String, HarnessError> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
        config.generation.seed = seed;
    }
    let out = &cli.out;
    let tokenizer = config.tokenizer.build();

    match &cli.command {
        Command::Split { dialogues, window } => {
            let window = window.unwrap_or(config.session_window);
            let mut sessions = Vec::new();
            for d in read_dialogues(dialogues)? {
                sessions.extend(split_dialogue(&d, window)?);
            }
            create_out(out)?;
            write_sessions(&sessions, &out.join("sessions.jsonl"))?;
            Ok(summary(&serde_json::json!({ "sessions": sessions.len() })))
        }

        Command::Generate {
            human,
            pseudo,
            count,
            llm,
        } => {
            let human_pool = read_sessions(human)?;
            let mut pool = match pseudo {
                Some(p) => read_sessions(p)?,
                None => Vec::new(),
            };
            let seeded = pool.len();
            let client = client(&config, &llm.replay)?;
            let result = generate_pseudo_dialogues(
                &human_pool,
                &mut pool,
                client.as_ref(),
                &config.generation,
                *count,
                tokenizer.as_ref(),
            );
            create_out(out)?;
            write_sessions(&pool[seeded..], &out.join("pseudo_sessions.jsonl"))?;
            let report = result?;
            let log = out.join("generation_log.jsonl");
            let lines: String = report
                .attempts
                .iter()
                .map(|a| serde_json::to_string(a).expect("attempt serializes") + "\n")
                .collect();
            std::fs::write(&log, lines).map_err(|e| HarnessError::io(&log, e))?;
            Ok(summary(&serde_json::json!({
                "accepted": report.accepted.len(),
                "attempts": report.attempts.len(),
                "cost": usage_cost(&report.responses, config.llm.price),
            })))
        }

        Command::Label {
            sessions,
            exemplars,
            llm,
        } => {
            let taxonomy = config.taxonomy()?;
            let definitions = config.type_definitions()?;
            let targets = read_sessions(sessions)?;
            let pool = build_exemplar_pool(&read_corpus(exemplars, Some(&taxonomy))?, config.labeling.min_exemplar_entities);
            let mut labeling = config.labeling.clone();
            if labeling.anchor_session_id.is_empty() {
                // the most richly annotated exemplar, lowest id on ties
                let anchor = pool
                    .iter()
                    .max_by(|a, b| a.entity_count().cmp(&b.entity_count()).then_with(|| b.id().cmp(a.id())))
                    .ok_or_else(|| SynthesisError::AnchorMissing("(empty exemplar pool)".into()))?;
                labeling.anchor_session_id = anchor.id().to_string();
            }
            let client = client(&config, &llm.replay)?;
            create_out(out)?;
            let labeler = Labeler {
                client: client.as_ref(),
                pool: &pool,
                config: &labeling,
                taxonomy: &taxonomy,
                definitions: &definitions,
                tokenizer: tokenizer.as_ref(),
            };
            let report = label_sessions(&targets, &labeler, Some(&out.join("label_checkpoint.jsonl")))?;
            write_corpus(&report.labeled, &out.join("labeled.jsonl"))?;
            let failures = out.join("label_failures.jsonl");
            let lines: String = report
                .failures
                .iter()
                .map(|f| serde_json::to_string(f).expect("failure serializes") + "\n")
                .collect();
            std::fs::write(&failures, lines).map_err(|e| HarnessError::io(&failures, e))?;
            Ok(summary(&serde_json::json!({
                "labeled": report.labeled.len(),
                "failures": report.failures.len(),
                "anchor": labeling.anchor_session_id,
                "cost": usage_cost(&report.responses, config.llm.price),
            })))
        }

        Command::Mix(args) => {
            let variant = args.variant.unwrap_or(config.sweep.variant);
            create_out(out)?;
            if args.grid {
                let plans = plan_grid(
                    &config.sweep.budgets_for(variant),
                    &ratio_grid(config.sweep.ratio_step),
                    variant,
                    &config.cost,
                    &config.pools,
                )?;
                let path = out.join("plans.csv");
                write_plans_csv(&plans, File::create(&path).map_err(|e| HarnessError::io(&path, e))?)?;
                let infeasible = plans.iter().filter(|p| !p.feasible).count();
                return Ok(summary(&serde_json::json!({ "plans": plans.len(), "infeasible": infeasible })));
            }
            let budget = args.budget.expect("clap requires budget");
            let ratio = args.ratio.expect("clap requires ratio");
            let mut plan = plan_mixture(budget, ratio, variant, &config.cost)?;
            plan.feasible =
                plan.n_hh <= config.pools.human_human && plan.n_pseudo <= config.pools.of(variant);
            let path = out.join("plan.csv");
            write_plans_csv(
                std::slice::from_ref(&plan),
                File::create(&path).map_err(|e| HarnessError::io(&path, e))?,
            )?;
            if let (Some(hh), Some(pseudo)) = (&args.hh, &args.pseudo) {
                let taxonomy = config.taxonomy()?;
                let hh = Dataset::new(Variant::HumanHuman, read_corpus(hh, Some(&taxonomy))?)?;
                let pseudo = Dataset::new(variant, read_corpus(pseudo, Some(&taxonomy))?)?;
                let mixture = assemble_mixture(&plan, &hh, &pseudo, config.seeds[0])?;
                write_corpus(&mixture.sessions, &out.join("mixture.jsonl"))?;
            }
            Ok(summary(&plan))
        }

        Command::Export { corpus } => {
            let sessions = read_corpus(corpus, Some(&config.taxonomy()?))?;
            let mut rows = Vec::new();
            for s in &sessions {
                rows.extend(to_sequence_records(s, tokenizer.as_ref())?);
            }
            create_out(out)?;
            let stem = corpus.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
            let path = out.join(format!("{stem}.tsv"));
            write_records(&rows, File::create(&path).map_err(|e| HarnessError::io(&path, e))?)
                .map_err(|e| HarnessError::io(&path, e))?;
            Ok(summary(&serde_json::json!({ "sessions": sessions.len(), "records": rows.len(), "path": path })))
        }

        Command::Eval { gold, pred, no_ecr } => {
            let gold = read_corpus(gold, Some(&config.taxonomy()?))?;
            let pred = if pred.extension().is_some_and(|e| e == "tsv") {
                let rows = read_records(File::open(pred).map_err(|e| HarnessError::io(pred, e))?)?;
                let sessions: Vec<_> = gold.iter().map(|g| g.session.clone()).collect();
                from_sequence_records(&rows, &sessions, Source::Pseudo)?
            } else {
                read_corpus(pred, None)?
            };
            let mut options = config.eval.options();
            if *no_ecr {
                options.ecr_allowance = false;
            }
            let report = evaluate(&gold, &pred, &options)?;
            let text = summary(&report);
            create_out(out)?;
            let path = out.join("eval.json");
            std::fs::write(&path, format!("{text}\n")).map_err(|e| HarnessError::io(&path, e))?;
            write_class_csv(&report, &out.join("eval_classes.csv"))?;
            Ok(text)
        }

        Command::Stats { corpus, bucket } => {
            let sessions = read_sessions(corpus)?;
            let lengths = length_stats(&sessions, tokenizer.as_ref(), *bucket)?;
            // label statistics only for labeled corpora
            let labels = match read_corpus(corpus, None) {
                Ok(annotated) => Some(label_distribution(&annotated)?),
                Err(_) => None,
            };
            let text = summary(&serde_json::json!({ "lengths": lengths, "labels": labels }));
            create_out(out)?;
            let path = out.join("stats.json");
            std::fs::write(&path, format!("{text}\n")).map_err(|e| HarnessError::io(&path, e))?;
            Ok(text)
        }

        Command::Sweep {
            hh,
            pseudo,
            valid,
            test,
            augment,
        } => {
            config.sweep.augment |= *augment;
            let taxonomy = config.taxonomy()?;
            let read = |p: &PathBuf| read_corpus(p, Some(&taxonomy));
            let inputs = SweepInputs {
                hh_pool: Dataset::new(Variant::HumanHuman, read(hh)?)?,
                pseudo_pool: Dataset::new(config.sweep.variant, read(pseudo)?)?,
                valid: read(valid)?,
                test: read(test)?,
            };
            let trainer = trainer::from_config(&config.trainer)?;
            let result = run_sweep(&config, &inputs, trainer.as_ref(), &config.seeds, &out.join("sweep"))?;
            let files = emit_report(&result, &config.digest(), &out.join("report"))?;
            Ok(summary(&serde_json::json!({
                "rows": result.rows.len(),
                "aggregates": result.aggregates.len(),
                "infeasible": result.infeasible.len(),
                "report": files.aggregates,
            })))
        }
    }
}
