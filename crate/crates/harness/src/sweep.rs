//! Budget × ratio × seed sweeps. Every finished row is appended to a
//! checkpoint, so an interrupted sweep resumes where it stopped and ends
//! with the same result as an uninterrupted one.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use framemix_core::annoparse::{from_sequence_records, read_records, to_sequence_records, write_records};
use framemix_core::budget::{assemble_mixture, plan_grid, ratio_grid, MixturePlan, PoolSizes};
use framemix_core::evaluation::evaluate;
use framemix_core::tokenize::Tokenizer;
use framemix_core::{AnnotatedSession, Dataset, DialogueSession, Money, Source, Variant};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::trainer::{TrainJob, Trainer};
use crate::HarnessError;

pub struct SweepInputs {
    pub hh_pool: Dataset,
    /// Human-pseudo or pseudo-pseudo, matching the sweep variant.
    pub pseudo_pool: Dataset,
    pub valid: Vec<AnnotatedSession>,
    pub test: Vec<AnnotatedSession>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: Money,
    pub ratio: f64,
    pub variant: Variant,
    pub seed: u64,
    pub n_hh: u64,
    pub n_pseudo: u64,
    pub realized_cost: Money,
    pub trigger_f1: f64,
    pub argument_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub budget: Money,
    pub ratio: f64,
    pub variant: Variant,
    pub n_seeds: usize,
    pub mean_trigger_f1: f64,
    pub std_trigger_f1: f64,
    pub mean_argument_f1: f64,
    pub std_argument_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Plan order (budget-major), then seed order.
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
    /// Plans skipped because a pool is too small.
    pub infeasible: Vec<MixturePlan>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation (n−1; 0 for a single seed) per
/// (budget, ratio, variant), in first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<Aggregate> {
    let mut order: Vec<(Money, u64, Variant)> = Vec::new();
    let mut groups: HashMap<(Money, u64, Variant), Vec<&SweepRow>> = HashMap::new();
    for r in rows {
        let key = (r.budget, r.ratio.to_bits(), r.variant);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let (mean_t, std_t) = mean_std(&g.iter().map(|r| r.trigger_f1).collect::<Vec<_>>());
            let (mean_a, std_a) = mean_std(&g.iter().map(|r| r.argument_f1).collect::<Vec<_>>());
            Aggregate {
                budget: key.0,
                ratio: f64::from_bits(key.1),
                variant: key.2,
                n_seeds: g.len(),
                mean_trigger_f1: mean_t,
                std_trigger_f1: std_t,
                mean_argument_f1: mean_a,
                std_argument_f1: std_a,
            }
        })
        .collect()
}

fn row_key(plan: &MixturePlan, seed: u64) -> String {
    format!(
        "{}_{}_{:.2}_s{seed}",
        plan.pseudo_variant.short_name(),
        plan.budget,
        plan.hh_ratio
    )
}

fn write_tsv(sessions: &[AnnotatedSession], tokenizer: &dyn Tokenizer, path: &Path) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for s in sessions {
        rows.extend(to_sequence_records(s, tokenizer)?);
    }
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_records(&rows, file).map_err(|e| HarnessError::io(path, e))
}

fn load_checkpoint(path: &Path) -> Result<HashMap<String, SweepRow>, HarnessError> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        #[derive(Deserialize)]
        struct Entry {
            key: String,
            row: SweepRow,
        }
        let e: Entry = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Validation(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        done.insert(e.key, e.row);
    }
    Ok(done)
}

struct Context<'a> {
    inputs: &'a SweepInputs,
    test_sessions: Vec<DialogueSession>,
    trainer: &'a dyn Trainer,
    tokenizer: &'a dyn Tokenizer,
    config: &'a Config,
    valid: PathBuf,
    test: PathBuf,
    pretrain: Option<PathBuf>,
    runs: PathBuf,
}

impl Context<'_> {
    fn run_one(&self, plan: &MixturePlan, seed: u64, key: &str) -> Result<SweepRow, HarnessError> {
        let dir = self.runs.join(key);
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let mixture = assemble_mixture(plan, &self.inputs.hh_pool, &self.inputs.pseudo_pool, seed)?;
        let job = TrainJob {
            train: dir.join("train.tsv"),
            valid: self.valid.clone(),
            test: self.test.clone(),
            pred: dir.join("pred.tsv"),
            pretrain: self.pretrain.clone(),
            seed,
            workdir: dir.clone(),
        };
        write_tsv(&mixture.sessions, self.tokenizer, &job.train)?;
        let _ = std::fs::remove_file(&job.pred);
        self.trainer.run(&job)?;

        let file = File::open(&job.pred).map_err(|e| HarnessError::io(&job.pred, e))?;
        let records = read_records(file)?;
        let predicted = from_sequence_records(&records, &self.test_sessions, Source::Pseudo)?;
        let report = evaluate(&self.inputs.test, &predicted, &self.config.eval.options())?;
        Ok(SweepRow {
            budget: plan.budget,
            ratio: plan.hh_ratio,
            variant: plan.pseudo_variant,
            seed,
            n_hh: plan.n_hh,
            n_pseudo: plan.n_pseudo,
            realized_cost: plan.realized_cost,
            trigger_f1: report.trigger_weighted_f1,
            argument_f1: report.argument_weighted_f1,
        })
    }
}

/// Runs every feasible plan once per seed under `workdir`.
///
/// In augment mode the ratio grid collapses to 1.0 and the whole pseudo
/// pool is exported as a pretraining file handed to every trainer run.
pub fn run_sweep(
    config: &Config,
    inputs: &SweepInputs,
    trainer: &dyn Trainer,
    seeds: &[u64],
    workdir: &Path,
) -> Result<SweepResult, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Validation("no seeds given".into()));
    }
    let variant = config.sweep.variant;
    if inputs.hh_pool.variant != Variant::HumanHuman || inputs.pseudo_pool.variant != variant {
        return Err(HarnessError::Validation(format!(
            "sweep needs a HH pool and a {} pool, got {} and {}",
            variant.short_name(),
            inputs.hh_pool.variant.short_name(),
            inputs.pseudo_pool.variant.short_name()
        )));
    }
    let ratios = if config.sweep.augment {
        vec![1.0]
    } else {
        ratio_grid(config.sweep.ratio_step)
    };
    let pools = PoolSizes {
        human_human: inputs.hh_pool.len() as u64,
        human_pseudo: if variant == Variant::HumanPseudo { inputs.pseudo_pool.len() as u64 } else { 0 },
        pseudo_pseudo: if variant == Variant::PseudoPseudo { inputs.pseudo_pool.len() as u64 } else { 0 },
    };
    let plans = plan_grid(&config.sweep.budgets(), &ratios, variant, &config.cost, &pools)?;

    std::fs::create_dir_all(workdir).map_err(|e| HarnessError::io(workdir, e))?;
    let tokenizer = config.tokenizer.build();
    let ctx = Context {
        inputs,
        test_sessions: inputs.test.iter().map(|s| s.session.clone()).collect(),
        trainer,
        tokenizer: tokenizer.as_ref(),
        config,
        valid: workdir.join("valid.tsv"),
        test: workdir.join("test.tsv"),
        pretrain: config.sweep.augment.then(|| workdir.join("pretrain.tsv")),
        runs: workdir.join("runs"),
    };
    write_tsv(&inputs.valid, ctx.tokenizer, &ctx.valid)?;
    write_tsv(&inputs.test, ctx.tokenizer, &ctx.test)?;
    if let Some(p) = &ctx.pretrain {
        write_tsv(&inputs.pseudo_pool.sessions, ctx.tokenizer, p)?;
    }

    let checkpoint = workdir.join("checkpoint.jsonl");
    let done = load_checkpoint(&checkpoint)?;
    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&checkpoint)
            .map_err(|e| HarnessError::io(&checkpoint, e))?,
    );

    let (feasible, infeasible): (Vec<MixturePlan>, Vec<MixturePlan>) = plans.into_iter().partition(|p| p.feasible);
    let jobs: Vec<(usize, &MixturePlan, u64, String)> = feasible
        .iter()
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .enumerate()
        .map(|(i, (p, s))| (i, p, s, row_key(p, s)))
        .collect();
    let pending: Vec<&(usize, &MixturePlan, u64, String)> = jobs.iter().filter(|j| !done.contains_key(&j.3)).collect();

    let finished = Mutex::new(done);
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.sweep.parallel.clamp(1, pending.len().max(1)) {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let Some(&&(_, plan, seed, ref key)) = pending.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    break;
                };
                let outcome = ctx.run_one(plan, seed, key).and_then(|row| {
                    let line = serde_json::json!({ "key": key, "row": row }).to_string();
                    let mut f = sink.lock().unwrap();
                    writeln!(f, "{line}")
                        .and_then(|_| f.flush())
                        .map_err(|e| HarnessError::io(&checkpoint, e))?;
                    finished.lock().unwrap().insert(key.clone(), row);
                    Ok(())
                });
                if let Err(e) = outcome {
                    failed.store(true, Ordering::SeqCst);
                    first_error.lock().unwrap().get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let finished = finished.into_inner().unwrap();
    let rows: Vec<SweepRow> = jobs.iter().map(|j| finished[&j.3].clone()).collect();
    Ok(SweepResult {
        aggregates: aggregate(&rows),
        rows,
        infeasible,
    })
}
