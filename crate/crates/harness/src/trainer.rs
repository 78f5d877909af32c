//! The sequence-labeling trainer boundary. A trainer reads record TSVs
//! for train, validation and test and writes predictions for the test
//! set in the same format.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;

use framemix_core::annoparse::{read_records, write_records, BioTag};

use crate::config::{TrainerConfig, TrainerKind};
use crate::HarnessError;

#[derive(Clone, Debug)]
pub struct TrainJob {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub pred: PathBuf,
    /// Set in augment mode: train on this first, then on `train`.
    pub pretrain: Option<PathBuf>,
    pub seed: u64,
    pub workdir: PathBuf,
}

pub trait Trainer: Send + Sync {
    fn run(&self, job: &TrainJob) -> Result<(), HarnessError>;
}

/// Runs an external program built from a placeholder template.
pub struct CommandTrainer {
    template: Vec<String>,
}

impl CommandTrainer {
    pub fn new(template: Vec<String>) -> Result<Self, HarnessError> {
        if template.is_empty() {
            return Err(HarnessError::Config("trainer.command is empty".into()));
        }
        Ok(Self { template })
    }

    pub fn argv(&self, job: &TrainJob) -> Vec<String> {
        let path = |p: &Path| p.display().to_string();
        let pretrain = job.pretrain.as_deref().map(path);
        self.template
            .iter()
            .filter(|arg| pretrain.is_some() || !arg.contains("{pretrain}"))
            .map(|arg| {
                arg.replace("{train}", &path(&job.train))
                    .replace("{valid}", &path(&job.valid))
                    .replace("{test}", &path(&job.test))
                    .replace("{pred}", &path(&job.pred))
                    .replace("{pretrain}", pretrain.as_deref().unwrap_or(""))
                    .replace("{seed}", &job.seed.to_string())
                    .replace("{workdir}", &path(&job.workdir))
            })
            .collect()
    }
}

impl Trainer for CommandTrainer {
    fn run(&self, job: &TrainJob) -> Result<(), HarnessError> {
        let argv = self.argv(job);
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(&job.workdir)
            .output()
            .map_err(|e| HarnessError::TrainerFailed {
                status: format!("could not start {}", argv[0]),
                stderr: e.to_string(),
            })?;
        if !output.status.success() {
            return Err(HarnessError::TrainerFailed {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        if !job.pred.exists() {
            return Err(HarnessError::TrainerFailed {
                status: output.status.to_string(),
                stderr: format!("no predictions written to {}", job.pred.display()),
            });
        }
        Ok(())
    }
}

/// Predicts the gold test labels; every score is 1.
pub struct IdentityTrainer;

impl Trainer for IdentityTrainer {
    fn run(&self, job: &TrainJob) -> Result<(), HarnessError> {
        std::fs::copy(&job.test, &job.pred).map_err(|e| HarnessError::io(&job.pred, e))?;
        Ok(())
    }
}

/// Predicts no entities at all; every score is 0.
pub struct EmptyTrainer;

impl Trainer for EmptyTrainer {
    fn run(&self, job: &TrainJob) -> Result<(), HarnessError> {
        let file = File::open(&job.test).map_err(|e| HarnessError::io(&job.test, e))?;
        let mut rows = read_records(file)?;
        for r in &mut rows {
            r.tag = BioTag::Outside;
            r.entity_id = None;
            r.head_entity_id = None;
            r.relation = None;
        }
        let out = File::create(&job.pred).map_err(|e| HarnessError::io(&job.pred, e))?;
        write_records(&rows, out).map_err(|e| HarnessError::io(&job.pred, e))
    }
}

pub fn from_config(config: &TrainerConfig) -> Result<Box<dyn Trainer>, HarnessError> {
    Ok(match config.kind {
        TrainerKind::Command => Box::new(CommandTrainer::new(config.command.clone())?),
        TrainerKind::Identity => Box::new(IdentityTrainer),
        TrainerKind::Empty => Box::new(EmptyTrainer),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(pretrain: bool) -> TrainJob {
        TrainJob {
            train: "/w/train.tsv".into(),
            valid: "/w/valid.tsv".into(),
            test: "/w/test.tsv".into(),
            pred: "/w/pred.tsv".into(),
            pretrain: pretrain.then(|| "/w/pre.tsv".into()),
            seed: 3,
            workdir: "/w".into(),
        }
    }

    #[test]
    fn placeholders_are_substituted() {
        let t = CommandTrainer::new(
            ["train.py", "--train={train}", "--pretrain={pretrain}", "--seed", "{seed}", "-o", "{pred}"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap();
        assert_eq!(
            t.argv(&job(true)),
            ["train.py", "--train=/w/train.tsv", "--pretrain=/w/pre.tsv", "--seed", "3", "-o", "/w/pred.tsv"]
        );
        assert_eq!(
            t.argv(&job(false)),
            ["train.py", "--train=/w/train.tsv", "--seed", "3", "-o", "/w/pred.tsv"]
        );
    }

    #[test]
    fn failing_command_reports_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let mut j = job(false);
        j.workdir = dir.path().to_path_buf();
        let t = CommandTrainer::new(["sh", "-c", "echo boom >&2; exit 3"].map(String::from).to_vec()).unwrap();
        match t.run(&j) {
            Err(HarnessError::TrainerFailed { stderr, .. }) => assert_eq!(stderr.trim(), "boom"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
