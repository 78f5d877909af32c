//! Workspaces for CLI and acceptance tests.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod gen;

use std::path::{Path, PathBuf};

use framemix_core::corpus::write_corpus;
use framemix_core::{AnnotatedSession, Source};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn sessions(seed: u64, prefix: &str, n: usize, label_source: Source) -> Vec<AnnotatedSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut s = gen::random_session(&mut rng, &format!("{prefix}{i:03}#0"));
            s.label_source = label_source;
            s
        })
        .collect()
}

pub struct SweepFiles {
    pub config: PathBuf,
    pub hh: PathBuf,
    pub pseudo: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

/// HH and HP pools of 20 sessions, 5 valid and 6 test sessions, and a
/// 2 budget × 3 ratio × 2 seed configuration using `trainer`.
pub fn sweep_workspace(dir: &Path, trainer: &str) -> SweepFiles {
    let files = SweepFiles {
        config: dir.join("sweep.toml"),
        hh: dir.join("hh.jsonl"),
        pseudo: dir.join("hp.jsonl"),
        valid: dir.join("valid.jsonl"),
        test: dir.join("test.jsonl"),
    };
    write_corpus(&sessions(11, "hh", 20, Source::Human), &files.hh).unwrap();
    write_corpus(&sessions(12, "hp", 20, Source::Pseudo), &files.pseudo).unwrap();
    write_corpus(&sessions(13, "va", 5, Source::Human), &files.valid).unwrap();
    write_corpus(&sessions(14, "te", 6, Source::Human), &files.test).unwrap();
    std::fs::write(
        &files.config,
        format!(
            "seeds = [1, 2]\n\n[sweep]\nvariant = \"HumanPseudo\"\nbudgets = [\"40\", \"80\"]\nratio_step = 0.5\nparallel = 2\n\n[trainer]\nkind = \"{trainer}\"\n"
        ),
    )
    .unwrap();
    files
}
