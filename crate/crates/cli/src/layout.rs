//! Where each command reads and writes inside the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use ichain::trainer::{Intermediate, TrainMode};
use ichain::Result;
use serde::{Deserialize, Serialize};

use crate::io_error;

/// Training history a model comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Regime {
    /// Stage one only.
    Independent,
    ChainGreedy,
    ChainTeacherForcing,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Independent, Regime::ChainGreedy, Regime::ChainTeacherForcing];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Independent => "independent",
            Regime::ChainGreedy => "chain_greedy",
            Regime::ChainTeacherForcing => "chain_teacher_forcing",
        }
    }

    pub fn chain(intermediate: Intermediate) -> Self {
        match intermediate {
            Intermediate::TeacherForcing => Regime::ChainTeacherForcing,
            Intermediate::Greedy => Regime::ChainGreedy,
        }
    }
}

pub fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Nonincremental => "nonincremental",
        TrainMode::Incremental => "incremental",
    }
}

pub fn intermediate_name(intermediate: Intermediate) -> &'static str {
    match intermediate {
        Intermediate::TeacherForcing => "teacher_forcing",
        Intermediate::Greedy => "greedy",
    }
}

/// Checkpoint stem of the recognizer or synthesizer of `mode` after `regime`.
pub fn model_stem(recognizer: bool, mode: TrainMode, regime: Regime) -> String {
    let base = match (recognizer, mode) {
        (true, TrainMode::Nonincremental) => "asr",
        (true, TrainMode::Incremental) => "isr",
        (false, TrainMode::Nonincremental) => "tts",
        (false, TrainMode::Incremental) => "itts",
    };
    match regime {
        Regime::Independent => base.to_string(),
        Regime::ChainGreedy => format!("{base}-chain-greedy"),
        Regime::ChainTeacherForcing => format!("{base}-chain-teacher_forcing"),
    }
}

#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus_dir().join(ichain::corpus::MANIFEST_FILE)
    }

    pub fn checksums(&self) -> PathBuf {
        self.corpus_dir().join("checksums.sha256")
    }

    pub fn checkpoint(&self, stem: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{stem}.ckpt"))
    }

    pub fn session(&self, run: &str) -> PathBuf {
        self.root.join("state").join(format!("{run}.session"))
    }

    pub fn records(&self, run: &str) -> PathBuf {
        self.root.join("records").join(format!("{run}.jsonl"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn eval(&self, id: &str) -> PathBuf {
        self.eval_dir().join(format!("{id}.json"))
    }

    pub fn alignments(&self, split: &str) -> PathBuf {
        self.root.join("alignments").join(format!("{split}.jsonl"))
    }

    pub fn stream(&self, name: &str) -> PathBuf {
        self.root.join("streams").join(format!("{name}.jsonl"))
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

/// Writes `bytes` to `path`, creating parent directories. The file is
/// written under a temporary name and renamed, so an interrupted write
/// never leaves a truncated file behind.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_stems_name_mode_and_regime() {
        assert_eq!(model_stem(true, TrainMode::Nonincremental, Regime::Independent), "asr");
        assert_eq!(
            model_stem(false, TrainMode::Incremental, Regime::ChainTeacherForcing),
            "itts-chain-teacher_forcing"
        );
        assert_eq!(model_stem(true, TrainMode::Incremental, Regime::ChainGreedy), "isr-chain-greedy");
    }

    #[test]
    fn write_file_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_file(&p, b"x").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x");
        assert!(!dir.path().join("a/b/c.txt.tmp").exists());
    }
}
