use std::fs;
use std::path::Path;

use ichain::corpus::{generate as generate_corpus, load_manifest, Corpus, Vocab};
use ichain::{Error, Result};
use sha2::{Digest, Sha256};

use crate::layout::{write_file, RunLayout};
use crate::{config_error, io_error, RunConfig};

#[derive(Debug, Clone)]
pub struct Generated {
    pub utterances: usize,
    /// Contents of the checksum file.
    pub checksums: String,
}

/// Writes the corpus of `config` under the output directory with a
/// checksum line per file. Refuses to touch an existing nonempty corpus
/// unless `force` is set.
pub fn generate(config: &RunConfig, force: bool) -> Result<Generated> {
    config.validate()?;
    let layout = RunLayout::new(&config.output_dir);
    let dir = layout.corpus_dir();
    if is_nonempty(&dir)? {
        if !force {
            return Err(config_error(
                "output_dir",
                format!("{} is not empty; pass --force to overwrite", dir.display()),
            ));
        }
        fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    }
    let corpus = generate_corpus(&config.corpus)?;
    let written = corpus.write(&dir)?;
    let mut lines = Vec::with_capacity(written.len());
    for path in &written {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        let rel = path.strip_prefix(&dir).unwrap_or(path);
        lines.push(format!("{}  {}", hex::encode(Sha256::digest(&bytes)), rel.display()));
    }
    lines.sort_by(|a, b| a[66..].cmp(&b[66..]));
    let mut checksums = lines.join("\n");
    checksums.push('\n');
    write_file(&layout.checksums(), checksums.as_bytes())?;
    write_file(&layout.config(), config.to_toml().as_bytes())?;
    log::info!("wrote {} utterances to {}", corpus.len(), dir.display());
    Ok(Generated {
        utterances: corpus.len(),
        checksums,
    })
}

fn is_nonempty(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(io_error(dir, e)),
    }
}

/// Loads the generated corpus of the run and checks it against the config.
pub fn load_corpus(config: &RunConfig, vocab: &Vocab) -> Result<Corpus> {
    let manifest = RunLayout::new(&config.output_dir).manifest();
    if !manifest.is_file() {
        return Err(config_error(
            "output_dir",
            format!("no corpus at {}; run `generate` first", manifest.display()),
        ));
    }
    let corpus = load_manifest(&manifest, vocab)?;
    let dim = config.corpus.frame_spec.feature_dim;
    if corpus.feature_dim != dim {
        return Err(config_error(
            "corpus.frame_spec.feature_dim",
            format!("is {dim} but the corpus on disk has {}-dim features", corpus.feature_dim),
        ));
    }
    Ok(corpus)
}

/// Rejects a checkpoint trained on another character inventory.
pub fn check_vocab(found: &Vocab, expected: &Vocab, path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::Config {
            field: "corpus.vocabulary".into(),
            message: format!(
                "checkpoint {} was trained on \"{}\", the corpus uses \"{}\"",
                path.display(),
                found.chars().iter().collect::<String>(),
                expected.chars().iter().collect::<String>()
            ),
        });
    }
    Ok(())
}
