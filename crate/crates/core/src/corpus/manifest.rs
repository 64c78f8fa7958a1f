//! On-disk corpus layout.
//!
//! `manifest.jsonl` holds one JSON record per utterance (`id`, `split`,
//! `text`, `features`), ordered by split then id. `features` is a path
//! relative to the manifest's directory pointing at a feature file: two
//! little-endian `u64` values `(S, dim)` followed by `S * dim` little-endian
//! `f64` values in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Split, Utterance, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub text: String,
    pub features: String,
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + features.len() * 8);
    buf.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "{}: header says {rows}x{cols} but file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(rows, cols, data).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn feature_rel_path(id: &str) -> String {
    format!("feats/{id}.feat")
}

impl Corpus {
    /// Canonical manifest records in `(split, id)` order.
    pub fn manifest_records(&self) -> Vec<ManifestRecord> {
        let mut records: Vec<ManifestRecord> = self
            .utterances
            .iter()
            .map(|u| ManifestRecord {
                id: u.id.clone(),
                split: u.split,
                text: self.vocab.decode(&u.text),
                features: feature_rel_path(&u.id),
            })
            .collect();
        records.sort_by(|a, b| (a.split, &a.id).cmp(&(b.split, &b.id)));
        records
    }

    pub fn manifest_text(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.manifest_records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the manifest and one feature file per utterance under `dir`.
    /// Returns the paths written, manifest first.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let feats = dir.join("feats");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        let manifest = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
        f.write_all(self.manifest_text()?.as_bytes())
            .map_err(|e| Error::io(&manifest, e))?;
        let mut written = vec![manifest];
        for u in &self.utterances {
            let p = dir.join(feature_rel_path(&u.id));
            write_features(&p, &u.features)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Loads a manifest; feature paths resolve relative to the manifest's directory.
pub fn load_manifest(path: &Path, vocab: &Vocab) -> Result<Corpus> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut utterances = Vec::new();
    let mut feature_dim = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let text = vocab.encode(&rec.text).map_err(|e| match e {
            Error::UnknownToken { token, position } => Error::UnknownToken {
                token: format!("{token} (utterance {})", rec.id),
                position,
            },
            other => other,
        })?;
        if text.is_empty() {
            return Err(Error::Format(format!("utterance `{}` has empty text", rec.id)));
        }
        let fpath = base.join(&rec.features);
        if !fpath.is_file() {
            return Err(Error::MissingFeatures {
                id: rec.id,
                path: fpath,
            });
        }
        let features = read_features(&fpath)?;
        match feature_dim {
            None => feature_dim = Some(features.cols()),
            Some(d) if d != features.cols() => {
                return Err(Error::Format(format!(
                    "utterance `{}` has feature dim {}, expected {d}",
                    rec.id,
                    features.cols()
                )))
            }
            _ => {}
        }
        utterances.push(Utterance {
            id: rec.id,
            split: rec.split,
            text,
            features,
        });
    }
    let feature_dim =
        feature_dim.ok_or_else(|| Error::Format(format!("{} lists no utterances", path.display())))?;
    let mut corpus = Corpus {
        vocab: vocab.clone(),
        feature_dim,
        utterances,
    };
    corpus.sort();
    Ok(corpus)
}
