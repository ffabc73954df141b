//! Run manifests: everything needed to replay a run, and nothing that varies
//! between replays (no output directory, timestamps or thread counts).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stylo::corpus::read_manifest_rows;

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Loo,
    Nested,
    Both,
}

/// A command with the options that shape its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Job {
    Featurize,
    Train,
    Evaluate { scheme: SchemeChoice },
    Analyze,
    CompareCv { loo: PathBuf, nested: PathBuf },
    DiscourseTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub job: Job,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing input {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Every file the job reads.
pub fn input_files(config: &RunConfig, job: &Job) -> Result<Vec<PathBuf>> {
    let mut files: BTreeSet<PathBuf> = BTreeSet::new();
    let needs_features = !matches!(job, Job::CompareCv { .. } | Job::DiscourseTrain);
    if needs_features {
        if let Some(dir) = &config.matrix {
            for f in ["matrix.tsv", "features.tsv", "rows.tsv"] {
                files.insert(dir.join(f));
            }
        } else if let Some(corpus) = &config.corpus {
            files.insert(corpus.clone());
            let base = corpus.parent().unwrap_or(Path::new("."));
            for row in read_manifest_rows(corpus)? {
                files.insert(base.join(&row.path));
                if let Some(c) = &row.conllu_path {
                    files.insert(base.join(c));
                }
            }
            files.extend(config.lexicons.values().cloned());
            if let Some(p) = config.normalization.as_ref().and_then(|n| n.spelling_map.clone()) {
                files.insert(p);
            }
            if let Some(p) = &config.discourse_model {
                files.insert(p.clone());
            }
        }
    }
    match job {
        Job::CompareCv { loo, nested } => {
            files.insert(loo.clone());
            files.insert(nested.clone());
        }
        Job::DiscourseTrain => {
            files.extend(config.connectives.clone());
            files.extend(config.annotations.clone());
        }
        _ => {}
    }
    Ok(files.into_iter().collect())
}

impl RunManifest {
    pub fn new(config: &RunConfig, job: &Job) -> Result<Self> {
        let mut config = config.clone();
        config.output_dir = None;
        let config_json = serde_json::to_string(&config)?;
        let inputs = input_files(&config, job)?
            .into_iter()
            .map(|path| Ok(InputHash { sha256: hash_file(&path)?, path }))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            job: job.clone(),
            seed: config.seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            config,
            inputs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    /// Fails if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = hash_file(&input.path)?;
            if now != input.sha256 {
                bail!("input {} changed since the recorded run", input.path.display());
            }
        }
        Ok(())
    }
}
