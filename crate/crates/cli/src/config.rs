//! Run configuration: one JSON file, relative paths resolved against its
//! directory, then command-line overrides applied on top.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stylo::analysis::{CorrelationMode, StabilityConfig};
use stylo::discourse::DiscourseTrainConfig;
use stylo::evaluation::CVConfig;
use stylo::features::FeatureFamily;
use stylo::lexicon::{LexiconKind, PronounLayer};
use stylo::logreg::Penalty;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub spelling_map: Option<PathBuf>,
    pub strip_chars: String,
    pub abbreviations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub penalty: Penalty,
    pub c: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            penalty: Penalty::L2,
            c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus manifest (JSON lines).
    pub corpus: Option<PathBuf>,
    /// A matrix directory written by `featurize`, used instead of the corpus.
    pub matrix: Option<PathBuf>,
    pub lexicons: BTreeMap<LexiconKind, PathBuf>,
    pub pronoun_layer: PronounLayer,
    pub normalization: Option<NormalizationConfig>,
    pub families: Vec<FeatureFamily>,
    pub sentence_bounded_ngrams: bool,
    /// Trained discourse annotator used by the discourse families.
    pub discourse_model: Option<PathBuf>,
    /// Inputs of `discourse-train`.
    pub connectives: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub discourse: DiscourseTrainConfig,
    pub train: TrainSettings,
    pub cv: CVConfig,
    pub stability: StabilityConfig,
    /// Families stability selection runs on; the open-vocabulary families
    /// present in the matrix when empty.
    pub stability_families: Vec<FeatureFamily>,
    pub correlation: CorrelationMode,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            matrix: None,
            lexicons: BTreeMap::new(),
            pronoun_layer: PronounLayer::default(),
            normalization: None,
            families: vec![FeatureFamily::Unigram],
            sentence_bounded_ngrams: false,
            discourse_model: None,
            connectives: None,
            annotations: None,
            discourse: DiscourseTrainConfig::default(),
            train: TrainSettings::default(),
            cv: CVConfig::default(),
            stability: StabilityConfig::default(),
            stability_families: Vec::new(),
            correlation: CorrelationMode::default(),
            output_dir: None,
            seed: 0,
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .canonicalize()
            .with_context(|| format!("resolving the directory of {}", path.display()))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Makes every path absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.matrix,
            &mut self.discourse_model,
            &mut self.connectives,
            &mut self.annotations,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            absolutize(base, p);
        }
        for p in self.lexicons.values_mut() {
            absolutize(base, p);
        }
        if let Some(p) = self.normalization.as_mut().and_then(|n| n.spelling_map.as_mut()) {
            absolutize(base, p);
        }
    }

    /// Pushes the global seed into every seeded component.
    pub fn apply_seed(&mut self) {
        self.cv.seed = self.seed;
        self.stability.seed = self.seed;
        self.discourse.seed = self.seed;
    }

    pub fn family_set(&self) -> Result<BTreeSet<FeatureFamily>> {
        if self.families.is_empty() {
            bail!("at least one feature family must be active");
        }
        Ok(self.families.iter().copied().collect())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .context("no output directory: set output_dir in the config or pass --output-dir")
    }
}
