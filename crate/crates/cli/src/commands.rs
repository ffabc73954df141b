use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stylo::analysis::{
    coefficients_csv, pearson_stats, rank_coefficients, selections_by_family, stability_selection, stats_csv, vocab_csv,
    vocab_report,
};
use stylo::corpus::{load_manifest, NormalizationRules};
use stylo::discourse::{load_annotations, ConnectiveLexicon, DiscourseAnnotator, DiscourseTask};
use stylo::evaluation::{
    compare_cv, differences_csv, loo_eval, nested_eval, predictions_csv, CvComparison, EvalReport,
};
use stylo::features::{featurize, Extractors, FeatureFamily, FeatureMatrix};
use stylo::lexicon::load_lexicon;
use stylo::logreg::{self, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::{Job, RunManifest, SchemeChoice};

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    write(dir, name, serde_json::to_string_pretty(value)? + "\n")
}

fn extractors(config: &RunConfig) -> Result<Extractors> {
    let mut ex = Extractors {
        pronoun_layer: config.pronoun_layer,
        sentence_bounded_ngrams: config.sentence_bounded_ngrams,
        ..Default::default()
    };
    for (&kind, path) in &config.lexicons {
        ex = ex.with_lexicon(load_lexicon(path, kind).with_context(|| format!("loading {kind} lexicon"))?);
    }
    if let Some(path) = &config.discourse_model {
        ex.discourse = Some(
            DiscourseAnnotator::load(path)
                .with_context(|| format!("loading discourse model {}", path.display()))?,
        );
    }
    Ok(ex)
}

/// The configured feature matrix: read from a matrix directory, or built from
/// the corpus.
pub fn load_matrix(config: &RunConfig) -> Result<FeatureMatrix> {
    let families = config.family_set()?;
    let matrix = if let Some(dir) = &config.matrix {
        let m = FeatureMatrix::read(dir).with_context(|| format!("reading matrix {}", dir.display()))?;
        let wanted: Vec<FeatureFamily> = families.iter().copied().collect();
        m.select_families(&wanted)?
    } else {
        let path = config
            .corpus
            .as_deref()
            .context("no input: set corpus or matrix in the config, or pass --corpus/--matrix")?;
        let mut corpus = load_manifest(path).with_context(|| format!("loading corpus {}", path.display()))?;
        if let Some(n) = &config.normalization {
            let map = match &n.spelling_map {
                Some(p) => NormalizationRules::load_spelling_map(p)?,
                None => Default::default(),
            };
            corpus.normalize(&NormalizationRules::new(map, n.strip_chars.chars(), n.abbreviations.clone())?);
        }
        featurize(&corpus, &families, &extractors(config)?)?
    };
    log::info!("matrix: {} documents × {} features", matrix.n_rows(), matrix.n_features());
    Ok(matrix)
}

fn train_config(config: &RunConfig) -> TrainConfig {
    let mut cfg = TrainConfig::new(config.train.penalty, config.train.c);
    cfg.seed = config.seed;
    cfg
}

fn featurize_job(config: &RunConfig, out: &Path) -> Result<()> {
    let matrix = load_matrix(config)?;
    matrix.write(&out.join("matrix"))?;
    Ok(())
}

fn train_job(config: &RunConfig, out: &Path) -> Result<()> {
    let matrix = load_matrix(config)?;
    let model = logreg::train(&matrix, &train_config(config))?;
    write(out, "model.json", model.to_json(matrix.space())? + "\n")
}

#[derive(Serialize)]
struct SchemeSummary {
    mean_accuracy: f64,
    std_accuracy: f64,
    per_trial_accuracy: Vec<f64>,
    skipped_folds: usize,
}

impl From<&EvalReport> for SchemeSummary {
    fn from(r: &EvalReport) -> Self {
        SchemeSummary {
            mean_accuracy: r.mean_accuracy,
            std_accuracy: r.std_accuracy,
            per_trial_accuracy: r.per_trial_accuracy.clone(),
            skipped_folds: r.skipped_folds,
        }
    }
}

#[derive(Serialize)]
struct EvalSummary {
    documents: usize,
    matrix_fingerprint: String,
    schemes: BTreeMap<String, SchemeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<ComparisonSummary>,
}

#[derive(Serialize)]
struct ComparisonSummary {
    mean_difference: f64,
    positive_trials: usize,
    negative_trials: usize,
    zero_trials: usize,
    sign_test_p: f64,
}

impl From<&CvComparison> for ComparisonSummary {
    fn from(c: &CvComparison) -> Self {
        ComparisonSummary {
            mean_difference: c.mean_difference,
            positive_trials: c.positive_trials,
            negative_trials: c.negative_trials,
            zero_trials: c.zero_trials,
            sign_test_p: c.sign_test_p,
        }
    }
}

fn evaluate_job(config: &RunConfig, scheme: SchemeChoice, out: &Path) -> Result<()> {
    let matrix = load_matrix(config)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    if matches!(scheme, SchemeChoice::Loo | SchemeChoice::Both) {
        let r = loo_eval(&matrix, &config.cv)?;
        write_json(out, "loo_report.json", &r)?;
        reports.push(r);
    }
    if matches!(scheme, SchemeChoice::Nested | SchemeChoice::Both) {
        let r = nested_eval(&matrix, &config.cv)?;
        write_json(out, "nested_report.json", &r)?;
        reports.push(r);
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    write(out, "predictions.csv", predictions_csv(&refs))?;
    let comparison = match reports.as_slice() {
        [loo, nested] => {
            let cmp = compare_cv(loo, nested)?;
            write(out, "differences.csv", differences_csv(&cmp))?;
            Some(ComparisonSummary::from(&cmp))
        }
        _ => None,
    };
    let summary = EvalSummary {
        documents: matrix.n_rows(),
        matrix_fingerprint: format!("{:016x}", matrix.fingerprint()),
        schemes: reports.iter().map(|r| (r.scheme.to_string(), SchemeSummary::from(r))).collect(),
        comparison,
    };
    write_json(out, "summary.json", &summary)
}

fn analyze_job(config: &RunConfig, out: &Path) -> Result<()> {
    let matrix = load_matrix(config)?;
    let space = matrix.space();
    let mut stats = pearson_stats(&matrix, &[], config.correlation)?;

    let stability_families: Vec<FeatureFamily> = if config.stability_families.is_empty() {
        space
            .families()
            .into_iter()
            .filter(|f| matches!(f, FeatureFamily::Unigram | FeatureFamily::Ngram23 | FeatureFamily::Treelet))
            .collect()
    } else {
        config.stability_families.clone()
    };
    let mut selected_counts = BTreeMap::new();
    if !stability_families.is_empty() {
        let sub = matrix.select_families(&stability_families)?;
        let result = stability_selection(&sub, &config.stability)?;
        let freq: BTreeMap<&str, f64> = sub
            .space()
            .names()
            .iter()
            .map(String::as_str)
            .zip(result.frequencies.iter().copied())
            .collect();
        for s in &mut stats {
            s.stability_freq = freq.get(s.feature.as_str()).copied();
        }
        selected_counts = selections_by_family(sub.space(), &result.selected);
        // Families that were run but kept nothing still report a count.
        for f in &stability_families {
            selected_counts.entry(*f).or_insert(0);
        }
    }

    let model = logreg::train(&matrix, &train_config(config))?;
    for s in &mut stats {
        let j = space.index_of(&s.feature).expect("stats come from this space");
        s.coefficient = Some(model.weight(j));
    }
    stats.sort_by(|a, b| {
        b.rho
            .abs()
            .total_cmp(&a.rho.abs())
            .then_with(|| a.feature.cmp(&b.feature))
    });
    write(out, "stats.csv", stats_csv(&stats))?;
    write(out, "vocab.csv", vocab_csv(&vocab_report(space, &selected_counts)))?;
    write(out, "coefficients.csv", coefficients_csv(&rank_coefficients(&model, space)?))
}

fn compare_job(loo: &Path, nested: &Path, out: &Path) -> Result<()> {
    let read = |p: &Path| -> Result<EvalReport> {
        let text = fs::read_to_string(p).with_context(|| format!("reading report {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", p.display()))
    };
    let cmp = compare_cv(&read(loo)?, &read(nested)?)?;
    write(out, "differences.csv", differences_csv(&cmp))?;
    write_json(out, "comparison.json", &ComparisonSummary::from(&cmp))
}

#[derive(Serialize)]
struct DiscourseSummary {
    candidates: usize,
    training_accuracy: BTreeMap<String, f64>,
}

fn discourse_job(config: &RunConfig, out: &Path) -> Result<()> {
    let connectives = config.connectives.as_deref().context("discourse-train needs a connective list")?;
    let annotations = config.annotations.as_deref().context("discourse-train needs an annotation file")?;
    let lexicon = ConnectiveLexicon::load(connectives)?;
    let annotated = load_annotations(annotations)?;
    let annotator = DiscourseAnnotator::train(lexicon, &annotated, &config.discourse)?;
    write(out, "discourse-model.json", annotator.to_json()? + "\n")?;
    let mut acc = BTreeMap::new();
    for (task, model) in [
        (DiscourseTask::Connective, &annotator.connective),
        (DiscourseTask::Lvl1, &annotator.lvl1),
        (DiscourseTask::Lvl2, &annotator.lvl2),
    ] {
        acc.insert(task.to_string(), model.accuracy(&annotated)?);
    }
    write_json(
        out,
        "discourse-summary.json",
        &DiscourseSummary {
            candidates: annotated.len(),
            training_accuracy: acc,
        },
    )
}

/// Runs `job` and writes its outputs plus a run manifest into `out`.
pub fn execute(config: &RunConfig, job: &Job, out: &Path) -> Result<()> {
    config.cv.validate()?;
    config.stability.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let manifest = RunManifest::new(config, job)?;
    match job {
        Job::Featurize => featurize_job(config, out)?,
        Job::Train => train_job(config, out)?,
        Job::Evaluate { scheme } => evaluate_job(config, *scheme, out)?,
        Job::Analyze => analyze_job(config, out)?,
        Job::CompareCv { loo, nested } => compare_job(loo, nested, out)?,
        Job::DiscourseTrain => discourse_job(config, out)?,
    }
    manifest.write(out)?;
    log::info!("outputs written to {}", out.display());
    Ok(())
}

/// Re-executes a recorded run into `out` after checking its inputs.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.tool_version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by version {}, replaying with {}",
            manifest.tool_version,
            env!("CARGO_PKG_VERSION")
        );
    }
    manifest.verify_inputs()?;
    if out.join(crate::manifest::MANIFEST_FILE).exists()
        && fs::canonicalize(out)? == fs::canonicalize(manifest_path.parent().unwrap_or(Path::new(".")))?
    {
        bail!("refusing to replay into the directory of the recorded run");
    }
    execute(&manifest.config, &manifest.job, out)
}
