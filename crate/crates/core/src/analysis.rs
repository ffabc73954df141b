//! Per-feature statistics: point-biserial correlation with the label,
//! stability selection, coefficient ranking and vocabulary-size tables.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::features::{FeatureFamily, FeatureMatrix, FeatureSpace};
use crate::logreg::{self, LogRegModel, Penalty, Problem, TrainConfig};
use crate::par;
use crate::seed;

/// Which per-document value is correlated with the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Count divided by document token count.
    #[default]
    RelativeFrequency,
    RawCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub family: FeatureFamily,
    pub feature: String,
    pub rho: f64,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    pub stability_freq: Option<f64>,
    pub coefficient: Option<f64>,
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Two-sided p-value of a sample correlation `r` over `n` points.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n < 3 || r == 0.0 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

fn column_values(x: &FeatureMatrix, mode: CorrelationMode) -> Vec<Vec<(usize, f64)>> {
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); x.n_features()];
    for (r, row) in x.rows().iter().enumerate() {
        let scale = match mode {
            CorrelationMode::RawCount => 1.0,
            CorrelationMode::RelativeFrequency => match x.lengths()[r] {
                0 => 0.0,
                len => 1.0 / len as f64,
            },
        };
        for &(j, v) in row.entries() {
            columns[j].push((r, v * scale));
        }
    }
    columns
}

/// Correlation of every feature in `families` (all features when empty) with
/// the fraud label. The Bonferroni family is the set of features tested.
pub fn pearson_stats(
    x: &FeatureMatrix,
    families: &[FeatureFamily],
    mode: CorrelationMode,
) -> Result<Vec<FeatureStats>> {
    let n = x.n_rows();
    if n < 3 {
        return Err(Error::Validation(format!("correlation needs at least 3 documents, got {n}")));
    }
    let pos = x.labels().iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == n {
        return Err(Error::Validation("correlation needs both classes".into()));
    }
    let space = x.space();
    let tested: Vec<usize> = (0..space.len())
        .filter(|&j| families.is_empty() || families.contains(&space.category_of(j)))
        .collect();
    let y: Vec<f64> = x.labels().iter().map(|l| f64::from(l.as_int())).collect();
    let columns = column_values(x, mode);
    let m = tested.len() as f64;
    let stats = par::map_slice(&tested, |&j| {
        let mut dense = vec![0.0; n];
        for &(r, v) in &columns[j] {
            dense[r] = v;
        }
        let rho = pearson(&dense, &y);
        let p_raw = correlation_p_value(rho, n);
        FeatureStats {
            family: space.category_of(j),
            feature: space.name(j).to_string(),
            rho,
            p_raw,
            p_bonferroni: (p_raw * m).min(1.0),
            stability_freq: None,
            coefficient: None,
        }
    });
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub resamples: usize,
    pub subsample_fraction: f64,
    /// Factor applied to a random subset of columns in each resample.
    pub weight_rescale: f64,
    /// Probability that a column is rescaled.
    pub rescale_probability: f64,
    pub threshold: f64,
    /// Inverse ℓ1 strength of the per-resample fit.
    pub c: f64,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            resamples: 200,
            subsample_fraction: 0.75,
            weight_rescale: 0.5,
            rescale_probability: 0.5,
            threshold: 0.5,
            c: 1.0,
            seed: 0,
            tolerance: TrainConfig::DEFAULT_TOLERANCE,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.resamples == 0 {
            return bad("resamples must be ≥ 1".into());
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad(format!("subsample_fraction {} not in (0, 1]", self.subsample_fraction));
        }
        if !(self.weight_rescale > 0.0 && self.weight_rescale <= 1.0) {
            return bad(format!("weight_rescale {} not in (0, 1]", self.weight_rescale));
        }
        if !(0.0..=1.0).contains(&self.rescale_probability) {
            return bad(format!("rescale_probability {} not in [0, 1]", self.rescale_probability));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} not in (0, 1)", self.threshold));
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(Penalty::L1, self.c);
        cfg.tolerance = self.tolerance;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    /// Selection frequency per feature index.
    pub frequencies: Vec<f64>,
    /// Indices with frequency strictly above the threshold, ascending.
    pub selected: Vec<usize>,
    /// Resamples whose subsample held a single class.
    pub skipped: usize,
}

/// Features whose frequency exceeds `threshold`.
pub fn select_at(frequencies: &[f64], threshold: f64) -> Vec<usize> {
    (0..frequencies.len()).filter(|&j| frequencies[j] > threshold).collect()
}

/// Randomized ℓ1 logistic regression over row subsamples.
pub fn stability_selection(x: &FeatureMatrix, cfg: &StabilityConfig) -> Result<StabilityResult> {
    cfg.validate()?;
    let n = x.n_rows();
    let pos = x.labels().iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == n {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    let draw = ((cfg.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let train_cfg = cfg.train_config();
    let dim = x.n_features();

    let runs: Vec<Result<Option<Vec<usize>>>> = par::map_range(cfg.resamples, |r| {
        let mut rng = seed::rng(cfg.seed, "stability", &[r as u64]);
        let mut rows = index::sample(&mut rng, n, draw).into_vec();
        rows.sort_unstable();
        let scale: Vec<f64> = (0..dim)
            .map(|_| {
                if rng.gen_bool(cfg.rescale_probability) {
                    cfg.weight_rescale
                } else {
                    1.0
                }
            })
            .collect();
        let sub_pos = rows.iter().filter(|&&i| x.labels()[i].is_positive()).count();
        if sub_pos == 0 || sub_pos == rows.len() {
            log::warn!("stability resample {r}: single-class subsample; skipped");
            return Ok(None);
        }
        let problem = Problem::from_rows(x, &rows, Some(&scale))?;
        let (model, _) = logreg::solve(&problem, &train_cfg, None, None)?;
        Ok(Some(model.weights().iter().map(|&(j, _)| j).collect()))
    });

    let mut counts = vec![0usize; dim];
    let mut skipped = 0;
    for run in runs {
        match run? {
            Some(nonzero) => nonzero.into_iter().for_each(|j| counts[j] += 1),
            None => skipped += 1,
        }
    }
    let used = cfg.resamples - skipped;
    if used == 0 {
        return Err(Error::Training("every stability resample had a single class".into()));
    }
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / used as f64).collect();
    Ok(StabilityResult {
        selected: select_at(&frequencies, cfg.threshold),
        frequencies,
        skipped,
    })
}

/// Nonzero weights by descending magnitude, ties broken by name.
pub fn rank_coefficients(model: &LogRegModel, space: &FeatureSpace) -> Result<Vec<(String, f64)>> {
    if model.space_id() != space.id() {
        return Err(Error::SpaceMismatch {
            expected: space.id(),
            found: model.space_id(),
        });
    }
    let mut ranked: Vec<(String, f64)> = model
        .weights()
        .iter()
        .map(|&(j, w)| (space.name(j).to_string(), w))
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRow {
    pub family: FeatureFamily,
    pub original: usize,
    /// `None` where stability selection was not run on the family.
    pub selected: Option<usize>,
}

/// One row per family present in `space`.
pub fn vocab_report(space: &FeatureSpace, selections: &BTreeMap<FeatureFamily, usize>) -> Vec<VocabRow> {
    space
        .families()
        .into_iter()
        .map(|family| VocabRow {
            family,
            original: space.family_size(family),
            selected: selections.get(&family).copied(),
        })
        .collect()
}

/// Selected-feature counts per family.
pub fn selections_by_family(space: &FeatureSpace, selected: &[usize]) -> BTreeMap<FeatureFamily, usize> {
    let mut out = BTreeMap::new();
    for &j in selected {
        *out.entry(space.category_of(j)).or_insert(0) += 1;
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to memory cannot fail.
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of utf-8 fields")
}

/// `family,feature,rho,p_raw,p_bonferroni,stability_freq,coefficient` rows.
pub fn stats_csv(stats: &[FeatureStats]) -> String {
    csv_string(
        &["family", "feature", "rho", "p_raw", "p_bonferroni", "stability_freq", "coefficient"],
        stats.iter().map(|s| {
            vec![
                s.family.to_string(),
                s.feature.clone(),
                s.rho.to_string(),
                s.p_raw.to_string(),
                s.p_bonferroni.to_string(),
                opt(s.stability_freq),
                opt(s.coefficient),
            ]
        }),
    )
}

/// `feature,weight` rows, in the order given.
pub fn coefficients_csv(ranked: &[(String, f64)]) -> String {
    csv_string(&["feature", "weight"], ranked.iter().map(|(f, w)| vec![f.clone(), w.to_string()]))
}

/// `family,original,selected` rows with `-` for families not selected on.
pub fn vocab_csv(rows: &[VocabRow]) -> String {
    let mut out = String::from("family,original,selected\n");
    for r in rows {
        let sel = r.selected.map_or_else(|| "-".to_string(), |s| s.to_string());
        out.push_str(&format!("{},{},{}\n", r.family, r.original, sel));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use rand::SeedableRng;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from(b == 1)).collect()
    }

    #[test]
    fn perfect_and_constant_features() {
        let y = [1u8, 0, 1, 0, 1, 0];
        let rows: Vec<Vec<f64>> = y.iter().map(|&b| vec![f64::from(b), 3.0]).collect();
        let x = FeatureMatrix::from_dense(&rows, labels(&y)).unwrap();
        let stats = pearson_stats(&x, &[], CorrelationMode::RawCount).unwrap();
        assert!((stats[0].rho - 1.0).abs() < 1e-12);
        assert!(stats[0].p_raw < 1e-12);
        assert_eq!((stats[1].rho, stats[1].p_raw, stats[1].p_bonferroni), (0.0, 1.0, 1.0));
    }

    #[test]
    fn too_few_documents() {
        let x = FeatureMatrix::from_dense(&[vec![1.0], vec![0.0]], labels(&[1, 0])).unwrap();
        assert!(pearson_stats(&x, &[], CorrelationMode::RawCount).is_err());
    }

    #[test]
    fn bonferroni_dominates_raw() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let y: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..12).map(|_| f64::from(rng.gen_range(0..4u8))).collect())
            .collect();
        let x = FeatureMatrix::from_dense(&rows, labels(&y)).unwrap();
        for s in pearson_stats(&x, &[], CorrelationMode::RelativeFrequency).unwrap() {
            assert!((-1.0..=1.0).contains(&s.rho));
            assert!(s.p_bonferroni >= s.p_raw && s.p_bonferroni <= 1.0);
            assert!((s.p_bonferroni - (s.p_raw * 12.0).min(1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn p_value_against_beta_form() {
        use statrs::function::beta::beta_reg;
        for &(r, n) in &[(0.3, 10usize), (-0.7, 25), (0.05, 200), (0.99, 5)] {
            let df = (n - 2) as f64;
            let t2 = r * r * df / (1.0 - r * r);
            let p = beta_reg(df / 2.0, 0.5, df / (df + t2));
            assert!((correlation_p_value(r, n) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking() {
        let space = FeatureSpace::from_names(vec!["unigram:a".into(), "unigram:b".into(), "unigram:c".into()]).unwrap();
        let model = LogRegModel::from_parts(&space, [(0, -2.0), (1, 1.0), (2, 0.0)], 0.0, Penalty::L2, 1.0).unwrap();
        let ranked = rank_coefficients(&model, &space).unwrap();
        assert_eq!(ranked, vec![("unigram:a".to_string(), -2.0), ("unigram:b".to_string(), 1.0)]);
        let zero = LogRegModel::from_parts(&space, [], 0.0, Penalty::L2, 1.0).unwrap();
        assert!(rank_coefficients(&zero, &space).unwrap().is_empty());
        let other = FeatureSpace::from_names(vec!["unigram:z".into()]).unwrap();
        assert!(rank_coefficients(&model, &other).is_err());
    }

    #[test]
    fn vocab_rows() {
        let mut names: Vec<String> = (0..5).map(|i| format!("unigram:w{i}")).collect();
        names.extend(["positive", "negative", "neutral", "both"].map(|c| format!("polarity:{c}")));
        let space = FeatureSpace::from_names(names).unwrap();
        let rows = vocab_report(&space, &BTreeMap::from([(FeatureFamily::Unigram, 2)]));
        assert!(rows.contains(&VocabRow { family: FeatureFamily::Unigram, original: 5, selected: Some(2) }));
        assert!(rows.contains(&VocabRow { family: FeatureFamily::Polarity, original: 4, selected: None }));
        assert!(vocab_csv(&rows).contains("polarity,4,-\n"));
    }

    #[test]
    fn all_zero_matrix_selects_nothing() {
        let x = FeatureMatrix::from_dense(&vec![vec![0.0; 4]; 10], labels(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0])).unwrap();
        let cfg = StabilityConfig { resamples: 20, ..Default::default() };
        assert!(stability_selection(&x, &cfg).unwrap().selected.is_empty());
    }

    #[test]
    fn threshold_monotone_and_seeded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&b| {
                let mut r: Vec<f64> = (0..8).map(|_| f64::from(rng.gen_range(0..3u8))).collect();
                r[0] += f64::from(b) * 2.0;
                r
            })
            .collect();
        let x = FeatureMatrix::from_dense(&rows, labels(&y)).unwrap();
        let cfg = StabilityConfig { resamples: 30, seed: 4, ..Default::default() };
        let a = stability_selection(&x, &cfg).unwrap();
        assert_eq!(a, stability_selection(&x, &cfg).unwrap());
        assert!(a.frequencies.iter().all(|f| (0.0..=1.0).contains(f)));
        let mut prev = select_at(&a.frequencies, 0.01);
        for t in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let cur = select_at(&a.frequencies, t);
            assert!(cur.iter().all(|j| prev.contains(j)));
            prev = cur;
        }
    }

    #[test]
    fn bad_stability_config() {
        for cfg in [
            StabilityConfig { threshold: 1.0, ..Default::default() },
            StabilityConfig { subsample_fraction: 0.0, ..Default::default() },
            StabilityConfig { weight_rescale: 1.5, ..Default::default() },
            StabilityConfig { resamples: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn csv_quotes_awkward_feature_names() {
        let text = coefficients_csv(&[("unigram:,".into(), 0.5), ("unigram:\"".into(), -1.0)]);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let names: Vec<String> = r.records().map(|rec| rec.unwrap()[0].to_string()).collect();
        assert_eq!(names, ["unigram:,", "unigram:\""]);
    }
}
