//! Leave-one-out and nested cross-validation over a regularization grid.
//!
//! `loo_eval` scores every grid point by plain leave-one-out and reports the
//! best one. Picking the maximum inside the estimate is what makes it
//! optimistic. `nested_eval` holds each document out in turn, tunes the grid
//! point by a random M-fold split of the remaining documents, refits, and
//! predicts the held-out document. Trials differ only in the inner splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::logreg::{self, LogRegModel, Penalty, Problem, TrainConfig};
use crate::par;
use crate::seed;

/// Regularization strengths searched by default.
pub const DEFAULT_C_GRID: [f64; 9] = [0.001, 0.005, 0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub penalty: Penalty,
    pub c: f64,
}

impl GridPoint {
    pub fn new(penalty: Penalty, c: f64) -> Self {
        GridPoint { penalty, c }
    }

    /// Preference order among equally accurate points: smaller c first, then ℓ2.
    fn simplicity_key(&self) -> (f64, u8) {
        (
            self.c,
            match self.penalty {
                Penalty::L2 => 0,
                Penalty::L1 => 1,
            },
        )
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/c={}", self.penalty, self.c)
    }
}

/// Both penalties over [`DEFAULT_C_GRID`].
pub fn default_grid() -> Vec<GridPoint> {
    [Penalty::L1, Penalty::L2]
        .into_iter()
        .flat_map(|p| DEFAULT_C_GRID.iter().map(move |&c| GridPoint::new(p, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CVConfig {
    pub grid: Vec<GridPoint>,
    pub inner_folds: usize,
    pub trials: usize,
    pub seed: u64,
    pub pair_grouping: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CVConfig {
    fn default() -> Self {
        CVConfig {
            grid: default_grid(),
            inner_folds: 5,
            trials: 10,
            seed: 0,
            pair_grouping: false,
            tolerance: TrainConfig::DEFAULT_TOLERANCE,
            max_iterations: TrainConfig::DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl CVConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("empty hyper-parameter grid".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config(format!("inner_folds must be ≥ 2, got {}", self.inner_folds)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        for g in &self.grid {
            self.train_config(g).validate()?;
        }
        Ok(())
    }

    fn train_config(&self, g: &GridPoint) -> TrainConfig {
        let mut cfg = TrainConfig::new(g.penalty, g.c);
        cfg.tolerance = self.tolerance;
        cfg.max_iterations = self.max_iterations;
        cfg.seed = self.seed;
        cfg
    }

    fn train_configs(&self) -> Vec<TrainConfig> {
        self.grid.iter().map(|g| self.train_config(g)).collect()
    }
}

/// Partitions `0..n` into `m` shuffled folds whose sizes differ by at most one.
pub fn make_folds(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot split {n} items into {m} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, "folds", &[]));
    let (base, extra) = (n / m, n % m);
    let mut folds = Vec::with_capacity(m);
    let mut start = 0;
    for f in 0..m {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Like [`make_folds`], but items sharing a group key always land in the same
/// fold. Groups are dealt in shuffled order to the currently smallest fold, so
/// sizes are balanced as far as the group sizes allow.
pub fn make_grouped_folds(groups: &[String], m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut units: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        match index.get(g.as_str()) {
            Some(&u) => units[u].1.push(i),
            None => {
                index.insert(g, units.len());
                units.push((g.clone(), vec![i]));
            }
        }
    }
    if m == 0 || m > units.len() {
        return Err(Error::Config(format!("cannot split {} groups into {m} folds", units.len())));
    }
    units.shuffle(&mut seed::rng(seed, "folds", &[]));
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (_, members) in units {
        let target = (0..m).min_by_key(|&f| (folds[f].len(), f)).expect("m ≥ 1");
        folds[target].extend(members);
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Loo,
    NestedLoo,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Loo => "loo",
            Scheme::NestedLoo => "nested_loo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub trial: usize,
    /// Row index of the held-out document.
    pub fold: usize,
    pub predicted: u8,
    pub truth: u8,
    pub chosen: GridPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub per_trial_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub predictions: Vec<FoldPrediction>,
    /// LOO: the single selected point. Nested: one entry per prediction.
    pub chosen_hyperparams: Vec<GridPoint>,
    /// Plain LOO accuracy of every grid point, in grid order (LOO only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid_accuracy: Vec<f64>,
    pub n_documents: usize,
    pub skipped_folds: usize,
    pub matrix_fingerprint: String,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn check_matrix(x: &FeatureMatrix) -> Result<()> {
    if x.n_rows() < 2 {
        return Err(Error::Validation("cross-validation needs at least two documents".into()));
    }
    let pos = x.labels().iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == x.n_rows() {
        return Err(Error::Validation("cross-validation needs both classes".into()));
    }
    Ok(())
}

fn has_both_classes(x: &FeatureMatrix, rows: &[usize]) -> bool {
    let pos = rows.iter().filter(|&&r| x.labels()[r].is_positive()).count();
    pos > 0 && pos < rows.len()
}

fn predict_row(model: &LogRegModel, x: &FeatureMatrix, row: usize) -> Label {
    model.predict(&x.rows()[row]).expect("model trained on this matrix")
}

/// Index of the best accuracy; ties go to the simplest grid point. NaN never wins.
fn select(grid: &[GridPoint], accuracy: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..grid.len() {
        if accuracy[i].is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let better = accuracy[i] > accuracy[b]
                    || (accuracy[i] == accuracy[b]
                        && grid[i].simplicity_key().partial_cmp(&grid[b].simplicity_key())
                            == Some(std::cmp::Ordering::Less));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Plain leave-one-out at every grid point; reports the best point's accuracy.
pub fn loo_eval(x: &FeatureMatrix, cfg: &CVConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_matrix(x)?;
    let n = x.n_rows();
    let configs = cfg.train_configs();

    // Per held-out row: the prediction of every grid point, or None if skipped.
    let per_row: Vec<Result<Option<Vec<Label>>>> = par::map_range(n, |k| {
        let train: Vec<usize> = (0..n).filter(|&i| i != k).collect();
        if !has_both_classes(x, &train) {
            log::warn!("LOO fold {k}: training set has a single class; skipped");
            return Ok(None);
        }
        let problem = Problem::from_rows(x, &train, None)?;
        let mut preds = Vec::with_capacity(configs.len());
        for model in logreg::train_path(&problem, &configs) {
            preds.push(predict_row(&model?, x, k));
        }
        Ok(Some(preds))
    });
    let per_row: Vec<Option<Vec<Label>>> = per_row.into_iter().collect::<Result<_>>()?;

    let evaluated: Vec<usize> = (0..n).filter(|&k| per_row[k].is_some()).collect();
    if evaluated.is_empty() {
        return Err(Error::Validation("every LOO fold was skipped".into()));
    }
    let grid_accuracy: Vec<f64> = (0..cfg.grid.len())
        .map(|g| {
            let correct = evaluated
                .iter()
                .filter(|&&k| per_row[k].as_ref().expect("evaluated")[g] == x.labels()[k])
                .count();
            correct as f64 / evaluated.len() as f64
        })
        .collect();
    let best = select(&cfg.grid, &grid_accuracy).expect("non-empty grid");
    let chosen = cfg.grid[best];
    let predictions = evaluated
        .iter()
        .map(|&k| FoldPrediction {
            trial: 0,
            fold: k,
            predicted: per_row[k].as_ref().expect("evaluated")[best].as_int(),
            truth: x.labels()[k].as_int(),
            chosen,
        })
        .collect();
    let accuracy = grid_accuracy[best];
    let per_trial = vec![accuracy; cfg.trials];
    let (mean, std) = mean_std(&per_trial);
    Ok(EvalReport {
        scheme: Scheme::Loo,
        per_trial_accuracy: per_trial,
        mean_accuracy: mean,
        std_accuracy: std,
        predictions,
        chosen_hyperparams: vec![chosen],
        grid_accuracy,
        n_documents: n,
        skipped_folds: n - evaluated.len(),
        matrix_fingerprint: format!("{:016x}", x.fingerprint()),
    })
}

/// One outer step of nested cross-validation, with global row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedStep {
    pub trial: usize,
    pub held_out: usize,
    pub inner_folds: Vec<Vec<usize>>,
}

/// Fold layout used by [`nested_eval`]: for every trial and held-out row, the
/// inner split of the remaining rows.
pub fn nested_plan(x: &FeatureMatrix, cfg: &CVConfig) -> Result<Vec<NestedStep>> {
    let n = x.n_rows();
    let mut steps = Vec::with_capacity(cfg.trials * n);
    for trial in 0..cfg.trials {
        for k in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            let fold_seed = seed::derive(cfg.seed, "nested-inner", &[trial as u64, k as u64]);
            let local = if cfg.pair_grouping {
                let groups: Vec<String> = rest.iter().map(|&i| x.groups()[i].clone()).collect();
                make_grouped_folds(&groups, cfg.inner_folds, fold_seed)?
            } else {
                make_folds(rest.len(), cfg.inner_folds, fold_seed)?
            };
            let inner_folds = local
                .into_iter()
                .map(|f| f.into_iter().map(|p| rest[p]).collect())
                .collect();
            steps.push(NestedStep {
                trial,
                held_out: k,
                inner_folds,
            });
        }
    }
    Ok(steps)
}

/// Inner-CV choice of grid point for one outer step, or `None` if the step
/// is skipped.
fn select_outer(x: &FeatureMatrix, cfg: &CVConfig, configs: &[TrainConfig], step: &NestedStep) -> Result<Option<usize>> {
    let k = step.held_out;
    let rest: Vec<usize> = step.inner_folds.iter().flatten().copied().collect();
    if !has_both_classes(x, &rest) {
        log::warn!("nested trial {} fold {k}: training set has a single class; skipped", step.trial);
        return Ok(None);
    }

    let mut sums = vec![0.0; configs.len()];
    let mut folds_used = 0usize;
    for (f, validation) in step.inner_folds.iter().enumerate() {
        let train: Vec<usize> = step
            .inner_folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        if validation.is_empty() || !has_both_classes(x, &train) {
            continue;
        }
        let problem = Problem::from_rows(x, &train, None)?;
        for (g, model) in logreg::train_path(&problem, configs).into_iter().enumerate() {
            let model = model?;
            let correct = validation
                .iter()
                .filter(|&&r| predict_row(&model, x, r) == x.labels()[r])
                .count();
            sums[g] += correct as f64 / validation.len() as f64;
        }
        folds_used += 1;
    }
    let inner_accuracy: Vec<f64> = if folds_used == 0 {
        vec![f64::NAN; configs.len()]
    } else {
        sums.iter().map(|s| s / folds_used as f64).collect()
    };
    let best = select(&cfg.grid, &inner_accuracy);
    if best.is_none() {
        log::warn!("nested trial {} fold {k}: no usable inner fold; skipped", step.trial);
    }
    Ok(best)
}

/// Nested cross-validation: LOO outer loop, random M-fold inner tuning.
pub fn nested_eval(x: &FeatureMatrix, cfg: &CVConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_matrix(x)?;
    let configs = cfg.train_configs();
    let plan = nested_plan(x, cfg)?;
    let n = x.n_rows();
    let selections: Vec<Option<usize>> = par::map_slice(&plan, |step| select_outer(x, cfg, &configs, step))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Training(format!("trial {}, fold {}: {e}", i / n, i % n))))
        .collect::<Result<_>>()?;

    // The outer refit depends only on the held-out row and the chosen grid
    // point, so trials that agree share one fit.
    let refits: Vec<(usize, usize)> = selections
        .iter()
        .enumerate()
        .filter_map(|(i, best)| best.map(|b| (i % n, b)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let refit_predictions = par::map_slice(&refits, |&(k, best)| -> Result<Label> {
        let rest: Vec<usize> = (0..n).filter(|&i| i != k).collect();
        let problem = Problem::from_rows(x, &rest, None)?;
        let (model, _) = logreg::solve(&problem, &configs[best], None, None)?;
        Ok(predict_row(&model, x, k))
    });
    let mut refit_lookup = BTreeMap::new();
    for (&key, r) in refits.iter().zip(refit_predictions) {
        let predicted = r.map_err(|e| Error::Training(format!("fold {}: {e}", key.0)))?;
        refit_lookup.insert(key, predicted);
    }

    let mut per_trial = Vec::with_capacity(cfg.trials);
    let mut predictions = Vec::new();
    let mut chosen = Vec::new();
    let mut skipped = 0;
    for (t, chunk) in selections.chunks(n).enumerate() {
        let mut correct = 0usize;
        let mut evaluated = 0usize;
        for (k, best) in chunk.iter().enumerate() {
            let Some(best) = *best else {
                skipped += 1;
                continue;
            };
            let predicted = refit_lookup[&(k, best)];
            evaluated += 1;
            if predicted == x.labels()[k] {
                correct += 1;
            }
            predictions.push(FoldPrediction {
                trial: t,
                fold: k,
                predicted: predicted.as_int(),
                truth: x.labels()[k].as_int(),
                chosen: cfg.grid[best],
            });
            chosen.push(cfg.grid[best]);
        }
        if evaluated == 0 {
            return Err(Error::Validation(format!("every outer fold of trial {t} was skipped")));
        }
        per_trial.push(correct as f64 / evaluated as f64);
    }
    let (mean, std) = mean_std(&per_trial);
    Ok(EvalReport {
        scheme: Scheme::NestedLoo,
        per_trial_accuracy: per_trial,
        mean_accuracy: mean,
        std_accuracy: std,
        predictions,
        chosen_hyperparams: chosen,
        grid_accuracy: Vec::new(),
        n_documents: n,
        skipped_folds: skipped,
        matrix_fingerprint: format!("{:016x}", x.fingerprint()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDifference {
    pub trial: usize,
    pub loo_accuracy: f64,
    pub nested_accuracy: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvComparison {
    pub rows: Vec<TrialDifference>,
    pub mean_difference: f64,
    pub positive_trials: usize,
    pub negative_trials: usize,
    pub zero_trials: usize,
    /// One-sided sign test of "LOO exceeds nested", ties dropped.
    pub sign_test_p: f64,
}

/// P(X ≥ successes) for X ~ Binomial(trials, 1/2).
pub fn sign_test_p(successes: usize, trials: usize) -> f64 {
    if successes == 0 || trials == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials as u64).expect("valid binomial");
    (1.0 - b.cdf(successes as u64 - 1)).clamp(0.0, 1.0)
}

/// Per-trial LOO minus nested accuracy. A single-trial LOO report is
/// broadcast against every nested trial.
pub fn compare_cv(loo: &EvalReport, nested: &EvalReport) -> Result<CvComparison> {
    if loo.matrix_fingerprint != nested.matrix_fingerprint || loo.n_documents != nested.n_documents {
        return Err(Error::Validation(format!(
            "reports come from different matrices ({} vs {})",
            loo.matrix_fingerprint, nested.matrix_fingerprint
        )));
    }
    let t = nested.per_trial_accuracy.len();
    let loo_at = |i: usize| match loo.per_trial_accuracy.len() {
        1 => Ok(loo.per_trial_accuracy[0]),
        len if len == t => Ok(loo.per_trial_accuracy[i]),
        len => Err(Error::Validation(format!("{len} LOO trials against {t} nested trials"))),
    };
    let mut rows = Vec::with_capacity(t);
    for i in 0..t {
        let l = loo_at(i)?;
        let nacc = nested.per_trial_accuracy[i];
        rows.push(TrialDifference {
            trial: i,
            loo_accuracy: l,
            nested_accuracy: nacc,
            difference: l - nacc,
        });
    }
    let positive = rows.iter().filter(|r| r.difference > 0.0).count();
    let negative = rows.iter().filter(|r| r.difference < 0.0).count();
    let mean = if t == 0 {
        0.0
    } else {
        rows.iter().map(|r| r.difference).sum::<f64>() / t as f64
    };
    Ok(CvComparison {
        mean_difference: mean,
        positive_trials: positive,
        negative_trials: negative,
        zero_trials: t - positive - negative,
        sign_test_p: sign_test_p(positive, positive + negative),
        rows,
    })
}

/// `scheme,trial,fold,predicted,true,chosen_penalty,chosen_c` rows.
pub fn predictions_csv(reports: &[&EvalReport]) -> String {
    let mut out = String::from("scheme,trial,fold,predicted,true,chosen_penalty,chosen_c\n");
    for r in reports {
        for p in &r.predictions {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scheme, p.trial, p.fold, p.predicted, p.truth, p.chosen.penalty, p.chosen.c
            ));
        }
    }
    out
}

pub fn differences_csv(cmp: &CvComparison) -> String {
    let mut out = String::from("trial,loo_accuracy,nested_accuracy,difference\n");
    for r in &cmp.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.trial, r.loo_accuracy, r.nested_accuracy, r.difference
        ));
    }
    out
}
