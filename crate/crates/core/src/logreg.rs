//! Binary logistic regression with an ℓ1 or ℓ2 penalty.
//!
//! Minimizes
//!
//! ```text
//! J(w, b) = Σᵢ log(1 + exp(−ỹᵢ (w·xᵢ + b))) + (1/c) Ω(w)
//! ```
//!
//! with ỹ ∈ {−1, +1}, Ω(w) = ½‖w‖₂² or ‖w‖₁, and an unpenalized bias. Larger
//! `c` means weaker regularization.
//!
//! The solver is a proximal Newton method: each outer iteration builds the
//! second-order model of the loss at the current margins, minimizes it plus
//! the penalty by cyclic coordinate descent over the columns, then backtracks
//! along the resulting direction until the Armijo condition holds. The
//! objective therefore never increases. Iteration stops when the relative
//! objective decrease drops to the configured tolerance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpace, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        }
    }

    fn value(self, w: f64) -> f64 {
        match self {
            Penalty::L1 => w.abs(),
            Penalty::L2 => 0.5 * w * w,
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            _ => Err(Error::Config(format!("unknown penalty {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    /// Relative objective change at which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Unused by the deterministic solver; kept so a config fully names a run.
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-8;
    pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

    pub fn new(penalty: Penalty, c: f64) -> Self {
        TrainConfig {
            penalty,
            c,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("c must be positive and finite, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        1.0 / self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// Nonzero weights sorted by feature index.
    weights: Vec<(usize, f64)>,
    pub bias: f64,
    pub penalty: Penalty,
    pub c: f64,
    space_id: u64,
    dim: usize,
    /// False when `max_iterations` ran out before the tolerance was met.
    pub converged: bool,
    pub iterations: usize,
}

impl LogRegModel {
    /// A model with explicit parameters, mostly for tests and deserialization.
    pub fn from_parts(
        space: &FeatureSpace,
        weights: impl IntoIterator<Item = (usize, f64)>,
        bias: f64,
        penalty: Penalty,
        c: f64,
    ) -> Result<Self> {
        let mut w: Vec<(usize, f64)> = weights.into_iter().filter(|&(_, v)| v != 0.0).collect();
        w.sort_by_key(|&(i, _)| i);
        if w.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::Validation("duplicate weight index".into()));
        }
        if let Some(&(i, _)) = w.iter().find(|&&(i, _)| i >= space.len()) {
            return Err(Error::Validation(format!("weight index {i} outside the space")));
        }
        if w.iter().any(|(_, v)| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        if !(c > 0.0) {
            return Err(Error::Validation(format!("c must be positive, got {c}")));
        }
        Ok(LogRegModel {
            weights: w,
            bias,
            penalty,
            c,
            space_id: space.id(),
            dim: space.len(),
            converged: true,
            iterations: 0,
        })
    }

    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.weights[p].1)
            .unwrap_or(0.0)
    }

    pub fn space_id(&self) -> u64 {
        self.space_id
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    fn check_space(&self, space_id: u64) -> Result<()> {
        if space_id != self.space_id {
            return Err(Error::SpaceMismatch {
                expected: self.space_id,
                found: space_id,
            });
        }
        Ok(())
    }

    /// w·x + b.
    pub fn decision(&self, x: &FeatureVector) -> Result<f64> {
        self.check_space(x.space_id())?;
        Ok(self.margin(x.entries()))
    }

    fn margin(&self, entries: &[(usize, f64)]) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut dot = 0.0;
        let w = &self.weights;
        while a < w.len() && b < entries.len() {
            match w[a].0.cmp(&entries[b].0) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    dot += w[a].1 * entries[b].1;
                    a += 1;
                    b += 1;
                }
            }
        }
        dot + self.bias
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.decision(x)?))
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Label> {
        Ok(Label::from(self.predict_proba(x)? >= 0.5))
    }

    /// JSON with penalty, c, bias and `(feature name, weight)` pairs.
    pub fn to_json(&self, space: &FeatureSpace) -> Result<String> {
        if space.id() != self.space_id {
            return Err(Error::SpaceMismatch {
                expected: self.space_id,
                found: space.id(),
            });
        }
        let file = ModelFile {
            penalty: self.penalty,
            c: self.c,
            bias: self.bias,
            converged: self.converged,
            iterations: self.iterations,
            weights: self
                .weights
                .iter()
                .map(|&(i, v)| (space.name(i).to_string(), v))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Reads a model into `space`. Weights of names absent from the space can
    /// never fire on its vectors and are dropped.
    pub fn from_json(json: &str, space: &FeatureSpace) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        let mut dropped = 0usize;
        let weights: Vec<(usize, f64)> = file
            .weights
            .iter()
            .filter_map(|(name, v)| {
                let idx = space.index_of(name);
                if idx.is_none() {
                    dropped += 1;
                }
                idx.map(|i| (i, *v))
            })
            .collect();
        if dropped > 0 {
            log::warn!("{dropped} model weights name features outside the target space");
        }
        let mut model = Self::from_parts(space, weights, file.bias, file.penalty, file.c)?;
        model.converged = file.converged;
        model.iterations = file.iterations;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    penalty: Penalty,
    c: f64,
    bias: f64,
    #[serde(default = "yes")]
    converged: bool,
    #[serde(default)]
    iterations: usize,
    weights: Vec<(String, f64)>,
}

fn yes() -> bool {
    true
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn signed(label: Label) -> f64 {
    if label.is_positive() {
        1.0
    } else {
        -1.0
    }
}

/// One nonzero column of a [`Problem`].
#[derive(Clone, Copy)]
struct Column<'a> {
    rows: &'a [u32],
    values: &'a [f64],
}

/// Column-major (CSC) copy of a row subset of a [`FeatureMatrix`], the
/// solver's input. Only columns with a nonzero entry are stored.
pub struct Problem {
    features: Vec<usize>,
    offsets: Vec<usize>,
    row_index: Vec<u32>,
    values: Vec<f64>,
    y: Vec<f64>,
    space_id: u64,
    dim: usize,
}

impl Problem {
    /// All rows of `x`.
    pub fn new(x: &FeatureMatrix) -> Result<Self> {
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        Self::from_rows(x, &rows, None)
    }

    /// The given rows of `x`, with each column optionally multiplied by
    /// `column_scale[feature]`.
    pub fn from_rows(x: &FeatureMatrix, rows: &[usize], column_scale: Option<&[f64]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Training("no training rows".into()));
        }
        let mut triplets: Vec<(usize, u32, f64)> = Vec::new();
        let mut y = Vec::with_capacity(rows.len());
        for (local, &r) in rows.iter().enumerate() {
            let row = &x.rows()[r];
            y.push(signed(x.labels()[r]));
            for &(j, v) in row.entries() {
                if !v.is_finite() {
                    return Err(Error::Validation(format!("row {r}, feature {j}: non-finite value {v}")));
                }
                let v = column_scale.map_or(v, |s| v * s[j]);
                if v != 0.0 {
                    triplets.push((j, local as u32, v));
                }
            }
        }
        triplets.sort_unstable_by_key(|&(j, r, _)| (j, r));
        let mut features = Vec::new();
        let mut offsets = vec![0];
        let mut row_index = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (k, &(j, r, v)) in triplets.iter().enumerate() {
            if features.last() != Some(&j) {
                if k > 0 {
                    offsets.push(k);
                }
                features.push(j);
            }
            row_index.push(r);
            values.push(v);
        }
        offsets.push(triplets.len());
        if features.is_empty() {
            offsets.truncate(1);
        }
        Ok(Problem {
            features,
            offsets,
            row_index,
            values,
            y,
            space_id: x.space().id(),
            dim: x.n_features(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn n_columns(&self) -> usize {
        self.features.len()
    }

    fn column(&self, k: usize) -> Column<'_> {
        let (a, b) = (self.offsets[k], self.offsets[k + 1]);
        Column {
            rows: &self.row_index[a..b],
            values: &self.values[a..b],
        }
    }

    fn columns(&self) -> impl Iterator<Item = Column<'_>> + '_ {
        (0..self.n_columns()).map(|k| self.column(k))
    }

    fn check_classes(&self) -> Result<()> {
        let pos = self.y.iter().filter(|&&v| v > 0.0).count();
        if pos == 0 || pos == self.y.len() {
            return Err(Error::Training("training labels contain a single class".into()));
        }
        Ok(())
    }
}

/// Solver state over a problem's columns; reusable as a warm start.
#[derive(Debug, Clone)]
pub struct Solution {
    weights: Vec<f64>,
    bias: f64,
    /// Row-space coefficients from the kernel ℓ2 route, if it was used.
    dual: Option<Vec<f64>>,
}

/// Callback receiving `(iteration, objective)` after every accepted step.
pub type IterationHook<'a> = &'a mut dyn FnMut(usize, f64);

const HESSIAN_FLOOR: f64 = 1e-12;
const ARMIJO: f64 = 0.01;
const MAX_BACKTRACKS: usize = 60;
/// Consecutive iterations whose relative decrease must stay under the
/// tolerance in the coordinate route. Its Newton directions are inexact, so a
/// single small step can occur in a flat valley well before the weights
/// settle. The kernel route takes exact Newton steps and stops at the first.
const CONFIRM_STEPS: usize = 2;
const MAX_INNER_SWEEPS: usize = 50;

fn objective_from_margins(y: &[f64], z: &[f64]) -> f64 {
    y.iter().zip(z).map(|(&yi, &zi)| softplus(-yi * zi)).sum()
}

fn penalty_sum(penalty: Penalty, w: &[f64]) -> f64 {
    w.iter().map(|&v| penalty.value(v)).sum()
}

/// Fits a model on `problem`, optionally starting from `warm`.
///
/// ℓ2 problems with fewer rows than features are solved by exact Newton steps
/// in the row span of X; everything else by proximal Newton with coordinate
/// descent on the quadratic model.
pub fn solve(
    problem: &Problem,
    cfg: &TrainConfig,
    warm: Option<&Solution>,
    mut hook: Option<IterationHook<'_>>,
) -> Result<(LogRegModel, Solution)> {
    cfg.validate()?;
    problem.check_classes()?;
    if cfg.penalty == Penalty::L2 && problem.n_rows() < problem.n_columns() {
        if let Some(fit) = solve_l2_kernel(problem, cfg, warm, &mut hook) {
            return Ok(fit);
        }
        log::debug!("kernel ℓ2 solve lost positive definiteness; using coordinate descent");
    }
    solve_coordinate(problem, cfg, warm, hook)
}

fn finish(
    problem: &Problem,
    cfg: &TrainConfig,
    w: Vec<f64>,
    b: f64,
    converged: bool,
    iterations: usize,
) -> (LogRegModel, Solution) {
    if !converged {
        log::warn!(
            "logistic regression (penalty {}, c {}) hit {} iterations without converging",
            cfg.penalty,
            cfg.c,
            cfg.max_iterations
        );
    }
    let model = LogRegModel {
        weights: problem
            .features
            .iter()
            .zip(&w)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&j, &v)| (j, v))
            .collect(),
        bias: b,
        penalty: cfg.penalty,
        c: cfg.c,
        space_id: problem.space_id,
        dim: problem.dim,
        converged,
        iterations,
    };
    debug_assert!(model.weights.windows(2).all(|p| p[0].0 < p[1].0));
    (model, Solution { weights: w, bias: b, dual: None })
}

/// Newton's method for ℓ2 with weights kept as u = Xᵀa. Each step solves the
/// weighted ridge problem of the quadratic model as an n×n system, with the
/// unpenalized bias eliminated by weighted centering. Returns `None` if the
/// system cannot be factored.
fn solve_l2_kernel(
    problem: &Problem,
    cfg: &TrainConfig,
    warm: Option<&Solution>,
    hook: &mut Option<IterationHook<'_>>,
) -> Option<(LogRegModel, Solution)> {
    let lambda = cfg.lambda();
    let n = problem.n_rows();
    let y = &problem.y;

    let mut k = DMatrix::<f64>::zeros(n, n);
    for col in problem.columns() {
        for (p, (&r, &v)) in col.rows.iter().zip(col.values).enumerate() {
            for (&s, &u) in col.rows[p..].iter().zip(&col.values[p..]) {
                k[(r as usize, s as usize)] += v * u;
            }
        }
    }
    for r in 0..n {
        for s in r + 1..n {
            k[(s, r)] = k[(r, s)];
        }
    }

    let (mut a, mut b) = match warm {
        Some(Solution { dual: Some(d), bias, .. }) if d.len() == n => (DVector::from_column_slice(d), *bias),
        _ => (DVector::<f64>::zeros(n), 0.0),
    };
    let mut ka = &k * &a;
    let mut z: Vec<f64> = ka.iter().map(|v| v + b).collect();
    let mut trial_z = vec![0.0; n];
    let mut obj = objective_from_margins(y, &z) + lambda * 0.5 * a.dot(&ka);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut g = vec![0.0; n];
        let mut h = DVector::<f64>::zeros(n);
        for i in 0..n {
            let p = sigmoid(-y[i] * z[i]);
            g[i] = -y[i] * p;
            h[i] = (p * (1.0 - p)).max(HESSIAN_FLOOR);
        }
        let hsum = h.sum();
        let t: Vec<f64> = (0..n).map(|i| z[i] - g[i] / h[i]).collect();
        let tbar = (0..n).map(|i| h[i] * t[i]).sum::<f64>() / hsum;
        let m = &k * &h / hsum;
        let q = h.dot(&m) / hsum;
        let s = h.map(f64::sqrt);
        let system = DMatrix::from_fn(n, n, |i, j| {
            let centered = k[(i, j)] - m[i] - m[j] + q;
            s[i] * s[j] * centered + if i == j { lambda } else { 0.0 }
        });
        let rhs = DVector::from_fn(n, |i, _| s[i] * (t[i] - tbar));
        let beta = system.cholesky()?.solve(&rhs);
        let alpha = s.component_mul(&beta);
        let a_new = &alpha - &h * (alpha.sum() / hsum);
        let ka_new = &k * &a_new;
        let b_new = tbar - h.dot(&ka_new) / hsum;

        let da = &a_new - &a;
        let dka = &ka_new - &ka;
        let db = b_new - b;
        let dz: Vec<f64> = (0..n).map(|i| dka[i] + db).collect();
        let a_dka = a.dot(&dka);
        let da_dka = da.dot(&dka);
        let a_ka = a.dot(&ka);
        let predicted = g.iter().zip(&dz).map(|(gi, di)| gi * di).sum::<f64>() + lambda * a_dka;
        if !(predicted < -1e-15 * obj.max(1e-300)) {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial_z[i] = z[i] + step * dz[i];
            }
            let pen = 0.5 * (a_ka + 2.0 * step * a_dka + step * step * da_dka);
            let trial = objective_from_margins(y, &trial_z) + lambda * pen;
            if trial <= obj + ARMIJO * step * predicted {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(new_obj) = accepted else {
            converged = true;
            break;
        };
        a += &da * step;
        ka += &dka * step;
        b += step * db;
        std::mem::swap(&mut z, &mut trial_z);
        let decrease = obj - new_obj;
        obj = new_obj;
        if let Some(hook) = hook.as_mut() {
            hook(iterations, obj);
        }
        if decrease <= cfg.tolerance * obj.max(1e-300) {
            converged = true;
            break;
        }
    }

    let w: Vec<f64> = problem
        .columns()
        .map(|col| col.rows.iter().zip(col.values).map(|(&r, &v)| v * a[r as usize]).sum())
        .collect();
    let (model, mut solution) = finish(problem, cfg, w, b, converged, iterations);
    solution.dual = Some(a.as_slice().to_vec());
    Some((model, solution))
}

fn solve_coordinate(
    problem: &Problem,
    cfg: &TrainConfig,
    warm: Option<&Solution>,
    mut hook: Option<IterationHook<'_>>,
) -> Result<(LogRegModel, Solution)> {
    let lambda = cfg.lambda();
    let n = problem.n_rows();
    let y = &problem.y;
    let n_cols = problem.n_columns();

    let (mut w, mut b) = match warm {
        Some(s) if s.weights.len() == n_cols => (s.weights.clone(), s.bias),
        _ => (vec![0.0; n_cols], 0.0),
    };
    let mut z = vec![b; n];
    for (col, &wj) in problem.columns().zip(&w) {
        if wj != 0.0 {
            for (&r, &v) in col.rows.iter().zip(col.values) {
                z[r as usize] += wj * v;
            }
        }
    }

    let mut obj = objective_from_margins(y, &z) + lambda * penalty_sum(cfg.penalty, &w);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut d = vec![0.0; n_cols];
    let mut trial_z = vec![0.0; n];
    let mut active: Vec<usize> = Vec::new();
    let mut converged = false;
    let mut small_steps = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..n {
            let p = sigmoid(-y[i] * z[i]);
            g[i] = -y[i] * p;
            h[i] = (p * (1.0 - p)).max(HESSIAN_FLOOR);
        }
        dz.iter_mut().for_each(|v| *v = 0.0);
        d.iter_mut().for_each(|v| *v = 0.0);
        // The margin change is dz[i] + db. Keeping the bias part as a scalar,
        // with Σ h·dz tracked as columns move, makes the bias step O(1).
        let mut db = 0.0;
        let g_sum: f64 = g.iter().sum();
        let h_sum: f64 = h.iter().sum();
        let mut h_dz = 0.0;

        // Coordinate descent on the quadratic model plus penalty.
        let mut first_sweep_change = 0.0f64;
        for sweep in 0..MAX_INNER_SWEEPS {
            let mut max_change = 0.0f64;

            let step = -(g_sum + h_dz + h_sum * db) / h_sum;
            if step != 0.0 {
                db += step;
                max_change = max_change.max(step.abs());
            }

            // Under ℓ1, sweeps after the first visit only nonzero coordinates.
            // Every Newton step starts with a full sweep, so a zero coordinate
            // that should move is picked up at the next step.
            if sweep == 1 && cfg.penalty == Penalty::L1 {
                active.clear();
                active.extend((0..n_cols).filter(|&j| w[j] + d[j] != 0.0));
            }
            let restrict = sweep > 0 && cfg.penalty == Penalty::L1;
            let visit = if restrict { active.len() } else { n_cols };
            for k in 0..visit {
                let j = if restrict { active[k] } else { k };
                let col = problem.column(j);
                let (mut gj, mut hj, mut hv) = (0.0, HESSIAN_FLOOR, 0.0);
                for (&r, &v) in col.rows.iter().zip(col.values) {
                    let r = r as usize;
                    gj += v * (g[r] + h[r] * dz[r]);
                    hv += v * h[r];
                    hj += v * v * h[r];
                }
                gj += db * hv;
                let current = w[j] + d[j];
                let target = match cfg.penalty {
                    Penalty::L2 => current - (gj + lambda * current) / (hj + lambda),
                    Penalty::L1 => {
                        let v = current - gj / hj;
                        let t = lambda / hj;
                        if v > t {
                            v - t
                        } else if v < -t {
                            v + t
                        } else {
                            0.0
                        }
                    }
                };
                let delta = target - current;
                if delta != 0.0 {
                    d[j] += delta;
                    for (&r, &v) in col.rows.iter().zip(col.values) {
                        dz[r as usize] += delta * v;
                    }
                    h_dz += delta * hv;
                    max_change = max_change.max(delta.abs() * hj.sqrt());
                }
            }

            if sweep == 0 {
                first_sweep_change = max_change;
            }
            if max_change <= 1e-3 * first_sweep_change || max_change < 1e-14 {
                break;
            }
        }

        dz.iter_mut().for_each(|v| *v += db);

        // Directional derivative of the smooth part plus the penalty change.
        let grad_dot: f64 = g.iter().zip(&dz).map(|(gi, di)| gi * di).sum();
        let pen_now = penalty_sum(cfg.penalty, &w);
        let pen_full: f64 = w
            .iter()
            .zip(&d)
            .map(|(&wj, &dj)| cfg.penalty.value(wj + dj))
            .sum();
        let predicted = grad_dot + lambda * (pen_full - pen_now);
        if !(predicted < -1e-15 * obj.max(1e-300)) {
            converged = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial_z[i] = z[i] + alpha * dz[i];
            }
            let pen: f64 = w
                .iter()
                .zip(&d)
                .map(|(&wj, &dj)| cfg.penalty.value(wj + alpha * dj))
                .sum();
            let trial = objective_from_margins(y, &trial_z) + lambda * pen;
            if trial <= obj + ARMIJO * alpha * predicted {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(new_obj) = accepted else {
            // No decrease left at machine precision.
            converged = true;
            break;
        };

        for (wj, dj) in w.iter_mut().zip(&d) {
            *wj += alpha * dj;
        }
        b += alpha * db;
        std::mem::swap(&mut z, &mut trial_z);
        let decrease = obj - new_obj;
        obj = new_obj;
        if let Some(hook) = hook.as_mut() {
            hook(iterations, obj);
        }
        if decrease <= cfg.tolerance * obj.max(1e-300) {
            small_steps += 1;
            if small_steps == CONFIRM_STEPS {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    Ok(finish(problem, cfg, w, b, converged, iterations))
}

/// Fits on every row of `x` against its labels.
pub fn train(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<LogRegModel> {
    let problem = Problem::new(x)?;
    Ok(solve(&problem, cfg, None, None)?.0)
}

/// Fits on a subset of rows.
pub fn train_rows(x: &FeatureMatrix, rows: &[usize], cfg: &TrainConfig) -> Result<LogRegModel> {
    let problem = Problem::from_rows(x, rows, None)?;
    Ok(solve(&problem, cfg, None, None)?.0)
}

/// Fits one model per config on the same problem, warm-starting each penalty's
/// configs in ascending `c` order. Results come back in input order.
pub fn train_path(problem: &Problem, configs: &[TrainConfig]) -> Vec<Result<LogRegModel>> {
    let mut order: Vec<usize> = (0..configs.len()).collect();
    order.sort_by(|&a, &b| {
        (configs[a].penalty, configs[a].c)
            .partial_cmp(&(configs[b].penalty, configs[b].c))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<Option<Result<LogRegModel>>> = (0..configs.len()).map(|_| None).collect();
    let mut warm: Option<(Penalty, Solution)> = None;
    for idx in order {
        let cfg = &configs[idx];
        let start = warm.as_ref().filter(|(p, _)| *p == cfg.penalty).map(|(_, s)| s);
        match solve(problem, cfg, start, None) {
            Ok((model, solution)) => {
                warm = Some((cfg.penalty, solution));
                out[idx] = Some(Ok(model));
            }
            Err(e) => out[idx] = Some(Err(e)),
        }
    }
    out.into_iter().map(|r| r.expect("every config solved")).collect()
}

fn check_labels(x: &FeatureMatrix, model: &LogRegModel) -> Result<()> {
    model.check_space(x.space().id())?;
    if model.dim != x.n_features() {
        return Err(Error::Validation("model and matrix dimensions differ".into()));
    }
    Ok(())
}

/// J(w, b) of `model` on every row of `x`.
pub fn objective(model: &LogRegModel, x: &FeatureMatrix) -> Result<f64> {
    check_labels(x, model)?;
    let loss: f64 = x
        .rows()
        .iter()
        .zip(x.labels())
        .map(|(row, &l)| softplus(-signed(l) * model.margin(row.entries())))
        .sum();
    let pen: f64 = model.weights.iter().map(|&(_, v)| model.penalty.value(v)).sum();
    Ok(loss + pen / model.c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Dense over the whole feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Analytic gradient of J at `model`. Under ℓ1 the penalty term uses the
/// subgradient `sign(w)/c`, which is 0 at w = 0.
pub fn objective_gradient(model: &LogRegModel, x: &FeatureMatrix) -> Result<Gradient> {
    check_labels(x, model)?;
    let mut grad = vec![0.0; x.n_features()];
    let mut bias = 0.0;
    for (row, &l) in x.rows().iter().zip(x.labels()) {
        let yi = signed(l);
        let gi = -yi * sigmoid(-yi * model.margin(row.entries()));
        bias += gi;
        for &(j, v) in row.entries() {
            grad[j] += gi * v;
        }
    }
    for &(j, w) in &model.weights {
        grad[j] += match model.penalty {
            Penalty::L2 => w / model.c,
            Penalty::L1 => w.signum() / model.c,
        };
    }
    Ok(Gradient { weights: grad, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn matrix(rows: &[Vec<f64>], labels: &[u8]) -> FeatureMatrix {
        FeatureMatrix::from_dense(rows, labels.iter().map(|&l| Label::from(l == 1)).collect()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let x = matrix(&[vec![1.0], vec![0.0]], &[1, 0]);
        let zero = LogRegModel::from_parts(x.space(), [], 0.0, Penalty::L2, 1.0).unwrap();
        assert_eq!(zero.predict_proba(&x.rows()[0]).unwrap(), 0.5);
        let m = LogRegModel::from_parts(x.space(), [(0, 3f64.ln())], 0.0, Penalty::L2, 1.0).unwrap();
        assert!((m.predict_proba(&x.rows()[0]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(m.predict(&x.rows()[0]).unwrap(), Label::Fraud);

        let other = matrix(&[vec![1.0, 2.0]], &[1]);
        assert!(matches!(m.predict_proba(&other.rows()[0]), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn single_class_and_bad_config_rejected() {
        let x = matrix(&[vec![1.0], vec![2.0]], &[1, 1]);
        assert!(matches!(train(&x, &TrainConfig::new(Penalty::L2, 1.0)), Err(Error::Training(_))));
        let x = matrix(&[vec![1.0], vec![2.0]], &[1, 0]);
        assert!(matches!(train(&x, &TrainConfig::new(Penalty::L2, 0.0)), Err(Error::Config(_))));
        let mut cfg = TrainConfig::new(Penalty::L2, 1.0);
        cfg.max_iterations = 0;
        assert!(matches!(train(&x, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn two_point_stationarity() {
        // Points x = −1 (y = 0) and x = +1 (y = 1), shifted by +1 so counts stay
        // non-negative: the optimum keeps w and moves the bias to −w. With b = 0
        // in the unshifted problem, J(w) = 2·log(1 + e^(−w)) + w²/(2c) and the
        // stationarity condition is w = 2c·σ(−w).
        let x = matrix(&[vec![0.0], vec![2.0]], &[0, 1]);
        let c = 1.0;
        let m = train(&x, &TrainConfig::new(Penalty::L2, c)).unwrap();
        let w = m.weight(0);
        assert!((w - 2.0 * c * sigmoid(-w)).abs() < 1e-6);
        assert!((m.bias + w).abs() < 1e-6);

        let j = |w: f64| 2.0 * softplus(-w) + w * w / (2.0 * c);
        let best = (0..=200_000)
            .map(|k| k as f64 * 1e-5)
            .min_by(|a, b| j(*a).partial_cmp(&j(*b)).unwrap())
            .unwrap();
        assert!((w - best).abs() < 2e-5);
    }

    #[test]
    fn all_zero_features_give_prior() {
        let x = matrix(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]], &[1, 0, 1, 0]);
        let m = train(&x, &TrainConfig::new(Penalty::L1, 1.0)).unwrap();
        assert_eq!(m.nnz(), 0);
        assert!(m.bias.abs() < 1e-10);
    }

    #[test]
    fn tiny_c_shrinks_weights() {
        let x = matrix(&[vec![3.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0], vec![4.0, 0.0], vec![0.0, 5.0]], &[1, 0, 1, 1, 0]);
        for penalty in [Penalty::L1, Penalty::L2] {
            let m = train(&x, &TrainConfig::new(penalty, 1e-8)).unwrap();
            let norm: f64 = m.weights().iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1e-4, "{penalty}: {norm}");
            // Bias carries the 3:2 prior.
            assert!((sigmoid(m.bias) - 0.6).abs() < 1e-4);
        }
    }

    #[test]
    fn json_roundtrip_by_name() {
        let x = matrix(&[vec![3.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]], &[1, 0, 1]);
        let m = train(&x, &TrainConfig::new(Penalty::L2, 1.0)).unwrap();
        let json = m.to_json(x.space()).unwrap();
        assert!(json.contains("unigram:f00001"));
        let back = LogRegModel::from_json(&json, x.space()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn hook_sees_monotone_objective() {
        let x = matrix(
            &[vec![3.0, 0.0, 1.0], vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 4.0], vec![2.0, 2.0, 2.0]],
            &[1, 0, 1, 0, 1],
        );
        let p = Problem::new(&x).unwrap();
        for penalty in [Penalty::L1, Penalty::L2] {
            let mut trace = Vec::new();
            let mut hook = |_: usize, j: f64| trace.push(j);
            solve(&p, &TrainConfig::new(penalty, 10.0), None, Some(&mut hook)).unwrap();
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
