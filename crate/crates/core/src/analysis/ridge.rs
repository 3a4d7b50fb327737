//! Ridge regression with nested k-fold cross-validation.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::exec::Execution;
use crate::seed::rng_for;

pub const MIN_SAMPLES: usize = 25;

/// 13 values, log-spaced from 1e-3 to 1e3.
pub fn lambda_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

/// Whether folds keep each group (chain) together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldGrouping {
    #[default]
    Grouped,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeOptions {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub grouping: FoldGrouping,
    pub execution: Execution,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            outer_folds: 5,
            inner_folds: 5,
            lambdas: lambda_grid(),
            seed: 0,
            grouping: FoldGrouping::Grouped,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingResult {
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
    /// Regularisation strength chosen by the inner loop of each outer fold.
    pub fold_lambdas: Vec<f64>,
}

/// Disjoint test folds over a set of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffle the distinct groups of `indices` with `seed` and deal them
    /// to `k` folds, each group to the currently smallest fold.
    pub fn new(
        indices: &[usize],
        groups: &[usize],
        k: usize,
        seed: u64,
    ) -> Result<Self, AnalysisError> {
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in indices {
            members.entry(groups[i]).or_default().push(i);
        }
        if members.len() < k || k < 2 {
            return Err(AnalysisError::TooFewGroups {
                needed: k.max(2),
                found: members.len(),
            });
        }
        let mut order: Vec<Vec<usize>> = members.into_values().collect();
        order.shuffle(&mut rng_for(seed, &[k as u64, indices.len() as u64]));
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
        for g in order {
            let smallest = (0..k).min_by_key(|&f| (folds[f].len(), f)).expect("k >= 2");
            folds[smallest].extend(g);
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(FoldPlan { folds })
    }

    /// `(train, test)` for fold `f`, train drawn from the other folds.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        (train, self.folds[f].clone())
    }
}

/// Pairs `(train, test)` of rows that share an index or have bit-identical
/// features. Empty means no leakage.
pub fn check_leakage(x: &[Vec<f64>], train: &[usize], test: &[usize]) -> Vec<(usize, usize)> {
    let key = |i: usize| x[i].iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut seen: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for &t in test {
        seen.entry(key(t)).or_default().push(t);
    }
    let mut out = Vec::new();
    for &r in train {
        if let Some(ts) = seen.get(&key(r)) {
            out.extend(ts.iter().map(|&t| (r, t)));
        }
    }
    out
}

/// Per-feature centring and unit scaling fitted on one set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population standard deviation; constant features get scale 1.
    pub fn fit(x: &[Vec<f64>], rows: &[usize]) -> Self {
        let p = x[rows[0]].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(&x[r]) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(&x[r]).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[Vec<f64>], rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.mean.len(), |i, j| {
            (x[rows[i]][j] - self.mean[j]) / self.scale[j]
        })
    }
}

/// `beta = (X'X + lambda I)^-1 X'y`, through the smaller of the primal and
/// dual systems.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    ridge_path(x, y, &[lambda]).pop().expect("one lambda")
}

fn ridge_path(x: &DMatrix<f64>, y: &DVector<f64>, lambdas: &[f64]) -> Vec<DVector<f64>> {
    let (n, p) = x.shape();
    if p <= n {
        let gram = x.transpose() * x;
        let xty = x.transpose() * y;
        lambdas
            .iter()
            .map(|&l| {
                let a = &gram + DMatrix::identity(p, p) * l;
                a.cholesky()
                    .expect("ridge system is positive definite")
                    .solve(&xty)
            })
            .collect()
    } else {
        let gram = x * x.transpose();
        lambdas
            .iter()
            .map(|&l| {
                let a = &gram + DMatrix::identity(n, n) * l;
                let alpha = a
                    .cholesky()
                    .expect("ridge system is positive definite")
                    .solve(y);
                x.transpose() * alpha
            })
            .collect()
    }
}

/// Ridge fit on standardised features with an unpenalised intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub standardizer: Standardizer,
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

fn centred(y: &[f64], rows: &[usize]) -> (DVector<f64>, f64) {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    (
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r] - mean)),
        mean,
    )
}

impl RidgeModel {
    pub fn fit(x: &[Vec<f64>], y: &[f64], rows: &[usize], lambda: f64) -> Self {
        let standardizer = Standardizer::fit(x, rows);
        let z = standardizer.transform(x, rows);
        let (yc, intercept) = centred(y, rows);
        RidgeModel {
            coefficients: ridge_solve(&z, &yc, lambda),
            standardizer,
            intercept,
            lambda,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>], rows: &[usize]) -> Vec<f64> {
        let z = self.standardizer.transform(x, rows);
        (z * &self.coefficients)
            .iter()
            .map(|v| v + self.intercept)
            .collect()
    }
}

fn sum_sq_error(pred: &[f64], y: &[f64], rows: &[usize]) -> f64 {
    pred.iter()
        .zip(rows)
        .map(|(p, &r)| (y[r] - p).powi(2))
        .sum()
}

/// Held-out `R^2 = 1 - SS_res / SS_tot` with the test-set mean.
pub fn r_squared(pred: &[f64], y: &[f64], rows: &[usize]) -> Result<f64, AnalysisError> {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    let ss_tot: f64 = rows.iter().map(|&r| (y[r] - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(AnalysisError::ConstantTarget);
    }
    Ok(1.0 - sum_sq_error(pred, y, rows) / ss_tot)
}

/// Mean validation MSE of each lambda over inner folds of `rows`.
fn inner_scores(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    groups: &[usize],
    opts: &RidgeOptions,
    outer_fold: usize,
) -> Result<Vec<f64>, AnalysisError> {
    let plan = FoldPlan::new(
        rows,
        groups,
        opts.inner_folds,
        opts.seed ^ (outer_fold as u64 + 1),
    )?;
    let mut totals = vec![0.0; opts.lambdas.len()];
    for f in 0..plan.folds.len() {
        let (train, val) = plan.split(f);
        let s = Standardizer::fit(x, &train);
        let z = s.transform(x, &train);
        let (yc, mean) = centred(y, &train);
        let zv = s.transform(x, &val);
        for (total, beta) in totals.iter_mut().zip(ridge_path(&z, &yc, &opts.lambdas)) {
            let pred: Vec<f64> = (&zv * beta).iter().map(|v| v + mean).collect();
            *total += sum_sq_error(&pred, y, &val) / val.len() as f64;
        }
    }
    Ok(totals
        .into_iter()
        .map(|t| t / plan.folds.len() as f64)
        .collect())
}

/// Nested cross-validated ridge decoding of `y` from `x`.
///
/// `groups[i]` labels the chain of sample `i`; with grouped folds a chain
/// never straddles a train/test boundary.
pub fn ridge_decode(
    x: &[Vec<f64>],
    y: &[f64],
    groups: &[usize],
    opts: &RidgeOptions,
) -> Result<DecodingResult, AnalysisError> {
    if x.len() != y.len() || groups.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            expected: y.len(),
            found: x.len().min(groups.len()),
        });
    }
    if y.len() < MIN_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            needed: MIN_SAMPLES,
            found: y.len(),
        });
    }
    let p = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != p) {
        return Err(AnalysisError::LengthMismatch {
            expected: p,
            found: row.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if y.iter().all(|v| (v - mean).abs() == 0.0) {
        return Err(AnalysisError::ConstantTarget);
    }
    let fold_groups: Vec<usize> = match opts.grouping {
        FoldGrouping::Grouped => groups.to_vec(),
        FoldGrouping::Pooled => (0..y.len()).collect(),
    };
    let all: Vec<usize> = (0..y.len()).collect();
    let plan = FoldPlan::new(&all, &fold_groups, opts.outer_folds, opts.seed)?;
    let results = opts.execution.map_range(plan.folds.len(), |f| {
        let (train, test) = plan.split(f);
        let test_groups: std::collections::HashSet<usize> =
            test.iter().map(|&i| fold_groups[i]).collect();
        if train.iter().any(|i| test_groups.contains(&fold_groups[*i])) {
            return Err(AnalysisError::Leakage { fold: f });
        }
        let scores = inner_scores(x, y, &train, &fold_groups, opts, f)?;
        let best = (0..scores.len())
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .expect("non-empty lambda grid");
        let lambda = opts.lambdas[best];
        let model = RidgeModel::fit(x, y, &train, lambda);
        let r2 = r_squared(&model.predict(x, &test), y, &test)?;
        Ok((r2, lambda))
    });
    let mut fold_r2 = Vec::new();
    let mut fold_lambdas = Vec::new();
    for r in results {
        let (r2, l) = r?;
        fold_r2.push(r2);
        fold_lambdas.push(l);
    }
    let mean_r2 = fold_r2.iter().sum::<f64>() / fold_r2.len() as f64;
    Ok(DecodingResult {
        fold_r2,
        mean_r2,
        fold_lambdas,
    })
}
