//! Pooled two-sample t-test and balanced two-way ANOVA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Classic equal-variance two-sample t-test with `df = n_a + n_b - 2`.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Result<TTest, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            found: a.len().min(b.len()),
        });
    }
    let (ma, mb) = (mean(a), mean(b));
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let df = a.len() + b.len() - 2;
    let pooled = (ss(a, ma) + ss(b, mb)) / df as f64;
    if pooled <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let se = (pooled * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df is positive");
    let p = clamp_p(2.0 * dist.sf(t.abs()));
    Ok(TTest { t, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factor_a: Effect,
    pub factor_b: Effect,
    pub interaction: Effect,
    pub residual_ss: f64,
    pub residual_df: usize,
    pub total_ss: f64,
}

/// Two-way ANOVA with interaction for a balanced design (every cell has the
/// same number of observations). Any number of levels per factor is accepted;
/// a 2×2 design gives dfs `(1, 1, 1, N - 4)`.
pub fn two_way_anova<A, B>(
    values: &[f64],
    factor_a: &[A],
    factor_b: &[B],
) -> Result<AnovaResult, AnalysisError>
where
    A: Ord + Clone,
    B: Ord + Clone,
{
    if factor_a.len() != values.len() || factor_b.len() != values.len() {
        return Err(AnalysisError::LengthMismatch {
            expected: values.len(),
            found: factor_a.len().min(factor_b.len()),
        });
    }
    let levels_a: Vec<A> = factor_a
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let levels_b: Vec<B> = factor_b
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if levels_a.len() < 2 || levels_b.len() < 2 {
        return Err(AnalysisError::TooFewLevels);
    }
    let (na, nb) = (levels_a.len(), levels_b.len());
    let ia: BTreeMap<&A, usize> = levels_a.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let ib: BTreeMap<&B, usize> = levels_b.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); na * nb];
    for ((v, a), b) in values.iter().zip(factor_a).zip(factor_b) {
        cells[ia[a] * nb + ib[b]].push(*v);
    }
    let n = cells[0].len();
    if n == 0 || cells.iter().any(|c| c.len() != n) {
        return Err(AnalysisError::Unbalanced);
    }
    let cell_mean: Vec<f64> = cells.iter().map(|c| mean(c)).collect();
    let grand = mean(values);
    let mean_a: Vec<f64> = (0..na)
        .map(|i| (0..nb).map(|j| cell_mean[i * nb + j]).sum::<f64>() / nb as f64)
        .collect();
    let mean_b: Vec<f64> = (0..nb)
        .map(|j| (0..na).map(|i| cell_mean[i * nb + j]).sum::<f64>() / na as f64)
        .collect();
    let ss_a = (n * nb) as f64 * mean_a.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (n * na) as f64 * mean_b.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let m = cell_mean[i * nb + j];
            ss_ab += (m - mean_a[i] - mean_b[j] + grand).powi(2);
            ss_e += cells[i * nb + j]
                .iter()
                .map(|v| (v - m).powi(2))
                .sum::<f64>();
        }
    }
    ss_ab *= n as f64;
    let total_ss = values.iter().map(|v| (v - grand).powi(2)).sum();
    let df_e = values.len() - na * nb;
    if df_e == 0 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            found: n,
        });
    }
    let ms_e = ss_e / df_e as f64;
    if ms_e <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let effect = |ss: f64, df: usize| {
        let ms = ss / df as f64;
        let f = ms / ms_e;
        let dist = FisherSnedecor::new(df as f64, df_e as f64).expect("dfs are positive");
        Effect {
            ss,
            df,
            ms,
            f,
            p: clamp_p(dist.sf(f)),
        }
    };
    Ok(AnovaResult {
        factor_a: effect(ss_a, na - 1),
        factor_b: effect(ss_b, nb - 1),
        interaction: effect(ss_ab, (na - 1) * (nb - 1)),
        residual_ss: ss_e,
        residual_df: df_e,
        total_ss,
    })
}
