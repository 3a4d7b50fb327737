//! Exact Bayesian inference over the finite abstraction space.

use super::distribution::DistributionOverGrids;
use super::{AbstractionModel, BayesError, EXACT_MAX_TILES};
use crate::grid::{hamming, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Stimulus,
    Language,
}

impl AbstractionModel {
    pub fn prior(&self, which: PriorKind) -> &[f64] {
        match which {
            PriorKind::Stimulus => self.stimulus_prior(),
            PriorKind::Language => self.language_prior(),
        }
    }

    fn check_abstraction(&self, mu: usize) -> Result<(), BayesError> {
        if mu >= self.n_abstractions() {
            return Err(BayesError::IndexOutOfRange {
                what: "abstraction",
                index: mu,
                len: self.n_abstractions(),
            });
        }
        Ok(())
    }

    fn check_grid(&self, x: &Grid) -> Result<(), BayesError> {
        if x.size() != self.size() {
            return Err(BayesError::TemplateSize {
                expected: self.size(),
                found: x.size(),
            });
        }
        Ok(())
    }

    /// `log p_S(x | mu)` given the Hamming distance to the template.
    pub(crate) fn log_likelihood_at_distance(&self, h: usize) -> f64 {
        let eps = self.flip_rate();
        h as f64 * eps.ln() + (self.n_tiles() - h) as f64 * (1.0 - eps).ln()
    }
}

/// `p_S(x | mu) = eps^h (1 - eps)^(N^2 - h)` with `h` the distance from the template.
pub fn stimulus_likelihood(m: &AbstractionModel, mu: usize, x: &Grid) -> Result<f64, BayesError> {
    m.check_abstraction(mu)?;
    m.check_grid(x)?;
    let h = hamming(&m.templates()[mu], x)?;
    let eps = m.flip_rate();
    Ok(eps.powi(h as i32) * (1.0 - eps).powi((m.n_tiles() - h) as i32))
}

fn normalise_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `p(mu | x) ∝ p_S(x | mu) p_S(mu)`, by enumeration over the abstractions.
pub fn posterior_from_stimulus(m: &AbstractionModel, x: &Grid) -> Result<Vec<f64>, BayesError> {
    m.check_grid(x)?;
    let logs: Vec<f64> = m
        .templates()
        .iter()
        .zip(m.stimulus_prior())
        .map(|(t, p)| {
            let h = hamming(t, x).expect("sizes checked");
            m.log_likelihood_at_distance(h) + p.ln()
        })
        .collect();
    Ok(normalise_logs(&logs))
}

/// `p(mu | l) ∝ p_L(l | mu) p_L(mu)`.
pub fn posterior_from_description(m: &AbstractionModel, l: usize) -> Result<Vec<f64>, BayesError> {
    if l >= m.n_descriptions() {
        return Err(BayesError::IndexOutOfRange {
            what: "description",
            index: l,
            len: m.n_descriptions(),
        });
    }
    let joint: Vec<f64> = m
        .description_likelihood()
        .iter()
        .zip(m.language_prior())
        .map(|(row, p)| row[l] * p)
        .collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(BayesError::ZeroEvidence(l));
    }
    Ok(joint.into_iter().map(|x| x / evidence).collect())
}

/// `p(x) = sum_mu p_S(x | mu) prior(mu)` over every grid of the model's size.
pub fn prior_predictive(
    m: &AbstractionModel,
    which: PriorKind,
) -> Result<DistributionOverGrids, BayesError> {
    let n_states = exact_states(m)?;
    let prior = m.prior(which);
    let templates: Vec<usize> = m
        .templates()
        .iter()
        .map(|t| t.to_index().expect("exact mode grids are indexable"))
        .collect();
    let mass = (0..n_states)
        .map(|x| {
            templates
                .iter()
                .zip(prior)
                .map(|(&t, p)| {
                    let h = (x ^ t).count_ones() as usize;
                    m.log_likelihood_at_distance(h).exp() * p
                })
                .sum()
        })
        .collect();
    DistributionOverGrids::exact(m.size(), mass)
}

/// Number of grid states, if the model is small enough for exact enumeration.
pub(crate) fn exact_states(m: &AbstractionModel) -> Result<usize, BayesError> {
    if m.n_tiles() > EXACT_MAX_TILES {
        return Err(BayesError::StateSpaceTooLarge { tiles: m.n_tiles() });
    }
    Ok(1usize << m.n_tiles())
}
