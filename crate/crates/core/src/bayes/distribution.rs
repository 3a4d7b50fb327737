use std::collections::BTreeMap;

use super::{BayesError, EXACT_MAX_TILES};
use crate::grid::Grid;

const MASS_TOLERANCE: f64 = 1e-9;

/// A probability distribution over the grids of one size.
///
/// Small spaces (at most [`EXACT_MAX_TILES`] tiles) use a dense vector
/// indexed by [`Grid::to_index`]; larger ones are sample histograms keyed by
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionOverGrids {
    size: usize,
    support: Support,
}

#[derive(Debug, Clone, PartialEq)]
enum Support {
    Exact(Vec<f64>),
    Sampled(BTreeMap<Grid, f64>),
}

impl DistributionOverGrids {
    pub fn exact(size: usize, mass: Vec<f64>) -> Result<Self, BayesError> {
        let tiles = size * size;
        if tiles > EXACT_MAX_TILES {
            return Err(BayesError::StateSpaceTooLarge { tiles });
        }
        if mass.len() != 1 << tiles {
            return Err(BayesError::LengthMismatch {
                what: "distribution support",
                expected: 1 << tiles,
                found: mass.len(),
            });
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE || mass.iter().any(|&m| m < 0.0) {
            return Err(BayesError::NotNormalized {
                what: "distribution",
                sum,
            });
        }
        Ok(DistributionOverGrids {
            size,
            support: Support::Exact(mass),
        })
    }

    /// Empirical distribution of `samples`; dense when the space is small.
    pub fn from_samples<'a>(
        size: usize,
        samples: impl IntoIterator<Item = &'a Grid>,
    ) -> Result<Self, BayesError> {
        let tiles = size * size;
        let mut total = 0usize;
        if tiles <= EXACT_MAX_TILES {
            let mut counts = vec![0usize; 1 << tiles];
            for g in samples {
                counts[g.to_index().expect("small grids are indexable")] += 1;
                total += 1;
            }
            if total == 0 {
                return Err(BayesError::NoSamples);
            }
            let mass = counts
                .into_iter()
                .map(|c| c as f64 / total as f64)
                .collect();
            return DistributionOverGrids::exact(size, mass);
        }
        let mut counts: BTreeMap<Grid, usize> = BTreeMap::new();
        for g in samples {
            *counts.entry(g.clone()).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return Err(BayesError::NoSamples);
        }
        Ok(DistributionOverGrids {
            size,
            support: Support::Sampled(
                counts
                    .into_iter()
                    .map(|(g, c)| (g, c as f64 / total as f64))
                    .collect(),
            ),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Dense masses, for exact distributions.
    pub fn masses(&self) -> Option<&[f64]> {
        match &self.support {
            Support::Exact(m) => Some(m),
            Support::Sampled(_) => None,
        }
    }

    pub fn probability(&self, g: &Grid) -> f64 {
        match &self.support {
            Support::Exact(m) => g
                .to_index()
                .ok()
                .and_then(|i| m.get(i).copied())
                .unwrap_or(0.0),
            Support::Sampled(map) => map.get(g).copied().unwrap_or(0.0),
        }
    }

    /// Grids with positive mass and their probabilities.
    pub fn entries(&self) -> Vec<(Grid, f64)> {
        match &self.support {
            Support::Exact(m) => m
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (Grid::from_index(self.size, i).expect("indexable"), p))
                .collect(),
            Support::Sampled(map) => map.iter().map(|(g, &p)| (g.clone(), p)).collect(),
        }
    }
}

/// Total variation distance `(1/2) sum |p - q|`.
pub fn tv_distance(
    p: &DistributionOverGrids,
    q: &DistributionOverGrids,
) -> Result<f64, BayesError> {
    if p.size != q.size {
        return Err(BayesError::SupportMismatch);
    }
    let l1 = match (&p.support, &q.support) {
        (Support::Exact(a), Support::Exact(b)) => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        _ => {
            let mut keys: BTreeMap<Grid, (f64, f64)> = BTreeMap::new();
            for (g, m) in p.entries() {
                keys.entry(g).or_default().0 = m;
            }
            for (g, m) in q.entries() {
                keys.entry(g).or_default().1 = m;
            }
            keys.values().map(|(a, b)| (a - b).abs()).sum::<f64>()
        }
    };
    Ok(0.5 * l1)
}
