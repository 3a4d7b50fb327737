//! Board complexity: BDM Kolmogorov complexity, Shannon entropy and local
//! spatial complexity. All logarithms are base 2.

pub mod bdm;
pub mod ctm;
pub mod entropy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bdm::{bdm_kc, bdm_kc_with, decompose_blocks, Block, Boundary};
pub use ctm::{load_ctm_table, parse_ctm_table, Coverage, CtmError, CtmTable, Provenance};
pub use entropy::{local_spatial_complexity, shannon_entropy};

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexityError {
    #[error("grid of size {0} is too small for local spatial complexity")]
    GridTooSmall(usize),
    #[error("CTM table has no entry for {height}x{width} blocks")]
    MissingCtmEntry { height: usize, width: usize },
    #[error("grid of size {0} produces no blocks under this boundary")]
    NoBlocks(usize),
}

/// The three measures of one board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTriple {
    pub kc: f64,
    pub entropy: f64,
    pub lsc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Kc,
    Entropy,
    Lsc,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Kc, Measure::Entropy, Measure::Lsc];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Kc => "KC",
            Measure::Entropy => "Entropy",
            Measure::Lsc => "LSC",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Measure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kc" => Ok(Measure::Kc),
            "entropy" => Ok(Measure::Entropy),
            "lsc" => Ok(Measure::Lsc),
            other => Err(format!("unknown measure {other:?}")),
        }
    }
}

/// A CTM table together with the boundary convention used to cut boards.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    pub table: &'a CtmTable,
    pub boundary: Boundary,
}

impl<'a> Scorer<'a> {
    pub fn new(table: &'a CtmTable, boundary: Boundary) -> Self {
        Scorer { table, boundary }
    }

    pub fn measure(&self, g: &Grid, m: Measure) -> Result<f64, ComplexityError> {
        match m {
            Measure::Kc => bdm_kc_with(g, self.table, self.boundary),
            Measure::Entropy => Ok(shannon_entropy(g)),
            Measure::Lsc => local_spatial_complexity(g),
        }
    }

    pub fn triple(&self, g: &Grid) -> Result<ComplexityTriple, ComplexityError> {
        Ok(ComplexityTriple {
            kc: self.measure(g, Measure::Kc)?,
            entropy: shannon_entropy(g),
            lsc: local_spatial_complexity(g)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_grid;

    #[test]
    fn triple_respects_ranges() {
        let t = CtmTable::surrogate();
        let s = Scorer::new(&t, Boundary::Maximal);
        for seed in 0..100 {
            let tr = s.triple(&random_grid(seed, 7, 0.4)).unwrap();
            assert!(tr.kc > 0.0);
            assert!((0.0..=1.0).contains(&tr.entropy));
            assert!(tr.lsc >= 0.0);
        }
    }

    #[test]
    fn measure_names_parse() {
        for m in Measure::ALL {
            assert_eq!(m.label().parse::<Measure>().unwrap(), m);
        }
    }
}
