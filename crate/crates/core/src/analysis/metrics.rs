//! Per-chain dynamics and board statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::chain::{ChainRecord, Mode};
use crate::complexity::{Measure, Scorer};
use crate::exec::Execution;
use crate::grid::{hamming, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySeries {
    pub chain_id: String,
    pub distances: Vec<usize>,
    /// Tiles changed per visual step.
    pub mean: f64,
}

fn boards(record: &ChainRecord, include_seed: bool) -> Vec<&Grid> {
    let mut b = record.boards();
    if !include_seed {
        b.remove(0);
    }
    b
}

/// Hamming distances between consecutive boards; descriptions are skipped.
pub fn chain_velocity(
    record: &ChainRecord,
    include_seed: bool,
) -> Result<VelocitySeries, AnalysisError> {
    let b = boards(record, include_seed);
    if b.len() < 2 {
        return Err(AnalysisError::TooFewBoards {
            chain_id: record.chain_id.clone(),
            found: b.len(),
        });
    }
    let distances: Vec<usize> = b
        .windows(2)
        .map(|w| hamming(w[0], w[1]).expect("boards in one chain share a size"))
        .collect();
    let mean = distances.iter().sum::<usize>() as f64 / distances.len() as f64;
    Ok(VelocitySeries {
        chain_id: record.chain_id.clone(),
        distances,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMean {
    pub chain_id: String,
    pub mode: Mode,
    pub mean: f64,
}

/// Mean of `measure` over each chain's boards, seed excluded unless asked.
pub fn mean_board_complexity(
    records: &[ChainRecord],
    measure: Measure,
    scorer: &Scorer<'_>,
    include_seed: bool,
    exec: Execution,
) -> Result<Vec<ChainMean>, AnalysisError> {
    exec.map(records, |r| {
        let b = boards(r, include_seed);
        if b.is_empty() {
            return Err(AnalysisError::TooFewBoards {
                chain_id: r.chain_id.clone(),
                found: 0,
            });
        }
        let mut total = 0.0;
        for g in &b {
            total += scorer
                .measure(g, measure)
                .map_err(|source| AnalysisError::Metric {
                    chain_id: r.chain_id.clone(),
                    source,
                })?;
        }
        Ok(ChainMean {
            chain_id: r.chain_id.clone(),
            mode: r.mode,
            mean: total / b.len() as f64,
        })
    })
    .into_iter()
    .collect()
}

/// Exact-equality tally of boards, most frequent first, ties in grid-text order.
pub fn board_frequencies<'a>(
    records: impl IntoIterator<Item = &'a ChainRecord>,
    include_seed: bool,
) -> Vec<(Grid, usize)> {
    let mut counts: HashMap<&Grid, usize> = HashMap::new();
    for r in records {
        for g in boards(r, include_seed) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let mut out: Vec<(Grid, usize)> = counts.into_iter().map(|(g, c)| (g.clone(), c)).collect();
    out.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| a.0.to_text().cmp(&b.0.to_text()))
    });
    out
}
