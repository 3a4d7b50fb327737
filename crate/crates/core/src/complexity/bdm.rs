//! Block Decomposition Method estimate of Kolmogorov complexity.
//!
//! A grid is cut into non-overlapping blocks of at most 4×4 tiles, each
//! distinct `(shape, pattern)` block is looked up in a [`CtmTable`], and the
//! estimate is `sum over distinct blocks of (ctm + log2 multiplicity)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ctm::{CtmTable, MAX_BLOCK};
use super::ComplexityError;
use crate::grid::Grid;

/// How tiles left over at the right and bottom edges are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Every tile is covered; edge blocks are the largest rectangles that fit
    /// (a 7×7 grid yields 4×4, 4×3, 3×4 and 3×3 blocks).
    #[default]
    Maximal,
    /// Only full 4×4 blocks are kept; leftover tiles are discarded.
    Ignore,
    /// Leftover rectangles are recursively re-cut into the largest square
    /// that fits their shorter side, dropping parts thinner than
    /// `min_length`. Needs only square shapes in the table.
    Recursive { min_length: usize },
}

/// One block: its shape and its row-major bits (first tile most significant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    pub height: usize,
    pub width: usize,
    pub pattern: u16,
}

impl Block {
    fn cut(g: &Grid, row: usize, col: usize, height: usize, width: usize) -> Block {
        let mut pattern = 0u16;
        for r in row..row + height {
            for c in col..col + width {
                pattern = (pattern << 1) | g.get(r, c) as u16;
            }
        }
        Block {
            height,
            width,
            pattern,
        }
    }
}

fn push_maximal(g: &Grid, out: &mut Vec<Block>) {
    let n = g.size();
    for row in (0..n).step_by(MAX_BLOCK) {
        for col in (0..n).step_by(MAX_BLOCK) {
            let h = MAX_BLOCK.min(n - row);
            let w = MAX_BLOCK.min(n - col);
            out.push(Block::cut(g, row, col, h, w));
        }
    }
}

fn push_recursive(
    g: &Grid,
    (row0, col0, height, width): (usize, usize, usize, usize),
    side: usize,
    min_length: usize,
    out: &mut Vec<Block>,
) {
    for row in (row0..row0 + height).step_by(side) {
        for col in (col0..col0 + width).step_by(side) {
            let h = side.min(row0 + height - row);
            let w = side.min(col0 + width - col);
            if h == side && w == side {
                out.push(Block::cut(g, row, col, side, side));
            } else {
                let shorter = h.min(w);
                if shorter < min_length {
                    continue;
                }
                push_recursive(g, (row, col, h, w), shorter, min_length, out);
            }
        }
    }
}

/// Blocks in scan order (top-left to bottom-right), before aggregation.
pub fn partition(g: &Grid, boundary: Boundary) -> Vec<Block> {
    let mut out = Vec::new();
    match boundary {
        Boundary::Maximal => push_maximal(g, &mut out),
        Boundary::Ignore => {
            let n = g.size();
            let full = n / MAX_BLOCK * MAX_BLOCK;
            for row in (0..full).step_by(MAX_BLOCK) {
                for col in (0..full).step_by(MAX_BLOCK) {
                    out.push(Block::cut(g, row, col, MAX_BLOCK, MAX_BLOCK));
                }
            }
        }
        Boundary::Recursive { min_length } => push_recursive(
            g,
            (0, 0, g.size(), g.size()),
            MAX_BLOCK,
            min_length.max(1),
            &mut out,
        ),
    }
    out
}

/// Distinct blocks with their multiplicities, in order of first appearance.
pub fn decompose_blocks(g: &Grid, boundary: Boundary) -> Vec<(Block, usize)> {
    let mut order: Vec<(Block, usize)> = Vec::new();
    let mut seen: HashMap<Block, usize> = HashMap::new();
    for b in partition(g, boundary) {
        match seen.get(&b) {
            Some(&i) => order[i].1 += 1,
            None => {
                seen.insert(b, order.len());
                order.push((b, 1));
            }
        }
    }
    order
}

/// BDM complexity with the default (maximal) boundary.
pub fn bdm_kc(g: &Grid, table: &CtmTable) -> Result<f64, ComplexityError> {
    bdm_kc_with(g, table, Boundary::Maximal)
}

pub fn bdm_kc_with(g: &Grid, table: &CtmTable, boundary: Boundary) -> Result<f64, ComplexityError> {
    let blocks = decompose_blocks(g, boundary);
    if blocks.is_empty() {
        return Err(ComplexityError::NoBlocks(g.size()));
    }
    blocks_kc(&blocks, table)
}

/// Sum of `ctm + log2(multiplicity)` over already aggregated blocks.
pub fn blocks_kc(blocks: &[(Block, usize)], table: &CtmTable) -> Result<f64, ComplexityError> {
    blocks.iter().try_fold(0.0, |acc, (b, count)| {
        let ctm =
            table
                .get(b.height, b.width, b.pattern)
                .ok_or(ComplexityError::MissingCtmEntry {
                    height: b.height,
                    width: b.width,
                })?;
        Ok(acc + ctm + (*count as f64).log2())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexity::ctm::{Coverage, Provenance};
    use crate::grid::random_grid;
    use approx::assert_abs_diff_eq;

    fn shapes(g: &Grid, b: Boundary) -> Vec<(usize, usize)> {
        partition(g, b)
            .iter()
            .map(|b| (b.height, b.width))
            .collect()
    }

    #[test]
    fn seven_by_seven_maximal_shapes() {
        let g = random_grid(1, 7, 0.5);
        assert_eq!(
            shapes(&g, Boundary::Maximal),
            vec![(4, 4), (4, 3), (3, 4), (3, 3)]
        );
        let covered: usize = partition(&g, Boundary::Maximal)
            .iter()
            .map(|b| b.height * b.width)
            .sum();
        assert_eq!(covered, 49);
    }

    #[test]
    fn eight_by_eight_is_four_full_blocks() {
        let g = random_grid(2, 8, 0.5);
        assert_eq!(shapes(&g, Boundary::Maximal), vec![(4, 4); 4]);
        let blank = decompose_blocks(&Grid::blank(8), Boundary::Maximal);
        assert_eq!(blank.len(), 1);
        assert_eq!(blank[0].1, 4);
    }

    #[test]
    fn recursive_boundary_on_seven() {
        // 4x4, then the 4x3 strip re-cut as 3x3 (its last row is too thin),
        // likewise 3x4, then the 3x3 corner.
        let g = random_grid(3, 7, 0.5);
        assert_eq!(
            shapes(&g, Boundary::Recursive { min_length: 2 }),
            vec![(4, 4), (3, 3), (3, 3), (3, 3)]
        );
        assert_eq!(shapes(&g, Boundary::Ignore), vec![(4, 4)]);
    }

    #[test]
    fn block_bits_are_row_major_msb_first() {
        let mut g = Grid::blank(4);
        g.set(0, 0, true);
        let b = partition(&g, Boundary::Maximal)[0];
        assert_eq!(b.pattern, 1 << 15);
        g = Grid::blank(4);
        g.set(3, 3, true);
        assert_eq!(partition(&g, Boundary::Maximal)[0].pattern, 1);
    }

    #[test]
    fn unique_blocks_sum_plainly() {
        let t = CtmTable::surrogate();
        let g = random_grid(11, 7, 0.5);
        let blocks = decompose_blocks(&g, Boundary::Maximal);
        assert!(blocks.iter().all(|(_, m)| *m == 1));
        let plain: f64 = blocks
            .iter()
            .map(|(b, _)| t.get(b.height, b.width, b.pattern).unwrap())
            .sum();
        assert_abs_diff_eq!(bdm_kc(&g, &t).unwrap(), plain, epsilon = 1e-12);
    }

    #[test]
    fn blank_eight_is_ctm_plus_log_four() {
        let t = CtmTable::surrogate();
        let want = t.get(4, 4, 0).unwrap() + 2.0;
        assert_abs_diff_eq!(bdm_kc(&Grid::blank(8), &t).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn repeated_blocks_grow_logarithmically() {
        let t = CtmTable::surrogate();
        let base = t.get(4, 4, 0).unwrap();
        for (n, k) in [(4usize, 1usize), (8, 4), (12, 9), (16, 16)] {
            let kc = bdm_kc(&Grid::blank(n), &t).unwrap();
            assert_abs_diff_eq!(kc, base + (k as f64).log2(), epsilon = 1e-12);
        }
    }

    #[test]
    fn permuting_block_positions_preserves_kc() {
        let t = CtmTable::surrogate();
        let g = random_grid(5, 8, 0.5);
        // Swap the top-left and bottom-right 4x4 quadrants.
        let swapped = Grid::from_fn(8, |r, c| {
            let (qr, qc) = (r / 4, c / 4);
            let (sr, sc) = match (qr, qc) {
                (0, 0) => (1, 1),
                (1, 1) => (0, 0),
                other => other,
            };
            g.get(sr * 4 + r % 4, sc * 4 + c % 4)
        });
        assert_abs_diff_eq!(
            bdm_kc(&g, &t).unwrap(),
            bdm_kc(&swapped, &t).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn square_table_cannot_score_maximal_seven() {
        let records =
            (1..=4).flat_map(|k| (0..(1u32 << (k * k))).map(move |p| (k, k, p as u16, 2.0)));
        let t =
            CtmTable::from_records(Provenance::Published, Coverage::Square, "sq", records).unwrap();
        let g = random_grid(1, 7, 0.5);
        assert_eq!(
            bdm_kc(&g, &t),
            Err(ComplexityError::MissingCtmEntry {
                height: 4,
                width: 3
            })
        );
        assert!(bdm_kc_with(&g, &t, Boundary::Recursive { min_length: 2 }).is_ok());
    }
}
