use crate::grid::Grid;

use super::ComplexityError;

/// `-p log2 p`, with `0 log 0 = 0`.
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy of the red/white tile distribution, in bits per tile.
pub fn shannon_entropy(g: &Grid) -> f64 {
    let p_red = g.red_count() as f64 / g.n_tiles() as f64;
    plogp(p_red) + plogp(1.0 - p_red)
}

/// The four cardinal and four diagonal neighbour offsets.
pub const DIRECTIONS: [(isize, isize); 8] = [
    (-1, 0),
    (1, 0),
    (0, -1),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// Joint counts `[s1][s2]` over all tiles whose neighbour at `offset` lies in
/// the grid; `s1` is the tile, `s2` its neighbour. No wraparound.
fn pair_counts(g: &Grid, (dr, dc): (isize, isize)) -> [[usize; 2]; 2] {
    let n = g.size() as isize;
    let mut counts = [[0usize; 2]; 2];
    for r in 0..n {
        for c in 0..n {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= n || nc >= n {
                continue;
            }
            let s1 = g.get(r as usize, c as usize) as usize;
            let s2 = g.get(nr as usize, nc as usize) as usize;
            counts[s1][s2] += 1;
        }
    }
    counts
}

/// Local spatial complexity: conditional entropy `H(s1 | s2)` of a tile given
/// its neighbour, averaged over the eight neighbour directions.
pub fn local_spatial_complexity(g: &Grid) -> Result<f64, ComplexityError> {
    if g.size() < 2 {
        return Err(ComplexityError::GridTooSmall(g.size()));
    }
    let mut total = 0.0;
    for &d in &DIRECTIONS {
        let counts = pair_counts(g, d);
        let n_pairs: usize = counts.iter().flatten().sum();
        let n = n_pairs as f64;
        for s2 in 0..2 {
            let marginal = (counts[0][s2] + counts[1][s2]) as f64 / n;
            for row in &counts {
                let joint = row[s2] as f64 / n;
                if joint > 0.0 {
                    total -= joint * (joint / marginal).log2();
                }
            }
        }
    }
    Ok(total / DIRECTIONS.len() as f64)
}
