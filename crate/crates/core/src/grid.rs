//! Binary tile grids: the stimulus space of every chain.
//!
//! A [`Grid`] is an `N×N` matrix of tiles where `1` is red and `0` is white.
//! Tiles are stored row-major. Grids with at most 64 tiles can be mapped to
//! and from a dense state index, which the exact Markov machinery relies on.

use std::fmt;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// RGB value used for red tiles.
pub const RED: [u8; 3] = [255, 0, 0];
/// RGB value used for white tiles.
pub const WHITE: [u8; 3] = [255, 255, 255];

/// Default tiles per side for all experiments.
pub const DEFAULT_SIZE: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("expected {expected} rows, found {found}")]
    MalformedLineCount { expected: usize, found: usize },
    #[error("line {line}, column {column}: unexpected character {found:?}")]
    MalformedCharacter {
        line: usize,
        column: usize,
        found: char,
    },
    #[error("line {line} has {found} tiles, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("grid is empty")]
    Empty,
    #[error("grid sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("grid of size {0} has too many tiles for a state index")]
    TooLargeForIndex(usize),
    #[error("image error: {0}")]
    Image(String),
}

/// An `N×N` binary grid. `true` is a red tile.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grid {
    size: usize,
    tiles: Vec<bool>,
}

impl Grid {
    /// All-white grid.
    pub fn blank(size: usize) -> Self {
        assert!(size > 0, "grid size must be positive");
        Grid {
            size,
            tiles: vec![false; size * size],
        }
    }

    /// All-red grid.
    pub fn filled(size: usize) -> Self {
        let mut g = Grid::blank(size);
        g.tiles.iter_mut().for_each(|t| *t = true);
        g
    }

    /// Grid whose tile at `(r, c)` is red when `r + c` is odd (or even if `phase` is set).
    pub fn checkerboard(size: usize, phase: bool) -> Self {
        Grid::from_fn(size, |r, c| ((r + c) % 2 == 1) ^ phase)
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(size > 0, "grid size must be positive");
        let mut tiles = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                tiles.push(f(r, c));
            }
        }
        Grid { size, tiles }
    }

    /// Build from row-major tiles; `tiles.len()` must be a perfect square.
    pub fn from_tiles(tiles: Vec<bool>) -> Result<Self, GridError> {
        if tiles.is_empty() {
            return Err(GridError::Empty);
        }
        let size = (tiles.len() as f64).sqrt().round() as usize;
        if size * size != tiles.len() {
            return Err(GridError::MalformedLineCount {
                expected: size,
                found: tiles.len(),
            });
        }
        Ok(Grid { size, tiles })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn tiles(&self) -> &[bool] {
        &self.tiles
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.tiles[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, red: bool) {
        self.tiles[row * self.size + col] = red;
    }

    pub fn toggle(&mut self, row: usize, col: usize) {
        let i = row * self.size + col;
        self.tiles[i] = !self.tiles[i];
    }

    pub fn red_count(&self) -> usize {
        self.tiles.iter().filter(|&&t| t).count()
    }

    pub fn complement(&self) -> Grid {
        Grid {
            size: self.size,
            tiles: self.tiles.iter().map(|t| !t).collect(),
        }
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.size, |r, c| self.get(c, r))
    }

    /// Quarter turn clockwise.
    pub fn rotate(&self) -> Grid {
        let n = self.size;
        Grid::from_fn(n, |r, c| self.get(n - 1 - c, r))
    }

    pub fn flip_horizontal(&self) -> Grid {
        let n = self.size;
        Grid::from_fn(n, |r, c| self.get(r, n - 1 - c))
    }

    /// The eight images of this grid under the dihedral group of the square.
    pub fn dihedral_images(&self) -> [Grid; 8] {
        let r1 = self.rotate();
        let r2 = r1.rotate();
        let r3 = r2.rotate();
        let f0 = self.flip_horizontal();
        let f1 = r1.flip_horizontal();
        let f2 = r2.flip_horizontal();
        let f3 = r3.flip_horizontal();
        [self.clone(), r1, r2, r3, f0, f1, f2, f3]
    }

    /// Dense state index: bit `i` holds tile `i` in row-major order.
    pub fn to_index(&self) -> Result<usize, GridError> {
        if self.n_tiles() > usize::BITS as usize - 1 {
            return Err(GridError::TooLargeForIndex(self.size));
        }
        Ok(self
            .tiles
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &t)| acc | ((t as usize) << i)))
    }

    pub fn from_index(size: usize, index: usize) -> Result<Grid, GridError> {
        if size * size > usize::BITS as usize - 1 {
            return Err(GridError::TooLargeForIndex(size));
        }
        Ok(Grid {
            size,
            tiles: (0..size * size).map(|i| (index >> i) & 1 == 1).collect(),
        })
    }

    /// Canonical text: `size` lines of `0`/`1`, no trailing newline.
    pub fn to_text(&self) -> String {
        serialize_grid(self)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid({})", self.to_text().replace('\n', "/"))
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_grid(&text).map_err(serde::de::Error::custom)
    }
}

/// Split one row into tile characters, accepting adjacency (`0101`) as well
/// as space or comma separation (`0 1 0 1`, `0,1,0,1`).
pub(crate) fn row_tiles(line: &str, line_no: usize) -> Result<Vec<bool>, GridError> {
    let mut out = Vec::new();
    for (column, ch) in line.chars().enumerate() {
        match ch {
            '0' => out.push(false),
            '1' => out.push(true),
            ' ' | '\t' | ',' => {}
            other => {
                return Err(GridError::MalformedCharacter {
                    line: line_no,
                    column: column + 1,
                    found: other,
                })
            }
        }
    }
    Ok(out)
}

/// Parse grid text. Rows may be written as adjacent digits or separated by
/// spaces or commas; surrounding blank lines are ignored. Line and column
/// numbers in errors are 1-based.
pub fn parse_grid(text: &str) -> Result<Grid, GridError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(GridError::Empty);
    }
    let mut rows = Vec::with_capacity(lines.len());
    for &(line_no, line) in &lines {
        rows.push((line_no, row_tiles(line, line_no)?));
    }
    let width = rows[0].1.len();
    for (line_no, row) in &rows {
        if row.len() != width {
            return Err(GridError::RaggedRows {
                line: *line_no,
                expected: width,
                found: row.len(),
            });
        }
    }
    if rows.len() != width {
        return Err(GridError::MalformedLineCount {
            expected: width,
            found: rows.len(),
        });
    }
    Ok(Grid {
        size: width,
        tiles: rows.into_iter().flat_map(|(_, r)| r).collect(),
    })
}

pub fn serialize_grid(g: &Grid) -> String {
    let mut s = String::with_capacity(g.size * (g.size + 1));
    for (r, row) in g.tiles.chunks(g.size).enumerate() {
        if r > 0 {
            s.push('\n');
        }
        s.extend(row.iter().map(|&t| if t { '1' } else { '0' }));
    }
    s
}

/// Number of positions where the tiles of `a` and `b` differ.
pub fn hamming(a: &Grid, b: &Grid) -> Result<usize, GridError> {
    if a.size != b.size {
        return Err(GridError::SizeMismatch(a.size, b.size));
    }
    Ok(a.tiles.iter().zip(&b.tiles).filter(|(x, y)| x != y).count())
}

/// Grid with each tile independently red with probability `p`, drawn from `rng`.
pub fn sample_grid<R: Rng + ?Sized>(rng: &mut R, size: usize, p: f64) -> Grid {
    assert!(
        (0.0..=1.0).contains(&p),
        "red probability must lie in [0, 1]"
    );
    Grid::from_fn(size, |_, _| rng.random_bool(p))
}

/// Seeded i.i.d. Bernoulli(`p`) grid; identical seeds give identical grids.
pub fn random_grid(seed: u64, size: usize, p: f64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_grid(&mut rng, size, p)
}

/// A rendered grid: a PNG payload where every tile is a solid square.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridImage {
    pub width: u32,
    pub height: u32,
    pub cell_px: u32,
    pub png: Vec<u8>,
}

pub fn render_image(g: &Grid, cell_px: u32) -> GridImage {
    assert!(cell_px >= 1, "cell_px must be at least 1");
    let side = g.size as u32 * cell_px;
    let img = RgbImage::from_fn(side, side, |x, y| {
        let (r, c) = ((y / cell_px) as usize, (x / cell_px) as usize);
        if g.get(r, c) {
            Rgb(RED)
        } else {
            Rgb(WHITE)
        }
    });
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    GridImage {
        width: side,
        height: side,
        cell_px,
        png,
    }
}

/// Recover a grid from a rendered image by sampling each cell's centre pixel.
/// A pixel counts as red when its green channel is below half intensity.
pub fn grid_from_png(png: &[u8], size: usize) -> Result<Grid, GridError> {
    let img = image::load_from_memory_with_format(png, ImageFormat::Png)
        .map_err(|e| GridError::Image(e.to_string()))?
        .to_rgb8();
    if img.width() != img.height() || img.width() < size as u32 {
        return Err(GridError::Image(format!(
            "image {}x{} cannot hold a {size}x{size} grid",
            img.width(),
            img.height()
        )));
    }
    let cell = img.width() as f64 / size as f64;
    Ok(Grid::from_fn(size, |r, c| {
        let x = ((c as f64 + 0.5) * cell) as u32;
        let y = ((r as f64 + 0.5) * cell) as u32;
        img.get_pixel(x, y).0[1] < 128
    }))
}
