//! Lookup tables of algorithmic-complexity values for small binary blocks.
//!
//! File format (text, one record per line):
//!
//! ```text
//! ctm-table v1 provenance=<published|surrogate> coverage=<full|square> source=<name>
//! <h> <w> <row-major bitstring> <value in bits>
//! ...
//! ```
//!
//! Blank lines and lines starting with `#` after the header are ignored. A
//! `full` table covers every shape `h×w` with `1 <= h, w <= 4`; a `square`
//! table covers only `1×1` through `4×4`. Every pattern of every covered
//! shape must be present.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_BLOCK: usize = 4;
const HEADER_TAG: &str = "ctm-table";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum CtmError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("table is missing patterns for shapes {}", fmt_shapes(.missing))]
    IncompleteCoverage { missing: Vec<(usize, usize)> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn fmt_shapes(shapes: &[(usize, usize)]) -> String {
    shapes
        .iter()
        .map(|(h, w)| format!("{h}x{w}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Published,
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Full,
    Square,
}

impl Coverage {
    pub fn shapes(self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for h in 1..=MAX_BLOCK {
            for w in 1..=MAX_BLOCK {
                if self == Coverage::Full || h == w {
                    out.push((h, w));
                }
            }
        }
        out
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Published => "published",
            Provenance::Surrogate => "surrogate",
        })
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coverage::Full => "full",
            Coverage::Square => "square",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "published" => Ok(Provenance::Published),
            "surrogate" => Ok(Provenance::Surrogate),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

impl FromStr for Coverage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Coverage::Full),
            "square" => Ok(Coverage::Square),
            other => Err(format!("unknown coverage {other:?}")),
        }
    }
}

/// Complexity values for every pattern of the covered block shapes.
///
/// Patterns are indexed by their row-major bitstring read as a binary number
/// (first character most significant).
#[derive(Clone)]
pub struct CtmTable {
    provenance: Provenance,
    coverage: Coverage,
    source: String,
    values: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for CtmTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CtmTable")
            .field("provenance", &self.provenance)
            .field("coverage", &self.coverage)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

fn slot(h: usize, w: usize) -> usize {
    (h - 1) * MAX_BLOCK + (w - 1)
}

fn valid_shape(h: usize, w: usize) -> bool {
    (1..=MAX_BLOCK).contains(&h) && (1..=MAX_BLOCK).contains(&w)
}

impl CtmTable {
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn covers(&self, h: usize, w: usize) -> bool {
        valid_shape(h, w) && self.values[slot(h, w)].is_some()
    }

    /// Value for the `h×w` block whose bits are `pattern`.
    pub fn get(&self, h: usize, w: usize, pattern: u16) -> Option<f64> {
        if !valid_shape(h, w) {
            return None;
        }
        self.values[slot(h, w)]
            .as_ref()
            .and_then(|v| v.get(pattern as usize).copied())
    }

    /// All values of one shape, indexed by pattern.
    pub fn shape_values(&self, h: usize, w: usize) -> Option<&[f64]> {
        if !valid_shape(h, w) {
            return None;
        }
        self.values[slot(h, w)].as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deterministic stand-in for published values, covering all shapes.
    ///
    /// Each pattern scores `cells * H(block) + transitions / (max + 1)` where
    /// `H` is the block's colour entropy and `transitions` counts adjacent
    /// unequal tile pairs. Patterns are ranked by that score (pattern index
    /// breaks ties) and the rank adds a small strictly increasing offset, so
    /// values within a shape are distinct and the all-white block is the
    /// minimum. A per-shape offset of `1 + log2(cells)` keeps every value
    /// positive.
    pub fn surrogate() -> CtmTable {
        let mut values = vec![None; MAX_BLOCK * MAX_BLOCK];
        for (h, w) in Coverage::Full.shapes() {
            values[slot(h, w)] = Some(surrogate_shape(h, w));
        }
        CtmTable {
            provenance: Provenance::Surrogate,
            coverage: Coverage::Full,
            source: "entropy-rank-surrogate".to_string(),
            values,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{HEADER_TAG} {FORMAT_VERSION} provenance={} coverage={} source={}",
            self.provenance, self.coverage, self.source
        )?;
        for (h, w) in self.coverage.shapes() {
            if let Some(vals) = &self.values[slot(h, w)] {
                for (pattern, v) in vals.iter().enumerate() {
                    writeln!(out, "{h} {w} {} {v:?}", pattern_bits(pattern as u16, h * w))?;
                }
            }
        }
        Ok(())
    }

    /// Assemble a table from `(h, w, pattern, value)` records, validating coverage.
    pub fn from_records(
        provenance: Provenance,
        coverage: Coverage,
        source: impl Into<String>,
        records: impl IntoIterator<Item = (usize, usize, u16, f64)>,
    ) -> Result<CtmTable, CtmError> {
        let mut values: Vec<Option<Vec<f64>>> = vec![None; MAX_BLOCK * MAX_BLOCK];
        for (i, (h, w, pattern, v)) in records.into_iter().enumerate() {
            insert(&mut values, h, w, pattern, v).map_err(|message| CtmError::Parse {
                line: i + 1,
                message,
            })?;
        }
        finish(provenance, coverage, source.into(), values)
    }
}

fn insert(
    values: &mut [Option<Vec<f64>>],
    h: usize,
    w: usize,
    pattern: u16,
    v: f64,
) -> Result<(), String> {
    if !valid_shape(h, w) {
        return Err(format!("shape {h}x{w} outside 1..=4"));
    }
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("value {v} must be finite and positive"));
    }
    let n = 1usize << (h * w);
    if pattern as usize >= n {
        return Err(format!("pattern {pattern} out of range for {h}x{w}"));
    }
    let entry = values[slot(h, w)].get_or_insert_with(|| vec![f64::NAN; n]);
    if !entry[pattern as usize].is_nan() {
        return Err(format!(
            "duplicate entry for {h}x{w} pattern {}",
            pattern_bits(pattern, h * w)
        ));
    }
    entry[pattern as usize] = v;
    Ok(())
}

fn finish(
    provenance: Provenance,
    coverage: Coverage,
    source: String,
    mut values: Vec<Option<Vec<f64>>>,
) -> Result<CtmTable, CtmError> {
    let missing: Vec<(usize, usize)> = coverage
        .shapes()
        .into_iter()
        .filter(|&(h, w)| match &values[slot(h, w)] {
            Some(v) => v.iter().any(|x| x.is_nan()),
            None => true,
        })
        .collect();
    if !missing.is_empty() {
        return Err(CtmError::IncompleteCoverage { missing });
    }
    // Shapes outside the declared coverage are dropped rather than half-trusted.
    for (h, w) in Coverage::Full.shapes() {
        if !coverage.shapes().contains(&(h, w)) {
            values[slot(h, w)] = None;
        }
    }
    Ok(CtmTable {
        provenance,
        coverage,
        source,
        values,
    })
}

pub fn pattern_bits(pattern: u16, cells: usize) -> String {
    (0..cells)
        .map(|i| {
            if (pattern >> (cells - 1 - i)) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

fn parse_bits(s: &str) -> Option<u16> {
    if s.is_empty() || s.len() > 16 {
        return None;
    }
    s.chars().try_fold(0u16, |acc, c| match c {
        '0' => Some(acc << 1),
        '1' => Some((acc << 1) | 1),
        _ => None,
    })
}

fn parse_header(line: &str) -> Result<(Provenance, Coverage, String), String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(HEADER_TAG) {
        return Err(format!("header must start with {HEADER_TAG:?}"));
    }
    match parts.next() {
        Some(FORMAT_VERSION) => {}
        other => return Err(format!("unsupported format version {other:?}")),
    }
    let (mut provenance, mut coverage, mut source) = (None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, found {kv:?}"))?;
        match k {
            "provenance" => provenance = Some(v.parse()?),
            "coverage" => coverage = Some(v.parse()?),
            "source" => source = Some(v.to_string()),
            _ => return Err(format!("unknown header key {k:?}")),
        }
    }
    Ok((
        provenance.ok_or("header lacks provenance")?,
        coverage.ok_or("header lacks coverage")?,
        source.unwrap_or_else(|| "unknown".to_string()),
    ))
}

pub fn parse_ctm_table(text: &str) -> Result<CtmTable, CtmError> {
    let mut lines = text.lines().enumerate();
    let (provenance, coverage, source) = loop {
        match lines.next() {
            None => {
                return Err(CtmError::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => {
                break parse_header(l.trim()).map_err(|message| CtmError::Parse {
                    line: i + 1,
                    message,
                })?
            }
        }
    };
    let mut values: Vec<Option<Vec<f64>>> = vec![None; MAX_BLOCK * MAX_BLOCK];
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| CtmError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let h: usize = fields[0]
            .parse()
            .map_err(|_| err("bad block height".into()))?;
        let w: usize = fields[1]
            .parse()
            .map_err(|_| err("bad block width".into()))?;
        if fields[2].len() != h * w {
            return Err(err(format!(
                "bitstring has {} characters, expected {}",
                fields[2].len(),
                h * w
            )));
        }
        let pattern = parse_bits(fields[2]).ok_or_else(|| err("bad bitstring".into()))?;
        let v: f64 = fields[3].parse().map_err(|_| err("bad value".into()))?;
        insert(&mut values, h, w, pattern, v).map_err(err)?;
    }
    finish(provenance, coverage, source, values)
}

pub fn load_ctm_table(path: impl AsRef<Path>) -> Result<CtmTable, CtmError> {
    parse_ctm_table(&fs::read_to_string(path)?)
}

fn surrogate_shape(h: usize, w: usize) -> Vec<f64> {
    let cells = h * w;
    let n = 1usize << cells;
    let max_transitions = h * (w - 1) + w * (h - 1);
    let score = |pattern: usize| -> f64 {
        let bit = |r: usize, c: usize| (pattern >> (cells - 1 - (r * w + c))) & 1;
        let reds = (pattern as u32).count_ones() as f64;
        let p = reds / cells as f64;
        let entropy = [p, 1.0 - p]
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| -q * q.log2())
            .sum::<f64>();
        let mut transitions = 0;
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w && bit(r, c) != bit(r, c + 1) {
                    transitions += 1;
                }
                if r + 1 < h && bit(r, c) != bit(r + 1, c) {
                    transitions += 1;
                }
            }
        }
        cells as f64 * entropy + transitions as f64 / (max_transitions + 1) as f64
    };
    let scores: Vec<f64> = (0..n).map(score).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let offset = 1.0 + (cells as f64).log2();
    let mut out = vec![0.0; n];
    for (rank, &pattern) in order.iter().enumerate() {
        out[pattern] = offset + scores[pattern] + 1e-3 * rank as f64 / n as f64;
    }
    out
}
