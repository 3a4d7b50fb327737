//! Tolerant extraction of a binary matrix from a model reply.

use serial_repro_core::grid::Grid;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no matrix rows found in reply")]
    NoMatrix,
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("matrix is {rows}x{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("expected a {expected}x{expected} matrix, got {found}x{found}")]
    SizeMismatch { expected: usize, found: usize },
}

/// Cells of one candidate row, or `None` when the line is prose.
fn row_cells(line: &str) -> Option<Vec<bool>> {
    let mut s = line.trim();
    // "Row 3: 0 1 0", "1. 0 1 0"
    if let Some((_, rest)) = s.rsplit_once(':') {
        s = rest.trim();
    }
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim();
        }
    }
    if let Some(pos) = s.find(['.', ')']) {
        let (head, tail) = s.split_at(pos);
        if !head.is_empty()
            && head.chars().all(|c| c.is_ascii_digit())
            && tail[1..].starts_with(' ')
        {
            s = tail[1..].trim();
        }
    }
    if let Some(pos) = s.rfind('[') {
        s = &s[pos + 1..];
    }
    let mut cells = Vec::new();
    for c in s.chars() {
        match c {
            '0' | '⬜' | '□' => cells.push(false),
            '1' | '🟥' | '■' => cells.push(true),
            ' ' | '\t' | ',' | '|' | ']' | '(' | ')' | '{' | '}' | '"' | '\'' | '`' | '.'
            | '\u{fe0f}' => {}
            _ => return None,
        }
    }
    (!cells.is_empty()).then_some(cells)
}

/// Text of the first fenced code block, if any.
fn fenced(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1)?;
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// Maximal runs of consecutive row lines; blank lines do not break a run.
fn blocks(text: &str) -> Vec<Vec<Vec<bool>>> {
    let mut out = Vec::new();
    let mut current: Vec<Vec<bool>> = Vec::new();
    // One-line nested lists and `;`-separated rows become one row per line.
    let normalised = text
        .replace("],", "]\n")
        .replace("] [", "]\n[")
        .replace(';', "\n");
    for line in normalised.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match row_cells(line) {
            Some(cells) => current.push(cells),
            None => {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn to_grid(rows: &[Vec<bool>]) -> Result<Grid, ParseError> {
    let cols = rows[0].len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(ParseError::Ragged {
            row: i + 1,
            expected: cols,
            found: r.len(),
        });
    }
    if rows.len() != cols {
        return Err(ParseError::NotSquare {
            rows: rows.len(),
            cols,
        });
    }
    Ok(Grid::from_tiles(rows.concat()).expect("square by construction"))
}

/// Find the matrix in a reply. Code fences and surrounding prose are
/// ignored; cells may be separated by spaces or commas or written adjacent.
/// When several square matrices appear, the last one wins.
pub fn parse_matrix(text: &str) -> Result<Grid, ParseError> {
    let source = fenced(text).unwrap_or(text);
    let candidates = blocks(source);
    if candidates.is_empty() {
        return Err(ParseError::NoMatrix);
    }
    let mut first_error = None;
    for rows in candidates.iter().rev() {
        match to_grid(rows) {
            Ok(g) => return Ok(g),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.expect("at least one candidate"))
}

/// [`parse_matrix`] with a required side length.
pub fn parse_matrix_sized(text: &str, size: usize) -> Result<Grid, ParseError> {
    let g = parse_matrix(text)?;
    if g.size() != size {
        return Err(ParseError::SizeMismatch {
            expected: size,
            found: g.size(),
        });
    }
    Ok(g)
}
