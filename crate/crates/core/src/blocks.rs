//! EVOLVE-BLOCK marker handling.
//!
//! A block is the run of lines strictly between a START marker line and
//! the next END marker line. Marker lines themselves, and everything
//! outside blocks, are frozen.

use thiserror::Error;

pub const START_MARKER: &str = "EVOLVE-BLOCK-START";
pub const END_MARKER: &str = "EVOLVE-BLOCK-END";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("EVOLVE-BLOCK-END at line {0} has no matching START")]
    UnmatchedEnd(usize),
    #[error("EVOLVE-BLOCK-START at line {0} opens inside another block")]
    Nested(usize),
    #[error("EVOLVE-BLOCK-START at line {0} is never closed")]
    Unclosed(usize),
}

/// 1-based line numbers of a block's marker lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start_marker: usize,
    pub end_marker: usize,
}

impl Block {
    /// Is 1-based `line` strictly inside the block?
    pub fn contains_line(&self, line: usize) -> bool {
        self.start_marker < line && line < self.end_marker
    }

    pub fn interior(&self) -> std::ops::RangeInclusive<usize> {
        self.start_marker + 1..=self.end_marker - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Start,
    End,
}

fn marker_of(line: &str) -> Option<Marker> {
    if line.contains(START_MARKER) {
        Some(Marker::Start)
    } else if line.contains(END_MARKER) {
        Some(Marker::End)
    } else {
        None
    }
}

pub fn is_marker_line(line: &str) -> bool {
    marker_of(line).is_some()
}

/// Lines with their terminators kept, so joining reproduces the input.
pub fn split_lines(src: &str) -> Vec<&str> {
    src.split_inclusive('\n').collect()
}

pub fn find_blocks(src: &str) -> Result<Vec<Block>, MarkerError> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    for (i, line) in split_lines(src).iter().enumerate() {
        let n = i + 1;
        match (marker_of(line), open) {
            (Some(Marker::Start), None) => open = Some(n),
            (Some(Marker::Start), Some(_)) => return Err(MarkerError::Nested(n)),
            (Some(Marker::End), Some(s)) => {
                blocks.push(Block {
                    start_marker: s,
                    end_marker: n,
                });
                open = None;
            }
            (Some(Marker::End), None) => return Err(MarkerError::UnmatchedEnd(n)),
            (None, _) => {}
        }
    }
    match open {
        Some(s) => Err(MarkerError::Unclosed(s)),
        None => Ok(blocks),
    }
}

pub fn marker_counts(src: &str) -> (usize, usize) {
    src.lines().fold((0, 0), |(s, e), l| match marker_of(l) {
        Some(Marker::Start) => (s + 1, e),
        Some(Marker::End) => (s, e + 1),
        None => (s, e),
    })
}

/// Frozen view of a program: every line outside block interiors, with each
/// interior collapsed to a placeholder. Two programs with equal skeletons
/// differ only inside blocks.
pub fn frozen_skeleton(src: &str) -> Result<Vec<String>, MarkerError> {
    let blocks = find_blocks(src)?;
    let lines = split_lines(src);
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let n = i + 1;
        if let Some(b) = blocks.iter().find(|b| b.start_marker == n) {
            out.push(lines[i].to_string());
            out.push("\u{0}block\u{0}".to_string());
            // jump to the END marker
            i = b.end_marker - 1;
            out.push(lines[i].to_string());
            i += 1;
            continue;
        }
        out.push(lines[i].to_string());
        i += 1;
    }
    Ok(out)
}

/// Text of each block interior.
pub fn block_bodies(src: &str) -> Result<Vec<String>, MarkerError> {
    let blocks = find_blocks(src)?;
    let lines = split_lines(src);
    Ok(blocks
        .iter()
        .map(|b| lines[b.start_marker..b.end_marker - 1].concat())
        .collect())
}

/// Remove all marker lines.
pub fn strip_markers(src: &str) -> String {
    split_lines(src).into_iter().filter(|l| !is_marker_line(l)).collect()
}

/// Insert marker pairs around the given inclusive 1-based line ranges of
/// `src` (which must be marker-free, sorted and disjoint).
pub fn wrap_regions(src: &str, regions: &[(usize, usize)]) -> String {
    let lines = split_lines(src);
    let mut out = String::with_capacity(src.len() + regions.len() * 64);
    for (i, line) in lines.iter().enumerate() {
        let n = i + 1;
        if let Some(&(s, _)) = regions.iter().find(|(s, _)| *s == n) {
            let indent = indentation(lines[s - 1]);
            out.push_str(&format!("{indent}// {START_MARKER}\n"));
        }
        out.push_str(line);
        if regions.iter().any(|&(_, e)| e == n) {
            if !line.ends_with('\n') {
                out.push('\n');
            }
            let (s, _) = *regions.iter().find(|&&(_, e)| e == n).unwrap();
            let indent = indentation(lines[s - 1]);
            out.push_str(&format!("{indent}// {END_MARKER}\n"));
        }
    }
    out
}

fn indentation(line: &str) -> &str {
    let end = line.len() - line.trim_start().len();
    &line[..end]
}

/// Deterministic repair: drop STARTs that open inside a block, ENDs with
/// no open block and a trailing unclosed START.
pub fn fixup_markers(src: &str) -> String {
    let lines = split_lines(src);
    let mut keep = vec![true; lines.len()];
    let mut open: Option<usize> = None;
    for (i, line) in lines.iter().enumerate() {
        match (marker_of(line), open) {
            (Some(Marker::Start), None) => open = Some(i),
            (Some(Marker::Start), Some(_)) => keep[i] = false,
            (Some(Marker::End), Some(_)) => open = None,
            (Some(Marker::End), None) => keep[i] = false,
            (None, _) => {}
        }
    }
    if let Some(i) = open {
        keep[i] = false;
    }
    lines
        .into_iter()
        .zip(keep)
        .filter_map(|(l, k)| k.then_some(l))
        .collect()
}

/// Replace the interior of block `index` (0-based) with `body`.
pub fn replace_block_body(src: &str, index: usize, body: &str) -> Result<Option<String>, MarkerError> {
    let blocks = find_blocks(src)?;
    let Some(b) = blocks.get(index) else {
        return Ok(None);
    };
    let lines = split_lines(src);
    let mut out: String = lines[..b.start_marker].concat();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(body);
    if !body.is_empty() && !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&lines[b.end_marker - 1..].concat());
    Ok(Some(out))
}
