//! Block-scoped edit scripts.
//!
//! A patch is a sequence of hunks. Line numbers are 1-based and refer to
//! the unpatched program.
//!
//! ```text
//! @@ replace 12-14        lines 12..=14 become the following lines
//! @@ insert 12            following lines go before line 12
//! @@ delete 12-13
//! @@ block 2              block 2's whole interior becomes the following lines
//! <<<<<<< SEARCH          exact text (must occur once) ...
//! =======
//! >>>>>>> REPLACE         ... replaced by the text between the separators
//! ```
//!
//! Every hunk must stay strictly inside one block interior; inserting
//! directly before an END marker appends to that block.

use thiserror::Error;

use crate::blocks::{find_blocks, is_marker_line, split_lines, Block, MarkerError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("edit touches frozen code: {0}")]
    FrozenRegionEdit(String),
    #[error("malformed patch: {0}")]
    MalformedPatch(String),
    #[error(transparent)]
    Markers(#[from] MarkerError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hunk {
    Replace {
        start: usize,
        end: usize,
        lines: Vec<String>,
    },
    Insert {
        before: usize,
        lines: Vec<String>,
    },
    Delete {
        start: usize,
        end: usize,
    },
    Block {
        index: usize,
        lines: Vec<String>,
    },
    SearchReplace {
        search: String,
        replace: String,
    },
}

const SEARCH: &str = "<<<<<<< SEARCH";
const DIVIDER: &str = "=======";
const REPLACE: &str = ">>>>>>> REPLACE";

/// Does the text look like an edit script?
pub fn looks_like_patch(text: &str) -> bool {
    text.lines().any(|l| {
        let l = l.trim_end();
        l == SEARCH
            || l.starts_with("@@ replace ")
            || l.starts_with("@@ insert ")
            || l.starts_with("@@ delete ")
            || l.starts_with("@@ block ")
    })
}

fn range(text: &str) -> Result<(usize, usize), PatchError> {
    let bad = || PatchError::MalformedPatch(format!("bad line range `{text}`"));
    let (a, b) = match text.split_once('-') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (text.trim(), text.trim()),
    };
    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn parse_patch(patch: &str) -> Result<Vec<Hunk>, PatchError> {
    let lines: Vec<&str> = patch.lines().collect();
    let mut hunks = Vec::new();
    let mut i = 0;
    let body = |i: &mut usize| {
        let mut out = Vec::new();
        while *i < lines.len() && !lines[*i].starts_with("@@ ") && lines[*i].trim_end() != SEARCH {
            out.push(lines[*i].to_string());
            *i += 1;
        }
        out
    };
    while i < lines.len() {
        let line = lines[i].trim_end();
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        if line == SEARCH {
            i += 1;
            let mut search = Vec::new();
            while i < lines.len() && lines[i].trim_end() != DIVIDER {
                search.push(lines[i]);
                i += 1;
            }
            if i == lines.len() {
                return Err(PatchError::MalformedPatch("SEARCH without =======".into()));
            }
            i += 1;
            let mut replace = Vec::new();
            while i < lines.len() && lines[i].trim_end() != REPLACE {
                replace.push(lines[i]);
                i += 1;
            }
            if i == lines.len() {
                return Err(PatchError::MalformedPatch(
                    "SEARCH block without >>>>>>> REPLACE".into(),
                ));
            }
            i += 1;
            let join = |v: &[&str]| {
                if v.is_empty() {
                    String::new()
                } else {
                    v.join("\n") + "\n"
                }
            };
            if search.is_empty() {
                return Err(PatchError::MalformedPatch("empty SEARCH text".into()));
            }
            hunks.push(Hunk::SearchReplace {
                search: join(&search),
                replace: join(&replace),
            });
            continue;
        }
        let Some(header) = line.strip_prefix("@@ ") else {
            return Err(PatchError::MalformedPatch(format!(
                "unexpected line outside a hunk: `{line}`"
            )));
        };
        let header = header.trim().trim_end_matches("@@").trim();
        let (verb, arg) = header.split_once(' ').unwrap_or((header, ""));
        i += 1;
        let hunk = match verb {
            "replace" => {
                let (start, end) = range(arg)?;
                Hunk::Replace {
                    start,
                    end,
                    lines: body(&mut i),
                }
            }
            "insert" => {
                let arg = arg.trim().trim_start_matches("before").trim();
                let (before, _) = range(arg)?;
                Hunk::Insert {
                    before,
                    lines: body(&mut i),
                }
            }
            "delete" => {
                let (start, end) = range(arg)?;
                let extra = body(&mut i);
                if extra.iter().any(|l| !l.trim().is_empty()) {
                    return Err(PatchError::MalformedPatch("delete hunk carries content".into()));
                }
                Hunk::Delete { start, end }
            }
            "block" => {
                let (index, _) = range(arg)?;
                Hunk::Block {
                    index,
                    lines: body(&mut i),
                }
            }
            other => return Err(PatchError::MalformedPatch(format!("unknown hunk `{other}`"))),
        };
        hunks.push(hunk);
    }
    Ok(hunks)
}

/// A resolved edit: replace original lines `[start, end)` (0-based) with `text`.
struct Edit {
    start: usize,
    end: usize,
    text: String,
}

fn interior_of(blocks: &[Block], first: usize, last: usize) -> Option<&Block> {
    blocks.iter().find(|b| b.contains_line(first) && b.contains_line(last))
}

fn check_content(text: &str) -> Result<(), PatchError> {
    match text.lines().find(|l| is_marker_line(l)) {
        Some(l) => Err(PatchError::FrozenRegionEdit(format!(
            "replacement contains marker line `{}`",
            l.trim()
        ))),
        None => Ok(()),
    }
}

fn joined(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub fn apply_diff(program: &str, patch: &str) -> Result<String, PatchError> {
    let hunks = parse_patch(patch)?;
    if hunks.is_empty() {
        return Ok(program.to_string());
    }
    apply_hunks(program, &hunks)
}

pub fn apply_hunks(program: &str, hunks: &[Hunk]) -> Result<String, PatchError> {
    let blocks = find_blocks(program)?;
    let lines = split_lines(program);
    let n = lines.len();
    let mut edits = Vec::new();
    for h in hunks {
        let edit = match h {
            Hunk::Replace { start, end, lines: new } => {
                if *end > n || interior_of(&blocks, *start, *end).is_none() {
                    return Err(PatchError::FrozenRegionEdit(format!(
                        "lines {start}-{end} are not inside one evolve block"
                    )));
                }
                Edit {
                    start: start - 1,
                    end: *end,
                    text: joined(new),
                }
            }
            Hunk::Delete { start, end } => {
                if *end > n || interior_of(&blocks, *start, *end).is_none() {
                    return Err(PatchError::FrozenRegionEdit(format!(
                        "lines {start}-{end} are not inside one evolve block"
                    )));
                }
                Edit {
                    start: start - 1,
                    end: *end,
                    text: String::new(),
                }
            }
            Hunk::Insert { before, lines: new } => {
                let ok = blocks
                    .iter()
                    .any(|b| b.start_marker < *before && *before <= b.end_marker);
                if !ok {
                    return Err(PatchError::FrozenRegionEdit(format!(
                        "insertion before line {before} is outside every evolve block"
                    )));
                }
                Edit {
                    start: before - 1,
                    end: before - 1,
                    text: joined(new),
                }
            }
            Hunk::Block { index, lines: new } => {
                let b = blocks
                    .get(index - 1)
                    .ok_or_else(|| PatchError::MalformedPatch(format!("no evolve block {index}")))?;
                Edit {
                    start: b.start_marker,
                    end: b.end_marker - 1,
                    text: joined(new),
                }
            }
            Hunk::SearchReplace { search, replace } => {
                let mut hits = program.match_indices(search.as_str());
                let (at, _) = hits
                    .next()
                    .ok_or_else(|| PatchError::MalformedPatch("SEARCH text not found".into()))?;
                if hits.next().is_some() {
                    return Err(PatchError::MalformedPatch("SEARCH text is ambiguous".into()));
                }
                let first = program[..at].matches('\n').count() + 1;
                let last = first + search.trim_end_matches('\n').matches('\n').count();
                let starts_line = at == 0 || program.as_bytes()[at - 1] == b'\n';
                if !starts_line || !search.ends_with('\n') {
                    return Err(PatchError::MalformedPatch("SEARCH text must cover whole lines".into()));
                }
                if interior_of(&blocks, first, last).is_none() {
                    return Err(PatchError::FrozenRegionEdit(format!(
                        "SEARCH text at lines {first}-{last} is not inside one evolve block"
                    )));
                }
                Edit {
                    start: first - 1,
                    end: last,
                    text: replace.clone(),
                }
            }
        };
        check_content(&edit.text)?;
        edits.push(edit);
    }
    edits.sort_by_key(|e| (e.start, e.end));
    for w in edits.windows(2) {
        if w[1].start < w[0].end || (w[1].start == w[0].start && w[0].start == w[0].end && w[1].start == w[1].end) {
            return Err(PatchError::MalformedPatch("overlapping hunks".into()));
        }
    }
    let mut out = String::with_capacity(program.len());
    let mut cursor = 0;
    for e in &edits {
        out.push_str(&lines[cursor..e.start].concat());
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&e.text);
        cursor = e.end;
    }
    out.push_str(&lines[cursor..].concat());
    Ok(out)
}
