//! Lexical helpers over C/C++/CUDA source text.
//!
//! Nothing here parses the language. [`MaskedSource`] blanks out comments
//! and string/char literals while keeping byte offsets and newlines intact,
//! so structural scans (identifiers, balanced delimiters, function bodies)
//! can run on the masked text and slice verbatim text from the original.

use std::ops::Range;

#[derive(Debug, Clone)]
pub struct MaskedSource<'a> {
    original: &'a str,
    masked: String,
    line_starts: Vec<usize>,
}

impl<'a> MaskedSource<'a> {
    pub fn new(original: &'a str) -> Self {
        let masked = mask(original);
        let mut line_starts = vec![0];
        line_starts.extend(
            original
                .bytes()
                .enumerate()
                .filter(|(_, b)| *b == b'\n')
                .map(|(i, _)| i + 1),
        );
        Self {
            original,
            masked,
            line_starts,
        }
    }

    pub fn original(&self) -> &'a str {
        self.original
    }

    pub fn masked(&self) -> &str {
        &self.masked
    }

    pub fn line_count(&self) -> usize {
        if self.original.is_empty() {
            0
        } else if self.original.ends_with('\n') {
            self.line_starts.len() - 1
        } else {
            self.line_starts.len()
        }
    }

    /// 1-based line containing byte `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }

    /// Offset of the delimiter closing the one at `open`, scanning the
    /// masked text. Returns `None` when it never closes.
    pub fn matching_close(&self, open: usize) -> Option<usize> {
        let bytes = self.masked.as_bytes();
        let (o, c) = match bytes.get(open)? {
            b'(' => (b'(', b')'),
            b'{' => (b'{', b'}'),
            b'[' => (b'[', b']'),
            _ => return None,
        };
        let mut depth = 0usize;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if b == o {
                depth += 1;
            } else if b == c {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
        }
        None
    }

    /// Split the contents of a parenthesised list at top-level commas.
    /// `open` and `close` are the offsets of the delimiters. Pieces are
    /// verbatim from the original text, trimmed.
    pub fn split_args(&self, open: usize, close: usize) -> Vec<String> {
        let bytes = self.masked.as_bytes();
        let mut depth = 0i32;
        let mut start = open + 1;
        let mut out = Vec::new();
        for i in open + 1..close {
            match bytes[i] {
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => depth -= 1,
                b'<' if bytes.get(i + 1) == Some(&b'<') => {}
                b',' if depth == 0 => {
                    out.push(self.original[start..i].trim().to_string());
                    start = i + 1;
                }
                _ => {}
            }
        }
        let last = self.original[start..close].trim();
        if !last.is_empty() || !out.is_empty() {
            out.push(last.to_string());
        }
        out
    }

    /// Top-level function definitions: `name(...) ... {` at brace depth 0.
    pub fn functions(&self) -> Vec<FunctionSpan> {
        let bytes = self.masked.as_bytes();
        let mut out = Vec::new();
        let mut depth = 0usize;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if depth == 0 => {
                    if let Some(span) = self.function_at(i) {
                        let end = span.body.end;
                        out.push(span);
                        i = end;
                        continue;
                    }
                    depth += 1;
                }
                b'{' => depth += 1,
                b'}' => depth = depth.saturating_sub(1),
                _ => {}
            }
            i += 1;
        }
        out
    }

    fn function_at(&self, brace: usize) -> Option<FunctionSpan> {
        let text = &self.masked[..brace];
        let trimmed = text.trim_end();
        // allow trailing qualifiers such as `const` or `noexcept`
        let mut head = trimmed;
        loop {
            let t = head.trim_end();
            let stripped = ["const", "noexcept", "override"].iter().find_map(|q| t.strip_suffix(q));
            match stripped {
                Some(s) => head = s,
                None => break,
            }
        }
        let head = head.trim_end();
        if !head.ends_with(')') {
            return None;
        }
        let close = head.len() - 1;
        let open = self.matching_open(close)?;
        let before = self.masked[..open].trim_end();
        let name_start = before
            .rfind(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == ':' || c == '~'))
            .map(|p| p + 1)
            .unwrap_or(0);
        let name = &before[name_start..];
        if name.is_empty() || CONTROL_KEYWORDS.contains(&name) {
            return None;
        }
        let name = name.rsplit("::").next().unwrap_or(name).to_string();
        // signature starts after the previous statement/block boundary
        let sig_start = self.masked[..name_start]
            .rfind([';', '}', '{'])
            .map(|p| p + 1)
            .unwrap_or(0);
        let sig_start = sig_start
            + self.masked[sig_start..name_start]
                .find(|c: char| !c.is_whitespace())
                .unwrap_or(0);
        let signature = &self.masked[sig_start..brace];
        let body_close = self.matching_close(brace)?;
        Some(FunctionSpan {
            name,
            device: signature.contains("__global__") || signature.contains("__device__"),
            kernel: signature.contains("__global__"),
            signature: sig_start..brace,
            body: brace..body_close + 1,
            start_line: self.line_of(sig_start),
            end_line: self.line_of(body_close),
        })
    }

    fn matching_open(&self, close: usize) -> Option<usize> {
        let bytes = self.masked.as_bytes();
        let mut depth = 0usize;
        for i in (0..=close).rev() {
            match bytes[i] {
                b')' => depth += 1,
                b'(' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// Identifier tokens of the masked text with their byte offsets.
    pub fn identifiers(&self) -> impl Iterator<Item = (usize, &str)> {
        identifiers(&self.masked)
    }

    /// Is the byte at `offset` inside a block opened by a conditional
    /// (`if`/`else`/`switch`/`?:`-free heuristics), or is its statement
    /// prefixed by one?
    pub fn is_conditional(&self, offset: usize) -> bool {
        let bytes = self.masked.as_bytes();
        let mut stack: Vec<bool> = Vec::new();
        let mut i = 0;
        while i < offset && i < bytes.len() {
            match bytes[i] {
                b'{' => {
                    let cond = self.block_is_conditional(i);
                    stack.push(cond);
                }
                b'}' => {
                    stack.pop();
                }
                _ => {}
            }
            i += 1;
        }
        if stack.iter().any(|&c| c) {
            return true;
        }
        let stmt_start = self.masked[..offset].rfind([';', '{', '}']).map(|p| p + 1).unwrap_or(0);
        identifiers(&self.masked[stmt_start..offset]).any(|(_, w)| matches!(w, "if" | "else" | "switch" | "case"))
    }

    fn block_is_conditional(&self, brace: usize) -> bool {
        let head = self.masked[..brace].trim_end();
        if head.ends_with("else") {
            return true;
        }
        if let Some(stripped) = head.strip_suffix(')') {
            if let Some(open) = self.matching_open(stripped.len()) {
                let kw = self.masked[..open].trim_end();
                let last = identifiers(kw).last().map(|(p, w)| (p + w.len(), w));
                return matches!(last, Some((end, "if" | "switch")) if end == kw.len());
            }
        }
        false
    }
}

const CONTROL_KEYWORDS: &[&str] = &["if", "for", "while", "switch", "catch", "return", "sizeof"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    /// `__global__` or `__device__` qualified.
    pub device: bool,
    pub kernel: bool,
    pub signature: Range<usize>,
    /// From the opening to one past the closing brace.
    pub body: Range<usize>,
    pub start_line: usize,
    pub end_line: usize,
}

impl FunctionSpan {
    pub fn contains(&self, offset: usize) -> bool {
        self.signature.start <= offset && offset < self.body.end
    }
}

pub fn identifiers(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = text.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            let b = bytes[i];
            if b.is_ascii_alphabetic() || b == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                return Some((start, &text[start..i]));
            } else if b.is_ascii_digit() {
                // skip numeric literals including suffixes like 1e5f or 0x1F
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_') {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        None
    })
}

/// Does `text` contain `ident` as a whole identifier token?
pub fn has_identifier(text: &str, ident: &str) -> bool {
    identifiers(text).any(|(_, w)| w == ident)
}

fn mask(src: &str) -> String {
    #[derive(PartialEq)]
    enum State {
        Code,
        LineComment,
        BlockComment,
        Str,
        Char,
    }
    let bytes = src.as_bytes();
    let mut out = bytes.to_vec();
    let mut state = State::Code;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let next = bytes.get(i + 1).copied();
        match state {
            State::Code => match (b, next) {
                (b'/', Some(b'/')) => {
                    state = State::LineComment;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                }
                (b'/', Some(b'*')) => {
                    state = State::BlockComment;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                }
                (b'"', _) => state = State::Str,
                (b'\'', _) => state = State::Char,
                _ => {}
            },
            State::LineComment => {
                if b == b'\n' {
                    state = State::Code;
                } else {
                    out[i] = b' ';
                }
            }
            State::BlockComment => {
                if b == b'*' && next == Some(b'/') {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                    state = State::Code;
                } else if b != b'\n' {
                    out[i] = b' ';
                }
            }
            State::Str | State::Char => {
                let quote = if state == State::Str { b'"' } else { b'\'' };
                if b == b'\\' {
                    out[i] = b' ';
                    if let Some(n) = next {
                        if n != b'\n' {
                            out[i + 1] = b' ';
                        }
                    }
                    i += 1;
                } else if b == quote {
                    state = State::Code;
                } else if b == b'\n' {
                    // unterminated literal: recover at end of line
                    state = State::Code;
                } else {
                    out[i] = b' ';
                }
            }
        }
        i += 1;
    }
    // only ASCII bytes were replaced by ASCII spaces; any multibyte
    // sequence inside a comment or literal is fully blanked
    String::from_utf8(out).unwrap_or_else(|e| {
        e.into_bytes()
            .into_iter()
            .map(|b| if b.is_ascii() { b as char } else { ' ' })
            .collect()
    })
}
