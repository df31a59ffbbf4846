//! Incremental detection of checking units (candidate functions).
//!
//! Detection is a plausibility filter, not a parser. PythonLike units are
//! top-level `def`s delimited by indentation; JavaLike units are methods with
//! an explicit return type whose braces balance. Both run on the
//! fence-stripped working copy produced by [`strip_fences`].

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::lang::Language;

/// Candidate function span. Identity is the exact source slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckingUnit {
    pub language: Language,
    /// Byte offsets `[start, end)` into the fence-stripped text.
    pub char_span: (usize, usize),
    pub name: String,
    pub signature_text: String,
    pub body_text: String,
    pub canonical_text: String,
    /// Spans of import/package statements that precede the unit.
    pub preamble_refs: Vec<(usize, usize)>,
}

impl PartialEq for CheckingUnit {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_text == other.canonical_text
    }
}

impl Eq for CheckingUnit {}

impl Hash for CheckingUnit {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.canonical_text.hash(state)
    }
}

impl PartialOrd for CheckingUnit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CheckingUnit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_text.cmp(&other.canonical_text)
    }
}

/// A unit whose signature has been seen but whose end has not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenUnit {
    pub start: usize,
    pub name: String,
    /// End of the signature (exclusive).
    pub signature_end: usize,
    /// End of the last line holding unit content so far (exclusive).
    pub content_end: usize,
}

impl OpenUnit {
    /// Treats the current end of input as the end of the unit.
    ///
    /// The session evaluates this for PythonLike text, where a function is
    /// only closed by the next unindented line: the last function of a
    /// generation would otherwise never be checked before that line arrives.
    pub fn provisional(&self, text: &str, language: Language) -> CheckingUnit {
        let end = self.content_end.max(self.signature_end).min(text.len());
        make_unit(text, language, self.start, self.signature_end.min(end), end, self.name.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detection {
    pub complete: Vec<CheckingUnit>,
    pub in_progress: Option<OpenUnit>,
}

/// Fence-stripped working copy of the generated text with an offset map back
/// to the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrippedText {
    pub text: String,
    /// `(stripped_offset, raw_offset)` at the start of each kept run of lines.
    segments: Vec<(usize, usize)>,
}

impl StrippedText {
    /// Maps an offset in the stripped text to the raw text.
    pub fn to_raw(&self, offset: usize) -> usize {
        let idx = match self.segments.binary_search_by(|(s, _)| s.cmp(&offset)) {
            Ok(i) => i,
            Err(0) => return offset,
            Err(i) => i - 1,
        };
        let (s, r) = self.segments[idx];
        r + (offset - s)
    }

    /// Maps a half-open stripped span to a half-open raw span.
    pub fn to_raw_span(&self, (start, end): (usize, usize)) -> (usize, usize) {
        if end <= start {
            let r = self.to_raw(start);
            return (r, r);
        }
        (self.to_raw(start), self.to_raw(end - 1) + 1)
    }
}

fn is_fence_line(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Could this unfinished last line still turn into a fence?
fn is_fence_prefix(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && "```".starts_with(t)
}

/// Removes markdown code-fence lines.
pub fn strip_fences(raw: &str) -> StrippedText {
    let mut text = String::with_capacity(raw.len());
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut raw_pos = 0;
    let mut contiguous = false;
    for line in raw.split_inclusive('\n') {
        if is_fence_line(line) {
            contiguous = false;
        } else {
            if !contiguous {
                segments.push((text.len(), raw_pos));
                contiguous = true;
            }
            text.push_str(line);
        }
        raw_pos += line.len();
    }
    StrippedText { text, segments }
}

/// Finds complete checking units in `text` (already fence-stripped), in
/// textual order, plus the unit still being generated, if any.
pub fn detect_complete_units(text: &str, language: Language) -> Detection {
    let mut detection = match language {
        Language::PythonLike => python::detect(text),
        Language::JavaLike => java::detect(text),
    };
    let imports = import_spans(text, language);
    for unit in &mut detection.complete {
        unit.preamble_refs = imports
            .iter()
            .copied()
            .filter(|&(_, end)| end <= unit.char_span.0)
            .collect();
    }
    detection
}

/// Top-level import (PythonLike) or import/package (JavaLike) statements, in
/// order and deduplicated, joined by newlines.
pub fn extract_preamble(text: &str, language: Language) -> String {
    let mut seen: Vec<&str> = Vec::new();
    for (start, end) in import_spans(text, language) {
        let stmt = &text[start..end];
        if !seen.contains(&stmt) {
            seen.push(stmt);
        }
    }
    seen.join("\n")
}

/// Only newline-terminated lines count; a half-generated import would
/// otherwise leak into every harness.
fn import_spans(text: &str, language: Language) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let line_start = pos;
        pos += line.len();
        if !line.ends_with('\n') {
            break;
        }
        let body = line.trim_end();
        match language {
            Language::PythonLike => {
                let is_import = body.starts_with("import ")
                    || (body.starts_with("from ") && body.contains(" import "));
                if is_import {
                    spans.push((line_start, line_start + body.len()));
                }
            }
            Language::JavaLike => {
                let lead = line.len() - line.trim_start().len();
                let stmt = body.trim_start();
                if stmt.starts_with("import ") || stmt.starts_with("package ") {
                    if let Some(semi) = stmt.find(';') {
                        let s = line_start + lead;
                        spans.push((s, s + semi + 1));
                    }
                }
            }
        }
    }
    spans
}

fn make_unit(
    text: &str,
    language: Language,
    start: usize,
    signature_end: usize,
    end: usize,
    name: String,
) -> CheckingUnit {
    CheckingUnit {
        language,
        char_span: (start, end),
        name,
        signature_text: text[start..signature_end].into(),
        body_text: text[signature_end..end].into(),
        canonical_text: text[start..end].into(),
        preamble_refs: Vec::new(),
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

mod python {
    use super::*;

    struct Line<'a> {
        start: usize,
        /// Offset just past the newline, or the end of text.
        next: usize,
        text: &'a str,
        terminated: bool,
    }

    fn lines(text: &str) -> Vec<Line<'_>> {
        let mut out = Vec::new();
        let mut pos = 0;
        for raw in text.split_inclusive('\n') {
            let terminated = raw.ends_with('\n');
            let body = raw.strip_suffix('\n').unwrap_or(raw);
            let body = body.strip_suffix('\r').unwrap_or(body);
            out.push(Line {
                start: pos,
                next: pos + raw.len(),
                text: body,
                terminated,
            });
            pos += raw.len();
        }
        out
    }

    enum Signature {
        Not,
        /// Input ended inside the signature.
        Incomplete,
        Complete {
            name: String,
            /// Index of the line holding the closing colon.
            last_line: usize,
        },
    }

    fn keyword<'a>(s: &'a str, kw: &str) -> Option<&'a str> {
        let rest = s.strip_prefix(kw)?;
        let mut chars = rest.chars();
        match chars.next() {
            Some(c) if c == ' ' || c == '\t' => Some(rest.trim_start_matches([' ', '\t'])),
            _ => None,
        }
    }

    fn parse_signature(text: &str, lines: &[Line<'_>], i: usize) -> Signature {
        let line = &lines[i];
        let after_def = match keyword(line.text, "def") {
            Some(r) => r,
            None => match keyword(line.text, "async").and_then(|r| keyword(r, "def")) {
                Some(r) => r,
                None => return Signature::Not,
            },
        };
        let name_len: usize = after_def
            .char_indices()
            .take_while(|&(k, c)| if k == 0 { is_ident_start(c) } else { is_ident_continue(c) })
            .map(|(_, c)| c.len_utf8())
            .sum();
        if name_len == 0 {
            return if after_def.is_empty() && !line.terminated {
                Signature::Incomplete
            } else {
                Signature::Not
            };
        }
        let name = &after_def[..name_len];
        let rest = after_def[name_len..].trim_start_matches([' ', '\t']);
        let paren_pos = match rest.chars().next() {
            Some('(') => line.start + (line.text.len() - rest.len()),
            None if !line.terminated => return Signature::Incomplete,
            _ => return Signature::Not,
        };

        // Walk the parameter list and optional return annotation up to the
        // colon, across lines while brackets are open.
        let bytes = text.as_bytes();
        let mut depth = 0i32;
        let mut k = paren_pos;
        let mut quote: Option<u8> = None;
        while k < bytes.len() {
            let b = bytes[k];
            if let Some(q) = quote {
                if b == b'\\' {
                    k += 2;
                    continue;
                }
                if b == q {
                    quote = None;
                } else if b == b'\n' {
                    return Signature::Not;
                }
                k += 1;
                continue;
            }
            match b {
                b'\'' | b'"' => quote = Some(b),
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => {
                    depth -= 1;
                    if depth < 0 {
                        return Signature::Not;
                    }
                }
                b':' if depth == 0 => {
                    let last_line = lines.partition_point(|l| l.next <= k);
                    return Signature::Complete {
                        name: name.into(),
                        last_line,
                    };
                }
                b'\n' if depth == 0 => return Signature::Not,
                b'#' if depth == 0 => return Signature::Not,
                _ => {}
            }
            k += 1;
        }
        Signature::Incomplete
    }

    fn indented(line: &str) -> bool {
        line.starts_with([' ', '\t'])
    }

    pub(super) fn detect(text: &str) -> Detection {
        let lines = lines(text);
        let mut detection = Detection::default();
        let mut i = 0;
        // Lines at or after this index are not part of an earlier unit.
        let mut floor = 0;
        while i < lines.len() {
            let (name, last_sig_line) = match parse_signature(text, &lines, i) {
                Signature::Not => {
                    i += 1;
                    continue;
                }
                Signature::Incomplete => break,
                Signature::Complete { name, last_line } => (name, last_line),
            };

            let mut first = i;
            while first > floor && lines[first - 1].text.starts_with('@') {
                first -= 1;
            }
            let start = lines[first].start;
            let signature_end = lines[last_sig_line].next;

            let mut last_content = last_sig_line;
            let mut terminator = None;
            for (k, line) in lines.iter().enumerate().skip(last_sig_line + 1) {
                let t = line.text;
                if t.trim().is_empty() {
                    continue;
                }
                if indented(t) {
                    last_content = k;
                    continue;
                }
                if t.starts_with('#') {
                    continue;
                }
                if !line.terminated && is_fence_prefix(t) {
                    continue;
                }
                terminator = Some(k);
                break;
            }
            let content_end = lines[last_content].next;
            match terminator {
                Some(k) => {
                    detection
                        .complete
                        .push(make_unit(text, Language::PythonLike, start, signature_end, content_end, name));
                    floor = k;
                    i = k;
                }
                None => {
                    detection.in_progress = Some(OpenUnit {
                        start,
                        name,
                        signature_end,
                        content_end,
                    });
                    break;
                }
            }
        }
        detection
    }
}

pub(crate) mod java {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub(crate) enum Kind {
        Ident,
        Number,
        Punct(u8),
    }

    #[derive(Debug, Clone, Copy)]
    pub(crate) struct Tok {
        pub kind: Kind,
        pub start: usize,
        pub end: usize,
    }

    const MODIFIERS: &[&str] = &[
        "public",
        "private",
        "protected",
        "static",
        "final",
        "abstract",
        "synchronized",
        "native",
        "strictfp",
        "default",
        "transient",
        "volatile",
    ];

    const NOT_A_NAME: &[&str] = &[
        "if", "for", "while", "switch", "catch", "synchronized", "return", "new", "else", "do",
        "try", "throw", "assert", "case", "super", "this", "class", "interface", "enum", "record",
        "instanceof", "throws", "extends", "implements",
    ];

    const NOT_A_TYPE: &[&str] = &[
        "return", "new", "else", "throw", "case", "do", "try", "finally", "assert", "package",
        "import", "extends", "implements", "throws", "instanceof", "class", "interface", "enum",
        "if", "for", "while", "switch", "catch", "break", "continue", "goto", "const", "this",
        "super", "null", "true", "false",
    ];

    /// Lexes identifiers, numbers and single-byte punctuation, skipping
    /// whitespace, comments, string/text-block and character literals.
    /// Stops early at a literal or block comment that is still open at the
    /// end of input, so partially generated literals never count braces.
    pub(crate) fn lex(text: &str) -> Vec<Tok> {
        let bytes = text.as_bytes();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
                match text[i..].find('\n') {
                    Some(n) => i += n + 1,
                    None => break,
                }
                continue;
            }
            if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
                match text[i + 2..].find("*/") {
                    Some(n) => i += n + 4,
                    None => break,
                }
                continue;
            }
            if b == b'"' {
                if text[i..].starts_with("\"\"\"") {
                    match text[i + 3..].find("\"\"\"") {
                        Some(n) => i += n + 6,
                        None => break,
                    }
                    continue;
                }
                match close_quote(bytes, i, b'"') {
                    Quote::Closed(end) => {
                        i = end;
                        continue;
                    }
                    Quote::Pending => break,
                    Quote::Stray => {}
                }
            }
            if b == b'\'' {
                match close_char_literal(bytes, i) {
                    Quote::Closed(end) => {
                        i = end;
                        continue;
                    }
                    Quote::Pending => break,
                    Quote::Stray => {}
                }
            }
            let c = text[i..].chars().next().unwrap_or('\0');
            if is_ident_start(c) || c == '$' {
                let len: usize = text[i..]
                    .chars()
                    .take_while(|&c| is_ident_continue(c) || c == '$')
                    .map(char::len_utf8)
                    .sum();
                toks.push(Tok { kind: Kind::Ident, start: i, end: i + len });
                i += len;
                continue;
            }
            if b.is_ascii_digit() {
                let len = bytes[i..]
                    .iter()
                    .take_while(|b| b.is_ascii_alphanumeric() || **b == b'_' || **b == b'.')
                    .count();
                toks.push(Tok { kind: Kind::Number, start: i, end: i + len });
                i += len;
                continue;
            }
            if b.is_ascii() {
                toks.push(Tok { kind: Kind::Punct(b), start: i, end: i + 1 });
                i += 1;
            } else {
                i += c.len_utf8();
            }
        }
        toks
    }

    enum Quote {
        Closed(usize),
        /// No closing quote yet and the line is still being generated.
        Pending,
        /// Not a literal (e.g. an apostrophe in prose).
        Stray,
    }

    fn close_quote(bytes: &[u8], open: usize, q: u8) -> Quote {
        let mut k = open + 1;
        while k < bytes.len() {
            match bytes[k] {
                b'\\' => k += 2,
                b'\n' => return Quote::Stray,
                c if c == q => return Quote::Closed(k + 1),
                _ => k += 1,
            }
        }
        Quote::Pending
    }

    fn close_char_literal(bytes: &[u8], open: usize) -> Quote {
        let rest = &bytes[open + 1..];
        if !rest.contains(&b'\n') && !rest.contains(&b'\'') {
            return Quote::Pending;
        }
        match rest {
            [b'\\', b'u', ..] => {
                let hex = rest[2..].iter().take_while(|b| b.is_ascii_hexdigit()).count();
                if rest.get(2 + hex) == Some(&b'\'') {
                    Quote::Closed(open + 1 + 2 + hex + 1)
                } else {
                    Quote::Stray
                }
            }
            [b'\\', _, b'\'', ..] => Quote::Closed(open + 4),
            [b'\\', d, ..] if d.is_ascii_digit() => {
                let oct = rest[1..].iter().take_while(|b| b.is_ascii_digit()).count();
                if rest.get(1 + oct) == Some(&b'\'') {
                    Quote::Closed(open + 1 + 1 + oct + 1)
                } else {
                    Quote::Stray
                }
            }
            [c, b'\'', ..] if *c != b'\n' && *c != b'\'' && c.is_ascii() => Quote::Closed(open + 3),
            _ => {
                // multi-byte character literal
                let s = core::str::from_utf8(rest).ok();
                match s.and_then(|s| s.chars().next()) {
                    Some(ch) if !ch.is_ascii() && rest.get(ch.len_utf8()) == Some(&b'\'') => {
                        Quote::Closed(open + 1 + ch.len_utf8() + 1)
                    }
                    _ => Quote::Stray,
                }
            }
        }
    }

    fn ident<'a>(text: &'a str, t: &Tok) -> Option<&'a str> {
        (t.kind == Kind::Ident).then(|| &text[t.start..t.end])
    }

    fn is_punct(t: &Tok, p: u8) -> bool {
        t.kind == Kind::Punct(p)
    }

    /// Index of the token matching the opener at `open`, scanning forward.
    fn match_forward(toks: &[Tok], open: usize, o: u8, c: u8) -> Option<usize> {
        let mut depth = 0usize;
        for (k, t) in toks.iter().enumerate().skip(open) {
            if is_punct(t, o) {
                depth += 1;
            } else if is_punct(t, c) {
                depth -= 1;
                if depth == 0 {
                    return Some(k);
                }
            }
        }
        None
    }

    /// Index of the token matching the closer at `close`, scanning backward.
    fn match_backward(toks: &[Tok], close: usize, o: u8, c: u8) -> Option<usize> {
        let mut depth = 0usize;
        for k in (0..=close).rev() {
            let t = &toks[k];
            if is_punct(t, c) {
                depth += 1;
            } else if is_punct(t, o) {
                depth -= 1;
                if depth == 0 {
                    return Some(k);
                }
            }
        }
        None
    }

    /// Walks back from the token before the method name over the return type,
    /// type parameters, modifiers and annotations. Returns the index of the
    /// first signature token.
    pub(crate) fn signature_start(text: &str, toks: &[Tok], name: usize) -> Option<usize> {
        if name == 0 {
            return None;
        }
        let mut k = name - 1;
        // Return type, right to left: arrays, generic arguments, qualified name.
        while is_punct(&toks[k], b']') {
            if k < 2 || !is_punct(&toks[k - 1], b'[') {
                return None;
            }
            k -= 2;
        }
        if is_punct(&toks[k], b'>') {
            k = match_backward(toks, k, b'<', b'>')?.checked_sub(1)?;
        }
        let ty = ident(text, &toks[k])?;
        if NOT_A_TYPE.contains(&ty) || MODIFIERS.contains(&ty) {
            return None;
        }
        let mut start = k;
        while start >= 2 && is_punct(&toks[start - 1], b'.') && ident(text, &toks[start - 2]).is_some() {
            start -= 2;
        }
        // Method type parameters.
        if start >= 1 && is_punct(&toks[start - 1], b'>') {
            if let Some(open) = match_backward(toks, start - 1, b'<', b'>') {
                start = open;
            }
        }
        // Modifiers and annotations.
        loop {
            if start == 0 {
                break;
            }
            let prev = &toks[start - 1];
            if let Some(word) = ident(text, prev) {
                if MODIFIERS.contains(&word) {
                    start -= 1;
                    continue;
                }
                if start >= 2 && is_punct(&toks[start - 2], b'@') {
                    start -= 2;
                    continue;
                }
                break;
            }
            if is_punct(prev, b')') {
                if let Some(open) = match_backward(toks, start - 1, b'(', b')') {
                    if open >= 2 && ident(text, &toks[open - 1]).is_some() && is_punct(&toks[open - 2], b'@')
                    {
                        start = open - 2;
                        continue;
                    }
                }
            }
            break;
        }
        Some(start)
    }

    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Scope {
        Class,
        Block,
    }

    /// Tokens that may appear between `class X` and its `{`.
    fn class_header_end(text: &str, toks: &[Tok], kw: usize, allow_parens: bool) -> Option<usize> {
        ident(text, toks.get(kw + 1)?)?;
        let mut k = kw + 2;
        while let Some(t) = toks.get(k) {
            match t.kind {
                Kind::Punct(b'{') => return Some(k),
                Kind::Ident => {}
                Kind::Punct(b'.' | b',' | b'<' | b'>' | b'?' | b'&' | b'@' | b'[' | b']') => {}
                Kind::Punct(b'(' | b')') if allow_parens => {}
                _ => return None,
            }
            k += 1;
        }
        None
    }

    pub(super) fn detect(text: &str) -> Detection {
        let toks = lex(text);
        let mut detection = Detection::default();
        let mut scopes: Vec<Scope> = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let t = toks[i];
            let declaring = matches!(scopes.last(), None | Some(Scope::Class));
            match t.kind {
                Kind::Ident if declaring => {
                    let word = &text[t.start..t.end];
                    if matches!(word, "class" | "interface" | "enum" | "record") {
                        if let Some(brace) = class_header_end(text, &toks, i, word == "record") {
                            scopes.push(Scope::Class);
                            i = brace + 1;
                            continue;
                        }
                    }
                }
                Kind::Punct(b'(') if declaring && i > 0 => {
                    let name_tok = toks[i - 1];
                    let is_name = ident(text, &name_tok).is_some_and(|n| !NOT_A_NAME.contains(&n));
                    if is_name {
                        if let Some(start_tok) = signature_start(text, &toks, i - 1) {
                            let Some(close) = match_forward(&toks, i, b'(', b')') else {
                                break;
                            };
                            let mut k = close + 1;
                            if toks.get(k).and_then(|t| ident(text, t)) == Some("throws") {
                                k += 1;
                                while let Some(t) = toks.get(k) {
                                    match t.kind {
                                        Kind::Ident | Kind::Punct(b'.' | b',' | b'<' | b'>') => k += 1,
                                        _ => break,
                                    }
                                }
                            }
                            match toks.get(k) {
                                None => break,
                                Some(b) if is_punct(b, b'{') => {
                                    let start = toks[start_tok].start;
                                    let brace = toks[k].start;
                                    let name = String::from(&text[name_tok.start..name_tok.end]);
                                    match match_forward(&toks, k, b'{', b'}') {
                                        Some(end_tok) => {
                                            let end = toks[end_tok].end;
                                            detection.complete.push(make_unit(
                                                text,
                                                Language::JavaLike,
                                                start,
                                                brace,
                                                end,
                                                name,
                                            ));
                                            i = end_tok + 1;
                                            continue;
                                        }
                                        None => {
                                            detection.in_progress = Some(OpenUnit {
                                                start,
                                                name,
                                                signature_end: brace,
                                                content_end: text.len(),
                                            });
                                            break;
                                        }
                                    }
                                }
                                Some(_) => {}
                            }
                        }
                    }
                }
                Kind::Punct(b'{') => scopes.push(Scope::Block),
                Kind::Punct(b'}') => {
                    scopes.pop();
                }
                _ => {}
            }
            i += 1;
        }
        detection
    }

    /// Pieces of a method signature needed to forward one method to another.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub(crate) struct SignatureParts {
        pub type_params: String,
        pub return_type: String,
        pub params: Vec<(String, String)>,
    }

    /// Splits a detected signature into return type and `(type, name)`
    /// parameters.
    pub(crate) fn signature_parts(signature: &str) -> Option<SignatureParts> {
        let toks = lex(signature);
        let open = toks.iter().position(|t| is_punct(t, b'('))?;
        let name = open.checked_sub(1)?;
        let close = match_forward(&toks, open, b'(', b')')?;
        let mut ty_start = name.checked_sub(1)?;
        while is_punct(&toks[ty_start], b']') {
            ty_start = ty_start.checked_sub(2)?;
        }
        if is_punct(&toks[ty_start], b'>') {
            ty_start = match_backward(&toks, ty_start, b'<', b'>')?.checked_sub(1)?;
        }
        while ty_start >= 2 && is_punct(&toks[ty_start - 1], b'.') {
            ty_start -= 2;
        }
        let return_type = String::from(signature[toks[ty_start].start..toks[name - 1].end].trim());
        let mut type_params = String::new();
        if ty_start >= 1 && is_punct(&toks[ty_start - 1], b'>') {
            if let Some(o) = match_backward(&toks, ty_start - 1, b'<', b'>') {
                type_params = signature[toks[o].start..toks[ty_start - 1].end].into();
            }
        }

        let mut params = Vec::new();
        let mut depth = 0i32;
        let mut seg_start = open + 1;
        for k in open + 1..=close {
            let t = &toks[k];
            match t.kind {
                Kind::Punct(b'<' | b'(' | b'[') => depth += 1,
                Kind::Punct(b'>' | b']') => depth -= 1,
                Kind::Punct(b')') if k != close => depth -= 1,
                _ => {}
            }
            let split = (depth == 0 && is_punct(t, b',')) || k == close;
            if split {
                if k > seg_start {
                    let seg = &toks[seg_start..k];
                    let pname = seg.iter().rev().find_map(|t| ident(signature, t))?;
                    let last = seg.iter().rposition(|t| ident(signature, t) == Some(pname))?;
                    let mut first = 0;
                    while first < last {
                        let w = ident(signature, &seg[first]);
                        if w == Some("final") {
                            first += 1;
                        } else if is_punct(&seg[first], b'@') {
                            first += 2;
                        } else {
                            break;
                        }
                    }
                    if first >= last {
                        return None;
                    }
                    let ty = signature[seg[first].start..seg[last - 1].end].trim();
                    params.push((String::from(ty), String::from(pname)));
                }
                seg_start = k + 1;
            }
        }
        Some(SignatureParts {
            type_params,
            return_type,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn py(text: &str) -> Detection {
        detect_complete_units(text, Language::PythonLike)
    }

    fn java(text: &str) -> Detection {
        detect_complete_units(text, Language::JavaLike)
    }

    #[test]
    fn python_unit_ends_at_unindented_line() {
        let text = "def square(x):\n    return x * x\nprint(\"done\")\n";
        let d = py(text);
        assert_eq!(d.complete.len(), 1);
        let u = &d.complete[0];
        assert_eq!(u.canonical_text, "def square(x):\n    return x * x\n");
        assert_eq!(u.char_span, (0, 32));
        assert_eq!(u.name, "square");
        assert_eq!(u.signature_text, "def square(x):\n");
        assert_eq!(u.body_text, "    return x * x\n");
        assert!(d.in_progress.is_none());
    }

    #[test]
    fn python_signature_alone_is_open() {
        let d = py("def square(x):\n");
        assert!(d.complete.is_empty());
        let open = d.in_progress.unwrap();
        assert_eq!(open.start, 0);
        assert_eq!(open.name, "square");
        assert_eq!(open.provisional("def square(x):\n", Language::PythonLike).canonical_text, "def square(x):\n");
    }

    #[test]
    fn prose_has_no_units() {
        let d = py("Here is a function that computes the square of a number.\n");
        assert_eq!(d, Detection::default());
        let d = java("Here is a function that...");
        assert_eq!(d, Detection::default());
    }

    #[test]
    fn python_partial_signatures() {
        assert_eq!(py("def squ"), Detection::default());
        assert_eq!(py("def square(x"), Detection::default());
        assert_eq!(py("def square(x)"), Detection::default());
        assert!(py("def square(x):").in_progress.is_some());
        assert_eq!(py("define it\n"), Detection::default());
        assert_eq!(py("    def inner(x):\n        pass\n"), Detection::default());
    }

    #[test]
    fn python_annotations_multiline_params_and_one_liners() {
        let text = "def f(a: int,\n      b: dict[str, int] = {}) -> list[int]:\n    return [a]\nx = 1\n";
        let d = py(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].signature_text, "def f(a: int,\n      b: dict[str, int] = {}) -> list[int]:\n");

        let d = py("def g(x): return x\nprint(g(1))\n");
        assert_eq!(d.complete[0].canonical_text, "def g(x): return x\n");

        let d = py("async def h():\n    await x\ny\n");
        assert_eq!(d.complete[0].name, "h");
    }

    #[test]
    fn python_blank_and_comment_lines_do_not_terminate() {
        let text = "def f(x):\n    y = x\n\n# note\n    return y\n\n# trailing\nz = f(1)\n";
        let d = py(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].canonical_text, "def f(x):\n    y = x\n\n# note\n    return y\n");
    }

    #[test]
    fn python_nested_defs_are_body() {
        let text = "def outer(x):\n    def inner(y):\n        return y\n    return inner(x)\nouter(1)\n";
        let d = py(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].name, "outer");
        assert!(d.complete[0].canonical_text.ends_with("    return inner(x)\n"));
    }

    #[test]
    fn python_decorators_included() {
        let text = "import functools\n@functools.lru_cache(None)\ndef fib(n):\n    return n\nprint(1)\n";
        let d = py(text);
        let u = &d.complete[0];
        assert!(u.canonical_text.starts_with("@functools.lru_cache(None)\ndef fib(n):"));
        assert!(u.signature_text.starts_with("@functools"));
        assert_eq!(u.preamble_refs, vec![(0, 16)]);
    }

    #[test]
    fn python_consecutive_units_and_open_tail() {
        let text = "def f(x):\n    return g(x)\ndef g(x):\n    return x\n";
        let d = py(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].name, "f");
        let open = d.in_progress.unwrap();
        assert_eq!(open.name, "g");
        assert_eq!(open.provisional(text, Language::PythonLike).canonical_text, "def g(x):\n    return x\n");
    }

    #[test]
    fn python_provisional_ignores_trailing_indentation() {
        let text = "def f(x):\n    return x\n    ";
        let open = py(text).in_progress.unwrap();
        assert_eq!(open.provisional(text, Language::PythonLike).canonical_text, "def f(x):\n    return x\n");
    }

    #[test]
    fn partial_fence_does_not_terminate() {
        let text = "def f(x):\n    return x\n``";
        let d = py(text);
        assert!(d.complete.is_empty());
        let stripped = strip_fences("def f(x):\n    return x\n```\nThat is all.\n");
        let d = py(&stripped.text);
        assert_eq!(d.complete.len(), 1);
    }

    #[test]
    fn fence_stripping_and_offsets() {
        let raw = "Sure:\n```python\ndef f(x):\n    return x\n```\nDone\n";
        let s = strip_fences(raw);
        assert_eq!(s.text, "Sure:\ndef f(x):\n    return x\nDone\n");
        let start = s.text.find("def").unwrap();
        assert_eq!(s.to_raw(start), raw.find("def").unwrap());
        let done = s.text.find("Done").unwrap();
        assert_eq!(s.to_raw(done), raw.find("Done").unwrap());
        let unit = &py(&s.text).complete[0];
        let (a, b) = s.to_raw_span(unit.char_span);
        assert_eq!(&raw[a..b], unit.canonical_text);
    }

    #[test]
    fn java_nested_braces() {
        let text = "public static int f(int x) { if (x > 0) { return x; } return -x; }";
        let d = java(text);
        assert_eq!(d.complete.len(), 1);
        let u = &d.complete[0];
        assert_eq!(u.canonical_text, text);
        assert_eq!(u.name, "f");
        assert_eq!(u.signature_text, "public static int f(int x) ");
        assert!(u.body_text.starts_with('{'));
    }

    #[test]
    fn java_in_progress() {
        let d = java("public static int f(int x) { if (x > 0) {");
        assert!(d.complete.is_empty());
        assert_eq!(d.in_progress.unwrap().start, 0);
    }

    #[test]
    fn java_braces_in_literals_and_comments() {
        let text = "int f() { String s = \"}}\"; char c = '}'; // }\n /* } */ return 1; }";
        let d = java(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].canonical_text, text);
        // an unfinished literal at the end must not close the method
        let d = java("int f() { return \"}");
        assert!(d.complete.is_empty());
        let d = java("int f() { char c = '}");
        assert!(d.complete.is_empty());
    }

    #[test]
    fn java_prose_apostrophes() {
        let text = "Here's the method you asked for:\n\npublic int add(int a, int b) {\n    return a + b;\n}\nIt's simple.\n";
        let d = java(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].name, "add");
    }

    #[test]
    fn java_class_wrapper_is_looked_through() {
        let text = "import java.util.*;\n\nclass Solution {\n    private static int helper(int x) { return x; }\n\n    public static List<Integer> twice(List<Integer> xs) throws Exception {\n        return xs;\n    }\n}\n";
        let d = java(text);
        let names: Vec<_> = d.complete.iter().map(|u| u.name.as_str()).collect();
        assert_eq!(names, vec!["helper", "twice"]);
        assert!(d.complete[1].signature_text.starts_with("public static List<Integer> twice"));
        assert_eq!(d.complete[0].preamble_refs, vec![(0, 19)]);
    }

    #[test]
    fn java_generics_annotations_arrays() {
        let text = "@Override\npublic static <T extends Comparable<T>> T[] sortAll(final T[] xs) { return xs; }";
        let d = java(text);
        assert_eq!(d.complete.len(), 1);
        assert!(d.complete[0].canonical_text.starts_with("@Override"));
        let text = "@SuppressWarnings(\"unchecked\") java.util.Map<String, int[]> m() { return null; }";
        let d = java(text);
        assert_eq!(d.complete[0].canonical_text, text);
    }

    #[test]
    fn java_rejects_calls_and_statements() {
        assert!(java("System.out.println(f(3));").complete.is_empty());
        assert!(java("int x = f(3);").complete.is_empty());
        assert!(java("if (x) { y(); }").complete.is_empty());
        assert!(java("new Foo(1) { }").complete.is_empty());
        assert!(java("abstract int f(int x);").complete.is_empty());
        assert!(java("return g(x) { }").complete.is_empty());
    }

    #[test]
    fn java_methods_inside_bodies_are_not_units() {
        let text = "void a() { Runnable r = new Runnable() { public void run() { } }; }";
        let d = java(text);
        assert_eq!(d.complete.len(), 1);
        assert_eq!(d.complete[0].name, "a");
    }

    #[test]
    fn java_signature_parts() {
        let p = java::signature_parts("public static <T> java.util.List<T> pick(final int n, Map<String, List<T>> m, int... rest) ")
            .unwrap();
        assert_eq!(p.type_params, "<T>");
        assert_eq!(p.return_type, "java.util.List<T>");
        assert_eq!(
            p.params,
            vec![
                ("int".into(), "n".into()),
                ("Map<String, List<T>>".into(), "m".into()),
                ("int...".into(), "rest".into())
            ]
        );
        let p = java::signature_parts("void run()").unwrap();
        assert_eq!(p.return_type, "void");
        assert!(p.params.is_empty());
    }

    #[test]
    fn preamble_extraction() {
        assert_eq!(extract_preamble("import math\ndef f(x): ...", Language::PythonLike), "import math");
        assert_eq!(
            extract_preamble("import java.util.*;\nimport java.util.*;\nclass A {}\n", Language::JavaLike),
            "import java.util.*;"
        );
        assert_eq!(extract_preamble("def f(x):\n    return x\n", Language::PythonLike), "");
        assert_eq!(
            extract_preamble("from typing import List\n    import os\nimport ma", Language::PythonLike),
            "from typing import List"
        );
        assert_eq!(
            extract_preamble("package a.b;\nimport java.util.List; // x\n", Language::JavaLike),
            "package a.b;\nimport java.util.List;"
        );
    }

    fn fragments() -> impl Strategy<Value = Vec<String>> {
        let frag = prop_oneof![
            Just("def f(x):".to_string()),
            Just("def g(a, b):".to_string()),
            Just("\n".to_string()),
            Just("    ".to_string()),
            Just("return x".to_string()),
            Just(" + 1".to_string()),
            Just("# c".to_string()),
            Just("print(1)".to_string()),
            Just("```".to_string()),
            Just("@dec".to_string()),
            Just("int h(int y) {".to_string()),
            Just("}".to_string()),
            Just("{".to_string()),
            Just("\"".to_string()),
            Just("'".to_string()),
            Just("/*".to_string()),
            Just("*/".to_string()),
            Just("class C ".to_string()),
            "[a-z ]{0,4}".prop_map(|s| s),
        ];
        proptest::collection::vec(frag, 0..40)
    }

    proptest! {
        #[test]
        fn spans_are_exact_slices(frags in fragments(), lang in prop_oneof![Just(Language::PythonLike), Just(Language::JavaLike)]) {
            let text: String = frags.concat();
            let d = detect_complete_units(&text, lang);
            for u in &d.complete {
                prop_assert_eq!(&text[u.char_span.0..u.char_span.1], u.canonical_text.as_str());
                prop_assert!(u.canonical_text.starts_with(u.signature_text.as_str()));
                prop_assert_eq!(format!("{}{}", u.signature_text, u.body_text), u.canonical_text.clone());
            }
            prop_assert_eq!(detect_complete_units(&text, lang), d);
        }

        #[test]
        fn completeness_is_monotone(frags in fragments(), cut in 0usize..40, lang in prop_oneof![Just(Language::PythonLike), Just(Language::JavaLike)]) {
            let cut = cut.min(frags.len());
            let prefix: String = frags[..cut].concat();
            let full: String = frags.concat();
            let before = detect_complete_units(&prefix, lang);
            let after = detect_complete_units(&full, lang);
            for u in &before.complete {
                prop_assert!(
                    after.complete.iter().any(|v| v.char_span == u.char_span && v.canonical_text == u.canonical_text),
                    "unit {:?} lost after extension", u.canonical_text
                );
            }
        }
    }
}
