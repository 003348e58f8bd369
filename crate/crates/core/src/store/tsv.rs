//! Tab-separated files with backslash escapes: `\t`, `\n`, `\r` and `\\`.

use std::io::BufRead;

use serde::Serialize;

use super::InstanceKind;

pub const DATA_HEADER: &str = "content\tcontext\tmeta";

pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape`]. Unknown escape sequences are kept verbatim.
pub fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn row<S: AsRef<str>>(cells: &[S]) -> String {
    let mut line = cells
        .iter()
        .map(|c| escape(c.as_ref()))
        .collect::<Vec<_>>()
        .join("\t");
    line.push('\n');
    line
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rejected {
    /// 1-based; the header is line 1.
    pub line: usize,
    pub reason: &'static str,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub inserted: usize,
    pub rejected: Vec<Rejected>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct NewInstance {
    pub kind: InstanceKind,
    pub content: String,
    pub context: Option<String>,
    pub meta: String,
}

/// Splits an input file into accepted rows and per-line rejects.
/// Returns `Err` only when the header is wrong or unreadable.
pub(crate) fn read_rows(
    mut input: impl BufRead,
) -> Result<(Vec<NewInstance>, Vec<Rejected>), String> {
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    let mut rows = Vec::new();
    let mut rejected = Vec::new();

    let mut next_line = |buf: &mut Vec<u8>| -> std::io::Result<bool> {
        buf.clear();
        let n = input.read_until(b'\n', buf)?;
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        Ok(n > 0)
    };

    if !next_line(&mut buf).map_err(|e| e.to_string())? {
        return Err("input is empty; expected a header row".to_string());
    }
    line_no += 1;
    let header = std::str::from_utf8(&buf).map_err(|_| "header is not UTF-8".to_string())?;
    let header = header.strip_prefix('\u{feff}').unwrap_or(header);
    if header != DATA_HEADER {
        return Err(format!(
            "header must be `content<TAB>context<TAB>meta`, found `{}`",
            header.escape_debug()
        ));
    }

    while next_line(&mut buf).map_err(|e| e.to_string())? {
        line_no += 1;
        let reject = |reason, detail: String| Rejected {
            line: line_no,
            reason,
            detail,
        };
        let Ok(line) = std::str::from_utf8(&buf) else {
            rejected.push(reject("invalid-utf8", "line is not valid UTF-8".into()));
            continue;
        };
        match parse_row(line) {
            Ok(row) => rows.push(row),
            Err((reason, detail)) => rejected.push(reject(reason, detail)),
        }
    }
    Ok((rows, rejected))
}

fn parse_row(line: &str) -> Result<NewInstance, (&'static str, String)> {
    let cells: Vec<&str> = line.split('\t').collect();
    if cells.len() != 3 {
        return Err((
            "column-count",
            format!("expected 3 columns, found {}", cells.len()),
        ));
    }
    let content = unescape(cells[0]);
    let context = unescape(cells[1]);
    let meta = unescape(cells[2]);

    if content.trim().is_empty() {
        return Err(("empty-content", "content is empty".into()));
    }
    if let Err(e) = serde_json::from_str::<serde_json::Value>(&meta) {
        return Err(("invalid-meta", format!("meta is not JSON: {e}")));
    }
    let kind = match page_list(&content) {
        Some(pages) if pages.is_empty() => {
            return Err(("empty-content", "page list is empty".into()))
        }
        Some(_) => InstanceKind::File,
        None => InstanceKind::Text,
    };
    Ok(NewInstance {
        kind,
        content,
        context: (!context.is_empty()).then_some(context),
        meta,
    })
}

/// Content that is a JSON list of strings names page images.
pub(crate) fn page_list(content: &str) -> Option<Vec<String>> {
    if !content.trim_start().starts_with('[') {
        return None;
    }
    serde_json::from_str::<Vec<String>>(content).ok()
}
