//! Minimal JSON reader that keeps source positions.
//!
//! `serde_json` discards positions once a value is built and silently keeps
//! the last of two duplicate keys. Protocol diagnostics need both, so the
//! document is first read into this tree and then typed by the parser.

use std::fmt;

/// Byte range plus the 1-based line/column of its first character.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Null,
    Bool(bool),
    Number(String),
    String(String),
    Array(Vec<Spanned>),
    Object(Vec<Member>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spanned {
    pub node: Node,
    pub span: SourceSpan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub key: String,
    pub key_span: SourceSpan,
    pub value: Spanned,
}

impl Spanned {
    pub fn kind_name(&self) -> &'static str {
        match self.node {
            Node::Null => "null",
            Node::Bool(_) => "boolean",
            Node::Number(_) => "number",
            Node::String(_) => "string",
            Node::Array(_) => "list",
            Node::Object(_) => "map",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JsonError {
    Syntax { message: String, span: SourceSpan },
    /// `depth` is 0 for keys of the outermost map.
    DuplicateKey {
        key: String,
        span: SourceSpan,
        depth: usize,
    },
}

impl JsonError {
    pub fn span(&self) -> SourceSpan {
        match self {
            JsonError::Syntax { span, .. } | JsonError::DuplicateKey { span, .. } => *span,
        }
    }
}

pub fn parse(text: &str) -> Result<Spanned, JsonError> {
    let mut reader = Reader {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    reader.skip_ws();
    let value = reader.value(0)?;
    reader.skip_ws();
    if reader.pos < reader.bytes.len() {
        return Err(reader.syntax("trailing characters after document"));
    }
    Ok(value)
}

const MAX_DEPTH: usize = 128;

struct Reader<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Clone, Copy)]
struct Mark {
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Reader<'a> {
    fn mark(&self) -> Mark {
        Mark {
            pos: self.pos,
            line: self.line,
            col: self.col,
        }
    }

    fn span_from(&self, m: Mark) -> SourceSpan {
        SourceSpan {
            start: m.pos,
            end: self.pos,
            line: m.line,
            col: m.col,
        }
    }

    fn syntax(&self, message: impl Into<String>) -> JsonError {
        JsonError::Syntax {
            message: message.into(),
            span: SourceSpan {
                start: self.pos,
                end: self.pos,
                line: self.line,
                col: self.col,
            },
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    // Advances over one full character so columns count code points.
    fn bump(&mut self) -> Option<char> {
        let c = self.src[self.pos..].chars().next()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(b' ' | b'\t' | b'\n' | b'\r') = self.peek() {
            self.bump();
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), JsonError> {
        if self.peek() == Some(b) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected `{}`", b as char)))
        }
    }

    fn unexpected(&self, wanted: &str) -> JsonError {
        match self.src[self.pos..].chars().next() {
            Some(c) => self.syntax(format!("{wanted}, found `{}`", c.escape_debug())),
            None => self.syntax(format!("{wanted}, found end of input")),
        }
    }

    fn value(&mut self, depth: usize) -> Result<Spanned, JsonError> {
        if depth > MAX_DEPTH {
            return Err(self.syntax("document nested too deeply"));
        }
        let start = self.mark();
        let node = match self.peek() {
            Some(b'{') => self.object(depth)?,
            Some(b'[') => self.array(depth)?,
            Some(b'"') => Node::String(self.string()?),
            Some(b't') => self.keyword("true", Node::Bool(true))?,
            Some(b'f') => self.keyword("false", Node::Bool(false))?,
            Some(b'n') => self.keyword("null", Node::Null)?,
            Some(b'-' | b'0'..=b'9') => self.number()?,
            _ => return Err(self.unexpected("expected a value")),
        };
        Ok(Spanned {
            node,
            span: self.span_from(start),
        })
    }

    fn keyword(&mut self, word: &str, node: Node) -> Result<Node, JsonError> {
        if self.src[self.pos..].starts_with(word) {
            for _ in 0..word.len() {
                self.bump();
            }
            Ok(node)
        } else {
            Err(self.unexpected("expected a value"))
        }
    }

    fn number(&mut self) -> Result<Node, JsonError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.bump();
        }
        match self.peek() {
            Some(b'0') => {
                self.bump();
            }
            Some(b'1'..=b'9') => self.digits(),
            _ => return Err(self.unexpected("expected a digit")),
        }
        if self.peek() == Some(b'.') {
            self.bump();
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.unexpected("expected a digit"));
            }
            self.digits();
        }
        if let Some(b'e' | b'E') = self.peek() {
            self.bump();
            if let Some(b'+' | b'-') = self.peek() {
                self.bump();
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.unexpected("expected a digit"));
            }
            self.digits();
        }
        Ok(Node::Number(self.src[start..self.pos].to_string()))
    }

    fn digits(&mut self) {
        while let Some(b'0'..=b'9') = self.peek() {
            self.bump();
        }
    }

    fn string(&mut self) -> Result<String, JsonError> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.syntax("unterminated string"));
            };
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let Some(e) = self.bump() else {
                        return Err(self.syntax("unterminated string"));
                    };
                    match e {
                        '"' => out.push('"'),
                        '\\' => out.push('\\'),
                        '/' => out.push('/'),
                        'b' => out.push('\u{8}'),
                        'f' => out.push('\u{c}'),
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        'u' => out.push(self.unicode_escape()?),
                        other => {
                            return Err(self.syntax(format!(
                                "invalid escape `\\{}`",
                                other.escape_debug()
                            )))
                        }
                    }
                }
                c if (c as u32) < 0x20 => {
                    return Err(self.syntax("control character in string"));
                }
                c => out.push(c),
            }
        }
    }

    fn hex4(&mut self) -> Result<u32, JsonError> {
        let mut v = 0u32;
        for _ in 0..4 {
            let d = self
                .peek()
                .and_then(|b| (b as char).to_digit(16))
                .ok_or_else(|| self.unexpected("expected a hex digit"))?;
            self.bump();
            v = v * 16 + d;
        }
        Ok(v)
    }

    fn unicode_escape(&mut self) -> Result<char, JsonError> {
        let hi = self.hex4()?;
        if (0xD800..0xDC00).contains(&hi) {
            if !self.src[self.pos..].starts_with("\\u") {
                return Err(self.syntax("unpaired surrogate in escape"));
            }
            self.bump();
            self.bump();
            let lo = self.hex4()?;
            if !(0xDC00..0xE000).contains(&lo) {
                return Err(self.syntax("unpaired surrogate in escape"));
            }
            let c = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
            return char::from_u32(c).ok_or_else(|| self.syntax("invalid unicode escape"));
        }
        char::from_u32(hi).ok_or_else(|| self.syntax("unpaired surrogate in escape"))
    }

    fn array(&mut self, depth: usize) -> Result<Node, JsonError> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.bump();
            return Ok(Node::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.bump();
                }
                Some(b']') => {
                    self.bump();
                    return Ok(Node::Array(items));
                }
                _ => return Err(self.unexpected("expected `,` or `]`")),
            }
        }
    }

    fn object(&mut self, depth: usize) -> Result<Node, JsonError> {
        self.expect(b'{')?;
        let mut members: Vec<Member> = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.bump();
            return Ok(Node::Object(members));
        }
        loop {
            self.skip_ws();
            if self.peek() != Some(b'"') {
                return Err(self.unexpected("expected a string key"));
            }
            let key_start = self.mark();
            let key = self.string()?;
            let key_span = self.span_from(key_start);
            if members.iter().any(|m| m.key == key) {
                return Err(JsonError::DuplicateKey {
                    key,
                    span: key_span,
                    depth,
                });
            }
            self.skip_ws();
            self.expect(b':')?;
            self.skip_ws();
            let value = self.value(depth + 1)?;
            members.push(Member {
                key,
                key_span,
                value,
            });
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.bump();
                }
                Some(b'}') => {
                    self.bump();
                    return Ok(Node::Object(members));
                }
                _ => return Err(self.unexpected("expected `,` or `}`")),
            }
        }
    }
}
