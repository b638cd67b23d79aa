//! S-expressions: in-store representation, reader and printer.
//!
//! An s-expression is a 2-cell buffer `[tag, content]`. A cons content is a
//! 2-cell buffer holding the car and cdr s-expressions.

use std::collections::VecDeque;
use std::io::BufRead;

use thiserror::Error;

use crate::state::State;
use crate::store::{buffer_of, Store, StoreError, Word, NIL};

pub mod tag {
    pub const EMPTY: i64 = 0;
    pub const BOOLEAN: i64 = 1;
    pub const FIXNUM: i64 = 2;
    pub const SYMBOL: i64 = 3;
    pub const CONS: i64 = 4;
    pub const STRING: i64 = 5;
    pub const EXPRESSION: i64 = 6;
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SExprError {
    #[error("not an s-expression: {0}")]
    Malformed(String),
    #[error("expected {expected}, got tag {got}")]
    WrongTag { expected: &'static str, got: i64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub fn make(store: &mut Store, tag: i64, content: Word) -> Word {
    Word::Boxed(store.alloc(vec![Word::Unboxed(tag), content]))
}

pub fn tag_of(store: &Store, s: Word) -> Result<i64, SExprError> {
    let cells = store.cells(buffer_of(s)?)?;
    match cells {
        [Word::Unboxed(t), _] => Ok(*t),
        _ => Err(SExprError::Malformed(format!("{s}"))),
    }
}

/// Untyped ejection.
pub fn content(store: &Store, s: Word) -> Result<Word, SExprError> {
    tag_of(store, s)?;
    Ok(store.load(s, 1)?)
}

fn tag_name(t: i64) -> &'static str {
    match t {
        tag::EMPTY => "an empty list",
        tag::BOOLEAN => "a boolean",
        tag::FIXNUM => "a fixnum",
        tag::SYMBOL => "a symbol",
        tag::CONS => "a cons",
        tag::STRING => "a string",
        tag::EXPRESSION => "an expression",
        _ => "a known type",
    }
}

/// Typed ejection.
pub fn eject(store: &Store, s: Word, expected: i64) -> Result<Word, SExprError> {
    let t = tag_of(store, s)?;
    if t != expected {
        return Err(SExprError::WrongTag { expected: tag_name(expected), got: t });
    }
    Ok(store.load(s, 1)?)
}

pub fn empty(store: &mut Store) -> Word {
    make(store, tag::EMPTY, NIL)
}

pub fn fixnum(store: &mut Store, n: i64) -> Word {
    make(store, tag::FIXNUM, Word::Unboxed(n))
}

pub fn boolean(store: &mut Store, b: bool) -> Word {
    make(store, tag::BOOLEAN, Word::from_bool(b))
}

pub fn symbol(store: &mut Store, s: crate::state::Sym) -> Word {
    make(store, tag::SYMBOL, s.word())
}

pub fn string(store: &mut Store, text: &str) -> Word {
    let w = store.string(text);
    make(store, tag::STRING, w)
}

pub fn expression(store: &mut Store, e: crate::ast::Expr) -> Word {
    make(store, tag::EXPRESSION, e.word())
}

pub fn cons(store: &mut Store, car: Word, cdr: Word) -> Word {
    let c = store.cons(car, cdr);
    make(store, tag::CONS, c)
}

pub fn car(store: &Store, s: Word) -> Result<Word, SExprError> {
    let c = eject(store, s, tag::CONS)?;
    Ok(store.car(c)?)
}

pub fn cdr(store: &Store, s: Word) -> Result<Word, SExprError> {
    let c = eject(store, s, tag::CONS)?;
    Ok(store.cdr(c)?)
}

/// Follow a `c[ad]+r` path given as the letters between `c` and `r`,
/// applied right to left as in the usual naming.
pub fn path(store: &Store, s: Word, letters: &str) -> Result<Word, SExprError> {
    let mut w = s;
    for l in letters.chars().rev() {
        w = match l {
            'a' => car(store, w)?,
            'd' => cdr(store, w)?,
            _ => return Err(SExprError::Malformed(format!("bad selector letter {l}"))),
        };
    }
    Ok(w)
}

pub fn is_empty(store: &Store, s: Word) -> bool {
    tag_of(store, s).ok() == Some(tag::EMPTY)
}

pub fn is_cons(store: &Store, s: Word) -> bool {
    tag_of(store, s).ok() == Some(tag::CONS)
}

pub fn list(store: &mut Store, items: &[Word]) -> Word {
    let mut acc = empty(store);
    for &w in items.iter().rev() {
        acc = cons(store, w, acc);
    }
    acc
}

/// Elements of a proper s-list.
pub fn list_to_vec(store: &Store, mut s: Word) -> Result<Vec<Word>, SExprError> {
    let mut out = Vec::new();
    loop {
        match tag_of(store, s)? {
            tag::EMPTY => return Ok(out),
            tag::CONS => {
                out.push(car(store, s)?);
                s = cdr(store, s)?;
                if out.len() > crate::store::MAX_BUFFER_WORDS as usize {
                    return Err(SExprError::Malformed("cyclic s-list".into()));
                }
            }
            t => return Err(SExprError::WrongTag { expected: "an s-list", got: t }),
        }
    }
}

pub fn is_list(store: &Store, s: Word) -> bool {
    list_to_vec(store, s).is_ok()
}

/// The symbol inside an s-symbol, if `s` is one.
pub fn as_symbol(st: &State, s: Word) -> Option<crate::state::Sym> {
    match tag_of(&st.store, s).ok()? {
        tag::SYMBOL => st.as_symbol(st.store.load(s, 1).ok()?),
        _ => None,
    }
}

/// Structural equality; symbols and other boxed atoms compare by identity,
/// strings by contents.
pub fn equal(store: &Store, a: Word, b: Word) -> bool {
    let (ta, tb) = match (tag_of(store, a), tag_of(store, b)) {
        (Ok(x), Ok(y)) => (x, y),
        _ => return a == b,
    };
    if ta != tb {
        return false;
    }
    match ta {
        tag::CONS => {
            let ok = |f: fn(&Store, Word) -> Result<Word, SExprError>| match (f(store, a), f(store, b)) {
                (Ok(x), Ok(y)) => equal(store, x, y),
                _ => false,
            };
            ok(car) && ok(cdr)
        }
        tag::STRING => {
            let ca = store.load(a, 1).and_then(|w| store.vector_to_vec(w));
            let cb = store.load(b, 1).and_then(|w| store.vector_to_vec(w));
            matches!((ca, cb), (Ok(x), Ok(y)) if x == y)
        }
        _ => store.load(a, 1).ok() == store.load(b, 1).ok(),
    }
}

// Reading.

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// A character stream with one character of lookahead.
pub trait CharSource {
    fn peek(&mut self) -> Option<char>;
    fn next(&mut self) -> Option<char>;
    /// 1-based line and column of the next character.
    fn position(&self) -> (usize, usize);
}

#[derive(Clone, Copy, Debug, Default)]
struct Position {
    line: usize,
    column: usize,
}

impl Position {
    fn start() -> Position {
        Position { line: 1, column: 1 }
    }

    fn advance(&mut self, c: char) {
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
    }
}

pub struct StrSource {
    chars: Vec<char>,
    index: usize,
    pos: Position,
}

impl StrSource {
    pub fn new(text: &str) -> StrSource {
        StrSource { chars: text.chars().collect(), index: 0, pos: Position::start() }
    }
}

impl CharSource for StrSource {
    fn peek(&mut self) -> Option<char> {
        self.chars.get(self.index).copied()
    }

    fn next(&mut self) -> Option<char> {
        let c = self.chars.get(self.index).copied()?;
        self.index += 1;
        self.pos.advance(c);
        Some(c)
    }

    fn position(&self) -> (usize, usize) {
        (self.pos.line, self.pos.column)
    }
}

/// Lazily pulls lines from a buffered reader.
pub struct ReaderSource {
    inner: Box<dyn BufRead>,
    pending: VecDeque<char>,
    pos: Position,
    eof: bool,
}

impl ReaderSource {
    pub fn new(inner: Box<dyn BufRead>) -> ReaderSource {
        ReaderSource { inner, pending: VecDeque::new(), pos: Position::start(), eof: false }
    }

    fn fill(&mut self) {
        while self.pending.is_empty() && !self.eof {
            let mut line = String::new();
            match self.inner.read_line(&mut line) {
                Ok(0) | Err(_) => self.eof = true,
                Ok(_) => self.pending.extend(line.chars()),
            }
        }
    }

    /// Drop the rest of the current line.
    pub fn skip_line(&mut self) {
        while let Some(c) = self.next() {
            if c == '\n' {
                break;
            }
        }
    }
}

impl Default for ReaderSource {
    fn default() -> Self {
        ReaderSource::new(Box::new(std::io::empty()))
    }
}

impl CharSource for ReaderSource {
    fn peek(&mut self) -> Option<char> {
        self.fill();
        self.pending.front().copied()
    }

    fn next(&mut self) -> Option<char> {
        self.fill();
        let c = self.pending.pop_front()?;
        self.pos.advance(c);
        Some(c)
    }

    fn position(&self) -> (usize, usize) {
        (self.pos.line, self.pos.column)
    }
}

const MAX_READ_DEPTH: usize = 10_000;

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '(' | ')' | ';' | '\'' | '`' | ',' | '"' | '.')
}

struct Reader<'a> {
    st: &'a mut State,
    src: &'a mut dyn CharSource,
    depth: usize,
}

impl Reader<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        let (line, column) = self.src.position();
        ParseError { line, column, message: message.into() }
    }

    fn skip_atmosphere(&mut self) {
        while let Some(c) = self.src.peek() {
            if c == ';' {
                while let Some(c) = self.src.next() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if c.is_whitespace() {
                self.src.next();
            } else {
                break;
            }
        }
    }

    fn datum(&mut self) -> Result<Option<Word>, ParseError> {
        self.skip_atmosphere();
        let c = match self.src.peek() {
            None => return Ok(None),
            Some(c) => c,
        };
        self.depth += 1;
        if self.depth > MAX_READ_DEPTH {
            return Err(self.error("nesting too deep"));
        }
        let r = match c {
            '(' => {
                self.src.next();
                self.list_tail().map(Some)
            }
            ')' => Err(self.error("unexpected ')'")),
            '.' => Err(self.error("unexpected '.'")),
            '\'' => self.prefixed("quote"),
            '`' => self.prefixed("quasiquote"),
            ',' => {
                self.src.next();
                if self.src.peek() == Some('@') {
                    self.src.next();
                    self.wrap("unquote-splicing")
                } else {
                    self.wrap("unquote")
                }
            }
            '"' => self.string().map(Some),
            _ => self.token().map(Some),
        };
        self.depth -= 1;
        r
    }

    fn required(&mut self) -> Result<Word, ParseError> {
        match self.datum()? {
            Some(w) => Ok(w),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn prefixed(&mut self, name: &str) -> Result<Option<Word>, ParseError> {
        self.src.next();
        self.wrap(name)
    }

    fn wrap(&mut self, name: &str) -> Result<Option<Word>, ParseError> {
        let inner = self.required()?;
        let sym = self.st.intern(name);
        let head = symbol(&mut self.st.store, sym);
        Ok(Some(list(&mut self.st.store, &[head, inner])))
    }

    /// After the opening parenthesis.
    fn list_tail(&mut self) -> Result<Word, ParseError> {
        let mut items = Vec::new();
        let mut tail = None;
        loop {
            self.skip_atmosphere();
            match self.src.peek() {
                None => return Err(self.error("unbalanced parenthesis")),
                Some(')') => {
                    self.src.next();
                    break;
                }
                Some('.') => {
                    if items.is_empty() {
                        return Err(self.error("dot with no car"));
                    }
                    self.src.next();
                    tail = Some(self.required()?);
                    self.skip_atmosphere();
                    match self.src.next() {
                        Some(')') => break,
                        None => return Err(self.error("unbalanced parenthesis")),
                        Some(_) => return Err(self.error("expected ')' after dotted tail")),
                    }
                }
                Some(_) => items.push(self.required()?),
            }
        }
        let store = &mut self.st.store;
        let mut acc = match tail {
            Some(t) => t,
            None => empty(store),
        };
        for &w in items.iter().rev() {
            acc = cons(store, w, acc);
        }
        Ok(acc)
    }

    fn string(&mut self) -> Result<Word, ParseError> {
        self.src.next();
        let mut text = String::new();
        loop {
            match self.src.next() {
                None => return Err(self.error("unterminated string")),
                Some('"') => break,
                Some('\\') => match self.src.next() {
                    Some('"') => text.push('"'),
                    Some('\\') => text.push('\\'),
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some(c) => return Err(self.error(format!("unknown escape \\{c}"))),
                    None => return Err(self.error("unterminated string")),
                },
                Some(c) => text.push(c),
            }
        }
        Ok(string(&mut self.st.store, &text))
    }

    fn token(&mut self) -> Result<Word, ParseError> {
        let mut text = String::new();
        while let Some(c) = self.src.peek() {
            if is_delimiter(c) {
                break;
            }
            text.push(c);
            self.src.next();
        }
        let store = &mut self.st.store;
        if text == "#t" {
            return Ok(boolean(store, true));
        }
        if text == "#f" {
            return Ok(boolean(store, false));
        }
        if is_fixnum_token(&text) {
            return match text.parse::<i64>() {
                Ok(n) => Ok(fixnum(store, n)),
                Err(_) => Err(self.error(format!("fixnum out of range: {text}"))),
            };
        }
        let sym = self.st.intern(&text);
        Ok(symbol(&mut self.st.store, sym))
    }
}

fn is_fixnum_token(t: &str) -> bool {
    let digits = t.strip_prefix(['+', '-']).unwrap_or(t);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Read one s-expression, or `None` at end of input.
pub fn read(st: &mut State, src: &mut dyn CharSource) -> Result<Option<Word>, ParseError> {
    Reader { st, src, depth: 0 }.datum()
}

/// Read every s-expression in `text`.
pub fn read_all(st: &mut State, text: &str) -> Result<Vec<Word>, ParseError> {
    let mut src = StrSource::new(text);
    let mut out = Vec::new();
    while let Some(s) = read(st, &mut src)? {
        out.push(s);
    }
    Ok(out)
}

/// Read exactly one s-expression from `text`.
pub fn read_one(st: &mut State, text: &str) -> Result<Word, ParseError> {
    let mut v = read_all(st, text)?;
    match v.len() {
        1 => Ok(v.pop().unwrap()),
        n => Err(ParseError { line: 1, column: 1, message: format!("expected one s-expression, found {n}") }),
    }
}

// Printing.

const MAX_PRINT_DEPTH: usize = 2_000;

pub fn print(st: &State, s: Word) -> String {
    let mut out = String::new();
    print_into(st, s, &mut out, 0);
    out
}

fn print_into(st: &State, s: Word, out: &mut String, depth: usize) {
    if depth > MAX_PRINT_DEPTH {
        out.push_str("...");
        return;
    }
    let store = &st.store;
    let (t, c) = match (tag_of(store, s), store.load(s, 1)) {
        (Ok(t), Ok(c)) => (t, c),
        _ => {
            out.push_str(&format!("#<non-s-expression {s}>"));
            return;
        }
    };
    match t {
        tag::EMPTY => out.push_str("()"),
        tag::BOOLEAN => out.push_str(if c.is_true() { "#t" } else { "#f" }),
        tag::FIXNUM => out.push_str(&c.to_string()),
        tag::SYMBOL => match st.as_symbol(c) {
            Some(sym) => out.push_str(&st.symbol_name(sym)),
            None => out.push_str(&format!("#<symbol {c}>")),
        },
        tag::STRING => {
            out.push('"');
            for ch in store.string_to_rust(c).unwrap_or_default().chars() {
                match ch {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    _ => out.push(ch),
                }
            }
            out.push('"');
        }
        tag::EXPRESSION => {
            let h = store.load(c, 1).map(|w| w.to_string()).unwrap_or_else(|_| "?".into());
            out.push_str(&format!("#<expression {h}>"));
        }
        tag::CONS => {
            out.push('(');
            let mut cur = s;
            let mut first = true;
            let mut count = 0usize;
            while is_cons(store, cur) {
                if !first {
                    out.push(' ');
                }
                first = false;
                print_into(st, car(store, cur).unwrap(), out, depth + 1);
                cur = cdr(store, cur).unwrap();
                count += 1;
                if count > crate::store::MAX_BUFFER_WORDS as usize {
                    out.push_str(" ...");
                    break;
                }
            }
            if !is_empty(store, cur) {
                out.push_str(" . ");
                print_into(st, cur, out, depth + 1);
            }
            out.push(')');
        }
        other => out.push_str(&format!("#<s-expression {other} {c}>")),
    }
}
