//! Memory dumps, the binary marshalling format, and whole-program images.
//!
//! A binary dump is a sequence of 32-bit big-endian words:
//!
//! ```text
//! buffer-count (element-count ((0|1) payload)*)* (0|1) payload
//! ```
//!
//! Tag 0 marks an unboxed two's-complement payload, tag 1 a 0-based buffer
//! index. Buffers are numbered in depth-first, left-to-right pre-order from
//! the main object.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ast::Expr;
use crate::state::{names, State, Sym, TypeDescriptor};
use crate::store::{BufferId, Store, Word, NIL};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("cannot marshal a future")]
    Future,
    #[error("unboxed value {0} does not fit 32 bits")]
    OutOfRange(i64),
    #[error("dangling or destroyed buffer {0:?}")]
    Dangling(BufferId),
    #[error("truncated dump")]
    Truncated,
    #[error("{0} trailing words after the main object")]
    Overlong(usize),
    #[error("buffer index {index} out of range ({count} buffers)")]
    BadIndex { index: u32, count: u32 },
    #[error("bad tag {0}")]
    BadTag(u32),
    #[error("dump length is not a multiple of 4 bytes")]
    Ragged,
    #[error("exec: {0}")]
    Exec(String),
}

// Textual dumps.

const GREEN: &str = "\x1b[32m";
const RED: &str = "\x1b[31m";
const YELLOW: &str = "\x1b[33m";
const RESET: &str = "\x1b[0m";

/// `57`, `0x1F[1 2 0x1F]`: a buffer is expanded at its first occurrence
/// and shown as a bare id afterwards.
pub fn dump_text(store: &Store, w: Word, color: bool) -> String {
    let mut out = String::new();
    let mut seen = std::collections::HashSet::new();
    dump_into(store, w, color, &mut seen, &mut out);
    out
}

fn paint(out: &mut String, color: bool, code: &str, text: &str) {
    if color {
        let _ = write!(out, "{code}{text}{RESET}");
    } else {
        out.push_str(text);
    }
}

fn dump_into(store: &Store, w: Word, color: bool, seen: &mut std::collections::HashSet<BufferId>, out: &mut String) {
    match w {
        Word::Unboxed(n) => {
            let _ = write!(out, "{n}");
        }
        Word::Future(t) => paint(out, color, YELLOW, &format!("#<future {}>", t.0)),
        Word::Boxed(b) => {
            let id = format!("0x{:X}", b.0);
            if !seen.insert(b) {
                paint(out, color, RED, &id);
                return;
            }
            paint(out, color, GREEN, &id);
            out.push('[');
            match store.cells(b) {
                Ok(cells) => {
                    for (i, &c) in cells.iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        dump_into(store, c, color, seen, out);
                    }
                }
                Err(_) => out.push_str("#<destroyed>"),
            }
            out.push(']');
        }
    }
}

// Binary marshalling.

fn encode(w: Word, index: &HashMap<BufferId, u32>) -> Result<[u32; 2], ImageError> {
    match w {
        Word::Unboxed(n) => {
            let v = i32::try_from(n).map_err(|_| ImageError::OutOfRange(n))?;
            Ok([0, v as u32])
        }
        Word::Boxed(b) => Ok([1, index[&b]]),
        Word::Future(_) => Err(ImageError::Future),
    }
}

/// Buffers reachable from `w`, in depth-first left-to-right pre-order.
pub fn reachable(store: &Store, w: Word) -> Result<Vec<BufferId>, ImageError> {
    let mut order = Vec::new();
    let mut index = HashMap::new();
    let mut todo = vec![w];
    while let Some(w) = todo.pop() {
        match w {
            Word::Future(_) => return Err(ImageError::Future),
            Word::Unboxed(_) => {}
            Word::Boxed(b) => {
                if index.contains_key(&b) {
                    continue;
                }
                index.insert(b, order.len() as u32);
                order.push(b);
                let cells = store.cells(b).map_err(|_| ImageError::Dangling(b))?;
                todo.extend(cells.iter().rev().copied());
            }
        }
    }
    Ok(order)
}

pub fn marshal(store: &Store, w: Word) -> Result<Vec<u32>, ImageError> {
    let order = reachable(store, w)?;
    let index: HashMap<BufferId, u32> = order.iter().enumerate().map(|(i, &b)| (b, i as u32)).collect();
    let mut out = vec![order.len() as u32];
    for &b in &order {
        let cells = store.cells(b).map_err(|_| ImageError::Dangling(b))?;
        out.push(cells.len() as u32);
        for &c in cells {
            out.extend(encode(c, &index)?);
        }
    }
    out.extend(encode(w, &index)?);
    Ok(out)
}

pub fn to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<u32>, ImageError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(ImageError::Ragged);
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Rebuild a dump in `store`: allocate every buffer, then fill them in,
/// resolving indices.
pub fn unmarshal(store: &mut Store, words: &[u32]) -> Result<Word, ImageError> {
    let mut pos = 0usize;
    let mut next = || -> Result<u32, ImageError> {
        let w = *words.get(pos).ok_or(ImageError::Truncated)?;
        pos += 1;
        Ok(w)
    };
    let count = next()?;
    let mut raw: Vec<Vec<(u32, u32)>> = Vec::new();
    for _ in 0..count {
        let len = next()?;
        if len as usize > words.len() {
            return Err(ImageError::Truncated);
        }
        let mut cells = Vec::with_capacity(len as usize);
        for _ in 0..len {
            cells.push((next()?, next()?));
        }
        raw.push(cells);
    }
    let main = (next()?, next()?);
    if pos != words.len() {
        return Err(ImageError::Overlong(words.len() - pos));
    }
    let decode = |(tag, payload): (u32, u32), ids: &[BufferId]| -> Result<Word, ImageError> {
        match tag {
            0 => Ok(Word::Unboxed(payload as i32 as i64)),
            1 => ids.get(payload as usize).map(|&b| Word::Boxed(b)).ok_or(ImageError::BadIndex { index: payload, count }),
            t => Err(ImageError::BadTag(t)),
        }
    };
    // Validate before touching the store.
    let placeholder: Vec<BufferId> = (0..count).map(BufferId).collect();
    for cells in &raw {
        for &c in cells {
            decode(c, &placeholder)?;
        }
    }
    decode(main, &placeholder)?;
    let ids: Vec<BufferId> = raw.iter().map(|cells| store.alloc(vec![NIL; cells.len()])).collect();
    for (cells, &b) in raw.iter().zip(&ids) {
        for (i, &c) in cells.iter().enumerate() {
            store.set(b, i as i64, decode(c, &ids)?).expect("freshly allocated");
        }
    }
    decode(main, &ids)
}

// Whole-program images.

/// Copy the host-side tables into reserved globals so they travel with the
/// image.
fn mirror_tables(st: &mut State) {
    let h = st.store.boxed(Word::Unboxed(st.handle_counter));
    let s = st.intern(names::HANDLE_COUNTER);
    st.global_set(s, h);
    let f = st.store.boxed(Word::Unboxed(st.fresh_counter));
    let s = st.intern(names::FRESH_COUNTER);
    st.global_set(s, f);
    let rows: Vec<(i64, TypeDescriptor)> = st.type_table.iter().map(|(&t, &d)| (t, d)).collect();
    let rows: Vec<Word> = rows
        .into_iter()
        .map(|(t, d)| st.store.vector(&[Word::Unboxed(t), d.expander.word(), d.printer.word(), d.alist]))
        .collect();
    let table = st.store.list(&rows);
    let s = st.intern(names::TYPE_TABLE);
    st.global_set(s, table);
}

fn restore_tables(st: &mut State) -> Result<(), ImageError> {
    let bad = |what: &str| ImageError::Exec(format!("malformed {what} in image"));
    let counter = |st: &State, name: &str| -> Result<i64, ImageError> {
        let g = st.lookup(name).and_then(|s| st.global_get(s)).ok_or_else(|| bad(name))?;
        st.store.load(g, 0).ok().and_then(Word::as_fixnum).ok_or_else(|| bad(name))
    };
    st.handle_counter = counter(st, names::HANDLE_COUNTER)?;
    st.fresh_counter = counter(st, names::FRESH_COUNTER)?;
    let table = st.lookup(names::TYPE_TABLE).and_then(|s| st.global_get(s)).ok_or_else(|| bad("type table"))?;
    let rows = st.store.list_to_vec(table).map_err(|_| bad("type table"))?;
    for row in rows {
        let cells = st.store.vector_to_vec(row).map_err(|_| bad("type table"))?;
        let [t, e, p, alist] = cells[..] else { return Err(bad("type table")) };
        let t = t.as_fixnum().ok_or_else(|| bad("type table"))?;
        let e = st.as_symbol(e).ok_or_else(|| bad("type table"))?;
        let p = st.as_symbol(p).ok_or_else(|| bad("type table"))?;
        st.type_table.insert(t, TypeDescriptor { expander: e, printer: p, alist });
    }
    Ok(())
}

/// The image of a state and a main expression, as a binary dump.
pub fn unexec(st: &mut State, main: Expr) -> Result<Vec<u32>, ImageError> {
    mirror_tables(st);
    let syms: Vec<Sym> = st.interned().to_vec();
    let items: Vec<Word> = syms.iter().map(|&s| crate::sexpr::symbol(&mut st.store, s)).collect();
    let list = crate::sexpr::list(&mut st.store, &items);
    let pair = st.store.cons(list, main.word());
    marshal(&st.store, pair)
}

pub fn unexec_bytes(st: &mut State, main: Expr) -> Result<Vec<u8>, ImageError> {
    Ok(to_bytes(&unexec(st, main)?))
}

/// Load an image into a state with nothing interned.
pub fn exec(words: &[u32]) -> Result<(State, Expr), ImageError> {
    let mut st = State::bare();
    let main = exec_into(&mut st, words)?;
    Ok((st, main))
}

/// Load an image into `st`, which must not already intern any of the
/// image's symbol names.
pub fn exec_into(st: &mut State, words: &[u32]) -> Result<Expr, ImageError> {
    let pair = unmarshal(&mut st.store, words)?;
    let bad = || ImageError::Exec("the image is not a (symbols . main) pair".into());
    let list = st.store.car(pair).map_err(|_| bad())?;
    let main = st.store.cdr(pair).map_err(|_| bad())?;
    let items = crate::sexpr::list_to_vec(&st.store, list).map_err(|_| bad())?;
    for item in items {
        let content = crate::sexpr::eject(&st.store, item, crate::sexpr::tag::SYMBOL).map_err(|_| bad())?;
        let b = content.as_buffer().ok_or_else(bad)?;
        st.adopt_symbol(Sym(b)).map_err(ImageError::Exec)?;
    }
    restore_tables(st)?;
    crate::expand::recognize_native_expanders(st);
    let main = main.as_buffer().map(Expr).ok_or_else(bad)?;
    crate::ast::view(&st.store, main).map_err(|e| ImageError::Exec(format!("main expression: {e}")))?;
    Ok(main)
}

pub fn exec_bytes(bytes: &[u8]) -> Result<(State, Expr), ImageError> {
    exec(&from_bytes(bytes)?)
}
