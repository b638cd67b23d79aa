//! The word-addressed heap.
//!
//! Every compound datum is a [`Buffer`] of [`Word`]s. Conses, vectors,
//! strings, boxes, symbols, s-expressions and expressions are all layout
//! conventions over buffers; the helpers at the bottom of this file build and
//! read the simple ones.

use std::fmt;

use thiserror::Error;

/// Identifier of a buffer inside one [`Store`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub u32);

/// Identifier of a background thread, as carried by future words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadId(pub u32);

/// One machine word. Equality on `Boxed` is buffer identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Word {
    Unboxed(i64),
    Boxed(BufferId),
    Future(ThreadId),
}

pub const NIL: Word = Word::Unboxed(0);
pub const FALSE: Word = Word::Unboxed(0);
pub const TRUE: Word = Word::Unboxed(1);

impl Word {
    pub fn from_bool(b: bool) -> Word {
        if b {
            TRUE
        } else {
            FALSE
        }
    }

    /// Anything but unboxed zero counts as true.
    pub fn is_true(self) -> bool {
        self != FALSE
    }

    pub fn as_fixnum(self) -> Option<i64> {
        match self {
            Word::Unboxed(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_buffer(self) -> Option<BufferId> {
        match self {
            Word::Boxed(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Unboxed(n) => write!(f, "{n}"),
            Word::Boxed(b) => write!(f, "#<buffer {}>", b.0),
            Word::Future(t) => write!(f, "#<future {}>", t.0),
        }
    }
}

/// Checked runtime errors raised by store access.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("buffer {0} has been destroyed")]
    Dead(u32),
    #[error("no such buffer {0}")]
    Unknown(u32),
    #[error("index {index} out of bounds for buffer {buffer} of length {len}")]
    OutOfBounds { buffer: u32, index: i64, len: usize },
    #[error("not a buffer: {0}")]
    NotABuffer(Word),
    #[error("negative buffer size {0}")]
    NegativeSize(i64),
    #[error("buffer size {0} exceeds the allocation limit")]
    TooLarge(i64),
    #[error("store is full")]
    Exhausted,
}

/// A fixed-length mutable sequence of words.
pub type Buffer = Vec<Word>;

/// Largest single allocation accepted, in words.
pub const MAX_BUFFER_WORDS: i64 = 1 << 28;

#[derive(Default, Clone, Debug)]
pub struct Store {
    buffers: Vec<Option<Buffer>>,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    /// Number of buffers ever allocated, dead ones included.
    pub fn allocated(&self) -> usize {
        self.buffers.len()
    }

    pub fn make(&mut self, size: i64, fill: Word) -> Result<BufferId, StoreError> {
        if size < 0 {
            return Err(StoreError::NegativeSize(size));
        }
        if size > MAX_BUFFER_WORDS {
            return Err(StoreError::TooLarge(size));
        }
        Ok(self.alloc(vec![fill; size as usize]))
    }

    /// Allocate a buffer holding exactly `cells`.
    pub fn alloc(&mut self, cells: Buffer) -> BufferId {
        let id = u32::try_from(self.buffers.len()).expect("store is full");
        self.buffers.push(Some(cells));
        BufferId(id)
    }

    pub fn is_live(&self, b: BufferId) -> bool {
        matches!(self.buffers.get(b.0 as usize), Some(Some(_)))
    }

    pub fn cells(&self, b: BufferId) -> Result<&[Word], StoreError> {
        match self.buffers.get(b.0 as usize) {
            Some(Some(cells)) => Ok(cells),
            Some(None) => Err(StoreError::Dead(b.0)),
            None => Err(StoreError::Unknown(b.0)),
        }
    }

    fn cells_mut(&mut self, b: BufferId) -> Result<&mut Buffer, StoreError> {
        match self.buffers.get_mut(b.0 as usize) {
            Some(Some(cells)) => Ok(cells),
            Some(None) => Err(StoreError::Dead(b.0)),
            None => Err(StoreError::Unknown(b.0)),
        }
    }

    pub fn len(&self, b: BufferId) -> Result<usize, StoreError> {
        Ok(self.cells(b)?.len())
    }

    pub fn get(&self, b: BufferId, i: i64) -> Result<Word, StoreError> {
        let cells = self.cells(b)?;
        usize::try_from(i)
            .ok()
            .and_then(|i| cells.get(i).copied())
            .ok_or(StoreError::OutOfBounds { buffer: b.0, index: i, len: cells.len() })
    }

    pub fn set(&mut self, b: BufferId, i: i64, w: Word) -> Result<(), StoreError> {
        let cells = self.cells_mut(b)?;
        let len = cells.len();
        match usize::try_from(i).ok().and_then(|i| cells.get_mut(i)) {
            Some(cell) => {
                *cell = w;
                Ok(())
            }
            None => Err(StoreError::OutOfBounds { buffer: b.0, index: i, len }),
        }
    }

    pub fn destroy(&mut self, b: BufferId) -> Result<(), StoreError> {
        match self.buffers.get_mut(b.0 as usize) {
            Some(slot @ Some(_)) => {
                *slot = None;
                Ok(())
            }
            Some(None) => Err(StoreError::Dead(b.0)),
            None => Err(StoreError::Unknown(b.0)),
        }
    }

    /// `get` through a word that must be boxed.
    pub fn load(&self, w: Word, i: i64) -> Result<Word, StoreError> {
        self.get(buffer_of(w)?, i)
    }

    pub fn store(&mut self, w: Word, i: i64, v: Word) -> Result<(), StoreError> {
        self.set(buffer_of(w)?, i, v)
    }

    // Conses and lists.

    pub fn cons(&mut self, car: Word, cdr: Word) -> Word {
        Word::Boxed(self.alloc(vec![car, cdr]))
    }

    pub fn car(&self, w: Word) -> Result<Word, StoreError> {
        self.load(w, 0)
    }

    pub fn cdr(&self, w: Word) -> Result<Word, StoreError> {
        self.load(w, 1)
    }

    pub fn list(&mut self, items: &[Word]) -> Word {
        items.iter().rev().fold(NIL, |acc, &w| self.cons(w, acc))
    }

    /// Collect a nil-terminated list. A cyclic list fails once it grows past
    /// the allocation limit.
    pub fn list_to_vec(&self, mut w: Word) -> Result<Vec<Word>, StoreError> {
        let mut out = Vec::new();
        while w != NIL {
            let b = buffer_of(w)?;
            let cells = self.cells(b)?;
            if cells.len() != 2 {
                return Err(StoreError::OutOfBounds { buffer: b.0, index: 1, len: cells.len() });
            }
            out.push(cells[0]);
            w = cells[1];
            if out.len() > MAX_BUFFER_WORDS as usize {
                return Err(StoreError::TooLarge(out.len() as i64));
            }
        }
        Ok(out)
    }

    // Vectors and strings: cell 0 is the payload length.

    pub fn vector(&mut self, items: &[Word]) -> Word {
        let mut cells = Vec::with_capacity(items.len() + 1);
        cells.push(Word::Unboxed(items.len() as i64));
        cells.extend_from_slice(items);
        Word::Boxed(self.alloc(cells))
    }

    pub fn vector_to_vec(&self, w: Word) -> Result<Vec<Word>, StoreError> {
        let b = buffer_of(w)?;
        let cells = self.cells(b)?;
        let n = match cells.first() {
            Some(Word::Unboxed(n)) if *n >= 0 && (*n as usize) < cells.len() => *n as usize,
            _ => return Err(StoreError::OutOfBounds { buffer: b.0, index: 0, len: cells.len() }),
        };
        Ok(cells[1..=n].to_vec())
    }

    pub fn string(&mut self, s: &str) -> Word {
        let chars: Vec<Word> = s.chars().map(|c| Word::Unboxed(c as i64)).collect();
        self.vector(&chars)
    }

    pub fn string_to_rust(&self, w: Word) -> Result<String, StoreError> {
        Ok(self
            .vector_to_vec(w)?
            .into_iter()
            .map(|c| match c {
                Word::Unboxed(n) => u32::try_from(n).ok().and_then(char::from_u32).unwrap_or('\u{fffd}'),
                _ => '\u{fffd}',
            })
            .collect())
    }

    // Boxes.

    pub fn boxed(&mut self, content: Word) -> Word {
        Word::Boxed(self.alloc(vec![content]))
    }
}

pub fn buffer_of(w: Word) -> Result<BufferId, StoreError> {
    w.as_buffer().ok_or(StoreError::NotABuffer(w))
}
