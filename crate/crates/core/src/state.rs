//! The global state: store, interned symbols, type table, transform
//! registries, futures and machine configuration.
//!
//! Symbols are 9-cell buffers living in the store:
//!
//! | cell | content                                   |
//! |------|-------------------------------------------|
//! | 0    | name string, or 0 if uninterned           |
//! | 1    | global-bound flag                         |
//! | 2    | global value (127 while unbound)          |
//! | 3    | procedure formals                         |
//! | 4    | procedure body, or 0                      |
//! | 5    | macro body, or 0                          |
//! | 6    | cached macro procedure name, or 0         |
//! | 7    | primitive index plus one, or 0            |
//! | 8    | user alist                                |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};

use crate::ast::Expr;
use crate::interp::{Failure, Thread};
use crate::primitives;
use crate::sexpr::{self, ReaderSource};
use crate::store::{buffer_of, BufferId, Store, StoreError, Word, NIL};

/// An interned (or uninterned) symbol object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(pub BufferId);

impl Sym {
    pub fn word(self) -> Word {
        Word::Boxed(self.0)
    }
}

pub const SYMBOL_CELLS: i64 = 9;
pub const CELL_NAME: i64 = 0;
pub const CELL_GLOBAL_BOUND: i64 = 1;
pub const CELL_GLOBAL_VALUE: i64 = 2;
pub const CELL_FORMALS: i64 = 3;
pub const CELL_BODY: i64 = 4;
pub const CELL_MACRO: i64 = 5;
pub const CELL_MACRO_PROCEDURE: i64 = 6;
pub const CELL_PRIMITIVE: i64 = 7;
pub const CELL_ALIST: i64 = 8;
pub const UNBOUND_MARKER: Word = Word::Unboxed(127);

/// Reserved symbol names shared between the host and the prelude.
pub mod names {
    pub const EXPRESSION_TRANSFORMS: &str = "transform:expression-transforms";
    pub const PROCEDURE_TRANSFORMS: &str = "transform:procedure-transforms";
    pub const GLOBAL_TRANSFORMS: &str = "transform:global-transforms";
    pub const TYPE_TABLE: &str = "sexpression:type-table";
    pub const HANDLE_COUNTER: &str = "e0:handle-generator-box";
    pub const FRESH_COUNTER: &str = "symbol:fresh-generator-box";
    pub const ARGUMENTS: &str = "arguments";
    pub const LITERAL_EXPANDER: &str = "sexpression:literal-expression-expander";
    pub const VARIABLE_EXPANDER: &str = "sexpression:variable-expression-expander";
    pub const EXPRESSION_EXPANDER: &str = "sexpression:expression-expression-expander";
    pub const CONS_EXPANDER: &str = "sexpression:cons-expression-expander";
    pub const DEFAULT_PRINTER: &str = "sexpression:default-printer";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Expression,
    Procedure,
    Global,
}

impl TransformKind {
    pub fn registry_name(self) -> &'static str {
        match self {
            TransformKind::Expression => names::EXPRESSION_TRANSFORMS,
            TransformKind::Procedure => names::PROCEDURE_TRANSFORMS,
            TransformKind::Global => names::GLOBAL_TRANSFORMS,
        }
    }
}

/// One row of the type table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TypeDescriptor {
    pub expander: Sym,
    pub printer: Sym,
    pub alist: Word,
}

/// A background thread's slot in the futures table.
#[derive(Clone, Debug)]
pub enum FutureEntry {
    Running(Thread),
    /// Temporarily taken out of the table while the scheduler steps it.
    Stepping,
    Finished(Vec<Word>),
    Failed(Failure),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerMode {
    RoundRobin,
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct Config {
    /// Steps allowed per toplevel evaluation, nested evaluations included.
    pub fuel: u64,
    pub max_stack: usize,
    pub max_values: usize,
    /// Bound on host recursion through nested evaluation and expansion.
    pub max_nesting: usize,
    pub scheduler: SchedulerMode,
    pub trace: bool,
    /// Interpret lambda and call-closure directly instead of failing on them.
    /// This is the reference semantics used to test closure conversion.
    pub native_closures: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            fuel: 100_000_000,
            max_stack: 1_000_000,
            max_values: 1_000_000,
            max_nesting: 400,
            scheduler: SchedulerMode::RoundRobin,
            trace: false,
            native_closures: false,
        }
    }
}

pub struct Io {
    pub out: Box<dyn Write>,
    pub input: ReaderSource,
    pub trace: Box<dyn Write>,
}

impl Default for Io {
    fn default() -> Self {
        Io {
            out: Box::new(io::stdout()),
            input: ReaderSource::new(Box::new(io::BufReader::new(io::stdin()))),
            trace: Box::new(io::stderr()),
        }
    }
}

impl Io {
    pub fn with(out: Box<dyn Write>, input: Box<dyn BufRead>) -> Io {
        Io { out, input: ReaderSource::new(input), trace: Box::new(io::sink()) }
    }
}

/// The global state.
pub struct State {
    pub store: Store,
    table: HashMap<String, Sym>,
    order: Vec<Sym>,
    symbols: HashSet<BufferId>,
    pub(crate) handle_counter: i64,
    pub(crate) fresh_counter: i64,
    pub type_table: BTreeMap<i64, TypeDescriptor>,
    pub futures: Vec<FutureEntry>,
    pub config: Config,
    pub io: Io,
    /// Bodies of the host-backed expanders as installed, for the fast path.
    pub(crate) native_bodies: HashMap<Sym, Word>,
    pub(crate) fuel_left: u64,
    pub(crate) nesting: usize,
    pub(crate) steps: u64,
    pub(crate) rng: Option<rand_chacha::ChaCha8Rng>,
}

impl State {
    /// A state with nothing interned. Images are loaded into these.
    pub fn bare() -> State {
        State {
            store: Store::new(),
            table: HashMap::new(),
            order: Vec::new(),
            symbols: HashSet::new(),
            handle_counter: 0,
            fresh_counter: 0,
            type_table: BTreeMap::new(),
            futures: Vec::new(),
            config: Config::default(),
            io: Io::default(),
            native_bodies: HashMap::new(),
            fuel_left: 0,
            nesting: 0,
            steps: 0,
            rng: None,
        }
    }

    /// A state with the primitive catalog, the default type table, the
    /// transform registries and the host-backed macros installed.
    pub fn new() -> State {
        let mut st = State::bare();
        primitives::install(&mut st);
        for kind in [TransformKind::Expression, TransformKind::Procedure, TransformKind::Global] {
            let s = st.intern(kind.registry_name());
            let b = st.store.boxed(NIL);
            st.global_set(s, b);
        }
        crate::expand::install(&mut st);
        st
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    // Symbols.

    pub fn intern(&mut self, name: &str) -> Sym {
        if let Some(&s) = self.table.get(name) {
            return s;
        }
        let name_word = self.store.string(name);
        let s = self.make_symbol(name_word);
        self.table.insert(name.to_string(), s);
        self.order.push(s);
        s
    }

    pub fn lookup(&self, name: &str) -> Option<Sym> {
        self.table.get(name).copied()
    }

    pub fn make_uninterned(&mut self) -> Sym {
        self.make_symbol(NIL)
    }

    fn make_symbol(&mut self, name: Word) -> Sym {
        let mut cells = vec![NIL; SYMBOL_CELLS as usize];
        cells[CELL_NAME as usize] = name;
        cells[CELL_GLOBAL_VALUE as usize] = UNBOUND_MARKER;
        let b = self.store.alloc(cells);
        self.symbols.insert(b);
        Sym(b)
    }

    /// Adopt an existing symbol buffer, as done when loading an image.
    pub(crate) fn adopt_symbol(&mut self, s: Sym) -> Result<(), String> {
        let name = self.symbol_name(s);
        if self.table.contains_key(&name) {
            return Err(format!("symbol {name} is already interned"));
        }
        self.symbols.insert(s.0);
        self.table.insert(name, s);
        self.order.push(s);
        Ok(())
    }

    /// A fresh interned symbol whose name starts with an underscore.
    pub fn fresh_symbol(&mut self) -> Sym {
        loop {
            let name = format!("_{}", self.fresh_counter);
            self.fresh_counter += 1;
            if !self.table.contains_key(&name) {
                return self.intern(&name);
            }
        }
    }

    pub fn is_symbol(&self, w: Word) -> bool {
        matches!(w, Word::Boxed(b) if self.symbols.contains(&b) && self.store.is_live(b))
    }

    pub fn as_symbol(&self, w: Word) -> Option<Sym> {
        match w {
            Word::Boxed(b) if self.is_symbol(w) => Some(Sym(b)),
            _ => None,
        }
    }

    pub fn symbol_name(&self, s: Sym) -> String {
        match self.store.get(s.0, CELL_NAME) {
            Ok(w @ Word::Boxed(_)) => self.store.string_to_rust(w).unwrap_or_else(|_| "#<symbol>".into()),
            _ => format!("#<uninterned {}>", s.0 .0),
        }
    }

    /// Interned symbols in interning order.
    pub fn interned(&self) -> &[Sym] {
        &self.order
    }

    pub fn cell(&self, s: Sym, i: i64) -> Word {
        self.store.get(s.0, i).unwrap_or(NIL)
    }

    pub fn set_cell(&mut self, s: Sym, i: i64, w: Word) {
        // Symbols are never destroyed by the host; a destroyed one is ignored.
        let _ = self.store.set(s.0, i, w);
    }

    // Globals.

    pub fn global_set(&mut self, s: Sym, value: Word) {
        self.set_cell(s, CELL_GLOBAL_BOUND, Word::Unboxed(1));
        self.set_cell(s, CELL_GLOBAL_VALUE, value);
    }

    pub fn global_get(&self, s: Sym) -> Option<Word> {
        if self.cell(s, CELL_GLOBAL_BOUND).is_true() {
            Some(self.cell(s, CELL_GLOBAL_VALUE))
        } else {
            None
        }
    }

    pub fn global_unset(&mut self, s: Sym) {
        self.set_cell(s, CELL_GLOBAL_BOUND, NIL);
        self.set_cell(s, CELL_GLOBAL_VALUE, UNBOUND_MARKER);
    }

    pub fn global_names(&self) -> Vec<Sym> {
        self.order.iter().copied().filter(|&s| self.global_get(s).is_some()).collect()
    }

    // Procedures.

    pub fn procedure_set(&mut self, s: Sym, formals: &[Sym], body: Expr) {
        let words: Vec<Word> = formals.iter().map(|f| f.word()).collect();
        let list = self.store.list(&words);
        self.set_cell(s, CELL_FORMALS, list);
        self.set_cell(s, CELL_BODY, body.word());
    }

    pub fn procedure_get(&self, s: Sym) -> Option<(Vec<Sym>, Expr)> {
        let body = match self.cell(s, CELL_BODY) {
            Word::Boxed(b) => Expr(b),
            _ => return None,
        };
        let formals = self.formals_of(s).ok()?;
        Some((formals, body))
    }

    pub fn formals_of(&self, s: Sym) -> Result<Vec<Sym>, StoreError> {
        self.store
            .list_to_vec(self.cell(s, CELL_FORMALS))?
            .into_iter()
            .map(|w| buffer_of(w).map(Sym))
            .collect()
    }

    pub fn procedure_unset(&mut self, s: Sym) {
        self.set_cell(s, CELL_FORMALS, NIL);
        self.set_cell(s, CELL_BODY, NIL);
    }

    pub fn procedure_names(&self) -> Vec<Sym> {
        self.order.iter().copied().filter(|&s| self.cell(s, CELL_BODY) != NIL).collect()
    }

    /// Install every binding with no evaluation step in between.
    pub fn update_globals_and_procedures(&mut self, globals: &[(Sym, Word)], procs: &[(Sym, Vec<Sym>, Expr)]) {
        for &(s, v) in globals {
            self.global_set(s, v);
        }
        for (s, formals, body) in procs {
            self.procedure_set(*s, formals, *body);
        }
    }

    // Macros.

    pub fn macro_body(&self, s: Sym) -> Option<Word> {
        match self.cell(s, CELL_MACRO) {
            NIL => None,
            w => Some(w),
        }
    }

    pub fn macro_names(&self) -> Vec<Sym> {
        self.order.iter().copied().filter(|&s| self.macro_body(s).is_some()).collect()
    }

    // Primitives.

    pub fn primitive_index(&self, s: Sym) -> Option<usize> {
        match self.cell(s, CELL_PRIMITIVE) {
            Word::Unboxed(n) if n > 0 => Some(n as usize - 1),
            _ => None,
        }
    }

    // Transform registries live in boxes bound to reserved globals.

    fn registry_box(&mut self, kind: TransformKind) -> Word {
        let s = self.intern(kind.registry_name());
        match self.global_get(s) {
            Some(w @ Word::Boxed(_)) if self.store.len(buffer_of(w).unwrap()).ok() == Some(1) => w,
            _ => {
                let b = self.store.boxed(NIL);
                self.global_set(s, b);
                b
            }
        }
    }

    pub fn transforms(&mut self, kind: TransformKind) -> Vec<Sym> {
        let b = self.registry_box(kind);
        let list = self.store.load(b, 0).unwrap_or(NIL);
        self.store
            .list_to_vec(list)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|w| w.as_buffer().map(Sym))
            .collect()
    }

    pub fn set_transforms(&mut self, kind: TransformKind, list: &[Sym]) {
        let b = self.registry_box(kind);
        let words: Vec<Word> = list.iter().map(|s| s.word()).collect();
        let l = self.store.list(&words);
        let _ = self.store.store(b, 0, l);
    }

    // Type table.

    pub fn type_register(&mut self, tag: i64, expander: Sym, printer: Sym) {
        let alist = self.type_table.get(&tag).map(|d| d.alist).unwrap_or(NIL);
        self.type_table.insert(tag, TypeDescriptor { expander, printer, alist });
    }

    // Diagnostics.

    pub fn expr_to_string(&self, e: Expr) -> String {
        crate::ast::render(self, e)
    }

    pub fn sexpr_to_string(&self, w: Word) -> String {
        sexpr::print(self, w)
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }
}

impl Default for State {
    fn default() -> Self {
        State::new()
    }
}
