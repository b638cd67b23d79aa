//! The primitive catalog.
//!
//! Every primitive takes exactly `in_dim` words and either returns exactly
//! `out_dim` words or fails; none of them touches the machine's stacks.
//! Each primitive name is also bound to a wrapper procedure of the same
//! arity, so ordinary calls reach it too.

use std::io::Write;

use thiserror::Error;

use crate::ast::{self, Expr};
use crate::expand;
use crate::interp::{self, Env, EvalError, Failure};
use crate::sexpr;
use crate::state::{State, Sym, CELL_PRIMITIVE};
use crate::store::{buffer_of, StoreError, Word, NIL};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PrimError {
    #[error("division by zero")]
    DivideByZero,
    #[error("not a fixnum: {0}")]
    NotAFixnum(Word),
    #[error("not a symbol: {0}")]
    NotASymbol(Word),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("not an expression: {0}")]
    NotAnExpression(String),
    #[error("{0}")]
    UserError(String),
    #[error("expansion error: {0}")]
    Expansion(String),
    #[error("{0}")]
    Invalid(String),
    #[error("nested evaluation failed: {0}")]
    Nested(Failure),
    /// Not a primitive failure: a resource abort travelling outwards.
    #[error("{0}")]
    Abort(EvalError),
}

impl From<EvalError> for PrimError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Failed(f) => PrimError::Nested(f),
            other => PrimError::Abort(other),
        }
    }
}

impl From<sexpr::SExprError> for PrimError {
    fn from(e: sexpr::SExprError) -> Self {
        match e {
            sexpr::SExprError::Store(s) => PrimError::Store(s),
            other => PrimError::Invalid(other.to_string()),
        }
    }
}

impl From<ast::AstError> for PrimError {
    fn from(e: ast::AstError) -> Self {
        PrimError::NotAnExpression(e.to_string())
    }
}

pub type PrimResult = Result<Vec<Word>, PrimError>;
pub type PrimFn = fn(&mut State, &[Word]) -> PrimResult;

pub struct PrimitiveSpec {
    pub name: &'static str,
    pub in_dim: usize,
    pub out_dim: usize,
    pub func: PrimFn,
}

pub fn fixnum(w: Word) -> Result<i64, PrimError> {
    w.as_fixnum().ok_or(PrimError::NotAFixnum(w))
}

pub fn symbol(st: &State, w: Word) -> Result<Sym, PrimError> {
    st.as_symbol(w).ok_or(PrimError::NotASymbol(w))
}

pub fn expr(st: &State, w: Word) -> Result<Expr, PrimError> {
    let e = Expr(buffer_of(w)?);
    ast::case_of(&st.store, e)?;
    Ok(e)
}

fn one(w: Word) -> PrimResult {
    Ok(vec![w])
}

fn num(n: i64) -> PrimResult {
    one(Word::Unboxed(n))
}

fn boolean(b: bool) -> PrimResult {
    one(Word::from_bool(b))
}

fn arith(a: &[Word], f: fn(i64, i64) -> Result<i64, PrimError>) -> PrimResult {
    num(f(fixnum(a[0])?, fixnum(a[1])?)?)
}

fn nonzero(d: i64) -> Result<i64, PrimError> {
    if d == 0 {
        Err(PrimError::DivideByZero)
    } else {
        Ok(d)
    }
}

fn shift(n: i64, k: i64) -> i64 {
    if k >= 64 {
        0
    } else if k >= 0 {
        n.wrapping_shl(k as u32)
    } else if k <= -64 {
        if n < 0 {
            -1
        } else {
            0
        }
    } else {
        n >> (-k)
    }
}

fn write_char(st: &mut State, a: &[Word]) -> PrimResult {
    let c = fixnum(a[0])?;
    let ch = u32::try_from(c).ok().and_then(char::from_u32).ok_or(PrimError::Invalid(format!("not a character: {c}")))?;
    let mut buf = [0u8; 4];
    st.io
        .out
        .write_all(ch.encode_utf8(&mut buf).as_bytes())
        .map_err(|e| PrimError::Invalid(format!("write failed: {e}")))?;
    Ok(vec![])
}

fn read_char(st: &mut State, _: &[Word]) -> PrimResult {
    use sexpr::CharSource;
    num(st.io.input.next().map_or(-1, |c| c as i64))
}

fn read_sexpression(st: &mut State, _: &[Word]) -> PrimResult {
    let mut input = std::mem::take(&mut st.io.input);
    let r = sexpr::read(st, &mut input);
    st.io.input = input;
    match r {
        Ok(Some(s)) => one(s),
        Ok(None) => one(NIL),
        Err(e) => Err(PrimError::Invalid(e.to_string())),
    }
}

fn write_sexpression(st: &mut State, a: &[Word]) -> PrimResult {
    let text = sexpr::print(st, a[0]);
    st.io.out.write_all(text.as_bytes()).map_err(|e| PrimError::Invalid(format!("write failed: {e}")))?;
    Ok(vec![])
}

/// Decode an alist of `(symbol . value)` conses into an environment.
fn alist_env(st: &State, alist: Word) -> Result<Env, PrimError> {
    let mut env = Env::empty();
    let pairs = st.store.list_to_vec(alist)?;
    for p in pairs.into_iter().rev() {
        let k = symbol(st, st.store.car(p)?)?;
        env = env.bind(k, st.store.cdr(p)?);
    }
    Ok(env)
}

fn fast_eval(st: &mut State, a: &[Word]) -> PrimResult {
    let e = expr(st, a[0])?;
    let env = alist_env(st, a[1])?;
    let r = interp::eval_in(st, e, env)?;
    one(st.store.list(&r))
}

fn user_error(st: &mut State, a: &[Word]) -> PrimResult {
    let msg = match a[0] {
        w @ Word::Boxed(_) => st.store.string_to_rust(w).unwrap_or_else(|_| w.to_string()),
        w => w.to_string(),
    };
    Err(PrimError::UserError(msg))
}

fn symbols_of(st: &State, list: Word) -> Result<Vec<Sym>, PrimError> {
    st.store.list_to_vec(list)?.into_iter().map(|w| symbol(st, w)).collect()
}

/// Globals as a list of `(name . value)` conses; procedures as a list of
/// `(name formals body)` lists. Everything is decoded before anything is
/// installed.
fn update_globals_and_procedures(st: &mut State, a: &[Word]) -> PrimResult {
    let mut globals = Vec::new();
    for p in st.store.list_to_vec(a[0])? {
        globals.push((symbol(st, st.store.car(p)?)?, st.store.cdr(p)?));
    }
    let mut procs = Vec::new();
    for p in st.store.list_to_vec(a[1])? {
        let items = st.store.list_to_vec(p)?;
        if items.len() != 3 {
            return Err(PrimError::Invalid("procedure entry is not (name formals body)".into()));
        }
        procs.push((symbol(st, items[0])?, symbols_of(st, items[1])?, expr(st, items[2])?));
    }
    st.update_globals_and_procedures(&globals, &procs);
    Ok(vec![])
}

fn apply(st: &mut State, a: &[Word]) -> PrimResult {
    let name = symbol(st, a[0])?;
    let args = st.store.list_to_vec(a[1])?;
    let r = interp::apply_procedure(st, name, &args)?;
    one(st.store.list(&r))
}

fn apply_prim(st: &mut State, a: &[Word]) -> PrimResult {
    let name = symbol(st, a[0])?;
    let args = st.store.list_to_vec(a[1])?;
    let r = interp::apply_primitive(st, name, &args)?;
    one(st.store.list(&r))
}

fn symbol_list(st: &mut State, syms: Vec<Sym>) -> PrimResult {
    let words: Vec<Word> = syms.into_iter().map(Sym::word).collect();
    one(st.store.list(&words))
}

fn intern(st: &mut State, a: &[Word]) -> PrimResult {
    let name = st.store.string_to_rust(a[0])?;
    if name.is_empty() {
        return Err(PrimError::Invalid("empty symbol name".into()));
    }
    one(st.intern(&name).word())
}

fn sexpression_make(st: &mut State, a: &[Word]) -> PrimResult {
    one(sexpr::make(&mut st.store, fixnum(a[0])?, a[1]))
}

fn sexpression_cons(st: &mut State, a: &[Word]) -> PrimResult {
    one(sexpr::cons(&mut st.store, a[0], a[1]))
}

/// Copy the spine of the first s-list onto the second.
fn sexpression_append(st: &mut State, a: &[Word]) -> PrimResult {
    let items = sexpr::list_to_vec(&st.store, a[0])?;
    let mut acc = a[1];
    for &w in items.iter().rev() {
        acc = sexpr::cons(&mut st.store, w, acc);
    }
    one(acc)
}

macro_rules! prim {
    ($name:expr, $i:expr, $o:expr, $f:expr) => {
        PrimitiveSpec { name: $name, in_dim: $i, out_dim: $o, func: $f }
    };
}

pub static CATALOG: &[PrimitiveSpec] = &[
    prim!("whatever:eq?", 2, 1, |_, a| boolean(a[0] == a[1])),
    prim!("whatever:zero?", 1, 1, |_, a| boolean(a[0] == NIL)),
    prim!("fixnum:+", 2, 1, |_, a| arith(a, |x, y| Ok(x.wrapping_add(y)))),
    prim!("fixnum:-", 2, 1, |_, a| arith(a, |x, y| Ok(x.wrapping_sub(y)))),
    prim!("fixnum:*", 2, 1, |_, a| arith(a, |x, y| Ok(x.wrapping_mul(y)))),
    prim!("fixnum:/", 2, 1, |_, a| arith(a, |x, y| Ok(x.wrapping_div(nonzero(y)?)))),
    prim!("fixnum:%", 2, 1, |_, a| arith(a, |x, y| Ok(x.wrapping_rem(nonzero(y)?)))),
    prim!("fixnum:quotient-remainder", 2, 2, |_, a| {
        let (x, y) = (fixnum(a[0])?, nonzero(fixnum(a[1])?)?);
        Ok(vec![Word::Unboxed(x.wrapping_div(y)), Word::Unboxed(x.wrapping_rem(y))])
    }),
    prim!("fixnum:1+", 1, 1, |_, a| num(fixnum(a[0])?.wrapping_add(1))),
    prim!("fixnum:1-", 1, 1, |_, a| num(fixnum(a[0])?.wrapping_sub(1))),
    prim!("fixnum:<", 2, 1, |_, a| boolean(fixnum(a[0])? < fixnum(a[1])?)),
    prim!("fixnum:<=", 2, 1, |_, a| boolean(fixnum(a[0])? <= fixnum(a[1])?)),
    prim!("fixnum:=", 2, 1, |_, a| boolean(fixnum(a[0])? == fixnum(a[1])?)),
    prim!("fixnum:bitwise-and", 2, 1, |_, a| arith(a, |x, y| Ok(x & y))),
    prim!("fixnum:bitwise-or", 2, 1, |_, a| arith(a, |x, y| Ok(x | y))),
    prim!("fixnum:bitwise-xor", 2, 1, |_, a| arith(a, |x, y| Ok(x ^ y))),
    prim!("fixnum:arithmetic-shift", 2, 1, |_, a| arith(a, |x, k| Ok(shift(x, k)))),
    prim!("buffer:make", 2, 1, |st, a| one(Word::Boxed(st.store.make(fixnum(a[0])?, a[1])?))),
    prim!("buffer:make-uninitialized", 1, 1, |st, a| one(Word::Boxed(st.store.make(fixnum(a[0])?, NIL)?))),
    prim!("buffer:get", 2, 1, |st, a| one(st.store.load(a[0], fixnum(a[1])?)?)),
    prim!("buffer:set!", 3, 0, |st, a| {
        st.store.store(a[0], fixnum(a[1])?, a[2])?;
        Ok(vec![])
    }),
    prim!("buffer:destroy", 1, 0, |st, a| {
        st.store.destroy(buffer_of(a[0])?)?;
        Ok(vec![])
    }),
    prim!("whatever:buffer?", 1, 1, |st, a| boolean(matches!(a[0], Word::Boxed(b) if st.store.is_live(b)))),
    prim!("buffer:length", 1, 1, |st, a| num(st.store.len(buffer_of(a[0])?)? as i64)),
    prim!("io:write-character", 1, 0, write_char),
    prim!("io:read-character", 0, 1, read_char),
    prim!("e0:fast-eval", 2, 1, fast_eval),
    prim!("e1:error", 1, 0, user_error),
    prim!("state:update-globals-and-procedures!", 2, 0, update_globals_and_procedures),
    prim!("io:read-sexpression", 1, 1, read_sexpression),
    // Reflection and expansion plumbing beyond the core catalog.
    prim!("io:write-sexpression", 1, 0, write_sexpression),
    prim!("whatever:symbol?", 1, 1, |st, a| boolean(st.is_symbol(a[0]))),
    prim!("whatever:future?", 1, 1, |_, a| boolean(matches!(a[0], Word::Future(_)))),
    prim!("symbol:intern", 1, 1, intern),
    prim!("symbol:fresh", 0, 1, |st, _| one(st.fresh_symbol().word())),
    prim!("symbol:make-uninterned", 0, 1, |st, _| one(st.make_uninterned().word())),
    prim!("state:global-names", 0, 1, |st, _| {
        let v = st.global_names();
        symbol_list(st, v)
    }),
    prim!("state:procedure-names", 0, 1, |st, _| {
        let v = st.procedure_names();
        symbol_list(st, v)
    }),
    prim!("state:macro-names", 0, 1, |st, _| {
        let v = st.macro_names();
        symbol_list(st, v)
    }),
    prim!("state:primitive?", 1, 1, |st, a| boolean(st.as_symbol(a[0]).and_then(|s| st.primitive_index(s)).is_some())),
    prim!("state:apply", 2, 1, apply),
    prim!("state:apply-primitive", 2, 1, apply_prim),
    prim!("e0:fresh-handle", 0, 1, |st, _| num(st.fresh_handle())),
    prim!("e0:free-variables", 1, 1, |st, a| {
        let e = expr(st, a[0])?;
        let fv = ast::free_variables(&st.store, e)?;
        symbol_list(st, fv)
    }),
    prim!("sexpression:make", 2, 1, sexpression_make),
    prim!("sexpression:cons", 2, 1, sexpression_cons),
    prim!("sexpression:append", 2, 1, sexpression_append),
    prim!("sexpression:equal?", 2, 1, |st, a| boolean(sexpr::equal(&st.store, a[0], a[1]))),
    prim!("e1:macroexpand", 1, 1, expand::prim_macroexpand),
    prim!("transform:transform-expression", 1, 1, expand::prim_transform_expression),
    prim!("transform:transform-retroactively!", 4, 0, expand::prim_transform_retroactively),
    prim!("state:invalidate-macro-procedures!", 0, 0, |st, _| {
        expand::invalidate_macro_procedures(st);
        Ok(vec![])
    }),
    prim!("state:define-global!", 2, 0, expand::prim_define_global),
    prim!("state:define-procedure!", 3, 0, expand::prim_define_procedure),
    prim!("state:macro-set!", 2, 0, expand::prim_macro_set),
    prim!("closure:closure-convert", 2, 1, expand::prim_closure_convert),
    prim!("sexpression:literal-expression-expander", 1, 1, expand::prim_literal_expander),
    prim!("sexpression:variable-expression-expander", 1, 1, expand::prim_variable_expander),
    prim!("sexpression:expression-expression-expander", 1, 1, expand::prim_expression_expander),
    prim!("sexpression:cons-expression-expander", 1, 1, expand::prim_cons_expander),
    prim!("sexpression:default-printer", 1, 0, write_sexpression),
    prim!("sexpression:type-register!", 3, 0, expand::prim_type_register),
    prim!("e1:expand-define", 1, 1, expand::macro_define),
    prim!("e1:expand-trivial-define-macro", 1, 1, expand::macro_trivial_define_macro),
    prim!("e1:expand-define-macro", 1, 1, expand::macro_define_macro),
    prim!("e1:expand-lambda", 1, 1, expand::macro_lambda),
    prim!("e1:expand-call-closure", 1, 1, expand::macro_call_closure),
    prim!("e1:expand-let*", 1, 1, expand::macro_let_star),
    prim!("e1:expand-begin", 1, 1, expand::macro_begin),
    prim!("e1:expand-quote", 1, 1, expand::macro_quote),
    prim!("e1:expand-quasiquote", 1, 1, expand::macro_quasiquote),
    prim!("e1:expand-unquote", 1, 1, expand::macro_unquote),
];

pub fn by_index(i: usize) -> Option<&'static PrimitiveSpec> {
    CATALOG.get(i)
}

pub fn by_name(name: &str) -> Option<(usize, &'static PrimitiveSpec)> {
    CATALOG.iter().enumerate().find(|(_, p)| p.name == name)
}

/// Bind every primitive name to its descriptor and a same-named wrapper
/// procedure.
pub fn install(st: &mut State) {
    for (i, p) in CATALOG.iter().enumerate() {
        let s = st.intern(p.name);
        st.set_cell(s, CELL_PRIMITIVE, Word::Unboxed(i as i64 + 1));
        let formals: Vec<Sym> = (0..p.in_dim).map(|k| st.intern(&format!("x{k}"))).collect();
        let actuals = formals.iter().map(|&f| st.make_variable(f)).collect();
        let body = st.make_primitive(s, actuals);
        st.procedure_set(s, &formals, body);
    }
}
