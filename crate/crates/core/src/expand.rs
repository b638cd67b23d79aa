//! Macroexpansion, transforms and closure conversion.
//!
//! Expansion dispatches on the s-expression tag through the type table. The
//! default expanders are host functions reachable as primitives (and through
//! the same-named wrapper procedures), so replacing one in the type table
//! behaves just like replacing an interpreted expander.
//!
//! The predefined macros are ordinary macros whose bodies call a host
//! primitive on `arguments`; they are cached, transformed and invalidated
//! like any user macro.

use std::collections::HashSet;

use thiserror::Error;

use crate::ast::{self, Expr, ExprView};
use crate::interp::{self, EvalError};
use crate::primitives::{self, PrimError, PrimResult};
use crate::sexpr::{self, tag};
use crate::state::{names, State, Sym, TransformKind, CELL_BODY, CELL_MACRO, CELL_MACRO_PROCEDURE};
use crate::store::{Word, NIL};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExpandError {
    #[error("expansion error: {0}")]
    Syntax(String),
    #[error("macro {name} failed: {error}")]
    Macro { name: String, error: EvalError },
    #[error("transform {name} failed: {error}")]
    Transform { name: String, error: EvalError },
    #[error("expander {name} failed: {error}")]
    Expander { name: String, error: EvalError },
}

impl ExpandError {
    /// A resource abort hidden inside, if any.
    pub fn abort(&self) -> Option<&EvalError> {
        match self {
            ExpandError::Macro { error, .. }
            | ExpandError::Transform { error, .. }
            | ExpandError::Expander { error, .. } => match error {
                EvalError::Failed(_) => None,
                other => Some(other),
            },
            ExpandError::Syntax(_) => None,
        }
    }
}

impl From<ExpandError> for PrimError {
    fn from(e: ExpandError) -> Self {
        match e.abort() {
            Some(a) => PrimError::Abort(a.clone()),
            None => PrimError::Expansion(match e {
                ExpandError::Syntax(m) => m,
                other => other.to_string(),
            }),
        }
    }
}

fn syntax(msg: impl Into<String>) -> ExpandError {
    ExpandError::Syntax(msg.into())
}

impl From<sexpr::SExprError> for ExpandError {
    fn from(e: sexpr::SExprError) -> Self {
        syntax(e.to_string())
    }
}

impl From<ast::AstError> for ExpandError {
    fn from(e: ast::AstError) -> Self {
        syntax(e.to_string())
    }
}

type ExpResult<T> = Result<T, ExpandError>;

const CORE_FORMS: &[&str] = &[
    "e0:variable",
    "e0:value",
    "e0:bundle",
    "e0:primitive",
    "e0:let",
    "e0:call",
    "e0:call-indirect",
    "e0:if-in",
    "e0:fork",
    "e0:join",
];

/// Predefined macros and the primitive implementing each.
const NATIVE_MACROS: &[(&str, &str)] = &[
    ("e1:define", "e1:expand-define"),
    ("e1:trivial-define-macro", "e1:expand-trivial-define-macro"),
    ("e1:define-macro", "e1:expand-define-macro"),
    ("e1:lambda", "e1:expand-lambda"),
    ("e1:call-closure", "e1:expand-call-closure"),
    ("e1:let*", "e1:expand-let*"),
    ("e1:begin", "e1:expand-begin"),
    ("quote", "e1:expand-quote"),
    ("quasiquote", "e1:expand-quasiquote"),
    ("unquote", "e1:expand-unquote"),
    ("unquote-splicing", "e1:expand-unquote"),
];

const NATIVE_EXPANDERS: &[&str] =
    &[names::LITERAL_EXPANDER, names::VARIABLE_EXPANDER, names::EXPRESSION_EXPANDER, names::CONS_EXPANDER];

/// Install the default type table and the predefined macros.
pub fn install(st: &mut State) {
    let lit = st.intern(names::LITERAL_EXPANDER);
    let var = st.intern(names::VARIABLE_EXPANDER);
    let exp = st.intern(names::EXPRESSION_EXPANDER);
    let cons = st.intern(names::CONS_EXPANDER);
    let printer = st.intern(names::DEFAULT_PRINTER);
    for (t, e) in [
        (tag::EMPTY, lit),
        (tag::BOOLEAN, lit),
        (tag::FIXNUM, lit),
        (tag::STRING, lit),
        (tag::SYMBOL, var),
        (tag::EXPRESSION, exp),
        (tag::CONS, cons),
    ] {
        st.type_register(t, e, printer);
    }
    let arguments = st.intern(names::ARGUMENTS);
    let primitive = st.intern("e0:primitive");
    for &(m, p) in NATIVE_MACROS {
        let ms = st.intern(m);
        let ps = st.intern(p);
        let head = sexpr::symbol(&mut st.store, primitive);
        let prim = sexpr::symbol(&mut st.store, ps);
        let arg = sexpr::symbol(&mut st.store, arguments);
        let body = sexpr::list(&mut st.store, &[head, prim, arg]);
        macro_set(st, ms, body);
    }
    recognize_native_expanders(st);
}

/// Remember which expander procedures are still the host-backed wrappers,
/// so that expansion can skip the interpreter for them.
pub fn recognize_native_expanders(st: &mut State) {
    st.native_bodies.clear();
    for &n in NATIVE_EXPANDERS {
        let Some(s) = st.lookup(n) else { continue };
        let Some((formals, body)) = st.procedure_get(s) else { continue };
        let is_wrapper = match ast::view(&st.store, body) {
            Ok(ExprView::Primitive(p, actuals)) if p == s && actuals.len() == 1 && formals.len() == 1 => {
                matches!(ast::view(&st.store, actuals[0]), Ok(ExprView::Variable(x)) if x == formals[0])
            }
            _ => false,
        };
        if is_wrapper {
            st.native_bodies.insert(s, body.word());
        }
    }
}

fn is_native(st: &State, s: Sym) -> bool {
    st.native_bodies.get(&s).is_some_and(|&b| st.cell(s, CELL_BODY) == b)
}

// Macroexpansion.

pub fn macroexpand(st: &mut State, s: Word) -> ExpResult<Expr> {
    let t = sexpr::tag_of(&st.store, s)?;
    let content = sexpr::content(&st.store, s)?;
    let desc = st.type_table.get(&t).copied().ok_or_else(|| syntax(format!("no expander for s-expression tag {t}")))?;
    let ex = desc.expander;
    if is_native(st, ex) {
        let name = st.symbol_name(ex);
        return match name.as_str() {
            names::LITERAL_EXPANDER => Ok(st.make_value(content)),
            names::VARIABLE_EXPANDER => variable_expander(st, content),
            names::EXPRESSION_EXPANDER => expression_expander(st, content),
            _ => cons_expander(st, content),
        };
    }
    let r = interp::apply_procedure(st, ex, &[content])
        .map_err(|error| ExpandError::Expander { name: st.symbol_name(ex), error })?;
    match r.as_slice() {
        [w] => primitives::expr(st, *w).map_err(|e| syntax(format!("expander returned {e}"))),
        _ => Err(syntax(format!("expander {} returned {} values", st.symbol_name(ex), r.len()))),
    }
}

fn variable_expander(st: &mut State, content: Word) -> ExpResult<Expr> {
    let s = st.as_symbol(content).ok_or_else(|| syntax("symbol s-expression without a symbol"))?;
    Ok(st.make_variable(s))
}

fn expression_expander(st: &mut State, content: Word) -> ExpResult<Expr> {
    primitives::expr(st, content).map_err(|e| syntax(e.to_string()))
}

fn cons_expander(st: &mut State, cons: Word) -> ExpResult<Expr> {
    let car = st.store.car(cons).map_err(|e| syntax(e.to_string()))?;
    let cdr = st.store.cdr(cons).map_err(|e| syntax(e.to_string()))?;
    let head = match sexpr::as_symbol(st, car) {
        Some(s) => s,
        None => return Err(syntax(format!("the car is not a symbol: {}", sexpr::print(st, car)))),
    };
    let name = st.symbol_name(head);
    if CORE_FORMS.contains(&name.as_str()) {
        return non_macro(st, &name, cdr);
    }
    if st.macro_body(head).is_some() {
        let proc = macro_procedure_of(st, head)?;
        let r = interp::apply_procedure(st, proc, &[cdr]).map_err(|error| ExpandError::Macro { name: name.clone(), error })?;
        return match r.as_slice() {
            [w] => macroexpand(st, *w),
            _ => Err(syntax(format!("macro {name} returned {} values", r.len()))),
        };
    }
    let actuals = expand_list(st, cdr, &name)?;
    Ok(st.make_call(head, actuals))
}

fn elements(st: &State, s: Word, what: &str) -> ExpResult<Vec<Word>> {
    sexpr::list_to_vec(&st.store, s).map_err(|_| syntax(format!("{what}: not an s-list: {}", sexpr::print(st, s))))
}

fn expand_list(st: &mut State, s: Word, what: &str) -> ExpResult<Vec<Expr>> {
    elements(st, s, what)?.into_iter().map(|x| macroexpand(st, x)).collect()
}

fn symbol_of(st: &State, s: Word, what: &str) -> ExpResult<Sym> {
    sexpr::as_symbol(st, s).ok_or_else(|| syntax(format!("{what}: expected a symbol, got {}", sexpr::print(st, s))))
}

fn symbols_of(st: &State, s: Word, what: &str) -> ExpResult<Vec<Sym>> {
    let syms = elements(st, s, what)?.into_iter().map(|x| symbol_of(st, x, what)).collect::<ExpResult<Vec<_>>>()?;
    let distinct: HashSet<Sym> = syms.iter().copied().collect();
    if distinct.len() != syms.len() {
        return Err(syntax(format!("{what}: repeated variable")));
    }
    Ok(syms)
}

fn arity(st: &State, form: &str, args: &[Word], n: usize) -> ExpResult<()> {
    if args.len() != n {
        let _ = st;
        return Err(syntax(format!("{form} takes {n} arguments, given {}", args.len())));
    }
    Ok(())
}

/// Expansion of the core forms, given the s-cdr of the form.
fn non_macro(st: &mut State, form: &str, rest: Word) -> ExpResult<Expr> {
    let args = elements(st, rest, form)?;
    let headed = |st: &mut State, args: &[Word]| -> ExpResult<(Sym, Vec<Expr>)> {
        let (first, more) = args.split_first().ok_or_else(|| syntax(format!("{form} needs a name")))?;
        let name = symbol_of(st, *first, form)?;
        let actuals = more.iter().map(|&x| macroexpand(st, x)).collect::<ExpResult<Vec<_>>>()?;
        Ok((name, actuals))
    };
    match form {
        "e0:variable" => {
            arity(st, form, &args, 1)?;
            let x = symbol_of(st, args[0], form)?;
            Ok(st.make_variable(x))
        }
        "e0:value" => {
            arity(st, form, &args, 1)?;
            let c = sexpr::content(&st.store, args[0])?;
            Ok(st.make_value(c))
        }
        "e0:bundle" => {
            let items = args.iter().map(|&x| macroexpand(st, x)).collect::<ExpResult<Vec<_>>>()?;
            Ok(st.make_bundle(items))
        }
        "e0:primitive" => {
            let (n, xs) = headed(st, &args)?;
            Ok(st.make_primitive(n, xs))
        }
        "e0:call" => {
            let (n, xs) = headed(st, &args)?;
            Ok(st.make_call(n, xs))
        }
        "e0:fork" => {
            let (n, xs) = headed(st, &args)?;
            Ok(st.make_fork(n, xs))
        }
        "e0:let" => {
            arity(st, form, &args, 3)?;
            let vars = symbols_of(st, args[0], form)?;
            let bound = macroexpand(st, args[1])?;
            let body = macroexpand(st, args[2])?;
            Ok(st.make_let(vars, bound, body))
        }
        "e0:call-indirect" => {
            let (first, more) = args.split_first().ok_or_else(|| syntax("e0:call-indirect needs an operator"))?;
            let p = macroexpand(st, *first)?;
            let xs = more.iter().map(|&x| macroexpand(st, x)).collect::<ExpResult<Vec<_>>>()?;
            Ok(st.make_call_indirect(p, xs))
        }
        "e0:if-in" => {
            arity(st, form, &args, 4)?;
            let d = macroexpand(st, args[0])?;
            let vals = elements(st, args[1], form)?
                .into_iter()
                .map(|v| sexpr::content(&st.store, v).map_err(ExpandError::from))
                .collect::<ExpResult<Vec<_>>>()?;
            let t = macroexpand(st, args[2])?;
            let e = macroexpand(st, args[3])?;
            Ok(st.make_if_in(d, vals, t, e))
        }
        "e0:join" => {
            arity(st, form, &args, 1)?;
            let f = macroexpand(st, args[0])?;
            Ok(st.make_join(f))
        }
        _ => unreachable!("not a core form: {form}"),
    }
}

// Macros.

pub fn macro_set(st: &mut State, name: Sym, body: Word) {
    st.set_cell(name, CELL_MACRO, body);
    st.set_cell(name, CELL_MACRO_PROCEDURE, NIL);
}

pub fn invalidate_macro_procedures(st: &mut State) {
    for s in st.macro_names() {
        st.set_cell(s, CELL_MACRO_PROCEDURE, NIL);
    }
}

/// The cached macro procedure, generating and transforming it on first use.
pub fn macro_procedure_of(st: &mut State, name: Sym) -> ExpResult<Sym> {
    if let Some(p) = st.as_symbol(st.cell(name, CELL_MACRO_PROCEDURE)) {
        return Ok(p);
    }
    let body_s = st.macro_body(name).ok_or_else(|| syntax(format!("{} is not a macro", st.symbol_name(name))))?;
    let body = macroexpand(st, body_s)?;
    let fresh = st.fresh_symbol();
    let arguments = st.intern(names::ARGUMENTS);
    let (p, formals, body) = transform_procedure(st, fresh, vec![arguments], body)?;
    st.procedure_set(p, &formals, body);
    st.set_cell(name, CELL_MACRO_PROCEDURE, p.word());
    Ok(p)
}

// Transforms.

fn transform_failed(st: &State, t: Sym, error: EvalError) -> ExpandError {
    ExpandError::Transform { name: st.symbol_name(t), error }
}

fn malformed_transform(st: &State, t: Sym, what: &str) -> ExpandError {
    syntax(format!("transform {} returned {what}", st.symbol_name(t)))
}

pub fn transform_expression(st: &mut State, mut e: Expr) -> ExpResult<Expr> {
    for t in st.transforms(TransformKind::Expression) {
        e = transform_expression_with(st, t, e)?;
    }
    Ok(e)
}

fn transform_expression_with(st: &mut State, t: Sym, e: Expr) -> ExpResult<Expr> {
    let r = interp::apply_procedure(st, t, &[e.word()]).map_err(|err| transform_failed(st, t, err))?;
    match r.as_slice() {
        [w] => primitives::expr(st, *w).map_err(|_| malformed_transform(st, t, "a non-expression")),
        _ => Err(malformed_transform(st, t, "the wrong number of values")),
    }
}

pub fn transform_procedure(st: &mut State, name: Sym, formals: Vec<Sym>, body: Expr) -> ExpResult<(Sym, Vec<Sym>, Expr)> {
    let ts = st.transforms(TransformKind::Procedure);
    apply_procedure_transforms(st, &ts, name, formals, body)
}

fn apply_procedure_transforms(
    st: &mut State,
    ts: &[Sym],
    mut name: Sym,
    mut formals: Vec<Sym>,
    mut body: Expr,
) -> ExpResult<(Sym, Vec<Sym>, Expr)> {
    for &t in ts {
        let fw: Vec<Word> = formals.iter().map(|f| f.word()).collect();
        let fl = st.store.list(&fw);
        let r = interp::apply_procedure(st, t, &[name.word(), fl, body.word()]).map_err(|e| transform_failed(st, t, e))?;
        let [n, f, b] = r[..] else { return Err(malformed_transform(st, t, "the wrong number of values")) };
        name = st.as_symbol(n).ok_or_else(|| malformed_transform(st, t, "a non-symbol name"))?;
        formals = primitives_symbols(st, f).ok_or_else(|| malformed_transform(st, t, "malformed formals"))?;
        body = primitives::expr(st, b).map_err(|_| malformed_transform(st, t, "a non-expression body"))?;
    }
    Ok((name, formals, body))
}

fn primitives_symbols(st: &State, list: Word) -> Option<Vec<Sym>> {
    st.store.list_to_vec(list).ok()?.into_iter().map(|w| st.as_symbol(w)).collect()
}

pub fn transform_global(st: &mut State, name: Sym, value: Word) -> ExpResult<(Sym, Word)> {
    let ts = st.transforms(TransformKind::Global);
    apply_global_transforms(st, &ts, name, value)
}

fn apply_global_transforms(st: &mut State, ts: &[Sym], mut name: Sym, mut value: Word) -> ExpResult<(Sym, Word)> {
    for &t in ts {
        let r = interp::apply_procedure(st, t, &[name.word(), value]).map_err(|e| transform_failed(st, t, e))?;
        let [n, v] = r[..] else { return Err(malformed_transform(st, t, "the wrong number of values")) };
        name = st.as_symbol(n).ok_or_else(|| malformed_transform(st, t, "a non-symbol name"))?;
        value = v;
    }
    Ok((name, value))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    Prepend,
    Append,
}

/// Add a transform to a registry. Any change to the procedure transforms
/// invalidates every cached macro procedure.
pub fn transform_register(st: &mut State, kind: TransformKind, t: Sym, position: Position) {
    let mut list = st.transforms(kind);
    match position {
        Position::Prepend => list.insert(0, t),
        Position::Append => list.push(t),
    }
    st.set_transforms(kind, &list);
    if kind == TransformKind::Procedure {
        invalidate_macro_procedures(st);
    }
}

/// Re-transform existing bindings: compute everything first, then install
/// in one atomic update.
pub fn transform_retroactively(
    st: &mut State,
    skip_globals: &[Sym],
    global_ts: &[Sym],
    skip_procs: &[Sym],
    proc_ts: &[Sym],
) -> ExpResult<()> {
    let mut globals = Vec::new();
    if !global_ts.is_empty() {
        for g in st.global_names() {
            if skip_globals.contains(&g) {
                continue;
            }
            let v = st.global_get(g).unwrap_or(NIL);
            globals.push(apply_global_transforms(st, global_ts, g, v)?);
        }
    }
    let mut procs = Vec::new();
    if !proc_ts.is_empty() {
        for p in st.procedure_names() {
            if skip_procs.contains(&p) {
                continue;
            }
            let (formals, body) = st.procedure_get(p).expect("listed as a procedure");
            procs.push(apply_procedure_transforms(st, proc_ts, p, formals, body)?);
        }
    }
    st.update_globals_and_procedures(&globals, &procs);
    Ok(())
}

/// Expand, then run the expression transforms.
pub fn expand_toplevel(st: &mut State, s: Word) -> ExpResult<Expr> {
    let e = macroexpand(st, s)?;
    transform_expression(st, e)
}

// Closure conversion.

fn union(a: &[Sym], b: &[Sym]) -> Vec<Sym> {
    let mut out = a.to_vec();
    for &x in b {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Convert lambdas into flat closures `[procedure-name, nonlocals...]` and
/// closure calls into indirect calls; `bounds` are the locally bound
/// variables in scope.
pub fn closure_convert(st: &mut State, e: Expr, bounds: &[Sym]) -> ExpResult<Expr> {
    let v = ast::view(&st.store, e)?;
    match v {
        ExprView::Lambda(formals, body) => {
            let nonlocals: Vec<Sym> = bounds.iter().copied().filter(|b| !formals.contains(b)).collect();
            let new_body = closure_convert(st, body, &union(bounds, &formals))?;
            let fv = ast::free_variables(&st.store, new_body)?;
            let used: Vec<Sym> = nonlocals.into_iter().filter(|x| fv.contains(x)).collect();
            closure_make(st, &formals, &used, new_body)
        }
        ExprView::CallClosure(c, actuals) => {
            let c = closure_convert(st, c, bounds)?;
            let actuals = actuals.into_iter().map(|a| closure_convert(st, a, bounds)).collect::<ExpResult<Vec<_>>>()?;
            let fresh = st.fresh_symbol();
            let get = st.intern("buffer:get");
            let (v1, zero) = (st.make_variable(fresh), st.make_value(Word::Unboxed(0)));
            let op = st.make_primitive(get, vec![v1, zero]);
            let mut all = vec![st.make_variable(fresh)];
            all.extend(actuals);
            let call = st.make_call_indirect(op, all);
            Ok(st.make_let(vec![fresh], c, call))
        }
        ExprView::Let(vars, b, body) => {
            let b = closure_convert(st, b, bounds)?;
            let body = closure_convert(st, body, &union(bounds, &vars))?;
            Ok(st.make_let(vars, b, body))
        }
        v => {
            let v = ast::map_children(st, v, &mut |st, c| closure_convert(st, c, bounds))?;
            Ok(st.make_expr(&v))
        }
    }
}

/// Define the closure's procedure and return the expression building the
/// closure buffer.
fn closure_make(st: &mut State, formals: &[Sym], used: &[Sym], body: Expr) -> ExpResult<Expr> {
    let get = st.intern("buffer:get");
    let set = st.intern("buffer:set!");
    let make = st.intern("buffer:make-uninitialized");
    let name = st.fresh_symbol();
    let me = st.fresh_symbol();
    let mut proc_body = body;
    for (i, &u) in used.iter().enumerate().rev() {
        let (vm, idx) = (st.make_variable(me), st.make_value(Word::Unboxed(i as i64 + 1)));
        let load = st.make_primitive(get, vec![vm, idx]);
        proc_body = st.make_let(vec![u], load, proc_body);
    }
    let mut all_formals = vec![me];
    all_formals.extend_from_slice(formals);
    st.procedure_set(name, &all_formals, proc_body);

    let c = st.fresh_symbol();
    let mut build = st.make_variable(c);
    let mut stores: Vec<(i64, Word, Option<Sym>)> = vec![(0, name.word(), None)];
    stores.extend(used.iter().enumerate().map(|(i, &u)| (i as i64 + 1, NIL, Some(u))));
    for (i, w, var) in stores.into_iter().rev() {
        let target = st.make_variable(c);
        let idx = st.make_value(Word::Unboxed(i));
        let val = match var {
            Some(u) => st.make_variable(u),
            None => st.make_value(w),
        };
        let s = st.make_primitive(set, vec![target, idx, val]);
        build = st.make_let(vec![], s, build);
    }
    let size = st.make_value(Word::Unboxed(used.len() as i64 + 1));
    let alloc = st.make_primitive(make, vec![size]);
    Ok(st.make_let(vec![c], alloc, build))
}

// Primitive entry points.

pub fn prim_macroexpand(st: &mut State, a: &[Word]) -> PrimResult {
    Ok(vec![macroexpand(st, a[0])?.word()])
}

pub fn prim_transform_expression(st: &mut State, a: &[Word]) -> PrimResult {
    let e = primitives::expr(st, a[0])?;
    Ok(vec![transform_expression(st, e)?.word()])
}

fn symbol_list_arg(st: &State, w: Word) -> Result<Vec<Sym>, PrimError> {
    st.store.list_to_vec(w)?.into_iter().map(|x| primitives::symbol(st, x)).collect()
}

pub fn prim_transform_retroactively(st: &mut State, a: &[Word]) -> PrimResult {
    let sg = symbol_list_arg(st, a[0])?;
    let gt = symbol_list_arg(st, a[1])?;
    let sp = symbol_list_arg(st, a[2])?;
    let pt = symbol_list_arg(st, a[3])?;
    transform_retroactively(st, &sg, &gt, &sp, &pt)?;
    Ok(vec![])
}

pub fn prim_define_global(st: &mut State, a: &[Word]) -> PrimResult {
    let name = primitives::symbol(st, a[0])?;
    let (name, value) = transform_global(st, name, a[1])?;
    st.global_set(name, value);
    Ok(vec![])
}

pub fn prim_define_procedure(st: &mut State, a: &[Word]) -> PrimResult {
    let name = primitives::symbol(st, a[0])?;
    let formals = symbol_list_arg(st, a[1])?;
    let body = primitives::expr(st, a[2])?;
    let (name, formals, body) = transform_procedure(st, name, formals, body)?;
    st.procedure_set(name, &formals, body);
    Ok(vec![])
}

pub fn prim_macro_set(st: &mut State, a: &[Word]) -> PrimResult {
    let name = primitives::symbol(st, a[0])?;
    macro_set(st, name, a[1]);
    Ok(vec![])
}

pub fn prim_closure_convert(st: &mut State, a: &[Word]) -> PrimResult {
    let e = primitives::expr(st, a[0])?;
    let bounds = symbol_list_arg(st, a[1])?;
    Ok(vec![closure_convert(st, e, &bounds)?.word()])
}

pub fn prim_literal_expander(st: &mut State, a: &[Word]) -> PrimResult {
    Ok(vec![st.make_value(a[0]).word()])
}

pub fn prim_variable_expander(st: &mut State, a: &[Word]) -> PrimResult {
    Ok(vec![variable_expander(st, a[0])?.word()])
}

pub fn prim_expression_expander(st: &mut State, a: &[Word]) -> PrimResult {
    Ok(vec![expression_expander(st, a[0])?.word()])
}

pub fn prim_cons_expander(st: &mut State, a: &[Word]) -> PrimResult {
    Ok(vec![cons_expander(st, a[0])?.word()])
}

pub fn prim_type_register(st: &mut State, a: &[Word]) -> PrimResult {
    let t = primitives::fixnum(a[0])?;
    let expander = primitives::symbol(st, a[1])?;
    let printer = primitives::symbol(st, a[2])?;
    st.type_register(t, expander, printer);
    Ok(vec![])
}

// Host-backed macros. Each receives the s-cdr of the call and returns an
// s-expression, often an injected expression.

fn ssym(st: &mut State, name: &str) -> Word {
    let s = st.intern(name);
    sexpr::symbol(&mut st.store, s)
}

fn inject(st: &mut State, e: Expr) -> PrimResult {
    Ok(vec![sexpr::expression(&mut st.store, e)])
}

fn begin_of(st: &mut State, forms: Word) -> Word {
    let head = ssym(st, "e1:begin");
    sexpr::cons(&mut st.store, head, forms)
}

pub fn macro_define(st: &mut State, a: &[Word]) -> PrimResult {
    let args = a[0];
    let (target, rest) = (sexpr::car(&st.store, args)?, sexpr::cdr(&st.store, args)?);
    let define_global = st.intern("state:define-global!");
    let define_proc = st.intern("state:define-procedure!");
    if let Some(x) = sexpr::as_symbol(st, target) {
        let forms = elements(st, rest, "e1:define")?;
        if forms.len() != 1 {
            return Err(syntax("e1:define of a global takes exactly one value form").into());
        }
        let value = macroexpand(st, forms[0])?;
        let name = st.make_value(x.word());
        let e = st.make_primitive(define_global, vec![name, value]);
        return inject(st, e);
    }
    let shape = elements(st, target, "e1:define")?;
    let (f, formals) = shape.split_first().ok_or_else(|| PrimError::from(syntax("e1:define with an empty binder")))?;
    let f = symbol_of(st, *f, "e1:define")?;
    let formals_s = sexpr::list(&mut st.store, formals);
    let formals = symbols_of(st, formals_s, "e1:define formals")?;
    if !sexpr::is_cons(&st.store, rest) {
        return Err(syntax("e1:define of a procedure needs a body").into());
    }
    let begin = begin_of(st, rest);
    let body = macroexpand(st, begin)?;
    let fw: Vec<Word> = formals.iter().map(|s| s.word()).collect();
    let fl = st.store.list(&fw);
    let (n, fv, bv) = (st.make_value(f.word()), st.make_value(fl), st.make_value(body.word()));
    let e = st.make_primitive(define_proc, vec![n, fv, bv]);
    inject(st, e)
}

pub fn macro_trivial_define_macro(st: &mut State, a: &[Word]) -> PrimResult {
    let args = elements(st, a[0], "e1:trivial-define-macro")?;
    arity(st, "e1:trivial-define-macro", &args, 2)?;
    let name = symbol_of(st, args[0], "e1:trivial-define-macro")?;
    let set = st.intern("state:macro-set!");
    let (n, b) = (st.make_value(name.word()), st.make_value(args[1]));
    let e = st.make_primitive(set, vec![n, b]);
    inject(st, e)
}

/// `(e1:define-macro (name . pattern) body...)`: the pattern is a possibly
/// dotted list of symbols destructuring `arguments`.
pub fn macro_define_macro(st: &mut State, a: &[Word]) -> PrimResult {
    let args = a[0];
    let target = sexpr::car(&st.store, args)?;
    let body_forms = sexpr::cdr(&st.store, args)?;
    let name = symbol_of(st, sexpr::car(&st.store, target)?, "e1:define-macro")?;
    let mut pattern = sexpr::cdr(&st.store, target)?;
    let mut cursor = ssym(st, names::ARGUMENTS);
    let mut bindings: Vec<(Word, Word)> = Vec::new();
    loop {
        match sexpr::tag_of(&st.store, pattern)? {
            tag::EMPTY => break,
            tag::SYMBOL => {
                bindings.push((pattern, cursor));
                break;
            }
            tag::CONS => {
                let var = sexpr::car(&st.store, pattern)?;
                symbol_of(st, var, "e1:define-macro pattern")?;
                let car = ssym(st, "sexpression:car");
                let access = sexpr::list(&mut st.store, &[car, cursor]);
                bindings.push((var, access));
                let cdr = ssym(st, "sexpression:cdr");
                cursor = sexpr::list(&mut st.store, &[cdr, cursor]);
                pattern = sexpr::cdr(&st.store, pattern)?;
            }
            _ => return Err(syntax("e1:define-macro: malformed pattern").into()),
        }
    }
    let mut body = begin_of(st, body_forms);
    let let_head = ssym(st, "e0:let");
    for (var, access) in bindings.into_iter().rev() {
        let vars = sexpr::list(&mut st.store, &[var]);
        body = sexpr::list(&mut st.store, &[let_head, vars, access, body]);
    }
    let set = st.intern("state:macro-set!");
    let (n, b) = (st.make_value(name.word()), st.make_value(body));
    let e = st.make_primitive(set, vec![n, b]);
    inject(st, e)
}

pub fn macro_lambda(st: &mut State, a: &[Word]) -> PrimResult {
    let formals_s = sexpr::car(&st.store, a[0])?;
    let body_forms = sexpr::cdr(&st.store, a[0])?;
    let formals = symbols_of(st, formals_s, "e1:lambda formals")?;
    let begin = begin_of(st, body_forms);
    let body = macroexpand(st, begin)?;
    let e = st.make_lambda(formals, body);
    inject(st, e)
}

pub fn macro_call_closure(st: &mut State, a: &[Word]) -> PrimResult {
    let items = expand_list(st, a[0], "e1:call-closure")?;
    let (c, actuals) = items.split_first().ok_or_else(|| PrimError::from(syntax("e1:call-closure needs a closure")))?;
    let e = st.make_call_closure(*c, actuals.to_vec());
    inject(st, e)
}

pub fn macro_let_star(st: &mut State, a: &[Word]) -> PrimResult {
    let bindings = elements(st, sexpr::car(&st.store, a[0])?, "e1:let*")?;
    let body_forms = sexpr::cdr(&st.store, a[0])?;
    let mut body = begin_of(st, body_forms);
    let let_head = ssym(st, "e0:let");
    for b in bindings.into_iter().rev() {
        let parts = elements(st, b, "e1:let* binding")?;
        arity(st, "e1:let* binding", &parts, 2)?;
        let vars = if sexpr::as_symbol(st, parts[0]).is_some() {
            sexpr::list(&mut st.store, &[parts[0]])
        } else {
            symbols_of(st, parts[0], "e1:let* binding")?;
            parts[0]
        };
        body = sexpr::list(&mut st.store, &[let_head, vars, parts[1], body]);
    }
    Ok(vec![body])
}

pub fn macro_begin(st: &mut State, a: &[Word]) -> PrimResult {
    let forms = elements(st, a[0], "e1:begin")?;
    match forms.as_slice() {
        [] => {
            let head = ssym(st, "e0:bundle");
            Ok(vec![sexpr::list(&mut st.store, &[head])])
        }
        [one] => Ok(vec![*one]),
        [first, ..] => {
            let let_head = ssym(st, "e0:let");
            let none = sexpr::empty(&mut st.store);
            let rest = sexpr::cdr(&st.store, a[0])?;
            let rest = begin_of(st, rest);
            Ok(vec![sexpr::list(&mut st.store, &[let_head, none, *first, rest])])
        }
    }
}

/// Code building a copy of `s` at run time.
fn quote_expr(st: &mut State, s: Word) -> ExpResult<Expr> {
    let t = sexpr::tag_of(&st.store, s)?;
    if t == tag::CONS {
        let car = quote_expr(st, sexpr::car(&st.store, s)?)?;
        let cdr = quote_expr(st, sexpr::cdr(&st.store, s)?)?;
        return Ok(cons_code(st, car, cdr));
    }
    let make = st.intern("sexpression:make");
    let c = sexpr::content(&st.store, s)?;
    let (tv, cv) = (st.make_value(Word::Unboxed(t)), st.make_value(c));
    Ok(st.make_primitive(make, vec![tv, cv]))
}

fn cons_code(st: &mut State, car: Expr, cdr: Expr) -> Expr {
    let cons = st.intern("sexpression:cons");
    st.make_primitive(cons, vec![car, cdr])
}

fn symbol_code(st: &mut State, name: &str) -> ExpResult<Expr> {
    let s = ssym(st, name);
    quote_expr(st, s)
}

/// `(name x)` as a 2-element s-list, if `s` has that shape.
fn unary_form(st: &State, s: Word, name: &str) -> Option<Word> {
    let items = sexpr::list_to_vec(&st.store, s).ok()?;
    match items.as_slice() {
        [head, x] if sexpr::as_symbol(st, *head).is_some_and(|h| st.symbol_name(h) == name) => Some(*x),
        _ => None,
    }
}

fn wrap_code(st: &mut State, name: &str, inner: Expr) -> ExpResult<Expr> {
    let head = symbol_code(st, name)?;
    let nil = sexpr::empty(&mut st.store);
    let nil = quote_expr(st, nil)?;
    let tail = cons_code(st, inner, nil);
    Ok(cons_code(st, head, tail))
}

fn quasi(st: &mut State, s: Word, depth: usize) -> ExpResult<Expr> {
    if let Some(x) = unary_form(st, s, "unquote") {
        return if depth == 0 {
            macroexpand(st, x)
        } else {
            let inner = quasi(st, x, depth - 1)?;
            wrap_code(st, "unquote", inner)
        };
    }
    if let Some(x) = unary_form(st, s, "quasiquote") {
        let inner = quasi(st, x, depth + 1)?;
        return wrap_code(st, "quasiquote", inner);
    }
    if !sexpr::is_cons(&st.store, s) {
        return quote_expr(st, s);
    }
    let (a, rest) = (sexpr::car(&st.store, s)?, sexpr::cdr(&st.store, s)?);
    if let Some(x) = unary_form(st, a, "unquote-splicing") {
        let tail = quasi(st, rest, depth)?;
        if depth == 0 {
            let spliced = macroexpand(st, x)?;
            let append = st.intern("sexpression:append");
            return Ok(st.make_primitive(append, vec![spliced, tail]));
        }
        let inner = quasi(st, x, depth - 1)?;
        let head = wrap_code(st, "unquote-splicing", inner)?;
        return Ok(cons_code(st, head, tail));
    }
    let head = quasi(st, a, depth)?;
    let tail = quasi(st, rest, depth)?;
    Ok(cons_code(st, head, tail))
}

pub fn macro_quote(st: &mut State, a: &[Word]) -> PrimResult {
    let args = elements(st, a[0], "quote")?;
    arity(st, "quote", &args, 1)?;
    let e = quote_expr(st, args[0])?;
    inject(st, e)
}

pub fn macro_quasiquote(st: &mut State, a: &[Word]) -> PrimResult {
    let args = elements(st, a[0], "quasiquote")?;
    arity(st, "quasiquote", &args, 1)?;
    let e = quasi(st, args[0], 0)?;
    inject(st, e)
}

pub fn macro_unquote(_: &mut State, _: &[Word]) -> PrimResult {
    Err(syntax("unquote outside quasiquote").into())
}
