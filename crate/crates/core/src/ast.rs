//! Expressions as tagged buffers: `[case, handle, fields...]`.
//!
//! Lists inside expressions (actuals, bound variables, conditional cases) are
//! ordinary nil/cons chains.

use std::collections::HashSet;

use thiserror::Error;

use crate::state::{State, Sym};
use crate::store::{buffer_of, BufferId, Store, StoreError, Word};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(pub BufferId);

impl Expr {
    pub fn word(self) -> Word {
        Word::Boxed(self.0)
    }
}

pub mod case {
    pub const VARIABLE: i64 = 0;
    pub const VALUE: i64 = 1;
    pub const BUNDLE: i64 = 2;
    pub const PRIMITIVE: i64 = 3;
    pub const LET: i64 = 4;
    pub const CALL: i64 = 5;
    pub const CALL_INDIRECT: i64 = 6;
    pub const IF_IN: i64 = 7;
    pub const FORK: i64 = 8;
    pub const JOIN: i64 = 9;
    pub const LAMBDA: i64 = 10;
    pub const CALL_CLOSURE: i64 = 11;
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("unknown extended or invalid expression (case {0})")]
    UnknownCase(i64),
    #[error("malformed expression: {0}")]
    Malformed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A decoded view of one expression node. Children stay in the store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprView {
    Variable(Sym),
    Value(Word),
    Bundle(Vec<Expr>),
    Primitive(Sym, Vec<Expr>),
    Let(Vec<Sym>, Expr, Expr),
    Call(Sym, Vec<Expr>),
    CallIndirect(Expr, Vec<Expr>),
    IfIn(Expr, Vec<Word>, Expr, Expr),
    Fork(Sym, Vec<Expr>),
    Join(Expr),
    Lambda(Vec<Sym>, Expr),
    CallClosure(Expr, Vec<Expr>),
}

impl ExprView {
    pub fn case(&self) -> i64 {
        match self {
            ExprView::Variable(_) => case::VARIABLE,
            ExprView::Value(_) => case::VALUE,
            ExprView::Bundle(_) => case::BUNDLE,
            ExprView::Primitive(..) => case::PRIMITIVE,
            ExprView::Let(..) => case::LET,
            ExprView::Call(..) => case::CALL,
            ExprView::CallIndirect(..) => case::CALL_INDIRECT,
            ExprView::IfIn(..) => case::IF_IN,
            ExprView::Fork(..) => case::FORK,
            ExprView::Join(_) => case::JOIN,
            ExprView::Lambda(..) => case::LAMBDA,
            ExprView::CallClosure(..) => case::CALL_CLOSURE,
        }
    }

    /// Direct subexpressions, left to right.
    pub fn children(&self) -> Vec<Expr> {
        match self {
            ExprView::Variable(_) | ExprView::Value(_) => vec![],
            ExprView::Bundle(xs) | ExprView::Primitive(_, xs) | ExprView::Call(_, xs) | ExprView::Fork(_, xs) => {
                xs.clone()
            }
            ExprView::Let(_, b, body) => vec![*b, *body],
            ExprView::CallIndirect(p, xs) | ExprView::CallClosure(p, xs) => {
                let mut v = vec![*p];
                v.extend(xs);
                v
            }
            ExprView::IfIn(d, _, t, e) => vec![*d, *t, *e],
            ExprView::Join(e) => vec![*e],
            ExprView::Lambda(_, body) => vec![*body],
        }
    }

    pub fn is_extension(&self) -> bool {
        matches!(self, ExprView::Lambda(..) | ExprView::CallClosure(..))
    }
}

fn expr_list(store: &Store, w: Word) -> Result<Vec<Expr>, AstError> {
    store.list_to_vec(w)?.into_iter().map(|w| Ok(Expr(buffer_of(w)?))).collect()
}

fn sym_list(store: &Store, w: Word) -> Result<Vec<Sym>, AstError> {
    store.list_to_vec(w)?.into_iter().map(|w| Ok(Sym(buffer_of(w)?))).collect()
}

fn field_expr(w: Word) -> Result<Expr, AstError> {
    Ok(Expr(buffer_of(w)?))
}

fn field_sym(w: Word) -> Result<Sym, AstError> {
    Ok(Sym(buffer_of(w)?))
}

pub fn handle(store: &Store, e: Expr) -> Result<i64, AstError> {
    match store.get(e.0, 1)? {
        Word::Unboxed(h) => Ok(h),
        w => Err(AstError::Malformed(format!("handle {w}"))),
    }
}

pub fn case_of(store: &Store, e: Expr) -> Result<i64, AstError> {
    match store.get(e.0, 0)? {
        Word::Unboxed(c) => Ok(c),
        w => Err(AstError::Malformed(format!("case tag {w}"))),
    }
}

/// Decode one node into its handle and fields.
pub fn explode(store: &Store, e: Expr) -> Result<(i64, ExprView), AstError> {
    let cells = store.cells(e.0)?;
    let (c, h) = match cells {
        [Word::Unboxed(c), Word::Unboxed(h), ..] => (*c, *h),
        _ => return Err(AstError::Malformed(format!("expression buffer {}", e.0 .0))),
    };
    let f = &cells[2..];
    let want = match c {
        case::VARIABLE | case::VALUE | case::BUNDLE | case::JOIN => 1,
        case::PRIMITIVE | case::CALL | case::CALL_INDIRECT | case::FORK | case::LAMBDA | case::CALL_CLOSURE => 2,
        case::LET => 3,
        case::IF_IN => 4,
        other => return Err(AstError::UnknownCase(other)),
    };
    if f.len() != want {
        return Err(AstError::Malformed(format!("case {c} with {} fields", f.len())));
    }
    let view = match c {
        case::VARIABLE => ExprView::Variable(field_sym(f[0])?),
        case::VALUE => ExprView::Value(f[0]),
        case::BUNDLE => ExprView::Bundle(expr_list(store, f[0])?),
        case::PRIMITIVE => ExprView::Primitive(field_sym(f[0])?, expr_list(store, f[1])?),
        case::LET => ExprView::Let(sym_list(store, f[0])?, field_expr(f[1])?, field_expr(f[2])?),
        case::CALL => ExprView::Call(field_sym(f[0])?, expr_list(store, f[1])?),
        case::CALL_INDIRECT => ExprView::CallIndirect(field_expr(f[0])?, expr_list(store, f[1])?),
        case::IF_IN => {
            ExprView::IfIn(field_expr(f[0])?, store.list_to_vec(f[1])?, field_expr(f[2])?, field_expr(f[3])?)
        }
        case::FORK => ExprView::Fork(field_sym(f[0])?, expr_list(store, f[1])?),
        case::JOIN => ExprView::Join(field_expr(f[0])?),
        case::LAMBDA => ExprView::Lambda(sym_list(store, f[0])?, field_expr(f[1])?),
        case::CALL_CLOSURE => ExprView::CallClosure(field_expr(f[0])?, expr_list(store, f[1])?),
        _ => unreachable!(),
    };
    Ok((h, view))
}

pub fn view(store: &Store, e: Expr) -> Result<ExprView, AstError> {
    explode(store, e).map(|(_, v)| v)
}

fn words<T: Copy>(xs: &[T], f: impl Fn(T) -> Word) -> Vec<Word> {
    xs.iter().map(|&x| f(x)).collect()
}

impl State {
    pub fn fresh_handle(&mut self) -> i64 {
        let h = self.handle_counter;
        self.handle_counter += 1;
        h
    }

    /// Build a node from a view with a fresh handle.
    pub fn make_expr(&mut self, v: &ExprView) -> Expr {
        let h = self.fresh_handle();
        self.make_expr_with_handle(v, h)
    }

    pub fn make_expr_with_handle(&mut self, v: &ExprView, h: i64) -> Expr {
        let s = &mut self.store;
        let mut cells = vec![Word::Unboxed(v.case()), Word::Unboxed(h)];
        match v {
            ExprView::Variable(x) => cells.push(x.word()),
            ExprView::Value(c) => cells.push(*c),
            ExprView::Bundle(xs) => cells.push(s.list(&words(xs, Expr::word))),
            ExprView::Primitive(n, xs) | ExprView::Call(n, xs) | ExprView::Fork(n, xs) => {
                cells.push(n.word());
                cells.push(s.list(&words(xs, Expr::word)));
            }
            ExprView::Let(vars, b, body) => {
                cells.push(s.list(&words(vars, Sym::word)));
                cells.push(b.word());
                cells.push(body.word());
            }
            ExprView::CallIndirect(p, xs) | ExprView::CallClosure(p, xs) => {
                cells.push(p.word());
                cells.push(s.list(&words(xs, Expr::word)));
            }
            ExprView::IfIn(d, vals, t, e) => {
                cells.push(d.word());
                cells.push(s.list(vals));
                cells.push(t.word());
                cells.push(e.word());
            }
            ExprView::Join(e) => cells.push(e.word()),
            ExprView::Lambda(formals, body) => {
                cells.push(s.list(&words(formals, Sym::word)));
                cells.push(body.word());
            }
        }
        Expr(s.alloc(cells))
    }

    pub fn make_variable(&mut self, x: Sym) -> Expr {
        self.make_expr(&ExprView::Variable(x))
    }

    pub fn make_value(&mut self, c: Word) -> Expr {
        self.make_expr(&ExprView::Value(c))
    }

    pub fn make_bundle(&mut self, items: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::Bundle(items))
    }

    pub fn make_primitive(&mut self, name: Sym, actuals: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::Primitive(name, actuals))
    }

    pub fn make_let(&mut self, vars: Vec<Sym>, bound: Expr, body: Expr) -> Expr {
        self.make_expr(&ExprView::Let(vars, bound, body))
    }

    pub fn make_call(&mut self, name: Sym, actuals: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::Call(name, actuals))
    }

    pub fn make_call_indirect(&mut self, proc_expr: Expr, actuals: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::CallIndirect(proc_expr, actuals))
    }

    pub fn make_if_in(&mut self, discr: Expr, values: Vec<Word>, then: Expr, els: Expr) -> Expr {
        self.make_expr(&ExprView::IfIn(discr, values, then, els))
    }

    pub fn make_fork(&mut self, name: Sym, actuals: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::Fork(name, actuals))
    }

    pub fn make_join(&mut self, future: Expr) -> Expr {
        self.make_expr(&ExprView::Join(future))
    }

    pub fn make_lambda(&mut self, formals: Vec<Sym>, body: Expr) -> Expr {
        self.make_expr(&ExprView::Lambda(formals, body))
    }

    pub fn make_call_closure(&mut self, closure: Expr, actuals: Vec<Expr>) -> Expr {
        self.make_expr(&ExprView::CallClosure(closure, actuals))
    }

    /// A copy of `e` with every node re-created under a fresh handle.
    pub fn copy_expr(&mut self, e: Expr) -> Result<Expr, AstError> {
        let v = view(&self.store, e)?;
        let v = map_children(self, v, &mut |st, c| st.copy_expr(c))?;
        Ok(self.make_expr(&v))
    }
}

/// Rebuild a view with each direct child passed through `f`.
pub fn map_children<E>(
    st: &mut State,
    v: ExprView,
    f: &mut dyn FnMut(&mut State, Expr) -> Result<Expr, E>,
) -> Result<ExprView, E> {
    fn all<E>(
        st: &mut State,
        xs: Vec<Expr>,
        f: &mut dyn FnMut(&mut State, Expr) -> Result<Expr, E>,
    ) -> Result<Vec<Expr>, E> {
        xs.into_iter().map(|x| f(st, x)).collect()
    }
    Ok(match v {
        ExprView::Variable(_) | ExprView::Value(_) => v,
        ExprView::Bundle(xs) => ExprView::Bundle(all(st, xs, f)?),
        ExprView::Primitive(n, xs) => ExprView::Primitive(n, all(st, xs, f)?),
        ExprView::Call(n, xs) => ExprView::Call(n, all(st, xs, f)?),
        ExprView::Fork(n, xs) => ExprView::Fork(n, all(st, xs, f)?),
        ExprView::Let(vars, b, body) => {
            let b = f(st, b)?;
            ExprView::Let(vars, b, f(st, body)?)
        }
        ExprView::CallIndirect(p, xs) => {
            let p = f(st, p)?;
            ExprView::CallIndirect(p, all(st, xs, f)?)
        }
        ExprView::CallClosure(p, xs) => {
            let p = f(st, p)?;
            ExprView::CallClosure(p, all(st, xs, f)?)
        }
        ExprView::IfIn(d, vals, t, e) => {
            let d = f(st, d)?;
            let t = f(st, t)?;
            ExprView::IfIn(d, vals, t, f(st, e)?)
        }
        ExprView::Join(e) => ExprView::Join(f(st, e)?),
        ExprView::Lambda(formals, body) => ExprView::Lambda(formals, f(st, body)?),
    })
}

/// Free variables in first-occurrence order.
pub fn free_variables(store: &Store, e: Expr) -> Result<Vec<Sym>, AstError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut bound = Vec::new();
    fv(store, e, &mut bound, &mut out, &mut seen, 0)?;
    Ok(out)
}

const MAX_WALK_DEPTH: usize = 100_000;

fn fv(
    store: &Store,
    e: Expr,
    bound: &mut Vec<Sym>,
    out: &mut Vec<Sym>,
    seen: &mut HashSet<Sym>,
    depth: usize,
) -> Result<(), AstError> {
    if depth > MAX_WALK_DEPTH {
        return Err(AstError::Malformed("expression too deep or cyclic".into()));
    }
    match view(store, e)? {
        ExprView::Variable(x) => {
            if !bound.contains(&x) && seen.insert(x) {
                out.push(x);
            }
        }
        ExprView::Let(vars, b, body) => {
            fv(store, b, bound, out, seen, depth + 1)?;
            let n = bound.len();
            bound.extend(vars);
            fv(store, body, bound, out, seen, depth + 1)?;
            bound.truncate(n);
        }
        ExprView::Lambda(formals, body) => {
            let n = bound.len();
            bound.extend(formals);
            fv(store, body, bound, out, seen, depth + 1)?;
            bound.truncate(n);
        }
        v => {
            for c in v.children() {
                fv(store, c, bound, out, seen, depth + 1)?;
            }
        }
    }
    Ok(())
}

/// Structural equality ignoring handles. Symbols and constants compare by
/// identity.
pub fn equal_up_to_handles(store: &Store, a: Expr, b: Expr) -> bool {
    fn go(store: &Store, a: Expr, b: Expr, depth: usize) -> bool {
        if depth > MAX_WALK_DEPTH {
            return false;
        }
        let (va, vb) = match (view(store, a), view(store, b)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => return false,
        };
        let same_shape = match (&va, &vb) {
            (ExprView::Variable(x), ExprView::Variable(y)) => x == y,
            (ExprView::Value(x), ExprView::Value(y)) => x == y,
            (ExprView::Bundle(x), ExprView::Bundle(y)) => x.len() == y.len(),
            (ExprView::Primitive(n, x), ExprView::Primitive(m, y))
            | (ExprView::Call(n, x), ExprView::Call(m, y))
            | (ExprView::Fork(n, x), ExprView::Fork(m, y)) => n == m && x.len() == y.len(),
            (ExprView::Let(x, ..), ExprView::Let(y, ..)) => x == y,
            (ExprView::CallIndirect(_, x), ExprView::CallIndirect(_, y))
            | (ExprView::CallClosure(_, x), ExprView::CallClosure(_, y)) => x.len() == y.len(),
            (ExprView::IfIn(_, x, ..), ExprView::IfIn(_, y, ..)) => x == y,
            (ExprView::Join(_), ExprView::Join(_)) => true,
            (ExprView::Lambda(x, _), ExprView::Lambda(y, _)) => x == y,
            _ => false,
        };
        same_shape && va.children().into_iter().zip(vb.children()).all(|(x, y)| go(store, x, y, depth + 1))
    }
    go(store, a, b, 0)
}

/// Every handle occurring in `e`, in pre-order.
pub fn handles(store: &Store, e: Expr) -> Result<Vec<i64>, AstError> {
    let mut out = Vec::new();
    let mut stack = vec![e];
    while let Some(e) = stack.pop() {
        let (h, v) = explode(store, e)?;
        out.push(h);
        if out.len() > MAX_WALK_DEPTH * 10 {
            return Err(AstError::Malformed("expression too large or cyclic".into()));
        }
        stack.extend(v.children().into_iter().rev());
    }
    Ok(out)
}

/// Whether any lambda or call-closure node occurs in `e`.
pub fn contains_extension(store: &Store, e: Expr) -> Result<bool, AstError> {
    let mut stack = vec![e];
    let mut visited = 0usize;
    while let Some(e) = stack.pop() {
        let v = view(store, e)?;
        if v.is_extension() {
            return Ok(true);
        }
        visited += 1;
        if visited > MAX_WALK_DEPTH * 10 {
            return Err(AstError::Malformed("expression too large or cyclic".into()));
        }
        stack.extend(v.children());
    }
    Ok(false)
}

/// Diagnostic rendering in the `[call f 1 2]` style, handles omitted.
pub fn render(st: &State, e: Expr) -> String {
    let mut out = String::new();
    render_into(st, e, &mut out, 0);
    out
}

fn render_into(st: &State, e: Expr, out: &mut String, depth: usize) {
    if depth > 200 {
        out.push_str("...");
        return;
    }
    let v = match view(&st.store, e) {
        Ok(v) => v,
        Err(err) => {
            out.push_str(&format!("#<{err}>"));
            return;
        }
    };
    let name = |s: Sym| st.symbol_name(s);
    let list = |out: &mut String, head: String, xs: &[Expr]| {
        out.push('[');
        out.push_str(&head);
        for &x in xs {
            out.push(' ');
            render_into(st, x, out, depth + 1);
        }
        out.push(']');
    };
    match v {
        ExprView::Variable(x) => out.push_str(&name(x)),
        ExprView::Value(c) => match st.as_symbol(c) {
            Some(s) => out.push_str(&format!("'{}", name(s))),
            None => out.push_str(&c.to_string()),
        },
        ExprView::Bundle(xs) => list(out, "bundle".into(), &xs),
        ExprView::Primitive(n, xs) => list(out, format!("primitive {}", name(n)), &xs),
        ExprView::Call(n, xs) => list(out, format!("call {}", name(n)), &xs),
        ExprView::Fork(n, xs) => list(out, format!("fork {}", name(n)), &xs),
        ExprView::CallIndirect(p, xs) => {
            let mut all = vec![p];
            all.extend(xs);
            list(out, "call-indirect".into(), &all)
        }
        ExprView::CallClosure(p, xs) => {
            let mut all = vec![p];
            all.extend(xs);
            list(out, "call-closure".into(), &all)
        }
        ExprView::Let(vars, b, body) => {
            let vs: Vec<String> = vars.into_iter().map(name).collect();
            list(out, format!("let ({})", vs.join(" ")), &[b, body])
        }
        ExprView::IfIn(d, vals, t, e) => {
            out.push_str("[if ");
            render_into(st, d, out, depth + 1);
            let vs: Vec<String> = vals.iter().map(|w| w.to_string()).collect();
            out.push_str(&format!(" in ({}) ", vs.join(" ")));
            render_into(st, t, out, depth + 1);
            out.push(' ');
            render_into(st, e, out, depth + 1);
            out.push(']');
        }
        ExprView::Join(e) => list(out, "join".into(), &[e]),
        ExprView::Lambda(formals, body) => {
            let fs: Vec<String> = formals.into_iter().map(name).collect();
            list(out, format!("lambda ({})", fs.join(" ")), &[body])
        }
    }
}
