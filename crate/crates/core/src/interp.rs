//! The small-step machine.
//!
//! A thread is a main stack of (possibly holed) frames, each paired with a
//! local environment, plus a value stack of words and separators. Between
//! steps the value stack always has a value separator on top. A bundle of
//! results sits between two value separators; an activation separator marks
//! where the actuals of a pending call begin.

use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::ast::{self, case, Expr, ExprView};
use crate::primitives::{self, PrimError};
use crate::state::{FutureEntry, SchedulerMode, State, Sym};
use crate::store::{ThreadId, Word};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailureKind {
    Environment,
    Dimension,
    Primitive,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Environment => "environment",
            FailureKind::Dimension => "dimension",
            FailureKind::Primitive => "primitive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub kind: FailureKind,
    /// Handle of the expression whose rule could not fire.
    pub handle: Option<i64>,
    pub detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.handle {
            Some(h) => write!(f, "{} failure at handle {}: {}", self.kind, h, self.detail),
            None => write!(f, "{} failure: {}", self.kind, self.detail),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{0}")]
    Failed(Failure),
    #[error("fuel exhausted")]
    FuelExhausted,
    #[error("resource overflow: {0}")]
    ResourceOverflow(String),
    /// The foreground waits on a future that can never deliver one value.
    #[error("deadlock waiting on thread {}", .0 .0)]
    Deadlock(ThreadId),
}

impl EvalError {
    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self {
            EvalError::Failed(f) => Some(f.kind),
            _ => None,
        }
    }
}

/// Persistent local environment.
#[derive(Clone, Default)]
pub struct Env(Option<Rc<EnvNode>>);

struct EnvNode {
    name: Sym,
    value: Word,
    next: Env,
}

impl Env {
    pub fn empty() -> Env {
        Env(None)
    }

    pub fn bind(&self, name: Sym, value: Word) -> Env {
        Env(Some(Rc::new(EnvNode { name, value, next: self.clone() })))
    }

    pub fn lookup(&self, name: Sym) -> Option<Word> {
        let mut cur = &self.0;
        while let Some(node) = cur {
            if node.name == name {
                return Some(node.value);
            }
            cur = &node.next.0;
        }
        None
    }

    /// Visible bindings, innermost first, shadowed ones omitted.
    pub fn bindings(&self) -> Vec<(Sym, Word)> {
        let mut out: Vec<(Sym, Word)> = Vec::new();
        let mut cur = &self.0;
        while let Some(node) = cur {
            if !out.iter().any(|(s, _)| *s == node.name) {
                out.push((node.name, node.value));
            }
            cur = &node.next.0;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }
}

impl fmt::Debug for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.bindings().into_iter().map(|(s, w)| (s.0 .0, w))).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VItem {
    Word(Word),
    /// ▹
    Sep,
    /// ‖
    Act,
}

/// A main stack entry. `Eval` is a plain expression; the others are holed
/// frames waiting for the value stack to be filled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Eval(Expr),
    Let { expr: Expr, vars: Vec<Sym>, body: Expr },
    Call { expr: Expr, name: Sym },
    Primitive { expr: Expr, name: Sym },
    Bundle { expr: Expr, count: usize },
    IfIn { expr: Expr, values: Vec<Word>, then: Expr, els: Expr },
    Fork { expr: Expr, name: Sym },
    Join { expr: Expr },
    CallIndirect { expr: Expr },
    ClosureHead { expr: Expr, actuals: Vec<Expr> },
    CallClosure { expr: Expr },
}

impl Frame {
    pub fn expr(&self) -> Expr {
        match self {
            Frame::Eval(expr)
            | Frame::Let { expr, .. }
            | Frame::Call { expr, .. }
            | Frame::Primitive { expr, .. }
            | Frame::Bundle { expr, .. }
            | Frame::IfIn { expr, .. }
            | Frame::Fork { expr, .. }
            | Frame::Join { expr }
            | Frame::CallIndirect { expr }
            | Frame::ClosureHead { expr, .. }
            | Frame::CallClosure { expr } => *expr,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Thread {
    /// Top is the last element.
    pub stack: Vec<(Frame, Env)>,
    /// Top is the last element.
    pub values: Vec<VItem>,
}

impl Thread {
    pub fn new(e: Expr, env: Env) -> Thread {
        Thread { stack: vec![(Frame::Eval(e), env)], values: vec![VItem::Sep] }
    }

    pub fn is_final(&self) -> bool {
        self.stack.is_empty()
    }

    /// Results of a final thread, first result first.
    pub fn results(&self) -> Option<Vec<Word>> {
        let v = &self.values;
        if v.len() < 2 || v[0] != VItem::Sep || v[v.len() - 1] != VItem::Sep {
            return None;
        }
        v[1..v.len() - 1]
            .iter()
            .map(|i| match i {
                VItem::Word(w) => Some(*w),
                _ => None,
            })
            .collect()
    }
}

/// The rule fired by a step, for traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Constant,
    Variable,
    LetE,
    LetC,
    CallE,
    CallC,
    CallIndirectE,
    CallIndirectC,
    PrimitiveE,
    PrimitiveC,
    IfE,
    IfCIn,
    IfCNotIn,
    BundleE,
    BundleC,
    ForkE,
    ForkC,
    JoinE,
    JoinC,
    LambdaNative,
    CallClosureE,
    ClosureHeadC,
    CallClosureC,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Constant => "constant",
            Rule::Variable => "variable",
            Rule::LetE => "let-e",
            Rule::LetC => "let-c",
            Rule::CallE => "call-e",
            Rule::CallC => "call-c",
            Rule::CallIndirectE => "call-indirect-e",
            Rule::CallIndirectC => "call-indirect-c",
            Rule::PrimitiveE => "primitive-e",
            Rule::PrimitiveC => "primitive-c",
            Rule::IfE => "if-e",
            Rule::IfCIn => "if-c-in",
            Rule::IfCNotIn => "if-c-not-in",
            Rule::BundleE => "bundle-e",
            Rule::BundleC => "bundle-c",
            Rule::ForkE => "fork-e",
            Rule::ForkC => "fork-c",
            Rule::JoinE => "join-e",
            Rule::JoinC => "join-c",
            Rule::LambdaNative => "lambda",
            Rule::CallClosureE => "call-closure-e",
            Rule::ClosureHeadC => "closure-head-c",
            Rule::CallClosureC => "call-closure-c",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Stepped(Rule),
    Final(Vec<Word>),
    Failed(Failure),
    Waiting(ThreadId),
}

fn fail(kind: FailureKind, st: &State, e: Expr, detail: impl Into<String>) -> StepOutcome {
    StepOutcome::Failed(Failure { kind, handle: ast::handle(&st.store, e).ok(), detail: detail.into() })
}

/// Parse `▹ cₙ ▹ … ▹ c₁ ▹ ‖` at the top of the value stack. Returns the
/// index of the activation separator and c₁…cₙ, or `None` when some group
/// is not a single word or there is no activation separator.
fn activation(values: &[VItem]) -> Option<(usize, Vec<Word>)> {
    let mut i = values.len().checked_sub(1)?;
    if values[i] != VItem::Sep {
        return None;
    }
    let mut args = Vec::new();
    loop {
        let below = i.checked_sub(1)?;
        match values[below] {
            VItem::Act => {
                args.reverse();
                return Some((below, args));
            }
            VItem::Sep => return None,
            VItem::Word(w) => {
                let sep = below.checked_sub(1)?;
                if values[sep] != VItem::Sep {
                    return None;
                }
                args.push(w);
                i = sep;
            }
        }
    }
}

/// Parse `▹ cₘ … c₁ ▹` at the top. Returns the index of the lower
/// separator and c₁…cₘ.
fn top_group(values: &[VItem]) -> Option<(usize, Vec<Word>)> {
    let top = values.len().checked_sub(1)?;
    if values[top] != VItem::Sep {
        return None;
    }
    let mut j = top;
    loop {
        j = j.checked_sub(1)?;
        match values[j] {
            VItem::Word(_) => continue,
            VItem::Sep => break,
            VItem::Act => return None,
        }
    }
    let words = values[j + 1..top]
        .iter()
        .map(|i| match i {
            VItem::Word(w) => *w,
            _ => unreachable!(),
        })
        .collect();
    Some((j, words))
}

fn push_group(values: &mut Vec<VItem>, words: &[Word]) {
    values.push(VItem::Sep);
    values.extend(words.iter().map(|&w| VItem::Word(w)));
    values.push(VItem::Sep);
}

fn bind_all(env: &Env, names: &[Sym], values: &[Word]) -> Env {
    names.iter().zip(values).fold(env.clone(), |e, (&n, &v)| e.bind(n, v))
}

/// Recognize a closure built by the native lambda rule:
/// `[lambda-expr, sym₁, val₁, …]`.
pub fn native_closure_parts(st: &State, w: Word) -> Option<(Vec<Sym>, Expr, Env)> {
    let b = w.as_buffer()?;
    let cells = st.store.cells(b).ok()?;
    if cells.is_empty() || cells.len() % 2 != 1 {
        return None;
    }
    let lam = Expr(cells[0].as_buffer()?);
    let (formals, body) = match ast::view(&st.store, lam).ok()? {
        ExprView::Lambda(f, b) => (f, b),
        _ => return None,
    };
    let mut env = Env::empty();
    for pair in cells[1..].chunks(2) {
        env = env.bind(Sym(pair[0].as_buffer()?), pair[1]);
    }
    Some((formals, body, env))
}

/// One step of one thread, never touching other threads' configurations.
/// `Err` is reserved for resource aborts; semantic failures are outcomes.
pub fn step_sequential(st: &mut State, th: &mut Thread) -> Result<StepOutcome, EvalError> {
    let (frame, env) = match th.stack.pop() {
        None => {
            return Ok(match th.results() {
                Some(r) => StepOutcome::Final(r),
                None => StepOutcome::Failed(Failure {
                    kind: FailureKind::Dimension,
                    handle: None,
                    detail: "malformed final value stack".into(),
                }),
            })
        }
        Some(top) => top,
    };
    let outcome = step_frame(st, th, &frame, &env)?;
    match outcome {
        StepOutcome::Stepped(_) => {
            if th.stack.len() > st.config.max_stack {
                return Err(EvalError::ResourceOverflow("main stack".into()));
            }
            if th.values.len() > st.config.max_values {
                return Err(EvalError::ResourceOverflow("value stack".into()));
            }
        }
        _ => th.stack.push((frame, env)),
    }
    Ok(outcome)
}

fn step_frame(st: &mut State, th: &mut Thread, frame: &Frame, env: &Env) -> Result<StepOutcome, EvalError> {
    use StepOutcome::Stepped;
    let vs = &mut th.values;
    if vs.last() != Some(&VItem::Sep) {
        return Ok(fail(FailureKind::Dimension, st, frame.expr(), "value stack lacks its top separator"));
    }
    match frame {
        Frame::Eval(e) => {
            let e = *e;
            let v = match ast::view(&st.store, e) {
                Ok(v) => v,
                Err(err) => return Ok(fail(FailureKind::Primitive, st, e, format!("not an expression: {err}"))),
            };
            // Opening an activation: ▹V becomes ▹‖V.
            let open = |vs: &mut Vec<VItem>| {
                vs.pop();
                vs.push(VItem::Act);
                vs.push(VItem::Sep);
            };
            let push_actuals = |stack: &mut Vec<(Frame, Env)>, xs: &[Expr]| {
                for &x in xs.iter().rev() {
                    stack.push((Frame::Eval(x), env.clone()));
                }
            };
            Ok(match v {
                ExprView::Value(c) => {
                    vs.push(VItem::Word(c));
                    vs.push(VItem::Sep);
                    Stepped(Rule::Constant)
                }
                ExprView::Variable(x) => {
                    let w = match env.lookup(x).or_else(|| st.global_get(x)) {
                        Some(w) => w,
                        None => {
                            let name = st.symbol_name(x);
                            return Ok(fail(FailureKind::Environment, st, e, format!("unbound variable {name}")));
                        }
                    };
                    vs.push(VItem::Word(w));
                    vs.push(VItem::Sep);
                    Stepped(Rule::Variable)
                }
                ExprView::Let(vars, bound, body) => {
                    th.stack.push((Frame::Let { expr: e, vars, body }, env.clone()));
                    th.stack.push((Frame::Eval(bound), env.clone()));
                    Stepped(Rule::LetE)
                }
                ExprView::Call(name, xs) => {
                    open(vs);
                    th.stack.push((Frame::Call { expr: e, name }, Env::empty()));
                    push_actuals(&mut th.stack, &xs);
                    Stepped(Rule::CallE)
                }
                ExprView::CallIndirect(p, xs) => {
                    open(vs);
                    th.stack.push((Frame::CallIndirect { expr: e }, Env::empty()));
                    push_actuals(&mut th.stack, &xs);
                    th.stack.push((Frame::Eval(p), env.clone()));
                    Stepped(Rule::CallIndirectE)
                }
                ExprView::Primitive(name, xs) => {
                    open(vs);
                    th.stack.push((Frame::Primitive { expr: e, name }, Env::empty()));
                    push_actuals(&mut th.stack, &xs);
                    Stepped(Rule::PrimitiveE)
                }
                ExprView::Bundle(xs) => {
                    open(vs);
                    th.stack.push((Frame::Bundle { expr: e, count: xs.len() }, Env::empty()));
                    push_actuals(&mut th.stack, &xs);
                    Stepped(Rule::BundleE)
                }
                ExprView::Fork(name, xs) => {
                    open(vs);
                    th.stack.push((Frame::Fork { expr: e, name }, Env::empty()));
                    push_actuals(&mut th.stack, &xs);
                    Stepped(Rule::ForkE)
                }
                ExprView::IfIn(d, values, then, els) => {
                    th.stack.push((Frame::IfIn { expr: e, values, then, els }, env.clone()));
                    th.stack.push((Frame::Eval(d), env.clone()));
                    Stepped(Rule::IfE)
                }
                ExprView::Join(x) => {
                    th.stack.push((Frame::Join { expr: e }, env.clone()));
                    th.stack.push((Frame::Eval(x), env.clone()));
                    Stepped(Rule::JoinE)
                }
                ExprView::Lambda(..) if st.config.native_closures => {
                    let mut cells = vec![e.word()];
                    for x in ast::free_variables(&st.store, e).unwrap_or_default() {
                        if let Some(w) = env.lookup(x) {
                            cells.push(x.word());
                            cells.push(w);
                        }
                    }
                    let c = st.store.alloc(cells);
                    vs.push(VItem::Word(Word::Boxed(c)));
                    vs.push(VItem::Sep);
                    Stepped(Rule::LambdaNative)
                }
                ExprView::CallClosure(c, actuals) if st.config.native_closures => {
                    th.stack.push((Frame::ClosureHead { expr: e, actuals }, env.clone()));
                    th.stack.push((Frame::Eval(c), env.clone()));
                    Stepped(Rule::CallClosureE)
                }
                ExprView::Lambda(..) | ExprView::CallClosure(..) => {
                    fail(FailureKind::Primitive, st, e, "extension expression reached the core machine")
                }
            })
        }
        Frame::Let { expr, vars, body } => {
            let (lower, words) = match top_group(vs) {
                Some(g) => g,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "let bound expression left no bundle")),
            };
            if words.len() < vars.len() {
                return Ok(fail(
                    FailureKind::Dimension,
                    st,
                    *expr,
                    format!("let binds {} variables to {} values", vars.len(), words.len()),
                ));
            }
            vs.truncate(lower + 1);
            let env = bind_all(env, vars, &words);
            th.stack.push((Frame::Eval(*body), env));
            Ok(Stepped(Rule::LetC))
        }
        Frame::Call { expr, name } => {
            let (act, args) = match activation(vs) {
                Some(a) => a,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "actual is not a single value")),
            };
            let (formals, body) = match st.procedure_get(*name) {
                Some(p) => p,
                None => {
                    let n = st.symbol_name(*name);
                    return Ok(fail(FailureKind::Dimension, st, *expr, format!("undefined procedure {n}")));
                }
            };
            if formals.len() != args.len() {
                let n = st.symbol_name(*name);
                return Ok(fail(
                    FailureKind::Dimension,
                    st,
                    *expr,
                    format!("{n} takes {} arguments, given {}", formals.len(), args.len()),
                ));
            }
            vs.truncate(act);
            vs.push(VItem::Sep);
            th.stack.push((Frame::Eval(body), bind_all(&Env::empty(), &formals, &args)));
            Ok(Stepped(Rule::CallC))
        }
        Frame::CallIndirect { expr } => {
            let (act, args) = match activation(vs) {
                Some(a) => a,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "operand is not a single value")),
            };
            let op = args[0];
            let (formals, body) = match st.as_symbol(op).and_then(|s| st.procedure_get(s)) {
                Some(p) => p,
                None => return Ok(fail(FailureKind::Primitive, st, *expr, format!("{op} does not name a procedure"))),
            };
            if formals.len() != args.len() - 1 {
                return Ok(fail(
                    FailureKind::Dimension,
                    st,
                    *expr,
                    format!("indirect call with {} arguments to a {}-ary procedure", args.len() - 1, formals.len()),
                ));
            }
            vs.truncate(act);
            vs.push(VItem::Sep);
            th.stack.push((Frame::Eval(body), bind_all(&Env::empty(), &formals, &args[1..])));
            Ok(Stepped(Rule::CallIndirectC))
        }
        Frame::Primitive { expr, name } => {
            let (act, args) = match activation(vs) {
                Some(a) => a,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "actual is not a single value")),
            };
            let spec = match st.primitive_index(*name).and_then(primitives::by_index) {
                Some(p) => p,
                None => {
                    let n = st.symbol_name(*name);
                    return Ok(fail(FailureKind::Primitive, st, *expr, format!("unknown primitive {n}")));
                }
            };
            if spec.in_dim != args.len() {
                return Ok(fail(
                    FailureKind::Dimension,
                    st,
                    *expr,
                    format!("{} takes {} arguments, given {}", spec.name, spec.in_dim, args.len()),
                ));
            }
            let results = match (spec.func)(st, &args) {
                Ok(r) => r,
                Err(PrimError::Abort(e)) => return Err(e),
                Err(err) => return Ok(fail(FailureKind::Primitive, st, *expr, format!("{}: {err}", spec.name))),
            };
            debug_assert_eq!(results.len(), spec.out_dim, "{}", spec.name);
            let vs = &mut th.values;
            vs.truncate(act);
            push_group(vs, &results);
            Ok(Stepped(Rule::PrimitiveC))
        }
        Frame::Bundle { expr, count } => {
            let (act, items) = match activation(vs) {
                Some(a) if a.1.len() == *count => a,
                _ => return Ok(fail(FailureKind::Dimension, st, *expr, "bundle item is not a single value")),
            };
            vs.truncate(act);
            push_group(vs, &items);
            Ok(Stepped(Rule::BundleC))
        }
        Frame::IfIn { expr, values, then, els } => {
            let c = match top_group(vs) {
                Some((_, w)) if w.len() == 1 => w[0],
                _ => return Ok(fail(FailureKind::Dimension, st, *expr, "discriminand is not a single value")),
            };
            vs.truncate(vs.len() - 2);
            let (branch, rule) = if values.contains(&c) { (*then, Rule::IfCIn) } else { (*els, Rule::IfCNotIn) };
            th.stack.push((Frame::Eval(branch), env.clone()));
            Ok(Stepped(rule))
        }
        Frame::Fork { expr, name } => {
            let (act, args) = match activation(vs) {
                Some(a) => a,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "actual is not a single value")),
            };
            let (formals, body) = match st.procedure_get(*name) {
                Some(p) if p.0.len() == args.len() + 1 => p,
                _ => {
                    let n = st.symbol_name(*name);
                    return Ok(fail(
                        FailureKind::Dimension,
                        st,
                        *expr,
                        format!("{n} is not a procedure of {} formals", args.len() + 1),
                    ));
                }
            };
            let t = ThreadId(st.futures.len() as u32);
            let mut all = vec![Word::Future(t)];
            all.extend(&args);
            let thread = Thread::new(body, bind_all(&Env::empty(), &formals, &all));
            st.futures.push(FutureEntry::Running(thread));
            vs.truncate(act);
            push_group(vs, &[Word::Future(t)]);
            Ok(Stepped(Rule::ForkC))
        }
        Frame::Join { expr } => {
            let c = match top_group(vs) {
                Some((_, w)) if w.len() == 1 => w[0],
                _ => return Ok(fail(FailureKind::Dimension, st, *expr, "joined operand is not a single value")),
            };
            let t = match c {
                Word::Future(t) => t,
                other => return Ok(fail(FailureKind::Primitive, st, *expr, format!("join of non-future {other}"))),
            };
            match st.futures.get(t.0 as usize) {
                Some(FutureEntry::Finished(r)) if r.len() == 1 => {
                    let n = vs.len();
                    vs[n - 2] = VItem::Word(r[0]);
                    Ok(Stepped(Rule::JoinC))
                }
                _ => Ok(StepOutcome::Waiting(t)),
            }
        }
        Frame::ClosureHead { expr, actuals } => {
            let (lower, words) = match top_group(vs) {
                Some(g) if !g.1.is_empty() => g,
                _ => return Ok(fail(FailureKind::Dimension, st, *expr, "closure expression left no value")),
            };
            let c = words[0];
            if native_closure_parts(st, c).is_none() {
                return Ok(fail(FailureKind::Primitive, st, *expr, format!("{c} is not a closure")));
            }
            vs.truncate(lower);
            vs.push(VItem::Act);
            push_group(vs, &[c]);
            th.stack.push((Frame::CallClosure { expr: *expr }, Env::empty()));
            for &x in actuals.iter().rev() {
                th.stack.push((Frame::Eval(x), env.clone()));
            }
            Ok(Stepped(Rule::ClosureHeadC))
        }
        Frame::CallClosure { expr } => {
            let (act, args) = match activation(vs) {
                Some(a) => a,
                None => return Ok(fail(FailureKind::Dimension, st, *expr, "actual is not a single value")),
            };
            let (formals, body, captured) = native_closure_parts(st, args[0]).expect("checked at the head");
            if formals.len() != args.len() - 1 {
                return Ok(fail(FailureKind::Dimension, st, *expr, "closure arity mismatch"));
            }
            vs.truncate(act);
            vs.push(VItem::Sep);
            th.stack.push((Frame::Eval(body), bind_all(&captured, &formals, &args[1..])));
            Ok(Stepped(Rule::CallClosureC))
        }
    }
}

/// Who gets the next step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Turn {
    Foreground,
    Background(u32),
}

fn write_trace(st: &mut State, who: Turn, rule: &str) {
    let who = match who {
        Turn::Foreground => "main".to_string(),
        Turn::Background(t) => format!("t{t}"),
    };
    let depth = st.nesting;
    let _ = writeln!(st.io.trace, "{depth} {who} {rule}");
}

use std::io::Write as _;

fn runnable(st: &State) -> Vec<u32> {
    st.futures
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f, FutureEntry::Running(_)))
        .map(|(i, _)| i as u32)
        .collect()
}

fn next_turn(st: &mut State, last: Turn) -> Turn {
    let bg = runnable(st);
    if bg.is_empty() {
        return Turn::Foreground;
    }
    match st.config.scheduler {
        SchedulerMode::RoundRobin => {
            let after = match last {
                Turn::Foreground => None,
                Turn::Background(t) => Some(t),
            };
            match bg.iter().find(|&&t| after.is_none_or(|a| t > a)) {
                Some(&t) => Turn::Background(t),
                None => Turn::Foreground,
            }
        }
        SchedulerMode::Random(seed) => {
            let rng = st.rng.get_or_insert_with(|| rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let k = rng.gen_range(0..=bg.len());
            if k == bg.len() {
                Turn::Foreground
            } else {
                Turn::Background(bg[k])
            }
        }
    }
}

fn burn(st: &mut State) -> Result<(), EvalError> {
    if st.fuel_left == 0 {
        return Err(EvalError::FuelExhausted);
    }
    st.fuel_left -= 1;
    st.steps += 1;
    Ok(())
}

fn step_background(st: &mut State, t: u32) -> Result<bool, EvalError> {
    let slot = t as usize;
    let mut th = match std::mem::replace(&mut st.futures[slot], FutureEntry::Stepping) {
        FutureEntry::Running(th) => th,
        other => {
            st.futures[slot] = other;
            return Ok(false);
        }
    };
    let r = step_sequential(st, &mut th);
    let (entry, progressed, rule) = match r {
        Ok(StepOutcome::Stepped(rule)) => (FutureEntry::Running(th), true, Some(rule.name())),
        Ok(StepOutcome::Final(v)) => (FutureEntry::Finished(v), true, Some("final")),
        Ok(StepOutcome::Failed(f)) => (FutureEntry::Failed(f), true, Some("failed")),
        Ok(StepOutcome::Waiting(_)) => (FutureEntry::Running(th), false, None),
        Err(EvalError::ResourceOverflow(what)) => (
            FutureEntry::Failed(Failure {
                kind: FailureKind::Primitive,
                handle: None,
                detail: format!("resource overflow: {what}"),
            }),
            true,
            Some("failed"),
        ),
        Err(e) => {
            st.futures[slot] = FutureEntry::Running(th);
            return Err(e);
        }
    };
    st.futures[slot] = entry;
    if st.config.trace {
        if let Some(rule) = rule {
            write_trace(st, Turn::Background(t), rule);
        }
    }
    Ok(progressed)
}

/// Run `fg` to completion, interleaving background threads.
pub fn run(st: &mut State, fg: &mut Thread) -> Result<Vec<Word>, EvalError> {
    let mut turn = Turn::Foreground;
    // Turns that made no progress since the last one that did. Once every
    // live thread is in here nothing can ever move again.
    let mut stuck: Vec<Turn> = Vec::new();
    loop {
        burn(st)?;
        let progressed = match turn {
            Turn::Foreground => match step_sequential(st, fg)? {
                StepOutcome::Stepped(rule) => {
                    if st.config.trace {
                        write_trace(st, turn, rule.name());
                    }
                    true
                }
                StepOutcome::Final(v) => return Ok(v),
                StepOutcome::Failed(f) => return Err(EvalError::Failed(f)),
                StepOutcome::Waiting(t) => match st.futures.get(t.0 as usize) {
                    Some(FutureEntry::Running(_)) => false,
                    _ => return Err(EvalError::Deadlock(t)),
                },
            },
            Turn::Background(t) => step_background(st, t)?,
        };
        if progressed {
            stuck.clear();
        } else {
            if !stuck.contains(&turn) {
                stuck.push(turn);
            }
            let live = runnable(st);
            if live.iter().all(|&t| stuck.contains(&Turn::Background(t))) && stuck.contains(&Turn::Foreground) {
                let t = match fg.stack.last() {
                    Some((Frame::Join { .. }, _)) => match fg.values.get(fg.values.len().wrapping_sub(2)) {
                        Some(VItem::Word(Word::Future(t))) => *t,
                        _ => ThreadId(u32::MAX),
                    },
                    _ => ThreadId(u32::MAX),
                };
                return Err(EvalError::Deadlock(t));
            }
        }
        turn = next_turn(st, turn);
    }
}

/// Guard for host recursion through nested evaluation. The outermost entry
/// resets the fuel budget and the scheduler's random stream.
pub(crate) fn enter(st: &mut State) -> Result<(), EvalError> {
    if st.nesting == 0 {
        st.fuel_left = st.config.fuel;
        st.rng = None;
    }
    if st.nesting >= st.config.max_nesting {
        return Err(EvalError::ResourceOverflow("nested evaluation depth".into()));
    }
    st.nesting += 1;
    Ok(())
}

pub(crate) fn leave(st: &mut State) {
    st.nesting -= 1;
}

pub fn eval(st: &mut State, e: Expr) -> Result<Vec<Word>, EvalError> {
    eval_in(st, e, Env::empty())
}

pub fn eval_in(st: &mut State, e: Expr, env: Env) -> Result<Vec<Word>, EvalError> {
    enter(st)?;
    let mut fg = Thread::new(e, env);
    let r = run(st, &mut fg);
    leave(st);
    r
}

fn dimension_failure(detail: String) -> EvalError {
    EvalError::Failed(Failure { kind: FailureKind::Dimension, handle: None, detail })
}

/// Evaluate a procedure's body on the given actuals.
pub fn apply_procedure(st: &mut State, name: Sym, args: &[Word]) -> Result<Vec<Word>, EvalError> {
    let (formals, body) = match st.procedure_get(name) {
        Some(p) => p,
        None => return Err(dimension_failure(format!("undefined procedure {}", st.symbol_name(name)))),
    };
    if formals.len() != args.len() {
        return Err(dimension_failure(format!(
            "{} takes {} arguments, given {}",
            st.symbol_name(name),
            formals.len(),
            args.len()
        )));
    }
    eval_in(st, body, bind_all(&Env::empty(), &formals, args))
}

pub fn apply_primitive(st: &mut State, name: Sym, args: &[Word]) -> Result<Vec<Word>, EvalError> {
    let spec = match st.primitive_index(name).and_then(primitives::by_index) {
        Some(p) => p,
        None => {
            return Err(EvalError::Failed(Failure {
                kind: FailureKind::Primitive,
                handle: None,
                detail: format!("unknown primitive {}", st.symbol_name(name)),
            }))
        }
    };
    if spec.in_dim != args.len() {
        return Err(dimension_failure(format!("{} takes {} arguments, given {}", spec.name, spec.in_dim, args.len())));
    }
    match (spec.func)(st, args) {
        Ok(r) => Ok(r),
        Err(PrimError::Abort(e)) => Err(e),
        Err(err) => Err(EvalError::Failed(Failure {
            kind: FailureKind::Primitive,
            handle: None,
            detail: format!("{}: {err}", spec.name),
        })),
    }
}

/// Whether an expression case is one the core machine handles.
pub fn is_core_case(c: i64) -> bool {
    (case::VARIABLE..=case::JOIN).contains(&c)
}
