//! Dimension analysis: how many values each expression of a static program
//! can produce, as an element of the flat lattice ⊥ ⊑ n ⊑ ⊤.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ast::{self, Expr, ExprView};
use crate::interp::{Frame, Thread, VItem};
use crate::primitives;
use crate::state::{State, Sym};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dimension {
    Bottom,
    Lift(u64),
    Top,
}

use Dimension::{Bottom, Lift, Top};

impl Dimension {
    pub fn leq(self, other: Dimension) -> bool {
        match (self, other) {
            (Bottom, _) | (_, Top) => true,
            (Lift(a), Lift(b)) => a == b,
            _ => false,
        }
    }

    pub fn join(self, other: Dimension) -> Dimension {
        match (self, other) {
            (Bottom, x) | (x, Bottom) => x,
            (Lift(a), Lift(b)) if a == b => Lift(a),
            _ => Top,
        }
    }

    pub fn meet(self, other: Dimension) -> Dimension {
        match (self, other) {
            (Top, x) | (x, Top) => x,
            (Lift(a), Lift(b)) if a == b => Lift(a),
            _ => Bottom,
        }
    }

    pub fn is_consistent(self) -> bool {
        self != Top
    }

    /// At most one value: ⊥ or 1.
    fn singular(self) -> bool {
        self.leq(Lift(1))
    }

    /// Empty bundles are plural; ⊥ is not.
    pub fn is_plural(self) -> bool {
        matches!(self, Lift(n) if n != 1)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bottom => write!(f, "⊥"),
            Lift(n) => write!(f, "{n}"),
            Top => write!(f, "⊤"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("malformed configuration: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ast(#[from] ast::AstError),
}

/// A procedure table snapshot plus a main expression.
#[derive(Clone, Debug)]
pub struct StaticProgram {
    pub procedures: BTreeMap<Sym, (Vec<Sym>, Expr)>,
    pub main: Expr,
}

impl StaticProgram {
    /// Snapshot every procedure currently defined.
    pub fn from_state(st: &State, main: Expr) -> StaticProgram {
        let procedures = st.procedure_names().into_iter().filter_map(|p| st.procedure_get(p).map(|d| (p, d))).collect();
        StaticProgram { procedures, main }
    }
}

/// Out-dimensions of procedures, used to give a dimension to any
/// expression in the program's context.
#[derive(Clone, Debug)]
pub struct Analyzer<'p> {
    program: &'p StaticProgram,
    pub out: HashMap<Sym, Dimension>,
}

#[derive(Clone, Debug)]
pub struct DimensionReport {
    /// Dimension of every subexpression of the main expression and of the
    /// procedure bodies, by handle.
    pub handles: BTreeMap<i64, Dimension>,
    /// name → (in-dimension, out-dimension)
    pub procedures: BTreeMap<String, (usize, Dimension)>,
    pub main: Dimension,
    pub well_dimensioned: bool,
}

impl<'p> Analyzer<'p> {
    /// The shipped analysis: Kleene iteration from ⊥, the minimum fixpoint.
    pub fn new(st: &State, program: &'p StaticProgram) -> Analyzer<'p> {
        Self::iterate(st, program, Bottom)
    }

    /// Iteration seeded with ⊤ everywhere; only for comparison.
    pub fn from_top(st: &State, program: &'p StaticProgram) -> Analyzer<'p> {
        Self::iterate(st, program, Top)
    }

    fn iterate(st: &State, program: &'p StaticProgram, seed: Dimension) -> Analyzer<'p> {
        let out = program.procedures.keys().map(|&p| (p, seed)).collect();
        let mut a = Analyzer { program, out };
        loop {
            let mut changed = false;
            for (&p, &(_, body)) in &program.procedures {
                let d = a.dim(st, body);
                if a.out[&p] != d {
                    a.out.insert(p, d);
                    changed = true;
                }
            }
            if !changed {
                return a;
            }
        }
    }

    fn in_dim(&self, f: Sym) -> Option<usize> {
        self.program.procedures.get(&f).map(|(formals, _)| formals.len())
    }

    /// `#(e)`: the total extension, ⊤ wherever no rule applies.
    pub fn dim(&self, st: &State, e: Expr) -> Dimension {
        self.dim_with(st, e, &mut |_, _| ())
    }

    fn dim_with(&self, st: &State, e: Expr, record: &mut dyn FnMut(Expr, Dimension)) -> Dimension {
        let d = self.dim_inner(st, e, record);
        record(e, d);
        d
    }

    fn dim_inner(&self, st: &State, e: Expr, record: &mut dyn FnMut(Expr, Dimension)) -> Dimension {
        let v = match ast::view(&st.store, e) {
            Ok(v) => v,
            Err(_) => return Top,
        };
        // Every child is visited, so the report covers all handles.
        let all_singular = |xs: &[Expr], record: &mut dyn FnMut(Expr, Dimension)| -> bool {
            xs.iter().map(|&x| self.dim_with(st, x, record)).filter(|d| !d.singular()).count() == 0
        };
        match v {
            ExprView::Variable(_) | ExprView::Value(_) => Lift(1),
            ExprView::Bundle(xs) => {
                if all_singular(&xs, record) {
                    Lift(xs.len() as u64)
                } else {
                    Top
                }
            }
            ExprView::Let(vars, b, body) => {
                let d1 = self.dim_with(st, b, record);
                let d2 = self.dim_with(st, body, record);
                let fits = match d1 {
                    Bottom => true,
                    Lift(m) => m as usize >= vars.len(),
                    Top => false,
                };
                if fits && d2.is_consistent() {
                    d2
                } else {
                    Top
                }
            }
            ExprView::Primitive(p, xs) => {
                let ok = all_singular(&xs, record);
                match st.primitive_index(p).and_then(primitives::by_index) {
                    Some(spec) if ok && spec.in_dim == xs.len() => Lift(spec.out_dim as u64),
                    _ => Top,
                }
            }
            ExprView::Call(f, xs) => {
                let ok = all_singular(&xs, record);
                match (self.in_dim(f), self.out.get(&f)) {
                    (Some(n), Some(&d)) if ok && n == xs.len() && d.is_consistent() => d,
                    _ => Top,
                }
            }
            ExprView::IfIn(d, _, t, el) => {
                let d1 = self.dim_with(st, d, record);
                let d2 = self.dim_with(st, t, record);
                let d3 = self.dim_with(st, el, record);
                let j = d2.join(d3);
                if d1.singular() && j.is_consistent() {
                    j
                } else {
                    Top
                }
            }
            ExprView::Fork(f, xs) => {
                let ok = all_singular(&xs, record);
                match (self.in_dim(f), self.out.get(&f)) {
                    (Some(n), Some(&d)) if ok && n == xs.len() + 1 && d.singular() => Lift(1),
                    _ => Top,
                }
            }
            ExprView::Join(x) => {
                if self.dim_with(st, x, record).singular() {
                    Lift(1)
                } else {
                    Top
                }
            }
            ExprView::CallIndirect(p, xs) => {
                self.dim_with(st, p, record);
                all_singular(&xs, record);
                Top
            }
            ExprView::Lambda(_, body) => {
                self.dim_with(st, body, record);
                Top
            }
            ExprView::CallClosure(c, xs) => {
                self.dim_with(st, c, record);
                all_singular(&xs, record);
                Top
            }
        }
    }

    pub fn report(&self, st: &State) -> DimensionReport {
        let mut handles = BTreeMap::new();
        let mut record = |e: Expr, d: Dimension| {
            if let Ok(h) = ast::handle(&st.store, e) {
                handles.insert(h, d);
            }
        };
        for &(_, body) in self.program.procedures.values() {
            self.dim_with(st, body, &mut record);
        }
        let main = self.dim_with(st, self.program.main, &mut record);
        let procedures: BTreeMap<String, (usize, Dimension)> = self
            .program
            .procedures
            .iter()
            .map(|(&p, (formals, _))| (st.symbol_name(p), (formals.len(), self.out[&p])))
            .collect();
        let well_dimensioned = main.is_consistent() && procedures.values().all(|&(_, d)| d.is_consistent());
        DimensionReport { handles, procedures, main, well_dimensioned }
    }
}

pub fn infer(st: &State, p: &StaticProgram) -> DimensionReport {
    Analyzer::new(st, p).report(st)
}

pub fn well_dimensioned(st: &State, p: &StaticProgram) -> bool {
    infer(st, p).well_dimensioned
}

impl DimensionReport {
    /// Human-readable: one line per procedure, then the main expression and
    /// the per-handle table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, (n, d)) in &self.procedures {
            s.push_str(&format!("{name} :# {n} -> {d}\n"));
        }
        s.push_str(&format!("main :# {}\n", self.main));
        s.push_str(&format!("well-dimensioned: {}\n", if self.well_dimensioned { "yes" } else { "no" }));
        for (h, d) in &self.handles {
            s.push_str(&format!("  #{h} {d}\n"));
        }
        s
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (name, (n, d)) in &self.procedures {
            s.push_str(&format!("procedure.{name}.in={n}\nprocedure.{name}.out={}\n", kv_dim(*d)));
        }
        s.push_str(&format!("main={}\nwell_dimensioned={}\n", kv_dim(self.main), self.well_dimensioned));
        for (h, d) in &self.handles {
            s.push_str(&format!("handle.{h}={}\n", kv_dim(*d)));
        }
        s
    }
}

fn kv_dim(d: Dimension) -> String {
    match d {
        Bottom => "bottom".into(),
        Lift(n) => n.to_string(),
        Top => "top".into(),
    }
}

// Resynthesization.

/// The value stack as bundle expressions, topmost group first. Activation
/// separators are dropped.
pub fn value_expressions(st: &mut State, values: &[VItem]) -> Result<Vec<Expr>, AnalysisError> {
    let items: Vec<VItem> = values.iter().copied().filter(|v| *v != VItem::Act).collect();
    if items.first() != Some(&VItem::Sep) || items.last() != Some(&VItem::Sep) {
        return Err(AnalysisError::Malformed("value stack not delimited by separators".into()));
    }
    let mut groups = Vec::new();
    let mut current = Vec::new();
    for item in &items[1..] {
        match item {
            VItem::Word(w) => current.push(*w),
            VItem::Sep => groups.push(std::mem::take(&mut current)),
            VItem::Act => unreachable!(),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups.into_iter().rev() {
        let items = g.into_iter().map(|w| st.make_value(w)).collect();
        out.push(st.make_bundle(items));
    }
    Ok(out)
}

fn take(list: &mut Vec<Expr>, n: usize) -> Result<Vec<Expr>, AnalysisError> {
    if list.len() < n {
        return Err(AnalysisError::Malformed(format!("a frame needs {n} expressions, {} available", list.len())));
    }
    // The list is topmost-first: the first n, reversed, are a₁ … aₙ.
    let mut xs: Vec<Expr> = list.drain(..n).collect();
    xs.reverse();
    Ok(xs)
}

/// Rebuild the expression list a configuration stands for; reachable
/// configurations give exactly one expression.
pub fn resynthesize_list(st: &mut State, th: &Thread) -> Result<Vec<Expr>, AnalysisError> {
    let mut list = value_expressions(st, &th.values)?;
    for (frame, _) in th.stack.iter().rev() {
        let rebuilt = match frame {
            Frame::Eval(e) => *e,
            Frame::Let { vars, body, .. } => {
                let a = take(&mut list, 1)?[0];
                st.make_let(vars.clone(), a, *body)
            }
            Frame::Call { expr, name } => {
                let n = ast::view(&st.store, *expr)?.children().len();
                let xs = take(&mut list, n)?;
                st.make_call(*name, xs)
            }
            Frame::Primitive { expr, name } => {
                let n = ast::view(&st.store, *expr)?.children().len();
                let xs = take(&mut list, n)?;
                st.make_primitive(*name, xs)
            }
            Frame::Fork { expr, name } => {
                let n = ast::view(&st.store, *expr)?.children().len();
                let xs = take(&mut list, n)?;
                st.make_fork(*name, xs)
            }
            Frame::Bundle { count, .. } => {
                let xs = take(&mut list, *count)?;
                st.make_bundle(xs)
            }
            Frame::IfIn { values, then, els, .. } => {
                let a = take(&mut list, 1)?[0];
                st.make_if_in(a, values.clone(), *then, *els)
            }
            Frame::Join { .. } => {
                let a = take(&mut list, 1)?[0];
                st.make_join(a)
            }
            Frame::CallIndirect { expr } => {
                let n = ast::view(&st.store, *expr)?.children().len();
                let mut xs = take(&mut list, n)?;
                let p = xs.remove(0);
                st.make_call_indirect(p, xs)
            }
            Frame::ClosureHead { .. } | Frame::CallClosure { .. } => {
                return Err(AnalysisError::Malformed("closure frames have no resynthesization".into()))
            }
        };
        list.insert(0, rebuilt);
    }
    Ok(list)
}

pub fn resynthesize(st: &mut State, th: &Thread) -> Result<Expr, AnalysisError> {
    let list = resynthesize_list(st, th)?;
    match list.as_slice() {
        [e] => Ok(*e),
        _ => Err(AnalysisError::Malformed(format!("resynthesized into {} expressions", list.len()))),
    }
}
