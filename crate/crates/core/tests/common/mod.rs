//! Generators and checkers shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use epsilon_core::analysis::StaticProgram;
use epsilon_core::interp::VItem;
use epsilon_core::session::{reachable_program, Session};
use epsilon_core::sexpr;
use epsilon_core::state::Sym;
use epsilon_core::store::{BufferId, Store};
use epsilon_core::{Config, Word};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config_with_fuel(fuel: u64) -> Config {
    Config { fuel, ..Config::default() }
}

// Static programs.

#[derive(Clone, Debug)]
struct Sig {
    name: String,
    arity: usize,
    out: usize,
}

/// Knobs for the static program generator.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    /// Chance that a node ignores the dimension it was asked for.
    pub noise: f64,
    /// Allow forks and joins.
    pub futures: bool,
    /// Allow unbound variables, undefined procedures, indirect calls and
    /// joins of non-futures.
    pub wild: bool,
    pub max_depth: u32,
}

impl Shape {
    pub const TAME: Shape = Shape { noise: 0.06, futures: true, wild: false, max_depth: 4 };
    pub const WILD: Shape = Shape { noise: 0.15, futures: true, wild: true, max_depth: 4 };
}

/// Source text of a generated program: procedure definitions, then the
/// main expression.
#[derive(Clone, Debug)]
pub struct StaticSource {
    pub defs: Vec<String>,
    pub names: Vec<String>,
    pub main: String,
}

impl StaticSource {
    pub fn text(&self) -> String {
        let mut s = self.defs.join("\n");
        s.push('\n');
        s.push_str(&self.main);
        s
    }
}

struct StaticGen<'r> {
    rng: &'r mut ChaCha8Rng,
    shape: Shape,
    sigs: Vec<Sig>,
    current: usize,
    fresh: usize,
}

impl StaticGen<'_> {
    fn flip(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn var(&mut self) -> String {
        self.fresh += 1;
        format!("v{}", self.fresh)
    }

    fn literal(&mut self) -> String {
        self.rng.gen_range(-3..12).to_string()
    }

    fn leaf(&mut self, want: usize, scope: &[String]) -> String {
        if want == 1 {
            if self.shape.wild && self.flip(0.03) {
                return "unbound-variable".into();
            }
            return match scope.choose(self.rng) {
                Some(v) if self.flip(0.6) => v.clone(),
                _ => self.literal(),
            };
        }
        let items: Vec<String> = (0..want).map(|_| self.literal()).collect();
        format!("(e0:bundle {})", items.join(" "))
    }

    fn many(&mut self, depth: u32, n: usize, scope: &[String]) -> String {
        let xs: Vec<String> = (0..n).map(|_| self.expr(depth, 1, scope)).collect();
        xs.join(" ")
    }

    /// Procedures this body may call: earlier ones, rarely any of them.
    fn callee(&mut self, out: usize) -> Option<Sig> {
        let anything = self.flip(0.03);
        let pool: Vec<Sig> =
            self.sigs.iter().enumerate().filter(|(i, s)| s.out == out && (anything || *i < self.current)).map(|(_, s)| s.clone()).collect();
        pool.choose(self.rng).cloned()
    }

    fn arity_noise(&mut self, n: usize) -> usize {
        if self.flip(self.shape.noise) {
            if n > 0 && self.flip(0.5) {
                n - 1
            } else {
                n + 1
            }
        } else {
            n
        }
    }

    fn expr(&mut self, depth: u32, want: usize, scope: &[String]) -> String {
        let want = if self.flip(self.shape.noise) { self.rng.gen_range(0..4) } else { want };
        if depth == 0 {
            return self.leaf(want, scope);
        }
        let d = depth - 1;
        match self.rng.gen_range(0..12) {
            0 | 1 => format!("(e0:bundle {})", self.many(d, want, scope)),
            2 | 3 => {
                let m = self.rng.gen_range(0..3);
                let vars: Vec<String> = (0..m).map(|_| self.var()).collect();
                let bound = self.expr(d, m, scope);
                let mut inner = scope.to_vec();
                inner.extend(vars.iter().cloned());
                let body = self.expr(d, want, &inner);
                format!("(e0:let ({}) {bound} {body})", vars.join(" "))
            }
            4 => {
                let discr = self.expr(d, 1, scope);
                let k = self.rng.gen_range(1..4);
                let vals: Vec<String> = (0..k).map(|_| self.rng.gen_range(0..4).to_string()).collect();
                let then = self.expr(d, want, scope);
                let els = self.expr(d, want, scope);
                format!("(e0:if-in {discr} ({}) {then} {els})", vals.join(" "))
            }
            5 | 6 => match self.callee(want) {
                Some(sig) => {
                    let n = self.arity_noise(sig.arity);
                    format!("(e0:call {} {})", sig.name, self.many(d, n, scope))
                }
                None => format!("(e0:bundle {})", self.many(d, want, scope)),
            },
            7 | 8 => match want {
                1 => {
                    let op = ["fixnum:+", "fixnum:-", "fixnum:*", "fixnum:<", "fixnum:=", "fixnum:/"].choose(self.rng).unwrap();
                    let n = self.arity_noise(2);
                    format!("(e0:primitive {op} {})", self.many(d, n, scope))
                }
                2 => format!("(e0:primitive fixnum:quotient-remainder {})", self.many(d, 2, scope)),
                _ => format!("(e0:bundle {})", self.many(d, want, scope)),
            },
            9 if want == 1 && self.shape.futures => {
                let pool: Vec<Sig> = self
                    .sigs
                    .iter()
                    .enumerate()
                    .filter(|(i, s)| s.arity >= 1 && s.out == 1 && *i < self.current)
                    .map(|(_, s)| s.clone())
                    .collect();
                match pool.choose(self.rng).cloned() {
                    Some(sig) => {
                        let n = self.arity_noise(sig.arity - 1);
                        format!("(e0:join (e0:fork {} {}))", sig.name, self.many(d, n, scope))
                    }
                    None => self.leaf(want, scope),
                }
            }
            10 if self.shape.wild => match self.rng.gen_range(0..4) {
                0 => format!("(e0:call undefined-procedure {})", self.many(d, 1, scope)),
                1 => format!("(e0:join {})", self.expr(d, 1, scope)),
                _ => match self.sigs.choose(self.rng).cloned() {
                    Some(sig) => {
                        let n = self.arity_noise(sig.arity);
                        format!("(e0:call-indirect (e0:value {}) {})", sig.name, self.many(d, n, scope))
                    }
                    None => self.leaf(want, scope),
                },
            },
            _ => self.leaf(want, scope),
        }
    }
}

/// A random static program: up to five procedures, each calling only
/// earlier ones except rarely, and a main expression.
pub fn static_source(rng: &mut ChaCha8Rng, shape: Shape) -> StaticSource {
    let n = rng.gen_range(0..6);
    let sigs: Vec<Sig> = (0..n)
        .map(|i| Sig {
            name: format!("p{i}"),
            arity: rng.gen_range(0..4),
            out: *[0usize, 1, 1, 1, 2, 3].choose(rng).unwrap(),
        })
        .collect();
    let mut g = StaticGen { rng, shape, sigs: sigs.clone(), current: 0, fresh: 0 };
    let mut defs = Vec::new();
    for (i, sig) in sigs.iter().enumerate() {
        g.current = i;
        let formals: Vec<String> = (0..sig.arity).map(|k| format!("a{k}")).collect();
        let depth = g.rng.gen_range(1..=shape.max_depth);
        let body = g.expr(depth, sig.out, &formals);
        defs.push(format!("(e1:define ({} {}) {body})", sig.name, formals.join(" ")));
    }
    g.current = n;
    let depth = g.rng.gen_range(1..=shape.max_depth);
    let want = *[0usize, 1, 1, 2].choose(g.rng).unwrap();
    let main = g.expr(depth, want, &[]);
    StaticSource { defs, names: sigs.into_iter().map(|s| s.name).collect(), main }
}

/// Load a generated program into a fresh prelude-less session.
pub fn load_static(src: &StaticSource, config: Config) -> (Session, StaticProgram) {
    let mut s = Session::new(config, false).expect("fresh session");
    for d in &src.defs {
        s.run_source(d).unwrap_or_else(|e| panic!("cannot define {d}: {e}"));
    }
    let m = sexpr::read_one(&mut s.st, &src.main).expect("generated text parses");
    let main = s.expand(m).unwrap_or_else(|e| panic!("cannot expand {}: {e}", src.main));
    let roots: Vec<Sym> = src.names.iter().map(|n| s.st.intern(n)).collect();
    let program = reachable_program(&s.st, &roots, main);
    (s, program)
}

/// The grammar every value stack keeps between steps: ▹ on top, and no
/// value directly above a ‖ (activations opened back to back stack their
/// ‖ separators). The bottom is ▹, or ‖ while an activation opened on the
/// initial stack is pending.
pub fn value_stack_ok(values: &[VItem]) -> bool {
    match (values.first(), values.last()) {
        (Some(VItem::Sep | VItem::Act), Some(VItem::Sep)) => {}
        _ => return false,
    }
    values.windows(2).all(|w| !matches!(w, [VItem::Act, VItem::Word(_)]))
}

// Higher-order programs.

#[derive(Clone, Debug, PartialEq, Eq)]
enum Ty {
    Val,
    Fn(usize, Box<Ty>),
}

struct HoGen<'r> {
    rng: &'r mut ChaCha8Rng,
    noise: f64,
    fresh: usize,
}

impl HoGen<'_> {
    fn name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn fn_type(&mut self, nesting: u32) -> Ty {
        let a = self.rng.gen_range(0..3);
        if nesting > 0 && self.rng.gen_bool(0.3) {
            Ty::Fn(a, Box::new(self.fn_type(nesting - 1)))
        } else {
            Ty::Fn(a, Box::new(Ty::Val))
        }
    }

    fn args(&mut self, d: u32, n: usize, env: &[(String, Ty)], lambdas: u32) -> String {
        let n = if self.rng.gen_bool(self.noise) { n + 1 } else { n };
        let xs: Vec<String> = (0..n).map(|_| self.gen(d, &Ty::Val, env, lambdas)).collect();
        xs.join(" ")
    }

    fn leaf_val(&mut self, env: &[(String, Ty)]) -> String {
        let vals: Vec<&String> = env.iter().filter(|(_, t)| *t == Ty::Val).map(|(n, _)| n).collect();
        if self.rng.gen_bool(0.02) {
            return "unbound-variable".into();
        }
        match vals.choose(self.rng) {
            Some(v) if self.rng.gen_bool(0.7) => (*v).clone(),
            _ => self.rng.gen_range(-2..10).to_string(),
        }
    }

    fn gen(&mut self, depth: u32, t: &Ty, env: &[(String, Ty)], lambdas: u32) -> String {
        let d = depth.saturating_sub(1);
        match t {
            Ty::Val => {
                if depth == 0 {
                    return self.leaf_val(env);
                }
                match self.rng.gen_range(0..9) {
                    0 | 1 => {
                        let op = ["fixnum:+", "fixnum:-", "fixnum:*", "fixnum:/"].choose(self.rng).unwrap();
                        let a = self.gen(d, &Ty::Val, env, lambdas);
                        let b = self.gen(d, &Ty::Val, env, lambdas);
                        format!("(e0:primitive {op} {a} {b})")
                    }
                    2 | 3 => {
                        let ft = self.fn_type(0);
                        let Ty::Fn(a, _) = ft else { unreachable!() };
                        let c = self.gen(d, &ft, env, lambdas);
                        format!("(e1:call-closure {c} {})", self.args(d, a, env, lambdas))
                    }
                    4 => {
                        let x = self.name("x");
                        let bound = self.gen(d, &Ty::Val, env, lambdas);
                        let mut inner = env.to_vec();
                        inner.push((x.clone(), Ty::Val));
                        format!("(e0:let ({x}) {bound} {})", self.gen(d, &Ty::Val, &inner, lambdas))
                    }
                    5 => {
                        let k = self.name("k");
                        let ft = self.fn_type(1);
                        let bound = self.gen(d, &ft, env, lambdas);
                        let mut inner = env.to_vec();
                        inner.push((k.clone(), ft));
                        format!("(e0:let ({k}) {bound} {})", self.gen(d, &Ty::Val, &inner, lambdas))
                    }
                    6 => {
                        let discr = self.gen(d, &Ty::Val, env, lambdas);
                        let a = self.gen(d, &Ty::Val, env, lambdas);
                        let b = self.gen(d, &Ty::Val, env, lambdas);
                        format!("(e0:if-in {discr} (0 1) {a} {b})")
                    }
                    7 if self.rng.gen_bool(0.15) => {
                        // Calling something that is not a closure.
                        format!("(e1:call-closure {} {})", self.leaf_val(env), self.args(d, 1, env, lambdas))
                    }
                    _ => self.leaf_val(env),
                }
            }
            Ty::Fn(a, r) => {
                let vars: Vec<&String> = env.iter().filter(|(_, u)| u == t).map(|(n, _)| n).collect();
                let choice = self.rng.gen_range(0..6);
                if (choice < 2 || depth == 0 || lambdas >= 3) && !vars.is_empty() {
                    return (*vars.choose(self.rng).unwrap()).clone();
                }
                if lambdas >= 3 {
                    return "(e0:value 0)".into();
                }
                match choice {
                    2 if depth > 1 => {
                        let b = self.rng.gen_range(0..2);
                        let maker = Ty::Fn(b, Box::new(t.clone()));
                        let c = self.gen(d, &maker, env, lambdas);
                        format!("(e1:call-closure {c} {})", self.args(d, b, env, lambdas))
                    }
                    3 if depth > 1 => {
                        let discr = self.gen(d, &Ty::Val, env, lambdas);
                        let x = self.gen(d, t, env, lambdas);
                        let y = self.gen(d, t, env, lambdas);
                        format!("(e0:if-in {discr} (0) {x} {y})")
                    }
                    _ => {
                        let params: Vec<String> = (0..*a).map(|_| self.name("p")).collect();
                        let mut inner = env.to_vec();
                        inner.extend(params.iter().map(|p| (p.clone(), Ty::Val)));
                        let body = self.gen(d, r, &inner, lambdas + 1);
                        format!("(e1:lambda ({}) {body})", params.join(" "))
                    }
                }
            }
        }
    }
}

/// A closed higher-order expression with lambdas nested at most three deep.
pub fn higher_order_source(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let mut g = HoGen { rng, noise: 0.08, fresh: 0 };
    if g.rng.gen_bool(0.2) {
        let a = g.gen(depth, &Ty::Val, &[], 0);
        let b = g.gen(depth, &Ty::Val, &[], 0);
        format!("(e0:bundle {a} {b})")
    } else {
        g.gen(depth, &Ty::Val, &[], 0)
    }
}

// Random store graphs.

/// `n` buffers of up to five cells, each cell an unboxed 32-bit value or a
/// reference to any of the buffers, so sharing and cycles are common.
pub fn random_graph(store: &mut Store, rng: &mut ChaCha8Rng, n: usize) -> Word {
    let ids: Vec<BufferId> = (0..n).map(|_| store.alloc(vec![Word::Unboxed(0); rng.gen_range(0..6)])).collect();
    for &b in &ids {
        for i in 0..store.len(b).unwrap() {
            let w = if rng.gen_bool(0.5) {
                Word::Unboxed(rng.gen_range(i32::MIN..=i32::MAX) as i64)
            } else {
                Word::Boxed(*ids.choose(rng).unwrap())
            };
            store.set(b, i as i64, w).unwrap();
        }
    }
    if n == 0 || rng.gen_bool(0.02) {
        Word::Unboxed(rng.gen_range(-1000..1000))
    } else {
        Word::Boxed(ids[0])
    }
}

/// Parallel traversal with a bijection between visited buffers: kinds,
/// lengths and unboxed payloads agree, and sharing is neither created nor
/// destroyed.
pub fn isomorphic(a: &Store, wa: Word, b: &Store, wb: Word) -> bool {
    let mut fwd: HashMap<BufferId, BufferId> = HashMap::new();
    let mut bwd: HashMap<BufferId, BufferId> = HashMap::new();
    let mut todo = VecDeque::from([(wa, wb)]);
    while let Some(pair) = todo.pop_front() {
        match pair {
            (Word::Unboxed(x), Word::Unboxed(y)) if x == y => {}
            (Word::Boxed(x), Word::Boxed(y)) => match (fwd.get(&x), bwd.get(&y)) {
                (Some(&y2), Some(&x2)) if y2 == y && x2 == x => {}
                (None, None) => {
                    fwd.insert(x, y);
                    bwd.insert(y, x);
                    let (Ok(cx), Ok(cy)) = (a.cells(x), b.cells(y)) else { return false };
                    if cx.len() != cy.len() {
                        return false;
                    }
                    todo.extend(cx.iter().copied().zip(cy.iter().copied()));
                }
                _ => return false,
            },
            _ => return false,
        }
    }
    true
}

pub fn fixnums(ws: &[Word]) -> Vec<i64> {
    ws.iter().map(|w| w.as_fixnum().expect("a fixnum result")).collect()
}
