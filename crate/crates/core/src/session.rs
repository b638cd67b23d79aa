//! The toplevel: prelude loading, the read → macroexpand → transform → eval
//! pipeline, the REPL loop and the analysis driver.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::rc::Rc;

use crate::analysis::{self, DimensionReport, StaticProgram};
use crate::ast::{self, Expr, ExprView};
use crate::expand::{self, ExpandError};
use crate::image;
use crate::interp::{self, EvalError, FailureKind};
use crate::sexpr::{self, ParseError};
use crate::state::{Config, Io, State, Sym};
use crate::store::Word;

pub const PRELUDE: &str = include_str!("prelude.e");
pub const PRELUDE_TESTS: &str = include_str!("prelude_tests.e");

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionError {
    Parse(ParseError),
    Expand(ExpandError),
    Eval(EvalError),
}

impl SessionError {
    /// The failure kind behind the error, looking through expansion.
    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self {
            SessionError::Eval(e) => e.failure_kind(),
            SessionError::Expand(
                ExpandError::Macro { error, .. } | ExpandError::Transform { error, .. } | ExpandError::Expander { error, .. },
            ) => error.failure_kind(),
            _ => None,
        }
    }
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionError::Parse(e) => write!(f, "parse error: {e}"),
            SessionError::Expand(e) => write!(f, "{e}"),
            SessionError::Eval(EvalError::Failed(x)) => match x.handle {
                Some(h) => write!(f, "failure: {} (handle {h}): {}", x.kind, x.detail),
                None => write!(f, "failure: {}: {}", x.kind, x.detail),
            },
            SessionError::Eval(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for SessionError {}

impl From<ParseError> for SessionError {
    fn from(e: ParseError) -> Self {
        SessionError::Parse(e)
    }
}

impl From<ExpandError> for SessionError {
    fn from(e: ExpandError) -> Self {
        SessionError::Expand(e)
    }
}

impl From<EvalError> for SessionError {
    fn from(e: EvalError) -> Self {
        SessionError::Eval(e)
    }
}

/// A `Write` whose bytes can be read back, for capturing output and traces.
#[derive(Clone, Default)]
pub struct SharedBuffer(pub Rc<RefCell<Vec<u8>>>);

impl SharedBuffer {
    pub fn contents(&self) -> Vec<u8> {
        self.0.borrow().clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.0.borrow()).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.borrow_mut().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub struct Session {
    pub st: State,
    pub prelude_loaded: bool,
    pub color: bool,
}

impl Session {
    /// A fresh state, with the prelude unless `with_prelude` is false.
    pub fn new(config: Config, with_prelude: bool) -> Result<Session, SessionError> {
        let mut st = State::new();
        st.config = config;
        let mut s = Session { st, prelude_loaded: false, color: false };
        if with_prelude {
            s.load_prelude()?;
        }
        Ok(s)
    }

    pub fn from_state(st: State) -> Session {
        Session { st, prelude_loaded: true, color: false }
    }

    pub fn load_prelude(&mut self) -> Result<(), SessionError> {
        if self.prelude_loaded {
            return Ok(());
        }
        self.run_source(PRELUDE)?;
        self.prelude_loaded = true;
        Ok(())
    }

    /// Expand and transform one s-expression.
    pub fn expand(&mut self, s: Word) -> Result<Expr, SessionError> {
        Ok(expand::expand_toplevel(&mut self.st, s)?)
    }

    pub fn eval_sexpr(&mut self, s: Word) -> Result<Vec<Word>, SessionError> {
        let e = self.expand(s)?;
        Ok(interp::eval(&mut self.st, e)?)
    }

    /// Evaluate every form; the results of the last one.
    pub fn run_source(&mut self, text: &str) -> Result<Vec<Word>, SessionError> {
        let mut src = sexpr::StrSource::new(text);
        let mut last = Vec::new();
        while let Some(s) = sexpr::read(&mut self.st, &mut src)? {
            last = self.eval_sexpr(s)?;
        }
        Ok(last)
    }

    /// Results on one line, each word as a memory dump.
    pub fn format_results(&self, ws: &[Word]) -> String {
        ws.iter().map(|&w| image::dump_text(&self.st.store, w, self.color)).collect::<Vec<_>>().join(" ")
    }

    /// Read, evaluate and print until the input ends.
    pub fn repl(&mut self) -> i32 {
        loop {
            let _ = write!(self.st.io.out, "e1> ");
            let _ = self.st.io.out.flush();
            let mut input = std::mem::take(&mut self.st.io.input);
            let r = sexpr::read(&mut self.st, &mut input);
            if r.is_err() {
                input.skip_line();
            }
            self.st.io.input = input;
            let line = match r {
                Ok(None) => {
                    let _ = writeln!(self.st.io.out);
                    return 0;
                }
                Err(e) => SessionError::from(e).to_string(),
                Ok(Some(s)) => match self.eval_sexpr(s) {
                    Ok(ws) if ws.is_empty() => continue,
                    Ok(ws) => self.format_results(&ws),
                    Err(e) => e.to_string(),
                },
            };
            let _ = writeln!(self.st.io.out, "{line}");
        }
    }

    /// Evaluate a file's forms except the last non-definition one, which
    /// is expanded and returned as the main expression (an empty bundle if
    /// there is none).
    pub fn load_with_main(&mut self, text: &str) -> Result<Expr, SessionError> {
        let forms = sexpr::read_all(&mut self.st, text)?;
        let main_index = forms.iter().rposition(|&s| !is_definition(&self.st, s));
        let mut main = None;
        for (i, &s) in forms.iter().enumerate() {
            if Some(i) == main_index {
                main = Some(self.expand(s)?);
            } else {
                self.eval_sexpr(s)?;
            }
        }
        Ok(match main {
            Some(m) => m,
            None => self.st.make_bundle(vec![]),
        })
    }

    /// Analyze a file: the program holds the procedures the file defines
    /// and everything they or the main expression reach.
    pub fn analyze_source(&mut self, text: &str) -> Result<(StaticProgram, DimensionReport), SessionError> {
        let before: BTreeSet<Sym> = self.st.procedure_names().into_iter().collect();
        let main = self.load_with_main(text)?;
        let defined: Vec<Sym> = self.st.procedure_names().into_iter().filter(|p| !before.contains(p)).collect();
        let program = reachable_program(&self.st, &defined, main);
        let report = analysis::infer(&self.st, &program);
        Ok((program, report))
    }
}

fn is_definition(st: &State, s: Word) -> bool {
    let Some(head) = sexpr::car(&st.store, s).ok().and_then(|h| sexpr::as_symbol(st, h)) else { return false };
    matches!(st.symbol_name(head).as_str(), "e1:define" | "e1:define-macro" | "e1:trivial-define-macro")
}

/// The roots plus every procedure they call or fork, transitively.
pub fn reachable_program(st: &State, roots: &[Sym], main: Expr) -> StaticProgram {
    let mut seen: BTreeSet<Sym> = BTreeSet::new();
    let mut todo: Vec<Expr> = vec![main];
    let mut names: Vec<Sym> = roots.to_vec();
    let mut program = StaticProgram { procedures: Default::default(), main };
    loop {
        for n in names.drain(..) {
            if seen.insert(n) {
                if let Some((formals, body)) = st.procedure_get(n) {
                    program.procedures.insert(n, (formals, body));
                    todo.push(body);
                }
            }
        }
        let Some(e) = todo.pop() else { break };
        if let Ok(v) = ast::view(&st.store, e) {
            if let ExprView::Call(f, _) | ExprView::Fork(f, _) = &v {
                names.push(*f);
            }
            todo.extend(v.children());
        }
    }
    program
}

/// Evaluate the prelude's own test forms: a form with no results is
/// setup, a form with one result must produce a true value. Returns the
/// number of checks and the text of every failing one.
pub fn run_prelude_tests(s: &mut Session) -> Result<(usize, Vec<String>), SessionError> {
    let forms = sexpr::read_all(&mut s.st, PRELUDE_TESTS)?;
    let mut checks = 0;
    let mut failed = Vec::new();
    for f in forms {
        let text = sexpr::print(&s.st, f);
        match s.eval_sexpr(f) {
            Ok(ws) if ws.is_empty() => {}
            Ok(ws) => {
                checks += 1;
                if ws != [crate::store::TRUE] {
                    failed.push(format!("{text} => {}", s.format_results(&ws)));
                }
            }
            Err(e) => {
                checks += 1;
                failed.push(format!("{text} => {e}"));
            }
        }
    }
    Ok((checks, failed))
}

/// A session whose output and trace are captured.
pub fn captured(config: Config, with_prelude: bool, input: &str) -> Result<(Session, SharedBuffer, SharedBuffer), SessionError> {
    let mut s = Session::new(config, false)?;
    let (out, trace) = (SharedBuffer::default(), SharedBuffer::default());
    s.st.io = Io::with(Box::new(out.clone()), Box::new(std::io::Cursor::new(input.as_bytes().to_vec())));
    s.st.io.trace = Box::new(trace.clone());
    if with_prelude {
        s.load_prelude()?;
    }
    Ok((s, out, trace))
}
