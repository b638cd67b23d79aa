//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! the output is readable in `cargo test` logs.

mod common;

use std::time::{Duration, Instant};

use common::{
    config_with_fuel, fixnums, higher_order_source, isomorphic, load_static, random_graph, rng, static_source, value_stack_ok, Shape,
    StaticSource,
};
use epsilon_core::analysis::{self, Analyzer, Dimension};
use epsilon_core::ast::{self, ExprView};
use epsilon_core::expand;
use epsilon_core::image;
use epsilon_core::interp::{self, Env, Frame, StepOutcome, Thread};
use epsilon_core::session::{run_prelude_tests, Session, SessionError, SharedBuffer};
use epsilon_core::sexpr;
use epsilon_core::state::{FutureEntry, Io, SchedulerMode, CELL_MACRO_PROCEDURE};
use epsilon_core::store::{Store, NIL};
use epsilon_core::{Config, FailureKind, Word};
use rand::Rng;

// Pinned budgets and sizes.
const TRICHOTOMY_CONFIGURATIONS: usize = 5_000;
const TRICHOTOMY_BUDGET: Duration = Duration::from_secs(60);
const SOUNDNESS_PROGRAMS: usize = 1_000;
const SOUNDNESS_FUEL: u64 = 1_000_000;
const SOUNDNESS_BUDGET: Duration = Duration::from_secs(300);
const PRESERVATION_PROGRAMS: usize = 200;
const PRESERVATION_STEPS: usize = 5_000;
const CLOSURE_PROGRAMS: usize = 200;
const RANDOM_GRAPHS: usize = 1_000;
const LARGE_GRAPH_BUFFERS: usize = 10_000;
const IMAGE_DEFINITIONS: usize = 30;
const FIBO_BUDGET: Duration = Duration::from_secs(5);

type Outcome = Result<String, String>;

fn session() -> Session {
    Session::new(Config::default(), true).expect("prelude loads")
}

fn run(s: &mut Session, text: &str) -> Result<Vec<Word>, SessionError> {
    s.run_source(text)
}

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn expect_fixnums(s: &mut Session, text: &str, want: &[i64]) -> Result<(), String> {
    match run(s, text) {
        Ok(ws) if ws.iter().all(|w| w.as_fixnum().is_some()) && fixnums(&ws) == want => Ok(()),
        Ok(ws) => Err(format!("{text} gave {}, expected {want:?}", s.format_results(&ws))),
        Err(e) => Err(format!("{text} failed: {e}")),
    }
}

fn expect_failure(s: &mut Session, text: &str, kind: FailureKind) -> Result<(), String> {
    match run(s, text) {
        Err(e) if e.failure_kind() == Some(kind) => Ok(()),
        Err(e) => Err(format!("{text}: wrong error {e}")),
        Ok(ws) => Err(format!("{text} succeeded with {}", s.format_results(&ws))),
    }
}

// 1. Exactly one of stepped, failed or waiting on reachable configurations.
fn trichotomy() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0x7121);
    let (mut configs, mut stepped, mut failed, mut waiting) = (0usize, 0usize, 0usize, 0usize);
    let mut violations = Vec::new();
    while configs < TRICHOTOMY_CONFIGURATIONS {
        let src = static_source(&mut r, Shape::WILD);
        let (mut s, program) = load_static(&src, config_with_fuel(SOUNDNESS_FUEL));
        let mut th = Thread::new(program.main, Env::empty());
        for _ in 0..400 {
            if th.is_final() {
                break;
            }
            configs += 1;
            let before = (format!("{:?}", th.stack), th.values.clone());
            let top = th.stack.last().map(|(f, _)| f.clone()).unwrap();
            match interp::step_sequential(&mut s.st, &mut th) {
                Ok(StepOutcome::Stepped(_)) => {
                    stepped += 1;
                    if !value_stack_ok(&th.values) {
                        violations.push(format!("separator discipline broken in {}", src.text()));
                    }
                }
                Ok(StepOutcome::Failed(f)) => {
                    failed += 1;
                    let culprit_ok = match f.kind {
                        FailureKind::Environment => {
                            matches!(&top, Frame::Eval(e) if matches!(ast::view(&s.st.store, *e), Ok(ExprView::Variable(_))))
                        }
                        FailureKind::Primitive => {
                            matches!(top, Frame::Primitive { .. } | Frame::Join { .. } | Frame::CallIndirect { .. })
                        }
                        FailureKind::Dimension => true,
                    };
                    if !culprit_ok || before != (format!("{:?}", th.stack), th.values.clone()) {
                        violations.push(format!("{} failure from {top:?} in {}", f.kind, src.text()));
                    }
                    break;
                }
                Ok(StepOutcome::Waiting(t)) => {
                    waiting += 1;
                    let running = matches!(s.st.futures.get(t.0 as usize), Some(FutureEntry::Running(_)));
                    if !matches!(top, Frame::Join { .. }) || !running || before != (format!("{:?}", th.stack), th.values.clone()) {
                        violations.push(format!("bad wait in {}", src.text()));
                    }
                    break;
                }
                Ok(StepOutcome::Final(_)) => violations.push("final outcome on a non-final configuration".into()),
                Err(e) => {
                    violations.push(format!("no outcome ({e}) in {}", src.text()));
                    break;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    ensure(stepped > 0 && failed > 0 && waiting > 0, || format!("outcome not covered: {stepped}/{failed}/{waiting}"))?;
    ensure(elapsed < TRICHOTOMY_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{configs} configurations ({stepped} stepped, {failed} failed, {waiting} waiting), 0 violations, {elapsed:.1?}"))
}

// 2. Equal seeds give byte-identical traces and outputs.
const DETERMINISM_SCRIPT: &str = "
(e1:define (say c k)
  (e1:if (fixnum:= k 0) 0 (e1:begin (io:write-character c) (say c (fixnum:1- k)))))
(e1:define (task future c k) (say c k))
(e0:let (a b) (e0:bundle (e0:fork task 65 25) (e0:fork task 66 25))
  (e0:bundle (say 67 25) (e0:join a) (e0:join b)))
(e0:join (e1:future (list:sum (list:iota 30))))
";

fn traced_run(mode: SchedulerMode) -> Result<(Vec<u8>, Vec<u8>), String> {
    let mut s = session();
    let (out, trace) = (SharedBuffer::default(), SharedBuffer::default());
    s.st.io = Io::with(Box::new(out.clone()), Box::new(std::io::empty()));
    s.st.io.trace = Box::new(trace.clone());
    s.st.config.trace = true;
    s.st.config.scheduler = mode;
    let ws = run(&mut s, DETERMINISM_SCRIPT).map_err(|e| e.to_string())?;
    let mut out = out.contents();
    out.extend(s.format_results(&ws).bytes());
    Ok((out, trace.contents()))
}

fn determinism() -> Outcome {
    let modes = [SchedulerMode::RoundRobin, SchedulerMode::Random(1), SchedulerMode::Random(2), SchedulerMode::Random(0xE0)];
    let mut outputs = Vec::new();
    let mut trace_bytes = 0;
    for mode in modes {
        let a = traced_run(mode)?;
        let b = traced_run(mode)?;
        ensure(a == b, || format!("two runs under {mode:?} differ"))?;
        ensure(!a.1.is_empty(), || "empty trace".into())?;
        trace_bytes += a.1.len();
        outputs.push(a.0);
    }
    let distinct = {
        let mut o = outputs.clone();
        o.sort();
        o.dedup();
        o.len()
    };
    Ok(format!("{} schedulers x 2 runs identical ({trace_bytes} trace bytes; {distinct} distinct interleavings)", modes.len()))
}

// 3. Evaluations worked out by hand.
fn worked_evaluations() -> Outcome {
    let mut s = session();
    expect_fixnums(&mut s, "(fixnum:+ 2 3)", &[5])?;
    expect_fixnums(&mut s, "(e0:primitive fixnum:+ 2 3)", &[5])?;
    expect_fixnums(&mut s, "(e0:primitive fixnum:quotient-remainder 13 3)", &[4, 1])?;
    run(&mut s, "(e1:define x 42)").map_err(|e| e.to_string())?;
    expect_fixnums(&mut s, "(e0:let (x) 10 x)", &[10])?;
    expect_fixnums(&mut s, "x", &[42])?;
    expect_failure(&mut s, "(e0:join 3)", FailureKind::Primitive)?;
    expect_failure(&mut s, "(e0:primitive fixnum:/ 7 0)", FailureKind::Primitive)?;
    expect_failure(&mut s, "(fixnum:/ 7 0)", FailureKind::Primitive)?;
    Ok("(+ 2 3)=[5], qr(13,3)=[4 1], local 10 over global 42, join of non-future and division by zero fail as primitive".into())
}

// 4. Dimension verdicts and soundness on generated programs.
fn source(defs: &[&str], names: &[&str], main: &str) -> StaticSource {
    StaticSource {
        defs: defs.iter().map(|s| s.to_string()).collect(),
        names: names.iter().map(|s| s.to_string()).collect(),
        main: main.into(),
    }
}

fn verdicts() -> Result<(), String> {
    let cases: [(StaticSource, &str, Dimension); 4] = [
        (source(&["(e1:define (f1 x) (e0:call f2 x))", "(e1:define (f2 x) x)"], &["f1", "f2"], "(e0:call f1 42)"), "main", Dimension::Lift(1)),
        (source(&["(e1:define (f) (e0:call f))"], &["f"], "(e0:call f)"), "f", Dimension::Bottom),
        (source(&[], &[], "(e0:let (x) 1 (e0:if-in x (1 2 3) 10 (e0:bundle)))"), "main", Dimension::Top),
        (source(&["(e1:define (loop) (e0:call loop))"], &["loop"], "(e0:if-in 1 (2) 42 (e0:call loop))"), "main", Dimension::Lift(1)),
    ];
    for (src, what, want) in cases {
        let (s, program) = load_static(&src, Config::default());
        let report = analysis::infer(&s.st, &program);
        let got = if what == "main" { report.main } else { report.procedures[what].1 };
        ensure(got == want, || format!("{}: {what} is {got}, expected {want}", src.text()))?;
    }
    Ok(())
}

fn soundness() -> Outcome {
    let start = Instant::now();
    verdicts()?;
    let mut r = rng(0x5017);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let (mut finished, mut failed, mut out_of_fuel) = (0usize, 0usize, 0usize);
    while accepted < SOUNDNESS_PROGRAMS {
        let src = static_source(&mut r, Shape::TAME);
        let (mut s, program) = load_static(&src, config_with_fuel(SOUNDNESS_FUEL));
        if !analysis::well_dimensioned(&s.st, &program) {
            rejected += 1;
            continue;
        }
        accepted += 1;
        match interp::eval(&mut s.st, program.main) {
            Ok(_) => finished += 1,
            Err(e) if e.failure_kind() == Some(FailureKind::Dimension) => {
                return Err(format!("well-dimensioned program failed by dimension: {e}\n{}", src.text()))
            }
            Err(interp::EvalError::FuelExhausted) => out_of_fuel += 1,
            Err(_) => failed += 1,
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < SOUNDNESS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "4 verdicts reproduced; {accepted} well-dimensioned programs ({rejected} rejected): {finished} finished, {failed} other failures, {out_of_fuel} out of fuel, 0 dimension failures, {elapsed:.1?}"
    ))
}

// 5. Resynthesized dimension never grows along a trace.
fn preservation() -> Outcome {
    let mut r = rng(0x9E5);
    let (mut comparisons, mut traced) = (0usize, 0usize);
    while traced < PRESERVATION_PROGRAMS {
        let src = static_source(&mut r, Shape::TAME);
        let (mut s, program) = load_static(&src, config_with_fuel(SOUNDNESS_FUEL));
        let analyzer = Analyzer::new(&s.st, &program);
        let mut th = Thread::new(program.main, Env::empty());
        let first = analysis::resynthesize(&mut s.st, &th).map_err(|e| e.to_string())?;
        let mut previous = analyzer.dim(&s.st, first);
        let mut steps = 0;
        while steps < PRESERVATION_STEPS {
            match interp::step_sequential(&mut s.st, &mut th).map_err(|e| e.to_string())? {
                StepOutcome::Stepped(_) => {}
                _ => break,
            }
            steps += 1;
            let e = analysis::resynthesize(&mut s.st, &th).map_err(|e| format!("{e} in {}", src.text()))?;
            let d = analyzer.dim(&s.st, e);
            comparisons += 1;
            ensure(d.leq(previous), || format!("dimension grew from {previous} to {d} at step {steps} of\n{}", src.text()))?;
            previous = d;
        }
        if steps > 0 {
            traced += 1;
        }
    }
    Ok(format!("{traced} traced programs, {comparisons} steps compared, 0 violations"))
}

// 6. Macros: expansion, procedure caching and regeneration.
fn macros() -> Outcome {
    let mut s = session();
    run(
        &mut s,
        "(e1:trivial-define-macro silly-square
           (sexpression:list3 (sexpression:inject-symbol (e0:value fixnum:*))
                              (sexpression:car arguments)
                              (sexpression:car arguments)))",
    )
    .map_err(|e| e.to_string())?;
    let form = sexpr::read_one(&mut s.st, "(silly-square 4 5 6)").unwrap();
    let got = s.expand(form).map_err(|e| e.to_string())?;
    let times = s.st.intern("fixnum:*");
    let four = [s.st.make_value(Word::Unboxed(4)), s.st.make_value(Word::Unboxed(4))];
    let want = s.st.make_call(times, four.to_vec());
    ensure(ast::equal_up_to_handles(&s.st.store, got, want), || format!("expanded to {}", ast::render(&s.st, got)))?;
    expect_fixnums(&mut s, "(silly-square 4 5 6)", &[16])?;

    run(
        &mut s,
        "(e1:define counter (box:make 0))
         (e1:define (counting-transform name formals body)
           (box:bump! counter)
           (e0:bundle name formals body))
         (transform:append-procedure-transform! (e0:value counting-transform))
         (e1:define-macro (twice x) `(fixnum:* 2 ,x))",
    )
    .map_err(|e| e.to_string())?;
    let count = |s: &mut Session| run(s, "(box:get counter)").ok().and_then(|w| w.first().and_then(|w| w.as_fixnum()));
    let twice = s.st.intern("twice");
    // The first use also regenerates the prelude macros the expansion
    // goes through, since registering the transform dropped their caches.
    expect_fixnums(&mut s, "(twice 1)", &[2])?;
    let warm = count(&mut s);
    expect_fixnums(&mut s, "(twice 2)", &[4])?;
    expect_fixnums(&mut s, "(twice 3)", &[6])?;
    ensure(count(&mut s) == warm, || "a cached macro procedure was rebuilt".into())?;

    run(&mut s, "(e1:define-macro (twice x) `(fixnum:* ,x 2))").map_err(|e| e.to_string())?;
    let c0 = count(&mut s);
    for k in 4..=6 {
        expect_fixnums(&mut s, &format!("(twice {k})"), &[2 * k])?;
    }
    let c1 = count(&mut s);
    ensure(c1 == c0.map(|c| c + 1), || format!("three uses after a definition moved the counter from {c0:?} to {c1:?}"))?;
    let cached = s.st.cell(twice, CELL_MACRO_PROCEDURE);
    ensure(cached != NIL, || "no cached macro procedure".into())?;

    run(
        &mut s,
        "(e1:define (other-transform name formals body) (e0:bundle name formals body))
         (transform:append-procedure-transform! (e0:value other-transform))",
    )
    .map_err(|e| e.to_string())?;
    ensure(s.st.cell(twice, CELL_MACRO_PROCEDURE) == NIL, || "cache survived a new procedure transform".into())?;
    let c2 = count(&mut s);
    expect_fixnums(&mut s, "(twice 10)", &[20])?;
    let c3 = count(&mut s);
    expect_fixnums(&mut s, "(twice 11)", &[22])?;
    ensure(c3 > c2 && count(&mut s) == c3, || format!("regeneration moved the counter from {c2:?} to {c3:?}"))?;
    let regenerated = s.st.cell(twice, CELL_MACRO_PROCEDURE);
    ensure(regenerated != NIL && regenerated != cached, || "macro procedure was not regenerated".into())?;
    Ok("silly-square = [call fixnum:* 4 4] up to handles; definition + 3 uses -> exactly 1 generation; new transform -> regeneration".into())
}

// 7. Closure conversion against native closure semantics.
fn closures() -> Outcome {
    let mut s = session();
    run(&mut s, "(e1:define q (e1:let* ((a 1) (b 2) (c 3)) (e1:lambda (x) (fixnum:+ a b c x))))").map_err(|e| e.to_string())?;
    expect_fixnums(&mut s, "(e1:call-closure q 4)", &[10])?;

    let mut native = Session::new(Config { native_closures: true, ..Config::default() }, true).map_err(|e| e.to_string())?;
    let mut r = rng(0xC105);
    let (mut agree, mut failing) = (0usize, 0usize);
    for _ in 0..CLOSURE_PROGRAMS {
        let text = higher_order_source(&mut r, 5);
        let a = sexpr::read_one(&mut native.st, &text).unwrap();
        let ea = expand::macroexpand(&mut native.st, a).map_err(|e| format!("{text}: {e}"))?;
        let oracle = interp::eval(&mut native.st, ea).map(|ws| fixnums(&ws)).map_err(|e| e.failure_kind());

        let b = sexpr::read_one(&mut s.st, &text).unwrap();
        let eb = s.expand(b).map_err(|e| format!("{text}: {e}"))?;
        ensure(!ast::contains_extension(&s.st.store, eb).unwrap(), || format!("extension left in {text}"))?;
        let converted = interp::eval(&mut s.st, eb).map(|ws| fixnums(&ws)).map_err(|e| e.failure_kind());
        ensure(oracle == converted, || format!("{text}\nnative {oracle:?}\nconverted {converted:?}"))?;
        if let Err(k) = oracle {
            ensure(k.is_some(), || format!("{text} aborted"))?;
            failing += 1;
        }
        agree += 1;
    }
    for p in s.st.procedure_names() {
        let (_, body) = s.st.procedure_get(p).unwrap();
        ensure(!ast::contains_extension(&s.st.store, body).unwrap(), || format!("procedure {} keeps an extension", s.st.symbol_name(p)))?;
    }
    Ok(format!("q example = 10; {agree} generated programs agree ({failing} failing identically); no extension cases after conversion"))
}

// 8. Futures.
fn futures() -> Outcome {
    let mut s = session();
    expect_fixnums(&mut s, "(e0:join (e1:future (fixnum:+ 20 22)))", &[42])?;
    run(&mut s, "(e1:define (doomed future) (fixnum:/ 1 0))").map_err(|e| e.to_string())?;
    let body = "(e0:let (w) (list:sum (list:iota 40)) (fixnum:+ w 2))";
    expect_fixnums(&mut s, body, &[782])?;
    let before = s.st.futures.len();
    expect_fixnums(&mut s, &format!("(e0:let (f) (e0:fork doomed) {body})"), &[782])?;
    expect_fixnums(&mut s, &format!("(e0:let (f) (e1:future (e0:join 5)) {body})"), &[782])?;
    let failed = s.st.futures[before..].iter().filter(|f| matches!(f, FutureEntry::Failed(_))).count();
    ensure(failed == 2, || format!("{failed} of the doomed futures failed"))?;
    Ok("join of future (+ 20 22) = 42; two failing background threads left the foreground result 782".into())
}

// 9. Image format.
fn golden(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).expect("golden file")
}

fn images() -> Outcome {
    let mut store = Store::new();
    let w42 = image::marshal(&store, Word::Unboxed(42)).map_err(|e| e.to_string())?;
    ensure(w42 == [0, 0, 42], || format!("Unboxed(42) marshals to {w42:?}"))?;
    ensure(image::to_bytes(&w42) == golden("unboxed-42.u"), || "Unboxed(42) bytes differ from the golden file".into())?;
    let cell = store.cons(Word::Unboxed(42), NIL);
    let wc = image::marshal(&store, cell).map_err(|e| e.to_string())?;
    ensure(wc == [1, 2, 0, 42, 0, 0, 1, 0], || format!("cons(42, nil) marshals to {wc:?}"))?;
    ensure(image::to_bytes(&wc) == golden("cons-42-nil.u"), || "cons(42, nil) bytes differ from the golden file".into())?;

    let mut r = rng(0x1A6E);
    for i in 0..RANDOM_GRAPHS {
        let n = if i % 100 == 0 { LARGE_GRAPH_BUFFERS } else { r.gen_range(0..60) };
        let mut a = Store::new();
        let root = random_graph(&mut a, &mut r, n);
        let bytes = image::to_bytes(&image::marshal(&a, root).map_err(|e| e.to_string())?);
        let words = image::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let mut b = Store::new();
        let copy = image::unmarshal(&mut b, &words).map_err(|e| e.to_string())?;
        ensure(isomorphic(&a, root, &b, copy), || format!("graph {i} is not isomorphic after a round trip"))?;
        let again = image::to_bytes(&image::marshal(&b, copy).map_err(|e| e.to_string())?);
        ensure(again == bytes, || format!("graph {i}: re-marshalling is not byte-identical"))?;
        let clone = image::unmarshal(&mut a, &words).map_err(|e| e.to_string())?;
        ensure(isomorphic(&a, root, &a, clone) && (root != clone || !matches!(root, Word::Boxed(_))), || {
            format!("graph {i}: in-store clone is not a fresh isomorphic copy")
        })?;
    }

    let (program, main) = image_program();
    let mut s = session();
    run(&mut s, &program).map_err(|e| e.to_string())?;
    let m = sexpr::read_one(&mut s.st, &main).unwrap();
    let main_expr = s.expand(m).map_err(|e| e.to_string())?;
    let dump = image::unexec_bytes(&mut s.st, main_expr).map_err(|e| e.to_string())?;
    let direct = interp::eval(&mut s.st, main_expr).map_err(|e| e.to_string())?;
    let (mut st2, main2) = image::exec_bytes(&dump).map_err(|e| e.to_string())?;
    let redump = image::unexec_bytes(&mut st2, main2).map_err(|e| e.to_string())?;
    ensure(redump == dump, || "re-dumping an exec'd image is not byte-identical".into())?;
    let restored = interp::eval(&mut st2, main2).map_err(|e| e.to_string())?;
    ensure(fixnums(&direct) == fixnums(&restored), || format!("direct {direct:?}, after exec {restored:?}"))?;
    Ok(format!(
        "golden bytes match; {RANDOM_GRAPHS} random graphs isomorphic and byte-idempotent; {IMAGE_DEFINITIONS}-definition program gives {:?} before and after unexec/exec",
        fixnums(&direct)
    ))
}

/// Globals and procedures that depend on each other, plus a closure and
/// a list, so the image holds code, data and the prelude.
fn image_program() -> (String, String) {
    let mut defs = Vec::new();
    let half = IMAGE_DEFINITIONS / 2;
    for i in 0..half {
        defs.push(format!("(e1:define g{i} {})", 3 * i + 1));
    }
    defs.push("(e1:define (h0 x) (fixnum:+ x g0))".into());
    for i in 1..half - 2 {
        defs.push(format!("(e1:define (h{i} x) (e1:if (fixnum:odd? x) (fixnum:+ (h{} x) g{i}) (fixnum:* 2 (h{} x))))", i - 1, i - 1));
    }
    defs.push(format!("(e1:define k (e1:let* ((a g3) (b g4)) (e1:lambda (x) (fixnum:+ a b (h{} x)))))", half - 3));
    defs.push("(e1:define numbers (list:iota 12))".into());
    assert_eq!(defs.len(), IMAGE_DEFINITIONS);
    let main = format!("(e0:bundle (list:sum (list:map k numbers)) (h{} 7) (list:length numbers))", half - 3);
    (defs.join("\n"), main)
}

// 10. Interpretation speed.
fn fibo() -> Outcome {
    fn oracle(n: i64) -> i64 {
        let (mut a, mut b) = (0, 1);
        for _ in 0..n {
            (a, b) = (b, a + b);
        }
        a
    }
    let mut s = session();
    run(
        &mut s,
        "(e1:define (fibo n)
           (e0:if-in n (0 1)
             n
             (fixnum:+ (fibo (fixnum:- n (e0:value 2)))
                       (fibo (fixnum:1- n)))))",
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    expect_fixnums(&mut s, "(fibo 20)", &[oracle(20)])?;
    let elapsed = start.elapsed();
    ensure(elapsed < FIBO_BUDGET, || format!("fibo(20) took {elapsed:?}"))?;
    Ok(format!("fibo(20) = {} in {elapsed:.2?}", oracle(20)))
}

// 11. The prelude's own checks.
fn prelude() -> Outcome {
    let mut s = session();
    let (n, failed) = run_prelude_tests(&mut s).map_err(|e| e.to_string())?;
    ensure(failed.is_empty(), || format!("{} of {n} failed: {}", failed.len(), failed.join("; ")))?;
    Ok(format!("prelude loaded, {n} checks pass"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let worker = std::thread::Builder::new()
        .stack_size(512 << 20)
        .spawn(|| {
            let criteria: [Criterion; 11] = [
                ("semantics trichotomy", trichotomy),
                ("determinism", determinism),
                ("worked evaluations", worked_evaluations),
                ("dimension analysis", soundness),
                ("weak preservation", preservation),
                ("macro system", macros),
                ("closure conversion", closures),
                ("futures", futures),
                ("image format", images),
                ("performance", fibo),
                ("prelude", prelude),
            ];
            let mut failures = 0;
            for (i, (name, check)) in criteria.iter().enumerate() {
                let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
                match outcome {
                    Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
                    Err(why) => {
                        failures += 1;
                        println!("FAIL {:>2} {name}: {why}", i + 1);
                    }
                }
            }
            println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
            failures
        })
        .expect("spawn");
    let failures = worker.join().unwrap_or(1);
    if failures > 0 {
        std::process::exit(1);
    }
}
