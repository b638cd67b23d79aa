//! A small reflective language: a first-order core with futures, grown by
//! macros and expression transforms written in the language itself.

pub mod analysis;
pub mod ast;
pub mod expand;
pub mod image;
pub mod interp;
pub mod primitives;
pub mod session;
pub mod sexpr;
pub mod state;
pub mod store;

pub use ast::Expr;
pub use interp::{EvalError, Failure, FailureKind};
pub use state::{Config, State, Sym};
pub use store::Word;
