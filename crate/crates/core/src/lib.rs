//! Simulation and static analysis of relational transducer networks
//! programmed in stratified Datalog with negation.

pub mod analyzer;
pub mod causality;
pub mod datalog;
pub mod harness;
pub mod network;
pub mod rewriter;
pub mod strategy;
pub mod transducer;

use thiserror::Error;

pub use datalog::{Const, DatalogError, Fact, Instance, Key, Program, RelationDecl};
pub use transducer::{NodeId, TransducerSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error(transparent)]
    Datalog(#[from] DatalogError),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("rewrite error: {0}")]
    Rewrite(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
}
