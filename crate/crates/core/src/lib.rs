//! Coalition-based hybrid optimization for multi-agent tasks: a switch-based
//! coalition layer on top of a hybrid (mode + parameter) graph search.

pub mod coalition;
pub mod model;
pub mod paramopt;
pub mod search;
pub mod toy;
pub mod grid;
pub mod domain;
pub mod transport;
pub mod capture;
pub mod baselines;
pub mod scenario;
pub mod harness;
