//! Test support: an independent reference interpreter for the expression language, random
//! expression and fixture generators, and helpers to check the main implementation against them.

pub mod exprgen;
pub mod fixtures;
pub mod oracle;
