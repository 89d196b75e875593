//! Independent reference models shared by the integration tests.
#![allow(dead_code)]

pub mod grouping_replay;
pub mod scheduler_oracle;
