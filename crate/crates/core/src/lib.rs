pub mod agent;
pub mod backend;
pub mod dataset;
pub mod dialogue;
pub mod eval;
pub mod graph;
pub mod pipeline;
pub mod prompt;
pub mod state;
pub mod testkit;
