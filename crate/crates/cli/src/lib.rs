//! Problem files and command implementations behind the `hjb` binary.

pub mod commands;
pub mod problem_file;

pub use problem_file::{load_problem, LoadedProblem, ProblemFile};
