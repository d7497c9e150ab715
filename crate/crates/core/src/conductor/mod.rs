//! Turns a path expression into a runnable model.

mod model;
mod path;

pub use model::{collect_vocabularies, ForwardOutput, ModelAssembly, Prediction, Prepared};
pub use path::{parse_path, PathError, PhasePath, Rule, Step};
