//! Library surface of the `crf` command-line tool, exposed so integration
//! tests can drive the same code paths the binary runs.

pub mod commands;
pub mod model_file;
pub mod sweep;
