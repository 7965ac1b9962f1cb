//! File formats, parallel drivers and the command-line front end of
//! gapscope.

pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;
pub mod output;
pub mod parallel;
