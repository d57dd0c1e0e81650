//! Library layer of the `moderr` driver: configuration, file formats, the
//! run/bounds pipelines, and the self-test, kept callable for tests.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod selftest;
