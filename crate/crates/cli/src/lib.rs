//! Persistence formats, benchmark harness, and report plumbing shared by
//! the `lwtf` binary and its integration tests.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod crc32;
pub mod dataset_io;
pub mod fmtnum;
pub mod runlog;
