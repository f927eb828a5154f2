//! Library side of the `situmatch` binary, exposed for tests.

pub mod server;
