//! Host crate for the `acceptance` integration test; it exports nothing.
