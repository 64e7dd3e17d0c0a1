//! Acceptance checks for the core crate; see `tests/acceptance.rs`.
