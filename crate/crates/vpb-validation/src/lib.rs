//! Acceptance suite for `vpb-lab`; the criteria live in `tests/acceptance.rs`.
