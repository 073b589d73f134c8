//! Acceptance suite for the whole workspace. The criteria live in
//! `tests/acceptance.rs`; run them with `cargo test -p mobile-agent-tests --test acceptance`.
