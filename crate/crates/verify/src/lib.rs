//! Home of the `acceptance` test target. Kept in its own package so that its
//! expected failures do not stop the other test binaries under `cargo test`.
