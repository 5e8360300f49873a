//! Holds the `acceptance` test target. Run it with
//! `cargo test -p pmdi-validation --test acceptance`.
