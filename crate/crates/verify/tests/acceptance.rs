//! Runs every acceptance criterion and prints one PASS/FAIL line each,
//! followed by its sub-checks. Exits non-zero if any criterion fails.
//!
//! `cargo test -p uniformer-verify --test acceptance [-- id ...]`

use std::process::ExitCode;

use uniformer::checks::{criteria, run_criterion};

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut results = Vec::new();
    for c in criteria() {
        if !only.is_empty() && !only.iter().any(|o| o == c.id) {
            continue;
        }
        let report = run_criterion(&c);
        print!("{}", report.render());
        results.push((c.id, c.title, report.passed()));
    }
    if results.is_empty() {
        eprintln!("no criterion matches {only:?}");
        return ExitCode::FAILURE;
    }
    println!("\nacceptance summary");
    for (id, title, pass) in &results {
        println!("{}  {id:<13} {title}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.2).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
