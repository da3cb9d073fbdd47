//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Plain binary (no libtest harness) so the table is always shown.

use std::process::ExitCode;

use erocket::acceptance::run_all;

fn main() -> ExitCode {
    let results = run_all(1);
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let ok = passed == results.len() && results.len() == 9;
    println!(
        "overall: {} ({passed}/{} criteria)",
        if ok { "PASS" } else { "FAIL" },
        results.len()
    );
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
