//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the test log.

use std::time::{Duration, Instant};

use attnkit_cli::suite::verdict;
use attnkit_cli::{determinism, format_report, run_suite, threads, Criterion};

const SEED: u64 = 0;
const DECODE_BUDGET: Duration = Duration::from_secs(60);

fn line(c: &Criterion, pass: bool, extra: &str) -> String {
    format!("{} criterion {:>2} {}: {}{extra}", verdict(pass), c.id, c.name, c.detail)
}

fn main() {
    let threads = threads().expect("ATTNKIT_THREADS");
    let start = Instant::now();
    let first = run_suite(SEED, threads).expect("first suite run");
    let second = run_suite(SEED, threads).expect("second suite run");
    let mut ok = true;
    let mut lines = Vec::new();
    for c in &first {
        let (pass, extra) = if c.id == 4 {
            let fast = c.elapsed < DECODE_BUDGET;
            (c.pass && fast, format!(" [{:.1} s of {} s budget]", c.elapsed.as_secs_f64(), DECODE_BUDGET.as_secs()))
        } else {
            (c.pass, String::new())
        };
        ok &= pass;
        lines.push(line(c, pass, &extra));
    }
    let ids: Vec<u8> = first.iter().map(|c| c.id).collect();
    if ids != (1..=10).collect::<Vec<u8>>() {
        ok = false;
        lines.push(format!("FAIL suite returned criteria {ids:?}"));
    }
    let det = determinism(&format_report(SEED, &first), &format_report(SEED, &second));
    ok &= det.pass;
    lines.push(line(&det, det.pass, ""));
    for l in &lines {
        println!("{l}");
    }
    println!(
        "acceptance: {} ({:.1} s)",
        if ok { "all criteria pass" } else { "FAILURES" },
        start.elapsed().as_secs_f64()
    );
    if !ok {
        std::process::exit(1);
    }
}
