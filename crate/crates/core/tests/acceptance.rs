//! The verification suite: one test per criterion, each printing its
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the table.

use relwidth_core::acceptance;

fn run(id: usize) {
    let o = acceptance::run_criterion(id);
    println!(
        "criterion {} [{}] {}",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.name
    );
    for d in &o.details {
        println!("  - {d}");
    }
    assert!(o.pass, "criterion {} failed: {:?}", o.id, o.details);
}

// Each criterion recomputes its own fixtures; the table as a whole is
// exercised once more by the repro golden-file test below.

#[test]
fn criterion_1_exact_width_fixtures() {
    run(1);
}

#[test]
fn criterion_2_equality_verdicts() {
    run(2);
}

#[test]
fn criterion_3_henson_verdicts() {
    run(3);
}

#[test]
fn criterion_4_minimality_transfer() {
    run(4);
}

#[test]
fn criterion_5_finite_algebra() {
    run(5);
}

#[test]
fn criterion_6_loop_harness() {
    run(6);
}

#[test]
fn criterion_7_rewritability() {
    run(7);
}

#[test]
fn criterion_8_property_suites() {
    run(8);
}

#[test]
fn table_matches_the_checked_in_golden_file() {
    let table = acceptance::render_table(&acceptance::run_all());
    let golden = include_str!("../fixtures/acceptance_table.txt");
    assert_eq!(table, golden, "regenerate fixtures/acceptance_table.txt");
}
