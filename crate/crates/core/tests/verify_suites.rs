use std::time::Instant;

use mcd_core::verify::{gradcheck_suite, oracle_suite, table, GRAD_INSTANCES};

#[test]
fn gradient_suite_passes() {
    let start = Instant::now();
    let checks = gradcheck_suite(GRAD_INSTANCES).unwrap();
    println!("{}", table(&checks));
    println!("gradient suite took {:.1} s", start.elapsed().as_secs_f64());
    assert!(checks.iter().all(|c| c.passed()), "{}", table(&checks));
}

#[test]
fn oracle_suite_passes() {
    let checks = oracle_suite().unwrap();
    println!("{}", table(&checks));
    assert!(checks.iter().all(|c| c.passed()), "{}", table(&checks));
}
