mod common;

use common::{relative_error, tables_up_to, FisherOracle};
use situmatch::stats::{fisher_exact_p, odds_ratio_fisher, Table2x2};

#[test]
fn fisher_matches_enumeration_up_to_forty() {
    let oracle = FisherOracle::new(40);
    let tables = tables_up_to(40);
    assert!(tables.len() > 100_000);
    for t in &tables {
        let (got, want) = (fisher_exact_p(t), oracle.p(t));
        assert!(relative_error(got, want) <= 1e-12, "{t:?}: {got} vs {want}");
    }
}

#[test]
fn larger_tables_agree_with_enumeration_closely() {
    let oracle = FisherOracle::new(120);
    for t in [
        Table2x2::new(30, 20, 25, 40),
        Table2x2::new(50, 10, 5, 55),
        Table2x2::new(12, 40, 38, 11),
        Table2x2::new(1, 59, 0, 60),
    ] {
        let (got, want) = (fisher_exact_p(&t), oracle.p(&t));
        assert!(relative_error(got, want) <= 1e-9, "{t:?}: {got} vs {want}");
    }
}

#[test]
fn odds_ratio_reports_the_same_p() {
    let t = Table2x2::new(12, 5, 3, 10);
    let or = odds_ratio_fisher(&t, 0.95).unwrap();
    assert_eq!(or.p, fisher_exact_p(&t));
    assert!(or.ci_low < or.or && or.or < or.ci_high);
}
