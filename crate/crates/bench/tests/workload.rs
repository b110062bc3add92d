use exitbound::bench::Case;
use exitbound::linalg::stability_margin;
use exitbound_bench::workload;

#[test]
fn workload_is_reproducible_and_stable() {
    let (a, fixtures) = workload(3, 4, 11).unwrap();
    let (b, _) = workload(3, 4, 11).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|m| m.dim() == 4 && stability_margin(m).unwrap() > 0.0));
    assert_eq!(fixtures.map(|f| f.case), [Case::I, Case::II]);
}

#[test]
fn odd_dimension_is_rejected() {
    assert!(workload(1, 3, 0).is_err());
}
