use gammalab::energy::{energy, gradient};
use gammalab_bench::{disk_2d, disk_mask, interface_1d, problem};

#[test]
fn fixtures_are_well_posed() {
    let u = interface_1d(4096, 0.05);
    let e = energy(&u, &problem(1)).unwrap();
    assert!(e.total.is_finite() && e.total > 0.0);
    let v = disk_2d(256, 0.05);
    assert_eq!(gradient(&v, &problem(2)).unwrap().len(), v.len());
    let f = disk_mask(128).fraction();
    assert!((f - std::f64::consts::PI / 16.0).abs() < 0.01, "{f}");
}
