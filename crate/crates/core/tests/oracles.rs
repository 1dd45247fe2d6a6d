//! Closed-form and independently integrated reference values, frozen as literals.
//!
//! Each oracle is recomputed here and compared with its frozen value before the library is
//! compared with the oracle.

use gammalab::energy::{energy, perimeter, EnergyProblem};
use gammalab::geodesic::{sigma_h, Curve};
use gammalab::grid::{GridField, GridGeometry, PhaseMask};
use gammalab::potential::{HomogenizedPotential, PotentialSpec, WellPotential};
use gammalab::profile::{build_profile, mass_repair, signed_distance};
use gammalab::unfolding::{decompose, unfold1};
use gammalab::{Lattice, ScalarField};

const SIGMA_COMPOSITE: f64 = 6.394442031083625;
const BUBBLE_C_R01: f64 = -95.4929658551372;
const MIDPOINT_X2_H64: f64 = 0.33331298828125;
const WH_AT_03: f64 = 4.761575000000001;
const RK4_PROFILE_AT_1: f64 = 0.7615946041785802;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Volume-fraction average of the composite scales: half of the cell carries the
/// `Q2`-composite of `1` and `4`, the other half carries `9`.
fn composite_average() -> f64 {
    0.5 * (0.5 * 1.0 + 0.5 * 4.0) + 0.5 * 9.0
}

#[test]
fn homogenized_composite_is_fraction_average() {
    let c = composite_average();
    assert_eq!(c, 5.75);
    let wh = HomogenizedPotential::with_default_resolution(PotentialSpec::reference_composite().build(1, 1).unwrap());
    for &z in &[-1.3, -0.6, 0.0, 0.3, 0.9] {
        let oracle = c * (1.0 - z * z) * (1.0 - z * z);
        assert!(close(wh.value(&[z]), oracle, 1e-12), "z={z}");
    }
    assert!(close(c * (1.0 - 0.09f64).powi(2), WH_AT_03, 1e-15));
}

#[test]
fn scalar_tensions_from_antiderivative() {
    // ∫ 2√c (1 − u²) du over [−1, 1] with antiderivative 2√c (u − u³/3).
    let anti = |c: f64, u: f64| 2.0 * c.sqrt() * (u - u * u * u / 3.0);
    let quartic = anti(1.0, 1.0) - anti(1.0, -1.0);
    let composite = anti(5.75, 1.0) - anti(5.75, -1.0);
    assert!(close(quartic, 8.0 / 3.0, 1e-15));
    assert!(close(composite, SIGMA_COMPOSITE, 1e-15));
    let s = sigma_h(&WellPotential::standard(), &[-1.0], &[1.0]).unwrap().value;
    assert!(close(s, quartic, 1e-8));
    let wh = HomogenizedPotential::with_default_resolution(PotentialSpec::reference_composite().build(1, 1).unwrap());
    assert!(close(sigma_h(&wh, &[-1.0], &[1.0]).unwrap().value, composite, 1e-8));
}

#[test]
fn decomposition_by_enumeration() {
    let g = GridGeometry::new(vec![0.0], 0.01, vec![100]).unwrap();
    let d = decompose(&g, 0.3, &Lattice::unit(1)).unwrap();
    // Whole δ-cells [0, 0.3), [0.3, 0.6), [0.6, 0.9) by enumeration of k·0.3 + 0.3 <= 1.
    let whole = (0..10).filter(|k| (k + 1) * 30 <= 100).count();
    assert_eq!(d.cell_count(), whole);
    assert!(close(d.lambda_measure(), 1.0 - 0.3 * whole as f64, 1e-12));
}

#[test]
fn unfolded_square_integral_is_midpoint_sum() {
    let h = 1.0 / 64.0;
    let oracle: f64 = (0..64).map(|i| h * ((i as f64 + 0.5) * h).powi(2)).sum();
    assert!(close(oracle, 1.0 / 3.0 - h * h / 12.0, 1e-14));
    assert!(close(oracle, MIDPOINT_X2_H64, 1e-14));
    let u = GridField::from_fn(&GridGeometry::new(vec![0.0], h, vec![64]).unwrap(), 1, |x, o| o[0] = x[0] * x[0]);
    let unfolded = unfold1(&u, 0.25, &[0.0]).unwrap().integral(0);
    assert!((unfolded - oracle).abs() <= 1e-15);
}

#[test]
fn aligned_constant_energy_is_cell_average() {
    let h = 1.0 / 256.0;
    let g = GridGeometry::new(vec![0.0], h, vec![256]).unwrap();
    let p = PotentialSpec::reference_composite().build(1, 1).unwrap();
    let eps = 0.2;
    let pb = EnergyProblem::new(eps, 1.0 / 16.0, 1.0 / 32.0, p);
    let e = energy(&GridField::constant(&g, &[0.3]), &pb).unwrap();
    assert_eq!(e.gradient, 0.0);
    assert!(close(e.potential, WH_AT_03 / eps, 1e-12), "{}", e.potential);
}

/// Classical RK4 for `u' = √(λ + (1 − u²)²)`, `u(0) = 0`.
fn rk4_profile(lambda: f64, t_end: f64, steps: usize) -> f64 {
    let f = |u: f64| (lambda + (1.0 - u * u).powi(2)).sqrt();
    let h = t_end / steps as f64;
    let mut u = 0.0;
    for _ in 0..steps {
        let k1 = f(u);
        let k2 = f(u + 0.5 * h * k1);
        let k3 = f(u + 0.5 * h * k2);
        let k4 = f(u + h * k3);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

#[test]
fn profile_matches_integrated_ode() {
    let oracle = rk4_profile(1e-6, 1.0, 100_000);
    assert!(close(oracle, RK4_PROFILE_AT_1, 1e-12));
    let p = build_profile(&Curve::segment(&[-1.0], &[1.0], 2).unwrap(), &WellPotential::standard(), 1.0, Some(1e-6))
        .unwrap();
    assert!((p.u(1.0)[0] - oracle).abs() < 1e-6, "{} vs {oracle}", p.u(1.0)[0]);
}

#[test]
fn bubble_constant_plugs_into_closed_form() {
    let r: f64 = 0.1;
    let oracle = -3.0 / (std::f64::consts::PI * r * r);
    assert!(close(oracle, BUBBLE_C_R01, 1e-14));
    let g = GridGeometry::new(vec![0.0, 0.0], 0.01, vec![100, 100]).unwrap();
    let u = GridField::from_fn(&g, 1, |x, o| o[0] = if x[0] < 0.52 { -1.0 } else { 1.0 });
    let rep = mass_repair(&u, 0.5, &[0.25, 0.5], r, &[-1.0], &[1.0]).unwrap();
    assert!(close(rep.c_analytic, oracle, 1e-14));
    assert!(rep.mass_error <= 1e-12);
}

#[test]
fn disk_distance_and_perimeter() {
    let h = 1.0 / 128.0;
    let g = GridGeometry::new(vec![0.0, 0.0], h, vec![128, 128]).unwrap();
    let (c, r) = ([0.5, 0.5], 0.25);
    let mask = PhaseMask::from_fn(&g, |x| (x[0] - c[0]).hypot(x[1] - c[1]) < r);
    let sd = signed_distance(&mask).unwrap();
    for i in 0..g.len() {
        let x = g.center(i);
        let exact = ((x[0] - c[0]).hypot(x[1] - c[1]) - r).abs();
        assert!((sd.values()[i].abs() - exact).abs() <= h, "cell {i}");
    }
    // A diffuse interface, as produced by minimization; crossings are interpolated.
    let u = GridField::from_fn(&g, 1, |x, o| o[0] = (((x[0] - c[0]).hypot(x[1] - c[1]) - r) / 0.02).tanh());
    let per = perimeter(&u, &[-1.0], &[1.0]);
    let circumference = 2.0 * std::f64::consts::PI * r;
    assert!((per - circumference).abs() <= 0.05 * circumference, "{per}");
}
