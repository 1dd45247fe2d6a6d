//! End-to-end acceptance suite: one line per criterion, then a single verdict.
//!
//! Runs as one sequential test so the large 1D run has the machine to itself.

use std::io::Write;
use std::time::Instant;

use gammalab::cell_problem::{convergence_scan, CellGrid, SolverOptions};
use gammalab::energy::{energy, gradient, project_mass, random_field, EnergyProblem};
use gammalab::geodesic::{sigma_h, Curve};
use gammalab::grid::GridGeometry;
use gammalab::harness::{default_alpha, run_gamma, run_mass, run_scaling, sigma_xi_ladder, Config, LadderOptions};
use gammalab::potential::{HomogenizedPotential, PotentialSpec, WellPotential};
use gammalab::profile::build_profile;
use gammalab::unfolding::{identity_audit, unfold1, unfold2};
use gammalab::{GridField, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA_CONFIG: &str = include_str!("../../../configs/gamma_1d.toml");
const MASS_CONFIG: &str = include_str!("../../../configs/mass_2d.toml");

const SIGMA_QUARTIC_RTOL: f64 = 1e-6;
const FAST_SECONDS: f64 = 1.0;
const WH0_ATOL: f64 = 1e-12;
const SIGMA_COMPOSITE_RTOL: f64 = 1e-4;
const RATIO_LO: f64 = 0.9;
const RATIO_HI: f64 = 1.1;
const MONOTONE_NOISE: f64 = 0.02;
const GAMMA_SECONDS: f64 = 300.0;
const IDENTITY_ATOL: f64 = 1e-12;
const IDENTITY_FIELDS: usize = 20;
const SLOPE_MIN: f64 = 0.7;
const SCALING_SECONDS: f64 = 60.0;
const CELL_ABOVE_TOL: f64 = 1e-6;
const CELL_WELL_TOL: f64 = 1e-9;
const CELL_SECONDS: f64 = 120.0;
const LADDER: [f64; 5] = [0.1, 0.03, 0.01, 0.003, 0.001];
const SIGMA_XI_RTOL: f64 = 0.02;
const SIGMA_XI_MONOTONE_ATOL: f64 = 1e-9;
const TANH_SUP: f64 = 1e-3;
const MASS_ATOL: f64 = 1e-12;
const BUBBLE_FACTOR: f64 = 2.0;
const GRADIENT_RTOL: f64 = 1e-6;
const GRADIENT_FIELDS: usize = 10;

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        // Straight to the handle: the verdict lines belong in the log even when the test passes.
        let line = format!("criterion {id:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        self.0.push((id, pass));
    }
}

fn quartic_sigma() -> (bool, String) {
    let start = Instant::now();
    let w = WellPotential::standard();
    let s = sigma_h(&w, &[-1.0], &[1.0]).unwrap().value;
    let secs = start.elapsed().as_secs_f64();
    let rel = (s - 8.0 / 3.0).abs() / (8.0 / 3.0);
    (rel <= SIGMA_QUARTIC_RTOL && secs < FAST_SECONDS, format!("sigma={s:.10} rel_err={rel:.2e} time={secs:.3}s"))
}

fn composite_sigma() -> (bool, String) {
    let start = Instant::now();
    let p = PotentialSpec::reference_composite().build(1, 1).unwrap();
    let wh = HomogenizedPotential::with_default_resolution(p);
    let w0 = wh.value(&[0.0]);
    let s = sigma_h(&wh, &[-1.0], &[1.0]).unwrap().value;
    let secs = start.elapsed().as_secs_f64();
    let exact = 5.75f64.sqrt() * 8.0 / 3.0;
    let rel = (s - exact).abs() / exact;
    let pass = (w0 - 5.75).abs() <= WH0_ATOL && rel <= SIGMA_COMPOSITE_RTOL && secs < FAST_SECONDS;
    (pass, format!("W^h(0)={w0} sigma={s:.8} rel_err={rel:.2e} time={secs:.3}s"))
}

fn gamma_limit() -> (bool, String) {
    let cfg = Config::from_toml(GAMMA_CONFIG).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let report = pool.install(|| run_gamma(&cfg)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratios: Vec<f64> = report.rows.iter().map(|r| r.ratio.unwrap()).collect();
    let last = *ratios.last().unwrap();
    let monotone = ratios.windows(2).all(|w| (w[1] - 1.0).abs() <= (w[0] - 1.0).abs() + MONOTONE_NOISE);
    let finest_h = report.rows.last().unwrap().h;
    let eta3 = report.rows.last().unwrap().eta;
    let pass = ratios.len() == 4
        && (RATIO_LO..=RATIO_HI).contains(&last)
        && monotone
        && finest_h <= eta3 / 8.0 * (1.0 + 1e-12)
        && secs <= GAMMA_SECONDS;
    (pass, format!("ratios={ratios:.6?} h_3={finest_h:.3e} time={secs:.1}s (1 thread)"))
}

fn unfolding_identities() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut products_exact = true;
    for k in 0..IDENTITY_FIELDS {
        let n = 1 + k % 2;
        let h = 1.0 / 64.0;
        let dims = if n == 1 { vec![64 + rng.gen_range(0..16)] } else { vec![16 + rng.gen_range(0..8); 2] };
        let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-8i32..8) as f64 * h).collect();
        let geom = GridGeometry::new(lo, h, dims).unwrap();
        let k1 = [4usize, 5, 6, 8][rng.gen_range(0..4)];
        let k2 = rng.gen_range(1..=3usize);
        let (delta, eta) = (k1 as f64 * h, k2 as f64 * h);
        let v = random_field(&geom, &[-1.0], &[1.0], rng.gen());
        let w = random_field(&geom, &[-1.0], &[1.0], rng.gen());
        for c in identity_audit(&v, delta, eta).unwrap() {
            worst = worst.max(c.abs_err);
        }
        let prod: Vec<f64> = v.values().iter().zip(w.values()).map(|(x, y)| x * y).collect();
        let vw = v.with_values(prod).unwrap();
        products_exact &= products_match(&v, &w, &vw, delta, eta);
    }
    (worst <= IDENTITY_ATOL && products_exact, format!("max_abs_err={worst:.2e} products_exact={products_exact}"))
}

fn products_match(v: &GridField, w: &GridField, vw: &GridField, delta: f64, eta: f64) -> bool {
    let z = [0.0];
    let (a, b, c) = (unfold1(v, delta, &z).unwrap(), unfold1(w, delta, &z).unwrap(), unfold1(vw, delta, &z).unwrap());
    for cell in 0..a.decomposition.cell_count() {
        for j in 0..a.nodes1() {
            if c.value(cell, j, 0)[0] != a.value(cell, j, 0)[0] * b.value(cell, j, 0)[0] {
                return false;
            }
        }
    }
    let (a, b, c) =
        (unfold2(v, delta, eta, &z).unwrap(), unfold2(w, delta, eta, &z).unwrap(), unfold2(vw, delta, eta, &z).unwrap());
    for cell in 0..a.decomposition.cell_count() {
        for j in (0..a.nodes1()).filter(|&j| a.is_proper(cell, j)) {
            for l in 0..a.nodes2() {
                if c.value(cell, j, l)[0] != a.value(cell, j, l)[0] * b.value(cell, j, l)[0] {
                    return false;
                }
            }
        }
    }
    true
}

fn defect_scaling() -> (bool, String) {
    let cfg = Config::from_toml(GAMMA_CONFIG).unwrap();
    let start = Instant::now();
    let report = run_scaling(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s1 = report.meta_f64("slope_d1").unwrap();
    let s2 = report.meta_f64("slope_d2").unwrap();
    let pass = s1 >= SLOPE_MIN && s2 >= SLOPE_MIN && secs < SCALING_SECONDS;
    (pass, format!("slope_d1={s1:.4} slope_d2={s2:.4} time={secs:.1}s"))
}

fn cell_structure() -> (bool, String) {
    let p = PotentialSpec::reference_composite().build(1, 1).unwrap();
    let zs: Vec<Vec<f64>> = (0..11).map(|k| vec![-1.0 + 0.2 * k as f64]).collect();
    let opts = SolverOptions::default();
    let start = Instant::now();
    let table = convergence_scan(&p, &zs, &LADDER, CellGrid::default(), &opts, 2.0 * opts.tol).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let above = table.rows.iter().map(|r| r.w_xi - r.w_h).fold(f64::NEG_INFINITY, f64::max);
    let wells = table.rows.iter().filter(|r| r.z[0].abs() == 1.0).map(|r| r.w_xi.abs()).fold(0.0, f64::max);
    let mut drop = 0.0f64;
    for z in 0..zs.len() {
        let col: Vec<f64> = table.rows.iter().filter(|r| r.z == zs[z]).map(|r| r.w_xi).collect();
        for w in col.windows(2) {
            drop = drop.max(w[0] - w[1]);
        }
    }
    let pass = above <= CELL_ABOVE_TOL && drop <= 2.0 * opts.tol && wells <= CELL_WELL_TOL && secs < CELL_SECONDS;
    (pass, format!("max(W^xi-W^h)={above:.2e} max_drop={drop:.2e} well_value={wells:.1e} time={secs:.2}s"))
}

fn sigma_xi_convergence() -> (bool, String) {
    let p = PotentialSpec::reference_composite().build(1, 1).unwrap();
    let wh = HomogenizedPotential::with_default_resolution(p.clone());
    let sh = sigma_h(&wh, &[-1.0], &[1.0]).unwrap().value;
    let start = Instant::now();
    let ladder = sigma_xi_ladder(&p, &LADDER, &LadderOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let values: Vec<f64> = ladder.iter().map(|(_, t)| t.value).collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - SIGMA_XI_MONOTONE_ATOL);
    let rel = (values.last().unwrap() - sh).abs() / sh;
    let pass = monotone && rel <= SIGMA_XI_RTOL && secs < CELL_SECONDS;
    (pass, format!("sigma_xi={values:.5?} sigma_h={sh:.5} rel_gap={rel:.2e} time={secs:.2}s"))
}

fn profile_ode() -> (bool, String) {
    let w = WellPotential::standard();
    let segment = Curve::segment(&[-1.0], &[1.0], 2).unwrap();
    let p = build_profile(&segment, &w, 1.0, Some(1e-6)).unwrap();
    let sup = p.samples(4001).iter().map(|(t, _, u)| (u[0] - t.tanh()).abs()).fold(0.0, f64::max);
    // Lower constant: length over twice the largest speed bound on the segment, where sup W = 1.
    let length = 2.0;
    let mut bounds = true;
    for &eps in &[0.05, 0.2, 1.0] {
        for &lambda in &[1e-6, 1e-4, 1e-2] {
            let q = build_profile(&segment, &w, eps, Some(lambda)).unwrap();
            let lower = length / (2.0 * (lambda + 1.0f64).sqrt()) * eps;
            let upper = eps / lambda.sqrt() * length;
            bounds &= q.tau >= lower * (1.0 - 1e-12) && q.tau <= upper;
        }
    }
    (sup <= TANH_SUP && bounds, format!("sup|u-tanh|={sup:.2e} tau_bounds_3x3={bounds}"))
}

fn mass_machinery() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut idempotent = true;
    for seed in 0..10u64 {
        let geom = if seed % 2 == 0 {
            GridGeometry::new(vec![0.0], 0.01, vec![100]).unwrap()
        } else {
            GridGeometry::new(vec![0.0, 0.0], 0.05, vec![20, 20]).unwrap()
        };
        let u = random_field(&geom, &[-1.0], &[1.0], seed);
        let m = 0.1 + 0.08 * seed as f64;
        let p = project_mass(&u, m, &[-1.0], &[1.0]).unwrap();
        let target = -m + (1.0 - m) * 1.0;
        worst = worst.max((p.mean()[0] - target).abs());
        idempotent &= project_mass(&p, m, &[-1.0], &[1.0]).unwrap().values() == p.values();
    }
    let cfg = Config::from_toml(MASS_CONFIG).unwrap();
    let report = run_mass(&cfg).unwrap();
    let bubbles: Vec<f64> = report.rows.iter().map(|r| r.bubble_energy.unwrap()).collect();
    let decay = bubbles.windows(2).all(|w| w[1] * BUBBLE_FACTOR <= w[0]);
    let run_mass_err = report.rows.iter().map(|r| r.mass_error.unwrap()).fold(0.0, f64::max);
    let alpha = default_alpha(2);
    let pass = worst <= MASS_ATOL && idempotent && decay && run_mass_err <= MASS_ATOL && alpha > 0.5 && alpha < 0.75;
    (
        pass,
        format!(
            "projection_err={worst:.1e} idempotent={idempotent} alpha={alpha} bubble={bubbles:.4?} run_mass_err={run_mass_err:.1e}"
        ),
    )
}

fn gradient_check() -> (bool, String) {
    let base = PotentialSpec::reference_composite();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for k in 0..GRADIENT_FIELDS {
        let n = 1 + k % 2;
        let p = base.build(n, 1).unwrap().smoothed(0.05).unwrap();
        let (geom, eps, delta, eta) = if n == 1 {
            (GridGeometry::new(vec![0.0], 1.0 / 256.0, vec![256]).unwrap(), 0.25, 1.0 / 8.0, 1.0 / 32.0)
        } else {
            (GridGeometry::new(vec![0.0, 0.0], 1.0 / 64.0, vec![32, 32]).unwrap(), 0.5, 0.25, 0.125)
        };
        let problem = EnergyProblem::new(eps, delta, eta, p);
        let u = random_field(&geom, &[-1.0], &[1.0], rng.gen());
        let dir: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = gradient(&u, &problem).unwrap();
        let analytic: f64 = g.values().iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() * geom.cell_volume();
        let t = 1e-6;
        let shifted = |s: f64| {
            let vals: Vec<f64> = u.values().iter().zip(&dir).map(|(x, d)| x + s * d).collect();
            energy(&u.with_values(vals).unwrap(), &problem).unwrap().total
        };
        let fd = (shifted(t) - shifted(-t)) / (2.0 * t);
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-300));
    }
    (worst <= GRADIENT_RTOL, format!("max_rel_err={worst:.2e} over {GRADIENT_FIELDS} fields"))
}

#[test]
fn acceptance_criteria() {
    let mut v = Verdicts(Vec::new());
    type Criterion = (usize, fn() -> (bool, String));
    let checks: [Criterion; 10] = [
        (1, quartic_sigma),
        (2, composite_sigma),
        (3, gamma_limit),
        (4, unfolding_identities),
        (5, defect_scaling),
        (6, cell_structure),
        (7, sigma_xi_convergence),
        (8, profile_ode),
        (9, mass_machinery),
        (10, gradient_check),
    ];
    for (id, check) in checks {
        let (pass, detail) = check();
        v.record(id, pass, detail);
    }
    let failed: Vec<usize> = v.0.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
