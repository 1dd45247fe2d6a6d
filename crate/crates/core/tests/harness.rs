use gammalab::grid::PhaseMask;
use gammalab::harness::{emit_plots, evaluate, run_gamma, Config, ExperimentReport, RunContext, Target};
use gammalab::numeric::loglog_slope;
use gammalab::profile::phase_fraction;
use gammalab::Error;

const GAMMA: &str = include_str!("../../../configs/gamma_1d.toml");
const MASS: &str = include_str!("../../../configs/mass_2d.toml");

fn short_gamma() -> Config {
    let mut cfg = Config::from_toml(GAMMA).unwrap();
    cfg.schedule.levels = 2;
    cfg
}

#[test]
fn identical_configs_give_identical_bytes() {
    let cfg = short_gamma();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    run_gamma(&cfg).unwrap().save(&p1).unwrap();
    run_gamma(&cfg).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let text = std::fs::read_to_string(&p1).unwrap();
    assert!(text.starts_with("# schema=1\n"));
    assert!(dir.path().join("a.timing.csv").exists());
    let back = ExperimentReport::load(&p1).unwrap();
    assert_eq!(back.rows.len(), 2);
    assert!(back.rows.iter().all(|r| r.ratio == Some(r.energy.unwrap() / r.sigma_per.unwrap())));
}

#[test]
fn plots_come_from_the_report_alone() {
    let report = run_gamma(&short_gamma()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = emit_plots(&report, dir.path()).unwrap();
    let first: Vec<Vec<u8>> = out.written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let reloaded = ExperimentReport::read_csv(report.to_csv_string().as_bytes()).unwrap();
    let again = emit_plots(&reloaded, dir.path()).unwrap();
    let second: Vec<Vec<u8>> = again.written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, second);
    let ratio = String::from_utf8(first[0].clone()).unwrap();
    assert_eq!(ratio.matches("<circle").count(), report.rows.len());
}

#[test]
fn schema_mismatch_is_rejected() {
    let text = run_gamma(&short_gamma()).unwrap().to_csv_string().replacen("schema=1", "schema=7", 1);
    assert!(matches!(ExperimentReport::read_csv(text.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn bad_configs_fail_before_compute() {
    let swapped = GAMMA.replace("delta_power = 2.0", "delta_power = 0.5");
    assert!(matches!(Config::from_toml(&swapped), Err(Error::Regime(_))));
    let typo = GAMMA.replace("[schedule]", "[schedule]\nlevles = 3");
    assert!(matches!(Config::from_toml(&typo), Err(Error::Config(_))));
    let coarse = GAMMA.replace("window = 2.0", "window = 2.0\nh = 1e-6");
    assert!(matches!(Config::from_toml(&coarse), Err(Error::UnresolvedScale { .. })));
    let mass = MASS.replace("m = 0.5", "m = 1.5");
    assert!(matches!(Config::from_toml(&mass), Err(Error::Config(_))));
}

#[test]
fn acceptance_predicates_follow_the_rows() {
    let cfg = short_gamma();
    let mut report = run_gamma(&cfg).unwrap();
    assert!(evaluate(&report, &cfg.acceptance).iter().all(|c| c.passed));
    report.rows.last_mut().unwrap().ratio = Some(1.5);
    let checks = evaluate(&report, &cfg.acceptance);
    assert!(!checks.iter().find(|c| c.name == "final_ratio").unwrap().passed);
    assert!(!checks.iter().find(|c| c.name == "ratio_monotone").unwrap().passed);
}

#[test]
fn recovery_mass_drift_shrinks_with_eps() {
    let cfg = Config::from_toml(MASS).unwrap();
    let ctx = RunContext::new(&cfg).unwrap();
    let Target::Disk { .. } = cfg.domain.target else { panic!("disk target expected") };
    let mut eps = Vec::new();
    let mut drift = Vec::new();
    for s in &ctx.schedule.levels {
        let prof = ctx.profile(s).unwrap();
        let (geom, _) = ctx.level_geometry(s, prof.tau).unwrap();
        let (sharp, u) = ctx.recovery(&geom, &prof).unwrap();
        let m = PhaseMask::threshold(&sharp, &ctx.a, &ctx.b).fraction();
        eps.push(s.eps);
        drift.push((phase_fraction(&u.mean(), &ctx.a, &ctx.b) - m).abs());
    }
    let slope = loglog_slope(&eps, &drift);
    assert!(slope >= 0.9, "slope {slope}, drift {drift:?}");
}
