//! Scale schedules, experiment configs, the three experiment drivers, CSV reports and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_problem::{build_ladder, zero_set_radius, CellGrid, SolverOptions, ZeroSearch};
use crate::energy::{
    bv_projection_distance, energy_by_region, minimize, perimeter, Boundary, EnergyProblem, MinimizeOptions,
    StepRule,
};
use crate::error::{Error, Result};
use crate::geodesic::{sigma_h, sigma_xi, TensionResult, WellBalls};
use crate::grid::{GridField, GridGeometry, PhaseMask};
use crate::numeric::{loglog_slope, KahanSum};
use crate::potential::{potential_hash, HomogenizedPotential, PotentialSpec, SharedPotential, DEFAULT_CELL_RES};
use crate::profile::{
    bubble_center, build_profile, mass_repair, phase_fraction, recovery_from_distance, signed_distance,
    unit_ball_volume, TransitionProfile,
};
use crate::unfolding::{decompose, defect_norms_with};

pub const SCHEMA: u32 = 1;

/// One level `(ε_n, δ_n, η_n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scales {
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
}

/// `ε_n = eps0 · ratio^n`, `δ_n = ε_n^delta_power`, `η_n = δ_n^eta_power`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "d_eps0")]
    pub eps0: f64,
    #[serde(default = "d_ratio")]
    pub ratio: f64,
    #[serde(default = "d_two")]
    pub delta_power: f64,
    #[serde(default = "d_two")]
    pub eta_power: f64,
    #[serde(default = "d_levels")]
    pub levels: usize,
    /// Grid cells per `η` when the domain spacing is not fixed.
    #[serde(default = "d_cells")]
    pub cells_per_eta: f64,
}

fn d_eps0() -> f64 {
    0.1
}
fn d_ratio() -> f64 {
    0.5
}
fn d_two() -> f64 {
    2.0
}
fn d_levels() -> usize {
    4
}
fn d_cells() -> f64 {
    8.0
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { eps0: 0.1, ratio: 0.5, delta_power: 2.0, eta_power: 2.0, levels: 4, cells_per_eta: 8.0 }
    }
}

/// Scale levels in the regime `η_n ≪ δ_n ≪ ε_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleSchedule {
    pub levels: Vec<Scales>,
}

impl ScaleSchedule {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        if spec.levels == 0 {
            return Err(Error::Regime("schedule needs at least one level".into()));
        }
        let levels = (0..spec.levels)
            .map(|n| {
                let eps = spec.eps0 * spec.ratio.powi(n as i32);
                let delta = eps.powf(spec.delta_power);
                Scales { n, eps, delta, eta: delta.powf(spec.eta_power) }
            })
            .collect();
        Self::new(levels)
    }

    /// Validates an explicit list.
    pub fn new(levels: Vec<Scales>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Regime("schedule needs at least one level".into()));
        }
        for s in &levels {
            if !(s.eps > 0.0 && s.delta > 0.0 && s.eta > 0.0) || !(s.eps.is_finite()) {
                return Err(Error::Regime(format!("level {} has a nonpositive scale", s.n)));
            }
            if !(s.eta < s.delta && s.delta < s.eps) {
                return Err(Error::Regime(format!("level {} does not satisfy eta < delta < eps", s.n)));
            }
        }
        for w in levels.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            if !(q.eps < p.eps && q.delta < p.delta && q.eta < p.eta) {
                return Err(Error::Regime(format!("scales do not decrease from level {} to {}", p.n, q.n)));
            }
            if !(q.delta / q.eps < p.delta / p.eps) {
                return Err(Error::Regime(format!("delta/eps does not decrease at level {}", q.n)));
            }
            if !(q.eta / q.delta < p.eta / p.delta) {
                return Err(Error::Regime(format!("eta/delta does not decrease at level {}", q.n)));
            }
        }
        Ok(Self { levels })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Target {
    /// Everything in the `a` phase.
    None,
    /// `a` phase on `{x_axis < at}`.
    Half {
        #[serde(default)]
        axis: usize,
        at: f64,
    },
    /// `a` phase on a ball.
    Disk { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default = "d_one")]
    pub dim: usize,
    /// Order-parameter dimension when the wells are not given.
    #[serde(default = "d_one")]
    pub m: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub target: Target,
    /// Fixed grid spacing; otherwise `η_n / cells_per_eta` per level.
    #[serde(default)]
    pub h: Option<f64>,
    /// One-dimensional runs only: compute on a `δ`-aligned window of this many layer half-widths
    /// around the interface, with the wells pinned outside.
    #[serde(default)]
    pub window: Option<f64>,
}

fn d_one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepChoice {
    Auto,
    Newton,
    Backtracking,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    Recovery,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "d_step")]
    pub step: StepChoice,
    #[serde(default)]
    pub fixed_step: Option<f64>,
    #[serde(default = "d_iter")]
    pub max_iter: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_init")]
    pub init: InitChoice,
    /// Profile regularization; defaults to `(0.01 σ / L)²`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Quadrature nodes per axis for `W^h`.
    #[serde(default = "d_cell_res")]
    pub cell_res: usize,
    /// `ξ` values for the lower-bound check `F ≥ σ^ξ Per`; empty skips it.
    #[serde(default)]
    pub sigma_xi_ladder: Vec<f64>,
}

fn d_step() -> StepChoice {
    StepChoice::Auto
}
fn d_iter() -> usize {
    2000
}
fn d_tol() -> f64 {
    1e-11
}
fn d_init() -> InitChoice {
    InitChoice::Recovery
}
fn d_cell_res() -> usize {
    DEFAULT_CELL_RES
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: StepChoice::Auto,
            fixed_step: None,
            max_iter: d_iter(),
            tol: d_tol(),
            seed: 0,
            init: InitChoice::Recovery,
            lambda: None,
            cell_res: DEFAULT_CELL_RES,
            sigma_xi_ladder: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassConfig {
    /// `a`-phase fraction.
    pub m: f64,
    #[serde(default = "d_true")]
    pub repair: bool,
    /// Bubble radius exponent, `r_n = ε_n^α`.
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    #[serde(default = "d_lo")]
    pub ratio_lo: f64,
    #[serde(default = "d_hi")]
    pub ratio_hi: f64,
    /// Allowed growth of `|ratio − 1|` between consecutive levels.
    #[serde(default = "d_noise")]
    pub monotone_noise: f64,
    #[serde(default = "d_slope")]
    pub slope_min: f64,
    #[serde(default = "d_mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "d_factor")]
    pub bubble_factor: f64,
    /// Absolute slack in `F ≥ σ^ξ Per`.
    #[serde(default = "d_liminf")]
    pub liminf_tol: f64,
}

fn d_lo() -> f64 {
    0.9
}
fn d_hi() -> f64 {
    1.1
}
fn d_noise() -> f64 {
    0.02
}
fn d_slope() -> f64 {
    0.7
}
fn d_mass_tol() -> f64 {
    1e-12
}
fn d_factor() -> f64 {
    2.0
}
fn d_liminf() -> f64 {
    1e-6
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            ratio_lo: d_lo(),
            ratio_hi: d_hi(),
            monotone_noise: d_noise(),
            slope_min: d_slope(),
            mass_tol: d_mass_tol(),
            bubble_factor: d_factor(),
            liminf_tol: d_liminf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub potential: PotentialSpec,
    pub domain: DomainConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mass: Option<MassConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Result<ScaleSchedule> {
        ScaleSchedule::from_spec(&self.schedule)
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if d.dim == 0 || d.lo.len() != d.dim || d.hi.len() != d.dim {
            return Err(Error::Config("domain bounds must match the dimension".into()));
        }
        if d.lo.iter().zip(&d.hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Config("domain must have positive extent".into()));
        }
        match &d.target {
            Target::Half { axis, at } if *axis >= d.dim || !(*at > d.lo[*axis] && *at < d.hi[*axis]) => {
                return Err(Error::Config("half-space interface must cut the domain".into()));
            }
            Target::Disk { center, radius } if center.len() != d.dim || !(*radius > 0.0) => {
                return Err(Error::Config("disk needs a centre in the domain dimension and a radius".into()));
            }
            _ => {}
        }
        if d.window.is_some() && !(d.dim == 1 && matches!(d.target, Target::Half { .. })) {
            return Err(Error::Config("windows apply to one-dimensional half-space targets only".into()));
        }
        if let Some(m) = &self.mass {
            if !(m.m > 0.0 && m.m < 1.0) {
                return Err(Error::Config(format!("mass fraction must lie in (0, 1), got {}", m.m)));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if self.solver.step == StepChoice::Fixed && self.solver.fixed_step.is_none() {
            return Err(Error::Config("fixed step rule needs fixed_step".into()));
        }
        let schedule = self.schedule()?;
        let pot = self.potential.build(d.dim, d.m)?;
        if pot.oscillates() {
            if let Some(h) = d.h {
                let eta = schedule.levels.last().unwrap().eta;
                if h > eta / self.schedule.cells_per_eta * (1.0 + 1e-9) {
                    return Err(Error::UnresolvedScale { h, eta, cells: self.schedule.cells_per_eta });
                }
            }
        } else if d.h.is_none() {
            return Err(Error::Config("potentials without microstructure need domain.h".into()));
        }
        Ok(())
    }

    pub fn minimize_options(&self, mass: Option<f64>) -> MinimizeOptions {
        let step = match self.solver.step {
            StepChoice::Auto => StepRule::Auto,
            StepChoice::Newton => StepRule::Newton,
            StepChoice::Backtracking => StepRule::Backtracking,
            StepChoice::Fixed => StepRule::Fixed(self.solver.fixed_step.unwrap_or(0.0)),
        };
        MinimizeOptions { step, max_iter: self.solver.max_iter, tol: self.solver.tol, mass, seed: self.solver.seed }
    }
}

/// Sets the global pool size from `GAMMA_WORKERS`; returns the pool size in use.
pub fn init_workers() -> usize {
    if let Some(n) = std::env::var("GAMMA_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    rayon::current_num_threads()
}

/// Perimeter of the target set inside the domain.
pub fn target_perimeter(domain: &DomainConfig) -> f64 {
    match &domain.target {
        Target::None => 0.0,
        Target::Half { axis, .. } => (0..domain.dim).filter(|d| d != axis).map(|d| domain.hi[d] - domain.lo[d]).product(),
        Target::Disk { radius, .. } => {
            let n = domain.dim;
            n as f64 * unit_ball_volume(n) * radius.powi(n as i32 - 1)
        }
    }
}

fn in_target(target: &Target, x: &[f64]) -> bool {
    match target {
        Target::None => true,
        Target::Half { axis, at } => x[*axis] < *at,
        Target::Disk { center, radius } => crate::numeric::dist(x, center) < *radius,
    }
}

/// Shared state for all levels of a run.
pub struct RunContext {
    pub config: Config,
    pub potential: SharedPotential,
    pub homogenized: HomogenizedPotential,
    pub sigma: TensionResult,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub schedule: ScaleSchedule,
}

impl RunContext {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let d = &config.domain;
        let potential = config.potential.build(d.dim, d.m)?;
        let res = config.solver.cell_res;
        let homogenized = HomogenizedPotential::new(potential.clone(), res, res)?;
        let (a, b) = potential.wells();
        let (a, b) = (a.to_vec(), b.to_vec());
        let sigma = sigma_h(&homogenized, &a, &b)?;
        Ok(Self { config: config.clone(), schedule: config.schedule()?, potential, homogenized, sigma, a, b })
    }

    fn spacing(&self, s: &Scales) -> f64 {
        self.config.domain.h.unwrap_or(s.eta / self.config.schedule.cells_per_eta)
    }

    pub fn profile(&self, s: &Scales) -> Result<TransitionProfile> {
        build_profile(&self.sigma.curve, &self.homogenized, s.eps, self.config.solver.lambda)
    }

    /// Grid for level `s`; windows are `δ`-aligned and wide enough for the layer.
    pub fn level_geometry(&self, s: &Scales, tau: f64) -> Result<(GridGeometry, bool)> {
        let d = &self.config.domain;
        let h = self.spacing(s);
        if let (Some(w), Target::Half { at, .. }) = (d.window, &d.target) {
            let half = w * tau;
            let lo = (((at - half) / s.delta).floor() * s.delta).max(d.lo[0]);
            let hi = (((at + half) / s.delta).ceil() * s.delta).min(d.hi[0]);
            let lo = (lo / h).round() * h;
            let cells = ((hi - lo) / h).round() as usize;
            return Ok((GridGeometry::new(vec![lo], h, vec![cells])?, true));
        }
        Ok((GridGeometry::covering(&d.lo, &d.hi, h)?, false))
    }

    pub fn problem(&self, s: &Scales, windowed: bool) -> EnergyProblem {
        let p = EnergyProblem::new(s.eps, s.delta, s.eta, self.potential.clone())
            .with_cells_per_eta(self.config.schedule.cells_per_eta);
        if windowed {
            p.with_boundary(Boundary::Pinned { lower: self.a.clone(), upper: self.b.clone() })
        } else {
            p
        }
    }

    /// Sharp target field and its recovery sequence on `geom`.
    pub fn recovery(&self, geom: &GridGeometry, profile: &TransitionProfile) -> Result<(GridField, GridField)> {
        let target = &self.config.domain.target;
        let mask = PhaseMask::from_fn(geom, |x| in_target(target, x));
        let (a, b) = (&self.a, &self.b);
        let sharp = GridField::from_fn(geom, a.len(), |x, o| {
            o.copy_from_slice(if in_target(target, x) { a } else { b });
        });
        if matches!(target, Target::None) || mask.count() == 0 || mask.count() == mask.inside.len() {
            return Ok((sharp.clone(), sharp));
        }
        if geom.h > profile.tau / 4.0 {
            return Err(Error::LayerUnresolved { tau: profile.tau, h: geom.h });
        }
        let sd = signed_distance(&mask)?;
        drop(mask);
        let u = recovery_from_distance(&sd, profile)?;
        Ok((sharp, u))
    }
}

/// One report row; absent quantities stay empty in the CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
    pub h: f64,
    pub cells: usize,
    pub energy: Option<f64>,
    pub sigma_per: Option<f64>,
    pub ratio: Option<f64>,
    pub perimeter: Option<f64>,
    pub bv_distance: Option<f64>,
    pub mass_error: Option<f64>,
    pub bubble_energy: Option<f64>,
    pub d1_sq: Option<f64>,
    pub d2_sq: Option<f64>,
    pub eta_over_delta: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub kind: String,
    /// Header entries written as `# key=value` lines, sorted by key.
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    /// Wall time per row in seconds; kept out of the CSV so reports are reproducible.
    pub wall_times: Vec<f64>,
}

impl ExperimentReport {
    fn new(kind: &str, ctx: &RunContext) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("config_hash".into(), ctx.config.hash());
        meta.insert("potential".into(), ctx.potential.describe());
        meta.insert("potential_hash".into(), potential_hash(ctx.potential.as_ref()));
        meta.insert("sigma_h".into(), format!("{}", ctx.sigma.value));
        meta.insert("sigma_method".into(), ctx.sigma.method.as_str().into());
        let d = &ctx.config.domain;
        let grid = match d.h {
            Some(h) => format!("h={h}"),
            None => format!("h=eta/{}", ctx.config.schedule.cells_per_eta),
        };
        let grid = match d.window {
            Some(w) => format!("{grid};window={w}tau"),
            None => grid,
        };
        meta.insert("grid".into(), grid);
        Self { kind: kind.into(), meta, rows: Vec::new(), wall_times: Vec::new() }
    }

    pub fn sigma_h(&self) -> Option<f64> {
        self.meta.get("sigma_h").and_then(|v| v.parse().ok())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    /// `(ξ, σ^ξ)` pairs recorded by a run with a ladder.
    pub fn ladder(&self) -> Vec<(f64, f64)> {
        self.meta
            .get("sigma_xi")
            .map(|s| {
                s.split(';')
                    .filter_map(|p| {
                        let (x, y) = p.split_once(':')?;
                        Some((x.parse().ok()?, y.parse().ok()?))
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema={SCHEMA}")?;
        writeln!(w, "# kind={}", self.kind)?;
        for (k, v) in &self.meta {
            writeln!(w, "# {k}={v}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            csv.write_record(ROW_FIELDS)?;
        }
        for r in &self.rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut report = ExperimentReport::default();
        let mut body = String::new();
        let mut schema = None;
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
                match k {
                    "schema" => schema = Some(v.to_string()),
                    "kind" => report.kind = v.into(),
                    _ => {
                        report.meta.insert(k.into(), v.into());
                    }
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        if schema.as_deref() != Some(&SCHEMA.to_string()) {
            return Err(Error::Format(format!("unsupported report schema {schema:?}")));
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        for row in rd.deserialize() {
            report.rows.push(row?);
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let timing = path.with_extension("timing.csv");
        let mut t = String::from("n,wall_seconds\n");
        for (r, s) in self.rows.iter().zip(&self.wall_times) {
            let _ = writeln!(t, "{},{s}", r.n);
        }
        std::fs::write(timing, t)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

const ROW_FIELDS: [&str; 17] = [
    "n",
    "eps",
    "delta",
    "eta",
    "h",
    "cells",
    "energy",
    "sigma_per",
    "ratio",
    "perimeter",
    "bv_distance",
    "mass_error",
    "bubble_energy",
    "d1_sq",
    "d2_sq",
    "eta_over_delta",
    "iterations",
];

fn base_row(s: &Scales, geom: &GridGeometry) -> ReportRow {
    ReportRow { n: s.n, eps: s.eps, delta: s.delta, eta: s.eta, h: geom.h, cells: geom.len(), ..Default::default() }
}

fn ratio(energy: f64, sigma_per: f64) -> Option<f64> {
    (sigma_per > 0.0).then(|| energy / sigma_per)
}

/// Levels run as independent jobs; rows are assembled in level order.
fn run_levels(
    ctx: &RunContext,
    job: impl Fn(&Scales) -> Result<ReportRow> + Sync,
) -> Result<(Vec<ReportRow>, Vec<f64>)> {
    let out: Vec<(ReportRow, f64)> = ctx
        .schedule
        .levels
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let row = job(s)?;
            Ok((row, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// Minimizes from the recovery sequence at every level and compares with `σ^h Per`.
pub fn run_gamma(config: &Config) -> Result<ExperimentReport> {
    let ctx = RunContext::new(config)?;
    let mut report = ExperimentReport::new("gamma", &ctx);
    let per = target_perimeter(&config.domain);
    let (rows, times) = run_levels(&ctx, |s| {
        let profile = ctx.profile(s)?;
        let (geom, windowed) = ctx.level_geometry(s, profile.tau)?;
        let (_, init) = initial_field(&ctx, &geom, &profile)?;
        let problem = ctx.problem(s, windowed);
        let res = minimize(&init, &problem, &config.minimize_options(None))?;
        drop(init);
        let e = res.breakdown.total;
        if !e.is_finite() {
            return Err(Error::NonFinite(0));
        }
        let mut row = base_row(s, &geom);
        row.energy = Some(e);
        row.sigma_per = Some(ctx.sigma.value * per);
        row.ratio = ratio(e, ctx.sigma.value * per);
        row.perimeter = Some(perimeter(&res.field, &ctx.a, &ctx.b));
        row.bv_distance = Some(bv_projection_distance(&res.field, &ctx.a, &ctx.b));
        row.iterations = Some(res.iterations);
        Ok(row)
    })?;
    report.rows = rows;
    report.wall_times = times;
    if !config.solver.sigma_xi_ladder.is_empty() {
        let ladder = sigma_xi_ladder(&ctx.potential, &config.solver.sigma_xi_ladder, &LadderOptions::default())?;
        let text: Vec<String> = ladder.iter().map(|(x, t)| format!("{x}:{}", t.value)).collect();
        report.meta.insert("sigma_xi".into(), text.join(";"));
    }
    report.meta.insert("perimeter_target".into(), format!("{per}"));
    Ok(report)
}

fn initial_field(ctx: &RunContext, geom: &GridGeometry, profile: &TransitionProfile) -> Result<(GridField, GridField)> {
    match ctx.config.solver.init {
        InitChoice::Recovery => ctx.recovery(geom, profile),
        InitChoice::Random => {
            let (sharp, _) = ctx.recovery(geom, profile)?;
            Ok((sharp, crate::energy::random_field(geom, &ctx.a, &ctx.b, ctx.config.solver.seed)))
        }
    }
}

/// Defect norms of the recovery sequence at every level, with fitted log-log slopes.
pub fn run_scaling(config: &Config) -> Result<ExperimentReport> {
    let ctx = RunContext::new(config)?;
    let mut report = ExperimentReport::new("scaling", &ctx);
    let (rows, times) = run_levels(&ctx, |s| {
        let profile = ctx.profile(s)?;
        let (geom, _) = ctx.level_geometry(s, profile.tau)?;
        let (_, u) = ctx.recovery(&geom, &profile)?;
        let dec = decompose(&geom, s.delta, ctx.potential.cell1())?;
        let fill = vec![0.0; u.m()];
        let (d1, d2) = defect_norms_with(&u, &dec, s.eta, ctx.potential.cell2(), &fill)?;
        let mut row = base_row(s, &geom);
        row.d1_sq = Some(d1 * d1);
        row.d2_sq = Some(d2 * d2);
        row.eta_over_delta = Some(s.eta / s.delta);
        Ok(row)
    })?;
    if rows.len() >= 2 {
        let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
        let ratios: Vec<f64> = rows.iter().map(|r| r.eta_over_delta.unwrap()).collect();
        let d1: Vec<f64> = rows.iter().map(|r| r.d1_sq.unwrap()).collect();
        let d2: Vec<f64> = rows.iter().map(|r| r.d2_sq.unwrap()).collect();
        if d1.iter().chain(&d2).all(|&x| x > 0.0) {
            report.meta.insert("slope_d1".into(), format!("{}", loglog_slope(&deltas, &d1)));
            report.meta.insert("slope_d2".into(), format!("{}", loglog_slope(&ratios, &d2)));
        }
    }
    report.rows = rows;
    report.wall_times = times;
    Ok(report)
}

/// Default bubble exponent `1.2 · 2/(N+2)`, kept inside `(1/N, 3/(N+2))`.
pub fn default_alpha(n: usize) -> f64 {
    let (lo, hi) = (1.0 / n as f64, 3.0 / (n as f64 + 2.0));
    let alpha = 1.2 * 2.0 / (n as f64 + 2.0);
    let margin = 1e-3 * (hi - lo);
    alpha.clamp(lo + margin, hi - margin)
}

/// Mass-constrained minimization; in two or more dimensions the recovery sequence is first
/// repaired with a bubble of radius `ε_n^α`.
pub fn run_mass(config: &Config) -> Result<ExperimentReport> {
    let mass_cfg = config.mass.clone().ok_or_else(|| Error::Config("mass run needs a [mass] section".into()))?;
    let ctx = RunContext::new(config)?;
    let mut report = ExperimentReport::new("mass", &ctx);
    let per = target_perimeter(&config.domain);
    let n_dim = config.domain.dim;
    let alpha = mass_cfg.alpha.unwrap_or_else(|| default_alpha(n_dim.max(2)));
    let (rows, times) = run_levels(&ctx, |s| {
        let profile = ctx.profile(s)?;
        let (geom, windowed) = ctx.level_geometry(s, profile.tau)?;
        let (sharp, mut init) = initial_field(&ctx, &geom, &profile)?;
        // The limit field's own grid mass is the constraint, so the grid cannot create drift.
        let m = phase_fraction(&sharp.mean(), &ctx.a, &ctx.b);
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Config(format!("target phase fraction {m} is not in (0, 1)")));
        }
        drop(sharp);
        let problem = ctx.problem(s, windowed);
        let mut row = base_row(s, &geom);
        if n_dim >= 2 && mass_cfg.repair {
            let r = s.eps.powf(alpha);
            let (x0, room) = bubble_center(&init, &ctx.a, &ctx.b, profile.tau)?;
            if r > room {
                return Err(Error::BallIntersectsLayer);
            }
            let rep = mass_repair(&init, m, &x0, r, &ctx.a, &ctx.b)?;
            let mut labels = vec![0usize; rep.field.len()];
            for &i in &rep.ball_cells {
                labels[i] = 1;
            }
            let e = energy_by_region(&rep.field, &problem, &labels, 2)?;
            row.bubble_energy = Some(e.regions[1].total());
            init = rep.field;
        }
        let res = minimize(&init, &problem, &config.minimize_options(Some(m)))?;
        let target: Vec<f64> = ctx.a.iter().zip(&ctx.b).map(|(x, y)| m * x + (1.0 - m) * y).collect();
        let err = res.field.mean().iter().zip(&target).map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
        let e = res.breakdown.total;
        row.energy = Some(e);
        row.sigma_per = Some(ctx.sigma.value * per);
        row.ratio = ratio(e, ctx.sigma.value * per);
        row.perimeter = Some(perimeter(&res.field, &ctx.a, &ctx.b));
        row.bv_distance = Some(bv_projection_distance(&res.field, &ctx.a, &ctx.b));
        row.mass_error = Some(err);
        row.iterations = Some(res.iterations);
        Ok(row)
    })?;
    report.rows = rows;
    report.wall_times = times;
    report.meta.insert("alpha".into(), format!("{alpha}"));
    report.meta.insert("perimeter_target".into(), format!("{per}"));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderOptions {
    pub grid: CellGrid,
    pub solver: SolverOptions,
    /// `z`-lattice points spanning the cache box.
    pub points: usize,
    /// Cache box padding beyond the wells, as a fraction of `|b − a|`.
    pub pad: f64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self { grid: CellGrid::default(), solver: SolverOptions::default(), points: 161, pad: 0.25 }
    }
}

/// `σ^ξ` for each `ξ`, with well balls from the zero-set radius. One-dimensional order
/// parameters only.
pub fn sigma_xi_ladder(p: &SharedPotential, xis: &[f64], opts: &LadderOptions) -> Result<Vec<(f64, TensionResult)>> {
    if p.dim_m() != 1 {
        return Err(Error::UnsupportedDimension("the sigma-xi ladder is computed for scalar order parameters".into()));
    }
    let (a, b) = p.wells();
    let (a, b) = (a.to_vec(), b.to_vec());
    let span = (b[0] - a[0]).abs();
    let lo = [a[0].min(b[0]) - opts.pad * span];
    let hi = [a[0].max(b[0]) + opts.pad * span];
    let caches = build_ladder(p, xis, &lo, &hi, &[opts.points], opts.grid, &opts.solver)?;
    let search = ZeroSearch { grid: opts.grid, opts: opts.solver.clone(), ..Default::default() };
    xis.iter()
        .zip(caches)
        .map(|(&xi, cache)| {
            let r = zero_set_radius(p, xi, &search)?;
            let balls = WellBalls::new(&a, &b, r.ra, r.rb);
            Ok((xi, sigma_xi(&cache, &balls)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Acceptance predicates for a report, by report kind.
pub fn evaluate(report: &ExperimentReport, acc: &AcceptanceConfig) -> Vec<Check> {
    let mut out = Vec::new();
    let ratios: Vec<f64> = report.rows.iter().filter_map(|r| r.ratio).collect();
    let ratio_checks = |out: &mut Vec<Check>| {
        if let Some(&last) = ratios.last() {
            out.push(Check {
                name: "final_ratio".into(),
                passed: last >= acc.ratio_lo && last <= acc.ratio_hi,
                detail: format!("{last:.4} in [{}, {}]", acc.ratio_lo, acc.ratio_hi),
            });
            let monotone = ratios.windows(2).all(|w| (w[1] - 1.0).abs() <= (w[0] - 1.0).abs() + acc.monotone_noise);
            out.push(Check {
                name: "ratio_monotone".into(),
                passed: monotone,
                detail: ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" "),
            });
        }
    };
    match report.kind.as_str() {
        "gamma" => {
            ratio_checks(&mut out);
            let ladder = report.ladder();
            if let Some(best) = ladder.iter().map(|(_, s)| *s).reduce(f64::max) {
                let per = report.meta_f64("perimeter_target").unwrap_or(0.0);
                let ok = report.rows.iter().all(|r| r.energy.unwrap_or(0.0) >= best * per - acc.liminf_tol);
                out.push(Check { name: "liminf_bound".into(), passed: ok, detail: format!("sigma_xi max {best:.6}") });
            }
        }
        "scaling" => {
            for key in ["slope_d1", "slope_d2"] {
                let v = report.meta_f64(key);
                out.push(Check {
                    name: key.into(),
                    passed: v.is_some_and(|s| s >= acc.slope_min),
                    detail: match v {
                        Some(s) => format!("{s:.4} >= {}", acc.slope_min),
                        None => "missing".into(),
                    },
                });
            }
        }
        "mass" => {
            ratio_checks(&mut out);
            let worst = report.rows.iter().filter_map(|r| r.mass_error).fold(0.0, f64::max);
            out.push(Check {
                name: "mass_error".into(),
                passed: worst <= acc.mass_tol,
                detail: format!("{worst:e} <= {:e}", acc.mass_tol),
            });
            let bubbles: Vec<f64> = report.rows.iter().filter_map(|r| r.bubble_energy).collect();
            if bubbles.len() >= 2 {
                let ok = bubbles.windows(2).all(|w| w[1] * acc.bubble_factor <= w[0]);
                out.push(Check {
                    name: "bubble_decay".into(),
                    passed: ok,
                    detail: bubbles.iter().map(|b| format!("{b:.4e}")).collect::<Vec<_>>().join(" "),
                });
            }
        }
        _ => {}
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOutput {
    pub written: Vec<PathBuf>,
    /// Plots that were skipped, with the reason.
    pub notes: Vec<String>,
}

struct Series {
    label: &'static str,
    points: Vec<(f64, f64)>,
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Deterministic SVG line plot.
fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log: bool) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let tx = |v: f64| if log { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), tx(y)))).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{ylabel}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (k, v) in [(x0, "x0"), (x1, "x1")] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10" class="{v}">{:.4}</text>"#, px(k), h - m + 14.0, k);
    }
    for (k, v) in [(y0, "y0"), (y1, "y1")] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10" class="{v}">{:.4}</text>"#, m - 4.0, py(k), k);
    }
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(tx(x)), py(tx(y)))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, path.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, px(tx(x)), py(tx(y)));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="{c}">{}</text>"#, w - m - 120.0, m + 14.0 * i as f64, ser.label);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the plots the report has data for; missing data is noted, not an error.
pub fn emit_plots(report: &ExperimentReport, dir: &Path) -> Result<PlotOutput> {
    if report.rows.is_empty() {
        return Err(Error::InvalidParameter("report has no rows".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = PlotOutput::default();
    let write = |name: &str, body: String, out: &mut PlotOutput| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        out.written.push(path);
        Ok(())
    };
    let ratio: Vec<(f64, f64)> = report.rows.iter().filter_map(|r| Some((r.n as f64, r.ratio?))).collect();
    if ratio.is_empty() {
        out.notes.push("ratio.svg skipped: no ratio column".into());
    } else {
        let body = svg_plot("energy / (sigma Per)", "level n", "ratio", &[Series { label: "ratio", points: ratio }], false);
        write("ratio.svg", body, &mut out)?;
    }
    let d1: Vec<(f64, f64)> = report.rows.iter().filter_map(|r| Some((r.delta, r.d1_sq?))).collect();
    let d2: Vec<(f64, f64)> = report.rows.iter().filter_map(|r| Some((r.eta_over_delta?, r.d2_sq?))).collect();
    if d1.is_empty() && d2.is_empty() {
        out.notes.push("defects.svg skipped: no defect columns".into());
    } else {
        let series = [Series { label: "d1^2 vs delta", points: d1 }, Series { label: "d2^2 vs eta/delta", points: d2 }];
        write("defects.svg", svg_plot("defect norms (log-log)", "scale", "squared defect", &series, true), &mut out)?;
    }
    let ladder = report.ladder();
    if ladder.is_empty() {
        out.notes.push("sigma_xi.svg skipped: no ladder".into());
    } else {
        let body = svg_plot("sigma_xi ladder", "xi", "sigma_xi", &[Series { label: "sigma_xi", points: ladder }], false);
        write("sigma_xi.svg", body, &mut out)?;
    }
    Ok(out)
}

/// Sum of `values` with compensated summation; exported for report post-processing.
pub fn total(values: &[f64]) -> f64 {
    values.iter().copied().collect::<KahanSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_toml() -> &'static str {
        r#"
[potential]
kind = "composite"
theta1 = 0.5
theta2 = 0.5
c1 = 1.0
c2 = 4.0
c3 = 9.0

[domain]
lo = [0.0]
hi = [1.0]
window = 2.0
target = { shape = "half", at = 0.5 }

[schedule]
eps0 = 0.2
ratio = 0.5
delta_power = 2.0
eta_power = 1.5
levels = 2
"#
    }

    #[test]
    fn default_schedule_is_separated() {
        let s = ScaleSchedule::from_spec(&ScheduleSpec::default()).unwrap();
        assert_eq!(s.levels.len(), 4);
        assert!((s.levels[3].eps - 0.0125).abs() < 1e-15);
        assert!((s.levels[0].eta - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn regime_violations_rejected() {
        let bad = vec![
            Scales { n: 0, eps: 0.1, delta: 0.01, eta: 0.001 },
            Scales { n: 1, eps: 0.05, delta: 0.009, eta: 0.0001 },
        ];
        assert!(matches!(ScaleSchedule::new(bad), Err(Error::Regime(_))));
        let spec = ScheduleSpec { delta_power: 0.5, ..Default::default() };
        assert!(ScaleSchedule::from_spec(&spec).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = gamma_toml().replace("levels = 2", "levels = 2\nspeed = 3");
        assert!(matches!(Config::from_toml(&text), Err(Error::Config(_))));
        let cfg = Config::from_toml(gamma_toml()).unwrap();
        assert_eq!(cfg.hash(), Config::from_toml(gamma_toml()).unwrap().hash());
    }

    #[test]
    fn small_gamma_run_is_deterministic() {
        let cfg = Config::from_toml(gamma_toml()).unwrap();
        let r1 = run_gamma(&cfg).unwrap();
        let r2 = run_gamma(&cfg).unwrap();
        assert_eq!(r1.to_csv_string(), r2.to_csv_string());
        let back = ExperimentReport::read_csv(r1.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back.rows, r1.rows);
        assert_eq!(back.meta, r1.meta);
        let last = r1.rows.last().unwrap().ratio.unwrap();
        assert!((0.85..1.15).contains(&last), "{last}");
    }

    #[test]
    fn empty_target_has_no_ratio() {
        let text = gamma_toml().replace(r#"target = { shape = "half", at = 0.5 }"#, r#"target = { shape = "none" }"#).replace("window = 2.0\n", "");
        let text = text.replace("levels = 2", "levels = 1");
        let cfg = Config::from_toml(&text).unwrap();
        let r = run_gamma(&cfg).unwrap();
        assert_eq!(r.rows[0].ratio, None);
        assert_eq!(r.rows[0].energy, Some(0.0));
        assert!(r.to_csv_string().lines().last().unwrap().contains(",,"));
    }

    #[test]
    fn plots_are_reproducible() {
        let mut r = ExperimentReport { kind: "gamma".into(), ..Default::default() };
        r.rows = (0..3).map(|n| ReportRow { n, ratio: Some(1.0 + 0.1 / (n + 1) as f64), ..Default::default() }).collect();
        let dir = tempfile::tempdir().unwrap();
        let o1 = emit_plots(&r, dir.path()).unwrap();
        let first = std::fs::read(&o1.written[0]).unwrap();
        emit_plots(&r, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(&o1.written[0]).unwrap());
        assert_eq!(o1.written.len(), 1);
        assert_eq!(o1.notes.len(), 2);
        let svg = String::from_utf8(first).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
