//! The discrete functional `F(u) = ∫ (1/ε) W(x/δ, x/η, u) + ε |∇u|²`, its gradient,
//! minimization, mass projection and phase diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{well_side, GridField, GridGeometry};
use crate::numeric::KahanSum;
use crate::potential::SharedPotential;

const CHUNK: usize = 1 << 15;

/// Per-chunk gradient and potential sums, with per-region pairs.
type ChunkSums = (f64, f64, Vec<(f64, f64)>);

/// Behaviour at the ends of the grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Boundary {
    /// One-sided stencils, no boundary term.
    Neumann,
    /// One-dimensional grids only: ghost cells holding `lower` before the first cell and `upper`
    /// after the last, so the field is extended by constants.
    Pinned { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct EnergyProblem {
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
    pub potential: SharedPotential,
    pub boundary: Boundary,
    /// Required grid cells per `η`.
    pub cells_per_eta: f64,
}

impl EnergyProblem {
    pub fn new(eps: f64, delta: f64, eta: f64, potential: SharedPotential) -> Self {
        Self { eps, delta, eta, potential, boundary: Boundary::Neumann, cells_per_eta: 8.0 }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_cells_per_eta(mut self, cells: f64) -> Self {
        self.cells_per_eta = cells;
        self
    }

    fn validate(&self, u: &GridField) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("delta", self.delta), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.potential.oscillates() && u.h() > self.eta / self.cells_per_eta * (1.0 + 1e-9) {
            return Err(Error::UnresolvedScale { h: u.h(), eta: self.eta, cells: self.cells_per_eta });
        }
        if u.m() != self.potential.dim_m() || u.n() != self.potential.dim_n() {
            return Err(invalid("field dimensions do not match the potential"));
        }
        if let Boundary::Pinned { lower, upper } = &self.boundary {
            if u.n() != 1 {
                return Err(Error::UnsupportedDimension("pinned ends need a one-dimensional grid".into()));
            }
            if lower.len() != u.m() || upper.len() != u.m() {
                return Err(invalid("pinned values must match the field dimension"));
            }
        }
        u.check_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionEnergy {
    pub potential: f64,
    pub gradient: f64,
}

impl RegionEnergy {
    pub fn total(&self) -> f64 {
        self.potential + self.gradient
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    /// `(1/ε) ∫ W`.
    pub potential: f64,
    /// `ε ∫ |∇u|²`.
    pub gradient: f64,
    pub total: f64,
    pub regions: Vec<RegionEnergy>,
}

/// Integer cell coordinates of an origin-aligned grid, for exact fractional parts.
#[derive(Clone, Debug)]
struct Aligned {
    offset: Vec<i64>,
    k1: Vec<i64>,
    k2: Vec<i64>,
}

/// Per-grid evaluation state: coefficient layout and neighbour structure.
pub struct Evaluator<'a> {
    pub problem: &'a EnergyProblem,
    geom: GridGeometry,
    m: usize,
    strides: Vec<usize>,
    aligned: Option<Aligned>,
    /// Mixture component of each cell when every cell is a pure phase.
    phase: Option<Vec<u8>>,
}

fn integer_ratio(x: f64, h: f64) -> Option<i64> {
    let q = x / h;
    let r = q.round();
    ((q - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r as i64)
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a EnergyProblem, u: &GridField) -> Result<Self> {
        problem.validate(u)?;
        let geom = u.geometry();
        let n = geom.n();
        let p = &problem.potential;
        let aligned = (|| {
            let s1 = p.cell1().sides()?;
            let s2 = p.cell2().sides()?;
            let offset = geom.lo.iter().map(|&l| integer_ratio(l, geom.h)).collect::<Option<Vec<_>>>()?;
            let k1 = s1.iter().map(|&s| integer_ratio(problem.delta * s, geom.h)).collect::<Option<Vec<_>>>()?;
            let k2 = s2.iter().map(|&s| integer_ratio(problem.eta * s, geom.h)).collect::<Option<Vec<_>>>()?;
            Some(Aligned { offset, k1, k2 })
        })();
        let mut ev = Self { problem, strides: geom.strides(), geom, m: u.m(), aligned, phase: None };
        if let Some(comps) = p.components() {
            let k = comps.len();
            if k <= u8::MAX as usize {
                let len = ev.geom.len();
                let chunks: Vec<Option<Vec<u8>>> = (0..len.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| {
                        let (s, e) = (c * CHUNK, ((c + 1) * CHUNK).min(len));
                        let mut idx = vec![0usize; n];
                        let (mut y1, mut y2) = (vec![0.0; n], vec![0.0; n]);
                        let mut w = vec![0.0; k];
                        let mut out = Vec::with_capacity(e - s);
                        for i in s..e {
                            ev.geom.multi_index(i, &mut idx);
                            ev.coords(&idx, &mut y1, &mut y2);
                            p.mixture(&y1, &y2, &mut w);
                            let hot = w.iter().position(|&x| x == 1.0)?;
                            if w.iter().enumerate().any(|(j, &x)| j != hot && x != 0.0) {
                                return None;
                            }
                            out.push(hot as u8);
                        }
                        Some(out)
                    })
                    .collect();
                ev.phase = chunks.into_iter().collect::<Option<Vec<_>>>().map(|v| v.concat());
            }
        }
        Ok(ev)
    }

    /// Cell-variable positions `x/δ`, `x/η` of the cell with multi-index `idx`.
    #[inline]
    fn coords(&self, idx: &[usize], y1: &mut [f64], y2: &mut [f64]) {
        let pr = self.problem;
        match &self.aligned {
            Some(al) => {
                let s1 = pr.potential.cell1();
                let s2 = pr.potential.cell2();
                for d in 0..idx.len() {
                    let g = al.offset[d] + idx[d] as i64;
                    let side1 = s1.basis()[d * idx.len() + d];
                    let side2 = s2.basis()[d * idx.len() + d];
                    y1[d] = (g.rem_euclid(al.k1[d]) as f64 + 0.5) / al.k1[d] as f64 * side1;
                    y2[d] = (g.rem_euclid(al.k2[d]) as f64 + 0.5) / al.k2[d] as f64 * side2;
                }
            }
            None => {
                for d in 0..idx.len() {
                    let x = self.geom.lo[d] + (idx[d] as f64 + 0.5) * self.geom.h;
                    y1[d] = x / pr.delta;
                    y2[d] = x / pr.eta;
                }
            }
        }
    }

    fn chunk_ranges(&self) -> Vec<(usize, usize)> {
        let len = self.geom.len();
        (0..len.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(len))).collect()
    }

    /// Visits cells `s..e` with their multi-index and cell-variable positions.
    fn visit(&self, s: usize, e: usize, mut f: impl FnMut(usize, &[usize], &[f64], &[f64])) {
        let n = self.geom.n();
        let mut idx = vec![0usize; n];
        let (mut y1, mut y2) = (vec![0.0; n], vec![0.0; n]);
        self.geom.multi_index(s, &mut idx);
        for i in s..e {
            if self.phase.is_none() {
                self.coords(&idx, &mut y1, &mut y2);
            }
            f(i, &idx, &y1, &y2);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < self.geom.dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    #[inline]
    fn w(&self, i: usize, y1: &[f64], y2: &[f64], z: &[f64]) -> f64 {
        match &self.phase {
            Some(ph) => self.problem.potential.components().unwrap()[ph[i] as usize].eval(z),
            None => self.problem.potential.eval(y1, y2, z),
        }
    }

    #[inline]
    fn dw(&self, i: usize, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.phase {
            Some(ph) => self.problem.potential.components().unwrap()[ph[i] as usize].grad(z, out),
            None => self.problem.potential.grad_z(y1, y2, z, out),
        }
    }

    #[inline]
    fn d2w(&self, i: usize, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.phase {
            Some(ph) => self.problem.potential.components().unwrap()[ph[i] as usize].hess(z, out),
            None => self.problem.potential.hess_z(y1, y2, z, out),
        }
    }

    fn pinned(&self) -> Option<(&[f64], &[f64])> {
        match &self.problem.boundary {
            Boundary::Pinned { lower, upper } => Some((lower, upper)),
            Boundary::Neumann => None,
        }
    }

    /// Squared forward differences owned by cell `i` (ghost edges go to the end cells).
    #[inline]
    fn edge_sq(&self, vals: &[f64], i: usize, idx: &[usize]) -> f64 {
        let m = self.m;
        let ui = &vals[i * m..(i + 1) * m];
        let mut s = 0.0;
        for d in 0..idx.len() {
            if idx[d] + 1 < self.geom.dims[d] {
                let j = i + self.strides[d];
                s += ui.iter().zip(&vals[j * m..(j + 1) * m]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            }
        }
        if let Some((lo, hi)) = self.pinned() {
            if idx[0] == 0 {
                s += ui.iter().zip(lo).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            }
            if idx[0] + 1 == self.geom.dims[0] {
                s += ui.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            }
        }
        s
    }

    /// Energy of `vals`, split over `labels` when given.
    pub fn energy(&self, vals: &[f64], labels: Option<(&[usize], usize)>) -> EnergyBreakdown {
        let m = self.m;
        let vol = self.geom.cell_volume();
        let h2 = self.geom.h * self.geom.h;
        let nreg = labels.map_or(0, |(_, k)| k);
        let parts: Vec<ChunkSums> = self
            .chunk_ranges()
            .into_par_iter()
            .map(|(s, e)| {
                let (mut pot, mut grad) = (KahanSum::new(), KahanSum::new());
                let mut reg = vec![(0.0, 0.0); nreg];
                self.visit(s, e, |i, idx, y1, y2| {
                    let wv = self.w(i, y1, y2, &vals[i * m..(i + 1) * m]);
                    let gv = self.edge_sq(vals, i, idx) / h2;
                    pot.add(wv);
                    grad.add(gv);
                    if let Some((lab, _)) = labels {
                        reg[lab[i]].0 += wv;
                        reg[lab[i]].1 += gv;
                    }
                });
                (pot.value(), grad.value(), reg)
            })
            .collect();
        let (mut pot, mut grad) = (KahanSum::new(), KahanSum::new());
        let mut regions = vec![RegionEnergy::default(); nreg];
        for (p, g, r) in parts {
            pot.add(p);
            grad.add(g);
            for (acc, (rp, rg)) in regions.iter_mut().zip(r) {
                acc.potential += rp;
                acc.gradient += rg;
            }
        }
        let (eps, c) = (self.problem.eps, vol);
        for r in regions.iter_mut() {
            r.potential *= c / eps;
            r.gradient *= c * eps;
        }
        let potential = pot.value() * c / eps;
        let gradient = grad.value() * c * eps;
        EnergyBreakdown { potential, gradient, total: potential + gradient, regions }
    }

    pub fn total(&self, vals: &[f64]) -> f64 {
        self.energy(vals, None).total
    }

    /// `L²` gradient `(1/ε) ∂_z W − 2ε Δ_h u`.
    pub fn gradient(&self, vals: &[f64], out: &mut [f64]) {
        let m = self.m;
        let eps = self.problem.eps;
        let c = 2.0 * eps / (self.geom.h * self.geom.h);
        let n = self.geom.n();
        let dims = &self.geom.dims;
        let pinned = self.pinned();
        let ranges = self.chunk_ranges();
        let mut slices: Vec<&mut [f64]> = Vec::with_capacity(ranges.len());
        let mut rest = out;
        for &(s, e) in &ranges {
            let (head, tail) = rest.split_at_mut((e - s) * m);
            slices.push(head);
            rest = tail;
        }
        ranges.into_par_iter().zip(slices).for_each(|((s, e), chunk)| {
            let mut g = vec![0.0; m];
            self.visit(s, e, |i, idx, y1, y2| {
                let ui = &vals[i * m..(i + 1) * m];
                self.dw(i, y1, y2, ui, &mut g);
                let o = &mut chunk[(i - s) * m..(i - s + 1) * m];
                for k in 0..m {
                    o[k] = g[k] / eps;
                }
                let mut push = |nb: &[f64]| {
                    for k in 0..m {
                        o[k] += c * (ui[k] - nb[k]);
                    }
                };
                for d in 0..n {
                    if idx[d] + 1 < dims[d] {
                        let j = i + self.strides[d];
                        push(&vals[j * m..(j + 1) * m]);
                    }
                    if idx[d] > 0 {
                        let j = i - self.strides[d];
                        push(&vals[j * m..(j + 1) * m]);
                    }
                }
                if let Some((lo, hi)) = pinned {
                    if idx[0] == 0 {
                        push(lo);
                    }
                    if idx[0] + 1 == dims[0] {
                        push(hi);
                    }
                }
            });
        });
    }

    /// Diagonal of `∂²F/∂u²` divided by the cell volume, for scalar fields on a line.
    fn tridiagonal(&self, vals: &[f64], diag: &mut [f64]) -> f64 {
        let eps = self.problem.eps;
        let c = 2.0 * eps / (self.geom.h * self.geom.h);
        let len = self.geom.len();
        let pinned = self.pinned().is_some();
        let ranges = self.chunk_ranges();
        let mut slices: Vec<&mut [f64]> = Vec::new();
        let mut rest = diag;
        for &(s, e) in &ranges {
            let (head, tail) = rest.split_at_mut(e - s);
            slices.push(head);
            rest = tail;
        }
        ranges.into_par_iter().zip(slices).for_each(|((s, e), chunk)| {
            let mut hs = [0.0];
            self.visit(s, e, |i, _, y1, y2| {
                self.d2w(i, y1, y2, &vals[i..i + 1], &mut hs);
                let deg = if pinned {
                    2.0
                } else {
                    f64::from(i > 0) + f64::from(i + 1 < len)
                };
                chunk[i - s] = hs[0] / eps + c * deg;
            });
        });
        -c
    }
}

pub fn energy(u: &GridField, problem: &EnergyProblem) -> Result<EnergyBreakdown> {
    Ok(Evaluator::new(problem, u)?.energy(u.values(), None))
}

/// Energy with per-region parts; `labels[i] < regions` for every cell.
pub fn energy_by_region(
    u: &GridField,
    problem: &EnergyProblem,
    labels: &[usize],
    regions: usize,
) -> Result<EnergyBreakdown> {
    if labels.len() != u.len() || labels.iter().any(|&l| l >= regions) {
        return Err(invalid("labels must cover every cell with values below the region count"));
    }
    Ok(Evaluator::new(problem, u)?.energy(u.values(), Some((labels, regions))))
}

pub fn gradient(u: &GridField, problem: &EnergyProblem) -> Result<GridField> {
    if !problem.potential.differentiable() {
        return Err(invalid("potential is not differentiable in z; use a smoothed variant"));
    }
    let ev = Evaluator::new(problem, u)?;
    let mut out = vec![0.0; u.values().len()];
    ev.gradient(u.values(), &mut out);
    u.with_values(out)
}

/// Adds the constant vector that moves the mean to `m a + (1 − m) b`.
pub fn project_mass(u: &GridField, m: f64, a: &[f64], b: &[f64]) -> Result<GridField> {
    let mut v = u.clone();
    project_mass_in_place(&mut v, m, a, b)?;
    Ok(v)
}

pub fn project_mass_in_place(u: &mut GridField, m: f64, a: &[f64], b: &[f64]) -> Result<()> {
    if !(m > 0.0 && m < 1.0) {
        return Err(invalid(format!("mass fraction must lie in (0, 1), got {m}")));
    }
    let target: Vec<f64> = a.iter().zip(b).map(|(x, y)| m * x + (1.0 - m) * y).collect();
    shift_mean(u.values_mut(), &target);
    Ok(())
}

fn mean_of(vals: &[f64], m: usize) -> Vec<f64> {
    let mut acc = vec![KahanSum::new(); m];
    for c in vals.chunks_exact(m) {
        for k in 0..m {
            acc[k].add(c[k]);
        }
    }
    let cnt = (vals.len() / m) as f64;
    acc.iter().map(|s| s.value() / cnt).collect()
}

fn shift_mean(vals: &mut [f64], target: &[f64]) {
    let m = target.len();
    for _ in 0..2 {
        let mean = mean_of(vals, m);
        let shift: Vec<f64> = target.iter().zip(&mean).map(|(t, x)| t - x).collect();
        // Sub-ulp residuals are left alone so that projecting twice changes nothing.
        if shift.iter().zip(target).all(|(&s, &t)| s.abs() <= 1e-15 * t.abs().max(1.0)) {
            return;
        }
        for c in vals.chunks_exact_mut(m) {
            for k in 0..m {
                c[k] += shift[k];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Armijo backtracking from a spectral step estimate, never below `ε h²/4` initially.
    Backtracking,
    /// Damped Newton with a tridiagonal solve; scalar fields on a line only.
    Newton,
    /// Newton when applicable, otherwise backtracking.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub step: StepRule,
    pub max_iter: usize,
    /// Stop when `|ΔF| <= tol · max(1, |F|)`.
    pub tol: f64,
    /// Mass fraction `m` of the `a` phase.
    pub mass: Option<f64>,
    pub seed: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { step: StepRule::Auto, max_iter: 2000, tol: 1e-11, mass: None, seed: 0 }
    }
}

impl MinimizeOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("stop tolerance must be positive"));
        }
        if let Some(m) = self.mass {
            if !(m > 0.0 && m < 1.0) {
                return Err(invalid(format!("mass fraction must lie in (0, 1), got {m}")));
            }
        }
        if let StepRule::Fixed(t) = self.step {
            if !(t > 0.0) {
                return Err(invalid("fixed step must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub field: GridField,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub breakdown: EnergyBreakdown,
}

/// Descends `F` from `u0`; with a mass target, every iterate has the prescribed mean.
pub fn minimize(u0: &GridField, problem: &EnergyProblem, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    opts.validate()?;
    if !problem.potential.differentiable() {
        return Err(invalid("potential is not differentiable in z; use a smoothed variant"));
    }
    let ev = Evaluator::new(problem, u0)?;
    let (a, b) = problem.potential.wells();
    let (a, b) = (a.to_vec(), b.to_vec());
    let target = opts.mass.map(|m| a.iter().zip(&b).map(|(x, y)| m * x + (1.0 - m) * y).collect::<Vec<f64>>());
    let mut u = u0.values().to_vec();
    if let Some(t) = &target {
        shift_mean(&mut u, t);
    }
    let newton = match opts.step {
        StepRule::Newton => {
            if u0.n() != 1 || u0.m() != 1 {
                return Err(Error::UnsupportedDimension("Newton steps need a scalar field on a line".into()));
            }
            true
        }
        StepRule::Auto => u0.n() == 1 && u0.m() == 1,
        _ => false,
    };
    let (trace, iterations, converged) = if newton {
        newton_loop(&ev, &mut u, opts, target.is_some())?
    } else {
        descent_loop(&ev, &mut u, opts, target.as_deref())?
    };
    let field = u0.with_values(u)?;
    let breakdown = ev.energy(field.values(), None);
    Ok(MinimizeResult { field, trace, iterations, converged, breakdown })
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let parts: Vec<f64> = x
        .par_chunks(CHUNK)
        .zip(y.par_chunks(CHUNK))
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    crate::numeric::kahan_sum(parts)
}

fn descent_loop(
    ev: &Evaluator,
    u: &mut Vec<f64>,
    opts: &MinimizeOptions,
    target: Option<&[f64]>,
) -> Result<(Vec<f64>, usize, bool)> {
    let m = ev.m;
    let vol = ev.geom.cell_volume();
    let eps = ev.problem.eps;
    let base_step = eps * ev.geom.h * ev.geom.h / 4.0;
    let mut e = ev.total(u);
    let e0 = e;
    let mut trace = vec![e];
    let mut g = vec![0.0; u.len()];
    let mut g_prev: Option<Vec<f64>> = None;
    let mut trial = vec![0.0; u.len()];
    let mut step_prev = base_step;
    let mut u_prev = u.clone();
    for it in 0..opts.max_iter {
        ev.gradient(u, &mut g);
        if target.is_some() {
            let mean = mean_of(&g, m);
            for c in g.chunks_exact_mut(m) {
                for k in 0..m {
                    c[k] -= mean[k];
                }
            }
        }
        let gg = dot(&g, &g) * vol;
        if gg == 0.0 {
            return Ok((trace, it, true));
        }
        let mut t = match (opts.step, &g_prev) {
            (StepRule::Fixed(t), _) => t,
            (_, Some(gp)) => {
                let sy: f64 = dot(&diff(u, &u_prev), &diff(&g, gp));
                let ss: f64 = dot(&diff(u, &u_prev), &diff(u, &u_prev));
                if sy > 0.0 {
                    (ss / sy).clamp(base_step, 1e6 * base_step.max(1e-12))
                } else {
                    2.0 * step_prev
                }
            }
            (_, None) => base_step,
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..u.len() {
                trial[i] = u[i] - t * g[i];
            }
            if let Some(tg) = target {
                shift_mean(&mut trial, tg);
            }
            let et = ev.total(&trial);
            if let StepRule::Fixed(_) = opts.step {
                if et > 10.0 * e0.abs().max(1e-300) {
                    return Err(Error::Divergence { energy: et, initial: e0 });
                }
                accepted = true;
                u_prev.copy_from_slice(u);
                std::mem::swap(u, &mut trial);
                let de = (e - et).abs();
                e = et;
                trace.push(e);
                if de <= opts.tol * e.abs().max(1.0) {
                    return Ok((trace, it + 1, true));
                }
                break;
            }
            if et <= e - 1e-4 * t * gg {
                accepted = true;
                u_prev.copy_from_slice(u);
                std::mem::swap(u, &mut trial);
                let de = e - et;
                e = et;
                trace.push(e);
                step_prev = t;
                if de <= opts.tol * e.abs().max(1.0) {
                    return Ok((trace, it + 1, true));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok((trace, it, true));
        }
        g_prev = Some(g.clone());
    }
    Ok((trace, opts.max_iter, false))
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Solves `(T + μ I) x = r` for the symmetric tridiagonal `T` with constant off-diagonal.
/// Returns `false` on a non-positive pivot.
fn thomas(diag: &[f64], off: f64, mu: f64, rhs: &mut [&mut [f64]], work: &mut [f64]) -> bool {
    let n = diag.len();
    let mut piv = diag[0] + mu;
    if piv <= 0.0 {
        return false;
    }
    work[0] = piv;
    for i in 1..n {
        let l = off / work[i - 1];
        piv = diag[i] + mu - l * off;
        if piv <= 1e-14 * (diag[i].abs() + mu + off.abs()) {
            return false;
        }
        work[i] = piv;
        for r in rhs.iter_mut() {
            r[i] -= l * r[i - 1];
        }
    }
    for r in rhs.iter_mut() {
        r[n - 1] /= work[n - 1];
        for i in (0..n - 1).rev() {
            r[i] = (r[i] - off * r[i + 1]) / work[i];
        }
    }
    true
}

fn newton_loop(
    ev: &Evaluator,
    u: &mut Vec<f64>,
    opts: &MinimizeOptions,
    mass: bool,
) -> Result<(Vec<f64>, usize, bool)> {
    let len = u.len();
    let vol = ev.geom.cell_volume();
    let mut e = ev.total(u);
    let mut trace = vec![e];
    let mut g = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut work = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut mu = 0.0f64;
    let mut stalls = 0;
    for it in 0..opts.max_iter {
        ev.gradient(u, &mut g);
        if mass {
            let mean = mean_of(&g, 1)[0];
            g.iter_mut().for_each(|x| *x -= mean);
        }
        let off = ev.tridiagonal(u, &mut diag);
        let scale = diag.iter().fold(0.0f64, |s, d| s.max(d.abs()));
        loop {
            p.iter_mut().zip(&g).for_each(|(x, y)| *x = -y);
            q.iter_mut().for_each(|x| *x = 1.0);
            let ok = if mass {
                thomas(&diag, off, mu, &mut [&mut p, &mut q], &mut work)
            } else {
                thomas(&diag, off, mu, &mut [&mut p], &mut work)
            };
            if ok {
                break;
            }
            mu = (mu * 10.0).max(1e-8 * scale);
        }
        if mass {
            let ratio = p.iter().sum::<f64>() / q.iter().sum::<f64>();
            p.iter_mut().zip(&q).for_each(|(x, y)| *x -= ratio * y);
        }
        let slope = dot(&g, &p) * vol;
        if !(slope < 0.0) {
            mu = (mu * 10.0).max(1e-8 * scale);
            stalls += 1;
            if stalls > 20 {
                return Ok((trace, it, true));
            }
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            trial.par_iter_mut().zip(u.par_iter()).zip(p.par_iter()).for_each(|((x, a), b)| *x = a + t * b);
            let et = ev.total(&trial);
            if et <= e + 1e-4 * t * slope {
                let de = e - et;
                std::mem::swap(u, &mut trial);
                e = et;
                trace.push(e);
                accepted = true;
                mu *= 0.1;
                if mu < 1e-12 * scale {
                    mu = 0.0;
                }
                if de <= opts.tol * e.abs().max(1.0) || -slope <= 1e-3 * opts.tol * e.abs().max(1.0) {
                    return Ok((trace, it + 1, true));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if -slope <= 1e-2 * opts.tol.sqrt() * e.abs().max(1.0) {
                return Ok((trace, it, true));
            }
            mu = (mu * 10.0).max(1e-6 * scale);
            stalls += 1;
            if stalls > 20 {
                return Ok((trace, it, false));
            }
        }
    }
    Ok((trace, opts.max_iter, false))
}

/// i.i.d. samples on the segment `[a, b]` with small transverse noise for `M > 1`.
pub fn random_field(geom: &GridGeometry, a: &[f64], b: &[f64], seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = a.len();
    let span = crate::numeric::dist(a, b);
    GridField::from_fn(geom, m, |_, out| {
        let t: f64 = rng.gen();
        for k in 0..m {
            out[k] = a[k] + t * (b[k] - a[k]);
            if m > 1 {
                out[k] += 0.05 * span * (rng.gen::<f64>() - 0.5);
            }
        }
    })
}

/// Interface measure of the `a`-phase of `u` (thresholded at the midpoint of `[a, b]`).
///
/// One dimension counts sign changes; two dimensions use marching squares on the continuous
/// projection; three and more count faces and multiply by the mean-projection factor
/// `1/E[Σ|n_i|]` (2/3 in three dimensions).
pub fn perimeter(u: &GridField, a: &[f64], b: &[f64]) -> f64 {
    let phi: Vec<f64> = (0..u.len()).map(|i| well_side(u.value(i), a, b)).collect();
    let geom = u.geometry();
    match geom.n() {
        1 => phi.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count() as f64,
        2 => marching_squares_length(&phi, geom.dims[0], geom.dims[1], geom.h),
        n => {
            let strides = geom.strides();
            let mut idx = vec![0; n];
            let mut faces = 0usize;
            for i in 0..phi.len() {
                geom.multi_index(i, &mut idx);
                for d in 0..n {
                    if idx[d] + 1 < geom.dims[d] && (phi[i] >= 0.0) != (phi[i + strides[d]] >= 0.0) {
                        faces += 1;
                    }
                }
            }
            faces as f64 * geom.h.powi(n as i32 - 1) * face_count_factor(n)
        }
    }
}

/// `1 / E[Σ_i |n_i|]` for `n` uniform on the unit sphere of `R^N`.
pub fn face_count_factor(n: usize) -> f64 {
    let mean_abs = (ln_gamma(n as f64 / 2.0) - ln_gamma((n as f64 + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt();
    1.0 / (n as f64 * mean_abs)
}

fn ln_gamma(x: f64) -> f64 {
    // Half-integer arguments only.
    let mut v = if (x - x.floor()).abs() < 1e-12 { 0.0 } else { 0.5 * std::f64::consts::PI.ln() };
    let mut t = if (x - x.floor()).abs() < 1e-12 { 1.0 } else { 0.5 };
    while t < x - 1e-12 {
        v += t.ln();
        t += 1.0;
    }
    v
}

fn marching_squares_length(phi: &[f64], nx: usize, ny: usize, h: f64) -> f64 {
    let at = |i: usize, j: usize| phi[i * ny + j];
    let mut total = KahanSum::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut pts: Vec<(f64, f64)> = Vec::with_capacity(4);
            for k in 0..4 {
                let (v0, v1) = (c[k], c[(k + 1) % 4]);
                if (v0 >= 0.0) != (v1 >= 0.0) {
                    let t = v0 / (v0 - v1);
                    let (p0, p1) = (pos[k], pos[(k + 1) % 4]);
                    pts.push((p0.0 + t * (p1.0 - p0.0), p0.1 + t * (p1.1 - p0.1)));
                }
            }
            let seg = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            match pts.len() {
                2 => total.add(seg(pts[0], pts[1]) * h),
                4 => {
                    // Saddle: the centre value decides which corners connect.
                    let centre = c.iter().sum::<f64>() / 4.0;
                    let (l1, l2) = if (centre >= 0.0) == (c[0] >= 0.0) {
                        (seg(pts[0], pts[1]), seg(pts[2], pts[3]))
                    } else {
                        (seg(pts[3], pts[0]), seg(pts[1], pts[2]))
                    };
                    total.add((l1 + l2) * h);
                }
                _ => {}
            }
        }
    }
    total.value()
}

/// `∫ |u − π(u)|` where `π` snaps each sample to the nearer well.
pub fn bv_projection_distance(u: &GridField, a: &[f64], b: &[f64]) -> f64 {
    let s: KahanSum = (0..u.len())
        .map(|i| {
            let z = u.value(i);
            let w = if well_side(z, a, b) < 0.0 { a } else { b };
            crate::numeric::dist(z, w)
        })
        .collect();
    s.value() * u.cell_volume()
}
