//! The auxiliary cell problem: `W^ξ(z)` as the infimum of the cell average of
//! `W(y1, y2, z + ψ1(y1) + ψ2(y1, y2))` over perturbations with `L²` norm at most `ξ`
//! and gradient norm at most one.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geodesic::BoundedField;
use crate::numeric::{dist, norm, KahanSum};
use crate::potential::{homogenize, ScalarField, SharedPotential, WellPotential};

/// Quadrature nodes per axis in `Q1` and `Q2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CellGrid {
    pub n1: usize,
    pub n2: usize,
}

impl CellGrid {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(invalid("cell resolutions need at least two nodes per axis"));
        }
        Ok(Self { n1, n2 })
    }
}

impl Default for CellGrid {
    fn default() -> Self {
        Self { n1: 32, n2: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Absolute objective change that stops the alternating sweeps.
    pub tol: f64,
    /// Sup-norm bound `M`; competitors are truncated at `M − |z|/2`. Defaults to `2 max(R, |z|)`.
    pub sup_bound: Option<f64>,
    /// Replace indicator jumps by ramps one quadrature cell wide when available.
    pub smooth: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-9, sup_bound: None, smooth: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Perturbation1 {
    pub n: usize,
    pub m: usize,
    pub res: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Perturbation2 {
    pub n: usize,
    pub m: usize,
    pub res1: usize,
    pub res2: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSolution {
    pub value: f64,
    pub w_h: f64,
    pub psi1: Perturbation1,
    pub psi2: Perturbation2,
    pub iterations: usize,
    pub step_norm: f64,
    pub converged: bool,
    /// Objective after each alternating sweep of the winning start.
    pub trace: Vec<f64>,
}

/// Discretized problem at fixed `z` and `ξ`.
struct Cell<'a> {
    p: &'a SharedPotential,
    n: usize,
    m: usize,
    c1: usize,
    c2: usize,
    y1: Vec<f64>,
    y2: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    vol1: f64,
    vol2: f64,
    phase: Option<Vec<u8>>,
    comps: Option<&'a [WellPotential]>,
}

fn nodes(sides: &[f64], res: usize) -> Vec<f64> {
    let n = sides.len();
    let count = res.pow(n as u32);
    let mut out = Vec::with_capacity(count * n);
    let mut idx = vec![0usize; n];
    for _ in 0..count {
        for d in 0..n {
            out.push((idx[d] as f64 + 0.5) / res as f64 * sides[d]);
        }
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < res {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl<'a> Cell<'a> {
    fn new(p: &'a SharedPotential, grid: CellGrid) -> Result<Self> {
        let n = p.dim_n();
        let s1 = p.cell1().sides().ok_or_else(|| Error::UnsupportedLattice("cell problem needs diagonal cells".into()))?;
        let s2 = p.cell2().sides().ok_or_else(|| Error::UnsupportedLattice("cell problem needs diagonal cells".into()))?;
        let c1 = grid.n1.pow(n as u32);
        let c2 = grid.n2.pow(n as u32);
        let y1 = nodes(&s1, grid.n1);
        let y2 = nodes(&s2, grid.n2);
        let comps = p.components();
        let phase = comps.and_then(|c| {
            let mut w = vec![0.0; c.len()];
            let mut out = Vec::with_capacity(c1 * c2);
            for i in 0..c1 {
                for j in 0..c2 {
                    p.mixture(&y1[i * n..(i + 1) * n], &y2[j * n..(j + 1) * n], &mut w);
                    let hot = w.iter().position(|&x| x == 1.0)?;
                    if w.iter().enumerate().any(|(k, &x)| k != hot && x != 0.0) {
                        return None;
                    }
                    out.push(hot as u8);
                }
            }
            Some(out)
        });
        Ok(Self {
            p,
            n,
            m: p.dim_m(),
            c1,
            c2,
            h1: s1.iter().map(|s| s / grid.n1 as f64).collect(),
            h2: s2.iter().map(|s| s / grid.n2 as f64).collect(),
            vol1: s1.iter().product(),
            vol2: s2.iter().product(),
            y1,
            y2,
            phase,
            comps,
        })
    }

    #[inline]
    fn w(&self, i: usize, j: usize, z: &[f64]) -> f64 {
        match (&self.phase, self.comps) {
            (Some(ph), Some(c)) => c[ph[i * self.c2 + j] as usize].eval(z),
            _ => self.p.eval(&self.y1[i * self.n..(i + 1) * self.n], &self.y2[j * self.n..(j + 1) * self.n], z),
        }
    }

    #[inline]
    fn dw(&self, i: usize, j: usize, z: &[f64], out: &mut [f64]) {
        match (&self.phase, self.comps) {
            (Some(ph), Some(c)) => c[ph[i * self.c2 + j] as usize].grad(z, out),
            _ => self.p.grad_z(&self.y1[i * self.n..(i + 1) * self.n], &self.y2[j * self.n..(j + 1) * self.n], z, out),
        }
    }

    fn objective(&self, z: &[f64], psi1: &[f64], psi2: &[f64]) -> f64 {
        let m = self.m;
        let mut arg = vec![0.0; m];
        let mut acc = KahanSum::new();
        for i in 0..self.c1 {
            for j in 0..self.c2 {
                let k = (i * self.c2 + j) * m;
                for d in 0..m {
                    arg[d] = z[d] + psi1[i * m + d] + psi2[k + d];
                }
                acc.add(self.w(i, j, &arg));
            }
        }
        acc.value() / (self.c1 * self.c2) as f64
    }

    /// Gradients with respect to the averaged inner products on `Q1` and `Q1 × Q2`.
    fn gradients(&self, z: &[f64], psi1: &[f64], psi2: &[f64], g1: &mut [f64], g2: &mut [f64]) {
        let m = self.m;
        let mut arg = vec![0.0; m];
        let mut g = vec![0.0; m];
        g1.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.c1 {
            for j in 0..self.c2 {
                let k = (i * self.c2 + j) * m;
                for d in 0..m {
                    arg[d] = z[d] + psi1[i * m + d] + psi2[k + d];
                }
                self.dw(i, j, &arg, &mut g);
                g2[k..k + m].copy_from_slice(&g);
                for d in 0..m {
                    g1[i * m + d] += g[d] / self.c2 as f64;
                }
            }
        }
    }
}

/// Squared `L²` norm of nodal values over a cell of volume `vol`.
fn l2_sq(vals: &[f64], count: usize, vol: f64) -> f64 {
    vals.iter().map(|x| x * x).sum::<f64>() * vol / count as f64
}

/// Squared `L²` norm of forward differences on an `n`-dimensional node block.
fn grad_sq(vals: &[f64], res: usize, n: usize, m: usize, h: &[f64], vol: f64) -> f64 {
    let count = res.pow(n as u32);
    let mut s = 0.0;
    let strides: Vec<usize> = (0..n).map(|d| res.pow((n - 1 - d) as u32)).collect();
    for i in 0..count {
        for d in 0..n {
            if (i / strides[d]) % res + 1 < res {
                let j = i + strides[d];
                let mut sq = 0.0;
                for k in 0..m {
                    let diff = vals[j * m + k] - vals[i * m + k];
                    sq += diff * diff;
                }
                s += sq / (h[d] * h[d]);
            }
        }
    }
    s * vol / count as f64
}

impl Perturbation1 {
    pub fn l2_norm(&self, vol: f64) -> f64 {
        l2_sq(&self.values, self.res.pow(self.n as u32), vol).sqrt()
    }

    pub fn grad_norm(&self, sides: &[f64]) -> f64 {
        let h: Vec<f64> = sides.iter().map(|s| s / self.res as f64).collect();
        grad_sq(&self.values, self.res, self.n, self.m, &h, sides.iter().product()).sqrt()
    }
}

impl Perturbation2 {
    pub fn l2_norm(&self, vol: f64) -> f64 {
        l2_sq(&self.values, self.res1.pow(self.n as u32) * self.res2.pow(self.n as u32), vol).sqrt()
    }

    /// Largest `‖∇_{y2} ψ2(y1, ·)‖` over the `y1` nodes.
    pub fn grad_norm(&self, sides2: &[f64]) -> f64 {
        let c2 = self.res2.pow(self.n as u32);
        let h: Vec<f64> = sides2.iter().map(|s| s / self.res2 as f64).collect();
        let vol: f64 = sides2.iter().product();
        self.values
            .chunks(c2 * self.m)
            .map(|row| grad_sq(row, self.res2, self.n, self.m, &h, vol).sqrt())
            .fold(0.0, f64::max)
    }
}

struct Projector<'a> {
    cell: &'a Cell<'a>,
    res1: usize,
    res2: usize,
    xi: f64,
    sup: f64,
}

impl Projector<'_> {
    fn radial_clamp(&self, vals: &mut [f64]) {
        let m = self.cell.m;
        for c in vals.chunks_exact_mut(m) {
            let r = norm(c);
            if r > self.sup {
                let s = self.sup / r;
                c.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    fn rescale_gradient(vals: &mut [f64], m: usize, gnorm: f64) {
        if gnorm <= 1.0 {
            return;
        }
        let count = vals.len() / m;
        let mut mean = vec![0.0; m];
        for c in vals.chunks_exact(m) {
            for k in 0..m {
                mean[k] += c[k] / count as f64;
            }
        }
        let s = 1.0 / gnorm;
        for c in vals.chunks_exact_mut(m) {
            for k in 0..m {
                c[k] = mean[k] + s * (c[k] - mean[k]);
            }
        }
    }

    fn psi1(&self, vals: &mut [f64]) {
        let c = self.cell;
        let g = grad_sq(vals, self.res1, c.n, c.m, &c.h1, c.vol1).sqrt();
        Self::rescale_gradient(vals, c.m, g);
        let l = l2_sq(vals, c.c1, c.vol1).sqrt();
        if l > self.xi {
            let s = if self.xi == 0.0 { 0.0 } else { self.xi / l };
            vals.iter_mut().for_each(|x| *x *= s);
        }
        self.radial_clamp(vals);
    }

    fn psi2(&self, vals: &mut [f64]) {
        let c = self.cell;
        for row in vals.chunks_mut(c.c2 * c.m) {
            let g = grad_sq(row, self.res2, c.n, c.m, &c.h2, c.vol2).sqrt();
            Self::rescale_gradient(row, c.m, g);
        }
        let l = l2_sq(vals, c.c1 * c.c2, c.vol1 * c.vol2).sqrt();
        if l > self.xi {
            let s = if self.xi == 0.0 { 0.0 } else { self.xi / l };
            vals.iter_mut().for_each(|x| *x *= s);
        }
        self.radial_clamp(vals);
    }
}

fn effective(p: &SharedPotential, grid: CellGrid, opts: &SolverOptions) -> Result<SharedPotential> {
    if opts.smooth || !p.differentiable() {
        if let Some(s) = p.smoothed(1.0 / grid.n2 as f64) {
            return Ok(s);
        }
    }
    if !p.differentiable() {
        return Err(invalid("potential is not differentiable in z and has no smoothed variant"));
    }
    Ok(p.clone())
}

/// Solves for `W^ξ(z)` from the zero start and constant shifts toward each well.
pub fn solve_w_xi(p: &SharedPotential, z: &[f64], xi: f64, grid: CellGrid, opts: &SolverOptions) -> Result<CellSolution> {
    solve_with_starts(p, z, xi, grid, opts, None)
}

/// As [`solve_w_xi`], additionally starting from `warm` (projected onto the new constraints).
pub fn solve_w_xi_warm(
    p: &SharedPotential,
    z: &[f64],
    xi: f64,
    grid: CellGrid,
    opts: &SolverOptions,
    warm: Option<&CellSolution>,
) -> Result<CellSolution> {
    solve_with_starts(p, z, xi, grid, opts, warm)
}

fn solve_with_starts(
    p: &SharedPotential,
    z: &[f64],
    xi: f64,
    grid: CellGrid,
    opts: &SolverOptions,
    warm: Option<&CellSolution>,
) -> Result<CellSolution> {
    if !(xi >= 0.0) || !xi.is_finite() {
        return Err(invalid(format!("xi must be nonnegative, got {xi}")));
    }
    let grid = CellGrid::new(grid.n1, grid.n2)?;
    if z.len() != p.dim_m() {
        return Err(invalid("z does not match the order-parameter dimension"));
    }
    let q = effective(p, grid, opts)?;
    let cell = Cell::new(&q, grid)?;
    let m = cell.m;
    let zn = norm(z);
    let big = opts.sup_bound.unwrap_or(2.0 * p.growth_r().max(zn));
    let sup = (big - zn / 2.0).max(0.0);
    let proj = Projector { cell: &cell, res1: grid.n1, res2: grid.n2, xi, sup };
    let w_h = homogenize(p.as_ref(), z, grid.n1, grid.n2);
    let (a, b) = p.wells();
    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![0.0; cell.c1 * m], vec![0.0; cell.c1 * cell.c2 * m])];
    for well in [a, b] {
        let d = dist(well, z);
        if d > 0.0 && xi > 0.0 {
            // Each block carries half the distance, capped by its L² budget.
            let r1 = (0.5 * d).min(xi / cell.vol1.sqrt());
            let r2 = (0.5 * d).min(xi / (cell.vol1 * cell.vol2).sqrt());
            let dir: Vec<f64> = well.iter().zip(z).map(|(w, x)| (w - x) / d).collect();
            let s1: Vec<f64> = (0..cell.c1).flat_map(|_| dir.iter().map(|x| x * r1)).collect();
            let s2: Vec<f64> = (0..cell.c1 * cell.c2).flat_map(|_| dir.iter().map(|x| x * r2)).collect();
            starts.push((s1, s2));
        }
    }
    if let Some(w) = warm {
        if w.psi1.values.len() == cell.c1 * m && w.psi2.values.len() == cell.c1 * cell.c2 * m {
            starts.push((w.psi1.values.clone(), w.psi2.values.clone()));
        }
    }
    let mut best: Option<CellSolution> = None;
    for (mut s1, mut s2) in starts {
        proj.psi1(&mut s1);
        proj.psi2(&mut s2);
        let sol = descend(&cell, &proj, z, s1, s2, opts, w_h, grid);
        if best.as_ref().is_none_or(|b| sol.value < b.value) {
            best = Some(sol);
        }
        if best.as_ref().is_some_and(|b| b.value == 0.0) {
            break;
        }
    }
    Ok(best.unwrap())
}

#[allow(clippy::too_many_arguments)]
fn descend(
    cell: &Cell,
    proj: &Projector,
    z: &[f64],
    mut psi1: Vec<f64>,
    mut psi2: Vec<f64>,
    opts: &SolverOptions,
    w_h: f64,
    grid: CellGrid,
) -> CellSolution {
    let mut j = cell.objective(z, &psi1, &psi2);
    let mut trace = vec![j];
    let mut g1 = vec![0.0; psi1.len()];
    let mut g2 = vec![0.0; psi2.len()];
    let (mut t1, mut t2) = (1.0f64, 1.0f64);
    let mut converged = false;
    let mut iterations = 0;
    let mut step_norm = 0.0;
    let n1 = psi1.len() / cell.m;
    let n12 = psi2.len() / cell.m;
    if proj.xi > 0.0 && j > 0.0 {
        for it in 0..opts.max_iter {
            iterations = it + 1;
            let j_start = j;
            step_norm = 0.0;
            for block in 0..2 {
                cell.gradients(z, &psi1, &psi2, &mut g1, &mut g2);
                let (vals, grad, t, count) = if block == 0 {
                    (&mut psi1, &g1, &mut t1, n1)
                } else {
                    (&mut psi2, &g2, &mut t2, n12)
                };
                let old = vals.clone();
                let mut accepted = false;
                for _ in 0..40 {
                    let mut trial: Vec<f64> = old.iter().zip(grad).map(|(x, g)| x - *t * g).collect();
                    if block == 0 {
                        proj.psi1(&mut trial);
                    } else {
                        proj.psi2(&mut trial);
                    }
                    let moved: f64 = trial.iter().zip(&old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / count as f64;
                    if moved == 0.0 {
                        break;
                    }
                    let jt = if block == 0 { cell.objective(z, &trial, &psi2) } else { cell.objective(z, &psi1, &trial) };
                    if jt <= j - 1e-4 / *t * moved {
                        j = jt;
                        step_norm += moved.sqrt();
                        if block == 0 {
                            psi1 = trial;
                        } else {
                            psi2 = trial;
                        }
                        accepted = true;
                        break;
                    }
                    *t *= 0.5;
                }
                if accepted {
                    *t = (*t * 2.0).min(1e3);
                } else {
                    *t = t.max(1e-12);
                }
            }
            trace.push(j);
            if j_start - j <= opts.tol || j == 0.0 {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
    }
    CellSolution {
        value: j.max(0.0),
        w_h,
        psi1: Perturbation1 { n: cell.n, m: cell.m, res: grid.n1, values: psi1 },
        psi2: Perturbation2 { n: cell.n, m: cell.m, res1: grid.n1, res2: grid.n2, values: psi2 },
        iterations,
        step_norm,
        converged,
        trace,
    }
}

/// Checks both norm constraints of `sol` within `tol`.
pub fn is_feasible(p: &SharedPotential, sol: &CellSolution, xi: f64, tol: f64) -> bool {
    let (Some(s1), Some(s2)) = (p.cell1().sides(), p.cell2().sides()) else {
        return false;
    };
    let v1: f64 = s1.iter().product();
    let v2: f64 = s2.iter().product();
    sol.psi1.l2_norm(v1) <= xi + tol
        && sol.psi1.grad_norm(&s1) <= 1.0 + tol
        && sol.psi2.l2_norm(v1 * v2) <= xi + tol
        && sol.psi2.grad_norm(&s2) <= 1.0 + tol
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroSetRadius {
    pub xi: f64,
    pub ra: f64,
    pub rb: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroSearch {
    pub grid: CellGrid,
    pub opts: SolverOptions,
    /// Values at or below this count as zero.
    pub zero_tol: f64,
    /// Bisection stops at this radius resolution.
    pub radius_tol: f64,
}

impl Default for ZeroSearch {
    fn default() -> Self {
        Self { grid: CellGrid::default(), opts: SolverOptions::default(), zero_tol: 1e-12, radius_tol: 1e-6 }
    }
}

/// Largest radius along each axis ray from a well on which `W^ξ` stays at zero; the per-well
/// radius is the smallest over rays.
pub fn zero_set_radius(p: &SharedPotential, xi: f64, search: &ZeroSearch) -> Result<ZeroSetRadius> {
    if !(xi >= 0.0) {
        return Err(invalid(format!("xi must be nonnegative, got {xi}")));
    }
    let (a, b) = p.wells();
    let (a, b) = (a.to_vec(), b.to_vec());
    let m = a.len();
    let r_max = 0.5 * dist(&a, &b);
    let radius = |centre: &[f64]| -> Result<f64> {
        if xi == 0.0 {
            return Ok(0.0);
        }
        let mut worst = f64::INFINITY;
        for d in 0..m {
            for sign in [1.0, -1.0] {
                let at = |r: f64| -> Result<f64> {
                    let mut z = centre.to_vec();
                    z[d] += sign * r;
                    Ok(solve_w_xi(p, &z, xi, search.grid, &search.opts)?.value)
                };
                let (mut lo, mut hi) = (0.0, r_max);
                if at(hi)? <= search.zero_tol {
                    worst = worst.min(hi);
                    continue;
                }
                while hi - lo > search.radius_tol * r_max.max(1e-300) {
                    let mid = 0.5 * (lo + hi);
                    if at(mid)? <= search.zero_tol {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                worst = worst.min(lo);
            }
        }
        Ok(worst)
    };
    Ok(ZeroSetRadius { xi, ra: radius(&a)?, rb: radius(&b)? })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub z: Vec<f64>,
    pub xi: f64,
    pub w_xi: f64,
    pub w_h: f64,
    pub gap: f64,
    pub iters: usize,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// `(z index, ξ larger, ξ smaller)` where `W^ξ` decreased as `ξ` shrank.
    pub violations: Vec<(usize, f64, f64)>,
    /// `sup_z (W^h − W^ξ)` per ladder entry, in ladder order.
    pub sup_gap: Vec<(f64, f64)>,
}

/// `W^ξ(z)` over a strictly decreasing ladder; solved in increasing `ξ` with warm starts, so every
/// column is nondecreasing as `ξ ↓ 0` by construction of the admissible sets.
pub fn convergence_scan(
    p: &SharedPotential,
    zs: &[Vec<f64>],
    ladder: &[f64],
    grid: CellGrid,
    opts: &SolverOptions,
    tol: f64,
) -> Result<ScanTable> {
    if ladder.windows(2).any(|w| !(w[1] < w[0])) || ladder.iter().any(|&x| !(x >= 0.0)) {
        return Err(invalid("xi ladder must be strictly decreasing and nonnegative"));
    }
    let per_z: Vec<Vec<CellSolution>> = zs
        .par_iter()
        .map(|z| {
            let mut out: Vec<CellSolution> = Vec::with_capacity(ladder.len());
            let mut prev: Option<CellSolution> = None;
            for &xi in ladder.iter().rev() {
                let sol = solve_w_xi_warm(p, z, xi, grid, opts, prev.as_ref())?;
                prev = Some(sol.clone());
                out.push(sol);
            }
            out.reverse();
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut sup_gap = vec![(0.0, f64::NEG_INFINITY); ladder.len()];
    for (zi, sols) in per_z.iter().enumerate() {
        for (li, sol) in sols.iter().enumerate() {
            let xi = ladder[li];
            rows.push(ScanRow {
                z: zs[zi].clone(),
                xi,
                w_xi: sol.value,
                w_h: sol.w_h,
                gap: sol.w_h - sol.value,
                iters: sol.iterations,
                feasible: is_feasible(p, sol, xi, 1e-10),
            });
            sup_gap[li] = (xi, sup_gap[li].1.max(sol.w_h - sol.value));
            if li > 0 && sol.value < sols[li - 1].value - tol {
                violations.push((zi, ladder[li - 1], xi));
            }
        }
    }
    Ok(ScanTable { rows, violations, sup_gap })
}

/// `W^ξ` sampled on a regular `z`-lattice, multilinear in between.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WXiCache {
    pub xi: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
}

impl WXiCache {
    fn lattice_points(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        if lo.len() != hi.len() || lo.len() != counts.len() || counts.iter().any(|&c| c < 2) {
            return Err(invalid("cache box needs matching bounds and at least two points per axis"));
        }
        if lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
            return Err(invalid("cache box must have positive extent"));
        }
        let total: usize = counts.iter().product();
        let m = lo.len();
        let mut idx = vec![0usize; m];
        let mut pts = Vec::with_capacity(total);
        for _ in 0..total {
            pts.push((0..m).map(|d| lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / (counts[d] - 1) as f64).collect());
            for d in (0..m).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(pts)
    }

    pub fn build(
        p: &SharedPotential,
        xi: f64,
        lo: &[f64],
        hi: &[f64],
        counts: &[usize],
        grid: CellGrid,
        opts: &SolverOptions,
    ) -> Result<Self> {
        Ok(build_ladder(p, &[xi], lo, hi, counts, grid, opts)?.pop().unwrap())
    }

    pub fn value_at(&self, z: &[f64]) -> f64 {
        let m = self.lo.len();
        let mut base = 0usize;
        let mut frac = vec![0.0; m];
        let mut cell = vec![0usize; m];
        let mut stride = 1usize;
        let mut strides = vec![0usize; m];
        for d in (0..m).rev() {
            strides[d] = stride;
            stride *= self.counts[d];
        }
        for d in 0..m {
            let s = (z[d] - self.lo[d]) / (self.hi[d] - self.lo[d]) * (self.counts[d] - 1) as f64;
            let s = s.clamp(0.0, (self.counts[d] - 1) as f64);
            let c = (s.floor() as usize).min(self.counts[d] - 2);
            cell[d] = c;
            frac[d] = s - c as f64;
            base += c * strides[d];
        }
        let mut v = 0.0;
        for corner in 0..(1usize << m) {
            let mut wgt = 1.0;
            let mut off = 0;
            for d in 0..m {
                if corner >> d & 1 == 1 {
                    wgt *= frac[d];
                    off += strides[d];
                } else {
                    wgt *= 1.0 - frac[d];
                }
            }
            if wgt != 0.0 {
                v += wgt * self.values[base + off];
            }
        }
        v.max(0.0)
    }
}

impl ScalarField for WXiCache {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.value_at(z)
    }
}

impl BoundedField for WXiCache {
    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }
}

/// Caches for every `ξ` in `xis`, in the given order; lattice points are solved concurrently and
/// each point walks the ladder in increasing `ξ` with warm starts.
pub fn build_ladder(
    p: &SharedPotential,
    xis: &[f64],
    lo: &[f64],
    hi: &[f64],
    counts: &[usize],
    grid: CellGrid,
    opts: &SolverOptions,
) -> Result<Vec<WXiCache>> {
    if lo.len() != p.dim_m() {
        return Err(invalid("cache box dimension does not match the potential"));
    }
    let pts = WXiCache::lattice_points(lo, hi, counts)?;
    let mut order: Vec<usize> = (0..xis.len()).collect();
    order.sort_by(|&i, &j| xis[i].total_cmp(&xis[j]));
    let per_point: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|z| {
            let mut vals = vec![0.0; xis.len()];
            let mut prev: Option<CellSolution> = None;
            for &k in &order {
                let sol = solve_w_xi_warm(p, z, xis[k], grid, opts, prev.as_ref())?;
                vals[k] = sol.value;
                prev = Some(sol);
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;
    Ok(xis
        .iter()
        .enumerate()
        .map(|(k, &xi)| WXiCache {
            xi,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: counts.to_vec(),
            values: per_point.iter().map(|v| v[k]).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PotentialSpec, Uniform};
    use std::sync::Arc;

    fn reference() -> SharedPotential {
        PotentialSpec::reference_composite().build(1, 1).unwrap()
    }

    fn small() -> CellGrid {
        CellGrid::new(16, 16).unwrap()
    }

    #[test]
    fn wells_are_zero() {
        let p = reference();
        let s = solve_w_xi(&p, &[1.0], 0.1, small(), &SolverOptions::default()).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.psi1.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_radius_gives_homogenized() {
        let p = reference();
        let s = solve_w_xi(&p, &[0.0], 0.0, small(), &SolverOptions::default()).unwrap();
        assert!((s.value - 5.75).abs() < 1e-12);
    }

    #[test]
    fn larger_radius_never_costs_more() {
        let p = reference();
        let o = SolverOptions::default();
        let s1 = solve_w_xi(&p, &[0.3], 0.1, small(), &o).unwrap();
        let s2 = solve_w_xi_warm(&p, &[0.3], 0.2, small(), &o, Some(&s1)).unwrap();
        assert!(s2.value <= s1.value + 2e-9);
        assert!(s1.value <= s1.w_h + 1e-12);
        assert!(is_feasible(&p, &s1, 0.1, 1e-10) && is_feasible(&p, &s2, 0.2, 1e-10));
        assert!(s1.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn uniform_zero_set_is_twice_radius() {
        let p: SharedPotential = Arc::new(Uniform::new(1, WellPotential::standard()));
        let r = zero_set_radius(&p, 0.05, &ZeroSearch { grid: small(), ..Default::default() }).unwrap();
        assert!((r.ra - 0.1).abs() < 1e-5, "{r:?}");
        assert!((r.rb - 0.1).abs() < 1e-5);
    }

    #[test]
    fn scan_columns_increase() {
        let p = reference();
        let zs = vec![vec![-0.5], vec![0.0], vec![1.0]];
        let t = convergence_scan(&p, &zs, &[0.2, 0.1, 0.05, 0.0], small(), &SolverOptions::default(), 2e-9).unwrap();
        assert!(t.violations.is_empty());
        assert!(t.rows.iter().all(|r| r.feasible));
        assert!(t.rows.iter().filter(|r| r.z == vec![1.0]).all(|r| r.w_xi == 0.0));
        assert!(t.sup_gap.last().unwrap().1.abs() < 1e-12);
        assert!(convergence_scan(&p, &zs, &[0.1, 0.2], small(), &SolverOptions::default(), 0.0).is_err());
    }

    #[test]
    fn cache_interpolates_nodes() {
        let p = reference();
        let c = WXiCache::build(&p, 0.0, &[-1.5], &[1.5], &[31], small(), &SolverOptions::default()).unwrap();
        assert!((c.value_at(&[0.0]) - 5.75).abs() < 1e-9);
        assert!(c.value_at(&[-1.0]).abs() < 1e-9);
    }
}
