//! Optimal one-dimensional transition profiles, signed distance fields, recovery sequences and
//! the bubble that restores the mass constraint.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geodesic::Curve;
use crate::grid::{GridField, GridGeometry, PhaseMask};
use crate::numeric::{adaptive_simpson, dist, KahanSum};
use crate::potential::ScalarField;

const PROFILE_NODES: usize = 4097;

/// `u(t) = γ(g(t))` on `(−τ, τ)`, where `g` inverts
/// `t(s) = ∫ ε|γ′| / √(λ + W(γ))` shifted to be centred.
#[derive(Clone, Debug)]
pub struct TransitionProfile {
    pub tau: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Euclidean length of the source curve.
    pub length: f64,
    curve: Curve,
    s: Vec<f64>,
    t: Vec<f64>,
    /// `ds/dt` at the left and right end of each interval, from the interval's own segment.
    slopes: Vec<(f64, f64)>,
}

/// Speed `|γ′|` on the segment containing `[s0, s1]`.
fn speed(curve: &Curve, s0: f64, s1: f64) -> f64 {
    let mid = 0.5 * (s0 + s1);
    let p = curve.params();
    let k = p.partition_point(|&x| x <= mid).clamp(1, curve.len() - 1);
    dist(curve.node(k - 1), curve.node(k)) / (p[k] - p[k - 1])
}

fn root_plus(w: &dyn ScalarField, z: &[f64], lambda: f64) -> f64 {
    (lambda + w.value(z).max(0.0)).sqrt()
}

/// `∫ 2√W(γ) |γ′|` by adaptive quadrature along each segment.
pub fn curve_tension(curve: &Curve, w: &dyn ScalarField) -> f64 {
    let p = curve.params();
    let mut acc = KahanSum::new();
    for k in 1..curve.len() {
        let v = speed(curve, p[k - 1], p[k]);
        let f = |s: f64| 2.0 * w.value(&curve.at(s)).max(0.0).sqrt() * v;
        acc.add(adaptive_simpson(f, p[k - 1], p[k], 1e-12));
    }
    acc.value()
}

/// Default `λ = (ς / L)²` with `ς = 0.01 σ`.
pub fn default_lambda(curve: &Curve, w: &dyn ScalarField) -> f64 {
    let varsigma = 0.01 * curve_tension(curve, w);
    (varsigma / curve.length()).powi(2)
}

impl TransitionProfile {
    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    /// `g(t)`, clamped to `[−1, 1]` outside `(−τ, τ)`.
    pub fn g(&self, t: f64) -> f64 {
        self.g_and_slope(t).0
    }

    /// `g(t)` and `g′(t)` from monotone cubic Hermite interpolation of `s(t)`.
    pub fn g_and_slope(&self, t: f64) -> (f64, f64) {
        if t <= -self.tau {
            return (-1.0, 0.0);
        }
        if t >= self.tau {
            return (1.0, 0.0);
        }
        let i = self.t.partition_point(|&x| x <= t).clamp(1, self.t.len() - 1) - 1;
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let dt = t1 - t0;
        let (m0, m1) = self.slopes[i];
        let x = (t - t0) / dt;
        let (x2, x3) = (x * x, x * x * x);
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        let g = h00 * s0 + h10 * dt * m0 + h01 * s1 + h11 * dt * m1;
        let d00 = (6.0 * x2 - 6.0 * x) / dt;
        let d10 = 3.0 * x2 - 4.0 * x + 1.0;
        let d01 = (-6.0 * x2 + 6.0 * x) / dt;
        let d11 = 3.0 * x2 - 2.0 * x;
        let dg = d00 * s0 + d10 * m0 + d01 * s1 + d11 * m1;
        (g.clamp(-1.0, 1.0), dg)
    }

    /// `γ(g(t))`.
    pub fn u(&self, t: f64) -> Vec<f64> {
        self.curve.at(self.g(t))
    }

    /// `n` samples `(t, g(t), u(t))` uniform in `t` over `[−τ, τ]`.
    pub fn samples(&self, n: usize) -> Vec<(f64, f64, Vec<f64>)> {
        let n = n.max(2);
        (0..n)
            .map(|k| {
                let t = -self.tau + 2.0 * self.tau * k as f64 / (n - 1) as f64;
                let g = self.g(t);
                (t, g, self.curve.at(g))
            })
            .collect()
    }

    /// Largest relative residual of `(g′)² = (λ + W(γ(g))) / (ε² |γ′(g)|²)` over `n` interior
    /// samples.
    pub fn ode_residual(&self, w: &dyn ScalarField, n: usize) -> f64 {
        let mut worst = 0.0f64;
        for k in 1..n {
            let t = -self.tau + 2.0 * self.tau * k as f64 / n as f64;
            let (g, dg) = self.g_and_slope(t);
            let p = self.curve.params();
            let j = p.partition_point(|&x| x <= g).clamp(1, self.curve.len() - 1);
            let v = dist(self.curve.node(j - 1), self.curve.node(j)) / (p[j] - p[j - 1]);
            let rhs = (self.lambda + w.value(&self.curve.at(g)).max(0.0)) / (self.eps * self.eps * v * v);
            worst = worst.max((dg * dg - rhs).abs() / rhs);
        }
        worst
    }

    /// `∫ (1/ε) W(u) + ε |u′|²` over `(−τ, τ)`, computed in the curve parameter.
    pub fn energy(&self, w: &dyn ScalarField) -> f64 {
        let p = self.curve.params();
        let mut acc = KahanSum::new();
        for k in 1..self.curve.len() {
            let v = speed(&self.curve, p[k - 1], p[k]);
            let lambda = self.lambda;
            let f = |s: f64| {
                let ww = w.value(&self.curve.at(s)).max(0.0);
                v * (2.0 * ww + lambda) / (lambda + ww).sqrt()
            };
            acc.add(adaptive_simpson(f, p[k - 1], p[k], 1e-12));
        }
        acc.value()
    }

    /// Right-hand side of the energy estimate: `∫ 2√W(γ)|γ′| + 2√λ L(γ)`.
    pub fn energy_bound(&self, w: &dyn ScalarField) -> f64 {
        curve_tension(&self.curve, w) + 2.0 * self.lambda.sqrt() * self.length
    }

    /// `(ε/√λ) L(γ)`, the upper bound on `τ`.
    pub fn tau_upper(&self) -> f64 {
        self.eps / self.lambda.sqrt() * self.length
    }
}

/// Builds the profile for `γ` from `a = γ(−1)` to `b = γ(1)`; `lambda = None` uses [`default_lambda`].
pub fn build_profile(curve: &Curve, w: &dyn ScalarField, eps: f64, lambda: Option<f64>) -> Result<TransitionProfile> {
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(curve, w),
    };
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if w.dim() != curve.dim() {
        return Err(invalid("field and curve dimensions differ"));
    }
    if (1..curve.len()).any(|k| dist(curve.node(k - 1), curve.node(k)) == 0.0) {
        return Err(Error::InvalidCurve("curve has a vanishing derivative".into()));
    }
    // Chebyshev nodes cluster where the profile flattens into the wells.
    let mut s: Vec<f64> = (0..PROFILE_NODES)
        .map(|k| -(std::f64::consts::PI * k as f64 / (PROFILE_NODES - 1) as f64).cos())
        .chain(curve.params().iter().copied())
        .collect();
    s.sort_by(f64::total_cmp);
    s.dedup_by(|x, y| (*x - *y).abs() <= 1e-14);
    s[0] = -1.0;
    *s.last_mut().unwrap() = 1.0;
    let pieces: Vec<(f64, f64, f64)> = s
        .par_windows(2)
        .map(|win| {
            let (s0, s1) = (win[0], win[1]);
            let v = speed(curve, s0, s1);
            let f = |x: f64| eps * v / root_plus(w, &curve.at(x), lambda);
            let dt = adaptive_simpson(f, s0, s1, 1e-14 * eps / lambda.sqrt());
            let m0 = root_plus(w, &curve.at(s0), lambda) / (eps * v);
            let m1 = root_plus(w, &curve.at(s1), lambda) / (eps * v);
            (dt, m0, m1)
        })
        .collect();
    let mut t = Vec::with_capacity(s.len());
    let mut acc = KahanSum::new();
    t.push(0.0);
    for (dt, _, _) in &pieces {
        acc.add(*dt);
        t.push(acc.value());
    }
    let total = acc.value();
    let tau = 0.5 * total;
    t.iter_mut().for_each(|x| *x -= tau);
    t[0] = -tau;
    *t.last_mut().unwrap() = tau;
    let slopes = pieces
        .iter()
        .enumerate()
        .map(|(i, &(dt, m0, m1))| {
            // Monotone limiter on the Hermite slopes.
            let secant = (s[i + 1] - s[i]) / dt;
            (m0.min(3.0 * secant), m1.min(3.0 * secant))
        })
        .collect();
    Ok(TransitionProfile { tau, eps, lambda, length: curve.length(), curve: curve.clone(), s, t, slopes })
}

/// Squared distances to the nearest feature along one line (lower envelope of parabolas).
fn edt_line(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let pos = |q: usize| q as f64 * h;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(q) => q,
        None => {
            out.iter_mut().for_each(|x| *x = f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out[q] = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from each cell centre to the nearest feature cell centre.
fn edt(features: &[bool], geom: &GridGeometry) -> Vec<f64> {
    let mut d: Vec<f64> = features.iter().map(|&x| if x { 0.0 } else { f64::INFINITY }).collect();
    let n = geom.n();
    let strides = geom.strides();
    for axis in 0..n {
        let len = geom.dims[axis];
        let stride = strides[axis];
        let starts: Vec<usize> = (0..geom.len()).filter(|&i| (i / stride).is_multiple_of(len)).collect();
        let lines: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&s0| {
                let f: Vec<f64> = (0..len).map(|q| d[s0 + q * stride]).collect();
                let mut out = vec![0.0; len];
                edt_line(&f, geom.h, &mut out);
                out
            })
            .collect();
        for (&s0, line) in starts.iter().zip(lines) {
            for (q, v) in line.into_iter().enumerate() {
                d[s0 + q * stride] = v;
            }
        }
    }
    d
}

/// Signed distance to `∂A`: negative inside `A`. The interface sits half a cell beyond the
/// nearest centre of the opposite phase.
pub fn signed_distance(mask: &PhaseMask) -> Result<GridField> {
    let count = mask.count();
    if count == 0 || count == mask.inside.len() {
        return Err(Error::EmptyPhase);
    }
    let geom = &mask.geom;
    let outside: Vec<bool> = mask.inside.iter().map(|&x| !x).collect();
    let to_a = edt(&mask.inside, geom);
    let to_c = edt(&outside, geom);
    let half = 0.5 * geom.h;
    let vals = mask
        .inside
        .iter()
        .enumerate()
        .map(|(i, &inside)| if inside { -(to_c[i].sqrt() - half) } else { to_a[i].sqrt() - half })
        .collect();
    GridField::new(geom.lo.clone(), geom.h, geom.dims.clone(), 1, vals)
}

/// `a` where the signed distance is below `−τ`, `γ(g(dist))` in the layer, `b` beyond `τ`.
pub fn recovery_sequence(mask: &PhaseMask, profile: &TransitionProfile) -> Result<GridField> {
    let h = mask.geom.h;
    if h > profile.tau / 4.0 {
        return Err(Error::LayerUnresolved { tau: profile.tau, h });
    }
    let sd = signed_distance(mask)?;
    recovery_from_distance(&sd, profile)
}

/// As [`recovery_sequence`] with a precomputed signed distance.
pub fn recovery_from_distance(sd: &GridField, profile: &TransitionProfile) -> Result<GridField> {
    let curve = profile.curve();
    let (a, b) = (curve.first().to_vec(), curve.last().to_vec());
    let m = curve.dim();
    let vals: Vec<f64> = sd
        .values()
        .par_iter()
        .flat_map_iter(|&d| {
            if d < -profile.tau {
                a.clone()
            } else if d > profile.tau {
                b.clone()
            } else {
                profile.u(d)
            }
        })
        .collect();
    let g = sd.geometry();
    let _ = m;
    GridField::new(g.lo.clone(), g.h, g.dims.clone(), curve.dim(), vals)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassRepair {
    #[serde(skip)]
    pub field: GridField,
    /// `−(N+1)/(ω_N r^N)`.
    pub c_analytic: f64,
    /// `c` after the grid-quadrature correction.
    pub c_grid: f64,
    /// `a`-phase fraction of the input.
    pub m_n: f64,
    /// Largest component of `|mean(v) − (m a + (1−m) b)|`.
    pub mass_error: f64,
    /// Cells inside the ball.
    pub ball_cells: Vec<usize>,
}

/// Volume of the unit ball in `R^N`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * pi / n as f64 * unit_ball_volume(n - 2),
    }
}

/// `a`-phase fraction `m` with `mean = m a + (1 − m) b` projected onto the segment.
pub fn phase_fraction(mean: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..a.len() {
        num += (mean[k] - b[k]) * (a[k] - b[k]);
        den += (a[k] - b[k]) * (a[k] - b[k]);
    }
    num / den
}

/// Replaces `u` on `B(x0, r)` by `a + c (M_n − M)(1 − |x − x0|/r)` so that the grid mean is
/// `m a + (1 − m) b`; `M_n` and `M` are the current and target integrals.
pub fn mass_repair(u: &GridField, m: f64, x0: &[f64], r: f64, a: &[f64], b: &[f64]) -> Result<MassRepair> {
    let n = u.n();
    if n < 2 {
        return Err(Error::UnsupportedDimension("bubble repair needs at least two space dimensions".into()));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(invalid(format!("mass fraction must lie in (0, 1), got {m}")));
    }
    if !(r > 0.0) || x0.len() != n {
        return Err(invalid("bubble needs a positive radius and a centre in the domain"));
    }
    let geom = u.geometry();
    let hi = geom.hi();
    if (0..n).any(|d| x0[d] - r < geom.lo[d] || x0[d] + r > hi[d]) {
        return Err(invalid("bubble leaves the domain"));
    }
    let mm = u.m();
    let measure = geom.measure();
    let target: Vec<f64> = a.iter().zip(b).map(|(x, y)| m * x + (1.0 - m) * y).collect();
    let mean = u.mean();
    let drift: Vec<f64> = mean.iter().zip(&target).map(|(x, t)| (x - t) * measure).collect();
    let c_analytic = -((n + 1) as f64) / (unit_ball_volume(n) * r.powi(n as i32));
    let mut ball = Vec::new();
    let mut weight = Vec::new();
    for i in 0..u.len() {
        let rho = dist(&geom.center(i), x0) / r;
        if rho < 1.0 {
            if dist(u.value(i), a) > 1e-12 {
                return Err(Error::BallIntersectsLayer);
            }
            ball.push(i);
            weight.push(1.0 - rho);
        }
    }
    if ball.is_empty() {
        return Err(invalid("bubble contains no grid cells"));
    }
    let m_n = phase_fraction(&mean, a, b);
    if drift.iter().all(|&d| d == 0.0) {
        return Ok(MassRepair { field: u.clone(), c_analytic, c_grid: c_analytic, m_n, mass_error: 0.0, ball_cells: ball });
    }
    let s = weight.iter().copied().collect::<KahanSum>().value() * geom.cell_volume();
    let mut c = -1.0 / s;
    let mut v = u.clone();
    let apply = |v: &mut GridField, c: f64| {
        for (&i, &wt) in ball.iter().zip(&weight) {
            let cell = v.value_mut(i);
            for k in 0..mm {
                cell[k] = a[k] + c * drift[k] * wt;
            }
        }
    };
    apply(&mut v, c);
    // One scalar correction absorbs rounding in the quadrature of the bump.
    let resid: Vec<f64> = v.mean().iter().zip(&target).map(|(x, t)| (x - t) * measure).collect();
    let dd: f64 = drift.iter().map(|x| x * x).sum();
    let rd: f64 = resid.iter().zip(&drift).map(|(x, y)| x * y).sum();
    c -= rd / (s * dd);
    apply(&mut v, c);
    let mut err = v.mean().iter().zip(&target).map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
    if err > 1e-13 {
        // Spread the last rounding residue over the whole field as a constant shift.
        crate::energy::project_mass_in_place(&mut v, m, a, b)?;
        err = v.mean().iter().zip(&target).map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
    }
    Ok(MassRepair { field: v, c_analytic, c_grid: c, m_n, mass_error: err, ball_cells: ball })
}

/// Centre for the repair bubble: the `a`-phase cell maximizing
/// `min(−dist − τ, distance to the domain boundary)`, with that value.
pub fn bubble_center(u: &GridField, a: &[f64], b: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
    let mask = PhaseMask::threshold(u, a, b);
    let geom = u.geometry();
    let hi = geom.hi();
    let sd = match signed_distance(&mask) {
        Ok(sd) => sd,
        Err(Error::EmptyPhase) if mask.count() == mask.inside.len() => {
            GridField::constant(&geom, &[f64::NEG_INFINITY])
        }
        Err(e) => return Err(e),
    };
    let mut best: Option<(usize, f64)> = None;
    for i in 0..u.len() {
        if !mask.inside[i] {
            continue;
        }
        let x = geom.center(i);
        let wall = (0..geom.n()).map(|d| (x[d] - geom.lo[d]).min(hi[d] - x[d])).fold(f64::INFINITY, f64::min);
        let score = (-sd.values()[i] - tau).min(wall);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let (i, score) = best.ok_or(Error::EmptyPhase)?;
    Ok((geom.center(i), score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::WellPotential;

    #[test]
    fn quartic_profile_is_tanh() {
        let w = WellPotential::standard();
        let c = Curve::segment(&[-1.0], &[1.0], 2).unwrap();
        let p = build_profile(&c, &w, 1.0, Some(1e-6)).unwrap();
        let worst = p.samples(4001).iter().map(|(t, _, u)| (u[0] - t.tanh()).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
        assert!(p.ode_residual(&w, 997) < 1e-6, "{}", p.ode_residual(&w, 997));
        assert!(p.tau <= p.tau_upper());
        assert!(p.energy(&w) <= p.energy_bound(&w));
    }

    #[test]
    fn lambda_must_be_positive() {
        let c = Curve::segment(&[-1.0], &[1.0], 2).unwrap();
        assert!(build_profile(&c, &WellPotential::standard(), 1.0, Some(0.0)).is_err());
    }

    #[test]
    fn half_space_distance() {
        let h = 1.0 / 64.0;
        let g = GridGeometry::new(vec![0.0, 0.0], h, vec![64, 64]).unwrap();
        let mask = PhaseMask::from_fn(&g, |x| x[0] < 0.5);
        let sd = signed_distance(&mask).unwrap();
        for i in 0..g.len() {
            let x = g.center(i);
            assert!((sd.values()[i] - (x[0] - 0.5)).abs() <= 1e-12);
        }
    }

    #[test]
    fn disk_distance() {
        let h = 1.0 / 128.0;
        let g = GridGeometry::new(vec![0.0, 0.0], h, vec![128, 128]).unwrap();
        let mask = PhaseMask::from_fn(&g, |x| (x[0] - 0.5).hypot(x[1] - 0.5) < 0.25);
        let sd = signed_distance(&mask).unwrap();
        for i in 0..g.len() {
            let x = g.center(i);
            let exact = (x[0] - 0.5).hypot(x[1] - 0.5) - 0.25;
            assert!((sd.values()[i].abs() - exact.abs()).abs() <= h, "{} {}", sd.values()[i], exact);
        }
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn repair_hits_mean() {
        let h = 1.0 / 128.0;
        let g = GridGeometry::new(vec![0.0, 0.0], h, vec![128, 128]).unwrap();
        let u = GridField::from_fn(&g, 1, |x, o| o[0] = if x[0] < 0.52 { -1.0 } else { 1.0 });
        let r = mass_repair(&u, 0.5, &[0.2, 0.5], 0.1, &[-1.0], &[1.0]).unwrap();
        assert!(r.mass_error <= 1e-12);
        assert!((r.c_analytic + 3.0 / (std::f64::consts::PI * 0.01)).abs() < 1e-9);
        assert!((r.c_grid / r.c_analytic - 1.0).abs() < 0.05);
        let same = mass_repair(&r.field, 0.5, &[0.2, 0.5], 0.1, &[-1.0], &[1.0]);
        assert!(matches!(same, Err(Error::BallIntersectsLayer)) || same.unwrap().mass_error <= 1e-12);
        assert!(matches!(
            mass_repair(&u, 0.5, &[0.5, 0.5], 0.1, &[-1.0], &[1.0]),
            Err(Error::BallIntersectsLayer)
        ));
    }
}
