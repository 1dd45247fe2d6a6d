//! Surface tensions and distances in the degenerate conformal metric `2√W |γ′|`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numeric::{adaptive_simpson, dist, KahanSum};
use crate::potential::ScalarField;

pub const DEFAULT_NODES: usize = 129;
const MAX_NODES: usize = 1025;
const SWEEPS: usize = 200;

/// Polyline in `R^M` with parameters in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    m: usize,
    points: Vec<f64>,
    t: Vec<f64>,
}

impl Curve {
    pub fn new(m: usize, points: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        if m == 0 || points.len() != m * t.len() || t.len() < 2 {
            return Err(Error::InvalidCurve("need at least two nodes of matching dimension".into()));
        }
        if t[0] != -1.0 || *t.last().unwrap() != 1.0 {
            return Err(Error::InvalidCurve("parameters must run from -1 to 1".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCurve("parameters must be strictly increasing".into()));
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { m, points, t })
    }

    /// Uniform parameters over the given nodes.
    pub fn from_points(m: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len().checked_div(m).unwrap_or(0);
        Self::new(m, points, uniform_params(n))
    }

    /// Straight segment from `p` to `q` with `n` equally spaced nodes.
    pub fn segment(p: &[f64], q: &[f64], n: usize) -> Result<Self> {
        if p.len() != q.len() {
            return Err(invalid("segment endpoints differ in dimension"));
        }
        let n = n.max(2);
        let mut pts = Vec::with_capacity(n * p.len());
        for k in 0..n {
            let s = k as f64 / (n - 1) as f64;
            pts.extend(p.iter().zip(q).map(|(a, b)| a + s * (b - a)));
        }
        Self::from_points(p.len(), pts)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.points[k * self.m..(k + 1) * self.m]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.t
    }

    pub fn first(&self) -> &[f64] {
        self.node(0)
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.len() - 1)
    }

    /// Euclidean length of the polyline.
    pub fn length(&self) -> f64 {
        (1..self.len()).map(|k| dist(self.node(k - 1), self.node(k))).sum()
    }

    /// Point at parameter `t`, linear between nodes.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(-1.0, 1.0);
        let k = match self.t.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return self.node(k).to_vec(),
            Err(k) => k.clamp(1, self.len() - 1),
        };
        let (t0, t1) = (self.t[k - 1], self.t[k]);
        let s = (t - t0) / (t1 - t0);
        self.node(k - 1).iter().zip(self.node(k)).map(|(a, b)| a + s * (b - a)).collect()
    }

    /// Same parameters, new nodes.
    pub fn with_params(&self, t: Vec<f64>) -> Result<Self> {
        Self::new(self.m, self.points.clone(), t)
    }

    /// `n` nodes equally spaced in arc length along the same polyline.
    pub fn resample(&self, n: usize) -> Self {
        let n = n.max(2);
        let mut cum = vec![0.0];
        for k in 1..self.len() {
            cum.push(cum[k - 1] + dist(self.node(k - 1), self.node(k)));
        }
        let total = *cum.last().unwrap();
        let mut pts = Vec::with_capacity(n * self.m);
        let mut seg = 1;
        for j in 0..n {
            if total == 0.0 {
                pts.extend_from_slice(self.first());
                continue;
            }
            let s = total * j as f64 / (n - 1) as f64;
            while seg < self.len() - 1 && cum[seg] < s {
                seg += 1;
            }
            let len = cum[seg] - cum[seg - 1];
            let f = if len > 0.0 { ((s - cum[seg - 1]) / len).clamp(0.0, 1.0) } else { 0.0 };
            pts.extend(self.node(seg - 1).iter().zip(self.node(seg)).map(|(a, b)| a + f * (b - a)));
        }
        // Endpoints are kept bitwise.
        pts[..self.m].copy_from_slice(self.first());
        let last = self.last().to_vec();
        pts[(n - 1) * self.m..].copy_from_slice(&last);
        Self { m: self.m, points: pts, t: uniform_params(n) }
    }
}

fn uniform_params(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![-1.0; n];
    }
    let mut t: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    t[n - 1] = 1.0;
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Optimized,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Optimized => "optimized",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub nodes: usize,
    pub sweeps: usize,
    /// Energy after each descent stage (initial path, then per refinement).
    pub trace: Vec<f64>,
    /// Energy of the straight segment between the endpoints.
    pub segment_energy: f64,
    /// Line energy of the returned curve.
    pub curve_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensionResult {
    pub value: f64,
    pub curve: Curve,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

/// Free regions around the wells.
#[derive(Clone, Debug, PartialEq)]
pub struct WellBalls {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub ra: f64,
    pub rb: f64,
}

impl WellBalls {
    pub fn new(a: &[f64], b: &[f64], ra: f64, rb: f64) -> Self {
        Self { a: a.to_vec(), b: b.to_vec(), ra, rb }
    }

    pub fn in_a(&self, z: &[f64]) -> bool {
        dist(z, &self.a) <= self.ra * (1.0 + 1e-12)
    }

    pub fn in_b(&self, z: &[f64]) -> bool {
        dist(z, &self.b) <= self.rb * (1.0 + 1e-12)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.in_a(z) || self.in_b(z)
    }
}

#[inline]
fn root(w: f64) -> Result<f64> {
    if w >= 0.0 {
        Ok(w.sqrt())
    } else if w > -1e-14 {
        Ok(0.0)
    } else {
        Err(Error::NegativePotential { value: w })
    }
}

/// `Σ_k (√W(γ_k) + √W(γ_{k+1})) |γ_{k+1} − γ_k|`, the trapezoidal value of `∫ 2√W(γ) |γ′|`.
///
/// Parameters are not used, so the value only depends on the node sequence.
pub fn line_energy(w: &dyn ScalarField, curve: &Curve) -> Result<f64> {
    if w.dim() != curve.dim() {
        return Err(invalid("field and curve dimensions differ"));
    }
    let s: Vec<f64> = (0..curve.len()).map(|k| root(w.value(curve.node(k)))).collect::<Result<_>>()?;
    Ok(trapezoid(curve, &s))
}

fn trapezoid(curve: &Curve, s: &[f64]) -> f64 {
    (1..curve.len())
        .map(|k| (s[k - 1] + s[k]) * dist(curve.node(k - 1), curve.node(k)))
        .collect::<KahanSum>()
        .value()
}

/// Field with zero cost inside the well balls.
struct Masked<'a> {
    inner: &'a dyn ScalarField,
    balls: Option<&'a WellBalls>,
}

impl ScalarField for Masked<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        match self.balls {
            Some(b) if b.contains(z) => 0.0,
            _ => self.inner.value(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicOptions {
    pub nodes: usize,
    pub max_nodes: usize,
    pub sweeps: usize,
    /// Relative change that stops node doubling.
    pub refine_tol: f64,
    /// Point-cloud nodes per axis for the graph initialization (0 picks a default).
    pub cloud: usize,
    /// Optional search box; the curve must stay inside it.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { nodes: DEFAULT_NODES, max_nodes: MAX_NODES, sweeps: SWEEPS, refine_tol: 1e-3, cloud: 0, bounds: None }
    }
}

/// `σ` between the wells `a` and `b`, which must be zeros of `w`.
pub fn sigma_h(w: &dyn ScalarField, a: &[f64], b: &[f64]) -> Result<TensionResult> {
    sigma_h_with(w, a, b, &GeodesicOptions::default())
}

pub fn sigma_h_with(w: &dyn ScalarField, a: &[f64], b: &[f64], opts: &GeodesicOptions) -> Result<TensionResult> {
    let (wa, wb) = (w.value(a), w.value(b));
    let scale = 1.0f64.max(w.value(&a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>()).abs());
    if wa.abs() > 1e-12 * scale || wb.abs() > 1e-12 * scale {
        return Err(Error::WellsNotZero { wa, wb });
    }
    geodesic(w, a, b, None, opts)
}

/// Geodesic distance from `p` to `q`; travel inside `balls` is free.
pub fn geodesic_distance(
    w: &dyn ScalarField,
    p: &[f64],
    q: &[f64],
    balls: Option<&WellBalls>,
) -> Result<TensionResult> {
    geodesic(w, p, q, balls, &GeodesicOptions::default())
}

/// Same as [`geodesic_distance`] with explicit optimizer settings.
pub fn geodesic_with(
    w: &dyn ScalarField,
    p: &[f64],
    q: &[f64],
    balls: Option<&WellBalls>,
    opts: &GeodesicOptions,
) -> Result<TensionResult> {
    geodesic(w, p, q, balls, opts)
}

fn geodesic(
    w: &dyn ScalarField,
    p: &[f64],
    q: &[f64],
    balls: Option<&WellBalls>,
    opts: &GeodesicOptions,
) -> Result<TensionResult> {
    let m = w.dim();
    if p.len() != m || q.len() != m {
        return Err(invalid("endpoint dimension does not match the field"));
    }
    if opts.nodes < 3 {
        return Err(invalid("at least three curve nodes are required"));
    }
    let field = Masked { inner: w, balls };
    let same_ball = balls.is_some_and(|b| (b.in_a(p) && b.in_a(q)) || (b.in_b(p) && b.in_b(q)));
    if p == q || same_ball {
        let curve = Curve::segment(p, q, 2)?;
        let diagnostics = Diagnostics { nodes: 2, ..Default::default() };
        return Ok(TensionResult { value: 0.0, curve, method: Method::ClosedForm, diagnostics });
    }
    let (value, curve, method, mut diagnostics) = if m == 1 {
        scalar_path(&field, p[0], q[0], balls, opts)?
    } else {
        optimized_path(&field, p, q, opts)?
    };
    // Same discretization on both sides of the comparison.
    diagnostics.segment_energy = match method {
        Method::ClosedForm => value,
        Method::Optimized => line_energy(&field, &Curve::segment(p, q, curve.len())?)?,
    };
    let curve = match balls {
        Some(b) if b.in_a(p) && b.in_b(q) => normalize_one_third(&curve, b)?,
        _ => curve,
    };
    if let Some((lo, hi)) = &opts.bounds {
        let outside = (0..curve.len()).any(|k| {
            curve.node(k).iter().zip(lo.iter().zip(hi)).any(|(x, (l, h))| *x < *l - 1e-12 || *x > *h + 1e-12)
        });
        if outside {
            return Err(Error::CacheTooSmall);
        }
    }
    diagnostics.curve_energy = line_energy(&field, &curve)?;
    Ok(TensionResult { value, curve, method, diagnostics })
}

/// Monotone path on the line: exact quadrature of `2√W` over `[p, q]` minus the free balls.
fn scalar_path(
    w: &dyn ScalarField,
    p: f64,
    q: f64,
    balls: Option<&WellBalls>,
    opts: &GeodesicOptions,
) -> Result<(f64, Curve, Method, Diagnostics)> {
    let (lo, hi) = (p.min(q), p.max(q));
    let mut pieces = vec![(lo, hi)];
    if let Some(b) = balls {
        for (c, r) in [(b.a[0], b.ra), (b.b[0], b.rb)] {
            pieces = pieces
                .into_iter()
                .flat_map(|(s, e)| {
                    let mut out = Vec::new();
                    if s < c - r {
                        out.push((s, e.min(c - r)));
                    }
                    if e > c + r {
                        out.push((s.max(c + r), e));
                    }
                    out
                })
                .collect();
        }
    }
    let mut neg = None;
    let mut f = |x: f64| {
        let v = w.value(&[x]);
        match root(v) {
            Ok(r) => 2.0 * r,
            Err(_) => {
                neg.get_or_insert(v);
                0.0
            }
        }
    };
    let mut total = 0.0;
    for (s, e) in pieces {
        let rough = adaptive_simpson(&mut f, s, e, 1e-6).abs();
        total += adaptive_simpson(&mut f, s, e, 1e-13 * rough.max(1e-3));
    }
    if let Some(v) = neg {
        return Err(Error::NegativePotential { value: v });
    }
    let n = opts.max_nodes.max(opts.nodes);
    let curve = Curve::segment(&[p], &[q], n)?;
    let diag = Diagnostics { nodes: n, trace: vec![total], ..Default::default() };
    Ok((total, curve, Method::ClosedForm, diag))
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn chord_energy(w: &dyn ScalarField, x: &[f64], y: &[f64], pieces: usize) -> f64 {
    let mut prev = root(w.value(x)).unwrap_or(0.0);
    let mut total = 0.0;
    let len = dist(x, y) / pieces as f64;
    let mut z = vec![0.0; x.len()];
    for k in 1..=pieces {
        let s = k as f64 / pieces as f64;
        for d in 0..x.len() {
            z[d] = x[d] + s * (y[d] - x[d]);
        }
        let cur = root(w.value(&z)).unwrap_or(0.0);
        total += (prev + cur) * len;
        prev = cur;
    }
    total
}

/// Shortest path on a uniform point cloud plus the two endpoints.
fn graph_path(w: &dyn ScalarField, p: &[f64], q: &[f64], opts: &GeodesicOptions) -> Result<Curve> {
    let m = p.len();
    let span = dist(p, q);
    let (mut lo, mut hi) = match &opts.bounds {
        Some((l, h)) => (l.clone(), h.clone()),
        None => {
            let mut lo = Vec::with_capacity(m);
            let mut hi = Vec::with_capacity(m);
            for d in 0..m {
                let (a, b) = (p[d].min(q[d]), p[d].max(q[d]));
                let pad = 0.5 * (b - a).max(span);
                lo.push(a - pad);
                hi.push(b + pad);
            }
            (lo, hi)
        }
    };
    for d in 0..m {
        if hi[d] <= lo[d] {
            lo[d] -= 0.5;
            hi[d] += 0.5;
        }
    }
    let per = if opts.cloud > 0 { opts.cloud } else { (4096f64.powf(1.0 / m as f64).floor() as usize).max(5) };
    let count = per.pow(m as u32);
    let mut pts = Vec::with_capacity((count + 2) * m);
    let mut idx = vec![0usize; m];
    for _ in 0..count {
        for d in 0..m {
            pts.push(lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / (per - 1) as f64);
        }
        for d in (0..m).rev() {
            idx[d] += 1;
            if idx[d] < per {
                break;
            }
            idx[d] = 0;
        }
    }
    pts.extend_from_slice(p);
    pts.extend_from_slice(q);
    let (src, dst) = (count, count + 1);
    let total = count + 2;
    let point = |i: usize| &pts[i * m..(i + 1) * m];
    let reach = if m <= 2 { 2i64 } else { 1 };
    let strides: Vec<usize> = (0..m).map(|d| per.pow((m - 1 - d) as u32)).collect();
    let k_end = 3usize.pow(m as u32) * 2;
    let nearest = |z: &[f64]| {
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&i, &j| dist(point(i), z).total_cmp(&dist(point(j), z)));
        order.truncate(k_end);
        order
    };
    let near_p = nearest(p);
    let near_q = nearest(q);
    let neighbours = |i: usize| -> Vec<usize> {
        if i == src {
            return near_p.clone();
        }
        if i == dst {
            return near_q.clone();
        }
        let mut out = Vec::new();
        let base: Vec<i64> = (0..m).map(|d| ((i / strides[d]) % per) as i64).collect();
        let width = 2 * reach + 1;
        for o in 0..width.pow(m as u32) {
            let mut rem = o;
            let mut j = 0usize;
            let mut ok = true;
            let mut zero = true;
            for d in 0..m {
                let off = rem % width - reach;
                rem /= width;
                zero &= off == 0;
                let c = base[d] + off;
                if c < 0 || c >= per as i64 {
                    ok = false;
                    break;
                }
                j += c as usize * strides[d];
            }
            if ok && !zero {
                out.push(j);
            }
        }
        if near_p.contains(&i) {
            out.push(src);
        }
        if near_q.contains(&i) {
            out.push(dst);
        }
        out
    };
    let mut best = vec![f64::INFINITY; total];
    let mut prev = vec![usize::MAX; total];
    let mut heap = BinaryHeap::new();
    best[src] = 0.0;
    heap.push(HeapItem(0.0, src));
    while let Some(HeapItem(d, i)) = heap.pop() {
        if d > best[i] {
            continue;
        }
        if i == dst {
            break;
        }
        for j in neighbours(i) {
            let nd = d + chord_energy(w, point(i), point(j), 8);
            if nd < best[j] {
                best[j] = nd;
                prev[j] = i;
                heap.push(HeapItem(nd, j));
            }
        }
    }
    if !best[dst].is_finite() {
        return Curve::segment(p, q, opts.nodes);
    }
    let mut chain = vec![dst];
    while *chain.last().unwrap() != src {
        chain.push(prev[*chain.last().unwrap()]);
    }
    chain.reverse();
    let flat: Vec<f64> = chain.iter().flat_map(|&i| point(i).to_vec()).collect();
    Ok(Curve::from_points(m, flat)?.resample(opts.nodes))
}

/// Coordinate descent on interior nodes; every accepted move lowers the trapezoidal energy.
fn descend(w: &dyn ScalarField, curve: &mut Curve, sweeps: usize) -> Result<usize> {
    let m = curve.m;
    let n = curve.len();
    let mut s: Vec<f64> = (0..n).map(|k| root(w.value(curve.node(k)))).collect::<Result<_>>()?;
    let mean_seg = curve.length() / (n - 1) as f64;
    // Segments may not grow past this, which keeps the trapezoid rule honest.
    let max_seg = 2.0 * mean_seg;
    let mut step: Vec<f64> = vec![0.25 * mean_seg; n];
    let floor = 1e-9 * mean_seg.max(1e-300);
    let mut done = 0;
    let mut trial = vec![0.0; m];
    for sweep in 0..sweeps {
        let mut improved = false;
        for k in 1..n - 1 {
            if step[k] < floor {
                continue;
            }
            let (pm, pp) = ((k - 1) * m, (k + 1) * m);
            let local = |pts: &[f64], x: &[f64], sx: f64, s: &[f64]| {
                (s[k - 1] + sx) * dist(&pts[pm..pm + m], x) + (sx + s[k + 1]) * dist(x, &pts[pp..pp + m])
            };
            let cur = local(&curve.points, curve.node(k), s[k], &s);
            let mut best = (cur, None);
            for d in 0..m {
                for sign in [1.0, -1.0] {
                    trial.copy_from_slice(curve.node(k));
                    trial[d] += sign * step[k];
                    if dist(&curve.points[pm..pm + m], &trial) > max_seg
                        || dist(&trial, &curve.points[pp..pp + m]) > max_seg
                    {
                        continue;
                    }
                    let st = root(w.value(&trial))?;
                    let e = local(&curve.points, &trial, st, &s);
                    if e < best.0 {
                        best = (e, Some((trial.clone(), st)));
                    }
                }
            }
            match best.1 {
                Some((x, st)) => {
                    curve.points[k * m..(k + 1) * m].copy_from_slice(&x);
                    s[k] = st;
                    step[k] *= 1.5;
                    improved = true;
                }
                None => step[k] *= 0.5,
            }
        }
        done = sweep + 1;
        if (sweep + 1) % 25 == 0 {
            let re = curve.resample(n);
            let rs: Vec<f64> = (0..n).map(|k| root(w.value(re.node(k)))).collect::<Result<_>>()?;
            if trapezoid(&re, &rs) <= trapezoid(curve, &s) {
                *curve = re;
                s = rs;
                let ms = curve.length() / (n - 1) as f64;
                step.iter_mut().for_each(|x| *x = x.max(0.05 * ms));
            }
        }
        if !improved && step.iter().skip(1).take(n - 2).all(|&x| x < floor) {
            break;
        }
    }
    Ok(done)
}

fn optimized_path(
    w: &dyn ScalarField,
    p: &[f64],
    q: &[f64],
    opts: &GeodesicOptions,
) -> Result<(f64, Curve, Method, Diagnostics)> {
    let seg = Curve::segment(p, q, opts.nodes)?;
    let seg_e = line_energy(w, &seg)?;
    let graph = graph_path(w, p, q, opts)?;
    let mut curve = if line_energy(w, &graph)? < seg_e { graph } else { seg };
    let mut trace = vec![line_energy(w, &curve)?];
    let mut sweeps = descend(w, &mut curve, opts.sweeps)?;
    let mut value = line_energy(w, &curve)?;
    trace.push(value);
    let mut n = opts.nodes;
    while 2 * (n - 1) < opts.max_nodes {
        n = 2 * (n - 1) + 1;
        let mut finer = curve.resample(n);
        sweeps += descend(w, &mut finer, opts.sweeps)?;
        let e = line_energy(w, &finer)?;
        trace.push(e);
        let change = (e - value).abs() / value.abs().max(1e-300);
        curve = finer;
        value = e;
        if change < opts.refine_tol {
            break;
        }
    }
    let straight = Curve::segment(p, q, curve.len())?;
    let straight_e = line_energy(w, &straight)?;
    if straight_e < value {
        curve = straight;
        value = straight_e;
    }
    let diag = Diagnostics { nodes: curve.len(), sweeps, trace, ..Default::default() };
    Ok((value, curve, Method::Optimized, diag))
}

/// Field known on a box, such as a cached `W^ξ`.
pub trait BoundedField: ScalarField {
    fn bounds(&self) -> (&[f64], &[f64]);
}

/// `σ^ξ`: geodesic between the well balls, curve normalized to the one-third convention.
pub fn sigma_xi(cache: &dyn BoundedField, balls: &WellBalls) -> Result<TensionResult> {
    let (lo, hi) = cache.bounds();
    let opts = GeodesicOptions { bounds: Some((lo.to_vec(), hi.to_vec())), ..Default::default() };
    for z in [&balls.a, &balls.b] {
        if z.iter().zip(lo.iter().zip(hi)).any(|(x, (l, h))| x < l || x > h) {
            return Err(Error::CacheTooSmall);
        }
    }
    let field = CacheAdapter(cache);
    geodesic(&field, &balls.a, &balls.b, Some(balls), &opts)
}

struct CacheAdapter<'a>(&'a dyn BoundedField);

impl ScalarField for CacheAdapter<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.0.value(z)
    }
}

/// True when nodes with `t ≤ −1/3` lie in the `a`-ball and nodes with `t ≥ 1/3` in the `b`-ball,
/// with nodes placed exactly at `±1/3`.
pub fn is_one_third_normalized(curve: &Curve, balls: &WellBalls) -> bool {
    let third = 1.0 / 3.0;
    let has = |v: f64| curve.t.contains(&v);
    has(-third)
        && has(third)
        && (0..curve.len()).all(|k| {
            let t = curve.t[k];
            (t > -third || balls.in_a(curve.node(k))) && (t < third || balls.in_b(curve.node(k)))
        })
}

/// Reparametrizes so that `[−1, −1/3]` stays in the `a`-ball and `[1/3, 1]` in the `b`-ball.
/// Nodes are kept (a node may be repeated), so the line energy is unchanged.
pub fn normalize_one_third(curve: &Curve, balls: &WellBalls) -> Result<Curve> {
    if !balls.in_a(curve.first()) || !balls.in_b(curve.last()) {
        return Err(Error::EndpointOutsideBall);
    }
    if is_one_third_normalized(curve, balls) {
        return Ok(curve.clone());
    }
    let n = curve.len();
    let ka = (0..n).take_while(|&k| balls.in_a(curve.node(k))).last().unwrap();
    let kb = (0..n).rev().take_while(|&k| balls.in_b(curve.node(k))).last().unwrap();
    let (ka, kb) = if ka < kb { (ka, kb) } else { (0, n - 1) };
    let mut idx: Vec<usize> = (0..=ka).collect();
    if ka == 0 {
        idx.push(0);
    }
    let a_count = idx.len();
    idx.extend(ka + 1..kb);
    let mid_end = idx.len();
    if kb == n - 1 {
        idx.push(n - 1);
    }
    idx.extend(kb..n);
    let mut t = Vec::with_capacity(idx.len());
    let spread = |count: usize, from: f64, to: f64, t: &mut Vec<f64>, skip_first: bool| {
        for j in 0..count {
            if skip_first && j == 0 {
                continue;
            }
            t.push(if j + 1 == count { to } else { from + (to - from) * j as f64 / (count - 1) as f64 });
        }
    };
    let third = 1.0 / 3.0;
    spread(a_count, -1.0, -third, &mut t, false);
    let b_count = idx.len() - mid_end;
    spread(mid_end - a_count + 2, -third, third, &mut t, true);
    t.pop();
    spread(b_count, third, 1.0, &mut t, false);
    let last = t.len() - 1;
    t[last] = 1.0;
    let points: Vec<f64> = idx.iter().flat_map(|&k| curve.node(k).to_vec()).collect();
    Curve::new(curve.m, points, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{FnField, WellPotential};

    fn quartic1() -> WellPotential {
        WellPotential::standard()
    }

    #[test]
    fn scalar_sigma_is_eight_thirds() {
        let r = sigma_h(&quartic1(), &[-1.0], &[1.0]).unwrap();
        assert!((r.value - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.method, Method::ClosedForm);
        assert!(r.value <= r.diagnostics.segment_energy + 1e-9);
    }

    #[test]
    fn sigma_rejects_nonzero_wells() {
        let f = FnField { m: 1, f: |z: &[f64]| (1.0 - z[0] * z[0]).powi(2) + 0.1 };
        assert!(matches!(sigma_h(&f, &[-1.0], &[1.0]), Err(Error::WellsNotZero { .. })));
    }

    #[test]
    fn planar_geodesic_matches_scalar_value() {
        let w = WellPotential::quartic(5.75, vec![-1.0, 0.0], vec![1.0, 0.0]).unwrap();
        let r = sigma_h(&w, &[-1.0, 0.0], &[1.0, 0.0]).unwrap();
        let exact = 5.75f64.sqrt() * 8.0 / 3.0;
        assert!((r.value / exact - 1.0).abs() < 2e-3, "{}", r.value);
        assert!(r.value <= r.diagnostics.segment_energy + 1e-12);
        assert!(r.diagnostics.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-3)));
    }

    #[test]
    fn bent_metric_prefers_detour() {
        // A bump on the segment makes the straight path expensive.
        let w = FnField {
            m: 2,
            f: |z: &[f64]| {
                let base = (z[0] * z[0] - 1.0).powi(2) + z[1] * z[1];
                base * (1.0 + 20.0 * (-(z[0] * z[0] + z[1] * z[1]) / 0.1).exp())
            },
        };
        let r = sigma_h(&w, &[-1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(r.value < r.diagnostics.segment_energy * 0.95);
    }

    #[test]
    fn distance_zero_inside_ball() {
        let balls = WellBalls::new(&[-1.0], &[1.0], 0.2, 0.2);
        let d = geodesic_distance(&quartic1(), &[-1.1], &[-0.9], Some(&balls)).unwrap();
        assert_eq!(d.value, 0.0);
        let p = geodesic_distance(&quartic1(), &[0.3], &[0.3], None).unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn normalization_keeps_energy() {
        let balls = WellBalls::new(&[-1.0], &[1.0], 0.2, 0.2);
        let c = Curve::segment(&[-1.0], &[1.0], 41).unwrap();
        let e0 = line_energy(&quartic1(), &c).unwrap();
        let nc = normalize_one_third(&c, &balls).unwrap();
        assert!(is_one_third_normalized(&nc, &balls));
        assert!((line_energy(&quartic1(), &nc).unwrap() - e0).abs() <= 1e-12);
        for k in 0..=30 {
            let t = -1.0 + (2.0 / 3.0) * k as f64 / 30.0;
            assert!(balls.in_a(&nc.at(t)));
        }
        assert_eq!(normalize_one_third(&nc, &balls).unwrap(), nc);
        let short = Curve::segment(&[-1.0], &[1.0], 3).unwrap();
        let ns = normalize_one_third(&short, &balls).unwrap();
        assert!(is_one_third_normalized(&ns, &balls));
        assert!(matches!(
            normalize_one_third(&Curve::segment(&[0.0], &[1.0], 5).unwrap(), &balls),
            Err(Error::EndpointOutsideBall)
        ));
    }

    #[test]
    fn negative_field_is_rejected() {
        let f = FnField { m: 1, f: |_: &[f64]| -1.0 };
        let c = Curve::segment(&[0.0], &[1.0], 3).unwrap();
        assert!(matches!(line_energy(&f, &c), Err(Error::NegativePotential { .. })));
    }

    #[test]
    fn resample_keeps_endpoints() {
        let c = Curve::from_points(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let r = c.resample(9);
        assert_eq!(r.first(), c.first());
        assert_eq!(r.last(), c.last());
        assert!((r.length() - 2.0).abs() < 1e-12);
    }
}
