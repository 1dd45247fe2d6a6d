//! Two-scale periodic double-well potentials `W(y1, y2, z)` and their cell averages.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;
use crate::numeric::{dist, norm};

pub type SharedPotential = Arc<dyn TwoScalePotential>;

/// Largest spatial dimension supported by the composite.
pub const MAX_DIM: usize = 8;

/// Evaluator of `W(y1, y2, z)` with `y1 ∈ Q1`, `y2 ∈ Q2`, `z ∈ R^M`.
///
/// `y1`, `y2` are physical coordinates; implementations reduce them modulo their lattices.
pub trait TwoScalePotential: Send + Sync + fmt::Debug {
    /// Spatial dimension `N`.
    fn dim_n(&self) -> usize;
    /// Order-parameter dimension `M`.
    fn dim_m(&self) -> usize;
    fn eval(&self, y1: &[f64], y2: &[f64], z: &[f64]) -> f64;
    fn wells(&self) -> (&[f64], &[f64]);
    /// `R` such that `W(y1, y2, z) >= |z|/R` whenever `|z| >= R`.
    fn growth_r(&self) -> f64;
    /// Upper bound of `W` on `|z| <= s`.
    fn bound(&self, s: f64) -> f64;
    /// Lower envelope independent of the cell variables.
    fn lower_envelope(&self, z: &[f64]) -> f64;
    fn cell1(&self) -> &Lattice;
    fn cell2(&self) -> &Lattice;

    /// Gradient in `z`; defaults to central differences.
    fn grad_z(&self, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        let mut zz = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * (1.0 + z[i].abs());
            zz[i] = z[i] + h;
            let fp = self.eval(y1, y2, &zz);
            zz[i] = z[i] - h;
            let fm = self.eval(y1, y2, &zz);
            zz[i] = z[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
    }

    /// Row-major `M x M` Hessian in `z`; defaults to differences of `grad_z`.
    fn hess_z(&self, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        let m = z.len();
        let mut zz = z.to_vec();
        let mut gp = vec![0.0; m];
        let mut gm = vec![0.0; m];
        for j in 0..m {
            let h = 1e-5 * (1.0 + z[j].abs());
            zz[j] = z[j] + h;
            self.grad_z(y1, y2, &zz, &mut gp);
            zz[j] = z[j] - h;
            self.grad_z(y1, y2, &zz, &mut gm);
            zz[j] = z[j];
            for i in 0..m {
                out[i * m + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
    }

    /// Whether `W` depends on the cell variables at all.
    fn oscillates(&self) -> bool {
        true
    }

    /// Whether `grad_z` is a true derivative (false for kinked bases).
    fn differentiable(&self) -> bool {
        true
    }

    /// Well-pair components when `W` is a mixture `Σ_k w_k(y1, y2) W_k(z)`.
    fn components(&self) -> Option<&[WellPotential]> {
        None
    }

    /// Mixture weights at `(y1, y2)`; only called when `components` is `Some`.
    fn mixture(&self, _y1: &[f64], _y2: &[f64], _out: &mut [f64]) {}

    /// Copy with indicator jumps replaced by ramps of the given width (cell-fraction units).
    fn smoothed(&self, _width: f64) -> Option<SharedPotential> {
        None
    }

    /// Canonical description, stable across runs.
    fn describe(&self) -> String;
}

/// Hex digest of a potential description, used to tie reports to tension values.
pub fn potential_hash(p: &dyn TwoScalePotential) -> String {
    let d = Sha256::digest(p.describe().as_bytes());
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    /// `16 |z-a|^2 |z-b|^2 / |b-a|^4`, equal to `(1-u^2)^2` for `a = -1, b = 1`.
    #[default]
    Quartic,
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quartic" => Ok(BaseKind::Quartic),
            other => Err(invalid(format!("unknown base potential `{other}`"))),
        }
    }
}

/// A scaled one-well-pair potential `scale * W0(z)` independent of the cell variables.
#[derive(Clone, Debug, PartialEq)]
pub struct WellPotential {
    pub kind: BaseKind,
    pub scale: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    k: f64,
}

impl WellPotential {
    pub fn new(kind: BaseKind, scale: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(invalid("wells must be non-empty vectors of equal length"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("well potential scale must be positive, got {scale}")));
        }
        let d = dist(&a, &b);
        if d == 0.0 {
            return Err(invalid("wells must be distinct"));
        }
        Ok(Self { kind, scale, k: scale * 16.0 / d.powi(4), a, b })
    }

    pub fn quartic(scale: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(BaseKind::Quartic, scale, a, b)
    }

    /// The scalar `(1 - u^2)^2`.
    pub fn standard() -> Self {
        Self::quartic(1.0, vec![-1.0], vec![1.0]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        if z.len() == 1 {
            let (p, q) = (z[0] - self.a[0], z[0] - self.b[0]);
            return self.k * (p * p) * (q * q);
        }
        let (mut da, mut db) = (0.0, 0.0);
        for i in 0..z.len() {
            let p = z[i] - self.a[i];
            let q = z[i] - self.b[i];
            da += p * p;
            db += q * q;
        }
        self.k * da * db
    }

    #[inline]
    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        let (mut da, mut db) = (0.0, 0.0);
        for i in 0..z.len() {
            let p = z[i] - self.a[i];
            let q = z[i] - self.b[i];
            da += p * p;
            db += q * q;
        }
        for i in 0..z.len() {
            out[i] = self.k * 2.0 * ((z[i] - self.a[i]) * db + (z[i] - self.b[i]) * da);
        }
    }

    pub fn hess(&self, z: &[f64], out: &mut [f64]) {
        let m = z.len();
        let (mut da, mut db) = (0.0, 0.0);
        for i in 0..m {
            da += (z[i] - self.a[i]).powi(2);
            db += (z[i] - self.b[i]).powi(2);
        }
        for i in 0..m {
            for j in 0..m {
                let pa = z[i] - self.a[i];
                let pb = z[i] - self.b[i];
                let qa = z[j] - self.a[j];
                let qb = z[j] - self.b[j];
                let diag = if i == j { 2.0 * (da + db) } else { 0.0 };
                out[i * m + j] = self.k * (diag + 4.0 * (pa * qb + pb * qa));
            }
        }
    }

    /// Upper bound of the potential on the ball `|z| <= s`.
    pub fn sup_on_ball(&self, s: f64) -> f64 {
        let ra = s + norm(&self.a);
        let rb = s + norm(&self.b);
        self.k * ra * ra * rb * rb
    }

    fn describe(&self) -> String {
        format!("{:?}*{}[{:?},{:?}]", self.kind, self.scale, self.a, self.b)
    }
}

fn growth_for(a: &[f64], b: &[f64], cmin: f64) -> f64 {
    let rho = norm(a).max(norm(b)).max(0.5);
    2.0 * rho * cmin.powf(-0.25).max(1.0)
}

/// Indicator composite `1_{I1}(y1)[1_{I2}(y2) W1 + 1_{Q2∖I2}(y2) W2] + 1_{Q1∖I1}(y1) W3`
/// with `I1`, `I2` centered axis-aligned cubes of volume fractions `theta1`, `theta2`.
#[derive(Clone, Debug)]
pub struct Composite {
    n: usize,
    theta: [f64; 2],
    half: [f64; 2],
    ramp: Option<f64>,
    comps: Vec<WellPotential>,
    cell1: Lattice,
    cell2: Lattice,
    growth: f64,
}

/// Builds the indicator composite on unit cells.
pub fn make_composite(
    n: usize,
    theta1: f64,
    theta2: f64,
    w1: WellPotential,
    w2: WellPotential,
    w3: WellPotential,
) -> Result<Composite> {
    Composite::new(n, theta1, theta2, [w1, w2, w3], Lattice::unit(n), Lattice::unit(n))
}

impl Composite {
    pub fn new(
        n: usize,
        theta1: f64,
        theta2: f64,
        comps: [WellPotential; 3],
        cell1: Lattice,
        cell2: Lattice,
    ) -> Result<Self> {
        for (name, t) in [("theta1", theta1), ("theta2", theta2)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(format!("{name} = {t} outside [0, 1]")));
            }
        }
        if n == 0 || n > MAX_DIM || cell1.dim() != n || cell2.dim() != n {
            return Err(invalid("cell lattices must match the spatial dimension"));
        }
        let [w1, w2, w3] = comps;
        if w1.a != w2.a || w1.a != w3.a || w1.b != w2.b || w1.b != w3.b {
            return Err(Error::WellMismatch);
        }
        let cmin = w1.scale.min(w2.scale).min(w3.scale);
        let growth = growth_for(&w1.a, &w1.b, cmin);
        let side = |t: f64| t.powf(1.0 / n as f64);
        Ok(Self {
            n,
            theta: [theta1, theta2],
            half: [0.5 * side(theta1), 0.5 * side(theta2)],
            ramp: None,
            comps: vec![w1, w2, w3],
            cell1,
            cell2,
            growth,
        })
    }

    pub fn theta(&self) -> [f64; 2] {
        self.theta
    }

    /// Copy whose inclusion indicators are linear ramps of `width` across each face.
    pub fn with_ramp(&self, width: f64) -> Self {
        Self { ramp: (width > 0.0).then_some(width), ..self.clone() }
    }

    #[inline]
    fn indicator(&self, lattice: &Lattice, y: &[f64], half: f64) -> f64 {
        let mut buf = [0.0f64; MAX_DIM];
        let f = &mut buf[..self.n];
        lattice.frac_coords(y, f);
        match self.ramp {
            None => {
                let inside = f.iter().all(|&c| c >= 0.5 - half && c < 0.5 + half);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Some(w) => f
                .iter()
                .map(|&c| ((half - (c - 0.5).abs()) / w + 0.5).clamp(0.0, 1.0))
                .product(),
        }
    }

    #[inline]
    fn weights(&self, y1: &[f64], y2: &[f64]) -> [f64; 3] {
        let c1 = self.indicator(&self.cell1, y1, self.half[0]);
        if c1 == 0.0 {
            return [0.0, 0.0, 1.0];
        }
        let c2 = self.indicator(&self.cell2, y2, self.half[1]);
        [c1 * c2, c1 * (1.0 - c2), 1.0 - c1]
    }
}

impl TwoScalePotential for Composite {
    fn dim_n(&self) -> usize {
        self.n
    }

    fn dim_m(&self) -> usize {
        self.comps[0].dim()
    }

    #[inline]
    fn eval(&self, y1: &[f64], y2: &[f64], z: &[f64]) -> f64 {
        let w = self.weights(y1, y2);
        let mut v = 0.0;
        for k in 0..3 {
            if w[k] != 0.0 {
                v += w[k] * self.comps[k].eval(z);
            }
        }
        v
    }

    fn grad_z(&self, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        let w = self.weights(y1, y2);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; z.len()];
        for k in 0..3 {
            if w[k] != 0.0 {
                self.comps[k].grad(z, &mut g);
                for i in 0..z.len() {
                    out[i] += w[k] * g[i];
                }
            }
        }
    }

    fn hess_z(&self, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        let w = self.weights(y1, y2);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut hk = vec![0.0; out.len()];
        for k in 0..3 {
            if w[k] != 0.0 {
                self.comps[k].hess(z, &mut hk);
                for i in 0..out.len() {
                    out[i] += w[k] * hk[i];
                }
            }
        }
    }

    fn wells(&self) -> (&[f64], &[f64]) {
        (&self.comps[0].a, &self.comps[0].b)
    }

    fn growth_r(&self) -> f64 {
        self.growth
    }

    fn bound(&self, s: f64) -> f64 {
        self.comps.iter().map(|c| c.sup_on_ball(s)).fold(0.0, f64::max)
    }

    fn lower_envelope(&self, z: &[f64]) -> f64 {
        self.comps.iter().map(|c| c.eval(z)).fold(f64::INFINITY, f64::min)
    }

    fn cell1(&self) -> &Lattice {
        &self.cell1
    }

    fn cell2(&self) -> &Lattice {
        &self.cell2
    }

    fn components(&self) -> Option<&[WellPotential]> {
        Some(&self.comps)
    }

    fn mixture(&self, y1: &[f64], y2: &[f64], out: &mut [f64]) {
        out[..3].copy_from_slice(&self.weights(y1, y2));
    }

    fn smoothed(&self, width: f64) -> Option<SharedPotential> {
        Some(Arc::new(self.with_ramp(width)))
    }

    fn describe(&self) -> String {
        format!(
            "composite(n={},theta={:?},ramp={:?},[{}])",
            self.n,
            self.theta,
            self.ramp,
            self.comps.iter().map(|c| c.describe()).collect::<Vec<_>>().join(";")
        )
    }
}

/// `scale * W0(z)`, constant in both cell variables.
#[derive(Clone, Debug)]
pub struct Uniform {
    n: usize,
    comps: Vec<WellPotential>,
    cell: Lattice,
    growth: f64,
}

impl Uniform {
    pub fn new(n: usize, base: WellPotential) -> Self {
        let growth = growth_for(&base.a, &base.b, base.scale);
        Self { n, comps: vec![base], cell: Lattice::unit(n), growth }
    }

    pub fn base(&self) -> &WellPotential {
        &self.comps[0]
    }
}

impl TwoScalePotential for Uniform {
    fn dim_n(&self) -> usize {
        self.n
    }

    fn dim_m(&self) -> usize {
        self.comps[0].dim()
    }

    #[inline]
    fn eval(&self, _y1: &[f64], _y2: &[f64], z: &[f64]) -> f64 {
        self.comps[0].eval(z)
    }

    fn grad_z(&self, _y1: &[f64], _y2: &[f64], z: &[f64], out: &mut [f64]) {
        self.comps[0].grad(z, out)
    }

    fn hess_z(&self, _y1: &[f64], _y2: &[f64], z: &[f64], out: &mut [f64]) {
        self.comps[0].hess(z, out)
    }

    fn wells(&self) -> (&[f64], &[f64]) {
        (&self.comps[0].a, &self.comps[0].b)
    }

    fn growth_r(&self) -> f64 {
        self.growth
    }

    fn bound(&self, s: f64) -> f64 {
        self.comps[0].sup_on_ball(s)
    }

    fn lower_envelope(&self, z: &[f64]) -> f64 {
        self.comps[0].eval(z)
    }

    fn cell1(&self) -> &Lattice {
        &self.cell
    }

    fn cell2(&self) -> &Lattice {
        &self.cell
    }

    fn oscillates(&self) -> bool {
        false
    }

    fn components(&self) -> Option<&[WellPotential]> {
        Some(&self.comps)
    }

    fn mixture(&self, _y1: &[f64], _y2: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn smoothed(&self, _width: f64) -> Option<SharedPotential> {
        Some(Arc::new(self.clone()))
    }

    fn describe(&self) -> String {
        format!("uniform(n={},{})", self.n, self.comps[0].describe())
    }
}

type EvalFn = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;

/// Potential given by a closure; hypothesis metadata is supplied by the caller.
pub struct FnPotential {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    f: Box<EvalFn>,
    growth: f64,
    bound: f64,
    cell: Lattice,
    label: String,
}

impl fmt::Debug for FnPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPotential").field("label", &self.label).finish()
    }
}

impl FnPotential {
    pub fn new(
        label: &str,
        n: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        f: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            a,
            b,
            f: Box::new(f),
            growth: 2.0,
            bound: f64::INFINITY,
            cell: Lattice::unit(n),
            label: label.to_string(),
        }
    }

    pub fn with_growth(mut self, r: f64) -> Self {
        self.growth = r;
        self
    }
}

impl TwoScalePotential for FnPotential {
    fn dim_n(&self) -> usize {
        self.n
    }

    fn dim_m(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, y1: &[f64], y2: &[f64], z: &[f64]) -> f64 {
        (self.f)(y1, y2, z)
    }

    fn wells(&self) -> (&[f64], &[f64]) {
        (&self.a, &self.b)
    }

    fn growth_r(&self) -> f64 {
        self.growth
    }

    fn bound(&self, _s: f64) -> f64 {
        self.bound
    }

    fn lower_envelope(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn cell1(&self) -> &Lattice {
        &self.cell
    }

    fn cell2(&self) -> &Lattice {
        &self.cell
    }

    fn describe(&self) -> String {
        format!("fn({})", self.label)
    }
}

/// `φ_M(|z|) W + (1 - φ_M(|z|)) |z|/R` with a C² cutoff, `φ_M = 1` on `[0, M]`, `0` past `2M`.
#[derive(Debug)]
pub struct Truncated {
    inner: SharedPotential,
    m: f64,
    r: f64,
}

pub fn truncate(p: SharedPotential, m: f64, r: f64) -> Result<Truncated> {
    if !(r > 0.0) || m <= r {
        return Err(invalid(format!("truncation needs M > R > 0 (M = {m}, R = {r})")));
    }
    let (a, b) = p.wells();
    if norm(a) > m || norm(b) > m {
        return Err(invalid("wells must lie inside the truncation radius"));
    }
    Ok(Truncated { inner: p, m, r })
}

impl Truncated {
    #[inline]
    fn cutoff(&self, t: f64) -> (f64, f64) {
        if t <= self.m {
            (1.0, 0.0)
        } else if t >= 2.0 * self.m {
            (0.0, 0.0)
        } else {
            let s = (t - self.m) / self.m;
            let phi = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
            let dphi = -30.0 * s * s * (1.0 - s) * (1.0 - s) / self.m;
            (phi, dphi)
        }
    }
}

impl TwoScalePotential for Truncated {
    fn dim_n(&self) -> usize {
        self.inner.dim_n()
    }

    fn dim_m(&self) -> usize {
        self.inner.dim_m()
    }

    fn eval(&self, y1: &[f64], y2: &[f64], z: &[f64]) -> f64 {
        let t = norm(z);
        let (phi, _) = self.cutoff(t);
        if phi == 1.0 {
            return self.inner.eval(y1, y2, z);
        }
        let lin = t / self.r;
        if phi == 0.0 {
            return lin;
        }
        phi * self.inner.eval(y1, y2, z) + (1.0 - phi) * lin
    }

    fn grad_z(&self, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        let t = norm(z);
        let (phi, dphi) = self.cutoff(t);
        if phi == 1.0 {
            return self.inner.grad_z(y1, y2, z, out);
        }
        let w = if phi > 0.0 { self.inner.eval(y1, y2, z) } else { 0.0 };
        let mut g = vec![0.0; z.len()];
        if phi > 0.0 {
            self.inner.grad_z(y1, y2, z, &mut g);
        }
        for i in 0..z.len() {
            let e = z[i] / t;
            out[i] = phi * g[i] + (1.0 - phi) * e / self.r + dphi * (w - t / self.r) * e;
        }
    }

    fn differentiable(&self) -> bool {
        self.inner.differentiable()
    }

    fn oscillates(&self) -> bool {
        self.inner.oscillates()
    }

    fn wells(&self) -> (&[f64], &[f64]) {
        self.inner.wells()
    }

    fn growth_r(&self) -> f64 {
        self.r.max(self.inner.growth_r())
    }

    fn bound(&self, s: f64) -> f64 {
        self.inner.bound(s.min(2.0 * self.m)).max(s / self.r)
    }

    fn lower_envelope(&self, z: &[f64]) -> f64 {
        self.inner.lower_envelope(z).min(norm(z) / self.r)
    }

    fn cell1(&self) -> &Lattice {
        self.inner.cell1()
    }

    fn cell2(&self) -> &Lattice {
        self.inner.cell2()
    }

    fn describe(&self) -> String {
        format!("truncate(M={},R={},{})", self.m, self.r, self.inner.describe())
    }
}

/// Midpoint nodes of a cell: `B ((i + 1/2)/res)` over the multi-index `i`.
pub fn cell_nodes(lattice: &Lattice, res: usize) -> Vec<Vec<f64>> {
    let n = lattice.dim();
    let count = res.pow(n as u32);
    let mut out = Vec::with_capacity(count);
    let mut c = vec![0.0; n];
    let mut y = vec![0.0; n];
    for idx in 0..count {
        let mut r = idx;
        for d in (0..n).rev() {
            c[d] = ((r % res) as f64 + 0.5) / res as f64;
            r /= res;
        }
        lattice.apply(&c, &mut y);
        out.push(y.clone());
    }
    out
}

/// Double cell average of `W(·, ·, z)` by the midpoint rule with `res1`, `res2` nodes per axis.
pub fn homogenize(p: &dyn TwoScalePotential, z: &[f64], res1: usize, res2: usize) -> f64 {
    let n1 = cell_nodes(p.cell1(), res1);
    let n2 = cell_nodes(p.cell2(), res2);
    let mut acc = crate::numeric::KahanSum::new();
    for y1 in &n1 {
        for y2 in &n2 {
            acc.add(p.eval(y1, y2, z));
        }
    }
    acc.value() / (n1.len() * n2.len()) as f64
}

/// Scalar field on `R^M`.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
}

/// Closure-backed scalar field.
pub struct FnField<F> {
    pub m: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

impl ScalarField for WellPotential {
    fn dim(&self) -> usize {
        WellPotential::dim(self)
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.eval(z)
    }
}

/// `W^h`, evaluated by midpoint quadrature over `Q1 × Q2`.
///
/// Mixture potentials are reduced to per-component node fractions once, which gives the same
/// quadrature sum in a different order.
#[derive(Clone, Debug)]
pub struct HomogenizedPotential {
    source: SharedPotential,
    res1: usize,
    res2: usize,
    fractions: Option<Vec<f64>>,
}

pub const DEFAULT_CELL_RES: usize = 64;

impl HomogenizedPotential {
    pub fn new(source: SharedPotential, res1: usize, res2: usize) -> Result<Self> {
        if res1 == 0 || res2 == 0 {
            return Err(invalid("quadrature resolution must be positive"));
        }
        let fractions = source.components().map(|comps| {
            let k = comps.len();
            let n1 = cell_nodes(source.cell1(), res1);
            let n2 = cell_nodes(source.cell2(), res2);
            let mut acc = vec![crate::numeric::KahanSum::new(); k];
            let mut w = vec![0.0; k];
            for y1 in &n1 {
                for y2 in &n2 {
                    source.mixture(y1, y2, &mut w);
                    for j in 0..k {
                        acc[j].add(w[j]);
                    }
                }
            }
            let total = (n1.len() * n2.len()) as f64;
            acc.iter().map(|s| s.value() / total).collect()
        });
        Ok(Self { source, res1, res2, fractions })
    }

    pub fn with_default_resolution(source: SharedPotential) -> Self {
        Self::new(source, DEFAULT_CELL_RES, DEFAULT_CELL_RES).unwrap()
    }

    pub fn source(&self) -> &SharedPotential {
        &self.source
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.res1, self.res2)
    }

    /// Per-component volume fractions for mixture sources.
    pub fn fractions(&self) -> Option<&[f64]> {
        self.fractions.as_deref()
    }

    pub fn eval_h(&self, z: &[f64]) -> f64 {
        match (&self.fractions, self.source.components()) {
            (Some(fr), Some(comps)) => {
                fr.iter().zip(comps).filter(|(f, _)| **f != 0.0).map(|(f, c)| f * c.eval(z)).sum()
            }
            _ => homogenize(self.source.as_ref(), z, self.res1, self.res2),
        }
    }

    pub fn wells(&self) -> (&[f64], &[f64]) {
        self.source.wells()
    }
}

impl ScalarField for HomogenizedPotential {
    fn dim(&self) -> usize {
        self.source.dim_m()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.eval_h(z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub id: &'static str,
    pub passed: bool,
    pub samples: usize,
    pub worst: Option<Witness>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Spot-checks periodicity, wells, growth, local bound and lower envelope by deterministic sampling.
///
/// Passing is necessary, not sufficient.
pub fn validate_hypotheses(p: &dyn TwoScalePotential, budget: usize) -> Result<HypothesisReport> {
    if budget == 0 {
        return Err(invalid("sample budget must be at least 1"));
    }
    let n = p.dim_n();
    let m = p.dim_m();
    let (a, b) = p.wells();
    let (a, b) = (a.to_vec(), b.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let span = dist(&a, &b);
    let rho = norm(&a).max(norm(&b));
    let r = p.growth_r();
    let finite_or_one = |v: f64| if v.is_finite() { v } else { 1.0 };
    let zero_tol = 1e-12 * (1.0 + finite_or_one(p.bound(rho)));

    let rand_y = |rng: &mut ChaCha8Rng, l: &Lattice| -> Vec<f64> {
        let c: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut y = vec![0.0; n];
        l.apply(&c, &mut y);
        y
    };
    let rand_dir = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let l = norm(&v);
            if l > 1e-3 && l <= 1.0 {
                return v.iter().map(|x| x / l).collect();
            }
        }
    };

    let mut checks = Vec::new();

    // Periodicity under random lattice shifts.
    let mut worst: Option<Witness> = None;
    let mut gap_max = 0.0f64;
    for _ in 0..budget {
        let y1 = rand_y(&mut rng, p.cell1());
        let y2 = rand_y(&mut rng, p.cell2());
        let z: Vec<f64> = (0..m).map(|i| a[i] + (b[i] - a[i]) * rng.gen::<f64>()).collect();
        let k1: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let k2: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let (mut s1, mut s2) = (vec![0.0; n], vec![0.0; n]);
        p.cell1().apply(&k1, &mut s1);
        p.cell2().apply(&k2, &mut s2);
        let y1s: Vec<f64> = y1.iter().zip(&s1).map(|(x, s)| x + s).collect();
        let y2s: Vec<f64> = y2.iter().zip(&s2).map(|(x, s)| x + s).collect();
        let v0 = p.eval(&y1, &y2, &z);
        let v1 = p.eval(&y1s, &y2s, &z);
        let gap = (v1 - v0).abs();
        if gap > gap_max {
            gap_max = gap;
            worst = Some(Witness { y1: y1s, y2: y2s, z, value: v1, bound: v0 });
        }
    }
    let tol = 1e-9 * (1.0 + finite_or_one(p.bound(rho + span)));
    checks.push(HypothesisCheck {
        id: "H1",
        passed: gap_max <= tol,
        samples: budget,
        worst: worst.filter(|_| gap_max > tol),
        note: format!("max periodicity gap {gap_max:.3e}"),
    });

    // Wells are zeros, and no other zero is found by local descent.
    let mut h2_fail: Option<Witness> = None;
    let mut h2_note = String::from("wells vanish; no further zeros found");
    'outer: for s in 0..budget {
        let y1 = rand_y(&mut rng, p.cell1());
        let y2 = rand_y(&mut rng, p.cell2());
        for w in [&a, &b] {
            let v = p.eval(&y1, &y2, w);
            if v.abs() > zero_tol {
                h2_note = format!("W = {v:.3e} at a well");
                h2_fail = Some(Witness { y1, y2, z: w.to_vec(), value: v, bound: 0.0 });
                break 'outer;
            }
        }
        let t = (s as f64 + 0.5) / budget as f64;
        let mut z: Vec<f64> = (0..m)
            .map(|i| a[i] + (b[i] - a[i]) * (1.5 * t - 0.25) + 0.25 * span * (rng.gen::<f64>() - 0.5))
            .collect();
        let v = descend(p, &y1, &y2, &mut z, 200);
        let sep = dist(&z, &a).min(dist(&z, &b));
        if v <= zero_tol && sep > 1e-3 * span {
            h2_note = format!("additional zero at distance {sep:.3e} from the wells");
            h2_fail = Some(Witness { y1, y2, z, value: v, bound: 0.0 });
            break;
        }
        if v < -zero_tol {
            h2_note = format!("negative value {v:.3e}");
            h2_fail = Some(Witness { y1, y2, z, value: v, bound: 0.0 });
            break;
        }
    }
    checks.push(HypothesisCheck {
        id: "H2",
        passed: h2_fail.is_none(),
        samples: budget,
        worst: h2_fail,
        note: h2_note,
    });

    // Growth, local bound, lower envelope.
    let mut h3: Option<(f64, Witness)> = None;
    let mut h4: Option<(f64, Witness)> = None;
    let mut h5: Option<(f64, Witness)> = None;
    let keep = |slot: &mut Option<(f64, Witness)>, excess: f64, w: Witness| {
        if excess > 0.0 && slot.as_ref().is_none_or(|(e, _)| excess > *e) {
            *slot = Some((excess, w));
        }
    };
    for _ in 0..budget {
        let y1 = rand_y(&mut rng, p.cell1());
        let y2 = rand_y(&mut rng, p.cell2());
        let dir = rand_dir(&mut rng);
        let radius = r * (1.0 + 3.0 * rng.gen::<f64>());
        let z: Vec<f64> = dir.iter().map(|d| d * radius).collect();
        let v = p.eval(&y1, &y2, &z);
        let need = radius / r;
        keep(&mut h3, need - v - 1e-12 * need, Witness { y1: y1.clone(), y2: y2.clone(), z, value: v, bound: need });

        let s_ball = [1.0, 2.0, 4.0][rng.gen_range(0..3)] * rho.max(1.0);
        let zr = s_ball * rng.gen::<f64>().powf(1.0 / m as f64);
        let z: Vec<f64> = rand_dir(&mut rng).iter().map(|d| d * zr).collect();
        let v = p.eval(&y1, &y2, &z);
        let cap = p.bound(s_ball);
        keep(&mut h4, v - cap - 1e-12 * cap.abs(), Witness { y1: y1.clone(), y2: y2.clone(), z: z.clone(), value: v, bound: cap });
        let low = p.lower_envelope(&z);
        keep(&mut h5, low - v - 1e-12 * v.abs(), Witness { y1, y2, z, value: v, bound: low });
    }
    for (id, slot, what) in [
        ("H3", h3, "linear growth outside the R-ball"),
        ("H4", h4, "local bound on balls"),
        ("H5", h5, "lower envelope"),
    ] {
        checks.push(HypothesisCheck {
            id,
            passed: slot.is_none(),
            samples: budget,
            note: match &slot {
                None => format!("{what}: no violation"),
                Some((e, _)) => format!("{what}: violated by {e:.3e}"),
            },
            worst: slot.map(|(_, w)| w),
        });
    }
    Ok(HypothesisReport { checks })
}

/// Backtracking gradient descent on `z ↦ W(y1, y2, z)`; returns the final value.
fn descend(p: &dyn TwoScalePotential, y1: &[f64], y2: &[f64], z: &mut [f64], iters: usize) -> f64 {
    let m = z.len();
    let mut g = vec![0.0; m];
    let mut v = p.eval(y1, y2, z);
    let mut t = 0.1;
    let mut trial = vec![0.0; m];
    for _ in 0..iters {
        p.grad_z(y1, y2, z, &mut g);
        let gn2: f64 = g.iter().map(|x| x * x).sum();
        if gn2 < 1e-30 || v <= 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..m {
                trial[i] = z[i] - t * g[i];
            }
            let vt = p.eval(y1, y2, &trial);
            if vt <= v - 0.25 * t * gn2 {
                z.copy_from_slice(&trial);
                v = vt;
                t *= 2.0;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    v
}

/// Declarative potential description used by configs and the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialSpec {
    Composite {
        theta1: f64,
        theta2: f64,
        c1: f64,
        c2: f64,
        c3: f64,
        #[serde(default)]
        base: BaseKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
    },
    Uniform {
        #[serde(default)]
        base: BaseKind,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    /// The composite with fractions `1/2`, scales `(1, 4, 9)`.
    pub fn reference_composite() -> Self {
        PotentialSpec::Composite {
            theta1: 0.5,
            theta2: 0.5,
            c1: 1.0,
            c2: 4.0,
            c3: 9.0,
            base: BaseKind::Quartic,
            a: None,
            b: None,
        }
    }

    /// Wells, defaulting to `∓e_1` in `R^m`.
    pub fn wells(&self, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = match self {
            PotentialSpec::Composite { a, b, .. } | PotentialSpec::Uniform { a, b, .. } => (a, b),
        };
        let unit = |s: f64| {
            let mut v = vec![0.0; m.max(1)];
            v[0] = s;
            v
        };
        let a = a.clone().unwrap_or_else(|| unit(-1.0));
        let b = b.clone().unwrap_or_else(|| unit(1.0));
        if a.len() != b.len() {
            return Err(invalid("wells a and b must have the same length"));
        }
        Ok((a, b))
    }

    /// Builds the potential on `R^n` cells; `m` is used only when wells are not given.
    pub fn build(&self, n: usize, m: usize) -> Result<SharedPotential> {
        let (a, b) = self.wells(m)?;
        match *self {
            PotentialSpec::Composite { theta1, theta2, c1, c2, c3, base, .. } => {
                let w = |c: f64| WellPotential::new(base, c, a.clone(), b.clone());
                Ok(Arc::new(make_composite(n, theta1, theta2, w(c1)?, w(c2)?, w(c3)?)?))
            }
            PotentialSpec::Uniform { base, scale, .. } => {
                Ok(Arc::new(Uniform::new(n, WellPotential::new(base, scale, a, b)?)))
            }
        }
    }
}

impl FromStr for PotentialSpec {
    type Err = Error;

    /// Parses `composite{theta1=..,theta2=..,c1=..,c2=..,c3=..,base=quartic}` or
    /// `uniform{base=quartic,scale=..}`; vector wells use `:` separators (`a=-1:0`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once('{').ok_or_else(|| invalid(format!("expected `name{{...}}`, got `{s}`")))?;
        let body = rest.strip_suffix('}').ok_or_else(|| invalid("missing closing brace"))?;
        let mut kv = std::collections::BTreeMap::new();
        for item in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| invalid(format!("expected key=value, got `{item}`")))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(invalid(format!("duplicate key `{k}`")));
            }
        }
        let num = |kv: &mut std::collections::BTreeMap<String, String>, k: &str| -> Result<Option<f64>> {
            kv.remove(k)
                .map(|v| v.parse::<f64>().map_err(|_| invalid(format!("`{k}` must be a number, got `{v}`"))))
                .transpose()
        };
        let vector = |kv: &mut std::collections::BTreeMap<String, String>, k: &str| -> Result<Option<Vec<f64>>> {
            kv.remove(k)
                .map(|v| {
                    v.split(':')
                        .map(|x| x.trim().parse::<f64>().map_err(|_| invalid(format!("bad component in `{k}`"))))
                        .collect()
                })
                .transpose()
        };
        let base = kv.remove("base").map(|v| v.parse()).transpose()?.unwrap_or_default();
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| invalid(format!("missing `{k}`")));
        let spec = match name.trim() {
            "composite" => PotentialSpec::Composite {
                theta1: need(num(&mut kv, "theta1")?, "theta1")?,
                theta2: need(num(&mut kv, "theta2")?, "theta2")?,
                c1: need(num(&mut kv, "c1")?, "c1")?,
                c2: need(num(&mut kv, "c2")?, "c2")?,
                c3: need(num(&mut kv, "c3")?, "c3")?,
                base,
                a: vector(&mut kv, "a")?,
                b: vector(&mut kv, "b")?,
            },
            "uniform" => PotentialSpec::Uniform {
                base,
                scale: num(&mut kv, "scale")?.unwrap_or(1.0),
                a: vector(&mut kv, "a")?,
                b: vector(&mut kv, "b")?,
            },
            other => return Err(invalid(format!("unknown potential `{other}`"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(invalid(format!("unknown key `{k}`")));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Composite {
        let w = |c| WellPotential::quartic(c, vec![-1.0], vec![1.0]).unwrap();
        make_composite(1, 0.5, 0.5, w(1.0), w(4.0), w(9.0)).unwrap()
    }

    #[test]
    fn quartic_matches_standard_form() {
        let w = WellPotential::standard();
        for &u in &[-1.3, -1.0, -0.2, 0.0, 0.7, 1.0, 2.5] {
            let e = (1.0 - u * u) * (1.0f64 - u * u);
            assert!((w.eval(&[u]) - e).abs() < 1e-14 * (1.0 + e));
        }
    }

    #[test]
    fn quartic_derivatives_match_differences() {
        let w = WellPotential::quartic(2.0, vec![-1.0, 0.5], vec![1.0, 0.0]).unwrap();
        let z = [0.3, -0.4];
        let mut g = [0.0; 2];
        let mut hs = [0.0; 4];
        w.grad(&z, &mut g);
        w.hess(&z, &mut hs);
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (w.eval(&zp) - w.eval(&zm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
            let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
            w.grad(&zp, &mut gp);
            w.grad(&zm, &mut gm);
            for j in 0..2 {
                assert!(((gp[j] - gm[j]) / (2.0 * h) - hs[j * 2 + i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn composite_selects_phases() {
        let p = reference();
        assert_eq!(p.eval(&[0.5], &[0.5], &[0.0]), 1.0);
        assert_eq!(p.eval(&[0.5], &[0.1], &[0.0]), 4.0);
        assert_eq!(p.eval(&[0.1], &[0.5], &[0.0]), 9.0);
        assert_eq!(p.eval(&[3.5], &[-7.5], &[0.0]), 1.0);
    }

    #[test]
    fn full_inclusion_ignores_outer_phase() {
        let w = |c| WellPotential::quartic(c, vec![-1.0], vec![1.0]).unwrap();
        let p = make_composite(2, 1.0, 0.3, w(1.0), w(2.0), w(1e6)).unwrap();
        for i in 0..50 {
            let y1 = [i as f64 * 0.0213, 1.0 - i as f64 * 0.0197];
            let v = p.eval(&y1, &[0.5, 0.5], &[0.2]);
            assert!(v < 3.0);
        }
    }

    #[test]
    fn composite_rejects_bad_input() {
        let w = |c| WellPotential::quartic(c, vec![-1.0], vec![1.0]).unwrap();
        assert!(make_composite(1, 1.5, 0.5, w(1.0), w(1.0), w(1.0)).is_err());
        let other = WellPotential::quartic(1.0, vec![-1.0], vec![2.0]).unwrap();
        assert!(matches!(make_composite(1, 0.5, 0.5, w(1.0), w(1.0), other), Err(Error::WellMismatch)));
    }

    #[test]
    fn homogenized_reference_value() {
        let p: SharedPotential = Arc::new(reference());
        let wh = HomogenizedPotential::with_default_resolution(p.clone());
        assert_eq!(wh.eval_h(&[0.0]), 5.75);
        assert_eq!(homogenize(p.as_ref(), &[0.0], 64, 64), 5.75);
        assert_eq!(wh.eval_h(&[-1.0]), 0.0);
        assert_eq!(wh.eval_h(&[1.0]), 0.0);
        for &z in &[-1.7, -0.3, 0.2, 0.9, 1.4] {
            let brute = homogenize(p.as_ref(), &[z], 64, 64);
            assert!((wh.eval_h(&[z]) - brute).abs() < 1e-12 * brute.max(1.0));
        }
    }

    #[test]
    fn homogenize_of_uniform_is_base() {
        let base = WellPotential::quartic(3.0, vec![-1.0], vec![1.0]).unwrap();
        let p = Uniform::new(2, base.clone());
        assert!((homogenize(&p, &[0.3], 8, 8) - base.eval(&[0.3])).abs() < 1e-14);
    }

    #[test]
    fn truncation_cases() {
        let p: SharedPotential = Arc::new(reference());
        let r = p.growth_r();
        let m = 1.5 * r;
        let t = truncate(p.clone(), m, r).unwrap();
        let y = [0.3];
        assert_eq!(t.eval(&y, &y, &[0.7]), p.eval(&y, &y, &[0.7]));
        assert_eq!(t.eval(&y, &y, &[-1.0]), 0.0);
        let far = 3.0 * m;
        assert!((t.eval(&y, &y, &[far]) - far / r).abs() < 1e-12);
        assert!(truncate(p, r, r).is_err());
    }

    #[test]
    fn truncation_gradient_matches_differences() {
        let p: SharedPotential = Arc::new(reference());
        let r = p.growth_r();
        let t = truncate(p, 1.2 * r, r).unwrap();
        let y = [0.6];
        for &z in &[1.3 * r, 1.7 * r, 2.1 * r] {
            let mut g = [0.0];
            t.grad_z(&y, &y, &[z], &mut g);
            let h = 1e-6;
            let fd = (t.eval(&y, &y, &[z + h]) - t.eval(&y, &y, &[z - h])) / (2.0 * h);
            assert!((fd - g[0]).abs() < 1e-5 * (1.0 + g[0].abs()), "{fd} vs {}", g[0]);
        }
    }

    #[test]
    fn reference_composite_passes_hypotheses() {
        let rep = validate_hypotheses(&reference(), 200).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        let p2 = PotentialSpec::reference_composite().build(2, 2).unwrap();
        let rep = validate_hypotheses(p2.as_ref(), 100).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
    }

    #[test]
    fn third_well_is_detected() {
        let p = FnPotential::new("third", 1, vec![-1.0], vec![1.0], |_, _, z| {
            let u = z[0];
            (1.0 - u * u).powi(2) * u * u * (1.0 + u * u)
        })
        .with_growth(2.0);
        let rep = validate_hypotheses(&p, 50).unwrap();
        let h2 = rep.get("H2").unwrap();
        assert!(!h2.passed);
        assert!(h2.worst.as_ref().unwrap().z[0].abs() < 1e-3);
    }

    #[test]
    fn lifted_well_is_detected() {
        let p = FnPotential::new("lifted", 1, vec![-1.0], vec![1.0], |_, _, z| {
            let u = z[0];
            (1.0 - u * u).powi(2) + (1.0 - (u + 1.0).abs().min(1.0))
        });
        let rep = validate_hypotheses(&p, 20).unwrap();
        assert!(!rep.get("H2").unwrap().passed);
    }

    #[test]
    fn spec_parsing() {
        let s: PotentialSpec = "composite{theta1=0.5,theta2=0.5,c1=1,c2=4,c3=9,base=quartic}".parse().unwrap();
        assert_eq!(s, PotentialSpec::reference_composite());
        let u: PotentialSpec = "uniform{base=quartic,scale=2,a=-1:0,b=1:0}".parse().unwrap();
        let p = u.build(1, 1).unwrap();
        assert_eq!(p.dim_m(), 2);
        assert!("composite{theta1=0.5}".parse::<PotentialSpec>().is_err());
        assert!("uniform{scale=1,foo=2}".parse::<PotentialSpec>().is_err());
        let t: PotentialSpec = toml::from_str("kind = \"uniform\"\nscale = 2.0\n").unwrap();
        assert!(matches!(t, PotentialSpec::Uniform { scale, .. } if scale == 2.0));
        assert!(toml::from_str::<PotentialSpec>("kind = \"uniform\"\nscal = 2.0\n").is_err());
    }

    #[test]
    fn ramp_is_inactive_at_snapped_nodes() {
        let p = reference();
        let s = p.with_ramp(1.0 / 64.0);
        for y1 in cell_nodes(p.cell1(), 64) {
            for y2 in cell_nodes(p.cell2(), 64).iter().step_by(7) {
                assert_eq!(p.eval(&y1, y2, &[0.3]), s.eval(&y1, y2, &[0.3]));
            }
        }
    }
}
