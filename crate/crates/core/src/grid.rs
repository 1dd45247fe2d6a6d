//! Cell-centred sample fields on axis-aligned boxes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::numeric::KahanSum;

/// Values of `u: Ω → R^M` at the centres of a regular grid with spacing `h`.
///
/// Samples are stored cell-major in row-major cell order (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    lo: Vec<f64>,
    h: f64,
    dims: Vec<usize>,
    m: usize,
    values: Vec<f64>,
}

/// Cell-index arithmetic shared by fields and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGeometry {
    pub lo: Vec<f64>,
    pub h: f64,
    pub dims: Vec<usize>,
}

impl GridGeometry {
    pub fn new(lo: Vec<f64>, h: f64, dims: Vec<usize>) -> Result<Self> {
        if lo.len() != dims.len() || dims.is_empty() {
            return Err(invalid("grid origin and dims must have the same non-zero length"));
        }
        if !(h > 0.0 && h.is_finite()) || dims.contains(&0) {
            return Err(invalid("grid needs h > 0 and at least one cell per axis"));
        }
        Ok(Self { lo, h, dims })
    }

    /// Grid covering `[lo, hi]` exactly with spacing `h`.
    pub fn covering(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        let dims = lo
            .iter()
            .zip(hi)
            .map(|(l, u)| {
                let q = (u - l) / h;
                let r = q.round();
                if r < 1.0 || (q - r).abs() > 1e-6 * r {
                    Err(Error::Unsnapped { name: "box side", value: u - l, h })
                } else {
                    Ok(r as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(lo.to_vec(), h, dims)
    }

    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n() as i32)
    }

    pub fn measure(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    pub fn hi(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.dims).map(|(l, &d)| l + d as f64 * self.h).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.n();
        let mut s = vec![1; n];
        for d in (0..n.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.dims[d + 1];
        }
        s
    }

    pub fn multi_index(&self, mut i: usize, out: &mut [usize]) {
        for d in (0..self.n()).rev() {
            out[d] = i % self.dims[d];
            i /= self.dims[d];
        }
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    #[inline]
    pub fn center_of(&self, idx: &[usize], out: &mut [f64]) {
        for d in 0..self.n() {
            out[d] = self.lo[d] + (idx[d] as f64 + 0.5) * self.h;
        }
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        let mut idx = vec![0; self.n()];
        self.multi_index(i, &mut idx);
        let mut x = vec![0.0; self.n()];
        self.center_of(&idx, &mut x);
        x
    }
}

impl GridField {
    pub fn new(lo: Vec<f64>, h: f64, dims: Vec<usize>, m: usize, values: Vec<f64>) -> Result<Self> {
        let g = GridGeometry::new(lo, h, dims)?;
        if m == 0 || values.len() != g.len() * m {
            return Err(invalid(format!(
                "expected {} samples of dimension {m}, got {} values",
                g.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i / m));
        }
        Ok(Self { lo: g.lo, h: g.h, dims: g.dims, m, values })
    }

    pub fn constant(geom: &GridGeometry, value: &[f64]) -> Self {
        let values = value.iter().copied().cycle().take(geom.len() * value.len()).collect();
        Self { lo: geom.lo.clone(), h: geom.h, dims: geom.dims.clone(), m: value.len(), values }
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(geom: &GridGeometry, m: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; geom.len() * m];
        let mut idx = vec![0; geom.n()];
        let mut x = vec![0.0; geom.n()];
        for (i, chunk) in values.chunks_exact_mut(m).enumerate() {
            geom.multi_index(i, &mut idx);
            geom.center_of(&idx, &mut x);
            f(&x, chunk);
        }
        Self { lo: geom.lo.clone(), h: geom.h, dims: geom.dims.clone(), m, values }
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry { lo: self.lo.clone(), h: self.h, dims: self.dims.clone() }
    }

    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n() as i32)
    }

    pub fn measure(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    #[inline]
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same grid, new samples.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.lo.clone(), self.h, self.dims.clone(), self.m, values)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i / self.m)),
            None => Ok(()),
        }
    }

    /// Cell-average of the samples.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![KahanSum::new(); self.m];
        for chunk in self.values.chunks_exact(self.m) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                a.add(*v);
            }
        }
        acc.iter().map(|s| s.value() / self.len() as f64).collect()
    }

    pub fn integral(&self) -> Vec<f64> {
        let vol = self.measure();
        self.mean().into_iter().map(|v| v * vol).collect()
    }

    /// `∫ |u - v|` with the Euclidean norm per cell.
    pub fn l1_distance(&self, other: &GridField) -> f64 {
        let s: KahanSum = self
            .values
            .chunks_exact(self.m)
            .zip(other.values.chunks_exact(self.m))
            .map(|(p, q)| crate::numeric::dist(p, q))
            .collect();
        s.value() * self.cell_volume()
    }

    pub fn write_to<W: Write>(&self, w: &mut W, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.m || b.len() != self.m {
            return Err(invalid("well vectors must match the field dimension"));
        }
        w.write_all(MAGIC)?;
        w.write_all(&(self.n() as u32).to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in self.lo.iter().chain([self.h].iter()).chain(a).chain(b) {
            w.write_all(&x.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a field and its recorded wells `(a, b)`.
    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, Vec<f64>, Vec<f64>)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not a grid field file".into()));
        }
        let n = read_u32(r)? as usize;
        let m = read_u32(r)? as usize;
        if n == 0 || n > 8 || m == 0 || m > 64 {
            return Err(Error::Format(format!("implausible header N = {n}, M = {m}")));
        }
        let dims = (0..n).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let lo = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let h = read_f64(r)?;
        let a = (0..m).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let b = (0..m).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(m, |acc: usize, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((Self::new(lo, h, dims, m, values)?, a, b))
    }

    pub fn save(&self, path: impl AsRef<Path>, a: &[f64], b: &[f64]) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, a, b)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<f64>, Vec<f64>)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

const MAGIC: &[u8; 8] = b"GRIDFLD1";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Boolean phase indicator on a grid; `true` marks the phase `A = {u = a}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMask {
    pub geom: GridGeometry,
    pub inside: Vec<bool>,
}

impl PhaseMask {
    pub fn from_fn(geom: &GridGeometry, mut f: impl FnMut(&[f64]) -> bool) -> Self {
        let inside = (0..geom.len()).map(|i| f(&geom.center(i))).collect();
        Self { geom: geom.clone(), inside }
    }

    /// Cells whose projection onto `b - a` lies on the `a` side of the midpoint.
    pub fn threshold(u: &GridField, a: &[f64], b: &[f64]) -> Self {
        let inside = (0..u.len()).map(|i| well_side(u.value(i), a, b) < 0.0).collect();
        Self { geom: u.geometry(), inside }
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&x| x).count()
    }

    /// Volume fraction of the phase.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.inside.len() as f64
    }
}

/// Signed position of `z` along `b - a`, zero at the midpoint, in units of `|b - a|`.
#[inline]
pub fn well_side(z: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nn = 0.0;
    for i in 0..z.len() {
        let d = b[i] - a[i];
        dot += (z[i] - 0.5 * (a[i] + b[i])) * d;
        nn += d * d;
    }
    dot / nn
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = GridGeometry::new(vec![0.0, -1.0, 2.0], 0.5, vec![3, 4, 5]).unwrap();
        let mut idx = vec![0; 3];
        for i in 0..g.len() {
            g.multi_index(i, &mut idx);
            assert_eq!(g.linear(&idx), i);
        }
        assert_eq!(g.strides(), vec![20, 5, 1]);
        assert_eq!(g.center(0), vec![0.25, -0.75, 2.25]);
    }

    #[test]
    fn covering_requires_alignment() {
        assert_eq!(GridGeometry::covering(&[0.0], &[1.0], 0.01).unwrap().dims, vec![100]);
        assert!(GridGeometry::covering(&[0.0], &[1.0], 0.3).is_err());
    }

    #[test]
    fn file_round_trip() {
        let g = GridGeometry::new(vec![0.0, 0.5], 0.25, vec![2, 3]).unwrap();
        let u = GridField::from_fn(&g, 2, |x, out| {
            out[0] = x[0] * 3.0;
            out[1] = -x[1];
        });
        let mut buf = Vec::new();
        u.write_to(&mut buf, &[-1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(&buf[..8], b"GRIDFLD1");
        assert_eq!(buf.len(), 8 + 8 + 16 + 16 + 8 + 32 + 12 * 8);
        let (v, a, b) = GridField::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(u, v);
        assert_eq!((a, b), (vec![-1.0, 0.0], vec![1.0, 0.0]));
        buf[0] = b'X';
        assert!(GridField::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            GridField::new(vec![0.0], 0.5, vec![2], 1, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn threshold_uses_midpoint() {
        let g = GridGeometry::new(vec![0.0], 1.0, vec![3]).unwrap();
        let u = GridField::new(g.lo.clone(), 1.0, vec![3], 1, vec![-0.9, -0.01, 0.2]).unwrap();
        let mask = PhaseMask::threshold(&u, &[-1.0], &[1.0]);
        assert_eq!(mask.inside, vec![true, true, false]);
    }
}
