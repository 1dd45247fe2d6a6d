//! Periodicity lattices `G = B Z^N` and the floor/fraction decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::snapped_floor;

/// A rank-`N` lattice generated by the columns of `basis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    n: usize,
    /// Row-major `n x n`; column `j` is the `j`-th generator.
    basis: Vec<f64>,
    inverse: Vec<f64>,
    volume: f64,
    diagonal: bool,
}

impl Lattice {
    pub fn unit(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n]).expect("unit lattice")
    }

    pub fn diagonal(sides: &[f64]) -> Result<Self> {
        let n = sides.len();
        let mut basis = vec![0.0; n * n];
        for (i, &s) in sides.iter().enumerate() {
            basis[i * n + i] = s;
        }
        Self::from_basis(n, basis)
    }

    /// `basis` is row-major with generators as columns.
    pub fn from_basis(n: usize, basis: Vec<f64>) -> Result<Self> {
        if n == 0 || basis.len() != n * n {
            return Err(invalid("lattice basis must be a non-empty square matrix"));
        }
        let inverse = invert(n, &basis).ok_or_else(|| invalid("lattice basis is singular"))?;
        let volume = determinant(n, &basis).abs();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || basis[i * n + j] == 0.0));
        Ok(Self { n, basis, inverse, volume, diagonal })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// Side lengths of a diagonal lattice.
    pub fn sides(&self) -> Option<Vec<f64>> {
        self.diagonal.then(|| (0..self.n).map(|i| self.basis[i * self.n + i]).collect())
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// Coordinates of `z` with respect to the generators.
    pub fn coords(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        if self.diagonal {
            for i in 0..n {
                out[i] = z[i] * self.inverse[i * n + i];
            }
            return;
        }
        for i in 0..n {
            out[i] = (0..n).map(|j| self.inverse[i * n + j] * z[j]).sum();
        }
    }

    pub fn apply(&self, c: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = (0..n).map(|j| self.basis[i * n + j] * c[j]).sum();
        }
    }

    /// Fractional coordinates of `z` in `[0, 1)^N`; this is `{z}` expressed in the generator frame.
    #[inline]
    pub fn frac_coords(&self, z: &[f64], out: &mut [f64]) {
        self.coords(z, out);
        for c in out.iter_mut() {
            *c -= c.floor();
        }
    }

    /// Splits `z = floor + frac` with `floor` in the lattice and `frac` in the fundamental cell.
    /// Coordinates within `1e-9` of an integer are snapped before flooring.
    pub fn floor_frac(&self, z: &[f64], floor: &mut [f64], frac: &mut [f64]) {
        let n = self.n;
        let mut c = vec![0.0; n];
        self.coords(z, &mut c);
        let k: Vec<f64> = c.iter().map(|&x| snapped_floor(x)).collect();
        self.apply(&k, floor);
        for i in 0..n {
            frac[i] = z[i] - floor[i];
        }
    }
}

fn determinant(n: usize, a: &[f64]) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for i in col + 1..n {
            let f = m[i * n + col] / p;
            for k in col..n {
                m[i * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

fn invert(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        let p = m[piv * n + col];
        if p.abs() < 1e-300 || !p.is_finite() {
            return None;
        }
        for k in 0..n {
            m.swap(piv * n + k, col * n + k);
            inv.swap(piv * n + k, col * n + k);
        }
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[i * n + k] -= f * m[col * n + k];
                        inv[i * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_floor_frac() {
        let l = Lattice::unit(2);
        let (mut f, mut r) = ([0.0; 2], [0.0; 2]);
        l.floor_frac(&[1.25, -0.5], &mut f, &mut r);
        assert_eq!(f, [1.0, -1.0]);
        assert_eq!(r, [0.25, 0.5]);
    }

    #[test]
    fn skew_lattice_decomposition() {
        let l = Lattice::from_basis(2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!((l.volume() - 1.0).abs() < 1e-15);
        let z = [2.3, 1.7];
        let (mut f, mut r) = ([0.0; 2], [0.0; 2]);
        l.floor_frac(&z, &mut f, &mut r);
        let mut c = [0.0; 2];
        l.coords(&f, &mut c);
        assert!(c.iter().all(|x| (x - x.round()).abs() < 1e-12));
        l.coords(&r, &mut c);
        assert!(c.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!((f[0] + r[0] - z[0]).abs() < 1e-15 && (f[1] + r[1] - z[1]).abs() < 1e-15);
    }

    #[test]
    fn singular_basis_rejected() {
        assert!(Lattice::from_basis(2, vec![1.0, 2.0, 2.0, 4.0]).is_err());
    }
}
