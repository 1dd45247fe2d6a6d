//! Benchmark fixtures.

use gammalab::grid::{GridGeometry, PhaseMask};
use gammalab::energy::EnergyProblem;
use gammalab::{GridField, PotentialSpec, SharedPotential};

pub fn composite(n: usize) -> SharedPotential {
    PotentialSpec::reference_composite().build(n, 1).unwrap()
}

/// A tanh interface at `x0 = 1/2` on `cells` cells of `[0, 1]`.
pub fn interface_1d(cells: usize, eps: f64) -> GridField {
    let g = GridGeometry::new(vec![0.0], 1.0 / cells as f64, vec![cells]).unwrap();
    GridField::from_fn(&g, 1, |x, o| o[0] = ((x[0] - 0.5) / eps).tanh())
}

/// A diffuse disk of radius `1/4` in the unit square.
pub fn disk_2d(side: usize, eps: f64) -> GridField {
    let g = GridGeometry::new(vec![0.0, 0.0], 1.0 / side as f64, vec![side, side]).unwrap();
    GridField::from_fn(&g, 1, |x, o| o[0] = (((x[0] - 0.5).hypot(x[1] - 0.5) - 0.25) / eps).tanh())
}

pub fn disk_mask(side: usize) -> PhaseMask {
    let g = GridGeometry::new(vec![0.0, 0.0], 1.0 / side as f64, vec![side, side]).unwrap();
    PhaseMask::from_fn(&g, |x| (x[0] - 0.5).hypot(x[1] - 0.5) < 0.25)
}

/// Dyadic scales, aligned with the fixture grids: `eta` spans at least eight cells of a
/// `2^12` grid in 1D and of a `2^8` grid in 2D.
pub fn problem(n: usize) -> EnergyProblem {
    match n {
        1 => EnergyProblem::new(0.1, 1.0 / 32.0, 1.0 / 512.0, composite(1)),
        _ => EnergyProblem::new(0.25, 1.0 / 8.0, 1.0 / 32.0, composite(n)),
    }
}
