use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("wells differ between component potentials")]
    WellMismatch,
    #[error("{name} = {value} is not an integer multiple of h = {h}")]
    Unsnapped { name: &'static str, value: f64, h: f64 },
    #[error("{name} = {value} is smaller than the grid spacing {h}")]
    ScaleBelowGrid { name: &'static str, value: f64, h: f64 },
    #[error("grid spacing {h} does not resolve eta = {eta} (need h <= eta/{cells})")]
    UnresolvedScale { h: f64, eta: f64, cells: f64 },
    #[error("grid is not aligned with the lattice origin")]
    MisalignedGrid,
    #[error("lattice basis is not supported here: {0}")]
    UnsupportedLattice(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("field contains a non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("potential is negative ({value}) at a sample")]
    NegativePotential { value: f64 },
    #[error("wells are not zeros of the potential (W(a) = {wa}, W(b) = {wb})")]
    WellsNotZero { wa: f64, wb: f64 },
    #[error("phase mask has an empty phase")]
    EmptyPhase,
    #[error("transition layer of half-width {tau} is not resolved by spacing {h}")]
    LayerUnresolved { tau: f64, h: f64 },
    #[error("repair ball intersects the transition layer or leaves the domain")]
    BallIntersectsLayer,
    #[error("curve endpoint lies outside its well ball")]
    EndpointOutsideBall,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("optimal curve reaches the boundary of the cached box")]
    CacheTooSmall,
    #[error("energy diverged ({energy} > 10 x initial {initial})")]
    Divergence { energy: f64, initial: f64 },
    #[error("scale schedule violates separation: {0}")]
    Regime(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
