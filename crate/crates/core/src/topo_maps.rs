//! Self-Organizing Maps and Dynamic Self-Organizing Maps.
//!
//! A [`MapGrid`] is a rectangular lattice of neurons. Every neuron holds a
//! prototype vector in the unit hypercube `[0,1]^dim`. The lattice position
//! of neuron `i` is `(i / cols, i % cols)` and lattice distances are
//! Manhattan distances (length of the shortest 4-connected path).
//!
//! Two learning rules share the lattice:
//!
//! - SOM: `W_v += θ(u, v) · α · (x − W_v)`, with `θ` a gaussian over the
//!   lattice distance to the best matching unit `u`.
//! - DSOM: `W_i += α · ‖x − W_i‖ · h_η(i, u, x) · (x − W_i)`, where
//!   `h_η(i, u, x) = exp(−d(i,u)² / (η² · ‖x − W_u‖²))`.
//!
//! Both parameters sets are constant; there is no annealing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this input-to-BMU distance the DSOM neighborhood collapses onto the BMU.
pub const DSOM_SINGULAR_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomParams {
    learning_rate: f64,
    neighborhood_width: f64,
}

impl SomParams {
    pub fn new(learning_rate: f64, neighborhood_width: f64) -> Result<Self> {
        check_learning_rate(learning_rate)?;
        if !(neighborhood_width > 0.0 && neighborhood_width.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "neighborhood width must be > 0, got {neighborhood_width}"
            )));
        }
        Ok(Self {
            learning_rate,
            neighborhood_width,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn neighborhood_width(&self) -> f64 {
        self.neighborhood_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsomParams {
    learning_rate: f64,
    elasticity: f64,
}

impl DsomParams {
    pub fn new(learning_rate: f64, elasticity: f64) -> Result<Self> {
        check_learning_rate(learning_rate)?;
        if !(elasticity > 0.0 && elasticity.is_finite()) {
            return Err(Error::InvalidInput(format!("elasticity must be > 0, got {elasticity}")));
        }
        Ok(Self {
            learning_rate,
            elasticity,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn elasticity(&self) -> f64 {
        self.elasticity
    }
}

fn check_learning_rate(lr: f64) -> Result<()> {
    // zero freezes the map
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::InvalidInput(format!(
            "learning rate must lie in [0, 1], got {lr}"
        )));
    }
    Ok(())
}

/// Learning rule attached to a map: which neighborhood and which update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MapRule {
    Som(SomParams),
    Dsom(DsomParams),
}

impl MapRule {
    pub fn learning_rate(&self) -> f64 {
        match self {
            MapRule::Som(p) => p.learning_rate,
            MapRule::Dsom(p) => p.learning_rate,
        }
    }

    /// Neighborhood weights centered on `center` for the data point `x`.
    ///
    /// The SOM gaussian ignores `x`.
    pub fn neighborhood(&self, grid: &MapGrid, center: usize, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            MapRule::Som(p) => grid.gaussian_neighborhood(center, p.neighborhood_width),
            MapRule::Dsom(p) => grid.dsom_neighborhood(center, x, p.elasticity),
        }
    }

    /// Moves every prototype toward `x` using precomputed neighborhood weights.
    pub fn apply(&self, grid: &mut MapGrid, x: &[f64], weights: &[f64]) -> Result<()> {
        match self {
            MapRule::Som(p) => grid.som_update(x, weights, p.learning_rate),
            MapRule::Dsom(p) => grid.dsom_update(x, weights, p.learning_rate),
        }
    }

    /// One training step with the BMU chosen by the data point itself.
    pub fn train_step(&self, grid: &mut MapGrid, x: &[f64]) -> Result<usize> {
        match self {
            MapRule::Som(p) => grid.som_train_step(x, p),
            MapRule::Dsom(p) => grid.dsom_train_step(x, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    /// Row-major `rows * cols` prototypes of `dim` coordinates each.
    prototypes: Vec<f64>,
}

impl MapGrid {
    /// Builds a grid from explicit prototypes, listed in neuron-index order.
    pub fn new(rows: usize, cols: usize, dim: usize, prototypes: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(rows, cols, dim)?;
        if prototypes.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} prototypes for a {rows}x{cols} grid, got {}",
                rows * cols,
                prototypes.len()
            )));
        }
        let mut flat = Vec::with_capacity(rows * cols * dim);
        for (i, p) in prototypes.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "prototype {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if let Some(c) = p.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::InvalidInput(format!(
                    "prototype {i} has coordinate {c} outside [0, 1]"
                )));
            }
            flat.extend_from_slice(p);
        }
        Ok(Self {
            rows,
            cols,
            dim,
            prototypes: flat,
        })
    }

    /// Prototypes drawn i.i.d. uniformly on `[0,1]^dim`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, dim: usize, rng: &mut R) -> Result<Self> {
        check_shape(rows, cols, dim)?;
        let prototypes = (0..rows * cols * dim).map(|_| rng.random::<f64>()).collect();
        Ok(Self {
            rows,
            cols,
            dim,
            prototypes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of neurons.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn prototype(&self, i: usize) -> &[f64] {
        &self.prototypes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn prototypes(&self) -> impl Iterator<Item = &[f64]> {
        self.prototypes.chunks_exact(self.dim)
    }

    pub fn position(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::InvalidInput(format!(
                "neuron index {i} out of range for {} neurons",
                self.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "input has {} coordinates, map dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("input has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Index of the neuron nearest to `x` (Euclidean); lowest index on ties.
    pub fn bmu(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(self.bmu_unchecked(x))
    }

    fn bmu_unchecked(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, p) in self.prototypes().enumerate() {
            let d = squared_distance(p, x);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    /// Manhattan distance between two neurons on the lattice.
    pub fn grid_distance(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(self.lattice_distance(i, j))
    }

    fn lattice_distance(&self, i: usize, j: usize) -> f64 {
        let (ri, ci) = self.position(i);
        let (rj, cj) = self.position(j);
        (ri.abs_diff(rj) + ci.abs_diff(cj)) as f64
    }

    /// `exp(−d(i, center)² / (2·width²))` for every neuron `i`.
    pub fn gaussian_neighborhood(&self, center: usize, width: f64) -> Result<Vec<f64>> {
        self.check_index(center)?;
        if !(width > 0.0) {
            return Err(Error::InvalidInput(format!(
                "neighborhood width must be > 0, got {width}"
            )));
        }
        let denom = 2.0 * width * width;
        Ok((0..self.len())
            .map(|i| {
                let d = self.lattice_distance(i, center);
                (-(d * d) / denom).exp()
            })
            .collect())
    }

    /// DSOM elastic neighborhood centered on `center` for the data point `x`.
    ///
    /// When `x` sits on the center prototype the weights degenerate to an
    /// indicator of the center.
    pub fn dsom_neighborhood(&self, center: usize, x: &[f64], elasticity: f64) -> Result<Vec<f64>> {
        self.check_index(center)?;
        self.check_input(x)?;
        if !(elasticity > 0.0) {
            return Err(Error::InvalidInput(format!("elasticity must be > 0, got {elasticity}")));
        }
        let gap = squared_distance(x, self.prototype(center));
        if gap.sqrt() < DSOM_SINGULAR_DISTANCE {
            return Ok((0..self.len()).map(|i| if i == center { 1.0 } else { 0.0 }).collect());
        }
        let scale = elasticity * elasticity * gap;
        Ok((0..self.len())
            .map(|i| {
                let d = self.lattice_distance(i, center);
                (-(d * d) / scale).exp()
            })
            .collect())
    }

    /// Applies `W_v += weights_v · lr · (x − W_v)` to every neuron.
    pub fn som_update(&mut self, x: &[f64], weights: &[f64], lr: f64) -> Result<()> {
        self.check_input(x)?;
        self.check_weights(weights)?;
        let dim = self.dim;
        for (w, &theta) in self.prototypes.chunks_exact_mut(dim).zip(weights) {
            move_toward(w, x, theta * lr);
        }
        Ok(())
    }

    /// Applies `W_i += lr · ‖x − W_i‖ · weights_i · (x − W_i)` to every neuron.
    ///
    /// The step factor is capped at 1 so a prototype never jumps past `x`.
    pub fn dsom_update(&mut self, x: &[f64], weights: &[f64], lr: f64) -> Result<()> {
        self.check_input(x)?;
        self.check_weights(weights)?;
        let dim = self.dim;
        for (w, &h) in self.prototypes.chunks_exact_mut(dim).zip(weights) {
            let dist = squared_distance(w, x).sqrt();
            move_toward(w, x, (lr * dist * h).min(1.0));
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} neighborhood weights for {} neurons",
                weights.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn som_train_step(&mut self, x: &[f64], params: &SomParams) -> Result<usize> {
        let u = self.bmu(x)?;
        let weights = self.gaussian_neighborhood(u, params.neighborhood_width)?;
        self.som_update(x, &weights, params.learning_rate)?;
        Ok(u)
    }

    pub fn dsom_train_step(&mut self, x: &[f64], params: &DsomParams) -> Result<usize> {
        let u = self.bmu(x)?;
        let weights = self.dsom_neighborhood(u, x, params.elasticity)?;
        self.dsom_update(x, &weights, params.learning_rate)?;
        Ok(u)
    }

    /// Mean squared Euclidean distance from each data point to its BMU prototype.
    pub fn distortion(&self, dataset: &[Vec<f64>]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::InvalidInput("distortion of an empty dataset".into()));
        }
        let mut total = 0.0;
        for x in dataset {
            self.check_input(x)?;
            let u = self.bmu_unchecked(x);
            total += squared_distance(x, self.prototype(u));
        }
        Ok(total / dataset.len() as f64)
    }
}

fn check_shape(rows: usize, cols: usize, dim: usize) -> Result<()> {
    if rows == 0 || cols == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "map shape must be positive, got {rows}x{cols} with dim {dim}"
        )));
    }
    Ok(())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Convex move `w += factor · (x − w)` with `factor ∈ [0, 1]`.
fn move_toward(w: &mut [f64], x: &[f64], factor: f64) {
    debug_assert!((0.0..=1.0).contains(&factor), "step factor {factor}");
    if factor == 0.0 {
        return;
    }
    for (wk, &xk) in w.iter_mut().zip(x) {
        let moved = *wk + factor * (xk - *wk);
        debug_assert!(
            (-1e-12..=1.0 + 1e-12).contains(&moved),
            "prototype left the unit box: {moved}"
        );
        // rounding can land one ulp outside the box
        *wk = moved.clamp(0.0, 1.0);
    }
}
