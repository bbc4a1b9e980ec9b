//! Vertex-centered grid on `[0,L]×[0,1]²` and the fields living on it.
//!
//! Nodes are stored with x3 fastest: `index = (i·N2 + j)·N3 + k`.
//!
//! Every scalar field carries a [`Symmetry`] telling how it continues
//! across the walls `x2 ∈ {0,1}` and `x3 ∈ {0,1}`. Even and odd fields are
//! reflected (period 2); free fields are not extended and get one-sided
//! stencils instead. Walls are therefore never special-cased by the
//! operators: a wall node simply sees its mirror image as ghost value.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("point {point:?} is outside the domain along axis {axis}")]
    OutOfDomain { point: [f64; 3], axis: usize },
    #[error("field has {got} values, grid has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub length: f64,
    pub n: [usize; 3],
    pub h: [f64; 3],
}

impl Grid {
    pub fn new(length: f64, n1: usize, n2: usize, n3: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(GridError::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if n1 < 3 || n2 < 3 || n3 < 3 {
            return Err(GridError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {n1}x{n2}x{n3}"
            )));
        }
        Ok(Self {
            length,
            n: [n1, n2, n3],
            h: [
                length / (n1 - 1) as f64,
                1.0 / (n2 - 1) as f64,
                1.0 / (n3 - 1) as f64,
            ],
        })
    }

    /// Cube grid with `n` nodes per axis.
    pub fn cube(length: f64, n: usize) -> Result<Self> {
        Self::new(length, n, n, n)
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.n[1] * self.n[2]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.length
        } else {
            1.0
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], k]
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.n[1] * self.n[2],
            1 => self.n[2],
            _ => 1,
        }
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.extent(axis)
        } else {
            i as f64 * self.h[axis]
        }
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    /// Coordinates `(x2, x3)` of plane node `j·N3 + k`.
    pub fn plane_point(&self, p: usize) -> [f64; 2] {
        [self.coord(1, p / self.n[2]), self.coord(2, p % self.n[2])]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let ijk = self.ijk(idx);
        (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 == self.n[a])
    }

    /// One-dimensional quadrature weights along `axis`.
    ///
    /// Along x1 these are summation-by-parts weights matched to the
    /// one-sided derivative closure, so that `Σ w_i (Df)_i = f_N − f_0`
    /// holds exactly (requires `N1 ≥ 8`, trapezoid otherwise). Along x2 and
    /// x3 they are trapezoid weights, which satisfy the same identity for
    /// reflected fields.
    pub fn weights(&self, axis: usize) -> Vec<f64> {
        let n = self.n[axis];
        let h = self.h[axis];
        let mut w = vec![h; n];
        if axis == 0 && n >= 8 {
            let ends = [0.125, 1.5, 0.875];
            for (e, c) in ends.iter().enumerate() {
                w[e] = c * h;
                w[n - 1 - e] = c * h;
            }
        } else {
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
        }
        w
    }

    /// Trapezoid weights of the (x2,x3) plane, indexed like plane nodes.
    pub fn plane_weights(&self) -> Vec<f64> {
        let w2 = self.weights(1);
        let w3 = self.weights(2);
        let mut w = Vec::with_capacity(self.plane_len());
        for a in &w2 {
            for b in &w3 {
                w.push(a * b);
            }
        }
        w
    }

    /// Tensor-product volume weights.
    pub fn volume_weights(&self) -> Vec<f64> {
        let w1 = self.weights(0);
        let pw = self.plane_weights();
        let mut w = Vec::with_capacity(self.len());
        for a in &w1 {
            for b in &pw {
                w.push(a * b);
            }
        }
        w
    }

    /// Same grid with every spacing halved.
    pub fn refined(&self) -> Self {
        Self::new(
            self.length,
            2 * self.n[0] - 1,
            2 * self.n[1] - 1,
            2 * self.n[2] - 1,
        )
        .expect("refining a valid grid")
    }
}

/// Continuation of a field across a pair of walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    /// No reflection; one-sided stencils at the walls.
    Free,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::Free => Parity::Free,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Parity::Odd => -1.0,
            _ => 1.0,
        }
    }

    fn meet(self, other: Self) -> Self {
        if self == other {
            self
        } else {
            Parity::Free
        }
    }
}

/// Parities across the x2 walls and the x3 walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symmetry {
    pub x2: Parity,
    pub x3: Parity,
}

impl Symmetry {
    pub const EVEN: Self = Self {
        x2: Parity::Even,
        x3: Parity::Even,
    };
    pub const FREE: Self = Self {
        x2: Parity::Free,
        x3: Parity::Free,
    };

    pub const fn new(x2: Parity, x3: Parity) -> Self {
        Self { x2, x3 }
    }

    pub fn axis(&self, axis: usize) -> Option<Parity> {
        match axis {
            1 => Some(self.x2),
            2 => Some(self.x3),
            _ => None,
        }
    }

    /// Symmetry of `∂_axis` of a field with this symmetry.
    pub fn differentiated(self, axis: usize) -> Self {
        match axis {
            1 => Self::new(self.x2.flip(), self.x3),
            2 => Self::new(self.x2, self.x3.flip()),
            _ => self,
        }
    }

    pub fn product(self, other: Self) -> Self {
        let mul = |a: Parity, b: Parity| match (a, b) {
            (Parity::Free, _) | (_, Parity::Free) => Parity::Free,
            (x, y) if x == y => Parity::Even,
            _ => Parity::Odd,
        };
        Self::new(mul(self.x2, other.x2), mul(self.x3, other.x3))
    }

    fn meet(self, other: Self) -> Self {
        Self::new(self.x2.meet(other.x2), self.x3.meet(other.x3))
    }

    /// Parities of the components of a polar vector (velocity, gradient).
    pub fn polar() -> [Self; 3] {
        use Parity::*;
        [Self::new(Even, Even), Self::new(Odd, Even), Self::new(Even, Odd)]
    }

    /// Parities of the components of an axial vector (vorticity, vector
    /// potential).
    pub fn axial() -> [Self; 3] {
        use Parity::*;
        [Self::new(Odd, Odd), Self::new(Even, Odd), Self::new(Odd, Even)]
    }
}

/// Map an extended index `j` (any integer) back to `[0, n)` through the
/// even reflection about both walls. Returns the index and the sign picked
/// up under odd parity.
#[inline]
pub fn reflect_index(j: i64, n: usize, parity: Parity) -> (usize, f64) {
    let period = 2 * (n as i64 - 1);
    let t = j.rem_euclid(period);
    if t < n as i64 {
        (t as usize, 1.0)
    } else {
        ((period - t) as usize, parity.sign())
    }
}

/// Fold a coordinate into `[0,1]`, returning the folded value and whether
/// an odd number of reflections was used.
#[inline]
pub fn fold_unit(y: f64) -> (f64, bool) {
    let t = y.rem_euclid(2.0);
    if t <= 1.0 {
        (t, false)
    } else {
        (2.0 - t, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub symmetry: Symmetry,
}

impl ScalarField {
    pub fn zeros(grid: Grid, symmetry: Symmetry) -> Self {
        Self::constant(grid, 0.0, symmetry)
    }

    pub fn constant(grid: Grid, c: f64, symmetry: Symmetry) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            symmetry,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>, symmetry: Symmetry) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GridError::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(p));
        }
        Ok(Self {
            grid,
            values,
            symmetry,
        })
    }

    /// Sample `f(x)` at every node.
    pub fn from_fn<F>(grid: Grid, symmetry: Symmetry, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let values = (0..grid.len()).into_par_iter().map(|p| f(grid.point(p))).collect();
        Self {
            grid,
            values,
            symmetry,
        }
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        Self {
            grid: self.grid,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
            symmetry: self.symmetry,
        }
    }

    pub fn with_symmetry(mut self, symmetry: Symmetry) -> Self {
        self.symmetry = symmetry;
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Value at an extended node index; `j`, `k` may lie outside the grid
    /// and are mapped back through the reflection. Free axes are clamped.
    pub fn at_extended(&self, i: usize, j: i64, k: i64) -> f64 {
        let (jj, sj) = self.reflect(1, j);
        let (kk, sk) = self.reflect(2, k);
        sj * sk * self.at(i, jj, kk)
    }

    fn reflect(&self, axis: usize, j: i64) -> (usize, f64) {
        let n = self.grid.n[axis];
        match self.symmetry.axis(axis).unwrap() {
            Parity::Free => (j.clamp(0, n as i64 - 1) as usize, 1.0),
            p => reflect_index(j, n, p),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Location and value of the smallest entry.
    pub fn argmin(&self) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (p, &v) in self.values.iter().enumerate() {
            if v < best.1 {
                best = (p, v);
            }
        }
        best
    }

    pub fn integral(&self) -> f64 {
        self.grid
            .volume_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.grid.length
    }

    /// Subtract the volume-weighted mean, placing the field in the
    /// zero-mean class.
    pub fn remove_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    pub fn is_mean_free(&self) -> bool {
        self.mean().abs() <= 1e-12 * self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn zip<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &Self, f: F) -> Self {
        assert_eq!(self.grid, other.grid, "fields on different grids");
        Self {
            grid: self.grid,
            values: self
                .values
                .par_iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            symmetry: self.symmetry.meet(other.symmetry),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Second-order derivative along `axis`.
    ///
    /// Interior nodes use central differences. At reflected walls the ghost
    /// value is the mirror image. At the x1 faces (and at free walls) the
    /// closure `(−4f₀ + 7f₁ − 4f₂ + f₃)/(2h)` is used; its leading error
    /// `h²f‴/6` equals that of the central stencil, which keeps nested
    /// derivatives second order up to the boundary.
    pub fn derivative(&self, axis: usize) -> Self {
        let g = self.grid;
        let n = g.n[axis];
        let h = g.h[axis];
        let stride = g.stride(axis);
        let parity = self.symmetry.axis(axis).unwrap_or(Parity::Free);
        let v = &self.values;
        let plane = g.plane_len();
        let mut out = vec![0.0; g.len()];
        out.par_chunks_mut(plane).enumerate().for_each(|(i, chunk)| {
            for (local, o) in chunk.iter_mut().enumerate() {
                let p = i * plane + local;
                let pos = match axis {
                    0 => i,
                    1 => local / g.n[2],
                    _ => local % g.n[2],
                };
                *o = diff_at(|q: isize| v[(p as isize + q * stride as isize) as usize], pos, n, h, parity);
            }
        });
        Self {
            grid: g,
            values: out,
            symmetry: self.symmetry.differentiated(axis),
        }
    }

    pub fn gradient(&self) -> VectorField {
        VectorField::new([self.derivative(0), self.derivative(1), self.derivative(2)])
    }

    /// Trilinear interpolation of the reflected field.
    ///
    /// x1 must lie in `[0, L]`. Along a reflected axis any coordinate is
    /// accepted; along a free axis the coordinate must lie in `[0, 1]`.
    pub fn sample(&self, x: [f64; 3]) -> Result<f64> {
        let g = &self.grid;
        let tol = 1e-12;
        if !(x[0] >= -tol * g.length && x[0] <= g.length * (1.0 + tol)) {
            return Err(GridError::OutOfDomain { point: x, axis: 0 });
        }
        let mut sign = 1.0;
        let mut y = [x[0].clamp(0.0, g.length), 0.0, 0.0];
        for a in 1..3 {
            match self.symmetry.axis(a).unwrap() {
                Parity::Free => {
                    if !(x[a] >= -tol && x[a] <= 1.0 + tol) {
                        return Err(GridError::OutOfDomain { point: x, axis: a });
                    }
                    y[a] = x[a].clamp(0.0, 1.0);
                }
                p => {
                    let (t, flipped) = fold_unit(x[a]);
                    if flipped {
                        sign *= p.sign();
                    }
                    y[a] = t;
                }
            }
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if y[a] >= g.extent(a) {
                base[a] = g.n[a] - 2;
                frac[a] = 1.0;
                continue;
            }
            let s = y[a] / g.h[a];
            let c = (s.floor() as usize).min(g.n[a] - 2);
            base[a] = c;
            frac[a] = s - c as f64;
        }
        let mut acc = 0.0;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                    acc += wi * wj * wk * self.at(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
        Ok(sign * acc)
    }

    /// Tensor-product cubic Lagrange interpolation. Axes with a parity use
    /// reflected ghost nodes; `x1` and free axes shift the four-point
    /// stencil inward at the ends. Falls back to [`Self::sample`] on grids
    /// with fewer than four nodes along some axis.
    pub fn sample_cubic(&self, x: [f64; 3]) -> Result<f64> {
        let g = &self.grid;
        if g.n.iter().any(|&n| n < 4) {
            return self.sample(x);
        }
        let tol = 1e-12;
        if !(x[0] >= -tol * g.length && x[0] <= g.length * (1.0 + tol)) {
            return Err(GridError::OutOfDomain { point: x, axis: 0 });
        }
        let mut sign = 1.0;
        let mut y = [x[0].clamp(0.0, g.length), 0.0, 0.0];
        let mut free = [true, false, false];
        for a in 1..3 {
            match self.symmetry.axis(a).unwrap() {
                Parity::Free => {
                    if !(x[a] >= -tol && x[a] <= 1.0 + tol) {
                        return Err(GridError::OutOfDomain { point: x, axis: a });
                    }
                    y[a] = x[a].clamp(0.0, 1.0);
                    free[a] = true;
                }
                p => {
                    let (t, flipped) = fold_unit(x[a]);
                    if flipped {
                        sign *= p.sign();
                    }
                    y[a] = t;
                }
            }
        }
        let mut start = [0i64; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let s = y[a] / g.h[a];
            let c = (s.floor() as i64).min(g.n[a] as i64 - 2);
            let mut s0 = c - 1;
            if free[a] {
                s0 = s0.clamp(0, g.n[a] as i64 - 4);
            }
            start[a] = s0;
            let t = s - s0 as f64;
            w[a] = [
                -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
                t * (t - 2.0) * (t - 3.0) / 2.0,
                -t * (t - 1.0) * (t - 3.0) / 2.0,
                t * (t - 1.0) * (t - 2.0) / 6.0,
            ];
        }
        let mut acc = 0.0;
        for (di, wi) in w[0].iter().enumerate() {
            let i = (start[0] + di as i64) as usize;
            for (dj, wj) in w[1].iter().enumerate() {
                for (dk, wk) in w[2].iter().enumerate() {
                    acc += wi * wj * wk * self.at_extended(i, start[1] + dj as i64, start[2] + dk as i64);
                }
            }
        }
        Ok(sign * acc)
    }

    /// Image of the field under `x2 ↦ 1 − x2`, multiplied by `sign`.
    pub fn mirror_x2(&self, sign: f64) -> Self {
        let g = self.grid;
        let values = (0..g.len())
            .map(|p| {
                let [i, j, k] = g.ijk(p);
                sign * self.at(i, g.n[1] - 1 - j, k)
            })
            .collect();
        Self {
            grid: g,
            values,
            symmetry: self.symmetry,
        }
    }

    /// Values on the x1 = const plane with index `i`.
    pub fn plane(&self, i: usize) -> Vec<f64> {
        let n = self.grid.plane_len();
        self.values[i * n..(i + 1) * n].to_vec()
    }

    /// Restriction to the nodes of a grid twice as coarse.
    pub fn restrict_to(&self, coarse: &Grid) -> Self {
        let g = self.grid;
        assert!(
            (0..3).all(|a| g.n[a] == 2 * coarse.n[a] - 1),
            "grid is not a refinement of the target"
        );
        let values = (0..coarse.len())
            .map(|p| {
                let [i, j, k] = coarse.ijk(p);
                self.at(2 * i, 2 * j, 2 * k)
            })
            .collect();
        Self {
            grid: *coarse,
            values,
            symmetry: self.symmetry,
        }
    }
}

#[inline]
fn closure(f: impl Fn(isize) -> f64, dir: isize, h: f64, n: usize) -> f64 {
    if n >= 5 {
        dir as f64 * (-4.0 * f(0) + 7.0 * f(dir) - 4.0 * f(2 * dir) + f(3 * dir)) / (2.0 * h)
    } else {
        dir as f64 * (-3.0 * f(0) + 4.0 * f(dir) - f(2 * dir)) / (2.0 * h)
    }
}

/// Derivative at position `pos` of a line with `n` samples; `f(q)` returns
/// the sample `q` steps away from `pos`.
#[inline]
fn diff_at(f: impl Fn(isize) -> f64, pos: usize, n: usize, h: f64, parity: Parity) -> f64 {
    if pos > 0 && pos + 1 < n {
        return (f(1) - f(-1)) / (2.0 * h);
    }
    let dir: isize = if pos == 0 { 1 } else { -1 };
    match parity {
        Parity::Even => 0.0,
        // the ghost behind the wall is −f(dir)
        Parity::Odd => dir as f64 * f(dir) / h,
        Parity::Free => closure(f, dir, h, n),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub c: [ScalarField; 3],
}

impl VectorField {
    pub fn new(c: [ScalarField; 3]) -> Self {
        assert!(c[0].grid == c[1].grid && c[1].grid == c[2].grid);
        Self { c }
    }

    pub fn zeros(grid: Grid, symmetry: [Symmetry; 3]) -> Self {
        Self::new(symmetry.map(|s| ScalarField::zeros(grid, s)))
    }

    pub fn zeros_polar(grid: Grid) -> Self {
        Self::zeros(grid, Symmetry::polar())
    }

    pub fn zeros_axial(grid: Grid) -> Self {
        Self::zeros(grid, Symmetry::axial())
    }

    pub fn from_fn<F>(grid: Grid, symmetry: [Symmetry; 3], f: F) -> Self
    where
        F: Fn([f64; 3]) -> [f64; 3] + Sync,
    {
        let vals: Vec<[f64; 3]> = (0..grid.len()).into_par_iter().map(|p| f(grid.point(p))).collect();
        let comp = |a: usize, s: Symmetry| ScalarField {
            grid,
            values: vals.iter().map(|v| v[a]).collect(),
            symmetry: s,
        };
        Self::new([comp(0, symmetry[0]), comp(1, symmetry[1]), comp(2, symmetry[2])])
    }

    pub fn grid(&self) -> Grid {
        self.c[0].grid
    }

    pub fn at(&self, p: usize) -> [f64; 3] {
        [self.c[0].values[p], self.c[1].values[p], self.c[2].values[p]]
    }

    pub fn symmetry(&self) -> [Symmetry; 3] {
        [self.c[0].symmetry, self.c[1].symmetry, self.c[2].symmetry]
    }

    pub fn divergence(&self) -> ScalarField {
        let d0 = self.c[0].derivative(0);
        let d1 = self.c[1].derivative(1);
        let d2 = self.c[2].derivative(2);
        d0.add(&d1).add(&d2)
    }

    /// `(∂₂u₃ − ∂₃u₂, ∂₃u₁ − ∂₁u₃, ∂₁u₂ − ∂₂u₁)`.
    pub fn curl(&self) -> VectorField {
        let [u1, u2, u3] = &self.c;
        VectorField::new([
            u3.derivative(1).sub(&u2.derivative(2)),
            u1.derivative(2).sub(&u3.derivative(0)),
            u2.derivative(0).sub(&u1.derivative(1)),
        ])
    }

    /// Nodewise `|v|²`.
    pub fn norm_sq(&self) -> ScalarField {
        let g = self.grid();
        let values = (0..g.len())
            .into_par_iter()
            .map(|p| {
                let v = self.at(p);
                v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
            })
            .collect();
        ScalarField {
            grid: g,
            values,
            symmetry: Symmetry::EVEN,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (0..3).fold(0.0, |m, a| m.max(self.c[a].max_abs_diff(&other.c[a])))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new([0, 1, 2].map(|a| self.c[a].add(&other.c[a])))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new([0, 1, 2].map(|a| self.c[a].sub(&other.c[a])))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new([0, 1, 2].map(|a| self.c[a].scale(s)))
    }

    /// Multiply every component by a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        Self::new([0, 1, 2].map(|a| {
            let mut c = self.c[a].zip(s, |x, y| x * y);
            c.symmetry = self.c[a].symmetry.product(s.symmetry);
            c
        }))
    }

    /// `(1 − α)·self + α·other`.
    pub fn blend(&self, other: &Self, alpha: f64) -> Self {
        Self::new([0, 1, 2].map(|a| self.c[a].zip(&other.c[a], |x, y| (1.0 - alpha) * x + alpha * y)))
    }

    pub fn sample(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        Ok([self.c[0].sample(x)?, self.c[1].sample(x)?, self.c[2].sample(x)?])
    }

    pub fn sample_cubic(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        Ok([
            self.c[0].sample_cubic(x)?,
            self.c[1].sample_cubic(x)?,
            self.c[2].sample_cubic(x)?,
        ])
    }

    /// Image of a polar vector field under `x2 ↦ 1 − x2`.
    pub fn mirror_x2_polar(&self) -> Self {
        Self::new([
            self.c[0].mirror_x2(1.0),
            self.c[1].mirror_x2(-1.0),
            self.c[2].mirror_x2(1.0),
        ])
    }

    /// Image of an axial vector field under `x2 ↦ 1 − x2`.
    pub fn mirror_x2_axial(&self) -> Self {
        Self::new([
            self.c[0].mirror_x2(-1.0),
            self.c[1].mirror_x2(1.0),
            self.c[2].mirror_x2(-1.0),
        ])
    }

    pub fn restrict_to(&self, coarse: &Grid) -> Self {
        Self::new([0, 1, 2].map(|a| self.c[a].restrict_to(coarse)))
    }
}

/// Write fields as CSV with header `x1,x2,x3,<names>`, x3 fastest,
/// 17 significant digits.
pub fn write_csv<W: Write>(out: &mut W, names: &[&str], fields: &[&ScalarField]) -> std::io::Result<()> {
    assert_eq!(names.len(), fields.len());
    let mut header = String::from("x1,x2,x3");
    for n in names {
        header.push(',');
        header.push_str(n);
    }
    writeln!(out, "{header}")?;
    let Some(first) = fields.first() else {
        return Ok(());
    };
    let g = first.grid;
    let mut line = String::new();
    for p in 0..g.len() {
        line.clear();
        let x = g.point(p);
        for (n, v) in x.iter().chain(fields.iter().map(|f| &f.values[p])).enumerate() {
            if n > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
