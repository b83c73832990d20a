//! Node-registered tensor grid on I×J, scalar fields, trapezoidal quadrature
//! and marginals.
//!
//! Storage is row-major with the x index as the row: `values[i * ny + j]` is
//! the value at `(x_i, y_j)`.
//!
//! Reductions run sequentially in increasing index order, so results are
//! bitwise reproducible. Row sums (ρ^Y) and column sums (ρ^X) accumulate in the
//! same index order, which makes the marginals of a symmetric field on a square
//! grid bitwise equal.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("field has {got} values, grid needs {expected}")]
    Shape { expected: usize, got: usize },
    #[error("field contains a non-finite value at node ({i}, {j})")]
    NonFinite { i: usize, j: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(GridError::Invalid("bounds must be finite".into()));
        }
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(GridError::Invalid(format!(
                "need x_min < x_max and y_min < y_max, got [{x_min}, {x_max}]×[{y_min}, {y_max}]"
            )));
        }
        if nx < 3 || ny < 3 {
            return Err(GridError::Invalid(format!("need at least 3 nodes per axis, got {nx}×{ny}")));
        }
        Ok(GridSpec { x_min, x_max, y_min, y_max, nx, ny })
    }

    /// `[lo, hi]²` with `n` nodes per axis.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        Self::new(lo, hi, lo, hi, n, n)
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.hy()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Whether the two axes coincide node for node (I = J).
    pub fn is_square(&self) -> bool {
        self.x_min == self.y_min && self.x_max == self.y_max && self.nx == self.ny
    }

    pub fn weights_x(&self) -> Vec<f64> {
        trapezoid_weights(self.nx, self.hx())
    }

    pub fn weights_y(&self) -> Vec<f64> {
        trapezoid_weights(self.ny, self.hy())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest_x(&self, x: f64) -> usize {
        nearest(x, self.x_min, self.hx(), self.nx)
    }

    pub fn nearest_y(&self, y: f64) -> usize {
        nearest(y, self.y_min, self.hy(), self.ny)
    }
}

fn nearest(v: f64, lo: f64, h: f64, n: usize) -> usize {
    let k = ((v - lo) / h).round();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Composite trapezoid weights for `n` equispaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Trapezoid rule of `v` with precomputed weights, summed in index order.
pub fn quad1(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).fold(0.0, |acc, (a, b)| acc + a * b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Shape { expected: grid.len(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { i: k / grid.ny, j: k % grid.ny });
        }
        Ok(Field2D { grid, values })
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            let x = grid.x(i);
            for j in 0..grid.ny {
                values.push(f(x, grid.y(j)));
            }
        }
        Field2D { grid: grid.clone(), values }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Field2D { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, c: f64) -> Field2D {
        Field2D { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    /// Node indices `(i, j)` of the largest value; ties go to the smallest
    /// row index, then the smallest column index.
    pub fn argmax_index(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best / self.grid.ny, best % self.grid.ny)
    }

    /// Largest deviation from the transpose, for fields on a square grid.
    pub fn asymmetry(&self) -> f64 {
        let g = &self.grid;
        let n = g.nx.min(g.ny);
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// Writes the `x,y,value` snapshot format: row-major over nodes,
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,value")?;
        for i in 0..self.grid.nx {
            let x = self.grid.x(i);
            for j in 0..self.grid.ny {
                writeln!(w, "{},{},{}", fmt17(x), fmt17(self.grid.y(j)), fmt17(self.at(i, j)))?;
            }
        }
        Ok(())
    }
}

/// 17 significant digits, scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Tensor-product trapezoid rule over I×J. Exact for bilinear fields.
pub fn quad2(f: &Field2D) -> f64 {
    let wx = f.grid.weights_x();
    let wy = f.grid.weights_y();
    let ny = f.grid.ny;
    wx.iter()
        .enumerate()
        .fold(0.0, |acc, (i, wi)| acc + wi * quad1(&f.values[i * ny..(i + 1) * ny], &wy))
}

/// ρ^X (function of y), ρ^Y (function of x) and total mass ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// ρ^X(y_j) = ∫_I n(x, y_j) dx, length ny.
    pub rho_x: Vec<f64>,
    /// ρ^Y(x_i) = ∫_J n(x_i, y) dy, length nx.
    pub rho_y: Vec<f64>,
    pub rho: f64,
}

/// Reusable marginal computation for a fixed grid.
#[derive(Debug, Clone)]
pub struct MarginalKernel {
    nx: usize,
    ny: usize,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl MarginalKernel {
    pub fn new(grid: &GridSpec) -> Self {
        MarginalKernel { nx: grid.nx, ny: grid.ny, wx: grid.weights_x(), wy: grid.weights_y() }
    }

    pub fn weights_x(&self) -> &[f64] {
        &self.wx
    }

    pub fn weights_y(&self) -> &[f64] {
        &self.wy
    }

    /// Fills `rho_x` (len ny) and `rho_y` (len nx) and returns ρ = Σ_i w_i ρ^Y_i.
    pub fn compute_into(&self, values: &[f64], rho_x: &mut [f64], rho_y: &mut [f64]) -> f64 {
        let ny = self.ny;
        rho_x.fill(0.0);
        for i in 0..self.nx {
            let row = &values[i * ny..(i + 1) * ny];
            let wi = self.wx[i];
            let mut acc = 0.0;
            for j in 0..ny {
                acc += self.wy[j] * row[j];
                rho_x[j] += wi * row[j];
            }
            rho_y[i] = acc;
        }
        quad1(rho_y, &self.wx)
    }

    pub fn compute(&self, values: &[f64]) -> Marginals {
        let mut rho_x = vec![0.0; self.ny];
        let mut rho_y = vec![0.0; self.nx];
        let rho = self.compute_into(values, &mut rho_x, &mut rho_y);
        Marginals { rho_x, rho_y, rho }
    }
}

pub fn marginals(n: &Field2D) -> Marginals {
    MarginalKernel::new(&n.grid).compute(&n.values)
}

/// Coordinates of the maximum node (see [`Field2D::argmax_index`] for ties).
pub fn argmax(f: &Field2D) -> (f64, f64) {
    let (i, j) = f.argmax_index();
    (f.grid.x(i), f.grid.y(j))
}
