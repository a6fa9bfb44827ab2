//! Uniform cubic velocity grids, quadrature, finite-difference calculus, and
//! the nonnegative grid-distribution state type.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crate::error::{KineticError, Result};
use crate::util::{pairwise_dot, pairwise_sum};

/// Cell-centered uniform grid on `[-lmax, lmax]^d`: nodes
/// `v_i = -lmax + (i + 1/2) h` per axis with `h = 2 lmax / n`.
///
/// No node sits on the origin or the boundary. Fields on the grid are flat
/// `Vec<f64>` in row-major order with the first velocity axis slowest.
#[derive(Debug)]
pub struct VelocityGrid {
    d: usize,
    n: usize,
    lmax: f64,
    h: f64,
    axis: Vec<f64>,
    vsq: OnceLock<Vec<f64>>,
}

impl PartialEq for VelocityGrid {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n && self.lmax == other.lmax
    }
}

/// Build a velocity grid. `d ∈ {2, 3}`, `n` even and ≥ 4 (the boundary
/// stencils need four points per axis), `lmax > 0`.
pub fn make_grid(d: usize, n: usize, lmax: f64) -> Result<Arc<VelocityGrid>> {
    if !(2..=3).contains(&d) {
        return Err(KineticError::Grid(format!("dimension must be 2 or 3, got {d}")));
    }
    if n % 2 != 0 || n < 4 {
        return Err(KineticError::Grid(format!(
            "node count per axis must be even and at least 4, got {n}"
        )));
    }
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(KineticError::Grid(format!("box half-width must be positive, got {lmax}")));
    }
    let h = 2.0 * lmax / n as f64;
    let axis = (0..n).map(|i| -lmax + (i as f64 + 0.5) * h).collect();
    Ok(Arc::new(VelocityGrid {
        d,
        n,
        lmax,
        h,
        axis,
        vsq: OnceLock::new(),
    }))
}

impl VelocityGrid {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lmax(&self) -> f64 {
        self.lmax
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total node count `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node coordinates along one axis.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// Stride of `axis` in the flat row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    /// Decompose a flat index into per-axis indices (unused axes are 0).
    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for a in (0..self.d).rev() {
            idx[a] = rem % self.n;
            rem /= self.n;
        }
        idx
    }

    /// Node coordinates for a flat index (unused components are 0).
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut v = [0.0; 3];
        for a in 0..self.d {
            v[a] = self.axis[idx[a]];
        }
        v
    }

    /// Cached `|v|^2` field.
    pub fn speed_squared(&self) -> &[f64] {
        self.vsq.get_or_init(|| {
            (0..self.len())
                .map(|flat| {
                    let v = self.coords(flat);
                    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
                })
                .collect()
        })
    }

    /// Midpoint quadrature `h^d Σ_i field_i` with deterministic pairwise
    /// reduction.
    pub fn quadrature(&self, field: &[f64]) -> f64 {
        assert_eq!(field.len(), self.len(), "quadrature length mismatch");
        self.cell_volume() * pairwise_sum(field)
    }

    /// Quadrature of a pointwise product, `h^d Σ_i a_i b_i`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.len(), "inner length mismatch");
        self.cell_volume() * pairwise_dot(a, b)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// Second-order partial derivative along `axis`: central differences in
    /// the interior, one-sided three-point stencils at the boundary.
    pub fn gradient_axis(&self, field: &[f64], axis: usize) -> Vec<f64> {
        assert_eq!(field.len(), self.len(), "gradient length mismatch");
        assert!(axis < self.d, "axis out of range");
        let n = self.n;
        let stride = self.stride(axis);
        let inner = stride;
        let outer = field.len() / (n * inner);
        let inv2h = 1.0 / (2.0 * self.h);
        let mut out = vec![0.0; field.len()];
        for o in 0..outer {
            let base_o = o * n * inner;
            for i in 0..inner {
                let start = base_o + i;
                let at = |j: usize| field[start + j * inner];
                out[start] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
                for j in 1..n - 1 {
                    out[start + j * inner] = (at(j + 1) - at(j - 1)) * inv2h;
                }
                out[start + (n - 1) * inner] =
                    (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
            }
        }
        out
    }

    /// Full gradient, one field per axis.
    pub fn gradient(&self, field: &[f64]) -> Vec<Vec<f64>> {
        (0..self.d).map(|a| self.gradient_axis(field, a)).collect()
    }

    /// Second-order Laplacian: three-point second difference in the
    /// interior, one-sided four-point stencils at the boundary.
    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.len(), "laplacian length mismatch");
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut out = vec![0.0; field.len()];
        for axis in 0..self.d {
            let inner = self.stride(axis);
            let outer = field.len() / (n * inner);
            for o in 0..outer {
                let base_o = o * n * inner;
                for i in 0..inner {
                    let start = base_o + i;
                    let at = |j: usize| field[start + j * inner];
                    out[start] += (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv_h2;
                    for j in 1..n - 1 {
                        out[start + j * inner] += (at(j + 1) - 2.0 * at(j) + at(j - 1)) * inv_h2;
                    }
                    out[start + (n - 1) * inner] +=
                        (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) * inv_h2;
                }
            }
        }
        out
    }

    /// Bracket-weight field `⟨v⟩^k = (1 + |v|^2)^{k/2}`.
    pub fn weight_field(&self, k: f64) -> WeightField {
        let values = self
            .speed_squared()
            .iter()
            .map(|&s| (1.0 + s).powf(0.5 * k))
            .collect();
        WeightField { k, values }
    }
}

/// A cached `⟨v⟩^k` weight on a grid.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub k: f64,
    pub values: Vec<f64>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// A nonnegative distribution sampled on a [`VelocityGrid`].
///
/// Each instance carries a process-unique `id`, used as a pairing token by
/// operations that precompute per-state coefficient fields: the fields
/// remember the id they were built from and refuse to act on other states.
#[derive(Debug, Clone)]
pub struct Distribution {
    grid: Arc<VelocityGrid>,
    values: Vec<f64>,
    label: String,
    id: u64,
}

impl Distribution {
    /// Wrap grid values as a distribution; every entry must be finite and
    /// nonnegative.
    pub fn new(grid: Arc<VelocityGrid>, values: Vec<f64>, label: &str) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KineticError::Shape(format!(
                "distribution has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        for (i, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(KineticError::Numerical(format!(
                    "non-finite value {x} at node {i} in '{label}'"
                )));
            }
            if x < 0.0 {
                return Err(KineticError::Numerical(format!(
                    "negative value {x} at node {i} in '{label}'"
                )));
            }
        }
        Ok(Distribution {
            grid,
            values,
            label: label.to_string(),
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Maxwellian with density `rho`, bulk velocity `u`, temperature `temp`.
    pub fn maxwellian(grid: Arc<VelocityGrid>, rho: f64, u: [f64; 3], temp: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0 && temp.is_finite() && temp > 0.0) {
            return Err(KineticError::Param(format!(
                "Maxwellian needs positive density and temperature, got rho={rho}, T={temp}"
            )));
        }
        let d = grid.d();
        let norm = rho / (2.0 * std::f64::consts::PI * temp).powf(d as f64 / 2.0);
        let values = (0..grid.len())
            .map(|flat| {
                let v = grid.coords(flat);
                let mut q = 0.0;
                for a in 0..d {
                    let dv = v[a] - u[a];
                    q += dv * dv;
                }
                norm * (-q / (2.0 * temp)).exp()
            })
            .collect();
        Self::new(grid, values, "maxwellian")
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Process-unique pairing token.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Positivity floor `rel · max(f)` used inside logarithms.
    pub fn floor_value(&self, rel: f64) -> f64 {
        let m = self.max_value();
        if m > 0.0 {
            rel * m
        } else {
            rel
        }
    }

    /// Values clamped from below by [`Self::floor_value`].
    pub fn floored(&self, rel: f64) -> Vec<f64> {
        let eps = self.floor_value(rel);
        self.values.iter().map(|&x| x.max(eps)).collect()
    }
}

/// Default relative positivity floor used by logarithmic functionals.
pub const DEFAULT_FLOOR_REL: f64 = 1e-30;
