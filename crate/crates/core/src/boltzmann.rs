//! The Boltzmann collision operator for hard potentials with angular cutoff:
//! collision kernels, angular quadratures, the gain term `Q⁺` (direct
//! quadrature and fast spectral paths), the loss intensity `R`, the full
//! collision operator, and the Fisher-information dissipation split.
//!
//! Conventions (d = 3): post-collisional velocities in the σ-representation
//! are `v' = (v+v★)/2 + (|v-v★|/2)σ` and `v'★ = (v+v★)/2 - (|v-v★|/2)σ`,
//! with `cos θ = σ·(v-v★)/|v-v★|`. The kernel is `B = b(cos θ) |v-v★|^γ`
//! with `γ ∈ [0, 1]`; `γ = 0` is a validation mode with exactly solvable
//! relaxation, the production range for hard potentials is `(0, 1]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{KineticError, Result};
use crate::fft::{ModeTransform, PaddedConv, C64};
use crate::grid::{Distribution, VelocityGrid, DEFAULT_FLOOR_REL};
use crate::util::{bessel_j0, gauss_legendre, gauss_legendre_on, pairwise_sum};

/// Angular factor `b(cos θ)` of the collision kernel.
#[derive(Debug, Clone)]
pub enum AngularKernel {
    /// `b ≡ b0`.
    Constant(f64),
    /// Piecewise-linear table of `b` at uniformly spaced `cos θ ∈ [-1, 1]`.
    Table(Vec<f64>),
}

/// A collision kernel `B(|u|, cos θ) = b(cos θ) |u|^γ` together with the
/// cached angular norms `‖b‖_{L¹(S^{d-1})}` and `‖b‖_{L²(S^{d-1})}`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    d: usize,
    gamma: f64,
    angular: AngularKernel,
    b_l1: f64,
    b_l2: f64,
}

impl KernelSpec {
    pub fn new(d: usize, gamma: f64, angular: AngularKernel) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(KineticError::Param(format!("kernel dimension must be 2 or 3, got {d}")));
        }
        if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
            return Err(KineticError::Param(format!(
                "hard-potential exponent must lie in [0, 1] (0 only as the \
                 exactly solvable validation mode), got {gamma}"
            )));
        }
        match &angular {
            AngularKernel::Constant(b0) => {
                if !(b0.is_finite() && *b0 > 0.0) {
                    return Err(KineticError::Param(format!(
                        "constant angular kernel must be positive, got {b0}"
                    )));
                }
            }
            AngularKernel::Table(vals) => {
                if vals.len() < 2 {
                    return Err(KineticError::Param(
                        "angular table needs at least 2 entries".into(),
                    ));
                }
                if vals.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(KineticError::Param(
                        "angular table entries must be finite and ≥ 0".into(),
                    ));
                }
                if vals.iter().all(|&x| x == 0.0) {
                    return Err(KineticError::Param("angular table is identically zero".into()));
                }
            }
        }
        let mut spec = KernelSpec {
            d,
            gamma,
            angular,
            b_l1: 0.0,
            b_l2: 0.0,
        };
        let (l1, l2) = spec.compute_angular_norms();
        spec.b_l1 = l1;
        spec.b_l2 = l2;
        Ok(spec)
    }

    /// Constant angular kernel normalized so that `‖b‖_{L¹} = 1`.
    pub fn constant_unit_l1(d: usize, gamma: f64) -> Result<Self> {
        let sphere = match d {
            2 => 2.0 * std::f64::consts::PI,
            _ => 4.0 * std::f64::consts::PI,
        };
        Self::new(d, gamma, AngularKernel::Constant(1.0 / sphere))
    }

    fn compute_angular_norms(&self) -> (f64, f64) {
        match self.d {
            3 => {
                // ∫_{S²} b(σ·e) dσ = 2π ∫_{-1}^{1} b(t) dt.
                let (t, w) = gauss_legendre(256);
                let mut l1 = 0.0;
                let mut l2 = 0.0;
                for (ti, wi) in t.iter().zip(&w) {
                    let b = self.b(*ti);
                    l1 += wi * b;
                    l2 += wi * b * b;
                }
                (
                    2.0 * std::f64::consts::PI * l1,
                    (2.0 * std::f64::consts::PI * l2).sqrt(),
                )
            }
            _ => {
                // ∫_{S¹} b(cos φ) dφ, uniform trapezoid in the angle.
                let m = 2048;
                let dphi = 2.0 * std::f64::consts::PI / m as f64;
                let mut l1 = 0.0;
                let mut l2 = 0.0;
                for j in 0..m {
                    let b = self.b(((j as f64 + 0.5) * dphi).cos());
                    l1 += b * dphi;
                    l2 += b * b * dphi;
                }
                (l1, l2.sqrt())
            }
        }
    }

    /// Evaluate `b(cos θ)`, clamping the argument into `[-1, 1]`.
    pub fn b(&self, cos_theta: f64) -> f64 {
        let t = cos_theta.clamp(-1.0, 1.0);
        match &self.angular {
            AngularKernel::Constant(b0) => *b0,
            AngularKernel::Table(vals) => {
                let m = vals.len();
                let x = (t + 1.0) / 2.0 * (m - 1) as f64;
                let i = (x.floor() as usize).min(m - 2);
                let frac = x - i as f64;
                vals[i] * (1.0 - frac) + vals[i + 1] * frac
            }
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn b_l1(&self) -> f64 {
        self.b_l1
    }

    pub fn b_l2(&self) -> f64 {
        self.b_l2
    }

    pub fn angular(&self) -> &AngularKernel {
        &self.angular
    }
}

/// Product quadrature on the unit sphere S²: Gauss–Legendre in the polar
/// cosine × midpoint in azimuth, expressed in the orthonormal frame of a
/// reference direction. Weights sum to `|S²| = 4π` to machine precision.
#[derive(Debug, Clone)]
pub struct SigmaQuadrature {
    /// Polar cosines (Gauss–Legendre nodes on [-1, 1], ascending).
    pub cos_nodes: Vec<f64>,
    /// Matching polar weights (include no azimuth factor).
    pub polar_weights: Vec<f64>,
    /// Azimuth angles (midpoint rule).
    pub azimuths: Vec<f64>,
    /// Constant azimuth weight 2π/m.
    pub azimuth_weight: f64,
}

impl SigmaQuadrature {
    /// `n_polar` Gauss–Legendre polar nodes × `n_azimuth` uniform azimuths.
    /// Defaults used across the crate: 8 × 16.
    pub fn new(n_polar: usize, n_azimuth: usize) -> Result<Self> {
        if n_polar < 2 || n_azimuth < 2 {
            return Err(KineticError::Param(format!(
                "sphere quadrature needs at least 2 nodes per factor, got {n_polar}x{n_azimuth}"
            )));
        }
        let (cos_nodes, polar_weights) = gauss_legendre(n_polar);
        let azimuths = (0..n_azimuth)
            .map(|j| 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_azimuth as f64)
            .collect();
        Ok(SigmaQuadrature {
            cos_nodes,
            polar_weights,
            azimuths,
            azimuth_weight: 2.0 * std::f64::consts::PI / n_azimuth as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.cos_nodes.len() * self.azimuths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_sum(&self) -> f64 {
        let polar: f64 = self.polar_weights.iter().sum();
        polar * self.azimuth_weight * self.azimuths.len() as f64
    }
}

impl Default for SigmaQuadrature {
    fn default() -> Self {
        Self::new(8, 16).unwrap()
    }
}

/// An orthonormal frame `(e1, e2, u_hat)` completing a unit vector.
fn frame(u_hat: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    // Cross with the axis least aligned with u_hat.
    let pick = if u_hat[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut e1 = [
        u_hat[1] * pick[2] - u_hat[2] * pick[1],
        u_hat[2] * pick[0] - u_hat[0] * pick[2],
        u_hat[0] * pick[1] - u_hat[1] * pick[0],
    ];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for x in &mut e1 {
        *x /= n1;
    }
    let e2 = [
        u_hat[1] * e1[2] - u_hat[2] * e1[1],
        u_hat[2] * e1[0] - u_hat[0] * e1[2],
        u_hat[0] * e1[1] - u_hat[1] * e1[0],
    ];
    (e1, e2)
}

/// Trilinear interpolation of a grid field at a physical point, with zero
/// extension outside the box. The production gain kernel bakes the same
/// stencil into precomputed per-offset tables; this pointwise form remains
/// the reference the tests compare against.
#[cfg(test)]
#[inline]
fn trilinear(vals: &[f64], n: usize, lmax: f64, h: f64, p: [f64; 3]) -> f64 {
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let t = (p[a] + lmax) / h - 0.5;
        let b = t.floor();
        base[a] = b as isize;
        frac[a] = t - b;
    }
    let n_i = n as isize;
    let mut acc = 0.0;
    for c0 in 0..2isize {
        let i0 = base[0] + c0;
        if i0 < 0 || i0 >= n_i {
            continue;
        }
        let w0 = if c0 == 0 { 1.0 - frac[0] } else { frac[0] };
        for c1 in 0..2isize {
            let i1 = base[1] + c1;
            if i1 < 0 || i1 >= n_i {
                continue;
            }
            let w1 = if c1 == 0 { 1.0 - frac[1] } else { frac[1] };
            let w01 = w0 * w1;
            let row = ((i0 as usize) * n + i1 as usize) * n;
            for c2 in 0..2isize {
                let i2 = base[2] + c2;
                if i2 < 0 || i2 >= n_i {
                    continue;
                }
                let w2 = if c2 == 0 { 1.0 - frac[2] } else { frac[2] };
                acc += w01 * w2 * vals[row + i2 as usize];
            }
        }
    }
    acc
}

/// Squared support radius covering all but `tail` of the mass of `f`.
fn support_radius_sq(f: &Distribution, tail: f64) -> f64 {
    let g = f.grid();
    let vals = f.values();
    let vsq = g.speed_squared();
    let mass: f64 = pairwise_sum(vals);
    if mass <= 0.0 {
        return 0.0;
    }
    let mut shells: Vec<(f64, f64)> = vsq.iter().cloned().zip(vals.iter().cloned()).collect();
    shells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let budget = tail * mass;
    let mut acc = 0.0;
    for (r2, m) in shells {
        acc += m;
        if acc > budget {
            return r2;
        }
    }
    0.0
}

/// Options for the direct gain quadrature.
#[derive(Debug, Clone, Copy)]
pub struct DirectOpts {
    /// Mass fraction allowed outside the pruned support radii. Pairs whose
    /// conserved energy exceeds the combined support budget are skipped;
    /// by energy conservation every such pair evaluates at least one factor
    /// in its own mass tail, so the neglected contribution is of order
    /// `prune_tail` relative.
    pub prune_tail: f64,
}

impl Default for DirectOpts {
    fn default() -> Self {
        DirectOpts { prune_tail: 1e-12 }
    }
}

/// Direct quadrature for the gain term (d = 3 only):
/// `Q⁺(f,g)(v) = h³ Σ_{v★} |v-v★|^γ Σ_σ w_σ b(cos θ) f(v'★) g(v')`,
/// with trilinear interpolation and zero extension for the post-collisional
/// evaluations.
pub fn qplus_direct(
    f: &Distribution,
    g: &Distribution,
    kernel: &KernelSpec,
    sigma: &SigmaQuadrature,
) -> Result<Vec<f64>> {
    qplus_direct_opts(f, g, kernel, sigma, DirectOpts::default())
}

pub fn qplus_direct_opts(
    f: &Distribution,
    g: &Distribution,
    kernel: &KernelSpec,
    sigma: &SigmaQuadrature,
    opts: DirectOpts,
) -> Result<Vec<f64>> {
    let grid = f.grid();
    if grid.d() != 3 || kernel.d() != 3 {
        return Err(KineticError::Param(
            "the direct gain quadrature is implemented for d = 3 only".into(),
        ));
    }
    if g.grid().as_ref() != grid.as_ref() {
        return Err(KineticError::Shape("gain arguments live on different grids".into()));
    }
    let n = grid.n();
    let lmax = grid.lmax();
    let h = grid.h();
    let gamma = kernel.gamma();
    let vsq = grid.speed_squared();

    // Support pruning: drop pairs whose conserved energy cannot reach both
    // supports simultaneously.
    let sf2 = support_radius_sq(f, opts.prune_tail);
    let sg2 = support_radius_sq(g, opts.prune_tail);
    let stot2 = sf2 + sg2;

    // Same-argument symmetry: σ → -σ swaps v' and v'★, so for f = g the
    // lower polar hemisphere folds onto the upper one with the symmetrized
    // angular factor b(c) + b(-c). The fold maps the azimuth node set onto
    // itself only for even azimuth counts.
    let symmetric = f.id() == g.id() && sigma.azimuths.len() % 2 == 0;
    let mut polar: Vec<(f64, f64, f64)> = Vec::new(); // (cos, sin, b-weighted quadrature factor)
    for (i, &c) in sigma.cos_nodes.iter().enumerate() {
        let w = sigma.polar_weights[i] * sigma.azimuth_weight;
        if symmetric {
            if c > 1e-14 {
                polar.push((c, (1.0 - c * c).max(0.0).sqrt(), w * (kernel.b(c) + kernel.b(-c))));
            } else if c.abs() <= 1e-14 {
                polar.push((c, 1.0, w * kernel.b(c)));
            }
        } else {
            polar.push((c, (1.0 - c * c).max(0.0).sqrt(), w * kernel.b(c)));
        }
    }
    let azimuth: Vec<(f64, f64)> = sigma.azimuths.iter().map(|&p| (p.cos(), p.sin())).collect();

    let fv = f.values();
    let gv = g.values();
    let len = grid.len();

    // The pair set |v|² + |v★|² ≤ stot2 is grouped by the difference vector
    // u = v - v★: for fixed u and a fixed σ node both post-collisional
    // points sit at a fixed offset from v, so their trilinear stencils
    // (eight weights plus a base corner) are shared by every admissible v
    // and the inner work collapses to two eight-point dot products against
    // zero-padded copies of the inputs. Per u the admissible v form the
    // ball |v - u/2|² ≤ (stot2 - |u|²/2)/2.
    let umax = (2.0 * stot2).sqrt().min(3f64.sqrt() * (n as f64 - 1.0) * h);
    let du_max = ((umax / h).floor() as isize).min(n as isize - 1);
    let pad = (0.5 * ((n as f64 - 1.0) + umax / h)).ceil() as usize + 2;
    let np = n + 2 * pad;
    let pack = |vals: &[f64]| -> Vec<f64> {
        let mut padded = vec![0.0; np * np * np];
        for i0 in 0..n {
            for i1 in 0..n {
                let src = (i0 * n + i1) * n;
                let dst = ((i0 + pad) * np + (i1 + pad)) * np + pad;
                padded[dst..dst + n].copy_from_slice(&vals[src..src + n]);
            }
        }
        padded
    };
    let pf = pack(fv);
    let pg_own;
    let pg: &[f64] = if f.id() == g.id() {
        &pf
    } else {
        pg_own = pack(gv);
        &pg_own
    };

    // One interpolation stencil: flat base offset into the padded cube plus
    // the eight corner weights, ordered to match `corner_flat`.
    let sp1 = np; // axis-1 stride
    let sp0 = np * np; // axis-0 stride
    let corner_flat: [usize; 8] =
        [0, 1, sp1, sp1 + 1, sp0, sp0 + 1, sp0 + sp1, sp0 + sp1 + 1];
    struct SigmaEntry {
        base_minus: isize,
        base_plus: isize,
        w_minus: [f64; 8], // scaled by the full kernel factor
        w_plus: [f64; 8],
    }
    let stencil = |q: [f64; 3]| -> (isize, [f64; 8]) {
        let mut base = 0isize;
        let mut fr = [0.0f64; 3];
        for a in 0..3 {
            let b = q[a].floor();
            fr[a] = q[a] - b;
            let s = [sp0 as isize, sp1 as isize, 1][a];
            base += s * (b as isize);
        }
        let mut w = [0.0f64; 8];
        for (k, wk) in w.iter_mut().enumerate() {
            let w0 = if k & 4 == 0 { 1.0 - fr[0] } else { fr[0] };
            let w1 = if k & 2 == 0 { 1.0 - fr[1] } else { fr[1] };
            let w2 = if k & 1 == 0 { 1.0 - fr[2] } else { fr[2] };
            *wk = w0 * w1 * w2;
        }
        (base, w)
    };
    let axis_coord = |i: isize| -> f64 { -lmax + (i as f64 + 0.5) * h };

    // Fixed-size difference-vector chunks keep the reduction order (and so
    // the floating-point result) independent of the worker count.
    let mut du_list: Vec<[isize; 3]> = Vec::new();
    for d0 in -du_max..=du_max {
        for d1 in -du_max..=du_max {
            for d2 in -du_max..=du_max {
                if d0 == 0 && d1 == 0 && d2 == 0 {
                    continue;
                }
                let usq = (d0 * d0 + d1 * d1 + d2 * d2) as f64 * h * h;
                if usq <= 2.0 * stot2 {
                    du_list.push([d0, d1, d2]);
                }
            }
        }
    }
    let chunk = du_list.len().div_ceil(128).max(1);
    let partials: Vec<Vec<f64>> = du_list
        .par_chunks(chunk)
        .map(|dus| {
            let mut local = vec![0.0; len];
            let mut rows: Vec<(usize, usize, usize, usize)> = Vec::new();
            let mut entries: Vec<SigmaEntry> = Vec::new();
            for &du in dus {
                let u = [du[0] as f64 * h, du[1] as f64 * h, du[2] as f64 * h];
                let usq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
                let rb2 = 0.5 * (stot2 - 0.5 * usq);
                if rb2 < 0.0 {
                    continue;
                }

                // Admissible v rows: v★ = v - u on the grid and the pair
                // inside the energy ellipsoid, solved per row for the i2
                // span of |v|² + |v - u|² ≤ stot2.
                rows.clear();
                let win = |d: isize| -> (isize, isize) { (d.max(0), n as isize + d.min(0)) };
                let (lo0, hi0) = win(du[0]);
                let (lo1, hi1) = win(du[1]);
                let (lo2, hi2) = win(du[2]);
                for i0 in lo0..hi0 {
                    let x0 = axis_coord(i0);
                    let q0 = x0 * x0 + (x0 - u[0]) * (x0 - u[0]);
                    if q0 > stot2 {
                        continue;
                    }
                    for i1 in lo1..hi1 {
                        let x1 = axis_coord(i1);
                        let rem = stot2 - q0 - x1 * x1 - (x1 - u[1]) * (x1 - u[1]);
                        let disc = 2.0 * rem - u[2] * u[2];
                        if disc < 0.0 {
                            continue;
                        }
                        let s = disc.sqrt();
                        let zlo = 0.5 * (u[2] - s);
                        let zhi = 0.5 * (u[2] + s);
                        let jlo = (((zlo + lmax) / h - 0.5).ceil() as isize).max(lo2);
                        let jhi = ((((zhi + lmax) / h - 0.5).floor() as isize) + 1).min(hi2);
                        if jlo < jhi {
                            rows.push((i0 as usize, i1 as usize, jlo as usize, jhi as usize));
                        }
                    }
                }
                if rows.is_empty() {
                    continue;
                }

                let unorm = usq.sqrt();
                let kin = if gamma == 1.0 {
                    unorm
                } else if gamma == 0.0 {
                    1.0
                } else {
                    usq.powf(0.5 * gamma)
                };
                let r = 0.5 * unorm;
                let u_hat = [u[0] / unorm, u[1] / unorm, u[2] / unorm];
                let (e1, e2) = frame(u_hat);
                entries.clear();
                for &(cn, sn, bw) in &polar {
                    let rc = r * cn;
                    let rs = r * sn;
                    for &(cp, sp) in &azimuth {
                        let t1 = rs * cp;
                        let t2 = rs * sp;
                        // σ = cosθ·û + sinθ·(cosφ e1 + sinφ e2); the offsets
                        // of v' = c + rσ and v'★ = c - rσ from v, in grid
                        // index units, are fixed for the whole du class.
                        let mut q_plus = [0.0f64; 3];
                        let mut q_minus = [0.0f64; 3];
                        for a in 0..3 {
                            let rsig = rc * u_hat[a] + t1 * e1[a] + t2 * e2[a];
                            q_plus[a] = (-0.5 * u[a] + rsig) / h;
                            q_minus[a] = (-0.5 * u[a] - rsig) / h;
                        }
                        let (base_minus, mut w_minus) = stencil(q_minus);
                        let (base_plus, w_plus) = stencil(q_plus);
                        let k = kin * bw;
                        for w in &mut w_minus {
                            *w *= k;
                        }
                        entries.push(SigmaEntry { base_minus, base_plus, w_minus, w_plus });
                    }
                }

                for e in &entries {
                    for &(i0, i1, jlo, jhi) in &rows {
                        let prow = ((i0 + pad) * np + (i1 + pad)) * np + pad;
                        let orow = (i0 * n + i1) * n;
                        let bm = (prow as isize + e.base_minus) as usize;
                        let bp = (prow as isize + e.base_plus) as usize;
                        for j in jlo..jhi {
                            let mut sm = 0.0;
                            let mut sg = 0.0;
                            for (k, &cf) in corner_flat.iter().enumerate() {
                                sm += e.w_minus[k] * pf[bm + j + cf];
                                sg += e.w_plus[k] * pg[bp + j + cf];
                            }
                            local[orow + j] += sm * sg;
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut out = vec![0.0; len];
    for part in partials {
        for (o, p) in out.iter_mut().zip(&part) {
            *o += p;
        }
    }
    if gamma == 0.0 {
        // |u|^0 = 1 and v' = v'★ = v: the diagonal contributes with the
        // full angular mass whenever the pair (v, v) survives the prune.
        for flat in 0..len {
            if 2.0 * vsq[flat] <= stot2 {
                out[flat] += kernel.b_l1() * fv[flat] * gv[flat];
            }
        }
    }
    for o in &mut out {
        *o *= h * h * h;
    }
    Ok(out)
}

/// Direct O(N²) loss intensity
/// `R(f)(v) = ‖b‖_{L¹} h^d Σ_{v★} |v - v★|^γ f(v★)` (reference path).
pub fn loss_intensity_direct(f: &Distribution, kernel: &KernelSpec) -> Vec<f64> {
    let grid = f.grid();
    let gamma = kernel.gamma();
    let fv = f.values();
    let len = grid.len();
    let mut out = vec![0.0; len];
    out.par_iter_mut().enumerate().for_each(|(flat, slot)| {
        let v = grid.coords(flat);
        let mut terms = vec![0.0; len];
        for (star, t) in terms.iter_mut().enumerate() {
            let vs = grid.coords(star);
            let mut usq = 0.0;
            for a in 0..3 {
                let d = v[a] - vs[a];
                usq += d * d;
            }
            let kin = if gamma == 0.0 { 1.0 } else { usq.powf(0.5 * gamma) };
            *t = kin * fv[star];
        }
        *slot = kernel.b_l1() * grid.cell_volume() * pairwise_sum(&terms);
    });
    out
}

/// Loss intensity via zero-padded FFT convolution. Builds a one-shot plan;
/// inside time loops prefer [`QplusFastPlan::loss`], which caches it.
pub fn loss_intensity(f: &Distribution, kernel: &KernelSpec) -> Vec<f64> {
    let grid = f.grid();
    let gamma = kernel.gamma();
    let b_l1 = kernel.b_l1();
    let kern = move |z: &[f64]| {
        let mut q = 0.0;
        for &x in z {
            q += x * x;
        }
        if gamma == 0.0 {
            b_l1
        } else {
            b_l1 * q.powf(0.5 * gamma)
        }
    };
    let kernels: [&dyn Fn(&[f64]) -> f64; 1] = [&kern];
    let conv = PaddedConv::new(grid.d(), grid.n(), grid.h(), &kernels);
    conv.apply_one(f.values(), 0)
}

/// Options for the fast spectral gain path.
#[derive(Debug, Clone, Copy)]
pub struct FastOpts {
    /// Gauss–Legendre polar nodes for the half-sphere direction set.
    pub n_polar: usize,
    /// Uniform azimuth count for the direction set.
    pub n_azimuth: usize,
    /// Separation rank for the radial kernel factorization.
    pub rank: usize,
    /// Truncation radius as a fraction of the box half-width.
    pub radius_factor: f64,
    /// Frequency oversampling factor for the γ = 0 multiplier path. The σ
    /// integrand samples the transforms between mode nodes, and trilinear
    /// interpolation there carries an O(Δξ²) error with Δξ = π/L fixed by
    /// the box; zero padding in velocity space by this factor refines Δξ
    /// without touching the physical resolution.
    pub mode_pad: usize,
}

impl Default for FastOpts {
    fn default() -> Self {
        FastOpts {
            n_polar: 6,
            n_azimuth: 6,
            rank: 16,
            radius_factor: 0.9,
            mode_pad: 4,
        }
    }
}

/// Dense 1-d lookup table with linear interpolation on [0, xmax].
struct Profile {
    xmax: f64,
    values: Vec<f64>,
}

impl Profile {
    fn build(xmax: f64, m: usize, f: impl Fn(f64) -> f64) -> Profile {
        let values = (0..m)
            .map(|i| f(xmax * i as f64 / (m - 1) as f64))
            .collect();
        Profile { xmax, values }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let m = self.values.len();
        let t = (x / self.xmax * (m - 1) as f64).clamp(0.0, (m - 1) as f64);
        let i = (t.floor() as usize).min(m - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// One separated term of the radial kernel: precomputed profile tables
/// `φ_j(p)` (line factor, attaches to the second argument) and `ψ_j(t)`
/// (transverse-plane factor, attaches to the first argument).
struct RankTerm {
    phi: Profile,
    psi: Profile,
}

/// Precomputed fast spectral gain for one (grid, kernel) pair.
///
/// The gain is evaluated in the representation
/// `Q⁺(f,g)(v) = Σ_e w_e Σ_j [F⁻¹(φ_j(ξ·e) ĝ)](v) · [F⁻¹(ψ_j(|ξ - (ξ·e)e|) f̂)](v)`,
/// where the direction sum covers a half-sphere and the separated factors
/// `(φ_j, ψ_j)` come from an L²-weighted SVD of the radial kernel
/// `K(ρ, s) = 4 b((s²-ρ²)/(ρ²+s²)) (ρ²+s²)^{(γ-1)/2}` on `[0, R]²`
/// (exact rank 1 for γ = 1 with constant angular factor). For γ = 0 the
/// plan instead uses the exact spectral multiplier form of the gain.
pub struct QplusFastPlan {
    grid: Arc<VelocityGrid>,
    kernel: KernelSpec,
    opts: FastOpts,
    mt: ModeTransform,
    /// Directions on the upper half-sphere with weights summing to 2π.
    directions: Vec<([f64; 3], f64)>,
    terms: Vec<RankTerm>,
    /// ξ vectors per flat mode index.
    xi: Vec<[f64; 3]>,
    loss_conv: PaddedConv,
    /// Full-sphere quadrature for the γ = 0 multiplier path.
    sigma_full: SigmaQuadrature,
    /// Oversampled transform for the γ = 0 multiplier path (`mode_pad` > 1).
    mt_fine: Option<ModeTransform>,
}

impl QplusFastPlan {
    pub fn new(grid: &Arc<VelocityGrid>, kernel: &KernelSpec, opts: FastOpts) -> Result<Self> {
        if grid.d() != 3 || kernel.d() != 3 {
            return Err(KineticError::Param(
                "the fast gain path is implemented for d = 3 only".into(),
            ));
        }
        if opts.rank == 0 || opts.n_polar == 0 || opts.n_azimuth == 0 {
            return Err(KineticError::Param("fast-path orders must be positive".into()));
        }
        if !(1..=8).contains(&opts.mode_pad) {
            return Err(KineticError::Param(format!(
                "frequency oversampling factor must lie in 1..=8, got {}",
                opts.mode_pad
            )));
        }
        if !(0.0 < opts.radius_factor && opts.radius_factor <= 2.0) {
            return Err(KineticError::Param(format!(
                "truncation radius factor must lie in (0, 2], got {}",
                opts.radius_factor
            )));
        }
        let n = grid.n();
        let mt = ModeTransform::new(3, n, grid.lmax());
        let radius = opts.radius_factor * grid.lmax();

        // Half-sphere directions: Gauss–Legendre in cos(polar) on [0, 1]
        // × midpoint azimuth; weights sum to 2π.
        let (ct, wt) = gauss_legendre_on(opts.n_polar, 0.0, 1.0);
        let mut directions = Vec::with_capacity(opts.n_polar * opts.n_azimuth);
        let waz = 2.0 * std::f64::consts::PI / opts.n_azimuth as f64;
        for (i, &c) in ct.iter().enumerate() {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..opts.n_azimuth {
                let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / opts.n_azimuth as f64;
                directions.push(([s * phi.cos(), s * phi.sin(), c], wt[i] * waz));
            }
        }

        let terms = build_rank_terms(kernel, radius, opts.rank, &mt)?;

        let xi: Vec<[f64; 3]> = (0..mt.len())
            .map(|flat| {
                let mut rem = flat;
                let mut v = [0.0; 3];
                for a in (0..3).rev() {
                    let k = rem % n;
                    rem /= n;
                    v[a] = mt.signed_mode(k) as f64 * mt.dxi();
                }
                v
            })
            .collect();

        let gamma = kernel.gamma();
        let b_l1 = kernel.b_l1();
        let loss_kern = move |z: &[f64]| {
            let mut q = 0.0;
            for &x in z {
                q += x * x;
            }
            if gamma == 0.0 {
                b_l1
            } else {
                b_l1 * q.powf(0.5 * gamma)
            }
        };
        let loss_kernels: [&dyn Fn(&[f64]) -> f64; 1] = [&loss_kern];
        let loss_conv = PaddedConv::new(3, n, grid.h(), &loss_kernels);

        let mt_fine = if kernel.gamma() == 0.0 && opts.mode_pad > 1 {
            Some(ModeTransform::new(3, opts.mode_pad * n, opts.mode_pad as f64 * grid.lmax()))
        } else {
            None
        };

        Ok(QplusFastPlan {
            grid: grid.clone(),
            kernel: kernel.clone(),
            opts,
            mt,
            directions,
            terms,
            xi,
            loss_conv,
            sigma_full: SigmaQuadrature::default(),
            mt_fine,
        })
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn opts(&self) -> &FastOpts {
        &self.opts
    }

    fn check_state(&self, f: &Distribution) -> Result<()> {
        if f.grid().as_ref() != self.grid.as_ref() {
            return Err(KineticError::Shape(
                "fast gain plan was precomputed for a different grid".into(),
            ));
        }
        Ok(())
    }

    /// Fast loss intensity (identical discrete sum to the direct path, up to
    /// FFT roundoff).
    pub fn loss(&self, f: &Distribution) -> Result<Vec<f64>> {
        self.check_state(f)?;
        Ok(self.loss_conv.apply_one(f.values(), 0))
    }

    /// Fast gain `Q⁺(f, g)`.
    pub fn qplus(&self, f: &Distribution, g: &Distribution) -> Result<Vec<f64>> {
        self.check_state(f)?;
        self.check_state(g)?;
        if self.kernel.gamma() == 0.0 {
            return Ok(self.qplus_multiplier(f, g));
        }
        let f_hat = self.mt.forward_modes(f.values());
        let g_hat = if f.id() == g.id() {
            f_hat.clone()
        } else {
            self.mt.forward_modes(g.values())
        };
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        let mut buf_line = vec![C64::new(0.0, 0.0); len];
        let mut buf_disc = vec![C64::new(0.0, 0.0); len];
        for &(e, we) in &self.directions {
            for term in &self.terms {
                for (i, &xi) in self.xi.iter().enumerate() {
                    let p = xi[0] * e[0] + xi[1] * e[1] + xi[2] * e[2];
                    let xsq = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                    let t = (xsq - p * p).max(0.0).sqrt();
                    buf_line[i] = g_hat[i] * term.phi.eval(p.abs());
                    buf_disc[i] = f_hat[i] * term.psi.eval(t);
                }
                let u_line = self.mt.inverse_modes(&buf_line);
                let u_disc = self.mt.inverse_modes(&buf_disc);
                for i in 0..len {
                    out[i] += we * u_line[i] * u_disc[i];
                }
            }
        }
        Ok(out)
    }

    /// Exact spectral multiplier form of the gain, valid for γ = 0:
    /// `Q̂⁺(ξ) = ∫_{S²} b(ξ̂·σ) F(ξ⁻) G(ξ⁺) dσ`, `ξ± = (ξ ± |ξ|σ)/2`,
    /// with trilinear interpolation of the mode array in frequency space and
    /// zero extension outside the resolved cube.
    fn qplus_multiplier(&self, f: &Distribution, g: &Distribution) -> Vec<f64> {
        let n = self.grid.n();
        // With an oversampled transform the interpolated modes live on a
        // grid `mode_pad` times finer; embedding the data at its original
        // physical cell centers keeps the analytic transform unchanged, and
        // the 1/len normalization difference is repaid as mode_pad³.
        let forward = |vals: &[f64]| -> Vec<C64> {
            match &self.mt_fine {
                Some(fine) => {
                    let p = self.opts.mode_pad;
                    let nf = p * n;
                    let off = (p - 1) * n / 2;
                    let mut padded = vec![0.0; fine.len()];
                    for i0 in 0..n {
                        for i1 in 0..n {
                            let src = (i0 * n + i1) * n;
                            let dst = ((i0 + off) * nf + (i1 + off)) * nf + off;
                            padded[dst..dst + n].copy_from_slice(&vals[src..src + n]);
                        }
                    }
                    let mut modes = fine.forward_modes(&padded);
                    let scale = (p * p * p) as f64;
                    for m in &mut modes {
                        *m *= scale;
                    }
                    modes
                }
                None => self.mt.forward_modes(vals),
            }
        };
        let f_hat = forward(f.values());
        let g_hat = if f.id() == g.id() {
            f_hat.clone()
        } else {
            forward(g.values())
        };
        let n_modes = self.mt_fine.as_ref().map_or(n, |_| self.opts.mode_pad * n);
        let vol = {
            let two_l = 2.0 * self.grid.lmax();
            two_l * two_l * two_l
        };
        let dxi = self.mt.dxi() / self.mt_fine.as_ref().map_or(1.0, |_| self.opts.mode_pad as f64);
        let quad = &self.sigma_full;
        let azimuth: Vec<(f64, f64)> = quad.azimuths.iter().map(|&p| (p.cos(), p.sin())).collect();
        let mut q_hat = vec![C64::new(0.0, 0.0); self.grid.len()];
        q_hat.par_iter_mut().enumerate().for_each(|(flat, slot)| {
            let xi = self.xi[flat];
            let norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if norm == 0.0 {
                // Zero mode: index 0 in wrapped order for both transform sizes.
                *slot = f_hat[0] * g_hat[0] * (vol * self.kernel.b_l1());
                return;
            }
            let xh = [xi[0] / norm, xi[1] / norm, xi[2] / norm];
            let (e1, e2) = frame(xh);
            let mut acc = C64::new(0.0, 0.0);
            for (i, &cn) in quad.cos_nodes.iter().enumerate() {
                let sn = (1.0 - cn * cn).max(0.0).sqrt();
                let bw = quad.polar_weights[i] * quad.azimuth_weight * self.kernel.b(cn);
                if bw == 0.0 {
                    continue;
                }
                for &(cp, sp) in &azimuth {
                    let sigma = [
                        cn * xh[0] + sn * (cp * e1[0] + sp * e2[0]),
                        cn * xh[1] + sn * (cp * e1[1] + sp * e2[1]),
                        cn * xh[2] + sn * (cp * e1[2] + sp * e2[2]),
                    ];
                    // Continuous mode coordinates of ξ± = (ξ ± |ξ|σ)/2.
                    let cm = [
                        0.5 * (xi[0] - norm * sigma[0]) / dxi,
                        0.5 * (xi[1] - norm * sigma[1]) / dxi,
                        0.5 * (xi[2] - norm * sigma[2]) / dxi,
                    ];
                    let cp_ = [
                        0.5 * (xi[0] + norm * sigma[0]) / dxi,
                        0.5 * (xi[1] + norm * sigma[1]) / dxi,
                        0.5 * (xi[2] + norm * sigma[2]) / dxi,
                    ];
                    let fm = interp_modes(&f_hat, n_modes, cm);
                    let gp = interp_modes(&g_hat, n_modes, cp_);
                    acc += fm * gp * bw;
                }
            }
            *slot = acc * vol;
        });
        self.mt.inverse_modes(&q_hat)
    }

    /// Full collision operator `Q(f, g) = Q⁺(f, g) - g · R(f)` with the
    /// discrete mass closure: the gain is rescaled by the scalar
    /// `∫ g R(f) / ∫ Q⁺` (an O(h²)-close-to-1 factor) so that the discrete
    /// collision operator carries exactly zero mass.
    pub fn collision(&self, f: &Distribution, g: &Distribution) -> Result<Vec<f64>> {
        let gain = self.qplus(f, g)?;
        let loss = self.loss(f)?;
        Ok(assemble_collision(&self.grid, &gain, &loss, g.values()))
    }

    pub fn fisher_rhs(&self, f: &Distribution) -> Result<FisherRhs> {
        let gain = self.qplus(f, f)?;
        let loss = self.loss(f)?;
        Ok(fisher_rhs(f, &gain, &loss))
    }
}

/// Trilinear interpolation of a wrapped mode array at continuous signed mode
/// coordinates, zero outside `[-n/2, n/2 - 1]³`.
#[inline]
fn interp_modes(modes: &[C64], n: usize, c: [f64; 3]) -> C64 {
    let half = (n / 2) as isize;
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let b = c[a].floor();
        base[a] = b as isize;
        frac[a] = c[a] - b;
    }
    let mut acc = C64::new(0.0, 0.0);
    for c0 in 0..2isize {
        let l0 = base[0] + c0;
        if l0 < -half || l0 >= half {
            continue;
        }
        let w0 = if c0 == 0 { 1.0 - frac[0] } else { frac[0] };
        let k0 = l0.rem_euclid(n as isize) as usize;
        for c1 in 0..2isize {
            let l1 = base[1] + c1;
            if l1 < -half || l1 >= half {
                continue;
            }
            let w1 = if c1 == 0 { 1.0 - frac[1] } else { frac[1] };
            let k1 = l1.rem_euclid(n as isize) as usize;
            let row = (k0 * n + k1) * n;
            for c2 in 0..2isize {
                let l2 = base[2] + c2;
                if l2 < -half || l2 >= half {
                    continue;
                }
                let w2 = if c2 == 0 { 1.0 - frac[2] } else { frac[2] };
                let k2 = l2.rem_euclid(n as isize) as usize;
                acc += modes[row + k2] * (w0 * w1 * w2);
            }
        }
    }
    acc
}

/// Build the separated radial kernel terms on [0, R]².
fn build_rank_terms(
    kernel: &KernelSpec,
    radius: f64,
    rank: usize,
    mt: &ModeTransform,
) -> Result<Vec<RankTerm>> {
    let gamma = kernel.gamma();
    // Frequency range for the profile tables: |ξ| ≤ √d·(π/h).
    let p_max = mt.dxi() * (mt.n() as f64 / 2.0) * 3.0f64.sqrt() * 1.0001;
    let table_len = 2048;
    let (nodes, wq) = gauss_legendre_on(64, 0.0, radius);
    let m = nodes.len();

    // Given nodal factor values on the radial quadrature, tabulate
    // φ(p) = 2 ∫_0^R ρ r(ρ) cos(pρ) dρ and ψ(t) = 2π ∫_0^R s s(s) J0(ts) ds.
    let make_term = |rfac: &[f64], sfac: &[f64]| -> RankTerm {
        let phi = Profile::build(p_max, table_len, |p| {
            let mut acc = 0.0;
            for q in 0..m {
                acc += wq[q] * nodes[q] * rfac[q] * (p * nodes[q]).cos();
            }
            2.0 * acc
        });
        let psi = Profile::build(p_max, table_len, |t| {
            let mut acc = 0.0;
            for r in 0..m {
                acc += wq[r] * nodes[r] * sfac[r] * bessel_j0(t * nodes[r]);
            }
            2.0 * std::f64::consts::PI * acc
        });
        RankTerm { phi, psi }
    };

    if gamma == 1.0 {
        if let AngularKernel::Constant(b0) = kernel.angular() {
            // K(ρ, s) = 4 b0 exactly: rank 1 with constant factors √(4 b0).
            let c = (4.0 * b0).sqrt();
            let fac = vec![c; m];
            return Ok(vec![make_term(&fac, &fac)]);
        }
    }

    // Weighted SVD of K(ρ_q, s_r) in the induced L²(ρ dρ) ⊗ L²(s ds) metric.
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for q in 0..m {
        for r in 0..m {
            let rho = nodes[q];
            let s = nodes[r];
            let u2 = rho * rho + s * s;
            let cos_theta = (s * s - rho * rho) / u2;
            let k = 4.0 * kernel.b(cos_theta) * u2.powf(0.5 * (gamma - 1.0));
            mat[(q, r)] = k * (wq[q] * rho).sqrt() * (wq[r] * s).sqrt();
        }
    }
    let svd = mat.svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| KineticError::Numerical("kernel factorization failed".into()))?;
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| KineticError::Numerical("kernel factorization failed".into()))?;
    let sv = &svd.singular_values;
    let smax = sv[0];
    let mut terms = Vec::new();
    for j in 0..rank.min(m) {
        if sv[j] < 1e-13 * smax {
            break;
        }
        let scale = sv[j].sqrt();
        let rfac: Vec<f64> = (0..m)
            .map(|q| scale * u[(q, j)] / (wq[q] * nodes[q]).sqrt())
            .collect();
        let sfac: Vec<f64> = (0..m)
            .map(|r| scale * vt[(j, r)] / (wq[r] * nodes[r]).sqrt())
            .collect();
        terms.push(make_term(&rfac, &sfac));
    }
    Ok(terms)
}

/// Assemble `Q(f, g) = Q⁺ - g·R` with the scalar discrete mass closure.
pub(crate) fn assemble_collision(
    grid: &Arc<VelocityGrid>,
    gain: &[f64],
    loss: &[f64],
    g_vals: &[f64],
) -> Vec<f64> {
    let loss_part: Vec<f64> = loss.iter().zip(g_vals).map(|(&r, &g)| r * g).collect();
    let gain_mass = grid.quadrature(gain);
    let loss_mass = grid.quadrature(&loss_part);
    let scale = if gain_mass > 0.0 && loss_mass > 0.0 {
        loss_mass / gain_mass
    } else {
        1.0
    };
    gain.iter()
        .zip(&loss_part)
        .map(|(&qp, &lp)| scale * qp - lp)
        .collect()
}

/// Direct-path collision operator with the same discrete mass closure as
/// [`QplusFastPlan::collision`].
pub fn collision_direct(
    f: &Distribution,
    kernel: &KernelSpec,
    sigma: &SigmaQuadrature,
    opts: DirectOpts,
) -> Result<Vec<f64>> {
    let gain = qplus_direct_opts(f, f, kernel, sigma, opts)?;
    let loss = loss_intensity(f, kernel);
    Ok(assemble_collision(f.grid(), &gain, &loss, f.values()))
}

/// The four-term split of the Fisher-information dissipation
/// `dI/dt = -2∫ log f̃ ΔQ⁺ - 4∫ |∇√f|² R - 2∫ ∇f·∇R - ∫ |∇log f̃|² Q⁺`.
/// Terms 2 and 4 are nonpositive by construction.
#[derive(Debug, Clone, Copy)]
pub struct FisherRhs {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub total: f64,
}

/// Evaluate the Fisher dissipation split from precomputed gain and loss
/// fields (either operator path).
pub fn fisher_rhs(f: &Distribution, gain: &[f64], loss: &[f64]) -> FisherRhs {
    let grid = f.grid();
    let floored = f.floored(DEFAULT_FLOOR_REL);
    let log_f: Vec<f64> = floored.iter().map(|&x| x.ln()).collect();
    let root: Vec<f64> = f.values().iter().map(|&x| x.sqrt()).collect();

    let lap_gain = grid.laplacian(gain);
    let term1 = -2.0 * grid.inner(&log_f, &lap_gain);

    let grad_root = grid.gradient(&root);
    let mut g2 = vec![0.0; grid.len()];
    for gr in &grad_root {
        for i in 0..grid.len() {
            g2[i] += gr[i] * gr[i];
        }
    }
    let weighted: Vec<f64> = g2.iter().zip(loss).map(|(&a, &r)| a * r).collect();
    let term2 = -4.0 * grid.quadrature(&weighted);

    let grad_f = grid.gradient(f.values());
    let grad_r = grid.gradient(loss);
    let mut dot = vec![0.0; grid.len()];
    for a in 0..grid.d() {
        for i in 0..grid.len() {
            dot[i] += grad_f[a][i] * grad_r[a][i];
        }
    }
    let term3 = -2.0 * grid.quadrature(&dot);

    let grad_log = grid.gradient(&log_f);
    let mut gl2 = vec![0.0; grid.len()];
    for gr in &grad_log {
        for i in 0..grid.len() {
            gl2[i] += gr[i] * gr[i];
        }
    }
    let weighted4: Vec<f64> = gl2.iter().zip(gain).map(|(&a, &q)| a * q).collect();
    let term4 = -grid.quadrature(&weighted4);

    FisherRhs {
        term1,
        term2,
        term3,
        term4,
        total: term1 + term2 + term3 + term4,
    }
}

/// Free-function form of the fast gain (requires a precomputed plan).
pub fn qplus_fast(f: &Distribution, g: &Distribution, plan: &QplusFastPlan) -> Result<Vec<f64>> {
    plan.qplus(f, g)
}
