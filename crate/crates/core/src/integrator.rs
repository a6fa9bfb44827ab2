//! Scenario-driven time integration for both collision operators.
//!
//! The stepping core is an explicit midpoint rule with a positivity clip.
//! For the Landau equation, whose explicit stability limit scales like
//! `h²/max λ(a)`, the runner can wrap the same flux assembly in a
//! Runge–Kutta–Legendre super-step (stage count chosen per step from the
//! current diffusion stiffness) so desk-scale runs stay explicit without
//! paying the full parabolic step count.
//!
//! Two optional state-repair mechanisms are scenario flags:
//!
//! * **Balanced stepping** (`well_balanced`, default on) subtracts the
//!   collision operator evaluated on the moment-matched discrete Maxwellian
//!   `M*` of the initial data. The continuum operator annihilates `M*`, so
//!   the subtraction removes only the quadrature defect of the discrete
//!   operator and makes `M*` an exact fixed point of the scheme; without it
//!   an equilibrium state drifts at the stencil-error rate.
//! * **Conservative projection** (`conserve`) corrects mass, momentum, and
//!   energy after every step by a 5-parameter update along `{1, v, |v|²}·M*`.
//!
//! Runs are bitwise deterministic for a fixed scenario.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boltzmann::{
    assemble_collision, loss_intensity, qplus_direct_opts, AngularKernel, DirectOpts, FastOpts,
    KernelSpec, QplusFastPlan, SigmaQuadrature,
};
use crate::error::{KineticError, Result};
use crate::functionals::{
    conserved, entropy, exp_moment, fisher, moment, DiagnosticsRecord, MomentWeight,
};
use crate::grid::{make_grid, Distribution, VelocityGrid};
use crate::landau::{landau_op_unpaired, FluxScheme, LandauConvPlan, LandauFields};

fn default_true() -> bool {
    true
}

fn default_every() -> u64 {
    1
}

fn default_extras() -> Vec<ExtraColumn> {
    vec![ExtraColumn::ClippedMass]
}

fn default_dim() -> usize {
    3
}

/// Which collision operator drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Boltzmann,
    Landau,
}

/// Collision kernel parameters: hard-potential exponent and the constant
/// angular factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    /// Constant angular factor `b0`; `None` means `1/(4π)` (unit angular
    /// mass). Ignored by the Landau equation.
    #[serde(default)]
    pub b0: Option<f64>,
}

/// Velocity grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub d: usize,
    pub n: usize,
    pub lmax: f64,
}

/// One Gaussian component of a mixture state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxwellianMode {
    pub rho: f64,
    pub mean: [f64; 3],
    pub temp: f64,
}

/// Initial data menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Maxwellian {
        rho: f64,
        mean: [f64; 3],
        temp: f64,
    },
    Bimodal {
        modes: Vec<MaxwellianMode>,
    },
    /// Radial plateau `rho · normalize(1/(1+exp(sharpness(|v|-radius))))`:
    /// a flattened, sub-Gaussian state.
    Squashed {
        rho: f64,
        radius: f64,
        sharpness: f64,
    },
    /// The exactly solvable Maxwell-molecule relaxation family
    /// (`gamma = 0` runs); `k0` is the initial shape parameter in `[3/5, 1]`.
    Bkw {
        rho: f64,
        temp: f64,
        k0: f64,
    },
    FromSnapshot {
        path: String,
    },
}

/// Fixed or stability-bound-driven step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    #[default]
    Auto,
    Fixed(f64),
}

/// Fast-path tuning knobs (defaults mirror [`FastOpts`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastConfig {
    pub n_polar: Option<usize>,
    pub n_azimuth: Option<usize>,
    pub rank: Option<usize>,
    pub radius_factor: Option<f64>,
    pub mode_pad: Option<usize>,
}

impl FastConfig {
    fn to_opts(self) -> FastOpts {
        let d = FastOpts::default();
        FastOpts {
            n_polar: self.n_polar.unwrap_or(d.n_polar),
            n_azimuth: self.n_azimuth.unwrap_or(d.n_azimuth),
            rank: self.rank.unwrap_or(d.rank),
            radius_factor: self.radius_factor.unwrap_or(d.radius_factor),
            mode_pad: self.mode_pad.unwrap_or(d.mode_pad),
        }
    }
}

/// Extra diagnostics columns appended after the fixed CSV prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtraColumn {
    Step,
    EntropyAbs,
    MinValue,
    MaxValue,
    /// Mass removed by the positivity clip since the previous record.
    ClippedMass,
    /// `‖f(t) − f(0)‖_{L¹}`.
    L1Drift,
    /// `∫ f ⟨v⟩^k`.
    Moment { k: f64 },
    /// `∫ f exp(lambda ⟨v⟩^s)`.
    ExpMoment { lambda: f64, s: f64 },
    /// `4 ∫ ⟨v⟩^k |∇√f|²`.
    WeightedFisher { k: f64 },
}

impl ExtraColumn {
    pub fn column_name(&self) -> String {
        match self {
            ExtraColumn::Step => "step".into(),
            ExtraColumn::EntropyAbs => "entropy_abs".into(),
            ExtraColumn::MinValue => "min_value".into(),
            ExtraColumn::MaxValue => "max_value".into(),
            ExtraColumn::ClippedMass => "clipped_mass".into(),
            ExtraColumn::L1Drift => "l1_drift".into(),
            ExtraColumn::Moment { k } => format!("moment_{k}"),
            ExtraColumn::ExpMoment { lambda, s } => format!("exp_moment_{lambda}_{s}"),
            ExtraColumn::WeightedFisher { k } => format!("weighted_fisher_{k}"),
        }
    }
}

/// A complete, serializable description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub equation: Equation,
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub initial: InitialCondition,
    #[serde(default)]
    pub time_step: TimeStep,
    pub t_end: f64,
    /// Record diagnostics every this many steps (the initial state is always
    /// recorded).
    #[serde(default = "default_every")]
    pub diag_every: u64,
    /// Snapshot the state every this many steps; 0 means endpoints only.
    #[serde(default)]
    pub snapshot_every: u64,
    /// Project conserved moments back to their initial values after each step.
    #[serde(default)]
    pub conserve: bool,
    /// Use the separated spectral gain instead of the direct quadrature
    /// (Boltzmann only).
    #[serde(default)]
    pub fast_path: bool,
    /// Subtract the operator's defect on the moment-matched Maxwellian so
    /// that the discrete equilibrium is an exact fixed point.
    #[serde(default = "default_true")]
    pub well_balanced: bool,
    /// Optional relative state floor applied after each step; the added mass
    /// is logged together with the clip. Off by default.
    #[serde(default)]
    pub floor: Option<f64>,
    /// Direct-path σ-quadrature orders (polar, azimuth); default (8, 16).
    #[serde(default)]
    pub sigma: Option<(usize, usize)>,
    #[serde(default)]
    pub fast: Option<FastConfig>,
    /// Landau only: integrate with Runge–Kutta–Legendre super-steps instead
    /// of midpoint steps at the explicit diffusive limit.
    #[serde(default = "default_true")]
    pub super_stepping: bool,
    /// Target super-step length (Landau, auto time step); default 0.1.
    #[serde(default)]
    pub super_dt: Option<f64>,
    #[serde(default = "default_extras")]
    pub extras: Vec<ExtraColumn>,
    #[serde(default)]
    pub label: Option<String>,
}

impl Scenario {
    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let g = self.kernel.gamma;
        if !(g.is_finite() && (0.0..=1.0).contains(&g)) {
            return Err(KineticError::Scenario(format!(
                "kernel exponent gamma must lie in [0, 1], got {g}"
            )));
        }
        if let Some(b0) = self.kernel.b0 {
            if !(b0.is_finite() && b0 > 0.0) {
                return Err(KineticError::Scenario(format!("b0 must be positive, got {b0}")));
            }
        }
        if self.grid.d != 3 {
            return Err(KineticError::Scenario(format!(
                "runs are implemented for d = 3, got d = {}",
                self.grid.d
            )));
        }
        if self.grid.n < 4 {
            return Err(KineticError::Scenario(format!(
                "grid needs at least 4 points per axis, got {}",
                self.grid.n
            )));
        }
        if !(self.grid.lmax.is_finite() && self.grid.lmax > 0.0) {
            return Err(KineticError::Scenario(format!(
                "grid half-width must be positive, got {}",
                self.grid.lmax
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(KineticError::Scenario(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.diag_every == 0 {
            return Err(KineticError::Scenario("diag_every must be at least 1".into()));
        }
        if let TimeStep::Fixed(dt) = self.time_step {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(KineticError::Scenario(format!(
                    "fixed time step must be positive, got {dt}"
                )));
            }
        }
        if let Some(f) = self.floor {
            if !(f.is_finite() && (0.0..=1e-3).contains(&f)) {
                return Err(KineticError::Scenario(format!(
                    "state floor must lie in [0, 1e-3], got {f}"
                )));
            }
        }
        if let Some(dt) = self.super_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(KineticError::Scenario(format!(
                    "super_dt must be positive, got {dt}"
                )));
            }
        }
        match &self.initial {
            InitialCondition::Maxwellian { rho, temp, .. } => {
                if *rho <= 0.0 || *temp <= 0.0 {
                    return Err(KineticError::Scenario(
                        "maxwellian initial data needs positive rho and temp".into(),
                    ));
                }
            }
            InitialCondition::Bimodal { modes } => {
                if modes.is_empty() {
                    return Err(KineticError::Scenario(
                        "bimodal initial data needs at least one mode".into(),
                    ));
                }
                for m in modes {
                    if m.rho <= 0.0 || m.temp <= 0.0 {
                        return Err(KineticError::Scenario(
                            "every mixture mode needs positive rho and temp".into(),
                        ));
                    }
                }
            }
            InitialCondition::Squashed { rho, radius, sharpness } => {
                if *rho <= 0.0 || *radius <= 0.0 || *sharpness <= 0.0 {
                    return Err(KineticError::Scenario(
                        "squashed initial data needs positive rho, radius, sharpness".into(),
                    ));
                }
            }
            InitialCondition::Bkw { rho, temp, k0 } => {
                if *rho <= 0.0 || *temp <= 0.0 {
                    return Err(KineticError::Scenario(
                        "the relaxation family needs positive rho and temp".into(),
                    ));
                }
                if !(0.6..=1.0).contains(k0) {
                    return Err(KineticError::Scenario(format!(
                        "shape parameter k0 must lie in [0.6, 1] for positivity, got {k0}"
                    )));
                }
                if self.equation != Equation::Boltzmann || self.kernel.gamma != 0.0 {
                    return Err(KineticError::Scenario(
                        "the exact relaxation family is only valid for the Boltzmann \
                         equation at gamma = 0"
                            .into(),
                    ));
                }
            }
            InitialCondition::FromSnapshot { .. } => {}
        }
        Ok(())
    }

    /// The kernel with defaults applied.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        match self.kernel.b0 {
            Some(b0) => KernelSpec::new(3, self.kernel.gamma, AngularKernel::Constant(b0)),
            None => KernelSpec::constant_unit_l1(3, self.kernel.gamma),
        }
    }
}

/// Evaluate the exact Maxwell-molecule relaxation state at shape `k`.
pub fn bkw_values(grid: &VelocityGrid, rho: f64, temp: f64, k: f64) -> Vec<f64> {
    let norm = rho / (2.0 * std::f64::consts::PI * k * temp).powf(1.5);
    let c0 = (5.0 * k - 3.0) / (2.0 * k);
    let c2 = (1.0 - k) / (2.0 * k * k);
    (0..grid.len())
        .map(|flat| {
            let x = grid.speed_squared()[flat] / (2.0 * k * temp);
            norm * (-x).exp() * (c0 + c2 * grid.speed_squared()[flat] / temp)
        })
        .collect()
}

/// Build the initial distribution of a scenario (snapshot loading is wired
/// through the io module).
pub fn build_initial(scenario: &Scenario, grid: &Arc<VelocityGrid>) -> Result<Distribution> {
    match &scenario.initial {
        InitialCondition::Maxwellian { rho, mean, temp } => {
            Distribution::maxwellian(grid.clone(), *rho, *mean, *temp)
        }
        InitialCondition::Bimodal { modes } => {
            let mut vals = vec![0.0; grid.len()];
            for m in modes {
                let comp = Distribution::maxwellian(grid.clone(), m.rho, m.mean, m.temp)?;
                for (v, c) in vals.iter_mut().zip(comp.values()) {
                    *v += c;
                }
            }
            Distribution::new(grid.clone(), vals, "bimodal")
        }
        InitialCondition::Squashed { rho, radius, sharpness } => {
            let raw: Vec<f64> = (0..grid.len())
                .map(|flat| {
                    let r = grid.speed_squared()[flat].sqrt();
                    1.0 / (1.0 + (sharpness * (r - radius)).exp())
                })
                .collect();
            let mass = grid.quadrature(&raw);
            if mass <= 0.0 {
                return Err(KineticError::Scenario(
                    "squashed initial data has no mass on this grid".into(),
                ));
            }
            let scale = rho / mass;
            Distribution::new(
                grid.clone(),
                raw.into_iter().map(|x| scale * x).collect(),
                "squashed",
            )
        }
        InitialCondition::Bkw { rho, temp, k0 } => {
            Distribution::new(grid.clone(), bkw_values(grid, *rho, *temp, *k0), "bkw")
        }
        InitialCondition::FromSnapshot { path } => {
            let (_, dist) = crate::io::read_snapshot_distribution(std::path::Path::new(path))?;
            if dist.grid().as_ref() != grid.as_ref() {
                return Err(KineticError::Scenario(
                    "snapshot grid does not match the scenario grid".into(),
                ));
            }
            Ok(dist)
        }
    }
}

/// Sampled Maxwellian whose *discrete* mass, momentum, and energy match the
/// given targets (Newton iteration on the five parameters).
pub fn discrete_maxwellian(
    grid: &Arc<VelocityGrid>,
    mass: f64,
    momentum: [f64; 3],
    energy: f64,
) -> Result<Distribution> {
    if !(mass > 0.0) {
        return Err(KineticError::Numerical(format!(
            "cannot match a Maxwellian to nonpositive mass {mass}"
        )));
    }
    let mean0 = [momentum[0] / mass, momentum[1] / mass, momentum[2] / mass];
    let speed0 = mean0[0] * mean0[0] + mean0[1] * mean0[1] + mean0[2] * mean0[2];
    let temp0 = (energy / mass - speed0) / 3.0;
    if !(temp0.is_finite() && temp0 > 0.0) {
        return Err(KineticError::Numerical(format!(
            "cannot match a Maxwellian: implied temperature {temp0} is not positive"
        )));
    }
    // Parameters p = (rho, u1, u2, u3, T); residual = discrete moments - targets.
    let mut p = [mass, mean0[0], mean0[1], mean0[2], temp0];
    let targets = [mass, momentum[0], momentum[1], momentum[2], energy];
    let scale = [
        mass,
        mass.max(momentum[0].abs()),
        mass.max(momentum[1].abs()),
        mass.max(momentum[2].abs()),
        energy.abs().max(mass),
    ];
    let moments_of = |p: &[f64; 5]| -> Result<[f64; 5]> {
        let m = Distribution::maxwellian(grid.clone(), p[0], [p[1], p[2], p[3]], p[4])?;
        let (mm, mp, me) = conserved(&m);
        Ok([mm, mp[0], mp[1], mp[2], me])
    };
    for _ in 0..40 {
        let cur = moments_of(&p)?;
        let res: Vec<f64> = (0..5).map(|i| cur[i] - targets[i]).collect();
        let worst = (0..5).map(|i| res[i].abs() / scale[i]).fold(0.0, f64::max);
        if worst <= 1e-13 {
            return Distribution::maxwellian(grid.clone(), p[0], [p[1], p[2], p[3]], p[4]);
        }
        // Forward-difference Jacobian.
        let mut jac = nalgebra::Matrix5::<f64>::zeros();
        for j in 0..5 {
            let mut pj = p;
            let eps = 1e-7 * p[j].abs().max(1e-7);
            pj[j] += eps;
            if j == 4 && pj[4] <= 0.0 {
                pj[4] = p[4] * 1.0000001;
            }
            let pert = moments_of(&pj)?;
            for i in 0..5 {
                jac[(i, j)] = (pert[i] - cur[i]) / (pj[j] - p[j]);
            }
        }
        let rhs = nalgebra::Vector5::from_iterator(res.iter().copied());
        let delta = jac.lu().solve(&rhs).ok_or_else(|| {
            KineticError::Numerical("singular Jacobian while matching the Maxwellian".into())
        })?;
        for j in 0..5 {
            p[j] -= delta[j];
        }
        if p[0] <= 0.0 || p[4] <= 0.0 {
            return Err(KineticError::Numerical(
                "Maxwellian matching left the admissible parameter range".into(),
            ));
        }
    }
    Err(KineticError::Numerical(
        "Maxwellian moment matching did not converge in 40 iterations".into(),
    ))
}

/// Largest stable explicit step for the Boltzmann equation, `0.5 / max R`.
pub fn stable_dt_boltzmann(f: &Distribution, kernel: &KernelSpec) -> Result<f64> {
    let r = loss_intensity(f, kernel);
    let max = r.iter().fold(0.0f64, |m, &x| m.max(x));
    if !(max > 0.0) {
        return Err(KineticError::Numerical(
            "stability bound undefined: the loss intensity vanishes (zero state)".into(),
        ));
    }
    Ok(0.5 / max)
}

/// Largest stable explicit step for the Landau equation, `0.25 h² / max λ(a)`.
pub fn stable_dt_landau(f: &Distribution, fields: &LandauFields) -> Result<f64> {
    let lmax = fields.max_eigenvalue();
    if !(lmax > 0.0) {
        return Err(KineticError::Numerical(
            "stability bound undefined: the diffusion matrix vanishes (zero state)".into(),
        ));
    }
    let h = f.grid().h();
    Ok(0.25 * h * h / lmax)
}

/// Smallest odd Runge–Kutta–Legendre stage count whose stability extension
/// `(s² + s − 2)/4` covers the requested ratio.
pub fn rkl_stage_count(ratio: f64) -> usize {
    let r = ratio.max(1.0);
    let mut s = ((16.0 * r + 9.0).sqrt() - 1.0) / 2.0;
    s = s.ceil().max(3.0);
    let mut s = s as usize;
    if s % 2 == 0 {
        s += 1;
    }
    s
}

/// Why a run stopped early.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbortInfo {
    pub step: u64,
    pub time: f64,
    pub reason: String,
}

/// One stored state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub time: f64,
    pub label: String,
    pub values: Vec<f64>,
}

/// Everything a run produces, in memory.
#[derive(Debug)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub grid: Arc<VelocityGrid>,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
    pub aborted: Option<AbortInfo>,
    pub steps_taken: u64,
    pub clipped_total: f64,
}

impl Trajectory {
    /// The last usable state (final state, or the last good one on abort).
    pub fn final_values(&self) -> &[f64] {
        &self
            .snapshots
            .last()
            .expect("a trajectory always stores at least the initial snapshot")
            .values
    }
}

enum OperatorPlan {
    BoltzmannDirect {
        kernel: KernelSpec,
        sigma: SigmaQuadrature,
        opts: DirectOpts,
    },
    BoltzmannFast(Box<QplusFastPlan>),
    Landau(LandauConvPlan),
}

/// Restore the five conserved moments exactly with the multiplicative update
/// `f ← f · (1 + Σ c_k ψ_k)`, `ψ = (1, v₁, v₂, v₃, |v|²)`. The update is
/// linear in `c`, so one solve against the state-weighted Gram matrix
/// `G_kl = ∫ f ψ_k ψ_l` lands the moments exactly; the multiplier stays
/// positive whenever the defect is small, so positivity is preserved without
/// a post-clip. Returns the (normally zero) mass removed by clamping
/// negative multipliers.
fn conservative_project(
    grid: &VelocityGrid,
    vals: &mut [f64],
    targets: &(f64, [f64; 3], f64),
) -> Result<f64> {
    let (m, p, e) = moments_of_values(grid, vals);
    let defect = nalgebra::Vector5::new(
        targets.0 - m,
        targets.1[0] - p[0],
        targets.1[1] - p[1],
        targets.1[2] - p[2],
        targets.2 - e,
    );
    let vsq = grid.speed_squared();
    let psi = |flat: usize, k: usize| -> f64 {
        match k {
            0 => 1.0,
            4 => vsq[flat],
            axis => grid.coords(flat)[axis - 1],
        }
    };
    let mut gram = nalgebra::Matrix5::<f64>::zeros();
    let mut integrand = vec![0.0; vals.len()];
    for k in 0..5 {
        for l in k..5 {
            for (flat, t) in integrand.iter_mut().enumerate() {
                *t = vals[flat] * psi(flat, k) * psi(flat, l);
            }
            let g = grid.quadrature(&integrand);
            gram[(k, l)] = g;
            gram[(l, k)] = g;
        }
    }
    let c = gram.lu().solve(&defect).ok_or_else(|| {
        KineticError::Numerical(
            "conservative projection failed: degenerate state moments".into(),
        )
    })?;
    let mut clamped = 0.0;
    for (flat, v) in vals.iter_mut().enumerate() {
        let mut mult = 1.0;
        for k in 0..5 {
            mult += c[k] * psi(flat, k);
        }
        if mult < 0.0 {
            clamped += *v * mult;
            mult = 0.0;
        }
        *v *= mult;
    }
    Ok(-clamped * grid.cell_volume())
}

fn moments_of_values(grid: &VelocityGrid, vals: &[f64]) -> (f64, [f64; 3], f64) {
    let mass = grid.quadrature(vals);
    let mut p = [0.0; 3];
    for (axis, pa) in p.iter_mut().enumerate() {
        let integrand: Vec<f64> = (0..grid.len())
            .map(|flat| vals[flat] * grid.coords(flat)[axis])
            .collect();
        *pa = grid.quadrature(&integrand);
    }
    let integrand: Vec<f64> = vals
        .iter()
        .zip(grid.speed_squared())
        .map(|(&x, &w)| x * w)
        .collect();
    (mass, p, grid.quadrature(&integrand))
}

/// Clip negative values in place; returns the clipped mass (positive).
fn clip_negatives(grid: &VelocityGrid, vals: &mut [f64]) -> f64 {
    let mut removed = 0.0;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            removed -= *v;
            *v = 0.0;
        }
    }
    removed * grid.cell_volume()
}

/// Driver for one scenario.
pub struct Runner {
    scenario: Scenario,
    grid: Arc<VelocityGrid>,
    op: OperatorPlan,
    state: Distribution,
    time: f64,
    step_index: u64,
    /// Moment-matched Maxwellian used by balanced stepping.
    m_star: Option<Distribution>,
    /// Cached collision defect on `M*` (Boltzmann balanced stepping).
    qc_star: Option<Vec<f64>>,
    targets: (f64, [f64; 3], f64),
    initial_values: Vec<f64>,
    clipped_since_record: f64,
    clipped_total: f64,
    /// Landau super-stepping memory: fields at the previous step start and
    /// that step's length, for midpoint extrapolation of the coefficients.
    prev_fields: Option<(LandauFields, f64)>,
    /// Number of super-steps that fell back to un-extrapolated coefficients.
    pub extrapolation_fallbacks: u64,
}

impl Runner {
    pub fn new(scenario: Scenario) -> Result<Runner> {
        scenario.validate()?;
        let grid = make_grid(scenario.grid.d, scenario.grid.n, scenario.grid.lmax)?;
        let state = build_initial(&scenario, &grid)?;
        let op = match scenario.equation {
            Equation::Boltzmann => {
                let kernel = scenario.kernel_spec()?;
                if scenario.fast_path {
                    let opts = scenario.fast.map(FastConfig::to_opts).unwrap_or_default();
                    OperatorPlan::BoltzmannFast(Box::new(QplusFastPlan::new(
                        &grid, &kernel, opts,
                    )?))
                } else {
                    let (np, na) = scenario.sigma.unwrap_or((8, 16));
                    OperatorPlan::BoltzmannDirect {
                        kernel,
                        sigma: SigmaQuadrature::new(np, na)?,
                        opts: DirectOpts::default(),
                    }
                }
            }
            Equation::Landau => {
                OperatorPlan::Landau(LandauConvPlan::new(&grid, scenario.kernel.gamma)?)
            }
        };
        let targets = conserved(&state);
        let m_star = if scenario.well_balanced {
            Some(discrete_maxwellian(&grid, targets.0, targets.1, targets.2)?)
        } else {
            None
        };
        let qc_star = match (&op, scenario.well_balanced, &m_star) {
            (OperatorPlan::BoltzmannDirect { kernel, sigma, opts }, true, Some(m)) => {
                let gain = qplus_direct_opts(m, m, kernel, sigma, *opts)?;
                let loss = loss_intensity(m, kernel);
                Some(assemble_collision(&grid, &gain, &loss, m.values()))
            }
            (OperatorPlan::BoltzmannFast(plan), true, Some(m)) => Some(plan.collision(m, m)?),
            _ => None,
        };
        let initial_values = state.values().to_vec();
        Ok(Runner {
            scenario,
            grid,
            op,
            state,
            time: 0.0,
            step_index: 0,
            m_star,
            qc_star,
            targets,
            initial_values,
            clipped_since_record: 0.0,
            clipped_total: 0.0,
            prev_fields: None,
            extrapolation_fallbacks: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn state(&self) -> &Distribution {
        &self.state
    }

    /// The stability bound at the current state.
    pub fn stable_dt(&self) -> Result<f64> {
        match &self.op {
            OperatorPlan::BoltzmannDirect { kernel, .. } => {
                stable_dt_boltzmann(&self.state, kernel)
            }
            OperatorPlan::BoltzmannFast(plan) => stable_dt_boltzmann(&self.state, plan.kernel()),
            OperatorPlan::Landau(plan) => {
                let fields = plan.fields(&self.state)?;
                stable_dt_landau(&self.state, &fields)
            }
        }
    }

    /// Right-hand side at an arbitrary state (balanced if configured).
    fn rhs(&self, f: &Distribution) -> Result<Vec<f64>> {
        let mut q = match &self.op {
            OperatorPlan::BoltzmannDirect { kernel, sigma, opts } => {
                let gain = qplus_direct_opts(f, f, kernel, sigma, *opts)?;
                let loss = loss_intensity(f, kernel);
                assemble_collision(&self.grid, &gain, &loss, f.values())
            }
            OperatorPlan::BoltzmannFast(plan) => plan.collision(f, f)?,
            OperatorPlan::Landau(plan) => {
                let fields = plan.fields(f)?;
                let mut q = landau_op_unpaired(f, &fields, FluxScheme::Exponential)?;
                if let (true, Some(m)) = (self.scenario.well_balanced, &self.m_star) {
                    let defect = landau_op_unpaired(m, &fields, FluxScheme::Exponential)?;
                    for (x, d) in q.iter_mut().zip(&defect) {
                        *x -= d;
                    }
                }
                return Ok(q);
            }
        };
        if let Some(qc) = &self.qc_star {
            for (x, d) in q.iter_mut().zip(qc) {
                *x -= d;
            }
        }
        Ok(q)
    }

    fn repair_state(&mut self, vals: &mut Vec<f64>) -> Result<()> {
        let clipped = clip_negatives(&self.grid, vals);
        let mut surgery = clipped;
        if let Some(floor_rel) = self.scenario.floor {
            if floor_rel > 0.0 {
                let max = vals.iter().fold(0.0f64, |m, &x| m.max(x));
                let floor = floor_rel * max;
                let mut added = 0.0;
                for v in vals.iter_mut() {
                    if *v < floor {
                        added += floor - *v;
                        *v = floor;
                    }
                }
                surgery += added * self.grid.cell_volume();
            }
        }
        if self.scenario.conserve {
            surgery += conservative_project(&self.grid, vals, &self.targets)?;
        }
        self.clipped_since_record += surgery;
        self.clipped_total += surgery;
        Ok(())
    }

    fn commit(&mut self, vals: Vec<f64>, dt: f64) -> Result<()> {
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(KineticError::Numerical(format!(
                "state became non-finite during step {} (t = {})",
                self.step_index, self.time
            )));
        }
        self.state = Distribution::new(self.grid.clone(), vals, self.state.label())?;
        self.time += dt;
        self.step_index += 1;
        Ok(())
    }

    /// One explicit midpoint step. `dt` must respect the stability bound.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let bound = self.stable_dt()?;
        if dt > bound * (1.0 + 1e-9) {
            return Err(KineticError::Param(format!(
                "step {dt} exceeds the stability bound {bound}"
            )));
        }
        self.step_unchecked(dt)
    }

    fn step_unchecked(&mut self, dt: f64) -> Result<()> {
        let k1 = self.rhs(&self.state)?;
        let mut mid: Vec<f64> = self
            .state
            .values()
            .iter()
            .zip(&k1)
            .map(|(&f, &q)| f + 0.5 * dt * q)
            .collect();
        for v in mid.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if mid.iter().any(|x| !x.is_finite()) {
            return Err(KineticError::Numerical(format!(
                "midpoint stage became non-finite during step {} (t = {})",
                self.step_index, self.time
            )));
        }
        let mid = Distribution::new(self.grid.clone(), mid, "midpoint-stage")?;
        let k2 = self.rhs(&mid)?;
        let mut new_vals: Vec<f64> = self
            .state
            .values()
            .iter()
            .zip(&k2)
            .map(|(&f, &q)| f + dt * q)
            .collect();
        self.repair_state(&mut new_vals)?;
        self.commit(new_vals, dt)
    }

    /// One Runge–Kutta–Legendre super-step (Landau only): the coefficient
    /// fields are frozen for the whole step, extrapolated to the step
    /// midpoint from the previous step's fields when available.
    pub fn super_step(&mut self, dt: f64) -> Result<()> {
        let plan = match &self.op {
            OperatorPlan::Landau(plan) => plan,
            _ => {
                return Err(KineticError::Param(
                    "super-stepping applies to the Landau equation only".into(),
                ))
            }
        };
        let fields_now = plan.fields(&self.state)?;
        let fields = match &self.prev_fields {
            Some((prev, prev_dt)) => {
                let theta = 0.5 * dt / prev_dt;
                let ext = fields_now.extrapolated(prev, theta)?;
                if ext.eigenvalue_floor() >= -1e-6 * fields_now.max_eigenvalue() {
                    ext
                } else {
                    self.extrapolation_fallbacks += 1;
                    fields_now.extrapolated(prev, 0.0)?
                }
            }
            None => fields_now.extrapolated(&fields_now, 0.0)?,
        };
        // Forward-Euler limit of the frozen-coefficient operator: the
        // diffusive bound plus the advective (upwinded drift) bound.
        let dt_diff = stable_dt_landau(&self.state, &fields)?;
        let h = self.grid.h();
        let bmax = fields
            .b
            .iter()
            .flat_map(|bi| bi.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let dt_explicit = if bmax > 0.0 {
            dt_diff.min(0.25 * h / bmax)
        } else {
            dt_diff
        };
        let stages = rkl_stage_count(1.05 * dt / dt_explicit);
        let correction: Option<Vec<f64>> =
            if let (true, Some(m)) = (self.scenario.well_balanced, &self.m_star) {
                Some(landau_op_unpaired(m, &fields, FluxScheme::Exponential)?)
            } else {
                None
            };
        let apply = |y: &[f64]| -> Result<Vec<f64>> {
            // Stage iterates may dip slightly negative; evaluate the flux on
            // the clipped copy (every flux has zero discrete mass, so the
            // stage recurrence keeps the raw iterates and stays mass-exact).
            let clipped: Vec<f64> = y.iter().map(|&x| x.max(0.0)).collect();
            let dist = Distribution::new(self.grid.clone(), clipped, "rkl-stage")?;
            let mut q = landau_op_unpaired(&dist, &fields, FluxScheme::Exponential)?;
            if let Some(c) = &correction {
                for (x, d) in q.iter_mut().zip(c) {
                    *x -= d;
                }
            }
            Ok(q)
        };

        let s = stages as f64;
        let w1 = 4.0 / (s * s + s - 2.0);
        let b = |j: usize| -> f64 {
            if j <= 2 {
                1.0 / 3.0
            } else {
                let jf = j as f64;
                (jf * jf + jf - 2.0) / (2.0 * jf * (jf + 1.0))
            }
        };
        let y0 = self.state.values().to_vec();
        let f0 = apply(&y0)?;
        let mut yjm1: Vec<f64> = y0
            .iter()
            .zip(&f0)
            .map(|(&y, &f)| y + (b(1) * w1) * dt * f)
            .collect();
        let mut yjm2 = y0.clone();
        for j in 2..=stages {
            let jf = j as f64;
            let bj = b(j);
            let mu = (2.0 * jf - 1.0) / jf * bj / b(j - 1);
            let nu = -(jf - 1.0) / jf * bj / b(j - 2);
            let mu_t = mu * w1;
            let gamma_t = -(1.0 - b(j - 1)) * mu_t;
            let fy = apply(&yjm1)?;
            let mut ynew = vec![0.0; y0.len()];
            let base = 1.0 - mu - nu;
            for i in 0..y0.len() {
                ynew[i] = mu * yjm1[i]
                    + nu * yjm2[i]
                    + base * y0[i]
                    + dt * (mu_t * fy[i] + gamma_t * f0[i]);
            }
            yjm2 = std::mem::replace(&mut yjm1, ynew);
        }
        let mut new_vals = yjm1;
        self.repair_state(&mut new_vals)?;
        self.commit(new_vals, dt)?;
        self.prev_fields = Some((fields_now, dt));
        Ok(())
    }

    fn record(&mut self) -> DiagnosticsRecord {
        let f = &self.state;
        let (mass, momentum, energy) = conserved(f);
        let (ent, ent_abs) = entropy(f, 0.0);
        let fis = fisher(f, 0.0);
        let min_value = f.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let max_value = f.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let clipped = self.clipped_since_record;
        let extras: Vec<f64> = self
            .scenario
            .extras
            .iter()
            .map(|e| match e {
                ExtraColumn::Step => self.step_index as f64,
                ExtraColumn::EntropyAbs => ent_abs,
                ExtraColumn::MinValue => min_value,
                ExtraColumn::MaxValue => max_value,
                ExtraColumn::ClippedMass => clipped,
                ExtraColumn::L1Drift => {
                    let diff: Vec<f64> = f
                        .values()
                        .iter()
                        .zip(&self.initial_values)
                        .map(|(&a, &b)| (a - b).abs())
                        .collect();
                    self.grid.quadrature(&diff)
                }
                ExtraColumn::Moment { k } => {
                    moment(f, *k, MomentWeight::Japanese).unwrap_or(f64::NAN)
                }
                ExtraColumn::ExpMoment { lambda, s } => {
                    exp_moment(f, *lambda, *s).unwrap_or(f64::NAN)
                }
                ExtraColumn::WeightedFisher { k } => fisher(f, *k),
            })
            .collect();
        self.clipped_since_record = 0.0;
        DiagnosticsRecord {
            step: self.step_index,
            time: self.time,
            mass,
            momentum,
            energy,
            entropy: ent,
            entropy_abs: ent_abs,
            fisher: fis,
            min_value,
            max_value,
            clipped_mass: clipped,
            extras,
        }
    }

    fn snapshot(&self, label: &str) -> Snapshot {
        Snapshot {
            step: self.step_index,
            time: self.time,
            label: label.to_string(),
            values: self.state.values().to_vec(),
        }
    }

    /// Integrate to `t_end`. Never fails: numerical trouble ends the
    /// trajectory early with `aborted` set and the last good state stored.
    pub fn run(mut self) -> Trajectory {
        let mut records = Vec::new();
        let mut snapshots = Vec::new();
        let mut aborted = None;
        records.push(self.record());
        snapshots.push(self.snapshot("initial"));
        let t_end = self.scenario.t_end;
        let landau_super =
            self.scenario.equation == Equation::Landau && self.scenario.super_stepping;
        while self.time < t_end * (1.0 - 1e-12) {
            let remaining = t_end - self.time;
            let result = if landau_super {
                let target = match self.scenario.time_step {
                    TimeStep::Fixed(dt) => dt,
                    TimeStep::Auto => self.scenario.super_dt.unwrap_or(0.1),
                };
                self.super_step(target.min(remaining))
            } else {
                match self.scenario.time_step {
                    TimeStep::Fixed(dt) => self.step(dt.min(remaining)),
                    TimeStep::Auto => match self.stable_dt() {
                        Ok(bound) => self.step_unchecked((0.9 * bound).min(remaining)),
                        Err(e) => Err(e),
                    },
                }
            };
            match result {
                Ok(()) => {
                    if self.step_index % self.scenario.diag_every == 0 {
                        records.push(self.record());
                    }
                    if self.scenario.snapshot_every > 0
                        && self.step_index % self.scenario.snapshot_every == 0
                    {
                        snapshots.push(self.snapshot("step"));
                    }
                }
                Err(e) => {
                    aborted = Some(AbortInfo {
                        step: self.step_index,
                        time: self.time,
                        reason: e.to_string(),
                    });
                    snapshots.push(self.snapshot("abort-last-good"));
                    break;
                }
            }
        }
        if aborted.is_none() {
            snapshots.push(self.snapshot("final"));
        }
        Trajectory {
            scenario: self.scenario,
            grid: self.grid,
            records,
            snapshots,
            aborted,
            steps_taken: self.step_index,
            clipped_total: self.clipped_total,
        }
    }
}
