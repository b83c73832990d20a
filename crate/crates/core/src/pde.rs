//! Right-hand side and time stepping of the rescaled genotype-density equation
//!
//! ```text
//! ε ∂t n = (r/2) [ρ^Y(x) ρ^X(y) / ρ + n] − (m(x,y) + κ ρ) n
//! ```
//!
//! The one-locus diploid reading (m̃ = m − r/2, r̃ = r/2) is the same operator
//! after substitution, so both modes share one implementation; the mode only
//! drives which invariants are checked.

use thiserror::Error;

use crate::expr::SelectionFn;
use crate::grid::{Field2D, GridError, GridSpec, MarginalKernel, Marginals};

/// Values below this fraction of the current maximum are raised to it after
/// every step.
pub const POSITIVITY_FLOOR_REL: f64 = 1e-250;

pub const DEFAULT_CFL: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("state error: {0}")]
    State(String),
    #[error("stability error at t = {t}: {message}")]
    Stability { t: f64, message: String },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ploidy {
    #[default]
    Haploid,
    Diploid,
}

impl Ploidy {
    pub fn as_str(self) -> &'static str {
        match self {
            Ploidy::Haploid => "haploid",
            Ploidy::Diploid => "diploid",
        }
    }
}

impl std::str::FromStr for Ploidy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "haploid" => Ok(Ploidy::Haploid),
            "diploid" => Ok(Ploidy::Diploid),
            other => Err(format!("unknown mode '{other}' (expected haploid|diploid)")),
        }
    }
}

/// Model constants and the bounds derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub r: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub mode: Ploidy,
    /// Grid surrogate of ‖m‖∞.
    pub sup_m: f64,
    /// (r − ‖m‖∞)/κ
    pub rho_minus: f64,
    /// r/κ
    pub rho_plus: f64,
    /// 1 − 4‖m‖∞/r, the largest admissible lower ν bound.
    pub nu_m: f64,
    /// 1 + 4‖m‖∞/r, the smallest admissible upper ν bound.
    pub nu_big_m: f64,
    /// r − 2‖m‖∞, the relaxation rate of the negative part of dρ/dt.
    pub delta: f64,
}

impl ModelParams {
    pub fn new(r: f64, kappa: f64, epsilon: f64, mode: Ploidy, sup_m: f64) -> Result<Self, PdeError> {
        for (name, v) in [("r", r), ("kappa", kappa), ("epsilon", epsilon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PdeError::Params(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(sup_m.is_finite() && sup_m >= 0.0) {
            return Err(PdeError::Params(format!("sup m must be finite and nonnegative, got {sup_m}")));
        }
        Ok(ModelParams {
            r,
            kappa,
            epsilon,
            mode,
            sup_m,
            rho_minus: (r - sup_m) / kappa,
            rho_plus: r / kappa,
            nu_m: 1.0 - 4.0 * sup_m / r,
            nu_big_m: 1.0 + 4.0 * sup_m / r,
            delta: r - 2.0 * sup_m,
        })
    }

    pub fn for_selection(r: f64, kappa: f64, epsilon: f64, mode: Ploidy, m: &SelectionFn) -> Result<Self, PdeError> {
        Self::new(r, kappa, epsilon, mode, m.sup_m_on_grid)
    }

    /// 4‖m‖∞ < r
    pub fn h1(&self) -> bool {
        4.0 * self.sup_m < self.r
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, PdeError> {
        Self::new(self.r, self.kappa, epsilon, self.mode, self.sup_m)
    }

    /// Default initial mass: midpoint of the admissible interval, with the
    /// lower end clipped at zero when (H1) fails badly.
    pub fn default_target_mass(&self) -> f64 {
        0.5 * (self.rho_minus.max(0.0) + self.rho_plus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub x0: f64,
    pub y0: f64,
    pub weight: f64,
}

impl Bump {
    pub fn new(x0: f64, y0: f64) -> Self {
        Bump { x0, y0, weight: 1.0 }
    }
}

/// Sum of Gaussian bumps `w exp(−|z − z₀|²/ε)/ε`, rescaled to a target mass.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub bumps: Vec<Bump>,
    pub target_mass: Option<f64>,
}

impl InitialCondition {
    pub fn single(x0: f64, y0: f64) -> Self {
        InitialCondition { bumps: vec![Bump::new(x0, y0)], target_mass: None }
    }

    pub fn resolved_mass(&self, p: &ModelParams) -> f64 {
        self.target_mass.unwrap_or_else(|| p.default_target_mass())
    }

    /// The unnormalized bump sum on the grid.
    pub fn raw_field(&self, grid: &GridSpec, epsilon: f64) -> Field2D {
        let bumps = &self.bumps;
        Field2D::from_fn(grid, |x, y| {
            bumps
                .iter()
                .map(|b| b.weight * (-((x - b.x0).powi(2) + (y - b.y0).powi(2)) / epsilon).exp() / epsilon)
                .sum()
        })
    }

    pub fn build(&self, grid: &GridSpec, p: &ModelParams) -> Result<Field2D, PdeError> {
        if self.bumps.is_empty() {
            return Err(PdeError::Params("initial condition needs at least one bump".into()));
        }
        for b in &self.bumps {
            if !(b.weight.is_finite() && b.weight > 0.0) || !b.x0.is_finite() || !b.y0.is_finite() {
                return Err(PdeError::Params(format!("invalid bump {b:?}")));
            }
        }
        let target = self.resolved_mass(p);
        if !(target.is_finite() && target > 0.0) {
            return Err(PdeError::Params(format!("target mass must be positive, got {target}")));
        }
        let mut n = self.raw_field(grid, p.epsilon);
        let mass = crate::grid::quad2(&n);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(PdeError::State(format!("initial bumps have no mass on the grid ({mass})")));
        }
        let scale = target / mass;
        for v in &mut n.values {
            *v *= scale;
        }
        apply_floor(&mut n.values);
        Ok(n)
    }
}

/// Raises every value below `POSITIVITY_FLOOR_REL · max` to that floor.
/// Returns the number of nodes changed.
pub fn apply_floor(values: &mut [f64]) -> u64 {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let floor = POSITIVITY_FLOOR_REL * max;
    let mut count = 0;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
            count += 1;
        }
    }
    count
}

/// Density snapshot with its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub n: Field2D,
    pub marginals: Marginals,
    /// Cumulative count of node values raised to the positivity floor.
    pub floor_activations: u64,
}

impl SimState {
    pub fn new(t: f64, n: Field2D) -> Self {
        let marginals = crate::grid::marginals(&n);
        SimState { t, n, marginals, floor_activations: 0 }
    }

    pub fn initial(ic: &InitialCondition, grid: &GridSpec, p: &ModelParams) -> Result<Self, PdeError> {
        Ok(Self::new(0.0, ic.build(grid, p)?))
    }

    pub fn rho(&self) -> f64 {
        self.marginals.rho
    }

    pub fn grid(&self) -> &GridSpec {
        &self.n.grid
    }
}

/// Largest stable step: `cfl · ε / (r(1+ν_cap)/2 + sup m + κ ρ₀⁺)` with
/// ν_cap = ν_M when (H1) holds and 2 otherwise.
pub fn dt_stable_with(p: &ModelParams, m: &SelectionFn, cfl: f64) -> f64 {
    let nu_cap = if p.h1() { p.nu_big_m } else { 2.0 };
    cfl * p.epsilon / (p.r * (1.0 + nu_cap) / 2.0 + m.sup_m_on_grid + p.kappa * p.rho_plus)
}

pub fn dt_stable(p: &ModelParams, m: &SelectionFn) -> f64 {
    dt_stable_with(p, m, DEFAULT_CFL)
}

/// RK4 integrator holding the scratch buffers for one grid.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    m: &'a SelectionFn,
    p: &'a ModelParams,
    kernel: MarginalKernel,
    rho_x: Vec<f64>,
    rho_y: Vec<f64>,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: &GridSpec, m: &'a SelectionFn, p: &'a ModelParams) -> Result<Self, PdeError> {
        if m.grid() != grid {
            return Err(PdeError::Params("selection function is bound to a different grid".into()));
        }
        let len = grid.len();
        Ok(Stepper {
            m,
            p,
            kernel: MarginalKernel::new(grid),
            rho_x: vec![0.0; grid.ny],
            rho_y: vec![0.0; grid.nx],
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            stage: vec![0.0; len],
        })
    }

    /// ∂t n for the values `n`, written into `out`.
    fn eval_rhs(&mut self, n: &[f64], out_slot: usize) -> Result<(), PdeError> {
        let rho = self.kernel.compute_into(n, &mut self.rho_x, &mut self.rho_y);
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(PdeError::State(format!("total mass must be positive and finite, got {rho}")));
        }
        let half_r = 0.5 * self.p.r;
        let inv_eps = 1.0 / self.p.epsilon;
        let repro = half_r / rho;
        let kr = self.p.kappa * rho;
        let ny = self.rho_x.len();
        let mv = self.m.node_values();
        let out = &mut self.k[out_slot];
        for (i, ry) in self.rho_y.iter().enumerate() {
            let base = i * ny;
            for (j, rx) in self.rho_x.iter().enumerate() {
                let k = base + j;
                // ρ^Y ρ^X first: the product commutes exactly, keeping symmetric fields symmetric.
                out[k] = inv_eps * (repro * (ry * rx) + (half_r - mv[k] - kr) * n[k]);
            }
        }
        Ok(())
    }

    pub fn rhs(&mut self, n: &Field2D) -> Result<Field2D, PdeError> {
        self.eval_rhs(&n.values, 0)?;
        let out = self.k[0].clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::State("right-hand side is not finite".into()));
        }
        Ok(Field2D { grid: n.grid.clone(), values: out })
    }

    pub fn step(&mut self, s: &SimState, dt: f64) -> Result<SimState, PdeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PdeError::Params(format!("dt must be positive, got {dt}")));
        }
        let n0 = &s.n.values;
        self.eval_rhs(n0, 0)?;
        for (st, (a, k)) in self.stage.iter_mut().zip(n0.iter().zip(&self.k[0])) {
            *st = a + 0.5 * dt * k;
        }
        let stage = std::mem::take(&mut self.stage);
        self.eval_rhs(&stage, 1)?;
        let mut stage = stage;
        for (st, (a, k)) in stage.iter_mut().zip(n0.iter().zip(&self.k[1])) {
            *st = a + 0.5 * dt * k;
        }
        self.eval_rhs(&stage, 2)?;
        for (st, (a, k)) in stage.iter_mut().zip(n0.iter().zip(&self.k[2])) {
            *st = a + dt * k;
        }
        self.eval_rhs(&stage, 3)?;
        self.stage = stage;

        let sixth = dt / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        let mut next: Vec<f64> = (0..n0.len())
            .map(|q| n0[q] + sixth * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]))
            .collect();
        let t = s.t + dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::Stability { t, message: "non-finite density after step".into() });
        }
        let floored = apply_floor(&mut next);
        let n = Field2D { grid: s.n.grid.clone(), values: next };
        let marginals = self.kernel.compute(&n.values);
        Ok(SimState { t, n, marginals, floor_activations: s.floor_activations + floored })
    }

    /// Steps from `s` to exactly `t_end` with steps no larger than `dt_max`.
    pub fn advance_to(&mut self, s: SimState, t_end: f64, dt_max: f64) -> Result<SimState, PdeError> {
        let mut s = s;
        while s.t < t_end {
            let remaining = t_end - s.t;
            // Absorb a sliver at the end rather than taking a ~0 step.
            let last = remaining <= dt_max * (1.0 + 1e-9);
            let dt = if last { remaining } else { dt_max };
            s = self.step(&s, dt)?;
            if last {
                s.t = t_end;
            }
        }
        Ok(s)
    }
}

pub fn rhs(state: &SimState, m: &SelectionFn, p: &ModelParams) -> Result<Field2D, PdeError> {
    Stepper::new(state.grid(), m, p)?.rhs(&state.n)
}

pub fn step(state: &SimState, dt: f64, m: &SelectionFn, p: &ModelParams) -> Result<SimState, PdeError> {
    Stepper::new(state.grid(), m, p)?.step(state, dt)
}

/// Right-hand sides of the marginal balance equations computed from the
/// current field: `res_x(y) = [(r − κρ) ρ^X(y) − ∫ m n dx] / ε` and the
/// analogous `res_y(x)`.
pub fn marginal_residual(state: &SimState, m: &SelectionFn, p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let g = state.grid();
    let (wx, wy) = (g.weights_x(), g.weights_y());
    let mv = m.node_values();
    let n = &state.n.values;
    let mg = &state.marginals;
    let growth = p.r - p.kappa * mg.rho;
    let mut sel_x = vec![0.0; g.ny];
    let mut sel_y = vec![0.0; g.nx];
    for i in 0..g.nx {
        let mut acc = 0.0;
        for j in 0..g.ny {
            let k = g.index(i, j);
            let mn = mv[k] * n[k];
            acc += wy[j] * mn;
            sel_x[j] += wx[i] * mn;
        }
        sel_y[i] = acc;
    }
    let res_x = (0..g.ny).map(|j| (growth * mg.rho_x[j] - sel_x[j]) / p.epsilon).collect();
    let res_y = (0..g.nx).map(|i| (growth * mg.rho_y[i] - sel_y[i]) / p.epsilon).collect();
    (res_x, res_y)
}
