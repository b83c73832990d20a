//! Experiment orchestration: single runs, seeded sweeps and hypothesis checks.
//!
//! A run directory holds `resolved.cfg`, `diagnostics.csv`, `summary`,
//! `snapshots/n_t*.csv` and, when enabled, `canonical.csv`. A sweep directory
//! holds `resolved.cfg`, `sweep.csv`, `summary` and one `pairs/pair_NNN_*.csv`
//! pair per sampled initial condition.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use thiserror::Error;

use crate::asymptotics::{additivity_defect, bv_diagnostic, hopf_cole, mode_count, nu_field_with};
use crate::canonical::{integrate_canonical, CanonicalError, CanonicalOptions, CanonicalState};
use crate::config::{ConfigError, RunConfig};
use crate::expr::{ExprError, SelectionFn};
use crate::grid::{argmax, fmt17, GridSpec};
use crate::pde::{dt_stable_with, Bump, InitialCondition, ModelParams, PdeError, SimState, Stepper};

pub const DIAGNOSTICS_SCHEMA: u32 = 1;
pub const SUMMARY_SCHEMA: u32 = 1;
pub const SWEEP_SCHEMA: u32 = 1;

pub const DIAGNOSTICS_HEADER: &str = "t,rho,xbar,ybar,nu_min,nu_max,add_defect,u_max,I,I_neg,modes_x,modes_y";
pub const SWEEP_HEADER: &str =
    "index,x0,y0,pde_x,pde_y,ode_x,ode_y,discrepancy,ode_final_t,ode_final_x,ode_final_y,status";

/// Relative slack on the ρ and ν bound checks.
pub const BOUND_SLACK: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{failed} of {total} sweep pairs failed")]
    PartialSweep { failed: usize, total: usize },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Expr(_) | HarnessError::Io { .. } => 2,
            HarnessError::Pde(PdeError::Params(_) | PdeError::Grid(_)) => 2,
            HarnessError::Pde(_) | HarnessError::Canonical(_) => 3,
            HarnessError::PartialSweep { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "ConfigError",
            HarnessError::Expr(e) => e.kind(),
            HarnessError::Pde(PdeError::State(_)) => "StateError",
            HarnessError::Pde(PdeError::Stability { .. }) => "StabilityError",
            HarnessError::Pde(_) => "ParamsError",
            HarnessError::Canonical(CanonicalError::Singularity { .. }) => "SingularityError",
            HarnessError::Canonical(_) => "CanonicalError",
            HarnessError::Io { .. } => "IoError",
            HarnessError::PartialSweep { .. } => "PartialSweepFailure",
        }
    }

    /// One-line JSON error record.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let HarnessError::Expr(e) = self {
            if let Some(off) = e.offset() {
                v["offset"] = off.into();
            }
        }
        if let HarnessError::Pde(PdeError::Stability { t, .. }) = self {
            v["t"] = (*t).into();
        }
        v.to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Writes `contents` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Everything a run needs, built once from a validated config.
pub struct Setup {
    pub grid: GridSpec,
    pub m: SelectionFn,
    pub params: ModelParams,
    pub ic: InitialCondition,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let m = SelectionFn::parse_and_bind(&cfg.m, &grid)?;
        let params = ModelParams::for_selection(cfg.r, cfg.kappa, cfg.epsilon, cfg.mode, &m)?;
        let ic = InitialCondition { bumps: cfg.bumps.clone(), target_mass: cfg.target_mass };
        Ok(Setup { grid, m, params, ic })
    }

    pub fn with_bumps(&self, bumps: Vec<Bump>) -> InitialCondition {
        InitialCondition { bumps, target_mass: self.ic.target_mass }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub sup_m: f64,
    pub rho0: f64,
    pub nu0_min: f64,
    pub nu0_max: f64,
    /// ‖u⁰‖∞ + ‖∂x u⁰‖∞ + ‖∂y u⁰‖∞ over unclamped nodes.
    pub u0_w1inf: f64,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} = {} ({})", c.name, if c.pass { "pass" } else { "fail" }, c.detail);
        }
        s
    }
}

fn w1inf(u: &crate::grid::Field2D, clamped: &[bool]) -> f64 {
    let g = &u.grid;
    let (mut sup, mut dx, mut dy) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..g.nx {
        for j in 0..g.ny {
            let k = g.index(i, j);
            if clamped[k] {
                continue;
            }
            sup = sup.max(u.values[k].abs());
            if i + 1 < g.nx && !clamped[g.index(i + 1, j)] {
                dx = dx.max(((u.at(i + 1, j) - u.at(i, j)) / g.hx()).abs());
            }
            if j + 1 < g.ny && !clamped[g.index(i, j + 1)] {
                dy = dy.max(((u.at(i, j + 1) - u.at(i, j)) / g.hy()).abs());
            }
        }
    }
    sup + dx + dy
}

/// Discrete surrogates of H1–H4 on the constructed initial state.
pub fn check_hypotheses(cfg: &RunConfig) -> Result<HypothesisReport, HarnessError> {
    let setup = Setup::new(cfg)?;
    Ok(check_setup(&setup, &SimState::initial(&setup.ic, &setup.grid, &setup.params)?))
}

fn check_setup(setup: &Setup, s0: &SimState) -> HypothesisReport {
    let p = &setup.params;
    let rho0 = s0.rho();
    let hc = hopf_cole(&s0.n, p.epsilon);
    let u0_w1inf = w1inf(&hc.u, &hc.clamped);
    let (nu0_min, nu0_max) = match nu_field_with(&s0.n, &s0.marginals) {
        Ok(nu) => (nu.observed_min, nu.observed_max),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let h1 = p.h1();
    let checks = vec![
        HypothesisCheck {
            name: "H1",
            pass: h1,
            detail: format!("4 sup|m| = {} vs r = {}", 4.0 * p.sup_m, p.r),
        },
        HypothesisCheck {
            name: "H2",
            pass: u0_w1inf.is_finite(),
            detail: format!("W1inf(u0) = {u0_w1inf}"),
        },
        HypothesisCheck {
            name: "H3",
            pass: rho0 > p.rho_minus && rho0 < p.rho_plus,
            detail: format!("rho0 = {rho0} in ({}, {})", p.rho_minus, p.rho_plus),
        },
        HypothesisCheck {
            name: "H4",
            pass: h1 && nu0_min >= p.nu_m && nu0_max <= p.nu_big_m,
            detail: format!("nu0 in [{nu0_min}, {nu0_max}] vs [{}, {}]", p.nu_m, p.nu_big_m),
        },
    ];
    HypothesisReport { checks, sup_m: p.sup_m, rho0, nu0_min, nu0_max, u0_w1inf }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    pub rho: f64,
    pub xbar: f64,
    pub ybar: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    pub add_defect: f64,
    pub u_max: f64,
    pub i: f64,
    pub i_neg: f64,
    pub modes_x: usize,
    pub modes_y: usize,
}

impl DiagnosticRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt17(self.t),
            fmt17(self.rho),
            fmt17(self.xbar),
            fmt17(self.ybar),
            fmt17(self.nu_min),
            fmt17(self.nu_max),
            fmt17(self.add_defect),
            fmt17(self.u_max),
            fmt17(self.i),
            fmt17(self.i_neg),
            self.modes_x,
            self.modes_y
        )
    }
}

pub fn diagnose(s: &SimState, m: &SelectionFn, p: &ModelParams, mode_threshold: f64) -> Result<DiagnosticRow, PdeError> {
    let nu = nu_field_with(&s.n, &s.marginals)?;
    let hc = hopf_cole(&s.n, p.epsilon);
    let bv = bv_diagnostic(s, m, p);
    let (xbar, ybar) = argmax(&s.n);
    Ok(DiagnosticRow {
        t: s.t,
        rho: s.rho(),
        xbar,
        ybar,
        nu_min: nu.observed_min,
        nu_max: nu.observed_max,
        add_defect: additivity_defect(&hc),
        u_max: hc.max_u(),
        i: bv.i,
        i_neg: bv.i_neg,
        // ρ^Y is the profile along x, ρ^X along y
        modes_x: mode_count(&s.marginals.rho_y, mode_threshold),
        modes_y: mode_count(&s.marginals.rho_x, mode_threshold),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantCounts {
    pub samples: usize,
    /// ρ outside [ρ₀⁻, ρ₀⁺] ± slack; checked only when H1 and H3 hold.
    pub rho_bounds: usize,
    /// masked ν outside [ν_m, ν_M] ± slack; checked only when H1 and H4 hold.
    pub nu_bounds: usize,
    pub rho_checked: bool,
    pub nu_checked: bool,
}

impl InvariantCounts {
    fn observe(&mut self, row: &DiagnosticRow, p: &ModelParams) {
        self.samples += 1;
        if self.rho_checked {
            let tol = BOUND_SLACK * p.rho_plus;
            if row.rho < p.rho_minus - tol || row.rho > p.rho_plus + tol {
                self.rho_bounds += 1;
            }
        }
        if self.nu_checked && (row.nu_min < p.nu_m * (1.0 - BOUND_SLACK) || row.nu_max > p.nu_big_m * (1.0 + BOUND_SLACK)) {
            self.nu_bounds += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub rows: Vec<DiagnosticRow>,
    pub final_state: SimState,
    pub hypotheses: HypothesisReport,
    pub invariants: InvariantCounts,
    pub canonical: Option<Result<CanonicalState, String>>,
    pub steps: usize,
    pub dt: f64,
}

impl RunOutcome {
    pub fn final_argmax(&self) -> (f64, f64) {
        argmax(&self.final_state.n)
    }
}

/// Merged stop times: samples every `interval` plus snapshot times, always
/// including 0 and `t_max`. Returns `(t, is_sample, is_snapshot)`.
fn schedule(t_max: f64, interval: f64, snapshots: &[f64]) -> Vec<(f64, bool, bool)> {
    let eps = 1e-12 * t_max.max(1.0);
    let mut stops: Vec<(f64, bool, bool)> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * interval;
        if t >= t_max - eps {
            break;
        }
        stops.push((t, true, false));
        k += 1;
    }
    stops.push((t_max, true, false));
    for &ts in snapshots {
        match stops.iter_mut().find(|s| (s.0 - ts).abs() <= eps) {
            Some(s) => s.2 = true,
            None => stops.push((ts, false, true)),
        }
    }
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));
    stops
}

fn snapshot_name(t: f64) -> String {
    format!("n_t{t:.6}.csv")
}

fn summary_text(cfg: &RunConfig, out: &RunOutcome, setup: &Setup) -> String {
    let mut s = String::new();
    let p = &setup.params;
    let last = out.rows.last();
    let (ax, ay) = out.final_argmax();
    let _ = writeln!(s, "summary_schema = {SUMMARY_SCHEMA}");
    let _ = writeln!(s, "diagnostics_schema = {DIAGNOSTICS_SCHEMA}");
    let _ = writeln!(s, "status = ok");
    let _ = writeln!(s, "preset = {}", cfg.preset.as_deref().unwrap_or("none"));
    let _ = writeln!(s, "mode = {}", p.mode.as_str());
    let _ = writeln!(s, "t_final = {}", fmt17(out.final_state.t));
    let _ = writeln!(s, "steps = {}", out.steps);
    let _ = writeln!(s, "dt = {}", fmt17(out.dt));
    let _ = writeln!(s, "rho_final = {}", fmt17(out.final_state.rho()));
    let _ = writeln!(s, "argmax_x = {}", fmt17(ax));
    let _ = writeln!(s, "argmax_y = {}", fmt17(ay));
    if let Some(r) = last {
        let _ = writeln!(s, "modes_x = {}", r.modes_x);
        let _ = writeln!(s, "modes_y = {}", r.modes_y);
    }
    let _ = writeln!(s, "rho_minus = {}", p.rho_minus);
    let _ = writeln!(s, "rho_plus = {}", p.rho_plus);
    let _ = writeln!(s, "nu_m = {}", p.nu_m);
    let _ = writeln!(s, "nu_big_m = {}", p.nu_big_m);
    let inv = &out.invariants;
    let _ = writeln!(s, "samples = {}", inv.samples);
    let _ = writeln!(s, "violations_rho_bounds = {}", if inv.rho_checked { inv.rho_bounds.to_string() } else { "skipped".into() });
    let _ = writeln!(s, "violations_nu_bounds = {}", if inv.nu_checked { inv.nu_bounds.to_string() } else { "skipped".into() });
    let _ = writeln!(s, "floor_activations = {}", out.final_state.floor_activations);
    for c in &out.hypotheses.checks {
        let _ = writeln!(s, "{} = {}", c.name, if c.pass { "pass" } else { "fail" });
        let _ = writeln!(s, "{}_detail = {}", c.name, c.detail);
    }
    if !out.hypotheses.passed("H1") {
        let _ = writeln!(s, "warning = H1 fails; bounds on rho and nu are not guaranteed");
    }
    match &out.canonical {
        None => {
            let _ = writeln!(s, "canonical = off");
        }
        Some(Ok(c)) => {
            let _ = writeln!(s, "canonical = ok");
            let _ = writeln!(s, "canonical_t = {}", fmt17(c.t));
            let _ = writeln!(s, "canonical_x = {}", fmt17(c.xbar));
            let _ = writeln!(s, "canonical_y = {}", fmt17(c.ybar));
            let _ = writeln!(s, "canonical_curvature = {}", if c.curvature_exact { "exact" } else { "frozen-at-trajectory" });
            if (c.t - out.final_state.t).abs() <= 1e-12 * c.t.max(1.0) {
                let _ = writeln!(s, "argmax_vs_canonical = {}", fmt17((ax - c.xbar).abs().max((ay - c.ybar).abs())));
            }
        }
        Some(Err(e)) => {
            let _ = writeln!(s, "canonical = error: {e}");
        }
    }
    s
}

fn canonical_opts(cfg: &RunConfig) -> CanonicalOptions {
    CanonicalOptions { c0x: cfg.c0x, c0y: cfg.c0y, mode: cfg.mode }
}

/// Full run: density to `t_max` with diagnostics, snapshots, the canonical
/// trajectory and a summary, written under `cfg.out`.
pub fn run_single(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let setup = Setup::new(cfg)?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_atomic(&dir.join("resolved.cfg"), cfg.to_resolved_text().as_bytes())?;

    let outcome = simulate(cfg, &setup, Some(&dir));
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let _ = write_atomic(&dir.join("error.json"), format!("{}\n", e.to_json()).as_bytes());
            return Err(e);
        }
    };
    write_atomic(&dir.join("summary"), summary_text(cfg, &outcome, &setup).as_bytes())?;
    Ok(outcome)
}

/// The density run itself. With `dir`, diagnostics, snapshots and the
/// canonical CSV are written there.
fn simulate(cfg: &RunConfig, setup: &Setup, dir: Option<&Path>) -> Result<RunOutcome, HarnessError> {
    let (m, p) = (&setup.m, &setup.params);
    let s0 = SimState::initial(&setup.ic, &setup.grid, p)?;
    let hypotheses = check_setup(setup, &s0);
    let mut invariants = InvariantCounts {
        rho_checked: hypotheses.passed("H1") && hypotheses.passed("H3"),
        nu_checked: hypotheses.passed("H1") && hypotheses.passed("H4"),
        ..Default::default()
    };
    let dt = dt_stable_with(p, m, cfg.cfl);
    let mut stepper = Stepper::new(&setup.grid, m, p)?;
    let mut state = s0;
    let mut rows = Vec::new();
    let mut diag = format!("{DIAGNOSTICS_HEADER}\n");
    let mut steps = 0usize;
    for (t, sample, snap) in schedule(cfg.t_max, cfg.sample_interval, &cfg.resolved_snapshot_times()) {
        if t > state.t {
            let before = state.t;
            state = stepper.advance_to(state, t, dt)?;
            steps += ((t - before) / dt).ceil() as usize;
        }
        if sample {
            let row = diagnose(&state, m, p, cfg.mode_threshold)?;
            invariants.observe(&row, p);
            diag.push_str(&row.to_csv());
            diag.push('\n');
            rows.push(row);
        }
        if snap {
            if let Some(dir) = dir {
                let mut buf = Vec::new();
                state.n.write_csv(&mut buf).map_err(io_err(dir))?;
                write_atomic(&dir.join("snapshots").join(snapshot_name(t)), &buf)?;
            }
        }
    }
    let canonical = if cfg.canonical_enabled() {
        let start = setup.ic.bumps.iter().fold(setup.ic.bumps[0], |a, b| if b.weight > a.weight { *b } else { a });
        let res = integrate_canonical(start.x0, start.y0, m, cfg.canonical_horizon(), cfg.canonical_dt, canonical_opts(cfg));
        if let (Some(dir), Ok(c)) = (dir, &res) {
            let mut buf = Vec::new();
            c.write_csv(&mut buf).map_err(io_err(dir))?;
            write_atomic(&dir.join("canonical.csv"), &buf)?;
        }
        Some(res.map_err(|e| e.to_string()))
    } else {
        None
    };
    if let Some(dir) = dir {
        write_atomic(&dir.join("diagnostics.csv"), diag.as_bytes())?;
    }
    Ok(RunOutcome { dir: dir.map(Path::to_path_buf).unwrap_or_default(), rows, final_state: state, hypotheses, invariants, canonical, steps, dt })
}

/// Same as [`run_single`] without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let setup = Setup::new(cfg)?;
    simulate(cfg, &setup, None)
}

/// Uniform draw in [0, 1) from the top 53 bits of one Xoshiro256++ output.
pub fn unit_f64(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sweep initial conditions: Xoshiro256++ seeded through SplitMix64
/// (`seed_from_u64`), drawing x then y for each pair.
pub fn sweep_points(count: usize, domain: [f64; 4], seed: u64) -> Vec<(f64, f64)> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = domain[0] + (domain[1] - domain[0]) * unit_f64(&mut rng);
            let y = domain[2] + (domain[3] - domain[2]) * unit_f64(&mut rng);
            (x, y)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub index: usize,
    pub x0: f64,
    pub y0: f64,
    pub outcome: Result<PairFinals, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFinals {
    pub pde: (f64, f64),
    /// ODE at the density horizon.
    pub ode: (f64, f64),
    /// ODE at the canonical horizon.
    pub ode_final: (f64, f64, f64),
    pub discrepancy: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub pairs: Vec<PairResult>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.pairs.iter().filter(|p| p.outcome.is_err()).count()
    }
}

fn run_pair(cfg: &RunConfig, setup: &Setup, index: usize, x0: f64, y0: f64, dir: &Path) -> Result<PairFinals, HarnessError> {
    let (m, p) = (&setup.m, &setup.params);
    let ic = setup.with_bumps(vec![Bump::new(x0, y0)]);
    let dt = dt_stable_with(p, m, cfg.cfl);
    let mut stepper = Stepper::new(&setup.grid, m, p)?;
    let mut state = SimState::initial(&ic, &setup.grid, p)?;
    let mut traj = String::from("t,xbar,ybar\n");
    for (t, sample, _) in schedule(cfg.t_max, cfg.sample_interval, &[]) {
        if t > state.t {
            state = stepper.advance_to(state, t, dt)?;
        }
        if sample {
            let (x, y) = argmax(&state.n);
            let _ = writeln!(traj, "{},{},{}", fmt17(t), fmt17(x), fmt17(y));
        }
    }
    write_atomic(&dir.join(format!("pair_{index:03}_pde.csv")), traj.as_bytes())?;
    let pde = argmax(&state.n);
    let opts = canonical_opts(cfg);
    let at_t = integrate_canonical(x0, y0, m, cfg.t_max, cfg.canonical_dt, opts)?;
    let full = if cfg.canonical_horizon() == cfg.t_max {
        at_t.clone()
    } else {
        integrate_canonical(x0, y0, m, cfg.canonical_horizon(), cfg.canonical_dt, opts)?
    };
    let mut buf = Vec::new();
    full.write_csv(&mut buf).map_err(io_err(dir))?;
    write_atomic(&dir.join(format!("pair_{index:03}_canonical.csv")), &buf)?;
    Ok(PairFinals {
        pde,
        ode: (at_t.xbar, at_t.ybar),
        ode_final: (full.t, full.xbar, full.ybar),
        discrepancy: (pde.0 - at_t.xbar).abs().max((pde.1 - at_t.ybar).abs()),
    })
}

/// Density and canonical runs from `cfg.sweep_count` seeded uniform initial
/// points. Pair failures are recorded; the sweep returns
/// [`HarnessError::PartialSweep`] after writing everything if any failed.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome, HarnessError> {
    let setup = Setup::new(cfg)?;
    let dir = cfg.out.clone();
    let pair_dir = dir.join("pairs");
    fs::create_dir_all(&pair_dir).map_err(io_err(&pair_dir))?;
    write_atomic(&dir.join("resolved.cfg"), cfg.to_resolved_text().as_bytes())?;
    let sweep = cfg.sweep();
    let points = sweep_points(sweep.count, sweep.domain, sweep.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    let pairs: Vec<PairResult> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, &(x0, y0))| PairResult {
                index,
                x0,
                y0,
                outcome: run_pair(cfg, &setup, index, x0, y0, &pair_dir).map_err(|e| e.kind().to_string()),
            })
            .collect()
    });

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut worst = 0.0f64;
    for pr in &pairs {
        let _ = write!(csv, "{},{},{},", pr.index, fmt17(pr.x0), fmt17(pr.y0));
        match &pr.outcome {
            Ok(f) => {
                worst = worst.max(f.discrepancy);
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},ok",
                    fmt17(f.pde.0),
                    fmt17(f.pde.1),
                    fmt17(f.ode.0),
                    fmt17(f.ode.1),
                    fmt17(f.discrepancy),
                    fmt17(f.ode_final.0),
                    fmt17(f.ode_final.1),
                    fmt17(f.ode_final.2)
                );
            }
            Err(kind) => {
                let _ = writeln!(csv, "nan,nan,nan,nan,nan,nan,nan,nan,{kind}");
            }
        }
    }
    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    let out = SweepOutcome { dir: dir.clone(), pairs };
    let failed = out.failures();
    let mut summary = String::new();
    let _ = writeln!(summary, "summary_schema = {SUMMARY_SCHEMA}");
    let _ = writeln!(summary, "sweep_schema = {SWEEP_SCHEMA}");
    let _ = writeln!(summary, "status = {}", if failed == 0 { "ok" } else { "partial" });
    let _ = writeln!(summary, "pairs = {}", out.pairs.len());
    let _ = writeln!(summary, "failed = {failed}");
    let _ = writeln!(summary, "max_discrepancy = {}", fmt17(worst));
    let _ = writeln!(summary, "rng = xoshiro256++ seeded by splitmix64({})", sweep.seed);
    write_atomic(&dir.join("summary"), summary.as_bytes())?;
    if failed > 0 {
        return Err(HarnessError::PartialSweep { failed, total: out.pairs.len() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_merges_samples_and_snapshots() {
        let s = schedule(1.0, 0.3, &[0.0, 0.45, 1.0]);
        let ts: Vec<f64> = s.iter().map(|x| x.0).collect();
        assert_eq!(ts.len(), 6);
        assert_eq!(s[0], (0.0, true, true));
        assert_eq!(s[2], (0.45, false, true));
        assert_eq!(*s.last().unwrap(), (1.0, true, true));
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sweep_points_are_seeded_and_in_box() {
        let a = sweep_points(50, [-2.0, 2.0, 0.25, 2.0], 7);
        assert_eq!(a, sweep_points(50, [-2.0, 2.0, 0.25, 2.0], 7));
        assert_ne!(a, sweep_points(50, [-2.0, 2.0, 0.25, 2.0], 8));
        assert!(a.iter().all(|&(x, y)| (-2.0..2.0).contains(&x) && (0.25..2.0).contains(&y)));
    }

    #[test]
    fn hypotheses_on_default_and_hyperbola() {
        let cfg = RunConfig::from_preset("example1").unwrap();
        let rep = check_hypotheses(&cfg).unwrap();
        assert!(rep.passed("H1") && rep.passed("H3") && rep.passed("H2"));
        assert_eq!(rep.sup_m, 8.0);
        assert!((rep.nu0_min - 1.0).abs() < 1e-10 && (rep.nu0_max - 1.0).abs() < 1e-10);
        assert!(rep.passed("H4"));

        let cfg = RunConfig::from_preset("example3").unwrap();
        let rep = check_hypotheses(&cfg).unwrap();
        assert!(!rep.passed("H1"));
        assert_eq!(rep.sup_m, 25.0);
        assert!(rep.get("H1").unwrap().detail.contains("100"));
    }

    #[test]
    fn error_records_are_json() {
        let e = HarnessError::from(crate::expr::parse_selection("x^(y)").unwrap_err());
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "DomainError");
        assert_eq!(v["offset"], 2);
        assert_eq!(v["exit_code"], 2);
        let e = HarnessError::Pde(PdeError::Stability { t: 0.5, message: "boom".into() });
        assert_eq!(e.exit_code(), 3);
        assert_eq!(HarnessError::PartialSweep { failed: 1, total: 3 }.exit_code(), 4);
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a/b.txt");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
