//! Two-locus selection–competition dynamics in the small-mutation limit.
//!
//! Modules, bottom up:
//! - [`expr`]: selection-function language, evaluation and symbolic derivatives
//! - [`grid`]: tensor grids, trapezoid quadrature, marginals
//! - [`pde`]: the rescaled density equation and its RK4 stepper
//! - [`asymptotics`]: Hopf–Cole potential, ν, additivity defect, BV diagnostic
//! - [`canonical`]: canonical ODE for the dominant alleles
//! - [`config`], [`presets`], [`harness`]: runs, sweeps and artifacts

pub mod asymptotics;
pub mod canonical;
pub mod config;
pub mod expr;
pub mod grid;
pub mod harness;
pub mod pde;
pub mod presets;

pub use asymptotics::{hopf_cole, nu_field, BVDiagnostic, HopfColeView, NuField};
pub use canonical::{closed_form, fixed_point_example3, integrate_canonical, CanonicalError, CanonicalState, ClosedFormExample};
pub use config::{ConfigError, RunConfig, SweepSpec};
pub use expr::{parse_selection, Expr, ExprError, SelectionFn, Var};
pub use grid::{argmax, marginals, quad2, Field2D, GridError, GridSpec, Marginals};
pub use harness::{check_hypotheses, run_single, run_sweep, HarnessError};
pub use pde::{Bump, InitialCondition, ModelParams, PdeError, Ploidy, SimState, Stepper};
