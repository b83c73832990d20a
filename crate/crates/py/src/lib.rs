//! Python bindings: expressions, grids, the density simulation, the canonical
//! ODE and the run harness.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dirac::asymptotics::hopf_cole;
use dirac::canonical::{self, CanonicalOptions, ClosedFormExample};
use dirac::config::RunConfig;
use dirac::expr::{self, ExprError, Var};
use dirac::grid::{self, Field2D};
use dirac::harness;
use dirac::pde::{self, Bump, InitialCondition, ModelParams, Ploidy, SimState, Stepper};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn expr_err(e: ExprError) -> PyErr {
    match e {
        ExprError::Eval(_) => runtime_err(e),
        _ => value_err(format!("{}: {e}", e.kind())),
    }
}

fn parse_var(v: &str) -> PyResult<Var> {
    match v {
        "x" => Ok(Var::X),
        "y" => Ok(Var::Y),
        other => Err(value_err(format!("variable must be 'x' or 'y', got '{other}'"))),
    }
}

fn parse_mode(mode: &str) -> PyResult<Ploidy> {
    mode.parse().map_err(value_err)
}

/// Parsed selection-function expression.
#[pyclass(name = "Expression", frozen)]
struct PyExpression(expr::Expr);

#[pymethods]
impl PyExpression {
    #[new]
    fn new(src: &str) -> PyResult<Self> {
        expr::parse_selection(src).map(PyExpression).map_err(expr_err)
    }

    fn eval(&self, x: f64, y: f64) -> PyResult<f64> {
        self.0.eval(x, y).map_err(expr_err)
    }

    fn differentiate(&self, var: &str) -> PyResult<Self> {
        Ok(PyExpression(self.0.differentiate(parse_var(var)?)))
    }

    fn contains_var(&self, var: &str) -> PyResult<bool> {
        Ok(self.0.contains_var(parse_var(var)?))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expression('{}')", self.0)
    }
}

#[pyfunction]
fn parse(src: &str) -> PyResult<PyExpression> {
    PyExpression::new(src)
}

#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid(grid::GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (x_min=-2.0, x_max=2.0, y_min=-2.0, y_max=2.0, nx=101, ny=101))]
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> PyResult<Self> {
        grid::GridSpec::new(x_min, x_max, y_min, y_max, nx, ny).map(PyGrid).map_err(value_err)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.0.ny
    }

    #[getter]
    fn hx(&self) -> f64 {
        self.0.hx()
    }

    #[getter]
    fn hy(&self) -> f64 {
        self.0.hy()
    }

    fn xs(&self) -> Vec<f64> {
        self.0.xs()
    }

    fn ys(&self) -> Vec<f64> {
        self.0.ys()
    }

    /// Trapezoid integral of row-major node values.
    fn quad2(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(grid::quad2(&self.field(values)?))
    }

    /// `(rho_x, rho_y, rho)`: ρ^X as a function of y, ρ^Y as a function of x.
    fn marginals(&self, values: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
        let m = grid::marginals(&self.field(values)?);
        Ok((m.rho_x, m.rho_y, m.rho))
    }

    fn argmax(&self, values: Vec<f64>) -> PyResult<(f64, f64)> {
        Ok(grid::argmax(&self.field(values)?))
    }

    fn __repr__(&self) -> String {
        let g = &self.0;
        format!("Grid([{}, {}] x [{}, {}], {}x{})", g.x_min, g.x_max, g.y_min, g.y_max, g.nx, g.ny)
    }
}

impl PyGrid {
    fn field(&self, values: Vec<f64>) -> PyResult<Field2D> {
        Field2D::new(self.0.clone(), values).map_err(value_err)
    }
}

/// Density state with its selection function and parameters.
#[pyclass(name = "Simulation")]
struct PySimulation {
    m: expr::SelectionFn,
    params: ModelParams,
    state: SimState,
    cfl: f64,
}

#[pymethods]
impl PySimulation {
    /// `ic` is a list of `(x0, y0)` or `(x0, y0, weight)` bumps.
    #[new]
    #[pyo3(signature = (m, grid, ic, r=40.0, kappa=1.0, epsilon=0.05, mode="haploid", target_mass=None, cfl=pde::DEFAULT_CFL))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        m: &str,
        grid: &PyGrid,
        ic: Vec<Vec<f64>>,
        r: f64,
        kappa: f64,
        epsilon: f64,
        mode: &str,
        target_mass: Option<f64>,
        cfl: f64,
    ) -> PyResult<Self> {
        let m = expr::SelectionFn::parse_and_bind(m, &grid.0).map_err(expr_err)?;
        let params = ModelParams::for_selection(r, kappa, epsilon, parse_mode(mode)?, &m).map_err(value_err)?;
        let bumps = ic
            .iter()
            .map(|b| match b.as_slice() {
                [x, y] => Ok(Bump::new(*x, *y)),
                [x, y, w] => Ok(Bump { x0: *x, y0: *y, weight: *w }),
                _ => Err(value_err("each bump is (x0, y0) or (x0, y0, weight)")),
            })
            .collect::<PyResult<Vec<_>>>()?;
        let ic = InitialCondition { bumps, target_mass };
        let state = SimState::initial(&ic, &grid.0, &params).map_err(value_err)?;
        if !(cfl > 0.0) {
            return Err(value_err("cfl must be positive"));
        }
        Ok(PySimulation { m, params, state, cfl })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.state.rho()
    }

    #[getter]
    fn dt_stable(&self) -> f64 {
        pde::dt_stable_with(&self.params, &self.m, self.cfl)
    }

    /// Row-major node values of n.
    fn values(&self) -> Vec<f64> {
        self.state.n.values.clone()
    }

    fn step(&mut self, dt: f64) -> PyResult<()> {
        let mut st = Stepper::new(self.state.grid(), &self.m, &self.params).map_err(value_err)?;
        self.state = st.step(&self.state, dt).map_err(runtime_err)?;
        Ok(())
    }

    fn advance_to(&mut self, py: Python<'_>, t_end: f64) -> PyResult<()> {
        let dt = self.dt_stable();
        let (m, p) = (&self.m, &self.params);
        let s = self.state.clone();
        let next = py.detach(|| -> Result<SimState, pde::PdeError> {
            let mut st = Stepper::new(s.grid(), m, p)?;
            st.advance_to(s, t_end, dt)
        });
        self.state = next.map_err(runtime_err)?;
        Ok(())
    }

    fn argmax(&self) -> (f64, f64) {
        grid::argmax(&self.state.n)
    }

    fn asymmetry(&self) -> f64 {
        self.state.n.asymmetry()
    }

    /// Diagnostics at the current time.
    fn diagnostics(&self) -> PyResult<HashMap<&'static str, f64>> {
        let row = harness::diagnose(&self.state, &self.m, &self.params, 0.1).map_err(runtime_err)?;
        Ok(HashMap::from([
            ("t", row.t),
            ("rho", row.rho),
            ("xbar", row.xbar),
            ("ybar", row.ybar),
            ("nu_min", row.nu_min),
            ("nu_max", row.nu_max),
            ("add_defect", row.add_defect),
            ("u_max", row.u_max),
            ("I", row.i),
            ("I_neg", row.i_neg),
            ("modes_x", row.modes_x as f64),
            ("modes_y", row.modes_y as f64),
        ]))
    }

    /// ε log(ε n), row-major, clamped below at the positivity floor.
    fn hopf_cole(&self) -> Vec<f64> {
        hopf_cole(&self.state.n, self.params.epsilon).u.values
    }
}

/// Canonical trajectory as a list of `(t, xbar, ybar, curv_x, curv_y)`.
#[pyfunction]
#[pyo3(signature = (m, x0, y0, t_end, dt=1e-3, mode="haploid", c0x=-2.0, c0y=-2.0, grid=None))]
#[allow(clippy::too_many_arguments)]
fn integrate_canonical(
    py: Python<'_>,
    m: &str,
    x0: f64,
    y0: f64,
    t_end: f64,
    dt: f64,
    mode: &str,
    c0x: f64,
    c0y: f64,
    grid: Option<PyGrid>,
) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    let g = match grid {
        Some(g) => g.0,
        None => grid::GridSpec::square(-2.0, 2.0, 101).map_err(value_err)?,
    };
    let sel = expr::SelectionFn::parse_and_bind(m, &g).map_err(expr_err)?;
    let opts = CanonicalOptions { c0x, c0y, mode: parse_mode(mode)? };
    let s = py
        .detach(|| canonical::integrate_canonical(x0, y0, &sel, t_end, dt, opts))
        .map_err(runtime_err)?;
    Ok(s.history.iter().map(|h| (h.t, h.xbar, h.ybar, h.curv_x, h.curv_y)).collect())
}

/// Closed-form trajectory point for `"sum_sq"` or `"squared_sum"`.
#[pyfunction]
#[pyo3(signature = (example, x0, y0, t, mode="haploid"))]
fn closed_form(example: &str, x0: f64, y0: f64, t: f64, mode: &str) -> PyResult<(f64, f64)> {
    let ex: ClosedFormExample = example.parse().map_err(value_err)?;
    Ok(canonical::closed_form(ex, x0, y0, t, parse_mode(mode)?))
}

#[pyfunction]
fn fixed_point_example3(x0: f64, y0: f64) -> PyResult<(f64, f64)> {
    canonical::fixed_point_example3(x0, y0).map_err(value_err)
}

#[pyfunction]
fn presets() -> Vec<(&'static str, &'static str)> {
    dirac::presets::PRESETS.to_vec()
}

fn resolve(settings: HashMap<String, String>) -> PyResult<RunConfig> {
    let mut entries: Vec<(String, String)> = settings.into_iter().collect();
    entries.sort();
    RunConfig::resolve(&[], &entries).map_err(value_err)
}

/// H1-H4 report for a configuration given as `key -> value` strings.
#[pyfunction]
fn check_hypotheses(settings: HashMap<String, String>) -> PyResult<HashMap<String, (bool, String)>> {
    let cfg = resolve(settings)?;
    let rep = harness::check_hypotheses(&cfg).map_err(value_err)?;
    Ok(rep.checks.into_iter().map(|c| (c.name.to_string(), (c.pass, c.detail))).collect())
}

/// Full run writing artifacts to `settings["out"]`; returns the final argmax.
#[pyfunction]
fn run(py: Python<'_>, settings: HashMap<String, String>) -> PyResult<(f64, f64)> {
    let cfg = resolve(settings)?;
    let out = py.detach(|| harness::run_single(&cfg)).map_err(|e| runtime_err(e.to_json()))?;
    Ok(out.final_argmax())
}

#[pymodule]
fn dirac_alleles(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpression>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_canonical, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point_example3, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(check_hypotheses, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
