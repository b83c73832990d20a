//! Canonical equations for the dominant alleles under monomorphism:
//!
//! ```text
//! ∂xx u^Y(t, x̄) dx̄/dt = ∂x m(x̄, ȳ)      ∂yy u^X(t, ȳ) dȳ/dt = ∂y m(x̄, ȳ)
//! ∂xx u^Y(t, x) = ∂xx u⁰(x) − ∫₀ᵗ ∂xx m(x, ȳ(s)) ds
//! ```
//!
//! The curvature integral is a trapezoid rule over the stored trajectory, with
//! the x argument frozen at the current x̄(t). When ∂xx m does not depend on x
//! (all polynomial presets), the integral is cached as a running sum;
//! otherwise it is recomputed over the whole history at every stage, and the
//! result is only an approximation of the moving-point curvature.

use std::io::{self, Write};

use thiserror::Error;

use crate::expr::{ExprError, SelectionFn};
use crate::grid::fmt17;
use crate::pde::Ploidy;

/// Curvatures at or above this value are treated as degenerate.
pub const CURVATURE_LIMIT: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanonicalError {
    #[error("curvature degenerates at t = {t} (value {curvature})")]
    Singularity { t: f64, curvature: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Eval(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalSample {
    pub t: f64,
    pub xbar: f64,
    pub ybar: f64,
    pub curv_x: f64,
    pub curv_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalState {
    pub t: f64,
    pub xbar: f64,
    pub ybar: f64,
    pub c0x: f64,
    pub c0y: f64,
    pub mode: Ploidy,
    /// False when ∂xx m or ∂yy m depends on its own variable, in which case
    /// the frozen-x curvature is an approximation.
    pub curvature_exact: bool,
    pub history: Vec<CanonicalSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalOptions {
    /// ∂xx u⁰ at the initial point; −2 for u⁰ = −|z − z̄₀|².
    pub c0x: f64,
    pub c0y: f64,
    pub mode: Ploidy,
}

impl Default for CanonicalOptions {
    fn default() -> Self {
        CanonicalOptions { c0x: -2.0, c0y: -2.0, mode: Ploidy::Haploid }
    }
}

impl CanonicalState {
    pub fn start(x0: f64, y0: f64, opts: CanonicalOptions, m: &SelectionFn) -> Result<Self, CanonicalError> {
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(CanonicalError::Domain("initial point must be finite".into()));
        }
        if opts.mode == Ploidy::Diploid && x0 != y0 {
            return Err(CanonicalError::Domain(format!(
                "diploid trajectories live on the diagonal, got ({x0}, {y0})"
            )));
        }
        for c in [opts.c0x, opts.c0y] {
            if !(c < CURVATURE_LIMIT) {
                return Err(CanonicalError::Singularity { t: 0.0, curvature: c });
            }
        }
        Ok(CanonicalState {
            t: 0.0,
            xbar: x0,
            ybar: y0,
            c0x: opts.c0x,
            c0y: opts.c0y,
            mode: opts.mode,
            curvature_exact: m.curvature_is_frozen_exact(),
            history: vec![CanonicalSample { t: 0.0, xbar: x0, ybar: y0, curv_x: opts.c0x, curv_y: opts.c0y }],
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,xbar,ybar,curv_x,curv_y")?;
        for s in &self.history {
            writeln!(w, "{},{},{},{},{}", fmt17(s.t), fmt17(s.xbar), fmt17(s.ybar), fmt17(s.curv_x), fmt17(s.curv_y))?;
        }
        Ok(())
    }
}

fn history_integral(
    hist: &[CanonicalSample],
    f: impl Fn(&CanonicalSample) -> Result<f64, ExprError>,
) -> Result<f64, ExprError> {
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in hist {
        let v = f(s)?;
        if let Some((pt, pv)) = prev {
            acc += 0.5 * (s.t - pt) * (pv + v);
        }
        prev = Some((s.t, v));
    }
    Ok(acc)
}

fn check(t: f64, curvature: f64) -> Result<f64, CanonicalError> {
    if curvature < CURVATURE_LIMIT {
        Ok(curvature)
    } else {
        Err(CanonicalError::Singularity { t, curvature })
    }
}

/// ∂xx u^Y(t, x̄(t)) = c0x − ∫₀ᵗ ∂xx m(x̄(t), ȳ(s)) ds over the stored history.
pub fn curvature_x(s: &CanonicalState, m: &SelectionFn) -> Result<f64, CanonicalError> {
    if s.history.is_empty() {
        return Err(CanonicalError::Domain("empty history".into()));
    }
    let x = s.xbar;
    let h = history_integral(&s.history, |k| m.dxx_m.eval(x, k.ybar))?;
    check(s.t, s.c0x - h)
}

/// ∂yy u^X(t, ȳ(t)) = c0y − ∫₀ᵗ ∂yy m(x̄(s), ȳ(t)) ds over the stored history.
pub fn curvature_y(s: &CanonicalState, m: &SelectionFn) -> Result<f64, CanonicalError> {
    if s.history.is_empty() {
        return Err(CanonicalError::Domain("empty history".into()));
    }
    let y = s.ybar;
    let h = history_integral(&s.history, |k| m.dyy_m.eval(k.xbar, y))?;
    check(s.t, s.c0y - h)
}

/// (dx̄/dt, dȳ/dt) at the current point.
pub fn canonical_rhs(s: &CanonicalState, m: &SelectionFn) -> Result<(f64, f64), CanonicalError> {
    let cx = curvature_x(s, m)?;
    let (gx, gy) = m.grad(s.xbar, s.ybar)?;
    let dx = gx / cx;
    if s.mode == Ploidy::Diploid {
        return Ok((dx, dx));
    }
    let cy = curvature_y(s, m)?;
    Ok((dx, gy / cy))
}

struct CurvatureTransport<'a> {
    m: &'a SelectionFn,
    cached: bool,
    // running ∫ ∂xx m(·, ȳ(s)) ds and ∫ ∂yy m(x̄(s), ·) ds, valid when cached
    int_x: f64,
    int_y: f64,
}

impl CurvatureTransport<'_> {
    fn history_x(&self, hist: &[CanonicalSample], x: f64) -> Result<f64, ExprError> {
        if self.cached {
            Ok(self.int_x)
        } else {
            history_integral(hist, |k| self.m.dxx_m.eval(x, k.ybar))
        }
    }

    fn history_y(&self, hist: &[CanonicalSample], y: f64) -> Result<f64, ExprError> {
        if self.cached {
            Ok(self.int_y)
        } else {
            history_integral(hist, |k| self.m.dyy_m.eval(k.xbar, y))
        }
    }

    /// Velocity at stage time `tau ∈ [t_n, t_n + dt]` for stage point `(xs, ys)`,
    /// extending the history trapezoid with the segment `[t_n, tau]`.
    fn velocity(&self, s: &CanonicalState, tau: f64, xs: f64, ys: f64) -> Result<(f64, f64), CanonicalError> {
        let last = s.history.last().expect("history starts at t = 0");
        let seg = tau - last.t;
        let mut cx = s.c0x - self.history_x(&s.history, xs)?;
        if seg > 0.0 {
            cx -= 0.5 * seg * (self.m.dxx_m.eval(xs, last.ybar)? + self.m.dxx_m.eval(xs, ys)?);
        }
        let cx = check(tau, cx)?;
        let (gx, gy) = self.m.grad(xs, ys)?;
        let dx = gx / cx;
        if s.mode == Ploidy::Diploid {
            return Ok((dx, dx));
        }
        let mut cy = s.c0y - self.history_y(&s.history, ys)?;
        if seg > 0.0 {
            cy -= 0.5 * seg * (self.m.dyy_m.eval(last.xbar, ys)? + self.m.dyy_m.eval(xs, ys)?);
        }
        let cy = check(tau, cy)?;
        Ok((dx, gy / cy))
    }

    fn accept(&mut self, s: &mut CanonicalState, t: f64, x: f64, y: f64) -> Result<(), CanonicalError> {
        let last = *s.history.last().expect("history starts at t = 0");
        let seg = t - last.t;
        if self.cached {
            self.int_x += 0.5 * seg * (self.m.dxx_m.eval(x, last.ybar)? + self.m.dxx_m.eval(x, y)?);
            self.int_y += 0.5 * seg * (self.m.dyy_m.eval(last.xbar, y)? + self.m.dyy_m.eval(x, y)?);
        }
        s.t = t;
        s.xbar = x;
        s.ybar = y;
        s.history.push(CanonicalSample { t, xbar: x, ybar: y, curv_x: f64::NAN, curv_y: f64::NAN });
        let cx = check(t, s.c0x - self.history_x(&s.history, x)?)?;
        let cy = if s.mode == Ploidy::Diploid { cx } else { check(t, s.c0y - self.history_y(&s.history, y)?)? };
        let k = s.history.last_mut().unwrap();
        k.curv_x = cx;
        k.curv_y = cy;
        Ok(())
    }
}

/// Classical RK4 on the canonical equations from `(x0, y0)` to `t_end`, with
/// the last step shortened to land on `t_end`.
pub fn integrate_canonical(
    x0: f64,
    y0: f64,
    m: &SelectionFn,
    t_end: f64,
    dt: f64,
    opts: CanonicalOptions,
) -> Result<CanonicalState, CanonicalError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CanonicalError::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(CanonicalError::Domain(format!("horizon must be nonnegative, got {t_end}")));
    }
    let mut s = CanonicalState::start(x0, y0, opts, m)?;
    let mut tr = CurvatureTransport { m, cached: s.curvature_exact, int_x: 0.0, int_y: 0.0 };
    let steps = (t_end / dt).ceil() as usize;
    for n in 0..steps {
        let t = s.t;
        let next_t = if n + 1 == steps { t_end } else { (n + 1) as f64 * dt };
        let h = next_t - t;
        let (x, y) = (s.xbar, s.ybar);
        let k1 = tr.velocity(&s, t, x, y)?;
        let k2 = tr.velocity(&s, t + 0.5 * h, x + 0.5 * h * k1.0, y + 0.5 * h * k1.1)?;
        let k3 = tr.velocity(&s, t + 0.5 * h, x + 0.5 * h * k2.0, y + 0.5 * h * k2.1)?;
        let k4 = tr.velocity(&s, next_t, x + h * k3.0, y + h * k3.1)?;
        let nx = x + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        let ny = if s.mode == Ploidy::Diploid { nx } else { y + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) };
        if !(nx.is_finite() && ny.is_finite()) {
            return Err(CanonicalError::Domain(format!("trajectory left the finite range at t = {next_t}")));
        }
        tr.accept(&mut s, next_t, nx, ny)?;
    }
    Ok(s)
}

/// Stationary point of the (1 − xy)² example: `x_F y_F = 1` and
/// `y_F² − x_F² = y0² − x0²`.
pub fn fixed_point_example3(x0: f64, y0: f64) -> Result<(f64, f64), CanonicalError> {
    if !(x0 > 0.0 && y0 > 0.0) {
        return Err(CanonicalError::Domain(format!("need a point in the open positive quadrant, got ({x0}, {y0})")));
    }
    if x0 > y0 {
        let (a, b) = fixed_point_example3(y0, x0)?;
        return Ok((b, a));
    }
    // s = x_F² solves s² + b s − 1 = 0 with b = y0² − x0² ≥ 0; use the
    // cancellation-free root 2/(b + √(b² + 4)).
    let b = y0 * y0 - x0 * x0;
    let s = 2.0 / (b + (b * b + 4.0).sqrt());
    let xf = s.sqrt();
    Ok((xf, 1.0 / xf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormExample {
    /// m = x² + y²
    SumSq,
    /// m = (x + y)²
    SquaredSum,
}

impl std::str::FromStr for ClosedFormExample {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum_sq" => Ok(ClosedFormExample::SumSq),
            "squared_sum" => Ok(ClosedFormExample::SquaredSum),
            other => Err(format!("unknown closed form '{other}' (expected sum_sq|squared_sum)")),
        }
    }
}

/// Exact trajectories of the two quadratic examples. `t` may be infinite.
pub fn closed_form(example: ClosedFormExample, x0: f64, y0: f64, t: f64, mode: Ploidy) -> (f64, f64) {
    let s = t + 1.0;
    match (example, mode) {
        (ClosedFormExample::SumSq, _) => (x0 / s, y0 / s),
        (ClosedFormExample::SquaredSum, Ploidy::Haploid) => {
            let tail = (x0 + y0) / (2.0 * s * s);
            ((x0 - y0) / 2.0 + tail, (y0 - x0) / 2.0 + tail)
        }
        (ClosedFormExample::SquaredSum, Ploidy::Diploid) => (x0 / (s * s), y0 / (s * s)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    fn sel(src: &str) -> SelectionFn {
        SelectionFn::parse_and_bind(src, &GridSpec::square(-2.0, 2.0, 21).unwrap()).unwrap()
    }

    fn opts(mode: Ploidy) -> CanonicalOptions {
        CanonicalOptions { mode, ..Default::default() }
    }

    #[test]
    fn curvature_sum_of_squares() {
        let m = sel("x^2+y^2");
        let s = integrate_canonical(1.0, -0.5, &m, 2.0, 1e-2, opts(Ploidy::Haploid)).unwrap();
        assert_relative_eq!(curvature_x(&s, &m).unwrap(), -2.0 - 2.0 * 2.0, max_relative = 1e-12);
        assert_relative_eq!(curvature_y(&s, &m).unwrap(), -6.0, max_relative = 1e-12);
        for k in &s.history {
            assert_relative_eq!(k.curv_x, -2.0 - 2.0 * k.t, max_relative = 1e-12);
        }
        let s0 = CanonicalState::start(1.0, 1.0, CanonicalOptions { c0x: -3.0, ..Default::default() }, &m).unwrap();
        assert_eq!(curvature_x(&s0, &m).unwrap(), -3.0);
    }

    #[test]
    fn curvature_hyperbola_matches_history_integral() {
        let m = sel("(1-x*y)^2");
        let s = integrate_canonical(0.5, 1.0, &m, 1.0, 1e-3, opts(Ploidy::Haploid)).unwrap();
        let mut int = 0.0;
        for w in s.history.windows(2) {
            int += 0.5 * (w[1].t - w[0].t) * (w[0].ybar.powi(2) + w[1].ybar.powi(2));
        }
        assert_relative_eq!(curvature_x(&s, &m).unwrap(), -2.0 - 2.0 * int, max_relative = 1e-12);
        assert_relative_eq!(s.history.last().unwrap().curv_x, -2.0 - 2.0 * int, max_relative = 1e-12);
    }

    #[test]
    fn example1_trajectory() {
        let m = sel("x^2+y^2");
        let s = integrate_canonical(1.0, -0.5, &m, 3.0, 1e-3, opts(Ploidy::Haploid)).unwrap();
        assert!((s.xbar - 0.25).abs() <= 1e-6 && (s.ybar + 0.125).abs() <= 1e-6, "{} {}", s.xbar, s.ybar);
        assert_eq!(s.t, 3.0);
        assert!(s.history.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(s.history[0].t, 0.0);
    }

    #[test]
    fn example2_projection() {
        let m = sel("(x+y)^2");
        let s = integrate_canonical(1.0, 0.0, &m, 20.0, 1e-3, opts(Ploidy::Haploid)).unwrap();
        assert!((s.xbar - 0.5).abs() <= 3e-3 && (s.ybar + 0.5).abs() <= 3e-3);
        let (cx, cy) = closed_form(ClosedFormExample::SquaredSum, 1.0, 0.0, 20.0, Ploidy::Haploid);
        assert!((s.xbar - cx).abs() <= 1e-6 && (s.ybar - cy).abs() <= 1e-6);
    }

    #[test]
    fn critical_point_is_stationary() {
        let m = sel("(x-0.5)^2 + (y+1)^2 + 3");
        let s = integrate_canonical(0.5, -1.0, &m, 2.0, 0.1, opts(Ploidy::Haploid)).unwrap();
        assert_eq!((s.xbar, s.ybar), (0.5, -1.0));
    }

    #[test]
    fn diploid_reduction() {
        let m = sel("(x+y)^2");
        let s = integrate_canonical(1.0, 1.0, &m, 10.0, 1e-3, opts(Ploidy::Diploid)).unwrap();
        assert!((s.xbar - 1.0 / 121.0).abs() <= 1e-5);
        assert!(s.history.iter().all(|k| (k.xbar - k.ybar).abs() <= 1e-12));
        assert!(integrate_canonical(1.0, 0.5, &m, 1.0, 1e-2, opts(Ploidy::Diploid)).is_err());
    }

    #[test]
    fn concave_curvature_breakdown_is_reported() {
        // ∂xx m = −2 pushes the curvature −2 + 2t through zero at t = 1.
        let m = sel("0 - x^2");
        let e = integrate_canonical(0.3, 0.3, &m, 2.0, 1e-2, opts(Ploidy::Haploid)).unwrap_err();
        match e {
            CanonicalError::Singularity { t, .. } => assert!((t - 1.0).abs() <= 2e-2, "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_point_examples() {
        assert_eq!(fixed_point_example3(1.0, 1.0).unwrap(), (1.0, 1.0));
        let (x, y) = fixed_point_example3(0.5, 2.0).unwrap();
        assert!((x - 0.5).abs() < 1e-12 && (y - 2.0).abs() < 1e-12);
        // quadratic-formula oracle
        let s = (-0.75 + 4.5625f64.sqrt()) / 2.0;
        let (x, y) = fixed_point_example3(0.5, 1.0).unwrap();
        assert!((x - s.sqrt()).abs() < 1e-12 && (y - 1.0 / s.sqrt()).abs() < 1e-12);
        assert!((x - 0.832466).abs() < 1e-5 && (y - 1.201250).abs() < 1e-5, "{x} {y}");
        assert!((x * y - 1.0).abs() <= 1e-12);
        assert!((y * y - x * x - 0.75).abs() <= 1e-12);
        let (a, b) = fixed_point_example3(1.0, 0.5).unwrap();
        assert_eq!((a, b), (y, x));
        assert!(fixed_point_example3(0.0, 1.0).is_err());
        assert!(fixed_point_example3(-1.0, 1.0).is_err());
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form(ClosedFormExample::SumSq, 2.0, -2.0, 1.0, Ploidy::Haploid), (1.0, -1.0));
        assert_eq!(closed_form(ClosedFormExample::SquaredSum, 1.0, 1.0, f64::INFINITY, Ploidy::Haploid), (0.0, 0.0));
        assert_eq!(closed_form(ClosedFormExample::SquaredSum, 2.0, 2.0, 1.0, Ploidy::Diploid), (0.5, 0.5));
        let (x, y) = closed_form(ClosedFormExample::SquaredSum, 1.0, 0.0, 3.0, Ploidy::Haploid);
        assert_eq!((x, y), (0.53125, -0.46875));
    }

    #[test]
    fn trajectory_csv() {
        let m = sel("x^2+y^2");
        let s = integrate_canonical(1.0, 1.0, &m, 0.2, 0.1, opts(Ploidy::Haploid)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,xbar,ybar,curv_x,curv_y\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
