//! Small-variance diagnostics of a density snapshot: the Hopf–Cole potential
//! `u = ε log(ε n)`, the linkage ratio ν, the additivity defect of `u`,
//! conditional slices, support extraction, mode counting and the dρ/dt balance.

use crate::expr::SelectionFn;
use crate::grid::{self, Field2D, Marginals};
use crate::pde::{ModelParams, PdeError, SimState, POSITIVITY_FLOOR_REL};

/// ν is only evaluated where `n > NU_MASK_REL · max n`.
pub const NU_MASK_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HopfColeView {
    pub epsilon: f64,
    pub u: Field2D,
    /// ε log ρ^X(y), length ny.
    pub u_x_marg: Vec<f64>,
    /// ε log ρ^Y(x), length nx.
    pub u_y_marg: Vec<f64>,
    pub u_floor: f64,
    pub clamped: Vec<bool>,
}

impl HopfColeView {
    pub fn max_u(&self) -> f64 {
        self.u.max()
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|c| **c).count()
    }
}

/// Hopf–Cole transform. Nodes at or below the positivity floor are clamped to
/// `u_floor = ε log(ε · floor)`.
pub fn hopf_cole(n: &Field2D, epsilon: f64) -> HopfColeView {
    let floor = POSITIVITY_FLOOR_REL * n.max().max(0.0);
    let u_floor = if floor > 0.0 { epsilon * (epsilon * floor).ln() } else { f64::NEG_INFINITY };
    let mut clamped = Vec::with_capacity(n.values.len());
    let values = n
        .values
        .iter()
        .map(|&v| {
            if v <= floor {
                clamped.push(true);
                u_floor
            } else {
                clamped.push(false);
                epsilon * (epsilon * v).ln()
            }
        })
        .collect();
    let mg = grid::marginals(n);
    HopfColeView {
        epsilon,
        u: Field2D { grid: n.grid.clone(), values },
        u_x_marg: mg.rho_x.iter().map(|r| epsilon * r.ln()).collect(),
        u_y_marg: mg.rho_y.iter().map(|r| epsilon * r.ln()).collect(),
        u_floor,
        clamped,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuField {
    /// ν on masked-in nodes, NaN elsewhere.
    pub nu: Field2D,
    pub mask: Vec<bool>,
    pub observed_min: f64,
    pub observed_max: f64,
}

/// ν(x,y) = ρ^X(y) ρ^Y(x) / (n(x,y) ρ) on nodes with `n > 1e−12 · max n`.
pub fn nu_field(n: &Field2D) -> Result<NuField, PdeError> {
    nu_field_with(n, &grid::marginals(n))
}

pub fn nu_field_with(n: &Field2D, mg: &Marginals) -> Result<NuField, PdeError> {
    if !(mg.rho > 0.0) {
        return Err(PdeError::State(format!("ν needs positive mass, got {}", mg.rho)));
    }
    let g = &n.grid;
    let threshold = NU_MASK_REL * n.max();
    let mut mask = vec![false; g.len()];
    let mut nu = vec![f64::NAN; g.len()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..g.nx {
        for j in 0..g.ny {
            let k = g.index(i, j);
            let v = n.values[k];
            if v > threshold {
                let val = mg.rho_x[j] * mg.rho_y[i] / (v * mg.rho);
                mask[k] = true;
                nu[k] = val;
                lo = lo.min(val);
                hi = hi.max(val);
            }
        }
    }
    Ok(NuField { nu: Field2D { grid: g.clone(), values: nu }, mask, observed_min: lo, observed_max: hi })
}

fn row_col_maxima(v: &HopfColeView) -> (Vec<f64>, Vec<f64>) {
    let g = &v.u.grid;
    // max over y for each x, and max over x for each y
    let mut over_y = vec![f64::NEG_INFINITY; g.nx];
    let mut over_x = vec![f64::NEG_INFINITY; g.ny];
    for i in 0..g.nx {
        for j in 0..g.ny {
            let u = v.u.at(i, j);
            over_y[i] = over_y[i].max(u);
            over_x[j] = over_x[j].max(u);
        }
    }
    (over_y, over_x)
}

fn defect_at(v: &HopfColeView, over_y: &[f64], over_x: &[f64], i: usize, j: usize) -> Option<f64> {
    let k = v.u.grid.index(i, j);
    if v.clamped[k] {
        None
    } else {
        Some((v.u.values[k] - over_y[i] - over_x[j]).abs())
    }
}

/// max over non-clamped nodes of |u(x,y) − max_y′ u(x,y′) − max_x′ u(x′,y)|.
pub fn additivity_defect(v: &HopfColeView) -> f64 {
    let (over_y, over_x) = row_col_maxima(v);
    let g = &v.u.grid;
    let mut worst = 0.0f64;
    for i in 0..g.nx {
        for j in 0..g.ny {
            if let Some(d) = defect_at(v, &over_y, &over_x, i, j) {
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Defect per y-slice, summarised by its worst and median slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDefects {
    pub worst: f64,
    pub median: f64,
}

pub fn additivity_defect_slices(v: &HopfColeView) -> SliceDefects {
    let (over_y, over_x) = row_col_maxima(v);
    let g = &v.u.grid;
    let mut per_slice: Vec<f64> = (0..g.ny)
        .filter_map(|j| {
            (0..g.nx).filter_map(|i| defect_at(v, &over_y, &over_x, i, j)).reduce(f64::max)
        })
        .collect();
    if per_slice.is_empty() {
        return SliceDefects { worst: 0.0, median: 0.0 };
    }
    per_slice.sort_by(f64::total_cmp);
    let mid = per_slice.len() / 2;
    let median = if per_slice.len() % 2 == 1 { per_slice[mid] } else { 0.5 * (per_slice[mid - 1] + per_slice[mid]) };
    SliceDefects { worst: *per_slice.last().unwrap(), median }
}

/// φ^X(·, y_j) = n(·, y_j) / ρ^X(y_j).
pub fn conditional_slice_x(n: &Field2D, y_index: usize) -> Result<Vec<f64>, PdeError> {
    let g = &n.grid;
    if y_index >= g.ny {
        return Err(PdeError::State(format!("y index {y_index} out of range")));
    }
    let col: Vec<f64> = (0..g.nx).map(|i| n.at(i, y_index)).collect();
    let mass = grid::quad1(&col, &g.weights_x());
    if !(mass > 0.0) {
        return Err(PdeError::State(format!("ρ^X vanishes at y index {y_index}")));
    }
    Ok(col.into_iter().map(|v| v / mass).collect())
}

/// φ^Y(x_i, ·) = n(x_i, ·) / ρ^Y(x_i).
pub fn conditional_slice_y(n: &Field2D, x_index: usize) -> Result<Vec<f64>, PdeError> {
    let g = &n.grid;
    if x_index >= g.nx {
        return Err(PdeError::State(format!("x index {x_index} out of range")));
    }
    let row = &n.values[x_index * g.ny..(x_index + 1) * g.ny];
    let mass = grid::quad1(row, &g.weights_y());
    if !(mass > 0.0) {
        return Err(PdeError::State(format!("ρ^Y vanishes at x index {x_index}")));
    }
    Ok(row.iter().map(|v| v / mass).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BVDiagnostic {
    pub t: f64,
    /// dρ/dt from the balance (r − κρ)ρ/ε − ∬ m n/ε.
    pub i: f64,
    pub i_neg: f64,
}

pub fn bv_diagnostic(state: &SimState, m: &SelectionFn, p: &ModelParams) -> BVDiagnostic {
    let g = state.grid();
    let mn = Field2D {
        grid: g.clone(),
        values: state.n.values.iter().zip(m.node_values()).map(|(n, mv)| n * mv).collect(),
    };
    let rho = state.rho();
    let i = ((p.r - p.kappa * rho) * rho - grid::quad2(&mn)) / p.epsilon;
    BVDiagnostic { t: state.t, i, i_neg: (-i).max(0.0) }
}

/// Default support tolerance 4ε log(1/ε).
pub fn default_support_tol(epsilon: f64) -> f64 {
    4.0 * epsilon * (1.0 / epsilon).ln()
}

/// Nodes `(i, j)` with `u ≥ max u − tol`, in row-major order.
pub fn support_set(v: &HopfColeView, tol: f64) -> Vec<(usize, usize)> {
    let g = &v.u.grid;
    let cut = v.max_u() - tol;
    let mut out = Vec::new();
    for i in 0..g.nx {
        for j in 0..g.ny {
            if v.u.at(i, j) >= cut {
                out.push((i, j));
            }
        }
    }
    out
}

/// Largest pairwise node distance within a node set.
pub fn support_diameter(v: &HopfColeView, nodes: &[(usize, usize)]) -> f64 {
    let g = &v.u.grid;
    let pts: Vec<(f64, f64)> = nodes.iter().map(|&(i, j)| (g.x(i), g.y(j))).collect();
    let mut d = 0.0f64;
    for (a, p) in pts.iter().enumerate() {
        for q in &pts[a + 1..] {
            d = d.max(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt());
        }
    }
    d
}

/// Strict local maxima whose value exceeds `rel_threshold · max`. A run of
/// nodes equal to within 1e-12 relative counts once (a peak between two
/// nodes); boundary runs compare with their one neighbour. A profile that is
/// one flat run has no mode.
pub fn mode_count(marg: &[f64], rel_threshold: f64) -> usize {
    let n = marg.len();
    if n == 0 {
        return 0;
    }
    let max = marg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = rel_threshold * max;
    if n == 1 {
        return usize::from(marg[0] > cut);
    }
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut count = 0;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && same(marg[end + 1], marg[start]) {
            end += 1;
        }
        let v = marg[start];
        let left = start == 0 || v > marg[start - 1];
        let right = end == n - 1 || v > marg[end + 1];
        let whole = start == 0 && end == n - 1;
        if left && right && !whole && v > cut {
            count += 1;
        }
        start = end + 1;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::pde::{dt_stable, Bump, InitialCondition, Ploidy, Stepper};
    use approx::assert_relative_eq;

    fn sq(n: usize) -> GridSpec {
        GridSpec::square(-2.0, 2.0, n).unwrap()
    }

    #[test]
    fn hopf_cole_inverts_gaussian() {
        let g = sq(41);
        let eps = 0.05;
        let n = Field2D::from_fn(&g, |x, y| (-(x * x + y * y) / eps).exp() / eps);
        let v = hopf_cole(&n, eps);
        assert_eq!(v.clamped_count(), 0);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let (x, y) = (g.x(i), g.y(j));
                assert!((v.u.at(i, j) + x * x + y * y).abs() < 1e-12);
            }
        }
        let c = 0.3;
        let shifted = hopf_cole(&n.scaled((c / eps).exp()), eps);
        for (a, b) in shifted.u.values.iter().zip(&v.u.values) {
            assert!((a - b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn hopf_cole_clamps_floor_nodes() {
        let g = sq(5);
        let mut n = Field2D::constant(&g, 1.0);
        n.values[3] = 1e-300;
        let v = hopf_cole(&n, 0.1);
        assert!(v.clamped[3]);
        assert_eq!(v.clamped_count(), 1);
        assert_eq!(v.u.values[3], v.u_floor);
    }

    #[test]
    fn nu_is_one_for_product_density() {
        let g = sq(61);
        let n = Field2D::from_fn(&g, |x, y| (-(x - 0.3).powi(2) / 0.1).exp() * (-(y + 0.2).powi(2) / 0.2).exp());
        let nu = nu_field(&n).unwrap();
        assert!((nu.observed_min - 1.0).abs() < 1e-10 && (nu.observed_max - 1.0).abs() < 1e-10);
        assert!(nu.mask.iter().any(|m| !m));
    }

    #[test]
    fn nu_exceeds_one_at_cross_node() {
        let g = sq(101);
        let eps = 0.05;
        let ic = InitialCondition { bumps: vec![Bump::new(-0.3, 1.3), Bump::new(0.7, -0.5)], target_mass: Some(36.0) };
        let p = ModelParams::new(40.0, 1.0, eps, Ploidy::Haploid, 8.0).unwrap();
        let n = ic.build(&g, &p).unwrap();
        let nu = nu_field(&n).unwrap();
        // Node mixing the x of bump 1 with the y of bump 2.
        let (i, j) = (g.nearest_x(-0.3), g.nearest_y(-0.5));
        let k = g.index(i, j);
        // Direct oracle on the explicit two-Gaussian sum.
        let gx = |x: f64, c: f64| (-(x - c).powi(2) / eps).exp();
        let x = g.x(i);
        let y = g.y(j);
        let direct = {
            let raw = |xx: f64, yy: f64| gx(xx, -0.3) * gx(yy, 1.3) + gx(xx, 0.7) * gx(yy, -0.5);
            let wx = g.weights_x();
            let wy = g.weights_y();
            let rho_x: f64 = (0..g.nx).map(|a| wx[a] * raw(g.x(a), y)).sum();
            let rho_y: f64 = (0..g.ny).map(|b| wy[b] * raw(x, g.y(b))).sum();
            let rho: f64 = (0..g.nx).map(|a| wx[a] * (0..g.ny).map(|b| wy[b] * raw(g.x(a), g.y(b))).sum::<f64>()).sum();
            rho_x * rho_y / (raw(x, y) * rho)
        };
        assert!(nu.mask[k]);
        assert!(nu.nu.values[k] > 1.0);
        assert_relative_eq!(nu.nu.values[k], direct, max_relative = 1e-9);
    }

    #[test]
    fn additivity_defect_examples() {
        let g = sq(41);
        let eps = 1.0;
        let additive = Field2D::from_fn(&g, |x, y| (-(x - 0.5).powi(2) - 2.0 * (y + 1.0).powi(2)).exp() / eps);
        // shift so that max u is 0: the additive split then has zero defect
        let v = hopf_cole(&additive, eps);
        assert!(additivity_defect(&v) <= 1e-12, "{}", additivity_defect(&v));
        let nonadd = Field2D::from_fn(&g, |x, y| (-(x * x * y * y)).exp() / eps);
        let v = hopf_cole(&nonadd, eps);
        assert_relative_eq!(additivity_defect(&v), 16.0, max_relative = 1e-12);
        let s = additivity_defect_slices(&v);
        assert_relative_eq!(s.worst, 16.0, max_relative = 1e-12);
        assert!(s.median < s.worst);
    }

    #[test]
    fn conditional_slices() {
        let g = sq(41);
        let n = Field2D::from_fn(&g, |x, y| (-(x - 0.3).powi(2)).exp() * (1.0 + y * y));
        let s0 = conditional_slice_x(&n, 0).unwrap();
        let wx = g.weights_x();
        assert_relative_eq!(grid::quad1(&s0, &wx), 1.0, max_relative = 1e-10);
        for j in 1..g.ny {
            let s = conditional_slice_x(&n, j).unwrap();
            let l1: f64 = s.iter().zip(&s0).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.hx();
            assert!(l1 <= 1e-10);
        }
        let u = conditional_slice_x(&Field2D::constant(&g, 2.0), 5).unwrap();
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let sy = conditional_slice_y(&n, 7).unwrap();
        assert_relative_eq!(grid::quad1(&sy, &g.weights_y()), 1.0, max_relative = 1e-10);
        let mut z = Field2D::constant(&g, 1.0);
        for i in 0..g.nx {
            z.values[g.index(i, 3)] = 0.0;
        }
        assert!(conditional_slice_x(&z, 3).is_err());
    }

    #[test]
    fn bv_sign_without_selection() {
        let g = sq(21);
        let m = SelectionFn::parse_and_bind("0", &g).unwrap();
        let p = ModelParams::for_selection(40.0, 1.0, 0.1, Ploidy::Haploid, &m).unwrap();
        let s = SimState::new(0.0, Field2D::constant(&g, 1.0));
        let b = bv_diagnostic(&s, &m, &p);
        assert!(b.i > 0.0 && b.i_neg == 0.0);
        let s = SimState::new(0.0, Field2D::constant(&g, 40.0 / 16.0));
        let b = bv_diagnostic(&s, &m, &p);
        assert!(b.i.abs() < 1e-10);
        let s = SimState::new(0.0, Field2D::constant(&g, 3.0));
        let b = bv_diagnostic(&s, &m, &p);
        assert_eq!(b.i_neg, -b.i);
    }

    #[test]
    fn support_of_bumps() {
        let g = sq(101);
        let eps = 0.05;
        let one = InitialCondition::single(0.4, -0.6).raw_field(&g, eps);
        let v = hopf_cole(&one, eps);
        let tol = default_support_tol(eps);
        let sup = support_set(&v, tol);
        assert!(sup.contains(&one.argmax_index()));
        // disc of radius sqrt(tol) around the centre
        let r = tol.sqrt() + g.hx();
        for &(i, j) in &sup {
            assert!(((g.x(i) - 0.4).powi(2) + (g.y(j) + 0.6).powi(2)).sqrt() <= r);
        }
        let two = InitialCondition { bumps: vec![Bump::new(-1.0, 1.0), Bump::new(1.0, 0.0)], target_mass: None }
            .raw_field(&g, eps);
        let sup = support_set(&hopf_cole(&two, eps), tol);
        assert!(sup.contains(&(g.nearest_x(-1.0), g.nearest_y(1.0))));
        assert!(sup.contains(&(g.nearest_x(1.0), g.nearest_y(0.0))));
    }

    #[test]
    fn mode_counts() {
        let xs: Vec<f64> = (0..201).map(|k| -2.0 + 0.02 * k as f64).collect();
        let one: Vec<f64> = xs.iter().map(|x| (-(x - 0.3f64).powi(2) / 0.05).exp()).collect();
        assert_eq!(mode_count(&one, 0.1), 1);
        let two: Vec<f64> = xs.iter().map(|x| (-(x - 1.0f64).powi(2) / 0.05).exp() + (-(x + 1.0f64).powi(2) / 0.05).exp()).collect();
        assert_eq!(mode_count(&two, 0.1), 2);
        let small: Vec<f64> = xs.iter().map(|x| (-(x - 1.0f64).powi(2) / 0.05).exp() + 0.05 * (-(x + 1.0f64).powi(2) / 0.05).exp()).collect();
        assert_eq!(mode_count(&small, 0.1), 1);
        assert_eq!(mode_count(&[1.0, 1.0, 1.0], 0.1), 0);
        assert_eq!(mode_count(&[3.0, 1.0, 2.0], 0.1), 2);
        assert_eq!(mode_count(&[0.0, 1.0, 1.0, 0.5, 0.0], 0.1), 1);
        assert_eq!(mode_count(&[2.0, 2.0, 1.0, 3.0], 0.1), 2);
    }

    #[test]
    fn monomorphic_late_state_concentrates_slices() {
        let g = sq(101);
        let m = SelectionFn::parse_and_bind("x^2+y^2", &g).unwrap();
        let p = ModelParams::for_selection(40.0, 1.0, 0.05, Ploidy::Haploid, &m).unwrap();
        let ic = InitialCondition { bumps: vec![Bump::new(-0.3, 1.3), Bump::new(0.7, -0.5)], target_mass: None };
        let s0 = SimState::initial(&ic, &g, &p).unwrap();
        let mut st = Stepper::new(&g, &m, &p).unwrap();
        let s = st.advance_to(s0, 1.0, dt_stable(&p, &m)).unwrap();
        let (ia, ja) = s.n.argmax_index();
        let slice = conditional_slice_x(&s.n, ja).unwrap();
        let wx = g.weights_x();
        // width ~ sqrt(eps/4) ~ 0.11 at t = 1; ten nodes is ~3.5 sd
        let lo = ia.saturating_sub(10);
        let hi = (ia + 10).min(g.nx - 1);
        let near: f64 = (lo..=hi).map(|i| wx[i] * slice[i]).sum();
        assert!(near >= 0.97, "{near}");
        let v = hopf_cole(&s.n, p.epsilon);
        let tol = default_support_tol(p.epsilon);
        let sup = support_set(&v, tol);
        assert!(sup.contains(&(ia, ja)));
        let diam = support_diameter(&v, &sup);
        assert!(diam <= 6.0 * g.hx() + 2.0 * tol.sqrt(), "{diam}");
    }
}
