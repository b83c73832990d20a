//! Acceptance criteria A1-A11. Runs without the libtest harness so that every
//! criterion prints one `A<k> PASS|FAIL` line; exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use dirac_alleles::asymptotics::bv_diagnostic;
use dirac_alleles::canonical::{closed_form, fixed_point_example3, integrate_canonical, CanonicalOptions, ClosedFormExample};
use dirac_alleles::config::RunConfig;
use dirac_alleles::expr::{parse_selection, Var};
use dirac_alleles::harness::{run_in_memory, RunOutcome};
use dirac_alleles::pde::{dt_stable, InitialCondition, ModelParams, Ploidy, SimState, Stepper};
use dirac_alleles::{GridSpec, SelectionFn};

type Verdict = (bool, String);

fn verdict(pass: bool, detail: String) -> Verdict {
    (pass, detail)
}

fn preset(name: &str, overrides: &[(&str, &str)]) -> RunConfig {
    let mut o: Vec<(String, String)> = vec![("preset".into(), name.into())];
    o.extend(overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    RunConfig::resolve(&[], &o).unwrap()
}

fn example1_run() -> &'static RunOutcome {
    static RUN: OnceLock<RunOutcome> = OnceLock::new();
    RUN.get_or_init(|| run_in_memory(&preset("example1", &[])).unwrap())
}

fn box_grid() -> GridSpec {
    GridSpec::square(-2.0, 2.0, 101).unwrap()
}

fn a01_example1_agreement() -> Verdict {
    let out = example1_run();
    let h = out.final_state.grid().hx();
    let tol = (2.0 * h).max(0.06);
    let (x, y) = out.final_argmax();
    let pde_err = (x - 0.25).abs().max((y + 0.125).abs());
    let m = SelectionFn::parse_and_bind("x^2+y^2", &box_grid()).unwrap();
    let c = integrate_canonical(1.0, -0.5, &m, 3.0, 1e-3, CanonicalOptions::default()).unwrap();
    let ode_err = (c.xbar - 0.25).abs().max((c.ybar + 0.125).abs());
    verdict(
        pde_err <= tol && ode_err <= 1e-6,
        format!("pde argmax=({x:.4},{y:.4}) err={pde_err:.3e} tol={tol}; ode err={ode_err:.3e} tol=1e-6"),
    )
}

fn a02_example2_projection() -> Verdict {
    let g = box_grid();
    let m = SelectionFn::parse_and_bind("(x+y)^2", &g).unwrap();
    let c = integrate_canonical(1.0, 0.0, &m, 20.0, 1e-3, CanonicalOptions::default()).unwrap();
    let ode_err = (c.xbar - 0.5).abs().max((c.ybar + 0.5).abs());
    let out = run_in_memory(&preset("example2", &[])).unwrap();
    let (x, y) = out.final_argmax();
    let (cx, cy) = closed_form(ClosedFormExample::SquaredSum, 1.0, 0.0, 3.0, Ploidy::Haploid);
    let tol = (2.0 * g.hx()).max(0.08);
    let pde_err = (x - cx).abs().max((y - cy).abs());
    verdict(
        ode_err <= 3e-3 && pde_err <= tol && (cx - 0.53125).abs() < 1e-12 && (cy + 0.46875).abs() < 1e-12,
        format!("ode(20)=({:.5},{:.5}) err={ode_err:.2e} tol=3e-3; pde(3)=({x:.4},{y:.4}) err={pde_err:.3e} tol={tol}", c.xbar, c.ybar),
    )
}

fn a03_example3_fixed_point() -> Verdict {
    let m = SelectionFn::parse_and_bind("(1-x*y)^2", &box_grid()).unwrap();
    let (xf, yf) = fixed_point_example3(0.5, 1.0).unwrap();
    let c = integrate_canonical(0.5, 1.0, &m, 1000.0, 1e-2, CanonicalOptions::default()).unwrap();
    let err = (c.xbar - xf).abs().max((c.ybar - yf).abs());
    let q0 = 1.0 - 0.25;
    let drift = c.history.iter().map(|s| (s.ybar * s.ybar - s.xbar * s.xbar - q0).abs()).fold(0.0, f64::max);
    verdict(
        err <= 1e-3 && drift <= 1e-6,
        format!("ode(1000)=({:.5},{:.5}) oracle=({xf:.5},{yf:.5}) err={err:.3e} tol=1e-3; drift(y^2-x^2)={drift:.3e} tol=1e-6", c.xbar, c.ybar),
    )
}

fn a04_rho_bounds() -> Verdict {
    let out = example1_run();
    let (lo, hi) = (32.0 - 0.04, 40.0 + 0.04);
    let bad = out.rows.iter().filter(|r| r.rho < lo || r.rho > hi).count();
    let min = out.rows.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min);
    let max = out.rows.iter().map(|r| r.rho).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad == 0 && out.invariants.rho_checked && out.invariants.rho_bounds == 0 && out.rows.len() > 10,
        format!("{} samples, rho in [{min:.4},{max:.4}] vs [{lo},{hi}], violations={bad}", out.rows.len()),
    )
}

fn a05_nu_bounds() -> Verdict {
    let out = example1_run();
    let (lo, hi) = (0.2 * 0.999, 1.8 * 1.001);
    let bad = out.rows.iter().filter(|r| r.nu_min < lo || r.nu_max > hi).count();
    let min = out.rows.iter().map(|r| r.nu_min).fold(f64::INFINITY, f64::min);
    let max = out.rows.iter().map(|r| r.nu_max).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad == 0 && out.hypotheses.nu0_min > 1.0 - 1e-10 && out.hypotheses.nu0_max < 1.0 + 1e-10,
        format!("nu in [{min:.6},{max:.6}] vs [{lo},{hi}], violations={bad}"),
    )
}

fn a06_additivity_defect_trend() -> Verdict {
    let defects: Vec<f64> = ["0.1", "0.05", "0.025"]
        .iter()
        .map(|e| {
            let out = run_in_memory(&preset("example1", &[("epsilon", e), ("t_max", "1")])).unwrap();
            out.rows.last().unwrap().add_defect
        })
        .collect();
    verdict(
        defects[0] > defects[1] && defects[1] > defects[2],
        format!("defect(t=1) at eps 0.1/0.05/0.025 = {:.4e}/{:.4e}/{:.4e}", defects[0], defects[1], defects[2]),
    )
}

fn a07_monomorphization() -> Verdict {
    let out = run_in_memory(&preset("fig1", &[("t_max", "1")])).unwrap();
    let first = &out.rows[0];
    let last = out.rows.last().unwrap();
    verdict(
        last.t == 1.0 && last.modes_x == 1 && last.modes_y == 1,
        format!("modes at t=0: ({},{}), at t=1: ({},{})", first.modes_x, first.modes_y, last.modes_x, last.modes_y),
    )
}

fn a08_bv_decay() -> Verdict {
    let cfg = preset("bv-relaxation", &[]);
    let g = cfg.grid().unwrap();
    let m = SelectionFn::parse_and_bind(&cfg.m, &g).unwrap();
    let p = ModelParams::for_selection(cfg.r, cfg.kappa, cfg.epsilon, cfg.mode, &m).unwrap();
    let ic = InitialCondition { bumps: cfg.bumps.clone(), target_mass: cfg.target_mass };
    let s0 = SimState::initial(&ic, &g, &p).unwrap();
    let i0 = bv_diagnostic(&s0, &m, &p);
    let t_star = 5.0 * p.epsilon / p.delta;
    let mut st = Stepper::new(&g, &m, &p).unwrap();
    let s = st.advance_to(s0, t_star, dt_stable(&p, &m)).unwrap();
    let i1 = bv_diagnostic(&s, &m, &p);
    let bound = 1.1 * i0.i_neg * (-5.0f64).exp();
    verdict(
        i0.i < 0.0 && i1.i_neg <= bound,
        format!("I(0)={:.4e}, I_neg({t_star:.5})={:.4e} <= {bound:.4e}", i0.i, i1.i_neg),
    )
}

fn a09_diploid_reductions() -> Verdict {
    let g = box_grid();
    let m = SelectionFn::parse_and_bind("(x+y)^2", &g).unwrap();
    let opts = CanonicalOptions { mode: Ploidy::Diploid, ..CanonicalOptions::default() };
    let c = integrate_canonical(1.0, 1.0, &m, 10.0, 1e-3, opts).unwrap();
    let exact = 1.0 / 121.0;
    let ode_err = (c.xbar - exact).abs().max((c.ybar - exact).abs());
    let out = run_in_memory(&preset("diploid", &[])).unwrap();
    let asym = out.final_state.n.asymmetry();
    let (i, j) = out.final_state.n.argmax_index();
    let off = i.abs_diff(j);
    verdict(
        ode_err <= 1e-5 && asym <= 1e-12 && off <= 1,
        format!("ode(10) err={ode_err:.3e} tol=1e-5; pde asymmetry={asym:.3e} tol=1e-12; argmax nodes ({i},{j})"),
    )
}

fn a10_parser_derivative_suite() -> Verdict {
    let presets = ["x^2+y^2", "(x+y)^2", "(1-x*y)^2"];
    let stated: [fn(f64, f64) -> (f64, f64); 3] = [
        |x, y| (2.0 * x, 2.0 * y),
        |x, y| (2.0 * (x + y), 2.0 * (x + y)),
        |x, y| (-2.0 * y * (1.0 - x * y), -2.0 * x * (1.0 - x * y)),
    ];
    // fixed LCG so the point set is stable without a dev-dependency
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        -2.0 + 4.0 * ((state >> 11) as f64 / (1u64 << 53) as f64)
    };
    let (mut worst_fd, mut worst_stated) = (0.0f64, 0.0f64);
    for (src, grad) in presets.iter().zip(stated) {
        let e = parse_selection(src).unwrap();
        let again = parse_selection(&e.to_string()).unwrap();
        let dx = e.differentiate(Var::X);
        let dy = e.differentiate(Var::Y);
        for k in 0..1000 {
            let (x, y) = (next(), next());
            assert_eq!(e.eval(x, y).unwrap(), again.eval(x, y).unwrap());
            let h = 1e-5;
            let f = |a: f64, b: f64| e.eval(a, b).unwrap();
            let fdx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let fdy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            let (sx, sy) = (dx.eval(x, y).unwrap(), dy.eval(x, y).unwrap());
            worst_fd = worst_fd.max((sx - fdx).abs() / sx.abs().max(1.0)).max((sy - fdy).abs() / sy.abs().max(1.0));
            if k < 100 {
                let (gx, gy) = grad(x, y);
                worst_stated = worst_stated.max((sx - gx).abs()).max((sy - gy).abs());
            }
        }
    }
    verdict(
        worst_fd <= 1e-6 && worst_stated <= 1e-10,
        format!("symbolic vs FD rel err={worst_fd:.3e} tol=1e-6; vs stated gradients={worst_stated:.3e} tol=1e-10"),
    )
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli(args: &[&str]) {
    let st = Command::new(env!("CARGO_BIN_EXE_dirac-alleles")).args(args).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
}

fn a11_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let d = |s: &str| tmp.path().join(s).display().to_string();
    let run = ["--preset", "fig1", "--grid", "41", "--tmax", "0.3"];
    for name in ["run_a", "run_b"] {
        cli(&[&["run"], &run[..], &["--out", &d(name)]].concat());
    }
    let sweep = ["--preset", "fig2-squared-sum", "--grid", "41", "--tmax", "0.2", "--seed", "11", "--set", "sweep_count=3", "--set", "canonical_t_max=10"];
    cli(&[&["sweep"], &sweep[..], &["--out", &d("sweep_a"), "--jobs", "1"]].concat());
    cli(&[&["sweep"], &sweep[..], &["--out", &d("sweep_b"), "--jobs", "3"]].concat());
    let (ra, rb) = (csv_bytes(&tmp.path().join("run_a")), csv_bytes(&tmp.path().join("run_b")));
    let (sa, sb) = (csv_bytes(&tmp.path().join("sweep_a")), csv_bytes(&tmp.path().join("sweep_b")));
    verdict(
        ra == rb && sa == sb && ra.len() == 3 && sa.len() == 7,
        format!("run: {} csv files identical={}; sweep: {} csv files identical={}", ra.len(), ra == rb, sa.len(), sa == sb),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("A1", a01_example1_agreement),
        ("A2", a02_example2_projection),
        ("A3", a03_example3_fixed_point),
        ("A4", a04_rho_bounds),
        ("A5", a05_nu_bounds),
        ("A6", a06_additivity_defect_trend),
        ("A7", a07_monomorphization),
        ("A8", a08_bv_decay),
        ("A9", a09_diploid_reductions),
        ("A10", a10_parser_derivative_suite),
        ("A11", a11_determinism),
    ];
    let handles: Vec<_> = criteria.iter().map(|&(id, f)| (id, std::thread::spawn(f))).collect();
    let mut failed = Vec::new();
    for (id, h) in handles {
        let (pass, detail) = h.join().unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    println!("acceptance: {} passed, {} failed {:?}", criteria.len() - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
