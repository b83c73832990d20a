//! Named configurations for the standard examples and figures.

use crate::config::{CanonicalMode, RunConfig};
use crate::pde::{Bump, Ploidy};

pub const SUM_SQ: &str = "x^2+y^2";
pub const SQUARED_SUM: &str = "(x+y)^2";
pub const HYPERBOLA: &str = "(1-x*y)^2";

/// `(name, description)` for every preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("example1", "m = x^2+y^2 from (1,-0.5)"),
    ("example2", "m = (x+y)^2 from (1,0)"),
    ("example3", "m = (1-xy)^2 from (0.5,1)"),
    ("fig1", "alias of fig1-sum-sq"),
    ("fig1-sum-sq", "two bumps, m = x^2+y^2"),
    ("fig1-squared-sum", "two bumps, m = (x+y)^2"),
    ("fig1-hyperbola", "two bumps, m = (1-xy)^2"),
    ("fig2-sum-sq", "20-pair sweep at eps = 0.01, m = x^2+y^2"),
    ("fig2-squared-sum", "20-pair sweep at eps = 0.01, m = (x+y)^2"),
    ("fig2-hyperbola", "20-pair sweep at eps = 0.01, m = (1-xy)^2"),
    ("diploid", "diploid run, m = (x+y)^2 from (1,1)"),
    ("bv-relaxation", "m = x^2+y^2 started near rho+ to watch I relax"),
];

fn fig1_bumps() -> Vec<Bump> {
    vec![Bump::new(-0.3, 1.3), Bump::new(0.7, -0.5)]
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let base = RunConfig { preset: Some(name.to_string()), ..RunConfig::default() };
    let cfg = match name {
        "example1" => RunConfig { m: SUM_SQ.into(), bumps: vec![Bump::new(1.0, -0.5)], ..base },
        "example2" => RunConfig { m: SQUARED_SUM.into(), bumps: vec![Bump::new(1.0, 0.0)], ..base },
        "example3" => RunConfig { m: HYPERBOLA.into(), bumps: vec![Bump::new(0.5, 1.0)], ..base },
        "fig1" | "fig1-sum-sq" => RunConfig { m: SUM_SQ.into(), bumps: fig1_bumps(), ..base },
        "fig1-squared-sum" => RunConfig { m: SQUARED_SUM.into(), bumps: fig1_bumps(), ..base },
        "fig1-hyperbola" => RunConfig { m: HYPERBOLA.into(), bumps: fig1_bumps(), ..base },
        "fig2-sum-sq" | "fig2-squared-sum" | "fig2-hyperbola" => {
            let m = match name {
                "fig2-sum-sq" => SUM_SQ,
                "fig2-squared-sum" => SQUARED_SUM,
                _ => HYPERBOLA,
            };
            RunConfig {
                m: m.into(),
                epsilon: 0.01,
                nx: 201,
                ny: 201,
                sweep_count: 20,
                canonical: CanonicalMode::On,
                // ODE finals are reported near their limit; x+y decays like (1+t)^-2
                canonical_t_max: Some(5000.0),
                canonical_dt: 0.01,
                ..base
            }
        }
        "diploid" => RunConfig {
            m: SQUARED_SUM.into(),
            mode: Ploidy::Diploid,
            bumps: vec![Bump::new(1.0, 1.0)],
            ..base
        },
        "bv-relaxation" => RunConfig {
            m: SUM_SQ.into(),
            bumps: vec![Bump::new(0.5, -0.5)],
            // ρ₀⁺ = r/κ = 40
            target_mass: Some(39.9),
            t_max: 0.05,
            sample_interval: 0.001,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
