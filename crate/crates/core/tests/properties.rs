#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use dampwave::config::{parse_config, serialize_config, ExperimentConfig, InitialData};
use dampwave::decay::{classify_halving, fit_power_law, DecayRegime, EnergyTrace};
use dampwave::fdtd::{init_grid, run};
use dampwave::geometry::{DampingField, DampingProfile, DampingSupport, DomainSpec, Region};
use dampwave::packets::{cancellation_residual, eval_a, image_integrand, modulus_a, PacketParams};
use dampwave::rays::{advance_to_boundary, first_hit_time, position_after, trace, Ray};
use dampwave::spectral::{build_basis, damped_trace, evolve_damped, DampingMatrix, ModalState};
use dampwave::Error;

fn rect() -> DomainSpec {
    DomainSpec::with_default_collar(2, 1.3, 1.3, 0.9, 0.2).unwrap()
}

fn cube() -> DomainSpec {
    DomainSpec::with_default_collar(3, 1.0, 1.4, 1.1, 0.2).unwrap()
}

fn domain(three: bool) -> DomainSpec {
    if three {
        cube()
    } else {
        rect()
    }
}

/// Point strictly inside the box from unit coordinates in (-1, 1).
fn inside(spec: &DomainSpec, unit: &[f64]) -> Vec<f64> {
    spec.half_lengths().iter().zip(unit).map(|(m, u)| 0.99 * m * u).collect()
}

/// Folds free motion back into `[-m, m]` by reflection.
fn triangle_wave(y: f64, m: f64) -> f64 {
    let u = (y + m).rem_euclid(4.0 * m);
    (if u > 2.0 * m { 4.0 * m - u } else { u }) - m
}

fn coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3)
}

fn direction() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn direction_stays_unit_over_many_reflections(three: bool, p in coords(), v in direction()) {
        let spec = domain(three);
        let d = spec.dim();
        let ray = Ray::new(&spec, &inside(&spec, &p[..d]), &v[..d]).unwrap();
        match trace(&spec, &ray, 10_000) {
            Ok(end) => {
                prop_assert_eq!(end.reflections, 10_000);
                prop_assert!((end.direction_norm() - 1.0).abs() <= 1e-12);
                prop_assert!(spec.in_closed_box(&end.position));
            }
            Err(Error::Corner { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn reversed_ray_retraces_its_path(three: bool, p in coords(), v in direction(), k in 0u64..=100) {
        let spec = domain(three);
        let d = spec.dim();
        let start = inside(&spec, &p[..d]);
        let ray = Ray::new(&spec, &start, &v[..d]).unwrap();
        let Ok(after) = trace(&spec, &ray, k) else { return Ok(()) };
        // Step halfway into the next segment so the reversed ray starts off the wall.
        let Ok((_, _, seg)) = advance_to_boundary(&spec, &after) else { return Ok(()) };
        let travelled = after.clock + 0.5 * seg;
        let mid = position_after(&spec, &ray, travelled).unwrap();
        let back_dir: Vec<f64> = after.direction.iter().map(|x| -x).collect();
        let back = Ray::new(&spec, &mid, &back_dir).unwrap();
        match position_after(&spec, &back, travelled) {
            Ok(home) => {
                for (a, b) in home.iter().zip(&start) {
                    prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", home, start);
                }
            }
            Err(Error::Corner { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn billiard_matches_unfolded_free_motion(three: bool, p in coords(), v in direction(), s in 0.0f64..60.0) {
        let spec = domain(three);
        let d = spec.dim();
        let ray = Ray::new(&spec, &inside(&spec, &p[..d]), &v[..d]).unwrap();
        match position_after(&spec, &ray, s) {
            Ok(x) => {
                let half = spec.half_lengths();
                for axis in 0..d {
                    let free = ray.position[axis] + s * ray.direction[axis];
                    let folded = triangle_wave(free, half[axis]);
                    prop_assert!((x[axis] - folded).abs() <= 1e-10, "axis {axis}: {} vs {folded}", x[axis]);
                }
            }
            Err(Error::Corner { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn union_is_reached_no_later_than_collar(three: bool, p in coords(), v in direction()) {
        let spec = domain(three);
        let d = spec.dim();
        let ray = Ray::new(&spec, &inside(&spec, &p[..d]), &v[..d]).unwrap();
        let horizon = 4.0 * spec.diameter();
        let (Ok(u), Ok(w)) = (
            first_hit_time(&spec, &ray, Region::Union, horizon),
            first_hit_time(&spec, &ray, Region::Omega, horizon),
        ) else {
            return Ok(());
        };
        let inf = f64::INFINITY;
        prop_assert!(u.unwrap_or(inf) <= w.unwrap_or(inf));
    }

    #[test]
    fn observation_box_and_collar_are_disjoint(three: bool, p in coords(), alpha in 0.1f64..10.0) {
        let spec = domain(three);
        let x = inside(&spec, &p[..spec.dim()]);
        prop_assert!(!(spec.in_omega0(&x) && spec.in_omega(&x)));
        let indicator = DampingField::lateral(DampingProfile::Indicator, alpha).unwrap();
        let a = indicator.alpha_at(&spec, &x).unwrap();
        prop_assert_eq!(a == 0.0, !spec.in_omega(&x));
        for profile in [DampingProfile::SmoothBump, DampingProfile::Uniform] {
            for support in [DampingSupport::Lateral, DampingSupport::Boundary] {
                let f = DampingField::new(profile, support, alpha).unwrap();
                prop_assert!(f.alpha_at(&spec, &x).unwrap() >= 0.0);
            }
        }
    }
}

fn wobbly_trace(amp: f64, delta: f64, wobble: f64) -> EnergyTrace {
    let times: Vec<f64> = (1..=200).map(|k| 0.25 * k as f64).collect();
    EnergyTrace::from_fn(times, |t| amp * t.powf(-delta) * (1.0 + wobble * (3.0 * t).sin())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_is_scale_equivariant(amp in 0.1f64..10.0, delta in 0.2f64..3.0, wobble in 0.0f64..0.3, k in 1e-3f64..1e3) {
        let tr = wobbly_trace(amp, delta, wobble);
        let scaled = EnergyTrace::new(tr.times.clone(), tr.energies.iter().map(|e| k * e).collect(), None).unwrap();
        let a = fit_power_law(&tr, (2.0, 40.0)).unwrap();
        let b = fit_power_law(&scaled, (2.0, 40.0)).unwrap();
        prop_assert!((b.delta - a.delta).abs() <= 1e-10 * (1.0 + a.delta));
        prop_assert!((b.amplitude / (k * a.amplitude) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn fit_is_dilation_covariant(amp in 0.1f64..10.0, delta in 0.2f64..3.0, dilation in 0.2f64..5.0) {
        let times: Vec<f64> = (1..=200).map(|k| 0.25 * k as f64).collect();
        let tr = EnergyTrace::from_fn(times, |t| amp * (dilation * t).powf(-delta)).unwrap();
        let fit = fit_power_law(&tr, (1.0, 40.0)).unwrap();
        prop_assert!((fit.delta - delta).abs() <= 1e-10);
        prop_assert!((fit.amplitude / (amp * dilation.powf(-delta)) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn halving_ratios_of_pure_laws(rate in 0.05f64..2.0, delta in 0.5f64..3.0) {
        let times: Vec<f64> = (0..=100_000).map(|k| 0.01 * k as f64).collect();
        let exp = EnergyTrace::from_fn(times.iter().map(|t| t / (5.0 * rate)).collect(), |t| (-rate * t).exp()).unwrap();
        let rep = classify_halving(&exp, 0).unwrap();
        prop_assert!(!rep.ratios.is_empty());
        for r in &rep.ratios {
            prop_assert!((r - 1.0).abs() <= 1e-6, "{r}");
        }
        prop_assert_eq!(rep.regime, DecayRegime::Exponential);
        let law = EnergyTrace::from_fn(times, |t| (1.0 + t).powf(-delta)).unwrap();
        let rep = classify_halving(&law, 1).unwrap();
        let expected = 2f64.powf(1.0 / delta);
        prop_assert!(!rep.ratios.is_empty());
        for r in &rep.ratios {
            prop_assert!((r - expected).abs() <= 1e-6, "{r} vs {expected}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn undamped_galerkin_conserves_energy(seed in any::<u64>(), periods in 1.0f64..100.0) {
        let basis = Arc::new(build_basis(&rect(), 40).unwrap());
        let state = ModalState::random_smooth(basis.clone(), seed);
        let period = 2.0 * std::f64::consts::PI / basis.mu(0).sqrt();
        let e0 = state.energy_g();
        let later = evolve_damped(&state, &DampingMatrix::zero(basis.len()), periods * period).unwrap();
        prop_assert!((later.energy_g() - e0).abs() <= 1e-10 * e0);
    }

    #[test]
    fn damped_galerkin_energy_decreases(seed in any::<u64>(), entries in prop::collection::vec(-1.0f64..1.0, 36)) {
        let basis = Arc::new(build_basis(&rect(), 6).unwrap());
        let b = DMatrix::from_vec(6, 6, entries);
        let d = DampingMatrix::from_matrix(&b * b.transpose());
        let state = ModalState::random_smooth(basis, seed);
        let run = damped_trace(&state, &d, 10.0, 0.1).unwrap();
        let tr = run.trace;
        let diss = tr.dissipation.as_ref().unwrap();
        let e0 = tr.energies[0];
        for k in 1..tr.len() {
            prop_assert!(tr.energies[k] <= tr.energies[k - 1] * (1.0 + 1e-12));
            prop_assert!((tr.energies[k] + diss[k] - e0).abs() <= 1e-9 * e0);
        }
    }

    #[test]
    fn fdtd_balance_and_monotone_dissipation(alpha in 0.0f64..5.0, smooth: bool, kx in 1usize..3, ky in 1usize..3) {
        let spec = DomainSpec::with_default_collar(2, 1.0, 1.0, 1.0, 0.2).unwrap();
        let profile = if smooth { DampingProfile::SmoothBump } else { DampingProfile::Indicator };
        let field = DampingField::lateral(profile, alpha).unwrap();
        let pi = std::f64::consts::PI;
        let w0 = |x: &[f64]| (0.5 * kx as f64 * pi * (x[0] + 1.0)).sin() * (0.5 * ky as f64 * pi * (x[1] + 1.0)).sin();
        let mut g = init_grid(&spec, &field, 32, 0.02, w0, |_| 0.0).unwrap();
        let tr = run(&mut g, 4.0, 0.1).unwrap();
        let diss = tr.dissipation.as_ref().unwrap();
        let e0 = tr.energies[0];
        for k in 1..tr.len() {
            prop_assert!(diss[k] >= diss[k - 1]);
            prop_assert!((tr.energies[k] + diss[k] - e0).abs() <= 5e-3 * e0);
        }
    }

    #[test]
    fn fdtd_keeps_mirror_symmetry(alpha in 0.0f64..5.0, c in -1.0f64..1.0, res in 8usize..24) {
        let spec = DomainSpec::with_default_collar(2, 1.0, 1.0, 1.0, 0.2).unwrap();
        let field = DampingField::lateral(DampingProfile::SmoothBump, alpha).unwrap();
        let w0 = |x: &[f64]| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]) * (1.0 + c * x[1] + x[0] * x[0]);
        let mut g = init_grid(&spec, &field, res, 0.02, w0, |_| 0.0).unwrap();
        for _ in 0..150 {
            g.step().unwrap();
        }
        let n = res + 1;
        for i in 0..n {
            for j in 0..n {
                let a = g.w_curr[i * n + j];
                prop_assert!((a - g.w_curr[(n - 1 - i) * n + j]).abs() <= 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_modulus_and_reflection_cancellation(
        x in prop::array::uniform3(-2.0f64..2.0),
        t in -4.0f64..4.0,
        s in 0.0f64..30.0,
        h in 0.01f64..1.0,
        xi_lateral in prop::array::uniform2(-5.0f64..5.0),
        window in 0.0f64..=1.0,
        tau in -5.0f64..5.0,
        step in 0.05f64..=1.0,
        n in -4i64..=4,
    ) {
        prop_assert!((eval_a(x, t, s, h).norm() - modulus_a(x, t, s, h)).abs() <= 1e-12);
        let spec = DomainSpec::with_default_collar(3, 2.0, 2.0, 1.0, 0.3).unwrap();
        let p = PacketParams::new(&spec, spec.h_o() * step, [0.1, -0.1, 0.2], 3).unwrap();
        let (lo, hi) = p.xi3_window();
        let xi = [xi_lateral[0], xi_lateral[1], lo + window * (hi - lo)];
        let on_face = [x[0], x[1], if n % 2 == 0 { p.sigma * p.rho } else { -p.sigma * p.rho }];
        let scale = image_integrand(n, on_face, t, s, xi, tau, &p).norm();
        let r = cancellation_residual(n, x[0], x[1], t, s, xi, tau, &p).norm();
        prop_assert!(r <= 1e-13 * scale, "residual {r} of {scale}");
    }
}

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        0u64..(i64::MAX as u64),
        (0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0, 0.02f64..0.2),
        (0.0f64..50.0, 0usize..3, any::<bool>()),
        (1.0f64..100.0, 1usize..200, 0usize..3),
        (0.01f64..1.0, 1.0f64..3.0, 0usize..5),
    )
        .prop_map(|(seed, (m1, m2, rho, r_o), (alpha, profile, boundary), (t_final, modes, preset), (w, c1, skip))| {
            let mut c = ExperimentConfig { seed, ..Default::default() };
            c.domain.dim = 3;
            c.domain.m1 = m1;
            c.domain.m2 = m2;
            c.domain.rho = rho;
            c.domain.r_o = r_o;
            c.domain.collar = 0.5 * r_o;
            c.damping.alpha_max = alpha;
            c.damping.profile = [DampingProfile::Indicator, DampingProfile::SmoothBump, DampingProfile::Uniform][profile];
            c.damping.support = if boundary { DampingSupport::Boundary } else { DampingSupport::Lateral };
            c.solver.t_final = t_final;
            c.solver.record_every = w;
            c.solver.basis = dampwave::config::BasisChoice::Lowest(modes);
            c.initial = match preset {
                0 => InitialData::SingleMode { mode: 1 + modes / 2, velocity: skip % 2 == 0 },
                1 => InitialData::TrappedStack { count: 1 + skip },
                _ => InitialData::RandomSmooth,
            };
            c.analysis.fit_window = Some((w, t_final));
            c.analysis.skip = skip;
            c.lemma.c1 = c1;
            c
        })
}

proptest! {
    #[test]
    fn config_survives_serialization(c in config_strategy()) {
        let text = serialize_config(&c);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(serialize_config(&back), text);
    }
}
