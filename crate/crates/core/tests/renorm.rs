mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use torus_renorm::basis::{golden_basis, plastic_basis, KTBasis};
use torus_renorm::fourier::{FourierField, MultiIndex, NormKind, Window};
use torus_renorm::renorm::{
    pullback_t, pushforward_t, renorm_iterate, renorm_step, rescale_time, IterStatus,
    OverflowPolicy, RenormConfig, RenormError, RescaleMode,
};
use torus_renorm::resonance::ResonanceParams;

const K: u32 = 10;

fn golden_cfg() -> RenormConfig {
    RenormConfig::auto(golden_basis(), K, 0.6, 0.5).unwrap()
}

fn dist(f: &FourierField, cfg: &RenormConfig) -> f64 {
    f.sub(&cfg.omega_field()).norm(NormKind::Prime(cfg.rho()))
}

fn pair(k: &[i32], v: &[f64]) -> Vec<(MultiIndex, Vec<num_complex::Complex64>)> {
    let v: Vec<_> = v.iter().map(|&x| c(x, 0.0)).collect();
    let neg: Vec<i32> = k.iter().map(|x| -x).collect();
    vec![(MultiIndex(k.to_vec()), v.clone()), (MultiIndex(neg), v)]
}

/// Resonant modes `k ≠ 0` whose pullback image `T*k` is (or is not) in the window.
fn resonant_modes(b: &KTBasis, p: &ResonanceParams, radius: u32, fits: bool) -> Vec<Vec<i32>> {
    let w = Window::get(b.d, radius);
    w.positions()
        .filter(|&q| q != w.zero_position())
        .map(|q| w.mode(q).to_vec())
        .filter(|k| p.is_resonant(k))
        .filter(|k| {
            let img: Vec<i32> = (0..b.d)
                .map(|j| (0..b.d).map(|i| b.t[i][j] as i32 * k[i]).sum())
                .collect();
            w.position(&img).is_some() == fits
        })
        .collect()
}

#[test]
fn linear_flow_is_fixed() {
    let cfg = golden_cfg();
    let out = renorm_step(&cfg.omega_field(), &cfg).unwrap();
    assert!(dist(&out.field, &cfg) < 1e-14);
    assert!(out.u.is_zero());
    assert!((out.rescale.re - 1.0 / cfg.basis.lambda1()).abs() < 1e-14);

    let mut lam = cfg.clone();
    lam.rescale_mode = RescaleMode::Lambda1;
    assert!(dist(&renorm_step(&lam.omega_field(), &lam).unwrap().field, &lam) < 1e-14);
}

#[test]
fn multiples_of_omega_collapse() {
    let cfg = golden_cfg();
    for s in [0.5, 2.0, -1.0, 7.0] {
        let x = cfg.omega_field().scale(s);
        let y = renorm_step(&x, &cfg).unwrap().field;
        assert!(dist(&y, &cfg) < 1e-13, "scale {s}");
    }
}

#[test]
fn constant_fields_stay_constant() {
    let cfg = golden_cfg();
    let x = FourierField::constant(&[0.9, 0.4], K);
    let y = renorm_step(&x, &cfg).unwrap().field;
    assert_eq!(y.nonconstant().mode_count(), 0);
    // The mean lands on ω up to the linear action on the transverse direction.
    let m = y.mean();
    assert!(m.iter().all(|z| z.im.abs() < 1e-15));
    let dual = cfg.basis.omega_bar_dot(&m);
    assert!((dual.re - 1.0).abs() < 1e-14);
}

#[test]
fn real_input_gives_real_output() {
    let cfg = golden_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f =
        with_prime_norm(&random_field(&mut rng, 2, K, 0.7, 1.0, true), 0.6, 1e-3).with_real(true);
    let out = renorm_step(&cfg.omega_field().add(&f), &cfg).unwrap();
    assert!(out.field.is_real());
    assert!(out.field.hermitian_defect() < 1e-15);
    assert!(out.u.hermitian_defect() < 1e-14);
}

#[test]
fn pullback_moves_mode_to_transpose_image() {
    let cfg = golden_cfg();
    let b = &cfg.basis;
    let k = resonant_modes(b, &cfg.params, K, true)[0].clone();
    let v = [c(0.3, 0.1), c(-0.2, 0.05)];
    let x = FourierField::from_modes(2, K, false, [(MultiIndex(k.clone()), v.to_vec())]).unwrap();
    let (y, rep) = pullback_t(&x, b, &cfg.params, OverflowPolicy::Error).unwrap();
    assert_eq!(rep.dropped_nonresonant, 0.0);
    assert_eq!(y.mode_count(), 1);
    let img: Vec<i32> = (0..2)
        .map(|j| (0..2).map(|i| b.t[i][j] as i32 * k[i]).sum())
        .collect();
    let got = y.coeff(&MultiIndex(img));
    let want = b.apply_t_inv(&v);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).norm() < 1e-15);
    }
}

#[test]
fn pushforward_inverts_pullback_on_fitting_modes() {
    let cfg = golden_cfg();
    let b = &cfg.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let modes: Vec<_> = resonant_modes(b, &cfg.params, K, true)
        .into_iter()
        .map(|k| {
            use rand::Rng;
            (
                MultiIndex(k),
                vec![
                    c(rng.gen_range(-1.0..1.0), 0.0),
                    c(0.0, rng.gen_range(-1.0..1.0)),
                ],
            )
        })
        .collect();
    assert!(modes.len() > 3);
    let x = FourierField::from_modes(2, K, false, modes).unwrap();
    let (y, rep) = pullback_t(&x, b, &cfg.params, OverflowPolicy::Error).unwrap();
    assert_eq!(rep.overflow_modes, 0);
    let back = pushforward_t(&y, b).unwrap();
    assert!(max_coeff_diff(&back, &x) < 1e-14);
}

#[test]
fn pullback_discards_nonresonant_mass() {
    let cfg = golden_cfg();
    let x = FourierField::from_modes(2, K, true, pair(&[1, 0], &[0.25, 0.5])).unwrap();
    assert!(!cfg.params.is_resonant(&[1, 0]));
    let (y, rep) = pullback_t(&x, &cfg.basis, &cfg.params, OverflowPolicy::Drop).unwrap();
    assert!(y.is_zero());
    assert!((rep.dropped_nonresonant - 1.5).abs() < 1e-15);
}

#[test]
fn overflow_policies() {
    // Plastic at power 1 fails the cone inclusion, so resonant modes can leave the window.
    let b = plastic_basis();
    let p = ResonanceParams::new(b.omega.clone(), 0.1, 0.8).unwrap();
    let out = resonant_modes(&b, &p, 8, false);
    assert!(!out.is_empty());
    let x = FourierField::from_modes(3, 8, true, pair(&out[0], &[1.0, 2.0, 0.5])).unwrap();
    match pullback_t(&x, &b, &p, OverflowPolicy::Error) {
        Err(RenormError::WindowOverflow { radius, .. }) => assert_eq!(radius, 8),
        other => panic!("expected overflow, got {other:?}"),
    }
    let (y, rep) = pullback_t(&x, &b, &p, OverflowPolicy::Drop).unwrap();
    assert!(y.is_zero());
    assert_eq!(rep.overflow_modes, 2);
    assert!((rep.dropped_overflow - 7.0).abs() < 1e-15);
    // Golden with its own parameters never overflows.
    let cfg = golden_cfg();
    assert!(resonant_modes(&cfg.basis, &cfg.params, K, false).is_empty());
}

#[test]
fn rescale_rejects_degenerate_mean() {
    let b = golden_basis();
    // A mean orthogonal to ω̄ has zero dual pairing.
    let perp = [b.omega_bar[1], -b.omega_bar[0]];
    let x = FourierField::constant(&perp, K);
    match rescale_time(&x, &b, 0.1) {
        Err(RenormError::RescaleDegenerate { value, min }) => {
            assert!(value < 1e-15);
            assert_eq!(min, 0.1);
        }
        other => panic!("expected degenerate rescale, got {other:?}"),
    }
    let (y, s) = rescale_time(&FourierField::constant(&b.omega, K).scale(3.0), &b, 0.1).unwrap();
    assert!((s.re - 3.0).abs() < 1e-14);
    assert!(y.is_real());
}

#[test]
fn config_validation() {
    let b = golden_basis();
    let p = ResonanceParams::new(b.omega.clone(), 0.2, 0.8).unwrap();
    assert!(matches!(
        RenormConfig::new(b.clone(), p.clone(), K, 0.6, 0.7),
        Err(RenormError::Basis(_))
    ));
    // κρ = 0.48 ≥ ρ' = 0.4.
    assert!(matches!(
        RenormConfig::new(b.clone(), p.clone(), K, 0.6, 0.4),
        Err(RenormError::Config(_))
    ));
    let wide = ResonanceParams::new(b.omega.clone(), b.sigma_bound(), 0.5).unwrap();
    assert!(matches!(
        RenormConfig::new(b.clone(), wide, K, 0.6, 0.5),
        Err(RenormError::Config(_))
    ));
    let other = ResonanceParams::new(plastic_basis().omega, 0.1, 0.5).unwrap();
    assert!(RenormConfig::new(b.clone(), other, K, 0.6, 0.5).is_err());
    assert!(RenormConfig::new(b, p, K, 0.6, 0.5).is_ok());
}

#[test]
fn step_rejects_wrong_window() {
    let cfg = golden_cfg();
    let x = FourierField::constant(&cfg.basis.omega, K + 1);
    assert!(matches!(renorm_step(&x, &cfg), Err(RenormError::Config(_))));
}

#[test]
fn far_mode_is_removed_to_second_order() {
    let cfg = golden_cfg();
    assert!(!cfg.params.is_resonant(&[1, 0]));
    let run = |eps: f64| {
        let f = FourierField::from_modes(2, K, true, pair(&[1, 0], &[eps, 0.5 * eps])).unwrap();
        let out = renorm_step(&cfg.omega_field().add(&f), &cfg).unwrap();
        dist(&out.field, &cfg)
    };
    let (a, b) = (run(1e-3), run(1e-4));
    assert!(a < 1e-4, "residue {a} not quadratic in eps");
    let slope = (a / b).log10();
    assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn iterate_statuses() {
    let cfg = golden_cfg();
    let t = renorm_iterate(&cfg.omega_field(), &cfg);
    assert_eq!(t.status, IterStatus::Converged);
    assert_eq!(t.reports.len(), 1);
    assert_eq!(t.fields.len(), 2);

    // A transverse constant perturbation is expanded by −λ₁^2 per step.
    let b = &cfg.basis;
    let e2: Vec<f64> = b.evecs[1].iter().map(|z| z.re).collect();
    let x = FourierField::constant(&b.omega, K).add(&FourierField::constant(&e2, K).scale(1e-4));
    let t = renorm_iterate(&x, &cfg);
    assert_eq!(t.status, IterStatus::Diverged);
    assert_eq!(
        t.reports.iter().map(|r| r.iter).collect::<Vec<_>>(),
        (1..=t.reports.len()).collect::<Vec<_>>()
    );

    let mut short = cfg.clone();
    short.max_iters = 1;
    assert_eq!(renorm_iterate(&x, &short).status, IterStatus::Maxiter);

    let perp = [b.omega_bar[1], -b.omega_bar[0]];
    let t = renorm_iterate(&FourierField::constant(&perp, K), &cfg);
    assert_eq!(t.status, IterStatus::Failed);
    assert!(t.error.unwrap().contains("rescale"));
    assert_eq!(t.fields.len(), 1);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = golden_cfg();
    let s = serde_json::to_string(&cfg).unwrap();
    let back: RenormConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back.k, cfg.k);
    assert_eq!(back.params, cfg.params);
    assert_eq!(back.overflow, OverflowPolicy::Drop);
    assert!(s.contains("\"K\""));
}

#[test]
fn pullback_of_omega_scales_by_inverse_eigenvalue() {
    let cfg = golden_cfg();
    let b = &cfg.basis;
    let (y, rep) = pullback_t(&cfg.omega_field(), b, &cfg.params, OverflowPolicy::Error).unwrap();
    assert_eq!(rep.overflow_modes, 0);
    let want = cfg.omega_field().scale(1.0 / b.lambda1());
    assert!(max_coeff_diff(&y, &want) < 1e-15);
}

#[test]
fn golden_mode_moves_down_the_fibonacci_ladder() {
    let b = golden_basis();
    let cfg = RenormConfig::auto(b.clone(), 21, 0.6, 0.5).unwrap();
    let k = [13, -8];
    assert!(cfg.params.is_resonant(&k));
    let x = FourierField::from_modes(2, 21, true, pair(&k, &[1.0, 0.5])).unwrap();
    let (y, _) = pullback_t(&x, &b, &cfg.params, OverflowPolicy::Error).unwrap();
    let w = y.window();
    let q = w.position(&[-8, 5]).unwrap();
    assert_eq!(y.support().len(), 2);
    assert!(y.support().contains(&q));
    let want = b.apply_t_inv(&[c(1.0, 0.0), c(0.5, 0.0)]);
    for (a, e) in y.coeff_at(q).iter().zip(&want) {
        assert!((a - e).norm() < 1e-15);
    }
}

#[test]
fn rescaling_the_contracted_frequency_restores_it() {
    let cfg = golden_cfg();
    let b = &cfg.basis;
    let l1 = b.lambda1();
    let x = cfg.omega_field().scale(1.0 / l1);
    let (y, s) = rescale_time(&x, b, cfg.min_rescale).unwrap();
    assert!((s.re - 1.0 / l1).abs() < 1e-15 && s.im == 0.0);
    assert!(max_coeff_diff(&y, &cfg.omega_field()) < 1e-15);
    assert!((b.omega_bar_dot(&y.mean()) - c(1.0, 0.0)).norm() < 1e-13);
}

#[test]
fn transverse_constant_grows_by_the_unstable_eigenvalue() {
    let cfg = golden_cfg();
    let b = &cfg.basis;
    let w2: Vec<f64> = b.evecs[1].iter().map(|z| z.re).collect();
    let e = FourierField::constant(&w2, K).with_real(true);
    let eps = 1e-4;
    let y = renorm_step(&cfg.omega_field().axpy(eps, &e), &cfg)
        .unwrap()
        .field;
    let got = y.sub(&cfg.omega_field());
    let ratio = got.mean()[0].re / (eps * w2[0]);
    assert!(
        (ratio + 2.618_033_988_749_895).abs() < 1e-3,
        "ratio {ratio}"
    );
}
