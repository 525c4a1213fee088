use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ecm_enki::enki::{
    draw_prior_ensemble, enki_update, ensemble_stats, quarantine_member, Ensemble, GaussianMoments,
    MemberHealth, PriorSpec,
};
use ecm_enki::model::{thermal_derivatives, unpack, ModelKind, ModelState, ThermalParams};
use ecm_enki::sim::{simulate, DriveCycle, IntegratorSettings};
use ecm_enki::{FixedConstants, ParameterVector};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_ensemble(seed: u64, p: usize, h: usize, m: usize) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ensemble::with_outputs(gaussian(&mut rng, p, m), gaussian(&mut rng, h, m)).unwrap()
}

proptest! {
    #[test]
    fn thermal_storage_never_grows_without_heat(
        c_core in 1.0f64..200.0, c_surf in 1.0f64..50.0,
        r_core in 0.5f64..20.0, r_surf in 0.5f64..20.0,
        tc in 250.0f64..350.0, ts in 250.0f64..350.0, ta in 250.0f64..350.0,
    ) {
        let p = ThermalParams { c_core, c_surf, r_core, r_surf };
        let (dtc, dts) = thermal_derivatives(&p, tc, ts, ta, 0.0);
        // Storage function Σ C (T − T_amb)²; its rate is −2[(ΔT_cs)²/R_core + (ΔT_sa)²/R_surf].
        let rate = 2.0 * (c_core * (tc - ta) * dtc + c_surf * (ts - ta) * dts);
        let dissipation = 2.0 * ((tc - ts).powi(2) / r_core + (ts - ta).powi(2) / r_surf);
        prop_assert!(rate <= 1e-9 * dissipation.max(1.0));
        prop_assert!((rate + dissipation).abs() <= 1e-9 * dissipation.max(1.0));
    }

    #[test]
    fn ndct_stored_charge_tracks_current(
        currents in prop::collection::vec(-4.0f64..4.0, 2..60),
        kappa2 in -200.0f64..200.0,
    ) {
        let fixed = FixedConstants::default();
        let mut theta = ecm_enki::model::ndct_reference();
        theta[9] = kappa2;
        let model = unpack(&theta, ModelKind::Ndct, &fixed).unwrap();
        let cycle = DriveCycle::from_currents(&currents, 1.0, 298.15, 4.0).unwrap();
        let x0 = model.initial_state(298.15);
        let traj = simulate(&model, &cycle, &x0, IntegratorSettings::default()).unwrap();
        let (c_b, c_s) = (theta[0], theta[1]);
        let charge = |k: usize| {
            let x = traj.flat_state(k);
            c_b * x[0] + c_s * x[1]
        };
        let mut delivered = 0.0;
        for k in 1..currents.len() {
            // The current of sample k−1 is held over the interval ending at k.
            delivered += currents[k - 1];
            let err = (charge(k) - charge(0) - delivered).abs();
            prop_assert!(err <= 1e-8 * charge(0), "step {k}: {err}");
        }
    }

    #[test]
    fn update_is_affine_equivariant(seed in 0u64..1000, alpha in 0.05f64..1.0) {
        let (p, h, m) = (3, 12, 7);
        let ens = random_ensemble(seed, p, h, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        let a = gaussian(&mut rng, p, p) + DMatrix::identity(p, p) * 3.0;
        let b = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y_obs: Vec<f64> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
        let r = vec![0.5; h];

        let base = enki_update(&ens, &ensemble_stats(&ens).unwrap(), &y_obs, &r, alpha).unwrap();
        let mut moved = &a * ens.theta();
        for mut col in moved.column_iter_mut() {
            col += &b;
        }
        let ens2 = Ensemble::with_outputs(moved, ens.outputs().clone()).unwrap();
        let upd = enki_update(&ens2, &ensemble_stats(&ens2).unwrap(), &y_obs, &r, alpha).unwrap();
        let mut expected = &a * base.theta();
        for mut col in expected.column_iter_mut() {
            col += &b;
        }
        let rel = (upd.theta() - &expected).norm() / expected.norm();
        prop_assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn subspace_update_matches_dense_moments(seed in 0u64..1000, h in 1usize..30, m in 2usize..12) {
        let p = 3;
        let ens = random_ensemble(seed, p, h, m);
        let stats = ensemble_stats(&ens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let y_obs: Vec<f64> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
        let r: Vec<f64> = (0..h).map(|_| 0.2 + rng.random::<f64>()).collect();
        let alpha = 0.3;
        let fast = enki_update(&ens, &stats, &y_obs, &r, alpha).unwrap();
        // Dense route: conditioning each member on its own residual with
        // the explicit 2H×2H moments.
        let dense = GaussianMoments::from(&stats);
        let r_scaled: Vec<f64> = r.iter().map(|v| v / alpha).collect();
        for i in 0..m {
            let member = GaussianMoments {
                theta_mean: ens.theta().column(i).into_owned(),
                output_mean: ens.outputs().column(i).into_owned(),
                ..dense.clone()
            };
            let (mean, _) = member.condition(&y_obs, &r_scaled).unwrap();
            let rel = (fast.theta().column(i) - &mean).norm() / mean.norm().max(1e-12);
            prop_assert!(rel < 1e-9, "member {i}: {rel}");
        }
    }
}

#[test]
fn identical_predictions_leave_members_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = gaussian(&mut rng, 4, 6);
    let column = gaussian(&mut rng, 10, 1);
    let outputs = DMatrix::from_fn(10, 6, |k, _| column[k]);
    let ens = Ensemble::with_outputs(theta.clone(), outputs).unwrap();
    let next = enki_update(&ens, &ensemble_stats(&ens).unwrap(), &[2.0; 10], &[0.1; 10], 1.0).unwrap();
    assert_eq!(next.theta(), &theta);
}

/// Linear forward map `G θ` on a random instance.
fn linear_case(seed: u64, perturb: bool) -> (f64, f64) {
    let (p, h, m) = (4, 20, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian(&mut rng, h, p);
    let theta = gaussian(&mut rng, p, m);
    let mut outputs = &g * &theta;
    let r = vec![0.5; h];
    if perturb {
        for v in outputs.iter_mut() {
            *v += 0.5f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let y_obs: Vec<f64> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
    let ens = Ensemble::with_outputs(theta, outputs).unwrap();
    let stats = ensemble_stats(&ens).unwrap();
    let before = stats.c_theta_theta().trace();
    let next = enki_update(&ens, &stats, &y_obs, &r, 1.0).unwrap();
    let after = Ensemble::with_outputs(next.theta().clone(), DMatrix::zeros(1, m)).unwrap();
    (before, ensemble_stats(&after).unwrap().c_theta_theta().trace())
}

#[test]
fn spread_shrinks_under_linear_update() {
    for seed in 0..20 {
        let (before, after) = linear_case(seed, false);
        assert!(after <= before, "seed {seed}: {after} > {before}");
    }
    let mut ratios: Vec<f64> = (0..21)
        .map(|seed| {
            let (before, after) = linear_case(seed, true);
            after / before
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[10] <= 1.0, "median ratio {}", ratios[10]);
}

#[test]
fn polarization_follows_closed_form_with_zero_kappa() {
    let fixed = FixedConstants::default();
    let theta = ParameterVector(vec![0.026, 0.02, 3250.0, 40.0, 10.0, 4.0, 7.0, 0.0, 0.0]);
    let model = unpack(&theta, ModelKind::Thevenin, &fixed).unwrap();
    let current = 3.0;
    let cycle = DriveCycle::from_currents(&[current; 400], 1.0, 283.0, 4.0).unwrap();
    let traj = simulate(&model, &cycle, &model.initial_state(283.0), IntegratorSettings::default()).unwrap();
    let tau = 0.02 * 3250.0;
    for k in 0..cycle.len() {
        let ModelState::Thevenin { polarization, .. } = traj.state(k) else { unreachable!() };
        let exact = -current * 0.02 * (1.0 - (-(k as f64) / tau).exp());
        assert!((polarization[0] - exact).abs() < 1e-10, "k={k}: {} vs {exact}", polarization[0]);
    }
}

#[test]
fn prior_draws_match_moments() {
    let reference = ecm_enki::model::thevenin_reference();
    let prior = PriorSpec::perturbed_reference(&reference, 0.3, 0.2, 11).unwrap();
    let m = 20_000;
    let ens = draw_prior_ensemble(&prior, m, 5).unwrap();
    let stats = ensemble_stats(&Ensemble::with_outputs(ens.theta().clone(), DMatrix::zeros(1, m)).unwrap()).unwrap();
    let cov = stats.c_theta_theta();
    for i in 0..prior.dim() {
        let sd = prior.covariance[(i, i)].sqrt();
        assert!((stats.theta_mean[i] - prior.mean[i]).abs() < 4.0 * sd / (m as f64).sqrt(), "mean {i}");
        // Var of the sample variance is 2σ⁴/(m−1).
        let tol = 4.0 * (2.0 / (m - 1) as f64).sqrt();
        assert!((cov[(i, i)] / prior.covariance[(i, i)] - 1.0).abs() < tol, "variance {i}");
    }
}

#[test]
fn quarantine_redraw_is_reproducible() {
    let ens = random_ensemble(9, 3, 4, 10);
    let mut a = ens.clone();
    a.set_health(4, MemberHealth::Failed);
    let mut b = a.clone();
    quarantine_member(&mut a, 4, 77, 0).unwrap();
    quarantine_member(&mut b, 4, 77, 0).unwrap();
    assert_eq!(a.theta(), b.theta());
    assert_eq!(a.health()[4], MemberHealth::Healthy);
    assert_ne!(a.theta().column(4), ens.theta().column(4));
    // Other members are untouched; a new attempt draws differently.
    for j in (0..10).filter(|&j| j != 4) {
        assert_eq!(a.theta().column(j), ens.theta().column(j));
    }
    let mut c = ens.clone();
    c.set_health(4, MemberHealth::Failed);
    quarantine_member(&mut c, 4, 77, 1).unwrap();
    assert_ne!(c.theta().column(4), a.theta().column(4));
    // Failed members do not enter the statistics.
    let mut d = ens.clone();
    d.set_health(2, MemberHealth::Failed);
    assert_eq!(ensemble_stats(&d).unwrap().members.len(), 9);
}
