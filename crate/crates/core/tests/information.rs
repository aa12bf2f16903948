//! Information quantities of discrete worlds checked against numerical
//! quadrature in one dimension, plus the closed-form Gaussian KL.

use capvae::model::gaussian_kl;
use capvae::oracle::{kl_monte_carlo, DiscreteWorld, Encoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 100_000;

fn normal_pdf(z: f64, mu: f64, var: f64) -> f64 {
    (-(z - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `(I, KL(q(z)‖N(0,1)))` for a 1-d world by trapezoidal quadrature.
fn quadrature(probs: &[f64], mus: &[f64], vars: &[f64]) -> (f64, f64) {
    let (lo, hi, n) = (-20.0, 20.0, 40_001);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut mi, mut kl) = (0.0, 0.0);
    for k in 0..n {
        let z = lo + h * k as f64;
        let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
        let comps: Vec<f64> = (0..probs.len()).map(|x| normal_pdf(z, mus[x], vars[x])).collect();
        let q: f64 = probs.iter().zip(&comps).map(|(p, c)| p * c).sum();
        if q <= 0.0 {
            continue;
        }
        for x in 0..probs.len() {
            if comps[x] > 0.0 {
                mi += w * probs[x] * comps[x] * (comps[x] / q).ln();
            }
        }
        kl += w * q * (q / normal_pdf(z, 0.0, 1.0)).ln();
    }
    (mi, kl)
}

fn world_1d(probs: &[f64], mus: &[f64], vars: &[f64]) -> DiscreteWorld {
    let encoders = mus
        .iter()
        .zip(vars)
        .map(|(&m, &v)| Encoder {
            mu: vec![m],
            var: vec![v],
        })
        .collect();
    DiscreteWorld::new(probs.to_vec(), encoders).unwrap()
}

fn within(est: capvae::oracle::Estimate, truth: f64, k: f64) -> bool {
    (est.mean - truth).abs() <= k * est.se.max(1e-12)
}

#[test]
fn two_separated_gaussians_carry_one_binary_choice() {
    let (probs, mus, vars) = ([0.5, 0.5], [3.0, -3.0], [1.0, 1.0]);
    let w = world_1d(&probs, &mus, &vars);
    let (mi, _) = quadrature(&probs, &mus, &vars);
    // Overlap of N(±3, 1) costs about 0.0087 nats of the ln 2 ceiling.
    assert!((mi - 2f64.ln()).abs() < 0.02);
    let est = w.mutual_information_mc(SAMPLES, 1).unwrap();
    assert!(within(est, mi, 4.0), "{est} vs {mi}");
    assert!((w.entropy() - 2f64.ln()).abs() < 1e-15);
    assert!((w.rate() - 4.5).abs() < 1e-12);
}

#[test]
fn random_one_dimensional_worlds_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..8 {
        let n = rng.random_range(2..7);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mus: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
        let vars: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.5)).collect();
        let w = world_1d(&probs, &mus, &vars);
        let (mi, agg) = quadrature(&probs, &mus, &vars);
        let i = w.mutual_information_mc(SAMPLES, case).unwrap();
        let kl = w.aggregate_kl_mc(SAMPLES, case + 100).unwrap();
        let d = w.bayes_distortion(SAMPLES, case + 200).unwrap();
        assert!(within(i, mi, 4.0), "case {case}: I {i} vs {mi}");
        assert!(within(kl, agg, 4.0), "case {case}: KL {kl} vs {agg}");
        // The Bayes decoder reaches H − D = I exactly in expectation.
        assert!(
            within(d, w.entropy() - mi, 4.0),
            "case {case}: D {d} vs {}",
            w.entropy() - mi
        );
        // Rate splits into mutual information plus aggregate KL.
        assert!((w.rate() - mi - agg).abs() < 1e-6, "case {case}");
    }
}

#[test]
fn bounds_hold_on_random_worlds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20 {
        let n = rng.random_range(2..=16);
        let dim = rng.random_range(1..=4);
        let w = DiscreteWorld::random(n, dim, &mut rng).unwrap();
        let r = w.bounds_check(SAMPLES, case).unwrap();
        assert!(r.identity_z_score() <= 3.0, "case {case}: {r}");
        let gap = w.entropy() - r.distortion.mean - r.mutual_information.mean;
        let se = r.distortion.se.hypot(r.mutual_information.se);
        assert!(gap.abs() <= 3.0 * se.max(1e-12), "case {case}: {r}");
    }
}

#[test]
fn any_decoder_is_worse_than_bayes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = DiscreteWorld::random(6, 2, &mut rng).unwrap();
    let bayes = w.bayes_distortion(SAMPLES, 1).unwrap();
    let uniform = w
        .decoder_distortion(20_000, 2, |_| vec![-(6f64.ln()); 6])
        .unwrap();
    assert!((uniform.mean - 6f64.ln()).abs() < 1e-12);
    assert!(uniform.mean >= bayes.mean);
    let via_posterior = w
        .decoder_distortion(20_000, 3, |z| w.bayes_log_posterior(z))
        .unwrap();
    let se = bayes.se.hypot(via_posterior.se);
    assert!((via_posterior.mean - bayes.mean).abs() <= 4.0 * se);
}

#[test]
fn collapsed_world_has_no_information() {
    let w = DiscreteWorld::collapsed(5, 3).unwrap();
    let r = w.bounds_check(SAMPLES, 0).unwrap();
    assert_eq!(r.mutual_information.mean, 0.0);
    assert_eq!(r.rate, 0.0);
    assert_eq!(r.entropy - r.distortion.mean, 0.0);
}

#[test]
fn closed_form_kl_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let d = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let log_var: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
        let exact = gaussian_kl(&mu, &log_var);
        let mc = kl_monte_carlo(&mu, &log_var, SAMPLES, case);
        assert!(within(mc, exact, 3.0), "case {case}: {mc} vs {exact}");
    }
}
