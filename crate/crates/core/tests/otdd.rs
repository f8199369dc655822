use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftgate_core::otdd::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn gaussian_1d(mu: f64, var: f64) -> LabelGaussian {
    LabelGaussian::from_moments("g", DVector::from_element(1, mu), &DMatrix::from_element(1, 1, var), 0.0, 10).unwrap()
}

/// sqrt of the integral of (Fa^-1(u) - Fb^-1(u))^2 over u, by Simpson's rule
/// after substituting u = Phi(t).
fn quantile_w2(ma: f64, sa: f64, mb: f64, sb: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    let na = Normal::new(ma, sa).unwrap();
    let nb = Normal::new(mb, sb).unwrap();
    let f = |t: f64| {
        let u = std.cdf(t);
        let d = na.inverse_cdf(u) - nb.inverse_cdf(u);
        d * d * (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    let (lo, hi, n) = (-7.5, 7.5, 3000);
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (s * h / 3.0).sqrt()
}

#[test]
fn w2_closed_forms_in_one_dimension() {
    assert_eq!(w2_gaussian(&gaussian_1d(0.0, 1.0), &gaussian_1d(0.0, 1.0)).unwrap(), 0.0);
    assert!((w2_gaussian(&gaussian_1d(0.0, 1.0), &gaussian_1d(2.0, 1.0)).unwrap() - 2.0).abs() < 1e-12);
    assert!((w2_gaussian(&gaussian_1d(0.0, 1.0), &gaussian_1d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
    assert!((quantile_w2(0.0, 1.0, 0.0, 2.0) - 1.0).abs() < 1e-6);
}

#[test]
fn w2_matches_quantile_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (ma, mb) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let (sa, sb) = (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0));
        let got = w2_gaussian(&gaussian_1d(ma, sa * sa), &gaussian_1d(mb, sb * sb)).unwrap();
        let want = quantile_w2(ma, sa, mb, sb);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

fn cloud(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mix = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)) * mix
}

#[test]
fn fit_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = cloud(40, 3, &mut rng);
    let g = fit_gaussian("c", &x, Regularization::Absolute(0.01)).unwrap();
    let n = x.nrows();
    let mut mean = [0.0; 3];
    for i in 0..n {
        for j in 0..3 {
            mean[j] += x[(i, j)];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let cov = g.covariance();
    for a in 0..3 {
        assert!((g.mean[a] - mean[a]).abs() < 1e-12);
        for b in 0..3 {
            let mut s = 0.0;
            for i in 0..n {
                s += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
            let want = s / (n - 1) as f64 + if a == b { 0.01 } else { 0.0 };
            assert!((cov[(a, b)] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn fit_hand_cases() {
    let same = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
    let g = fit_gaussian("c", &same, Regularization::Absolute(1e-3)).unwrap();
    assert_eq!(g.covariance(), DMatrix::identity(2, 2) * 1e-3);
    let line = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
    let g = fit_gaussian("c", &line, Regularization::Absolute(0.5)).unwrap();
    assert!((g.mean[0] - 1.0).abs() < 1e-15);
    assert!((g.covariance()[(0, 0)] - 2.5).abs() < 1e-12);
    let err = fit_gaussian("lonely", &DMatrix::zeros(1, 2), Regularization::default()).unwrap_err();
    assert!(err.to_string().contains("lonely"));
}

#[test]
fn low_rank_w2_matches_dense_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, d) in [(4, 9), (6, 6), (30, 5), (3, 12)] {
        let xa = cloud(n, d, &mut rng);
        let xb = cloud(n + 1, d, &mut rng).add_scalar(0.3);
        let a = fit_gaussian("a", &xa, Regularization::Relative(1e-2)).unwrap();
        let b = fit_gaussian("b", &xb, Regularization::Absolute(2e-3)).unwrap();
        let low = w2_gaussian(&a, &b).unwrap();
        let dense = w2_dense(&a.mean, &a.covariance(), &b.mean, &b.covariance()).unwrap();
        assert!((low - dense).abs() < 1e-7 * dense.max(1.0), "n={n} d={d}: {low} vs {dense}");
    }
}

#[test]
fn w2_symmetry_and_triangle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let gs: Vec<LabelGaussian> = (0..3)
            .map(|_| {
                let x = cloud(12, 2, &mut rng).add_scalar(rng.gen_range(-2.0..2.0));
                fit_gaussian("g", &x, Regularization::Absolute(1e-3)).unwrap()
            })
            .collect();
        let d = |i: usize, j: usize| w2_gaussian(&gs[i], &gs[j]).unwrap();
        assert_eq!(d(0, 1), d(1, 0));
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-6);
    }
}

#[test]
fn sqrt_psd_squares_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
    let spd = &a * a.transpose();
    let r = sqrt_psd(&spd).unwrap();
    assert!((&r * &r - &spd).abs().max() < 1e-10);
    let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5.0]));
    assert!(sqrt_psd(&bad).is_err());
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn exact_and_sinkhorn_match_permutation_brute_force() {
    let perms = permutations(6);
    assert_eq!(perms.len(), 720);
    let w = vec![1.0 / 6.0; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..100 {
        let cost: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
        let brute = perms
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * 6 + j]).sum::<f64>() / 6.0)
            .fold(f64::INFINITY, f64::min);
        let exact = solve_ot_exact(&cost, 6, 6, &w, &w).unwrap();
        assert!((exact.total_cost - brute).abs() < 1e-9, "case {case}");
        assert!(exact.violation(&w, &w) < 1e-9);
        assert!(exact.plan.iter().all(|&p| p >= 0.0));
        let sk = solve_ot_sinkhorn(&cost, 6, 6, &w, &w, 1e-3, 200_000, 1e-6).unwrap();
        assert!((sk.total_cost - brute).abs() <= 0.01 * brute, "case {case}: {} vs {brute}", sk.total_cost);
        assert!(sk.violation(&w, &w) < 1e-6);
    }
}

#[test]
fn exact_small_cases() {
    let w2 = vec![0.5, 0.5];
    let c = solve_ot_exact(&[0.0, 1.0, 1.0, 0.0], 2, 2, &w2, &w2).unwrap();
    assert_eq!(c.total_cost, 0.0);
    assert_eq!(c.plan, vec![0.5, 0.0, 0.0, 0.5]);

    // unequal sizes and weights
    let mu = [0.25, 0.75];
    let nu = [0.5, 0.3, 0.2];
    let cost = [1.0, 2.0, 3.0, 4.0, 1.0, 0.5];
    let c = solve_ot_exact(&cost, 2, 3, &mu, &nu).unwrap();
    assert!(c.violation(&mu, &nu) < 1e-12);
    // row 0 ships to column 0, row 1 covers the rest at 4*0.25 + 0.3 + 0.1
    assert!((c.total_cost - (0.25 + 1.0 + 0.3 + 0.1)).abs() < 1e-12);

    let big = vec![0.0; 600 * 2];
    let err = solve_ot_exact(&big, 600, 2, &vec![1.0 / 600.0; 600], &w2).unwrap_err();
    assert!(err.to_string().contains("sinkhorn"));
}

#[test]
fn sinkhorn_cases() {
    let mu = [0.2, 0.8];
    let nu = [0.5, 0.25, 0.25];
    let c = solve_ot_sinkhorn(&[1.0; 6], 2, 3, &mu, &nu, 0.1, 1000, 1e-9).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert!((c.at(i, j) - mu[i] * nu[j]).abs() < 1e-9);
        }
    }
    let cost = [0.0, 1.0, 0.3, 0.9, 0.2, 0.0];
    let err = solve_ot_sinkhorn(&cost, 2, 3, &mu, &nu, 1e-3, 1, 1e-12).unwrap_err();
    assert!(matches!(err, OtddError::NotConverged { .. }));
    assert!(solve_ot_sinkhorn(&cost, 2, 3, &mu, &nu, 0.0, 10, 1e-6).is_err());
}

fn features(n_per: usize, centres: &[f64], d: usize, rng: &mut ChaCha8Rng) -> LabeledFeatures {
    let n = n_per * centres.len();
    let labels: Vec<usize> = (0..n).map(|i| i / n_per).collect();
    let x = DMatrix::from_fn(n, d, |i, _| centres[labels[i]] + rng.gen_range(-0.1..0.1));
    LabeledFeatures {
        x,
        labels,
        class_names: (0..centres.len()).map(|c| format!("L{c}")).collect(),
    }
}

fn small_cfg() -> OtddConfig {
    OtddConfig {
        rounds: 4,
        sample_per_round: 20,
        ..Default::default()
    }
}

#[test]
fn otdd_self_distance_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = features(15, &[0.0, 1.0], 6, &mut rng);
    let r = otdd_distance(&a, &a, &small_cfg()).unwrap();
    assert!(r.rounds.iter().all(|x| x.distance == 0.0));
    assert_eq!(r.mean, 0.0);
}

#[test]
fn otdd_symmetric_and_bookkept() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = features(15, &[0.0, 1.0], 6, &mut rng);
    let b = features(15, &[0.2, 1.5], 6, &mut rng);
    let ab = otdd_distance(&a, &b, &small_cfg()).unwrap();
    let ba = otdd_distance(&b, &a, &small_cfg()).unwrap();
    for (x, y) in ab.rounds.iter().zip(&ba.rounds) {
        assert!((x.distance - y.distance).abs() < 1e-12);
        assert!(x.distance > 0.0);
    }
    let mean = ab.rounds.iter().map(|r| r.distance).sum::<f64>() / 4.0;
    assert!((ab.mean - mean).abs() < 1e-12);
    let var = ab.rounds.iter().map(|r| (r.distance - mean).powi(2)).sum::<f64>() / 3.0;
    assert!((ab.stdev - var.sqrt()).abs() < 1e-12);
}

#[test]
fn otdd_bounded_below_by_label_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = features(15, &[0.0, 1.0], 4, &mut rng);
    let mut b = features(15, &[5.0, 8.0], 4, &mut rng);
    b.class_names = vec!["M0".into(), "M1".into()];
    let ga = fit_label_gaussians(&a, Regularization::default()).unwrap();
    let gb = fit_label_gaussians(&b, Regularization::default()).unwrap();
    let w = label_distances(&ga, &gb).unwrap();
    let floor = w.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let r = otdd_distance(&a, &b, &small_cfg()).unwrap();
    assert!(r.rounds.iter().all(|x| x.distance >= floor));
}

#[test]
fn otdd_sinkhorn_close_to_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = features(15, &[0.0, 1.0], 4, &mut rng);
    let b = features(15, &[0.3, 1.4], 4, &mut rng);
    let exact = otdd_distance(&a, &b, &small_cfg()).unwrap();
    let cfg = OtddConfig {
        solver: Solver::Sinkhorn(SinkhornSettings::default()),
        ..small_cfg()
    };
    let sk = otdd_distance(&a, &b, &cfg).unwrap();
    assert!((sk.mean - exact.mean).abs() < 0.01 * exact.mean);
}

#[test]
fn otdd_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = features(5, &[0.0, 1.0], 3, &mut rng);
    assert!(otdd_distance(&a, &a, &small_cfg()).is_err());
    let cfg = OtddConfig { rounds: 0, ..small_cfg() };
    assert!(cfg.validate().is_err());
}

#[test]
fn single_class_view() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = features(5, &[0.0, 1.0, 2.0], 3, &mut rng);
    let b = a.single_class(1);
    assert_eq!(b.len(), 5);
    assert_eq!(b.labels, vec![0; 5]);
    assert_eq!(b.class_names, vec!["L1"]);
    assert_eq!(b.x.row(0), a.x.row(5));
    assert!(a.single_class(7 % 3).x.iter().all(|&v| (v - 1.0).abs() <= 0.1 + 1e-12));
}
