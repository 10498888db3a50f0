//! Oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use signshrink::adjustment::{assemble_info, se_diag_u, variance_lower_bound, Param, ParamIndex, VarianceTarget};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `B B^T` with `B` of width `rank`, scaled to trace `scale * dim`.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize, rank: usize, scale: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, dim, rank);
    let m = &b * b.transpose();
    let tr = m.trace();
    m * (scale * dim as f64 / tr)
}

/// Wishart-like positive definite matrix with a ridge.
pub fn random_pd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, dim, dim + 3);
    &a * a.transpose() / (dim + 3) as f64 + DMatrix::identity(dim, dim) * 0.2
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.0)).collect()
}

/// Draws from `N(0, cov)`.
pub fn draw_mvn(rng: &mut ChaCha8Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().expect("PD").l();
    l * normal_vector(rng, cov.nrows())
}

/// Expected log-likelihood `-1/2 sum_i w_i (log|T_i| + tr(T_i^-1 T0_i))` of the
/// covariance parameters `theta`, laid out as in `index`.
pub fn expected_loglik(theta: &[f64], index: &ParamIndex, covs: &[DMatrix<f64>], weights: &[f64], t0: &[DMatrix<f64>]) -> f64 {
    let dim = index.dim();
    let mut s = DMatrix::zeros(dim, dim);
    for (pos, &v) in theta.iter().enumerate() {
        match index.param(pos) {
            Param::U(r, j) => {
                s[(r, j)] += v;
                if r != j {
                    s[(j, r)] += v;
                }
            }
            Param::D(r) => s[(r, r)] += v,
        }
    }
    covs.iter()
        .zip(t0)
        .zip(weights)
        .map(|((v, t0), w)| {
            let chol = (&s + v).cholesky().expect("T stays positive definite");
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            -0.5 * w * (logdet + chol.solve(t0).trace())
        })
        .sum()
}

/// Parameter vector of `(u, d)` in `index` order.
pub fn theta_of(index: &ParamIndex, u: &DMatrix<f64>, d: Option<&DVector<f64>>) -> Vec<f64> {
    (0..index.len())
        .map(|pos| match index.param(pos) {
            Param::U(r, j) => u[(r, j)],
            Param::D(r) => d.expect("index includes d")[r],
        })
        .collect()
}

/// Negative Hessian of [`expected_loglik`] at `theta0` by central differences
/// with one Richardson extrapolation step.
pub fn fd_information(
    u: &DMatrix<f64>,
    d: Option<&DVector<f64>>,
    covs: &[DMatrix<f64>],
    weights: &[f64],
    h: f64,
) -> DMatrix<f64> {
    let index = ParamIndex::new(u.nrows(), d.is_some());
    let theta0 = theta_of(&index, u, d);
    let mut s0 = u.clone();
    if let Some(d) = d {
        for r in 0..d.len() {
            s0[(r, r)] += d[r];
        }
    }
    let t0: Vec<DMatrix<f64>> = covs.iter().map(|v| &s0 + v).collect();
    fd_neg_hessian(|t| expected_loglik(t, &index, covs, weights, &t0), &theta0, h)
}

/// `-grad^2 f(theta0)` by central differences with one Richardson extrapolation step.
pub fn fd_neg_hessian(f: impl Fn(&[f64]) -> f64, theta0: &[f64], h: f64) -> DMatrix<f64> {
    let n = theta0.len();
    let mixed = |j: usize, k: usize, h: f64| {
        let at = |sj: f64, sk: f64| {
            let mut t = theta0.to_vec();
            t[j] += sj * h;
            t[k] += sk * h;
            f(&t)
        };
        (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
    };
    let mut info = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let hess = (4.0 * mixed(j, k, h / 2.0) - mixed(j, k, h)) / 3.0;
            info[(j, k)] = -hess;
            info[(k, j)] = -hess;
        }
    }
    info
}

/// `log N(x; 0, cov)` by a dense Cholesky factorization.
pub fn log_normal_density(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("PD");
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = x.dot(&chol.solve(x));
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Largest entrywise error of `a` against `oracle`, relative to
/// `max(|oracle_jk|, floor * max|oracle|)`.
pub fn max_relative_error(a: &DMatrix<f64>, oracle: &DMatrix<f64>, floor: f64) -> f64 {
    let scale = oracle.amax() * floor;
    a.iter().zip(oracle.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(scale)).fold(0.0, f64::max)
}

/// Standard normal CDF by series summation; independent of the library's erfc route.
pub fn phi_series(z: f64) -> f64 {
    if z.abs() > 8.0 {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    // Phi(z) = 1/2 + phi(z) * sum z^(2n+1) / (1*3*...*(2n+1))
    let mut term = z;
    let mut sum = z;
    let mut n = 1.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        term *= z * z / (2.0 * n + 1.0);
        sum += term;
        n += 1.0;
    }
    0.5 + (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * sum
}

/// One random `(U, D, V_i, w_i)` configuration.
pub struct Config {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub covs: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
}

pub fn random_config(seed: u64, dim: usize, n: usize) -> Config {
    let mut rng = rng(seed);
    let rank = rng.random_range(1..=dim);
    let scale = rng.random_range(0.2..3.0);
    Config {
        u: random_psd(&mut rng, dim, rank, scale),
        d: DVector::from_fn(dim, |_, _| rng.random_range(0.05..1.0)),
        covs: (0..n).map(|_| random_pd(&mut rng, dim)).collect(),
        weights: random_weights(&mut rng, n),
    }
}

/// Largest relative FD-oracle error of the assembled `(U, D)` information on
/// random configuration `seed` (R alternates between 2 and 3, N = 40).
pub fn information_oracle_error(seed: u64) -> f64 {
    let dim = 2 + (seed as usize % 2);
    let c = random_config(1000 + seed, dim, 40);
    let info = assemble_info(&c.u, Some(&c.d), &c.covs, Some(&c.weights)).unwrap().full();
    let oracle = fd_information(&c.u, Some(&c.d), &c.covs, &c.weights, 1e-3);
    max_relative_error(&info, &oracle, 1e-6)
}

/// Checks every variance lower bound against the matching inverse-information
/// diagonal on random configuration `seed`.
pub fn check_dominance(seed: u64) -> Result<(), String> {
    let mut r = rng(5000 + seed);
    let dim = r.random_range(2..=4);
    let n = r.random_range(20..=60);
    let c = random_config(6000 + seed, dim, n);
    let w = Some(c.weights.as_slice());
    let slack = 1.0 + 1e-9;

    let lb_u = variance_lower_bound(&c.u, &c.covs, w, VarianceTarget::DiagU).unwrap();
    let se_u = se_diag_u(&assemble_info(&c.u, None, &c.covs, w).unwrap()).map_err(|e| e.to_string())?;
    for rr in 0..dim {
        if lb_u[rr] > se_u[rr].powi(2) * slack {
            return Err(format!("seed {seed} diag_u r={rr}: {} > {}", lb_u[rr], se_u[rr].powi(2)));
        }
    }

    // With U treated as known, the D block alone is the relevant information.
    let c_block = assemble_info(&c.u, Some(&c.d), &c.covs, w).unwrap().c.unwrap();
    let lb_d = variance_lower_bound(&c.u, &c.covs, w, VarianceTarget::DiagD).unwrap();
    let inv_c = c_block.try_inverse().ok_or("D block not invertible")?.diagonal();
    for rr in 0..dim {
        if lb_d[rr] > inv_c[rr] * slack {
            return Err(format!("seed {seed} diag_d r={rr}: {} > {}", lb_d[rr], inv_c[rr]));
        }
    }

    // D = sigma^2 I: dT/dsigma^2 = I, so the scalar information is the sum of C.
    let iso_d = DVector::from_element(dim, c.d[0]);
    let iso = assemble_info(&c.u, Some(&iso_d), &c.covs, w).unwrap().c.unwrap().sum();
    let lb_iso = variance_lower_bound(&c.u, &c.covs, w, VarianceTarget::DiagDIsotropic).unwrap();
    if lb_iso.len() != 1 || lb_iso[0] > slack / iso {
        return Err(format!("seed {seed} isotropic: {} > {}", lb_iso[0], 1.0 / iso));
    }
    Ok(())
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    normal_vector(rng, dim).normalize()
}

/// Largest gaps between the three closed forms and the general posterior path
/// over `instances` random cases each: (rank-1 lfsr, full-rank neg_prob,
/// eigen-decomposed neg_prob).
pub fn closed_form_errors(instances: u64) -> (f64, f64, f64) {
    use signshrink::model::{MixturePrior, Observation};
    use signshrink::posterior::{lfsr_rank1_closed_form, negprob_eigen_decomposed, negprob_fullrank_closed_form, posterior_summary};
    let (mut e1, mut e2, mut e3) = (0.0_f64, 0.0_f64, 0.0_f64);
    for seed in 0..instances {
        let mut r = rng(40_000 + seed);
        let dim = r.random_range(2..=6);
        let x_scale = r.random_range(0.5..3.0);
        let obs = Observation::new(normal_vector(&mut r, dim) * x_scale, DMatrix::identity(dim, dim)).unwrap();
        let u = random_unit(&mut r, dim);
        let uut = &u * u.transpose();

        let lambda = r.random_range(0.1..5.0);
        let post = posterior_summary(&obs, &MixturePrior::single(&uut * lambda).unwrap()).unwrap();
        let closed = lfsr_rank1_closed_form(&obs.x, &u, lambda).unwrap();
        e1 = e1.max(post.lfsr.iter().map(|l| (l - closed).abs()).fold(0.0, f64::max));

        let sigma2 = r.random_range(0.0..1.0);
        let post = posterior_summary(&obs, &MixturePrior::single(&uut + DMatrix::identity(dim, dim) * sigma2).unwrap()).unwrap();
        for c in 0..dim {
            e2 = e2.max((post.neg_prob[c] - negprob_fullrank_closed_form(&obs.x, &u, sigma2, c).unwrap()).abs());
        }

        let rank = r.random_range(1..=dim);
        let u_scale = r.random_range(0.3..3.0);
        let big_u = random_psd(&mut r, dim, rank, u_scale);
        let post = posterior_summary(&obs, &MixturePrior::single(big_u.clone()).unwrap()).unwrap();
        for c in 0..dim {
            e3 = e3.max((post.neg_prob[c] - negprob_eigen_decomposed(&obs.x, &big_u, c).unwrap()).abs());
        }
    }
    (e1, e2, e3)
}

/// EM on random mixture data; returns the largest log-likelihood decrease seen
/// (a `NoIncrease` error is reported as `Err`).
pub fn em_largest_decrease(seed: u64) -> Result<f64, String> {
    use signshrink::fitting::{em_fit, EmConfig};
    use signshrink::model::{Dataset, NoiseCov};
    let mut r = rng(70_000 + seed);
    let dim = r.random_range(2..=4);
    let k = r.random_range(1..=3);
    let n = r.random_range(100..=200);
    let truths: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let rank = r.random_range(1..=dim);
            random_psd(&mut r, dim, rank, 2.0)
        })
        .collect();
    let hetero = r.random_bool(0.5);
    let covs: Vec<DMatrix<f64>> = (0..n).map(|_| if hetero { random_pd(&mut r, dim) } else { DMatrix::identity(dim, dim) }).collect();
    let xs = covs
        .iter()
        .map(|v| {
            let c = r.random_range(0..k);
            draw_mvn(&mut r, &(&truths[c] + v))
        })
        .collect();
    let data = Dataset::new(xs, NoiseCov::PerSample(covs)).unwrap();
    let mut config = EmConfig { max_iters: 150, tol: 0.0, ..EmConfig::default() }.with_seed(seed);
    if r.random_bool(0.3) {
        config = config.with_ranks((0..k).map(|_| r.random_range(1..=dim)).collect());
    }
    let (_, trace) = em_fit(&data, k, &config).map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(trace.loglik_per_iter.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max))
}

/// Counts violations of `(X^-1)_jj >= 1/X_jj` over random PD matrices, plus
/// equality failures on diagonal ones.
pub fn inverse_diagonal_violations(instances: u64) -> usize {
    let mut bad = 0;
    for seed in 0..instances {
        let mut r = rng(80_000 + seed);
        let dim = r.random_range(2..=7);
        let x = random_pd(&mut r, dim);
        let inv = x.clone().try_inverse().unwrap();
        bad += (0..dim).filter(|&j| inv[(j, j)] < (1.0 / x[(j, j)]) * (1.0 - 1e-12)).count();
        let diag = DMatrix::from_diagonal(&x.diagonal());
        let dinv = diag.clone().try_inverse().unwrap();
        bad += (0..dim).filter(|&j| (dinv[(j, j)] - 1.0 / diag[(j, j)]).abs() > 1e-12 * dinv[(j, j)]).count();
    }
    bad
}

/// Closed-form isotropic sigma^2 MLE and a grid-search maximizer of the profile
/// likelihood (U = u u^T profiled out), for data with sigma^2 = 0.5 and N = 1e5.
pub fn sigma2_mle_vs_grid() -> (f64, f64) {
    use signshrink::fitting::sigma2_mle_isotropic;
    let (dim, n, sigma2) = (5, 100_000, 0.5);
    let mut r = rng(90_210);
    let u = DVector::from_vec(vec![1.0, 1.0, 0.01, 0.01, 0.01]).normalize() * 2.0;
    let cov = &u * u.transpose() + DMatrix::identity(dim, dim) * (1.0 + sigma2);
    let l = cov.clone().cholesky().unwrap().l();
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..n {
        let x = &l * normal_vector(&mut r, dim);
        s += &x * x.transpose();
    }
    s /= n as f64;
    let eig = s.clone().symmetric_eigen();
    let closed = sigma2_mle_isotropic(eig.eigenvalues.as_slice()).unwrap();

    let top = eig.eigenvalues.imax();
    let (l1, q1) = (eig.eigenvalues[top], eig.eigenvectors.column(top).into_owned());
    let profile = |s2: f64| {
        let c = 1.0 + s2;
        let t = &q1 * q1.transpose() * (l1 - c).max(0.0) + DMatrix::identity(dim, dim) * c;
        let chol = t.cholesky().unwrap();
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * n as f64 * (logdet + chol.solve(&s).trace())
    };
    let grid = (0..=20_000).map(|i| i as f64 * 1e-4);
    let best = grid.map(|g| (g, profile(g))).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    (closed, best)
}

/// Monte Carlo mean and standard error of the estimated lfsr `Phi(sqrt(1/2) u_hat^T x)`
/// with `u_hat = u + eps`, `eps ~ N(0, I/n)`, next to the true lfsr and the
/// analytic expectation `Phi(sqrt(1/2) u^T x / sqrt(1 + x^T x / (2n)))`.
pub struct LfsrHatCheck {
    pub true_lfsr: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub analytic: f64,
}

/// `x` has `u^T x = -2` plus an orthogonal part of norm `orthogonal`, so the
/// true lfsr is `Phi(-sqrt 2)` and the overestimation grows with `orthogonal`.
pub fn lfsr_hat_monte_carlo(orthogonal: f64, draws: usize, seed: u64) -> LfsrHatCheck {
    use signshrink::posterior::lfsr_rank1_closed_form;
    use signshrink::scalar::norm_cdf;
    let (dim, n) = (5, 100.0_f64);
    let mut r = rng(seed);
    let u = DVector::from_vec(vec![1.0, 1.0, 0.01, 0.01, 0.01]).normalize();
    let z = normal_vector(&mut r, dim);
    let perp = (&z - &u * u.dot(&z)).normalize();
    let x = &u * -2.0 + perp * orthogonal;
    let true_lfsr = lfsr_rank1_closed_form(&x, &u, 1.0).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let u_hat = &u + normal_vector(&mut r, dim) / n.sqrt();
            norm_cdf(h * u_hat.dot(&x))
        })
        .collect();
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let analytic = phi_series(h * u.dot(&x) / (1.0 + x.dot(&x) / (2.0 * n)).sqrt());
    LfsrHatCheck { true_lfsr, mc_mean: mean, mc_se: (var / draws as f64).sqrt(), analytic }
}
