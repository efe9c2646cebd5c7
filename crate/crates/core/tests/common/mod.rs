//! Independent reference computations shared by the oracle and acceptance
//! suites: a dense cumulative design, an accelerated proximal-gradient
//! solver, exhaustive segmentation and plain least squares.
#![allow(dead_code)]

use coint_breaks::baiperron::{optimal_partition, ssr_table};
use coint_breaks::design::{fitted_values, gradient_blocks};
use coint_breaks::stage1::{kkt_check_stage1_within, lambda_max, solve_group_lasso, Stage1Config};
use coint_breaks::stage2::{kkt_check_stage2, solve_adaptive_group_lasso, Stage2Config, WeightVector};
use coint_breaks::{segment_ols, ThetaVector, TimeSeriesData};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_walk(rng: &mut ChaCha8Rng, t_len: usize, n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(t_len, n);
    for j in 0..n {
        let mut acc = rng.random_range(-1.0..1.0);
        for t in 0..t_len {
            acc += rng.random_range(-1.0..1.0);
            x[(t, j)] = acc;
        }
    }
    x
}

/// Random sample with one planted change in the middle third.
pub fn instance(rng: &mut ChaCha8Rng, t_len: usize, n: usize) -> TimeSeriesData {
    let x = random_walk(rng, t_len, n);
    let brk = rng.random_range(t_len / 3..2 * t_len / 3);
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let jump: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..t_len)
        .map(|t| {
            let mut v = 1.0 + rng.random_range(-1.0..1.0);
            for j in 0..n {
                let b = base[j] + if t >= brk { jump[j] } else { 0.0 };
                v += b * x[(t, j)];
            }
            v
        })
        .collect();
    TimeSeriesData::new(y, x).unwrap()
}

/// Columns of the cumulative design for the given 1-based groups.
pub fn dense_z(data: &TimeSeriesData, groups: &[usize]) -> DMatrix<f64> {
    let n = data.n_regressors();
    let x = data.x();
    DMatrix::from_fn(data.len(), groups.len() * n, |t, c| {
        let i = groups[c / n];
        if t + 1 >= i {
            x[(t, c % n)]
        } else {
            0.0
        }
    })
}

pub fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Accelerated proximal gradient with adaptive restart for
/// `(1/T)||b - A x||^2 + sum_g pen_g ||x_g||` over blocks of width `n`.
/// Returns the minimizer and the objective.
pub fn proximal_gradient(a: &DMatrix<f64>, b: &DVector<f64>, n: usize, pens: &[f64]) -> (DVector<f64>, f64) {
    let t = a.nrows() as f64;
    let q = a.transpose() * a;
    let c = a.transpose() * b;
    let lip = 2.0 / t * q.clone().symmetric_eigenvalues().max();
    let objective = |x: &DVector<f64>| {
        let r = b - a * x;
        let pen: f64 = pens
            .iter()
            .enumerate()
            .map(|(g, p)| p * x.rows(g * n, n).norm())
            .sum();
        r.norm_squared() / t + pen
    };
    let prox = |v: &mut DVector<f64>, step: f64| {
        for (g, p) in pens.iter().enumerate() {
            let mut blk = v.rows_mut(g * n, n);
            let nv = blk.norm();
            let shrink = if nv > 0.0 { (1.0 - p * step / nv).max(0.0) } else { 0.0 };
            blk *= shrink;
        }
    };
    let dim = a.ncols();
    let mut x = DVector::zeros(dim);
    let mut z = x.clone();
    let mut tk = 1.0f64;
    let mut last = objective(&x);
    for k in 1..=2_000_000usize {
        let grad = (&q * &z - &c) * (2.0 / t);
        let mut xn = &z - grad / lip;
        prox(&mut xn, 1.0 / lip);
        if (&z - &xn).dot(&(&xn - &x)) > 0.0 {
            tk = 1.0;
            z = xn.clone();
        } else {
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            z = &xn + (&xn - &x) * ((tk - 1.0) / tn);
            tk = tn;
        }
        x = xn;
        if k % 2000 == 0 {
            let obj = objective(&x);
            if (last - obj).abs() <= 1e-15 * obj.abs().max(1e-300) {
                break;
            }
            last = obj;
        }
    }
    let obj = objective(&x);
    (x, obj)
}

pub fn penalized_objective(data: &TimeSeriesData, theta: &ThetaVector, intercept: f64, pen: impl Fn(usize) -> f64) -> f64 {
    let fit = fitted_values(data, theta, intercept).unwrap();
    let ssr: f64 = data.y().iter().zip(&fit).map(|(y, f)| (y - f).powi(2)).sum();
    let p: f64 = theta
        .groups()
        .iter()
        .map(|(i, v)| pen(*i) * v.iter().map(|a| a * a).sum::<f64>().sqrt())
        .sum();
    ssr / data.len() as f64 + p
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-12)
}

/// SSR of `y` on `[1, x]` over rows `a..b` (0-based, exclusive) by SVD.
pub fn segment_cost(data: &TimeSeriesData, a: usize, b: usize) -> f64 {
    let n = data.n_regressors();
    let m = DMatrix::from_fn(b - a, n + 1, |r, c| if c == 0 { 1.0 } else { data.x()[(a + r, c - 1)] });
    let y = DVector::from_column_slice(&data.y()[a..b]);
    let coef = m.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    (y - m * coef).norm_squared()
}

/// Per-instance worst relative error of fitted values and gradient blocks
/// against the dense design.
pub fn structure_errors(cases: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let n = rng.random_range(1..=3);
            let t_len = rng.random_range(2 * (n + 1)..=50);
            let data = instance(&mut rng, t_len, n);
            let mut groups = vec![(1usize, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>())];
            for i in 2..=t_len {
                if rng.random_bool(0.2) {
                    groups.push((i, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()));
                }
            }
            let theta = ThetaVector::new(t_len, n, groups.clone()).unwrap();
            let all: Vec<usize> = (1..=t_len).collect();
            let z = dense_z(&data, &all);
            let mut full = DVector::zeros(t_len * n);
            for (i, v) in &groups {
                for j in 0..n {
                    full[(i - 1) * n + j] = v[j];
                }
            }
            let mu = rng.random_range(-3.0..3.0);
            let dense_fit = &z * &full + DVector::from_element(t_len, mu);
            let fit = fitted_values(&data, &theta, mu).unwrap();
            let fit_err = fit.iter().zip(dense_fit.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                / dense_fit.amax();

            let r = DVector::from_fn(t_len, |_, _| rng.random_range(-1.0..1.0));
            let dense_grad = z.transpose() * &r;
            let g = gradient_blocks(&data, r.as_slice()).unwrap();
            let mut grad_err = 0.0f64;
            for i in 0..t_len {
                for j in 0..n {
                    grad_err = grad_err.max((g[(i, j)] - dense_grad[i * n + j]).abs());
                }
            }
            fit_err.max(grad_err / dense_grad.amax())
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SolverCheck {
    /// Relative gap between our objective and the reference optimum.
    pub objective_rel: f64,
    pub kkt: f64,
    pub converged: bool,
    pub active: usize,
}

impl SolverCheck {
    pub fn ok(&self) -> bool {
        self.converged && self.objective_rel <= 1e-6 && self.kkt <= 1e-6
    }
}

fn centered_response(data: &TimeSeriesData) -> DVector<f64> {
    let yv = DVector::from_column_slice(data.y());
    let mean = yv.mean();
    yv.add_scalar(-mean)
}

fn relative_gap(ours: f64, reference: f64) -> f64 {
    (ours - reference).abs() / reference.abs().max(1e-12)
}

/// First-step group lasso against proximal gradient on the centered
/// dense design restricted to the admissible groups.
pub fn stage1_checks(cases: usize, seed: u64) -> Vec<SolverCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let t_len = rng.random_range(12..=40);
            let n = rng.random_range(1..=2);
            let data = instance(&mut rng, t_len, n);
            let mut cfg = Stage1Config::for_sample(t_len, n);
            cfg.max_candidates = 1;
            cfg.trim_lo = 0.1;
            cfg.trim_hi = 0.1;
            cfg.min_regime = n + 1;
            let lmax = lambda_max(&data, &cfg).unwrap();
            let lambda = lmax * rng.random_range(0.02..0.9);
            let sol = solve_group_lasso(&data, lambda, &cfg, None).unwrap();

            let window = cfg.candidate_window(t_len).unwrap();
            let mut groups = vec![1];
            groups.extend(window.0..=window.1);
            let a = centered(&dense_z(&data, &groups));
            let (_, reference) = proximal_gradient(&a, &centered_response(&data), n, &vec![lambda; groups.len()]);
            let ours = penalized_objective(&data, &sol.theta, sol.intercept, |_| lambda);
            SolverCheck {
                objective_rel: relative_gap(ours, reference),
                kkt: kkt_check_stage1_within(&data, &sol.theta, lambda, window).unwrap(),
                converged: sol.converged,
                active: sol.active_set.len(),
            }
        })
        .collect()
}

/// Second-step weighted problem on random spaced candidates with random
/// weights and an unpenalized baseline.
pub fn stage2_checks(cases: usize, seed: u64) -> Vec<SolverCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let t_len = rng.random_range(16..=40);
            let n = rng.random_range(1..=2);
            let data = instance(&mut rng, t_len, n);
            let spacing = n + 3;
            let mut cands = Vec::new();
            let mut next = spacing;
            while next + spacing <= t_len && cands.len() < 3 {
                if rng.random_bool(0.5) {
                    cands.push(next);
                    next += spacing;
                } else {
                    next += 1;
                }
            }
            if cands.is_empty() {
                cands.push(t_len / 2);
            }
            let mut indices = vec![1];
            let mut weights = vec![0.0];
            for &c in &cands {
                indices.push(c);
                weights.push(rng.random_range(0.2..5.0));
            }
            let wv = WeightVector {
                indices: indices.clone(),
                weights: weights.clone(),
            };
            let mut cfg = Stage2Config::for_sample(t_len, n);
            cfg.min_spacing = spacing;

            // Penalty at which the strongest candidate would just enter.
            let base = segment_ols(&data, &[]).unwrap();
            let g = gradient_blocks(&data, &base.residuals).unwrap();
            let crit = cands
                .iter()
                .zip(&weights[1..])
                .map(|(&c, w)| 2.0 / t_len as f64 * g.row(c - 1).norm() / w)
                .fold(0.0, f64::max);
            let lambda = crit * rng.random_range(0.05..1.2);
            let sol = solve_adaptive_group_lasso(&data, &wv, lambda, &cfg).unwrap();

            let a = centered(&dense_z(&data, &indices));
            let pens: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
            let (_, reference) = proximal_gradient(&a, &centered_response(&data), n, &pens);
            let pen_of = |i: usize| indices.iter().position(|&k| k == i).map_or(0.0, |p| pens[p]);
            let ours = penalized_objective(&data, &sol.theta, sol.intercept, pen_of);
            SolverCheck {
                objective_rel: relative_gap(ours, reference),
                kkt: kkt_check_stage2(&data, &sol.theta, &wv, lambda).unwrap(),
                converged: sol.converged,
                active: sol.breakpoints.len(),
            }
        })
        .collect()
}

/// `(case, m)` pairs where the dynamic program disagrees with exhaustive
/// enumeration of all partitions (`T = 20`, one regressor, `m <= 2`).
pub fn dp_mismatches(cases: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = 20;
    let h = 3;
    let mut bad = Vec::new();
    for case in 0..cases {
        let data = instance(&mut rng, t_len, 1);
        let table = ssr_table(&data, h).unwrap();
        for m in 0..=2usize {
            let dp = optimal_partition(&table, m).unwrap();
            let mut best = (f64::INFINITY, vec![]);
            let mut consider = |bps: Vec<usize>| {
                let mut bounds = vec![0];
                bounds.extend(bps.iter().map(|b| b - 1));
                bounds.push(t_len);
                if bounds.windows(2).any(|w| w[1] - w[0] < h) {
                    return;
                }
                let cost: f64 = bounds.windows(2).map(|w| segment_cost(&data, w[0], w[1])).sum();
                if cost < best.0 {
                    best = (cost, bps);
                }
            };
            match m {
                0 => consider(vec![]),
                1 => (2..=t_len).for_each(|a| consider(vec![a])),
                _ => {
                    for a in 2..=t_len {
                        for b in a + 1..=t_len {
                            consider(vec![a, b]);
                        }
                    }
                }
            }
            if dp != best.1 {
                bad.push((case, m));
            }
        }
    }
    bad
}
