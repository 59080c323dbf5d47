//! Entropy-regularized optimal transport by Sinkhorn matrix scaling.
//!
//! Given a cost `C`, marginals `mu`, `nu` and a regularization `epsilon`,
//! the solver looks for positive scalings `a`, `b` such that
//! `pi = diag(a) · K · diag(b)` with `K = exp(-C / epsilon)` has row sums
//! `mu` and column sums `nu`. The updates alternate
//! `a <- mu / (K b)` and `b <- nu / (Kᵀ a)`.
//!
//! Two numerical routes are provided:
//!
//! * [`Domain::Standard`] multiplies by the kernel directly. It is fast but
//!   `K` underflows once `C / epsilon` exceeds ~700; when a row or column
//!   of `K b` / `Kᵀ a` vanishes the solver stops with
//!   [`Error::KernelUnderflow`] instead of producing infinities.
//! * [`Domain::Log`] carries `log a`, `log b` and replaces each product by a
//!   log-sum-exp, which stays finite for any `epsilon > 0`.
//!
//! [`sinkhorn_solve`] picks the log domain automatically when
//! `epsilon < 0.05 · max(C)`.
//!
//! The stopping rule is the L1 marginal violation
//! `Σ|pi 1 − mu| + Σ|piᵀ 1 − nu| < tol`, evaluated before every update.
//!
//! For small `epsilon` the potentials `epsilon · log a` must travel a
//! distance of order `max(C)` and plain iterations slow to a crawl.
//! [`sinkhorn_scaled`] reaches the target through a halving sequence of
//! larger epsilons, warm-starting each stage from the previous one.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::types::{Coupling, DiscreteDistribution, SolverConfig};

/// `epsilon / max(cost)` below which [`sinkhorn_solve`] switches to the log domain.
pub const LOG_DOMAIN_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Standard,
    Log,
}

/// Scalings of a (partial) Sinkhorn solve, stored as logarithms so that the
/// same state can seed either domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub log_a: Array1<f64>,
    pub log_b: Array1<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl SinkhornState {
    pub fn a(&self) -> Array1<f64> {
        self.log_a.mapv(f64::exp)
    }

    pub fn b(&self) -> Array1<f64> {
        self.log_b.mapv(f64::exp)
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub state: SinkhornState,
    pub converged: bool,
    pub domain: Domain,
    pub epsilon: f64,
    /// Marginal violation measured before each update, starting from the
    /// initial scalings.
    pub error_trace: Vec<f64>,
}

impl SinkhornSolution {
    /// `⟨C, pi⟩` for the cost the solution was computed with.
    pub fn transport_cost(&self, cost: ArrayView2<'_, f64>) -> f64 {
        (&cost * &self.coupling.plan()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

/// `K[i][j] = exp(-cost[i][j] / epsilon)`.
pub fn gibbs_kernel(cost: ArrayView2<'_, f64>, epsilon: f64) -> Result<Array2<f64>> {
    check_epsilon(epsilon)?;
    check_finite(cost)?;
    Ok(cost.mapv(|c| (-c / epsilon).exp()))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

fn check_finite(cost: ArrayView2<'_, f64>) -> Result<()> {
    match cost.indexed_iter().find(|(_, c)| !c.is_finite()) {
        Some(((i, j), c)) => Err(Error::InvalidInput(format!("cost ({i},{j}) = {c}"))),
        None => Ok(()),
    }
}

fn check_shapes(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
) -> Result<()> {
    if cost.dim() != (mu.len(), nu.len()) {
        return Err(Error::DimensionMismatch(format!(
            "cost is {:?} but marginals have lengths {} and {}",
            cost.dim(),
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

fn max_entry(cost: ArrayView2<'_, f64>) -> f64 {
    cost.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Domain selection used by [`sinkhorn_solve`].
pub fn select_domain(cost: ArrayView2<'_, f64>, epsilon: f64, force_log: bool) -> Domain {
    if force_log || epsilon < LOG_DOMAIN_RATIO * max_entry(cost) {
        Domain::Log
    } else {
        Domain::Standard
    }
}

/// Solves the entropic transport problem with settings taken from `cfg`.
///
/// A relative epsilon is scaled by the mean cost entry. Non-convergence is
/// not an error: the returned solution has `converged == false` and the
/// best iterate seen.
pub fn sinkhorn_solve(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cfg: &SolverConfig,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    check_finite(cost)?;
    check_shapes(cost, mu, nu)?;
    let epsilon = cfg.epsilon.resolve(cost.mean().unwrap_or(0.0))?;
    let params = SinkhornParams {
        epsilon,
        max_iters: cfg.max_sinkhorn_iters,
        tol: cfg.marginal_tol,
    };
    let domain = select_domain(cost, epsilon, cfg.log_domain);
    sinkhorn_in(domain, cost, mu, nu, &params, None)
}

/// Runs the chosen domain explicitly, optionally warm-started.
pub fn sinkhorn_in(
    domain: Domain,
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
    warm: Option<&SinkhornState>,
) -> Result<SinkhornSolution> {
    check_epsilon(params.epsilon)?;
    check_finite(cost)?;
    check_shapes(cost, mu, nu)?;
    if let Some(w) = warm {
        if w.log_a.len() != mu.len() || w.log_b.len() != nu.len() {
            return Err(Error::DimensionMismatch("warm-start state".into()));
        }
    }
    match domain {
        Domain::Standard => standard(cost, mu, nu, params, warm),
        Domain::Log => log_domain(cost, mu, nu, params, warm),
    }
}

pub fn sinkhorn_standard(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    sinkhorn_in(Domain::Standard, cost, mu, nu, params, None)
}

pub fn sinkhorn_log(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    sinkhorn_in(Domain::Log, cost, mu, nu, params, None)
}

/// Ratio between successive stages of [`sinkhorn_scaled`].
pub const EPSILON_SCALING_RATIO: f64 = 0.5;

/// Marginal tolerance of the intermediate stages of [`sinkhorn_scaled`].
const STAGE_TOL: f64 = 1e-6;

/// Solves at `params.epsilon` after stages at `start, start/2, …`.
///
/// `warm`, if given, must hold scalings for `params.epsilon`; it is
/// rescaled to each stage so the dual potentials are preserved. A `start`
/// at or below the target runs a single stage. The domain of every stage is
/// chosen as in [`select_domain`]. Iteration counts and error traces are
/// accumulated over stages.
pub fn sinkhorn_scaled(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
    start: f64,
    warm: Option<&SinkhornState>,
    force_log: bool,
) -> Result<SinkhornSolution> {
    check_epsilon(params.epsilon)?;
    let target = params.epsilon;
    let rescale = |state: &SinkhornState, from: f64, to: f64| SinkhornState {
        log_a: state.log_a.mapv(|v| v * from / to),
        log_b: state.log_b.mapv(|v| v * from / to),
        ..state.clone()
    };
    let mut eps = if start.is_finite() { start.max(target) } else { target };
    let mut seed = warm.map(|w| rescale(w, target, eps));
    let mut iterations = 0;
    let mut trace = Vec::new();
    loop {
        let stage = SinkhornParams {
            epsilon: eps,
            max_iters: params.max_iters,
            tol: if eps > target { params.tol.max(STAGE_TOL) } else { params.tol },
        };
        let domain = select_domain(cost, eps, force_log);
        let mut sol = sinkhorn_in(domain, cost, mu, nu, &stage, seed.as_ref())?;
        iterations += sol.state.iterations;
        trace.append(&mut sol.error_trace);
        if eps <= target {
            sol.state.iterations = iterations;
            sol.error_trace = trace;
            return Ok(sol);
        }
        let next = (eps * EPSILON_SCALING_RATIO).max(target);
        seed = Some(rescale(&sol.state, eps, next));
        eps = next;
    }
}

/// Moves an approximately feasible plan onto the exact marginals: rows are
/// scaled down to at most `mu`, then columns to at most `nu`, and the
/// remaining deficit is added as a rank-one correction. The L1 change is at
/// most twice the L1 marginal violation of the input.
pub fn round_to_marginals(
    plan: &Array2<f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
) -> Result<Array2<f64>> {
    check_shapes(plan.view(), mu, nu)?;
    let shrink = |target: f64, sum: f64| if sum > target { target / sum } else { 1.0 };
    let mut x = plan.clone();
    let rows = x.sum_axis(Axis(1));
    for (mut row, (&t, &s)) in x.rows_mut().into_iter().zip(mu.weights().iter().zip(&rows)) {
        row *= shrink(t, s);
    }
    let cols = x.sum_axis(Axis(0));
    for (mut col, (&t, &s)) in x.columns_mut().into_iter().zip(nu.weights().iter().zip(&cols)) {
        col *= shrink(t, s);
    }
    let err_r = (&mu.weights() - &x.sum_axis(Axis(1))).mapv(|v| v.max(0.0));
    let err_c = (&nu.weights() - &x.sum_axis(Axis(0))).mapv(|v| v.max(0.0));
    let total = err_r.sum();
    if total > 0.0 {
        Zip::indexed(&mut x).for_each(|(i, j), v| *v += err_r[i] * err_c[j] / total);
    }
    Ok(x)
}

fn l1_gap(sums: impl Iterator<Item = f64>, target: ArrayView1<'_, f64>) -> f64 {
    sums.zip(target).map(|(s, t)| (s - t).abs()).sum()
}

/// Keeps the scalings with the smallest marginal error seen so far.
struct Best {
    log_a: Array1<f64>,
    log_b: Array1<f64>,
    error: f64,
    iteration: usize,
}

impl Best {
    fn offer(&mut self, log_a: &Array1<f64>, log_b: &Array1<f64>, error: f64, iteration: usize) {
        if error < self.error || !self.error.is_finite() {
            self.log_a.assign(log_a);
            self.log_b.assign(log_b);
            self.error = error;
            self.iteration = iteration;
        }
    }
}

fn finish(
    plan: Array2<f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    best: Best,
    iterations: usize,
    converged: bool,
    domain: Domain,
    params: &SinkhornParams,
    error_trace: Vec<f64>,
) -> Result<SinkhornSolution> {
    let coupling = Coupling::new(plan, mu.clone(), nu.clone())?;
    Ok(SinkhornSolution {
        coupling,
        state: SinkhornState {
            log_a: best.log_a,
            log_b: best.log_b,
            iterations,
            marginal_error: best.error,
        },
        converged,
        domain,
        epsilon: params.epsilon,
        error_trace,
    })
}

fn standard(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
    warm: Option<&SinkhornState>,
) -> Result<SinkhornSolution> {
    let kernel = gibbs_kernel(cost, params.epsilon)?;
    let (n, m) = kernel.dim();
    let (mu_w, nu_w) = (mu.weights(), nu.weights());

    let warm_scalings = warm.and_then(|w| {
        let a = w.a();
        let b = w.b();
        let ok = a.iter().chain(b.iter()).all(|v| v.is_finite() && *v > 0.0);
        ok.then_some((a, b))
    });
    let (mut a, mut b) = warm_scalings.unwrap_or_else(|| (Array1::ones(n), Array1::ones(m)));

    for j in 0..m {
        if nu_w[j] > 0.0 && kernel.column(j).iter().all(|&k| k == 0.0) {
            return Err(Error::KernelUnderflow {
                axis: "column",
                index: j,
                epsilon: params.epsilon,
            });
        }
    }

    let mut kta = kernel.t().dot(&a);
    let mut trace = Vec::new();
    let mut best = Best {
        log_a: Array1::zeros(n),
        log_b: Array1::zeros(m),
        error: f64::INFINITY,
        iteration: 0,
    };
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let kb = kernel.dot(&b);
        let err = l1_gap(a.iter().zip(&kb).map(|(x, y)| x * y), mu_w)
            + l1_gap(b.iter().zip(&kta).map(|(x, y)| x * y), nu_w);
        trace.push(err);
        best.offer(&a.mapv(f64::ln), &b.mapv(f64::ln), err, iterations);
        if err < params.tol {
            converged = true;
            break;
        }
        if iterations == params.max_iters {
            break;
        }
        scale(&mut a, mu_w, &kb, "row", params.epsilon)?;
        kta = kernel.t().dot(&a);
        scale(&mut b, nu_w, &kta, "column", params.epsilon)?;
        iterations += 1;
    }

    let a_best = best.log_a.mapv(f64::exp);
    let b_best = best.log_b.mapv(f64::exp);
    let mut plan = kernel;
    Zip::indexed(&mut plan).for_each(|(i, j), p| *p *= a_best[i] * b_best[j]);
    finish(plan, mu, nu, best, iterations, converged, Domain::Standard, params, trace)
}

fn scale(
    out: &mut Array1<f64>,
    target: ArrayView1<'_, f64>,
    product: &Array1<f64>,
    axis: &'static str,
    epsilon: f64,
) -> Result<()> {
    for (index, ((o, &t), &p)) in out.iter_mut().zip(target).zip(product).enumerate() {
        if t == 0.0 {
            *o = 0.0;
            continue;
        }
        let v = t / p;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::KernelUnderflow {
                axis,
                index,
                epsilon,
            });
        }
        *o = v;
    }
    Ok(())
}

/// `log Σ exp(x)` with the usual max shift; all `-inf` inputs give `-inf`.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_domain(
    cost: ArrayView2<'_, f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    params: &SinkhornParams,
    warm: Option<&SinkhornState>,
) -> Result<SinkhornSolution> {
    let (n, m) = cost.dim();
    let neg_scaled = cost.mapv(|c| -c / params.epsilon);
    let log_mu = mu.weights().mapv(f64::ln);
    let log_nu = nu.weights().mapv(f64::ln);
    let (mu_w, nu_w) = (mu.weights(), nu.weights());

    let usable = |w: &SinkhornState| {
        w.log_a.iter().chain(w.log_b.iter()).all(|v| !v.is_nan() && *v != f64::INFINITY)
    };
    let (mut log_a, mut log_b) = match warm.filter(|w| usable(w)) {
        Some(w) => (w.log_a.clone(), w.log_b.clone()),
        None => (Array1::zeros(n), Array1::zeros(m)),
    };

    let row_lse = |log_b: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(n, |i| {
            let row = neg_scaled.row(i);
            log_sum_exp(row.iter().zip(log_b).map(|(k, lb)| k + lb))
        })
    };
    let col_lse = |log_a: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(m, |j| {
            let col = neg_scaled.column(j);
            log_sum_exp(col.iter().zip(log_a).map(|(k, la)| k + la))
        })
    };
    let mass = |log_scale: f64, lse: f64| {
        let v = (log_scale + lse).exp();
        if v.is_nan() {
            0.0
        } else {
            v
        }
    };

    let mut lse_col = col_lse(&log_a);
    let mut trace = Vec::new();
    let mut best = Best {
        log_a: Array1::zeros(n),
        log_b: Array1::zeros(m),
        error: f64::INFINITY,
        iteration: 0,
    };
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let lse_row = row_lse(&log_b);
        let err = l1_gap(
            log_a.iter().zip(&lse_row).map(|(la, l)| mass(*la, *l)),
            mu_w,
        ) + l1_gap(
            log_b.iter().zip(&lse_col).map(|(lb, l)| mass(*lb, *l)),
            nu_w,
        );
        trace.push(err);
        best.offer(&log_a, &log_b, err, iterations);
        if err < params.tol {
            converged = true;
            break;
        }
        if iterations == params.max_iters {
            break;
        }
        Zip::from(&mut log_a)
            .and(&log_mu)
            .and(&lse_row)
            .for_each(|la, lm, l| *la = log_update(*lm, *l));
        lse_col = col_lse(&log_a);
        Zip::from(&mut log_b)
            .and(&log_nu)
            .and(&lse_col)
            .for_each(|lb, ln, l| *lb = log_update(*ln, *l));
        iterations += 1;
    }

    let plan = Array2::from_shape_fn((n, m), |(i, j)| {
        let v = (best.log_a[i] + best.log_b[j] + neg_scaled[[i, j]]).exp();
        if v.is_nan() {
            0.0
        } else {
            v
        }
    });
    finish(plan, mu, nu, best, iterations, converged, Domain::Log, params, trace)
}

fn log_update(log_target: f64, lse: f64) -> f64 {
    if log_target == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_target - lse
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{marginal_violation, uniform_distribution, Epsilon};
    use ndarray::array;

    fn half() -> DiscreteDistribution {
        uniform_distribution(2).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let k = gibbs_kernel(Array2::zeros((3, 3)).view(), 1.0).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));

        let k = gibbs_kernel(array![[0.0, 1.0], [1.0, 0.0]].view(), 1.0).unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        assert!((k[[0, 1]] - 0.36787944117144233).abs() < 1e-15);
        assert!((k[[0, 1]] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        let c = array![[0.0, 1.0]];
        assert!(matches!(gibbs_kernel(c.view(), 0.0), Err(Error::InvalidEpsilon(_))));
        assert!(matches!(gibbs_kernel(c.view(), -1.0), Err(Error::InvalidEpsilon(_))));
        let bad = array![[0.0, f64::NAN]];
        assert!(gibbs_kernel(bad.view(), 1.0).is_err());
    }

    #[test]
    fn extreme_ratio_underflows_standard_but_not_log() {
        let c = array![[0.0, 100.0]];
        let k = gibbs_kernel(c.view(), 0.01).unwrap();
        assert_eq!(k[[0, 1]], 0.0);

        let mu = uniform_distribution(1).unwrap();
        let nu = half();
        let params = SinkhornParams {
            epsilon: 0.01,
            max_iters: 100,
            tol: 1e-9,
        };
        let err = sinkhorn_standard(c.view(), &mu, &nu, &params).unwrap_err();
        assert!(matches!(err, Error::KernelUnderflow { axis: "column", index: 1, .. }));
        assert!(err.is_numerical());

        let sol = sinkhorn_log(c.view(), &mu, &nu, &params).unwrap();
        assert!(sol.converged);
        assert!((sol.coupling.plan()[[0, 1]] - 0.5).abs() < 1e-9);

        let cfg = SolverConfig::default().with_epsilon(0.01);
        let auto = sinkhorn_solve(c.view(), &mu, &nu, &cfg).unwrap();
        assert_eq!(auto.domain, Domain::Log);
    }

    /// Minimizes `<C, pi> + eps * Σ pi (ln pi - 1)` over the 2x2 uniform-marginal
    /// Birkhoff family `pi(t) = [[t, 1/2 - t], [1/2 - t, t]]` by dense grid.
    fn birkhoff_entropic_oracle(c: [[f64; 2]; 2], eps: f64) -> f64 {
        let h = |x: f64| x * (x.ln() - 1.0);
        let steps = 1_000_000;
        (1..steps)
            .map(|k| 0.5 * k as f64 / steps as f64)
            .map(|t| {
                let s = 0.5 - t;
                let obj = (c[0][0] + c[1][1]) * t + (c[0][1] + c[1][0]) * s
                    + eps * (2.0 * h(t) + 2.0 * h(s));
                (t, obj)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn large_epsilon_is_near_uniform() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let cfg = SolverConfig::default().with_epsilon(10.0);
        let sol = sinkhorn_solve(c.view(), &half(), &half(), &cfg).unwrap();
        assert!(sol.converged);
        let p = sol.coupling.plan();
        let oracle = birkhoff_entropic_oracle([[0.0, 1.0], [1.0, 0.0]], 10.0);
        assert!((p[[0, 0]] - oracle).abs() < 1e-6, "{} vs {oracle}", p[[0, 0]]);
        // Frozen: 0.5 / (1 + e^{-0.1}).
        assert!((p[[0, 0]] - 0.262489593739).abs() < 1e-9);
        assert!((p[[0, 1]] - 0.237510406261).abs() < 1e-9);
        assert!(sol.coupling.marginal_violation() < 1e-6);
    }

    #[test]
    fn small_epsilon_approaches_exact_transport() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let cfg = SolverConfig::default().with_epsilon(0.01);
        let sol = sinkhorn_solve(c.view(), &half(), &half(), &cfg).unwrap();
        let p = sol.coupling.plan();
        for (got, want) in p.iter().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((got - want).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn zero_cost_gives_product_coupling() {
        for eps in [1e-3, 0.1, 5.0] {
            let cfg = SolverConfig::default().with_epsilon(eps);
            let sol = sinkhorn_solve(Array2::zeros((2, 2)).view(), &half(), &half(), &cfg).unwrap();
            assert!(sol.coupling.plan().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn default_epsilon_scales_with_mean_cost() {
        let c = array![[0.0, 4.0], [4.0, 0.0]];
        let sol = sinkhorn_solve(c.view(), &half(), &half(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.epsilon, 0.02);
        let cfg = SolverConfig {
            epsilon: Epsilon::RelativeToMeanCost(0.5),
            ..SolverConfig::default()
        };
        assert_eq!(sinkhorn_solve(c.view(), &half(), &half(), &cfg).unwrap().epsilon, 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let c = Array2::zeros((2, 3));
        let cfg = SolverConfig::default().with_epsilon(1.0);
        assert!(matches!(
            sinkhorn_solve(c.view(), &half(), &half(), &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rectangular_and_zero_mass() {
        let c = array![[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]];
        let mu = DiscreteDistribution::new(array![0.0, 1.0]).unwrap();
        let nu = DiscreteDistribution::new(array![0.2, 0.3, 0.5]).unwrap();
        let params = SinkhornParams {
            epsilon: 0.5,
            max_iters: 1000,
            tol: 1e-12,
        };
        for domain in [Domain::Standard, Domain::Log] {
            let sol = sinkhorn_in(domain, c.view(), &mu, &nu, &params, None).unwrap();
            assert!(sol.converged);
            assert!(sol.coupling.plan().row(0).iter().all(|&v| v == 0.0));
            assert!(sol.coupling.marginal_violation() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let mu = DiscreteDistribution::new(array![0.3, 0.7]).unwrap();
        let params = SinkhornParams {
            epsilon: 0.05,
            max_iters: 1,
            tol: 1e-15,
        };
        let sol = sinkhorn_standard(c.view(), &mu, &half(), &params).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.state.iterations, 1);
        assert_eq!(sol.error_trace.len(), 2);
        assert!(sol.state.marginal_error > 0.0);
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let c = array![[0.0, 2.0, 1.0], [1.0, 0.0, 3.0], [0.5, 1.5, 0.0]];
        let mu = uniform_distribution(3).unwrap();
        let params = SinkhornParams {
            epsilon: 0.3,
            max_iters: 5000,
            tol: 1e-10,
        };
        for domain in [Domain::Standard, Domain::Log] {
            let cold = sinkhorn_in(domain, c.view(), &mu, &mu, &params, None).unwrap();
            let warm = sinkhorn_in(domain, c.view(), &mu, &mu, &params, Some(&cold.state)).unwrap();
            assert_eq!(warm.state.iterations, 0);
            assert_eq!(warm.coupling.plan(), cold.coupling.plan());
        }
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp([f64::NEG_INFINITY; 3].into_iter()), f64::NEG_INFINITY);
        assert!((log_sum_exp([0.0, 0.0].into_iter()) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp([1000.0, 1000.0].into_iter()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn epsilon_scaling_reaches_small_epsilon() {
        let cost = array![[1.43695, 0.12307, 0.10223], [1.17847, 0.03905, 0.29600], [0.08422, 0.69997, 1.26747]];
        let mu = uniform_distribution(3).unwrap();
        let params = SinkhornParams {
            epsilon: 6e-4,
            max_iters: 2000,
            tol: 1e-9,
        };
        let scaled = sinkhorn_scaled(cost.view(), &mu, &mu, &params, 1.5, None, false).unwrap();
        assert!(scaled.converged);
        assert!(scaled.coupling.marginal_violation() < 1e-9);
        let t = 1.0 / 3.0;
        let vertex = array![[0.0, 0.0, t], [0.0, t, 0.0], [t, 0.0, 0.0]];
        assert!((&scaled.coupling.plan() - &vertex).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn epsilon_scaling_matches_single_stage() {
        let cost = array![[0.0, 2.0, 1.0], [1.5, 0.3, 2.2]];
        let mu = DiscreteDistribution::new(array![0.4, 0.6]).unwrap();
        let nu = DiscreteDistribution::new(array![0.2, 0.3, 0.5]).unwrap();
        let params = SinkhornParams {
            epsilon: 0.2,
            max_iters: 10_000,
            tol: 1e-12,
        };
        let one = sinkhorn_in(Domain::Log, cost.view(), &mu, &nu, &params, None).unwrap();
        let many = sinkhorn_scaled(cost.view(), &mu, &nu, &params, 5.0, None, true).unwrap();
        let gap = (&one.coupling.plan() - &many.coupling.plan()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(gap < 1e-11, "{gap}");
        let single = sinkhorn_scaled(cost.view(), &mu, &nu, &params, 0.0, None, true).unwrap();
        assert_eq!(single.state.iterations, one.state.iterations);
    }

    #[test]
    fn rounding_restores_marginals() {
        let mu = DiscreteDistribution::new(array![0.3, 0.7]).unwrap();
        let nu = DiscreteDistribution::new(array![0.5, 0.25, 0.25]).unwrap();
        let plan = array![[0.16, 0.1, 0.02], [0.33, 0.16, 0.24]];
        let before = marginal_violation(plan.view(), mu.weights(), nu.weights());
        let rounded = round_to_marginals(&plan, &mu, &nu).unwrap();
        assert!(marginal_violation(rounded.view(), mu.weights(), nu.weights()) < 1e-15);
        assert!(rounded.iter().all(|&v| v >= 0.0));
        let moved: f64 = (&rounded - &plan).iter().map(|v| v.abs()).sum();
        assert!(moved <= 2.0 * before + 1e-15, "{moved} vs {before}");

        let exact = mu.product(&nu);
        assert_eq!(round_to_marginals(&exact, &mu, &nu).unwrap(), exact);
    }
}
