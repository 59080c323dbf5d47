use gwkit::sinkhorn::{gibbs_kernel, sinkhorn_in, Domain, SinkhornParams};
use gwkit::DiscreteDistribution;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn problem() -> impl Strategy<Value = (Array2<f64>, DiscreteDistribution, DiscreteDistribution, f64)> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(0.0..5.0f64, n * m),
            prop::collection::vec(0.05..1.0f64, n),
            prop::collection::vec(0.05..1.0f64, m),
            0.2..3.0f64,
        )
            .prop_map(move |(c, a, b, eps)| {
                let norm = |v: Vec<f64>| {
                    let s: f64 = v.iter().sum();
                    DiscreteDistribution::new(Array1::from(v) / s).unwrap()
                };
                (Array2::from_shape_vec((n, m), c).unwrap(), norm(a), norm(b), eps)
            })
    })
}

fn params(epsilon: f64) -> SinkhornParams {
    SinkhornParams {
        epsilon,
        max_iters: 10_000,
        tol: 1e-9,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn converged_solves_are_feasible((cost, mu, nu, eps) in problem()) {
        for domain in [Domain::Standard, Domain::Log] {
            let sol = sinkhorn_in(domain, cost.view(), &mu, &nu, &params(eps), None).unwrap();
            prop_assert!(sol.converged);
            prop_assert!(sol.coupling.marginal_violation() < 1e-9);
            prop_assert!(sol.coupling.plan().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn domains_agree((cost, mu, nu, eps) in problem()) {
        let s = sinkhorn_in(Domain::Standard, cost.view(), &mu, &nu, &params(eps), None).unwrap();
        let l = sinkhorn_in(Domain::Log, cost.view(), &mu, &nu, &params(eps), None).unwrap();
        let gap = (&s.coupling.plan() - &l.coupling.plan()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        prop_assert!(gap <= 1e-8, "gap {}", gap);
    }

    #[test]
    fn marginal_error_is_monotone((cost, mu, nu, eps) in problem()) {
        let sol = sinkhorn_in(Domain::Log, cost.view(), &mu, &nu, &params(eps), None).unwrap();
        let sampled: Vec<f64> = sol.error_trace.iter().skip(1).step_by(10).copied().collect();
        for w in sampled.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn kernel_scale_equivariance(
        c in prop::collection::vec(0.0..10.0f64, 1..30),
        eps in 0.01..5.0f64,
        s in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0]),
    ) {
        let n = c.len();
        let cost = Array2::from_shape_vec((1, n), c).unwrap();
        let k = gibbs_kernel(cost.view(), eps).unwrap();
        let scaled = gibbs_kernel((&cost * s).view(), eps * s).unwrap();
        prop_assert_eq!(k.clone(), scaled);
        prop_assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}
