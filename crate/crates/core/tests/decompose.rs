mod common;

use common::{random_pair, rel};
use mechdecomp::decompose::{
    common_constraints, common_mechanism, common_mechanism_multi, min_trace_dominating,
    Decomposition, SolverConfig,
};
use mechdecomp::mechanism::{is_answerable, is_equivalent, PrivacyAccount};
use mechdecomp::psd::{loewner_leq, sym_eig, SymMatrix};
use mechdecomp::{LinearGaussianMechanism, Tolerances};
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn common_is_answerable_and_maximal(seed in any::<u64>()) {
        let (m1, m2) = random_pair(seed);
        let c = common_mechanism(&m1, &m2, tol()).unwrap();
        prop_assert!(is_answerable(&c, &m1, tol()).unwrap());
        prop_assert!(is_answerable(&c, &m2, tol()).unwrap());
        if c.is_empty() {
            return Ok(());
        }
        // Shrinking Σ* by ε·I breaks at least one constraint Σ ⪰ AᵢAᵢᵀ.
        let cc = common_constraints(&[&m1, &m2], tol()).unwrap();
        let sigma = c.covariance();
        let eps = 1e-3 * sigma.trace();
        let shrunk = sigma.sub(&SymMatrix::identity(sigma.dim()).scale(eps));
        let violated = cc.constraints.iter().any(|x| {
            sym_eig(&shrunk.sub(x)).unwrap().min() < -1e-12 * sigma.trace()
        });
        prop_assert!(violated);
    }

    #[test]
    fn decomposition_identities(seed in any::<u64>()) {
        let (m1, m2) = random_pair(seed);
        let dec = Decomposition::new(vec![m1, m2], &SolverConfig::default(), tol()).unwrap();
        for (i, t) in dec.targets.iter().enumerate() {
            let r = &dec.residuals[i];
            let sum = dec.common.cost_matrix().matrix().add(r.cost_matrix().matrix());
            prop_assert!(rel(sum.as_matrix(), t.cost_matrix().matrix().as_matrix()) < 1e-7);

            let stacked = LinearGaussianMechanism::stack(&[&dec.common, r]).unwrap();
            prop_assert!(is_equivalent(&stacked, t, tol()).unwrap());
            prop_assert!((stacked.rho() - t.rho()).abs() <= 1e-7 * t.rho());
            let eps = [0.5, 2.0];
            let (a, b) = (PrivacyAccount::of(&stacked, &eps), PrivacyAccount::of(t, &eps));
            for (x, y) in a.per_record_rho.iter().zip(&b.per_record_rho) {
                prop_assert!((x - y).abs() <= 1e-7 * t.rho());
            }

            let rc = &dec.recon[i];
            prop_assert!(rel(&rc.mean_map(&dec.common, r), t.query()) < 1e-8);
            let explained = dec.common.covariance().congruence(&rc.a_common)
                .add(&r.covariance().congruence(&rc.a_residual));
            let loose = Tolerances::new(1e-9, 1e-6).unwrap();
            prop_assert!(loewner_leq(&explained, t.covariance(), loose).unwrap());
        }
        prop_assert!(dec.report.max_cost_identity_error < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn solver_matches_closed_form(seed in any::<u64>()) {
        let (m1, m2) = random_pair(seed);
        let cc = common_constraints(&[&m1, &m2], tol()).unwrap();
        prop_assume!(cc.basis.nrows() > 0);
        let closed = common_mechanism(&m1, &m2, tol()).unwrap();
        let out = min_trace_dominating(&cc.constraints, &SolverConfig::default()).unwrap();
        let t = closed.covariance().trace();
        prop_assert!((out.sigma.trace() - t).abs() <= 1e-5 * t);
        for x in &cc.constraints {
            prop_assert!(loewner_leq(x, &out.sigma, tol()).unwrap());
            prop_assert!(loewner_leq(x, closed.covariance(), tol()).unwrap());
        }
    }
}

#[test]
fn three_way_common_is_answerable_from_each() {
    for seed in 0..10 {
        let (m1, m2) = random_pair(seed);
        let (m3, _) = random_pair(seed + 1000);
        if m3.domain_size() != m1.domain_size() {
            continue;
        }
        let c = common_mechanism_multi(&[&m1, &m2, &m3], &SolverConfig::default(), tol()).unwrap();
        for m in [&m1, &m2, &m3] {
            assert!(is_answerable(&c, m, tol()).unwrap());
        }
    }
}

#[test]
fn common_of_nested_pair_is_the_coarser_one() {
    // Rows of m1 lie in the row space of m2, and m2 is much noisier: the
    // common mechanism is then m1's queries answered through m2.
    let b2 = nalgebra::DMatrix::<f64>::identity(4, 4);
    let b1 = nalgebra::DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    let m1 = LinearGaussianMechanism::with_variance(b1.clone(), 1.0).unwrap();
    let m2 = LinearGaussianMechanism::with_variance(b2, 9.0).unwrap();
    let c = common_mechanism(&m1, &m2, tol()).unwrap();
    let via_m2 = LinearGaussianMechanism::with_variance(b1, 18.0).unwrap();
    assert!(is_equivalent(&c, &via_m2, tol()).unwrap());
}
