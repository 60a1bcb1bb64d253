//! Property test: the iterative solver matches a brute-force active-set
//! reference on random small strictly convex programs.

mod common;

use pobounds::qp::{kkt_residuals, solve, SolveStatus, SolverSettings};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn solver_matches_enumeration_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let settings = SolverSettings {
        max_iter: 200_000,
        ..SolverSettings::default().with_tolerance(1e-6)
    };
    let mut hardest: f64 = 0.0;
    for case in 0..200 {
        let problem = common::random_qp(&mut rng, 10, 15);
        let (x_ref, obj_ref) =
            common::oracle_solve(&problem).expect("feasible by construction");
        let sol = solve(&problem, &settings).unwrap();
        assert_eq!(
            sol.status,
            SolveStatus::Solved,
            "case {case}: solver did not converge"
        );
        let rel = (sol.objective - obj_ref).abs() / (1.0 + obj_ref.abs());
        hardest = hardest.max(rel);
        assert!(
            rel <= 1e-4,
            "case {case}: objective {} vs reference {} (rel {rel:.2e}, x_ref {x_ref})",
            sol.objective,
            obj_ref
        );
        let (pr, dr) = kkt_residuals(&problem, &sol.x, &sol.y).unwrap();
        assert!(pr <= 1e-5, "case {case}: primal residual {pr}");
        assert!(dr <= 1e-5, "case {case}: dual residual {dr}");
    }
    println!("largest relative objective gap over 200 cases: {hardest:.2e}");
}
