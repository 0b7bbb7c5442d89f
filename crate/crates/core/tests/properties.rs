mod common;

use insdual::config::RunConfig;
use insdual::conic::{solve, verify, Cone, ConicProgram, SolveStatus, SolverOptions};
use insdual::generator::{check_dual_feasibility, generator_apply, GeneratorOp, PolyValueFn};
use insdual::model::{integrate_claims, premium_poly, premium_transform, ClaimLaw, RetentionPolicy};
use insdual::moments::*;
use insdual::occupation::*;
use insdual::poly::{AffineMap, UniPoly};
use insdual::sim::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn coeffs(max_deg: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 1..=max_deg + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_map_round_trip(lo in -20.0..10.0f64, w in 5.0..100.0f64, c in coeffs(5), y in -60.0..120.0f64) {
        let map = AffineMap::from_interval(lo, lo + w);
        prop_assert!((map.from_unit(map.to_unit(y)) - y).abs() <= 1e-10 * (1.0 + y.abs()));
        let p = UniPoly::new(c);
        let back = map.scale_poly(&map.unscale_poly(&p));
        let t = map.to_unit(y).clamp(-1.0, 1.0);
        prop_assert!((back.eval(t) - p.eval(t)).abs() <= 1e-8);
    }

    #[test]
    fn generator_forms_agree(theta in 0.05..1.0f64, c in coeffs(4), y in -5.0..30.0f64) {
        let m = common::proportional();
        let u = RetentionPolicy::Proportional { theta };
        let map = AffineMap::from_interval(-10.0, 40.0);
        let phi = PolyValueFn::new(UniPoly::new(c), map);
        let op = GeneratorOp::new(&m, &u, map, phi.degree());
        let pointwise = op.apply(&phi, y);
        let unit = op.apply_poly(&phi).eval(map.to_unit(y));
        let original = generator_apply(&m, &u, &phi.original()).eval(y);
        let scale = 1.0 + pointwise.abs();
        prop_assert!((pointwise - unit).abs() <= 1e-9 * scale);
        prop_assert!((pointwise - original).abs() <= 1e-7 * scale);
    }

    #[test]
    fn retained_moments_match_integration(cap in 0.01..6.0f64, i in 0usize..5) {
        let law = ClaimLaw::exponential(1.3).unwrap();
        let u = RetentionPolicy::ExcessOfLoss { cap };
        // the kink at the cap spoils Gauss-Laguerre; split the integral instead
        let rate = 1.3;
        let inside = quadrature::double_exponential::integrate(|y| y.powi(i as i32) * rate * (-rate * y).exp(), 0.0, cap, 1e-13).integral;
        let exact = inside + cap.powi(i as i32) * (-rate * cap).exp();
        prop_assert!((law.retained_moment(&u, i) - exact).abs() <= 1e-9 * exact.max(1.0));
    }

    #[test]
    fn premium_forms_agree(theta in 0.0..1.0f64, x in 0.0..20.0f64) {
        let m = common::exp_model(vec![(0, 0, 0.2), (1, 0, 1.1), (2, 0, 0.3), (0, 1, 0.05)], 1.0, 0.1, 1.5,
            insdual::model::RetentionFamily::Proportional { a0: 0.0 });
        let u = RetentionPolicy::Proportional { theta };
        let closed = premium_transform(&m, &u, x);
        prop_assert!((closed - premium_poly(&m, &u).eval(x)).abs() <= 1e-10 * (1.0 + closed));
        let direct = integrate_claims(&m.claims, |y| m.premium.eval(theta * y, x));
        prop_assert!((closed - direct).abs() <= 1e-9 * (1.0 + closed));
    }

    #[test]
    fn moment_matrices_of_measures_are_psd(
        atoms in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64), 1..40),
        r in 1usize..=3,
    ) {
        let mut mu = AtomMeasure::new("mu", vec![Label::S1, Label::Y1]);
        for &(a, b, w) in &atoms {
            mu.push(&[a, b], w);
        }
        let mv = moments_from_atoms(&mu, r, &[Label::S1, Label::Y1], &MomentOptions::default()).unwrap();
        let scale = mu.mass().max(1e-300);
        prop_assert!(moment_matrix(&mv, r).unwrap().min_eigenvalue() >= -1e-10 * scale);
        // atoms inside [-1, 1]^2 satisfy the box localizers
        for var in 0..2 {
            let g = Poly::box_generator(2, var, -1.0, 1.0);
            prop_assert!(localizing_matrix(&mv, &g, r).unwrap().min_eigenvalue() >= -1e-10 * scale);
        }
    }

    #[test]
    fn original_units_round_trip(atoms in prop::collection::vec((0.0..3.0f64, -2.0..8.0f64, 0.01..1.0f64), 1..10)) {
        let mut mu = AtomMeasure::new("mu", vec![Label::S1, Label::Y1]);
        for &(a, b, w) in &atoms {
            mu.push(&[a, b], w);
        }
        let vars = [Label::S1, Label::Y1];
        let maps = vec![AffineMap::from_interval(0.0, 3.0), AffineMap::from_interval(-2.0, 8.0)];
        let scaled = moments_from_atoms(&mu, 2, &vars, &MomentOptions { discount: None, maps: Some(maps) }).unwrap();
        let plain = moments_from_atoms(&mu, 2, &vars, &MomentOptions::default()).unwrap();
        let orig = scaled.to_original();
        for (alpha, v) in &plain.entries {
            prop_assert!((orig.entries[alpha] - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }
}

fn strategy_draw() -> impl Strategy<Value = (f64, f64, f64, f64, u64)> {
    (0.05..1.0f64, 0.0..3.0f64, 0.5..6.0f64, 0.0..1.0f64, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn paths_respect_barriers_and_envelope((theta, inj, div, frac, seed) in strategy_draw()) {
        let m = common::proportional();
        let x0 = frac * div;
        let s = StrategySpec::barrier(RetentionPolicy::Proportional { theta }, inj, div);
        let traj = simulate_path(&m, &s, x0, 10.0, seed, &SimOptions::default()).unwrap();
        prop_assert!(pathwise_bound_check(&traj, &m, x0).ok);
        for seg in &traj.segments {
            for &x in &seg.reserves {
                prop_assert!(x <= div + 1e-9);
            }
        }
        let o = traj.outcome;
        prop_assert!(o.disc_dividends >= 0.0 && o.disc_injections >= 0.0);
        prop_assert!((o.gain - (o.disc_dividends - m.k * o.disc_injections - o.disc_penalty)).abs() <= 1e-9 * (1.0 + o.gain.abs()));
        if traj.ruin_time.is_some() {
            prop_assert!(traj.terminal_reserve < 0.0);
        }
    }

    #[test]
    fn occupation_marginals_and_masses((theta, inj, div, frac, seed) in strategy_draw()) {
        let m = common::proportional();
        let b = common::bounds(&m);
        let x0 = frac * div;
        let s = StrategySpec::barrier(RetentionPolicy::Proportional { theta }, inj, div);
        let occ = build_occupation(&m, &s, x0, 1.0, 20, seed, &b, &OccupationOptions::exact(), &SimOptions::default()).unwrap().system;
        prop_assert!(marginal_identity_check(&occ, m.q).pass);
        let mr = mass_report(&occ, m.q);
        prop_assert!(mr.gamma0_ok && mr.gamma1_ok);
        prop_assert!((occ.gamma0.mass() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn lp_solutions_verify(
        entries in prop::collection::vec(0.1..2.0f64, 12),
        x_feas in prop::collection::vec(0.1..1.0f64, 4),
        cost in prop::collection::vec(0.1..3.0f64, 4),
    ) {
        // a feasible point and positive costs keep the program bounded
        let a = DMatrix::from_row_slice(3, 4, &entries);
        let b: Vec<f64> = (0..3).map(|i| (0..4).map(|j| a[(i, j)] * x_feas[j]).sum()).collect();
        let prog = ConicProgram { c: cost, a, b, cones: vec![Cone::Nonneg(4)] };
        let res = solve(&prog, &SolverOptions::default()).unwrap();
        prop_assert_eq!(res.status, SolveStatus::Optimal);
        prop_assert!(verify(&prog, &res, 1e-6).pass);
        prop_assert!((res.primal_obj - res.dual_obj).abs() <= 1e-6 * (1.0 + res.primal_obj.abs()));
    }

    #[test]
    fn sdp_eigenvalue_program(d in prop::collection::vec(-2.0..2.0f64, 6)) {
        // min <C, X> s.t. tr X = 1 is the smallest eigenvalue of C
        let c = DMatrix::from_row_slice(3, 3, &[d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5]]);
        let prog = ConicProgram {
            c: insdual::conic::svec(&c),
            a: DMatrix::from_row_slice(1, 6, &insdual::conic::svec(&DMatrix::identity(3, 3))),
            b: vec![1.0],
            cones: vec![Cone::Psd(3)],
        };
        let res = solve(&prog, &SolverOptions::default()).unwrap();
        prop_assert_eq!(res.status, SolveStatus::Optimal);
        let emin = c.symmetric_eigen().eigenvalues.min();
        prop_assert!((res.primal_obj - emin).abs() <= 1e-6 * (1.0 + emin.abs()));
        prop_assert!(verify(&prog, &res, 1e-6).pass);
    }

    #[test]
    fn shifted_functions_pass_the_check(c in coeffs(3), slope in 1.0..1.5f64) {
        let m = common::proportional();
        let b = common::bounds(&m);
        // phi(y) = slope y + small wiggle; the check either shifts it into
        // feasibility or reports a derivative failure
        let map = PolyValueFn::box_map(&b);
        let mut orig = map.unscale_poly(&UniPoly::new(c.iter().map(|v| 1e-3 * v).collect()));
        orig.add_scaled(&UniPoly::new(vec![0.0, slope]), 1.0);
        let phi = PolyValueFn::from_original(&orig, map);
        let opts = insdual::generator::CheckOptions { n_y: 129, n_u: 9, tol: 1e-7 };
        let (shifted, rep) = check_dual_feasibility(&m, &phi, &b, 0.0, &opts).unwrap();
        prop_assert!(rep.shift >= 0.0);
        if rep.derivative_ok {
            let (_, again) = check_dual_feasibility(&m, &shifted, &b, 0.0, &opts).unwrap();
            prop_assert!(again.max_generator <= 1e-6 * (1.0 + shifted.eval(0.0).abs()));
            prop_assert!(again.min_value >= -1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_round_trip(
        seed in 0..i64::MAX as u64,
        lambda in 0.1..3.0f64,
        q in 0.01..0.5f64,
        k in 1.01..3.0f64,
        r in 1usize..=4,
        x0 in prop::option::of(-2.0..5.0f64),
    ) {
        let text = format!(
            "seed = {seed}\noutput = \"out\"\nlambda = {lambda}\nq = {q}\nk = {k}\n\n[claims]\nkind = \"exponential\"\nrate = 1.0\n\n\
             [premium]\ncoefficients = [[0, 0, 0.1], [1, 0, 1.5]]\n\n[retention]\nfamily = \"full\"\n\n\
             [bounds]\nxbar = 5.0\nT = 20.0\neps = 0.5\n\n[ddp]\nr = {r}\n"
        );
        let mut cfg = RunConfig::from_toml_str(&text).unwrap();
        cfg.x0 = x0;
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
