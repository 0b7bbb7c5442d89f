mod common;

use insdual::ddp::*;
use insdual::generator::{check_dual_feasibility, PolyValueFn};

fn small(seed: u64) -> DdpConfig {
    let mut cfg = DdpConfig {
        r: 2,
        max_iter: 3,
        tol: 1e-6,
        n_paths: 200,
        n_paths_lb: 2000,
        grid_theta: 2,
        grid_inj: 2,
        grid_div: 3,
        lp_points: 129,
        lp_retentions: 9,
        seed,
        ..Default::default()
    };
    cfg.check.n_y = 257;
    cfg.check.n_u = 33;
    cfg
}

#[test]
fn deterministic_gap_closes() {
    let m = common::deterministic(1.0, 0.2);
    let b = insdual::model::space_bounds(&m, 5.0, 10.0, 0.5).unwrap();
    let cfg = DdpConfig { max_iter: 2, n_paths: 4, n_paths_lb: 4, grid_theta: 1, grid_inj: 2, grid_div: 4, ..Default::default() };
    let res = run_ddp(&m, &b, 1.0, &cfg).unwrap();
    let v = 1.0 + 1.0 / 0.2;
    assert!(res.converged);
    assert!((res.certified_ub - v).abs() < 1e-2 * v);
    assert!((res.best_lb - v).abs() < 1e-2 * v);
    assert_eq!(res.logs.last().unwrap().status, "converged");
}

#[test]
fn running_bounds_are_monotone() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let res = run_ddp(&m, &b, 2.0, &small(1)).unwrap();
    assert_eq!(res.logs.len(), 3);
    for w in res.logs.windows(2) {
        assert!(w[1].certified_ub <= w[0].certified_ub);
        assert!(w[1].best_lb >= w[0].best_lb);
    }
    for l in &res.logs {
        assert!(l.certified_ub <= l.phi_at_x0);
        assert!((l.gap - (l.certified_ub - l.best_lb)).abs() < 1e-12);
        assert!(l.solver_verified);
    }
    assert_eq!(res.certified_ub, res.logs.last().unwrap().certified_ub);
    assert_eq!(res.logs.last().unwrap().status, "max_iter");
    // the returned function is the one attaining the certified bound
    assert!((res.phi.eval(2.0) - res.certified_ub).abs() < 1e-9 * (1.0 + res.certified_ub));
}

#[test]
fn returned_function_is_dual_feasible() {
    let m = common::penalized();
    let b = common::bounds(&m);
    let cfg = small(2);
    let res = run_ddp(&m, &b, 1.0, &cfg).unwrap();
    let (_, rep) = check_dual_feasibility(&m, &res.phi, &b, cfg.eps, &cfg.check).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.shift <= 1e-9 * (1.0 + res.certified_ub), "{rep:?}");
}

#[test]
fn forward_selects_the_best_accepted_candidate() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let cfg = small(3);
    let fw = forward_step(&m, &b, 2.0, &PolyValueFn::zero(PolyValueFn::box_map(&b)), &cfg, 5).unwrap();
    // the start x0 joins the dividend grid
    assert_eq!(fw.candidates.len(), 2 * 2 * (3 + 1));
    assert!(!fw.all_rejected);
    let best = fw.candidates.iter().filter(|c| c.accepted).map(|c| c.objective).fold(f64::NEG_INFINITY, f64::max);
    let sel = &fw.candidates[fw.selected];
    assert!(sel.accepted);
    assert_eq!(sel.objective, best);
    for c in &fw.candidates {
        let parts = c.dividends - m.k * c.injections + c.continuation - c.penalty;
        assert!((c.objective - parts).abs() < 1e-9 * (1.0 + c.objective.abs()), "{c:?}");
    }
}

#[test]
fn lower_bound_includes_the_continuation() {
    // with no claims the pay-all continuation is exact: x0 + p0 / q
    let m = common::deterministic(1.0, 0.2);
    let b = insdual::model::space_bounds(&m, 5.0, 10.0, 0.5).unwrap();
    let s = insdual::sim::StrategySpec::pay_all(1.0);
    let st = lower_bound_estimate(&m, &s, 1.0, b.t, 4, 1, &Default::default()).unwrap();
    assert!((st.mean - 6.0).abs() < 1e-3, "{st:?}");
}

#[test]
fn observer_sees_every_iteration() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let mut seen = Vec::new();
    let res = run_ddp_with(&m, &b, 2.0, &DdpConfig { max_iter: 2, ..small(4) }, &mut |bundle| {
        seen.push((bundle.log.z, bundle.candidates.len()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), res.logs.len());
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), res.logs.iter().map(|l| l.z).collect::<Vec<_>>());
}

#[test]
fn nested_ladder_keeps_the_best_bounds() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let cfg = DdpConfig { max_iter: 1, ..small(5) };
    let stages = run_nested(&m, &b, 2.0, &cfg, &[0.5, 1.0], &mut |_| Ok(())).unwrap();
    assert_eq!(stages.len(), 2);
    for s in &stages {
        assert!(s.best_lb - 3.0 * s.best_lb_std_error.unwrap_or(0.0) <= s.certified_ub + 1e-6);
    }
}

#[test]
fn negative_starts() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let cfg = DdpConfig { max_iter: 1, ..small(6) };
    let res = run_ddp(&m, &b, -0.5, &cfg).unwrap();
    let n = res.negative.unwrap();
    assert!(!n.bankrupt);
    assert!((n.upper - (n.phi_at_zero - 0.5 * m.k)).abs() < 1e-12);
    assert!(n.lower <= n.upper);
    let res = run_ddp(&m, &b, -1e3, &cfg).unwrap();
    let n = res.negative.unwrap();
    assert!(n.bankrupt);
    assert_eq!(n.upper, 0.0);
    assert_eq!(n.lower, 0.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let m = common::proportional();
    let b = common::bounds(&m);
    for cfg in [DdpConfig { r: 0, ..small(0) }, DdpConfig { max_iter: 0, ..small(0) }, DdpConfig { n_paths: 0, ..small(0) }] {
        assert!(run_ddp(&m, &b, 1.0, &cfg).is_err());
    }
}
