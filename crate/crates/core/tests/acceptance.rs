//! Acceptance suite. Each test prints one line of the form
//! `acceptance criterion N: PASS | ...` and then asserts.

mod common;

use insdual::ddp::*;
use insdual::generator::{generator_on_monomial, PolyValueFn};
use insdual::model::{premium_transform, retained_claim_moment, ClaimLaw, RetentionFamily, RetentionPolicy, RiskModel};
use insdual::moments::*;
use insdual::occupation::*;
use insdual::poly::{AffineMap, UniPoly};
use insdual::sim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn cheap_ddp(seed: u64) -> DdpConfig {
    let mut cfg = DdpConfig {
        r: 2,
        max_iter: 2,
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

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_pay_all_gain() {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, m, x0) in [("no penalty", common::proportional(), 2.0), ("penalty", common::penalized(), 1.0)] {
        let t = Instant::now();
        let est = estimate_gain(&m, &StrategySpec::pay_all(x0), x0, 200.0, 100_000, 11, &SimOptions::default()).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let exact = m.pay_all_value(x0);
        let dev = (est.mean() - exact).abs();
        let se = est.gain.se();
        let pass = dev <= 3.0 * se && secs <= 60.0;
        ok &= pass;
        lines.push(format!("{name}: mean {:.5} exact {exact:.5} |dev| {dev:.2e} se {se:.2e} {secs:.1}s", est.mean()));
    }
    common::report(1, ok, &lines.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_estimates() {
    let matrix = common::model_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for i in 0..1000u64 {
        let (_, m) = &matrix[i as usize % matrix.len()];
        let grid = m.family.grid(5, m.claims.upper_quantile());
        let u = grid[rng.gen_range(0..grid.len())];
        let inj = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..4.0) };
        let div = if rng.gen_bool(0.15) { f64::INFINITY } else { rng.gen_range(0.5..8.0) };
        let x0 = rng.gen_range(0.0..div.min(6.0));
        let traj = simulate_path(m, &StrategySpec::barrier(u, inj, div), x0, 15.0, 1000 + i, &SimOptions::default()).unwrap();
        let c = pathwise_bound_check(&traj, m, x0);
        worst = worst.min(c.min_margin);
        if !c.ok {
            violations += 1;
        }
    }
    let envelope_ok = violations == 0;

    // discounted injection, dividend and supremum bounds for the strategies
    // the forward step ranks highest
    let mut bound_ok = true;
    let mut checked = 0;
    let mut detail = String::new();
    for (name, m) in [("exp-prop", common::proportional()), ("penalized", common::penalized()), ("emp-full", matrix[8].1.clone())] {
        let b = common::bounds(&m);
        let cfg = cheap_ddp(5);
        let x0 = 2.0;
        let fw = forward_step(&m, &b, x0, &PolyValueFn::zero(PolyValueFn::box_map(&b)), &cfg, 9).unwrap();
        let mut ranked: Vec<&ForwardCandidate> = fw.candidates.iter().filter(|c| c.accepted).collect();
        ranked.sort_by(|a, b| b.objective.total_cmp(&a.objective));
        for c in ranked.iter().take(3) {
            let est = estimate_gain(&m, &c.strategy, x0, b.t, 20_000, 21, &SimOptions::default()).unwrap();
            let inj = est.disc_injections.mean - 3.0 * est.disc_injections.se();
            let div = est.disc_dividends.mean - 3.0 * est.disc_dividends.se();
            let sup = est.sup_disc_reserve.mean - 3.0 * est.sup_disc_reserve.se();
            let pass = inj <= m.injection_bound() && div <= m.dividend_bound(x0) && sup <= m.dividend_bound(x0);
            bound_ok &= pass;
            checked += 1;
            if !pass {
                detail += &format!(" {name} {:?} inj {inj:.3}/{:.3} div {div:.3}/{:.3} sup {sup:.3}", c.strategy, m.injection_bound(), m.dividend_bound(x0));
            }
        }
    }
    let ok = envelope_ok && bound_ok && checked > 0;
    common::report(
        2,
        ok,
        &format!("envelope: {violations}/1000 violations, min margin {worst:.3e}; mass bounds on {checked} near-best strategies{detail}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 3

fn random_unit_poly(rng: &mut ChaCha8Rng, map: AffineMap) -> PolyValueFn {
    let deg = rng.gen_range(1..=4);
    PolyValueFn::new(UniPoly::new((0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect()), map)
}

#[test]
fn criterion_03_adjoint_identity() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let strategies = [
        StrategySpec::barrier(RetentionPolicy::Proportional { theta: 1.0 }, 0.0, 3.0),
        StrategySpec::barrier(RetentionPolicy::Proportional { theta: 0.5 }, 1.0, 3.0),
        StrategySpec::barrier(RetentionPolicy::Proportional { theta: 0.25 }, 2.0, f64::INFINITY),
        StrategySpec::barrier(RetentionPolicy::Proportional { theta: 0.75 }, 0.5, 1.5),
        StrategySpec::pay_all(1.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let map = AffineMap::from_interval(-10.0, 20.0);
    let polys: Vec<PolyValueFn> = (0..20).map(|_| random_unit_poly(&mut rng, map)).collect();
    let sim = SimOptions { step: Some(0.05) };
    let build = |s: &StrategySpec, n, seed| build_occupation(&m, s, 1.0, 1.0, n, seed, &b, &OccupationOptions::exact(), &sim).unwrap().system;

    let mut within = true;
    let mut worst_ratio: f64 = 0.0;
    let mut decreased = 0;
    for batch in 0..10u64 {
        let s = &strategies[batch as usize % strategies.len()];
        let small = build(s, 200, 100 + batch);
        let large = build(s, 20_000, 100 + batch);
        let (mut sum_small, mut sum_large) = (0.0, 0.0);
        for phi in &polys {
            let a = adjoint_identity_residual(&small, &m, phi).unwrap();
            let c = adjoint_identity_residual(&large, &m, phi).unwrap();
            within &= a.residual <= a.bound && c.residual <= c.bound;
            worst_ratio = worst_ratio.max(a.residual / a.bound).max(c.residual / c.bound);
            sum_small += a.residual;
            sum_large += c.residual;
        }
        if sum_large < sum_small {
            decreased += 1;
        }
    }

    // no claims: the identity is exact up to rounding
    let d = common::exp_model(vec![(0, 0, 1.0)], 1e-12, 0.2, 1.5, RetentionFamily::Full);
    let bd = common::bounds(&d);
    let dmap = AffineMap::from_interval(-1.0, 11.0);
    let mut det_worst: f64 = 0.0;
    for s in [StrategySpec::barrier(RetentionPolicy::Full, 0.0, 3.0), StrategySpec::barrier(RetentionPolicy::Full, 0.0, f64::INFINITY)] {
        let occ = build_occupation(&d, &s, 1.0, 5.0, 1, 1, &bd, &OccupationOptions::exact(), &SimOptions::default()).unwrap().system;
        for _ in 0..20 {
            let phi = random_unit_poly(&mut rng, dmap);
            det_worst = det_worst.max(adjoint_identity_residual(&occ, &d, &phi).unwrap().residual);
        }
    }
    let ok = within && decreased >= 9 && det_worst <= 1e-9;
    common::report(
        3,
        ok,
        &format!("max residual/bound {worst_ratio:.3}; decreased on {decreased}/10 batches; deterministic residual {det_worst:.2e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 4

fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::double_exponential::integrate(f, a, b, 1e-14).integral
}

#[test]
fn criterion_04_generator_closed_forms() {
    let mut worst: f64 = 0.0;
    for kappa in [0.5, 1.0, 2.0] {
        let m = RiskModel::new(
            ClaimLaw::exponential(kappa).unwrap(),
            vec![(0, 0, 0.3), (1, 0, 1.4), (2, 0, 0.1), (1, 1, 0.05)],
            1.3,
            0.2,
            1.5,
            None,
            RetentionFamily::Proportional { a0: 0.0 },
        );
        let m = match m {
            Ok(m) => m,
            Err(e) => panic!("{e}"),
        };
        let top = 60.0 / kappa;
        let dens = |y: f64| kappa * (-kappa * y).exp();
        for theta in [0.25, 0.5, 1.0] {
            let u = RetentionPolicy::Proportional { theta };
            for x in [0.0, 0.7, 2.5, 6.0] {
                let pu = quad(|y| m.premium.eval(theta * y, x) * dens(y), 0.0, top);
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
                worst = worst.max(rel(premium_transform(&m, &u, x), pu));
                for alpha in 0..=6usize {
                    let jump = quad(|y| (x - theta * y).powi(alpha as i32) * dens(y), 0.0, top);
                    worst = worst.max(rel(retained_claim_moment(&m, &u, x, alpha), jump));
                    let drift = if alpha == 0 { 0.0 } else { pu * alpha as f64 * x.powi(alpha as i32 - 1) };
                    let oracle = drift + m.lambda * jump - (m.lambda + m.q) * x.powi(alpha as i32);
                    worst = worst.max(rel(generator_on_monomial(&m, &u, alpha).eval(x), oracle));
                }
            }
        }
    }
    let ok = worst <= 1e-8;
    common::report(4, ok, &format!("max relative deviation from quadrature {worst:.2e} over alpha <= 6, 3 thetas, 3 kappas"));
    assert!(ok);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_moment_machinery() {
    let mut notes = Vec::new();

    // a Dirac mass has a rank one moment matrix
    let mut dirac = AtomMeasure::new("dirac", vec![Label::S1, Label::Y1]);
    dirac.push(&[0.3, -0.6], 1.0);
    let mv = moments_from_atoms(&dirac, 3, &[Label::S1, Label::Y1], &MomentOptions::default()).unwrap();
    let mut ev = moment_matrix(&mv, 3).unwrap().eigenvalues();
    ev.sort_by(|a, b| b.total_cmp(a));
    let rank_one = ev[1..].iter().all(|e| e.abs() <= 1e-10 * ev[0]);
    notes.push(format!("dirac top eigenvalues {:.3e} {:.1e}", ev[0], ev[1]));

    // quadratic form against direct integration
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mu = AtomMeasure::new("random", vec![Label::S1, Label::Y1]);
    for _ in 0..50 {
        mu.push(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], rng.gen_range(0.0..1.0));
    }
    let r = 3;
    let mv = moments_from_atoms(&mu, r, &[Label::S1, Label::Y1], &MomentOptions::default()).unwrap();
    let mm = moment_matrix(&mv, r).unwrap();
    let basis = monomials(2, r as u32);
    let mut qf_err: f64 = 0.0;
    for _ in 0..20 {
        let h: Vec<f64> = basis.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = mu.integrate(|x| {
            let v: f64 = basis.iter().zip(&h).map(|(a, c)| c * x[0].powi(a[0] as i32) * x[1].powi(a[1] as i32)).sum();
            v * v
        });
        qf_err = qf_err.max((mm.quadratic_form(&h) - direct).abs() / direct.max(1.0));
    }
    notes.push(format!("quadratic form error {qf_err:.1e}"));

    // Putinar PASS on systems built from simulation
    let mut putinar_all = true;
    let mut n_systems = 0;
    let mut worst_eig = f64::INFINITY;
    let matrix = common::model_matrix();
    for (i, (_, m)) in matrix.iter().enumerate().step_by(3) {
        let b = common::bounds(m);
        let grid = m.family.grid(3, m.claims.upper_quantile());
        for (j, s) in [
            StrategySpec::barrier(grid[0], 0.0, 3.0),
            StrategySpec::barrier(grid[grid.len() - 1], 1.5, 4.0),
            StrategySpec::pay_all(1.0),
        ]
        .iter()
        .enumerate()
        {
            for opts in [OccupationOptions::default(), OccupationOptions::exact()] {
                let occ = build_occupation(m, s, 1.0, 1.0, 300, (10 * i + j) as u64, &b, &opts, &SimOptions::default()).unwrap().system;
                for r in 1..=3 {
                    let rep = putinar_check(&occ, m, &b, r, 1e-8).unwrap();
                    putinar_all &= rep.pass;
                    worst_eig = worst_eig.min(rep.min_eigenvalue());
                    n_systems += 1;
                }
            }
        }
    }
    notes.push(format!("putinar PASS on {n_systems} systems (min eigenvalue {worst_eig:.1e})"));

    // a Dirac outside the box and corrupted moments are flagged
    let m = common::proportional();
    let b = common::bounds(&m);
    let mut out = AtomMeasure::new("outside", vec![Label::S1, Label::Y1]);
    out.push(&[1.0, 1.5 * b.xmax], 1.0);
    let vars = [Label::S1, Label::Y1];
    let maps: Vec<AffineMap> = vars.iter().map(|l| label_map(*l, &b)).collect();
    let opts = MomentOptions { discount: None, maps: Some(maps.clone()) };
    let mv = moments_from_atoms(&out, 2, &vars, &opts).unwrap();
    let checks = check_moment_vector(&mv, &putinar_generators(&vars, &b, &[]), 2, 1e-8).unwrap();
    let out_detected = checks.iter().any(|c| !c.pass);

    let occ = build_occupation(&m, &StrategySpec::barrier(RetentionPolicy::Proportional { theta: 0.5 }, 1.0, 3.0), 1.0, 1.0, 300, 1, &b, &OccupationOptions::default(), &SimOptions::default())
        .unwrap()
        .system;
    let mut mv = moments_from_atoms(&occ.gamma0, 2, &vars, &MomentOptions { discount: Some(m.q), maps: Some(maps) }).unwrap();
    // E[t^2] below E[t]^2 contradicts Cauchy-Schwarz
    let m1 = mv.get(&[0, 1]).unwrap();
    let m0 = mv.mass();
    mv.entries.insert(vec![0, 2], 0.5 * m1 * m1 / m0);
    let corrupt_detected = moment_matrix(&mv, 2).unwrap().min_eigenvalue() < -1e-8 * m0;

    notes.push(format!("out-of-box dirac flagged {out_detected}, corrupted moments flagged {corrupt_detected}"));
    let ok = rank_one && qf_err <= 1e-10 && putinar_all && out_detected && corrupt_detected;
    common::report(5, ok, &notes.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_sandwich() {
    let t = Instant::now();
    let mut worst = f64::INFINITY;
    let mut worst_name = String::new();
    let mut runs = 0;
    let mut iterations = 0;
    for (name, m) in common::model_matrix() {
        let b = common::bounds(&m);
        for seed in [1u64, 2, 3] {
            let res = run_ddp(&m, &b, 1.5, &cheap_ddp(seed)).unwrap();
            runs += 1;
            for l in &res.logs {
                iterations += 1;
                let margin = l.phi_at_x0 + 1e-6 - (l.f_lb - 3.0 * l.std_error.unwrap_or(0.0));
                if margin < worst {
                    worst = margin;
                    worst_name = format!("{name} seed {seed} z {}", l.z);
                }
            }
        }
    }
    let ok = worst >= 0.0;
    common::report(
        6,
        ok,
        &format!("{runs} runs, {iterations} iterations, smallest margin {worst:.3e} ({worst_name}), {:.0}s", t.elapsed().as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_deterministic_end_to_end() {
    let (p0, q, x0) = (1.0, 0.2, 1.0);
    let m = common::deterministic(p0, q);
    let b = common::bounds(&m);
    let cfg = DdpConfig { max_iter: 2, n_paths: 4, n_paths_lb: 4, grid_theta: 1, grid_inj: 2, grid_div: 4, ..Default::default() };
    let t = Instant::now();
    let res = run_ddp(&m, &b, x0, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let v = x0 + p0 / q;
    let gap = res.certified_ub - res.best_lb;
    let ok = res.logs.len() <= 2
        && gap < 1e-2 * v
        && (res.certified_ub - v).abs() < 1e-2 * v
        && (res.best_lb - v).abs() < 1e-2 * v
        && secs <= 120.0;
    common::report(
        7,
        ok,
        &format!("value {v}, bounds [{:.5}, {:.5}], gap {gap:.2e} after {} iterations, {secs:.1}s", res.best_lb, res.certified_ub, res.logs.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_negative_axis() {
    let m = common::proportional();
    let b = common::bounds(&m);
    let cfg = DdpConfig { n_paths_lb: 10_000, ..cheap_ddp(4) };
    let mut ok = true;
    let mut notes = Vec::new();
    for x0 in [-0.3, -0.6] {
        let res = run_ddp(&m, &b, x0, &cfg).unwrap();
        let n = res.negative.expect("negative start report");
        let v0 = n.phi_at_zero;
        assert!(x0 >= -v0 / m.k, "pick a start inside the injection range");
        let upper_ok = !n.bankrupt && (n.upper - (v0 + m.k * x0)).abs() <= 1e-12 * (1.0 + v0);
        let se = (res.best_lb_std_error.unwrap_or(0.0).powi(2) + n.lower_std_error.unwrap_or(0.0).powi(2)).sqrt();
        let target = res.best_lb + m.k * x0;
        let lower_ok = (n.lower - target).abs() <= 3.0 * se + 1e-9;
        ok &= upper_ok && lower_ok && n.lower <= n.upper;
        notes.push(format!("x0 {x0}: upper {:.4} = {v0:.4} + k x0, lower {:.4} vs {target:.4} (se {se:.1e})", n.upper, n.lower));
    }
    let res = run_ddp(&m, &b, -50.0, &cfg).unwrap();
    let n = res.negative.unwrap();
    let bankrupt_ok = n.bankrupt && n.upper == 0.0 && -50.0 < -n.phi_at_zero / m.k;
    ok &= bankrupt_ok;
    notes.push(format!("x0 -50: bankrupt {}, upper {}", n.bankrupt, n.upper));
    common::report(8, ok, &notes.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_backward_containment() {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, m) in [("exp-prop", common::proportional()), ("penalized", common::penalized())] {
        let b = common::bounds(&m);
        for r in 1..=3 {
            let cfg = DdpConfig { r, ..cheap_ddp(9) };
            let fw = forward_step(&m, &b, 2.0, &PolyValueFn::zero(PolyValueFn::box_map(&b)), &cfg, 3).unwrap();
            let g = backward_step_grid(&m, &b, &fw.y0bar, Some(2.0), &cfg).unwrap();
            let s = backward_step_sos(&m, &b, &fw.y0bar, Some(2.0), &cfg).unwrap();
            let pass = !s.fell_back && s.report.pass && s.b_z >= g.b_z - 1e-6 && g.verified && s.verified;
            ok &= pass;
            notes.push(format!(
                "{name} r={r}: B grid {:.6} sos {:.6} shift {:.1e} verified {}/{}",
                g.b_z, s.b_z, s.report.shift, g.verified, s.verified
            ));
        }
    }
    common::report(9, ok, &notes.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 10

fn iteration_csv(logs: &[IterationLog]) -> String {
    let mut s = String::from("z,F_LB,std_error,B_z,B_UB,phi_at_x0,gap,status\n");
    for l in logs {
        let se = l.std_error.map(|v| v.to_string()).unwrap_or_default();
        s += &format!("{},{},{},{},{},{},{},{}\n", l.z, l.f_lb, se, l.b_z, l.b_ub, l.phi_at_x0, l.gap, l.status);
    }
    s
}

#[test]
fn criterion_10_reproducibility() {
    let m = common::penalized();
    let b = common::bounds(&m);
    let cfg = cheap_ddp(10);
    let a = run_ddp(&m, &b, 1.0, &cfg).unwrap();
    let c = run_ddp(&m, &b, 1.0, &cfg).unwrap();
    let (sa, sc) = (iteration_csv(&a.logs), iteration_csv(&c.logs));
    let same_phi = serde_json::to_string(&a.phi).unwrap() == serde_json::to_string(&c.phi).unwrap();
    let ok = sa.as_bytes() == sc.as_bytes() && same_phi;
    common::report(10, ok, &format!("{} iteration rows, {} bytes, identical {}", a.logs.len(), sa.len(), ok));
    assert!(ok);
}
