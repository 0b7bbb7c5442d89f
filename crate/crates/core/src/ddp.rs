//! Dual dynamic programming over barrier strategies.
//!
//! Each iteration simulates a grid of candidate strategies on the stage
//! `[0, t1]`, keeps the one with the best two-stage objective (stage gain
//! plus the current value-function bound at the stage end), estimates its
//! gain on the full horizon (lower bound), and then fits a new polynomial
//! upper bound `phi` to the stopping measure of that strategy by a linear
//! program on a grid or a sum-of-squares program. The certified bound is
//! the running minimum of `phi(x0)` over iterations.

use crate::conic::{self, Cone, ConicProgram, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::generator::{check_dual_feasibility, default_retention_grid, CheckOptions, FeasibilityReport, GeneratorOp, PolyValueFn};
use crate::model::{integrate_claims, premium_poly, RetentionPolicy, RiskModel, SpaceBounds};
use crate::moments::{moments_from_atoms, putinar_check_moments, system_moments, MomentOptions, SystemMoments};
use crate::occupation::{adjoint_identity_residual, build_occupation, Label, OccupationOptions, OccupationSystem};
use crate::poly::{chebyshev_lobatto, UniPoly};
use crate::sim::{derive_seed, simulate_outcomes, SimOptions, Stat, StrategySpec};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackwardMethod {
    Grid,
    Sos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpConfig {
    /// Relaxation order; value functions have degree `2r`.
    pub r: usize,
    /// Slack on the derivative constraints of the backward step.
    pub eps: f64,
    /// Stage horizon of the forward step.
    pub t1: f64,
    pub max_iter: usize,
    /// Stop when the certified gap is below `tol * max(1, |upper bound|)`.
    pub tol: f64,
    pub n_paths: usize,
    pub n_paths_lb: usize,
    pub grid_theta: usize,
    pub grid_inj: usize,
    pub grid_div: usize,
    pub b_max: Option<f64>,
    pub occupation: OccupationOptions,
    pub lp_points: usize,
    pub lp_retentions: usize,
    pub check: CheckOptions,
    pub refine_rounds: usize,
    pub psd_tol: f64,
    pub backward: BackwardMethod,
    /// Drop candidates whose adjoint residual exceeds its bound.
    pub adjoint_check: bool,
    pub solver: SolverOptions,
    pub sim: SimOptions,
    pub seed: u64,
}

impl Default for DdpConfig {
    fn default() -> Self {
        Self {
            r: 3,
            eps: 0.0,
            t1: 1.0,
            max_iter: 10,
            tol: 1e-2,
            n_paths: 2000,
            n_paths_lb: 20000,
            grid_theta: 8,
            grid_inj: 8,
            grid_div: 8,
            b_max: None,
            occupation: OccupationOptions::default(),
            lp_points: 513,
            lp_retentions: 33,
            check: CheckOptions::default(),
            refine_rounds: 4,
            psd_tol: 1e-8,
            backward: BackwardMethod::Grid,
            adjoint_check: true,
            solver: SolverOptions::default(),
            sim: SimOptions::default(),
            seed: 0,
        }
    }
}

impl DdpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.r == 0 {
            return bad("ddp.r must be >= 1");
        }
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return bad("ddp.eps must lie in [0, 1)");
        }
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return bad("ddp.t1 must be > 0");
        }
        if self.max_iter == 0 {
            return bad("ddp.max_iter must be >= 1");
        }
        if self.n_paths == 0 || self.n_paths_lb < 2 {
            return bad("ddp needs n_paths >= 1 and n_paths_lb >= 2");
        }
        if self.grid_theta == 0 || self.grid_inj == 0 || self.grid_div == 0 {
            return bad("candidate grids must be nonempty");
        }
        if self.lp_points < 2 || self.lp_retentions == 0 {
            return bad("backward grid too small");
        }
        if let Some(b) = self.b_max {
            if !(b >= 0.0) {
                return bad("ddp.b_max must be >= 0");
            }
        }
        Ok(())
    }
}

/// Candidate strategies of one forward step. Injection barriers are
/// uniform on `[0, a_max]` with `a_max = phi(0)/k` (or `||p||_0/(k q)`
/// while `phi` is still zero), dividend barriers uniform on `[0, b_max]`
/// plus `x0`.
pub fn candidate_strategies(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    phi_prev: &PolyValueFn,
    cfg: &DdpConfig,
) -> Vec<StrategySpec> {
    let thetas = default_retention_grid(model, cfg.grid_theta);
    let v0 = if phi_prev.is_zero() { 0.0 } else { phi_prev.eval(0.0) };
    let a_max = if v0 > 0.0 { v0 / model.k } else { model.norm0() / (model.k * model.q) };
    let a_max = a_max.min(bounds.imax);
    let b_max = cfg.b_max.unwrap_or(bounds.xbar + model.norm0() / model.q);
    let lin = |n: usize, hi: f64| -> Vec<f64> {
        if n == 1 {
            vec![hi]
        } else {
            (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect()
        }
    };
    let injs = lin(cfg.grid_inj, a_max);
    let mut divs = lin(cfg.grid_div, b_max);
    if x0 > 0.0 && !divs.iter().any(|&b| (b - x0).abs() < 1e-12) {
        divs.push(x0);
    }
    let mut out = Vec::with_capacity(thetas.len() * injs.len() * divs.len());
    for u in &thetas {
        for &a in &injs {
            for &b in &divs {
                out.push(StrategySpec::barrier(*u, a, b));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardCandidate {
    pub strategy: StrategySpec,
    /// `L_{Y2}(1) - k L_{Y3}(1) + L_{Y0bar}(phi_prev)` minus the discounted
    /// ruin penalty when enabled.
    pub objective: f64,
    pub dividends: f64,
    pub injections: f64,
    pub continuation: f64,
    pub penalty: f64,
    pub putinar_pass: bool,
    pub putinar_min_eig: f64,
    pub adjoint_residual: f64,
    pub adjoint_bound: f64,
    pub accepted: bool,
}

pub struct ForwardResult {
    pub candidates: Vec<ForwardCandidate>,
    pub selected: usize,
    /// Stopping measure of the selected candidate.
    pub system: OccupationSystem,
    /// Discounted `y1` moments of the selected stopping measure in the
    /// unit variable of the reserve box.
    pub y0bar: Vec<f64>,
    pub all_rejected: bool,
}

/// `E_{gamma0}[e^{-q s1} t(y1)^j]`, `j <= 2r`.
pub fn stopping_moments(occ: &OccupationSystem, model: &RiskModel, bounds: &SpaceBounds, r: usize) -> Result<Vec<f64>> {
    let map = PolyValueFn::box_map(bounds);
    let mv = moments_from_atoms(
        &occ.gamma0,
        r,
        &[Label::Y1],
        &MomentOptions { discount: Some(model.q), maps: Some(vec![map]) },
    )?;
    (0..=2 * r as u32).map(|j| mv.get(&[j])).collect()
}

/// Forward step with common random numbers across candidates.
pub fn forward_step(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    phi_prev: &PolyValueFn,
    cfg: &DdpConfig,
    seed: u64,
) -> Result<ForwardResult> {
    let cands = candidate_strategies(model, bounds, x0, phi_prev, cfg);
    let test_fn = if phi_prev.is_zero() {
        PolyValueFn::new(UniPoly::new(vec![0.0, 1.0]), PolyValueFn::box_map(bounds))
    } else {
        phi_prev.clone()
    };
    let evals: Vec<(ForwardCandidate, Vec<f64>)> = cands
        .par_iter()
        .map(|s| {
            let occ = build_occupation(model, s, x0, cfg.t1, cfg.n_paths, seed, bounds, &cfg.occupation, &cfg.sim)?.system;
            let mom = system_moments(&occ, bounds, model.q, cfg.r)?;
            let put = putinar_check_moments(&mom, bounds, cfg.r, cfg.psd_tol)?;
            let y0 = stopping_moments(&occ, model, bounds, cfg.r)?;
            let dividends = mom.y2.mass();
            let injections = mom.y3.mass();
            let continuation: f64 = phi_prev.scaled.c.iter().enumerate().map(|(j, a)| a * y0[j]).sum();
            let penalty = match model.penalty.as_ref() {
                Some(p) => occ.gamma0.integrate(|c| if c[1] < 0.0 { (-model.q * c[0]).exp() * p.cost(c[1]) } else { 0.0 }),
                None => 0.0,
            };
            let adj = adjoint_identity_residual(&occ, model, &test_fn)?;
            let accepted = put.pass && (!cfg.adjoint_check || adj.residual <= adj.bound);
            Ok((
                ForwardCandidate {
                    strategy: *s,
                    objective: dividends - model.k * injections + continuation - penalty,
                    dividends,
                    injections,
                    continuation,
                    penalty,
                    putinar_pass: put.pass,
                    putinar_min_eig: put.min_eigenvalue(),
                    adjoint_residual: adj.residual,
                    adjoint_bound: adj.bound,
                    accepted,
                },
                y0,
            ))
        })
        .collect::<Result<_>>()?;
    let any = evals.iter().any(|e| e.0.accepted);
    let mut best = None;
    for (i, (c, _)) in evals.iter().enumerate() {
        if (c.accepted || !any) && best.map_or(true, |b: usize| c.objective > evals[b].0.objective) {
            best = Some(i);
        }
    }
    let selected = best.ok_or_else(|| Error::Simulation("no forward candidates".into()))?;
    let strategy = evals[selected].0.strategy;
    let system = build_occupation(model, &strategy, x0, cfg.t1, cfg.n_paths, seed, bounds, &cfg.occupation, &cfg.sim)?.system;
    let (candidates, moms): (Vec<_>, Vec<_>) = evals.into_iter().unzip();
    Ok(ForwardResult {
        y0bar: moms[selected].clone(),
        candidates,
        selected,
        system,
        all_rejected: !any,
    })
}

/// One linear constraint `g . a >= h` on the unit-variable coefficients.
#[derive(Debug, Clone)]
struct Row {
    g: Vec<f64>,
    h: f64,
}

fn powers(t: f64, d: usize) -> Vec<f64> {
    let mut v = vec![1.0; d];
    for j in 1..d {
        v[j] = v[j - 1] * t;
    }
    v
}

fn deriv_row(t: f64, d: usize, w: f64) -> Vec<f64> {
    let p = powers(t, d);
    (0..d).map(|j| if j == 0 { 0.0 } else { j as f64 * p[j - 1] / w }).collect()
}

fn generator_row(op: &GeneratorOp, t: f64, d: usize) -> Vec<f64> {
    (0..d).map(|j| -op.monomial_at(j, t)).collect()
}

fn base_rows(model: &RiskModel, bounds: &SpaceBounds, cfg: &DdpConfig) -> Vec<Row> {
    let d = 2 * cfg.r + 1;
    let map = PolyValueFn::box_map(bounds);
    let w = map.half_width;
    let pos = chebyshev_lobatto(0.0, bounds.xmax, cfg.lp_points);
    let all = chebyshev_lobatto(bounds.xmin, bounds.xmax, cfg.lp_points);
    let mut rows = Vec::new();
    for &y in &pos {
        rows.push(Row { g: deriv_row(map.to_unit(y), d, w), h: 1.0 - cfg.eps });
    }
    for &y in &all {
        let t = map.to_unit(y);
        rows.push(Row { g: deriv_row(t, d, w).iter().map(|v| -v).collect(), h: -(model.k + cfg.eps) });
        rows.push(Row { g: powers(t, d), h: 0.0 });
    }
    for u in default_retention_grid(model, cfg.lp_retentions) {
        let op = GeneratorOp::new(model, &u, map, d - 1);
        for &y in &pos {
            rows.push(Row { g: generator_row(&op, map.to_unit(y), d), h: 0.0 });
        }
    }
    rows
}

/// Violated constraints of `phi` on the audit grid, a few per kind.
fn violation_rows(model: &RiskModel, bounds: &SpaceBounds, phi: &PolyValueFn, cfg: &DdpConfig) -> Vec<Row> {
    let d = 2 * cfg.r + 1;
    let map = phi.map;
    let w = map.half_width;
    let scale = 1.0 + phi.eval(0.0).abs();
    let pos = chebyshev_lobatto(0.0, bounds.xmax, cfg.check.n_y);
    let all = chebyshev_lobatto(bounds.xmin, bounds.xmax, cfg.check.n_y);
    let mut worst: Vec<(f64, Row)> = Vec::new();
    let keep = |v: f64, row: Row, list: &mut Vec<(f64, Row)>| {
        if v > 0.0 {
            list.push((v, row));
        }
    };
    let mut dlow = Vec::new();
    let mut dhigh = Vec::new();
    let mut val = Vec::new();
    for &y in &pos {
        let t = map.to_unit(y);
        keep(1.0 - cfg.eps - phi.deriv(y) - 1e-10, Row { g: deriv_row(t, d, w), h: 1.0 - cfg.eps }, &mut dlow);
    }
    for &y in &all {
        let t = map.to_unit(y);
        let (v, dv) = phi.eval_with_derivative(y);
        keep(dv - model.k - cfg.eps - 1e-10, Row { g: deriv_row(t, d, w).iter().map(|v| -v).collect(), h: -(model.k + cfg.eps) }, &mut dhigh);
        keep(-v - 1e-10 * scale, Row { g: powers(t, d), h: 0.0 }, &mut val);
    }
    for u in default_retention_grid(model, cfg.check.n_u) {
        let op = GeneratorOp::new(model, &u, map, d - 1);
        let lp = op.apply_poly(phi);
        for &y in &pos {
            let t = map.to_unit(y);
            let g = lp.eval(t);
            keep(g - 1e-10 * scale, Row { g: generator_row(&op, t, d), h: 0.0 }, &mut worst);
        }
    }
    let mut out = Vec::new();
    for (mut list, n) in [(dlow, 4), (dhigh, 4), (val, 4), (worst, 8)] {
        list.sort_by(|a, b| b.0.total_cmp(&a.0));
        out.extend(list.into_iter().take(n).map(|(_, r)| r));
    }
    out
}

/// Solves `min obj . a` subject to `rows`, posed as the dual of a
/// nonnegative-orthant program. Returns the coefficients and the value.
fn solve_lp(rows: &[Row], obj: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, f64, conic::SolveResult, bool)> {
    let d = obj.len();
    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(d, n);
    let mut c = vec![0.0; n];
    for (k, row) in rows.iter().enumerate() {
        let s = row.g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(row.h.abs()).max(1e-300);
        for j in 0..d {
            a[(j, k)] = -row.g[j] / s;
        }
        c[k] = -row.h / s;
    }
    let prog = ConicProgram { c, a, b: obj.iter().map(|v| -v).collect(), cones: vec![Cone::Nonneg(n)] };
    let res = conic::solve(&prog, opts)?;
    let value = -res.dual_obj;
    let ok = verified(&prog, &res, opts);
    Ok((res.y.clone(), value, res, ok))
}

/// Best constant `c` over the retention grid such that paying the reserve
/// out and then every premium as it arrives under a fixed retention `u`
/// is worth `x + c`. The process is ruined at the first claim with a
/// positive retained part:
/// `c = (p^u(0) - lambda E[penalty; u(C) > 0]) / (lambda P(u(C) > 0) + q)`.
pub fn pay_all_constant(model: &RiskModel, n_retentions: usize) -> (RetentionPolicy, f64) {
    let mut best = (RetentionPolicy::Full, f64::NEG_INFINITY);
    for u in default_retention_grid(model, n_retentions).into_iter().chain([RetentionPolicy::Full]) {
        if !model.family.contains(&u) {
            continue;
        }
        let p_hit = integrate_claims(&model.claims, |y| if u.retained(y) > 0.0 { 1.0 } else { 0.0 });
        let pen = model.penalty.as_ref().map_or(0.0, |p| {
            p.a * p_hit + p.b * integrate_claims(&model.claims, |y| u.retained(y))
        });
        let c = (premium_poly(model, &u).coef(0) - model.lambda * pen) / (model.lambda * p_hit + model.q);
        if c > best.1 {
            best = (u, c);
        }
    }
    best
}

/// Gain of the policy that follows `strategy` up to `horizon` and then
/// pays everything out (see [`pay_all_constant`]). Surviving paths add the
/// discounted closed-form value of that continuation.
pub fn lower_bound_estimate(
    model: &RiskModel,
    strategy: &StrategySpec,
    x0: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    sim: &SimOptions,
) -> Result<Stat> {
    let outs = simulate_outcomes(model, strategy, x0, horizon, n_paths, seed, sim)?;
    let q = model.q;
    let c = pay_all_constant(model, 33).1;
    Ok(Stat::from_samples(outs.iter().map(|o| {
        if o.ruined {
            o.gain
        } else {
            o.gain + (-q * o.stop_time).exp() * (o.terminal_reserve.max(0.0) + c)
        }
    })))
}

/// Independent re-check of an optimal solve; non-optimal results pass
/// vacuously since they are never used.
fn verified(prog: &ConicProgram, res: &conic::SolveResult, opts: &SolverOptions) -> bool {
    res.status != SolveStatus::Optimal || conic::verify(prog, res, 100.0 * opts.tol).pass
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardResult {
    pub phi: PolyValueFn,
    /// Optimal value of `min sum_j a_j E[e^{-q s1} t^j]`.
    pub b_z: f64,
    pub method: BackwardMethod,
    pub fell_back: bool,
    pub solver_status: SolveStatus,
    /// Every optimal conic solve of this step passed `conic::verify`.
    pub verified: bool,
    pub refinements: usize,
    pub report: FeasibilityReport,
}

/// Grid linear program for the backward step. When `x0` is given, ties
/// on the optimal face are broken by a second solve that minimizes
/// `phi(x0)` with the first objective held at its optimum.
pub fn backward_step_grid(
    model: &RiskModel,
    bounds: &SpaceBounds,
    y0bar: &[f64],
    x0: Option<f64>,
    cfg: &DdpConfig,
) -> Result<BackwardResult> {
    let d = 2 * cfg.r + 1;
    if y0bar.len() != d {
        return Err(Error::Input(format!("expected {d} stopping moments, got {}", y0bar.len())));
    }
    let map = PolyValueFn::box_map(bounds);
    let mut rows = base_rows(model, bounds, cfg);
    let mut refinements = 0;
    let (mut coef, mut b_z, mut res, mut ok) = solve_lp(&rows, y0bar, &cfg.solver)?;
    let mut all_ok = ok;
    for _ in 0..cfg.refine_rounds {
        if res.status != SolveStatus::Optimal {
            break;
        }
        let extra = violation_rows(model, bounds, &PolyValueFn::new(UniPoly::new(coef.clone()), map), cfg);
        if extra.is_empty() {
            break;
        }
        rows.extend(extra);
        refinements += 1;
        (coef, b_z, res, ok) = solve_lp(&rows, y0bar, &cfg.solver)?;
        all_ok &= ok;
    }
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!("backward grid program ended with {:?}: {}", res.status, res.message)));
    }
    if let Some(x) = x0 {
        let slack = 1e-7 * (1.0 + b_z.abs());
        let mut tie = rows.clone();
        tie.push(Row { g: y0bar.iter().map(|v| -v).collect(), h: -(b_z + slack) });
        let t = map.to_unit(x.clamp(bounds.xmin, bounds.xmax));
        let (c2, _, r2, ok2) = solve_lp(&tie, &powers(t, d), &cfg.solver)?;
        all_ok &= ok2;
        if r2.status == SolveStatus::Optimal {
            coef = c2;
        }
    }
    let raw = PolyValueFn::new(UniPoly::new(coef), map);
    let (phi, report) = check_dual_feasibility(model, &raw, bounds, cfg.eps, &cfg.check)?;
    Ok(BackwardResult {
        phi,
        b_z,
        method: BackwardMethod::Grid,
        fell_back: false,
        solver_status: res.status,
        verified: all_ok,
        refinements,
        report,
    })
}

/// Coefficient map of a Gram block: `coef_k(sigma) = sum_{i+j=k} G_ij`
/// as a `(deg+1) x svec_len` matrix.
fn gram_coeff_map(size: usize, n_coef: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_coef, conic::svec_len(size));
    for j in 0..size {
        for i in j..size {
            let col = conic::svec_index(size, i, j);
            let v = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
            if i + j < n_coef {
                m[(i + j, col)] += v;
            }
        }
    }
    m
}

/// `(t - lo)(hi - t)` times a polynomial, as a matrix on coefficients.
fn times_box(lo: f64, hi: f64, n_in: usize, n_out: usize) -> DMatrix<f64> {
    let theta = [-lo * hi, lo + hi, -1.0];
    let mut m = DMatrix::zeros(n_out, n_in);
    for k in 0..n_in {
        for (e, &th) in theta.iter().enumerate() {
            if k + e < n_out {
                m[(k + e, k)] += th;
            }
        }
    }
    m
}

/// Putinar certificate `sigma0 + theta sigma1` on `[lo, hi]` as a linear
/// map from the two svec blocks to polynomial coefficients.
fn certificate_map(r: usize, lo: f64, hi: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = 2 * r + 1;
    let p0 = gram_coeff_map(r + 1, d);
    let p1 = if r >= 1 { &times_box(lo, hi, 2 * r - 1, d) * gram_coeff_map(r, 2 * r - 1) } else { DMatrix::zeros(d, 0) };
    (p0, p1)
}

/// Sum-of-squares backward step: every constraint holds on its whole
/// interval through a Putinar certificate with Gram blocks of size
/// `r + 1` and `r`. Falls back to the grid program when the solver does
/// not reach optimality.
pub fn backward_step_sos(
    model: &RiskModel,
    bounds: &SpaceBounds,
    y0bar: &[f64],
    x0: Option<f64>,
    cfg: &DdpConfig,
) -> Result<BackwardResult> {
    match sos_solve(model, bounds, y0bar, x0, cfg) {
        Ok(Some(r)) => Ok(r),
        Ok(None) | Err(Error::Solver(_)) => {
            let mut r = backward_step_grid(model, bounds, y0bar, x0, cfg)?;
            r.fell_back = true;
            Ok(r)
        }
        Err(e) => Err(e),
    }
}

fn sos_solve(
    model: &RiskModel,
    bounds: &SpaceBounds,
    y0bar: &[f64],
    x0: Option<f64>,
    cfg: &DdpConfig,
) -> Result<Option<BackwardResult>> {
    let r = cfg.r;
    let d = 2 * r + 1;
    if y0bar.len() != d {
        return Err(Error::Input(format!("expected {d} stopping moments, got {}", y0bar.len())));
    }
    let map = PolyValueFn::box_map(bounds);
    let w = map.half_width;
    let t0 = map.to_unit(0.0);
    let (s0, s1) = (conic::svec_len(r + 1), conic::svec_len(r));
    let block = s0 + s1;
    let (full0, full1) = certificate_map(r, -1.0, 1.0);
    let (pos0, pos1) = certificate_map(r, t0, 1.0);
    // phi coefficients = P (first certificate)
    let mut p_phi = DMatrix::<f64>::zeros(d, block);
    p_phi.columns_mut(0, s0).copy_from(&full0);
    p_phi.columns_mut(s0, s1).copy_from(&full1);
    // derivative in the reserve variable, on coefficients
    let mut dmat = DMatrix::<f64>::zeros(d, d);
    for k in 0..d - 1 {
        dmat[(k, k + 1)] = (k + 1) as f64 / w;
    }
    let rets = default_retention_grid(model, cfg.lp_retentions);
    // each entry: (linear map on phi coefficients, constant, interval certificate)
    let mut cons: Vec<(DMatrix<f64>, Vec<f64>, bool)> = Vec::new();
    let mut e0 = vec![0.0; d];
    e0[0] = 1.0;
    cons.push((dmat.clone(), e0.iter().map(|v| -v * (1.0 - cfg.eps)).collect(), true));
    cons.push((-dmat.clone(), e0.iter().map(|v| v * (model.k + cfg.eps)).collect(), false));
    for u in &rets {
        let op = GeneratorOp::new(model, u, map, d - 1);
        let mut lmat = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let col = op.monomial_poly(j);
            for k in 0..d {
                lmat[(k, j)] = -col.coef(k);
            }
        }
        cons.push((lmat, vec![0.0; d], true));
    }
    let n_blocks = 1 + cons.len();
    let n_var = n_blocks * block;
    let n_row = cons.len() * d;
    let mut a = DMatrix::<f64>::zeros(n_row, n_var);
    let mut b = vec![0.0; n_row];
    for (ci, (lin, cst, positive)) in cons.iter().enumerate() {
        let rows = ci * d;
        // lin (P g0) + cst - cert(g_c) = 0
        let lp = lin * &p_phi;
        a.view_mut((rows, 0), (d, block)).copy_from(&lp);
        let (c0, c1) = if *positive { (&pos0, &pos1) } else { (&full0, &full1) };
        let off = (ci + 1) * block;
        a.view_mut((rows, off), (d, s0)).copy_from(&(-c0));
        a.view_mut((rows, off + s0), (d, s1)).copy_from(&(-c1));
        for k in 0..d {
            b[rows + k] = -cst[k];
        }
    }
    let obj_row: Vec<f64> = (0..block).map(|j| (0..d).map(|k| y0bar[k] * p_phi[(k, j)]).sum()).collect();
    let mut cones = Vec::new();
    for _ in 0..n_blocks {
        cones.push(Cone::Psd(r + 1));
        cones.push(Cone::Psd(r));
    }
    let mut c = vec![0.0; n_var];
    c[..block].copy_from_slice(&obj_row);
    let prog = ConicProgram { c, a: a.clone(), b: b.clone(), cones: cones.clone() };
    let res = conic::solve(&prog, &cfg.solver)?;
    if res.status != SolveStatus::Optimal {
        return Ok(None);
    }
    let mut all_ok = verified(&prog, &res, &cfg.solver);
    let b_z = res.primal_obj;
    let mut g = res.x.clone();
    if let Some(x) = x0 {
        // hold the objective and minimize phi(x0)
        let slack = 1e-7 * (1.0 + b_z.abs());
        let mut a2 = a.clone().resize(n_row + 1, n_var + 1, 0.0);
        for j in 0..block {
            a2[(n_row, j)] = obj_row[j];
        }
        a2[(n_row, n_var)] = 1.0;
        let mut b2 = b.clone();
        b2.push(b_z + slack);
        let tpow = powers(map.to_unit(x.clamp(bounds.xmin, bounds.xmax)), d);
        let mut c2 = vec![0.0; n_var + 1];
        for j in 0..block {
            c2[j] = (0..d).map(|k| tpow[k] * p_phi[(k, j)]).sum();
        }
        let mut cones2 = cones.clone();
        cones2.push(Cone::Nonneg(1));
        let prog2 = ConicProgram { c: c2, a: a2, b: b2, cones: cones2 };
        let r2 = conic::solve(&prog2, &cfg.solver)?;
        all_ok &= verified(&prog2, &r2, &cfg.solver);
        if r2.status == SolveStatus::Optimal {
            g = r2.x;
        }
    }
    let coef: Vec<f64> = (0..d).map(|k| (0..block).map(|j| p_phi[(k, j)] * g[j]).sum()).collect();
    let raw = PolyValueFn::new(UniPoly::new(coef), map);
    let (phi, report) = check_dual_feasibility(model, &raw, bounds, cfg.eps, &cfg.check)?;
    Ok(Some(BackwardResult {
        phi,
        b_z,
        method: BackwardMethod::Sos,
        fell_back: false,
        solver_status: res.status,
        verified: all_ok,
        refinements: 0,
        report,
    }))
}

pub fn backward_step(
    model: &RiskModel,
    bounds: &SpaceBounds,
    y0bar: &[f64],
    x0: Option<f64>,
    cfg: &DdpConfig,
) -> Result<BackwardResult> {
    match cfg.backward {
        BackwardMethod::Grid => backward_step_grid(model, bounds, y0bar, x0, cfg),
        BackwardMethod::Sos => backward_step_sos(model, bounds, y0bar, x0, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub z: usize,
    pub strategy: StrategySpec,
    pub forward_objective: f64,
    pub n_candidates: usize,
    pub n_rejected: usize,
    pub f_lb: f64,
    pub std_error: Option<f64>,
    /// Optimal value of the backward program.
    pub b_z: f64,
    /// `L_{Y2}(1) - k L_{Y3}(1) + B_z`.
    pub b_ub: f64,
    /// Bound of this iteration, `phi_z(x0)`.
    pub phi_at_x0: f64,
    /// Running minimum of `phi_z(x0)`.
    pub certified_ub: f64,
    /// Running maximum of the lower bounds.
    pub best_lb: f64,
    pub gap: f64,
    pub backward: BackwardMethod,
    pub fell_back: bool,
    pub solver_verified: bool,
    pub shift: f64,
    pub feasibility_pass: bool,
    pub status: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpResult {
    pub x0: f64,
    pub logs: Vec<IterationLog>,
    /// Function attaining the certified bound.
    pub phi: PolyValueFn,
    pub certified_ub: f64,
    pub best_lb: f64,
    pub best_lb_std_error: Option<f64>,
    pub best_strategy: StrategySpec,
    pub converged: bool,
    /// Set when `x0 < 0`: bounds were derived from the run at 0.
    pub negative: Option<NegativeStart>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeStart {
    pub x0: f64,
    pub phi_at_zero: f64,
    pub bankrupt: bool,
    pub lower: f64,
    pub lower_std_error: Option<f64>,
    pub upper: f64,
}

/// Everything produced by one iteration, handed to the observer of
/// [`run_ddp_with`] as soon as the iteration ends.
#[derive(Debug, Serialize)]
pub struct IterationBundle<'a> {
    pub log: &'a IterationLog,
    pub candidates: &'a [ForwardCandidate],
    pub occupation: &'a OccupationSystem,
    pub moments: SystemMoments,
    pub backward: &'a BackwardResult,
    /// Coefficients of `phi` in the reserve itself.
    pub phi_original: Vec<f64>,
}

pub type Observer<'o> = dyn FnMut(&IterationBundle<'_>) -> Result<()> + 'o;

/// Runs the iteration from `x0 >= 0`; see [`run_ddp`] for negative starts.
pub fn run_ddp_from(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    cfg: &DdpConfig,
    init: Option<PolyValueFn>,
) -> Result<DdpResult> {
    run_ddp_from_with(model, bounds, x0, cfg, init, &mut |_| Ok(()))
}

pub fn run_ddp_from_with(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    cfg: &DdpConfig,
    init: Option<PolyValueFn>,
    observer: &mut Observer<'_>,
) -> Result<DdpResult> {
    cfg.validate()?;
    if !(x0 >= 0.0) {
        return Err(Error::Input(format!("run_ddp_from needs x0 >= 0, got {x0}")));
    }
    let map = PolyValueFn::box_map(bounds);
    let mut phi_prev = init.unwrap_or_else(|| PolyValueFn::zero(map));
    let mut logs = Vec::new();
    let mut best_phi: Option<PolyValueFn> = None;
    let mut cert = f64::INFINITY;
    let (mut best_lb, mut best_se, mut best_strategy) = (f64::NEG_INFINITY, None, StrategySpec::pay_all(x0));
    let mut converged = false;
    for z in 1..=cfg.max_iter {
        let start = Instant::now();
        let fwd = forward_step(model, bounds, x0, &phi_prev, cfg, derive_seed(cfg.seed, z as u64))?;
        let sel = &fwd.candidates[fwd.selected];
        let lb = lower_bound_estimate(
            model,
            &sel.strategy,
            x0,
            bounds.t,
            cfg.n_paths_lb,
            derive_seed(cfg.seed, 1_000_000 + z as u64),
            &cfg.sim,
        )?;
        if lb.mean > best_lb {
            best_lb = lb.mean;
            best_se = lb.std_error;
            best_strategy = sel.strategy;
        }
        let back = backward_step(model, bounds, &fwd.y0bar, Some(x0), cfg)?;
        let at_x0 = back.phi.eval(x0);
        if at_x0 < cert {
            cert = at_x0;
            best_phi = Some(back.phi.clone());
        }
        let gap = cert - best_lb;
        let done = gap <= cfg.tol * cert.abs().max(1.0);
        let status = if done {
            "converged"
        } else if z == cfg.max_iter {
            "max_iter"
        } else {
            "continue"
        };
        logs.push(IterationLog {
            z,
            strategy: sel.strategy,
            forward_objective: sel.objective,
            n_candidates: fwd.candidates.len(),
            n_rejected: fwd.candidates.iter().filter(|c| !c.accepted).count(),
            f_lb: lb.mean,
            std_error: lb.std_error,
            b_z: back.b_z,
            b_ub: sel.dividends - model.k * sel.injections + back.b_z,
            phi_at_x0: at_x0,
            certified_ub: cert,
            best_lb,
            gap,
            backward: back.method,
            fell_back: back.fell_back,
            solver_verified: back.verified,
            shift: back.report.shift,
            feasibility_pass: back.report.pass,
            status: status.to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        observer(&IterationBundle {
            log: logs.last().expect("just pushed"),
            candidates: &fwd.candidates,
            occupation: &fwd.system,
            moments: system_moments(&fwd.system, bounds, model.q, cfg.r)?,
            backward: &back,
            phi_original: back.phi.original().c,
        })?;
        phi_prev = back.phi;
        if done {
            converged = true;
            break;
        }
    }
    Ok(DdpResult {
        x0,
        logs,
        phi: best_phi.unwrap_or(phi_prev),
        certified_ub: cert,
        best_lb,
        best_lb_std_error: best_se,
        best_strategy,
        converged,
        negative: None,
    })
}

/// DDP at any starting reserve. A negative start is reduced to the run at
/// 0: above `-phi(0)/k` the upper bound is `phi(0) + k x0` and the lower
/// bound re-simulates the selected strategy after a time-0 injection of
/// `-x0`; below it the upper bound is 0. Immediate bankruptcy is always
/// admissible, so the lower bound is never below minus the ruin penalty.
pub fn run_ddp(model: &RiskModel, bounds: &SpaceBounds, x0: f64, cfg: &DdpConfig) -> Result<DdpResult> {
    run_ddp_with(model, bounds, x0, cfg, &mut |_| Ok(()))
}

pub fn run_ddp_with(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    cfg: &DdpConfig,
    observer: &mut Observer<'_>,
) -> Result<DdpResult> {
    if !x0.is_finite() {
        return Err(Error::Input("x0 must be finite".into()));
    }
    if x0 >= 0.0 {
        return run_ddp_from_with(model, bounds, x0, cfg, None, observer);
    }
    let mut base = run_ddp_from_with(model, bounds, 0.0, cfg, None, observer)?;
    let v0 = base.certified_ub;
    let bankrupt = x0 < -v0 / model.k;
    // declaring bankruptcy at once is always available
    let ruin_now = 0.0 - model.penalty.as_ref().map_or(0.0, |p| p.cost(x0));
    let neg = if bankrupt {
        NegativeStart { x0, phi_at_zero: v0, bankrupt, lower: ruin_now, lower_std_error: Some(0.0), upper: 0.0 }
    } else {
        let mut s = base.best_strategy;
        s.lump_injection_at_0 = -x0;
        s.lump_dividend_at_0 = 0.0;
        let lb = lower_bound_estimate(model, &s, x0, bounds.t, cfg.n_paths_lb, derive_seed(cfg.seed, 2_000_000), &cfg.sim)?;
        let (lower, se) = if lb.mean >= ruin_now { (lb.mean, lb.std_error) } else { (ruin_now, Some(0.0)) };
        NegativeStart { x0, phi_at_zero: v0, bankrupt, lower, lower_std_error: se, upper: v0 + model.k * x0 }
    };
    base.negative = Some(neg);
    Ok(base)
}

/// Nested runs over increasing stage horizons, each warm-started from the
/// previous bound.
pub fn run_nested(
    model: &RiskModel,
    bounds: &SpaceBounds,
    x0: f64,
    cfg: &DdpConfig,
    ladder: &[f64],
    observer: &mut Observer<'_>,
) -> Result<Vec<DdpResult>> {
    if ladder.is_empty() {
        return Err(Error::Config("ladder must be nonempty".into()));
    }
    let mut out: Vec<DdpResult> = Vec::new();
    let mut init = None;
    for &t1 in ladder {
        let c = DdpConfig { t1, ..*cfg };
        let res = run_ddp_from_with(model, bounds, x0.max(0.0), &c, init.clone(), observer)?;
        init = Some(res.phi.clone());
        out.push(res);
    }
    Ok(out)
}
