//! Polynomial test functions, the controlled generator `L^u`, the
//! Hamiltonian and grid-based dual feasibility checks.

use crate::error::{Error, Result};
use crate::model::{premium_poly, retained_claim_moment_poly, RetentionFamily, RetentionPolicy, RiskModel, SpaceBounds};
use crate::poly::{binom, chebyshev_lobatto, AffineMap, UniPoly};
use serde::{Deserialize, Serialize};

/// Polynomial in the reserve, stored in the unit variable of `map`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyValueFn {
    pub scaled: UniPoly,
    pub map: AffineMap,
}

impl PolyValueFn {
    pub fn new(scaled: UniPoly, map: AffineMap) -> Self {
        Self { scaled, map }
    }

    pub fn zero(map: AffineMap) -> Self {
        Self { scaled: UniPoly::zero(), map }
    }

    pub fn from_original(p: &UniPoly, map: AffineMap) -> Self {
        Self { scaled: map.scale_poly(p), map }
    }

    /// Box map of the reserve axis.
    pub fn box_map(bounds: &SpaceBounds) -> AffineMap {
        AffineMap::from_interval(bounds.xmin, bounds.xmax)
    }

    pub fn degree(&self) -> usize {
        self.scaled.degree()
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.scaled.eval(self.map.to_unit(y))
    }

    pub fn deriv(&self, y: f64) -> f64 {
        self.eval_with_derivative(y).1
    }

    pub fn eval_with_derivative(&self, y: f64) -> (f64, f64) {
        let (v, d) = self.scaled.eval_with_derivative(self.map.to_unit(y));
        (v, d / self.map.half_width)
    }

    /// Coefficients in the original reserve variable.
    pub fn original(&self) -> UniPoly {
        self.map.unscale_poly(&self.scaled)
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut s = self.scaled.clone();
        s.add_scaled(&UniPoly::constant(c), 1.0);
        Self { scaled: s, map: self.map }
    }

    pub fn is_zero(&self) -> bool {
        self.scaled.c.iter().all(|&a| a == 0.0)
    }
}

/// `L^u` restricted to polynomials of degree `<= max_deg` in the unit
/// variable of `map`.
#[derive(Debug, Clone)]
pub struct GeneratorOp {
    pub retention: RetentionPolicy,
    pub map: AffineMap,
    /// `p^u` in the reserve variable.
    pub premium: UniPoly,
    /// `E[u(C)^i] / w^i`.
    scaled_moments: Vec<f64>,
    lambda: f64,
    q: f64,
}

impl GeneratorOp {
    pub fn new(model: &RiskModel, u: &RetentionPolicy, map: AffineMap, max_deg: usize) -> Self {
        let w = map.half_width;
        let scaled_moments = (0..=max_deg).map(|i| model.claims.retained_moment(u, i) / w.powi(i as i32)).collect();
        Self {
            retention: *u,
            map,
            premium: premium_poly(model, u),
            scaled_moments,
            lambda: model.lambda,
            q: model.q,
        }
    }

    pub fn max_degree(&self) -> usize {
        self.scaled_moments.len() - 1
    }

    /// `E[psi(t - u(C)/w)]` for a polynomial `psi` in the unit variable.
    fn expected_shift(&self, psi: &UniPoly, t: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &a) in psi.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for i in 0..=j {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                inner += sign * binom(j, i) * self.scaled_moments[i] * t.powi((j - i) as i32);
            }
            acc += a * inner;
        }
        acc
    }

    /// `L^u phi(y)`.
    pub fn apply(&self, phi: &PolyValueFn, y: f64) -> f64 {
        assert!(phi.degree() <= self.max_degree(), "generator built for a lower degree");
        let t = self.map.to_unit(y);
        let (v, dt) = phi.scaled.eval_with_derivative(t);
        self.premium.eval(y) * dt / self.map.half_width + self.lambda * self.expected_shift(&phi.scaled, t)
            - (self.lambda + self.q) * v
    }

    /// `L^u` of the unit monomial `t^j`, evaluated at the unit point `t`.
    pub fn monomial_at(&self, j: usize, t: f64) -> f64 {
        let y = self.map.from_unit(t);
        let drift = if j == 0 { 0.0 } else { self.premium.eval(y) * j as f64 * t.powi(j as i32 - 1) / self.map.half_width };
        let mut jump = 0.0;
        for i in 0..=j {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            jump += sign * binom(j, i) * self.scaled_moments[i] * t.powi((j - i) as i32);
        }
        drift + self.lambda * jump - (self.lambda + self.q) * t.powi(j as i32)
    }

    /// `L^u t^j` as a polynomial in `t`.
    pub fn monomial_poly(&self, j: usize) -> UniPoly {
        let w = self.map.half_width;
        let pu_t = self.map.scale_poly(&self.premium);
        let mut out = UniPoly::zero();
        if j > 0 {
            out.add_scaled(&pu_t.mul(&UniPoly::monomial(j - 1, j as f64 / w)), 1.0);
        }
        for i in 0..=j {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            out.add_scaled(&UniPoly::monomial(j - i, sign * binom(j, i) * self.scaled_moments[i]), self.lambda);
        }
        out.add_scaled(&UniPoly::monomial(j, 1.0), -(self.lambda + self.q));
        out
    }

    /// `L^u phi` as a polynomial in the unit variable.
    pub fn apply_poly(&self, phi: &PolyValueFn) -> UniPoly {
        let mut out = UniPoly::zero();
        for (j, &a) in phi.scaled.c.iter().enumerate() {
            if a != 0.0 {
                out.add_scaled(&self.monomial_poly(j), a);
            }
        }
        out
    }
}

/// `L^u y^alpha` in original units.
pub fn generator_on_monomial(model: &RiskModel, u: &RetentionPolicy, alpha: usize) -> UniPoly {
    let pu = premium_poly(model, u);
    let mut out = UniPoly::zero();
    if alpha > 0 {
        out.add_scaled(&pu.mul(&UniPoly::monomial(alpha - 1, alpha as f64)), 1.0);
    }
    out.add_scaled(&retained_claim_moment_poly(model, u, alpha), model.lambda);
    out.add_scaled(&UniPoly::monomial(alpha, 1.0), -(model.lambda + model.q));
    out
}

/// `L^u phi` in original units.
pub fn generator_apply(model: &RiskModel, u: &RetentionPolicy, phi: &UniPoly) -> UniPoly {
    let mut out = UniPoly::zero();
    for (j, &a) in phi.c.iter().enumerate() {
        if a != 0.0 {
            out.add_scaled(&generator_on_monomial(model, u, j), a);
        }
    }
    out
}

pub fn default_retention_grid(model: &RiskModel, n: usize) -> Vec<RetentionPolicy> {
    model.family.grid(n, model.claims.upper_quantile())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    pub value: f64,
    pub argmax: RetentionPolicy,
}

/// `sup_u L^u phi(y)` on a 129-point retention grid, refined by golden
/// section around the best grid point.
pub fn hamiltonian(model: &RiskModel, phi: &PolyValueFn, y: f64) -> HamiltonianValue {
    let grid = default_retention_grid(model, 129);
    let deg = phi.degree();
    let eval = |u: &RetentionPolicy| GeneratorOp::new(model, u, phi.map, deg).apply(phi, y);
    let vals: Vec<f64> = grid.iter().map(eval).collect();
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut out = HamiltonianValue { value: best, argmax: grid[best_i] };
    if grid.len() < 3 {
        return out;
    }
    let lo = grid[best_i.saturating_sub(1)].param();
    let hi = grid[(best_i + 1).min(grid.len() - 1)].param();
    let family = model.family;
    // excess-of-loss caps are spread geometrically; search in log space there
    let log = matches!(family, RetentionFamily::ExcessOfLoss) && lo > 0.0;
    let (to, from): (fn(f64) -> f64, fn(f64) -> f64) = if log { (f64::ln, f64::exp) } else { (|v| v, |v| v) };
    let f = |s: f64| eval(&family.policy(from(s)));
    let (mut a, mut b) = (to(lo.max(if log { f64::MIN_POSITIVE } else { lo })), to(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-6 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let s = 0.5 * (a + b);
    let v = f(s);
    if v > out.value {
        out = HamiltonianValue { value: v, argmax: family.policy(from(s)) };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbResidual {
    pub branch: Branch,
    pub value: f64,
}

/// For `y >= 0`: `max(H(y), 1 - phi'(y), phi'(y) - k)`. For `y < 0`:
/// `phi(y) - max(phi(0) + k y, 0)`.
pub fn hjb_residual(model: &RiskModel, phi: &PolyValueFn, y: f64) -> HjbResidual {
    if y >= 0.0 {
        let h = hamiltonian(model, phi, y).value;
        let d = phi.deriv(y);
        HjbResidual { branch: Branch::Positive, value: h.max(1.0 - d).max(d - model.k) }
    } else {
        let v = phi.eval(y) - (phi.eval(0.0) + model.k * y).max(0.0);
        HjbResidual { branch: Branch::Negative, value: v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub n_y: usize,
    pub n_u: usize,
    /// Absolute slack on the derivative constraints.
    pub tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { n_y: 1025, n_u: 129, tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub eps: f64,
    pub n_y: usize,
    pub n_u: usize,
    /// `max_{y in [0, xmax], u} L^u phi(y)` before any shift.
    pub max_generator: f64,
    pub worst_generator_y: f64,
    pub worst_generator_u: f64,
    pub min_value: f64,
    pub worst_value_y: f64,
    /// `min phi'` over `[0, xmax]`.
    pub min_derivative: f64,
    pub worst_min_derivative_y: f64,
    /// `max phi'` over `[xmin, xmax]`.
    pub max_derivative: f64,
    pub worst_max_derivative_y: f64,
    /// Constant added so that the generator and value constraints hold on
    /// the grid.
    pub shift: f64,
    /// `C max(eps, 1e-6)` with `C = ((lip + 2 lambda + q) xmax + ||p||_0) / q`.
    pub shift_allowance: f64,
    pub within_allowance: bool,
    pub derivative_ok: bool,
    pub pass: bool,
}

/// Grid audit of the dual constraints. Returns the (possibly shifted)
/// function and the report; `pass` refers to the returned function.
pub fn check_dual_feasibility(
    model: &RiskModel,
    phi: &PolyValueFn,
    bounds: &SpaceBounds,
    eps: f64,
    opts: &CheckOptions,
) -> Result<(PolyValueFn, FeasibilityReport)> {
    if opts.n_y < 2 || opts.n_u < 1 {
        return Err(Error::Input("grid check needs at least two points".into()));
    }
    let pos = chebyshev_lobatto(0.0, bounds.xmax, opts.n_y);
    let all = chebyshev_lobatto(bounds.xmin, bounds.xmax, opts.n_y);
    let dphi = phi.scaled.derivative();
    let w = phi.map.half_width;

    let (mut min_d, mut min_d_y) = (f64::INFINITY, 0.0);
    for &y in &pos {
        let d = dphi.eval(phi.map.to_unit(y)) / w;
        if d < min_d {
            min_d = d;
            min_d_y = y;
        }
    }
    let (mut max_d, mut max_d_y) = (f64::NEG_INFINITY, 0.0);
    let (mut min_v, mut min_v_y) = (f64::INFINITY, 0.0);
    for &y in &all {
        let t = phi.map.to_unit(y);
        let d = dphi.eval(t) / w;
        if d > max_d {
            max_d = d;
            max_d_y = y;
        }
        let v = phi.scaled.eval(t);
        if v < min_v {
            min_v = v;
            min_v_y = y;
        }
    }
    let (mut max_g, mut max_g_y, mut max_g_u) = (f64::NEG_INFINITY, 0.0, 0.0);
    for u in default_retention_grid(model, opts.n_u) {
        let op = GeneratorOp::new(model, &u, phi.map, phi.degree());
        let lp = op.apply_poly(phi);
        for &y in &pos {
            let g = lp.eval(phi.map.to_unit(y));
            if g > max_g {
                max_g = g;
                max_g_y = y;
                max_g_u = u.param();
            }
        }
    }
    if !(max_g.is_finite() && min_v.is_finite() && min_d.is_finite() && max_d.is_finite()) {
        return Err(Error::Feasibility("non-finite value in the dual grid check".into()));
    }
    let shift = (max_g / model.q).max(-min_v).max(0.0);
    let c = ((model.lip_eff() + 2.0 * model.lambda + model.q) * bounds.xmax + model.norm0()) / model.q;
    let allowance = c * eps.max(1e-6);
    let derivative_ok = min_d >= 1.0 - eps - opts.tol && max_d <= model.k + eps + opts.tol;
    let out = if shift > 0.0 { phi.shifted(shift) } else { phi.clone() };
    let report = FeasibilityReport {
        eps,
        n_y: opts.n_y,
        n_u: opts.n_u,
        max_generator: max_g,
        worst_generator_y: max_g_y,
        worst_generator_u: max_g_u,
        min_value: min_v,
        worst_value_y: min_v_y,
        min_derivative: min_d,
        worst_min_derivative_y: min_d_y,
        max_derivative: max_d,
        worst_max_derivative_y: max_d_y,
        shift,
        shift_allowance: allowance,
        within_allowance: shift <= allowance,
        derivative_ok,
        pass: derivative_ok,
    };
    Ok((out, report))
}
