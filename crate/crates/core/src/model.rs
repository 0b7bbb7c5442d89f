//! Risk model: claim law, premium, retention transforms and the
//! compactification box shared by every other module.
//!
//! The premium is a polynomial `p(y, x) = sum C_ab y^a x^b` in the claim
//! size `y` and the reserve `x`. Only premiums affine in `x` are accepted:
//! a polynomial of higher degree in `x` has an infinite Lipschitz
//! constant `[p]_1` on the half line.

use crate::error::{Error, Result};
use crate::poly::{binom, factorial, UniPoly};
use serde::{Deserialize, Serialize};

/// Upper tail probability defining the working claim range.
pub const CLAIM_TAIL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimLaw {
    Exponential { rate: f64 },
    Empirical { atoms: Vec<(f64, f64)> },
}

impl ClaimLaw {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Model(format!("claims.rate must be > 0, got {rate}")));
        }
        Ok(ClaimLaw::Exponential { rate })
    }

    pub fn empirical(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Model("empirical claim law needs at least one atom".into()));
        }
        let mut total = 0.0;
        for &(v, w) in &atoms {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Model(format!("claim atom value {v} must be finite and >= 0")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Model(format!("claim atom weight {w} must be > 0")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!("claim atom weights sum to {total}, expected 1")));
        }
        let law = ClaimLaw::Empirical { atoms };
        if law.mean() <= 0.0 {
            return Err(Error::Model("claim mean must be > 0".into()));
        }
        Ok(law)
    }

    pub fn mean(&self) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => 1.0 / rate,
            ClaimLaw::Empirical { atoms } => atoms.iter().map(|(v, w)| v * w).sum(),
        }
    }

    /// Generalised inverse of the distribution function.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => -(1.0 - p).ln() / rate,
            ClaimLaw::Empirical { atoms } => {
                let mut sorted = atoms.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut acc = 0.0;
                for (v, w) in &sorted {
                    acc += w;
                    if acc >= p - 1e-15 {
                        return *v;
                    }
                }
                sorted.last().map(|a| a.0).unwrap_or(0.0)
            }
        }
    }

    /// Right end of the working claim range, `F^{-1}(1 - 1e-6)`.
    pub fn upper_quantile(&self) -> f64 {
        self.quantile(1.0 - CLAIM_TAIL)
    }

    /// `E[u(C)^i]`, the raw moments of the retained claim.
    pub fn retained_moment(&self, u: &RetentionPolicy, i: usize) -> f64 {
        if i == 0 {
            return 1.0;
        }
        match (self, u) {
            (ClaimLaw::Exponential { rate }, RetentionPolicy::Full) => factorial(i) / rate.powi(i as i32),
            (ClaimLaw::Exponential { rate }, RetentionPolicy::Proportional { theta }) => {
                theta.powi(i as i32) * factorial(i) / rate.powi(i as i32)
            }
            (ClaimLaw::Exponential { rate }, RetentionPolicy::ExcessOfLoss { cap }) => {
                // int_0^a y^i k e^{-ky} dy + a^i P(C > a)
                let ka = rate * cap;
                let e = (-ka).exp();
                let mut term = 1.0;
                let mut partial = 1.0;
                for j in 1..=i {
                    term *= ka / j as f64;
                    partial += term;
                }
                let lower = if ka < 1e-3 {
                    // series for the regularised lower gamma, avoids cancellation
                    let mut s = 0.0;
                    let mut t = ka.powi(i as i32 + 1) / factorial(i + 1);
                    for n in 0..30 {
                        s += t;
                        t *= ka / (i + 2 + n) as f64;
                    }
                    s * e * factorial(i)
                } else {
                    factorial(i) * (1.0 - e * partial)
                };
                lower / rate.powi(i as i32) + cap.powi(i as i32) * e
            }
            (ClaimLaw::Empirical { atoms }, u) => atoms
                .iter()
                .map(|&(v, w)| w * u.retained(v).powi(i as i32))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetentionPolicy {
    Proportional { theta: f64 },
    ExcessOfLoss { cap: f64 },
    Full,
}

impl RetentionPolicy {
    pub fn retained(&self, y: f64) -> f64 {
        match *self {
            RetentionPolicy::Proportional { theta } => theta * y,
            RetentionPolicy::ExcessOfLoss { cap } => y.min(cap),
            RetentionPolicy::Full => y,
        }
    }

    /// Scalar parameter stored as the `u` coordinate of occupation atoms.
    pub fn param(&self) -> f64 {
        match *self {
            RetentionPolicy::Proportional { theta } => theta,
            RetentionPolicy::ExcessOfLoss { cap } => cap,
            RetentionPolicy::Full => 1.0,
        }
    }
}

/// The set of admissible retentions the controller may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RetentionFamily {
    Proportional { a0: f64 },
    ExcessOfLoss,
    Full,
}

impl RetentionFamily {
    /// Grid of `n` retentions. Proportional: uniform on `[a0, 1]`.
    /// Excess of loss: 0 plus a log grid up to the claim quantile.
    pub fn grid(&self, n: usize, claim_quantile: f64) -> Vec<RetentionPolicy> {
        match *self {
            RetentionFamily::Full => vec![RetentionPolicy::Full],
            RetentionFamily::Proportional { a0 } => {
                if n <= 1 || a0 >= 1.0 {
                    return vec![RetentionPolicy::Proportional { theta: 1.0 }];
                }
                (0..n)
                    .map(|i| RetentionPolicy::Proportional {
                        theta: a0 + (1.0 - a0) * i as f64 / (n - 1) as f64,
                    })
                    .collect()
            }
            RetentionFamily::ExcessOfLoss => {
                let mut out = vec![RetentionPolicy::ExcessOfLoss { cap: 0.0 }];
                if n <= 1 {
                    return out;
                }
                let hi = claim_quantile.max(1e-12);
                let lo = hi * 1e-6;
                let m = n - 1;
                for i in 0..m {
                    let f = if m == 1 { 1.0 } else { i as f64 / (m - 1) as f64 };
                    out.push(RetentionPolicy::ExcessOfLoss { cap: lo * (hi / lo).powf(f) });
                }
                out
            }
        }
    }

    pub fn contains(&self, u: &RetentionPolicy) -> bool {
        match (self, u) {
            (RetentionFamily::Full, RetentionPolicy::Full) => true,
            (RetentionFamily::Proportional { a0 }, RetentionPolicy::Proportional { theta }) => {
                *theta >= a0 - 1e-12 && *theta <= 1.0 + 1e-12
            }
            (RetentionFamily::Proportional { .. }, RetentionPolicy::Full) => true,
            (RetentionFamily::ExcessOfLoss, RetentionPolicy::ExcessOfLoss { cap }) => *cap >= 0.0,
            (RetentionFamily::ExcessOfLoss, RetentionPolicy::Full) => true,
            _ => false,
        }
    }

    /// Policy built from a scalar parameter (inverse of `RetentionPolicy::param`).
    pub fn policy(&self, param: f64) -> RetentionPolicy {
        match self {
            RetentionFamily::Full => RetentionPolicy::Full,
            RetentionFamily::Proportional { .. } => RetentionPolicy::Proportional { theta: param },
            RetentionFamily::ExcessOfLoss => RetentionPolicy::ExcessOfLoss { cap: param },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumSpec {
    /// `(a, b, C_ab)` triples, sorted by `(a, b)`.
    pub coefficients: Vec<(u32, u32, f64)>,
    pub norm0: f64,
    pub lip1: f64,
}

impl PremiumSpec {
    /// `p(y, x)` at a point.
    pub fn eval(&self, y: f64, x: f64) -> f64 {
        self.coefficients
            .iter()
            .map(|&(a, b, c)| c * y.powi(a as i32) * x.powi(b as i32))
            .sum()
    }

    /// Polynomial in `y` multiplying `x^b`.
    pub fn slice(&self, b: u32) -> UniPoly {
        let deg = self.coefficients.iter().map(|t| t.0 as usize).max().unwrap_or(0);
        let mut c = vec![0.0; deg + 1];
        for &(a, bb, v) in &self.coefficients {
            if bb == b {
                c[a as usize] += v;
            }
        }
        UniPoly::new(c)
    }

    pub fn x_degree(&self) -> u32 {
        self.coefficients
            .iter()
            .filter(|t| t.2 != 0.0)
            .map(|t| t.1)
            .max()
            .unwrap_or(0)
    }

    pub fn y_degree(&self) -> u32 {
        self.coefficients
            .iter()
            .filter(|t| t.2 != 0.0)
            .map(|t| t.0)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub a: f64,
    pub b: f64,
}

impl Penalty {
    /// Cost charged at ruin with reserve `x < 0`.
    pub fn cost(&self, x: f64) -> f64 {
        self.a - self.b * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub claims: ClaimLaw,
    pub premium: PremiumSpec,
    pub lambda: f64,
    pub q: f64,
    pub k: f64,
    pub penalty: Option<Penalty>,
    pub family: RetentionFamily,
}

impl RiskModel {
    /// Validates every model invariant and caches the premium norms.
    pub fn new(
        claims: ClaimLaw,
        coefficients: Vec<(u32, u32, f64)>,
        lambda: f64,
        q: f64,
        k: f64,
        penalty: Option<Penalty>,
        family: RetentionFamily,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Model(format!("lambda must be > 0, got {lambda}")));
        }
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::Model(format!("q must be > 0, got {q}")));
        }
        if !(k.is_finite() && k > 1.0) {
            return Err(Error::Model(format!("k must satisfy k > 1, got {k}")));
        }
        if let RetentionFamily::Proportional { a0 } = family {
            if !(0.0..=1.0).contains(&a0) {
                return Err(Error::Model(format!("retention.a0 must lie in [0, 1], got {a0}")));
            }
        }
        let mut coefficients: Vec<(u32, u32, f64)> =
            coefficients.into_iter().filter(|t| t.2 != 0.0).collect();
        coefficients.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in coefficients.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::Model(format!(
                    "premium coefficient ({}, {}) given twice",
                    w[0].0, w[0].1
                )));
            }
        }
        if coefficients.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::Model("premium coefficients must be finite".into()));
        }
        let mut premium = PremiumSpec { coefficients, norm0: 0.0, lip1: 0.0 };
        if premium.x_degree() > 1 {
            return Err(Error::Model(format!(
                "premium has degree {} in the reserve; [p]_1 is finite only for premiums affine in the reserve",
                premium.x_degree()
            )));
        }
        let mut model = RiskModel { claims, premium: premium.clone(), lambda, q, k, penalty, family };
        check_premium_shape(&model)?;
        let (n0, l1) = premium_norms(&model);
        premium.norm0 = n0;
        premium.lip1 = l1;
        model.premium = premium;
        if n0 <= 0.0 {
            return Err(Error::Model(format!("||p||_0 must be > 0, got {n0}")));
        }
        if q <= l1 {
            return Err(Error::Model(format!("q must exceed [p]_1: q = {q}, [p]_1 = {l1}")));
        }
        if let Some(pen) = penalty {
            if pen.a < 0.0 || pen.b < 0.0 {
                return Err(Error::Model("penalty.a and penalty.b must be >= 0".into()));
            }
            let slack = n0 / lambda - pen.a - pen.b * model.claims.mean();
            if slack < 0.0 {
                return Err(Error::Model(format!(
                    "[A_ab] violated: ||p||_0/lambda - a - b E[C] = {slack} < 0"
                )));
            }
        }
        Ok(model)
    }

    /// `[p]_1`, or `q` when the premium does not depend on the reserve.
    pub fn lip_eff(&self) -> f64 {
        if self.premium.lip1 > 0.0 {
            self.premium.lip1
        } else {
            self.q
        }
    }

    pub fn norm0(&self) -> f64 {
        self.premium.norm0
    }

    /// Extra mass term contributed by the ruin penalty.
    fn penalty_term(&self) -> f64 {
        match self.penalty {
            Some(p) => {
                self.lambda * (p.a + p.b * self.claims.mean())
                    / ((self.k - 1.0) * (self.lambda + self.lip_eff()))
            }
            None => 0.0,
        }
    }

    /// Bound on discounted injections of a near-optimal strategy.
    pub fn injection_bound(&self) -> f64 {
        let l = self.lip_eff();
        (2.0 * self.norm0() + l) / ((self.k - 1.0) * l) + self.penalty_term()
    }

    /// Bound on discounted dividends (and on the discounted running
    /// supremum) of a near-optimal strategy started at `x0`.
    pub fn dividend_bound(&self, x0: f64) -> f64 {
        let l = self.lip_eff();
        x0.max(0.0) + ((self.k + 1.0) * self.norm0() + l) / ((self.k - 1.0) * l) + self.penalty_term()
    }

    /// Upper bound on the gain of any strategy, `x0 + ||p||_0 / q`.
    pub fn gain_upper_bound(&self, x0: f64) -> f64 {
        x0 + self.norm0() / self.q
    }

    /// Expected gain of paying everything at once and then every premium
    /// as it arrives, without reinsurance or injections.
    pub fn pay_all_value(&self, x0: f64) -> f64 {
        match self.penalty {
            None => x0 + self.norm0() / (self.lambda + self.q),
            Some(p) => {
                x0 + self.lambda / (self.lambda + self.q)
                    * (self.norm0() / self.lambda - p.a - p.b * self.claims.mean())
            }
        }
    }
}

/// Grid check of nonnegativity and monotonicity of the premium on the
/// working claim range. For premiums affine in the reserve the check over
/// a 101x101 box reduces to the two slices `p(., 0)` and `d p / d x`.
fn check_premium_shape(model: &RiskModel) -> Result<()> {
    let yq = model.claims.upper_quantile();
    let p0 = model.premium.slice(0);
    let p1 = model.premium.slice(1);
    let d0 = p0.derivative();
    let d1 = p1.derivative();
    for i in 0..101 {
        let y = yq * i as f64 / 100.0;
        let tol = 1e-12 * (1.0 + p0.eval(y).abs() + p1.eval(y).abs());
        if p0.eval(y) < -tol {
            return Err(Error::Model(format!("premium negative at y = {y}, x = 0")));
        }
        if p1.eval(y) < -tol {
            return Err(Error::Model(format!("premium decreasing in the reserve at y = {y}")));
        }
        if d0.eval(y) < -tol || d1.eval(y) < -tol {
            return Err(Error::Model(format!("premium decreasing in the claim size at y = {y}")));
        }
    }
    Ok(())
}

/// Premium under retention `u`, `p^u(x) = int p(u(y), x) F(dy)`, as an
/// affine polynomial in the reserve.
pub fn premium_poly(model: &RiskModel, u: &RetentionPolicy) -> UniPoly {
    let mut c = vec![0.0; 2];
    for &(a, b, v) in &model.premium.coefficients {
        c[b as usize] += v * model.claims.retained_moment(u, a as usize);
    }
    UniPoly::new(c)
}

/// `p^u(x)`. For exponential claims with proportional retention this is
/// `sum C_ab theta^a Gamma(a+1) / kappa^a x^b`.
pub fn premium_transform(model: &RiskModel, u: &RetentionPolicy, x: f64) -> f64 {
    match (&model.claims, u) {
        (ClaimLaw::Exponential { rate }, RetentionPolicy::Proportional { theta }) => model
            .premium
            .coefficients
            .iter()
            .map(|&(a, b, c)| {
                c * theta.powi(a as i32) * factorial(a as usize) / rate.powi(a as i32) * x.powi(b as i32)
            })
            .sum(),
        _ => premium_poly(model, u).eval(x),
    }
}

/// `int (x - u(y))^alpha F(dy)`.
///
/// For exponential claims and proportional retention the closed form is
/// `sum_i (-1)^i alpha!/(alpha-i)! theta^i / kappa^i x^(alpha-i)`; the
/// falling factorial (not a binomial coefficient) comes from
/// `int y^i kappa e^{-kappa y} dy = i! / kappa^i`.
pub fn retained_claim_moment(model: &RiskModel, u: &RetentionPolicy, x: f64, alpha: usize) -> f64 {
    retained_claim_moment_poly(model, u, alpha).eval(x)
}

/// The same quantity as a polynomial in `x`.
pub fn retained_claim_moment_poly(model: &RiskModel, u: &RetentionPolicy, alpha: usize) -> UniPoly {
    let mut c = vec![0.0; alpha + 1];
    match (&model.claims, u) {
        (ClaimLaw::Exponential { rate }, RetentionPolicy::Proportional { theta }) => {
            for i in 0..=alpha {
                let arrangement = factorial(alpha) / factorial(alpha - i);
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                c[alpha - i] = sign * arrangement * (theta / rate).powi(i as i32);
            }
        }
        _ => {
            for i in 0..=alpha {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                c[alpha - i] = sign * binom(alpha, i) * model.claims.retained_moment(u, i);
            }
        }
    }
    UniPoly::new(c)
}

/// `(||p||_0, [p]_1)`.
///
/// `||p||_0 = int p(y, 0) F(dy)`. For a premium affine in the reserve the
/// difference quotient in `[p]_1` does not depend on the pair `(x, x')`
/// and equals `int sup_{y <= z} |dp/dx(y)| F(dz)`; the inner supremum is
/// taken on a grid of `[0, z]`.
pub fn premium_norms(model: &RiskModel) -> (f64, f64) {
    let p0 = model.premium.slice(0);
    let norm0 = integrate_claims(&model.claims, |y| p0.eval(y));
    let slope = model.premium.slice(1);
    if slope.c.iter().all(|&c| c == 0.0) {
        return (norm0, 0.0);
    }
    let running_sup = |z: f64| {
        let n = 64;
        (0..=n)
            .map(|i| slope.eval(z * i as f64 / n as f64).abs())
            .fold(0.0_f64, f64::max)
    };
    let lip1 = integrate_claims(&model.claims, running_sup);
    (norm0, lip1)
}

/// `int f dF` by 64-point Gauss-Laguerre (exponential) or atom sum.
pub fn integrate_claims(law: &ClaimLaw, f: impl Fn(f64) -> f64) -> f64 {
    match law {
        ClaimLaw::Exponential { rate } => {
            let rule = gauss_quad::GaussLaguerre::new(
                std::num::NonZeroUsize::new(64).expect("nonzero"),
                gauss_quad::FiniteAboveNegOneF64::new(0.0).expect("alpha = 0"),
            );
            rule.integrate(|t| f(t / rate))
        }
        ClaimLaw::Empirical { atoms } => atoms.iter().map(|&(v, w)| w * f(v)).sum(),
    }
}

/// Compactification box for reserves, dividend and injection sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceBounds {
    pub xbar: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub eps: f64,
    pub xmin: f64,
    pub xmax: f64,
    pub imax: f64,
    pub lmax: f64,
}

/// Builds the box. When `[p]_1 = 0` the discount rate `q` replaces it in
/// every formula.
pub fn space_bounds(model: &RiskModel, xbar: f64, t: f64, eps: f64) -> Result<SpaceBounds> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Model(format!("bounds.eps must lie in (0, 1), got {eps}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Model(format!("bounds.T must be > 0, got {t}")));
    }
    if !(xbar >= 0.0 && xbar.is_finite()) {
        return Err(Error::Model(format!("bounds.xbar must be >= 0, got {xbar}")));
    }
    let l = model.lip_eff();
    let n0 = model.norm0();
    let k = model.k;
    let xmax = (xbar + ((k + 1.0) * n0 + l) / ((k - 1.0) * l)) / (eps * (-model.q * t).exp());
    let xmin = -n0 / (k * l);
    Ok(SpaceBounds {
        xbar,
        t,
        eps,
        xmin,
        xmax,
        imax: xmax + n0 / (k * l),
        lmax: l * xmax + n0,
    })
}
