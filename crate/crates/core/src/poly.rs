//! Dense univariate polynomials and the affine rescaling used to keep
//! high powers of the reserve well conditioned.

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use std::num::NonZeroUsize;

/// `c[j]` is the coefficient of `x^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UniPoly {
    pub c: Vec<f64>,
}

impl UniPoly {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: vec![] }
    }

    pub fn constant(v: f64) -> Self {
        Self { c: vec![v] }
    }

    pub fn monomial(j: usize, coef: f64) -> Self {
        let mut c = vec![0.0; j + 1];
        c[j] = coef;
        Self { c }
    }

    /// Degree of the highest stored coefficient (zero polynomial reports 0).
    pub fn degree(&self) -> usize {
        self.c.len().saturating_sub(1)
    }

    pub fn coef(&self, j: usize) -> f64 {
        self.c.get(j).copied().unwrap_or(0.0)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> UniPoly {
        if self.c.len() <= 1 {
            return UniPoly::zero();
        }
        UniPoly::new(
            self.c
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &a)| j as f64 * a)
                .collect(),
        )
    }

    /// Value and first derivative in one Horner pass.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &a in self.c.iter().rev() {
            dp = dp * x + p;
            p = p * x + a;
        }
        (p, dp)
    }

    pub fn add(&self, other: &UniPoly) -> UniPoly {
        let n = self.c.len().max(other.c.len());
        UniPoly::new((0..n).map(|j| self.coef(j) + other.coef(j)).collect())
    }

    pub fn scale(&self, s: f64) -> UniPoly {
        UniPoly::new(self.c.iter().map(|a| a * s).collect())
    }

    pub fn add_scaled(&mut self, other: &UniPoly, s: f64) {
        if self.c.len() < other.c.len() {
            self.c.resize(other.c.len(), 0.0);
        }
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += s * b;
        }
    }

    pub fn mul(&self, other: &UniPoly) -> UniPoly {
        if self.c.is_empty() || other.c.is_empty() {
            return UniPoly::zero();
        }
        let mut c = vec![0.0; self.c.len() + other.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in other.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        UniPoly::new(c)
    }

    /// `x -> p(a + b x)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> UniPoly {
        let mut out = UniPoly::zero();
        let lin = UniPoly::new(vec![a, b]);
        for &coef in self.c.iter().rev() {
            out = out.mul(&lin);
            out.add_scaled(&UniPoly::constant(coef), 1.0);
        }
        out
    }
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Gauss-Legendre nodes on `[0, 1]` with weights summing to one, nodes
/// in increasing order.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n.max(1)).unwrap();
    let rule = GaussLegendre::new(n);
    let mut out: Vec<(f64, f64)> = rule.iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// `n` Chebyshev-Lobatto points of `[lo, hi]` in increasing order; the
/// endpoints are included.
pub fn chebyshev_lobatto(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    let m = AffineMap::from_interval(lo, hi);
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = -(std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            m.from_unit(t).clamp(lo, hi)
        })
        .collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Affine change of variable `y = center + half_width * t` mapping
/// `[lo, hi]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub center: f64,
    pub half_width: f64,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self { center: 0.0, half_width: 1.0 }
    }

    pub fn from_interval(lo: f64, hi: f64) -> Self {
        let hw = 0.5 * (hi - lo);
        Self {
            center: 0.5 * (hi + lo),
            half_width: if hw > 0.0 { hw } else { 1.0 },
        }
    }

    pub fn to_unit(&self, y: f64) -> f64 {
        (y - self.center) / self.half_width
    }

    pub fn from_unit(&self, t: f64) -> f64 {
        self.center + self.half_width * t
    }

    /// Coefficients in `y` of a polynomial given in the unit variable `t`.
    pub fn unscale_poly(&self, p_t: &UniPoly) -> UniPoly {
        p_t.compose_affine(-self.center / self.half_width, 1.0 / self.half_width)
    }

    /// Coefficients in `t` of a polynomial given in `y`.
    pub fn scale_poly(&self, p_y: &UniPoly) -> UniPoly {
        p_y.compose_affine(self.center, self.half_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_and_derivative() {
        let p = UniPoly::new(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
        let (v, d) = p.eval_with_derivative(2.0);
        assert_eq!(v, 9.0);
        assert_eq!(d, -2.0 + 12.0);
        assert_eq!(p.derivative().c, vec![-2.0, 6.0]);
    }

    #[test]
    fn compose_round_trip() {
        let p = UniPoly::new(vec![0.5, 1.0, -0.25, 0.125]);
        let m = AffineMap::from_interval(-3.0, 40.0);
        let back = m.unscale_poly(&m.scale_poly(&p));
        for (a, b) in p.c.iter().zip(&back.c) {
            assert!((a - b).abs() < 1e-12);
        }
        for y in [-3.0, 0.0, 7.5, 40.0] {
            assert!((m.scale_poly(&p).eval(m.to_unit(y)) - p.eval(y)).abs() < 1e-9);
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(6, 2), 15.0);
        assert_eq!(binom(4, 0), 1.0);
        assert_eq!(binom(3, 5), 0.0);
        assert_eq!(factorial(5), 120.0);
    }

    #[test]
    fn legendre_unit_rule() {
        let g = gauss_legendre_unit(4);
        let total: f64 = g.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
        let m7: f64 = g.iter().map(|p| p.1 * p.0.powi(7)).sum();
        assert!((m7 - 0.125).abs() < 1e-14);
    }
}
