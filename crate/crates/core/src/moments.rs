//! Multivariate polynomials, moment vectors of atom measures, moment and
//! localizing matrices, and the Putinar-type PSD consistency check.
//!
//! Moments are taken in rescaled variables `t = (v - center) / half_width`
//! so that every coordinate of the box maps to `[-1, 1]`; the map is kept
//! on the vector and `to_original` recovers moments in original units.

use crate::error::{Error, Result};
use crate::model::{RiskModel, SpaceBounds};
use crate::occupation::{AtomMeasure, Label, OccupationSystem};
use crate::poly::{binom, AffineMap};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Exponent vector over an ordered list of variables.
pub type MultiIndex = Vec<u32>;

pub fn degree(alpha: &[u32]) -> u32 {
    alpha.iter().sum()
}

/// All multi-indices in `nvars` variables of degree `<= max_deg`, in
/// graded order (by degree, then lexicographically descending).
pub fn monomials(nvars: usize, max_deg: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in 0..=max_deg {
        let mut cur = vec![0u32; nvars];
        fill(&mut out, &mut cur, 0, d);
    }
    out
}

fn fill(out: &mut Vec<MultiIndex>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    if cur.is_empty() {
        if remaining == 0 {
            out.push(vec![]);
        }
        return;
    }
    if pos == cur.len() - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, remaining - e);
    }
    cur[pos] = 0;
}

fn add_idx(a: &[u32], b: &[u32]) -> MultiIndex {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Sparse multivariate polynomial; zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub nvars: usize,
    pub terms: BTreeMap<MultiIndex, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        assert_eq!(alpha.len(), self.nvars);
        let e = self.terms.entry(alpha.clone()).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&alpha);
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|a| degree(a)).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product::<f64>())
            .sum()
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                out.add_term(add_idx(a, b), ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c * s);
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), *c);
        }
        out
    }

    /// `(x_var - lo)(hi - x_var)`.
    pub fn box_generator(nvars: usize, var: usize, lo: f64, hi: f64) -> Poly {
        let mut p = Poly::zero(nvars);
        let mut e1 = vec![0; nvars];
        e1[var] = 1;
        let mut e2 = vec![0; nvars];
        e2[var] = 2;
        p.add_term(vec![0; nvars], -lo * hi);
        p.add_term(e1, lo + hi);
        p.add_term(e2, -1.0);
        p
    }
}

/// Moments `m_alpha` up to degree `2r` of a measure, in rescaled variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub vars: Vec<Label>,
    pub maps: Vec<AffineMap>,
    pub r: usize,
    pub source: String,
    #[serde(with = "index_map")]
    pub entries: BTreeMap<MultiIndex, f64>,
}

impl MomentVector {
    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn get(&self, alpha: &[u32]) -> Result<f64> {
        self.entries
            .get(alpha)
            .copied()
            .ok_or_else(|| Error::Moments(format!("missing moment {:?} in {}", alpha, self.source)))
    }

    pub fn mass(&self) -> f64 {
        self.entries.get(&vec![0; self.nvars()]).copied().unwrap_or(0.0)
    }

    /// Riesz functional `L_m(p) = sum p_alpha m_alpha`, summed in index order.
    pub fn riesz(&self, p: &Poly) -> Result<f64> {
        let mut acc = 0.0;
        for (a, c) in &p.terms {
            acc += c * self.get(a)?;
        }
        Ok(acc)
    }

    /// Moments in original units, `int v^alpha dmu`.
    pub fn to_original(&self) -> MomentVector {
        let mut entries = BTreeMap::new();
        for alpha in self.entries.keys() {
            // v_i^a = sum_j binom(a, j) c^(a-j) w^j t^j, expanded per variable
            let mut acc: Vec<(MultiIndex, f64)> = vec![(vec![], 1.0)];
            for (i, &a) in alpha.iter().enumerate() {
                let m = self.maps[i];
                let mut next = Vec::with_capacity(acc.len() * (a as usize + 1));
                for (idx, coef) in &acc {
                    for j in 0..=a {
                        let f = binom(a as usize, j as usize)
                            * m.center.powi((a - j) as i32)
                            * m.half_width.powi(j as i32);
                        let mut id = idx.clone();
                        id.push(j);
                        next.push((id, coef * f));
                    }
                }
                acc = next;
            }
            let v: f64 = acc.iter().map(|(id, c)| c * self.entries.get(id).copied().unwrap_or(0.0)).sum();
            entries.insert(alpha.clone(), v);
        }
        MomentVector {
            vars: self.vars.clone(),
            maps: vec![AffineMap::identity(); self.vars.len()],
            r: self.r,
            source: self.source.clone(),
            entries,
        }
    }
}

mod index_map {
    use super::MultiIndex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<MultiIndex, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<String, f64> = m
            .iter()
            .map(|(k, v)| (k.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","), *v))
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MultiIndex, f64>, D::Error> {
        let raw: BTreeMap<String, f64> = BTreeMap::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let idx = if k.is_empty() {
                    Ok(vec![])
                } else {
                    k.split(',').map(|e| e.parse::<u32>()).collect::<Result<Vec<_>, _>>()
                };
                idx.map(|i| (i, v)).map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

/// Options for `moments_from_atoms`.
#[derive(Debug, Clone, Default)]
pub struct MomentOptions {
    /// Multiply each atom weight by `e^{-q s1}`.
    pub discount: Option<f64>,
    /// One map per requested variable; identity when absent.
    pub maps: Option<Vec<AffineMap>>,
}

/// Exact weighted power sums of an atom measure over `vars`.
pub fn moments_from_atoms(
    measure: &AtomMeasure,
    r: usize,
    vars: &[Label],
    opts: &MomentOptions,
) -> Result<MomentVector> {
    if r == 0 {
        return Err(Error::Moments("relaxation order must be >= 1".into()));
    }
    let cols: Vec<usize> = vars
        .iter()
        .map(|v| {
            measure
                .labels
                .iter()
                .position(|l| l == v)
                .ok_or_else(|| Error::Moments(format!("variable {} absent from measure labels", v.name())))
        })
        .collect::<Result<_>>()?;
    let s1_col = if opts.discount.is_some() {
        Some(
            measure
                .labels
                .iter()
                .position(|l| *l == Label::S1)
                .ok_or_else(|| Error::Moments("discounting needs an s1 coordinate".into()))?,
        )
    } else {
        None
    };
    let maps = opts.maps.clone().unwrap_or_else(|| vec![AffineMap::identity(); vars.len()]);
    if maps.len() != vars.len() {
        return Err(Error::Moments("one affine map per variable required".into()));
    }
    let basis = monomials(vars.len(), 2 * r as u32);
    let dmax = 2 * r;
    let mut sums = vec![0.0; basis.len()];
    let mut pows = vec![vec![0.0; dmax + 1]; vars.len()];
    for (pt, w) in measure.iter() {
        let mut w = w;
        if let (Some(col), Some(q)) = (s1_col, opts.discount) {
            w *= (-q * pt[col]).exp();
        }
        for (k, &c) in cols.iter().enumerate() {
            let t = maps[k].to_unit(pt[c]);
            pows[k][0] = 1.0;
            for e in 1..=dmax {
                pows[k][e] = pows[k][e - 1] * t;
            }
        }
        for (slot, alpha) in sums.iter_mut().zip(&basis) {
            let mut v = w;
            for (k, &e) in alpha.iter().enumerate() {
                v *= pows[k][e as usize];
            }
            *slot += v;
        }
    }
    Ok(MomentVector {
        vars: vars.to_vec(),
        maps,
        r,
        source: measure.name.clone(),
        entries: basis.into_iter().zip(sums).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    pub basis: Vec<MultiIndex>,
    /// Row-major dense entries.
    pub data: Vec<f64>,
    pub generator: Option<Poly>,
}

impl MomentMatrix {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_row_slice(n, n, &self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.size() == 0 {
            return vec![];
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dmatrix()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// `<h, M h>` for a coefficient vector in the matrix basis.
    pub fn quadratic_form(&self, h: &[f64]) -> f64 {
        let n = self.size();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += h[i] * self.data[i * n + j] * h[j];
            }
        }
        acc
    }
}

/// `M_r(m)(alpha, alpha') = m_{alpha + alpha'}`.
pub fn moment_matrix(m: &MomentVector, r: usize) -> Result<MomentMatrix> {
    let basis = monomials(m.nvars(), r as u32);
    let n = basis.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = m.get(&add_idx(&basis[i], &basis[j]))?;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(MomentMatrix { basis, data, generator: None })
}

/// Localizing matrix of order `r - ceil(deg theta / 2)` with entries
/// `sum_delta theta_delta m_{delta + alpha + alpha'}`.
pub fn localizing_matrix(m: &MomentVector, theta: &Poly, r: usize) -> Result<MomentMatrix> {
    let half = (theta.degree() as usize + 1) / 2;
    if r < half {
        return Err(Error::Moments(format!(
            "order {r} too small for a generator of degree {}",
            theta.degree()
        )));
    }
    let basis = monomials(m.nvars(), (r - half) as u32);
    let n = basis.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let ab = add_idx(&basis[i], &basis[j]);
            let mut v = 0.0;
            for (delta, c) in &theta.terms {
                v += c * m.get(&add_idx(delta, &ab))?;
            }
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(MomentMatrix { basis, data, generator: Some(theta.clone()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCheck {
    pub measure: String,
    pub generator: String,
    pub size: usize,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutinarReport {
    pub r: usize,
    pub psd_tol: f64,
    pub checks: Vec<MatrixCheck>,
    pub pass: bool,
}

impl PutinarReport {
    pub fn min_eigenvalue(&self) -> f64 {
        self.checks.iter().map(|c| c.min_eigenvalue).fold(f64::INFINITY, f64::min)
    }
}

/// Named box generators for one measure, expressed in rescaled variables.
pub struct GeneratorSet {
    pub names: Vec<String>,
    pub polys: Vec<Poly>,
}

/// Checks the moment matrix and every localizing matrix of one moment
/// vector. Matrices are divided by the total mass before the eigenvalue
/// solve; a zero measure passes trivially.
pub fn check_moment_vector(m: &MomentVector, gens: &GeneratorSet, r: usize, psd_tol: f64) -> Result<Vec<MatrixCheck>> {
    let mass = m.mass();
    let norm = if mass > 0.0 { mass } else { 1.0 };
    let mut out = Vec::new();
    let mm = moment_matrix(m, r)?;
    let ev = mm.min_eigenvalue() / norm;
    out.push(MatrixCheck {
        measure: m.source.clone(),
        generator: "1".into(),
        size: mm.size(),
        min_eigenvalue: ev,
        pass: ev >= -psd_tol,
    });
    for (name, g) in gens.names.iter().zip(&gens.polys) {
        let lm = localizing_matrix(m, g, r)?;
        let ev = lm.min_eigenvalue() / norm;
        out.push(MatrixCheck {
            measure: m.source.clone(),
            generator: name.clone(),
            size: lm.size(),
            min_eigenvalue: ev,
            pass: ev >= -psd_tol,
        });
    }
    Ok(out)
}

/// Interval of each label inside the compactification box.
pub fn label_interval(label: Label, bounds: &SpaceBounds) -> (f64, f64) {
    match label {
        Label::S1 | Label::S2 => (0.0, bounds.t),
        Label::Y1 | Label::Y2 => (bounds.xmin, bounds.xmax),
        Label::U => (0.0, 1.0),
        Label::L => (0.0, bounds.lmax),
        Label::I => (0.0, bounds.imax),
    }
}

/// Map sending the label's box interval to `[-1, 1]`.
pub fn label_map(label: Label, bounds: &SpaceBounds) -> AffineMap {
    let (lo, hi) = label_interval(label, bounds);
    AffineMap::from_interval(lo, hi)
}

/// `(v - lo)(hi - v)` rewritten in the unit variable of `map` and divided
/// by `half_width^2` (a positive factor, irrelevant for PSD checks).
pub fn scaled_box_generator(nvars: usize, var: usize, lo: f64, hi: f64, map: &AffineMap) -> Poly {
    Poly::box_generator(nvars, var, map.to_unit(lo), map.to_unit(hi))
}

/// Generators for the discounted stopping measure and, when `extra` is
/// given, the additional per-measure box constraints.
pub fn putinar_generators(vars: &[Label], bounds: &SpaceBounds, extra: &[(Label, f64, f64, &str)]) -> GeneratorSet {
    let n = vars.len();
    let mut names = Vec::new();
    let mut polys = Vec::new();
    let pos = |l: Label| vars.iter().position(|v| *v == l);
    if let Some(i) = pos(Label::Y1) {
        names.push("(y1 - xmin)(xmax - y1)".to_string());
        polys.push(scaled_box_generator(n, i, bounds.xmin, bounds.xmax, &label_map(Label::Y1, bounds)));
    }
    if let Some(i) = pos(Label::S1) {
        names.push("s1(T - s1)".to_string());
        polys.push(scaled_box_generator(n, i, 0.0, bounds.t, &label_map(Label::S1, bounds)));
    }
    for &(label, lo, hi, name) in extra {
        if let Some(i) = pos(label) {
            names.push(name.to_string());
            polys.push(scaled_box_generator(n, i, lo, hi, &label_map(label, bounds)));
        }
    }
    GeneratorSet { names, polys }
}

/// Moment vectors used by the Putinar check and the forward objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMoments {
    /// Discounted `gamma_0` over `(s1, y1)`.
    pub y0bar: MomentVector,
    /// `gamma_2` over `(s1, y1, y2, l)`.
    pub y2: MomentVector,
    /// `gamma_3` over `(s1, y1, y2, i)`.
    pub y3: MomentVector,
}

pub fn system_moments(occ: &OccupationSystem, bounds: &SpaceBounds, q: f64, r: usize) -> Result<SystemMoments> {
    let maps = |vars: &[Label]| vars.iter().map(|l| label_map(*l, bounds)).collect::<Vec<_>>();
    let v0 = [Label::S1, Label::Y1];
    let v2 = [Label::S1, Label::Y1, Label::Y2, Label::L];
    let v3 = [Label::S1, Label::Y1, Label::Y2, Label::I];
    Ok(SystemMoments {
        y0bar: moments_from_atoms(&occ.gamma0, r, &v0, &MomentOptions { discount: Some(q), maps: Some(maps(&v0)) })?,
        y2: moments_from_atoms(&occ.gamma2, r, &v2, &MomentOptions { discount: None, maps: Some(maps(&v2)) })?,
        y3: moments_from_atoms(&occ.gamma3, r, &v3, &MomentOptions { discount: None, maps: Some(maps(&v3)) })?,
    })
}

/// Putinar consistency of an occupation system: moment matrices plus the
/// box localizing matrices of the discounted stopping measure, the
/// dividend measure and the injection measure.
pub fn putinar_check(
    occ: &OccupationSystem,
    model: &RiskModel,
    bounds: &SpaceBounds,
    r: usize,
    psd_tol: f64,
) -> Result<PutinarReport> {
    let mom = system_moments(occ, bounds, model.q, r)?;
    putinar_check_moments(&mom, bounds, r, psd_tol)
}

pub fn putinar_check_moments(mom: &SystemMoments, bounds: &SpaceBounds, r: usize, psd_tol: f64) -> Result<PutinarReport> {
    let mut checks = Vec::new();
    let g0 = putinar_generators(&mom.y0bar.vars, bounds, &[]);
    checks.extend(check_moment_vector(&mom.y0bar, &g0, r, psd_tol)?);
    let g2 = putinar_generators(
        &mom.y2.vars,
        bounds,
        &[
            (Label::Y2, 0.0, bounds.xmax, "y2(xmax - y2)"),
            (Label::L, 0.0, bounds.lmax, "l(lmax - l)"),
        ],
    );
    checks.extend(check_moment_vector(&mom.y2, &g2, r, psd_tol)?);
    let g3 = putinar_generators(&mom.y3.vars, bounds, &[(Label::I, 0.0, bounds.imax, "i(imax - i)")]);
    checks.extend(check_moment_vector(&mom.y3, &g3, r, psd_tol)?);
    let pass = checks.iter().all(|c| c.pass);
    Ok(PutinarReport { r, psd_tol, checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(entries: &[f64], r: usize) -> MomentVector {
        MomentVector {
            vars: vec![Label::Y1],
            maps: vec![AffineMap::identity()],
            r,
            source: "test".into(),
            entries: entries.iter().enumerate().map(|(i, &v)| (vec![i as u32], v)).collect(),
        }
    }

    #[test]
    fn graded_basis_counts() {
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(4, 3).len(), 35);
        assert_eq!(monomials(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn dirac_matrix() {
        let m = vec1(&[1.0, 2.0, 4.0], 1);
        let mm = moment_matrix(&m, 1).unwrap();
        assert_eq!(mm.data, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(mm.min_eigenvalue().abs() < 1e-12);
    }

    #[test]
    fn lebesgue_matrices() {
        let m = vec1(&[1.0, 0.5, 1.0 / 3.0, 0.25, 0.2], 2);
        let mm = moment_matrix(&m, 1).unwrap();
        assert_eq!(mm.data, vec![1.0, 0.5, 0.5, 1.0 / 3.0]);
        let theta = Poly::box_generator(1, 0, 0.0, 1.0);
        let lm = localizing_matrix(&m, &theta, 2).unwrap();
        let expect = [1.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 20.0];
        for (a, b) in lm.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let one = Poly::constant(1, 1.0);
        let l1 = localizing_matrix(&m, &one, 2).unwrap();
        assert_eq!(l1.data, moment_matrix(&m, 2).unwrap().data);
    }

    #[test]
    fn out_of_box_dirac_gives_negative_localizer() {
        let m = vec1(&[1.0, 2.0, 4.0], 1);
        let theta = Poly::box_generator(1, 0, 0.0, 1.0);
        let lm = localizing_matrix(&m, &theta, 1).unwrap();
        assert_eq!(lm.size(), 1);
        assert!((lm.data[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn order_error() {
        let m = vec1(&[1.0, 0.0, 0.0], 1);
        let theta = Poly::box_generator(1, 0, 0.0, 1.0).mul(&Poly::box_generator(1, 0, 0.0, 1.0));
        assert!(localizing_matrix(&m, &theta, 1).is_err());
    }

    #[test]
    fn original_units_round_trip() {
        let mut meas = AtomMeasure::new("mu", vec![Label::Y1]);
        meas.push(&[3.0], 0.25);
        meas.push(&[-1.0], 0.75);
        let map = AffineMap::from_interval(-2.0, 10.0);
        let scaled = moments_from_atoms(&meas, 2, &[Label::Y1], &MomentOptions { discount: None, maps: Some(vec![map]) }).unwrap();
        let orig = scaled.to_original();
        let plain = moments_from_atoms(&meas, 2, &[Label::Y1], &MomentOptions::default()).unwrap();
        for (k, v) in &plain.entries {
            assert!((orig.entries[k] - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = vec1(&[1.0, 0.5, 0.25], 1);
        let s = serde_json::to_string(&m).unwrap();
        let back: MomentVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
