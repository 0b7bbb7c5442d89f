//! Interior-point solver for linear conic programs
//!
//! ```text
//! min c'x  s.t.  A x = b,  x in K = R+^n0 x S+^s1 x ... x S+^sk
//! max b'y  s.t.  c - A'y = s in K
//! ```
//!
//! Semidefinite blocks are stored as `svec` (lower triangle, column major,
//! off-diagonal entries times sqrt 2) so that the trace inner product is the
//! Euclidean one. The method is a homogeneous self-dual embedding with
//! Nesterov-Todd scaling and Mehrotra predictor-corrector steps; the normal
//! equations are dense and solved by Cholesky.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Nonneg(usize),
    /// Side length of a symmetric block.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonneg(n) => n,
            Cone::Psd(s) => s * (s + 1) / 2,
        }
    }

    fn degree(&self) -> usize {
        match *self {
            Cone::Nonneg(n) => n,
            Cone::Psd(s) => s,
        }
    }
}

pub fn svec_len(s: usize) -> usize {
    s * (s + 1) / 2
}

/// Position of `(i, j)`, `i >= j`, in the svec of an `s x s` block.
pub fn svec_index(s: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * s - j * (j + 1) / 2 + i
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let s = m.nrows();
    let mut v = Vec::with_capacity(svec_len(s));
    for j in 0..s {
        for i in j..s {
            v.push(if i == j { m[(i, j)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) });
        }
    }
    v
}

pub fn smat(v: &[f64], s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    let mut k = 0;
    for j in 0..s {
        for i in j..s {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] / SQRT2;
                m[(j, i)] = v[k] / SQRT2;
            }
            k += 1;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    /// Dense `m x n` constraint matrix.
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.cones.iter().map(Cone::dim).sum();
        if n != self.c.len() || self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::Solver(format!(
                "inconsistent sizes: cones {n}, c {}, A {}x{}, b {}",
                self.c.len(),
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        let finite = self.c.iter().chain(&self.b).chain(self.a.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Solver("non-finite problem data".into()));
        }
        Ok(())
    }

    /// `i j value` triplets of `A`, then `c`, `b` and the cone list.
    pub fn triplets(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# A {} {}", self.m(), self.n());
        for j in 0..self.n() {
            for i in 0..self.m() {
                let v = self.a[(i, j)];
                if v != 0.0 {
                    let _ = writeln!(out, "{i} {j} {v:e}");
                }
            }
        }
        let _ = writeln!(out, "# c");
        for (j, v) in self.c.iter().enumerate() {
            let _ = writeln!(out, "{j} {v:e}");
        }
        let _ = writeln!(out, "# b");
        for (i, v) in self.b.iter().enumerate() {
            let _ = writeln!(out, "{i} {v:e}");
        }
        let _ = writeln!(out, "# cones");
        for c in &self.cones {
            let _ = match c {
                Cone::Nonneg(n) => writeln!(out, "l {n}"),
                Cone::Psd(s) => writeln!(out, "s {s}"),
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

/// NT scaling of one block.
enum BlockScaling {
    Lp { w: Vec<f64>, lam: Vec<f64> },
    Psd { r: DMatrix<f64>, rinv: DMatrix<f64>, lam: Vec<f64>, h: DMatrix<f64> },
}

struct Layout {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
}

impl Layout {
    fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut o = 0;
        for c in cones {
            offsets.push(o);
            o += c.dim();
        }
        Self { cones: cones.to_vec(), offsets }
    }

    fn blocks(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        self.cones.iter().zip(&self.offsets).map(|(c, &o)| (*c, o..o + c.dim()))
    }

    fn identity(&self, n: usize) -> Vec<f64> {
        let mut e = vec![0.0; n];
        for (c, r) in self.blocks() {
            match c {
                Cone::Nonneg(_) => e[r].iter_mut().for_each(|v| *v = 1.0),
                Cone::Psd(s) => {
                    for i in 0..s {
                        e[r.start + svec_index(s, i, i)] = 1.0;
                    }
                }
            }
        }
        e
    }

    fn degree(&self) -> usize {
        self.cones.iter().map(Cone::degree).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sym_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

fn nt_scaling(layout: &Layout, x: &[f64], s: &[f64]) -> Option<Vec<BlockScaling>> {
    let mut out = Vec::with_capacity(layout.cones.len());
    for (c, r) in layout.blocks() {
        match c {
            Cone::Nonneg(_) => {
                let xs = &x[r.clone()];
                let ss = &s[r];
                let w = xs.iter().zip(ss).map(|(a, b)| (a / b).sqrt()).collect();
                let lam = xs.iter().zip(ss).map(|(a, b)| (a * b).sqrt()).collect();
                out.push(BlockScaling::Lp { w, lam });
            }
            Cone::Psd(n) => {
                let xm = smat(&x[r.clone()], n);
                let sm = smat(&s[r], n);
                let lx = Cholesky::new(xm)?.l();
                let ls = Cholesky::new(sm)?.l();
                let svd = (ls.transpose() * &lx).svd(false, true);
                let vt = svd.v_t?;
                let sig = svd.singular_values;
                if sig.iter().any(|&v| !(v > 0.0)) {
                    return None;
                }
                let v = vt.transpose();
                let mut r_mat = &lx * &v;
                let mut rinv = vt * lx.clone().try_inverse()?;
                for k in 0..n {
                    let f = sig[k].sqrt();
                    r_mat.column_mut(k).scale_mut(1.0 / f);
                    rinv.row_mut(k).scale_mut(f);
                }
                let wm = &r_mat * r_mat.transpose();
                let d = svec_len(n);
                let mut h = DMatrix::zeros(d, d);
                let mut unit = vec![0.0; d];
                for col in 0..d {
                    unit[col] = 1.0;
                    let e = smat(&unit, n);
                    let img = svec(&(&wm * e * &wm));
                    for (row, val) in img.into_iter().enumerate() {
                        h[(row, col)] = val;
                    }
                    unit[col] = 0.0;
                }
                out.push(BlockScaling::Psd { r: r_mat, rinv, lam: sig.iter().copied().collect(), h });
            }
        }
    }
    Some(out)
}

/// `H v`, block by block.
fn apply_h(layout: &Layout, sc: &[BlockScaling], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for ((_, r), b) in layout.blocks().zip(sc) {
        match b {
            BlockScaling::Lp { w, .. } => {
                for (k, i) in r.enumerate() {
                    out[i] = w[k] * w[k] * v[i];
                }
            }
            BlockScaling::Psd { h, .. } => {
                let seg = DVector::from_column_slice(&v[r.clone()]);
                let img = h * seg;
                out[r].copy_from_slice(img.as_slice());
            }
        }
    }
    out
}

/// Right-hand side `r_c` of `dx + H ds = r_c` for the complementarity
/// target `sigma mu`, with optional second-order correction.
fn comp_rhs(
    layout: &Layout,
    sc: &[BlockScaling],
    sigma_mu: f64,
    corr: Option<(&[f64], &[f64])>,
) -> Vec<f64> {
    let n: usize = layout.cones.iter().map(Cone::dim).sum();
    let mut out = vec![0.0; n];
    for ((c, r), b) in layout.blocks().zip(sc) {
        match (c, b) {
            (Cone::Nonneg(_), BlockScaling::Lp { w, lam }) => {
                for (k, i) in r.enumerate() {
                    let mut t = sigma_mu - lam[k] * lam[k];
                    if let Some((dx, ds)) = corr {
                        t -= (dx[i] / w[k]) * (ds[i] * w[k]);
                    }
                    out[i] = w[k] * t / lam[k];
                }
            }
            (Cone::Psd(s), BlockScaling::Psd { r: rm, rinv, lam, .. }) => {
                let mut rc = DMatrix::<f64>::zeros(s, s);
                for i in 0..s {
                    rc[(i, i)] = sigma_mu - lam[i] * lam[i];
                }
                if let Some((dx, ds)) = corr {
                    let dxt = rinv * smat(&dx[r.clone()], s) * rinv.transpose();
                    let dst = rm.transpose() * smat(&ds[r.clone()], s) * rm;
                    rc -= sym_prod(&dxt, &dst);
                }
                let mut z = DMatrix::<f64>::zeros(s, s);
                for i in 0..s {
                    for j in 0..s {
                        z[(i, j)] = 2.0 * rc[(i, j)] / (lam[i] + lam[j]);
                    }
                }
                let v = svec(&(rm * z * rm.transpose()));
                out[r].copy_from_slice(&v);
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Largest `alpha` with `v + alpha dv` in the cone (capped at `cap`).
fn max_step(layout: &Layout, v: &[f64], dv: &[f64], cap: f64) -> f64 {
    let mut alpha = cap;
    for (c, r) in layout.blocks() {
        match c {
            Cone::Nonneg(_) => {
                for i in r {
                    if dv[i] < 0.0 {
                        alpha = alpha.min(-v[i] / dv[i]);
                    }
                }
            }
            Cone::Psd(s) => {
                let Some(ch) = Cholesky::new(smat(&v[r.clone()], s)) else {
                    return 0.0;
                };
                let Some(linv) = ch.l().try_inverse() else {
                    return 0.0;
                };
                let d = &linv * smat(&dv[r], s) * linv.transpose();
                let ev = SymmetricEigen::new(d).eigenvalues;
                let lmin = ev.iter().copied().fold(f64::INFINITY, f64::min);
                if lmin < 0.0 {
                    alpha = alpha.min(-1.0 / lmin);
                }
            }
        }
    }
    alpha
}

struct Newton<'a> {
    prog: &'a ConicProgram,
    layout: &'a Layout,
    sc: Vec<BlockScaling>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    u2: DVector<f64>,
    v2: Vec<f64>,
}

impl<'a> Newton<'a> {
    fn new(prog: &'a ConicProgram, layout: &'a Layout, sc: Vec<BlockScaling>) -> Option<Self> {
        let a = &prog.a;
        let m = prog.m();
        // M = sum_b A_b H_b A_b'
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for ((_, r), b) in layout.blocks().zip(&sc) {
            let ab = a.columns(r.start, r.len());
            match b {
                BlockScaling::Lp { w, .. } => {
                    let mut scaled = ab.clone_owned();
                    for (k, mut col) in scaled.column_iter_mut().enumerate() {
                        col.scale_mut(w[k]);
                    }
                    mm += &scaled * scaled.transpose();
                }
                BlockScaling::Psd { h, .. } => {
                    mm += ab * h * ab.transpose();
                }
            }
        }
        let scale = (0..m).map(|i| mm[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut chol = None;
        for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
            let mut mr = mm.clone();
            for i in 0..m {
                mr[(i, i)] += reg * scale;
            }
            if let Some(c) = Cholesky::new(mr) {
                chol = Some(c);
                break;
            }
        }
        let chol = chol?;
        let hc = apply_h(layout, &sc, &prog.c);
        let rhs2 = DVector::from_vec(mat_vec(a, &hc)) + DVector::from_column_slice(&prog.b);
        let u2 = chol.solve(&rhs2);
        let at_u2 = mat_t_vec(a, u2.as_slice());
        let diff: Vec<f64> = at_u2.iter().zip(&prog.c).map(|(p, q)| p - q).collect();
        let v2 = apply_h(layout, &sc, &diff);
        Some(Self { prog, layout, sc, chol, u2, v2 })
    }

    /// Solves the embedded Newton system for reduction factor `eta`.
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        eta: f64,
        rp: &[f64],
        rd: &[f64],
        rg: f64,
        rc: &[f64],
        rtau: f64,
        tau: f64,
        kappa: f64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
        let a = &self.prog.a;
        let hrd = apply_h(self.layout, &self.sc, rd);
        let t: Vec<f64> = rc.iter().zip(&hrd).map(|(c, h)| c - eta * h).collect();
        let at = mat_vec(a, &t);
        let rhs1: Vec<f64> = rp.iter().zip(&at).map(|(p, q)| eta * p - q).collect();
        let u1 = self.chol.solve(&DVector::from_vec(rhs1));
        let hatu1 = apply_h(self.layout, &self.sc, &mat_t_vec(a, u1.as_slice()));
        let v1: Vec<f64> = t.iter().zip(&hatu1).map(|(p, q)| p + q).collect();
        let c = &self.prog.c;
        let b = &self.prog.b;
        let denom = -dot(c, &self.v2) + dot(b, self.u2.as_slice()) + kappa / tau;
        let num = eta * rg + dot(c, &v1) - dot(b, u1.as_slice()) + rtau / tau;
        let dtau = num / denom;
        let dy: Vec<f64> = u1.iter().zip(self.u2.iter()).map(|(p, q)| p + dtau * q).collect();
        let dx: Vec<f64> = v1.iter().zip(&self.v2).map(|(p, q)| p + dtau * q).collect();
        let atdy = mat_t_vec(a, &dy);
        let ds: Vec<f64> = (0..c.len()).map(|i| eta * rd[i] - atdy[i] + c[i] * dtau).collect();
        let dkappa = (rtau - kappa * dtau) / tau;
        (dx, dy, ds, dtau, dkappa)
    }
}

fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).as_slice().to_vec()
}

fn mat_t_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    a.tr_mul(&DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Solves the program; never panics on bad numerics, reporting
/// `MaxIter` with a message instead.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> Result<SolveResult> {
    prog.validate()?;
    let layout = Layout::new(&prog.cones);
    let n = prog.n();
    let m = prog.m();
    let nu = layout.degree() as f64;
    let mut x = layout.identity(n);
    let mut s = layout.identity(n);
    let mut y = vec![0.0; m];
    let (mut tau, mut kappa) = (1.0, 1.0);
    let bn = 1.0 + norm(&prog.b);
    let cn = 1.0 + norm(&prog.c);
    let mut message = String::new();
    let mut status = SolveStatus::MaxIter;
    let mut iters = 0;

    for it in 0..=opts.max_iter {
        iters = it;
        let ax = mat_vec(&prog.a, &x);
        let aty = mat_t_vec(&prog.a, &y);
        let rp: Vec<f64> = (0..m).map(|i| prog.b[i] * tau - ax[i]).collect();
        let rd: Vec<f64> = (0..n).map(|i| prog.c[i] * tau - aty[i] - s[i]).collect();
        let cx = dot(&prog.c, &x);
        let by = dot(&prog.b, &y);
        let rg = kappa + cx - by;
        let pres = norm(&rp) / tau / bn;
        let dres = norm(&rd) / tau / cn;
        let (pobj, dobj) = (cx / tau, by / tau);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().min(dobj.abs()));
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if by > 0.0 {
            let ats: Vec<f64> = (0..n).map(|i| aty[i] + s[i]).collect();
            if norm(&ats) / by <= opts.tol {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if cx < 0.0 && norm(&ax) / (-cx) <= opts.tol {
            status = SolveStatus::Unbounded;
            break;
        }
        if it == opts.max_iter {
            message = format!("iteration limit: pres {pres:.2e} dres {dres:.2e} gap {gap:.2e}");
            break;
        }
        let mu = (dot(&x, &s) + tau * kappa) / (nu + 1.0);
        let Some(sc) = nt_scaling(&layout, &x, &s) else {
            message = "scaling lost positive definiteness".into();
            break;
        };
        let Some(newton) = Newton::new(prog, &layout, sc) else {
            message = "normal equations not positive definite".into();
            break;
        };
        // predictor
        let rc_a = comp_rhs(&layout, &newton.sc, 0.0, None);
        let (dxa, dya, dsa, dta, dka) = newton.solve(1.0, &rp, &rd, rg, &rc_a, -tau * kappa, tau, kappa);
        let _ = dya;
        let mut alpha_a = max_step(&layout, &x, &dxa, 1.0).min(max_step(&layout, &s, &dsa, 1.0));
        if dta < 0.0 {
            alpha_a = alpha_a.min(-tau / dta);
        }
        if dka < 0.0 {
            alpha_a = alpha_a.min(-kappa / dka);
        }
        let xa: Vec<f64> = (0..n).map(|i| x[i] + alpha_a * dxa[i]).collect();
        let sa: Vec<f64> = (0..n).map(|i| s[i] + alpha_a * dsa[i]).collect();
        let mua = (dot(&xa, &sa) + (tau + alpha_a * dta) * (kappa + alpha_a * dka)) / (nu + 1.0);
        let sigma = (mua / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let rc = comp_rhs(&layout, &newton.sc, sigma * mu, Some((&dxa, &dsa)));
        let rtau = sigma * mu - tau * kappa - dta * dka;
        let (dx, dy, ds, dt, dk) = newton.solve(1.0 - sigma, &rp, &rd, rg, &rc, rtau, tau, kappa);
        let mut alpha = max_step(&layout, &x, &dx, f64::INFINITY).min(max_step(&layout, &s, &ds, f64::INFINITY));
        if dt < 0.0 {
            alpha = alpha.min(-tau / dt);
        }
        if dk < 0.0 {
            alpha = alpha.min(-kappa / dk);
        }
        let alpha = (0.99 * alpha).min(1.0);
        if !(alpha > 0.0) || dx.iter().chain(&ds).chain(&dy).any(|v| !v.is_finite()) {
            message = "no progress in the Newton direction".into();
            break;
        }
        for i in 0..n {
            x[i] += alpha * dx[i];
            s[i] += alpha * ds[i];
        }
        for i in 0..m {
            y[i] += alpha * dy[i];
        }
        tau += alpha * dt;
        kappa += alpha * dk;
    }

    let (xs, ys, ss) = match status {
        SolveStatus::Optimal | SolveStatus::MaxIter => (
            x.iter().map(|v| v / tau).collect::<Vec<_>>(),
            y.iter().map(|v| v / tau).collect::<Vec<_>>(),
            s.iter().map(|v| v / tau).collect::<Vec<_>>(),
        ),
        _ => (x.clone(), y.clone(), s.clone()),
    };
    let (pres, dres, gap) = residuals(prog, &xs, &ys, &ss);
    Ok(SolveResult {
        status,
        primal_obj: dot(&prog.c, &xs),
        dual_obj: dot(&prog.b, &ys),
        x: xs,
        y: ys,
        s: ss,
        primal_res: pres,
        dual_res: dres,
        rel_gap: gap,
        iterations: iters,
        message,
    })
}

fn residuals(prog: &ConicProgram, x: &[f64], y: &[f64], s: &[f64]) -> (f64, f64, f64) {
    let ax = mat_vec(&prog.a, x);
    let aty = mat_t_vec(&prog.a, y);
    let pr: Vec<f64> = ax.iter().zip(&prog.b).map(|(p, q)| p - q).collect();
    let dr: Vec<f64> = (0..prog.n()).map(|i| aty[i] + s[i] - prog.c[i]).collect();
    let pobj = dot(&prog.c, x);
    let dobj = dot(&prog.b, y);
    (
        norm(&pr) / (1.0 + norm(&prog.b)),
        norm(&dr) / (1.0 + norm(&prog.c)),
        (pobj - dobj).abs() / (1.0 + pobj.abs().min(dobj.abs())),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
    /// Smallest eigenvalue (or entry) of `x` over all blocks.
    pub min_x: f64,
    /// Smallest eigenvalue (or entry) of `c - A'y`.
    pub min_s: f64,
    pub pass: bool,
}

fn cone_min(layout: &Layout, v: &[f64]) -> f64 {
    let mut out = f64::INFINITY;
    for (c, r) in layout.blocks() {
        match c {
            Cone::Nonneg(_) => out = v[r].iter().copied().fold(out, f64::min),
            Cone::Psd(s) => {
                let ev = SymmetricEigen::new(smat(&v[r], s)).eigenvalues;
                out = ev.iter().copied().fold(out, f64::min);
            }
        }
    }
    out
}

/// Recomputes residuals, cone membership and the gap independently of
/// the solver's own bookkeeping. The dual slack is rebuilt as `c - A'y`.
pub fn verify(prog: &ConicProgram, res: &SolveResult, tol: f64) -> VerifyReport {
    let layout = Layout::new(&prog.cones);
    let aty = mat_t_vec(&prog.a, &res.y);
    let s: Vec<f64> = (0..prog.n()).map(|i| prog.c[i] - aty[i]).collect();
    let (pres, dres, gap) = residuals(prog, &res.x, &res.y, &s);
    let xscale = 1.0 + norm(&res.x);
    let sscale = 1.0 + norm(&prog.c);
    let min_x = cone_min(&layout, &res.x);
    let min_s = cone_min(&layout, &s);
    let pass = res.status == SolveStatus::Optimal
        && pres <= tol
        && gap <= tol
        && min_x >= -tol * xscale
        && min_s >= -tol * sscale;
    VerifyReport { primal_res: pres, dual_res: dres, rel_gap: gap, min_x, min_s, pass }
}
