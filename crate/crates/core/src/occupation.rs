//! Empirical occupation measures of simulated paths.
//!
//! Every path contributes a stopping atom `gamma_0 = delta(sigma, X_sigma)`,
//! a discounted occupation density `gamma_1` built from Gauss-Legendre
//! points of each RK4 step, and the discounted dividend (`gamma_2`) and
//! injection (`gamma_3`) measures. Each atom also carries the `(s1, y1)`
//! coordinates of its path's stopping point. Lumps are spread over the
//! reserve interval they sweep. Weights are averaged over paths.
//!
//! In binned mode all coordinates are snapped to grid nodes and equal atoms
//! are merged; the exact mode keeps raw coordinates.

use crate::error::{Error, Result};
use crate::generator::{GeneratorOp, PolyValueFn};
use crate::model::{RetentionPolicy, RiskModel, SpaceBounds};
use crate::poly::gauss_legendre_unit;
use crate::sim::{path_rng, EventKind, LumpKind, PathContext, PathOutcome, PathSink, SimOptions, StrategySpec, TrajectoryRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    S1,
    Y1,
    S2,
    Y2,
    U,
    L,
    I,
}

impl Label {
    pub fn name(&self) -> &'static str {
        match self {
            Label::S1 => "s1",
            Label::Y1 => "y1",
            Label::S2 => "s2",
            Label::Y2 => "y2",
            Label::U => "u",
            Label::L => "l",
            Label::I => "i",
        }
    }
}

/// Finite weighted atoms with labelled coordinates, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "AtomJson", try_from = "AtomJson")]
pub struct AtomMeasure {
    pub name: String,
    pub labels: Vec<Label>,
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    name: String,
    labels: Vec<Label>,
    atoms: Vec<(Vec<f64>, f64)>,
}

impl From<AtomMeasure> for AtomJson {
    fn from(m: AtomMeasure) -> Self {
        let atoms = m.iter().map(|(c, w)| (c.to_vec(), w)).collect();
        AtomJson { name: m.name, labels: m.labels, atoms }
    }
}

impl TryFrom<AtomJson> for AtomMeasure {
    type Error = String;
    fn try_from(j: AtomJson) -> std::result::Result<Self, String> {
        let mut m = AtomMeasure::new(&j.name, j.labels);
        for (c, w) in j.atoms {
            if c.len() != m.dim() {
                return Err(format!("atom of dimension {} in a measure of dimension {}", c.len(), m.dim()));
            }
            m.push(&c, w);
        }
        Ok(m)
    }
}

impl AtomMeasure {
    pub fn new(name: &str, labels: Vec<Label>) -> Self {
        Self { name: name.to_string(), labels, coords: Vec::new(), weights: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn push(&mut self, c: &[f64], w: f64) {
        debug_assert_eq!(c.len(), self.dim());
        self.coords.extend_from_slice(c);
        self.weights.push(w);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        let d = self.dim().max(1);
        self.coords.chunks(d).zip(self.weights.iter().copied())
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn column(&self, l: Label) -> Option<usize> {
        self.labels.iter().position(|x| *x == l)
    }

    /// `int f(coords) d mu`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(c, w)| w * f(c)).sum()
    }

    /// Range of one coordinate over the atoms.
    pub fn hull(&self, l: Label) -> Option<(f64, f64)> {
        let c = self.column(l)?;
        self.iter().fold(None, |acc, (p, _)| {
            let v = p[c];
            Some(match acc {
                None => (v, v),
                Some((a, b)) => (f64::min(a, v), f64::max(b, v)),
            })
        })
    }

    /// Sorts atoms by coordinates and sums the weights of equal ones.
    pub fn merge_equal(&mut self) {
        let d = self.dim();
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let coords = &self.coords;
        idx.sort_by(|&a, &b| cmp_coords(&coords[a * d..(a + 1) * d], &coords[b * d..(b + 1) * d]));
        let mut out_c = Vec::with_capacity(self.coords.len());
        let mut out_w: Vec<f64> = Vec::with_capacity(n);
        for &i in &idx {
            let c = &self.coords[i * d..(i + 1) * d];
            let same = out_w.len() > 0 && cmp_coords(&out_c[out_c.len() - d..], c) == Ordering::Equal;
            if same {
                *out_w.last_mut().unwrap() += self.weights[i];
            } else {
                out_c.extend_from_slice(c);
                out_w.push(self.weights[i]);
            }
        }
        self.coords = out_c;
        self.weights = out_w;
    }

    fn scale_weights(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
    }

    fn append(&mut self, other: &AtomMeasure) {
        self.coords.extend_from_slice(&other.coords);
        self.weights.extend_from_slice(&other.weights);
    }
}

fn cmp_coords(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Node grid used in binned mode.
///
/// Time nodes are uniform on `[0, horizon]`. Reserve nodes are uniform in
/// `asinh(y / scale)` on each side of 0, so that 0 is a node and the grid
/// stays fine where paths spend their time even when `xmax` is huge. Lump
/// sizes use the positive half of the same construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccGrid {
    pub n_time: usize,
    pub n_space: usize,
    pub horizon: f64,
    pub xmin: f64,
    pub xmax: f64,
    pub lmax: f64,
    pub imax: f64,
    pub scale: f64,
}

impl OccGrid {
    pub fn new(n_time: usize, n_space: usize, horizon: f64, bounds: &SpaceBounds) -> Result<Self> {
        if n_time < 2 || n_space < 4 {
            return Err(Error::Input("occupation grid needs n_time >= 2 and n_space >= 4".into()));
        }
        Ok(Self {
            n_time,
            n_space,
            horizon,
            xmin: bounds.xmin,
            xmax: bounds.xmax,
            lmax: bounds.lmax,
            imax: bounds.imax,
            scale: (-bounds.xmin).max(1.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_time - 1) as f64
    }

    pub fn snap_t(&self, t: f64) -> f64 {
        if self.horizon <= 0.0 {
            return 0.0;
        }
        let k = (t / self.dt()).round().clamp(0.0, (self.n_time - 1) as f64);
        (k * self.dt()).min(self.horizon)
    }

    fn halves(&self) -> (usize, usize, f64, f64) {
        let zneg = (self.xmin / self.scale).asinh();
        let zpos = (self.xmax / self.scale).asinh();
        let span = zpos - zneg;
        let n_neg = ((self.n_space as f64 * -zneg / span).round() as usize).max(2);
        let n_pos = (self.n_space + 1).saturating_sub(n_neg).max(2);
        (n_neg, n_pos, zneg, zpos)
    }

    fn snap_half(&self, y: f64, vend: f64, n: usize) -> f64 {
        if vend == 0.0 {
            return 0.0;
        }
        let zend = (vend / self.scale).asinh();
        let z = (y / self.scale).asinh();
        let m = (n - 1) as f64;
        let k = (z / zend * m).round().clamp(0.0, m);
        if k == m {
            vend
        } else {
            self.scale * (zend * k / m).sinh()
        }
    }

    /// Nearest reserve node; values outside the box are clamped.
    pub fn snap_y(&self, y: f64) -> f64 {
        let y = y.clamp(self.xmin, self.xmax);
        let (n_neg, n_pos, _, _) = self.halves();
        if y < 0.0 {
            self.snap_half(y, self.xmin, n_neg)
        } else {
            self.snap_half(y, self.xmax, n_pos)
        }
    }

    fn snap_size(&self, v: f64, vmax: f64) -> f64 {
        let v = v.clamp(0.0, vmax);
        self.snap_half(v, vmax, self.n_space)
    }

    pub fn snap_l(&self, l: f64) -> f64 {
        self.snap_size(l, self.lmax)
    }

    pub fn snap_i(&self, i: f64) -> f64 {
        self.snap_size(i, self.imax)
    }

    /// Local node spacing of the reserve grid at `y`.
    pub fn dy_at(&self, y: f64) -> f64 {
        let (n_neg, n_pos, zneg, zpos) = self.halves();
        let dz = if y < 0.0 { -zneg / (n_neg - 1) as f64 } else { zpos / (n_pos - 1) as f64 };
        self.scale * (y / self.scale).asinh().cosh() * dz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OccupationMode {
    Binned { n_time: usize, n_space: usize },
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationOptions {
    pub mode: OccupationMode,
    /// Gauss-Legendre points per RK4 step for `gamma_1`.
    pub drift_nodes: usize,
}

impl Default for OccupationOptions {
    fn default() -> Self {
        Self { mode: OccupationMode::Binned { n_time: 64, n_space: 128 }, drift_nodes: 4 }
    }
}

impl OccupationOptions {
    pub fn exact() -> Self {
        Self { mode: OccupationMode::Exact, drift_nodes: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSystem {
    pub x0: f64,
    pub horizon: f64,
    pub strategy: StrategySpec,
    pub gamma0: AtomMeasure,
    pub gamma1: AtomMeasure,
    pub gamma2: AtomMeasure,
    pub gamma3: AtomMeasure,
    pub grid: Option<OccGrid>,
    pub n_paths: usize,
    pub seed: u64,
    /// RK4 step of the underlying simulation.
    pub step: f64,
}

fn labels0() -> Vec<Label> {
    vec![Label::S1, Label::Y1]
}
fn labels1() -> Vec<Label> {
    vec![Label::S1, Label::Y1, Label::S2, Label::Y2, Label::U]
}
fn labels2() -> Vec<Label> {
    vec![Label::S1, Label::Y1, Label::S2, Label::Y2, Label::U, Label::L]
}
fn labels3() -> Vec<Label> {
    vec![Label::S1, Label::Y1, Label::S2, Label::Y2, Label::U, Label::I]
}

impl OccupationSystem {
    pub fn retention(&self) -> RetentionPolicy {
        self.strategy.retention
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Input(format!("occupation serialization failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Input(format!("malformed occupation JSON: {e}")))
    }
}

/// Per-path accumulator; `(s1, y1)` are filled in at `stop`.
struct PathAcc<'a> {
    q: f64,
    u: f64,
    premium: &'a crate::poly::UniPoly,
    grid: Option<&'a OccGrid>,
    gl: &'a [(f64, f64)],
    g1: Vec<[f64; 3]>,
    g2: Vec<[f64; 4]>,
    g3: Vec<[f64; 4]>,
    stop: (f64, f64),
}

/// Gauss-Legendre sub-atoms used for a lump of size `size`.
fn lump_nodes(size: f64, dy: f64) -> usize {
    if dy > 0.0 {
        ((size / dy).ceil() as usize).clamp(8, 64)
    } else {
        8
    }
}

impl<'a> PathAcc<'a> {
    fn disc_int(&self, a: f64, b: f64) -> f64 {
        if self.q * (b - a) < 1e-8 {
            (-self.q * a).exp() * (b - a) * (1.0 - 0.5 * self.q * (b - a))
        } else {
            ((-self.q * a).exp() - (-self.q * b).exp()) / self.q
        }
    }
}

impl PathSink for PathAcc<'_> {
    fn drift(&mut self, t0: f64, x0: f64, t1: f64, x1: f64) {
        let h = t1 - t0;
        if h <= 0.0 {
            return;
        }
        // cubic Hermite interpolant with the ODE slopes at both ends
        let f0 = self.premium.eval(x0);
        let f1 = self.premium.eval(x1);
        for &(tau, w) in self.gl {
            let t2 = tau * tau;
            let t3 = t2 * tau;
            let x = (2.0 * t3 - 3.0 * t2 + 1.0) * x0
                + (t3 - 2.0 * t2 + tau) * h * f0
                + (-2.0 * t3 + 3.0 * t2) * x1
                + (t3 - t2) * h * f1;
            let s = t0 + tau * h;
            self.g1.push([s, x, h * w * (-self.q * s).exp()]);
        }
    }

    fn barrier(&mut self, t0: f64, t1: f64, level: f64, rate: f64) {
        if t1 <= t0 {
            return;
        }
        let chunk = match self.grid {
            Some(g) if g.horizon > 0.0 => g.dt(),
            _ => (t1 - t0).max(1e-300),
        };
        let n = (((t1 - t0) / chunk).ceil() as usize).max(1);
        let len = (t1 - t0) / n as f64;
        for i in 0..n {
            let a = t0 + i as f64 * len;
            let b = if i + 1 == n { t1 } else { a + len };
            if self.grid.is_none() {
                // exact mode keeps the time profile: Gauss points on the chunk
                for &(tau, w) in self.gl {
                    let s = a + tau * (b - a);
                    let wt = (b - a) * w * (-self.q * s).exp();
                    self.g1.push([s, level, wt]);
                    self.g2.push([s, level, 0.0, rate * wt]);
                }
            } else {
                let m = self.disc_int(a, b);
                let s = 0.5 * (a + b);
                self.g1.push([s, level, m]);
                self.g2.push([s, level, 0.0, rate * m]);
            }
        }
    }

    fn lump(&mut self, t: f64, kind: LumpKind, from: f64, size: f64) {
        if size <= 0.0 {
            return;
        }
        let disc = (-self.q * t).exp();
        let dy = self.grid.map(|g| g.dy_at(from)).unwrap_or(0.0);
        let nodes = gauss_legendre_unit(lump_nodes(size, dy));
        for (z, w) in nodes {
            let wt = disc * size * w;
            match kind {
                LumpKind::Dividend => self.g2.push([t, from - z * size, size, wt]),
                LumpKind::Injection => self.g3.push([t, from + z * size, size, wt]),
            }
        }
    }

    fn stop(&mut self, t: f64, x: f64, _ruined: bool) {
        self.stop = (t, x);
    }
}

/// Atoms of one path (binned mode already merged within the path).
struct PathAtoms {
    g0: AtomMeasure,
    g1: AtomMeasure,
    g2: AtomMeasure,
    g3: AtomMeasure,
}

impl PathAtoms {
    fn empty() -> Self {
        Self {
            g0: AtomMeasure::new("gamma0", labels0()),
            g1: AtomMeasure::new("gamma1", labels1()),
            g2: AtomMeasure::new("gamma2", labels2()),
            g3: AtomMeasure::new("gamma3", labels3()),
        }
    }

    fn append(&mut self, o: &PathAtoms) {
        self.g0.append(&o.g0);
        self.g1.append(&o.g1);
        self.g2.append(&o.g2);
        self.g3.append(&o.g3);
    }

    fn merge(&mut self) {
        self.g0.merge_equal();
        self.g1.merge_equal();
        self.g2.merge_equal();
        self.g3.merge_equal();
    }
}

fn finish_path(acc: PathAcc<'_>) -> PathAtoms {
    let g = acc.grid;
    let st = |s: f64| g.map_or(s, |g| g.snap_t(s));
    let sy = |y: f64| g.map_or(y, |g| g.snap_y(y));
    let (s1, y1) = (st(acc.stop.0), sy(acc.stop.1));
    let u = acc.u;
    let mut out = PathAtoms::empty();
    out.g0.push(&[s1, y1], 1.0);
    for [s, y, w] in acc.g1 {
        out.g1.push(&[s1, y1, st(s), sy(y), u], w);
    }
    for [s, y, l, w] in acc.g2 {
        let l = g.map_or(l, |g| g.snap_l(l));
        out.g2.push(&[s1, y1, st(s), sy(y), u, l], w);
    }
    for [s, y, i, w] in acc.g3 {
        let i = g.map_or(i, |g| g.snap_i(i));
        out.g3.push(&[s1, y1, st(s), sy(y), u, i], w);
    }
    if g.is_some() {
        out.merge();
    }
    out
}

const CHUNK: usize = 64;

/// Result of a streaming build: the system and the per-path outcomes.
pub struct OccupationBuild {
    pub system: OccupationSystem,
    pub outcomes: Vec<PathOutcome>,
}

/// Simulates `n_paths` streams of `seed` on `[0, horizon]` and builds the
/// occupation system without keeping the trajectories.
#[allow(clippy::too_many_arguments)]
pub fn build_occupation(
    model: &RiskModel,
    strategy: &StrategySpec,
    x0: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    bounds: &SpaceBounds,
    opts: &OccupationOptions,
    sim: &SimOptions,
) -> Result<OccupationBuild> {
    if n_paths == 0 {
        return Err(Error::Input("occupation build needs at least one path".into()));
    }
    strategy.validate(x0)?;
    let grid = match opts.mode {
        OccupationMode::Binned { n_time, n_space } => Some(OccGrid::new(n_time, n_space, horizon, bounds)?),
        OccupationMode::Exact => None,
    };
    let ctx = PathContext::new(model, *strategy, horizon, sim);
    let gl = gauss_legendre_unit(opts.drift_nodes.max(1));
    let starts: Vec<usize> = (0..n_paths).step_by(CHUNK).collect();
    let chunks: Vec<(PathAtoms, Vec<PathOutcome>)> = starts
        .par_iter()
        .map(|&start| {
            let mut atoms = PathAtoms::empty();
            let mut outs = Vec::with_capacity(CHUNK);
            for i in start..(start + CHUNK).min(n_paths) {
                let mut rng = path_rng(seed, i as u64);
                let mut acc = new_acc(model.q, strategy, &ctx.premium, grid.as_ref(), &gl);
                let o = ctx.run(x0, &mut rng, &mut acc)?;
                atoms.append(&finish_path(acc));
                outs.push(o);
            }
            if grid.is_some() {
                atoms.merge();
            }
            Ok((atoms, outs))
        })
        .collect::<Result<_>>()?;
    let mut total = PathAtoms::empty();
    let mut outcomes = Vec::with_capacity(n_paths);
    for (a, o) in chunks {
        total.append(&a);
        outcomes.extend(o);
    }
    let system = assemble(total, grid, x0, horizon, strategy, n_paths, seed, ctx.h);
    Ok(OccupationBuild { system, outcomes })
}

fn new_acc<'a>(
    q: f64,
    strategy: &StrategySpec,
    premium: &'a crate::poly::UniPoly,
    grid: Option<&'a OccGrid>,
    gl: &'a [(f64, f64)],
) -> PathAcc<'a> {
    PathAcc {
        q,
        u: strategy.retention.param(),
        premium,
        grid,
        gl,
        g1: Vec::new(),
        g2: Vec::new(),
        g3: Vec::new(),
        stop: (0.0, 0.0),
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    mut total: PathAtoms,
    grid: Option<OccGrid>,
    x0: f64,
    horizon: f64,
    strategy: &StrategySpec,
    n_paths: usize,
    seed: u64,
    step: f64,
) -> OccupationSystem {
    if grid.is_some() {
        total.merge();
    }
    let s = 1.0 / n_paths as f64;
    total.g0.scale_weights(s);
    total.g1.scale_weights(s);
    total.g2.scale_weights(s);
    total.g3.scale_weights(s);
    OccupationSystem {
        x0,
        horizon,
        strategy: *strategy,
        gamma0: total.g0,
        gamma1: total.g1,
        gamma2: total.g2,
        gamma3: total.g3,
        grid,
        n_paths,
        seed,
        step,
    }
}

/// Builds the occupation system from stored trajectories of one strategy.
pub fn occupation_from_records(
    model: &RiskModel,
    records: &[TrajectoryRecord],
    bounds: &SpaceBounds,
    opts: &OccupationOptions,
    seed: u64,
) -> Result<OccupationSystem> {
    let first = records.first().ok_or_else(|| Error::Input("no trajectories given".into()))?;
    let strategy = first.strategy;
    let (x0, horizon) = (first.x0, first.horizon);
    if records.iter().any(|r| r.strategy != strategy || r.x0 != x0 || r.horizon != horizon) {
        return Err(Error::Input("trajectories must share strategy, x0 and horizon".into()));
    }
    let grid = match opts.mode {
        OccupationMode::Binned { n_time, n_space } => Some(OccGrid::new(n_time, n_space, horizon, bounds)?),
        OccupationMode::Exact => None,
    };
    let premium = crate::model::premium_poly(model, &strategy.retention);
    let gl = gauss_legendre_unit(opts.drift_nodes.max(1));
    let mut total = PathAtoms::empty();
    for rec in records {
        let mut acc = new_acc(model.q, &strategy, &premium, grid.as_ref(), &gl);
        for seg in &rec.segments {
            if seg.at_barrier {
                let len = seg.t_end - seg.t_start;
                let rate = if len > 0.0 { seg.dividends / len } else { 0.0 };
                acc.barrier(seg.t_start, seg.t_end, seg.reserves[0], rate);
            } else {
                for k in 1..seg.times.len() {
                    acc.drift(seg.times[k - 1], seg.reserves[k - 1], seg.times[k], seg.reserves[k]);
                }
            }
        }
        for ev in &rec.events {
            match ev.kind {
                EventKind::DividendLump => acc.lump(ev.time, LumpKind::Dividend, ev.reserve_before, ev.size),
                EventKind::InjectionLump => acc.lump(ev.time, LumpKind::Injection, ev.reserve_before, ev.size),
                _ => {}
            }
        }
        acc.stop(rec.stop_time, rec.terminal_reserve, rec.ruin_time.is_some());
        total.append(&finish_path(acc));
    }
    let h = SimOptions::default().step_for(model);
    Ok(assemble(total, grid, x0, horizon, &strategy, records.len(), seed, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointResidual {
    /// `int e^{-q s1} phi(y1) d gamma_0`.
    pub lhs: f64,
    /// `phi(x0) + int L^u phi d gamma_1 + int phi' d gamma_3 - int phi' d gamma_2`.
    pub rhs: f64,
    pub residual: f64,
    /// `C_phi`, the constant of the residual bound.
    pub constant: f64,
    /// `C_phi (n^{-1/2} + h + dy)`, the reference scale of the residual.
    pub bound: f64,
}

/// Residual of the adjoint identity for a polynomial test function.
pub fn adjoint_identity_residual(occ: &OccupationSystem, model: &RiskModel, phi: &PolyValueFn) -> Result<AdjointResidual> {
    let q = model.q;
    let op = GeneratorOp::new(model, &occ.strategy.retention, phi.map, phi.degree());
    let c0 = (occ.gamma0.column(Label::S1).unwrap(), occ.gamma0.column(Label::Y1).unwrap());
    let lhs = occ.gamma0.integrate(|p| (-q * p[c0.0]).exp() * phi.eval(p[c0.1]));
    let y2 = 3;
    let lphi = op.apply_poly(phi);
    let gen = occ.gamma1.integrate(|p| lphi.eval(phi.map.to_unit(p[y2])));
    let inj = occ.gamma3.integrate(|p| phi.deriv(p[y2]));
    let div = occ.gamma2.integrate(|p| phi.deriv(p[y2]));
    let rhs = phi.eval(occ.x0) + gen + inj - div;
    if !(lhs.is_finite() && rhs.is_finite()) {
        return Err(Error::Moments("non-finite adjoint identity terms".into()));
    }
    let (lo, hi) = hull_of(occ);
    let span = hi - lo;
    let (mut s0, mut s1, mut sl) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=256 {
        let y = lo + span * i as f64 / 256.0;
        let (v, d) = phi.eval_with_derivative(y);
        s0 = s0.max(v.abs());
        s1 = s1.max(d.abs());
        sl = sl.max(op.apply(phi, y).abs());
    }
    let constant = 3.0 * s0.max(span * s1).max(sl / q);
    let dy = occ.grid.map_or(0.0, |g| g.dy_at(hi.abs().max(lo.abs())));
    let bound = constant * (1.0 / (occ.n_paths as f64).sqrt() + occ.step + dy);
    Ok(AdjointResidual { lhs, rhs, residual: (lhs - rhs).abs(), constant, bound })
}

fn hull_of(occ: &OccupationSystem) -> (f64, f64) {
    let mut lo = occ.x0;
    let mut hi = occ.x0;
    let mut take = |h: Option<(f64, f64)>| {
        if let Some((a, b)) = h {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    };
    take(occ.gamma0.hull(Label::Y1));
    take(occ.gamma1.hull(Label::Y2));
    take(occ.gamma2.hull(Label::Y2));
    take(occ.gamma3.hull(Label::Y2));
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    /// Largest `|gamma_1(s1, y1, ...) - (1 - e^{-q s1}) / q gamma_0(s1, y1)|`.
    pub max_abs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks that the `(s1, y1)`-marginal of `gamma_1` equals
/// `(1 - e^{-q s1}) / q` times `gamma_0`.
pub fn marginal_identity_check(occ: &OccupationSystem, q: f64) -> MarginalCheck {
    let mut m1 = AtomMeasure::new("m1", labels0());
    for (p, w) in occ.gamma1.iter() {
        m1.push(&p[..2], w);
    }
    m1.merge_equal();
    let mut g0 = occ.gamma0.clone();
    g0.merge_equal();
    let mut max_abs = 0.0f64;
    let mut slack = 0.0f64;
    let dt = occ.grid.map_or(0.0, |g| 0.5 * g.dt());
    let mut j = 0;
    for (p, w0) in g0.iter() {
        let expect = (1.0 - (-q * p[0]).exp()) / q * w0;
        let mut got = 0.0;
        while j < m1.len() && cmp_coords(&m1.coords[2 * j..2 * j + 2], p) == Ordering::Less {
            max_abs = max_abs.max(m1.weights[j]);
            j += 1;
        }
        if j < m1.len() && cmp_coords(&m1.coords[2 * j..2 * j + 2], p) == Ordering::Equal {
            got = m1.weights[j];
            j += 1;
        }
        max_abs = max_abs.max((got - expect).abs());
        slack = slack.max(dt * w0);
    }
    while j < m1.len() {
        max_abs = max_abs.max(m1.weights[j]);
        j += 1;
    }
    let tolerance = 1e-9 + slack;
    MarginalCheck { max_abs, tolerance, pass: max_abs <= tolerance }
}

/// Occupation system for a negative start `x0`, built from a system
/// started at 0. Above `-v0/k` a time-0 injection of `-x0` is prepended;
/// below it the process is bankrupt at once.
pub fn extend_negative(x0: f64, model: &RiskModel, base: &OccupationSystem, v0: f64) -> Result<OccupationSystem> {
    if !(x0 < 0.0) {
        return Err(Error::Input(format!("extend_negative needs x0 < 0, got {x0}")));
    }
    if !(v0 > 0.0) {
        return Err(Error::Input(format!("value at 0 must be positive, got {v0}")));
    }
    if base.x0 != 0.0 {
        return Err(Error::Input("base system must start at 0".into()));
    }
    if x0 < -v0 / model.k {
        let mut g0 = AtomMeasure::new("gamma0", labels0());
        g0.push(&[0.0, x0], 1.0);
        return Ok(OccupationSystem {
            x0,
            horizon: base.horizon,
            strategy: base.strategy,
            gamma0: g0,
            gamma1: AtomMeasure::new("gamma1", labels1()),
            gamma2: AtomMeasure::new("gamma2", labels2()),
            gamma3: AtomMeasure::new("gamma3", labels3()),
            grid: base.grid,
            n_paths: base.n_paths,
            seed: base.seed,
            step: base.step,
        });
    }
    let mut out = base.clone();
    out.x0 = x0;
    let size = -x0;
    let u = base.strategy.retention.param();
    let nodes = gauss_legendre_unit(16);
    let i = base.grid.map_or(size, |g| g.snap_i(size));
    for (p, w0) in base.gamma0.iter() {
        for &(z, w) in &nodes {
            let y = x0 + z * size;
            let y = base.grid.map_or(y, |g| g.snap_y(y));
            out.gamma3.push(&[p[0], p[1], 0.0, y, u, i], w0 * size * w);
        }
    }
    if base.grid.is_some() {
        out.gamma3.merge_equal();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// `gamma_1` mass is at most `1/q`.
    pub gamma1_ok: bool,
    pub gamma0_ok: bool,
}

pub fn mass_report(occ: &OccupationSystem, q: f64) -> MassReport {
    let (m0, m1) = (occ.gamma0.mass(), occ.gamma1.mass());
    MassReport {
        gamma0: m0,
        gamma1: m1,
        gamma2: occ.gamma2.mass(),
        gamma3: occ.gamma3.mass(),
        gamma0_ok: (m0 - 1.0).abs() < 1e-9,
        gamma1_ok: m1 <= 1.0 / q + 1e-9,
    }
}
