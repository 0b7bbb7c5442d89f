#![allow(dead_code)]

use insdual::model::{space_bounds, ClaimLaw, Penalty, RetentionFamily, RiskModel, SpaceBounds};
use std::io::Write;

pub fn exp_model(coefs: Vec<(u32, u32, f64)>, lambda: f64, q: f64, k: f64, family: RetentionFamily) -> RiskModel {
    RiskModel::new(ClaimLaw::exponential(1.0).unwrap(), coefs, lambda, q, k, None, family).unwrap()
}

/// Exponential claims, proportional reinsurance, premium `0.1 + 1.5 y`.
pub fn proportional() -> RiskModel {
    exp_model(vec![(0, 0, 0.1), (1, 0, 1.5)], 1.0, 0.1, 1.5, RetentionFamily::Proportional { a0: 0.0 })
}

/// `lambda = 1e-9`, constant premium `p0`, full retention.
pub fn deterministic(p0: f64, q: f64) -> RiskModel {
    exp_model(vec![(0, 0, p0)], 1e-9, q, 1.5, RetentionFamily::Full)
}

pub fn penalized() -> RiskModel {
    RiskModel::new(
        ClaimLaw::empirical(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap(),
        vec![(0, 0, 0.5), (1, 0, 1.2)],
        1.0,
        0.1,
        1.5,
        Some(Penalty { a: 0.2, b: 0.1 }),
        RetentionFamily::ExcessOfLoss,
    )
    .unwrap()
}

pub fn bounds(m: &RiskModel) -> SpaceBounds {
    space_bounds(m, 5.0, 20.0, 0.5).unwrap()
}

/// The model matrix of the sandwich test.
pub fn model_matrix() -> Vec<(&'static str, RiskModel)> {
    let prop = |a0| RetentionFamily::Proportional { a0 };
    let pen = |a, b| Some(Penalty { a, b });
    let emp = || ClaimLaw::empirical(vec![(0.5, 0.3), (1.0, 0.4), (3.0, 0.3)]).unwrap();
    let mk = |claims: ClaimLaw, c: Vec<(u32, u32, f64)>, lambda, q, k, p, f| RiskModel::new(claims, c, lambda, q, k, p, f).unwrap();
    let e = |r| ClaimLaw::exponential(r).unwrap();
    vec![
        ("exp-prop", mk(e(1.0), vec![(0, 0, 0.1), (1, 0, 1.5)], 1.0, 0.1, 1.5, None, prop(0.0))),
        ("exp-prop-a0", mk(e(1.0), vec![(0, 0, 0.1), (1, 0, 1.5)], 1.0, 0.1, 1.5, None, prop(0.5))),
        ("exp-full", mk(e(2.0), vec![(0, 0, 0.8)], 1.0, 0.2, 2.0, None, RetentionFamily::Full)),
        ("exp-xl", mk(e(1.0), vec![(0, 0, 0.3), (1, 0, 1.3)], 1.0, 0.1, 1.5, None, RetentionFamily::ExcessOfLoss)),
        ("exp-prop-k12", mk(e(1.0), vec![(0, 0, 0.2), (1, 0, 1.4)], 1.0, 0.1, 1.2, None, prop(0.0))),
        ("exp-prop-rate2", mk(e(2.0), vec![(0, 0, 0.2), (1, 0, 2.0)], 2.0, 0.15, 1.5, None, prop(0.0))),
        ("exp-reserve-premium", mk(e(1.0), vec![(0, 0, 0.5), (1, 0, 1.0), (0, 1, 0.02)], 1.0, 0.1, 1.5, None, prop(0.0))),
        ("exp-prop-penalty", mk(e(1.0), vec![(0, 0, 0.1), (1, 0, 1.5)], 1.0, 0.1, 1.5, pen(0.5, 0.2), prop(0.0))),
        ("emp-full", mk(emp(), vec![(0, 0, 1.5)], 1.0, 0.1, 1.5, None, RetentionFamily::Full)),
        ("emp-xl-penalty", mk(emp(), vec![(0, 0, 0.5), (1, 0, 1.2)], 1.0, 0.1, 1.5, pen(0.2, 0.1), RetentionFamily::ExcessOfLoss)),
        ("emp-prop", mk(emp(), vec![(0, 0, 0.3), (1, 0, 1.3)], 0.5, 0.08, 1.8, None, prop(0.2))),
        ("exp-slow-claims", mk(e(0.5), vec![(0, 0, 0.2), (1, 0, 0.5)], 0.3, 0.05, 1.5, None, prop(0.0))),
    ]
}

/// Writes straight to the process stderr so the line shows up even when
/// the test harness captures output.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("acceptance criterion {criterion:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}
