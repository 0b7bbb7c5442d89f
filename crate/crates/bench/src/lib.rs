//! Shared fixtures for the benchmarks.

use insdual::model::{space_bounds, ClaimLaw, RetentionFamily, RiskModel, SpaceBounds};

/// Exponential claims, proportional reinsurance, premium `0.1 + 1.5 y`.
pub fn fixture() -> (RiskModel, SpaceBounds) {
    let model = RiskModel::new(
        ClaimLaw::exponential(1.0).expect("rate"),
        vec![(0, 0, 0.1), (1, 0, 1.5)],
        1.0,
        0.1,
        1.5,
        None,
        RetentionFamily::Proportional { a0: 0.0 },
    )
    .expect("model");
    let bounds = space_bounds(&model, 5.0, 20.0, 0.5).expect("bounds");
    (model, bounds)
}
