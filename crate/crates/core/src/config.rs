//! Run configuration read from TOML.
//!
//! ```toml
//! seed = 7
//! output = "runs/demo"
//! lambda = 1.0
//! q = 0.1
//! k = 1.5
//! x0 = 2.0
//!
//! [claims]
//! kind = "exponential"
//! rate = 1.0
//!
//! [premium]
//! coefficients = [[0, 0, 0.1], [1, 0, 1.5]]
//!
//! [retention]
//! family = "proportional"
//! a0 = 0.0
//!
//! [bounds]
//! xbar = 5.0
//! T = 20.0
//! eps = 0.5
//!
//! [ddp]
//! r = 3
//! ```
//!
//! Premium coefficients are `[a, b, C_ab]` for the term `C_ab y^a x^b`.
//! `[penalty]` and every key of `[ddp]` are optional.

use crate::ddp::{BackwardMethod, DdpConfig};
use crate::error::{Error, Result};
use crate::generator::CheckOptions;
use crate::model::{space_bounds, ClaimLaw, Penalty, RetentionFamily, RiskModel, SpaceBounds};
use crate::occupation::{OccupationMode, OccupationOptions};
use crate::sim::SimOptions;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: String,
    pub lambda: f64,
    pub q: f64,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    pub claims: ClaimsSection,
    pub premium: PremiumSection,
    pub retention: RetentionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltySection>,
    pub bounds: BoundsSection,
    #[serde(default)]
    pub ddp: DdpSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimsSection {
    Exponential { rate: f64 },
    /// `[[value, weight], ...]`
    Empirical { atoms: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PremiumSection {
    pub coefficients: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetentionSection {
    Proportional {
        #[serde(default)]
        a0: f64,
    },
    ExcessOfLoss,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub xbar: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpSection {
    pub r: usize,
    pub eps: f64,
    pub t1: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_paths: usize,
    pub n_paths_lb: usize,
    pub grid_theta: usize,
    pub grid_inj: usize,
    pub grid_div: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_max: Option<f64>,
    pub backward: BackwardMethod,
    pub lp_points: usize,
    pub lp_retentions: usize,
    pub refine_rounds: usize,
    pub check_points: usize,
    pub check_retentions: usize,
    pub psd_tol: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Time bins of the binned occupation measures; 0 keeps exact atoms.
    pub occ_time_bins: usize,
    pub occ_space_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Stage horizons of a nested run; empty runs a single stage of `t1`.
    pub ladder: Vec<f64>,
}

impl Default for DdpSection {
    fn default() -> Self {
        DdpSection::from_config(&DdpConfig::default(), Vec::new())
    }
}

impl DdpSection {
    pub fn from_config(c: &DdpConfig, ladder: Vec<f64>) -> Self {
        let (occ_time_bins, occ_space_bins) = match c.occupation.mode {
            OccupationMode::Binned { n_time, n_space } => (n_time, n_space),
            OccupationMode::Exact => (0, 0),
        };
        Self {
            r: c.r,
            eps: c.eps,
            t1: c.t1,
            max_iter: c.max_iter,
            tol: c.tol,
            n_paths: c.n_paths,
            n_paths_lb: c.n_paths_lb,
            grid_theta: c.grid_theta,
            grid_inj: c.grid_inj,
            grid_div: c.grid_div,
            b_max: c.b_max,
            backward: c.backward,
            lp_points: c.lp_points,
            lp_retentions: c.lp_retentions,
            refine_rounds: c.refine_rounds,
            check_points: c.check.n_y,
            check_retentions: c.check.n_u,
            psd_tol: c.psd_tol,
            solver_tol: c.solver.tol,
            solver_max_iter: c.solver.max_iter,
            occ_time_bins,
            occ_space_bins,
            step: c.sim.step,
            ladder,
        }
    }
}

/// Everything a subcommand needs, built from a validated [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: RiskModel,
    pub bounds: SpaceBounds,
    pub ddp: DdpConfig,
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks ranges that the model constructor does not see, then builds
    /// the model (which checks every model invariant).
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.ddp.r) {
            return Err(cfg_err("ddp.r", format!("must lie in [1, 4], got {}", self.ddp.r)));
        }
        if let Some(x0) = self.x0 {
            if !x0.is_finite() {
                return Err(cfg_err("x0", "must be finite"));
            }
        }
        if self.ddp.ladder.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(cfg_err("ddp.ladder", "stage horizons must be > 0"));
        }
        if self.ddp.occ_time_bins > 0 && self.ddp.occ_space_bins < 2 {
            return Err(cfg_err("ddp.occ_space_bins", "binned occupation needs at least 2 space bins"));
        }
        if !(self.ddp.solver_tol > 0.0) || self.ddp.solver_max_iter == 0 {
            return Err(cfg_err("ddp.solver_tol", "solver tolerance and iteration cap must be positive"));
        }
        if let Some(h) = self.ddp.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(cfg_err("ddp.step", "must be > 0"));
            }
        }
        self.resolve().map(|_| ())
    }

    pub fn model(&self) -> Result<RiskModel> {
        let claims = match &self.claims {
            ClaimsSection::Exponential { rate } => ClaimLaw::exponential(*rate),
            ClaimsSection::Empirical { atoms } => ClaimLaw::empirical(atoms.iter().map(|a| (a[0], a[1])).collect()),
        }?;
        let family = match self.retention {
            RetentionSection::Proportional { a0 } => RetentionFamily::Proportional { a0 },
            RetentionSection::ExcessOfLoss => RetentionFamily::ExcessOfLoss,
            RetentionSection::Full => RetentionFamily::Full,
        };
        let penalty = self.penalty.map(|p| Penalty { a: p.a, b: p.b });
        RiskModel::new(claims, self.premium.coefficients.clone(), self.lambda, self.q, self.k, penalty, family)
    }

    pub fn ddp_config(&self) -> DdpConfig {
        let d = &self.ddp;
        let occupation = if d.occ_time_bins == 0 {
            OccupationOptions::exact()
        } else {
            OccupationOptions {
                mode: OccupationMode::Binned { n_time: d.occ_time_bins, n_space: d.occ_space_bins },
                ..OccupationOptions::default()
            }
        };
        DdpConfig {
            r: d.r,
            eps: d.eps,
            t1: d.t1,
            max_iter: d.max_iter,
            tol: d.tol,
            n_paths: d.n_paths,
            n_paths_lb: d.n_paths_lb,
            grid_theta: d.grid_theta,
            grid_inj: d.grid_inj,
            grid_div: d.grid_div,
            b_max: d.b_max,
            occupation,
            lp_points: d.lp_points,
            lp_retentions: d.lp_retentions,
            check: CheckOptions { n_y: d.check_points, n_u: d.check_retentions, ..CheckOptions::default() },
            refine_rounds: d.refine_rounds,
            psd_tol: d.psd_tol,
            backward: d.backward,
            adjoint_check: true,
            solver: crate::conic::SolverOptions { tol: d.solver_tol, max_iter: d.solver_max_iter },
            sim: SimOptions { step: d.step },
            seed: self.seed,
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let model = self.model()?;
        let bounds = space_bounds(&model, self.bounds.xbar, self.bounds.t, self.bounds.eps)?;
        let ddp = self.ddp_config();
        ddp.validate()?;
        Ok(Resolved { model, bounds, ddp })
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
output = "out"
lambda = 1.0
q = 0.1
k = 1.5

[claims]
kind = "exponential"
rate = 1.0

[premium]
coefficients = [[0, 0, 0.1], [1, 0, 1.5]]

[retention]
family = "proportional"
a0 = 0.0

[bounds]
xbar = 5.0
T = 20.0
eps = 0.5
"#;

    #[test]
    fn minimal_round_trip() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.ddp, DdpSection::default());
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn k_one_rejected() {
        let e = RunConfig::from_toml_str(&MINIMAL.replace("k = 1.5", "k = 1.0")).unwrap_err();
        assert!(matches!(e, Error::Model(_)));
        assert!(e.to_string().contains("k > 1"), "{e}");
    }

    #[test]
    fn penalty_condition_rejected() {
        let e = RunConfig::from_toml_str(&format!("{MINIMAL}\n[penalty]\na = 1.0\nb = 1.0\n")).unwrap_err();
        assert!(e.to_string().contains("[A_ab]"), "{e}");
    }

    #[test]
    fn missing_and_unknown_keys_named() {
        let e = RunConfig::from_toml_str(&MINIMAL.replace("lambda = 1.0\n", "")).unwrap_err();
        assert!(e.to_string().contains("lambda"), "{e}");
        let e = RunConfig::from_toml_str(&MINIMAL.replace("T = 20.0", "T = 20.0\nbogus = 1")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml_str(&format!("{MINIMAL}\n[ddp]\nr = 5\n")).unwrap_err();
        assert!(e.to_string().contains("ddp.r"), "{e}");
    }
}
