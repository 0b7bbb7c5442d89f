use crate::output::{num, opt, sha256_hex, ManifestInfo, OutDir};
use crate::{Backward, CheckArgs, Command, Common, DdpArgs, MomentsArgs, SimulateArgs, StrategyArgs, StrategyKind};
use anyhow::{Context, Result};
use insdual::config::{RunConfig, Resolved};
use insdual::ddp::{run_ddp_with, run_nested, BackwardMethod, DdpResult, IterationBundle, IterationLog};
use insdual::error::Error;
use insdual::generator::{check_dual_feasibility, hjb_residual, CheckOptions, PolyValueFn};
use insdual::model::RetentionPolicy;
use insdual::moments::{putinar_check_moments, system_moments};
use insdual::occupation::{build_occupation, mass_report, OccupationSystem};
use insdual::poly::{chebyshev_lobatto, UniPoly};
use insdual::sim::{simulate_outcomes, simulate_paths, summarize, EventKind, StrategySpec, TrajectoryRecord};
use serde::Serialize;
use std::path::Path;
use std::process::ExitCode;

pub const WORKERS_ENV: &str = "INSDUAL_WORKERS";

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MODEL: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_FEASIBILITY: u8 = 5;
pub const EXIT_OTHER: u8 = 6;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::Model(_)) => EXIT_MODEL,
        Some(Error::Solver(_)) => EXIT_SOLVER,
        Some(Error::Feasibility(_)) => EXIT_FEASIBILITY,
        _ => EXIT_OTHER,
    }
}

struct Loaded {
    cfg: RunConfig,
    res: Resolved,
    out: OutDir,
    info: ManifestInfo,
}

fn load(common: &Common, subcommand: &'static str) -> Result<Loaded> {
    let text = std::fs::read(&common.config)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    let mut cfg = insdual::config::parse_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.display().to_string();
    }
    if let Some(n) = common.paths {
        cfg.ddp.n_paths = n;
    }
    if let Some(r) = common.order {
        cfg.ddp.r = r;
    }
    if let Some(t) = common.tol {
        cfg.ddp.tol = t;
    }
    cfg.validate()?;
    let res = cfg.resolve()?;
    let out = OutDir::create(Path::new(&cfg.output))?;
    let info = ManifestInfo {
        subcommand,
        config_path: common.config.display().to_string(),
        config_sha256: sha256_hex(&text),
        seed: cfg.seed,
        args: std::env::args().skip(1).collect(),
    };
    Ok(Loaded { cfg, res, out, info })
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Ddp(a) => ddp(a),
        Command::CheckHjb(a) => check_hjb(a),
        Command::Moments(a) => moments(a),
    }
}

fn retention_for(res: &Resolved, a: &StrategyArgs) -> RetentionPolicy {
    match a.retention {
        None => RetentionPolicy::Full,
        Some(p) => res.model.family.policy(p),
    }
}

fn strategy_for(res: &Resolved, a: &StrategyArgs, x0: f64) -> Result<StrategySpec> {
    let s = match a.strategy {
        StrategyKind::PayAll => {
            let mut s = StrategySpec::pay_all(x0);
            s.retention = retention_for(res, a);
            s
        }
        StrategyKind::Barrier => StrategySpec::barrier(retention_for(res, a), a.inj, a.div),
    };
    if !res.model.family.contains(&s.retention) {
        return Err(Error::Input(format!("retention {:?} is not in the configured family", s.retention)).into());
    }
    s.validate(x0)?;
    Ok(s)
}

const RUNS_HEADER: [&str; 13] = [
    "strategy", "retention", "retention_param", "inj_barrier", "div_barrier", "x0", "horizon", "mean", "std_error",
    "n_paths", "seed", "ruin_fraction", "tail_estimate",
];

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let Loaded { cfg, res, mut out, info } = load(&a.common, "simulate")?;
    let x0 = a.x0.or(cfg.x0).unwrap_or(0.0);
    let horizon = a.horizon.unwrap_or(res.bounds.t);
    let s = strategy_for(&res, &a.strategy, x0)?;
    let n = a.common.paths.unwrap_or(res.ddp.n_paths_lb);
    let outs = simulate_outcomes(&res.model, &s, x0, horizon, n, cfg.seed, &res.ddp.sim)?;
    let est = summarize(&outs, cfg.seed);

    // append to an existing runs.csv
    let mut rows: Vec<Vec<String>> = Vec::new();
    let runs = out.path().join("runs.csv");
    if runs.exists() {
        let mut r = csv::Reader::from_path(&runs)?;
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
    }
    let kind = match a.strategy.strategy {
        StrategyKind::PayAll => "pay_all",
        StrategyKind::Barrier => "barrier",
    };
    rows.push(vec![
        kind.into(),
        retention_name(&s.retention).into(),
        num(s.retention.param()),
        num(s.inj_barrier),
        num(s.div_barrier),
        num(x0),
        num(horizon),
        num(est.mean()),
        opt(est.std_error()),
        n.to_string(),
        cfg.seed.to_string(),
        num(est.ruin_fraction),
        num(est.tail_estimate.mean),
    ]);
    out.write_csv("runs.csv", &RUNS_HEADER, &rows)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        strategy: &'a StrategySpec,
        x0: f64,
        horizon: f64,
        estimate: &'a insdual::sim::GainEstimate,
        /// Closed-form gain of the pay-all strategy with full retention.
        pay_all_value: Option<f64>,
    }
    let pay_all = (a.strategy.strategy == StrategyKind::PayAll && s.retention == RetentionPolicy::Full)
        .then(|| res.model.pay_all_value(x0));
    out.write_json("summary.json", &Summary { strategy: &s, x0, horizon, estimate: &est, pay_all_value: pay_all })?;

    if a.trajectories > 0 {
        std::fs::create_dir_all(out.path().join("trajectories"))?;
        let recs = simulate_paths(&res.model, &s, x0, horizon, a.trajectories.min(n), cfg.seed, &res.ddp.sim)?;
        for (i, r) in recs.iter().enumerate() {
            let rows = trajectory_rows(r);
            out.write_csv(
                &format!("trajectories/path_{i}.csv"),
                &["time", "reserve", "event_kind", "event_size", "cum_dividends", "cum_injections"],
                &rows,
            )?;
        }
    }
    println!(
        "gain {} +- {} over {n} paths{}",
        est.mean(),
        est.std_error().unwrap_or(f64::NAN),
        pay_all.map(|v| format!(" (pay-all value {v})")).unwrap_or_default()
    );
    out.finish(info)?;
    Ok(ExitCode::SUCCESS)
}

fn retention_name(u: &RetentionPolicy) -> &'static str {
    match u {
        RetentionPolicy::Proportional { .. } => "proportional",
        RetentionPolicy::ExcessOfLoss { .. } => "excess_of_loss",
        RetentionPolicy::Full => "full",
    }
}

/// Drift nodes and events of one path in time order, with undiscounted
/// running totals of dividends and injections.
pub fn trajectory_rows(r: &TrajectoryRecord) -> Vec<Vec<String>> {
    // (time, rank, insertion) orders drift nodes before events at equal times
    let mut items: Vec<(f64, u8, usize, Item)> = Vec::new();
    for seg in &r.segments {
        let n = seg.times.len();
        for (j, (&t, &x)) in seg.times.iter().zip(&seg.reserves).enumerate() {
            let paid = if seg.at_barrier && j + 1 == n { seg.dividends } else { 0.0 };
            let idx = items.len();
            items.push((t, 0, idx, Item::Node(x, paid)));
        }
    }
    for e in &r.events {
        let idx = items.len();
        items.push((e.time, 1, idx, Item::Event(*e)));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut div, mut inj) = (0.0, 0.0);
    let mut rows = Vec::with_capacity(items.len());
    for (t, _, _, it) in items {
        let (x, kind, size) = match it {
            Item::Node(x, paid) => {
                div += paid;
                (x, "drift", 0.0)
            }
            Item::Event(e) => {
                let after = match e.kind {
                    EventKind::Claim => e.reserve_before - e.size,
                    EventKind::DividendLump => {
                        div += e.size;
                        e.reserve_before - e.size
                    }
                    EventKind::InjectionLump => {
                        inj += e.size;
                        e.reserve_before + e.size
                    }
                    EventKind::RuinDeclared | EventKind::HorizonReached => e.reserve_before,
                };
                (after, e.kind.as_str(), e.size)
            }
        };
        rows.push(vec![num(t), num(x), kind.into(), num(size), num(div), num(inj)]);
    }
    rows
}

enum Item {
    Node(f64, f64),
    Event(insdual::sim::Event),
}

pub const ITER_HEADER: [&str; 8] = ["z", "F_LB", "std_error", "B_z", "B_UB", "phi_at_x0", "gap", "status"];

pub fn iteration_row(l: &IterationLog) -> Vec<String> {
    vec![
        l.z.to_string(),
        num(l.f_lb),
        opt(l.std_error),
        num(l.b_z),
        num(l.b_ub),
        num(l.phi_at_x0),
        num(l.gap),
        l.status.clone(),
    ]
}

fn ddp(a: DdpArgs) -> Result<ExitCode> {
    let Loaded { cfg, mut res, mut out, info } = load(&a.common, "ddp")?;
    let x0 = a.x0.or(cfg.x0).unwrap_or(0.0);
    if let Some(t1) = a.t1 {
        res.ddp.t1 = t1;
    }
    if let Some(m) = a.max_iter {
        res.ddp.max_iter = m;
    }
    if let Some(b) = a.backward {
        res.ddp.backward = match b {
            Backward::Grid => BackwardMethod::Grid,
            Backward::Sos => BackwardMethod::Sos,
        };
    }
    res.ddp.validate()?;
    let bundles = !a.no_bundles;
    let mut logs: Vec<IterationLog> = Vec::new();
    let mut written: Vec<(String, Vec<u8>)> = Vec::new();
    let mut observer = |b: &IterationBundle<'_>| -> insdual::error::Result<()> {
        let mut log = b.log.clone();
        log.z = logs.len() + 1;
        logs.push(log);
        if bundles {
            let mut s = serde_json::to_string_pretty(b).map_err(|e| Error::Input(e.to_string()))?;
            s.push('\n');
            written.push((format!("iter_{:03}.json", logs.len()), s.into_bytes()));
        }
        Ok(())
    };
    let ladder = cfg.ddp.ladder.clone();
    let outcome: insdual::error::Result<Vec<DdpResult>> = if ladder.is_empty() {
        run_ddp_with(&res.model, &res.bounds, x0, &res.ddp, &mut observer).map(|r| vec![r])
    } else {
        run_nested(&res.model, &res.bounds, x0, &res.ddp, &ladder, &mut observer)
    };
    // the partial log survives a failing step
    let rows: Vec<Vec<String>> = logs.iter().map(iteration_row).collect();
    out.write_csv("iterations.csv", &ITER_HEADER, &rows)?;
    out.write_json("iterations.json", &logs)?;
    for (name, bytes) in &written {
        out.write_bytes(name, bytes)?;
    }
    let results = outcome?;
    let last = results.last().expect("at least one stage");
    #[derive(Serialize)]
    struct Report<'a> {
        x0: f64,
        lower: f64,
        lower_std_error: Option<f64>,
        upper: f64,
        stages: &'a [DdpResult],
    }
    let (lower, se, upper) = match &last.negative {
        Some(n) if x0 < 0.0 => (n.lower, n.lower_std_error, n.upper),
        _ => (
            results.iter().map(|r| r.best_lb).fold(f64::NEG_INFINITY, f64::max),
            last.best_lb_std_error,
            results.iter().map(|r| r.certified_ub).fold(f64::INFINITY, f64::min),
        ),
    };
    out.write_json("result.json", &Report { x0, lower, lower_std_error: se, upper, stages: &results })?;
    println!("x0 = {x0}: lower {lower} (se {}), upper {upper}, {} iterations", opt(se), logs.len());
    out.finish(info)?;
    Ok(ExitCode::SUCCESS)
}

fn load_phi(path: &Path, res: &Resolved) -> Result<PolyValueFn> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let bad = || Error::Input(format!("{}: no value function found", path.display()));
    // ddp report -> last stage phi; ddp stage -> phi
    let v = if let Some(stages) = v.get("stages").and_then(|s| s.as_array()) {
        stages.last().and_then(|s| s.get("phi")).cloned().ok_or_else(bad)?
    } else if let Some(p) = v.get("phi") {
        p.clone()
    } else {
        v
    };
    if let Some(c) = v.get("coefficients") {
        let c: Vec<f64> = serde_json::from_value(c.clone()).map_err(|e| Error::Input(e.to_string()))?;
        return Ok(PolyValueFn::from_original(&UniPoly::new(c), PolyValueFn::box_map(&res.bounds)));
    }
    serde_json::from_value(v).map_err(|e| Error::Input(format!("{}: {e}", path.display())).into())
}

fn check_hjb(a: CheckArgs) -> Result<ExitCode> {
    let Loaded { mut out, info, res, .. } = load(&a.common, "check-hjb")?;
    let phi = load_phi(&a.phi, &res)?;
    let mut opts = CheckOptions::default();
    if let Some(t) = a.common.tol {
        opts.tol = t;
    }
    let (shifted, report) = check_dual_feasibility(&res.model, &phi, &res.bounds, a.eps, &opts)?;
    let ys = chebyshev_lobatto(res.bounds.xmin, res.bounds.xmax, 257);
    let mut table: Vec<(f64, f64, &'static str)> = Vec::new();
    let mut rows = Vec::new();
    for &y in &ys {
        let r = hjb_residual(&res.model, &shifted, y);
        let branch = match r.branch {
            insdual::generator::Branch::Positive => "positive",
            insdual::generator::Branch::Negative => "negative",
        };
        let (v, d) = shifted.eval_with_derivative(y);
        rows.push(vec![num(y), branch.into(), num(r.value), num(v), num(d)]);
        table.push((y, r.value, branch));
    }
    out.write_csv("hjb.csv", &["y", "branch", "residual", "phi", "dphi"], &rows)?;
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a insdual::generator::FeasibilityReport,
        phi: &'a PolyValueFn,
        phi_original: Vec<f64>,
    }
    out.write_json("feasibility.json", &Out { report: &report, phi: &shifted, phi_original: shifted.original().c })?;
    // largest residuals first, per branch
    table.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("{:>14} {:>10} {:>14}", "y", "branch", "residual");
    for branch in ["positive", "negative"] {
        for (y, r, b) in table.iter().filter(|t| t.2 == branch).take(a.worst) {
            println!("{y:>14.6e} {b:>10} {r:>14.6e}");
        }
    }
    println!(
        "max L^u phi {:.3e} at y = {:.4}, min phi' {:.6} at y = {:.4}, max phi' {:.6} at y = {:.4}, shift {:.3e}: {}",
        report.max_generator,
        report.worst_generator_y,
        report.min_derivative,
        report.worst_min_derivative_y,
        report.max_derivative,
        report.worst_max_derivative_y,
        report.shift,
        if report.pass { "PASS" } else { "FAIL" }
    );
    out.finish(info)?;
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_FEASIBILITY))
    }
}

fn moments(a: MomentsArgs) -> Result<ExitCode> {
    let Loaded { cfg, res, mut out, info } = load(&a.common, "moments")?;
    let occ = match &a.occupation {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            OccupationSystem::from_json(&text)?
        }
        None => {
            let x0 = a.x0.or(cfg.x0).unwrap_or(0.0);
            let s = strategy_for(&res, &a.strategy, x0)?;
            let horizon = a.horizon.unwrap_or(res.ddp.t1);
            let occ = build_occupation(
                &res.model,
                &s,
                x0,
                horizon,
                res.ddp.n_paths,
                cfg.seed,
                &res.bounds,
                &res.ddp.occupation,
                &res.ddp.sim,
            )?
            .system;
            out.write_bytes("occupation.json", occ.to_json()?.as_bytes())?;
            occ
        }
    };
    let r = res.ddp.r;
    let mom = system_moments(&occ, &res.bounds, res.model.q, r)?;
    let put = putinar_check_moments(&mom, &res.bounds, r, res.ddp.psd_tol)?;
    #[derive(Serialize)]
    struct Out<'a> {
        r: usize,
        moments: &'a insdual::moments::SystemMoments,
        putinar: &'a insdual::moments::PutinarReport,
        mass: insdual::occupation::MassReport,
    }
    out.write_json("moments.json", &Out { r, moments: &mom, putinar: &put, mass: mass_report(&occ, res.model.q) })?;
    println!("Putinar check at r = {r}: {} (min eigenvalue {:.3e})", if put.pass { "PASS" } else { "FAIL" }, put.min_eigenvalue());
    out.finish(info)?;
    if put.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_FEASIBILITY))
    }
}
