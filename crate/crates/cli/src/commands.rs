use auction_uh::counterfactual::{
    empirical_n_dist, reserve_schedule, revenue_compare, ReserveProblem, RevenueReport, REFERENCE_BIDDERS,
};
use auction_uh::dataset::{load_censored, load_triples, save_censored, save_triples, write_envelope};
use auction_uh::dist::{ConditionalFamily, ParentModel, SyntheticDgp};
use auction_uh::estimate::{fit_censored, fit_triples, EstimationResult, FitConfig, IntegrationConfig};
use auction_uh::ident::{
    build_operators, check_factorization, injectivity_diagnostics, run_pipeline, score_recovery, sweep_partitions,
    InjectivityReport, LabModel, Observables, OperatorGrid, Partition, Recovery, RecoveryScore, SweepEntry,
};
use auction_uh::order_stats::{sample_censored_dataset, sample_triples};
use auction_uh::sieve::{SieveModel, SieveParams};
use auction_uh::study::{run_mc_study, McStudyConfig};
use serde::Serialize;

use crate::config::{
    self, CounterfactualConfig, DataMode, EstimateConfig, IdentifyConfig, ModelSource, SimulateConfig,
};
use crate::failure::Failure;
use crate::output::OutDir;
use crate::{Common, CounterfactualFlags};

pub fn simulate(c: &Common) -> Result<(), Failure> {
    let (mut cfg, _) = config::load::<SimulateConfig>(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut out = OutDir::create(&c.out)?;
    match cfg.mode {
        DataMode::Triples => {
            let data = sample_triples(&cfg.dgp, cfg.m, cfg.n, cfg.r, cfg.seed)?;
            save_triples(&out.path("data.csv"), &data)?;
        }
        DataMode::Censored => {
            let potential: Vec<u32> = (0..cfg.m).map(|i| cfg.potential[i % cfg.potential.len()]).collect();
            let data = sample_censored_dataset(&cfg.dgp, &potential, cfg.reserve, cfg.seed)?;
            save_censored(&out.path("data.csv"), &data)?;
        }
    }
    out.finish("simulate", &cfg, Some(cfg.seed))
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    /// Multiply bids in model units by this to return to homogenized units.
    scale: f64,
    result: &'a EstimationResult,
}

#[derive(Serialize)]
struct TDensityRow {
    tau: f64,
    pdf: f64,
}

#[derive(Serialize)]
struct XDensityRow {
    tau: f64,
    x: f64,
    x_homogenized: f64,
    pdf: f64,
    cdf: f64,
}

fn unit_grid(points: usize) -> Vec<f64> {
    let last = (points.max(2) - 1) as f64;
    (0..points.max(2)).map(|i| i as f64 / last).collect()
}

pub fn estimate(c: &Common) -> Result<(), Failure> {
    let (mut cfg, base) = config::load::<EstimateConfig>(c.config.as_deref())?;
    let data_path = cfg
        .data
        .as_ref()
        .map(|p| config::resolve(&base, p))
        .ok_or_else(|| Failure::config("config at `data`: a dataset path is required"))?;
    let mut fit = cfg.fit.clone().unwrap_or_else(|| match cfg.mode {
        DataMode::Triples => FitConfig::default(),
        DataMode::Censored => FitConfig::censored_default(),
    });
    if let Some(seed) = c.seed {
        fit.seed = seed;
        if let IntegrationConfig::Mc { draws, .. } = fit.integration {
            fit.integration = IntegrationConfig::Mc { draws, seed };
        }
    }
    fit.validate()?;
    if cfg.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Failure::config("config at `taus`: values must lie in [0, 1]"));
    }
    cfg.fit = Some(fit.clone());

    let (result, scale) = match cfg.mode {
        DataMode::Triples => {
            let data = load_triples(&data_path, cfg.prep)?;
            (fit_triples(&data.data, &fit), data.scale)
        }
        DataMode::Censored => {
            let data = load_censored(&data_path, cfg.prep)?;
            (fit_censored(&data.data, &fit), data.scale)
        }
    };
    let result = result?;
    for s in &result.per_start {
        if !s.converged {
            eprintln!(
                "start {}: not converged after {} iterations ({:?}), loglik {:?}",
                s.start, s.iterations, s.reason, s.loglik
            );
        }
    }

    let mut out = OutDir::create(&c.out)?;
    out.json("estimate.json", &EstimateOutput { scale, result: &result })?;
    out.json("model.json", &result.params)?;
    let model = SieveModel::from_params(&result.params);
    let grid = unit_grid(cfg.grid_points);
    let t_rows: Vec<TDensityRow> = grid.iter().map(|&tau| TDensityRow { tau, pdf: model.marg_t_pdf(tau) }).collect();
    out.csv("density_t.csv", &t_rows)?;
    let mut x_rows = Vec::with_capacity(cfg.taus.len() * grid.len());
    for &tau in &cfg.taus {
        for &x in &grid {
            x_rows.push(XDensityRow {
                tau,
                x,
                x_homogenized: x * scale,
                pdf: model.cond_pdf(x, tau),
                cdf: model.cond_cdf(x, tau),
            });
        }
    }
    out.csv("density_x_given_t.csv", &x_rows)?;
    out.finish("estimate", &cfg, Some(fit.seed))
}

#[derive(Serialize)]
struct RecoverySummary<'a> {
    k: usize,
    eigenvalues: &'a [f64],
    masses: &'a [f64],
    conditional_means: Vec<f64>,
    eigenvalue_match: f64,
    offdiag_ratio: f64,
    condition_numbers: &'a [(String, f64)],
}

#[derive(Serialize)]
struct Checks {
    factorization_exact: bool,
    injective: bool,
    recovered: bool,
}

#[derive(Serialize)]
struct IdentifyReport<'a> {
    model: &'a LabModel,
    partition: Partition,
    y1: f64,
    y2: f64,
    r: u32,
    n: u32,
    factorization_error: f64,
    injectivity: &'a InjectivityReport,
    recovery: Option<RecoverySummary<'a>>,
    score: Option<RecoveryScore>,
    error: Option<String>,
    sweep: Vec<SweepEntry>,
    checks: Checks,
}

#[derive(Serialize)]
struct CurveRow {
    component: usize,
    x: f64,
    pdf: f64,
    cdf: f64,
    true_pdf: f64,
    true_cdf: f64,
}

fn curve_rows(model: &LabModel, rec: &Recovery) -> Vec<CurveRow> {
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| model.components[a].mean().total_cmp(&model.components[b].mean()));
    let mut rows = Vec::new();
    for (i, (c, &k)) in rec.conditionals.iter().zip(&order).enumerate() {
        for (j, &x) in c.points.iter().enumerate() {
            rows.push(CurveRow {
                component: i,
                x,
                pdf: c.pdf[j],
                cdf: c.cdf[j],
                true_pdf: model.pdf(k, x),
                true_cdf: model.cdf(k, x),
            });
        }
    }
    rows
}

pub fn identify(c: &Common) -> Result<(), Failure> {
    let (cfg, _) = config::load::<IdentifyConfig>(c.config.as_deref())?;
    let model = cfg.model.build().map_err(|e| Failure::config(format!("config at `model`: {e}")))?;
    let partition = match cfg.partition {
        Some(p) => p,
        None => model.default_partition()?,
    };
    let [n_low, n_mid, n_high] = cfg.grid_points;
    let grid = OperatorGrid::new(partition, n_low, n_mid, n_high)?;
    let span = partition.c2 - partition.c1;
    let y1 = cfg.y1.unwrap_or(partition.c1 + span / 3.0);
    let y2 = cfg.y2.unwrap_or(partition.c1 + 2.0 * span / 3.0);

    let ops1 = build_operators(&model, &grid, y1, cfg.r, cfg.n)?;
    let ops2 = build_operators(&model, &grid, y2, cfg.r, cfg.n)?;
    let factorization_error = check_factorization(&ops1).max(check_factorization(&ops2));
    let injectivity = injectivity_diagnostics(&ops2);
    let obs = Observables::from_model(&model, &grid, cfg.r, cfg.n, y1, y2)?;
    let recovery = run_pipeline(&obs, &cfg.options);
    let scored = recovery
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|rec| score_recovery(&model, &obs, rec).map_err(|e| e.to_string()));
    let (score, error) = match scored {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e)),
    };
    let sweep = sweep_partitions(&model, &cfg.sweep, (n_low, n_mid, n_high), cfg.r, cfg.n, &cfg.options);

    let mut out = OutDir::create(&c.out)?;
    let checks = Checks {
        factorization_exact: factorization_error <= 1e-12,
        injective: !injectivity.any_violation,
        recovered: score.as_ref().is_some_and(|s| s.max_cdf_error <= 1e-5 && s.max_mass_error <= 1e-8),
    };
    let report = IdentifyReport {
        model: &model,
        partition,
        y1,
        y2,
        r: cfg.r,
        n: cfg.n,
        factorization_error,
        injectivity: &injectivity,
        recovery: recovery.as_ref().ok().map(|rec| RecoverySummary {
            k: rec.k,
            eigenvalues: &rec.eigenvalues,
            masses: &rec.masses,
            conditional_means: rec.conditionals.iter().map(|c| c.mean).collect(),
            eigenvalue_match: rec.eigenvalue_match,
            offdiag_ratio: rec.offdiag_ratio,
            condition_numbers: &rec.condition_numbers,
        }),
        score,
        error,
        sweep,
        checks,
    };
    out.json("report.json", &report)?;
    if let Ok(rec) = &recovery {
        out.csv("curves.csv", &curve_rows(&model, rec))?;
    }
    out.finish("identify", &cfg, None)?;

    if injectivity.any_violation {
        return Err(Failure::identification(format!(
            "injectivity check failed (condition numbers L {:.3e}, H {:.3e}, J {:.3e}); values may not depend on the \
             heterogeneity, or a segment of the partition ({}, {}) is too narrow to separate the components",
            injectivity.l_mat.cond, injectivity.h_mat.cond, injectivity.j_y.cond, partition.c1, partition.c2
        )));
    }
    if let Err(e) = recovery {
        return Err(Failure::identification(format!(
            "{e}; try cutoffs nearer the 1/3 and 2/3 quantiles of the value distribution, or move y1, y2 apart"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScheduleRow {
    tau: f64,
    r_star: f64,
    profit: f64,
}

#[derive(Serialize)]
struct CounterfactualSummary<'a> {
    n_dist: &'a [(u32, f64)],
    report: &'a RevenueReport,
}

/// Reserve schedule, scheme comparison and the bidder-count distribution used.
type CounterfactualOutput = (Vec<ScheduleRow>, RevenueReport, Vec<(u32, f64)>);

fn counterfactual_with<P: ParentModel>(
    parent: P,
    cfg: &CounterfactualConfig,
    n_dist: Vec<(u32, f64)>,
) -> auction_uh::Result<CounterfactualOutput> {
    let problem = ReserveProblem {
        parent,
        v0: cfg.v0,
        n_dist,
        fixed_reserve: cfg.fixed_reserve,
        status_quo_reserve: cfg.status_quo_reserve,
        reserve_floor: cfg.reserve_floor,
        uh: cfg.uh.clone(),
    };
    problem.validate()?;
    let taus: Vec<(f64, f64)> = cfg.tau_grid.iter().map(|&t| (t, 1.0)).collect();
    let rows = reserve_schedule(&problem, &taus)?
        .into_iter()
        .map(|s| ScheduleRow { tau: s.tau, r_star: s.reserve, profit: s.profit })
        .collect();
    let report = revenue_compare(&problem)?;
    Ok((rows, report, problem.n_dist))
}

pub fn counterfactual(c: &Common, flags: &CounterfactualFlags) -> Result<(), Failure> {
    let (mut cfg, base) = config::load::<CounterfactualConfig>(c.config.as_deref())?;
    if let Some(v0) = flags.v0 {
        cfg.v0 = v0;
    }
    if let Some(r) = flags.fixed_reserve {
        cfg.fixed_reserve = r;
    }
    if let Some(grid) = &flags.tau_grid {
        cfg.tau_grid = grid.clone();
    }
    if cfg.tau_grid.is_empty() || cfg.tau_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Failure::config("config at `tau_grid`: needs values in [0, 1]"));
    }
    let n_dist = match (&cfg.n_dist, &cfg.data) {
        (Some(d), _) => d.clone(),
        (None, Some(path)) => {
            let data = load_censored(&config::resolve(&base, path), cfg.prep)?;
            empirical_n_dist(data.data.iter().map(|a| a.potential))
        }
        (None, None) => vec![(REFERENCE_BIDDERS, 1.0)],
    };
    let (rows, report, n_dist) = match &cfg.model {
        ModelSource::Dgp { dgp } => {
            dgp.validate().map_err(|e| Failure::config(format!("config at `model.dgp`: {e}")))?;
            counterfactual_with(dgp.clone(), &cfg, n_dist)?
        }
        ModelSource::Uniform {} => counterfactual_with(SyntheticDgp::uniform(), &cfg, n_dist)?,
        ModelSource::Sieve { path } => {
            let params = SieveParams::load(&config::resolve(&base, path))?;
            counterfactual_with(SieveModel::from_params(&params), &cfg, n_dist)?
        }
    };
    let mut out = OutDir::create(&c.out)?;
    out.csv("reserves.csv", &rows)?;
    out.json("summary.json", &CounterfactualSummary { n_dist: &n_dist, report: &report })?;
    out.finish("counterfactual", &cfg, None)
}

#[derive(Serialize)]
struct CoverageEntry {
    curve: String,
    tau: Option<f64>,
    coverage: f64,
    truth: Vec<f64>,
}

#[derive(Serialize)]
struct StudySummary {
    median_iae_t: f64,
    coverage: Vec<CoverageEntry>,
}

#[derive(Serialize)]
struct ReplicationRow {
    rep: usize,
    seed: u64,
    loglik: f64,
    converged: bool,
    iae_t: f64,
}

pub fn mc_study(c: &Common) -> Result<(), Failure> {
    let (mut cfg, _) = config::load::<McStudyConfig>(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let report = run_mc_study(&cfg)?;
    let mut out = OutDir::create(&c.out)?;
    for e in &report.envelopes {
        let name = match e.tau {
            None => "envelope_t.csv".to_string(),
            Some(tau) => format!("envelope_x_tau_{tau}.csv"),
        };
        write_envelope(std::fs::File::create(out.path(&name))?, &e.rows)?;
    }
    let reps: Vec<ReplicationRow> = report
        .replications
        .iter()
        .map(|r| ReplicationRow { rep: r.rep, seed: r.seed, loglik: r.loglik, converged: r.converged, iae_t: r.iae_t })
        .collect();
    out.csv("replications.csv", &reps)?;
    let summary = StudySummary {
        median_iae_t: report.median_iae_t,
        coverage: report
            .envelopes
            .iter()
            .map(|e| CoverageEntry { curve: e.curve.clone(), tau: e.tau, coverage: e.coverage, truth: e.truth.clone() })
            .collect(),
    };
    out.json("summary.json", &summary)?;
    out.finish("mc-study", &cfg, Some(cfg.seed))
}
