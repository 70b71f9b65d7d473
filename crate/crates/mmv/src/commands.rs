//! Subcommand bodies. Each returns a [`Report`]; files are written before
//! any failed check is reported so a failing run still leaves its evidence.

use std::path::Path;

use mmv_core::game::{
    verify_lower_equals_upper, verify_saddle_conditions, StateGrid,
};
use mmv_core::math::Estimate;
use mmv_core::meanvar::{
    black_scholes_moments, compare_strategies, max_relative_gap, simulate_r, theta_equivalence,
    theta_from_intercept, MeanVarianceSolution, StrategyRow,
};
use mmv_core::model::audit_assumptions;
use mmv_core::oracle::{estimate_f1_with, estimate_f2_with};
use mmv_core::pde::{residual_resulting_equation, solve, upwinded_nodes};
use mmv_core::sim::{
    certify_saddle_mc, density_mean, estimate_objective_under_p, estimate_objective_under_q,
    estimate_penalty, objective_from_bundle, reduction_identity_refinement, simulate_system,
    terminal_y_mean, EtaControl, Measure, ObjectiveEstimate, PathBundle, PerturbationOutcome,
    Perturbations, PiControl,
};
use mmv_core::{
    Anchor, CaseTag, ControlFields, FactorMarketModel, GridSpec, McConfig, ModelFamily, PdeSolution,
};

use crate::config::{MomentSource, RunConfig};
use crate::error::CliError;
use crate::output::{num, write_csv, write_summary, Report};

fn case_label(tag: CaseTag) -> String {
    match tag {
        CaseTag::CaseI { alpha } => format!("I (alpha = {alpha})"),
        CaseTag::CaseII => "II".into(),
    }
}

fn pass(b: bool) -> String {
    if b { "pass" } else { "fail" }.into()
}

/// `|a - b| <= k * se`, with an exact hit accepted at zero SE.
fn within_se(est: &Estimate, target: f64, k: f64) -> bool {
    est.z_score(target) <= k
}

pub fn cmd_audit(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let (lo, hi) = cfg.audit_domain;
    let a = audit_assumptions(&cfg.model, lo, hi, 2001)?;
    let entries = vec![
        ("z_lo", num(a.z_lo)),
        ("z_hi", num(a.z_hi)),
        ("sigma_min", num(a.thresholds.sigma_min)),
        ("epsilon", num(a.thresholds.epsilon)),
        ("lambda_max", num(a.thresholds.lambda_max)),
        ("min_sigma", num(a.min_sigma)),
        ("min_b2", num(a.min_b2)),
        ("max_abs_lambda", num(a.max_abs_lambda)),
        ("lipschitz_a", num(a.lipschitz.a)),
        ("lipschitz_b", num(a.lipschitz.b)),
        ("lipschitz_b_lambda", num(a.lipschitz.b_lambda)),
        ("lipschitz_lambda_sq", num(a.lipschitz.lambda_sq)),
        ("violations", a.violations.len().to_string()),
    ];
    write_summary(&mut report, out, "audit.csv", &entries)?;
    for v in &a.violations {
        report.note(format!("violation: {v:?}"));
    }
    report.check(
        "assumption audit",
        a.passed(),
        format!("{} violations on [{lo}, {hi}]", a.violations.len()),
    );
    Ok(report)
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.grid)?;
    let res = residual_resulting_equation(&sol, m);
    let g = &cfg.grid;
    let rows = (0..g.n_t).flat_map(|n| {
        let (sol, res) = (&sol, &res);
        (0..g.n_z).map(move |i| {
            vec![
                num(g.t(n, m.horizon)),
                num(g.z(i)),
                num(sol.g.at(i, n)),
                num(sol.g_z.at(i, n)),
                num(sol.f.at(i, n)),
                num(res.field.at(i, n)),
            ]
        })
    });
    write_csv(&mut report, out, "g_surface.csv", &["t", "z", "G", "G_z", "F", "residual"], rows)?;

    let lambda_max = m.declared_thresholds().lambda_max;
    let bound = sol.bound_violation(lambda_max);
    let (g0, _) = sol.eval_g(cfg.anchor.z0, cfg.anchor.t0)?;
    let (lo, hi) = cfg.audit_domain;
    let audit = audit_assumptions(m, lo, hi, 2001)?;
    write_summary(
        &mut report,
        out,
        "solve_summary.csv",
        &[
            ("case", case_label(sol.case_tag)),
            ("g_anchor", num(g0)),
            ("residual_max_norm", num(res.max_norm)),
            ("residual_argmax_z", num(res.argmax.0)),
            ("residual_argmax_t", num(res.argmax.1)),
            ("bound_violation", num(bound)),
            ("upwinded_nodes", upwinded_nodes(m, g).to_string()),
            ("audit", pass(audit.passed())),
        ],
    )?;
    report.note(format!("case {}; G(z0, t0) = {g0:.10}", case_label(sol.case_tag)));
    if !audit.passed() {
        report.note(format!("audit: {} violations (see the audit subcommand)", audit.violations.len()));
    }
    report.check(
        "nonlinear residual",
        res.max_norm <= cfg.tolerances.residual,
        format!(
            "max {:.3e} at (z = {:.3}, t = {:.3}), tolerance {:.1e}",
            res.max_norm, res.argmax.0, res.argmax.1, cfg.tolerances.residual
        ),
    );
    report.check(
        "value bounds",
        bound <= 1e-6,
        format!("relative violation {bound:.3e} of -exp(lambda_max^2 (T - t)) <= G <= -1"),
    );
    Ok(report)
}

pub fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.oracle_grid)?;
    let k = cfg.tolerances.z_score;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &(z, t) in &cfg.oracle_probes {
        let est = match sol.case_tag {
            CaseTag::CaseI { .. } => estimate_f1_with(m, z, t, &cfg.oracle_mc, cfg.oracle_scheme)?,
            CaseTag::CaseII => estimate_f2_with(m, z, t, &cfg.oracle_mc, cfg.oracle_scheme)?,
        };
        let f = sol.eval_f(z, t)?;
        let score = est.z_score(f);
        worst = worst.max(score);
        rows.push(vec![
            num(z),
            num(t),
            num(f),
            num(est.mean),
            num(est.std_error),
            num(score),
        ]);
        report.check(
            format!("F at (z = {z}, t = {t})"),
            score <= k,
            format!("grid {f:.8}, monte carlo {:.8} +- {:.2e} ({score:.2} se)", est.mean, est.std_error),
        );
    }
    write_csv(
        &mut report,
        out,
        "oracle.csv",
        &["z", "t", "pde_f", "mc_f", "std_error", "z_score"],
        rows,
    )?;
    report.note(format!(
        "case {}; {} paths x {} steps, {:?}; worst {worst:.2} se",
        case_label(sol.case_tag),
        cfg.oracle_mc.n_paths,
        cfg.oracle_mc.n_steps,
        cfg.oracle_scheme
    ));
    Ok(report)
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.grid)?;
    let res = residual_resulting_equation(&sol, m);
    let eps = cfg.epsilon(res.max_norm);
    let fields = ControlFields::new(&sol, m, cfg.anchor)?;
    let v = &cfg.verify;
    let states = StateGrid::interior(&sol, v.n_z, v.n_t, v.margin, &v.ys);
    let saddle = verify_saddle_conditions(&fields, &states, &cfg.control_box, v.n_scan, eps)?;
    let minmax = verify_lower_equals_upper(&fields, &states, &cfg.control_box, v.n_scan, eps)?;

    let rows = saddle.nodes.iter().enumerate().map(|(k, n)| {
        vec![
            num(n.y),
            num(n.z),
            num(n.t),
            num(n.margin_i),
            num(n.margin_ii),
            num(n.residual_iii),
            (!saddle.offending.contains(&k) as u8).to_string(),
        ]
    });
    write_csv(
        &mut report,
        out,
        "verify_saddle.csv",
        &["y", "z", "t", "margin_i", "margin_ii", "residual_iii", "ok"],
        rows,
    )?;
    let rows = minmax.nodes.iter().enumerate().map(|(k, n)| {
        vec![
            num(n.y),
            num(n.z),
            num(n.t),
            num(n.min_max),
            num(n.max_min),
            (!minmax.offending.contains(&k) as u8).to_string(),
        ]
    });
    write_csv(
        &mut report,
        out,
        "verify_minmax.csv",
        &["y", "z", "t", "min_max", "max_min", "ok"],
        rows,
    )?;
    write_summary(
        &mut report,
        out,
        "verify_summary.csv",
        &[
            ("epsilon", num(eps)),
            ("residual_max_norm", num(res.max_norm)),
            ("nodes", saddle.nodes.len().to_string()),
            ("worst_i", num(saddle.worst_i)),
            ("worst_ii", num(saddle.worst_ii)),
            ("worst_iii", num(saddle.worst_iii)),
            ("terminal_error", num(saddle.terminal_error)),
            ("saddle_offending", saddle.offending.len().to_string()),
            ("minmax_worst_abs", num(minmax.worst_abs)),
            ("minmax_worst_gap", num(minmax.worst_gap)),
            ("minmax_offending", minmax.offending.len().to_string()),
        ],
    )?;
    report.check(
        "saddle conditions",
        saddle.offending.is_empty(),
        format!(
            "{} states, eps {eps:.1e}: max_eta L {:.2e}, min_pi L {:.2e}, |L*| {:.2e}, {} offending",
            saddle.nodes.len(),
            saddle.worst_i,
            saddle.worst_ii,
            saddle.worst_iii,
            saddle.offending.len()
        ),
    );
    report.check(
        "terminal condition",
        saddle.terminal_error == 0.0,
        format!("max |G(z, T) + 1| = {:.2e}", saddle.terminal_error),
    );
    report.check(
        "lower value equals upper value",
        minmax.passed(),
        format!(
            "max |value| {:.2e}, max gap {:.2e}, {} offending",
            minmax.worst_abs,
            minmax.worst_gap,
            minmax.offending.len()
        ),
    );
    Ok(report)
}

fn objective_row(label: &str, e: &ObjectiveEstimate, value: f64) -> Vec<String> {
    let opt = |o: Option<Estimate>| o.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.std_error));
    let (sn, sn_se) = opt(e.self_normalized);
    let (dm, dm_se) = opt(e.density_mean);
    vec![
        label.to_string(),
        num(e.j.mean),
        num(e.j.std_error),
        num(sn),
        num(sn_se),
        num(dm),
        num(dm_se),
        num(value),
        num(e.excursion_fraction),
    ]
}

fn perturbation_rows<'a>(side: &'a str, list: &'a [PerturbationOutcome]) -> impl Iterator<Item = Vec<String>> + 'a {
    list.iter().map(move |p| {
        vec![
            side.to_string(),
            p.label.clone(),
            num(p.j.mean),
            num(p.j.std_error),
            num(p.diff.mean),
            num(p.diff.std_error),
            (p.holds as u8).to_string(),
        ]
    })
}

/// Translation of `X_T` on fixed paths. Under `Q` the plain mean moves;
/// under `P` the self-normalized ratio does.
pub fn translation_gap(bundle: &PathBundle, shift: f64) -> f64 {
    let base = objective_from_bundle(bundle, 0.0);
    let moved = objective_from_bundle(bundle, shift);
    let pick = |e: &ObjectiveEstimate| e.self_normalized.unwrap_or(e.j).mean;
    (pick(&moved) - pick(&base) + shift).abs()
}

/// Penalty consistency: `E^eta[Y_T]` from a `Q` bundle against
/// `y0 (1 + C)` from an independent `P` bundle. Returns
/// `(q_mean, p_implied, combined_se)`.
pub fn penalty_consistency(p_bundle: &PathBundle, q_bundle: &PathBundle) -> Result<(Estimate, Estimate, f64), CliError> {
    let c = estimate_penalty(p_bundle)?;
    let y0 = p_bundle.y0();
    let implied = Estimate {
        mean: y0 * (1.0 + c.mean),
        std_error: y0 * c.std_error,
        n: c.n,
    };
    let q = terminal_y_mean(q_bundle);
    let se = (q.std_error * q.std_error + implied.std_error * implied.std_error).sqrt();
    Ok((q, implied, se))
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.grid)?;
    let fields = ControlFields::new(&sol, m, cfg.anchor)?;
    let s = cfg.simulate;
    let k = cfg.tolerances.z_score;
    let a = cfg.anchor;
    let value = -a.x0 + fields.g_anchor() * a.y0;

    // Pathwise reduction identity under step halving.
    let levels = reduction_identity_refinement(&fields, &cfg.mc.with_steps(s.reduction_steps), s.levels)?;
    let rows = levels.iter().flat_map(|(n, c)| {
        c.profile
            .iter()
            .map(move |(t, e)| vec![n.to_string(), num(*t), num(*e)])
    });
    write_csv(&mut report, out, "simulate_reduction.csv", &["n_steps", "t", "max_abs_error"], rows)?;
    let errs: Vec<f64> = levels.iter().map(|(_, c)| c.max_abs_error).collect();
    let finest = *errs.last().unwrap();
    // an identity that already holds exactly has nothing left to decrease
    let monotone = errs.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0);
    report.check(
        "reduction identity",
        finest <= cfg.tolerances.reduction,
        format!(
            "max |2 Y G - (X - x0 + 2 y0 G0)| = {finest:.3e} at {} steps, tolerance {:.1e}",
            levels.last().unwrap().0,
            cfg.tolerances.reduction
        ),
    );
    if levels.len() > 1 {
        let shown: Vec<String> = levels.iter().map(|(n, c)| format!("{n}: {:.3e}", c.max_abs_error)).collect();
        report.check("reduction refinement", monotone, shown.join(", "));
    }

    // Objective at the saddle under both measures.
    let q = estimate_objective_under_q(&fields, PiControl::Saddle, EtaControl::Saddle, &cfg.mc)?;
    let p = estimate_objective_under_p(&fields, PiControl::Saddle, EtaControl::Saddle, &cfg.mc)?;
    write_csv(
        &mut report,
        out,
        "simulate_objective.csv",
        &[
            "measure",
            "j",
            "j_se",
            "self_normalized",
            "self_normalized_se",
            "density_mean",
            "density_mean_se",
            "value",
            "excursion_fraction",
        ],
        [objective_row("Q", &q, value), objective_row("P", &p, value)],
    )?;
    report.check(
        "objective under Q",
        within_se(&q.j, value, k),
        format!("J = {:.6} +- {:.1e}, value {value:.6}", q.j.mean, q.j.std_error),
    );
    report.check(
        "objective under P",
        within_se(&p.j, value, k),
        format!("J = {:.6} +- {:.1e}, value {value:.6}", p.j.mean, p.j.std_error),
    );

    if s.run_certificate {
        let cert = certify_saddle_mc(&fields, &Perturbations::default(), &cfg.mc)?;
        let rows = perturbation_rows("eta", &cert.eta_side).chain(perturbation_rows("pi", &cert.pi_side));
        write_csv(
            &mut report,
            out,
            "simulate_saddle.csv",
            &["side", "label", "j", "j_se", "diff", "diff_se", "holds"],
            rows,
        )?;
        report.check(
            "saddle value",
            cert.value_matches,
            format!("J* = {:.6} +- {:.1e}, value {:.6}", cert.j_star.mean, cert.j_star.std_error, cert.value),
        );
        let failed: Vec<&str> = cert
            .eta_side
            .iter()
            .chain(&cert.pi_side)
            .filter(|p| !p.holds)
            .map(|p| p.label.as_str())
            .collect();
        report.check(
            "saddle perturbations",
            failed.is_empty(),
            format!(
                "{} distortions, {} portfolios; failing: [{}]",
                cert.eta_side.len(),
                cert.pi_side.len(),
                failed.join(", ")
            ),
        );
    }

    // Functional checks on stored bundles.
    let bcfg = McConfig::new(s.bundle_paths, s.bundle_steps, cfg.mc.seed)?.with_antithetic(cfg.mc.antithetic);
    let bp = simulate_system(&fields, PiControl::Saddle, EtaControl::Saddle, Measure::P, &bcfg)?;
    let bq = simulate_system(
        &fields,
        PiControl::Saddle,
        EtaControl::Saddle,
        Measure::Q,
        &bcfg.with_seed(cfg.mc.seed.wrapping_add(1)),
    )?;
    let gap_p = translation_gap(&bp, s.shift);
    let gap_q = translation_gap(&bq, s.shift);
    let translation_ok = gap_p.max(gap_q) <= 1e-12 * (1.0 + s.shift.abs() + value.abs());
    let (yq, implied, combined) = penalty_consistency(&bp, &bq)?;
    let penalty_ok = (yq.mean - implied.mean).abs() <= k * combined;
    let dm = density_mean(&bp)?;
    let density_ok = within_se(&dm, 1.0, k);
    write_csv(
        &mut report,
        out,
        "simulate_functional.csv",
        &["check", "estimate", "std_error", "target", "target_se"],
        [
            vec!["translation_p".into(), num(gap_p), num(0.0), num(0.0), num(0.0)],
            vec!["translation_q".into(), num(gap_q), num(0.0), num(0.0), num(0.0)],
            vec![
                "penalty_consistency".to_string(),
                num(yq.mean),
                num(yq.std_error),
                num(implied.mean),
                num(implied.std_error),
            ],
            vec!["density_mean".into(), num(dm.mean), num(dm.std_error), num(1.0), num(0.0)],
        ],
    )?;
    report.check(
        "translation",
        translation_ok,
        format!("shift {}: residual {:.1e} (P), {:.1e} (Q)", s.shift, gap_p, gap_q),
    );
    report.check(
        "penalty consistency",
        penalty_ok,
        format!(
            "E^eta[Y_T] = {:.6} vs y0 (1 + C) = {:.6}, combined se {combined:.1e}",
            yq.mean, implied.mean
        ),
    );
    report.check(
        "density mean",
        density_ok,
        format!("E[Y_T / y0] = {:.6} +- {:.1e}", dm.mean, dm.std_error),
    );
    Ok(report)
}

/// `(ER, ER2, VarR)` and the standard error of `ER` (zero in closed form).
fn r_moments(cfg: &RunConfig, model: &FactorMarketModel, sol: &PdeSolution, source: MomentSource) -> Result<(f64, f64, f64, f64), CliError> {
    match source {
        MomentSource::Simulate => {
            let r = simulate_r(model, sol, cfg.anchor.z0, &cfg.mc)?;
            Ok((r.er.mean, r.er2.mean, r.var_r, r.er.std_error))
        }
        MomentSource::ClosedForm => {
            if !matches!(model.family, ModelFamily::ConstantCoefficients { .. }) {
                return Err(CliError::config("compare.moments", "closed_form needs constant coefficients"));
            }
            let (er, er2, var) = black_scholes_moments(model.lambda(cfg.anchor.z0), model.horizon - cfg.anchor.t0);
            Ok((er, er2, var, 0.0))
        }
    }
}

fn comparison_points(sol: &PdeSolution, n_z: usize, n_t: usize, margin: usize) -> Vec<(f64, f64)> {
    let states = StateGrid::interior(sol, n_z, n_t, margin, &[1.0]);
    states
        .ts
        .iter()
        .flat_map(|&t| states.zs.iter().map(move |&z| (z, t)))
        .collect()
}

fn strategy_rows(rows: &[StrategyRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![num(r.z), num(r.t), num(r.monotone_pi), num(r.mv_pi), num(r.ratio)])
        .collect()
}

/// Largest relative deviation of the ratio column from its first entry.
fn ratio_spread(rows: &[StrategyRow]) -> f64 {
    let Some(first) = rows.iter().map(|r| r.ratio).find(|r| r.is_finite()) else {
        return 0.0;
    };
    rows.iter()
        .filter(|r| r.ratio.is_finite())
        .fold(0.0, |m, r| m.max((r.ratio - first).abs() / first.abs().max(1e-300)))
}

pub fn cmd_compare_mv(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.grid)?;
    let (er, er2, var, er_se) = r_moments(cfg, m, &sol, cfg.compare.moments)?;
    let a = cfg.anchor;
    let (theta, derived) = match cfg.theta {
        Some(t) => (t, false),
        None => (theta_equivalence(&sol, &a, er, var)?, true),
    };
    let mv = MeanVarianceSolution::new(a.x0, theta, er, er2)?;
    let fields = ControlFields::new(&sol, m, a)?;
    let c = cfg.compare;
    let points = comparison_points(&sol, c.n_z, c.n_t, c.margin);
    let x = c.x.unwrap_or(a.x0 + 1.0);
    let rows = compare_strategies(&fields, x, theta, er, var, &points)?;
    write_csv(
        &mut report,
        out,
        "compare_mv.csv",
        &["z", "t", "monotone_pi", "mv_pi", "ratio"],
        strategy_rows(&rows),
    )?;
    let gap = max_relative_gap(&rows, 1e-12);
    let spread = ratio_spread(&rows);
    write_summary(
        &mut report,
        out,
        "compare_mv_summary.csv",
        &[
            ("ER", num(er)),
            ("ER_se", num(er_se)),
            ("ER2", num(er2)),
            ("VarR", num(var)),
            ("A_star", num(mv.a_star)),
            ("gamma_star", num(mv.gamma_star)),
            ("theta", num(theta)),
            ("theta_source", if derived { "intercept" } else { "config" }.into()),
            ("wealth", num(x)),
            ("max_relative_gap", num(gap)),
            ("ratio_spread", num(spread)),
        ],
    )?;
    report.note(format!(
        "ER = {er:.8}, VarR = {var:.8}, A* = {:.8}, gamma* = {:.8}, theta = {theta:.10}",
        mv.a_star, mv.gamma_star
    ));
    let tol = cfg.tolerances.strategy;
    if derived {
        report.check(
            "row-wise strategy equality",
            gap <= tol,
            format!("{} rows, max relative gap {gap:.2e}, tolerance {tol:.0e}", rows.len()),
        );
    } else {
        report.check(
            "constant strategy ratio",
            spread <= tol,
            format!("{} rows, ratio spread {spread:.2e}, tolerance {tol:.0e}", rows.len()),
        );
    }
    Ok(report)
}

pub fn cmd_strategy(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let m = &cfg.model;
    let sol = solve(m, &cfg.grid)?;
    let fields = ControlFields::new(&sol, m, cfg.anchor)?;
    let y = cfg.anchor.y0;
    let points = comparison_points(&sol, cfg.grid.n_z, 11, 0);
    let mut rows = Vec::with_capacity(points.len());
    for (z, t) in points {
        let (e1, e2) = fields.optimal_eta(z, t)?;
        rows.push(vec![
            num(z),
            num(t),
            num(fields.optimal_pi(y, z, t)?),
            num(e1),
            num(e2),
            num(fields.zeta(z, t)?),
        ]);
    }
    write_csv(&mut report, out, "strategy.csv", &["z", "t", "pi", "eta1", "eta2", "zeta"], rows)?;
    report.note(format!("controls at y = {y}"));
    Ok(report)
}

/// Market of the worked Black–Scholes example.
pub const EXAMPLE_LAMBDA: f64 = 0.4;
pub const EXAMPLE_SIGMA: f64 = 0.2;

pub fn example_model(r: f64, rho: f64) -> Result<FactorMarketModel, CliError> {
    Ok(FactorMarketModel::new(
        ModelFamily::black_scholes(r, EXAMPLE_LAMBDA, EXAMPLE_SIGMA),
        r,
        rho,
        1.0,
    )?)
}

/// Runs the constant-coefficient example end to end: value surface,
/// closed-form moments, the risk-aversion match `theta = 1 / (4 y0)`, the
/// strategy table and simulated moments.
pub fn cmd_example_bs(anchor: Anchor, mc: &McConfig, out: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let model = example_model(0.02, 0.5)?;
    let grid = GridSpec::new(-6.0, 6.0, 401, 401)?;
    let t_h = model.horizon;
    let l2t = EXAMPLE_LAMBDA * EXAMPLE_LAMBDA * t_h;
    let sol = solve(&model, &grid)?;
    let g_exact = -l2t.exp();
    let surface_err = (0..grid.n_z).fold(0.0f64, |w, i| w.max((sol.g.at(i, 0) / g_exact - 1.0).abs()));
    report.check(
        "value surface",
        surface_err <= 1e-4,
        format!("max relative error of G(z, 0) against -exp(lambda^2 T) = {g_exact:.10}: {surface_err:.2e}"),
    );

    let (er, er2, var) = black_scholes_moments(EXAMPLE_LAMBDA, t_h);
    let target = 1.0 / (4.0 * anchor.y0);
    let theta_closed = theta_from_intercept(anchor.y0, g_exact, er, var)?;
    let theta_grid = theta_equivalence(&sol, &anchor, er, var)?;
    let theta_ok = (theta_closed - target).abs() <= 1e-10;
    report.note(format!(
        "theta = {theta_closed:.12} vs 1/(4 y0) = {target:.12} (grid G0 gives {theta_grid:.12})"
    ));
    report.check(
        "theta = 1/(4 y0)",
        theta_ok,
        format!("|difference| = {:.2e}", (theta_closed - target).abs()),
    );

    let fields = ControlFields::new(&sol, &model, anchor)?;
    let points = comparison_points(&sol, 11, 6, 40);
    let x = anchor.x0 + 1.0;
    let rows = compare_strategies(&fields, x, target, er, var, &points)?;
    let gap = max_relative_gap(&rows, 1e-12);
    let formula = -(x - anchor.x0 - 2.0 * anchor.y0 * l2t.exp()) * EXAMPLE_LAMBDA / EXAMPLE_SIGMA;
    let formula_gap = rows
        .iter()
        .fold(0.0f64, |w, r| w.max((r.monotone_pi / formula - 1.0).abs()));
    write_csv(
        &mut report,
        out,
        "example_bs_compare.csv",
        &["z", "t", "monotone_pi", "mv_pi", "ratio"],
        strategy_rows(&rows),
    )?;
    report.check(
        "row-wise strategy equality",
        gap <= 1e-6,
        format!("{} rows, max relative gap {gap:.2e}", rows.len()),
    );
    report.check(
        "closed-form portfolio",
        formula_gap <= 1e-6,
        format!("-(x - x0 - 2 y0 e^(lambda^2 T)) lambda / sigma = {formula:.8}, max relative gap {formula_gap:.2e}"),
    );

    let sim = simulate_r(&model, &sol, anchor.z0, mc)?;
    let er_ok = within_se(&sim.er, er, 3.0);
    let er2_ok = within_se(&sim.er2, er2, 3.0);
    let var_ok = (sim.var_r - var).abs() <= 3.0 * sim.var_r_se + 1e-15;
    report.check(
        "simulated moments",
        er_ok && er2_ok && var_ok,
        format!(
            "ER {:.6} +- {:.1e} (exact {er:.6}), ER2 {:.6} +- {:.1e}, VarR {:.3e} +- {:.1e} (exact {var:.3e})",
            sim.er.mean, sim.er.std_error, sim.er2.mean, sim.er2.std_error, sim.var_r, sim.var_r_se
        ),
    );
    let mv = MeanVarianceSolution::new(anchor.x0, target, er, er2)?;
    write_summary(
        &mut report,
        out,
        "example_bs.csv",
        &[
            ("G0", num(sol.eval_g(anchor.z0, anchor.t0)?.0)),
            ("G0_exact", num(g_exact)),
            ("ER", num(er)),
            ("ER2", num(er2)),
            ("VarR", num(var)),
            ("ER_simulated", num(sim.er.mean)),
            ("ER_simulated_se", num(sim.er.std_error)),
            ("VarR_simulated", num(sim.var_r)),
            ("VarR_simulated_se", num(sim.var_r_se)),
            ("theta", num(theta_closed)),
            ("theta_grid", num(theta_grid)),
            ("theta_target", num(target)),
            ("A_star", num(mv.a_star)),
            ("gamma_star", num(mv.gamma_star)),
            ("max_relative_gap", num(gap)),
        ],
    )?;
    Ok(report)
}
