//! Command implementations and report writers.

use std::fs;
use std::path::Path;

use latent_ipw::diagnostics::{falsification_run, BalanceReport, OverlapReport};
use latent_ipw::io::{fmt_f64, load_panel, write_table};
use latent_ipw::pipeline::{estimate, Estimation, PipelineOptions, RankPolicy};
use latent_ipw::propensity::beta_variance;
use latent_ipw::simulation::{monte_carlo, Case, MonteCarloResult, SimScenario};
use latent_ipw::PanelData;
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig};
use crate::CliError;

fn core(stage: &'static str) -> impl Fn(latent_ipw::Error) -> CliError {
    move |source| CliError::Core { stage, source }
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })?;
    write_table(file, header, rows).map_err(core("write_report"))
}

fn options(cfg: &RunConfig) -> PipelineOptions {
    PipelineOptions {
        rank: cfg.rank,
        bins: cfg.bins,
    }
}

fn rank_policy_json(policy: RankPolicy) -> Value {
    match policy {
        RankPolicy::Fixed(r) => json!({ "policy": "fixed", "r": r }),
        RankPolicy::InfoCriterion { r_max } => json!({ "policy": "ic_select", "r_max": r_max }),
    }
}

fn load(cfg: &RunConfig) -> Result<PanelData, CliError> {
    let data = cfg.data.as_ref().expect("data section validated for this mode");
    load_panel(&data.panel, &data.roster, &data.treatment_date, data.kind).map_err(core("load_panel"))
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|source| CliError::Output {
        path: cfg.out.clone(),
        source,
    })?;
    match cfg.mode {
        Mode::Estimate => cmd_estimate(cfg),
        Mode::Balance => cmd_balance(cfg),
        Mode::Falsify => cmd_falsify(cfg),
        Mode::Simulate => cmd_simulate(cfg),
    }
}

fn balance_json(b: &BalanceReport) -> Value {
    json!({
        "rows": b.rows,
        "max_asd_weighted": b.max_asd_weighted,
        "threshold": b.threshold,
        "any_flagged": b.any_flagged(),
    })
}

fn write_balance_csv(path: &Path, b: &BalanceReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = b
        .rows
        .iter()
        .map(|r| {
            vec![
                r.loading.to_string(),
                fmt_f64(r.asd_unweighted),
                fmt_f64(r.asd_weighted),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["loading", "asd_unweighted", "asd_weighted", "flagged"], &rows)
}

fn write_overlap_csv(path: &Path, o: &OverlapReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..o.treated_counts.len())
        .map(|k| {
            vec![
                fmt_f64(o.edges[k]),
                fmt_f64(o.edges[k + 1]),
                o.treated_counts[k].to_string(),
                o.control_counts[k].to_string(),
            ]
        })
        .collect();
    write_csv(path, &["bin_low", "bin_high", "treated", "control"], &rows)
}

fn estimation_json(panel: &PanelData, est: &Estimation, cfg: &RunConfig) -> Result<Value, CliError> {
    let bv = beta_variance(&est.propensity, &est.factor_fit).map_err(core("beta_variance"))?;
    let ids = panel.unit_ids();
    let extreme: Vec<&str> = est.propensity.extreme_units.iter().map(|&i| ids[i].as_str()).collect();
    let att = &est.att;
    Ok(json!({
        "panel": {
            "n_units": panel.n_units(),
            "n_treated": panel.n_treated(),
            "n_pre_periods": panel.n_pre_periods(),
            "first_period": panel.time_labels().first(),
            "treatment_period": panel.time_labels().last(),
        },
        "rank": {
            "requested": rank_policy_json(cfg.rank),
            "selected": est.rank(),
            "information_criteria": est.ic,
            "eigenvalues": est.factor_fit.eigenvalues,
            "near_tie": est.factor_fit.near_tie,
        },
        "propensity": {
            "beta": est.propensity.beta.as_slice(),
            "se_adjusted": bv.se.as_slice(),
            "converged": est.propensity.converged,
            "iterations": est.propensity.iterations,
            "loglik": est.propensity.loglik,
            "extreme_units": extreme,
        },
        "att": {
            "tau_att": att.tau_att,
            "tau1": att.tau1,
            "tau0": att.tau0,
            "se": att.se,
            "ci_low": att.ci_low,
            "ci_high": att.ci_high,
            "p_value": att.p_value,
            "t_stat": att.t_stat(),
        },
        "balance": balance_json(&est.balance),
        "overlap": est.overlap,
    }))
}

fn write_units_csv(path: &Path, panel: &PanelData, est: &Estimation) -> Result<(), CliError> {
    let weights = est.propensity.att_weights();
    let rows: Vec<Vec<String>> = (0..panel.n_units())
        .map(|i| {
            vec![
                panel.unit_ids()[i].clone(),
                u8::from(panel.treated()[i]).to_string(),
                fmt_f64(est.propensity.scores[i]),
                fmt_f64(weights[i]),
                fmt_f64(est.att.influence[i]),
            ]
        })
        .collect();
    write_csv(path, &["unit_id", "treated", "score", "weight", "influence"], &rows)
}

fn cmd_estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let est = estimate(&panel, &options(cfg)).map_err(core("estimate"))?;
    write_json(&cfg.out.join("estimate.json"), &estimation_json(&panel, &est, cfg)?)?;
    write_units_csv(&cfg.out.join("units.csv"), &panel, &est)?;
    write_balance_csv(&cfg.out.join("balance.csv"), &est.balance)?;
    write_overlap_csv(&cfg.out.join("overlap.csv"), &est.overlap)
}

fn cmd_balance(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let est = estimate(&panel, &options(cfg)).map_err(core("estimate"))?;
    let report = json!({
        "rank": est.rank(),
        "balance": balance_json(&est.balance),
        "overlap": est.overlap,
    });
    write_json(&cfg.out.join("balance.json"), &report)?;
    write_balance_csv(&cfg.out.join("balance.csv"), &est.balance)?;
    write_overlap_csv(&cfg.out.join("overlap.csv"), &est.overlap)
}

fn cmd_falsify(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let mut opts = options(cfg);
    if cfg.freeze_rank {
        let main = estimate(&panel, &opts).map_err(core("estimate"))?;
        opts.rank = RankPolicy::Fixed(main.rank());
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut table = vec![vec!["ATT".to_string()], vec!["SE".to_string()], vec!["p-value".to_string()]];
    for date in &cfg.falsify_dates {
        let idx = panel
            .time_labels()
            .iter()
            .position(|d| d == date)
            .ok_or_else(|| CliError::Config(format!("falsification date {date} is not a period of the panel")))?;
        let res = falsification_run(&panel, idx + 1, &opts).map_err(core("falsification_run"))?;
        let att = &res.estimation.att;
        rows.push(vec![
            date.clone(),
            res.period_index.to_string(),
            res.estimation.rank().to_string(),
            fmt_f64(att.tau_att),
            fmt_f64(att.se),
            fmt_f64(att.p_value),
            fmt_f64(att.ci_low),
            fmt_f64(att.ci_high),
            fmt_f64(res.estimation.balance.max_asd_weighted),
            res.estimation.balance.any_flagged().to_string(),
        ]);
        table[0].push(fmt_f64(att.tau_att));
        table[1].push(fmt_f64(att.se));
        table[2].push(fmt_f64(att.p_value));
        reports.push(json!({
            "date": date,
            "period_index": res.period_index,
            "rank": res.estimation.rank(),
            "information_criteria": res.estimation.ic,
            "att": {
                "tau_att": att.tau_att,
                "se": att.se,
                "ci_low": att.ci_low,
                "ci_high": att.ci_high,
                "p_value": att.p_value,
            },
            "balance": balance_json(&res.estimation.balance),
            "overlap": res.estimation.overlap,
        }));
    }
    write_csv(
        &cfg.out.join("falsify.csv"),
        &[
            "date",
            "period_index",
            "rank",
            "att",
            "se",
            "p_value",
            "ci_low",
            "ci_high",
            "max_asd_weighted",
            "any_flagged",
        ],
        &rows,
    )?;
    let mut header = vec!["statistic"];
    header.extend(cfg.falsify_dates.iter().map(String::as_str));
    write_csv(&cfg.out.join("falsify_table.csv"), &header, &table)?;
    write_json(
        &cfg.out.join("falsify.json"),
        &json!({ "rank": rank_policy_json(opts.rank), "freeze_rank": cfg.freeze_rank, "dates": reports }),
    )
}

fn scenarios(cfg: &RunConfig) -> Result<Vec<SimScenario>, CliError> {
    let sim = &cfg.simulation;
    let cases = sim.cases.clone().unwrap_or_else(|| vec![1, 2]);
    let rows = if sim.beta.is_some() {
        vec![0]
    } else {
        sim.scenarios.clone().unwrap_or_else(|| vec![1, 2, 3, 4])
    };
    let mut out = Vec::new();
    for &c in &cases {
        let case = Case::from_number(c).map_err(|e| CliError::Config(e.to_string()))?;
        for &s in &rows {
            let mut scn = SimScenario::table(case, s.max(1)).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(beta) = sim.beta {
                scn.scenario = 0;
                scn.beta = beta;
            }
            scn.n_units = sim.n_units.unwrap_or(scn.n_units);
            scn.n_periods = sim.n_periods.unwrap_or(scn.n_periods);
            scn.phi = sim.phi.unwrap_or(scn.phi);
            scn.tau_att = sim.tau_att.unwrap_or(scn.tau_att);
            scn.n_rep = sim.n_rep.unwrap_or(scn.n_rep);
            scn.seed = cfg.seed;
            scn.fixed_design = cfg.fixed_design;
            scn.validate().map_err(|e| CliError::Config(e.to_string()))?;
            out.push(scn);
        }
    }
    Ok(out)
}

fn summary_row(r: &MonteCarloResult) -> Vec<String> {
    let s = &r.scenario;
    let mut row = vec![s.case.number().to_string(), s.scenario.to_string()];
    row.extend(s.beta.iter().map(|&b| fmt_f64(b)));
    row.push(fmt_f64(r.att_rmse));
    row.push(fmt_f64(r.coverage_95));
    row.push(fmt_f64(r.loading_rmse_joint));
    row.extend(r.beta_rmse.iter().map(|&b| fmt_f64(b)));
    row.push(fmt_f64(r.mean_se));
    row.push(fmt_f64(r.sd_tau));
    row.push(r.records.len().to_string());
    row.push(r.n_failed.to_string());
    row
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut summary = Vec::new();
    let mut reps = Vec::new();
    let mut asd_rows = Vec::new();
    let mut docs = Vec::new();
    for scn in scenarios(cfg)? {
        let res = monte_carlo(&scn).map_err(core("monte_carlo"))?;
        let (c, s) = (scn.case.number().to_string(), scn.scenario.to_string());
        for rec in &res.records {
            let mut row = vec![c.clone(), s.clone(), rec.rep.to_string(), rec.failure.clone().unwrap_or_default()];
            match &rec.stats {
                Some(st) => {
                    row.push(fmt_f64(st.tau_hat));
                    row.push(fmt_f64(st.se));
                    row.push(st.covered.to_string());
                    row.push(fmt_f64(st.loading_sq_err));
                    row.extend(st.beta_hat.iter().map(|&b| fmt_f64(b)));
                    for j in 0..3 {
                        asd_rows.push(vec![
                            c.clone(),
                            s.clone(),
                            rec.rep.to_string(),
                            (j + 1).to_string(),
                            fmt_f64(st.asd_unweighted[j]),
                            fmt_f64(st.asd_weighted[j]),
                        ]);
                    }
                }
                None => row.extend(std::iter::repeat_n(String::new(), 8)),
            }
            reps.push(row);
        }
        summary.push(summary_row(&res));
        docs.push(json!({
            "case": scn.case.number(),
            "scenario": scn.scenario,
            "design": scn,
            "att_rmse": res.att_rmse,
            "coverage_95": res.coverage_95,
            "loading_rmse_joint": res.loading_rmse_joint,
            "beta_rmse": res.beta_rmse,
            "mean_se": res.mean_se,
            "sd_tau": res.sd_tau,
            "mean_asd_unweighted": res.mean_asd_unweighted,
            "mean_asd_weighted": res.mean_asd_weighted,
            "mean_treated_share": res.mean_treated_share,
            "n_rep": res.records.len(),
            "n_failed": res.n_failed,
        }));
    }
    write_csv(
        &cfg.out.join("summary.csv"),
        &[
            "case",
            "scenario",
            "beta0",
            "beta1",
            "beta2",
            "beta3",
            "att_rmse",
            "coverage_95",
            "loading_rmse",
            "beta0_rmse",
            "beta1_rmse",
            "beta2_rmse",
            "beta3_rmse",
            "mean_se",
            "sd_tau",
            "n_rep",
            "n_failed",
        ],
        &summary,
    )?;
    write_csv(
        &cfg.out.join("replications.csv"),
        &[
            "case",
            "scenario",
            "rep",
            "failure",
            "tau_hat",
            "se",
            "covered",
            "loading_sq_err",
            "beta0_hat",
            "beta1_hat",
            "beta2_hat",
            "beta3_hat",
        ],
        &reps,
    )?;
    write_csv(
        &cfg.out.join("asd.csv"),
        &["case", "scenario", "rep", "loading", "asd_unweighted", "asd_weighted"],
        &asd_rows,
    )?;
    write_json(&cfg.out.join("summary.json"), &json!({ "seed": cfg.seed, "scenarios": docs }))
}
