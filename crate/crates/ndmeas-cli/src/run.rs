//! Subcommand implementations. Every run writes its outputs atomically into
//! the output directory and finishes with a digest manifest.

use crate::args::{Method, ResolvedConfig, RunArgs, SweepArgs};
use crate::manifest::RunWriter;
use crate::CliError;
use ndmeas::channels::{
    assumption_constants, check_map_commutation, check_unital_images_commute,
    completeness_residual, joint_spectral_projectors, stationary_state, D1Estimation,
};
use ndmeas::inference::{
    error_probability, estimation_error_bounds, purification_analysis,
    sanov_certificate, ErrorMethod,
};
use ndmeas::jumps::{
    default_epsilon_r, history_sets_probability, markov_comparison_from_cycles, run_cycles,
    HistoryMethod, JumpError,
};
use ndmeas::linalg::DensityMatrix;
use ndmeas::modelfile::{matrix_to_data, write_series, write_trajectories, ModelDocument};
use ndmeas::trajectories::{clt_diagnostic, sample_batch, sample_trajectory_with_states};
use serde::Serialize;
use std::path::Path;

fn load_document(path: &Path) -> Result<ModelDocument, CliError> {
    ModelDocument::load(path).map_err(CliError::from)
}

fn require_out(cfg: &ResolvedConfig) -> Result<&Path, CliError> {
    cfg.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
}

#[derive(Serialize)]
struct CheckItem {
    name: String,
    ok: bool,
    detail: String,
}

#[derive(Serialize)]
struct ValidationReport {
    model: String,
    pass: bool,
    checks: Vec<CheckItem>,
}

pub fn cmd_validate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let doc = load_document(&cfg.model)?;
    let mut checks = Vec::new();
    let mut push = |name: &str, result: Result<String, String>| {
        let (ok, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(CheckItem {
            name: name.to_string(),
            ok,
            detail,
        });
    };

    let model = match doc.to_model(cfg.strict) {
        Ok(m) => {
            push("model_invariants", Ok(format!(
                "dim {}, {} facts, {} outcomes",
                m.dim(),
                m.n_facts(),
                m.n_outcomes()
            )));
            Some(m)
        }
        Err(e) => {
            push("model_invariants", Err(e.to_string()));
            None
        }
    };

    if let Some(model) = &model {
        let maps = model.maps();
        let completeness = completeness_residual(&maps);
        push(
            "kraus_completeness",
            if completeness <= 1e-10 {
                Ok(format!("residual {completeness:.3e}"))
            } else {
                Err(format!("residual {completeness:.3e} above 1e-10"))
            },
        );
        let commutation = check_map_commutation(&maps)
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b));
        push(
            "map_commutation",
            if commutation <= 1e-12 {
                Ok(format!("max residual {commutation:.3e}"))
            } else {
                Err(format!("max residual {commutation:.3e} above 1e-12"))
            },
        );
        let unital = check_unital_images_commute(&maps);
        push(
            "unital_images_commute",
            if unital <= 1e-12 {
                Ok(format!("residual {unital:.3e}"))
            } else {
                Err(format!("residual {unital:.3e} above 1e-12"))
            },
        );
        match joint_spectral_projectors(&maps) {
            Err(e) => push("joint_spectral_projectors", Err(e.to_string())),
            Ok((family, table)) => {
                let mut worst = 0.0f64;
                for nu in 0..model.n_facts() {
                    let dist = model.cond_dist(nu);
                    let gap = (0..family.len())
                        .map(|cand| {
                            (0..model.n_outcomes())
                                .map(|xi| (table[xi][cand] - dist[xi]).abs())
                                .fold(0.0f64, f64::max)
                        })
                        .fold(f64::INFINITY, f64::min);
                    worst = worst.max(gap);
                }
                push(
                    "joint_spectral_round_trip",
                    if family.len() == model.n_facts() && worst <= 1e-8 {
                        Ok(format!("{} facts recovered, worst p gap {worst:.3e}", family.len()))
                    } else {
                        Err(format!(
                            "recovered {} facts (expected {}), worst p gap {worst:.3e}",
                            family.len(),
                            model.n_facts()
                        ))
                    },
                );
            }
        }
        match stationary_state(&maps) {
            Err(e) => push("stationary_state", Err(e.to_string())),
            Ok((_, faithful)) => push(
                "stationary_state",
                if faithful {
                    Ok("faithful fixed point".into())
                } else {
                    // Without a faithful fixed point the joint fact
                    // decomposition is not guaranteed; report, don't fail.
                    Ok("warning: fixed point not faithful; joint diagonalization not guaranteed".into())
                },
            ),
        }
    }

    match doc.to_cycle_config(cfg.strict) {
        Ok(None) => {}
        Ok(Some(cycle)) => push(
            "cycle_section",
            Ok(format!(
                "lambda1 {}, lambda2 {}, M {}",
                cycle.lambda1, cycle.lambda2, cycle.measurements
            )),
        ),
        Err(e) => push("cycle_section", Err(e.to_string())),
    }

    // load ∘ save is the identity on the numeric content.
    let reserialized: Result<ModelDocument, _> = serde_json::from_str(&doc.to_json_string());
    push(
        "round_trip",
        match reserialized {
            Ok(parsed) if parsed.to_json_string() == doc.to_json_string() => {
                Ok("save∘load is the identity".into())
            }
            _ => Err("document does not round-trip".into()),
        },
    );

    let pass = checks.iter().all(|c| c.ok);
    let report = ValidationReport {
        model: cfg.model.display().to_string(),
        pass,
        checks,
    };
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if let Some(out) = cfg.out.as_deref() {
        let mut writer = RunWriter::new(out, "validate")?;
        writer.emit_json("validate.json", &report)?;
        writer.finish(&cfg)?;
    }
    if !pass {
        let first = report.checks.iter().find(|c| !c.ok).unwrap();
        return Err(CliError::Check(format!("{}: {}", first.name, first.detail)));
    }
    Ok(())
}

pub fn cmd_simulate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let dynamics = doc.to_dynamics(cfg.strict)?;
    let rho0 = doc.initial_state()?;
    let mut writer = RunWriter::new(&out, "simulate")?;
    let length = cfg.k;
    if let Some(stride) = cfg.stride {
        let mut text = Vec::new();
        let mut states_lines = String::new();
        let mut records = Vec::with_capacity(cfg.n_traj);
        for i in 0..cfg.n_traj {
            let t = sample_trajectory_with_states(
                &dynamics, &rho0, length, stride, cfg.seed, i as u64,
            )
            .map_err(|e| CliError::Check(e.to_string()))?;
            for (k, rho) in t.states.as_ref().unwrap() {
                let line = serde_json::json!({
                    "stream": i,
                    "k": k,
                    "state": matrix_to_data(rho.matrix()),
                });
                states_lines.push_str(&line.to_string());
                states_lines.push('\n');
            }
            records.push(t);
        }
        write_trajectories(&mut text, &records, dynamics.alphabet())?;
        writer.emit("trajectories.tsv", &text)?;
        writer.emit("states.jsonl", states_lines.as_bytes())?;
    } else {
        let records = sample_batch(&dynamics, &rho0, length, cfg.n_traj, cfg.seed)
            .map_err(|e| CliError::Check(e.to_string()))?;
        let mut text = Vec::new();
        write_trajectories(&mut text, &records, dynamics.alphabet())?;
        writer.emit("trajectories.tsv", &text)?;
    }
    writer.finish(&cfg)?;
    Ok(())
}

pub fn cmd_estimate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let dynamics = doc.to_dynamics(cfg.strict)?;
    let rho0 = doc.initial_state()?;
    let method = match cfg.method {
        Method::Exact => ErrorMethod::Exact,
        Method::Mc => ErrorMethod::MonteCarlo,
    };
    let report = error_probability(&dynamics, &rho0, cfg.k, cfg.r, method, cfg.n_traj, cfg.seed)
        .map_err(|e| CliError::Check(e.to_string()))?;
    let mut writer = RunWriter::new(&out, "estimate")?;
    writer.emit_json("estimate.json", &report)?;
    let mut rows = Vec::new();
    for (nu, eps) in report.per_nu.iter().enumerate() {
        rows.push(vec![nu as f64, *eps]);
    }
    let mut table = Vec::new();
    write_series(&mut table, &["nu", "epsilon"], &rows)?;
    writer.emit("epsilon.tsv", &table)?;
    writer.finish(&cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    constants: ndmeas::channels::AssumptionConstants,
    certificates: Vec<ndmeas::inference::SanovCertificate>,
    /// Fitted decay pair used in the bounds (uniform over facts).
    c: f64,
    a: f64,
    k: usize,
    r: usize,
    bounds_at_r: ndmeas::inference::ErrorBounds,
}

pub fn cmd_bounds(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let dynamics = doc.to_dynamics(cfg.strict)?;
    let model = dynamics
        .reference()
        .ok_or_else(|| CliError::Check("dynamics carries no reference model".into()))?
        .clone();
    let mode = if dynamics.analytic_d1().is_some() {
        D1Estimation::Analytic
    } else {
        D1Estimation::Sampled {
            n_samples: 128,
            seed: cfg.seed,
        }
    };
    let constants =
        assumption_constants(&dynamics, mode).map_err(|e| CliError::Check(e.to_string()))?;
    let grid: Vec<usize> = (1..=10).map(|i| i * 20).collect();
    let certificates: Vec<_> = (0..model.n_facts())
        .map(|nu| sanov_certificate(&model, nu, None, &grid, cfg.n_traj.max(1000), cfg.seed))
        .collect::<Result<_, _>>()
        .map_err(|e: ndmeas::inference::InferenceError| CliError::Check(e.to_string()))?;
    let c = certificates.iter().map(|s| s.c).fold(0.0f64, f64::max).max(1.0);
    let a = certificates.iter().map(|s| s.a).fold(0.0f64, f64::max);
    let bounds_at_r = estimation_error_bounds(&constants, c, a, cfg.r)
        .map_err(|e| CliError::Check(e.to_string()))?;
    let mut rows = Vec::new();
    for r in 1..=cfg.r.max(1) {
        let b = estimation_error_bounds(&constants, c, a, r)
            .map_err(|e| CliError::Check(e.to_string()))?;
        rows.push(vec![r as f64, b.nd_error, b.error, b.nd_mass, b.mass]);
    }
    let report = BoundsReport {
        constants,
        certificates,
        c,
        a,
        k: cfg.k,
        r: cfg.r,
        bounds_at_r,
    };
    let mut writer = RunWriter::new(&out, "bounds")?;
    writer.emit_json("bounds.json", &report)?;
    let mut table = Vec::new();
    write_series(
        &mut table,
        &["r", "nd_error", "error", "nd_mass", "mass"],
        &rows,
    )?;
    writer.emit("bounds.tsv", &table)?;
    writer.finish(&cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct PurifyReport {
    n_traj: usize,
    length: usize,
    delta: Vec<Vec<f64>>,
    born_weights: Vec<f64>,
    theta_counts: Vec<usize>,
    theta_freqs: Vec<f64>,
    unresolved: usize,
    mean_final_distance: Option<f64>,
}

pub fn cmd_purify(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let dynamics = doc.to_dynamics(cfg.strict)?;
    let model = dynamics
        .reference()
        .ok_or_else(|| CliError::Check("dynamics carries no reference model".into()))?
        .clone();
    let rho0 = doc.initial_state()?;
    let length = cfg.k;
    let stride = cfg.stride.unwrap_or(1);
    let mut theta_counts = vec![0usize; model.n_facts()];
    let mut unresolved = 0usize;
    let mut distance_sum = 0.0;
    let mut distance_n = 0usize;
    let mut mean_offdiag: std::collections::BTreeMap<usize, (usize, Vec<f64>)> =
        std::collections::BTreeMap::new();
    let mut pairs = Vec::new();
    for i in 0..cfg.n_traj {
        let t = sample_trajectory_with_states(&dynamics, &rho0, length, stride, cfg.seed, i as u64)
            .map_err(|e| CliError::Check(e.to_string()))?;
        let report =
            purification_analysis(&t, &model).map_err(|e| CliError::Check(e.to_string()))?;
        pairs = report.pairs.clone();
        match report.theta {
            Some(nu) => theta_counts[nu] += 1,
            None => unresolved += 1,
        }
        if let Some(d) = report.final_distance {
            distance_sum += d;
            distance_n += 1;
        }
        for (k, norms) in &report.offdiag {
            let entry = mean_offdiag
                .entry(*k)
                .or_insert_with(|| (0, vec![0.0; norms.len()]));
            entry.0 += 1;
            for (slot, v) in norms.iter().enumerate() {
                entry.1[slot] += v;
            }
        }
    }
    let delta = (0..model.n_facts())
        .map(|a| {
            (0..model.n_facts())
                .map(|b| if a == b { 1.0 } else { model.coherence_decay(a, b) })
                .collect()
        })
        .collect();
    let report = PurifyReport {
        n_traj: cfg.n_traj,
        length,
        delta,
        born_weights: model.born_weights(&rho0),
        theta_freqs: theta_counts
            .iter()
            .map(|&c| c as f64 / cfg.n_traj.max(1) as f64)
            .collect(),
        theta_counts,
        unresolved,
        mean_final_distance: (distance_n > 0).then(|| distance_sum / distance_n as f64),
    };
    let mut writer = RunWriter::new(&out, "purify")?;
    writer.emit_json("purify.json", &report)?;
    let mut rows = Vec::new();
    for (k, (count, sums)) in &mean_offdiag {
        let mut row = vec![*k as f64];
        row.extend(sums.iter().map(|s| s / *count as f64));
        rows.push(row);
    }
    let mut header = vec!["k".to_string()];
    header.extend(
        pairs
            .iter()
            .map(|(a, b)| format!("offdiag_{}_{}", model.projectors().label(*a), model.projectors().label(*b))),
    );
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Vec::new();
    write_series(&mut table, &header_refs, &rows)?;
    writer.emit("offdiag.tsv", &table)?;
    if let Some(h_grid) = &cfg.h_grid {
        let mut clt_reports = Vec::new();
        for nu in 0..model.n_facts() {
            let p = model.projectors().projector(nu);
            let rank = model.projectors().rank(nu) as f64;
            let conditioned = DensityMatrix::new(p.scale(1.0 / rank))
                .map_err(|e| CliError::Check(e.to_string()))?;
            let report = clt_diagnostic(
                &dynamics,
                &conditioned,
                0,
                model.cond_prob(0, nu),
                length,
                h_grid,
                cfg.n_traj,
                cfg.seed ^ (nu as u64).wrapping_mul(0x9E3779B97F4A7C15),
            )
            .map_err(|e| CliError::Check(e.to_string()))?;
            clt_reports.push(report);
        }
        writer.emit_json("clt.json", &clt_reports)?;
    }
    writer.finish(&cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct MarkovOutcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<ndmeas::jumps::MarkovComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    insufficient_resolved_transitions: Option<usize>,
}

pub fn cmd_jumps(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let cycle = doc
        .to_cycle_config(cfg.strict)?
        .ok_or_else(|| CliError::Check("model document has no cycle section".into()))?;
    let rho0 = doc.initial_state()?;
    let run = run_cycles(&cycle, &rho0, cfg.n_cycles, cfg.seed)
        .map_err(|e| CliError::Check(e.to_string()))?;
    let mut writer = RunWriter::new(&out, "jumps")?;
    let mut table = String::from("cycle\tnu_hat\ttie\tmax_weight\tblock_distance\n");
    for c in &run.jumps.cycles {
        table.push_str(&format!(
            "{}\t{}\t{}\t{:.16e}\t{:.16e}\n",
            c.cycle,
            cycle.model.projectors().label(c.nu_hat),
            c.tie,
            c.max_weight,
            c.block_distance
        ));
    }
    writer.emit("jumps.tsv", table.as_bytes())?;
    let satisfied = run
        .jumps
        .cycles
        .iter()
        .filter(|c| c.max_weight >= 1.0 - cfg.epsilon && c.block_distance <= cfg.epsilon)
        .count();
    let closeness = serde_json::json!({
        "epsilon": cfg.epsilon,
        "satisfied": satisfied,
        "total": cfg.n_cycles,
        "fraction": satisfied as f64 / cfg.n_cycles as f64,
        "pass": satisfied as f64 / cfg.n_cycles as f64 >= 1.0 - cfg.epsilon,
    });
    writer.emit_json("closeness.json", &closeness)?;
    let markov = match markov_comparison_from_cycles(&cycle, &run.jumps) {
        Ok(cmp) => MarkovOutcome {
            comparison: Some(cmp),
            insufficient_resolved_transitions: None,
        },
        Err(JumpError::InsufficientResolvedCycles { got, .. }) => MarkovOutcome {
            comparison: None,
            insufficient_resolved_transitions: Some(got),
        },
        Err(e) => return Err(CliError::Check(e.to_string())),
    };
    writer.emit_json("markov.json", &markov)?;
    writer.finish(&cfg)?;
    Ok(())
}

pub fn cmd_histories(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = args.resolve()?;
    let out = require_out(&cfg)?.to_path_buf();
    let doc = load_document(&cfg.model)?;
    let dynamics = doc.to_dynamics(cfg.strict)?;
    let rho0 = doc.initial_state()?;
    let method = match cfg.method {
        Method::Exact => HistoryMethod::Exact,
        Method::Mc => HistoryMethod::MonteCarlo,
    };
    if !cfg.epsilon_set {
        cfg.epsilon = default_epsilon_r(cfg.r);
        cfg.epsilon_set = true;
    }
    let report = history_sets_probability(
        &dynamics,
        &rho0,
        cfg.r,
        cfg.p,
        Some(cfg.epsilon),
        method,
        cfg.n_traj,
        cfg.seed,
    )
    .map_err(|e| CliError::Check(e.to_string()))?;
    let mut writer = RunWriter::new(&out, "histories")?;
    writer.emit_json("histories.json", &report)?;
    // The manifest records the effective ε_r so a rerun from its config
    // reproduces the run byte for byte.
    writer.finish(&cfg)?;
    Ok(())
}

/// Headline metric per command, used for the sweep table.
fn run_one(command: &str, args: &RunArgs) -> Result<f64, CliError> {
    match command {
        "estimate" => {
            cmd_estimate(args)?;
            let cfg = args.resolve()?;
            let text = std::fs::read_to_string(cfg.out.unwrap().join("estimate.json"))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Check(e.to_string()))?;
            Ok(v["total"].as_f64().unwrap_or(f64::NAN))
        }
        "jumps" => {
            cmd_jumps(args)?;
            let cfg = args.resolve()?;
            let text = std::fs::read_to_string(cfg.out.unwrap().join("closeness.json"))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Check(e.to_string()))?;
            Ok(v["fraction"].as_f64().unwrap_or(f64::NAN))
        }
        "histories" => {
            cmd_histories(args)?;
            let cfg = args.resolve()?;
            let text = std::fs::read_to_string(cfg.out.unwrap().join("histories.json"))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Check(e.to_string()))?;
            Ok(v["uncovered"].as_f64().unwrap_or(f64::NAN))
        }
        "bounds" => {
            cmd_bounds(args)?;
            let cfg = args.resolve()?;
            let text = std::fs::read_to_string(cfg.out.unwrap().join("bounds.json"))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Check(e.to_string()))?;
            Ok(v["bounds_at_r"]["error"].as_f64().unwrap_or(f64::NAN))
        }
        other => Err(CliError::Usage(format!(
            "sweep does not support the {other} command"
        ))),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base_cfg = args.run.resolve()?;
    let out = base_cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required for sweep".into()))?;
    let (param, values) = args
        .sweep
        .split_once(':')
        .ok_or_else(|| CliError::Usage("--sweep expects param:v1,v2,...".into()))?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("bad sweep value: {e}")))?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let mut writer = RunWriter::new(&out, "sweep")?;
    let mut rows = Vec::new();
    for &value in &values {
        let mut point = args.run.clone();
        let tag = format!("{param}_{value}");
        point.out = Some(out.join(tag.replace('.', "p")));
        match param {
            "k" => point.k = Some(value as usize),
            "r" => point.r = Some(value as usize),
            "p" => point.p = Some(value as usize),
            "n-traj" => point.n_traj = Some(value as usize),
            "n-cycles" => point.n_cycles = Some(value as usize),
            "epsilon" => point.epsilon = Some(value),
            "seed" => point.seed = Some(value as u64),
            other => {
                return Err(CliError::Usage(format!("unknown sweep parameter {other}")))
            }
        }
        let metric = run_one(&args.command, &point)?;
        rows.push(vec![value, metric]);
    }
    let mut table = Vec::new();
    write_series(&mut table, &[param, "metric"], &rows)?;
    writer.emit("sweep.tsv", &table)?;
    writer.finish(&base_cfg)?;
    Ok(())
}
