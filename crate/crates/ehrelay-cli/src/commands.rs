//! The six batch commands.

use std::path::{Path, PathBuf};

use ehrelay::finite_chain::{solve_threshold, FiniteChainSolution};
use ehrelay::model::{EnergyDistribution, Policy, SystemParams};
use ehrelay::optimizers::{
    alpha_t, optimize_dynamic, optimize_static, OptimizationResult,
};
use ehrelay::qbd_builder::{build_blocks, build_energy_matrices};
use ehrelay::qbd_solver::{self};
use ehrelay::simulator::{self, run, SimConfig, SimStats};
use rayon::prelude::*;
use serde_json::json;

use crate::config::Experiment;
use crate::output::{fmt_g12, print_header, write_csv, write_matrix_csv};
use crate::CliError;

pub struct CommonArgs {
    pub out: Option<PathBuf>,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub dump_matrices: bool,
}

/// Seed for the simulation attached to grid row `index`, spread so rows
/// stay independent and deterministic under any thread count.
fn row_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn dump_parameter_matrices(params: &SystemParams, alpha: f64, out: Option<&Path>) -> Result<(), CliError> {
    let dir = out
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let em = build_energy_matrices(params);
    write_matrix_csv(&dir.join("matrix_m.csv"), &em.m_tx)?;
    write_matrix_csv(&dir.join("matrix_t.csv"), &em.t_harvest)?;
    write_matrix_csv(&dir.join("matrix_b.csv"), &em.b_slot)?;
    let blocks = build_blocks(params, alpha);
    write_matrix_csv(&dir.join("blocks_b00.csv"), &blocks.b00)?;
    write_matrix_csv(&dir.join("blocks_b01.csv"), &blocks.b01)?;
    write_matrix_csv(&dir.join("blocks_a_up.csv"), &blocks.a_up)?;
    write_matrix_csv(&dir.join("blocks_a_same.csv"), &blocks.a_same)?;
    write_matrix_csv(&dir.join("blocks_a_down.csv"), &blocks.a_down)?;
    Ok(())
}

struct StaticRow {
    alpha: f64,
    solution: ehrelay::qbd_solver::QbdSolution,
    metrics: Option<ehrelay::qbd_solver::StaticMetrics>,
    sim: Option<SimStats>,
}

fn solve_static_row(
    experiment: &Experiment,
    args: &CommonArgs,
    alpha: f64,
    with_sim: bool,
    seed: u64,
) -> Result<StaticRow, CliError> {
    let solution = qbd_solver::solve(&experiment.params, alpha, args.tol, args.max_iter)
        .map_err(CliError::Core)?;
    let metrics = if solution.stable {
        Some(
            qbd_solver::static_metrics(&experiment.params, alpha, &solution)
                .map_err(CliError::Core)?,
        )
    } else {
        None
    };
    let sim = if with_sim && alpha < 1.0 {
        let config = SimConfig {
            seed,
            ..experiment.sim
        };
        Some(
            run(&experiment.params, &Policy::Static(alpha), &config)
                .map_err(CliError::Core)?,
        )
    } else {
        None
    };
    Ok(StaticRow {
        alpha,
        solution,
        metrics,
        sim,
    })
}

/// Analytic metrics over a decoding-probability grid, rows in grid order;
/// unstable points are flagged rather than erroring.
pub fn sweep_static(
    experiment: &Experiment,
    args: &CommonArgs,
    with_sim: bool,
) -> Result<(), CliError> {
    let grid: Vec<f64> = experiment
        .alpha_grid
        .clone()
        .unwrap_or_else(|| (0..=30).map(|i| i as f64 / 100.0).collect());
    if args.dump_matrices {
        dump_parameter_matrices(&experiment.params, grid[0], args.out.as_deref())?;
    }

    let rows: Vec<Result<StaticRow, CliError>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, alpha)| {
            solve_static_row(
                experiment,
                args,
                *alpha,
                with_sim,
                row_seed(experiment.sim.seed, i),
            )
        })
        .collect();

    let mut header = vec![
        "alpha",
        "spectral_radius",
        "stable",
        "mean_qd",
        "p_active",
        "p_block",
        "throughput",
        "delay",
    ];
    if with_sim {
        header.extend([
            "sim_throughput",
            "sim_throughput_se",
            "sim_delay",
            "sim_delay_se",
        ]);
    }
    let mut csv_rows = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row?;
        let mut record = vec![
            fmt_g12(row.alpha),
            fmt_g12(row.solution.spectral_radius),
            row.solution.stable.to_string(),
        ];
        match &row.metrics {
            Some(m) => record.extend([
                fmt_g12(row.solution.mean_qd),
                fmt_g12(m.p_active),
                fmt_g12(m.p_block),
                fmt_g12(m.throughput),
                fmt_g12(m.delay),
            ]),
            None => record.extend([
                "inf".to_string(),
                "nan".to_string(),
                "nan".to_string(),
                "nan".to_string(),
                "inf".to_string(),
            ]),
        }
        if with_sim {
            match &row.sim {
                Some(s) => record.extend([
                    fmt_g12(s.throughput),
                    fmt_g12(s.throughput_se),
                    fmt_g12(s.mean_delay),
                    fmt_g12(s.mean_delay_se),
                ]),
                None => record.extend(vec!["nan".to_string(); 4]),
            }
        }
        csv_rows.push(record);
    }

    let out = args
        .out
        .clone()
        .ok_or_else(|| CliError::Config("sweep-static needs --out <csv>".into()))?;
    write_csv(&out, &header, &csv_rows)?;
    print_header("sweep-static", experiment.sim.seed, Some(&out));
    Ok(())
}

fn write_optimization_json(
    command: &str,
    result: &OptimizationResult,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let body = json!({
        "seed": seed,
        "policy": result.best_policy,
        "objective": result.objective,
        "cooperation": result.cooperation,
        "evaluations": result.evaluations,
        "trace": result.search_trace,
    });
    match out {
        Some(path) => {
            std::fs::write(path, format!("{body:#}\n")).map_err(|e| {
                CliError::Config(format!("cannot write {}: {e}", path.display()))
            })?;
            print_header(command, seed, Some(path));
        }
        None => {
            print_header(command, seed, None);
            println!("{body:#}");
        }
    }
    Ok(())
}

pub fn run_optimize_static(experiment: &Experiment, args: &CommonArgs) -> Result<(), CliError> {
    if args.dump_matrices {
        dump_parameter_matrices(&experiment.params, 0.0, args.out.as_deref())?;
    }
    let result = optimize_static(&experiment.params, args.eps).map_err(CliError::Core)?;
    write_optimization_json(
        "optimize-static",
        &result,
        experiment.sim.seed,
        args.out.as_deref(),
    )
}

pub fn run_optimize_dynamic(
    experiment: &Experiment,
    args: &CommonArgs,
    sweep_csv: Option<&Path>,
) -> Result<(), CliError> {
    let result = optimize_dynamic(&experiment.params, args.eps).map_err(CliError::Core)?;
    if let Some(path) = sweep_csv {
        write_threshold_sweep(&experiment.params, path)?;
        print_header("optimize-dynamic sweep", experiment.sim.seed, Some(path));
    }
    write_optimization_json(
        "optimize-dynamic",
        &result,
        experiment.sim.seed,
        args.out.as_deref(),
    )
}

/// Exact metrics over the whole threshold family on a 21-point beta grid.
fn write_threshold_sweep(params: &SystemParams, path: &Path) -> Result<(), CliError> {
    let bound = params.n_cap - params.energy.b_max() + 1;
    let grid: Vec<(usize, f64)> = (bound..=params.n_cap)
        .flat_map(|e_th| (0..=20).map(move |s| (e_th, s as f64 / 20.0)))
        .collect();
    let solutions: Vec<Result<FiniteChainSolution, CliError>> = grid
        .par_iter()
        .map(|(e_th, beta)| {
            solve_threshold(
                params,
                &Policy::Threshold {
                    e_th: *e_th,
                    beta: *beta,
                },
            )
            .map_err(CliError::Core)
        })
        .collect();
    let mut rows = Vec::with_capacity(grid.len());
    for ((e_th, beta), solution) in grid.iter().zip(solutions) {
        let s = solution?;
        rows.push(vec![
            e_th.to_string(),
            fmt_g12(*beta),
            fmt_g12(s.alpha_bar),
            fmt_g12(s.mean_qd),
            fmt_g12(s.throughput),
            fmt_g12(s.delay),
            fmt_g12(s.p_block),
        ]);
    }
    write_csv(
        path,
        &[
            "e_th",
            "beta",
            "alpha_bar",
            "mean_qd",
            "throughput",
            "delay",
            "p_block",
        ],
        &rows,
    )
}

/// Simulates each configured policy; one CSV summary row per policy.
pub fn simulate(
    experiment: &Experiment,
    args: &CommonArgs,
    dump_trace: Option<&Path>,
) -> Result<(), CliError> {
    if experiment.policies.is_empty() {
        return Err(CliError::Config(
            "simulate needs a \"policy\" or \"policies\" entry in the config".into(),
        ));
    }
    let stats = simulator::run_policy_comparison(
        &experiment.params,
        &experiment.policies,
        &experiment.sim,
    )
    .map_err(CliError::Core)?;

    if let Some(path) = dump_trace {
        let rows = simulator::run_traced(
            &experiment.params,
            &experiment.policies[0],
            experiment.sim.slots / experiment.sim.replications as u64,
            experiment.sim.seed,
        )
        .map_err(CliError::Core)?;
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.slot.to_string(),
                    (if r.dd_mode { "dd" } else { "eh" }).to_string(),
                    r.q_d_start.to_string(),
                    r.q_e_start.to_string(),
                    r.s_detected.to_string(),
                    r.stored_at_r.to_string(),
                    r.harvested.to_string(),
                    r.blocked.to_string(),
                    r.attempted.to_string(),
                    r.delivered_by_r.to_string(),
                    r.q_e_end.to_string(),
                ]
            })
            .collect();
        write_csv(
            path,
            &[
                "slot",
                "mode",
                "q_d",
                "q_e",
                "s_detected",
                "stored_at_r",
                "harvested",
                "blocked",
                "attempted",
                "delivered_by_r",
                "q_e_end",
            ],
            &csv_rows,
        )?;
        print_header("simulate trace", experiment.sim.seed, Some(path));
    }

    let header = [
        "policy",
        "throughput",
        "throughput_se",
        "mean_delay",
        "mean_delay_se",
        "p_active",
        "p_block",
        "mean_qd",
        "alpha_bar_emp",
        "delivered",
    ];
    let rows: Vec<Vec<String>> = experiment
        .policies
        .iter()
        .zip(&stats)
        .map(|(policy, s)| {
            vec![
                serde_json::to_string(policy).expect("policy serializes"),
                fmt_g12(s.throughput),
                fmt_g12(s.throughput_se),
                fmt_g12(s.mean_delay),
                fmt_g12(s.mean_delay_se),
                fmt_g12(s.p_active),
                fmt_g12(s.p_block),
                fmt_g12(s.mean_qd),
                fmt_g12(s.alpha_bar_emp),
                s.delivered.to_string(),
            ]
        })
        .collect();
    let out = args
        .out
        .clone()
        .ok_or_else(|| CliError::Config("simulate needs --out <csv>".into()))?;
    write_csv(&out, &header, &rows)?;
    print_header("simulate", experiment.sim.seed, Some(&out));
    Ok(())
}

/// Analytic-vs-simulation comparison over the stable grid plus the optimal
/// dynamic policy. Fails (exit 4) when any relative deviation reaches 2%.
///
/// For the dynamic policy the delay is compared in the slot-start
/// convention the per-packet count realizes; the half-slot-weighted delay
/// is reported alongside.
pub fn validate(
    experiment: &Experiment,
    args: &CommonArgs,
    distort_analytic: f64,
) -> Result<(), CliError> {
    let params = &experiment.params;
    let boundary = alpha_t(params);
    let grid: Vec<f64> = experiment
        .alpha_grid
        .clone()
        .unwrap_or_else(|| vec![0.05, 0.10, 0.15, 0.20]);
    if grid.iter().any(|a| *a >= boundary) {
        return Err(CliError::Config(format!(
            "validate grid must stay below the stability boundary {boundary:.4}"
        )));
    }

    let rows: Vec<Result<(f64, f64, f64, SimStats), CliError>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, alpha)| {
            let solution = qbd_solver::solve(params, *alpha, args.tol, args.max_iter)
                .map_err(CliError::Core)?;
            let metrics = qbd_solver::static_metrics(params, *alpha, &solution)
                .map_err(CliError::Core)?;
            let config = SimConfig {
                seed: row_seed(experiment.sim.seed, i),
                ..experiment.sim
            };
            let sim = run(params, &Policy::Static(*alpha), &config).map_err(CliError::Core)?;
            Ok((
                *alpha,
                metrics.delay * distort_analytic,
                metrics.throughput,
                sim,
            ))
        })
        .collect();

    let mut csv_rows = Vec::new();
    let mut max_dev = 0.0f64;
    let mut report = Vec::new();
    for row in rows {
        let (alpha, delay, throughput, sim) = row?;
        let dev_delay = (delay - sim.mean_delay).abs() / sim.mean_delay;
        let dev_throughput = (throughput - sim.throughput).abs() / sim.throughput;
        max_dev = max_dev.max(dev_delay).max(dev_throughput);
        report.push(json!({
            "policy": {"static": alpha},
            "delay_analytic": delay,
            "delay_simulated": sim.mean_delay,
            "throughput_analytic": throughput,
            "throughput_simulated": sim.throughput,
            "rel_dev_delay": dev_delay,
            "rel_dev_throughput": dev_throughput,
        }));
        csv_rows.push(vec![
            format!("static:{alpha}"),
            fmt_g12(delay),
            fmt_g12(sim.mean_delay),
            fmt_g12(throughput),
            fmt_g12(sim.throughput),
            fmt_g12(dev_delay),
            fmt_g12(dev_throughput),
        ]);
    }

    // Optimal dynamic policy: throughput plus the slot-start delay, with
    // the half-slot-weighted delay reported for reference.
    let optimum = optimize_dynamic(params, args.eps).map_err(CliError::Core)?;
    let chain = solve_threshold(params, &optimum.best_policy).map_err(CliError::Core)?;
    let config = SimConfig {
        seed: row_seed(experiment.sim.seed, grid.len()),
        ..experiment.sim
    };
    let sim = run(params, &optimum.best_policy, &config).map_err(CliError::Core)?;
    let analytic_delay = chain.delay_slot_start * distort_analytic;
    let dev_delay = (analytic_delay - sim.mean_delay).abs() / sim.mean_delay;
    let dev_throughput = (chain.throughput - sim.throughput).abs() / sim.throughput;
    max_dev = max_dev.max(dev_delay).max(dev_throughput);
    report.push(json!({
        "policy": optimum.best_policy,
        "delay_analytic": analytic_delay,
        "delay_simulated": sim.mean_delay,
        "delay_half_slot_weighted": chain.delay,
        "throughput_analytic": chain.throughput,
        "throughput_simulated": sim.throughput,
        "rel_dev_delay": dev_delay,
        "rel_dev_throughput": dev_throughput,
    }));
    csv_rows.push(vec![
        serde_json::to_string(&optimum.best_policy).expect("policy serializes"),
        fmt_g12(analytic_delay),
        fmt_g12(sim.mean_delay),
        fmt_g12(chain.throughput),
        fmt_g12(sim.throughput),
        fmt_g12(dev_delay),
        fmt_g12(dev_throughput),
    ]);

    if let Some(out) = &args.out {
        write_csv(
            out,
            &[
                "policy",
                "delay_analytic",
                "delay_simulated",
                "throughput_analytic",
                "throughput_simulated",
                "rel_dev_delay",
                "rel_dev_throughput",
            ],
            &csv_rows,
        )?;
    }
    print_header("validate", experiment.sim.seed, args.out.as_deref());
    let passed = max_dev < 0.02;
    println!(
        "{}",
        json!({
            "max_relative_deviation": max_dev,
            "threshold": 0.02,
            "passed": passed,
            "rows": report,
        })
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(format!(
            "max relative deviation {max_dev:.4} reached the 2% threshold"
        )))
    }
}

/// Reference optimization set: p_S = 0.3, N = 45, K = 15, b_max = 7
/// (uniform), six relay detection probabilities.
pub fn table4(args: &CommonArgs, seed: u64) -> Result<(), CliError> {
    let p_det_r_values = [0.45, 0.5, 0.6, 0.7, 0.8, 0.9];
    let results: Vec<Result<(f64, OptimizationResult), CliError>> = p_det_r_values
        .par_iter()
        .map(|p_det_r| {
            let params = SystemParams::new(
                0.3,
                *p_det_r,
                15,
                45,
                EnergyDistribution::uniform(7).map_err(CliError::Core)?,
            )
            .map_err(CliError::Core)?;
            let result = optimize_dynamic(&params, args.eps).map_err(CliError::Core)?;
            Ok((*p_det_r, result))
        })
        .collect();

    let mut rows = Vec::new();
    for item in results {
        let (p_det_r, result) = item?;
        let (e_th, beta) = match result.best_policy {
            Policy::Threshold { e_th, beta } => (e_th, beta),
            ref other => {
                return Err(CliError::Config(format!(
                    "unexpected optimal policy {other:?}"
                )))
            }
        };
        rows.push(vec![
            fmt_g12(p_det_r),
            e_th.to_string(),
            fmt_g12(beta),
            fmt_g12(result.objective),
        ]);
    }
    let out = args
        .out
        .clone()
        .ok_or_else(|| CliError::Config("table4 needs --out <csv>".into()))?;
    write_csv(&out, &["p_det_r", "e_th", "beta", "tau"], &rows)?;
    print_header("table4", seed, Some(&out));
    Ok(())
}
