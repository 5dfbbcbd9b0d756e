//! Subcommand implementations.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use lambda_mutual_core::baseline::{baseline_simulate, baseline_solve, BaselineOptions};
use lambda_mutual_core::mechanism::{
    check_incentive_compatibility, neumann_solve, next_weights, LinearFixedPointProblem,
};
use lambda_mutual_core::simulation::{simulate_panel, PanelRecord, StatsAccumulator};

use crate::config::{load_config, parse_convention};
use crate::output::{fmt_f64, CsvSink};
use crate::CliError;

pub fn simulate(
    config_path: &Path,
    agents: u64,
    periods: u32,
    seed: Option<u64>,
    panel_out: Option<PathBuf>,
    stats_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let panel_path = panel_out.or(cfg.output.panel);
    let stats_path = stats_out.or(cfg.output.stats);
    log::info!(
        "simulate: {} agents, {} periods, seed {seed}, scaling {:?}",
        agents,
        periods,
        cfg.mechanism.scaling()
    );

    let panel_csv = match &panel_path {
        Some(path) => Some(RefCell::new((
            crate::output::AtomicCsv::create(
                path,
                "t,agent,lambda,income,transfer,consumption,value",
            )?,
            None::<CliError>,
        ))),
        None => None,
    };
    let mut stats = StatsAccumulator::new();

    let outcome = simulate_panel(
        &cfg.utility,
        &cfg.mechanism,
        &cfg.economy,
        agents,
        periods,
        seed,
        |record: &PanelRecord<f64>| {
            stats.push(record);
            if let Some(cell) = &panel_csv {
                let mut guard = cell.borrow_mut();
                if guard.1.is_none() {
                    let line = format!(
                        "{},{},{},{},{},{},{}",
                        record.period,
                        record.agent,
                        fmt_f64(record.lambda),
                        fmt_f64(record.income),
                        fmt_f64(record.transfer),
                        fmt_f64(record.consumption),
                        fmt_f64(record.value)
                    );
                    if let Err(e) = guard.0.write_line(&line) {
                        guard.1 = Some(e);
                    }
                }
            }
        },
    )?;
    let report = stats.finish(agents)?;

    if let Some(cell) = panel_csv {
        let (csv, error) = cell.into_inner();
        if let Some(e) = error {
            return Err(e);
        }
        csv.finish()?;
    }
    if let Some(path) = &stats_path {
        let mut csv = crate::output::AtomicCsv::create(
            path,
            "t,mean_value,var_value,mean_lambda,rank_mobility,infeasible_count",
        )?;
        for p in &report.periods {
            csv.write_line(&format!(
                "{},{},{},{},{},{}",
                p.t,
                fmt_f64(p.mean_value),
                fmt_f64(p.var_value),
                fmt_f64(p.mean_lambda),
                fmt_f64(p.rank_mobility),
                p.infeasible_count
            ))?;
        }
        csv.finish()?;
    }

    let last = report.periods.last().expect("at least one period");
    println!(
        "simulated {} agents x {} periods: mean value {} -> {}, censored {}",
        agents,
        periods,
        fmt_f64(report.periods[0].mean_value),
        fmt_f64(last.mean_value),
        outcome.censored.len()
    );
    Ok(())
}

pub fn check_ic(
    config_path: &Path,
    lambda_grid: Option<Vec<f64>>,
    convention: Option<&str>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(text) = convention {
        cfg.mechanism = cfg.mechanism.with_scaling(parse_convention(text)?);
    }
    let grid = lambda_grid.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0, 4.0]);
    if grid.is_empty() {
        return Err(CliError::config("--lambda-grid: must not be empty"));
    }

    let out_path = out.or(cfg.output.check_ic);
    let mut sink = CsvSink::create(out_path.as_deref(), "lambda,e,e_report,slack")?;
    let mut min_slack = f64::INFINITY;
    let mut min_at = (0.0, 0.0, 0.0);
    for &lambda in &grid {
        let wm = next_weights(&cfg.utility, &cfg.mechanism, &cfg.economy, lambda)?;
        let report =
            check_incentive_compatibility(&cfg.utility, &cfg.mechanism, &cfg.economy, lambda, &wm)?;
        let m = report.states();
        for i in 0..m {
            for j in 0..m {
                let slack = report.slack(i, j);
                sink.write_line(&format!(
                    "{},{},{},{}",
                    fmt_f64(lambda),
                    fmt_f64(report.incomes()[i]),
                    fmt_f64(report.incomes()[j]),
                    fmt_f64(slack)
                ))?;
                if slack < min_slack {
                    min_slack = slack;
                    min_at = (lambda, report.incomes()[i], report.incomes()[j]);
                }
            }
        }
    }
    sink.finish()?;
    log::info!(
        "check-ic: min slack {} at lambda {} truth {} report {} ({:?})",
        fmt_f64(min_slack),
        min_at.0,
        min_at.1,
        min_at.2,
        cfg.mechanism.scaling()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn baseline(
    config_path: &Path,
    grid_size: usize,
    tol: f64,
    full_info: bool,
    simulate: bool,
    agents: u64,
    periods: u32,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let options = BaselineOptions {
        ic_enabled: !full_info,
        ..BaselineOptions::default()
    };
    let model = baseline_solve(&cfg.utility, &cfg.mechanism, &cfg.economy, grid_size, tol, options)?;
    println!(
        "baseline solved: grid {}, {} sweeps, final residual {}",
        grid_size,
        model.sweeps(),
        fmt_f64(model.residuals().last().copied().unwrap_or(f64::NAN))
    );

    let out_path = out.or(cfg.output.baseline);
    if simulate {
        // Start both models from the same contract value.
        let w0 = cfg.utility.full_insurance_value(cfg.mechanism.lambda0())?;
        let stats = baseline_simulate(
            &model,
            &cfg.utility,
            &cfg.mechanism,
            &cfg.economy,
            w0,
            agents,
            periods,
            seed,
        )?;
        let mut sink = CsvSink::create(out_path.as_deref(), "t,mean_w,var_w,censored_count")?;
        for p in &stats.periods {
            sink.write_line(&format!(
                "{},{},{},{}",
                p.t,
                fmt_f64(p.mean_w),
                fmt_f64(p.var_w),
                p.censored_count
            ))?;
        }
        sink.finish()?;
        let last = stats.periods.last().expect("at least one period");
        println!(
            "simulated {} agents x {} periods: mean promise {} -> {}, \
             max promise-keeping residual {}, clamped {}",
            agents,
            periods,
            fmt_f64(stats.periods[0].mean_w),
            fmt_f64(last.mean_w),
            fmt_f64(stats.max_promise_residual),
            stats.clamped_count
        );
    } else if let Some(path) = out_path {
        let mut csv = crate::output::AtomicCsv::create(
            &path,
            "w,value,transfer_e1,next_w_e1,transfer_e2,next_w_e2",
        )?;
        for (iw, &w) in model.grid().iter().enumerate() {
            let line = match model.policy_at(iw) {
                Some(p) => format!(
                    "{},{},{},{},{},{}",
                    fmt_f64(w),
                    fmt_f64(model.values()[iw]),
                    fmt_f64(p.per_state[0].transfer),
                    fmt_f64(p.per_state[0].next_promise),
                    fmt_f64(p.per_state[1].transfer),
                    fmt_f64(p.per_state[1].next_promise)
                ),
                None => format!("{},{},,,,", fmt_f64(w), fmt_f64(model.values()[iw])),
            };
            csv.write_line(&line)?;
        }
        csv.finish()?;
    }
    Ok(())
}

pub fn neumann(problem_path: &Path, tol: f64) -> Result<(), CliError> {
    let text = std::fs::read_to_string(problem_path)
        .map_err(|e| CliError::io(format!("{}: {e}", problem_path.display())))?;
    let problem = parse_problem(&text)
        .map_err(|e| CliError::from(lambda_mutual_core::Error::InvalidInput(e)))?;
    let solution = neumann_solve(&problem, tol)?;
    let rendered: Vec<String> = solution.solution.iter().map(|&x| fmt_f64(x)).collect();
    println!("{}", rendered.join(" "));
    println!(
        "iterations={} residual={}",
        solution.iterations,
        fmt_f64(solution.residual)
    );
    Ok(())
}

fn parse_problem(text: &str) -> Result<LinearFixedPointProblem<f64>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let n: usize = lines
        .next()
        .ok_or("empty problem file")?
        .trim()
        .parse()
        .map_err(|e| format!("first line must be the dimension: {e}"))?;
    if n == 0 {
        return Err("dimension must be positive".to_string());
    }
    let parse_row = |line: &str, what: &str| -> Result<Vec<f64>, String> {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{what}: {e}"))?;
        if row.len() != n {
            return Err(format!("{what}: expected {n} entries, got {}", row.len()));
        }
        Ok(row)
    };
    let mut operator = Vec::with_capacity(n * n);
    for i in 0..n {
        let line = lines.next().ok_or(format!("missing row {} of L", i + 1))?;
        operator.extend(parse_row(line, &format!("row {} of L", i + 1))?);
    }
    let offset = parse_row(lines.next().ok_or("missing the offset line")?, "offset b")?;
    if lines.next().is_some() {
        return Err("trailing content after the offset line".to_string());
    }
    LinearFixedPointProblem::new(n, operator, offset).map_err(|e| e.to_string())
}

/// One parsed stats CSV: which value column it carries and its rows.
struct StatsFile {
    name: String,
    value_column: String,
    rows: usize,
    first_mean: f64,
    last_mean: f64,
    max_abs_drift: f64,
    max_var: f64,
    censored: u64,
}

pub fn report(files: &[PathBuf]) -> Result<(), CliError> {
    if files.is_empty() {
        return Err(CliError::config("report: provide at least one stats CSV"));
    }
    let mut parsed = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        parsed.push(parse_stats(path, &text)?);
    }

    println!(
        "{:<28} {:>8} {:>14} {:>14} {:>14} {:>14} {:>9}",
        "file", "periods", "mean(0)", "mean(T)", "max|drift|", "max var", "censored"
    );
    for f in &parsed {
        println!(
            "{:<28} {:>8} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>9}",
            f.name, f.rows, f.first_mean, f.last_mean, f.max_abs_drift, f.max_var, f.censored
        );
    }
    let columns: Vec<&str> = parsed.iter().map(|f| f.value_column.as_str()).collect();
    log::info!("report aggregated {} file(s) with value columns {columns:?}", parsed.len());
    Ok(())
}

fn parse_stats(path: &Path, text: &str) -> Result<StatsFile, CliError> {
    let bad = |msg: String| {
        CliError::from(lambda_mutual_core::Error::InvalidInput(format!(
            "{}: {msg}",
            path.display()
        )))
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".to_string()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let mean_idx = columns
        .iter()
        .position(|c| *c == "mean_value" || *c == "mean_w")
        .ok_or_else(|| bad("no mean_value or mean_w column".to_string()))?;
    let var_idx = columns
        .iter()
        .position(|c| *c == "var_value" || *c == "var_w")
        .ok_or_else(|| bad("no var_value or var_w column".to_string()))?;
    let censored_idx = columns
        .iter()
        .position(|c| *c == "infeasible_count" || *c == "censored_count");

    let mut rows = 0usize;
    let mut first_mean = f64::NAN;
    let mut last_mean = f64::NAN;
    let mut max_abs_drift = 0.0f64;
    let mut max_var = 0.0f64;
    let mut censored = 0u64;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let get = |idx: usize| -> Result<f64, CliError> {
            fields
                .get(idx)
                .ok_or_else(|| bad(format!("short row: {line}")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("bad number in row {line:?}: {e}")))
        };
        let mean = get(mean_idx)?;
        let var = get(var_idx)?;
        if rows == 0 {
            first_mean = mean;
        }
        last_mean = mean;
        max_abs_drift = max_abs_drift.max((mean - first_mean).abs());
        max_var = max_var.max(var);
        if let Some(idx) = censored_idx {
            censored = censored.max(get(idx)? as u64);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".to_string()));
    }
    Ok(StatsFile {
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        value_column: columns[mean_idx].to_string(),
        rows,
        first_mean,
        last_mean,
        max_abs_drift,
        max_var,
        censored,
    })
}
