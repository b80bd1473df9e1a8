use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use mixgame::dpp::{backward_dpp_with, DppOptions};
use mixgame::game::{check_regularity, GameSpec, Partition};
use mixgame::grid::{lipschitz_estimate, padding_audit, Grid, Mode, PaddingWarning, ValueField};
use mixgame::hamiltonian::isaacs_gap_scan;
use mixgame::matrix_game::{
    fictitious_play, pure_values, solve_matrix_game_from, PayoffMatrix, Side,
};
use mixgame::pde::{
    closed_form_reference, convergence_study, solve_hji_with, ConvergenceSetup, PdeOptions,
    Reference,
};
use mixgame::strategy::{derive_seed, exploit_check, monte_carlo_payoff, synthesize_saddle_strategies, PlaySetup};
use serde_json::{json, Value};

use crate::config::{parse_list, parse_modes, ExperimentConfig, Format, GameSource, Validated};
use crate::output::{Artifacts, Manifest, Table};
use crate::{CliError, Command, Common, GameDebugArgs, OUTPUT_DIR_ENV};

/// Samples drawn by the regularity audit of `describe`.
const REGULARITY_SAMPLES: usize = 2_000;

pub fn dispatch(command: Command) -> Result<Value, CliError> {
    let started = Instant::now();
    let (name, common) = match command {
        Command::GameDebug(args) => return game_debug(&args, started),
        Command::Describe(c) => ("describe", c),
        Command::IsaacsScan(c) => ("isaacs-scan", c),
        Command::Solve(c) => ("solve", c),
        Command::Pde(c) => ("pde", c),
        Command::Converge(c) => ("converge", c),
        Command::Play(c) => ("play", c),
    };
    let config = load_config(&common)?;
    let echo = config.to_toml()?;
    let run = config.validate()?;
    let mut out = Artifacts::create(&run.config.output.dir)?;
    out.text("config.toml", &echo)?;
    let summary = match name {
        "describe" => describe(&run, &mut out)?,
        "isaacs-scan" => isaacs_scan(&run, &mut out)?,
        "solve" => solve(&run, &mut out)?,
        "pde" => pde(&run, &mut out)?,
        "converge" => converge(&run, &mut out)?,
        "play" => play(&run, &mut out)?,
        _ => unreachable!("subcommands are matched above"),
    };
    out.finish(Manifest {
        subcommand: name.to_string(),
        config_echo: echo,
        wall_seconds: started.elapsed().as_secs_f64(),
    })?;
    Ok(summary)
}

/// Config file (or defaults), then environment, then flags.
pub fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        config.output.dir = PathBuf::from(dir);
    }
    if let Some(game) = &common.game {
        config.game = GameSource::Builtin(game.clone());
    }
    if let Some(n) = common.n {
        config.n = n;
    }
    if let Some(h) = common.h {
        config.h = h;
    }
    if let Some(modes) = &common.mode {
        config.modes = parse_modes(modes)?;
    }
    if let Some(meshes) = &common.meshes {
        config.meshes = parse_list("meshes", meshes)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(samples) = common.samples {
        config.samples = samples;
    }
    if let Some(x0) = &common.x0 {
        config.x0 = Some(parse_list("x0", x0)?);
    }
    if let Some(t0) = common.t0 {
        config.t0 = t0;
    }
    if let Some(cfl) = common.cfl {
        config.cfl = cfl;
    }
    if let Some(dir) = &common.out {
        config.output.dir = dir.clone();
    }
    Ok(config)
}

fn wants(run: &Validated, format: Format) -> bool {
    run.config.output.formats.contains(&format)
}

/// Writes the summary as `<name>.json` when JSON output is enabled.
fn emit_summary(run: &Validated, out: &mut Artifacts, name: &str, summary: &Value) -> Result<(), CliError> {
    if wants(run, Format::Json) {
        out.json(name, summary)?;
    }
    Ok(())
}

fn build_grid(run: &Validated, h: f64) -> Result<(Grid, Vec<PaddingWarning>), CliError> {
    let grid = Grid::with_spacing(&run.domain.lower, &run.domain.upper, h)?;
    let warnings = padding_audit(&grid, &run.game, &run.region.lower, &run.region.upper);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((grid, warnings))
}

fn axis_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|k| format!("{prefix}{k}")).collect()
    }
}

fn field_table(field: &ValueField) -> Table {
    let mut header = axis_names("x", field.grid.dim());
    header.push("value".into());
    let mut table = Table::new(header);
    for idx in 0..field.grid.len() {
        let mut row = field.grid.node(idx);
        row.push(field.values[idx]);
        table.floats(row);
    }
    table
}

fn grid_json(grid: &Grid) -> Value {
    json!({
        "lower": grid.lower(),
        "upper": grid.upper(),
        "counts": grid.counts(),
        "spacing": grid.spacing(),
    })
}

/// `n` evenly spaced points on `[lo, hi]` (the midpoint when `n = 1`).
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

fn region_error(run: &Validated, field: &ValueField, exact: impl Fn(&[f64]) -> f64) -> f64 {
    (0..field.grid.len())
        .map(|k| field.grid.node(k))
        .enumerate()
        .filter(|(_, x)| Grid::contains_in(x, &run.region.lower, &run.region.upper))
        .map(|(k, x)| (field.values[k] - exact(&x)).abs())
        .fold(0.0, f64::max)
}

fn describe(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let game = &run.game;
    let regularity = check_regularity(
        game,
        &run.domain.lower,
        &run.domain.upper,
        REGULARITY_SAMPLES,
        run.config.seed,
        run.config.tolerances.regularity,
    )?;
    let def = game.definition();
    let summary = json!({
        "name": game.name(),
        "state_dim": game.state_dim(),
        "horizon": game.horizon(),
        "controls_u": game.controls_u(),
        "controls_v": game.controls_v(),
        "dynamics": def.dynamics,
        "terminal": def.terminal,
        "time_dependent": game.is_time_dependent(),
        "declared": game.declared(),
        "regularity": regularity,
        "regularity_verdict": if regularity.passed { "pass" } else { "fail" },
    });
    emit_summary(run, out, "describe.json", &summary)?;
    Ok(summary)
}

fn isaacs_scan(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let game = &run.game;
    let d = game.state_dim();
    let scan = &run.config.scan;
    let ts = scan
        .t
        .clone()
        .unwrap_or_else(|| vec![0.0, 0.5 * game.horizon(), game.horizon()]);
    let xs = product(
        &(0..d)
            .map(|k| linspace(run.region.lower[k], run.region.upper[k], scan.x_per_axis))
            .collect::<Vec<_>>(),
    );
    let ps = product(&vec![linspace(-scan.p_max, scan.p_max, scan.p_per_axis); d]);
    let tol = &run.config.tolerances;
    let report = isaacs_gap_scan(game, &ts, &xs, &ps, tol.lp, tol.isaacs_gap)?;

    if wants(run, Format::Csv) {
        let mut header = vec!["t".to_string()];
        header.extend(axis_names("x", d));
        header.extend(axis_names("p", d));
        header.extend(["h_pure_lower", "h_mixed", "h_pure_upper", "isaacs_gap"].map(String::from));
        let mut table = Table::new(header);
        for s in &report.samples {
            let mut row = vec![s.t];
            row.extend(&s.x);
            row.extend(&s.p);
            row.extend([s.h_pure_lower, s.h_mixed, s.h_pure_upper, s.isaacs_gap]);
            table.floats(row);
        }
        out.csv("isaacs_scan.csv", &table)?;
    }
    let summary = json!({
        "game": game.name(),
        "samples": report.samples.len(),
        "max_gap": report.max_gap,
        "argmax": { "t": report.argmax.0, "x": report.argmax.1, "p": report.argmax.2 },
        "violated_fraction": report.violated_fraction,
        "gap_tol": report.gap_tol,
        "isaacs_violated": report.isaacs_violated(),
    });
    emit_summary(run, out, "isaacs_summary.json", &summary)?;
    Ok(summary)
}

fn solve(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let c = &run.config;
    let game = &run.game;
    let partition = Partition::uniform(game.horizon(), c.n)?;
    let (grid, warnings) = build_grid(run, c.h)?;
    let options = DppOptions {
        tol: c.tolerances.lp,
        side: Side::Minimizer,
    };
    let mut modes = Vec::new();
    let mut initial = Vec::new();
    for &mode in &c.modes {
        let result = backward_dpp_with(game, &partition, &grid, mode, options)?;
        let field = result.initial();
        if wants(run, Format::Csv) {
            out.csv(&format!("field_{mode}.csv"), &field_table(field))?;
        }
        modes.push(json!({
            "mode": mode,
            "min": field.min(),
            "max": field.max(),
            "lipschitz_t0": lipschitz_estimate(field),
            "max_lipschitz": result.lipschitz_per_node.iter().cloned().fold(0.0, f64::max),
            "value_at_x0": result.value_at(c.t0, &run.x0)?,
        }));
        initial.push((mode, field.clone()));
    }
    let lower = initial.iter().find(|(m, _)| *m == Mode::PureLower);
    let upper = initial.iter().find(|(m, _)| *m == Mode::PureUpper);
    let pure_gap = match (lower, upper) {
        (Some((_, lo)), Some((_, hi))) => Some(region_error(run, hi, |x| lo.interpolate(x))),
        _ => None,
    };
    let summary = json!({
        "game": game.name(),
        "intervals": c.n,
        "mesh": partition.mesh(),
        "grid": grid_json(&grid),
        "region": run.region,
        "padding_warnings": warnings,
        "x0": run.x0,
        "t0": c.t0,
        "modes": modes,
        "max_pure_gap_in_region": pure_gap,
    });
    emit_summary(run, out, "solve_summary.json", &summary)?;
    Ok(summary)
}

fn pde(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let c = &run.config;
    let game = &run.game;
    let (grid, warnings) = build_grid(run, c.h)?;
    let options = PdeOptions {
        tol: c.tolerances.lp,
        memoize: c.memoize,
    };
    let solution = solve_hji_with(game, &grid, c.n, c.cfl, options)?;
    let field = solution.initial();
    if wants(run, Format::Csv) {
        out.csv("pde_field.csv", &field_table(field))?;
    }
    let closed_form_error = match closed_form_reference(game) {
        Some(Reference::ClosedForm { value, .. }) => Some(region_error(run, field, |x| value(x))),
        _ => None,
    };
    let summary = json!({
        "game": game.name(),
        "grid": grid_json(&grid),
        "padding_warnings": warnings,
        "steps": solution.steps,
        "time_step": solution.time_step,
        "dissipation": solution.dissipation,
        "cfl_ratio": solution.cfl_ratio,
        "min": field.min(),
        "max": field.max(),
        "closed_form_error_in_region": closed_form_error,
    });
    emit_summary(run, out, "pde_summary.json", &summary)?;
    Ok(summary)
}

fn converge(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let c = &run.config;
    let game = &run.game;
    let setup = ConvergenceSetup {
        domain_lower: run.domain.lower.clone(),
        domain_upper: run.domain.upper.clone(),
        region_lower: run.region.lower.clone(),
        region_upper: run.region.upper.clone(),
        h_factor: c.h_factor,
        tol: c.tolerances.lp,
        slack: c.tolerances.slack,
    };
    let reference = closed_form_reference(game).unwrap_or(Reference::FinestSolve { cfl: c.cfl });
    let report = convergence_study(game, &c.meshes, &setup, &reference)?;
    if !report.non_increasing {
        log::warn!("errors increase by more than {} between levels", report.slack);
    }
    if wants(run, Format::Csv) {
        let mut table = Table::new(["intervals", "mesh", "h", "error", "seconds"]).with_timings();
        for r in &report.rows {
            table.floats([r.intervals as f64, r.mesh, r.h, r.error, r.seconds]);
        }
        out.csv("convergence.csv", &table)?;
    }
    // Timings stay in the CSV so the JSON report is reproducible byte for byte.
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({ "intervals": r.intervals, "mesh": r.mesh, "h": r.h, "error": r.error }))
        .collect();
    let summary = json!({
        "game": game.name(),
        "reference": report.reference,
        "rows": rows,
        "slack": report.slack,
        "non_increasing": report.non_increasing,
        "observed_rates": report.observed_rates,
    });
    emit_summary(run, out, "convergence.json", &summary)?;
    Ok(summary)
}

fn play(run: &Validated, out: &mut Artifacts) -> Result<Value, CliError> {
    let c = &run.config;
    let game: &GameSpec = &run.game;
    let partition = Partition::uniform(game.horizon(), c.n)?;
    let (grid, warnings) = build_grid(run, c.h)?;
    let options = DppOptions {
        tol: c.tolerances.lp,
        side: Side::Minimizer,
    };
    let dpp = Arc::new(backward_dpp_with(game, &partition, &grid, Mode::Mixed, options)?);
    let value = dpp.value_at(c.t0, &run.x0)?;
    let setup = PlaySetup {
        game,
        partition: &partition,
        t0: c.t0,
        x0: run.x0.clone(),
        substeps: c.substeps,
    };
    let (alpha, beta) = synthesize_saddle_strategies(Arc::clone(&dpp))?;
    let estimate = monte_carlo_payoff(&setup, &alpha, &beta, c.samples, c.seed)?;
    let exploit = exploit_check(&setup, dpp, c.deviations, c.exploit_samples, derive_seed(c.seed, 1))?;
    if wants(run, Format::Csv) {
        let mut table = Table::new(["player", "deviation", "mean", "std_error", "ci_low", "ci_high"]);
        for o in &exploit.outcomes {
            let e = &o.estimate;
            table.row(vec![
                match o.player {
                    mixgame::strategy::Player::One => "1".into(),
                    mixgame::strategy::Player::Two => "2".into(),
                },
                format!("\"{}\"", o.label),
                e.mean.to_string(),
                e.std_error.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
            ]);
        }
        out.csv("deviations.csv", &table)?;
    }
    let summary = json!({
        "game": game.name(),
        "x0": run.x0,
        "t0": c.t0,
        "intervals": c.n,
        "padding_warnings": warnings,
        "value": value,
        "seed": c.seed,
        "samples": estimate.samples,
        "mean": estimate.mean,
        "std_error": estimate.std_error,
        "ci": [estimate.ci_low, estimate.ci_high],
        "value_in_ci": estimate.distance_to(value) == 0.0,
        "exploit": {
            "deviations_per_side": c.deviations,
            "samples_per_deviation": c.exploit_samples,
            "player_one_advantage": exploit.player_one_advantage,
            "player_two_advantage": exploit.player_two_advantage,
            "worst_advantage": exploit.worst_advantage(),
            "max_std_error": exploit.max_std_error,
        },
    });
    emit_summary(run, out, "play.json", &summary)?;
    Ok(summary)
}

pub fn read_matrix(path: &Path) -> Result<PayoffMatrix, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

pub fn parse_matrix(text: &str) -> Result<PayoffMatrix, CliError> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(r, line)| {
            line.split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| CliError::Config(format!("row {}: cannot parse {s:?}", r + 1)))
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    PayoffMatrix::from_rows(&rows).map_err(|e| CliError::Config(e.to_string()))
}

fn game_debug(args: &GameDebugArgs, started: Instant) -> Result<Value, CliError> {
    let m = read_matrix(&args.matrix)?;
    let min_side = solve_matrix_game_from(&m, args.tol, Side::Minimizer).map_err(mixgame::Error::from)?;
    let max_side = solve_matrix_game_from(&m, args.tol, Side::Maximizer).map_err(mixgame::Error::from)?;
    let fp = fictitious_play(&m, args.iterations, args.seed);
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
    let summary = json!({
        "matrix": rows,
        "pure": pure_values(&m),
        "minimizer_side": min_side,
        "maximizer_side": max_side,
        "side_agreement": (min_side.value - max_side.value).abs(),
        "fictitious_play": { "iterations": args.iterations, "seed": args.seed, "solution": fp },
    });
    let dir = match (&args.out, std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty())) {
        (Some(dir), _) => dir.clone(),
        (None, Some(env)) => PathBuf::from(env),
        (None, None) => PathBuf::from("out"),
    };
    let mut out = Artifacts::create(&dir)?;
    out.json("game_debug.json", &summary)?;
    out.finish(Manifest {
        subcommand: "game-debug".into(),
        config_echo: format!(
            "matrix = {:?}\niterations = {}\nseed = {}\ntol = {}\n",
            args.matrix.display().to_string(),
            args.iterations,
            args.seed,
            args.tol
        ),
        wall_seconds: started.elapsed().as_secs_f64(),
    })?;
    Ok(summary)
}
