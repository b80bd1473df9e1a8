//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (outside the test harness's output capture) and then asserts.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use mixgame::dpp::{backward_dpp, backward_dpp_with, dpp_consistency_check, DppOptions, DppResult};
use mixgame::expr::hat;
use mixgame::game::{Builtin, GameSpec, Partition};
use mixgame::grid::{lipschitz_estimate, Grid, Mode, ValueField};
use mixgame::hamiltonian::{hamiltonian_sample, isaacs_gap_scan};
use mixgame::matrix_game::{
    fictitious_play, solve_matrix_game_from, PayoffMatrix, Side, DEFAULT_TOL,
};
use mixgame::pde::{
    closed_form_reference, convergence_study, solve_hji, ConvergenceSetup, PdeSolution,
};
use mixgame::strategy::{
    exploit_check, monte_carlo_payoff, synthesize_saddle_strategies, PlaySetup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REGION: ([f64; 1], [f64; 1]) = ([-2.0], [2.0]);
const FINEST: usize = 160;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{verdict} criterion {criterion:>2}: {detail}").unwrap();
}

fn domain(builtin: Builtin) -> ([f64; 1], [f64; 1]) {
    match builtin {
        Builtin::Uv => ([-3.0], [3.0]),
        Builtin::Separable | Builtin::UvShift => ([-4.0], [4.0]),
    }
}

fn grid_for(builtin: Builtin, h: f64) -> Grid {
    let (lo, hi) = domain(builtin);
    Grid::with_spacing(&lo, &hi, h).unwrap()
}

fn in_region(x: &[f64]) -> bool {
    Grid::contains_in(x, &REGION.0, &REGION.1)
}

fn region_distance(a: &ValueField, b: &ValueField) -> f64 {
    (0..a.grid.len())
        .filter(|&k| in_region(&a.grid.node(k)))
        .map(|k| (a.values[k] - b.values[k]).abs())
        .fold(0.0, f64::max)
}

/// Mixed DPP and matched PDE solve (`h = Δt = 1/160`) per builtin, shared by
/// several criteria.
struct FinestSolves {
    dpp: Vec<(Builtin, DppResult)>,
    pde: Vec<(Builtin, PdeSolution)>,
}

fn finest() -> &'static FinestSolves {
    static CELL: OnceLock<FinestSolves> = OnceLock::new();
    CELL.get_or_init(|| {
        let h = 1.0 / FINEST as f64;
        let mut dpp = Vec::new();
        let mut pde = Vec::new();
        for b in Builtin::ALL {
            let game = GameSpec::builtin(b);
            let grid = grid_for(b, h);
            let partition = Partition::uniform(1.0, FINEST).unwrap();
            dpp.push((b, backward_dpp(&game, &partition, &grid, Mode::Mixed, DEFAULT_TOL).unwrap()));
            pde.push((b, solve_hji(&game, &grid, FINEST, 1.0).unwrap()));
        }
        FinestSolves { dpp, pde }
    })
}

fn uv_criterion_three(mode: Mode) -> &'static DppResult {
    static CELLS: OnceLock<Vec<DppResult>> = OnceLock::new();
    let all = CELLS.get_or_init(|| {
        let game = GameSpec::builtin(Builtin::Uv);
        let partition = Partition::uniform(1.0, 100).unwrap();
        let grid = grid_for(Builtin::Uv, 0.01);
        Mode::ALL
            .iter()
            .map(|&m| backward_dpp(&game, &partition, &grid, m, DEFAULT_TOL).unwrap())
            .collect()
    });
    all.iter().find(|r| r.mode == mode).unwrap()
}

#[test]
fn criterion_01_minimax_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let matrices: Vec<PayoffMatrix> = (0..1000)
        .map(|_| {
            let (m, k) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let entries = (0..m * k).map(|_| rng.gen_range(-10.0..=10.0)).collect();
            PayoffMatrix::new(m, k, entries).unwrap()
        })
        .collect();
    let results: Vec<(f64, f64)> = std::thread::scope(|s| {
        let chunks: Vec<_> = matrices
            .chunks(125)
            .enumerate()
            .map(|(c, chunk)| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .enumerate()
                        .map(|(i, m)| {
                            let max_side = solve_matrix_game_from(m, DEFAULT_TOL, Side::Maximizer).unwrap();
                            let min_side = solve_matrix_game_from(m, DEFAULT_TOL, Side::Minimizer).unwrap();
                            let fp = fictitious_play(m, 100_000, (c * 125 + i) as u64);
                            (
                                (max_side.value - min_side.value).abs(),
                                (fp.value - min_side.value).abs(),
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        chunks.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let side_gap = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let fp_gap = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = side_gap <= 1e-8 && fp_gap <= 0.01;
    report(
        1,
        pass,
        &format!("1000 matrices: max |max-side - min-side| = {side_gap:.2e}, max |FP - LP| = {fp_gap:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_non_isaacs_detection() {
    let uv = GameSpec::builtin(Builtin::Uv);
    let mut worst: f64 = 0.0;
    for t in [0.0, 0.5, 1.0] {
        for x in [-1.5, 0.0, 0.7] {
            for p in [2.0, -2.0] {
                let s = hamiltonian_sample(&uv, t, &[x], &[p], DEFAULT_TOL).unwrap();
                worst = worst
                    .max((s.h_pure_lower + 2.0).abs())
                    .max(s.h_mixed.abs())
                    .max((s.h_pure_upper - 2.0).abs());
            }
        }
    }
    let separable = GameSpec::builtin(Builtin::Separable);
    let xs: Vec<Vec<f64>> = (0..=40).map(|k| vec![-2.0 + 0.1 * k as f64]).collect();
    let ps: Vec<Vec<f64>> = (0..=40).map(|k| vec![-4.0 + 0.2 * k as f64]).collect();
    let scan = isaacs_gap_scan(&separable, &[0.0, 0.5, 1.0], &xs, &ps, DEFAULT_TOL, 1e-9).unwrap();
    let pass = worst <= 1e-9 && scan.max_gap.abs() <= 1e-9;
    report(
        2,
        pass,
        &format!(
            "uv |p|=2 deviation from (-2, 0, 2) = {worst:.2e}; separable max gap = {:.2e} over {} samples",
            scan.max_gap,
            scan.samples.len()
        ),
    );
    assert!(pass);
}

/// Pure lower (`maxmin`) or upper (`minmax`) value of the uniform-partition
/// game by exhaustive recursion over control pairs in continuous state.
fn brute_force_pure(game: &GameSpec, n: usize, i: usize, x: f64, lower: bool) -> f64 {
    if i == n {
        return hat(x);
    }
    let dt = game.horizon() / n as f64;
    let t = i as f64 * dt;
    let value = |a: usize, b: usize| {
        let f = game.eval_dynamics(t, &[x], a, b).unwrap()[0];
        brute_force_pure(game, n, i + 1, x + dt * f, lower)
    };
    let (nu, nv) = (game.n_u(), game.n_v());
    if lower {
        (0..nu)
            .map(|a| (0..nv).map(|b| value(a, b)).fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        (0..nv)
            .map(|b| (0..nu).map(|a| value(a, b)).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min)
    }
}

#[test]
fn criterion_03_mixed_value_without_isaacs() {
    let mixed = uv_criterion_three(Mode::Mixed).initial();
    let lower = uv_criterion_three(Mode::PureLower).initial();
    let upper = uv_criterion_three(Mode::PureUpper).initial();
    let grid = &mixed.grid;
    let mut hat_error: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for k in 0..grid.len() {
        let x = grid.node(k);
        if in_region(&x) {
            hat_error = hat_error.max((mixed.values[k] - hat(x[0])).abs());
            max_gap = max_gap.max(upper.values[k] - lower.values[k]);
        }
    }

    // Gap magnitude at n = 10, h = 0.05 against exhaustive recursion.
    let game = GameSpec::builtin(Builtin::Uv);
    let partition = Partition::uniform(1.0, 10).unwrap();
    let coarse = grid_for(Builtin::Uv, 0.05);
    let lo = backward_dpp(&game, &partition, &coarse, Mode::PureLower, DEFAULT_TOL).unwrap();
    let hi = backward_dpp(&game, &partition, &coarse, Mode::PureUpper, DEFAULT_TOL).unwrap();
    let points: Vec<f64> = (0..=16).map(|k| -2.0 + 0.25 * k as f64).collect();
    let oracle_error = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .iter()
            .map(|&x| {
                let (game, lo, hi) = (&game, &lo, &hi);
                s.spawn(move || {
                    let gap = brute_force_pure(game, 10, 0, x, false)
                        - brute_force_pure(game, 10, 0, x, true);
                    let dpp_gap = hi.initial().interpolate(&[x]) - lo.initial().interpolate(&[x]);
                    (gap - dpp_gap).abs()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).fold(0.0, f64::max)
    });

    let pass = hat_error <= 0.1 && max_gap >= 0.2 && oracle_error <= 1e-9;
    report(
        3,
        pass,
        &format!(
            "uv n=100 h=0.01: sup |V - hat| = {hat_error:.4}, max pure gap = {max_gap:.4}; \
             n=10 gap vs exhaustive recursion = {oracle_error:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_lower_equals_upper_in_mixed() {
    let mut worst: f64 = 0.0;
    for b in Builtin::ALL {
        let game = GameSpec::builtin(b);
        let partition = Partition::uniform(1.0, 100).unwrap();
        let grid = grid_for(b, 0.01);
        let solve = |side| {
            backward_dpp_with(&game, &partition, &grid, Mode::Mixed, DppOptions { tol: DEFAULT_TOL, side })
                .unwrap()
        };
        let (v, u) = (solve(Side::Maximizer), solve(Side::Minimizer));
        for (fv, fu) in v.fields.iter().zip(&u.fields) {
            for (a, b) in fv.values.iter().zip(&fu.values) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst <= 1e-8;
    report(
        4,
        pass,
        &format!("all builtins, n=100, h=0.01: max |maximizer-first - minimizer-first| = {worst:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_convergence() {
    let mut details = Vec::new();
    let mut pass = true;
    for b in [Builtin::Separable, Builtin::Uv] {
        let game = GameSpec::builtin(b);
        let (lo, hi) = domain(b);
        let setup = ConvergenceSetup {
            domain_lower: lo.to_vec(),
            domain_upper: hi.to_vec(),
            region_lower: REGION.0.to_vec(),
            region_upper: REGION.1.to_vec(),
            h_factor: 1.0,
            tol: DEFAULT_TOL,
            slack: 0.1,
        };
        let reference = closed_form_reference(&game).unwrap();
        let study = convergence_study(&game, &[10, 40, FINEST], &setup, &reference).unwrap();
        let errors: Vec<String> = study.rows.iter().map(|r| format!("{:.4}", r.error)).collect();
        let finest_error = study.rows.last().unwrap().error;
        let ok = study.non_increasing && finest_error <= 0.05;
        pass &= ok;
        details.push(format!(
            "{b} errors [{}] ({})",
            errors.join(", "),
            if ok { "ok" } else { "finest above 0.05 or not non-increasing" }
        ));
    }
    report(5, pass, &format!("n = 10, 40, 160, h = 1/n: {}", details.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_06_cross_solver_agreement() {
    let solves = finest();
    let mut pass = true;
    let mut details = Vec::new();
    for ((b, dpp), (_, pde)) in solves.dpp.iter().zip(&solves.pde) {
        let distance = region_distance(dpp.initial(), pde.initial());
        pass &= distance <= 0.05;
        details.push(format!("{b} {distance:.4}"));
    }
    report(
        6,
        pass,
        &format!("sup |DPP - PDE| on [-2, 2] at h = 1/160: {}", details.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_07_dpp_consistency() {
    let solves = finest();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
    let mut pass = true;
    let mut details = Vec::new();
    for (b, dpp) in &solves.dpp {
        let r = dpp_consistency_check(dpp, &points, 5).unwrap();
        pass &= r.residual <= 0.05;
        details.push(format!("{b} {:.2e}", r.residual));
    }
    report(
        7,
        pass,
        &format!("200 off-grid points, 5-step window, residuals: {}", details.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_lipschitz_bounds() {
    let solves = finest();
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut check = |label: String, game: &GameSpec, dt: f64, field: &ValueField| {
        let d = game.declared();
        let sup_bound = d.bound_g + 1e-9;
        let lip_bound =
            d.lipschitz_g * (d.lipschitz_f * game.horizon()).exp() + 2.0 * field.grid.max_spacing() / dt;
        checked += 1;
        let lip = lipschitz_estimate(field);
        if field.sup_norm() > sup_bound || lip > lip_bound {
            failures.push(format!("{label} t={:.4}: sup {:.4}, lip {lip:.4}", field.time, field.sup_norm()));
        }
    };
    for (b, dpp) in &solves.dpp {
        let dt = dpp.partition.mesh();
        for f in &dpp.fields {
            check(format!("{b} dpp mixed"), &dpp.game, dt, f);
        }
    }
    for (b, pde) in &solves.pde {
        let game = GameSpec::builtin(*b);
        for f in &pde.fields {
            check(format!("{b} pde"), &game, pde.time_step, f);
        }
    }
    for mode in Mode::ALL {
        let r = uv_criterion_three(mode);
        for f in &r.fields {
            check(format!("uv dpp {mode}"), &r.game, r.partition.mesh(), f);
        }
    }
    let pass = failures.is_empty();
    report(
        8,
        pass,
        &format!(
            "{checked} fields checked, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_strategy_layer() {
    let dpp = Arc::new(uv_criterion_three(Mode::Mixed).clone());
    let game = dpp.game.clone();
    let partition = dpp.partition.clone();
    let setup = PlaySetup {
        game: &game,
        partition: &partition,
        t0: 0.0,
        x0: vec![0.0],
        substeps: 4,
    };
    let value = dpp.value_at(0.0, &[0.0]).unwrap();
    let (alpha, beta) = synthesize_saddle_strategies(Arc::clone(&dpp)).unwrap();
    // Every play goes through the fixed-point assertion; any violation
    // surfaces as an error here.
    let first = monte_carlo_payoff(&setup, &alpha, &beta, 10_000, 1).unwrap();
    let second = monte_carlo_payoff(&setup, &alpha, &beta, 10_000, 2).unwrap();
    let contains = first.distance_to(value) <= 0.05 && second.distance_to(value) <= 0.05;
    let overlap = first.ci_low <= second.ci_high && second.ci_low <= first.ci_high;
    let exploit = exploit_check(&setup, dpp, 20, 2_000, 3).unwrap();
    let pass = contains && overlap && exploit.worst_advantage() <= 0.1;
    report(
        9,
        pass,
        &format!(
            "uv x0=0: V = {value:.4}, seed 1 CI [{:.4}, {:.4}], seed 2 CI [{:.4}, {:.4}], \
             exploit advantage {:.4} over 20+20 deviations",
            first.ci_low,
            first.ci_high,
            second.ci_low,
            second.ci_high,
            exploit.worst_advantage()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_single_step_oracle() {
    let game = GameSpec::builtin(Builtin::Uv).with_horizon(0.5).unwrap();
    let partition = Partition::uniform(0.5, 1).unwrap();
    let grid = Grid::with_spacing(&[-2.0], &[2.0], 0.25).unwrap();
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (mode, expected) in [(Mode::Mixed, 0.5), (Mode::PureLower, 0.25), (Mode::PureUpper, 0.75)] {
        let r = backward_dpp(&game, &partition, &grid, mode, DEFAULT_TOL).unwrap();
        let v = r.initial().interpolate(&[0.25]);
        worst = worst.max((v - expected).abs());
        got.push(format!("{mode} {v}"));
    }
    let pass = worst <= 1e-12;
    report(10, pass, &format!("dt=0.5, x=0.25: {}", got.join(", ")));
    assert!(pass);
}
