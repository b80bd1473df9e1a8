//! Reference solver for the Hamilton-Jacobi-Isaacs terminal value problem
//!
//! ```text
//! W_t + H(t, x, ∇W) = 0,   W(T, x) = g(x)
//! ```
//!
//! with `H` the mixed Hamiltonian, marched backward in time by a
//! Lax-Friedrichs scheme. The numerical Hamiltonian is evaluated at the
//! central gradient and stabilized by dissipation `α_k (p⁺_k - p⁻_k) / 2`
//! per axis with `α_k = C_f`, which bounds `|∂H/∂p_k|`. Under
//! `Δt Σ_k α_k / h_k ≤ 1` every update is a convex combination of the
//! neighbouring values plus a term whose dependence on them is dominated by
//! the dissipation, so the scheme is monotone.
//!
//! The module also hosts the convergence harness that compares the DPP
//! fields with a closed-form or PDE reference under mesh refinement.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dpp::{backward_dpp, terminal_field};
use crate::error::{Error, Result};
use crate::expr::hat;
use crate::game::{Builtin, GameSpec, Partition};
use crate::grid::{Grid, Mode, ValueField};
use crate::hamiltonian::mixed_hamiltonian;
use crate::matrix_game::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeOptions {
    pub tol: f64,
    /// Cache `H` per node keyed by the quantized gradient. Only honoured
    /// for time-independent dynamics.
    pub memoize: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            tol: DEFAULT_TOL,
            memoize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub grid: Grid,
    pub time_step: f64,
    pub steps: usize,
    /// Fields from `T` (index 0) down to `0` (last).
    pub fields: Vec<ValueField>,
    pub dissipation: Vec<f64>,
    /// `Δt Σ_k α_k / h_k`.
    pub cfl_ratio: f64,
}

impl PdeSolution {
    pub fn initial(&self) -> &ValueField {
        self.fields.last().expect("solutions hold at least the terminal field")
    }
}

/// Largest stable time step for the given dissipation and CFL number.
pub fn max_time_step(grid: &Grid, dissipation: &[f64], cfl: f64) -> f64 {
    let rate: f64 = dissipation
        .iter()
        .zip(grid.spacing())
        .map(|(a, h)| a / h)
        .sum();
    cfl / rate
}

pub fn solve_hji(game: &GameSpec, grid: &Grid, n_steps: usize, cfl: f64) -> Result<PdeSolution> {
    solve_hji_with(game, grid, n_steps, cfl, PdeOptions::default())
}

/// Marches from `T` to `0` in `max(n_steps, ⌈T / Δt_max⌉)` equal steps.
pub fn solve_hji_with(
    game: &GameSpec,
    grid: &Grid,
    n_steps: usize,
    cfl: f64,
    options: PdeOptions,
) -> Result<PdeSolution> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::Usage(format!("cfl must lie in (0, 1], got {cfl}")));
    }
    if grid.dim() != game.state_dim() {
        return Err(Error::Usage(format!(
            "grid dimension {} does not match the game's state dimension {}",
            grid.dim(),
            game.state_dim()
        )));
    }
    let horizon = game.horizon();
    let dissipation = vec![game.declared().bound_f; grid.dim()];
    let dt_max = max_time_step(grid, &dissipation, cfl);
    let needed = (horizon / dt_max * (1.0 - 1e-12)).ceil() as usize;
    let steps = n_steps.max(needed).max(1);
    let time_step = horizon / steps as f64;
    let cfl_ratio = time_step * dissipation.iter().zip(grid.spacing()).map(|(a, h)| a / h).sum::<f64>();
    if cfl_ratio > 1.0 + 1e-12 {
        return Err(Error::Internal(format!("CFL ratio {cfl_ratio} exceeds 1 after rounding")));
    }

    let memoize = options.memoize && !game.is_time_dependent();
    let mut memo: Vec<HashMap<Vec<i64>, f64>> = if memoize {
        vec![HashMap::new(); grid.len()]
    } else {
        Vec::new()
    };

    let mut fields = Vec::with_capacity(steps + 1);
    fields.push(terminal_field(game, grid, Mode::Mixed)?);
    for k in 0..steps {
        let t_known = horizon - k as f64 * time_step;
        let prev = &fields.last().expect("terminal field is present").values;
        let values = lf_step_inner(
            game,
            grid,
            t_known,
            time_step,
            &dissipation,
            prev,
            options.tol,
            memoize.then_some(&mut memo),
        )?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::PdeBlowUp { step: k + 1 });
        }
        let time = if k + 1 == steps {
            0.0
        } else {
            horizon - (k + 1) as f64 * time_step
        };
        fields.push(ValueField {
            grid: grid.clone(),
            time,
            values,
            mode: Mode::Mixed,
        });
    }
    Ok(PdeSolution {
        grid: grid.clone(),
        time_step,
        steps,
        fields,
        dissipation,
        cfl_ratio,
    })
}

/// One backward step from the values `next` known at time `t` to time
/// `t - dt`.
pub fn lf_step(
    game: &GameSpec,
    grid: &Grid,
    t: f64,
    dt: f64,
    dissipation: &[f64],
    next: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    lf_step_inner(game, grid, t, dt, dissipation, next, tol, None)
}

#[allow(clippy::too_many_arguments)]
fn lf_step_inner(
    game: &GameSpec,
    grid: &Grid,
    t: f64,
    dt: f64,
    dissipation: &[f64],
    next: &[f64],
    tol: f64,
    memo: Option<&mut Vec<HashMap<Vec<i64>, f64>>>,
) -> Result<Vec<f64>> {
    let update = |idx: usize, cache: Option<&mut HashMap<Vec<i64>, f64>>| -> Result<f64> {
        let d = grid.dim();
        let mut central = vec![0.0; d];
        let mut viscosity = 0.0;
        let here = next[idx];
        for a in 0..d {
            let stride = grid.strides()[a];
            let k = (idx / stride) % grid.counts()[a];
            let below = if k > 0 { next[idx - stride] } else { here };
            let above = if k + 1 < grid.counts()[a] { next[idx + stride] } else { here };
            let h = grid.spacing()[a];
            let p_minus = (here - below) / h;
            let p_plus = (above - here) / h;
            central[a] = 0.5 * (p_minus + p_plus);
            viscosity += 0.5 * dissipation[a] * (p_plus - p_minus);
        }
        let x = grid.node(idx);
        let h_value = match cache {
            Some(cache) => {
                let key: Vec<i64> = central.iter().map(|p| (p * 1e12).round() as i64).collect();
                match cache.get(&key) {
                    Some(&v) => v,
                    None => {
                        let v = mixed_hamiltonian(game, t, &x, &central, tol)?;
                        cache.insert(key, v);
                        v
                    }
                }
            }
            None => mixed_hamiltonian(game, t, &x, &central, tol)?,
        };
        Ok(here + dt * (h_value + viscosity))
    };
    match memo {
        Some(memo) => memo
            .par_iter_mut()
            .enumerate()
            .map(|(idx, cache)| update(idx, Some(cache)))
            .collect(),
        None => (0..grid.len())
            .into_par_iter()
            .map(|idx| update(idx, None))
            .collect(),
    }
}

/// Exact `W(t, x)` for the pristine builtins.
///
/// `uv` and `uv_shift` have `H ≡ 0`, so `W = g`. For `separable`,
/// `H(p) = |p| / 2` and the Hopf-Lax formula gives the running maximum of
/// `g` over the ball of radius `(T - t) / 2`.
pub fn closed_form_value(builtin: Builtin, horizon: f64, t: f64, x: &[f64]) -> f64 {
    match builtin {
        Builtin::Uv | Builtin::UvShift => hat(x[0]),
        Builtin::Separable => {
            let radius = 0.5 * (horizon - t);
            let dist = x[0].abs();
            if dist <= radius {
                1.0
            } else {
                hat(dist - radius)
            }
        }
    }
}

pub enum Reference {
    /// Exact initial-time value function.
    ClosedForm {
        name: String,
        value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
    /// PDE solve on the finest level's grid.
    FinestSolve { cfl: f64 },
}

impl Reference {
    pub fn describe(&self) -> String {
        match self {
            Reference::ClosedForm { name, .. } => format!("closed form: {name}"),
            Reference::FinestSolve { cfl } => format!("finest PDE solve (cfl {cfl})"),
        }
    }
}

pub fn closed_form_reference(game: &GameSpec) -> Option<Reference> {
    let builtin = game.pristine_builtin()?;
    let horizon = game.horizon();
    let name = match builtin {
        Builtin::Uv | Builtin::UvShift => "W(0, x) = g(x)",
        Builtin::Separable => "Hopf-Lax: W(0, x) = max over |y - x| <= T/2 of g(y)",
    };
    Some(Reference::ClosedForm {
        name: name.to_string(),
        value: Box::new(move |x| closed_form_value(builtin, horizon, 0.0, x)),
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub region_lower: Vec<f64>,
    pub region_upper: Vec<f64>,
    /// Grid spacing at level `n` is `h_factor · T / n`.
    pub h_factor: f64,
    pub tol: f64,
    /// Allowed relative increase of the error from one level to the next.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub intervals: usize,
    pub mesh: f64,
    pub h: f64,
    pub error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Sorted by decreasing mesh.
    pub rows: Vec<ConvergenceRow>,
    pub reference: String,
    pub slack: f64,
    pub non_increasing: bool,
    /// `log(e_k / e_{k+1}) / log(mesh_k / mesh_{k+1})` between levels.
    pub observed_rates: Vec<f64>,
}

/// Sup-norm error of mixed DPP values at `t = 0` over the region of
/// interest, for each partition size in `meshes`.
pub fn convergence_study(
    game: &GameSpec,
    meshes: &[usize],
    setup: &ConvergenceSetup,
    reference: &Reference,
) -> Result<ConvergenceReport> {
    if meshes.len() < 3 {
        return Err(Error::Usage(format!(
            "a convergence study needs at least 3 mesh levels, got {}",
            meshes.len()
        )));
    }
    if meshes.contains(&0) {
        return Err(Error::Usage("mesh levels must be positive".into()));
    }
    let mut levels = meshes.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let horizon = game.horizon();
    let grid_for = |n: usize| {
        Grid::with_spacing(
            &setup.domain_lower,
            &setup.domain_upper,
            setup.h_factor * horizon / n as f64,
        )
    };

    let pde_reference = match reference {
        Reference::FinestSolve { cfl } => {
            let finest = grid_for(*levels.last().expect("levels are nonempty"))?;
            Some(solve_hji(game, &finest, 0, *cfl)?)
        }
        Reference::ClosedForm { .. } => None,
    };

    let mut rows = Vec::with_capacity(levels.len());
    for &n in &levels {
        let started = Instant::now();
        let partition = Partition::uniform(horizon, n)?;
        let grid = grid_for(n)?;
        let result = backward_dpp(game, &partition, &grid, Mode::Mixed, setup.tol)?;
        let field = result.initial();
        let mut error: f64 = 0.0;
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            if !Grid::contains_in(&x, &setup.region_lower, &setup.region_upper) {
                continue;
            }
            let exact = match (&pde_reference, reference) {
                (Some(sol), _) => sol.initial().interpolate(&x),
                (None, Reference::ClosedForm { value, .. }) => value(&x),
                (None, Reference::FinestSolve { .. }) => unreachable!("solved above"),
            };
            error = error.max((field.values[idx] - exact).abs());
        }
        rows.push(ConvergenceRow {
            intervals: n,
            mesh: partition.mesh(),
            h: grid.max_spacing(),
            error,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let non_increasing = rows
        .windows(2)
        .all(|w| w[1].error <= w[0].error * (1.0 + setup.slack));
    let observed_rates = rows
        .windows(2)
        .map(|w| (w[0].error / w[1].error).ln() / (w[0].mesh / w[1].mesh).ln())
        .collect();
    Ok(ConvergenceReport {
        rows,
        reference: reference.describe(),
        slack: setup.slack,
        non_increasing,
        observed_rates,
    })
}
