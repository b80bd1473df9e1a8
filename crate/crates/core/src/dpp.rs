//! Backward dynamic programming for the partition values.
//!
//! On each partition interval both players pick an action independently
//! (mixed or pure, depending on [`Mode`]). The state moves by one explicit
//! Euler step, so for a node `x` at time `t_i` the one-step payoff matrix is
//!
//! ```text
//! M[a][b] = W_{i+1}(x + (t_{i+1} - t_i) f(t_i, x, U[a], V[b]))
//! ```
//!
//! with `W_{i+1}` the multilinear interpolant of the next field. The
//! expected payoff under independent mixed actions is bilinear in the two
//! mixtures, so the mixed node value is the exact value of `M`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{GameSpec, Partition};
use crate::grid::{lipschitz_estimate, Grid, Mode, ValueField};
use crate::matrix_game::{
    pure_values, solve_matrix_game_from, MatrixGameError, PayoffMatrix, Side, DEFAULT_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppOptions {
    /// Certificate tolerance of every matrix game.
    pub tol: f64,
    /// Which player's LP the node games are solved from.
    pub side: Side,
}

impl Default for DppOptions {
    fn default() -> Self {
        DppOptions {
            tol: DEFAULT_TOL,
            side: Side::Minimizer,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DppResult {
    pub game: GameSpec,
    pub partition: Partition,
    pub mode: Mode,
    /// One field per partition node, `fields[i]` at time `t_i`.
    pub fields: Vec<ValueField>,
    pub lipschitz_per_node: Vec<f64>,
    pub options: DppOptions,
}

impl DppResult {
    pub fn grid(&self) -> &Grid {
        &self.fields[0].grid
    }

    pub fn initial(&self) -> &ValueField {
        &self.fields[0]
    }

    /// Value at an arbitrary `(t0, x0)`. Off the partition nodes this is
    /// one game step from `t0` to the next node.
    pub fn value_at(&self, t0: f64, x0: &[f64]) -> Result<f64> {
        if let Some(i) = self.partition.node_index(t0) {
            return Ok(self.fields[i].interpolate(x0));
        }
        let j = self.partition.first_interval(t0)?;
        let next = &self.fields[j + 1];
        let m = one_step_matrix(&self.game, next, t0, next.time - t0, x0)?;
        node_value(self.mode, &m, self.options.tol, self.options.side).map_err(Error::from)
    }
}

/// One-step payoff matrix at state `x`, time `t`, step `dt`, continuing
/// with the value field `next`.
pub fn one_step_matrix(
    game: &GameSpec,
    next: &ValueField,
    t: f64,
    dt: f64,
    x: &[f64],
) -> Result<PayoffMatrix> {
    let d = game.state_dim();
    let mut f = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut entries = Vec::with_capacity(game.n_u() * game.n_v());
    for a in 0..game.n_u() {
        for b in 0..game.n_v() {
            game.dynamics_into(t, x, a, b, &mut f)?;
            for k in 0..d {
                y[k] = x[k] + dt * f[k];
            }
            entries.push(next.interpolate(&y));
        }
    }
    PayoffMatrix::new(game.n_u(), game.n_v(), entries).map_err(|source| Error::NodeSolve {
        time: t,
        node: x.to_vec(),
        source,
    })
}

pub fn node_value(
    mode: Mode,
    m: &PayoffMatrix,
    tol: f64,
    side: Side,
) -> Result<f64, MatrixGameError> {
    Ok(match mode {
        Mode::Mixed => solve_matrix_game_from(m, tol, side)?.value,
        Mode::PureLower => pure_values(m).lower,
        Mode::PureUpper => pure_values(m).upper,
    })
}

pub fn terminal_field(game: &GameSpec, grid: &Grid, mode: Mode) -> Result<ValueField> {
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| game.terminal(&grid.node(idx)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueField {
        grid: grid.clone(),
        time: game.horizon(),
        values,
        mode,
    })
}

pub fn backward_dpp(
    game: &GameSpec,
    partition: &Partition,
    grid: &Grid,
    mode: Mode,
    tol: f64,
) -> Result<DppResult> {
    backward_dpp_with(
        game,
        partition,
        grid,
        mode,
        DppOptions {
            tol,
            ..DppOptions::default()
        },
    )
}

pub fn backward_dpp_with(
    game: &GameSpec,
    partition: &Partition,
    grid: &Grid,
    mode: Mode,
    options: DppOptions,
) -> Result<DppResult> {
    if grid.dim() != game.state_dim() {
        return Err(Error::Usage(format!(
            "grid dimension {} does not match the game's state dimension {}",
            grid.dim(),
            game.state_dim()
        )));
    }
    if (partition.horizon() - game.horizon()).abs() > 1e-12 * game.horizon() {
        return Err(Error::Usage(format!(
            "partition ends at {} but the game horizon is {}",
            partition.horizon(),
            game.horizon()
        )));
    }
    let n = partition.intervals();
    let nodes = partition.nodes();
    let mut fields = Vec::with_capacity(n + 1);
    fields.push(terminal_field(game, grid, mode)?);
    for i in (0..n).rev() {
        let next = fields.last().expect("terminal field is present");
        let (t, dt) = (nodes[i], nodes[i + 1] - nodes[i]);
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx);
                let m = one_step_matrix(game, next, t, dt, &x)?;
                let value = node_value(mode, &m, options.tol, options.side).map_err(|source| {
                    Error::NodeSolve {
                        time: t,
                        node: x.clone(),
                        source,
                    }
                })?;
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::NonFiniteValue { time: t, node: x })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        fields.push(ValueField {
            grid: grid.clone(),
            time: t,
            values,
            mode,
        });
    }
    fields.reverse();
    let lipschitz_per_node = fields.iter().map(lipschitz_estimate).collect();
    Ok(DppResult {
        game: game.clone(),
        partition: partition.clone(),
        mode,
        fields,
        lipschitz_per_node,
        options,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConsistencyReport {
    /// `max |recomputed - stored|` over the sample points at `t_0`.
    pub residual: f64,
    /// `residual / (h + |Π|)`.
    pub constant: f64,
    pub window: usize,
    pub points: usize,
}

/// Hard cap on game-tree leaves per sample point.
const MAX_TREE_LEAVES: f64 = 4.0e6;

/// Re-derives `V(t_0, x)` at each sample point by nesting the one-step
/// games of the window `t_0 … t_l` at the exact (off-grid) states, with the
/// stored field at `t_l` as terminal data, and compares it with the
/// interpolated stored field at `t_0`.
///
/// The game tree has `(|U| |V|)^l` leaves per point, so windows stay short.
pub fn dpp_consistency_check(
    result: &DppResult,
    sample_points: &[Vec<f64>],
    l: usize,
) -> Result<ConsistencyReport> {
    if l > result.partition.intervals() {
        return Err(Error::Usage(format!(
            "window end {l} exceeds the {} partition intervals",
            result.partition.intervals()
        )));
    }
    let branching = (result.game.n_u() * result.game.n_v()) as f64;
    if branching.powi(l as i32) > MAX_TREE_LEAVES {
        return Err(Error::Usage(format!(
            "window of {l} steps needs {branching}^{l} leaves per point; shorten it"
        )));
    }
    let residual = sample_points
        .par_iter()
        .map(|x| {
            let recomputed = nested_value(result, 0, l, x)?;
            Ok((recomputed - result.fields[0].interpolate(x)).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let scale = result.grid().max_spacing() + result.partition.mesh();
    Ok(ConsistencyReport {
        residual,
        constant: residual / scale,
        window: l,
        points: sample_points.len(),
    })
}

fn nested_value(result: &DppResult, i: usize, l: usize, x: &[f64]) -> Result<f64> {
    if i == l {
        return Ok(result.fields[l].interpolate(x));
    }
    let game = &result.game;
    let nodes = result.partition.nodes();
    let (t, dt) = (nodes[i], nodes[i + 1] - nodes[i]);
    let mut f = vec![0.0; game.state_dim()];
    let mut entries = Vec::with_capacity(game.n_u() * game.n_v());
    for a in 0..game.n_u() {
        for b in 0..game.n_v() {
            game.dynamics_into(t, x, a, b, &mut f)?;
            let y: Vec<f64> = x.iter().zip(&f).map(|(xk, fk)| xk + dt * fk).collect();
            entries.push(nested_value(result, i + 1, l, &y)?);
        }
    }
    let m = PayoffMatrix::new(game.n_u(), game.n_v(), entries)?;
    Ok(node_value(result.mode, &m, result.options.tol, result.options.side)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Builtin;
    use approx::assert_abs_diff_eq;

    fn uv_single_step() -> (GameSpec, Partition, Grid) {
        let game = GameSpec::builtin(Builtin::Uv).with_horizon(0.5).unwrap();
        let partition = Partition::uniform(0.5, 1).unwrap();
        let grid = Grid::with_spacing(&[-2.0], &[2.0], 0.25).unwrap();
        (game, partition, grid)
    }

    #[test]
    fn single_step_hand_values() {
        let (game, partition, grid) = uv_single_step();
        let idx = (0..grid.len()).find(|&k| grid.node(k)[0] == 0.25).unwrap();
        let terminal = terminal_field(&game, &grid, Mode::Mixed).unwrap();
        let m = one_step_matrix(&game, &terminal, 0.0, 0.5, &[0.25]).unwrap();
        assert_eq!(m.entries(), &[0.25, 0.75, 0.75, 0.25]);
        for (mode, expected) in [
            (Mode::Mixed, 0.5),
            (Mode::PureLower, 0.25),
            (Mode::PureUpper, 0.75),
        ] {
            let r = backward_dpp(&game, &partition, &grid, mode, DEFAULT_TOL).unwrap();
            assert_abs_diff_eq!(r.fields[0].values[idx], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_and_constant_terminal() {
        for c in [0.0, 0.7] {
            let game = GameSpec::builtin(Builtin::UvShift)
                .with_terminal(&c.to_string(), 0.0, c)
                .unwrap();
            let p = Partition::uniform(1.0, 5).unwrap();
            let grid = Grid::with_spacing(&[-3.0], &[3.0], 0.1).unwrap();
            for mode in Mode::ALL {
                let r = backward_dpp(&game, &p, &grid, mode, DEFAULT_TOL).unwrap();
                for f in &r.fields {
                    assert!(f.values.iter().all(|&v| v == c));
                }
            }
        }
    }

    #[test]
    fn terminal_field_is_exact() {
        let game = GameSpec::builtin(Builtin::Separable);
        let p = Partition::uniform(1.0, 4).unwrap();
        let grid = Grid::with_spacing(&[-4.0], &[4.0], 0.05).unwrap();
        let r = backward_dpp(&game, &p, &grid, Mode::Mixed, DEFAULT_TOL).unwrap();
        let last = r.fields.last().unwrap();
        assert_eq!(last.time, 1.0);
        for k in 0..grid.len() {
            assert_eq!(last.values[k], game.terminal(&grid.node(k)).unwrap());
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let game = GameSpec::builtin(Builtin::Uv);
        let p = Partition::uniform(2.0, 4).unwrap();
        let grid = Grid::with_spacing(&[-3.0], &[3.0], 0.1).unwrap();
        assert!(matches!(
            backward_dpp(&game, &p, &grid, Mode::Mixed, DEFAULT_TOL),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn consistency_trivial_windows() {
        let game = GameSpec::builtin(Builtin::UvShift);
        let p = Partition::uniform(1.0, 10).unwrap();
        let grid = Grid::with_spacing(&[-3.0], &[3.0], 0.05).unwrap();
        let r = backward_dpp(&game, &p, &grid, Mode::Mixed, DEFAULT_TOL).unwrap();
        let points = vec![vec![0.123], vec![-1.7], vec![0.5]];
        let empty = dpp_consistency_check(&r, &points, 0).unwrap();
        assert_eq!(empty.residual, 0.0);
        let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|k| grid.node(k)).collect();
        let one = dpp_consistency_check(&r, &nodes, 1).unwrap();
        assert!(one.residual <= 1e-12, "{}", one.residual);
        assert!(dpp_consistency_check(&r, &points, 11).is_err());
    }

    #[test]
    fn value_at_between_nodes() {
        let game = GameSpec::builtin(Builtin::Uv);
        let p = Partition::uniform(1.0, 4).unwrap();
        let grid = Grid::with_spacing(&[-3.0], &[3.0], 0.05).unwrap();
        let r = backward_dpp(&game, &p, &grid, Mode::Mixed, DEFAULT_TOL).unwrap();
        assert_eq!(r.value_at(0.25, &[0.5]).unwrap(), r.fields[1].interpolate(&[0.5]));
        // from t = 0.1, one step of length 0.15 to t_1: mean of two shifted values
        let v = r.value_at(0.1, &[0.0]).unwrap();
        let expected = 0.5 * (r.fields[1].interpolate(&[0.15]) + r.fields[1].interpolate(&[-0.15]));
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }
}
