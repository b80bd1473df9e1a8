//! Finite two-player zero-sum matrix games.
//!
//! Rows belong to the maximizer, columns to the minimizer. The exact solver
//! is the textbook LP reduction: shift the matrix so every entry is at least
//! one, then
//!
//! ```text
//! maximize  sum(y)   subject to  A y <= 1,  y >= 0
//! ```
//!
//! whose optimum is `1 / value(A)`; the normalized primal is an optimal
//! column strategy and the normalized dual an optimal row strategy. The
//! tableau simplex uses Bland's rule, so pivoting is deterministic and
//! cannot cycle.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-9;

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixGameError {
    #[error("payoff matrix must have at least one row and one column")]
    Empty,
    #[error("payoff matrix has {expected} slots but {got} entries were supplied")]
    Shape { expected: usize, got: usize },
    #[error("payoff entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("solution certificate gap {gap:e} exceeds tolerance {tol:e} for matrix {matrix}")]
    Uncertified {
        gap: f64,
        tol: f64,
        matrix: PayoffMatrix,
    },
    #[error("simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl PayoffMatrix {
    /// Row-major entries.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, MatrixGameError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixGameError::Empty);
        }
        if entries.len() != rows * cols {
            return Err(MatrixGameError::Shape {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|e| !e.is_finite()) {
            return Err(MatrixGameError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(PayoffMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MatrixGameError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(MatrixGameError::Shape {
                expected: rows.len() * cols,
                got: rows.iter().map(|r| r.as_ref().len()).sum(),
            });
        }
        let entries = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        PayoffMatrix::new(rows.len(), cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> PayoffMatrix {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j));
            }
        }
        PayoffMatrix {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PayoffMatrix {
        PayoffMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&e| f(e)).collect(),
        }
    }

    /// Expected payoff of each pure row against the column mix `q`.
    pub fn row_payoffs(&self, q: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Expected payoff of each pure column against the row mix `p`.
    pub fn col_payoffs(&self, p: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| p[i] * self.get(i, j)).sum())
            .collect()
    }

    /// `p^T M q`.
    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        self.row_payoffs(q).iter().zip(p).map(|(a, b)| a * b).sum()
    }
}

impl fmt::Display for PayoffMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixGameSolution {
    pub value: f64,
    /// Mixed strategy of the maximizer (over rows).
    pub row_strategy: Vec<f64>,
    /// Mixed strategy of the minimizer (over columns).
    pub col_strategy: Vec<f64>,
    /// `max_i (M q)_i - min_j (p^T M)_j`.
    pub certificate_gap: f64,
}

/// Which player's LP is solved directly. Both give the same value; the
/// other player's strategy is read off the dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    Maximizer,
    #[default]
    Minimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PureValues {
    /// `max_i min_j M_ij`.
    pub lower: f64,
    /// `min_j max_i M_ij`.
    pub upper: f64,
    pub lower_row: usize,
    pub upper_col: usize,
}

pub fn pure_values(m: &PayoffMatrix) -> PureValues {
    let (mut lower, mut lower_row) = (f64::NEG_INFINITY, 0);
    for i in 0..m.rows {
        let worst = m.row(i).iter().copied().fold(f64::INFINITY, f64::min);
        if worst > lower {
            lower = worst;
            lower_row = i;
        }
    }
    let (mut upper, mut upper_col) = (f64::INFINITY, 0);
    for j in 0..m.cols {
        let best = (0..m.rows).map(|i| m.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        if best < upper {
            upper = best;
            upper_col = j;
        }
    }
    PureValues {
        lower,
        upper,
        lower_row,
        upper_col,
    }
}

/// `max_i (M q)_i - min_j (p M)_j`; NaN if either strategy is not a
/// finite probability vector.
pub fn certificate_gap(m: &PayoffMatrix, p: &[f64], q: &[f64]) -> f64 {
    if !is_distribution(p) || !is_distribution(q) {
        return f64::NAN;
    }
    let best_row = m.row_payoffs(q).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let worst_col = m.col_payoffs(p).into_iter().fold(f64::INFINITY, f64::min);
    best_row - worst_col
}

fn is_distribution(s: &[f64]) -> bool {
    s.iter().all(|&x| x.is_finite() && x >= -1e-12) && (s.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// Solves the game exactly, solving the minimizer's LP.
pub fn solve_matrix_game(m: &PayoffMatrix, tol: f64) -> Result<MatrixGameSolution, MatrixGameError> {
    solve_matrix_game_from(m, tol, Side::Minimizer)
}

pub fn solve_matrix_game_from(
    m: &PayoffMatrix,
    tol: f64,
    side: Side,
) -> Result<MatrixGameSolution, MatrixGameError> {
    let pure = pure_values(m);
    if pure.lower == pure.upper {
        let mut row_strategy = vec![0.0; m.rows];
        let mut col_strategy = vec![0.0; m.cols];
        row_strategy[pure.lower_row] = 1.0;
        col_strategy[pure.upper_col] = 1.0;
        return Ok(MatrixGameSolution {
            value: pure.lower,
            row_strategy,
            col_strategy,
            certificate_gap: 0.0,
        });
    }
    let (value, row_strategy, col_strategy) = match side {
        Side::Minimizer => lp_solve(m)?,
        Side::Maximizer => {
            // The maximizer of M is the minimizer of -M^T.
            let (v, p, q) = lp_solve(&m.transpose().map(|e| -e))?;
            (-v, q, p)
        }
    };
    let gap = certificate_gap(m, &row_strategy, &col_strategy);
    if !(gap <= tol) {
        return Err(MatrixGameError::Uncertified {
            gap,
            tol,
            matrix: m.clone(),
        });
    }
    Ok(MatrixGameSolution {
        value: value.clamp(pure.lower, pure.upper),
        row_strategy,
        col_strategy,
        certificate_gap: gap.max(0.0),
    })
}

/// Returns `(value, row_strategy, col_strategy)`.
fn lp_solve(m: &PayoffMatrix) -> Result<(f64, Vec<f64>, Vec<f64>), MatrixGameError> {
    let (rows, cols) = (m.rows, m.cols);
    let min = m.entries.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;

    // Columns: y_0..y_{cols-1}, slacks s_0..s_{rows-1}, rhs.
    let width = cols + rows + 1;
    let rhs = width - 1;
    let mut tableau = vec![0.0; rows * width];
    for i in 0..rows {
        for j in 0..cols {
            tableau[i * width + j] = m.get(i, j) + shift;
        }
        tableau[i * width + cols + i] = 1.0;
        tableau[i * width + rhs] = 1.0;
    }
    // Reduced costs; the last slot holds minus the objective.
    let mut objective = vec![0.0; width];
    objective[..cols].fill(1.0);
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let limit = 50 * (rows + cols) * (rows + cols) + 100;
    let mut pivots = 0;
    while let Some(enter) = (0..rhs).find(|&j| objective[j] > PIVOT_EPS) {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let a = tableau[i * width + enter];
            if a > PIVOT_EPS {
                let ratio = tableau[i * width + rhs] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[r]) {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        // A has positive entries, so every column is bounded.
        let (row, _) = leave.ok_or(MatrixGameError::PivotLimit(pivots))?;
        pivot(&mut tableau, &mut objective, width, row, enter);
        basis[row] = enter;
        pivots += 1;
        if pivots > limit {
            return Err(MatrixGameError::PivotLimit(limit));
        }
    }

    let mut y = vec![0.0; cols];
    for (i, &b) in basis.iter().enumerate() {
        if b < cols {
            y[b] = tableau[i * width + rhs];
        }
    }
    let x: Vec<f64> = (0..rows).map(|i| -objective[cols + i]).collect();
    let total = y.iter().sum::<f64>();
    let value = 1.0 / total - shift;
    Ok((value, normalize(x), normalize(y)))
}

fn pivot(tableau: &mut [f64], objective: &mut [f64], width: usize, row: usize, col: usize) {
    let rows = tableau.len() / width;
    let p = tableau[row * width + col];
    for k in 0..width {
        tableau[row * width + k] /= p;
    }
    tableau[row * width + col] = 1.0;
    let pivot_row: Vec<f64> = tableau[row * width..(row + 1) * width].to_vec();
    for i in 0..rows {
        if i == row {
            continue;
        }
        let factor = tableau[i * width + col];
        if factor != 0.0 {
            for k in 0..width {
                tableau[i * width + k] -= factor * pivot_row[k];
            }
            tableau[i * width + col] = 0.0;
        }
    }
    let factor = objective[col];
    for k in 0..width {
        objective[k] -= factor * pivot_row[k];
    }
    objective[col] = 0.0;
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    for c in &mut w {
        if *c < 0.0 {
            *c = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    for c in &mut w {
        *c /= s;
    }
    w
}

/// Brown–Robinson fictitious play with alternating updates.
///
/// The seed picks the maximizer's opening action; best-response ties go to
/// the lowest index. The reported value is the midpoint of the bounds
/// certified by the empirical strategies, so it is within
/// `certificate_gap / 2` of the true value.
pub fn fictitious_play(m: &PayoffMatrix, iterations: usize, seed: u64) -> MatrixGameSolution {
    let iterations = iterations.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row_counts = vec![0usize; m.rows];
    let mut col_counts = vec![0usize; m.cols];
    // Cumulative payoff of each row against the columns played so far,
    // and of each column against the rows played so far.
    let mut row_totals = vec![0.0; m.rows];
    let mut col_totals = vec![0.0; m.cols];

    let mut i = rng.gen_range(0..m.rows);
    for _ in 0..iterations {
        row_counts[i] += 1;
        for (j, total) in col_totals.iter_mut().enumerate() {
            *total += m.get(i, j);
        }
        let j = argmin(&col_totals);
        col_counts[j] += 1;
        for (r, total) in row_totals.iter_mut().enumerate() {
            *total += m.get(r, j);
        }
        i = argmax(&row_totals);
    }

    let n = iterations as f64;
    let p: Vec<f64> = row_counts.iter().map(|&c| c as f64 / n).collect();
    let q: Vec<f64> = col_counts.iter().map(|&c| c as f64 / n).collect();
    let upper = m.row_payoffs(&q).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let lower = m.col_payoffs(&p).into_iter().fold(f64::INFINITY, f64::min);
    MatrixGameSolution {
        value: 0.5 * (upper + lower),
        row_strategy: p,
        col_strategy: q,
        certificate_gap: upper - lower,
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = k;
        }
    }
    best
}
