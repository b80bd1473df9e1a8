//! Uniform tensor grids and value fields sampled on them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameSpec;

/// Offsets closer than this (in cell units) to a node snap onto it, so that
/// evaluating a field at a node returns the stored value exactly.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || counts.len() != d {
            return Err(Error::Usage("grid bounds and counts must share one dimension".into()));
        }
        for axis in 0..d {
            if !(lower[axis].is_finite() && upper[axis].is_finite() && upper[axis] > lower[axis]) {
                return Err(Error::Usage(format!(
                    "grid axis {axis}: need lower < upper, got [{}, {}]",
                    lower[axis], upper[axis]
                )));
            }
            if counts[axis] < 2 {
                return Err(Error::Usage(format!(
                    "grid axis {axis}: need at least 2 nodes, got {}",
                    counts[axis]
                )));
            }
        }
        let spacing = (0..d)
            .map(|a| (upper[a] - lower[a]) / (counts[a] - 1) as f64)
            .collect();
        let mut strides = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        Ok(Grid {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            counts: counts.to_vec(),
            spacing,
            strides,
        })
    }

    /// Grid whose spacing is as close to `h` as the box allows.
    pub fn with_spacing(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Usage(format!("grid spacing must be positive, got {h}")));
        }
        let counts: Vec<usize> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| (((u - l) / h).round().max(1.0)) as usize + 1)
            .collect();
        Grid::new(lower, upper, &counts)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        if k + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + k as f64 * self.spacing[axis]
        }
    }

    /// Per-axis index of flat node `idx`.
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in 0..self.dim() {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(idx, &mut x);
        x
    }

    pub fn node_into(&self, mut idx: usize, x: &mut [f64]) {
        for a in 0..self.dim() {
            let k = idx / self.strides[a];
            idx %= self.strides[a];
            x[a] = self.coordinate(a, k);
        }
    }

    /// Whether `x` lies inside the closed box `[lo, hi]`.
    pub fn contains_in(x: &[f64], lo: &[f64], hi: &[f64]) -> bool {
        x.iter().zip(lo).zip(hi).all(|((c, l), h)| c >= l && c <= h)
    }

    /// Multilinear interpolation of nodal `values` at `x`; coordinates
    /// outside the box are clamped onto it first.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        if d == 1 {
            let (k, w) = self.locate(0, x[0]);
            return if w == 0.0 {
                values[k]
            } else {
                values[k] * (1.0 - w) + values[k + 1] * w
            };
        }
        let mut base = 0;
        let mut weights = Vec::with_capacity(d);
        for a in 0..d {
            let (k, w) = self.locate(a, x[a]);
            base += k * self.strides[a];
            weights.push(w);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = base;
            for (a, &w) in weights.iter().enumerate() {
                if corner & (1 << a) != 0 {
                    weight *= w;
                    idx += self.strides[a];
                } else {
                    weight *= 1.0 - w;
                }
            }
            if weight != 0.0 {
                acc += weight * values[idx];
            }
        }
        acc
    }

    /// Cell index and weight of the upper neighbour along `axis`.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let n = self.counts[axis];
        let s = (x.clamp(self.lower[axis], self.upper[axis]) - self.lower[axis]) / self.spacing[axis];
        let nearest = s.round();
        if (s - nearest).abs() <= SNAP {
            let k = nearest as usize;
            return if k + 1 >= n { (n - 2, 1.0) } else { (k, 0.0) };
        }
        let k = (s.floor() as usize).min(n - 2);
        (k, s - k as f64)
    }
}

/// Result of the padding audit: the region of interest must sit at least
/// `C_f · T` inside the domain so that clamping at the boundary cannot
/// reach it within the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaddingWarning {
    pub axis: usize,
    pub margin: f64,
    pub required: f64,
}

impl fmt::Display for PaddingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "axis {}: domain margin {} around the region of interest is below C_f*T = {}",
            self.axis, self.margin, self.required
        )
    }
}

pub fn padding_audit(
    grid: &Grid,
    game: &GameSpec,
    region_lower: &[f64],
    region_upper: &[f64],
) -> Vec<PaddingWarning> {
    let required = game.declared().bound_f * game.horizon();
    (0..grid.dim())
        .filter_map(|axis| {
            let margin = (region_lower[axis] - grid.lower[axis])
                .min(grid.upper[axis] - region_upper[axis]);
            (margin < required - 1e-12).then_some(PaddingWarning {
                axis,
                margin,
                required,
            })
        })
        .collect()
}

/// Uniform grid with `resolution[axis]` nodes per axis, audited against the
/// region of interest (the whole domain when `region` is `None`). Audit
/// failures are logged and returned, not raised.
pub fn build_grid(
    lower: &[f64],
    upper: &[f64],
    resolution: &[usize],
    game: &GameSpec,
    region: Option<(&[f64], &[f64])>,
) -> Result<(Grid, Vec<PaddingWarning>)> {
    if lower.len() != game.state_dim() {
        return Err(Error::Usage(format!(
            "grid dimension {} does not match the game's state dimension {}",
            lower.len(),
            game.state_dim()
        )));
    }
    let grid = Grid::new(lower, upper, resolution)?;
    let (rl, ru) = region.unwrap_or((lower, upper));
    if rl.len() != grid.dim() || ru.len() != grid.dim() {
        return Err(Error::Usage("region of interest has the wrong dimension".into()));
    }
    let warnings = padding_audit(&grid, game, rl, ru);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((grid, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mixed,
    PureLower,
    PureUpper,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Mixed, Mode::PureLower, Mode::PureUpper];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mixed => "mixed",
            Mode::PureLower => "pure_lower",
            Mode::PureUpper => "pure_upper",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown mode `{s}`")))
    }
}

/// Values at every grid node for one time node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
    pub mode: Mode,
}

impl ValueField {
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Largest difference quotient `|Δ value| / h` over neighbouring nodes.
pub fn lipschitz_estimate(field: &ValueField) -> f64 {
    let grid = &field.grid;
    let mut best: f64 = 0.0;
    for axis in 0..grid.dim() {
        let stride = grid.strides()[axis];
        let h = grid.spacing()[axis];
        for idx in 0..grid.len() {
            if (idx / stride) % grid.counts()[axis] + 1 < grid.counts()[axis] {
                let slope = (field.values[idx + stride] - field.values[idx]).abs() / h;
                best = best.max(slope);
            }
        }
    }
    best
}
