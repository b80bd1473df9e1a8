//! Game instances, time partitions and controlled trajectories.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};

/// A single control point. Scalars are accepted as shorthand for 1-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlPoint {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ControlPoint {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ControlPoint::Scalar(s) => vec![*s],
            ControlPoint::Vector(v) => v.clone(),
        }
    }
}

/// Regularity constants a game definition claims for itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    /// Sup-norm of the dynamics.
    pub bound_f: f64,
    /// Lipschitz constant of the dynamics in the state.
    pub lipschitz_f: f64,
    /// Lipschitz constant of the terminal payoff.
    pub lipschitz_g: f64,
    /// Sup-norm of the terminal payoff.
    pub bound_g: f64,
}

/// Serializable description of a game, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDefinition {
    pub name: String,
    pub state_dim: usize,
    pub horizon: f64,
    pub controls_u: Vec<ControlPoint>,
    pub controls_v: Vec<ControlPoint>,
    /// One expression per state component.
    pub dynamics: Vec<String>,
    pub terminal: String,
    pub declared: DeclaredConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// `f = u·v`, `U = V = {-1, 1}`. Violates the Isaacs condition.
    Uv,
    /// `f = u + v`, `U = {-1, 1}`, `V = {-1/2, 1/2}`. Satisfies it.
    Separable,
    /// `f = u·v + u/2`, `U = V = {-1, 1}`. Violates it.
    UvShift,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [Builtin::Uv, Builtin::Separable, Builtin::UvShift];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Uv => "uv",
            Builtin::Separable => "separable",
            Builtin::UvShift => "uv_shift",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn definition(self) -> GameDefinition {
        let (dynamics, controls_v, bound_f) = match self {
            Builtin::Uv => ("u*v", vec![-1.0, 1.0], 1.0),
            Builtin::Separable => ("u + v", vec![-0.5, 0.5], 1.5),
            Builtin::UvShift => ("u*v + u/2", vec![-1.0, 1.0], 1.5),
        };
        GameDefinition {
            name: self.name().to_string(),
            state_dim: 1,
            horizon: 1.0,
            controls_u: vec![ControlPoint::Scalar(-1.0), ControlPoint::Scalar(1.0)],
            controls_v: controls_v.into_iter().map(ControlPoint::Scalar).collect(),
            dynamics: vec![dynamics.to_string()],
            terminal: DEFAULT_TERMINAL.to_string(),
            declared: DeclaredConstants {
                bound_f,
                lipschitz_f: 0.0,
                lipschitz_g: 1.0,
                bound_g: 1.0,
            },
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_TERMINAL: &str = "hat(x)";

/// A validated two-player zero-sum game with finite control sets.
///
/// Player 1 (controls `u`) maximizes the terminal payoff `g(X_T)`, player 2
/// (controls `v`) minimizes it.
#[derive(Debug, Clone)]
pub struct GameSpec {
    definition: GameDefinition,
    builtin: Option<Builtin>,
    controls_u: Vec<Vec<f64>>,
    controls_v: Vec<Vec<f64>>,
    dynamics: Vec<Expr>,
    terminal: Expr,
    time_dependent: bool,
}

impl GameSpec {
    pub fn new(definition: GameDefinition) -> Result<Self> {
        let d = definition.state_dim;
        if d == 0 {
            return Err(Error::Usage("state_dim must be at least 1".into()));
        }
        if !(definition.horizon > 0.0 && definition.horizon.is_finite()) {
            return Err(Error::Usage(format!(
                "horizon must be positive and finite, got {}",
                definition.horizon
            )));
        }
        let controls_u = control_set("controls_u", &definition.controls_u)?;
        let controls_v = control_set("controls_v", &definition.controls_v)?;
        if definition.dynamics.len() != d {
            return Err(Error::Usage(format!(
                "expected {d} dynamics expressions, got {}",
                definition.dynamics.len()
            )));
        }
        let dynamics = definition
            .dynamics
            .iter()
            .map(|src| Expr::parse(src))
            .collect::<Result<Vec<_>, _>>()?;
        let terminal = Expr::parse(&definition.terminal)?;

        let (du, dv) = (controls_u[0].len(), controls_v[0].len());
        let mut time_dependent = false;
        for (k, e) in dynamics.iter().enumerate() {
            let usage = e.usage();
            time_dependent |= usage.time;
            check_index("dynamics", k, "x", usage.x, d)?;
            check_index("dynamics", k, "u", usage.u, du)?;
            check_index("dynamics", k, "v", usage.v, dv)?;
        }
        let usage = terminal.usage();
        if usage.time || usage.u.is_some() || usage.v.is_some() {
            return Err(Error::Usage(
                "terminal payoff may only depend on the state x".into(),
            ));
        }
        check_index("terminal", 0, "x", usage.x, d)?;

        let c = definition.declared;
        for (name, value) in [
            ("bound_f", c.bound_f),
            ("lipschitz_f", c.lipschitz_f),
            ("lipschitz_g", c.lipschitz_g),
            ("bound_g", c.bound_g),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Usage(format!(
                    "declared {name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if c.bound_f == 0.0 {
            return Err(Error::Usage("declared bound_f must be positive".into()));
        }

        Ok(GameSpec {
            definition,
            builtin: None,
            controls_u,
            controls_v,
            dynamics,
            terminal,
            time_dependent,
        })
    }

    pub fn builtin(builtin: Builtin) -> Self {
        let mut game = GameSpec::new(builtin.definition()).expect("builtin games are valid");
        game.builtin = Some(builtin);
        game
    }

    pub fn builtin_by_name(name: &str) -> Result<Self> {
        Builtin::from_name(name)
            .map(GameSpec::builtin)
            .ok_or_else(|| Error::Usage(format!("unknown builtin game `{name}`")))
    }

    /// The builtin this game was created from, provided nothing but the
    /// horizon has been changed (closed-form references depend on it).
    pub fn pristine_builtin(&self) -> Option<Builtin> {
        self.builtin.filter(|b| {
            let mut reference = b.definition();
            reference.horizon = self.definition.horizon;
            reference == self.definition
        })
    }

    pub fn with_terminal(mut self, terminal: &str, lipschitz_g: f64, bound_g: f64) -> Result<Self> {
        let builtin = self.builtin;
        self.definition.terminal = terminal.to_string();
        self.definition.declared.lipschitz_g = lipschitz_g;
        self.definition.declared.bound_g = bound_g;
        let mut game = GameSpec::new(self.definition)?;
        game.builtin = builtin;
        Ok(game)
    }

    pub fn with_declared(mut self, declared: DeclaredConstants) -> Result<Self> {
        let builtin = self.builtin;
        self.definition.declared = declared;
        let mut game = GameSpec::new(self.definition)?;
        game.builtin = builtin;
        Ok(game)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        let builtin = self.builtin;
        self.definition.horizon = horizon;
        let mut game = GameSpec::new(self.definition)?;
        game.builtin = builtin;
        Ok(game)
    }

    pub fn definition(&self) -> &GameDefinition {
        &self.definition
    }

    pub fn name(&self) -> &str {
        &self.definition.name
    }

    pub fn state_dim(&self) -> usize {
        self.definition.state_dim
    }

    pub fn horizon(&self) -> f64 {
        self.definition.horizon
    }

    pub fn declared(&self) -> DeclaredConstants {
        self.definition.declared
    }

    pub fn controls_u(&self) -> &[Vec<f64>] {
        &self.controls_u
    }

    pub fn controls_v(&self) -> &[Vec<f64>] {
        &self.controls_v
    }

    pub fn n_u(&self) -> usize {
        self.controls_u.len()
    }

    pub fn n_v(&self) -> usize {
        self.controls_v.len()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// `f(t, x, U[u_idx], V[v_idx])`.
    pub fn eval_dynamics(&self, t: f64, x: &[f64], u_idx: usize, v_idx: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.dynamics_into(t, x, u_idx, v_idx, &mut out)?;
        Ok(out)
    }

    /// Allocation-free form of [`GameSpec::eval_dynamics`].
    pub fn dynamics_into(
        &self,
        t: f64,
        x: &[f64],
        u_idx: usize,
        v_idx: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.state_dim();
        if x.len() != d || out.len() != d {
            return Err(Error::Usage(format!(
                "state has dimension {}, game expects {d}",
                x.len()
            )));
        }
        let u = self.controls_u.get(u_idx).ok_or_else(|| {
            Error::Usage(format!("u index {u_idx} out of range (|U| = {})", self.n_u()))
        })?;
        let v = self.controls_v.get(v_idx).ok_or_else(|| {
            Error::Usage(format!("v index {v_idx} out of range (|V| = {})", self.n_v()))
        })?;
        let env = Env { t, x, u, v };
        for (slot, e) in out.iter_mut().zip(&self.dynamics) {
            *slot = e.eval(&env);
        }
        if out.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteDynamics {
                t,
                x: x.to_vec(),
                u: u.clone(),
                v: v.clone(),
            });
        }
        Ok(())
    }

    /// Terminal payoff `g(x)`.
    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        let value = self.terminal.eval(&Env::state(x));
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteTerminal { x: x.to_vec() })
        }
    }
}

fn control_set(label: &str, points: &[ControlPoint]) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::Usage(format!("{label} must be nonempty")));
    }
    let points: Vec<Vec<f64>> = points.iter().map(ControlPoint::to_vec).collect();
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Usage(format!("{label}: control points must be nonempty")));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Usage(format!(
            "{label}: all control points must have the same dimension"
        )));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Usage(format!("{label}: control points must be finite")));
    }
    Ok(points)
}

fn check_index(what: &str, k: usize, var: &str, used: Option<usize>, dim: usize) -> Result<()> {
    match used {
        Some(i) if i >= dim => Err(Error::Usage(format!(
            "{what} expression {} references {var}{} but only {dim} component(s) exist",
            k + 1,
            i + 1
        ))),
        _ => Ok(()),
    }
}

/// Time nodes `0 = t_0 < t_1 < … < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    nodes: Vec<f64>,
    mesh: f64,
}

impl Partition {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Usage("a partition needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Usage("a partition must start at 0".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::Usage("partition nodes must be finite".into()));
        }
        let mut mesh: f64 = 0.0;
        for w in nodes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Usage(
                    "partition nodes must be strictly increasing".into(),
                ));
            }
            mesh = mesh.max(w[1] - w[0]);
        }
        Ok(Partition { nodes, mesh })
    }

    /// `n` equal intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Usage("a partition needs at least one interval".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Usage("horizon must be positive".into()));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|j| horizon * j as f64 / n as f64).collect();
        nodes[n] = horizon;
        Partition::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Maximal gap between neighbouring nodes, `|Π|`.
    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    fn tolerance(&self) -> f64 {
        1e-12 * self.horizon()
    }

    /// Index `i` with `t_i == t` up to rounding.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = self.tolerance();
        self.nodes.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Index of the first interval intersecting `[t0, T)`. Returns
    /// `intervals()` when `t0` is the horizon.
    pub fn first_interval(&self, t0: f64) -> Result<usize> {
        let tol = self.tolerance();
        if !(t0 >= -tol && t0 <= self.horizon() + tol) {
            return Err(Error::Usage(format!(
                "start time {t0} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(self
            .nodes
            .windows(2)
            .position(|w| t0 < w[1] - tol)
            .unwrap_or(self.intervals()))
    }

    /// `[max(t_j, t0), t_{j+1}]` for interval `j`.
    pub fn span(&self, j: usize, t0: f64) -> (f64, f64) {
        (self.nodes[j].max(t0), self.nodes[j + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories are nonempty")
    }
}

/// Integrates `dX = f(s, X, u, v) ds` from `(t0, x0)` to the horizon with
/// controls held constant on each partition interval.
///
/// `u_blocks[k]` / `v_blocks[k]` are the control indices on the `k`-th
/// interval intersecting `[t0, T)`. Each interval is covered by `substeps`
/// classical RK4 steps; every sub-step boundary is recorded.
pub fn integrate_trajectory(
    game: &GameSpec,
    t0: f64,
    x0: &[f64],
    partition: &Partition,
    u_blocks: &[usize],
    v_blocks: &[usize],
    substeps: usize,
) -> Result<Trajectory> {
    if t0 > partition.horizon() {
        return Err(Error::Usage(format!(
            "start time {t0} is after the horizon {}",
            partition.horizon()
        )));
    }
    if substeps == 0 {
        return Err(Error::Usage("substeps must be positive".into()));
    }
    if x0.len() != game.state_dim() {
        return Err(Error::Usage(format!(
            "initial state has dimension {}, game expects {}",
            x0.len(),
            game.state_dim()
        )));
    }
    let first = partition.first_interval(t0)?;
    let expected = partition.intervals() - first;
    if u_blocks.len() != expected || v_blocks.len() != expected {
        return Err(Error::Usage(format!(
            "expected {expected} control blocks per player, got {} and {}",
            u_blocks.len(),
            v_blocks.len()
        )));
    }

    let mut times = Vec::with_capacity(expected * substeps + 1);
    let mut states = Vec::with_capacity(expected * substeps + 1);
    times.push(t0);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut stepper = Rk4::new(game.state_dim());
    for (k, (&ui, &vi)) in u_blocks.iter().zip(v_blocks).enumerate() {
        let (start, end) = partition.span(first + k, t0);
        let dt = (end - start) / substeps as f64;
        for s in 0..substeps {
            let t = start + s as f64 * dt;
            stepper.step(game, t, dt, &mut x, ui, vi)?;
            times.push(if s + 1 == substeps { end } else { t + dt });
            states.push(x.clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// Advances the state over one interval `[start, end]` with fixed controls.
pub(crate) fn advance(
    game: &GameSpec,
    start: f64,
    end: f64,
    x: &mut [f64],
    ui: usize,
    vi: usize,
    substeps: usize,
) -> Result<()> {
    let dt = (end - start) / substeps as f64;
    let mut stepper = Rk4::new(game.state_dim());
    for s in 0..substeps {
        stepper.step(game, start + s as f64 * dt, dt, x, ui, vi)?;
    }
    Ok(())
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(d: usize) -> Self {
        Rk4 {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
        }
    }

    fn step(
        &mut self,
        game: &GameSpec,
        t: f64,
        dt: f64,
        x: &mut [f64],
        ui: usize,
        vi: usize,
    ) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        game.dynamics_into(t, x, ui, vi, k1)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        game.dynamics_into(t + 0.5 * dt, tmp, ui, vi, k2)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        game.dynamics_into(t + 0.5 * dt, tmp, ui, vi, k3)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + dt * k3[i];
        }
        game.dynamics_into(t + dt, tmp, ui, vi, k4)?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Empirical audit of the declared regularity constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub samples: usize,
    pub empirical_bound_f: f64,
    pub empirical_lipschitz_f: f64,
    pub empirical_lipschitz_g: f64,
    pub empirical_bound_g: f64,
    pub declared: DeclaredConstants,
    pub tolerance: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Monte-Carlo estimate of `sup |f|`, the state-Lipschitz constant of `f`,
/// and the sup-norm and Lipschitz constant of `g` over `[0, T] × box`.
///
/// Every sample draws `(t, x, x')` uniformly and evaluates all control
/// pairs; half the `x'` are drawn close to `x` so difference quotients
/// see local slopes.
pub fn check_regularity(
    game: &GameSpec,
    lower: &[f64],
    upper: &[f64],
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<RegularityReport> {
    let d = game.state_dim();
    if samples == 0 {
        return Err(Error::Usage("regularity audit needs at least one sample".into()));
    }
    if lower.len() != d || upper.len() != d || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
        return Err(Error::Usage("audit box must satisfy lower < upper per axis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c_f, mut l_f, mut l_g, mut c_g) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut fx = vec![0.0; d];
    let mut fy = vec![0.0; d];
    for s in 0..samples {
        let t = rng.gen_range(0.0..=game.horizon());
        let x: Vec<f64> = (0..d).map(|i| rng.gen_range(lower[i]..=upper[i])).collect();
        let y: Vec<f64> = if s % 2 == 0 {
            (0..d).map(|i| rng.gen_range(lower[i]..=upper[i])).collect()
        } else {
            (0..d)
                .map(|i| x[i] + 1e-3 * (upper[i] - lower[i]) * rng.gen_range(-1.0..=1.0))
                .collect()
        };
        let dist = norm(x.iter().zip(&y).map(|(a, b)| a - b));
        for a in 0..game.n_u() {
            for b in 0..game.n_v() {
                game.dynamics_into(t, &x, a, b, &mut fx)?;
                game.dynamics_into(t, &y, a, b, &mut fy)?;
                c_f = c_f.max(norm(fx.iter().copied())).max(norm(fy.iter().copied()));
                if dist > 0.0 {
                    l_f = l_f.max(norm(fx.iter().zip(&fy).map(|(p, q)| p - q)) / dist);
                }
            }
        }
        let gx = game.terminal(&x)?;
        let gy = game.terminal(&y)?;
        c_g = c_g.max(gx.abs()).max(gy.abs());
        if dist > 0.0 {
            l_g = l_g.max((gx - gy).abs() / dist);
        }
    }

    let declared = game.declared();
    let mut failures = Vec::new();
    for (name, empirical, claim) in [
        ("bound_f", c_f, declared.bound_f),
        ("lipschitz_f", l_f, declared.lipschitz_f),
        ("lipschitz_g", l_g, declared.lipschitz_g),
        ("bound_g", c_g, declared.bound_g),
    ] {
        if empirical > claim * (1.0 + tolerance) + tolerance {
            failures.push(format!("{name}: empirical {empirical} exceeds declared {claim}"));
        }
    }
    Ok(RegularityReport {
        samples,
        empirical_bound_f: c_f,
        empirical_lipschitz_f: l_f,
        empirical_lipschitz_g: l_g,
        empirical_bound_g: c_g,
        declared,
        tolerance,
        passed: failures.is_empty(),
        failures,
    })
}

pub(crate) fn norm(components: impl Iterator<Item = f64>) -> f64 {
    components.map(|c| c * c).sum::<f64>().sqrt()
}
