//! Randomized controls, nonanticipative strategies with delay, and
//! Monte-Carlo play.
//!
//! Randomness for one play is a sequence of coordinate pairs
//! `(ζ_{j,1}, ζ_{j,2}) ∈ [0, 1)²`, one pair per partition interval. Player 1
//! realizes its control on interval `j` from `ζ_{j,1}` and player 2 from
//! `ζ_{j,2}`; the pairs of earlier intervals form the public history. A
//! strategy's block `j` may read the opponent's blocks `< j` only, which is
//! what makes the pair of strategies resolvable into a unique pair of
//! controls by a single forward pass.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dpp::{one_step_matrix, DppResult};
use crate::error::{Error, Result};
use crate::game::{integrate_trajectory, GameSpec, Partition, Trajectory};
use crate::grid::Mode;
use crate::matrix_game::solve_matrix_game_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Player {
    /// Maximizer, controls `u`.
    One,
    /// Minimizer, controls `v`.
    Two,
}

impl Player {
    fn lane(self) -> u128 {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    fn number(self) -> u8 {
        match self {
            Player::One => 1,
            Player::Two => 2,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "player {}", self.number())
    }
}

/// Counter-based source of the per-interval coordinates of one play.
///
/// The ChaCha key is the seed, the stream id the sample index, and the
/// position within the stream encodes `(interval, lane)`; the two lanes
/// never share a counter, so player 1's and player 2's coordinates are
/// independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomizationStream {
    pub seed: u64,
    pub sample: u64,
}

impl RandomizationStream {
    pub fn new(seed: u64, sample: u64) -> Self {
        RandomizationStream { seed, sample }
    }

    pub fn coordinate(&self, interval: usize, player: Player) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.sample);
        // two 32-bit words per draw
        rng.set_word_pos((interval as u128 * 2 + player.lane()) * 2);
        unit_interval(rng.next_u64())
    }

    pub fn pair(&self, interval: usize) -> (f64, f64) {
        (
            self.coordinate(interval, Player::One),
            self.coordinate(interval, Player::Two),
        )
    }
}

fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent seed for a named sub-experiment.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_add(1 << 63));
    rng.next_u64()
}

/// Inverse-CDF selection: the first index whose cumulative probability
/// exceeds `z`.
pub fn quantile(probabilities: &[f64], z: f64) -> usize {
    let mut cumulative = 0.0;
    for (k, &p) in probabilities.iter().enumerate() {
        cumulative += p;
        if z < cumulative {
            return k;
        }
    }
    probabilities
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probabilities.len() - 1)
}

/// Everything a strategy may look at when choosing its block on one
/// interval.
pub struct BlockContext<'a> {
    pub player: Player,
    /// Position of the interval among those being played (0-based).
    pub interval: usize,
    /// Index of the interval in the partition.
    pub partition_interval: usize,
    pub start: f64,
    pub end: f64,
    /// State at `start`, determined by the initial data and all blocks
    /// before this one.
    pub state: &'a [f64],
    /// Coordinate pairs of the earlier intervals.
    pub history: &'a [(f64, f64)],
    pub own_coordinate: f64,
    pub own_blocks: &'a [usize],
    opponent_blocks: &'a [usize],
    max_read: &'a Cell<Option<usize>>,
}

impl BlockContext<'_> {
    /// The opponent's control index on interval `k`; only `k < interval`
    /// may be read.
    pub fn opponent_block(&self, k: usize) -> Result<usize> {
        self.max_read.set(self.max_read.get().max(Some(k)));
        if k >= self.interval || k >= self.opponent_blocks.len() {
            return Err(Error::DelayViolation {
                player: self.player.number(),
                interval: self.interval,
                index: k,
            });
        }
        Ok(self.opponent_blocks[k])
    }
}

/// A nonanticipative strategy with delay, defined block by block.
pub trait NadStrategy: Send + Sync {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize>;

    fn label(&self) -> String {
        "strategy".into()
    }
}

impl<S: NadStrategy + ?Sized> NadStrategy for Box<S> {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        (**self).block(ctx)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<S: NadStrategy + ?Sized> NadStrategy for Arc<S> {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        (**self).block(ctx)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Always the same control.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub usize);

impl NadStrategy for Constant {
    fn block(&self, _: &BlockContext<'_>) -> Result<usize> {
        Ok(self.0)
    }

    fn label(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// Repeats the opponent's previous control index (modulo the own control
/// count), starting with `first`.
#[derive(Debug, Clone, Copy)]
pub struct CopyOpponent {
    pub first: usize,
    pub own_controls: usize,
}

impl NadStrategy for CopyOpponent {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        if ctx.interval == 0 {
            Ok(self.first)
        } else {
            Ok(ctx.opponent_block(ctx.interval - 1)? % self.own_controls)
        }
    }

    fn label(&self) -> String {
        format!("copy-opponent(first {})", self.first)
    }
}

/// `below` if the own coordinate is under `threshold`, else `above`.
#[derive(Debug, Clone, Copy)]
pub struct Threshold {
    pub threshold: f64,
    pub below: usize,
    pub above: usize,
}

impl NadStrategy for Threshold {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        Ok(if ctx.own_coordinate < self.threshold {
            self.below
        } else {
            self.above
        })
    }

    fn label(&self) -> String {
        format!("threshold({:.3}: {} / {})", self.threshold, self.below, self.above)
    }
}

/// Per-interval law selected from the public history, realized through the
/// player's own coordinate.
pub struct AdmissibleControl {
    rule: Box<dyn Fn(usize, &[(f64, f64)]) -> Vec<f64> + Send + Sync>,
}

impl AdmissibleControl {
    pub fn new(rule: impl Fn(usize, &[(f64, f64)]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        AdmissibleControl {
            rule: Box::new(rule),
        }
    }

    /// The same law on every interval.
    pub fn stationary(probabilities: Vec<f64>) -> Self {
        AdmissibleControl::new(move |_, _| probabilities.clone())
    }

    pub fn law(&self, interval: usize, history: &[(f64, f64)]) -> Vec<f64> {
        (self.rule)(interval, history)
    }
}

impl NadStrategy for AdmissibleControl {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        let law = self.law(ctx.interval, ctx.history);
        let total: f64 = law.iter().sum();
        if law.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("invalid control law {law:?}")));
        }
        Ok(quantile(&law, ctx.own_coordinate))
    }

    fn label(&self) -> String {
        "admissible-control".into()
    }
}

/// Markov strategy that plays the optimal mixed action of the one-step game
/// built from the stored DPP fields at the current state.
#[derive(Clone)]
pub struct SaddleStrategy {
    dpp: Arc<DppResult>,
    player: Player,
}

impl SaddleStrategy {
    pub fn player(&self) -> Player {
        self.player
    }

    /// Optimal mixed action on the interval described by `ctx`.
    pub fn mixed_action(&self, ctx: &BlockContext<'_>) -> Result<Vec<f64>> {
        let next = &self.dpp.fields[ctx.partition_interval + 1];
        let m = one_step_matrix(&self.dpp.game, next, ctx.start, ctx.end - ctx.start, ctx.state)?;
        let solution = solve_matrix_game_from(&m, self.dpp.options.tol, self.dpp.options.side)
            .map_err(|source| Error::NodeSolve {
                time: ctx.start,
                node: ctx.state.to_vec(),
                source,
            })?;
        Ok(match self.player {
            Player::One => solution.row_strategy,
            Player::Two => solution.col_strategy,
        })
    }
}

impl NadStrategy for SaddleStrategy {
    fn block(&self, ctx: &BlockContext<'_>) -> Result<usize> {
        Ok(quantile(&self.mixed_action(ctx)?, ctx.own_coordinate))
    }

    fn label(&self) -> String {
        format!("saddle({})", self.player)
    }
}

pub fn synthesize_saddle_strategies(
    dpp: Arc<DppResult>,
) -> Result<(SaddleStrategy, SaddleStrategy)> {
    if dpp.mode != Mode::Mixed {
        return Err(Error::Usage(format!(
            "saddle strategies need mixed-mode fields, got {}",
            dpp.mode
        )));
    }
    if dpp.fields.len() != dpp.partition.nodes().len() {
        return Err(Error::Usage(format!(
            "expected {} value fields, found {}",
            dpp.partition.nodes().len(),
            dpp.fields.len()
        )));
    }
    Ok((
        SaddleStrategy {
            dpp: Arc::clone(&dpp),
            player: Player::One,
        },
        SaddleStrategy {
            dpp,
            player: Player::Two,
        },
    ))
}

/// Initial data and integration settings shared by all plays.
#[derive(Debug, Clone)]
pub struct PlaySetup<'a> {
    pub game: &'a GameSpec,
    pub partition: &'a Partition,
    pub t0: f64,
    pub x0: Vec<f64>,
    /// RK4 steps per interval.
    pub substeps: usize,
}

/// Largest opponent block index read by each block, per player.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadAudit {
    pub player_one: Vec<Option<usize>>,
    pub player_two: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlay {
    pub u_blocks: Vec<usize>,
    pub v_blocks: Vec<usize>,
    pub trajectory: Trajectory,
    pub payoff: f64,
    pub audit: ReadAudit,
}

struct Resolution<'s> {
    setup: &'s PlaySetup<'s>,
    first: usize,
    pairs: Vec<(f64, f64)>,
}

impl Resolution<'_> {
    #[allow(clippy::too_many_arguments)]
    fn call(
        &self,
        strategy: &dyn NadStrategy,
        player: Player,
        k: usize,
        state: &[f64],
        own: &[usize],
        opponent: &[usize],
        max_read: &Cell<Option<usize>>,
    ) -> Result<usize> {
        let j = self.first + k;
        let (start, end) = self.setup.partition.span(j, self.setup.t0);
        let ctx = BlockContext {
            player,
            interval: k,
            partition_interval: j,
            start,
            end,
            state,
            history: &self.pairs[..k],
            own_coordinate: match player {
                Player::One => self.pairs[k].0,
                Player::Two => self.pairs[k].1,
            },
            own_blocks: &own[..k],
            opponent_blocks: &opponent[..k.min(opponent.len())],
            max_read,
        };
        let choice = strategy.block(&ctx)?;
        let available = match player {
            Player::One => self.setup.game.n_u(),
            Player::Two => self.setup.game.n_v(),
        };
        if choice >= available {
            return Err(Error::Usage(format!(
                "{player} chose control {choice} on interval {k}, only {available} exist"
            )));
        }
        Ok(choice)
    }
}

/// Resolves the unique pair of controls `(u, v)` with `α(v) = u` and
/// `β(u) = v` by a forward pass over the intervals, integrates the
/// trajectory and evaluates the payoff. The fixed-point identities are
/// re-checked on the finished blocks before returning.
pub fn resolve_play(
    alpha: &dyn NadStrategy,
    beta: &dyn NadStrategy,
    setup: &PlaySetup<'_>,
    stream: RandomizationStream,
) -> Result<ResolvedPlay> {
    let partition = setup.partition;
    if setup.substeps == 0 {
        return Err(Error::Usage("substeps must be positive".into()));
    }
    if setup.x0.len() != setup.game.state_dim() {
        return Err(Error::Usage("initial state has the wrong dimension".into()));
    }
    let first = partition.first_interval(setup.t0)?;
    let count = partition.intervals() - first;
    let resolution = Resolution {
        setup,
        first,
        pairs: (first..partition.intervals()).map(|j| stream.pair(j)).collect(),
    };

    let mut u_blocks = Vec::with_capacity(count);
    let mut v_blocks = Vec::with_capacity(count);
    let mut starts = Vec::with_capacity(count);
    let mut audit = ReadAudit {
        player_one: Vec::with_capacity(count),
        player_two: Vec::with_capacity(count),
    };
    let mut x = setup.x0.clone();
    for k in 0..count {
        let reads_one = Cell::new(None);
        let reads_two = Cell::new(None);
        let u = resolution.call(alpha, Player::One, k, &x, &u_blocks, &v_blocks, &reads_one)?;
        let v = resolution.call(beta, Player::Two, k, &x, &v_blocks, &u_blocks, &reads_two)?;
        audit.player_one.push(reads_one.get());
        audit.player_two.push(reads_two.get());
        starts.push(x.clone());
        u_blocks.push(u);
        v_blocks.push(v);
        let (start, end) = partition.span(first + k, setup.t0);
        crate::game::advance(setup.game, start, end, &mut x, u, v, setup.substeps)?;
    }

    // α(v) = u and β(u) = v, block by block, on the completed controls.
    for k in 0..count {
        let scratch = Cell::new(None);
        let u = resolution.call(alpha, Player::One, k, &starts[k], &u_blocks, &v_blocks, &scratch)?;
        let v = resolution.call(beta, Player::Two, k, &starts[k], &v_blocks, &u_blocks, &scratch)?;
        if u != u_blocks[k] || v != v_blocks[k] {
            return Err(Error::Internal(format!(
                "fixed point violated on interval {k}: ({u}, {v}) vs ({}, {})",
                u_blocks[k], v_blocks[k]
            )));
        }
    }

    let trajectory = integrate_trajectory(
        setup.game,
        setup.t0,
        &setup.x0,
        partition,
        &u_blocks,
        &v_blocks,
        setup.substeps,
    )?;
    let payoff = setup.game.terminal(trajectory.final_state())?;
    Ok(ResolvedPlay {
        u_blocks,
        v_blocks,
        trajectory,
        payoff,
        audit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// Distance from `value` to the confidence interval (0 if inside).
    pub fn distance_to(&self, value: f64) -> f64 {
        (self.ci_low - value).max(value - self.ci_high).max(0.0)
    }
}

/// Mean payoff over `n_samples` independent plays; sample `s` uses the
/// stream `(seed, s)`. Payoffs are summed in sample order, so the estimate
/// does not depend on the worker count.
pub fn monte_carlo_payoff(
    setup: &PlaySetup<'_>,
    alpha: &dyn NadStrategy,
    beta: &dyn NadStrategy,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::Usage("Monte-Carlo estimation needs at least 2 samples".into()));
    }
    let payoffs = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            resolve_play(alpha, beta, setup, RandomizationStream::new(seed, s))
                .map(|play| play.payoff)
                .map_err(|e| Error::Sample {
                    sample: s,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = n_samples as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let variance = payoffs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (variance / n).sqrt();
    Ok(McEstimate {
        mean,
        std_error,
        ci_low: mean - 1.96 * std_error,
        ci_high: mean + 1.96 * std_error,
        samples: n_samples,
    })
}

/// A random member of the deviation family: constant, copy-opponent, or a
/// threshold on the own coordinate.
pub fn random_deviation(rng: &mut impl Rng, own_controls: usize) -> Box<dyn NadStrategy> {
    match rng.gen_range(0..3) {
        0 => Box::new(Constant(rng.gen_range(0..own_controls))),
        1 => Box::new(CopyOpponent {
            first: rng.gen_range(0..own_controls),
            own_controls,
        }),
        _ => Box::new(Threshold {
            threshold: rng.gen_range(0.0..1.0),
            below: rng.gen_range(0..own_controls),
            above: rng.gen_range(0..own_controls),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationOutcome {
    pub player: Player,
    pub label: String,
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploitReport {
    /// `V^Π(t0, x0)` from the DPP fields.
    pub value: f64,
    /// `max mean(deviation vs β*) - V`, 0 without deviations.
    pub player_one_advantage: f64,
    /// `V - min mean(α* vs deviation)`, 0 without deviations.
    pub player_two_advantage: f64,
    pub max_std_error: f64,
    pub outcomes: Vec<DeviationOutcome>,
}

impl ExploitReport {
    pub fn worst_advantage(&self) -> f64 {
        self.player_one_advantage.max(self.player_two_advantage)
    }
}

/// Plays the synthesized saddle strategies against `deviations` random
/// deviations per side.
pub fn exploit_check(
    setup: &PlaySetup<'_>,
    dpp: Arc<DppResult>,
    deviations: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ExploitReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xdead));
    let p1: Vec<Box<dyn NadStrategy>> = (0..deviations)
        .map(|_| random_deviation(&mut rng, setup.game.n_u()))
        .collect();
    let p2: Vec<Box<dyn NadStrategy>> = (0..deviations)
        .map(|_| random_deviation(&mut rng, setup.game.n_v()))
        .collect();
    exploit_check_against(setup, dpp, &p1, &p2, n_samples, seed)
}

pub fn exploit_check_against(
    setup: &PlaySetup<'_>,
    dpp: Arc<DppResult>,
    player_one_deviations: &[Box<dyn NadStrategy>],
    player_two_deviations: &[Box<dyn NadStrategy>],
    n_samples: usize,
    seed: u64,
) -> Result<ExploitReport> {
    let value = dpp.value_at(setup.t0, &setup.x0)?;
    let (alpha_star, beta_star) = synthesize_saddle_strategies(dpp)?;
    let mut outcomes = Vec::new();
    let mut player_one_advantage: f64 = 0.0;
    let mut player_two_advantage: f64 = 0.0;
    let mut max_std_error: f64 = 0.0;
    for (k, deviation) in player_one_deviations.iter().enumerate() {
        let estimate = monte_carlo_payoff(
            setup,
            deviation,
            &beta_star,
            n_samples,
            derive_seed(seed, 2 * k as u64 + 1),
        )?;
        player_one_advantage = player_one_advantage.max(estimate.mean - value);
        max_std_error = max_std_error.max(estimate.std_error);
        outcomes.push(DeviationOutcome {
            player: Player::One,
            label: deviation.label(),
            estimate,
        });
    }
    for (k, deviation) in player_two_deviations.iter().enumerate() {
        let estimate = monte_carlo_payoff(
            setup,
            &alpha_star,
            deviation,
            n_samples,
            derive_seed(seed, 2 * k as u64 + 2),
        )?;
        player_two_advantage = player_two_advantage.max(value - estimate.mean);
        max_std_error = max_std_error.max(estimate.std_error);
        outcomes.push(DeviationOutcome {
            player: Player::Two,
            label: deviation.label(),
            estimate,
        });
    }
    Ok(ExploitReport {
        value,
        player_one_advantage,
        player_two_advantage,
        max_std_error,
        outcomes,
    })
}
