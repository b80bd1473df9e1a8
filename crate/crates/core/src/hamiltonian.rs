//! Pure and mixed Hamiltonians of a game, and Isaacs-condition diagnostics.
//!
//! For costate `p` the payoff matrix `M_ab = f(t, x, U[a], V[b]) · p` gives
//! the pure lower Hamiltonian `max_a min_b M_ab`, the pure upper one
//! `min_b max_a M_ab`, and the mixed Hamiltonian as the value of `M` over
//! mixed strategies. The Isaacs condition holds at `(t, x, p)` exactly when
//! the two pure ones agree.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::game::GameSpec;
use crate::matrix_game::{pure_values, solve_matrix_game_from, PayoffMatrix, Side};

/// Gap above which the Isaacs condition is reported as violated.
pub const ISAACS_GAP_TOL: f64 = 1e-6;

pub fn payoff_matrix_at(game: &GameSpec, t: f64, x: &[f64], p: &[f64]) -> Result<PayoffMatrix> {
    let (rows, cols) = (game.n_u(), game.n_v());
    let mut entries = Vec::with_capacity(rows * cols);
    let mut f = vec![0.0; game.state_dim()];
    for a in 0..rows {
        for b in 0..cols {
            game.dynamics_into(t, x, a, b, &mut f)?;
            entries.push(f.iter().zip(p).map(|(fi, pi)| fi * pi).sum());
        }
    }
    Ok(PayoffMatrix::new(rows, cols, entries)?)
}

pub fn mixed_hamiltonian(game: &GameSpec, t: f64, x: &[f64], p: &[f64], tol: f64) -> Result<f64> {
    mixed_hamiltonian_from(game, t, x, p, tol, Side::Minimizer)
}

/// Mixed Hamiltonian computed through the LP of the given player.
pub fn mixed_hamiltonian_from(
    game: &GameSpec,
    t: f64,
    x: &[f64],
    p: &[f64],
    tol: f64,
    side: Side,
) -> Result<f64> {
    let m = payoff_matrix_at(game, t, x, p)?;
    Ok(solve_matrix_game_from(&m, tol, side)?.value)
}

/// `(h_minus, h_plus)` = pure (maxmin, minmax) Hamiltonians.
pub fn pure_hamiltonians(game: &GameSpec, t: f64, x: &[f64], p: &[f64]) -> Result<(f64, f64)> {
    let pv = pure_values(&payoff_matrix_at(game, t, x, p)?);
    Ok((pv.lower, pv.upper))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamiltonianSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub h_pure_lower: f64,
    pub h_pure_upper: f64,
    pub h_mixed: f64,
    pub isaacs_gap: f64,
}

pub fn hamiltonian_sample(
    game: &GameSpec,
    t: f64,
    x: &[f64],
    p: &[f64],
    tol: f64,
) -> Result<HamiltonianSample> {
    let m = payoff_matrix_at(game, t, x, p)?;
    let pv = pure_values(&m);
    let mixed = solve_matrix_game_from(&m, tol, Side::Minimizer)?;
    Ok(HamiltonianSample {
        t,
        x: x.to_vec(),
        p: p.to_vec(),
        h_pure_lower: pv.lower,
        h_pure_upper: pv.upper,
        h_mixed: mixed.value,
        isaacs_gap: pv.upper - pv.lower,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsaacsScan {
    pub samples: Vec<HamiltonianSample>,
    pub max_gap: f64,
    /// `(t, x, p)` of the first sample attaining `max_gap`.
    pub argmax: (f64, Vec<f64>, Vec<f64>),
    /// Share of samples whose gap exceeds the verdict tolerance.
    pub violated_fraction: f64,
    pub gap_tol: f64,
}

impl IsaacsScan {
    pub fn isaacs_violated(&self) -> bool {
        self.max_gap > self.gap_tol
    }
}

/// Evaluates [`HamiltonianSample`] on the product `t_samples × x_samples ×
/// p_samples`, in that nesting order. Samples are evaluated in parallel but
/// returned in product order, so the report does not depend on the worker
/// count.
pub fn isaacs_gap_scan(
    game: &GameSpec,
    t_samples: &[f64],
    x_samples: &[Vec<f64>],
    p_samples: &[Vec<f64>],
    lp_tol: f64,
    gap_tol: f64,
) -> Result<IsaacsScan> {
    if t_samples.is_empty() || x_samples.is_empty() || p_samples.is_empty() {
        return Err(crate::Error::Usage("isaacs scan needs nonempty sample sets".into()));
    }
    let mut triples = Vec::with_capacity(t_samples.len() * x_samples.len() * p_samples.len());
    for &t in t_samples {
        for x in x_samples {
            for p in p_samples {
                triples.push((t, x, p));
            }
        }
    }
    let samples = triples
        .par_iter()
        .map(|(t, x, p)| hamiltonian_sample(game, *t, x, p, lp_tol))
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (k, s) in samples.iter().enumerate() {
        if s.isaacs_gap > samples[best].isaacs_gap {
            best = k;
        }
    }
    let violated = samples.iter().filter(|s| s.isaacs_gap > gap_tol).count();
    let top = &samples[best];
    Ok(IsaacsScan {
        max_gap: top.isaacs_gap,
        argmax: (top.t, top.x.clone(), top.p.clone()),
        violated_fraction: violated as f64 / samples.len() as f64,
        gap_tol,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Builtin;
    use crate::matrix_game::DEFAULT_TOL;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn payoff_matrices() {
        let uv = GameSpec::builtin(Builtin::Uv);
        let m = payoff_matrix_at(&uv, 0.3, &[1.7], &[2.0]).unwrap();
        assert_eq!(m.entries(), &[2.0, -2.0, -2.0, 2.0]);
        let m = payoff_matrix_at(&uv, 0.0, &[0.0], &[0.0]).unwrap();
        assert!(m.entries().iter().all(|&e| e == 0.0));
        let sep = GameSpec::builtin(Builtin::Separable);
        let m = payoff_matrix_at(&sep, 0.0, &[0.0], &[1.0]).unwrap();
        assert_eq!(m.entries(), &[-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn mixed_values() {
        let uv = GameSpec::builtin(Builtin::Uv);
        assert_abs_diff_eq!(
            mixed_hamiltonian(&uv, 0.0, &[0.0], &[2.0], DEFAULT_TOL).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // sup over means a in [-1,1] of a, plus inf over b in [-1/2,1/2] of b
        let sep = GameSpec::builtin(Builtin::Separable);
        assert_abs_diff_eq!(
            mixed_hamiltonian(&sep, 0.0, &[0.0], &[1.0], DEFAULT_TOL).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        for b in Builtin::ALL {
            let g = GameSpec::builtin(b);
            assert_eq!(mixed_hamiltonian(&g, 0.0, &[0.4], &[0.0], DEFAULT_TOL).unwrap(), 0.0);
        }
    }

    #[test]
    fn pure_values_of_builtins() {
        let uv = GameSpec::builtin(Builtin::Uv);
        assert_eq!(pure_hamiltonians(&uv, 0.0, &[0.0], &[2.0]).unwrap(), (-2.0, 2.0));
        let shift = GameSpec::builtin(Builtin::UvShift);
        assert_eq!(pure_hamiltonians(&shift, 0.0, &[0.0], &[1.0]).unwrap(), (-0.5, 0.5));
        let sep = GameSpec::builtin(Builtin::Separable);
        assert_eq!(pure_hamiltonians(&sep, 0.0, &[0.0], &[1.0]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn scans() {
        let uv = GameSpec::builtin(Builtin::Uv);
        let ps: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&p| vec![p]).collect();
        let xs = vec![vec![-1.0], vec![0.5]];
        let scan = isaacs_gap_scan(&uv, &[0.0, 0.5], &xs, &ps, DEFAULT_TOL, ISAACS_GAP_TOL).unwrap();
        assert_eq!(scan.max_gap, 4.0);
        assert_eq!(scan.argmax.2[0].abs(), 2.0);
        assert_eq!(scan.violated_fraction, 1.0);
        for s in &scan.samples {
            assert_eq!(s.isaacs_gap, 2.0 * s.p[0].abs());
        }

        let sep = GameSpec::builtin(Builtin::Separable);
        let scan = isaacs_gap_scan(&sep, &[0.0], &xs, &ps, DEFAULT_TOL, ISAACS_GAP_TOL).unwrap();
        assert_eq!(scan.max_gap, 0.0);
        assert!(!scan.isaacs_violated());

        let zero = vec![vec![0.0]];
        let scan = isaacs_gap_scan(&uv, &[0.0], &xs, &zero, DEFAULT_TOL, ISAACS_GAP_TOL).unwrap();
        assert_eq!(scan.max_gap, 0.0);

        assert!(isaacs_gap_scan(&uv, &[], &xs, &zero, DEFAULT_TOL, ISAACS_GAP_TOL).is_err());
    }

    fn two_dim_game() -> GameSpec {
        use crate::game::{ControlPoint, DeclaredConstants, GameDefinition};
        let pts = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| ControlPoint::Vector(vec![a, b])).collect();
        GameSpec::new(GameDefinition {
            name: "planar".into(),
            state_dim: 2,
            horizon: 1.0,
            controls_u: pts(&[(1.0, 0.0), (0.0, 1.0), (-1.0, -1.0)]),
            controls_v: pts(&[(1.0, 1.0), (-1.0, 0.5), (0.0, -1.0)]),
            dynamics: vec!["u1*v1 + 0.5*sin(x1)".into(), "u2*v2 - 0.25*cos(x2)*v1".into()],
            terminal: "0".into(),
            declared: DeclaredConstants {
                bound_f: 2.0,
                lipschitz_f: 0.6,
                lipschitz_g: 0.0,
                bound_g: 0.0,
            },
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn hamiltonian_properties(
            x in prop::array::uniform2(-3.0f64..3.0),
            y in prop::array::uniform2(-3.0f64..3.0),
            p in prop::array::uniform2(-4.0f64..4.0),
            q in prop::array::uniform2(-4.0f64..4.0),
            lambda in 0.01f64..20.0,
        ) {
            let game = two_dim_game();
            let tol = DEFAULT_TOL;
            let s = hamiltonian_sample(&game, 0.2, &x, &p, tol).unwrap();
            prop_assert!(s.h_pure_lower <= s.h_mixed + tol && s.h_mixed <= s.h_pure_upper + tol);
            prop_assert!(s.isaacs_gap >= -tol);

            let from_max = mixed_hamiltonian_from(&game, 0.2, &x, &p, tol, Side::Maximizer).unwrap();
            prop_assert!((from_max - s.h_mixed).abs() <= 1e-8);

            let scaled: Vec<f64> = p.iter().map(|c| c * lambda).collect();
            let hs = mixed_hamiltonian(&game, 0.2, &x, &scaled, tol).unwrap();
            prop_assert!((hs - lambda * s.h_mixed).abs() <= 1e-8 * lambda.max(1.0));

            // |H(p) - H(q)| <= C_f |p - q|
            let hq = mixed_hamiltonian(&game, 0.2, &x, &q, tol).unwrap();
            let dp = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            let c_f = game.declared().bound_f;
            prop_assert!((s.h_mixed - hq).abs() <= c_f * dp + 1e-8);

            // |H(x) - H(y)| <= L_f |p| |x - y|
            let hy = mixed_hamiltonian(&game, 0.2, &y, &p, tol).unwrap();
            let dx = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            let np = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let l_f = game.declared().lipschitz_f;
            prop_assert!((s.h_mixed - hy).abs() <= l_f * np * dx + 1e-8);
        }
    }
}
