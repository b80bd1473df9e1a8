//! Experiment configuration: a TOML file, overridden by command-line flags.
//!
//! Every key is optional. Defaults:
//!
//! | key                  | default                                  |
//! |----------------------|------------------------------------------|
//! | `game`               | `"uv"` (builtin name or inline table)    |
//! | `region`             | `[-2, 2]` on every axis                  |
//! | `domain`             | region padded by `C_f · T` on each side  |
//! | `h`                  | `0.01`                                   |
//! | `n`                  | `100`                                    |
//! | `meshes`             | `[10, 40, 160]`                          |
//! | `h_factor`           | `1.0` (converge: `h = h_factor · T / n`) |
//! | `modes`              | `["mixed"]`                              |
//! | `cfl`                | `1.0`                                    |
//! | `memoize`            | `false` (pde: cache H by quantized `p`)  |
//! | `seed`               | `0`                                      |
//! | `samples`            | `10000`                                  |
//! | `deviations`         | `20`                                     |
//! | `exploit_samples`    | `2000`                                   |
//! | `t0`, `x0`           | `0`, origin                              |
//! | `substeps`           | `4`                                      |
//! | `tolerances.lp`      | `1e-9`                                   |
//! | `tolerances.isaacs_gap` | `1e-6`                                |
//! | `tolerances.regularity` | `1e-6`                                |
//! | `tolerances.slack`   | `0.1`                                    |
//! | `scan.t`             | `[0, T/2, T]`                            |
//! | `scan.x_per_axis`    | `9` points across the region             |
//! | `scan.p_per_axis`    | `9` points across `[-p_max, p_max]`      |
//! | `scan.p_max`         | `2.0`                                    |
//! | `output.dir`         | `"out"`                                  |
//! | `output.formats`     | `["csv", "json"]`                        |

use std::path::PathBuf;

use mixgame::game::{Builtin, GameDefinition, GameSpec};
use mixgame::grid::Mode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    Builtin(String),
    Inline(Box<GameDefinition>),
}

impl Default for GameSource {
    fn default() -> Self {
        GameSource::Builtin(Builtin::Uv.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Certificate tolerance of every matrix game.
    pub lp: f64,
    pub isaacs_gap: f64,
    pub regularity: f64,
    /// Allowed relative error increase between convergence levels.
    pub slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lp: mixgame::matrix_game::DEFAULT_TOL,
            isaacs_gap: mixgame::hamiltonian::ISAACS_GAP_TOL,
            regularity: 1e-6,
            slack: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    pub x_per_axis: usize,
    pub p_per_axis: usize,
    pub p_max: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            t: None,
            x_per_axis: 9,
            p_per_axis: 9,
            p_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub game: GameSource,
    pub h: f64,
    pub n: usize,
    pub meshes: Vec<usize>,
    pub h_factor: f64,
    pub modes: Vec<Mode>,
    pub cfl: f64,
    pub memoize: bool,
    pub seed: u64,
    pub samples: usize,
    pub deviations: usize,
    pub exploit_samples: usize,
    pub t0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub substeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<BoxBounds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<BoxBounds>,
    pub tolerances: Tolerances,
    pub scan: ScanConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            game: GameSource::default(),
            h: 0.01,
            n: 100,
            meshes: vec![10, 40, 160],
            h_factor: 1.0,
            modes: vec![Mode::Mixed],
            cfl: 1.0,
            memoize: false,
            seed: 0,
            samples: 10_000,
            deviations: 20,
            exploit_samples: 2_000,
            t0: 0.0,
            x0: None,
            substeps: 4,
            region: None,
            domain: None,
            tolerances: Tolerances::default(),
            scan: ScanConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// A configuration that passed validation, with everything derived from it.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub game: GameSpec,
    pub region: BoxBounds,
    pub domain: BoxBounds,
    pub x0: Vec<f64>,
}

impl PartialEq for Validated {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.game.definition() == other.game.definition()
            && self.region == other.region
            && self.domain == other.domain
            && self.x0 == other.x0
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("config echo: {e}")))
    }

    pub fn game_spec(&self) -> Result<GameSpec, CliError> {
        match &self.game {
            GameSource::Builtin(name) => Ok(GameSpec::builtin_by_name(name)?),
            GameSource::Inline(def) => Ok(GameSpec::new((**def).clone())?),
        }
    }

    pub fn validate(self) -> Result<Validated, CliError> {
        let game = self.game_spec()?;
        let d = game.state_dim();
        let bad = |msg: String| Err(CliError::Config(msg));

        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.meshes.is_empty() || self.meshes.contains(&0) {
            return bad("meshes must be nonempty and positive".into());
        }
        if !(self.h_factor > 0.0 && self.h_factor.is_finite()) {
            return bad("h_factor must be positive".into());
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if self.samples < 2 || self.exploit_samples < 2 {
            return bad("samples and exploit_samples must be at least 2".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be positive".into());
        }
        if !(self.t0 >= 0.0 && self.t0 < game.horizon()) {
            return bad(format!("t0 must lie in [0, {})", game.horizon()));
        }
        let t = &self.tolerances;
        if [t.lp, t.isaacs_gap, t.regularity, t.slack]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("tolerances must be finite and nonnegative".into());
        }
        if self.scan.x_per_axis == 0 || self.scan.p_per_axis == 0 || !(self.scan.p_max > 0.0) {
            return bad("scan sizes and p_max must be positive".into());
        }
        if self.output.formats.is_empty() {
            return bad("at least one output format is required".into());
        }

        let region = match &self.region {
            Some(r) => r.clone(),
            None => BoxBounds {
                lower: vec![-2.0; d],
                upper: vec![2.0; d],
            },
        };
        check_box("region", &region, d)?;
        let domain = match &self.domain {
            Some(b) => b.clone(),
            None => {
                let pad = game.declared().bound_f * game.horizon();
                BoxBounds {
                    lower: region.lower.iter().map(|v| v - pad).collect(),
                    upper: region.upper.iter().map(|v| v + pad).collect(),
                }
            }
        };
        check_box("domain", &domain, d)?;
        if (0..d).any(|k| region.lower[k] < domain.lower[k] || region.upper[k] > domain.upper[k]) {
            return bad("region of interest must lie inside the domain".into());
        }
        let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; d]);
        if x0.len() != d {
            return bad(format!("x0 has {} coordinates, the game has {d}", x0.len()));
        }
        Ok(Validated {
            config: self,
            game,
            region,
            domain,
            x0,
        })
    }
}

fn check_box(label: &str, b: &BoxBounds, d: usize) -> Result<(), CliError> {
    if b.lower.len() != d || b.upper.len() != d {
        return Err(CliError::Config(format!("{label} must have {d} coordinates per bound")));
    }
    if b.lower.iter().zip(&b.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
        return Err(CliError::Config(format!("{label} bounds must be finite with lower < upper")));
    }
    Ok(())
}

pub fn parse_modes(list: &str) -> Result<Vec<Mode>, CliError> {
    list.split(',')
        .map(|s| s.trim().parse::<Mode>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn parse_list<T: std::str::FromStr>(label: &str, list: &str) -> Result<Vec<T>, CliError> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Config(format!("cannot parse {label} entry {s:?}")))
        })
        .collect()
}
