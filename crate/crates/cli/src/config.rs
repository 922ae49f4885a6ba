//! Run configuration: JSON schema, validation and path resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qgeq::atlas::{Axis, Tolerances};
use qgeq::domain::{DeformationRadius, GridSpec};
use qgeq::ldp::{MCConfig, Sampling};
use qgeq::solver::SolverOptions;

use crate::error::CliError;

/// Subcommands, named as on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveCanonical,
    SolveMicrocanonical,
    Sweep,
    Classify,
    Stability,
    McLdp,
    Plot,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::SolveCanonical,
        Command::SolveMicrocanonical,
        Command::Sweep,
        Command::Classify,
        Command::Stability,
        Command::McLdp,
        Command::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveCanonical => "solve-canonical",
            Command::SolveMicrocanonical => "solve-microcanonical",
            Command::Sweep => "sweep",
            Command::Classify => "classify",
            Command::Stability => "stability",
            Command::McLdp => "mc-ldp",
            Command::Plot => "plot",
        }
    }

    /// Key of the matching block in the config file.
    pub fn block(self) -> &'static str {
        match self {
            Command::SolveCanonical => "solve_canonical",
            Command::SolveMicrocanonical => "solve_microcanonical",
            Command::Sweep => "sweep",
            Command::Classify => "classify",
            Command::Stability => "stability",
            Command::McLdp => "mc_ldp",
            Command::Plot => "plot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub topography: TopographyConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_canonical: Option<CanonicalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_microcanonical: Option<PointBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_ldp: Option<McBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotBlock>,
}

/// Grid parameters. Omitted resolutions default to 64×64, or to 1×256 when the
/// topography is zonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub period_length: f64,
    pub channel_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    pub deformation_radius: DeformationRadius,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            period_length: 1.0,
            channel_width: 1.0,
            n1: None,
            n2: None,
            deformation_radius: DeformationRadius::Finite(0.2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Gaussian,
    GammaSkew {
        epsilon: f64,
    },
    /// CSV with columns `y,density`.
    Tabulated {
        path: PathBuf,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::GammaSkew { epsilon: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopographyConfig {
    /// `b = B₂ sin(2πx₂/ℓ₂)`
    ZonalSine {
        amplitude: f64,
    },
    Flat,
    /// CSV with columns `x1,x2,b` in grid order.
    File {
        path: PathBuf,
    },
}

impl Default for TopographyConfig {
    fn default() -> Self {
        TopographyConfig::ZonalSine { amplitude: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalBlock {
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointBlock {
    pub energy: f64,
    pub circulation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub energy: Axis,
    pub circulation: Axis,
    #[serde(default = "yes")]
    pub multistart: bool,
    /// Re-solve every fully equivalent point canonically.
    #[serde(default = "yes")]
    pub cross_check: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyBlock {
    /// Surface CSV written by `sweep`.
    pub surface: PathBuf,
    /// Points to classify; all grid points when empty.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    /// `(E, Γ)` pairs.
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub target: f64,
    #[serde(default = "McBlock::default_schedule")]
    pub n_schedule: Vec<usize>,
    #[serde(default = "McBlock::default_macrocells")]
    pub macrocells: usize,
    #[serde(default = "McBlock::default_radius")]
    pub ball_radius: f64,
    #[serde(default = "McBlock::default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub sampling: Sampling,
}

impl McBlock {
    fn default_schedule() -> Vec<usize> {
        MCConfig::default().n_schedule
    }
    fn default_macrocells() -> usize {
        MCConfig::default().macrocells
    }
    fn default_radius() -> f64 {
        MCConfig::default().ball_radius
    }
    fn default_trials() -> usize {
        MCConfig::default().trials
    }

    pub fn mc_config(&self, seed: u64) -> MCConfig {
        MCConfig {
            n_schedule: self.n_schedule.clone(),
            macrocells: self.macrocells,
            ball_radius: self.ball_radius,
            trials: self.trials,
            seed,
            sampling: self.sampling,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Surface,
    Section,
    Velocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotBlock {
    pub kind: PlotKind,
    pub inputs: Vec<PathBuf>,
    /// Section along `E` at this circulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circulation: Option<f64>,
    /// Section along `Γ` at this energy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
}

/// A manifest written by an earlier run; only the config is read back.
#[derive(Deserialize)]
struct ManifestConfig {
    command: Command,
    config: RunConfig,
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(if path == "." {
            e.inner().to_string()
        } else {
            format!("{path}: {}", e.inner())
        })
    })
}

impl RunConfig {
    /// Reads a config file, or the config embedded in a run manifest.
    pub fn load(path: &Path, command: Command) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = if value.get("manifest_version").is_some() {
            let m: ManifestConfig = parse(&text)?;
            if m.command != command {
                return Err(CliError::Config(format!(
                    "manifest was written by `{}`, not `{}`",
                    m.command.name(),
                    command.name()
                )));
            }
            m.config
        } else {
            parse::<RunConfig>(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base)?;
        config.validate(command)?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<(), CliError> {
        let fix = |p: &mut PathBuf, what: &str| -> Result<(), CliError> {
            let joined = if p.is_absolute() {
                p.clone()
            } else {
                base.join(&*p)
            };
            *p = joined.canonicalize().map_err(|e| {
                CliError::Config(format!("{what}: cannot open {}: {e}", joined.display()))
            })?;
            Ok(())
        };
        if let PriorConfig::Tabulated { path } = &mut self.prior {
            fix(path, "prior.path")?;
        }
        if let TopographyConfig::File { path } = &mut self.topography {
            fix(path, "topography.path")?;
        }
        if let Some(c) = &mut self.classify {
            fix(&mut c.surface, "classify.surface")?;
        }
        if let Some(p) = &mut self.plot {
            for (k, input) in p.inputs.iter_mut().enumerate() {
                fix(input, &format!("plot.inputs[{k}]"))?;
            }
        }
        Ok(())
    }

    fn present_blocks(&self) -> Vec<Command> {
        let present = [
            self.solve_canonical.is_some(),
            self.solve_microcanonical.is_some(),
            self.sweep.is_some(),
            self.classify.is_some(),
            self.stability.is_some(),
            self.mc_ldp.is_some(),
            self.plot.is_some(),
        ];
        Command::ALL
            .into_iter()
            .zip(present)
            .filter_map(|(c, p)| p.then_some(c))
            .collect()
    }

    pub fn validate(&mut self, command: Command) -> Result<(), CliError> {
        let blocks = self.present_blocks();
        match blocks.as_slice() {
            [only] if *only == command => {}
            [] => {
                return Err(CliError::Config(format!(
                    "{}: missing command block for `{}`",
                    command.block(),
                    command.name()
                )))
            }
            [other] => {
                return Err(CliError::Config(format!(
                    "{}: block does not match the `{}` command",
                    other.block(),
                    command.name()
                )))
            }
            many => {
                let names: Vec<&str> = many.iter().map(|c| c.block()).collect();
                return Err(CliError::Config(format!(
                    "exactly one command block is allowed, found {}",
                    names.join(", ")
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs: must be at least 1".into()));
        }
        self.solver
            .validate()
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        if let PriorConfig::GammaSkew { epsilon } = self.prior {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                return Err(CliError::Config(
                    "prior.epsilon: must be finite and nonnegative".into(),
                ));
            }
        }
        let zonal = !matches!(self.topography, TopographyConfig::File { .. });
        let (d1, d2) = if zonal { (1, 256) } else { (64, 64) };
        self.grid.n1.get_or_insert(d1);
        self.grid.n2.get_or_insert(d2);
        GridSpec::from(&self.grid)
            .validate()
            .map_err(|e| CliError::Config(format!("grid: {e}")))?;

        if let Some(s) = &self.sweep {
            s.energy
                .values()
                .map_err(|e| CliError::Config(format!("sweep.energy: {e}")))?;
            s.circulation
                .values()
                .map_err(|e| CliError::Config(format!("sweep.circulation: {e}")))?;
        }
        if let Some(s) = &self.stability {
            if s.points.is_empty() {
                return Err(CliError::Config("stability.points: no points given".into()));
            }
        }
        if let Some(m) = &self.mc_ldp {
            m.mc_config(0)
                .validate()
                .map_err(|e| CliError::Config(format!("mc_ldp: {e}")))?;
        }
        if let Some(p) = &self.plot {
            if p.inputs.is_empty() {
                return Err(CliError::Config("plot.inputs: no input files".into()));
            }
            let fixed = p.circulation.is_some() as u8 + p.energy.is_some() as u8;
            match p.kind {
                PlotKind::Section if fixed != 1 => {
                    return Err(CliError::Config(
                        "plot: a section needs exactly one of `energy` or `circulation`".into(),
                    ))
                }
                PlotKind::Surface | PlotKind::Velocity if fixed != 0 => {
                    return Err(CliError::Config(
                        "plot: `energy`/`circulation` apply to sections only".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl From<&GridConfig> for GridSpec {
    fn from(g: &GridConfig) -> GridSpec {
        GridSpec::new(
            g.period_length,
            g.channel_width,
            g.n1.unwrap_or(64),
            g.n2.unwrap_or(64),
            g.deformation_radius,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_config(text: &str) -> Result<RunConfig, CliError> {
        let mut c: RunConfig = parse(text)?;
        c.validate(Command::SolveMicrocanonical)?;
        Ok(c)
    }

    #[test]
    fn defaults_fill_zonal_grid() {
        let c = parse_config(r#"{"solve_microcanonical": {"energy": 0.05, "circulation": -0.5}}"#)
            .unwrap();
        assert_eq!((c.grid.n1, c.grid.n2), (Some(1), Some(256)));
        assert_eq!(c.prior, PriorConfig::GammaSkew { epsilon: 0.1 });
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = parse_config(
            r#"{"solve_microcanonical": {"energy": 0.05, "circulation": -0.5, "beta": 1}}"#,
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("solve_microcanonical.beta"),
            "{err}"
        );
    }

    #[test]
    fn two_blocks_are_rejected() {
        let err = parse_config(
            r#"{"solve_canonical": {"beta": 1, "gamma": 0},
                "solve_microcanonical": {"energy": 0.05, "circulation": -0.5}}"#,
        )
        .unwrap_err();
        assert!(
            err.to_string()
                .contains("solve_canonical, solve_microcanonical"),
            "{err}"
        );
    }

    #[test]
    fn mismatched_block_is_rejected() {
        let err = parse_config(r#"{"sweep": {"energy": {"min": 0, "max": 0.1, "step": 0.01},
                                             "circulation": {"min": 0, "max": 0.1, "step": 0.01}}}"#)
            .unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn bad_resolution_is_a_config_error() {
        let err = parse_config(r#"{"grid": {"n1": 3, "n2": 8}, "solve_microcanonical": {"energy": 0.05, "circulation": 0}}"#)
            .unwrap_err();
        assert!(err.to_string().starts_with("grid"), "{err}");
    }
}
