//! Scenario configuration files (TOML, strict schema) and their translation
//! into engine scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};

use kmnet::apps::{self, RunSettings, Scenario};
use kmnet::graph::ring_schedule;
use kmnet::{
    BlockPartition, BlockSelector, Cadence, ConvexSet, GraphSchedule, InitialStates, LocalOperator, Matrix, Mode,
    OperatorFamily, RunConfig, SmoothConvex, StateMatrix, StepsizeSchedule, TraceOptions, WeightedDigraph,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub stepsize: StepsizeSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Minimize the sum of squared distances to the sets.
    Distance {
        /// Use the built-in box family for this many agents.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paper_boxes: Option<usize>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        sets: Vec<SetSpec>,
    },
    /// Distributed gradient descent, one objective per agent.
    Dgd { tau: f64, objectives: Vec<ObjectiveSpec> },
    /// Separable linear equations `Σ R_i x = Σ r_i`.
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        random: Option<RandomLinearSpec>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        matrices: Vec<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        vectors: Vec<Vec<f64>>,
    },
    /// Every local operator is the identity; pure consensus.
    Identity { agents: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetSpec {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½‖A x − b‖²`
    Quadratic { a: Vec<Vec<f64>>, b: Vec<f64> },
    Huber { target: Vec<f64>, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLinearSpec {
    pub agents: usize,
    pub dim: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    pub seed: u64,
}

fn default_ridge() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring {
        /// Defaults to the problem's agent count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agents: Option<usize>,
        period: usize,
        #[serde(default = "default_ring_weight")]
        weight: f64,
    },
    Explicit {
        window: usize,
        weight_floor: f64,
        matrices: Vec<Vec<Vec<f64>>>,
    },
}

fn default_ring_weight() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeSpec {
    #[serde(default = "one")]
    pub alpha0: f64,
    pub gamma: f64,
    #[serde(default = "one_u64")]
    pub k0: u64,
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    #[default]
    Dkm,
    Dbkm,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    /// Block dimensions; a single block when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
    /// Block probabilities for `dbkm`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    pub max_rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Uniform { lower: f64, upper: f64 },
    Explicit { rows: Vec<Vec<f64>> },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Uniform {
            lower: -5.0,
            upper: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    /// Record every this many rounds; the engine default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_cadence: Option<u64>,
    /// Snapshot companion path; derived from the trace path when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<String>,
}

/// Command-line overrides applied on top of a file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_rounds: Option<u64>,
    pub snapshot_cadence: Option<u64>,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(m) = o.max_rounds {
            self.run.max_rounds = m;
        }
        if let Some(s) = o.snapshot_cadence {
            self.output.snapshot_cadence = Some(s);
        }
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(match self.problem {
            ProblemSpec::Distance { .. } => "distance",
            ProblemSpec::Dgd { .. } => "dgd",
            ProblemSpec::Linear { .. } => "linear",
            ProblemSpec::Identity { .. } => "identity",
        })
    }

    pub fn agents(&self) -> Result<usize, CliError> {
        let n = match &self.problem {
            ProblemSpec::Distance { paper_boxes, sets } => paper_boxes.unwrap_or(sets.len()),
            ProblemSpec::Dgd { objectives, .. } => objectives.len(),
            ProblemSpec::Linear { random, matrices, .. } => random.as_ref().map_or(matrices.len(), |r| r.agents),
            ProblemSpec::Identity { agents, .. } => *agents,
        };
        if n == 0 {
            return Err(CliError::Config("problem defines no agents".into()));
        }
        Ok(n)
    }

    fn settings(&self) -> Result<RunSettings, CliError> {
        let mode = match self.run.mode {
            ModeSpec::Dkm => Mode::Dkm,
            ModeSpec::Centralized => Mode::CentralizedKm,
            ModeSpec::Dbkm => {
                let blocks = self.run.blocks.as_ref().map_or(1, Vec::len);
                let selector = match &self.run.probabilities {
                    Some(p) => BlockSelector::new(p.clone())?,
                    None => BlockSelector::uniform(blocks)?,
                };
                Mode::Dbkm(selector)
            }
        };
        if self.run.mode != ModeSpec::Dbkm && self.run.probabilities.is_some() {
            return Err(CliError::Config("run.probabilities only applies to mode = \"dbkm\"".into()));
        }
        let initial_states = match &self.run.initial {
            InitialSpec::Uniform { lower, upper } => InitialStates::Uniform {
                lower: *lower,
                upper: *upper,
            },
            InitialSpec::Explicit { rows } => InitialStates::Explicit(StateMatrix::from_rows(rows)?),
        };
        let cadence = match self.output.cadence {
            None => Cadence::Default,
            Some(0) => return Err(CliError::Config("output.cadence must be positive".into())),
            Some(n) => Cadence::Every(n),
        };
        if self.output.snapshot_cadence == Some(0) {
            return Err(CliError::Config("output.snapshot_cadence must be positive".into()));
        }
        Ok(RunSettings {
            mode,
            blocks: self.run.blocks.clone(),
            initial_states,
            max_rounds: self.run.max_rounds,
            seed: self.run.seed,
            trace: TraceOptions {
                cadence,
                snapshot_every: self.output.snapshot_cadence,
                reference: None,
            },
            ..RunSettings::default()
        })
    }

    fn schedule(&self) -> Result<GraphSchedule, CliError> {
        Ok(match &self.graph {
            GraphSpec::Ring { agents, period, weight } => {
                let n = match agents {
                    Some(n) => *n,
                    None => self.agents()?,
                };
                ring_schedule(n, *period, *weight)?
            }
            GraphSpec::Explicit {
                window,
                weight_floor,
                matrices,
            } => {
                let graphs = matrices
                    .iter()
                    .map(|m| WeightedDigraph::from_rows(m))
                    .collect::<Result<Vec<_>, _>>()?;
                GraphSchedule::new(graphs, *window, *weight_floor)?
            }
        })
    }

    /// Builds the scenario, its reference solution included when an oracle applies.
    pub fn build(&self) -> Result<Scenario, CliError> {
        let name = self.display_name().to_string();
        let schedule = self.schedule()?;
        let s = &self.stepsize;
        let stepsize = StepsizeSchedule::power_law(s.alpha0, s.gamma, s.k0)?;
        let settings = self.settings()?;
        let scenario = match &self.problem {
            ProblemSpec::Distance { paper_boxes, sets } => {
                let sets = match (paper_boxes, sets.is_empty()) {
                    (Some(n), true) => apps::paper_boxes(*n),
                    (None, false) => sets.iter().map(SetSpec::to_set).collect::<Result<Vec<_>, _>>()?,
                    _ => {
                        return Err(CliError::Config(
                            "distance problems need exactly one of paper_boxes or sets".into(),
                        ))
                    }
                };
                apps::build_distance_scenario(name, sets, schedule, stepsize, settings)?
            }
            ProblemSpec::Dgd { tau, objectives } => {
                let specs = objectives
                    .iter()
                    .map(ObjectiveSpec::to_objective)
                    .collect::<Result<Vec<_>, _>>()?;
                apps::build_dgd_scenario(name, specs, *tau, schedule, stepsize, settings)?
            }
            ProblemSpec::Linear {
                theta,
                random,
                matrices,
                vectors,
            } => {
                let (ms, vs) = match (random, matrices.is_empty() && vectors.is_empty()) {
                    (Some(r), true) => apps::random_linear_instance(r.agents, r.dim, r.ridge, r.seed),
                    (None, false) => (
                        matrices
                            .iter()
                            .map(|m| Matrix::from_rows(m))
                            .collect::<Result<Vec<_>, _>>()?,
                        vectors.clone(),
                    ),
                    _ => {
                        return Err(CliError::Config(
                            "linear problems need exactly one of random or matrices/vectors".into(),
                        ))
                    }
                };
                apps::build_linear_scenario(name, ms, vs, *theta, schedule, stepsize, settings)?
            }
            ProblemSpec::Identity { agents, dim } => {
                let partition = match &settings.blocks {
                    Some(b) => BlockPartition::new(b.clone())?,
                    None => BlockPartition::single(*dim)?,
                };
                if partition.dim() != *dim {
                    return Err(CliError::Config(format!(
                        "run.blocks sum to {} but the problem dimension is {dim}",
                        partition.dim()
                    )));
                }
                let family = OperatorFamily::new(vec![LocalOperator::identity(partition); *agents])?;
                let config = RunConfig {
                    mode: settings.mode,
                    initial_states: settings.initial_states,
                    max_rounds: settings.max_rounds,
                    seed: settings.seed,
                    trace: settings.trace,
                    ..RunConfig::new(family, schedule, stepsize)
                };
                Scenario {
                    name,
                    config,
                    reference: None,
                    expected_properties: vec!["agents reach consensus at the initial mean".into()],
                }
            }
        };
        scenario.config.check_dimensions()?;
        Ok(scenario)
    }
}

impl SetSpec {
    fn to_set(&self) -> Result<ConvexSet, CliError> {
        Ok(match self {
            SetSpec::Box { lower, upper } => ConvexSet::new_box(lower.clone(), upper.clone())?,
            SetSpec::Ball { center, radius } => ConvexSet::new_ball(center.clone(), *radius)?,
        })
    }
}

impl ObjectiveSpec {
    fn to_objective(&self) -> Result<SmoothConvex, CliError> {
        Ok(match self {
            ObjectiveSpec::Quadratic { a, b } => SmoothConvex::quadratic(Matrix::from_rows(a)?, b.clone())?,
            ObjectiveSpec::Huber { target, delta } => SmoothConvex::huber(target.clone(), *delta)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
kind = "identity"
agents = 3
dim = 2

[graph]
kind = "ring"
period = 1

[stepsize]
gamma = 0.7

[run]
max_rounds = 10
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let f = ScenarioFile::from_toml(MINIMAL).unwrap();
        assert_eq!(f.stepsize.alpha0, 1.0);
        assert_eq!(f.stepsize.k0, 1);
        assert_eq!(f.run.mode, ModeSpec::Dkm);
        assert_eq!(f.run.initial, InitialSpec::default());
        let sc = f.build().unwrap();
        assert_eq!(sc.config.agents(), 3);
        assert!(sc.reference.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("gamma = 0.7", "gamma = 0.7\ngamm = 0.4");
        let err = ScenarioFile::from_toml(&bad).unwrap_err();
        assert!(matches!(&err, CliError::Parse(m) if m.contains("gamm")), "{err}");

        let bad = MINIMAL.replace("dim = 2", "dim = 2\nradius = 1.0");
        assert!(matches!(ScenarioFile::from_toml(&bad), Err(CliError::Parse(_))));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = ScenarioFile::from_toml("[run]\nmax_rounds = \"ten\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn dimension_mismatch_is_caught_after_load() {
        let bad = MINIMAL.replace("kind = \"ring\"\nperiod = 1", "kind = \"ring\"\nagents = 4\nperiod = 1");
        let f = ScenarioFile::from_toml(&bad).unwrap();
        assert!(f.build().is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut f = ScenarioFile::from_toml(MINIMAL).unwrap();
        f.apply(Overrides {
            seed: Some(7),
            max_rounds: Some(99),
            snapshot_cadence: Some(5),
        });
        assert_eq!((f.run.seed, f.run.max_rounds, f.output.snapshot_cadence), (7, 99, Some(5)));
    }
}
