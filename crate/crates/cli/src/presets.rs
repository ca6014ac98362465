//! Named scenarios shipped with the binary.

use crate::config::{
    GraphSpec, InitialSpec, ModeSpec, ObjectiveSpec, OutputSpec, ProblemSpec, RandomLinearSpec, RunSpec,
    ScenarioFile, StepsizeSpec,
};

pub const PRESET_NAMES: [&str; 5] = ["paper-dkm-6", "paper-dbkm-100", "linear-random", "dgd-quadratic", "dgd-huber"];

fn ring(period: usize) -> GraphSpec {
    GraphSpec::Ring {
        agents: None,
        period,
        weight: 0.5,
    }
}

fn gamma(g: f64) -> StepsizeSpec {
    StepsizeSpec {
        alpha0: 1.0,
        gamma: g,
        k0: 1,
    }
}

fn dkm(max_rounds: u64) -> RunSpec {
    RunSpec {
        mode: ModeSpec::Dkm,
        blocks: None,
        probabilities: None,
        max_rounds,
        seed: 0,
        initial: InitialSpec::default(),
    }
}

fn named(name: &str, problem: ProblemSpec, graph: GraphSpec, run: RunSpec) -> ScenarioFile {
    ScenarioFile {
        name: Some(name.to_string()),
        problem,
        graph,
        stepsize: gamma(0.7),
        run,
        output: OutputSpec::default(),
    }
}

fn quadratic(a: &[[f64; 3]], b: &[f64]) -> ObjectiveSpec {
    ObjectiveSpec::Quadratic {
        a: a.iter().map(|r| r.to_vec()).collect(),
        b: b.to_vec(),
    }
}

pub fn preset(name: &str) -> Option<ScenarioFile> {
    Some(match name {
        "paper-dkm-6" => named(
            name,
            ProblemSpec::Distance {
                paper_boxes: Some(6),
                sets: Vec::new(),
            },
            ring(2),
            dkm(20_000),
        ),
        "paper-dbkm-100" => named(
            name,
            ProblemSpec::Distance {
                paper_boxes: Some(100),
                sets: Vec::new(),
            },
            ring(10),
            RunSpec {
                mode: ModeSpec::Dbkm,
                blocks: Some(vec![1, 1, 1]),
                ..dkm(100_000)
            },
        ),
        "linear-random" => named(
            name,
            ProblemSpec::Linear {
                theta: None,
                random: Some(RandomLinearSpec {
                    agents: 5,
                    dim: 4,
                    ridge: 0.1,
                    seed: 0,
                }),
                matrices: Vec::new(),
                vectors: Vec::new(),
            },
            ring(2),
            dkm(100_000),
        ),
        "dgd-quadratic" => named(
            name,
            ProblemSpec::Dgd {
                tau: 0.25,
                objectives: vec![
                    quadratic(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[1.0, 2.0]),
                    quadratic(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], &[0.0, 1.0]),
                    quadratic(&[[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]], &[2.0, 0.0]),
                    quadratic(&[[1.0, 1.0, 0.0], [0.0, 0.0, 2.0]], &[1.0, -1.0]),
                ],
            },
            ring(2),
            dkm(20_000),
        ),
        "dgd-huber" => named(
            name,
            ProblemSpec::Dgd {
                tau: 1.0,
                objectives: [[0.0, 4.0], [1.0, -2.0], [5.0, 0.5], [-3.0, 1.0], [2.0, 2.0]]
                    .iter()
                    .map(|t| ObjectiveSpec::Huber {
                        target: t.to_vec(),
                        delta: 1.0,
                    })
                    .collect(),
            },
            ring(1),
            dkm(20_000),
        ),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_and_round_trips() {
        for name in PRESET_NAMES {
            let file = preset(name).unwrap();
            let text = file.to_toml();
            let back = ScenarioFile::from_toml(&text).unwrap();
            assert_eq!(back, file, "{name}");
            let a = file.build().unwrap();
            let b = back.build().unwrap();
            assert_eq!(a.config, b.config, "{name}");
            assert_eq!(a.reference, b.reference, "{name}");
        }
        assert!(preset("nope").is_none());
    }
}
